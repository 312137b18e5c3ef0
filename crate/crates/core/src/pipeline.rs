//! Stage functions and run configuration. Stages exchange data only
//! through the files named by [`Layout`], so each one can be re-run alone.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::agent::{
    run_static_agent, ActivationConditionReport, AgentError, EpisodicMemory, HttpClient, HttpClientConfig,
    ModelClient, ReplayClient, StaticAgentConfig, DEFAULT_DYN_TOOL_BUDGET, DEFAULT_TOOL_BUDGET,
};
use crate::coverage::{parse_code_coverage, unreachable_set, CodeCoverage, CoverageReport, ExplorationLog};
use crate::harness::{
    simulated_explore, validation_loop, Device, DeviceError, DeviceScenario, ExploreConfig, ExternalCommandDevice,
    LoopError, LoopResult, LoopStatus, SimulatedDevice, MAX_ITERATIONS,
};
use crate::mcp::{Clock, Toolbox, DEFAULT_RESULT_CAP};
use crate::names::{file_stem, normalize_class_name, to_java_name};
use crate::package::{ingest_package, AppPackage};
use crate::widgets::{find_dialog_for_target, ActivityDialogs};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ModelConfig {
    /// Scripted turns read from a replay file.
    Replay { script: PathBuf },
    /// OpenAI-compatible endpoint. The key is read from the environment
    /// variable named by `api_key_env`, never from the config itself.
    Http {
        endpoint: String,
        model: String,
        #[serde(default)]
        api_key_env: Option<String>,
        #[serde(default = "default_timeout")]
        timeout_secs: u64,
        #[serde(default)]
        temperature: f64,
        #[serde(default = "default_max_tokens")]
        max_tokens: u32,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DeviceConfig {
    Simulated { scenario: PathBuf },
    External {
        command: String,
        #[serde(default)]
        args: Vec<String>,
    },
}

fn default_timeout() -> u64 {
    120
}
fn default_max_tokens() -> u32 {
    4096
}
fn default_max_iterations() -> u32 {
    MAX_ITERATIONS
}
fn default_tool_budget() -> usize {
    DEFAULT_TOOL_BUDGET
}
fn default_dyn_tool_budget() -> usize {
    DEFAULT_DYN_TOOL_BUDGET
}
fn default_result_cap() -> usize {
    DEFAULT_RESULT_CAP
}
fn default_explore_budget() -> usize {
    ExploreConfig::default().budget
}
fn default_cancel_prob() -> f64 {
    ExploreConfig::default().cancel_prob
}
fn default_jobs() -> usize {
    1
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// apktool output directory.
    pub package_root: PathBuf,
    /// Baseline exploration log.
    pub exploration_log: PathBuf,
    pub output_dir: PathBuf,
    pub model: ModelConfig,
    pub device: DeviceConfig,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: u32,
    #[serde(default = "default_tool_budget")]
    pub tool_call_budget: usize,
    #[serde(default = "default_dyn_tool_budget")]
    pub dyn_tool_call_budget: usize,
    #[serde(default = "default_result_cap")]
    pub result_size_cap: usize,
    #[serde(default)]
    pub rng_seed: u64,
    #[serde(default = "default_explore_budget")]
    pub explore_budget: usize,
    #[serde(default = "default_cancel_prob")]
    pub cancel_prob: f64,
    #[serde(default = "default_jobs")]
    pub jobs: usize,
    /// Stamp tool-call records with sequence numbers instead of wall time.
    #[serde(default = "default_true")]
    pub logical_clock: bool,
    /// Optional `kind covered total` lines from an instrumentation tool.
    #[serde(default)]
    pub code_coverage: Option<PathBuf>,
}

impl PipelineConfig {
    pub fn check(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if !(1..=MAX_ITERATIONS).contains(&self.max_iterations) {
            return bad(format!("max_iterations must be in 1..={MAX_ITERATIONS}, got {}", self.max_iterations));
        }
        if !(0.0..=1.0).contains(&self.cancel_prob) {
            return bad(format!("cancel_prob must be in [0, 1], got {}", self.cancel_prob));
        }
        if self.jobs == 0 {
            return bad("jobs must be at least 1".into());
        }
        if self.tool_call_budget == 0 {
            return bad("tool_call_budget must be at least 1".into());
        }
        Ok(())
    }

    /// Resolves relative paths against `base` (the config file's directory).
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.package_root);
        fix(&mut self.exploration_log);
        fix(&mut self.output_dir);
        if let Some(p) = self.code_coverage.as_mut() {
            fix(p);
        }
        if let ModelConfig::Replay { script } = &mut self.model {
            fix(script);
        }
        if let DeviceConfig::Simulated { scenario } = &mut self.device {
            fix(scenario);
        }
    }

    pub fn clock(&self) -> Clock {
        if self.logical_clock {
            Clock::Logical
        } else {
            Clock::Wall
        }
    }

    pub fn explore_config(&self) -> ExploreConfig {
        ExploreConfig { budget: self.explore_budget, cancel_prob: self.cancel_prob, seed: self.rng_seed }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("input: {0}")]
    Input(String),
    #[error("model client: {0}")]
    Client(String),
    #[error(transparent)]
    Device(#[from] DeviceError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl PipelineError {
    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Input(_) | PipelineError::Io { .. } => 3,
            PipelineError::Client(_) => 4,
            PipelineError::Device(_) => 5,
        }
    }
}

fn input<E: std::fmt::Display>(path: &Path) -> impl Fn(E) -> PipelineError + '_ {
    move |e| PipelineError::Input(format!("{}: {e}", path.display()))
}

fn read(path: &Path) -> Result<String, PipelineError> {
    fs::read_to_string(path).map_err(|source| PipelineError::Io { path: path.to_path_buf(), source })
}

fn write(path: &Path, text: &str) -> Result<(), PipelineError> {
    let io = |source| PipelineError::Io { path: path.to_path_buf(), source };
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io)?;
    }
    fs::write(path, text).map_err(io)
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("plain data serializes");
    s.push('\n');
    s
}

/// File names inside the output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }
    pub fn package_summary(&self) -> PathBuf {
        self.root.join("package.txt")
    }
    pub fn ctg(&self) -> PathBuf {
        self.root.join("ctg.tsv")
    }
    pub fn unreachable(&self) -> PathBuf {
        self.root.join("unreachable.txt")
    }
    /// Relative to the root, as stored in reports.
    pub fn episodic_rel(target: &str) -> String {
        format!("episodic/{}.jsonl", file_stem(&normalize_class_name(target)))
    }
    pub fn episodic(&self, target: &str) -> PathBuf {
        self.root.join(Self::episodic_rel(target))
    }
    pub fn report(&self, target: &str) -> PathBuf {
        self.root.join(format!("reports/{}.json", file_stem(&normalize_class_name(target))))
    }
    pub fn artifact(&self, target: &str, iteration: u32) -> PathBuf {
        self.root.join(format!("artifacts/{}.iter{iteration}.json", file_stem(&normalize_class_name(target))))
    }
    pub fn script(&self, target: &str, iteration: u32) -> PathBuf {
        self.root.join(format!("scripts/{}.iter{iteration}.js", file_stem(&normalize_class_name(target))))
    }
    pub fn loop_result(&self, target: &str) -> PathBuf {
        self.root.join(format!("loops/{}.json", file_stem(&normalize_class_name(target))))
    }
    pub fn dialogs(&self) -> PathBuf {
        self.root.join("dialogs.tsv")
    }
    pub fn explore_log(&self) -> PathBuf {
        self.root.join("explore.log")
    }
    pub fn coverage_report(&self) -> PathBuf {
        self.root.join("report.txt")
    }
}

pub fn build_client(model: &ModelConfig) -> Result<Box<dyn ModelClient>, PipelineError> {
    match model {
        ModelConfig::Replay { script } => Ok(Box::new(
            ReplayClient::load(script).map_err(|e| PipelineError::Input(e.to_string()))?,
        )),
        ModelConfig::Http { endpoint, model, api_key_env, timeout_secs, temperature, max_tokens } => {
            let api_key = match api_key_env {
                Some(var) => Some(std::env::var(var).map_err(|_| {
                    PipelineError::Config(format!("environment variable {var} is not set"))
                })?),
                None => None,
            };
            Ok(Box::new(HttpClient::new(HttpClientConfig {
                endpoint: endpoint.clone(),
                model: model.clone(),
                api_key,
                timeout: Duration::from_secs(*timeout_secs),
                temperature: *temperature,
                max_tokens: *max_tokens,
            })))
        }
    }
}

pub fn load_scenario(path: &Path) -> Result<DeviceScenario, PipelineError> {
    read(path)?.parse().map_err(input(path))
}

/// Builds the configured device. The scenario is returned too when the
/// device is simulated, since the explorer needs it.
pub fn build_device(
    cfg: &PipelineConfig,
    pkg: &AppPackage,
) -> Result<(Box<dyn Device>, Option<DeviceScenario>), PipelineError> {
    match &cfg.device {
        DeviceConfig::Simulated { scenario } => {
            let sc = load_scenario(scenario)?;
            let unknown = sc.unknown_guard_methods(&pkg.index);
            if let Some(m) = unknown.first() {
                return Err(PipelineError::Input(format!(
                    "{}: guard method {m} is not in the package",
                    scenario.display()
                )));
            }
            Ok((Box::new(SimulatedDevice::new(sc.clone(), &pkg.index)), Some(sc)))
        }
        DeviceConfig::External { command, args } => {
            let mut dev = ExternalCommandDevice::new(command, &pkg.package_name, cfg.output_dir.join("scripts"));
            dev.args = args.clone();
            Ok((Box::new(dev), None))
        }
    }
}

pub fn load_package(root: &Path) -> Result<AppPackage, PipelineError> {
    ingest_package(root).map_err(|e| PipelineError::Input(e.to_string()))
}

pub fn load_log(path: &Path) -> Result<ExplorationLog, PipelineError> {
    ExplorationLog::parse(&read(path)?).map_err(input(path))
}

/// Writes the package summary and the CTG.
pub fn stage_ingest(pkg: &AppPackage, layout: &Layout) -> Result<(), PipelineError> {
    write(&layout.package_summary(), &pkg.summary())?;
    write(&layout.ctg(), &pkg.ctg.to_text())
}

/// Declared activities the baseline log never visited, in declared order.
pub fn stage_unreachable(pkg: &AppPackage, log: &ExplorationLog, layout: &Layout) -> Result<Vec<String>, PipelineError> {
    let un = unreachable_set(&pkg.declared_activities, &log.visited).unreachable;
    let text: String = un.iter().map(|a| format!("{}\n", to_java_name(a))).collect();
    write(&layout.unreachable(), &text)?;
    Ok(un)
}

pub fn read_target_list(path: &Path) -> Result<Vec<String>, PipelineError> {
    Ok(read(path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(normalize_class_name)
        .collect())
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool, PipelineError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| PipelineError::Config(format!("thread pool: {e}")))
}

fn agent_error(e: AgentError) -> PipelineError {
    match e {
        AgentError::Io(source) => PipelineError::Io { path: PathBuf::from("episodic"), source },
        other => PipelineError::Client(other.to_string()),
    }
}

/// Runs the inference agent on each target, up to `jobs` at a time.
/// Writes one report and one episodic file per target.
pub fn infer_targets(
    client: &dyn ModelClient,
    pkg: &AppPackage,
    targets: &[String],
    cfg: &PipelineConfig,
    layout: &Layout,
) -> Result<Vec<ActivationConditionReport>, PipelineError> {
    use rayon::prelude::*;
    let toolbox = Toolbox::new(pkg).with_result_cap(cfg.result_size_cap);
    let agent_cfg = StaticAgentConfig { tool_budget: cfg.tool_call_budget, clock: cfg.clock() };
    fs::create_dir_all(layout.root.join("episodic"))
        .map_err(|source| PipelineError::Io { path: layout.root.join("episodic"), source })?;
    pool(cfg.jobs)?.install(|| {
        targets
            .par_iter()
            .map(|t| {
                let (mut report, _) =
                    run_static_agent(client, &toolbox, t, &agent_cfg, &layout.episodic(t)).map_err(agent_error)?;
                report.episodic_ref = Layout::episodic_rel(t);
                write(&layout.report(t), &to_json(&report))?;
                log::info!("{}: {} tool calls", to_java_name(&report.target), report.tool_call_count);
                Ok(report)
            })
            .collect()
    })
}

/// Reads back a target's report and its episodic memory.
pub fn load_report(layout: &Layout, target: &str) -> Result<(ActivationConditionReport, EpisodicMemory), PipelineError> {
    let path = layout.report(target);
    let report: ActivationConditionReport = serde_json::from_str(&read(&path)?).map_err(input(&path))?;
    let episodic = layout.root.join(&report.episodic_ref);
    let memory = EpisodicMemory::load(&episodic, &report.target).map_err(|e| PipelineError::Input(e.to_string()))?;
    Ok((report, memory))
}

fn write_loop(layout: &Layout, result: &LoopResult) -> Result<(), PipelineError> {
    for a in &result.attempts {
        let art = &a.artifact;
        write(&layout.artifact(&result.target, art.iteration), &to_json(art))?;
        if art.render_error.is_none() {
            write(&layout.script(&result.target, art.iteration), &art.script_text)?;
        }
    }
    write(&layout.loop_result(&result.target), &to_json(result))
}

/// Runs the refine loop for each target whose report is on disk.
pub fn validate_targets(
    client: &dyn ModelClient,
    device: &dyn Device,
    targets: &[String],
    cfg: &PipelineConfig,
    layout: &Layout,
) -> Result<Vec<LoopResult>, PipelineError> {
    use rayon::prelude::*;
    pool(cfg.jobs)?.install(|| {
        targets
            .par_iter()
            .map(|t| {
                let (report, memory) = load_report(layout, t)?;
                let result = validation_loop(client, device, &report, &memory, cfg.max_iterations, cfg.dyn_tool_call_budget)
                    .map_err(|e| match e {
                        LoopError::Device(d) => PipelineError::Device(d),
                        LoopError::InvalidMaxIterations(_) => PipelineError::Config(e.to_string()),
                    })?;
                write_loop(layout, &result)?;
                log::info!(
                    "{}: {:?} after {} iteration(s)",
                    to_java_name(&result.target),
                    result.status,
                    result.iterations_used
                );
                Ok(result)
            })
            .collect()
    })
}

pub fn load_loop_result(layout: &Layout, target: &str) -> Result<LoopResult, PipelineError> {
    let path = layout.loop_result(target);
    serde_json::from_str(&read(&path)?).map_err(input(&path))
}

/// Places dialogs for every target whose loop reached it.
pub fn stage_plan_widgets(
    pkg: &AppPackage,
    unreachables: &[String],
    loops: &[LoopResult],
    layout: &Layout,
) -> Result<ActivityDialogs, PipelineError> {
    let instrumented: Vec<String> =
        loops.iter().filter(|l| l.status == LoopStatus::Reached).map(|l| l.target.clone()).collect();
    let dialogs = find_dialog_for_target(
        &instrumented,
        &pkg.ctg,
        &pkg.main_activities,
        unreachables,
        &pkg.declared_activities,
    )
    .map_err(|e| PipelineError::Input(e.to_string()))?;
    write(&layout.dialogs(), &dialogs.to_string())?;
    Ok(dialogs)
}

pub fn load_dialogs(path: &Path) -> Result<ActivityDialogs, PipelineError> {
    read(path)?.parse().map_err(input(path))
}

pub fn stage_explore(
    scenario: &DeviceScenario,
    dialogs: &ActivityDialogs,
    cfg: &ExploreConfig,
    layout: &Layout,
) -> Result<ExplorationLog, PipelineError> {
    let log = simulated_explore(scenario, dialogs, cfg);
    write(&layout.explore_log(), &log.to_text())?;
    Ok(log)
}

pub fn load_code_coverage(path: Option<&Path>) -> Result<Vec<CodeCoverage>, PipelineError> {
    match path {
        None => Ok(Vec::new()),
        Some(p) => parse_code_coverage(&read(p)?).map_err(input(p)),
    }
}

/// Before/after coverage plus per-target loop outcomes.
pub fn render_final_report(
    declared: &[String],
    baseline: &ExplorationLog,
    after: Option<&ExplorationLog>,
    loops: &[LoopResult],
    code_coverage: Vec<CodeCoverage>,
) -> (CoverageReport, Option<CoverageReport>, String) {
    let before = CoverageReport::new(declared, baseline, code_coverage);
    let after = after.map(|log| CoverageReport::new(declared, log, Vec::new()));
    let mut out = String::new();
    let _ = writeln!(out, "# before ({})", baseline.source_tool);
    out.push_str(&before.render());
    if let Some(a) = &after {
        let _ = writeln!(out, "\n# after");
        out.push_str(&a.render());
    }
    let _ = writeln!(out, "\n# targets");
    for l in loops {
        let status = match l.status {
            LoopStatus::Reached => "reached",
            LoopStatus::UnreachableByTool => "unreachable",
        };
        let _ = write!(out, "{}\t{status}\titerations={}", to_java_name(&l.target), l.iterations_used);
        if let Some(e) = &l.error {
            let _ = write!(out, "\terror={}", e.replace(['\n', '\t'], " "));
        }
        let _ = writeln!(out);
    }
    if let Some(a) = &after {
        let _ = writeln!(out, "\nlift={:+}", a.visited_count as i64 - before.visited_count as i64);
    }
    (before, after, out)
}

#[derive(Debug, Clone)]
pub struct PipelineSummary {
    pub before: CoverageReport,
    pub after: Option<CoverageReport>,
    pub loops: Vec<LoopResult>,
    pub dialogs: ActivityDialogs,
    pub report_text: String,
}

/// Every stage in order. Exploration runs only on a simulated device.
pub fn run_pipeline(
    cfg: &PipelineConfig,
    client: &dyn ModelClient,
) -> Result<PipelineSummary, PipelineError> {
    cfg.check()?;
    let layout = Layout::new(&cfg.output_dir);
    let pkg = load_package(&cfg.package_root)?;
    let baseline = load_log(&cfg.exploration_log)?;
    let code_cov = load_code_coverage(cfg.code_coverage.as_deref())?;
    let (device, scenario) = build_device(cfg, &pkg)?;
    stage_ingest(&pkg, &layout)?;
    let unreachables = stage_unreachable(&pkg, &baseline, &layout)?;
    infer_targets(client, &pkg, &unreachables, cfg, &layout)?;
    let loops = validate_targets(client, device.as_ref(), &unreachables, cfg, &layout)?;
    let dialogs = stage_plan_widgets(&pkg, &unreachables, &loops, &layout)?;
    let after = match &scenario {
        Some(sc) => Some(stage_explore(sc, &dialogs, &cfg.explore_config(), &layout)?),
        None => None,
    };
    let (before, after, report_text) =
        render_final_report(&pkg.declared_activities, &baseline, after.as_ref(), &loops, code_cov);
    write(&layout.coverage_report(), &report_text)?;
    Ok(PipelineSummary { before, after, loops, dialogs, report_text })
}
