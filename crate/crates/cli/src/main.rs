use std::fs;
use std::io::{self, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context as _;
use clap::{Args, Parser, Subcommand};
use reachkit::agent::{run_dyn_agent, InstrumentationArtifact};
use reachkit::coverage::{mean_recall, parse_labels, ReasonTaxonomy};
use reachkit::harness::{ExploreConfig, LoopResult};
use reachkit::mcp::{serve, Clock, Recorder, Server, Toolbox};
use reachkit::names::{normalize_class_name, to_java_name};
use reachkit::pipeline::{
    self, build_client, build_device, infer_targets, load_code_coverage, load_dialogs, load_log, load_loop_result,
    load_package, load_report, load_scenario, read_target_list, render_final_report, run_pipeline, stage_explore,
    stage_ingest, stage_plan_widgets, stage_unreachable, validate_targets, DeviceConfig, Layout, PipelineConfig,
    PipelineError,
};
use reachkit::widgets::ActivityDialogs;

#[derive(Parser, Debug)]
#[command(name = "reachkit", version, about = "Reach Android activities that GUI exploration misses")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

/// Values here override the config file.
#[derive(Args, Debug)]
struct Global {
    /// TOML run configuration; relative paths inside it are resolved
    /// against its directory.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// apktool output directory.
    #[arg(long, global = true)]
    package: Option<PathBuf>,
    /// Baseline exploration log.
    #[arg(long, global = true)]
    log: Option<PathBuf>,
    #[arg(long, short, global = true)]
    output_dir: Option<PathBuf>,
    /// Replay file for the scripted model client.
    #[arg(long, global = true)]
    replay: Option<PathBuf>,
    /// Scenario file for the simulated device.
    #[arg(long, global = true)]
    scenario: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Targets processed in parallel by `infer --all` and `validate --all`.
    #[arg(long, short, global = true)]
    jobs: Option<usize>,
    #[arg(long, global = true)]
    max_iterations: Option<u32>,
    #[arg(long, global = true)]
    cancel_prob: Option<f64>,
    #[arg(long, global = true)]
    explore_budget: Option<usize>,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(long, short, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
}

#[derive(Args, Debug)]
#[group(required = true, multiple = false)]
struct Targets {
    /// Activity name, dotted or descriptor form.
    target: Option<String>,
    /// Every activity in the unreachable list.
    #[arg(long)]
    all: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse the package and write its summary and CTG.
    Ingest,
    /// Write the component transition graph.
    Ctg,
    /// List declared activities the baseline log never visited.
    Unreachable,
    /// Serve the analysis tools over stdio (JSON-RPC).
    McpServe {
        /// Append every tool call to this line-delimited JSON file.
        #[arg(long)]
        record: Option<PathBuf>,
        #[arg(long)]
        result_cap: Option<usize>,
    },
    /// Infer activation conditions for one target or all of them.
    Infer(Targets),
    /// Generate one instrumentation artifact for a target.
    Instrument {
        target: String,
        /// Artifact JSON of the previous iteration; switches to refinement.
        #[arg(long, requires = "feedback")]
        prior: Option<PathBuf>,
        /// Validation feedback for the previous iteration.
        #[arg(long, requires = "prior")]
        feedback: Option<PathBuf>,
    },
    /// Run the generate/validate/refine loop.
    Validate(Targets),
    /// Place dialogs for every reached target.
    PlanWidgets,
    /// Explore the simulated device with the planned dialogs.
    Explore {
        /// Dialog file; defaults to the one in the output directory.
        #[arg(long)]
        dialogs: Option<PathBuf>,
        /// Explore without any dialogs.
        #[arg(long, conflicts_with = "dialogs")]
        no_dialogs: bool,
    },
    /// Coverage before and after, plus per-target outcomes.
    Report {
        /// Exploration log after instrumentation; defaults to the one in
        /// the output directory when present.
        #[arg(long)]
        after: Option<PathBuf>,
        /// `kind covered total` lines.
        #[arg(long)]
        code_coverage: Option<PathBuf>,
    },
    /// Mean recall@k of ranked reason predictions.
    EvalRecall {
        /// `activity<TAB>truth_ids<TAB>ranked_ids` lines.
        labels: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1,3,5")]
        k: Vec<usize>,
        /// Reason taxonomy file; the built-in one by default.
        #[arg(long)]
        taxonomy: Option<PathBuf>,
    },
    /// Every stage in order.
    Run,
}

/// Error carrying the process exit status.
#[derive(Debug)]
struct Failure {
    code: u8,
    kind: &'static str,
    message: String,
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        let code = e.exit_code() as u8;
        let (kind, message) = match e {
            PipelineError::Config(m) => ("config", m),
            PipelineError::Input(m) => ("input", m),
            PipelineError::Client(m) => ("model-client", m),
            e @ PipelineError::Device(_) => ("device", e.to_string()),
            e @ PipelineError::Io { .. } => ("io", e.to_string()),
        };
        Failure { code, kind, message }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure { code: 3, kind: "input", message: format!("{e:#}") }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure { code: 2, kind: "usage", message: message.into() }
}

fn absolute(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}

/// Config table plus flag overrides.
struct Settings {
    table: toml::Table,
    base: PathBuf,
}

impl Settings {
    fn load(g: &Global) -> Result<Self, Failure> {
        let (mut table, base) = match &g.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
                let table: toml::Table =
                    toml::from_str(&text).map_err(|e| usage(format!("{}: {}", path.display(), e.message())))?;
                let base = absolute(path).parent().map(Path::to_path_buf).unwrap_or_default();
                (table, base)
            }
            None => (toml::Table::new(), std::env::current_dir().unwrap_or_default()),
        };
        let path_value = |p: &PathBuf| toml::Value::String(absolute(p).display().to_string());
        for (key, value) in [
            ("package_root", g.package.as_ref().map(path_value)),
            ("exploration_log", g.log.as_ref().map(path_value)),
            ("output_dir", g.output_dir.as_ref().map(path_value)),
            ("rng_seed", g.seed.map(|s| toml::Value::Integer(s as i64))),
            ("jobs", g.jobs.map(|j| toml::Value::Integer(j as i64))),
            ("max_iterations", g.max_iterations.map(|m| toml::Value::Integer(m.into()))),
            ("cancel_prob", g.cancel_prob.map(toml::Value::Float)),
            ("explore_budget", g.explore_budget.map(|b| toml::Value::Integer(b as i64))),
        ] {
            if let Some(v) = value {
                table.insert(key.into(), v);
            }
        }
        if let Some(p) = &g.replay {
            let mut model = toml::Table::new();
            model.insert("kind".into(), "replay".into());
            model.insert("script".into(), path_value(p));
            table.insert("model".into(), model.into());
        }
        if let Some(p) = &g.scenario {
            let mut device = toml::Table::new();
            device.insert("kind".into(), "simulated".into());
            device.insert("scenario".into(), path_value(p));
            table.insert("device".into(), device.into());
        }
        Ok(Settings { table, base })
    }

    fn path(&self, key: &str) -> Option<PathBuf> {
        let p = PathBuf::from(self.table.get(key)?.as_str()?);
        Some(if p.is_relative() { self.base.join(p) } else { p })
    }

    fn require_path(&self, key: &str, flag: &str) -> Result<PathBuf, Failure> {
        self.path(key).ok_or_else(|| usage(format!("{key} is not set (use {flag} or the config file)")))
    }

    fn layout(&self) -> Layout {
        Layout::new(self.path("output_dir").unwrap_or_else(|| self.base.join("reachkit-out")))
    }

    fn pipeline(&self) -> Result<PipelineConfig, Failure> {
        let mut cfg: PipelineConfig = self
            .table
            .clone()
            .try_into()
            .map_err(|e: toml::de::Error| usage(format!("config: {}", e.message())))?;
        cfg.resolve_paths(&self.base);
        cfg.check()?;
        Ok(cfg)
    }
}

fn targets_for(sel: &Targets, layout: &Layout, cfg: &PipelineConfig) -> Result<Vec<String>, Failure> {
    if let Some(t) = &sel.target {
        return Ok(vec![normalize_class_name(t)]);
    }
    let list = layout.unreachable();
    if list.is_file() {
        return Ok(read_target_list(&list)?);
    }
    let pkg = load_package(&cfg.package_root)?;
    let log = load_log(&cfg.exploration_log)?;
    Ok(stage_unreachable(&pkg, &log, layout)?)
}

/// Loop results already on disk for the unreachable targets.
fn saved_loops(layout: &Layout, targets: &[String]) -> Result<Vec<LoopResult>, Failure> {
    targets
        .iter()
        .filter(|t| layout.loop_result(t).is_file())
        .map(|t| load_loop_result(layout, t).map_err(Failure::from))
        .collect()
}

fn run(cli: Cli) -> Result<(), Failure> {
    let settings = Settings::load(&cli.global)?;
    let layout = settings.layout();
    match cli.command {
        Command::Ingest => {
            let pkg = load_package(&settings.require_path("package_root", "--package")?)?;
            stage_ingest(&pkg, &layout)?;
            print!("{}", pkg.summary());
        }
        Command::Ctg => {
            let pkg = load_package(&settings.require_path("package_root", "--package")?)?;
            stage_ingest(&pkg, &layout)?;
            print!("{}", pkg.ctg.to_text());
        }
        Command::Unreachable => {
            let pkg = load_package(&settings.require_path("package_root", "--package")?)?;
            let log = load_log(&settings.require_path("exploration_log", "--log")?)?;
            for t in stage_unreachable(&pkg, &log, &layout)? {
                println!("{}", to_java_name(&t));
            }
        }
        Command::McpServe { record, result_cap } => {
            let pkg = load_package(&settings.require_path("package_root", "--package")?)?;
            let cap = result_cap
                .or_else(|| settings.table.get("result_size_cap")?.as_integer().map(|c| c as usize))
                .unwrap_or(reachkit::mcp::DEFAULT_RESULT_CAP);
            let clock = match settings.table.get("logical_clock").and_then(toml::Value::as_bool) {
                Some(false) => Clock::Wall,
                _ => Clock::Logical,
            };
            let recorder = match record {
                Some(path) => {
                    let file = fs::File::create(&path).with_context(|| path.display().to_string())?;
                    Recorder::with_sink(clock, Box::new(BufWriter::new(file)))
                }
                None => Recorder::new(clock),
            };
            let mut server = Server::new(Toolbox::new(&pkg).with_result_cap(cap), recorder);
            serve(&mut server, io::stdin().lock(), io::stdout().lock()).context("stdio")?;
            log::info!("served {} tool calls", server.recorder().records().len());
        }
        Command::Infer(sel) => {
            let cfg = settings.pipeline()?;
            let pkg = load_package(&cfg.package_root)?;
            let targets = targets_for(&sel, &layout, &cfg)?;
            let client = build_client(&cfg.model)?;
            for r in infer_targets(client.as_ref(), &pkg, &targets, &cfg, &layout)? {
                let flag = if r.partial { "\tpartial" } else { "" };
                println!("{}\ttool_calls={}{flag}", to_java_name(&r.target), r.tool_call_count);
            }
        }
        Command::Instrument { target, prior, feedback } => {
            let cfg = settings.pipeline()?;
            let client = build_client(&cfg.model)?;
            let (report, memory) = load_report(&layout, &target)?;
            let prior = match (prior, feedback) {
                (Some(p), Some(f)) => {
                    let text = fs::read_to_string(&p).with_context(|| p.display().to_string())?;
                    let artifact: InstrumentationArtifact =
                        serde_json::from_str(&text).with_context(|| p.display().to_string())?;
                    let feedback = fs::read_to_string(&f).with_context(|| f.display().to_string())?;
                    Some((artifact, feedback))
                }
                _ => None,
            };
            let artifact = run_dyn_agent(
                client.as_ref(),
                &memory,
                &report,
                prior.as_ref().map(|(a, f)| (a, f.as_str())),
                cfg.dyn_tool_call_budget,
            )
            .map_err(|e| PipelineError::Client(e.to_string()))?;
            let path = layout.artifact(&report.target, artifact.iteration);
            write_file(&path, &(serde_json::to_string_pretty(&artifact).expect("serializes") + "\n"))?;
            if artifact.render_error.is_none() {
                write_file(&layout.script(&report.target, artifact.iteration), &artifact.script_text)?;
            }
            println!("{}", path.display());
        }
        Command::Validate(sel) => {
            let cfg = settings.pipeline()?;
            let pkg = load_package(&cfg.package_root)?;
            let targets = targets_for(&sel, &layout, &cfg)?;
            let client = build_client(&cfg.model)?;
            let (device, _) = build_device(&cfg, &pkg)?;
            for l in validate_targets(client.as_ref(), device.as_ref(), &targets, &cfg, &layout)? {
                println!("{}\t{:?}\titerations={}", to_java_name(&l.target), l.status, l.iterations_used);
            }
        }
        Command::PlanWidgets => {
            let cfg = settings.pipeline()?;
            let pkg = load_package(&cfg.package_root)?;
            let targets = targets_for(&Targets { target: None, all: true }, &layout, &cfg)?;
            let loops = saved_loops(&layout, &targets)?;
            print!("{}", stage_plan_widgets(&pkg, &targets, &loops, &layout)?);
        }
        Command::Explore { dialogs, no_dialogs } => {
            let cfg = settings.pipeline()?;
            let DeviceConfig::Simulated { scenario } = &cfg.device else {
                return Err(usage("explore needs a simulated device"));
            };
            let scenario = load_scenario(scenario)?;
            let dialogs = if no_dialogs {
                ActivityDialogs::default()
            } else {
                let path = dialogs.map(|d| absolute(&d)).unwrap_or_else(|| layout.dialogs());
                load_dialogs(&path)?
            };
            let explore_cfg = ExploreConfig { budget: cfg.explore_budget, cancel_prob: cfg.cancel_prob, seed: cfg.rng_seed };
            print!("{}", stage_explore(&scenario, &dialogs, &explore_cfg, &layout)?.to_text());
        }
        Command::Report { after, code_coverage } => {
            let pkg = load_package(&settings.require_path("package_root", "--package")?)?;
            let baseline = load_log(&settings.require_path("exploration_log", "--log")?)?;
            let after_path = after.map(|a| absolute(&a)).or_else(|| Some(layout.explore_log()).filter(|p| p.is_file()));
            let after_log = after_path.as_deref().map(load_log).transpose()?;
            let cov_path = code_coverage.map(|c| absolute(&c)).or_else(|| settings.path("code_coverage"));
            let code_cov = load_code_coverage(cov_path.as_deref())?;
            let targets = reachkit::coverage::unreachable_set(&pkg.declared_activities, &baseline.visited).unreachable;
            let loops = saved_loops(&layout, &targets)?;
            let (_, _, text) = render_final_report(&pkg.declared_activities, &baseline, after_log.as_ref(), &loops, code_cov);
            write_file(&layout.coverage_report(), &text)?;
            print!("{text}");
        }
        Command::EvalRecall { labels, k, taxonomy } => {
            let text = fs::read_to_string(&labels).with_context(|| labels.display().to_string())?;
            let labels_parsed = parse_labels(&text).map_err(|e| anyhow::anyhow!("{}: {e}", labels.display()))?;
            let taxonomy = match taxonomy {
                Some(p) => {
                    let t = fs::read_to_string(&p).with_context(|| p.display().to_string())?;
                    ReasonTaxonomy::parse(&t).map_err(|e| anyhow::anyhow!("{}: {e}", p.display()))?
                }
                None => ReasonTaxonomy::builtin(),
            };
            for l in &labels_parsed {
                if let Some(bad) = l.truth.iter().chain(&l.ranked).find(|id| taxonomy.lookup(id).is_none()) {
                    return Err(anyhow::anyhow!("{}: unknown reason {bad:?} for {}", labels.display(), to_java_name(&l.activity)).into());
                }
            }
            let rows = mean_recall(&labels_parsed, &k).map_err(|e| anyhow::anyhow!("{}: {e}", labels.display()))?;
            println!("k\trecall");
            for (k, r) in rows {
                println!("{k}\t{r:.4}");
            }
        }
        Command::Run => {
            let cfg = settings.pipeline()?;
            let client = build_client(&cfg.model)?;
            let summary = run_pipeline(&cfg, client.as_ref())?;
            print!("{}", summary.report_text);
        }
    }
    Ok(())
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    let io_err = |source| pipeline::PipelineError::Io { path: path.to_path_buf(), source };
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err)?;
    }
    fs::write(path, text).map_err(io_err)?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}: {}", f.kind, f.message.replace('\n', " "));
            ExitCode::from(f.code)
        }
    }
}
