//! Coverage arithmetic, launch success rates and recall@k.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;

use indexmap::IndexSet;
use serde::{Deserialize, Serialize};

use crate::names::normalize_class_name;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CoverageError {
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("no launch outcome records")]
    EmptyInput,
    #[error("ground truth is empty")]
    EmptyTruth,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("duplicate reason id {0}")]
    DuplicateReason(String),
    #[error("reason taxonomy is empty")]
    EmptyTaxonomy,
    #[error("line {line}: unknown reason {reason:?} in category")]
    UnknownReason { line: usize, reason: String },
}

fn format_err(line: usize, message: impl Into<String>) -> CoverageError {
    CoverageError::Format { line, message: message.into() }
}

/// Activities visited by a GUI exploration tool, first-visit order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExplorationLog {
    pub visited: Vec<String>,
    pub source_tool: String,
    pub duration: Option<f64>,
}

impl ExplorationLog {
    pub fn new<I, S>(source_tool: &str, names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let visited: IndexSet<String> = names
            .into_iter()
            .map(|n| normalize_class_name(n.as_ref()))
            .collect();
        ExplorationLog {
            visited: visited.into_iter().collect(),
            source_tool: source_tool.to_string(),
            duration: None,
        }
    }

    /// One activity per line. `#` starts a comment; `# tool=<label>` and
    /// `# duration=<seconds>` set metadata.
    pub fn parse(text: &str) -> Result<Self, CoverageError> {
        let mut names = Vec::new();
        let mut tool = String::new();
        let mut duration = None;
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if let Some(comment) = line.strip_prefix('#') {
                let comment = comment.trim();
                if let Some(t) = comment.strip_prefix("tool=") {
                    tool = t.trim().to_string();
                } else if let Some(d) = comment.strip_prefix("duration=") {
                    let secs: f64 = d
                        .trim()
                        .parse()
                        .map_err(|_| format_err(i + 1, format!("bad duration {d:?}")))?;
                    duration = Some(secs);
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            if line.contains(char::is_whitespace) {
                return Err(format_err(i + 1, format!("not an activity name: {line:?}")));
            }
            names.push(line);
        }
        let mut log = ExplorationLog::new(&tool, names);
        log.duration = duration;
        Ok(log)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        if !self.source_tool.is_empty() {
            let _ = writeln!(out, "# tool={}", self.source_tool);
        }
        if let Some(d) = self.duration {
            let _ = writeln!(out, "# duration={d}");
        }
        for v in &self.visited {
            let _ = writeln!(out, "{}", crate::names::to_java_name(v));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct UnreachableSet {
    /// Declared but unvisited, in declared order.
    pub unreachable: Vec<String>,
    /// Visited names that are not declared (framework or library screens).
    pub ignored_visits: usize,
}

pub fn unreachable_set<D, V>(declared: &[D], visited: &[V]) -> UnreachableSet
where
    D: AsRef<str>,
    V: AsRef<str>,
{
    let declared: IndexSet<String> = declared.iter().map(|d| normalize_class_name(d.as_ref())).collect();
    let visited: HashSet<String> = visited.iter().map(|v| normalize_class_name(v.as_ref())).collect();
    let ignored_visits = visited.iter().filter(|v| !declared.contains(*v)).count();
    if ignored_visits > 0 {
        log::debug!("{ignored_visits} visited activities are not declared in the manifest");
    }
    UnreachableSet {
        unreachable: declared.into_iter().filter(|d| !visited.contains(d)).collect(),
        ignored_visits,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ActivityCoverage {
    pub covered: usize,
    pub declared: usize,
    pub ratio: f64,
    /// Set when nothing is declared; the ratio is then 0.
    pub degenerate: bool,
}

pub fn activity_coverage<D, V>(declared: &[D], visited: &[V]) -> ActivityCoverage
where
    D: AsRef<str>,
    V: AsRef<str>,
{
    let declared: BTreeSet<String> = declared.iter().map(|d| normalize_class_name(d.as_ref())).collect();
    let visited: BTreeSet<String> = visited.iter().map(|v| normalize_class_name(v.as_ref())).collect();
    let covered = declared.intersection(&visited).count();
    let degenerate = declared.is_empty();
    ActivityCoverage {
        covered,
        declared: declared.len(),
        ratio: if degenerate { 0.0 } else { covered as f64 / declared.len() as f64 },
        degenerate,
    }
}

/// Integer percent, rounded half away from zero: `0.333` -> `"33%"`.
pub fn format_percent(ratio: f64) -> String {
    format!("{}%", (ratio * 100.0).round() as i64)
}

/// External class/method/line coverage row, `kind<TAB>covered<TAB>total`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CodeCoverage {
    pub kind: String,
    pub covered: u64,
    pub total: u64,
}

impl CodeCoverage {
    pub fn ratio(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.covered as f64 / self.total as f64
        }
    }
}

pub fn parse_code_coverage(text: &str) -> Result<Vec<CodeCoverage>, CoverageError> {
    let mut rows = Vec::new();
    for (i, line) in data_lines(text) {
        let cols: Vec<&str> = line.split('\t').collect();
        let [kind, covered, total] = cols[..] else {
            return Err(format_err(i, "expected kind<TAB>covered<TAB>total"));
        };
        let covered: u64 = covered.trim().parse().map_err(|_| format_err(i, "covered is not an integer"))?;
        let total: u64 = total.trim().parse().map_err(|_| format_err(i, "total is not an integer"))?;
        if covered > total {
            return Err(format_err(i, "covered exceeds total"));
        }
        rows.push(CodeCoverage { kind: kind.trim().to_string(), covered, total });
    }
    Ok(rows)
}

/// Non-empty, non-comment lines with 1-based line numbers.
fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageReport {
    pub declared_count: usize,
    pub visited_count: usize,
    pub activity_coverage: f64,
    pub degenerate: bool,
    pub unreachable: Vec<String>,
    pub ignored_visits: usize,
    pub code_coverage: Vec<CodeCoverage>,
}

impl CoverageReport {
    pub fn new(declared: &[String], log: &ExplorationLog, code_coverage: Vec<CodeCoverage>) -> Self {
        let cov = activity_coverage(declared, &log.visited);
        let un = unreachable_set(declared, &log.visited);
        if un.ignored_visits > 0 {
            log::warn!("{}: {} visited activities are not declared in the manifest", log.source_tool, un.ignored_visits);
        }
        CoverageReport {
            declared_count: cov.declared,
            visited_count: cov.covered,
            activity_coverage: cov.ratio,
            degenerate: cov.degenerate,
            unreachable: un.unreachable,
            ignored_visits: un.ignored_visits,
            code_coverage,
        }
    }

    /// Aligned table followed by `key=value` lines.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<22}{:>10}", "metric", "value");
        let _ = writeln!(out, "{:<22}{:>10}", "declared activities", self.declared_count);
        let _ = writeln!(out, "{:<22}{:>10}", "visited activities", self.visited_count);
        let _ = writeln!(out, "{:<22}{:>10}", "activity coverage", format_percent(self.activity_coverage));
        for c in &self.code_coverage {
            let label = format!("{} coverage", c.kind);
            let _ = writeln!(out, "{:<22}{:>10}", label, format_percent(c.ratio()));
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "declared_count={}", self.declared_count);
        let _ = writeln!(out, "visited_count={}", self.visited_count);
        let _ = writeln!(out, "activity_coverage={:.4}", self.activity_coverage);
        let _ = writeln!(out, "degenerate={}", self.degenerate);
        let _ = writeln!(out, "ignored_visits={}", self.ignored_visits);
        for c in &self.code_coverage {
            let _ = writeln!(out, "{}_coverage={:.4}", c.kind, c.ratio());
        }
        for u in &self.unreachable {
            let _ = writeln!(out, "unreachable={u}");
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reason {
    pub id: String,
    pub label: String,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ReasonTaxonomy {
    reasons: Vec<Reason>,
}

const DEFAULT_TAXONOMY: &str = include_str!("../data/reasons.tsv");

impl ReasonTaxonomy {
    pub fn new(reasons: Vec<Reason>) -> Result<Self, CoverageError> {
        if reasons.is_empty() {
            return Err(CoverageError::EmptyTaxonomy);
        }
        let mut seen = HashSet::new();
        for r in &reasons {
            if !seen.insert(r.id.as_str()) {
                return Err(CoverageError::DuplicateReason(r.id.clone()));
            }
        }
        Ok(ReasonTaxonomy { reasons })
    }

    /// `id<TAB>label<TAB>description` rows.
    pub fn parse(text: &str) -> Result<Self, CoverageError> {
        let mut reasons = Vec::new();
        for (i, line) in data_lines(text) {
            let mut cols = line.splitn(3, '\t');
            let (Some(id), Some(label), Some(desc)) = (cols.next(), cols.next(), cols.next()) else {
                return Err(format_err(i, "expected id<TAB>label<TAB>description"));
            };
            if id.trim().is_empty() {
                return Err(format_err(i, "empty reason id"));
            }
            reasons.push(Reason {
                id: id.trim().to_string(),
                label: label.trim().to_string(),
                description: desc.trim().to_string(),
            });
        }
        Self::new(reasons)
    }

    pub fn builtin() -> Self {
        Self::parse(DEFAULT_TAXONOMY).expect("bundled taxonomy is valid")
    }

    pub fn reasons(&self) -> &[Reason] {
        &self.reasons
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.reasons.iter().map(|r| r.id.as_str())
    }

    /// Matches an id or a label, case-insensitively for labels.
    pub fn lookup(&self, key: &str) -> Option<&Reason> {
        let key = key.trim();
        self.reasons
            .iter()
            .find(|r| r.id == key)
            .or_else(|| self.reasons.iter().find(|r| r.label.eq_ignore_ascii_case(key)))
    }

    /// Checks that every `+`-separated component of a category names a
    /// reason.
    pub fn check_category(&self, category: &str) -> Result<(), String> {
        for part in category.split('+') {
            if self.lookup(part).is_none() {
                return Err(part.trim().to_string());
            }
        }
        Ok(())
    }

    pub fn to_prompt_list(&self) -> String {
        let mut out = String::new();
        for r in &self.reasons {
            let _ = writeln!(out, "- {} ({}): {}", r.id, r.label, r.description);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LaunchOutcomeRecord {
    pub target: String,
    /// `+`-joined reason ids or labels.
    pub category: String,
    pub success: bool,
    pub tool: String,
}

/// `target<TAB>category<TAB>success<TAB>tool` rows; success is
/// `1`/`0`/`true`/`false`. Categories are checked when a taxonomy is given.
pub fn parse_records(
    text: &str,
    taxonomy: Option<&ReasonTaxonomy>,
) -> Result<Vec<LaunchOutcomeRecord>, CoverageError> {
    let mut out = Vec::new();
    for (i, line) in data_lines(text) {
        let cols: Vec<&str> = line.split('\t').map(str::trim).collect();
        let [target, category, success, tool] = cols[..] else {
            return Err(format_err(i, "expected target<TAB>category<TAB>success<TAB>tool"));
        };
        let success = match success {
            "1" | "true" => true,
            "0" | "false" => false,
            other => return Err(format_err(i, format!("bad success value {other:?}"))),
        };
        if let Some(tax) = taxonomy {
            tax.check_category(category)
                .map_err(|reason| CoverageError::UnknownReason { line: i, reason })?;
        }
        out.push(LaunchOutcomeRecord {
            target: normalize_class_name(target),
            category: category.to_string(),
            success,
            tool: tool.to_string(),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CategoryRate {
    pub successes: usize,
    pub total: usize,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ToolRates {
    pub tool: String,
    pub per_category: BTreeMap<String, CategoryRate>,
    /// Categories weighted by record count.
    pub weighted_average: f64,
}

/// One rate column per tool label, tools in sorted order.
pub fn launch_success_rate(records: &[LaunchOutcomeRecord]) -> Result<Vec<ToolRates>, CoverageError> {
    if records.is_empty() {
        return Err(CoverageError::EmptyInput);
    }
    let mut by_tool: BTreeMap<&str, BTreeMap<&str, (usize, usize)>> = BTreeMap::new();
    for r in records {
        let e = by_tool.entry(&r.tool).or_default().entry(&r.category).or_default();
        e.0 += usize::from(r.success);
        e.1 += 1;
    }
    Ok(by_tool
        .into_iter()
        .map(|(tool, cats)| {
            let per_category: BTreeMap<String, CategoryRate> = cats
                .into_iter()
                .map(|(c, (s, t))| {
                    (c.to_string(), CategoryRate { successes: s, total: t, rate: s as f64 / t as f64 })
                })
                .collect();
            let total: usize = per_category.values().map(|c| c.total).sum();
            let weighted_average = per_category
                .values()
                .map(|c| c.rate * c.total as f64)
                .sum::<f64>()
                / total as f64;
            ToolRates { tool: tool.to_string(), per_category, weighted_average }
        })
        .collect())
}

pub fn render_rates(rates: &[ToolRates]) -> String {
    let mut out = String::new();
    for t in rates {
        let _ = writeln!(out, "tool={}", t.tool);
        for (cat, r) in &t.per_category {
            let _ = writeln!(out, "  {cat}\t{}/{}\t{}", r.successes, r.total, format_percent(r.rate));
        }
        let _ = writeln!(out, "  weighted_average={:.4}", t.weighted_average);
    }
    out
}

/// Fraction of `truth` found among the first `k` entries of `ranked`.
pub fn recall_at_k<R, T>(ranked: &[R], truth: &[T], k: usize) -> Result<f64, CoverageError>
where
    R: AsRef<str>,
    T: AsRef<str>,
{
    let truth: BTreeSet<&str> = truth.iter().map(AsRef::as_ref).collect();
    if truth.is_empty() {
        return Err(CoverageError::EmptyTruth);
    }
    if k == 0 {
        return Err(CoverageError::ZeroK);
    }
    let top: BTreeSet<&str> = ranked.iter().take(k).map(AsRef::as_ref).collect();
    Ok(truth.intersection(&top).count() as f64 / truth.len() as f64)
}

/// One labelled activity: ground-truth reason ids and a ranked prediction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RecallLabel {
    pub activity: String,
    pub truth: Vec<String>,
    pub ranked: Vec<String>,
}

/// `activity<TAB>truth_ids<TAB>ranked_ids`, ids comma separated.
pub fn parse_labels(text: &str) -> Result<Vec<RecallLabel>, CoverageError> {
    let split = |s: &str| -> Vec<String> {
        s.split(',').map(str::trim).filter(|x| !x.is_empty()).map(String::from).collect()
    };
    data_lines(text)
        .map(|(i, line)| {
            let cols: Vec<&str> = line.split('\t').collect();
            match cols[..] {
                [activity, truth, ranked] => Ok(RecallLabel {
                    activity: normalize_class_name(activity),
                    truth: split(truth),
                    ranked: split(ranked),
                }),
                [activity, truth] => Ok(RecallLabel {
                    activity: normalize_class_name(activity),
                    truth: split(truth),
                    ranked: Vec::new(),
                }),
                _ => Err(format_err(i, "expected activity<TAB>truth_ids<TAB>ranked_ids")),
            }
        })
        .collect()
}

/// Mean recall@k over all labels, for each requested k.
pub fn mean_recall(labels: &[RecallLabel], ks: &[usize]) -> Result<Vec<(usize, f64)>, CoverageError> {
    if labels.is_empty() {
        return Err(CoverageError::EmptyInput);
    }
    ks.iter()
        .map(|&k| {
            let sum = labels
                .iter()
                .map(|l| recall_at_k(&l.ranked, &l.truth, k))
                .sum::<Result<f64, _>>()?;
            Ok((k, sum / labels.len() as f64))
        })
        .collect()
}
