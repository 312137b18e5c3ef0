//! Lenient section extraction from model output.

use serde::Serialize;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ReportSections {
    pub forward: String,
    pub backward: String,
    /// Everything outside the forward and backward sections.
    pub guideline: String,
    /// Section names that were absent or empty.
    pub missing: Vec<&'static str>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Bucket {
    Forward,
    Backward,
    Guideline,
}

/// Heading text and nesting depth (`#` count; bold and colon headings are
/// treated as deepest).
fn heading(line: &str) -> Option<(String, usize)> {
    let t = line.trim();
    if t.starts_with('#') {
        let level = t.chars().take_while(|&c| c == '#').count();
        let rest = t[level..].trim();
        if !rest.is_empty() {
            return Some((normalize_heading(rest), level));
        }
        return None;
    }
    for wrap in ["**", "__"] {
        if t.len() > 4 && t.starts_with(wrap) && t.ends_with(wrap) {
            return Some((normalize_heading(&t[2..t.len() - 2]), 7));
        }
    }
    if t.ends_with(':') && t.len() < 60 {
        let h = normalize_heading(t);
        if classify(&h).is_some() {
            return Some((h, 7));
        }
    }
    None
}

fn normalize_heading(s: &str) -> String {
    s.trim_matches(|c: char| c == '*' || c == '_' || c == ':' || c.is_whitespace())
        .to_lowercase()
}

fn classify(h: &str) -> Option<Bucket> {
    if h.contains("forward") {
        Some(Bucket::Forward)
    } else if h.contains("backward") {
        Some(Bucket::Backward)
    } else if ["launch", "guideline", "instrument", "recommend", "summary", "precondition", "activation", "strategy"]
        .iter()
        .any(|k| h.contains(k))
    {
        Some(Bucket::Guideline)
    } else {
        None
    }
}

/// Splits a static-analysis answer by its headings. Case and markdown
/// decoration are ignored. Unrecognized headings nested inside a forward or
/// backward section stay there; other text lands in the guideline.
pub fn parse_report_sections(text: &str) -> ReportSections {
    let mut forward = Vec::new();
    let mut backward = Vec::new();
    let mut guideline = Vec::new();
    let mut bucket = Bucket::Guideline;
    let mut level = 0usize;
    let mut in_fence = false;
    for line in text.lines() {
        if line.trim_start().starts_with("```") {
            in_fence = !in_fence;
        }
        if !in_fence {
            if let Some((h, l)) = heading(line) {
                match classify(&h) {
                    Some(b) => {
                        bucket = b;
                        level = l;
                        continue;
                    }
                    None if bucket != Bucket::Guideline && l > level => {}
                    None => {
                        bucket = Bucket::Guideline;
                        level = l;
                        continue;
                    }
                }
            }
        }
        match bucket {
            Bucket::Forward => forward.push(line),
            Bucket::Backward => backward.push(line),
            Bucket::Guideline => guideline.push(line),
        }
    }
    let join = |v: Vec<&str>| v.join("\n").trim().to_string();
    let mut s = ReportSections {
        forward: join(forward),
        backward: join(backward),
        guideline: join(guideline),
        missing: Vec::new(),
    };
    for (name, body) in [("forward", &s.forward), ("backward", &s.backward), ("guideline", &s.guideline)] {
        if body.is_empty() {
            s.missing.push(name);
        }
    }
    s
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct DynSections {
    pub pseudocode: Option<String>,
    pub plan: Option<String>,
    pub script: Option<String>,
}

impl DynSections {
    pub fn missing(&self) -> Vec<String> {
        [("PSEUDOCODE", &self.pseudocode), ("PLAN", &self.plan), ("SCRIPT", &self.script)]
            .into_iter()
            .filter(|(_, v)| v.as_deref().is_none_or(|s| s.trim().is_empty()))
            .map(|(n, _)| n.to_string())
            .collect()
    }
}

fn label_of(s: &str) -> Option<usize> {
    let s = s.to_lowercase();
    if s.contains("pseudo") {
        Some(0)
    } else if s.contains("plan") {
        Some(1)
    } else if ["script", "frida", "javascript"].iter().any(|k| s.contains(k)) || s == "js" {
        Some(2)
    } else {
        None
    }
}

/// Pulls the PSEUDOCODE, PLAN and SCRIPT fenced blocks out of a response.
/// A block is labelled by its info string or, failing that, by the nearest
/// preceding non-empty line. The first block of each kind wins.
pub fn parse_dyn_response(text: &str) -> DynSections {
    let mut found: [Option<String>; 3] = [None, None, None];
    let mut prev = "";
    let mut lines = text.lines();
    while let Some(line) = lines.next() {
        let t = line.trim_start();
        let fence = if t.starts_with("```") {
            "```"
        } else if t.starts_with("~~~") {
            "~~~"
        } else {
            if !line.trim().is_empty() {
                prev = line;
            }
            continue;
        };
        let info = t[3..].trim();
        let mut body = Vec::new();
        for inner in lines.by_ref() {
            if inner.trim_start().starts_with(fence) {
                break;
            }
            body.push(inner);
        }
        if let Some(i) = label_of(info).or_else(|| label_of(prev)) {
            if found[i].is_none() {
                found[i] = Some(body.join("\n"));
            }
        }
        prev = "";
    }
    let [pseudocode, plan, script] = found;
    DynSections { pseudocode, plan, script }
}
