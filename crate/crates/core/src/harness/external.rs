use std::path::PathBuf;
use std::process::Command;

use super::device::{Device, DeviceError, OutcomeKind, ValidationOutcome};
use crate::agent::InstrumentationArtifact;
use crate::names::{file_stem, normalize_class_name, to_java_name};

/// Delegates validation to a user-supplied command, invoked as
/// `<program> <args..> <script-path> <package> <target>`.
///
/// The command reports on stdout, one record per line:
/// `ACTIVITY: <name>` for the foreground activity after the trigger,
/// `FRIDA_EXCEPTION: <message>` and `CRASH: <trace line>`.
/// Other lines are kept in the raw log only.
#[derive(Debug, Clone)]
pub struct ExternalCommandDevice {
    pub program: String,
    pub args: Vec<String>,
    pub package: String,
    /// Where scripts are written before the command runs.
    pub work_dir: PathBuf,
}

impl ExternalCommandDevice {
    pub fn new(program: impl Into<String>, package: impl Into<String>, work_dir: impl Into<PathBuf>) -> Self {
        ExternalCommandDevice { program: program.into(), args: Vec::new(), package: package.into(), work_dir: work_dir.into() }
    }
}

/// Classifies the command's stdout for `target`.
pub fn classify_output(stdout: &str, target: &str) -> ValidationOutcome {
    let target = normalize_class_name(target);
    let mut exception = Vec::new();
    let mut crash = Vec::new();
    let mut observed = None;
    for line in stdout.lines() {
        if let Some(m) = line.strip_prefix("FRIDA_EXCEPTION:") {
            exception.push(m.trim());
        } else if let Some(t) = line.strip_prefix("CRASH:") {
            crash.push(t.trim());
        } else if let Some(a) = line.strip_prefix("ACTIVITY:") {
            observed = Some(normalize_class_name(a.trim()));
        }
    }
    let kind = if !exception.is_empty() {
        OutcomeKind::InstrumentationException(exception.join("\n"))
    } else if !crash.is_empty() {
        OutcomeKind::AppCrash(crash.join("\n"))
    } else if observed.as_deref() == Some(target.as_str()) {
        OutcomeKind::Success
    } else {
        OutcomeKind::NoTransition
    };
    ValidationOutcome { kind, observed_activity: observed, raw_log: stdout.to_string() }
}

impl Device for ExternalCommandDevice {
    fn validate(&self, artifact: &InstrumentationArtifact, target: &str) -> Result<ValidationOutcome, DeviceError> {
        let unavailable = |m: String| DeviceError::Unavailable(m);
        std::fs::create_dir_all(&self.work_dir)
            .map_err(|e| unavailable(format!("{}: {e}", self.work_dir.display())))?;
        let script = self
            .work_dir
            .join(format!("{}.iter{}.js", file_stem(&normalize_class_name(target)), artifact.iteration));
        std::fs::write(&script, &artifact.script_text).map_err(|e| unavailable(format!("{}: {e}", script.display())))?;
        let out = Command::new(&self.program)
            .args(&self.args)
            .arg(&script)
            .arg(&self.package)
            .arg(to_java_name(target))
            .output()
            .map_err(|e| unavailable(format!("{}: {e}", self.program)))?;
        if !out.status.success() {
            return Err(unavailable(format!(
                "{} exited with {}: {}",
                self.program,
                out.status,
                String::from_utf8_lossy(&out.stderr).trim()
            )));
        }
        Ok(classify_output(&String::from_utf8_lossy(&out.stdout), target))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classification_precedence() {
        let t = "com.x.Target";
        assert_eq!(classify_output("ACTIVITY: com.x.Target\n", t).kind, OutcomeKind::Success);
        assert_eq!(classify_output("ACTIVITY: com.x.Main\n", t).kind, OutcomeKind::NoTransition);
        assert_eq!(classify_output("noise\n", t).kind, OutcomeKind::NoTransition);
        assert!(matches!(
            classify_output("CRASH: boom\nCRASH: at x\nACTIVITY: com.x.Target\n", t).kind,
            OutcomeKind::AppCrash(m) if m == "boom\nat x"
        ));
        assert!(matches!(
            classify_output("FRIDA_EXCEPTION: no class\nCRASH: boom\n", t).kind,
            OutcomeKind::InstrumentationException(_)
        ));
    }
}
