use std::fmt::Write as _;

use super::client::{Message, Role};
use super::dynamic::Phase;
use super::memory::{format_args, EpisodicMemory};
use super::static_agent::ActivationConditionReport;
use crate::names::to_java_name;

const STATIC_METHOD: &str = "\
Work through the following steps, calling the tools as often as you need.

Step 1: Forward Analysis
Start from the lifecycle methods of the target activity (onCreate, onStart, onResume) and follow the calls they make. \
Record every branch that can finish the activity early, throw, or skip its initialization, and what has to hold for \
the activity to stay open: intent extras and actions it reads, preferences, device or storage state, server replies, \
feature switches.

Step 2: Backward Analysis
Find the methods that start the target activity with startActivity or startActivityForResult (the launching-activity \
tools list them). For each one, work out how the Intent is built: its target class, action, extras and flags, and \
which state the caller must be in to reach that call.

Step 3: Launch Guideline
Combine both directions into a concrete recipe for opening the target directly from an instrumentation script: which \
methods to hook and which values to force them to return, and which Intent (action and typed extras) to send with \
startActivity.

Finish with a plain-text answer (no tool calls) using exactly these markdown headings:
## Forward Analysis
## Backward Analysis
## Launch Guideline";

/// Conversation seed for activation-condition inference. Only the final
/// user message depends on the target.
pub fn build_static_prompt(package_name: &str, target: &str) -> Vec<Message> {
    let system = format!(
        "You are an expert in smali, the assembly form of Dalvik bytecode. An automated GUI exploration of the \
         {package_name} app never opened some of its activities. Your job is to explain what prevents one of them \
         from launching and what it needs in order to launch.\n\n{STATIC_METHOD}"
    );
    vec![
        Message::new(Role::System, system),
        Message::new(Role::User, format!("Target activity: {}", to_java_name(target))),
    ]
}

/// Numbered list of the calls in `memory`; results are left to
/// `retrieve_tool_call_result`.
pub fn render_history(memory: &EpisodicMemory) -> String {
    let mut out = format!(
        "Tool calls made while analysing {}:\n",
        to_java_name(&memory.target)
    );
    if memory.records.is_empty() {
        out.push_str("no tool calls recorded\n");
    }
    for r in &memory.records {
        let _ = writeln!(out, "{}: {}{}", r.seq, r.tool_name, format_args(&r.args));
    }
    out
}

const DYN_METHOD: &str = "\
Step 1: Read state['phase']. If it is Generate, study the activation conditions and suggestions below. If it is \
Refine, study state['current_code'] together with state['feedback'] from the last validation run and decide what to \
change. In either phase you may call retrieve_tool_call_result with a call number or a tool name to read the result \
of an earlier analysis call.

Step 2: Describe the instrumentation in pseudocode.

Step 3: Write the plan and the Frida script that implement the pseudocode.

Reply with three fenced code blocks, in this order:
```pseudocode
...
```
```plan
...
```
```script
...
```

The plan block is line oriented:
  hook <Lowner;->name(params)ret> return <literal> [external]
  hook <Lowner;->name(params)ret> skip-body [external]
  intent <activity class> [action <action>]
  extra <key> <string|int|long|boolean|double> <literal>
  launch true|false
Literals are true, false, null, integers (append L for long), decimals, or double-quoted strings. Mark hooks on \
framework or library methods as external. Use launch true so the script can start the target activity when its \
button is pressed.";

/// Conversation seed for one instrumentation iteration.
pub fn build_dyn_prompt(
    report: &ActivationConditionReport,
    memory: &EpisodicMemory,
    phase: Phase,
    current_code: Option<&str>,
    feedback: Option<&str>,
) -> Vec<Message> {
    let mut user = String::new();
    let _ = writeln!(user, "state['phase'] = {}", phase.as_str());
    let _ = writeln!(user, "target activity: {}\n", to_java_name(&report.target));
    user.push_str(&render_history(memory));
    let _ = writeln!(
        user,
        "\nActivation conditions reported by the analysis of {}:\n{}",
        to_java_name(&report.target),
        report.raw_response.trim_end()
    );
    if phase == Phase::Refine {
        let _ = writeln!(user, "\nstate['current_code']:\n{}", current_code.unwrap_or_default().trim_end());
        let _ = writeln!(user, "\nstate['feedback']:\n{}", feedback.unwrap_or_default().trim_end());
    }
    vec![
        Message::new(
            Role::System,
            format!("You write Frida instrumentation for Android apps.\n\n{DYN_METHOD}"),
        ),
        Message::new(Role::User, user),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn static_prompt_blocks() {
        let a = build_static_prompt("com.fsck.k9", "Lcom/fsck/k9/activity/ChooseAccount;");
        let b = build_static_prompt("com.fsck.k9", "Lcom/fsck/k9/activity/MessageList;");
        assert!(a[0].content.contains("Forward Analysis") && a[0].content.contains("Backward Analysis"));
        assert!(a[0].content.contains("com.fsck.k9 app"));
        assert_eq!(a[0], b[0]);
        assert_ne!(a[1], b[1]);
        assert_eq!(a[1].content, "Target activity: com.fsck.k9.activity.ChooseAccount");
    }

    #[test]
    fn empty_history() {
        let m = EpisodicMemory::new("La/B;", vec![]);
        assert!(render_history(&m).contains("no tool calls recorded"));
    }
}
