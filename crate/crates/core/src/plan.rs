//! Instrumentation plans and their rendering into Frida scripts.
//!
//! A plan is a short line-oriented text:
//!
//! ```text
//! hook Lcom/x/Storage;->isSdCardMissing()Z return false
//! hook Lcom/x/Tracker;->init()V skip-body
//! hook Lcom/vendor/Geo;->where()Ljava/lang/String; return "45.5,-73.6" external
//! intent Lcom/x/Detail; action android.intent.action.VIEW
//! extra note_id long 42L
//! launch true
//! ```
//!
//! The rendered script carries the plan verbatim in a header comment, so
//! `parse_script_header(render_script(p)) == p`.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::names::{is_descriptor, normalize_class_name, to_java_name};
use crate::smali::{split_type_list, CodeIndex, MethodRef};

const HEADER_OPEN: &str = "/* reachkit-plan";
const HEADER_CLOSE: &str = "*/";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Literal {
    Bool(bool),
    Int(i64),
    Long(i64),
    Double(f64),
    Str(String),
    Null,
}

impl Literal {
    fn type_name(&self) -> &'static str {
        match self {
            Literal::Bool(_) => "boolean",
            Literal::Int(_) => "int",
            Literal::Long(_) => "long",
            Literal::Double(_) => "double",
            Literal::Str(_) => "string",
            Literal::Null => "null",
        }
    }

    /// Whether a method with return descriptor `ret` can be forced to this
    /// value.
    pub fn fits_return_type(&self, ret: &str) -> bool {
        match (self, ret) {
            (_, "V") => false,
            (Literal::Bool(_), "Z") => true,
            (Literal::Int(v), "I") => i32::try_from(*v).is_ok(),
            (Literal::Int(v), "S") => i16::try_from(*v).is_ok(),
            (Literal::Int(v), "B") => i8::try_from(*v).is_ok(),
            (Literal::Int(v), "C") => u16::try_from(*v).is_ok(),
            (Literal::Int(_) | Literal::Long(_), "J") => true,
            (Literal::Int(_) | Literal::Double(_), "F" | "D") => true,
            (Literal::Null, r) => r.starts_with('L') || r.starts_with('['),
            (Literal::Str(_), r) => matches!(
                r,
                "Ljava/lang/String;" | "Ljava/lang/CharSequence;" | "Ljava/lang/Object;"
            ),
            _ => false,
        }
    }

    fn to_js(&self) -> String {
        match self {
            Literal::Bool(b) => b.to_string(),
            Literal::Int(v) | Literal::Long(v) => v.to_string(),
            Literal::Double(d) => format_double(*d),
            Literal::Str(s) => quote(s),
            Literal::Null => "null".into(),
        }
    }
}

fn format_double(d: f64) -> String {
    let s = format!("{d:?}");
    if s.contains(['.', 'e', 'E']) || !d.is_finite() {
        s
    } else {
        format!("{s}.0")
    }
}

/// JSON string quoting that also escapes `/`, so `*/` can never close the
/// header comment early.
fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '/' => out.push_str("\\/"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c if (c as u32) < 0x20 => {
                let _ = write!(out, "\\u{:04x}", c as u32);
            }
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Literal::Long(v) => write!(f, "{v}L"),
            other => f.write_str(&other.to_js()),
        }
    }
}

impl FromStr for Literal {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        match s {
            "true" => return Ok(Literal::Bool(true)),
            "false" => return Ok(Literal::Bool(false)),
            "null" => return Ok(Literal::Null),
            _ => {}
        }
        if s.starts_with('"') {
            return serde_json::from_str::<String>(s)
                .map(Literal::Str)
                .map_err(|e| format!("bad string literal {s}: {e}"));
        }
        if let Some(digits) = s.strip_suffix(['L', 'l']) {
            return digits
                .parse()
                .map(Literal::Long)
                .map_err(|_| format!("bad long literal {s:?}"));
        }
        if let Ok(v) = s.parse::<i64>() {
            return Ok(Literal::Int(v));
        }
        if s.contains(['.', 'e', 'E']) {
            if let Ok(d) = s.parse::<f64>() {
                return Ok(Literal::Double(d));
            }
        }
        Err(format!("unrecognized literal {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum HookAction {
    Return(Literal),
    SkipBody,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hook {
    pub method: MethodRef,
    pub action: HookAction,
    /// The method lives outside the app's smali (framework or library).
    pub external: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntentSpec {
    pub target: String,
    pub action: Option<String>,
    /// Insertion order kept; keys are unique.
    pub extras: Vec<(String, Literal)>,
}

impl IntentSpec {
    pub fn extra(&self, key: &str) -> Option<&Literal> {
        self.extras.iter().find(|(k, _)| k == key).map(|(_, v)| v)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InstrumentationPlan {
    pub hooks: Vec<Hook>,
    pub intent: Option<IntentSpec>,
    pub launch: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("plan line {line}: {message}")]
pub struct PlanParseError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RenderError {
    #[error("cannot force {method} to return a {literal} value")]
    UnsupportedLiteralType { method: String, literal: String },
}

impl InstrumentationPlan {
    pub fn parse(text: &str) -> Result<Self, PlanParseError> {
        let mut plan = InstrumentationPlan::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with("//") {
                continue;
            }
            parse_line(&mut plan, line).map_err(|message| PlanParseError { line: i + 1, message })?;
        }
        Ok(plan)
    }

    pub fn to_text(&self) -> String {
        self.to_string()
    }

    /// Hooks whose class is neither in the index nor flagged external.
    pub fn unknown_hooks<'a>(&'a self, index: &CodeIndex) -> Vec<&'a Hook> {
        self.hooks
            .iter()
            .filter(|h| !h.external && index.method(&h.method).is_none())
            .collect()
    }

    /// First hook whose forced value does not fit its return type.
    pub fn check_literal_types(&self) -> Result<(), RenderError> {
        for h in &self.hooks {
            if let HookAction::Return(lit) = &h.action {
                let ret = h.method.return_type().unwrap_or("V");
                if !lit.fits_return_type(ret) {
                    return Err(RenderError::UnsupportedLiteralType {
                        method: h.method.to_string(),
                        literal: lit.type_name().to_string(),
                    });
                }
            }
        }
        Ok(())
    }
}

fn parse_line(plan: &mut InstrumentationPlan, line: &str) -> Result<(), String> {
    let (keyword, rest) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
    let rest = rest.trim();
    match keyword {
        "hook" => {
            let (method, tail) = rest.split_once(char::is_whitespace).ok_or("hook needs a method and an action")?;
            let mut method: MethodRef = method.parse().map_err(|e| format!("{e}"))?;
            method.owner = normalize_class_name(&method.owner);
            if !is_descriptor(&method.owner) || method.return_type().is_none_or(str::is_empty) {
                return Err(format!("bad method reference {method}"));
            }
            let mut tail = tail.trim();
            let external = match tail.strip_suffix("external") {
                Some(t) if t.is_empty() || t.ends_with(char::is_whitespace) => {
                    tail = t.trim_end();
                    true
                }
                _ => false,
            };
            let action = if tail == "skip-body" {
                HookAction::SkipBody
            } else if let Some(lit) = tail.strip_prefix("return") {
                if !lit.starts_with(char::is_whitespace) {
                    return Err("expected `return <literal>` or `skip-body`".into());
                }
                HookAction::Return(lit.parse()?)
            } else {
                return Err("expected `return <literal>` or `skip-body`".into());
            };
            plan.hooks.push(Hook { method, action, external });
        }
        "intent" => {
            if plan.intent.is_some() {
                return Err("more than one intent line".into());
            }
            let mut parts = rest.split_whitespace();
            let target = parts.next().ok_or("intent needs a target activity")?;
            let action = match (parts.next(), parts.next(), parts.next()) {
                (None, _, _) => None,
                (Some("action"), Some(a), None) => Some(a.to_string()),
                _ => return Err("expected `intent <activity> [action <name>]`".into()),
            };
            let target = normalize_class_name(target);
            if !is_descriptor(&target) {
                return Err(format!("bad activity name {target}"));
            }
            plan.intent = Some(IntentSpec { target, action, extras: Vec::new() });
        }
        "extra" => {
            let intent = plan.intent.as_mut().ok_or("extra before intent line")?;
            let mut parts = rest.splitn(3, char::is_whitespace);
            let (Some(key), Some(ty), Some(value)) = (parts.next(), parts.next(), parts.next()) else {
                return Err("expected `extra <key> <type> <value>`".into());
            };
            let lit: Literal = value.trim().parse()?;
            let lit = match (ty, lit) {
                ("string", l @ Literal::Str(_)) | ("boolean", l @ Literal::Bool(_)) => l,
                ("int", Literal::Int(v)) if i32::try_from(v).is_ok() => Literal::Int(v),
                ("long", Literal::Int(v) | Literal::Long(v)) => Literal::Long(v),
                ("double", Literal::Int(v)) => Literal::Double(v as f64),
                ("double", l @ Literal::Double(_)) => l,
                (ty, l) => return Err(format!("extra {key}: {l} is not a {ty}")),
            };
            if intent.extra(key).is_some() {
                return Err(format!("duplicate extra {key}"));
            }
            intent.extras.push((key.to_string(), lit));
        }
        "launch" => {
            plan.launch = match rest {
                "true" => true,
                "false" => false,
                _ => return Err("expected `launch true` or `launch false`".into()),
            };
        }
        other => return Err(format!("unknown directive {other:?}")),
    }
    Ok(())
}

impl fmt::Display for InstrumentationPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for h in &self.hooks {
            write!(f, "hook {} ", h.method)?;
            match &h.action {
                HookAction::Return(lit) => write!(f, "return {lit}")?,
                HookAction::SkipBody => f.write_str("skip-body")?,
            }
            if h.external {
                f.write_str(" external")?;
            }
            writeln!(f)?;
        }
        if let Some(intent) = &self.intent {
            write!(f, "intent {}", intent.target)?;
            if let Some(a) = &intent.action {
                write!(f, " action {a}")?;
            }
            writeln!(f)?;
            for (k, v) in &intent.extras {
                writeln!(f, "extra {k} {} {v}", v.type_name())?;
            }
        }
        writeln!(f, "launch {}", self.launch)
    }
}

/// Java type name as Frida's `overload()` expects it.
fn frida_type(desc: &str) -> String {
    match desc {
        "Z" => "boolean".into(),
        "B" => "byte".into(),
        "C" => "char".into(),
        "S" => "short".into(),
        "I" => "int".into(),
        "J" => "long".into(),
        "F" => "float".into(),
        "D" => "double".into(),
        d if d.starts_with('[') => d.replace('/', "."),
        d => to_java_name(d),
    }
}

fn js_ident(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() { c } else { '_' }).collect()
}

fn default_return(ret: &str) -> &'static str {
    match ret {
        "V" => "",
        "Z" => " false",
        "B" | "C" | "S" | "I" | "J" | "F" | "D" => " 0",
        _ => " null",
    }
}

/// Expands a plan into a Frida script. Fails when a forced value does not
/// fit the hooked method's return type.
pub fn render_script(plan: &InstrumentationPlan) -> Result<String, RenderError> {
    plan.check_literal_types()?;
    let mut s = String::new();
    let _ = writeln!(s, "{HEADER_OPEN}");
    s.push_str(&plan.to_text());
    let _ = writeln!(s, "{HEADER_CLOSE}");
    s.push_str("Java.perform(function() {\n    try {\n");
    s.push_str("        console.log(\"[*] Instrumenting app\");\n");
    for (i, h) in plan.hooks.iter().enumerate() {
        let class = to_java_name(&h.method.owner);
        let var = format!("C{i}_{}", js_ident(crate::names::simple_name(&h.method.owner)));
        let name = match h.method.name() {
            "<init>" => "$init".to_string(),
            n => n.to_string(),
        };
        let params: Vec<String> = crate::smali::MethodRef::param_types(&h.method)
            .iter()
            .map(|p| quote(&frida_type(p)))
            .collect();
        let args: Vec<String> = (0..params.len()).map(|i| format!("a{i}")).collect();
        let ret = h.method.return_type().unwrap_or("V");
        let body = match &h.action {
            HookAction::Return(lit) => format!("return {};", lit.to_js()),
            HookAction::SkipBody => format!("return{};", default_return(ret)),
        };
        let _ = writeln!(s, "        var {var} = Java.use({});", quote(&class));
        let _ = writeln!(
            s,
            "        {var}[{}].overload({}).implementation = function({}) {{",
            quote(&name),
            params.join(", "),
            args.join(", ")
        );
        let _ = writeln!(s, "            console.log({});", quote(&format!("[*] hooked {}", h.method)));
        let _ = writeln!(s, "            {body}");
        s.push_str("        };\n");
    }
    if plan.intent.is_some() || plan.launch {
        s.push_str("        function buildIntent(className) {\n");
        s.push_str("            var Intent = Java.use(\"android.content.Intent\");\n");
        s.push_str("            var context = Java.use(\"android.app.ActivityThread\").currentApplication().getApplicationContext();\n");
        s.push_str("            var intent = Intent.$new();\n");
        match &plan.intent {
            Some(intent) => {
                let _ = writeln!(
                    s,
                    "            intent.setClassName(context, {});",
                    quote(&to_java_name(&intent.target))
                );
                if let Some(a) = &intent.action {
                    let _ = writeln!(s, "            intent.setAction({});", quote(a));
                }
                for (k, v) in &intent.extras {
                    let jt = match v {
                        Literal::Bool(_) => "boolean",
                        Literal::Int(_) => "int",
                        Literal::Long(_) => "long",
                        Literal::Double(_) => "double",
                        _ => "java.lang.String",
                    };
                    let _ = writeln!(
                        s,
                        "            intent.putExtra.overload(\"java.lang.String\", {}).call(intent, {}, {});",
                        quote(jt),
                        quote(k),
                        v.to_js()
                    );
                }
            }
            None => s.push_str("            intent.setClassName(context, className);\n"),
        }
        s.push_str("            intent.addFlags(0x10000000);\n");
        s.push_str("            return [context, intent];\n");
        s.push_str("        }\n");
    }
    if plan.launch {
        s.push_str("        rpc.exports = {\n");
        s.push_str("            launch: function(className) {\n");
        s.push_str("                Java.scheduleOnMainThread(function() {\n");
        s.push_str("                    var built = buildIntent(className);\n");
        s.push_str("                    built[0].startActivity(built[1]);\n");
        s.push_str("                });\n");
        s.push_str("            }\n");
        s.push_str("        };\n");
    }
    s.push_str("    } catch (e) {\n        console.log(\"[!] \" + e);\n        throw e;\n    }\n});\n");
    Ok(s)
}

/// Recovers the plan embedded in a rendered script.
pub fn parse_script_header(script: &str) -> Result<InstrumentationPlan, PlanParseError> {
    let missing = || PlanParseError { line: 1, message: "no reachkit-plan header".into() };
    let start = script.find(HEADER_OPEN).ok_or_else(missing)?;
    let body = &script[start + HEADER_OPEN.len()..];
    let end = body.find(HEADER_CLOSE).ok_or_else(missing)?;
    InstrumentationPlan::parse(&body[..end])
}

/// Smali parameter list to Frida overload argument list, exposed for the
/// script preview in the CLI.
pub fn overload_types(signature: &str) -> Vec<String> {
    let params = signature
        .split_once('(')
        .and_then(|(_, rest)| rest.split_once(')'))
        .map(|(p, _)| p)
        .unwrap_or("");
    split_type_list(params).iter().map(|p| frida_type(p)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const SD_PLAN: &str = "hook Lcom/sec/android/app/myfiles/external/ui/ContentsListBaseActivity;->ShowNeedSdCardPopup()Z return false\nlaunch true\n";

    #[test]
    fn single_hook_round_trips_through_script() {
        let plan = InstrumentationPlan::parse(SD_PLAN).unwrap();
        assert_eq!(plan.hooks.len(), 1);
        assert_eq!(plan.hooks[0].action, HookAction::Return(Literal::Bool(false)));
        let script = render_script(&plan).unwrap();
        assert!(script.contains("Java.perform(function() {"));
        assert_eq!(script.matches(".implementation = function(").count(), 1);
        assert!(script.contains("return false;"));
        assert_eq!(parse_script_header(&script).unwrap(), plan);
        assert_eq!(plan.to_text(), SD_PLAN);
    }

    #[test]
    fn launch_only_script() {
        let plan = InstrumentationPlan::parse("launch true").unwrap();
        let script = render_script(&plan).unwrap();
        assert!(!script.contains(".implementation"));
        assert!(script.contains("setClassName(context, className)"));
        assert!(script.contains("rpc.exports"));
        assert_eq!(parse_script_header(&script).unwrap(), plan);
    }

    #[test]
    fn three_typed_extras() {
        let plan = InstrumentationPlan::parse(
            "intent com.x.Detail action android.intent.action.VIEW\nextra title string \"a */ b\"\nextra count int 3\nextra pinned boolean true\nlaunch true\n",
        )
        .unwrap();
        let intent = plan.intent.as_ref().unwrap();
        assert_eq!(intent.target, "Lcom/x/Detail;");
        assert_eq!(intent.extras.len(), 3);
        let script = render_script(&plan).unwrap();
        assert_eq!(script.matches("intent.putExtra.overload").count(), 3);
        assert_eq!(parse_script_header(&script).unwrap(), plan);
    }

    #[test]
    fn literal_type_mismatch() {
        let plan = InstrumentationPlan::parse("hook La;->f()Z return \"yes\"\n").unwrap();
        assert!(matches!(render_script(&plan), Err(RenderError::UnsupportedLiteralType { .. })));
        let plan = InstrumentationPlan::parse("hook La;->f()V return 1\n").unwrap();
        assert!(render_script(&plan).is_err());
        let plan = InstrumentationPlan::parse("hook La;->f()V skip-body\nhook La;->g()I skip-body\n").unwrap();
        let script = render_script(&plan).unwrap();
        assert!(script.contains("return;") && script.contains("return 0;"));
    }

    #[test]
    fn parse_errors_carry_line() {
        for (text, line) in [
            ("launch true\nbogus x\n", 2),
            ("extra k int 1\n", 1),
            ("intent La;\nextra k int 1\nextra k int 2\n", 3),
            ("intent La;\nextra k int \"x\"\n", 2),
            ("hook La;->f()Z\n", 1),
            ("hook nonsense return true\n", 1),
            ("intent La;\nintent Lb;\n", 2),
            ("launch maybe\n", 1),
        ] {
            assert_eq!(InstrumentationPlan::parse(text).unwrap_err().line, line, "{text}");
        }
    }

    #[test]
    fn external_flag_and_overloads() {
        let plan = InstrumentationPlan::parse(
            "hook com.vendor.Geo->where(ILjava/lang/String;[B)Ljava/lang/String; return \"45.5,-73.6\" external\n",
        )
        .unwrap();
        assert!(plan.hooks[0].external);
        assert_eq!(plan.hooks[0].method.owner, "Lcom/vendor/Geo;");
        let script = render_script(&plan).unwrap();
        assert!(script.contains(".overload(\"int\", \"java.lang.String\", \"[B\")"));
        assert_eq!(overload_types("f(IJ)V"), vec!["int", "long"]);
    }

    fn literal() -> impl Strategy<Value = Literal> {
        prop_oneof![
            any::<bool>().prop_map(Literal::Bool),
            (i32::MIN as i64..=i32::MAX as i64).prop_map(Literal::Int),
            any::<i64>().prop_map(Literal::Long),
            (-1.0e6f64..1.0e6).prop_map(Literal::Double),
            "[ -~]{0,12}".prop_map(Literal::Str),
        ]
    }

    fn ret_for(l: &Literal) -> &'static str {
        match l {
            Literal::Bool(_) => "Z",
            Literal::Int(_) => "I",
            Literal::Long(_) => "J",
            Literal::Double(_) => "D",
            _ => "Ljava/lang/String;",
        }
    }

    proptest! {
        #[test]
        fn render_parse_fixpoint(
            lits in proptest::collection::vec(literal(), 0..4),
            extras in proptest::collection::vec(("[a-z_]{1,6}", literal()), 0..4),
            launch in any::<bool>(),
            with_intent in any::<bool>(),
        ) {
            let mut plan = InstrumentationPlan { launch, ..Default::default() };
            for (i, l) in lits.into_iter().enumerate() {
                plan.hooks.push(Hook {
                    method: MethodRef::new("Lcom/p/Q;", format!("m{i}(I){}", ret_for(&l))),
                    action: HookAction::Return(l),
                    external: i % 2 == 1,
                });
            }
            if with_intent {
                let mut spec = IntentSpec { target: "Lcom/p/T;".into(), action: None, extras: vec![] };
                for (k, v) in extras {
                    if spec.extra(&k).is_none() && !matches!(v, Literal::Null) {
                        spec.extras.push((k, v));
                    }
                }
                plan.intent = Some(spec);
            }
            let script = render_script(&plan).unwrap();
            prop_assert_eq!(parse_script_header(&script).unwrap(), plan);
        }
    }
}
