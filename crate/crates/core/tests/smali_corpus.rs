mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use reachkit::smali::{build_code_index, parse_smali_file, InstructionKind, MethodRef};

use common::*;

#[test]
fn planted_instructions_have_their_annotated_kind() {
    for (path, kinds) in corpus_files() {
        let class = parse_smali_file(&std::fs::read_to_string(&path).unwrap()).unwrap();
        let insns: Vec<_> = class.methods.iter().flat_map(|m| &m.instructions).collect();
        for (line, want) in read_kinds(&kinds) {
            let got = insns.iter().find(|i| i.line_no == line).map(|i| i.kind());
            assert_eq!(got, Some(want), "{}:{line}", path.display());
        }
    }
}

#[test]
fn method_source_text_is_a_verbatim_slice() {
    for (path, _) in corpus_files() {
        let text = std::fs::read_to_string(&path).unwrap();
        let class = parse_smali_file(&text).unwrap();
        for m in &class.methods {
            assert!(text.contains(&m.source_text), "{}", m.method_ref());
            assert!(m.source_text.starts_with(".method"));
            assert!(m.source_text.trim_end().ends_with(".end method"));
        }
    }
}

#[test]
fn sdcard_guard_call_is_visible_both_ways() {
    let dir = fixtures().join("smali/sdcard_guard");
    let classes = ["ContentsListBaseActivity.smali", "IosOtgContentsListActivity.smali"]
        .iter()
        .map(|f| parse_smali_file(&std::fs::read_to_string(dir.join(f)).unwrap()).unwrap())
        .collect();
    let index = build_code_index(classes).unwrap();
    let base = "Lcom/sec/android/app/myfiles/external/ui/ContentsListBaseActivity;";
    let on_create = MethodRef::new(base, "onCreate(Landroid/os/Bundle;)V");
    let popup = MethodRef::new(base, "ShowNeedSdCardPopup()Z");
    assert!(index.callees(&on_create).unwrap().contains(&popup));
    assert!(index.get_caller_methods(&popup).contains(&on_create));

    let body = &index.method(&on_create).unwrap().instructions;
    let at = body.iter().position(|i| i.raw_text.contains("ShowNeedSdCardPopup")).unwrap();
    let kinds: Vec<InstructionKind> =
        body[at..].iter().map(|i| i.kind()).filter(|k| *k != InstructionKind::Other).take(3).collect();
    assert_eq!(kinds, [InstructionKind::Invoke, InstructionKind::MoveResult, InstructionKind::Branch]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn callers_invert_callees(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let classes = random_package_sources(&mut rng, 12)
            .iter()
            .map(|s| parse_smali_file(s).unwrap())
            .collect();
        let index = build_code_index(classes).unwrap();
        let all: Vec<MethodRef> = index.methods().map(|m| m.method_ref()).collect();
        for a in &all {
            let callees = index.callees(a).unwrap_or_default();
            for b in &all {
                prop_assert_eq!(callees.contains(b), index.get_caller_methods(b).contains(a));
            }
        }
    }
}
