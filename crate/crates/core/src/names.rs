//! Class-name normalization.
//!
//! Agents, manifests and exploration logs name classes in two shapes: the
//! Java dotted form (`com.foo.Bar`) and the smali descriptor form
//! (`Lcom/foo/Bar;`). Everything inside this crate is keyed by descriptor.

/// Converts any accepted class-name form into a descriptor.
///
/// Accepts `Lcom/foo/Bar;`, `com.foo.Bar` and `com/foo/Bar`. Surrounding
/// whitespace is ignored. The result is idempotent under re-normalization.
pub fn normalize_class_name(name: &str) -> String {
    let name = name.trim();
    if is_descriptor(name) {
        return name.to_string();
    }
    let body = name.replace('.', "/");
    format!("L{body};")
}

/// True when `name` is a class descriptor: `L`, then word characters, `/`,
/// `$` or `-` (d8 synthetic lambda classes), then `;`.
pub fn is_descriptor(name: &str) -> bool {
    let Some(inner) = name.strip_prefix('L').and_then(|s| s.strip_suffix(';')) else {
        return false;
    };
    !inner.is_empty()
        && inner
            .chars()
            .all(|c| c.is_alphanumeric() || matches!(c, '_' | '/' | '$' | '-'))
}

/// `Lcom/foo/Bar;` -> `com.foo.Bar`. Non-descriptors are returned unchanged.
pub fn to_java_name(descriptor: &str) -> String {
    match descriptor
        .strip_prefix('L')
        .and_then(|s| s.strip_suffix(';'))
    {
        Some(inner) => inner.replace('/', "."),
        None => descriptor.to_string(),
    }
}

/// `Lcom/foo/Bar$Inner;` -> `Bar$Inner`.
pub fn simple_name(descriptor: &str) -> &str {
    let inner = descriptor
        .strip_prefix('L')
        .and_then(|s| s.strip_suffix(';'))
        .unwrap_or(descriptor);
    inner.rsplit(['/', '.']).next().unwrap_or(inner)
}

/// File-system friendly stem for per-target artifacts.
pub fn file_stem(descriptor: &str) -> String {
    to_java_name(descriptor).replace(['$', '/', '\\'], "_")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn dotted_and_slashed_forms() {
        assert_eq!(normalize_class_name("com.foo.Bar"), "Lcom/foo/Bar;");
        assert_eq!(normalize_class_name("com/foo/Bar"), "Lcom/foo/Bar;");
        assert_eq!(normalize_class_name("  Lcom/foo/Bar; "), "Lcom/foo/Bar;");
        assert_eq!(
            normalize_class_name("com.foo.Outer$Inner"),
            "Lcom/foo/Outer$Inner;"
        );
    }

    #[test]
    fn descriptor_grammar() {
        assert!(is_descriptor("Lcom/foo/Bar;"));
        assert!(is_descriptor("La;"));
        assert!(!is_descriptor("L;"));
        assert!(!is_descriptor("com.foo.Bar"));
        assert!(!is_descriptor("Lcom/foo/Bar"));
        assert!(!is_descriptor("[Lcom/foo/Bar;"));
    }

    #[test]
    fn java_and_simple_names() {
        assert_eq!(to_java_name("Lcom/fsck/k9/activity/ChooseAccount;"), "com.fsck.k9.activity.ChooseAccount");
        assert_eq!(simple_name("Lcom/fsck/k9/activity/ChooseAccount;"), "ChooseAccount");
        assert_eq!(simple_name("Foo"), "Foo");
        assert_eq!(file_stem("Lcom/a/B$C;"), "com.a.B_C");
    }

    proptest! {
        #[test]
        fn normalization_is_idempotent(s in "[A-Za-z_$][A-Za-z0-9_$]{0,8}([./][A-Za-z_$][A-Za-z0-9_$]{0,8}){0,4}") {
            let once = normalize_class_name(&s);
            prop_assert_eq!(normalize_class_name(&once), once.clone());
            prop_assert!(is_descriptor(&once));
        }

        #[test]
        fn dotted_round_trip(s in "[a-z][a-z0-9]{0,6}(\\.[a-z][a-z0-9]{0,6}){0,4}") {
            prop_assert_eq!(to_java_name(&normalize_class_name(&s)), s);
        }
    }
}
