use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::model::{MethodRef, Op, SmaliClass, SmaliMethod};
use crate::ctg::{self, LaunchSite};
use crate::names::normalize_class_name;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum IndexError {
    #[error("duplicate class {0}")]
    DuplicateClass(String),
}

/// Immutable whole-program view over parsed smali classes.
///
/// `callers` is the exact inverse of `callees` restricted to callees that
/// are defined in the index. Invokes are matched by exact owner and
/// signature; virtual dispatch through superclasses is not resolved.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CodeIndex {
    classes: BTreeMap<String, SmaliClass>,
    callees: BTreeMap<MethodRef, Vec<MethodRef>>,
    callers: BTreeMap<MethodRef, BTreeSet<MethodRef>>,
    launch_sites: Vec<LaunchSite>,
}

/// Builds the index. Input order does not affect the result.
pub fn build_code_index(classes: Vec<SmaliClass>) -> Result<CodeIndex, IndexError> {
    let mut by_name = BTreeMap::new();
    for class in classes {
        if by_name.contains_key(&class.name) {
            return Err(IndexError::DuplicateClass(class.name));
        }
        by_name.insert(class.name.clone(), class);
    }

    let mut callees: BTreeMap<MethodRef, Vec<MethodRef>> = BTreeMap::new();
    for class in by_name.values() {
        for method in &class.methods {
            let targets = method
                .instructions
                .iter()
                .filter_map(|i| match &i.op {
                    Op::Invoke { target, .. } => Some(target.clone()),
                    _ => None,
                })
                .collect();
            callees.insert(method.method_ref(), targets);
        }
    }

    let mut callers: BTreeMap<MethodRef, BTreeSet<MethodRef>> = BTreeMap::new();
    for (caller, targets) in &callees {
        for target in targets {
            if callees.contains_key(target) {
                callers
                    .entry(target.clone())
                    .or_default()
                    .insert(caller.clone());
            }
        }
    }

    let mut index = CodeIndex {
        classes: by_name,
        callees,
        callers,
        launch_sites: Vec::new(),
    };
    let sites = ctg::find_launch_sites(&index)
        .into_iter()
        .map(|site| ctg::resolve_intent_target(&index, site))
        .collect();
    index.launch_sites = sites;
    Ok(index)
}

impl CodeIndex {
    pub fn classes(&self) -> impl Iterator<Item = &SmaliClass> {
        self.classes.values()
    }

    pub fn class_count(&self) -> usize {
        self.classes.len()
    }

    pub fn methods(&self) -> impl Iterator<Item = &SmaliMethod> {
        self.classes.values().flat_map(|c| c.methods.iter())
    }

    /// Looks up a class by dotted or descriptor name.
    pub fn class(&self, name: &str) -> Option<&SmaliClass> {
        self.classes.get(&normalize_class_name(name))
    }

    pub fn method(&self, r: &MethodRef) -> Option<&SmaliMethod> {
        self.class(&r.owner)?.method(&r.signature)
    }

    pub fn launch_sites(&self) -> &[LaunchSite] {
        &self.launch_sites
    }

    /// Invoke targets of a method in order of appearance, duplicates kept.
    pub fn callees(&self, r: &MethodRef) -> Option<&[MethodRef]> {
        self.callees.get(r).map(Vec::as_slice)
    }

    pub fn check_class_exists(&self, name: &str) -> bool {
        self.class(name).is_some()
    }

    /// Source-order signatures, or `None` when the class is unknown.
    pub fn get_methods_inside_class(&self, name: &str) -> Option<Vec<&str>> {
        self.class(name)
            .map(|c| c.methods.iter().map(|m| m.signature.as_str()).collect())
    }

    /// Resolves a possibly partial signature query inside one class.
    ///
    /// A full signature matches exactly. A bare name (`onCreate`) matches
    /// every overload; a signature without return type (`f(I)`) matches by
    /// prefix.
    pub fn find_methods(&self, class: &str, query: &str) -> Vec<&SmaliMethod> {
        let Some(class) = self.class(class) else {
            return Vec::new();
        };
        let query = query.trim();
        if let Some(m) = class.method(query) {
            return vec![m];
        }
        if !query.contains('(') {
            class.methods.iter().filter(|m| m.name() == query).collect()
        } else if query.ends_with(')') {
            class
                .methods
                .iter()
                .filter(|m| m.signature.starts_with(query))
                .collect()
        } else {
            Vec::new()
        }
    }

    /// Exact source text of the method, `.method` through `.end method`.
    pub fn get_method_body(&self, r: &MethodRef) -> Option<&str> {
        self.method(r).map(|m| m.source_text.as_str())
    }

    /// Deduplicated invoke targets in first-occurrence order.
    pub fn get_methods_invoked(&self, r: &MethodRef) -> Option<Vec<MethodRef>> {
        let key = self.method(r)?.method_ref();
        let mut seen = BTreeSet::new();
        Some(
            self.callees[&key]
                .iter()
                .filter(|t| seen.insert(*t))
                .cloned()
                .collect(),
        )
    }

    /// In-index methods whose body invokes `r`, sorted by owner then
    /// signature.
    pub fn get_caller_methods(&self, r: &MethodRef) -> Vec<MethodRef> {
        let key = MethodRef::new(normalize_class_name(&r.owner), r.signature.clone());
        self.callers
            .get(&key)
            .map(|s| s.iter().cloned().collect())
            .unwrap_or_default()
    }

    /// The class followed by its in-index superclasses, nearest first.
    pub fn superclass_chain<'a>(&'a self, class: &'a str) -> Vec<&'a str> {
        let mut chain = vec![class];
        let mut seen = BTreeSet::from([class]);
        let mut current = class;
        while let Some(c) = self.classes.get(current) {
            let parent = c.super_name.as_str();
            if !seen.insert(parent) {
                break;
            }
            chain.push(parent);
            current = parent;
        }
        chain
    }
}
