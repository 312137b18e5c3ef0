//! Decompiled package ingestion: plain-XML manifest plus smali tree.

use std::fs;
use std::path::{Path, PathBuf};

use indexmap::IndexSet;
use rayon::prelude::*;
use serde::Serialize;

use crate::ctg::{build_ctg, Ctg};
use crate::names::normalize_class_name;
use crate::smali::{build_code_index, parse_smali_file, CodeIndex, IndexError, ParseError, SmaliClass};

const ANDROID_NS: &str = "http://schemas.android.com/apk/res/android";

#[derive(Debug, thiserror::Error)]
pub enum PackageError {
    #[error("no AndroidManifest.xml under {0}")]
    MissingManifest(PathBuf),
    #[error("{0} is a binary (AAPT-compiled) manifest; decode the APK with `apktool d` first")]
    BinaryManifest(PathBuf),
    #[error("manifest error at {path}: {message}")]
    ManifestParse { path: String, message: String },
    #[error("no smali files under {0}")]
    EmptySmaliTree(PathBuf),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}: {source}")]
    Smali {
        file: PathBuf,
        #[source]
        source: ParseError,
    },
    #[error(transparent)]
    Index(#[from] IndexError),
}

/// Activity declarations extracted from a manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Manifest {
    pub package_name: String,
    /// Descriptors in manifest order, aliases folded into their targets.
    pub declared_activities: Vec<String>,
    pub main_activities: Vec<String>,
}

/// Expands a manifest class reference against the package name.
fn expand_activity_name(package: &str, name: &str) -> String {
    let name = name.trim();
    let full = if name.starts_with('.') {
        format!("{package}{name}")
    } else if !name.contains('.') {
        format!("{package}.{name}")
    } else {
        name.to_string()
    };
    normalize_class_name(&full)
}

pub fn parse_manifest(xml: &str) -> Result<Manifest, PackageError> {
    let doc = roxmltree::Document::parse(xml).map_err(|e| PackageError::ManifestParse {
        path: format!("{}", e.pos()),
        message: e.to_string(),
    })?;
    let root = doc.root_element();
    if root.tag_name().name() != "manifest" {
        return Err(PackageError::ManifestParse {
            path: root.tag_name().name().to_string(),
            message: "root element is not <manifest>".into(),
        });
    }
    let package_name = root
        .attribute("package")
        .filter(|p| !p.trim().is_empty())
        .ok_or_else(|| PackageError::ManifestParse {
            path: "manifest".into(),
            message: "missing package attribute".into(),
        })?
        .trim()
        .to_string();

    let mut declared = IndexSet::new();
    let mut mains = IndexSet::new();
    for app in root.children().filter(|n| n.has_tag_name("application")) {
        for (pos, node) in app.children().filter(|n| n.is_element()).enumerate() {
            let tag = node.tag_name().name();
            let attr = match tag {
                "activity" => "name",
                "activity-alias" => "targetActivity",
                _ => continue,
            };
            let path = format!("manifest/application/{tag}[{}]", pos + 1);
            let value = android_attr(node, attr).ok_or_else(|| PackageError::ManifestParse {
                path: path.clone(),
                message: format!("missing android:{attr}"),
            })?;
            let activity = expand_activity_name(&package_name, value);
            if !crate::names::is_descriptor(&activity) {
                return Err(PackageError::ManifestParse {
                    path,
                    message: format!("invalid activity name {value:?}"),
                });
            }
            declared.insert(activity.clone());
            if is_launcher(node) {
                mains.insert(activity);
            }
        }
    }
    Ok(Manifest {
        package_name,
        declared_activities: declared.into_iter().collect(),
        main_activities: mains.into_iter().collect(),
    })
}

fn android_attr<'a>(node: roxmltree::Node<'a, 'a>, name: &str) -> Option<&'a str> {
    node.attribute((ANDROID_NS, name)).or_else(|| {
        node.attributes()
            .find(|a| a.name() == name)
            .map(|a| a.value())
    })
}

fn is_launcher(node: roxmltree::Node<'_, '_>) -> bool {
    node.children()
        .filter(|n| n.has_tag_name("intent-filter"))
        .any(|filter| {
            let has = |tag: &str, values: &[&str]| {
                filter
                    .children()
                    .filter(|c| c.has_tag_name(tag))
                    .any(|c| android_attr(c, "name").is_some_and(|v| values.contains(&v)))
            };
            has("action", &["android.intent.action.MAIN"])
                && has(
                    "category",
                    &["android.intent.category.LAUNCHER", "android.intent.category.LEANBACK_LAUNCHER"],
                )
        })
}

/// Result of an activity-existence query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ActivityCheck {
    pub declared: bool,
    /// Declared in the manifest but no smali class backs it.
    pub missing_smali: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct AppPackage {
    pub package_name: String,
    pub declared_activities: Vec<String>,
    pub main_activities: Vec<String>,
    #[serde(skip)]
    pub index: CodeIndex,
    pub ctg: Ctg,
}

impl AppPackage {
    /// Assembles a package from an already-parsed manifest and classes.
    pub fn from_parts(manifest: Manifest, classes: Vec<SmaliClass>) -> Result<Self, PackageError> {
        let index = build_code_index(classes)?;
        let ctg = build_ctg(&manifest.declared_activities, &index);
        Ok(AppPackage {
            package_name: manifest.package_name,
            declared_activities: manifest.declared_activities,
            main_activities: manifest.main_activities,
            index,
            ctg,
        })
    }

    /// The manifest is authoritative; a missing smali class only sets the
    /// warning flag.
    pub fn check_activity_exists(&self, name: &str) -> ActivityCheck {
        let name = normalize_class_name(name);
        let declared = self.declared_activities.contains(&name);
        ActivityCheck {
            declared,
            missing_smali: declared && !self.index.check_class_exists(&name),
        }
    }

    pub fn get_activities(&self) -> &[String] {
        &self.declared_activities
    }

    pub fn is_main(&self, name: &str) -> bool {
        self.main_activities.contains(&normalize_class_name(name))
    }

    /// Human-readable summary used by the `ingest` subcommand.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("package={}\n", self.package_name));
        out.push_str(&format!("classes={}\n", self.index.class_count()));
        out.push_str(&format!("declared_activities={}\n", self.declared_activities.len()));
        out.push_str(&format!("main_activities={}\n", self.main_activities.len()));
        out.push_str(&format!("launch_sites={}\n", self.index.launch_sites().len()));
        out.push_str(&format!("ctg_edges={}\n", self.ctg.edges.len()));
        out.push_str(&format!("ctg_unresolved={}\n", self.ctg.unresolved_sites.len()));
        for a in &self.declared_activities {
            let tag = if self.main_activities.contains(a) { "main" } else { "activity" };
            out.push_str(&format!("{tag}\t{a}\n"));
        }
        out
    }
}

/// Loads an apktool output directory.
pub fn ingest_package(root: &Path) -> Result<AppPackage, PackageError> {
    let manifest_path = root.join("AndroidManifest.xml");
    if !manifest_path.is_file() {
        return Err(PackageError::MissingManifest(root.to_path_buf()));
    }
    let bytes = fs::read(&manifest_path).map_err(|source| PackageError::Io {
        path: manifest_path.clone(),
        source,
    })?;
    if bytes.starts_with(&[0x03, 0x00, 0x08, 0x00]) {
        return Err(PackageError::BinaryManifest(manifest_path));
    }
    let xml = String::from_utf8(bytes).map_err(|_| PackageError::BinaryManifest(manifest_path.clone()))?;
    let manifest = parse_manifest(&xml)?;

    let files = smali_files(root)?;
    if files.is_empty() {
        return Err(PackageError::EmptySmaliTree(root.to_path_buf()));
    }
    let classes = files
        .par_iter()
        .map(|path| {
            let text = fs::read_to_string(path).map_err(|source| PackageError::Io {
                path: path.clone(),
                source,
            })?;
            parse_smali_file(&text).map_err(|source| PackageError::Smali {
                file: path.clone(),
                source,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    AppPackage::from_parts(manifest, classes)
}

fn smali_files(root: &Path) -> Result<Vec<PathBuf>, PackageError> {
    let entries = fs::read_dir(root).map_err(|source| PackageError::Io {
        path: root.to_path_buf(),
        source,
    })?;
    let mut dirs: Vec<PathBuf> = entries
        .filter_map(Result::ok)
        .filter(|e| e.file_name().to_string_lossy().starts_with("smali") && e.path().is_dir())
        .map(|e| e.path())
        .collect();
    dirs.sort();
    let mut files = Vec::new();
    for dir in dirs {
        for entry in walkdir::WalkDir::new(&dir).sort_by_file_name() {
            let entry = entry.map_err(|e| PackageError::Io {
                path: dir.clone(),
                source: e.into(),
            })?;
            if entry.file_type().is_file() && entry.path().extension().is_some_and(|x| x == "smali") {
                files.push(entry.into_path());
            }
        }
    }
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MANIFEST: &str = r#"<?xml version="1.0" encoding="utf-8"?>
<manifest xmlns:android="http://schemas.android.com/apk/res/android" package="com.fsck.k9">
  <application android:label="K-9">
    <activity android:name=".activity.MessageList">
      <intent-filter>
        <action android:name="android.intent.action.MAIN"/>
        <category android:name="android.intent.category.LAUNCHER"/>
      </intent-filter>
    </activity>
    <activity android:name=".activity.ChooseAccount"/>
    <activity android:name="com.fsck.k9.activity.setup.AccountSetupBasics"/>
    <activity android:name="Settings"/>
    <activity-alias android:name=".Launcher" android:targetActivity=".activity.MessageList"/>
    <service android:name=".service.MailService"/>
  </application>
</manifest>
"#;

    #[test]
    fn declared_mains_and_expansion() {
        let m = parse_manifest(MANIFEST).unwrap();
        assert_eq!(m.package_name, "com.fsck.k9");
        assert_eq!(
            m.declared_activities,
            vec![
                "Lcom/fsck/k9/activity/MessageList;",
                "Lcom/fsck/k9/activity/ChooseAccount;",
                "Lcom/fsck/k9/activity/setup/AccountSetupBasics;",
                "Lcom/fsck/k9/Settings;",
            ]
        );
        assert_eq!(m.main_activities, vec!["Lcom/fsck/k9/activity/MessageList;"]);
    }

    #[test]
    fn alias_with_launcher_marks_target_main() {
        let xml = r#"<manifest xmlns:android="http://schemas.android.com/apk/res/android" package="a.b">
  <application>
    <activity android:name=".Real"/>
    <activity-alias android:name=".Alias" android:targetActivity=".Real">
      <intent-filter>
        <action android:name="android.intent.action.MAIN"/>
        <category android:name="android.intent.category.LAUNCHER"/>
      </intent-filter>
    </activity-alias>
  </application>
</manifest>"#;
        let m = parse_manifest(xml).unwrap();
        assert_eq!(m.declared_activities, vec!["La/b/Real;"]);
        assert_eq!(m.main_activities, vec!["La/b/Real;"]);
    }

    #[test]
    fn zero_activities_is_fine() {
        let m = parse_manifest(r#"<manifest package="a.b"><application/></manifest>"#).unwrap();
        assert!(m.declared_activities.is_empty());
        assert!(m.main_activities.is_empty());
    }

    #[test]
    fn manifest_errors_name_the_element() {
        let err = parse_manifest(
            r#"<manifest package="a.b"><application><activity/></application></manifest>"#,
        )
        .unwrap_err();
        match err {
            PackageError::ManifestParse { path, .. } => assert_eq!(path, "manifest/application/activity[1]"),
            other => panic!("{other}"),
        }
        assert!(matches!(
            parse_manifest("<manifest><application/></manifest>"),
            Err(PackageError::ManifestParse { .. })
        ));
        assert!(matches!(parse_manifest("<manifest"), Err(PackageError::ManifestParse { .. })));
    }

    #[test]
    fn ingest_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(ingest_package(dir.path()), Err(PackageError::MissingManifest(_))));

        fs::write(dir.path().join("AndroidManifest.xml"), [0x03u8, 0x00, 0x08, 0x00, 0x10]).unwrap();
        let err = ingest_package(dir.path()).unwrap_err();
        assert!(matches!(err, PackageError::BinaryManifest(_)));
        assert!(err.to_string().contains("apktool"));

        fs::write(dir.path().join("AndroidManifest.xml"), MANIFEST).unwrap();
        assert!(matches!(ingest_package(dir.path()), Err(PackageError::EmptySmaliTree(_))));

        let smali = dir.path().join("smali/com/fsck/k9/activity");
        fs::create_dir_all(&smali).unwrap();
        fs::write(smali.join("Broken.smali"), ".class La;\n.super Ljava/lang/Object;\n.method f()V\n").unwrap();
        match ingest_package(dir.path()).unwrap_err() {
            PackageError::Smali { file, source } => {
                assert!(file.ends_with("Broken.smali"));
                assert_eq!(source.line, 3);
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn dangling_declaration_warns() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("AndroidManifest.xml"), MANIFEST).unwrap();
        let smali = dir.path().join("smali_classes2/com/fsck/k9/activity");
        fs::create_dir_all(&smali).unwrap();
        fs::write(
            smali.join("ChooseAccount.smali"),
            ".class public Lcom/fsck/k9/activity/ChooseAccount;\n.super Landroid/app/Activity;\n",
        )
        .unwrap();
        let pkg = ingest_package(dir.path()).unwrap();
        assert_eq!(
            pkg.check_activity_exists("com.fsck.k9.activity.ChooseAccount"),
            ActivityCheck { declared: true, missing_smali: false }
        );
        assert_eq!(
            pkg.check_activity_exists("Lcom/fsck/k9/Settings;"),
            ActivityCheck { declared: true, missing_smali: true }
        );
        assert!(!pkg.check_activity_exists("com.fsck.k9.Nope").declared);
        assert_eq!(pkg.get_activities().len(), 4);
    }
}
