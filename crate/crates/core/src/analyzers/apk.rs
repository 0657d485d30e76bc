//! Alpine package database (`lib/apk/db/installed`) and the `world` file.

use super::{flags, Analyzer, Ecosystem, Findings, Package, Provenance};
use crate::layer_fs::{FileEntry, LayerView};

pub const INSTALLED_PATHS: &[&str] = &["/lib/apk/db/installed", "/var/lib/apk/db/installed"];
pub const WORLD_PATH: &str = "/etc/apk/world";

/// One database block: single-letter keys in file order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ApkRecord {
    pub fields: Vec<(char, String)>,
}

impl ApkRecord {
    pub fn get(&self, key: char) -> Option<&str> {
        self.fields.iter().find(|(k, _)| *k == key).map(|(_, v)| v.as_str())
    }

    /// Files from `F:` (directory) and `R:` (file in the last directory).
    pub fn files(&self) -> Vec<String> {
        let mut dir = String::new();
        let mut out = Vec::new();
        for (k, v) in &self.fields {
            match k {
                'F' => dir = v.trim_matches('/').to_string(),
                'R' if !v.is_empty() => out.push(if dir.is_empty() {
                    format!("/{v}")
                } else {
                    format!("/{dir}/{v}")
                }),
                _ => {}
            }
        }
        out
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ApkDatabase {
    pub records: Vec<ApkRecord>,
    pub malformed: usize,
}

pub fn parse_installed(text: &str) -> ApkDatabase {
    let mut db = ApkDatabase::default();
    let mut current = ApkRecord::default();
    let mut broken = false;
    let finish = |rec: &mut ApkRecord, broken: &mut bool, db: &mut ApkDatabase| {
        if !rec.fields.is_empty() || *broken {
            if *broken || rec.get('P').map(str::is_empty).unwrap_or(true) {
                db.malformed += 1;
            } else {
                db.records.push(std::mem::take(rec));
            }
        }
        *rec = ApkRecord::default();
        *broken = false;
    };
    for line in text.lines() {
        if line.trim().is_empty() {
            finish(&mut current, &mut broken, &mut db);
            continue;
        }
        let mut chars = line.chars();
        match (chars.next(), chars.next()) {
            (Some(k), Some(':')) if !k.is_whitespace() => {
                current.fields.push((k, line[k.len_utf8() + 1..].to_string()));
            }
            _ => broken = true,
        }
    }
    finish(&mut current, &mut broken, &mut db);
    db
}

pub fn serialize_installed(records: &[ApkRecord]) -> String {
    let mut s = String::new();
    for r in records {
        for (k, v) in &r.fields {
            s.push(*k);
            s.push(':');
            s.push_str(v);
            s.push('\n');
        }
        s.push('\n');
    }
    s
}

pub fn packages_from_db(db: &ApkDatabase, source: &str) -> Vec<Package> {
    db.records
        .iter()
        .map(|r| {
            let mut p = Package::new(
                Ecosystem::Apk,
                r.get('P').unwrap_or_default(),
                r.get('V').map(str::to_string),
            )
            .with_metadata(source);
            p.arch = r.get('A').filter(|a| !a.is_empty()).map(str::to_string);
            p.owned_files = r.files();
            p
        })
        .collect()
}

/// Names in `/etc/apk/world`, stripped of constraints and repository tags.
/// Negated (`!name`) entries are skipped.
pub fn parse_world(text: &str) -> Vec<String> {
    text.split_whitespace()
        .filter(|w| !w.starts_with('!'))
        .map(|w| {
            let end = w.find(['=', '<', '>', '~', '@']).unwrap_or(w.len());
            w[..end].to_string()
        })
        .filter(|n| !n.is_empty())
        .collect()
}

pub struct ApkAnalyzer;

impl Analyzer for ApkAnalyzer {
    fn name(&self) -> &'static str {
        "apk"
    }

    fn is_relevant(&self, entry: &FileEntry) -> bool {
        let p = entry.path.as_str();
        p.starts_with("/lib/apk") || p.starts_with("/var/lib/apk") || p.starts_with("/etc/apk")
            || matches!(p, "/lib" | "/var" | "/var/lib" | "/etc")
    }

    fn wants_content(&self, path: &str) -> bool {
        INSTALLED_PATHS.contains(&path) || path == WORLD_PATH
    }

    fn analyze(&self, view: &LayerView<'_>, out: &mut Findings) {
        let mut installed = Vec::new();
        for source in INSTALLED_PATHS {
            if view.lookup(source).is_none() {
                continue;
            }
            let Some(text) = view.read_text(source) else {
                out.warn(format!("{source}: contents unavailable"));
                continue;
            };
            let db = parse_installed(&text);
            if db.malformed > 0 {
                out.warn(format!("{source}: skipped {} malformed block(s)", db.malformed));
            }
            installed.extend(packages_from_db(&db, source));
            // Both locations can exist; one is usually a symlink to the other.
            break;
        }
        if let Some(text) = view.read_text(WORLD_PATH) {
            for name in parse_world(&text) {
                let p = Package::new(Ecosystem::Apk, name, None)
                    .with_provenance(Provenance::Declared)
                    .with_metadata(WORLD_PATH);
                out.packages.push(p);
            }
        }
        for p in &installed {
            if p.has_flag(flags::VERSION_ABSENT) {
                out.warn(format!("apk package {} has no version", p.name));
            }
        }
        out.packages.extend(installed);
    }
}
