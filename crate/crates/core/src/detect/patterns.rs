//! The table of file patterns that mark package evidence.
//!
//! A pattern ending in `/` is a directory fragment and matches anywhere in
//! the path. A pattern containing `*` is a glob over the whole path. Any
//! other pattern containing `/` matches a run of whole path components.
//! The rest match a single path component exactly, or as a suffix when the
//! pattern starts with `.` (`.gemspec`).

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Tactic {
    #[serde(rename = "OS")]
    Os,
    #[serde(rename = "OSPKG")]
    OsPkg,
    #[serde(rename = "DEP")]
    Dep,
    #[serde(rename = "PKG")]
    Pkg,
    #[serde(rename = "URL")]
    Url,
    #[serde(rename = "COMPRESS")]
    Compress,
    #[serde(rename = "LINK")]
    Link,
    #[serde(rename = "ALIAS")]
    Alias,
}

impl Tactic {
    pub const ALL: [Tactic; 8] = [
        Tactic::Os,
        Tactic::OsPkg,
        Tactic::Dep,
        Tactic::Pkg,
        Tactic::Url,
        Tactic::Compress,
        Tactic::Link,
        Tactic::Alias,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Tactic::Os => "OS",
            Tactic::OsPkg => "OSPKG",
            Tactic::Dep => "DEP",
            Tactic::Pkg => "PKG",
            Tactic::Url => "URL",
            Tactic::Compress => "COMPRESS",
            Tactic::Link => "LINK",
            Tactic::Alias => "ALIAS",
        }
    }

    pub fn parse(s: &str) -> Option<Tactic> {
        Tactic::ALL.into_iter().find(|t| t.as_str().eq_ignore_ascii_case(s))
    }

    /// Tactics whose evidence lives in file paths.
    pub fn is_path_based(self) -> bool {
        matches!(self, Tactic::Os | Tactic::OsPkg | Tactic::Dep | Tactic::Pkg)
    }
}

impl fmt::Display for Tactic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternRow {
    pub tactic: Tactic,
    pub ecosystem: String,
    pub pattern: String,
}

impl PatternRow {
    pub fn new(tactic: Tactic, ecosystem: &str, pattern: &str) -> Self {
        PatternRow { tactic, ecosystem: ecosystem.into(), pattern: pattern.into() }
    }

    pub fn matches(&self, path: &str) -> bool {
        pattern_matches(&self.pattern, path)
    }
}

pub fn pattern_matches(pattern: &str, path: &str) -> bool {
    if pattern.is_empty() {
        return false;
    }
    if pattern.contains('*') {
        return glob::Pattern::new(pattern).map(|g| g.matches(path)).unwrap_or(false);
    }
    let slashed = format!("{path}/");
    if pattern.ends_with('/') {
        return slashed.contains(pattern);
    }
    if pattern.contains('/') {
        let p = pattern.trim_start_matches('/');
        return slashed.contains(&format!("/{p}/"));
    }
    path.split('/').any(|c| c == pattern || (pattern.starts_with('.') && c.len() > pattern.len() && c.ends_with(pattern)))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternTable {
    pub rows: Vec<PatternRow>,
}

impl Default for PatternTable {
    fn default() -> Self {
        use Tactic::*;
        let rows = [
            (Os, "any", "os-release"),
            (Os, "any", "/etc/*-release"),
            (Os, "any", "debian_version"),
            (OsPkg, "dpkg", "dpkg/status"),
            (OsPkg, "dpkg", "var/lib/dpkg"),
            (OsPkg, "rpm", "rpm/Packages"),
            (OsPkg, "rpm", "rpmdb.sqlite"),
            (OsPkg, "rpm", "var/lib/yum"),
            (OsPkg, "rpm", "var/cache/yum"),
            (OsPkg, "rpm", "yum.repos.d"),
            (OsPkg, "apk", "apk/db/installed"),
            (OsPkg, "apk", "apk/world"),
            (Dep, "python", "Pipfile"),
            (Dep, "python", "requirements.txt"),
            (Dep, "ruby", ".gemspec"),
            (Dep, "node", "package.json"),
            (Dep, "node", "package-lock.json"),
            (Dep, "node", "yarn.lock"),
            (Dep, "php", "composer.json"),
            (Dep, "php", "composer.lock"),
            (Dep, "go", "go.sum"),
            (Dep, "go", "go.mod"),
            (Pkg, "python", "dist-info/"),
            (Pkg, "python", "egg-info/"),
            (Pkg, "python", "site-packages/"),
            (Pkg, "python", "dist-packages/"),
            (Pkg, "ruby", "gems/"),
            (Pkg, "node", "node_modules/"),
            (Pkg, "php", "/vendor/"),
            (Pkg, "go", "/go/"),
        ];
        PatternTable { rows: rows.iter().map(|(t, e, p)| PatternRow::new(*t, e, p)).collect() }
    }
}

/// Override file: `[TACTIC]` tables mapping an ecosystem tag to patterns.
///
/// ```toml
/// [OSPKG]
/// pacman = ["var/lib/pacman/local/"]
/// ```
#[derive(Debug, Deserialize)]
#[serde(transparent)]
struct OverrideFile(BTreeMap<String, BTreeMap<String, Vec<String>>>);

impl PatternTable {
    pub fn rows_for(&self, tactic: Tactic) -> impl Iterator<Item = &PatternRow> {
        self.rows.iter().filter(move |r| r.tactic == tactic)
    }

    /// First row of `tactic` matching `path`.
    pub fn matching(&self, tactic: Tactic, path: &str) -> Option<&PatternRow> {
        self.rows_for(tactic).find(|r| r.matches(path))
    }

    pub fn matches_any(&self, path: &str) -> bool {
        self.rows.iter().any(|r| r.matches(path))
    }

    /// Appends the rows of an override document. Rows already present are
    /// not duplicated; existing rows are never removed.
    pub fn extend_from_toml(&mut self, text: &str) -> Result<usize> {
        let doc: OverrideFile = toml::from_str(text).map_err(|e| Error::PatternTable(e.to_string()))?;
        let mut added = 0;
        for (tactic, ecosystems) in doc.0 {
            let t = Tactic::parse(&tactic)
                .filter(|t| t.is_path_based())
                .ok_or_else(|| Error::PatternTable(format!("unknown pattern tactic {tactic:?}")))?;
            for (eco, patterns) in ecosystems {
                for p in patterns {
                    if p.is_empty() {
                        return Err(Error::PatternTable(format!("empty pattern for {tactic}/{eco}")));
                    }
                    let row = PatternRow::new(t, &eco, &p);
                    if !self.rows.contains(&row) {
                        self.rows.push(row);
                        added += 1;
                    }
                }
            }
        }
        Ok(added)
    }

    pub fn with_override_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut table = PatternTable::default();
        table.extend_from_toml(&text)?;
        Ok(table)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_rows() {
        let t = PatternTable::default();
        let count = |tac| t.rows_for(tac).count();
        assert_eq!(count(Tactic::Os), 3);
        assert_eq!(count(Tactic::OsPkg), 9);
        assert_eq!(count(Tactic::Dep), 10);
        assert_eq!(count(Tactic::Pkg), 8);
    }

    #[test]
    fn match_kinds() {
        let t = PatternTable::default();
        let hit = |tac, p| t.matching(tac, p).is_some();
        assert!(hit(Tactic::Os, "/etc/os-release"));
        assert!(hit(Tactic::Os, "/usr/lib/os-release"));
        assert!(hit(Tactic::Os, "/etc/redhat-release"));
        assert!(!hit(Tactic::Os, "/opt/redhat-release"));
        assert!(hit(Tactic::OsPkg, "/var/lib/dpkg/status"));
        assert!(hit(Tactic::OsPkg, "/var/lib/dpkg/info/gzip.list"));
        assert!(!hit(Tactic::OsPkg, "/var/lib/dpkgx"));
        assert!(hit(Tactic::OsPkg, "/etc/yum.repos.d/base.repo"));
        assert!(hit(Tactic::OsPkg, "/lib/apk/db/installed"));
        assert!(hit(Tactic::Dep, "/app/requirements.txt"));
        assert!(!hit(Tactic::Dep, "/app/requirements.txt.bak"));
        assert!(hit(Tactic::Dep, "/src/foo.gemspec"));
        assert!(hit(Tactic::Pkg, "/usr/lib/python3/dist-packages/six.py"));
        assert!(hit(Tactic::Pkg, "/x/flask-2.3.2.dist-info/METADATA"));
        assert!(hit(Tactic::Pkg, "/app/node_modules"));
        assert!(hit(Tactic::Pkg, "/app/vendor/monolog/monolog/src/Logger.php"));
        assert!(!hit(Tactic::Pkg, "/app/vendored/x"));
        assert!(hit(Tactic::Pkg, "/root/go/pkg/mod/x"));
        assert!(!hit(Tactic::Pkg, "/usr/bin/gzip"));
    }

    #[test]
    fn override_appends() {
        let mut t = PatternTable::default();
        let before = t.rows.len();
        let n = t
            .extend_from_toml("[OSPKG]\npacman = [\"var/lib/pacman/local/\"]\n[DEP]\npython = [\"requirements.txt\", \"pyproject.toml\"]\n")
            .unwrap();
        assert_eq!(n, 2);
        assert_eq!(t.rows.len(), before + 2);
        assert_eq!(&t.rows[..before], &PatternTable::default().rows[..]);
        assert!(t.extend_from_toml("[URL]\nx = [\"y\"]\n").is_err());
        assert!(t.extend_from_toml("not toml [").is_err());
    }
}
