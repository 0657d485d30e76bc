use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Analyzer, Findings};
use crate::layer_fs::{split_path, FileEntry, LayerView};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OsRelease {
    pub id: String,
    pub version_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pretty_name: Option<String>,
    pub source_path: String,
}

/// Parses `KEY=VALUE` lines, unquoting values.
pub fn parse_key_values(text: &str) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    for line in text.lines() {
        let line = line.trim();
        if line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else { continue };
        let k = k.trim();
        if k.is_empty() || !k.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            continue;
        }
        let v = v.trim();
        let v = if v.len() >= 2
            && ((v.starts_with('"') && v.ends_with('"')) || (v.starts_with('\'') && v.ends_with('\'')))
        {
            &v[1..v.len() - 1]
        } else {
            v
        };
        out.insert(k.to_string(), v.replace("\\\"", "\"").replace("\\$", "$"));
    }
    out
}

fn first_version_token(text: &str) -> Option<String> {
    text.split(|c: char| c.is_whitespace() || c == '(' || c == ')')
        .find(|t| t.starts_with(|c: char| c.is_ascii_digit()))
        .map(|t| t.trim_end_matches(['.', ',']).to_string())
}

fn from_os_release(text: &str, path: &str) -> Option<OsRelease> {
    let kv = parse_key_values(text);
    let id = kv.get("ID").or_else(|| kv.get("DISTRIB_ID"))?.to_ascii_lowercase();
    if id.is_empty() {
        return None;
    }
    let version_id = kv
        .get("VERSION_ID")
        .or_else(|| kv.get("DISTRIB_RELEASE"))
        .filter(|v| !v.is_empty())
        .cloned();
    let pretty_name = kv
        .get("PRETTY_NAME")
        .or_else(|| kv.get("DISTRIB_DESCRIPTION"))
        .cloned();
    Some(OsRelease {
        id,
        version_id,
        pretty_name,
        source_path: path.to_string(),
    })
}

/// `/etc/alpine-release` holds a bare version; `/etc/redhat-release` a
/// sentence; `/etc/lsb-release` key-value pairs.
fn from_release_file(text: &str, path: &str) -> Option<OsRelease> {
    if let Some(r) = from_os_release(text, path) {
        return Some(r);
    }
    let (_, base) = split_path(path);
    let stem = base.strip_suffix("-release")?;
    let line = text.lines().map(str::trim).find(|l| !l.is_empty())?;
    let id = match stem {
        "redhat" if line.starts_with("CentOS") => "centos".to_string(),
        "redhat" if line.starts_with("Fedora") => "fedora".to_string(),
        "redhat" if line.starts_with("Rocky") => "rocky".to_string(),
        "redhat" => "rhel".to_string(),
        s if s.is_empty() || s == "lsb" || s == "system" => line
            .split_whitespace()
            .next()
            .unwrap_or_default()
            .to_ascii_lowercase(),
        s => s.to_ascii_lowercase(),
    };
    if id.is_empty() {
        return None;
    }
    Some(OsRelease {
        id,
        version_id: first_version_token(line),
        pretty_name: Some(line.to_string()),
        source_path: path.to_string(),
    })
}

fn is_etc_release(path: &str) -> bool {
    match path.strip_prefix("/etc/") {
        Some(base) => !base.contains('/') && base.ends_with("-release") && base.len() > "-release".len(),
        None => false,
    }
}

pub fn is_os_path(path: &str) -> bool {
    matches!(path, "/etc/os-release" | "/usr/lib/os-release" | "/etc/debian_version")
        || is_etc_release(path)
}

/// Finds the distribution, trying `/etc/os-release`, `/usr/lib/os-release`,
/// the other `/etc/*-release` files, then `/etc/debian_version`.
pub fn detect_os(view: &LayerView<'_>) -> Option<OsRelease> {
    for path in ["/etc/os-release", "/usr/lib/os-release"] {
        if let Some(text) = view.read_text(path) {
            if let Some(r) = from_os_release(&text, path) {
                return Some(r);
            }
        }
    }
    let mut release_files: Vec<&str> = view
        .under("/etc")
        .map(|e| e.path.as_str())
        .filter(|p| is_etc_release(p) && *p != "/etc/os-release")
        .collect();
    // Distribution-specific files before the generic lsb/system ones.
    release_files.sort_by_key(|p| (p.ends_with("/lsb-release") || p.ends_with("/system-release"), *p));
    for path in release_files {
        if let Some(text) = view.read_text(path) {
            if let Some(r) = from_release_file(&text, path) {
                return Some(r);
            }
        }
    }
    let text = view.read_text("/etc/debian_version")?;
    let version = text.trim();
    Some(OsRelease {
        id: "debian".into(),
        version_id: (!version.is_empty()).then(|| version.to_string()),
        pretty_name: None,
        source_path: "/etc/debian_version".into(),
    })
}

pub struct OsAnalyzer;

impl Analyzer for OsAnalyzer {
    fn name(&self) -> &'static str {
        "os"
    }

    fn is_relevant(&self, entry: &FileEntry) -> bool {
        is_os_path(&entry.path) || entry.path == "/etc" || entry.path == "/usr/lib"
    }

    fn wants_content(&self, path: &str) -> bool {
        is_os_path(path)
    }

    fn analyze(&self, view: &LayerView<'_>, out: &mut Findings) {
        out.os = detect_os(view);
    }
}
