//! Node.js: packages installed under `node_modules/` and declared in
//! `package.json`, `package-lock.json` (v1-v3) and `yarn.lock` (classic and
//! berry).

use serde_json::Value;

use super::util::{files_under, has_component, strip_bom};
use super::{flags, Analyzer, Ecosystem, Findings, Package, Provenance};
use crate::layer_fs::{split_path, FileEntry, LayerView};

const NM: &str = "node_modules";

/// For `.../node_modules/<name>/package.json` or
/// `.../node_modules/@scope/<name>/package.json`, the package directory and
/// its name.
pub fn installed_package_dir(path: &str) -> Option<(&str, String)> {
    let dir = path.strip_suffix("/package.json")?;
    let (parent, name) = split_path(dir);
    let (pp, pname) = split_path(parent);
    if pname == NM && !name.starts_with('.') && !name.starts_with('@') {
        return Some((dir, name.to_string()));
    }
    if pname.starts_with('@') && split_path(pp).1 == NM {
        return Some((dir, format!("{pname}/{name}")));
    }
    None
}

fn json(text: &str) -> Result<Value, String> {
    serde_json::from_str(strip_bom(text)).map_err(|e| e.to_string())
}

fn exact_version(range: &str) -> Option<String> {
    let r = range.trim().trim_start_matches('=').trim_start_matches('v');
    let mut parts = r.split(['-', '+']).next()?.split('.');
    let ok = (0..3).all(|_| {
        parts
            .next()
            .map(|p| !p.is_empty() && p.bytes().all(|b| b.is_ascii_digit()))
            .unwrap_or(false)
    }) && parts.next().is_none();
    ok.then(|| r.to_string())
}

/// Dependencies of a root `package.json`. Only exact versions are kept;
/// ranges leave the version empty.
pub fn parse_package_json_deps(text: &str) -> Result<Vec<(String, Option<String>)>, String> {
    let doc = json(text)?;
    let mut out = Vec::new();
    for section in ["dependencies", "devDependencies", "optionalDependencies"] {
        if let Some(obj) = doc.get(section).and_then(Value::as_object) {
            for (name, range) in obj {
                out.push((name.clone(), range.as_str().and_then(exact_version)));
            }
        }
    }
    Ok(out)
}

/// Entries of a `package-lock.json` or `npm-shrinkwrap.json`.
pub fn parse_package_lock(text: &str) -> Result<Vec<(String, Option<String>)>, String> {
    let doc = json(text)?;
    let mut out = Vec::new();
    if let Some(pkgs) = doc.get("packages").and_then(Value::as_object) {
        for (key, meta) in pkgs {
            if key.is_empty() || meta.get("link").and_then(Value::as_bool) == Some(true) {
                continue;
            }
            let name = meta
                .get("name")
                .and_then(Value::as_str)
                .map(str::to_string)
                .or_else(|| key.rsplit_once("node_modules/").map(|(_, n)| n.to_string()));
            let Some(name) = name.filter(|n| !n.is_empty()) else { continue };
            let version = meta.get("version").and_then(Value::as_str).map(str::to_string);
            out.push((name, version));
        }
        return Ok(out);
    }
    fn walk(deps: &serde_json::Map<String, Value>, out: &mut Vec<(String, Option<String>)>) {
        for (name, meta) in deps {
            let version = meta.get("version").and_then(Value::as_str).map(str::to_string);
            out.push((name.clone(), version));
            if let Some(nested) = meta.get("dependencies").and_then(Value::as_object) {
                walk(nested, out);
            }
        }
    }
    if let Some(deps) = doc.get("dependencies").and_then(Value::as_object) {
        walk(deps, &mut out);
    }
    Ok(out)
}

/// Package name from a yarn descriptor such as `@babel/core@^7.0.0` or
/// `lodash@npm:^4.17.0`.
fn descriptor_name(desc: &str) -> Option<&str> {
    let d = desc.trim().trim_matches('"');
    let start = usize::from(d.starts_with('@'));
    let at = d[start..].find('@')? + start;
    Some(&d[..at]).filter(|n| !n.is_empty())
}

/// Entries of a `yarn.lock`, classic or berry.
pub fn parse_yarn_lock(text: &str) -> Vec<(String, Option<String>)> {
    let mut out = Vec::new();
    let mut current: Option<String> = None;
    for line in strip_bom(text).lines() {
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        if !line.starts_with(' ') {
            current = None;
            let key = line.trim_end().trim_end_matches(':');
            if key == "__metadata" || key.contains("@workspace:") || key.contains("@patch:") {
                continue;
            }
            let first = key.split(", ").next().unwrap_or(key);
            current = descriptor_name(first).map(str::to_string);
            continue;
        }
        let Some(name) = &current else { continue };
        let t = line.trim();
        let version = t
            .strip_prefix("version:")
            .or_else(|| t.strip_prefix("version "))
            .map(|v| v.trim().trim_matches('"').to_string());
        if let Some(v) = version {
            out.push((name.clone(), Some(v).filter(|v| !v.is_empty())));
            current = None;
        }
    }
    out
}

pub struct NodeAnalyzer;

impl Analyzer for NodeAnalyzer {
    fn name(&self) -> &'static str {
        "node"
    }

    fn is_relevant(&self, entry: &FileEntry) -> bool {
        has_component(&entry.path, NM)
            || matches!(entry.basename(), "package.json" | "package-lock.json" | "npm-shrinkwrap.json" | "yarn.lock")
    }

    fn wants_content(&self, path: &str) -> bool {
        let (_, base) = split_path(path);
        matches!(base, "package.json" | "package-lock.json" | "npm-shrinkwrap.json" | "yarn.lock")
    }

    fn analyze(&self, view: &LayerView<'_>, out: &mut Findings) {
        for e in view.iter().filter(|e| !e.is_dir()) {
            let base = e.basename();
            if base == "package.json" {
                if let Some((dir, name)) = installed_package_dir(&e.path) {
                    let p = installed(view, dir, name, &e.path, out);
                    out.packages.push(p);
                    continue;
                }
            }
            // Manifests and lockfiles shipped inside installed packages
            // describe their development, not this image.
            if has_component(&e.path, NM) {
                continue;
            }
            let parsed = match base {
                "package.json" => view.read_text(&e.path).map(|t| parse_package_json_deps(&t)),
                "package-lock.json" | "npm-shrinkwrap.json" => {
                    view.read_text(&e.path).map(|t| parse_package_lock(&t))
                }
                "yarn.lock" => view.read_text(&e.path).map(|t| Ok(parse_yarn_lock(&t))),
                _ => None,
            };
            match parsed {
                Some(Ok(list)) => out.packages.extend(list.into_iter().map(|(n, v)| {
                    Package::new(Ecosystem::Npm, n, v)
                        .with_provenance(Provenance::Declared)
                        .with_metadata(e.path.clone())
                })),
                Some(Err(err)) => out.warn(format!("{}: {err}", e.path)),
                None => {}
            }
        }
    }
}

fn installed(view: &LayerView<'_>, dir: &str, dir_name: String, manifest: &str, out: &mut Findings) -> Package {
    let parsed = view.read_text(manifest).map(|t| json(&t));
    let mut p = match parsed {
        Some(Ok(doc)) => {
            let name = doc
                .get("name")
                .and_then(Value::as_str)
                .filter(|n| !n.is_empty())
                .map(str::to_string);
            let version = doc.get("version").and_then(Value::as_str).map(str::to_string);
            let mut p = Package::new(Ecosystem::Npm, name.clone().unwrap_or_else(|| dir_name.clone()), version);
            if name.is_none() {
                p.flag(flags::INFERRED_FROM_PATH);
            }
            p
        }
        Some(Err(e)) => {
            out.warn(format!("{manifest}: {e}"));
            let mut p = Package::new(Ecosystem::Npm, dir_name, None);
            p.flag(flags::INFERRED_FROM_PATH);
            p.flag(flags::MALFORMED_METADATA);
            p
        }
        None => {
            let mut p = Package::new(Ecosystem::Npm, dir_name, None);
            p.flag(flags::INFERRED_FROM_PATH);
            p
        }
    };
    p.metadata_files.push(manifest.to_string());
    let nested = format!("{dir}/{NM}/");
    p.owned_files = files_under(view, dir)
        .into_iter()
        .filter(|e| !e.path.starts_with(&nested))
        .map(|e| e.path.clone())
        .collect();
    p
}
