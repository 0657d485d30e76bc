//! PHP composer: `composer.lock`, `vendor/composer/installed.json` and
//! `composer.json`.

use serde_json::Value;

use super::util::{files_under, parent, strip_bom};
use super::{Analyzer, Ecosystem, Findings, Package, Provenance};
use crate::layer_fs::{split_path, FileEntry, LayerView};

const INSTALLED_JSON: &str = "vendor/composer/installed.json";

fn json(text: &str) -> Result<Value, String> {
    serde_json::from_str(strip_bom(text)).map_err(|e| e.to_string())
}

fn entries(list: Option<&Value>) -> Vec<(String, Option<String>)> {
    list.and_then(Value::as_array)
        .map(|a| {
            a.iter()
                .filter_map(|p| {
                    let name = p.get("name")?.as_str()?.to_string();
                    let version = p.get("version").and_then(Value::as_str).map(str::to_string);
                    Some((name, version))
                })
                .collect()
        })
        .unwrap_or_default()
}

/// `packages` and `packages-dev` of a composer.lock.
pub fn parse_composer_lock(text: &str) -> Result<Vec<(String, Option<String>)>, String> {
    let doc = json(text)?;
    let mut out = entries(doc.get("packages"));
    out.extend(entries(doc.get("packages-dev")));
    Ok(out)
}

/// `installed.json`: a bare array (composer 1) or `{"packages": [...]}`.
pub fn parse_installed_json(text: &str) -> Result<Vec<(String, Option<String>)>, String> {
    let doc = json(text)?;
    if doc.is_array() {
        return Ok(entries(Some(&doc)));
    }
    Ok(entries(doc.get("packages")))
}

/// `require`/`require-dev` of a composer.json, minus platform packages.
pub fn parse_composer_json(text: &str) -> Result<Vec<(String, Option<String>)>, String> {
    let doc = json(text)?;
    let mut out = Vec::new();
    for section in ["require", "require-dev"] {
        let Some(obj) = doc.get(section).and_then(Value::as_object) else { continue };
        for (name, constraint) in obj {
            if !name.contains('/') {
                continue; // php, ext-*, lib-*
            }
            let c = constraint.as_str().unwrap_or_default().trim();
            let exact = c
                .trim_start_matches('v')
                .split('.')
                .all(|p| !p.is_empty() && p.bytes().all(|b| b.is_ascii_digit()));
            out.push((name.clone(), exact.then(|| c.to_string())));
        }
    }
    Ok(out)
}

pub struct PhpAnalyzer;

impl Analyzer for PhpAnalyzer {
    fn name(&self) -> &'static str {
        "php"
    }

    fn is_relevant(&self, entry: &FileEntry) -> bool {
        let p = entry.path.as_str();
        p.contains("/vendor/") || p.ends_with("/vendor")
            || matches!(entry.basename(), "composer.json" | "composer.lock")
    }

    fn wants_content(&self, path: &str) -> bool {
        matches!(split_path(path).1, "composer.json" | "composer.lock" | "installed.json")
            && (path.ends_with(INSTALLED_JSON) || !path.ends_with("installed.json"))
    }

    fn analyze(&self, view: &LayerView<'_>, out: &mut Findings) {
        for e in view.iter().filter(|e| !e.is_dir()) {
            let base = e.basename();
            let (list, vendor, provenance) = if e.path.ends_with(&format!("/{INSTALLED_JSON}")) {
                let vendor = parent(parent(&e.path)).to_string();
                let Some(text) = view.read_text(&e.path) else { continue };
                (parse_installed_json(&text), vendor, Provenance::Installed)
            } else if base == "composer.lock" && !e.path.contains("/vendor/") {
                let vendor = format!("{}/vendor", parent(&e.path));
                let Some(text) = view.read_text(&e.path) else { continue };
                let prov = if view.contains(&vendor) { Provenance::Installed } else { Provenance::Declared };
                (parse_composer_lock(&text), vendor, prov)
            } else if base == "composer.json" && !e.path.contains("/vendor/") {
                let Some(text) = view.read_text(&e.path) else { continue };
                (parse_composer_json(&text), String::new(), Provenance::Declared)
            } else {
                continue;
            };
            let list = match list {
                Ok(l) => l,
                Err(err) => {
                    out.warn(format!("{}: {err}", e.path));
                    continue;
                }
            };
            for (name, version) in list {
                let mut p = Package::new(Ecosystem::Composer, name.clone(), version)
                    .with_provenance(provenance)
                    .with_metadata(e.path.clone());
                if !vendor.is_empty() {
                    let dir = format!("{vendor}/{}", name.to_ascii_lowercase());
                    p.owned_files = files_under(view, &dir).into_iter().map(|f| f.path.clone()).collect();
                    if p.owned_files.is_empty() && provenance == Provenance::Installed && !view.contains(&dir) {
                        p.provenance = Provenance::Declared;
                    }
                }
                out.packages.push(p);
            }
        }
    }
}
