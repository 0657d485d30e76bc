//! Ruby gems: `specifications/<name>-<version>.gemspec` files (by file name
//! only, nothing is evaluated), the matching `gems/<name>-<version>/`
//! directories, and `Gemfile.lock`.

use std::collections::BTreeSet;

use super::util::files_under;
use super::{flags, Analyzer, Ecosystem, Findings, Package, Provenance};
use crate::layer_fs::{split_path, FileEntry, LayerView};

/// Splits `rake-13.0.6-java` at the first `-` followed by a digit.
pub fn split_gem_name(stem: &str) -> Option<(&str, &str)> {
    let bytes = stem.as_bytes();
    (1..bytes.len())
        .find(|&i| bytes[i - 1] == b'-' && bytes[i].is_ascii_digit())
        .map(|i| (&stem[..i - 1], &stem[i..]))
        .filter(|(n, _)| !n.is_empty())
}

/// `specs:` entries of a Gemfile.lock (four-space indented `name (version)`).
pub fn parse_gemfile_lock(text: &str) -> Vec<(String, Option<String>)> {
    let mut out = Vec::new();
    let mut in_specs = false;
    for line in text.lines() {
        if !line.starts_with(' ') {
            in_specs = false;
            continue;
        }
        if line.trim() == "specs:" {
            in_specs = true;
            continue;
        }
        if !in_specs {
            continue;
        }
        let indent = line.len() - line.trim_start().len();
        if indent != 4 {
            continue;
        }
        let t = line.trim();
        match t.split_once(" (") {
            Some((name, rest)) => {
                let v = rest.trim_end_matches(')').trim();
                out.push((name.to_string(), Some(v.to_string()).filter(|v| !v.is_empty())));
            }
            None => out.push((t.to_string(), None)),
        }
    }
    out
}

fn gem_root_of_spec(spec_path: &str) -> Option<(&str, &str)> {
    let (dir, base) = split_path(spec_path);
    let stem = base.strip_suffix(".gemspec")?;
    let (parent, dname) = split_path(dir);
    (dname == "specifications").then_some((parent, stem))
}

pub struct RubyAnalyzer;

impl Analyzer for RubyAnalyzer {
    fn name(&self) -> &'static str {
        "ruby"
    }

    fn is_relevant(&self, entry: &FileEntry) -> bool {
        let p = entry.path.as_str();
        p.ends_with(".gemspec") || p.contains("/gems/") || p.ends_with("/gems")
            || entry.basename() == "Gemfile.lock" || p.contains("/specifications")
    }

    fn wants_content(&self, path: &str) -> bool {
        split_path(path).1 == "Gemfile.lock"
    }

    fn analyze(&self, view: &LayerView<'_>, out: &mut Findings) {
        let mut gem_dirs_with_spec = BTreeSet::new();
        let mut gem_dirs = Vec::new();
        for e in view.iter() {
            let base = e.basename();
            if !e.is_dir() && base.ends_with(".gemspec") {
                let Some(stem) = base.strip_suffix(".gemspec") else { continue };
                let Some((name, version)) = split_gem_name(stem) else {
                    out.warn(format!("{}: no version in file name", e.path));
                    continue;
                };
                let mut p = Package::new(Ecosystem::Gem, name, Some(version.to_string()))
                    .with_metadata(e.path.clone());
                if let Some((root, stem)) = gem_root_of_spec(&e.path) {
                    let gem_dir = format!("{root}/gems/{stem}");
                    p.owned_files = files_under(view, &gem_dir).into_iter().map(|f| f.path.clone()).collect();
                    gem_dirs_with_spec.insert(gem_dir);
                } else {
                    // A project's own gemspec declares a gem under development.
                    p.provenance = Provenance::Declared;
                }
                out.packages.push(p);
            } else if e.is_dir() && split_path(split_path(&e.path).0).1 == "gems" {
                gem_dirs.push(e.path.as_str());
            } else if base == "Gemfile.lock" {
                if let Some(text) = view.read_text(&e.path) {
                    out.packages.extend(parse_gemfile_lock(&text).into_iter().map(|(n, v)| {
                        Package::new(Ecosystem::Gem, n, v)
                            .with_provenance(Provenance::Declared)
                            .with_metadata(e.path.clone())
                    }));
                }
            }
        }
        // Installed gem directories whose specification is gone.
        for dir in gem_dirs {
            if gem_dirs_with_spec.contains(dir) {
                continue;
            }
            let (_, dname) = split_path(dir);
            let Some((name, version)) = split_gem_name(dname) else { continue };
            let files: Vec<String> = files_under(view, dir).into_iter().map(|f| f.path.clone()).collect();
            if files.is_empty() {
                continue;
            }
            let mut p = Package::new(Ecosystem::Gem, name, Some(version.to_string()));
            p.flag(flags::INFERRED_FROM_PATH);
            p.metadata_files.push(dir.to_string());
            p.owned_files = files;
            out.packages.push(p);
        }
    }
}
