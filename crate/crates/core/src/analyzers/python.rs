//! Python: installed distributions (`*.dist-info`, `*.egg-info`) found at
//! any depth, and declared requirements (`requirements*.txt`, `Pipfile`,
//! `Pipfile.lock`).

use std::collections::BTreeSet;

use super::util::{files_under, join_relative, strip_bom};
use super::{flags, Analyzer, Ecosystem, Findings, Package, Provenance};
use crate::layer_fs::{split_path, FileEntry, LayerView};

/// `Name`/`Version` from the header block of a METADATA or PKG-INFO file.
pub fn parse_metadata(text: &str) -> Option<(String, Option<String>)> {
    let mut name = None;
    let mut version = None;
    for line in strip_bom(text).lines() {
        if line.trim().is_empty() {
            break;
        }
        if let Some((k, v)) = line.split_once(':') {
            match k.trim().to_ascii_lowercase().as_str() {
                "name" if name.is_none() => name = Some(v.trim().to_string()),
                "version" if version.is_none() => version = Some(v.trim().to_string()),
                _ => {}
            }
        }
    }
    let name = name.filter(|n| !n.is_empty())?;
    Some((name, version.filter(|v| !v.is_empty())))
}

/// Paths from a RECORD file, relative to the directory holding the
/// dist-info directory.
pub fn parse_record(text: &str, base: &str) -> Vec<String> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(text.as_bytes());
    rdr.records()
        .filter_map(|r| r.ok())
        .filter_map(|r| r.get(0).map(str::to_string))
        .filter(|p| !p.is_empty())
        .filter_map(|p| join_relative(base, &p))
        .collect()
}

/// `<name>-<version>.dist-info` or `<name>-<version>[-pyX.Y].egg-info`.
pub fn split_dist_dir(dir_name: &str) -> Option<(String, Option<String>)> {
    let stem = dir_name
        .strip_suffix(".dist-info")
        .or_else(|| dir_name.strip_suffix(".egg-info"))?;
    let mut parts = stem.splitn(3, '-');
    let name = parts.next().filter(|n| !n.is_empty())?;
    let version = parts.next().map(str::to_string);
    Some((name.to_string(), version))
}

/// One requirement line: name and the version when pinned with `==`.
pub fn parse_requirement(line: &str) -> Option<(String, Option<String>)> {
    let line = line.split(" #").next().unwrap_or(line).trim();
    if line.is_empty() || line.starts_with('#') || line.starts_with('-') {
        return None;
    }
    if line.contains("://") && !line.contains(" @ ") && !line.contains('@') {
        return None;
    }
    let line = line.split(';').next().unwrap_or(line).trim();
    let name_end = line
        .find(|c: char| !(c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.')))
        .unwrap_or(line.len());
    let name = &line[..name_end];
    if name.is_empty() {
        return None;
    }
    let mut rest = line[name_end..].trim_start();
    if rest.starts_with('[') {
        rest = rest.split_once(']').map(|(_, r)| r.trim_start()).unwrap_or("");
    }
    let version = rest
        .strip_prefix("===")
        .or_else(|| rest.strip_prefix("=="))
        .map(|v| v.split(',').next().unwrap_or(v).trim())
        .filter(|v| !v.is_empty() && !v.contains('*'))
        .map(str::to_string);
    Some((name.to_string(), version))
}

fn pinned(spec: &str) -> Option<String> {
    let s = spec.trim();
    s.strip_prefix("===")
        .or_else(|| s.strip_prefix("=="))
        .map(|v| v.trim().to_string())
        .filter(|v| !v.is_empty() && !v.contains('*') && !v.contains(','))
}

/// `[packages]` and `[dev-packages]` of a Pipfile.
pub fn parse_pipfile(text: &str) -> Result<Vec<(String, Option<String>)>, String> {
    let doc: toml::Table = text.parse().map_err(|e: toml::de::Error| e.to_string())?;
    let mut out = Vec::new();
    for section in ["packages", "dev-packages"] {
        let Some(tbl) = doc.get(section).and_then(|v| v.as_table()) else { continue };
        for (name, spec) in tbl {
            let version = match spec {
                toml::Value::String(s) => pinned(s),
                toml::Value::Table(t) => t.get("version").and_then(|v| v.as_str()).and_then(pinned),
                _ => None,
            };
            out.push((name.clone(), version));
        }
    }
    Ok(out)
}

/// `default` and `develop` sections of a Pipfile.lock.
pub fn parse_pipfile_lock(text: &str) -> Result<Vec<(String, Option<String>)>, String> {
    let doc: serde_json::Value = serde_json::from_str(strip_bom(text)).map_err(|e| e.to_string())?;
    let mut out = Vec::new();
    for section in ["default", "develop"] {
        let Some(obj) = doc.get(section).and_then(|v| v.as_object()) else { continue };
        for (name, spec) in obj {
            let version = spec.get("version").and_then(|v| v.as_str()).and_then(pinned);
            out.push((name.clone(), version));
        }
    }
    Ok(out)
}

fn is_requirements(base: &str) -> bool {
    base.starts_with("requirements") && base.ends_with(".txt")
}

fn dist_dir_of(path: &str) -> Option<&str> {
    let mut end = 0;
    for (i, c) in path.split('/').enumerate() {
        if i > 0 {
            end += 1;
        }
        end += c.len();
        if c.ends_with(".dist-info") || c.ends_with(".egg-info") {
            return Some(&path[..end]);
        }
    }
    None
}

pub struct PythonAnalyzer;

impl Analyzer for PythonAnalyzer {
    fn name(&self) -> &'static str {
        "python"
    }

    fn is_relevant(&self, entry: &FileEntry) -> bool {
        let p = entry.path.as_str();
        let base = entry.basename();
        p.contains("-packages/") || p.ends_with("-packages") || dist_dir_of(p).is_some()
            || is_requirements(base) || base == "Pipfile" || base == "Pipfile.lock"
    }

    fn wants_content(&self, path: &str) -> bool {
        let (_, base) = split_path(path);
        if let Some(dir) = dist_dir_of(path) {
            return path == dir
                || matches!(base, "METADATA" | "RECORD" | "PKG-INFO" | "installed-files.txt");
        }
        is_requirements(base) || base == "Pipfile" || base == "Pipfile.lock"
    }

    fn analyze(&self, view: &LayerView<'_>, out: &mut Findings) {
        let mut dist_dirs: BTreeSet<&str> = BTreeSet::new();
        let mut declared_files = Vec::new();
        for e in view.iter() {
            if let Some(d) = dist_dir_of(&e.path) {
                dist_dirs.insert(d);
                continue;
            }
            let base = e.basename();
            if !e.is_dir() && (is_requirements(base) || base == "Pipfile" || base == "Pipfile.lock") {
                declared_files.push(e.path.as_str());
            }
        }
        for dir in dist_dirs {
            if let Some(p) = installed(view, dir, out) {
                out.packages.push(p);
            }
        }
        for path in declared_files {
            let Some(text) = view.read_text(path) else { continue };
            let (_, base) = split_path(path);
            let entries = if base == "Pipfile" {
                parse_pipfile(&text)
            } else if base == "Pipfile.lock" {
                parse_pipfile_lock(&text)
            } else {
                Ok(text.lines().filter_map(parse_requirement).collect())
            };
            match entries {
                Ok(list) => out.packages.extend(list.into_iter().map(|(n, v)| {
                    Package::new(Ecosystem::Pypi, n, v)
                        .with_provenance(Provenance::Declared)
                        .with_metadata(path)
                })),
                Err(e) => out.warn(format!("{path}: {e}")),
            }
        }
    }
}

fn installed(view: &LayerView<'_>, dir: &str, out: &mut Findings) -> Option<Package> {
    let (site, dir_name) = split_path(dir);
    let entry = view.get(dir);
    let is_file = entry.map(|e| !e.is_dir()).unwrap_or(false);
    let meta_path = if is_file {
        dir.to_string()
    } else if dir.ends_with(".dist-info") {
        format!("{dir}/METADATA")
    } else {
        format!("{dir}/PKG-INFO")
    };
    let parsed = view.read_text(&meta_path).and_then(|t| parse_metadata(&t));
    let mut p = match parsed {
        Some((name, version)) => Package::new(Ecosystem::Pypi, name, version),
        None => {
            let (name, version) = split_dist_dir(dir_name)?;
            if view.contains(&meta_path) {
                out.warn(format!("{meta_path}: unreadable, using directory name"));
            }
            let mut p = Package::new(Ecosystem::Pypi, name, version);
            p.flag(flags::INFERRED_FROM_PATH);
            p
        }
    };
    if is_file {
        p.metadata_files.push(dir.to_string());
        return Some(p);
    }
    let inside: Vec<String> = files_under(view, dir).into_iter().map(|e| e.path.clone()).collect();
    p.metadata_files.extend(inside.iter().cloned());
    if p.metadata_files.is_empty() {
        p.metadata_files.push(dir.to_string());
    }
    if let Some(record) = view.read_text(&format!("{dir}/RECORD")) {
        p.owned_files = parse_record(&record, site);
    } else if let Some(list) = view.read_text(&format!("{dir}/installed-files.txt")) {
        p.owned_files = list
            .lines()
            .filter(|l| !l.trim().is_empty())
            .filter_map(|l| join_relative(dir, l.trim()))
            .collect();
    }
    p.owned_files.extend(inside);
    Some(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analyzers::tests_support::ViewFixture;

    const SITE: &str = "/usr/local/lib/python3.11/site-packages";

    #[test]
    fn requirement_lines() {
        assert_eq!(parse_requirement("requests==2.31.0"), Some(("requests".into(), Some("2.31.0".into()))));
        assert_eq!(parse_requirement("Flask>=2.0"), Some(("Flask".into(), None)));
        assert_eq!(parse_requirement("uvicorn[standard]==0.23.2 ; python_version>'3.8'"), Some(("uvicorn".into(), Some("0.23.2".into()))));
        assert_eq!(parse_requirement("# comment"), None);
        assert_eq!(parse_requirement("-r other.txt"), None);
        assert_eq!(parse_requirement("six"), Some(("six".into(), None)));
        assert_eq!(parse_requirement("pkg @ https://h/pkg.whl"), Some(("pkg".into(), None)));
    }

    #[test]
    fn dist_info_with_record() {
        let mut files: Vec<(String, String)> = vec![
            (format!("{SITE}/flask-2.3.2.dist-info/METADATA"), "Metadata-Version: 2.1\nName: Flask\nVersion: 2.3.2\n\nbody".into()),
        ];
        let mut record = String::new();
        for i in 0..37 {
            let p = format!("flask/mod{i}.py");
            record.push_str(&format!("{p},sha256=x,10\n"));
            files.push((format!("{SITE}/{p}"), "x".into()));
        }
        record.push_str("../../../bin/flask,sha256=y,5\n");
        files.push(("/usr/local/bin/flask".into(), "x".into()));
        record.push_str("flask-2.3.2.dist-info/METADATA,,\nflask-2.3.2.dist-info/RECORD,,\n");
        files.push((format!("{SITE}/flask-2.3.2.dist-info/RECORD"), record));
        let refs: Vec<(&str, &str)> = files.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
        let fx = ViewFixture::new(&refs);
        let mut f = Findings::default();
        PythonAnalyzer.analyze(&fx.view(), &mut f);
        assert_eq!(f.packages.len(), 1);
        let p = &f.packages[0];
        assert_eq!((p.name.as_str(), p.version.as_deref()), ("Flask", Some("2.3.2")));
        let mut owned = p.owned_files.clone();
        owned.sort();
        owned.dedup();
        assert_eq!(owned.len(), 40);
        assert!(owned.contains(&"/usr/local/bin/flask".to_string()));
    }

    #[test]
    fn requirements_declared() {
        let fx = ViewFixture::new(&[("/app/requirements.txt", "requests==2.31.0\n")]);
        let mut f = Findings::default();
        PythonAnalyzer.analyze(&fx.view(), &mut f);
        assert_eq!(f.packages.len(), 1);
        let p = &f.packages[0];
        assert_eq!((p.name.as_str(), p.version.as_deref()), ("requests", Some("2.31.0")));
        assert_eq!(p.provenance, Provenance::Declared);
    }

    #[test]
    fn deleted_metadata_inferred_from_dir() {
        let fx = ViewFixture::new(&[(&format!("{SITE}/flask-2.3.2.dist-info/RECORD"), "flask/__init__.py,,\n")]);
        let mut f = Findings::default();
        PythonAnalyzer.analyze(&fx.view(), &mut f);
        let p = &f.packages[0];
        assert_eq!((p.name.as_str(), p.version.as_deref()), ("flask", Some("2.3.2")));
        assert!(p.has_flag(flags::INFERRED_FROM_PATH));

        // Only the empty directory left.
        let fx = ViewFixture::new(&[("/opt/venv/lib/python3.9/dist-packages/six-1.16.0.dist-info/", "")]);
        let mut f = Findings::default();
        PythonAnalyzer.analyze(&fx.view(), &mut f);
        assert_eq!(f.packages[0].name, "six");
    }

    #[test]
    fn egg_info_and_pipfiles() {
        let fx = ViewFixture::new(&[
            ("/srv/lib/python3/site-packages/legacy-0.9-py3.9.egg-info/PKG-INFO", "Name: legacy\nVersion: 0.9\n"),
            ("/srv/lib/python3/site-packages/single.egg-info", "Name: single\nVersion: 1.0\n"),
            ("/app/Pipfile", "[packages]\nrequests = \"==2.31.0\"\nflask = \"*\"\n[dev-packages]\npytest = {version = \"==7.4.0\"}\n"),
            ("/app/Pipfile.lock", r#"{"default": {"requests": {"version": "==2.31.0"}}, "develop": {}}"#),
        ]);
        let mut f = Findings::default();
        PythonAnalyzer.analyze(&fx.view(), &mut f);
        let mut got: Vec<_> = f
            .packages
            .iter()
            .map(|p| (p.name.as_str(), p.version.as_deref(), p.provenance))
            .collect();
        got.sort();
        assert_eq!(
            got,
            vec![
                ("flask", None, Provenance::Declared),
                ("legacy", Some("0.9"), Provenance::Installed),
                ("pytest", Some("7.4.0"), Provenance::Declared),
                ("requests", Some("2.31.0"), Provenance::Declared),
                ("requests", Some("2.31.0"), Provenance::Declared),
                ("single", Some("1.0"), Provenance::Installed),
            ]
        );
    }

    #[test]
    fn parsers_are_total() {
        for s in ["", "\u{feff}", "===", "[", "{", "a==", ",,,\n\"", "Name:\n"] {
            let _ = parse_metadata(s);
            let _ = parse_record(s, "/x");
            let _ = parse_requirement(s);
            let _ = parse_pipfile(s);
            let _ = parse_pipfile_lock(s);
        }
    }
}
