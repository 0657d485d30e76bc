//! Debian package database: `/var/lib/dpkg/status`, the per-package
//! `status.d/` files used by distroless images, and `info/*.list` file
//! lists.

use super::util::{has_component, parent};
use super::{flags, Analyzer, Ecosystem, Findings, Package};
use crate::layer_fs::{FileEntry, LayerView};

pub const STATUS_PATH: &str = "/var/lib/dpkg/status";
pub const STATUS_DIR: &str = "/var/lib/dpkg/status.d";
pub const INFO_DIR: &str = "/var/lib/dpkg/info";

/// One stanza, fields in file order. Multi-line values keep their
/// continuation lines (with the leading space) after a `\n`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Stanza {
    pub fields: Vec<(String, String)>,
}

impl Stanza {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.fields
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(key))
            .map(|(_, v)| v.as_str())
    }

    /// Third word of `Status`. Entries without a `Status` field (the
    /// `status.d` layout) count as installed.
    pub fn is_installed(&self) -> bool {
        match self.get("Status") {
            Some(s) => s.split_whitespace().nth(2) == Some("installed"),
            None => true,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct StatusFile {
    pub stanzas: Vec<Stanza>,
    /// Stanzas skipped because they had no `Package` field or contained
    /// lines that are neither fields nor continuations.
    pub malformed: usize,
}

pub fn parse_status(text: &str) -> StatusFile {
    let mut out = StatusFile::default();
    let mut current = Stanza::default();
    let mut broken = false;

    let finish = |stanza: &mut Stanza, broken: &mut bool, out: &mut StatusFile| {
        if !stanza.fields.is_empty() || *broken {
            if *broken || stanza.get("Package").map(str::trim).unwrap_or_default().is_empty() {
                out.malformed += 1;
            } else {
                out.stanzas.push(std::mem::take(stanza));
            }
        }
        *stanza = Stanza::default();
        *broken = false;
    };

    for line in text.lines() {
        if line.trim().is_empty() {
            finish(&mut current, &mut broken, &mut out);
            continue;
        }
        if line.starts_with([' ', '\t']) {
            match current.fields.last_mut() {
                Some((_, v)) => {
                    v.push('\n');
                    v.push_str(line);
                }
                None => broken = true,
            }
            continue;
        }
        match line.split_once(':') {
            Some((k, v)) if !k.is_empty() && !k.contains(char::is_whitespace) => {
                current.fields.push((k.to_string(), v.trim().to_string()));
            }
            _ => broken = true,
        }
    }
    finish(&mut current, &mut broken, &mut out);
    out
}

/// Writes stanzas back in the database's own format.
pub fn serialize_status(stanzas: &[Stanza]) -> String {
    let mut s = String::new();
    for st in stanzas {
        for (k, v) in &st.fields {
            s.push_str(k);
            s.push(':');
            if !v.is_empty() && !v.starts_with('\n') {
                s.push(' ');
            }
            s.push_str(v);
            s.push('\n');
        }
        s.push('\n');
    }
    s
}

fn split_epoch(version: &str) -> (Option<String>, &str) {
    match version.split_once(':') {
        Some((e, rest)) if !e.is_empty() && e.bytes().all(|b| b.is_ascii_digit()) => {
            (Some(e.to_string()), rest)
        }
        _ => (None, version),
    }
}

/// Lines of an `info/<pkg>.list` or `.md5sums` file as absolute paths.
fn list_paths(text: &str, md5sums: bool) -> Vec<String> {
    text.lines()
        .filter_map(|l| {
            let p = if md5sums {
                l.split_once(char::is_whitespace).map(|(_, p)| p.trim())?
            } else {
                l.trim()
            };
            if p.is_empty() || p == "/." {
                return None;
            }
            Some(if p.starts_with('/') { p.to_string() } else { format!("/{p}") })
        })
        .collect()
}

/// Installed packages of one status file. With a view, owned files come
/// from `info/<name>.list` or `info/<name>:<arch>.list`.
pub fn packages_from_status(status: &StatusFile, source: &str, view: Option<&LayerView<'_>>) -> Vec<Package> {
    let info_dir = if source.starts_with(STATUS_DIR) {
        INFO_DIR.to_string()
    } else {
        format!("{}/info", parent(source))
    };
    let mut out = Vec::new();
    for st in status.stanzas.iter().filter(|s| s.is_installed()) {
        let name = st.get("Package").unwrap_or_default().trim();
        let arch = st.get("Architecture").map(str::trim).filter(|a| !a.is_empty());
        let (epoch, version) = match st.get("Version").map(str::trim) {
            Some(v) => {
                let (e, _) = split_epoch(v);
                (e, Some(v.to_string()))
            }
            None => (None, None),
        };
        let mut p = Package::new(Ecosystem::Deb, name, version).with_metadata(source);
        p.arch = arch.map(str::to_string);
        p.epoch = epoch;
        if let Some(view) = view {
            let mut candidates = vec![format!("{info_dir}/{name}")];
            if let Some(a) = arch {
                candidates.insert(0, format!("{info_dir}/{name}:{a}"));
            }
            for base in candidates {
                let list = format!("{base}.list");
                if let Some(text) = view.read_text(&list) {
                    p.owned_files.extend(list_paths(&text, false));
                    p.metadata_files.push(list);
                    break;
                } else if view.contains(&list) {
                    p.metadata_files.push(list);
                    break;
                }
            }
            if p.owned_files.is_empty() && source.starts_with(STATUS_DIR) {
                // Distroless images ship md5sums next to the stanza.
                let stem = source.trim_end_matches(".md5sums");
                for sums in [format!("{stem}.md5sums"), format!("{STATUS_DIR}/{name}.md5sums")] {
                    if let Some(text) = view.read_text(&sums) {
                        p.owned_files.extend(list_paths(&text, true));
                        p.metadata_files.push(sums);
                        break;
                    }
                }
            }
            for ext in ["md5sums", "conffiles"] {
                for base in [format!("{info_dir}/{name}"), format!("{info_dir}/{name}:{}", arch.unwrap_or(""))] {
                    let path = format!("{base}.{ext}");
                    if view.contains(&path) {
                        p.metadata_files.push(path);
                    }
                }
            }
        }
        out.push(p);
    }
    out
}

pub struct DpkgAnalyzer;

fn is_status_d_entry(path: &str) -> bool {
    path.starts_with(STATUS_DIR) && path.len() > STATUS_DIR.len() + 1 && !path.ends_with(".md5sums")
}

impl Analyzer for DpkgAnalyzer {
    fn name(&self) -> &'static str {
        "dpkg"
    }

    fn is_relevant(&self, entry: &FileEntry) -> bool {
        entry.path.starts_with("/var/lib/dpkg") || (entry.path == "/var/lib" || entry.path == "/var")
    }

    fn wants_content(&self, path: &str) -> bool {
        path == STATUS_PATH
            || path.starts_with(STATUS_DIR)
            || (path.starts_with(INFO_DIR) && path.ends_with(".list"))
            || (has_component(path, "dpkg") && path.ends_with("/status"))
    }

    fn analyze(&self, view: &LayerView<'_>, out: &mut Findings) {
        let mut sources: Vec<String> = Vec::new();
        if view.lookup(STATUS_PATH).is_some() {
            sources.push(STATUS_PATH.to_string());
        }
        sources.extend(
            view.under(STATUS_DIR)
                .filter(|e| !e.is_dir() && is_status_d_entry(&e.path))
                .map(|e| e.path.clone()),
        );
        for source in sources {
            let Some(text) = view.read_text(&source) else {
                out.warn(format!("{source}: contents unavailable"));
                continue;
            };
            let status = parse_status(&text);
            if status.malformed > 0 {
                out.warn(format!("{source}: skipped {} malformed stanza(s)", status.malformed));
            }
            let mut pkgs = packages_from_status(&status, &source, Some(view));
            for p in &mut pkgs {
                if p.version.is_none() {
                    p.flag(flags::VERSION_ABSENT);
                }
            }
            out.packages.extend(pkgs);
        }
    }
}
