//! Package analyzers and the layer-by-layer driver.
//!
//! Each [`Analyzer`] reads one family of metadata (an OS package database,
//! a language's install records or lockfiles, Go build information) from a
//! [`LayerView`] and reports [`Package`]s. [`analyze_layers`] runs every
//! analyzer against the cumulative filesystem after each layer, rerunning
//! an analyzer only when the layer touched a path it cares about, and
//! merges the per-layer results. Packages that disappear from the final
//! layer are kept and marked obscured.

pub mod apk;
pub mod dpkg;
pub mod golang;
pub mod node;
pub mod os;
pub mod php;
pub mod python;
pub mod rpm;
pub mod ruby;
#[cfg(test)]
pub(crate) mod tests_support;
pub mod version;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use log::debug;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::layer_fs::{FileEntry, FileHistory, LayerView, Replay, RetainPolicy};
use crate::layer_fs::ContentStore;

pub use os::{detect_os, OsRelease};
pub use version::compare_versions;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ecosystem {
    Deb,
    Apk,
    Rpm,
    Pypi,
    Npm,
    Gem,
    Composer,
    Golang,
    External,
}

impl Ecosystem {
    pub fn as_str(self) -> &'static str {
        match self {
            Ecosystem::Deb => "deb",
            Ecosystem::Apk => "apk",
            Ecosystem::Rpm => "rpm",
            Ecosystem::Pypi => "pypi",
            Ecosystem::Npm => "npm",
            Ecosystem::Gem => "gem",
            Ecosystem::Composer => "composer",
            Ecosystem::Golang => "golang",
            Ecosystem::External => "external",
        }
    }

    pub fn is_os(self) -> bool {
        matches!(self, Ecosystem::Deb | Ecosystem::Apk | Ecosystem::Rpm)
    }
}

impl fmt::Display for Ecosystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Where a package record came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    /// An install record (package database, dist-info, node_modules...).
    Installed,
    /// Build information embedded in a binary.
    Binary,
    /// A manifest or lockfile entry; nothing proves it is on disk.
    Declared,
    /// Downloaded by a build instruction.
    External,
}

impl Provenance {
    fn strength(self) -> u8 {
        match self {
            Provenance::Installed => 3,
            Provenance::Binary => 2,
            Provenance::External => 1,
            Provenance::Declared => 0,
        }
    }
}

/// Marks attached to a package record.
pub mod flags {
    /// Name and version came from a directory or file name because the
    /// metadata file was missing or unreadable.
    pub const INFERRED_FROM_PATH: &str = "inferred-from-path";
    pub const VERSION_ABSENT: &str = "version-absent";
    /// The database exists but its format is not supported.
    pub const UNPARSED: &str = "unparsed";
    /// A Go binary whose build information predates the inline format.
    pub const UNREADABLE_BUILDINFO: &str = "unreadable-buildinfo";
    pub const MALFORMED_METADATA: &str = "malformed-metadata";
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Package {
    pub ecosystem: Ecosystem,
    pub name: String,
    pub version: Option<String>,
    /// First layer whose filesystem yields this package.
    pub source_layer: usize,
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arch: Option<String>,
    /// RPM epoch, or the `N:` prefix of a Debian version.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epoch: Option<String>,
    pub metadata_files: Vec<String>,
    pub owned_files: Vec<String>,
    pub obscured: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub download_location: Option<String>,
}

impl Package {
    pub fn new(ecosystem: Ecosystem, name: impl Into<String>, version: Option<String>) -> Self {
        let version = version.filter(|v| !v.trim().is_empty());
        let mut p = Package {
            ecosystem,
            name: name.into(),
            version,
            source_layer: 0,
            provenance: Provenance::Installed,
            arch: None,
            epoch: None,
            metadata_files: Vec::new(),
            owned_files: Vec::new(),
            obscured: false,
            flags: Vec::new(),
            download_location: None,
        };
        if p.version.is_none() {
            p.flag(flags::VERSION_ABSENT);
        }
        p
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = provenance;
        self
    }

    pub fn with_metadata(mut self, path: impl Into<String>) -> Self {
        self.metadata_files.push(path.into());
        self
    }

    pub fn flag(&mut self, flag: &str) {
        if !self.flags.iter().any(|f| f == flag) {
            self.flags.push(flag.to_string());
        }
    }

    pub fn has_flag(&self, flag: &str) -> bool {
        self.flags.iter().any(|f| f == flag)
    }

    pub fn identity(&self) -> PackageId {
        PackageId {
            ecosystem: self.ecosystem,
            name: normalize_name(self.ecosystem, &self.name),
            version: self.version.clone(),
        }
    }
}

/// Deduplication key: ecosystem, normalized name, version.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct PackageId {
    pub ecosystem: Ecosystem,
    pub name: String,
    pub version: Option<String>,
}

impl fmt::Display for PackageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.version {
            Some(v) => write!(f, "{}:{}@{}", self.ecosystem, self.name, v),
            None => write!(f, "{}:{}", self.ecosystem, self.name),
        }
    }
}

/// Name normalization used for identity. Python names follow the index's
/// rule (case-insensitive, runs of `-_.` equal); composer names are
/// case-insensitive.
pub fn normalize_name(ecosystem: Ecosystem, name: &str) -> String {
    match ecosystem {
        Ecosystem::Pypi => {
            let mut out = String::with_capacity(name.len());
            let mut sep = false;
            for c in name.trim().chars() {
                if matches!(c, '-' | '_' | '.') {
                    sep = true;
                } else {
                    if sep && !out.is_empty() {
                        out.push('-');
                    }
                    sep = false;
                    out.push(c.to_ascii_lowercase());
                }
            }
            out
        }
        Ecosystem::Composer => name.trim().to_ascii_lowercase(),
        _ => name.trim().to_string(),
    }
}

/// What one analyzer run produced.
#[derive(Clone, Debug, Default)]
pub struct Findings {
    pub packages: Vec<Package>,
    pub os: Option<OsRelease>,
    pub warnings: Vec<String>,
}

impl Findings {
    pub fn warn(&mut self, msg: impl Into<String>) {
        let msg = msg.into();
        debug!("{msg}");
        self.warnings.push(msg);
    }
}

pub trait Analyzer: Send + Sync {
    fn name(&self) -> &'static str;

    /// Whether a change to `entry` can alter this analyzer's output.
    fn is_relevant(&self, entry: &FileEntry) -> bool;

    /// Whether the contents of `path` must be kept during extraction.
    fn wants_content(&self, path: &str) -> bool;

    /// Whether executables should be searched for Go build information.
    fn scans_executables(&self) -> bool {
        false
    }

    fn analyze(&self, view: &LayerView<'_>, out: &mut Findings);
}

/// Every built-in analyzer, OS detection first.
pub fn default_analyzers() -> Vec<Box<dyn Analyzer>> {
    vec![
        Box::new(os::OsAnalyzer),
        Box::new(dpkg::DpkgAnalyzer),
        Box::new(apk::ApkAnalyzer),
        Box::new(rpm::RpmAnalyzer),
        Box::new(python::PythonAnalyzer),
        Box::new(node::NodeAnalyzer),
        Box::new(ruby::RubyAnalyzer),
        Box::new(php::PhpAnalyzer),
        Box::new(golang::GoAnalyzer),
    ]
}

/// Largest file whose contents are kept for analysis.
pub const MAX_RETAINED_FILE: u64 = 256 << 20;

/// Retention policy derived from a set of analyzers.
pub struct AnalyzerRetain<'a> {
    pub analyzers: &'a [Box<dyn Analyzer>],
}

impl RetainPolicy for AnalyzerRetain<'_> {
    fn keep_content(&self, path: &str, size: u64) -> bool {
        size <= MAX_RETAINED_FILE && self.analyzers.iter().any(|a| a.wants_content(path))
    }

    fn scan_executables(&self) -> bool {
        self.analyzers.iter().any(|a| a.scans_executables())
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct LayerReport {
    pub layer: usize,
    pub os: Option<OsRelease>,
    /// Packages visible in the filesystem after this layer.
    pub packages: Vec<Package>,
    /// Analyzers rerun because this layer touched their paths.
    pub rerun: Vec<&'static str>,
    pub warnings: Vec<String>,
}

impl LayerReport {
    pub fn find(&self, ecosystem: Ecosystem, name: &str) -> impl Iterator<Item = &Package> {
        let key = normalize_name(ecosystem, name);
        self.packages
            .iter()
            .filter(move |p| p.ecosystem == ecosystem && normalize_name(ecosystem, &p.name) == key)
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct Analysis {
    pub reports: Vec<LayerReport>,
    /// Every package seen in any layer, deduplicated by identity.
    pub packages: Vec<Package>,
    /// The most recent OS detection.
    pub os: Option<OsRelease>,
    pub warnings: Vec<String>,
}

impl Analysis {
    pub fn final_report(&self) -> Option<&LayerReport> {
        self.reports.last()
    }

    pub fn obscured(&self) -> impl Iterator<Item = &Package> {
        self.packages.iter().filter(|p| p.obscured)
    }
}

/// Runs `analyzers` against every layer of `history` and merges the results.
pub fn analyze_layers(
    history: &FileHistory,
    store: &ContentStore,
    analyzers: &[Box<dyn Analyzer>],
) -> Analysis {
    let mut state = BTreeMap::new();
    let mut replay = Replay::new(history);
    let mut cached: Vec<Findings> = vec![Findings::default(); analyzers.len()];
    let mut reports = Vec::with_capacity(history.layer_count());
    let mut all_warnings = Vec::new();

    for layer in 0..history.layer_count() {
        replay.apply(layer, &mut state);
        let view = LayerView::new(layer, &state, store);
        let events = history.layer_events(layer);
        let dirty: Vec<usize> = (0..analyzers.len())
            .filter(|&i| events.iter().any(|ev| analyzers[i].is_relevant(&ev.entry)))
            .collect();
        let fresh: Vec<(usize, Findings)> = dirty
            .par_iter()
            .map(|&i| {
                let mut f = Findings::default();
                analyzers[i].analyze(&view, &mut f);
                (i, f)
            })
            .collect();
        let mut warnings = Vec::new();
        let mut rerun = Vec::new();
        for (i, f) in fresh {
            rerun.push(analyzers[i].name());
            warnings.extend(f.warnings.iter().map(|w| format!("layer {layer}: {w}")));
            cached[i] = f;
        }
        let os = cached.iter().find_map(|f| f.os.clone());
        let packages = settle(&view, cached.iter().flat_map(|f| f.packages.iter().cloned()));
        all_warnings.extend(warnings.iter().cloned());
        reports.push(LayerReport {
            layer,
            os,
            packages,
            rerun,
            warnings,
        });
    }
    merge(reports, all_warnings)
}

/// Runs the analyzers once against a single filesystem state.
pub fn analyze_view(view: &LayerView<'_>, analyzers: &[Box<dyn Analyzer>]) -> LayerReport {
    let fresh: Vec<Findings> = analyzers
        .par_iter()
        .map(|a| {
            let mut f = Findings::default();
            a.analyze(view, &mut f);
            f
        })
        .collect();
    let os = fresh.iter().find_map(|f| f.os.clone());
    let warnings = fresh.iter().flat_map(|f| f.warnings.iter().cloned()).collect();
    let packages = settle(view, fresh.into_iter().flat_map(|f| f.packages));
    LayerReport {
        layer: view.layer,
        os,
        packages,
        rerun: analyzers.iter().map(|a| a.name()).collect(),
        warnings,
    }
}

/// Canonicalizes file lists against `view`, collapses duplicate identities
/// and makes owned files disjoint within each ecosystem.
fn settle(view: &LayerView<'_>, packages: impl Iterator<Item = Package>) -> Vec<Package> {
    let mut by_id: BTreeMap<PackageId, Package> = BTreeMap::new();
    for mut p in packages {
        p.source_layer = view.layer;
        p.owned_files = existing_files(view, &p.owned_files);
        p.metadata_files = canonical_paths(view, &p.metadata_files);
        match by_id.get_mut(&p.identity()) {
            Some(existing) => absorb(existing, p),
            None => {
                by_id.insert(p.identity(), p);
            }
        }
    }
    let mut claimed: BTreeMap<Ecosystem, BTreeSet<String>> = BTreeMap::new();
    let mut out: Vec<Package> = by_id.into_values().collect();
    // Installed records claim files before declared ones.
    let mut order: Vec<usize> = (0..out.len()).collect();
    order.sort_by_key(|&i| std::cmp::Reverse(out[i].provenance.strength()));
    for i in order {
        let seen = claimed.entry(out[i].ecosystem).or_default();
        out[i].owned_files.retain(|f| seen.insert(f.clone()));
    }
    out
}

fn absorb(into: &mut Package, other: Package) {
    if other.provenance.strength() > into.provenance.strength() {
        into.provenance = other.provenance;
        into.name = other.name;
        into.flags.retain(|f| f != flags::INFERRED_FROM_PATH);
    }
    for f in other.flags {
        if f != flags::INFERRED_FROM_PATH || into.has_flag(&f) {
            into.flag(&f);
        }
    }
    union_into(&mut into.owned_files, other.owned_files);
    union_into(&mut into.metadata_files, other.metadata_files);
    into.arch = into.arch.take().or(other.arch);
    into.epoch = into.epoch.take().or(other.epoch);
    into.download_location = into.download_location.take().or(other.download_location);
}

fn union_into(into: &mut Vec<String>, other: Vec<String>) {
    into.extend(other);
    into.sort();
    into.dedup();
}

/// Paths resolved through symlinked parent directories, keeping only
/// non-directory entries that exist.
fn existing_files(view: &LayerView<'_>, paths: &[String]) -> Vec<String> {
    let mut out: Vec<String> = paths
        .iter()
        .filter_map(|p| {
            let e = match view.get(p) {
                Some(e) => e,
                None => view.get(&view.resolve(p, false)?)?,
            };
            (!e.is_dir() && !e.is_marker()).then(|| e.path.clone())
        })
        .collect();
    out.sort();
    out.dedup();
    out
}

/// Metadata paths, canonicalized when they exist and kept verbatim when
/// they do not (a deleted database is still the package's source).
fn canonical_paths(view: &LayerView<'_>, paths: &[String]) -> Vec<String> {
    let mut out: Vec<String> = paths
        .iter()
        .map(|p| {
            if view.contains(p) {
                p.clone()
            } else {
                view.resolve(p, false).unwrap_or_else(|| p.clone())
            }
        })
        .collect();
    out.sort();
    out.dedup();
    out
}

/// Merges per-layer reports: identities collapse to their first layer,
/// a declared package without a version is dropped when a versioned one
/// of the same name exists, and anything missing from the final layer is
/// marked obscured.
fn merge(reports: Vec<LayerReport>, warnings: Vec<String>) -> Analysis {
    let mut merged: BTreeMap<PackageId, Package> = BTreeMap::new();
    for r in &reports {
        for p in &r.packages {
            match merged.get_mut(&p.identity()) {
                // Weaker evidence never replaces stronger evidence.
                Some(existing) if p.provenance.strength() < existing.provenance.strength() => {
                    union_into(&mut existing.metadata_files, p.metadata_files.clone());
                }
                Some(existing) => {
                    let first = existing.source_layer;
                    let obscured_files = std::mem::take(&mut existing.metadata_files);
                    *existing = p.clone();
                    existing.source_layer = first;
                    union_into(&mut existing.metadata_files, obscured_files);
                }
                None => {
                    merged.insert(p.identity(), p.clone());
                }
            }
        }
    }
    let final_strength: BTreeMap<PackageId, u8> = reports
        .last()
        .map(|r| r.packages.iter().map(|p| (p.identity(), p.provenance.strength())).collect())
        .unwrap_or_default();
    let versioned: BTreeSet<(Ecosystem, String)> = merged
        .keys()
        .filter(|k| k.version.is_some())
        .map(|k| (k.ecosystem, k.name.clone()))
        .collect();
    let mut packages: Vec<Package> = merged
        .into_iter()
        .filter(|(k, p)| {
            !(k.version.is_none()
                && p.provenance == Provenance::Declared
                && versioned.contains(&(k.ecosystem, k.name.clone())))
        })
        .map(|(k, mut p)| {
            // Obscured when the strongest evidence ever seen is gone.
            p.obscured = final_strength.get(&k).map_or(true, |&s| s < p.provenance.strength());
            p
        })
        .collect();
    sort_packages(&mut packages);
    let os = reports.iter().rev().find_map(|r| r.os.clone());
    Analysis {
        reports,
        packages,
        os,
        warnings,
    }
}

/// Canonical output order: ecosystem, name, version, layer.
pub fn sort_packages(packages: &mut [Package]) {
    packages.sort_by(|a, b| {
        (a.ecosystem, &a.name, &a.version, a.source_layer).cmp(&(
            b.ecosystem,
            &b.name,
            &b.version,
            b.source_layer,
        ))
    });
}

/// Helpers shared by the individual analyzers.
pub(crate) mod util {
    use crate::layer_fs::{split_path, FileEntry, LayerView};

    /// Normalizes `rel` against `base`, resolving `.` and `..` lexically.
    pub fn join_relative(base: &str, rel: &str) -> Option<String> {
        let mut parts: Vec<&str> = if rel.starts_with('/') {
            Vec::new()
        } else {
            base.split('/').filter(|c| !c.is_empty()).collect()
        };
        for c in rel.split('/') {
            match c {
                "" | "." => {}
                ".." => {
                    parts.pop()?;
                }
                c => parts.push(c),
            }
        }
        if parts.is_empty() {
            return None;
        }
        Some(format!("/{}", parts.join("/")))
    }

    pub fn parent(path: &str) -> &str {
        split_path(path).0
    }

    /// Non-directory entries below `dir`.
    pub fn files_under<'a>(view: &LayerView<'a>, dir: &str) -> Vec<&'a FileEntry> {
        view.under(dir).filter(|e| !e.is_dir() && !e.is_marker()).collect()
    }

    pub fn has_component(path: &str, component: &str) -> bool {
        path.split('/').any(|c| c == component)
    }

    /// Strips a UTF-8 byte order mark.
    pub fn strip_bom(s: &str) -> &str {
        s.strip_prefix('\u{feff}').unwrap_or(s)
    }
}
