//! File coverage: the share of files in the final filesystem that are
//! accounted for by an identified package or by analyzed metadata.
//!
//! Regular files, symlinks and hardlinks are counted; directories and
//! whiteout markers are not.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::analyzers::Package;
use crate::layer_fs::SquashedView;

pub const COVERAGE_SCHEMA_VERSION: u32 = 1;
pub const UNATTRIBUTED_SAMPLE: usize = 20;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerCoverage {
    pub layer: usize,
    pub total_files: usize,
    pub analyzed_files: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub schema_version: u32,
    pub total_files: usize,
    pub analyzed_files: usize,
    pub coverage: f64,
    /// Set when the image has no countable files.
    pub empty: bool,
    pub per_layer: Vec<LayerCoverage>,
    pub unattributed_sample: Vec<String>,
}

impl CoverageReport {
    pub fn summary_line(&self) -> String {
        if self.empty {
            return "coverage: 0.0% (image has no files)".into();
        }
        format!(
            "coverage: {:.1}% ({}/{} files)",
            self.coverage * 100.0,
            self.analyzed_files,
            self.total_files
        )
    }
}

/// Which package paths count as analyzed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Attribution {
    /// Owned files, metadata files and extra paths.
    Full,
    /// Metadata files and extra paths only, as an index-only scanner sees
    /// them.
    MetadataOnly,
}

pub fn compute_coverage(squashed: &SquashedView, packages: &[Package], extra: &BTreeSet<String>) -> CoverageReport {
    compute_with(squashed, packages, extra, Attribution::Full)
}

pub fn compute_with(
    squashed: &SquashedView,
    packages: &[Package],
    extra: &BTreeSet<String>,
    mode: Attribution,
) -> CoverageReport {
    let mut attributed: BTreeSet<&str> = extra.iter().map(String::as_str).collect();
    for p in packages {
        attributed.extend(p.metadata_files.iter().map(String::as_str));
        if mode == Attribution::Full {
            attributed.extend(p.owned_files.iter().map(String::as_str));
        }
    }

    let mut per_layer: BTreeMap<usize, LayerCoverage> = BTreeMap::new();
    let mut total = 0;
    let mut analyzed = 0;
    let mut sample = Vec::new();
    for (path, entry) in squashed.files.iter().filter(|(_, e)| e.is_file_like()) {
        total += 1;
        let slot = per_layer.entry(entry.layer).or_insert(LayerCoverage {
            layer: entry.layer,
            total_files: 0,
            analyzed_files: 0,
        });
        slot.total_files += 1;
        if attributed.contains(path.as_str()) {
            analyzed += 1;
            slot.analyzed_files += 1;
        } else if sample.len() < UNATTRIBUTED_SAMPLE {
            sample.push(path.clone());
        }
    }
    CoverageReport {
        schema_version: COVERAGE_SCHEMA_VERSION,
        total_files: total,
        analyzed_files: analyzed,
        coverage: if total == 0 { 0.0 } else { analyzed as f64 / total as f64 },
        empty: total == 0,
        per_layer: per_layer.into_values().collect(),
        unattributed_sample: sample,
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::analyzers::Ecosystem;
    use crate::layer_fs::{EntryKind, FileEntry};

    fn view(n: usize) -> SquashedView {
        let mut files = BTreeMap::new();
        let mut put = |path: String, kind, layer| {
            files.insert(
                path.clone(),
                FileEntry { path, kind, size: 1, mode: 0o644, link_target: None, digest: None, layer },
            );
        };
        put("/data".into(), EntryKind::Directory, 0);
        for i in 0..n {
            put(format!("/data/f{i:03}"), EntryKind::Regular, i % 2);
        }
        SquashedView { files }
    }

    fn owning(range: std::ops::Range<usize>) -> Package {
        let mut p = Package::new(Ecosystem::Deb, "p", Some("1".into()));
        p.owned_files = range.map(|i| format!("/data/f{i:03}")).collect();
        p.owned_files.push("/data".into());
        p.owned_files.push("/gone".into());
        p
    }

    #[test]
    fn ninety_of_hundred() {
        let r = compute_coverage(&view(100), &[owning(0..90)], &BTreeSet::new());
        assert_eq!((r.total_files, r.analyzed_files), (100, 90));
        assert!((r.coverage - 0.9).abs() < 1e-12);
        assert_eq!(r.per_layer.iter().map(|l| l.total_files).sum::<usize>(), 100);
        assert_eq!(r.unattributed_sample.len(), 10);
    }

    #[test]
    fn empty_and_full() {
        let r = compute_coverage(&SquashedView::default(), &[], &BTreeSet::new());
        assert!(r.empty);
        assert_eq!(r.coverage, 0.0);
        assert!(r.summary_line().contains("no files"));
        let r = compute_coverage(&view(10), &[owning(0..10)], &BTreeSet::new());
        assert_eq!(r.coverage, 1.0);
    }

    #[test]
    fn metadata_only_counts_less() {
        let mut p = owning(0..50);
        p.metadata_files.push("/data/f099".into());
        let full = compute_with(&view(100), &[p.clone()], &BTreeSet::new(), Attribution::Full);
        let meta = compute_with(&view(100), &[p], &BTreeSet::new(), Attribution::MetadataOnly);
        assert_eq!(full.analyzed_files, 51);
        assert_eq!(meta.analyzed_files, 1);
    }

    proptest! {
        #[test]
        fn adding_a_package_never_lowers(n in 0usize..60, a in 0usize..60, b in 0usize..60) {
            let v = view(n);
            let one = compute_coverage(&v, &[owning(0..a)], &BTreeSet::new());
            let two = compute_coverage(&v, &[owning(0..a), owning(b / 2..b)], &BTreeSet::new());
            prop_assert!(two.analyzed_files >= one.analyzed_files);
            prop_assert!(one.analyzed_files <= one.total_files);
            prop_assert!((0.0..=1.0).contains(&two.coverage));
        }
    }
}
