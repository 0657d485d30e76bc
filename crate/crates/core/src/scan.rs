//! The end-to-end pipeline: load, replay layers, analyze, reconstruct the
//! build, detect obscuration, measure coverage, emit an SBOM.

use std::collections::BTreeSet;

use chrono::{DateTime, Utc};
use log::{debug, info};
use rayon::prelude::*;
use serde::Serialize;

use crate::analyzers::{analyze_layers, default_analyzers, Analysis, Analyzer, AnalyzerRetain, Package, PackageId};
use crate::containerfile::{extract_external_packages, reconstruct, ExternalPackageRef, Instruction};
use crate::coverage::{compute_with, Attribution, CoverageReport};
use crate::detect::{classify_false_positive_candidates, detect, DetectInput, ImageShape, ObscurationReport, PatternTable};
use crate::digest::Digest;
use crate::error::{Error, Result};
use crate::image_io::{load_image, ImageConfig, ImageSource, LoadOptions, LoadedImage};
use crate::layer_fs::{build_history, extract_with, squash, ContentStore, FileHistory, SquashedView};
use crate::sbom::{components, emit_spdx, ImageMetadata, SbomDocument};

#[derive(Clone, Debug, Default)]
pub struct ScanOptions {
    pub patterns: PatternTable,
    /// Worker threads; `None` uses the global pool.
    pub jobs: Option<usize>,
    /// Extra programs whose URL arguments count as downloads.
    pub extra_fetch_commands: Vec<String>,
}

/// Everything a scan produces. Layer contents are dropped once extracted.
pub struct ScanResult {
    pub name: String,
    pub digest: Digest,
    pub config: ImageConfig,
    pub history_aligned: bool,
    pub history: FileHistory,
    pub squashed: SquashedView,
    pub analysis: Analysis,
    pub instructions: Vec<Instruction>,
    pub refs: Vec<ExternalPackageRef>,
    pub report: ObscurationReport,
    pub coverage: CoverageReport,
    /// Coverage when only package metadata files count.
    pub metadata_coverage: CoverageReport,
}

/// Scan summary in the `report-json` output format.
#[derive(Serialize)]
pub struct ScanSummary<'a> {
    pub schema_version: u32,
    pub image: &'a str,
    pub digest: String,
    pub layers: usize,
    pub history_aligned: bool,
    pub os: Option<&'a crate::analyzers::OsRelease>,
    pub packages: Vec<Package>,
    pub coverage: &'a CoverageReport,
    pub obscuration: &'a ObscurationReport,
    pub warnings: &'a [String],
}

impl ScanResult {
    /// Analyzed packages plus one per download, sorted.
    pub fn packages(&self) -> Vec<Package> {
        components(&self.analysis.packages, &self.refs)
    }

    pub fn package_ids(&self) -> BTreeSet<PackageId> {
        self.packages().iter().map(Package::identity).collect()
    }

    pub fn metadata(&self) -> ImageMetadata {
        ImageMetadata { name: self.name.clone(), digest: self.digest.clone(), os: self.analysis.os.clone() }
    }

    pub fn sbom(&self, clock: DateTime<Utc>) -> SbomDocument {
        emit_spdx(&self.analysis.packages, &self.refs, &self.metadata(), clock)
    }

    pub fn summary(&self) -> ScanSummary<'_> {
        ScanSummary {
            schema_version: 1,
            image: &self.name,
            digest: self.digest.to_string(),
            layers: self.history.layer_count(),
            history_aligned: self.history_aligned,
            os: self.analysis.os.as_ref(),
            packages: self.packages(),
            coverage: &self.coverage,
            obscuration: &self.report,
            warnings: &self.analysis.warnings,
        }
    }
}

fn with_pool<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match jobs {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
            Ok(pool.install(f))
        }
        None => Ok(f()),
    }
}

pub fn scan(source: &ImageSource, load: &LoadOptions, opts: &ScanOptions) -> Result<ScanResult> {
    with_pool(opts.jobs, || {
        let image = load_image(source, load)?;
        scan_loaded_inner(image, opts)
    })?
}

pub fn scan_loaded(image: LoadedImage, opts: &ScanOptions) -> Result<ScanResult> {
    with_pool(opts.jobs, || scan_loaded_inner(image, opts))?
}

fn scan_loaded_inner(image: LoadedImage, opts: &ScanOptions) -> Result<ScanResult> {
    let analyzers: Vec<Box<dyn Analyzer>> = default_analyzers();
    let policy = AnalyzerRetain { analyzers: &analyzers };
    let LoadedImage { name, digest, config, layers, layer_history, history_aligned, .. } = image;
    info!("scanning {name}: {} layer(s)", layers.len());

    let extracted: Vec<_> = layers
        .into_par_iter()
        .map(|l| extract_with(&l.data, l.index, &policy))
        .collect::<Result<_>>()?;
    let mut store = ContentStore::default();
    let mut deltas = Vec::with_capacity(extracted.len());
    for (delta, s) in extracted {
        store.merge(s);
        deltas.push(delta);
    }
    debug!("retained {} bytes of file content", store.retained_bytes());
    let history = build_history(&deltas);
    drop(deltas);
    let squashed = squash(&history);

    let analysis = analyze_layers(&history, &store, &analyzers);
    let instructions = reconstruct(&config, &layer_history);
    let refs = extract_external_packages(&instructions, &opts.extra_fetch_commands);

    let shape = ImageShape { layer_count: history.layer_count(), history: config.history.clone() };
    let input = DetectInput {
        image: &name,
        history: &history,
        squashed: &squashed,
        instructions: &instructions,
        refs: &refs,
        shape: &shape,
    };
    let mut report = detect(&input, &opts.patterns);
    classify_false_positive_candidates(&mut report, &analysis.packages);

    let os_files: BTreeSet<String> = analysis.reports.iter().filter_map(|r| r.os.as_ref()).map(|o| o.source_path.clone()).collect();
    let coverage = compute_with(&squashed, &analysis.packages, &os_files, Attribution::Full);
    let metadata_coverage = compute_with(&squashed, &analysis.packages, &os_files, Attribution::MetadataOnly);

    Ok(ScanResult {
        name,
        digest,
        config,
        history_aligned,
        history,
        squashed,
        analysis,
        instructions,
        refs,
        report,
        coverage,
        metadata_coverage,
    })
}
