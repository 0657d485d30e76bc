//! Compares file coverage when packages own their files with coverage when
//! only package metadata files count.

use std::collections::BTreeSet;

use stratascan::analyzers::{analyze_layers, default_analyzers, AnalyzerRetain};
use stratascan::coverage::{compute_with, Attribution};
use stratascan::layer_fs::{build_history, extract_with, squash, ContentStore};
use stratascan::synth::LayerBuilder;

fn main() -> anyhow::Result<()> {
    let mut layer = LayerBuilder::new("/bin/sh -c npm ci").file("/etc/os-release", "ID=alpine\nVERSION_ID=3.19.1\n");
    for (name, version) in [("express", "4.18.2"), ("debug", "4.3.4"), ("ms", "2.1.3")] {
        let dir = format!("/srv/node_modules/{name}");
        layer = layer.file(&format!("{dir}/package.json"), format!(r#"{{"name":"{name}","version":"{version}"}}"#));
        for i in 0..12 {
            layer = layer.file(&format!("{dir}/lib/m{i}.js"), format!("// {i}\n"));
        }
    }
    let layer = layer.file("/srv/server.js", "require('express')\n").file("/srv/config.yml", "port: 80\n");

    let analyzers = default_analyzers();
    let (delta, store_part) = extract_with(&layer.tar_bytes(), 0, &AnalyzerRetain { analyzers: &analyzers })?;
    let mut store = ContentStore::default();
    store.merge(store_part);
    let history = build_history(&[delta]);
    let analysis = analyze_layers(&history, &store, &analyzers);
    let view = squash(&history);
    let os_files: BTreeSet<String> = analysis.os.iter().map(|o| o.source_path.clone()).collect();

    let full = compute_with(&view, &analysis.packages, &os_files, Attribution::Full);
    let meta = compute_with(&view, &analysis.packages, &os_files, Attribution::MetadataOnly);
    println!("with owned files:    {}", full.summary_line());
    println!("metadata files only: {}", meta.summary_line());
    println!("unattributed: {:?}", full.unattributed_sample);
    Ok(())
}
