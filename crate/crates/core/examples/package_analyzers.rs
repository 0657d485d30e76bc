//! Runs every analyzer over a layered image and shows where each package
//! first appeared and whether its evidence was later removed.

use stratascan::analyzers::{analyze_layers, default_analyzers, AnalyzerRetain};
use stratascan::layer_fs::{build_history, extract_with, ContentStore};
use stratascan::synth::LayerBuilder;

fn main() -> anyhow::Result<()> {
    let layers = [
        LayerBuilder::new("ADD rootfs /")
            .file("/etc/os-release", "ID=debian\nVERSION_ID=12\n")
            .file("/var/lib/dpkg/status", "Package: gzip\nStatus: install ok installed\nArchitecture: amd64\nVersion: 1.12-1\n\n")
            .file("/var/lib/dpkg/info/gzip.list", "/usr/bin/gzip\n")
            .executable("/usr/bin/gzip", "ELF"),
        LayerBuilder::new("/bin/sh -c npm ci")
            .file("/app/package-lock.json", r#"{"lockfileVersion":3,"packages":{"":{"name":"app"},"node_modules/ms":{"version":"2.1.3"}}}"#)
            .file("/app/node_modules/ms/package.json", r#"{"name":"ms","version":"2.1.3"}"#)
            .file("/app/node_modules/ms/index.js", "module.exports = 1;\n")
            .file("/app/Gemfile.lock", "GEM\n  specs:\n    rake (13.0.6)\n"),
        LayerBuilder::new("/bin/sh -c rm -rf /var/lib/dpkg").whiteout("/var/lib/dpkg"),
    ];
    let analyzers = default_analyzers();
    let policy = AnalyzerRetain { analyzers: &analyzers };
    let mut store = ContentStore::default();
    let mut deltas = Vec::new();
    for (i, l) in layers.iter().enumerate() {
        let (delta, s) = extract_with(&l.tar_bytes(), i, &policy)?;
        store.merge(s);
        deltas.push(delta);
    }
    let history = build_history(&deltas);
    let analysis = analyze_layers(&history, &store, &analyzers);
    for r in &analysis.reports {
        println!("layer {}: re-ran {:?}, {} package(s) visible", r.layer, r.rerun, r.packages.len());
    }
    println!();
    for p in &analysis.packages {
        println!(
            "{:<6} {:<8} {:<10} layer {} {:?}{} ({} owned files)",
            p.ecosystem.as_str(),
            p.name,
            p.version.as_deref().unwrap_or("-"),
            p.source_layer,
            p.provenance,
            if p.obscured { " obscured" } else { "" },
            p.owned_files.len()
        );
    }
    Ok(())
}
