//! The whole pipeline on one image: packages, obscuration findings,
//! coverage and the reconstructed Containerfile.
//!
//! `cargo run --example scan_pipeline [IMAGE]`

use stratascan::containerfile::render;
use stratascan::image_io::{ImageSource, LoadOptions};
use stratascan::scan::{scan, ScanOptions};
use stratascan::synth::{ImageBuilder, LayerBuilder};

fn main() -> anyhow::Result<()> {
    let tmp = tempfile::tempdir()?;
    let source = match std::env::args().nth(1) {
        Some(input) => ImageSource::parse(&input)?,
        None => {
            let dir = tmp.path().join("img");
            ImageBuilder::new("example/pipeline:1")
                .layer(
                    LayerBuilder::new("ADD rootfs /")
                        .file("/etc/os-release", "ID=debian\nVERSION_ID=12\n")
                        .file("/var/lib/dpkg/status", "Package: bash\nStatus: install ok installed\nVersion: 5.2.15-2\n\n")
                        .executable("/bin/bash", "ELF"),
                )
                .layer(
                    LayerBuilder::new("/bin/sh -c pip install six==1.16.0")
                        .file("/usr/lib/python3/dist-packages/six.py", "# six\n")
                        .file("/usr/lib/python3/dist-packages/six-1.16.0.dist-info/METADATA", "Name: six\nVersion: 1.16.0\n")
                        .file("/usr/lib/python3/dist-packages/six-1.16.0.dist-info/RECORD", "six.py,,\n"),
                )
                .layer(
                    LayerBuilder::new("/bin/sh -c rm -rf /usr/lib/python3/dist-packages/six-1.16.0.dist-info")
                        .whiteout("/usr/lib/python3/dist-packages/six-1.16.0.dist-info"),
                )
                .write_oci_layout(&dir)?;
            ImageSource::oci_layout(dir)
        }
    };
    let r = scan(&source, &LoadOptions::default(), &ScanOptions::default())?;
    println!("{} ({} layers, digest {})", r.name, r.history.layer_count(), r.digest);
    if let Some(os) = &r.analysis.os {
        println!("os: {} {}", os.id, os.version_id.as_deref().unwrap_or(""));
    }
    for p in r.packages() {
        let mark = if p.obscured { "  obscured" } else { "" };
        println!("  {:<8} {:<20} {:<12} layer {}{mark}", p.ecosystem.as_str(), p.name, p.version.as_deref().unwrap_or("-"), p.source_layer);
    }
    println!("findings: {} ({})", r.report.findings.len(), if r.report.is_obscure { "obscure" } else { "clean" });
    println!("{}", r.coverage.summary_line());
    println!("\n{}", render(&r.instructions));
    Ok(())
}
