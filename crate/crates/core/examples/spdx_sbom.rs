//! Writes a reproducible SPDX 2.3 document for a synthetic image.
//!
//! `cargo run --example spdx_sbom [OUTPUT]` (stdout by default).

use chrono::{TimeZone, Utc};
use stratascan::image_io::{ImageSource, LoadOptions};
use stratascan::scan::{scan, ScanOptions};
use stratascan::synth::{ImageBuilder, LayerBuilder};

fn main() -> anyhow::Result<()> {
    let tmp = tempfile::tempdir()?;
    let dir = tmp.path().join("img");
    ImageBuilder::new("example/sbom:1")
        .layer(
            LayerBuilder::new("ADD rootfs /")
                .file("/etc/os-release", "ID=alpine\nVERSION_ID=3.19.1\n")
                .file("/lib/apk/db/installed", "P:musl\nV:1.2.4-r2\nA:x86_64\nF:lib\nR:ld-musl-x86_64.so.1\n\n")
                .file("/lib/ld-musl-x86_64.so.1", "ELF"),
        )
        .layer(
            LayerBuilder::new("/bin/sh -c pip install flask==3.0.0")
                .file("/usr/lib/python3.11/site-packages/flask-3.0.0.dist-info/METADATA", "Name: Flask\nVersion: 3.0.0\n")
                .file("/usr/lib/python3.11/site-packages/flask/__init__.py", ""),
        )
        .write_oci_layout(&dir)?;
    let result = scan(&ImageSource::oci_layout(&dir), &LoadOptions::default(), &ScanOptions::default())?;
    let clock = Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).single().expect("valid time");
    let json = result.sbom(clock).to_json();
    match std::env::args().nth(1) {
        Some(path) => std::fs::write(path, json)?,
        None => print!("{json}"),
    }
    Ok(())
}
