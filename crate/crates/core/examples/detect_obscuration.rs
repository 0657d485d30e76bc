//! Builds an image that hides its package database and a download, then
//! prints the obscuration report.
//!
//! Pass `--patterns FILE` to append extra patterns from a TOML file.

use stratascan::detect::{render_summary, render_table, PatternTable};
use stratascan::image_io::{ImageSource, LoadOptions};
use stratascan::scan::{scan, ScanOptions};
use stratascan::synth::{ImageBuilder, LayerBuilder};

fn main() -> anyhow::Result<()> {
    let mut patterns = PatternTable::default();
    let args: Vec<String> = std::env::args().collect();
    if let Some(i) = args.iter().position(|a| a == "--patterns") {
        let file = args.get(i + 1).ok_or_else(|| anyhow::anyhow!("--patterns needs a file"))?;
        patterns = PatternTable::with_override_file(std::path::Path::new(file))?;
    }
    let tmp = tempfile::tempdir()?;
    let dir = tmp.path().join("img");
    ImageBuilder::new("example/obscured:1")
        .layer(
            LayerBuilder::new("ADD rootfs /")
                .file("/etc/os-release", "ID=debian\nVERSION_ID=12\n")
                .file("/var/lib/dpkg/status", "Package: curl\nStatus: install ok installed\nVersion: 7.88.1-10\n\n")
                .file("/usr/bin/curl", "ELF"),
        )
        .layer(
            LayerBuilder::new("/bin/sh -c curl -fsSL https://example.com/dl/jq-1.7.1.tar.gz | tar -xz -C /usr/local")
                .executable("/usr/local/bin/jq", "ELF"),
        )
        .layer(LayerBuilder::new("/bin/sh -c rm -rf /var/lib/dpkg /etc/os-release").whiteout("/var/lib/dpkg").whiteout("/etc/os-release"))
        .write_oci_layout(&dir)?;
    let opts = ScanOptions { patterns, ..Default::default() };
    let result = scan(&ImageSource::oci_layout(&dir), &LoadOptions::default(), &opts)?;
    print!("{}", render_table(&result.report));
    println!();
    print!("{}", render_summary(&result.report));
    Ok(())
}
