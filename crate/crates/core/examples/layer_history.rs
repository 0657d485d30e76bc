//! Replays layers with whiteouts and prints the per-file history and the
//! final filesystem.

use stratascan::layer_fs::{build_history, extract_entries, squash};
use stratascan::synth::LayerBuilder;

fn main() -> anyhow::Result<()> {
    let layers = [
        LayerBuilder::new("base")
            .file("/etc/os-release", "ID=debian\n")
            .file("/var/lib/dpkg/status", "Package: gzip\n")
            .file("/opt/cache/a", "a")
            .file("/opt/cache/b", "b"),
        LayerBuilder::new("update").file("/etc/os-release", "ID=debian\nVERSION_ID=12\n").whiteout("/var/lib/dpkg/status"),
        LayerBuilder::new("cleanup").opaque("/opt/cache").file("/opt/cache/c", "c"),
    ];
    let deltas = layers
        .iter()
        .enumerate()
        .map(|(i, l)| extract_entries(&l.tar_bytes(), i))
        .collect::<Result<Vec<_>, _>>()?;
    let history = build_history(&deltas);
    for (path, events) in history.by_path() {
        let trail: Vec<String> = events.iter().map(|e| format!("{}@{:?}", e.layer, e.action)).collect();
        println!("{path:<24} {}", trail.join(" -> "));
    }
    println!("\nfinal filesystem:");
    for (path, entry) in &squash(&history).files {
        println!("  {path} ({:?}, layer {})", entry.kind, entry.layer);
    }
    Ok(())
}
