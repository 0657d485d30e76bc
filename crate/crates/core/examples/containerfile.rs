//! Rebuilds a Containerfile from image history and lists the packages
//! fetched by download commands.

use stratascan::containerfile::{extract_external_packages, reconstruct, render};
use stratascan::image_io::{HistoryEntry, ImageConfig};

fn main() {
    let steps = [
        ("/bin/sh -c #(nop) ADD file:0a1b2c in / ", false),
        ("/bin/sh -c #(nop)  ENV TOOL_VERSION=2.4.1", true),
        ("/bin/sh -c curl -fsSL https://downloads.example.com/tool-${TOOL_VERSION}.tar.gz | tar -xz -C /opt", false),
        ("RUN /bin/sh -c pip install --no-cache-dir https://files.example.org/pkgs/widget-0.9.0-py3-none-any.whl # buildkit", false),
        ("/bin/sh -c ln -s /var/lib/dpkg /opt/db", false),
        ("/bin/sh -c #(nop)  CMD [\"/opt/tool\"]", true),
    ];
    let config = ImageConfig {
        history: steps
            .iter()
            .map(|(c, e)| HistoryEntry { created_by: c.to_string(), empty_layer: *e, ..Default::default() })
            .collect(),
        ..Default::default()
    };
    let layer_history: Vec<Option<usize>> = steps.iter().enumerate().filter(|(_, s)| !s.1).map(|(i, _)| Some(i)).collect();
    let instructions = reconstruct(&config, &layer_history);
    print!("{}", render(&instructions));
    println!();
    for r in extract_external_packages(&instructions, &[]) {
        println!("{:?} {} {} <- {} (layer {:?}, via {})", r.kind, r.inferred_name, r.inferred_version.as_deref().unwrap_or("?"), r.url, r.layer, r.command);
    }
}
