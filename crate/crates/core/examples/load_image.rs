//! Loads an image (OCI layout, docker-save tar, or registry reference) and
//! prints its manifest digest, layers and build history.
//!
//! `cargo run --example load_image [IMAGE]`; without an argument a small
//! synthetic image is written to a temporary directory first.

use stratascan::image_io::{load_image, ImageSource, LoadOptions};
use stratascan::synth::{ImageBuilder, LayerBuilder};

fn main() -> anyhow::Result<()> {
    let tmp = tempfile::tempdir()?;
    let input = match std::env::args().nth(1) {
        Some(i) => i,
        None => {
            let dir = tmp.path().join("layout");
            ImageBuilder::new("example/load:1")
                .layer(LayerBuilder::new("ADD rootfs /").file("/etc/os-release", "ID=alpine\nVERSION_ID=3.19.1\n"))
                .instruction("ENV APP=1")
                .layer(LayerBuilder::new("/bin/sh -c echo hi > /hello").file("/hello", "hi\n"))
                .write_oci_layout(&dir)?;
            dir.display().to_string()
        }
    };
    let image = load_image(&ImageSource::parse(&input)?, &LoadOptions::default())?;
    println!("{} {}", image.name, image.digest);
    println!("platform {}/{}", image.config.os, image.config.architecture);
    for l in &image.layers {
        println!("layer {} {} {:?} {} bytes", l.index, l.diff_id, l.compression, l.data.len());
    }
    for (i, h) in image.config.history.iter().enumerate() {
        let tag = if h.empty_layer { "      " } else { "layer " };
        println!("{tag}{i:>3} {}", h.created_by);
    }
    if !image.history_aligned {
        println!("history does not line up with the layers");
    }
    Ok(())
}
