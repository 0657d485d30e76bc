//! Pulls an image from a registry into an OCI layout directory.
//!
//! `cargo run --example registry_pull -- REFERENCE DEST [PLATFORM]`, e.g.
//! `docker.io/library/alpine:3.19 ./alpine linux/arm64`. Credentials come
//! from `STRATASCAN_REGISTRY_USERNAME` / `STRATASCAN_REGISTRY_PASSWORD`.

use std::path::PathBuf;

use stratascan::image_io::Platform;
use stratascan::registry::{pull, ImageReference, RegistryOptions};

fn main() -> anyhow::Result<()> {
    env_logger::init();
    let mut args = std::env::args().skip(1);
    let (Some(reference), Some(dest)) = (args.next(), args.next()) else {
        eprintln!("usage: registry_pull REFERENCE DEST [PLATFORM]");
        std::process::exit(2);
    };
    let platform: Platform = match args.next() {
        Some(p) => p.parse()?,
        None => Platform::default(),
    };
    let reference = ImageReference::parse(&reference)?;
    let source = pull(&reference, &platform, &PathBuf::from(dest), &RegistryOptions::from_env())?;
    println!("pulled {reference} ({platform}) to {source}");
    Ok(())
}
