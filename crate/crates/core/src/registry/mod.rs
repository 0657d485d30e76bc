//! Pulling images over the registry HTTP API into a local OCI layout.
//!
//! Anonymous bearer-token auth and static credentials are supported. Blobs
//! are written under temporary names and renamed only after their sha256
//! has been checked, so an interrupted or tampered pull never leaves a
//! usable-looking layout behind.

mod auth;
mod client;
mod reference;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use log::{debug, info};

pub use auth::Challenge;
pub use reference::ImageReference;

use crate::digest::Digest;
use crate::error::{Error, Result};
use crate::image_io::media_types::{self, OCI_LAYOUT_VERSION};
use crate::image_io::{Descriptor, ImageSource, Index, Manifest, Platform};
use client::Client;

pub const DEFAULT_CONCURRENCY: usize = 4;

#[derive(Clone, Debug)]
pub struct RegistryOptions {
    /// Maximum number of blobs downloaded at once.
    pub concurrency: usize,
    pub username: Option<String>,
    pub password: Option<String>,
    /// Use plain HTTP for every registry, not just loopback hosts.
    pub plain_http: bool,
    pub timeout: Duration,
}

impl Default for RegistryOptions {
    fn default() -> Self {
        RegistryOptions {
            concurrency: DEFAULT_CONCURRENCY,
            username: None,
            password: None,
            plain_http: false,
            timeout: Duration::from_secs(300),
        }
    }
}

impl RegistryOptions {
    /// Defaults plus credentials from `STRATASCAN_REGISTRY_USERNAME` and
    /// `STRATASCAN_REGISTRY_PASSWORD`.
    pub fn from_env() -> Self {
        RegistryOptions {
            username: std::env::var("STRATASCAN_REGISTRY_USERNAME").ok(),
            password: std::env::var("STRATASCAN_REGISTRY_PASSWORD").ok(),
            ..Default::default()
        }
    }
}

/// Fetches `reference` for `platform` and writes it as an OCI layout in
/// `dest`. Blobs already present and intact are not downloaded again.
pub fn pull(
    reference: &ImageReference,
    platform: &Platform,
    dest: &Path,
    opts: &RegistryOptions,
) -> Result<ImageSource> {
    let created = !dest.exists();
    let result = pull_inner(reference, platform, dest, opts);
    if result.is_err() {
        cleanup_partial(dest, created);
    }
    result
}

fn cleanup_partial(dest: &Path, created: bool) {
    if created {
        let _ = fs::remove_dir_all(dest);
        return;
    }
    if let Ok(entries) = fs::read_dir(dest.join("blobs").join("sha256")) {
        for e in entries.flatten() {
            if e.file_name().to_string_lossy().contains(".partial") {
                let _ = fs::remove_file(e.path());
            }
        }
    }
}

fn pull_inner(
    reference: &ImageReference,
    platform: &Platform,
    dest: &Path,
    opts: &RegistryOptions,
) -> Result<ImageSource> {
    let client = Client::new(reference, opts)?;
    let blobs_dir = dest.join("blobs").join("sha256");
    fs::create_dir_all(&blobs_dir)?;

    let (top_bytes, top_type) = client.manifest(&reference.manifest_ref(), reference.digest.as_ref())?;
    let mut manifest_bytes = top_bytes;
    let mut manifest_type = top_type;
    let mut platform_of_manifest = None;
    if media_types::is_index(&manifest_type) || looks_like_index(&manifest_bytes) {
        let index: Index = serde_json::from_slice(&manifest_bytes)
            .map_err(|e| Error::MalformedManifest(format!("image index: {e}")))?;
        let (exact, _) = index.candidates(platform);
        let chosen = exact
            .first()
            .ok_or_else(|| Error::PlatformUnavailable(platform.to_string()))?;
        debug!("{} resolved to {}", platform, chosen.digest);
        let (bytes, mt) = client.manifest(&chosen.digest.to_string(), Some(&chosen.digest))?;
        manifest_bytes = bytes;
        manifest_type = if mt.is_empty() { chosen.media_type.clone() } else { mt };
        platform_of_manifest = chosen.platform.clone();
    }
    if manifest_type == media_types::DOCKER_MANIFEST_V1_SIGNED {
        return Err(Error::UnsupportedMediaType(manifest_type));
    }
    let manifest = Manifest::parse(&manifest_bytes)?;
    if manifest_type.is_empty() {
        manifest_type = manifest
            .media_type
            .clone()
            .unwrap_or_else(|| media_types::OCI_MANIFEST.to_string());
    }

    let mut wanted = vec![manifest.config.clone()];
    wanted.extend(manifest.layers.iter().cloned());
    fetch_blobs(&client, &blobs_dir, &wanted, opts.concurrency.max(1))?;

    let manifest_digest = Digest::of(&manifest_bytes);
    write_verified(&blobs_dir, &manifest_digest, &manifest_bytes)?;

    let mut annotations = BTreeMap::new();
    if let Some(tag) = &reference.tag {
        annotations.insert("org.opencontainers.image.ref.name".to_string(), tag.clone());
    }
    let index = Index {
        schema_version: 2,
        media_type: Some(media_types::OCI_INDEX.to_string()),
        manifests: vec![Descriptor {
            media_type: manifest_type,
            digest: manifest_digest,
            size: manifest_bytes.len() as u64,
            platform: platform_of_manifest,
            annotations,
        }],
    };
    write_atomic(
        &dest.join("oci-layout"),
        serde_json::json!({ "imageLayoutVersion": OCI_LAYOUT_VERSION })
            .to_string()
            .as_bytes(),
    )?;
    write_atomic(&dest.join("index.json"), &serde_json::to_vec(&index)?)?;
    info!("pulled {reference} into {}", dest.display());
    Ok(ImageSource::oci_layout(dest))
}

fn looks_like_index(bytes: &[u8]) -> bool {
    serde_json::from_slice::<serde_json::Value>(bytes)
        .map(|v| v.get("manifests").is_some())
        .unwrap_or(false)
}

fn existing_is_valid(path: &Path, digest: &Digest) -> bool {
    match fs::read(path) {
        Ok(bytes) => Digest::of(&bytes) == *digest,
        Err(_) => false,
    }
}

fn fetch_blobs(client: &Client, dir: &Path, wanted: &[Descriptor], workers: usize) -> Result<()> {
    let mut queue: Vec<&Descriptor> = Vec::new();
    for d in wanted {
        if existing_is_valid(&dir.join(d.digest.hex()), &d.digest) {
            debug!("blob {} already present", d.digest);
        } else if !queue.iter().any(|q| q.digest == d.digest) {
            queue.push(d);
        }
    }
    queue.reverse();
    let queue = Mutex::new(queue);
    let first_error: Mutex<Option<Error>> = Mutex::new(None);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                if first_error.lock().expect("poisoned").is_some() {
                    return;
                }
                let next = queue.lock().expect("poisoned").pop();
                let Some(desc) = next else { return };
                if let Err(e) = client.blob_to_dir(desc, dir) {
                    first_error.lock().expect("poisoned").get_or_insert(e);
                    return;
                }
            });
        }
    });
    match first_error.into_inner().expect("poisoned") {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

pub(crate) fn temp_name(dir: &Path, digest: &Digest) -> std::path::PathBuf {
    let n: u64 = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_nanos() as u64)
        .unwrap_or(0);
    dir.join(format!(
        "{}.partial-{}-{n:x}",
        digest.hex(),
        std::process::id()
    ))
}

fn write_verified(dir: &Path, digest: &Digest, bytes: &[u8]) -> Result<()> {
    digest.verify(bytes, "blob")?;
    let tmp = temp_name(dir, digest);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, dir.join(digest.hex()))?;
    Ok(())
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("partial");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}
