use std::fs;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};

use log::{debug, warn};
use serde::Deserialize;

use super::media_types::{self, OCI_LAYOUT_VERSION};
use super::{Compression, Descriptor, ImageConfig, Index, Manifest, Platform, RawImage};
use crate::digest::Digest;
use crate::error::{Error, Result};

pub(crate) fn blob_path(root: &Path, digest: &Digest) -> PathBuf {
    root.join("blobs").join("sha256").join(digest.hex())
}

fn read_blob(root: &Path, desc: &Descriptor, what: &str) -> Result<Vec<u8>> {
    let path = blob_path(root, &desc.digest);
    let bytes = fs::read(&path).map_err(|e| match e.kind() {
        ErrorKind::NotFound => Error::MalformedManifest(format!(
            "{what} blob {} missing from layout",
            desc.digest
        )),
        _ => Error::Io(e),
    })?;
    desc.digest.verify(&bytes, what)?;
    if bytes.len() as u64 != desc.size {
        warn!(
            "{what} {}: descriptor size {} but blob has {} bytes",
            desc.digest,
            desc.size,
            bytes.len()
        );
    }
    Ok(bytes)
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct LayoutMarker {
    image_layout_version: String,
}

/// Just enough of a manifest or index to tell them apart.
#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct Probe {
    #[serde(default)]
    media_type: Option<String>,
    #[serde(default)]
    manifests: Option<serde_json::Value>,
}

pub(crate) fn read_layout(root: &Path, platform: &Platform) -> Result<RawImage> {
    if !root.exists() {
        return Err(Error::Io(std::io::Error::new(
            ErrorKind::NotFound,
            format!("{} does not exist", root.display()),
        )));
    }
    match fs::read(root.join("oci-layout")) {
        Ok(bytes) => {
            let marker: LayoutMarker = serde_json::from_slice(&bytes)
                .map_err(|e| Error::MalformedManifest(format!("oci-layout: {e}")))?;
            if marker.image_layout_version != OCI_LAYOUT_VERSION {
                warn!(
                    "unknown imageLayoutVersion {:?}, continuing",
                    marker.image_layout_version
                );
            }
        }
        Err(e) if e.kind() == ErrorKind::NotFound => {
            warn!("{} has no oci-layout marker", root.display());
        }
        Err(e) => return Err(e.into()),
    }
    let index_bytes = fs::read(root.join("index.json")).map_err(|e| match e.kind() {
        ErrorKind::NotFound => {
            Error::MalformedManifest(format!("{} has no index.json", root.display()))
        }
        _ => Error::Io(e),
    })?;
    let index: Index = serde_json::from_slice(&index_bytes)
        .map_err(|e| Error::MalformedManifest(format!("index.json: {e}")))?;
    let name = index
        .manifests
        .iter()
        .find_map(|d| d.annotations.get("org.opencontainers.image.ref.name").cloned())
        .unwrap_or_else(|| root.display().to_string());
    let (desc, manifest) = resolve_index(root, &index, platform, 0)?;
    let config_bytes = read_blob(root, &manifest.config, "config")?;
    let config = ImageConfig::parse(&config_bytes)?;

    let mut blobs = Vec::with_capacity(manifest.layers.len());
    for (i, layer) in manifest.layers.iter().enumerate() {
        let compression = Compression::from_media_type(&layer.media_type)?;
        let bytes = read_blob(root, layer, &format!("layer {i}"))?;
        blobs.push((layer.clone(), compression, bytes));
    }
    Ok(RawImage {
        name,
        digest: desc.digest,
        manifest,
        config,
        blobs,
    })
}

fn resolve_index(
    root: &Path,
    index: &Index,
    platform: &Platform,
    depth: usize,
) -> Result<(Descriptor, Manifest)> {
    if depth > 4 {
        return Err(Error::MalformedManifest("image indexes nested too deeply".into()));
    }
    if index.manifests.is_empty() {
        return Err(Error::MalformedManifest("index lists no manifests".into()));
    }
    let (exact, unknown) = index.candidates(platform);
    for desc in exact.into_iter().chain(unknown) {
        let bytes = read_blob(root, desc, "manifest")?;
        let probe: Probe = serde_json::from_slice(&bytes)
            .map_err(|e| Error::MalformedManifest(format!("manifest {}: {e}", desc.digest)))?;
        let media_type = probe
            .media_type
            .clone()
            .unwrap_or_else(|| desc.media_type.clone());
        if media_types::is_index(&media_type) || probe.manifests.is_some() {
            let nested: Index = serde_json::from_slice(&bytes)
                .map_err(|e| Error::MalformedManifest(format!("nested index: {e}")))?;
            match resolve_index(root, &nested, platform, depth + 1) {
                Ok(found) => return Ok(found),
                Err(Error::PlatformUnavailable(_)) => continue,
                Err(e) => return Err(e),
            }
        }
        if media_type == media_types::DOCKER_MANIFEST_V1_SIGNED {
            return Err(Error::UnsupportedMediaType(media_type));
        }
        let manifest = Manifest::parse(&bytes)?;
        if desc.platform.is_none() {
            // No platform on the descriptor: decide from the config.
            let config = ImageConfig::parse(&read_blob(root, &manifest.config, "config")?)?;
            let have = Platform {
                os: config.os.clone(),
                architecture: config.architecture.clone(),
                variant: config.variant.clone(),
            };
            let unspecified = config.os.is_empty() && config.architecture.is_empty();
            if !unspecified && !platform.matches(&have) {
                if index.manifests.len() == 1 {
                    warn!("only image in layout is {have}, not {platform}; loading it anyway");
                } else {
                    debug!("skipping {} for platform {have}", desc.digest);
                    continue;
                }
            }
        }
        return Ok((desc.clone(), manifest));
    }
    Err(Error::PlatformUnavailable(platform.to_string()))
}
