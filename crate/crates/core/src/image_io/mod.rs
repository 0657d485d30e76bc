//! Loading container images from local OCI layouts and docker-save archives.
//!
//! Every loader produces the same [`LoadedImage`]: a parsed manifest and
//! config plus the decompressed, digest-verified tar stream of every layer.
//! Registry references are pulled into a temporary OCI layout first.

mod config;
mod decompress;
mod docker_archive;
pub mod media_types;
mod oci;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use log::{debug, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{align_history, HistoryEntry, ImageConfig};
pub use decompress::{decompress_layer, sniff_compression, Compression};

use crate::digest::Digest;
use crate::error::{Error, Result};
use crate::registry::{self, ImageReference, RegistryOptions};

/// Where an image comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceKind {
    OciLayoutDir,
    DockerSaveTar,
    RegistryReference,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageSource {
    pub kind: SourceKind,
    pub locator: String,
}

impl ImageSource {
    pub fn oci_layout(path: impl AsRef<Path>) -> Self {
        ImageSource {
            kind: SourceKind::OciLayoutDir,
            locator: path.as_ref().display().to_string(),
        }
    }

    pub fn docker_archive(path: impl AsRef<Path>) -> Self {
        ImageSource {
            kind: SourceKind::DockerSaveTar,
            locator: path.as_ref().display().to_string(),
        }
    }

    pub fn registry(reference: impl Into<String>) -> Self {
        ImageSource {
            kind: SourceKind::RegistryReference,
            locator: reference.into(),
        }
    }

    /// Interprets a command-line input.
    ///
    /// Explicit prefixes (`oci:`, `docker-archive:`, `registry:`,
    /// `docker://`) win. Otherwise an existing directory is an OCI layout,
    /// an existing file is a docker-save tar, and anything else that parses
    /// as a reference with a registry host, tag or digest is a registry
    /// reference. Remaining inputs are treated as local paths so that a
    /// typo surfaces as "not found" instead of a network request.
    pub fn parse(input: &str) -> Result<Self> {
        if input.is_empty() {
            return Err(Error::InvalidReference("empty input".into()));
        }
        if let Some(rest) = input.strip_prefix("oci:") {
            return Ok(Self::oci_layout(rest));
        }
        if let Some(rest) = input.strip_prefix("docker-archive:") {
            return Ok(Self::docker_archive(rest));
        }
        if let Some(rest) = input
            .strip_prefix("docker://")
            .or_else(|| input.strip_prefix("registry:"))
        {
            ImageReference::parse(rest)?;
            return Ok(Self::registry(rest));
        }
        let path = Path::new(input);
        if path.is_dir() {
            return Ok(Self::oci_layout(path));
        }
        if path.is_file() {
            return Ok(Self::docker_archive(path));
        }
        let looks_like_path = input.starts_with('.')
            || input.starts_with('/')
            || input.ends_with(".tar")
            || input.ends_with(".tar.gz");
        if !looks_like_path {
            if let Ok(reference) = ImageReference::parse(input) {
                if reference.explicit_registry || input.contains([':', '@']) {
                    return Ok(Self::registry(input));
                }
            }
        }
        Ok(Self::oci_layout(path))
    }
}

impl fmt::Display for ImageSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let prefix = match self.kind {
            SourceKind::OciLayoutDir => "oci",
            SourceKind::DockerSaveTar => "docker-archive",
            SourceKind::RegistryReference => "registry",
        };
        write!(f, "{prefix}:{}", self.locator)
    }
}

/// Target platform of an image, e.g. `linux/amd64` or `linux/arm64/v8`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Platform {
    pub os: String,
    pub architecture: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<String>,
}

impl Default for Platform {
    fn default() -> Self {
        Platform {
            os: "linux".into(),
            architecture: "amd64".into(),
            variant: None,
        }
    }
}

impl Platform {
    /// Whether `other` satisfies this requested platform. A request without
    /// a variant accepts any variant.
    pub fn matches(&self, other: &Platform) -> bool {
        if self.os != other.os || self.architecture != other.architecture {
            return false;
        }
        match (&self.variant, &other.variant) {
            (None, _) => true,
            (Some(want), Some(have)) => want == have,
            // arm64 images commonly omit the implied v8 variant.
            (Some(want), None) => self.architecture == "arm64" && want == "v8",
        }
    }
}

impl FromStr for Platform {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split('/').collect();
        match parts.as_slice() {
            [os, arch] if !os.is_empty() && !arch.is_empty() => Ok(Platform {
                os: os.to_string(),
                architecture: arch.to_string(),
                variant: None,
            }),
            [os, arch, variant] if !os.is_empty() && !arch.is_empty() && !variant.is_empty() => {
                Ok(Platform {
                    os: os.to_string(),
                    architecture: arch.to_string(),
                    variant: Some(variant.to_string()),
                })
            }
            _ => Err(Error::InvalidReference(format!(
                "platform must look like os/arch[/variant], got {s:?}"
            ))),
        }
    }
}

impl fmt::Display for Platform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.os, self.architecture)?;
        if let Some(v) = &self.variant {
            write!(f, "/{v}")?;
        }
        Ok(())
    }
}

/// A content descriptor as it appears in manifests and indexes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Descriptor {
    pub media_type: String,
    pub digest: Digest,
    pub size: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub platform: Option<Platform>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub annotations: BTreeMap<String, String>,
}

impl Descriptor {
    pub fn new(media_type: impl Into<String>, bytes: &[u8]) -> Self {
        Descriptor {
            media_type: media_type.into(),
            digest: Digest::of(bytes),
            size: bytes.len() as u64,
            platform: None,
            annotations: BTreeMap::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Manifest {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub media_type: Option<String>,
    pub config: Descriptor,
    pub layers: Vec<Descriptor>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub annotations: BTreeMap<String, String>,
}

impl Manifest {
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let manifest: Manifest = serde_json::from_slice(bytes)
            .map_err(|e| Error::MalformedManifest(format!("image manifest: {e}")))?;
        if manifest.schema_version != 2 {
            return Err(Error::MalformedManifest(format!(
                "unsupported schemaVersion {}",
                manifest.schema_version
            )));
        }
        if manifest.layers.is_empty() {
            return Err(Error::MalformedManifest("manifest lists no layers".into()));
        }
        Ok(manifest)
    }
}

/// An image index (manifest list).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Index {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub media_type: Option<String>,
    pub manifests: Vec<Descriptor>,
}

impl Index {
    /// Picks the manifest for `platform`, skipping attestation entries.
    /// Descriptors without platform information are returned as
    /// candidates for the caller to resolve through their config.
    pub fn candidates<'a>(&'a self, platform: &Platform) -> (Vec<&'a Descriptor>, Vec<&'a Descriptor>) {
        let mut exact = Vec::new();
        let mut unknown = Vec::new();
        for d in &self.manifests {
            if d.annotations.contains_key("vnd.docker.reference.type") {
                continue;
            }
            match &d.platform {
                Some(p) if platform.matches(p) => exact.push(d),
                Some(_) => {}
                None => unknown.push(d),
            }
        }
        (exact, unknown)
    }
}

/// One decompressed filesystem layer.
#[derive(Clone, Debug)]
pub struct Layer {
    pub index: usize,
    pub descriptor: Descriptor,
    pub compression: Compression,
    pub diff_id: Digest,
    /// Uncompressed tar stream.
    pub data: Vec<u8>,
}

#[derive(Clone, Debug)]
pub struct LoadedImage {
    pub source: ImageSource,
    /// Human-readable name (tag or path).
    pub name: String,
    /// Manifest digest when known, otherwise the config digest.
    pub digest: Digest,
    pub manifest: Manifest,
    pub config: ImageConfig,
    pub layers: Vec<Layer>,
    /// Position of the history entry that produced each layer. `None`
    /// when the config history cannot be aligned with the layers.
    pub layer_history: Vec<Option<usize>>,
    pub history_aligned: bool,
}

impl LoadedImage {
    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn total_uncompressed_bytes(&self) -> u64 {
        self.layers.iter().map(|l| l.data.len() as u64).sum()
    }
}

#[derive(Clone, Debug, Default)]
pub struct LoadOptions {
    pub platform: Platform,
    pub registry: RegistryOptions,
}

/// Loads, verifies and decompresses an image.
pub fn load_image(source: &ImageSource, opts: &LoadOptions) -> Result<LoadedImage> {
    match source.kind {
        SourceKind::OciLayoutDir => {
            let path = Path::new(&source.locator);
            let raw = oci::read_layout(path, &opts.platform)?;
            finish(source.clone(), raw)
        }
        SourceKind::DockerSaveTar => {
            let raw = docker_archive::read_archive(Path::new(&source.locator))?;
            finish(source.clone(), raw)
        }
        SourceKind::RegistryReference => {
            let reference = ImageReference::parse(&source.locator)?;
            let scratch = tempfile::tempdir()?;
            let pulled = registry::pull(&reference, &opts.platform, scratch.path(), &opts.registry)?;
            let raw = oci::read_layout(Path::new(&pulled.locator), &opts.platform)?;
            let mut image = finish(source.clone(), raw)?;
            image.name = reference.to_string();
            Ok(image)
        }
    }
}

/// Blobs collected by a loader before decompression.
pub(crate) struct RawImage {
    pub name: String,
    pub digest: Digest,
    pub manifest: Manifest,
    pub config: ImageConfig,
    pub blobs: Vec<(Descriptor, Compression, Vec<u8>)>,
}

fn finish(source: ImageSource, raw: RawImage) -> Result<LoadedImage> {
    let RawImage {
        name,
        digest,
        manifest,
        config,
        blobs,
    } = raw;
    if config.diff_ids.len() != blobs.len() {
        return Err(Error::MalformedManifest(format!(
            "manifest has {} layers but config lists {} diff_ids",
            blobs.len(),
            config.diff_ids.len()
        )));
    }
    let layers = blobs
        .into_par_iter()
        .enumerate()
        .map(|(index, (descriptor, compression, blob))| {
            let data = decompress::decompress(&blob, compression)?;
            drop(blob);
            let diff_id = config.diff_ids[index].clone();
            diff_id.verify(&data, &format!("layer {index} diff_id"))?;
            debug!("layer {index}: {} bytes uncompressed", data.len());
            Ok(Layer {
                index,
                descriptor,
                compression,
                diff_id,
                data,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let (layer_history, history_aligned) = align_history(&config.history, layers.len());
    if !history_aligned {
        warn!(
            "config history ({} entries) does not align with {} layers; layer commands unavailable",
            config.history.len(),
            layers.len()
        );
    }
    Ok(LoadedImage {
        source,
        name,
        digest,
        manifest,
        config,
        layers,
        layer_history,
        history_aligned,
    })
}
