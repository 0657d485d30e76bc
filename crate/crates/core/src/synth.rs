//! Builds small images on disk: OCI layout directories and `docker save`
//! archives. Used by the examples and tests, and handy for reproducing a
//! layering problem without a container runtime.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use flate2::write::GzEncoder;

use crate::digest::Digest;
use crate::error::Result;
use crate::image_io::media_types::{OCI_CONFIG, OCI_INDEX, OCI_LAYOUT_VERSION, OCI_MANIFEST};
use crate::image_io::{Compression, Descriptor, HistoryEntry, ImageConfig, Index, Manifest, Platform};
use crate::layer_fs::{split_path, OPAQUE_MARKER, WHITEOUT_PREFIX};

#[derive(Clone, Debug)]
enum Member {
    File { path: String, data: Vec<u8>, mode: u32 },
    Dir { path: String },
    Symlink { path: String, target: String },
    Hardlink { path: String, target: String },
    Whiteout { path: String },
    Opaque { dir: String },
}

/// One layer's change set, in archive order.
#[derive(Clone, Debug, Default)]
pub struct LayerBuilder {
    members: Vec<Member>,
    created_by: String,
}

fn rel(path: &str) -> String {
    path.trim_start_matches('/').to_string()
}

impl LayerBuilder {
    pub fn new(created_by: impl Into<String>) -> Self {
        LayerBuilder { members: Vec::new(), created_by: created_by.into() }
    }

    pub fn created_by(&self) -> &str {
        &self.created_by
    }

    pub fn file(self, path: &str, data: impl AsRef<[u8]>) -> Self {
        self.file_mode(path, data, 0o644)
    }

    pub fn executable(self, path: &str, data: impl AsRef<[u8]>) -> Self {
        self.file_mode(path, data, 0o755)
    }

    pub fn file_mode(mut self, path: &str, data: impl AsRef<[u8]>, mode: u32) -> Self {
        self.members.push(Member::File { path: rel(path), data: data.as_ref().to_vec(), mode });
        self
    }

    pub fn dir(mut self, path: &str) -> Self {
        self.members.push(Member::Dir { path: rel(path) });
        self
    }

    pub fn symlink(mut self, path: &str, target: &str) -> Self {
        self.members.push(Member::Symlink { path: rel(path), target: target.into() });
        self
    }

    pub fn hardlink(mut self, path: &str, target: &str) -> Self {
        self.members.push(Member::Hardlink { path: rel(path), target: rel(target) });
        self
    }

    /// Deletes `path` from lower layers.
    pub fn whiteout(mut self, path: &str) -> Self {
        self.members.push(Member::Whiteout { path: rel(path) });
        self
    }

    /// Hides everything lower layers put under `dir`.
    pub fn opaque(mut self, dir: &str) -> Self {
        self.members.push(Member::Opaque { dir: rel(dir) });
        self
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// The uncompressed layer tar.
    pub fn tar_bytes(&self) -> Vec<u8> {
        let mut b = tar::Builder::new(Vec::new());
        let header = |kind: tar::EntryType, size: u64, mode: u32| {
            let mut h = tar::Header::new_ustar();
            h.set_entry_type(kind);
            h.set_size(size);
            h.set_mode(mode);
            h.set_mtime(0);
            h.set_uid(0);
            h.set_gid(0);
            h
        };
        let joined = |dir: &str, name: &str| if dir.is_empty() { name.to_string() } else { format!("{dir}/{name}") };
        for m in &self.members {
            let res = match m {
                Member::File { path, data, mode } => {
                    let mut h = header(tar::EntryType::Regular, data.len() as u64, *mode);
                    b.append_data(&mut h, path, data.as_slice())
                }
                Member::Dir { path } => {
                    let mut h = header(tar::EntryType::Directory, 0, 0o755);
                    b.append_data(&mut h, format!("{path}/"), std::io::empty())
                }
                Member::Symlink { path, target } => {
                    let mut h = header(tar::EntryType::Symlink, 0, 0o777);
                    b.append_link(&mut h, path, target)
                }
                Member::Hardlink { path, target } => {
                    let mut h = header(tar::EntryType::Link, 0, 0o644);
                    b.append_link(&mut h, path, target)
                }
                Member::Whiteout { path } => {
                    let abs = format!("/{path}");
                    let (dir, name) = split_path(&abs);
                    let marker = joined(dir.trim_start_matches('/'), &format!("{WHITEOUT_PREFIX}{name}"));
                    let mut h = header(tar::EntryType::Regular, 0, 0o644);
                    b.append_data(&mut h, marker, std::io::empty())
                }
                Member::Opaque { dir } => {
                    let mut h = header(tar::EntryType::Regular, 0, 0o644);
                    b.append_data(&mut h, joined(dir, OPAQUE_MARKER), std::io::empty())
                }
            };
            res.expect("writing to memory");
        }
        b.into_inner().expect("writing to memory")
    }
}

/// An image under construction. Layers and config-only instructions are
/// recorded in order and become the config history.
#[derive(Clone, Debug)]
pub struct ImageBuilder {
    name: String,
    platform: Platform,
    layers: Vec<LayerBuilder>,
    history: Vec<HistoryEntry>,
    history_override: Option<Vec<HistoryEntry>>,
    env: Vec<String>,
    compression: Compression,
}

/// What was written: the manifest digest and the descriptor pointing at it.
#[derive(Clone, Debug)]
pub struct Written {
    pub manifest: Descriptor,
    pub config: ImageConfig,
}

impl ImageBuilder {
    pub fn new(name: impl Into<String>) -> Self {
        ImageBuilder {
            name: name.into(),
            platform: Platform::default(),
            layers: Vec::new(),
            history: Vec::new(),
            history_override: None,
            env: vec!["PATH=/usr/local/sbin:/usr/local/bin:/usr/sbin:/usr/bin:/sbin:/bin".into()],
            compression: Compression::Gzip,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn platform(mut self, platform: Platform) -> Self {
        self.platform = platform;
        self
    }

    pub fn compression(mut self, c: Compression) -> Self {
        self.compression = c;
        self
    }

    pub fn layer(mut self, layer: LayerBuilder) -> Self {
        self.history.push(HistoryEntry { created_by: layer.created_by.clone(), ..Default::default() });
        self.layers.push(layer);
        self
    }

    /// A history entry that creates no layer (`ENV`, `CMD`, ...).
    pub fn instruction(mut self, created_by: impl Into<String>) -> Self {
        self.history.push(HistoryEntry { created_by: created_by.into(), empty_layer: true, ..Default::default() });
        self
    }

    /// Replaces the recorded history, e.g. to mimic a squashed image.
    pub fn history(mut self, history: Vec<HistoryEntry>) -> Self {
        self.history_override = Some(history);
        self
    }

    pub fn layers(&self) -> &[LayerBuilder] {
        &self.layers
    }

    fn layer_tars(&self) -> Vec<Vec<u8>> {
        self.layers.iter().map(LayerBuilder::tar_bytes).collect()
    }

    fn config_for(&self, tars: &[Vec<u8>]) -> ImageConfig {
        ImageConfig {
            os: self.platform.os.clone(),
            architecture: self.platform.architecture.clone(),
            variant: self.platform.variant.clone(),
            env: self.env.clone(),
            labels: BTreeMap::new(),
            history: self.history_override.clone().unwrap_or_else(|| self.history.clone()),
            diff_ids: tars.iter().map(|t| Digest::of(t)).collect(),
        }
    }

    fn compress(&self, tar: &[u8]) -> Vec<u8> {
        match self.compression {
            Compression::Gzip => {
                let mut enc = GzEncoder::new(Vec::new(), flate2::Compression::fast());
                enc.write_all(tar).expect("writing to memory");
                enc.finish().expect("writing to memory")
            }
            Compression::Zstd => zstd::encode_all(tar, 1).expect("writing to memory"),
            Compression::None => tar.to_vec(),
        }
    }

    /// Writes the image's blobs into `dir` (an OCI layout) and returns the
    /// manifest descriptor without touching `index.json`.
    pub fn write_blobs(&self, dir: &Path) -> Result<Written> {
        let blobs = dir.join("blobs").join("sha256");
        fs::create_dir_all(&blobs)?;
        let put = |bytes: &[u8]| -> Result<Digest> {
            let d = Digest::of(bytes);
            fs::write(blobs.join(d.hex()), bytes)?;
            Ok(d)
        };
        let tars = self.layer_tars();
        let config = self.config_for(&tars);
        let config_bytes = serde_json::to_vec(&config.to_json())?;
        put(&config_bytes)?;
        let mut layers = Vec::with_capacity(tars.len());
        for tar in &tars {
            let blob = self.compress(tar);
            put(&blob)?;
            layers.push(Descriptor::new(self.compression.oci_media_type(), &blob));
        }
        let manifest = Manifest {
            schema_version: 2,
            media_type: Some(OCI_MANIFEST.into()),
            config: Descriptor::new(OCI_CONFIG, &config_bytes),
            layers,
            annotations: BTreeMap::new(),
        };
        let manifest_bytes = serde_json::to_vec(&manifest)?;
        put(&manifest_bytes)?;
        let mut desc = Descriptor::new(OCI_MANIFEST, &manifest_bytes);
        desc.platform = Some(self.platform.clone());
        Ok(Written { manifest: desc, config })
    }

    /// Writes a single-image OCI layout.
    pub fn write_oci_layout(&self, dir: &Path) -> Result<Written> {
        let mut written = self.write_blobs(dir)?;
        written
            .manifest
            .annotations
            .insert("org.opencontainers.image.ref.name".into(), self.name.clone());
        write_index(dir, std::slice::from_ref(&written.manifest))?;
        Ok(written)
    }

    /// Writes a `docker save` archive with uncompressed layers.
    pub fn write_docker_archive(&self, path: &Path) -> Result<()> {
        let tars = self.layer_tars();
        let config = self.config_for(&tars);
        let config_bytes = serde_json::to_vec(&config.to_json())?;
        let config_name = format!("{}.json", Digest::of(&config_bytes).hex());
        let mut b = tar::Builder::new(fs::File::create(path)?);
        let mut add = |name: &str, bytes: &[u8]| -> Result<()> {
            let mut h = tar::Header::new_gnu();
            h.set_size(bytes.len() as u64);
            h.set_mode(0o644);
            h.set_mtime(0);
            b.append_data(&mut h, name, bytes)?;
            Ok(())
        };
        add(&config_name, &config_bytes)?;
        let mut layer_names = Vec::new();
        for tar in &tars {
            let name = format!("{}/layer.tar", Digest::of(tar).hex());
            add(&name, tar)?;
            layer_names.push(name);
        }
        let manifest = serde_json::json!([{
            "Config": config_name,
            "RepoTags": [self.name],
            "Layers": layer_names,
        }]);
        add("manifest.json", &serde_json::to_vec(&manifest)?)?;
        b.into_inner()?.sync_all()?;
        Ok(())
    }
}

/// Writes `index.json` and the `oci-layout` marker.
pub fn write_index(dir: &Path, manifests: &[Descriptor]) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("oci-layout"), format!("{{\"imageLayoutVersion\":\"{OCI_LAYOUT_VERSION}\"}}"))?;
    let index = Index { schema_version: 2, media_type: Some(OCI_INDEX.into()), manifests: manifests.to_vec() };
    fs::write(dir.join("index.json"), serde_json::to_vec_pretty(&index)?)?;
    Ok(())
}

/// Writes several platform variants into one layout behind a single index.
pub fn write_multi_platform_layout(dir: &Path, images: &[ImageBuilder]) -> Result<Vec<Written>> {
    let written: Vec<Written> = images.iter().map(|i| i.write_blobs(dir)).collect::<Result<_>>()?;
    let descs: Vec<Descriptor> = written.iter().map(|w| w.manifest.clone()).collect();
    write_index(dir, &descs)?;
    Ok(written)
}
