use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, Read, Seek, SeekFrom};
use std::path::Path;

use log::warn;
use serde::Deserialize;

use super::media_types::OCI_CONFIG;
use super::{sniff_compression, Descriptor, ImageConfig, Manifest, RawImage};
use crate::digest::Digest;
use crate::error::{Error, Result};

#[derive(Deserialize)]
struct ArchiveManifest {
    #[serde(rename = "Config")]
    config: String,
    #[serde(rename = "RepoTags", default)]
    repo_tags: Option<Vec<String>>,
    #[serde(rename = "Layers")]
    layers: Vec<String>,
}

enum Member {
    File { offset: u64, size: u64 },
    Link(String),
}

/// Member index of a tar file, so blobs can be read in any order.
struct TarIndex {
    file: File,
    members: HashMap<String, Member>,
}

fn clean(name: &str) -> String {
    name.trim_start_matches("./").trim_start_matches('/').to_string()
}

impl TarIndex {
    fn open(path: &Path) -> Result<Self> {
        let file = File::open(path)?;
        let mut members = HashMap::new();
        let mut archive = tar::Archive::new(BufReader::new(file.try_clone()?));
        let entries = archive
            .entries()
            .map_err(|e| Error::MalformedTar(e.to_string()))?;
        for entry in entries {
            let entry = entry.map_err(|e| Error::MalformedTar(e.to_string()))?;
            let name = clean(&entry.path().map_err(|e| Error::MalformedTar(e.to_string()))?.to_string_lossy());
            let kind = entry.header().entry_type();
            if kind.is_file() {
                members.insert(
                    name,
                    Member::File {
                        offset: entry.raw_file_position(),
                        size: entry.size(),
                    },
                );
            } else if kind.is_symlink() || kind.is_hard_link() {
                if let Ok(Some(target)) = entry.link_name() {
                    let target = target.to_string_lossy().into_owned();
                    // Symlinks are relative to the member's directory.
                    let resolved = if kind.is_symlink() && !target.starts_with('/') {
                        let dir = Path::new(&name).parent().unwrap_or(Path::new(""));
                        normalize_rel(&dir.join(&target).to_string_lossy())
                    } else {
                        clean(&target)
                    };
                    members.insert(name, Member::Link(resolved));
                }
            }
        }
        Ok(TarIndex { file, members })
    }

    fn read(&mut self, name: &str) -> Result<Vec<u8>> {
        let mut key = clean(name);
        for _ in 0..16 {
            match self.members.get(&key) {
                Some(Member::File { offset, size }) => {
                    let (offset, size) = (*offset, *size);
                    self.file.seek(SeekFrom::Start(offset))?;
                    let mut buf = Vec::with_capacity(size as usize);
                    (&mut self.file).take(size).read_to_end(&mut buf)?;
                    if buf.len() as u64 != size {
                        return Err(Error::TruncatedStream(format!("archive member {name}")));
                    }
                    return Ok(buf);
                }
                Some(Member::Link(target)) => key = target.clone(),
                None => break,
            }
        }
        Err(Error::MalformedManifest(format!("archive member {name} not found")))
    }
}

fn normalize_rel(path: &str) -> String {
    let mut out: Vec<&str> = Vec::new();
    for part in path.split('/') {
        match part {
            "" | "." => {}
            ".." => {
                out.pop();
            }
            p => out.push(p),
        }
    }
    out.join("/")
}

/// `blobs/sha256/<hex>` and legacy `<hex>.json` names carry their digest.
fn digest_from_name(name: &str) -> Option<Digest> {
    let name = clean(name);
    if let Some(hex) = name.strip_prefix("blobs/sha256/") {
        return Digest::parse(hex).ok();
    }
    name.strip_suffix(".json").and_then(|hex| Digest::parse(hex).ok())
}

pub(crate) fn read_archive(path: &Path) -> Result<RawImage> {
    let mut index = TarIndex::open(path)?;
    let manifest_bytes = index.read("manifest.json")?;
    let mut entries: Vec<ArchiveManifest> = serde_json::from_slice(&manifest_bytes)
        .map_err(|e| Error::MalformedManifest(format!("manifest.json: {e}")))?;
    if entries.is_empty() {
        return Err(Error::MalformedManifest("manifest.json lists no images".into()));
    }
    if entries.len() > 1 {
        warn!(
            "{} holds {} images; using the first",
            path.display(),
            entries.len()
        );
    }
    let entry = entries.swap_remove(0);
    if entry.layers.is_empty() {
        return Err(Error::MalformedManifest("image has no layers".into()));
    }

    let config_bytes = index.read(&entry.config)?;
    if let Some(expected) = digest_from_name(&entry.config) {
        expected.verify(&config_bytes, "config")?;
    }
    let config = ImageConfig::parse(&config_bytes)?;
    let config_desc = Descriptor::new(OCI_CONFIG, &config_bytes);

    let mut blobs = Vec::with_capacity(entry.layers.len());
    let mut descriptors = Vec::with_capacity(entry.layers.len());
    for (i, name) in entry.layers.iter().enumerate() {
        let bytes = index.read(name)?;
        if let Some(expected) = digest_from_name(name) {
            expected.verify(&bytes, &format!("layer {i}"))?;
        }
        let compression = sniff_compression(&bytes);
        let desc = Descriptor::new(compression.oci_media_type(), &bytes);
        descriptors.push(desc.clone());
        blobs.push((desc, compression, bytes));
    }
    let name = entry
        .repo_tags
        .and_then(|t| t.into_iter().next())
        .unwrap_or_else(|| path.display().to_string());
    Ok(RawImage {
        name,
        digest: config_desc.digest.clone(),
        manifest: Manifest {
            schema_version: 2,
            media_type: None,
            config: config_desc,
            layers: descriptors,
            annotations: Default::default(),
        },
        config,
        blobs,
    })
}
