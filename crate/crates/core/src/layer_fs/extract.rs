use std::collections::HashMap;
use std::io::Read;

use log::warn;
use tar::EntryType;

use super::{
    split_path, ContentStore, EntryKind, FileEntry, LayerDelta, RetainNothing, RetainPolicy,
    OPAQUE_MARKER, WHITEOUT_PREFIX,
};
use crate::digest::Digest;
use crate::error::{Error, Result};

/// Normalizes an archive member name to an absolute path.
///
/// Leading `./` and `/`, repeated slashes, `.` components and trailing
/// slashes are dropped; `..` is resolved lexically and may not climb above
/// the root.
pub fn normalize_path(raw: &str) -> Result<String> {
    let mut parts: Vec<&str> = Vec::new();
    for part in raw.split('/') {
        match part {
            "" | "." => {}
            ".." => {
                if parts.pop().is_none() {
                    return Err(Error::PathEscape(raw.to_string()));
                }
            }
            p => parts.push(p),
        }
    }
    let mut out = String::with_capacity(raw.len() + 1);
    if parts.is_empty() {
        out.push('/');
    }
    for p in parts {
        out.push('/');
        out.push_str(p);
    }
    Ok(out)
}

/// Classifies every member of a layer tar.
pub fn extract_entries(data: &[u8], layer: usize) -> Result<LayerDelta> {
    extract_with(data, layer, &RetainNothing).map(|(delta, _)| delta)
}

/// Like [`extract_entries`], additionally retaining the contents selected by
/// `policy`.
pub fn extract_with(
    data: &[u8],
    layer: usize,
    policy: &dyn RetainPolicy,
) -> Result<(LayerDelta, ContentStore)> {
    let malformed = |e: std::io::Error| Error::MalformedTar(format!("layer {layer}: {e}"));
    let mut archive = tar::Archive::new(data);
    let mut entries = Vec::new();
    let mut store = ContentStore::default();
    let mut buf = Vec::new();
    // Digests of regular files seen so far in this layer, for hardlinks.
    let mut local: HashMap<String, (Digest, u64)> = HashMap::new();

    for member in archive.entries().map_err(malformed)? {
        let mut member = member.map_err(malformed)?;
        let raw_path = String::from_utf8_lossy(&member.path_bytes()).into_owned();
        let path = normalize_path(&raw_path)?;
        if path == "/" {
            continue;
        }
        let header = member.header();
        let mode = header.mode().unwrap_or(0) & 0o7777;
        let entry_type = header.entry_type();
        let (_, base) = split_path(&path);
        let kind = if base == OPAQUE_MARKER {
            EntryKind::OpaqueWhiteout
        } else if base.starts_with(WHITEOUT_PREFIX) {
            EntryKind::Whiteout
        } else {
            match entry_type {
                EntryType::Regular | EntryType::Continuous | EntryType::GNUSparse => {
                    EntryKind::Regular
                }
                EntryType::Directory => EntryKind::Directory,
                EntryType::Symlink => EntryKind::Symlink,
                EntryType::Link => EntryKind::Hardlink,
                _ => EntryKind::Other,
            }
        };

        let link_target = match kind {
            EntryKind::Symlink | EntryKind::Hardlink => {
                let target = member
                    .link_name_bytes()
                    .map(|b| String::from_utf8_lossy(&b).into_owned())
                    .unwrap_or_default();
                if kind == EntryKind::Hardlink {
                    Some(normalize_path(&target)?)
                } else {
                    Some(target)
                }
            }
            _ => None,
        };

        let mut size = member.size();
        let mut digest = None;
        if kind == EntryKind::Regular {
            buf.clear();
            member.read_to_end(&mut buf).map_err(malformed)?;
            size = buf.len() as u64;
            let d = Digest::of(&buf);
            if policy.keep_content(&path, size) {
                store.insert(d.clone(), &buf);
            }
            if mode & 0o111 != 0 && policy.scan_executables() {
                store.insert_buildinfo_if_present(d.clone(), &buf);
            }
            local.insert(path.clone(), (d.clone(), size));
            digest = Some(d);
        } else if kind == EntryKind::Hardlink {
            let target = link_target.as_deref().unwrap_or_default();
            if let Some((d, s)) = local.get(target) {
                digest = Some(d.clone());
                size = *s;
            }
        }

        entries.push(FileEntry {
            path,
            kind,
            size,
            mode,
            link_target,
            digest,
            layer,
        });
    }
    if entries.is_empty() && !data.is_empty() && data.iter().take(1024).any(|&b| b != 0) {
        warn!("layer {layer}: archive yielded no entries");
    }
    Ok((LayerDelta { layer, entries }, store))
}
