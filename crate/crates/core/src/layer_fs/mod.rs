//! Layer change-sets, per-path file history, and the squashed filesystem.
//!
//! A layer tar is turned into a [`LayerDelta`] of typed [`FileEntry`]s.
//! [`build_history`] replays the deltas in order and records, for every
//! path, when it was added, modified and deleted. [`squash`] reduces a
//! history to the final filesystem.

mod extract;
mod history;
mod store;
mod view;

use serde::{Deserialize, Serialize};

pub use extract::{extract_entries, extract_with, normalize_path};
pub use history::{build_history, Action, Event, FileHistory, NoopWhiteout, Replay};
pub use store::{ContentStore, RetainAll, RetainNothing, RetainPolicy, GO_BUILDINFO_MAGIC};
pub use view::{squash, LayerView, PathMap, SquashedView};

use crate::digest::Digest;

pub const WHITEOUT_PREFIX: &str = ".wh.";
pub const OPAQUE_MARKER: &str = ".wh..wh..opq";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EntryKind {
    Regular,
    Directory,
    Symlink,
    Hardlink,
    Whiteout,
    OpaqueWhiteout,
    Other,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    /// Normalized absolute path of the archive member. For whiteouts this
    /// is the marker itself; see [`FileEntry::target`].
    pub path: String,
    pub kind: EntryKind,
    pub size: u64,
    pub mode: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub link_target: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub digest: Option<Digest>,
    /// Layer the entry was read from.
    pub layer: usize,
}

impl FileEntry {
    /// The path a whiteout deletes, or the directory an opaque marker
    /// clears. `None` for ordinary entries.
    pub fn target(&self) -> Option<String> {
        let (dir, base) = split_path(&self.path);
        match self.kind {
            EntryKind::OpaqueWhiteout => Some(dir.to_string()),
            EntryKind::Whiteout => {
                let name = base.strip_prefix(WHITEOUT_PREFIX)?;
                Some(join_path(dir, name))
            }
            _ => None,
        }
    }

    pub fn is_marker(&self) -> bool {
        matches!(self.kind, EntryKind::Whiteout | EntryKind::OpaqueWhiteout)
    }

    /// Regular files, symlinks and hardlinks: the things scanners enumerate.
    pub fn is_file_like(&self) -> bool {
        matches!(
            self.kind,
            EntryKind::Regular | EntryKind::Symlink | EntryKind::Hardlink
        )
    }

    pub fn is_dir(&self) -> bool {
        self.kind == EntryKind::Directory
    }

    pub fn is_executable(&self) -> bool {
        self.mode & 0o111 != 0
    }

    pub fn basename(&self) -> &str {
        split_path(&self.path).1
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerDelta {
    pub layer: usize,
    pub entries: Vec<FileEntry>,
}

/// Splits `/a/b/c` into (`/a/b`, `c`). The parent of a top-level path is `/`.
pub fn split_path(path: &str) -> (&str, &str) {
    match path.rfind('/') {
        Some(0) => ("/", &path[1..]),
        Some(i) => (&path[..i], &path[i + 1..]),
        None => ("/", path),
    }
}

pub fn join_path(dir: &str, name: &str) -> String {
    if dir == "/" {
        format!("/{name}")
    } else {
        format!("{dir}/{name}")
    }
}

/// Ancestors of a normalized path, nearest last, excluding `/`.
pub fn ancestors(path: &str) -> impl Iterator<Item = &str> {
    path.match_indices('/')
        .map(|(i, _)| &path[..i])
        .filter(|p| !p.is_empty())
}

/// Whether `path` lies strictly below directory `dir`.
pub fn is_under(path: &str, dir: &str) -> bool {
    if dir == "/" {
        return path.len() > 1;
    }
    path.len() > dir.len() + 1 && path.starts_with(dir) && path.as_bytes()[dir.len()] == b'/'
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(path: &str, kind: EntryKind) -> FileEntry {
        FileEntry {
            path: path.into(),
            kind,
            size: 0,
            mode: 0o644,
            link_target: None,
            digest: None,
            layer: 0,
        }
    }

    #[test]
    fn whiteout_targets() {
        assert_eq!(
            entry("/etc/.wh.os-release", EntryKind::Whiteout).target().as_deref(),
            Some("/etc/os-release")
        );
        assert_eq!(
            entry("/app/.wh..wh..opq", EntryKind::OpaqueWhiteout).target().as_deref(),
            Some("/app")
        );
        assert_eq!(
            entry("/.wh..wh..opq", EntryKind::OpaqueWhiteout).target().as_deref(),
            Some("/")
        );
        assert_eq!(entry("/.wh.x", EntryKind::Whiteout).target().as_deref(), Some("/x"));
    }

    #[test]
    fn path_helpers() {
        assert_eq!(split_path("/a"), ("/", "a"));
        assert_eq!(split_path("/a/b/c"), ("/a/b", "c"));
        assert_eq!(ancestors("/a/b/c").collect::<Vec<_>>(), vec!["/a", "/a/b"]);
        assert_eq!(ancestors("/a").count(), 0);
        assert!(is_under("/a/b", "/a"));
        assert!(!is_under("/ab", "/a"));
        assert!(!is_under("/a", "/a"));
        assert!(is_under("/a", "/"));
    }
}
