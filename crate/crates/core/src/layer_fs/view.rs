use std::borrow::Cow;
use std::collections::BTreeMap;
use std::ops::Bound;

use serde::Serialize;

use super::{Action, ContentStore, EntryKind, FileEntry, FileHistory};

/// Alive paths of a filesystem state, borrowed from a history.
pub type PathMap<'a> = BTreeMap<&'a str, &'a FileEntry>;

/// The final filesystem after all layers.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct SquashedView {
    pub files: BTreeMap<String, FileEntry>,
}

impl SquashedView {
    pub fn len(&self) -> usize {
        self.files.len()
    }

    pub fn is_empty(&self) -> bool {
        self.files.is_empty()
    }

    pub fn get(&self, path: &str) -> Option<&FileEntry> {
        self.files.get(path)
    }

    pub fn path_map(&self) -> PathMap<'_> {
        self.files.iter().map(|(k, v)| (k.as_str(), v)).collect()
    }
}

/// Reduces a history to the set of paths alive after the last layer.
pub fn squash(history: &FileHistory) -> SquashedView {
    let mut files = BTreeMap::new();
    for (path, events) in history.by_path() {
        if let Some(last) = events.last() {
            if last.action != Action::Deleted {
                files.insert(path.to_string(), last.entry.clone());
            }
        }
    }
    SquashedView { files }
}

const MAX_LINK_HOPS: usize = 40;

/// Read access to one filesystem state plus the retained contents.
#[derive(Clone, Copy)]
pub struct LayerView<'a> {
    pub layer: usize,
    files: &'a PathMap<'a>,
    store: &'a ContentStore,
}

impl<'a> LayerView<'a> {
    pub fn new(layer: usize, files: &'a PathMap<'a>, store: &'a ContentStore) -> Self {
        LayerView {
            layer,
            files,
            store,
        }
    }

    pub fn get(&self, path: &str) -> Option<&'a FileEntry> {
        self.files.get(path).copied()
    }

    pub fn contains(&self, path: &str) -> bool {
        self.files.contains_key(path)
    }

    pub fn iter(&self) -> impl Iterator<Item = &'a FileEntry> + 'a {
        self.files.values().copied()
    }

    pub fn len(&self) -> usize {
        self.files.len()
    }

    pub fn is_empty(&self) -> bool {
        self.files.is_empty()
    }

    /// Entries strictly below `dir`.
    pub fn under(&self, dir: &str) -> impl Iterator<Item = &'a FileEntry> + 'a {
        let (lo, hi) = if dir == "/" {
            ("/".to_string(), "0".to_string())
        } else {
            (format!("{dir}/"), format!("{dir}0"))
        };
        self.files
            .range::<str, _>((Bound::Included(lo.as_str()), Bound::Excluded(hi.as_str())))
            .map(|(_, e)| *e)
            .collect::<Vec<_>>()
            .into_iter()
    }

    /// Resolves symlinks in every component of `path` (and in the final
    /// component when `follow_final`). Returns the canonical path of an
    /// existing entry.
    pub fn resolve(&self, path: &str, follow_final: bool) -> Option<String> {
        let mut pending: Vec<String> = path
            .split('/')
            .filter(|c| !c.is_empty())
            .rev()
            .map(str::to_string)
            .collect();
        let mut current: Vec<String> = Vec::new();
        let mut hops = 0;
        while let Some(comp) = pending.pop() {
            match comp.as_str() {
                "." => continue,
                ".." => {
                    current.pop();
                    continue;
                }
                _ => {}
            }
            current.push(comp);
            let joined = format!("/{}", current.join("/"));
            let entry = self.files.get(joined.as_str())?;
            if entry.kind == EntryKind::Symlink && (follow_final || !pending.is_empty()) {
                hops += 1;
                if hops > MAX_LINK_HOPS {
                    return None;
                }
                let target = entry.link_target.as_deref().unwrap_or_default();
                current.pop();
                if target.starts_with('/') {
                    current.clear();
                }
                pending.extend(
                    target
                        .split('/')
                        .filter(|c| !c.is_empty())
                        .rev()
                        .map(str::to_string),
                );
            }
        }
        Some(if current.is_empty() {
            "/".to_string()
        } else {
            format!("/{}", current.join("/"))
        })
    }

    /// The entry at `path` after following symlinks.
    pub fn lookup(&self, path: &str) -> Option<&'a FileEntry> {
        if let Some(e) = self.get(path) {
            if e.kind != EntryKind::Symlink {
                return Some(e);
            }
        }
        let canonical = self.resolve(path, true)?;
        self.get(&canonical)
    }

    /// Retained contents of the file at `path`, following symlinks.
    pub fn read(&self, path: &str) -> Option<&'a [u8]> {
        let e = self.lookup(path)?;
        self.store.get(e.digest.as_ref()?)
    }

    pub fn read_text(&self, path: &str) -> Option<Cow<'a, str>> {
        self.read(path).map(String::from_utf8_lossy)
    }

    pub fn buildinfo(&self, entry: &FileEntry) -> Option<&'a [u8]> {
        self.store.buildinfo(entry.digest.as_ref()?)
    }
}
