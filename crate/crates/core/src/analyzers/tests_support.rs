//! In-memory filesystem states for analyzer unit tests.

use std::collections::BTreeMap;

use crate::digest::Digest;
use crate::layer_fs::{ancestors, ContentStore, EntryKind, FileEntry, LayerView, PathMap};

pub struct ViewFixture {
    map: PathMap<'static>,
    store: ContentStore,
}

impl ViewFixture {
    /// `(path, content)` pairs. Content `-> target` makes a symlink; a path
    /// ending in `/` makes a directory. Parents are created as needed.
    pub fn new(files: &[(&str, &str)]) -> Self {
        let bytes: Vec<(&str, &[u8])> = files.iter().map(|(p, c)| (*p, c.as_bytes())).collect();
        Self::from_bytes(&bytes, 0o644)
    }

    pub fn from_bytes(files: &[(&str, &[u8])], mode: u32) -> Self {
        let mut entries: BTreeMap<String, FileEntry> = BTreeMap::new();
        let mut store = ContentStore::default();
        let mk = |path: &str, kind, size, link: Option<String>, digest| FileEntry {
            path: path.to_string(),
            kind,
            size,
            mode: if kind == EntryKind::Directory { 0o755 } else { mode },
            link_target: link,
            digest,
            layer: 0,
        };
        for (path, content) in files {
            let p = path.trim_end_matches('/');
            for dir in ancestors(p) {
                if dir != "/" {
                    entries
                        .entry(dir.to_string())
                        .or_insert_with(|| mk(dir, EntryKind::Directory, 0, None, None));
                }
            }
            let entry = if path.ends_with('/') {
                mk(p, EntryKind::Directory, 0, None, None)
            } else if let Some(target) = content.strip_prefix(b"-> ") {
                let t = String::from_utf8_lossy(target).into_owned();
                mk(p, EntryKind::Symlink, 0, Some(t), None)
            } else {
                let d = Digest::of(content);
                store.insert(d.clone(), content);
                if mode & 0o111 != 0 {
                    store.insert_buildinfo_if_present(d.clone(), content);
                }
                mk(p, EntryKind::Regular, content.len() as u64, None, Some(d))
            };
            entries.insert(p.to_string(), entry);
        }
        let leaked: &'static BTreeMap<String, FileEntry> = Box::leak(Box::new(entries));
        let map = leaked.iter().map(|(k, v)| (k.as_str(), v)).collect();
        ViewFixture { map, store }
    }

    pub fn view(&self) -> LayerView<'_> {
        LayerView::new(0, &self.map, &self.store)
    }
}
