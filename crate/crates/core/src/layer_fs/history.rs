use std::collections::{BTreeMap, BTreeSet};
use std::ops::Range;

use log::debug;
use serde::{Deserialize, Serialize};

use super::{ancestors, EntryKind, FileEntry, LayerDelta};
use crate::digest::Digest;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Action {
    Added,
    Modified,
    Deleted,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub layer: usize,
    pub action: Action,
    /// The new entry for Added/Modified; the entry that disappeared for
    /// Deleted.
    pub entry: FileEntry,
    /// Digest before a Modified event, so content-identical rewrites can be
    /// told apart from real changes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub previous_digest: Option<Digest>,
}

impl Event {
    pub fn path(&self) -> &str {
        &self.entry.path
    }

    pub fn content_unchanged(&self) -> bool {
        self.action == Action::Modified && self.previous_digest == self.entry.digest
    }
}

/// A whiteout that matched nothing alive in lower layers.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoopWhiteout {
    pub layer: usize,
    pub marker: String,
}

/// Ordered events for every path ever seen in an image.
#[derive(Clone, Debug, Default)]
pub struct FileHistory {
    events: Vec<Event>,
    by_path: BTreeMap<String, Vec<usize>>,
    layers: Vec<Range<usize>>,
    noops: Vec<NoopWhiteout>,
}

impl FileHistory {
    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    /// Events recorded at `layer`, sorted by path.
    pub fn layer_events(&self, layer: usize) -> &[Event] {
        self.layers
            .get(layer)
            .map(|r| &self.events[r.clone()])
            .unwrap_or(&[])
    }

    pub fn path_events(&self, path: &str) -> impl Iterator<Item = &Event> {
        self.by_path
            .get(path)
            .into_iter()
            .flatten()
            .map(move |&i| &self.events[i])
    }

    /// All paths ever seen, sorted.
    pub fn paths(&self) -> impl Iterator<Item = &str> {
        self.by_path.keys().map(String::as_str)
    }

    pub fn by_path(&self) -> impl Iterator<Item = (&str, Vec<&Event>)> {
        self.by_path
            .iter()
            .map(move |(p, idx)| (p.as_str(), idx.iter().map(|&i| &self.events[i]).collect()))
    }

    pub fn noop_whiteouts(&self) -> &[NoopWhiteout] {
        &self.noops
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Paths alive after `layer`, with their entries.
    pub fn state_at(&self, layer: usize) -> BTreeMap<&str, &FileEntry> {
        let mut replay = Replay::new(self);
        let mut state = BTreeMap::new();
        for l in 0..=layer.min(self.layers.len().saturating_sub(1)) {
            if self.layers.is_empty() {
                break;
            }
            replay.apply(l, &mut state);
        }
        state
    }
}

/// Steps through a history one layer at a time, maintaining the alive set.
pub struct Replay<'h> {
    history: &'h FileHistory,
}

impl<'h> Replay<'h> {
    pub fn new(history: &'h FileHistory) -> Self {
        Replay { history }
    }

    pub fn apply(&mut self, layer: usize, state: &mut BTreeMap<&'h str, &'h FileEntry>) {
        for ev in self.history.layer_events(layer) {
            match ev.action {
                Action::Added | Action::Modified => {
                    state.insert(ev.entry.path.as_str(), &ev.entry);
                }
                Action::Deleted => {
                    state.remove(ev.entry.path.as_str());
                }
            }
        }
    }
}

/// Per-layer working state while building history.
struct LayerWork<'s> {
    layer: usize,
    state: &'s mut BTreeMap<String, FileEntry>,
    before: BTreeMap<String, Option<FileEntry>>,
    written: BTreeSet<String>,
}

impl LayerWork<'_> {
    fn remember(&mut self, path: &str) {
        if !self.before.contains_key(path) {
            self.before
                .insert(path.to_string(), self.state.get(path).cloned());
        }
    }

    fn remove(&mut self, path: &str) {
        self.remember(path);
        self.state.remove(path);
    }

    fn put(&mut self, entry: FileEntry) {
        self.remember(&entry.path);
        self.written.insert(entry.path.clone());
        self.state.insert(entry.path.clone(), entry);
    }

    fn descendants(&self, dir: &str) -> Vec<String> {
        let lo = format!("{dir}/");
        let hi = format!("{dir}0");
        self.state
            .range::<str, _>((
                std::ops::Bound::Included(lo.as_str()),
                std::ops::Bound::Excluded(hi.as_str()),
            ))
            .map(|(k, _)| k.clone())
            .collect()
    }

    fn remove_subtree(&mut self, path: &str, include_self: bool) -> usize {
        let mut n = 0;
        for d in self.descendants(path) {
            self.remove(&d);
            n += 1;
        }
        if include_self && self.state.contains_key(path) {
            self.remove(path);
            n += 1;
        }
        n
    }

    fn ensure_parents(&mut self, path: &str) {
        for dir in ancestors(path) {
            match self.state.get(dir).map(|e| e.kind) {
                Some(EntryKind::Directory) | Some(EntryKind::Symlink) => {}
                Some(_) => {
                    // A non-directory in the way is replaced, as unpackers do.
                    self.remove(dir);
                    self.put(implicit_dir(dir, self.layer));
                }
                None => self.put(implicit_dir(dir, self.layer)),
            }
        }
    }

    fn add(&mut self, mut entry: FileEntry) {
        self.ensure_parents(&entry.path);
        if let Some(existing) = self.state.get(&entry.path) {
            if existing.is_dir() && !entry.is_dir() {
                self.remove_subtree(&entry.path.clone(), false);
            }
        }
        if entry.kind == EntryKind::Hardlink && entry.digest.is_none() {
            if let Some(target) = entry
                .link_target
                .as_deref()
                .and_then(|t| self.state.get(t))
            {
                entry.digest = target.digest.clone();
                entry.size = target.size;
            }
        }
        self.put(entry);
    }
}

fn implicit_dir(path: &str, layer: usize) -> FileEntry {
    FileEntry {
        path: path.to_string(),
        kind: EntryKind::Directory,
        size: 0,
        mode: 0o755,
        link_target: None,
        digest: None,
        layer,
    }
}

/// Replays layer deltas in order and records per-path events.
///
/// Within a layer, whiteouts and opaque markers apply to the lower layers
/// first; the layer's own entries are then applied in archive order. Each
/// path receives at most one event per layer, derived from its state before
/// and after the layer. Directories that re-appear are not Modified.
pub fn build_history(deltas: &[LayerDelta]) -> FileHistory {
    let mut history = FileHistory::default();
    let mut state: BTreeMap<String, FileEntry> = BTreeMap::new();

    for (pos, delta) in deltas.iter().enumerate() {
        if delta.layer != pos {
            debug!("delta at position {pos} claims layer {}", delta.layer);
        }
        let layer = pos;
        let mut work = LayerWork {
            layer,
            state: &mut state,
            before: BTreeMap::new(),
            written: BTreeSet::new(),
        };

        for e in delta.entries.iter().filter(|e| e.is_marker()) {
            let Some(target) = e.target() else { continue };
            let removed = match e.kind {
                EntryKind::Whiteout => work.remove_subtree(&target, true),
                _ => {
                    if target == "/" {
                        let all: Vec<String> = work.state.keys().cloned().collect();
                        all.iter().for_each(|p| work.remove(p));
                        all.len()
                    } else {
                        work.remove_subtree(&target, false)
                    }
                }
            };
            if removed == 0 {
                history.noops.push(NoopWhiteout {
                    layer,
                    marker: e.path.clone(),
                });
            }
        }
        for e in delta.entries.iter().filter(|e| !e.is_marker()) {
            let mut e = e.clone();
            e.layer = layer;
            work.add(e);
        }

        let LayerWork {
            before, written, ..
        } = work;
        let start = history.events.len();
        for (path, old) in before {
            let new = state.get(&path);
            let event = match (old, new) {
                (None, None) => None,
                (Some(old), None) => Some(Event {
                    layer,
                    action: Action::Deleted,
                    entry: old,
                    previous_digest: None,
                }),
                (None, Some(new)) => Some(Event {
                    layer,
                    action: Action::Added,
                    entry: new.clone(),
                    previous_digest: None,
                }),
                (Some(old), Some(new)) => {
                    if (old.is_dir() && new.is_dir()) || !written.contains(&path) {
                        None
                    } else {
                        Some(Event {
                            layer,
                            action: Action::Modified,
                            entry: new.clone(),
                            previous_digest: old.digest,
                        })
                    }
                }
            };
            if let Some(ev) = event {
                history
                    .by_path
                    .entry(path)
                    .or_default()
                    .push(history.events.len());
                history.events.push(ev);
            }
        }
        history.layers.push(start..history.events.len());
    }
    history
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn file(path: &str, body: &[u8]) -> FileEntry {
        FileEntry {
            path: path.into(),
            kind: EntryKind::Regular,
            size: body.len() as u64,
            mode: 0o644,
            link_target: None,
            digest: Some(Digest::of(body)),
            layer: 0,
        }
    }

    fn marker(path: &str, kind: EntryKind) -> FileEntry {
        FileEntry {
            kind,
            digest: None,
            ..file(path, b"")
        }
    }

    fn dir(path: &str) -> FileEntry {
        FileEntry {
            kind: EntryKind::Directory,
            digest: None,
            ..file(path, b"")
        }
    }

    fn delta(layer: usize, entries: Vec<FileEntry>) -> LayerDelta {
        LayerDelta { layer, entries }
    }

    fn actions(h: &FileHistory, path: &str) -> Vec<(usize, Action)> {
        h.path_events(path).map(|e| (e.layer, e.action)).collect()
    }

    #[test]
    fn reappearance_is_modified() {
        let h = build_history(&[delta(0, vec![file("/a", b"1")]), delta(1, vec![file("/a", b"2")])]);
        assert_eq!(actions(&h, "/a"), vec![(0, Action::Added), (1, Action::Modified)]);
        let ev = h.path_events("/a").nth(1).unwrap();
        assert_eq!(ev.previous_digest, Some(Digest::of(b"1")));
        assert!(!ev.content_unchanged());
    }

    #[test]
    fn whiteout_deletes() {
        let h = build_history(&[
            delta(0, vec![file("/etc/os-release", b"ID=x")]),
            delta(1, vec![]),
            delta(2, vec![marker("/etc/.wh.os-release", EntryKind::Whiteout)]),
        ]);
        assert_eq!(
            actions(&h, "/etc/os-release"),
            vec![(0, Action::Added), (2, Action::Deleted)]
        );
        // The parent was created implicitly and never touched again.
        assert_eq!(actions(&h, "/etc"), vec![(0, Action::Added)]);
    }

    #[test]
    fn opaque_clears_lower_contents_only() {
        let h = build_history(&[
            delta(0, vec![dir("/app"), file("/app/x", b"x"), file("/app/y", b"y")]),
            delta(
                1,
                vec![
                    dir("/app"),
                    file("/app/z", b"z"),
                    marker("/app/.wh..wh..opq", EntryKind::OpaqueWhiteout),
                ],
            ),
        ]);
        assert_eq!(actions(&h, "/app/x"), vec![(0, Action::Added), (1, Action::Deleted)]);
        assert_eq!(actions(&h, "/app/y"), vec![(0, Action::Added), (1, Action::Deleted)]);
        assert_eq!(actions(&h, "/app/z"), vec![(1, Action::Added)]);
        assert_eq!(actions(&h, "/app"), vec![(0, Action::Added)]);
    }

    #[test]
    fn directory_whiteout_removes_subtree() {
        let h = build_history(&[
            delta(0, vec![file("/d/a", b"a"), file("/d/e/b", b"b")]),
            delta(1, vec![marker("/.wh.d", EntryKind::Whiteout)]),
        ]);
        for p in ["/d", "/d/a", "/d/e", "/d/e/b"] {
            assert_eq!(actions(&h, p).last(), Some(&(1, Action::Deleted)), "{p}");
        }
    }

    #[test]
    fn whiteout_then_readd_same_layer_is_modified() {
        let h = build_history(&[
            delta(0, vec![file("/a", b"1")]),
            delta(1, vec![file("/a", b"2"), marker("/.wh.a", EntryKind::Whiteout)]),
        ]);
        assert_eq!(actions(&h, "/a"), vec![(0, Action::Added), (1, Action::Modified)]);
    }

    #[test]
    fn recreation_after_delete() {
        let h = build_history(&[
            delta(0, vec![file("/a", b"1")]),
            delta(1, vec![marker("/.wh.a", EntryKind::Whiteout)]),
            delta(2, vec![file("/a", b"3")]),
        ]);
        assert_eq!(
            actions(&h, "/a"),
            vec![(0, Action::Added), (1, Action::Deleted), (2, Action::Added)]
        );
    }

    #[test]
    fn noop_whiteout_is_annotated() {
        let h = build_history(&[delta(0, vec![marker("/tmp/.wh.ghost", EntryKind::Whiteout)])]);
        assert_eq!(h.noop_whiteouts().len(), 1);
        assert!(h.path_events("/tmp/ghost").next().is_none());
    }

    #[test]
    fn file_replacing_directory_deletes_children() {
        let h = build_history(&[
            delta(0, vec![file("/x/inner", b"i")]),
            delta(1, vec![file("/x", b"now a file")]),
        ]);
        assert_eq!(actions(&h, "/x/inner"), vec![(0, Action::Added), (1, Action::Deleted)]);
        assert_eq!(actions(&h, "/x"), vec![(0, Action::Added), (1, Action::Modified)]);
    }

    #[test]
    fn hardlink_digest_from_lower_layer() {
        let mut link = file("/b", b"");
        link.kind = EntryKind::Hardlink;
        link.digest = None;
        link.link_target = Some("/a".into());
        let h = build_history(&[delta(0, vec![file("/a", b"payload")]), delta(1, vec![link])]);
        let ev = h.path_events("/b").next().unwrap();
        assert_eq!(ev.entry.digest, Some(Digest::of(b"payload")));
    }

    #[test]
    fn order_matters() {
        let d0 = delta(0, vec![file("/a", b"1")]);
        let d1 = delta(1, vec![marker("/.wh.a", EntryKind::Whiteout)]);
        let forward = build_history(&[d0.clone(), d1.clone()]);
        let backward = build_history(&[d1, d0]);
        assert!(forward.state_at(1).is_empty());
        assert!(backward.state_at(1).contains_key("/a"));
    }
}
