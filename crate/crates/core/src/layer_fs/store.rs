use std::collections::HashMap;
use std::sync::Arc;

use crate::digest::Digest;

pub const GO_BUILDINFO_MAGIC: &[u8] = b"\xff Go buildinf:";

/// How much of an executable to keep once the Go build-info header is found.
pub(crate) const BUILDINFO_WINDOW: usize = 1 << 20;

/// Decides which file contents survive extraction. Everything else is
/// hashed and dropped.
pub trait RetainPolicy: Sync {
    fn keep_content(&self, path: &str, size: u64) -> bool;

    /// Whether executables are searched for Go build information.
    fn scan_executables(&self) -> bool {
        false
    }
}

pub struct RetainNothing;

impl RetainPolicy for RetainNothing {
    fn keep_content(&self, _: &str, _: u64) -> bool {
        false
    }
}

pub struct RetainAll;

impl RetainPolicy for RetainAll {
    fn keep_content(&self, _: &str, _: u64) -> bool {
        true
    }

    fn scan_executables(&self) -> bool {
        true
    }
}

/// Retained file contents keyed by content digest.
#[derive(Clone, Debug, Default)]
pub struct ContentStore {
    blobs: HashMap<Digest, Arc<[u8]>>,
    buildinfo: HashMap<Digest, Arc<[u8]>>,
}

impl ContentStore {
    pub fn insert(&mut self, digest: Digest, bytes: &[u8]) {
        self.blobs
            .entry(digest)
            .or_insert_with(|| Arc::from(bytes));
    }

    pub fn insert_buildinfo(&mut self, digest: Digest, window: &[u8]) {
        self.buildinfo
            .entry(digest)
            .or_insert_with(|| Arc::from(window));
    }

    /// Keeps the build-info window of an executable if it has one.
    pub fn insert_buildinfo_if_present(&mut self, digest: Digest, bytes: &[u8]) -> bool {
        match find_buildinfo(bytes) {
            Some(pos) => {
                let end = bytes.len().min(pos + BUILDINFO_WINDOW);
                self.insert_buildinfo(digest, &bytes[pos..end]);
                true
            }
            None => false,
        }
    }

    pub fn get(&self, digest: &Digest) -> Option<&[u8]> {
        self.blobs.get(digest).map(|b| &b[..])
    }

    /// The bytes starting at the Go build-info header of an executable.
    pub fn buildinfo(&self, digest: &Digest) -> Option<&[u8]> {
        self.buildinfo.get(digest).map(|b| &b[..])
    }

    pub fn merge(&mut self, other: ContentStore) {
        for (k, v) in other.blobs {
            self.blobs.entry(k).or_insert(v);
        }
        for (k, v) in other.buildinfo {
            self.buildinfo.entry(k).or_insert(v);
        }
    }

    pub fn len(&self) -> usize {
        self.blobs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blobs.is_empty() && self.buildinfo.is_empty()
    }

    pub fn retained_bytes(&self) -> usize {
        self.blobs.values().map(|b| b.len()).sum::<usize>()
            + self.buildinfo.values().map(|b| b.len()).sum::<usize>()
    }
}

/// Finds the build-info header inside an executable. The header sits at a
/// 16-byte aligned offset; unaligned hits (e.g. the literal inside the Go
/// toolchain itself) are only used when nothing aligned exists.
pub(crate) fn find_buildinfo(bytes: &[u8]) -> Option<usize> {
    let finder = memchr::memmem::Finder::new(GO_BUILDINFO_MAGIC);
    let mut first = None;
    for pos in finder.find_iter(bytes) {
        if pos % 16 == 0 {
            return Some(pos);
        }
        first.get_or_insert(pos);
    }
    first
}
