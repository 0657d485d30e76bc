//! RPM header blobs as stored in the package database: a big-endian index
//! count and data length, `count` 16-byte index entries, then the data
//! store the entries point into.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

pub const TAG_NAME: i32 = 1000;
pub const TAG_VERSION: i32 = 1001;
pub const TAG_RELEASE: i32 = 1002;
pub const TAG_EPOCH: i32 = 1003;
pub const TAG_ARCH: i32 = 1022;
pub const TAG_OLDFILENAMES: i32 = 1027;
pub const TAG_SOURCERPM: i32 = 1044;
pub const TAG_DIRINDEXES: i32 = 1116;
pub const TAG_BASENAMES: i32 = 1117;
pub const TAG_DIRNAMES: i32 = 1118;

/// Magic that precedes headers in package files (not in the database).
pub const HEADER_MAGIC: [u8; 8] = [0x8e, 0xad, 0xe8, 0x01, 0, 0, 0, 0];

const TYPE_NULL: u32 = 0;
const TYPE_CHAR: u32 = 1;
const TYPE_INT8: u32 = 2;
const TYPE_INT16: u32 = 3;
const TYPE_INT32: u32 = 4;
const TYPE_INT64: u32 = 5;
const TYPE_STRING: u32 = 6;
const TYPE_BIN: u32 = 7;
const TYPE_STRING_ARRAY: u32 = 8;
const TYPE_I18NSTRING: u32 = 9;

const MAX_INDEX: usize = 0x10000;
const MAX_DATA: usize = 256 << 20;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Value {
    Null,
    Int(Vec<i64>),
    Str(Vec<String>),
    Bin(Vec<u8>),
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Header {
    pub tags: BTreeMap<i32, Value>,
}

fn be32(b: &[u8], at: usize) -> Option<u32> {
    Some(u32::from_be_bytes(b.get(at..at + 4)?.try_into().ok()?))
}

fn read_cstr(data: &[u8], at: usize) -> Option<(String, usize)> {
    let rest = data.get(at..)?;
    let end = rest.iter().position(|&b| b == 0)?;
    Some((String::from_utf8_lossy(&rest[..end]).into_owned(), at + end + 1))
}

impl Header {
    pub fn parse(blob: &[u8]) -> Result<Header> {
        let bad = |m: &str| Error::MalformedDatabase(format!("rpm header: {m}"));
        let blob = blob.strip_prefix(&HEADER_MAGIC[..]).unwrap_or(blob);
        let il = be32(blob, 0).ok_or_else(|| bad("truncated preamble"))? as usize;
        let dl = be32(blob, 4).ok_or_else(|| bad("truncated preamble"))? as usize;
        if il == 0 || il > MAX_INDEX || dl > MAX_DATA {
            return Err(bad("implausible index or data size"));
        }
        let data_start = 8 + il * 16;
        let data = blob
            .get(data_start..data_start + dl)
            .ok_or_else(|| bad("data store shorter than declared"))?;
        let mut tags = BTreeMap::new();
        for i in 0..il {
            let at = 8 + i * 16;
            let tag = be32(blob, at).ok_or_else(|| bad("truncated index"))? as i32;
            let ty = be32(blob, at + 4).ok_or_else(|| bad("truncated index"))?;
            let offset = be32(blob, at + 8).ok_or_else(|| bad("truncated index"))? as i32;
            let count = be32(blob, at + 12).ok_or_else(|| bad("truncated index"))? as usize;
            if offset < 0 || count > dl.max(1) {
                continue;
            }
            if let Some(v) = decode(data, ty, offset as usize, count) {
                tags.insert(tag, v);
            }
        }
        Ok(Header { tags })
    }

    pub fn string(&self, tag: i32) -> Option<&str> {
        match self.tags.get(&tag)? {
            Value::Str(v) => v.first().map(String::as_str),
            _ => None,
        }
    }

    pub fn strings(&self, tag: i32) -> &[String] {
        match self.tags.get(&tag) {
            Some(Value::Str(v)) => v,
            _ => &[],
        }
    }

    pub fn ints(&self, tag: i32) -> &[i64] {
        match self.tags.get(&tag) {
            Some(Value::Int(v)) => v,
            _ => &[],
        }
    }

    /// Installed paths: `DIRNAMES[DIRINDEXES[i]] + BASENAMES[i]`, or the
    /// flat `OLDFILENAMES` list of older packages.
    pub fn file_names(&self) -> Vec<String> {
        let dirs = self.strings(TAG_DIRNAMES);
        let bases = self.strings(TAG_BASENAMES);
        let idx = self.ints(TAG_DIRINDEXES);
        if !bases.is_empty() {
            return bases
                .iter()
                .zip(idx)
                .filter_map(|(b, &i)| {
                    let d = dirs.get(usize::try_from(i).ok()?)?;
                    Some(format!("{d}{b}"))
                })
                .collect();
        }
        self.strings(TAG_OLDFILENAMES).to_vec()
    }
}

fn decode(data: &[u8], ty: u32, offset: usize, count: usize) -> Option<Value> {
    let ints = |width: usize| -> Option<Value> {
        let bytes = data.get(offset..offset.checked_add(width.checked_mul(count)?)?)?;
        Some(Value::Int(
            bytes
                .chunks_exact(width)
                .map(|c| match width {
                    1 => c[0] as i64,
                    2 => u16::from_be_bytes([c[0], c[1]]) as i64,
                    4 => u32::from_be_bytes([c[0], c[1], c[2], c[3]]) as i64,
                    _ => i64::from_be_bytes(c.try_into().unwrap_or([0; 8])),
                })
                .collect(),
        ))
    };
    match ty {
        TYPE_NULL => Some(Value::Null),
        TYPE_CHAR | TYPE_INT8 => ints(1),
        TYPE_INT16 => ints(2),
        TYPE_INT32 => ints(4),
        TYPE_INT64 => ints(8),
        TYPE_STRING => read_cstr(data, offset).map(|(s, _)| Value::Str(vec![s])),
        TYPE_STRING_ARRAY | TYPE_I18NSTRING => {
            let mut out = Vec::with_capacity(count.min(4096));
            let mut at = offset;
            for _ in 0..count {
                let (s, next) = read_cstr(data, at)?;
                out.push(s);
                at = next;
            }
            Some(Value::Str(out))
        }
        TYPE_BIN => Some(Value::Bin(data.get(offset..offset.checked_add(count)?)?.to_vec())),
        _ => None,
    }
}
