//! RPM package database. The sqlite format (`rpmdb.sqlite`, a `Packages`
//! table of header blobs) is decoded; BerkeleyDB and ndb databases are
//! recognized and reported as unsupported rather than skipped silently.

pub mod header;

use std::fs;

use rusqlite::{Connection, OpenFlags};

pub use header::Header;

use super::{flags, Analyzer, Ecosystem, Findings, Package};
use crate::error::{Error, Result};
use crate::layer_fs::{FileEntry, LayerView};

pub const DB_PATHS: &[&str] = &[
    "/var/lib/rpm/rpmdb.sqlite",
    "/usr/lib/sysimage/rpm/rpmdb.sqlite",
    "/var/lib/rpm/Packages",
    "/usr/lib/sysimage/rpm/Packages",
    "/var/lib/rpm/Packages.db",
    "/usr/lib/sysimage/rpm/Packages.db",
];

const SQLITE_MAGIC: &[u8] = b"SQLite format 3\0";
const NDB_MAGIC: &[u8] = b"RpmP";
const BDB_HASH_MAGIC: u32 = 0x0006_1561;
const BDB_BTREE_MAGIC: u32 = 0x0005_3162;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DbFormat {
    Sqlite,
    BerkeleyDb,
    Ndb,
    Unknown,
}

pub fn sniff_format(bytes: &[u8]) -> DbFormat {
    if bytes.starts_with(SQLITE_MAGIC) {
        return DbFormat::Sqlite;
    }
    if bytes.starts_with(NDB_MAGIC) {
        return DbFormat::Ndb;
    }
    if let Some(m) = bytes.get(12..16) {
        let le = u32::from_le_bytes(m.try_into().expect("4 bytes"));
        let be = u32::from_be_bytes(m.try_into().expect("4 bytes"));
        if [le, be].iter().any(|v| *v == BDB_HASH_MAGIC || *v == BDB_BTREE_MAGIC) {
            return DbFormat::BerkeleyDb;
        }
    }
    DbFormat::Unknown
}

/// Decodes a header blob into a package.
pub fn package_from_header(h: &Header) -> Option<Package> {
    let name = h.string(header::TAG_NAME)?.trim();
    if name.is_empty() {
        return None;
    }
    let version = match (h.string(header::TAG_VERSION), h.string(header::TAG_RELEASE)) {
        (Some(v), Some(r)) if !r.is_empty() => Some(format!("{v}-{r}")),
        (Some(v), _) => Some(v.to_string()),
        _ => None,
    };
    let mut p = Package::new(Ecosystem::Rpm, name, version);
    p.arch = h.string(header::TAG_ARCH).filter(|a| !a.is_empty()).map(str::to_string);
    p.epoch = h.ints(header::TAG_EPOCH).first().map(|e| e.to_string());
    p.owned_files = h.file_names();
    Some(p)
}

/// Parses an rpm database file. `wal` is the sqlite write-ahead log, when
/// one sits next to the database.
pub fn parse_rpm_db(bytes: &[u8], wal: Option<&[u8]>) -> Result<(Vec<Package>, usize)> {
    match sniff_format(bytes) {
        DbFormat::Sqlite => {}
        DbFormat::BerkeleyDb => {
            return Err(Error::UnsupportedDbFormat("BerkeleyDB rpm database".into()))
        }
        DbFormat::Ndb => return Err(Error::UnsupportedDbFormat("ndb rpm database".into())),
        DbFormat::Unknown => {
            return Err(Error::UnsupportedDbFormat("unrecognized rpm database".into()))
        }
    }
    let dir = tempfile::tempdir()?;
    let path = dir.path().join("rpmdb.sqlite");
    fs::write(&path, bytes)?;
    if let Some(w) = wal {
        fs::write(dir.path().join("rpmdb.sqlite-wal"), w)?;
    }
    let db_err = |e: rusqlite::Error| Error::MalformedDatabase(format!("rpmdb.sqlite: {e}"));
    let conn = Connection::open_with_flags(
        &path,
        OpenFlags::SQLITE_OPEN_READ_WRITE | OpenFlags::SQLITE_OPEN_NO_MUTEX,
    )
    .map_err(db_err)?;
    let mut stmt = conn
        .prepare("SELECT blob FROM Packages ORDER BY hnum")
        .map_err(db_err)?;
    let blobs = stmt
        .query_map([], |row| row.get::<_, Vec<u8>>(0))
        .map_err(db_err)?;
    let mut out = Vec::new();
    let mut bad = 0;
    for blob in blobs {
        let Ok(blob) = blob else {
            bad += 1;
            continue;
        };
        match Header::parse(&blob).ok().as_ref().and_then(package_from_header) {
            Some(p) => out.push(p),
            None => bad += 1,
        }
    }
    Ok((out, bad))
}

pub struct RpmAnalyzer;

impl Analyzer for RpmAnalyzer {
    fn name(&self) -> &'static str {
        "rpm"
    }

    fn is_relevant(&self, entry: &FileEntry) -> bool {
        let p = entry.path.as_str();
        p.starts_with("/var/lib/rpm") || p.starts_with("/usr/lib/sysimage/rpm")
            || matches!(p, "/var" | "/var/lib" | "/usr" | "/usr/lib" | "/usr/lib/sysimage")
    }

    fn wants_content(&self, path: &str) -> bool {
        DB_PATHS.contains(&path) || DB_PATHS.iter().any(|d| path.strip_suffix("-wal") == Some(*d))
    }

    fn analyze(&self, view: &LayerView<'_>, out: &mut Findings) {
        let mut seen = Vec::new();
        for source in DB_PATHS {
            let Some(entry) = view.lookup(source) else { continue };
            // /var/lib/rpm is often a symlink to the sysimage location.
            if seen.contains(&entry.path) {
                continue;
            }
            seen.push(entry.path.clone());
            let Some(bytes) = view.read(source) else {
                out.warn(format!("{source}: contents unavailable"));
                continue;
            };
            let wal = view.read(&format!("{source}-wal"));
            match parse_rpm_db(bytes, wal) {
                Ok((pkgs, bad)) => {
                    if bad > 0 {
                        out.warn(format!("{source}: {bad} undecodable header(s)"));
                    }
                    out.packages
                        .extend(pkgs.into_iter().map(|p| p.with_metadata(*source)));
                }
                Err(e) => {
                    out.warn(format!("{source}: {e}"));
                    let mut p = Package::new(Ecosystem::Rpm, "rpmdb", None).with_metadata(*source);
                    p.flag(flags::UNPARSED);
                    out.packages.push(p);
                }
            }
        }
    }
}
