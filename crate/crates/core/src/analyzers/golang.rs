//! Go modules: build information embedded in executables, plus `go.mod`
//! and `go.sum` as declared dependencies.

use super::{flags, Analyzer, Ecosystem, Findings, Package, Provenance};
use crate::layer_fs::{split_path, FileEntry, LayerView, GO_BUILDINFO_MAGIC};

const HEADER_LEN: usize = 32;
const FLAG_INLINE: u8 = 0x2;
const SENTINEL_LEN: usize = 16;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GoModule {
    pub path: String,
    pub version: Option<String>,
    pub sum: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BuildInfo {
    pub go_version: String,
    pub path: String,
    pub main: Option<GoModule>,
    pub deps: Vec<GoModule>,
    pub settings: Vec<(String, String)>,
}

#[derive(Debug, PartialEq, Eq)]
pub enum BuildInfoError {
    NoHeader,
    /// Pre-1.18 layout that stores pointers into the data segment.
    PointerFormat,
    Truncated,
}

fn uvarint(b: &[u8]) -> Option<(u64, usize)> {
    let mut x = 0u64;
    for (i, &byte) in b.iter().enumerate().take(10) {
        x |= u64::from(byte & 0x7f) << (7 * i);
        if byte < 0x80 {
            return Some((x, i + 1));
        }
    }
    None
}

fn read_string(b: &[u8], pos: &mut usize) -> Option<Vec<u8>> {
    let (len, n) = uvarint(b.get(*pos..)?)?;
    let start = *pos + n;
    let end = start.checked_add(usize::try_from(len).ok()?)?;
    let s = b.get(start..end)?.to_vec();
    *pos = end;
    Some(s)
}

fn module(fields: &[&str]) -> Option<GoModule> {
    let path = fields.first()?.to_string();
    let version = fields
        .get(1)
        .filter(|v| !v.is_empty() && **v != "(devel)")
        .map(|v| v.to_string());
    let sum = fields.get(2).filter(|s| !s.is_empty()).map(|s| s.to_string());
    Some(GoModule { path, version, sum })
}

/// Parses the textual module info (`path`, `mod`, `dep`, `=>`, `build`).
pub fn parse_modinfo(text: &str) -> BuildInfo {
    let mut info = BuildInfo::default();
    for line in text.lines() {
        let mut parts = line.split('\t');
        let key = parts.next().unwrap_or_default();
        let fields: Vec<&str> = parts.collect();
        match key {
            "path" => info.path = fields.first().unwrap_or(&"").to_string(),
            "mod" => info.main = module(&fields),
            "dep" => info.deps.extend(module(&fields)),
            "=>" => {
                // A replacement applies to the preceding dep.
                if let (Some(last), Some(m)) = (info.deps.last_mut(), module(&fields)) {
                    *last = m;
                }
            }
            "build" => {
                if let Some((k, v)) = fields.first().and_then(|f| f.split_once('=')) {
                    info.settings.push((k.to_string(), v.to_string()));
                }
            }
            _ => {}
        }
    }
    info
}

/// Decodes build information from bytes starting at (or containing) the
/// build-info header.
pub fn parse_buildinfo(bytes: &[u8]) -> Result<BuildInfo, BuildInfoError> {
    let start = memchr::memmem::find(bytes, GO_BUILDINFO_MAGIC).ok_or(BuildInfoError::NoHeader)?;
    let b = &bytes[start..];
    if b.len() < HEADER_LEN {
        return Err(BuildInfoError::Truncated);
    }
    if b[15] & FLAG_INLINE == 0 {
        return Err(BuildInfoError::PointerFormat);
    }
    let mut pos = HEADER_LEN;
    let version = read_string(b, &mut pos).ok_or(BuildInfoError::Truncated)?;
    let raw = read_string(b, &mut pos).ok_or(BuildInfoError::Truncated)?;
    let modinfo = if raw.len() >= 2 * SENTINEL_LEN { &raw[SENTINEL_LEN..raw.len() - SENTINEL_LEN] } else { &[][..] };
    let mut info = parse_modinfo(&String::from_utf8_lossy(modinfo));
    info.go_version = String::from_utf8_lossy(&version).into_owned();
    Ok(info)
}

/// `require` entries of a go.mod, single-line and block forms.
pub fn parse_go_mod(text: &str) -> Vec<(String, String)> {
    let mut out = Vec::new();
    let mut in_block = false;
    for raw in text.lines() {
        let line = raw.split("//").next().unwrap_or_default().trim();
        if in_block {
            if line == ")" {
                in_block = false;
                continue;
            }
        } else if line == "require (" || line == "require(" {
            in_block = true;
            continue;
        }
        let spec = if in_block {
            line
        } else if let Some(rest) = line.strip_prefix("require ") {
            rest.trim()
        } else {
            continue;
        };
        let mut it = spec.split_whitespace();
        if let (Some(p), Some(v)) = (it.next(), it.next()) {
            out.push((p.to_string(), v.to_string()));
        }
    }
    out
}

/// Module versions listed in a go.sum, deduplicated.
pub fn parse_go_sum(text: &str) -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = Vec::new();
    for line in text.lines() {
        let mut it = line.split_whitespace();
        let (Some(p), Some(v)) = (it.next(), it.next()) else { continue };
        let v = v.strip_suffix("/go.mod").unwrap_or(v);
        let item = (p.to_string(), v.to_string());
        if !out.contains(&item) {
            out.push(item);
        }
    }
    out
}

pub struct GoAnalyzer;

impl GoAnalyzer {
    fn binary(&self, e: &FileEntry, window: &[u8], out: &mut Findings) {
        match parse_buildinfo(window) {
            Ok(info) => {
                if let Some(m) = &info.main {
                    let mut p = Package::new(Ecosystem::Golang, m.path.clone(), m.version.clone())
                        .with_provenance(Provenance::Binary)
                        .with_metadata(e.path.clone());
                    p.owned_files.push(e.path.clone());
                    out.packages.push(p);
                }
                for d in &info.deps {
                    out.packages.push(
                        Package::new(Ecosystem::Golang, d.path.clone(), d.version.clone())
                            .with_provenance(Provenance::Binary)
                            .with_metadata(e.path.clone()),
                    );
                }
                if info.main.is_none() && info.deps.is_empty() {
                    out.warn(format!("{}: {} binary without module info", e.path, info.go_version));
                }
            }
            Err(err) => {
                let (_, base) = split_path(&e.path);
                let mut p = Package::new(Ecosystem::Golang, base, None)
                    .with_provenance(Provenance::Binary)
                    .with_metadata(e.path.clone());
                p.flag(flags::UNREADABLE_BUILDINFO);
                p.owned_files.push(e.path.clone());
                out.packages.push(p);
                out.warn(format!("{}: unreadable Go build info ({err:?})", e.path));
            }
        }
    }
}

impl Analyzer for GoAnalyzer {
    fn name(&self) -> &'static str {
        "golang"
    }

    fn is_relevant(&self, entry: &FileEntry) -> bool {
        entry.is_executable() || matches!(entry.basename(), "go.mod" | "go.sum")
    }

    fn wants_content(&self, path: &str) -> bool {
        matches!(split_path(path).1, "go.mod" | "go.sum")
    }

    fn scans_executables(&self) -> bool {
        true
    }

    fn analyze(&self, view: &LayerView<'_>, out: &mut Findings) {
        for e in view.iter().filter(|e| !e.is_dir()) {
            if let Some(window) = view.buildinfo(e) {
                self.binary(e, window, out);
                continue;
            }
            let parsed = match e.basename() {
                "go.mod" => view.read_text(&e.path).map(|t| parse_go_mod(&t)),
                "go.sum" => view.read_text(&e.path).map(|t| parse_go_sum(&t)),
                _ => None,
            };
            for (path, version) in parsed.unwrap_or_default() {
                out.packages.push(
                    Package::new(Ecosystem::Golang, path, Some(version))
                        .with_provenance(Provenance::Declared)
                        .with_metadata(e.path.clone()),
                );
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analyzers::tests_support::ViewFixture;

    const FIXTURE: &[u8] = include_bytes!("../../tests/fixtures/go/buildinfo-fixture");
    const GO_VERSION_M: &str = include_str!("../../tests/fixtures/go/go-version-m.txt");
    const GO_MOD: &str = include_str!("../../tests/fixtures/go/go.mod.txt");

    /// `go version -m` output, read independently of the binary decoder.
    fn toolchain_listing() -> (String, Vec<(String, Option<String>)>) {
        let mut lines = GO_VERSION_M.lines();
        let go = lines.next().unwrap().rsplit(' ').next().unwrap().to_string();
        let mut mods = Vec::new();
        for l in lines {
            let f: Vec<&str> = l.trim_start_matches('\t').split('\t').collect();
            if f[0] == "mod" || f[0] == "dep" {
                let v = Some(f[2].to_string()).filter(|v| v != "(devel)");
                mods.push((f[1].to_string(), v));
            }
        }
        (go, mods)
    }

    #[test]
    fn fixture_matches_toolchain() {
        let info = parse_buildinfo(FIXTURE).unwrap();
        let (go, expected) = toolchain_listing();
        assert_eq!(info.go_version, go);
        assert_eq!(info.path, "example.com/buildinfo-fixture");
        let mut got: Vec<(String, Option<String>)> =
            info.main.iter().chain(&info.deps).map(|m| (m.path.clone(), m.version.clone())).collect();
        got.sort();
        let mut expected = expected;
        expected.sort();
        assert_eq!(got, expected);
        assert!(info.settings.contains(&("GOOS".into(), "linux".into())));
    }

    #[test]
    fn analyzer_owns_binary_with_main_module() {
        let fx = ViewFixture::from_bytes(&[("/usr/local/bin/fixture", FIXTURE)], 0o755);
        let mut f = Findings::default();
        GoAnalyzer.analyze(&fx.view(), &mut f);
        assert_eq!(f.packages.len(), 4);
        let owners: Vec<_> = f.packages.iter().filter(|p| !p.owned_files.is_empty()).collect();
        assert_eq!(owners.len(), 1);
        assert_eq!(owners[0].name, "example.com/buildinfo-fixture");
        assert!(owners[0].version.is_none());
        assert!(f.packages.iter().all(|p| p.provenance == Provenance::Binary));
    }

    #[test]
    fn pointer_format_is_flagged() {
        let mut bin = vec![0u8; 64];
        bin[..14].copy_from_slice(GO_BUILDINFO_MAGIC);
        bin[14] = 8;
        assert_eq!(parse_buildinfo(&bin), Err(BuildInfoError::PointerFormat));
        let fx = ViewFixture::from_bytes(&[("/bin/old", &bin)], 0o755);
        let mut f = Findings::default();
        GoAnalyzer.analyze(&fx.view(), &mut f);
        assert!(f.packages[0].has_flag(flags::UNREADABLE_BUILDINFO));
        assert_eq!(f.warnings.len(), 1);
    }

    #[test]
    fn go_mod_and_sum() {
        let reqs = parse_go_mod(GO_MOD);
        assert_eq!(reqs.len(), 3);
        assert_eq!(reqs[0], ("github.com/acme/greet".into(), "v1.4.2".into()));
        let single = parse_go_mod("module x\nrequire golang.org/x/text v0.14.0 // indirect\n");
        assert_eq!(single, vec![("golang.org/x/text".into(), "v0.14.0".into())]);
        let sum = parse_go_sum("a v1.0.0 h1:x=\na v1.0.0/go.mod h1:y=\nb v2.0.0/go.mod h1:z=\n");
        assert_eq!(sum, vec![("a".into(), "v1.0.0".into()), ("b".into(), "v2.0.0".into())]);
    }

    #[test]
    fn truncated_inputs_do_not_panic() {
        for n in 0..FIXTURE.len().min(2048) {
            let start = memchr::memmem::find(FIXTURE, GO_BUILDINFO_MAGIC).unwrap();
            let _ = parse_buildinfo(&FIXTURE[start..start + n.min(FIXTURE.len() - start)]);
        }
    }
}
