//! Package URLs (`pkg:type/namespace/name@version?qualifiers`).

use percent_encoding::{utf8_percent_encode, AsciiSet, NON_ALPHANUMERIC};

use crate::analyzers::{normalize_name, Ecosystem, OsRelease, Package};

/// Everything except unreserved characters is escaped.
const COMPONENT: &AsciiSet = &NON_ALPHANUMERIC.remove(b'-').remove(b'.').remove(b'_').remove(b'~');

fn enc(s: &str) -> String {
    utf8_percent_encode(s, COMPONENT).to_string()
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Purl {
    pub ty: String,
    pub namespace: Vec<String>,
    pub name: String,
    pub version: Option<String>,
    pub qualifiers: Vec<(String, String)>,
}

impl Purl {
    pub fn new(ty: &str, name: impl Into<String>, version: Option<String>) -> Self {
        Purl { ty: ty.into(), name: name.into(), version, ..Default::default() }
    }

    pub fn namespace(mut self, ns: impl IntoIterator<Item = impl Into<String>>) -> Self {
        self.namespace = ns.into_iter().map(Into::into).filter(|s: &String| !s.is_empty()).collect();
        self
    }

    pub fn qualifier(mut self, key: &str, value: Option<&str>) -> Self {
        if let Some(v) = value.filter(|v| !v.is_empty()) {
            self.qualifiers.push((key.to_string(), v.to_string()));
        }
        self
    }
}

impl std::fmt::Display for Purl {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "pkg:{}/", self.ty)?;
        for seg in &self.namespace {
            write!(f, "{}/", enc(seg))?;
        }
        f.write_str(&enc(&self.name))?;
        if let Some(v) = &self.version {
            write!(f, "@{}", enc(v))?;
        }
        let mut q = self.qualifiers.clone();
        q.sort();
        for (i, (k, v)) in q.iter().enumerate() {
            write!(f, "{}{}={}", if i == 0 { '?' } else { '&' }, k, enc(v))?;
        }
        Ok(())
    }
}

fn distro(os: Option<&OsRelease>) -> Option<String> {
    os.map(|o| match &o.version_id {
        Some(v) => format!("{}-{v}", o.id),
        None => o.id.clone(),
    })
}

/// The purl for an analyzed package. `os` supplies the distribution
/// namespace for OS packages.
pub fn package_purl(p: &Package, os: Option<&OsRelease>) -> Purl {
    let version = p.version.clone();
    let os_ns = |fallback: &str| os.map_or(fallback.to_string(), |o| o.id.clone());
    match p.ecosystem {
        Ecosystem::Deb => Purl::new("deb", &p.name, version)
            .namespace([os_ns("debian")])
            .qualifier("arch", p.arch.as_deref())
            .qualifier("distro", distro(os).as_deref()),
        Ecosystem::Apk => Purl::new("apk", &p.name, version)
            .namespace([os_ns("alpine")])
            .qualifier("arch", p.arch.as_deref())
            .qualifier("distro", distro(os).as_deref()),
        Ecosystem::Rpm => Purl::new("rpm", &p.name, version)
            .namespace([os_ns("redhat")])
            .qualifier("arch", p.arch.as_deref())
            .qualifier("epoch", p.epoch.as_deref().filter(|e| *e != "0"))
            .qualifier("distro", distro(os).as_deref()),
        Ecosystem::Pypi => Purl::new("pypi", normalize_name(Ecosystem::Pypi, &p.name), version),
        Ecosystem::Npm => match p.name.strip_prefix('@').and_then(|s| s.split_once('/')) {
            Some((scope, name)) => Purl::new("npm", name, version).namespace([format!("@{scope}")]),
            None => Purl::new("npm", &p.name, version),
        },
        Ecosystem::Gem => Purl::new("gem", &p.name, version),
        Ecosystem::Composer => {
            let lower = p.name.to_ascii_lowercase();
            match lower.split_once('/') {
                Some((vendor, name)) => Purl::new("composer", name, version).namespace([vendor]),
                None => Purl::new("composer", lower.as_str(), version),
            }
        }
        Ecosystem::Golang => {
            let mut segs: Vec<&str> = p.name.split('/').collect();
            let name = segs.pop().unwrap_or_default();
            Purl::new("golang", name, version).namespace(segs)
        }
        Ecosystem::External => Purl::new("generic", &p.name, version),
    }
}
