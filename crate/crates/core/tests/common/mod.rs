//! Synthetic images shared by the integration and acceptance tests.
#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use stratascan::analyzers::PackageId;
use stratascan::detect::Tactic;
use stratascan::image_io::{HistoryEntry, ImageSource, LoadOptions};
use stratascan::scan::{scan, ScanOptions, ScanResult};
use stratascan::synth::{ImageBuilder, LayerBuilder};

pub const BASE_CREATED_BY: &str = "/bin/sh -c #(nop) ADD file:4c1f9a0e2b in / ";

/// (package, version, installed files)
const DEBS: &[(&str, &str, &[&str])] = &[
    ("base-files", "12.4+deb12u5", &["/etc/debian_version", "/etc/issue", "/etc/host.conf", "/usr/lib/os-release"]),
    ("coreutils", "9.1-1", &["/usr/bin/ls", "/usr/bin/cat", "/usr/bin/cp", "/usr/bin/mv", "/usr/bin/rm", "/usr/bin/ln"]),
    ("gzip", "1.12-1", &["/usr/bin/gzip", "/usr/bin/gunzip", "/usr/share/doc/gzip/copyright"]),
    ("libc6", "2.36-9+deb12u4", &["/usr/lib/x86_64-linux-gnu/libc.so.6", "/usr/lib/x86_64-linux-gnu/libm.so.6", "/usr/lib/x86_64-linux-gnu/ld-linux-x86-64.so.2"]),
    ("python3.11-minimal", "3.11.2-6", &["/usr/bin/python3.11", "/usr/lib/python3.11/os.py", "/usr/lib/python3.11/site.py"]),
];

/// (distribution, version, modules)
const WHEELS: &[(&str, &str, &[&str])] = &[
    ("six", "1.16.0", &["six.py"]),
    ("requests", "2.31.0", &["requests/__init__.py", "requests/api.py", "requests/models.py", "requests/sessions.py"]),
    ("idna", "3.6", &["idna/__init__.py", "idna/core.py", "idna/codec.py"]),
];

pub const SITE: &str = "/usr/lib/python3/dist-packages";

fn dpkg_status() -> String {
    let mut s = String::new();
    for (name, version, _) in DEBS {
        s.push_str(&format!(
            "Package: {name}\nStatus: install ok installed\nPriority: required\nArchitecture: amd64\nVersion: {version}\nDescription: {name} package\n\n"
        ));
    }
    s
}

fn add_wheel(mut l: LayerBuilder, name: &str, version: &str, modules: &[&str]) -> LayerBuilder {
    let dist = format!("{name}-{version}.dist-info");
    let mut record = String::new();
    for m in modules {
        l = l.file(&format!("{SITE}/{m}"), format!("# {m}\n"));
        record.push_str(&format!("{m},,\n"));
    }
    for f in ["METADATA", "RECORD", "INSTALLER"] {
        record.push_str(&format!("{dist}/{f},,\n"));
    }
    l.file(&format!("{SITE}/{dist}/METADATA"), format!("Metadata-Version: 2.1\nName: {name}\nVersion: {version}\n\n"))
        .file(&format!("{SITE}/{dist}/RECORD"), record)
        .file(&format!("{SITE}/{dist}/INSTALLER"), "pip\n")
}

/// A small Debian-like root filesystem with dpkg and pip packages.
pub fn base_layer() -> LayerBuilder {
    let mut l = LayerBuilder::new(BASE_CREATED_BY)
        .file("/etc/os-release", "PRETTY_NAME=\"Debian GNU/Linux 12 (bookworm)\"\nID=debian\nVERSION_ID=\"12\"\n")
        .file("/var/lib/dpkg/status", dpkg_status())
        .file("/etc/passwd", "root:x:0:0:root:/root:/bin/bash\n")
        .file("/etc/group", "root:x:0:\n")
        .file("/etc/hostname", "fixture\n")
        .file("/etc/hosts", "127.0.0.1 localhost\n")
        .file("/root/.bashrc", "export PS1='# '\n")
        .symlink("/usr/bin/python3", "python3.11")
        .symlink("/bin", "usr/bin");
    for (name, _, files) in DEBS {
        let mut list = String::new();
        for f in files.iter() {
            l = if f.starts_with("/usr/bin/") { l.executable(f, format!("ELF {f}")) } else { l.file(f, format!("{name}: {f}\n")) };
            list.push_str(f);
            list.push('\n');
        }
        l = l.file(&format!("/var/lib/dpkg/info/{name}.list"), list).file(&format!("/var/lib/dpkg/info/{name}.md5sums"), "");
    }
    for (name, version, modules) in WHEELS {
        l = add_wheel(l, name, version, modules);
    }
    l.file("/app/requirements.txt", "requests==2.31.0\nsix==1.16.0\nidna==3.6\n")
        .file("/app/main.py", "import requests\n")
        .file("/app/settings.py", "DEBUG = False\n")
}

fn app_layer() -> LayerBuilder {
    LayerBuilder::new("COPY . /app # buildkit").file("/app/README", "fixture app\n")
}

fn base_image(name: &str) -> ImageBuilder {
    ImageBuilder::new(name).layer(base_layer()).instruction("WORKDIR /app").layer(app_layer())
}

pub fn baseline() -> ImageBuilder {
    base_image("fixtures/baseline:1").instruction("CMD [\"python3\", \"/app/main.py\"]")
}

pub const URL_DOWNLOAD: &str = "https://downloads.example.com/releases/tool-2.4.1.tar.gz";

/// The image for one obscuration tactic, built on top of [`baseline`].
pub fn tactic_image(t: Tactic) -> ImageBuilder {
    let name = format!("fixtures/{}:1", t.as_str().to_ascii_lowercase());
    let img = base_image(&name);
    let img = match t {
        Tactic::Os => img.layer(LayerBuilder::new("/bin/sh -c rm -f /etc/os-release").whiteout("/etc/os-release")),
        Tactic::OsPkg => img.layer(LayerBuilder::new("/bin/sh -c rm -rf /var/lib/dpkg").whiteout("/var/lib/dpkg")),
        Tactic::Dep => img.layer(LayerBuilder::new("/bin/sh -c rm /app/requirements.txt").whiteout("/app/requirements.txt")),
        Tactic::Pkg => img.layer(
            LayerBuilder::new(format!("/bin/sh -c rm -rf {SITE}/requests-2.31.0.dist-info"))
                .whiteout(&format!("{SITE}/requests-2.31.0.dist-info")),
        ),
        Tactic::Url => img.layer(
            LayerBuilder::new(format!("/bin/sh -c curl -fsSL {URL_DOWNLOAD} | tar -xz -C /opt"))
                .executable("/opt/tool-2.4.1/bin/tool", "#!/bin/sh\necho tool\n")
                .file("/opt/tool-2.4.1/LICENSE", "MIT\n"),
        ),
        Tactic::Link => img.layer(LayerBuilder::new("/bin/sh -c ln -s /var/lib/dpkg /opt/pkgdb").symlink("/opt/pkgdb", "/var/lib/dpkg")),
        Tactic::Alias => img.layer(
            LayerBuilder::new("/bin/sh -c echo \"alias pip='pip --disable-pip-version-check'\" >> /root/.bashrc")
                .file("/root/.bashrc", "export PS1='# '\nalias pip='pip --disable-pip-version-check'\n"),
        ),
        Tactic::Compress => {
            // Every build step squashed into one layer whose history still
            // lists three layer-producing steps.
            let merged = base_layer().file("/app/README", "fixture app\n");
            ImageBuilder::new(&name).layer(merged).history(vec![
                HistoryEntry { created_by: BASE_CREATED_BY.into(), ..Default::default() },
                HistoryEntry { created_by: "COPY . /app # buildkit".into(), ..Default::default() },
                HistoryEntry { created_by: "/bin/sh -c pip install requests".into(), ..Default::default() },
            ])
        }
    };
    img.instruction("CMD [\"python3\", \"/app/main.py\"]")
}

/// Writes `img` as an OCI layout under `root` and returns its path.
pub fn write(img: &ImageBuilder, root: &Path) -> PathBuf {
    let dir = root.join(img.name().replace([':', '/'], "_"));
    img.write_oci_layout(&dir).expect("write fixture");
    dir
}

pub fn scan_dir(dir: &Path) -> ScanResult {
    scan(&ImageSource::oci_layout(dir), &LoadOptions::default(), &ScanOptions::default()).expect("scan fixture")
}

pub fn ids(r: &ScanResult) -> BTreeSet<PackageId> {
    r.package_ids()
}

pub fn tactic_fixtures() -> Vec<(Tactic, ImageBuilder)> {
    Tactic::ALL.into_iter().map(|t| (t, tactic_image(t))).collect()
}
