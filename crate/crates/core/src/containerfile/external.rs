use std::collections::BTreeSet;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use url::Url;

use super::shell::{program_name, split_commands, strip_wrappers};
use super::{EnvContext, Instruction, Verb};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RefKind {
    GitRepository,
    Archive,
    Binary,
    Script,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExternalPackageRef {
    pub url: String,
    pub kind: RefKind,
    pub inferred_name: String,
    pub inferred_version: Option<String>,
    pub layer: Option<usize>,
    /// The program that fetched it (`curl`, `git`, `ADD`, ...).
    pub command: String,
}

const ARCHIVE_EXTS: &[&str] = &[
    ".tar.gz", ".tar.bz2", ".tar.xz", ".tar.zst", ".tgz", ".tbz2", ".txz", ".tar", ".zip", ".gz",
    ".bz2", ".xz", ".zst", ".whl", ".gem", ".jar", ".war", ".deb", ".rpm", ".apk", ".7z",
];
const SCRIPT_EXTS: &[&str] = &[".sh", ".bash", ".py", ".pl", ".rb", ".ps1"];

/// Options that take a separate value for the commands we inspect; the value
/// is skipped so e.g. `curl -o /tmp/x URL` does not read `/tmp/x` as input.
fn option_takes_value(program: &str, opt: &str) -> bool {
    match program {
        "curl" => matches!(
            opt,
            "-o" | "--output" | "-H" | "--header" | "-u" | "--user" | "-A" | "--user-agent"
                | "-e" | "--referer" | "-d" | "--data" | "-x" | "--proxy" | "-m" | "--max-time"
                | "--retry" | "--connect-timeout" | "-w" | "--write-out" | "-K" | "--config"
                | "--cacert" | "-E" | "--cert" | "-b" | "--cookie" | "-c" | "--cookie-jar"
        ),
        "wget" => matches!(
            opt,
            "-O" | "--output-document" | "-P" | "--directory-prefix" | "-o" | "--output-file"
                | "-U" | "--user-agent" | "--header" | "-t" | "--tries" | "-T" | "--timeout"
        ),
        "git" => matches!(
            opt,
            "-b" | "--branch" | "--depth" | "-o" | "--origin" | "-c" | "--config" | "--reference"
                | "--filter" | "-j" | "--jobs" | "-u" | "--upload-pack" | "--separate-git-dir"
        ),
        _ => false,
    }
}

/// Commands whose URL arguments name packages. `extra` comes from the
/// pattern configuration.
fn is_fetch_program(program: &str, extra: &BTreeSet<String>) -> bool {
    matches!(
        program,
        "curl" | "wget" | "git" | "pip" | "pip3" | "npm" | "yarn" | "gem" | "go" | "composer"
            | "aria2c" | "fetch" | "svn" | "hg"
    ) || extra.contains(program)
}

fn valid_url(s: &str) -> Option<String> {
    let candidate = s.trim_matches(|c| c == '"' || c == '\'');
    let candidate = candidate.strip_prefix("git+").unwrap_or(candidate);
    let lower = candidate.to_ascii_lowercase();
    let ok_scheme = ["http://", "https://", "ftp://", "git://", "ssh://"]
        .iter()
        .any(|p| lower.starts_with(p));
    if !ok_scheme {
        // scp-like git@host:org/repo.git
        if let Some(rest) = candidate.strip_prefix("git@") {
            if rest.contains(':') && !rest.contains(' ') {
                return Some(candidate.to_string());
            }
        }
        return None;
    }
    let parsed = Url::parse(candidate).ok()?;
    parsed.host_str()?;
    Some(candidate.to_string())
}

fn url_path(url: &str) -> String {
    match Url::parse(url) {
        Ok(u) => u.path().to_string(),
        Err(_) => url.split_once(':').map(|(_, p)| p.to_string()).unwrap_or_default(),
    }
}

fn classify(url: &str, program: &str, subcommand: Option<&str>) -> RefKind {
    let path = url_path(url).to_ascii_lowercase();
    if program == "git" && subcommand == Some("clone")
        || path.ends_with(".git")
        || url.starts_with("git")
        || program == "svn"
        || program == "hg"
    {
        return RefKind::GitRepository;
    }
    if ARCHIVE_EXTS.iter().any(|e| path.ends_with(e)) {
        return RefKind::Archive;
    }
    if SCRIPT_EXTS.iter().any(|e| path.ends_with(e)) {
        return RefKind::Script;
    }
    if matches!(program, "pip" | "pip3" | "npm" | "yarn" | "gem" | "composer") {
        return RefKind::Archive;
    }
    RefKind::Binary
}

fn version_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"^[vV]?(\d+(?:\.\d+){1,3}(?:-?(?:rc|alpha|beta|pre|dev|a|b)\.?\d*)?)$")
            .expect("static regex")
    })
}

fn strip_extensions(segment: &str) -> &str {
    let lower = segment.to_ascii_lowercase();
    for e in ARCHIVE_EXTS.iter().chain(SCRIPT_EXTS).chain(&[".git", ".bin", ".exe"]) {
        if lower.ends_with(e) && segment.len() > e.len() {
            return &segment[..segment.len() - e.len()];
        }
    }
    segment
}

/// Last token (or hyphen-joined token pair, for `1.2.3-rc1`) that looks
/// like a release number, with its index.
fn find_version(tokens: &[&str]) -> Option<(String, usize)> {
    for i in (0..tokens.len()).rev() {
        if let Some(next) = tokens.get(i + 1) {
            if let Some(c) = version_re().captures(&format!("{}-{}", tokens[i], next)) {
                return Some((c[1].to_string(), i));
            }
        }
        if let Some(c) = version_re().captures(tokens[i]) {
            return Some((c[1].to_string(), i));
        }
    }
    None
}

/// Infers `(name, version)` from a URL's path. The version is the last
/// hyphen- or slash-delimited token that looks like a release number; the
/// name is whatever precedes it in the final segment, falling back to the
/// nearest meaningful path segment.
pub fn infer_name_version(url: &str) -> (String, Option<String>) {
    let path = url_path(url);
    let segments: Vec<&str> = path.split('/').filter(|s| !s.is_empty()).collect();
    let Some(last) = segments.last() else {
        let host = Url::parse(url)
            .ok()
            .and_then(|u| u.host_str().map(str::to_string))
            .unwrap_or_else(|| url.to_string());
        return (host, None);
    };
    let stem = strip_extensions(last);

    // Tokens of the last segment first, then earlier segments (for
    // `/releases/download/v1.2.3/tool` layouts).
    let tokens: Vec<&str> = stem.split(['-', '_']).collect();
    let (mut version, name_end) = match find_version(&tokens) {
        Some((v, i)) => (Some(v), i),
        None => (None, tokens.len()),
    };
    let mut name = tokens[..name_end].join("-");
    if version.is_none() {
        version = segments[..segments.len() - 1]
            .iter()
            .rev()
            .find_map(|seg| find_version(&seg.split(['-', '_']).collect::<Vec<_>>()))
            .map(|(v, _)| v);
    }
    if name.is_empty() {
        // "v1.2.3.tar.gz" style: the project name is an earlier segment.
        name = segments[..segments.len() - 1]
            .iter()
            .rev()
            .find(|s| {
                !version_re().is_match(s)
                    && !matches!(
                        **s,
                        "download" | "downloads" | "releases" | "archive" | "refs" | "tags"
                            | "raw" | "latest" | "files" | "dist" | "tarball" | "zipball"
                    )
            })
            .map(|s| strip_extensions(s).to_string())
            .unwrap_or_else(|| stem.to_string());
    }
    if name.is_empty() {
        name = last.to_string();
    }
    (name, version)
}

/// Scans instructions in order, interpolating each against the ENV/ARG
/// context accumulated so far, and returns the external downloads found.
/// `extra_commands` adds program names whose URL arguments count.
pub fn extract_external_packages(
    instrs: &[Instruction],
    extra_commands: &[String],
) -> Vec<ExternalPackageRef> {
    let extra: BTreeSet<String> = extra_commands.iter().cloned().collect();
    let mut ctx = EnvContext::new();
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for instr in instrs {
        let text = super::interpolate(instr, &ctx).text;
        match instr.verb {
            Verb::Run => {
                for cmd in split_commands(&text) {
                    scan_command(strip_wrappers(&cmd), instr.layer, &extra, &mut seen, &mut out);
                }
            }
            Verb::Add => {
                let words: Vec<String> = split_commands(&text).into_iter().flatten().collect();
                // Last word is the destination.
                let sources = words.len().saturating_sub(1);
                for w in words.iter().take(sources).filter(|w| !w.starts_with("--")) {
                    if let Some(url) = valid_url(w) {
                        push(&mut out, &mut seen, &url, "ADD", None, instr.layer);
                    }
                }
            }
            _ => {}
        }
        ctx.apply(instr);
    }
    out
}

fn scan_command(
    words: &[String],
    layer: Option<usize>,
    extra: &BTreeSet<String>,
    seen: &mut BTreeSet<String>,
    out: &mut Vec<ExternalPackageRef>,
) {
    let Some(first) = words.first() else { return };
    let program = program_name(first);
    if !is_fetch_program(program, extra) {
        return;
    }
    let subcommand = words.get(1).map(String::as_str).filter(|w| !w.starts_with('-'));
    let mut branch = None;
    let mut i = 1;
    while i < words.len() {
        let w = words[i].as_str();
        if w.starts_with('-') {
            if let Some((opt, val)) = w.split_once('=') {
                if program == "git" && opt == "--branch" {
                    branch = Some(val.to_string());
                }
            } else if option_takes_value(program, w) {
                if program == "git" && (w == "-b" || w == "--branch") {
                    branch = words.get(i + 1).cloned();
                }
                i += 2;
                continue;
            }
            i += 1;
            continue;
        }
        if let Some(url) = valid_url(w) {
            let before = out.len();
            push(out, seen, &url, program, subcommand, layer);
            if out.len() > before && program == "git" {
                if let Some(b) = &branch {
                    if let Some(c) = version_re().captures(b) {
                        out.last_mut().expect("just pushed").inferred_version = Some(c[1].to_string());
                    }
                }
            }
        }
        i += 1;
    }
}

fn push(
    out: &mut Vec<ExternalPackageRef>,
    seen: &mut BTreeSet<String>,
    url: &str,
    program: &str,
    subcommand: Option<&str>,
    layer: Option<usize>,
) {
    if !seen.insert(url.to_string()) {
        return;
    }
    let (name, version) = infer_name_version(url);
    out.push(ExternalPackageRef {
        url: url.to_string(),
        kind: classify(url, program, subcommand),
        inferred_name: name,
        inferred_version: version,
        layer,
        command: program.to_string(),
    });
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::containerfile::parse_created_by;

    fn run(text: &str, layer: usize) -> Instruction {
        let (verb, args, build_args) = parse_created_by(text);
        Instruction {
            verb,
            raw_text: text.into(),
            args,
            build_args,
            history_index: layer,
            layer: Some(layer),
        }
    }

    #[test]
    fn git_clone_repository() {
        let refs = extract_external_packages(
            &[run("RUN git clone https://github.com/acme/libfoo.git # buildkit", 0)],
            &[],
        );
        assert_eq!(refs.len(), 1);
        assert_eq!(refs[0].kind, RefKind::GitRepository);
        assert_eq!(refs[0].inferred_name, "libfoo");
        assert_eq!(refs[0].inferred_version, None);
    }

    #[test]
    fn curl_archive_pipeline() {
        let refs = extract_external_packages(
            &[run("/bin/sh -c curl -L https://h/tool-2.4.1-linux-amd64.tar.gz | tar xz", 3)],
            &[],
        );
        assert_eq!(refs.len(), 1);
        let r = &refs[0];
        assert_eq!((r.kind, r.inferred_name.as_str()), (RefKind::Archive, "tool"));
        assert_eq!(r.inferred_version.as_deref(), Some("2.4.1"));
        assert_eq!(r.layer, Some(3));
    }

    #[test]
    fn no_urls() {
        assert!(extract_external_packages(&[run("/bin/sh -c echo hello", 0)], &[]).is_empty());
    }

    #[test]
    fn interpolated_and_options_skipped() {
        let instrs = vec![
            run("/bin/sh -c #(nop) ENV V=1.9.0", 0),
            run(
                "/bin/sh -c wget -O /tmp/x.tgz https://example.org/dl/app-$V.tgz && \
                 curl -fsSL -o /usr/local/bin/jq https://example.org/jq/releases/download/jq-1.7/jq-linux64 && \
                 git clone --depth 1 -b v0.3.2 https://example.org/org/widget && \
                 curl https://example.org/install.sh | sh",
                1,
            ),
        ];
        let refs = extract_external_packages(&instrs, &[]);
        let got: Vec<_> = refs
            .iter()
            .map(|r| (r.url.as_str(), r.kind, r.inferred_name.as_str(), r.inferred_version.as_deref()))
            .collect();
        assert_eq!(
            got,
            vec![
                ("https://example.org/dl/app-1.9.0.tgz", RefKind::Archive, "app", Some("1.9.0")),
                (
                    "https://example.org/jq/releases/download/jq-1.7/jq-linux64",
                    RefKind::Binary,
                    "jq-linux64",
                    Some("1.7")
                ),
                ("https://example.org/org/widget", RefKind::GitRepository, "widget", Some("0.3.2")),
                ("https://example.org/install.sh", RefKind::Script, "install", None),
            ]
        );
        for r in &refs {
            assert!(instrs.iter().any(|i| {
                let ctx = {
                    let mut c = EnvContext::new();
                    instrs.iter().take_while(|j| !std::ptr::eq(*j, i)).for_each(|j| c.apply(j));
                    c
                };
                super::super::interpolate(i, &ctx).text.contains(&r.url)
            }));
        }
    }

    #[test]
    fn add_url_and_language_tools() {
        let instrs = vec![
            run("ADD https://example.org/files/data-3.0.zip /opt/ # buildkit", 0),
            run("RUN pip install https://example.org/pkgs/foo-0.4.0-py3-none-any.whl # buildkit", 1),
            run("RUN npm install -g https://example.org/bar/archive/v2.1.0.tar.gz # buildkit", 2),
            run("RUN curl https://example.org/files/data-3.0.zip # buildkit", 3),
        ];
        let refs = extract_external_packages(&instrs, &[]);
        assert_eq!(refs.len(), 3, "duplicate URL collapses: {refs:?}");
        assert_eq!(refs[0].command, "ADD");
        assert_eq!(refs[1].inferred_name, "foo");
        assert_eq!(refs[1].inferred_version.as_deref(), Some("0.4.0"));
        assert_eq!(refs[2].inferred_name, "bar");
        assert_eq!(refs[2].inferred_version.as_deref(), Some("2.1.0"));
    }

    #[test]
    fn extra_commands() {
        let i = run("/bin/sh -c fetchit https://example.org/a/b-1.0.bin", 0);
        assert!(extract_external_packages(std::slice::from_ref(&i), &[]).is_empty());
        assert_eq!(extract_external_packages(&[i], &["fetchit".into()]).len(), 1);
    }

    #[test]
    fn name_version_shapes() {
        assert_eq!(
            infer_name_version("https://h/x/node-v20.11.1-linux-x64.tar.xz"),
            ("node".into(), Some("20.11.1".into()))
        );
        assert_eq!(
            infer_name_version("https://h/x/thing-1.2.3-rc1.tgz"),
            ("thing".into(), Some("1.2.3-rc1".into()))
        );
        assert_eq!(infer_name_version("https://h/x/plain"), ("plain".into(), None));
    }
}
