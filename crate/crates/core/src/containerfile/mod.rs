//! Partial Containerfile reconstruction from image config history.
//!
//! Only the `created_by` strings survive in an image, so what comes back is
//! a best-effort list of instructions. `ENV`/`ARG` values are tracked in
//! order so that later `RUN` lines can be interpolated before they are
//! searched for downloads.

mod external;
mod interpolate;
pub mod shell;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use external::{extract_external_packages, infer_name_version, ExternalPackageRef, RefKind};
pub use interpolate::{interpolate, EnvContext, Interpolated};

use crate::image_io::ImageConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Verb {
    Run,
    Copy,
    Add,
    Env,
    Arg,
    Workdir,
    Entrypoint,
    Cmd,
    Label,
    Expose,
    User,
    Other,
}

impl Verb {
    fn from_word(word: &str) -> Option<Verb> {
        let v = match word.to_ascii_uppercase().as_str() {
            "RUN" => Verb::Run,
            "COPY" => Verb::Copy,
            "ADD" => Verb::Add,
            "ENV" => Verb::Env,
            "ARG" => Verb::Arg,
            "WORKDIR" => Verb::Workdir,
            "ENTRYPOINT" => Verb::Entrypoint,
            "CMD" => Verb::Cmd,
            "LABEL" => Verb::Label,
            "EXPOSE" => Verb::Expose,
            "USER" => Verb::User,
            "MAINTAINER" | "VOLUME" | "STOPSIGNAL" | "HEALTHCHECK" | "SHELL" | "ONBUILD" => {
                Verb::Other
            }
            _ => return None,
        };
        Some(v)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Verb::Run => "RUN",
            Verb::Copy => "COPY",
            Verb::Add => "ADD",
            Verb::Env => "ENV",
            Verb::Arg => "ARG",
            Verb::Workdir => "WORKDIR",
            Verb::Entrypoint => "ENTRYPOINT",
            Verb::Cmd => "CMD",
            Verb::Label => "LABEL",
            Verb::Expose => "EXPOSE",
            Verb::User => "USER",
            Verb::Other => "#",
        }
    }

    /// Instructions that put files into the image.
    pub fn creates_content(self) -> bool {
        matches!(self, Verb::Run | Verb::Copy | Verb::Add)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instruction {
    pub verb: Verb,
    /// The `created_by` string exactly as stored in the config.
    pub raw_text: String,
    /// Arguments with builder prefixes stripped.
    pub args: String,
    /// Build arguments recorded by the classic builder (`|2 A=1 B=2 ...`).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub build_args: Vec<(String, String)>,
    pub history_index: usize,
    /// Layer created by this instruction, if any.
    pub layer: Option<usize>,
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.verb {
            Verb::Other => write!(f, "# {}", self.args),
            v => write!(f, "{} {}", v.as_str(), self.args),
        }
    }
}

/// Parses one `created_by` string.
pub fn parse_created_by(created_by: &str) -> (Verb, String, Vec<(String, String)>) {
    let mut text = created_by.trim();
    let mut buildkit = false;
    if let Some(stripped) = text.strip_suffix("# buildkit") {
        text = stripped.trim_end();
        buildkit = true;
    }

    // BuildKit writes "RUN |2 A=1 B=2 /bin/sh -c ..." and "ENV A=1".
    let (explicit_verb, rest) = match text.split_once(char::is_whitespace) {
        Some((w, rest)) => match Verb::from_word(w) {
            Some(v) if w.chars().all(|c| c.is_ascii_uppercase()) => (Some(v), rest.trim_start()),
            _ => (None, text),
        },
        None => match Verb::from_word(text) {
            Some(v) if text.chars().all(|c| c.is_ascii_uppercase()) => (Some(v), ""),
            _ => (None, text),
        },
    };
    let mut rest = rest;

    let mut build_args = Vec::new();
    if let Some(after_bar) = rest.strip_prefix('|') {
        // "|N K=V ... cmd": N build-arg assignments precede the command.
        let mut parts = after_bar.splitn(2, char::is_whitespace);
        let count: usize = parts.next().and_then(|n| n.parse().ok()).unwrap_or(0);
        let mut tail = parts.next().unwrap_or("").trim_start();
        for _ in 0..count {
            let (assign, remaining) = match tail.split_once(char::is_whitespace) {
                Some((a, r)) => (a, r.trim_start()),
                None => (tail, ""),
            };
            if let Some((k, v)) = assign.split_once('=') {
                build_args.push((k.to_string(), v.to_string()));
            }
            tail = remaining;
        }
        rest = tail;
    }

    let shell_prefixes = ["/bin/sh -c ", "/bin/bash -c ", "/bin/sh -ec ", "sh -c ", "cmd /S /C "];
    let mut body = rest;
    for p in shell_prefixes {
        if let Some(s) = body.strip_prefix(p) {
            body = s.trim_start();
            break;
        }
    }

    if let Some(nop) = body.strip_prefix("#(nop)") {
        let nop = nop.trim();
        let (word, args) = nop.split_once(char::is_whitespace).unwrap_or((nop, ""));
        return match Verb::from_word(word) {
            Some(v) => (v, args.trim().to_string(), build_args),
            None => (Verb::Other, nop.to_string(), build_args),
        };
    }

    match explicit_verb {
        Some(v) => (v, body.trim().to_string(), build_args),
        None if body.len() != rest.len() || !build_args.is_empty() => {
            (Verb::Run, body.trim().to_string(), build_args)
        }
        None if buildkit => (Verb::Other, body.trim().to_string(), build_args),
        None => {
            // Bare commands from other builders are shell commands unless
            // they are clearly comments or empty.
            if body.is_empty() || body.starts_with('#') || body.starts_with("Imported from") {
                (Verb::Other, body.to_string(), build_args)
            } else {
                (Verb::Run, body.trim().to_string(), build_args)
            }
        }
    }
}

/// Reconstructs the instruction list from the config history. Entries with
/// an empty `created_by` carry nothing and are skipped.
pub fn reconstruct(config: &ImageConfig, layer_history: &[Option<usize>]) -> Vec<Instruction> {
    let mut out = Vec::new();
    for (i, h) in config.history.iter().enumerate() {
        if h.created_by.trim().is_empty() {
            continue;
        }
        let (verb, args, build_args) = parse_created_by(&h.created_by);
        let layer = layer_history.iter().position(|m| *m == Some(i));
        out.push(Instruction {
            verb,
            raw_text: h.created_by.clone(),
            args,
            build_args,
            history_index: i,
            layer,
        });
    }
    out
}

/// Renders instructions as a Containerfile-like text for auditing.
pub fn render(instrs: &[Instruction]) -> String {
    let mut s = String::new();
    for i in instrs {
        if let Some(l) = i.layer {
            s.push_str(&format!("# layer {l}\n"));
        }
        s.push_str(&i.to_string());
        s.push('\n');
    }
    s
}
