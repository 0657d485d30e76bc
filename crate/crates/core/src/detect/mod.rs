//! Obscuration detection.
//!
//! Walks the per-path history looking for package evidence that was
//! modified or deleted after it was written, evidence that never existed,
//! downloads recorded in the reconstructed Containerfile, link and alias
//! tricks in `RUN` lines, and signs that the layers were squashed.

mod patterns;
mod render;

use std::collections::{BTreeMap, BTreeSet};

use log::debug;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::analyzers::version::is_upgrade;
use crate::analyzers::Package;
use crate::containerfile::shell::{program_name, split_commands, strip_wrappers};
use crate::containerfile::{interpolate, EnvContext, ExternalPackageRef, Instruction, Verb};
use crate::digest::Digest;
use crate::image_io::HistoryEntry;
use crate::layer_fs::{split_path, Action, FileHistory, SquashedView};

pub use patterns::{pattern_matches, PatternRow, PatternTable, Tactic};
pub use render::{render_summary, render_table};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Status {
    Missing,
    Modified,
    Deleted,
    Detected,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Annotation {
    LikelyBenignUpdate,
    ContentIdentical,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObscurationFinding {
    pub tactic: Tactic,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layer: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ecosystem: Option<String>,
    pub evidence: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub before: Option<Digest>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub after: Option<Digest>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotation: Option<Annotation>,
}

impl ObscurationFinding {
    fn new(tactic: Tactic, status: Status, evidence: impl Into<String>) -> Self {
        ObscurationFinding {
            tactic,
            status,
            path: None,
            layer: None,
            ecosystem: None,
            evidence: evidence.into(),
            before: None,
            after: None,
            annotation: None,
        }
    }

    fn sort_key(&self) -> (Tactic, Option<usize>, Option<&str>, Status, &str) {
        (self.tactic, self.layer, self.path.as_deref(), self.status, &self.evidence)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObscurationReport {
    pub schema_version: u32,
    pub image: String,
    pub findings: Vec<ObscurationFinding>,
    pub counts: BTreeMap<Tactic, usize>,
    pub is_obscure: bool,
}

impl ObscurationReport {
    pub fn new(image: impl Into<String>, mut findings: Vec<ObscurationFinding>) -> Self {
        findings.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
        findings.dedup();
        let mut counts = BTreeMap::new();
        for f in &findings {
            *counts.entry(f.tactic).or_insert(0) += 1;
        }
        ObscurationReport {
            schema_version: REPORT_SCHEMA_VERSION,
            image: image.into(),
            is_obscure: !findings.is_empty(),
            findings,
            counts,
        }
    }

    pub fn count(&self, tactic: Tactic) -> usize {
        self.counts.get(&tactic).copied().unwrap_or(0)
    }

    pub fn of(&self, tactic: Tactic) -> impl Iterator<Item = &ObscurationFinding> {
        self.findings.iter().filter(move |f| f.tactic == tactic)
    }
}

/// Layer count and config history, used to spot squashed images.
#[derive(Clone, Debug, Default)]
pub struct ImageShape {
    pub layer_count: usize,
    pub history: Vec<HistoryEntry>,
}

pub struct DetectInput<'a> {
    pub image: &'a str,
    pub history: &'a FileHistory,
    pub squashed: &'a SquashedView,
    pub instructions: &'a [Instruction],
    pub refs: &'a [ExternalPackageRef],
    pub shape: &'a ImageShape,
}

/// Package managers whose names are worth hiding behind an alias.
const PACKAGE_TOOLS: &[&str] = &[
    "dpkg", "dpkg-query", "apt", "apt-get", "apt-cache", "rpm", "yum", "dnf", "microdnf", "zypper",
    "apk", "pip", "pip3", "python", "python3", "npm", "npx", "yarn", "node", "gem", "bundle",
    "composer", "go",
];

pub fn detect(input: &DetectInput<'_>, patterns: &PatternTable) -> ObscurationReport {
    let mut findings = Vec::new();
    history_findings(input.history, patterns, &mut findings);
    missing_findings(input.history, patterns, &mut findings);
    findings.extend(input.refs.iter().map(url_finding));
    findings.extend(compress_finding(input.shape));
    containerfile_findings(input.instructions, patterns, &mut findings);
    debug!("{} obscuration findings before ordering ({} alive files)", findings.len(), input.squashed.len());
    ObscurationReport::new(input.image, findings)
}

fn history_findings(history: &FileHistory, patterns: &PatternTable, out: &mut Vec<ObscurationFinding>) {
    for layer in 0..history.layer_count() {
        // Deleted paths per tactic in this layer, to report subtrees once.
        let mut deleted: BTreeMap<Tactic, BTreeSet<&str>> = BTreeMap::new();
        let events = history.layer_events(layer);
        for ev in events.iter().filter(|e| e.action == Action::Deleted) {
            for t in [Tactic::Os, Tactic::OsPkg, Tactic::Dep, Tactic::Pkg] {
                if patterns.matching(t, ev.path()).is_some() {
                    deleted.entry(t).or_default().insert(ev.path());
                }
            }
        }
        for ev in events {
            if ev.action == Action::Added || ev.entry.is_marker() {
                continue;
            }
            if ev.action == Action::Modified && ev.entry.is_dir() {
                continue;
            }
            for t in [Tactic::Os, Tactic::OsPkg, Tactic::Dep, Tactic::Pkg] {
                let Some(row) = patterns.matching(t, ev.path()) else { continue };
                let status = if ev.action == Action::Deleted {
                    let parent = split_path(ev.path()).0;
                    if deleted.get(&t).is_some_and(|s| s.contains(parent)) {
                        continue;
                    }
                    Status::Deleted
                } else {
                    Status::Modified
                };
                let mut f = ObscurationFinding::new(t, status, format!("matches {:?}", row.pattern));
                f.path = Some(ev.path().to_string());
                f.layer = Some(layer);
                f.ecosystem = Some(row.ecosystem.clone());
                if status == Status::Modified {
                    f.before = ev.previous_digest.clone();
                    f.after = ev.entry.digest.clone();
                }
                out.push(f);
            }
        }
    }
}

/// OS and OS package evidence that no layer ever contained.
fn missing_findings(history: &FileHistory, patterns: &PatternTable, out: &mut Vec<ObscurationFinding>) {
    for t in [Tactic::Os, Tactic::OsPkg] {
        let seen = history.paths().any(|p| patterns.matching(t, p).is_some());
        if !seen {
            let wanted: Vec<&str> = patterns.rows_for(t).map(|r| r.pattern.as_str()).collect();
            out.push(ObscurationFinding::new(t, Status::Missing, format!("no file matching {}", wanted.join(", "))));
        }
    }
}

fn url_finding(r: &ExternalPackageRef) -> ObscurationFinding {
    let mut f = ObscurationFinding::new(Tactic::Url, Status::Detected, r.url.clone());
    f.layer = r.layer;
    f.ecosystem = Some("external".into());
    f
}

fn compress_finding(shape: &ImageShape) -> Option<ObscurationFinding> {
    if shape.layer_count == 0 {
        return None;
    }
    let described = shape.history.iter().filter(|h| !h.created_by.trim().is_empty()).count();
    let producing = shape.history.iter().filter(|h| !h.empty_layer).count();
    let evidence = if described == 0 {
        format!("no build history for {} layer(s)", shape.layer_count)
    } else if producing > shape.layer_count {
        format!("{producing} layer-producing history entries but {} layer(s)", shape.layer_count)
    } else {
        return None;
    };
    Some(ObscurationFinding::new(Tactic::Compress, Status::Detected, evidence))
}

fn as_path(word: &str) -> String {
    if word.starts_with('/') {
        word.to_string()
    } else {
        format!("/{word}")
    }
}

fn alias_regex() -> Regex {
    Regex::new(r#"\balias\s+([A-Za-z0-9_.+-]+)=(?:'([^']*)'|"([^"]*)"|(\S*))"#).expect("static regex")
}

fn containerfile_findings(instrs: &[Instruction], patterns: &PatternTable, out: &mut Vec<ObscurationFinding>) {
    let alias_re = alias_regex();
    let mut ctx = EnvContext::new();
    for instr in instrs {
        if instr.verb == Verb::Run {
            let text = interpolate(instr, &ctx).text;
            for cmd in split_commands(&text) {
                let words = strip_wrappers(&cmd);
                let Some(first) = words.first() else { continue };
                if program_name(first) != "ln" {
                    continue;
                }
                let operands: Vec<&String> = words[1..].iter().filter(|w| !w.starts_with('-')).collect();
                if let Some(hit) = operands.iter().find(|w| patterns.matches_any(&as_path(w))) {
                    let mut f = ObscurationFinding::new(Tactic::Link, Status::Detected, words.join(" "));
                    f.path = Some(as_path(hit));
                    f.layer = instr.layer;
                    out.push(f);
                }
            }
            for cap in alias_re.captures_iter(&text) {
                let name = &cap[1];
                let value = cap.get(2).or(cap.get(3)).or(cap.get(4)).map_or("", |m| m.as_str());
                let path_hit = value
                    .split_whitespace()
                    .filter(|w| w.contains('/'))
                    .find(|w| patterns.matches_any(&as_path(w)));
                let tool_hit = PACKAGE_TOOLS.contains(&name);
                if path_hit.is_some() || tool_hit {
                    let mut f = ObscurationFinding::new(Tactic::Alias, Status::Detected, cap[0].to_string());
                    f.path = path_hit.map(as_path);
                    f.layer = instr.layer;
                    out.push(f);
                }
            }
        }
        ctx.apply(instr);
    }
}

/// Annotates Modified findings that look like ordinary maintenance. No
/// finding is ever removed.
pub fn classify_false_positive_candidates(report: &mut ObscurationReport, packages: &[Package]) {
    for f in report.findings.iter_mut().filter(|f| f.status == Status::Modified) {
        if f.before.is_some() && f.before == f.after {
            f.annotation = Some(Annotation::ContentIdentical);
            continue;
        }
        let (Some(path), Some(layer)) = (f.path.as_deref(), f.layer) else { continue };
        let upgraded = packages.iter().filter(|p| p.source_layer == layer).any(|new| {
            let touches = new.metadata_files.iter().chain(&new.owned_files).any(|m| m == path);
            touches
                && packages.iter().any(|old| {
                    old.ecosystem == new.ecosystem
                        && old.identity().name == new.identity().name
                        && old.source_layer < layer
                        && match (&old.version, &new.version) {
                            (Some(a), Some(b)) => is_upgrade(a, b),
                            _ => false,
                        }
                })
        });
        if upgraded {
            f.annotation = Some(Annotation::LikelyBenignUpdate);
        }
    }
}
