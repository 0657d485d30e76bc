//! Command-line front end. `main.rs` only forwards to [`run`].
//!
//! Exit codes: 0 success, 1 load or analysis failure, 2 usage error,
//! 3 obscured image (`detect` only).

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::LevelFilter;

use crate::containerfile::render;
use crate::detect::{render_summary, render_table, PatternTable};
use crate::error::Error;
use crate::image_io::{ImageSource, LoadOptions, Platform};
use crate::registry::{self, ImageReference, RegistryOptions};
use crate::scan::{scan, ScanOptions, ScanResult};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FATAL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_OBSCURE: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "stratascan", version, about = "Layer-by-layer software composition analysis for container images")]
pub struct Cli {
    /// More log output on stderr (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Analyze an image and write an SPDX document.
    Scan(RunConfig),
    /// Report obscured package evidence; exits 3 when any is found.
    Detect(RunConfig),
    /// Report how many files are attributed to packages.
    Coverage(RunConfig),
    /// Pull an image from a registry into an OCI layout directory.
    Pull {
        reference: String,
        dest: PathBuf,
        #[arg(long)]
        platform: Option<Platform>,
        #[arg(long)]
        jobs: Option<usize>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    SpdxJson,
    ReportJson,
    Table,
}

#[derive(Debug, Args)]
pub struct RunConfig {
    /// OCI layout directory, docker-save tar, or registry reference.
    pub input: String,
    #[arg(long)]
    pub platform: Option<Platform>,
    /// TOML file with extra obscuration patterns.
    #[arg(long, value_name = "FILE")]
    pub patterns: Option<PathBuf>,
    /// Output path, `-` for stdout.
    #[arg(short, long, default_value = "-")]
    pub output: String,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// Worker threads.
    #[arg(long, value_name = "N")]
    pub jobs: Option<usize>,
    /// Fixed creation time (RFC 3339); defaults to SOURCE_DATE_EPOCH, then now.
    #[arg(long, value_parser = parse_clock)]
    pub clock: Option<DateTime<Utc>>,
    /// Also write the reconstructed Containerfile here.
    #[arg(long, value_name = "FILE")]
    pub dump_containerfile: Option<PathBuf>,
}

fn parse_clock(s: &str) -> Result<DateTime<Utc>, String> {
    DateTime::parse_from_rfc3339(s).map(|d| d.with_timezone(&Utc)).map_err(|e| e.to_string())
}

fn resolve_clock(flag: Option<DateTime<Utc>>) -> Result<DateTime<Utc>, String> {
    if let Some(c) = flag {
        return Ok(c);
    }
    match std::env::var("SOURCE_DATE_EPOCH") {
        Ok(v) => v
            .trim()
            .parse::<i64>()
            .ok()
            .and_then(|s| DateTime::from_timestamp(s, 0))
            .ok_or_else(|| format!("invalid SOURCE_DATE_EPOCH {v:?}")),
        Err(_) => Ok(Utc::now()),
    }
}

struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure { code: EXIT_USAGE, message: message.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::PatternTable(_) => EXIT_USAGE,
            _ => EXIT_FATAL,
        };
        Failure { code, message: e.to_string() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure { code: EXIT_FATAL, message: e.to_string() }
    }
}

/// Parses `args` (including the program name) and runs the command,
/// writing machine output to `stdout` and diagnostics to `stderr`.
pub fn run_with(args: impl IntoIterator<Item = impl Into<OsString> + Clone>, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let rendered = e.render().to_string();
            let _ = if e.use_stderr() { stderr.write_all(rendered.as_bytes()) } else { stdout.write_all(rendered.as_bytes()) };
            return code;
        }
    };
    let level = match cli.verbose {
        0 => LevelFilter::Warn,
        1 => LevelFilter::Info,
        _ => LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).parse_default_env().target(env_logger::Target::Stderr).try_init();

    let result = match cli.command {
        Command::Scan(cfg) => cmd_scan(&cfg, stdout, stderr),
        Command::Detect(cfg) => cmd_detect(&cfg, stdout),
        Command::Coverage(cfg) => cmd_coverage(&cfg, stdout, stderr),
        Command::Pull { reference, dest, platform, jobs } => cmd_pull(&reference, &dest, platform, jobs, stdout),
    };
    match result {
        Ok(code) => code,
        Err(f) => {
            let _ = writeln!(stderr, "stratascan: {}", f.message);
            f.code
        }
    }
}

/// Entry point for the binary.
pub fn run(args: impl IntoIterator<Item = impl Into<OsString> + Clone>) -> i32 {
    let out = std::io::stdout();
    let err = std::io::stderr();
    let code = run_with(args, &mut out.lock(), &mut err.lock());
    let _ = std::io::stdout().flush();
    code
}

fn execute(cfg: &RunConfig) -> Result<ScanResult, Failure> {
    let mut patterns = PatternTable::default();
    if let Some(p) = &cfg.patterns {
        let text = std::fs::read_to_string(p).map_err(|e| Failure::usage(format!("{}: {e}", p.display())))?;
        patterns.extend_from_toml(&text)?;
    }
    if cfg.jobs == Some(0) {
        return Err(Failure::usage("--jobs must be at least 1"));
    }
    let source = ImageSource::parse(&cfg.input)?;
    let mut registry = RegistryOptions::from_env();
    if let Some(j) = cfg.jobs {
        registry.concurrency = j;
    }
    let load = LoadOptions { platform: cfg.platform.clone().unwrap_or_default(), registry };
    let opts = ScanOptions { patterns, jobs: cfg.jobs, ..Default::default() };
    let result = scan(&source, &load, &opts)?;
    if let Some(path) = &cfg.dump_containerfile {
        std::fs::write(path, render(&result.instructions))?;
    }
    Ok(result)
}

fn emit(cfg: &RunConfig, body: &str, stdout: &mut dyn Write) -> Result<(), Failure> {
    if cfg.output == "-" {
        stdout.write_all(body.as_bytes())?;
    } else {
        std::fs::write(Path::new(&cfg.output), body)?;
    }
    Ok(())
}

/// Where human-readable summaries go: stdout unless stdout carries the
/// document.
fn summary_stream<'a>(cfg: &RunConfig, stdout: &'a mut dyn Write, stderr: &'a mut dyn Write) -> &'a mut dyn Write {
    if cfg.output == "-" {
        stderr
    } else {
        stdout
    }
}

fn to_json<T: serde::Serialize>(v: &T) -> Result<String, Failure> {
    let mut s = serde_json::to_string_pretty(v).map_err(Error::from)?;
    s.push('\n');
    Ok(s)
}

fn cmd_scan(cfg: &RunConfig, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<i32, Failure> {
    let format = cfg.format.unwrap_or(Format::SpdxJson);
    let clock = resolve_clock(cfg.clock).map_err(Failure::usage)?;
    let result = execute(cfg)?;
    let packages = result.packages();
    let body = match format {
        Format::SpdxJson => result.sbom(clock).to_json(),
        Format::ReportJson => to_json(&result.summary())?,
        Format::Table => {
            let mut t = String::new();
            for p in &packages {
                t.push_str(&format!(
                    "{:<9} {:<40} {:<28} layer {}{}\n",
                    p.ecosystem.as_str(),
                    p.name,
                    p.version.as_deref().unwrap_or("-"),
                    p.source_layer,
                    if p.obscured { "  obscured" } else { "" }
                ));
            }
            t
        }
    };
    emit(cfg, &body, stdout)?;
    let s = summary_stream(cfg, stdout, stderr);
    writeln!(s, "{}: {} packages, {}", result.name, packages.len(), result.coverage.summary_line())?;
    Ok(EXIT_OK)
}

fn cmd_detect(cfg: &RunConfig, stdout: &mut dyn Write) -> Result<i32, Failure> {
    let format = cfg.format.unwrap_or(Format::ReportJson);
    if format == Format::SpdxJson {
        return Err(Failure::usage("detect writes report-json or table"));
    }
    let result = execute(cfg)?;
    let report = &result.report;
    let body = match format {
        Format::Table => format!("{}\n{}", render_table(report), render_summary(report)),
        _ => to_json(report)?,
    };
    emit(cfg, &body, stdout)?;
    if cfg.output != "-" {
        stdout.write_all(render_table(report).as_bytes())?;
    }
    Ok(if report.is_obscure { EXIT_OBSCURE } else { EXIT_OK })
}

fn cmd_coverage(cfg: &RunConfig, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<i32, Failure> {
    let format = cfg.format.unwrap_or(Format::ReportJson);
    if format == Format::SpdxJson {
        return Err(Failure::usage("coverage writes report-json or table"));
    }
    let result = execute(cfg)?;
    let c = &result.coverage;
    let body = match format {
        Format::Table => {
            let mut t = format!("{}\n", c.summary_line());
            for l in &c.per_layer {
                t.push_str(&format!("layer {:>3}: {}/{} files\n", l.layer, l.analyzed_files, l.total_files));
            }
            t.push_str(&format!("metadata files only: {}\n", result.metadata_coverage.summary_line()));
            t
        }
        _ => to_json(c)?,
    };
    emit(cfg, &body, stdout)?;
    let s = summary_stream(cfg, stdout, stderr);
    writeln!(s, "{}: {}", result.name, c.summary_line())?;
    Ok(EXIT_OK)
}

fn cmd_pull(reference: &str, dest: &Path, platform: Option<Platform>, jobs: Option<usize>, stdout: &mut dyn Write) -> Result<i32, Failure> {
    let r = ImageReference::parse(reference)?;
    let mut opts = RegistryOptions::from_env();
    if let Some(j) = jobs {
        opts.concurrency = j.max(1);
    }
    let src = registry::pull(&r, &platform.unwrap_or_default(), dest, &opts)?;
    writeln!(stdout, "{src}")?;
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{ImageBuilder, LayerBuilder};

    fn invoke(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let mut full = vec!["stratascan"];
        full.extend_from_slice(args);
        let code = run_with(full, &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(invoke(&[]).0, EXIT_USAGE);
        assert_eq!(invoke(&["scan"]).0, EXIT_USAGE);
        assert_eq!(invoke(&["scan", "x", "--bogus"]).0, EXIT_USAGE);
        assert_eq!(invoke(&["scan", "x", "--clock", "yesterday"]).0, EXIT_USAGE);
        assert_eq!(invoke(&["detect", "x", "--format", "spdx-json"]).0, EXIT_USAGE);
        assert_eq!(invoke(&["--help"]).0, EXIT_OK);
    }

    #[test]
    fn missing_input_exits_1() {
        let (code, out, err) = invoke(&["scan", "/nonexistent/image-dir"]);
        assert_eq!(code, EXIT_FATAL);
        assert!(out.is_empty());
        assert!(err.contains("does not exist"), "{err}");
    }

    #[test]
    fn stdout_carries_only_the_document() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("img");
        ImageBuilder::new("cli/test:1")
            .layer(LayerBuilder::new("ADD rootfs /").file("/etc/os-release", "ID=debian\nVERSION_ID=12\n").file("/var/lib/dpkg/status", ""))
            .write_oci_layout(&dir)
            .unwrap();
        let p = dir.to_str().unwrap();
        let (code, out, err) = invoke(&["scan", p, "--clock", "2024-01-01T00:00:00Z"]);
        assert_eq!(code, EXIT_OK, "{err}");
        let doc: serde_json::Value = serde_json::from_str(&out).unwrap();
        assert_eq!(doc["spdxVersion"], "SPDX-2.3");
        assert!(err.contains("0 packages"));
        let (code, out, _) = invoke(&["detect", p]);
        assert_eq!(code, EXIT_OK);
        assert_eq!(serde_json::from_str::<serde_json::Value>(&out).unwrap()["is_obscure"], false);
    }
}
