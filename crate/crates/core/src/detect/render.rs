use std::fmt::Write;

use super::{ObscurationReport, Status, Tactic};

/// One line per finding.
pub fn render_table(report: &ObscurationReport) -> String {
    let mut rows: Vec<[String; 6]> = vec![[
        "TACTIC".into(),
        "STATUS".into(),
        "LAYER".into(),
        "ECOSYSTEM".into(),
        "PATH".into(),
        "EVIDENCE".into(),
    ]];
    for f in &report.findings {
        let mut evidence = f.evidence.clone();
        if let Some(a) = f.annotation {
            let tag = serde_json::to_value(a).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default();
            evidence.push_str(&format!(" [{tag}]"));
        }
        rows.push([
            f.tactic.to_string(),
            format!("{:?}", f.status),
            f.layer.map_or("-".into(), |l| l.to_string()),
            f.ecosystem.clone().unwrap_or_else(|| "-".into()),
            f.path.clone().unwrap_or_else(|| "-".into()),
            evidence,
        ]);
    }
    let widths: Vec<usize> = (0..5).map(|i| rows.iter().map(|r| r[i].len()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for r in &rows {
        for (i, w) in widths.iter().enumerate() {
            let _ = write!(out, "{:<w$}  ", r[i], w = w);
        }
        out.push_str(&r[5]);
        out.push('\n');
    }
    let verdict = if report.is_obscure { "obscure" } else { "clean" };
    let _ = writeln!(out, "{}: {} finding(s), {verdict}", report.image, report.findings.len());
    out
}

/// Per-tactic counts in Missing / Modified / Deleted columns. URL
/// detections are counted under Missing; link, alias and compression
/// detections have their own column.
pub fn render_summary(report: &ObscurationReport) -> String {
    let mut out = format!("{:<9} {:>8} {:>9} {:>8} {:>9}\n", "TACTIC", "MISSING", "MODIFIED", "DELETED", "DETECTED");
    for t in Tactic::ALL {
        let n = |s: Status| report.of(t).filter(|f| f.status == s).count();
        let (mut missing, detected) = (n(Status::Missing), n(Status::Detected));
        let detected = if t == Tactic::Url {
            missing += detected;
            0
        } else {
            detected
        };
        let _ = writeln!(
            out,
            "{:<9} {:>8} {:>9} {:>8} {:>9}",
            t.as_str(),
            missing,
            n(Status::Modified),
            n(Status::Deleted),
            detected
        );
    }
    out
}
