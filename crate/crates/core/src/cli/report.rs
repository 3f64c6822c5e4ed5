//! Aggregation of a run directory into a CSV bundle and a markdown summary.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::verify::{Verdict, VerificationReport};
use crate::zakai::FilterRun;
use crate::{Error, Result};

pub const REPORT_FORMAT: &str = "levy-filter/verification-report";
pub const SUMMARY_FILE: &str = "report_summary.md";
pub const ROWS_FILE: &str = "report_rows.csv";
pub const RUNS_FILE: &str = "report_runs.csv";

/// On-disk wrapper of a [`VerificationReport`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportFile {
    pub format: String,
    pub config_hash: String,
    pub report: VerificationReport,
}

impl ReportFile {
    pub fn new(report: VerificationReport, config_hash: &str) -> Self {
        ReportFile {
            format: REPORT_FORMAT.into(),
            config_hash: config_hash.into(),
            report,
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

#[derive(Deserialize)]
struct FormatProbe {
    format: String,
}

/// What [`build_report`] found and wrote.
#[derive(Debug, Clone)]
pub struct ReportSummary {
    pub verdict: Verdict,
    pub reports: Vec<(String, ReportFile)>,
    pub runs: Vec<(String, String, FilterRun)>,
    pub markdown: String,
}

/// Reads every verification report (`verify_*.json`) and filter run (`*.json` with
/// format `levy-filter/filter-run`) in `dir`, then writes [`SUMMARY_FILE`],
/// [`ROWS_FILE`] and [`RUNS_FILE`] next to them.
pub fn build_report(dir: &Path) -> Result<ReportSummary> {
    if !dir.is_dir() {
        return Err(Error::MissingInput(format!(
            "{} is not a directory",
            dir.display()
        )));
    }
    let mut names: Vec<String> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().into_string().ok())
        .filter(|n| n.ends_with(".json"))
        .collect();
    names.sort();

    let mut reports = Vec::new();
    let mut runs = Vec::new();
    for name in names {
        let path = dir.join(&name);
        let text = fs::read_to_string(&path)?;
        let Ok(probe) = serde_json::from_str::<FormatProbe>(&text) else {
            continue;
        };
        let stem = name.trim_end_matches(".json").to_string();
        match probe.format.as_str() {
            REPORT_FORMAT => {
                let file: ReportFile = serde_json::from_str(&text)
                    .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
                reports.push((stem, file));
            }
            "levy-filter/filter-run" => {
                let (run, hash) = FilterRun::read(dir, &stem)?;
                runs.push((stem, hash, run));
            }
            _ => {}
        }
    }
    if reports.is_empty() && runs.is_empty() {
        return Err(Error::MissingInput(format!(
            "{} holds no results; expected verify_<identity>.json reports from `verify` \
             or <stem>.json filter runs from `filter-zakai`, `filter-ks` or `reweight`",
            dir.display()
        )));
    }

    let verdict = Verdict::combine(reports.iter().map(|(_, f)| f.report.verdict));
    let mut hasher = Sha256::new();
    for h in reports
        .iter()
        .map(|(_, f)| &f.config_hash)
        .chain(runs.iter().map(|(_, h, _)| h))
    {
        hasher.update(h.as_bytes());
    }
    let bundle_hash = hex::encode(hasher.finalize());

    let mut rows = format!("# config_hash={bundle_hash}\nsource,identity,scenario,label,verdict,discrepancy,tolerance,estimates\n");
    for (stem, f) in &reports {
        for r in &f.report.rows {
            let est: Vec<String> = r
                .estimates
                .iter()
                .map(|e| format!("{}={}:{}", e.name, e.mean, e.std_error))
                .collect();
            writeln!(
                rows,
                "{stem},{},{},\"{}\",{:?},{},{},\"{}\"",
                f.report.identity,
                f.report.scenario,
                r.label,
                r.verdict,
                r.discrepancy,
                r.tolerance,
                est.join(";")
            )
            .unwrap();
        }
    }
    let mut series = format!("# config_hash={bundle_hash}\nsource,kind,t,mass,ess,mean_1\n");
    for (stem, _, run) in &runs {
        for d in &run.diagnostics {
            writeln!(
                series,
                "{stem},{:?},{},{},{},{}",
                run.kind,
                d.t,
                d.mass,
                d.ess,
                d.mean.first().copied().unwrap_or(f64::NAN)
            )
            .unwrap();
        }
    }

    let mut md = format!(
        "# Run summary\n\nconfig_hash: `{bundle_hash}`\n\nOverall verdict: **{}**\n\n",
        verdict_word(verdict)
    );
    if !reports.is_empty() {
        md.push_str("## Verification\n\n| identity | scenario | verdict | rows passed |\n|---|---|---|---|\n");
        for (_, f) in &reports {
            let ok = f
                .report
                .rows
                .iter()
                .filter(|r| r.verdict == Verdict::Pass)
                .count();
            writeln!(
                md,
                "| {} | {} | {} | {}/{} |",
                f.report.identity,
                f.report.scenario,
                verdict_word(f.report.verdict),
                ok,
                f.report.rows.len()
            )
            .unwrap();
        }
        for (_, f) in &reports {
            writeln!(
                md,
                "\n### {}\n\n| row | verdict | discrepancy | tolerance |\n|---|---|---|---|",
                f.report.identity
            )
            .unwrap();
            for r in &f.report.rows {
                writeln!(
                    md,
                    "| {} | {} | {:.3e} | {:.3e} |",
                    r.label,
                    verdict_word(r.verdict),
                    r.discrepancy,
                    r.tolerance
                )
                .unwrap();
            }
        }
    }
    if !runs.is_empty() {
        if !reports.is_empty() {
            md.push('\n');
        }
        md.push_str("## Filter runs\n\n| run | kind | nodes | final mass | min ess | observed jumps |\n|---|---|---|---|---|---|\n");
        for (stem, _, run) in &runs {
            let last = run.diagnostics.last();
            let min_ess = run
                .diagnostics
                .iter()
                .map(|d| d.ess)
                .fold(f64::INFINITY, f64::min);
            writeln!(
                md,
                "| {stem} | {:?} | {} | {:.6} | {:.1} | {} |",
                run.kind,
                run.diagnostics.len(),
                last.map_or(f64::NAN, |d| d.mass),
                min_ess,
                run.observed_jumps
            )
            .unwrap();
        }
    }

    fs::write(dir.join(ROWS_FILE), rows)?;
    fs::write(dir.join(RUNS_FILE), series)?;
    fs::write(dir.join(SUMMARY_FILE), &md)?;
    Ok(ReportSummary {
        verdict,
        reports,
        runs,
        markdown: md,
    })
}

fn verdict_word(v: Verdict) -> &'static str {
    match v {
        Verdict::Pass => "pass",
        Verdict::Fail => "FAIL",
        Verdict::Inconclusive => "inconclusive",
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::verify::{NamedEstimate, ReportRow};

    fn report(identity: &str, pass: bool) -> VerificationReport {
        let row = ReportRow::new(
            "row",
            vec![NamedEstimate::exact("x", 1.0)],
            Some(1.0),
            if pass { 0.0 } else { 1.0 },
            0.5,
        );
        VerificationReport {
            identity: identity.into(),
            scenario: "constants".into(),
            verdict: row.verdict,
            rows: vec![row],
            seeds: vec![1],
            runtime_secs: 0.0,
            notes: Vec::new(),
        }
    }

    #[test]
    fn empty_directory_lists_expected_files() {
        let dir = tempfile::tempdir().unwrap();
        let err = build_report(dir.path()).unwrap_err();
        assert!(
            matches!(&err, Error::MissingInput(m) if m.contains("verify_<identity>.json") && m.contains("filter-ks"))
        );
    }

    #[test]
    fn single_pass_gives_green_table() {
        let dir = tempfile::tempdir().unwrap();
        ReportFile::new(report("duality", true), "abc")
            .write(&dir.path().join("verify_duality.json"))
            .unwrap();
        let s = build_report(dir.path()).unwrap();
        assert_eq!(s.verdict, Verdict::Pass);
        assert!(s.markdown.contains("| duality | constants | pass | 1/1 |"));
        assert!(!s.markdown.contains("FAIL"));
        assert!(dir.path().join(ROWS_FILE).exists());
    }

    #[test]
    fn mixed_results_fail() {
        let dir = tempfile::tempdir().unwrap();
        ReportFile::new(report("duality", true), "abc")
            .write(&dir.path().join("verify_duality.json"))
            .unwrap();
        ReportFile::new(report("martingale", false), "abc")
            .write(&dir.path().join("verify_martingale.json"))
            .unwrap();
        let s = build_report(dir.path()).unwrap();
        assert_eq!(s.verdict, Verdict::Fail);
        assert_eq!(s.verdict.exit_code(), 1);
        assert!(s
            .markdown
            .contains("| martingale | constants | FAIL | 0/1 |"));
    }
}
