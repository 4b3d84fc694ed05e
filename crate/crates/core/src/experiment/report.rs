use std::fmt::Write as _;
use std::path::Path;

use super::run::{RunManifest, RunStatus};
use crate::error::{Error, Result};
use crate::eval::MetricReport;
use crate::fsutil::write_atomic;

pub const TRADEOFF_CSV: &str = "tradeoff.csv";
pub const TRADEOFF_HEADER: &str = "t,algorithm,efficacy,ability_proxy,retain_perplexity,gamma";

pub fn load_step_reports(run_dir: &Path, manifest: &RunManifest) -> Result<Vec<MetricReport>> {
    manifest
        .steps
        .iter()
        .map(|s| {
            let path = run_dir.join(&s.metrics);
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            Ok(serde_json::from_str(&text)?)
        })
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

pub fn write_tradeoff_csv(run_dir: &Path, manifest: &RunManifest) -> Result<()> {
    let reports = load_step_reports(run_dir, manifest)?;
    let mut out = String::new();
    writeln!(out, "{TRADEOFF_HEADER}").unwrap();
    for r in &reports {
        writeln!(
            out,
            "{},{},{:.6},{:.6},{:.6},{}",
            r.t,
            r.algorithm,
            r.efficacy,
            r.ability_proxy,
            r.retain_perplexity,
            opt(r.gamma)
        )
        .unwrap();
    }
    write_atomic(&run_dir.join(TRADEOFF_CSV), out.as_bytes())
}

fn cell(r: &MetricReport, label: &str) -> (String, String) {
    match r.split(label) {
        Some(s) => (format!("{:.4}", s.rouge1), format!("{:.4}", s.rouge_l)),
        None => ("-".into(), "-".into()),
    }
}

/// Writes `tradeoff.csv` and returns a per-step summary table.
pub fn report_emit(run_dir: &Path) -> Result<String> {
    let manifest = RunManifest::read(run_dir)?;
    if manifest.steps.is_empty() {
        return Err(Error::Empty("run manifest has no completed steps"));
    }
    write_tradeoff_csv(run_dir, &manifest)?;
    let reports = load_step_reports(run_dir, &manifest)?;
    let mut out = String::new();
    writeln!(
        out,
        "{:>3}  {:<10} {:>10}  {:>7} {:>7}  {:>7} {:>7}  {:>7} {:>7}  {:>8} {:>9} {:>7}",
        "t", "algorithm", "gamma", "R1_f", "RL_f", "R1_prev", "RL_prev", "R1_nor", "RL_nor", "ppl_nor", "efficacy", "ability"
    )
    .unwrap();
    for r in &reports {
        let (f1, fl) = cell(r, "forget");
        let (p1, pl) = cell(r, "previous");
        let (n1, nl) = cell(r, "retain");
        let gamma = r.gamma.map(|g| format!("{g:.3e}")).unwrap_or_else(|| "-".into());
        writeln!(
            out,
            "{:>3}  {:<10} {:>10}  {:>7} {:>7}  {:>7} {:>7}  {:>7} {:>7}  {:>8.4} {:>9.4} {:>7.4}",
            r.t, r.algorithm, gamma, f1, fl, p1, pl, n1, nl, r.retain_perplexity, r.efficacy, r.ability_proxy
        )
        .unwrap();
    }
    if let Some(v) = &manifest.vanilla {
        writeln!(
            out,
            "vanilla: greedy Rouge-L on forget books {:.4}, retain perplexity {:.4}",
            v.forget_greedy_rouge_l, v.retain_perplexity
        )
        .unwrap();
    }
    let status = match &manifest.status {
        RunStatus::Running => "running".to_string(),
        RunStatus::Completed => "completed".to_string(),
        RunStatus::Failed { message } => format!("failed: {message}"),
    };
    writeln!(out, "status: {status}").unwrap();
    Ok(out)
}
