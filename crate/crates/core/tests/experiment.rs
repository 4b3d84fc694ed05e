mod common;

use std::path::{Path, PathBuf};

use takedown_core::eval::{read_metrics_csv, MetricReport};
use takedown_core::experiment::{
    evaluate_checkpoint, report_emit, run_dir_of, run_experiment, ExperimentConfig, RunManifest, RunStatus,
    TRADEOFF_CSV, TRADEOFF_HEADER,
};
use takedown_core::unlearn::Registry;

fn config_json(c: &common::SyntheticCorpus, unlearn: &str, extra: &str) -> String {
    format!(
        r#"{{
  "corpus": {{"forget_books": {}, "retain_books": {}, "auxiliary_books": {}}},
  "chunking": {{"chunk_len": 32, "prompt_len": 16}},
  "samples_per_split": 3,
  "model": {{"embed_dim": 16, "n_layers": 1, "n_heads": 2, "context_len": 32, "init_seed": 2}},
  "memorize": {{"max_epochs": 4, "eval_every": 2, "batch_size": 4}},
  "unlearn": {unlearn},
  "sampler": {{"max_new_tokens": 16}},
  "seed": 5{extra}
}}"#,
        common::paths_json(&c.forget),
        common::paths_json(&c.retain),
        common::paths_json(&c.auxiliary),
    )
}

fn setup(dir: &Path, unlearn: &str, extra: &str) -> (ExperimentConfig, PathBuf) {
    let corpus = common::write_corpus(dir, 2, 1, 1, 160, 3);
    let path = dir.join("exp.json");
    std::fs::write(&path, config_json(&corpus, unlearn, extra)).unwrap();
    ExperimentConfig::load(&path).unwrap()
}

const SSU: &str = r#"{"algorithm": "ssu", "lr": 0.01}"#;

fn read_report(run_dir: &Path, rel: &str) -> MetricReport {
    serde_json::from_str(&std::fs::read_to_string(run_dir.join(rel)).unwrap()).unwrap()
}

#[test]
fn run_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, base) = setup(dir.path(), SSU, r#", "memfree": {"enabled": true}"#);
    let manifest = run_experiment(&cfg, &base, &Registry::builtin()).unwrap();
    let run = run_dir_of(&cfg, &base);
    assert_eq!(manifest.status, RunStatus::Completed);
    assert_eq!(manifest.steps.len(), 2);

    let ckpts: Vec<_> = std::fs::read_dir(run.join("checkpoints"))
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.path().extension().is_some_and(|x| x == "ckpt"))
        .collect();
    assert_eq!(ckpts.len(), 3, "vanilla plus one per step");
    for step in &manifest.steps {
        assert!(run.join(&step.theta_u_checkpoint).is_file());
        assert!(run.join(step.theta_ft_checkpoint.as_ref().unwrap()).is_file());
        assert!(run.join(&step.metrics).is_file());
        assert!(step.gamma.is_some() && step.mask_fraction.is_some());
    }

    let rows = read_metrics_csv(&run.join("metrics/metrics.csv")).unwrap();
    let labels = |t: usize| rows.iter().filter(|r| r.t == t).map(|r| r.split.as_str()).collect::<Vec<_>>();
    assert_eq!(labels(1), ["forget", "retain", "forget+memfree"]);
    assert_eq!(labels(2), ["forget", "previous", "retain", "forget+memfree", "previous+memfree"]);

    let reread = RunManifest::read(&run).unwrap();
    assert_eq!(reread, manifest);
}

#[test]
fn tradeoff_matches_recomputation_from_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, base) = setup(dir.path(), SSU, "");
    let manifest = run_experiment(&cfg, &base, &Registry::builtin()).unwrap();
    let run = run_dir_of(&cfg, &base);
    let table = report_emit(&run).unwrap();
    assert!(table.contains("status: completed"));

    let rows = read_metrics_csv(&run.join("metrics/metrics.csv")).unwrap();
    let tradeoff = std::fs::read_to_string(run.join(TRADEOFF_CSV)).unwrap();
    let mut lines = tradeoff.lines();
    assert_eq!(lines.next(), Some(TRADEOFF_HEADER));
    let vanilla_ppl = manifest.vanilla.as_ref().unwrap().retain_perplexity;
    for (line, step) in lines.zip(&manifest.steps) {
        let cols: Vec<&str> = line.split(',').collect();
        let t: usize = cols[0].parse().unwrap();
        assert_eq!(t, step.t);
        let pair = |label: &str| {
            rows.iter()
                .find(|r| r.t == t && r.split == label)
                .map(|r| r.score.rouge1 + r.score.rouge_l)
                .unwrap_or(0.0)
        };
        let efficacy = -0.5 * pair("forget") - 0.5 * pair("previous");
        let logged: f64 = cols[2].parse().unwrap();
        assert!((logged - efficacy).abs() < 5e-6, "t={t}: {logged} vs {efficacy}");

        let ppl = read_report(&run, &step.metrics).retain_perplexity;
        let ability: f64 = cols[3].parse().unwrap();
        assert!((ability - (vanilla_ppl / ppl).clamp(0.0, 1.0)).abs() < 5e-7);
    }
}

#[test]
fn checkpoint_reevaluation_reproduces_step_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, base) = setup(dir.path(), SSU, "");
    let manifest = run_experiment(&cfg, &base, &Registry::builtin()).unwrap();
    let run = run_dir_of(&cfg, &base);
    let vanilla = run.join(&manifest.vanilla.as_ref().unwrap().checkpoint);
    for step in &manifest.steps {
        let logged = read_report(&run, &step.metrics);
        let again = evaluate_checkpoint(&cfg, &base, &run.join(&step.theta_u_checkpoint), step.t, Some(&vanilla)).unwrap();
        assert_eq!(again.splits, logged.splits);
        assert_eq!(again.retain_perplexity, logged.retain_perplexity);
        assert_eq!(again.efficacy, logged.efficacy);
    }
    assert!(evaluate_checkpoint(&cfg, &base, &vanilla, 3, None).is_err());
}

#[test]
fn reused_vanilla_checkpoint_gives_same_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, base) = setup(dir.path(), SSU, "");
    run_experiment(&cfg, &base, &Registry::builtin()).unwrap();
    let run = run_dir_of(&cfg, &base);
    let first = std::fs::read(run.join("metrics/metrics.csv")).unwrap();

    let mut again = cfg.clone();
    again.output_dir = "reuse".into();
    again.memorize.checkpoint = Some(run.join("checkpoints/vanilla.ckpt"));
    let manifest = run_experiment(&again, &base, &Registry::builtin()).unwrap();
    assert_eq!(manifest.vanilla.as_ref().unwrap().epochs, None);
    let second = std::fs::read(run_dir_of(&again, &base).join("metrics/metrics.csv")).unwrap();
    assert_eq!(first, second);
}

#[test]
fn failing_step_is_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, base) = setup(dir.path(), r#"{"algorithm": "ga", "lr": 50.0, "epochs": 4, "divergence_guard": true}"#, "");
    let manifest = run_experiment(&cfg, &base, &Registry::builtin()).unwrap();
    assert!(matches!(manifest.status, RunStatus::Failed { .. }), "{:?}", manifest.status);
    let reread = RunManifest::read(&run_dir_of(&cfg, &base)).unwrap();
    assert_eq!(reread.status, manifest.status);
    assert!(run_dir_of(&cfg, &base).join("checkpoints/vanilla.ckpt").is_file());
}

#[test]
fn tampered_manifest_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, base) = setup(dir.path(), SSU, r#", "steps": 1"#);
    run_experiment(&cfg, &base, &Registry::builtin()).unwrap();
    let run = run_dir_of(&cfg, &base);
    let path = run.join("manifest.json");
    let text = std::fs::read_to_string(&path).unwrap();
    std::fs::write(&path, text.replacen("\"seed\": 5", "\"seed\": 6", 1)).unwrap();
    assert!(RunManifest::read(&run).is_err());
}
