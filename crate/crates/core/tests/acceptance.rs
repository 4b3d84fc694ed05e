//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits non-zero
//! if any criterion fails.

mod common;

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use takedown_core::corpus::{build_schedule, ChunkConfig, ChunkPair, Document, DocumentRole, TokenSequence};
use takedown_core::decode::{generate, greedy_generate, memfree_generate, NGramFilter, SamplerConfig};
use takedown_core::eval::{lcs_len, read_metrics_csv, rouge1, rouge_l_words, CsvRow};
use takedown_core::experiment::{
    load_step_reports, run_dir_of, run_experiment, ExperimentConfig, RunManifest, RunStatus,
};
use takedown_core::model::{LanguageModel, ModelConfig, Objective, ParameterVector};
use takedown_core::objectives::{
    grad_diff_objective, ssu_objective, ForgetLoss, GradDiffWeights, KlRetainLoss, NpoLoss, RandomLabelLoss, SsuWeights,
};
use takedown_core::rng::seeded;
use takedown_core::unlearn::{
    fine_tune_stage, masked_update, negate_task_vector, run_sequence, saliency_mask, FineTunePlan, GammaPolicy,
    NoObserver, Registry, SaliencyMask, UnlearnConfig,
};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn ok<T>(r: takedown_core::Result<T>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn toy_config(vocab: usize, dim: usize, layers: usize, ctx: usize, seed: u64) -> ModelConfig {
    ModelConfig {
        vocab_size: vocab,
        embed_dim: dim,
        n_layers: layers,
        n_heads: 2,
        context_len: ctx,
        init_seed: seed,
        ..ModelConfig::default()
    }
}

fn perturbed(model: &LanguageModel, scale: f64, seed: u64) -> LanguageModel {
    let mut rng = seeded(seed);
    let mut p = model.params().clone();
    for v in p.values_mut() {
        *v += scale * (rng.random::<f64>() - 0.5);
    }
    model.with_params(p).unwrap()
}

fn random_chunks(book: &str, n: usize, len: usize, vocab: u32, seed: u64) -> Vec<ChunkPair> {
    let mut rng = seeded(seed);
    (0..n)
        .map(|i| ChunkPair {
            book_id: book.into(),
            chunk_index: i,
            prompt: TokenSequence::new((0..len).map(|_| rng.random_range(0..vocab)).collect(), "toy"),
            continuation: TokenSequence::new((0..len).map(|_| rng.random_range(0..vocab)).collect(), "toy"),
        })
        .collect()
}

/// Worst relative error between the analytic gradient and central differences
/// over `coords` random coordinates with a non-negligible gradient.
fn worst_fd_error(obj: &dyn Objective, model: &LanguageModel, coords: usize, seed: u64) -> Result<f64, String> {
    let (_, grad) = ok(obj.value_and_grad(model))?;
    let active: Vec<usize> = (0..grad.len()).filter(|&i| grad.values()[i].abs() > 1e-6).collect();
    check(active.len() >= coords, format!("only {} active coordinates", active.len()))?;
    let mut rng = seeded(seed);
    let h = 1e-5;
    let mut worst = 0.0f64;
    for _ in 0..coords {
        let i = active[rng.random_range(0..active.len())];
        let mut plus = model.params().clone();
        plus.values_mut()[i] += h;
        let mut minus = model.params().clone();
        minus.values_mut()[i] -= h;
        let fp = ok(obj.value(&model.with_params(plus).unwrap()))?;
        let fm = ok(obj.value(&model.with_params(minus).unwrap()))?;
        let numeric = (fp - fm) / (2.0 * h);
        let a = grad.values()[i];
        worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()));
    }
    Ok(worst)
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let base = ok(LanguageModel::init(toy_config(16, 8, 2, 12, 7)))?;
    check(base.num_params() <= 10_000, format!("{} parameters", base.num_params()))?;
    let model = perturbed(&base, 0.3, 4);
    let reference = perturbed(&base, 0.3, 5);
    let forget = random_chunks("f", 3, 4, 16, 11);
    let aux = random_chunks("x", 3, 4, 16, 12);
    let coords = 24;
    let objectives: Vec<(&str, Box<dyn Objective + '_>)> = vec![
        ("forget", Box::new(ok(ForgetLoss::new(&forget))?)),
        ("random-label", Box::new(ok(RandomLabelLoss::new(&forget, 2, 3))?)),
        ("ssu", Box::new(ok(ssu_objective(&forget, SsuWeights::default(), 2, 3))?)),
        (
            "graddiff-forget",
            Box::new(ok(grad_diff_objective(
                &reference,
                &forget,
                &aux,
                GradDiffWeights { eps1: 1.0, eps2: 0.0, eps3: 0.0 },
                1,
                0,
            ))?),
        ),
        ("graddiff-random", Box::new(ok(RandomLabelLoss::with_pool(&forget, &aux, 2, 5))?)),
        ("graddiff-kl", Box::new(ok(KlRetainLoss::new(&reference, &aux))?)),
        (
            "graddiff",
            Box::new(ok(grad_diff_objective(&reference, &forget, &aux, GradDiffWeights::default(), 2, 5))?),
        ),
        ("npo", Box::new(ok(NpoLoss::new(&reference, 0.4, &forget))?)),
    ];
    let mut parts = Vec::new();
    for (i, (name, obj)) in objectives.iter().enumerate() {
        let worst = worst_fd_error(obj.as_ref(), &model, coords, 100 + i as u64)?;
        check(worst < 1e-6, format!("{name}: relative error {worst:.2e}"))?;
        parts.push(format!("{name} {worst:.1e}"));
    }
    let secs = start.elapsed().as_secs_f64();
    check(secs < 60.0, format!("took {secs:.1}s"))?;
    Ok(format!(
        "{} params, {coords} coords each, worst rel err: {}; {secs:.1}s",
        base.num_params(),
        parts.join(", ")
    ))
}

fn bits(p: &ParameterVector) -> Vec<u64> {
    p.values().iter().map(|v| v.to_bits()).collect()
}

fn small_schedule() -> Result<takedown_core::corpus::SplitDataset, String> {
    let lex = common::lexicon(&common::alphabet(0, 1), 80, 1);
    let doc = |id: &str, seed: u64, role| ok(Document::from_text(id, &common::book_text(&lex, 160, seed), role));
    let forget = vec![doc("f1", 1, DocumentRole::ForgetCandidate)?, doc("f2", 2, DocumentRole::ForgetCandidate)?];
    let retain = vec![doc("r1", 3, DocumentRole::Retain)?];
    let aux = vec![doc("a1", 4, DocumentRole::Auxiliary)?];
    ok(build_schedule(&forget, &retain, &aux, ChunkConfig { chunk_len: 16, prompt_len: 8 }, 4, 9))
}

fn arithmetic_identities() -> Outcome {
    let model = perturbed(&ok(LanguageModel::init(toy_config(260, 8, 1, 16, 3)))?, 0.1, 1);
    let theta = model.params().clone();
    check(bits(&ok(negate_task_vector(&theta, &theta))?) == bits(&theta), "negate(θ,θ) != θ")?;

    let mut rng = seeded(21);
    let grid = |rng: &mut takedown_core::rng::Rng| {
        let v: Vec<f64> = (0..64).map(|_| rng.random_range(-1024i32..=1024) as f64 / 256.0).collect();
        ParameterVector::from_values(v)
    };
    for _ in 0..200 {
        let prev = grid(&mut rng);
        let ft = grid(&mut rng);
        let u = ok(negate_task_vector(&prev, &ft))?;
        let back: Vec<f64> = u.values().iter().zip(ft.values().iter().zip(prev.values())).map(|(u, (f, p))| u + (f - p)).collect();
        check(
            back.iter().map(|v| v.to_bits()).collect::<Vec<_>>() == bits(&prev),
            "θ_u + (θ_ft − θ_prev) != θ_prev",
        )?;
    }

    let splits = small_schedule()?;
    let mut cfg = UnlearnConfig::new("ssu", 0.01);
    cfg.epochs = 0;
    let zero = ok(fine_tune_stage(&model, &theta, splits.forget(1), &FineTunePlan::ssu(&cfg, 0.01, 5)))?;
    check(bits(&zero.params) == bits(&theta), "zero-epoch fine-tune changed parameters")?;

    let delta = ParameterVector::from_values(vec![1.0; theta.len()]);
    let delta = ok(ParameterVector::new(delta.into_values(), theta.segments().clone()))?;
    let none = SaliencyMask {
        bits: vec![false; theta.len()],
        gamma_used: f64::INFINITY,
    };
    check(bits(&ok(masked_update(&theta, &delta, Some(&none)))?) == bits(&theta), "zero mask changed parameters")?;

    let registry = Registry::builtin();
    let mut ssu = UnlearnConfig::new("ssu", 0.02);
    ssu.ssu_weights = SsuWeights { eps1: 1.0, eps2: 0.0 };
    ssu.gamma_policy = GammaPolicy::Absolute(0.0);
    ssu.seed = 17;
    let mut tv = UnlearnConfig::new("tv", 0.02);
    tv.seed = 17;
    let a = ok(ok(run_sequence(&model, &splits, &ssu, &registry, 2, &mut NoObserver))?.into_result())?;
    let b = ok(ok(run_sequence(&model, &splits, &tv, &registry, 2, &mut NoObserver))?.into_result())?;
    check(a.len() == 2 && b.len() == 2, "sequence length")?;
    for (x, y) in a.iter().zip(&b) {
        check(bits(&x.theta_u) == bits(&y.theta_u), format!("SSU and TV differ at t={}", x.t))?;
    }
    check(bits(&a[1].theta_u) != bits(&theta), "degenerate run left parameters unchanged")?;
    Ok("negation, inverse law on 200 dyadic vectors, zero-step, zero-mask, SSU(ε₂=0,γ=0)≡TV over 2 steps".into())
}

fn mask_vectors() -> Outcome {
    let g = ParameterVector::from_values(vec![-0.1, 0.5, -0.9]);
    let mask = ok(saliency_mask(&g, GammaPolicy::Absolute(0.4)))?;
    check(mask.bits == vec![false, true, true], format!("mask {:?}", mask.bits))?;
    let theta = ParameterVector::from_values(vec![0.0; 3]);
    let delta = ParameterVector::from_values(vec![1.0; 3]);
    let out = ok(masked_update(&theta, &delta, Some(&mask)))?;
    check(out.values() == [0.0, 1.0, 1.0], format!("update {:?}", out.values()))?;
    let mut rng = seeded(33);
    for _ in 0..100 {
        let g = ParameterVector::from_values((0..50).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect());
        let mut gammas: Vec<f64> = (0..6).map(|_| rng.random::<f64>()).collect();
        gammas.sort_by(f64::total_cmp);
        let masks: Vec<Vec<bool>> = gammas
            .iter()
            .map(|&y| ok(saliency_mask(&g, GammaPolicy::Absolute(y))).map(|m| m.bits))
            .collect::<Result<_, _>>()?;
        for w in masks.windows(2) {
            check(w[1].iter().zip(&w[0]).all(|(hi, lo)| !hi || *lo), "mask not monotone in γ")?;
        }
    }
    Ok("mask [0,1,1], update [0,1,1], monotone over 100 gradients".into())
}

fn brute_lcs(a: &[u8], b: &[u8]) -> usize {
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let is_subseq = |sub: &[u8]| {
        let mut it = long.iter();
        sub.iter().all(|x| it.any(|y| y == x))
    };
    let mut best = 0;
    for bitset in 0u32..(1 << short.len()) {
        let sub: Vec<u8> = (0..short.len()).filter(|i| bitset >> i & 1 == 1).map(|i| short[i]).collect();
        if sub.len() > best && is_subseq(&sub) {
            best = sub.len();
        }
    }
    best
}

fn all_strings(max_len: usize) -> Vec<Vec<u8>> {
    let mut out = vec![Vec::new()];
    let mut frontier = vec![Vec::new()];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for s in &frontier {
            for w in 0..3u8 {
                let mut t: Vec<u8> = s.clone();
                t.push(w);
                next.push(t);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

fn rouge_oracles() -> Outcome {
    const WORDS: [&str; 3] = ["alpha", "beta", "gamma"];
    let words = |s: &[u8]| s.iter().map(|&w| WORDS[w as usize].to_string()).collect::<Vec<_>>();
    let strings = all_strings(8);
    let mut rng = seeded(44);
    let references: Vec<&Vec<u8>> = (0..24).map(|_| &strings[rng.random_range(0..strings.len())]).collect();
    let mut pairs = 0usize;
    let mut compare = |a: &[u8], b: &[u8]| -> Result<(), String> {
        let expect = brute_lcs(a, b);
        let got = lcs_len(a, b);
        check(got == expect, format!("lcs {a:?} {b:?}: {got} vs {expect}"))?;
        let score = rouge_l_words(&words(a), &words(b));
        let f = if expect == 0 { 0.0 } else { 2.0 * expect as f64 / (a.len() + b.len()) as f64 };
        check((score.f1 - f).abs() < 1e-12, format!("rougeL f1 {a:?} {b:?}"))?;
        pairs += 1;
        Ok(())
    };
    for a in &strings {
        for b in &strings {
            if a.len() + b.len() <= 8 {
                compare(a, b)?;
            }
        }
        for b in &references {
            compare(a, b)?;
        }
    }
    let f1 = rouge1("the cat sat", "the cat ran").f1;
    check((f1 - 2.0 / 3.0).abs() < 1e-12, format!("rouge1 f1 {f1}"))?;
    Ok(format!("{pairs} pairs agree with brute-force LCS; rouge1 f1 = {f1:.12}"))
}

fn npo_checks() -> Outcome {
    let base = ok(LanguageModel::init(toy_config(16, 8, 2, 12, 5)))?;
    let model = perturbed(&base, 0.3, 8);
    let forget = random_chunks("f", 4, 4, 16, 8);
    let expect = 2.0 / 0.4 * 2f64.ln();
    let mut worst = 0.0f64;
    for pair in forget.chunks(1) {
        let v = ok(ok(NpoLoss::new(&model, 0.4, pair))?.value(&model))?;
        worst = worst.max((v - expect).abs());
    }
    check(worst < 1e-9, format!("identity value off by {worst:.2e}"))?;
    let reference = perturbed(&base, 0.3, 9);
    let (_, g_npo) = ok(ok(NpoLoss::new(&reference, 1e-3, &forget))?.value_and_grad(&model))?;
    let (_, g_fgt) = ok(ok(ForgetLoss::new(&forget))?.value_and_grad(&model))?;
    let mut neg = g_fgt.clone();
    neg.scale(-1.0);
    let cos = g_npo.cosine(&neg);
    check(cos >= 0.99, format!("cosine {cos:.6}"))?;
    Ok(format!("identity loss err {worst:.1e}; cos(∇NPO, −∇L_fgt) at β=1e-3 = {cos:.6}"))
}

fn memfree_and_bloom() -> Outcome {
    let n = 6;
    // Scaled weights give peaked next-token distributions, so sampling often
    // follows the greedy path and the guard has work to do.
    let base = ok(LanguageModel::init(toy_config(260, 16, 1, 48, 13)))?;
    let mut p = base.params().clone();
    p.scale(4.0);
    let model = ok(base.with_params(p))?;
    let mut rng = seeded(66);
    let prompts: Vec<Vec<u32>> = (0..100).map(|_| (0..8).map(|_| rng.random_range(97..123)).collect()).collect();
    let sampler = SamplerConfig {
        max_new_tokens: 24,
        ..SamplerConfig::default()
    };
    let mut filter = ok(NGramFilter::with_capacity(n, 100 * 24, 1e-3))?;
    for prompt in &prompts {
        let greedy = ok(greedy_generate(&model, prompt, 24))?;
        filter.insert_sequence(greedy.as_slice());
    }
    let empty = ok(NGramFilter::with_capacity(n, 100 * 24, 1e-3))?;
    let (mut guarded_hits, mut unguarded_hits, mut changed) = (0usize, 0usize, 0usize);
    for (i, prompt) in prompts.iter().enumerate() {
        let cfg = SamplerConfig { seed: i as u64, ..sampler };
        let plain = ok(generate(&model, prompt, &cfg, None))?;
        let guarded = ok(memfree_generate(&model, prompt, &cfg, None, &filter))?;
        let with_empty = ok(memfree_generate(&model, prompt, &cfg, None, &empty))?;
        check(with_empty.as_slice() == plain.as_slice(), format!("empty filter changed output for prompt {i}"))?;
        let scan = |out: &TokenSequence| {
            let mut window = prompt.clone();
            window.extend_from_slice(out.as_slice());
            // Only windows that end on an emitted token are under the guard's control.
            filter.hits(&window).into_iter().filter(|&s| s + n > prompt.len()).count()
        };
        guarded_hits += scan(&guarded);
        unguarded_hits += scan(&plain);
        changed += usize::from(guarded.as_slice() != plain.as_slice());
    }
    check(guarded_hits == 0, format!("{guarded_hits} filter-positive n-grams in guarded output"))?;

    let target = 1e-3;
    let mut bloom = ok(NGramFilter::with_capacity(n, 100_000, target))?;
    let mut present = HashSet::new();
    let mut rng = seeded(77);
    while present.len() < 100_000 {
        let g: Vec<u32> = (0..n).map(|_| rng.random_range(0..260)).collect();
        if present.insert(g.clone()) {
            ok(bloom.insert(&g))?;
        }
    }
    let mut false_neg = 0;
    for g in &present {
        false_neg += usize::from(!ok(bloom.contains(g))?);
    }
    let mut probes = 0;
    let mut false_pos = 0;
    while probes < 100_000 {
        let g: Vec<u32> = (0..n).map(|_| rng.random_range(0..260)).collect();
        if present.contains(&g) {
            continue;
        }
        probes += 1;
        false_pos += usize::from(ok(bloom.contains(&g))?);
    }
    let fp = false_pos as f64 / probes as f64;
    check(false_neg == 0, format!("{false_neg} false negatives"))?;
    check(fp <= 2.0 * target, format!("false-positive rate {fp:.2e}"))?;
    Ok(format!(
        "guarded hits 0 (unguarded {unguarded_hits}, {changed}/100 outputs diverted); empty filter identical; \
         bloom FN 0/1e5, FP {fp:.2e} (target {target:.0e})"
    ))
}

/// The desk-scale directional run shared by the last two criteria.
fn experiment_json(c: &common::SyntheticCorpus, algorithm: &str, guard: bool, checkpoint: Option<&Path>, out: &str) -> String {
    let ckpt = checkpoint
        .map(|p| format!(", \"checkpoint\": {}", serde_json::to_string(p).unwrap()))
        .unwrap_or_default();
    format!(
        r#"{{
  "corpus": {{"forget_books": {}, "retain_books": {}, "auxiliary_books": {}}},
  "chunking": {{"chunk_len": 64, "prompt_len": 32}},
  "samples_per_split": 8,
  "model": {{"embed_dim": 64, "n_layers": 2, "n_heads": 4, "context_len": 64, "init_seed": 1}},
  "memorize": {{"lr": 3e-3, "max_epochs": 400, "batch_size": 4, "eval_every": 10, "target_rouge_l": 0.95{ckpt}}},
  "unlearn": {{
    "algorithm": "{algorithm}", "lr": 1.2e-3, "epochs": 3,
    "lr_schedule": {{"two_phase": {{"switch_after": 1, "later_lr": 5e-4}}}},
    "divergence_guard": {guard}
  }},
  "output_dir": "{out}",
  "seed": 3
}}"#,
        common::paths_json(&c.forget),
        common::paths_json(&c.retain),
        common::paths_json(&c.auxiliary),
    )
}

struct DirectionalRun {
    dir: PathBuf,
    run_dir: PathBuf,
    manifest: RunManifest,
    secs: f64,
}

fn run_config(dir: &Path, name: &str, json: &str) -> Result<DirectionalRun, String> {
    let path = dir.join(name);
    std::fs::write(&path, json).map_err(|e| e.to_string())?;
    let (cfg, base) = ok(ExperimentConfig::load(&path))?;
    let start = Instant::now();
    let manifest = ok(run_experiment(&cfg, &base, &Registry::builtin()))?;
    Ok(DirectionalRun {
        dir: dir.to_path_buf(),
        run_dir: run_dir_of(&cfg, &base),
        manifest,
        secs: start.elapsed().as_secs_f64(),
    })
}

fn ssu_run(dir: &Path, out: &str) -> Result<DirectionalRun, String> {
    let corpus = common::write_corpus(dir, 3, 2, 1, 400, 7);
    run_config(dir, &format!("{out}.json"), &experiment_json(&corpus, "ssu", false, None, out))
}

fn rouge_l_at(rows: &[CsvRow], t: usize, split: &str) -> Result<f64, String> {
    rows.iter()
        .find(|r| r.t == t && r.split == split)
        .map(|r| r.score.rouge_l)
        .ok_or_else(|| format!("no {split} row for t={t}"))
}

fn directional(run: &DirectionalRun) -> Outcome {
    check(run.manifest.status == RunStatus::Completed, format!("status {:?}", run.manifest.status))?;
    let vanilla = run.manifest.vanilla.as_ref().ok_or("no vanilla record")?;
    check(
        vanilla.forget_greedy_rouge_l >= 0.8,
        format!("vanilla greedy Rouge-L {:.3}", vanilla.forget_greedy_rouge_l),
    )?;
    let rows = ok(read_metrics_csv(&run.run_dir.join("metrics/metrics.csv")))?;
    let base_rows = ok(read_metrics_csv(&run.run_dir.join("metrics/vanilla.csv")))?;
    let mut lines = vec![format!(
        "vanilla greedy RL_f {:.3}, ppl_nor {:.4}",
        vanilla.forget_greedy_rouge_l, vanilla.retain_perplexity
    )];
    let mut failures = Vec::new();
    for t in 1..=3 {
        let (u, v) = (rouge_l_at(&rows, t, "forget")?, rouge_l_at(&base_rows, t, "forget")?);
        let drop = 1.0 - u / v;
        lines.push(format!("(a) t={t} RL_f {u:.3} vs {v:.3} drop {:.0}%", 100.0 * drop));
        if drop < 0.5 {
            failures.push(format!("(a) t={t}"));
        }
    }
    let (u, v) = (rouge_l_at(&rows, 3, "previous")?, rouge_l_at(&base_rows, 3, "previous")?);
    lines.push(format!("(b) RL_prev t=3 {u:.3} = {:.0}% of {v:.3}", 100.0 * u / v));
    if u > 0.6 * v {
        failures.push("(b)".into());
    }
    let reports = ok(load_step_reports(&run.run_dir, &run.manifest))?;
    let ppl = reports.iter().map(|r| r.retain_perplexity).fold(0.0, f64::max);
    let rise = ppl / vanilla.retain_perplexity - 1.0;
    lines.push(format!("(c) max ppl_nor {ppl:.4} rise {:.1}%", 100.0 * rise));
    if rise > 0.2 {
        failures.push("(c)".into());
    }

    let ckpt = run.run_dir.join(&vanilla.checkpoint);
    let corpus = common::write_corpus(&run.dir, 3, 2, 1, 400, 7);
    let ga = run_config(&run.dir, "ga.json", &experiment_json(&corpus, "ga", true, Some(&ckpt), "ga"))?;
    match &ga.manifest.status {
        RunStatus::Failed { message } => lines.push(format!("(d) GA tripped: {message}")),
        _ => {
            let ga_reports = ok(load_step_reports(&ga.run_dir, &ga.manifest))?;
            let ga_ppl = ga_reports.iter().map(|r| r.retain_perplexity).fold(0.0, f64::max);
            lines.push(format!("(d) GA max ppl_nor {ga_ppl:.4} vs SSU {ppl:.4}"));
            if ga_ppl <= ppl {
                failures.push("(d)".into());
            }
        }
    }
    lines.push(format!("runtime {:.0}s", run.secs));
    if run.secs >= 600.0 {
        failures.push("runtime".into());
    }
    let detail = lines.join("; ");
    if failures.is_empty() {
        Ok(detail)
    } else {
        Err(format!("{} failed; {detail}", failures.join(", ")))
    }
}

fn determinism(first: &DirectionalRun, scratch: &Path) -> Outcome {
    let second = ssu_run(scratch, "rerun")?;
    let mut compared = Vec::new();
    for rel in ["metrics/metrics.csv", "metrics/vanilla.csv", "tradeoff.csv"] {
        let a = std::fs::read(first.run_dir.join(rel)).map_err(|e| format!("{rel}: {e}"))?;
        let b = std::fs::read(second.run_dir.join(rel)).map_err(|e| format!("{rel}: {e}"))?;
        check(a == b, format!("{rel} differs between runs"))?;
        compared.push(format!("{rel} ({} bytes)", a.len()));
    }
    Ok(format!("byte-identical: {}", compared.join(", ")))
}

fn main() {
    let scratch = tempfile::tempdir().expect("temp dir");
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut record = |n: usize, name: &'static str, outcome: Outcome| {
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d.as_str()),
            Err(e) => ("FAIL", e.as_str()),
        };
        println!("criterion {n} [{tag}] {name}: {detail}");
        results.push((n, name, outcome));
    };
    record(1, "gradient suite", gradient_suite());
    record(2, "arithmetic identities", arithmetic_identities());
    record(3, "mask unit vectors", mask_vectors());
    record(4, "rouge oracles", rouge_oracles());
    record(5, "npo checks", npo_checks());
    record(6, "memfree and bloom", memfree_and_bloom());
    let first_dir = scratch.path().join("first");
    std::fs::create_dir_all(&first_dir).unwrap();
    match ssu_run(&first_dir, "run") {
        Ok(run) => {
            record(7, "directional run", directional(&run));
            let rerun_dir = scratch.path().join("second");
            std::fs::create_dir_all(&rerun_dir).unwrap();
            record(8, "determinism", determinism(&run, &rerun_dir));
        }
        Err(e) => {
            record(7, "directional run", Err(e.clone()));
            record(8, "determinism", Err(format!("no first run: {e}")));
        }
    }
    let failed: Vec<usize> = results.iter().filter(|r| r.2.is_err()).map(|r| r.0).collect();
    println!(
        "acceptance: {}/{} criteria passed",
        results.len() - failed.len(),
        results.len()
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
