//! Acceptance suite. Each test prints one `PASS`/`FAIL` line (written
//! straight to stdout so it shows up even when output is captured) and then
//! asserts the same condition.

use std::collections::HashSet;
use std::io::Write;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ccfcnet::analysis::{
    adjusted_rand_index, apply_extreme_rule, counter_condition_classify, diff_maps, mask_statistics, mean_diff,
    pearson, subtype_cluster, ExtremeMode,
};
use ccfcnet::data::{
    devectorize_symmetric, edge_pairs, generate_synthetic, group_mean, pearson_fc, planted_module, split, upper_of,
    vectorize_upper, Dataset, FcMatrix, Split, SubjectRecord, SyntheticSpec, CONTROL, PATIENT,
};
use ccfcnet::model::{
    load_checkpoint, multi_head_self_attention, save_checkpoint, Ablations, Checkpoint, Mode, Model, ModelConfig,
    MhsaWeights,
};
use ccfcnet::train::{evaluate, gradient_check, loss_reg, step2_update, train, AdamW, LossTerm, Probe, TrainConfig};

const TRIALS: usize = 100;

fn report(id: u8, name: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    writeln!(out, "[acceptance] criterion {id} {verdict}: {name} — {detail}").unwrap();
}

// ---------------------------------------------------------------------------
// Shared benchmark runs (trained once per test binary).

struct Run {
    data: Dataset,
    parts: Split,
    model: Model,
    elapsed: Duration,
}

fn run(n_subtypes: usize, ablations: Ablations) -> Run {
    let seed = 7;
    let data = generate_synthetic(&SyntheticSpec { n_subtypes, ..SyntheticSpec::benchmark(seed) }).unwrap();
    let parts = split(&data, (0.6, 0.2, 0.2), seed).unwrap();
    let model = Model::new(ModelConfig::for_rois(data.r()), ablations, seed).unwrap();
    let cfg = TrainConfig { seed, epochs: 60, ablations, ..TrainConfig::default() };
    let start = Instant::now();
    let out = train(&parts.train, &parts.val, model, &cfg).unwrap();
    Run { data, parts, model: out.best, elapsed: start.elapsed() }
}

fn default_run() -> &'static Run {
    static RUN: OnceLock<Run> = OnceLock::new();
    RUN.get_or_init(|| run(1, Ablations::default()))
}

fn no_step2_run() -> &'static Run {
    static RUN: OnceLock<Run> = OnceLock::new();
    RUN.get_or_init(|| run(1, Ablations { no_step2: true, ..Ablations::default() }))
}

fn no_reg_run() -> &'static Run {
    static RUN: OnceLock<Run> = OnceLock::new();
    RUN.get_or_init(|| run(1, Ablations { no_reg: true, ..Ablations::default() }))
}

fn subtype_run() -> &'static Run {
    static RUN: OnceLock<Run> = OnceLock::new();
    RUN.get_or_init(|| run(3, Ablations::default()))
}

// ---------------------------------------------------------------------------
// 1. Gradient fidelity.

#[test]
fn c1_gradient_fidelity() {
    let start = Instant::now();
    let spec = SyntheticSpec { r: 8, n_per_class: 2, planted_edges: planted_module(8, 6, 2), ..SyntheticSpec::benchmark(2) };
    let data = generate_synthetic(&spec).unwrap();
    let config = ModelConfig { d: 8, n_blocks: 1, n_heads: 2, hidden_enc: 16, ..ModelConfig::for_rois(8) };
    let model = Model::new(config, Ablations::default(), 11).unwrap();
    let x = data.records().iter().find(|r| r.label == CONTROL).unwrap();
    let donor = data.records().iter().find(|r| r.label == PATIENT).unwrap();
    let probe = Probe { x: &x.fc, label: CONTROL, donor: &donor.fc, donor_label: PATIENT };

    let mut worst = (0.0f64, String::new());
    let mut n_tensors = 0;
    for term in [LossTerm::Recon, LossTerm::Class, LossTerm::Reg] {
        for c in gradient_check(&model, &probe, term, 1e-5).unwrap() {
            n_tensors += 1;
            if c.rel_error > worst.0 || c.rel_error.is_nan() {
                worst = (c.rel_error, format!("{term:?}/{}", c.name));
            }
        }
    }
    let elapsed = start.elapsed();
    let pass = worst.0 < 1e-4 && elapsed < Duration::from_secs(60);
    report(
        1,
        "gradient fidelity",
        pass,
        &format!("max rel error {:.2e} at {} over {n_tensors} term/tensor pairs, {elapsed:.1?}", worst.0, worst.1),
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// 2. Attention oracle.

fn brute_force_mhsa(z: &Array2<f64>, w: &MhsaWeights, h: usize) -> Array2<f64> {
    let (n, d) = z.dim();
    let width = d / h;
    let mut ln = Array2::zeros((n, d));
    for i in 0..n {
        let mu = (0..d).map(|j| z[[i, j]]).sum::<f64>() / d as f64;
        let var = (0..d).map(|j| (z[[i, j]] - mu).powi(2)).sum::<f64>() / d as f64;
        for j in 0..d {
            ln[[i, j]] = (z[[i, j]] - mu) / (var + 1e-5).sqrt() * w.ln_g[[0, j]] + w.ln_b[[0, j]];
        }
    }
    let project = |wm: &Array2<f64>, b: &Array2<f64>| {
        let mut out = Array2::<f64>::zeros((n, d));
        for i in 0..n {
            for o in 0..d {
                let mut s = b[[0, o]];
                for k in 0..d {
                    s += ln[[i, k]] * wm[[o, k]];
                }
                out[[i, o]] = s;
            }
        }
        out
    };
    let (q, k, v) = (project(&w.wq, &w.bq), project(&w.wk, &w.bk), project(&w.wv, &w.bv));
    let mut cat = Array2::<f64>::zeros((n, d));
    for head in 0..h {
        let cols = head * width..(head + 1) * width;
        for i in 0..n {
            let scores: Vec<f64> = (0..n)
                .map(|j| cols.clone().map(|c| q[[i, c]] * k[[j, c]]).sum::<f64>() / (d as f64).sqrt())
                .collect();
            let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
            let total: f64 = e.iter().sum();
            for c in cols.clone() {
                cat[[i, c]] = (0..n).map(|j| e[j] / total * v[[j, c]]).sum::<f64>();
            }
        }
    }
    let mut out = Array2::<f64>::zeros((n, d));
    for i in 0..n {
        for o in 0..d {
            out[[i, o]] = (0..d).map(|c| cat[[i, c]] * w.wo[[o, c]]).sum::<f64>();
        }
    }
    out
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-scale..scale))
}

fn random_mhsa(rng: &mut ChaCha8Rng, d: usize) -> MhsaWeights {
    MhsaWeights {
        ln_g: random_matrix(rng, 1, d, 1.5),
        ln_b: random_matrix(rng, 1, d, 0.5),
        wq: random_matrix(rng, d, d, 0.8),
        bq: random_matrix(rng, 1, d, 0.3),
        wk: random_matrix(rng, d, d, 0.8),
        bk: random_matrix(rng, 1, d, 0.3),
        wv: random_matrix(rng, d, d, 0.8),
        bv: random_matrix(rng, 1, d, 0.3),
        wo: random_matrix(rng, d, d, 0.8),
    }
}

#[test]
fn c2_attention_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut max_err = 0.0f64;
    let mut max_row_dev = 0.0f64;
    for trial in 0..TRIALS {
        let (n, d, h) = if trial == 0 { (4, 8, 2) } else { (rng.random_range(2..9), 8, [1, 2, 4, 8][trial % 4]) };
        let z = random_matrix(&mut rng, n, d, 2.0);
        let w = random_mhsa(&mut rng, d);
        let (out, maps) = multi_head_self_attention(&z, &w, h).unwrap();
        if (n, d, h) == (4, 8, 2) {
            let oracle = brute_force_mhsa(&z, &w, h);
            max_err = max_err.max((&out - &oracle).iter().fold(0.0, |a, v| a.max(v.abs())));
        }
        for m in &maps {
            for row in m.rows() {
                max_row_dev = max_row_dev.max((row.sum() - 1.0).abs());
            }
        }
    }
    let pass = max_err < 1e-8 && max_row_dev < 1e-6;
    report(
        2,
        "attention oracle",
        pass,
        &format!("max |MHSA − loop oracle| {max_err:.2e} (4×8, H=2); max |Σ softmax row − 1| {max_row_dev:.2e} over {TRIALS} instances"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// 3–7. Default synthetic benchmark.

#[test]
fn c3_classification_benchmark() {
    let run = default_run();
    let m = evaluate(&run.model, &run.parts.test).unwrap().metrics;
    let pass = m.acc >= 0.90 && m.auc >= 0.95 && run.elapsed < Duration::from_secs(600);
    report(
        3,
        "classification on the synthetic benchmark",
        pass,
        &format!("test ACC {:.4} AUC {:.4} (need ≥ 0.90 / ≥ 0.95), trained in {:.1?}", m.acc, m.auc, run.elapsed),
    );
    assert!(pass);
}

#[test]
fn c4_counter_condition_flip() {
    let with = counter_condition_classify(&default_run().model, &default_run().parts.test).unwrap().metrics.acc;
    let without = counter_condition_classify(&no_step2_run().model, &no_step2_run().parts.test)
        .map(|e| e.metrics.acc)
        .unwrap_or(0.0);
    let pass = with >= 0.80 && with - without >= 0.15;
    report(
        4,
        "counter-condition flip",
        pass,
        &format!("ACC {with:.4} with Step 2 (need ≥ 0.80), {without:.4} without (drop {:.4}, need ≥ 0.15)", with - without),
    );
    assert!(pass);
}

fn mean_reg(run: &Run) -> f64 {
    let protos = run.model.prototypes().unwrap();
    let total: f64 = run
        .data
        .records()
        .iter()
        .map(|r| loss_reg(&run.model.forward_eval(&r.fc).unwrap().z_bar, protos).unwrap())
        .sum();
    total / run.data.len() as f64
}

#[test]
fn c5_regulariser_effect() {
    let (on, off) = (mean_reg(default_run()), mean_reg(no_reg_run()));
    let pass = on < 0.2 && off > on;
    report(
        5,
        "regulariser effect",
        pass,
        &format!("mean Σ_c |cos(z̄, p_c)| = {on:.4} with L_reg (need < 0.2), {off:.4} without"),
    );
    assert!(pass);
}

#[test]
fn c6_mask_recovery() {
    let run = default_run();
    let stats = mask_statistics(&run.model, &run.data).unwrap();
    let planted: HashSet<(usize, usize)> = run.data.planted_edges().iter().copied().collect();
    let (mut on, mut off) = (Vec::new(), Vec::new());
    for (i, j) in edge_pairs(run.data.r()) {
        let m = stats.mean_mask.iter().map(|g| g[[i, j]]).sum::<f64>() / stats.mean_mask.len() as f64;
        if planted.contains(&(i, j)) {
            on.push(m)
        } else {
            off.push(m)
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let gap = mean(&on) - mean(&off);
    let hubs: HashSet<usize> = planted.iter().flat_map(|&(i, j)| [i, j]).collect();
    let hits = stats.dc_rank().iter().take(10).filter(|r| hubs.contains(r)).count();
    let pass = gap >= 0.1 && hits >= 7;
    report(
        6,
        "mask recovery",
        pass,
        &format!(
            "planted − other mean mask {gap:+.4} (need ≥ 0.1); planted-edge ROIs in top-10 |ΔDC|: {hits} (need ≥ 7; {} of {} ROIs touch a planted edge)",
            hubs.len(),
            run.data.r()
        ),
    );
    assert!(pass);
}

#[test]
fn c7_diff_map_fidelity() {
    let run = default_run();
    let (reports, _) = diff_maps(&run.model, &run.data, ExtremeMode::Exclude).unwrap();
    let r = mean_diff(&reports, PATIENT).map_or(f64::NAN, |d| {
        // diff is own − counter-condition, so the patient→control change is −diff.
        let change: Vec<f64> = upper_of(d.view()).iter().map(|v| -v).collect();
        let truth = group_mean(&run.data, CONTROL) - group_mean(&run.data, PATIENT);
        pearson(&change, &upper_of(truth.view()))
    });
    let pass = r >= 0.5;
    report(7, "diff-map fidelity", pass, &format!("Pearson r = {r:.4} (need ≥ 0.5)"));
    assert!(pass);
}

// ---------------------------------------------------------------------------
// 8. Subtypes.

#[test]
fn c8_subtype_recovery() {
    let run = subtype_run();
    let (reports, _) = diff_maps(&run.model, &run.data, ExtremeMode::Exclude).unwrap();
    let patients: Vec<_> = reports.iter().filter(|r| r.label == PATIENT).collect();
    let record = |id: &str| run.data.records().iter().find(|r| r.subject_id == id).unwrap();
    let diffs: Vec<Vec<f64>> = patients.iter().map(|r| r.diff.upper()).collect();
    let scores: Vec<Option<f64>> = patients.iter().map(|r| record(&r.subject_id).clinical_score).collect();
    let truth: Vec<usize> = patients.iter().map(|r| record(&r.subject_id).subtype.unwrap()).collect();
    let res = subtype_cluster(&diffs, run.data.r(), 3, &scores).unwrap();
    let found: Vec<usize> = res.assignments.iter().map(|c| c - 1).collect();
    let ari = adjusted_rand_index(&found, &truth);
    let p = res.score_anova_pvalue.unwrap_or(f64::NAN);
    let pass = ari >= 0.9 && p < 0.05;
    report(
        8,
        "subtype recovery",
        pass,
        &format!("ARI {ari:.4} over {} patients (need ≥ 0.9); clinical-score ANOVA p = {p:.3e} (need < 0.05)", patients.len()),
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// 9. Structural invariants on randomized inputs.

fn small_model(rng: &mut ChaCha8Rng, ablations: Ablations) -> Model {
    let r = rng.random_range(4..9);
    let n_heads = [1, 2][rng.random_range(0..2)];
    // Without the intra-ROI encoder the embedding width is the ROI count.
    let d = if ablations.no_intra { r } else { n_heads * rng.random_range(2..5) };
    let n_heads = if d % n_heads == 0 { n_heads } else { 1 };
    let config = ModelConfig { d, n_heads, n_blocks: rng.random_range(1..3), hidden_enc: 8, ..ModelConfig::for_rois(r) };
    Model::new(config, ablations, rng.random()).unwrap()
}

fn random_fc(rng: &mut ChaCha8Rng, r: usize) -> FcMatrix {
    let upper: Vec<f64> = (0..r * (r - 1) / 2).map(|_| rng.random_range(-1.0..1.0)).collect();
    FcMatrix::from_upper(&upper, r).unwrap()
}

fn invariant_fc(rng: &mut ChaCha8Rng) -> bool {
    (0..TRIALS).all(|_| {
        let (t, r) = (rng.random_range(5..40), rng.random_range(2..12));
        let ts = random_matrix(rng, t, r, 1.0);
        let fc = pearson_fc(ts.view()).unwrap();
        let m = fc.values();
        (0..r).all(|i| m[[i, i]] == 0.0 && (0..r).all(|j| m[[i, j]] == m[[j, i]] && m[[i, j]].abs() <= 1.0))
    })
}

fn invariant_mask(rng: &mut ChaCha8Rng) -> bool {
    (0..TRIALS).all(|trial| {
        let model = small_model(rng, Ablations::default());
        let r = model.config.r;
        let x = random_fc(rng, r);
        let mask = if trial % 2 == 0 {
            model.mask_eval(&x).unwrap()
        } else {
            model.forward(&x, Mode::Train, rng).unwrap().mask
        };
        let masked = model.forward_eval(&x).unwrap().x_mask;
        (0..r).all(|i| {
            mask[[i, i]] == 0.0
                && (0..r).all(|j| {
                    mask[[i, j]] == mask[[j, i]]
                        && (i == j || (0.0..=1.0).contains(&mask[[i, j]]))
                        && masked.values()[[i, j]].abs() <= x.values()[[i, j]].abs()
                })
        })
    })
}

fn invariant_devectorize(rng: &mut ChaCha8Rng) -> bool {
    (0..TRIALS).all(|_| {
        let r = rng.random_range(2..30);
        let v: Vec<f64> = (0..r * (r - 1) / 2).map(|_| rng.random_range(-1.0..1.0)).collect();
        let m = devectorize_symmetric(&v, r).unwrap();
        let back = upper_of(m.view());
        let fc_back = vectorize_upper(&FcMatrix::from_upper(&v, r).unwrap());
        back == v && fc_back == v
    })
}

fn invariant_probabilities(rng: &mut ChaCha8Rng) -> bool {
    (0..TRIALS).all(|trial| {
        let ablations = Ablations { no_prototype: trial % 3 == 0, ..Ablations::default() };
        let model = small_model(rng, ablations);
        let x = random_fc(rng, model.config.r);
        let t = model.forward_eval(&x).unwrap();
        let u = model.encode_unmasked(&t.x_hat).unwrap();
        [t.probs, u.probs]
            .iter()
            .all(|p| (p.iter().sum::<f64>() - 1.0).abs() < 1e-12 && p.iter().all(|v| (0.0..=1.0).contains(v)))
    })
}

fn invariant_step2_frozen(rng: &mut ChaCha8Rng) -> bool {
    (0..TRIALS).all(|_| {
        let mut model = small_model(rng, Ablations::default());
        let r = model.config.r;
        let records: Vec<SubjectRecord> = (0..4)
            .map(|n| SubjectRecord {
                subject_id: format!("s{n}"),
                label: n % 2,
                fc: random_fc(rng, r),
                site: None,
                clinical_score: None,
                subtype: None,
            })
            .collect();
        let batch: Vec<&SubjectRecord> = records.iter().collect();
        let before = model.params.clone();
        let mut opt = AdamW::new(&model.params, 1e-2, 1e-4);
        step2_update(&mut model, &mut opt, &batch, &TrainConfig::default(), rng).unwrap();
        let mut decoder_moved = false;
        for slot in 0..before.len() {
            let (a, b) = (before.get(slot), model.params.get(slot));
            let same = a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits());
            if before.is_decoder(slot) {
                decoder_moved |= !same;
            } else if !same {
                return false;
            }
        }
        decoder_moved
    })
}

fn invariant_exclusion_count(rng: &mut ChaCha8Rng) -> bool {
    (0..TRIALS).all(|trial| {
        let r = if trial == 0 { 200 } else { rng.random_range(2..120) };
        let p = r * (r - 1) / 2;
        let expected = (0.01 * p as f64).round() as usize;
        let diff: Vec<f64> = (0..p).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (excluded, idx) = apply_extreme_rule(&diff, r, ExtremeMode::Exclude);
        let (kept, idx_keep) = apply_extreme_rule(&diff, r, ExtremeMode::Keep);
        let set: HashSet<usize> = idx.iter().copied().collect();
        idx.len() == expected
            && idx == idx_keep
            && (r != 200 || expected == 199)
            && (0..p).all(|k| {
                if set.contains(&k) {
                    excluded[k] == 0.0 && kept[k] == diff[k]
                } else {
                    excluded[k] == diff[k] && kept[k] == 0.0
                }
            })
    })
}

fn invariant_checkpoint(rng: &mut ChaCha8Rng) -> bool {
    let dir = tempfile::tempdir().unwrap();
    (0..TRIALS).all(|trial| {
        let ablations = Ablations { no_prototype: trial % 4 == 1, no_intra: trial % 5 == 2, ..Ablations::default() };
        let model = small_model(rng, ablations);
        let ck = Checkpoint { model, seed: rng.random(), class_names: vec!["control".into(), "patient".into()], extra: Default::default() };
        let path = dir.path().join(format!("ck{trial}"));
        save_checkpoint(&ck, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        let bitwise = ck
            .model
            .params
            .tensors()
            .iter()
            .zip(back.model.params.tensors())
            .all(|(a, b)| a.dim() == b.dim() && a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
        bitwise && back.model.config == ck.model.config && back.model.ablations == ck.model.ablations && back.seed == ck.seed
    })
}

#[test]
fn c9_structural_invariants() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let checks: [(&str, fn(&mut ChaCha8Rng) -> bool); 7] = [
        ("FC symmetry / zero diagonal", invariant_fc),
        ("mask range and symmetry", invariant_mask),
        ("devectorize round-trip", invariant_devectorize),
        ("probability normalization", invariant_probabilities),
        ("Step-2 frozen parameters", invariant_step2_frozen),
        ("exclusion count", invariant_exclusion_count),
        ("checkpoint round-trip", invariant_checkpoint),
    ];
    let results: Vec<(&str, bool)> = checks.iter().map(|(name, f)| (*name, f(&mut rng))).collect();
    let pass = results.iter().all(|(_, ok)| *ok);
    let detail: Vec<String> =
        results.iter().map(|(name, ok)| format!("{name} {}", if *ok { "ok" } else { "BROKEN" })).collect();
    report(9, "structural invariants", pass, &format!("{TRIALS} trials each: {}", detail.join("; ")));
    assert!(pass);
}
