//! Acceptance suite: one test per criterion, each printing a single
//! `criterion N [...]: PASS|FAIL` line (written past the harness capture so it
//! always shows) before asserting. Diagnostic JSON goes to
//! `$CARGO_TARGET_TMPDIR/acceptance/`.

mod common;

use common::*;
use crate_core::analysis::*;
use crate_core::io::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, ApSummary, LayerRate, MetricsReport};
use crate_core::objective::{
    coding_rate_subspaces, exact_compression_step, grad_coding_rate_subspaces, layer_rates, mean_reports, mssa_gradient_diagnostic, CodingRateParams,
};
use crate_core::model::{ista_forward, mssa_forward};
use crate_core::train::*;
use crate_core::{Arch, CrateModel, ModelConfig};
use ndarray::Array2;
use rand::Rng;
use std::io::Write;
use std::path::PathBuf;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

// Criterion 1
const GRAD_REL_TOL: f64 = 1e-4;
const GRAD_RUNTIME: Duration = Duration::from_secs(60);
// Criterion 2
const RATE_GRAD_REL_TOL: f64 = 1e-5;
const RATE_GRAD_CONFIGS: u64 = 20;
const COMPRESSION_KAPPA: f64 = 1e-3;
const COMPRESSION_TRIALS: u64 = 100;
// Criterion 3
const ISTA_TOL: f64 = 1e-12;
const ISTA_INSTANCES: u64 = 100;
// Criterion 4
const MSSA_TOL: f64 = 1e-10;
const ROW_SUM_TOL: f64 = 1e-6;
// Criterion 5
const DIAG_TRIALS: u64 = 100;
const DIAG_MIN_POSITIVE: usize = 90;
// Criterion 6
const NCUT_GRAPHS: u64 = 50;
// Criterion 7
const IOU_FIXTURE: f64 = 1.0 / 3.0;
const IOU_TOL: f64 = 1e-9;
const SEG_P: f64 = 0.6;
// Criterion 8
const DESK_TRAIN: usize = 2000;
const DESK_TEST: usize = 500;
const DESK_MIN_ACC: f64 = 0.85;
const DESK_MAX_TRAIN_TIME: Duration = Duration::from_secs(15 * 60);
const EMERGENCE_MARGIN: f64 = 0.10;
/// Learning rate of the desk runs (the 1e-4 default does not reach the
/// accuracy bar within 20 epochs on this data).
const DESK_LR: f64 = 5e-4;

fn report(id: u32, name: &str, pass: bool, detail: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "criterion {id} [{name}]: {} : {detail}", if pass { "PASS" } else { "FAIL" });
}

fn note(line: &str) {
    let _ = writeln!(std::io::stdout().lock(), "    {line}");
}

fn artifact_dir() -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn tiny_examples(cfg: &ModelConfig, model: &CrateModel, n: usize) -> Vec<Example> {
    let dcfg = SynthDataConfig { size: cfg.height, patch: cfg.patch_h, seed: 3, ..Default::default() };
    examples_from_samples(&generate_dataset(&dcfg, n).unwrap(), model).unwrap()
}

#[test]
fn criterion_01_gradient_correctness() {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut failures = Vec::new();
    for arch in Arch::ALL {
        let cfg = ModelConfig::tiny(arch);
        let model = CrateModel::init(&cfg, 11).unwrap();
        let batch = tiny_examples(&cfg, &model, 3);
        for c in gradient_check(&model, &batch, 1e-5).unwrap() {
            worst = worst.max(c.rel_error);
            if !(c.rel_error < GRAD_REL_TOL) {
                failures.push(format!("{arch}:{}={:.2e}", c.name, c.rel_error));
            }
        }
    }
    let elapsed = start.elapsed();
    let pass = failures.is_empty() && elapsed < GRAD_RUNTIME;
    let failed = if failures.is_empty() { String::new() } else { format!("; failing: {}", failures.join(", ")) };
    report(1, "gradient correctness", pass, &format!("worst rel error {worst:.2e} (< {GRAD_REL_TOL:.0e}) over 4 archs in {elapsed:.2?}{failed}"));
    assert!(pass);
}

#[test]
fn criterion_02_objective_correctness() {
    let mut r = rng(202);
    let mut worst = 0.0f64;
    for _ in 0..RATE_GRAD_CONFIGS {
        let d = r.random_range(3..9);
        let p = r.random_range(1..=d.min(4));
        let k = r.random_range(1..4);
        let n = r.random_range(2..7);
        let eps = r.random_range(0.5..2.0);
        let z = gaussian(d, n, &mut r);
        let us: Vec<_> = (0..k).map(|_| orthonormal(d, p, &mut r)).collect();
        let g = grad_coding_rate_subspaces(&z, &us, eps).unwrap();
        let h = 1e-5;
        let mut fd = Array2::zeros(z.dim());
        for ((i, j), v) in fd.indexed_iter_mut() {
            let mut zp = z.clone();
            zp[[i, j]] += h;
            let mut zm = z.clone();
            zm[[i, j]] -= h;
            *v = (coding_rate_subspaces(&zp, &us, eps).unwrap() - coding_rate_subspaces(&zm, &us, eps).unwrap()) / (2.0 * h);
        }
        let rel = (&g - &fd).mapv(|x| x * x).sum().sqrt() / fd.mapv(|x| x * x).sum().sqrt();
        worst = worst.max(rel);
    }
    let mut decreased = 0;
    for _ in 0..COMPRESSION_TRIALS {
        let z = gaussian(16, 9, &mut r);
        let us: Vec<_> = (0..4).map(|_| orthonormal(16, 4, &mut r)).collect();
        let before = coding_rate_subspaces(&z, &us, 1.0).unwrap();
        let after = coding_rate_subspaces(&exact_compression_step(&z, &us, 1.0, COMPRESSION_KAPPA).unwrap(), &us, 1.0).unwrap();
        decreased += (after < before) as u64;
    }
    let pass = worst < RATE_GRAD_REL_TOL && decreased == COMPRESSION_TRIALS;
    report(
        2,
        "objective correctness",
        pass,
        &format!("worst FD rel error {worst:.2e} (< {RATE_GRAD_REL_TOL:.0e}) on {RATE_GRAD_CONFIGS} configs; Rc decreased in {decreased}/{COMPRESSION_TRIALS}"),
    );
    assert!(pass);
}

#[test]
fn criterion_03_ista_identity() {
    let mut r = rng(303);
    let mut worst = 0.0f64;
    for _ in 0..ISTA_INSTANCES {
        let d = r.random_range(2..12);
        let n = r.random_range(1..10);
        let z = gaussian(d, n, &mut r);
        let dict = gaussian(d, d, &mut r) * r.random_range(0.05..1.0);
        let eta = r.random_range(0.01..0.5);
        let lambda = r.random_range(0.0..0.5);
        worst = worst.max(max_abs_diff(&ista_forward(&z, &dict, eta, lambda), &ista_loop(&z, &dict, eta, lambda)));
    }
    let pass = worst <= ISTA_TOL;
    report(3, "ISTA identity", pass, &format!("max |ista - prox oracle| {worst:.2e} (<= {ISTA_TOL:.0e}) on {ISTA_INSTANCES} instances"));
    assert!(pass);
}

#[test]
fn criterion_04_mssa_fidelity() {
    let (mut worst, mut worst_row) = (0.0f64, 0.0f64);
    for seed in 0..20 {
        let mut cfg = ModelConfig::desk(Arch::Crate, 3);
        if seed % 2 == 1 {
            cfg = ModelConfig::tiny(Arch::Crate);
        }
        let m = CrateModel::init(&cfg, seed).unwrap();
        let z = gaussian(cfg.model_dim, cfg.num_tokens(), &mut rng(seed + 400));
        let (y, attn) = mssa_forward(&z, &m.layers[0], &cfg).unwrap();
        let (y_ref, _) = attention_loop(&z, &m.layers[0], &cfg);
        worst = worst.max(max_abs_diff(&y, &y_ref));
        for a in &attn {
            for row in a.rows() {
                worst_row = worst_row.max((row.sum() - 1.0).abs());
            }
        }
    }
    let pass = worst <= MSSA_TOL && worst_row <= ROW_SUM_TOL;
    report(4, "MSSA fidelity", pass, &format!("max |mssa - loop oracle| {worst:.2e} (<= {MSSA_TOL:.0e}); max |row sum - 1| {worst_row:.2e}"));
    assert!(pass);
}

#[test]
fn criterion_05_mssa_gradient_diagnostic() {
    let (d, p, k, n) = (32, 8, 4, 16);
    let mut r = rng(505);
    let mut cosines = Vec::new();
    for _ in 0..DIAG_TRIALS {
        let z = gaussian(d, n + 1, &mut r);
        let us: Vec<_> = (0..k).map(|_| orthonormal(d, p, &mut r)).collect();
        let diag = mssa_gradient_diagnostic(&z, &us, 1.0).unwrap();
        assert!(!diag.non_orthonormal);
        cosines.push(diag.cosine);
    }
    let positive = cosines.iter().filter(|&&c| c > 0.0).count();
    let mean = cosines.iter().sum::<f64>() / cosines.len() as f64;
    let min = cosines.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut metrics = MetricsReport::new("acceptance-criterion-5", serde_json::json!({"d": d, "p": p, "K": k, "N": n, "epsilon": 1.0, "trials": DIAG_TRIALS}));
    metrics.analysis.extra.insert("cosines".into(), serde_json::json!(cosines));
    metrics.analysis.extra.insert("positive".into(), serde_json::json!(positive));
    metrics.analysis.extra.insert("mean_cosine".into(), serde_json::json!(mean));
    metrics.save(artifact_dir().join("criterion_5_metrics.json")).unwrap();
    let pass = positive >= DIAG_MIN_POSITIVE;
    report(5, "MSSA-gradient diagnostic", pass, &format!("cosine > 0 in {positive}/{DIAG_TRIALS} (need {DIAG_MIN_POSITIVE}); mean {mean:.3}, min {min:.3}"));
    assert!(pass);
}

/// Three dense blocks of 2 to 5 tokens at random positions of a 6×6 grid
/// inside a loosely knit background. Block-background links are weak and
/// block-block links weaker still, so each block alone is a cheaper cut
/// than all blocks against the background.
fn planted_affinity(seed: u64) -> (Array2<f64>, Vec<Vec<usize>>) {
    let mut r = rng(seed);
    let n = 36;
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        perm.swap(i, r.random_range(0..=i));
    }
    let mut group = vec![3usize; n];
    let mut blocks = Vec::new();
    let mut at = 0;
    for k in 0..3 {
        let size = r.random_range(2..=5);
        let mut b = perm[at..at + size].to_vec();
        b.sort();
        for &t in &b {
            group[t] = k;
        }
        blocks.push(b);
        at += size;
    }
    let mut m = Array2::zeros((n, n));
    for i in 0..n {
        m[[i, i]] = 1.0;
        for j in i + 1..n {
            let w = match (group[i], group[j]) {
                (a, b) if a == b && a < 3 => r.random_range(0.8..1.0),
                (3, 3) => r.random_range(0.05..0.15),
                (3, _) | (_, 3) => r.random_range(0.01..0.03),
                _ => r.random_range(0.0..0.01),
            };
            m[[i, j]] = w;
            m[[j, i]] = w;
        }
    }
    blocks.sort();
    (m, blocks)
}

#[test]
fn criterion_06_ncut_oracle() {
    let mut spectral_ok = 0;
    for seed in 0..NCUT_GRAPHS {
        let (m, _) = two_block_graph(seed);
        let (best, side) = brute_force_ncut(&m);
        let bp = ncut_bipartition(&m).unwrap();
        let complement: Vec<bool> = side.iter().map(|b| !b).collect();
        if (bp.ncut - best).abs() < 1e-9 && (bp.mask == side || bp.mask == complement) {
            spectral_ok += 1;
        }
    }
    let cfg = MaskCutConfig { n: 3, tau: 0.15 };
    let mut planted_ok = 0;
    let planted_trials = 20;
    for seed in 0..planted_trials {
        let (m, blocks) = planted_affinity(600 + seed);
        let res = maskcut(&m, (6, 6), &cfg).unwrap();
        let mut found: Vec<Vec<usize>> = res.masks.iter().map(|m| (0..36).filter(|&i| m.bits[i]).collect()).collect();
        found.sort();
        if found != blocks { note(&format!("seed {seed}: want {blocks:?} got {found:?}")); }
        planted_ok += (found == blocks) as u64;
    }
    let pass = spectral_ok == NCUT_GRAPHS && planted_ok == planted_trials;
    report(
        6,
        "NCut oracle",
        pass,
        &format!("spectral = brute-force min on {spectral_ok}/{NCUT_GRAPHS} graphs; MaskCut n=3 recovered planted blocks in {planted_ok}/{planted_trials} layouts"),
    );
    assert!(pass);
}

#[test]
fn criterion_07_miou_arithmetic() {
    let a = [true, true, true, true, false, false, false, false];
    let b = [false, false, true, true, true, true, false, false];
    let v = iou(&a, &b).unwrap();
    let mut counts_ok = true;
    for n in [1, 4, 10, 16, 49, 196, 784] {
        let map = AttentionMap { values: (0..n).map(|i| ((i * 7919) % 13) as f64).collect(), head: 0, layer: 1 };
        let want = (SEG_P * n as f64 - 1e-9).ceil() as usize;
        counts_ok &= attention_to_mask(&map, SEG_P).unwrap().count() == want;
    }
    // And on real attention of the desk configuration (N = 16 → 10).
    let cfg = ModelConfig::desk(Arch::Crate, 3);
    let model = CrateModel::init(&cfg, 0).unwrap();
    let sample = generate_sample(&SynthDataConfig::default(), 0);
    for m in attention_masks(&model, &sample, cfg.num_layers - 1, SEG_P).unwrap() {
        counts_ok &= m.count() == 10;
    }
    let pass = (v - IOU_FIXTURE).abs() <= IOU_TOL && counts_ok;
    report(7, "mIoU arithmetic", pass, &format!("fixture IoU {v:.10} (1/3 ± {IOU_TOL:.0e}); ceil(0.6N) positives: {counts_ok}"));
    assert!(pass);
}

struct DeskModel {
    trained: CrateModel,
    untrained: CrateModel,
    test_acc: f64,
    train_time: Duration,
    history: Vec<EpochStats>,
}

struct DeskRun {
    test: Vec<Sample>,
    crate_run: DeskModel,
    vit_run: DeskModel,
}

fn train_desk(arch: Arch, train: &[Sample], test: &[Sample]) -> DeskModel {
    let cfg = ModelConfig::desk(arch, 3);
    let untrained = CrateModel::init(&cfg, 0).unwrap();
    let tr = examples_from_samples(train, &untrained).unwrap();
    let te = examples_from_samples(test, &untrained).unwrap();
    let mut state = TrainState::new(untrained.clone(), OptimizerConfig { lr: DESK_LR, ..Default::default() }).unwrap();
    let start = Instant::now();
    state.train(&tr, |_, _| {}).unwrap();
    let train_time = start.elapsed();
    let test_acc = evaluate_accuracy(&state.model, &te).unwrap();
    DeskModel { trained: state.model, untrained, test_acc, train_time, history: state.history }
}

fn desk_run() -> &'static DeskRun {
    static RUN: OnceLock<DeskRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let dcfg = SynthDataConfig::default();
        let all = generate_dataset(&dcfg, DESK_TRAIN + DESK_TEST).unwrap();
        let (train, test) = all.split_at(DESK_TRAIN);
        DeskRun { crate_run: train_desk(Arch::Crate, train, test), vit_run: train_desk(Arch::Vit, train, test), test: test.to_vec() }
    })
}

fn per_layer_miou(model: &CrateModel, test: &[Sample]) -> Vec<f64> {
    (1..=model.config.num_layers).map(|l| segmentation_miou(model, test, l, SEG_P).unwrap().miou).collect()
}

fn fmt_layers(v: &[f64]) -> String {
    v.iter().enumerate().map(|(i, x)| format!("L{}={x:.3}", i + 1)).collect::<Vec<_>>().join(" ")
}

#[test]
fn criterion_08_desk_emergence() {
    let run = desk_run();
    let c = &run.crate_run;
    let last = c.trained.config.num_layers;
    let trained = per_layer_miou(&c.trained, &run.test);
    let untrained = per_layer_miou(&c.untrained, &run.test);
    let vit = per_layer_miou(&run.vit_run.trained, &run.test);
    let random = random_mask_miou(&run.test, c.trained.config.num_heads, SEG_P, 0).miou;
    let (t, u, v) = (trained[last - 1], untrained[last - 1], vit[last - 1]);

    let acc_ok = c.test_acc >= DESK_MIN_ACC && c.train_time < DESK_MAX_TRAIN_TIME;
    let over_untrained = t - u >= EMERGENCE_MARGIN;
    let over_random = t - random >= EMERGENCE_MARGIN;
    let over_vit = t > v;

    let mut metrics = MetricsReport::new("acceptance-criterion-8", serde_json::json!({"lr": DESK_LR, "data": SynthDataConfig::default()}));
    metrics.epochs = c.history.clone();
    metrics.analysis.miou = Some(t);
    for (key, value) in [
        ("test_acc", serde_json::json!(c.test_acc)),
        ("vit_test_acc", serde_json::json!(run.vit_run.test_acc)),
        ("miou_trained_by_layer", serde_json::json!(trained)),
        ("miou_untrained_by_layer", serde_json::json!(untrained)),
        ("miou_vit_by_layer", serde_json::json!(vit)),
        ("miou_random", serde_json::json!(random)),
    ] {
        metrics.analysis.extra.insert(key.into(), value);
    }
    metrics.save(artifact_dir().join("criterion_8_metrics.json")).unwrap();

    let pass = acc_ok && over_untrained && over_random && over_vit;
    report(
        8,
        "desk-scale emergence",
        pass,
        &format!(
            "test acc {:.3} (>= {DESK_MIN_ACC}) in {:.1?}; last-layer best-head mIoU {t:.3} vs untrained {u:.3} ({}), random {random:.3} ({}), vit {v:.3} ({})",
            c.test_acc,
            c.train_time,
            if over_untrained { "ok" } else { "margin < 0.10" },
            if over_random { "ok" } else { "margin < 0.10" },
            if over_vit { "ok" } else { "not lower" },
        ),
    );
    note(&format!("crate trained   {}", fmt_layers(&trained)));
    note(&format!("crate untrained {}", fmt_layers(&untrained)));
    note(&format!("vit trained     {} (test acc {:.3})", fmt_layers(&vit), run.vit_run.test_acc));
    assert!(pass);
}

#[test]
fn criterion_09_layer_depth_trend() {
    let run = desk_run();
    let model = &run.crate_run.trained;
    let cfg = MaskCutConfig::default();
    let aps: Vec<ApReport> = (1..=model.config.num_layers).map(|l| maskcut_ap(model, &run.test, l, &cfg, true).unwrap()).collect();
    let ap: Vec<f64> = aps.iter().map(|a| a.ap).collect();
    let best_deeper = ap[1..].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let argmax = ap.iter().enumerate().fold(0, |b, (i, &v)| if v > ap[b] { i } else { b }) + 1;
    let mut metrics = MetricsReport::new("acceptance-criterion-9", serde_json::json!({"n": cfg.n, "tau": cfg.tau}));
    metrics.analysis.ap = aps.last().map(ApSummary::from);
    metrics.analysis.extra.insert("ap_by_layer".into(), serde_json::json!(aps));
    metrics.save(artifact_dir().join("criterion_9_metrics.json")).unwrap();
    let pass = best_deeper > ap[0];
    report(
        9,
        "layer-depth trend",
        pass,
        &format!("MaskCut AP by layer {}; maximal at layer {argmax} (must not be layer 1; L/2 = {})", fmt_layers(&ap), model.config.num_layers / 2),
    );
    note(&format!("AP50 by layer {}", fmt_layers(&aps.iter().map(|a| a.ap50).collect::<Vec<_>>())));
    assert!(pass);
}

/// A short seeded run producing the full metrics file.
fn metrics_run(seed: u64) -> (CrateModel, String) {
    let dcfg = SynthDataConfig { seed, ..Default::default() };
    let samples = generate_dataset(&dcfg, 96).unwrap();
    let (train, test) = samples.split_at(64);
    let cfg = ModelConfig::desk(Arch::Crate, 3);
    let model = CrateModel::init(&cfg, seed).unwrap();
    let tr = examples_from_samples(train, &model).unwrap();
    let opt = OptimizerConfig { lr: DESK_LR, epochs: 2, batch_size: 16, seed, ..Default::default() };
    let mut state = TrainState::new(model, opt.clone()).unwrap();
    state.train(&tr, |_, _| {}).unwrap();
    let model = state.model;
    let layer = cfg.num_layers;
    let seg = segmentation_miou(&model, test, layer, SEG_P).unwrap();
    let ap = maskcut_ap(&model, test, layer, &MaskCutConfig::default(), true).unwrap();
    let mut reports = vec![Vec::new(); cfg.num_layers];
    for s in test {
        let trace = model.forward_image(&normalize_image(&s.image), true).unwrap().trace.unwrap();
        for (l, r) in layer_rates(&model, &trace, CodingRateParams::default()).unwrap().into_iter().enumerate() {
            reports[l].push(r);
        }
    }
    let mut m = MetricsReport::new(format!("seed-{seed}"), serde_json::json!({"optimizer": opt, "model": cfg, "data": dcfg}));
    m.epochs = state.history;
    m.analysis.miou = Some(seg.miou);
    m.analysis.per_class = seg.per_class;
    m.analysis.ap = Some(ApSummary::from(&ap));
    m.analysis.rates = reports.iter().enumerate().map(|(l, r)| LayerRate::new(l + 1, &mean_reports(r).unwrap())).collect();
    (model, m.to_json().unwrap())
}

#[test]
fn criterion_10_round_trip_and_determinism() {
    let (model, first) = metrics_run(7);
    let (_, second) = metrics_run(7);
    let (_, other) = metrics_run(8);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.cr8w");
    save_checkpoint(&model, &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    let bit_exact = model.params().iter().zip(back.params().iter()).all(|(a, b)| a.values.iter().zip(b.values.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
    let bytes = encode_checkpoint(&model).unwrap();
    let reencoded = encode_checkpoint(&decode_checkpoint(&bytes).unwrap()).unwrap() == bytes;
    std::fs::write(artifact_dir().join("criterion_10_metrics.json"), &first).unwrap();
    let identical = first == second;
    let pass = bit_exact && reencoded && identical && first != other;
    report(
        10,
        "round-trip and determinism",
        pass,
        &format!("checkpoint bit-exact {bit_exact}, re-encode identical {reencoded}; same-seed metrics identical {identical} ({} bytes); different seed differs {}", first.len(), first != other),
    );
    assert!(pass);
}
