//! Subcommand bodies. Outputs go under `--out`: `config/<command>.json`
//! (the resolved configuration), `checkpoints/`, `figures/<command>/` and
//! `reports/`.

use crate_core::analysis::{
    attention_masks, attention_to_mask, average_precision, class_token_attention, miou, pca_patch_visualization, random_mask_miou,
    sample_maskcut, token_features, top_count, MaskCutConfig, ScoredMask, PCA_THRESHOLD,
};
use crate_core::io::{
    colormap, export_dataset, import_dataset, load_checkpoint, overlay_mask, render_heatmap, save_checkpoint, write_image, MetricsReport,
    MASK_COLOR,
};
use crate_core::objective::{layer_rates, mean_reports, CodingRateParams};
use crate_core::train::{
    evaluate_accuracy, examples_from_samples, generate_dataset, gradient_check, normalize_image, OptimizerConfig, Sample, SynthDataConfig,
    TrainState, GRAD_CHECK_TOL, SHAPE_FAMILIES,
};
use crate_core::{CrateModel, ForwardTrace, ModelConfig};
use ndarray::Array3;
use serde::Serialize;
use serde_json::json;
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::args::*;
use crate::error::CliError;

type Result<T> = std::result::Result<T, CliError>;

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::GenerateData(a) => generate_data(&a),
        Command::Train(a) => train(&a),
        Command::Attn(a) => attn(&Analysis::load(&a, "attn")?),
        Command::Pca(a) => pca(&Analysis::load(&a, "pca")?),
        Command::SegMiou(a) => seg_miou(&Analysis::load(&a, "seg-miou")?),
        Command::Maskcut(a) => maskcut(&Analysis::load(&a, "maskcut")?),
        Command::Rates(a) => rates(&Analysis::load(&a, "rates")?),
        Command::GradCheck(a) => grad_check(&a),
    }
}

fn require<'a>(value: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    value.as_deref().ok_or_else(|| CliError::config(format!("missing required --{flag}")))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn echo_config(out: &Path, command: &str, cfg: &impl Serialize) -> Result<()> {
    write_json(&out.join("config").join(format!("{command}.json")), cfg)
}

fn figure_dir(out: &Path, command: &str) -> Result<PathBuf> {
    let dir = out.join("figures").join(command);
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn bit_string(bits: &[bool]) -> String {
    bits.iter().map(|&b| if b { '1' } else { '0' }).collect()
}

fn class_name(label: usize) -> String {
    SHAPE_FAMILIES.get(label).map(|s| s.to_string()).unwrap_or_else(|| format!("class{label}"))
}

/// Nearest-neighbor enlargement by integer factors.
fn upsample(image: &Array3<f64>, fy: usize, fx: usize) -> Array3<f64> {
    let (c, h, w) = image.dim();
    Array3::from_shape_fn((c, h * fy, w * fx), |(ch, y, x)| image[[ch, y / fy, x / fx]])
}

fn generate_data(args: &GenerateArgs) -> Result<()> {
    let cfg: GenerateConfig = resolve(args.config.as_deref(), args)?;
    let out = require(&cfg.out, "out")?;
    if cfg.count == 0 {
        return Err(CliError::config("--count must be positive"));
    }
    if !(0.0..=1.0).contains(&cfg.train_fraction) {
        return Err(CliError::config("--train-fraction must lie in [0, 1]"));
    }
    let data = SynthDataConfig { num_classes: cfg.classes, size: cfg.size, channels: cfg.channels, patch: cfg.patch, seed: cfg.seed, ..Default::default() };
    let samples = generate_dataset(&data, cfg.count)?;
    let num_train = (cfg.train_fraction * cfg.count as f64).round() as usize;
    export_dataset(out, &data, &samples, num_train)?;
    echo_config(out, "generate-data", &cfg)?;
    println!("wrote {} samples ({num_train} train, {} test) to {}", cfg.count, cfg.count - num_train, out.display());
    Ok(())
}

fn train(args: &TrainArgs) -> Result<()> {
    let cfg: TrainConfig = resolve(args.config.as_deref(), args)?;
    let data_dir = require(&cfg.data, "data")?;
    let out = require(&cfg.out, "out")?;
    let ds = import_dataset(data_dir)?;
    if cfg.depth == 0 {
        return Err(CliError::config("--depth must be at least 1"));
    }
    if cfg.heads == 0 || cfg.dim % cfg.heads != 0 {
        return Err(CliError::config(format!("--dim {} is not divisible by --heads {}", cfg.dim, cfg.heads)));
    }
    let patch = cfg.patch.unwrap_or(ds.config.patch);
    let mut mc = ModelConfig::desk(cfg.arch, ds.config.num_classes);
    mc.num_layers = cfg.depth;
    mc.model_dim = cfg.dim;
    mc.num_heads = cfg.heads;
    mc.head_dim = cfg.dim / cfg.heads;
    mc.mlp_hidden = 4 * cfg.dim;
    mc.channels = ds.config.channels;
    mc.height = ds.config.size;
    mc.width = ds.config.size;
    mc.patch_h = patch;
    mc.patch_w = patch;
    mc.validate()?;

    let model = CrateModel::init(&mc, cfg.seed)?;
    let ckpt = out.join("checkpoints");
    fs::create_dir_all(&ckpt)?;
    save_checkpoint(&model, ckpt.join("init.cr8w"))?;
    let train_set = examples_from_samples(&ds.train, &model)?;
    let test_set = examples_from_samples(&ds.test, &model)?;
    let opt = OptimizerConfig {
        kind: cfg.opt,
        lr: cfg.lr,
        weight_decay: cfg.weight_decay,
        batch_size: cfg.batch_size,
        epochs: cfg.epochs,
        seed: cfg.seed,
        ..Default::default()
    };
    println!("training {} ({} parameters) on {} images", cfg.arch, model.num_params(), train_set.len());
    let mut state = TrainState::new(model, opt.clone())?;
    let epochs = cfg.epochs;
    state.train(&train_set, |e, s| println!("epoch {e:>3}/{epochs}  loss {:.4}  acc {:.4}", s.loss, s.acc))?;
    save_checkpoint(&state.model, ckpt.join("final.cr8w"))?;

    let mut metrics = MetricsReport::new(format!("train-{}-seed{}", cfg.arch, cfg.seed), json!({ "model": mc, "optimizer": opt, "data": ds.config }));
    metrics.epochs = state.history.clone();
    metrics.analysis.extra.insert("train_images".into(), json!(train_set.len()));
    metrics.analysis.extra.insert("test_images".into(), json!(test_set.len()));
    if !test_set.is_empty() {
        let acc = evaluate_accuracy(&state.model, &test_set)?;
        metrics.analysis.extra.insert("test_acc".into(), json!(acc));
        println!("test accuracy {acc:.4} on {} images", test_set.len());
    }
    fs::create_dir_all(out.join("reports"))?;
    metrics.save(out.join("reports").join("metrics.json"))?;
    echo_config(out, "train", &cfg)?;
    Ok(())
}

/// Loaded inputs shared by the analysis subcommands.
struct Analysis {
    cfg: AnalysisConfig,
    out: PathBuf,
    command: &'static str,
    model: CrateModel,
    /// (dataset index, sample)
    samples: Vec<(usize, Sample)>,
}

impl Analysis {
    fn load(args: &AnalysisArgs, command: &'static str) -> Result<Self> {
        let cfg: AnalysisConfig = resolve(args.config.as_deref(), args)?;
        let out = require(&cfg.out, "out")?.to_path_buf();
        let model = load_checkpoint(require(&cfg.checkpoint, "checkpoint")?)?;
        let ds = import_dataset(require(&cfg.data, "data")?)?;
        let offset = ds.train.len();
        let mut samples: Vec<(usize, Sample)> = match cfg.split {
            SplitChoice::Train => ds.train.into_iter().enumerate().collect(),
            SplitChoice::Test => ds.test.into_iter().enumerate().map(|(i, s)| (offset + i, s)).collect(),
            SplitChoice::All => ds.train.into_iter().chain(ds.test).enumerate().collect(),
        };
        if cfg.limit > 0 {
            samples.truncate(cfg.limit);
        }
        if samples.is_empty() {
            return Err(CliError::config(format!("the {:?} split of the dataset is empty", cfg.split).to_lowercase()));
        }
        let mc = &model.config;
        let want = (mc.channels, mc.height, mc.width);
        if samples[0].1.image.dim() != want {
            return Err(CliError::config(format!("dataset images are {:?}, the model expects {want:?}", samples[0].1.image.dim())));
        }
        if !(cfg.p > 0.0 && cfg.p <= 1.0) {
            return Err(CliError::config(format!("--p {} must lie in (0, 1]", cfg.p)));
        }
        fs::create_dir_all(&out)?;
        echo_config(&out, command, &cfg)?;
        Ok(Analysis { cfg, out, command, model, samples })
    }

    fn layer(&self, default: usize) -> Result<usize> {
        let num = self.model.config.num_layers;
        let l = self.cfg.layer.unwrap_or(default);
        if l == 0 || l > num {
            return Err(CliError::config(format!("--layer {l} out of range 1..={num}")));
        }
        Ok(l)
    }

    /// 0-based heads selected by `--head` (1-based), or all of them.
    fn heads(&self) -> Result<Vec<usize>> {
        let k = self.model.config.num_heads;
        match self.cfg.head {
            None => Ok((0..k).collect()),
            Some(h) if (1..=k).contains(&h) => Ok(vec![h - 1]),
            Some(h) => Err(CliError::config(format!("--head {h} out of range 1..={k}"))),
        }
    }

    fn require_patch_gt(&self) -> Result<()> {
        let n = self.model.config.num_patches();
        if self.samples[0].1.patch_gt.len() != n {
            return Err(CliError::config(format!(
                "dataset patch masks have {} entries but the model has {n} patches",
                self.samples[0].1.patch_gt.len()
            )));
        }
        Ok(())
    }

    fn trace(&self, sample: &Sample) -> Result<ForwardTrace> {
        Ok(self.model.forward_image(&normalize_image(&sample.image), true)?.trace.expect("trace requested"))
    }

    fn report(&self, value: &impl Serialize) -> Result<()> {
        let path = self.out.join("reports").join(format!("{}.json", self.command));
        write_json(&path, value)?;
        println!("wrote {}", path.display());
        Ok(())
    }

    fn grid(&self) -> (usize, usize) {
        self.model.config.grid()
    }
}

fn attn(a: &Analysis) -> Result<()> {
    let layer = a.layer(a.model.config.num_layers.saturating_sub(1).max(1))?;
    let heads = a.heads()?;
    let figs = figure_dir(&a.out, a.command)?;
    let cell = a.model.config.patch_h;
    let mut images = Vec::new();
    for (rank, (idx, s)) in a.samples.iter().enumerate() {
        let trace = a.trace(s)?;
        let mut per_head = Vec::new();
        if rank < a.cfg.figures {
            write_image(&s.image, figs.join(format!("{idx:05}_image.png")))?;
        }
        for &h in &heads {
            let map = class_token_attention(&a.model, &trace, layer, h)?;
            let mask = attention_to_mask(&map, a.cfg.p)?;
            if rank < a.cfg.figures {
                let stem = format!("{idx:05}_l{layer}_h{}", h + 1);
                write_image(&render_heatmap(&map.values, a.grid(), cell)?, figs.join(format!("{stem}.png")))?;
                write_image(&overlay_mask(&s.image, &mask.bits, a.grid(), MASK_COLOR, 0.5)?, figs.join(format!("{stem}_mask.png")))?;
            }
            per_head.push(json!({ "head": h + 1, "values": map.values, "positives": mask.count(), "mask": bit_string(&mask.bits) }));
        }
        images.push(json!({ "index": idx, "label": s.label, "heads": per_head }));
    }
    a.report(&json!({ "layer": layer, "p": a.cfg.p, "grid": a.grid(), "images": images }))
}

fn pca(a: &Analysis) -> Result<()> {
    let layer = a.layer(a.model.config.num_layers)?;
    let features = a.samples.iter().map(|(_, s)| Ok(token_features(&a.model, &a.trace(s)?, layer)?)).collect::<Result<Vec<_>>>()?;
    let vis = pca_patch_visualization(&features, a.grid(), PCA_THRESHOLD)?;
    let figs = figure_dir(&a.out, a.command)?;
    let (ph, pw) = (a.model.config.patch_h, a.model.config.patch_w);
    for (rank, (idx, s)) in a.samples.iter().enumerate().take(a.cfg.figures) {
        write_image(&s.image, figs.join(format!("{idx:05}_image.png")))?;
        write_image(&upsample(&vis.rgb[rank], ph, pw), figs.join(format!("{idx:05}_l{layer}_pca.png")))?;
    }
    let selected: Vec<_> = a.samples.iter().zip(&vis.selected).map(|((idx, _), sel)| json!({ "index": idx, "selected": bit_string(sel) })).collect();
    a.report(&json!({
        "layer": layer,
        "threshold": PCA_THRESHOLD,
        "scale": vis.scale,
        "eigenvalues": vis.eigenvalues,
        "u0": vis.u0.to_vec(),
        "components": vis.components.iter().map(|c| c.to_vec()).collect::<Vec<_>>(),
        "images": selected,
    }))
}

fn seg_miou(a: &Analysis) -> Result<()> {
    a.require_patch_gt()?;
    let layer = a.layer(a.model.config.num_layers)?;
    let heads = a.heads()?;
    let figs = figure_dir(&a.out, a.command)?;
    let mut images = Vec::new();
    let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    let mut best_counts = vec![0usize; a.model.config.num_heads];
    let (mut total, mut scored) = (0.0, 0usize);
    for (rank, (idx, s)) in a.samples.iter().enumerate() {
        let all = attention_masks(&a.model, s, layer, a.cfg.p)?;
        let masks: Vec<_> = heads.iter().map(|&h| all[h].clone()).collect();
        let r = miou(&masks, &[(s.label, s.patch_gt.clone())]);
        let best = r.best_head.get(&s.label).map(|&i| heads[i]);
        if let (Some(v), Some(h)) = (r.miou, best) {
            total += v;
            scored += 1;
            best_counts[h] += 1;
            let e = sums.entry(class_name(s.label)).or_default();
            e.0 += v;
            e.1 += 1;
            if rank < a.cfg.figures {
                write_image(&overlay_mask(&s.image, &all[h].bits, a.grid(), MASK_COLOR, 0.5)?, figs.join(format!("{idx:05}_l{layer}_best.png")))?;
                write_image(&overlay_mask(&s.image, &s.patch_gt, a.grid(), MASK_COLOR, 0.5)?, figs.join(format!("{idx:05}_gt.png")))?;
            }
        }
        let per_head: Vec<_> =
            heads.iter().zip(&masks).map(|(&h, m)| json!({ "head": h + 1, "positives": m.count(), "mask": bit_string(&m.bits) })).collect();
        images.push(json!({
            "index": idx,
            "label": s.label,
            "iou": r.miou,
            "best_head": best.map(|h| h + 1),
            "ground_truth": bit_string(&s.patch_gt),
            "heads": per_head,
        }));
    }
    let samples: Vec<Sample> = a.samples.iter().map(|(_, s)| s.clone()).collect();
    let random = random_mask_miou(&samples, heads.len(), a.cfg.p, a.cfg.seed);
    let n = a.model.config.num_patches();
    let miou_value = (scored > 0).then(|| total / scored as f64);
    let per_class: BTreeMap<String, f64> = sums.into_iter().map(|(k, (s, c))| (k, s / c as f64)).collect();
    println!("layer {layer}: best-head mIoU {} over {scored} images (random masks {:.4})", miou_value.map_or("n/a".into(), |v| format!("{v:.4}")), random.miou);
    a.report(&json!({
        "layer": layer,
        "p": a.cfg.p,
        "num_patches": n,
        "positives_per_mask": top_count(a.cfg.p, n),
        "miou": miou_value,
        "per_class": per_class,
        "best_head_counts": best_counts,
        "random_miou": random.miou,
        "random_seed": a.cfg.seed,
        "images": images,
    }))
}

fn maskcut(a: &Analysis) -> Result<()> {
    a.require_patch_gt()?;
    let layer = a.layer(a.model.config.num_layers)?;
    let mc = MaskCutConfig { n: a.cfg.n, tau: a.cfg.tau };
    mc.validate()?;
    let figs = figure_dir(&a.out, a.command)?;
    let colors = [MASK_COLOR, colormap(1.0), colormap(0.0)];
    let (mut preds, mut gts, mut images) = (Vec::new(), Vec::new(), Vec::new());
    for (rank, (idx, s)) in a.samples.iter().enumerate() {
        let r = sample_maskcut(&a.model, s, layer, &mc, true)?;
        if rank < a.cfg.figures {
            let mut img = s.image.clone();
            for (i, m) in r.masks.iter().enumerate() {
                img = overlay_mask(&img, &m.bits, a.grid(), colors[i % colors.len()], 0.5)?;
            }
            write_image(&img, figs.join(format!("{idx:05}_l{layer}_masks.png")))?;
        }
        let masks: Vec<_> =
            r.masks.iter().map(|m| json!({ "mask": bit_string(&m.bits), "ncut": m.ncut, "score": m.score, "bbox": m.bbox })).collect();
        images.push(json!({ "index": idx, "label": s.label, "early_stop": r.early_stop, "masks": masks }));
        preds.push(r.masks.into_iter().map(|m| ScoredMask { bits: m.bits, score: m.score }).collect::<Vec<_>>());
        gts.push(if s.patch_gt.iter().any(|&b| b) { vec![s.patch_gt.clone()] } else { vec![] });
    }
    let ap = average_precision(&preds, &gts);
    println!("layer {layer}: AP {:.4}  AP50 {:.4}  AP75 {:.4}", ap.ap, ap.ap50, ap.ap75);
    a.report(&json!({ "layer": layer, "n": mc.n, "tau": mc.tau, "ap": ap, "images": images }))
}

fn rates(a: &Analysis) -> Result<()> {
    let mc = &a.model.config;
    let params = CodingRateParams { epsilon: mc.epsilon, lambda: mc.lambda };
    let layers: Vec<usize> = match a.cfg.layer {
        Some(_) => vec![a.layer(mc.num_layers)?],
        None => (1..=mc.num_layers).collect(),
    };
    let mut per_layer = vec![Vec::new(); mc.num_layers];
    for (_, s) in &a.samples {
        for (l, r) in layer_rates(&a.model, &a.trace(s)?, params)?.into_iter().enumerate() {
            per_layer[l].push(r);
        }
    }
    let mut rows = Vec::new();
    for &l in &layers {
        let m = mean_reports(&per_layer[l - 1]).ok_or_else(|| CliError::numerical("no rate reports"))?;
        println!("layer {l}: R {:.4}  Rc {:.4}  l0 {}  l1 {:.4}", m.r, m.rc, m.l0, m.l1);
        rows.push(json!({ "layer": l, "R": m.r, "Rc": m.rc, "l0": m.l0, "l1": m.l1, "objective": m.objective }));
    }
    a.report(&json!({ "epsilon": params.epsilon, "lambda": params.lambda, "images": a.samples.len(), "layers": rows }))
}

fn grad_check(args: &GradCheckArgs) -> Result<()> {
    let cfg: GradCheckConfig = resolve(args.config.as_deref(), args)?;
    let out = require(&cfg.out, "out")?;
    if cfg.examples == 0 {
        return Err(CliError::config("--examples must be positive"));
    }
    if !(cfg.step > 0.0) {
        return Err(CliError::config("--step must be positive"));
    }
    let model = match &cfg.checkpoint {
        Some(p) => load_checkpoint(p)?,
        None => CrateModel::init(&ModelConfig::tiny(cfg.arch), cfg.seed)?,
    };
    let mc = &model.config;
    let samples = match &cfg.data {
        Some(dir) => {
            let ds = import_dataset(dir)?;
            ds.train.into_iter().chain(ds.test).take(cfg.examples).collect()
        }
        None => {
            let data = SynthDataConfig {
                num_classes: mc.num_classes.clamp(2, SHAPE_FAMILIES.len()),
                size: mc.height,
                channels: mc.channels,
                patch: mc.patch_h,
                seed: cfg.seed,
                ..Default::default()
            };
            generate_dataset(&data, cfg.examples)?
        }
    };
    let batch = examples_from_samples(&samples, &model)?;
    let checks = gradient_check(&model, &batch, cfg.step)?;
    println!("{:<28} {:<12} {:>12} {:>12} {:>10}  result", "tensor", "group", "analytic", "numeric", "rel err");
    for c in &checks {
        let verdict = if c.pass { "pass" } else { "FAIL" };
        println!("{:<28} {:<12} {:>12.4e} {:>12.4e} {:>10.2e}  {verdict}", c.name, c.group, c.analytic_norm, c.numeric_norm, c.rel_error);
    }
    let failed = checks.iter().filter(|c| !c.pass).count();
    let mut groups: BTreeMap<&str, bool> = BTreeMap::new();
    for c in &checks {
        *groups.entry(c.group.as_str()).or_insert(true) &= c.pass;
    }
    let path = out.join("reports").join("grad-check.json");
    write_json(&path, &json!({ "step": cfg.step, "tolerance": GRAD_CHECK_TOL, "all_pass": failed == 0, "groups": groups, "checks": checks }))?;
    echo_config(out, "grad-check", &cfg)?;
    println!("wrote {}", path.display());
    if failed > 0 {
        return Err(CliError::numerical(format!("{failed} of {} parameter tensors failed the finite-difference check", checks.len())));
    }
    Ok(())
}
