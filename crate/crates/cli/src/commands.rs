use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use lka3d_core::analysis::{blur_probe, count_increases, erf_map, erf_radius, write_erf_outputs, ErfMap};
use lka3d_core::inference::{all_flips, logits_to_labels, sliding_window, tta_flips};
use lka3d_core::metrics::{evaluate_case, CaseError, MetricsReport, Region};
use lka3d_core::network::{count_flops, count_params, count_stored_params, Model, Variant};
use lka3d_core::pipeline::io::{write_rvf, Dtype};
use lka3d_core::pipeline::{prepare_input, synth_case, Volume};
use lka3d_core::selftest::{run_selftest, SelftestOptions, Sizes};
use lka3d_core::training::{write_loss_csv, Case, TrainOptions, Trainer};
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::config::{self, BlurRun, CountRun, ErfRun, InferRun, MetricsRun, Overrides, SynthRun, TrainRun};
use crate::data::{self, Manifest, ManifestEntry};
use crate::{BadInput, ConfigArgs, SelftestFailed};

fn bad(msg: impl Into<String>) -> anyhow::Error {
    BadInput(msg.into()).into()
}

fn load_model(path: &Path) -> Result<Model<f32>> {
    if !path.is_file() {
        return Err(bad(format!("checkpoint {} does not exist", path.display())));
    }
    Ok(Model::<f32>::load(path)?.0)
}

#[derive(Args)]
pub struct SynthArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Number of cases.
    #[arg(long)]
    count: Option<usize>,
    /// Base seed; case `i` uses `seed + i`.
    #[arg(long)]
    seed: Option<u64>,
    /// Volume side length (cubic volumes).
    #[arg(long)]
    side: Option<usize>,
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let mut o = Overrides::default();
    o.opt("count", &a.count).opt("synthetic.seed", &a.seed).opt("synthetic.shape", &a.side.map(|s| [s; 3])).extend(&a.cfg.sets);
    let run: SynthRun = config::resolve(a.cfg.config.as_deref(), &o.0)?;
    run.synthetic.validate()?;
    config::write_resolved(&a.out, "synth", json!({ "out": a.out }), &run)?;
    let cases: Vec<ManifestEntry> = (0..run.count)
        .into_par_iter()
        .map(|i| {
            let spec = lka3d_core::pipeline::SyntheticSpec { seed: run.synthetic.seed.wrapping_add(i as u64), ..run.synthetic.clone() };
            let (img, lbl) = synth_case(&spec)?;
            let id = format!("case_{i:04}");
            let (image, labels) = (format!("{id}_img.rvf"), format!("{id}_lbl.rvf"));
            write_rvf(&a.out.join(&image), &img, Dtype::F32)?;
            write_rvf(&a.out.join(&labels), &lbl, Dtype::U8)?;
            Ok(ManifestEntry { id, image, labels: Some(labels) })
        })
        .collect::<lka3d_core::Result<_>>()?;
    let manifest = Manifest { count: cases.len(), cases, synthetic: Some(serde_json::to_value(&run.synthetic)?) };
    std::fs::write(a.out.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    println!("wrote {} cases to {}", manifest.count, a.out.display());
    Ok(())
}

#[derive(Args)]
pub struct TrainArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Dataset directory (manifest.json or `*_img` / `*_lbl` pairs).
    #[arg(long)]
    data: PathBuf,
    /// Output directory for checkpoints and the loss log.
    #[arg(long)]
    out: PathBuf,
    /// Continue from this checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// lka_e, lka_ed or plain_unet.
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    num_classes: Option<usize>,
    /// Total epoch budget (including epochs already run when resuming).
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Crop side length (cubic crops).
    #[arg(long)]
    crop: Option<usize>,
    /// Seed for shuffling and cropping.
    #[arg(long)]
    seed: Option<u64>,
    /// Seed for weight initialization.
    #[arg(long)]
    init_seed: Option<u64>,
    /// Print a progress line every this many steps (0 disables).
    #[arg(long, default_value_t = 10)]
    log_every: usize,
}

fn max_label(cases: &[(String, Case)]) -> u32 {
    cases.iter().flat_map(|(_, c)| c.labels.data.iter()).fold(0.0f32, |m, &v| m.max(v)) as u32
}

pub fn train(a: TrainArgs) -> Result<()> {
    let cases = data::load_training_cases(&a.data)?;
    let channels = cases[0].1.image.channels;
    if cases.iter().any(|(_, c)| c.image.channels != channels) {
        return Err(bad("all training images must have the same number of channels"));
    }
    let mut o = Overrides::default();
    let variant = a.variant.as_deref().map(str::parse::<Variant>).transpose()?;
    o.opt("model.variant", &variant)
        .opt("model.num_classes", &a.num_classes)
        .opt("train.epochs", &a.epochs)
        .opt("train.max_steps", &a.max_steps)
        .opt("train.lr", &a.lr)
        .opt("train.batch_size", &a.batch_size)
        .opt("train.crop_size", &a.crop.map(|c| [c; 3]))
        .opt("train.seed", &a.seed)
        .opt("init_seed", &a.init_seed)
        .extend(&a.cfg.sets);

    let (mut trainer, run) = match &a.resume {
        Some(ckpt) => {
            if !ckpt.is_file() {
                return Err(bad(format!("checkpoint {} does not exist", ckpt.display())));
            }
            let stored = Trainer::<f32>::resume(ckpt, None)?;
            let base = json!({ "model": stored.model.config(), "train": stored.config, "init_seed": 0 });
            let run: TrainRun = config::resolve_over(base, a.cfg.config.as_deref(), &o.0)?;
            if &run.model != stored.model.config() {
                return Err(bad("the model configuration cannot change when resuming"));
            }
            (Trainer::<f32>::resume(ckpt, Some(&run.train))?, run)
        }
        None => {
            let mut run: TrainRun = config::resolve(a.cfg.config.as_deref(), &o.0)?;
            run.model.in_channels = channels;
            let model = Model::<f32>::build(&run.model, run.init_seed)?;
            (Trainer::new(model, &run.train)?, run)
        }
    };
    let cfg = trainer.model.config().clone();
    if cfg.in_channels != channels {
        return Err(bad(format!("model expects {} input channels, data provides {channels}", cfg.in_channels)));
    }
    let top = max_label(&cases);
    if top as usize >= cfg.num_classes {
        return Err(bad(format!("label {top} found but the model has {} classes", cfg.num_classes)));
    }
    trainer.model.arch.check_spatial(&trainer.config.crop_size)?;
    config::write_resolved(&a.out, "train", json!({ "data": a.data, "resume": a.resume }), &TrainRun { train: trainer.config.clone(), ..run })?;

    let data: Vec<Case> = cases.into_iter().map(|(_, c)| c).collect();
    let opts = TrainOptions { checkpoint_dir: Some(a.out.clone()) };
    let log_every = a.log_every;
    let t0 = std::time::Instant::now();
    trainer.run(&data, &opts, |r| {
        if log_every > 0 && (r.step + 1) % log_every == 0 {
            eprintln!("step {:>6}  epoch {:>3}  loss {:.4}  grad_norm {:.3}  {:.1}s", r.step + 1, r.epoch, r.loss, r.grad_norm, t0.elapsed().as_secs_f64());
        }
    })?;
    let last = a.out.join("last.ckpt");
    trainer.save(&last)?;
    write_loss_csv(&a.out.join("loss.csv"), &trainer.history)?;
    println!("trained {} steps ({} epochs); checkpoint {}", trainer.step, trainer.epoch, last.display());
    Ok(())
}

#[derive(Args)]
pub struct InferArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Image files or directories. Repeatable.
    #[arg(long, required = true)]
    input: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Window side length (cubic windows).
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    overlap: Option<f64>,
    /// Average over all eight axis flips.
    #[arg(long)]
    tta: bool,
    /// Also write per-class logits.
    #[arg(long)]
    save_logits: bool,
}

fn check_window(model: &Model<f32>, size: [usize; 3]) -> Result<()> {
    let f = model.config().downsample_factor();
    if size.iter().any(|&s| s % f != 0) {
        return Err(bad(format!("window {size:?} must be a multiple of {f} on every axis")));
    }
    Ok(())
}

fn check_channels(model: &Model<f32>, input: &Volume, id: &str) -> Result<()> {
    let want = model.config().in_channels;
    if input.channels != want {
        return Err(bad(format!("{id}: model expects {want} input channels, the prepared image has {}", input.channels)));
    }
    Ok(())
}

pub fn infer(a: InferArgs) -> Result<()> {
    let mut o = Overrides::default();
    o.opt("window.size", &a.window.map(|w| [w; 3])).opt("window.overlap", &a.overlap).extend(&a.cfg.sets);
    if a.tta {
        o.0.push(("tta".into(), Value::Bool(true)));
    }
    if a.save_logits {
        o.0.push(("save_logits".into(), Value::Bool(true)));
    }
    let run: InferRun = config::resolve(a.cfg.config.as_deref(), &o.0)?;
    run.window.validate()?;
    let model = load_model(&a.checkpoint)?;
    check_window(&model, run.window.size)?;
    let images = data::collect_images(&a.input)?;
    config::write_resolved(&a.out, "infer", json!({ "checkpoint": a.checkpoint, "input": a.input }), &run)?;
    for (id, path) in &images {
        let input = prepare_input(&data::read(path)?);
        check_channels(&model, &input, id)?;
        let logits = if run.tta { tta_flips(&model, &input, &run.window, &all_flips())? } else { sliding_window(&model, &input, &run.window)? };
        write_rvf(&a.out.join(format!("{id}_pred.rvf")), &logits_to_labels(&logits), Dtype::U8)?;
        if run.save_logits {
            write_rvf(&a.out.join(format!("{id}_logits.rvf")), &logits, Dtype::F32)?;
        }
        eprintln!("{id}: done");
    }
    println!("wrote {} predictions to {}", images.len(), a.out.display());
    Ok(())
}

#[derive(Args)]
pub struct MetricsArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Directory of `*_pred` volumes.
    #[arg(long)]
    pred: PathBuf,
    /// Directory of `*_lbl` volumes.
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Regions are classes `1..num_classes`; inferred from the labels when absent.
    #[arg(long)]
    num_classes: Option<usize>,
    /// 6, 18 or 26.
    #[arg(long)]
    connectivity: Option<String>,
}

fn volumes_by_id(dir: &Path, suffix: &str) -> Result<BTreeMap<String, PathBuf>> {
    if !dir.is_dir() {
        return Err(bad(format!("directory {} does not exist", dir.display())));
    }
    let mut out = BTreeMap::new();
    for e in std::fs::read_dir(dir)? {
        let p = e?.path();
        let Some(stem) = p.file_name().and_then(|n| n.to_str()).map(|n| n.trim_end_matches(".rvf").trim_end_matches(".nii")) else { continue };
        if stem.ends_with(suffix) && p.is_file() {
            out.insert(data::case_id(&p).expect("volume file"), p);
        }
    }
    Ok(out)
}

pub fn metrics(a: MetricsArgs) -> Result<()> {
    let mut o = Overrides::default();
    o.opt("connectivity", &a.connectivity).extend(&a.cfg.sets);
    let run: MetricsRun = config::resolve(a.cfg.config.as_deref(), &o.0)?;
    let preds = volumes_by_id(&a.pred, "_pred")?;
    let gts = volumes_by_id(&a.gt, "_lbl")?;
    for id in preds.keys().filter(|k| !gts.contains_key(*k)) {
        eprintln!("warning: {id}: no reference labels");
    }
    for id in gts.keys().filter(|k| !preds.contains_key(*k)) {
        eprintln!("warning: {id}: no prediction");
    }
    let pairs: Vec<(String, Volume, Volume)> = preds
        .iter()
        .filter_map(|(id, p)| gts.get(id).map(|g| (id, p, g)))
        .map(|(id, p, g)| Ok((id.clone(), data::read(p)?, data::read(g)?)))
        .collect::<Result<_>>()?;
    if pairs.is_empty() {
        return Err(bad("no prediction/reference pairs with matching case ids"));
    }
    let regions = match &run.regions {
        Some(r) => r.clone(),
        None => {
            let k = a.num_classes.unwrap_or_else(|| {
                let top = pairs.iter().flat_map(|(_, p, g)| p.data.iter().chain(&g.data)).fold(0.0f32, |m, &v| m.max(v));
                (top as usize + 1).max(2)
            });
            Region::per_class(k)
        }
    };
    let results: Vec<_> = pairs.par_iter().map(|(id, p, g)| (id, evaluate_case(id, p, g, &regions, run.connectivity))).collect();
    let (mut cases, mut errors) = (Vec::new(), Vec::new());
    for (id, r) in results {
        match r {
            Ok(rows) => cases.extend(rows),
            Err(e) => {
                eprintln!("warning: {id}: {e}");
                errors.push(CaseError { case: id.clone(), error: e.to_string() });
            }
        }
    }
    let report = MetricsReport::with_errors(cases, errors);
    config::write_resolved(&a.out, "metrics", json!({ "pred": a.pred, "gt": a.gt }), &MetricsRun { regions: Some(regions), ..run })?;
    report.write_csv(&a.out.join("metrics.csv"))?;
    report.write_json(&a.out.join("metrics.json"))?;
    println!("scored {} cases ({} errors) into {}", pairs.len() - report.errors.len(), report.errors.len(), a.out.display());
    Ok(())
}

#[derive(Args)]
pub struct CountArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    in_channels: Option<usize>,
    #[arg(long)]
    num_classes: Option<usize>,
    /// Input side length (cubic input).
    #[arg(long)]
    side: Option<usize>,
    /// Include per-layer FLOP rows.
    #[arg(long)]
    layers: bool,
    /// Also write the report (and resolved configuration) to this directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn count(a: CountArgs) -> Result<()> {
    let mut o = Overrides::default();
    let variant = a.variant.as_deref().map(str::parse::<Variant>).transpose()?;
    o.opt("model.variant", &variant)
        .opt("model.in_channels", &a.in_channels)
        .opt("model.num_classes", &a.num_classes)
        .opt("input_shape", &a.side.map(|s| [s; 3]))
        .extend(&a.cfg.sets);
    let run: CountRun = config::resolve(a.cfg.config.as_deref(), &o.0)?;
    let model = Model::<f32>::build(&run.model, 0)?;
    let [d, h, w] = run.input_shape;
    let mut flops = count_flops(&model, [run.model.in_channels, d, h, w])?;
    if !a.layers {
        flops.layers.clear();
    }
    let report = json!({
        "variant": run.model.variant,
        "params": count_params(&model),
        "stored_params": count_stored_params(&model),
        "flops": flops,
    });
    let text = serde_json::to_string_pretty(&report)?;
    if let Some(out) = &a.out {
        config::write_resolved(out, "count", json!({}), &run)?;
        std::fs::write(out.join("count.json"), &text)?;
    }
    println!("{text}");
    Ok(())
}

#[derive(Args)]
pub struct ErfArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Trained model; random initialization over `seeds` seeds when absent.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Directory of images; synthetic inputs when absent.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    variant: Option<String>,
    /// 1-based encoder stages, comma separated.
    #[arg(long, value_delimiter = ',')]
    stages: Option<Vec<usize>>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    seeds: Option<usize>,
    #[arg(long)]
    subjects: Option<usize>,
    #[arg(long)]
    threshold: Option<f64>,
}

fn mean_maps(maps: &[ErfMap]) -> ErfMap {
    let mut data = vec![0.0; maps[0].data.len()];
    for m in maps {
        data.iter_mut().zip(&m.data).for_each(|(a, b)| *a += b);
    }
    let max = data.iter().cloned().fold(0.0, f64::max);
    if max > 0.0 {
        data.iter_mut().for_each(|v| *v /= max);
    }
    ErfMap { stage: maps[0].stage, subjects: maps.iter().map(|m| m.subjects).sum(), shape: maps[0].shape, data }
}

pub fn erf(a: ErfArgs) -> Result<()> {
    let mut o = Overrides::default();
    let variant = a.variant.as_deref().map(str::parse::<Variant>).transpose()?;
    o.opt("model.variant", &variant)
        .opt("stages", &a.stages)
        .opt("seed", &a.seed)
        .opt("seeds", &a.seeds)
        .opt("subjects", &a.subjects)
        .opt("threshold", &a.threshold)
        .extend(&a.cfg.sets);
    let mut run: ErfRun = config::resolve(a.cfg.config.as_deref(), &o.0)?;
    if !(run.threshold > 0.0 && run.threshold < 1.0) {
        return Err(bad(format!("threshold must be in (0, 1), got {}", run.threshold)));
    }
    if run.subjects == 0 {
        return Err(bad("subjects must be at least 1"));
    }
    let inputs: Vec<Volume> = match &a.data {
        Some(dir) => {
            let images = data::collect_images(std::slice::from_ref(dir))?;
            images.iter().take(run.subjects).map(|(_, p)| Ok(prepare_input(&data::read(p)?))).collect::<Result<_>>()?
        }
        None => {
            run.synthetic.validate()?;
            (0..run.subjects)
                .map(|i| {
                    let spec = lka3d_core::pipeline::SyntheticSpec { seed: run.synthetic.seed.wrapping_add(i as u64), ..run.synthetic.clone() };
                    Ok(prepare_input(&synth_case(&spec)?.0))
                })
                .collect::<Result<_>>()?
        }
    };
    let models: Vec<(u64, Model<f32>)> = match &a.checkpoint {
        Some(p) => vec![(0, load_model(p)?)],
        None => {
            if run.seeds == 0 {
                return Err(bad("seeds must be at least 1"));
            }
            run.model.in_channels = inputs[0].channels;
            (0..run.seeds as u64).map(|i| Ok((run.seed + i, Model::<f32>::build(&run.model, run.seed + i)?))).collect::<Result<_>>()?
        }
    };
    for (_, m) in &models {
        check_channels(m, &inputs[0], "erf input")?;
    }
    let n_stages = models[0].1.arch.encoder.len();
    let stages: Vec<usize> = if run.stages.is_empty() { (1..=n_stages).collect() } else { run.stages.clone() };
    config::write_resolved(&a.out, "erf", json!({ "checkpoint": a.checkpoint, "data": a.data }), &run)?;

    let mut rows = String::from("seed,stage,radius\n");
    let mut means = Vec::new();
    for &stage in &stages {
        let mut maps = Vec::new();
        for (seed, m) in &models {
            let map = erf_map(m, stage, &inputs)?;
            let r = erf_radius(&map, run.threshold).map_or_else(|_| String::new(), |r| r.to_string());
            eprintln!("stage {stage} seed {seed}: radius {r}");
            rows.push_str(&format!("{seed},{stage},{r}\n"));
            maps.push(map);
        }
        means.push(mean_maps(&maps));
    }
    std::fs::write(a.out.join("erf_seeds.csv"), rows)?;
    write_erf_outputs(&a.out, &means, run.threshold)?;
    for m in &means {
        let r = erf_radius(m, run.threshold).map_or_else(|_| "n/a".to_string(), |r| format!("{r:.3}"));
        println!("stage {}: radius {r} (threshold {})", m.stage, run.threshold);
    }
    Ok(())
}

#[derive(Args)]
pub struct BlurArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Image files or directories. Repeatable.
    #[arg(long, required = true)]
    input: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Blur widths in voxels, comma separated.
    #[arg(long, value_delimiter = ',')]
    sigmas: Option<Vec<f64>>,
    #[arg(long)]
    window: Option<usize>,
}

pub fn blurprobe(a: BlurArgs) -> Result<()> {
    let mut o = Overrides::default();
    o.opt("sigmas", &a.sigmas).opt("window.size", &a.window.map(|w| [w; 3])).extend(&a.cfg.sets);
    let run: BlurRun = config::resolve(a.cfg.config.as_deref(), &o.0)?;
    run.window.validate()?;
    if run.sigmas.iter().any(|s| !(*s >= 0.0)) {
        return Err(bad("sigmas must be ≥ 0"));
    }
    let model = load_model(&a.checkpoint)?;
    check_window(&model, run.window.size)?;
    let images = data::collect_images(&a.input)?;
    let mut raw_channels = None;
    let mut cases = Vec::new();
    for (id, p) in &images {
        let raw = data::read(p)?;
        if *raw_channels.get_or_insert(raw.channels) != raw.channels {
            return Err(bad("all images must have the same number of channels"));
        }
        let input = prepare_input(&raw);
        check_channels(&model, &input, id)?;
        cases.push((id.clone(), input));
    }
    config::write_resolved(&a.out, "blurprobe", json!({ "checkpoint": a.checkpoint, "input": a.input }), &run)?;
    let result = blur_probe(&model, &cases, &run.sigmas, &run.window, raw_channels.unwrap_or(1))?;
    result.write_csv(&a.out.join("blur_probe.csv"))?;
    let medians: Vec<f64> = run.sigmas.iter().map(|&s| result.median_dice(s).unwrap_or(f64::NAN)).collect();
    let summary = json!({ "sigmas": run.sigmas, "median_dice": medians, "increases": count_increases(&medians) });
    std::fs::write(a.out.join("blur_probe.json"), serde_json::to_string_pretty(&summary)?)?;
    for (s, m) in run.sigmas.iter().zip(&medians) {
        println!("sigma {s}: median dice {m:.4}");
    }
    Ok(())
}

#[derive(Args)]
pub struct SelftestArgs {
    /// Run the suites at their full sizes.
    #[arg(long)]
    full: bool,
    /// Perturb the composed kernels so that the composition suite fails.
    #[arg(long)]
    corrupt_kernel: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the JSON report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn selftest(a: SelftestArgs) -> Result<()> {
    let opts = SelftestOptions { sizes: if a.full { Sizes::full() } else { Sizes::reduced() }, seed: a.seed, corrupt_kernel: a.corrupt_kernel };
    let report = run_selftest(&opts);
    for s in &report.suites {
        println!("{} {} ({} checks, {:.1}s)", if s.passed() { "PASS" } else { "FAIL" }, s.suite.name(), s.checks.len(), s.seconds);
        for c in s.failures() {
            println!("  failed {}: {} (bound {})", c.name, c.value, c.bound);
        }
    }
    if let Some(p) = &a.out {
        if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(p, serde_json::to_string_pretty(&report)?).with_context(|| format!("writing {}", p.display()))?;
    }
    if !report.passed() {
        let failed = report.suites.iter().flat_map(|s| s.failures().map(move |c| format!("{}/{}", s.suite.name(), c.name))).collect();
        return Err(SelftestFailed(failed).into());
    }
    println!("all suites passed in {:.1}s", report.seconds);
    Ok(())
}
