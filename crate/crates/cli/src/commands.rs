use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde_json::json;
use srunet::dataio::{
    generate_synthetic_samples, load_dataset, load_mask_png, load_rgb_png, road_mask_from_map, save_mask_png,
    split_dataset, write_dataset, DatasetSplit, MapPalette, Sample, SplitRole, SynthDatasetConfig, INDEX_FILE,
};
use srunet::infer::{binarize, plan_tiles, predict_scene, ModelPredictor};
use srunet::metrics::{confusion_images, ConfusionCounts, MetricsReport};
use srunet::network::{Srunet, WidthPreset};
use srunet::postprocess::{diff_against_history, vectorize};
use srunet::trainer::{evaluate, fit, load_teacher, ModelState, OptimizerKind};

use crate::config::RunConfig;
use crate::{Cli, Command, DiffArgs, EvalArgs, GenSynthArgs, Optim, PostprocessFlags, PredictArgs, Preset, TrainArgs, VectorizeArgs};

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    match cli.command {
        Command::GenSynth(a) => gen_synth(cfg, a),
        Command::Train(a) => train(cfg, a),
        Command::Eval(a) => eval(cfg, a),
        Command::Predict(a) => predict(cfg, a),
        Command::Vectorize(a) => vectorize_cmd(cfg, a),
        Command::Diff(a) => diff(cfg, a),
    }
}

fn log_config(cfg: &RunConfig) -> Result<()> {
    eprintln!("srunet: resolved config {}", serde_json::to_string(cfg)?);
    Ok(())
}

fn print_json(v: &serde_json::Value) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn gen_synth(mut cfg: RunConfig, a: GenSynthArgs) -> Result<()> {
    let s = &mut cfg.synth;
    s.tiles = a.tiles.unwrap_or(s.tiles);
    s.size = a.size.unwrap_or(s.size);
    s.masked_ratio = a.masked_ratio.unwrap_or(s.masked_ratio);
    s.val_ratio = a.val_ratio.unwrap_or(s.val_ratio);
    let cfg = cfg.resolve();
    log_config(&cfg)?;
    if !(0.0..=1.0).contains(&cfg.synth.val_ratio) {
        bail!("val_ratio {} outside [0, 1]", cfg.synth.val_ratio);
    }
    let nonempty = fs::read_dir(&a.out).map(|mut d| d.next().is_some()).unwrap_or(false);
    if nonempty {
        if !a.force {
            bail!("{} exists and is not empty (use --force to overwrite)", a.out.display());
        }
        for sub in ["images", "maps", "labels"] {
            let p = a.out.join(sub);
            if p.exists() {
                fs::remove_dir_all(&p).with_context(|| format!("removing {}", p.display()))?;
            }
        }
    }
    let s = &cfg.synth;
    let samples = generate_synthetic_samples(&SynthDatasetConfig {
        tiles: s.tiles,
        tile_size: s.size,
        scene_tiles: s.scene_tiles,
        density: s.density,
        masked_ratio: s.masked_ratio,
        palette: MapPalette::default(),
        seed: cfg.seed,
    })?;
    let n_val = (s.val_ratio * s.tiles as f64).round() as usize;
    let roles: Vec<SplitRole> = (0..samples.len())
        .map(|i| if i + n_val >= samples.len() { SplitRole::Val } else { SplitRole::Train })
        .collect();
    write_dataset(&a.out, &samples, &roles)?;
    print_json(&json!({
        "out": a.out,
        "index": a.out.join(INDEX_FILE),
        "tiles": samples.len(),
        "train": samples.len() - n_val,
        "val": n_val,
        "size": s.size,
        "seed": cfg.seed,
    }))
}

fn train(mut cfg: RunConfig, a: TrainArgs) -> Result<()> {
    if a.data.is_some() {
        cfg.data.path = a.data;
    }
    if a.out.is_some() {
        cfg.data.out = a.out;
    }
    cfg.data.lab_ratio = a.lab_ratio.unwrap_or(cfg.data.lab_ratio);
    let t = &mut cfg.train;
    t.epochs = a.epochs.unwrap_or(t.epochs);
    t.steps_per_epoch = a.steps_per_epoch.or(t.steps_per_epoch);
    t.lr0 = a.lr0.unwrap_or(t.lr0);
    t.weights.alpha_unsup = a.alpha_unsup.unwrap_or(t.weights.alpha_unsup);
    t.weights.alpha_ctr = a.alpha_ctr.unwrap_or(t.weights.alpha_ctr);
    if let Some(o) = a.optimizer {
        t.optimizer = match o {
            Optim::Sgd => OptimizerKind::Sgd,
            Optim::Adam => OptimizerKind::Adam,
        };
    }
    if let Some(p) = a.preset {
        cfg.network.width_preset = match p {
            Preset::Full => WidthPreset::Full,
            Preset::Tiny => WidthPreset::Tiny,
        };
    }
    if a.no_map {
        cfg.network.use_map = false;
    }
    let data = cfg.data.path.clone().context("no dataset given (--data or [data] path)")?;
    let out = cfg.data.out.clone().context("no run directory given (--out or [data] out)")?;
    let (index, samples) = load_dataset(&data)?;
    let first = samples.first().context("dataset is empty")?;
    cfg.network.input_size = (first.height(), first.width());
    let cfg = cfg.resolve();
    cfg.train.validate()?;
    log_config(&cfg)?;

    let (mut pool, mut labeled, mut unlabeled, mut val) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (entry, s) in index.tiles.iter().zip(samples) {
        match entry.split {
            SplitRole::Train => pool.push(s),
            SplitRole::Labeled => labeled.push(s),
            SplitRole::Unlabeled => unlabeled.push(s),
            SplitRole::Val => val.push(s),
            SplitRole::Test => {}
        }
    }
    if val.is_empty() {
        bail!("{} has no val tiles", data.display());
    }
    let mut split = if pool.is_empty() {
        DatasetSplit::all_labeled(Vec::new())
    } else if pool.len() == 1 {
        DatasetSplit::all_labeled(pool)
    } else {
        split_dataset(pool, cfg.data.lab_ratio, cfg.seed)?
    };
    split.labeled.append(&mut labeled);
    split.unlabeled.append(&mut unlabeled);
    eprintln!(
        "srunet: {} labeled, {} unlabeled, {} val tiles",
        split.labeled.len(),
        split.unlabeled.len(),
        val.len()
    );

    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    write_file(&out.join("config.toml"), &cfg.to_toml()?)?;
    cfg.network.validate()?;
    let (net, store) = Srunet::new::<f32>(cfg.network.clone(), cfg.seed)?;
    let mut state = ModelState::new(store, &cfg.train);
    let report = fit(&net, &mut state, &split, &val, &cfg.train, Some(&out), |r| {
        eprintln!(
            "srunet: epoch {} sup {:.4} unsup {:.4} ctr {:.4} val_iou {:.4} lr {:.2e}",
            r.epoch, r.loss_sup, r.loss_unsup, r.loss_ctr, r.val_iou, r.lr
        );
    })?;
    print_json(&json!({
        "out": out,
        "best_epoch": report.best_epoch,
        "best_iou": report.best_iou,
        "epochs": report.history.len(),
    }))
}

fn select(index_roles: &[SplitRole], samples: Vec<Sample>, split: &str) -> Result<Vec<Sample>> {
    let want = match split {
        "all" => None,
        "train" => Some(SplitRole::Train),
        "labeled" => Some(SplitRole::Labeled),
        "unlabeled" => Some(SplitRole::Unlabeled),
        "val" => Some(SplitRole::Val),
        "test" => Some(SplitRole::Test),
        other => bail!("unknown split `{other}`"),
    };
    Ok(index_roles
        .iter()
        .zip(samples)
        .filter(|(r, s)| s.label.is_some() && want.is_none_or(|w| **r == w))
        .map(|(_, s)| s)
        .collect())
}

fn eval(mut cfg: RunConfig, a: EvalArgs) -> Result<()> {
    cfg.tiling.threshold = a.threshold.unwrap_or(cfg.tiling.threshold);
    let cfg = cfg.resolve();
    log_config(&cfg)?;
    let (index, samples) = load_dataset(&a.data)?;
    let roles: Vec<SplitRole> = index.tiles.iter().map(|e| e.split).collect();
    let samples = select(&roles, samples, &a.split)?;
    if samples.is_empty() {
        bail!("no labeled tiles in split `{}` of {}", a.split, a.data.display());
    }
    let counts = if let Some(ckpt) = &a.ckpt {
        let (net, store) = load_teacher::<f32>(ckpt)?;
        evaluate(&net, &store, &samples, cfg.tiling.threshold, cfg.tiling.batch)?
    } else {
        let dir = a.pred.as_ref().expect("clap enforces one source");
        let mut total = ConfusionCounts::default();
        for s in &samples {
            let pred = load_mask_png(&dir.join(format!("{}.png", s.tile_id)))?;
            total += confusion_images(&pred, s.label.as_ref().expect("selected tiles carry labels"))?;
        }
        total
    };
    print_json(&serde_json::to_value(MetricsReport::from(&counts))?)
}

fn predict(mut cfg: RunConfig, a: PredictArgs) -> Result<()> {
    let t = &mut cfg.tiling;
    t.tile_size = a.tile_size.or(t.tile_size);
    t.overlap = a.overlap.unwrap_or(t.overlap);
    t.threshold = a.threshold.unwrap_or(t.threshold);
    let (net, store) = load_teacher::<f32>(&a.ckpt)?;
    cfg.network = net.config().clone();
    let mut cfg = cfg.resolve();
    let tile = *cfg.tiling.tile_size.get_or_insert(cfg.network.input_size.0);
    log_config(&cfg)?;
    let image = load_rgb_png(&a.image)?;
    let map = load_rgb_png(&a.map)?;
    let plan = plan_tiles(image.height() as usize, image.width() as usize, tile, cfg.tiling.overlap)?;
    let prob = predict_scene(&image, &map, &ModelPredictor { net: &net, store: &store }, &plan, cfg.tiling.batch)?;
    let mask = binarize(&prob, cfg.tiling.threshold);
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let (prob_path, mask_path) = (a.out.join("prob.png"), a.out.join("mask.png"));
    prob.save_png(&prob_path)?;
    save_mask_png(&mask_path, &mask)?;
    let road = mask.as_raw().iter().filter(|&&v| v == 1).count();
    print_json(&json!({
        "prob": prob_path,
        "mask": mask_path,
        "height": prob.height,
        "width": prob.width,
        "tiles": plan.origins.len(),
        "road_fraction": road as f64 / (prob.height * prob.width) as f64,
    }))
}

fn apply_post(cfg: &mut RunConfig, p: &PostprocessFlags) {
    let v = &mut cfg.postprocess;
    v.min_area_px = p.min_area.unwrap_or(v.min_area_px);
    v.tolerance_px = p.tolerance.unwrap_or(v.tolerance_px);
    v.spur_px = p.spur_px.unwrap_or(v.spur_px);
}

fn vectorize_cmd(mut cfg: RunConfig, a: VectorizeArgs) -> Result<()> {
    apply_post(&mut cfg, &a.post);
    let cfg = cfg.resolve();
    cfg.postprocess.validate()?;
    log_config(&cfg)?;
    let mask = load_mask_png(&a.mask)?;
    let set = vectorize(&mask, &cfg.postprocess);
    write_file(&a.out, &serde_json::to_string_pretty(&set.to_geojson())?)?;
    print_json(&json!({ "out": a.out, "polylines": set.polylines.len() }))
}

fn diff(mut cfg: RunConfig, a: DiffArgs) -> Result<()> {
    apply_post(&mut cfg, &a.post);
    let v = &mut cfg.postprocess;
    v.buffer_px = a.buffer_px.unwrap_or(v.buffer_px);
    v.unchanged_fraction = a.unchanged_fraction.unwrap_or(v.unchanged_fraction);
    v.removed_fraction = a.removed_fraction.unwrap_or(v.removed_fraction);
    let cfg = cfg.resolve();
    log_config(&cfg)?;
    let new = load_mask_png(&a.new)?;
    let hist = match (&a.hist, &a.hist_map) {
        (Some(p), _) => load_mask_png(p)?,
        (None, Some(p)) => road_mask_from_map(&load_rgb_png(p)?, &MapPalette::default()),
        (None, None) => unreachable!("clap enforces one history source"),
    };
    let set = diff_against_history(&new, &hist, &cfg.postprocess)?;
    let summary = serde_json::to_value(set.summary())?;
    write_file(&a.out.join("changes.geojson"), &serde_json::to_string_pretty(&set.to_geojson())?)?;
    write_file(&a.out.join("summary.json"), &serde_json::to_string_pretty(&summary)?)?;
    print_json(&summary)
}
