//! End-to-end acceptance checks. Each test writes one `PASS`/`FAIL` line to
//! stderr (bypassing the test harness capture) before asserting.

use std::io::Write as _;
use std::time::Instant;

use image::GrayImage;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng as _;
use srunet::dataio::{
    buffer_centerlines, generate_synthetic_samples, split_dataset, Centerline, DatasetSplit, RoadCenterlineSet,
    RoadClass, Sample, SynthDatasetConfig,
};
use srunet::infer::{plan_tiles, predict_scene, TilePredictor};
use srunet::metrics::{confusion, scores, ConfusionCounts};
use srunet::network::{Ctx, NetworkConfig, ParamStore, Srunet, WidthPreset};
use srunet::objectives::{
    downsample_nearest, loss_reco, loss_sup, loss_unsup, pseudo_label, reco_query_loss, sample_reco, LossWeights,
    ReCoConfig,
};
use srunet::postprocess::{diff_against_history, vectorize, RoadStatus, VectorizeConfig};
use srunet::seed;
use srunet::trainer::{fit, train_step, ModelState, OptimizerKind, TrainConfig};
use srunet::{Result, Tensor64};
use srunet_tensor::gradcheck::{central_difference, relative_error};
use srunet_tensor::{Tensor, Var};

fn report(name: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "[acceptance] {verdict} {name}: {detail}");
    assert!(pass, "{name}: {detail}");
}

fn uniform(seed: u64, shape: &[usize], lo: f64, hi: f64) -> Tensor64 {
    let mut rng = seed::rng(seed);
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

fn scalar(v: &Var<f64>) -> f64 {
    v.value().data()[0]
}

fn synth(tiles: usize, size: usize, scene_tiles: usize, seed: u64) -> Vec<Sample> {
    generate_synthetic_samples(&SynthDatasetConfig {
        tiles,
        tile_size: size,
        scene_tiles,
        seed,
        ..SynthDatasetConfig::default()
    })
    .unwrap()
}

/// Worst relative error of analytic against central-difference gradients
/// over every element of `x`.
fn loss_gradcheck(x: &Tensor64, f: &dyn Fn(&Var<f64>) -> Var<f64>) -> f64 {
    let leaf = Var::leaf(x.clone());
    let grads = f(&leaf).backward();
    let g = grads.get(&leaf).expect("input receives a gradient").clone();
    let mut eval = |xs: &[Tensor64]| scalar(&f(&Var::constant(xs[0].clone())));
    (0..x.numel())
        .map(|i| {
            let fd = central_difference(&mut eval, &[x.clone()], 0, i, 1e-6);
            relative_error(g.data()[i], fd, 1e-8)
        })
        .fold(0.0, f64::max)
}

#[test]
fn gradients_match_finite_differences() {
    // Batch norm over the deepest stage needs more than a couple of values.
    const S: usize = 64;
    let t0 = Instant::now();
    let p = uniform(1, &[1, 1, 8, 8], 0.05, 0.95);
    let y = uniform(2, &[1, 1, 8, 8], 0.0, 1.0).map(|v| (v > 0.6) as u8 as f64);
    let teacher = uniform(3, &[1, 1, 8, 8], 0.0, 1.0).map(|v| if v > 0.5 { 0.99 } else { v });
    let (pseudo, mask) = pseudo_label(&teacher, 0.95);
    let e_sup = loss_gradcheck(&p, &|v| loss_sup(v, &y).unwrap());
    let e_unsup = loss_gradcheck(&p, &|v| loss_unsup(v, &pseudo, &mask).unwrap());

    let rep = uniform(4, &[1, 4, 8, 8], -1.0, 1.0);
    let reco_prob = uniform(5, &[1, 1, 8, 8], 0.0, 1.0);
    let reco_cfg = ReCoConfig {
        num_queries: 16,
        num_keys: 24,
        ..ReCoConfig::default()
    };
    let sample = sample_reco(&rep, &reco_prob, &y, &reco_cfg, 7).unwrap();
    let e_reco = loss_gradcheck(&rep, &|v| loss_reco(v, &sample, &reco_cfg).unwrap());

    // Whole tiny network, residual head live so every parameter matters.
    let cfg = NetworkConfig {
        rrm_zero_init: false,
        ..NetworkConfig::tiny(S)
    };
    let (net, store) = Srunet::new::<f64>(cfg, 11).unwrap();
    let img = uniform(12, &[2, 3, S, S], 0.0, 1.0);
    let map = uniform(13, &[2, 3, S, S], 0.0, 1.0);
    let labels = uniform(14, &[1, 1, S, S], 0.0, 1.0).map(|v| (v > 0.7) as u8 as f64);
    let t_prob = uniform(15, &[1, 1, S, S], 0.0, 1.0).map(|v| if v > 0.4 { 0.98 } else { v });
    let (u_pseudo, u_mask) = pseudo_label(&t_prob, 0.95);
    let reco_cfg = ReCoConfig::default();

    // Contrast pixels are sampled once from the unperturbed forward and then
    // held fixed, so the loss is a smooth function of the parameters.
    let sample = {
        let ctx = Ctx::train(&store);
        let out = net.forward(&ctx, &Var::constant(img.clone()), &Var::constant(map.clone())).unwrap();
        let rep = out.representation.value();
        let (rh, rw) = (rep.shape()[2], rep.shape()[3]);
        let mut both = labels.data().to_vec();
        both.extend_from_slice(u_pseudo.data());
        let lab = downsample_nearest(&Tensor::from_vec(&[2, 1, S, S], both).unwrap(), rh, rw).unwrap();
        let prob = downsample_nearest(out.road_prob().unwrap().value(), rh, rw).unwrap();
        sample_reco(rep, &prob, &lab, &reco_cfg, 21).unwrap()
    };
    let total = |s: &ParamStore<f64>| -> (f64, Vec<Option<Tensor64>>) {
        let ctx = Ctx::train(s);
        let out = net.forward(&ctx, &Var::constant(img.clone()), &Var::constant(map.clone())).unwrap();
        let prob = out.road_prob().unwrap();
        let sup = loss_sup(&prob.narrow_batch(0, 1).unwrap(), &labels).unwrap();
        let unsup = loss_unsup(&prob.narrow_batch(1, 1).unwrap(), &u_pseudo, &u_mask).unwrap();
        let ctr = loss_reco(&out.representation, &sample, &reco_cfg).unwrap();
        let loss = sup.add(&unsup).unwrap().add(&ctr.scale(0.2)).unwrap();
        (scalar(&loss), ctx.param_grads(&loss.backward()))
    };
    let (_, grads) = total(&store);
    let trainable: Vec<_> = store.trainable_ids().collect();
    let mut rng = seed::rng(31);
    let mut e_net: f64 = 0.0;
    // Small enough that few ReLU or max-pool kinks are crossed.
    let h = 1e-6;
    for _ in 0..20 {
        let id = *trainable.choose(&mut rng).unwrap();
        let k = rng.random_range(0..store.get(id).numel());
        let analytic = grads[id.index()].as_ref().map_or(0.0, |g| g.data()[k]);
        let mut plus = store.clone();
        plus.get_mut(id).data_mut()[k] += h;
        let mut minus = store.clone();
        minus.get_mut(id).data_mut()[k] -= h;
        let fd = (total(&plus).0 - total(&minus).0) / (2.0 * h);
        e_net = e_net.max(relative_error(analytic, fd, 1e-7));
    }
    let pass = e_sup < 1e-4 && e_unsup < 1e-4 && e_reco < 1e-4 && e_net < 1e-3;
    report(
        "gradient correctness",
        pass,
        &format!(
            "sup {e_sup:.1e}, unsup {e_unsup:.1e}, reco {e_reco:.1e} (< 1e-4); network {e_net:.1e} (< 1e-3); {:.0}s",
            t0.elapsed().as_secs_f64()
        ),
    );
}

#[test]
fn ema_identity_holds_every_step() {
    let data = synth(8, 32, 2, 40);
    let (net, store) = Srunet::new::<f64>(NetworkConfig::tiny(32), 41).unwrap();
    let cfg = TrainConfig {
        reco: ReCoConfig {
            num_queries: 32,
            num_keys: 64,
            ..ReCoConfig::default()
        },
        ..TrainConfig::default()
    };
    let mut state = ModelState::new(store, &cfg);
    let d = cfg.ema_decay;
    let mut worst: f64 = 0.0;
    let mut buffers_synced = true;
    for step in 0..50 {
        let before = state.teacher.clone();
        let i = (step * 2) % 8;
        let (l, u) = (&data[i..i + 1], &data[(i + 4) % 8..(i + 4) % 8 + 1]);
        train_step(&net, &mut state, l, u, &cfg, 50).unwrap();
        for id in state.student.ids() {
            let (t, t0, s) = (state.teacher.get(id).data(), before.get(id).data(), state.student.get(id).data());
            if state.student.trainable_ids().any(|x| x == id) {
                for k in 0..t.len() {
                    worst = worst.max((t[k] - (d * t0[k] + (1.0 - d) * s[k])).abs());
                }
            } else {
                buffers_synced &= t == s;
            }
        }
    }
    report(
        "EMA exactness",
        worst <= 1e-12 && buffers_synced,
        &format!("max |teacher - (d*prev + (1-d)*student)| over 50 steps = {worst:.1e}; running stats copied: {buffers_synced}"),
    );
}

#[test]
fn forward_shapes_and_softmax() {
    let mut notes = Vec::new();
    let mut pass = true;
    let cases = [
        (NetworkConfig::tiny(64), 64),
        (NetworkConfig::tiny(128), 128),
        (NetworkConfig::tiny(512), 512),
        (NetworkConfig { input_size: (64, 64), ..NetworkConfig::default() }, 64),
    ];
    for (cfg, size) in cases {
        let preset = cfg.width_preset;
        let (net, store) = Srunet::new::<f32>(cfg, 5).unwrap();
        let img = Var::constant(Tensor::from_fn(&[1, 3, size, size], |i| ((i * 7919) % 255) as f32 / 255.0));
        let map = Var::constant(Tensor::from_fn(&[1, 3, size, size], |i| ((i * 104729) % 255) as f32 / 255.0));
        let ctx = Ctx::eval(&store);
        let out = net.forward(&ctx, &img, &map).unwrap();
        let logits_ok = out.logits.shape() == [1, 2, size, size];
        let rep_ok = out.representation.shape() == [1, 256, size / 4, size / 4];
        let sm = out.logits.softmax_channels().unwrap();
        let hw = size * size;
        let worst = (0..hw)
            .map(|i| ((sm.value().data()[i] + sm.value().data()[hw + i]) as f64 - 1.0).abs())
            .fold(0.0, f64::max);
        pass &= logits_ok && rep_ok && worst <= 1e-6;
        notes.push(format!(
            "{preset:?} {size}²: logits {:?}, repr {:?}, softmax dev {worst:.1e}",
            out.logits.shape(),
            out.representation.shape()
        ));
    }
    report("shapes and normalization", pass, &notes.join("; "));
}

#[test]
fn zero_initialized_refinement_is_identity() {
    let mut pass = true;
    let mut notes = Vec::new();
    for preset in [WidthPreset::Tiny, WidthPreset::Full] {
        let cfg = NetworkConfig {
            width_preset: preset,
            input_size: (64, 64),
            ..NetworkConfig::default()
        };
        let (net, store) = Srunet::new::<f64>(cfg, 9).unwrap();
        let img = Var::constant(uniform(1, &[2, 3, 64, 64], 0.0, 1.0));
        let map = Var::constant(uniform(2, &[2, 3, 64, 64], 0.0, 1.0));
        for train in [false, true] {
            let ctx = if train { Ctx::train(&store) } else { Ctx::eval(&store) };
            let out = net.forward(&ctx, &img, &map).unwrap();
            let same = out.refined_logits.value() == out.coarse_logits.value();
            pass &= same;
            notes.push(format!("{preset:?} {}: {}", if train { "train" } else { "eval" }, if same { "identical" } else { "differ" }));
        }
    }
    report("residual refinement identity", pass, &notes.join(", "));
}

fn brute_counts(pred: &[u8], gt: &[u8]) -> ConfusionCounts {
    let mut c = ConfusionCounts::default();
    for (&p, &g) in pred.iter().zip(gt) {
        match (p, g) {
            (1, 1) => c.tp += 1,
            (1, 0) => c.fp += 1,
            (0, 1) => c.fn_ += 1,
            _ => c.tn += 1,
        }
    }
    c
}

#[test]
fn metrics_match_pixel_counting() {
    let mut rng = seed::rng(55);
    let mut mismatches = 0;
    let mut additive = true;
    for _ in 0..100 {
        let density = rng.random_range(0.0..1.0);
        let mut draw = || -> Vec<u8> { (0..256).map(|_| rng.random_bool(density) as u8).collect() };
        let (pred, gt) = (draw(), draw());
        let c = confusion(&pred, &gt).unwrap();
        let b = brute_counts(&pred, &gt);
        let s = scores(&c);
        let (tp, fp, fn_, tn) = (b.tp as f64, b.fp as f64, b.fn_ as f64, b.tn as f64);
        let div = |a: f64, d: f64| if d == 0.0 { 0.0 } else { a / d };
        let road_absent = b.tp + b.fp + b.fn_ == 0;
        let expect_iou = if road_absent { 1.0 } else { div(tp, tp + fp + fn_) };
        let expect_p = if road_absent { 1.0 } else { div(tp, tp + fp) };
        let expect_r = if road_absent { 1.0 } else { div(tp, tp + fn_) };
        let expect_f1 = if road_absent { 1.0 } else { div(2.0 * tp, 2.0 * tp + fp + fn_) };
        let bg = if b.tn + b.fp + b.fn_ == 0 { 1.0 } else { div(tn, tn + fp + fn_) };
        if c != b
            || s.iou != expect_iou
            || s.precision != expect_p
            || s.recall != expect_r
            || s.f1 != expect_f1
            || s.miou != 0.5 * (expect_iou + bg)
        {
            mismatches += 1;
        }
        // Four 8×8 quadrants.
        let quad = |m: &[u8], q: usize| -> Vec<u8> {
            let (r0, c0) = ((q / 2) * 8, (q % 2) * 8);
            (0..64).map(|k| m[(r0 + k / 8) * 16 + c0 + k % 8]).collect()
        };
        let parts: ConfusionCounts = (0..4).map(|q| confusion(&quad(&pred, q), &quad(&gt, q)).unwrap()).sum();
        additive &= parts == c;
    }
    report(
        "metric oracle",
        mismatches == 0 && additive,
        &format!("{mismatches}/100 mismatching pairs; quadrant additivity exact: {additive}"),
    );
}

struct PassThrough;

impl TilePredictor<f64> for PassThrough {
    fn predict(&self, images: &Tensor<f64>, _maps: &Tensor<f64>) -> Result<Tensor<f64>> {
        let (n, _, h, w) = images.dims4()?;
        let mut out = Vec::with_capacity(n * h * w);
        for k in 0..n {
            out.extend_from_slice(&images.data()[k * 3 * h * w..k * 3 * h * w + h * w]);
        }
        Ok(Tensor::from_vec(&[n, 1, h, w], out)?)
    }
}

#[test]
fn stitching_is_exact_and_order_free() {
    let (h, w) = (300, 437);
    let plan = plan_tiles(h, w, 128, 32).unwrap();
    let weight_dev = plan.weight_raster().iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max);

    let mut rng = seed::rng(77);
    let image = image::RgbImage::from_fn(w as u32, h as u32, |_, _| image::Rgb([rng.random(), rng.random(), rng.random()]));
    let map = image::RgbImage::new(w as u32, h as u32);
    let raster = predict_scene(&image, &map, &PassThrough, &plan, 3).unwrap();
    let round_trip = raster
        .data
        .iter()
        .enumerate()
        .map(|(i, &p)| (p - image.as_raw()[i * 3] as f64 / 255.0).abs())
        .fold(0.0, f64::max);

    let tiles: Vec<(usize, Vec<f64>)> = (0..plan.origins.len())
        .map(|i| (i, (0..128 * 128).map(|_| rng.random_range(0.0..1.0)).collect()))
        .collect();
    let reference = plan.stitch(tiles.clone()).unwrap();
    let mut order_free = true;
    for s in 0..5 {
        let mut shuffled = tiles.clone();
        shuffled.shuffle(&mut seed::rng(seed::derive(&[78, s])));
        order_free &= plan.stitch(shuffled).unwrap() == reference;
    }
    report(
        "stitcher",
        weight_dev <= 1e-9 && round_trip <= 1e-6 && order_free,
        &format!(
            "{} tiles; weight deviation {weight_dev:.1e}; pass-through error {round_trip:.1e}; 5 shuffles identical: {order_free}",
            plan.origins.len()
        ),
    );
}

#[test]
fn overfits_eight_tiles() {
    let t0 = Instant::now();
    let data = synth(8, 128, 2, 1);
    let cfg = TrainConfig {
        epochs: 30,
        steps_per_epoch: Some(10),
        lr0: 2e-3,
        optimizer: OptimizerKind::Adam,
        ema_decay: 0.95,
        ..TrainConfig::default()
    };
    let (net, store) = Srunet::new::<f32>(NetworkConfig::tiny(128), 1).unwrap();
    let mut state = ModelState::new(store, &cfg);
    let split = DatasetSplit::all_labeled(data.clone());
    let r = fit(&net, &mut state, &split, &data, &cfg, None, |_| {}).unwrap();
    let final_iou = r.history.last().unwrap().val_iou;
    let secs = t0.elapsed().as_secs_f64();
    report(
        "overfit sanity",
        final_iou >= 0.90 && secs < 600.0,
        &format!("teacher training IoU after 300 steps {final_iou:.4} (>= 0.90); {secs:.0}s"),
    );
}

struct SemiRun {
    full: f64,
    supervised: f64,
    no_map: f64,
}

/// Best teacher validation IoU of one training run.
fn train_and_score(split: &DatasetSplit, val: &[Sample], net_cfg: NetworkConfig, cfg: &TrainConfig) -> f64 {
    let (net, store) = Srunet::new::<f32>(net_cfg, cfg.seed).unwrap();
    let mut state = ModelState::new(store, cfg);
    fit(&net, &mut state, split, val, cfg, None, |_| {}).unwrap().best_iou
}

fn semi_run(seed: u64) -> SemiRun {
    const SIZE: usize = 128;
    const STEPS: usize = 1200;
    let train = synth(200, SIZE, 4, 100 + seed);
    let val = synth(32, SIZE, 4, 900 + seed);
    let split = split_dataset(train, 0.125, seed).unwrap();
    let cfg = TrainConfig {
        epochs: 10,
        steps_per_epoch: Some(STEPS / 10),
        lr0: 1e-3,
        optimizer: OptimizerKind::Adam,
        seed,
        ..TrainConfig::default()
    };
    let supervised_cfg = TrainConfig {
        weights: LossWeights {
            alpha_unsup: 0.0,
            alpha_ctr: 0.0,
        },
        ..cfg.clone()
    };
    let labeled_only = DatasetSplit {
        unlabeled: Vec::new(),
        ..split.clone()
    };
    let with_map = NetworkConfig::tiny(SIZE);
    let without_map = NetworkConfig {
        use_map: false,
        ..with_map.clone()
    };
    SemiRun {
        full: train_and_score(&split, &val, with_map.clone(), &cfg),
        supervised: train_and_score(&labeled_only, &val, with_map, &supervised_cfg),
        no_map: train_and_score(&split, &val, without_map, &cfg),
    }
}

#[test]
fn semi_supervised_training_helps() {
    let t0 = Instant::now();
    let runs: Vec<SemiRun> = (0..3).map(semi_run).collect();
    let mean = |f: fn(&SemiRun) -> f64| runs.iter().map(f).sum::<f64>() / runs.len() as f64;
    let (full, sup, no_map) = (mean(|r| r.full), mean(|r| r.supervised), mean(|r| r.no_map));
    let per_seed: Vec<String> = runs
        .iter()
        .enumerate()
        .map(|(s, r)| format!("seed {s}: {:.4}/{:.4}/{:.4}", r.full, r.supervised, r.no_map))
        .collect();
    let secs = t0.elapsed().as_secs_f64();
    report(
        "semi-supervised trend",
        full >= sup && full >= no_map && secs < 7200.0,
        &format!(
            "mean IoU full {full:.4}, supervised-only {sup:.4} (delta {:+.4}), without map {no_map:.4} (delta {:+.4}); \
             full/supervised/without-map per {}; {secs:.0}s",
            full - sup,
            full - no_map,
            per_seed.join(", ")
        ),
    );
}

#[test]
fn loss_spot_values() {
    let half = Var::constant(Tensor::full(&[1, 1, 8, 8], 0.5));
    let labels = Tensor::from_fn(&[1, 1, 8, 8], |i| (i % 3 == 0) as u8 as f64);
    let sup = scalar(&loss_sup(&half, &labels).unwrap());
    let teacher = uniform(8, &[1, 1, 8, 8], 0.1, 0.9);
    let (pseudo, mask) = pseudo_label(&teacher, 0.95);
    let unsup = scalar(&loss_unsup(&Var::constant(uniform(9, &[1, 1, 8, 8], 0.01, 0.99)), &pseudo, &mask).unwrap());
    let reco = reco_query_loss(&[1.0, 0.0], &[1.0, 0.0], &[vec![0.0, 1.0]], 0.5).unwrap();
    let pass = (sup - 2f64.ln()).abs() <= 1e-9 && unsup == 0.0 && mask.count() == 0 && (reco - 0.1269).abs() <= 1e-4;
    report(
        "loss spot checks",
        pass,
        &format!("sup at p=0.5 {sup:.12} (ln 2 = {:.12}); unsup with no confident pixel {unsup}; reco scalar case {reco:.6}", 2f64.ln()),
    );
}

fn road(lines: &[[(f64, f64); 2]], h: usize, w: usize) -> GrayImage {
    buffer_centerlines(&RoadCenterlineSet {
        polylines: lines
            .iter()
            .map(|l| Centerline {
                class: RoadClass::Primary,
                points: l.to_vec(),
            })
            .collect(),
        height: h,
        width: w,
    })
    .unwrap()
}

fn densify(pts: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for s in pts.windows(2) {
        let n = ((s[1].0 - s[0].0).hypot(s[1].1 - s[0].1) / 0.25).ceil().max(1.0) as usize;
        out.extend((0..=n).map(|k| {
            let t = k as f64 / n as f64;
            (s[0].0 + t * (s[1].0 - s[0].0), s[0].1 + t * (s[1].1 - s[0].1))
        }));
    }
    out
}

fn hausdorff(a: &[(f64, f64)], b: &[(f64, f64)]) -> f64 {
    let one_way = |a: &[(f64, f64)], b: &[(f64, f64)]| {
        a.iter()
            .map(|p| b.iter().map(|q| (p.0 - q.0).hypot(p.1 - q.1)).fold(f64::INFINITY, f64::min))
            .fold(0.0, f64::max)
    };
    one_way(a, b).max(one_way(b, a))
}

#[test]
fn vector_pipeline_recovers_roads_and_changes() {
    let (h, w) = (160, 256);
    let truth = [(20.0, 40.0), (235.0, 120.0)];
    let mask = road(&[truth], h, w);
    let cfg = VectorizeConfig::default();
    let set = vectorize(&mask, &cfg);
    let n_lines = set.polylines.len();
    let dist = set.polylines.first().map_or(f64::INFINITY, |p| {
        let v: Vec<(f64, f64)> = p.vertices.iter().map(|&(x, y)| (x as f64, y as f64)).collect();
        hausdorff(&densify(&v), &densify(&truth))
    });

    let old = [(10.0, 10.0), (245.0, 10.0)];
    let fresh = [(40.0, 100.0), (200.0, 150.0)];
    let historical = road(&[old, truth], h, w);
    let mut new_mask = historical.clone();
    for (x, y, px) in road(&[fresh], h, w).enumerate_pixels() {
        if px.0[0] == 1 {
            new_mask.put_pixel(x, y, *px);
        }
    }
    let diff = diff_against_history(&new_mask, &historical, &cfg).unwrap();
    let added: Vec<_> = diff.with_status(RoadStatus::Added).collect();
    let pass = n_lines == 1 && dist <= 2.0 && added.len() == 1;
    report(
        "vector pipeline",
        pass,
        &format!(
            "{n_lines} polyline(s), Hausdorff to centerline {dist:.2} px (<= 2); diff: {} added, {} unchanged, {} removed",
            added.len(),
            diff.with_status(RoadStatus::Unchanged).count(),
            diff.with_status(RoadStatus::Removed).count()
        ),
    );
}
