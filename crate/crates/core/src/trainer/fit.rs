use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use serde_json::json;
use srunet_tensor::Scalar;

use super::{lr_schedule, train_step, ModelState, TrainConfig};
use crate::dataio::{rgb_batch, DatasetSplit, Sample};
use crate::error::{Error, Result};
use crate::infer::{binarize, ProbabilityRaster};
use crate::metrics::{confusion_images, scores, ConfusionCounts};
use crate::network::{Checkpoint, ParamStore, Srunet};
use crate::seed;

pub const METRICS_LOG: &str = "metrics.ndjson";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const LAST_CHECKPOINT: &str = "last.ckpt";

/// One line of the metrics log; losses are epoch means.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss_sup: f64,
    pub loss_unsup: f64,
    pub loss_ctr: f64,
    pub val_iou: f64,
    /// Learning rate of the epoch's last step.
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_iou: f64,
}

/// Confusion counts of one weight set over labeled samples, `batch` tiles
/// per forward.
pub fn evaluate<T: Scalar>(
    net: &Srunet,
    store: &ParamStore<T>,
    samples: &[Sample],
    threshold: f64,
    batch: usize,
) -> Result<ConfusionCounts> {
    let mut total = ConfusionCounts::default();
    for chunk in samples.chunks(batch.max(1)) {
        let images: Vec<_> = chunk.iter().map(|s| &s.image).collect();
        let maps: Vec<_> = chunk.iter().map(|s| &s.map).collect();
        let prob = net.predict(store, &rgb_batch(&images)?, &rgb_batch(&maps)?)?;
        for (k, s) in chunk.iter().enumerate() {
            let label = s
                .label
                .as_ref()
                .ok_or_else(|| Error::invalid(format!("{} has no label to evaluate against", s.tile_id)))?;
            let raster = ProbabilityRaster {
                height: s.height(),
                width: s.width(),
                data: prob.plane(k, 0).iter().map(|p| p.to_f64_lossy()).collect(),
            };
            total += confusion_images(&binarize(&raster, threshold), label)?;
        }
    }
    Ok(total)
}

/// Cycles through a pool in per-pass shuffled order.
struct Cycler {
    len: usize,
    order: Vec<usize>,
    pos: usize,
    pass: u64,
    seed: u64,
}

impl Cycler {
    fn new(len: usize, seed: u64) -> Self {
        Self {
            len,
            order: Vec::new(),
            pos: 0,
            pass: 0,
            seed,
        }
    }

    fn next(&mut self) -> usize {
        if self.pos == self.order.len() {
            self.order = (0..self.len).collect();
            self.order.shuffle(&mut seed::rng(seed::derive(&[self.seed, self.pass])));
            self.pass += 1;
            self.pos = 0;
        }
        self.pos += 1;
        self.order[self.pos - 1]
    }

    fn take(&mut self, pool: &[Sample], n: usize) -> Vec<Sample> {
        if self.len == 0 {
            return Vec::new();
        }
        (0..n.min(self.len)).map(|_| pool[self.next()].clone()).collect()
    }
}

/// Trains for `cfg.epochs`, scoring the teacher on `val` after every epoch.
///
/// With `out_dir`, writes the metrics log, the best-IoU checkpoint and the
/// final checkpoint there. `on_epoch` sees each record as it is produced.
pub fn fit<T: Scalar>(
    net: &Srunet,
    state: &mut ModelState<T>,
    split: &DatasetSplit,
    val: &[Sample],
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<FitReport> {
    cfg.validate()?;
    if val.is_empty() {
        return Err(Error::invalid("validation set is empty"));
    }
    if split.labeled.is_empty() {
        return Err(Error::invalid("no labeled training tiles"));
    }
    let steps_per_epoch = cfg
        .steps_per_epoch
        .unwrap_or_else(|| split.labeled.len().div_ceil(cfg.batch_labeled));
    let total_steps = state.step + (cfg.epochs * steps_per_epoch) as u64;
    let mut log = match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join(METRICS_LOG);
            Some(BufWriter::new(File::create(&path).map_err(|e| Error::io(&path, e))?))
        }
        None => None,
    };
    let mut lab = Cycler::new(split.labeled.len(), seed::derive(&[cfg.seed, 0x1AB]));
    let mut unl = Cycler::new(split.unlabeled.len(), seed::derive(&[cfg.seed, 0x0A1]));
    let mut report = FitReport {
        history: Vec::new(),
        best_epoch: 0,
        best_iou: f64::NEG_INFINITY,
    };
    let start = state.epoch as usize;
    for epoch in start..start + cfg.epochs {
        let mut sums = [0.0; 3];
        let mut lr = 0.0;
        for _ in 0..steps_per_epoch {
            lr = lr_schedule(state.step, total_steps, cfg)?;
            let l = lab.take(&split.labeled, cfg.batch_labeled);
            let u = unl.take(&split.unlabeled, cfg.batch_unlabeled);
            let b = train_step(net, state, &l, &u, cfg, total_steps)?;
            sums[0] += b.sup;
            sums[1] += b.unsup;
            sums[2] += b.ctr;
        }
        state.epoch += 1;
        let counts = evaluate(net, &state.teacher, val, cfg.eval_threshold, cfg.batch_labeled.max(1))?;
        let k = steps_per_epoch as f64;
        let rec = EpochRecord {
            epoch,
            loss_sup: sums[0] / k,
            loss_unsup: sums[1] / k,
            loss_ctr: sums[2] / k,
            val_iou: scores(&counts).iou,
            lr,
        };
        on_epoch(&rec);
        if let Some(w) = log.as_mut() {
            let path = out_dir.expect("log implies dir").join(METRICS_LOG);
            serde_json::to_writer(&mut *w, &rec)?;
            writeln!(w).and_then(|_| w.flush()).map_err(|e| Error::io(&path, e))?;
        }
        if rec.val_iou > report.best_iou {
            report.best_iou = rec.val_iou;
            report.best_epoch = epoch;
            if let Some(dir) = out_dir {
                let meta = json!({ "val_iou": rec.val_iou, "epoch": epoch });
                state.to_checkpoint(net.config(), cfg, meta)?.save(&dir.join(BEST_CHECKPOINT))?;
            }
        }
        report.history.push(rec);
    }
    if let Some(dir) = out_dir {
        let meta = json!({ "best_val_iou": report.best_iou, "best_epoch": report.best_epoch });
        state.to_checkpoint(net.config(), cfg, meta)?.save(&dir.join(LAST_CHECKPOINT))?;
    }
    Ok(report)
}

/// Network and teacher weights from a checkpoint file.
pub fn load_teacher<T: Scalar>(path: &Path) -> Result<(Srunet, ParamStore<T>)> {
    let ckpt = Checkpoint::<T>::load(path)?;
    let (net, state, _) = ModelState::from_checkpoint(&ckpt)?;
    Ok((net, state.teacher))
}
