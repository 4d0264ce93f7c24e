//! Mean-teacher training: pseudo-labelling, loss evaluation, student
//! optimization, EMA teacher update, schedule and checkpoint selection.

mod fit;
mod optim;
mod step;


pub use fit::{evaluate, fit, load_teacher, EpochRecord, FitReport, BEST_CHECKPOINT, LAST_CHECKPOINT, METRICS_LOG};
pub use optim::{Optimizer, OptimizerKind, OptimizerParams};
pub use step::train_step;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use srunet_tensor::Scalar;

use crate::error::{Error, Result};
use crate::network::{Checkpoint, NetworkConfig, ParamKind, ParamStore, Srunet};
use crate::objectives::{LossWeights, ReCoConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr0: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub ema_decay: f64,
    pub poly_power: f64,
    pub batch_labeled: usize,
    pub batch_unlabeled: usize,
    /// Optimizer steps per epoch; by default one pass over the labeled pool.
    pub steps_per_epoch: Option<usize>,
    /// Teacher confidence above which a pseudo-label is used.
    pub confidence_threshold: f64,
    #[serde(flatten)]
    pub weights: LossWeights,
    #[serde(flatten)]
    pub reco: ReCoConfig,
    /// Sample contrast terms from unlabeled pixels too, with pseudo-labels.
    pub reco_pool_unlabeled: bool,
    pub optimizer: OptimizerKind,
    pub adam_betas: (f64, f64),
    pub adam_eps: f64,
    /// Batch-norm running statistics momentum.
    pub bn_momentum: f64,
    /// Road probability threshold used for validation IoU.
    pub eval_threshold: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 1e-3,
            momentum: 0.9,
            weight_decay: 5e-4,
            epochs: 40,
            ema_decay: 0.99,
            poly_power: 0.9,
            batch_labeled: 2,
            batch_unlabeled: 2,
            steps_per_epoch: None,
            confidence_threshold: 0.95,
            weights: LossWeights::default(),
            reco: ReCoConfig::default(),
            reco_pool_unlabeled: true,
            optimizer: OptimizerKind::Sgd,
            adam_betas: (0.9, 0.999),
            adam_eps: 1e-8,
            bn_momentum: 0.1,
            eval_threshold: 0.5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0) {
            return Err(Error::invalid(format!("lr0 {} must be > 0", self.lr0)));
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return Err(Error::invalid(format!("ema_decay {} outside [0, 1)", self.ema_decay)));
        }
        if self.batch_labeled == 0 {
            return Err(Error::invalid("batch_labeled must be >= 1"));
        }
        if self.epochs == 0 || self.steps_per_epoch == Some(0) {
            return Err(Error::invalid("training needs at least one step"));
        }
        self.reco.validate()
    }

    pub fn optimizer_params(&self) -> OptimizerParams {
        OptimizerParams {
            kind: self.optimizer,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            betas: self.adam_betas,
            eps: self.adam_eps,
        }
    }
}

/// Polynomial decay `lr0·(1 − step/total)^power`.
pub fn lr_schedule(step: u64, total_steps: u64, cfg: &TrainConfig) -> Result<f64> {
    if total_steps == 0 {
        return Err(Error::invalid("total_steps must be > 0"));
    }
    if step > total_steps {
        return Err(Error::invalid(format!("step {step} beyond total {total_steps}")));
    }
    Ok(cfg.lr0 * (1.0 - step as f64 / total_steps as f64).powf(cfg.poly_power))
}

/// `teacher = decay·teacher + (1 − decay)·student` on every trainable entry.
/// Running statistics are left alone; see [`sync_buffers`].
pub fn ema_update<T: Scalar>(teacher: &mut ParamStore<T>, student: &ParamStore<T>, decay: f64) -> Result<()> {
    teacher.check_congruent(student)?;
    let d = T::lit(decay);
    let rest = T::one() - d;
    for id in student.trainable_ids() {
        let s = student.get(id).data();
        for (t, &s) in teacher.get_mut(id).data_mut().iter_mut().zip(s) {
            *t = d * *t + rest * s;
        }
    }
    Ok(())
}

/// Copies the student's batch-norm running statistics into the teacher.
///
/// Averaging them instead keeps a `decay^step` share of the initial unit
/// variance, which in short runs dwarfs the learned variances and flattens
/// the teacher's output.
pub fn sync_buffers<T: Scalar>(teacher: &mut ParamStore<T>, student: &ParamStore<T>) -> Result<()> {
    teacher.check_congruent(student)?;
    for id in student.ids() {
        if student.entry(id).kind == ParamKind::Buffer {
            *teacher.get_mut(id) = student.get(id).clone();
        }
    }
    Ok(())
}

/// Everything that changes during training.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState<T: Scalar> {
    pub student: ParamStore<T>,
    /// Only ever written by [`ema_update`] and [`sync_buffers`].
    pub teacher: ParamStore<T>,
    pub optimizer: Optimizer<T>,
    pub step: u64,
    pub epoch: u64,
}

const STUDENT: &str = "student/";
const TEACHER: &str = "teacher/";
const FIRST: &str = "optim/first/";
const SECOND: &str = "optim/second/";

impl<T: Scalar> ModelState<T> {
    /// Teacher starts as a copy of the student.
    pub fn new(student: ParamStore<T>, cfg: &TrainConfig) -> Self {
        let optimizer = Optimizer::new(cfg.optimizer_params(), student.len());
        Self {
            teacher: student.clone(),
            student,
            optimizer,
            step: 0,
            epoch: 0,
        }
    }

    pub fn to_checkpoint(&self, net: &NetworkConfig, train: &TrainConfig, meta: Value) -> Result<Checkpoint<T>> {
        let mut tensors = Vec::new();
        for (prefix, store) in [(STUDENT, &self.student), (TEACHER, &self.teacher)] {
            tensors.extend(store.entries().iter().map(|e| (format!("{prefix}{}", e.name), e.value.clone())));
        }
        for (prefix, slots) in [(FIRST, &self.optimizer.first), (SECOND, &self.optimizer.second)] {
            for (e, slot) in self.student.entries().iter().zip(slots) {
                if let Some(t) = slot {
                    tensors.push((format!("{prefix}{}", e.name), t.clone()));
                }
            }
        }
        let mut meta = meta;
        if let Value::Object(m) = &mut meta {
            m.insert("optimizer_steps".into(), json!(self.optimizer.steps));
        }
        Ok(Checkpoint {
            config: json!({ "network": net, "train": train }),
            step: self.step,
            epoch: self.epoch,
            meta,
            tensors,
        })
    }

    /// Rebuilds the network, state and training configuration.
    pub fn from_checkpoint(ckpt: &Checkpoint<T>) -> Result<(Srunet, Self, TrainConfig)> {
        let (net_cfg, train): (NetworkConfig, TrainConfig) = configs(ckpt)?;
        let (net, mut student) = Srunet::new::<T>(net_cfg, 0)?;
        let mut teacher = student.clone();
        let take = |prefix: &str| {
            let prefix = prefix.to_string();
            move |name: &str| ckpt.get(&format!("{prefix}{name}")).cloned()
        };
        student.load_named(take(STUDENT))?;
        teacher.load_named(take(TEACHER))?;
        let mut optimizer = Optimizer::new(train.optimizer_params(), student.len());
        for (i, e) in student.entries().iter().enumerate() {
            optimizer.first[i] = ckpt.get(&format!("{FIRST}{}", e.name)).cloned();
            optimizer.second[i] = ckpt.get(&format!("{SECOND}{}", e.name)).cloned();
        }
        optimizer.steps = ckpt.meta.get("optimizer_steps").and_then(Value::as_u64).unwrap_or(ckpt.step);
        let state = ModelState {
            student,
            teacher,
            optimizer,
            step: ckpt.step,
            epoch: ckpt.epoch,
        };
        Ok((net, state, train))
    }
}

fn configs<T: Scalar>(ckpt: &Checkpoint<T>) -> Result<(NetworkConfig, TrainConfig)> {
    let part = |k: &str| {
        ckpt.config
            .get(k)
            .cloned()
            .ok_or_else(|| Error::Checkpoint(format!("config has no `{k}` section")))
    };
    Ok((serde_json::from_value(part("network")?)?, serde_json::from_value(part("train")?)?))
}
