use serde::{Deserialize, Serialize};
use srunet_tensor::{Scalar, Tensor};

use crate::error::{Error, Result};
use crate::network::{ParamKind, ParamStore};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    /// Momentum SGD with L2 weight decay.
    #[default]
    Sgd,
    /// Adam with L2 weight decay folded into the gradient.
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerParams {
    pub kind: OptimizerKind,
    pub momentum: f64,
    pub weight_decay: f64,
    pub betas: (f64, f64),
    pub eps: f64,
}

/// Per-parameter optimizer buffers, indexed like the student store.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer<T: Scalar> {
    pub params: OptimizerParams,
    /// Momentum (SGD) or first moment (Adam).
    pub first: Vec<Option<Tensor<T>>>,
    /// Second moment (Adam only).
    pub second: Vec<Option<Tensor<T>>>,
    pub steps: u64,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(params: OptimizerParams, entries: usize) -> Self {
        Self {
            params,
            first: vec![None; entries],
            second: vec![None; entries],
            steps: 0,
        }
    }

    /// Updates trainable entries that received a gradient. A gradient for
    /// a buffer entry is an error.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &[Option<Tensor<T>>], lr: f64) -> Result<()> {
        if grads.len() != store.len() || self.first.len() != store.len() {
            return Err(Error::Shape(format!(
                "{} gradients and {} optimizer slots for {} parameters",
                grads.len(),
                self.first.len(),
                store.len()
            )));
        }
        self.steps += 1;
        let p = self.params;
        let lr = T::lit(lr);
        let wd = T::lit(p.weight_decay);
        for (id, g) in store.ids().collect::<Vec<_>>().into_iter().zip(grads) {
            let Some(g) = g else { continue };
            let i = id.index();
            if store.entry(id).kind != ParamKind::Trainable {
                return Err(Error::invalid(format!("gradient for buffer {}", store.entry(id).name)));
            }
            let w = store.get(id);
            let d = g.zip_map(w, |g, w| g + wd * w)?;
            match p.kind {
                OptimizerKind::Sgd => {
                    let mom = T::lit(p.momentum);
                    let buf = match self.first[i].take() {
                        Some(b) => b.zip_map(&d, |b, d| mom * b + d)?,
                        None => d,
                    };
                    let next = w.zip_map(&buf, |w, b| w - lr * b)?;
                    *store.get_mut(id) = next;
                    self.first[i] = Some(buf);
                }
                OptimizerKind::Adam => {
                    let (b1, b2) = (T::lit(p.betas.0), T::lit(p.betas.1));
                    let zeros = || Tensor::zeros(d.shape());
                    let m = self.first[i].take().unwrap_or_else(zeros).zip_map(&d, |m, d| b1 * m + (T::one() - b1) * d)?;
                    let v = self.second[i]
                        .take()
                        .unwrap_or_else(zeros)
                        .zip_map(&d, |v, d| b2 * v + (T::one() - b2) * d * d)?;
                    let t = self.steps as i32;
                    let c1 = T::one() - b1.powi(t);
                    let c2 = T::one() - b2.powi(t);
                    let eps = T::lit(p.eps);
                    let step = m.zip_map(&v, |m, v| (m / c1) / ((v / c2).sqrt() + eps))?;
                    let next = w.zip_map(&step, |w, s| w - lr * s)?;
                    *store.get_mut(id) = next;
                    self.first[i] = Some(m);
                    self.second[i] = Some(v);
                }
            }
        }
        Ok(())
    }
}
