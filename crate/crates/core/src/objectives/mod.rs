//! Training losses: supervised BCE, confidence-masked BCE on pseudo-labels,
//! and the regional pixel contrast loss with hard-query sampling.

mod bce;
mod reco;

pub use bce::{loss_sup, loss_unsup, pseudo_label, ConfidenceMask, BCE_CLAMP};
pub use reco::{downsample_nearest, loss_reco, reco_query_loss, sample_reco, ClassTerms, ReCoConfig, RecoSample, RecoSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Weights of the unsupervised and contrastive terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub alpha_unsup: f64,
    pub alpha_ctr: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha_unsup: 0.7,
            alpha_ctr: 0.2,
        }
    }
}

/// Scalar values of one step's losses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBundle {
    pub sup: f64,
    pub unsup: f64,
    pub ctr: f64,
    pub total: f64,
    pub alpha_unsup: f64,
    pub alpha_ctr: f64,
}

/// `total = sup + alpha_unsup·unsup + alpha_ctr·ctr`.
pub fn combine(sup: f64, unsup: f64, ctr: f64, w: LossWeights) -> Result<LossBundle> {
    for (name, v) in [("sup", sup), ("unsup", unsup), ("ctr", ctr)] {
        if !v.is_finite() {
            return Err(Error::NonFinite(name));
        }
    }
    Ok(LossBundle {
        sup,
        unsup,
        ctr,
        total: sup + w.alpha_unsup * unsup + w.alpha_ctr * ctr,
        alpha_unsup: w.alpha_unsup,
        alpha_ctr: w.alpha_ctr,
    })
}
