use serde::{Deserialize, Serialize};
use srunet_tensor::{ConvSpec, Scalar, Var};

use super::params::{BnUpdate, Ctx, ParamBuilder, ParamId, ParamKind};
use crate::error::Result;

const NORM_EPS: f64 = 1e-5;

/// Normalization flavour used throughout the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    #[default]
    Batch,
    /// Batch-size independent; for single-sample batches.
    Group,
}

#[derive(Debug, Clone)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub spec: ConvSpec,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        b: &mut ParamBuilder<T>,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        spec: ConvSpec,
        bias: bool,
    ) -> Self {
        b.scope(name, |b| Conv {
            weight: b.kaiming("weight", &[cout, cin, kernel, kernel]),
            bias: bias.then(|| b.constant("bias", &[cout], 0.0, ParamKind::Trainable)),
            spec,
        })
    }

    /// Stride-1 "same" convolution.
    pub fn same<T: Scalar>(b: &mut ParamBuilder<T>, name: &str, cin: usize, cout: usize, kernel: usize, bias: bool) -> Self {
        Self::new(b, name, cin, cout, kernel, ConvSpec::same(kernel), bias)
    }

    pub fn forward<T: Scalar>(&self, ctx: &Ctx<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        let w = ctx.param(self.weight);
        let bias = self.bias.map(|b| ctx.param(b));
        Ok(x.conv2d(&w, bias.as_ref(), self.spec)?)
    }
}

/// Transposed convolution, `Ci×Co×k×k` weights.
#[derive(Debug, Clone)]
pub struct Deconv {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub spec: ConvSpec,
}

impl Deconv {
    pub fn new<T: Scalar>(b: &mut ParamBuilder<T>, name: &str, cin: usize, cout: usize, kernel: usize, stride: usize) -> Self {
        b.scope(name, |b| Deconv {
            weight: b.kaiming("weight", &[cin, cout, kernel, kernel]),
            bias: None,
            spec: ConvSpec::new(stride, 0, 1),
        })
    }

    pub fn forward<T: Scalar>(&self, ctx: &Ctx<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        let w = ctx.param(self.weight);
        let bias = self.bias.map(|b| ctx.param(b));
        Ok(x.conv_transpose2d(&w, bias.as_ref(), self.spec)?)
    }
}

#[derive(Debug, Clone)]
pub struct Norm {
    kind: NormKind,
    channels: usize,
    gamma: ParamId,
    beta: ParamId,
    running_mean: Option<ParamId>,
    running_var: Option<ParamId>,
}

/// Largest divisor of `c` not above 32.
fn group_count(c: usize) -> usize {
    (1..=c.min(32)).rev().find(|g| c % g == 0).unwrap_or(1)
}

impl Norm {
    pub fn new<T: Scalar>(b: &mut ParamBuilder<T>, name: &str, channels: usize, kind: NormKind) -> Self {
        b.scope(name, |b| {
            let gamma = b.constant("gamma", &[channels], 1.0, ParamKind::Trainable);
            let beta = b.constant("beta", &[channels], 0.0, ParamKind::Trainable);
            let (running_mean, running_var) = match kind {
                NormKind::Batch => (
                    Some(b.constant("running_mean", &[channels], 0.0, ParamKind::Buffer)),
                    Some(b.constant("running_var", &[channels], 1.0, ParamKind::Buffer)),
                ),
                NormKind::Group => (None, None),
            };
            Norm {
                kind,
                channels,
                gamma,
                beta,
                running_mean,
                running_var,
            }
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn gamma(&self) -> ParamId {
        self.gamma
    }

    pub fn forward<T: Scalar>(&self, ctx: &Ctx<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        let gamma = ctx.param(self.gamma);
        let beta = ctx.param(self.beta);
        let eps = T::lit(NORM_EPS);
        match (self.kind, self.running_mean, self.running_var) {
            (NormKind::Batch, Some(rm), Some(rv)) => {
                if ctx.train {
                    let (y, stats) = x.batch_norm_train(&gamma, &beta, eps)?;
                    ctx.record_bn(BnUpdate { mean: rm, var: rv, stats });
                    Ok(y)
                } else {
                    let store = ctx.store();
                    Ok(x.batch_norm_eval(&gamma, &beta, store.get(rm).data(), store.get(rv).data(), eps)?)
                }
            }
            _ => Ok(x.group_norm(group_count(self.channels), &gamma, &beta, eps)?),
        }
    }
}

/// Convolution without bias, normalization, optional ReLU.
#[derive(Debug, Clone)]
pub struct ConvNorm {
    pub conv: Conv,
    pub norm: Norm,
    pub relu: bool,
}

impl ConvNorm {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        b: &mut ParamBuilder<T>,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        spec: ConvSpec,
        norm: NormKind,
        relu: bool,
    ) -> Self {
        b.scope(name, |b| ConvNorm {
            conv: Conv::new(b, "conv", cin, cout, kernel, spec, false),
            norm: Norm::new(b, "norm", cout, norm),
            relu,
        })
    }

    pub fn forward<T: Scalar>(&self, ctx: &Ctx<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        let y = self.norm.forward(ctx, &self.conv.forward(ctx, x)?)?;
        Ok(if self.relu { y.relu() } else { y })
    }
}
