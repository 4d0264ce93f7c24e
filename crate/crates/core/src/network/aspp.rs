use srunet_tensor::{ConvSpec, Scalar, Var};

use super::layers::{Conv, ConvNorm, NormKind};
use super::params::{Ctx, ParamBuilder};
use crate::error::Result;

pub const CONTEXT_CHANNELS: usize = 256;

/// Atrous spatial pyramid pooling: a 1×1 branch, three dilated 3×3
/// branches and an image-pooling branch, projected to 256 channels.
#[derive(Debug, Clone)]
pub struct Aspp {
    pointwise: ConvNorm,
    dilated: Vec<ConvNorm>,
    pool: Conv,
    project: ConvNorm,
}

impl Aspp {
    pub fn new<T: Scalar>(b: &mut ParamBuilder<T>, cin: usize, width: usize, rates: [usize; 3], norm: NormKind) -> Self {
        b.scope("aspp", |b| Aspp {
            pointwise: ConvNorm::new(b, "b0", cin, width, 1, ConvSpec::same(1), norm, true),
            dilated: rates
                .iter()
                .enumerate()
                .map(|(i, &r)| ConvNorm::new(b, &format!("b{}", i + 1), cin, width, 3, ConvSpec::new(1, r, r), norm, true))
                .collect(),
            pool: Conv::same(b, "pool", cin, width, 1, true),
            project: ConvNorm::new(b, "project", 5 * width, CONTEXT_CHANNELS, 1, ConvSpec::same(1), norm, true),
        })
    }

    /// The five branch outputs in order: 1×1, dilated ×3, pooled.
    pub fn branches<T: Scalar>(&self, ctx: &Ctx<'_, T>, x: &Var<T>) -> Result<Vec<Var<T>>> {
        let (_, _, h, w) = x.value().dims4()?;
        let mut out = vec![self.pointwise.forward(ctx, x)?];
        for d in &self.dilated {
            out.push(d.forward(ctx, x)?);
        }
        let pooled = self.pool.forward(ctx, &x.global_avg_pool()?)?.relu();
        out.push(pooled.resize_bilinear(h, w)?);
        Ok(out)
    }

    pub fn forward<T: Scalar>(&self, ctx: &Ctx<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        let br = self.branches(ctx, x)?;
        let refs: Vec<&Var<T>> = br.iter().collect();
        self.project.forward(ctx, &Var::concat_channels(&refs)?)
    }

    #[cfg(test)]
    pub(crate) fn dilated(&self) -> &[ConvNorm] {
        &self.dilated
    }
}
