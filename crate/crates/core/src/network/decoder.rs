use srunet_tensor::{ConvSpec, Scalar, Var};

use super::aspp::CONTEXT_CHANNELS;
use super::layers::{Conv, ConvNorm, NormKind};
use super::params::{Ctx, ParamBuilder};
use crate::error::Result;

pub const NUM_CLASSES: usize = 2;

/// Upsamples the context to the low-level scale, concatenates the projected
/// low-level feature and runs two parallel heads: the classifier and the
/// representation head.
#[derive(Debug, Clone)]
pub struct Decoder {
    low_proj: ConvNorm,
    cls_hidden: ConvNorm,
    cls_out: Conv,
    rep_hidden: ConvNorm,
    rep_out: Conv,
}

impl Decoder {
    pub fn new<T: Scalar>(
        b: &mut ParamBuilder<T>,
        low_channels: usize,
        low_proj: usize,
        head_width: usize,
        repr_channels: usize,
        norm: NormKind,
    ) -> Self {
        let cat = CONTEXT_CHANNELS + low_proj;
        b.scope("decoder", |b| Decoder {
            low_proj: ConvNorm::new(b, "low_proj", low_channels, low_proj, 1, ConvSpec::same(1), norm, true),
            cls_hidden: ConvNorm::new(b, "cls.hidden", cat, head_width, 3, ConvSpec::same(3), norm, true),
            cls_out: Conv::same(b, "cls.out", head_width, NUM_CLASSES, 1, true),
            rep_hidden: ConvNorm::new(b, "rep.hidden", cat, head_width, 3, ConvSpec::same(3), norm, true),
            rep_out: Conv::same(b, "rep.out", head_width, repr_channels, 1, true),
        })
    }

    /// Returns `(coarse_logits, representation)`, both at the scale of `x_low`.
    pub fn forward<T: Scalar>(&self, ctx: &Ctx<'_, T>, context: &Var<T>, x_low: &Var<T>) -> Result<(Var<T>, Var<T>)> {
        let (_, _, h, w) = x_low.value().dims4()?;
        let up = context.resize_bilinear(h, w)?;
        let low = self.low_proj.forward(ctx, x_low)?;
        let cat = Var::concat_channels(&[&up, &low])?;
        let coarse = self.cls_out.forward(ctx, &self.cls_hidden.forward(ctx, &cat)?)?;
        let rep = self.rep_out.forward(ctx, &self.rep_hidden.forward(ctx, &cat)?)?;
        Ok((coarse, rep))
    }
}
