use srunet_tensor::{ConvSpec, Scalar, Var};

use super::decoder::NUM_CLASSES;
use super::layers::{Conv, ConvNorm, Deconv, Norm, NormKind};
use super::params::{Ctx, ParamBuilder, ParamKind};
use crate::error::{Error, Result};

pub const RRM_WIDTH: usize = 64;

/// Small U-shaped residual head: two conv + pool stages, two deconvolution
/// stages with skip connections, and a 1×1 output added to the input.
#[derive(Debug, Clone)]
pub struct Refine {
    enc: [ConvNorm; 2],
    dec: [(Deconv, Norm); 2],
    out: Conv,
}

impl Refine {
    pub fn new<T: Scalar>(b: &mut ParamBuilder<T>, norm: NormKind, zero_init: bool) -> Self {
        b.scope("refine", |b| {
            let w = RRM_WIDTH;
            let enc = [
                ConvNorm::new(b, "enc1", NUM_CLASSES, w, 3, ConvSpec::same(3), norm, true),
                ConvNorm::new(b, "enc2", w, w, 3, ConvSpec::same(3), norm, true),
            ];
            let dec = [
                (Deconv::new(b, "dec1.deconv", w, w, 2, 2), Norm::new(b, "dec1.norm", w, norm)),
                (Deconv::new(b, "dec2.deconv", w, w, 2, 2), Norm::new(b, "dec2.norm", w, norm)),
            ];
            let out = if zero_init {
                b.scope("out", |b| Conv {
                    weight: b.constant("weight", &[NUM_CLASSES, w, 1, 1], 0.0, ParamKind::Trainable),
                    bias: Some(b.constant("bias", &[NUM_CLASSES], 0.0, ParamKind::Trainable)),
                    spec: ConvSpec::same(1),
                })
            } else {
                Conv::same(b, "out", w, NUM_CLASSES, 1, true)
            };
            Refine { enc, dec, out }
        })
    }

    pub fn out_layer(&self) -> &Conv {
        &self.out
    }

    /// The additive residual.
    pub fn residual<T: Scalar>(&self, ctx: &Ctx<'_, T>, coarse: &Var<T>) -> Result<Var<T>> {
        let (_, _, h, w) = coarse.value().dims4()?;
        if h % 4 != 0 || w % 4 != 0 {
            return Err(Error::Shape(format!("refinement input {h}x{w} not divisible by 4")));
        }
        let e1 = self.enc[0].forward(ctx, coarse)?;
        let e2 = self.enc[1].forward(ctx, &e1.max_pool2d(2, 2, 0)?)?;
        let bottom = e2.max_pool2d(2, 2, 0)?;
        let (dc1, n1) = &self.dec[0];
        let d1 = n1.forward(ctx, &dc1.forward(ctx, &bottom)?)?.relu().add(&e2)?;
        let (dc2, n2) = &self.dec[1];
        let d2 = n2.forward(ctx, &dc2.forward(ctx, &d1)?)?.relu().add(&e1)?;
        self.out.forward(ctx, &d2)
    }

    pub fn forward<T: Scalar>(&self, ctx: &Ctx<'_, T>, coarse: &Var<T>) -> Result<Var<T>> {
        Ok(coarse.add(&self.residual(ctx, coarse)?)?)
    }
}
