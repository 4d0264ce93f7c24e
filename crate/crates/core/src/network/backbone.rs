use srunet_tensor::{ConvSpec, Scalar, Var};

use super::layers::{ConvNorm, NormKind};
use super::params::{Ctx, ParamBuilder};
use super::WidthPreset;
use crate::error::Result;

/// Residual block: either two 3×3 convolutions (basic) or 1×1-3×3-1×1
/// (bottleneck), with a projected shortcut when the shape changes.
#[derive(Debug, Clone)]
struct Block {
    convs: Vec<ConvNorm>,
    shortcut: Option<ConvNorm>,
}

impl Block {
    #[allow(clippy::too_many_arguments)]
    fn basic<T: Scalar>(b: &mut ParamBuilder<T>, name: &str, cin: usize, cout: usize, stride: usize, dilation: usize, norm: NormKind) -> Self {
        b.scope(name, |b| Block {
            convs: vec![
                ConvNorm::new(b, "conv1", cin, cout, 3, ConvSpec::new(stride, dilation, dilation), norm, true),
                ConvNorm::new(b, "conv2", cout, cout, 3, ConvSpec::new(1, dilation, dilation), norm, false),
            ],
            shortcut: (stride != 1 || cin != cout)
                .then(|| ConvNorm::new(b, "down", cin, cout, 1, ConvSpec::new(stride, 0, 1), norm, false)),
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn bottleneck<T: Scalar>(
        b: &mut ParamBuilder<T>,
        name: &str,
        cin: usize,
        mid: usize,
        stride: usize,
        dilation: usize,
        norm: NormKind,
    ) -> Self {
        let cout = mid * 4;
        b.scope(name, |b| Block {
            convs: vec![
                ConvNorm::new(b, "conv1", cin, mid, 1, ConvSpec::new(1, 0, 1), norm, true),
                ConvNorm::new(b, "conv2", mid, mid, 3, ConvSpec::new(stride, dilation, dilation), norm, true),
                ConvNorm::new(b, "conv3", mid, cout, 1, ConvSpec::new(1, 0, 1), norm, false),
            ],
            shortcut: (stride != 1 || cin != cout)
                .then(|| ConvNorm::new(b, "down", cin, cout, 1, ConvSpec::new(stride, 0, 1), norm, false)),
        })
    }

    fn forward<T: Scalar>(&self, ctx: &Ctx<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        let mut y = x.clone();
        for c in &self.convs {
            y = c.forward(ctx, &y)?;
        }
        let skip = match &self.shortcut {
            Some(s) => s.forward(ctx, x)?,
            None => x.clone(),
        };
        Ok(y.add(&skip)?.relu())
    }
}

/// Image encoder: stem to 1/4, then four residual stages at 1/4, 1/8,
/// 1/16 and 1/16 (the last dilated instead of strided).
#[derive(Debug, Clone)]
pub struct Backbone {
    stem: ConvNorm,
    stages: [Vec<Block>; 4],
    widths: [usize; 4],
}

impl Backbone {
    pub fn new<T: Scalar>(b: &mut ParamBuilder<T>, preset: WidthPreset, norm: NormKind) -> Self {
        b.scope("backbone", |b| match preset {
            WidthPreset::Tiny => {
                let w = [16, 32, 64, 64];
                let stem = ConvNorm::new(b, "stem", 3, 16, 3, ConvSpec::new(2, 1, 1), norm, true);
                let stages = [
                    vec![Block::basic(b, "layer1.0", 16, w[0], 1, 1, norm)],
                    vec![Block::basic(b, "layer2.0", w[0], w[1], 2, 1, norm)],
                    vec![Block::basic(b, "layer3.0", w[1], w[2], 2, 1, norm)],
                    vec![Block::basic(b, "layer4.0", w[2], w[3], 1, 2, norm)],
                ];
                Backbone { stem, stages, widths: w }
            }
            WidthPreset::Full => {
                let stem = ConvNorm::new(b, "stem", 3, 64, 7, ConvSpec::new(2, 3, 1), norm, true);
                let layout = [(3, 64, 1, 1), (4, 128, 2, 1), (23, 256, 2, 1), (3, 512, 1, 2)];
                let mut cin = 64;
                let mut stages: [Vec<Block>; 4] = Default::default();
                for (s, &(count, mid, stride, dilation)) in layout.iter().enumerate() {
                    for i in 0..count {
                        let name = format!("layer{}.{i}", s + 1);
                        let st = if i == 0 { stride } else { 1 };
                        stages[s].push(Block::bottleneck(b, &name, cin, mid, st, dilation, norm));
                        cin = mid * 4;
                    }
                }
                Backbone {
                    stem,
                    stages,
                    widths: [256, 512, 1024, 2048],
                }
            }
        })
    }

    pub fn widths(&self) -> [usize; 4] {
        self.widths
    }

    /// Stem plus stage 1: `x_e¹` at 1/4 scale.
    pub fn stage1<T: Scalar>(&self, ctx: &Ctx<'_, T>, image: &Var<T>) -> Result<Var<T>> {
        let x = self.stem.forward(ctx, image)?.max_pool2d(3, 2, 1)?;
        self.run(ctx, 0, x)
    }

    /// Stages 2..4 from a (possibly enhanced) stage-1 feature.
    pub fn stages234<T: Scalar>(&self, ctx: &Ctx<'_, T>, x1: &Var<T>) -> Result<[Var<T>; 3]> {
        let x2 = self.run(ctx, 1, x1.clone())?;
        let x3 = self.run(ctx, 2, x2.clone())?;
        let x4 = self.run(ctx, 3, x3.clone())?;
        Ok([x2, x3, x4])
    }

    /// All four stage outputs without any stage-1 enhancement.
    pub fn encode<T: Scalar>(&self, ctx: &Ctx<'_, T>, image: &Var<T>) -> Result<[Var<T>; 4]> {
        let x1 = self.stage1(ctx, image)?;
        let [x2, x3, x4] = self.stages234(ctx, &x1)?;
        Ok([x1, x2, x3, x4])
    }

    fn run<T: Scalar>(&self, ctx: &Ctx<'_, T>, stage: usize, mut x: Var<T>) -> Result<Var<T>> {
        for blk in &self.stages[stage] {
            x = blk.forward(ctx, &x)?;
        }
        Ok(x)
    }
}
