use srunet_tensor::{ConvSpec, Scalar, Var};

use super::layers::{Conv, Norm, NormKind};
use super::params::{Ctx, ParamBuilder};
use crate::error::{Error, Result};

pub const MIX_KERNELS: [usize; 3] = [3, 5, 7];

/// Splits `n` into three near-equal contiguous parts, larger ones first.
fn thirds(n: usize) -> [usize; 3] {
    let (q, r) = (n / 3, n % 3);
    [q + (r > 0) as usize, q + (r > 1) as usize, q]
}

/// Mixed-kernel grouped convolution: channel group `g` of the input maps to
/// channel group `g` of the output through a `MIX_KERNELS[g]` convolution.
/// The input is given as two tensors, each split into thirds, so every
/// group sees part of both.
#[derive(Debug, Clone)]
pub struct MixConv {
    convs: Vec<Conv>,
    splits: [[usize; 3]; 2],
}

impl MixConv {
    pub fn new<T: Scalar>(b: &mut ParamBuilder<T>, name: &str, cin_a: usize, cin_b: usize, cout: usize) -> Self {
        let (sa, sb, so) = (thirds(cin_a), thirds(cin_b), thirds(cout));
        b.scope(name, |b| MixConv {
            convs: (0..3)
                .map(|g| Conv::same(b, &format!("k{}", MIX_KERNELS[g]), sa[g] + sb[g], so[g], MIX_KERNELS[g], true))
                .collect(),
            splits: [sa, sb],
        })
    }

    pub fn convs(&self) -> &[Conv] {
        &self.convs
    }

    pub fn forward<T: Scalar>(&self, ctx: &Ctx<'_, T>, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        let mut outs = Vec::with_capacity(3);
        let (mut oa, mut ob) = (0, 0);
        for (g, conv) in self.convs.iter().enumerate() {
            let (la, lb) = (self.splits[0][g], self.splits[1][g]);
            let mut parts = Vec::with_capacity(2);
            if la > 0 {
                parts.push(a.narrow_channels(oa, la)?);
            }
            if lb > 0 {
                parts.push(b.narrow_channels(ob, lb)?);
            }
            oa += la;
            ob += lb;
            let refs: Vec<&Var<T>> = parts.iter().collect();
            outs.push(conv.forward(ctx, &Var::concat_channels(&refs)?)?);
        }
        let refs: Vec<&Var<T>> = outs.iter().collect();
        Ok(Var::concat_channels(&refs)?)
    }
}

/// Boundary enhancement: encodes the edge map to 1/4 scale and fuses it
/// into the stage-1 feature with a mixed-kernel convolution, a norm, a
/// residual connection to the feature, and a ReLU.
#[derive(Debug, Clone)]
pub struct Bem {
    encoder: [Conv; 3],
    mix: MixConv,
    norm: Norm,
}

impl Bem {
    pub fn new<T: Scalar>(b: &mut ParamBuilder<T>, channels: usize, edge_width: usize, norm: NormKind) -> Self {
        b.scope("bem", |b| Bem {
            encoder: [
                Conv::new(b, "enc1", 1, edge_width, 3, ConvSpec::new(2, 1, 1), true),
                Conv::new(b, "enc2", edge_width, edge_width, 3, ConvSpec::new(2, 1, 1), true),
                Conv::new(b, "enc3", edge_width, edge_width, 3, ConvSpec::new(1, 1, 1), true),
            ],
            mix: MixConv::new(b, "mix", channels, edge_width, channels),
            norm: Norm::new(b, "norm", channels, norm),
        })
    }

    pub fn mix(&self) -> &MixConv {
        &self.mix
    }

    /// Edge map `N×1×H×W` to features `N×E×H/4×W/4`.
    pub fn encode_edges<T: Scalar>(&self, ctx: &Ctx<'_, T>, edges: &Var<T>) -> Result<Var<T>> {
        let mut e = edges.clone();
        for c in &self.encoder {
            e = c.forward(ctx, &e)?.relu();
        }
        Ok(e)
    }

    pub fn forward<T: Scalar>(&self, ctx: &Ctx<'_, T>, x1: &Var<T>, edges: &Var<T>) -> Result<Var<T>> {
        let e = self.encode_edges(ctx, edges)?;
        if e.shape()[2..] != x1.shape()[2..] {
            return Err(Error::Shape(format!(
                "edge features {:?} vs stage-1 features {:?}",
                e.shape(),
                x1.shape()
            )));
        }
        let fused = self.norm.forward(ctx, &self.mix.forward(ctx, x1, &e)?)?;
        Ok(fused.add(x1)?.relu())
    }
}
