use srunet_tensor::{ConvSpec, Scalar, Var};

use super::layers::{ConvNorm, NormKind};
use super::params::{Ctx, ParamBuilder};
use super::WidthPreset;
use crate::error::Result;

pub const MAP_FEATURES: usize = 64;

/// Four shallow strided convolutions taking the map raster to 1/16 scale
/// with 64 channels: three 7×7 and a final 3×3.
#[derive(Debug, Clone)]
pub struct MapEncoder {
    layers: Vec<ConvNorm>,
}

impl MapEncoder {
    pub fn new<T: Scalar>(b: &mut ParamBuilder<T>, preset: WidthPreset, norm: NormKind) -> Self {
        let widths = match preset {
            WidthPreset::Tiny => [8, 16, 32, MAP_FEATURES],
            WidthPreset::Full => [32, 64, 64, MAP_FEATURES],
        };
        b.scope("map_encoder", |b| {
            let mut cin = 3;
            let layers = widths
                .iter()
                .enumerate()
                .map(|(i, &w)| {
                    let (k, pad) = if i < 3 { (7, 3) } else { (3, 1) };
                    let l = ConvNorm::new(b, &format!("layer{i}"), cin, w, k, ConvSpec::new(2, pad, 1), norm, true);
                    cin = w;
                    l
                })
                .collect();
            MapEncoder { layers }
        })
    }

    pub fn forward<T: Scalar>(&self, ctx: &Ctx<'_, T>, map: &Var<T>) -> Result<Var<T>> {
        let mut x = map.clone();
        for l in &self.layers {
            x = l.forward(ctx, &x)?;
        }
        Ok(x)
    }
}
