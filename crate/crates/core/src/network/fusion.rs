use srunet_tensor::{ConvSpec, Scalar, Var};

use super::layers::Conv;
use super::params::{Ctx, ParamBuilder};
use crate::error::{Error, Result};

/// Spatial attention from the map feature, then channel attention on the
/// attended image feature.
#[derive(Debug, Clone)]
pub struct AttentionFusion {
    spatial: Conv,
    mlp: [Conv; 2],
}

impl AttentionFusion {
    pub fn new<T: Scalar>(b: &mut ParamBuilder<T>, channels: usize, reduction: usize) -> Self {
        let hidden = (channels / reduction).max(1);
        b.scope("fusion", |b| AttentionFusion {
            spatial: Conv::new(b, "spatial", 2, 1, 7, ConvSpec::same(7), true),
            mlp: [
                Conv::same(b, "mlp1", channels, hidden, 1, true),
                Conv::same(b, "mlp2", hidden, channels, 1, true),
            ],
        })
    }

    /// `N×1×h×w` weights in `(0, 1)` from `[channel-mean; channel-max]`.
    pub fn spatial_weights<T: Scalar>(&self, ctx: &Ctx<'_, T>, map_feat: &Var<T>) -> Result<Var<T>> {
        let pooled = Var::concat_channels(&[&map_feat.channel_mean()?, &map_feat.channel_max()?])?;
        Ok(self.spatial.forward(ctx, &pooled)?.sigmoid())
    }

    /// `N×C×1×1` weights `sigmoid(mlp(avg) + mlp(max))`.
    pub fn channel_weights<T: Scalar>(&self, ctx: &Ctx<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        let mlp = |v: &Var<T>| -> Result<Var<T>> {
            let hdn = self.mlp[0].forward(ctx, v)?.relu();
            self.mlp[1].forward(ctx, &hdn)
        };
        Ok(mlp(&x.global_avg_pool()?)?.add(&mlp(&x.global_max_pool()?)?)?.sigmoid())
    }

    /// `F_1`. Without a map feature only the channel attention runs.
    pub fn forward<T: Scalar>(&self, ctx: &Ctx<'_, T>, image_feat: &Var<T>, map_feat: Option<&Var<T>>) -> Result<Var<T>> {
        let attended = match map_feat {
            Some(m) => {
                if m.shape()[0] != image_feat.shape()[0] || m.shape()[2..] != image_feat.shape()[2..] {
                    return Err(Error::Shape(format!(
                        "map feature {:?} vs image feature {:?}",
                        m.shape(),
                        image_feat.shape()
                    )));
                }
                image_feat.mul(&self.spatial_weights(ctx, m)?)?
            }
            None => image_feat.clone(),
        };
        Ok(attended.mul(&self.channel_weights(ctx, &attended)?)?)
    }
}
