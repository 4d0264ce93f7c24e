//! The segmentation network: image encoder with boundary enhancement, map
//! encoder, attention fusion, ASPP, decoder with a representation head, and
//! residual refinement.

mod aspp;
mod backbone;
mod bem;
pub mod checkpoint;
mod decoder;
mod edges;
mod fusion;
mod layers;
mod map_encoder;
mod params;
mod refine;

pub use aspp::{Aspp, CONTEXT_CHANNELS};
pub use backbone::Backbone;
pub use bem::{Bem, MixConv, MIX_KERNELS};
pub use checkpoint::Checkpoint;
pub use decoder::{Decoder, NUM_CLASSES};
pub use edges::{fixed_gradient_edges, HedLite};
pub use fusion::AttentionFusion;
pub use layers::{Conv, ConvNorm, Deconv, Norm, NormKind};
pub use map_encoder::{MapEncoder, MAP_FEATURES};
pub use params::{BnUpdate, Ctx, ParamBuilder, ParamEntry, ParamId, ParamKind, ParamStore};
pub use refine::{Refine, RRM_WIDTH};

use serde::{Deserialize, Serialize};
use srunet_tensor::{Scalar, Tensor, Var};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WidthPreset {
    /// ResNet-101 image encoder and full-width heads.
    Full,
    /// Four single-block residual stages (16/32/64/64) and narrow heads.
    Tiny,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeExtractor {
    /// Deterministic Sobel magnitude.
    FixedGradient,
    /// Small trainable side-output edge network.
    LearnedHedLite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    pub width_preset: WidthPreset,
    pub aspp_rates: [usize; 3],
    pub repr_channels: usize,
    /// Representation size as a fraction of the input size.
    pub repr_scale: f64,
    pub edge_extractor: EdgeExtractor,
    /// Training tile size `(H, W)`; both divisible by 16.
    pub input_size: (usize, usize),
    pub norm: NormKind,
    /// `false` drops the map encoder and the spatial attention.
    pub use_map: bool,
    /// Zero-initialize the last layer of the refinement head.
    pub rrm_zero_init: bool,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            width_preset: WidthPreset::Full,
            aspp_rates: [6, 12, 18],
            repr_channels: 256,
            repr_scale: 0.25,
            edge_extractor: EdgeExtractor::FixedGradient,
            input_size: (512, 512),
            norm: NormKind::Batch,
            use_map: true,
            rrm_zero_init: true,
        }
    }
}

impl NetworkConfig {
    pub fn tiny(input: usize) -> Self {
        Self {
            width_preset: WidthPreset::Tiny,
            input_size: (input, input),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.input_size;
        check_divisible(h, w)?;
        if self.aspp_rates.contains(&0) {
            return Err(Error::invalid("ASPP rates must be >= 1"));
        }
        if self.repr_channels == 0 {
            return Err(Error::invalid("repr_channels must be >= 1"));
        }
        if !(self.repr_scale > 0.0 && self.repr_scale <= 1.0) {
            return Err(Error::invalid(format!("repr_scale {} outside (0, 1]", self.repr_scale)));
        }
        Ok(())
    }

    /// `(aspp width, low-level projection, head width, edge width, CBAM reduction)`.
    fn widths(&self) -> (usize, usize, usize, usize, usize) {
        match self.width_preset {
            WidthPreset::Full => (256, 48, 256, 64, 16),
            WidthPreset::Tiny => (32, 16, 32, 8, 4),
        }
    }

    /// Representation spatial size for an `h×w` input.
    pub fn repr_size(&self, h: usize, w: usize) -> (usize, usize) {
        let f = |n: usize| ((n as f64 * self.repr_scale).round() as usize).max(1);
        (f(h), f(w))
    }
}

fn check_divisible(h: usize, w: usize) -> Result<()> {
    if h == 0 || w == 0 || h % 16 != 0 || w % 16 != 0 {
        return Err(Error::Shape(format!("input {h}x{w} must be a positive multiple of 16")));
    }
    Ok(())
}

/// Everything one forward pass produces.
#[derive(Debug, Clone)]
pub struct ForwardOutput<T: Scalar> {
    /// `N×2×H×W`.
    pub logits: Var<T>,
    /// `N×2×H/4×W/4`, after refinement.
    pub refined_logits: Var<T>,
    /// `N×2×H/4×W/4`, before refinement.
    pub coarse_logits: Var<T>,
    /// `N×repr_channels×h×w` with `h×w` set by `repr_scale`.
    pub representation: Var<T>,
    /// `N×1×H×W` in `[0, 1]`.
    pub edge_map: Var<T>,
}

impl<T: Scalar> ForwardOutput<T> {
    /// Softmax road probability `N×1×H×W` (class channel 1).
    pub fn road_prob(&self) -> Result<Var<T>> {
        Ok(self.logits.softmax_channels()?.narrow_channels(1, 1)?)
    }
}

/// Network structure; weights live in a separate [`ParamStore`] so student
/// and teacher share one definition.
#[derive(Debug, Clone)]
pub struct Srunet {
    config: NetworkConfig,
    backbone: Backbone,
    hed: Option<HedLite>,
    bem: Bem,
    map_encoder: Option<MapEncoder>,
    fusion: AttentionFusion,
    aspp: Aspp,
    decoder: Decoder,
    refine: Refine,
}

impl Srunet {
    /// Builds the network and a freshly initialized weight set.
    pub fn new<T: Scalar>(config: NetworkConfig, seed: u64) -> Result<(Self, ParamStore<T>)> {
        config.validate()?;
        let mut b = ParamBuilder::new(seed);
        let norm = config.norm;
        let (aspp_w, low_proj, head_w, edge_w, reduction) = config.widths();
        let backbone = Backbone::new(&mut b, config.width_preset, norm);
        let [c1, _, _, c4] = backbone.widths();
        let hed = (config.edge_extractor == EdgeExtractor::LearnedHedLite).then(|| HedLite::new(&mut b));
        let bem = Bem::new(&mut b, c1, edge_w, norm);
        let map_encoder = config.use_map.then(|| MapEncoder::new(&mut b, config.width_preset, norm));
        let fusion = AttentionFusion::new(&mut b, c4, reduction);
        let aspp = Aspp::new(&mut b, c4, aspp_w, config.aspp_rates, norm);
        let decoder = Decoder::new(&mut b, c1, low_proj, head_w, config.repr_channels, norm);
        let refine = Refine::new(&mut b, norm, config.rrm_zero_init);
        let net = Srunet {
            config,
            backbone,
            hed,
            bem,
            map_encoder,
            fusion,
            aspp,
            decoder,
            refine,
        };
        Ok((net, b.finish()))
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn backbone(&self) -> &Backbone {
        &self.backbone
    }

    pub fn bem(&self) -> &Bem {
        &self.bem
    }

    pub fn map_encoder(&self) -> Option<&MapEncoder> {
        self.map_encoder.as_ref()
    }

    pub fn fusion(&self) -> &AttentionFusion {
        &self.fusion
    }

    pub fn aspp(&self) -> &Aspp {
        &self.aspp
    }

    pub fn decoder(&self) -> &Decoder {
        &self.decoder
    }

    pub fn refine(&self) -> &Refine {
        &self.refine
    }

    pub fn edge_map<T: Scalar>(&self, ctx: &Ctx<'_, T>, image: &Var<T>) -> Result<Var<T>> {
        match &self.hed {
            Some(h) => h.forward(ctx, image),
            None => Ok(Var::constant(fixed_gradient_edges(image.value())?)),
        }
    }

    /// `image` and `map` are `N×3×H×W` in `[0, 1]`.
    pub fn forward<T: Scalar>(&self, ctx: &Ctx<'_, T>, image: &Var<T>, map: &Var<T>) -> Result<ForwardOutput<T>> {
        let (n, c, h, w) = image.value().dims4()?;
        if c != 3 || map.shape() != image.shape() {
            return Err(Error::Shape(format!(
                "image {:?} and map {:?} must both be Nx3xHxW",
                image.shape(),
                map.shape()
            )));
        }
        check_divisible(h, w)?;
        debug_assert!(n > 0);
        let edge_map = self.edge_map(ctx, image)?;
        let x1 = self.backbone.stage1(ctx, image)?;
        let x_low = self.bem.forward(ctx, &x1, &edge_map)?;
        let [_, _, x4] = self.backbone.stages234(ctx, &x_low)?;
        let m4 = match &self.map_encoder {
            Some(m) => Some(m.forward(ctx, map)?),
            None => None,
        };
        let f1 = self.fusion.forward(ctx, &x4, m4.as_ref())?;
        let context = self.aspp.forward(ctx, &f1)?;
        let (coarse_logits, rep) = self.decoder.forward(ctx, &context, &x_low)?;
        let (rh, rw) = self.config.repr_size(h, w);
        let representation = if rep.shape()[2..] == [rh, rw] {
            rep
        } else {
            rep.resize_bilinear(rh, rw)?
        };
        let refined_logits = self.refine.forward(ctx, &coarse_logits)?;
        let logits = refined_logits.resize_bilinear(h, w)?;
        Ok(ForwardOutput {
            logits,
            refined_logits,
            coarse_logits,
            representation,
            edge_map,
        })
    }

    /// Eval-mode road probabilities `N×1×H×W`.
    pub fn predict<T: Scalar>(&self, store: &ParamStore<T>, image: &Tensor<T>, map: &Tensor<T>) -> Result<Tensor<T>> {
        let ctx = Ctx::eval(store);
        let out = self.forward(&ctx, &Var::constant(image.clone()), &Var::constant(map.clone()))?;
        Ok(out.road_prob()?.value().clone())
    }
}

#[cfg(test)]
mod tests;
