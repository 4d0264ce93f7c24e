use image::{imageops, GrayImage, Rgb, RgbImage};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::Sample;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AugmentMode {
    /// Flips only.
    Weak,
    /// Flips plus blur and colour jitter on the image.
    Strong,
}

/// Multiplicative colour factors, applied as brightness, contrast, saturation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColorJitter {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
}

/// A concrete draw of augmentation parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentPlan {
    pub hflip: bool,
    pub vflip: bool,
    pub blur_sigma: Option<f64>,
    pub jitter: Option<ColorJitter>,
}

const BLUR_P: f64 = 0.5;
const BLUR_SIGMA: (f64, f64) = (0.1, 2.0);
const JITTER_P: f64 = 0.8;
const JITTER_RANGE: (f64, f64) = (0.75, 1.25);

impl AugmentPlan {
    pub fn identity() -> Self {
        Self {
            hflip: false,
            vflip: false,
            blur_sigma: None,
            jitter: None,
        }
    }

    pub fn sample(mode: AugmentMode, seed: u64) -> Self {
        let mut rng = seed::rng(seed);
        let hflip = rng.random_bool(0.5);
        let vflip = rng.random_bool(0.5);
        if mode == AugmentMode::Weak {
            return Self {
                hflip,
                vflip,
                ..Self::identity()
            };
        }
        let blur_sigma = rng
            .random_bool(BLUR_P)
            .then(|| rng.random_range(BLUR_SIGMA.0..=BLUR_SIGMA.1));
        let jitter = rng.random_bool(JITTER_P).then(|| ColorJitter {
            brightness: rng.random_range(JITTER_RANGE.0..=JITTER_RANGE.1),
            contrast: rng.random_range(JITTER_RANGE.0..=JITTER_RANGE.1),
            saturation: rng.random_range(JITTER_RANGE.0..=JITTER_RANGE.1),
        });
        Self {
            hflip,
            vflip,
            blur_sigma,
            jitter,
        }
    }

    /// Applies the flips in place to a row-major `h×w` plane.
    pub fn flip_plane<P: Copy>(&self, data: &mut [P], h: usize, w: usize) {
        if self.hflip {
            for row in data.chunks_mut(w) {
                row.reverse();
            }
        }
        if self.vflip {
            for y in 0..h / 2 {
                let (top, bottom) = data.split_at_mut((h - 1 - y) * w);
                top[y * w..(y + 1) * w].swap_with_slice(&mut bottom[..w]);
            }
        }
    }

    pub fn flip_rgb(&self, img: &RgbImage) -> RgbImage {
        let mut out = img.clone();
        if self.hflip {
            imageops::flip_horizontal_in_place(&mut out);
        }
        if self.vflip {
            imageops::flip_vertical_in_place(&mut out);
        }
        out
    }

    pub fn flip_mask(&self, mask: &GrayImage) -> GrayImage {
        let mut out = mask.clone();
        self.flip_plane(&mut out, mask.height() as usize, mask.width() as usize);
        out
    }

    /// Blur then colour jitter; geometry untouched.
    pub fn photometric(&self, img: &RgbImage) -> RgbImage {
        let mut out = match self.blur_sigma {
            Some(s) => imageops::blur(img, s as f32),
            None => img.clone(),
        };
        if let Some(j) = self.jitter {
            apply_jitter(&mut out, j);
        }
        out
    }
}

fn luma(p: [f64; 3]) -> f64 {
    0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]
}

fn apply_jitter(img: &mut RgbImage, j: ColorJitter) {
    let n = (img.width() * img.height()).max(1) as f64;
    let bright: Vec<[f64; 3]> = img
        .pixels()
        .map(|p| p.0.map(|v| v as f64 * j.brightness))
        .collect();
    let mean = bright.iter().map(|&p| luma(p)).sum::<f64>() / n;
    for (px, p) in img.pixels_mut().zip(bright) {
        let c = p.map(|v| (v - mean) * j.contrast + mean);
        let g = luma(c);
        *px = Rgb(c.map(|v| (g + (v - g) * j.saturation).round().clamp(0.0, 255.0) as u8));
    }
}

/// Augments a sample: flips on image, map and label alike, photometric
/// changes on the image only.
pub fn augment_pair(sample: &Sample, mode: AugmentMode, seed: u64) -> Sample {
    let plan = AugmentPlan::sample(mode, seed);
    apply_plan(sample, &plan)
}

pub(crate) fn apply_plan(sample: &Sample, plan: &AugmentPlan) -> Sample {
    Sample {
        image: plan.photometric(&plan.flip_rgb(&sample.image)),
        map: plan.flip_rgb(&sample.map),
        label: sample.label.as_ref().map(|l| plan.flip_mask(l)),
        tile_id: sample.tile_id.clone(),
        origin: sample.origin,
    }
}
