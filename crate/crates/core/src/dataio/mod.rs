//! Samples, synthetic scenes, historical-map simulation, splitting,
//! augmentation and the on-disk dataset layout.

mod augment;
mod centerline;
mod history;
mod split;
mod store;
mod synth;

pub(crate) use augment::apply_plan;
pub use augment::{augment_pair, AugmentMode, AugmentPlan, ColorJitter};
pub use centerline::buffer_centerlines;
pub use history::{road_mask_from_map, simulate_historical_map, HISTORY_ARC_PX};
pub use split::{split_dataset, DatasetSplit};
pub use store::{
    load_dataset, load_mask_png, load_rgb_png, save_mask_png, save_rgb_png, write_dataset, DatasetIndex, IndexEntry,
    SplitRole, INDEX_FILE,
};
pub use synth::{
    generate_synthetic_samples, generate_synthetic_scene, SynthConfig, SynthDatasetConfig, SyntheticScene,
};

use image::{GrayImage, RgbImage};
use serde::{Deserialize, Serialize};
use srunet_tensor::{Scalar, Tensor};

use crate::error::{Error, Result};

/// Aligned image / historical-map / optional label triple.
///
/// Labels are kept in memory as `{0, 1}`; on disk they are `{0, 255}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: RgbImage,
    pub map: RgbImage,
    pub label: Option<GrayImage>,
    pub tile_id: String,
    /// `(row, col)` offset of the tile in its parent scene.
    pub origin: (u32, u32),
}

impl Sample {
    pub fn new(
        image: RgbImage,
        map: RgbImage,
        label: Option<GrayImage>,
        tile_id: impl Into<String>,
        origin: (u32, u32),
    ) -> Result<Self> {
        let s = Sample {
            image,
            map,
            label,
            tile_id: tile_id.into(),
            origin,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let dims = self.image.dimensions();
        if self.map.dimensions() != dims {
            return Err(Error::Shape(format!(
                "{}: map {:?} vs image {:?}",
                self.tile_id,
                self.map.dimensions(),
                dims
            )));
        }
        if let Some(label) = &self.label {
            if label.dimensions() != dims {
                return Err(Error::Shape(format!("{}: label size differs from image", self.tile_id)));
            }
            ensure_binary(label)?;
        }
        if dims.0 % 16 != 0 || dims.1 % 16 != 0 {
            return Err(Error::invalid(format!(
                "{}: size {}x{} not divisible by 16",
                self.tile_id, dims.1, dims.0
            )));
        }
        Ok(())
    }

    pub fn height(&self) -> usize {
        self.image.height() as usize
    }

    pub fn width(&self) -> usize {
        self.image.width() as usize
    }
}

pub(crate) fn ensure_binary(mask: &GrayImage) -> Result<()> {
    if mask.as_raw().iter().any(|&v| v > 1) {
        return Err(Error::invalid("mask is not binary {0,1}"));
    }
    Ok(())
}

/// Road hierarchy level; sets the buffer radius of a centerline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoadClass {
    Primary,
    Secondary,
}

impl RoadClass {
    /// Buffer radius in pixels around the centerline.
    pub fn buffer_px(self) -> f64 {
        match self {
            RoadClass::Primary => 7.0,
            RoadClass::Secondary => 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Centerline {
    pub class: RoadClass,
    /// `(x, y)` pixel coordinates.
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadCenterlineSet {
    pub polylines: Vec<Centerline>,
    pub height: usize,
    pub width: usize,
}

impl RoadCenterlineSet {
    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            polylines: Vec::new(),
            height,
            width,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (i, line) in self.polylines.iter().enumerate() {
            if line.points.len() < 2 {
                return Err(Error::invalid(format!("centerline {i} has fewer than 2 vertices")));
            }
            for &(x, y) in &line.points {
                if !(0.0..self.width as f64).contains(&x) || !(0.0..self.height as f64).contains(&y) {
                    return Err(Error::invalid(format!("centerline {i} vertex ({x}, {y}) outside scene")));
                }
            }
        }
        Ok(())
    }
}

/// Colours used when rendering a road raster as a web-map style tile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MapPalette {
    pub background_rgb: [u8; 3],
    pub road_fill_rgb: [u8; 3],
    pub road_casing_rgb: [u8; 3],
}

impl Default for MapPalette {
    fn default() -> Self {
        Self {
            background_rgb: [242, 243, 240],
            road_fill_rgb: [255, 255, 255],
            road_casing_rgb: [180, 180, 180],
        }
    }
}

impl MapPalette {
    pub fn validate(&self) -> Result<()> {
        if self.road_fill_rgb == self.background_rgb {
            return Err(Error::invalid("palette road fill equals background"));
        }
        Ok(())
    }
}

/// `u8` RGB raster as an `N×3×H×W` batch in `[0, 1]`.
pub fn rgb_batch<T: Scalar>(images: &[&RgbImage]) -> Result<Tensor<T>> {
    let first = images.first().ok_or_else(|| Error::invalid("empty batch"))?;
    let (w, h) = first.dimensions();
    let (w, h) = (w as usize, h as usize);
    let inv = T::lit(1.0 / 255.0);
    let mut data = Vec::with_capacity(images.len() * 3 * h * w);
    for img in images {
        if img.dimensions() != first.dimensions() {
            return Err(Error::Shape("batch images differ in size".into()));
        }
        let raw = img.as_raw();
        for c in 0..3 {
            data.extend((0..h * w).map(|p| T::lit(raw[p * 3 + c] as f64) * inv));
        }
    }
    Ok(Tensor::from_vec(&[images.len(), 3, h, w], data)?)
}

/// `{0,1}` masks as an `N×1×H×W` batch.
pub fn mask_batch<T: Scalar>(masks: &[&GrayImage]) -> Result<Tensor<T>> {
    let first = masks.first().ok_or_else(|| Error::invalid("empty batch"))?;
    let (w, h) = first.dimensions();
    let mut data = Vec::with_capacity(masks.len() * (w * h) as usize);
    for m in masks {
        if m.dimensions() != first.dimensions() {
            return Err(Error::Shape("batch masks differ in size".into()));
        }
        data.extend(m.as_raw().iter().map(|&v| if v > 0 { T::one() } else { T::zero() }));
    }
    Ok(Tensor::from_vec(&[masks.len(), 1, h as usize, w as usize], data)?)
}

/// Counts pixels with value 1.
pub fn count_ones(mask: &GrayImage) -> usize {
    mask.as_raw().iter().filter(|&&v| v == 1).count()
}
