//! Directory layout:
//!
//! ```text
//! <root>/index.json
//! <root>/images/<tile_id>.png   RGB
//! <root>/maps/<tile_id>.png     RGB
//! <root>/labels/<tile_id>.png   8-bit gray, road = 255
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, Luma, RgbImage};
use serde::{Deserialize, Serialize};

use super::Sample;
use crate::error::{Error, Result};

pub const INDEX_FILE: &str = "index.json";
const INDEX_VERSION: u32 = 1;

/// Role of a tile in an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitRole {
    /// Training pool, to be divided into labeled/unlabeled by `lab_ratio`.
    Train,
    Labeled,
    Unlabeled,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub tile_id: String,
    pub split: SplitRole,
    /// `(row, col)` in the parent scene.
    pub origin: (u32, u32),
    pub has_label: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub version: u32,
    pub tiles: Vec<IndexEntry>,
}

impl DatasetIndex {
    pub fn ids_with_role(&self, role: SplitRole) -> impl Iterator<Item = &str> {
        self.tiles.iter().filter(move |e| e.split == role).map(|e| e.tile_id.as_str())
    }
}

fn image_err(path: &Path, source: image::ImageError) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        source,
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(())
}

pub fn save_rgb_png(path: &Path, img: &RgbImage) -> Result<()> {
    ensure_parent(path)?;
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| image_err(path, e))
}

pub fn load_rgb_png(path: &Path) -> Result<RgbImage> {
    Ok(image::open(path).map_err(|e| image_err(path, e))?.to_rgb8())
}

/// Writes a `{0,1}` mask as `{0,255}`.
pub fn save_mask_png(path: &Path, mask: &GrayImage) -> Result<()> {
    ensure_parent(path)?;
    let out = GrayImage::from_fn(mask.width(), mask.height(), |x, y| {
        Luma([if mask.get_pixel(x, y)[0] != 0 { 255 } else { 0 }])
    });
    out.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| image_err(path, e))
}

/// Reads an 8-bit mask and normalizes it to `{0,1}` (values ≥ 128 are road).
pub fn load_mask_png(path: &Path) -> Result<GrayImage> {
    let raw = image::open(path).map_err(|e| image_err(path, e))?.to_luma8();
    Ok(GrayImage::from_fn(raw.width(), raw.height(), |x, y| {
        Luma([(raw.get_pixel(x, y)[0] >= 128) as u8])
    }))
}

fn tile_path(root: &Path, dir: &str, id: &str) -> PathBuf {
    root.join(dir).join(format!("{id}.png"))
}

/// Writes samples and an index. `roles[i]` is the split of `samples[i]`.
pub fn write_dataset(root: &Path, samples: &[Sample], roles: &[SplitRole]) -> Result<DatasetIndex> {
    if samples.len() != roles.len() {
        return Err(Error::invalid("one split role per sample required"));
    }
    let mut tiles = Vec::with_capacity(samples.len());
    for (s, &split) in samples.iter().zip(roles) {
        s.validate()?;
        save_rgb_png(&tile_path(root, "images", &s.tile_id), &s.image)?;
        save_rgb_png(&tile_path(root, "maps", &s.tile_id), &s.map)?;
        if let Some(l) = &s.label {
            save_mask_png(&tile_path(root, "labels", &s.tile_id), l)?;
        }
        tiles.push(IndexEntry {
            tile_id: s.tile_id.clone(),
            split,
            origin: s.origin,
            has_label: s.label.is_some(),
        });
    }
    let index = DatasetIndex {
        version: INDEX_VERSION,
        tiles,
    };
    let path = root.join(INDEX_FILE);
    let json = serde_json::to_string_pretty(&index)?;
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(index)
}

/// Loads every tile listed in `<root>/index.json`, in index order.
pub fn load_dataset(root: &Path) -> Result<(DatasetIndex, Vec<Sample>)> {
    let path = root.join(INDEX_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let index: DatasetIndex = serde_json::from_str(&text)?;
    if index.version != INDEX_VERSION {
        return Err(Error::invalid(format!("unsupported index version {}", index.version)));
    }
    let samples = index
        .tiles
        .iter()
        .map(|e| {
            let label = if e.has_label {
                Some(load_mask_png(&tile_path(root, "labels", &e.tile_id))?)
            } else {
                None
            };
            Sample::new(
                load_rgb_png(&tile_path(root, "images", &e.tile_id))?,
                load_rgb_png(&tile_path(root, "maps", &e.tile_id))?,
                label,
                e.tile_id.clone(),
                e.origin,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((index, samples))
}
