//! Whole-scene prediction by overlapping tiles.

use std::path::Path;

use image::{GrayImage, ImageBuffer, Luma, RgbImage};
use serde::{Deserialize, Serialize};
use srunet_tensor::{Scalar, Tensor};

use crate::dataio::rgb_batch;
use crate::error::{Error, Result};
use crate::network::{ParamStore, Srunet};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TilingPlan {
    pub tile_size: usize,
    pub overlap: usize,
    pub height: usize,
    pub width: usize,
    /// Scene size after padding up to one tile when the scene is smaller.
    pub padded: (usize, usize),
    /// `(row, col)` origins, row-major.
    pub origins: Vec<(usize, usize)>,
}

fn axis_origins(len: usize, tile: usize, stride: usize) -> Vec<usize> {
    if len <= tile {
        return vec![0];
    }
    let mut out: Vec<usize> = (0..).map(|i| i * stride).take_while(|&o| o + tile < len).collect();
    out.push(len - tile);
    out.dedup();
    out
}

/// Stride `tile - overlap`; the last tile on each axis ends flush with the
/// border. Scenes smaller than a tile are padded to one tile.
pub fn plan_tiles(height: usize, width: usize, tile_size: usize, overlap: usize) -> Result<TilingPlan> {
    if tile_size == 0 || tile_size % 16 != 0 {
        return Err(Error::invalid(format!("tile size {tile_size} must be a positive multiple of 16")));
    }
    if overlap >= tile_size {
        return Err(Error::invalid(format!("overlap {overlap} must be smaller than tile size {tile_size}")));
    }
    if height == 0 || width == 0 {
        return Err(Error::invalid("empty scene"));
    }
    let padded = (height.max(tile_size), width.max(tile_size));
    let stride = tile_size - overlap;
    let rows = axis_origins(padded.0, tile_size, stride);
    let cols = axis_origins(padded.1, tile_size, stride);
    let origins = rows.iter().flat_map(|&r| cols.iter().map(move |&c| (r, c))).collect();
    Ok(TilingPlan {
        tile_size,
        overlap,
        height,
        width,
        padded,
        origins,
    })
}

impl TilingPlan {
    /// Number of tiles covering each padded-scene pixel.
    pub fn multiplicity(&self) -> Vec<u32> {
        let (ph, pw) = self.padded;
        let t = self.tile_size;
        let mut m = vec![0u32; ph * pw];
        for &(r, c) in &self.origins {
            for y in r..r + t {
                m[y * pw + c..y * pw + c + t].iter_mut().for_each(|v| *v += 1);
            }
        }
        m
    }

    /// Sum of stitching weights at each scene pixel; 1 everywhere.
    pub fn weight_raster(&self) -> Vec<f64> {
        let mult = self.multiplicity();
        let mut acc = vec![0.0; self.padded.0 * self.padded.1];
        let ones = vec![1.0; self.tile_size * self.tile_size];
        for i in 0..self.origins.len() {
            self.accumulate(&mut acc, &mult, i, &ones);
        }
        self.crop(&acc)
    }

    fn accumulate(&self, acc: &mut [f64], mult: &[u32], tile: usize, values: &[f64]) {
        let (r, c) = self.origins[tile];
        let (t, pw) = (self.tile_size, self.padded.1);
        for y in 0..t {
            let row = (r + y) * pw + c;
            for x in 0..t {
                acc[row + x] += values[y * t + x] / mult[row + x] as f64;
            }
        }
    }

    fn crop(&self, padded: &[f64]) -> Vec<f64> {
        (0..self.height)
            .flat_map(|y| padded[y * self.padded.1..y * self.padded.1 + self.width].iter().copied())
            .collect()
    }

    /// Tile `i` of a `C×H×W` scene plane stack, edge-replicated into the padding.
    pub fn extract<T: Copy>(&self, scene: &[T], channels: usize, i: usize) -> Vec<T> {
        let (r, c) = self.origins[i];
        let t = self.tile_size;
        let (h, w) = (self.height, self.width);
        let mut out = Vec::with_capacity(channels * t * t);
        for ch in 0..channels {
            let plane = &scene[ch * h * w..(ch + 1) * h * w];
            for y in 0..t {
                let sy = (r + y).min(h - 1);
                out.extend((0..t).map(|x| plane[sy * w + (c + x).min(w - 1)]));
            }
        }
        out
    }

    /// Merges per-tile `t×t` probabilities, given in any order, into an
    /// `H×W` raster. Tiles are always accumulated in plan order, so the
    /// result does not depend on the order predictions arrived in.
    pub fn stitch(&self, mut tiles: Vec<(usize, Vec<f64>)>) -> Result<ProbabilityRaster> {
        tiles.sort_by_key(|(i, _)| *i);
        let t2 = self.tile_size * self.tile_size;
        if tiles.len() != self.origins.len()
            || tiles.iter().enumerate().any(|(k, (i, v))| *i != k || v.len() != t2)
        {
            return Err(Error::invalid("stitch needs exactly one full tile per plan entry"));
        }
        let mult = self.multiplicity();
        let mut acc = vec![0.0; self.padded.0 * self.padded.1];
        for (i, v) in &tiles {
            self.accumulate(&mut acc, &mult, *i, v);
        }
        Ok(ProbabilityRaster {
            height: self.height,
            width: self.width,
            data: self.crop(&acc).into_iter().map(|p| p.clamp(0.0, 1.0)).collect(),
        })
    }
}

/// Row-major road probabilities of a scene.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityRaster {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl ProbabilityRaster {
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let img: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_raw(
            self.width as u32,
            self.height as u32,
            self.data.iter().map(|&p| (p.clamp(0.0, 1.0) * 65535.0).round() as u16).collect(),
        )
        .ok_or_else(|| Error::Shape("raster size".into()))?;
        img.save(path).map_err(|source| Error::Image {
            path: path.into(),
            source,
        })
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path)
            .map_err(|source| Error::Image {
                path: path.into(),
                source,
            })?
            .into_luma16();
        Ok(Self {
            height: img.height() as usize,
            width: img.width() as usize,
            data: img.as_raw().iter().map(|&v| v as f64 / 65535.0).collect(),
        })
    }
}

/// `{0,1}` mask of pixels with probability strictly above `threshold`.
pub fn binarize(prob: &ProbabilityRaster, threshold: f64) -> GrayImage {
    GrayImage::from_raw(
        prob.width as u32,
        prob.height as u32,
        prob.data.iter().map(|&p| u8::from(p > threshold)).collect(),
    )
    .expect("raster buffer matches its size")
}

/// Anything that maps `N×3×t×t` image and map batches to `N×1×t×t` road
/// probabilities.
pub trait TilePredictor<T: Scalar> {
    fn predict(&self, images: &Tensor<T>, maps: &Tensor<T>) -> Result<Tensor<T>>;
}

/// Eval-mode network with one weight set (normally the teacher).
pub struct ModelPredictor<'a, T: Scalar> {
    pub net: &'a Srunet,
    pub store: &'a ParamStore<T>,
}

impl<T: Scalar> TilePredictor<T> for ModelPredictor<'_, T> {
    fn predict(&self, images: &Tensor<T>, maps: &Tensor<T>) -> Result<Tensor<T>> {
        self.net.predict(self.store, images, maps)
    }
}

fn planes<T: Scalar>(img: &RgbImage) -> Result<Vec<T>> {
    Ok(rgb_batch::<T>(&[img])?.into_vec())
}

/// Tiles the scene, predicts `batch` tiles per forward, and stitches.
pub fn predict_scene<T: Scalar>(
    image: &RgbImage,
    map: &RgbImage,
    predictor: &impl TilePredictor<T>,
    plan: &TilingPlan,
    batch: usize,
) -> Result<ProbabilityRaster> {
    if image.dimensions() != map.dimensions() {
        return Err(Error::Shape(format!(
            "image {:?} vs map {:?}",
            image.dimensions(),
            map.dimensions()
        )));
    }
    if (image.height() as usize, image.width() as usize) != (plan.height, plan.width) {
        return Err(Error::Shape("plan was made for a different scene size".into()));
    }
    let img = planes::<T>(image)?;
    let mp = planes::<T>(map)?;
    let t = plan.tile_size;
    let mut tiles = Vec::with_capacity(plan.origins.len());
    let ids: Vec<usize> = (0..plan.origins.len()).collect();
    for chunk in ids.chunks(batch.max(1)) {
        let gather = |src: &[T]| -> Result<Tensor<T>> {
            let data = chunk.iter().flat_map(|&i| plan.extract(src, 3, i)).collect();
            Ok(Tensor::from_vec(&[chunk.len(), 3, t, t], data)?)
        };
        let prob = predictor.predict(&gather(&img)?, &gather(&mp)?)?;
        if prob.shape() != [chunk.len(), 1, t, t] {
            return Err(Error::Shape(format!("predictor returned {:?}", prob.shape())));
        }
        for (k, &i) in chunk.iter().enumerate() {
            let v = prob.data()[k * t * t..(k + 1) * t * t].iter().map(|p| p.to_f64_lossy()).collect();
            tiles.push((i, v));
        }
    }
    plan.stitch(tiles)
}
