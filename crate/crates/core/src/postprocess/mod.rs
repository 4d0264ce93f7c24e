//! Raster-to-vector conversion of predicted road masks and change
//! classification against the historical map.

mod diff;
mod thin;
mod trace;

pub use diff::diff_against_history;
pub use thin::{despeckle, skeletonize};
pub use trace::{douglas_peucker, trace_polylines};

use image::GrayImage;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};

/// `(x, y)` pixel coordinates.
pub type Vertex = (usize, usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoadStatus {
    Unchanged,
    Added,
    Removed,
}

impl RoadStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            RoadStatus::Unchanged => "unchanged",
            RoadStatus::Added => "added",
            RoadStatus::Removed => "removed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoadPolyline {
    pub id: usize,
    pub vertices: Vec<Vertex>,
    pub status: Option<RoadStatus>,
}

impl RoadPolyline {
    pub fn length_px(&self) -> f64 {
        self.vertices
            .windows(2)
            .map(|s| (s[1].0 as f64 - s[0].0 as f64).hypot(s[1].1 as f64 - s[0].1 as f64))
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoadVectorSet {
    pub height: usize,
    pub width: usize,
    pub polylines: Vec<RoadPolyline>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ChangeSummary {
    pub n_unchanged: usize,
    pub n_added: usize,
    pub n_removed: usize,
    pub added_length_px: f64,
    pub removed_length_px: f64,
}

/// Vectorization and change-detection settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VectorizeConfig {
    /// Components below this area are dropped before thinning.
    pub min_area_px: usize,
    /// Endpoint branches shorter than this (in pixels) are pruned.
    pub spur_px: usize,
    /// Douglas–Peucker tolerance.
    pub tolerance_px: f64,
    pub buffer_px: f64,
    /// A new polyline is unchanged when at least this share of its pixels
    /// lies within `buffer_px` of historical road.
    pub unchanged_fraction: f64,
    /// A historical polyline is removed when less than this share is
    /// covered by the new mask.
    pub removed_fraction: f64,
}

impl Default for VectorizeConfig {
    fn default() -> Self {
        Self {
            min_area_px: 64,
            spur_px: 10,
            tolerance_px: 1.5,
            buffer_px: 8.0,
            unchanged_fraction: 0.8,
            removed_fraction: 0.2,
        }
    }
}

impl VectorizeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance_px >= 0.0 && self.buffer_px >= 0.0) {
            return Err(Error::invalid("tolerance_px and buffer_px must be >= 0"));
        }
        for f in [self.unchanged_fraction, self.removed_fraction] {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::invalid(format!("fraction {f} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Despeckle, thin and trace a road mask.
pub fn vectorize(mask: &GrayImage, cfg: &VectorizeConfig) -> RoadVectorSet {
    trace_polylines(&skeletonize(&despeckle(mask, cfg.min_area_px)), cfg)
}

impl RoadVectorSet {
    /// Checks bounds, vertex counts and consecutive duplicates.
    pub fn validate(&self) -> Result<()> {
        for p in &self.polylines {
            if p.vertices.len() < 2 {
                return Err(Error::invalid(format!("polyline {} has fewer than 2 vertices", p.id)));
            }
            if let Some(&(x, y)) = p.vertices.iter().find(|&&(x, y)| x >= self.width || y >= self.height) {
                return Err(Error::invalid(format!("polyline {} vertex ({x}, {y}) out of bounds", p.id)));
            }
            if p.vertices.windows(2).any(|s| s[0] == s[1]) {
                return Err(Error::invalid(format!("polyline {} repeats a vertex", p.id)));
            }
        }
        Ok(())
    }

    pub fn with_status(&self, status: RoadStatus) -> impl Iterator<Item = &RoadPolyline> {
        self.polylines.iter().filter(move |p| p.status == Some(status))
    }

    pub fn summary(&self) -> ChangeSummary {
        let count = |s| self.with_status(s).count();
        let length = |s| self.with_status(s).map(RoadPolyline::length_px).sum();
        ChangeSummary {
            n_unchanged: count(RoadStatus::Unchanged),
            n_added: count(RoadStatus::Added),
            n_removed: count(RoadStatus::Removed),
            added_length_px: length(RoadStatus::Added),
            removed_length_px: length(RoadStatus::Removed),
        }
    }

    /// FeatureCollection of LineStrings in pixel coordinates.
    pub fn to_geojson(&self) -> Value {
        let features: Vec<Value> = self
            .polylines
            .iter()
            .map(|p| {
                let coords: Vec<[usize; 2]> = p.vertices.iter().map(|&(x, y)| [x, y]).collect();
                json!({
                    "type": "Feature",
                    "id": p.id,
                    "geometry": { "type": "LineString", "coordinates": coords },
                    "properties": {
                        "id": p.id,
                        "status": p.status.map(RoadStatus::as_str),
                        "length_px": p.length_px(),
                    },
                })
            })
            .collect();
        json!({
            "type": "FeatureCollection",
            "properties": { "height": self.height, "width": self.width },
            "features": features,
        })
    }

    /// Draws every polyline with a 1-px pen.
    pub fn rasterize(&self) -> GrayImage {
        let mut m = GrayImage::new(self.width as u32, self.height as u32);
        for p in &self.polylines {
            for s in p.vertices.windows(2) {
                let (x0, y0) = (s[0].0 as f64, s[0].1 as f64);
                let (x1, y1) = (s[1].0 as f64, s[1].1 as f64);
                let n = (x1 - x0).abs().max((y1 - y0).abs()).ceil().max(1.0) as usize;
                for k in 0..=n {
                    let t = k as f64 / n as f64;
                    let (x, y) = ((x0 + t * (x1 - x0)).round(), (y0 + t * (y1 - y0)).round());
                    m.put_pixel(x as u32, y as u32, image::Luma([1]));
                }
            }
        }
        m
    }
}
