use image::GrayImage;

use super::thin::binary;
use super::trace::{douglas_peucker, trace_chains};
use super::{despeckle, skeletonize, RoadPolyline, RoadStatus, RoadVectorSet, Vertex, VectorizeConfig};
use crate::error::{Error, Result};
use crate::raster::sq_distance_transform;

/// Share of chain pixels within `radius` of the mask behind `d2`.
fn near_share(chain: &[Vertex], d2: &[f64], w: usize, radius: f64) -> f64 {
    let near = chain.iter().filter(|&&(x, y)| d2[y * w + x] <= radius * radius).count();
    near as f64 / chain.len() as f64
}

/// Traces the new mask and labels each polyline unchanged or added by its
/// overlap with historical road; historical polylines barely covered by the
/// new mask are appended as removed.
///
/// Shares are measured over the traced pixel chains before simplification.
pub fn diff_against_history(
    new_mask: &GrayImage,
    historical_mask: &GrayImage,
    cfg: &VectorizeConfig,
) -> Result<RoadVectorSet> {
    if new_mask.dimensions() != historical_mask.dimensions() {
        return Err(Error::Shape(format!(
            "new mask is {:?} but historical mask is {:?}",
            new_mask.dimensions(),
            historical_mask.dimensions()
        )));
    }
    cfg.validate()?;
    let (h, w) = (new_mask.height() as usize, new_mask.width() as usize);
    let chains = |m: &GrayImage| trace_chains(&skeletonize(&despeckle(m, cfg.min_area_px)), cfg.spur_px);
    let d_hist = sq_distance_transform(&binary(historical_mask), h, w);
    let d_new = sq_distance_transform(&binary(new_mask), h, w);

    let mut polylines = Vec::new();
    for c in chains(new_mask) {
        let status = if near_share(&c, &d_hist, w, cfg.buffer_px) >= cfg.unchanged_fraction {
            RoadStatus::Unchanged
        } else {
            RoadStatus::Added
        };
        polylines.push((c, status));
    }
    for c in chains(historical_mask) {
        if near_share(&c, &d_new, w, cfg.buffer_px) < cfg.removed_fraction {
            polylines.push((c, RoadStatus::Removed));
        }
    }
    Ok(RoadVectorSet {
        height: h,
        width: w,
        polylines: polylines
            .into_iter()
            .enumerate()
            .map(|(id, (c, status))| RoadPolyline {
                id,
                vertices: douglas_peucker(&c, cfg.tolerance_px),
                status: Some(status),
            })
            .collect(),
    })
}
