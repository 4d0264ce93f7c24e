use image::{GrayImage, Luma, Rgb, RgbImage};
use rand::seq::SliceRandom;

use super::{ensure_binary, MapPalette};
use crate::error::{Error, Result};
use crate::raster::{components8, geodesic8, neighbors8};
use crate::seed;

/// Longest arc erased once whole components no longer fit the budget.
pub const HISTORY_ARC_PX: usize = 64;

/// Relative tolerance on the erased fraction.
const TOLERANCE: f64 = 0.02;

/// Road pixels kept after erasing roughly `masked_ratio` of them.
///
/// Whole 8-connected components are tried first in random order. Remaining
/// components are then cut into geodesic arcs of `HISTORY_ARC_PX` pixels
/// (halving the length each round down to single level sets) and those are
/// tried in random order. A piece is skipped if it would overshoot the upper
/// tolerance. A final trim removes single pixels in geodesic order from the
/// end of a road, which bounds the error by the tolerance.
pub(crate) fn erase_roads(label: &GrayImage, masked_ratio: f64, seed: u64) -> Result<GrayImage> {
    ensure_binary(label)?;
    if !(0.0..=1.0).contains(&masked_ratio) {
        return Err(Error::invalid(format!("masked_ratio {masked_ratio} outside [0, 1]")));
    }
    let (w, h) = (label.width() as usize, label.height() as usize);
    let mut kept = label.as_raw().clone();
    let total = kept.iter().filter(|&&v| v == 1).count();
    if total == 0 {
        return Ok(label.clone());
    }
    let target = masked_ratio * total as f64;
    let tol = TOLERANCE * total as f64;
    let (lo, hi) = (target - tol, target + tol);
    let mut erased = 0usize;
    let mut rng = seed::rng(seed);

    let mut try_pieces = |kept: &mut Vec<u8>, erased: &mut usize, mut pieces: Vec<Vec<usize>>, shuffle: bool| {
        if shuffle {
            pieces.shuffle(&mut rng);
        }
        for piece in pieces {
            if *erased as f64 >= lo {
                return;
            }
            if (*erased + piece.len()) as f64 <= hi {
                for p in &piece {
                    kept[*p] = 0;
                }
                *erased += piece.len();
            }
        }
    };

    let comps = components8(&kept, h, w);
    try_pieces(&mut kept, &mut erased, comps, true);

    let mut arc = HISTORY_ARC_PX;
    while (erased as f64) < lo && arc >= 1 {
        let pieces: Vec<Vec<usize>> = components8(&kept, h, w)
            .into_iter()
            .flat_map(|comp| arcs(&kept, h, w, &comp, arc))
            .collect();
        try_pieces(&mut kept, &mut erased, pieces, true);
        arc /= 2;
    }

    if (erased as f64) < lo {
        let pixels: Vec<Vec<usize>> = components8(&kept, h, w)
            .into_iter()
            .flat_map(|comp| {
                let (_, dist) = far_end(&kept, h, w, &comp);
                let mut order = comp;
                order.sort_by_key(|&p| std::cmp::Reverse(dist[p]));
                order.into_iter().map(|p| vec![p])
            })
            .collect();
        try_pieces(&mut kept, &mut erased, pixels, false);
    }
    Ok(GrayImage::from_raw(w as u32, h as u32, kept).expect("same size"))
}

/// Double-sweep BFS: an approximately extreme pixel and distances from it.
fn far_end(mask: &[u8], h: usize, w: usize, comp: &[usize]) -> (usize, Vec<usize>) {
    let d0 = geodesic8(mask, h, w, comp[0]);
    let a = *comp.iter().max_by_key(|&&p| (d0[p], std::cmp::Reverse(p))).expect("non-empty");
    (a, geodesic8(mask, h, w, a))
}

/// Splits a component into bands of geodesic distance `[k·len, (k+1)·len)`.
fn arcs(mask: &[u8], h: usize, w: usize, comp: &[usize], len: usize) -> Vec<Vec<usize>> {
    let (_, dist) = far_end(mask, h, w, comp);
    let bands = comp.iter().map(|&p| dist[p] / len).max().unwrap_or(0) + 1;
    let mut out = vec![Vec::new(); bands];
    for &p in comp {
        out[dist[p] / len].push(p);
    }
    out.retain(|b| !b.is_empty());
    out
}

/// Renders a road mask in the palette: fill on road pixels, a 1-px casing
/// on non-road pixels touching a road, background elsewhere.
pub(crate) fn render_map(roads: &GrayImage, palette: &MapPalette) -> RgbImage {
    let (w, h) = (roads.width() as usize, roads.height() as usize);
    let m = roads.as_raw();
    let mut out = RgbImage::from_pixel(w as u32, h as u32, Rgb(palette.background_rgb));
    for p in 0..h * w {
        let colour = if m[p] != 0 {
            palette.road_fill_rgb
        } else if neighbors8(p, h, w).any(|q| m[q] != 0) {
            palette.road_casing_rgb
        } else {
            continue;
        };
        out.put_pixel((p % w) as u32, (p / w) as u32, Rgb(colour));
    }
    out
}

/// Degrades a label into a historical map raster by erasing about
/// `masked_ratio` of its road pixels and rendering the rest.
pub fn simulate_historical_map(
    label: &GrayImage,
    masked_ratio: f64,
    palette: &MapPalette,
    seed: u64,
) -> Result<RgbImage> {
    palette.validate()?;
    let kept = erase_roads(label, masked_ratio, seed)?;
    Ok(render_map(&kept, palette))
}

/// Recovers road pixels from a rendered map: exact matches of the fill colour.
pub fn road_mask_from_map(map: &RgbImage, palette: &MapPalette) -> GrayImage {
    let mut out = GrayImage::new(map.width(), map.height());
    for (x, y, px) in map.enumerate_pixels() {
        if px.0 == palette.road_fill_rgb {
            out.put_pixel(x, y, Luma([1]));
        }
    }
    out
}
