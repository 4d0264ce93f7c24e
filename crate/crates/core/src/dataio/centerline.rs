use image::GrayImage;

use super::RoadCenterlineSet;
use crate::error::Result;

/// Squared distance from `p` to segment `ab`.
fn dist2_to_segment(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (cx, cy) = (a.0 + t * dx, a.1 + t * dy);
    (p.0 - cx).powi(2) + (p.1 - cy).powi(2)
}

/// Rasterizes road buffers: a pixel is road iff its centre lies within the
/// class radius (7 px primary, 4 px secondary) of some centerline.
pub fn buffer_centerlines(set: &RoadCenterlineSet) -> Result<GrayImage> {
    set.validate()?;
    let (h, w) = (set.height, set.width);
    let mut mask = GrayImage::new(w as u32, h as u32);
    for line in &set.polylines {
        let r = line.class.buffer_px();
        let r2 = r * r + 1e-9;
        for seg in line.points.windows(2) {
            let (a, b) = (seg[0], seg[1]);
            let x0 = (a.0.min(b.0) - r).floor().max(0.0) as usize;
            let x1 = ((a.0.max(b.0) + r).ceil() as usize).min(w - 1);
            let y0 = (a.1.min(b.1) - r).floor().max(0.0) as usize;
            let y1 = ((a.1.max(b.1) + r).ceil() as usize).min(h - 1);
            for y in y0..=y1 {
                for x in x0..=x1 {
                    if dist2_to_segment((x as f64, y as f64), a, b) <= r2 {
                        mask.put_pixel(x as u32, y as u32, image::Luma([1]));
                    }
                }
            }
        }
    }
    Ok(mask)
}
