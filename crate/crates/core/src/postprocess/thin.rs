use image::GrayImage;

use crate::raster::components8;

pub(crate) fn binary(mask: &GrayImage) -> Vec<u8> {
    mask.as_raw().iter().map(|&v| (v != 0) as u8).collect()
}

pub(crate) fn to_image(data: Vec<u8>, h: usize, w: usize) -> GrayImage {
    GrayImage::from_raw(w as u32, h as u32, data).expect("buffer matches dimensions")
}

/// Removes 8-connected components smaller than `min_area_px`. Any nonzero
/// value counts as road; the result is {0,1}.
pub fn despeckle(mask: &GrayImage, min_area_px: usize) -> GrayImage {
    let (h, w) = (mask.height() as usize, mask.width() as usize);
    let bin = binary(mask);
    let mut out = vec![0u8; h * w];
    for comp in components8(&bin, h, w) {
        if comp.len() >= min_area_px {
            for p in comp {
                out[p] = 1;
            }
        }
    }
    to_image(out, h, w)
}

/// Zhang–Suen thinning to convergence. Pixels outside the raster count as
/// background.
pub fn skeletonize(mask: &GrayImage) -> GrayImage {
    let (h, w) = (mask.height() as usize, mask.width() as usize);
    let mut m = binary(mask);
    let at = |m: &[u8], y: isize, x: isize| -> u8 {
        if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
            0
        } else {
            m[y as usize * w + x as usize]
        }
    };
    let mut doomed = Vec::new();
    loop {
        let mut changed = false;
        for pass in 0..2 {
            doomed.clear();
            for y in 0..h as isize {
                for x in 0..w as isize {
                    if at(&m, y, x) == 0 {
                        continue;
                    }
                    // P2..P9, clockwise from north.
                    let p = [
                        at(&m, y - 1, x),
                        at(&m, y - 1, x + 1),
                        at(&m, y, x + 1),
                        at(&m, y + 1, x + 1),
                        at(&m, y + 1, x),
                        at(&m, y + 1, x - 1),
                        at(&m, y, x - 1),
                        at(&m, y - 1, x - 1),
                    ];
                    let b: u8 = p.iter().sum();
                    if !(2..=6).contains(&b) {
                        continue;
                    }
                    let a = (0..8).filter(|&k| p[k] == 0 && p[(k + 1) % 8] == 1).count();
                    if a != 1 {
                        continue;
                    }
                    let (p2, p4, p6, p8) = (p[0], p[2], p[4], p[6]);
                    let ok = if pass == 0 {
                        p2 * p4 * p6 == 0 && p4 * p6 * p8 == 0
                    } else {
                        p2 * p4 * p8 == 0 && p2 * p6 * p8 == 0
                    };
                    if ok {
                        doomed.push(y as usize * w + x as usize);
                    }
                }
            }
            changed |= !doomed.is_empty();
            for &i in &doomed {
                m[i] = 0;
            }
        }
        if !changed {
            break;
        }
    }
    to_image(m, h, w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::count_ones;
    use proptest::prelude::*;

    fn rect(h: u32, w: u32, boxes: &[(u32, u32, u32, u32)]) -> GrayImage {
        let mut m = GrayImage::new(w, h);
        for &(y0, x0, y1, x1) in boxes {
            for y in y0..y1 {
                for x in x0..x1 {
                    m.put_pixel(x, y, image::Luma([1]));
                }
            }
        }
        m
    }

    #[test]
    fn despeckle_area_rule() {
        let small = rect(40, 40, &[(2, 2, 4, 7)]);
        assert_eq!(count_ones(&despeckle(&small, 64)), 0);
        let big = rect(40, 40, &[(0, 0, 20, 25)]);
        assert_eq!(despeckle(&big, 64), big);
        // 50 px and 100 px components.
        let two = rect(40, 40, &[(0, 0, 5, 10), (20, 20, 30, 30)]);
        let out = despeckle(&two, 64);
        assert_eq!(count_ones(&out), 100);
        assert_eq!(out.get_pixel(25, 25).0[0], 1);
        assert_eq!(out.get_pixel(0, 0).0[0], 0);
    }

    #[test]
    fn horizontal_band_thins_to_one_row() {
        let band = rect(40, 100, &[(12, 10, 27, 90)]);
        let sk = skeletonize(&band);
        assert!(count_ones(&sk) > 50);
        // Away from the ends every column holds exactly one pixel.
        for x in 25..75 {
            let col: Vec<u32> = (0..40).filter(|&y| sk.get_pixel(x, y).0[0] == 1).collect();
            assert_eq!(col.len(), 1, "column {x}: {col:?}");
            assert!((18..=21).contains(&col[0]));
        }
    }

    #[test]
    fn empty_stays_empty() {
        let m = GrayImage::new(16, 16);
        assert_eq!(skeletonize(&m), m);
        assert_eq!(despeckle(&m, 64), m);
    }

    #[test]
    fn plus_has_one_junction_region() {
        let plus = rect(81, 81, &[(33, 0, 48, 81), (0, 33, 81, 48)]);
        let sk = skeletonize(&plus);
        let (h, w) = (81usize, 81usize);
        let bin = binary(&sk);
        let junctions: Vec<u8> = (0..h * w)
            .map(|i| (bin[i] == 1 && crate::raster::neighbors8(i, h, w).filter(|&q| bin[q] == 1).count() >= 3) as u8)
            .collect();
        let regions = components8(&junctions, h, w);
        assert_eq!(regions.len(), 1, "{regions:?}");
        assert_eq!(components8(&bin, h, w).len(), 1);
    }

    fn strokes() -> impl Strategy<Value = GrayImage> {
        proptest::collection::vec((0u32..60, 0u32..60, 0u32..60, 0u32..60, 3u32..8), 1..4).prop_map(|lines| {
            let mut m = GrayImage::new(64, 64);
            for (x0, y0, x1, y1, r) in lines {
                let (a, b) = ((x0 as f64, y0 as f64), (x1 as f64, y1 as f64));
                for y in 0..64u32 {
                    for x in 0..64u32 {
                        let p = (x as f64, y as f64);
                        let (dx, dy) = (b.0 - a.0, b.1 - a.1);
                        let l2 = dx * dx + dy * dy;
                        let t = if l2 > 0.0 { (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / l2).clamp(0.0, 1.0) } else { 0.0 };
                        let d2 = (p.0 - a.0 - t * dx).powi(2) + (p.1 - a.1 - t * dy).powi(2);
                        if d2 <= (r * r) as f64 {
                            m.put_pixel(x, y, image::Luma([1]));
                        }
                    }
                }
            }
            m
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn despeckle_is_idempotent(m in strokes(), min in 1usize..200) {
            let once = despeckle(&m, min);
            prop_assert_eq!(despeckle(&once, min), once);
        }

        #[test]
        fn skeleton_is_subset_and_keeps_components(m in strokes()) {
            let sk = skeletonize(&m);
            for (s, o) in sk.as_raw().iter().zip(m.as_raw()) {
                prop_assert!(*s <= *o);
            }
            let n_in = components8(&binary(&m), 64, 64).len();
            let n_out = components8(&binary(&sk), 64, 64).len();
            prop_assert_eq!(n_in, n_out);
        }
    }
}
