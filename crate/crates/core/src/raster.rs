//! Small helpers for binary rasters stored row-major as `u8`.

use std::collections::VecDeque;

pub(crate) const OFFSETS8: [(isize, isize); 8] = [
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, -1),
    (0, 1),
    (1, -1),
    (1, 0),
    (1, 1),
];

/// In-bounds 8-neighbours of pixel `idx` as flat indices.
pub(crate) fn neighbors8(idx: usize, h: usize, w: usize) -> impl Iterator<Item = usize> {
    let (y, x) = ((idx / w) as isize, (idx % w) as isize);
    OFFSETS8.iter().filter_map(move |&(dy, dx)| {
        let (ny, nx) = (y + dy, x + dx);
        (ny >= 0 && nx >= 0 && (ny as usize) < h && (nx as usize) < w).then(|| ny as usize * w + nx as usize)
    })
}

/// 8-connected components of the nonzero pixels, each listed in BFS order
/// from its first pixel in raster order.
pub(crate) fn components8(mask: &[u8], h: usize, w: usize) -> Vec<Vec<usize>> {
    let mut seen = vec![false; h * w];
    let mut out = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..h * w {
        if mask[start] == 0 || seen[start] {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let mut comp = Vec::new();
        while let Some(p) = queue.pop_front() {
            comp.push(p);
            for q in neighbors8(p, h, w) {
                if mask[q] != 0 && !seen[q] {
                    seen[q] = true;
                    queue.push_back(q);
                }
            }
        }
        out.push(comp);
    }
    out
}

/// BFS hop distances (8-connected) from `start` within the nonzero pixels.
/// Unreachable pixels get `usize::MAX`.
pub(crate) fn geodesic8(mask: &[u8], h: usize, w: usize, start: usize) -> Vec<usize> {
    let mut dist = vec![usize::MAX; h * w];
    let mut queue = VecDeque::from([start]);
    dist[start] = 0;
    while let Some(p) = queue.pop_front() {
        for q in neighbors8(p, h, w) {
            if mask[q] != 0 && dist[q] == usize::MAX {
                dist[q] = dist[p] + 1;
                queue.push_back(q);
            }
        }
    }
    dist
}

/// 1-D squared distance transform of `f` (lower envelope of parabolas
/// rooted at the finite samples).
fn edt_1d(f: &[f64], out: &mut [f64]) {
    let meet = |p: usize, q: usize| {
        ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q - p) as f64)
    };
    // v: parabola roots on the envelope, z[i]: where v[i] takes over.
    let mut v: Vec<usize> = Vec::new();
    let mut z: Vec<f64> = Vec::new();
    for q in (0..f.len()).filter(|&q| f[q].is_finite()) {
        while let Some(&p) = v.last() {
            if v.len() > 1 && meet(p, q) <= z[v.len() - 1] {
                v.pop();
                z.pop();
            } else {
                break;
            }
        }
        z.push(v.last().map_or(f64::NEG_INFINITY, |&p| meet(p, q)));
        v.push(q);
    }
    if v.is_empty() {
        out.fill(f64::INFINITY);
        return;
    }
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while k + 1 < v.len() && z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

/// Squared Euclidean distance from every pixel to the nearest nonzero
/// pixel; infinite everywhere when the mask is empty.
pub(crate) fn sq_distance_transform(mask: &[u8], h: usize, w: usize) -> Vec<f64> {
    let mut grid: Vec<f64> = mask.iter().map(|&m| if m != 0 { 0.0 } else { f64::INFINITY }).collect();
    let mut col = vec![0.0; h];
    let mut tmp = vec![0.0; h.max(w)];
    for x in 0..w {
        for y in 0..h {
            col[y] = grid[y * w + x];
        }
        edt_1d(&col, &mut tmp[..h]);
        for y in 0..h {
            grid[y * w + x] = tmp[y];
        }
    }
    for y in 0..h {
        let row = grid[y * w..(y + 1) * w].to_vec();
        edt_1d(&row, &mut grid[y * w..(y + 1) * w]);
    }
    grid
}
