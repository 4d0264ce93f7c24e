use image::{GrayImage, Rgb, RgbImage};
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::history::{render_map, erase_roads};
use super::{buffer_centerlines, Centerline, MapPalette, RoadCenterlineSet, RoadClass, Sample};
use crate::error::{Error, Result};
use crate::seed::{self, Rng};

/// Parameters of one procedural scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    /// Square scene side in pixels; divisible by 16.
    pub size: usize,
    /// Road-graph density; 0 gives an empty scene, 0.5 at 512 px gives
    /// roughly two roads per axis plus a diagonal.
    pub density: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            size: 512,
            density: 0.5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub image: RgbImage,
    pub centerlines: RoadCenterlineSet,
    pub label: GrayImage,
}

const PRIMARY_SHARE: f64 = 0.35;
const DEAD_END_SHARE: f64 = 0.2;
const NOISE_SIGMA: f64 = 6.0;
const TREE_ON_ROAD_SHARE: f64 = 0.6;

/// Whole lines plus a Bernoulli draw for the fractional part.
fn line_count(rng: &mut Rng, expected: f64) -> usize {
    let whole = expected.floor();
    whole as usize + rng.random_bool((expected - whole).clamp(0.0, 1.0)) as usize
}

fn road_class(rng: &mut Rng) -> RoadClass {
    if rng.random_bool(PRIMARY_SHARE) {
        RoadClass::Primary
    } else {
        RoadClass::Secondary
    }
}

fn road_graph(rng: &mut Rng, size: usize, density: f64) -> RoadCenterlineSet {
    let s = size as f64;
    let max = s - 1.0;
    let mut polylines = Vec::new();
    for vertical in [false, true] {
        let n = line_count(rng, density * s / 128.0);
        let spacing = s / (n + 1) as f64;
        for k in 0..n {
            let base = spacing * (k + 1) as f64 + rng.random_range(-0.25..=0.25) * spacing;
            let segments = 4;
            let mut pts: Vec<(f64, f64)> = (0..=segments)
                .map(|i| {
                    let along = max * i as f64 / segments as f64;
                    let across = (base + rng.random_range(-1.0..=1.0) * s / 48.0).clamp(0.0, max);
                    if vertical {
                        (across, along)
                    } else {
                        (along, across)
                    }
                })
                .collect();
            if rng.random_bool(DEAD_END_SHARE) {
                let keep = rng.random_range(2..=segments);
                if rng.random_bool(0.5) {
                    pts.truncate(keep);
                } else {
                    pts.drain(..pts.len() - keep);
                }
            }
            polylines.push(Centerline {
                class: road_class(rng),
                points: pts,
            });
        }
    }
    let n_diag = line_count(rng, density * s / 256.0);
    for _ in 0..n_diag {
        let a = (rng.random_range(0.0..=max), 0.0);
        let b = (rng.random_range(0.0..=max), max);
        let (a, b) = if rng.random_bool(0.5) {
            (a, b)
        } else {
            ((a.1, a.0), (b.1, b.0))
        };
        let mid = (
            ((a.0 + b.0) / 2.0 + rng.random_range(-1.0..=1.0) * s / 16.0).clamp(0.0, max),
            ((a.1 + b.1) / 2.0 + rng.random_range(-1.0..=1.0) * s / 16.0).clamp(0.0, max),
        );
        polylines.push(Centerline {
            class: road_class(rng),
            points: vec![a, mid, b],
        });
    }
    RoadCenterlineSet {
        polylines,
        height: size,
        width: size,
    }
}

/// Smooth value noise in `[0, 1]` with lattice spacing `cell`.
fn value_noise(rng: &mut Rng, size: usize, cell: usize) -> Vec<f64> {
    let n = size / cell + 2;
    let lattice: Vec<f64> = (0..n * n).map(|_| rng.random::<f64>()).collect();
    let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
    let mut out = Vec::with_capacity(size * size);
    for y in 0..size {
        let (gy, ty) = (y / cell, smooth((y % cell) as f64 / cell as f64));
        for x in 0..size {
            let (gx, tx) = (x / cell, smooth((x % cell) as f64 / cell as f64));
            let at = |i: usize, j: usize| lattice[i * n + j];
            let top = at(gy, gx) * (1.0 - tx) + at(gy, gx + 1) * tx;
            let bot = at(gy + 1, gx) * (1.0 - tx) + at(gy + 1, gx + 1) * tx;
            out.push(top * (1.0 - ty) + bot * ty);
        }
    }
    out
}

fn lerp3(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [0, 1, 2].map(|i| a[i] + (b[i] - a[i]) * t)
}

fn render_image(rng: &mut Rng, label: &GrayImage, density: f64) -> RgbImage {
    let size = label.width() as usize;
    let area = (size * size) as f64;
    let coarse = value_noise(rng, size, 32);
    let fine = value_noise(rng, size, 8);
    let vegetation = [70.0, 95.0, 60.0];
    let soil = [150.0, 130.0, 100.0];
    let mut px: Vec<[f64; 3]> = coarse
        .iter()
        .zip(&fine)
        .map(|(&c, &f)| lerp3(vegetation, soil, (0.75 * c + 0.25 * f).clamp(0.0, 1.0)))
        .collect();
    let road = label.as_raw();

    let n_buildings = (density * area / 4096.0).round() as usize;
    for _ in 0..n_buildings {
        let (bw, bh) = (rng.random_range(6..=18usize), rng.random_range(6..=18usize));
        let (x0, y0) = (rng.random_range(0..size), rng.random_range(0..size));
        let roof = rng.random_range(165.0..=215.0);
        let tint = [roof, roof * 0.96, roof * 0.92];
        for y in y0..(y0 + bh).min(size) {
            for x in x0..(x0 + bw).min(size) {
                if road[y * size + x] == 0 {
                    px[y * size + x] = tint;
                }
            }
        }
    }

    let asphalt = [92.0, 93.0, 98.0];
    for (p, &r) in px.iter_mut().zip(road) {
        if r != 0 {
            *p = asphalt;
        }
    }

    let road_pixels: Vec<usize> = (0..size * size).filter(|&i| road[i] != 0).collect();
    let n_trees = (density * area / 2048.0).round() as usize;
    let canopy = [40.0, 70.0, 35.0];
    for _ in 0..n_trees {
        let centre = if !road_pixels.is_empty() && rng.random_bool(TREE_ON_ROAD_SHARE) {
            road_pixels[rng.random_range(0..road_pixels.len())]
        } else {
            rng.random_range(0..size * size)
        };
        let (cy, cx) = ((centre / size) as isize, (centre % size) as isize);
        let r = rng.random_range(3..=7i64) as isize;
        for y in (cy - r).max(0)..=(cy + r).min(size as isize - 1) {
            for x in (cx - r).max(0)..=(cx + r).min(size as isize - 1) {
                if (y - cy).pow(2) + (x - cx).pow(2) <= r * r {
                    px[y as usize * size + x as usize] = canopy;
                }
            }
        }
    }

    let noise = Normal::new(0.0, NOISE_SIGMA).expect("sigma > 0");
    let mut img = RgbImage::new(size as u32, size as u32);
    for (i, p) in px.iter().enumerate() {
        let c = p.map(|v| (v + noise.sample(rng)).round().clamp(0.0, 255.0) as u8);
        img.put_pixel((i % size) as u32, (i / size) as u32, Rgb(c));
    }
    img
}

/// Procedural scene: jittered-grid road graph with diagonals, rendered
/// over a textured background with buildings, tree cover and sensor noise.
pub fn generate_synthetic_scene(cfg: &SynthConfig) -> Result<SyntheticScene> {
    if cfg.size == 0 || cfg.size % 16 != 0 {
        return Err(Error::invalid(format!("scene size {} not a positive multiple of 16", cfg.size)));
    }
    if !(cfg.density >= 0.0 && cfg.density.is_finite()) {
        return Err(Error::invalid(format!("density {} must be finite and >= 0", cfg.density)));
    }
    let mut rng = seed::rng(seed::derive(&[cfg.seed, 0x5C3E]));
    let centerlines = road_graph(&mut rng, cfg.size, cfg.density);
    let label = buffer_centerlines(&centerlines)?;
    let image = render_image(&mut rng, &label, cfg.density);
    Ok(SyntheticScene {
        image,
        centerlines,
        label,
    })
}

/// Parameters for a tiled synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthDatasetConfig {
    pub tiles: usize,
    pub tile_size: usize,
    /// Parent scenes are `scene_tiles × scene_tiles` tiles.
    pub scene_tiles: usize,
    pub density: f64,
    pub masked_ratio: f64,
    pub palette: MapPalette,
    pub seed: u64,
}

impl Default for SynthDatasetConfig {
    fn default() -> Self {
        Self {
            tiles: 16,
            tile_size: 512,
            scene_tiles: 4,
            density: 0.5,
            masked_ratio: 0.3,
            palette: MapPalette::default(),
            seed: 0,
        }
    }
}

/// Generates parent scenes, degrades each into a historical map and cuts
/// everything into labeled tiles with ids `s{scene}_r{row}_c{col}`.
pub fn generate_synthetic_samples(cfg: &SynthDatasetConfig) -> Result<Vec<Sample>> {
    if cfg.scene_tiles == 0 {
        return Err(Error::invalid("scene_tiles must be >= 1"));
    }
    let per_scene = cfg.scene_tiles * cfg.scene_tiles;
    let ts = cfg.tile_size as u32;
    let mut out = Vec::with_capacity(cfg.tiles);
    let mut scene_idx = 0u64;
    while out.len() < cfg.tiles {
        let scene = generate_synthetic_scene(&SynthConfig {
            size: cfg.tile_size * cfg.scene_tiles,
            density: cfg.density,
            seed: seed::derive(&[cfg.seed, scene_idx]),
        })?;
        let kept = erase_roads(&scene.label, cfg.masked_ratio, seed::derive(&[cfg.seed, scene_idx, 0x4157]))?;
        let map = render_map(&kept, &cfg.palette);
        for t in 0..per_scene.min(cfg.tiles - out.len()) {
            let (r, c) = ((t / cfg.scene_tiles) as u32, (t % cfg.scene_tiles) as u32);
            let (y, x) = (r * ts, c * ts);
            let crop_rgb = |img: &RgbImage| image::imageops::crop_imm(img, x, y, ts, ts).to_image();
            let label = image::imageops::crop_imm(&scene.label, x, y, ts, ts).to_image();
            out.push(Sample::new(
                crop_rgb(&scene.image),
                crop_rgb(&map),
                Some(label),
                format!("s{scene_idx:04}_r{r}_c{c}"),
                (y, x),
            )?);
        }
        scene_idx += 1;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::count_ones;

    #[test]
    fn zero_density_is_blank() {
        let s = generate_synthetic_scene(&SynthConfig {
            size: 128,
            density: 0.0,
            seed: 5,
        })
        .unwrap();
        assert!(s.centerlines.polylines.is_empty());
        assert_eq!(count_ones(&s.label), 0);
    }

    #[test]
    fn fixed_seed_is_bit_identical() {
        let cfg = SynthConfig {
            size: 128,
            density: 0.8,
            seed: 17,
        };
        assert_eq!(generate_synthetic_scene(&cfg).unwrap(), generate_synthetic_scene(&cfg).unwrap());
    }

    #[test]
    fn road_fraction_is_imbalanced_like_real_data() {
        for seed in 0..6 {
            let s = generate_synthetic_scene(&SynthConfig {
                size: 512,
                density: 0.5,
                seed,
            })
            .unwrap();
            let f = count_ones(&s.label) as f64 / (512.0 * 512.0);
            assert!((0.02..=0.20).contains(&f), "seed {seed}: {f}");
            s.centerlines.validate().unwrap();
        }
    }

    #[test]
    fn rejects_size_not_divisible_by_16() {
        assert!(generate_synthetic_scene(&SynthConfig {
            size: 100,
            density: 0.5,
            seed: 0
        })
        .is_err());
    }

    #[test]
    fn dataset_tiles_have_origins_and_unique_ids() {
        let cfg = SynthDatasetConfig {
            tiles: 6,
            tile_size: 32,
            scene_tiles: 2,
            ..Default::default()
        };
        let s = generate_synthetic_samples(&cfg).unwrap();
        assert_eq!(s.len(), 6);
        assert_eq!(s[3].origin, (32, 32));
        assert_eq!(s[4].origin, (0, 0));
        let ids: std::collections::HashSet<_> = s.iter().map(|t| &t.tile_id).collect();
        assert_eq!(ids.len(), 6);
        assert_eq!(s, generate_synthetic_samples(&cfg).unwrap());
    }
}
