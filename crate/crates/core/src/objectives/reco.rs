use rand::seq::index;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use srunet_tensor::{Backward, BackwardCtx, Scalar, Tensor, Var};

use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReCoConfig {
    pub num_queries: usize,
    pub num_keys: usize,
    pub temperature: f64,
    /// Queries are drawn first from pixels whose own-class probability is
    /// below this value.
    pub hard_query_threshold: f64,
    /// Stop gradients at the positive and negative keys.
    pub detach_keys: bool,
}

impl Default for ReCoConfig {
    fn default() -> Self {
        Self {
            num_queries: 128,
            num_keys: 256,
            temperature: 0.5,
            hard_query_threshold: 0.97,
            detach_keys: false,
        }
    }
}

impl ReCoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::invalid(format!("temperature {} must be > 0", self.temperature)));
        }
        if self.num_queries == 0 || self.num_keys == 0 {
            return Err(Error::invalid("num_queries and num_keys must be >= 1"));
        }
        Ok(())
    }
}

/// Sampled pixels for one class. Indices are flat `n·h·w + y·w + x`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassTerms {
    pub class: usize,
    pub queries: Vec<usize>,
    /// Every pixel of the class; their mean is the positive key.
    pub members: Vec<usize>,
    pub negatives: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecoSample {
    pub classes: Vec<ClassTerms>,
    /// `(n, h, w)` of the sampled grid.
    pub grid: (usize, usize, usize),
}

/// Normalized vectors of one class's terms.
#[derive(Debug, Clone, PartialEq)]
pub struct RecoSet {
    pub class: usize,
    pub queries: Vec<Vec<f64>>,
    pub positive: Vec<f64>,
    pub negatives: Vec<Vec<f64>>,
}

/// Nearest-neighbour resize of an `N×C×H×W` tensor (pixel-centre sampling).
pub fn downsample_nearest<T: Scalar>(t: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let (n, c, h, w) = t.dims4()?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::Shape("empty resize target".into()));
    }
    let src = |o: usize, from: usize, to: usize| (((o as f64 + 0.5) * from as f64 / to as f64) as usize).min(from - 1);
    let mut out = Vec::with_capacity(n * c * out_h * out_w);
    for nc in 0..n * c {
        let plane = &t.data()[nc * h * w..(nc + 1) * h * w];
        for y in 0..out_h {
            let sy = src(y, h, out_h);
            out.extend((0..out_w).map(|x| plane[sy * w + src(x, w, out_w)]));
        }
    }
    Ok(Tensor::from_vec(&[n, c, out_h, out_w], out)?)
}

fn pick(rng: &mut seed::Rng, from: &[usize], amount: usize) -> Vec<usize> {
    index::sample(rng, from.len(), amount).into_iter().map(|i| from[i]).collect()
}

/// Draws queries, positive-key members and negative keys per class.
///
/// `road_prob` and `labels` are `N×1×h×w` on the representation grid.
/// A class absent from the batch, or with no pixels of another class to
/// contrast against, contributes no terms.
pub fn sample_reco<T: Scalar>(
    rep: &Tensor<T>,
    road_prob: &Tensor<T>,
    labels: &Tensor<T>,
    cfg: &ReCoConfig,
    seed: u64,
) -> Result<RecoSample> {
    cfg.validate()?;
    let (n, _, h, w) = rep.dims4()?;
    for (name, t) in [("probabilities", road_prob), ("labels", labels)] {
        if t.shape() != [n, 1, h, w] {
            return Err(Error::Shape(format!(
                "{name} {:?} do not match representation grid {:?}",
                t.shape(),
                [n, 1, h, w]
            )));
        }
    }
    let mut rng = seed::rng(seed::derive(&[seed, 0xC0]));
    let half = T::lit(0.5);
    let class_of = |i: usize| usize::from(labels.data()[i] > half);
    let mut classes = Vec::new();
    for c in 0..2 {
        let (members, others): (Vec<usize>, Vec<usize>) = (0..n * h * w).partition(|&i| class_of(i) == c);
        if members.is_empty() || others.is_empty() {
            continue;
        }
        let own_prob = |i: usize| {
            let p = road_prob.data()[i].to_f64_lossy();
            if c == 1 {
                p
            } else {
                1.0 - p
            }
        };
        let (hard, easy): (Vec<usize>, Vec<usize>) =
            members.iter().partition(|&&i| own_prob(i) < cfg.hard_query_threshold);
        let nq = cfg.num_queries.min(members.len());
        let n_hard = nq.min(hard.len());
        let mut queries = pick(&mut rng, &hard, n_hard);
        queries.extend(pick(&mut rng, &easy, nq - n_hard));
        let negatives = if others.len() >= cfg.num_keys {
            pick(&mut rng, &others, cfg.num_keys)
        } else {
            (0..cfg.num_keys).map(|_| others[rng.random_range(0..others.len())]).collect()
        };
        classes.push(ClassTerms {
            class: c,
            queries,
            members,
            negatives,
        });
    }
    Ok(RecoSample {
        classes,
        grid: (n, h, w),
    })
}

/// Pixel-major unit vectors and norms of a representation.
struct Unit {
    d: usize,
    u: Vec<f64>,
    norm: Vec<f64>,
}

impl Unit {
    fn new<T: Scalar>(rep: &Tensor<T>, sample: &RecoSample) -> Result<Self> {
        let (n, d, h, w) = rep.dims4()?;
        if sample.grid != (n, h, w) {
            return Err(Error::Shape(format!(
                "sample grid {:?} vs representation {:?}",
                sample.grid,
                rep.shape()
            )));
        }
        let hw = h * w;
        let mut used = vec![false; n * hw];
        for t in &sample.classes {
            for &p in t.members.iter().chain(&t.queries).chain(&t.negatives) {
                used[p] = true;
            }
        }
        let mut u = vec![0.0; n * hw * d];
        let mut norm = vec![0.0; n * hw];
        let data = rep.data();
        for p in (0..n * hw).filter(|&p| used[p]) {
            let (b, s) = (p / hw, p % hw);
            let v = &mut u[p * d..(p + 1) * d];
            for (k, x) in v.iter_mut().enumerate() {
                *x = data[(b * d + k) * hw + s].to_f64_lossy();
            }
            let len = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if !(len > 0.0 && len.is_finite()) {
                return Err(Error::invalid(format!(
                    "representation at pixel {p} has norm {len}; representations collapsed"
                )));
            }
            v.iter_mut().for_each(|x| *x /= len);
            norm[p] = len;
        }
        Ok(Unit { d, u, norm })
    }

    fn at(&self, p: usize) -> &[f64] {
        &self.u[p * self.d..(p + 1) * self.d]
    }

    /// Normalized mean of member unit vectors, with the mean's norm.
    fn positive_key(&self, members: &[usize]) -> Result<(Vec<f64>, f64)> {
        let mut m = vec![0.0; self.d];
        for &p in members {
            m.iter_mut().zip(self.at(p)).for_each(|(a, b)| *a += b);
        }
        let inv = 1.0 / members.len() as f64;
        m.iter_mut().for_each(|x| *x *= inv);
        let len = m.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(len > 0.0) {
            return Err(Error::invalid("class mean representation has zero norm"));
        }
        m.iter_mut().for_each(|x| *x /= len);
        Ok((m, len))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Softmax over `[s0, s_1..s_K]` and the loss `logsumexp − s0`.
fn contrast(s0: f64, negs: impl Iterator<Item = f64>) -> (f64, Vec<f64>) {
    let mut s = vec![s0];
    s.extend(negs);
    let max = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = s.iter().map(|v| (v - max).exp()).collect();
    let z: f64 = e.iter().sum();
    (max + z.ln() - s0, e.into_iter().map(|v| v / z).collect())
}

/// `−log(exp(q·k⁺/τ) / (exp(q·k⁺/τ) + Σ exp(q·k⁻/τ)))` for one query.
///
/// Inputs are expected to be unit vectors; zero-norm vectors are rejected.
pub fn reco_query_loss(q: &[f64], k_pos: &[f64], negs: &[Vec<f64>], tau: f64) -> Result<f64> {
    for v in std::iter::once(q).chain(std::iter::once(k_pos)).chain(negs.iter().map(|v| v.as_slice())) {
        if v.len() != q.len() {
            return Err(Error::Shape("vector lengths differ".into()));
        }
        if dot(v, v) == 0.0 {
            return Err(Error::invalid("zero-norm vector in contrast loss"));
        }
    }
    Ok(contrast(dot(q, k_pos) / tau, negs.iter().map(|k| dot(q, k) / tau)).0)
}

impl RecoSample {
    /// The normalized vectors the loss is evaluated on.
    pub fn vectors<T: Scalar>(&self, rep: &Tensor<T>) -> Result<Vec<RecoSet>> {
        let unit = Unit::new(rep, self)?;
        self.classes
            .iter()
            .map(|t| {
                Ok(RecoSet {
                    class: t.class,
                    queries: t.queries.iter().map(|&p| unit.at(p).to_vec()).collect(),
                    positive: unit.positive_key(&t.members)?.0,
                    negatives: t.negatives.iter().map(|&p| unit.at(p).to_vec()).collect(),
                })
            })
            .collect()
    }
}

struct RecoBackward {
    unit: Unit,
    sample: RecoSample,
    keys: Vec<(Vec<f64>, f64)>,
    tau: f64,
    detach_keys: bool,
}

impl<T: Scalar> Backward<T> for RecoBackward {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Tensor<T>>> {
        let (n, h, w) = self.sample.grid;
        let (d, hw) = (self.unit.d, h * w);
        let g = ctx.grad.data()[0].to_f64_lossy();
        let nc = self.sample.classes.len() as f64;
        let mut du = vec![0.0; n * hw * d];
        for (t, (k, m_len)) in self.sample.classes.iter().zip(&self.keys) {
            let a = g / (nc * t.queries.len() as f64) / self.tau;
            let mut dk = vec![0.0; d];
            for &q in &t.queries {
                let uq = self.unit.at(q);
                let negs = t.negatives.iter().map(|&j| dot(uq, self.unit.at(j)) / self.tau);
                let (_, pi) = contrast(dot(uq, k) / self.tau, negs);
                let mut gq: Vec<f64> = k.iter().map(|&x| (pi[0] - 1.0) * x).collect();
                for (&j, &pj) in t.negatives.iter().zip(&pi[1..]) {
                    gq.iter_mut().zip(self.unit.at(j)).for_each(|(a, b)| *a += pj * b);
                    if !self.detach_keys {
                        du[j * d..(j + 1) * d].iter_mut().zip(uq).for_each(|(x, y)| *x += a * pj * y);
                    }
                }
                du[q * d..(q + 1) * d].iter_mut().zip(&gq).for_each(|(x, y)| *x += a * y);
                if !self.detach_keys {
                    dk.iter_mut().zip(uq).for_each(|(x, y)| *x += a * (pi[0] - 1.0) * y);
                }
            }
            if !self.detach_keys {
                let kd = dot(k, &dk);
                let scale = 1.0 / (m_len * t.members.len() as f64);
                let dm: Vec<f64> = dk.iter().zip(k).map(|(x, y)| (x - y * kd) * scale).collect();
                for &p in &t.members {
                    du[p * d..(p + 1) * d].iter_mut().zip(&dm).for_each(|(x, y)| *x += y);
                }
            }
        }
        let mut grad = vec![T::zero(); n * d * hw];
        for p in 0..n * hw {
            let gu = &du[p * d..(p + 1) * d];
            if self.unit.norm[p] == 0.0 || gu.iter().all(|&x| x == 0.0) {
                continue;
            }
            let u = self.unit.at(p);
            let ug = dot(u, gu);
            let (b, s) = (p / hw, p % hw);
            for k in 0..d {
                grad[(b * d + k) * hw + s] = T::lit((gu[k] - u[k] * ug) / self.unit.norm[p]);
            }
        }
        vec![Some(Tensor::from_vec(ctx.input(0).shape(), grad).expect("gradient shape"))]
    }
}

/// Contrast loss averaged over queries within a class, then over classes.
/// Zero (and gradient-free) when no class has terms.
pub fn loss_reco<T: Scalar>(rep: &Var<T>, sample: &RecoSample, cfg: &ReCoConfig) -> Result<Var<T>> {
    cfg.validate()?;
    let unit = Unit::new(rep.value(), sample)?;
    let terms: Vec<&ClassTerms> = sample.classes.iter().filter(|t| !t.queries.is_empty()).collect();
    if terms.len() != sample.classes.len() {
        return Err(Error::invalid("class terms without queries"));
    }
    if terms.is_empty() {
        return Ok(Var::constant(Tensor::scalar(T::zero())));
    }
    let tau = cfg.temperature;
    let mut keys = Vec::with_capacity(terms.len());
    let mut total = 0.0;
    for t in &terms {
        let (k, len) = unit.positive_key(&t.members)?;
        let mut class_sum = 0.0;
        for &q in &t.queries {
            let uq = unit.at(q);
            class_sum += contrast(dot(uq, &k) / tau, t.negatives.iter().map(|&j| dot(uq, unit.at(j)) / tau)).0;
        }
        total += class_sum / t.queries.len() as f64;
        keys.push((k, len));
    }
    let value = total / terms.len() as f64;
    let op = RecoBackward {
        unit,
        sample: sample.clone(),
        keys,
        tau,
        detach_keys: cfg.detach_keys,
    };
    Ok(Var::from_op(Tensor::scalar(T::lit(value)), vec![rep.clone()], op))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use srunet_tensor::gradcheck::{central_difference, relative_error};

    fn random(seed: u64, shape: &[usize]) -> Tensor<f64> {
        let mut rng = seed::rng(seed);
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    fn stripes(n: usize, h: usize, w: usize) -> Tensor<f64> {
        Tensor::from_fn(&[n, 1, h, w], |i| ((i % w) % 3 == 0) as u8 as f64)
    }

    #[test]
    fn scalar_case() {
        let q = vec![1.0, 0.0];
        let l = reco_query_loss(&q, &q, &[vec![0.0, 1.0]], 0.5).unwrap();
        assert!((l + (2f64.exp() / (2f64.exp() + 1.0)).ln()).abs() < 1e-12);
        assert!((l - 0.1269).abs() < 1e-4);
        let sym = reco_query_loss(&q, &[0.6, 0.8], &[vec![0.6, -0.8]], 0.5).unwrap();
        assert!((sym - 2f64.ln()).abs() < 1e-12);
        assert!(reco_query_loss(&q, &q, &[vec![0.0, 0.0]], 0.5).is_err());
    }

    #[test]
    fn two_pixel_graph_matches_scalar_case() {
        // Road pixel along x, background along y.
        let rep = Tensor::from_vec(&[1, 2, 1, 2], vec![3.0, 0.0, 0.0, 2.0]).unwrap();
        let labels = Tensor::from_vec(&[1, 1, 1, 2], vec![1.0, 0.0]).unwrap();
        let cfg = ReCoConfig {
            num_queries: 1,
            num_keys: 1,
            ..ReCoConfig::default()
        };
        let s = sample_reco(&rep, &labels, &labels, &cfg, 0).unwrap();
        let l = loss_reco(&Var::<f64>::constant(rep), &s, &cfg).unwrap();
        assert!((l.value().data()[0] - 0.1269).abs() < 1e-4);
    }

    #[test]
    fn loss_decreases_as_positive_similarity_grows() {
        let negs = vec![vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]];
        let q = [1.0, 0.0, 0.0];
        let mut last = f64::INFINITY;
        for i in 0..=10 {
            let a = i as f64 / 10.0 * std::f64::consts::FRAC_PI_2;
            let k = [a.sin(), -a.cos(), 0.0];
            let l = reco_query_loss(&q, &k, &negs, 0.5).unwrap();
            assert!(l < last);
            last = l;
        }
    }

    #[test]
    fn absent_class_contributes_nothing() {
        let rep = random(1, &[1, 4, 6, 6]);
        let bg = Tensor::zeros(&[1, 1, 6, 6]);
        let s = sample_reco(&rep, &bg, &bg, &ReCoConfig::default(), 0).unwrap();
        assert!(s.classes.is_empty());
        let l = loss_reco(&Var::leaf(rep), &s, &ReCoConfig::default()).unwrap();
        assert_eq!(l.value().data()[0], 0.0);
    }

    #[test]
    fn query_cap_hard_first_then_fallback() {
        let (h, w) = (25, 40);
        let labels = Tensor::from_fn(&[1, 1, h, w], |i| (i < 500) as u8 as f64);
        let rep = random(2, &[1, 3, h, w]);
        // Road pixels 0..100 are hard, the rest confident.
        let prob = Tensor::from_fn(&[1, 1, h, w], |i| match i {
            0..100 => 0.6,
            100..500 => 0.99,
            _ => 0.01,
        });
        let cfg = ReCoConfig::default();
        let s = sample_reco(&rep, &prob, &labels, &cfg, 5).unwrap();
        let road = s.classes.iter().find(|t| t.class == 1).unwrap();
        assert_eq!(road.queries.len(), 128);
        let hard = road.queries.iter().filter(|&&p| p < 100).count();
        assert_eq!(hard, 100);
        let mut uniq = road.queries.clone();
        uniq.sort_unstable();
        uniq.dedup();
        assert_eq!(uniq.len(), 128);
        // All background predictions are confident: plain uniform fallback.
        let bg = s.classes.iter().find(|t| t.class == 0).unwrap();
        assert_eq!(bg.queries.len(), 128);
        assert!(bg.queries.iter().all(|&p| p >= 500));
        assert_eq!(bg.negatives.len(), 256);
        assert!(bg.negatives.iter().all(|&p| p < 500));
    }

    #[test]
    fn scarce_negatives_are_drawn_with_replacement() {
        let labels = Tensor::from_fn(&[1, 1, 4, 4], |i| (i < 3) as u8 as f64);
        let rep = random(3, &[1, 2, 4, 4]);
        let s = sample_reco(&rep, &labels, &labels, &ReCoConfig::default(), 1).unwrap();
        let bg = s.classes.iter().find(|t| t.class == 0).unwrap();
        assert_eq!(bg.negatives.len(), 256);
        assert!(bg.negatives.iter().all(|&p| p < 3));
        assert_eq!(bg.queries.len(), 13);
    }

    #[test]
    fn graph_value_matches_vector_oracle() {
        let rep = random(4, &[2, 5, 6, 6]);
        let labels = stripes(2, 6, 6);
        let prob = random(5, &[2, 1, 6, 6]).map(|v| 0.5 + 0.49 * v);
        let cfg = ReCoConfig {
            num_queries: 7,
            num_keys: 9,
            ..ReCoConfig::default()
        };
        let s = sample_reco(&rep, &prob, &labels, &cfg, 9).unwrap();
        let sets = s.vectors(&rep).unwrap();
        let oracle = sets
            .iter()
            .map(|set| {
                set.queries
                    .iter()
                    .map(|q| reco_query_loss(q, &set.positive, &set.negatives, 0.5).unwrap())
                    .sum::<f64>()
                    / set.queries.len() as f64
            })
            .sum::<f64>()
            / sets.len() as f64;
        let got = loss_reco(&Var::constant(rep), &s, &cfg).unwrap().value().data()[0];
        assert!((got - oracle).abs() < 1e-12);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let rep = random(6, &[1, 4, 8, 8]);
        let labels = stripes(1, 8, 8);
        let prob = random(7, &[1, 1, 8, 8]).map(|v| 0.5 + 0.49 * v);
        for detach in [false, true] {
            let cfg = ReCoConfig {
                num_queries: 10,
                num_keys: 12,
                detach_keys: detach,
                ..ReCoConfig::default()
            };
            let s = sample_reco(&rep, &prob, &labels, &cfg, 3).unwrap();
            let leaf = Var::leaf(rep.clone());
            let grads = loss_reco(&leaf, &s, &cfg).unwrap().backward();
            let g = grads.get(&leaf).unwrap();
            if detach {
                // Only query pixels receive gradient.
                let queried: Vec<usize> = s.classes.iter().flat_map(|t| t.queries.clone()).collect();
                for p in 0..64 {
                    let nz = (0..4).any(|k| g.data()[k * 64 + p] != 0.0);
                    assert!(!nz || queried.contains(&p));
                }
                continue;
            }
            let mut eval = |x: &[Tensor<f64>]| {
                loss_reco(&Var::constant(x[0].clone()), &s, &cfg).unwrap().value().data()[0]
            };
            for i in 0..rep.numel() {
                let fd = central_difference(&mut eval, &[rep.clone()], 0, i, 1e-6);
                assert!(relative_error(g.data()[i], fd, 1e-8) < 1e-4, "element {i}: {} vs {fd}", g.data()[i]);
            }
        }
    }

    #[test]
    fn zero_norm_representation_is_rejected() {
        let mut rep = random(8, &[1, 3, 4, 4]);
        for k in 0..3 {
            rep.data_mut()[k * 16 + 5] = 0.0;
        }
        let labels = stripes(1, 4, 4);
        let s = sample_reco(&rep, &labels, &labels, &ReCoConfig::default(), 0).unwrap();
        assert!(loss_reco(&Var::constant(rep), &s, &ReCoConfig::default()).is_err());
    }

    #[test]
    fn nearest_downsample_picks_centres() {
        let t = Tensor::from_fn(&[1, 1, 4, 4], |i| i as f64);
        let d = downsample_nearest(&t, 2, 2).unwrap();
        assert_eq!(d.data(), &[5.0, 7.0, 13.0, 15.0]);
    }

    proptest! {
        #[test]
        fn negative_order_does_not_matter(seed in 0u64..200, shift in 1usize..5) {
            let v = random(seed, &[6, 4]);
            let unit = |r: &[f64]| {
                let n = dot(r, r).sqrt();
                r.iter().map(|x| x / n).collect::<Vec<f64>>()
            };
            let rows: Vec<Vec<f64>> = v.data().chunks(4).map(unit).collect();
            let mut negs = rows[2..].to_vec();
            let a = reco_query_loss(&rows[0], &rows[1], &negs, 0.5).unwrap();
            let len = negs.len();
            negs.rotate_left(shift % len);
            negs.swap(0, 1);
            let b = reco_query_loss(&rows[0], &rows[1], &negs, 0.5).unwrap();
            prop_assert!(a >= 0.0);
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn sampling_is_seeded_and_class_pure(seed in 0u64..100) {
            let rep = random(seed, &[2, 3, 5, 7]);
            let labels = random(seed + 1, &[2, 1, 5, 7]).map(|v| (v > 0.3) as u8 as f64);
            let prob = random(seed + 2, &[2, 1, 5, 7]).map(|v| 0.5 + 0.5 * v);
            let cfg = ReCoConfig { num_queries: 8, num_keys: 16, ..ReCoConfig::default() };
            let a = sample_reco(&rep, &prob, &labels, &cfg, seed).unwrap();
            prop_assert_eq!(&a, &sample_reco(&rep, &prob, &labels, &cfg, seed).unwrap());
            for t in &a.classes {
                let cls = |p: usize| (labels.data()[p] > 0.5) as usize;
                prop_assert!(t.queries.iter().all(|&p| cls(p) == t.class));
                prop_assert!(t.members.iter().all(|&p| cls(p) == t.class));
                prop_assert!(t.negatives.iter().all(|&p| cls(p) != t.class));
            }
        }
    }
}
