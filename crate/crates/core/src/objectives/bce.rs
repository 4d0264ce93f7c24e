use srunet_tensor::{Backward, BackwardCtx, Scalar, Tensor, Var};

use crate::error::{Error, Result};

/// Lower bound applied to both log arguments.
pub const BCE_CLAMP: f64 = 1e-7;

/// Per-pixel `{0,1}` weights selecting confident teacher predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceMask<T: Scalar> {
    pub weights: Tensor<T>,
    pub threshold: f64,
}

impl<T: Scalar> ConfidenceMask<T> {
    pub fn count(&self) -> usize {
        self.weights.data().iter().filter(|&&w| w > T::zero()).count()
    }
}

/// Pseudo-labels (argmax of the two-class softmax) and the confidence mask
/// `max(p, 1 - p) > threshold` from teacher road probabilities.
pub fn pseudo_label<T: Scalar>(road_prob: &Tensor<T>, threshold: f64) -> (Tensor<T>, ConfidenceMask<T>) {
    let half = T::lit(0.5);
    let th = T::lit(threshold);
    let labels = road_prob.map(|p| if p > half { T::one() } else { T::zero() });
    let weights = road_prob.map(|p| {
        if p.max(T::one() - p) > th {
            T::one()
        } else {
            T::zero()
        }
    });
    (labels, ConfidenceMask { weights, threshold })
}

fn bce_terms<T: Scalar>(p: T, y: T) -> (f64, f64) {
    let p = p.to_f64_lossy();
    let y = y.to_f64_lossy();
    let value = -(y * p.max(BCE_CLAMP).ln() + (1.0 - y) * (1.0 - p).max(BCE_CLAMP).ln());
    let mut grad = 0.0;
    if p > BCE_CLAMP {
        grad -= y / p;
    }
    if 1.0 - p > BCE_CLAMP {
        grad += (1.0 - y) / (1.0 - p);
    }
    (value, grad)
}

struct WeightedBce<T: Scalar> {
    targets: Tensor<T>,
    weights: Option<Tensor<T>>,
    denom: f64,
}

impl<T: Scalar> Backward<T> for WeightedBce<T> {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Tensor<T>>> {
        let g = ctx.grad.data()[0].to_f64_lossy() / self.denom;
        let p = ctx.input(0).data();
        let y = self.targets.data();
        let grad = Tensor::from_fn(ctx.input(0).shape(), |i| {
            let w = self.weights.as_ref().map_or(1.0, |w| w.data()[i].to_f64_lossy());
            if w == 0.0 {
                return T::zero();
            }
            T::lit(g * w * bce_terms(p[i], y[i]).1)
        });
        vec![Some(grad)]
    }
}

fn weighted_bce<T: Scalar>(probs: &Var<T>, targets: &Tensor<T>, weights: Option<&Tensor<T>>) -> Result<Var<T>> {
    probs.value().expect_same_shape(targets)?;
    if let Some(w) = weights {
        probs.value().expect_same_shape(w)?;
    }
    let p = probs.value().data();
    let y = targets.data();
    let mut sum = 0.0;
    let mut denom = 0.0;
    for i in 0..p.len() {
        let w = weights.map_or(1.0, |w| w.data()[i].to_f64_lossy());
        if w != 0.0 {
            sum += w * bce_terms(p[i], y[i]).0;
            denom += w;
        }
    }
    if denom == 0.0 {
        return Ok(Var::constant(Tensor::scalar(T::zero())));
    }
    let op = WeightedBce {
        targets: targets.clone(),
        weights: weights.cloned(),
        denom,
    };
    Ok(Var::from_op(Tensor::scalar(T::lit(sum / denom)), vec![probs.clone()], op))
}

/// Mean binary cross-entropy of road probabilities against labels.
pub fn loss_sup<T: Scalar>(probs: &Var<T>, labels: &Tensor<T>) -> Result<Var<T>> {
    if probs.value().numel() == 0 {
        return Err(Error::invalid("empty prediction"));
    }
    weighted_bce(probs, labels, None)
}

/// Binary cross-entropy averaged over the confident pixels only; exactly
/// zero when the mask selects nothing.
pub fn loss_unsup<T: Scalar>(probs: &Var<T>, pseudo: &Tensor<T>, mask: &ConfidenceMask<T>) -> Result<Var<T>> {
    weighted_bce(probs, pseudo, Some(&mask.weights))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use proptest::prelude::*;
    use rand::Rng as _;
    use srunet_tensor::gradcheck::{central_difference, relative_error};

    fn scalar(v: &Var<f64>) -> f64 {
        v.value().data()[0]
    }

    fn random_probs(seed: u64, n: usize) -> Tensor<f64> {
        let mut rng = seed::rng(seed);
        Tensor::from_fn(&[1, 1, n, n], |_| rng.random_range(0.05..0.95))
    }

    fn random_labels(seed: u64, n: usize) -> Tensor<f64> {
        let mut rng = seed::rng(seed);
        Tensor::from_fn(&[1, 1, n, n], |_| rng.random_bool(0.4) as u8 as f64)
    }

    #[test]
    fn spot_values() {
        let half = Var::constant(Tensor::full(&[1, 1, 4, 4], 0.5));
        let y = random_labels(3, 4);
        assert!((scalar(&loss_sup(&half, &y).unwrap()) - 2f64.ln()).abs() < 1e-12);
        let one = Var::constant(Tensor::full(&[1, 1, 1, 1], 0.25));
        let l = loss_sup(&one, &Tensor::full(&[1, 1, 1, 1], 1.0)).unwrap();
        assert!((scalar(&l) + 0.25f64.ln()).abs() < 1e-12);
        let perfect = Var::constant(y.clone());
        assert!(scalar(&loss_sup(&perfect, &y).unwrap()) <= 1e-6);
    }

    #[test]
    fn masked_mean_over_selected_pixels() {
        // Two selected pixels with per-pixel losses 0.2 and 0.4.
        let mut p = Tensor::full(&[1, 1, 2, 5], 0.5);
        p.data_mut()[3] = (-0.2f64).exp();
        p.data_mut()[7] = (-0.4f64).exp();
        let y = Tensor::full(&[1, 1, 2, 5], 1.0);
        let mut w = Tensor::zeros(&[1, 1, 2, 5]);
        w.data_mut()[3] = 1.0;
        w.data_mut()[7] = 1.0;
        let mask = ConfidenceMask {
            weights: w,
            threshold: 0.95,
        };
        let l = loss_unsup(&Var::constant(p), &y, &mask).unwrap();
        assert!((scalar(&l) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn low_confidence_teacher_gives_exact_zero() {
        let teacher = Tensor::from_fn(&[1, 1, 8, 8], |i| 0.06 + 0.88 * i as f64 / 63.0);
        let (pseudo, mask) = pseudo_label(&teacher, 0.95);
        assert_eq!(mask.count(), 0);
        let student = Var::leaf(random_probs(1, 8));
        let l = loss_unsup(&student, &pseudo, &mask).unwrap();
        assert_eq!(scalar(&l), 0.0);
        assert!(l.backward().get(&student).is_none());
    }

    #[test]
    fn pseudo_label_is_argmax_and_mask_is_strict() {
        let t = Tensor::from_vec(&[1, 1, 1, 5], vec![0.02, 0.05, 0.5, 0.951, 0.99]).unwrap();
        let (y, m) = pseudo_label(&t, 0.95);
        assert_eq!(y.data(), &[0.0, 0.0, 0.0, 1.0, 1.0]);
        assert_eq!(m.weights.data(), &[1.0, 0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let p = Var::constant(Tensor::full(&[1, 1, 4, 4], 0.5));
        assert!(loss_sup(&p, &Tensor::zeros(&[1, 1, 4, 5])).is_err());
        let mask = ConfidenceMask {
            weights: Tensor::zeros(&[1, 1, 2, 2]),
            threshold: 0.95,
        };
        assert!(loss_unsup(&p, &Tensor::zeros(&[1, 1, 4, 4]), &mask).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let p = random_probs(11, 8);
        let y = random_labels(12, 8);
        let teacher = random_probs(13, 8).map(|v| if v > 0.5 { 0.99 } else { v });
        let (pseudo, mask) = pseudo_label(&teacher, 0.95);
        assert!(mask.count() > 0 && mask.count() < 64);
        type LossFn = Box<dyn Fn(&Var<f64>) -> Var<f64>>;
        let losses: Vec<LossFn> = vec![
            Box::new({
                let y = y.clone();
                move |v| loss_sup(v, &y).unwrap()
            }),
            Box::new(move |v| loss_unsup(v, &pseudo, &mask).unwrap()),
        ];
        for f in &losses {
            let leaf = Var::leaf(p.clone());
            let grads = f(&leaf).backward();
            let g = grads.get(&leaf).unwrap();
            let mut eval = |x: &[Tensor<f64>]| scalar(&f(&Var::constant(x[0].clone())));
            for i in 0..64 {
                let fd = central_difference(&mut eval, &[p.clone()], 0, i, 1e-6);
                assert!(relative_error(g.data()[i], fd, 1e-8) < 1e-4, "pixel {i}: {} vs {fd}", g.data()[i]);
            }
        }
    }

    proptest! {
        #[test]
        fn all_ones_mask_reduces_to_supervised(seed in 0u64..500) {
            let p = Var::constant(random_probs(seed, 6));
            let y = random_labels(seed + 1, 6);
            let mask = ConfidenceMask { weights: Tensor::full(&[1, 1, 6, 6], 1.0), threshold: 0.95 };
            let a = scalar(&loss_sup(&p, &y).unwrap());
            let b = scalar(&loss_unsup(&p, &y, &mask).unwrap());
            prop_assert!(a >= 0.0 && a.is_finite());
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }
}
