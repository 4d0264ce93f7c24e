//! Batch and group normalization.

use crate::error::{Result, TensorError};
use crate::graph::{Backward, BackwardCtx, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Per-channel batch statistics produced by a training-mode forward.
#[derive(Debug, Clone)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Unbiased variance, as tracked by running statistics.
    pub var_unbiased: Vec<T>,
}

fn check_affine<T: Scalar>(gamma: &Var<T>, beta: &Var<T>, c: usize) -> Result<()> {
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(TensorError::Invalid(format!(
            "normalization expects affine params of shape [{c}], got {:?}/{:?}",
            gamma.shape(),
            beta.shape()
        )));
    }
    Ok(())
}

/// Shared backward for normalizations whose statistics are taken over
/// groups of elements: each group has one `inv_std`, and `xhat` is saved.
struct NormBack<T> {
    xhat: Vec<T>,
    /// `inv_std[n * groups + g]` (batch norm uses `n = 0`, groups = channels).
    inv_std: Vec<T>,
    groups: usize,
    per_sample_stats: bool,
    /// Whether statistics depend on the input (train mode) or are constants.
    batch_dependent: bool,
}

impl<T: Scalar> NormBack<T> {
    fn group_of(&self, b: usize, ch: usize, c: usize) -> usize {
        let cpg = c / self.groups;
        if self.per_sample_stats {
            b * self.groups + ch / cpg
        } else {
            ch / cpg
        }
    }
}

impl<T: Scalar> Backward<T> for NormBack<T> {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Tensor<T>>> {
        let (n, c, h, w) = ctx.grad.dims4().expect("norm 4-d");
        let hw = h * w;
        let dy = ctx.grad.data();
        let gamma = ctx.input(1).data();

        let mut dgamma = vec![T::zero(); c];
        let mut dbeta = vec![T::zero(); c];
        for b in 0..n {
            for ch in 0..c {
                let off = (b * c + ch) * hw;
                for i in off..off + hw {
                    dgamma[ch] += dy[i] * self.xhat[i];
                    dbeta[ch] += dy[i];
                }
            }
        }

        let dx = ctx.needs(0).then(|| {
            let mut dx = vec![T::zero(); dy.len()];
            if self.batch_dependent {
                // Per group: sums of dxhat and dxhat*xhat.
                let ng = self.inv_std.len();
                let mut s1 = vec![T::zero(); ng];
                let mut s2 = vec![T::zero(); ng];
                let mut count = vec![0usize; ng];
                for b in 0..n {
                    for ch in 0..c {
                        let gi = self.group_of(b, ch, c);
                        let off = (b * c + ch) * hw;
                        for i in off..off + hw {
                            let d = dy[i] * gamma[ch];
                            s1[gi] += d;
                            s2[gi] += d * self.xhat[i];
                        }
                        count[gi] += hw;
                    }
                }
                for b in 0..n {
                    for ch in 0..c {
                        let gi = self.group_of(b, ch, c);
                        let m = T::from_usize(count[gi]).expect("count");
                        let k = self.inv_std[gi] / m;
                        let off = (b * c + ch) * hw;
                        for i in off..off + hw {
                            let d = dy[i] * gamma[ch];
                            dx[i] = k * (m * d - s1[gi] - self.xhat[i] * s2[gi]);
                        }
                    }
                }
            } else {
                for b in 0..n {
                    for ch in 0..c {
                        let gi = self.group_of(b, ch, c);
                        let scale = gamma[ch] * self.inv_std[gi];
                        let off = (b * c + ch) * hw;
                        for i in off..off + hw {
                            dx[i] = dy[i] * scale;
                        }
                    }
                }
            }
            Tensor::from_vec(ctx.grad.shape(), dx).expect("norm dx")
        });

        vec![
            dx,
            ctx.needs(1).then(|| Tensor::from_vec(&[c], dgamma).expect("dgamma")),
            ctx.needs(2).then(|| Tensor::from_vec(&[c], dbeta).expect("dbeta")),
        ]
    }
}

fn affine<T: Scalar>(xhat: &[T], gamma: &[T], beta: &[T], n: usize, c: usize, hw: usize) -> Vec<T> {
    let mut y = vec![T::zero(); xhat.len()];
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * hw;
            for i in off..off + hw {
                y[i] = xhat[i] * gamma[ch] + beta[ch];
            }
        }
    }
    y
}

impl<T: Scalar> Var<T> {
    /// Batch normalization using statistics of the current batch.
    pub fn batch_norm_train(&self, gamma: &Var<T>, beta: &Var<T>, eps: T) -> Result<(Var<T>, BatchStats<T>)> {
        let (n, c, h, w) = self.value().dims4()?;
        check_affine(gamma, beta, c)?;
        let hw = h * w;
        let m = n * hw;
        let x = self.value().data();
        let mf = T::from_usize(m).expect("count");
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        for ch in 0..c {
            let mut s = T::zero();
            for b in 0..n {
                s += x[(b * c + ch) * hw..(b * c + ch + 1) * hw].iter().copied().sum::<T>();
            }
            let mu = s / mf;
            let mut v = T::zero();
            for b in 0..n {
                for &xi in &x[(b * c + ch) * hw..(b * c + ch + 1) * hw] {
                    v += (xi - mu) * (xi - mu);
                }
            }
            mean[ch] = mu;
            var[ch] = v / mf;
        }
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut xhat = vec![T::zero(); x.len()];
        for b in 0..n {
            for ch in 0..c {
                let off = (b * c + ch) * hw;
                for i in off..off + hw {
                    xhat[i] = (x[i] - mean[ch]) * inv_std[ch];
                }
            }
        }
        let y = affine(&xhat, gamma.value().data(), beta.value().data(), n, c, hw);
        let unbias = if m > 1 {
            mf / T::from_usize(m - 1).expect("count")
        } else {
            T::one()
        };
        let stats = BatchStats {
            mean,
            var_unbiased: var.iter().map(|&v| v * unbias).collect(),
        };
        let value = Tensor::from_vec(self.shape(), y)?;
        let back = NormBack {
            xhat,
            inv_std,
            groups: c,
            per_sample_stats: false,
            batch_dependent: true,
        };
        Ok((
            Var::from_op(value, vec![self.clone(), gamma.clone(), beta.clone()], back),
            stats,
        ))
    }

    /// Batch normalization with fixed (running) statistics.
    pub fn batch_norm_eval(
        &self,
        gamma: &Var<T>,
        beta: &Var<T>,
        running_mean: &[T],
        running_var: &[T],
        eps: T,
    ) -> Result<Var<T>> {
        let (n, c, h, w) = self.value().dims4()?;
        check_affine(gamma, beta, c)?;
        if running_mean.len() != c || running_var.len() != c {
            return Err(TensorError::Invalid("running statistics length".into()));
        }
        let hw = h * w;
        let x = self.value().data();
        let inv_std: Vec<T> = running_var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut xhat = vec![T::zero(); x.len()];
        for b in 0..n {
            for ch in 0..c {
                let off = (b * c + ch) * hw;
                for i in off..off + hw {
                    xhat[i] = (x[i] - running_mean[ch]) * inv_std[ch];
                }
            }
        }
        let y = affine(&xhat, gamma.value().data(), beta.value().data(), n, c, hw);
        let value = Tensor::from_vec(self.shape(), y)?;
        let back = NormBack {
            xhat,
            inv_std,
            groups: c,
            per_sample_stats: false,
            batch_dependent: false,
        };
        Ok(Var::from_op(value, vec![self.clone(), gamma.clone(), beta.clone()], back))
    }

    /// Group normalization: statistics per sample over `C/groups` channels.
    pub fn group_norm(&self, groups: usize, gamma: &Var<T>, beta: &Var<T>, eps: T) -> Result<Var<T>> {
        let (n, c, h, w) = self.value().dims4()?;
        check_affine(gamma, beta, c)?;
        if groups == 0 || c % groups != 0 {
            return Err(TensorError::Invalid(format!("{c} channels not divisible into {groups} groups")));
        }
        let hw = h * w;
        let cpg = c / groups;
        let len = cpg * hw;
        let lenf = T::from_usize(len).expect("count");
        let x = self.value().data();
        let mut xhat = vec![T::zero(); x.len()];
        let mut inv_std = vec![T::zero(); n * groups];
        for b in 0..n {
            for g in 0..groups {
                let off = (b * c + g * cpg) * hw;
                let seg = &x[off..off + len];
                let mu = seg.iter().copied().sum::<T>() / lenf;
                let var = seg.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() / lenf;
                let is = T::one() / (var + eps).sqrt();
                inv_std[b * groups + g] = is;
                for (o, &v) in xhat[off..off + len].iter_mut().zip(seg) {
                    *o = (v - mu) * is;
                }
            }
        }
        let y = affine(&xhat, gamma.value().data(), beta.value().data(), n, c, hw);
        let value = Tensor::from_vec(self.shape(), y)?;
        let back = NormBack {
            xhat,
            inv_std,
            groups,
            per_sample_stats: true,
            batch_dependent: true,
        };
        Ok(Var::from_op(value, vec![self.clone(), gamma.clone(), beta.clone()], back))
    }
}
