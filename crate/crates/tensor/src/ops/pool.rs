use crate::error::{Result, TensorError};
use crate::graph::{Backward, BackwardCtx, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Routes each output gradient to one saved input index.
struct ScatterBack {
    src: Vec<usize>,
}

impl<T: Scalar> Backward<T> for ScatterBack {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Tensor<T>>> {
        let mut dx = vec![T::zero(); ctx.input(0).numel()];
        for (&s, &g) in self.src.iter().zip(ctx.grad.data()) {
            dx[s] += g;
        }
        vec![Some(Tensor::from_vec(ctx.input(0).shape(), dx).expect("scatter"))]
    }
}

struct GlobalAvgBack;
impl<T: Scalar> Backward<T> for GlobalAvgBack {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Tensor<T>>> {
        let (_, _, h, w) = ctx.input(0).dims4().expect("4-d");
        let inv = T::one() / T::from_usize(h * w).expect("hw");
        let mut dx = Vec::with_capacity(ctx.input(0).numel());
        for &g in ctx.grad.data() {
            dx.extend(std::iter::repeat_n(g * inv, h * w));
        }
        vec![Some(Tensor::from_vec(ctx.input(0).shape(), dx).expect("avg"))]
    }
}

struct ChannelMeanBack;
impl<T: Scalar> Backward<T> for ChannelMeanBack {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Tensor<T>>> {
        let (n, c, h, w) = ctx.input(0).dims4().expect("4-d");
        let hw = h * w;
        let inv = T::one() / T::from_usize(c).expect("c");
        let g = ctx.grad.data();
        let mut dx = vec![T::zero(); n * c * hw];
        for b in 0..n {
            for ch in 0..c {
                let off = (b * c + ch) * hw;
                for p in 0..hw {
                    dx[off + p] = g[b * hw + p] * inv;
                }
            }
        }
        vec![Some(Tensor::from_vec(ctx.input(0).shape(), dx).expect("cmean"))]
    }
}

impl<T: Scalar> Var<T> {
    /// Max pooling with implicit `-inf` padding.
    pub fn max_pool2d(&self, kernel: usize, stride: usize, padding: usize) -> Result<Var<T>> {
        let (n, c, h, w) = self.value().dims4()?;
        if padding >= kernel || h + 2 * padding < kernel || w + 2 * padding < kernel {
            return Err(TensorError::Invalid(format!(
                "max_pool2d: kernel {kernel} padding {padding} on {h}x{w}"
            )));
        }
        let oh = (h + 2 * padding - kernel) / stride + 1;
        let ow = (w + 2 * padding - kernel) / stride + 1;
        let x = self.value().data();
        let mut out = Vec::with_capacity(n * c * oh * ow);
        let mut src = Vec::with_capacity(n * c * oh * ow);
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = T::neg_infinity();
                    let mut arg = base;
                    for ky in 0..kernel {
                        let iy = (oy * stride + ky) as isize - padding as isize;
                        if iy < 0 || iy as usize >= h {
                            continue;
                        }
                        for kx in 0..kernel {
                            let ix = (ox * stride + kx) as isize - padding as isize;
                            if ix < 0 || ix as usize >= w {
                                continue;
                            }
                            let i = base + iy as usize * w + ix as usize;
                            if x[i] > best {
                                best = x[i];
                                arg = i;
                            }
                        }
                    }
                    out.push(best);
                    src.push(arg);
                }
            }
        }
        let value = Tensor::from_vec(&[n, c, oh, ow], out)?;
        Ok(Var::from_op(value, vec![self.clone()], ScatterBack { src }))
    }

    /// Spatial mean, `N×C×1×1`.
    pub fn global_avg_pool(&self) -> Result<Var<T>> {
        let (n, c, h, w) = self.value().dims4()?;
        let inv = T::one() / T::from_usize(h * w).expect("hw");
        let out: Vec<T> = self
            .value()
            .data()
            .chunks(h * w)
            .map(|p| p.iter().copied().sum::<T>() * inv)
            .collect();
        let value = Tensor::from_vec(&[n, c, 1, 1], out)?;
        Ok(Var::from_op(value, vec![self.clone()], GlobalAvgBack))
    }

    /// Spatial maximum, `N×C×1×1`.
    pub fn global_max_pool(&self) -> Result<Var<T>> {
        let (n, c, h, w) = self.value().dims4()?;
        let mut out = Vec::with_capacity(n * c);
        let mut src = Vec::with_capacity(n * c);
        for (pi, p) in self.value().data().chunks(h * w).enumerate() {
            let (arg, &best) = p
                .iter()
                .enumerate()
                .fold((0, &p[0]), |acc, (i, v)| if *v > *acc.1 { (i, v) } else { acc });
            out.push(best);
            src.push(pi * h * w + arg);
        }
        let value = Tensor::from_vec(&[n, c, 1, 1], out)?;
        Ok(Var::from_op(value, vec![self.clone()], ScatterBack { src }))
    }

    /// Mean over channels, `N×1×H×W`.
    pub fn channel_mean(&self) -> Result<Var<T>> {
        let (n, c, h, w) = self.value().dims4()?;
        let hw = h * w;
        let inv = T::one() / T::from_usize(c).expect("c");
        let x = self.value().data();
        let mut out = vec![T::zero(); n * hw];
        for b in 0..n {
            for ch in 0..c {
                let off = (b * c + ch) * hw;
                for p in 0..hw {
                    out[b * hw + p] += x[off + p];
                }
            }
        }
        out.iter_mut().for_each(|v| *v *= inv);
        let value = Tensor::from_vec(&[n, 1, h, w], out)?;
        Ok(Var::from_op(value, vec![self.clone()], ChannelMeanBack))
    }

    /// Maximum over channels, `N×1×H×W`.
    pub fn channel_max(&self) -> Result<Var<T>> {
        let (n, c, h, w) = self.value().dims4()?;
        let hw = h * w;
        let x = self.value().data();
        let mut out = vec![T::neg_infinity(); n * hw];
        let mut src = vec![0; n * hw];
        for b in 0..n {
            for ch in 0..c {
                let off = (b * c + ch) * hw;
                for p in 0..hw {
                    if x[off + p] > out[b * hw + p] {
                        out[b * hw + p] = x[off + p];
                        src[b * hw + p] = off + p;
                    }
                }
            }
        }
        let value = Tensor::from_vec(&[n, 1, h, w], out)?;
        Ok(Var::from_op(value, vec![self.clone()], ScatterBack { src }))
    }
}
