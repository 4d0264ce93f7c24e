use crate::error::{Result, TensorError};
use crate::graph::{Backward, BackwardCtx, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Output shape of broadcasting two equal-rank shapes (size-1 axes stretch).
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let err = || TensorError::Broadcast {
        left: a.to_vec(),
        right: b.to_vec(),
    };
    if a.len() != b.len() {
        return Err(err());
    }
    a.iter()
        .zip(b)
        .map(|(&x, &y)| match (x, y) {
            _ if x == y => Ok(x),
            (1, y) => Ok(y),
            (x, 1) => Ok(x),
            _ => Err(err()),
        })
        .collect()
}

fn pad4(shape: &[usize]) -> [usize; 4] {
    let mut out = [1; 4];
    let off = 4 - shape.len();
    out[off..].copy_from_slice(shape);
    out
}

/// Strides of `shape` viewed inside `out`, zero on stretched axes.
fn bstrides(shape: &[usize; 4], out: &[usize; 4]) -> [usize; 4] {
    let mut st = [0; 4];
    let mut acc = 1;
    for i in (0..4).rev() {
        st[i] = if shape[i] == 1 && out[i] != 1 { 0 } else { acc };
        acc *= shape[i];
    }
    st
}

/// Visits `(out_index, a_index, b_index)` for every output element.
fn for_each_broadcast(out: &[usize], a: &[usize], b: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    assert!(out.len() <= 4, "broadcast supports rank <= 4");
    let o = pad4(out);
    let sa = bstrides(&pad4(a), &o);
    let sb = bstrides(&pad4(b), &o);
    let mut oi = 0;
    for i0 in 0..o[0] {
        for i1 in 0..o[1] {
            for i2 in 0..o[2] {
                let ab = i0 * sa[0] + i1 * sa[1] + i2 * sa[2];
                let bb = i0 * sb[0] + i1 * sb[1] + i2 * sb[2];
                for i3 in 0..o[3] {
                    f(oi, ab + i3 * sa[3], bb + i3 * sb[3]);
                    oi += 1;
                }
            }
        }
    }
}

/// Sums `grad` (shaped `out`) down to `target` by accumulating stretched axes.
fn reduce_to<T: Scalar>(grad: &Tensor<T>, target: &[usize]) -> Tensor<T> {
    if grad.shape() == target {
        return grad.clone();
    }
    let mut acc = vec![T::zero(); target.iter().product()];
    let g = grad.data();
    for_each_broadcast(grad.shape(), target, target, |oi, ti, _| acc[ti] += g[oi]);
    Tensor::from_vec(target, acc).expect("reduce_to shape")
}

fn binary<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
    if a.shape() == b.shape() {
        return a.zip_map(b, f);
    }
    let out = broadcast_shape(a.shape(), b.shape())?;
    let (ad, bd) = (a.data(), b.data());
    let mut data = vec![T::zero(); out.iter().product()];
    for_each_broadcast(&out, a.shape(), b.shape(), |oi, ai, bi| data[oi] = f(ad[ai], bd[bi]));
    Tensor::from_vec(&out, data)
}

struct AddBack;
impl<T: Scalar> Backward<T> for AddBack {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Tensor<T>>> {
        (0..2)
            .map(|i| ctx.needs(i).then(|| reduce_to(ctx.grad, ctx.input(i).shape())))
            .collect()
    }
}

struct SubBack;
impl<T: Scalar> Backward<T> for SubBack {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Tensor<T>>> {
        vec![
            ctx.needs(0).then(|| reduce_to(ctx.grad, ctx.input(0).shape())),
            ctx.needs(1).then(|| reduce_to(&ctx.grad.map(|g| -g), ctx.input(1).shape())),
        ]
    }
}

struct MulBack;
impl<T: Scalar> Backward<T> for MulBack {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Tensor<T>>> {
        let (a, b) = (ctx.input(0), ctx.input(1));
        let ga = ctx.needs(0).then(|| {
            let full = binary(ctx.grad, b, |g, y| g * y).expect("mul grad");
            reduce_to(&full, a.shape())
        });
        let gb = ctx.needs(1).then(|| {
            let full = binary(ctx.grad, a, |g, x| g * x).expect("mul grad");
            reduce_to(&full, b.shape())
        });
        vec![ga, gb]
    }
}

struct ScaleBack<T>(T);
impl<T: Scalar> Backward<T> for ScaleBack<T> {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Tensor<T>>> {
        vec![Some(ctx.grad.scale(self.0))]
    }
}

struct ReluBack;
impl<T: Scalar> Backward<T> for ReluBack {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Tensor<T>>> {
        let g = ctx
            .grad
            .zip_map(ctx.output, |g, y| if y > T::zero() { g } else { T::zero() })
            .expect("relu grad");
        vec![Some(g)]
    }
}

struct SigmoidBack;
impl<T: Scalar> Backward<T> for SigmoidBack {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Tensor<T>>> {
        let g = ctx
            .grad
            .zip_map(ctx.output, |g, y| g * y * (T::one() - y))
            .expect("sigmoid grad");
        vec![Some(g)]
    }
}

struct SumBack;
impl<T: Scalar> Backward<T> for SumBack {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Tensor<T>>> {
        let g = ctx.grad.data()[0];
        vec![Some(Tensor::full(ctx.input(0).shape(), g))]
    }
}

struct SoftmaxChannelsBack;
impl<T: Scalar> Backward<T> for SoftmaxChannelsBack {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Tensor<T>>> {
        let (n, c, h, w) = ctx.output.dims4().expect("softmax 4-d");
        let hw = h * w;
        let (y, g) = (ctx.output.data(), ctx.grad.data());
        let mut dx = vec![T::zero(); y.len()];
        for b in 0..n {
            let base = b * c * hw;
            for p in 0..hw {
                let mut dot = T::zero();
                for k in 0..c {
                    let i = base + k * hw + p;
                    dot += y[i] * g[i];
                }
                for k in 0..c {
                    let i = base + k * hw + p;
                    dx[i] = y[i] * (g[i] - dot);
                }
            }
        }
        vec![Some(Tensor::from_vec(ctx.output.shape(), dx).expect("softmax grad"))]
    }
}

#[inline]
fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<T: Scalar> Var<T> {
    /// Broadcasting addition.
    pub fn add(&self, other: &Var<T>) -> Result<Var<T>> {
        let v = binary(self.value(), other.value(), |a, b| a + b)?;
        Ok(Var::from_op(v, vec![self.clone(), other.clone()], AddBack))
    }

    /// Broadcasting subtraction.
    pub fn sub(&self, other: &Var<T>) -> Result<Var<T>> {
        let v = binary(self.value(), other.value(), |a, b| a - b)?;
        Ok(Var::from_op(v, vec![self.clone(), other.clone()], SubBack))
    }

    /// Broadcasting elementwise product.
    pub fn mul(&self, other: &Var<T>) -> Result<Var<T>> {
        let v = binary(self.value(), other.value(), |a, b| a * b)?;
        Ok(Var::from_op(v, vec![self.clone(), other.clone()], MulBack))
    }

    pub fn scale(&self, s: T) -> Var<T> {
        Var::from_op(self.value().scale(s), vec![self.clone()], ScaleBack(s))
    }

    pub fn relu(&self) -> Var<T> {
        let v = self.value().map(|x| x.max(T::zero()));
        Var::from_op(v, vec![self.clone()], ReluBack)
    }

    pub fn sigmoid(&self) -> Var<T> {
        let v = self.value().map(sigmoid);
        Var::from_op(v, vec![self.clone()], SigmoidBack)
    }

    /// Sum of all elements, as a one-element tensor.
    pub fn sum_all(&self) -> Var<T> {
        Var::from_op(Tensor::scalar(self.value().sum()), vec![self.clone()], SumBack)
    }

    pub fn mean_all(&self) -> Var<T> {
        let n = T::from_usize(self.value().numel()).expect("numel");
        self.sum_all().scale(T::one() / n)
    }

    /// Softmax over the channel axis of an `N×C×H×W` tensor.
    pub fn softmax_channels(&self) -> Result<Var<T>> {
        let (n, c, h, w) = self.value().dims4()?;
        let hw = h * w;
        let x = self.value().data();
        let mut y = vec![T::zero(); x.len()];
        for b in 0..n {
            let base = b * c * hw;
            for p in 0..hw {
                let mut m = T::neg_infinity();
                for k in 0..c {
                    m = m.max(x[base + k * hw + p]);
                }
                let mut s = T::zero();
                for k in 0..c {
                    let e = (x[base + k * hw + p] - m).exp();
                    y[base + k * hw + p] = e;
                    s += e;
                }
                for k in 0..c {
                    y[base + k * hw + p] /= s;
                }
            }
        }
        let v = Tensor::from_vec(self.shape(), y)?;
        Ok(Var::from_op(v, vec![self.clone()], SoftmaxChannelsBack))
    }
}
