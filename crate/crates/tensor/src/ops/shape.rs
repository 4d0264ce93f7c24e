use crate::error::{Result, TensorError};
use crate::graph::{Backward, BackwardCtx, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Concatenation along axis 0 (`batch = true`) or axis 1 of 4-d tensors.
struct ConcatBack {
    batch: bool,
    sizes: Vec<usize>,
}

impl<T: Scalar> Backward<T> for ConcatBack {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Tensor<T>>> {
        let (n, c, h, w) = ctx.grad.dims4().expect("4-d");
        let g = ctx.grad.data();
        let mut start = 0;
        self.sizes
            .iter()
            .enumerate()
            .map(|(i, &len)| {
                let out = ctx
                    .needs(i)
                    .then(|| slice_axis(g, [n, c, h, w], self.batch, start, len));
                start += len;
                out
            })
            .collect()
    }
}

fn slice_axis<T: Scalar>(data: &[T], dims: [usize; 4], batch: bool, start: usize, len: usize) -> Tensor<T> {
    let [n, c, h, w] = dims;
    let hw = h * w;
    if batch {
        let v = data[start * c * hw..(start + len) * c * hw].to_vec();
        Tensor::from_vec(&[len, c, h, w], v)
    } else {
        let mut v = Vec::with_capacity(n * len * hw);
        for b in 0..n {
            v.extend_from_slice(&data[(b * c + start) * hw..(b * c + start + len) * hw]);
        }
        Tensor::from_vec(&[n, len, h, w], v)
    }
    .expect("slice")
}

struct NarrowBack {
    batch: bool,
    start: usize,
}

impl<T: Scalar> Backward<T> for NarrowBack {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Tensor<T>>> {
        let full = ctx.input(0);
        let (n, c, h, w) = full.dims4().expect("4-d");
        let hw = h * w;
        let (gn, gc, _, _) = ctx.grad.dims4().expect("4-d");
        let g = ctx.grad.data();
        let mut dx = vec![T::zero(); full.numel()];
        if self.batch {
            dx[self.start * c * hw..(self.start + gn) * c * hw].copy_from_slice(g);
        } else {
            for b in 0..n {
                let dst = (b * c + self.start) * hw;
                dx[dst..dst + gc * hw].copy_from_slice(&g[b * gc * hw..(b + 1) * gc * hw]);
            }
        }
        vec![Some(Tensor::from_vec(full.shape(), dx).expect("narrow"))]
    }
}

fn concat<T: Scalar>(parts: &[&Var<T>], batch: bool) -> Result<Var<T>> {
    let first = parts
        .first()
        .ok_or_else(|| TensorError::Invalid("concat of nothing".into()))?;
    let (n0, c0, h, w) = first.value().dims4()?;
    let mut sizes = Vec::with_capacity(parts.len());
    for p in parts {
        let (n, c, ph, pw) = p.value().dims4()?;
        let ok = ph == h && pw == w && if batch { c == c0 } else { n == n0 };
        if !ok {
            return Err(TensorError::ShapeMismatch {
                left: first.shape().to_vec(),
                right: p.shape().to_vec(),
            });
        }
        sizes.push(if batch { n } else { c });
    }
    let total: usize = sizes.iter().sum();
    let hw = h * w;
    let mut data = Vec::with_capacity(parts.iter().map(|p| p.value().numel()).sum());
    let shape = if batch {
        for p in parts {
            data.extend_from_slice(p.value().data());
        }
        [total, c0, h, w]
    } else {
        for b in 0..n0 {
            for (p, &c) in parts.iter().zip(&sizes) {
                data.extend_from_slice(&p.value().data()[b * c * hw..(b + 1) * c * hw]);
            }
        }
        [n0, total, h, w]
    };
    let value = Tensor::from_vec(&shape, data)?;
    let parents = parts.iter().map(|&p| p.clone()).collect();
    Ok(Var::from_op(value, parents, ConcatBack { batch, sizes }))
}

impl<T: Scalar> Var<T> {
    pub fn concat_channels(parts: &[&Var<T>]) -> Result<Var<T>> {
        concat(parts, false)
    }

    pub fn concat_batch(parts: &[&Var<T>]) -> Result<Var<T>> {
        concat(parts, true)
    }

    pub fn narrow_channels(&self, start: usize, len: usize) -> Result<Var<T>> {
        self.narrow(false, start, len)
    }

    pub fn narrow_batch(&self, start: usize, len: usize) -> Result<Var<T>> {
        self.narrow(true, start, len)
    }

    fn narrow(&self, batch: bool, start: usize, len: usize) -> Result<Var<T>> {
        let (n, c, h, w) = self.value().dims4()?;
        let extent = if batch { n } else { c };
        if len == 0 || start + len > extent {
            return Err(TensorError::Invalid(format!(
                "narrow [{start}, {}) out of {extent}",
                start + len
            )));
        }
        let value = slice_axis(self.value().data(), [n, c, h, w], batch, start, len);
        Ok(Var::from_op(value, vec![self.clone()], NarrowBack { batch, start }))
    }
}
