use crate::error::{Result, TensorError};
use crate::graph::{Backward, BackwardCtx, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Half-pixel-centre source taps for one axis: `(i0, i1, w0, w1)`.
fn axis_taps<T: Scalar>(len_in: usize, len_out: usize) -> Vec<(usize, usize, T, T)> {
    let scale = len_in as f64 / len_out as f64;
    (0..len_out)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(len_in - 1);
            let i1 = (i0 + 1).min(len_in - 1);
            let l1 = src - i0 as f64;
            (i0, i1, T::lit(1.0 - l1), T::lit(l1))
        })
        .collect()
}

struct BilinearBack<T> {
    ty: Vec<(usize, usize, T, T)>,
    tx: Vec<(usize, usize, T, T)>,
}

impl<T: Scalar> Backward<T> for BilinearBack<T> {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Tensor<T>>> {
        let (n, c, h, w) = ctx.input(0).dims4().expect("4-d");
        let (oh, ow) = (self.ty.len(), self.tx.len());
        let g = ctx.grad.data();
        let mut dx = vec![T::zero(); n * c * h * w];
        for plane in 0..n * c {
            let gi = &g[plane * oh * ow..(plane + 1) * oh * ow];
            let di = &mut dx[plane * h * w..(plane + 1) * h * w];
            for (oy, &(y0, y1, wy0, wy1)) in self.ty.iter().enumerate() {
                for (ox, &(x0, x1, wx0, wx1)) in self.tx.iter().enumerate() {
                    let v = gi[oy * ow + ox];
                    di[y0 * w + x0] += v * wy0 * wx0;
                    di[y0 * w + x1] += v * wy0 * wx1;
                    di[y1 * w + x0] += v * wy1 * wx0;
                    di[y1 * w + x1] += v * wy1 * wx1;
                }
            }
        }
        vec![Some(Tensor::from_vec(ctx.input(0).shape(), dx).expect("bilinear"))]
    }
}

impl<T: Scalar> Var<T> {
    /// Bilinear resize with half-pixel centres (`align_corners = false`).
    pub fn resize_bilinear(&self, out_h: usize, out_w: usize) -> Result<Var<T>> {
        let (n, c, h, w) = self.value().dims4()?;
        if out_h == 0 || out_w == 0 {
            return Err(TensorError::Invalid("resize to empty extent".into()));
        }
        let ty = axis_taps::<T>(h, out_h);
        let tx = axis_taps::<T>(w, out_w);
        let x = self.value().data();
        let mut out = vec![T::zero(); n * c * out_h * out_w];
        for plane in 0..n * c {
            let xi = &x[plane * h * w..(plane + 1) * h * w];
            let oi = &mut out[plane * out_h * out_w..(plane + 1) * out_h * out_w];
            for (oy, &(y0, y1, wy0, wy1)) in ty.iter().enumerate() {
                for (ox, &(x0, x1, wx0, wx1)) in tx.iter().enumerate() {
                    let top = xi[y0 * w + x0] * wx0 + xi[y0 * w + x1] * wx1;
                    let bot = xi[y1 * w + x0] * wx0 + xi[y1 * w + x1] * wx1;
                    oi[oy * out_w + ox] = top * wy0 + bot * wy1;
                }
            }
        }
        let value = Tensor::from_vec(&[n, c, out_h, out_w], out)?;
        Ok(Var::from_op(value, vec![self.clone()], BilinearBack { ty, tx }))
    }
}
