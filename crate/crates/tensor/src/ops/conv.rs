//! 2-d convolution and transposed convolution via im2col + GEMM.

use crate::error::{Result, TensorError};
use crate::graph::{Backward, BackwardCtx, Var};
use crate::scalar::{gemm, Scalar, Transpose};
use crate::tensor::Tensor;

/// Square-kernel convolution geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl ConvSpec {
    pub const fn new(stride: usize, padding: usize, dilation: usize) -> Self {
        Self {
            stride,
            padding,
            dilation,
        }
    }

    /// Stride 1 with "same" padding for an odd kernel.
    pub const fn same(kernel: usize) -> Self {
        Self::new(1, kernel / 2, 1)
    }

    pub fn out_len(&self, input: usize, kernel: usize) -> Option<usize> {
        let span = self.dilation * (kernel - 1) + 1;
        let padded = input + 2 * self.padding;
        (padded >= span).then(|| (padded - span) / self.stride + 1)
    }

    /// Output length of the transposed convolution with this geometry.
    pub fn transposed_out_len(&self, input: usize, kernel: usize) -> Option<usize> {
        let full = (input - 1) * self.stride + self.dilation * (kernel - 1) + 1;
        full.checked_sub(2 * self.padding).filter(|&n| n > 0)
    }
}

#[derive(Debug, Clone, Copy)]
struct Geom {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    spec: ConvSpec,
}

impl Geom {
    fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }
    fn cols(&self) -> usize {
        self.oh * self.ow
    }
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.spec.stride == 1 && self.spec.padding == 0
    }

    /// Range of output columns `ox` whose input column `ox*s + off` is inside `[0, w)`.
    #[inline]
    fn valid_range(&self, off: isize, len_in: usize, len_out: usize) -> (usize, usize) {
        let s = self.spec.stride as isize;
        let lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s };
        let hi_incl = (len_in as isize - 1 - off).div_euclid(s);
        let hi = (hi_incl + 1).clamp(0, len_out as isize);
        let lo = lo.min(hi);
        (lo as usize, hi as usize)
    }
}

fn im2col<T: Scalar>(x: &[T], g: &Geom, cols: &mut [T]) {
    let p = g.cols();
    let (s, d, pad) = (g.spec.stride, g.spec.dilation, g.spec.padding as isize);
    for ci in 0..g.c {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.kh {
            let yoff = (ki * d) as isize - pad;
            let (ylo, yhi) = g.valid_range(yoff, g.h, g.oh);
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * p..(row + 1) * p];
                let xoff = (kj * d) as isize - pad;
                let (xlo, xhi) = g.valid_range(xoff, g.w, g.ow);
                for oy in 0..g.oh {
                    let out = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if oy < ylo || oy >= yhi || xlo >= xhi {
                        out.fill(T::zero());
                        continue;
                    }
                    let iy = (oy * s) as isize + yoff;
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    out[..xlo].fill(T::zero());
                    out[xhi..].fill(T::zero());
                    let ix0 = (xlo * s) as isize + xoff;
                    if s == 1 {
                        let start = ix0 as usize;
                        out[xlo..xhi].copy_from_slice(&src[start..start + (xhi - xlo)]);
                    } else {
                        for (k, o) in out[xlo..xhi].iter_mut().enumerate() {
                            *o = src[ix0 as usize + k * s];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates columns back into an image.
fn col2im<T: Scalar>(cols: &[T], g: &Geom, x: &mut [T]) {
    let p = g.cols();
    let (s, d, pad) = (g.spec.stride, g.spec.dilation, g.spec.padding as isize);
    for ci in 0..g.c {
        let plane = &mut x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.kh {
            let yoff = (ki * d) as isize - pad;
            let (ylo, yhi) = g.valid_range(yoff, g.h, g.oh);
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let src = &cols[row * p..(row + 1) * p];
                let xoff = (kj * d) as isize - pad;
                let (xlo, xhi) = g.valid_range(xoff, g.w, g.ow);
                if xlo >= xhi {
                    continue;
                }
                for oy in ylo..yhi {
                    let iy = ((oy * s) as isize + yoff) as usize;
                    let dst = &mut plane[iy * g.w..(iy + 1) * g.w];
                    let row_in = &src[oy * g.ow..(oy + 1) * g.ow];
                    let ix0 = ((xlo * s) as isize + xoff) as usize;
                    for (k, &v) in row_in[xlo..xhi].iter().enumerate() {
                        dst[ix0 + k * s] += v;
                    }
                }
            }
        }
    }
}

fn check_bias<T: Scalar>(bias: Option<&Var<T>>, channels: usize) -> Result<()> {
    if let Some(b) = bias {
        if b.shape() != [channels] {
            return Err(TensorError::Invalid(format!(
                "bias shape {:?}, expected [{channels}]",
                b.shape()
            )));
        }
    }
    Ok(())
}

fn add_bias<T: Scalar>(out: &mut [T], bias: &[T], plane: usize) {
    for (chunk, &b) in out.chunks_mut(plane).zip(bias.iter().cycle()) {
        for v in chunk {
            *v += b;
        }
    }
}

fn bias_grad<T: Scalar>(grad: &Tensor<T>) -> Tensor<T> {
    let (n, c, h, w) = grad.dims4().expect("bias grad 4-d");
    let mut db = vec![T::zero(); c];
    for b in 0..n {
        for (k, acc) in db.iter_mut().enumerate() {
            *acc += grad.data()[(b * c + k) * h * w..(b * c + k + 1) * h * w].iter().copied().sum();
        }
    }
    Tensor::from_vec(&[c], db).expect("bias grad")
}

struct Conv2dBack {
    geom: Geom,
    co: usize,
}

impl<T: Scalar> Backward<T> for Conv2dBack {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Tensor<T>>> {
        let g = &self.geom;
        let (x, w) = (ctx.input(0), ctx.input(1));
        let n = x.shape()[0];
        let (k, p) = (g.rows(), g.cols());
        let in_plane = g.c * g.h * g.w;
        let out_plane = self.co * p;
        let dy = ctx.grad.data();
        let mut dw = ctx.needs(1).then(|| vec![T::zero(); self.co * k]);
        let mut dx = ctx.needs(0).then(|| vec![T::zero(); x.numel()]);
        let mut cols = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); k * p] };
        for b in 0..n {
            let dyb = &dy[b * out_plane..(b + 1) * out_plane];
            let xb = &x.data()[b * in_plane..(b + 1) * in_plane];
            if let Some(dw) = dw.as_mut() {
                let colsb: &[T] = if g.is_pointwise() {
                    xb
                } else {
                    im2col(xb, g, &mut cols);
                    &cols
                };
                gemm(Transpose::No, Transpose::Yes, self.co, p, k, dyb, colsb, T::one(), dw);
            }
            if let Some(dx) = dx.as_mut() {
                let dxb = &mut dx[b * in_plane..(b + 1) * in_plane];
                if g.is_pointwise() {
                    gemm(Transpose::Yes, Transpose::No, k, self.co, p, w.data(), dyb, T::zero(), dxb);
                } else {
                    gemm(Transpose::Yes, Transpose::No, k, self.co, p, w.data(), dyb, T::zero(), &mut cols);
                    col2im(&cols, g, dxb);
                }
            }
        }
        let mut out = vec![
            dx.map(|d| Tensor::from_vec(x.shape(), d).expect("dx")),
            dw.map(|d| Tensor::from_vec(w.shape(), d).expect("dw")),
        ];
        if ctx.parents.len() == 3 {
            out.push(ctx.needs(2).then(|| bias_grad(ctx.grad)));
        }
        out
    }
}

struct ConvTranspose2dBack {
    /// Geometry of the equivalent forward convolution (output → input).
    geom: Geom,
    ci: usize,
}

impl<T: Scalar> Backward<T> for ConvTranspose2dBack {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Tensor<T>>> {
        let g = &self.geom;
        let (x, w) = (ctx.input(0), ctx.input(1));
        let n = x.shape()[0];
        let (k, p) = (g.rows(), g.cols());
        let in_plane = self.ci * p;
        let out_plane = g.c * g.h * g.w;
        let mut dw = ctx.needs(1).then(|| vec![T::zero(); self.ci * k]);
        let mut dx = ctx.needs(0).then(|| vec![T::zero(); x.numel()]);
        let mut cols = vec![T::zero(); k * p];
        for b in 0..n {
            let dyb = &ctx.grad.data()[b * out_plane..(b + 1) * out_plane];
            im2col(dyb, g, &mut cols);
            if let Some(dx) = dx.as_mut() {
                let dxb = &mut dx[b * in_plane..(b + 1) * in_plane];
                gemm(Transpose::No, Transpose::No, self.ci, k, p, w.data(), &cols, T::zero(), dxb);
            }
            if let Some(dw) = dw.as_mut() {
                let xb = &x.data()[b * in_plane..(b + 1) * in_plane];
                gemm(Transpose::No, Transpose::Yes, self.ci, p, k, xb, &cols, T::one(), dw);
            }
        }
        let mut out = vec![
            dx.map(|d| Tensor::from_vec(x.shape(), d).expect("dx")),
            dw.map(|d| Tensor::from_vec(w.shape(), d).expect("dw")),
        ];
        if ctx.parents.len() == 3 {
            out.push(ctx.needs(2).then(|| bias_grad(ctx.grad)));
        }
        out
    }
}

impl<T: Scalar> Var<T> {
    /// Cross-correlation of `N×Ci×H×W` input with `Co×Ci×Kh×Kw` weights.
    pub fn conv2d(&self, weight: &Var<T>, bias: Option<&Var<T>>, spec: ConvSpec) -> Result<Var<T>> {
        let (n, c, h, w) = self.value().dims4()?;
        let (co, wc, kh, kw) = weight.value().dims4()?;
        if wc != c {
            return Err(TensorError::Invalid(format!(
                "conv2d: input has {c} channels, weight expects {wc}"
            )));
        }
        check_bias(bias, co)?;
        let (Some(oh), Some(ow)) = (spec.out_len(h, kh), spec.out_len(w, kw)) else {
            return Err(TensorError::Invalid(format!(
                "conv2d: kernel {kh}x{kw} {spec:?} does not fit {h}x{w}"
            )));
        };
        let geom = Geom {
            c,
            h,
            w,
            kh,
            kw,
            oh,
            ow,
            spec,
        };
        let (k, p) = (geom.rows(), geom.cols());
        let mut out = vec![T::zero(); n * co * p];
        let mut cols = if geom.is_pointwise() { Vec::new() } else { vec![T::zero(); k * p] };
        let x = self.value().data();
        for b in 0..n {
            let xb = &x[b * c * h * w..(b + 1) * c * h * w];
            let colsb: &[T] = if geom.is_pointwise() {
                xb
            } else {
                im2col(xb, &geom, &mut cols);
                &cols
            };
            let ob = &mut out[b * co * p..(b + 1) * co * p];
            gemm(Transpose::No, Transpose::No, co, k, p, weight.value().data(), colsb, T::zero(), ob);
            if let Some(bias) = bias {
                add_bias(ob, bias.value().data(), p);
            }
        }
        let value = Tensor::from_vec(&[n, co, oh, ow], out)?;
        let mut parents = vec![self.clone(), weight.clone()];
        parents.extend(bias.cloned());
        Ok(Var::from_op(value, parents, Conv2dBack { geom, co }))
    }

    /// Transposed convolution with `Ci×Co×Kh×Kw` weights (PyTorch layout).
    pub fn conv_transpose2d(&self, weight: &Var<T>, bias: Option<&Var<T>>, spec: ConvSpec) -> Result<Var<T>> {
        let (n, ci, h, w) = self.value().dims4()?;
        let (wci, co, kh, kw) = weight.value().dims4()?;
        if wci != ci {
            return Err(TensorError::Invalid(format!(
                "conv_transpose2d: input has {ci} channels, weight expects {wci}"
            )));
        }
        check_bias(bias, co)?;
        let (Some(oh), Some(ow)) = (spec.transposed_out_len(h, kh), spec.transposed_out_len(w, kw)) else {
            return Err(TensorError::Invalid("conv_transpose2d: empty output".into()));
        };
        let geom = Geom {
            c: co,
            h: oh,
            w: ow,
            kh,
            kw,
            oh: h,
            ow: w,
            spec,
        };
        debug_assert_eq!(spec.out_len(oh, kh), Some(h));
        let (k, p) = (geom.rows(), geom.cols());
        let mut out = vec![T::zero(); n * co * oh * ow];
        let mut cols = vec![T::zero(); k * p];
        for b in 0..n {
            let xb = &self.value().data()[b * ci * p..(b + 1) * ci * p];
            gemm(Transpose::Yes, Transpose::No, k, ci, p, weight.value().data(), xb, T::zero(), &mut cols);
            let ob = &mut out[b * co * oh * ow..(b + 1) * co * oh * ow];
            col2im(&cols, &geom, ob);
            if let Some(bias) = bias {
                add_bias(ob, bias.value().data(), oh * ow);
            }
        }
        let value = Tensor::from_vec(&[n, co, oh, ow], out)?;
        let mut parents = vec![self.clone(), weight.clone()];
        parents.extend(bias.cloned());
        Ok(Var::from_op(value, parents, ConvTranspose2dBack { geom, ci }))
    }
}

/// Direct-loop convolution used only as an independent test oracle.
#[cfg(test)]
pub(crate) fn conv2d_naive(x: &Tensor<f64>, w: &Tensor<f64>, spec: ConvSpec) -> Tensor<f64> {
    let (n, c, h, wd) = x.dims4().unwrap();
    let (co, _, kh, kw) = w.dims4().unwrap();
    let oh = spec.out_len(h, kh).unwrap();
    let ow = spec.out_len(wd, kw).unwrap();
    Tensor::from_fn(&[n, co, oh, ow], |i| {
        let ox = i % ow;
        let oy = (i / ow) % oh;
        let o = (i / (ow * oh)) % co;
        let b = i / (ow * oh * co);
        let mut acc = 0.0;
        for ci in 0..c {
            for ki in 0..kh {
                for kj in 0..kw {
                    let iy = (oy * spec.stride + ki * spec.dilation) as isize - spec.padding as isize;
                    let ix = (ox * spec.stride + kj * spec.dilation) as isize - spec.padding as isize;
                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                        acc += x.at4(b, ci, iy as usize, ix as usize) * w.at4(o, ci, ki, kj);
                    }
                }
            }
        }
        acc
    })
}
