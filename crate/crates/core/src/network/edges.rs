use srunet_tensor::{ConvSpec, Scalar, Tensor, Var};

use super::layers::Conv;
use super::params::{Ctx, ParamBuilder};
use crate::error::Result;

/// Sobel gradient magnitude of the channel-mean image, replicate padding,
/// min-max scaled to `[0, 1]` per sample. Flat images give all zeros.
pub fn fixed_gradient_edges<T: Scalar>(image: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = image.dims4()?;
    let inv_c = T::one() / T::from_usize(c).expect("c");
    let mut out = Vec::with_capacity(n * h * w);
    for b in 0..n {
        let mut gray = vec![T::zero(); h * w];
        for ch in 0..c {
            for (g, &v) in gray.iter_mut().zip(image.plane(b, ch)) {
                *g += v * inv_c;
            }
        }
        let at = |y: isize, x: isize| {
            let y = y.clamp(0, h as isize - 1) as usize;
            let x = x.clamp(0, w as isize - 1) as usize;
            gray[y * w + x]
        };
        let two = T::lit(2.0);
        let mut mag = Vec::with_capacity(h * w);
        for y in 0..h as isize {
            for x in 0..w as isize {
                let gx = (at(y - 1, x + 1) + two * at(y, x + 1) + at(y + 1, x + 1))
                    - (at(y - 1, x - 1) + two * at(y, x - 1) + at(y + 1, x - 1));
                let gy = (at(y + 1, x - 1) + two * at(y + 1, x) + at(y + 1, x + 1))
                    - (at(y - 1, x - 1) + two * at(y - 1, x) + at(y - 1, x + 1));
                mag.push((gx * gx + gy * gy).sqrt());
            }
        }
        let lo = mag.iter().copied().fold(T::infinity(), T::min);
        let hi = mag.iter().copied().fold(T::neg_infinity(), T::max);
        if hi > lo {
            let inv = T::one() / (hi - lo);
            out.extend(mag.iter().map(|&m| (m - lo) * inv));
        } else {
            out.extend(std::iter::repeat_n(T::zero(), h * w));
        }
    }
    Ok(Tensor::from_vec(&[n, 1, h, w], out)?)
}

/// Three-stage side-output edge network with a learned 1×1 fusion and a
/// sigmoid output.
#[derive(Debug, Clone)]
pub struct HedLite {
    stages: Vec<[Conv; 2]>,
    sides: Vec<Conv>,
    fuse: Conv,
}

impl HedLite {
    pub fn new<T: Scalar>(b: &mut ParamBuilder<T>) -> Self {
        b.scope("hed", |b| {
            let widths = [8, 16, 32];
            let mut cin = 3;
            let mut stages = Vec::new();
            let mut sides = Vec::new();
            for (i, &wd) in widths.iter().enumerate() {
                stages.push([
                    Conv::same(b, &format!("stage{i}.conv1"), cin, wd, 3, true),
                    Conv::same(b, &format!("stage{i}.conv2"), wd, wd, 3, true),
                ]);
                sides.push(Conv::same(b, &format!("side{i}"), wd, 1, 1, true));
                cin = wd;
            }
            let fuse = Conv::new(b, "fuse", 3, 1, 1, ConvSpec::same(1), true);
            HedLite { stages, sides, fuse }
        })
    }

    pub fn forward<T: Scalar>(&self, ctx: &Ctx<'_, T>, image: &Var<T>) -> Result<Var<T>> {
        let (_, _, h, w) = image.value().dims4()?;
        let mut x = image.clone();
        let mut side_maps = Vec::with_capacity(3);
        for (i, (convs, side)) in self.stages.iter().zip(&self.sides).enumerate() {
            if i > 0 {
                x = x.max_pool2d(2, 2, 0)?;
            }
            for c in convs {
                x = c.forward(ctx, &x)?.relu();
            }
            let s = side.forward(ctx, &x)?;
            side_maps.push(if i > 0 { s.resize_bilinear(h, w)? } else { s });
        }
        let refs: Vec<&Var<T>> = side_maps.iter().collect();
        Ok(self.fuse.forward(ctx, &Var::concat_channels(&refs)?)?.sigmoid())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_image_has_no_edges() {
        let img = Tensor::<f64>::full(&[2, 3, 16, 16], 0.4);
        let e = fixed_gradient_edges(&img).unwrap();
        assert_eq!(e.shape(), &[2, 1, 16, 16]);
        assert!(e.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn vertical_step_peaks_on_step_columns() {
        // Step between columns 7 and 8: the Sobel x-kernel straddles it only
        // at those two columns, giving |gx| = 4·step there and 0 elsewhere.
        let img = Tensor::<f64>::from_fn(&[1, 3, 16, 16], |i| if i % 16 >= 8 { 1.0 } else { 0.0 });
        let e = fixed_gradient_edges(&img).unwrap();
        for y in 0..16 {
            for x in 0..16 {
                let v = e.at4(0, 0, y, x);
                let want = if x == 7 || x == 8 { 1.0 } else { 0.0 };
                assert!((v - want).abs() < 1e-12, "({y},{x}) = {v}");
            }
        }
    }

    #[test]
    fn outputs_in_unit_interval() {
        let img = Tensor::<f64>::from_fn(&[1, 3, 32, 32], |i| ((i * 7919) % 101) as f64 / 100.0);
        let e = fixed_gradient_edges(&img).unwrap();
        assert!(e.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        let mut b = ParamBuilder::<f64>::new(3);
        let hed = HedLite::new(&mut b);
        let store = b.finish();
        let out = hed.forward(&Ctx::eval(&store), &Var::constant(img)).unwrap();
        assert_eq!(out.shape(), &[1, 1, 32, 32]);
        assert!(out.value().data().iter().all(|&v| v > 0.0 && v < 1.0));
    }
}
