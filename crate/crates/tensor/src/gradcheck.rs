//! Central finite differences, the reference every analytic gradient in
//! this workspace is checked against.

use crate::tensor::Tensor;

/// Central difference of `f` with respect to element `index` of input `which`.
pub fn central_difference(
    f: &mut impl FnMut(&[Tensor<f64>]) -> f64,
    inputs: &[Tensor<f64>],
    which: usize,
    index: usize,
    step: f64,
) -> f64 {
    let mut probe = inputs.to_vec();
    let x0 = probe[which].data()[index];
    probe[which].data_mut()[index] = x0 + step;
    let up = f(&probe);
    probe[which].data_mut()[index] = x0 - step;
    let down = f(&probe);
    (up - down) / (2.0 * step)
}

/// `|a - b| / max(|a|, |b|, floor)`; the floor keeps vanishing gradients
/// from turning rounding noise into large relative errors.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}
