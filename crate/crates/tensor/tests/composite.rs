use srunet_tensor::gradcheck::{central_difference, relative_error};
use srunet_tensor::{ConvSpec, Scalar, Tensor, Tensor64, Var};

fn wave(shape: &[usize], freq: f64) -> Tensor64 {
    Tensor::from_fn(shape, |i| ((i as f64 + 0.5) * freq).sin())
}

/// Smooth chain through most op families: strided and dilated convolution,
/// batch statistics, transposed convolution, resampling, softmax, reductions.
fn chain<T: Scalar>(x: &Var<T>, w1: &Var<T>, gamma: &Var<T>, beta: &Var<T>, w2: &Var<T>) -> Var<T> {
    let h = x.conv2d(w1, None, ConvSpec::new(2, 2, 2)).unwrap();
    let (h, _) = h.batch_norm_train(gamma, beta, T::lit(1e-5)).unwrap();
    let h = h.sigmoid();
    let h = h.conv_transpose2d(w2, None, ConvSpec::new(2, 1, 1)).unwrap();
    let h = h.resize_bilinear(9, 7).unwrap();
    let p = h.softmax_channels().unwrap().narrow_channels(1, 1).unwrap();
    let pooled = h.global_avg_pool().unwrap().sum_all();
    p.mul(&p).unwrap().mean_all().add(&pooled.scale(T::lit(0.1))).unwrap()
}

fn inputs() -> Vec<Tensor64> {
    vec![
        wave(&[2, 3, 8, 8], 0.37),
        wave(&[4, 3, 3, 3], 0.71).scale(0.4),
        wave(&[4], 1.3).map(|v| 1.0 + 0.3 * v),
        wave(&[4], 2.1).scale(0.2),
        wave(&[4, 2, 3, 3], 0.53).scale(0.5),
    ]
}

#[test]
fn composite_gradients_match_central_differences() {
    let xs = inputs();
    let leaves: Vec<Var<f64>> = xs.iter().cloned().map(Var::leaf).collect();
    let grads = chain(&leaves[0], &leaves[1], &leaves[2], &leaves[3], &leaves[4]).backward();
    let mut f = |t: &[Tensor64]| {
        let v: Vec<Var<f64>> = t.iter().cloned().map(Var::constant).collect();
        chain(&v[0], &v[1], &v[2], &v[3], &v[4]).value().data()[0]
    };
    for (which, leaf) in leaves.iter().enumerate() {
        let g = grads.get(leaf).expect("every input reaches the output");
        for index in (0..xs[which].numel()).step_by(5) {
            let fd = central_difference(&mut f, &xs, which, index, 1e-6);
            let err = relative_error(g.data()[index], fd, 1e-8);
            assert!(err < 1e-5, "input {which}[{index}]: analytic {} vs {fd} ({err:.1e})", g.data()[index]);
        }
    }
}

#[test]
fn single_and_double_precision_agree() {
    let xs = inputs();
    let v64: Vec<Var<f64>> = xs.iter().cloned().map(Var::constant).collect();
    let v32: Vec<Var<f32>> = xs.iter().map(|t| Var::constant(t.cast::<f32>())).collect();
    let a = chain(&v64[0], &v64[1], &v64[2], &v64[3], &v64[4]).value().data()[0];
    let b = chain(&v32[0], &v32[1], &v32[2], &v32[3], &v32[4]).value().data()[0] as f64;
    assert!((a - b).abs() < 1e-5 * a.abs().max(1.0), "{a} vs {b}");
}
