use crate::error::Result;
use crate::gradcheck::{central_difference, relative_error};
use crate::graph::Var;
use crate::tensor::Tensor;

/// Asserts that every input element's analytic gradient matches central
/// differences of the scalar produced by `f`.
pub(crate) fn check_gradients(inputs: &[Tensor<f64>], f: impl Fn(&[Var<f64>]) -> Result<Var<f64>>) {
    let leaves: Vec<_> = inputs.iter().cloned().map(Var::leaf).collect();
    let out = f(&leaves).unwrap();
    assert_eq!(out.value().numel(), 1, "objective must be scalar");
    let grads = out.backward();
    let mut eval = |xs: &[Tensor<f64>]| {
        let vars: Vec<_> = xs.iter().cloned().map(Var::constant).collect();
        f(&vars).unwrap().value().data()[0]
    };
    for (which, leaf) in leaves.iter().enumerate() {
        let analytic = grads
            .get(leaf)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(leaf.shape()));
        for i in 0..leaf.value().numel() {
            let numeric = central_difference(&mut eval, inputs, which, i, 1e-6);
            let a = analytic.data()[i];
            let err = relative_error(a, numeric, 1e-6);
            assert!(err < 1e-5, "input {which}[{i}]: analytic {a} vs numeric {numeric} (rel {err})");
        }
    }
}
