//! Central finite differences; the independent oracle for `backprop`.

use super::tensor::Tensor;

/// Central-difference gradient estimate `(f(p + h e_i) - f(p - h e_i)) / 2h`
/// per coordinate.
pub fn finite_diff_grad(f: impl Fn(&Tensor) -> f64, p: &Tensor, h: f64) -> Tensor {
    assert!(h > 0.0, "step size must be positive");
    let mut grad = Tensor::zeros(p.shape());
    let mut probe = p.clone();
    for i in 0..p.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe);
        probe.data_mut()[i] = orig - h;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (up - down) / (2.0 * h);
    }
    grad
}
