//! Minimal dense real-tensor engine with reverse-mode autodiff and Adam.
//!
//! Everything is 64-bit real; complex quantities elsewhere in the crate are
//! carried as paired real tensors (a leading size-2 axis in serialized form).

mod adam;
pub mod complex;
mod finite_diff;
mod graph;
mod matmul;
mod tensor;

pub use adam::AdamState;
pub use finite_diff::finite_diff_grad;
pub use graph::{Gradients, Graph, NodeId};
pub use tensor::Tensor;

use rand::Rng;
use rand_distr::StandardNormal;

/// Tensor of i.i.d. standard normal entries.
pub fn randn(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape/data length agree by construction")
}

/// Tensor of uniform entries in `[-a, a)`.
pub fn rand_uniform(shape: &[usize], a: f64, rng: &mut impl Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-a..a)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape/data length agree by construction")
}

/// Xavier-style init for a `[fan_in, fan_out]` weight matrix.
pub fn xavier(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Tensor {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    rand_uniform(&[fan_in, fan_out], a, rng)
}

#[cfg(test)]
mod tests;
