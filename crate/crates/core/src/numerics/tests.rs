use super::complex::{cx_hermitian, cx_matmul, cx_normalize, CxNode};
use super::*;
use crate::rng::stream;

fn rel_err(a: f64, b: f64) -> f64 {
    let denom = a.abs().max(b.abs());
    if denom < 1e-8 {
        0.0
    } else {
        (a - b).abs() / denom
    }
}

#[test]
fn backprop_sum_is_all_ones() {
    let mut g = Graph::new();
    let p = g.leaf(Tensor::new(vec![2, 3], vec![0.5, -1.0, 2.0, 3.0, -0.25, 0.0]).unwrap());
    let loss = g.sum(p);
    let grads = g.backprop(loss).unwrap();
    assert_eq!(grads.get(p), Tensor::ones(&[2, 3]));
}

#[test]
fn backprop_quadratic_is_2p() {
    let mut g = Graph::new();
    let p = g.leaf(Tensor::new(vec![1], vec![3.0]).unwrap());
    let sq = g.mul(p, p).unwrap();
    let loss = g.sum(sq);
    let grads = g.backprop(loss).unwrap();
    assert_eq!(grads.get(p).data(), &[6.0]);
}

#[test]
fn backprop_rejects_nonscalar_loss() {
    let mut g = Graph::new();
    let p = g.leaf(Tensor::ones(&[3]));
    assert!(g.backprop(p).is_err());
}

#[test]
fn disconnected_leaf_gets_zero_gradient() {
    let mut g = Graph::new();
    let p = g.leaf(Tensor::ones(&[2]));
    let q = g.leaf(Tensor::ones(&[4]));
    let loss = g.sum(p);
    let grads = g.backprop(loss).unwrap();
    assert_eq!(grads.get(q), Tensor::zeros(&[4]));
}

#[test]
fn finite_diff_on_sum_and_quadratic() {
    let p = Tensor::new(vec![2], vec![2.0, -1.0]).unwrap();
    let g = finite_diff_grad(|t| t.data().iter().sum(), &p, 1e-5);
    assert!(g.data().iter().all(|&v| (v - 1.0).abs() < 1e-8));
    let g = finite_diff_grad(|t| t.data().iter().map(|v| v * v).sum(), &p, 1e-5);
    assert!((g.data()[0] - 4.0).abs() < 1e-8);
    assert!((g.data()[1] + 2.0).abs() < 1e-8);
}

/// Builds the loss for one op kind from a parameter tensor, so the same
/// closure serves both backprop and the finite-difference oracle.
fn op_losses() -> Vec<(&'static str, Vec<usize>, fn(&mut Graph, NodeId) -> NodeId)> {
    vec![
        ("add", vec![2, 3], |g, p| {
            let c = g.leaf(Tensor::filled(&[2, 3], 0.7));
            let x = g.add(p, c).unwrap();
            let w = g.leaf(weights(&[2, 3]));
            let x = g.mul(x, w).unwrap();
            g.sum(x)
        }),
        ("sub", vec![2, 3], |g, p| {
            let c = g.leaf(Tensor::filled(&[2, 3], 0.7));
            let x = g.sub(c, p).unwrap();
            let w = g.leaf(weights(&[2, 3]));
            let x = g.mul(x, w).unwrap();
            g.sum(x)
        }),
        ("mul", vec![2, 3], |g, p| {
            let c = g.leaf(weights(&[2, 3]));
            let x = g.mul(p, c).unwrap();
            let x2 = g.mul(x, x).unwrap();
            g.sum(x2)
        }),
        ("add_scalar", vec![4], |g, p| {
            let x = g.add_scalar(p, 1.5);
            let x2 = g.mul(x, x).unwrap();
            g.sum(x2)
        }),
        ("mul_scalar", vec![4], |g, p| {
            let x = g.mul_scalar(p, -2.5);
            let x2 = g.mul(x, x).unwrap();
            g.sum(x2)
        }),
        ("matmul_lhs", vec![3, 4], |g, p| {
            let b = g.leaf(weights(&[4, 2]));
            let x = g.matmul(p, b).unwrap();
            let x2 = g.mul(x, x).unwrap();
            g.sum(x2)
        }),
        ("matmul_rhs", vec![4, 2], |g, p| {
            let a = g.leaf(weights(&[3, 4]));
            let x = g.matmul(a, p).unwrap();
            let x2 = g.mul(x, x).unwrap();
            g.sum(x2)
        }),
        ("transpose", vec![3, 4], |g, p| {
            let x = g.transpose(p).unwrap();
            let w = g.leaf(weights(&[4, 3]));
            let x = g.mul(x, w).unwrap();
            g.sum(x)
        }),
        ("reshape", vec![2, 6], |g, p| {
            let x = g.reshape(p, vec![3, 4]).unwrap();
            let w = g.leaf(weights(&[3, 4]));
            let x = g.mul(x, w).unwrap();
            g.sum(x)
        }),
        ("concat_cols", vec![2, 3], |g, p| {
            let b = g.leaf(weights(&[2, 2]));
            let x = g.concat_cols(p, b).unwrap();
            let w = g.leaf(weights(&[2, 5]));
            let x = g.mul(x, w).unwrap();
            let x2 = g.mul(x, x).unwrap();
            g.sum(x2)
        }),
        ("slice_cols", vec![2, 5], |g, p| {
            let x = g.slice_cols(p, 1, 4).unwrap();
            let w = g.leaf(weights(&[2, 3]));
            let x = g.mul(x, w).unwrap();
            let x2 = g.mul(x, x).unwrap();
            g.sum(x2)
        }),
        ("sum_via_mul", vec![2, 3], |g, p| {
            let x2 = g.mul(p, p).unwrap();
            g.sum(x2)
        }),
        ("mean", vec![2, 3], |g, p| {
            let x2 = g.mul(p, p).unwrap();
            g.mean(x2)
        }),
        ("tanh", vec![5], |g, p| {
            let x = g.tanh(p);
            let w = g.leaf(weights(&[5]));
            let x = g.mul(x, w).unwrap();
            g.sum(x)
        }),
        ("relu", vec![6], |g, p| {
            let x = g.relu(p);
            let w = g.leaf(weights(&[6]));
            let x = g.mul(x, w).unwrap();
            g.sum(x)
        }),
        ("sigmoid", vec![5], |g, p| {
            let x = g.sigmoid(p);
            let w = g.leaf(weights(&[5]));
            let x = g.mul(x, w).unwrap();
            g.sum(x)
        }),
        ("sin", vec![5], |g, p| {
            let x = g.sin(p);
            let w = g.leaf(weights(&[5]));
            let x = g.mul(x, w).unwrap();
            g.sum(x)
        }),
        ("cos", vec![5], |g, p| {
            let x = g.cos(p);
            let w = g.leaf(weights(&[5]));
            let x = g.mul(x, w).unwrap();
            g.sum(x)
        }),
        ("sqrt", vec![5], |g, p| {
            // keep inputs positive: square first
            let x2 = g.mul(p, p).unwrap();
            let x2 = g.add_scalar(x2, 1.0);
            let x = g.sqrt(x2);
            g.sum(x)
        }),
        ("recip", vec![5], |g, p| {
            let x2 = g.mul(p, p).unwrap();
            let x2 = g.add_scalar(x2, 1.0);
            let x = g.recip(x2);
            g.sum(x)
        }),
        ("add_bias", vec![4], |g, p| {
            let a = g.leaf(weights(&[3, 4]));
            let x = g.add_bias(a, p).unwrap();
            let x2 = g.mul(x, x).unwrap();
            g.sum(x2)
        }),
        ("add_bias_input", vec![3, 4], |g, p| {
            let b = g.leaf(weights(&[4]));
            let x = g.add_bias(p, b).unwrap();
            let x2 = g.mul(x, x).unwrap();
            g.sum(x2)
        }),
        ("scale", vec![1], |g, p| {
            let a = g.leaf(weights(&[2, 3]));
            let x = g.scale(a, p).unwrap();
            let x2 = g.mul(x, x).unwrap();
            g.sum(x2)
        }),
        ("scale_input", vec![2, 3], |g, p| {
            let s = g.leaf(Tensor::scalar(0.75));
            let x = g.scale(p, s).unwrap();
            let x2 = g.mul(x, x).unwrap();
            g.sum(x2)
        }),
        ("normalize", vec![4], |g, p| {
            let x = g.normalize(p, 1e-12).unwrap();
            let w = g.leaf(weights(&[4]));
            let x = g.mul(x, w).unwrap();
            g.sum(x)
        }),
    ]
}

fn weights(shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|i| ((i as f64) * 0.713 + 0.29).sin() + 0.1).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Every differentiable op kind: backprop vs central differences at
/// relative error < 1e-4 on 100 random inputs spread across the ops.
#[test]
fn backprop_matches_finite_differences_per_op() {
    let cases = op_losses();
    let reps = (100 + cases.len() - 1) / cases.len();
    for (name, shape, build) in cases {
        for rep in 0..reps {
            let mut rng = stream(42, name, rep as u64);
            let p = randn(&shape, &mut rng);
            let mut g = Graph::new();
            let pid = g.leaf(p.clone());
            let loss = build(&mut g, pid);
            let grads = g.backprop(loss).unwrap();
            let analytic = grads.get(pid);

            let fd = finite_diff_grad(
                |t| {
                    let mut g = Graph::new();
                    let pid = g.leaf(t.clone());
                    let loss = build(&mut g, pid);
                    g.value(loss).item()
                },
                &p,
                1e-5,
            );
            for (i, (&a, &b)) in analytic.data().iter().zip(fd.data()).enumerate() {
                assert!(
                    rel_err(a, b) < 1e-4,
                    "{name}[{i}] rep {rep}: backprop {a} vs fd {b}"
                );
            }
        }
    }
}

/// Random 3-layer tanh MLP: every parameter gradient vs the oracle.
#[test]
fn mlp_gradients_match_finite_differences() {
    let mut rng = stream(7, "mlp-gradcheck", 0);
    let input = randn(&[2, 4], &mut rng);
    let target = randn(&[2, 3], &mut rng);
    let params: Vec<Tensor> = vec![
        xavier(4, 8, &mut rng),
        Tensor::zeros(&[8]),
        xavier(8, 8, &mut rng),
        Tensor::zeros(&[8]),
        xavier(8, 3, &mut rng),
        Tensor::zeros(&[3]),
    ];

    let forward = |g: &mut Graph, params: &[Tensor]| -> NodeId {
        let x = g.leaf(input.clone());
        let t = g.leaf(target.clone());
        let ids: Vec<NodeId> = params.iter().map(|p| g.leaf(p.clone())).collect();
        let mut h = x;
        for layer in 0..3 {
            let z = g.matmul(h, ids[2 * layer]).unwrap();
            let z = g.add_bias(z, ids[2 * layer + 1]).unwrap();
            h = if layer < 2 { g.tanh(z) } else { z };
        }
        let d = g.sub(h, t).unwrap();
        g.mean_sq(d).unwrap()
    };

    // analytic gradients
    let mut g = Graph::new();
    let x = g.leaf(input.clone());
    let t = g.leaf(target.clone());
    let ids: Vec<NodeId> = params.iter().map(|p| g.leaf(p.clone())).collect();
    let mut h = x;
    for layer in 0..3 {
        let z = g.matmul(h, ids[2 * layer]).unwrap();
        let z = g.add_bias(z, ids[2 * layer + 1]).unwrap();
        h = if layer < 2 { g.tanh(z) } else { z };
    }
    let d = g.sub(h, t).unwrap();
    let loss = g.mean_sq(d).unwrap();
    let grads = g.backprop(loss).unwrap();

    for (pi, pid) in ids.iter().enumerate() {
        let analytic = grads.get(*pid);
        let fd = finite_diff_grad(
            |pt| {
                let mut probe = params.clone();
                probe[pi] = pt.clone();
                let mut g = Graph::new();
                let loss = forward(&mut g, &probe);
                g.value(loss).item()
            },
            &params[pi],
            1e-5,
        );
        for (i, (&a, &b)) in analytic.data().iter().zip(fd.data()).enumerate() {
            assert!(
                rel_err(a, b) < 1e-4,
                "param {pi} entry {i}: backprop {a} vs fd {b}"
            );
        }
    }
}

#[test]
fn forward_is_deterministic() {
    let run = || {
        let mut rng = stream(3, "det", 0);
        let mut g = Graph::new();
        let a = g.leaf(randn(&[4, 4], &mut rng));
        let b = g.leaf(randn(&[4, 4], &mut rng));
        let x = g.matmul(a, b).unwrap();
        let x = g.tanh(x);
        let s = g.sum(x);
        g.value(s).item()
    };
    assert_eq!(run().to_bits(), run().to_bits());
}

#[test]
fn adam_zero_gradient_is_identity() {
    let mut params = vec![Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap()];
    let grads = vec![Tensor::zeros(&[3])];
    let mut adam = AdamState::new(&params, 0.1);
    let before = params[0].clone();
    for _ in 0..5 {
        adam.step(&mut params, &grads).unwrap();
    }
    assert_eq!(params[0], before);
}

#[test]
fn adam_first_step_moves_against_gradient() {
    let mut params = vec![Tensor::scalar(1.0)];
    let grads = vec![Tensor::scalar(1.0)];
    let mut adam = AdamState::new(&params, 0.1);
    adam.step(&mut params, &grads).unwrap();
    let p = params[0].item();
    assert!(p < 1.0, "p = {p}");
    // first-step magnitude is the learning rate (up to eps)
    assert!((1.0 - p - 0.1).abs() < 1e-6, "step was {}", 1.0 - p);
}

#[test]
fn adam_converges_on_quadratic() {
    // loss (p - 3)^2, gradient 2(p - 3)
    let mut params = vec![Tensor::scalar(0.0)];
    let mut adam = AdamState::new(&params, 0.05);
    for _ in 0..500 {
        let grad = 2.0 * (params[0].item() - 3.0);
        adam.step(&mut params, &[Tensor::scalar(grad)]).unwrap();
    }
    assert!((params[0].item() - 3.0).abs() < 1e-2);
}

#[test]
fn adam_rejects_shape_mismatch() {
    let mut params = vec![Tensor::zeros(&[3])];
    let mut adam = AdamState::new(&params, 0.1);
    assert!(adam.step(&mut params, &[Tensor::zeros(&[4])]).is_err());
}

#[test]
fn complex_matmul_matches_scalar_reference() {
    use num_complex::Complex64;
    let mut rng = stream(9, "cxmm", 0);
    let (m, k, n) = (3, 4, 2);
    let ar = randn(&[m, k], &mut rng);
    let ai = randn(&[m, k], &mut rng);
    let br = randn(&[k, n], &mut rng);
    let bi = randn(&[k, n], &mut rng);

    let mut g = Graph::new();
    let a = CxNode::new(g.leaf(ar.clone()), g.leaf(ai.clone()));
    let b = CxNode::new(g.leaf(br.clone()), g.leaf(bi.clone()));
    let c = cx_matmul(&mut g, a, b).unwrap();

    for i in 0..m {
        for j in 0..n {
            let mut want = Complex64::new(0.0, 0.0);
            for p in 0..k {
                let av = Complex64::new(ar.data()[i * k + p], ai.data()[i * k + p]);
                let bv = Complex64::new(br.data()[p * n + j], bi.data()[p * n + j]);
                want += av * bv;
            }
            let got_re = g.value(c.re).data()[i * n + j];
            let got_im = g.value(c.im).data()[i * n + j];
            assert!((got_re - want.re).abs() < 1e-12);
            assert!((got_im - want.im).abs() < 1e-12);
        }
    }
}

#[test]
fn complex_hermitian_normalize_gradcheck() {
    let mut rng = stream(11, "cxgrad", 0);
    let p = randn(&[2, 3], &mut rng);

    let build = |g: &mut Graph, pid: NodeId| -> NodeId {
        let im = g.leaf(weights(&[2, 3]));
        let a = CxNode::new(pid, im);
        let ah = cx_hermitian(g, a).unwrap();
        let prod = cx_matmul(g, a, ah).unwrap();
        let v = cx_normalize(g, prod, 1e-9).unwrap();
        let msq = super::complex::cx_modsq(g, v).unwrap();
        let w = g.leaf(weights(&[2, 2]));
        let weighted = g.mul(msq, w).unwrap();
        g.sum(weighted)
    };

    let mut g = Graph::new();
    let pid = g.leaf(p.clone());
    let loss = build(&mut g, pid);
    let analytic = g.backprop(loss).unwrap().get(pid);
    let fd = finite_diff_grad(
        |t| {
            let mut g = Graph::new();
            let pid = g.leaf(t.clone());
            let loss = build(&mut g, pid);
            g.value(loss).item()
        },
        &p,
        1e-5,
    );
    for (&a, &b) in analytic.data().iter().zip(fd.data()) {
        assert!(rel_err(a, b) < 1e-4, "backprop {a} vs fd {b}");
    }
}
