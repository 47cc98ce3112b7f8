use chanforge::numerics::{randn, AdamState, Graph, Tensor};
use chanforge::rng::stream;
use std::time::Instant;

fn time<F: FnMut()>(label: &str, reps: usize, mut f: F) {
    let t0 = Instant::now();
    for _ in 0..reps {
        f();
    }
    println!(
        "{label}: {:.1} ms/rep",
        t0.elapsed().as_secs_f64() * 1000.0 / reps as f64
    );
}

fn main() {
    let mut rng = stream(1, "bench", 0);
    let a32 = randn(&[32, 1024], &mut rng);
    let b = randn(&[1024, 1024], &mut rng);
    let a512 = randn(&[512, 1024], &mut rng);

    time("matmul 512x1024x1024", 10, || {
        let mut g = Graph::new();
        let x = g.leaf(a512.clone());
        let y = g.leaf(b.clone());
        let _ = g.matmul(x, y).unwrap();
    });
    time("matmul 32x1024x1024", 50, || {
        let mut g = Graph::new();
        let x = g.leaf(a32.clone());
        let y = g.leaf(b.clone());
        let _ = g.matmul(x, y).unwrap();
    });
    let w1 = randn(&[1024, 1024], &mut rng);
    let w2 = randn(&[1024, 1024], &mut rng);
    time("fwd+bwd 2x tanh-matmul batch32", 20, || {
        let mut g = Graph::new();
        let x = g.leaf(a32.clone());
        let w1 = g.leaf(w1.clone());
        let w2 = g.leaf(w2.clone());
        let h = g.matmul(x, w1).unwrap();
        let h = g.tanh(h);
        let h = g.matmul(h, w2).unwrap();
        let loss = g.mean_sq(h).unwrap();
        let _ = g.backprop(loss).unwrap();
    });
    let mut params = vec![
        randn(&[1280, 1024], &mut rng),
        randn(&[1024, 1024], &mut rng),
    ];
    let grads: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
    let mut adam = AdamState::new(&params, 1e-3);
    time("adam 2.4M params", 20, || {
        adam.step(&mut params, &grads).unwrap();
    });
}
