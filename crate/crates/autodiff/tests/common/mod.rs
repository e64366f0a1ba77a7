#![allow(dead_code)]

use aad_autodiff::{Graph, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    // Irwin-Hall approximation is plenty for probe data.
    let data = (0..n)
        .map(|_| (0..12).map(|_| rng.random::<f64>()).sum::<f64>() - 6.0)
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Central-difference check of every input of `build`, which maps leaf
/// handles to a scalar loss. Returns the worst normwise relative error.
pub fn gradcheck(inputs: &[Tensor], h: f64, build: impl Fn(&mut Graph, &[Var]) -> Var) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = build(&mut g, &vars);
    let mut grads = g.backward(loss).unwrap();
    let analytic: Vec<Tensor> = vars.iter().map(|&v| grads.take(v)).collect();

    let eval = |perturbed: &[Tensor]| {
        let mut g = Graph::new();
        let vars: Vec<Var> = perturbed.iter().map(|t| g.param(t.clone())).collect();
        let loss = build(&mut g, &vars);
        g.value(loss).item().unwrap()
    };

    let mut worst: f64 = 0.0;
    for (idx, input) in inputs.iter().enumerate() {
        let mut numeric = vec![0.0; input.len()];
        for j in 0..input.len() {
            let mut plus = inputs.to_vec();
            plus[idx].data_mut()[j] += h;
            let mut minus = inputs.to_vec();
            minus[idx].data_mut()[j] -= h;
            numeric[j] = (eval(&plus) - eval(&minus)) / (2.0 * h);
        }
        let a = analytic[idx].data();
        let diff = a
            .iter()
            .zip(&numeric)
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt();
        let scale = a
            .iter()
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
            .max(numeric.iter().map(|x| x * x).sum::<f64>().sqrt())
            .max(1e-12);
        worst = worst.max(diff / scale);
    }
    worst
}

/// Contract an arbitrary output against fixed random weights so every
/// output element contributes to the scalar loss.
pub fn probe_loss(g: &mut Graph, out: Var, seed: u64) -> Var {
    let shape = g.value(out).shape().to_vec();
    let w = randn(&mut rng(seed), &shape);
    let w = g.constant(w);
    let p = g.mul(out, w).unwrap();
    g.sum(p)
}
