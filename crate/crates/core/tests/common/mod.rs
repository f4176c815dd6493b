//! Helpers shared by the integration and acceptance tests.
#![allow(dead_code)]

use ndarray::{Array1, Array2};
use phasesep::nn::{InputBlock, Layer, Network};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-5;
pub const TOL: f64 = 1e-4;

pub fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-1.0..1.0))
}

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / (a.abs() + n.abs()).max(1e-7)
}

/// Max relative error of parameter and input gradients of `L = Σ y ⊙ R`.
pub fn grad_check(net: &mut Network, inputs: Vec<Array2<f64>>, rng: &mut ChaCha8Rng) -> f64 {
    let y = net.forward(inputs.clone()).unwrap();
    let r = random(y.nrows(), y.ncols(), rng);
    let input_grads = net.backward(r.clone(), true).unwrap();
    let analytic: Vec<Vec<f64>> = net.grads().iter().map(|g| g.to_vec()).collect();
    let loss = |net: &Network, inputs: &[Array2<f64>]| {
        let views: Vec<_> = inputs.iter().map(|x| x.view()).collect();
        (net.predict(&views).unwrap() * &r).sum()
    };
    let mut worst = 0.0f64;
    for (p, grads) in analytic.iter().enumerate() {
        for (i, &a) in grads.iter().enumerate() {
            let orig = net.params()[p][i];
            net.params_mut()[p][i] = orig + STEP;
            let plus = loss(net, &inputs);
            net.params_mut()[p][i] = orig - STEP;
            let minus = loss(net, &inputs);
            net.params_mut()[p][i] = orig;
            let e = rel_err(a, (plus - minus) / (2.0 * STEP));
            worst = worst.max(e);
        }
    }
    for (b, g) in input_grads.iter().enumerate() {
        let g = g.as_ref().unwrap();
        for ((row, col), &a) in g.indexed_iter() {
            let mut xs = inputs.clone();
            xs[b][[row, col]] += STEP;
            let plus = loss(net, &xs);
            xs[b][[row, col]] -= 2.0 * STEP;
            let minus = loss(net, &xs);
            worst = worst.max(rel_err(a, (plus - minus) / (2.0 * STEP)));
        }
    }
    worst
}

/// Worst gradient error of each layer kind, each alone in a network, over
/// `trials` random shapes.
pub fn layer_gradient_errors(seed: u64, trials: usize) -> Vec<(String, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for trial in 0..trials {
        let (b, i, o) = (rng.random_range(1..6), rng.random_range(1..9), rng.random_range(1..9));
        let scale: Array1<f64> = (0..i).map(|_| rng.random_range(0.5..2.0)).collect();
        let bias: Array1<f64> = (0..i).map(|_| rng.random_range(-1.0..1.0)).collect();
        let layers = vec![
            Layer::dense(i, o, &mut rng),
            Layer::relu(i),
            Layer::bias(bias),
            Layer::scale(scale).expect("nonzero scale"),
        ];
        for layer in layers {
            let name = format!("trial {trial} {}", layer.kind().name());
            let mut net = Network::chain(InputBlock::Amplitude, vec![layer]).expect("single layer");
            let x = random(b, i, &mut rng);
            out.push((name, grad_check(&mut net, vec![x], &mut rng)));
        }
    }
    out
}
