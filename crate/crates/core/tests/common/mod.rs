#![allow(dead_code)]

use hystop::diffkernel::{Graph, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Reduces an output to a scalar through a fixed random linear functional.
pub fn project(g: &mut Graph<f64>, y: Var, seed: u64) -> Var {
    let shape = g.shape(y).unwrap().to_vec();
    let r = random_tensor(&shape, seed);
    let r = g.constant(&r);
    let p = g.mul(y, r).unwrap();
    g.sum(p).unwrap()
}

/// Naive DFT oracle, planar layout `[re(0..bins), im(0..bins)]`.
pub fn naive_rdft(x: &[f64]) -> Vec<f64> {
    let len = x.len();
    let bins = len / 2 + 1;
    let mut out = vec![0.0; 2 * bins];
    for k in 0..bins {
        for (l, &v) in x.iter().enumerate() {
            let th = 2.0 * std::f64::consts::PI * ((k * l) % len) as f64 / len as f64;
            out[k] += v * th.cos();
            out[bins + k] -= v * th.sin();
        }
    }
    out
}

/// Central-difference gradient check over (a sample of) every input coordinate.
///
/// Returns the worst per-input relative error `||analytic - numeric|| / ||numeric||`.
pub fn grad_check<F>(inputs: &[Tensor<f64>], f: F, h: f64, max_coords: usize) -> f64
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Var,
{
    let eval = |ins: &[Tensor<f64>]| -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = ins.iter().map(|t| g.param(t)).collect();
        let loss = f(&mut g, &vars);
        g.data(loss).unwrap()[0]
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t)).collect();
    let loss = f(&mut g, &vars);
    let grads = g.backward(loss).unwrap();
    let mut worst: f64 = 0.0;
    for (i, t) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[i]).unwrap().data().to_vec();
        let n = t.numel();
        let stride = (n / max_coords.max(1)).max(1);
        let (mut diff, mut norm) = (0.0, 0.0);
        for c in (0..n).step_by(stride) {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[c] += h;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[c] -= h;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
            diff += (analytic[c] - numeric).powi(2);
            norm += numeric.powi(2);
        }
        let rel = if norm > 0.0 { (diff / norm).sqrt() } else { diff.sqrt() };
        worst = worst.max(rel);
    }
    worst
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
