//! Reference computations written directly on `Vec<f64>`, independent of the
//! library's linear algebra.
#![allow(dead_code)]

use iclab::rng::RngStream;
use iclab::task::{gen_pretrain_batch, PretrainTask, TaskParams};

pub type Dense = Vec<Vec<f64>>;

pub fn batch(d: usize, b: usize, seed: u64) -> Vec<PretrainTask<f64>> {
    let params = TaskParams {
        b,
        ..TaskParams::reference(d)
    };
    gen_pretrain_batch(&params, RngStream::root(seed)).unwrap()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn margin(w: &Dense, t: &PretrainTask<f64>) -> f64 {
    let mut s = 0.0;
    for (i, row) in w.iter().enumerate() {
        s += t.context_mean[i] * dot(row, &t.query_x);
    }
    f64::from(t.query_y) * s
}

pub fn logistic(m: f64) -> f64 {
    (1.0 + (-m).exp()).ln()
}

pub fn exponential(m: f64) -> f64 {
    (-m).exp()
}

pub fn risk(w: &Dense, batch: &[PretrainTask<f64>], ell: fn(f64) -> f64) -> f64 {
    batch.iter().map(|t| ell(margin(w, t))).sum::<f64>() / batch.len() as f64
}

/// Central differences with step `h`, entry by entry.
pub fn fd_gradient(w: &Dense, batch: &[PretrainTask<f64>], ell: fn(f64) -> f64, h: f64) -> Dense {
    let d = w.len();
    let mut g = vec![vec![0.0; d]; d];
    for i in 0..d {
        for j in 0..d {
            let mut p = w.clone();
            p[i][j] += h;
            let mut m = w.clone();
            m[i][j] -= h;
            g[i][j] = (risk(&p, batch, ell) - risk(&m, batch, ell)) / (2.0 * h);
        }
    }
    g
}

pub fn gram(batch: &[PretrainTask<f64>]) -> Dense {
    batch
        .iter()
        .map(|a| {
            batch
                .iter()
                .map(|b| {
                    f64::from(a.query_y * b.query_y)
                        * dot(&a.context_mean, &b.context_mean)
                        * dot(&a.query_x, &b.query_x)
                })
                .collect()
        })
        .collect()
}

/// Projected gradient ascent on `Σλ − ½λᵀGλ` over `λ ≥ 0`.
pub fn projected_gradient_dual(g: &Dense, step: f64, iters: usize) -> Vec<f64> {
    let n = g.len();
    let mut lam = vec![0.0; n];
    let mut next = vec![0.0; n];
    for _ in 0..iters {
        for i in 0..n {
            let grad = 1.0 - dot(&g[i], &lam);
            next[i] = (lam[i] + step * grad).max(0.0);
        }
        std::mem::swap(&mut lam, &mut next);
    }
    lam
}

pub fn random_dense(d: usize, seed: u64, scale: f64) -> Dense {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..d)
        .map(|_| {
            (0..d)
                .map(|_| scale * rng.random_range(-1.0..1.0))
                .collect()
        })
        .collect()
}
