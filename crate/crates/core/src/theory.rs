//! Empirical checks of the dataset statistics, dual scaling, and
//! concentration statements behind the generalization analysis.
//!
//! Statements with unspecified absolute constants are checked in their
//! assertable forms: signs, ratio stability across dimensions, and tail
//! dominance with a fitted constant.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dual::{self, DualOptions};
use crate::error::{invalid, Error, Result};
use crate::linalg::{self, Matrix};
use crate::rng::{self, CovarianceSpec, RngStream, StreamRng};
use crate::task::{gen_pretrain_batch, PretrainTask, TaskParams};

const BLOCK: usize = 4096;

/// Minimum sample count for tail estimates.
pub const MIN_SAMPLES: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatEntry {
    pub observed: f64,
    pub envelope: f64,
}

impl StatEntry {
    pub fn within(&self) -> bool {
        self.observed <= self.envelope
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetStatsReport {
    /// `max_τ |‖μ̂_τ‖² − R²|`
    pub mean_norm: StatEntry,
    /// `max_{q≠τ} |⟨μ̂_q, μ̂_τ⟩|`
    pub mean_cross: StatEntry,
    /// `max_τ |‖x_τ‖² − R²|`
    pub query_norm: StatEntry,
    /// `max_{q≠τ} |⟨x_τ, x_q⟩|`
    pub query_cross: StatEntry,
    /// `max_τ |⟨μ̂_τ, y_τ x_τ⟩ − R²|`
    pub signal: StatEntry,
    /// `max_{q≠τ} |⟨μ_q, μ_τ⟩|`, using the true cluster means.
    pub mu_cross: StatEntry,
    /// `mu_cross · √d / R²`
    pub mu_cross_ratio: f64,
}

impl DatasetStatsReport {
    pub fn all_within(&self) -> bool {
        [
            self.mean_norm,
            self.mean_cross,
            self.query_norm,
            self.query_cross,
            self.signal,
            self.mu_cross,
        ]
        .iter()
        .all(StatEntry::within)
    }
}

fn max_off_diagonal(g: &Matrix<f64>) -> f64 {
    let n = g.rows();
    let mut m = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            m = m.max(g[(i, j)].abs());
        }
    }
    m
}

/// Exact batch statistics next to their envelopes for absolute constant `c0`.
pub fn dataset_stats(
    batch: &[PretrainTask<f64>],
    params: &TaskParams,
    c0: f64,
    delta: f64,
) -> Result<DatasetStatsReport> {
    if batch.len() < 2 {
        return Err(invalid("batch", "pairwise statistics need B >= 2"));
    }
    let d = params.d;
    for t in batch {
        if t.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: t.dim(),
            });
        }
    }
    let r2 = params.r * params.r;
    let means: Vec<&[f64]> = batch.iter().map(|t| t.context_mean.as_slice()).collect();
    let queries: Vec<&[f64]> = batch.iter().map(|t| t.query_x.as_slice()).collect();
    let mus: Vec<&[f64]> = batch.iter().map(|t| t.mu.as_slice()).collect();
    let gm = linalg::gram(&means);
    let gx = linalg::gram(&queries);
    let gmu = linalg::gram(&mus);
    let b = batch.len();
    let diag_dev = |g: &Matrix<f64>| (0..b).map(|i| (g[(i, i)] - r2).abs()).fold(0.0, f64::max);
    let signal = batch
        .iter()
        .map(|t| (f64::from(t.query_y) * linalg::dot(&t.context_mean, &t.query_x) - r2).abs())
        .fold(0.0, f64::max);

    let df = d as f64;
    let n = batch[0].context_xs.len() as f64;
    let bf = b as f64;
    let r = params.r;
    let tr = params.cov.trace();
    let tr2 = params.cov.trace_sq();
    let op = params.cov.op_norm();
    let l1 = (2.0 * bf / delta).ln();
    let l2 = (2.0 * bf * bf / delta).ln();
    let floor = tr.max(c0 * op * l1);
    let env_mean_norm = c0 * r * tr.sqrt() * l1 / (n * df).sqrt() + 4.0 * floor / n;
    let env_query_norm = 2.0 * c0 * r * tr.sqrt() * l1 / df.sqrt() + 4.0 * floor;
    let env_mean_cross =
        c0 * (r2 / df.sqrt() + r * tr.sqrt() / (n * df).sqrt() + tr2.sqrt() / n) * l2;
    let env_query_cross = c0 * (r2 / df.sqrt() + r * tr.sqrt() / df.sqrt() + tr2.sqrt()) * l2;
    let env_signal =
        c0 * ((1.0 + 1.0 / n.sqrt()) * r * tr.sqrt() / df.sqrt() + tr2.sqrt() / n.sqrt()) * l1;
    let mu_cross = max_off_diagonal(&gmu);
    Ok(DatasetStatsReport {
        mean_norm: StatEntry {
            observed: diag_dev(&gm),
            envelope: env_mean_norm,
        },
        mean_cross: StatEntry {
            observed: max_off_diagonal(&gm),
            envelope: env_mean_cross,
        },
        query_norm: StatEntry {
            observed: diag_dev(&gx),
            envelope: env_query_norm,
        },
        query_cross: StatEntry {
            observed: max_off_diagonal(&gx),
            envelope: env_query_cross,
        },
        signal: StatEntry {
            observed: signal,
            envelope: env_signal,
        },
        mu_cross: StatEntry {
            observed: mu_cross,
            envelope: c0 * r2 / df.sqrt() * l2,
        },
        mu_cross_ratio: if r2 > 0.0 {
            mu_cross * df.sqrt() / r2
        } else {
            0.0
        },
    })
}

/// Smallest margin of `2I/R²` on the batch.
pub fn identity_margin(batch: &[PretrainTask<f64>], r: f64) -> Result<f64> {
    let d = batch.first().ok_or(Error::Empty("batch"))?.dim();
    let w = Matrix::<f64>::identity(d).scaled(2.0 / (r * r));
    let m = crate::pretrain::margins(&w, batch)?;
    Ok(m.into_iter().fold(f64::INFINITY, f64::min))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub d: usize,
    pub r: f64,
    pub b: usize,
    pub sum_lambda: f64,
    pub trace: f64,
    pub frobenius: f64,
    /// `Σλ · R⁴ / d`
    pub sum_lambda_ratio: f64,
    /// `tr(W) · R² / d`
    pub trace_ratio: f64,
    /// `‖W‖_F · R² / √d`
    pub frob_ratio: f64,
    pub min_margin: f64,
    pub kkt_violation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub rows: Vec<ScalingRow>,
    /// `max / min` of each ratio across the rows.
    pub sum_lambda_stability: f64,
    pub trace_stability: f64,
    pub frob_stability: f64,
    pub all_positive: bool,
}

fn spread(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    let min = xs.fold(f64::INFINITY, f64::min);
    max / min
}

/// Max-margin solutions for each `d` with `R = 5√d`, `B = d`, `Λ = I`; the
/// context length comes from `template.n`. Dimension `d` samples from
/// `stream.child(d)`.
pub fn scaling_sweep(
    d_list: &[usize],
    template: &TaskParams,
    opts: &DualOptions,
    stream: RngStream,
) -> Result<ScalingReport> {
    if d_list.is_empty() {
        return Err(Error::Empty("d_list"));
    }
    let rows: Vec<ScalingRow> = d_list
        .par_iter()
        .map(|&d| {
            let df = d as f64;
            let r = 5.0 * df.sqrt();
            let params = TaskParams {
                d,
                r,
                b: d,
                cov: CovarianceSpec::identity(d),
                ..template.clone()
            };
            let batch = gen_pretrain_batch::<f64>(&params, stream.child(d as u64))?;
            let sol = dual::max_margin(&batch, opts)?;
            if !sol.converged {
                return Err(Error::NotConverged {
                    sweeps: opts.max_sweeps,
                    kkt_violation: sol.kkt_violation,
                });
            }
            let sum_lambda = sol.sum_lambda();
            let trace = sol.w.w.trace();
            let frobenius = sol.w.w.frobenius();
            let r2 = r * r;
            Ok(ScalingRow {
                d,
                r,
                b: d,
                sum_lambda,
                trace,
                frobenius,
                sum_lambda_ratio: sum_lambda * r2 * r2 / df,
                trace_ratio: trace * r2 / df,
                frob_ratio: frobenius * r2 / df.sqrt(),
                min_margin: sol.min_margin(),
                kkt_violation: sol.kkt_violation,
            })
        })
        .collect::<Result<_>>()?;
    let all_positive = rows
        .iter()
        .all(|r| r.sum_lambda_ratio > 0.0 && r.trace_ratio > 0.0 && r.frob_ratio > 0.0);
    Ok(ScalingReport {
        sum_lambda_stability: spread(rows.iter().map(|r| r.sum_lambda_ratio)),
        trace_stability: spread(rows.iter().map(|r| r.trace_ratio)),
        frob_stability: spread(rows.iter().map(|r| r.frob_ratio)),
        all_positive,
        rows,
    })
}

/// `n` draws of a scalar statistic; block `k` of 4096 draws uses `stream.child(k)`.
pub fn monte_carlo<F>(n: usize, stream: RngStream, f: F) -> Vec<f64>
where
    F: Fn(&mut StreamRng) -> f64 + Sync,
{
    let blocks = n.div_ceil(BLOCK);
    let parts: Vec<Vec<f64>> = (0..blocks)
        .into_par_iter()
        .map(|k| {
            let mut r = stream.child(k as u64).rng();
            let len = BLOCK.min(n - k * BLOCK);
            (0..len).map(|_| f(&mut r)).collect()
        })
        .collect();
    parts.concat()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanCheck {
    pub mean: f64,
    pub se: f64,
    pub expected: f64,
    /// `|mean − expected| ≤ 5·se`, plus a rounding allowance for degenerate statistics.
    pub pass: bool,
}

impl MeanCheck {
    fn new(samples: &[f64], expected: f64, scale: f64) -> Self {
        let (mean, se) = crate::eval::mean_se(samples);
        let pass = (mean - expected).abs() <= 5.0 * se + 1e-9 * scale;
        Self {
            mean,
            se,
            expected,
            pass,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailPoint {
    pub t: f64,
    /// Empirical `P(|X − center| ≥ t)`.
    pub empirical: f64,
    /// Bound exponent `h(t)` in `2 exp(−c h(t))`.
    pub exponent: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationReport {
    pub kind: String,
    pub n_samples: usize,
    pub mean: MeanCheck,
    pub tails: Vec<TailPoint>,
    /// Largest `c` with `empirical ≤ 2 exp(−c h(t))` on the whole grid;
    /// `None` when every empirical tail is zero, so any `c` works.
    pub c_hat: Option<f64>,
}

impl ConcentrationReport {
    pub fn c_hat_positive(&self) -> bool {
        self.c_hat.is_none_or(|c| c > 0.0)
    }
}

/// 20 log-spaced points between 0.5 and 5 standard deviations, with the
/// deviation floored at `1e-9 · scale` so that exact statistics get a grid
/// above rounding noise.
pub fn default_t_grid(samples: &[f64], scale: f64) -> Vec<f64> {
    let (_, se) = crate::eval::mean_se(samples);
    let sd = se * (samples.len() as f64).sqrt();
    let floor = if scale > 0.0 {
        1e-9 * scale
    } else {
        f64::MIN_POSITIVE
    };
    let s = sd.max(floor);
    let (lo, hi) = ((0.5 * s).ln(), (5.0 * s).ln());
    (0..20)
        .map(|i| (lo + (hi - lo) * i as f64 / 19.0).exp())
        .collect()
}

fn fit_tails(
    samples: &[f64],
    center: f64,
    grid: &[f64],
    h: impl Fn(f64) -> f64,
) -> (Vec<TailPoint>, Option<f64>) {
    let n = samples.len() as f64;
    let mut c_hat: Option<f64> = None;
    let tails = grid
        .iter()
        .map(|&t| {
            let hits = samples.iter().filter(|s| (**s - center).abs() >= t).count();
            let empirical = hits as f64 / n;
            let exponent = h(t);
            if hits > 0 {
                let c = -(empirical / 2.0).ln() / exponent;
                c_hat = Some(c_hat.map_or(c, |prev| prev.min(c)));
            }
            TailPoint {
                t,
                empirical,
                exponent,
            }
        })
        .collect();
    (tails, c_hat)
}

fn check_samples(n: usize) -> Result<()> {
    if n < MIN_SAMPLES {
        return Err(invalid(
            "n_samples",
            format!("need at least {MIN_SAMPLES} for tail estimates"),
        ));
    }
    Ok(())
}

/// `μᵀQμ` for `μ` uniform on the radius-`R̃` sphere: mean `(R̃²/d) tr Q`, tail
/// shape `min(t²d²/(R̃⁴‖Q‖_F²), td/(R̃²‖Q‖₂))`.
pub fn hanson_wright_check(
    q: &Matrix<f64>,
    r_tilde: f64,
    n_samples: usize,
    t_grid: Option<&[f64]>,
    stream: RngStream,
) -> Result<ConcentrationReport> {
    check_samples(n_samples)?;
    if !q.is_square() {
        return Err(invalid("Q", "must be square"));
    }
    let d = q.rows();
    let df = d as f64;
    let samples = monte_carlo(n_samples, stream, |r| {
        let mu: Vec<f64> = rng::sample_sphere(d, r_tilde, r);
        q.bilinear(&mu, &mu).expect("square Q")
    });
    let rt2 = r_tilde * r_tilde;
    let expected = rt2 / df * q.trace();
    let fro = q.frobenius();
    let op = linalg::spectral_norm(q);
    let scale = rt2 * op;
    let grid = t_grid.map_or_else(|| default_t_grid(&samples, scale), <[f64]>::to_vec);
    let (tails, c_hat) = fit_tails(&samples, expected, &grid, |t| {
        (t * t * df * df / (rt2 * rt2 * fro * fro)).min(t * df / (rt2 * op))
    });
    Ok(ConcentrationReport {
        kind: "hanson_wright".into(),
        n_samples,
        mean: MeanCheck::new(&samples, expected, scale),
        tails,
        c_hat,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub enum BilinearKind {
    /// `μᵀQg`, `μ` on the radius-`R̃` sphere, `g ~ N(0, I)`.
    MuQG { q: Matrix<f64> },
    /// `ζᵀQζ'`, `ζ, ζ' ~ N(0, Λ)` independent.
    ZetaQZeta { q: Matrix<f64> },
    /// Fraction of `M` labels flipped at rate `p`.
    NoisyFraction,
}

impl BilinearKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::MuQG { .. } => "mu_q_g",
            Self::ZetaQZeta { .. } => "zeta_q_zeta",
            Self::NoisyFraction => "noisy_fraction",
        }
    }
}

type TailShape = Box<dyn Fn(f64) -> f64>;

pub fn bilinear_concentration_check(
    kind: &BilinearKind,
    params: &TaskParams,
    n_samples: usize,
    stream: RngStream,
) -> Result<ConcentrationReport> {
    check_samples(n_samples)?;
    params.validate()?;
    let d = params.d;
    let df = d as f64;
    let check_q = |q: &Matrix<f64>| -> Result<()> {
        if q.rows() != d || q.cols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: q.rows(),
            });
        }
        Ok(())
    };
    let (samples, center, scale, h): (Vec<f64>, f64, f64, TailShape) = match kind {
        BilinearKind::MuQG { q } => {
            check_q(q)?;
            let rt = params.r_tilde;
            let s = monte_carlo(n_samples, stream, |r| {
                let mu: Vec<f64> = rng::sample_sphere(d, rt, r);
                let g: Vec<f64> = rng::standard_normal_vec(d, r);
                q.bilinear(&mu, &g).expect("checked dims")
            });
            let fro = q.frobenius();
            (
                s,
                0.0,
                rt * fro,
                Box::new(move |t| t * df.sqrt() / (rt * fro)),
            )
        }
        BilinearKind::ZetaQZeta { q } => {
            check_q(q)?;
            let cov = &params.cov;
            let s = monte_carlo(n_samples, stream, |r| {
                let a: Vec<f64> = rng::sample_noise(cov, r);
                let b: Vec<f64> = rng::sample_noise(cov, r);
                q.bilinear(&a, &b).expect("checked dims")
            });
            let fro = q.frobenius();
            let op = cov.op_norm();
            (s, 0.0, op * fro, Box::new(move |t| t / (op * fro)))
        }
        BilinearKind::NoisyFraction => {
            let m = params.m;
            if m == 0 {
                return Err(invalid("m", "must be >= 1"));
            }
            let p = params.p;
            let s = monte_carlo(n_samples, stream, |r| {
                (0..m).filter(|_| r.random::<f64>() < p).count() as f64 / m as f64
            });
            let mf = m as f64;
            (s, p, 1.0, Box::new(move |t| 2.0 * t * t * mf))
        }
    };
    let grid = default_t_grid(&samples, scale);
    let (tails, c_hat) = fit_tails(&samples, center, &grid, h);
    Ok(ConcentrationReport {
        kind: kind.name().into(),
        n_samples,
        mean: MeanCheck::new(&samples, center, scale),
        tails,
        c_hat,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadraticFormReport {
    pub mean: MeanCheck,
    pub trace: f64,
    /// Both the Monte-Carlo mean and `(R̃²/d) tr W` are positive.
    pub positive: bool,
}

/// Monte-Carlo `E[μᵀWμ]` against `(R̃²/d) tr W` for `μ` on the radius-`R̃` sphere.
pub fn expected_quadratic_form_check(
    w: &Matrix<f64>,
    r_tilde: f64,
    n_samples: usize,
    stream: RngStream,
) -> Result<QuadraticFormReport> {
    if !w.is_square() {
        return Err(invalid("W", "must be square"));
    }
    if n_samples < 2 {
        return Err(invalid("n_samples", "must be >= 2"));
    }
    let d = w.rows();
    let samples = monte_carlo(n_samples, stream, |r| {
        let mu: Vec<f64> = rng::sample_sphere(d, r_tilde, r);
        w.bilinear(&mu, &mu).expect("square W")
    });
    let rt2 = r_tilde * r_tilde;
    let trace = w.trace();
    let mean = MeanCheck::new(
        &samples,
        rt2 / d as f64 * trace,
        rt2 * linalg::spectral_norm(w),
    );
    Ok(QuadraticFormReport {
        positive: mean.mean > 0.0 && mean.expected > 0.0,
        mean,
        trace,
    })
}

/// Random symmetric matrix with standard normal entries on and above the diagonal.
pub fn random_symmetric(d: usize, stream: RngStream) -> Matrix<f64> {
    let mut r = stream.rng();
    let mut q = Matrix::zeros(d, d);
    for i in 0..d {
        for j in i..d {
            let v: f64 = rng::standard_normal(&mut r);
            q[(i, j)] = v;
            q[(j, i)] = v;
        }
    }
    q
}
