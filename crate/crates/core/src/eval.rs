//! Monte-Carlo estimates of query accuracy and in-context memorization, plus
//! closed-form bound and assumption evaluators.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg;
use crate::model::Preconditioner;
use crate::rng::{self, tags, RngStream};
use crate::scalar::{sign_label, Scalar};
use crate::task::{gen_test_task, TaskParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub n_tasks: usize,
    /// Queries scored per task; `1` scores the task's own query.
    pub queries_per_task: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            n_tasks: 2500,
            queries_per_task: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub test_acc_mean: f64,
    pub test_acc_se: f64,
    pub train_acc_mean: f64,
    pub train_acc_se: f64,
    pub n_tasks: usize,
    /// Fraction of tasks whose every context example is fitted.
    pub full_memorization_rate: f64,
    /// Fraction of flipped context examples predicted with their flipped label;
    /// absent when no example was flipped.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub noisy_label_fit_rate: Option<f64>,
}

/// Sample mean and standard error (`sd / √n`, unbiased variance).
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

struct TaskOutcome {
    test_acc: f64,
    train_acc: f64,
    all_fit: bool,
    noisy: usize,
    noisy_fit: usize,
}

fn score_task<T: Scalar>(
    w: &Preconditioner<T>,
    params: &TaskParams,
    stream: RngStream,
    queries: usize,
) -> Result<TaskOutcome> {
    let task = gen_test_task::<T>(params, stream)?;
    let v = w.context_direction(&task.context_mean)?;
    let m = task.m();
    let mut fit = 0;
    let mut noisy_fit = 0;
    for k in 0..m {
        if sign_label(linalg::dot(&v, &task.xs[k])) == task.observed_ys[k] {
            fit += 1;
            if task.noisy_set.contains(&k) {
                noisy_fit += 1;
            }
        }
    }
    let test_acc = if queries == 1 {
        let (q, y) = task.query();
        f64::from(u8::from(sign_label(linalg::dot(&v, q)) == y))
    } else {
        let mut r = stream.child(tags::QUERIES).rng();
        let mut hits = 0;
        for _ in 0..queries {
            let y = rng::rademacher(&mut r);
            let mut x: Vec<T> = rng::sample_noise(&params.cov, &mut r);
            linalg::axpy(T::lit(f64::from(y)), &task.mu, &mut x);
            let observed = if r.random::<f64>() < params.p { -y } else { y };
            if sign_label(linalg::dot(&v, &x)) == observed {
                hits += 1;
            }
        }
        hits as f64 / queries as f64
    };
    Ok(TaskOutcome {
        test_acc,
        train_acc: fit as f64 / m as f64,
        all_fit: fit == m,
        noisy: task.noisy_set.len(),
        noisy_fit,
    })
}

/// Scores `W` on fresh test tasks; task `k` draws from `stream.child(k)`.
pub fn evaluate<T: Scalar>(
    w: &Preconditioner<T>,
    params: &TaskParams,
    opts: &EvalOptions,
    stream: RngStream,
) -> Result<EvalReport> {
    params.validate()?;
    if opts.n_tasks == 0 {
        return Err(invalid("n_tasks", "must be >= 1"));
    }
    if opts.queries_per_task == 0 {
        return Err(invalid("queries_per_task", "must be >= 1"));
    }
    if params.m == 0 {
        return Err(invalid("m", "need at least one context example"));
    }
    if w.dim() != params.d {
        return Err(Error::DimensionMismatch {
            expected: params.d,
            got: w.dim(),
        });
    }
    let outcomes: Vec<TaskOutcome> = (0..opts.n_tasks)
        .into_par_iter()
        .map(|k| score_task(w, params, stream.child(k as u64), opts.queries_per_task))
        .collect::<Result<_>>()?;
    let test: Vec<f64> = outcomes.iter().map(|o| o.test_acc).collect();
    let train: Vec<f64> = outcomes.iter().map(|o| o.train_acc).collect();
    let (test_acc_mean, test_acc_se) = mean_se(&test);
    let (train_acc_mean, train_acc_se) = mean_se(&train);
    let full = outcomes.iter().filter(|o| o.all_fit).count();
    let noisy: usize = outcomes.iter().map(|o| o.noisy).sum();
    let noisy_fit: usize = outcomes.iter().map(|o| o.noisy_fit).sum();
    Ok(EvalReport {
        test_acc_mean,
        test_acc_se,
        train_acc_mean,
        train_acc_se,
        n_tasks: opts.n_tasks,
        full_memorization_rate: full as f64 / opts.n_tasks as f64,
        noisy_label_fit_rate: (params.p > 0.0 && noisy > 0)
            .then(|| noisy_fit as f64 / noisy as f64),
    })
}

/// `(mean, se)` of query accuracy.
pub fn eval_test<T: Scalar>(
    w: &Preconditioner<T>,
    params: &TaskParams,
    n_tasks: usize,
    stream: RngStream,
) -> Result<(f64, f64)> {
    let r = evaluate(
        w,
        params,
        &EvalOptions {
            n_tasks,
            queries_per_task: 1,
        },
        stream,
    )?;
    Ok((r.test_acc_mean, r.test_acc_se))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemorizationReport {
    pub mem_mean: f64,
    pub mem_se: f64,
    pub full_mem_rate: f64,
    pub noisy_fit_rate: Option<f64>,
}

pub fn eval_memorization<T: Scalar>(
    w: &Preconditioner<T>,
    params: &TaskParams,
    n_tasks: usize,
    stream: RngStream,
) -> Result<MemorizationReport> {
    let r = evaluate(
        w,
        params,
        &EvalOptions {
            n_tasks,
            queries_per_task: 1,
        },
        stream,
    )?;
    Ok(MemorizationReport {
        mem_mean: r.train_acc_mean,
        mem_se: r.train_acc_se,
        full_mem_rate: r.full_memorization_rate,
        noisy_fit_rate: r.noisy_label_fit_rate,
    })
}

/// Absolute constants of the bounds; the theory leaves them unspecified.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundConstants {
    pub delta: f64,
    pub c: f64,
    pub c0: f64,
    pub big_c: f64,
}

impl Default for BoundConstants {
    fn default() -> Self {
        Self {
            delta: 0.001,
            c: 1.0,
            c0: 1.0,
            big_c: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoreticalBounds {
    pub c_b: f64,
    pub rho: f64,
    /// Upper bound on query misclassification probability.
    pub gen_bound_rhs: f64,
    /// Upper bound on the probability that some context example is not fitted.
    pub mem_bound_rhs: f64,
    pub sum_lambda: Interval,
    pub frobenius: Interval,
    pub trace: Interval,
    /// Envelope for `E[μᵀWμ]` at test radius `R̃`.
    pub expected_quadratic: Interval,
}

/// Evaluates the bound expressions for the given constants. No sampling.
pub fn theoretical_bounds(params: &TaskParams, k: &BoundConstants) -> Result<TheoreticalBounds> {
    params.validate()?;
    if params.p.is_nan() || params.p >= 0.5 {
        return Err(Error::NoiseTooLarge(params.p));
    }
    for (name, v) in [("delta", k.delta), ("c", k.c), ("c0", k.c0), ("C", k.big_c)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(invalid(name, "must be positive"));
        }
    }
    let d = params.d as f64;
    let b = params.b as f64;
    let m = params.m as f64;
    let rt = params.r_tilde;
    let r = params.r;
    let op = params.cov.op_norm();
    let c_b = b / d;
    let log_b2 = (2.0 * b * b / k.delta).ln();
    let rho = c_b.min(1.0) / (log_b2 * log_b2);
    let c = k.c;
    let noise_term = if params.p > 0.0 {
        params.p + 2.0 * (-c * m).exp()
    } else {
        0.0
    };
    let gen = noise_term
        + 2.0 * (-c * rho * d.sqrt()).exp()
        + 4.0 * (-c * rho * rt / op.sqrt()).exp()
        + 2.0 * (-c * rho * m.sqrt() * rt * rt / (op * d.sqrt())).exp();
    let mem = 4.0 * m * (-c * rho * d.sqrt() / m.sqrt()).exp()
        + 8.0 * m * (-c * rho * d / (m * (rt * rt).max(rt))).exp();
    let lo = c_b.min(1.0) / (k.c0 * k.c0 * log_b2 * log_b2);
    let r2 = r * r;
    Ok(TheoreticalBounds {
        c_b,
        rho,
        gen_bound_rhs: gen,
        mem_bound_rhs: mem,
        sum_lambda: Interval {
            lo: lo * d / (8.0 * r2 * r2),
            hi: 4.0 * d / (r2 * r2),
        },
        frobenius: Interval {
            lo: lo * d.sqrt() / (16.0 * r2),
            hi: 2.0 * d.sqrt() / r2,
        },
        trace: Interval {
            lo: lo * d / (16.0 * r2),
            hi: 6.0 * d / r2,
        },
        expected_quadratic: Interval {
            lo: lo * rt * rt / (16.0 * r2),
            hi: 6.0 * rt * rt / r2,
        },
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssumptionCheck {
    pub pass: bool,
    pub lhs: f64,
    pub threshold: f64,
    /// `lhs / threshold`; at least 1 when the check passes.
    pub slack: f64,
}

impl AssumptionCheck {
    fn new(lhs: f64, threshold: f64) -> Self {
        Self {
            pass: lhs >= threshold,
            lhs,
            threshold,
            slack: lhs / threshold,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    /// Pre-training signal strength: `R²` against the noise-dependent threshold.
    pub a1: AssumptionCheck,
    /// Task count: `B ≥ c_B d`.
    pub a2: AssumptionCheck,
    /// Dimension: `d ≥ C log⁴(2B²/δ)`.
    pub a3: AssumptionCheck,
}

impl AssumptionReport {
    pub fn all_pass(&self) -> bool {
        self.a1.pass && self.a2.pass && self.a3.pass
    }
}

/// Evaluates the three standing assumptions with exact covariance summaries.
/// `c_b` defaults to 1.
pub fn check_assumptions(
    params: &TaskParams,
    delta: f64,
    big_c: f64,
    c_b: Option<f64>,
) -> Result<AssumptionReport> {
    params.validate()?;
    if !(delta > 0.0 && big_c > 0.0) {
        return Err(invalid("delta/C", "must be positive"));
    }
    let d = params.d as f64;
    let n = params.n as f64;
    let b = params.b as f64;
    let tr = params.cov.trace();
    let tr2 = params.cov.trace_sq();
    let op = params.cov.op_norm();
    let c2 = big_c * big_c;
    let log_b = (2.0 * b / delta).ln();
    let a1 = c2
        * (d * tr2)
            .sqrt()
            .max((tr / d).max((tr2 / n).sqrt()).max(op) * log_b);
    let log_b2 = (2.0 * b * b / delta).ln();
    Ok(AssumptionReport {
        a1: AssumptionCheck::new(params.r * params.r, a1),
        a2: AssumptionCheck::new(b, c_b.unwrap_or(1.0) * d),
        a3: AssumptionCheck::new(d, big_c * log_b2.powi(4)),
    })
}
