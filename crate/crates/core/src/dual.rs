//! Minimum-norm interpolating preconditioner via the hard-margin dual
//! `max_{λ ≥ 0} Σλ − ½ λᵀGλ`, with `G_{τq} = y_τ y_q ⟨μ̂_τ, μ̂_q⟩⟨x_τ, x_q⟩`.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::model::{Preconditioner, Provenance};
use crate::pretrain;
use crate::scalar::Scalar;
use crate::task::PretrainTask;

/// Diagonal entries at or below this are treated as degenerate tasks.
pub const DEGENERATE_DIAGONAL: f64 = 1e-14;

/// `Σ_τ c_τ μ̂_τ x_τᵀ`, computed row by row in task order.
pub fn combine_features<T: Scalar>(coef: &[T], batch: &[PretrainTask<T>]) -> Matrix<T> {
    let d = batch.first().map_or(0, PretrainTask::dim);
    let mut w = Matrix::zeros(d, d);
    w.as_mut_slice()
        .par_chunks_mut(d.max(1))
        .enumerate()
        .for_each(|(i, row)| {
            for (c, t) in coef.iter().zip(batch) {
                let a = *c * t.context_mean[i];
                if a != T::zero() {
                    linalg::axpy(a, &t.query_x, row);
                }
            }
        });
    w
}

/// Gram matrix of the signed rank-1 features `y_τ μ̂_τ x_τᵀ`.
#[derive(Clone, Debug, PartialEq)]
pub struct GramMatrix<T: Scalar> {
    g: Matrix<T>,
}

impl<T: Scalar> GramMatrix<T> {
    /// Uses `⟨a bᵀ, c eᵀ⟩_F = ⟨a, c⟩⟨b, e⟩`, so only `B x B` inner products
    /// of `d`-vectors are needed.
    pub fn build(batch: &[PretrainTask<T>]) -> Result<Self> {
        let first = batch.first().ok_or(Error::Empty("batch"))?;
        let d = first.dim();
        for t in batch {
            if t.dim() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: t.dim(),
                });
            }
        }
        let means: Vec<&[T]> = batch.iter().map(|t| t.context_mean.as_slice()).collect();
        let queries: Vec<&[T]> = batch.iter().map(|t| t.query_x.as_slice()).collect();
        let gm = linalg::gram(&means);
        let gx = linalg::gram(&queries);
        let b = batch.len();
        let mut g = Matrix::zeros(b, b);
        for i in 0..b {
            for j in 0..b {
                let s = T::lit(f64::from(batch[i].query_y * batch[j].query_y));
                g[(i, j)] = s * gm[(i, j)] * gx[(i, j)];
            }
        }
        Ok(Self { g })
    }

    pub fn from_matrix(g: Matrix<T>) -> Result<Self> {
        if !g.is_square() {
            return Err(crate::error::invalid("G", "must be square"));
        }
        if g.rows() == 0 {
            return Err(Error::Empty("G"));
        }
        Ok(Self { g })
    }

    pub fn len(&self) -> usize {
        self.g.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.g[(i, j)]
    }

    pub fn as_matrix(&self) -> &Matrix<T> {
        &self.g
    }

    pub fn matvec(&self, v: &[T]) -> Vec<T> {
        (0..self.len())
            .into_par_iter()
            .map(|i| linalg::dot(self.g.row(i), v))
            .collect()
    }

    /// `Σλ − ½ λᵀGλ`
    pub fn dual_objective(&self, lambdas: &[T]) -> T {
        let gl = self.matvec(lambdas);
        let mut s = T::zero();
        for (l, g) in lambdas.iter().zip(&gl) {
            s += *l - T::lit(0.5) * *l * *g;
        }
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DualOptions {
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for DualOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_sweeps: 100_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DualResult<T> {
    pub lambdas: Vec<T>,
    pub sweeps: usize,
    pub kkt_violation: f64,
    pub converged: bool,
    /// Coordinates skipped because `G_ττ` is (numerically) zero.
    pub frozen: Vec<usize>,
}

/// Largest violation of `margin ≥ 1` anywhere and of `margin = 1` where `λ > 0`.
pub fn kkt_violation<T: Scalar>(lambdas: &[T], margins: &[T]) -> f64 {
    lambdas
        .iter()
        .zip(margins)
        .map(|(l, m)| {
            let m = m.as_f64();
            let deficit = (1.0 - m).max(0.0);
            if *l > T::zero() {
                deficit.max((m - 1.0).abs())
            } else {
                deficit
            }
        })
        .fold(0.0, f64::max)
}

/// Cyclic projected coordinate ascent,
/// `λ_τ ← max(0, λ_τ + (1 − (Gλ)_τ) / G_ττ)`.
pub fn solve_dual<T: Scalar>(gram: &GramMatrix<T>, opts: &DualOptions) -> Result<DualResult<T>> {
    if opts.tol.is_nan() || opts.tol <= 0.0 {
        return Err(crate::error::invalid("tol", "must be > 0"));
    }
    let b = gram.len();
    let frozen: Vec<usize> = (0..b)
        .filter(|&i| gram.get(i, i).as_f64() <= DEGENERATE_DIAGONAL)
        .collect();
    let active: Vec<usize> = (0..b).filter(|i| !frozen.contains(i)).collect();
    let mut lambdas = vec![T::zero(); b];
    let mut gl = vec![T::zero(); b];
    let mut sweeps = 0;
    let mut violation = f64::INFINITY;
    let check = |lambdas: &[T], gl: &[T]| -> f64 {
        let l: Vec<T> = active.iter().map(|&i| lambdas[i]).collect();
        let m: Vec<T> = active.iter().map(|&i| gl[i]).collect();
        kkt_violation(&l, &m)
    };
    while sweeps < opts.max_sweeps {
        for &i in &active {
            let gii = gram.get(i, i);
            let next = (lambdas[i] + (T::one() - gl[i]) / gii).max(T::zero());
            let delta = next - lambdas[i];
            if delta != T::zero() {
                lambdas[i] = next;
                linalg::axpy(delta, gram.as_matrix().row(i), &mut gl);
            }
        }
        sweeps += 1;
        // incremental updates drift; recompute before testing convergence
        gl = gram.matvec(&lambdas);
        violation = check(&lambdas, &gl);
        if violation <= opts.tol {
            break;
        }
    }
    if sweeps == 0 {
        violation = check(&lambdas, &gl);
    }
    let all: f64 = kkt_violation(&lambdas, &gl);
    Ok(DualResult {
        lambdas,
        sweeps,
        kkt_violation: all,
        converged: violation <= opts.tol && frozen.is_empty(),
        frozen,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct DualSolution<T: Scalar> {
    pub lambdas: Vec<T>,
    pub w: Preconditioner<T>,
    /// `y_τ μ̂_τᵀ W x_τ` recomputed from the assembled `W`.
    pub margins: Vec<T>,
    pub kkt_violation: f64,
    pub converged: bool,
}

#[derive(Serialize)]
struct DualSolutionDoc<'a, T> {
    lambdas: &'a [T],
    w: serde_json::Value,
    margins: &'a [T],
    kkt_violation: f64,
    converged: bool,
}

impl<T: Scalar> DualSolution<T> {
    pub fn sum_lambda(&self) -> T {
        self.lambdas.iter().copied().sum()
    }

    pub fn min_margin(&self) -> T {
        self.margins.iter().copied().fold(T::infinity(), T::min)
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = DualSolutionDoc {
            lambdas: &self.lambdas,
            w: serde_json::from_str(&self.w.to_json()?)?,
            margins: &self.margins,
            kkt_violation: self.kkt_violation,
            converged: self.converged,
        };
        Ok(serde_json::to_string(&doc)?)
    }
}

/// `W = Σ λ_τ y_τ μ̂_τ x_τᵀ`; `converged` means the recomputed KKT violation is within `tol`.
pub fn assemble_w<T: Scalar>(
    lambdas: &[T],
    batch: &[PretrainTask<T>],
    tol: f64,
) -> Result<DualSolution<T>> {
    if lambdas.len() != batch.len() {
        return Err(Error::DimensionMismatch {
            expected: batch.len(),
            got: lambdas.len(),
        });
    }
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let signed: Vec<T> = lambdas
        .iter()
        .zip(batch)
        .map(|(l, t)| *l * T::lit(f64::from(t.query_y)))
        .collect();
    let w = Preconditioner::new(combine_features(&signed, batch), Provenance::MaxMargin)?;
    let margins = pretrain::margins(&w.w, batch)?;
    let kkt = kkt_violation(lambdas, &margins);
    Ok(DualSolution {
        lambdas: lambdas.to_vec(),
        w,
        margins,
        kkt_violation: kkt,
        converged: kkt <= tol,
    })
}

/// Builds the Gram matrix, solves the dual and assembles `W`.
pub fn max_margin<T: Scalar>(
    batch: &[PretrainTask<T>],
    opts: &DualOptions,
) -> Result<DualSolution<T>> {
    let gram = GramMatrix::build(batch)?;
    let res = solve_dual(&gram, opts)?;
    let mut sol = assemble_w(&res.lambdas, batch, opts.tol)?;
    sol.converged &= res.converged;
    Ok(sol)
}

/// `⟨A, B⟩_F / (‖A‖_F ‖B‖_F)`, clamped to `[-1, 1]`.
pub fn directional_alignment<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<T> {
    let na = a.frobenius();
    let nb = b.frobenius();
    if na == T::zero() || nb == T::zero() {
        return Err(Error::ZeroMatrix);
    }
    let c = a.frobenius_dot(b)? / (na * nb);
    Ok(c.max(-T::one()).min(T::one()))
}
