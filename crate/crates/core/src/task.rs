//! Pre-training and test-time Gaussian-mixture tasks.
//!
//! A pre-training task draws a cluster mean `μ` uniformly from the sphere of
//! radius `R` and `N + 1` examples `x = y μ + z` with `y` uniform on ±1 and
//! `z ~ N(0, Λ)`; the first `N` form the context and the last is the query.
//! Test-time tasks use radius `R̃`, `M + 1` examples and label-flipping noise
//! applied after the features are built from the clean labels.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{self, Matrix};
use crate::rng::{self, tags, CovarianceSpec, RngStream};
use crate::scalar::Scalar;

/// Parameters of the data model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskParams {
    /// Ambient dimension.
    pub d: usize,
    /// Pre-training cluster-mean norm.
    pub r: f64,
    /// Test-time cluster-mean norm.
    pub r_tilde: f64,
    /// Context length during pre-training.
    pub n: usize,
    /// Context length at test time.
    pub m: usize,
    /// Number of pre-training tasks.
    pub b: usize,
    /// Test-time label-flip probability.
    pub p: f64,
    pub cov: CovarianceSpec,
}

impl TaskParams {
    /// Default operating point: `R = 5√d`, `N = 40`, `B = d`,
    /// `R̃ = d^0.35`, `M = 20`, `p = 0.1`, `Λ = I`.
    pub fn reference(d: usize) -> Self {
        let df = d as f64;
        Self {
            d,
            r: 5.0 * df.sqrt(),
            r_tilde: df.powf(0.35),
            n: 40,
            m: 20,
            b: d,
            p: 0.1,
            cov: CovarianceSpec::identity(d),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("d", self.d), ("n", self.n), ("m", self.m), ("b", self.b)] {
            if v == 0 {
                return Err(invalid(name, "must be >= 1"));
            }
        }
        if !(self.r.is_finite() && self.r >= 0.0) {
            return Err(invalid("r", "must be finite and >= 0"));
        }
        if !(self.r_tilde.is_finite() && self.r_tilde >= 0.0) {
            return Err(invalid("r_tilde", "must be finite and >= 0"));
        }
        if !(0.0..=0.5).contains(&self.p) {
            return Err(invalid("p", "must lie in [0, 1/2]"));
        }
        if self.cov.dim() != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                got: self.cov.dim(),
            });
        }
        Ok(())
    }
}

/// Label-weighted context average `(1/n) Σ y_i x_i`.
pub fn context_mean<T: Scalar>(xs: &[Vec<T>], ys: &[i8]) -> Result<Vec<T>> {
    if xs.is_empty() {
        return Err(Error::Empty("context"));
    }
    if xs.len() != ys.len() {
        return Err(Error::DimensionMismatch {
            expected: xs.len(),
            got: ys.len(),
        });
    }
    let d = xs[0].len();
    let mut acc = vec![T::zero(); d];
    for (x, &y) in xs.iter().zip(ys) {
        if x.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: x.len(),
            });
        }
        let s = T::lit(f64::from(y));
        for (a, v) in acc.iter_mut().zip(x) {
            *a += s * *v;
        }
    }
    let n = T::from_usize_lossy(xs.len());
    Ok(acc.into_iter().map(|v| v / n).collect())
}

/// Prompt embedding: columns `(x_i; y_i)` followed by `(query; 0)`.
pub fn embed<T: Scalar>(xs: &[Vec<T>], ys: &[i8], query: &[T]) -> Result<Matrix<T>> {
    if xs.len() != ys.len() {
        return Err(Error::DimensionMismatch {
            expected: xs.len(),
            got: ys.len(),
        });
    }
    let d = query.len();
    let cols = xs.len() + 1;
    let mut e = Matrix::zeros(d + 1, cols);
    for (c, (x, &y)) in xs.iter().zip(ys).enumerate() {
        if x.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: x.len(),
            });
        }
        for (r, v) in x.iter().enumerate() {
            e[(r, c)] = *v;
        }
        e[(d, c)] = T::lit(f64::from(y));
    }
    for (r, v) in query.iter().enumerate() {
        e[(r, cols - 1)] = *v;
    }
    Ok(e)
}

/// Reads the context average back out of an embedding matrix.
pub fn context_mean_from_embedding<T: Scalar>(e: &Matrix<T>) -> Result<Vec<T>> {
    let d = e.rows().checked_sub(1).ok_or(Error::Empty("embedding"))?;
    let n = e.cols().checked_sub(1).ok_or(Error::Empty("embedding"))?;
    if n == 0 {
        return Err(Error::Empty("context"));
    }
    let mut acc = vec![T::zero(); d];
    for c in 0..n {
        let y = e[(d, c)];
        for (r, a) in acc.iter_mut().enumerate() {
            *a += y * e[(r, c)];
        }
    }
    let nf = T::from_usize_lossy(n);
    Ok(acc.into_iter().map(|v| v / nf).collect())
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
struct RawPretrainTask<T> {
    mu: Vec<T>,
    context_xs: Vec<Vec<T>>,
    context_ys: Vec<i8>,
    query_x: Vec<T>,
    query_y: i8,
}

/// One noiseless pre-training task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPretrainTask<T>")]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct PretrainTask<T: Scalar> {
    pub mu: Vec<T>,
    pub context_xs: Vec<Vec<T>>,
    pub context_ys: Vec<i8>,
    pub query_x: Vec<T>,
    pub query_y: i8,
    /// `μ̂ = (1/N) Σ y_i x_i` over the context.
    pub context_mean: Vec<T>,
}

impl<T: Scalar> TryFrom<RawPretrainTask<T>> for PretrainTask<T> {
    type Error = Error;
    fn try_from(r: RawPretrainTask<T>) -> Result<Self> {
        Self::new(r.mu, r.context_xs, r.context_ys, r.query_x, r.query_y)
    }
}

fn check_label(y: i8) -> Result<()> {
    if y == 1 || y == -1 {
        Ok(())
    } else {
        Err(invalid("label", format!("labels must be ±1, got {y}")))
    }
}

impl<T: Scalar> PretrainTask<T> {
    pub fn new(
        mu: Vec<T>,
        context_xs: Vec<Vec<T>>,
        context_ys: Vec<i8>,
        query_x: Vec<T>,
        query_y: i8,
    ) -> Result<Self> {
        let d = mu.len();
        if query_x.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: query_x.len(),
            });
        }
        check_label(query_y)?;
        for &y in &context_ys {
            check_label(y)?;
        }
        let context_mean = context_mean(&context_xs, &context_ys)?;
        if context_mean.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: context_mean.len(),
            });
        }
        Ok(Self {
            mu,
            context_xs,
            context_ys,
            query_x,
            query_y,
            context_mean,
        })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn embedding(&self) -> Matrix<T> {
        embed(&self.context_xs, &self.context_ys, &self.query_x).expect("consistent task")
    }
}

fn draw_pretrain_task<T: Scalar, R: Rng + ?Sized>(
    params: &TaskParams,
    rng: &mut R,
) -> PretrainTask<T> {
    let mu: Vec<T> = rng::sample_sphere(params.d, T::lit(params.r), rng);
    let mut xs = Vec::with_capacity(params.n + 1);
    let mut ys = Vec::with_capacity(params.n + 1);
    for _ in 0..=params.n {
        let y = rng::rademacher(rng);
        let mut x: Vec<T> = rng::sample_noise(&params.cov, rng);
        linalg::axpy(T::lit(f64::from(y)), &mu, &mut x);
        xs.push(x);
        ys.push(y);
    }
    let query_x = xs.pop().expect("n + 1 examples");
    let query_y = ys.pop().expect("n + 1 labels");
    PretrainTask::new(mu, xs, ys, query_x, query_y).expect("generated task is consistent")
}

/// `B` independent pre-training tasks; task `τ` draws from `stream.child(τ)`.
pub fn gen_pretrain_batch<T: Scalar>(
    params: &TaskParams,
    stream: RngStream,
) -> Result<Vec<PretrainTask<T>>> {
    params.validate()?;
    Ok((0..params.b)
        .into_par_iter()
        .map(|tau| draw_pretrain_task(params, &mut stream.child(tau as u64).rng()))
        .collect())
}

/// One test-time task with `M` context examples and one query at index `M`.
#[derive(Clone, Debug, PartialEq)]
pub struct TestTask<T: Scalar> {
    pub mu: Vec<T>,
    /// Clean labels `ỹ_i`, length `M + 1`.
    pub clean_ys: Vec<i8>,
    /// Observed labels after flipping, length `M + 1`.
    pub observed_ys: Vec<i8>,
    /// Features `x_i = ỹ_i μ + z_i`, length `M + 1`.
    pub xs: Vec<Vec<T>>,
    /// Flipped context indices (0-based, `< M`).
    pub noisy_set: Vec<usize>,
    /// Unflipped context indices (0-based, `< M`).
    pub clean_set: Vec<usize>,
    /// `(1/M) Σ_{i<M} y_i x_i` with observed labels.
    pub context_mean: Vec<T>,
}

/// On-disk form of a [`TestTask`]; indices are 0-based.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestTaskDoc<T> {
    pub mu: Vec<T>,
    pub xs: Vec<Vec<T>>,
    pub clean_ys: Vec<i8>,
    pub observed_ys: Vec<i8>,
    pub noisy_set: Vec<usize>,
}

impl<T: Scalar> TestTask<T> {
    pub fn from_parts(
        mu: Vec<T>,
        xs: Vec<Vec<T>>,
        clean_ys: Vec<i8>,
        observed_ys: Vec<i8>,
    ) -> Result<Self> {
        if xs.len() < 2 {
            return Err(invalid(
                "xs",
                "need at least one context example and a query",
            ));
        }
        if clean_ys.len() != xs.len() || observed_ys.len() != xs.len() {
            return Err(Error::DimensionMismatch {
                expected: xs.len(),
                got: clean_ys.len().min(observed_ys.len()),
            });
        }
        for &y in clean_ys.iter().chain(&observed_ys) {
            check_label(y)?;
        }
        let m = xs.len() - 1;
        let (noisy_set, clean_set): (Vec<usize>, Vec<usize>) =
            (0..m).partition(|&i| observed_ys[i] != clean_ys[i]);
        let context_mean = context_mean(&xs[..m], &observed_ys[..m])?;
        if context_mean.len() != mu.len() {
            return Err(Error::DimensionMismatch {
                expected: mu.len(),
                got: context_mean.len(),
            });
        }
        Ok(Self {
            mu,
            clean_ys,
            observed_ys,
            xs,
            noisy_set,
            clean_set,
            context_mean,
        })
    }

    /// Context length `M`.
    pub fn m(&self) -> usize {
        self.xs.len() - 1
    }

    pub fn query(&self) -> (&[T], i8) {
        let m = self.m();
        (&self.xs[m], self.observed_ys[m])
    }

    pub fn to_doc(&self) -> TestTaskDoc<T> {
        TestTaskDoc {
            mu: self.mu.clone(),
            xs: self.xs.clone(),
            clean_ys: self.clean_ys.clone(),
            observed_ys: self.observed_ys.clone(),
            noisy_set: self.noisy_set.clone(),
        }
    }

    pub fn from_doc(doc: TestTaskDoc<T>) -> Result<Self> {
        let t = Self::from_parts(doc.mu, doc.xs, doc.clean_ys, doc.observed_ys)?;
        if t.noisy_set != doc.noisy_set {
            return Err(invalid(
                "noisy_set",
                "does not match the label disagreement",
            ));
        }
        Ok(t)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.to_doc())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_doc(serde_json::from_str(s)?)
    }
}

/// Draws a test-time task.
///
/// Features and clean labels come from `stream`; label flips come from a
/// separate child stream, so changing `p` never changes the features.
pub fn gen_test_task<T: Scalar>(params: &TaskParams, stream: RngStream) -> Result<TestTask<T>> {
    params.validate()?;
    let mut rng = stream.rng();
    let mu: Vec<T> = rng::sample_sphere(params.d, T::lit(params.r_tilde), &mut rng);
    let mut xs = Vec::with_capacity(params.m + 1);
    let mut clean = Vec::with_capacity(params.m + 1);
    for _ in 0..=params.m {
        let y = rng::rademacher(&mut rng);
        let mut x: Vec<T> = rng::sample_noise(&params.cov, &mut rng);
        linalg::axpy(T::lit(f64::from(y)), &mu, &mut x);
        xs.push(x);
        clean.push(y);
    }
    let (observed, _) =
        rng::flip_labels(&clean, params.p, &mut stream.child(tags::LABEL_NOISE).rng());
    TestTask::from_parts(mu, xs, clean, observed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn params(d: usize) -> TaskParams {
        TaskParams::reference(d)
    }

    #[test]
    fn context_mean_examples() {
        let xs = vec![vec![2.0, 0.0], vec![0.0, 4.0]];
        assert_eq!(context_mean(&xs, &[1, -1]).unwrap(), vec![1.0, -2.0]);
        assert_eq!(
            context_mean(&[vec![3.0, 1.0]], &[-1]).unwrap(),
            vec![-3.0, -1.0]
        );
        assert!(matches!(
            context_mean::<f64>(&[], &[]),
            Err(Error::Empty(_))
        ));
        assert!(context_mean(&[vec![1.0], vec![1.0, 2.0]], &[1, 1]).is_err());
    }

    #[test]
    fn context_mean_matches_naive_oracle() {
        let mut rng = RngStream::root(11).rng();
        let xs: Vec<Vec<f64>> = (0..1000)
            .map(|_| rng::standard_normal_vec(7, &mut rng))
            .collect();
        let ys: Vec<i8> = (0..1000).map(|_| rng::rademacher(&mut rng)).collect();
        let got = context_mean(&xs, &ys).unwrap();
        for j in 0..7 {
            // independent oracle: per-coordinate pairwise-free compensated sum
            let mut s = 0.0f64;
            let mut c = 0.0f64;
            for (x, &y) in xs.iter().zip(&ys) {
                let v = f64::from(y) * x[j] - c;
                let t = s + v;
                c = (t - s) - v;
                s = t;
            }
            assert_relative_eq!(got[j], s / 1000.0, max_relative = 1e-12, epsilon = 1e-14);
        }
    }

    #[test]
    fn embedding_layout() {
        let e = embed(&[vec![1.0, 2.0]], &[1], &[3.0, 4.0]).unwrap();
        assert_eq!((e.rows(), e.cols()), (3, 2));
        assert_eq!(e.as_slice(), &[1.0, 3.0, 2.0, 4.0, 1.0, 0.0]);
        let q = embed::<f64>(&[], &[], &[5.0, 6.0]).unwrap();
        assert_eq!(q.as_slice(), &[5.0, 6.0, 0.0]);
        assert!(embed(&[vec![1.0]], &[1], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn embedding_round_trips_context_mean() {
        let batch: Vec<PretrainTask<f64>> =
            gen_pretrain_batch(&params(6), RngStream::root(3)).unwrap();
        for t in batch.iter().take(3) {
            let back = context_mean_from_embedding(&t.embedding()).unwrap();
            for (a, b) in back.iter().zip(&t.context_mean) {
                assert_relative_eq!(a, b, max_relative = 1e-12, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn noiseless_context_mean_is_mu() {
        let mut p = params(4);
        p.n = 1;
        p.b = 5;
        p.cov = CovarianceSpec::zero(4);
        let batch: Vec<PretrainTask<f64>> = gen_pretrain_batch(&p, RngStream::root(0)).unwrap();
        for t in &batch {
            assert_eq!(t.context_mean, t.mu);
            // noiseless features are exactly y μ
            let expect: Vec<f64> = t.mu.iter().map(|v| f64::from(t.query_y) * v).collect();
            assert_eq!(t.query_x, expect);
        }
    }

    #[test]
    fn pretrain_mean_norms() {
        let mut p = params(100);
        p.r = 50.0;
        p.b = 100;
        let batch: Vec<PretrainTask<f64>> = gen_pretrain_batch(&p, RngStream::root(1)).unwrap();
        assert_eq!(batch.len(), 100);
        for t in &batch {
            assert!((linalg::norm(&t.mu) - 50.0).abs() <= 1e-10);
            assert_eq!(t.context_xs.len(), 40);
            assert_eq!(
                t.context_mean,
                context_mean(&t.context_xs, &t.context_ys).unwrap()
            );
        }
    }

    #[test]
    fn expected_context_mean_norm() {
        // E‖μ̂‖² = R² + tr(Λ)/N
        let mut p = params(100);
        p.r = 50.0;
        p.b = 1000;
        let batch: Vec<PretrainTask<f64>> = gen_pretrain_batch(&p, RngStream::root(2)).unwrap();
        let v: Vec<f64> = batch
            .iter()
            .map(|t| linalg::norm_sq(&t.context_mean))
            .collect();
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let se = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt();
        assert!((mean - 2502.5).abs() <= 5.0 * se, "mean {mean} se {se}");
    }

    #[test]
    fn batch_is_thread_count_invariant() {
        let p = TaskParams { b: 12, ..params(5) };
        let a: Vec<PretrainTask<f64>> = gen_pretrain_batch(&p, RngStream::root(4)).unwrap();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(3)
            .build()
            .unwrap();
        let b: Vec<PretrainTask<f64>> =
            pool.install(|| gen_pretrain_batch(&p, RngStream::root(4)).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn test_task_without_noise() {
        let p = TaskParams {
            p: 0.0,
            ..params(8)
        };
        let t: TestTask<f64> = gen_test_task(&p, RngStream::root(5)).unwrap();
        assert_eq!(t.observed_ys, t.clean_ys);
        assert!(t.noisy_set.is_empty());
        assert_eq!(t.clean_set, (0..20).collect::<Vec<_>>());
        assert_eq!(t.xs.len(), 21);
    }

    #[test]
    fn noiseless_test_task_mean_is_mu() {
        let p = TaskParams {
            m: 3,
            p: 0.0,
            cov: CovarianceSpec::zero(5),
            ..params(5)
        };
        let t: TestTask<f64> = gen_test_task(&p, RngStream::root(6)).unwrap();
        for (a, b) in t.context_mean.iter().zip(&t.mu) {
            assert_relative_eq!(a, b, max_relative = 1e-15);
        }
    }

    #[test]
    fn label_noise_only_touches_labels() {
        let clean_p = TaskParams {
            p: 0.0,
            ..params(10)
        };
        let noisy_p = TaskParams {
            p: 0.4,
            ..params(10)
        };
        for s in 0..10 {
            let a: TestTask<f64> = gen_test_task(&clean_p, RngStream::new(9, s)).unwrap();
            let b: TestTask<f64> = gen_test_task(&noisy_p, RngStream::new(9, s)).unwrap();
            assert_eq!(a.xs, b.xs);
            assert_eq!(a.clean_ys, b.clean_ys);
            assert_eq!(a.mu, b.mu);
        }
    }

    #[test]
    fn noisy_fraction_tracks_p() {
        let p = TaskParams {
            p: 0.1,
            ..params(3)
        };
        let tasks = 5000;
        let total: usize = (0..tasks)
            .map(|s| {
                gen_test_task::<f64>(&p, RngStream::new(12, s))
                    .unwrap()
                    .noisy_set
                    .len()
            })
            .sum();
        let frac = total as f64 / (tasks * 20) as f64;
        assert!((frac - 0.1).abs() <= 5.0 * (0.09 / (tasks * 20) as f64).sqrt());
    }

    #[test]
    fn residuals_are_standard_normal() {
        // Coordinate-wise Kolmogorov–Smirnov at α = 0.01 over pooled residuals.
        use statrs::distribution::{ContinuousCDF, Normal};
        let p = TaskParams {
            p: 0.3,
            ..params(4)
        };
        let mut res: Vec<Vec<f64>> = vec![Vec::new(); 4];
        for s in 0..300 {
            let t: TestTask<f64> = gen_test_task(&p, RngStream::new(13, s)).unwrap();
            for (x, &y) in t.xs.iter().zip(&t.clean_ys) {
                for j in 0..4 {
                    res[j].push(x[j] - f64::from(y) * t.mu[j]);
                }
            }
        }
        let normal = Normal::new(0.0, 1.0).unwrap();
        for mut r in res {
            r.sort_by(f64::total_cmp);
            let n = r.len() as f64;
            let ks = r
                .iter()
                .enumerate()
                .map(|(i, v)| {
                    let f = normal.cdf(*v);
                    (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
                })
                .fold(0.0, f64::max);
            assert!(ks < 1.628 / n.sqrt(), "KS = {ks}");
        }
    }

    #[test]
    fn test_task_json_round_trip() {
        let p = TaskParams {
            d: 3,
            m: 4,
            p: 0.3,
            cov: CovarianceSpec::identity(3),
            ..params(3)
        };
        let t: TestTask<f64> = gen_test_task(&p, RngStream::root(7)).unwrap();
        let s = t.to_json().unwrap();
        let v: serde_json::Value = serde_json::from_str(&s).unwrap();
        for key in ["mu", "xs", "clean_ys", "observed_ys", "noisy_set"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert_eq!(TestTask::from_json(&s).unwrap(), t);
        let bad = s.replace("\"noisy_set\":[", "\"noisy_set\":[99,");
        assert!(TestTask::<f64>::from_json(&bad).is_err());
    }

    #[test]
    fn pretrain_task_json_recomputes_mean() {
        let batch: Vec<PretrainTask<f64>> =
            gen_pretrain_batch(&TaskParams { b: 2, ..params(3) }, RngStream::root(8)).unwrap();
        let s = serde_json::to_string(&batch).unwrap();
        let back: Vec<PretrainTask<f64>> = serde_json::from_str(&s).unwrap();
        assert_eq!(back, batch);
        let bad =
            r#"[{"mu":[1.0],"context_xs":[[1.0]],"context_ys":[2],"query_x":[1.0],"query_y":1}]"#;
        assert!(serde_json::from_str::<Vec<PretrainTask<f64>>>(bad).is_err());
    }

    #[test]
    fn generic_over_f32() {
        let batch: Vec<PretrainTask<f32>> =
            gen_pretrain_batch(&TaskParams { b: 3, ..params(10) }, RngStream::root(1)).unwrap();
        let r = (linalg::norm(&batch[0].mu) as f64 - 5.0 * 10f64.sqrt()).abs();
        assert!(r < 1e-4);
    }

    #[test]
    fn rejects_bad_params() {
        assert!(TaskParams {
            p: 0.6,
            ..params(3)
        }
        .validate()
        .is_err());
        assert!(TaskParams { b: 0, ..params(3) }.validate().is_err());
        assert!(TaskParams {
            cov: CovarianceSpec::identity(2),
            ..params(3)
        }
        .validate()
        .is_err());
    }

    proptest! {
        #[test]
        fn context_mean_is_linear(c in prop::sample::select(vec![0.25, 0.5, -1.0, 2.0, -4.0, 8.0]), seed in 0u64..50) {
            let mut rng = RngStream::root(seed).rng();
            let xs: Vec<Vec<f64>> = (0..5).map(|_| rng::standard_normal_vec(3, &mut rng)).collect();
            let ys: Vec<i8> = (0..5).map(|_| rng::rademacher(&mut rng)).collect();
            let scaled: Vec<Vec<f64>> = xs.iter().map(|x| linalg::scale(c, x)).collect();
            let a = linalg::scale(c, &context_mean(&xs, &ys).unwrap());
            let b = context_mean(&scaled, &ys).unwrap();
            // power-of-two scales commute exactly with the rounding
            prop_assert_eq!(a, b);
        }
    }
}
