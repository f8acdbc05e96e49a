//! Full-batch gradient descent on the in-context classification loss
//! `L(W) = (1/B) Σ_τ ℓ(y_τ μ̂_τᵀ W x_τ)`.
//!
//! Since `∇_W (μ̂ᵀ W x) = μ̂ xᵀ`, every GD iterate started from `W₀` stays in
//! `W₀ + span{y_τ μ̂_τ x_τᵀ}`. [`train`] iterates the coefficients of that
//! expansion, using the Gram matrix of the rank-1 features for the margins;
//! [`train_dense`] iterates `W` directly and serves as the reference path.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dual::{self, GramMatrix};
use crate::error::{invalid, Error, Result};
use crate::linalg::{self, Matrix};
use crate::model::{Preconditioner, Provenance};
use crate::scalar::Scalar;
use crate::task::PretrainTask;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Logistic,
    Exponential,
}

impl LossKind {
    /// `ℓ(m)`; logistic uses the overflow-free branch form.
    pub fn value<T: Scalar>(self, m: T) -> T {
        match self {
            LossKind::Logistic => {
                if m >= T::zero() {
                    (-m).exp().ln_1p()
                } else {
                    -m + m.exp().ln_1p()
                }
            }
            LossKind::Exponential => (-m).exp(),
        }
    }

    /// `ℓ'(m)`
    pub fn derivative<T: Scalar>(self, m: T) -> T {
        match self {
            LossKind::Logistic => {
                if m >= T::zero() {
                    let e = (-m).exp();
                    -e / (T::one() + e)
                } else {
                    -T::one() / (T::one() + m.exp())
                }
            }
            LossKind::Exponential => -(-m).exp(),
        }
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logistic" => Ok(Self::Logistic),
            "exponential" | "exp" => Ok(Self::Exponential),
            _ => Err(Error::Parse(format!("unknown loss `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Init<T: Scalar> {
    Zero,
    Custom(Matrix<T>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig<T: Scalar> {
    pub loss: LossKind,
    pub step_size: f64,
    pub steps: usize,
    pub init: Init<T>,
    /// Loss is recorded at step 0, every `record_every` steps, and at the end.
    pub record_every: usize,
    /// Optional cadence for storing intermediate iterates.
    pub snapshot_every: Option<usize>,
}

impl<T: Scalar> Default for TrainConfig<T> {
    /// Logistic loss, step size 0.01, 300 steps from zero.
    fn default() -> Self {
        Self {
            loss: LossKind::Logistic,
            step_size: 0.01,
            steps: 300,
            init: Init::Zero,
            record_every: 1,
            snapshot_every: None,
        }
    }
}

impl<T: Scalar> TrainConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size.is_finite() && self.step_size > 0.0) {
            return Err(invalid("step_size", "must be finite and > 0"));
        }
        if self.record_every == 0 {
            return Err(invalid("record_every", "must be >= 1"));
        }
        if self.snapshot_every == Some(0) {
            return Err(invalid("snapshot_every", "must be >= 1"));
        }
        Ok(())
    }

    fn records(&self, t: usize) -> bool {
        t.is_multiple_of(self.record_every) || t == self.steps
    }

    fn snapshots(&self, t: usize) -> bool {
        self.snapshot_every.is_some_and(|k| t.is_multiple_of(k))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainTrace<T: Scalar> {
    /// Steps at which the loss was recorded (increasing).
    pub steps: Vec<usize>,
    pub losses: Vec<T>,
    pub final_w: Preconditioner<T>,
    pub snapshots: Vec<(usize, Preconditioner<T>)>,
}

impl<T: Scalar> TrainTrace<T> {
    /// `step,loss` CSV with shortest round-trip floats.
    pub fn loss_csv(&self) -> String {
        let mut s = String::from("step,loss\n");
        for (t, l) in self.steps.iter().zip(&self.losses) {
            s.push_str(&format!("{t},{l}\n"));
        }
        s
    }
}

fn check_batch<T: Scalar>(w: &Matrix<T>, batch: &[PretrainTask<T>]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let d = w.rows();
    if !w.is_square() {
        return Err(invalid("W", "must be square"));
    }
    for t in batch {
        if t.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: t.dim(),
            });
        }
    }
    Ok(())
}

/// Margins `y_τ μ̂_τᵀ W x_τ`.
pub fn margins<T: Scalar>(w: &Matrix<T>, batch: &[PretrainTask<T>]) -> Result<Vec<T>> {
    check_batch(w, batch)?;
    Ok(batch
        .par_iter()
        .map(|t| {
            let v = w.matvec_t(&t.context_mean).expect("checked dims");
            T::lit(f64::from(t.query_y)) * linalg::dot(&v, &t.query_x)
        })
        .collect())
}

fn mean_loss<T: Scalar>(kind: LossKind, margins: &[T]) -> T {
    let mut s = T::zero();
    for m in margins {
        s += kind.value(*m);
    }
    s / T::from_usize_lossy(margins.len())
}

pub fn loss<T: Scalar>(w: &Matrix<T>, batch: &[PretrainTask<T>], kind: LossKind) -> Result<T> {
    Ok(mean_loss(kind, &margins(w, batch)?))
}

/// `(1/B) Σ_τ ℓ'(m_τ) y_τ μ̂_τ x_τᵀ`.
pub fn gradient<T: Scalar>(
    w: &Matrix<T>,
    batch: &[PretrainTask<T>],
    kind: LossKind,
) -> Result<Matrix<T>> {
    let m = margins(w, batch)?;
    let inv_b = T::one() / T::from_usize_lossy(batch.len());
    let coef: Vec<T> = batch
        .iter()
        .zip(&m)
        .map(|(t, mi)| kind.derivative(*mi) * T::lit(f64::from(t.query_y)) * inv_b)
        .collect();
    Ok(dual::combine_features(&coef, batch))
}

fn diverged<T: Scalar>(step: usize, l: T) -> Error {
    Error::Diverged {
        step,
        loss: l.as_f64(),
    }
}

/// Gradient descent in the rank-1 feature expansion.
pub fn train<T: Scalar>(
    config: &TrainConfig<T>,
    batch: &[PretrainTask<T>],
) -> Result<TrainTrace<T>> {
    config.validate()?;
    let d = batch.first().ok_or(Error::Empty("batch"))?.dim();
    let gram = GramMatrix::build(batch)?;
    train_with_gram(config, batch, &gram, d)
}

/// Same as [`train`] with a precomputed Gram matrix.
pub fn train_with_gram<T: Scalar>(
    config: &TrainConfig<T>,
    batch: &[PretrainTask<T>],
    gram: &GramMatrix<T>,
    d: usize,
) -> Result<TrainTrace<T>> {
    config.validate()?;
    let init = match &config.init {
        Init::Zero => Matrix::zeros(d, d),
        Init::Custom(w) => w.clone(),
    };
    check_batch(&init, batch)?;
    let b = batch.len();
    if gram.len() != b {
        return Err(Error::DimensionMismatch {
            expected: b,
            got: gram.len(),
        });
    }
    let base = match &config.init {
        Init::Zero => vec![T::zero(); b],
        Init::Custom(_) => margins(&init, batch)?,
    };
    let step = T::lit(config.step_size) / T::from_usize_lossy(b);
    let mut coef = vec![T::zero(); b];
    let mut trace = TrainTrace {
        steps: Vec::new(),
        losses: Vec::new(),
        final_w: Preconditioner::zeros(d),
        snapshots: Vec::new(),
    };
    let assemble = |coef: &[T]| -> Matrix<T> {
        let signed: Vec<T> = coef
            .iter()
            .zip(batch)
            .map(|(a, t)| *a * T::lit(f64::from(t.query_y)))
            .collect();
        let mut w = init.clone();
        w.add_scaled(T::one(), &dual::combine_features(&signed, batch))
            .expect("same shape");
        w
    };
    for t in 0..=config.steps {
        let gm = gram.matvec(&coef);
        let m: Vec<T> = base.iter().zip(&gm).map(|(a, g)| *a + *g).collect();
        let l = mean_loss(config.loss, &m);
        if !l.is_finite() {
            return Err(diverged(t, l));
        }
        if config.records(t) {
            trace.steps.push(t);
            trace.losses.push(l);
        }
        if config.snapshots(t) {
            trace.snapshots.push((
                t,
                Preconditioner::new(assemble(&coef), Provenance::GdStep { step: t })?,
            ));
        }
        if t == config.steps {
            break;
        }
        for (a, mi) in coef.iter_mut().zip(&m) {
            *a -= step * config.loss.derivative(*mi);
        }
    }
    let w = assemble(&coef);
    if !w.is_finite() {
        return Err(diverged(config.steps, T::infinity()));
    }
    trace.final_w = Preconditioner::new(w, Provenance::GdStep { step: config.steps })?;
    Ok(trace)
}

/// Gradient descent on `W` itself: `W ← W − α ∇L(W)`.
pub fn train_dense<T: Scalar>(
    config: &TrainConfig<T>,
    batch: &[PretrainTask<T>],
) -> Result<TrainTrace<T>> {
    config.validate()?;
    let d = batch.first().ok_or(Error::Empty("batch"))?.dim();
    let mut w = match &config.init {
        Init::Zero => Matrix::zeros(d, d),
        Init::Custom(w) => w.clone(),
    };
    check_batch(&w, batch)?;
    let alpha = T::lit(config.step_size);
    let mut trace = TrainTrace {
        steps: Vec::new(),
        losses: Vec::new(),
        final_w: Preconditioner::zeros(d),
        snapshots: Vec::new(),
    };
    for t in 0..=config.steps {
        let l = loss(&w, batch, config.loss)?;
        if !l.is_finite() {
            return Err(diverged(t, l));
        }
        if config.records(t) {
            trace.steps.push(t);
            trace.losses.push(l);
        }
        if config.snapshots(t) {
            trace.snapshots.push((
                t,
                Preconditioner::new(w.clone(), Provenance::GdStep { step: t })?,
            ));
        }
        if t == config.steps {
            break;
        }
        let g = gradient(&w, batch, config.loss)?;
        w.add_scaled(-alpha, &g)?;
        if !w.is_finite() {
            return Err(diverged(t + 1, T::infinity()));
        }
    }
    trace.final_w = Preconditioner::new(w, Provenance::GdStep { step: config.steps })?;
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{self, CovarianceSpec, RngStream};
    use crate::task::{gen_pretrain_batch, TaskParams};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn small_batch(d: usize, b: usize, r: f64, seed: u64) -> Vec<PretrainTask<f64>> {
        let p = TaskParams {
            d,
            r,
            r_tilde: 1.0,
            n: 4,
            m: 4,
            b,
            p: 0.0,
            cov: CovarianceSpec::identity(d),
        };
        gen_pretrain_batch(&p, RngStream::root(seed)).unwrap()
    }

    fn random_w(d: usize, scale: f64, seed: u64) -> Matrix<f64> {
        let mut r = RngStream::new(seed, 99).rng();
        Matrix::from_row_major(d, d, rng::standard_normal_vec(d * d, &mut r))
            .unwrap()
            .scaled(scale)
    }

    #[test]
    fn loss_at_zero() {
        let batch = small_batch(5, 4, 1.0, 0);
        let z = Matrix::zeros(5, 5);
        assert_eq!(
            loss(&z, &batch, LossKind::Logistic).unwrap(),
            std::f64::consts::LN_2
        );
        assert_eq!(loss(&z, &batch, LossKind::Exponential).unwrap(), 1.0);
    }

    #[test]
    fn scalar_loss_values() {
        assert_relative_eq!(
            LossKind::Logistic.value(2.0f64),
            0.126_928_011_042_972_1,
            max_relative = 1e-14
        );
        assert_relative_eq!(
            LossKind::Logistic.value(2.0f64),
            (1.0 + (-2.0f64).exp()).ln(),
            max_relative = 1e-15
        );
        // stable branches
        assert_eq!(LossKind::Logistic.value(1e6f64), 0.0);
        assert_eq!(LossKind::Logistic.value(-1e6f64), 1e6);
        assert!(LossKind::Exponential.value(-1e6f64).is_infinite());
        assert_eq!(LossKind::Logistic.derivative(0.0f64), -0.5);
        assert_eq!(LossKind::Exponential.derivative(0.0f64), -1.0);
        assert_eq!(LossKind::Logistic.derivative(-1e6f64), -1.0);
    }

    #[test]
    fn batch_of_one_with_margin_two() {
        // d = 1: μ̂ = 1, x = 2, y = 1 and W = [1] gives margin 2.
        let t = PretrainTask::new(vec![1.0], vec![vec![1.0]], vec![1], vec![2.0], 1).unwrap();
        let w = Matrix::from_row_major(1, 1, vec![1.0]).unwrap();
        assert_relative_eq!(
            loss(&w, &[t], LossKind::Logistic).unwrap(),
            (1.0 + (-2.0f64).exp()).ln(),
            max_relative = 1e-15
        );
    }

    #[test]
    fn gradient_at_zero() {
        let batch = small_batch(4, 6, 1.0, 1);
        let z = Matrix::zeros(4, 4);
        let mut expect = Matrix::zeros(4, 4);
        for t in &batch {
            expect
                .add_outer(f64::from(t.query_y), &t.context_mean, &t.query_x)
                .unwrap();
        }
        let g_log = gradient(&z, &batch, LossKind::Logistic).unwrap();
        let g_exp = gradient(&z, &batch, LossKind::Exponential).unwrap();
        for k in 0..16 {
            let e = expect.as_slice()[k] / 6.0;
            assert_relative_eq!(
                g_log.as_slice()[k],
                -0.5 * e,
                max_relative = 1e-12,
                epsilon = 1e-15
            );
            assert_relative_eq!(
                g_exp.as_slice()[k],
                -e,
                max_relative = 1e-12,
                epsilon = 1e-15
            );
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let h = 1e-5;
        for kind in [LossKind::Logistic, LossKind::Exponential] {
            for seed in 0..3 {
                let batch = small_batch(5, 4, 1.0, 10 + seed);
                let w = random_w(5, 0.1, seed);
                let g = gradient(&w, &batch, kind).unwrap();
                for k in 0..25 {
                    let mut wp = w.clone();
                    wp.as_mut_slice()[k] += h;
                    let mut wm = w.clone();
                    wm.as_mut_slice()[k] -= h;
                    let fd = (loss(&wp, &batch, kind).unwrap() - loss(&wm, &batch, kind).unwrap())
                        / (2.0 * h);
                    let an = g.as_slice()[k];
                    assert!(
                        (fd - an).abs() <= 1e-6 * an.abs().max(1e-3),
                        "{kind:?} entry {k}: {fd} vs {an}"
                    );
                }
            }
        }
    }

    #[test]
    fn gradient_vanishes_without_signal() {
        let t = PretrainTask::new(
            vec![0.0, 0.0],
            vec![vec![1.0, 2.0], vec![1.0, 2.0]],
            vec![1, -1],
            vec![1.0, 1.0],
            1,
        )
        .unwrap();
        assert_eq!(t.context_mean, vec![0.0, 0.0]);
        let g = gradient(&random_w(2, 1.0, 0), &[t.clone(), t], LossKind::Logistic).unwrap();
        assert!(g.as_slice().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn zero_steps_returns_init() {
        let batch = small_batch(3, 5, 1.0, 2);
        let w0 = random_w(3, 0.2, 3);
        let cfg = TrainConfig {
            steps: 0,
            init: Init::Custom(w0.clone()),
            ..TrainConfig::default()
        };
        let tr = train(&cfg, &batch).unwrap();
        assert_eq!(tr.final_w.w, w0);
        assert_eq!(tr.steps, vec![0]);
    }

    #[test]
    fn one_step_from_zero() {
        let batch = small_batch(4, 5, 1.0, 3);
        let cfg = TrainConfig {
            steps: 1,
            ..TrainConfig::default()
        };
        let tr = train(&cfg, &batch).unwrap();
        let mut expect = Matrix::zeros(4, 4);
        for t in &batch {
            expect
                .add_outer(
                    0.01 / (2.0 * 5.0) * f64::from(t.query_y),
                    &t.context_mean,
                    &t.query_x,
                )
                .unwrap();
        }
        for (a, b) in tr.final_w.w.as_slice().iter().zip(expect.as_slice()) {
            assert_relative_eq!(a, b, max_relative = 1e-12, epsilon = 1e-16);
        }
        assert_eq!(tr.final_w.meta, Provenance::GdStep { step: 1 });
    }

    #[test]
    fn factored_and_dense_paths_agree() {
        for (kind, init) in [
            (LossKind::Logistic, Init::Zero),
            (LossKind::Exponential, Init::Custom(random_w(6, 0.01, 5))),
        ] {
            let batch = small_batch(6, 9, 1.5, 4);
            let cfg = TrainConfig {
                loss: kind,
                step_size: 0.05,
                steps: 200,
                init,
                record_every: 50,
                snapshot_every: Some(100),
            };
            let a = train(&cfg, &batch).unwrap();
            let b = train_dense(&cfg, &batch).unwrap();
            assert_eq!(a.steps, b.steps);
            for (x, y) in a.losses.iter().zip(&b.losses) {
                assert_relative_eq!(x, y, max_relative = 1e-10);
            }
            let scale = b.final_w.w.max_abs();
            for (x, y) in a.final_w.w.as_slice().iter().zip(b.final_w.w.as_slice()) {
                assert!((x - y).abs() <= 1e-10 * scale);
            }
            assert_eq!(a.snapshots.len(), 3);
        }
    }

    #[test]
    fn loss_decreases_at_reference_scale() {
        let d = 10;
        let p = TaskParams {
            b: 30,
            ..TaskParams::reference(d)
        };
        let batch: Vec<PretrainTask<f64>> = gen_pretrain_batch(&p, RngStream::root(6)).unwrap();
        let cfg = TrainConfig {
            record_every: 10,
            ..TrainConfig::default()
        };
        let tr = train(&cfg, &batch).unwrap();
        assert_eq!(tr.steps.len(), 31);
        for w in tr.losses.windows(2) {
            assert!(w[1] < w[0], "loss not decreasing: {:?}", w);
        }
    }

    #[test]
    fn exponential_divergence_is_reported() {
        // Negative margins with a huge step: exp(-m) overflows.
        let t = PretrainTask::new(vec![1.0], vec![vec![1.0]], vec![1], vec![1.0], 1).unwrap();
        let cfg = TrainConfig {
            loss: LossKind::Exponential,
            step_size: 1.0,
            steps: 10,
            init: Init::Custom(Matrix::from_row_major(1, 1, vec![-800.0]).unwrap()),
            ..TrainConfig::default()
        };
        assert!(matches!(
            train(&cfg, std::slice::from_ref(&t)),
            Err(Error::Diverged { step: 0, .. })
        ));
        assert!(matches!(
            train_dense(&cfg, &[t]),
            Err(Error::Diverged { step: 0, .. })
        ));
    }

    #[test]
    fn trace_csv_format() {
        let batch = small_batch(2, 2, 1.0, 7);
        let tr = train(
            &TrainConfig {
                steps: 2,
                ..TrainConfig::default()
            },
            &batch,
        )
        .unwrap();
        let csv = tr.loss_csv();
        assert!(csv.starts_with("step,loss\n0,0.6931471805599453\n"));
        assert_eq!(csv.lines().count(), 4);
    }

    #[test]
    fn thread_count_does_not_change_training() {
        let batch = small_batch(8, 16, 2.0, 8);
        let cfg = TrainConfig {
            steps: 50,
            ..TrainConfig::default()
        };
        let a = train(&cfg, &batch).unwrap();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(4)
            .build()
            .unwrap();
        let b = pool.install(|| train(&cfg, &batch).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn f32_training_runs() {
        let p = TaskParams {
            b: 8,
            ..TaskParams::reference(6)
        };
        let batch: Vec<PretrainTask<f32>> = gen_pretrain_batch(&p, RngStream::root(2)).unwrap();
        let tr = train(&TrainConfig::default(), &batch).unwrap();
        assert!(tr.losses.last().unwrap() < &std::f32::consts::LN_2);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn loss_is_convex_along_segments(seed in 0u64..1000, theta in 0.0f64..1.0) {
            let batch = small_batch(3, 5, 1.0, seed);
            let a = random_w(3, 0.5, seed);
            let b = random_w(3, 0.5, seed + 1);
            for kind in [LossKind::Logistic, LossKind::Exponential] {
                let mut mix = a.scaled(theta);
                mix.add_scaled(1.0 - theta, &b).unwrap();
                let lhs = loss(&mix, &batch, kind).unwrap();
                let rhs = theta * loss(&a, &batch, kind).unwrap() + (1.0 - theta) * loss(&b, &batch, kind).unwrap();
                prop_assert!(lhs <= rhs + 1e-10);
            }
        }

        #[test]
        fn small_steps_decrease_loss(seed in 0u64..1000) {
            let batch = small_batch(4, 6, 1.0, seed);
            let cfg = TrainConfig { step_size: 1e-3, steps: 20, ..TrainConfig::default() };
            let tr = train(&cfg, &batch).unwrap();
            for w in tr.losses.windows(2) {
                prop_assert!(w[1] <= w[0]);
            }
        }
    }
}
