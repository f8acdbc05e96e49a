//! Splittable random streams and the samplers used by the task generators.
//!
//! A stream is a pair `(master_seed, stream_id)`. Each stream seeds a ChaCha8
//! generator from the master seed and selects the ChaCha stream by id, so
//! distinct ids give non-overlapping keystreams. Child streams are derived by
//! hashing `(stream_id, tag)`; task `k` of a batch always uses child `k`, which
//! keeps results identical for any thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{self, Matrix};
use crate::scalar::Scalar;

/// Concrete generator behind every stream.
pub type StreamRng = ChaCha8Rng;

/// Purpose tags for deriving child streams.
pub mod tags {
    pub const PRETRAIN: u64 = 0x7072_6574_7261_696e;
    pub const EVAL: u64 = 0x6576_616c;
    pub const LABEL_NOISE: u64 = 0x006e_6f69_7365;
    pub const QUERIES: u64 = 0x0071_7565_7279;
    pub const VERIFY: u64 = 0x7665_7269_6679;
    pub const FIXTURE: u64 = 0x6669_7874;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub master_seed: u64,
    pub stream_id: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        Self {
            master_seed,
            stream_id,
        }
    }

    /// Root stream for a seed.
    pub fn root(master_seed: u64) -> Self {
        Self::new(master_seed, 0)
    }

    /// Child stream for a purpose tag or an index.
    pub fn child(&self, tag: u64) -> Self {
        Self {
            master_seed: self.master_seed,
            stream_id: splitmix64(self.stream_id ^ splitmix64(tag)),
        }
    }

    /// Fresh generator positioned at the start of this stream.
    pub fn rng(&self) -> StreamRng {
        let mut r = ChaCha8Rng::seed_from_u64(self.master_seed);
        r.set_stream(self.stream_id);
        r
    }
}

/// Noise covariance Λ. General covariances are given by a lower-triangular
/// factor `L` with `Λ = L Lᵀ`; nothing here factorizes matrices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovarianceSpec {
    Identity {
        d: usize,
    },
    Diagonal {
        variances: Vec<f64>,
    },
    Factor {
        lower: Matrix<f64>,
    },
    /// Λ = 0. Only for exact tests of noiseless identities; not positive definite.
    Zero {
        d: usize,
    },
}

impl CovarianceSpec {
    pub fn identity(d: usize) -> Self {
        Self::Identity { d }
    }

    pub fn diagonal(variances: Vec<f64>) -> Result<Self> {
        if variances.is_empty() {
            return Err(Error::Empty("covariance variances"));
        }
        if variances.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(invalid("variances", "all variances must be finite and > 0"));
        }
        Ok(Self::Diagonal { variances })
    }

    pub fn factor(lower: Matrix<f64>) -> Result<Self> {
        if !lower.is_square() || lower.rows() == 0 {
            return Err(invalid(
                "factor",
                "factor must be a non-empty square matrix",
            ));
        }
        for i in 0..lower.rows() {
            for j in (i + 1)..lower.cols() {
                if lower[(i, j)] != 0.0 {
                    return Err(invalid("factor", "factor must be lower-triangular"));
                }
            }
            if lower[(i, i)].is_nan() || lower[(i, i)] <= 0.0 {
                return Err(invalid("factor", "factor diagonal must be positive"));
            }
        }
        if !lower.is_finite() {
            return Err(invalid("factor", "non-finite entry"));
        }
        Ok(Self::Factor { lower })
    }

    pub fn zero(d: usize) -> Self {
        Self::Zero { d }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Identity { d } | Self::Zero { d } => *d,
            Self::Diagonal { variances } => variances.len(),
            Self::Factor { lower } => lower.rows(),
        }
    }

    /// Dense Λ.
    pub fn dense(&self) -> Matrix<f64> {
        match self {
            Self::Identity { d } => Matrix::identity(*d),
            Self::Zero { d } => Matrix::zeros(*d, *d),
            Self::Diagonal { variances } => Matrix::from_diag(variances),
            Self::Factor { lower } => lower.matmul(&lower.transpose()).expect("square factor"),
        }
    }

    /// tr(Λ)
    pub fn trace(&self) -> f64 {
        match self {
            Self::Identity { d } => *d as f64,
            Self::Zero { .. } => 0.0,
            Self::Diagonal { variances } => variances.iter().sum(),
            Self::Factor { lower } => lower.frobenius_sq(),
        }
    }

    /// tr(Λ²) = ‖Λ‖_F²
    pub fn trace_sq(&self) -> f64 {
        match self {
            Self::Identity { d } => *d as f64,
            Self::Zero { .. } => 0.0,
            Self::Diagonal { variances } => variances.iter().map(|v| v * v).sum(),
            Self::Factor { .. } => self.dense().frobenius_sq(),
        }
    }

    /// ‖Λ‖₂
    pub fn op_norm(&self) -> f64 {
        match self {
            Self::Identity { .. } => 1.0,
            Self::Zero { .. } => 0.0,
            Self::Diagonal { variances } => variances.iter().copied().fold(0.0, f64::max),
            Self::Factor { lower } => {
                let s = linalg::spectral_norm(lower);
                s * s
            }
        }
    }

    /// Parses `identity`, `zero`, `diag:v1,v2,...` or `factor:l11,l12,...`
    /// (row-major `d x d`) for dimension `d`.
    pub fn parse(s: &str, d: usize) -> Result<Self> {
        let s = s.trim();
        let parse_list = |body: &str| -> Result<Vec<f64>> {
            body.split(',')
                .map(|t| {
                    t.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::Parse(format!("covariance entry `{t}`: {e}")))
                })
                .collect()
        };
        let spec = match s.split_once(':') {
            None if s == "identity" => Self::identity(d),
            None if s == "zero" => Self::zero(d),
            Some(("diag", body)) => Self::diagonal(parse_list(body)?)?,
            Some(("factor", body)) => {
                Self::factor(Matrix::from_row_major(d, d, parse_list(body)?)?)?
            }
            _ => return Err(Error::Parse(format!("unknown covariance `{s}`"))),
        };
        if spec.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: spec.dim(),
            });
        }
        Ok(spec)
    }

    /// Inverse of [`CovarianceSpec::parse`].
    pub fn to_config_string(&self) -> String {
        let join = |v: &[f64]| {
            v.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        match self {
            Self::Identity { .. } => "identity".into(),
            Self::Zero { .. } => "zero".into(),
            Self::Diagonal { variances } => format!("diag:{}", join(variances)),
            Self::Factor { lower } => format!("factor:{}", join(lower.as_slice())),
        }
    }
}

pub fn standard_normal<T: Scalar, R: Rng + ?Sized>(rng: &mut R) -> T {
    T::lit(rng.sample::<f64, _>(StandardNormal))
}

pub fn standard_normal_vec<T: Scalar, R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<T> {
    (0..d).map(|_| standard_normal(rng)).collect()
}

/// Uniform ±1.
pub fn rademacher<R: Rng + ?Sized>(rng: &mut R) -> i8 {
    if rng.random::<bool>() {
        1
    } else {
        -1
    }
}

/// Uniform point on the sphere of the given radius in `R^d`.
///
/// Normalizes a standard Gaussian draw; an all-zero draw is resampled.
pub fn sample_sphere<T: Scalar, R: Rng + ?Sized>(d: usize, radius: T, rng: &mut R) -> Vec<T> {
    assert!(d >= 1, "sphere dimension must be >= 1");
    assert!(radius >= T::zero(), "radius must be nonnegative");
    loop {
        let g: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let n = linalg::norm(&g);
        if n > 0.0 {
            let r = radius.as_f64();
            return g.into_iter().map(|v| T::lit(v / n * r)).collect();
        }
    }
}

/// One draw from N(0, Λ).
pub fn sample_noise<T: Scalar, R: Rng + ?Sized>(cov: &CovarianceSpec, rng: &mut R) -> Vec<T> {
    match cov {
        CovarianceSpec::Zero { d } => vec![T::zero(); *d],
        CovarianceSpec::Identity { d } => standard_normal_vec(*d, rng),
        CovarianceSpec::Diagonal { variances } => variances
            .iter()
            .map(|v| T::lit(v.sqrt() * rng.sample::<f64, _>(StandardNormal)))
            .collect(),
        CovarianceSpec::Factor { lower } => {
            let g: Vec<f64> = (0..lower.rows())
                .map(|_| rng.sample(StandardNormal))
                .collect();
            lower
                .matvec(&g)
                .expect("factor dimension")
                .into_iter()
                .map(T::lit)
                .collect()
        }
    }
}

/// Negates each label independently with probability `p`.
///
/// Returns the observed labels and the (0-based, increasing) indices that
/// were flipped.
pub fn flip_labels<R: Rng + ?Sized>(clean: &[i8], p: f64, rng: &mut R) -> (Vec<i8>, Vec<usize>) {
    assert!(
        (0.0..=1.0).contains(&p),
        "flip probability must lie in [0, 1]"
    );
    let mut observed = Vec::with_capacity(clean.len());
    let mut noisy = Vec::new();
    for (i, &y) in clean.iter().enumerate() {
        let u: f64 = rng.random();
        if u < p {
            observed.push(-y);
            noisy.push(i);
        } else {
            observed.push(y);
        }
    }
    (observed, noisy)
}
