//! Convex linear-attention predictor `ŷ = μ̂ᵀ W x`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{self, Matrix};
use crate::scalar::Scalar;
use crate::task::TestTask;

/// Where a preconditioner came from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    GdStep { step: usize },
    MaxMargin,
    Identity,
    Custom,
}

/// The `d x d` matrix `W` of the predictor.
#[derive(Clone, Debug, PartialEq)]
pub struct Preconditioner<T: Scalar> {
    pub w: Matrix<T>,
    pub meta: Provenance,
}

#[derive(Serialize, Deserialize)]
struct PreconditionerDoc<T> {
    d: usize,
    layout: String,
    data: Vec<T>,
    meta: Provenance,
}

impl<T: Scalar> Preconditioner<T> {
    pub fn new(w: Matrix<T>, meta: Provenance) -> Result<Self> {
        if !w.is_square() {
            return Err(invalid("W", "preconditioner must be square"));
        }
        if !w.is_finite() {
            return Err(invalid("W", "non-finite entry"));
        }
        Ok(Self { w, meta })
    }

    pub fn identity(d: usize) -> Self {
        Self {
            w: Matrix::identity(d),
            meta: Provenance::Identity,
        }
    }

    pub fn zeros(d: usize) -> Self {
        Self {
            w: Matrix::zeros(d, d),
            meta: Provenance::Custom,
        }
    }

    pub fn dim(&self) -> usize {
        self.w.rows()
    }

    /// `Wᵀ μ̂`, reusable across queries sharing a context.
    pub fn context_direction(&self, mean: &[T]) -> Result<Vec<T>> {
        self.w.matvec_t(mean)
    }

    /// JSON document `{d, layout: "row-major", data, meta}`; floats use the
    /// shortest round-trip decimal representation.
    pub fn to_json(&self) -> Result<String> {
        let doc = PreconditionerDoc {
            d: self.dim(),
            layout: "row-major".into(),
            data: self.w.as_slice().to_vec(),
            meta: self.meta.clone(),
        };
        Ok(serde_json::to_string(&doc)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: PreconditionerDoc<T> = serde_json::from_str(s)?;
        if doc.layout != "row-major" {
            return Err(invalid(
                "layout",
                format!("unsupported layout `{}`", doc.layout),
            ));
        }
        Self::new(Matrix::from_row_major(doc.d, doc.d, doc.data)?, doc.meta)
    }
}

/// `meanᵀ W query`, evaluated as `(Wᵀ mean)ᵀ query`.
pub fn predict<T: Scalar>(w: &Preconditioner<T>, mean: &[T], query: &[T]) -> Result<T> {
    let d = w.dim();
    for len in [mean.len(), query.len()] {
        if len != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: len,
            });
        }
    }
    let v = w.context_direction(mean)?;
    Ok(linalg::dot(&v, query))
}

/// Score of context example `k` (0-based) when it is also the query.
///
/// The context average is taken over all `M` examples, including `k`.
pub fn leave_none_out_score<T: Scalar>(
    w: &Preconditioner<T>,
    task: &TestTask<T>,
    k: usize,
) -> Result<T> {
    let m = task.m();
    if k >= m {
        return Err(Error::IndexOutOfRange { index: k, len: m });
    }
    predict(w, &task.context_mean, &task.xs[k])
}
