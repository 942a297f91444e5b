//! Alignment, InfoNCE and triplet objectives with closed-form gradients in `W`.
//!
//! Every loss is a function of cosine scores `s = u · t` where
//! `u = normalize(qᵀ W)` and `t` is a unit target. With `z = qᵀ W`,
//! `∂s/∂z = (t − s u) / ‖z‖` and `∂s/∂W = q ⊗ ∂s/∂z`, so each example only
//! needs the upstream coefficients `∂L/∂s` for its targets.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adapter::{normalize_owned, Adapter};
use crate::error::{Error, Result};
use crate::matrix::{dot, Matrix};
use crate::scalar::Scalar;

/// Loss value with its gradient with respect to the adapter weights.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue<T> {
    pub value: T,
    pub grad: Matrix<T>,
    /// Examples whose adapted query fell under the norm floor; they add no gradient.
    pub degenerate: usize,
}

/// `(E_q(d), E_d(d))` pairs for the same documents, rows unit-normalized.
#[derive(Debug, Clone)]
pub struct AlignmentBatch<T> {
    q_side: Matrix<T>,
    d_side: Matrix<T>,
}

fn normalize_rows<T: Scalar>(m: &mut Matrix<T>) {
    for i in 0..m.rows() {
        let n = normalize_owned(m.row(i).to_vec());
        if !n.degenerate {
            m.row_mut(i).copy_from_slice(&n.vector);
        }
    }
}

impl<T: Scalar> AlignmentBatch<T> {
    /// Rows of both sides are normalized here.
    pub fn new(mut q_side: Matrix<T>, mut d_side: Matrix<T>) -> Result<Self> {
        if q_side.rows() != d_side.rows() {
            return Err(Error::dims("alignment batch rows", q_side.rows(), d_side.rows()));
        }
        if !q_side.is_finite() || !d_side.is_finite() {
            return Err(Error::NonFinite {
                context: "alignment batch".into(),
            });
        }
        normalize_rows(&mut q_side);
        normalize_rows(&mut d_side);
        Ok(Self { q_side, d_side })
    }

    pub fn len(&self) -> usize {
        self.q_side.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn q_side(&self) -> &Matrix<T> {
        &self.q_side
    }

    pub fn d_side(&self) -> &Matrix<T> {
        &self.d_side
    }

    fn check(&self, a: &Adapter<T>) -> Result<()> {
        if self.q_side.cols() != a.query_dim() {
            return Err(Error::dims("alignment q_side", a.query_dim(), self.q_side.cols()));
        }
        if self.d_side.cols() != a.doc_dim() {
            return Err(Error::dims("alignment d_side", a.doc_dim(), self.d_side.cols()));
        }
        Ok(())
    }
}

/// Queries with one positive and `k` explicit negatives each.
/// Negatives are stored flat: rows `i*k .. (i+1)*k` belong to example `i`.
#[derive(Debug, Clone)]
pub struct ContrastiveBatch<T> {
    queries: Matrix<T>,
    positives: Matrix<T>,
    negatives: Matrix<T>,
    k: usize,
}

impl<T: Scalar> ContrastiveBatch<T> {
    pub fn new(mut queries: Matrix<T>, mut positives: Matrix<T>, mut negatives: Matrix<T>, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid(
                "contrastive batch needs at least one negative per example",
            ));
        }
        let n = queries.rows();
        if positives.rows() != n {
            return Err(Error::dims("contrastive positives", n, positives.rows()));
        }
        if negatives.rows() != n * k {
            return Err(Error::dims("contrastive negatives", n * k, negatives.rows()));
        }
        if negatives.cols() != positives.cols() {
            return Err(Error::dims(
                "contrastive negative dim",
                positives.cols(),
                negatives.cols(),
            ));
        }
        if !(queries.is_finite() && positives.is_finite() && negatives.is_finite()) {
            return Err(Error::NonFinite {
                context: "contrastive batch".into(),
            });
        }
        normalize_rows(&mut queries);
        normalize_rows(&mut positives);
        normalize_rows(&mut negatives);
        Ok(Self {
            queries,
            positives,
            negatives,
            k,
        })
    }

    pub fn len(&self) -> usize {
        self.queries.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn query(&self, i: usize) -> &[T] {
        self.queries.row(i)
    }

    pub fn positive(&self, i: usize) -> &[T] {
        self.positives.row(i)
    }

    pub fn negative(&self, i: usize, j: usize) -> &[T] {
        self.negatives.row(i * self.k + j)
    }

    fn check(&self, a: &Adapter<T>) -> Result<()> {
        if self.queries.cols() != a.query_dim() {
            return Err(Error::dims("contrastive queries", a.query_dim(), self.queries.cols()));
        }
        if self.positives.cols() != a.doc_dim() {
            return Err(Error::dims("contrastive documents", a.doc_dim(), self.positives.cols()));
        }
        Ok(())
    }
}

/// Adapted query `u = z/‖z‖` for one example, or `None` if degenerate.
struct Projection<T> {
    u: Vec<T>,
    norm: T,
}

fn project<T: Scalar>(a: &Adapter<T>, q: &[T]) -> Option<Projection<T>> {
    let n = normalize_owned(a.weights().left_mul(q));
    (!n.degenerate).then_some(Projection {
        u: n.vector,
        norm: n.norm,
    })
}

/// `∂L/∂z = Σ_c g_c (t_c − s_c u) / ‖z‖`.
fn backprop<T: Scalar>(p: &Projection<T>, terms: &[(&[T], T, T)]) -> Vec<T> {
    let mut dz = vec![T::zero(); p.u.len()];
    let mut gs = T::zero();
    for &(t, g, s) in terms {
        if g == T::zero() {
            continue;
        }
        gs += g * s;
        for (o, &x) in dz.iter_mut().zip(t) {
            *o += g * x;
        }
    }
    for (o, &ui) in dz.iter_mut().zip(&p.u) {
        *o = (*o - gs * ui) / p.norm;
    }
    dz
}

/// Per-example result: loss contribution and `∂L/∂z` (None when degenerate).
type Contribution<T> = (T, Option<Vec<T>>);

/// Reduces contributions in example order so the result is bit-deterministic.
fn reduce<T: Scalar>(
    qd: usize,
    dd: usize,
    rows: &[usize],
    queries: &Matrix<T>,
    parts: Vec<Contribution<T>>,
    denom: usize,
) -> LossValue<T> {
    let scale = T::one() / T::of(denom.max(1) as f64);
    let mut grad = Matrix::zeros(qd, dd);
    let mut value = T::zero();
    let mut degenerate = 0;
    for (&r, (v, dz)) in rows.iter().zip(parts) {
        value += v;
        match dz {
            Some(dz) => grad.add_outer(scale, queries.row(r), &dz),
            None => degenerate += 1,
        }
    }
    LossValue {
        value: value * scale,
        grad,
        degenerate,
    }
}

fn all_rows(n: usize) -> Vec<usize> {
    (0..n).collect()
}

/// Mean of `1 − cos(normalize(qᵀW), d)` over all rows.
pub fn alignment_loss<T: Scalar>(a: &Adapter<T>, b: &AlignmentBatch<T>) -> Result<LossValue<T>> {
    alignment_loss_rows(a, b, &all_rows(b.len()))
}

/// [`alignment_loss`] over a subset of rows.
pub fn alignment_loss_rows<T: Scalar>(a: &Adapter<T>, b: &AlignmentBatch<T>, rows: &[usize]) -> Result<LossValue<T>> {
    b.check(a)?;
    let parts: Vec<Contribution<T>> = rows
        .par_iter()
        .map(|&r| {
            let target = b.d_side.row(r);
            match project(a, b.q_side.row(r)) {
                Some(p) => {
                    let s = dot(&p.u, target);
                    let dz = backprop(&p, &[(target, -T::one(), s)]);
                    (T::one() - s, Some(dz))
                }
                None => (T::one(), None),
            }
        })
        .collect();
    Ok(reduce(a.query_dim(), a.doc_dim(), rows, &b.q_side, parts, rows.len()))
}

/// Contrastive objective over explicit negatives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ContrastiveLoss {
    InfoNce { temperature: f64 },
    Triplet { margin: f64 },
}

impl ContrastiveLoss {
    pub const DEFAULT_TEMPERATURE: f64 = 0.05;
    pub const DEFAULT_MARGIN: f64 = 0.2;

    pub fn infonce() -> Self {
        Self::InfoNce {
            temperature: Self::DEFAULT_TEMPERATURE,
        }
    }

    pub fn triplet() -> Self {
        Self::Triplet {
            margin: Self::DEFAULT_MARGIN,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::InfoNce { temperature } if !(temperature > 0.0 && temperature.is_finite()) => Err(Error::invalid(
                format!("temperature must be positive, got {temperature}"),
            )),
            Self::Triplet { margin } if !(margin >= 0.0 && margin.is_finite()) => {
                Err(Error::invalid(format!("margin must be non-negative, got {margin}")))
            }
            _ => Ok(()),
        }
    }

    pub fn evaluate<T: Scalar>(&self, a: &Adapter<T>, b: &ContrastiveBatch<T>) -> Result<LossValue<T>> {
        self.evaluate_rows(a, b, &all_rows(b.len()))
    }

    pub fn evaluate_rows<T: Scalar>(
        &self,
        a: &Adapter<T>,
        b: &ContrastiveBatch<T>,
        rows: &[usize],
    ) -> Result<LossValue<T>> {
        match *self {
            Self::InfoNce { temperature } => infonce_loss_rows(a, b, temperature, rows),
            Self::Triplet { margin } => triplet_loss_rows(a, b, margin, rows),
        }
    }
}

/// Scores `[s⁺, s₁⁻, …, s_k⁻]` of example `r` against adapted query `u`.
fn scores<T: Scalar>(b: &ContrastiveBatch<T>, r: usize, u: &[T]) -> Vec<T> {
    std::iter::once(dot(u, b.positive(r)))
        .chain((0..b.k).map(|j| dot(u, b.negative(r, j))))
        .collect()
}

fn targets<T: Scalar>(b: &ContrastiveBatch<T>, r: usize) -> impl Iterator<Item = &[T]> + '_ {
    std::iter::once(b.positive(r)).chain((0..b.k).map(move |j| b.negative(r, j)))
}

/// Batch mean of `−log softmax(s/τ)[positive]` over one positive and the
/// example's own negatives.
pub fn infonce_loss<T: Scalar>(a: &Adapter<T>, b: &ContrastiveBatch<T>, temperature: f64) -> Result<LossValue<T>> {
    infonce_loss_rows(a, b, temperature, &all_rows(b.len()))
}

pub fn infonce_loss_rows<T: Scalar>(
    a: &Adapter<T>,
    b: &ContrastiveBatch<T>,
    temperature: f64,
    rows: &[usize],
) -> Result<LossValue<T>> {
    ContrastiveLoss::InfoNce { temperature }.validate()?;
    b.check(a)?;
    let tau = T::of(temperature);
    let parts: Vec<Contribution<T>> = rows
        .par_iter()
        .map(|&r| {
            let proj = project(a, b.query(r));
            let s = match &proj {
                Some(p) => scores(b, r, &p.u),
                None => vec![T::zero(); b.k + 1],
            };
            let logits: Vec<T> = s.iter().map(|&x| x / tau).collect();
            let m = logits.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = m + logits.iter().map(|&l| (l - m).exp()).sum::<T>().ln();
            let value = lse - logits[0];
            let dz = proj.map(|p| {
                let terms: Vec<(&[T], T, T)> = targets(b, r)
                    .zip(logits.iter().zip(&s))
                    .enumerate()
                    .map(|(c, (t, (&l, &sc)))| {
                        let prob = (l - lse).exp();
                        let g = if c == 0 { prob - T::one() } else { prob } / tau;
                        (t, g, sc)
                    })
                    .collect();
                backprop(&p, &terms)
            });
            (value, dz)
        })
        .collect();
    Ok(reduce(a.query_dim(), a.doc_dim(), rows, &b.queries, parts, rows.len()))
}

/// Mean over (example, negative) pairs of `max(0, margin − s⁺ + s⁻)`.
pub fn triplet_loss<T: Scalar>(a: &Adapter<T>, b: &ContrastiveBatch<T>, margin: f64) -> Result<LossValue<T>> {
    triplet_loss_rows(a, b, margin, &all_rows(b.len()))
}

pub fn triplet_loss_rows<T: Scalar>(
    a: &Adapter<T>,
    b: &ContrastiveBatch<T>,
    margin: f64,
    rows: &[usize],
) -> Result<LossValue<T>> {
    ContrastiveLoss::Triplet { margin }.validate()?;
    b.check(a)?;
    let margin = T::of(margin);
    let parts: Vec<Contribution<T>> = rows
        .par_iter()
        .map(|&r| {
            let proj = project(a, b.query(r));
            let s = match &proj {
                Some(p) => scores(b, r, &p.u),
                None => vec![T::zero(); b.k + 1],
            };
            let mut value = T::zero();
            let mut coef = vec![T::zero(); b.k + 1];
            for j in 1..=b.k {
                let h = margin - s[0] + s[j];
                if h > T::zero() {
                    value += h;
                    coef[0] -= T::one();
                    coef[j] += T::one();
                }
            }
            let dz = proj.map(|p| {
                let terms: Vec<(&[T], T, T)> = targets(b, r)
                    .zip(coef.iter().zip(&s))
                    .map(|(t, (&g, &sc))| (t, g, sc))
                    .collect();
                backprop(&p, &terms)
            });
            (value, dz)
        })
        .collect();
    Ok(reduce(
        a.query_dim(),
        a.doc_dim(),
        rows,
        &b.queries,
        parts,
        rows.len() * b.k,
    ))
}
