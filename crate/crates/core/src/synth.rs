//! Seeded synthetic corpora with a known strong→weak projection.
//!
//! Documents live in a "strong" space as noisy copies of cluster centers.
//! The weak embedder is simulated as `normalize(x P + noise)` where `P` has
//! orthonormal columns, so `W = P` is a perfect alignment adapter when the
//! noise is zero. Noise scales are per vector: each coordinate gets
//! `N(0, σ² / dim)`, so the expected noise norm is about `σ`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::adapter::normalize_owned;
use crate::error::{Error, Result};
use crate::keyed::{permutation, seeded_rng};
use crate::matrix::{dot, Matrix};
use crate::scalar::Scalar;
use crate::store::{EmbeddingSet, RelevanceJudgments, TaskTag};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub n_docs: usize,
    pub n_queries: usize,
    pub strong_dim: usize,
    pub weak_dim: usize,
    /// Noise of the weak embedder.
    pub noise_sigma: f64,
    pub cluster_count: usize,
    pub seed: u64,
    /// Spread of documents around their cluster center.
    pub cluster_spread: f64,
    /// Noise between a strong query and its source document.
    pub query_noise: f64,
    /// Strength of a fixed linear distortion applied to queries only, which
    /// document-only alignment cannot see.
    pub query_shift: f64,
    /// Extra noise the weak embedder adds to queries, on top of `noise_sigma`.
    pub weak_query_noise: f64,
    /// Unlabeled near-copies of each query's source document. They are
    /// relevant in `qrels` but absent from `train_qrels`.
    pub near_duplicates: usize,
    pub duplicate_noise: f64,
    pub task_count: usize,
    pub group_count: usize,
    /// Use `P = I` (requires `strong_dim == weak_dim`).
    pub identity_projection: bool,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_docs: 2000,
            n_queries: 200,
            strong_dim: 64,
            weak_dim: 32,
            noise_sigma: 0.1,
            cluster_count: 20,
            seed: 0,
            cluster_spread: 0.6,
            query_noise: 0.3,
            query_shift: 0.0,
            weak_query_noise: 0.3,
            near_duplicates: 0,
            duplicate_noise: 0.05,
            task_count: 4,
            group_count: 2,
            identity_projection: false,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::invalid(format!("synthetic spec: {m}")));
        if self.n_docs == 0 || self.n_queries == 0 || self.cluster_count == 0 {
            return bad("counts must be positive");
        }
        if self.task_count == 0 || self.group_count == 0 {
            return bad("task and group counts must be positive");
        }
        if self.strong_dim == 0 || self.weak_dim == 0 || self.weak_dim > self.strong_dim {
            return bad("need 0 < weak_dim <= strong_dim");
        }
        if self.n_queries > self.n_docs {
            return bad("each query needs its own source document, so n_queries <= n_docs");
        }
        if self.identity_projection && self.weak_dim != self.strong_dim {
            return bad("identity projection requires equal dimensions");
        }
        for (name, v) in [
            ("noise_sigma", self.noise_sigma),
            ("cluster_spread", self.cluster_spread),
            ("query_noise", self.query_noise),
            ("query_shift", self.query_shift),
            ("weak_query_noise", self.weak_query_noise),
            ("duplicate_noise", self.duplicate_noise),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!(
                    "synthetic spec: {name} must be finite and >= 0"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticData<T> {
    pub strong_queries: EmbeddingSet<T>,
    pub strong_docs: EmbeddingSet<T>,
    pub weak_queries: EmbeddingSet<T>,
    pub weak_docs: EmbeddingSet<T>,
    /// Evaluation judgments, including near-duplicates.
    pub qrels: RelevanceJudgments,
    /// Training labels: only each query's source document.
    pub train_qrels: RelevanceJudgments,
    /// Task and group of every query and document.
    pub tags: TaskTag,
    /// The projection `P` (strong_dim × weak_dim).
    pub ground_truth_map: Matrix<T>,
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    normalize_owned(v).vector
}

fn add_noise(rng: &mut ChaCha8Rng, mut v: Vec<f64>, sigma: f64) -> Vec<f64> {
    if sigma > 0.0 {
        let s = sigma / (v.len() as f64).sqrt();
        for x in &mut v {
            *x += s * rng.sample::<f64, _>(StandardNormal);
        }
    }
    v
}

/// Gram-Schmidt on the columns of a gaussian matrix.
fn orthonormal_columns(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix<f64> {
    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(cols);
    while columns.len() < cols {
        let mut c = gaussian(rng, rows, 1.0);
        for prev in &columns {
            let p = dot(&c, prev);
            for (x, y) in c.iter_mut().zip(prev) {
                *x -= p * y;
            }
        }
        let n = normalize_owned(c);
        if !n.degenerate && n.norm > 1e-6 {
            columns.push(n.vector);
        }
    }
    let mut m = Matrix::zeros(rows, cols);
    for (j, col) in columns.iter().enumerate() {
        for (i, &x) in col.iter().enumerate() {
            m[(i, j)] = x;
        }
    }
    m
}

fn to_set<T: Scalar>(tag: &str, ids: &[String], rows: &[Vec<f64>], dim: usize) -> Result<EmbeddingSet<T>> {
    let m = Matrix::from_rows(dim, rows)?;
    EmbeddingSet::new(tag, ids.to_vec(), m.cast())
}

pub fn make_synthetic<T: Scalar>(spec: &SyntheticSpec) -> Result<SyntheticData<T>> {
    spec.validate()?;
    let (sd, wd) = (spec.strong_dim, spec.weak_dim);
    let mut rng = seeded_rng(spec.seed);

    let projection = if spec.identity_projection {
        let mut m = Matrix::zeros(sd, wd);
        for i in 0..sd {
            m[(i, i)] = 1.0;
        }
        m
    } else {
        orthonormal_columns(&mut rng, sd, wd)
    };
    let mut shift = Matrix::zeros(sd, sd);
    for i in 0..sd {
        for j in 0..sd {
            let noise: f64 = rng.sample(StandardNormal);
            shift[(i, j)] = if i == j { 1.0 } else { 0.0 } + spec.query_shift * noise / (sd as f64).sqrt();
        }
    }
    let centers: Vec<Vec<f64>> = (0..spec.cluster_count)
        .map(|_| unit(gaussian(&mut rng, sd, 1.0)))
        .collect();

    let task_of = |cluster: usize| cluster % spec.task_count;
    let mut tags = TaskTag::new();
    let assign = |tags: &mut TaskTag, id: &str, cluster: usize| {
        let t = task_of(cluster);
        tags.assign(id, format!("task{t:02}"), format!("group{}", t % spec.group_count))
    };

    let mut doc_ids = Vec::with_capacity(spec.n_docs);
    let mut doc_rows = Vec::with_capacity(spec.n_docs);
    let mut doc_cluster = Vec::with_capacity(spec.n_docs);
    for i in 0..spec.n_docs {
        let c = i % spec.cluster_count;
        let id = format!("d{i:05}");
        doc_rows.push(unit(add_noise(&mut rng, centers[c].clone(), spec.cluster_spread)));
        assign(&mut tags, &id, c)?;
        doc_ids.push(id);
        doc_cluster.push(c);
    }

    let sources = permutation(spec.n_docs, spec.seed, 0x5eed);
    let mut query_ids = Vec::with_capacity(spec.n_queries);
    let mut query_rows = Vec::with_capacity(spec.n_queries);
    let mut qrels = RelevanceJudgments::new();
    let mut train_qrels = RelevanceJudgments::new();
    let mut dup_ids = Vec::new();
    let mut dup_rows = Vec::new();
    for (j, &src) in sources.iter().take(spec.n_queries).enumerate() {
        let id = format!("q{j:05}");
        let shifted = shift.left_mul(&doc_rows[src]);
        query_rows.push(unit(add_noise(&mut rng, shifted, spec.query_noise)));
        qrels.insert(&id, &doc_ids[src], 1)?;
        train_qrels.insert(&id, &doc_ids[src], 1)?;
        for m in 0..spec.near_duplicates {
            let dup = format!("{}-dup{m}", doc_ids[src]);
            dup_rows.push(unit(add_noise(&mut rng, doc_rows[src].clone(), spec.duplicate_noise)));
            qrels.insert(&id, &dup, 1)?;
            assign(&mut tags, &dup, doc_cluster[src])?;
            dup_ids.push(dup);
        }
        assign(&mut tags, &id, doc_cluster[src])?;
        query_ids.push(id);
    }
    doc_ids.extend(dup_ids);
    doc_rows.extend(dup_rows);

    let weak = |rng: &mut ChaCha8Rng, rows: &[Vec<f64>], sigma: f64| -> Vec<Vec<f64>> {
        rows.iter()
            .map(|r| unit(add_noise(rng, projection.left_mul(r), sigma)))
            .collect()
    };
    let weak_doc_rows = weak(&mut rng, &doc_rows, spec.noise_sigma);
    let weak_query_sigma = (spec.noise_sigma.powi(2) + spec.weak_query_noise.powi(2)).sqrt();
    let weak_query_rows = weak(&mut rng, &query_rows, weak_query_sigma);

    Ok(SyntheticData {
        strong_queries: to_set("strong_queries", &query_ids, &query_rows, sd)?,
        strong_docs: to_set("strong_docs", &doc_ids, &doc_rows, sd)?,
        weak_queries: to_set("weak_queries", &query_ids, &weak_query_rows, wd)?,
        weak_docs: to_set("weak_docs", &doc_ids, &weak_doc_rows, wd)?,
        qrels,
        train_qrels,
        tags,
        ground_truth_map: projection.cast(),
    })
}
