//! Exhaustive cosine top-k retrieval, optionally through an adapter.

use rayon::prelude::*;

use crate::adapter::{apply_adapter, l2_normalize, Adapter};
use crate::error::{Error, Result};
use crate::matrix::{dot, Matrix};
use crate::scalar::Scalar;
use crate::store::{EmbeddingSet, RetrievalRun};

/// Document matrix with every row unit-normalized (degenerate rows kept as-is,
/// which makes their similarity to anything ~0).
fn normalized_docs<T: Scalar>(docs: &EmbeddingSet<T>) -> Matrix<T> {
    let mut m = docs.vectors().clone();
    for i in 0..m.rows() {
        let n = l2_normalize(m.row(i));
        m.row_mut(i).copy_from_slice(&n.vector);
    }
    m
}

/// Query side of the similarity: `normalize(qᵀW)` with an adapter, `normalize(q)` without.
pub fn query_vector<T: Scalar>(adapter: Option<&Adapter<T>>, q: &[T]) -> Result<Vec<T>> {
    Ok(match adapter {
        Some(a) => apply_adapter(a, q)?.vector,
        None => l2_normalize(q).vector,
    })
}

fn check_dims<T: Scalar>(
    queries: &EmbeddingSet<T>,
    docs: &EmbeddingSet<T>,
    adapter: Option<&Adapter<T>>,
) -> Result<()> {
    match adapter {
        Some(a) => {
            if a.query_dim() != queries.dim() {
                return Err(Error::dims("adapter query dim", a.query_dim(), queries.dim()));
            }
            if a.doc_dim() != docs.dim() {
                return Err(Error::dims("adapter document dim", a.doc_dim(), docs.dim()));
            }
        }
        None if queries.dim() != docs.dim() => {
            return Err(Error::dims("zero-shot retrieval", docs.dim(), queries.dim()));
        }
        None => {}
    }
    Ok(())
}

/// Top `k` documents per query by cosine similarity. Zero-shot when `adapter`
/// is `None` (query and document dims must agree).
pub fn retrieve_topk<T: Scalar>(
    queries: &EmbeddingSet<T>,
    docs: &EmbeddingSet<T>,
    adapter: Option<&Adapter<T>>,
    k: usize,
) -> Result<RetrievalRun> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    check_dims(queries, docs, adapter)?;
    let dmat = normalized_docs(docs);
    let ids = docs.ids();
    let ranked: Vec<(String, Vec<(String, f64)>)> = queries
        .ids()
        .par_iter()
        .enumerate()
        .map(|(qi, qid)| {
            let u = query_vector(adapter, queries.vectors().row(qi))?;
            let mut scored: Vec<(usize, f64)> = (0..dmat.rows())
                .map(|di| (di, dot(&u, dmat.row(di)).as_f64()))
                .collect();
            let order = |a: &(usize, f64), b: &(usize, f64)| b.1.total_cmp(&a.1).then_with(|| ids[a.0].cmp(&ids[b.0]));
            if scored.len() > k {
                scored.select_nth_unstable_by(k - 1, order);
                scored.truncate(k);
            }
            scored.sort_unstable_by(order);
            Ok((
                qid.clone(),
                scored.into_iter().map(|(di, s)| (ids[di].clone(), s)).collect(),
            ))
        })
        .collect::<Result<_>>()?;
    let mut run = RetrievalRun::new();
    for (q, list) in ranked {
        run.insert(q, list)?;
    }
    Ok(run)
}

/// Cosine score of one (query, document) pair under the same conventions as
/// [`retrieve_topk`].
pub fn score_pair<T: Scalar>(adapter: Option<&Adapter<T>>, q: &[T], d: &[T]) -> Result<f64> {
    let u = query_vector(adapter, q)?;
    if u.len() != d.len() {
        return Err(Error::dims("score pair", u.len(), d.len()));
    }
    Ok(dot(&u, &l2_normalize(d).vector).as_f64())
}
