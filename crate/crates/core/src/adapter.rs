//! The linear query adapter, normalization and cosine similarity.
//!
//! A query embedding `q` (length `query_dim`) is mapped into the document
//! space as `normalize(qᵀ W)`, with `W` of shape `query_dim × doc_dim`.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::keyed::seeded_rng;
use crate::matrix::{dot, norm, Matrix};
use crate::scalar::Scalar;
use crate::store::write_file;

const ADAPTER_MAGIC: &[u8; 4] = b"ERAW";
const ADAPTER_VERSION: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitScheme {
    /// Ones on the main diagonal up to `min(query_dim, doc_dim)`.
    IdentityLike,
    /// Uniform in `±sqrt(6 / (query_dim + doc_dim))`.
    ScaledRandom,
    /// Scaled-random shrunk by [`SMALL_RANDOM_GAIN`].
    SmallRandom,
}

/// Gain of [`InitScheme::SmallRandom`] relative to the scaled-random bound.
/// A start close to the origin lets the first Adam steps set the direction
/// instead of spending the alignment budget undoing a random map.
pub const SMALL_RANDOM_GAIN: f64 = 0.1;

impl InitScheme {
    /// Alignment-stage default: identity-like for square adapters,
    /// small-random otherwise.
    pub fn default_for(query_dim: usize, doc_dim: usize) -> Self {
        if query_dim == doc_dim {
            Self::IdentityLike
        } else {
            Self::SmallRandom
        }
    }
}

impl FromStr for InitScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity-like" | "identity" => Ok(Self::IdentityLike),
            "scaled-random" | "random" => Ok(Self::ScaledRandom),
            "small-random" => Ok(Self::SmallRandom),
            other => Err(Error::invalid(format!("unknown init scheme {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adapter<T> {
    weights: Matrix<T>,
}

impl<T: Scalar> Adapter<T> {
    pub fn from_weights(weights: Matrix<T>) -> Result<Self> {
        if weights.rows() == 0 || weights.cols() == 0 {
            return Err(Error::invalid("adapter dimensions must be positive"));
        }
        if !weights.is_finite() {
            return Err(Error::NonFinite {
                context: "adapter weights".into(),
            });
        }
        Ok(Self { weights })
    }

    pub fn identity(dim: usize) -> Result<Self> {
        init_adapter(dim, dim, InitScheme::IdentityLike, 0)
    }

    #[inline]
    pub fn query_dim(&self) -> usize {
        self.weights.rows()
    }

    #[inline]
    pub fn doc_dim(&self) -> usize {
        self.weights.cols()
    }

    #[inline]
    pub fn weights(&self) -> &Matrix<T> {
        &self.weights
    }

    /// Raw access for the optimizer, which owns the adapter during training.
    pub(crate) fn weights_mut(&mut self) -> &mut Matrix<T> {
        &mut self.weights
    }

    /// Unnormalized `qᵀ W`.
    pub fn project(&self, q: &[T]) -> Result<Vec<T>> {
        if q.len() != self.query_dim() {
            return Err(Error::dims("adapter input", self.query_dim(), q.len()));
        }
        Ok(self.weights.left_mul(q))
    }

    pub fn cast<U: Scalar>(&self) -> Adapter<U> {
        Adapter {
            weights: self.weights.cast(),
        }
    }
}

pub fn init_adapter<T: Scalar>(query_dim: usize, doc_dim: usize, scheme: InitScheme, seed: u64) -> Result<Adapter<T>> {
    if query_dim == 0 || doc_dim == 0 {
        return Err(Error::invalid(format!(
            "adapter dimensions must be positive, got {query_dim}x{doc_dim}"
        )));
    }
    let mut w = Matrix::zeros(query_dim, doc_dim);
    match scheme {
        InitScheme::IdentityLike => {
            for i in 0..query_dim.min(doc_dim) {
                w[(i, i)] = T::one();
            }
        }
        InitScheme::ScaledRandom | InitScheme::SmallRandom => {
            let gain = if scheme == InitScheme::SmallRandom {
                SMALL_RANDOM_GAIN
            } else {
                1.0
            };
            let bound = gain * (6.0 / (query_dim + doc_dim) as f64).sqrt();
            let mut rng = seeded_rng(seed);
            for x in w.as_mut_slice() {
                *x = T::of(rng.gen_range(-bound..=bound));
            }
        }
    }
    Ok(Adapter { weights: w })
}

/// Result of [`l2_normalize`]; `degenerate` is set when the norm was at or
/// below the floor and the input was returned unchanged.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalized<T> {
    pub vector: Vec<T>,
    pub norm: T,
    pub degenerate: bool,
}

pub fn l2_normalize<T: Scalar>(v: &[T]) -> Normalized<T> {
    normalize_owned(v.to_vec())
}

pub(crate) fn normalize_owned<T: Scalar>(mut v: Vec<T>) -> Normalized<T> {
    let n = norm(&v);
    if n <= T::norm_floor() {
        return Normalized {
            vector: v,
            norm: n,
            degenerate: true,
        };
    }
    for x in &mut v {
        *x /= n;
    }
    Normalized {
        vector: v,
        norm: n,
        degenerate: false,
    }
}

/// `normalize(qᵀ W)`.
pub fn apply_adapter<T: Scalar>(adapter: &Adapter<T>, q: &[T]) -> Result<Normalized<T>> {
    Ok(normalize_owned(adapter.project(q)?))
}

/// Cosine similarity; 0 when either vector is degenerate.
pub fn cosine_sim<T: Scalar>(u: &[T], v: &[T]) -> Result<T> {
    if u.len() != v.len() {
        return Err(Error::dims("cosine similarity", u.len(), v.len()));
    }
    let (nu, nv) = (norm(u), norm(v));
    if nu <= T::norm_floor() || nv <= T::norm_floor() {
        return Ok(T::zero());
    }
    Ok(dot(u, v) / (nu * nv))
}

/// One completed training stage, as recorded in the adapter sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub epochs_run: usize,
    pub best_epoch: Option<usize>,
    pub final_train_loss: Option<f64>,
    pub best_val_loss: Option<f64>,
    pub config: serde_json::Value,
}

/// JSON sidecar written next to an adapter file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterMeta {
    pub init_scheme: InitScheme,
    pub seed: u64,
    #[serde(default)]
    pub stages: Vec<StageRecord>,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Writes the `ERAW` binary (row-major f64) and, if given, the JSON sidecar.
pub fn save_adapter<T: Scalar>(adapter: &Adapter<T>, meta: Option<&AdapterMeta>, path: &Path) -> Result<()> {
    write_file(path, |w| {
        w.write_all(ADAPTER_MAGIC)?;
        w.write_all(&[ADAPTER_VERSION])?;
        w.write_all(&(adapter.query_dim() as u32).to_le_bytes())?;
        w.write_all(&(adapter.doc_dim() as u32).to_le_bytes())?;
        for x in adapter.weights().as_slice() {
            w.write_all(&x.as_f64().to_le_bytes())?;
        }
        Ok(())
    })?;
    if let Some(meta) = meta {
        let side = sidecar_path(path);
        write_file(&side, |w| {
            serde_json::to_writer_pretty(&mut *w, meta)?;
            w.write_all(b"\n")
        })?;
    }
    Ok(())
}

pub fn load_adapter<T: Scalar>(path: &Path) -> Result<Adapter<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let parse = |message: &str| Error::Parse {
        context: path.display().to_string(),
        line: 0,
        message: message.to_string(),
    };
    if bytes.len() < 13 || &bytes[..4] != ADAPTER_MAGIC {
        return Err(parse("bad magic, expected ERAW"));
    }
    if bytes[4] != ADAPTER_VERSION {
        return Err(parse("unsupported adapter version"));
    }
    let qd = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
    let dd = u32::from_le_bytes(bytes[9..13].try_into().unwrap()) as usize;
    let body = &bytes[13..];
    if body.len() != qd * dd * 8 {
        return Err(parse(&format!(
            "expected {} weight bytes for {qd}x{dd}, found {}",
            qd * dd * 8,
            body.len()
        )));
    }
    let data = body
        .chunks_exact(8)
        .map(|c| T::of(f64::from_le_bytes(c.try_into().unwrap())))
        .collect();
    Adapter::from_weights(Matrix::from_vec(qd, dd, data)?)
}

pub fn load_adapter_meta(path: &Path) -> Result<Option<AdapterMeta>> {
    let side = sidecar_path(path);
    if !side.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    Ok(Some(serde_json::from_str(&text)?))
}
