use std::collections::HashMap;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::write_file;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

const PACKED_MAGIC: &[u8; 4] = b"ERAE";
const PACKED_VERSION: u8 = 1;

/// On-disk layout of an embedding collection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingFormat {
    /// `ERAE` binary: version byte, u32 dim, u64 count, then per record a u16
    /// id length, the UTF-8 id and `dim` little-endian f32 values.
    Packed,
    /// One JSON object per line: `{"id": "...", "vector": [..]}`.
    Lines,
}

impl EmbeddingFormat {
    /// `.jsonl`/`.json` mean [`EmbeddingFormat::Lines`]; anything else is packed.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("json") => EmbeddingFormat::Lines,
            _ => EmbeddingFormat::Packed,
        }
    }
}

impl FromStr for EmbeddingFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "packed" => Ok(Self::Packed),
            "lines" => Ok(Self::Lines),
            other => Err(Error::invalid(format!("unknown embedding format {other:?}"))),
        }
    }
}

/// Id-addressed embeddings produced by one embedder. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet<T> {
    tag: String,
    ids: Vec<String>,
    index: HashMap<String, usize>,
    vectors: Matrix<T>,
}

impl<T: Scalar> EmbeddingSet<T> {
    /// Validates ids and vectors; rows are 1-based in errors.
    pub fn new(tag: impl Into<String>, ids: Vec<String>, vectors: Matrix<T>) -> Result<Self> {
        if vectors.cols() == 0 {
            return Err(Error::invalid("embedding dimension must be positive"));
        }
        if ids.len() != vectors.rows() {
            return Err(Error::dims("embedding ids", vectors.rows(), ids.len()));
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (row, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), row).is_some() {
                return Err(Error::DuplicateId {
                    id: id.clone(),
                    row: row + 1,
                });
            }
            if !vectors.row(row).iter().all(|x| x.is_finite()) {
                return Err(Error::NonFinite {
                    context: format!("embedding row {} ({id})", row + 1),
                });
            }
        }
        Ok(Self {
            tag: tag.into(),
            ids,
            index,
            vectors,
        })
    }

    pub fn empty(tag: impl Into<String>, dim: usize) -> Result<Self> {
        Self::new(tag, Vec::new(), Matrix::zeros(0, dim))
    }

    pub fn tag(&self) -> &str {
        &self.tag
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn vectors(&self) -> &Matrix<T> {
        &self.vectors
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn get(&self, id: &str) -> Option<&[T]> {
        self.position(id).map(|i| self.vectors.row(i))
    }

    /// Like [`get`](Self::get) but reports which set was missing the id.
    pub fn vector(&self, id: &str) -> Result<&[T]> {
        self.get(id).ok_or_else(|| Error::MissingId {
            kind: "embedding",
            id: id.to_string(),
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[T])> + '_ {
        self.ids
            .iter()
            .enumerate()
            .map(move |(i, id)| (id.as_str(), self.vectors.row(i)))
    }

    /// Sub-collection with the given ids, in the given order.
    pub fn subset<S: AsRef<str>>(&self, ids: &[S]) -> Result<Self> {
        let mut rows = Vec::with_capacity(ids.len());
        let mut out_ids = Vec::with_capacity(ids.len());
        for id in ids {
            let id = id.as_ref();
            rows.push(self.position(id).ok_or_else(|| Error::MissingId {
                kind: "embedding",
                id: id.to_string(),
            })?);
            out_ids.push(id.to_string());
        }
        Self::new(self.tag.clone(), out_ids, self.vectors.select_rows(&rows))
    }

    pub fn cast<U: Scalar>(&self) -> EmbeddingSet<U> {
        EmbeddingSet {
            tag: self.tag.clone(),
            ids: self.ids.clone(),
            index: self.index.clone(),
            vectors: self.vectors.cast(),
        }
    }
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        context: path.display().to_string(),
        line,
        message: message.into(),
    }
}

/// Loads a collection; its tag is the file stem.
pub fn load_embeddings<T: Scalar>(path: &Path, format: EmbeddingFormat) -> Result<EmbeddingSet<T>> {
    let tag = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    match format {
        EmbeddingFormat::Packed => {
            let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
            decode_packed(&bytes, tag).map_err(|(line, msg)| parse_err(path, line, msg))
        }
        EmbeddingFormat::Lines => {
            let text = super::read_text(path)?;
            decode_lines(&text, tag).map_err(|(line, msg)| parse_err(path, line, msg))
        }
    }
}

type Decoded<T> = std::result::Result<EmbeddingSet<T>, (usize, String)>;

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let out = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(out)
    }
}

fn decode_packed<T: Scalar>(bytes: &[u8], tag: String) -> Decoded<T> {
    let mut cur = Cursor { bytes, pos: 0 };
    let header = |m: &str| (0usize, m.to_string());
    if cur.take(4) != Some(PACKED_MAGIC.as_slice()) {
        return Err(header("bad magic, expected ERAE"));
    }
    match cur.take(1) {
        Some([PACKED_VERSION]) => {}
        Some([v]) => return Err(header(&format!("unsupported version {v}"))),
        _ => return Err(header("truncated header")),
    }
    let dim = cur
        .take(4)
        .map(|b| u32::from_le_bytes(b.try_into().unwrap()) as usize)
        .ok_or_else(|| header("truncated header"))?;
    let count = cur
        .take(8)
        .map(|b| u64::from_le_bytes(b.try_into().unwrap()))
        .ok_or_else(|| header("truncated header"))?;
    if dim == 0 {
        return Err(header("dimension must be positive"));
    }
    let count = usize::try_from(count).map_err(|_| header("record count overflows"))?;

    let mut ids = Vec::with_capacity(count.min(1 << 20));
    let mut seen = HashMap::new();
    let mut data = Vec::with_capacity(count.min(1 << 20) * dim);
    for row in 1..=count {
        let len = cur
            .take(2)
            .map(|b| u16::from_le_bytes(b.try_into().unwrap()) as usize)
            .ok_or_else(|| (row, "truncated record (id length)".to_string()))?;
        let id = cur
            .take(len)
            .ok_or_else(|| (row, "truncated record (id)".to_string()))?;
        let id = std::str::from_utf8(id)
            .map_err(|_| (row, "id is not valid UTF-8".to_string()))?
            .to_string();
        let raw = cur.take(dim * 4).ok_or_else(|| {
            (
                row,
                format!(
                    "truncated record: expected {dim} values, found {}",
                    (bytes.len() - cur.pos) / 4
                ),
            )
        })?;
        for chunk in raw.chunks_exact(4) {
            let x = f32::from_le_bytes(chunk.try_into().unwrap());
            if !x.is_finite() {
                return Err((row, format!("non-finite value in {id:?}")));
            }
            data.push(T::of(f64::from(x)));
        }
        if seen.insert(id.clone(), row).is_some() {
            return Err((row, format!("duplicate id {id:?}")));
        }
        ids.push(id);
    }
    if cur.pos != bytes.len() {
        return Err((count + 1, "trailing bytes after last record".to_string()));
    }
    let vectors = Matrix::from_vec(count, dim, data).map_err(|e| (0, e.to_string()))?;
    EmbeddingSet::new(tag, ids, vectors).map_err(|e| (0, e.to_string()))
}

#[derive(Deserialize)]
struct LineRecord {
    id: String,
    vector: Vec<f64>,
}

#[derive(Serialize)]
struct LineRecordRef<'a> {
    id: &'a str,
    vector: Vec<f64>,
}

fn decode_lines<T: Scalar>(text: &str, tag: String) -> Decoded<T> {
    let mut ids = Vec::new();
    let mut seen = HashMap::new();
    let mut data = Vec::new();
    let mut dim = None;
    for (i, line) in text.lines().enumerate() {
        let row = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: LineRecord = serde_json::from_str(line).map_err(|e| (row, e.to_string()))?;
        let d = *dim.get_or_insert(rec.vector.len());
        if rec.vector.len() != d {
            return Err((row, format!("expected {d} values, found {}", rec.vector.len())));
        }
        if d == 0 {
            return Err((row, "empty vector".to_string()));
        }
        if rec.vector.iter().any(|x| !x.is_finite() || !(*x as f32).is_finite()) {
            return Err((row, format!("non-finite value in {:?}", rec.id)));
        }
        if seen.insert(rec.id.clone(), row).is_some() {
            return Err((row, format!("duplicate id {:?}", rec.id)));
        }
        data.extend(rec.vector.iter().map(|&x| T::of(f64::from(x as f32))));
        ids.push(rec.id);
    }
    let dim = dim.ok_or((0, "no records; dimension cannot be inferred".to_string()))?;
    let vectors = Matrix::from_vec(ids.len(), dim, data).map_err(|e| (0, e.to_string()))?;
    EmbeddingSet::new(tag, ids, vectors).map_err(|e| (0, e.to_string()))
}

/// Persists a collection. Values are stored as f32; anything that does not
/// survive that conversion is refused before the file is created.
pub fn save_embeddings<T: Scalar>(set: &EmbeddingSet<T>, path: &Path, format: EmbeddingFormat) -> Result<()> {
    for (row, (id, v)) in set.iter().enumerate() {
        if !v.iter().all(|x| x.is_finite() && (x.as_f64() as f32).is_finite()) {
            return Err(Error::NonFinite {
                context: format!("embedding row {} ({id}) as f32", row + 1),
            });
        }
        if id.len() > usize::from(u16::MAX) {
            return Err(Error::invalid(format!("id at row {} exceeds 65535 bytes", row + 1)));
        }
    }
    match format {
        EmbeddingFormat::Packed => write_file(path, |w| {
            w.write_all(PACKED_MAGIC)?;
            w.write_all(&[PACKED_VERSION])?;
            w.write_all(&(set.dim() as u32).to_le_bytes())?;
            w.write_all(&(set.len() as u64).to_le_bytes())?;
            for (id, v) in set.iter() {
                w.write_all(&(id.len() as u16).to_le_bytes())?;
                w.write_all(id.as_bytes())?;
                for x in v {
                    w.write_all(&(x.as_f64() as f32).to_le_bytes())?;
                }
            }
            Ok(())
        }),
        EmbeddingFormat::Lines => {
            if set.is_empty() {
                return Err(Error::invalid(
                    "lines format cannot record the dimension of an empty set; use packed",
                ));
            }
            write_file(path, |w| {
                for (id, v) in set.iter() {
                    let rec = LineRecordRef {
                        id,
                        vector: v.iter().map(|x| f64::from(x.as_f64() as f32)).collect(),
                    };
                    serde_json::to_writer(&mut *w, &rec)?;
                    w.write_all(b"\n")?;
                }
                Ok(())
            })
        }
    }
}
