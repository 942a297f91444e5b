//! Loading, validating and persisting embedding collections, relevance
//! judgments, run files and task tags.

mod embeddings;
mod qrels;
mod run;
mod tags;

pub use embeddings::{load_embeddings, save_embeddings, EmbeddingFormat, EmbeddingSet};
pub use qrels::{load_qrels, parse_qrels, write_qrels, RelevanceJudgments};
pub use run::{load_run, parse_run, write_run, RetrievalRun};
pub use tags::{load_tags, write_tags, TaskAssignment, TaskTag};

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Writes through a buffered file, mapping every I/O failure to the path.
pub(crate) fn write_file<F>(path: &Path, body: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
{
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    body(&mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}
