//! Train/validation/test splitting with fixed evaluation sets, and
//! alignment-document sampling.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::keyed::{hash_order, mix64};
use crate::store::{write_file, TaskTag};

pub const VAL_RATIO: f64 = 0.10;
pub const TEST_RATIO: f64 = 0.50;
pub const MAX_TRAIN_RATIO: f64 = 0.40;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    /// Fraction of each task's queries used for training, in `(0, 0.4]`.
    pub train_ratio: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(train_ratio: f64, seed: u64) -> Result<Self> {
        let s = Self { train_ratio, seed };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.train_ratio > 0.0 && self.train_ratio <= MAX_TRAIN_RATIO) {
            return Err(Error::invalid(format!(
                "train ratio must lie in (0, {MAX_TRAIN_RATIO}], got {}",
                self.train_ratio
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
    /// Queries of regular tasks that fall in none of the three sets.
    pub unused: Vec<String>,
    /// Tasks with fewer than three queries; all their queries went to test.
    pub undersized_tasks: Vec<String>,
}

impl Split {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        write_file(path, |w| {
            serde_json::to_writer_pretty(&mut *w, self)?;
            w.write_all(b"\n")
        })
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&crate::store::read_text(path)?)?)
    }
}

/// `ceil(fraction · n)` with float noise like `0.1 · 30 = 3.0000000000000004` snapped away.
fn share(fraction: f64, n: usize) -> usize {
    let raw = fraction * n as f64;
    let r = raw.round();
    if (raw - r).abs() < 1e-9 {
        r as usize
    } else {
        raw.ceil() as usize
    }
}

fn by_task<'a, S: AsRef<str>>(ids: &'a [S], tags: &TaskTag) -> Result<BTreeMap<String, Vec<&'a str>>> {
    let mut out: BTreeMap<String, Vec<&str>> = BTreeMap::new();
    for id in ids {
        let id = id.as_ref();
        out.entry(tags.require(id)?.task.clone()).or_default().push(id);
    }
    Ok(out)
}

/// Per task, orders ids by a keyed hash of `(seed, id)`; the first half is
/// test, the next tenth validation, and the first `ceil(train_ratio · n)` of
/// the rest training. Validation and test therefore never depend on the ratio.
pub fn split_dataset<S: AsRef<str>>(query_ids: &[S], tags: &TaskTag, spec: &SplitSpec) -> Result<Split> {
    spec.validate()?;
    let mut seen = std::collections::HashSet::new();
    for id in query_ids {
        if !seen.insert(id.as_ref()) {
            return Err(Error::DuplicateId {
                id: id.as_ref().to_string(),
                row: seen.len() + 1,
            });
        }
    }
    let mut split = Split::default();
    for (task, ids) in by_task(query_ids, tags)? {
        let order = hash_order(ids.iter().copied(), spec.seed);
        let n = order.len();
        if n < 3 {
            split.test.extend(order.iter().map(|s| s.to_string()));
            split.undersized_tasks.push(task);
            continue;
        }
        let n_test = share(TEST_RATIO, n).min(n);
        let n_val = share(VAL_RATIO, n).min(n - n_test);
        let rest = &order[n_test + n_val..];
        let n_train = share(spec.train_ratio, n).min(rest.len());
        split.test.extend(order[..n_test].iter().map(|s| s.to_string()));
        split
            .val
            .extend(order[n_test..n_test + n_val].iter().map(|s| s.to_string()));
        split.train.extend(rest[..n_train].iter().map(|s| s.to_string()));
        split.unused.extend(rest[n_train..].iter().map(|s| s.to_string()));
    }
    Ok(split)
}

/// Up to `per_task` documents per task, uniform without replacement and
/// independent of relevance labels. Output is grouped by task name.
pub fn sample_alignment_docs<S: AsRef<str>>(
    corpus_ids: &[S],
    tags: &TaskTag,
    per_task: usize,
    seed: u64,
) -> Result<Vec<String>> {
    if per_task == 0 {
        return Err(Error::invalid("per_task must be at least 1"));
    }
    if corpus_ids.is_empty() {
        return Err(Error::invalid("cannot sample alignment documents from an empty corpus"));
    }
    let mut out = Vec::new();
    for (task, ids) in by_task(corpus_ids, tags)? {
        let order = hash_order(ids.iter().copied(), mix64(seed) ^ crate::keyed::keyed_hash(seed, &task));
        out.extend(order.into_iter().take(per_task).map(str::to_string));
    }
    Ok(out)
}
