use std::cmp::Ordering;
use std::collections::{BTreeMap, HashSet};
use std::io::Write;
use std::path::Path;

use super::{read_text, write_file};
use crate::error::{Error, Result};

/// Ranked retrieval output: per query, `(doc, score)` by descending score,
/// ties by ascending doc id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RetrievalRun {
    rankings: BTreeMap<String, Vec<(String, f64)>>,
}

/// Descending score, then ascending id.
pub(crate) fn rank_order(a: (&str, f64), b: (&str, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0))
}

impl RetrievalRun {
    pub fn new() -> Self {
        Self::default()
    }

    /// Sets a query's ranking from unordered scores. Rejects duplicates and
    /// non-finite scores.
    pub fn insert(&mut self, query: impl Into<String>, mut scored: Vec<(String, f64)>) -> Result<()> {
        let query = query.into();
        let mut seen = HashSet::with_capacity(scored.len());
        for (d, s) in &scored {
            if !s.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("score of {d} for {query}"),
                });
            }
            if !seen.insert(d.as_str()) {
                return Err(Error::invalid(format!("duplicate document {d} in ranking of {query}")));
            }
        }
        scored.sort_by(|a, b| rank_order((&a.0, a.1), (&b.0, b.1)));
        self.rankings.insert(query, scored);
        Ok(())
    }

    pub fn ranking(&self, query: &str) -> Option<&[(String, f64)]> {
        self.rankings.get(query).map(Vec::as_slice)
    }

    pub fn queries(&self) -> impl Iterator<Item = &str> + '_ {
        self.rankings.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[(String, f64)])> + '_ {
        self.rankings.iter().map(|(q, r)| (q.as_str(), r.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.rankings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rankings.is_empty()
    }
}

/// Writes `qid Q0 docid rank score tag`, ranks from 1.
pub fn write_run(run: &RetrievalRun, path: &Path, tag: &str) -> Result<()> {
    if tag.is_empty() || tag.contains(char::is_whitespace) {
        return Err(Error::invalid(format!("run tag {tag:?} must be a single token")));
    }
    write_file(path, |w| {
        for (q, ranking) in run.iter() {
            for (rank, (d, s)) in ranking.iter().enumerate() {
                writeln!(w, "{q} Q0 {d} {} {s} {tag}", rank + 1)?;
            }
        }
        Ok(())
    })
}

/// Parses a TREC run. Order is recomputed from scores; the rank column is
/// checked for being an integer but otherwise ignored.
pub fn parse_run(text: &str, context: &str) -> Result<RetrievalRun> {
    let mut lists: BTreeMap<String, Vec<(String, f64)>> = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let err = |message: String| Error::Parse {
            context: context.to_string(),
            line: i + 1,
            message,
        };
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let cols: Vec<&str> = trimmed.split_whitespace().collect();
        if cols.len() != 6 {
            return Err(err(format!("expected 6 columns, found {}", cols.len())));
        }
        cols[3]
            .parse::<u64>()
            .map_err(|_| err(format!("rank {:?} is not an integer", cols[3])))?;
        let score: f64 = cols[4]
            .parse()
            .map_err(|_| err(format!("score {:?} is not a number", cols[4])))?;
        if !score.is_finite() {
            return Err(err("non-finite score".to_string()));
        }
        let list = lists.entry(cols[0].to_string()).or_default();
        if list.iter().any(|(d, _)| d == cols[2]) {
            return Err(err(format!("duplicate document {} for {}", cols[2], cols[0])));
        }
        list.push((cols[2].to_string(), score));
    }
    let mut run = RetrievalRun::new();
    for (q, list) in lists {
        run.insert(q, list)?;
    }
    Ok(run)
}

pub fn load_run(path: &Path) -> Result<RetrievalRun> {
    parse_run(&read_text(path)?, &path.display().to_string())
}
