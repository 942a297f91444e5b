use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use super::{read_text, write_file};
use crate::error::{Error, Result};

/// Per-query relevance grades (TREC qrels). Grade 0 means judged non-relevant.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RelevanceJudgments {
    entries: BTreeMap<String, BTreeMap<String, u32>>,
}

impl RelevanceJudgments {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds one judgment; a repeated `(query, doc)` pair is an error.
    pub fn insert(&mut self, query: impl Into<String>, doc: impl Into<String>, grade: u32) -> Result<()> {
        let query = query.into();
        let doc = doc.into();
        let docs = self.entries.entry(query.clone()).or_default();
        if docs.contains_key(&doc) {
            return Err(Error::invalid(format!("duplicate judgment for ({query}, {doc})")));
        }
        docs.insert(doc, grade);
        Ok(())
    }

    pub fn grade(&self, query: &str, doc: &str) -> u32 {
        self.entries.get(query).and_then(|d| d.get(doc)).copied().unwrap_or(0)
    }

    pub fn is_positive(&self, query: &str, doc: &str) -> bool {
        self.grade(query, doc) > 0
    }

    pub fn judged(&self, query: &str) -> Option<&BTreeMap<String, u32>> {
        self.entries.get(query)
    }

    /// Documents with grade > 0, in id order.
    pub fn positives<'a>(&'a self, query: &str) -> impl Iterator<Item = &'a str> + 'a {
        self.entries
            .get(query)
            .into_iter()
            .flat_map(|d| d.iter())
            .filter(|(_, g)| **g > 0)
            .map(|(d, _)| d.as_str())
    }

    pub fn num_positives(&self, query: &str) -> usize {
        self.positives(query).count()
    }

    pub fn queries(&self) -> impl Iterator<Item = &str> + '_ {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str, u32)> + '_ {
        self.entries
            .iter()
            .flat_map(|(q, docs)| docs.iter().map(move |(d, g)| (q.as_str(), d.as_str(), *g)))
    }

    /// Judgments restricted to `queries`.
    pub fn restrict<'a>(&self, queries: impl IntoIterator<Item = &'a str>) -> Self {
        let entries = queries
            .into_iter()
            .filter_map(|q| self.entries.get(q).map(|d| (q.to_string(), d.clone())))
            .collect();
        Self { entries }
    }
}

/// Parses `qid 0 docid grade` lines. Blank lines and `#` comments are skipped.
pub fn parse_qrels(text: &str, context: &str) -> Result<RelevanceJudgments> {
    let mut out = RelevanceJudgments::new();
    for (i, line) in text.lines().enumerate() {
        let err = |message: String| Error::Parse {
            context: context.to_string(),
            line: i + 1,
            message,
        };
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = trimmed.split_whitespace().collect();
        if cols.len() != 4 {
            return Err(err(format!("expected 4 columns, found {}", cols.len())));
        }
        let grade: i64 = cols[3]
            .parse()
            .map_err(|_| err(format!("grade {:?} is not an integer", cols[3])))?;
        if grade < 0 {
            return Err(err(format!("negative grade {grade}")));
        }
        let grade = u32::try_from(grade).map_err(|_| err(format!("grade {grade} out of range")))?;
        out.insert(cols[0], cols[2], grade)
            .map_err(|_| err(format!("duplicate pair ({}, {})", cols[0], cols[2])))?;
    }
    Ok(out)
}

pub fn load_qrels(path: &Path) -> Result<RelevanceJudgments> {
    parse_qrels(&read_text(path)?, &path.display().to_string())
}

pub fn write_qrels(qrels: &RelevanceJudgments, path: &Path) -> Result<()> {
    write_file(path, |w| {
        for (q, d, g) in qrels.iter() {
            writeln!(w, "{q} 0 {d} {g}")?;
        }
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn direct_parse() {
        let q = parse_qrels("q1 0 d7 2\n", "t").unwrap();
        assert_eq!(q.grade("q1", "d7"), 2);
        assert_eq!(q.grade("q1", "d8"), 0);
    }

    #[test]
    fn duplicate_pair_rejected() {
        let err = parse_qrels("q1 0 d7 1\nq1 0 d7 2\n", "t").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn empty_is_valid() {
        assert!(parse_qrels("", "t").unwrap().is_empty());
    }

    #[test]
    fn negative_and_malformed() {
        assert!(matches!(
            parse_qrels("q1 0 d1 1\nq1 0 d2 -1\n", "t"),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(matches!(
            parse_qrels("q1 0 d1\n", "t"),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse_qrels("q1 0 d1 x\n", "t"),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn positives_skip_zero_grades() {
        let q = parse_qrels("q 0 a 0\nq 0 b 1\nq 0 c 3\n", "t").unwrap();
        assert_eq!(q.positives("q").collect::<Vec<_>>(), ["b", "c"]);
        assert_eq!(q.num_positives("missing"), 0);
    }
}
