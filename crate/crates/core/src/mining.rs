//! Per-query negative sets: TopK-PercPos, naive top-k and uniform random.

use std::collections::{BTreeMap, HashSet};
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::keyed::keyed_rng;
use crate::store::{read_text, write_file, RelevanceJudgments, RetrievalRun};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    TopkPercpos,
    NaiveTopk,
    Random,
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "topk_percpos" => Ok(Self::TopkPercpos),
            "naive_topk" => Ok(Self::NaiveTopk),
            "random" => Ok(Self::Random),
            other => Err(Error::invalid(format!("unknown sampling strategy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiningParams {
    pub k: usize,
    /// Top-ranked candidates considered by TopK-PercPos.
    pub pool_size: usize,
    /// Candidates scoring at or above `perc × positive score` are discarded.
    pub perc: f64,
    pub seed: u64,
}

impl Default for MiningParams {
    fn default() -> Self {
        Self {
            k: 5,
            pool_size: 100,
            perc: 0.95,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NegativeSet {
    pub strategy: Strategy,
    pub params: MiningParams,
    pub per_query: BTreeMap<String, Vec<String>>,
    /// How many trailing entries of each list were random backfill.
    pub backfilled: BTreeMap<String, usize>,
}

impl NegativeSet {
    pub fn negatives(&self, query: &str) -> Option<&[String]> {
        self.per_query.get(query).map(Vec::as_slice)
    }
}

#[derive(Serialize, Deserialize)]
struct NegativeRecord {
    query_id: String,
    strategy: Strategy,
    params: MiningParams,
    negatives: Vec<String>,
}

/// Writes one `{query_id, strategy, params, negatives}` record per query.
pub fn write_negatives(set: &NegativeSet, path: &Path) -> Result<()> {
    write_file(path, |w| {
        for (q, negs) in &set.per_query {
            let rec = NegativeRecord {
                query_id: q.clone(),
                strategy: set.strategy,
                params: set.params.clone(),
                negatives: negs.clone(),
            };
            serde_json::to_writer(&mut *w, &rec)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    })
}

pub fn load_negatives(path: &Path) -> Result<NegativeSet> {
    let text = read_text(path)?;
    let mut out: Option<NegativeSet> = None;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse = |message: String| Error::Parse {
            context: path.display().to_string(),
            line: i + 1,
            message,
        };
        let rec: NegativeRecord = serde_json::from_str(line).map_err(|e| parse(e.to_string()))?;
        let set = out.get_or_insert_with(|| NegativeSet {
            strategy: rec.strategy,
            params: rec.params.clone(),
            per_query: BTreeMap::new(),
            backfilled: BTreeMap::new(),
        });
        if set.strategy != rec.strategy || set.params != rec.params {
            return Err(parse("records disagree on strategy or parameters".into()));
        }
        if set.per_query.insert(rec.query_id.clone(), rec.negatives).is_some() {
            return Err(parse(format!("duplicate query {}", rec.query_id)));
        }
    }
    out.ok_or_else(|| Error::Parse {
        context: path.display().to_string(),
        line: 0,
        message: "no records".into(),
    })
}

fn ranking_of<'a>(run: &'a RetrievalRun, q: &str) -> Result<&'a [(String, f64)]> {
    run.ranking(q).ok_or_else(|| Error::MissingId {
        kind: "run query",
        id: q.to_string(),
    })
}

fn require_positive(qrels: &RelevanceJudgments, q: &str) -> Result<()> {
    if qrels.num_positives(q) == 0 {
        return Err(Error::invalid(format!("query {q} has no positive judgment")));
    }
    Ok(())
}

fn check_corpus(corpus: &[String]) -> Result<HashSet<&str>> {
    if corpus.is_empty() {
        return Err(Error::invalid("negative mining needs a non-empty corpus"));
    }
    Ok(corpus.iter().map(String::as_str).collect())
}

/// Up to `n` documents drawn uniformly without replacement from `eligible`,
/// from the stream keyed by `(seed, query)`.
fn draw(eligible: &[&str], n: usize, seed: u64, query: &str) -> Vec<String> {
    let mut rng = keyed_rng(seed, query);
    sample(&mut rng, eligible.len(), n.min(eligible.len()))
        .into_iter()
        .map(|i| eligible[i].to_string())
        .collect()
}

fn collect(strategy: Strategy, params: MiningParams, mined: Vec<(String, Vec<String>, usize)>) -> NegativeSet {
    let mut per_query = BTreeMap::new();
    let mut backfilled = BTreeMap::new();
    for (q, negs, filled) in mined {
        backfilled.insert(q.clone(), filled);
        per_query.insert(q, negs);
    }
    NegativeSet {
        strategy,
        params,
        per_query,
        backfilled,
    }
}

/// Hard negatives from the top of `run` with a false-negative guard.
///
/// The positive score is the best run score among the query's positives, or
/// `positive_score(query, doc)` maximized over positives when none was
/// retrieved. Candidates are the top `pool_size` non-positive entries; those
/// scoring `≥ perc × positive score` are dropped and the best `k` survivors
/// kept. Short lists are backfilled with random non-positive documents that
/// were neither kept nor dropped.
pub fn mine_topk_percpos<F>(
    run: &RetrievalRun,
    qrels: &RelevanceJudgments,
    queries: &[String],
    corpus: &[String],
    params: &MiningParams,
    positive_score: F,
) -> Result<NegativeSet>
where
    F: Fn(&str, &str) -> Result<f64> + Sync,
{
    if !(params.perc > 0.0 && params.perc <= 1.0) {
        return Err(Error::invalid(format!("perc must lie in (0, 1], got {}", params.perc)));
    }
    let corpus_set = check_corpus(corpus)?;
    let mined = queries
        .par_iter()
        .map(|q| {
            let ranking = ranking_of(run, q)?;
            require_positive(qrels, q)?;
            let pos_score = match ranking
                .iter()
                .filter(|(d, _)| qrels.is_positive(q, d))
                .map(|(_, s)| *s)
                .reduce(f64::max)
            {
                Some(s) => s,
                None => {
                    let mut best = f64::NEG_INFINITY;
                    for d in qrels.positives(q) {
                        best = best.max(positive_score(q, d)?);
                    }
                    best
                }
            };
            let threshold = params.perc * pos_score;
            let mut kept = Vec::with_capacity(params.k);
            let mut dropped = HashSet::new();
            for (d, s) in ranking.iter().take(params.pool_size) {
                if qrels.is_positive(q, d) {
                    continue;
                }
                if !corpus_set.contains(d.as_str()) {
                    return Err(Error::MissingId {
                        kind: "corpus document",
                        id: d.clone(),
                    });
                }
                if *s >= threshold {
                    dropped.insert(d.as_str());
                } else if kept.len() < params.k {
                    kept.push(d.clone());
                }
            }
            let missing = params.k - kept.len();
            if missing > 0 {
                let taken: HashSet<&str> = kept.iter().map(String::as_str).collect();
                let eligible: Vec<&str> = corpus
                    .iter()
                    .map(String::as_str)
                    .filter(|d| !qrels.is_positive(q, d) && !taken.contains(d) && !dropped.contains(d))
                    .collect();
                if eligible.len() < missing {
                    return Err(Error::invalid(format!(
                        "query {q}: only {} documents available to backfill {missing} negatives",
                        eligible.len()
                    )));
                }
                kept.extend(draw(&eligible, missing, params.seed, q));
            }
            Ok((q.clone(), kept, missing))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(collect(Strategy::TopkPercpos, params.clone(), mined))
}

/// The `k` highest-ranked non-positive documents of each query.
pub fn mine_naive_topk(
    run: &RetrievalRun,
    qrels: &RelevanceJudgments,
    queries: &[String],
    k: usize,
) -> Result<NegativeSet> {
    let mined = queries
        .iter()
        .map(|q| {
            let ranking = ranking_of(run, q)?;
            require_positive(qrels, q)?;
            let negs: Vec<String> = ranking
                .iter()
                .filter(|(d, _)| !qrels.is_positive(q, d))
                .take(k)
                .map(|(d, _)| d.clone())
                .collect();
            Ok((q.clone(), negs, 0))
        })
        .collect::<Result<Vec<_>>>()?;
    let params = MiningParams {
        k,
        pool_size: 0,
        perc: 1.0,
        seed: 0,
    };
    Ok(collect(Strategy::NaiveTopk, params, mined))
}

/// `k` uniform non-positive documents per query, without replacement.
pub fn mine_random(
    corpus: &[String],
    qrels: &RelevanceJudgments,
    queries: &[String],
    k: usize,
    seed: u64,
) -> Result<NegativeSet> {
    check_corpus(corpus)?;
    let mined = queries
        .par_iter()
        .map(|q| {
            let eligible: Vec<&str> = corpus
                .iter()
                .map(String::as_str)
                .filter(|d| !qrels.is_positive(q, d))
                .collect();
            if eligible.len() < k {
                return Err(Error::invalid(format!(
                    "query {q}: corpus has {} non-positive documents, {k} requested",
                    eligible.len()
                )));
            }
            Ok((q.clone(), draw(&eligible, k, seed, q), 0))
        })
        .collect::<Result<Vec<_>>>()?;
    let params = MiningParams {
        k,
        pool_size: 0,
        perc: 1.0,
        seed,
    };
    Ok(collect(Strategy::Random, params, mined))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn no_direct(_: &str, _: &str) -> Result<f64> {
        panic!("positive was retrieved; direct scoring must not be needed")
    }

    fn fixture() -> (RetrievalRun, RelevanceJudgments, Vec<String>) {
        let mut run = RetrievalRun::new();
        run.insert(
            "q",
            vec![
                ("pos".into(), 0.9),
                ("a".into(), 0.92),
                ("b".into(), 0.86),
                ("c".into(), 0.80),
            ],
        )
        .unwrap();
        let mut qrels = RelevanceJudgments::new();
        qrels.insert("q", "pos", 1).unwrap();
        let corpus = ids(&["pos", "a", "b", "c", "e", "f", "g"]);
        (run, qrels, corpus)
    }

    #[test]
    fn threshold_discards_near_positive() {
        // 0.95 × 0.9 = 0.855: a (0.92) and b (0.86) are at or above it; c survives
        // and the second slot is backfilled.
        let (run, qrels, corpus) = fixture();
        let p = MiningParams {
            k: 2,
            ..Default::default()
        };
        let set = mine_topk_percpos(&run, &qrels, &ids(&["q"]), &corpus, &p, no_direct).unwrap();
        let negs = set.negatives("q").unwrap();
        assert_eq!(negs[0], "c");
        assert!(["e", "f", "g"].contains(&negs[1].as_str()));
        assert_eq!(set.backfilled["q"], 1);

        // Just below the threshold both lower candidates survive.
        let mut run = RetrievalRun::new();
        run.insert(
            "q",
            vec![
                ("pos".into(), 0.9),
                ("a".into(), 0.92),
                ("b".into(), 0.85),
                ("c".into(), 0.80),
            ],
        )
        .unwrap();
        let set = mine_topk_percpos(&run, &qrels, &ids(&["q"]), &corpus, &p, no_direct).unwrap();
        assert_eq!(set.negatives("q").unwrap(), ["b", "c"]);
        assert_eq!(set.backfilled["q"], 0);
    }

    #[test]
    fn perc_one_keeps_everything_below_positive() {
        let (run, qrels, corpus) = fixture();
        let p = MiningParams {
            k: 3,
            perc: 1.0,
            ..Default::default()
        };
        let set = mine_topk_percpos(&run, &qrels, &ids(&["q"]), &corpus, &p, no_direct).unwrap();
        // a scores above the positive and is dropped; one slot is backfilled.
        assert_eq!(&set.negatives("q").unwrap()[..2], ["b", "c"]);
        assert_eq!(set.backfilled["q"], 1);
        assert!(!set.negatives("q").unwrap().contains(&"a".to_string()));
    }

    #[test]
    fn starvation_backfills_deterministically() {
        let mut run = RetrievalRun::new();
        run.insert("q", vec![("p".into(), 0.5), ("x".into(), 0.6)]).unwrap();
        let mut qrels = RelevanceJudgments::new();
        qrels.insert("q", "p", 1).unwrap();
        let corpus: Vec<String> = std::iter::once("p".to_string())
            .chain(std::iter::once("x".to_string()))
            .chain((0..10).map(|i| format!("n{i}")))
            .collect();
        let p = MiningParams {
            k: 2,
            seed: 11,
            ..Default::default()
        };
        let a = mine_topk_percpos(&run, &qrels, &ids(&["q"]), &corpus, &p, no_direct).unwrap();
        let b = mine_topk_percpos(&run, &qrels, &ids(&["q"]), &corpus, &p, no_direct).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.backfilled["q"], 2);
        let negs = a.negatives("q").unwrap();
        assert_eq!(negs.len(), 2);
        assert!(negs.iter().all(|d| d.starts_with('n')));
    }

    #[test]
    fn unretrieved_positive_is_scored_directly() {
        let mut run = RetrievalRun::new();
        run.insert("q", vec![("a".into(), 0.7), ("b".into(), 0.5)]).unwrap();
        let mut qrels = RelevanceJudgments::new();
        qrels.insert("q", "p", 1).unwrap();
        let corpus = ids(&["p", "a", "b", "c"]);
        let p = MiningParams {
            k: 1,
            perc: 0.9,
            ..Default::default()
        };
        // 0.9 × 0.75 = 0.675 drops a.
        let set = mine_topk_percpos(&run, &qrels, &ids(&["q"]), &corpus, &p, |_, d| {
            assert_eq!(d, "p");
            Ok(0.75)
        })
        .unwrap();
        assert_eq!(set.negatives("q").unwrap(), ["b"]);
    }

    #[test]
    fn topk_percpos_errors() {
        let (run, qrels, corpus) = fixture();
        let p = MiningParams::default();
        assert!(mine_topk_percpos(&run, &qrels, &ids(&["other"]), &corpus, &p, no_direct).is_err());
        assert!(mine_topk_percpos(&run, &qrels, &ids(&["q"]), &[], &p, no_direct).is_err());
    }

    #[test]
    fn naive_skips_positive_and_exhausts() {
        let mut run = RetrievalRun::new();
        run.insert("q1", vec![("p".into(), 0.9), ("d2".into(), 0.8), ("d3".into(), 0.7)])
            .unwrap();
        run.insert("q2", vec![("e1".into(), 0.4), ("p".into(), 0.3)]).unwrap();
        let mut qrels = RelevanceJudgments::new();
        qrels.insert("q1", "p", 1).unwrap();
        qrels.insert("q2", "e1", 1).unwrap();
        let set = mine_naive_topk(&run, &qrels, &ids(&["q1", "q2"]), 2).unwrap();
        assert_eq!(set.negatives("q1").unwrap(), ["d2", "d3"]);
        // q2's pool is its own: p is a positive for q1 only.
        assert_eq!(set.negatives("q2").unwrap(), ["p"]);
        let big = mine_naive_topk(&run, &qrels, &ids(&["q1"]), 10).unwrap();
        assert_eq!(big.negatives("q1").unwrap().len(), 2);
    }

    #[test]
    fn random_forced_set_and_streams() {
        let corpus = ids(&["d1", "d2", "d3", "d4", "d5"]);
        let mut qrels = RelevanceJudgments::new();
        qrels.insert("q", "d1", 1).unwrap();
        let set = mine_random(&corpus, &qrels, &ids(&["q"]), 4, 3).unwrap();
        let mut got = set.negatives("q").unwrap().to_vec();
        got.sort();
        assert_eq!(got, ["d2", "d3", "d4", "d5"]);
        assert_eq!(set, mine_random(&corpus, &qrels, &ids(&["q"]), 4, 3).unwrap());
        assert!(mine_random(&corpus, &qrels, &ids(&["q"]), 5, 3).is_err());

        let big: Vec<String> = (0..200).map(|i| format!("d{i}")).collect();
        let s = mine_random(&big, &RelevanceJudgments::new(), &ids(&["qa", "qb"]), 5, 1).unwrap();
        assert_ne!(s.negatives("qa"), s.negatives("qb"));
    }

    #[test]
    fn jsonl_round_trip() {
        let (run, qrels, corpus) = fixture();
        let set = mine_topk_percpos(
            &run,
            &qrels,
            &ids(&["q"]),
            &corpus,
            &MiningParams {
                k: 2,
                ..Default::default()
            },
            no_direct,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("n.jsonl");
        write_negatives(&set, &path).unwrap();
        let back = load_negatives(&path).unwrap();
        assert_eq!(back.per_query, set.per_query);
        assert_eq!(back.strategy, Strategy::TopkPercpos);
        let line = std::fs::read_to_string(&path).unwrap();
        assert!(
            line.starts_with("{\"query_id\":\"q\",\"strategy\":\"topk_percpos\""),
            "{line}"
        );
    }
}
