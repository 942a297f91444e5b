//! nDCG@k, Recall@k and MAP@k with task → group → overall macro averaging.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::{RelevanceJudgments, RetrievalRun, TaskTag};

/// `2^grade − 1`
#[inline]
fn gain(grade: u32) -> f64 {
    2f64.powi(grade.min(60) as i32) - 1.0
}

#[inline]
fn discount(rank0: usize) -> f64 {
    ((rank0 + 2) as f64).log2()
}

fn has_positive(judged: &BTreeMap<String, u32>) -> bool {
    judged.values().any(|&g| g > 0)
}

/// nDCG@k of one ranking; `None` when the query has no positive judgment.
pub fn ndcg<S: AsRef<str>>(ranked: &[S], judged: &BTreeMap<String, u32>, k: usize) -> Option<f64> {
    if !has_positive(judged) {
        return None;
    }
    let dcg: f64 = ranked
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, d)| gain(judged.get(d.as_ref()).copied().unwrap_or(0)) / discount(i))
        .sum();
    let mut ideal: Vec<u32> = judged.values().copied().collect();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = ideal
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &g)| gain(g) / discount(i))
        .sum();
    Some(dcg / idcg)
}

/// Fraction of relevant documents (grade > 0) found in the top `k`.
pub fn recall<S: AsRef<str>>(ranked: &[S], judged: &BTreeMap<String, u32>, k: usize) -> Option<f64> {
    let total = judged.values().filter(|&&g| g > 0).count();
    if total == 0 {
        return None;
    }
    let hits = ranked
        .iter()
        .take(k)
        .filter(|d| judged.get(d.as_ref()).is_some_and(|&g| g > 0))
        .count();
    Some(hits as f64 / total as f64)
}

/// Average precision truncated at `k`, normalized by the total relevant count.
pub fn average_precision<S: AsRef<str>>(ranked: &[S], judged: &BTreeMap<String, u32>, k: usize) -> Option<f64> {
    let total = judged.values().filter(|&&g| g > 0).count();
    if total == 0 {
        return None;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, d) in ranked.iter().take(k).enumerate() {
        if judged.get(d.as_ref()).is_some_and(|&g| g > 0) {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    Some(sum / total as f64)
}

/// Per-query values of one metric plus the queries that could not be scored.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PerQuery {
    pub values: BTreeMap<String, f64>,
    /// Queries without any positive judgment.
    pub excluded: Vec<String>,
}

/// Queries scored: every query present in the run or the judgments.
fn per_query<F>(run: &RetrievalRun, qrels: &RelevanceJudgments, k: usize, metric: F) -> PerQuery
where
    F: Fn(&[&str], &BTreeMap<String, u32>, usize) -> Option<f64>,
{
    let empty = BTreeMap::new();
    let queries: BTreeSet<&str> = run.queries().chain(qrels.queries()).collect();
    let mut out = PerQuery::default();
    for q in queries {
        let ranked: Vec<&str> = run
            .ranking(q)
            .map(|r| r.iter().map(|(d, _)| d.as_str()).collect())
            .unwrap_or_default();
        match metric(&ranked, qrels.judged(q).unwrap_or(&empty), k) {
            Some(v) => {
                out.values.insert(q.to_string(), v);
            }
            None => out.excluded.push(q.to_string()),
        }
    }
    out
}

pub fn ndcg_at_k(run: &RetrievalRun, qrels: &RelevanceJudgments, k: usize) -> PerQuery {
    per_query(run, qrels, k, |r, j, k| ndcg(r, j, k))
}

pub fn recall_at_k(run: &RetrievalRun, qrels: &RelevanceJudgments, k: usize) -> PerQuery {
    per_query(run, qrels, k, |r, j, k| recall(r, j, k))
}

pub fn map_at_k(run: &RetrievalRun, qrels: &RelevanceJudgments, k: usize) -> PerQuery {
    per_query(run, qrels, k, |r, j, k| average_precision(r, j, k))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct QueryMetrics {
    pub ndcg_at_10: f64,
    pub recall_at_100: f64,
    pub map_at_100: f64,
}

impl QueryMetrics {
    fn mean<'a>(items: impl IntoIterator<Item = &'a QueryMetrics>) -> QueryMetrics {
        let mut n = 0usize;
        let mut acc = QueryMetrics::default();
        for m in items {
            n += 1;
            acc.ndcg_at_10 += m.ndcg_at_10;
            acc.recall_at_100 += m.recall_at_100;
            acc.map_at_100 += m.map_at_100;
        }
        if n > 0 {
            let n = n as f64;
            acc.ndcg_at_10 /= n;
            acc.recall_at_100 /= n;
            acc.map_at_100 /= n;
        }
        acc
    }

    pub fn get(&self, metric: Metric) -> f64 {
        match metric {
            Metric::Ndcg10 => self.ndcg_at_10,
            Metric::Recall100 => self.recall_at_100,
            Metric::Map100 => self.map_at_100,
        }
    }
}

/// The three metrics for every scorable query, restricted to `queries` if given.
pub fn evaluate_run(
    run: &RetrievalRun,
    qrels: &RelevanceJudgments,
    queries: Option<&BTreeSet<String>>,
) -> (BTreeMap<String, QueryMetrics>, Vec<String>) {
    let (run, qrels) = match queries {
        Some(keep) => {
            let mut r = RetrievalRun::new();
            for (q, list) in run.iter().filter(|(q, _)| keep.contains(*q)) {
                r.insert(q, list.to_vec()).expect("ranking already valid");
            }
            (r, qrels.restrict(keep.iter().map(String::as_str)))
        }
        None => (run.clone(), qrels.clone()),
    };
    let n = ndcg_at_k(&run, &qrels, 10);
    let r = recall_at_k(&run, &qrels, 100);
    let m = map_at_k(&run, &qrels, 100);
    let per = n
        .values
        .iter()
        .map(|(q, &v)| {
            (
                q.clone(),
                QueryMetrics {
                    ndcg_at_10: v,
                    recall_at_100: r.values[q],
                    map_at_100: m.values[q],
                },
            )
        })
        .collect();
    (per, n.excluded)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSummary {
    pub group: String,
    pub metrics: QueryMetrics,
    pub queries: usize,
    pub judged_docs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    /// Unweighted mean over the group's tasks.
    pub metrics: QueryMetrics,
    pub tasks: usize,
    pub queries: usize,
    pub judged_docs: usize,
}

/// Metrics at every aggregation level: query, task (mean of queries), group
/// (mean of tasks) and overall (mean of groups).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_query: BTreeMap<String, QueryMetrics>,
    pub per_task: BTreeMap<String, TaskSummary>,
    pub per_group: BTreeMap<String, GroupSummary>,
    pub overall: QueryMetrics,
    /// Queries left out because they have no positive judgment.
    pub excluded: Vec<String>,
}

pub fn aggregate(
    per_query: &BTreeMap<String, QueryMetrics>,
    tags: &TaskTag,
    qrels: &RelevanceJudgments,
    excluded: Vec<String>,
) -> Result<MetricsReport> {
    let mut tasks: BTreeMap<&str, (String, Vec<&QueryMetrics>, usize)> = BTreeMap::new();
    for (q, m) in per_query {
        let a = tags.require(q)?;
        let entry = tasks
            .entry(a.task.as_str())
            .or_insert_with(|| (a.group.clone(), Vec::new(), 0));
        if entry.0 != a.group {
            return Err(Error::invalid(format!(
                "task {} is tagged with groups {} and {}",
                a.task, entry.0, a.group
            )));
        }
        entry.1.push(m);
        entry.2 += qrels.judged(q).map_or(0, |j| j.len());
    }
    let per_task: BTreeMap<String, TaskSummary> = tasks
        .into_iter()
        .map(|(t, (group, ms, judged))| {
            (
                t.to_string(),
                TaskSummary {
                    group,
                    queries: ms.len(),
                    metrics: QueryMetrics::mean(ms),
                    judged_docs: judged,
                },
            )
        })
        .collect();
    let mut groups: BTreeMap<&str, Vec<&TaskSummary>> = BTreeMap::new();
    for t in per_task.values() {
        groups.entry(t.group.as_str()).or_default().push(t);
    }
    let per_group: BTreeMap<String, GroupSummary> = groups
        .into_iter()
        .map(|(g, ts)| {
            (
                g.to_string(),
                GroupSummary {
                    metrics: QueryMetrics::mean(ts.iter().map(|t| &t.metrics)),
                    tasks: ts.len(),
                    queries: ts.iter().map(|t| t.queries).sum(),
                    judged_docs: ts.iter().map(|t| t.judged_docs).sum(),
                },
            )
        })
        .collect();
    let overall = QueryMetrics::mean(per_group.values().map(|g| &g.metrics));
    Ok(MetricsReport {
        per_query: per_query.clone(),
        per_task,
        per_group,
        overall,
        excluded,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Metric {
    Ndcg10,
    Recall100,
    Map100,
}

impl Metric {
    pub fn label(self) -> &'static str {
        match self {
            Metric::Ndcg10 => "nDCG@10 (%)",
            Metric::Recall100 => "Recall@100 (%)",
            Metric::Map100 => "MAP@100 (%)",
        }
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ndcg" | "ndcg@10" | "ndcg10" => Ok(Metric::Ndcg10),
            "recall" | "recall@100" | "recall100" => Ok(Metric::Recall100),
            "map" | "map@100" | "map100" => Ok(Metric::Map100),
            other => Err(Error::invalid(format!("unknown metric {other:?}"))),
        }
    }
}

/// Fixed-width table: one row per method, columns `Avg` then each group, in percent.
pub fn render_table(rows: &[(&str, &MetricsReport)], metric: Metric) -> String {
    let groups: BTreeSet<&str> = rows
        .iter()
        .flat_map(|(_, r)| r.per_group.keys().map(String::as_str))
        .collect();
    let name_w = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(6);
    let col_w = groups.iter().map(|g| g.len()).max().unwrap_or(0).max(7);
    let mut out = String::new();
    let _ = writeln!(out, "{}", metric.label());
    let _ = write!(out, "{:<name_w$} {:>col_w$}", "Method", "Avg");
    for g in &groups {
        let _ = write!(out, " {g:>col_w$}");
    }
    out.push('\n');
    for (name, report) in rows {
        let _ = write!(out, "{name:<name_w$} {:>col_w$.2}", 100.0 * report.overall.get(metric));
        for g in &groups {
            match report.per_group.get(*g) {
                Some(s) => {
                    let _ = write!(out, " {:>col_w$.2}", 100.0 * s.metrics.get(metric));
                }
                None => {
                    let _ = write!(out, " {:>col_w$}", "-");
                }
            }
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn judged(pairs: &[(&str, u32)]) -> BTreeMap<String, u32> {
        pairs.iter().map(|(d, g)| (d.to_string(), *g)).collect()
    }

    #[test]
    fn ndcg_cases() {
        let j = judged(&[("r", 1)]);
        assert_eq!(ndcg(&["r", "x"], &j, 10), Some(1.0));
        assert_relative_eq!(ndcg(&["x", "r"], &j, 10).unwrap(), 1.0 / 3f64.log2(), epsilon = 1e-15);
        assert_relative_eq!(ndcg(&["x", "r"], &j, 10).unwrap(), 0.63093, epsilon = 1e-5);
        let long: Vec<String> = (0..10).map(|i| format!("x{i}")).chain(["r".to_string()]).collect();
        assert_eq!(ndcg(&long, &j, 10), Some(0.0));
        assert_eq!(ndcg(&["r"], &judged(&[("r", 0)]), 10), None);
    }

    #[test]
    fn recall_cases() {
        let j = judged(&[("a", 1), ("b", 2), ("c", 1)]);
        assert_eq!(recall(&["c", "x", "a", "b"], &j, 100), Some(1.0));
        let j2 = judged(&[("a", 1), ("b", 1)]);
        assert_eq!(recall(&["a", "x"], &j2, 100), Some(0.5));
        assert_eq!(recall(&["x"], &j2, 100), Some(0.0));
    }

    #[test]
    fn map_cases() {
        let j = judged(&[("a", 1)]);
        assert_eq!(average_precision(&["a"], &j, 100), Some(1.0));
        let j2 = judged(&[("a", 1), ("b", 1)]);
        assert_relative_eq!(
            average_precision(&["a", "x", "b"], &j2, 100).unwrap(),
            0.5 * (1.0 + 2.0 / 3.0),
            epsilon = 1e-15
        );
        assert_eq!(average_precision(&["x", "y", "a"], &j, 2), Some(0.0));
    }

    fn report_for(values: &[(&str, &str, &str, f64)]) -> MetricsReport {
        let mut tags = TaskTag::new();
        let mut per = BTreeMap::new();
        for (q, task, group, v) in values {
            tags.assign(*q, *task, *group).unwrap();
            per.insert(
                q.to_string(),
                QueryMetrics {
                    ndcg_at_10: *v,
                    recall_at_100: *v,
                    map_at_100: *v,
                },
            );
        }
        aggregate(&per, &tags, &RelevanceJudgments::new(), vec![]).unwrap()
    }

    #[test]
    fn aggregation_levels() {
        let r = report_for(&[("a", "t1", "G", 1.0), ("b", "t2", "H", 1.0)]);
        assert_eq!(r.overall.ndcg_at_10, 1.0);

        // Group means 0.2 and 0.6; the larger group must not dominate.
        let r = report_for(&[
            ("a", "t1", "G", 0.2),
            ("b", "t2", "H", 0.6),
            ("c", "t2", "H", 0.6),
            ("d", "t3", "H", 0.6),
        ]);
        assert_relative_eq!(r.overall.ndcg_at_10, 0.4, epsilon = 1e-15);

        let r = report_for(&[("a", "t1", "G", 0.1), ("b", "t1", "G", 0.3), ("c", "t2", "G", 0.8)]);
        assert_relative_eq!(r.per_group["G"].metrics.ndcg_at_10, 0.5, epsilon = 1e-15);
        assert_eq!(r.overall, r.per_group["G"].metrics);
    }

    #[test]
    fn untagged_query_is_an_error() {
        let mut per = BTreeMap::new();
        per.insert("q".to_string(), QueryMetrics::default());
        assert!(aggregate(&per, &TaskTag::new(), &RelevanceJudgments::new(), vec![]).is_err());
    }

    #[test]
    fn queries_without_positives_are_excluded() {
        let mut qrels = RelevanceJudgments::new();
        qrels.insert("q1", "d1", 1).unwrap();
        qrels.insert("q2", "d1", 0).unwrap();
        let mut run = RetrievalRun::new();
        run.insert("q1", vec![("d1".into(), 1.0)]).unwrap();
        run.insert("q2", vec![("d1".into(), 1.0)]).unwrap();
        let (per, excluded) = evaluate_run(&run, &qrels, None);
        assert_eq!(per.len(), 1);
        assert_eq!(excluded, ["q2"]);
    }

    #[test]
    fn table_layout() {
        let r = report_for(&[("a", "t1", "Legal", 0.5), ("b", "t2", "Web", 0.25)]);
        let t = render_table(&[("zero-shot", &r)], Metric::Ndcg10);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines[0], "nDCG@10 (%)");
        assert!(lines[1].starts_with("Method"));
        assert!(lines[1].contains("Avg") && lines[1].contains("Legal") && lines[1].contains("Web"));
        assert!(lines[2].contains("37.50") && lines[2].contains("50.00") && lines[2].contains("25.00"));
    }
}
