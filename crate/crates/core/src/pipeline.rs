//! Stage orchestration: alignment, negative mining, adaptation, retrieval
//! and evaluation.

use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::adapter::{init_adapter, Adapter, AdapterMeta, InitScheme, StageRecord};
use crate::error::{Error, Result};
use crate::loss::{AlignmentBatch, ContrastiveBatch, ContrastiveLoss};
use crate::matrix::Matrix;
use crate::metrics::{aggregate, evaluate_run, MetricsReport};
use crate::mining::{mine_naive_topk, mine_random, mine_topk_percpos, MiningParams, NegativeSet, Strategy};
use crate::optim::{train_loop, ContrastiveObjective, Objective, TrainConfig, TrainReport};
use crate::retrieval::{retrieve_topk, score_pair};
use crate::scalar::Scalar;
use crate::split::{sample_alignment_docs, split_dataset, Split, SplitSpec};
use crate::store::{EmbeddingSet, RelevanceJudgments, RetrievalRun, TaskTag};

/// One `(query, positive, negatives)` training example.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub query_id: String,
    pub positive_id: String,
    pub negatives: Vec<String>,
}

/// One example per (query, positive) pair of `queries`, sharing the query's negatives.
pub fn labeled_examples(
    qrels: &RelevanceJudgments,
    negatives: &NegativeSet,
    queries: &[String],
) -> Result<Vec<LabeledExample>> {
    let mut out = Vec::new();
    for q in queries {
        let negs = negatives.negatives(q).ok_or_else(|| Error::MissingId {
            kind: "negative set query",
            id: q.clone(),
        })?;
        for p in qrels.positives(q) {
            out.push(LabeledExample {
                query_id: q.clone(),
                positive_id: p.to_string(),
                negatives: negs.to_vec(),
            });
        }
    }
    Ok(out)
}

/// Gathers embeddings for `examples`; every example must carry the same number of negatives.
pub fn contrastive_batch<T: Scalar>(
    queries: &EmbeddingSet<T>,
    docs: &EmbeddingSet<T>,
    examples: &[LabeledExample],
) -> Result<ContrastiveBatch<T>> {
    let k = examples.first().map_or(0, |e| e.negatives.len());
    let mut q = Matrix::zeros(0, queries.dim());
    let mut p = Matrix::zeros(0, docs.dim());
    let mut n = Matrix::zeros(0, docs.dim());
    for e in examples {
        if e.negatives.len() != k {
            return Err(Error::invalid(format!(
                "query {} has {} negatives, batch uses {k}",
                e.query_id,
                e.negatives.len()
            )));
        }
        q.push_row(queries.vector(&e.query_id)?)?;
        p.push_row(docs.vector(&e.positive_id)?)?;
        for d in &e.negatives {
            n.push_row(docs.vector(d)?)?;
        }
    }
    ContrastiveBatch::new(q, p, n, k)
}

fn stage_record(stage: &str, cfg: &TrainConfig, report: &TrainReport) -> StageRecord {
    StageRecord {
        stage: stage.to_string(),
        epochs_run: report.stop_epoch,
        best_epoch: report.best_epoch,
        final_train_loss: report.final_train_loss(),
        best_val_loss: report.best_val_loss,
        config: serde_json::to_value(cfg).expect("config serializes"),
    }
}

/// Self-supervised alignment: regress `normalize(E_q(d) W)` onto `E_d(d)`
/// for the same documents. Both sets must cover the same ids.
pub fn run_alignment_stage<T: Scalar>(
    q_side: &EmbeddingSet<T>,
    d_side: &EmbeddingSet<T>,
    cfg: &TrainConfig,
    init: InitScheme,
) -> Result<(Adapter<T>, TrainReport)> {
    let q_ids: HashSet<&str> = q_side.ids().iter().map(String::as_str).collect();
    let mismatch = q_side.len() != d_side.len() || d_side.ids().iter().any(|id| !q_ids.contains(id.as_str()));
    if mismatch {
        return Err(Error::invalid(
            "alignment needs both embedders to cover exactly the same documents",
        ));
    }
    let d_aligned = d_side.subset(q_side.ids())?;
    let batch = AlignmentBatch::new(q_side.vectors().clone(), d_aligned.vectors().clone())?;
    let adapter = init_adapter(q_side.dim(), d_side.dim(), init, cfg.seed)?;
    train_loop(adapter, &batch, cfg, None)
}

/// Contrastive adaptation with early stopping on the validation loss.
pub fn run_adaptation_stage<T: Scalar>(
    adapter: Adapter<T>,
    train: &ContrastiveObjective<T>,
    val: Option<&ContrastiveObjective<T>>,
    cfg: &TrainConfig,
) -> Result<(Adapter<T>, TrainReport)> {
    match val {
        Some(v) if !v.is_empty() => {
            let mut eval = |a: &Adapter<T>| v.full_loss(a);
            train_loop(adapter, train, cfg, Some(&mut eval))
        }
        _ => train_loop(adapter, train, cfg, None),
    }
}

/// Which stages run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Alignment then adaptation.
    Era,
    /// Alignment only.
    EraWithoutAdapt,
    /// Adaptation only, from a scaled-random start.
    EmbeddingAdapter,
}

impl Mode {
    pub fn runs_alignment(self) -> bool {
        !matches!(self, Mode::EmbeddingAdapter)
    }

    pub fn runs_adaptation(self) -> bool {
        !matches!(self, Mode::EraWithoutAdapt)
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "era" => Ok(Mode::Era),
            "era-without-adapt" | "era-w/o-adapt" | "align-only" => Ok(Mode::EraWithoutAdapt),
            "embedding-adapter" => Ok(Mode::EmbeddingAdapter),
            other => Err(Error::invalid(format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub mode: Mode,
    pub alignment: TrainConfig,
    pub adaptation: TrainConfig,
    pub loss: ContrastiveLoss,
    pub sampler: Strategy,
    pub mining: MiningParams,
    pub alignment_docs_per_task: usize,
    pub split: SplitSpec,
    /// Depth of the evaluation run.
    pub retrieve_k: usize,
}

impl PipelineConfig {
    /// Stage defaults, TopK-PercPos negatives and InfoNCE at τ = 0.05, all
    /// seeded from `seed`.
    pub fn new(mode: Mode, train_ratio: f64, seed: u64) -> Self {
        let adaptation = TrainConfig::adaptation().with_seed(seed);
        Self {
            mode,
            alignment: TrainConfig::alignment().with_seed(seed),
            loss: ContrastiveLoss::InfoNce {
                temperature: adaptation.temperature,
            },
            adaptation,
            sampler: if mode == Mode::EmbeddingAdapter {
                Strategy::Random
            } else {
                Strategy::TopkPercpos
            },
            mining: MiningParams {
                seed,
                ..MiningParams::default()
            },
            alignment_docs_per_task: 1000,
            split: SplitSpec { train_ratio, seed },
            retrieve_k: 100,
        }
    }
}

/// Embeddings and labels the pipeline consumes.
#[derive(Debug, Clone, Copy)]
pub struct PipelineData<'a, T> {
    /// Queries embedded by the query embedder.
    pub queries: &'a EmbeddingSet<T>,
    /// Corpus embedded by the query embedder (alignment input).
    pub docs_query_side: &'a EmbeddingSet<T>,
    /// Corpus embedded by the document embedder (the index).
    pub docs: &'a EmbeddingSet<T>,
    /// Labels available for training and validation.
    pub train_qrels: &'a RelevanceJudgments,
    /// Labels used to score the test queries.
    pub eval_qrels: &'a RelevanceJudgments,
    pub tags: &'a TaskTag,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput<T> {
    pub adapter: Adapter<T>,
    pub meta: AdapterMeta,
    pub split: Split,
    pub alignment_report: Option<TrainReport>,
    pub adaptation_report: Option<TrainReport>,
    pub negatives: Option<NegativeSet>,
    /// Run over the test queries.
    pub run: RetrievalRun,
    pub metrics: MetricsReport,
}

/// Negatives for `queries` under `cfg.sampler`, scored through `adapter`.
pub fn mine_negatives<T: Scalar>(
    cfg: &PipelineConfig,
    adapter: Option<&Adapter<T>>,
    queries: &EmbeddingSet<T>,
    docs: &EmbeddingSet<T>,
    qrels: &RelevanceJudgments,
    query_ids: &[String],
) -> Result<NegativeSet> {
    let corpus = docs.ids();
    match cfg.sampler {
        Strategy::Random => mine_random(corpus, qrels, query_ids, cfg.mining.k, cfg.mining.seed),
        Strategy::NaiveTopk | Strategy::TopkPercpos => {
            let depth = cfg
                .mining
                .pool_size
                .max(cfg.mining.k + qrels_max_positives(qrels, query_ids));
            let run = retrieve_topk(&queries.subset(query_ids)?, docs, adapter, depth)?;
            if cfg.sampler == Strategy::NaiveTopk {
                mine_naive_topk(&run, qrels, query_ids, cfg.mining.k)
            } else {
                mine_topk_percpos(&run, qrels, query_ids, corpus, &cfg.mining, |q, d| {
                    score_pair(adapter, queries.vector(q)?, docs.vector(d)?)
                })
            }
        }
    }
}

fn qrels_max_positives(qrels: &RelevanceJudgments, queries: &[String]) -> usize {
    queries.iter().map(|q| qrels.num_positives(q)).max().unwrap_or(0)
}

fn labeled_queries(ids: &[String], qrels: &RelevanceJudgments) -> Vec<String> {
    ids.iter().filter(|q| qrels.num_positives(q) > 0).cloned().collect()
}

/// Scores `adapter` (or zero-shot when `None`) on the `test` queries.
pub fn evaluate_queries<T: Scalar>(
    queries: &EmbeddingSet<T>,
    docs: &EmbeddingSet<T>,
    adapter: Option<&Adapter<T>>,
    eval_qrels: &RelevanceJudgments,
    tags: &TaskTag,
    test: &[String],
    k: usize,
) -> Result<(RetrievalRun, MetricsReport)> {
    let run = retrieve_topk(&queries.subset(test)?, docs, adapter, k)?;
    let keep: BTreeSet<String> = test.iter().cloned().collect();
    let (per_query, excluded) = evaluate_run(&run, eval_qrels, Some(&keep));
    let report = aggregate(&per_query, tags, eval_qrels, excluded)?;
    Ok((run, report))
}

/// Split → align → mine → adapt → retrieve → evaluate, as selected by `cfg.mode`.
pub fn run_pipeline<T: Scalar>(data: PipelineData<'_, T>, cfg: &PipelineConfig) -> Result<PipelineOutput<T>> {
    let split = split_dataset(data.queries.ids(), data.tags, &cfg.split)?;
    let (qd, dd) = (data.queries.dim(), data.docs.dim());

    let (mut adapter, init_scheme, alignment_report) = if cfg.mode.runs_alignment() {
        let sample = sample_alignment_docs(
            data.docs.ids(),
            data.tags,
            cfg.alignment_docs_per_task,
            cfg.alignment.seed,
        )?;
        let scheme = InitScheme::default_for(qd, dd);
        let (a, report) = run_alignment_stage(
            &data.docs_query_side.subset(&sample)?,
            &data.docs.subset(&sample)?,
            &cfg.alignment,
            scheme,
        )?;
        (a, scheme, Some(report))
    } else {
        let scheme = InitScheme::ScaledRandom;
        (init_adapter(qd, dd, scheme, cfg.adaptation.seed)?, scheme, None)
    };
    let mut meta = AdapterMeta {
        init_scheme,
        seed: cfg.split.seed,
        stages: Vec::new(),
    };
    if let Some(r) = &alignment_report {
        meta.stages.push(stage_record("alignment", &cfg.alignment, r));
    }

    let mut negatives = None;
    let mut adaptation_report = None;
    if cfg.mode.runs_adaptation() {
        let train_q = labeled_queries(&split.train, data.train_qrels);
        let val_q = labeled_queries(&split.val, data.train_qrels);
        let mined_for: Vec<String> = train_q.iter().chain(&val_q).cloned().collect();
        let mined = mine_negatives(
            cfg,
            Some(&adapter),
            data.queries,
            data.docs,
            data.train_qrels,
            &mined_for,
        )?;
        let objective = |ids: &[String]| -> Result<ContrastiveObjective<T>> {
            let examples = labeled_examples(data.train_qrels, &mined, ids)?;
            Ok(ContrastiveObjective {
                batch: contrastive_batch(data.queries, data.docs, &examples)?,
                loss: cfg.loss,
            })
        };
        let train = objective(&train_q)?;
        let val = if val_q.is_empty() {
            None
        } else {
            Some(objective(&val_q)?)
        };
        let (a, report) = run_adaptation_stage(adapter, &train, val.as_ref(), &cfg.adaptation)?;
        adapter = a;
        meta.stages.push(stage_record("adaptation", &cfg.adaptation, &report));
        adaptation_report = Some(report);
        negatives = Some(mined);
    }

    let (run, metrics) = evaluate_queries(
        data.queries,
        data.docs,
        Some(&adapter),
        data.eval_qrels,
        data.tags,
        &split.test,
        cfg.retrieve_k,
    )?;
    Ok(PipelineOutput {
        adapter,
        meta,
        split,
        alignment_report,
        adaptation_report,
        negatives,
        run,
        metrics,
    })
}
