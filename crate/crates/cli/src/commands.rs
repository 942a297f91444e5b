use std::collections::BTreeSet;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use era_core::adapter::{AdapterMeta, StageRecord};
use era_core::metrics::evaluate_run;
use era_core::mining::{load_negatives, write_negatives};
use era_core::pipeline::{contrastive_batch, labeled_examples, mine_negatives};
use era_core::store::{
    load_embeddings, load_qrels, load_run, load_tags, save_embeddings, write_qrels, write_run, write_tags,
};
use era_core::{
    aggregate, init_adapter, load_adapter, load_adapter_meta, make_synthetic, render_table, retrieve_topk,
    run_adaptation_stage, run_alignment_stage, sample_alignment_docs, save_adapter, split_dataset, Adapter64,
    ContrastiveLoss, ContrastiveObjective, EmbeddingFormat, EmbeddingSet64, InitScheme, MetricsReport, Mode,
    PipelineConfig, RelevanceJudgments, Split, SplitSpec, SyntheticSpec, TrainConfig, TrainReport,
};

use crate::{AdaptArgs, AlignArgs, EvalArgs, MineArgs, ReportArgs, RetrieveArgs, SplitArgs, SynthArgs};

fn embeddings(path: &Path) -> Result<EmbeddingSet64> {
    Ok(load_embeddings(path, EmbeddingFormat::from_path(path))?)
}

fn adapter(path: &Path) -> Result<Adapter64> {
    Ok(load_adapter(path)?)
}

fn qrels(path: &Path) -> Result<RelevanceJudgments> {
    Ok(load_qrels(path)?)
}

fn split_file(path: &Path) -> Result<Split> {
    Split::load_json(path).with_context(|| format!("reading split {}", path.display()))
}

fn subset(split: &Split, name: &str) -> Result<Vec<String>> {
    Ok(match name {
        "train" => split.train.clone(),
        "val" => split.val.clone(),
        "test" => split.test.clone(),
        "all" => [&split.train, &split.val, &split.test]
            .into_iter()
            .flatten()
            .cloned()
            .collect(),
        other => bail!("unknown subset {other:?} (expected train, val, test or all)"),
    })
}

fn write_json<T: serde::Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn write_log(report: &TrainReport, path: Option<&Path>) -> Result<()> {
    if let Some(p) = path {
        report.write_jsonl(p)?;
    }
    Ok(())
}

fn summarize(stage: &str, r: &TrainReport) {
    let last = r.final_train_loss().unwrap_or(f64::NAN);
    print!("{stage}: {} epochs, final train loss {last:.6}", r.stop_epoch);
    if let (Some(e), Some(v)) = (r.best_epoch, r.best_val_loss) {
        print!(", best epoch {e} (val loss {v:.6})");
    }
    if r.early_stopped {
        print!(", stopped early");
    }
    println!();
}

fn stage_record(stage: &str, cfg: &TrainConfig, r: &TrainReport) -> Result<StageRecord> {
    Ok(StageRecord {
        stage: stage.to_string(),
        epochs_run: r.stop_epoch,
        best_epoch: r.best_epoch,
        final_train_loss: r.final_train_loss(),
        best_val_loss: r.best_val_loss,
        config: serde_json::to_value(cfg)?,
    })
}

pub fn synth(a: &SynthArgs) -> Result<()> {
    let d = SyntheticSpec::default();
    let spec = SyntheticSpec {
        n_docs: a.n_docs.unwrap_or(d.n_docs),
        n_queries: a.n_queries.unwrap_or(d.n_queries),
        strong_dim: a.strong_dim.unwrap_or(d.strong_dim),
        weak_dim: a.weak_dim.unwrap_or(d.weak_dim),
        noise_sigma: a.noise_sigma.unwrap_or(d.noise_sigma),
        cluster_count: a.clusters.unwrap_or(d.cluster_count),
        seed: a.common.seed,
        cluster_spread: a.cluster_spread.unwrap_or(d.cluster_spread),
        query_noise: a.query_noise.unwrap_or(d.query_noise),
        query_shift: a.query_shift.unwrap_or(d.query_shift),
        weak_query_noise: a.weak_query_noise.unwrap_or(d.weak_query_noise),
        near_duplicates: a.near_duplicates.unwrap_or(d.near_duplicates),
        duplicate_noise: a.duplicate_noise.unwrap_or(d.duplicate_noise),
        task_count: a.tasks.unwrap_or(d.task_count),
        group_count: a.groups.unwrap_or(d.group_count),
        identity_projection: false,
    };
    let data = make_synthetic::<f64>(&spec)?;
    std::fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    let (ext, format) = if a.jsonl {
        ("jsonl", EmbeddingFormat::Lines)
    } else {
        ("bin", EmbeddingFormat::Packed)
    };
    for (name, set) in [
        ("strong_queries", &data.strong_queries),
        ("strong_docs", &data.strong_docs),
        ("weak_queries", &data.weak_queries),
        ("weak_docs", &data.weak_docs),
    ] {
        save_embeddings(set, &a.out_dir.join(format!("{name}.{ext}")), format)?;
    }
    write_qrels(&data.qrels, &a.out_dir.join("qrels.txt"))?;
    write_qrels(&data.train_qrels, &a.out_dir.join("train_qrels.txt"))?;
    write_tags(&data.tags, &a.out_dir.join("tags.txt"))?;
    save_adapter(
        &Adapter64::from_weights(data.ground_truth_map)?,
        None,
        &a.out_dir.join("ground_truth.bin"),
    )?;
    write_json(&spec, &a.out_dir.join("spec.json"))?;
    println!(
        "wrote {} docs and {} queries ({} → {} dims) to {}",
        spec.n_docs,
        spec.n_queries,
        spec.strong_dim,
        spec.weak_dim,
        a.out_dir.display()
    );
    Ok(())
}

pub fn split(a: &SplitArgs) -> Result<()> {
    let queries = embeddings(&a.queries)?;
    let tags = load_tags(&a.tags)?;
    let s = split_dataset(queries.ids(), &tags, &SplitSpec::new(a.train_ratio, a.common.seed)?)?;
    s.write_json(&a.out)?;
    println!(
        "train {} / val {} / test {} / unused {}",
        s.train.len(),
        s.val.len(),
        s.test.len(),
        s.unused.len()
    );
    if !s.undersized_tasks.is_empty() {
        eprintln!(
            "warning: tasks with too few queries for a full split: {}",
            s.undersized_tasks.join(", ")
        );
    }
    Ok(())
}

pub fn align(a: &AlignArgs) -> Result<()> {
    let q_side = embeddings(&a.query_side)?;
    let d_side = embeddings(&a.doc_side)?;
    let shared: Vec<String> = d_side.ids().iter().filter(|id| q_side.contains(id)).cloned().collect();
    if shared.is_empty() {
        bail!(
            "{} and {} share no document ids",
            a.query_side.display(),
            a.doc_side.display()
        );
    }
    let ids = match &a.tags {
        Some(p) => sample_alignment_docs(&shared, &load_tags(p)?, a.docs_per_task, a.common.seed)?,
        None => shared,
    };
    let cfg = TrainConfig {
        learning_rate: a.learning_rate,
        weight_decay: a.weight_decay,
        batch_size: a.batch_size,
        max_epochs: a.epochs,
        patience: None,
        warmup_fraction: 0.0,
        ..TrainConfig::alignment().with_seed(a.common.seed)
    };
    let init = a
        .init
        .unwrap_or_else(|| InitScheme::default_for(q_side.dim(), d_side.dim()));
    let (w, report) = run_alignment_stage(&q_side.subset(&ids)?, &d_side.subset(&ids)?, &cfg, init)?;
    let meta = AdapterMeta {
        init_scheme: init,
        seed: a.common.seed,
        stages: vec![stage_record("alignment", &cfg, &report)?],
    };
    save_adapter(&w, Some(&meta), &a.out)?;
    write_log(&report, a.log.as_deref())?;
    println!("aligned on {} documents", ids.len());
    summarize("alignment", &report);
    Ok(())
}

/// Split queries of `names` that have at least one positive.
fn labeled(split: &Split, names: &[&str], qrels: &RelevanceJudgments) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for n in names {
        out.extend(subset(split, n)?.into_iter().filter(|q| qrels.num_positives(q) > 0));
    }
    Ok(out)
}

pub fn mine(a: &MineArgs) -> Result<()> {
    let queries = embeddings(&a.queries)?;
    let docs = embeddings(&a.docs)?;
    let qrels = qrels(&a.qrels)?;
    let split = split_file(&a.split)?;
    let w = a.adapter.as_deref().map(adapter).transpose()?;
    let mut cfg = PipelineConfig::new(Mode::Era, split_ratio(&split), a.common.seed);
    cfg.sampler = a.strategy;
    cfg.mining.k = a.k;
    cfg.mining.pool_size = a.pool_size;
    cfg.mining.perc = a.perc;
    let ids = labeled(&split, &["train", "val"], &qrels)?;
    if ids.is_empty() {
        bail!("no train or val query in the split has a positive judgment");
    }
    let set = mine_negatives(&cfg, w.as_ref(), &queries, &docs, &qrels, &ids)?;
    write_negatives(&set, &a.out)?;
    let backfilled: usize = set.backfilled.values().sum();
    println!(
        "mined {} negatives for {} queries ({backfilled} backfilled)",
        a.k,
        ids.len()
    );
    Ok(())
}

/// Only used to fill a required config field; mining ignores it.
fn split_ratio(split: &Split) -> f64 {
    let total = split.train.len() + split.val.len() + split.test.len() + split.unused.len();
    (split.train.len() as f64 / total.max(1) as f64).min(0.4)
}

pub fn adapt(a: &AdaptArgs) -> Result<()> {
    let queries = embeddings(&a.queries)?;
    let docs = embeddings(&a.docs)?;
    let qrels = qrels(&a.qrels)?;
    let split = split_file(&a.split)?;
    let negatives = load_negatives(&a.negatives)?;
    let loss = match a.loss.to_ascii_lowercase().as_str() {
        "infonce" => ContrastiveLoss::InfoNce {
            temperature: a.temperature,
        },
        "triplet" => ContrastiveLoss::Triplet { margin: a.margin },
        other => bail!("unknown loss {other:?} (expected infonce or triplet)"),
    };
    loss.validate()?;

    let (start, mut meta) = match &a.adapter {
        Some(p) => {
            let meta = load_adapter_meta(p)?.unwrap_or(AdapterMeta {
                init_scheme: a.init,
                seed: a.common.seed,
                stages: Vec::new(),
            });
            (adapter(p)?, meta)
        }
        None => (
            init_adapter(queries.dim(), docs.dim(), a.init, a.common.seed)?,
            AdapterMeta {
                init_scheme: a.init,
                seed: a.common.seed,
                stages: Vec::new(),
            },
        ),
    };

    let objective = |ids: &[String]| -> Result<Option<ContrastiveObjective<f64>>> {
        let ids: Vec<String> = ids
            .iter()
            .filter(|q| negatives.negatives(q).is_some())
            .cloned()
            .collect();
        if ids.is_empty() {
            return Ok(None);
        }
        let examples = labeled_examples(&qrels, &negatives, &ids)?;
        Ok(Some(ContrastiveObjective {
            batch: contrastive_batch(&queries, &docs, &examples)?,
            loss,
        }))
    };
    let train = objective(&labeled(&split, &["train"], &qrels)?)?
        .ok_or_else(|| anyhow!("no training query has both a positive and mined negatives"))?;
    let val = objective(&labeled(&split, &["val"], &qrels)?)?;
    let mut patience = (a.patience > 0).then_some(a.patience);
    if val.is_none() && patience.is_some() {
        eprintln!("warning: no validation examples, early stopping disabled");
        patience = None;
    }
    let cfg = TrainConfig {
        learning_rate: a.learning_rate,
        weight_decay: a.weight_decay,
        batch_size: a.batch_size,
        max_epochs: a.epochs,
        patience,
        warmup_fraction: a.warmup,
        temperature: a.temperature,
        seed: a.common.seed,
    };
    let (w, report) = run_adaptation_stage(start, &train, val.as_ref(), &cfg)?;
    meta.stages.push(stage_record("adaptation", &cfg, &report)?);
    save_adapter(&w, Some(&meta), &a.out)?;
    write_log(&report, a.log.as_deref())?;
    println!("adapted on {} examples", train.batch.len());
    summarize("adaptation", &report);
    Ok(())
}

pub fn retrieve(a: &RetrieveArgs) -> Result<()> {
    let queries = embeddings(&a.queries)?;
    let docs = embeddings(&a.docs)?;
    let w = a.adapter.as_deref().map(adapter).transpose()?;
    let queries = match &a.split {
        Some(p) => queries.subset(&subset(&split_file(p)?, &a.subset)?)?,
        None => queries,
    };
    let run = retrieve_topk(&queries, &docs, w.as_ref(), a.k)?;
    write_run(&run, &a.out, &a.tag)?;
    println!(
        "retrieved top {} for {} queries ({})",
        a.k,
        run.len(),
        if w.is_some() { "adapted" } else { "zero-shot" }
    );
    Ok(())
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let run = load_run(&a.run)?;
    let qrels = qrels(&a.qrels)?;
    let tags = load_tags(&a.tags)?;
    let keep: Option<BTreeSet<String>> = match &a.split {
        Some(p) => Some(subset(&split_file(p)?, &a.subset)?.into_iter().collect()),
        None => None,
    };
    let (per_query, excluded) = evaluate_run(&run, &qrels, keep.as_ref());
    if per_query.is_empty() {
        bail!("no query could be scored: none has a positive judgment");
    }
    let report = aggregate(&per_query, &tags, &qrels, excluded)?;
    if let Some(out) = &a.out {
        write_json(&report, out)?;
    }
    let o = &report.overall;
    println!(
        "nDCG@10 {:.2}  Recall@100 {:.2}  MAP@100 {:.2}  ({} queries, {} groups)",
        100.0 * o.ndcg_at_10,
        100.0 * o.recall_at_100,
        100.0 * o.map_at_100,
        report.per_query.len(),
        report.per_group.len()
    );
    if !report.excluded.is_empty() {
        eprintln!(
            "warning: {} queries without positives were excluded",
            report.excluded.len()
        );
    }
    Ok(())
}

pub fn report(a: &ReportArgs) -> Result<()> {
    let mut loaded = Vec::new();
    for input in &a.inputs {
        let (name, path) = input
            .split_once('=')
            .ok_or_else(|| anyhow!("--input expects name=path, got {input:?}"))?;
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {path}"))?;
        let r: MetricsReport = serde_json::from_str(&text).with_context(|| format!("parsing {path}"))?;
        loaded.push((name.to_string(), r));
    }
    let rows: Vec<(&str, &MetricsReport)> = loaded.iter().map(|(n, r)| (n.as_str(), r)).collect();
    let table = render_table(&rows, a.metric);
    match &a.out {
        Some(p) => std::fs::write(p, &table).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{table}"),
    }
    Ok(())
}
