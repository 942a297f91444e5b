//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

mod common;

use std::collections::BTreeSet;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use era_core::pipeline::{evaluate_queries, PipelineOutput};
use era_core::store::write_run;
use era_core::*;

struct Outcome {
    pass: bool,
    detail: String,
}

type Check = fn() -> Outcome;

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

/// Synthetic setup shared by the retrieval criteria.
fn retrieval_spec(n_queries: usize, near_duplicates: usize) -> SyntheticSpec {
    SyntheticSpec {
        n_docs: 2000,
        n_queries,
        strong_dim: 64,
        weak_dim: 32,
        noise_sigma: 0.1,
        cluster_count: 20,
        query_noise: 0.4,
        query_shift: 0.8,
        weak_query_noise: 0.3,
        near_duplicates,
        seed: 1,
        ..Default::default()
    }
}

fn data_of(d: &SyntheticData<f64>) -> PipelineData<'_, f64> {
    PipelineData {
        queries: &d.strong_queries,
        docs_query_side: &d.strong_docs,
        docs: &d.weak_docs,
        train_qrels: &d.train_qrels,
        eval_qrels: &d.qrels,
        tags: &d.tags,
    }
}

fn ndcg10(r: &MetricsReport) -> f64 {
    100.0 * r.overall.ndcg_at_10
}

fn weak_zero_shot(d: &SyntheticData<f64>, test: &[String]) -> f64 {
    let (_, report) = evaluate_queries(&d.weak_queries, &d.weak_docs, None, &d.qrels, &d.tags, test, 100).unwrap();
    ndcg10(&report)
}

fn gradients() -> Outcome {
    let t = Instant::now();
    let s = common::gradient_suite(100, 11);
    let secs = t.elapsed().as_secs_f64();
    outcome(
        s.worst() <= 1e-4 && secs < 10.0,
        format!(
            "max rel err alignment {:.1e} infonce {:.1e} triplet {:.1e} over {} instances, {secs:.2}s",
            s.alignment, s.infonce, s.triplet, s.instances
        ),
    )
}

fn metric_oracle() -> Outcome {
    use era_core::metrics::{average_precision, ndcg};
    use std::collections::BTreeMap;
    let t = Instant::now();
    let worst = common::metric_suite(1000, 5);
    let ranked: Vec<String> = ["a", "b", "c"].map(String::from).to_vec();
    let n = ndcg(&ranked, &BTreeMap::from([("b".to_string(), 1)]), 10).unwrap();
    let ap = average_precision(
        &ranked,
        &BTreeMap::from([("a".to_string(), 1), ("c".to_string(), 1)]),
        100,
    )
    .unwrap();
    let secs = t.elapsed().as_secs_f64();
    let hand = (n - 0.63093).abs() < 5e-6 && (ap - 0.8333).abs() < 5e-5;
    outcome(
        worst <= 1e-9 && hand && secs < 5.0,
        format!("max gap {worst:.1e} over 1000 instances, nDCG {n:.5}, AP {ap:.4}, {secs:.2}s"),
    )
}

fn rotation_recovery() -> Outcome {
    let t = Instant::now();
    let spec = |sigma| SyntheticSpec {
        n_docs: 2000,
        strong_dim: 64,
        weak_dim: 32,
        noise_sigma: sigma,
        cluster_count: 20,
        seed: 1,
        ..Default::default()
    };
    let cfg = TrainConfig::alignment().with_seed(1);
    let init = InitScheme::default_for(64, 32);

    let d = make_synthetic::<f64>(&spec(0.02)).unwrap();
    let ids = d.strong_docs.ids();
    let (train, held) = (&ids[..1600], &ids[1600..]);
    let (w, _) = run_alignment_stage(
        &d.strong_docs.subset(train).unwrap(),
        &d.weak_docs.subset(train).unwrap(),
        &cfg,
        init,
    )
    .unwrap();
    let mean_cos = held
        .iter()
        .map(|id| {
            let u = apply_adapter(&w, d.strong_docs.vector(id).unwrap()).unwrap();
            cosine_sim(&u.vector, d.weak_docs.vector(id).unwrap()).unwrap()
        })
        .sum::<f64>()
        / held.len() as f64;

    let clean = make_synthetic::<f64>(&spec(0.0)).unwrap();
    let (_, report) = run_alignment_stage(&clean.strong_docs, &clean.weak_docs, &cfg, init).unwrap();
    let final_loss = report.final_train_loss().unwrap();
    let secs = t.elapsed().as_secs_f64();
    outcome(
        mean_cos >= 0.99 && final_loss <= 1e-4 && secs < 60.0,
        format!("held-out cosine {mean_cos:.4} at sigma 0.02, final loss {final_loss:.1e} at sigma 0, {secs:.1}s"),
    )
}

fn asymmetric_gain() -> Outcome {
    let d = make_synthetic::<f64>(&retrieval_spec(200, 0)).unwrap();
    let out = run_pipeline(data_of(&d), &PipelineConfig::new(Mode::EraWithoutAdapt, 0.05, 1)).unwrap();
    let asym = ndcg10(&out.metrics);
    let zs = weak_zero_shot(&d, &out.split.test);
    outcome(
        asym - zs >= 5.0,
        format!(
            "asymmetric {asym:.2} vs weak zero-shot {zs:.2} on {} test queries",
            out.split.test.len()
        ),
    )
}

fn two_stage_ordering() -> Outcome {
    let d = make_synthetic::<f64>(&retrieval_spec(1000, 0)).unwrap();
    let wo = run_pipeline(data_of(&d), &PipelineConfig::new(Mode::EraWithoutAdapt, 0.05, 1)).unwrap();
    let era = run_pipeline(data_of(&d), &PipelineConfig::new(Mode::Era, 0.05, 1)).unwrap();
    let (e, w) = (ndcg10(&era.metrics), ndcg10(&wo.metrics));
    let zs = weak_zero_shot(&d, &era.split.test);
    outcome(
        e - w >= 1.0 && w - zs >= 1.0,
        format!(
            "ERA {e:.2}, w/o adapt {w:.2}, weak zero-shot {zs:.2} ({} train queries)",
            era.split.train.len()
        ),
    )
}

fn sampler_ordering() -> Outcome {
    let d = make_synthetic::<f64>(&retrieval_spec(1000, 2)).unwrap();
    let run = |sampler| {
        let mut cfg = PipelineConfig::new(Mode::Era, 0.05, 1);
        cfg.sampler = sampler;
        ndcg10(&run_pipeline(data_of(&d), &cfg).unwrap().metrics)
    };
    let (p, n) = (run(Strategy::TopkPercpos), run(Strategy::NaiveTopk));
    outcome(
        p >= n,
        format!("TopK-PercPos {p:.2} vs naive top-k {n:.2} with 2 near-duplicates per source doc"),
    )
}

fn split_protocol() -> Outcome {
    let d = make_synthetic::<f64>(&SyntheticSpec {
        n_docs: 600,
        n_queries: 500,
        strong_dim: 8,
        weak_dim: 4,
        seed: 1,
        ..Default::default()
    })
    .unwrap();
    let ids = d.strong_queries.ids();
    let set = |v: &[String]| v.iter().cloned().collect::<BTreeSet<_>>();
    let mut failures = Vec::new();
    for seed in [1, 2, 3] {
        let splits: Vec<Split> = [0.05, 0.10, 0.20, 0.40]
            .iter()
            .map(|&r| split_dataset(ids, &d.tags, &SplitSpec::new(r, seed).unwrap()).unwrap())
            .collect();
        for pair in splits.windows(2) {
            if set(&pair[0].val) != set(&pair[1].val) || set(&pair[0].test) != set(&pair[1].test) {
                failures.push(format!("seed {seed}: held-out sets differ"));
            }
            if !set(&pair[0].train).is_subset(&set(&pair[1].train)) {
                failures.push(format!("seed {seed}: train sets not nested"));
            }
        }
    }
    let detail = if failures.is_empty() {
        "val/test equal and train nested for seeds 1-3, ratios 0.05-0.40".to_string()
    } else {
        failures.join("; ")
    };
    outcome(failures.is_empty(), detail)
}

fn write_artifacts(out: &PipelineOutput<f64>, dir: &Path) {
    save_adapter(&out.adapter, Some(&out.meta), &dir.join("adapter.bin")).unwrap();
    write_run(&out.run, &dir.join("run.trec"), "era").unwrap();
    std::fs::write(
        dir.join("metrics.json"),
        serde_json::to_vec_pretty(&out.metrics).unwrap(),
    )
    .unwrap();
}

fn determinism() -> Outcome {
    let spec = SyntheticSpec {
        n_docs: 400,
        n_queries: 200,
        strong_dim: 16,
        weak_dim: 8,
        cluster_count: 8,
        near_duplicates: 1,
        seed: 7,
        ..Default::default()
    };
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for dir in &dirs {
        let d = make_synthetic::<f64>(&spec).unwrap();
        let out = run_pipeline(data_of(&d), &PipelineConfig::new(Mode::Era, 0.2, 7)).unwrap();
        write_artifacts(&out, dir.path());
    }
    let files = ["adapter.bin", "adapter.bin.json", "run.trec", "metrics.json"];
    let differing: Vec<&str> = files
        .iter()
        .copied()
        .filter(|f| std::fs::read(dirs[0].path().join(f)).unwrap() != std::fs::read(dirs[1].path().join(f)).unwrap())
        .collect();
    let detail = if differing.is_empty() {
        format!("{} byte-identical across two runs", files.join(", "))
    } else {
        format!("differing: {}", differing.join(", "))
    };
    outcome(differing.is_empty(), detail)
}

fn early_stopping() -> Outcome {
    let run = common::scripted_early_stop();
    let r = &run.report;
    outcome(
        r.stop_epoch == 7 && r.early_stopped && r.best_epoch == Some(2) && run.restored_epoch_two,
        format!(
            "stopped after epoch {}, restored epoch {:?}, snapshot matches two-epoch run: {}",
            r.stop_epoch, r.best_epoch, run.restored_epoch_two
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, Check); 9] = [
        ("gradient suite", gradients),
        ("metric oracle", metric_oracle),
        ("rotation recovery", rotation_recovery),
        ("asymmetric gain", asymmetric_gain),
        ("two-stage ordering", two_stage_ordering),
        ("sampler ordering", sampler_ordering),
        ("split protocol", split_protocol),
        ("determinism", determinism),
        ("early stopping", early_stopping),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let o = check();
        if !o.pass {
            failed += 1;
        }
        println!(
            "criterion {} {name}: {} ({})",
            i + 1,
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    println!("acceptance: {}/{} passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
