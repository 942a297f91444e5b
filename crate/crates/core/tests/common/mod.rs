//! Independent reference implementations used by several test targets.
//! The loss and metric references never call into the library; the suites
//! at the bottom compare the two.

#![allow(dead_code)]

use std::collections::BTreeMap;

use era_core::metrics::{average_precision, ndcg, recall};
use era_core::{Adapter, AlignmentBatch, ContrastiveBatch, ContrastiveLoss, Matrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

pub fn cos(a: &[f64], b: &[f64]) -> f64 {
    let (a, b) = (unit(a), unit(b));
    a.iter().zip(&b).map(|(x, y)| x * y).sum()
}

/// `qᵀ W` for row-major `w` of shape `q.len() × cols`.
pub fn project(w: &[f64], cols: usize, q: &[f64]) -> Vec<f64> {
    (0..cols)
        .map(|j| q.iter().enumerate().map(|(i, x)| x * w[i * cols + j]).sum())
        .collect()
}

/// Literal losses on raw (un-normalized) rows.
pub struct RawContrastive {
    pub queries: Vec<Vec<f64>>,
    pub positives: Vec<Vec<f64>>,
    /// `negatives[i][j]`
    pub negatives: Vec<Vec<Vec<f64>>>,
}

pub fn alignment_reference(w: &[f64], cols: usize, q: &[Vec<f64>], d: &[Vec<f64>]) -> f64 {
    let n = q.len() as f64;
    q.iter()
        .zip(d)
        .map(|(q, d)| 1.0 - cos(&project(w, cols, q), d))
        .sum::<f64>()
        / n
}

pub fn infonce_reference(w: &[f64], cols: usize, b: &RawContrastive, tau: f64) -> f64 {
    let mut total = 0.0;
    for i in 0..b.queries.len() {
        let u = project(w, cols, &b.queries[i]);
        let pos = (cos(&u, &b.positives[i]) / tau).exp();
        let neg: f64 = b.negatives[i].iter().map(|n| (cos(&u, n) / tau).exp()).sum();
        total += -(pos / (pos + neg)).ln();
    }
    total / b.queries.len() as f64
}

pub fn triplet_reference(w: &[f64], cols: usize, b: &RawContrastive, margin: f64) -> f64 {
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..b.queries.len() {
        let u = project(w, cols, &b.queries[i]);
        let sp = cos(&u, &b.positives[i]);
        for n in &b.negatives[i] {
            total += (margin - sp + cos(&u, n)).max(0.0);
            pairs += 1;
        }
    }
    total / pairs as f64
}

/// Smallest distance of any triplet hinge argument from its kink.
pub fn triplet_kink_distance(w: &[f64], cols: usize, b: &RawContrastive, margin: f64) -> f64 {
    let mut closest = f64::INFINITY;
    for i in 0..b.queries.len() {
        let u = project(w, cols, &b.queries[i]);
        let sp = cos(&u, &b.positives[i]);
        for n in &b.negatives[i] {
            closest = closest.min((margin - sp + cos(&u, n)).abs());
        }
    }
    closest
}

/// Central differences of `f` at `w` with step `h`.
pub fn central_difference(w: &[f64], h: f64, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut x = w.to_vec();
    (0..w.len())
        .map(|i| {
            x[i] = w[i] + h;
            let up = f(&x);
            x[i] = w[i] - h;
            let down = f(&x);
            x[i] = w[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Gradients smaller than this are round-off; a saturated InfoNCE term can
/// leave the whole gradient at ~1e-16 where any ratio is noise.
pub const GRAD_FLOOR: f64 = 1e-8;

/// `max |a − n| / max(‖a‖∞, ‖n‖∞, GRAD_FLOOR)`.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = analytic.iter().chain(numeric).fold(GRAD_FLOOR, |m, x| m.max(x.abs()));
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs())
        .fold(0.0, f64::max)
        / scale
}

pub fn gaussian_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    use rand_distr::{Distribution, StandardNormal};
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

pub fn gaussian_rows(rng: &mut ChaCha8Rng, rows: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..rows).map(|_| gaussian_vec(rng, dim)).collect()
}

pub fn random_contrastive(rng: &mut ChaCha8Rng, n: usize, k: usize, qd: usize, dd: usize) -> RawContrastive {
    RawContrastive {
        queries: gaussian_rows(rng, n, qd),
        positives: gaussian_rows(rng, n, dd),
        negatives: (0..n).map(|_| gaussian_rows(rng, k, dd)).collect(),
    }
}

// ---------------------------------------------------------------------------
// Metrics, written straight from the textbook definitions.

fn all_permutations(items: &[u32]) -> Vec<Vec<u32>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut p in all_permutations(&rest) {
            p.insert(0, head);
            out.push(p);
        }
    }
    out
}

fn dcg(grades: &[u32], k: usize) -> f64 {
    let mut total = 0.0;
    for (i, &g) in grades.iter().enumerate() {
        if i >= k {
            break;
        }
        let rank = (i + 1) as f64;
        total += (2f64.powi(g as i32) - 1.0) / (rank + 1.0).log2();
    }
    total
}

/// nDCG@k where the ideal DCG is the best DCG over every ordering of the judged grades.
pub fn ndcg_reference(ranked: &[String], judged: &BTreeMap<String, u32>, k: usize) -> Option<f64> {
    if !judged.values().any(|&g| g > 0) {
        return None;
    }
    let grades: Vec<u32> = ranked.iter().map(|d| *judged.get(d).unwrap_or(&0)).collect();
    let pool: Vec<u32> = judged.values().copied().collect();
    let ideal = all_permutations(&pool).iter().map(|p| dcg(p, k)).fold(0.0, f64::max);
    Some(dcg(&grades, k) / ideal)
}

pub fn recall_reference(ranked: &[String], judged: &BTreeMap<String, u32>, k: usize) -> Option<f64> {
    let relevant: Vec<&String> = judged.iter().filter(|(_, &g)| g > 0).map(|(d, _)| d).collect();
    if relevant.is_empty() {
        return None;
    }
    let top = &ranked[..ranked.len().min(k)];
    let found = relevant.iter().filter(|d| top.contains(d)).count();
    Some(found as f64 / relevant.len() as f64)
}

pub fn ap_reference(ranked: &[String], judged: &BTreeMap<String, u32>, k: usize) -> Option<f64> {
    let relevant = judged.values().filter(|&&g| g > 0).count();
    if relevant == 0 {
        return None;
    }
    let top = &ranked[..ranked.len().min(k)];
    let mut total = 0.0;
    for (i, d) in top.iter().enumerate() {
        if judged.get(d).copied().unwrap_or(0) > 0 {
            let prefix = &top[..=i];
            let hits = prefix
                .iter()
                .filter(|x| judged.get(*x).copied().unwrap_or(0) > 0)
                .count();
            total += hits as f64 / (i + 1) as f64;
        }
    }
    Some(total / relevant as f64)
}

/// Random ranking over a small doc pool with a few graded judgments.
pub fn random_micro_instance(rng: &mut ChaCha8Rng) -> (Vec<String>, BTreeMap<String, u32>) {
    let pool = rng.gen_range(1..=9usize);
    let docs: Vec<String> = (0..pool).map(|i| format!("d{i}")).collect();
    let mut ranked = docs.clone();
    for i in (1..ranked.len()).rev() {
        ranked.swap(i, rng.gen_range(0..=i));
    }
    ranked.truncate(rng.gen_range(0..=pool));
    let mut judged = BTreeMap::new();
    let n_judged = rng.gen_range(0..=pool.min(6));
    for d in docs.iter().take(n_judged) {
        judged.insert(d.clone(), rng.gen_range(0..=3u32));
    }
    // Judged docs outside the pool are relevant but never retrieved.
    if rng.gen_bool(0.3) {
        judged.insert("unretrieved".to_string(), rng.gen_range(1..=3u32));
    }
    (ranked, judged)
}

// ---------------------------------------------------------------------------
// Gradient suite: library gradients against central differences of the
// reference losses above.

pub const FD_STEP: f64 = 1e-6;

fn matrix(rows: &[Vec<f64>]) -> Matrix<f64> {
    Matrix::from_rows(rows[0].len(), rows).unwrap()
}

fn library_batch(b: &RawContrastive) -> ContrastiveBatch<f64> {
    let flat: Vec<Vec<f64>> = b.negatives.iter().flatten().cloned().collect();
    ContrastiveBatch::new(
        matrix(&b.queries),
        matrix(&b.positives),
        matrix(&flat),
        b.negatives[0].len(),
    )
    .unwrap()
}

#[derive(Debug, Default, Clone, Copy)]
pub struct GradientSuite {
    pub alignment: f64,
    pub infonce: f64,
    pub triplet: f64,
    /// Largest |library loss − reference loss| seen.
    pub value_gap: f64,
    pub instances: usize,
}

impl GradientSuite {
    pub fn worst(&self) -> f64 {
        self.alignment.max(self.infonce).max(self.triplet)
    }
}

/// `instances` random problems with dims and batch sizes in 1..=8.
pub fn gradient_suite(instances: usize, seed: u64) -> GradientSuite {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = GradientSuite {
        instances,
        ..Default::default()
    };
    let tau = ContrastiveLoss::DEFAULT_TEMPERATURE;
    let margin = ContrastiveLoss::DEFAULT_MARGIN;
    let mut done = 0;
    while done < instances {
        let qd = rng.gen_range(1..=8usize);
        let dd = rng.gen_range(2..=8usize);
        let n = rng.gen_range(1..=8usize);
        let k = rng.gen_range(1..=4usize);
        let w: Vec<f64> = gaussian_vec(&mut rng, qd * dd);
        let raw = random_contrastive(&mut rng, n, k, qd, dd);
        // Central differences are meaningless across a hinge kink.
        if triplet_kink_distance(&w, dd, &raw, margin) < 1e-3 {
            continue;
        }
        let adapter = Adapter::from_weights(Matrix::from_vec(qd, dd, w.clone()).unwrap()).unwrap();

        let al = AlignmentBatch::new(matrix(&raw.queries), matrix(&raw.positives)).unwrap();
        let lib = era_core::alignment_loss(&adapter, &al).unwrap();
        let fd = central_difference(&w, FD_STEP, |x| {
            alignment_reference(x, dd, &raw.queries, &raw.positives)
        });
        out.alignment = out.alignment.max(max_relative_error(lib.grad.as_slice(), &fd));
        out.value_gap = out
            .value_gap
            .max((lib.value - alignment_reference(&w, dd, &raw.queries, &raw.positives)).abs());

        let batch = library_batch(&raw);
        let lib = era_core::infonce_loss(&adapter, &batch, tau).unwrap();
        let fd = central_difference(&w, FD_STEP, |x| infonce_reference(x, dd, &raw, tau));
        out.infonce = out.infonce.max(max_relative_error(lib.grad.as_slice(), &fd));
        out.value_gap = out
            .value_gap
            .max((lib.value - infonce_reference(&w, dd, &raw, tau)).abs());

        let lib = era_core::triplet_loss(&adapter, &batch, margin).unwrap();
        let fd = central_difference(&w, FD_STEP, |x| triplet_reference(x, dd, &raw, margin));
        out.triplet = out.triplet.max(max_relative_error(lib.grad.as_slice(), &fd));
        out.value_gap = out
            .value_gap
            .max((lib.value - triplet_reference(&w, dd, &raw, margin)).abs());
        done += 1;
    }
    out
}

/// Largest disagreement between the library metrics and the references on
/// `instances` random micro-instances, at cutoffs 10 and 100 plus a small one.
pub fn metric_suite(instances: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut compare = |a: Option<f64>, b: Option<f64>| match (a, b) {
        (Some(a), Some(b)) => worst = worst.max((a - b).abs()),
        (None, None) => {}
        _ => worst = f64::INFINITY,
    };
    for _ in 0..instances {
        let (ranked, judged) = random_micro_instance(&mut rng);
        let small = rng.gen_range(1..=5usize);
        for k in [small, 10] {
            compare(ndcg(&ranked, &judged, k), ndcg_reference(&ranked, &judged, k));
        }
        for k in [small, 100] {
            compare(recall(&ranked, &judged, k), recall_reference(&ranked, &judged, k));
            compare(
                average_precision(&ranked, &judged, k),
                ap_reference(&ranked, &judged, k),
            );
        }
    }
    worst
}

// ---------------------------------------------------------------------------
// Scripted early stopping.

pub const SCRIPTED_TRACE: [f64; 8] = [1.0, 0.9, 0.95, 0.96, 0.97, 0.98, 0.99, 1.0];

pub struct ScriptedRun {
    pub report: era_core::TrainReport,
    /// The returned adapter is bit-identical to a plain two-epoch run.
    pub restored_epoch_two: bool,
}

pub fn scripted_early_stop() -> ScriptedRun {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let q = gaussian_rows(&mut rng, 20, 4);
    let d = gaussian_rows(&mut rng, 20, 3);
    let batch = AlignmentBatch::new(matrix(&q), matrix(&d)).unwrap();
    let init = era_core::init_adapter(4, 3, era_core::InitScheme::ScaledRandom, 4).unwrap();
    let cfg = era_core::TrainConfig {
        batch_size: 8,
        max_epochs: 50,
        patience: Some(5),
        ..era_core::TrainConfig::alignment()
    };
    let mut epoch = 0;
    let mut script = |_: &Adapter<f64>| {
        epoch += 1;
        Ok(SCRIPTED_TRACE.get(epoch - 1).copied().unwrap_or(2.0))
    };
    let (adapter, report) = era_core::train_loop(init.clone(), &batch, &cfg, Some(&mut script)).unwrap();
    let two = era_core::TrainConfig {
        max_epochs: 2,
        patience: None,
        ..cfg
    };
    let (reference, _) = era_core::train_loop(init, &batch, &two, None).unwrap();
    ScriptedRun {
        report,
        restored_epoch_two: adapter == reference,
    }
}
