//! AdamW with decoupled weight decay, linear warmup and an epoch loop with
//! validation-loss early stopping.

use std::io::Write;
use std::path::Path;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::adapter::Adapter;
use crate::error::{Error, Result};
use crate::keyed::permutation;
use crate::loss::{alignment_loss_rows, AlignmentBatch, ContrastiveBatch, ContrastiveLoss, LossValue};
use crate::matrix::Matrix;
use crate::scalar::Scalar;
use crate::store::write_file;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState<T> {
    pub m: Matrix<T>,
    pub v: Matrix<T>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<T: Scalar> AdamWState<T> {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            m: Matrix::zeros(rows, cols),
            v: Matrix::zeros(rows, cols),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn for_adapter(a: &Adapter<T>) -> Self {
        Self::new(a.query_dim(), a.doc_dim())
    }
}

/// One AdamW update in place. A non-finite gradient aborts the step and
/// leaves both the adapter and the state untouched.
pub fn adamw_step<T: Scalar>(
    w: &mut Adapter<T>,
    state: &mut AdamWState<T>,
    grad: &Matrix<T>,
    lr: f64,
    weight_decay: f64,
) -> Result<()> {
    let shape = w.weights().shape();
    for (name, s) in [
        ("gradient", grad.shape()),
        ("first moment", state.m.shape()),
        ("second moment", state.v.shape()),
    ] {
        if s != shape {
            return Err(Error::invalid(format!(
                "{name} shape {}x{} does not match adapter {}x{}",
                s.0, s.1, shape.0, shape.1
            )));
        }
    }
    if !grad.is_finite() {
        return Err(Error::NonFinite {
            context: format!("gradient at step {}", state.step + 1),
        });
    }
    let t = state.step + 1;
    let (b1, b2) = (T::of(state.beta1), T::of(state.beta2));
    let bc1 = T::one() - T::of(state.beta1.powf(t as f64));
    let bc2 = T::one() - T::of(state.beta2.powf(t as f64));
    let (lr, wd, eps) = (T::of(lr), T::of(weight_decay), T::of(state.eps));
    let weights = w.weights_mut().as_mut_slice();
    let m = state.m.as_mut_slice();
    let v = state.v.as_mut_slice();
    for (((wi, mi), vi), &g) in weights.iter_mut().zip(m).zip(v).zip(grad.as_slice()) {
        *mi = b1 * *mi + (T::one() - b1) * g;
        *vi = b2 * *vi + (T::one() - b2) * g * g;
        let m_hat = *mi / bc1;
        let v_hat = *vi / bc2;
        *wi -= lr * (m_hat / (v_hat.sqrt() + eps) + wd * *wi);
    }
    state.step = t;
    Ok(())
}

/// Learning rate with linear warmup over `ceil(warmup_fraction · total_steps)`
/// steps and a constant rate afterwards.
pub fn lr_at(step: u64, total_steps: u64, base_lr: f64, warmup_fraction: f64) -> Result<f64> {
    if total_steps == 0 {
        return Err(Error::invalid("total_steps must be positive"));
    }
    if !(0.0..=1.0).contains(&warmup_fraction) {
        return Err(Error::invalid(format!(
            "warmup fraction {warmup_fraction} outside [0, 1]"
        )));
    }
    let warmup = warmup_steps(total_steps, warmup_fraction);
    if step < warmup {
        Ok(base_lr * (step + 1) as f64 / warmup as f64)
    } else {
        Ok(base_lr)
    }
}

fn warmup_steps(total_steps: u64, fraction: f64) -> u64 {
    // Snap products like 0.1 * 300 = 30.000000000000004 before taking the ceiling.
    let raw = fraction * total_steps as f64;
    let snapped = if (raw - raw.round()).abs() < 1e-9 {
        raw.round()
    } else {
        raw.ceil()
    };
    snapped as u64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// `None` disables early stopping.
    pub patience: Option<usize>,
    pub warmup_fraction: f64,
    pub temperature: f64,
    pub seed: u64,
}

impl TrainConfig {
    /// Alignment stage: lr 1e-3, weight decay 1e-2, batch 256, 100 epochs,
    /// constant rate, no early stopping.
    pub fn alignment() -> Self {
        Self {
            learning_rate: 1e-3,
            weight_decay: 1e-2,
            batch_size: 256,
            max_epochs: 100,
            patience: None,
            warmup_fraction: 0.0,
            temperature: ContrastiveLoss::DEFAULT_TEMPERATURE,
            seed: 0,
        }
    }

    /// Adaptation stage: lr 1e-5, weight decay 1e-4, batch 256, up to 1000
    /// epochs, patience 5, 10% warmup, τ = 0.05.
    pub fn adaptation() -> Self {
        Self {
            learning_rate: 1e-5,
            weight_decay: 1e-4,
            batch_size: 256,
            max_epochs: 1000,
            patience: Some(5),
            warmup_fraction: 0.1,
            temperature: ContrastiveLoss::DEFAULT_TEMPERATURE,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight decay must be non-negative, got {}", self.weight_decay));
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive".into());
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            return bad(format!("warmup fraction {} outside [0, 1]", self.warmup_fraction));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad(format!("temperature must be positive, got {}", self.temperature));
        }
        Ok(())
    }
}

/// Something the loop can minimize: a fixed set of examples addressable by index.
pub trait Objective<T: Scalar> {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Mean loss and gradient over the examples `rows`.
    fn evaluate(&self, adapter: &Adapter<T>, rows: &[usize]) -> Result<LossValue<T>>;

    /// Mean loss over every example, without using the gradient.
    fn full_loss(&self, adapter: &Adapter<T>) -> Result<T> {
        let rows: Vec<usize> = (0..self.len()).collect();
        Ok(self.evaluate(adapter, &rows)?.value)
    }
}

impl<T: Scalar> Objective<T> for AlignmentBatch<T> {
    fn len(&self) -> usize {
        AlignmentBatch::len(self)
    }

    fn evaluate(&self, adapter: &Adapter<T>, rows: &[usize]) -> Result<LossValue<T>> {
        alignment_loss_rows(adapter, self, rows)
    }
}

/// A contrastive batch paired with the loss to apply to it.
#[derive(Debug, Clone)]
pub struct ContrastiveObjective<T> {
    pub batch: ContrastiveBatch<T>,
    pub loss: ContrastiveLoss,
}

impl<T: Scalar> Objective<T> for ContrastiveObjective<T> {
    fn len(&self) -> usize {
        self.batch.len()
    }

    fn evaluate(&self, adapter: &Adapter<T>, rows: &[usize]) -> Result<LossValue<T>> {
        self.loss.evaluate_rows(adapter, &self.batch, rows)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    /// Learning rate of the epoch's last step.
    pub lr: f64,
    /// Seconds since the Unix epoch when the epoch finished.
    pub timestamp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub stop_epoch: usize,
    pub early_stopped: bool,
    /// Epoch whose snapshot was returned, when early stopping was active.
    pub best_epoch: Option<usize>,
    pub best_val_loss: Option<f64>,
    pub degenerate_examples: usize,
    pub wall_clock_secs: f64,
}

impl TrainReport {
    pub fn final_train_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.train_loss)
    }

    /// One JSON record per epoch.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        write_file(path, |w| {
            for rec in &self.epochs {
                serde_json::to_writer(&mut *w, rec)?;
                w.write_all(b"\n")?;
            }
            Ok(())
        })
    }
}

/// Validation evaluator: loss of the current adapter on held-out data.
pub type Validator<'a, T> = dyn FnMut(&Adapter<T>) -> Result<T> + 'a;

/// Minimizes `objective` from `init`.
///
/// Each epoch visits every example once in an order derived from
/// `(cfg.seed, epoch)`, keeping the last partial batch. With patience enabled,
/// the loop stops after `patience` consecutive epochs without a strict
/// improvement of the validation loss and returns the best snapshot;
/// otherwise it returns the adapter after the last epoch.
pub fn train_loop<T: Scalar, O: Objective<T> + ?Sized>(
    init: Adapter<T>,
    objective: &O,
    cfg: &TrainConfig,
    mut validation: Option<&mut Validator<'_, T>>,
) -> Result<(Adapter<T>, TrainReport)> {
    cfg.validate()?;
    let n = objective.len();
    if n == 0 {
        return Err(Error::invalid("training objective has no examples"));
    }
    if cfg.patience.is_some() && validation.is_none() {
        return Err(Error::invalid("early stopping requires a validation evaluator"));
    }
    let started = Instant::now();
    let steps_per_epoch = n.div_ceil(cfg.batch_size) as u64;
    let total_steps = steps_per_epoch * cfg.max_epochs as u64;

    let mut w = init;
    let mut state = AdamWState::for_adapter(&w);
    let mut epochs = Vec::new();
    let mut best: Option<(usize, T, Adapter<T>)> = None;
    let mut stale = 0usize;
    let mut early_stopped = false;
    let mut degenerate = 0usize;

    for epoch in 1..=cfg.max_epochs {
        let order = permutation(n, cfg.seed, epoch as u64);
        let mut loss_sum = T::zero();
        let mut lr = cfg.learning_rate;
        for chunk in order.chunks(cfg.batch_size) {
            lr = lr_at(state.step, total_steps, cfg.learning_rate, cfg.warmup_fraction)?;
            let lv = objective.evaluate(&w, chunk)?;
            if !lv.value.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("training loss at epoch {epoch}"),
                });
            }
            degenerate += lv.degenerate;
            loss_sum += lv.value * T::of(chunk.len() as f64);
            adamw_step(&mut w, &mut state, &lv.grad, lr, cfg.weight_decay)?;
        }
        let train_loss = (loss_sum / T::of(n as f64)).as_f64();

        let val = match validation.as_mut() {
            Some(f) => {
                let v = f(&w)?;
                if !v.is_finite() {
                    return Err(Error::NonFinite {
                        context: format!("validation loss at epoch {epoch}"),
                    });
                }
                Some(v)
            }
            None => None,
        };
        epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss: val.map(Scalar::as_f64),
            lr,
            timestamp: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs_f64())
                .unwrap_or(0.0),
        });

        if let Some(v) = val {
            match &best {
                Some((_, b, _)) if v >= *b => stale += 1,
                _ => {
                    best = Some((epoch, v, w.clone()));
                    stale = 0;
                }
            }
        }
        if let Some(p) = cfg.patience {
            if stale > 0 && stale >= p {
                early_stopped = true;
                break;
            }
        }
    }

    let stop_epoch = epochs.len();
    let (out, best_epoch, best_val) = match (cfg.patience, best) {
        (Some(_), Some((e, v, snapshot))) => (snapshot, Some(e), Some(v.as_f64())),
        (_, b) => (w, None, b.map(|(_, v, _)| v.as_f64())),
    };
    Ok((
        out,
        TrainReport {
            epochs,
            stop_epoch,
            early_stopped,
            best_epoch,
            best_val_loss: best_val,
            degenerate_examples: degenerate,
            wall_clock_secs: started.elapsed().as_secs_f64(),
        },
    ))
}
