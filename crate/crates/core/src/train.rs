//! Adam with per-group learning rates, gradient clipping, and the training
//! loop with periodic validation and early stopping.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::data::{self, EncodedSample, PAD_ID};
use crate::error::{Error, Result};
use crate::metrics::{self, EvalReport};
use crate::model::{self, Model};
use crate::sentence::LossBreakdown;
use crate::tensor::{ParamGroup, ParamId, ParamStore, Tensor};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Adam with bias correction and one learning rate per [`ParamGroup`].
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr_model: f64,
    pub lr_embedding: f64,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    /// `(parameter, row)` pairs that never move.
    frozen_rows: Vec<(ParamId, usize)>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr_model: f64, lr_embedding: f64) -> Self {
        let zeros = || store.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        Adam {
            lr_model,
            lr_embedding,
            step: 0,
            m: zeros(),
            v: zeros(),
            frozen_rows: Vec::new(),
        }
    }

    pub fn freeze_row(&mut self, id: ParamId, row: usize) {
        self.frozen_rows.push((id, row));
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update from the gradients held in `store`. Fails without
    /// touching any parameter when a gradient is not finite.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        if let Some(p) = store.iter().find(|p| !p.grad.is_finite()) {
            return Err(Error::Numeric(format!("non-finite gradient for `{}`", p.name)));
        }
        for &(id, row) in &self.frozen_rows {
            let grad = &mut store.get_mut(id).grad;
            let cols = grad.cols();
            grad.data_mut()[row * cols..(row + 1) * cols].iter_mut().for_each(|g| *g = 0.0);
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - BETA1.powi(t);
        let c2 = 1.0 - BETA2.powi(t);
        for (i, p) in store.iter_mut().enumerate() {
            let lr = match p.group {
                ParamGroup::Model => self.lr_model,
                ParamGroup::Embedding => self.lr_embedding,
            };
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            for (((x, &g), m), v) in p.value.data_mut().iter_mut().zip(p.grad.data()).zip(m).zip(v) {
                *m = BETA1 * *m + (1.0 - BETA1) * g;
                *v = BETA2 * *v + (1.0 - BETA2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *x -= lr * m_hat / (v_hat.sqrt() + EPSILON);
            }
        }
        Ok(())
    }
}

/// Scales all gradients so their global L2 norm is at most `max_norm`;
/// returns the norm before scaling.
pub fn clip_grad_norm(store: &mut ParamStore, max_norm: f64) -> f64 {
    let norm = store
        .iter()
        .flat_map(|p| p.grad.data().iter())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for p in store.iter_mut() {
            p.grad.data_mut().iter_mut().for_each(|g| *g *= s);
        }
    }
    norm
}

/// One line of the metric log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogEntry {
    Step {
        step: usize,
        epoch: usize,
        loss: LossBreakdown,
        grad_norm: f64,
    },
    Eval {
        step: usize,
        epoch: usize,
        accuracy: f64,
        macro_f1: f64,
        best_accuracy: f64,
    },
}

/// What a training run produced. The model holds the best weights when a
/// validation set was given, the final weights otherwise.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub steps: usize,
    pub epochs: usize,
    pub stopped_early: bool,
    pub best_step: Option<usize>,
    pub best_val: Option<EvalReport>,
    pub log: Vec<LogEntry>,
}

/// Called with the model each time validation accuracy improves.
pub type BestHook<'a> = dyn FnMut(&Model, &EvalReport) -> Result<()> + 'a;

/// Hooks a caller can attach to a run.
#[derive(Default)]
pub struct TrainHooks<'a> {
    /// Receives every log line as it is produced.
    pub log_sink: Option<&'a mut dyn Write>,
    pub on_best: Option<&'a mut BestHook<'a>>,
}

fn emit(entry: LogEntry, log: &mut Vec<LogEntry>, hooks: &mut TrainHooks) -> Result<()> {
    if let Some(sink) = hooks.log_sink.as_deref_mut() {
        let line = serde_json::to_string(&entry).expect("log entry serializes");
        writeln!(sink, "{line}").map_err(|e| Error::Io {
            path: "<metric log>".into(),
            source: e,
        })?;
    }
    log.push(entry);
    Ok(())
}

/// Trains `model` on `train`, validating on `val` every `eval_every`
/// batches, keeping the most accurate weights, and stopping after `patience`
/// validations without improvement or after `max_epochs`.
///
/// On a non-finite loss or gradient the best weights so far (or the initial
/// ones) are restored and a numeric error is returned.
pub fn train(
    model: &mut Model,
    train: &[EncodedSample],
    val: &[EncodedSample],
    cfg: &TrainConfig,
    mut hooks: TrainHooks,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Input("empty training set".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(model.store(), cfg.lr_model, cfg.lr_embedding);
    adam.freeze_row(model.params.word_embeddings, PAD_ID);
    let lambdas = cfg.lambdas();
    let mut best_weights = model.store().snapshot();
    let mut outcome = TrainOutcome {
        steps: 0,
        epochs: 0,
        stopped_early: false,
        best_step: None,
        best_val: None,
        log: Vec::new(),
    };
    let mut since_best = 0usize;
    let mut evaluated_at = None;

    let validate = |model: &Model,
                        outcome: &mut TrainOutcome,
                        best_weights: &mut Vec<Tensor>,
                        since_best: &mut usize,
                        hooks: &mut TrainHooks|
     -> Result<()> {
        let (report, _) = metrics::evaluate(&model.params, val)?;
        let improved = outcome.best_val.as_ref().is_none_or(|b| report.accuracy > b.accuracy);
        if improved {
            *best_weights = model.store().snapshot();
            outcome.best_step = Some(outcome.steps);
            outcome.best_val = Some(report.clone());
            *since_best = 0;
            if let Some(cb) = hooks.on_best.as_deref_mut() {
                cb(model, &report)?;
            }
        } else {
            *since_best += 1;
        }
        let best_accuracy = outcome.best_val.as_ref().map_or(report.accuracy, |b| b.accuracy);
        emit(
            LogEntry::Eval {
                step: outcome.steps,
                epoch: outcome.epochs,
                accuracy: report.accuracy,
                macro_f1: report.macro_f1,
                best_accuracy,
            },
            &mut outcome.log,
            hooks,
        )
    };

    'epochs: for epoch in 1..=cfg.max_epochs {
        outcome.epochs = epoch;
        for batch in data::make_batches(train, cfg.batch_size, &mut rng)? {
            let result = model::batch_gradients(&model.params, &batch, cfg.dropout, lambdas, Some(&mut rng))
                .and_then(|(grads, loss)| {
                    if !loss.total.is_finite() {
                        return Err(Error::Numeric(format!("loss is {}", loss.total)));
                    }
                    let store = model.store_mut();
                    store.zero_grad();
                    for g in &grads {
                        g.accumulate_into(store);
                    }
                    let norm = clip_grad_norm(store, cfg.clip_norm);
                    adam.step(store)?;
                    Ok((loss, norm))
                });
            let (loss, grad_norm) = match result {
                Ok(x) => x,
                Err(e @ Error::Numeric(_)) => {
                    model.store_mut().restore(&best_weights)?;
                    return Err(Error::Numeric(format!("training diverged at step {}: {e}", outcome.steps + 1)));
                }
                Err(e) => return Err(e),
            };
            outcome.steps += 1;
            emit(
                LogEntry::Step {
                    step: outcome.steps,
                    epoch,
                    loss,
                    grad_norm,
                },
                &mut outcome.log,
                &mut hooks,
            )?;
            if !val.is_empty() && outcome.steps.is_multiple_of(cfg.eval_every) {
                validate(model, &mut outcome, &mut best_weights, &mut since_best, &mut hooks)?;
                evaluated_at = Some(outcome.steps);
                if since_best >= cfg.patience {
                    outcome.stopped_early = true;
                    break 'epochs;
                }
            }
        }
    }
    if !val.is_empty() {
        if evaluated_at != Some(outcome.steps) {
            validate(model, &mut outcome, &mut best_weights, &mut since_best, &mut hooks)?;
        }
        model.store_mut().restore(&best_weights)?;
    }
    Ok(outcome)
}
