//! Mini-batch training, validation checkpointing and the hyperparameter
//! search hook.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::checkpoint;
use crate::data::{normalize_window_times, MeasurementWindow, Scaler, Splits};
use crate::decoder::{LossTerms, LossWeights};
use crate::error::{Error, Result};
use crate::model::{Regressor, WindowInput};
use crate::optim::{Adamax, OneCycle};
use crate::params::{ParamGrads, ParamStore};
use crate::testbed::stream_rng;

const RNG_EPSILON: u64 = 16;
const RNG_SHUFFLE: u64 = 17;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub max_lr: f64,
    pub seed: u64,
    /// Posterior samples per window and step.
    pub samples: usize,
    pub weights: LossWeights,
    /// Keep the parameters with the lowest validation loss.
    pub checkpoint_best: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { batch_size: 32, epochs: 250, max_lr: 4e-3, seed: 0, samples: 1, weights: LossWeights::default(), checkpoint_best: true }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 || self.samples == 0 {
            return Err(Error::Config("batch size, epochs and samples must be positive".into()));
        }
        if !(self.max_lr >= 0.0) || !self.max_lr.is_finite() {
            return Err(Error::Config("max_lr must be finite and non-negative".into()));
        }
        self.weights.validate()
    }
}

/// Model-ready windows of every split, scaled with statistics of the
/// training windows.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub train: Vec<WindowInput>,
    pub val: Vec<WindowInput>,
    pub test: Vec<WindowInput>,
    pub scaler: Scaler,
    pub out_of_range: usize,
}

pub fn prepare_windows(scaler: &Scaler, windows: &[MeasurementWindow]) -> Result<(Vec<WindowInput>, usize)> {
    let (scaled, report) = scaler.apply_all(windows)?;
    let inputs = scaled.iter().map(|w| normalize_window_times(w).and_then(|w| WindowInput::from_window(&w))).collect::<Result<Vec<_>>>()?;
    Ok((inputs, report.out_of_range))
}

pub fn prepare(splits: &Splits) -> Result<Prepared> {
    let scaler = Scaler::fit(&splits.train)?;
    let (train, a) = prepare_windows(&scaler, &splits.train)?;
    let (val, b) = prepare_windows(&scaler, &splits.val)?;
    let (test, c) = prepare_windows(&scaler, &splits.test)?;
    Ok(Prepared { train, val, test, scaler, out_of_range: a + b + c })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Learning rate of the last step in the epoch.
    pub lr: f64,
    /// Mean window objective over the epoch's steps.
    pub train_loss: f64,
    /// Mean window objective on the validation set, posterior means.
    pub val_loss: f64,
    /// Mean coordinate term on the validation set.
    pub val_trajectory: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub best_val_trajectory: f64,
    pub steps: usize,
}

/// Mean loss terms over `windows` with deterministic sampling.
pub fn mean_loss<M: Regressor>(model: &M, windows: &[WindowInput], weights: &LossWeights) -> Result<LossTerms> {
    if windows.is_empty() {
        return Err(Error::invalid("no windows to score"));
    }
    let terms = windows
        .par_iter()
        .map(|w| {
            let mut g = Graph::new(model.store());
            model.window_loss(&mut g, w, weights, None).map(|(_, t)| t)
        })
        .collect::<Result<Vec<_>>>()?;
    let n = terms.len() as f64;
    let mut acc = LossTerms::default();
    for t in &terms {
        acc.total += t.total / n;
        acc.trajectory += t.trajectory / n;
        acc.beam += t.beam / n;
        acc.csi += t.csi / n;
        acc.kl_beam += t.kl_beam / n;
        acc.kl_csi += t.kl_csi / n;
    }
    Ok(acc)
}

/// Loss and summed gradients of one mini-batch; windows are processed in
/// parallel and reduced in order.
fn batch_gradients<M: Regressor>(model: &M, batch: &[&WindowInput], cfg: &TrainConfig, epoch: usize) -> Result<(f64, ParamGrads)> {
    let per_window = batch
        .par_iter()
        .map(|w| {
            let store = model.store();
            let mut grads = store.zeros_like();
            let mut loss = 0.0;
            for s in 0..cfg.samples {
                let index = ((epoch as u64) << 32) ^ ((w.id as u64) << 8) ^ s as u64;
                let mut rng = stream_rng(cfg.seed, RNG_EPSILON, index);
                let mut g = Graph::new(store);
                let (l, terms) = model.window_loss(&mut g, w, &cfg.weights, Some(&mut rng))?;
                g.backward_into(l, &mut grads);
                loss += terms.total;
            }
            Ok((loss, grads))
        })
        .collect::<Result<Vec<_>>>()?;
    let scale = 1.0 / (batch.len() * cfg.samples) as f64;
    let mut total = model.store().zeros_like();
    let mut loss = 0.0;
    for (l, g) in &per_window {
        total.add_assign(g);
        loss += l;
    }
    total.scale(scale);
    Ok((loss * scale, total))
}

fn write_csv_header(out: &mut File) -> Result<()> {
    writeln!(out, "epoch,lr,train_loss,val_loss,val_trajectory").map_err(|e| Error::io("losses.csv", e))
}

fn write_csv_row(out: &mut File, e: &EpochLog) -> Result<()> {
    writeln!(out, "{},{:e},{:e},{:e},{:e}", e.epoch, e.lr, e.train_loss, e.val_loss, e.val_trajectory).map_err(|e| Error::io("losses.csv", e))
}

/// Train in place with Adamax under a one-cycle schedule. With
/// `checkpoint_best` the model ends holding its best-validation parameters,
/// which are also saved under `out_dir` when given. A non-finite loss or
/// gradient restores the last good parameters and returns
/// [`Error::Diverged`].
pub fn train<M: Regressor>(model: &mut M, train: &[WindowInput], val: &[WindowInput], cfg: &TrainConfig, out_dir: Option<&Path>) -> Result<TrainReport> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::invalid("training needs non-empty train and validation sets"));
    }
    let steps_per_epoch = train.len().div_ceil(cfg.batch_size);
    let schedule = OneCycle::new(cfg.max_lr, steps_per_epoch * cfg.epochs);
    let mut opt = Adamax::new(model.store());
    let hash = model.config_hash()?;
    let mut csv = match out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join("losses.csv");
            let mut f = File::create(&path).map_err(|e| Error::io(&path, e))?;
            write_csv_header(&mut f)?;
            Some(f)
        }
        None => None,
    };

    let mut best: Option<(usize, f64, f64, ParamStore)> = None;
    let mut logs = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut step = 0;
    let initial = model.store().clone();
    for epoch in 0..cfg.epochs {
        let start_of_epoch = model.store().clone();
        let diverged = |model: &mut M, best: &Option<(usize, f64, f64, ParamStore)>, reason: String| {
            let good = best.as_ref().map(|b| b.3.clone()).unwrap_or_else(|| if epoch == 0 { initial.clone() } else { start_of_epoch.clone() });
            *model.store_mut() = good;
            Error::Diverged { epoch, reason }
        };
        order.sort_unstable();
        order.shuffle(&mut stream_rng(cfg.seed, RNG_SHUFFLE, epoch as u64));
        let mut loss_sum = 0.0;
        let mut lr = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&WindowInput> = chunk.iter().map(|&i| &train[i]).collect();
            let (loss, grads) = match batch_gradients(model, &batch, cfg, epoch) {
                Ok(v) => v,
                Err(Error::NonFiniteLoss { term }) => return Err(diverged(model, &best, format!("non-finite {term} loss"))),
                Err(e) => return Err(e),
            };
            if !grads.is_finite() {
                return Err(diverged(model, &best, "non-finite gradient".into()));
            }
            lr = schedule.lr(step);
            opt.step(model.store_mut(), &grads, lr);
            loss_sum += loss;
            step += 1;
        }
        let v = match mean_loss(model, val, &cfg.weights) {
            Ok(v) => v,
            Err(Error::NonFiniteLoss { term }) => return Err(diverged(model, &best, format!("non-finite validation {term} loss"))),
            Err(e) => return Err(e),
        };
        let log = EpochLog { epoch, lr, train_loss: loss_sum / steps_per_epoch as f64, val_loss: v.total, val_trajectory: v.trajectory };
        if let Some(f) = csv.as_mut() {
            write_csv_row(f, &log)?;
        }
        logs.push(log);
        if best.as_ref().is_none_or(|b| v.total < b.1) {
            best = Some((epoch, v.total, v.trajectory, model.store().clone()));
            if let (Some(dir), true) = (out_dir, cfg.checkpoint_best) {
                let meta = serde_json::json!({ "epoch": epoch, "val_loss": v.total, "val_trajectory": v.trajectory, "method": model.method_id() });
                checkpoint::save(dir, "best", model.store(), &hash, meta)?;
            }
        }
    }
    let (best_epoch, best_val_loss, best_val_trajectory, params) = best.expect("at least one epoch");
    if cfg.checkpoint_best {
        *model.store_mut() = params;
    }
    Ok(TrainReport { epochs: logs, best_epoch, best_val_loss, best_val_trajectory, steps: step })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchTrial {
    pub index: usize,
    pub weights: LossWeights,
    pub val_trajectory: f64,
    pub best_so_far: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchReport {
    pub trials: Vec<SearchTrial>,
    pub best: LossWeights,
    pub best_val_trajectory: f64,
}

/// Random search over `λ1..λ4 ∈ [0, 1]`, scoring each trial by its best
/// validation coordinate loss. Diverged trials score `+∞`.
pub fn search_hyperparams<M, F>(build: F, train_set: &[WindowInput], val: &[WindowInput], base: &TrainConfig, budget: usize, epochs: usize, seed: u64) -> Result<SearchReport>
where
    M: Regressor,
    F: Fn() -> Result<M>,
{
    if budget == 0 {
        return Err(Error::Config("search budget must be at least one trial".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trials: Vec<SearchTrial> = Vec::with_capacity(budget);
    let mut best = (f64::INFINITY, base.weights);
    for index in 0..budget {
        let weights = LossWeights { lambda1: rng.random(), lambda2: rng.random(), lambda3: rng.random(), lambda4: rng.random(), b_p: base.weights.b_p };
        let cfg = TrainConfig { epochs, weights, ..base.clone() };
        let mut model = build()?;
        let score = match train(&mut model, train_set, val, &cfg, None) {
            Ok(r) => r.best_val_trajectory,
            Err(Error::Diverged { .. }) => f64::INFINITY,
            Err(e) => return Err(e),
        };
        if index == 0 || score < best.0 {
            best = (score, weights);
        }
        trials.push(SearchTrial { index, weights, val_trajectory: score, best_so_far: best.0 });
    }
    Ok(SearchReport { trials, best: best.1, best_val_trajectory: best.0 })
}
