//! Approximator pretraining, joint two-head training and the dynamic
//! Lagrange-multiplier schedule.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ParamStore};
use crate::data::Dataset;
use crate::error::{contract, Error, Result};
use crate::losses::{self, BigTerm};
use crate::models::{Approximator, ArchSpec, BigModel, Task, TwoHeadNet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    WhiteBox,
    BlackBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_init: f64,
    pub lr_decay_epochs: Vec<usize>,
    pub lr_decay_factor: f64,
    pub weight_decay: f64,
    pub beta_init: f64,
    /// Set-point for the batch mean of `l_q`.
    pub alpha: f64,
    /// `[beta_min, beta_max]`; equal bounds pin β.
    pub beta_bounds: [f64; 2],
    pub seed: u64,
    pub mode: Mode,
}

impl TrainConfig {
    /// SGD settings for plain cross-entropy pretraining (100 epochs, lr 0.1,
    /// decay ×0.2 at 30/60/80).
    pub fn pretrain_default(seed: u64) -> Self {
        Self {
            epochs: 100,
            batch_size: 128,
            lr_init: 0.1,
            lr_decay_epochs: vec![30, 60, 80],
            lr_decay_factor: 0.2,
            weight_decay: 5e-4,
            beta_init: 1.0,
            alpha: 0.5,
            beta_bounds: [1e-4, 1e4],
            seed,
            mode: Mode::BlackBox,
        }
    }

    /// Fine-tuning settings for joint training (lr 0.01).
    pub fn joint_default(seed: u64, mode: Mode) -> Self {
        Self {
            lr_init: 0.01,
            mode,
            ..Self::pretrain_default(seed)
        }
    }

    /// Pretraining for regression outputs (lr 0.05).
    pub fn pretrain_regression_default(seed: u64) -> Self {
        Self {
            lr_init: 0.05,
            ..Self::pretrain_default(seed)
        }
    }

    /// Joint settings for the regression surface: black-box with batch 32.
    pub fn joint_regression_default(seed: u64) -> Self {
        Self {
            batch_size: 32,
            ..Self::joint_default(seed, Mode::BlackBox)
        }
    }

    /// Pins β to a single value.
    pub fn with_fixed_beta(mut self, beta: f64) -> Self {
        self.beta_init = beta;
        self.beta_bounds = [beta, beta];
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return contract("batch_size must be >= 1");
        }
        if !(self.lr_init > 0.0) {
            return contract(format!("lr_init must be positive, got {}", self.lr_init));
        }
        if !(self.lr_decay_factor > 0.0) {
            return contract("lr_decay_factor must be positive");
        }
        if !(self.weight_decay >= 0.0) {
            return contract("weight_decay must be >= 0");
        }
        let [lo, hi] = self.beta_bounds;
        if !(lo > 0.0 && lo <= self.beta_init && self.beta_init <= hi) {
            return contract(format!(
                "need 0 < beta_min <= beta_init <= beta_max, got {lo} / {} / {hi}",
                self.beta_init
            ));
        }
        if !(self.alpha > 0.0) {
            return contract(format!("alpha must be positive, got {}", self.alpha));
        }
        Ok(())
    }
}

/// `lr_init · factor^(number of decay epochs ≤ epoch)`.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    let decays = cfg.lr_decay_epochs.iter().filter(|&&e| e <= epoch).count();
    cfg.lr_init * cfg.lr_decay_factor.powi(decays as i32)
}

/// `param ← param − lr·(grad + weight_decay·param)`
pub fn sgd_update(param: &mut [f64], grad: &[f64], lr: f64, weight_decay: f64) {
    for (p, g) in param.iter_mut().zip(grad) {
        *p -= lr * (g + weight_decay * *p);
    }
}

/// Applies [`sgd_update`] to every tensor of the store using its accumulated
/// gradient.
pub fn sgd_step(store: &mut ParamStore, lr: f64, weight_decay: f64) {
    for t in store.iter_mut() {
        let (values, grad) = t.values_and_grad_mut();
        sgd_update(values, grad, lr, weight_decay);
    }
}

/// Multiplicative controller for β: `β/0.99` when the batch `l_q` is above
/// `alpha`, `β/1.01` otherwise, clamped to `bounds`.
pub fn update_beta(beta: f64, mean_lq: f64, alpha: f64, bounds: [f64; 2]) -> f64 {
    let next = if mean_lq > alpha { beta / 0.99 } else { beta / 1.01 };
    next.clamp(bounds[0], bounds[1])
}

/// One row per completed epoch. Fields that do not apply to a run (β during
/// pretraining, accuracy for regression) are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_lp: f64,
    pub mean_lq: Option<f64>,
    pub beta: Option<f64>,
    pub acc_train: Option<f64>,
    pub acc_test: Option<f64>,
    pub mean_q: Option<f64>,
}

/// Per-batch trace of the predictor loss and β after the update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub mean_lq: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub steps: Vec<StepRecord>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl TrainLog {
    pub const CSV_HEADER: [&'static str; 7] = ["epoch", "mean_lp", "mean_lq", "beta", "acc_train", "acc_test", "mean_q"];

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(w);
        w.write_record(Self::CSV_HEADER)?;
        for r in &self.epochs {
            w.write_record([
                r.epoch.to_string(),
                r.mean_lp.to_string(),
                opt(r.mean_lq),
                opt(r.beta),
                opt(r.acc_train),
                opt(r.acc_test),
                opt(r.mean_q),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Mean of the per-step `l_q` over the last `fraction` of steps.
    pub fn tail_mean_lq(&self, fraction: f64) -> Option<f64> {
        let n = self.steps.len();
        let take = ((n as f64 * fraction).ceil() as usize).clamp(1, n.max(1));
        if n == 0 {
            return None;
        }
        let tail = &self.steps[n - take..];
        Some(tail.iter().map(|s| s.mean_lq).sum::<f64>() / tail.len() as f64)
    }
}

fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    idx.shuffle(&mut rng);
    idx
}

/// Trains an approximator-only network with plain cross-entropy (or squared
/// error for regression), SGD with weight decay and the step-decay schedule.
pub fn pretrain_approximator(arch: &ArchSpec, data: &Dataset, cfg: &TrainConfig) -> Result<(Approximator, TrainLog)> {
    cfg.validate()?;
    if data.is_empty() {
        return contract("pretraining needs a nonempty dataset");
    }
    check_data(arch, data)?;
    let mut net = Approximator::new(arch.clone(), cfg.seed)?;
    let mut log = TrainLog::default();
    for epoch in 0..cfg.epochs {
        let lr = lr_at(epoch, cfg);
        let order = epoch_order(data.len(), cfg.seed, epoch);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut g = Graph::new();
            let x = g.input(data.batch_features(batch));
            let out = net.forward(&mut g, x)?;
            let loss = match arch.task {
                Task::Classification => losses::cross_entropy_graph(&mut g, out, &data.batch_labels(batch).unwrap())?,
                Task::Regression => losses::squared_error_graph(&mut g, out, &data.batch_targets(batch).unwrap())?,
            };
            loss_sum += g.value(loss).item()? * batch.len() as f64;
            net.params_mut().zero_grad();
            g.backward(loss, net.params_mut())?;
            sgd_step(net.params_mut(), lr, cfg.weight_decay);
        }
        let acc_train = match arch.task {
            Task::Classification => Some(net.accuracy(data)?),
            Task::Regression => None,
        };
        log.epochs.push(EpochRecord {
            epoch,
            mean_lp: loss_sum / data.len() as f64,
            mean_lq: None,
            beta: None,
            acc_train,
            acc_test: None,
            mean_q: None,
        });
    }
    Ok((net, log))
}

fn check_data(arch: &ArchSpec, data: &Dataset) -> Result<()> {
    if data.dim() != arch.input_dim {
        return Err(Error::Dimension {
            op: "dataset width",
            left: vec![data.dim()],
            right: vec![arch.input_dim],
        });
    }
    match (arch.task, data.num_classes()) {
        (Task::Classification, Some(k)) if k == arch.outputs() => Ok(()),
        (Task::Regression, None) => {
            let m = data.target_row(0).map_or(0, <[f64]>::len);
            if m == arch.outputs() {
                Ok(())
            } else {
                Err(Error::Dimension {
                    op: "regression targets",
                    left: vec![m],
                    right: vec![arch.outputs()],
                })
            }
        }
        (task, k) => contract(format!(
            "{task:?} network with {} outputs cannot train on data with {k:?} classes",
            arch.outputs()
        )),
    }
}

/// Joint training of the two-head network. Per batch: record
/// `mean(l_p) + β·mean(l_q)`, backpropagate into extractor and both heads,
/// take an SGD step, then update β with [`update_beta`]. The big model is
/// never updated. `test`, when given, only feeds `acc_test` in the log.
pub fn joint_train(
    mut net: TwoHeadNet,
    big: &BigModel,
    data: &Dataset,
    test: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<(TwoHeadNet, TrainLog)> {
    cfg.validate()?;
    if data.is_empty() {
        return contract("joint training needs a nonempty dataset");
    }
    match (cfg.mode, big) {
        (Mode::WhiteBox, BigModel::WhiteBox(_)) | (Mode::BlackBox, BigModel::Oracle) => {}
        (mode, _) => {
            return contract(format!(
                "{mode:?} mode does not match the big model ({})",
                if big.is_oracle() { "oracle" } else { "white-box network" }
            ))
        }
    }
    let task = net.arch().task;
    check_data(net.arch(), data)?;
    if task == Task::Regression && cfg.mode == Mode::WhiteBox {
        return contract("regression joint training supports the black-box oracle only");
    }

    // f₀ is frozen: its probabilities on the training set are fixed.
    let all: Vec<usize> = (0..data.len()).collect();
    let big_probs = match big {
        BigModel::WhiteBox(_) => Some(big.probs(data, &all)?),
        BigModel::Oracle => None,
    };

    let mut beta = cfg.beta_init;
    let mut log = TrainLog::default();
    for epoch in 0..cfg.epochs {
        let lr = lr_at(epoch, cfg);
        let order = epoch_order(data.len(), cfg.seed, epoch);
        let (mut lp_sum, mut lq_sum, mut q_sum) = (0.0, 0.0, 0.0);
        for batch in order.chunks(cfg.batch_size) {
            let mut g = Graph::new();
            let x = g.input(data.batch_features(batch));
            let vars = net.forward(&mut g, x)?;
            let terms = match task {
                Task::Classification => {
                    let labels = data.batch_labels(batch).unwrap();
                    let p0 = big_probs.as_ref().map(|p| {
                        let rows: Vec<Vec<f64>> = batch.iter().map(|&i| p.row(i).to_vec()).collect();
                        crate::autodiff::Tensor::from_rows(&rows).unwrap()
                    });
                    let big_term = p0.as_ref().map_or(BigTerm::BlackBox, BigTerm::WhiteBox);
                    losses::joint_objective(&mut g, vars.out, vars.q, &labels, big_term, beta)?
                }
                Task::Regression => {
                    let targets = data.batch_targets(batch).unwrap();
                    losses::joint_objective_regression(&mut g, vars.out, vars.q, &targets, beta)?
                }
            };
            let m = batch.len() as f64;
            let batch_lp: f64 = g.value(terms.l_p).values().iter().sum();
            let batch_lq: f64 = g.value(terms.l_q).values().iter().sum();
            lp_sum += batch_lp;
            lq_sum += batch_lq;
            q_sum += g.value(vars.q).values().iter().sum::<f64>();

            net.params_mut().zero_grad();
            g.backward(terms.total, net.params_mut())?;
            sgd_step(net.params_mut(), lr, cfg.weight_decay);

            beta = update_beta(beta, batch_lq / m, cfg.alpha, cfg.beta_bounds);
            log.steps.push(StepRecord {
                mean_lq: batch_lq / m,
                beta,
            });
        }
        let n = data.len() as f64;
        let (acc_train, acc_test) = match task {
            Task::Classification => (
                Some(net.approximator().accuracy(data)?),
                test.map(|t| net.approximator().accuracy(t)).transpose()?,
            ),
            Task::Regression => (None, None),
        };
        log.epochs.push(EpochRecord {
            epoch,
            mean_lp: lp_sum / n,
            mean_lq: Some(lq_sum / n),
            beta: Some(beta),
            acc_train,
            acc_test,
            mean_q: Some(q_sum / n),
        });
    }
    Ok((net, log))
}
