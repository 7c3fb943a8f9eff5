//! Optimiser, early stopping, the training loop and cross-validation.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::architectures::{Arch, Batch, Model};
use crate::error::{Error, Result};
use crate::layers::Mode;
use crate::metrics::{evaluate, MetricsReport, StageEstimator};
use crate::params::{Gradients, ParamStore};
use crate::preprocess::Dataset;
use crate::rng;
use crate::tensor::Tensor;
use crate::types::{Sample, Stage, StageDistribution, STAGES};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub patience: usize,
    pub learning_rate: f64,
    pub dropout: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Rows per tape when splitting a batch for data-parallel gradients.
    pub grad_chunk: usize,
    /// Year whose loss drives early stopping; drawn from the training years when unset.
    pub monitor_year: Option<i32>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_epochs: 300,
            patience: 30,
            learning_rate: 1e-5,
            dropout: 0.2,
            batch_size: 32,
            seed: 42,
            grad_chunk: 32,
            monitor_year: None,
        }
    }
}

impl TrainConfig {
    /// Settings that converge within minutes on one CPU core.
    pub fn desk() -> Self {
        TrainConfig { max_epochs: 40, patience: 8, learning_rate: 2e-3, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_epochs == 0 || self.patience == 0 || self.patience > self.max_epochs {
            return Err(Error::Config("need 1 <= patience <= max_epochs".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must lie in [0, 1)".into()));
        }
        if self.batch_size == 0 || self.grad_chunk == 0 {
            return Err(Error::Config("batch size and gradient chunk must be positive".into()));
        }
        Ok(())
    }
}

/// Adam with bias-corrected moments.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        let zeros: Vec<Vec<f64>> = store.ids().map(|id| vec![0.0; store.value(id).numel()]).collect();
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: zeros.clone(), v: zeros }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update. Non-finite gradients reject the whole step and leave state untouched.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) -> Result<()> {
        for id in store.ids() {
            if let Some(g) = grads.get(id) {
                if g.shape() != store.value(id).shape() {
                    return Err(Error::shape("adam_step", format!("gradient for {} has shape {:?}", store.name(id), g.shape())));
                }
                if !g.all_finite() {
                    return Err(Error::NonFinite(format!("gradient of {}", store.name(id))));
                }
            }
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let k = id.index();
            let g = grads.get(id);
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            let p = store.value_mut(id).data_mut();
            for i in 0..p.len() {
                let gi = g.map_or(0.0, |g| g.data()[i]);
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                p[i] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Waiting,
    Stop,
}

/// Patience-based early stopping on a monitored loss.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    pub patience: usize,
    best: f64,
    best_epoch: usize,
    wait: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping { patience, best: f64::INFINITY, best_epoch: 0, wait: 0 }
    }

    pub fn best(&self) -> (usize, f64) {
        (self.best_epoch, self.best)
    }

    pub fn update(&mut self, epoch: usize, loss: f64) -> StopDecision {
        if loss < self.best {
            self.best = loss;
            self.best_epoch = epoch;
            self.wait = 0;
            return StopDecision::Improved;
        }
        self.wait += 1;
        if self.wait >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Waiting
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub monitor_loss: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    EarlyStopped,
    MaxEpochs,
    Diverged,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose weights were restored (1-based; 0 means the initial weights).
    pub best_epoch: usize,
    pub best_monitor_loss: f64,
    pub outcome: Outcome,
    pub monitor_year: Option<i32>,
}

impl History {
    pub fn last_epoch(&self) -> usize {
        self.epochs.last().map_or(0, |e| e.epoch)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,monitor_loss\n");
        for e in &self.epochs {
            s.push_str(&format!("{},{},{}\n", e.epoch, e.train_loss, e.monitor_loss));
        }
        s
    }
}

/// Batches of similar sequence length, in random order.
fn epoch_batches(items: &[&Sample], batch_size: usize, r: &mut rng::Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..items.len()).collect();
    idx.shuffle(r);
    idx.sort_by_key(|&i| items[i].features.cutoff_week);
    let mut batches: Vec<Vec<usize>> = idx.chunks(batch_size).map(|c| c.to_vec()).collect();
    batches.shuffle(r);
    batches
}

/// Train with an arbitrary monitor. `monitor(model, epoch)` is evaluated after
/// every epoch; the best-monitored weights are restored at the end.
pub fn train_with_monitor(
    model: &mut Model,
    train: &[&Sample],
    cfg: &TrainConfig,
    mut monitor: impl FnMut(&Model, usize) -> Result<f64>,
) -> Result<History> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Input("no training items".into()));
    }
    model.dropout = crate::layers::DropoutSpec::new(cfg.dropout)?;
    let mut opt = Adam::new(&model.store, cfg.learning_rate);
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best = model.store.snapshot();
    let mut r = rng::stream(cfg.seed, "epochs", &[]);
    let mut epochs = Vec::new();
    let mut outcome = Outcome::MaxEpochs;
    for epoch in 1..=cfg.max_epochs {
        let mut total = 0.0;
        let mut count = 0usize;
        let mut diverged = false;
        for b in epoch_batches(train, cfg.batch_size, &mut r) {
            let items: Vec<&Sample> = b.iter().map(|&i| train[i]).collect();
            let batch = Batch::from_samples(&items)?;
            let (loss, grads) = model.loss_and_grads(&batch, Mode::Train, r.random(), cfg.grad_chunk)?;
            if !loss.is_finite() {
                diverged = true;
                break;
            }
            match opt.step(&mut model.store, &grads) {
                Ok(()) => {}
                Err(Error::NonFinite(_)) => {
                    diverged = true;
                    break;
                }
                Err(e) => return Err(e),
            }
            total += loss * items.len() as f64;
            count += items.len();
        }
        if diverged {
            outcome = Outcome::Diverged;
            epochs.push(EpochRecord { epoch, train_loss: f64::NAN, monitor_loss: f64::NAN });
            break;
        }
        let m = monitor(model, epoch)?;
        epochs.push(EpochRecord { epoch, train_loss: total / count as f64, monitor_loss: m });
        if !m.is_finite() {
            outcome = Outcome::Diverged;
            break;
        }
        match stopper.update(epoch, m) {
            StopDecision::Improved => best = model.store.snapshot(),
            StopDecision::Waiting => {}
            StopDecision::Stop => {
                outcome = Outcome::EarlyStopped;
                break;
            }
        }
    }
    model.store.restore(&best)?;
    let (best_epoch, best_monitor_loss) = stopper.best();
    Ok(History { epochs, best_epoch, best_monitor_loss, outcome, monitor_year: None })
}

/// Train on `years` of the dataset, monitoring loss on one of them (held out from updates).
pub fn train(model: &mut Model, ds: &Dataset, years: &[i32], cfg: &TrainConfig) -> Result<History> {
    let monitor_year = match cfg.monitor_year {
        Some(y) => y,
        None => pick_monitor_year(years, cfg.seed, 0)?,
    };
    if !years.contains(&monitor_year) {
        return Err(Error::Config(format!("monitor year {monitor_year} is not a training year")));
    }
    let train_items: Vec<&Sample> = ds.samples.iter().filter(|s| years.contains(&s.year) && s.year != monitor_year).collect();
    let monitor_items: Vec<&Sample> = ds.samples.iter().filter(|s| s.year == monitor_year).collect();
    if monitor_items.is_empty() {
        return Err(Error::Input(format!("no items for monitor year {monitor_year}")));
    }
    let monitor_batch = Batch::from_samples(&monitor_items)?;
    let mut h = train_with_monitor(model, &train_items, cfg, |m, _| m.loss(&monitor_batch))?;
    h.monitor_year = Some(monitor_year);
    Ok(h)
}

pub fn pick_monitor_year(years: &[i32], seed: u64, fold: usize) -> Result<i32> {
    if years.len() < 2 {
        return Err(Error::Config("need at least 2 training years to hold one out for monitoring".into()));
    }
    let mut r = rng::stream(seed, "monitor-year", &[fold as u64]);
    Ok(years[r.random_range(0..years.len())])
}

impl StageEstimator for Model {
    fn label(&self) -> String {
        self.arch.name().into()
    }

    fn estimate(&self, items: &[&Sample]) -> Result<Vec<StageDistribution>> {
        let mut out = Vec::with_capacity(items.len());
        for chunk in items.chunks(512) {
            let b = Batch::from_samples(chunk)?;
            out.extend(self.predict_distributions(&b)?);
        }
        Ok(out)
    }
}

impl StageEstimator for crate::hmm::HmmEnsemble {
    fn label(&self) -> String {
        "hmm".into()
    }

    fn estimate(&self, items: &[&Sample]) -> Result<Vec<StageDistribution>> {
        items.par_iter().map(|s| self.estimate_sample(s)).collect()
    }
}

/// Year folds: shuffled once, then dealt round-robin.
pub fn make_folds(years: &[i32], k: usize, seed: u64) -> Result<Vec<Vec<i32>>> {
    if k < 2 || years.len() < k {
        return Err(Error::Config(format!("cannot split {} years into {k} folds", years.len())));
    }
    let mut y = years.to_vec();
    y.shuffle(&mut rng::stream(seed, "folds", &[]));
    let mut folds = vec![Vec::new(); k];
    for (i, year) in y.into_iter().enumerate() {
        folds[i % k].push(year);
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub test_years: Vec<i32>,
    pub train_years: Vec<i32>,
    pub history: Option<History>,
    pub metrics: MetricsReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossValReport {
    pub estimator: String,
    pub folds: Vec<FoldReport>,
    /// Per stage: fold-mean NSE values (one per fold where defined), their mean and std.
    pub stage_nse: Vec<(String, Vec<f64>, f64, f64)>,
}

/// Fit-and-evaluate over `k` year folds. `fit` receives (fold, training years) and
/// returns an estimator plus optional training history.
pub fn cross_validate_with<F>(ds: &Dataset, years: &[i32], k: usize, seed: u64, fit: F) -> Result<CrossValReport>
where
    F: Fn(usize, &[i32]) -> Result<(Box<dyn StageEstimator>, Option<History>)> + Sync,
{
    let folds = make_folds(years, k, seed)?;
    let reports = folds
        .par_iter()
        .enumerate()
        .map(|(i, test)| {
            let train: Vec<i32> = years.iter().filter(|y| !test.contains(y)).copied().collect();
            let (est, history) = fit(i, &train)?;
            let metrics = evaluate(est.as_ref(), ds, test)?;
            Ok(FoldReport { fold: i, test_years: test.clone(), train_years: train, history, metrics })
        })
        .collect::<Result<Vec<_>>>()?;
    let estimator = reports.first().map(|r| r.metrics.estimator.clone()).unwrap_or_default();
    let stage_nse = Stage::ALL
        .iter()
        .map(|st| {
            let v: Vec<f64> = reports.iter().filter_map(|r| r.metrics.stage_nse(*st)).collect();
            let n = v.len().max(1) as f64;
            let m = v.iter().sum::<f64>() / n;
            let sd = (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n).sqrt();
            (st.name().to_string(), v, m, sd)
        })
        .collect();
    Ok(CrossValReport { estimator, folds: reports, stage_nse })
}

/// Five-fold cross-validation of a neural architecture on `years`.
pub fn cross_validate(arch: Arch, ds: &Dataset, years: &[i32], cfg: &TrainConfig, k: usize) -> Result<CrossValReport> {
    cross_validate_with(ds, years, k, cfg.seed, |fold, train_years| {
        let mut model = Model::build(arch, cfg.seed.wrapping_add(fold as u64))?;
        let fold_cfg = TrainConfig {
            monitor_year: Some(pick_monitor_year(train_years, cfg.seed, fold)?),
            seed: cfg.seed.wrapping_add(fold as u64),
            ..cfg.clone()
        };
        let h = train(&mut model, ds, train_years, &fold_cfg)?;
        Ok((Box::new(model) as Box<dyn StageEstimator>, Some(h)))
    })
}

/// Mean and standard deviation per stage, for reporting.
pub fn summarize_stages(values: &[[f64; STAGES]]) -> ([f64; STAGES], [f64; STAGES]) {
    let n = values.len().max(1) as f64;
    let mean: [f64; STAGES] = std::array::from_fn(|s| values.iter().map(|v| v[s]).sum::<f64>() / n);
    let std = std::array::from_fn(|s| (values.iter().map(|v| (v[s] - mean[s]).powi(2)).sum::<f64>() / n).sqrt());
    (mean, std)
}

/// Zero gradient buffer matching a store; used where a step must be a no-op.
pub fn zero_gradients(store: &ParamStore) -> Gradients {
    let mut g = Gradients::new(store.len());
    for id in store.ids() {
        g.add(id, &Tensor::zeros(store.value(id).shape()));
    }
    g
}
