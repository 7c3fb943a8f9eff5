//! The three stage estimators: a dense funnel, chained LSTMs, and the
//! branched LSTM network with self-attention on the solar and soil-moisture
//! branches.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::layers::{
    Activation, AttentionLayer, DenseLayer, DropoutSpec, LstmLayer, Mode, StageHead, ATTENTION_HEADS,
    ATTENTION_KEY_DIM, LSTM_HIDDEN,
};
use crate::params::{Gradients, ParamStore};
use crate::rng;
use crate::tensor::Tensor;
use crate::types::{Sample, SeasonFeatures, StageDistribution, CHANNELS, LOCATIONS, STAGES, WEEKS};

pub const KLD_FLOOR: f64 = 1e-7;
pub const DENSE_WIDTH: usize = 128;
pub const DEFAULT_DROPOUT: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Dense,
    Sequential,
    Dgnn,
}

impl Arch {
    pub const ALL: [Arch; 3] = [Arch::Dense, Arch::Sequential, Arch::Dgnn];

    pub fn name(self) -> &'static str {
        match self {
            Arch::Dense => "dense",
            Arch::Sequential => "sequential",
            Arch::Dgnn => "dgnn",
        }
    }

    /// Trainable-parameter counts published alongside the reference structures.
    pub fn reference_param_count(self) -> usize {
        match self {
            Arch::Dense => 1_170_054,
            Arch::Sequential => 1_046_278,
            Arch::Dgnn => 1_018_094,
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Arch {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dense" => Ok(Arch::Dense),
            "sequential" => Ok(Arch::Sequential),
            "dgnn" => Ok(Arch::Dgnn),
            other => Err(Error::Config(format!("unknown architecture {other}"))),
        }
    }
}

/// Channel groups feeding the three DgNN branches.
pub const CANOPY_CHANNELS: std::ops::Range<usize> = 0..4;
pub const SOLAR_CHANNELS: std::ops::Range<usize> = 4..6;
pub const SOIL_MOISTURE_CHANNELS: std::ops::Range<usize> = 6..12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerInfo {
    pub name: String,
    pub kind: String,
    pub params: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub arch: Arch,
    pub weeks: usize,
    pub channels: usize,
    pub location_slots: usize,
    pub layers: Vec<LayerInfo>,
    pub param_count: usize,
}

impl ModelSpec {
    pub fn reference_param_count(&self) -> usize {
        self.arch.reference_param_count()
    }

    pub fn param_delta(&self) -> i64 {
        self.param_count as i64 - self.reference_param_count() as i64
    }

    pub fn param_report(&self) -> String {
        format!(
            "{}: {} trainable parameters (reference {}, delta {:+})",
            self.arch,
            self.param_count,
            self.reference_param_count(),
            self.param_delta()
        )
    }
}

#[derive(Clone, Debug)]
enum Net {
    Dense { hidden: Vec<DenseLayer> },
    Sequential { lstm1: LstmLayer, lstm2: LstmLayer, dense: DenseLayer },
    Dgnn {
        canopy: LstmLayer,
        solar_attention: AttentionLayer,
        solar: LstmLayer,
        soil_attention: AttentionLayer,
        soil: LstmLayer,
        dense: DenseLayer,
    },
}

/// A built estimator: architecture, parameters and layer wiring.
#[derive(Clone, Debug)]
pub struct Model {
    pub arch: Arch,
    pub seed: u64,
    pub store: ParamStore,
    pub dropout: DropoutSpec,
    net: Net,
    head: StageHead,
    spec: ModelSpec,
}

/// Batched model input. Weeks after each sample's cutoff are reset to pad values.
#[derive(Clone, Debug)]
pub struct Batch {
    pub size: usize,
    /// `[size·WEEKS × CHANNELS]`, sample-major.
    pub features: Arc<Tensor>,
    /// `[size × LOCATIONS]`.
    pub location: Arc<Tensor>,
    /// Observed weeks per sample (cutoff + 1).
    pub lengths: Vec<usize>,
    /// `[size × STAGES]` when built from samples.
    pub targets: Option<Arc<Tensor>>,
}

impl Batch {
    pub fn from_features(items: &[&SeasonFeatures]) -> Result<Self> {
        let mut feats = Vec::with_capacity(items.len() * WEEKS * CHANNELS);
        let mut loc = Vec::with_capacity(items.len() * LOCATIONS);
        let mut lengths = Vec::with_capacity(items.len());
        for f in items {
            f.validate()?;
            let padded = f.repadded();
            for w in &padded.weeks {
                feats.extend_from_slice(w);
            }
            loc.extend_from_slice(&f.location_one_hot());
            lengths.push(f.observed_len());
        }
        let n = items.len();
        if n == 0 {
            return Err(Error::Input("empty batch".into()));
        }
        Ok(Batch {
            size: n,
            features: Arc::new(Tensor::from_raw(vec![n * WEEKS, CHANNELS], feats)),
            location: Arc::new(Tensor::from_raw(vec![n, LOCATIONS], loc)),
            lengths,
            targets: None,
        })
    }

    pub fn from_samples(items: &[&Sample]) -> Result<Self> {
        let feats: Vec<&SeasonFeatures> = items.iter().map(|s| &s.features).collect();
        let mut b = Self::from_features(&feats)?;
        let t: Vec<f64> = items.iter().flat_map(|s| s.target.as_array().to_vec()).collect();
        b.targets = Some(Arc::new(Tensor::from_raw(vec![items.len(), STAGES], t)));
        Ok(b)
    }

    /// Rows `range` of this batch as a new batch.
    pub fn slice(&self, start: usize, len: usize) -> Batch {
        let f = self.features.data()[start * WEEKS * CHANNELS..(start + len) * WEEKS * CHANNELS].to_vec();
        let l = self.location.data()[start * LOCATIONS..(start + len) * LOCATIONS].to_vec();
        Batch {
            size: len,
            features: Arc::new(Tensor::from_raw(vec![len * WEEKS, CHANNELS], f)),
            location: Arc::new(Tensor::from_raw(vec![len, LOCATIONS], l)),
            lengths: self.lengths[start..start + len].to_vec(),
            targets: self.targets.as_ref().map(|t| {
                Arc::new(Tensor::from_raw(vec![len, STAGES], t.data()[start * STAGES..(start + len) * STAGES].to_vec()))
            }),
        }
    }
}

/// Named intermediate activations of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub probs: Var,
    /// Input of the 128-node dense layer.
    pub pre_dense: Var,
    /// Output of the 128-node dense layer, feeding the softmax head.
    pub pre_softmax: Var,
    /// Pre-concatenation branch outputs (DgNN only).
    pub branches: Vec<Var>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tap {
    PreDense,
    PreSoftmax,
}

impl FromStr for Tap {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pre_dense" | "pre-dense" => Ok(Tap::PreDense),
            "pre_softmax" | "pre-softmax" => Ok(Tap::PreSoftmax),
            other => Err(Error::Config(format!("unknown tap point {other} (expected pre_dense or pre_softmax)"))),
        }
    }
}

impl Model {
    pub fn build(arch: Arch, seed: u64) -> Result<Model> {
        match arch {
            Arch::Dense => build_dense(seed),
            Arch::Sequential => build_sequential(seed),
            Arch::Dgnn => build_dgnn(seed),
        }
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn with_dropout(mut self, rate: f64) -> Result<Self> {
        self.dropout = DropoutSpec::new(rate)?;
        Ok(self)
    }

    pub fn forward(&self, tape: &mut Tape, batch: &Batch, mode: Mode, rng: &mut impl Rng) -> Result<ForwardOutput> {
        self.forward_with(tape, &self.store, batch, mode, rng)
    }

    /// Forward pass reading parameters from `store` (which must share this model's layout).
    pub fn forward_with(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        batch: &Batch,
        mode: Mode,
        rng: &mut impl Rng,
    ) -> Result<ForwardOutput> {
        let n = batch.size;
        let x = tape.constant_shared(Arc::clone(&batch.features));
        let loc = tape.constant_shared(Arc::clone(&batch.location));
        let lengths = Some(batch.lengths.as_slice());
        let drop = self.dropout;
        let (pre_dense, pre_softmax, branches) = match &self.net {
            Net::Dense { hidden } => {
                let flat = tape.reshape(x, vec![n, WEEKS * CHANNELS])?;
                let mut h = tape.concat_cols(&[flat, loc])?;
                let last = hidden.len() - 1;
                let mut pre_dense = h;
                for (i, layer) in hidden.iter().enumerate() {
                    if i == last {
                        pre_dense = h;
                    }
                    h = layer.forward(tape, store, h)?;
                    if i < last {
                        h = drop.apply(tape, h, mode, rng)?;
                    }
                }
                (pre_dense, h, vec![])
            }
            Net::Sequential { lstm1, lstm2, dense } => {
                let s1 = lstm1.forward(tape, store, x, n, WEEKS, lengths, true)?;
                let s1 = drop.apply(tape, s1, mode, rng)?;
                let h2 = lstm2.forward(tape, store, s1, n, WEEKS, lengths, false)?;
                let h2 = drop.apply(tape, h2, mode, rng)?;
                let cat = tape.concat_cols(&[h2, loc])?;
                let d = dense.forward(tape, store, cat)?;
                (cat, d, vec![])
            }
            Net::Dgnn { canopy, solar_attention, solar, soil_attention, soil, dense } => {
                let xa = tape.slice_cols(x, CANOPY_CHANNELS.start, CANOPY_CHANNELS.len())?;
                let xb = tape.slice_cols(x, SOLAR_CHANNELS.start, SOLAR_CHANNELS.len())?;
                let xc = tape.slice_cols(x, SOIL_MOISTURE_CHANNELS.start, SOIL_MOISTURE_CHANNELS.len())?;
                let ha = canopy.forward(tape, store, xa, n, WEEKS, lengths, false)?;
                let ab = solar_attention.forward(tape, store, xb, n, WEEKS, lengths)?;
                let hb = solar.forward(tape, store, ab, n, WEEKS, lengths, false)?;
                let ac = soil_attention.forward(tape, store, xc, n, WEEKS, lengths)?;
                let hc = soil.forward(tape, store, ac, n, WEEKS, lengths, false)?;
                let branches = vec![ha, hb, hc];
                let da = drop.apply(tape, ha, mode, rng)?;
                let db = drop.apply(tape, hb, mode, rng)?;
                let dc = drop.apply(tape, hc, mode, rng)?;
                let cat = tape.concat_cols(&[da, db, dc, loc])?;
                let d = dense.forward(tape, store, cat)?;
                (cat, d, branches)
            }
        };
        let h = drop.apply(tape, pre_softmax, mode, rng)?;
        let probs = self.head.forward(tape, store, h)?;
        Ok(ForwardOutput { probs, pre_dense, pre_softmax, branches })
    }

    /// Eval-mode stage distributions, one row per sample.
    pub fn predict(&self, batch: &Batch) -> Result<Tensor> {
        let mut tape = Tape::new();
        let mut rng = rng::stream(self.seed, "predict", &[]);
        let out = self.forward(&mut tape, batch, Mode::Eval, &mut rng)?;
        Ok(tape.value(out.probs).clone())
    }

    pub fn predict_distributions(&self, batch: &Batch) -> Result<Vec<StageDistribution>> {
        let p = self.predict(batch)?;
        (0..p.rows()).map(|i| StageDistribution::normalized(p.row(i).try_into().unwrap())).collect()
    }

    /// Eval-mode activations at a tap point, `[batch × width]`.
    pub fn activations(&self, batch: &Batch, tap: Tap) -> Result<Tensor> {
        let mut tape = Tape::new();
        let mut rng = rng::stream(self.seed, "predict", &[]);
        let out = self.forward(&mut tape, batch, Mode::Eval, &mut rng)?;
        let v = match tap {
            Tap::PreDense => out.pre_dense,
            Tap::PreSoftmax => out.pre_softmax,
        };
        Ok(tape.value(v).clone())
    }

    /// Mean KL loss over the batch and its parameter gradients.
    ///
    /// The batch is split into fixed chunks of `chunk` rows; each chunk runs on
    /// its own tape (in parallel when threads are available) and the chunk
    /// gradients are summed in chunk order, so results do not depend on the
    /// thread count.
    pub fn loss_and_grads(&self, batch: &Batch, mode: Mode, seed: u64, chunk: usize) -> Result<(f64, Gradients)> {
        let targets = batch
            .targets
            .as_ref()
            .ok_or_else(|| Error::Contract("loss needs targets".into()))?;
        let chunk = chunk.max(1);
        let starts: Vec<usize> = (0..batch.size).step_by(chunk).collect();
        let n_params = self.store.len();
        let run = |ci: usize, start: usize| -> Result<(f64, Gradients)> {
            let len = chunk.min(batch.size - start);
            let sub = if len == batch.size { batch.clone() } else { batch.slice(start, len) };
            let t = sub.targets.clone().unwrap_or_else(|| Arc::clone(targets));
            let mut tape = Tape::new();
            let mut rng = rng::stream(seed, "dropout", &[ci as u64]);
            let out = self.forward(&mut tape, &sub, mode, &mut rng)?;
            let loss = tape.kl_div(t, out.probs, KLD_FLOOR)?;
            let w = len as f64 / batch.size as f64;
            let scaled = tape.scale(loss, w);
            tape.backward(scaled)?;
            Ok((tape.value(scaled).item(), tape.gradients(n_params)))
        };
        let parts: Vec<Result<(f64, Gradients)>> = if starts.len() > 1 {
            starts.par_iter().enumerate().map(|(ci, &s)| run(ci, s)).collect()
        } else {
            vec![run(0, 0)]
        };
        let mut total = 0.0;
        let mut grads = Gradients::new(n_params);
        for p in parts {
            let (l, g) = p?;
            total += l;
            grads.merge(&g);
        }
        Ok((total, grads))
    }

    /// Eval-mode mean KL loss.
    pub fn loss(&self, batch: &Batch) -> Result<f64> {
        let targets = batch
            .targets
            .as_ref()
            .ok_or_else(|| Error::Contract("loss needs targets".into()))?;
        let probs = self.predict(batch)?;
        let mut total = 0.0;
        for i in 0..batch.size {
            total += crate::autodiff::kl_row(targets.row(i), probs.row(i), KLD_FLOOR);
        }
        Ok(total / batch.size as f64)
    }
}

fn finish(arch: Arch, seed: u64, store: ParamStore, net: Net, head: StageHead, layers: Vec<LayerInfo>) -> Result<Model> {
    let param_count = store.num_scalars();
    debug_assert_eq!(param_count, layers.iter().map(|l| l.params).sum::<usize>());
    let spec = ModelSpec {
        arch,
        weeks: WEEKS,
        channels: CHANNELS,
        location_slots: LOCATIONS,
        layers,
        param_count,
    };
    Ok(Model { arch, seed, store, dropout: DropoutSpec::new(DEFAULT_DROPOUT)?, net, head, spec })
}

fn info(name: &str, kind: &str, params: usize) -> LayerInfo {
    LayerInfo { name: name.into(), kind: kind.into(), params }
}

/// Flattened weeks plus location → 1024 → 512 → 256 → 128 → stage head.
pub fn build_dense(seed: u64) -> Result<Model> {
    let mut rng = rng::stream(seed, "init", &[Arch::Dense as u64]);
    let mut store = ParamStore::new();
    let widths = [WEEKS * CHANNELS + LOCATIONS, 1024, 512, 256, DENSE_WIDTH];
    let mut hidden = Vec::new();
    let mut layers = Vec::new();
    for i in 0..widths.len() - 1 {
        let name = format!("dense{}", widths[i + 1]);
        let l = DenseLayer::new(&mut store, &name, widths[i], widths[i + 1], Activation::Relu, &mut rng)?;
        layers.push(info(&name, "dense/relu", l.num_params()));
        hidden.push(l);
    }
    let head = StageHead::new(&mut store, "head", DENSE_WIDTH, &mut rng)?;
    layers.push(info("head", "dense/softmax", head.dense.num_params()));
    finish(Arch::Dense, seed, store, Net::Dense { hidden }, head, layers)
}

/// All 12 channels through two chained LSTM(64); final state plus location → 128 → stage head.
pub fn build_sequential(seed: u64) -> Result<Model> {
    let mut rng = rng::stream(seed, "init", &[Arch::Sequential as u64]);
    let mut store = ParamStore::new();
    let lstm1 = LstmLayer::new(&mut store, "lstm1", CHANNELS, LSTM_HIDDEN, &mut rng)?;
    let lstm2 = LstmLayer::new(&mut store, "lstm2", LSTM_HIDDEN, LSTM_HIDDEN, &mut rng)?;
    let dense = DenseLayer::new(&mut store, "dense128", LSTM_HIDDEN + LOCATIONS, DENSE_WIDTH, Activation::Relu, &mut rng)?;
    let head = StageHead::new(&mut store, "head", DENSE_WIDTH, &mut rng)?;
    let layers = vec![
        info("lstm1", "lstm(64, sequence)", lstm1.num_params()),
        info("lstm2", "lstm(64)", lstm2.num_params()),
        info("dense128", "dense/relu", dense.num_params()),
        info("head", "dense/softmax", head.dense.num_params()),
    ];
    finish(Arch::Sequential, seed, store, Net::Sequential { lstm1, lstm2, dense }, head, layers)
}

/// Canopy/thermal, solar and soil-moisture branches; attention precedes the
/// LSTM on the solar and soil-moisture branches.
pub fn build_dgnn(seed: u64) -> Result<Model> {
    let mut rng = rng::stream(seed, "init", &[Arch::Dgnn as u64]);
    let mut store = ParamStore::new();
    let canopy = LstmLayer::new(&mut store, "canopy.lstm", CANOPY_CHANNELS.len(), LSTM_HIDDEN, &mut rng)?;
    let solar_attention = AttentionLayer::new(
        &mut store,
        "solar.attention",
        SOLAR_CHANNELS.len(),
        ATTENTION_HEADS,
        ATTENTION_KEY_DIM,
        &mut rng,
    )?;
    let solar = LstmLayer::new(&mut store, "solar.lstm", SOLAR_CHANNELS.len(), LSTM_HIDDEN, &mut rng)?;
    let soil_attention = AttentionLayer::new(
        &mut store,
        "soil.attention",
        SOIL_MOISTURE_CHANNELS.len(),
        ATTENTION_HEADS,
        ATTENTION_KEY_DIM,
        &mut rng,
    )?;
    let soil = LstmLayer::new(&mut store, "soil.lstm", SOIL_MOISTURE_CHANNELS.len(), LSTM_HIDDEN, &mut rng)?;
    let dense = DenseLayer::new(
        &mut store,
        "dense128",
        3 * LSTM_HIDDEN + LOCATIONS,
        DENSE_WIDTH,
        Activation::Relu,
        &mut rng,
    )?;
    let head = StageHead::new(&mut store, "head", DENSE_WIDTH, &mut rng)?;
    let layers = vec![
        info("canopy.lstm", "lstm(64)", canopy.num_params()),
        info("solar.attention", "attention(2×40)", solar_attention.num_params()),
        info("solar.lstm", "lstm(64)", solar.num_params()),
        info("soil.attention", "attention(2×40)", soil_attention.num_params()),
        info("soil.lstm", "lstm(64)", soil.num_params()),
        info("dense128", "dense/relu", dense.num_params()),
        info("head", "dense/softmax", head.dense.num_params()),
    ];
    let net = Net::Dgnn { canopy, solar_attention, solar, soil_attention, soil, dense };
    finish(Arch::Dgnn, seed, store, net, head, layers)
}
