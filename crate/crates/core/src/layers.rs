//! Layer vocabulary: dense, LSTM, multi-head self-attention, dropout and the
//! six-way stage head.
//!
//! Sequence batches are laid out sample-major as `[batch·steps × width]`:
//! row `b·steps + t` holds step `t` of sample `b`. Padding is expressed with
//! per-sample valid lengths; steps at or beyond a sample's length never
//! influence its outputs.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{glorot_uniform, orthogonal, ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Linear,
    Relu,
    Sigmoid,
    Tanh,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Debug)]
pub struct DenseLayer {
    pub weights: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let weights = store.add(format!("{name}.weights"), glorot_uniform(in_dim, out_dim, rng))?;
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[out_dim]))?;
        Ok(DenseLayer { weights, bias, in_dim, out_dim, activation })
    }

    /// `activation(x·W + b)` for `x: [batch × in]`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        if tape.value(x).cols() != self.in_dim {
            return Err(Error::shape(
                "dense_forward",
                format!("input width {} != {}", tape.value(x).cols(), self.in_dim),
            ));
        }
        let w = tape.param(store, self.weights);
        let b = tape.param(store, self.bias);
        let xw = tape.matmul(x, w)?;
        let z = tape.add(xw, b)?;
        Ok(match self.activation {
            Activation::Linear => z,
            Activation::Relu => tape.relu(z),
            Activation::Sigmoid => tape.sigmoid(z),
            Activation::Tanh => tape.tanh(z),
        })
    }

    pub fn num_params(&self) -> usize {
        self.in_dim * self.out_dim + self.out_dim
    }
}

/// LSTM with the four gates fused column-wise in the order input, forget,
/// candidate, output: `W: [in × 4H]`, `U: [H × 4H]`, `b: [4H]`.
#[derive(Clone, Debug)]
pub struct LstmLayer {
    pub input_weights: ParamId,
    pub recurrent_weights: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub hidden: usize,
}

pub const LSTM_HIDDEN: usize = 64;

impl LstmLayer {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let input_weights =
            store.add(format!("{name}.input_weights"), glorot_uniform(in_dim, 4 * hidden, rng))?;
        // one orthogonal block per gate
        let mut rec = Tensor::zeros(&[hidden, 4 * hidden]);
        for g in 0..4 {
            let q = orthogonal(hidden, hidden, rng);
            for i in 0..hidden {
                for j in 0..hidden {
                    rec.data_mut()[i * 4 * hidden + g * hidden + j] = q.at(i, j);
                }
            }
        }
        let recurrent_weights = store.add(format!("{name}.recurrent_weights"), rec)?;
        let mut b = Tensor::zeros(&[4 * hidden]);
        b.data_mut()[hidden..2 * hidden].fill(1.0);
        let bias = store.add(format!("{name}.bias"), b)?;
        Ok(LstmLayer { input_weights, recurrent_weights, bias, in_dim, hidden })
    }

    pub fn num_params(&self) -> usize {
        4 * self.hidden * (self.in_dim + self.hidden + 1)
    }

    /// Run the recurrence over `seq: [batch·steps × in]`.
    ///
    /// With `lengths`, sample `b` only advances for `t < lengths[b]`; afterwards
    /// its state is carried unchanged. Returns `[batch·steps × H]` when
    /// `return_sequence`, otherwise the final state `[batch × H]`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        seq: Var,
        batch: usize,
        steps: usize,
        lengths: Option<&[usize]>,
        return_sequence: bool,
    ) -> Result<Var> {
        if steps == 0 || batch == 0 {
            return Err(Error::Input("lstm_forward: empty sequence".into()));
        }
        let (rows, cols) = tape.value(seq).dims2();
        if rows != batch * steps || cols != self.in_dim {
            return Err(Error::shape(
                "lstm_forward",
                format!("input [{rows}×{cols}] for batch {batch}, steps {steps}, in {}", self.in_dim),
            ));
        }
        if let Some(l) = lengths {
            if l.len() != batch || l.iter().any(|&n| n == 0 || n > steps) {
                return Err(Error::Input("lstm_forward: lengths must lie in 1..=steps".into()));
            }
        }
        let h_dim = self.hidden;
        let w = tape.param(store, self.input_weights);
        let u = tape.param(store, self.recurrent_weights);
        let b = tape.param(store, self.bias);
        let xw = tape.matmul(seq, w)?;
        let xw = tape.add(xw, b)?;

        let active_steps = lengths.map_or(steps, |l| *l.iter().max().unwrap());
        let mut h: Option<Var> = None;
        let mut c: Option<Var> = None;
        let mut outputs = Vec::with_capacity(steps);
        for t in 0..active_steps {
            let rows = Arc::new((0..batch).map(|bi| bi * steps + t).collect::<Vec<_>>());
            let mut z = tape.gather_rows(xw, rows)?;
            if let Some(hp) = h {
                let hu = tape.matmul(hp, u)?;
                z = tape.add(z, hu)?;
            }
            let zi = tape.slice_cols(z, 0, h_dim)?;
            let zf = tape.slice_cols(z, h_dim, h_dim)?;
            let zg = tape.slice_cols(z, 2 * h_dim, h_dim)?;
            let zo = tape.slice_cols(z, 3 * h_dim, h_dim)?;
            let i_g = tape.sigmoid(zi);
            let o_g = tape.sigmoid(zo);
            let g_g = tape.tanh(zg);
            let ig = tape.mul(i_g, g_g)?;
            let c_new = match c {
                Some(cp) => {
                    let f_g = tape.sigmoid(zf);
                    let fc = tape.mul(f_g, cp)?;
                    tape.add(fc, ig)?
                }
                None => ig,
            };
            let tc = tape.tanh(c_new);
            let h_new = tape.mul(o_g, tc)?;

            let keep: Option<Vec<f64>> = lengths.and_then(|l| {
                let m: Vec<f64> = l.iter().map(|&n| if t < n { 1.0 } else { 0.0 }).collect();
                m.iter().any(|&v| v == 0.0).then_some(m)
            });
            match (keep, h, c) {
                (Some(m), Some(hp), Some(cp)) => {
                    let inv: Vec<f64> = m.iter().map(|v| 1.0 - v).collect();
                    let mv = tape.constant(Tensor::from_raw(vec![batch, 1], m));
                    let iv = tape.constant(Tensor::from_raw(vec![batch, 1], inv));
                    h = Some(blend(tape, mv, iv, h_new, hp)?);
                    c = Some(blend(tape, mv, iv, c_new, cp)?);
                }
                _ => {
                    h = Some(h_new);
                    c = Some(c_new);
                }
            }
            outputs.push(h.unwrap());
        }
        let last = h.unwrap();
        if !return_sequence {
            return Ok(last);
        }
        while outputs.len() < steps {
            outputs.push(last);
        }
        let time_major = tape.concat_rows(&outputs)?;
        let perm = Arc::new(
            (0..batch * steps)
                .map(|r| {
                    let (bi, t) = (r / steps, r % steps);
                    t * batch + bi
                })
                .collect::<Vec<_>>(),
        );
        tape.gather_rows(time_major, perm)
    }
}

/// `m·a + (1−m)·b` with constant column masks; exact when `m ∈ {0, 1}`.
fn blend(tape: &mut Tape, m: Var, inv: Var, a: Var, b: Var) -> Result<Var> {
    let ma = tape.mul(m, a)?;
    let mb = tape.mul(inv, b)?;
    tape.add(ma, mb)
}

/// Multi-head scaled dot-product self-attention (no positional encoding).
#[derive(Clone, Debug)]
pub struct AttentionLayer {
    pub query: DenseLayer,
    pub key: DenseLayer,
    pub value: DenseLayer,
    pub output: DenseLayer,
    pub heads: usize,
    pub key_dim: usize,
    pub model_dim: usize,
}

pub const ATTENTION_HEADS: usize = 2;
pub const ATTENTION_KEY_DIM: usize = 40;

pub struct AttentionTrace {
    pub output: Var,
    /// One `[steps × steps]` weight matrix per (sample, head), sample-major.
    pub weights: Vec<Var>,
}

impl AttentionLayer {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        model_dim: usize,
        heads: usize,
        key_dim: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if heads == 0 || key_dim == 0 {
            return Err(Error::Config("attention needs at least one head and key dimension ≥ 1".into()));
        }
        let proj = heads * key_dim;
        let lin = Activation::Linear;
        Ok(AttentionLayer {
            query: DenseLayer::new(store, &format!("{name}.query"), model_dim, proj, lin, rng)?,
            key: DenseLayer::new(store, &format!("{name}.key"), model_dim, proj, lin, rng)?,
            value: DenseLayer::new(store, &format!("{name}.value"), model_dim, proj, lin, rng)?,
            output: DenseLayer::new(store, &format!("{name}.output"), proj, model_dim, lin, rng)?,
            heads,
            key_dim,
            model_dim,
        })
    }

    pub fn num_params(&self) -> usize {
        self.query.num_params() + self.key.num_params() + self.value.num_params() + self.output.num_params()
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        seq: Var,
        batch: usize,
        steps: usize,
        lengths: Option<&[usize]>,
    ) -> Result<Var> {
        Ok(self.forward_traced(tape, store, seq, batch, steps, lengths)?.output)
    }

    /// Forward pass that also returns the attention weights. Keys at or beyond a
    /// sample's valid length receive weight exactly 0.
    pub fn forward_traced(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        seq: Var,
        batch: usize,
        steps: usize,
        lengths: Option<&[usize]>,
    ) -> Result<AttentionTrace> {
        if steps == 0 || tape.value(seq).rows() != batch * steps {
            return Err(Error::shape("attention_forward", "sequence rows must equal batch·steps ≥ 1"));
        }
        let q = self.query.forward(tape, store, seq)?;
        let k = self.key.forward(tape, store, seq)?;
        let v = self.value.forward(tape, store, seq)?;
        let scale = 1.0 / (self.key_dim as f64).sqrt();
        let mut per_sample = Vec::with_capacity(batch);
        let mut weights = Vec::with_capacity(batch * self.heads);
        for b in 0..batch {
            let keep: Vec<bool> = match lengths {
                Some(l) => (0..steps).map(|j| j < l[b]).collect(),
                None => vec![true; steps],
            };
            let qb = tape.slice_rows(q, b * steps, steps)?;
            let kb = tape.slice_rows(k, b * steps, steps)?;
            let vb = tape.slice_rows(v, b * steps, steps)?;
            let mut heads = Vec::with_capacity(self.heads);
            for h in 0..self.heads {
                let off = h * self.key_dim;
                let qh = tape.slice_cols(qb, off, self.key_dim)?;
                let kh = tape.slice_cols(kb, off, self.key_dim)?;
                let vh = tape.slice_cols(vb, off, self.key_dim)?;
                let kt = tape.transpose(kh);
                let scores = tape.matmul(qh, kt)?;
                let scores = tape.scale(scores, scale);
                let w = tape.masked_softmax(scores, &keep)?;
                weights.push(w);
                heads.push(tape.matmul(w, vh)?);
            }
            per_sample.push(if heads.len() == 1 { heads[0] } else { tape.concat_cols(&heads)? });
        }
        let merged = tape.concat_rows(&per_sample)?;
        let output = self.output.forward(tape, store, merged)?;
        Ok(AttentionTrace { output, weights })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DropoutSpec {
    pub rate: f64,
}

impl DropoutSpec {
    pub fn new(rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
        }
        Ok(DropoutSpec { rate })
    }

    /// Inverted dropout: in training mode each unit is zeroed with probability
    /// `rate` and survivors are scaled by `1/(1−rate)`. Identity in eval mode.
    pub fn apply(&self, tape: &mut Tape, x: Var, mode: Mode, rng: &mut impl Rng) -> Result<Var> {
        if mode == Mode::Eval || self.rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - self.rate);
        let shape = tape.value(x).shape().to_vec();
        let n = tape.value(x).numel();
        let mask: Vec<f64> = (0..n)
            .map(|_| if rng.random::<f64>() < self.rate { 0.0 } else { keep })
            .collect();
        let m = tape.constant(Tensor::from_raw(shape, mask));
        tape.mul(x, m)
    }
}

pub const STAGE_COUNT: usize = 6;

/// Dense `128 → 6` followed by one softmax over the six stages.
#[derive(Clone, Debug)]
pub struct StageHead {
    pub dense: DenseLayer,
}

impl StageHead {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(StageHead { dense: DenseLayer::new(store, name, in_dim, STAGE_COUNT, Activation::Linear, rng)? })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let logits = self.dense.forward(tape, store, x)?;
        Ok(tape.softmax(logits))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(11)
    }

    #[test]
    fn dense_zero_and_identity() {
        let mut store = ParamStore::new();
        let layer = DenseLayer::new(&mut store, "d", 2, 2, Activation::Linear, &mut rng()).unwrap();
        store.set("d.weights", Tensor::zeros(&[2, 2])).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::matrix(1, 2, vec![3.0, -4.0]).unwrap());
        let y = layer.forward(&mut tape, &store, x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 0.0]);

        store.set("d.weights", Tensor::identity(2)).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::matrix(1, 2, vec![3.0, -4.0]).unwrap());
        let y = layer.forward(&mut tape, &store, x).unwrap();
        assert_eq!(tape.value(y).data(), &[3.0, -4.0]);
    }

    #[test]
    fn dense_sigmoid_hand_case() {
        // W = [[1,2],[0,-1]], b = [0.5,-0.5], x = [1, 2]
        // z = [1·1+2·0+0.5, 1·2+2·(−1)−0.5] = [1.5, −0.5]
        let mut store = ParamStore::new();
        let layer = DenseLayer::new(&mut store, "d", 2, 2, Activation::Sigmoid, &mut rng()).unwrap();
        store.set("d.weights", Tensor::matrix(2, 2, vec![1.0, 2.0, 0.0, -1.0]).unwrap()).unwrap();
        store.set("d.bias", Tensor::vector(vec![0.5, -0.5]).unwrap()).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap());
        let y = layer.forward(&mut tape, &store, x).unwrap();
        let want = [1.0 / (1.0 + (-1.5f64).exp()), 1.0 / (1.0 + 0.5f64.exp())];
        for (a, b) in tape.value(y).data().iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
        let bad = tape.constant(Tensor::matrix(1, 3, vec![1.0; 3]).unwrap());
        assert!(layer.forward(&mut tape, &store, bad).is_err());
    }

    #[test]
    fn lstm_zero_weights_keep_hidden_zero() {
        let mut store = ParamStore::new();
        let l = LstmLayer::new(&mut store, "l", 3, 4, &mut rng()).unwrap();
        for id in [l.input_weights, l.recurrent_weights, l.bias] {
            store.value_mut(id).data_mut().fill(0.0);
        }
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_fn(5, 3, |i, j| (i + j) as f64 - 2.0));
        let y = l.forward(&mut tape, &store, x, 1, 5, None, true).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lstm_single_step_hand_case() {
        // Scalar LSTM with zero weights, only biases: h1 = σ(bo)·tanh(σ(bi)·tanh(bc)).
        let mut store = ParamStore::new();
        let l = LstmLayer::new(&mut store, "l", 1, 1, &mut rng()).unwrap();
        store.value_mut(l.input_weights).data_mut().fill(0.0);
        store.value_mut(l.recurrent_weights).data_mut().fill(0.0);
        let (bi, bf, bc, bo) = (0.3, 1.0, -0.7, 1.2);
        store.set("l.bias", Tensor::vector(vec![bi, bf, bc, bo]).unwrap()).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::matrix(1, 1, vec![5.0]).unwrap());
        let y = l.forward(&mut tape, &store, x, 1, 1, None, false).unwrap();
        let s = |v: f64| 1.0 / (1.0 + (-v).exp());
        let want = s(bo) * (s(bi) * bc.tanh()).tanh();
        assert!((tape.value(y).item() - want).abs() < 1e-12);
    }

    #[test]
    fn lstm_rejects_empty() {
        let mut store = ParamStore::new();
        let l = LstmLayer::new(&mut store, "l", 2, 3, &mut rng()).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[0, 2]));
        assert!(l.forward(&mut tape, &store, x, 1, 0, None, false).is_err());
    }

    #[test]
    fn lstm_forget_bias_is_one() {
        let mut store = ParamStore::new();
        let l = LstmLayer::new(&mut store, "l", 2, 3, &mut rng()).unwrap();
        assert_eq!(&store.value(l.bias).data()[3..6], &[1.0, 1.0, 1.0]);
        assert_eq!(&store.value(l.bias).data()[0..3], &[0.0, 0.0, 0.0]);
        assert_eq!(l.num_params(), store.num_scalars());
    }

    #[test]
    fn attention_single_step_is_projection_of_value() {
        let mut store = ParamStore::new();
        let a = AttentionLayer::new(&mut store, "a", 3, 2, 4, &mut rng()).unwrap();
        let x = Tensor::matrix(1, 3, vec![0.2, -1.0, 0.7]).unwrap();
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let tr = a.forward_traced(&mut tape, &store, xv, 1, 1, None).unwrap();
        for w in &tr.weights {
            assert_eq!(tape.value(*w).data(), &[1.0]);
        }
        // output-projection(V₁) computed directly
        let mut t2 = Tape::new();
        let xv = t2.constant(x);
        let v = a.value.forward(&mut t2, &store, xv).unwrap();
        let o = a.output.forward(&mut t2, &store, v).unwrap();
        assert!(tape.value(tr.output).max_abs_diff(t2.value(o)) < 1e-15);
    }

    #[test]
    fn attention_identical_rows_give_identical_outputs() {
        let mut store = ParamStore::new();
        let a = AttentionLayer::new(&mut store, "a", 2, 2, 40, &mut rng()).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_fn(4, 2, |_, j| if j == 0 { 0.3 } else { -0.8 }));
        let y = a.forward(&mut tape, &store, x, 1, 4, None).unwrap();
        let out = tape.value(y);
        for i in 1..4 {
            for j in 0..2 {
                assert_eq!(out.at(i, j), out.at(0, j));
            }
        }
    }

    #[test]
    fn attention_two_step_hand_case() {
        // One head, key dim 1, model dim 1, every projection the identity map.
        let mut store = ParamStore::new();
        let a = AttentionLayer::new(&mut store, "a", 1, 1, 1, &mut rng()).unwrap();
        for n in ["query", "key", "value", "output"] {
            store.set(&format!("a.{n}.weights"), Tensor::matrix(1, 1, vec![1.0]).unwrap()).unwrap();
        }
        let (x1, x2) = (1.0f64, 2.0f64);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::matrix(2, 1, vec![x1, x2]).unwrap());
        let y = a.forward(&mut tape, &store, x, 1, 2, None).unwrap();
        // row i: softmax([xi·x1, xi·x2]) · [x1, x2]
        let want = |xi: f64| {
            let (e1, e2) = ((xi * x1).exp(), (xi * x2).exp());
            (e1 * x1 + e2 * x2) / (e1 + e2)
        };
        assert!((tape.value(y).data()[0] - want(x1)).abs() < 1e-10);
        assert!((tape.value(y).data()[1] - want(x2)).abs() < 1e-10);
    }

    #[test]
    fn attention_weights_rows_sum_to_one_with_mask() {
        let mut store = ParamStore::new();
        let a = AttentionLayer::new(&mut store, "a", 3, 2, 5, &mut rng()).unwrap();
        let mut tape = Tape::new();
        let mut r = rng();
        let x = tape.constant(Tensor::from_fn(2 * 6, 3, |_, _| r.random_range(-2.0..2.0)));
        let tr = a.forward_traced(&mut tape, &store, x, 2, 6, Some(&[6, 3])).unwrap();
        for (k, w) in tr.weights.iter().enumerate() {
            let t = tape.value(*w);
            for i in 0..6 {
                assert!((t.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
                if k >= 2 {
                    assert!(t.row(i)[3..].iter().all(|&v| v == 0.0));
                }
            }
        }
    }

    #[test]
    fn dropout_eval_and_zero_rate_are_identity() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_fn(3, 4, |i, j| (i * 4 + j) as f64));
        let d = DropoutSpec::new(0.2).unwrap();
        let y = d.apply(&mut tape, x, Mode::Eval, &mut rng()).unwrap();
        assert_eq!(tape.value(y), tape.value(x));
        let z = DropoutSpec::new(0.0).unwrap().apply(&mut tape, x, Mode::Train, &mut rng()).unwrap();
        assert_eq!(tape.value(z), tape.value(x));
        assert!(DropoutSpec::new(1.0).is_err());
        assert!(DropoutSpec::new(-0.1).is_err());
    }

    #[test]
    fn dropout_preserves_mean_in_expectation() {
        let n = 100_000;
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::full(&[1, n], 1.5));
        let y = DropoutSpec::new(0.2).unwrap().apply(&mut tape, x, Mode::Train, &mut rng()).unwrap();
        let mean = tape.value(y).sum() / n as f64;
        assert!((mean - 1.5).abs() / 1.5 < 0.02, "mean {mean}");
    }

    #[test]
    fn stage_head_zero_weights_uniform_and_one_hot() {
        let mut store = ParamStore::new();
        let head = StageHead::new(&mut store, "head", 128, &mut rng()).unwrap();
        store.value_mut(head.dense.weights).data_mut().fill(0.0);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::full(&[1, 128], 0.3));
        let y = head.forward(&mut tape, &store, x).unwrap();
        for v in tape.value(y).data() {
            assert!((v - 1.0 / 6.0).abs() < 1e-15);
        }
        // bias with one large logit: softmax ≈ one-hot on that stage
        store.set("head.bias", Tensor::vector(vec![0.0, 0.0, 30.0, 0.0, 0.0, 0.0]).unwrap()).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::full(&[1, 128], 0.3));
        let y = head.forward(&mut tape, &store, x).unwrap();
        let d = tape.value(y).data();
        let other = (-30f64).exp() / (1.0 + 5.0 * (-30f64).exp());
        assert!((d[2] - 1.0 / (1.0 + 5.0 * (-30f64).exp())).abs() < 1e-15);
        assert!((d[0] - other).abs() < 1e-20);
    }
}
