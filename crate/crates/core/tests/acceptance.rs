//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits non-zero
//! if any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::{Arc, OnceLock};
use std::time::Instant;

use chrono::{Duration, NaiveDate};
use cropstage_core::gradcheck::{check_params, check_tensor, CheckReport};
use cropstage_core::hmm::{em_step, forward_backward, HmmConfig, HmmEnsemble, HmmModel, TransitionMask};
use cropstage_core::layers::{
    Activation, AttentionLayer, DenseLayer, LstmLayer, Mode, StageHead, ATTENTION_HEADS, ATTENTION_KEY_DIM, LSTM_HIDDEN,
};
use cropstage_core::metrics::{cosine_similarity, evaluate, kld, nse, state_aggregate, MetricsReport};
use cropstage_core::preprocess::{build_dataset, reject_spikes, sg_smooth_fpar, Dataset, FparSample, SgParams};
use cropstage_core::sim::{make_benchmark, SimConfig};
use cropstage_core::train::{train, train_with_monitor, TrainConfig};
use cropstage_core::{
    Arch, Batch, Model, ParamStore, Sample, SeasonFeatures, StageDistribution, Tape, Tensor, CHANNELS, LOCATIONS, STAGES,
    WEEKS,
};
use rand::Rng;
use rand_distr::{Distribution, Normal};

type Outcome = (bool, String);

fn rng(label: &str, i: u64) -> cropstage_core::rng::Rng {
    cropstage_core::rng::stream(20240601, label, &[i])
}

fn default_dataset() -> &'static Dataset {
    static DS: OnceLock<Dataset> = OnceLock::new();
    DS.get_or_init(|| {
        let b = make_benchmark(&SimConfig::default()).expect("benchmark");
        build_dataset(&b.inputs(), &b.split, &SgParams::default()).expect("dataset")
    })
}

fn random_tensor(r: &mut impl Rng, shape: &[usize], scale: f64) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| scale * (2.0 * r.random::<f64>() - 1.0)).collect()).unwrap()
}

fn random_distribution(r: &mut impl Rng, zeros: bool) -> [f64; STAGES] {
    let mut p: [f64; STAGES] = std::array::from_fn(|_| r.random::<f64>() + 0.05);
    if zeros {
        p[r.random_range(0..STAGES)] = 0.0;
    }
    let s: f64 = p.iter().sum();
    p.map(|v| v / s)
}

// ---------------------------------------------------------------- criterion 1

enum LayerCase {
    Dense(DenseLayer),
    Lstm(LstmLayer, bool),
    Attention(AttentionLayer),
    Head(StageHead),
}

/// Loss used for layer checks: a fixed random projection of the output, or KL for the head.
fn layer_loss(
    case: &LayerCase,
    store: &ParamStore,
    x: &Tensor,
    batch: usize,
    steps: usize,
    lengths: &[usize],
    proj: &Tensor,
    target: &Arc<Tensor>,
    want_grads: bool,
) -> cropstage_core::Result<(f64, Option<(cropstage_core::Gradients, Tensor)>)> {
    let mut tape = Tape::new();
    let xv = tape.variable(x.clone());
    let out = match case {
        LayerCase::Dense(l) => l.forward(&mut tape, store, xv)?,
        LayerCase::Lstm(l, seq) => l.forward(&mut tape, store, xv, batch, steps, Some(lengths), *seq)?,
        LayerCase::Attention(l) => l.forward(&mut tape, store, xv, batch, steps, Some(lengths))?,
        LayerCase::Head(h) => h.forward(&mut tape, store, xv)?,
    };
    let loss = match case {
        LayerCase::Head(_) => tape.kl_div(Arc::clone(target), out, cropstage_core::architectures::KLD_FLOOR)?,
        _ => {
            let p = tape.constant(proj.clone());
            let m = tape.mul(out, p)?;
            tape.sum(m)
        }
    };
    let value = tape.value(loss).item();
    if !want_grads {
        return Ok((value, None));
    }
    tape.backward(loss)?;
    let g = tape.gradients(store.len());
    let gx = tape.grad(xv).cloned().unwrap_or_else(|| Tensor::zeros(x.shape()));
    Ok((value, Some((g, gx))))
}

fn check_layer(i: u64) -> cropstage_core::Result<(String, CheckReport)> {
    let mut r = rng("layer-config", i);
    let mut store = ParamStore::new();
    let batch = r.random_range(1..=3);
    let steps = r.random_range(2..=5);
    let lengths: Vec<usize> = (0..batch).map(|_| r.random_range(1..=steps)).collect();
    let (case, x, out_shape, label) = match i % 4 {
        0 => {
            let (din, dout) = (r.random_range(2..=7), r.random_range(2..=6));
            let act = [Activation::Linear, Activation::Relu, Activation::Sigmoid, Activation::Tanh][r.random_range(0..4)];
            let l = DenseLayer::new(&mut store, "d", din, dout, act, &mut r)?;
            (LayerCase::Dense(l), random_tensor(&mut r, &[batch, din], 1.0), vec![batch, dout], format!("dense {din}->{dout} {act:?}"))
        }
        1 => {
            let (din, h) = (r.random_range(1..=4), r.random_range(2..=5));
            let seq = r.random::<bool>();
            let l = LstmLayer::new(&mut store, "l", din, h, &mut r)?;
            let rows = if seq { batch * steps } else { batch };
            (
                LayerCase::Lstm(l, seq),
                random_tensor(&mut r, &[batch * steps, din], 1.0),
                vec![rows, h],
                format!("lstm {din}->{h} T={steps} lengths={lengths:?} seq={seq}"),
            )
        }
        2 => {
            let (dm, heads, kd) = (r.random_range(1..=4), r.random_range(1..=2), r.random_range(2..=4));
            let l = AttentionLayer::new(&mut store, "a", dm, heads, kd, &mut r)?;
            (
                LayerCase::Attention(l),
                random_tensor(&mut r, &[batch * steps, dm], 1.0),
                vec![batch * steps, dm],
                format!("attention d={dm} heads={heads} key={kd} lengths={lengths:?}"),
            )
        }
        _ => {
            let din = r.random_range(2..=8);
            let h = StageHead::new(&mut store, "h", din, &mut r)?;
            (LayerCase::Head(h), random_tensor(&mut r, &[batch, din], 1.0), vec![batch, STAGES], format!("stage head {din}->6 + KL"))
        }
    };
    // move parameters away from their initial values (zero biases, unit forget bias)
    for id in store.ids().collect::<Vec<_>>() {
        for v in store.value_mut(id).data_mut() {
            *v += 0.3 * (2.0 * r.random::<f64>() - 1.0);
        }
    }
    let proj = random_tensor(&mut r, &out_shape, 1.0);
    let t: Vec<f64> = (0..batch).flat_map(|_| random_distribution(&mut r, true)).collect();
    let target = Arc::new(Tensor::new(vec![batch, STAGES], t).unwrap());
    let (_, g) = layer_loss(&case, &store, &x, batch, steps, &lengths, &proj, &target, true)?;
    let (g, gx) = g.unwrap();
    let entries: Vec<_> = store.ids().flat_map(|id| (0..store.value(id).numel()).map(move |k| (id, k))).collect();
    let mut rep = check_params(&mut store.clone(), &g, &entries, |s| {
        layer_loss(&case, s, &x, batch, steps, &lengths, &proj, &target, false).map(|v| v.0)
    })?;
    rep.merge(check_tensor(&x, &gx, |xp| layer_loss(&case, &store, xp, batch, steps, &lengths, &proj, &target, false).map(|v| v.0))?);
    Ok((label, rep))
}

fn random_features(r: &mut impl Rng, cutoff: usize) -> SeasonFeatures {
    SeasonFeatures {
        weeks: (0..WEEKS).map(|_| std::array::from_fn(|_| r.random::<f64>())).collect(),
        location: r.random_range(0..LOCATIONS),
        cutoff_week: cutoff,
    }
}

fn random_samples(r: &mut impl Rng, n: usize) -> Vec<Sample> {
    (0..n)
        .map(|_| {
            let c = r.random_range(0..WEEKS);
            Sample {
                year: 2000,
                asd: 0,
                features: random_features(r, c),
                target: StageDistribution::new(random_distribution(r, true)).unwrap(),
            }
        })
        .collect()
}

fn check_arch(arch: Arch, i: u64) -> cropstage_core::Result<(String, CheckReport)> {
    let mut r = rng("arch-config", i * 10 + arch as u64);
    let mut model = Model::build(arch, 100 + i)?;
    for id in model.store.ids().collect::<Vec<_>>() {
        for v in model.store.value_mut(id).data_mut() {
            *v += 0.02 * (2.0 * r.random::<f64>() - 1.0);
        }
    }
    let samples = random_samples(&mut r, 2);
    let refs: Vec<&Sample> = samples.iter().collect();
    let batch = Batch::from_samples(&refs)?;
    let (_, g) = model.loss_and_grads(&batch, Mode::Eval, 0, 64)?;
    let ids: Vec<_> = model.store.ids().collect();
    // every parameter tensor gets probed, plus random extra entries
    let mut entries: Vec<_> = ids.iter().map(|&id| (id, r.random_range(0..model.store.value(id).numel()))).collect();
    for _ in 0..20 {
        let id = ids[r.random_range(0..ids.len())];
        entries.push((id, r.random_range(0..model.store.value(id).numel())));
    }
    let targets = Arc::clone(batch.targets.as_ref().unwrap());
    let m = model.clone();
    let rep = check_params(&mut model.store, &g, &entries, |s| {
        let mut tape = Tape::new();
        let mut dr = cropstage_core::rng::stream(0, "unused", &[]);
        let out = m.forward_with(&mut tape, s, &batch, Mode::Eval, &mut dr)?;
        let l = tape.kl_div(Arc::clone(&targets), out.probs, cropstage_core::architectures::KLD_FLOOR)?;
        Ok(tape.value(l).item())
    })?;
    Ok((format!("{arch} cutoffs {:?}", batch.lengths), rep))
}

fn criterion_1() -> Outcome {
    let t = Instant::now();
    let tol = 1e-4;
    let mut reports = Vec::new();
    for i in 0..24 {
        reports.push(check_layer(i).expect("layer check"));
    }
    for i in 0..2 {
        for a in Arch::ALL {
            reports.push(check_arch(a, i).expect("arch check"));
        }
    }
    let secs = t.elapsed().as_secs_f64();
    let worst = reports.iter().max_by(|a, b| a.1.max_rel_error.total_cmp(&b.1.max_rel_error)).unwrap();
    let failing: Vec<&String> = reports.iter().filter(|r| !r.1.passes(tol)).map(|r| &r.0).collect();
    let checked: usize = reports.iter().map(|r| r.1.checked).sum();
    (
        failing.is_empty() && secs < 120.0,
        format!(
            "{} configurations ({} layer, {} full-model), {checked} entries, max rel err {:.2e} ({}), {secs:.1} s{}",
            reports.len(),
            24,
            reports.len() - 24,
            worst.1.max_rel_error,
            worst.0,
            if failing.is_empty() { String::new() } else { format!(", failing: {failing:?}") }
        ),
    )
}

// ---------------------------------------------------------------- criterion 2

fn criterion_2() -> Outcome {
    let mut errs = Vec::new();
    let mut cases = 0;
    let mut check = |name: &str, got: f64, want: f64| {
        cases += 1;
        if (got - want).abs() > 1e-9 {
            errs.push(format!("{name}: got {got}, want {want}"));
        }
    };
    let p = [1.0, 0.0, 0.0, 0.0, 0.0, 0.0];
    check("kld hand case", kld(&p, &[0.5, 0.5, 0.0, 0.0, 0.0, 0.0]).unwrap(), 2f64.ln());
    let q = [0.1, 0.2, 0.3, 0.15, 0.05, 0.2];
    check("kld identity", kld(&q, &q).unwrap(), 0.0);
    check("nse hand case", nse(&[0.0, 1.0, 2.0], &[0.0, 0.0, 0.0]).unwrap().unwrap(), -1.5);
    check("nse perfect", nse(&[0.3, 0.9, 0.1], &[0.3, 0.9, 0.1]).unwrap().unwrap(), 1.0);
    check("nse mean model", nse(&[1.0, 2.0, 6.0], &[3.0, 3.0, 3.0]).unwrap().unwrap(), 0.0);
    let constant_is_marker = nse(&[2.0, 2.0, 2.0], &[1.0, 2.0, 3.0]).unwrap().is_none();
    check("cs identical", cosine_similarity(&[0.2, 0.5, 0.3], &[0.2, 0.5, 0.3]).unwrap(), 1.0);
    check("cs orthogonal", cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
    check("cs orthogonal 6d", cosine_similarity(&[1.0, 0.0, 1.0, 0.0, 0.0, 0.0], &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap(), 0.0);
    check("cs hand case", cosine_similarity(&[1.0, 0.0], &[1.0, 1.0]).unwrap(), std::f64::consts::FRAC_1_SQRT_2);
    let a = StageDistribution::new([0.6, 0.4, 0.0, 0.0, 0.0, 0.0]).unwrap();
    let b = StageDistribution::new([0.0, 0.3, 0.7, 0.0, 0.0, 0.0]).unwrap();
    let blend = state_aggregate(&[a, b], &[2.0, 1.0]).unwrap();
    let want = [0.4, 11.0 / 30.0, 0.7 / 3.0, 0.0, 0.0, 0.0];
    for (s, (g, w)) in blend.as_array().iter().zip(want).enumerate() {
        check(&format!("aggregate stage {s}"), *g, w);
    }
    // Gibbs inequality on random pairs
    let mut r = rng("gibbs", 0);
    let mut min_kld = f64::INFINITY;
    for _ in 0..10_000 {
        let (zp, zq) = (r.random::<bool>(), r.random::<bool>());
        let p = random_distribution(&mut r, zp);
        let q = random_distribution(&mut r, zq);
        min_kld = min_kld.min(kld(&p, &q).unwrap());
    }
    let cases = cases;
    let ok = errs.is_empty() && constant_is_marker && min_kld >= 0.0 && cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]).is_err();
    (ok, if ok { format!("{cases} hand cases within 1e-9, constant-observed NSE undefined, min KLD over 1e4 pairs {min_kld:.2e}") } else { format!("{errs:?}") })
}

// ---------------------------------------------------------------- criterion 3

fn criterion_3() -> Outcome {
    let ds = default_dataset();
    let years = ds.years().len();
    let asds = ds.seasons.len() / years.max(1);
    let shapes_ok = ds.samples.iter().all(|s| {
        s.features.weeks.len() == WEEKS
            && s.features.weeks.iter().all(|w| w.len() == CHANNELS)
            && s.features.location_one_hot().iter().filter(|&&v| v == 1.0).count() == 1
    });
    let n = ds.samples.len();
    (n == 5967 && shapes_ok, format!("{years} years × {asds} ASDs → {n} items of 39×12 + 9-slot location (expected 5967)"))
}

// ---------------------------------------------------------------- criterion 4

fn criterion_4() -> Outcome {
    let mut details = Vec::new();
    let mut ok = true;
    for arch in Arch::ALL {
        let model = Model::build(arch, 7).unwrap();
        let mut r = rng("causality", arch as u64);
        let mut max_diff = 0.0f64;
        for _ in 0..100 {
            let base = random_samples(&mut r, 3);
            let k = r.random_range(0..3);
            let cutoff = r.random_range(0..WEEKS - 1);
            let mut items = base.clone();
            items[k].features.cutoff_week = cutoff;
            let mut changed = items.clone();
            let w = r.random_range(cutoff + 1..WEEKS);
            let c = r.random_range(0..CHANNELS);
            changed[k].features.weeks[w][c] += 10.0 * (r.random::<f64>() - 0.5) + 1.0;
            let p0 = model.predict(&Batch::from_samples(&items.iter().collect::<Vec<_>>()).unwrap()).unwrap();
            let p1 = model.predict(&Batch::from_samples(&changed.iter().collect::<Vec<_>>()).unwrap()).unwrap();
            for (a, b) in p0.data().iter().zip(p1.data()) {
                max_diff = max_diff.max((a - b).abs());
            }
        }
        ok &= max_diff == 0.0;
        details.push(format!("{arch} max |Δ| {max_diff:e}"));
    }
    (ok, format!("100 post-cutoff perturbations per architecture: {}", details.join(", ")))
}

// ---------------------------------------------------------------- criterion 5

fn criterion_5() -> Outcome {
    let params = SgParams::default();
    let start = NaiveDate::from_ymd_opt(2015, 1, 1).unwrap();
    let end = NaiveDate::from_ymd_opt(2015, 12, 31).unwrap();
    let line = |d: NaiveDate| 0.15 + 0.0015 * (d - start).num_days() as f64;
    let samples: Vec<FparSample> =
        (0..92).map(|i| start + Duration::days(4 * i)).map(|date| FparSample { date, fpar: line(date) }).collect();
    let smooth = sg_smooth_fpar(&samples, start, end, &params).unwrap();
    let m = params.trend_half_window;
    let mut affine_err = 0.0f64;
    for (i, v) in smooth.iter().enumerate().take(smooth.len() - m).skip(m) {
        affine_err = affine_err.max((v - line(start + Duration::days(i as i64))).abs());
    }
    // June spike: one sample jumps 0.5 above its predecessor
    let flat: Vec<FparSample> =
        (0..92).map(|i| start + Duration::days(4 * i)).map(|date| FparSample { date, fpar: 0.4 }).collect();
    let mut spiked = flat.clone();
    let june = spiked.iter().position(|s| s.date >= NaiveDate::from_ymd_opt(2015, 6, 15).unwrap()).unwrap();
    spiked[june].fpar = 0.9;
    let kept = reject_spikes(&spiked, params.gradient_limit);
    let excluded = !kept.iter().any(|s| s.date == spiked[june].date) && kept.len() == spiked.len() - 1;
    let with = sg_smooth_fpar(&spiked, start, end, &params).unwrap();
    let without: Vec<FparSample> = spiked.iter().enumerate().filter(|(i, _)| *i != june).map(|(_, s)| *s).collect();
    let reference = sg_smooth_fpar(&without, start, end, &params).unwrap();
    let same = with == reference;
    (
        affine_err <= 1e-9 && excluded && same,
        format!("affine max interior error {affine_err:.1e}; June spike (gradient 0.5) excluded: {excluded}, smoothing identical to spike-free input: {same}"),
    )
}

// ---------------------------------------------------------------- criterion 6

fn random_hmm(r: &mut impl Rng, mask: Option<&TransitionMask>, spread: f64) -> HmmModel {
    let mut a = [[0.0; STAGES]; STAGES];
    for (i, row) in a.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = if mask.is_none_or(|m| m.0[i][j]) { r.random::<f64>() + 0.05 } else { 0.0 };
        }
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= s);
    }
    HmmModel {
        pi: random_distribution(r, false),
        a,
        means: std::array::from_fn(|s| std::array::from_fn(|_| spread * s as f64 + r.random::<f64>())),
        vars: std::array::from_fn(|_| std::array::from_fn(|_| 0.5 + r.random::<f64>())),
    }
}

fn random_obs(r: &mut impl Rng, t: usize, spread: f64) -> Vec<[f64; CHANNELS]> {
    (0..t).map(|_| std::array::from_fn(|_| spread * 5.0 * r.random::<f64>())).collect()
}

/// Marginals and likelihood by summing over every state path.
fn enumerate(m: &HmmModel, obs: &[[f64; CHANNELS]]) -> (Vec<[f64; STAGES]>, f64) {
    let t = obs.len();
    let em: Vec<[f64; STAGES]> = obs.iter().map(|o| m.log_emission(o).map(f64::exp)).collect();
    let mut marg = vec![[0.0; STAGES]; t];
    let mut total = 0.0;
    let n = STAGES.pow(t as u32);
    for code in 0..n {
        let path: Vec<usize> = (0..t).map(|k| code / STAGES.pow(k as u32) % STAGES).collect();
        let mut p = m.pi[path[0]] * em[0][path[0]];
        for k in 1..t {
            p *= m.a[path[k - 1]][path[k]] * em[k][path[k]];
        }
        total += p;
        for k in 0..t {
            marg[k][path[k]] += p;
        }
    }
    (marg.into_iter().map(|g| g.map(|v| v / total)).collect(), total.ln())
}

fn sample_sequence(m: &HmmModel, t: usize, r: &mut impl Rng) -> Vec<[f64; CHANNELS]> {
    let pick = |p: &[f64], r: &mut dyn rand::RngCore| {
        let u: f64 = r.random();
        let mut acc = 0.0;
        for (i, v) in p.iter().enumerate() {
            acc += v;
            if u < acc {
                return i;
            }
        }
        p.len() - 1
    };
    let std = Normal::new(0.0, 1.0).unwrap();
    let mut s = pick(&m.pi, r);
    let mut out = Vec::with_capacity(t);
    for _ in 0..t {
        out.push(std::array::from_fn(|c| m.means[s][c] + m.vars[s][c].sqrt() * std.sample(r)));
        s = pick(&m.a[s], r);
    }
    out
}

fn criterion_6() -> Outcome {
    // (a) exhaustive enumeration
    let mut r = rng("hmm-enum", 0);
    let mut enum_err = 0.0f64;
    for trial in 0..40 {
        let t = 1 + trial % 4;
        let m = random_hmm(&mut r, None, 0.3);
        let obs = random_obs(&mut r, t, 0.3);
        let post = forward_backward(&m, &obs, t - 1).unwrap();
        let (marg, ll) = enumerate(&m, &obs);
        for (g, e) in post.gamma.iter().zip(&marg) {
            for s in 0..STAGES {
                enum_err = enum_err.max((g[s] - e[s]).abs());
            }
        }
        enum_err = enum_err.max((post.log_likelihood - ll).abs() / ll.abs().max(1.0));
    }
    // (b) EM monotonicity
    let mask = TransitionMask::default();
    let mut worst_drop = 0.0f64;
    for d in 0..50 {
        let mut r = rng("hmm-em", d);
        let truth = random_hmm(&mut r, Some(&mask), 1.0);
        let seqs: Vec<_> = (0..r.random_range(3..8)).map(|_| sample_sequence(&truth, r.random_range(5..20), &mut r)).collect();
        let mut m = random_hmm(&mut r, Some(&mask), 0.8);
        let mut prev = f64::NEG_INFINITY;
        for _ in 0..15 {
            let (next, ll) = em_step(&m, &seqs, &mask, false).unwrap();
            worst_drop = worst_drop.max(prev - ll);
            prev = ll;
            m = next;
        }
    }
    // (c) simulate and refit
    let mut r = rng("hmm-refit", 0);
    let advance = [0.25, 0.3, 0.35, 0.3, 0.2];
    let mut a = [[0.0; STAGES]; STAGES];
    for i in 0..STAGES {
        if i + 1 < STAGES {
            a[i][i] = 1.0 - advance[i];
            a[i][i + 1] = advance[i];
        } else {
            a[i][i] = 1.0;
        }
    }
    let truth = HmmModel {
        pi: [0.9, 0.1, 0.0, 0.0, 0.0, 0.0],
        a,
        means: std::array::from_fn(|s| std::array::from_fn(|c| s as f64 + 0.1 * (c % 3) as f64)),
        vars: [[0.3; CHANNELS]; STAGES],
    };
    let seqs: Vec<_> = (0..200).map(|_| sample_sequence(&truth, WEEKS, &mut r)).collect();
    let mut a0 = [[0.0; STAGES]; STAGES];
    for i in 0..STAGES {
        a0[i][i] = if i + 1 < STAGES { 0.5 } else { 1.0 };
        if i + 1 < STAGES {
            a0[i][i + 1] = 0.5;
        }
    }
    let mut m = HmmModel {
        pi: [1.0 / 6.0; STAGES],
        a: a0,
        means: std::array::from_fn(|s| std::array::from_fn(|c| truth.means[s][c] + 0.3 * (r.random::<f64>() - 0.5))),
        vars: [[1.0; CHANNELS]; STAGES],
    };
    let mut prev = f64::NEG_INFINITY;
    for _ in 0..200 {
        let (next, ll) = em_step(&m, &seqs, &mask, false).unwrap();
        m = next;
        if (ll - prev).abs() < 1e-8 * ll.abs() {
            break;
        }
        prev = ll;
    }
    let mut a_err = 0.0f64;
    for i in 0..STAGES {
        for j in 0..STAGES {
            a_err = a_err.max((m.a[i][j] - truth.a[i][j]).abs());
        }
    }
    let ok = enum_err <= 1e-9 && worst_drop <= 1e-9 && a_err < 0.05;
    (
        ok,
        format!(
            "enumeration (T≤4, 40 models) max err {enum_err:.1e}; EM on 50 datasets worst LL decrease {:.1e}; refit from 200 sequences max |ΔA| {a_err:.3}",
            worst_drop.max(0.0)
        ),
    )
}

// ---------------------------------------------------------------- criterion 7

fn nse_line(r: &MetricsReport) -> String {
    r.nse_summary
        .iter()
        .map(|s| format!("{}={}", s.stage, s.mean.map_or("n/a".into(), |v| format!("{v:.3}"))))
        .collect::<Vec<_>>()
        .join(" ")
}

fn criterion_7() -> Outcome {
    let t = Instant::now();
    let ds = default_dataset();
    let train_years = ds.split.train_years.clone();
    let test_years = ds.split.test_years.clone();
    let cfg = TrainConfig::desk();
    let mut lines = Vec::new();
    let mut ok = true;
    let hmm = HmmEnsemble::fit_dataset(ds, &train_years, &HmmConfig::default()).unwrap();
    let hr = evaluate(&hmm, ds, &test_years).unwrap();
    let hmm_mean = hr.mean_nse.unwrap_or(f64::NEG_INFINITY);
    lines.push(format!("hmm mean {hmm_mean:.3} [{}]", nse_line(&hr)));
    let mut means = Vec::new();
    for arch in Arch::ALL {
        let mut model = Model::build(arch, 42).unwrap();
        let h = train(&mut model, ds, &train_years, &cfg).unwrap();
        let rep = evaluate(&model, ds, &test_years).unwrap();
        let all_above = rep.nse_summary.iter().all(|s| s.mean.is_some_and(|v| v > 0.5));
        let mean = rep.mean_nse.unwrap_or(f64::NEG_INFINITY);
        ok &= all_above && mean > hmm_mean;
        means.push(mean);
        lines.push(format!(
            "{arch} mean {mean:.3} after {} epochs (best {}) [{}]",
            h.last_epoch(),
            h.best_epoch,
            nse_line(&rep)
        ));
    }
    let secs = t.elapsed().as_secs_f64();
    ok &= secs < 1800.0;
    lines.push(format!("DgNN {} Sequential (reported only)", if means[2] >= means[1] { ">=" } else { "<" }));
    lines.push(format!("{:.0} s", secs));
    (ok, lines.join("; "))
}

// ---------------------------------------------------------------- criterion 8

fn criterion_8() -> Outcome {
    let ds = default_dataset();
    let items: Vec<&Sample> = ds.samples.iter().step_by(397).take(12).collect();
    let mut model = Model::build(Arch::Sequential, 3).unwrap();
    let k = 6;
    let cfg = TrainConfig { max_epochs: 300, patience: 30, learning_rate: 1e-3, batch_size: 4, ..TrainConfig::default() };
    let mut at_k = None;
    let h = train_with_monitor(&mut model, &items, &cfg, |m, epoch| {
        if epoch == k {
            at_k = Some(m.store.snapshot());
        }
        Ok(if epoch <= k { 1.0 / epoch as f64 } else { 1.0 + epoch as f64 })
    })
    .unwrap();
    let restored = at_k.as_ref() == Some(&model.store.snapshot());
    let stop = h.last_epoch();
    (
        stop == k + 30 && h.best_epoch == k && restored,
        format!("monitor worsens after epoch {k}: stopped at epoch {stop} (expected {}), best epoch {}, epoch-{k} weights restored exactly: {restored}", k + 30, h.best_epoch),
    )
}

// ---------------------------------------------------------------- criterion 9

fn lstm_params(din: usize, h: usize) -> usize {
    4 * (din * h + h * h + h)
}

fn dense_params(din: usize, dout: usize) -> usize {
    din * dout + dout
}

fn attention_params(d: usize) -> usize {
    let p = ATTENTION_HEADS * ATTENTION_KEY_DIM;
    3 * dense_params(d, p) + dense_params(p, d)
}

fn criterion_9() -> Outcome {
    let h = LSTM_HIDDEN;
    let head = dense_params(128, STAGES);
    let oracle = [
        dense_params(WEEKS * CHANNELS + LOCATIONS, 1024) + dense_params(1024, 512) + dense_params(512, 256) + dense_params(256, 128) + head,
        lstm_params(CHANNELS, h) + lstm_params(h, h) + dense_params(h + LOCATIONS, 128) + head,
        lstm_params(4, h) + attention_params(2) + lstm_params(2, h) + attention_params(6) + lstm_params(6, h) + dense_params(3 * h + LOCATIONS, 128) + head,
    ];
    let published = [1_170_054usize, 1_046_278, 1_018_094];
    let mut ok = true;
    let mut parts = Vec::new();
    for (i, arch) in Arch::ALL.into_iter().enumerate() {
        let m = Model::build(arch, 1).unwrap();
        let spec = m.spec();
        ok &= spec.param_count == oracle[i]
            && spec.param_count == m.store.num_scalars()
            && spec.reference_param_count() == published[i]
            && spec.param_delta() == spec.param_count as i64 - published[i] as i64;
        parts.push(spec.param_report());
    }
    (ok, parts.join("; "))
}

// ---------------------------------------------------------------- criterion 10

fn end_to_end(dir: &std::path::Path) -> String {
    use cropstage_core::io::{load_dataset, read_inputs, save_dataset, write_inputs};
    let sim = SimConfig { years: (2003..=2006).collect(), test_years: vec![2005], ..SimConfig::default() };
    let b = make_benchmark(&sim).unwrap();
    let data = dir.join("data");
    write_inputs(&data, &b.inputs(), &b.split).unwrap();
    let (seasons, split) = read_inputs(&data).unwrap();
    let ds = build_dataset(&seasons, &split, &SgParams::default()).unwrap();
    save_dataset(&dir.join("prep"), &ds).unwrap();
    let ds = load_dataset(&dir.join("prep")).unwrap();
    let mut model = Model::build(Arch::Dgnn, 42).unwrap();
    let cfg = TrainConfig { max_epochs: 2, patience: 2, ..TrainConfig::desk() };
    train(&mut model, &ds, &split.train_years, &cfg).unwrap();
    evaluate(&model, &ds, &split.test_years).unwrap().to_json().unwrap()
}

fn criterion_10() -> Outcome {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ra = end_to_end(a.path());
    let rb = end_to_end(b.path());
    let same_features = std::fs::read(a.path().join("prep/features.bin")).unwrap() == std::fs::read(b.path().join("prep/features.bin")).unwrap();
    (
        ra == rb && same_features,
        format!("simulate → files → preprocess → train (dgnn) → evaluate twice: MetricsReport JSON identical: {} ({} bytes), feature files identical: {same_features}", ra == rb, ra.len()),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("gradient integrity", criterion_1),
        ("metric oracles", criterion_2),
        ("dataset geometry", criterion_3),
        ("causality", criterion_4),
        ("SG filter", criterion_5),
        ("HMM correctness", criterion_6),
        ("synthetic benchmark", criterion_7),
        ("early stopping", criterion_8),
        ("parameter-count report", criterion_9),
        ("determinism", criterion_10),
    ];
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|v| v.parse().ok());
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let n = i + 1;
        if only.is_some_and(|o| o != n) {
            continue;
        }
        let (ok, detail) = match catch_unwind(AssertUnwindSafe(f)) {
            Ok(v) => v,
            Err(e) => {
                let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
                (false, format!("panicked: {}", msg.unwrap_or_default()))
            }
        };
        if !ok {
            failed += 1;
        }
        println!("{} {n:>2}. {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
