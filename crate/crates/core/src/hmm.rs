//! Left-to-right Gaussian HMM baseline fitted by EM, initialised from progress
//! report statistics.

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::Dataset;
use crate::rng;
use crate::types::{Sample, StageDistribution, CHANNELS, STAGES, WEEKS};

pub const VARIANCE_FLOOR: f64 = 1e-6;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

pub type Obs = [f64; CHANNELS];

/// Allowed transitions; `mask[i][j]` permits moving from state `i` to `j`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionMask(pub [[bool; STAGES]; STAGES]);

impl TransitionMask {
    /// Stay, or advance by at most `max_step` states.
    pub fn left_to_right(max_step: usize) -> Self {
        TransitionMask(std::array::from_fn(|i| std::array::from_fn(|j| j >= i && j - i <= max_step)))
    }
}

impl Default for TransitionMask {
    fn default() -> Self {
        Self::left_to_right(1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HmmModel {
    pub pi: [f64; STAGES],
    pub a: [[f64; STAGES]; STAGES],
    pub means: [[f64; CHANNELS]; STAGES],
    pub vars: [[f64; CHANNELS]; STAGES],
}

impl HmmModel {
    pub fn validate(&self) -> Result<()> {
        let ok = |r: &[f64]| (r.iter().sum::<f64>() - 1.0).abs() < 1e-9 && r.iter().all(|v| v.is_finite() && *v >= 0.0);
        if !ok(&self.pi) || !self.a.iter().all(|r| ok(r)) {
            return Err(Error::Contract("HMM probabilities must be non-negative and sum to 1".into()));
        }
        for i in 0..STAGES {
            for j in 0..i {
                if self.a[i][j] != 0.0 {
                    return Err(Error::Contract(format!("backward transition {i}->{j}")));
                }
            }
        }
        if self.vars.iter().flatten().any(|v| !(v.is_finite() && *v >= VARIANCE_FLOOR))
            || self.means.iter().flatten().any(|v| !v.is_finite())
        {
            return Err(Error::Contract("HMM emission parameters invalid".into()));
        }
        Ok(())
    }

    pub fn log_emission(&self, x: &Obs) -> [f64; STAGES] {
        std::array::from_fn(|s| {
            let mut l = 0.0;
            for c in 0..CHANNELS {
                let v = self.vars[s][c];
                let d = x[c] - self.means[s][c];
                l -= 0.5 * (LN_2PI + v.ln() + d * d / v);
            }
            l
        })
    }

    fn step(&self, p: &[f64; STAGES]) -> [f64; STAGES] {
        let mut out = [0.0; STAGES];
        for i in 0..STAGES {
            if p[i] != 0.0 {
                for j in 0..STAGES {
                    out[j] += p[i] * self.a[i][j];
                }
            }
        }
        out
    }
}

/// Result of scaled forward-backward over the observed prefix of a sequence.
#[derive(Clone, Debug)]
pub struct Posterior {
    /// Per-week state marginals for every input row; rows after the cutoff are chain predictions.
    pub gamma: Vec<[f64; STAGES]>,
    /// Expected transition counts over observed steps.
    pub xi: [[f64; STAGES]; STAGES],
    pub log_likelihood: f64,
    /// Weeks where every state had negligible likelihood and the observation was skipped.
    pub floored: usize,
}

/// Scaled forward-backward using observations `0..=cutoff` of `obs`.
pub fn forward_backward(model: &HmmModel, obs: &[Obs], cutoff: usize) -> Result<Posterior> {
    if obs.is_empty() || cutoff >= obs.len() {
        return Err(Error::Input(format!("cutoff {cutoff} outside sequence of {} weeks", obs.len())));
    }
    let t_obs = cutoff + 1;
    let mut alpha = vec![[0.0; STAGES]; t_obs];
    let mut e = vec![[0.0; STAGES]; t_obs];
    let mut scale = vec![1.0; t_obs];
    let mut ll = 0.0;
    let mut floored = 0;
    for t in 0..t_obs {
        let le = model.log_emission(&obs[t]);
        let mx = le.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !mx.is_finite() {
            return Err(Error::NonFinite(format!("emission log-likelihood at week {t}")));
        }
        e[t] = le.map(|v| (v - mx).exp());
        let prior = if t == 0 { model.pi } else { model.step(&alpha[t - 1]) };
        let mut a: [f64; STAGES] = std::array::from_fn(|s| prior[s] * e[t][s]);
        let c: f64 = a.iter().sum();
        if c > 1e-300 {
            a.iter_mut().for_each(|v| *v /= c);
            scale[t] = c;
            ll += c.ln() + mx;
        } else {
            // no state explains the observation: propagate the prior
            floored += 1;
            e[t] = [1.0; STAGES];
            a = prior;
            let s: f64 = a.iter().sum();
            a.iter_mut().for_each(|v| *v /= s);
            scale[t] = 1.0;
            ll += (1e-300f64).ln() + mx;
        }
        alpha[t] = a;
    }
    let mut beta = vec![[1.0; STAGES]; t_obs];
    let mut xi = [[0.0; STAGES]; STAGES];
    for t in (0..t_obs - 1).rev() {
        let next: [f64; STAGES] = std::array::from_fn(|j| e[t + 1][j] * beta[t + 1][j] / scale[t + 1]);
        for i in 0..STAGES {
            let mut b = 0.0;
            for j in 0..STAGES {
                let w = model.a[i][j] * next[j];
                b += w;
                xi[i][j] += alpha[t][i] * w;
            }
            beta[t][i] = b;
        }
    }
    let mut gamma = Vec::with_capacity(obs.len());
    for t in 0..t_obs {
        let mut g: [f64; STAGES] = std::array::from_fn(|s| alpha[t][s] * beta[t][s]);
        let s: f64 = g.iter().sum();
        g.iter_mut().for_each(|v| *v /= s);
        gamma.push(g);
    }
    for _ in t_obs..obs.len() {
        let g = model.step(gamma.last().unwrap());
        gamma.push(g);
    }
    Ok(Posterior { gamma, xi, log_likelihood: ll, floored })
}

/// Sufficient statistics accumulated over sequences.
struct Stats {
    pi: [f64; STAGES],
    xi: [[f64; STAGES]; STAGES],
    w: [f64; STAGES],
    sx: [[f64; CHANNELS]; STAGES],
    sxx: [[f64; CHANNELS]; STAGES],
    ll: f64,
}

impl Stats {
    fn new() -> Self {
        Stats {
            pi: [0.0; STAGES],
            xi: [[0.0; STAGES]; STAGES],
            w: [0.0; STAGES],
            sx: [[0.0; CHANNELS]; STAGES],
            sxx: [[0.0; CHANNELS]; STAGES],
            ll: 0.0,
        }
    }

    fn add(&mut self, post: &Posterior, obs: &[Obs]) {
        self.ll += post.log_likelihood;
        for s in 0..STAGES {
            self.pi[s] += post.gamma[0][s];
            for j in 0..STAGES {
                self.xi[s][j] += post.xi[s][j];
            }
        }
        for (g, x) in post.gamma.iter().zip(obs) {
            for s in 0..STAGES {
                self.w[s] += g[s];
                for c in 0..CHANNELS {
                    self.sx[s][c] += g[s] * x[c];
                    self.sxx[s][c] += g[s] * x[c] * x[c];
                }
            }
        }
    }
}

/// Total log-likelihood of fully observed sequences.
pub fn log_likelihood(model: &HmmModel, seqs: &[Vec<Obs>]) -> Result<f64> {
    let mut ll = 0.0;
    for s in seqs {
        ll += forward_backward(model, s, s.len() - 1)?.log_likelihood;
    }
    Ok(ll)
}

/// One Baum–Welch update. Returns the updated model and the log-likelihood of the input model.
pub fn em_step(model: &HmmModel, seqs: &[Vec<Obs>], mask: &TransitionMask, fixed_transitions: bool) -> Result<(HmmModel, f64)> {
    let mut st = Stats::new();
    for s in seqs {
        if s.is_empty() {
            return Err(Error::Input("empty observation sequence".into()));
        }
        let post = forward_backward(model, s, s.len() - 1)?;
        st.add(&post, s);
    }
    if !st.ll.is_finite() {
        return Err(Error::Numerical("non-finite log-likelihood".into()));
    }
    let mut next = model.clone();
    if !fixed_transitions {
        let n: f64 = st.pi.iter().sum();
        next.pi = st.pi.map(|v| v / n);
        for i in 0..STAGES {
            let row: f64 = (0..STAGES).filter(|&j| mask.0[i][j]).map(|j| st.xi[i][j]).sum();
            if row > 0.0 {
                for j in 0..STAGES {
                    next.a[i][j] = if mask.0[i][j] { st.xi[i][j] / row } else { 0.0 };
                }
            }
        }
    }
    for s in 0..STAGES {
        // a state with no responsibility keeps its emissions
        if st.w[s] <= 1e-12 {
            continue;
        }
        for c in 0..CHANNELS {
            let m = st.sx[s][c] / st.w[s];
            let v = (st.sxx[s][c] / st.w[s] - m * m).max(VARIANCE_FLOOR);
            next.means[s][c] = m;
            next.vars[s][c] = v;
        }
    }
    Ok((next, st.ll))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HmmConfig {
    pub runs: usize,
    /// Number of best-validated runs averaged at estimation time.
    pub ensemble: usize,
    pub validation_years: usize,
    pub max_iterations: usize,
    pub tolerance: f64,
    pub fixed_transitions: bool,
    /// Standard deviation of the initial mean perturbation, in scaled units.
    pub init_jitter: f64,
    pub max_step: usize,
    pub seed: u64,
}

impl Default for HmmConfig {
    fn default() -> Self {
        HmmConfig {
            runs: 100,
            ensemble: 10,
            validation_years: 4,
            max_iterations: 50,
            tolerance: 1e-6,
            fixed_transitions: false,
            init_jitter: 0.1,
            max_step: 1,
            seed: 42,
        }
    }
}

impl HmmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 || self.ensemble == 0 || self.ensemble > self.runs {
            return Err(Error::Config("need 1 <= ensemble <= runs".into()));
        }
        if self.max_iterations == 0 || !(self.tolerance >= 0.0) || !(self.init_jitter >= 0.0) {
            return Err(Error::Config("invalid EM iteration settings".into()));
        }
        if self.max_step == 0 || self.max_step >= STAGES {
            return Err(Error::Config("max_step must be 1..=5".into()));
        }
        Ok(())
    }
}

/// A labelled training season: full-season observations plus weekly true occupancy.
#[derive(Clone, Debug)]
pub struct LabelledSeason {
    pub year: i32,
    pub obs: Vec<Obs>,
    pub occupancy: Vec<StageDistribution>,
}

/// Initial model from progress statistics: occupancy-weighted emissions, initial
/// occupancy for `pi`, and weekly stage flows for the transitions.
pub fn init_from_progress(seasons: &[LabelledSeason], mask: &TransitionMask) -> Result<HmmModel> {
    if seasons.is_empty() {
        return Err(Error::Input("no seasons for HMM initialisation".into()));
    }
    let mut w = [0.0; STAGES];
    let mut sx = [[0.0; CHANNELS]; STAGES];
    let mut sxx = [[0.0; CHANNELS]; STAGES];
    let mut pi = [0.0; STAGES];
    let mut occ = [0.0; STAGES];
    let mut flow = [[0.0; STAGES]; STAGES];
    let mut all_sx = [0.0; CHANNELS];
    let mut all_sxx = [0.0; CHANNELS];
    let mut n = 0.0;
    for s in seasons {
        for (k, (x, d)) in s.obs.iter().zip(&s.occupancy).enumerate() {
            let p = d.as_array();
            for st in 0..STAGES {
                w[st] += p[st];
                for c in 0..CHANNELS {
                    sx[st][c] += p[st] * x[c];
                    sxx[st][c] += p[st] * x[c] * x[c];
                }
            }
            for c in 0..CHANNELS {
                all_sx[c] += x[c];
                all_sxx[c] += x[c] * x[c];
            }
            n += 1.0;
            if k == 0 {
                for st in 0..STAGES {
                    pi[st] += p[st];
                }
            }
            if let Some(next) = s.occupancy.get(k + 1) {
                let (c0, c1) = (d.cumulative_percent(), next.cumulative_percent());
                for st in 0..STAGES {
                    occ[st] += p[st];
                    if st + 1 < STAGES {
                        // mass crossing into stage st+1 or later this week
                        flow[st][st + 1] += ((c1[st + 1] - c0[st + 1]) / 100.0).max(0.0);
                    }
                }
            }
        }
    }
    let mut model = HmmModel { pi: [0.0; STAGES], a: [[0.0; STAGES]; STAGES], means: [[0.0; CHANNELS]; STAGES], vars: [[1.0; CHANNELS]; STAGES] };
    // pi gets a little mass everywhere reachable so EM can move it
    let tot: f64 = pi.iter().sum();
    model.pi = pi.map(|v| (v / tot).max(1e-6));
    let s: f64 = model.pi.iter().sum();
    model.pi.iter_mut().for_each(|v| *v /= s);
    for i in 0..STAGES {
        let allowed: Vec<usize> = (0..STAGES).filter(|&j| mask.0[i][j] && j != i).collect();
        if allowed.is_empty() || occ[i] <= 0.0 {
            model.a[i][i] = 1.0;
            if !mask.0[i][i] {
                return Err(Error::Config(format!("state {i} has no allowed transitions")));
            }
            continue;
        }
        let leave = if i + 1 < STAGES { (flow[i][i + 1] / occ[i]).clamp(1e-3, 0.999) } else { 0.0 };
        if mask.0[i][i] {
            model.a[i][i] = 1.0 - leave;
        }
        let share = if mask.0[i][i] { leave } else { 1.0 };
        for &j in &allowed {
            model.a[i][j] = share / allowed.len() as f64;
        }
    }
    for st in 0..STAGES {
        for c in 0..CHANNELS {
            let (m, v) = if w[st] > 1e-9 {
                let m = sx[st][c] / w[st];
                (m, sxx[st][c] / w[st] - m * m)
            } else {
                let m = all_sx[c] / n;
                (m, all_sxx[c] / n - m * m)
            };
            model.means[st][c] = m;
            model.vars[st][c] = v.max(VARIANCE_FLOOR);
        }
    }
    model.validate()?;
    Ok(model)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run: usize,
    pub validation_years: Vec<i32>,
    pub iterations: usize,
    pub best_iteration: usize,
    /// Mean validation log-likelihood per sequence of the kept iterate.
    pub validation_ll: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HmmEnsemble {
    pub config: HmmConfig,
    pub models: Vec<HmmModel>,
    pub runs: Vec<RunSummary>,
}

impl HmmEnsemble {
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        if self.models.is_empty() {
            return Err(Error::Config("HMM ensemble has no members".into()));
        }
        self.models.iter().try_for_each(HmmModel::validate)
    }
}

fn fit_run(seasons: &[LabelledSeason], base: &HmmModel, cfg: &HmmConfig, mask: &TransitionMask, run: usize) -> Result<(HmmModel, RunSummary)> {
    let mut r = rng::stream(cfg.seed, "hmm-run", &[run as u64]);
    let mut years: Vec<i32> = seasons.iter().map(|s| s.year).collect();
    years.dedup();
    let n_val = cfg.validation_years.min(years.len().saturating_sub(1));
    let mut shuffled = years.clone();
    shuffled.shuffle(&mut r);
    let mut val_years: Vec<i32> = shuffled[..n_val].to_vec();
    val_years.sort_unstable();
    let train: Vec<Vec<Obs>> = seasons.iter().filter(|s| !val_years.contains(&s.year)).map(|s| s.obs.clone()).collect();
    let val: Vec<Vec<Obs>> = seasons.iter().filter(|s| val_years.contains(&s.year)).map(|s| s.obs.clone()).collect();

    let std = Normal::new(0.0, 1.0).expect("valid normal");
    let mut model = base.clone();
    for s in 0..STAGES {
        for c in 0..CHANNELS {
            model.means[s][c] += cfg.init_jitter * model.vars[s][c].sqrt() * std.sample(&mut r);
        }
    }
    let score = |m: &HmmModel| -> Result<f64> {
        if val.is_empty() {
            return Ok(log_likelihood(m, &train)? / train.len() as f64);
        }
        Ok(log_likelihood(m, &val)? / val.len() as f64)
    };
    let mut best = (score(&model)?, model.clone(), 0);
    let mut prev_ll = f64::NEG_INFINITY;
    let mut iterations = 0;
    for it in 1..=cfg.max_iterations {
        let (next, ll) = em_step(&model, &train, mask, cfg.fixed_transitions)?;
        iterations = it;
        model = next;
        let v = score(&model)?;
        if v > best.0 {
            best = (v, model.clone(), it);
        }
        if (ll - prev_ll).abs() <= cfg.tolerance * ll.abs().max(1.0) {
            break;
        }
        prev_ll = ll;
    }
    Ok((best.1, RunSummary { run, validation_years: val_years, iterations, best_iteration: best.2, validation_ll: best.0 }))
}

impl HmmEnsemble {
    /// Fit `cfg.runs` EM runs, each with its own validation years and initial
    /// perturbation, and keep the `cfg.ensemble` runs with the best validation likelihood.
    pub fn fit(seasons: &[LabelledSeason], cfg: &HmmConfig) -> Result<HmmEnsemble> {
        cfg.validate()?;
        let mut years: Vec<i32> = seasons.iter().map(|s| s.year).collect();
        years.sort_unstable();
        years.dedup();
        if years.len() < 2 {
            return Err(Error::Input("HMM fitting needs at least 2 training years".into()));
        }
        let mask = TransitionMask::left_to_right(cfg.max_step);
        let base = init_from_progress(seasons, &mask)?;
        let fitted: Vec<Result<(HmmModel, RunSummary)>> =
            (0..cfg.runs).into_par_iter().map(|run| fit_run(seasons, &base, cfg, &mask, run)).collect();
        let mut ok: Vec<(HmmModel, RunSummary)> = Vec::new();
        let mut last_err = None;
        for f in fitted {
            match f {
                Ok(v) if v.1.validation_ll.is_finite() => ok.push(v),
                Ok(_) => last_err = Some(Error::Numerical("non-finite validation likelihood".into())),
                Err(e) => last_err = Some(e),
            }
        }
        if ok.is_empty() {
            return Err(last_err.unwrap_or_else(|| Error::Numerical("no EM run succeeded".into())));
        }
        let mut order: Vec<usize> = (0..ok.len()).collect();
        order.sort_by(|&a, &b| ok[b].1.validation_ll.total_cmp(&ok[a].1.validation_ll).then(a.cmp(&b)));
        let keep: Vec<usize> = order.into_iter().take(cfg.ensemble).collect();
        Ok(HmmEnsemble {
            config: cfg.clone(),
            models: keep.iter().map(|&i| ok[i].0.clone()).collect(),
            runs: ok.into_iter().map(|v| v.1).collect(),
        })
    }

    /// Fit on the training years of a dataset.
    pub fn fit_dataset(ds: &Dataset, years: &[i32], cfg: &HmmConfig) -> Result<HmmEnsemble> {
        let seasons = labelled_seasons(ds, years)?;
        Self::fit(&seasons, cfg)
    }

    /// Mean posterior at the item's cutoff over the ensemble members.
    pub fn estimate(&self, obs: &[Obs], cutoff: usize) -> Result<StageDistribution> {
        let mut p = [0.0; STAGES];
        for m in &self.models {
            let post = forward_backward(m, obs, cutoff)?;
            for s in 0..STAGES {
                p[s] += post.gamma[cutoff][s] / self.models.len() as f64;
            }
        }
        StageDistribution::normalized(p)
    }

    pub fn estimate_sample(&self, s: &Sample) -> Result<StageDistribution> {
        self.estimate(&s.features.weeks, s.features.cutoff_week)
    }
}

/// Full-season observations and weekly targets for every (year, district) of `years`.
pub fn labelled_seasons(ds: &Dataset, years: &[i32]) -> Result<Vec<LabelledSeason>> {
    let mut out = Vec::new();
    for meta in ds.seasons.iter().filter(|m| years.contains(&m.year)) {
        let full = ds
            .sample(meta.year, meta.asd, WEEKS - 1)
            .ok_or_else(|| Error::Input(format!("missing season {} ASD {}", meta.year, meta.asd)))?;
        let occupancy = (0..WEEKS)
            .map(|c| ds.sample(meta.year, meta.asd, c).map(|s| s.target))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| Error::Input(format!("incomplete season {} ASD {}", meta.year, meta.asd)))?;
        out.push(LabelledSeason { year: meta.year, obs: full.features.weeks.clone(), occupancy });
    }
    if out.is_empty() {
        return Err(Error::Input("no training seasons for the HMM".into()));
    }
    Ok(out)
}
