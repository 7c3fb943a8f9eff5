//! Loss and evaluation metrics, state aggregation, and the metrics report.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::Dataset;
use crate::types::{Sample, Stage, StageDistribution, STAGES, WEEKS};

pub use crate::architectures::KLD_FLOOR;

fn check(p: &[f64], what: &str) -> Result<()> {
    let s: f64 = p.iter().sum();
    if p.is_empty() || p.iter().any(|v| !v.is_finite() || *v < 0.0) || (s - 1.0).abs() > StageDistribution::TOLERANCE {
        return Err(Error::Contract(format!("{what} is not a probability distribution")));
    }
    Ok(())
}

/// KL divergence of `q` from `p`. Entries of `q` where `p > 0` are floored at
/// 1e-7 before renormalising; `p = 0` terms vanish.
pub fn kld(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::shape("kld", format!("{} vs {}", p.len(), q.len())));
    }
    check(p, "target")?;
    check(q, "estimate")?;
    Ok(crate::autodiff::kl_row(p, q, KLD_FLOOR))
}

pub fn kld_loss(p: &StageDistribution, q: &StageDistribution) -> f64 {
    kld(p.as_array(), q.as_array()).expect("stage distributions are valid")
}

/// Nash–Sutcliffe efficiency; `None` when the observed series is constant.
pub fn nse(observed: &[f64], modeled: &[f64]) -> Result<Option<f64>> {
    if observed.len() != modeled.len() || observed.len() < 2 {
        return Err(Error::Contract(format!(
            "NSE needs equal-length series of at least 2 values ({} vs {})",
            observed.len(),
            modeled.len()
        )));
    }
    if observed.iter().chain(modeled).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("NSE input".into()));
    }
    let mean = observed.iter().sum::<f64>() / observed.len() as f64;
    let den: f64 = observed.iter().map(|o| (o - mean) * (o - mean)).sum();
    if den == 0.0 {
        return Ok(None);
    }
    let num: f64 = observed.iter().zip(modeled).map(|(o, m)| (m - o) * (m - o)).sum();
    Ok(Some(1.0 - num / den))
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::shape("cosine_similarity", format!("{} vs {}", a.len(), b.len())));
    }
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Contract("cosine similarity of a zero vector".into()));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Field-count weighted average of district estimates.
pub fn state_aggregate(estimates: &[StageDistribution], counts: &[f64]) -> Result<StageDistribution> {
    if estimates.len() != counts.len() || estimates.is_empty() {
        return Err(Error::shape("state_aggregate", format!("{} estimates, {} counts", estimates.len(), counts.len())));
    }
    if counts.iter().any(|c| !c.is_finite() || *c < 0.0) {
        return Err(Error::Contract("field counts must be non-negative".into()));
    }
    let total: f64 = counts.iter().sum();
    if total <= 0.0 {
        return Err(Error::Contract("all field counts are zero".into()));
    }
    let mut p = [0.0; STAGES];
    for (e, c) in estimates.iter().zip(counts) {
        for s in 0..STAGES {
            p[s] += c / total * e.as_array()[s];
        }
    }
    StageDistribution::normalized(p)
}

/// Anything that turns in-season items into stage distributions.
pub trait StageEstimator: Sync {
    fn label(&self) -> String;
    fn estimate(&self, items: &[&Sample]) -> Result<Vec<StageDistribution>>;
}

/// Returns each item's own target.
#[derive(Clone, Copy, Debug, Default)]
pub struct PerfectOracle;

impl StageEstimator for PerfectOracle {
    fn label(&self) -> String {
        "oracle".into()
    }

    fn estimate(&self, items: &[&Sample]) -> Result<Vec<StageDistribution>> {
        Ok(items.iter().map(|s| s.target).collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct YearReport {
    pub year: i32,
    /// NSE per stage over the season's weekly state occupancy (percent); `null` when undefined.
    pub nse: Vec<Option<f64>>,
    /// Cosine similarity per week.
    pub cs: Vec<f64>,
    /// State-level weekly occupancy, percent.
    pub observed: Vec<[f64; STAGES]>,
    pub estimated: Vec<[f64; STAGES]>,
    /// District weights used for aggregation.
    pub weights: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub stage: String,
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub estimator: String,
    pub years: Vec<YearReport>,
    pub nse_summary: Vec<StageSummary>,
    /// Mean CS per week across years.
    pub cs_mean: Vec<f64>,
    /// Mean of the per-stage NSE means.
    pub mean_nse: Option<f64>,
}

fn mean_std(v: &[f64]) -> (Option<f64>, Option<f64>) {
    if v.is_empty() {
        return (None, None);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let s = (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n).sqrt();
    (Some(m), Some(s))
}

impl MetricsReport {
    pub fn from_years(estimator: String, years: Vec<YearReport>) -> Self {
        let nse_summary: Vec<StageSummary> = Stage::ALL
            .iter()
            .map(|st| {
                let vals: Vec<f64> = years.iter().filter_map(|y| y.nse[*st as usize]).collect();
                let (mean, std) = mean_std(&vals);
                StageSummary { stage: st.name().into(), mean, std, n: vals.len() }
            })
            .collect();
        let cs_mean = (0..WEEKS)
            .map(|k| years.iter().map(|y| y.cs[k]).sum::<f64>() / years.len().max(1) as f64)
            .collect();
        let means: Vec<f64> = nse_summary.iter().filter_map(|s| s.mean).collect();
        let mean_nse = (!means.is_empty()).then(|| means.iter().sum::<f64>() / means.len() as f64);
        MetricsReport { estimator, years, nse_summary, cs_mean, mean_nse }
    }

    pub fn stage_nse(&self, stage: Stage) -> Option<f64> {
        self.nse_summary[stage as usize].mean
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Per-stage NSE table: `year,stage,nse`.
    pub fn nse_csv(&self) -> String {
        let mut s = String::from("year,stage,nse\n");
        for y in &self.years {
            for st in Stage::ALL {
                let v = y.nse[st as usize].map_or_else(|| "NA".to_string(), |v| v.to_string());
                s.push_str(&format!("{},{},{}\n", y.year, st.name(), v));
            }
        }
        s
    }

    /// Weekly CS: `year,week_of_year,cs`.
    pub fn cs_csv(&self) -> String {
        let mut s = String::from("year,week_of_year,cs\n");
        for y in &self.years {
            for (k, v) in y.cs.iter().enumerate() {
                s.push_str(&format!("{},{},{}\n", y.year, k as u32 + crate::types::FIRST_WEEK_OF_YEAR, v));
            }
        }
        s
    }

    /// Cumulative progress curves, observed and estimated.
    pub fn progress_csv(&self) -> String {
        let names: Vec<&str> = Stage::ALL.iter().map(|s| s.name()).collect();
        let mut s = format!("year,week_of_year,source,{}\n", names.join(","));
        for y in &self.years {
            for (src, rows) in [("observed", &y.observed), ("estimated", &y.estimated)] {
                for (k, r) in rows.iter().enumerate() {
                    let d = StageDistribution::normalized(r.map(|v| v.max(0.0))).map(|d| d.cumulative_percent());
                    let cum = d.unwrap_or([0.0; STAGES]);
                    let vals: Vec<String> = cum.iter().map(|v| v.to_string()).collect();
                    s.push_str(&format!("{},{},{},{}\n", y.year, k as u32 + crate::types::FIRST_WEEK_OF_YEAR, src, vals.join(",")));
                }
            }
        }
        s
    }
}

/// Evaluate an estimator on whole seasons: each week's state estimate uses every
/// district's item with that week as cutoff.
pub fn evaluate(estimator: &dyn StageEstimator, ds: &Dataset, years: &[i32]) -> Result<MetricsReport> {
    let mut reports = Vec::with_capacity(years.len());
    for &year in years {
        let metas: Vec<_> = ds.seasons.iter().filter(|m| m.year == year).collect();
        if metas.is_empty() {
            return Err(Error::Input(format!("year {year} not in dataset")));
        }
        let weights: Vec<f64> = metas.iter().map(|m| m.fields as f64).collect();
        let mut items = Vec::with_capacity(metas.len() * WEEKS);
        for m in &metas {
            for c in 0..WEEKS {
                items.push(ds.sample(year, m.asd, c).ok_or_else(|| Error::Input(format!("missing item {year}/{}/{c}", m.asd)))?);
            }
        }
        let est = estimator.estimate(&items)?;
        if est.len() != items.len() {
            return Err(Error::Contract("estimator returned the wrong number of estimates".into()));
        }
        let mut observed = Vec::with_capacity(WEEKS);
        let mut estimated = Vec::with_capacity(WEEKS);
        let mut cs = Vec::with_capacity(WEEKS);
        for c in 0..WEEKS {
            let t: Vec<StageDistribution> = (0..metas.len()).map(|a| items[a * WEEKS + c].target).collect();
            let e: Vec<StageDistribution> = (0..metas.len()).map(|a| est[a * WEEKS + c]).collect();
            let to = state_aggregate(&t, &weights)?;
            let eo = state_aggregate(&e, &weights)?;
            cs.push(cosine_similarity(to.as_array(), eo.as_array())?);
            observed.push(to.as_array().map(|v| 100.0 * v));
            estimated.push(eo.as_array().map(|v| 100.0 * v));
        }
        let nse = (0..STAGES)
            .map(|s| {
                let o: Vec<f64> = observed.iter().map(|r| r[s]).collect();
                let m: Vec<f64> = estimated.iter().map(|r| r[s]).collect();
                nse(&o, &m)
            })
            .collect::<Result<Vec<_>>>()?;
        reports.push(YearReport { year, nse, cs, observed, estimated, weights });
    }
    Ok(MetricsReport::from_years(estimator.label(), reports))
}
