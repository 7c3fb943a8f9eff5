//! Daily field records to scaled weekly district blocks.

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{
    Channel, Sample, ScalingKind, SeasonFeatures, StageDistribution, CHANNELS, FIRST_WEEK_OF_YEAR, STAGES, WEEKS,
};

pub const T_BASE: f64 = 8.0;
pub const T_CAP: f64 = 34.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DailyMet {
    pub date: NaiveDate,
    pub tmax: f64,
    pub tmin: f64,
    /// mm/day
    pub rain: f64,
    /// W/m², daylight mean
    pub srad: f64,
    /// seconds
    pub daylength: f64,
}

impl DailyMet {
    pub fn validate(&self) -> Result<()> {
        let vals = [self.tmax, self.tmin, self.rain, self.srad, self.daylength];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("met record {}", self.date)));
        }
        if self.tmax < self.tmin {
            return Err(Error::Input(format!("{}: tmax {} < tmin {}", self.date, self.tmax, self.tmin)));
        }
        if self.rain < 0.0 || self.srad < 0.0 || !(0.0..=86_400.0).contains(&self.daylength) {
            return Err(Error::Input(format!("{}: rain/srad/daylength out of range", self.date)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FparSample {
    pub date: NaiveDate,
    pub fpar: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoilProps {
    /// Saturated hydraulic conductivity, µm/s.
    pub cond: f64,
    /// Bulk density, g/cm³.
    pub bd: f64,
}

impl SoilProps {
    pub fn validate(&self) -> Result<()> {
        if !(self.cond.is_finite() && self.bd.is_finite() && self.cond > 0.0 && self.bd > 0.0) {
            return Err(Error::Input(format!("soil properties must be positive: {self:?}")));
        }
        Ok(())
    }
}

/// Daily growing degree days, base 8 °C with maximum temperature capped at 34 °C.
///
/// `tmin` is clamped into `[T_BASE, T_CAP]` before averaging, so a day never exceeds 26.
pub fn compute_gdd(tmax: f64, tmin: f64) -> Result<f64> {
    if !(tmax.is_finite() && tmin.is_finite()) {
        return Err(Error::NonFinite("temperature".into()));
    }
    if tmax < tmin {
        return Err(Error::Input(format!("tmax {tmax} < tmin {tmin}")));
    }
    if tmax < T_BASE {
        return Ok(0.0);
    }
    let hi = tmax.min(T_CAP);
    let lo = tmin.clamp(T_BASE, T_CAP);
    Ok(((hi + lo) / 2.0 - T_BASE).max(0.0))
}

pub fn agdd_start(year: i32) -> NaiveDate {
    NaiveDate::from_ymd_opt(year, 4, 8).expect("April 8 exists")
}

fn check_contiguous(days: &[DailyMet]) -> Result<()> {
    for w in days.windows(2) {
        if w[1].date != w[0].date + Duration::days(1) {
            return Err(Error::Input(format!("date gap between {} and {}", w[0].date, w[1].date)));
        }
    }
    Ok(())
}

/// Running GDD total from April 8 of `year`, one value per input day (zero before the start).
pub fn accumulate_agdd(days: &[DailyMet], year: i32) -> Result<Vec<f64>> {
    let start = agdd_start(year);
    match days.first() {
        None => return Err(Error::Input("no met records".into())),
        Some(d) if d.date > start => {
            return Err(Error::Input(format!("met series starts {} after {start}", d.date)));
        }
        _ => {}
    }
    check_contiguous(days)?;
    let mut acc = 0.0;
    days.iter()
        .map(|d| {
            if d.date >= start {
                acc += compute_gdd(d.tmax, d.tmin)?;
            }
            Ok(acc)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SgParams {
    pub trend_half_window: usize,
    pub main_half_window: usize,
    pub gradient_limit: f64,
    pub max_iterations: usize,
}

impl Default for SgParams {
    fn default() -> Self {
        SgParams { trend_half_window: 40, main_half_window: 4, gradient_limit: 0.3, max_iterations: 10 }
    }
}

/// Degree-1 Savitzky–Golay smoothing with windows truncated at the series ends.
///
/// Each output is the value at the centre of a least-squares line fitted over
/// `[i - half, i + half]` clipped to the data, so lines are reproduced exactly
/// everywhere including the edges.
pub fn sg_linear(y: &[f64], half: usize) -> Vec<f64> {
    let n = y.len();
    let mut py = vec![0.0; n + 1];
    let mut pjy = vec![0.0; n + 1];
    for (j, v) in y.iter().enumerate() {
        py[j + 1] = py[j] + v;
        pjy[j + 1] = pjy[j] + j as f64 * v;
    }
    (0..n)
        .map(|i| {
            let l = i.saturating_sub(half);
            let r = (i + half).min(n - 1);
            let cnt = (r - l + 1) as f64;
            if r == l {
                return y[i];
            }
            // offsets x = j - i over [l, r]
            let a = l as f64 - i as f64;
            let b = r as f64 - i as f64;
            let s1 = (a + b) * cnt / 2.0;
            let sq = |k: f64| k * (k + 1.0) * (2.0 * k + 1.0) / 6.0;
            let s2 = if a < 0.0 { sq(-a) + sq(b) } else { sq(b) - sq(a - 1.0) };
            let sy = py[r + 1] - py[l];
            let sxy = (pjy[r + 1] - pjy[l]) - i as f64 * sy;
            (s2 * sy - s1 * sxy) / (cnt * s2 - s1 * s1)
        })
        .collect()
}

/// Drop samples that jump by more than `limit` from the previously kept sample
/// before September 1.
pub fn reject_spikes(samples: &[FparSample], limit: f64) -> Vec<FparSample> {
    let mut kept: Vec<FparSample> = Vec::with_capacity(samples.len());
    for s in samples {
        let sept = NaiveDate::from_ymd_opt(s.date.year(), 9, 1).expect("Sept 1 exists");
        match kept.last() {
            Some(prev) if s.date < sept && (s.fpar - prev.fpar).abs() > limit => {}
            _ => kept.push(*s),
        }
    }
    kept
}

fn interpolate_daily(samples: &[FparSample], start: NaiveDate, end: NaiveDate) -> Vec<f64> {
    let n = (end - start).num_days() + 1;
    let mut out = Vec::with_capacity(n as usize);
    let mut k = 0;
    for d in 0..n {
        let date = start + Duration::days(d);
        while k + 1 < samples.len() && samples[k + 1].date <= date {
            k += 1;
        }
        let s0 = samples[k];
        let v = if date <= s0.date || k + 1 == samples.len() {
            s0.fpar
        } else {
            let s1 = samples[k + 1];
            let span = (s1.date - s0.date).num_days() as f64;
            let t = (date - s0.date).num_days() as f64 / span;
            s0.fpar + t * (s1.fpar - s0.fpar)
        };
        out.push(v);
    }
    out
}

/// Daily smoothed FPAR for `start..=cutoff` using only samples dated on or before `cutoff`.
///
/// Spikes are rejected, the kept samples interpolated to daily values, a long
/// window trend fitted, and the short-window upper envelope iterated until the
/// fitting-effect index stops improving.
pub fn sg_smooth_fpar(samples: &[FparSample], start: NaiveDate, cutoff: NaiveDate, params: &SgParams) -> Result<Vec<f64>> {
    if cutoff < start {
        return Err(Error::Filter(format!("cutoff {cutoff} precedes start {start}")));
    }
    let visible: Vec<FparSample> = samples.iter().filter(|s| s.date <= cutoff).copied().collect();
    if visible.len() < 2 {
        return Err(Error::Filter(format!("fewer than 2 FPAR samples before {cutoff}")));
    }
    if visible.windows(2).any(|w| w[1].date <= w[0].date) {
        return Err(Error::Filter("FPAR samples not strictly increasing in date".into()));
    }
    if visible.iter().any(|s| !s.fpar.is_finite()) {
        return Err(Error::NonFinite("FPAR sample".into()));
    }
    let kept = reject_spikes(&visible, params.gradient_limit);
    if kept.is_empty() {
        return Err(Error::Filter("all FPAR samples rejected".into()));
    }
    let n0 = interpolate_daily(&kept, start, cutoff);
    let trend = sg_linear(&n0, params.trend_half_window);
    let dmax = n0.iter().zip(&trend).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let weights: Vec<f64> = n0
        .iter()
        .zip(&trend)
        .map(|(&v, &t)| if v >= t || dmax == 0.0 { 1.0 } else { 1.0 - (v - t).abs() / dmax })
        .collect();
    let mut current: Vec<f64> = n0.iter().zip(&trend).map(|(&v, &t)| v.max(t)).collect();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for _ in 0..params.max_iterations.max(1) {
        let fitted = sg_linear(&current, params.main_half_window);
        let index: f64 = fitted.iter().zip(&n0).zip(&weights).map(|((f, o), w)| (f - o).abs() * w).sum();
        if let Some((prev, _)) = &best {
            if index >= *prev {
                break;
            }
        }
        current = n0.iter().zip(&fitted).map(|(&o, &f)| o.max(f)).collect();
        best = Some((index, fitted));
    }
    Ok(best.expect("at least one iteration").1)
}

/// Monday–Sunday week slots covering ISO weeks 13 through 51.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WeekGrid {
    pub year: i32,
    first_monday: NaiveDate,
}

impl WeekGrid {
    pub fn new(year: i32) -> Self {
        let first_monday = NaiveDate::from_isoywd_opt(year, FIRST_WEEK_OF_YEAR, Weekday::Mon).expect("ISO week 13 exists");
        WeekGrid { year, first_monday }
    }

    pub fn week_start(&self, slot: usize) -> NaiveDate {
        self.first_monday + Duration::weeks(slot as i64)
    }

    pub fn week_end(&self, slot: usize) -> NaiveDate {
        self.week_start(slot) + Duration::days(6)
    }

    pub fn first_day(&self) -> NaiveDate {
        self.first_monday
    }

    pub fn last_day(&self) -> NaiveDate {
        self.week_end(WEEKS - 1)
    }

    pub fn slot_of(&self, date: NaiveDate) -> Option<usize> {
        let d = (date - self.first_monday).num_days();
        (d >= 0 && d < 7 * WEEKS as i64).then_some(d as usize / 7)
    }
}

/// Weekly field-level meteorology: AGDD at week end, MJ/m²/week, mm/week.
#[derive(Clone, Debug, PartialEq)]
pub struct WeeklyMet {
    pub agdd: Vec<f64>,
    pub srad: Vec<f64>,
    pub rain: Vec<f64>,
}

/// Aggregate daily met onto the week grid. `days` must cover the whole grid
/// and start on or before April 8.
pub fn weekly_aggregate(days: &[DailyMet], grid: &WeekGrid) -> Result<WeeklyMet> {
    for d in days {
        d.validate()?;
    }
    let agdd = accumulate_agdd(days, grid.year)?;
    let first = days[0].date;
    let offset = (grid.first_day() - first).num_days();
    let last_needed = grid.last_day();
    if offset < 0 || days.last().map(|d| d.date) < Some(last_needed) {
        return Err(Error::Input(format!(
            "met series {}..{} does not cover {}..{}",
            first,
            days.last().unwrap().date,
            grid.first_day(),
            last_needed
        )));
    }
    let mut out = WeeklyMet { agdd: vec![0.0; WEEKS], srad: vec![0.0; WEEKS], rain: vec![0.0; WEEKS] };
    for k in 0..WEEKS {
        let s = offset as usize + 7 * k;
        let week = &days[s..s + 7];
        out.srad[k] = week.iter().map(|d| d.srad * d.daylength * 1e-6).sum();
        out.rain[k] = week.iter().map(|d| d.rain).sum();
        out.agdd[k] = agdd[s + 6];
    }
    Ok(out)
}

/// Week means of a daily series that starts at `start`, for slots `0..=last_slot`.
pub fn weekly_means(daily: &[f64], start: NaiveDate, grid: &WeekGrid, last_slot: usize) -> Result<Vec<f64>> {
    (0..=last_slot)
        .map(|k| {
            let s = (grid.week_start(k) - start).num_days();
            if s < 0 || s as usize + 7 > daily.len() {
                return Err(Error::Input(format!("daily series does not cover week slot {k}")));
            }
            Ok(daily[s as usize..s as usize + 7].iter().sum::<f64>() / 7.0)
        })
        .collect()
}

/// Raw per-field weekly values in the order FPAR, AGDD, srad, rain, cond, bd.
pub type FieldWeek = [f64; 6];

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, var.sqrt())
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        (s[n / 2 - 1] + s[n / 2]) / 2.0
    }
}

/// District mean and (population) standard deviation per input; rain uses the median.
pub fn asd_aggregate_week(fields: &[FieldWeek]) -> Result<[f64; CHANNELS]> {
    if fields.is_empty() {
        return Err(Error::Input("district has no fields".into()));
    }
    let mut out = [0.0; CHANNELS];
    for q in 0..6 {
        let col: Vec<f64> = fields.iter().map(|f| f[q]).collect();
        let (m, s) = mean_std(&col);
        out[2 * q] = if q == 3 { median(&col) } else { m };
        out[2 * q + 1] = s;
    }
    Ok(out)
}

/// Aggregate per-field weekly series (each `[weeks × 6]`) into district rows.
pub fn asd_aggregate(fields: &[Vec<FieldWeek>]) -> Result<Vec<[f64; CHANNELS]>> {
    let Some(first) = fields.first() else {
        return Err(Error::Input("district has no fields".into()));
    };
    if fields.iter().any(|f| f.len() != first.len()) {
        return Err(Error::shape("asd_aggregate", "fields have different week counts"));
    }
    (0..first.len())
        .map(|k| {
            let week: Vec<FieldWeek> = fields.iter().map(|f| f[k]).collect();
            asd_aggregate_week(&week)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub kind: ScalingKind,
    /// Mean (Z-score) or minimum (MinMax).
    pub a: f64,
    /// Standard deviation (Z-score) or maximum (MinMax).
    pub b: f64,
}

impl ChannelStats {
    pub fn apply(&self, v: f64) -> f64 {
        match self.kind {
            ScalingKind::ZScore => (v - self.a) / self.b,
            ScalingKind::MinMax => (v - self.a) / (self.b - self.a),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingStats {
    pub channels: Vec<ChannelStats>,
}

impl ScalingStats {
    /// Fit on unscaled district blocks. Callers pass training seasons only.
    pub fn fit(blocks: &[&[[f64; CHANNELS]]]) -> Result<Self> {
        let rows: Vec<&[f64; CHANNELS]> = blocks.iter().flat_map(|b| b.iter()).collect();
        if rows.is_empty() {
            return Err(Error::Scaling("no rows to fit".into()));
        }
        let channels = Channel::ALL
            .iter()
            .enumerate()
            .map(|(c, ch)| {
                let col: Vec<f64> = rows.iter().map(|r| r[c]).collect();
                let st = match ch.scaling() {
                    ScalingKind::ZScore => {
                        let (m, s) = mean_std(&col);
                        ChannelStats { kind: ScalingKind::ZScore, a: m, b: s }
                    }
                    ScalingKind::MinMax => {
                        let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
                        let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                        ChannelStats { kind: ScalingKind::MinMax, a: lo, b: hi }
                    }
                };
                let spread = match st.kind {
                    ScalingKind::ZScore => st.b,
                    ScalingKind::MinMax => st.b - st.a,
                };
                if !(spread.is_finite() && spread > 1e-12) {
                    return Err(Error::Scaling(format!("degenerate statistics for {}", ch.name())));
                }
                Ok(st)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ScalingStats { channels })
    }

    pub fn scale_row(&self, row: &[f64; CHANNELS]) -> [f64; CHANNELS] {
        std::array::from_fn(|c| self.channels[c].apply(row[c]))
    }
}

/// Scale observed weeks and pad everything after `cutoff`.
pub fn standardize_and_pad(
    raw: &[[f64; CHANNELS]],
    cutoff: usize,
    location: usize,
    stats: &ScalingStats,
) -> Result<SeasonFeatures> {
    if raw.len() != WEEKS {
        return Err(Error::shape("standardize_and_pad", format!("{} weeks", raw.len())));
    }
    if stats.channels.len() != CHANNELS {
        return Err(Error::Scaling(format!("{} channel stats", stats.channels.len())));
    }
    let f = SeasonFeatures {
        weeks: raw.iter().map(|r| stats.scale_row(r)).collect(),
        location,
        cutoff_week: cutoff,
    }
    .repadded();
    f.validate()?;
    Ok(f)
}

/// One field's inputs for a season.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldInput {
    pub met: Vec<DailyMet>,
    pub fpar: Vec<FparSample>,
    pub soil: SoilProps,
}

/// One district-season: fields plus weekly cumulative stage percentages (39 rows).
#[derive(Clone, Debug, PartialEq)]
pub struct SeasonInput {
    pub year: i32,
    pub asd: usize,
    pub fields: Vec<FieldInput>,
    pub progress: Vec<[f64; STAGES]>,
}

/// Unscaled district blocks for every cutoff: `blocks[c]` holds 39 rows, of which rows `> c` are
/// unused (they repeat the full-season values for non-FPAR inputs and the last FPAR value).
pub fn season_blocks(season: &SeasonInput, params: &SgParams) -> Result<Vec<Vec<[f64; CHANNELS]>>> {
    if season.fields.is_empty() {
        return Err(Error::Input(format!("year {} ASD {}: no fields", season.year, season.asd)));
    }
    let grid = WeekGrid::new(season.year);
    let ctx = |e: Error| match e {
        Error::Input(m) => Error::Input(format!("year {} ASD {}: {m}", season.year, season.asd)),
        Error::Filter(m) => Error::Filter(format!("year {} ASD {}: {m}", season.year, season.asd)),
        other => other,
    };
    // per field: weekly met plus FPAR weekly means per cutoff
    let per_field: Vec<(WeeklyMet, Vec<Vec<f64>>)> = season
        .fields
        .iter()
        .map(|f| {
            f.soil.validate()?;
            let met = weekly_aggregate(&f.met, &grid)?;
            let start = f.met[0].date;
            let fpar = (0..WEEKS)
                .map(|c| {
                    let daily = sg_smooth_fpar(&f.fpar, start, grid.week_end(c), params)?;
                    weekly_means(&daily, start, &grid, c)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((met, fpar))
        })
        .collect::<Result<Vec<_>>>()
        .map_err(ctx)?;
    (0..WEEKS)
        .map(|c| {
            let fields: Vec<Vec<FieldWeek>> = season
                .fields
                .iter()
                .zip(&per_field)
                .map(|(f, (met, fpar))| {
                    (0..WEEKS)
                        .map(|k| {
                            let fp = fpar[c][k.min(c)];
                            [fp, met.agdd[k], met.srad[k], met.rain[k], f.soil.cond, f.soil.bd]
                        })
                        .collect()
                })
                .collect();
            asd_aggregate(&fields)
        })
        .collect()
}

/// Train/test year split.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train_years: Vec<i32>,
    pub test_years: Vec<i32>,
}

impl Split {
    pub fn validate(&self) -> Result<()> {
        if self.train_years.is_empty() {
            return Err(Error::Config("split has no training years".into()));
        }
        if self.test_years.iter().any(|y| self.train_years.contains(y)) {
            return Err(Error::Config("a test year also appears in training".into()));
        }
        Ok(())
    }

    pub fn all_years(&self) -> Vec<i32> {
        let mut v: Vec<i32> = self.train_years.iter().chain(&self.test_years).copied().collect();
        v.sort_unstable();
        v
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeasonMeta {
    pub year: i32,
    pub asd: usize,
    pub fields: usize,
}

/// The scaled in-season dataset: `samples` ordered by year, district, cutoff.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub stats: ScalingStats,
    pub split: Split,
    pub seasons: Vec<SeasonMeta>,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn years(&self) -> Vec<i32> {
        let mut y: Vec<i32> = self.seasons.iter().map(|s| s.year).collect();
        y.dedup();
        y
    }

    pub fn asd_count(&self, year: i32) -> usize {
        self.seasons.iter().filter(|s| s.year == year).count()
    }

    pub fn field_counts(&self, year: i32) -> Vec<f64> {
        self.seasons.iter().filter(|s| s.year == year).map(|s| s.fields as f64).collect()
    }

    pub fn samples_for_years(&self, years: &[i32]) -> Vec<&Sample> {
        self.samples.iter().filter(|s| years.contains(&s.year)).collect()
    }

    /// The item for (year, district, cutoff), if present.
    pub fn sample(&self, year: i32, asd: usize, cutoff: usize) -> Option<&Sample> {
        let idx = self.seasons.iter().position(|s| s.year == year && s.asd == asd)?;
        self.samples.get(idx * WEEKS + cutoff)
    }
}

/// Build the 39-cutoff dataset for every season, fitting scaling on training years only.
pub fn build_dataset(seasons: &[SeasonInput], split: &Split, params: &SgParams) -> Result<Dataset> {
    split.validate()?;
    for s in seasons {
        if s.progress.len() != WEEKS {
            return Err(Error::Input(format!(
                "year {} ASD {}: {} progress weeks, expected {WEEKS}",
                s.year,
                s.asd,
                s.progress.len()
            )));
        }
        if !split.train_years.contains(&s.year) && !split.test_years.contains(&s.year) {
            return Err(Error::Config(format!("year {} is not in the split", s.year)));
        }
    }
    let blocks: Vec<Vec<Vec<[f64; CHANNELS]>>> =
        seasons.par_iter().map(|s| season_blocks(s, params)).collect::<Result<Vec<_>>>()?;
    let train_blocks: Vec<&[[f64; CHANNELS]]> = seasons
        .iter()
        .zip(&blocks)
        .filter(|(s, _)| split.train_years.contains(&s.year))
        .map(|(_, b)| b[WEEKS - 1].as_slice())
        .collect();
    let stats = ScalingStats::fit(&train_blocks)?;
    let mut samples = Vec::with_capacity(seasons.len() * WEEKS);
    for (s, b) in seasons.iter().zip(&blocks) {
        for (c, block) in b.iter().enumerate() {
            let target = StageDistribution::from_cumulative_percent(&s.progress[c]).map_err(|e| match e {
                Error::Input(m) => Error::Input(format!("year {} ASD {} week {c}: {m}", s.year, s.asd)),
                other => other,
            })?;
            samples.push(Sample { year: s.year, asd: s.asd, features: standardize_and_pad(block, c, s.asd, &stats)?, target });
        }
    }
    let seasons_meta = seasons.iter().map(|s| SeasonMeta { year: s.year, asd: s.asd, fields: s.fields.len() }).collect();
    Ok(Dataset { stats, split: split.clone(), seasons: seasons_meta, samples })
}
