//! Synthetic seasons: weather, FPAR observations and true stage occupancy for
//! districts of simulated corn fields.

use std::f64::consts::PI;

use chrono::{Datelike, Duration, NaiveDate};
use rand::Rng as _;
use rand_distr::{Distribution, Gamma, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::{compute_gdd, agdd_start, DailyMet, FieldInput, FparSample, SeasonInput, SoilProps, Split, WeekGrid};
use crate::rng;
use crate::types::{Stage, StageDistribution, LOCATIONS, STAGES, WEEKS};

pub const LATITUDE_DEG: f64 = 42.0;
const FPAR_STEP_DAYS: i64 = 4;
const RAIN_PROBABILITY: f64 = 0.3;
const RAIN_SHAPE: f64 = 0.8;
const RAIN_MEAN_MM: f64 = 12.0;

/// Year-specific departures from the climatology.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Anomaly {
    pub year: i32,
    #[serde(default)]
    pub temp_offset: f64,
    /// Added from September 1.
    #[serde(default)]
    pub fall_temp_offset: f64,
    #[serde(default = "one")]
    pub rain_factor: f64,
    /// Applied from September 1, on top of `rain_factor`.
    #[serde(default = "one")]
    pub fall_rain_factor: f64,
    #[serde(default)]
    pub planting_shift_days: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub seed: u64,
    pub years: Vec<i32>,
    pub test_years: Vec<i32>,
    /// One entry per district; the district count is its length.
    pub fields_per_asd: Vec<usize>,
    pub planting_doy: f64,
    /// Half-range of the within-district planting spread, days.
    pub planting_spread_days: f64,
    /// AGDD from planting to emergence, silking, grainfill and maturity.
    pub thresholds: [f64; 4],
    /// Drying units needed between maturity and harvest.
    pub drying_units: f64,
    /// A post-planting week with less rain than this (mm) is a dry week.
    pub dry_week_mm: f64,
    /// AGDD delay added to later thresholds per dry week.
    pub dry_week_penalty: f64,
    /// Weeks after planting in which dry weeks are counted.
    pub stress_window_weeks: usize,
    /// Scales all random variation; 0 gives a noise-free season with constant rain.
    pub noise_scale: f64,
    pub anomalies: Vec<Anomaly>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            seed: 42,
            years: (2003..=2019).collect(),
            test_years: vec![2009, 2012, 2014, 2019],
            fields_per_asd: vec![10, 12, 14, 11, 13, 12, 9, 11, 14],
            planting_doy: 122.0,
            planting_spread_days: 10.0,
            thresholds: [125.0, 800.0, 1000.0, 1400.0],
            drying_units: 40.0,
            dry_week_mm: 10.0,
            dry_week_penalty: 25.0,
            stress_window_weeks: 6,
            noise_scale: 1.0,
            anomalies: vec![
                Anomaly { year: 2009, temp_offset: -1.0, fall_temp_offset: -1.0, rain_factor: 1.1, fall_rain_factor: 1.8, planting_shift_days: 5.0 },
                Anomaly { year: 2012, temp_offset: 1.5, fall_temp_offset: 0.0, rain_factor: 0.5, fall_rain_factor: 1.0, planting_shift_days: -3.0 },
                Anomaly { year: 2014, temp_offset: 0.0, fall_temp_offset: 0.0, rain_factor: 1.5, fall_rain_factor: 1.0, planting_shift_days: 0.0 },
                Anomaly { year: 2019, temp_offset: 0.0, fall_temp_offset: -1.5, rain_factor: 1.2, fall_rain_factor: 1.0, planting_shift_days: 10.0 },
            ],
        }
    }
}

impl SimConfig {
    pub fn asd_count(&self) -> usize {
        self.fields_per_asd.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.years.is_empty() {
            return Err(Error::Config("no years to simulate".into()));
        }
        let mut sorted = self.years.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.years.len() {
            return Err(Error::Config("duplicate years".into()));
        }
        if self.fields_per_asd.is_empty() || self.fields_per_asd.len() > LOCATIONS {
            return Err(Error::Config(format!("district count must be 1..={LOCATIONS}")));
        }
        if self.fields_per_asd.contains(&0) {
            return Err(Error::Config("every district needs at least one field".into()));
        }
        if self.thresholds.windows(2).any(|w| w[1] <= w[0]) || self.thresholds[0] <= 0.0 {
            return Err(Error::Config("stage thresholds must be positive and strictly increasing".into()));
        }
        let finite = [
            self.planting_doy,
            self.planting_spread_days,
            self.drying_units,
            self.dry_week_mm,
            self.dry_week_penalty,
            self.noise_scale,
        ];
        if finite.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Config("simulation parameters must be finite and non-negative".into()));
        }
        if !(100.0..=170.0).contains(&self.planting_doy) {
            return Err(Error::Config("planting day must lie between DOY 100 and 170".into()));
        }
        if self.drying_units <= 0.0 {
            return Err(Error::Config("drying units must be positive".into()));
        }
        Ok(())
    }

    pub fn anomaly(&self, year: i32) -> Anomaly {
        self.anomalies.iter().find(|a| a.year == year).cloned().unwrap_or(Anomaly {
            year,
            temp_offset: 0.0,
            fall_temp_offset: 0.0,
            rain_factor: 1.0,
            fall_rain_factor: 1.0,
            planting_shift_days: 0.0,
        })
    }

    pub fn split(&self) -> Result<Split> {
        if let Some(y) = self.test_years.iter().find(|y| !self.years.contains(y)) {
            return Err(Error::Config(format!("test year {y} is not simulated")));
        }
        let split = Split {
            train_years: self.years.iter().filter(|y| !self.test_years.contains(y)).copied().collect(),
            test_years: self.test_years.clone(),
        };
        split.validate()?;
        Ok(split)
    }
}

/// Mean daily temperature climatology, °C.
pub fn climatology_tmean(doy: u32) -> f64 {
    10.0 + 14.0 * (2.0 * PI * (doy as f64 - 105.0) / 365.0).sin()
}

/// Day length in seconds at the simulated latitude.
pub fn daylength_seconds(doy: u32) -> f64 {
    let lat = LATITUDE_DEG.to_radians();
    let decl = (23.44f64).to_radians() * (2.0 * PI * (284.0 + doy as f64) / 365.0).sin();
    let x = (-lat.tan() * decl.tan()).clamp(-1.0, 1.0);
    86_400.0 * x.acos() / PI
}

fn clear_sky_srad(doy: u32) -> f64 {
    190.0 + 110.0 * (2.0 * PI * (doy as f64 - 80.0) / 365.0).sin()
}

/// District temperature offset (north-south rows of a 3×3 layout).
pub fn asd_temp_offset(asd: usize) -> f64 {
    0.8 * ((asd / 3) as f64 - 1.0)
}

/// District planting offset in days (later in the cooler north).
pub fn asd_planting_offset(asd: usize) -> f64 {
    -3.0 * ((asd / 3) as f64 - 1.0)
}

/// Stratified offset in [-1, 1] for item `j` of `n`.
fn stratified(j: usize, n: usize) -> f64 {
    2.0 * ((j as f64 + 0.5) / n as f64) - 1.0
}

#[derive(Clone, Debug, PartialEq)]
pub struct FieldSim {
    pub met: Vec<DailyMet>,
    pub fpar: Vec<FparSample>,
    pub soil: SoilProps,
    pub planting: NaiveDate,
    /// Dates of entering Emerged, Silking, Grainfill, Mature and Harvested, if reached.
    pub transitions: [Option<NaiveDate>; STAGES - 1],
    /// Daily AGDD since April 8, aligned with `met`.
    pub agdd: Vec<f64>,
}

impl FieldSim {
    pub fn stage_on(&self, date: NaiveDate) -> Stage {
        let k = self.transitions.iter().take_while(|t| matches!(t, Some(d) if *d <= date)).count();
        Stage::ALL[k]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AsdSim {
    pub asd: usize,
    pub fields: Vec<FieldSim>,
    /// True weekly occupancy at the end of each week slot.
    pub occupancy: Vec<StageDistribution>,
}

impl AsdSim {
    pub fn progress(&self) -> Vec<[f64; STAGES]> {
        self.occupancy.iter().map(|d| d.cumulative_percent()).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SeasonSim {
    pub year: i32,
    pub asds: Vec<AsdSim>,
}

impl SeasonSim {
    pub fn to_inputs(&self) -> Vec<SeasonInput> {
        self.asds
            .iter()
            .map(|a| SeasonInput {
                year: self.year,
                asd: a.asd,
                fields: a
                    .fields
                    .iter()
                    .map(|f| FieldInput { met: f.met.clone(), fpar: f.fpar.clone(), soil: f.soil })
                    .collect(),
                progress: a.progress(),
            })
            .collect()
    }
}

struct AsdWeather {
    tmean: Vec<f64>,
    rain: Vec<f64>,
    srad: Vec<f64>,
}

fn asd_weather(cfg: &SimConfig, year: i32, asd: usize, days: usize) -> AsdWeather {
    let noise = cfg.noise_scale;
    let an = cfg.anomaly(year);
    let mut yr = rng::stream(cfg.seed, "year", &[year as u64]);
    let std = Normal::new(0.0, 1.0).expect("valid normal");
    let year_temp = 0.7 * noise * std.sample(&mut yr);
    let year_rain = (0.25 * noise * std.sample(&mut yr)).exp();

    let mut tr = rng::stream(cfg.seed, "temperature", &[year as u64, asd as u64]);
    let mut rr = rng::stream(cfg.seed, "rain", &[year as u64, asd as u64]);
    let mut sr = rng::stream(cfg.seed, "srad", &[year as u64, asd as u64]);
    let gamma = Gamma::new(RAIN_SHAPE, RAIN_MEAN_MM / RAIN_SHAPE).expect("valid gamma");
    let sept = NaiveDate::from_ymd_opt(year, 9, 1).unwrap().ordinal() as usize;
    let mut ar = 0.0;
    let mut w = AsdWeather { tmean: Vec::with_capacity(days), rain: Vec::with_capacity(days), srad: Vec::with_capacity(days) };
    for i in 0..days {
        let doy = i as u32 + 1;
        let fall = doy as usize >= sept;
        ar = 0.7 * ar + 1.5 * noise * std.sample(&mut tr);
        let t = climatology_tmean(doy)
            + asd_temp_offset(asd)
            + year_temp
            + an.temp_offset
            + if fall { an.fall_temp_offset } else { 0.0 }
            + ar;
        let wet: f64 = rr.random();
        let amount = gamma.sample(&mut rr);
        let factor = an.rain_factor * year_rain * if fall { an.fall_rain_factor } else { 1.0 };
        let rain = if noise == 0.0 {
            RAIN_PROBABILITY * RAIN_MEAN_MM * factor
        } else if wet < RAIN_PROBABILITY {
            amount * factor
        } else {
            0.0
        };
        let cloud = if rain > 1.0 { 0.6 } else { 1.0 };
        let s = (clear_sky_srad(doy) * cloud * (1.0 + 0.08 * noise * std.sample(&mut sr))).max(5.0);
        w.tmean.push(t);
        w.rain.push(rain);
        w.srad.push(s);
    }
    w
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn true_fpar(day: i64, planting: i64, tr: &[Option<i64>; STAGES - 1], peak: f64) -> f64 {
    let base = 0.15;
    let Some(em) = tr[0] else {
        return base;
    };
    if day < planting.max(em - 5) {
        return base;
    }
    let mut v = base + (peak - base) * logistic((day - em) as f64 / 6.0 - 5.0);
    if let Some(mat) = tr[3] {
        let senesced = 0.3;
        v -= (v - senesced) * logistic((day - mat) as f64 / 6.0 + 1.0);
    }
    if let Some(h) = tr[4] {
        if day >= h {
            v = 0.12;
        }
    }
    v
}

fn simulate_field(cfg: &SimConfig, year: i32, asd: usize, j: usize, n: usize, w: &AsdWeather) -> Result<FieldSim> {
    let noise = cfg.noise_scale;
    let an = cfg.anomaly(year);
    let std = Normal::new(0.0, 1.0).expect("valid normal");
    let mut fr = rng::stream(cfg.seed, "field", &[year as u64, asd as u64, j as u64]);
    let mut yr = rng::stream(cfg.seed, "planting", &[year as u64]);
    let year_shift = 4.0 * noise * std.sample(&mut yr);

    let jan1 = NaiveDate::from_ymd_opt(year, 1, 1).unwrap();
    let days = w.tmean.len();
    let temp_off = 0.3 * noise * std.sample(&mut fr);
    let rain_mult = (0.2 * noise * std.sample(&mut fr)).exp();
    let plant_jitter = 2.0 * noise * std.sample(&mut fr);
    let cond = 12.0 * (0.4 * ((asd % 3) as f64 - 1.0) + 0.3 * std.sample(&mut fr)).exp();
    let bd = 1.4 + 0.05 * ((asd % 3) as f64 - 1.0) + 0.04 * std.sample(&mut fr);
    let soil = SoilProps { cond, bd: bd.max(0.9) };
    // local exposure and haze; like soil, this is field structure rather than noise
    let srad_mult = (0.05 * std.sample(&mut fr)).exp();

    let mut met = Vec::with_capacity(days);
    for i in 0..days {
        let doy = i as u32 + 1;
        let t = w.tmean[i] + temp_off;
        let rain = w.rain[i] * rain_mult;
        met.push(DailyMet {
            date: jan1 + Duration::days(i as i64),
            tmax: t + 6.0,
            tmin: t - 6.0,
            rain,
            srad: w.srad[i] * srad_mult,
            daylength: daylength_seconds(doy),
        });
    }
    let agdd = crate::preprocess::accumulate_agdd(&met, year)?;

    let start = agdd_start(year).ordinal0() as f64 + 1.0;
    let pd = cfg.planting_doy
        + asd_planting_offset(asd)
        + year_shift
        + an.planting_shift_days
        + cfg.planting_spread_days * stratified(j, n)
        + plant_jitter;
    let planting = pd.round().max(start) as i64;
    // cultivar factor, decorrelated from planting order
    let cultivar = 1.0 + 0.05 * stratified((j * 7 + 3) % n, n);
    let stress = (soil.cond / 12.0).clamp(0.5, 2.0);

    let mut dry_weeks = 0usize;
    for wk in 0..cfg.stress_window_weeks {
        let s = planting as usize + 7 * wk;
        if s + 7 > days {
            break;
        }
        let rain: f64 = met[s..s + 7].iter().map(|d| d.rain).sum();
        if rain < cfg.dry_week_mm {
            dry_weeks += 1;
        }
    }
    let penalty = dry_weeks as f64 * cfg.dry_week_penalty * stress;
    let th = cfg.thresholds;
    let targets = [th[0] * cultivar, (th[1] + penalty) * cultivar, (th[2] + penalty) * cultivar, (th[3] + penalty) * cultivar];

    let mut tr: [Option<i64>; STAGES - 1] = [None; STAGES - 1];
    let mut gdd = 0.0;
    let mut drying = 0.0;
    let need_drying = cfg.drying_units * (1.0 + 0.3 * stratified((j * 5 + 1) % n, n));
    for i in planting as usize + 1..days {
        let d = &met[i];
        gdd += compute_gdd(d.tmax, d.tmin)?;
        for (s, t) in targets.iter().enumerate() {
            if tr[s].is_none() && gdd >= *t && (s == 0 || tr[s - 1].is_some()) {
                tr[s] = Some(i as i64);
            }
        }
        if tr[3].is_some_and(|m| (i as i64) > m) && tr[4].is_none() {
            let tmean = (d.tmax + d.tmin) / 2.0;
            let unit = (tmean / 12.0).clamp(0.25, 1.5) * (1.0 - d.rain.min(10.0) / 20.0);
            drying += unit;
            if drying >= need_drying {
                tr[4] = Some(i as i64);
            }
        }
    }

    let peak = (0.82 + 0.1 * (1.4 - soil.bd)).clamp(0.6, 0.9);
    let mut fpar = Vec::new();
    let mut day = 0i64;
    while (day as usize) < days {
        let mut v = true_fpar(day, planting, &tr, peak) + 0.02 * noise * std.sample(&mut fr);
        let c: f64 = fr.random();
        let drop: f64 = fr.random();
        if c < 0.08 * noise {
            v -= 0.4 + 0.2 * drop;
        }
        fpar.push(FparSample { date: jan1 + Duration::days(day), fpar: v.clamp(0.0, 1.0) });
        day += FPAR_STEP_DAYS;
    }

    let to_date = |i: i64| jan1 + Duration::days(i);
    Ok(FieldSim {
        met,
        fpar,
        soil,
        planting: to_date(planting),
        transitions: tr.map(|t| t.map(to_date)),
        agdd,
    })
}

/// Simulate one year for every district.
pub fn simulate_season(cfg: &SimConfig, year: i32) -> Result<SeasonSim> {
    cfg.validate()?;
    let days = NaiveDate::from_ymd_opt(year, 12, 31).unwrap().ordinal() as usize;
    let grid = WeekGrid::new(year);
    let asds = (0..cfg.asd_count())
        .map(|asd| {
            let w = asd_weather(cfg, year, asd, days);
            let n = cfg.fields_per_asd[asd];
            let fields = (0..n).map(|j| simulate_field(cfg, year, asd, j, n, &w)).collect::<Result<Vec<_>>>()?;
            let occupancy = (0..WEEKS)
                .map(|k| {
                    let end = grid.week_end(k);
                    let mut p = [0.0; STAGES];
                    for f in &fields {
                        p[f.stage_on(end) as usize] += 1.0 / n as f64;
                    }
                    StageDistribution::normalized(p)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(AsdSim { asd, fields, occupancy })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SeasonSim { year, asds })
}

#[derive(Clone, Debug)]
pub struct Benchmark {
    pub seasons: Vec<SeasonSim>,
    pub split: Split,
}

impl Benchmark {
    pub fn inputs(&self) -> Vec<SeasonInput> {
        self.seasons.iter().flat_map(|s| s.to_inputs()).collect()
    }
}

/// Simulate all configured years and split them into training and test years.
pub fn make_benchmark(cfg: &SimConfig) -> Result<Benchmark> {
    cfg.validate()?;
    let split = cfg.split()?;
    let seasons = cfg.years.par_iter().map(|&y| simulate_season(cfg, y)).collect::<Result<Vec<_>>>()?;
    Ok(Benchmark { seasons, split })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SimConfig {
        SimConfig { years: vec![2010, 2011], test_years: vec![2011], fields_per_asd: vec![4, 5], ..Default::default() }
    }

    #[test]
    fn occupancy_sums_and_cumulative_order() {
        let s = simulate_season(&small(), 2010).unwrap();
        for a in &s.asds {
            let prog = a.progress();
            for (k, c) in prog.iter().enumerate() {
                assert!(c.windows(2).all(|w| w[1] <= w[0] + 1e-9));
                if k > 0 {
                    for st in 0..STAGES {
                        assert!(c[st] + 1e-9 >= prog[k - 1][st]);
                    }
                }
            }
            assert_eq!(a.occupancy[0].get(Stage::PreEmergence), 1.0);
            assert_eq!(a.occupancy[WEEKS - 1].get(Stage::Harvested), 1.0, "asd {}", a.asd);
        }
    }

    #[test]
    fn agdd_matches_preprocess() {
        let s = simulate_season(&small(), 2011).unwrap();
        let f = &s.asds[1].fields[2];
        assert_eq!(crate::preprocess::accumulate_agdd(&f.met, 2011).unwrap(), f.agdd);
    }

    #[test]
    fn reproducible_and_split() {
        let c = small();
        assert_eq!(simulate_season(&c, 2010).unwrap(), simulate_season(&c, 2010).unwrap());
        let d = SimConfig::default();
        let sp = d.split().unwrap();
        assert_eq!((sp.train_years.len(), sp.test_years.len()), (13, 4));
        let one = SimConfig { years: vec![2010], test_years: vec![], ..Default::default() };
        assert_eq!(one.split().unwrap().train_years, vec![2010]);
        let all_test = SimConfig { years: vec![2010], test_years: vec![2010], ..Default::default() };
        assert!(all_test.split().is_err());
        assert!(simulate_season(&one, 2010).is_ok());
    }

    #[test]
    fn invalid_thresholds_rejected() {
        let c = SimConfig { thresholds: [125.0, 100.0, 1000.0, 1400.0], ..small() };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn daylength_range() {
        assert!(daylength_seconds(172) > daylength_seconds(355));
        assert!((daylength_seconds(80) - 43_200.0).abs() < 1_500.0);
    }
}
