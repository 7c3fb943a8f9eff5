//! Domain types shared across the pipeline.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Weekly slots per season (WOY 13 through 51).
pub const WEEKS: usize = 39;
pub const CHANNELS: usize = 12;
pub const LOCATIONS: usize = 9;
pub const STAGES: usize = 6;
pub const FIRST_WEEK_OF_YEAR: u32 = 13;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Stage {
    PreEmergence,
    Emerged,
    Silking,
    Grainfill,
    Mature,
    Harvested,
}

impl Stage {
    pub const ALL: [Stage; STAGES] = [
        Stage::PreEmergence,
        Stage::Emerged,
        Stage::Silking,
        Stage::Grainfill,
        Stage::Mature,
        Stage::Harvested,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::PreEmergence => "pre_emergence",
            Stage::Emerged => "emerged",
            Stage::Silking => "silking",
            Stage::Grainfill => "grainfill",
            Stage::Mature => "mature",
            Stage::Harvested => "harvested",
        }
    }
}

/// Fraction of the crop in each of the six stages.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageDistribution([f64; STAGES]);

impl StageDistribution {
    pub const TOLERANCE: f64 = 1e-9;

    pub fn new(p: [f64; STAGES]) -> Result<Self> {
        let s: f64 = p.iter().sum();
        if p.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) || (s - 1.0).abs() > Self::TOLERANCE {
            return Err(Error::Contract(format!("invalid stage distribution {p:?}")));
        }
        Ok(StageDistribution(p))
    }

    /// Renormalise a non-negative vector with positive sum.
    pub fn normalized(p: [f64; STAGES]) -> Result<Self> {
        let s: f64 = p.iter().sum();
        if p.iter().any(|v| !v.is_finite() || *v < 0.0) || s <= 0.0 {
            return Err(Error::Contract(format!("cannot normalise {p:?}")));
        }
        Ok(StageDistribution(p.map(|v| v / s)))
    }

    pub fn from_slice(p: &[f64]) -> Result<Self> {
        let arr: [f64; STAGES] = p
            .try_into()
            .map_err(|_| Error::shape("stage_distribution", format!("{} values", p.len())))?;
        Self::new(arr)
    }

    pub fn uniform() -> Self {
        StageDistribution([1.0 / STAGES as f64; STAGES])
    }

    pub fn one_hot(stage: Stage) -> Self {
        let mut p = [0.0; STAGES];
        p[stage as usize] = 1.0;
        StageDistribution(p)
    }

    pub fn as_array(&self) -> &[f64; STAGES] {
        &self.0
    }

    pub fn get(&self, stage: Stage) -> f64 {
        self.0[stage as usize]
    }

    /// Cumulative percentages: entry `k` is the share (0–100) at stage `k` or later.
    pub fn cumulative_percent(&self) -> [f64; STAGES] {
        let mut out = [0.0; STAGES];
        let mut acc = 0.0;
        for k in (0..STAGES).rev() {
            acc += self.0[k];
            out[k] = 100.0 * acc;
        }
        out
    }

    /// Occupancy from cumulative percentages by differencing adjacent curves.
    pub fn from_cumulative_percent(cum: &[f64; STAGES]) -> Result<Self> {
        let mut p = [0.0; STAGES];
        for k in 0..STAGES {
            let next = if k + 1 < STAGES { cum[k + 1] } else { 0.0 };
            let d = (cum[k] - next) / 100.0;
            if d < -1e-9 || !d.is_finite() {
                return Err(Error::Input(format!("cumulative progress not non-increasing across stages: {cum:?}")));
            }
            p[k] = d.max(0.0);
        }
        Self::normalized(p)
    }
}

/// Channel order of the 12 weekly inputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Channel {
    FparMean,
    FparStd,
    AgddMean,
    AgddStd,
    SradMean,
    SradStd,
    RainMedian,
    RainStd,
    CondMean,
    CondStd,
    BulkDensityMean,
    BulkDensityStd,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalingKind {
    ZScore,
    MinMax,
}

impl ScalingKind {
    pub fn pad_value(self) -> f64 {
        match self {
            ScalingKind::ZScore => 0.0,
            ScalingKind::MinMax => 0.5,
        }
    }
}

impl Channel {
    pub const ALL: [Channel; CHANNELS] = [
        Channel::FparMean,
        Channel::FparStd,
        Channel::AgddMean,
        Channel::AgddStd,
        Channel::SradMean,
        Channel::SradStd,
        Channel::RainMedian,
        Channel::RainStd,
        Channel::CondMean,
        Channel::CondStd,
        Channel::BulkDensityMean,
        Channel::BulkDensityStd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Channel::FparMean => "fpar_mean",
            Channel::FparStd => "fpar_std",
            Channel::AgddMean => "agdd_mean",
            Channel::AgddStd => "agdd_std",
            Channel::SradMean => "srad_mean",
            Channel::SradStd => "srad_std",
            Channel::RainMedian => "rain_median",
            Channel::RainStd => "rain_std",
            Channel::CondMean => "cond_mean",
            Channel::CondStd => "cond_std",
            Channel::BulkDensityMean => "bd_mean",
            Channel::BulkDensityStd => "bd_std",
        }
    }

    pub fn scaling(self) -> ScalingKind {
        match self {
            Channel::SradMean | Channel::SradStd | Channel::RainMedian | Channel::RainStd => ScalingKind::ZScore,
            _ => ScalingKind::MinMax,
        }
    }

    pub fn pad_value(self) -> f64 {
        self.scaling().pad_value()
    }
}

pub fn pad_row() -> [f64; CHANNELS] {
    Channel::ALL.map(Channel::pad_value)
}

/// One in-season input block: 39 scaled weeks, the district slot and the cutoff.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeasonFeatures {
    pub weeks: Vec<[f64; CHANNELS]>,
    pub location: usize,
    pub cutoff_week: usize,
}

impl SeasonFeatures {
    pub fn validate(&self) -> Result<()> {
        if self.weeks.len() != WEEKS {
            return Err(Error::shape("season_features", format!("{} weeks", self.weeks.len())));
        }
        if self.location >= LOCATIONS || self.cutoff_week >= WEEKS {
            return Err(Error::Input(format!(
                "location {} / cutoff {} out of range",
                self.location, self.cutoff_week
            )));
        }
        if self.weeks.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("season features".into()));
        }
        Ok(())
    }

    pub fn location_one_hot(&self) -> [f64; LOCATIONS] {
        let mut v = [0.0; LOCATIONS];
        v[self.location] = 1.0;
        v
    }

    /// Number of observed weeks (cutoff inclusive).
    pub fn observed_len(&self) -> usize {
        self.cutoff_week + 1
    }

    /// Copy with every week after the cutoff reset to the pad value of its channel.
    pub fn repadded(&self) -> SeasonFeatures {
        let pad = pad_row();
        let mut out = self.clone();
        for w in out.weeks.iter_mut().skip(self.cutoff_week + 1) {
            *w = pad;
        }
        out
    }
}

/// A dataset item: features for one district-season-cutoff plus the true distribution at the cutoff week.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub year: i32,
    pub asd: usize,
    pub features: SeasonFeatures,
    pub target: StageDistribution,
}
