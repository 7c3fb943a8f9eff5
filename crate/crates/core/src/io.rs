//! File formats.
//!
//! Simulated or real inputs live under one directory:
//!
//! ```text
//! <dir>/split.json
//! <dir>/<year>/asd_<k>/progress.csv          week,pre_emergence,...,harvested (cumulative %)
//! <dir>/<year>/asd_<k>/field_<j>/met.csv     date,tmax,tmin,rain,srad,daylength
//! <dir>/<year>/asd_<k>/field_<j>/fpar.csv    date,fpar
//! <dir>/<year>/asd_<k>/field_<j>/soil.csv    cond,bd
//! ```
//!
//! A preprocessed dataset is `dataset.json` (metadata, scaling stats, one entry per
//! item) plus `features.bin` holding every 39×12 block as little-endian f64.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::{DailyMet, Dataset, FieldInput, FparSample, ScalingStats, SeasonInput, SeasonMeta, SoilProps, Split};
use crate::types::{Sample, SeasonFeatures, Stage, StageDistribution, CHANNELS, FIRST_WEEK_OF_YEAR, STAGES, WEEKS};

pub const MET_HEADER: [&str; 6] = ["date", "tmax", "tmin", "rain", "srad", "daylength"];
pub const FPAR_HEADER: [&str; 2] = ["date", "fpar"];
pub const SOIL_HEADER: [&str; 2] = ["cond", "bd"];
pub const FEATURES_MAGIC: &[u8; 8] = b"CGSEFEAT";
pub const DATASET_FORMAT: u32 = 1;

pub fn progress_header() -> Vec<String> {
    std::iter::once("week".to_string()).chain(Stage::ALL.iter().map(|s| s.name().to_string())).collect()
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_file(path, s.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&s).map_err(|e| Error::Input(format!("{}: {e}", path.display())))
}

fn csv_bytes<T: Serialize>(header: &[&str], rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Input(format!("csv write: {e}"));
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| Error::Input(format!("csv write: {e}")))
}

/// Read a CSV with an exact header; errors name the file, line and column.
pub fn read_csv<T: DeserializeOwned>(path: &Path, header: &[&str]) -> Result<Vec<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes.as_slice());
    let found: Vec<String> = r
        .headers()
        .map_err(|e| Error::Input(format!("{}: {e}", path.display())))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if found != header {
        return Err(Error::Input(format!(
            "{}: header [{}] does not match expected [{}]",
            path.display(),
            found.join(","),
            header.join(",")
        )));
    }
    let mut out = Vec::new();
    for rec in r.deserialize::<T>() {
        match rec {
            Ok(v) => out.push(v),
            Err(e) => return Err(describe_csv_error(path, header, &e)),
        }
    }
    Ok(out)
}

fn describe_csv_error(path: &Path, header: &[&str], e: &csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    let detail = match e.kind() {
        csv::ErrorKind::Deserialize { err, .. } => {
            let col = err.field().and_then(|i| header.get(i as usize)).copied().unwrap_or("?");
            format!("column '{col}': {}", err.kind())
        }
        csv::ErrorKind::UnequalLengths { expected_len, len, .. } => {
            format!("expected {expected_len} columns, found {len}")
        }
        other => format!("{other:?}"),
    };
    Error::Input(format!("{} line {line}: {detail}", path.display()))
}

fn check_rows<T>(path: &Path, rows: &[T], check: impl Fn(&T) -> Result<()>) -> Result<()> {
    for (i, r) in rows.iter().enumerate() {
        // header is line 1
        check(r).map_err(|e| Error::Input(format!("{} line {}: {e}", path.display(), i + 2)))?;
    }
    Ok(())
}

pub fn read_met(path: &Path) -> Result<Vec<DailyMet>> {
    let rows: Vec<DailyMet> = read_csv(path, &MET_HEADER)?;
    check_rows(path, &rows, DailyMet::validate)?;
    Ok(rows)
}

pub fn read_fpar(path: &Path) -> Result<Vec<FparSample>> {
    let rows: Vec<FparSample> = read_csv(path, &FPAR_HEADER)?;
    check_rows(path, &rows, |s| {
        if (0.0..=1.0).contains(&s.fpar) {
            Ok(())
        } else {
            Err(Error::Input(format!("column 'fpar': {} outside [0, 1]", s.fpar)))
        }
    })?;
    Ok(rows)
}

pub fn read_soil(path: &Path) -> Result<SoilProps> {
    let rows: Vec<SoilProps> = read_csv(path, &SOIL_HEADER)?;
    check_rows(path, &rows, SoilProps::validate)?;
    match rows.as_slice() {
        [s] => Ok(*s),
        _ => Err(Error::Input(format!("{}: expected exactly one data row, found {}", path.display(), rows.len()))),
    }
}

/// Cumulative stage percentages, one row per week slot.
pub fn read_progress(path: &Path) -> Result<Vec<[f64; STAGES]>> {
    let header = progress_header();
    let h: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows: Vec<(u32, [f64; STAGES])> = read_csv::<(u32, f64, f64, f64, f64, f64, f64)>(path, &h)?
        .into_iter()
        .map(|(w, a, b, c, d, e, f)| (w, [a, b, c, d, e, f]))
        .collect();
    if rows.len() != WEEKS {
        return Err(Error::Input(format!("{}: {} weeks, expected {WEEKS}", path.display(), rows.len())));
    }
    for (i, (w, _)) in rows.iter().enumerate() {
        let expected = FIRST_WEEK_OF_YEAR + i as u32;
        if *w != expected {
            return Err(Error::Input(format!("{} line {}: column 'week': {w}, expected {expected}", path.display(), i + 2)));
        }
    }
    Ok(rows.into_iter().map(|(_, p)| p).collect())
}

pub fn progress_csv(progress: &[[f64; STAGES]]) -> Result<Vec<u8>> {
    let rows: Vec<(u32, [f64; STAGES])> =
        progress.iter().enumerate().map(|(i, p)| (FIRST_WEEK_OF_YEAR + i as u32, *p)).collect();
    let header = progress_header();
    let h: Vec<&str> = header.iter().map(String::as_str).collect();
    csv_bytes(&h, &rows)
}

fn season_dir(root: &Path, year: i32, asd: usize) -> PathBuf {
    root.join(year.to_string()).join(format!("asd_{asd}"))
}

/// Write season inputs in the directory layout above. Returns the files written.
pub fn write_inputs(root: &Path, seasons: &[SeasonInput], split: &Split) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let mut put = |p: PathBuf, bytes: Vec<u8>| -> Result<()> {
        write_file(&p, &bytes)?;
        written.push(p);
        Ok(())
    };
    put(root.join("split.json"), (serde_json::to_string_pretty(split)? + "\n").into_bytes())?;
    for s in seasons {
        let dir = season_dir(root, s.year, s.asd);
        put(dir.join("progress.csv"), progress_csv(&s.progress)?)?;
        for (j, f) in s.fields.iter().enumerate() {
            let fd = dir.join(format!("field_{j}"));
            put(fd.join("met.csv"), csv_bytes(&MET_HEADER, &f.met)?)?;
            put(fd.join("fpar.csv"), csv_bytes(&FPAR_HEADER, &f.fpar)?)?;
            put(fd.join("soil.csv"), csv_bytes(&SOIL_HEADER, &[f.soil])?)?;
        }
    }
    Ok(written)
}

/// Numbered subdirectories `<prefix><n>` in numeric order.
fn numbered_dirs(dir: &Path, prefix: &str) -> Result<Vec<(i64, PathBuf)>> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let e = e.map_err(|e| Error::io(dir, e))?;
        if !e.path().is_dir() {
            continue;
        }
        let name = e.file_name().to_string_lossy().into_owned();
        if let Some(n) = name.strip_prefix(prefix).and_then(|n| n.parse::<i64>().ok()) {
            out.push((n, e.path()));
        }
    }
    out.sort_by_key(|(n, _)| *n);
    Ok(out)
}

fn require(path: PathBuf, what: &str) -> Result<PathBuf> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(Error::Input(format!("missing {what} file {}", path.display())))
    }
}

/// Read every season under `root` plus its split file.
pub fn read_inputs(root: &Path) -> Result<(Vec<SeasonInput>, Split)> {
    let split: Split = read_json(&require(root.join("split.json"), "split")?)?;
    split.validate()?;
    let mut seasons = Vec::new();
    for (year, ydir) in numbered_dirs(root, "")? {
        let year = year as i32;
        for (asd, adir) in numbered_dirs(&ydir, "asd_")? {
            let asd = asd as usize;
            let ctx = |e: Error| match e {
                Error::Input(m) => Error::Input(format!("year {year} ASD {asd}: {m}")),
                other => other,
            };
            let progress = read_progress(&require(adir.join("progress.csv"), "progress").map_err(ctx)?).map_err(ctx)?;
            let mut fields = Vec::new();
            for (_, fdir) in numbered_dirs(&adir, "field_")? {
                let met = read_met(&require(fdir.join("met.csv"), "met").map_err(ctx)?).map_err(ctx)?;
                let fpar = read_fpar(&require(fdir.join("fpar.csv"), "fpar").map_err(ctx)?).map_err(ctx)?;
                let soil = read_soil(&require(fdir.join("soil.csv"), "soil").map_err(ctx)?).map_err(ctx)?;
                fields.push(FieldInput { met, fpar, soil });
            }
            if fields.is_empty() {
                return Err(Error::Input(format!("year {year} ASD {asd}: no field directories in {}", adir.display())));
            }
            seasons.push(SeasonInput { year, asd, fields, progress });
        }
    }
    if seasons.is_empty() {
        return Err(Error::Input(format!("no season directories under {}", root.display())));
    }
    Ok((seasons, split))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItemMeta {
    pub year: i32,
    pub asd: usize,
    pub cutoff: usize,
    pub location: usize,
    pub target: [f64; STAGES],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetFile {
    pub format: u32,
    pub weeks: usize,
    pub channels: usize,
    pub items_count: usize,
    pub features_file: String,
    pub split: Split,
    pub stats: ScalingStats,
    pub seasons: Vec<SeasonMeta>,
    pub items: Vec<ItemMeta>,
}

pub fn features_bytes(ds: &Dataset) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + ds.samples.len() * WEEKS * CHANNELS * 8);
    out.extend_from_slice(FEATURES_MAGIC);
    out.extend_from_slice(&(ds.samples.len() as u64).to_le_bytes());
    for s in &ds.samples {
        for w in &s.features.weeks {
            for v in w {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

/// Write `dataset.json` and `features.bin` into `dir`.
pub fn save_dataset(dir: &Path, ds: &Dataset) -> Result<Vec<PathBuf>> {
    let meta = DatasetFile {
        format: DATASET_FORMAT,
        weeks: WEEKS,
        channels: CHANNELS,
        items_count: ds.samples.len(),
        features_file: "features.bin".into(),
        split: ds.split.clone(),
        stats: ds.stats.clone(),
        seasons: ds.seasons.clone(),
        items: ds
            .samples
            .iter()
            .map(|s| ItemMeta {
                year: s.year,
                asd: s.asd,
                cutoff: s.features.cutoff_week,
                location: s.features.location,
                target: *s.target.as_array(),
            })
            .collect(),
    };
    let feats = dir.join("features.bin");
    write_file(&feats, &features_bytes(ds))?;
    let json = dir.join("dataset.json");
    write_json(&json, &meta)?;
    Ok(vec![json, feats])
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let meta: DatasetFile = read_json(&require(dir.join("dataset.json"), "dataset")?)?;
    if meta.format != DATASET_FORMAT || meta.weeks != WEEKS || meta.channels != CHANNELS {
        return Err(Error::Input(format!(
            "dataset geometry {}×{} (format {}) does not match {WEEKS}×{CHANNELS} (format {DATASET_FORMAT})",
            meta.weeks, meta.channels, meta.format
        )));
    }
    let fpath = require(dir.join(&meta.features_file), "features")?;
    let bytes = fs::read(&fpath).map_err(|e| Error::io(&fpath, e))?;
    let n = meta.items.len();
    let expected = 16 + n * WEEKS * CHANNELS * 8;
    if bytes.len() != expected || &bytes[..8] != FEATURES_MAGIC || u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize != n
    {
        return Err(Error::Input(format!("{}: size or header does not match {n} items", fpath.display())));
    }
    let mut vals = bytes[16..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let mut samples = Vec::with_capacity(n);
    for it in &meta.items {
        let weeks: Vec<[f64; CHANNELS]> =
            (0..WEEKS).map(|_| std::array::from_fn(|_| vals.next().unwrap())).collect();
        let features = SeasonFeatures { weeks, location: it.location, cutoff_week: it.cutoff };
        features.validate()?;
        samples.push(Sample { year: it.year, asd: it.asd, features, target: StageDistribution::new(it.target)? });
    }
    if meta.seasons.len() * WEEKS != n {
        return Err(Error::Input(format!("{} seasons do not account for {n} items", meta.seasons.len())));
    }
    Ok(Dataset { stats: meta.stats, split: meta.split, seasons: meta.seasons, samples })
}
