use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use cropstage_core::checkpoint::Checkpoint;
use cropstage_core::export::{export_activations, pca};
use cropstage_core::hmm::HmmEnsemble;
use cropstage_core::io::{load_dataset, read_inputs, save_dataset, write_inputs, write_json};
use cropstage_core::metrics::evaluate;
use cropstage_core::pipeline::{PipelineConfig, RunManifest, CROSSVAL_FOLDS};
use cropstage_core::preprocess::{build_dataset, Dataset};
use cropstage_core::sim::make_benchmark;
use cropstage_core::train::{cross_validate, cross_validate_with, train, Outcome};
use cropstage_core::{Arch, Error, ErrorClass, Model, Result, Sample, StageEstimator, Tap};

#[derive(Parser)]
#[command(name = "cropstage", version, about = "In-season crop growth stage estimation")]
struct Cli {
    /// Seed for every random stream (overrides the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON pipeline config; missing fields take defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multi-year corpus of field records and progress reports.
    Simulate {
        #[arg(long)]
        out: PathBuf,
    },
    /// Turn field records into scaled in-season feature blocks.
    Preprocess {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit an estimator on the training years.
    Train {
        /// dense, sequential, dgnn, hmm or oracle
        #[arg(long)]
        arch: String,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Run the 5-fold year cross-validation instead of a single fit.
        #[arg(long)]
        crossval: bool,
    },
    /// Score a checkpoint on the test years.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        sel: Selection,
    },
    /// Dump activations feeding into or out of the 128-unit layer, with a PCA quick-look.
    ExportActivations {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// pre_dense or pre_softmax
        #[arg(long, default_value = "pre_softmax")]
        tap: String,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        sel: Selection,
    },
}

#[derive(Args)]
struct Selection {
    /// test, train or all
    #[arg(long, default_value = "test")]
    years: String,
    /// Only write per-item rows for this cutoff index (0..=38).
    #[arg(long)]
    cutoff_week: Option<usize>,
}

impl Selection {
    fn years(&self, ds: &Dataset) -> Result<Vec<i32>> {
        match self.years.as_str() {
            "test" => Ok(ds.split.test_years.clone()),
            "train" => Ok(ds.split.train_years.clone()),
            "all" => Ok(ds.years()),
            other => Err(Error::Config(format!("--years must be test, train or all, not {other}"))),
        }
    }

    fn items<'a>(&self, ds: &'a Dataset) -> Result<Vec<&'a Sample>> {
        if let Some(c) = self.cutoff_week {
            if c >= cropstage_core::WEEKS {
                return Err(Error::Config(format!("--cutoff-week {c} is outside 0..={}", cropstage_core::WEEKS - 1)));
            }
        }
        let years = self.years(ds)?;
        Ok(ds
            .samples
            .iter()
            .filter(|s| years.contains(&s.year) && self.cutoff_week.is_none_or(|c| s.features.cutoff_week == c))
            .collect())
    }
}

fn exit_code(e: &Error) -> u8 {
    match e.class() {
        ErrorClass::Config => 2,
        ErrorClass::Data => 3,
        ErrorClass::Numerical => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    let seed = cli.seed.unwrap_or(cfg.seed);
    let cfg = cfg.with_seed(seed);
    cfg.validate()?;
    Ok(cfg)
}

fn write_text(path: &Path, s: &str) -> Result<()> {
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

fn make_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn manifest(command: &str, cfg: &PipelineConfig, inputs: &[&Path], out: &Path, outputs: &[&str]) -> Result<()> {
    make_dir(out)?;
    let paths: Vec<PathBuf> = outputs.iter().map(|o| out.join(o)).collect();
    let refs: Vec<&Path> = paths.iter().map(PathBuf::as_path).collect();
    RunManifest::new(command, cfg, inputs, &refs)?.write(out)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    match &cli.command {
        Command::Simulate { out } => {
            manifest("simulate", &cfg, &[], out, &["sim_config.json", "split.json", "<year>/asd_<k>/"])?;
            let bench = make_benchmark(&cfg.sim)?;
            write_json(&out.join("sim_config.json"), &cfg.sim)?;
            let files = write_inputs(out, &bench.inputs(), &bench.split)?;
            println!("simulated {} seasons ({} files) into {}", bench.seasons.len(), files.len(), out.display());
        }
        Command::Preprocess { data, out } => {
            manifest("preprocess", &cfg, &[data], out, &["dataset.json", "features.bin"])?;
            let (seasons, split) = read_inputs(data)?;
            let ds = build_dataset(&seasons, &split, &cfg.sg)?;
            save_dataset(out, &ds)?;
            println!("{} items from {} district-seasons", ds.samples.len(), ds.seasons.len());
        }
        Command::Train { arch, dataset, out, crossval } => train_cmd(&cfg, arch, dataset, out, *crossval)?,
        Command::Evaluate { checkpoint, dataset, out, sel } => {
            manifest(
                "evaluate",
                &cfg,
                &[checkpoint, dataset],
                out,
                &["metrics.json", "nse.csv", "cs.csv", "progress.csv", "estimates.csv"],
            )?;
            let ck = Checkpoint::load(checkpoint)?;
            let ds = load_dataset(dataset)?;
            let years = sel.years(&ds)?;
            let report = evaluate(ck.estimator(), &ds, &years)?;
            write_text(&out.join("metrics.json"), &(report.to_json()? + "\n"))?;
            write_text(&out.join("nse.csv"), &report.nse_csv())?;
            write_text(&out.join("cs.csv"), &report.cs_csv())?;
            write_text(&out.join("progress.csv"), &report.progress_csv())?;
            let items = sel.items(&ds)?;
            write_text(&out.join("estimates.csv"), &estimates_csv(ck.estimator(), &items)?)?;
            for s in &report.nse_summary {
                println!("{:<14} NSE {}", s.stage, s.mean.map_or("undefined".into(), |v| format!("{v:.3}")));
            }
        }
        Command::ExportActivations { checkpoint, dataset, tap, out, sel } => {
            let tap = Tap::from_str(tap)?;
            manifest("export-activations", &cfg, &[checkpoint, dataset], out, &["activations.csv", "pca.csv", "pca.json"])?;
            let Checkpoint::Network(model) = Checkpoint::load(checkpoint)? else {
                return Err(Error::Config("activations need a neural network checkpoint".into()));
            };
            let ds = load_dataset(dataset)?;
            let items = sel.items(&ds)?;
            let table = export_activations(&model, &items, tap)?;
            write_text(&out.join("activations.csv"), &table.to_csv())?;
            let p = pca(&table.matrix(), 2)?;
            write_text(&out.join("pca.csv"), &p.projection_csv(&table))?;
            write_json(&out.join("pca.json"), &p)?;
            println!("{} rows of width {}", table.rows.len(), table.width);
        }
    }
    Ok(())
}

fn estimates_csv(est: &dyn StageEstimator, items: &[&Sample]) -> Result<String> {
    let mut s = String::from("year,asd,cutoff_week");
    for st in cropstage_core::Stage::ALL {
        s.push_str(&format!(",true_{0},est_{0}", st.name()));
    }
    s.push('\n');
    for (it, e) in items.iter().zip(est.estimate(items)?) {
        s.push_str(&format!("{},{},{}", it.year, it.asd, it.features.cutoff_week));
        for (t, v) in it.target.as_array().iter().zip(e.as_array()) {
            s.push_str(&format!(",{t},{v}"));
        }
        s.push('\n');
    }
    Ok(s)
}

fn train_cmd(cfg: &PipelineConfig, arch: &str, dataset: &Path, out: &Path, crossval: bool) -> Result<()> {
    let kind = arch.to_ascii_lowercase();
    let net = match kind.as_str() {
        "hmm" | "oracle" => None,
        _ => Some(Arch::from_str(&kind)?),
    };
    let outputs: &[&str] = if crossval { &["crossval.json", "fold_<i>.json"] } else { &["checkpoint.bin", "history.csv", "history.json"] };
    manifest("train", cfg, &[dataset], out, outputs)?;
    let ds = load_dataset(dataset)?;
    let years = ds.split.train_years.clone();

    if crossval {
        let report = match (net, kind.as_str()) {
            (Some(a), _) => cross_validate(a, &ds, &years, &cfg.train, CROSSVAL_FOLDS)?,
            (None, "hmm") => cross_validate_with(&ds, &years, CROSSVAL_FOLDS, cfg.seed, |_, train_years| {
                Ok((Box::new(HmmEnsemble::fit_dataset(&ds, train_years, &cfg.hmm)?) as Box<dyn StageEstimator>, None))
            })?,
            _ => return Err(Error::Config("the oracle has nothing to cross-validate".into())),
        };
        for f in &report.folds {
            write_json(&out.join(format!("fold_{}.json", f.fold)), f)?;
        }
        write_json(&out.join("crossval.json"), &report)?;
        for (stage, _, m, sd) in &report.stage_nse {
            println!("{stage:<14} NSE {m:.3} ± {sd:.3}");
        }
        return Ok(());
    }

    let ck = match (net, kind.as_str()) {
        (Some(a), _) => {
            let mut model = Model::build(a, cfg.seed)?;
            println!("{}", model.spec().param_report());
            let h = train(&mut model, &ds, &years, &cfg.train)?;
            write_text(&out.join("history.csv"), &h.to_csv())?;
            write_json(&out.join("history.json"), &h)?;
            if h.outcome == Outcome::Diverged {
                return Err(Error::Numerical(format!("training diverged at epoch {}; history written", h.last_epoch())));
            }
            println!("stopped after {} epochs ({:?}); restored epoch {}", h.last_epoch(), h.outcome, h.best_epoch);
            Checkpoint::Network(model)
        }
        (None, "hmm") => {
            let e = HmmEnsemble::fit_dataset(&ds, &years, &cfg.hmm)?;
            println!("{} EM runs, ensemble of {}", e.runs.len(), e.models.len());
            Checkpoint::Hmm(e)
        }
        _ => Checkpoint::Oracle,
    };
    ck.save(&out.join("checkpoint.bin"))
}
