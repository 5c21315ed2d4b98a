use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;

use uqshift::dataio::{
    parse_dataset, synth_generate, temporal_split, write_dataset, AssaySpec, Direction, ParseMode, SynthParams,
    Transform, DEFAULT_FP_LEN, N_FOLDS,
};
use uqshift::harness::{emit_report, run_experiment, ExperimentConfig};
use uqshift::shift::shift_report;
use uqshift::{Error, Result};

#[derive(Parser)]
#[command(name = "uqshift", version, about = "UQ and calibration benchmark under temporal distribution shift")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a benchmark described by a TOML config and write the report.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides `output_dir`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads; 0 uses every core.
        #[arg(long)]
        jobs: Option<usize>,
        /// Master seed (overrides `master_seed`).
        #[arg(long)]
        seed: Option<u64>,
        /// Reject datasets with malformed rows instead of skipping them.
        #[arg(long)]
        strict: bool,
    },
    /// Print the five chronological fold boundaries of a dataset.
    Split {
        #[arg(long)]
        data: PathBuf,
        /// TOML assay spec: name, transform, threshold, direction.
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, default_value_t = DEFAULT_FP_LEN)]
        fp_len: usize,
    },
    /// Print label shift and Tanimoto MMD between two datasets.
    Shift {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
        /// TOML assay spec; defaults to identity values thresholded above 0.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_FP_LEN)]
        fp_len: usize,
    },
    /// Generate a synthetic assay CSV.
    Synth {
        /// TOML generator parameters.
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn read_toml<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn default_spec() -> AssaySpec {
    AssaySpec {
        name: "default".into(),
        transform: Transform::Identity,
        threshold: 0.0,
        direction: Direction::PreferredAbove,
    }
}

/// Returns `true` when some cells failed.
fn execute(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run {
            config,
            out,
            jobs,
            seed,
            strict,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(out) = out {
                cfg.output_dir = out;
            }
            if let Some(jobs) = jobs {
                cfg.jobs = jobs;
            }
            if let Some(seed) = seed {
                cfg.master_seed = seed;
            }
            if strict {
                cfg.parse_mode = ParseMode::Strict;
            }
            let report = run_experiment(&cfg)?;
            emit_report(&report, &cfg.output_dir)?;
            println!(
                "wrote {} metric rows and {} shift rows to {}",
                report.metrics.len(),
                report.shift.len(),
                cfg.output_dir.display()
            );
            if !report.failures.is_empty() {
                eprintln!("{} cell failures recorded in failures.csv", report.failures.len());
            }
            Ok(!report.failures.is_empty())
        }
        Command::Split { data, spec, fp_len } => {
            let spec: AssaySpec = read_toml(&spec)?;
            spec.validate()?;
            let parsed = parse_dataset(&data, &spec, fp_len, ParseMode::Lenient)?;
            let records = &parsed.records;
            let folds = temporal_split(records, N_FOLDS)?;
            println!("fold,n,first_date,last_date,n_preferred");
            for (k, fold) in folds.0.iter().enumerate() {
                let first = fold.iter().map(|&i| records[i].date).min();
                let last = fold.iter().map(|&i| records[i].date).max();
                let pos = fold.iter().filter(|&&i| records[i].label).count();
                let show = |d: Option<chrono::NaiveDate>| d.map_or_else(String::new, |d| d.to_string());
                println!("{},{},{},{},{pos}", k + 1, fold.len(), show(first), show(last));
            }
            if parsed.skip_count() > 0 {
                eprintln!("skipped {} malformed rows", parsed.skip_count());
            }
            Ok(false)
        }
        Command::Shift {
            train,
            test,
            spec,
            fp_len,
        } => {
            let spec = match spec {
                Some(p) => read_toml(&p)?,
                None => default_spec(),
            };
            spec.validate()?;
            let a = parse_dataset(&train, &spec, fp_len, ParseMode::Lenient)?;
            let b = parse_dataset(&test, &spec, fp_len, ParseMode::Lenient)?;
            let r = shift_report(&a.records, &b.records)?;
            println!("n_train,n_test,label_shift,mmd_sq,mmd_norm");
            println!("{},{},{},{},{}", r.n_train, r.n_test, r.label_shift, r.mmd_sq, r.mmd_norm);
            Ok(false)
        }
        Command::Synth { params, seed, out } => {
            let params: SynthParams = read_toml(&params)?;
            let records = synth_generate(&params, seed).map_err(|e| Error::Config(e.to_string()))?;
            let file = fs::File::create(&out).map_err(|e| Error::Io { path: out.clone(), source: e })?;
            write_dataset(&records, std::io::BufWriter::new(file))?;
            println!("wrote {} records to {}", records.len(), out.display());
            Ok(false)
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Io { .. } => ExitCode::from(3),
                _ => ExitCode::from(1),
            }
        }
    }
}
