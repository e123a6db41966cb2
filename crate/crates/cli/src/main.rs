use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use nearfield_core::codebooks::CodebookKind;
use nearfield_core::harness::{
    emit_results, gram_csv, gram_report, profile_csv, profile_report, run_sweep, table1_search, to_json_document,
    write_text, ExperimentConfig, SweepVariable,
};
use nearfield_core::pipeline::{max_coherence, max_gram_deviation};

/// Table I targets at full scale (dB).
const FULL_TARGETS: [f64; 4] = [-15.0, -20.0, -25.0, -30.0];
/// The same targets divided by three, for the reduced profile.
const DESK_TARGETS: [f64; 4] = [-5.0, -20.0 / 3.0, -25.0 / 3.0, -10.0];
/// Default size grid in multiples of `N_T * N_R`.
const SIZE_FACTORS: [usize; 8] = [1, 2, 3, 4, 6, 9, 12, 16];

#[derive(Parser)]
#[command(
    name = "nearfield",
    version,
    about = "Near-field XL-MIMO channel estimation experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monte-Carlo sweep over one parameter.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Swept variable: mu, iterations, beta, epsilon or codebook_size.
        #[arg(long)]
        variable: Option<String>,
        /// Comma separated sweep values.
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
    },
    /// Minimum codebook size for each NMSE target.
    Table1 {
        #[command(flatten)]
        common: Common,
        /// Comma separated NMSE targets in dB.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        targets: Option<Vec<f64>>,
        /// Comma separated codebook sizes to scan.
        #[arg(long, value_delimiter = ',')]
        sizes: Option<Vec<usize>>,
    },
    /// Sorted coefficient energy of one channel in every codebook.
    Profile {
        #[command(flatten)]
        common: Common,
        /// Trial whose channel is profiled.
        #[arg(long, default_value_t = 0)]
        trial: usize,
    },
    /// Gram map |Psi^H Psi| of one codebook.
    Gram {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = Kind::Dpss)]
        codebook: Kind,
        /// Trial whose UE position defines the eigen-codebook.
        #[arg(long, default_value_t = 0)]
        trial: usize,
    },
}

#[derive(Args)]
struct Common {
    /// TOML experiment configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    trials: Option<usize>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Training SNR in dB.
    #[arg(long, allow_negative_numbers = true)]
    snr_db: Option<f64>,
    #[arg(long)]
    out_csv: Option<PathBuf>,
    #[arg(long)]
    out_json: Option<PathBuf>,
    /// Reduced profile: 64 x 2 arrays, 50 trials.
    #[arg(long)]
    desk_scale: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Dft,
    Spherical,
    Dpss,
}

impl From<Kind> for CodebookKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Dft => CodebookKind::Dft,
            Kind::Spherical => CodebookKind::Spherical,
            Kind::Dpss => CodebookKind::Dpss,
        }
    }
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if self.desk_scale {
            cfg.apply_desk_scale();
        }
        if let Some(t) = self.trials {
            cfg.scenario.trials = t;
        }
        if let Some(s) = self.seed {
            cfg.scenario.master_seed = s;
        }
        if let Some(s) = self.snr_db {
            cfg.snr_db = s;
        }
        if self.out_csv.is_some() {
            cfg.output.csv_path.clone_from(&self.out_csv);
        }
        if self.out_json.is_some() {
            cfg.output.json_path.clone_from(&self.out_json);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn write_or_print(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => write_text(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Sweep {
            common,
            variable,
            values,
        } => {
            let mut cfg = common.load()?;
            if let Some(v) = variable {
                cfg.sweep.variable = SweepVariable::parse(&v)?;
            }
            if let Some(v) = values {
                cfg.sweep.values = v;
            }
            if cfg.sweep.values.is_empty() {
                bail!("no sweep values");
            }
            let result = run_sweep(&cfg)?;
            let csv = cfg.output.csv_path.clone();
            let json = cfg.output.json_path.clone();
            emit_results(&result, &cfg, csv.as_deref(), json.as_deref())?;
            if csv.is_none() {
                print!("{}", result.to_csv());
            }
        }
        Command::Table1 { common, targets, sizes } => {
            let cfg = common.load()?;
            let targets = targets.unwrap_or_else(|| {
                if common.desk_scale {
                    DESK_TARGETS.to_vec()
                } else {
                    FULL_TARGETS.to_vec()
                }
            });
            let n = cfg.scenario.n_t * cfg.scenario.n_r;
            let sizes = sizes.unwrap_or_else(|| SIZE_FACTORS.iter().map(|f| f * n).collect());
            let table = table1_search(&cfg, &targets, &sizes)?;
            write_or_print(cfg.output.csv_path.as_deref(), &table.to_csv())?;
            if let Some(p) = &cfg.output.json_path {
                write_text(p, &(to_json_document(&cfg, &table)? + "\n"))?;
            }
        }
        Command::Profile { common, trial } => {
            let cfg = common.load()?;
            let profiles = profile_report(&cfg, trial)?;
            for (kind, p) in &profiles {
                eprintln!(
                    "{:<10} 95% energy in {:>5} coefficients, top {} hold {:.4}",
                    kind.name(),
                    p.count_for_fraction(0.95),
                    cfg.scenario.n_r,
                    p.fraction_in_top(cfg.scenario.n_r)
                );
            }
            write_or_print(cfg.output.csv_path.as_deref(), &profile_csv(&profiles))?;
            if let Some(p) = &cfg.output.json_path {
                let named: Vec<_> = profiles.iter().map(|(k, p)| (k.name(), p)).collect();
                write_text(p, &(serde_json::to_string_pretty(&named)? + "\n"))?;
            }
        }
        Command::Gram {
            common,
            codebook,
            trial,
        } => {
            let cfg = common.load()?;
            let (cb, g) = gram_report(&cfg, codebook.into(), trial)?;
            eprintln!(
                "{} codebook, {} codewords: max coherence {:.3e}, max |G - I| {:.3e}",
                cb.kind().name(),
                cb.len(),
                max_coherence(&g),
                max_gram_deviation(&cb)
            );
            write_or_print(cfg.output.csv_path.as_deref(), &gram_csv(&g))?;
            if let Some(p) = &cfg.output.json_path {
                let rows: Vec<Vec<f64>> = g.row_iter().map(|r| r.iter().copied().collect()).collect();
                write_text(p, &(serde_json::to_string(&rows)? + "\n"))?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
