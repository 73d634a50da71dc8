//! Argument parsing and dispatch.

use std::ffi::OsString;
use std::path::PathBuf;

use bggm::baselines::SplitPlan;
use bggm::sampler::ChainConfig;
use clap::{Args, Parser, Subcommand};

use crate::commands::*;
use crate::config::Settings;
use crate::error::{CliError, Result};
use crate::io::CsvSpec;

#[derive(Debug, Parser)]
#[command(name = "bggm", version, about = "Two-class sparse Gaussian graphical models: fit, call networks, classify")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the model, predict unknown labels and call networks.
    Fit(FitArgs),
    /// Re-extract predicted labels from a saved results bundle.
    Predict {
        #[arg(long)]
        results: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        cut: f64,
        #[arg(long, default_value = "predictions.tsv")]
        out: PathBuf,
    },
    /// Re-threshold a saved results bundle at new alphas.
    Networks {
        #[arg(long)]
        results: PathBuf,
        #[arg(long = "alpha", required = true)]
        alphas: Vec<f64>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Write a synthetic two-class dataset and its ground truth.
    Simulate(SimulateCli),
    /// Repeated random-split misclassification benchmark.
    Benchmark(BenchmarkCli),
}

#[derive(Debug, Args)]
pub struct LabelArgs {
    #[arg(long)]
    pub label_column: Option<String>,
    /// Label value of class 1.
    #[arg(long)]
    pub class1: Option<String>,
    /// Label value of class 2.
    #[arg(long)]
    pub class2: Option<String>,
    /// Label value marking an unknown sample.
    #[arg(long)]
    pub unknown: Option<String>,
}

impl LabelArgs {
    fn spec(&self) -> CsvSpec {
        let d = CsvSpec::default();
        CsvSpec {
            label_column: self.label_column.clone().unwrap_or(d.label_column),
            class_names: [
                self.class1.clone().unwrap_or(d.class_names[0].clone()),
                self.class2.clone().unwrap_or(d.class_names[1].clone()),
            ],
            unknown: self.unknown.clone().unwrap_or(d.unknown),
        }
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Flat TOML file with any of the settings below; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[command(flatten)]
    pub labels: LabelArgs,
    /// Whitespace-separated `protein_i protein_j evidence [scope]` file.
    #[arg(long)]
    pub prior_network: Option<PathBuf>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub burn_in: Option<usize>,
    #[arg(long)]
    pub thin: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Use a Gaussian random walk of this step for active correlation entries.
    #[arg(long)]
    pub rw_step: Option<f64>,
    #[arg(long)]
    pub s_proposal_sd: Option<f64>,
    #[arg(long)]
    pub check_invariants: Option<bool>,
    /// Bayesian FDR level; repeat for several.
    #[arg(long = "alpha")]
    pub alphas: Vec<f64>,
    #[arg(long)]
    pub cut: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl FitArgs {
    pub fn settings(&self) -> Result<Settings> {
        let file = match &self.config {
            Some(p) => Settings::from_file(p)?,
            None => Settings::default(),
        };
        let flags = Settings {
            data: self.data.clone(),
            label_column: self.labels.label_column.clone(),
            class1: self.labels.class1.clone(),
            class2: self.labels.class2.clone(),
            unknown: self.labels.unknown.clone(),
            prior_network: self.prior_network.clone(),
            iterations: self.iterations,
            burn_in: self.burn_in,
            thin: self.thin,
            seed: self.seed,
            rw_step: self.rw_step,
            s_proposal_sd: self.s_proposal_sd,
            check_invariants: self.check_invariants,
            alpha: (!self.alphas.is_empty()).then(|| self.alphas.clone()),
            cut: self.cut,
            out: self.out.clone(),
        };
        Ok(file.overlay(flags))
    }
}

#[derive(Debug, Args)]
pub struct SimulateCli {
    #[arg(long, default_value_t = 10)]
    pub p: usize,
    #[arg(long, default_value_t = 8)]
    pub conserved: usize,
    #[arg(long, default_value_t = 4)]
    pub differential: usize,
    #[arg(long, default_value_t = 0.4)]
    pub corr_min: f64,
    #[arg(long, default_value_t = 0.7)]
    pub corr_max: f64,
    #[arg(long, default_value_t = 100)]
    pub n1: usize,
    #[arg(long, default_value_t = 100)]
    pub n2: usize,
    #[arg(long, default_value_t = 0)]
    pub unknown_per_class: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[command(flatten)]
    pub labels: LabelArgs,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchmarkCli {
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub labels: LabelArgs,
    #[arg(long, default_value_t = 100)]
    pub replicates: usize,
    #[arg(long, default_value_t = 0.66)]
    pub train_fraction: f64,
    /// Draw splits without stratifying by class.
    #[arg(long)]
    pub unstratified: bool,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 5)]
    pub knn_k: usize,
    #[arg(long, default_value_t = 2000)]
    pub iterations: usize,
    #[arg(long, default_value_t = 500)]
    pub burn_in: usize,
    #[arg(long, default_value_t = 1)]
    pub thin: usize,
    /// Rerun a single replicate.
    #[arg(long)]
    pub replicate: Option<usize>,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

pub fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Fit(args) => {
            let cfg = args.settings()?.resolve()?;
            cmd_fit(&cfg)?;
        }
        Command::Predict { results, cut, out } => cmd_predict(&results, cut, &out)?,
        Command::Networks { results, alphas, out } => {
            if let Some(a) = alphas.iter().find(|a| !(**a > 0.0 && **a < 1.0)) {
                return Err(CliError::Config(format!("alpha {a} is outside (0, 1)")));
            }
            cmd_networks(&results, &alphas, &out)?;
        }
        Command::Simulate(s) => cmd_simulate(&SimulateArgs {
            p: s.p,
            n_conserved: s.conserved,
            n_diff: s.differential,
            corr_range: (s.corr_min, s.corr_max),
            n1: s.n1,
            n2: s.n2,
            unknown_per_class: s.unknown_per_class,
            seed: s.seed,
            csv: s.labels.spec(),
            out_dir: s.out,
        })?,
        Command::Benchmark(b) => {
            cmd_benchmark(&BenchmarkArgs {
                data: b.data,
                csv: b.labels.spec(),
                plan: SplitPlan {
                    n_replicates: b.replicates,
                    train_fraction: b.train_fraction,
                    seed: b.seed,
                    stratified: !b.unstratified,
                },
                knn_k: b.knn_k,
                chain: ChainConfig::new(b.iterations, b.burn_in, b.thin, b.seed),
                replicate: b.replicate,
                out_dir: b.out,
            })?;
        }
    }
    Ok(())
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
