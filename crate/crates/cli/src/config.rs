//! Run configuration: defaults, then a TOML file, then command-line flags.

use std::path::{Path, PathBuf};

use bggm::sampler::{ChainConfig, RProposal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};
use crate::io::{read_text, CsvSpec};

pub const DEFAULT_ITERATIONS: usize = 5000;
pub const DEFAULT_BURN_IN: usize = 1000;
pub const DEFAULT_ALPHA: f64 = 0.1;

/// Fully resolved settings of a `fit` run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub data: PathBuf,
    pub csv: CsvSpec,
    pub prior_network: Option<PathBuf>,
    pub chain: ChainConfig,
    pub alphas: Vec<f64>,
    /// Class-1 posterior probability at or above which an unknown sample is called class 1.
    pub cut: f64,
    /// Not part of the config hash, so identical runs into different
    /// directories carry the same header.
    #[serde(skip)]
    pub out_dir: PathBuf,
}

/// Optional settings, as read from a config file or from flags.
#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    pub data: Option<PathBuf>,
    pub label_column: Option<String>,
    pub class1: Option<String>,
    pub class2: Option<String>,
    pub unknown: Option<String>,
    pub prior_network: Option<PathBuf>,
    pub iterations: Option<usize>,
    pub burn_in: Option<usize>,
    pub thin: Option<usize>,
    pub seed: Option<u64>,
    pub rw_step: Option<f64>,
    pub s_proposal_sd: Option<f64>,
    pub check_invariants: Option<bool>,
    pub alpha: Option<Vec<f64>>,
    pub cut: Option<f64>,
    pub out: Option<PathBuf>,
}

macro_rules! overlay {
    ($dst:ident, $src:ident; $($f:ident),*) => {
        $( if $src.$f.is_some() { $dst.$f = $src.$f; } )*
    };
}

impl Settings {
    /// Reads a flat TOML file. Relative paths are taken relative to the file.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = read_text(path)?;
        let mut s: Settings =
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut s.data, &mut s.prior_network, &mut s.out].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(s)
    }

    /// Fields set in `top` win.
    pub fn overlay(mut self, top: Settings) -> Settings {
        overlay!(self, top; data, label_column, class1, class2, unknown, prior_network, iterations, burn_in,
            thin, seed, rw_step, s_proposal_sd, check_invariants, alpha, cut, out);
        self
    }

    pub fn resolve(self) -> Result<RunConfig> {
        let data = self.data.ok_or_else(|| CliError::Config("no input data given".into()))?;
        let defaults = CsvSpec::default();
        let csv = CsvSpec {
            label_column: self.label_column.unwrap_or(defaults.label_column),
            class_names: [self.class1.unwrap_or(defaults.class_names[0].clone()), self.class2.unwrap_or(defaults.class_names[1].clone())],
            unknown: self.unknown.unwrap_or(defaults.unknown),
        };
        let mut chain = ChainConfig::new(
            self.iterations.unwrap_or(DEFAULT_ITERATIONS),
            self.burn_in.unwrap_or(DEFAULT_BURN_IN),
            self.thin.unwrap_or(1),
            self.seed.unwrap_or(1),
        );
        if let Some(step) = self.rw_step {
            chain.r_proposal = RProposal::RandomWalk { step };
        }
        if let Some(sd) = self.s_proposal_sd {
            chain.s_proposal_sd = sd;
        }
        if let Some(c) = self.check_invariants {
            chain.check_invariants = c;
        }
        let cfg = RunConfig {
            data,
            csv,
            prior_network: self.prior_network,
            chain,
            alphas: self.alpha.unwrap_or_else(|| vec![DEFAULT_ALPHA]),
            cut: self.cut.unwrap_or(0.5),
            out_dir: self.out.unwrap_or_else(|| PathBuf::from(".")),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alphas.is_empty() {
            return Err(CliError::Config("at least one alpha is required".into()));
        }
        if let Some(a) = self.alphas.iter().find(|a| !(**a > 0.0 && **a < 1.0)) {
            return Err(CliError::Config(format!("alpha {a} is outside (0, 1)")));
        }
        if !(0.0..=1.0).contains(&self.cut) {
            return Err(CliError::Config(format!("cut {} is outside [0, 1]", self.cut)));
        }
        if self.csv.class_names[0] == self.csv.class_names[1] || self.csv.class_names.contains(&self.csv.unknown) {
            return Err(CliError::Config("class names and the unknown marker must be distinct".into()));
        }
        for p in std::iter::once(&self.data).chain(self.prior_network.as_ref()) {
            if !p.is_file() {
                return Err(CliError::Config(format!("input file {} does not exist", p.display())));
            }
        }
        self.chain.validate()?;
        Ok(())
    }

    pub fn hash(&self) -> String {
        config_hash(self)
    }
}

/// First 16 hex digits of the SHA-256 of the JSON serialization.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("configuration serializes");
    hex::encode(&Sha256::digest(&json)[..8])
}
