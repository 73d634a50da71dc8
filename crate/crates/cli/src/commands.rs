//! The subcommands, callable without going through argument parsing.

use std::fs;
use std::path::{Path, PathBuf};

use bggm::baselines::{benchmark, run_replicate, BenchmarkResult, BgbcSettings, ClassifierKind, SplitPlan};
use bggm::inference::{call_network, predict_labels, summarize, NetworkKind, PosteriorSummary};
use bggm::model::{apply_prior_network, default_hyperparameters};
use bggm::sampler::{run_chain, ChainConfig};
use bggm::synthetic::{generate_model, sample_data};
use bggm::Class;
use serde::{Deserialize, Serialize};

use crate::config::{config_hash, RunConfig};
use crate::error::{CliError, Result};
use crate::export::*;
use crate::io::*;

pub const RESULTS_FILE: &str = "results.json";
pub const CHAIN_SUMMARY_FILE: &str = "chain_summary.tsv";
pub const PREDICTIONS_FILE: &str = "predictions.tsv";
pub const ABORT_STATE_FILE: &str = "abort_state.json";

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_predictions(path: &Path, summary: &PosteriorSummary, cut: f64, spec: &CsvSpec, prov: &Provenance) -> Result<()> {
    let preds = if summary.unknown_rows.is_empty() { Vec::new() } else { predict_labels(summary, cut)? };
    write_text(path, &predictions_tsv(&preds, spec, prov))
}

/// Writes the TSV and DOT files of all four networks at every alpha.
pub fn write_networks(
    dir: &Path,
    summary: &PosteriorSummary,
    alphas: &[f64],
    names: &[String],
    spec: &CsvSpec,
    prov: &Provenance,
) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for &alpha in alphas {
        for kind in NetworkKind::ALL {
            let call = call_network(summary, kind, alpha)?;
            let stem = network_file_stem(kind, alpha);
            let tsv = dir.join(format!("{stem}.tsv"));
            let dot = dir.join(format!("{stem}.dot"));
            write_text(&tsv, &network_tsv(&call, names, &spec.class_names, prov))?;
            write_text(&dot, &network_dot(&call, names, prov))?;
            written.extend([tsv, dot]);
        }
    }
    Ok(written)
}

/// Fits the model and writes the chain summary, results bundle, predictions
/// and network files into `cfg.out_dir`.
pub fn cmd_fit(cfg: &RunConfig) -> Result<ResultsBundle> {
    cfg.validate()?;
    let data = read_dataset(&cfg.data, &cfg.csv)?;
    data.check_fit_ready()?;
    let mut hyper = default_hyperparameters(data.p());
    hyper.center_means(&data);
    if let Some(path) = &cfg.prior_network {
        let net = read_prior_network(path, &cfg.csv.class_names)?;
        hyper = apply_prior_network(&hyper, &net, data.names())?;
    }
    ensure_dir(&cfg.out_dir)?;
    log::info!(
        "fitting n = {}, p = {}, {} unknown, {} sweeps",
        data.n(),
        data.p(),
        data.unknown().len(),
        cfg.chain.iterations
    );
    let samples = match run_chain(&data, &hyper, &cfg.chain) {
        Ok(s) => s,
        Err(bggm::Error::NumericalAbort { sweep, state }) => {
            let path = cfg.out_dir.join(ABORT_STATE_FILE);
            let dump = serde_json::json!({ "sweep": sweep, "state": state });
            if let Err(e) = write_text(&path, &dump.to_string()) {
                log::error!("could not write the abort state: {e}");
            } else {
                log::error!("chain state at the abort written to {}", path.display());
            }
            return Err(bggm::Error::NumericalAbort { sweep, state }.into());
        }
        Err(e) => return Err(e.into()),
    };
    let summary = summarize(&samples)?;
    let prov = Provenance::new(cfg.chain.seed, cfg.hash());

    write_text(&cfg.out_dir.join(CHAIN_SUMMARY_FILE), &chain_summary_tsv(&samples, &prov))?;
    write_predictions(&cfg.out_dir.join(PREDICTIONS_FILE), &summary, cfg.cut, &cfg.csv, &prov)?;
    write_networks(&cfg.out_dir, &summary, &cfg.alphas, data.names(), &cfg.csv, &prov)?;
    let bundle = ResultsBundle {
        format_version: FORMAT_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").into(),
        seed: cfg.chain.seed,
        config_hash: prov.config_hash.clone(),
        config: cfg.clone(),
        names: data.names().to_vec(),
        summary,
        samples,
    };
    write_bundle(&cfg.out_dir.join(RESULTS_FILE), &bundle)?;
    Ok(bundle)
}

/// Re-extracts predicted labels from a saved bundle.
pub fn cmd_predict(results: &Path, cut: f64, out: &Path) -> Result<()> {
    let b = read_bundle(results)?;
    if !(0.0..=1.0).contains(&cut) {
        return Err(CliError::Config(format!("cut {cut} is outside [0, 1]")));
    }
    let prov = Provenance::new(b.seed, b.config_hash.clone());
    write_predictions(out, &b.summary, cut, &b.config.csv, &prov)
}

/// Re-thresholds a saved summary at new alphas.
pub fn cmd_networks(results: &Path, alphas: &[f64], out_dir: &Path) -> Result<Vec<PathBuf>> {
    let b = read_bundle(results)?;
    if alphas.is_empty() {
        return Err(CliError::Config("at least one alpha is required".into()));
    }
    ensure_dir(out_dir)?;
    let prov = Provenance::new(b.seed, b.config_hash.clone());
    write_networks(out_dir, &b.summary, alphas, &b.names, &b.config.csv, &prov)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulateArgs {
    pub p: usize,
    pub n_conserved: usize,
    pub n_diff: usize,
    pub corr_range: (f64, f64),
    pub n1: usize,
    pub n2: usize,
    /// Rows at the end of each class written with the unknown marker.
    pub unknown_per_class: usize,
    pub seed: u64,
    pub csv: CsvSpec,
    #[serde(skip)]
    pub out_dir: PathBuf,
}

pub const SIM_DATA_FILE: &str = "data.csv";
pub const SIM_TRUTH_FILE: &str = "truth.tsv";
pub const SIM_MODEL_FILE: &str = "truth.json";
pub const SIM_LABELS_FILE: &str = "truth_labels.tsv";

/// Writes a simulated dataset, its inserted edges, the full true model and,
/// when some rows are masked, their true labels.
pub fn cmd_simulate(a: &SimulateArgs) -> Result<()> {
    if a.unknown_per_class > a.n1.min(a.n2) {
        return Err(CliError::Config(format!(
            "cannot mask {} rows per class with class sizes {} and {}",
            a.unknown_per_class, a.n1, a.n2
        )));
    }
    let model = generate_model(a.p, a.n_conserved, a.n_diff, a.corr_range, a.seed)?;
    let full = sample_data(&model, a.n1, a.n2, a.seed)?;
    let masked: Vec<usize> =
        ((a.n1 - a.unknown_per_class)..a.n1).chain((a.n1 + a.n2 - a.unknown_per_class)..(a.n1 + a.n2)).collect();
    let mut labels = full.labels().to_vec();
    for &r in &masked {
        labels[r] = None;
    }
    let data = full.select(&(0..full.n()).collect::<Vec<_>>(), Some(labels))?;
    ensure_dir(&a.out_dir)?;
    let prov = Provenance::new(a.seed, config_hash(a));
    let header = prov.tsv();
    write_dataset(&a.out_dir.join(SIM_DATA_FILE), &data, &a.csv, Some(header.trim_end()))?;

    let names = data.names();
    let mut t = header.clone();
    t.push_str("protein_i\tprotein_j\tlabel\ttarget\trealized\n");
    for e in &model.inserted {
        let realized = e.realized.map_or("dropped".to_string(), |v| format!("{v}"));
        t.push_str(&format!("{}\t{}\t{}\t{}\t{}\n", names[e.i], names[e.j], model.label(e.i, e.j).as_str(), e.target, realized));
    }
    write_text(&a.out_dir.join(SIM_TRUTH_FILE), &t)?;
    let json = serde_json::to_string(&model).map_err(|e| CliError::Format { path: SIM_MODEL_FILE.into(), message: e.to_string() })?;
    write_text(&a.out_dir.join(SIM_MODEL_FILE), &json)?;
    if !masked.is_empty() {
        let mut l = header;
        l.push_str("row\tlabel\n");
        for &r in &masked {
            l.push_str(&format!("{}\t{}\n", r + 1, a.csv.label_name(full.labels()[r])));
        }
        write_text(&a.out_dir.join(SIM_LABELS_FILE), &l)?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkArgs {
    pub data: PathBuf,
    pub csv: CsvSpec,
    pub plan: SplitPlan,
    pub knn_k: usize,
    /// Chain settings of the graph-based classifier; its seed is re-derived per replicate.
    pub chain: ChainConfig,
    /// Run only this replicate.
    #[serde(skip)]
    pub replicate: Option<usize>,
    #[serde(skip)]
    pub out_dir: PathBuf,
}

pub const BENCH_TABLE_FILE: &str = "benchmark_table.tsv";
pub const BENCH_REPLICATES_FILE: &str = "benchmark_replicates.tsv";

pub fn cmd_benchmark(a: &BenchmarkArgs) -> Result<BenchmarkResult> {
    a.plan.validate()?;
    let data = read_dataset(&a.data, &a.csv)?;
    data.check_fit_ready()?;
    let kinds = ClassifierKind::table(a.knn_k);
    let bgbc = BgbcSettings { hyper: default_hyperparameters(data.p()), chain: a.chain.clone() };
    let res = match a.replicate {
        None => benchmark(&data, &a.plan, &kinds, Some(&bgbc))?,
        Some(r) => {
            if r >= a.plan.n_replicates {
                return Err(CliError::Config(format!("replicate {r} is outside 0..{}", a.plan.n_replicates)));
            }
            let one = run_replicate(&data, &a.plan, r, &kinds, Some(&bgbc))?;
            BenchmarkResult { classifiers: kinds, mean: one.errors.clone(), sd: vec![0.0; one.errors.len()], replicates: vec![one] }
        }
    };
    ensure_dir(&a.out_dir)?;
    let prov = Provenance::new(a.plan.seed, config_hash(a));
    write_text(&a.out_dir.join(BENCH_TABLE_FILE), &benchmark_table_tsv(&res, &prov))?;
    write_text(&a.out_dir.join(BENCH_REPLICATES_FILE), &benchmark_replicates_tsv(&res, &prov))?;
    Ok(res)
}

/// Class labels of the masked rows of a simulated dataset, keyed by 1-based row.
pub fn read_truth_labels(path: &Path, spec: &CsvSpec) -> Result<Vec<(usize, Class)>> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.starts_with('#')).skip(1) {
        let f: Vec<&str> = line.split('\t').collect();
        let bad = |m: &str| CliError::Parse { path: path.into(), line: n as u64 + 1, column: String::new(), message: m.into() };
        let row = f.first().and_then(|x| x.parse().ok()).ok_or_else(|| bad("bad row number"))?;
        let class = match f.get(1) {
            Some(s) if *s == spec.class_names[0] => Class::One,
            Some(s) if *s == spec.class_names[1] => Class::Two,
            _ => return Err(bad("bad label")),
        };
        out.push((row, class));
    }
    Ok(out)
}
