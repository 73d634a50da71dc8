//! Reference classifiers and the repeated random-split benchmark.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{predict_labels, summarize};
use crate::model::{Class, Dataset, Hyperparameters};
use crate::pdcore::cholesky;
use crate::sampler::{run_chain, stream_rng, ChainConfig};

const VARIANCE_FLOOR: f64 = 1e-12;

/// A classifier column of the benchmark table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ClassifierKind {
    Knn(usize),
    Lda,
    Dlda,
    Dqda,
    Nbc,
    /// The graph-based classifier: one chain per split with the test rows unlabeled.
    Bgbc,
}

impl ClassifierKind {
    /// Table column order: KNN, LDA, DLDA, DQDA, NBC, BGBC.
    pub fn table(k: usize) -> Vec<ClassifierKind> {
        use ClassifierKind::*;
        vec![Knn(k), Lda, Dlda, Dqda, Nbc, Bgbc]
    }

    pub fn name(self) -> &'static str {
        match self {
            ClassifierKind::Knn(_) => "KNN",
            ClassifierKind::Lda => "LDA",
            ClassifierKind::Dlda => "DLDA",
            ClassifierKind::Dqda => "DQDA",
            ClassifierKind::Nbc => "NBC",
            ClassifierKind::Bgbc => "BGBC",
        }
    }

    fn baseline(self) -> Option<Baseline> {
        Some(match self {
            ClassifierKind::Knn(k) => Baseline::Knn(k),
            ClassifierKind::Lda => Baseline::Lda,
            ClassifierKind::Dlda => Baseline::Dlda,
            ClassifierKind::Dqda => Baseline::Dqda,
            ClassifierKind::Nbc => Baseline::GaussianNb,
            ClassifierKind::Bgbc => return None,
        })
    }
}

impl fmt::Display for ClassifierKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Classical classifiers on labeled rows of an `n × p` matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Baseline {
    /// Euclidean k-nearest neighbours with majority vote.
    Knn(usize),
    /// Pooled full covariance.
    Lda,
    /// Pooled diagonal covariance.
    Dlda,
    /// Per-class diagonal covariance.
    Dqda,
    /// Per-class independent Gaussians, evaluated as a sum of univariate log densities.
    GaussianNb,
}

struct ClassMoments {
    prior: f64,
    mean: Vec<f64>,
    var: Vec<f64>,
    n: usize,
}

fn moments(x: &DMatrix<f64>, y: &[Class], k: Class) -> ClassMoments {
    let rows: Vec<usize> = (0..y.len()).filter(|&r| y[r] == k).collect();
    let p = x.ncols();
    let n = rows.len();
    let mean: Vec<f64> = (0..p).map(|c| rows.iter().map(|&r| x[(r, c)]).sum::<f64>() / n as f64).collect();
    let var = (0..p)
        .map(|c| {
            let ss: f64 = rows.iter().map(|&r| (x[(r, c)] - mean[c]).powi(2)).sum();
            (ss / (n.max(2) - 1) as f64).max(VARIANCE_FLOOR)
        })
        .collect();
    ClassMoments { prior: n as f64 / y.len() as f64, mean, var, n }
}

pub enum Fitted {
    Knn { k: usize, x: DMatrix<f64>, y: Vec<Class> },
    Linear { means: [Vec<f64>; 2], log_prior: [f64; 2], precision: DMatrix<f64> },
    Diagonal { means: [Vec<f64>; 2], log_prior: [f64; 2], var: [Vec<f64>; 2], with_log_det: bool },
    NaiveBayes { means: [Vec<f64>; 2], log_prior: [f64; 2], var: [Vec<f64>; 2] },
}

impl Baseline {
    pub fn fit(self, x: &DMatrix<f64>, y: &[Class]) -> Result<Fitted> {
        if x.nrows() != y.len() {
            return Err(Error::InvalidInput(format!("{} rows but {} labels", x.nrows(), y.len())));
        }
        if Class::BOTH.iter().any(|k| !y.contains(k)) {
            return Err(Error::Validation("training data must contain both classes".into()));
        }
        if let Baseline::Knn(k) = self {
            if k == 0 {
                return Err(Error::InvalidInput("k must be positive".into()));
            }
            return Ok(Fitted::Knn { k, x: x.clone(), y: y.to_vec() });
        }
        let m = [moments(x, y, Class::One), moments(x, y, Class::Two)];
        let means = [m[0].mean.clone(), m[1].mean.clone()];
        let log_prior = [m[0].prior.ln(), m[1].prior.ln()];
        let p = x.ncols();
        let pooled_df = (y.len().max(3) - 2) as f64;
        Ok(match self {
            Baseline::Lda => {
                let mut cov = DMatrix::zeros(p, p);
                for (r, k) in y.iter().enumerate() {
                    let mu = &means[k.index()];
                    let d = DVector::from_fn(p, |c, _| x[(r, c)] - mu[c]);
                    cov += &d * d.transpose();
                }
                cov /= pooled_df;
                let mut ridge = 1e-6 * cov.trace() / p as f64;
                if !(ridge > 0.0) {
                    ridge = 1e-6;
                }
                while cholesky(&cov).is_none() {
                    for i in 0..p {
                        cov[(i, i)] += ridge;
                    }
                    ridge *= 10.0;
                }
                let precision = cov.cholesky().expect("regularized covariance is positive definite").inverse();
                Fitted::Linear { means, log_prior, precision }
            }
            Baseline::Dlda => {
                let var: Vec<f64> = (0..p)
                    .map(|c| {
                        let ss = m.iter().map(|mk| mk.var[c] * (mk.n.max(2) - 1) as f64).sum::<f64>();
                        (ss / pooled_df).max(VARIANCE_FLOOR)
                    })
                    .collect();
                Fitted::Diagonal { means, log_prior, var: [var.clone(), var], with_log_det: false }
            }
            Baseline::Dqda => Fitted::Diagonal {
                means,
                log_prior,
                var: [m[0].var.clone(), m[1].var.clone()],
                with_log_det: true,
            },
            Baseline::GaussianNb => Fitted::NaiveBayes { means, log_prior, var: [m[0].var.clone(), m[1].var.clone()] },
            Baseline::Knn(_) => unreachable!(),
        })
    }
}

fn pick(scores: [f64; 2]) -> Class {
    if scores[0] >= scores[1] {
        Class::One
    } else {
        Class::Two
    }
}

impl Fitted {
    pub fn classify(&self, test: &DMatrix<f64>) -> Vec<Class> {
        (0..test.nrows())
            .map(|r| {
                let x: Vec<f64> = test.row(r).iter().copied().collect();
                self.classify_one(&x)
            })
            .collect()
    }

    fn classify_one(&self, x: &[f64]) -> Class {
        match self {
            Fitted::Knn { k, x: train, y } => {
                let mut dist: Vec<(f64, usize)> = (0..train.nrows())
                    .map(|r| (x.iter().enumerate().map(|(c, v)| (v - train[(r, c)]).powi(2)).sum::<f64>(), r))
                    .collect();
                dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                let near = &dist[..(*k).min(dist.len())];
                let ones = near.iter().filter(|(_, r)| y[*r] == Class::One).count();
                let twos = near.len() - ones;
                match ones.cmp(&twos) {
                    std::cmp::Ordering::Greater => Class::One,
                    std::cmp::Ordering::Less => Class::Two,
                    std::cmp::Ordering::Equal => y[near[0].1],
                }
            }
            Fitted::Linear { means, log_prior, precision } => {
                let score = |k: usize| {
                    let d = DVector::from_fn(x.len(), |c, _| x[c] - means[k][c]);
                    -0.5 * (precision * &d).dot(&d) + log_prior[k]
                };
                pick([score(0), score(1)])
            }
            Fitted::Diagonal { means, log_prior, var, with_log_det } => {
                let score = |k: usize| {
                    let mut s = log_prior[k];
                    for c in 0..x.len() {
                        s -= 0.5 * (x[c] - means[k][c]).powi(2) / var[k][c];
                        if *with_log_det {
                            s -= 0.5 * var[k][c].ln();
                        }
                    }
                    s
                };
                pick([score(0), score(1)])
            }
            Fitted::NaiveBayes { means, log_prior, var } => {
                let score = |k: usize| {
                    log_prior[k]
                        + (0..x.len())
                            .map(|c| {
                                let v = var[k][c];
                                -0.5 * ((2.0 * std::f64::consts::PI * v).ln() + (x[c] - means[k][c]).powi(2) / v)
                            })
                            .sum::<f64>()
                };
                pick([score(0), score(1)])
            }
        }
    }
}

/// Repeated train/test splitting protocol.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub n_replicates: usize,
    pub train_fraction: f64,
    pub seed: u64,
    pub stratified: bool,
}

impl SplitPlan {
    pub fn validate(&self) -> Result<()> {
        if self.n_replicates == 0 {
            return Err(Error::InvalidInput("need at least one replicate".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::InvalidInput(format!("train fraction must lie in (0, 1), got {}", self.train_fraction)));
        }
        Ok(())
    }
}

/// Train and test rows of one replicate.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

const MAX_RESAMPLES: usize = 1000;

/// Deterministic split for replicate `index`. Degenerate splits (a class
/// missing from training, or an empty test set) are redrawn.
pub fn split(d: &Dataset, plan: &SplitPlan, index: usize) -> Result<Split> {
    let mut rng = stream_rng(plan.seed, index as u64 + 1);
    let labels = d.labels();
    for attempt in 0..MAX_RESAMPLES {
        let mut train = Vec::new();
        let mut test = Vec::new();
        if plan.stratified {
            for k in Class::BOTH {
                let mut rows: Vec<usize> = d.labeled(k).collect();
                rows.shuffle(&mut rng);
                let mut n_train = (plan.train_fraction * rows.len() as f64).round() as usize;
                if rows.len() >= 2 {
                    n_train = n_train.clamp(1, rows.len() - 1);
                }
                train.extend_from_slice(&rows[..n_train]);
                test.extend_from_slice(&rows[n_train..]);
            }
        } else {
            let mut rows: Vec<usize> = (0..d.n()).collect();
            rows.shuffle(&mut rng);
            let n_train = (plan.train_fraction * rows.len() as f64).round() as usize;
            train.extend_from_slice(&rows[..n_train]);
            test.extend_from_slice(&rows[n_train..]);
        }
        let complete = Class::BOTH.iter().all(|k| train.iter().filter(|&&r| labels[r] == Some(*k)).count() >= 2);
        if complete && !test.is_empty() {
            train.sort_unstable();
            test.sort_unstable();
            return Ok(Split { train, test });
        }
        log::warn!("replicate {index}: degenerate split on attempt {attempt}, resampling");
    }
    Err(Error::Validation(format!("could not draw a usable split for replicate {index}")))
}

/// Test-set misclassification percentages of one replicate, in classifier order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicateResult {
    pub index: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub errors: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkResult {
    pub classifiers: Vec<ClassifierKind>,
    pub replicates: Vec<ReplicateResult>,
    /// Mean misclassification percentage per classifier.
    pub mean: Vec<f64>,
    /// Sample standard deviation (`n - 1` denominator; 0 for one replicate).
    pub sd: Vec<f64>,
}

/// Settings for the graph-based classifier inside the benchmark.
#[derive(Clone, Debug)]
pub struct BgbcSettings {
    /// Prior template; the mean prior is re-centered on each training split.
    pub hyper: Hyperparameters,
    pub chain: ChainConfig,
}

fn error_pct(pred: &[Class], truth: &[Class]) -> f64 {
    let wrong = pred.iter().zip(truth).filter(|(a, b)| a != b).count();
    100.0 * wrong as f64 / truth.len() as f64
}

/// Runs one replicate of the benchmark.
pub fn run_replicate(
    d: &Dataset,
    plan: &SplitPlan,
    index: usize,
    classifiers: &[ClassifierKind],
    bgbc: Option<&BgbcSettings>,
) -> Result<ReplicateResult> {
    let sp = split(d, plan, index)?;
    let labels = d.labels();
    let x = d.to_matrix();
    let rows = |idx: &[usize]| DMatrix::from_fn(idx.len(), d.p(), |r, c| x[(idx[r], c)]);
    let (x_train, x_test) = (rows(&sp.train), rows(&sp.test));
    let y_train: Vec<Class> = sp.train.iter().map(|&r| labels[r].expect("labeled")).collect();
    let y_test: Vec<Class> = sp.test.iter().map(|&r| labels[r].expect("labeled")).collect();

    let mut errors = Vec::with_capacity(classifiers.len());
    for kind in classifiers {
        let pred = match kind.baseline() {
            Some(b) => b.fit(&x_train, &y_train)?.classify(&x_test),
            None => {
                let settings = bgbc.ok_or_else(|| Error::InvalidInput("BGBC requested without chain settings".into()))?;
                bgbc_predict(d, &sp, index, settings)?
            }
        };
        errors.push(error_pct(&pred, &y_test));
    }
    Ok(ReplicateResult { index, n_train: sp.train.len(), n_test: sp.test.len(), errors })
}

fn bgbc_predict(d: &Dataset, sp: &Split, index: usize, settings: &BgbcSettings) -> Result<Vec<Class>> {
    let mut rows = sp.train.clone();
    rows.extend_from_slice(&sp.test);
    let mut labels: Vec<Option<Class>> = sp.train.iter().map(|&r| d.labels()[r]).collect();
    labels.extend(std::iter::repeat_n(None, sp.test.len()));
    let data = d.select(&rows, Some(labels))?;
    let mut hyper = settings.hyper.clone();
    hyper.center_means(&data);
    let mut chain = settings.chain.clone();
    chain.seed = stream_rng(settings.chain.seed, 1 << 32 | index as u64).next_u64();
    let samples = run_chain(&data, &hyper, &chain)?;
    let summary = summarize(&samples)?;
    Ok(predict_labels(&summary, 0.5)?.into_iter().map(|p| p.class).collect())
}

/// Repeated-split misclassification benchmark; replicates run in parallel.
pub fn benchmark(
    d: &Dataset,
    plan: &SplitPlan,
    classifiers: &[ClassifierKind],
    bgbc: Option<&BgbcSettings>,
) -> Result<BenchmarkResult> {
    plan.validate()?;
    if d.labels().iter().any(Option::is_none) {
        return Err(Error::Validation("benchmark needs every sample labeled".into()));
    }
    let replicates = (0..plan.n_replicates)
        .into_par_iter()
        .map(|r| run_replicate(d, plan, r, classifiers, bgbc))
        .collect::<Result<Vec<_>>>()?;
    let n = replicates.len() as f64;
    let mean: Vec<f64> = (0..classifiers.len()).map(|c| replicates.iter().map(|r| r.errors[c]).sum::<f64>() / n).collect();
    let sd = (0..classifiers.len())
        .map(|c| {
            if replicates.len() < 2 {
                return 0.0;
            }
            let ss: f64 = replicates.iter().map(|r| (r.errors[c] - mean[c]).powi(2)).sum();
            (ss / (n - 1.0)).sqrt()
        })
        .collect();
    Ok(BenchmarkResult { classifiers: classifiers.to_vec(), replicates, mean, sd })
}
