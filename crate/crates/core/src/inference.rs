//! Posterior summaries and Bayesian-FDR network calls.

use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Class;
use crate::pdcore::{n_pairs, pair_index, pairs_columnwise, SymmetricMatrix};
use crate::sampler::ChainSamples;

/// Threshold reported when no edge can be called at the requested level.
pub const EMPTY_CALL_THRESHOLD: f64 = 1.0 + f64::EPSILON;

/// Model-averaged quantities over all retained draws.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub p: usize,
    pub n_draws: usize,
    /// Edge inclusion probabilities per class.
    pub ppi: [DMatrix<f64>; 2],
    /// Probability that an edge is differential (`λ = 1`).
    pub ppi_diff: DMatrix<f64>,
    /// Probability that an edge is conserved (`λ = 0`).
    pub ppi_common: DMatrix<f64>,
    /// Posterior mean of `-A ⊙ R` off the diagonal, per class.
    pub mean_partial_corr: [DMatrix<f64>; 2],
    /// Dataset rows sampled as unknown, aligned with `class1_probability`.
    pub unknown_rows: Vec<usize>,
    pub class1_probability: Vec<f64>,
    /// Model-averaged precision matrix per class.
    pub bma_omega: [SymmetricMatrix; 2],
}

impl PosteriorSummary {
    pub fn class_ppi(&self, k: Class) -> &DMatrix<f64> {
        &self.ppi[k.index()]
    }
}

pub fn summarize(samples: &ChainSamples) -> Result<PosteriorSummary> {
    let m = samples.draws.len();
    if m == 0 {
        return Err(Error::InvalidInput("cannot summarize an empty draw set".into()));
    }
    let p = samples.p;
    let n_u = samples.unknown_rows.len();
    let mut ppi = [DMatrix::zeros(p, p), DMatrix::zeros(p, p)];
    let mut diff = DMatrix::zeros(p, p);
    let mut pcor = [DMatrix::zeros(p, p), DMatrix::zeros(p, p)];
    let mut omega = [DMatrix::zeros(p, p), DMatrix::zeros(p, p)];
    let mut class1 = vec![0.0; n_u];

    for d in &samples.draws {
        for k in 0..2 {
            let s = &d.s[k];
            for i in 0..p {
                omega[k][(i, i)] += s[i] * s[i];
            }
            for (i, j) in pairs_columnwise(p) {
                let t = pair_index(i, j);
                if d.a[k][t] {
                    let r = d.r[k][t];
                    ppi[k][(i, j)] += 1.0;
                    pcor[k][(i, j)] -= r;
                    omega[k][(i, j)] += s[i] * s[j] * r;
                }
            }
        }
        for (i, j) in pairs_columnwise(p) {
            if d.lambda[pair_index(i, j)] {
                diff[(i, j)] += 1.0;
            }
        }
        for (o, z) in d.z_u.iter().enumerate() {
            if *z == Class::One {
                class1[o] += 1.0;
            }
        }
    }

    let mf = m as f64;
    let finish = |mut x: DMatrix<f64>, diag: Option<f64>| {
        x /= mf;
        for (i, j) in pairs_columnwise(p) {
            x[(j, i)] = x[(i, j)];
        }
        if let Some(v) = diag {
            x.fill_diagonal(v);
        }
        x
    };
    let [p1, p2] = ppi;
    let [c1, c2] = pcor;
    let [o1, o2] = omega;
    let ppi_diff = finish(diff, Some(0.0));
    let mut ppi_common = ppi_diff.map(|x| 1.0 - x);
    ppi_common.fill_diagonal(0.0);
    Ok(PosteriorSummary {
        p,
        n_draws: m,
        ppi: [finish(p1, Some(0.0)), finish(p2, Some(0.0))],
        ppi_diff,
        ppi_common,
        mean_partial_corr: [finish(c1, Some(1.0)), finish(c2, Some(1.0))],
        unknown_rows: samples.unknown_rows.clone(),
        class1_probability: class1.into_iter().map(|c| c / mf).collect(),
        bma_omega: [SymmetricMatrix::from_upper(finish(o1, None))?, SymmetricMatrix::from_upper(finish(o2, None))?],
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FdrThreshold {
    /// Call every item with probability `>= phi`.
    pub phi: f64,
    /// Length of the longest prefix of the sorted probabilities whose mean
    /// q-value stays within `alpha`.
    pub selected: usize,
}

/// Bayesian FDR threshold: sort probabilities in descending order and take the
/// longest prefix whose average q-value `1 - P` is at most `alpha`.
pub fn fdr_threshold(probs: &[f64], alpha: f64) -> Result<FdrThreshold> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidInput(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if probs.is_empty() {
        return Err(Error::InvalidInput("no probabilities to threshold".into()));
    }
    if let Some(x) = probs.iter().find(|x| !(0.0..=1.0).contains(*x)) {
        return Err(Error::InvalidInput(format!("probability {x} outside [0, 1]")));
    }
    let mut sorted = probs.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut q_sum = 0.0;
    let mut selected = 0;
    for (t, p) in sorted.iter().enumerate() {
        q_sum += 1.0 - p;
        // slack absorbs rounding in the running sum
        if q_sum / (t + 1) as f64 <= alpha + 1e-12 {
            selected = t + 1;
        }
    }
    let phi = if selected == 0 { EMPTY_CALL_THRESHOLD } else { sorted[selected - 1] };
    Ok(FdrThreshold { phi, selected })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NetworkKind {
    Class1,
    Class2,
    Differential,
    Conserved,
}

impl NetworkKind {
    pub const ALL: [NetworkKind; 4] =
        [NetworkKind::Class1, NetworkKind::Class2, NetworkKind::Differential, NetworkKind::Conserved];
}

impl fmt::Display for NetworkKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NetworkKind::Class1 => "class1",
            NetworkKind::Class2 => "class2",
            NetworkKind::Differential => "differential",
            NetworkKind::Conserved => "conserved",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sign {
    Positive,
    Negative,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalledEdge {
    pub i: usize,
    pub j: usize,
    pub ppi: f64,
    /// Sign of the model-averaged partial correlation.
    pub sign: Sign,
    /// `|partial correlation|` scaled by the largest value among called edges.
    pub weight: f64,
    /// For differential edges, the class in which the edge is present.
    pub carrier: Option<Class>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkCall {
    pub kind: NetworkKind,
    pub alpha: f64,
    pub threshold: f64,
    pub edges: Vec<CalledEdge>,
}

/// Thresholds one PPI matrix at Bayesian FDR `alpha`.
pub fn call_network(summary: &PosteriorSummary, kind: NetworkKind, alpha: f64) -> Result<NetworkCall> {
    let p = summary.p;
    let probs_matrix = match kind {
        NetworkKind::Class1 => &summary.ppi[0],
        NetworkKind::Class2 => &summary.ppi[1],
        NetworkKind::Differential => &summary.ppi_diff,
        NetworkKind::Conserved => &summary.ppi_common,
    };
    let pairs: Vec<(usize, usize)> = pairs_columnwise(p).collect();
    debug_assert_eq!(pairs.len(), n_pairs(p));
    let probs: Vec<f64> = pairs.iter().map(|&(i, j)| probs_matrix[(i, j)]).collect();
    let FdrThreshold { phi, .. } = fdr_threshold(&probs, alpha)?;

    let pc = &summary.mean_partial_corr;
    let mut edges: Vec<(usize, CalledEdge, f64)> = pairs
        .iter()
        .zip(&probs)
        .enumerate()
        .filter(|(_, (_, &pr))| pr >= phi)
        .map(|(t, (&(i, j), &ppi))| {
            let (value, carrier) = match kind {
                NetworkKind::Class1 => (pc[0][(i, j)], None),
                NetworkKind::Class2 => (pc[1][(i, j)], None),
                NetworkKind::Conserved => (0.5 * (pc[0][(i, j)] + pc[1][(i, j)]), None),
                NetworkKind::Differential => {
                    let k = if summary.ppi[1][(i, j)] > summary.ppi[0][(i, j)] { Class::Two } else { Class::One };
                    (pc[k.index()][(i, j)], Some(k))
                }
            };
            let sign = if value < 0.0 { Sign::Negative } else { Sign::Positive };
            (t, CalledEdge { i, j, ppi, sign, weight: 0.0, carrier }, value.abs())
        })
        .collect();
    let max = edges.iter().map(|e| e.2).fold(0.0, f64::max);
    for (_, e, mag) in &mut edges {
        e.weight = if max > 0.0 { *mag / max } else { 0.0 };
    }
    edges.sort_by(|a, b| b.1.ppi.total_cmp(&a.1.ppi).then(a.0.cmp(&b.0)));
    Ok(NetworkCall { kind, alpha, threshold: phi, edges: edges.into_iter().map(|e| e.1).collect() })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    /// Dataset row.
    pub row: usize,
    pub class: Class,
    pub class1_probability: f64,
}

/// Assigns class 1 when the posterior class-1 probability is at least `cut`.
pub fn predict_labels(summary: &PosteriorSummary, cut: f64) -> Result<Vec<Prediction>> {
    if summary.unknown_rows.is_empty() {
        return Err(Error::InvalidInput("the fitted run had no unknown samples".into()));
    }
    if !(0.0..=1.0).contains(&cut) {
        return Err(Error::InvalidInput(format!("cut must lie in [0, 1], got {cut}")));
    }
    Ok(summary
        .unknown_rows
        .iter()
        .zip(&summary.class1_probability)
        .map(|(&row, &pr)| Prediction {
            row,
            class: if pr >= cut { Class::One } else { Class::Two },
            class1_probability: pr,
        })
        .collect())
}
