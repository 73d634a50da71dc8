//! Ground-truth two-class graphical models and data drawn from them.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{call_network, NetworkCall, NetworkKind, PosteriorSummary};
use crate::model::{Class, Dataset};
use crate::pdcore::{cholesky, n_pairs, pair_index, pairs_columnwise, BinaryMatrix, SymmetricMatrix};
use crate::sampler::stream_rng;

const MAX_HALVINGS: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EdgeLabel {
    Null,
    Conserved,
    DifferentialClass1,
    DifferentialClass2,
}

impl EdgeLabel {
    pub fn in_class(self, k: Class) -> bool {
        matches!(
            (self, k),
            (EdgeLabel::Conserved, _) | (EdgeLabel::DifferentialClass1, Class::One) | (EdgeLabel::DifferentialClass2, Class::Two)
        )
    }

    pub fn is_differential(self) -> bool {
        matches!(self, EdgeLabel::DifferentialClass1 | EdgeLabel::DifferentialClass2)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EdgeLabel::Null => "null",
            EdgeLabel::Conserved => "conserved",
            EdgeLabel::DifferentialClass1 => "differential-class1",
            EdgeLabel::DifferentialClass2 => "differential-class2",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrueClass {
    pub adjacency: BinaryMatrix,
    /// Partial correlations (unit diagonal, zero off the graph).
    pub partial_corr: SymmetricMatrix,
    pub s: Vec<f64>,
    pub mean: Vec<f64>,
    pub omega: SymmetricMatrix,
}

/// One attempted edge insertion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InsertedEdge {
    pub i: usize,
    pub j: usize,
    pub label: EdgeLabel,
    /// Drawn partial correlation before any shrinkage.
    pub target: f64,
    /// Value actually placed in the model (`None` when the edge was dropped).
    pub realized: Option<f64>,
}

impl InsertedEdge {
    pub fn shrunk(&self) -> bool {
        self.realized != Some(self.target)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrueModel {
    pub p: usize,
    pub classes: [TrueClass; 2],
    /// Per-pair labels, columnwise upper triangle.
    pub labels: Vec<EdgeLabel>,
    pub inserted: Vec<InsertedEdge>,
}

impl TrueModel {
    pub fn label(&self, i: usize, j: usize) -> EdgeLabel {
        self.labels[pair_index(i, j)]
    }

    pub fn class(&self, k: Class) -> &TrueClass {
        &self.classes[k.index()]
    }

    /// Replaces the class means (zero by default).
    pub fn with_means(mut self, means: [Vec<f64>; 2]) -> Result<Self> {
        if means.iter().any(|m| m.len() != self.p) {
            return Err(Error::InvalidInput("mean vector has the wrong length".into()));
        }
        let [m1, m2] = means;
        self.classes[0].mean = m1;
        self.classes[1].mean = m2;
        Ok(self)
    }
}

/// Smallest eigenvalue a generated correlation matrix may have. A bare
/// positive-definiteness test admits nearly singular truths whose marginal
/// variances explode.
pub const MIN_EIGENVALUE: f64 = 0.1;

fn well_conditioned(c: &SymmetricMatrix) -> bool {
    cholesky(c.as_matrix()).is_some() && c.as_matrix().clone().symmetric_eigenvalues().min() >= MIN_EIGENVALUE
}

/// Random two-class sparse model with `n_conserved` shared edges and `n_diff`
/// edges present in one class only (split evenly, class 1 taking any odd one).
///
/// Partial-correlation magnitudes are uniform in `corr_range` with random
/// signs. An insertion that pushes the smallest eigenvalue of the correlation
/// matrix below [`MIN_EIGENVALUE`] is halved until it fits, and dropped after 20 halvings.
pub fn generate_model(p: usize, n_conserved: usize, n_diff: usize, corr_range: (f64, f64), seed: u64) -> Result<TrueModel> {
    if p < 2 {
        return Err(Error::InvalidInput(format!("need p >= 2, got {p}")));
    }
    if n_conserved + n_diff > n_pairs(p) {
        return Err(Error::InvalidInput(format!(
            "{} edges requested but p = {p} has only {} pairs",
            n_conserved + n_diff,
            n_pairs(p)
        )));
    }
    let (lo, hi) = corr_range;
    if !(0.0 < lo && lo <= hi && hi < 1.0) {
        return Err(Error::InvalidInput(format!("correlation range ({lo}, {hi}) must satisfy 0 < lo <= hi < 1")));
    }
    let mut rng = stream_rng(seed, 0);
    let mut pairs: Vec<(usize, usize)> = pairs_columnwise(p).collect();
    pairs.shuffle(&mut rng);

    let n_diff1 = n_diff.div_ceil(2);
    let mut corr = [SymmetricMatrix::identity(p), SymmetricMatrix::identity(p)];
    let mut labels = vec![EdgeLabel::Null; n_pairs(p)];
    let mut inserted = Vec::with_capacity(n_conserved + n_diff);

    for (t, &(i, j)) in pairs.iter().take(n_conserved + n_diff).enumerate() {
        let label = if t < n_conserved {
            EdgeLabel::Conserved
        } else if t < n_conserved + n_diff1 {
            EdgeLabel::DifferentialClass1
        } else {
            EdgeLabel::DifferentialClass2
        };
        let magnitude = if hi > lo { rng.random_range(lo..=hi) } else { lo };
        let target = if rng.random::<bool>() { magnitude } else { -magnitude };
        let targets: Vec<usize> = Class::BOTH.iter().filter(|k| label.in_class(**k)).map(|k| k.index()).collect();

        let mut value = target;
        let mut realized = None;
        for _ in 0..=MAX_HALVINGS {
            for &k in &targets {
                corr[k].set(i, j, -value);
            }
            if targets.iter().all(|&k| well_conditioned(&corr[k])) {
                realized = Some(value);
                break;
            }
            value *= 0.5;
        }
        if realized.is_none() {
            for &k in &targets {
                corr[k].set(i, j, 0.0);
            }
        }
        labels[pair_index(i, j)] = if realized.is_some() { label } else { EdgeLabel::Null };
        inserted.push(InsertedEdge { i, j, label, target, realized });
    }

    let classes = [0, 1].map(|k| {
        let s: Vec<f64> = (0..p).map(|_| rng.random_range(0.5..=2.0)).collect();
        let c = &corr[k];
        let omega = DMatrix::from_fn(p, p, |a, b| s[a] * s[b] * c.get(a, b));
        let mut rho = c.clone();
        let mut adj = BinaryMatrix::empty(p);
        for (a, b) in pairs_columnwise(p) {
            rho.set(a, b, -c.get(a, b));
            adj.set(a, b, c.get(a, b) != 0.0);
        }
        TrueClass {
            adjacency: adj,
            partial_corr: rho,
            s,
            mean: vec![0.0; p],
            omega: SymmetricMatrix::from_upper(omega).expect("square"),
        }
    });
    Ok(TrueModel { p, classes, labels, inserted })
}

/// Draws `n1` class-1 rows followed by `n2` class-2 rows.
pub fn sample_data(m: &TrueModel, n1: usize, n2: usize, seed: u64) -> Result<Dataset> {
    let p = m.p;
    let mut rng = stream_rng(seed, 1);
    let mut y = DMatrix::zeros(n1 + n2, p);
    let mut labels = Vec::with_capacity(n1 + n2);
    let mut row = 0;
    for (k, n) in [(Class::One, n1), (Class::Two, n2)] {
        let tc = m.class(k);
        let sigma = tc
            .omega
            .as_matrix()
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Precondition(format!("{k} precision is not positive definite")))?
            .inverse();
        let l = cholesky(&sigma).ok_or_else(|| Error::Numerical(format!("{k} covariance factorization failed")))?;
        for _ in 0..n {
            let z = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
            let x = &l * z;
            for c in 0..p {
                y[(row, c)] = tc.mean[c] + x[c];
            }
            labels.push(Some(k));
            row += 1;
        }
    }
    Dataset::new(y, labels, (1..=p).map(|i| format!("X{i}")).collect())
}

/// Area under the ROC curve of `scores` against binary `truth`, ties counted
/// as one half. `None` when either class is empty.
pub fn auc(scores: &[f64], truth: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), truth.len());
    let n_pos = truth.iter().filter(|t| **t).count();
    let n_neg = truth.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let mid_rank = (start + end + 1) as f64 / 2.0;
        rank_sum += mid_rank * order[start..end].iter().filter(|&&o| truth[o]).count() as f64;
        start = end;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos * n_neg) as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CallMetrics {
    pub n_called: usize,
    pub n_true: usize,
    /// False discoveries over calls (0 when nothing is called).
    pub fdp: f64,
    /// True discoveries over true edges (`None` when there are none).
    pub sensitivity: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkMetrics {
    pub auc: Option<f64>,
    pub call: CallMetrics,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecoveryMetrics {
    pub alpha: f64,
    pub class: [NetworkMetrics; 2],
    pub differential: NetworkMetrics,
}

fn truth_for(m: &TrueModel, kind: NetworkKind) -> Vec<bool> {
    m.labels
        .iter()
        .map(|l| match kind {
            NetworkKind::Class1 => l.in_class(Class::One),
            NetworkKind::Class2 => l.in_class(Class::Two),
            NetworkKind::Differential => l.is_differential(),
            NetworkKind::Conserved => !l.is_differential(),
        })
        .collect()
}

/// Realized false discovery proportion and sensitivity of one network call.
pub fn score_call(m: &TrueModel, call: &NetworkCall) -> CallMetrics {
    let truth = truth_for(m, call.kind);
    let n_true = truth.iter().filter(|t| **t).count();
    let n_called = call.edges.len();
    let hits = call.edges.iter().filter(|e| truth[pair_index(e.i, e.j)]).count();
    CallMetrics {
        n_called,
        n_true,
        fdp: if n_called == 0 { 0.0 } else { (n_called - hits) as f64 / n_called as f64 },
        sensitivity: (n_true > 0).then(|| hits as f64 / n_true as f64),
    }
}

/// Edge-ranking AUC plus FDR-call metrics at `alpha` for both class networks
/// and the differential network.
pub fn score_recovery(m: &TrueModel, summary: &PosteriorSummary, alpha: f64) -> Result<RecoveryMetrics> {
    if summary.p != m.p {
        return Err(Error::InvalidInput(format!("summary is for p = {}, model has p = {}", summary.p, m.p)));
    }
    let score = |kind: NetworkKind| -> Result<NetworkMetrics> {
        let mat = match kind {
            NetworkKind::Class1 => &summary.ppi[0],
            NetworkKind::Class2 => &summary.ppi[1],
            NetworkKind::Differential => &summary.ppi_diff,
            NetworkKind::Conserved => &summary.ppi_common,
        };
        let scores: Vec<f64> = pairs_columnwise(m.p).map(|(i, j)| mat[(i, j)]).collect();
        let call = call_network(summary, kind, alpha)?;
        Ok(NetworkMetrics { auc: auc(&scores, &truth_for(m, kind)), call: score_call(m, &call) })
    };
    Ok(RecoveryMetrics {
        alpha,
        class: [score(NetworkKind::Class1)?, score(NetworkKind::Class2)?],
        differential: score(NetworkKind::Differential)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pdcore::{is_positive_definite, partial_correlations};

    #[test]
    fn no_edges_gives_diagonal_precisions() {
        let m = generate_model(4, 0, 0, (0.4, 0.7), 1).unwrap();
        for k in Class::BOTH {
            let om = m.class(k).omega.as_matrix();
            assert!(pairs_columnwise(4).all(|(i, j)| om[(i, j)] == 0.0));
        }
        assert!(m.labels.iter().all(|l| *l == EdgeLabel::Null));
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_model(5, 3, 0, (0.4, 0.7), 9).unwrap();
        assert_eq!(a, generate_model(5, 3, 0, (0.4, 0.7), 9).unwrap());
        assert_ne!(a, generate_model(5, 3, 0, (0.4, 0.7), 10).unwrap());
    }

    #[test]
    fn labels_match_adjacencies() {
        let m = generate_model(10, 8, 4, (0.4, 0.7), 3).unwrap();
        for (i, j) in pairs_columnwise(10) {
            let (a1, a2) = (m.classes[0].adjacency.get(i, j), m.classes[1].adjacency.get(i, j));
            let l = m.label(i, j);
            assert_eq!(l.in_class(Class::One), a1);
            assert_eq!(l.in_class(Class::Two), a2);
            assert_eq!(l.is_differential(), a1 != a2);
        }
        for k in Class::BOTH {
            assert!(is_positive_definite(&m.class(k).omega).unwrap());
        }
        let counts = |want: EdgeLabel| m.labels.iter().filter(|l| **l == want).count();
        assert_eq!(counts(EdgeLabel::Conserved) + counts(EdgeLabel::DifferentialClass1) + counts(EdgeLabel::DifferentialClass2), 12);
        assert_eq!(counts(EdgeLabel::DifferentialClass1), 2);
    }

    #[test]
    fn partial_correlations_round_trip() {
        let m = generate_model(8, 10, 6, (0.3, 0.8), 21).unwrap();
        for k in Class::BOTH {
            let rho = partial_correlations(&m.class(k).omega).unwrap();
            for e in m.inserted.iter().filter(|e| e.label.in_class(k) && !e.shrunk()) {
                assert!((rho.get(e.i, e.j) - e.target).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn infeasible_edge_count() {
        assert!(generate_model(3, 3, 1, (0.4, 0.7), 0).is_err());
    }

    #[test]
    fn auc_edge_cases() {
        assert_eq!(auc(&[0.9, 0.1, 0.8, 0.2], &[true, false, true, false]), Some(1.0));
        assert_eq!(auc(&[0.5, 0.5], &[true, false]), Some(0.5));
        assert_eq!(auc(&[0.5, 0.5], &[true, true]), None);
    }
}
