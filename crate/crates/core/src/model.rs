//! Datasets, hyperparameters, prior-network elicitation and chain state.

use std::collections::{HashMap, HashSet};
use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pdcore::{
    hadamard, is_positive_definite, n_pairs, pair_index, pairs_columnwise, BinaryMatrix, SymmetricMatrix,
};

/// One of the two classes. `One` corresponds to `Z = 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Class {
    #[serde(rename = "class1")]
    One,
    #[serde(rename = "class2")]
    Two,
}

impl Class {
    pub const BOTH: [Class; 2] = [Class::One, Class::Two];

    #[inline]
    pub fn index(self) -> usize {
        match self {
            Class::One => 0,
            Class::Two => 1,
        }
    }

    pub fn other(self) -> Class {
        match self {
            Class::One => Class::Two,
            Class::Two => Class::One,
        }
    }
}

impl fmt::Display for Class {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Class::One => "class1",
            Class::Two => "class2",
        })
    }
}

/// Observed expression matrix with per-row class labels (`None` = unknown).
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    n: usize,
    p: usize,
    values: Vec<f64>,
    labels: Vec<Option<Class>>,
    names: Vec<String>,
}

impl Dataset {
    /// `y` is `n × p` with samples in rows.
    pub fn new(y: DMatrix<f64>, labels: Vec<Option<Class>>, names: Vec<String>) -> Result<Self> {
        let (n, p) = y.shape();
        if p == 0 {
            return Err(Error::InvalidInput("dataset has no variables".into()));
        }
        if names.len() != p {
            return Err(Error::InvalidInput(format!("{} names for {p} columns", names.len())));
        }
        if labels.len() != n {
            return Err(Error::InvalidInput(format!("{} labels for {n} rows", labels.len())));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = names.iter().find(|nm| !seen.insert(nm.as_str())) {
            return Err(Error::InvalidInput(format!("duplicate variable name `{dup}`")));
        }
        if let Some(((r, c), x)) = y
            .row_iter()
            .enumerate()
            .flat_map(|(r, row)| row.iter().copied().enumerate().map(move |(c, x)| ((r, c), x)).collect::<Vec<_>>())
            .find(|(_, x)| !x.is_finite())
        {
            return Err(Error::InvalidInput(format!("non-finite value {x} at row {r}, column {c}")));
        }
        let values = y.transpose().as_slice().to_vec();
        Ok(Self { n, p, values, labels, names })
    }

    /// A dataset with no samples; the chain then explores the prior.
    pub fn empty(names: Vec<String>) -> Result<Self> {
        let p = names.len();
        Self::new(DMatrix::zeros(0, p), Vec::new(), names)
    }

    /// Requirements for fitting: `n ≥ 2`, `p ≥ 2` and a labeled sample in each class.
    pub fn check_fit_ready(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::Validation(format!("need at least 2 samples, got {}", self.n)));
        }
        if self.p < 2 {
            return Err(Error::Validation(format!("need at least 2 variables, got {}", self.p)));
        }
        for k in Class::BOTH {
            if self.labeled(k).next().is_none() {
                return Err(Error::Validation(format!("no labeled samples in {k}")));
            }
        }
        Ok(())
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn p(&self) -> usize {
        self.p
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.p..(i + 1) * self.p]
    }

    pub fn labels(&self) -> &[Option<Class>] {
        &self.labels
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// `n × p` copy of the data.
    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.p, &self.values)
    }

    /// Row indices labeled as class `k`.
    pub fn labeled(&self, k: Class) -> impl Iterator<Item = usize> + '_ {
        self.labels.iter().enumerate().filter(move |(_, l)| **l == Some(k)).map(|(i, _)| i)
    }

    /// Row indices with unknown labels, in row order.
    pub fn unknown(&self) -> Vec<usize> {
        self.labels.iter().enumerate().filter(|(_, l)| l.is_none()).map(|(i, _)| i).collect()
    }

    /// Mean of the labeled rows of class `k`, or `None` when the class is empty.
    pub fn class_mean(&self, k: Class) -> Option<Vec<f64>> {
        let rows: Vec<usize> = self.labeled(k).collect();
        if rows.is_empty() {
            return None;
        }
        let mut mean = vec![0.0; self.p];
        for &r in &rows {
            for (m, y) in mean.iter_mut().zip(self.row(r)) {
                *m += y;
            }
        }
        mean.iter_mut().for_each(|m| *m /= rows.len() as f64);
        Some(mean)
    }

    /// Subset of rows, with labels optionally overridden.
    pub fn select(&self, rows: &[usize], labels: Option<Vec<Option<Class>>>) -> Result<Self> {
        let mut y = DMatrix::zeros(rows.len(), self.p);
        for (out, &r) in rows.iter().enumerate() {
            for c in 0..self.p {
                y[(out, c)] = self.row(r)[c];
            }
        }
        let labels = labels.unwrap_or_else(|| rows.iter().map(|&r| self.labels[r]).collect());
        Self::new(y, labels, self.names.clone())
    }
}

/// `Beta(a, b)` hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BetaPrior {
    pub a: f64,
    pub b: f64,
}

impl BetaPrior {
    pub const UNINFORMED: BetaPrior = BetaPrior { a: 2.0, b: 2.0 };
    pub const IMPORTANT: BetaPrior = BetaPrior { a: 10.0, b: 2.0 };
    pub const UNIMPORTANT: BetaPrior = BetaPrior { a: 2.0, b: 10.0 };

    pub fn mean(&self) -> f64 {
        self.a / (self.a + self.b)
    }

    fn is_valid(&self) -> bool {
        self.a.is_finite() && self.b.is_finite() && self.a > 0.0 && self.b > 0.0
    }
}

/// All fixed prior settings. Per-edge priors are stored as columnwise upper triangles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    p: usize,
    /// Beta prior on the edge-inclusion probability `q`, per class.
    pub edge: [Vec<BetaPrior>; 2],
    /// Beta prior on the differential-edge probability `π`.
    pub diff: Vec<BetaPrior>,
    /// Inverse-gamma shape `g` for the scales `S_i`.
    pub s_shape: f64,
    /// Inverse-gamma scale `h` for the scales `S_i`.
    pub s_scale: f64,
    /// Beta prior on each unknown sample's class-1 probability.
    pub label_eta: f64,
    pub label_zeta: f64,
    /// Prior mean of `μ` per class.
    pub mu0: [Vec<f64>; 2],
    /// Prior precision of `μ` per class.
    pub b0: [SymmetricMatrix; 2],
}

/// Defaults: Beta(2,2) everywhere, IG(1,1) scales, Beta(2,2) label prior,
/// zero prior mean with precision `1e-2·I`.
pub fn default_hyperparameters(p: usize) -> Hyperparameters {
    let m = n_pairs(p);
    let b0 = SymmetricMatrix::from_diagonal(&vec![1e-2; p]);
    Hyperparameters {
        p,
        edge: [vec![BetaPrior::UNINFORMED; m], vec![BetaPrior::UNINFORMED; m]],
        diff: vec![BetaPrior::UNINFORMED; m],
        s_shape: 1.0,
        s_scale: 1.0,
        label_eta: 2.0,
        label_zeta: 2.0,
        mu0: [vec![0.0; p], vec![0.0; p]],
        b0: [b0.clone(), b0],
    }
}

impl Hyperparameters {
    pub fn p(&self) -> usize {
        self.p
    }

    #[inline]
    pub fn edge_prior(&self, k: Class, i: usize, j: usize) -> BetaPrior {
        self.edge[k.index()][pair_index(i, j)]
    }

    #[inline]
    pub fn diff_prior(&self, i: usize, j: usize) -> BetaPrior {
        self.diff[pair_index(i, j)]
    }

    pub fn validate(&self) -> Result<()> {
        let m = n_pairs(self.p);
        let bad = |what: &str| Err(Error::Validation(format!("hyperparameters: {what}")));
        if self.edge.iter().any(|e| e.len() != m) || self.diff.len() != m {
            return bad("per-edge prior has the wrong length");
        }
        if !self.edge.iter().flatten().chain(&self.diff).all(BetaPrior::is_valid) {
            return bad("Beta parameters must be positive and finite");
        }
        for (name, x) in [
            ("s_shape", self.s_shape),
            ("s_scale", self.s_scale),
            ("label_eta", self.label_eta),
            ("label_zeta", self.label_zeta),
        ] {
            if !(x.is_finite() && x > 0.0) {
                return bad(&format!("{name} must be positive, got {x}"));
            }
        }
        for k in 0..2 {
            if self.mu0[k].len() != self.p || self.b0[k].dim() != self.p {
                return bad("mean prior has the wrong dimension");
            }
            if !self.mu0[k].iter().all(|x| x.is_finite()) {
                return bad("mu0 must be finite");
            }
            if !is_positive_definite(&self.b0[k])? {
                return bad("b0 must be positive definite");
            }
        }
        Ok(())
    }

    /// Centers each class's mean prior on its labeled-sample mean.
    pub fn center_means(&mut self, d: &Dataset) {
        for k in Class::BOTH {
            if let Some(mean) = d.class_mean(k) {
                self.mu0[k.index()] = mean;
            }
        }
    }
}

/// Strength of prior evidence about one edge.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Evidence {
    Important,
    Unimportant,
    None,
}

impl Evidence {
    pub fn prior(self) -> BetaPrior {
        match self {
            Evidence::Important => BetaPrior::IMPORTANT,
            Evidence::Unimportant => BetaPrior::UNIMPORTANT,
            Evidence::None => BetaPrior::UNINFORMED,
        }
    }
}

/// Which class's edge prior an elicited edge modifies.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scope {
    Class1,
    Class2,
    #[default]
    Both,
}

impl Scope {
    fn classes(self) -> &'static [Class] {
        match self {
            Scope::Class1 => &[Class::One],
            Scope::Class2 => &[Class::Two],
            Scope::Both => &Class::BOTH,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorEdge {
    pub first: String,
    pub second: String,
    pub evidence: Evidence,
    pub scope: Scope,
}

/// Elicited pathway knowledge, keyed by variable names.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PriorNetwork {
    pub edges: Vec<PriorEdge>,
}

impl PriorNetwork {
    /// Resolves names to indices and rejects self-edges and repeated pairs.
    pub fn resolve(&self, names: &[String]) -> Result<Vec<(usize, usize, Evidence, Scope)>> {
        let lookup: HashMap<&str, usize> = names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
        let find = |n: &str| lookup.get(n).copied().ok_or_else(|| Error::UnknownName(n.to_string()));
        let mut seen = HashSet::new();
        self.edges
            .iter()
            .map(|e| {
                let (i, j) = (find(&e.first)?, find(&e.second)?);
                if i == j {
                    return Err(Error::Validation(format!("self-edge on `{}`", e.first)));
                }
                if !seen.insert((i.min(j), i.max(j))) {
                    return Err(Error::Validation(format!("duplicate edge {} - {}", e.first, e.second)));
                }
                Ok((i.min(j), i.max(j), e.evidence, e.scope))
            })
            .collect()
    }
}

/// Writes each elicited edge's Beta setting into the per-class edge priors.
pub fn apply_prior_network(h: &Hyperparameters, net: &PriorNetwork, names: &[String]) -> Result<Hyperparameters> {
    if names.len() != h.p {
        return Err(Error::InvalidInput(format!("{} names for p = {}", names.len(), h.p)));
    }
    let mut out = h.clone();
    for (i, j, evidence, scope) in net.resolve(names)? {
        for k in scope.classes() {
            out.edge[k.index()][pair_index(i, j)] = evidence.prior();
        }
    }
    Ok(out)
}

/// Per-class block of the chain state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassState {
    pub a: BinaryMatrix,
    pub r: SymmetricMatrix,
    pub s: Vec<f64>,
    pub mu: Vec<f64>,
    /// Edge-inclusion probabilities, columnwise upper triangle.
    pub q: Vec<f64>,
}

impl ClassState {
    /// `C = A ⊙ R`.
    pub fn correlation(&self) -> SymmetricMatrix {
        hadamard(&self.a, &self.r)
    }
}

/// A full MCMC state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainState {
    pub classes: [ClassState; 2],
    /// Differential-edge indicators, columnwise upper triangle.
    pub lambda: Vec<bool>,
    /// Differential-edge probabilities, columnwise upper triangle.
    pub pi: Vec<f64>,
    /// Class-1 probability of each unknown sample.
    pub h: Vec<f64>,
    /// Current class of each unknown sample (same order as `Dataset::unknown`).
    pub z_u: Vec<Class>,
}

impl ChainState {
    /// Empty graphs, `R = I`, unit scales, prior means for everything else.
    /// Unknown samples start alternating between the classes.
    pub fn from_prior(hyper: &Hyperparameters, n_unknown: usize) -> Self {
        let p = hyper.p();
        let class = |k: Class| ClassState {
            a: BinaryMatrix::empty(p),
            r: SymmetricMatrix::identity(p),
            s: vec![1.0; p],
            mu: hyper.mu0[k.index()].clone(),
            q: hyper.edge[k.index()].iter().map(BetaPrior::mean).collect(),
        };
        let h0 = hyper.label_eta / (hyper.label_eta + hyper.label_zeta);
        Self {
            classes: [class(Class::One), class(Class::Two)],
            lambda: vec![false; n_pairs(p)],
            pi: hyper.diff.iter().map(BetaPrior::mean).collect(),
            h: vec![h0; n_unknown],
            z_u: (0..n_unknown).map(|o| if o % 2 == 0 { Class::One } else { Class::Two }).collect(),
        }
    }

    pub fn p(&self) -> usize {
        self.classes[0].s.len()
    }

    #[inline]
    pub fn class(&self, k: Class) -> &ClassState {
        &self.classes[k.index()]
    }

    #[inline]
    pub fn class_mut(&mut self, k: Class) -> &mut ClassState {
        &mut self.classes[k.index()]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ViolationKind {
    /// Arrays of inconsistent size.
    Dimension,
    /// `λ` differs from the XOR of the two selection matrices.
    LambdaXor,
    /// `A ⊙ R` is not positive definite.
    PositiveDefinite,
    /// `R` is not a correlation matrix.
    Correlation,
    /// A scale entry is not strictly positive.
    Scale,
    /// A probability parameter lies outside `(0, 1)`.
    Probability,
    /// A non-finite value.
    NonFinite,
}

impl ViolationKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ViolationKind::Dimension => "dimension",
            ViolationKind::LambdaXor => "lambda-XOR",
            ViolationKind::PositiveDefinite => "PD",
            ViolationKind::Correlation => "correlation",
            ViolationKind::Scale => "scale",
            ViolationKind::Probability => "probability",
            ViolationKind::NonFinite => "non-finite",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    pub kind: ViolationKind,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.kind.as_str(), self.detail)
    }
}

/// Checks every state invariant and reports all violations found.
pub fn validate_state(st: &ChainState) -> std::result::Result<(), Vec<Violation>> {
    let mut out = Vec::new();
    let mut push = |kind, detail: String| out.push(Violation { kind, detail });
    let p = st.p();
    let m = n_pairs(p);
    let in_unit = |x: f64| x > 0.0 && x < 1.0;

    if st.lambda.len() != m || st.pi.len() != m || st.h.len() != st.z_u.len() {
        push(ViolationKind::Dimension, "shared parameter lengths disagree".into());
        return Err(out);
    }
    for k in Class::BOTH {
        let c = st.class(k);
        if c.a.dim() != p || c.r.dim() != p || c.mu.len() != p || c.q.len() != m {
            push(ViolationKind::Dimension, format!("{k} block has wrong dimensions"));
            return Err(out);
        }
    }

    for k in Class::BOTH {
        let c = st.class(k);
        if !c.r.is_finite() || !c.mu.iter().chain(&c.s).all(|x| x.is_finite()) {
            push(ViolationKind::NonFinite, format!("{k} has non-finite parameters"));
            continue;
        }
        if !c.r.is_correlation() {
            push(ViolationKind::Correlation, format!("{k} R is not a correlation matrix"));
        }
        if let Some(i) = c.s.iter().position(|&x| !(x > 0.0)) {
            push(ViolationKind::Scale, format!("{k} s[{i}] = {}", c.s[i]));
        }
        if let Some(t) = c.q.iter().position(|&x| !in_unit(x)) {
            push(ViolationKind::Probability, format!("{k} q[{t}] = {}", c.q[t]));
        }
        match is_positive_definite(&c.correlation()) {
            Ok(true) => {}
            _ => push(ViolationKind::PositiveDefinite, format!("{k} A ⊙ R is not positive definite")),
        }
    }
    for (i, j) in pairs_columnwise(p) {
        let t = pair_index(i, j);
        let xor = st.classes[0].a.get(i, j) != st.classes[1].a.get(i, j);
        if st.lambda[t] != xor {
            push(ViolationKind::LambdaXor, format!("lambda[{i}][{j}] = {} but XOR = {xor}", st.lambda[t] as u8));
        }
    }
    if let Some(t) = st.pi.iter().position(|&x| !in_unit(x)) {
        push(ViolationKind::Probability, format!("pi[{t}] = {}", st.pi[t]));
    }
    if let Some(o) = st.h.iter().position(|&x| !in_unit(x)) {
        push(ViolationKind::Probability, format!("h[{o}] = {}", st.h[o]));
    }
    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}
