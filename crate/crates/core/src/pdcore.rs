//! Dense linear-algebra kernel for the precision parameterization.
//!
//! A class precision matrix is assembled as `Ω = S·C·S` where `S` is a
//! positive diagonal and `C = A ⊙ R` is a correlation matrix obtained by
//! masking a free correlation matrix `R` with a binary selection matrix `A`.
//! Everything here is a pure function of its inputs.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cholesky pivots at or below this value count as "not positive definite".
pub const PD_PIVOT_TOL: f64 = 1e-10;

/// Amount removed from each end of an admissible interval before sampling.
pub const INTERVAL_SAFETY: f64 = 1e-8;

/// Below this leading coefficient the determinant quadratic is treated as
/// degenerate and the interval is found by bisection instead.
const DEGENERATE_LEADING: f64 = 1e-12;

const BISECTION_STEPS: usize = 80;

/// Number of off-diagonal pairs `i < j` for a `p × p` matrix.
#[inline]
pub fn n_pairs(p: usize) -> usize {
    p * p.saturating_sub(1) / 2
}

/// Position of the pair `(i, j)` in the upper triangle stacked columnwise.
#[inline]
pub fn pair_index(i: usize, j: usize) -> usize {
    let (i, j) = if i < j { (i, j) } else { (j, i) };
    debug_assert!(i < j);
    j * (j - 1) / 2 + i
}

/// Upper-triangle pairs in columnwise order, matching [`pair_index`].
pub fn pairs_columnwise(p: usize) -> impl Iterator<Item = (usize, usize)> {
    (1..p).flat_map(|j| (0..j).map(move |i| (i, j)))
}

/// Upper-triangle pairs in lexicographic `(i, j)` order.
pub fn pairs_lexicographic(p: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..p).flat_map(move |i| (i + 1..p).map(move |j| (i, j)))
}

/// Dense symmetric real matrix. Writes go through [`SymmetricMatrix::set`],
/// which keeps both triangles identical.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymmetricMatrix(DMatrix<f64>);

impl SymmetricMatrix {
    /// Builds from a square matrix, taking the upper triangle as authoritative.
    pub fn from_upper(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() || m.nrows() == 0 {
            return Err(Error::InvalidInput(format!(
                "expected a non-empty square matrix, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let mut m = m;
        let p = m.nrows();
        for j in 0..p {
            for i in 0..j {
                m[(j, i)] = m[(i, j)];
            }
        }
        Ok(Self(m))
    }

    /// Builds from a matrix that must already be symmetric (to 1e-12 relative).
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() || m.nrows() == 0 {
            return Err(Error::InvalidInput(format!(
                "expected a non-empty square matrix, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let p = m.nrows();
        for j in 0..p {
            for i in 0..j {
                let (x, y) = (m[(i, j)], m[(j, i)]);
                if !((x - y).abs() <= 1e-12 * (1.0 + x.abs().max(y.abs()))) {
                    return Err(Error::InvalidInput(format!(
                        "matrix is not symmetric at ({i}, {j}): {x} vs {y}"
                    )));
                }
            }
        }
        Self::from_upper(m)
    }

    pub fn identity(p: usize) -> Self {
        Self(DMatrix::identity(p, p))
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        Self(DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(d)))
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    /// Sets entry `(i, j)` and its mirror.
    #[inline]
    pub fn set(&mut self, i: usize, j: usize, x: f64) {
        self.0[(i, j)] = x;
        self.0[(j, i)] = x;
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    /// Unit diagonal and off-diagonals in `[-1, 1]`.
    pub fn is_correlation(&self) -> bool {
        let p = self.dim();
        (0..p).all(|i| self.get(i, i) == 1.0)
            && pairs_columnwise(p).all(|(i, j)| (-1.0..=1.0).contains(&self.get(i, j)))
    }
}

/// Symmetric 0/1 matrix with unit diagonal; only the strict upper triangle is stored.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BinaryMatrix {
    dim: usize,
    edges: Vec<bool>,
}

impl BinaryMatrix {
    /// Diagonal-only adjacency (the empty graph).
    pub fn empty(p: usize) -> Self {
        Self {
            dim: p,
            edges: vec![false; n_pairs(p)],
        }
    }

    /// All off-diagonals set.
    pub fn full(p: usize) -> Self {
        Self {
            dim: p,
            edges: vec![true; n_pairs(p)],
        }
    }

    /// From a columnwise-stacked upper triangle.
    pub fn from_upper(p: usize, edges: Vec<bool>) -> Result<Self> {
        if edges.len() != n_pairs(p) {
            return Err(Error::InvalidInput(format!(
                "expected {} upper-triangle entries for p = {p}, got {}",
                n_pairs(p),
                edges.len()
            )));
        }
        Ok(Self { dim: p, edges })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        i == j || self.edges[pair_index(i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, on: bool) {
        assert!(i != j, "diagonal of a selection matrix is fixed at 1");
        self.edges[pair_index(i, j)] = on;
    }

    /// Columnwise-stacked upper triangle.
    pub fn upper(&self) -> &[bool] {
        &self.edges
    }

    pub fn n_edges(&self) -> usize {
        self.edges.iter().filter(|&&e| e).count()
    }
}

/// Elementwise product `A ⊙ R`; the diagonal is `R`'s diagonal.
pub fn hadamard(a: &BinaryMatrix, r: &SymmetricMatrix) -> SymmetricMatrix {
    let p = r.dim();
    assert_eq!(a.dim(), p, "dimension mismatch in hadamard product");
    let mut c = r.clone();
    for (i, j) in pairs_columnwise(p) {
        if !a.get(i, j) {
            c.set(i, j, 0.0);
        }
    }
    c
}

/// `(s, A, R)` with `s > 0` and `A ⊙ R` positive definite.
#[derive(Clone, Debug, PartialEq)]
pub struct PrecisionFactors {
    s: Vec<f64>,
    a: BinaryMatrix,
    r: SymmetricMatrix,
}

impl PrecisionFactors {
    pub fn new(s: Vec<f64>, a: BinaryMatrix, r: SymmetricMatrix) -> Result<Self> {
        let p = r.dim();
        if s.len() != p || a.dim() != p {
            return Err(Error::InvalidInput(format!(
                "factor dimensions disagree: s has {}, a is {}, r is {p}",
                s.len(),
                a.dim()
            )));
        }
        if let Some(bad) = s.iter().find(|x| !(x.is_finite() && **x > 0.0)) {
            return Err(Error::InvalidInput(format!("scale entries must be positive, got {bad}")));
        }
        if !is_positive_definite(&hadamard(&a, &r))? {
            return Err(Error::Precondition("A ⊙ R is not positive definite".into()));
        }
        Ok(Self { s, a, r })
    }

    pub fn s(&self) -> &[f64] {
        &self.s
    }

    pub fn a(&self) -> &BinaryMatrix {
        &self.a
    }

    pub fn r(&self) -> &SymmetricMatrix {
        &self.r
    }

    pub fn correlation(&self) -> SymmetricMatrix {
        hadamard(&self.a, &self.r)
    }
}

/// Lower Cholesky factor, or `None` if some pivot is `<= PD_PIVOT_TOL`.
pub fn cholesky(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let p = m.nrows();
    let mut l = DMatrix::<f64>::zeros(p, p);
    for j in 0..p {
        let mut d = m[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > PD_PIVOT_TOL) {
            return None;
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in j + 1..p {
            let mut x = m[(i, j)];
            for k in 0..j {
                x -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = x / d;
        }
    }
    Some(l)
}

/// `log det` of a positive definite matrix, or `None` when not PD.
pub fn log_det_pd(m: &DMatrix<f64>) -> Option<f64> {
    cholesky(m).map(|l| 2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>())
}

pub fn is_positive_definite(m: &SymmetricMatrix) -> Result<bool> {
    if !m.is_finite() {
        return Err(Error::InvalidInput("matrix has non-finite entries".into()));
    }
    Ok(cholesky(m.as_matrix()).is_some())
}

/// Signed determinant by Gaussian elimination with partial pivoting.
fn determinant(m: &DMatrix<f64>) -> f64 {
    let p = m.nrows();
    let mut a = m.clone();
    let mut det = 1.0;
    for k in 0..p {
        let (piv, big) = (k..p)
            .map(|r| (r, a[(r, k)].abs()))
            .fold((k, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        if big == 0.0 {
            return 0.0;
        }
        if piv != k {
            a.swap_rows(piv, k);
            det = -det;
        }
        let d = a[(k, k)];
        det *= d;
        for r in k + 1..p {
            let f = a[(r, k)] / d;
            if f != 0.0 {
                for c in k + 1..p {
                    a[(r, c)] -= f * a[(k, c)];
                }
            }
        }
    }
    det
}

/// Largest open interval `(lower, upper) ⊆ (-1, 1)` such that replacing
/// `c[i][j]` (and `c[j][i]`) by any value inside keeps `c` positive definite.
///
/// `det c(x)` is a concave quadratic in the replaced entry; its roots bound the
/// interval. The quadratic is recovered from determinants at `x ∈ {-1, 0, 1}`.
pub fn admissible_interval(c: &SymmetricMatrix, i: usize, j: usize) -> Result<(f64, f64)> {
    let p = c.dim();
    if i == j {
        return Err(Error::InvalidInput(format!("admissible interval needs i != j, got ({i}, {i})")));
    }
    if i >= p || j >= p {
        return Err(Error::InvalidInput(format!("index ({i}, {j}) out of range for p = {p}")));
    }
    if !is_positive_definite(c)? {
        return Err(Error::Precondition("matrix is not positive definite at its current value".into()));
    }
    let current = c.get(i, j);
    let mut work = c.clone();
    let mut det_at = |x: f64| {
        work.set(i, j, x);
        determinant(work.as_matrix())
    };
    let (f_lo, f_mid, f_hi) = (det_at(-1.0), det_at(0.0), det_at(1.0));
    let lead = 0.5 * (f_hi + f_lo) - f_mid;
    let lin = 0.5 * (f_hi - f_lo);
    let cst = f_mid;

    if lead.abs() >= DEGENERATE_LEADING {
        let disc = lin * lin - 4.0 * lead * cst;
        if disc > 0.0 {
            let q = -0.5 * (lin + lin.signum() * disc.sqrt());
            if q != 0.0 {
                let (r1, r2) = (q / lead, cst / q);
                let lower = r1.min(r2).max(-1.0);
                let upper = r1.max(r2).min(1.0);
                if lower < current && current < upper {
                    return Ok((lower, upper));
                }
            }
        }
    }
    Ok(bisect_interval(c, i, j))
}

/// Interval endpoints by bisection against the Cholesky test, starting from the
/// current (PD) value.
fn bisect_interval(c: &SymmetricMatrix, i: usize, j: usize) -> (f64, f64) {
    let current = c.get(i, j);
    let mut work = c.clone();
    let mut pd_at = |x: f64| {
        work.set(i, j, x);
        cholesky(work.as_matrix()).is_some()
    };
    let mut edge = |target: f64| {
        if pd_at(target) {
            return target;
        }
        let (mut inside, mut outside) = (current, target);
        for _ in 0..BISECTION_STEPS {
            let mid = 0.5 * (inside + outside);
            if pd_at(mid) {
                inside = mid;
            } else {
                outside = mid;
            }
        }
        outside
    };
    let upper = edge(1.0);
    let lower = edge(-1.0);
    (lower, upper)
}

/// `Ω = S·(A ⊙ R)·S` together with `log det Ω`.
pub fn assemble_precision(f: &PrecisionFactors) -> Result<(SymmetricMatrix, f64)> {
    let c = f.correlation();
    let log_det_c = log_det_pd(c.as_matrix())
        .ok_or_else(|| Error::Precondition("A ⊙ R is not positive definite".into()))?;
    let s = f.s();
    let p = s.len();
    let omega = DMatrix::from_fn(p, p, |i, j| s[i] * s[j] * c.get(i, j));
    let log_det = 2.0 * s.iter().map(|x| x.ln()).sum::<f64>() + log_det_c;
    Ok((SymmetricMatrix(omega), log_det))
}

/// `ρ_ij = -Ω_ij / sqrt(Ω_ii Ω_jj)` with a unit diagonal.
pub fn partial_correlations(omega: &SymmetricMatrix) -> Result<SymmetricMatrix> {
    if !is_positive_definite(omega)? {
        return Err(Error::Precondition("precision matrix is not positive definite".into()));
    }
    let p = omega.dim();
    let m = omega.as_matrix();
    let rho = DMatrix::from_fn(p, p, |i, j| {
        if i == j {
            1.0
        } else {
            -m[(i, j)] / (m[(i, i)] * m[(j, j)]).sqrt()
        }
    });
    Ok(SymmetricMatrix(rho))
}

/// Multivariate normal log density in precision form.
pub fn mvn_logpdf(y: &[f64], mu: &[f64], omega: &SymmetricMatrix, log_det: f64) -> Result<f64> {
    let p = omega.dim();
    if y.len() != p || mu.len() != p {
        return Err(Error::InvalidInput(format!(
            "dimension mismatch: y has {}, mu has {}, omega is {p}x{p}",
            y.len(),
            mu.len()
        )));
    }
    Ok(mvn_logpdf_unchecked(y, mu, omega.as_matrix(), log_det))
}

pub(crate) fn mvn_logpdf_unchecked(y: &[f64], mu: &[f64], omega: &DMatrix<f64>, log_det: f64) -> f64 {
    let p = y.len();
    let mut quad = 0.0;
    for j in 0..p {
        let dj = y[j] - mu[j];
        let mut acc = 0.0;
        for i in 0..p {
            acc += omega[(i, j)] * (y[i] - mu[i]);
        }
        quad += acc * dj;
    }
    -0.5 * p as f64 * (2.0 * PI).ln() + 0.5 * log_det - 0.5 * quad
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    fn corr3(c12: f64, c13: f64, c23: f64) -> SymmetricMatrix {
        SymmetricMatrix::new(dmatrix![1.0, c12, c13; c12, 1.0, c23; c13, c23, 1.0]).unwrap()
    }

    #[test]
    fn pair_indexing_is_columnwise() {
        let got: Vec<_> = pairs_columnwise(4).map(|(i, j)| pair_index(i, j)).collect();
        assert_eq!(got, (0..6).collect::<Vec<_>>());
        assert_eq!(pairs_lexicographic(3).collect::<Vec<_>>(), vec![(0, 1), (0, 2), (1, 2)]);
    }

    #[test]
    fn positive_definite_basics() {
        assert!(is_positive_definite(&SymmetricMatrix::identity(3)).unwrap());
        let singular = SymmetricMatrix::new(dmatrix![1.0, 1.0; 1.0, 1.0]).unwrap();
        assert!(!is_positive_definite(&singular).unwrap());
        // eigenvalues of this matrix: 1.9, 1.9, -0.8
        assert!(!is_positive_definite(&corr3(0.9, 0.9, -0.9)).unwrap());
    }

    #[test]
    fn non_finite_is_invalid_input() {
        let m = SymmetricMatrix::new(dmatrix![1.0, f64::NAN; f64::NAN, 1.0]);
        assert!(m.is_err());
        let m = SymmetricMatrix::from_upper(dmatrix![1.0, f64::INFINITY; 0.0, 1.0]).unwrap();
        assert!(matches!(is_positive_definite(&m), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn interval_two_by_two_is_full_range() {
        for x in [-0.7, 0.0, 0.3, 0.99] {
            let c = SymmetricMatrix::new(dmatrix![1.0, x; x, 1.0]).unwrap();
            let (lo, hi) = admissible_interval(&c, 0, 1).unwrap();
            assert!((lo + 1.0).abs() < 1e-12 && (hi - 1.0).abs() < 1e-12, "{lo} {hi}");
        }
    }

    #[test]
    fn interval_identity_is_full_range() {
        let (lo, hi) = admissible_interval(&SymmetricMatrix::identity(3), 0, 1).unwrap();
        assert!((lo + 1.0).abs() < 1e-12 && (hi - 1.0).abs() < 1e-12);
    }

    #[test]
    fn interval_with_two_strong_neighbours() {
        let (lo, hi) = admissible_interval(&corr3(0.5, 0.8, 0.8), 0, 1).unwrap();
        assert!((lo - 0.28).abs() < 1e-10, "{lo}");
        assert!((hi - 1.0).abs() < 1e-10, "{hi}");
    }

    #[test]
    fn interval_errors() {
        let id = SymmetricMatrix::identity(3);
        assert!(matches!(admissible_interval(&id, 1, 1), Err(Error::InvalidInput(_))));
        let bad = corr3(0.9, 0.9, -0.9);
        assert!(matches!(admissible_interval(&bad, 0, 1), Err(Error::Precondition(_))));
    }

    #[test]
    fn bisection_agrees_with_quadratic() {
        let c = corr3(0.1, 0.6, -0.4);
        let quad = admissible_interval(&c, 0, 1).unwrap();
        let bis = bisect_interval(&c, 0, 1);
        assert!((quad.0 - bis.0).abs() < 1e-9 && (quad.1 - bis.1).abs() < 1e-9);
    }

    #[test]
    fn assemble_diagonal_case() {
        let f = PrecisionFactors::new(vec![2.0, 3.0], BinaryMatrix::empty(2), SymmetricMatrix::identity(2)).unwrap();
        let (omega, log_det) = assemble_precision(&f).unwrap();
        assert_eq!(omega.as_matrix(), &dmatrix![4.0, 0.0; 0.0, 9.0]);
        assert!((log_det - 36f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn assemble_single_edge() {
        let r = SymmetricMatrix::new(dmatrix![1.0, 0.5; 0.5, 1.0]).unwrap();
        let f = PrecisionFactors::new(vec![1.0, 1.0], BinaryMatrix::full(2), r).unwrap();
        let (omega, log_det) = assemble_precision(&f).unwrap();
        assert_eq!(omega.as_matrix(), &dmatrix![1.0, 0.5; 0.5, 1.0]);
        assert!((log_det - 0.75f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn factors_reject_non_pd_product() {
        let r = corr3(0.6, 0.6, -0.6);
        let err = PrecisionFactors::new(vec![1.0; 3], BinaryMatrix::full(3), r.clone()).unwrap_err();
        assert!(matches!(err, Error::Precondition(_)));
        // masking one edge makes it valid
        let mut a = BinaryMatrix::full(3);
        a.set(1, 2, false);
        assert!(PrecisionFactors::new(vec![1.0; 3], a, r).is_ok());
    }

    #[test]
    fn partial_correlation_examples() {
        let diag = SymmetricMatrix::from_diagonal(&[2.0, 5.0, 0.3]);
        assert_eq!(partial_correlations(&diag).unwrap(), SymmetricMatrix::identity(3));
        let omega = SymmetricMatrix::new(dmatrix![1.0, 0.5; 0.5, 1.0]).unwrap();
        assert_eq!(partial_correlations(&omega).unwrap().get(0, 1), -0.5);
        let bad = SymmetricMatrix::new(dmatrix![1.0, 2.0; 2.0, 1.0]).unwrap();
        assert!(partial_correlations(&bad).is_err());
    }

    #[test]
    fn mvn_small_cases() {
        let one = SymmetricMatrix::identity(1);
        let v = mvn_logpdf(&[0.0], &[0.0], &one, 0.0).unwrap();
        assert!((v + 0.5 * (2.0 * PI).ln()).abs() < 1e-15);
        let two = SymmetricMatrix::identity(2);
        let v = mvn_logpdf(&[0.3, -1.0], &[0.3, -1.0], &two, 0.0).unwrap();
        assert!((v + (2.0 * PI).ln()).abs() < 1e-15);
        assert!(mvn_logpdf(&[0.0], &[0.0, 1.0], &two, 0.0).is_err());
    }

    #[test]
    fn determinant_matches_known() {
        let m = dmatrix![2.0, 1.0, 0.0; 1.0, 3.0, 1.0; 0.0, 1.0, 4.0];
        assert!((determinant(&m) - 18.0).abs() < 1e-12);
        let m = dmatrix![0.0, 1.0; 1.0, 0.0];
        assert!((determinant(&m) + 1.0).abs() < 1e-15);
    }
}
