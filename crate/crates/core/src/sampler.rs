//! Metropolis-within-Gibbs sampler for the two-class graphical model.
//!
//! One sweep visits, in order: every edge `(i, j)` in lexicographic order
//! (joint update of both selection indicators, both correlation entries and
//! the differential indicator), every scale `S_i`, both means, the Beta
//! probabilities `q` and `π`, and finally the unknown labels.
//!
//! Class membership for a sweep is the labeled rows plus the unknown rows
//! currently assigned to that class.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{validate_state, ChainState, Class, ClassState, Dataset, Hyperparameters};
use crate::pdcore::{
    admissible_interval, cholesky, log_det_pd, mvn_logpdf_unchecked, pair_index, pairs_lexicographic,
    partial_correlations, SymmetricMatrix, INTERVAL_SAFETY,
};

/// Independent RNG stream `stream` derived from `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// How a new correlation entry is proposed for an active edge.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum RProposal {
    /// Uniform over the admissible interval (the conditional prior).
    PriorUniform,
    /// Gaussian step around the current value when the edge stays active;
    /// uniform over the interval otherwise.
    RandomWalk { step: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub r_proposal: RProposal,
    /// Standard deviation of the log-scale random walk on `S_i`.
    pub s_proposal_sd: f64,
    /// Run `validate_state` after every sweep. Defaults to on in debug builds.
    pub check_invariants: bool,
}

impl ChainConfig {
    pub fn new(iterations: usize, burn_in: usize, thin: usize, seed: u64) -> Self {
        Self {
            iterations,
            burn_in,
            thin,
            seed,
            r_proposal: RProposal::PriorUniform,
            s_proposal_sd: 0.3,
            check_invariants: cfg!(debug_assertions),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(format!("chain config: {m}")));
        if self.iterations == 0 || self.thin == 0 {
            return bad("iterations and thin must be positive".into());
        }
        if self.burn_in + 1 > self.iterations {
            return bad(format!("burn_in {} must be below iterations {}", self.burn_in, self.iterations));
        }
        if self.thin > self.iterations - self.burn_in {
            return bad(format!("thin {} exceeds the {} post-burn-in sweeps", self.thin, self.iterations - self.burn_in));
        }
        if !(self.s_proposal_sd.is_finite() && self.s_proposal_sd >= 0.0) {
            return bad(format!("s_proposal_sd must be non-negative, got {}", self.s_proposal_sd));
        }
        if let RProposal::RandomWalk { step } = self.r_proposal {
            if !(step.is_finite() && step > 0.0) {
                return bad(format!("random-walk step must be positive, got {step}"));
            }
        }
        Ok(())
    }

    /// Number of retained draws, `floor((iterations - burn_in) / thin)`.
    pub fn n_draws(&self) -> usize {
        (self.iterations - self.burn_in) / self.thin
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counter {
    pub proposed: u64,
    pub accepted: u64,
}

impl Counter {
    fn record(&mut self, accepted: bool) {
        self.proposed += 1;
        self.accepted += accepted as u64;
    }

    pub fn rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }
}

/// Metropolis–Hastings bookkeeping per update family.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Acceptance {
    pub edge: Counter,
    pub scale: Counter,
    /// Edge proposals rejected because an admissible interval collapsed.
    pub empty_interval: u64,
    /// Proposals rejected because of a non-finite or non-PD evaluation.
    pub numerical_rejects: u64,
}

/// The part of a state retained for posterior summaries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Draw {
    pub a: [Vec<bool>; 2],
    pub r: [Vec<f64>; 2],
    pub s: [Vec<f64>; 2],
    pub mu: [Vec<f64>; 2],
    pub lambda: Vec<bool>,
    pub z_u: Vec<Class>,
}

impl Draw {
    pub fn from_state(st: &ChainState) -> Self {
        let p = st.p();
        let upper_r = |c: &ClassState| crate::pdcore::pairs_columnwise(p).map(|(i, j)| c.r.get(i, j)).collect();
        Self {
            a: [st.classes[0].a.upper().to_vec(), st.classes[1].a.upper().to_vec()],
            r: [upper_r(&st.classes[0]), upper_r(&st.classes[1])],
            s: [st.classes[0].s.clone(), st.classes[1].s.clone()],
            mu: [st.classes[0].mu.clone(), st.classes[1].mu.clone()],
            lambda: st.lambda.clone(),
            z_u: st.z_u.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainSamples {
    pub p: usize,
    /// Dataset rows that were sampled as unknown, aligned with `Draw::z_u`.
    pub unknown_rows: Vec<usize>,
    pub draws: Vec<Draw>,
    pub acceptance: Acceptance,
    pub config: ChainConfig,
    /// Sweeps after which `validate_state` ran.
    pub sweeps_checked: usize,
    /// Invariant violations observed across all checked sweeps.
    pub invariant_violations: usize,
}

/// Sufficient statistics of one class for the current means and labels.
#[derive(Clone, Debug)]
struct ClassStats {
    n: usize,
    sum: Vec<f64>,
    /// `Σ (y - μ)(y - μ)ᵀ` over members.
    scatter: DMatrix<f64>,
}

/// Sequential chain runner bound to one dataset and prior.
pub struct Sampler<'a> {
    data: &'a Dataset,
    hyper: &'a Hyperparameters,
    cfg: ChainConfig,
    unknown: Vec<usize>,
    stats: Option<[ClassStats; 2]>,
    log_det_c: [Option<f64>; 2],
    pub acceptance: Acceptance,
}

impl<'a> Sampler<'a> {
    pub fn new(data: &'a Dataset, hyper: &'a Hyperparameters, cfg: ChainConfig) -> Result<Self> {
        cfg.validate()?;
        hyper.validate()?;
        if hyper.p() != data.p() {
            return Err(Error::InvalidInput(format!(
                "hyperparameters are for p = {}, data has p = {}",
                hyper.p(),
                data.p()
            )));
        }
        Ok(Self {
            data,
            hyper,
            cfg,
            unknown: data.unknown(),
            stats: None,
            log_det_c: [None, None],
            acceptance: Acceptance::default(),
        })
    }

    pub fn config(&self) -> &ChainConfig {
        &self.cfg
    }

    fn check_state(&self, st: &ChainState) -> Result<()> {
        if st.p() != self.data.p() || st.z_u.len() != self.unknown.len() || st.h.len() != self.unknown.len() {
            return Err(Error::InvalidInput("chain state does not match the dataset".into()));
        }
        Ok(())
    }

    /// Forgets cached statistics; call after editing a state by hand.
    pub fn invalidate(&mut self) {
        self.stats = None;
        self.log_det_c = [None, None];
    }

    fn members(&self, st: &ChainState, k: Class) -> Vec<usize> {
        let mut rows: Vec<usize> = self.data.labeled(k).collect();
        rows.extend(self.unknown.iter().zip(&st.z_u).filter(|(_, z)| **z == k).map(|(r, _)| *r));
        rows
    }

    fn ensure_stats(&mut self, st: &ChainState) {
        if self.stats.is_some() {
            return;
        }
        let p = self.data.p();
        let compute = |k: Class| {
            let mu = &st.class(k).mu;
            let rows = self.members(st, k);
            let mut sum = vec![0.0; p];
            let mut scatter = DMatrix::zeros(p, p);
            let mut dev = vec![0.0; p];
            for &r in &rows {
                let y = self.data.row(r);
                for c in 0..p {
                    sum[c] += y[c];
                    dev[c] = y[c] - mu[c];
                }
                for b in 0..p {
                    for a in 0..=b {
                        scatter[(a, b)] += dev[a] * dev[b];
                    }
                }
            }
            for b in 0..p {
                for a in 0..b {
                    scatter[(b, a)] = scatter[(a, b)];
                }
            }
            ClassStats { n: rows.len(), sum, scatter }
        };
        self.stats = Some([compute(Class::One), compute(Class::Two)]);
    }

    fn stats(&self, k: Class) -> &ClassStats {
        &self.stats.as_ref().expect("statistics computed")[k.index()]
    }

    fn cached_log_det_c(&mut self, st: &ChainState, k: Class) -> Option<f64> {
        if self.log_det_c[k.index()].is_none() {
            self.log_det_c[k.index()] = log_det_pd(st.class(k).correlation().as_matrix());
        }
        self.log_det_c[k.index()]
    }

    /// Class log-likelihood without the `2π` constant.
    fn class_log_lik(&mut self, st: &ChainState, k: Class) -> f64 {
        self.ensure_stats(st);
        let Some(ld) = self.cached_log_det_c(st, k) else {
            return f64::NEG_INFINITY;
        };
        let c = st.class(k);
        let stats = self.stats(k);
        let n = stats.n as f64;
        let p = c.s.len();
        let mut trace = 0.0;
        for j in 0..p {
            for i in 0..p {
                let cij = if i == j { 1.0 } else if c.a.get(i, j) { c.r.get(i, j) } else { 0.0 };
                trace += c.s[i] * c.s[j] * cij * stats.scatter[(i, j)];
            }
        }
        n * c.s.iter().map(|x| x.ln()).sum::<f64>() + 0.5 * n * ld - 0.5 * trace
    }

    /// Total data log-likelihood (up to a constant) at the current state.
    pub fn log_likelihood(&mut self, st: &ChainState) -> f64 {
        self.class_log_lik(st, Class::One) + self.class_log_lik(st, Class::Two)
    }

    /// Joint update of `(a₁, a₂, r₁, r₂)` at `(i, j)`, keeping `λ = a₁ XOR a₂`.
    ///
    /// The selection pair is proposed from its conditional prior (four cells
    /// weighted by `q₁`, `q₂` and `π`), correlation entries from the uniform
    /// prior on the admissible interval, so the acceptance ratio reduces to a
    /// likelihood ratio.
    pub fn update_edge<R: Rng + ?Sized>(&mut self, st: &mut ChainState, i: usize, j: usize, rng: &mut R) -> Result<()> {
        let (i, j) = (i.min(j), i.max(j));
        if i == j || j >= st.p() {
            return Err(Error::InvalidInput(format!("edge ({i}, {j}) is not an off-diagonal pair")));
        }
        self.ensure_stats(st);
        let t = pair_index(i, j);
        let (q1, q2, pi) = (st.classes[0].q[t], st.classes[1].q[t], st.pi[t]);
        let cell_weight = |a1: bool, a2: bool| {
            (if a1 { q1 } else { 1.0 - q1 }) * (if a2 { q2 } else { 1.0 - q2 }) * (if a1 != a2 { pi } else { 1.0 - pi })
        };
        let cells = [(false, false), (false, true), (true, false), (true, true)];
        let weights = cells.map(|(a1, a2)| cell_weight(a1, a2));
        let total: f64 = weights.iter().sum();
        let mut u = rng.random::<f64>() * total;
        let mut proposed = cells[3];
        for (cell, w) in cells.iter().zip(weights) {
            if u < w {
                proposed = *cell;
                break;
            }
            u -= w;
        }
        let proposed_a = [proposed.0, proposed.1];

        struct Move {
            a: bool,
            r: f64,
            log_det: Option<f64>,
        }
        let mut moves: Vec<Move> = Vec::with_capacity(2);
        let mut intervals = [(0.0, 0.0); 2];
        let mut log_ratio = 0.0;
        let mut reject = false;

        for k in Class::BOTH {
            let ki = k.index();
            let c = st.class(k).correlation();
            let (lo, hi) = admissible_interval(&c, i, j).map_err(|e| Error::Numerical(format!("edge ({i}, {j}), {k}: {e}")))?;
            let (lo, hi) = (lo + INTERVAL_SAFETY, hi - INTERVAL_SAFETY);
            if !(lo < hi) {
                self.acceptance.empty_interval += 1;
                self.acceptance.edge.record(false);
                return Ok(());
            }
            intervals[ki] = (lo, hi);
            let a_old = st.class(k).a.get(i, j);
            let r_old = st.class(k).r.get(i, j);
            let a_new = proposed_a[ki];
            let r_new = match self.cfg.r_proposal {
                RProposal::RandomWalk { step } if a_old && a_new => {
                    let x = r_old + step * rng.sample::<f64, _>(StandardNormal);
                    if !(lo < x && x < hi) {
                        reject = true;
                    }
                    x
                }
                _ => rng.random_range(lo..hi),
            };
            let c_old = if a_old { r_old } else { 0.0 };
            let c_new = if a_new { r_new } else { 0.0 };
            let mut log_det = None;
            if !reject && c_new != c_old {
                let mut c = c;
                c.set(i, j, c_new);
                match log_det_pd(c.as_matrix()) {
                    Some(ld_new) => {
                        log_det = Some(ld_new);
                        let n = self.stats(k).n as f64;
                        if n > 0.0 {
                            let ld_old = self.cached_log_det_c(st, k).unwrap_or(f64::NAN);
                            let s = &st.class(k).s;
                            let w = self.stats(k).scatter[(i, j)];
                            log_ratio += 0.5 * n * (ld_new - ld_old) - s[i] * s[j] * w * (c_new - c_old);
                        }
                    }
                    None => {
                        self.acceptance.numerical_rejects += 1;
                        reject = true;
                    }
                }
            }
            moves.push(Move { a: a_new, r: r_new, log_det });
        }

        if log_ratio.is_nan() && !reject {
            self.acceptance.numerical_rejects += 1;
            reject = true;
        }
        // a current cell with zero prior mass is always left
        let old_cell = cell_weight(st.classes[0].a.get(i, j), st.classes[1].a.get(i, j));
        let accept = !reject && (old_cell == 0.0 || log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio);
        self.acceptance.edge.record(accept);

        if accept {
            for (k, mv) in Class::BOTH.into_iter().zip(moves) {
                let changed = mv.log_det.is_some();
                let c = st.class_mut(k);
                c.a.set(i, j, mv.a);
                c.r.set(i, j, mv.r);
                if changed {
                    self.log_det_c[k.index()] = mv.log_det;
                }
            }
            st.lambda[t] = proposed_a[0] != proposed_a[1];
        } else {
            // inactive entries do not touch the likelihood; refresh them from
            // the constrained prior
            for k in Class::BOTH {
                if !st.class(k).a.get(i, j) {
                    let (lo, hi) = intervals[k.index()];
                    if lo < hi {
                        let x = rng.random_range(lo..hi);
                        st.class_mut(k).r.set(i, j, x);
                    }
                }
            }
        }
        Ok(())
    }

    /// Log-scale random-walk Metropolis update of `S_i` in both classes.
    pub fn update_s<R: Rng + ?Sized>(&mut self, st: &mut ChainState, i: usize, rng: &mut R) -> Result<()> {
        if i >= st.p() {
            return Err(Error::InvalidInput(format!("scale index {i} out of range")));
        }
        self.ensure_stats(st);
        let (g, h) = (self.hyper.s_shape, self.hyper.s_scale);
        // IG(g, h) log density plus the log-Jacobian of the log transform
        let log_prior = |x: f64| -(g + 1.0) * x.ln() - h / x + x.ln();
        let sd = self.cfg.s_proposal_sd;
        for k in Class::BOTH {
            let p = st.p();
            let c = st.class(k);
            let stats = self.stats(k);
            let n = stats.n as f64;
            let s_old = c.s[i];
            let s_new = s_old * (sd * rng.sample::<f64, _>(StandardNormal)).exp();
            let mut cross = 0.0;
            for j in 0..p {
                if j != i && c.a.get(i, j) {
                    cross += c.s[j] * c.r.get(i, j) * stats.scatter[(i, j)];
                }
            }
            let d_lik = n * (s_new.ln() - s_old.ln())
                - 0.5 * ((s_new * s_new - s_old * s_old) * stats.scatter[(i, i)] + 2.0 * (s_new - s_old) * cross);
            let log_ratio = d_lik + log_prior(s_new) - log_prior(s_old);
            let accept = if !(log_ratio.is_finite() && s_new.is_finite() && s_new > 0.0) {
                self.acceptance.numerical_rejects += 1;
                false
            } else {
                log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio
            };
            self.acceptance.scale.record(accept);
            if accept {
                st.class_mut(k).s[i] = s_new;
            }
        }
        Ok(())
    }

    /// Conjugate Gibbs draw of both class means.
    pub fn update_mu<R: Rng + ?Sized>(&mut self, st: &mut ChainState, rng: &mut R) -> Result<()> {
        self.ensure_stats(st);
        let p = st.p();
        for k in Class::BOTH {
            let ki = k.index();
            let (omega, _) = class_precision(st.class(k))?;
            let stats = self.stats(k);
            let b0 = self.hyper.b0[ki].as_matrix();
            let mu0 = DVector::from_column_slice(&self.hyper.mu0[ki]);
            let post_prec = b0 + omega.as_matrix() * stats.n as f64;
            let rhs = b0 * &mu0 + omega.as_matrix() * DVector::from_column_slice(&stats.sum);
            let chol = post_prec
                .cholesky()
                .ok_or_else(|| Error::Numerical(format!("{k} mean posterior precision is not positive definite")))?;
            let mean = chol.solve(&rhs);
            let z = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
            let noise = chol
                .l()
                .transpose()
                .solve_upper_triangular(&z)
                .ok_or_else(|| Error::Numerical("singular mean posterior factor".into()))?;
            st.class_mut(k).mu = (mean + noise).iter().copied().collect();
        }
        self.stats = None;
        Ok(())
    }

    /// Conjugate Beta draws of every `q` and `π`.
    pub fn update_q_pi<R: Rng + ?Sized>(&mut self, st: &mut ChainState, rng: &mut R) -> Result<()> {
        update_q_pi(st, self.hyper, rng)
    }

    /// Class-1 probability of unknown sample `o` under the current state.
    pub fn label_probability(&self, st: &ChainState, o: usize) -> Result<f64> {
        let prec = [class_precision(st.class(Class::One))?, class_precision(st.class(Class::Two))?];
        Ok(label_probability_with(st, &prec, self.data.row(self.unknown[o]), st.h[o]))
    }

    /// Draws each unknown label, then its Beta class probability.
    pub fn update_labels<R: Rng + ?Sized>(&mut self, st: &mut ChainState, rng: &mut R) -> Result<()> {
        if self.unknown.is_empty() {
            return Ok(());
        }
        let prec = [class_precision(st.class(Class::One))?, class_precision(st.class(Class::Two))?];
        let (eta, zeta) = (self.hyper.label_eta, self.hyper.label_zeta);
        for (o, &row) in self.unknown.iter().enumerate() {
            let p1 = label_probability_with(st, &prec, self.data.row(row), st.h[o]);
            let z = if rng.random::<f64>() < p1 { Class::One } else { Class::Two };
            st.z_u[o] = z;
            let one = (z == Class::One) as u8 as f64;
            st.h[o] = beta_draw(eta + one, zeta + 1.0 - one, rng)?;
        }
        self.stats = None;
        Ok(())
    }

    /// One full systematic-scan sweep.
    pub fn sweep<R: Rng + ?Sized>(&mut self, st: &mut ChainState, rng: &mut R) -> Result<()> {
        let p = st.p();
        for (i, j) in pairs_lexicographic(p) {
            self.update_edge(st, i, j, rng)?;
        }
        for i in 0..p {
            self.update_s(st, i, rng)?;
        }
        self.update_mu(st, rng)?;
        self.update_q_pi(st, rng)?;
        self.update_labels(st, rng)?;
        Ok(())
    }

    /// Runs the configured number of sweeps from `state`.
    pub fn run(mut self, mut state: ChainState) -> Result<ChainSamples> {
        self.check_state(&state)?;
        self.invalidate();
        let mut rng = stream_rng(self.cfg.seed, 0);
        let mut draws = Vec::with_capacity(self.cfg.n_draws());
        let (mut checked, mut violations) = (0, 0);
        for sweep in 0..self.cfg.iterations {
            self.sweep(&mut state, &mut rng)?;
            let ll = self.log_likelihood(&state);
            if !ll.is_finite() {
                return Err(Error::NumericalAbort { sweep, state: Box::new(state) });
            }
            if self.cfg.check_invariants {
                checked += 1;
                if let Err(v) = validate_state(&state) {
                    for x in &v {
                        log::error!("sweep {sweep}: invariant violated: {x}");
                    }
                    violations += v.len();
                    debug_assert!(false, "invariant violated after sweep {sweep}: {}", v[0]);
                }
            }
            if sweep >= self.cfg.burn_in && (sweep - self.cfg.burn_in + 1) % self.cfg.thin == 0 {
                draws.push(Draw::from_state(&state));
            }
        }
        Ok(ChainSamples {
            p: state.p(),
            unknown_rows: self.unknown.clone(),
            draws,
            acceptance: self.acceptance,
            config: self.cfg,
            sweeps_checked: checked,
            invariant_violations: violations,
        })
    }
}

fn beta_draw<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> Result<f64> {
    let dist = Beta::new(a, b).map_err(|e| Error::InvalidInput(format!("Beta({a}, {b}): {e}")))?;
    Ok(dist.sample(rng).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON))
}

/// Conjugate Beta draws: `q ~ Beta(a + A, b + 1 - A)`, `π ~ Beta(e + λ, f + 1 - λ)`.
pub fn update_q_pi<R: Rng + ?Sized>(st: &mut ChainState, hyper: &Hyperparameters, rng: &mut R) -> Result<()> {
    let p = st.p();
    for (i, j) in pairs_lexicographic(p) {
        let t = pair_index(i, j);
        for k in Class::BOTH {
            let prior = hyper.edge_prior(k, i, j);
            let on = st.class(k).a.get(i, j) as u8 as f64;
            st.class_mut(k).q[t] = beta_draw(prior.a + on, prior.b + 1.0 - on, rng)?;
        }
        let prior = hyper.diff_prior(i, j);
        let l = st.lambda[t] as u8 as f64;
        st.pi[t] = beta_draw(prior.a + l, prior.b + 1.0 - l, rng)?;
    }
    Ok(())
}

/// `Ω = S (A ⊙ R) S` and its log-determinant for one class block.
pub fn class_precision(c: &ClassState) -> Result<(SymmetricMatrix, f64)> {
    let corr = c.correlation();
    let p = c.s.len();
    let ld = log_det_pd(corr.as_matrix()).ok_or_else(|| Error::Numerical("A ⊙ R is not positive definite".into()))?;
    let omega = DMatrix::from_fn(p, p, |i, j| c.s[i] * c.s[j] * corr.get(i, j));
    let log_det = 2.0 * c.s.iter().map(|x| x.ln()).sum::<f64>() + ld;
    Ok((SymmetricMatrix::from_upper(omega)?, log_det))
}

fn label_probability_with(st: &ChainState, prec: &[(SymmetricMatrix, f64); 2], y: &[f64], h: f64) -> f64 {
    let lw1 = h.ln() + mvn_logpdf_unchecked(y, &st.classes[0].mu, prec[0].0.as_matrix(), prec[0].1);
    let lw2 = (1.0 - h).ln() + mvn_logpdf_unchecked(y, &st.classes[1].mu, prec[1].0.as_matrix(), prec[1].1);
    let m = lw1.max(lw2);
    let (e1, e2) = ((lw1 - m).exp(), (lw2 - m).exp());
    e1 / (e1 + e2)
}

const INIT_MIN_EIGENVALUE: f64 = 0.1;

/// Starting state from the labeled data: empty graphs, correlation entries and
/// scales from the empirical precision (correlations shrunk until the smallest
/// eigenvalue reaches `INIT_MIN_EIGENVALUE`), class means, prior means for `q`, `π`, `h`, and nearest-mean
/// assignment of unknown samples.
pub fn init_state(d: &Dataset, h: &Hyperparameters) -> Result<ChainState> {
    let p = d.p();
    if h.p() != p {
        return Err(Error::InvalidInput(format!("hyperparameters are for p = {}, data has p = {p}", h.p())));
    }
    let unknown = d.unknown();
    let mut st = ChainState::from_prior(h, unknown.len());
    for k in Class::BOTH {
        let rows: Vec<usize> = d.labeled(k).collect();
        if rows.len() < 2 {
            return Err(Error::Init(format!("{k} has {} labeled samples, need at least 2", rows.len())));
        }
        let mean = d.class_mean(k).expect("non-empty class");
        let mut cov = DMatrix::<f64>::zeros(p, p);
        for &r in &rows {
            let dev = DVector::from_iterator(p, d.row(r).iter().zip(&mean).map(|(y, m)| y - m));
            cov += &dev * dev.transpose();
        }
        cov /= (rows.len() - 1) as f64;
        let avg_var = cov.diagonal().mean().max(1e-12);
        // off-diagonal correlations are shrunk only as far as needed to keep
        // the estimate well conditioned
        let sd: Vec<f64> = (0..p).map(|i| cov[(i, i)].max(1e-6 * avg_var).sqrt()).collect();
        let corr = DMatrix::from_fn(p, p, |a, b| if a == b { 1.0 } else { cov[(a, b)] / (sd[a] * sd[b]) });
        let mut shrink = 1.0;
        let omega = loop {
            let est = DMatrix::from_fn(p, p, |a, b| if a == b { 1.0 } else { shrink * corr[(a, b)] });
            if est.clone().symmetric_eigenvalues().min() >= INIT_MIN_EIGENVALUE {
                let inv = est.cholesky().map(|c| c.inverse());
                if let Some(inv) = inv {
                    break DMatrix::from_fn(p, p, |a, b| inv[(a, b)] / (sd[a] * sd[b]));
                }
            }
            shrink *= 0.9;
            if shrink < 1e-6 {
                return Err(Error::Init(format!("{k} empirical covariance is degenerate")));
            }
        };
        let omega = SymmetricMatrix::from_upper(omega)?;
        let mut r = partial_correlations(&omega).map_err(|e| Error::Init(format!("{k}: {e}")))?;
        let mut tries = 0;
        while cholesky(r.as_matrix()).is_none() {
            tries += 1;
            if tries > 200 {
                r = SymmetricMatrix::identity(p);
                break;
            }
            for (i, j) in pairs_lexicographic(p) {
                let x = r.get(i, j) * 0.9;
                r.set(i, j, x);
            }
        }
        let c = st.class_mut(k);
        c.s = (0..p).map(|i| omega.get(i, i).sqrt()).collect();
        c.r = r;
        c.mu = mean;
    }
    let means = [st.classes[0].mu.clone(), st.classes[1].mu.clone()];
    for (o, &row) in unknown.iter().enumerate() {
        let dist = |m: &[f64]| d.row(row).iter().zip(m).map(|(y, m)| (y - m) * (y - m)).sum::<f64>();
        st.z_u[o] = if dist(&means[0]) <= dist(&means[1]) { Class::One } else { Class::Two };
    }
    Ok(st)
}

/// Initializes from the labeled data and runs the chain.
pub fn run_chain(d: &Dataset, h: &Hyperparameters, cfg: &ChainConfig) -> Result<ChainSamples> {
    let state = init_state(d, h)?;
    Sampler::new(d, h, cfg.clone())?.run(state)
}

/// Runs the chain from a given starting state (used for prior-only runs on
/// an empty dataset).
pub fn run_chain_from(d: &Dataset, h: &Hyperparameters, cfg: &ChainConfig, state: ChainState) -> Result<ChainSamples> {
    Sampler::new(d, h, cfg.clone())?.run(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::default_hyperparameters;
    use crate::pdcore::BinaryMatrix;

    fn names(p: usize) -> Vec<String> {
        (0..p).map(|i| format!("P{i}")).collect()
    }

    fn small_dataset() -> Dataset {
        let y = DMatrix::from_row_slice(
            6,
            2,
            &[0.1, 0.3, -0.4, 0.2, 0.5, -0.1, 2.0, 2.2, 1.7, 2.5, 2.1, 1.8],
        );
        let l = vec![Some(Class::One), Some(Class::One), None, Some(Class::Two), Some(Class::Two), None];
        Dataset::new(y, l, names(2)).unwrap()
    }

    #[test]
    fn config_validation_and_counts() {
        let cfg = ChainConfig::new(100, 50, 5, 1);
        cfg.validate().unwrap();
        assert_eq!(cfg.n_draws(), 10);
        assert!(ChainConfig::new(10, 10, 1, 0).validate().is_err());
        assert!(ChainConfig::new(10, 5, 6, 0).validate().is_err());
        assert!(ChainConfig::new(10, 0, 0, 0).validate().is_err());
    }

    #[test]
    fn init_is_valid_and_deterministic() {
        let d = small_dataset();
        let h = default_hyperparameters(2);
        let a = init_state(&d, &h).unwrap();
        assert!(validate_state(&a).is_ok());
        assert_eq!(a, init_state(&d, &h).unwrap());
        assert_eq!(a.classes[0].a, BinaryMatrix::empty(2));
        assert!(a.lambda.iter().all(|l| !l));
        assert_eq!(a.z_u, vec![Class::One, Class::Two]);
    }

    #[test]
    fn init_needs_two_labeled_per_class() {
        let y = DMatrix::from_row_slice(3, 2, &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        let d = Dataset::new(y, vec![Some(Class::One), Some(Class::One), Some(Class::Two)], names(2)).unwrap();
        assert!(matches!(init_state(&d, &default_hyperparameters(2)), Err(Error::Init(_))));
    }

    #[test]
    fn run_counts_draws_and_is_deterministic() {
        let d = small_dataset();
        let h = default_hyperparameters(2);
        let cfg = ChainConfig::new(100, 50, 5, 7);
        let a = run_chain(&d, &h, &cfg).unwrap();
        assert_eq!(a.draws.len(), 10);
        assert_eq!(a, run_chain(&d, &h, &cfg).unwrap());
        let other = run_chain(&d, &h, &ChainConfig { seed: 8, ..cfg }).unwrap();
        assert_ne!(a.draws, other.draws);
        assert_eq!(a.invariant_violations, 0);
    }

    #[test]
    fn forced_inclusion_turns_edges_on() {
        let d = small_dataset();
        let h = default_hyperparameters(2);
        let mut st = init_state(&d, &h).unwrap();
        for k in Class::BOTH {
            st.class_mut(k).q[0] = 1.0;
        }
        let mut s = Sampler::new(&d, &h, ChainConfig::new(10, 0, 1, 3)).unwrap();
        let mut rng = stream_rng(3, 0);
        s.update_edge(&mut st, 0, 1, &mut rng).unwrap();
        assert!(st.classes[0].a.get(0, 1) && st.classes[1].a.get(0, 1));
        assert!(!st.lambda[0]);
    }

    #[test]
    fn zero_step_scale_proposals_always_accept() {
        let d = small_dataset();
        let h = default_hyperparameters(2);
        let mut cfg = ChainConfig::new(10, 0, 1, 3);
        cfg.s_proposal_sd = 0.0;
        let mut st = init_state(&d, &h).unwrap();
        let before = st.clone();
        let mut s = Sampler::new(&d, &h, cfg).unwrap();
        let mut rng = stream_rng(3, 0);
        for _ in 0..50 {
            s.update_s(&mut st, 0, &mut rng).unwrap();
            s.update_s(&mut st, 1, &mut rng).unwrap();
        }
        assert_eq!(s.acceptance.scale.rate(), 1.0);
        assert_eq!(st.classes[0].s, before.classes[0].s);
    }

    #[test]
    fn symmetric_label_probability_is_half() {
        let d = small_dataset();
        let h = default_hyperparameters(2);
        let mut st = init_state(&d, &h).unwrap();
        st.classes[1] = st.classes[0].clone();
        st.h = vec![0.5, 0.5];
        let s = Sampler::new(&d, &h, ChainConfig::new(10, 0, 1, 3)).unwrap();
        for o in 0..2 {
            assert!((s.label_probability(&st, o).unwrap() - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn separated_means_dominate_labels() {
        let y = DMatrix::from_row_slice(5, 2, &[0.0, 0.0, 0.1, -0.1, 10.0, 10.0, 9.9, 10.1, 0.0, 0.0]);
        let l = vec![Some(Class::One), Some(Class::One), Some(Class::Two), Some(Class::Two), None];
        let d = Dataset::new(y, l, names(2)).unwrap();
        let h = default_hyperparameters(2);
        let mut st = ChainState::from_prior(&h, 1);
        st.classes[0].mu = vec![0.0, 0.0];
        st.classes[1].mu = vec![10.0, 10.0];
        st.h = vec![0.5];
        let s = Sampler::new(&d, &h, ChainConfig::new(10, 0, 1, 3)).unwrap();
        assert!(s.label_probability(&st, 0).unwrap() > 0.999);
    }

    #[test]
    fn empty_class_mean_draws_from_prior() {
        // no data at all: the conditional is the prior N(mu0, B0^-1)
        let d = Dataset::empty(names(2)).unwrap();
        let mut h = default_hyperparameters(2);
        h.mu0 = [vec![3.0, -1.0], vec![0.0, 0.0]];
        h.b0[0] = SymmetricMatrix::from_diagonal(&[4.0, 4.0]);
        let mut st = ChainState::from_prior(&h, 0);
        let mut s = Sampler::new(&d, &h, ChainConfig::new(10, 0, 1, 3)).unwrap();
        let mut rng = stream_rng(11, 0);
        let n = 20000;
        let (mut m, mut v) = (0.0, 0.0);
        for _ in 0..n {
            s.update_mu(&mut st, &mut rng).unwrap();
            let x = st.classes[0].mu[0];
            m += x;
            v += (x - 3.0) * (x - 3.0);
        }
        m /= n as f64;
        v /= n as f64;
        assert!((m - 3.0).abs() < 4.0 * (0.25f64 / n as f64).sqrt(), "{m}");
        assert!((v - 0.25).abs() < 0.02, "{v}");
    }

    #[test]
    fn strong_mean_prior_pins_the_draw() {
        let d = small_dataset();
        let mut h = default_hyperparameters(2);
        h.mu0 = [vec![5.0, 5.0], vec![-5.0, -5.0]];
        h.b0 = [SymmetricMatrix::from_diagonal(&[1e8, 1e8]), SymmetricMatrix::from_diagonal(&[1e8, 1e8])];
        let mut st = init_state(&d, &h).unwrap();
        let mut s = Sampler::new(&d, &h, ChainConfig::new(10, 0, 1, 3)).unwrap();
        s.update_mu(&mut st, &mut stream_rng(2, 0)).unwrap();
        for (x, m) in st.classes[0].mu.iter().zip(&h.mu0[0]) {
            assert!((x - m).abs() < 1e-3);
        }
    }
}
