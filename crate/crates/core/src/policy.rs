//! Softmax policies, the inverse logit map and the minimum-probability projection.

use nalgebra::DMatrix;

use crate::error::{EntacError, Result};
use crate::mdp::{sample_simplex, TabularMdp};
use crate::numeric::compensated_sum;

const ROW_SUM_TOL: f64 = 1e-12;

/// Actor parameters, one logit per `(s, a)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Logits(DMatrix<f64>);

impl Logits {
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        Logits(DMatrix::zeros(n_states, n_actions))
    }

    pub fn new(theta: DMatrix<f64>) -> Result<Self> {
        if theta.iter().all(|x| x.is_finite()) {
            Ok(Logits(theta))
        } else {
            Err(EntacError::invalid("logits must be finite"))
        }
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn shape(&self) -> (usize, usize) {
        self.0.shape()
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.0[(s, a)]
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    /// Returns a copy with `delta` added at `(s, a)`.
    pub fn bumped(&self, s: usize, a: usize, delta: f64) -> Logits {
        let mut m = self.0.clone();
        m[(s, a)] += delta;
        Logits(m)
    }
}

/// A row-stochastic policy together with its log-probabilities.
///
/// Log-probabilities are kept separately from `probs` because softmax rows
/// with large logit gaps underflow to zero in `probs` while the log stays
/// finite and exact.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    probs: DMatrix<f64>,
    log_probs: DMatrix<f64>,
}

impl Policy {
    /// Builds a policy from explicit probabilities. Rows must sum to 1 within
    /// 1e-12 and every entry must be strictly positive.
    pub fn from_probs(probs: DMatrix<f64>) -> Result<Self> {
        for s in 0..probs.nrows() {
            let row = probs.row(s);
            if let Some(bad) = row.iter().find(|&&p| !(p > 0.0)) {
                return Err(EntacError::invalid(format!("policy entry {bad} in state {s} is not positive")));
            }
            let sum = compensated_sum(row.iter().copied());
            if !((sum - 1.0).abs() <= ROW_SUM_TOL) {
                return Err(EntacError::invalid(format!("policy row {s} sums to {sum}")));
            }
        }
        let log_probs = probs.map(f64::ln);
        Ok(Policy { probs, log_probs })
    }

    /// Uniform policy.
    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        softmax_policy(&Logits::zeros(n_states, n_actions))
    }

    pub fn probs(&self) -> &DMatrix<f64> {
        &self.probs
    }

    pub fn log_probs(&self) -> &DMatrix<f64> {
        &self.log_probs
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[(s, a)]
    }

    pub fn log_prob(&self, s: usize, a: usize) -> f64 {
        self.log_probs[(s, a)]
    }

    pub fn n_states(&self) -> usize {
        self.probs.nrows()
    }

    pub fn n_actions(&self) -> usize {
        self.probs.ncols()
    }

    /// Smallest action probability over all states.
    pub fn min_prob(&self) -> f64 {
        self.probs.min()
    }

    pub fn row(&self, s: usize) -> Vec<f64> {
        self.probs.row(s).iter().copied().collect()
    }

    pub fn log_row(&self, s: usize) -> Vec<f64> {
        self.log_probs.row(s).iter().copied().collect()
    }
}

/// Softmax of each logit row, with log-probabilities from a max-shifted
/// log-sum-exp.
pub fn softmax_policy(theta: &Logits) -> Policy {
    let m = theta.as_matrix();
    let (n_s, n_a) = m.shape();
    let mut log_probs = DMatrix::zeros(n_s, n_a);
    for s in 0..n_s {
        let row = m.row(s);
        let max = row.max();
        let lse = row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        for a in 0..n_a {
            log_probs[(s, a)] = m[(s, a)] - max - lse;
        }
    }
    let probs = log_probs.map(f64::exp);
    Policy { probs, log_probs }
}

/// The canonical logits `theta(s, a) = log pi(a|s)`.
pub fn logits_from_policy(policy: &Policy) -> Result<Logits> {
    if let Some(idx) = policy.log_probs.iter().position(|x| !x.is_finite()) {
        let (s, a) = (idx % policy.n_states(), idx / policy.n_states());
        return Err(EntacError::invalid(format!("zero probability at ({s},{a}) has no logit")));
    }
    Ok(Logits(policy.log_probs.clone()))
}

/// Minimum-probability threshold, held in log space.
///
/// `log_tau = -inf` (with `tau = 0`) means the projection is disabled, either
/// explicitly or because the threshold underflows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tau {
    log_tau: f64,
    tau: f64,
}

impl Tau {
    pub fn disabled() -> Self {
        Tau { log_tau: f64::NEG_INFINITY, tau: 0.0 }
    }

    pub fn from_log(log_tau: f64) -> Self {
        Tau { log_tau, tau: log_tau.exp() }
    }

    pub fn fixed(tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(EntacError::invalid(format!("tau must be positive, got {tau}")));
        }
        Ok(Tau { log_tau: tau.ln(), tau })
    }

    pub fn log_tau(&self) -> f64 {
        self.log_tau
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Whether the projection does anything.
    pub fn is_active(&self) -> bool {
        self.tau > 0.0
    }

    fn check_feasible(&self, n_actions: usize) -> Result<()> {
        let cap = 1.0 / (2.0 * (n_actions * n_actions) as f64);
        if self.tau >= cap {
            return Err(EntacError::invalid(format!(
                "tau {} must be below 1/(2|A|^2) = {cap}",
                self.tau
            )));
        }
        Ok(())
    }
}

/// Threshold at which the projection provably does not decrease the
/// regularized objective:
/// `min( exp(-(16 + 8 gamma lambda log|A|) / (lambda (1-gamma)^2 rho_min)) / 3, 1/(3^8 |A|^4) )`.
///
/// Returns the disabled sentinel when `rho_min = 0`.
pub fn tau_lambda(mdp: &TabularMdp, lambda: f64) -> Tau {
    let rho_min = mdp.rho_min();
    if !(rho_min > 0.0) || !(lambda > 0.0) {
        return Tau::disabled();
    }
    let gamma = mdp.gamma();
    let log_a = (mdp.n_actions() as f64).ln();
    let first = -(3f64.ln()) - (16.0 + 8.0 * gamma * lambda * log_a) / (lambda * (1.0 - gamma).powi(2) * rho_min);
    let second = -8.0 * 3f64.ln() - 4.0 * log_a;
    Tau::from_log(first.min(second))
}

/// Projects one row. Returns `None` if the row is already in the feasible set.
fn project_row<R: rand::Rng + ?Sized>(
    probs: &[f64],
    logs: &[f64],
    tau: &Tau,
    rng: &mut R,
) -> Option<(Vec<f64>, Vec<f64>)> {
    let t = tau.tau();
    if probs.iter().all(|&p| p > t) {
        return None;
    }
    let max = probs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ties: Vec<usize> = (0..probs.len()).filter(|&a| probs[a] == max).collect();
    let a_max = if ties.len() == 1 { ties[0] } else { ties[rng.random_range(0..ties.len())] };
    let mut p = probs.to_vec();
    let mut lp = logs.to_vec();
    let log_t = t.ln();
    let mut added = Vec::new();
    for a in 0..p.len() {
        if probs[a] <= t {
            added.push(t - probs[a]);
            p[a] = t;
            lp[a] = log_t;
        }
    }
    let moved = compensated_sum(added);
    p[a_max] = probs[a_max] - moved;
    if moved != 0.0 {
        lp[a_max] = p[a_max].ln();
    }
    Some((p, lp))
}

/// Raises every probability `<= tau` to exactly `tau` and takes the added mass
/// from the most likely action of that state (ties broken with `rng`).
pub fn project_policy<R: rand::Rng + ?Sized>(policy: &Policy, tau: &Tau, rng: &mut R) -> Result<Policy> {
    if !tau.is_active() {
        return Ok(policy.clone());
    }
    tau.check_feasible(policy.n_actions())?;
    let mut out = policy.clone();
    for s in 0..policy.n_states() {
        if let Some((p, lp)) = project_row(&policy.row(s), &policy.log_row(s), tau, rng) {
            for a in 0..p.len() {
                out.probs[(s, a)] = p[a];
                out.log_probs[(s, a)] = lp[a];
            }
        }
    }
    Ok(out)
}

/// The projection in logit space. Rows that need no change keep their exact
/// logits; if nothing changes the input is returned bit-for-bit.
pub fn project_logits<R: rand::Rng + ?Sized>(theta: &Logits, tau: &Tau, rng: &mut R) -> Result<Logits> {
    if !tau.is_active() {
        return Ok(theta.clone());
    }
    let (_, n_a) = theta.shape();
    tau.check_feasible(n_a)?;
    let policy = softmax_policy(theta);
    let mut out = theta.0.clone();
    for s in 0..policy.n_states() {
        if let Some((_, lp)) = project_row(&policy.row(s), &policy.log_row(s), tau, rng) {
            for a in 0..n_a {
                out[(s, a)] = lp[a];
            }
        }
    }
    Ok(Logits(out))
}

/// Random policy with rows uniform on the simplex.
pub fn random_policy<R: rand::Rng + ?Sized>(rng: &mut R, n_states: usize, n_actions: usize) -> Policy {
    loop {
        let rows: Vec<f64> = (0..n_states).flat_map(|_| sample_simplex(rng, n_actions)).collect();
        if let Ok(p) = Policy::from_probs(DMatrix::from_row_slice(n_states, n_actions, &rows)) {
            return p;
        }
    }
}

/// Logits with i.i.d. `Unif[-scale, scale]` entries.
pub fn random_logits<R: rand::Rng + ?Sized>(rng: &mut R, n_states: usize, n_actions: usize, scale: f64) -> Logits {
    Logits(DMatrix::from_fn(n_states, n_actions, |_, _| rng.random_range(-scale..=scale)))
}

/// `sum_a p(a) log(p(a))^2` with `0 log(0)^2 = 0`.
pub fn entropy_squared(p: &[f64]) -> f64 {
    compensated_sum(p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln().powi(2)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{make_gridworld, make_synthetic, InitMode};
    use crate::seeded_rng;
    use nalgebra::DVector;

    fn row_policy(rows: &[&[f64]]) -> Policy {
        let n_a = rows[0].len();
        let flat: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Policy::from_probs(DMatrix::from_row_slice(rows.len(), n_a, &flat)).unwrap()
    }

    #[test]
    fn softmax_uniform() {
        let p = softmax_policy(&Logits::zeros(3, 4));
        assert!(p.probs().iter().all(|&x| x == 0.25));
    }

    #[test]
    fn softmax_large_gap_stays_finite() {
        let theta = Logits::new(DMatrix::from_row_slice(1, 2, &[1000.0, 0.0])).unwrap();
        let p = softmax_policy(&theta);
        assert_eq!(p.prob(0, 0), 1.0);
        assert!(p.log_prob(0, 0).abs() < 1e-300);
        assert_eq!(p.log_prob(0, 1), -1000.0);
        assert!(p.log_probs().iter().all(|x| x.is_finite()));
    }

    #[test]
    fn softmax_shift_invariance() {
        let a = softmax_policy(&Logits::new(DMatrix::from_row_slice(1, 2, &[1.0, 0.0])).unwrap());
        let b = softmax_policy(&Logits::new(DMatrix::from_row_slice(1, 2, &[6.0, 5.0])).unwrap());
        for i in 0..2 {
            assert!((a.prob(0, i) - b.prob(0, i)).abs() <= 1e-15);
            assert!((a.log_prob(0, i) - b.log_prob(0, i)).abs() <= 1e-15);
        }
    }

    #[test]
    fn logits_of_uniform_two_actions() {
        let th = logits_from_policy(&Policy::uniform(2, 2)).unwrap();
        assert!(th.as_matrix().iter().all(|&x| (x + 2f64.ln()).abs() < 1e-15));
    }

    #[test]
    fn logits_log_ratio() {
        let th = logits_from_policy(&row_policy(&[&[0.731058, 0.268942]])).unwrap();
        let oracle = (0.731058f64 / 0.268942).ln();
        assert!((th.get(0, 0) - th.get(0, 1) - oracle).abs() < 1e-12);
        assert!((th.get(0, 0) - th.get(0, 1) - 1.0).abs() < 1e-5);
    }

    #[test]
    fn logits_round_trip() {
        let mut rng = seeded_rng(3);
        let mut worst = 0.0f64;
        for _ in 0..50 {
            let p = random_policy(&mut rng, 4, 3);
            let back = softmax_policy(&logits_from_policy(&p).unwrap());
            worst = worst.max((back.probs() - p.probs()).amax());
        }
        assert!(worst <= 1e-12, "{worst}");
    }

    #[test]
    fn zero_probability_has_no_logit() {
        let th = Logits::new(DMatrix::from_row_slice(1, 2, &[0.0, -1e6])).unwrap();
        let p = softmax_policy(&th);
        assert_eq!(p.prob(0, 1), 0.0);
        // log-probability is still finite, so the inverse map is fine here.
        assert!(logits_from_policy(&p).is_ok());
        assert!(Policy::from_probs(DMatrix::from_row_slice(1, 2, &[1.0, 0.0])).is_err());
    }

    fn mdp_with(gamma: f64, n_actions: usize, rho: &[f64]) -> TabularMdp {
        let base = make_synthetic(rho.len(), n_actions, gamma, 0).unwrap();
        base.with_init_dist(DVector::from_row_slice(rho)).unwrap()
    }

    #[test]
    fn tau_lambda_representable_regime() {
        let t = tau_lambda(&mdp_with(0.5, 2, &[0.5, 0.5]), 2.0);
        let first = -(16.0 + 8.0 * 0.5 * 2.0 * 2f64.ln()) / 0.25 - 3f64.ln();
        let second = (1.0f64 / (6561.0 * 16.0)).ln();
        assert!((t.log_tau() - first).abs() < 1e-12);
        assert!(first < second);
        assert!((t.log_tau() + 87.28).abs() < 0.01);
        assert!(t.is_active());
    }

    #[test]
    fn tau_lambda_underflows_in_experiment_regime() {
        let t = tau_lambda(&mdp_with(0.99, 4, &[0.25; 4]), 0.05);
        let oracle = -(3f64.ln()) - (16.0 + 8.0 * 0.99 * 0.05 * 4f64.ln()) / (0.05 * 1e-4 * 0.25);
        assert!(t.log_tau().is_finite());
        assert!((t.log_tau() / oracle - 1.0).abs() < 1e-9);
        assert!((t.log_tau() + 1.3239e7).abs() < 0.0001e7);
        assert_eq!(t.tau(), 0.0);
        assert!(!t.is_active());
    }

    #[test]
    fn tau_lambda_sentinel_without_exploration() {
        let g = make_gridworld(2, 2, 0.99, InitMode::StartCell).unwrap();
        let t = tau_lambda(&g, 0.05);
        assert_eq!(t.log_tau(), f64::NEG_INFINITY);
        assert!(!t.is_active());
    }

    #[test]
    fn project_examples() {
        let mut rng = seeded_rng(0);
        let tau = Tau::fixed(0.01).unwrap();
        let p = project_policy(&row_policy(&[&[0.005, 0.995]]), &tau, &mut rng).unwrap();
        assert_eq!(p.row(0), vec![0.01, 0.99]);
        let q = project_policy(&row_policy(&[&[0.5, 0.5]]), &tau, &mut rng).unwrap();
        assert_eq!(q.row(0), vec![0.5, 0.5]);
        let tau3 = Tau::fixed(0.01).unwrap();
        let r = project_policy(&row_policy(&[&[0.004, 0.006, 0.99]]), &tau3, &mut rng).unwrap();
        let expect = [0.01, 0.01, 0.98];
        for (x, e) in r.row(0).iter().zip(expect) {
            assert!((x - e).abs() < 1e-15);
        }
    }

    #[test]
    fn project_rejects_large_tau() {
        let mut rng = seeded_rng(0);
        let tau = Tau::fixed(0.2).unwrap();
        assert!(project_policy(&Policy::uniform(1, 2), &tau, &mut rng).is_err());
    }

    #[test]
    fn project_logits_examples() {
        let mut rng = seeded_rng(1);
        let theta = Logits::new(DMatrix::from_row_slice(1, 2, &[(0.005f64).ln(), (0.995f64).ln()])).unwrap();
        assert_eq!(project_logits(&theta, &Tau::disabled(), &mut rng).unwrap(), theta);
        let out = project_logits(&theta, &Tau::fixed(0.01).unwrap(), &mut rng).unwrap();
        let p = softmax_policy(&out);
        assert!((p.prob(0, 0) - 0.01).abs() < 1e-12);
        assert!((p.prob(0, 1) - 0.99).abs() < 1e-12);
        let inside = Logits::new(DMatrix::from_row_slice(2, 2, &[0.3, -0.2, 1.0, 1.5])).unwrap();
        let same = project_logits(&inside, &Tau::fixed(0.01).unwrap(), &mut rng).unwrap();
        let bits = |l: &Logits| l.as_matrix().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&same), bits(&inside));
    }

    #[test]
    fn tie_breaking_is_seeded() {
        let p = row_policy(&[&[0.001, 0.4995, 0.4995]]);
        let tau = Tau::fixed(0.01).unwrap();
        let mut hits = [0usize; 3];
        let mut rng = seeded_rng(5);
        for _ in 0..200 {
            let q = project_policy(&p, &tau, &mut rng).unwrap();
            let a = (1..3).find(|&a| q.prob(0, a) < 0.4995).unwrap();
            hits[a] += 1;
        }
        assert!(hits[1] > 50 && hits[2] > 50, "{hits:?}");
        let a = project_policy(&p, &tau, &mut seeded_rng(9)).unwrap();
        let b = project_policy(&p, &tau, &mut seeded_rng(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn entropy_squared_endpoints() {
        assert_eq!(entropy_squared(&[1.0, 0.0]), 0.0);
        let u = entropy_squared(&[0.25; 4]);
        assert!((u - 4f64.ln().powi(2)).abs() < 1e-12);
    }
}
