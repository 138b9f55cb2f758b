//! Exact regularized planning: policy evaluation, soft value iteration, the
//! softmax policy gradient, and closed-form analysis constants.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{EntacError, Result};
use crate::mdp::{occupancy, occupancy_from_state, TabularMdp};
use crate::numeric::{compensated_sum, frob_sq, kl_from_logs, log_sum_exp, solve_dense};
use crate::policy::{softmax_policy, Logits, Policy, Tau};

const SOLVE_RESIDUAL_LIMIT: f64 = 1e-8;
const MAX_SOFT_VI_ITERATIONS: usize = 1_000_000;

/// Exact regularized value, Q-function and advantage of a policy.
#[derive(Debug, Clone, PartialEq)]
pub struct RegValues {
    pub v: DVector<f64>,
    pub q: DMatrix<f64>,
    pub adv: DMatrix<f64>,
    pub lambda: f64,
}

/// Solves `(I - gamma P_pi) v = r_pi^lambda` directly, then
/// `q = r + gamma P v` and `adv = q - lambda log pi - v`.
///
/// `lambda = 0` gives the unregularized quantities.
pub fn reg_values(mdp: &TabularMdp, policy: &Policy, lambda: f64) -> Result<RegValues> {
    mdp.check_policy(policy)?;
    if !(lambda >= 0.0) {
        return Err(EntacError::invalid(format!("lambda must be nonnegative, got {lambda}")));
    }
    let (n_s, n_a) = (mdp.n_states(), mdp.n_actions());
    let gamma = mdp.gamma();
    let r = mdp.reward();
    let probs = policy.probs();
    let logs = policy.log_probs();
    let r_pi = DVector::from_fn(n_s, |s, _| {
        compensated_sum((0..n_a).map(|a| probs[(s, a)] * (r[(s, a)] - lambda * logs[(s, a)])))
    });
    let system = DMatrix::identity(n_s, n_s) - mdp.policy_kernel(policy) * gamma;
    let v = solve_dense(&system, &r_pi, "policy evaluation", SOLVE_RESIDUAL_LIMIT)?;
    let q = q_from_v(mdp, &v);
    let adv = DMatrix::from_fn(n_s, n_a, |s, a| q[(s, a)] - lambda * logs[(s, a)] - v[s]);
    Ok(RegValues { v, q, adv, lambda })
}

/// `q(s, a) = r(s, a) + gamma sum_s' P(s'|s,a) v(s')`.
pub fn q_from_v(mdp: &TabularMdp, v: &DVector<f64>) -> DMatrix<f64> {
    let gamma = mdp.gamma();
    DMatrix::from_fn(mdp.n_states(), mdp.n_actions(), |s, a| {
        let next: f64 = mdp.transition_row(s, a).iter().zip(v.iter()).map(|(p, x)| p * x).sum();
        mdp.reward()[(s, a)] + gamma * next
    })
}

/// Regularized objective `sum_s rho(s) v(s)`.
pub fn reg_objective(mdp: &TabularMdp, policy: &Policy, lambda: f64) -> Result<f64> {
    let rv = reg_values(mdp, policy, lambda)?;
    Ok(rho_dot(mdp, &rv.v))
}

pub(crate) fn rho_dot(mdp: &TabularMdp, v: &DVector<f64>) -> f64 {
    compensated_sum(mdp.init_dist().iter().zip(v.iter()).map(|(r, x)| r * x))
}

/// Output of soft value iteration.
#[derive(Debug, Clone)]
pub struct SoftOptimum {
    pub v_star: DVector<f64>,
    pub q_star: DMatrix<f64>,
    pub pi_star: Policy,
    pub j_star: f64,
    pub iterations: usize,
    /// Sup-norm change of the last sweep.
    pub residual: f64,
}

/// Default stopping tolerance for [`optimal_reg_values`].
pub const DEFAULT_SOFT_VI_TOL: f64 = 1e-12;

/// Soft value iteration `V <- lambda log sum_a exp((r + gamma P V) / lambda)`.
///
/// Stops once the sup-norm change is at most `tol * (1 - gamma)`, or at the
/// floating-point resolution of `V` if that is coarser.
pub fn optimal_reg_values(mdp: &TabularMdp, lambda: f64, tol: f64) -> Result<SoftOptimum> {
    if !(lambda > 0.0) {
        return Err(EntacError::invalid(format!("optimal values need lambda > 0, got {lambda}")));
    }
    if !(tol > 0.0) {
        return Err(EntacError::invalid("tolerance must be positive"));
    }
    let (n_s, n_a) = (mdp.n_states(), mdp.n_actions());
    let mut v = DVector::zeros(n_s);
    let mut scratch = vec![0.0; n_a];
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    while iterations < MAX_SOFT_VI_ITERATIONS {
        let q = q_from_v(mdp, &v);
        let next = DVector::from_fn(n_s, |s, _| {
            for a in 0..n_a {
                scratch[a] = q[(s, a)] / lambda;
            }
            lambda * log_sum_exp(&scratch)
        });
        residual = (&next - &v).amax();
        v = next;
        iterations += 1;
        let resolution = 4.0 * f64::EPSILON * v.amax().max(1.0);
        if residual <= (tol * (1.0 - mdp.gamma())).max(resolution) {
            let q_star = q_from_v(mdp, &v);
            let pi_star = softmax_policy(&Logits::new(&q_star / lambda)?);
            let j_star = rho_dot(mdp, &v);
            return Ok(SoftOptimum { v_star: v, q_star, pi_star, j_star, iterations, residual });
        }
    }
    Err(EntacError::NotConverged { iterations, residual })
}

/// `dJ/dtheta(s, a) = d(s) pi(a|s) adv(s, a) / (1 - gamma)`.
pub fn exact_gradient(mdp: &TabularMdp, theta: &Logits, lambda: f64) -> Result<DMatrix<f64>> {
    exact_gradient_for(mdp, &softmax_policy(theta), lambda)
}

/// [`exact_gradient`] for an already-computed softmax policy.
pub fn exact_gradient_for(mdp: &TabularMdp, policy: &Policy, lambda: f64) -> Result<DMatrix<f64>> {
    let occ = occupancy(mdp, policy)?;
    let rv = reg_values(mdp, policy, lambda)?;
    Ok(gradient_from_parts(mdp, policy, occ.as_vector(), &rv.adv))
}

pub(crate) fn gradient_from_parts(
    mdp: &TabularMdp,
    policy: &Policy,
    d: &DVector<f64>,
    adv: &DMatrix<f64>,
) -> DMatrix<f64> {
    let scale = 1.0 / (1.0 - mdp.gamma());
    DMatrix::from_fn(mdp.n_states(), mdp.n_actions(), |s, a| scale * d[s] * policy.prob(s, a) * adv[(s, a)])
}

/// Non-uniform Lojasiewicz coefficient `lambda (1-gamma) rho_min^2 min pi^2 / |S|`.
pub fn pl_coefficient(mdp: &TabularMdp, theta: &Logits, lambda: f64) -> Result<f64> {
    let rho_min = mdp.rho_min();
    if !(rho_min > 0.0) {
        return Err(EntacError::invalid("Lojasiewicz coefficient needs rho_min > 0"));
    }
    let pi_min = softmax_policy(theta).min_prob();
    Ok(pl_formula(mdp, lambda, pi_min))
}

/// The same coefficient with `min pi` replaced by a floor `tau`.
pub fn pl_floor(mdp: &TabularMdp, lambda: f64, tau: f64) -> f64 {
    pl_formula(mdp, lambda, tau)
}

fn pl_formula(mdp: &TabularMdp, lambda: f64, pi_min: f64) -> f64 {
    lambda * (1.0 - mdp.gamma()) * mdp.rho_min().powi(2) * pi_min.powi(2) / mdp.n_states() as f64
}

/// Smoothness constant `(8 + lambda (4 + 8 log|A|)) / (1-gamma)^3`.
pub fn smoothness_l(lambda: f64, gamma: f64, n_actions: usize) -> f64 {
    (8.0 + lambda * (4.0 + 8.0 * (n_actions as f64).ln())) / (1.0 - gamma).powi(3)
}

/// Both sides of the soft performance-difference identity at state `s`:
///
/// `V2(s) - V1(s) = 1/(1-gamma) sum_s' d_s^{pi1}(s') [ sum_a (pi2 - pi1)(a|s') (q2(s',a) - lambda log pi2(a|s'))
///                  + lambda KL(pi1(.|s') || pi2(.|s')) ]`.
pub fn soft_pdl_sides(mdp: &TabularMdp, pi1: &Policy, pi2: &Policy, lambda: f64, s: usize) -> Result<(f64, f64)> {
    if s >= mdp.n_states() {
        return Err(EntacError::invalid(format!("state {s} out of range")));
    }
    let rv1 = reg_values(mdp, pi1, lambda)?;
    let rv2 = reg_values(mdp, pi2, lambda)?;
    let lhs = rv2.v[s] - rv1.v[s];
    let d = occupancy_from_state(mdp, pi1, s)?;
    let n_a = mdp.n_actions();
    let terms = (0..mdp.n_states()).map(|sp| {
        let inner = compensated_sum((0..n_a).map(|a| {
            (pi2.prob(sp, a) - pi1.prob(sp, a)) * (rv2.q[(sp, a)] - lambda * pi2.log_prob(sp, a))
        }));
        let kl = kl_from_logs(&pi1.row(sp), &pi1.log_row(sp), &pi2.log_row(sp));
        d.get(sp) * (inner + lambda * kl)
    });
    let rhs = compensated_sum(terms) / (1.0 - mdp.gamma());
    Ok((lhs, rhs))
}

/// Closed-form constants that govern step sizes, critic accuracy and the
/// convergence floor. Descriptive only; nothing here is enforced.
///
/// Threshold-dependent entries are `+inf` (serialized as `null`) when the
/// projection threshold is disabled.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct ConstantsReport {
    pub log_tau: f64,
    pub tau: f64,
    pub rho_min: f64,
    pub smoothness_l: f64,
    pub pl_floor_mu: f64,
    pub critic_mu: f64,
    pub critic_sigma_sq: f64,
    pub c_lambda: f64,
    pub c_tilde_lambda: f64,
    pub bias_b: f64,
    pub predicted_h_floor: f64,
    pub actor_step_cap: f64,
    pub critic_step_cap: f64,
    pub degenerate: bool,
}

/// Critic noise level `(36 + 4 lambda^2 + 36 lambda^2 log(|A|)^2) / (1-gamma)^2`.
pub fn critic_sigma_sq(lambda: f64, gamma: f64, n_actions: usize) -> f64 {
    let log_a = (n_actions as f64).ln();
    (36.0 + 4.0 * lambda * lambda + 36.0 * lambda * lambda * log_a * log_a) / (1.0 - gamma).powi(2)
}

/// Critic contraction modulus `(1-gamma)^2 rho_min tau / 2`.
pub fn critic_mu(gamma: f64, rho_min: f64, tau: f64) -> f64 {
    (1.0 - gamma).powi(2) * rho_min * tau / 2.0
}

/// Sup-norm Q-drift constant
/// `2 gamma/(1-gamma) ((1 + lambda log|A|)/(1-gamma) + lambda log(1/tau) + lambda/(2 tau))`.
pub fn c_lambda(lambda: f64, gamma: f64, n_actions: usize, tau: &Tau) -> f64 {
    let log_a = (n_actions as f64).ln();
    2.0 * gamma / (1.0 - gamma)
        * ((1.0 + lambda * log_a) / (1.0 - gamma) - lambda * tau.log_tau() + lambda / (2.0 * tau.tau()))
}

/// L2 version of [`c_lambda`], scaled by `sqrt(|S||A|)`.
pub fn c_tilde_lambda(lambda: f64, gamma: f64, n_states: usize, n_actions: usize, tau: &Tau) -> f64 {
    ((n_states * n_actions) as f64).sqrt() * c_lambda(lambda, gamma, n_actions, tau)
}

fn finite_or_inf(x: f64) -> f64 {
    if x.is_nan() {
        f64::INFINITY
    } else {
        x
    }
}

/// Evaluates every constant for `(mdp, lambda, tau, eta_a, eta_c)`.
///
/// The initial-critic term of the bias constant uses `q_init` against the exact
/// Q-function of the uniform initial policy.
pub fn constants_report(
    mdp: &TabularMdp,
    lambda: f64,
    tau: &Tau,
    eta_a: f64,
    eta_c: f64,
    q_init: &DMatrix<f64>,
) -> Result<ConstantsReport> {
    let (n_s, n_a) = (mdp.n_states(), mdp.n_actions());
    if q_init.shape() != (n_s, n_a) {
        return Err(EntacError::shape("q_init shape does not match the MDP"));
    }
    let gamma = mdp.gamma();
    let rho_min = mdp.rho_min();
    let t = tau.tau();
    let log_a = (n_a as f64).ln();
    let sa = (n_s * n_a) as f64;

    let l = smoothness_l(lambda, gamma, n_a);
    let mu_floor = pl_floor(mdp, lambda, t);
    let mu_c = critic_mu(gamma, rho_min, t);
    let sigma_sq = critic_sigma_sq(lambda, gamma, n_a);
    let c = finite_or_inf(c_lambda(lambda, gamma, n_a, tau));
    let c_tilde = finite_or_inf(c_tilde_lambda(lambda, gamma, n_s, n_a, tau));

    let q0 = reg_values(mdp, &Policy::uniform(n_s, n_a), lambda)?.q;
    let init_gap = frob_sq(&(q_init - &q0));
    let bias_b = finite_or_inf(
        2.0 * init_gap
            + 2.0 * c_tilde.powi(2) * rho_min.powi(2) * t * t * (2.0 + lambda * lambda + 3.0 * lambda * lambda * log_a * log_a)
                / (l * l)
            + 2.0 * (1.0 - gamma).powi(2) * rho_min * t * sigma_sq / (20.0 * mu_c)
            + 2.0 * sa * (1.0 + lambda * lambda * log_a * log_a) / (1.0 - gamma).powi(2),
    );
    let predicted_h_floor =
        finite_or_inf(2.0 / (eta_c * mu_c) * (2.0 + 4.0 * c_tilde.powi(2) * eta_a * eta_a).ln());
    let actor_step_cap = (1.0 - gamma) * rho_min * t / (8.0 * l);
    let critic_step_cap = (1.0 - gamma).powi(2) * rho_min * t / 40.0;

    Ok(ConstantsReport {
        log_tau: tau.log_tau(),
        tau: t,
        rho_min,
        smoothness_l: l,
        pl_floor_mu: mu_floor,
        critic_mu: mu_c,
        critic_sigma_sq: sigma_sq,
        c_lambda: c,
        c_tilde_lambda: c_tilde,
        bias_b,
        predicted_h_floor,
        actor_step_cap,
        critic_step_cap,
        degenerate: !tau.is_active(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{make_synthetic, TabularMdp};
    use crate::policy::{logits_from_policy, random_logits, random_policy};
    use crate::seeded_rng;

    fn single(reward: &[f64], gamma: f64) -> TabularMdp {
        let n_a = reward.len();
        TabularMdp::new(
            1,
            n_a,
            gamma,
            vec![1.0; n_a],
            DMatrix::from_row_slice(1, n_a, reward),
            DVector::from_element(1, 1.0),
        )
        .unwrap()
    }

    #[test]
    fn single_action_kills_entropy() {
        let m = single(&[1.0], 0.9);
        let rv = reg_values(&m, &Policy::uniform(1, 1), 0.7).unwrap();
        assert!((rv.v[0] - 10.0).abs() < 1e-12);
        assert!((rv.q[(0, 0)] - 10.0).abs() < 1e-12);
        assert!(rv.adv[(0, 0)].abs() < 1e-12);
    }

    #[test]
    fn uniform_two_actions_geometric_series() {
        let m = single(&[0.0, 0.0], 0.5);
        let rv = reg_values(&m, &Policy::uniform(1, 2), 1.0).unwrap();
        let oracle: f64 = (0..200).map(|t| 0.5f64.powi(t) * 2f64.ln()).sum();
        assert!((rv.v[0] - oracle).abs() < 1e-12);
        assert!((rv.v[0] - 1.3863).abs() < 1e-4);
        assert!((rv.q[(0, 0)] - 0.5 * oracle).abs() < 1e-12);
        assert!(rv.adv.amax() < 1e-12);
        assert!((reg_objective(&m, &Policy::uniform(1, 2), 1.0).unwrap() - rv.v[0]).abs() < 1e-15);
    }

    #[test]
    fn reg_values_invariants_on_random_mdp() {
        let m = make_synthetic(4, 3, 0.9, 21).unwrap();
        let mut rng = seeded_rng(21);
        let pi = random_policy(&mut rng, 4, 3);
        let lambda = 0.3;
        let rv = reg_values(&m, &pi, lambda).unwrap();
        for s in 0..4 {
            let bell: f64 = (0..3).map(|a| pi.prob(s, a) * (rv.q[(s, a)] - lambda * pi.log_prob(s, a))).sum();
            assert!((bell - rv.v[s]).abs() < 1e-10);
            let mean_adv: f64 = (0..3).map(|a| pi.prob(s, a) * rv.adv[(s, a)]).sum();
            assert!(mean_adv.abs() < 1e-10);
        }
        let bound = (1.0 + lambda * 3f64.ln()) / 0.1;
        assert!(rv.q.amax() <= bound + 1e-9);
    }

    #[test]
    fn decoupled_identical_states() {
        let m = TabularMdp::new(
            2,
            2,
            0.8,
            vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0],
            DMatrix::from_row_slice(2, 2, &[0.2, 0.6, 0.2, 0.6]),
            DVector::from_vec(vec![0.5, 0.5]),
        )
        .unwrap();
        let pi = Policy::uniform(2, 2);
        let rv = reg_values(&m, &pi, 0.1).unwrap();
        assert!((reg_objective(&m, &pi, 0.1).unwrap() - rv.v[0]).abs() < 1e-12);
    }

    #[test]
    fn soft_optimum_closed_form() {
        let m = TabularMdp::from_parts(
            1,
            2,
            1e-12,
            vec![1.0, 1.0],
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            DVector::from_element(1, 1.0),
        )
        .unwrap();
        let opt = optimal_reg_values(&m, 1.0, 1e-12).unwrap();
        let e = std::f64::consts::E;
        assert!((opt.v_star[0] - (e + 1.0).ln()).abs() < 1e-10);
        assert!((opt.pi_star.prob(0, 0) - e / (e + 1.0)).abs() < 1e-10);
        assert!((opt.pi_star.prob(0, 0) - 0.73106).abs() < 1e-5);
    }

    #[test]
    fn soft_optimum_large_lambda_is_uniform() {
        let m = make_synthetic(3, 4, 0.9, 2).unwrap();
        let opt = optimal_reg_values(&m, 100.0, 1e-12).unwrap();
        let dev = opt.pi_star.probs().iter().map(|p| (p - 0.25).abs()).fold(0.0, f64::max);
        // softmax of q*/lambda stays within (exp(spread/lambda) - 1)/|A| of uniform
        let spread = (0..3)
            .map(|s| {
                let row = opt.q_star.row(s);
                row.max() - row.min()
            })
            .fold(0.0, f64::max);
        assert!(dev <= ((spread / 100.0).exp() - 1.0) / 4.0 + 1e-15, "{dev} {spread}");
        assert!(dev < 5e-3, "{dev}");
    }

    #[test]
    fn soft_optimum_is_fixed_point_and_stationary() {
        let m = make_synthetic(4, 3, 0.95, 4).unwrap();
        let tol = 1e-12;
        let opt = optimal_reg_values(&m, 0.2, tol).unwrap();
        for s in 0..4 {
            let sum: f64 = opt.pi_star.row(s).iter().sum();
            assert!((sum - 1.0).abs() < 1e-10);
        }
        let rv = reg_values(&m, &opt.pi_star, 0.2).unwrap();
        assert!((&rv.v - &opt.v_star).amax() <= 10.0 * tol);
        let theta = logits_from_policy(&opt.pi_star).unwrap();
        let g = exact_gradient(&m, &theta, 0.2).unwrap();
        assert!(g.amax() <= 1e-6);
    }

    #[test]
    fn optimal_requires_positive_lambda() {
        let m = make_synthetic(2, 2, 0.9, 0).unwrap();
        assert!(optimal_reg_values(&m, 0.0, 1e-12).is_err());
    }

    #[test]
    fn gradient_vanishes_with_one_action() {
        let m = single(&[0.4], 0.9);
        assert_eq!(exact_gradient(&m, &Logits::zeros(1, 1), 0.1).unwrap()[(0, 0)], 0.0);
    }

    #[test]
    fn pl_coefficient_formula() {
        let m = make_synthetic(2, 2, 0.5, 0).unwrap();
        let c = pl_coefficient(&m, &Logits::zeros(2, 2), 1.0).unwrap();
        assert!((c - 0.015625).abs() < 1e-15);
        let tau = 0.01;
        let theta = logits_from_policy(
            &Policy::from_probs(DMatrix::from_row_slice(2, 2, &[tau, 1.0 - tau, 0.5, 0.5])).unwrap(),
        )
        .unwrap();
        let at_tau = pl_coefficient(&m, &theta, 1.0).unwrap();
        assert!((at_tau - pl_floor(&m, 1.0, tau)).abs() < 1e-18);
        let mut prev = f64::INFINITY;
        for gap in [0.0, 1.0, 2.0, 4.0, 8.0] {
            let th = Logits::new(DMatrix::from_row_slice(2, 2, &[gap, 0.0, 0.0, 0.0])).unwrap();
            let c = pl_coefficient(&m, &th, 1.0).unwrap();
            assert!(c <= prev);
            prev = c;
        }
    }

    #[test]
    fn smoothness_examples() {
        assert_eq!(smoothness_l(0.0, 0.0, 4), 8.0);
        let l = smoothness_l(0.05, 0.99, 4);
        let oracle = (8.0 + 0.05 * (4.0 + 8.0 * 4f64.ln())) / 0.01f64.powi(3);
        assert!((l / oracle - 1.0).abs() < 1e-12);
        assert!((l / 8.7545e6 - 1.0).abs() < 1e-4);
        assert!(smoothness_l(0.1, 0.9, 4) > smoothness_l(0.05, 0.9, 4));
        assert!(smoothness_l(0.1, 0.95, 4) > smoothness_l(0.1, 0.9, 4));
    }

    #[test]
    fn soft_pdl_identity_and_antisymmetry() {
        let m = make_synthetic(3, 2, 0.9, 3).unwrap();
        let mut rng = seeded_rng(3);
        let p1 = random_policy(&mut rng, 3, 2);
        let p2 = random_policy(&mut rng, 3, 2);
        let (l, r) = soft_pdl_sides(&m, &p1, &p2, 0.5, 1).unwrap();
        assert!((l - r).abs() <= 1e-8);
        let (l2, r2) = soft_pdl_sides(&m, &p2, &p1, 0.5, 1).unwrap();
        assert!((l2 + l).abs() < 1e-12);
        assert!((l2 - r2).abs() <= 1e-8);
        let (l0, r0) = soft_pdl_sides(&m, &p1, &p1, 0.5, 0).unwrap();
        assert_eq!(l0, 0.0);
        assert!(r0.abs() < 1e-15);
    }

    #[test]
    fn constants_examples() {
        assert_eq!(critic_sigma_sq(0.0, 0.0, 4), 36.0);
        let tau = Tau::from_log(-87.28);
        let mu = critic_mu(0.5, 0.5, tau.tau());
        assert!((mu / (6.25e-2 * tau.tau()) - 1.0).abs() < 1e-12);

        let m = make_synthetic(3, 2, 0.9, 0).unwrap();
        let q0 = DMatrix::zeros(3, 2);
        let off = constants_report(&m, 0.05, &Tau::disabled(), 0.1, 0.05, &q0).unwrap();
        assert!(off.degenerate);
        assert!(off.c_lambda.is_infinite());
        assert!(off.c_tilde_lambda.is_infinite());
        assert!(off.critic_sigma_sq.is_finite());

        let on = constants_report(&m, 0.05, &Tau::fixed(1e-3).unwrap(), 0.1, 0.05, &q0).unwrap();
        assert!(!on.degenerate);
        for x in [
            on.smoothness_l,
            on.pl_floor_mu,
            on.critic_mu,
            on.critic_sigma_sq,
            on.c_lambda,
            on.c_tilde_lambda,
            on.bias_b,
            on.predicted_h_floor,
            on.actor_step_cap,
            on.critic_step_cap,
        ] {
            assert!(x.is_finite() && x >= 0.0, "{on:?}");
        }
        assert!((on.c_tilde_lambda / on.c_lambda - 6f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn c_lambda_blows_up_as_tau_shrinks() {
        let big = c_lambda(0.1, 0.9, 4, &Tau::fixed(1e-3).unwrap());
        let small = c_lambda(0.1, 0.9, 4, &Tau::fixed(1e-9).unwrap());
        assert!(small > 1e5 * big);
    }

    #[test]
    fn random_logits_helper_shape() {
        let mut rng = seeded_rng(0);
        let th = random_logits(&mut rng, 2, 3, 3.0);
        assert_eq!(th.shape(), (2, 3));
        assert!(th.as_matrix().iter().all(|x| x.abs() <= 3.0));
    }
}
