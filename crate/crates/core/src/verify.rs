//! Numerical checkers for the inequalities and identities the method rests on.
//!
//! Every checker reports a slack (claimed bound minus measured quantity) and
//! passes iff `slack >= -tolerance`. Suites run many randomized instances and
//! report the worst one.

use nalgebra::DMatrix;
use serde::Serialize;
use serde_json::{json, Value};

use crate::error::{EntacError, Result};
use crate::exact::{
    c_tilde_lambda, exact_gradient, optimal_reg_values, pl_coefficient, reg_objective, reg_values,
    soft_pdl_sides, DEFAULT_SOFT_VI_TOL,
};
use crate::mdp::{make_synthetic, occupancy, sample_simplex, TabularMdp};
use crate::numeric::{compensated_sum, frob_sq, kl, kl_from_logs, l1_distance};
use crate::par::Execution;
use crate::policy::{entropy_squared, project_policy, random_logits, softmax_policy, tau_lambda, Logits, Policy, Tau};
use crate::sampling::{
    actor_bias_variance, critic_estimator_second_moment, expected_actor_grad, td_linear_part, td_operator_with,
    ActorDist,
};
use crate::trainer::{actor_step, advantage_from_q};
use crate::{stream_rng, Rng};

/// Default absolute tolerance.
pub const DEFAULT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub slack: f64,
    pub tolerance: f64,
    pub witness: Value,
}

impl CheckResult {
    pub fn new(name: impl Into<String>, slack: f64, tolerance: f64, witness: Value) -> Self {
        CheckResult { name: name.into(), passed: slack >= -tolerance, slack, tolerance, witness }
    }

    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self.passed = self.slack >= -tolerance;
        self
    }
}

/// Folds many results into one carrying the worst slack and its witness.
/// NaN slacks count as the worst case.
pub fn aggregate(name: &str, tolerance: f64, results: Vec<CheckResult>) -> CheckResult {
    let n = results.len();
    let failures = results.iter().filter(|r| !(r.slack >= -tolerance)).count();
    let worst = results.into_iter().min_by(|a, b| {
        let key = |r: &CheckResult| if r.slack.is_nan() { f64::NEG_INFINITY } else { r.slack };
        key(a).total_cmp(&key(b))
    });
    match worst {
        None => CheckResult::new(name, 0.0, tolerance, json!({ "instances": 0 })),
        Some(w) => {
            let mut r = CheckResult::new(
                name,
                w.slack,
                tolerance,
                json!({ "instances": n, "failures": failures, "worst": w.witness }),
            );
            r.passed = failures == 0;
            r
        }
    }
}

fn mat_json(m: &DMatrix<f64>) -> Value {
    json!((0..m.nrows()).map(|i| m.row(i).iter().copied().collect::<Vec<_>>()).collect::<Vec<_>>())
}

/// Central differences of the regularized objective in every logit.
pub fn finite_diff_gradient(mdp: &TabularMdp, theta: &Logits, lambda: f64, h: f64) -> Result<DMatrix<f64>> {
    if !(h > 0.0) {
        return Err(EntacError::invalid("finite-difference step must be positive"));
    }
    let (n_s, n_a) = theta.shape();
    let mut out = DMatrix::zeros(n_s, n_a);
    for s in 0..n_s {
        for a in 0..n_a {
            let up = reg_objective(mdp, &softmax_policy(&theta.bumped(s, a, h)), lambda)?;
            let down = reg_objective(mdp, &softmax_policy(&theta.bumped(s, a, -h)), lambda)?;
            out[(s, a)] = (up - down) / (2.0 * h);
        }
    }
    Ok(out)
}

/// `max |fd - grad| / max |grad|`, against a bound of `bound`.
pub fn check_finite_diff(mdp: &TabularMdp, theta: &Logits, lambda: f64, h: f64, bound: f64) -> Result<CheckResult> {
    let fd = finite_diff_gradient(mdp, theta, lambda, h)?;
    let g = exact_gradient(mdp, theta, lambda)?;
    let err = (&fd - &g).amax();
    let scale = g.amax();
    let rel = if scale > 0.0 { err / scale } else { err };
    Ok(CheckResult::new(
        "finite_diff_gradient",
        bound - rel,
        0.0,
        json!({ "theta": mat_json(theta.as_matrix()), "abs_err": err, "rel_err": rel, "h": h }),
    ))
}

/// `E[g_a]` with the exact advantage against the exact gradient.
pub fn check_unbiased(mdp: &TabularMdp, theta: &Logits, lambda: f64) -> Result<CheckResult> {
    let policy = softmax_policy(theta);
    let adv = reg_values(mdp, &policy, lambda)?.adv;
    let mean = expected_actor_grad(mdp, theta, &adv)?;
    let g = exact_gradient(mdp, theta, lambda)?;
    let err = (mean - g).amax();
    Ok(CheckResult::new("unbiasedness", -err, 1e-12, json!({ "theta": mat_json(theta.as_matrix()), "max_abs_err": err })))
}

/// `E||g_a - grad||^2 <= ||grad||^2 / ((1-gamma) min pi rho_min)` with the
/// exact advantage, both sides by enumeration.
pub fn check_lemma4_variance(mdp: &TabularMdp, theta: &Logits, lambda: f64) -> Result<CheckResult> {
    let rho_min = mdp.rho_min();
    if !(rho_min > 0.0) {
        return Err(EntacError::invalid("variance bound needs rho_min > 0"));
    }
    let policy = softmax_policy(theta);
    let adv = reg_values(mdp, &policy, lambda)?.adv;
    let mo = actor_bias_variance(mdp, theta, &adv, lambda)?;
    let pi_min = policy.min_prob();
    let rhs = mo.grad_norm_sq / ((1.0 - mdp.gamma()) * pi_min * rho_min);
    let lhs = mo.mse_about_gradient;
    Ok(CheckResult::new(
        "actor_variance_bound",
        rhs - lhs,
        1e-10,
        json!({ "theta": mat_json(theta.as_matrix()), "lhs": lhs, "rhs": rhs }),
    ))
}

/// Lojasiewicz inequality against a precomputed optimal objective.
pub fn check_pl_with(mdp: &TabularMdp, theta: &Logits, lambda: f64, j_star: f64) -> Result<CheckResult> {
    let j = reg_objective(mdp, &softmax_policy(theta), lambda)?;
    let g = exact_gradient(mdp, theta, lambda)?;
    let mu = pl_coefficient(mdp, theta, lambda)?;
    let gap = j_star - j;
    let witness = json!({ "theta": mat_json(theta.as_matrix()), "gap": gap, "grad_sq": frob_sq(&g), "mu": mu });
    if gap < -DEFAULT_TOL {
        return Ok(CheckResult::new("lojasiewicz", gap, DEFAULT_TOL, witness));
    }
    Ok(CheckResult::new("lojasiewicz", frob_sq(&g) - mu * gap, DEFAULT_TOL, witness))
}

pub fn check_pl(mdp: &TabularMdp, theta: &Logits, lambda: f64) -> Result<CheckResult> {
    let j_star = optimal_reg_values(mdp, lambda, DEFAULT_SOFT_VI_TOL)?.j_star;
    check_pl_with(mdp, theta, lambda, j_star)
}

/// Largest critic step for which the contraction factor is claimed.
pub fn contraction_step_cap(mdp: &TabularMdp, pi_min: f64) -> f64 {
    (1.0 - mdp.gamma()).powi(2) * mdp.rho_min() * pi_min / 40.0
}

/// `||q~ - Bq||^2 <= (1 - eta_c (1-gamma)^2 rho_min tau + eta_c^2 (1+gamma)^2) ||q~ - q||^2`
/// with `tau` the actual smallest probability of the policy.
pub fn check_contraction(
    mdp: &TabularMdp,
    theta: &Logits,
    q: &DMatrix<f64>,
    lambda: f64,
    eta_c: f64,
) -> Result<CheckResult> {
    let policy = softmax_policy(theta);
    let tau = policy.min_prob();
    let rho_min = mdp.rho_min();
    if !(rho_min > 0.0 && tau > 0.0) {
        return Err(EntacError::invalid("contraction needs rho_min > 0 and min pi > 0"));
    }
    let cap = contraction_step_cap(mdp, tau);
    if !(eta_c >= 0.0) || eta_c > cap * (1.0 + 1e-12) {
        return Err(EntacError::invalid(format!("eta_c {eta_c} outside [0, {cap}]")));
    }
    let gamma = mdp.gamma();
    let d = occupancy(mdp, &policy)?;
    let q_true = reg_values(mdp, &policy, lambda)?.q;
    let bq = td_operator_with(mdp, &policy, d.as_vector(), q, lambda, eta_c);
    let factor = 1.0 - eta_c * (1.0 - gamma).powi(2) * rho_min * tau + eta_c * eta_c * (1.0 + gamma).powi(2);
    let before = frob_sq(&(&q_true - q));
    let after = frob_sq(&(&q_true - bq));
    Ok(CheckResult::new(
        "critic_contraction",
        factor * before - after,
        1e-10,
        json!({ "q": mat_json(q), "eta_c": eta_c, "factor": factor, "before": before, "after": after }),
    ))
}

/// `<D (I - gamma P~) v, v> >= 1/2 (1-gamma)^2 rho_min min pi ||v||^2`.
pub fn check_monotone_operator(mdp: &TabularMdp, theta: &Logits, v: &DMatrix<f64>) -> Result<CheckResult> {
    let rho_min = mdp.rho_min();
    if !(rho_min > 0.0) {
        return Err(EntacError::invalid("monotonicity bound needs rho_min > 0"));
    }
    let policy = softmax_policy(theta);
    let d = occupancy(mdp, &policy)?;
    let mv = td_linear_part(mdp, &policy, d.as_vector(), v);
    let lhs = compensated_sum(mv.iter().zip(v.iter()).map(|(x, y)| x * y));
    let rhs = 0.5 * (1.0 - mdp.gamma()).powi(2) * rho_min * policy.min_prob() * frob_sq(v);
    Ok(CheckResult::new(
        "monotone_operator",
        lhs - rhs,
        1e-10,
        json!({ "theta": mat_json(theta.as_matrix()), "v": mat_json(v), "lhs": lhs, "rhs": rhs }),
    ))
}

/// The projection at the objective-safe threshold does not lower the objective.
/// Errors when that threshold underflows, since the check is then vacuous.
pub fn check_improvement(mdp: &TabularMdp, pi: &Policy, lambda: f64, rng: &mut Rng) -> Result<CheckResult> {
    let tau = tau_lambda(mdp, lambda);
    if !tau.is_active() {
        return Err(EntacError::invalid(format!(
            "threshold underflows (log tau = {}); improvement check skipped",
            tau.log_tau()
        )));
    }
    let projected = project_policy(pi, &tau, rng)?;
    let before = reg_objective(mdp, pi, lambda)?;
    let after = reg_objective(mdp, &projected, lambda)?;
    Ok(CheckResult::new(
        "projection_improvement",
        after - before,
        1e-12,
        json!({ "pi": mat_json(pi.probs()), "log_tau": tau.log_tau(), "before": before, "after": after }),
    ))
}

/// Member of the feasible set `{p : p >= tau}` built from a simplex point.
fn feasible_row(x: &[f64], tau: f64) -> Vec<f64> {
    let free = 1.0 - tau * x.len() as f64;
    x.iter().map(|&xi| tau + free * xi).collect()
}

/// Statewise, no member of the feasible set is closer in L1 than the projection.
/// Trials are random feasible rows, every vertex of the set, and the projection
/// itself.
pub fn check_projection_l1(pi: &Policy, tau: f64, n_trials: usize, rng: &mut Rng) -> Result<CheckResult> {
    let t = Tau::fixed(tau)?;
    let projected = project_policy(pi, &t, rng)?;
    let n_a = pi.n_actions();
    let mut worst = f64::INFINITY;
    let mut witness = Value::Null;
    for s in 0..pi.n_states() {
        let row = pi.row(s);
        let base = l1_distance(&row, &projected.row(s));
        let mut consider = |other: &[f64]| {
            let slack = l1_distance(&row, other) - base;
            if slack < worst {
                worst = slack;
                witness = json!({ "state": s, "row": row, "projected": projected.row(s), "other": other });
            }
        };
        consider(&projected.row(s));
        for v in 0..n_a {
            let vertex: Vec<f64> = (0..n_a).map(|a| if a == v { 1.0 } else { 0.0 }).collect();
            consider(&feasible_row(&vertex, tau));
        }
        for _ in 0..n_trials {
            let x = sample_simplex(rng, n_a);
            consider(&feasible_row(&x, tau));
        }
    }
    Ok(CheckResult::new("projection_l1_optimal", worst, 1e-12, witness))
}

/// Structural properties of the projection: rows stay on the simplex, every
/// entry is at least `tau`, and projecting twice changes nothing.
pub fn check_projection_structure(pi: &Policy, tau: f64, rng: &mut Rng) -> Result<Vec<CheckResult>> {
    let t = Tau::fixed(tau)?;
    let once = project_policy(pi, &t, rng)?;
    let twice = project_policy(&once, &t, rng)?;
    let sum_err = (0..once.n_states())
        .map(|s| (compensated_sum(once.row(s)) - 1.0).abs())
        .fold(0.0, f64::max);
    let min_gap = once.min_prob() - tau;
    let idem = (once.probs() - twice.probs()).amax();
    let w = json!({ "pi": mat_json(pi.probs()), "tau": tau });
    Ok(vec![
        CheckResult::new("projection_simplex", -sum_err, 1e-15, w.clone()),
        CheckResult::new("projection_min", min_gap, 0.0, w.clone()),
        CheckResult::new("projection_idempotent", -idem, 0.0, w),
    ])
}

/// One projected actor step moves the exact Q-function by at most
/// `C~ eta_a |adv_hat(sample)|` in L2.
#[allow(clippy::too_many_arguments)]
pub fn check_q_drift(
    mdp: &TabularMdp,
    theta: &Logits,
    q_hat: &DMatrix<f64>,
    eta_a: f64,
    lambda: f64,
    tau: &Tau,
    rng: &mut Rng,
) -> Result<CheckResult> {
    if !tau.is_active() {
        return Err(EntacError::invalid("Q-drift bound needs an active threshold"));
    }
    let policy = softmax_policy(theta);
    if policy.min_prob() < tau.tau() * (1.0 - 1e-12) {
        return Err(EntacError::invalid("policy must already respect the threshold"));
    }
    let d = occupancy(mdp, &policy)?;
    let sample = ActorDist::from_parts(d.as_vector(), &policy).sample(rng);
    let critic = advantage_from_q(q_hat, &policy, lambda)?;
    let next = actor_step(theta, sample, &critic, eta_a, mdp.gamma(), tau, rng)?;
    let q0 = reg_values(mdp, &policy, lambda)?.q;
    let q1 = reg_values(mdp, &softmax_policy(&next), lambda)?.q;
    let lhs = frob_sq(&(q1 - q0)).sqrt();
    let c = c_tilde_lambda(lambda, mdp.gamma(), mdp.n_states(), mdp.n_actions(), tau);
    let rhs = c * eta_a * critic.adv_hat[sample].abs();
    Ok(CheckResult::new(
        "q_drift",
        rhs - lhs,
        DEFAULT_TOL,
        json!({ "theta": mat_json(theta.as_matrix()), "sample": [sample.0, sample.1], "lhs": lhs, "rhs": rhs }),
    ))
}

/// Soft performance-difference identity at state `s`; slack is `-|lhs - rhs|`.
pub fn check_soft_pdl(mdp: &TabularMdp, pi1: &Policy, pi2: &Policy, lambda: f64, s: usize) -> Result<CheckResult> {
    let (lhs, rhs) = soft_pdl_sides(mdp, pi1, pi2, lambda, s)?;
    Ok(CheckResult::new("soft_pdl", -(lhs - rhs).abs(), 1e-8, json!({ "state": s, "lhs": lhs, "rhs": rhs })))
}

/// Random simplex point of size `n`, sometimes sharpened to sit near a vertex.
fn spiky_simplex(rng: &mut Rng, n: usize) -> Vec<f64> {
    use rand::Rng as _;
    let x = sample_simplex(rng, n);
    if rng.random_bool(0.5) {
        return x;
    }
    let power = rng.random_range(1.0..8.0);
    let y: Vec<f64> = x.iter().map(|v| v.powf(power)).collect();
    let total: f64 = y.iter().sum();
    let y: Vec<f64> = y.iter().map(|v| (v / total).max(1e-300)).collect();
    let total: f64 = y.iter().sum();
    y.iter().map(|v| v / total).collect()
}

/// Pinsker, the L1 upper bound on KL, the logit bound on KL, the
/// `p log^2 p` bound and the sup-norm bound on regularized Q-functions, each
/// on `n` random instances.
pub fn check_aux_inequalities_n(seed: u64, n: usize) -> Result<Vec<CheckResult>> {
    use rand::Rng as _;
    let tol = 1e-12;
    let mut rng = stream_rng(seed, 0);
    let mut pinsker = Vec::with_capacity(n);
    let mut kl_upper = Vec::with_capacity(n);
    let mut kl_logit = Vec::with_capacity(n);
    let mut ent_sq = Vec::with_capacity(n);
    for _ in 0..n {
        let dim = rng.random_range(2..=8);
        let p = spiky_simplex(&mut rng, dim);
        let q = spiky_simplex(&mut rng, dim);
        let div = kl(&p, &q);
        let l1 = l1_distance(&p, &q);
        let w = json!({ "p": p, "q": q });
        pinsker.push(CheckResult::new("pinsker", (0.5 * div).sqrt() - 0.5 * l1, tol, w.clone()));
        let q_min = q.iter().copied().fold(f64::INFINITY, f64::min);
        kl_upper.push(CheckResult::new("kl_upper_bound", l1 / q_min - div, tol, w.clone()));
        ent_sq.push(CheckResult::new(
            "entropy_squared",
            1.0 + (dim as f64).ln().powi(2) - entropy_squared(&p),
            tol,
            json!({ "p": p }),
        ));

        let theta: Vec<f64> = (0..dim).map(|_| rng.random_range(-5.0..5.0)).collect();
        let theta2: Vec<f64> = (0..dim).map(|_| rng.random_range(-5.0..5.0)).collect();
        let log_softmax = |t: &[f64]| {
            let lse = crate::numeric::log_sum_exp(t);
            t.iter().map(|x| x - lse).collect::<Vec<_>>()
        };
        let (l1p, l2p) = (log_softmax(&theta), log_softmax(&theta2));
        let p1: Vec<f64> = l1p.iter().map(|x| x.exp()).collect();
        let div = kl_from_logs(&p1, &l1p, &l2p);
        let diff: Vec<f64> = theta.iter().zip(&theta2).map(|(a, b)| a - b).collect();
        let (lo, hi) = diff.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &x| (l.min(x), h.max(x)));
        let c = 0.5 * (lo + hi);
        let sup = diff.iter().map(|x| (x - c).abs()).fold(0.0, f64::max);
        kl_logit.push(CheckResult::new(
            "kl_logit",
            0.5 * sup * sup - div,
            tol,
            json!({ "theta": theta, "theta_prime": theta2, "c": c }),
        ));
    }

    let q_bound: Vec<CheckResult> = (0..n)
        .map(|i| -> Result<CheckResult> {
            let mut r = stream_rng(seed, 1 + i as u64);
            let n_s = r.random_range(1..=4);
            let n_a = r.random_range(1..=4);
            let gamma = r.random_range(0.01..0.99);
            let lambda = r.random_range(0.0..2.0);
            let mdp = make_synthetic(n_s, n_a, gamma, r.random())?;
            let scale = r.random_range(0.0..10.0);
            let policy = softmax_policy(&random_logits(&mut r, n_s, n_a, scale));
            let q = reg_values(&mdp, &policy, lambda)?.q;
            let bound = (1.0 + lambda * (n_a as f64).ln()) / (1.0 - gamma);
            Ok(CheckResult::new(
                "q_value_bound",
                bound - q.amax(),
                tol,
                json!({ "instance": i, "gamma": gamma, "lambda": lambda, "q_inf": q.amax(), "bound": bound }),
            ))
        })
        .collect::<Result<_>>()?;

    Ok(vec![
        aggregate("pinsker", tol, pinsker),
        aggregate("kl_upper_bound", tol, kl_upper),
        aggregate("kl_logit", tol, kl_logit),
        aggregate("entropy_squared", tol, ent_sq),
        aggregate("q_value_bound", tol, q_bound),
    ])
}

pub fn check_aux_inequalities(seed: u64) -> Result<Vec<CheckResult>> {
    check_aux_inequalities_n(seed, 10_000)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Gradients,
    Variance,
    Contraction,
    Projection,
    Aux,
    All,
}

impl std::str::FromStr for Suite {
    type Err = EntacError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gradients" => Ok(Suite::Gradients),
            "variance" => Ok(Suite::Variance),
            "contraction" => Ok(Suite::Contraction),
            "projection" => Ok(Suite::Projection),
            "aux" => Ok(Suite::Aux),
            "all" => Ok(Suite::All),
            other => Err(EntacError::invalid(format!("unknown suite `{other}`"))),
        }
    }
}

/// Runs `n` seeded instances through `exec` and folds them into one result.
fn batch<F>(name: &str, tol: f64, n: usize, seed: u64, exec: Execution, f: F) -> Result<CheckResult>
where
    F: Fn(&mut Rng, usize) -> Result<CheckResult> + Sync + Send,
{
    let results = exec.map_range(n, |i| {
        let mut rng = stream_rng(seed, i as u64);
        f(&mut rng, i)
    });
    let results = results.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(aggregate(name, tol, results))
}

fn random_matrix(rng: &mut Rng, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    random_logits(rng, rows, cols, scale).into_matrix()
}

/// Randomized instances of the gradient claims: finite differences,
/// unbiasedness of the sampled actor gradient, the Lojasiewicz inequality and
/// the soft performance-difference identity.
pub fn gradients_suite(seed: u64, exec: Execution) -> Result<Vec<CheckResult>> {
    let fd = batch("finite_diff_gradient", 0.0, 10, seed, exec, |rng, _| {
        use rand::Rng as _;
        let mdp = make_synthetic(5, 3, 0.9, rng.random())?;
        let theta = random_logits(rng, 5, 3, 1.0);
        check_finite_diff(&mdp, &theta, 0.1, 1e-5, 1e-5)
    })?;
    let unbiased = batch("unbiasedness", 1e-12, 20, seed ^ 1, exec, |rng, _| {
        use rand::Rng as _;
        let mdp = make_synthetic(4, 3, 0.9, rng.random())?;
        let theta = random_logits(rng, 4, 3, 2.0);
        check_unbiased(&mdp, &theta, 0.1)
    })?;
    let pl_mdp = make_synthetic(3, 2, 0.9, seed)?;
    let j_star = optimal_reg_values(&pl_mdp, 0.1, DEFAULT_SOFT_VI_TOL)?.j_star;
    let pl = batch("lojasiewicz", DEFAULT_TOL, 1000, seed ^ 2, exec, |rng, _| {
        check_pl_with(&pl_mdp, &random_logits(rng, 3, 2, 3.0), 0.1, j_star)
    })?;
    let pdl = batch("soft_pdl", 1e-8, 50, seed ^ 3, exec, |rng, _| {
        use rand::Rng as _;
        let mdp = make_synthetic(3, 2, 0.9, rng.random())?;
        let p1 = softmax_policy(&random_logits(rng, 3, 2, 2.0));
        let p2 = softmax_policy(&random_logits(rng, 3, 2, 2.0));
        let s = rng.random_range(0..3);
        check_soft_pdl(&mdp, &p1, &p2, 0.3, s)
    })?;
    Ok(vec![fd, unbiased, pl, pdl])
}

/// Actor variance bound and critic second-moment bound.
pub fn variance_suite(seed: u64, exec: Execution) -> Result<Vec<CheckResult>> {
    let mdp = make_synthetic(3, 2, 0.9, seed)?;
    let lemma4 = batch("actor_variance_bound", 1e-10, 100, seed ^ 4, exec, |rng, _| {
        check_lemma4_variance(&mdp, &random_logits(rng, 3, 2, 3.0), 0.1)
    })?;
    let critic = batch("critic_second_moment", DEFAULT_TOL, 100, seed ^ 5, exec, |rng, _| {
        let theta = random_logits(rng, 3, 2, 3.0);
        let q = random_matrix(rng, 3, 2, 10.0);
        let (var, bound) = critic_estimator_second_moment(&mdp, &theta, &q, 0.5)?;
        Ok(CheckResult::new(
            "critic_second_moment",
            bound - var,
            DEFAULT_TOL,
            json!({ "theta": mat_json(theta.as_matrix()), "q": mat_json(&q), "variance": var, "bound": bound }),
        ))
    })?;
    Ok(vec![lemma4, critic])
}

/// Critic contraction, the monotone-operator bound and the Q-drift bound.
pub fn contraction_suite(seed: u64, exec: Execution) -> Result<Vec<CheckResult>> {
    let mdp = make_synthetic(3, 2, 0.9, seed)?;
    let uniform = Logits::zeros(3, 2);
    let eta_c = contraction_step_cap(&mdp, 0.5);
    let contraction = batch("critic_contraction", 1e-10, 100, seed ^ 6, exec, |rng, _| {
        check_contraction(&mdp, &uniform, &random_matrix(rng, 3, 2, 10.0), 0.1, eta_c)
    })?;
    let monotone = batch("monotone_operator", 1e-10, 200, seed ^ 7, exec, |rng, _| {
        let theta = random_logits(rng, 3, 2, 3.0);
        check_monotone_operator(&mdp, &theta, &random_matrix(rng, 3, 2, 5.0))
    })?;
    let small = make_synthetic(2, 2, 0.5, seed)?;
    let tau = tau_lambda(&small, 2.0);
    let drift = batch("q_drift", DEFAULT_TOL, 100, seed ^ 8, exec, |rng, _| {
        let theta = random_logits(rng, 2, 2, 2.0);
        let q = reg_values(&small, &softmax_policy(&theta), 2.0)?.q + random_matrix(rng, 2, 2, 0.5);
        check_q_drift(&small, &theta, &q, 0.1, 2.0, &tau, rng)
    })?;
    Ok(vec![contraction, monotone, drift])
}

/// Rows used by the projection suite, with `tau = 0.01`.
pub fn projection_test_rows() -> Vec<Vec<f64>> {
    vec![
        vec![0.004, 0.006, 0.99],
        vec![0.3, 0.3, 0.4],
        vec![0.001, 0.499, 0.499, 0.001],
        vec![1e-40, 1.0 - 1e-40],
        vec![0.01, 0.2, 0.79],
        vec![0.0001, 0.0002, 0.0003, 0.9994],
    ]
}

/// Projection structure and L1-optimality on fixed rows, and the improvement
/// property on adversarial near-deterministic policies.
pub fn projection_suite(seed: u64, exec: Execution) -> Result<Vec<CheckResult>> {
    let tau = 0.01;
    let rows = projection_test_rows();
    let mut structural: Vec<Vec<CheckResult>> = vec![Vec::new(); 3];
    let mut l1 = Vec::new();
    for (i, row) in rows.iter().enumerate() {
        let pi = Policy::from_probs(DMatrix::from_row_slice(1, row.len(), row))?;
        let mut rng = stream_rng(seed ^ 9, i as u64);
        for (slot, r) in structural.iter_mut().zip(check_projection_structure(&pi, tau, &mut rng)?) {
            slot.push(r);
        }
        l1.push(check_projection_l1(&pi, tau, 1000, &mut rng)?);
    }
    let mut out: Vec<CheckResult> = structural
        .into_iter()
        .map(|rs| {
            let name = rs[0].name.clone();
            let tol = rs[0].tolerance;
            aggregate(&name, tol, rs)
        })
        .collect();
    out.push(aggregate("projection_l1_optimal", 1e-12, l1));

    let mdp = make_synthetic(2, 2, 0.5, seed)?;
    out.push(batch("projection_improvement", 1e-12, 100, seed ^ 10, exec, |rng, _| {
        let pi = adversarial_policy(rng, 2, 2);
        check_improvement(&mdp, &pi, 2.0, rng)
    })?);
    Ok(out)
}

/// Near-deterministic policy whose small entries range down to `1e-40`.
pub fn adversarial_policy(rng: &mut Rng, n_states: usize, n_actions: usize) -> Policy {
    use rand::Rng as _;
    let mut probs = DMatrix::zeros(n_states, n_actions);
    for s in 0..n_states {
        let big = rng.random_range(0..n_actions);
        let mut rest = 0.0;
        for a in 0..n_actions {
            if a != big {
                let p = 10f64.powf(-rng.random_range(1.0..=40.0));
                probs[(s, a)] = p;
                rest += p;
            }
        }
        probs[(s, big)] = 1.0 - rest;
    }
    Policy::from_probs(probs).expect("rows are valid by construction")
}

/// Runs the named suite(s). Default seeds are deterministic.
pub fn run_suite(suite: Suite, seed: u64, exec: Execution) -> Result<Vec<CheckResult>> {
    match suite {
        Suite::Gradients => gradients_suite(seed, exec),
        Suite::Variance => variance_suite(seed, exec),
        Suite::Contraction => contraction_suite(seed, exec),
        Suite::Projection => projection_suite(seed, exec),
        Suite::Aux => check_aux_inequalities(seed),
        Suite::All => {
            let mut out = Vec::new();
            for s in [Suite::Gradients, Suite::Variance, Suite::Contraction, Suite::Projection, Suite::Aux] {
                out.extend(run_suite(s, seed, exec)?);
            }
            Ok(out)
        }
    }
}
