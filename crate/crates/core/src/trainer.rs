//! The actor-critic loop.
//!
//! Each outer iteration `k` runs the critic phase for `theta_k` (either `H`
//! regularized TD steps warm-started from the previous critic, or the exact
//! Q-function), builds values and advantages from the critic, then takes one
//! sampled, projected actor step. Records are taken after the critic phase,
//! so `critic_mse` at `k` measures the critic the actor step at `k` uses.

use std::fmt::Write as _;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{EntacError, Result};
use crate::exact::{constants_report, gradient_from_parts, optimal_reg_values, reg_values, ConstantsReport, DEFAULT_SOFT_VI_TOL};
use crate::mdp::{occupancy, TabularMdp};
use crate::numeric::{compensated_sum, frob_sq};
use crate::policy::{project_logits, softmax_policy, tau_lambda, Logits, Policy, Tau};
use crate::sampling::{actor_grad_estimate, td_update, ActorDist, CriticDist, RolloutSampler};
use crate::{seeded_rng, Rng};

fn default_eval_every() -> usize {
    10
}

/// How the projection threshold is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TauMode {
    /// The threshold under which projecting never lowers the objective.
    #[default]
    Auto,
    Fixed(f64),
    Disabled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CriticMode {
    #[default]
    Learned,
    /// The critic is replaced by the exact regularized Q-function.
    ExactOracle,
}

/// How actor and critic samples are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerKind {
    /// Directly from the enumerated occupancy-weighted distributions.
    #[default]
    Occupancy,
    /// By simulating the chain with geometric stopping.
    Rollout,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QInit {
    #[default]
    Zeros,
    /// Row-major `[state][action]`.
    Matrix(Vec<Vec<f64>>),
}

impl QInit {
    pub fn to_matrix(&self, n_states: usize, n_actions: usize) -> Result<DMatrix<f64>> {
        match self {
            QInit::Zeros => Ok(DMatrix::zeros(n_states, n_actions)),
            QInit::Matrix(rows) => {
                if rows.len() != n_states || rows.iter().any(|r| r.len() != n_actions) {
                    return Err(EntacError::shape(format!("q_init must be {n_states}x{n_actions}")));
                }
                Ok(DMatrix::from_fn(n_states, n_actions, |s, a| rows[s][a]))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub eta_a: f64,
    pub eta_c: f64,
    #[serde(rename = "H")]
    pub h: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub lambda: f64,
    #[serde(default)]
    pub tau_mode: TauMode,
    #[serde(default)]
    pub critic_mode: CriticMode,
    pub seed: u64,
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    #[serde(default)]
    pub q_init: QInit,
    #[serde(default)]
    pub sampler: SamplerKind,
    /// Replace the sampled actor gradient with the exact one (debugging aid).
    #[serde(default)]
    pub full_gradient: bool,
}

impl TrainConfig {
    pub fn new(eta_a: f64, eta_c: f64, h: usize, k: usize, lambda: f64, seed: u64) -> Self {
        TrainConfig {
            eta_a,
            eta_c,
            h,
            k,
            lambda,
            tau_mode: TauMode::Auto,
            critic_mode: CriticMode::Learned,
            seed,
            eval_every: default_eval_every(),
            q_init: QInit::Zeros,
            sampler: SamplerKind::Occupancy,
            full_gradient: false,
        }
    }

    /// Checks value ranges. Errors name the offending key.
    pub fn validate(&self) -> Result<()> {
        let bad = |path: &str, message: String| Err(EntacError::Config { path: path.into(), message });
        if !(self.eta_a > 0.0 && self.eta_a.is_finite()) {
            return bad("eta_a", format!("must be positive, got {}", self.eta_a));
        }
        if !(self.eta_c > 0.0 && self.eta_c.is_finite()) {
            return bad("eta_c", format!("must be positive, got {}", self.eta_c));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return bad("lambda", format!("must be positive, got {}", self.lambda));
        }
        if self.h == 0 {
            return bad("H", "must be at least 1".into());
        }
        if self.eval_every == 0 {
            return bad("eval_every", "must be at least 1".into());
        }
        if let TauMode::Fixed(t) = self.tau_mode {
            if !(t > 0.0 && t.is_finite()) {
                return bad("tau_mode.fixed", format!("must be positive, got {t}"));
            }
        }
        if let QInit::Matrix(rows) = &self.q_init {
            if rows.iter().flatten().any(|x| !x.is_finite()) {
                return bad("q_init", "entries must be finite".into());
            }
        }
        Ok(())
    }

    pub fn tau(&self, mdp: &TabularMdp) -> Result<Tau> {
        match self.tau_mode {
            TauMode::Auto => Ok(tau_lambda(mdp, self.lambda)),
            TauMode::Fixed(t) => Tau::fixed(t),
            TauMode::Disabled => Ok(Tau::disabled()),
        }
    }
}

/// Critic output turned into soft values and advantages.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticState {
    pub q_hat: DMatrix<f64>,
    pub v_hat: DVector<f64>,
    pub adv_hat: DMatrix<f64>,
}

/// `v(s) = sum_a pi(a|s) (q(s,a) - lambda log pi(a|s))` and
/// `adv(s,a) = q(s,a) - lambda log pi(a|s) - v(s)`.
pub fn advantage_from_q(q_hat: &DMatrix<f64>, policy: &Policy, lambda: f64) -> Result<CriticState> {
    if q_hat.shape() != (policy.n_states(), policy.n_actions()) {
        return Err(EntacError::shape("q_hat shape does not match the policy"));
    }
    let v_hat = DVector::from_fn(policy.n_states(), |s, _| {
        compensated_sum(
            (0..policy.n_actions()).map(|a| policy.prob(s, a) * (q_hat[(s, a)] - lambda * policy.log_prob(s, a))),
        )
    });
    let adv_hat = DMatrix::from_fn(policy.n_states(), policy.n_actions(), |s, a| {
        q_hat[(s, a)] - lambda * policy.log_prob(s, a) - v_hat[s]
    });
    Ok(CriticState { q_hat: q_hat.clone(), v_hat, adv_hat })
}

/// `H` sequential regularized TD steps on i.i.d. samples from the critic
/// distribution of `theta`, warm-started at `q_init`.
pub fn critic_inner_loop(
    mdp: &TabularMdp,
    theta: &Logits,
    q_init: &DMatrix<f64>,
    h: usize,
    eta_c: f64,
    lambda: f64,
    rng: &mut Rng,
) -> Result<DMatrix<f64>> {
    let policy = softmax_policy(theta);
    let d = occupancy(mdp, &policy)?;
    let dist = CriticDist::new(mdp, policy, d.as_vector());
    Ok(td_steps(mdp, &dist, None, q_init.clone(), h, eta_c, lambda, rng))
}

#[allow(clippy::too_many_arguments)]
fn td_steps(
    mdp: &TabularMdp,
    dist: &CriticDist<'_>,
    rollout: Option<&RolloutSampler<'_>>,
    mut q: DMatrix<f64>,
    h: usize,
    eta_c: f64,
    lambda: f64,
    rng: &mut Rng,
) -> DMatrix<f64> {
    for _ in 0..h {
        let x = match rollout {
            Some(r) => r.sample_critic(rng),
            None => dist.sample(rng),
        };
        td_update(x, dist.policy(), &q, lambda, mdp).apply(&mut q, eta_c);
    }
    q
}

/// One sampled actor step followed by the projection.
pub fn actor_step(
    theta: &Logits,
    sample: (usize, usize),
    critic: &CriticState,
    eta_a: f64,
    gamma: f64,
    tau: &Tau,
    rng: &mut Rng,
) -> Result<Logits> {
    let mut next = theta.as_matrix().clone();
    actor_grad_estimate(sample, &critic.adv_hat, gamma).apply(&mut next, eta_a);
    project_logits(&Logits::new(next)?, tau, rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Record {
    pub k: usize,
    pub objective: f64,
    pub subopt: f64,
    pub grad_norm: f64,
    pub critic_mse: f64,
    pub policy_min: f64,
    /// Seconds since the start of the run. Not part of the CSV.
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunTrace {
    pub config: TrainConfig,
    #[serde(rename = "J_star")]
    pub j_star: f64,
    pub constants: ConstantsReport,
    pub records: Vec<Record>,
    pub runtime_seconds: f64,
}

pub const CSV_HEADER: &str = "k,objective,subopt,grad_norm,critic_mse,policy_min";

/// Formats with 17 significant digits.
pub fn fmt_num(x: f64) -> String {
    format!("{x:.16e}")
}

impl RunTrace {
    pub fn final_record(&self) -> &Record {
        self.records.last().expect("a trace always has the initial record")
    }

    /// Deterministic CSV; wall times are left out.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 * (self.records.len() + 1));
        out.push_str(CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.k,
                fmt_num(r.objective),
                fmt_num(r.subopt),
                fmt_num(r.grad_norm),
                fmt_num(r.critic_mse),
                fmt_num(r.policy_min)
            );
        }
        out
    }

    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "config": self.config,
            "J_star": self.j_star,
            "constants": self.constants,
            "final": self.final_record(),
            "runtime_seconds": self.runtime_seconds,
        })
    }
}

/// Runs the full loop for `config.k` actor steps.
pub fn run_ent_ac(mdp: &TabularMdp, config: &TrainConfig) -> Result<RunTrace> {
    config.validate()?;
    mdp.ensure_valid()?;
    let start = Instant::now();
    let (n_s, n_a) = (mdp.n_states(), mdp.n_actions());
    let lambda = config.lambda;
    let gamma = mdp.gamma();
    let tau = config.tau(mdp)?;
    let q_init = config.q_init.to_matrix(n_s, n_a)?;
    let constants = constants_report(mdp, lambda, &tau, config.eta_a, config.eta_c, &q_init)?;
    let j_star = optimal_reg_values(mdp, lambda, DEFAULT_SOFT_VI_TOL)?.j_star;

    let mut rng = seeded_rng(config.seed);
    let mut theta = Logits::zeros(n_s, n_a);
    let mut q_hat = q_init;
    let mut records = Vec::new();

    for k in 0..=config.k {
        let policy = softmax_policy(&theta);
        let d = occupancy(mdp, &policy)?;
        let needs_exact = config.critic_mode == CriticMode::ExactOracle
            || config.full_gradient
            || k % config.eval_every == 0
            || k == config.k;
        let exact = if needs_exact { Some(reg_values(mdp, &policy, lambda)?) } else { None };

        let rollout = (config.sampler == SamplerKind::Rollout).then(|| RolloutSampler::new(mdp, &policy));
        let actor = ActorDist::from_parts(d.as_vector(), &policy);
        q_hat = match config.critic_mode {
            CriticMode::ExactOracle => exact.as_ref().expect("computed above").q.clone(),
            CriticMode::Learned => {
                let dist = CriticDist::new(mdp, policy.clone(), d.as_vector());
                td_steps(mdp, &dist, rollout.as_ref(), q_hat, config.h, config.eta_c, lambda, &mut rng)
            }
        };
        if q_hat.iter().any(|x| !x.is_finite()) {
            return Err(EntacError::NonFinite { k, detail: "critic estimate diverged".into() });
        }

        if k % config.eval_every == 0 || k == config.k {
            let rv = exact.as_ref().expect("computed above");
            let objective = compensated_sum(mdp.init_dist().iter().zip(rv.v.iter()).map(|(r, v)| r * v));
            let grad = gradient_from_parts(mdp, &policy, d.as_vector(), &rv.adv);
            records.push(Record {
                k,
                objective,
                subopt: j_star - objective,
                grad_norm: frob_sq(&grad).sqrt(),
                critic_mse: frob_sq(&(&q_hat - &rv.q)),
                policy_min: policy.min_prob(),
                wall_seconds: start.elapsed().as_secs_f64(),
            });
        }
        if k == config.k {
            break;
        }

        let mut stepped = theta.as_matrix().clone();
        if config.full_gradient {
            let rv = exact.as_ref().expect("computed above");
            stepped += gradient_from_parts(mdp, &policy, d.as_vector(), &rv.adv) * config.eta_a;
        } else {
            let critic = advantage_from_q(&q_hat, &policy, lambda)?;
            let sample = match &rollout {
                Some(r) => r.sample_actor(&mut rng),
                None => actor.sample(&mut rng),
            };
            actor_grad_estimate(sample, &critic.adv_hat, gamma).apply(&mut stepped, config.eta_a);
        }
        if stepped.iter().any(|x| !x.is_finite()) {
            return Err(EntacError::NonFinite {
                k,
                detail: format!("actor step produced non-finite logits; last record {:?}", records.last()),
            });
        }
        theta = project_logits(&Logits::new(stepped)?, &tau, &mut rng)?;
    }

    Ok(RunTrace {
        config: config.clone(),
        j_star,
        constants,
        records,
        runtime_seconds: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{make_gridworld, make_synthetic, InitMode};
    use crate::policy::random_logits;

    #[test]
    fn advantage_examples() {
        let q = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let c = advantage_from_q(&q, &Policy::uniform(1, 2), 0.0).unwrap();
        assert!((c.v_hat[0] - 0.5).abs() < 1e-15);
        assert!((c.adv_hat[(0, 0)] - 0.5).abs() < 1e-15);
        assert!((c.adv_hat[(0, 1)] + 0.5).abs() < 1e-15);

        let m = make_synthetic(3, 2, 0.9, 1).unwrap();
        let theta = random_logits(&mut seeded_rng(1), 3, 2, 2.0);
        let policy = softmax_policy(&theta);
        let rv = reg_values(&m, &policy, 0.3).unwrap();
        let c = advantage_from_q(&rv.q, &policy, 0.3).unwrap();
        assert!((&c.adv_hat - &rv.adv).amax() < 1e-12);
        for s in 0..3 {
            let mean: f64 = (0..2).map(|a| policy.prob(s, a) * c.adv_hat[(s, a)]).sum();
            assert!(mean.abs() < 1e-12);
        }
        let shifted = advantage_from_q(&rv.q.add_scalar(2.5), &policy, 0.3).unwrap();
        assert!((&shifted.v_hat - c.v_hat.add_scalar(2.5)).amax() < 1e-12);
        assert!((&shifted.adv_hat - &c.adv_hat).amax() < 1e-12);
    }

    #[test]
    fn critic_loop_edge_cases() {
        let m = make_synthetic(3, 2, 0.9, 2).unwrap();
        let theta = Logits::zeros(3, 2);
        let q0 = DMatrix::from_fn(3, 2, |s, a| (s + a) as f64);
        let mut rng = seeded_rng(0);
        assert_eq!(critic_inner_loop(&m, &theta, &q0, 50, 0.0, 0.1, &mut rng).unwrap(), q0);

        // Starting at the fixed point, each step moves one entry by at most eta_c |delta|.
        let q_true = reg_values(&m, &Policy::uniform(3, 2), 0.1).unwrap().q;
        let one = critic_inner_loop(&m, &theta, &q_true, 1, 0.05, 0.1, &mut rng).unwrap();
        let max_delta = 1.0 + 0.9 * (q_true.amax() + 0.1 * 2f64.ln()) + q_true.amax();
        assert!((&one - &q_true).amax() <= 0.05 * max_delta);
    }

    #[test]
    fn actor_step_cases() {
        let theta = Logits::new(DMatrix::from_row_slice(2, 2, &[0.3, -0.1, 0.0, 0.2])).unwrap();
        let zero = CriticState { q_hat: DMatrix::zeros(2, 2), v_hat: DVector::zeros(2), adv_hat: DMatrix::zeros(2, 2) };
        let mut rng = seeded_rng(0);
        let tau = Tau::fixed(0.01).unwrap();
        assert_eq!(actor_step(&theta, (0, 1), &zero, 0.5, 0.9, &tau, &mut rng).unwrap(), theta);

        let critic = CriticState { adv_hat: DMatrix::from_element(2, 2, 0.7), ..zero };
        let next = actor_step(&theta, (1, 0), &critic, 0.5, 0.9, &Tau::disabled(), &mut rng).unwrap();
        let diff = next.as_matrix() - theta.as_matrix();
        assert_eq!(diff.iter().filter(|x| **x != 0.0).count(), 1);
        assert!((diff[(1, 0)] - 0.5 * 0.7 / 0.1).abs() < 1e-12);

        let big = CriticState { adv_hat: DMatrix::from_element(2, 2, 50.0), ..critic };
        let proj = actor_step(&theta, (0, 0), &big, 1.0, 0.9, &tau, &mut rng).unwrap();
        assert!(softmax_policy(&proj).min_prob() >= 0.01 - 1e-15);
    }

    #[test]
    fn zero_iterations_give_initial_record() {
        let g = make_gridworld(2, 2, 0.99, InitMode::Uniform).unwrap();
        let trace = run_ent_ac(&g, &TrainConfig::new(0.1, 0.05, 8, 0, 0.05, 3)).unwrap();
        assert_eq!(trace.records.len(), 1);
        assert_eq!(trace.records[0].k, 0);
        assert!((trace.records[0].policy_min - 0.25).abs() < 1e-15);
    }

    #[test]
    fn trace_invariants_and_determinism() {
        let m = make_synthetic(3, 2, 0.9, 5).unwrap();
        let mut cfg = TrainConfig::new(0.05, 0.1, 8, 200, 0.2, 11);
        cfg.tau_mode = TauMode::Fixed(0.02);
        let a = run_ent_ac(&m, &cfg).unwrap();
        let b = run_ent_ac(&m, &cfg).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        assert_eq!(a.records.len(), 21);
        assert!(a.records.windows(2).all(|w| w[0].k < w[1].k));
        for r in &a.records {
            assert!(r.subopt >= -1e-8);
            assert!(r.policy_min >= 0.02 - 1e-15);
        }
        cfg.seed = 12;
        assert_ne!(run_ent_ac(&m, &cfg).unwrap().to_csv(), a.to_csv());
        assert!(a.to_csv().starts_with("k,objective,subopt,grad_norm,critic_mse,policy_min\n"));
    }

    #[test]
    fn exact_oracle_has_zero_critic_error() {
        let m = make_synthetic(3, 2, 0.9, 6).unwrap();
        let mut cfg = TrainConfig::new(0.1, 0.1, 1, 100, 0.1, 0);
        cfg.critic_mode = CriticMode::ExactOracle;
        let t = run_ent_ac(&m, &cfg).unwrap();
        assert!(t.records.iter().all(|r| r.critic_mse <= 1e-20));
    }

    #[test]
    fn full_gradient_ascent_is_monotone() {
        let m = make_synthetic(4, 3, 0.8, 7).unwrap();
        let lambda = 0.1;
        let l = crate::exact::smoothness_l(lambda, 0.8, 3);
        let mut cfg = TrainConfig::new(1.0 / l, 0.1, 1, 300, lambda, 0);
        cfg.critic_mode = CriticMode::ExactOracle;
        cfg.full_gradient = true;
        cfg.eval_every = 1;
        cfg.tau_mode = TauMode::Disabled;
        let t = run_ent_ac(&m, &cfg).unwrap();
        assert!(t.records.windows(2).all(|w| w[1].objective >= w[0].objective - 1e-14));
        assert!(t.final_record().objective > t.records[0].objective);
    }

    #[test]
    fn rollout_sampler_runs_reproducibly() {
        let m = make_synthetic(3, 2, 0.9, 8).unwrap();
        let mut cfg = TrainConfig::new(0.05, 0.1, 4, 50, 0.2, 1);
        cfg.sampler = SamplerKind::Rollout;
        assert_eq!(run_ent_ac(&m, &cfg).unwrap().to_csv(), run_ent_ac(&m, &cfg).unwrap().to_csv());
    }

    #[test]
    fn bad_configs_name_the_key() {
        let m = make_synthetic(2, 2, 0.9, 0).unwrap();
        let mut cfg = TrainConfig::new(0.1, 0.1, 0, 1, 0.1, 0);
        match run_ent_ac(&m, &cfg) {
            Err(EntacError::Config { path, .. }) => assert_eq!(path, "H"),
            other => panic!("{other:?}"),
        }
        cfg.h = 1;
        cfg.eta_a = -1.0;
        assert!(matches!(run_ent_ac(&m, &cfg), Err(EntacError::Config { path, .. }) if path == "eta_a"));
    }

    #[test]
    fn divergence_is_reported_not_clamped() {
        let m = make_synthetic(2, 2, 0.9, 0).unwrap();
        let mut cfg = TrainConfig::new(1e308, 0.1, 1, 10, 0.1, 0);
        cfg.tau_mode = TauMode::Disabled;
        cfg.critic_mode = CriticMode::ExactOracle;
        assert!(matches!(run_ent_ac(&m, &cfg), Err(EntacError::NonFinite { .. })));
    }
}
