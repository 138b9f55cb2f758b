//! Sampling distributions for the actor and the critic, the one-sample
//! gradient estimators, and their moments computed by exact enumeration.
//!
//! The actor distribution is `nu_a(s, a) = d(s) pi(a|s)`. The critic
//! distribution over tuples `(s, a, s~, a~)` is
//! `nu_c = d(s) pi(a|s) P(s~|s,a) pi(a~|s~)`; it is kept factored and never
//! materialised as a dense `|S|^2 |A|^2` vector.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::exact::{gradient_from_parts, reg_values};
use crate::mdp::{occupancy, TabularMdp};
use crate::numeric::{compensated_sum, frob_sq};
use crate::policy::{softmax_policy, Logits, Policy};

/// Inverse-CDF sampler over a fixed index order.
#[derive(Debug, Clone)]
pub struct Categorical {
    cdf: Vec<f64>,
}

impl Categorical {
    pub fn new(weights: &[f64]) -> Self {
        let mut acc = 0.0;
        let cdf = weights
            .iter()
            .map(|&w| {
                acc += w.max(0.0);
                acc
            })
            .collect();
        Categorical { cdf }
    }

    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let total = *self.cdf.last().expect("empty categorical");
        let u = rng.random::<f64>() * total;
        let i = self.cdf.partition_point(|&c| c <= u);
        i.min(self.cdf.len() - 1)
    }
}

/// Draws one index from `weights` (need not be normalised).
pub fn sample_categorical<R: rand::Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    Categorical::new(weights).sample(rng)
}

/// `nu_a(s, a) = d(s) pi(a|s)`, flattened as `s * |A| + a`.
#[derive(Debug, Clone)]
pub struct ActorDist {
    n_actions: usize,
    probs: Vec<f64>,
    sampler: Categorical,
}

impl ActorDist {
    pub fn from_parts(d: &DVector<f64>, policy: &Policy) -> Self {
        let n_actions = policy.n_actions();
        let probs: Vec<f64> = (0..policy.n_states())
            .flat_map(|s| (0..n_actions).map(move |a| (s, a)))
            .map(|(s, a)| d[s] * policy.prob(s, a))
            .collect();
        let sampler = Categorical::new(&probs);
        ActorDist { n_actions, probs, sampler }
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.n_actions + a]
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Support as `((s, a), probability)` pairs, zero-mass pairs skipped.
    pub fn support(&self) -> impl Iterator<Item = ((usize, usize), f64)> + '_ {
        self.probs
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0)
            .map(move |(i, &p)| ((i / self.n_actions, i % self.n_actions), p))
    }

    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> (usize, usize) {
        let i = self.sampler.sample(rng);
        (i / self.n_actions, i % self.n_actions)
    }
}

pub fn actor_dist(mdp: &TabularMdp, theta: &Logits) -> Result<ActorDist> {
    let policy = softmax_policy(theta);
    let d = occupancy(mdp, &policy)?;
    Ok(ActorDist::from_parts(d.as_vector(), &policy))
}

/// A critic sample `(s, a, s~, a~)`.
pub type Transition = (usize, usize, usize, usize);

/// Factored `nu_c`: `(s, a) ~ nu_a`, `s~ ~ P(.|s,a)`, `a~ ~ pi(.|s~)`.
#[derive(Debug, Clone)]
pub struct CriticDist<'a> {
    mdp: &'a TabularMdp,
    policy: Policy,
    actor: ActorDist,
    next_state: Vec<Categorical>,
    next_action: Vec<Categorical>,
}

impl<'a> CriticDist<'a> {
    pub fn new(mdp: &'a TabularMdp, policy: Policy, d: &DVector<f64>) -> Self {
        let actor = ActorDist::from_parts(d, &policy);
        let next_state = (0..mdp.n_states())
            .flat_map(|s| (0..mdp.n_actions()).map(move |a| (s, a)))
            .map(|(s, a)| Categorical::new(mdp.transition_row(s, a)))
            .collect();
        let next_action = (0..mdp.n_states()).map(|s| Categorical::new(&policy.row(s))).collect();
        CriticDist { mdp, policy, actor, next_state, next_action }
    }

    pub fn actor(&self) -> &ActorDist {
        &self.actor
    }

    pub fn policy(&self) -> &Policy {
        &self.policy
    }

    /// Joint probability of one tuple.
    pub fn prob(&self, x: Transition) -> f64 {
        let (s, a, s2, a2) = x;
        self.actor.prob(s, a) * self.mdp.p(s, a, s2) * self.policy.prob(s2, a2)
    }

    /// Every tuple with positive mass, enumerated through the factorization.
    pub fn support(&self) -> impl Iterator<Item = (Transition, f64)> + '_ {
        let n_s = self.mdp.n_states();
        let n_a = self.mdp.n_actions();
        self.actor.support().flat_map(move |((s, a), p_sa)| {
            (0..n_s).filter(move |&s2| self.mdp.p(s, a, s2) > 0.0).flat_map(move |s2| {
                (0..n_a)
                    .filter(move |&a2| self.policy.prob(s2, a2) > 0.0)
                    .map(move |a2| ((s, a, s2, a2), p_sa * self.mdp.p(s, a, s2) * self.policy.prob(s2, a2)))
            })
        })
    }

    pub fn sample_next<R: rand::Rng + ?Sized>(&self, s: usize, a: usize, rng: &mut R) -> (usize, usize) {
        let s2 = self.next_state[s * self.mdp.n_actions() + a].sample(rng);
        let a2 = self.next_action[s2].sample(rng);
        (s2, a2)
    }

    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Transition {
        let (s, a) = self.actor.sample(rng);
        let (s2, a2) = self.sample_next(s, a, rng);
        (s, a, s2, a2)
    }
}

pub fn critic_dist<'a>(mdp: &'a TabularMdp, theta: &Logits) -> Result<CriticDist<'a>> {
    let policy = softmax_policy(theta);
    let d = occupancy(mdp, &policy)?;
    Ok(CriticDist::new(mdp, policy, d.as_vector()))
}

/// Draws states from the occupancy measure by simulation: start from `rho`,
/// stop after a geometric(1 - gamma) number of steps and emit that state.
#[derive(Debug, Clone)]
pub struct RolloutSampler<'a> {
    mdp: &'a TabularMdp,
    init: Categorical,
    next_state: Vec<Categorical>,
    policy_rows: Vec<Categorical>,
}

impl<'a> RolloutSampler<'a> {
    pub fn new(mdp: &'a TabularMdp, policy: &Policy) -> Self {
        let init = Categorical::new(mdp.init_dist().as_slice());
        let next_state = (0..mdp.n_states())
            .flat_map(|s| (0..mdp.n_actions()).map(move |a| (s, a)))
            .map(|(s, a)| Categorical::new(mdp.transition_row(s, a)))
            .collect();
        let policy_rows = (0..mdp.n_states()).map(|s| Categorical::new(&policy.row(s))).collect();
        RolloutSampler { mdp, init, next_state, policy_rows }
    }

    pub fn sample_state<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let mut s = self.init.sample(rng);
        while rng.random::<f64>() >= 1.0 - self.mdp.gamma() {
            let a = self.policy_rows[s].sample(rng);
            s = self.next_state[s * self.mdp.n_actions() + a].sample(rng);
        }
        s
    }

    pub fn sample_actor<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> (usize, usize) {
        let s = self.sample_state(rng);
        (s, self.policy_rows[s].sample(rng))
    }

    pub fn sample_critic<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Transition {
        let (s, a) = self.sample_actor(rng);
        let s2 = self.next_state[s * self.mdp.n_actions() + a].sample(rng);
        (s, a, s2, self.policy_rows[s2].sample(rng))
    }
}

/// A vector with a single nonzero coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SparseUpdate {
    pub s: usize,
    pub a: usize,
    pub value: f64,
}

impl SparseUpdate {
    /// Adds `scale * self` into `target`.
    pub fn apply(&self, target: &mut DMatrix<f64>, scale: f64) {
        target[(self.s, self.a)] += scale * self.value;
    }
}

/// One-sample actor gradient: `adv_hat(s, a) / (1 - gamma)` at the sampled pair.
pub fn actor_grad_estimate(sample: (usize, usize), adv_hat: &DMatrix<f64>, gamma: f64) -> SparseUpdate {
    let (s, a) = sample;
    SparseUpdate { s, a, value: adv_hat[(s, a)] / (1.0 - gamma) }
}

/// Regularized TD error
/// `r(s,a) + gamma (q(s~,a~) - lambda log pi(a~|s~)) - q(s,a)` placed at `(s, a)`.
pub fn td_update(x: Transition, policy: &Policy, q_hat: &DMatrix<f64>, lambda: f64, mdp: &TabularMdp) -> SparseUpdate {
    let (s, a, s2, a2) = x;
    let delta = mdp.reward()[(s, a)] + mdp.gamma() * (q_hat[(s2, a2)] - lambda * policy.log_prob(s2, a2)) - q_hat[(s, a)];
    SparseUpdate { s, a, value: delta }
}

/// `E_{nu_a}[g_a]` by enumerating the support of `nu_a`.
pub fn expected_actor_grad(mdp: &TabularMdp, theta: &Logits, adv_hat: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let dist = actor_dist(mdp, theta)?;
    Ok(expected_actor_grad_from(&dist, mdp, adv_hat))
}

fn expected_actor_grad_from(dist: &ActorDist, mdp: &TabularMdp, adv_hat: &DMatrix<f64>) -> DMatrix<f64> {
    let mut mean = DMatrix::zeros(mdp.n_states(), mdp.n_actions());
    for (y, p) in dist.support() {
        actor_grad_estimate(y, adv_hat, mdp.gamma()).apply(&mut mean, p);
    }
    mean
}

/// Bias and spread of the actor estimator built from an advantage estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActorMoments {
    /// `||E g_a - grad J||^2` via the closed form
    /// `sum d^2 pi^2 (adv_hat - adv)^2 / (1-gamma)^2`.
    pub bias_sq: f64,
    /// `E ||g_a - E g_a||^2`, enumerated.
    pub variance: f64,
    /// `sum d pi adv_hat^2 / (1-gamma)^2`, an upper bound on `variance`.
    pub variance_bound: f64,
    /// `E ||g_a - grad J||^2`, enumerated.
    pub mse_about_gradient: f64,
    /// `||grad J||^2`.
    pub grad_norm_sq: f64,
}

pub fn actor_bias_variance(mdp: &TabularMdp, theta: &Logits, adv_hat: &DMatrix<f64>, lambda: f64) -> Result<ActorMoments> {
    let policy = softmax_policy(theta);
    let d = occupancy(mdp, &policy)?;
    let rv = reg_values(mdp, &policy, lambda)?;
    let grad = gradient_from_parts(mdp, &policy, d.as_vector(), &rv.adv);
    let dist = ActorDist::from_parts(d.as_vector(), &policy);
    let mean = expected_actor_grad_from(&dist, mdp, adv_hat);
    let scale = 1.0 / (1.0 - mdp.gamma());

    let bias_sq = scale * scale
        * compensated_sum(dist.support().map(|((s, a), p)| p * p * (adv_hat[(s, a)] - rv.adv[(s, a)]).powi(2)));
    let variance_bound = scale * scale * compensated_sum(dist.support().map(|((s, a), p)| p * adv_hat[(s, a)].powi(2)));

    // ||g_y - m||^2 = ||m||^2 - m_y^2 + (g_y - m_y)^2 for the one-hot g_y.
    let spread = |center: &DMatrix<f64>| {
        let norm = frob_sq(center);
        compensated_sum(dist.support().map(|((s, a), p)| {
            let g = adv_hat[(s, a)] * scale;
            let c = center[(s, a)];
            p * (norm - c * c + (g - c).powi(2))
        }))
    };
    Ok(ActorMoments {
        bias_sq,
        variance: spread(&mean),
        variance_bound,
        mse_about_gradient: spread(&grad),
        grad_norm_sq: frob_sq(&grad),
    })
}

/// `sum_a pi(a|s) (q(s,a) - lambda log pi(a|s))` for every state.
pub fn soft_state_values(policy: &Policy, q: &DMatrix<f64>, lambda: f64) -> DVector<f64> {
    DVector::from_fn(policy.n_states(), |s, _| {
        compensated_sum((0..policy.n_actions()).map(|a| policy.prob(s, a) * (q[(s, a)] - lambda * policy.log_prob(s, a))))
    })
}

/// Expected regularized TD operator
/// `q + eta_c D [r + gamma P~ (q - lambda log pi) - q]` with
/// `D = diag(d(s) pi(a|s))` and `P~(s~,a~|s,a) = P(s~|s,a) pi(a~|s~)`.
pub fn deterministic_td_operator(
    mdp: &TabularMdp,
    theta: &Logits,
    q: &DMatrix<f64>,
    lambda: f64,
    eta_c: f64,
) -> Result<DMatrix<f64>> {
    let policy = softmax_policy(theta);
    let d = occupancy(mdp, &policy)?;
    Ok(td_operator_with(mdp, &policy, d.as_vector(), q, lambda, eta_c))
}

pub fn td_operator_with(
    mdp: &TabularMdp,
    policy: &Policy,
    d: &DVector<f64>,
    q: &DMatrix<f64>,
    lambda: f64,
    eta_c: f64,
) -> DMatrix<f64> {
    let soft_v = soft_state_values(policy, q, lambda);
    let gamma = mdp.gamma();
    DMatrix::from_fn(mdp.n_states(), mdp.n_actions(), |s, a| {
        let next = compensated_sum(mdp.transition_row(s, a).iter().zip(soft_v.iter()).map(|(p, v)| p * v));
        let target = mdp.reward()[(s, a)] + gamma * next;
        q[(s, a)] + eta_c * d[s] * policy.prob(s, a) * (target - q[(s, a)])
    })
}

/// `E_{nu_c}[g_c]` by enumerating every tuple of the critic distribution.
pub fn expected_td_update(mdp: &TabularMdp, theta: &Logits, q: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>> {
    let dist = critic_dist(mdp, theta)?;
    Ok(expected_td_from(&dist, mdp, q, lambda))
}

fn expected_td_from(dist: &CriticDist<'_>, mdp: &TabularMdp, q: &DMatrix<f64>, lambda: f64) -> DMatrix<f64> {
    let n_a = mdp.n_actions();
    let mut terms: Vec<Vec<f64>> = vec![Vec::new(); mdp.n_states() * n_a];
    for (x, p) in dist.support() {
        let u = td_update(x, dist.policy(), q, lambda, mdp);
        terms[u.s * n_a + u.a].push(p * u.value);
    }
    DMatrix::from_fn(mdp.n_states(), n_a, |s, a| compensated_sum(terms[s * n_a + a].iter().copied()))
}

/// Spread of the critic estimator and its closed-form ceiling
/// `8 ||q||_inf^2 + 4 + 4 lambda^2 + 4 lambda^2 log(|A|)^2`.
pub fn critic_estimator_second_moment(mdp: &TabularMdp, theta: &Logits, q: &DMatrix<f64>, lambda: f64) -> Result<(f64, f64)> {
    let dist = critic_dist(mdp, theta)?;
    let mean = expected_td_from(&dist, mdp, q, lambda);
    let norm = frob_sq(&mean);
    let variance = compensated_sum(dist.support().map(|(x, p)| {
        let u = td_update(x, dist.policy(), q, lambda, mdp);
        let m = mean[(u.s, u.a)];
        p * (norm - m * m + (u.value - m).powi(2))
    }));
    let log_a = (mdp.n_actions() as f64).ln();
    let q_inf = q.amax();
    let bound = 8.0 * q_inf * q_inf + 4.0 + 4.0 * lambda * lambda + 4.0 * lambda * lambda * log_a * log_a;
    Ok((variance, bound))
}

/// `D (I - gamma P~) v`, the linear part of the expected TD step.
pub fn td_linear_part(mdp: &TabularMdp, policy: &Policy, d: &DVector<f64>, v: &DMatrix<f64>) -> DMatrix<f64> {
    let mean_next = soft_state_values(policy, v, 0.0);
    let gamma = mdp.gamma();
    DMatrix::from_fn(mdp.n_states(), mdp.n_actions(), |s, a| {
        let next = compensated_sum(mdp.transition_row(s, a).iter().zip(mean_next.iter()).map(|(p, x)| p * x));
        d[s] * policy.prob(s, a) * (v[(s, a)] - gamma * next)
    })
}
