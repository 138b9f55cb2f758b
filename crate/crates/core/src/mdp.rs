//! Finite discounted MDPs, environment generators and occupancy measures.

use nalgebra::{DMatrix, DVector};
use rand::{Rng as _, SeedableRng};
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{EntacError, Result};
use crate::numeric::{compensated_sum, l1_distance, solve_dense};
use crate::policy::Policy;

const ROW_SUM_TOL: f64 = 1e-12;

/// A finite discounted MDP `(S, A, gamma, P, r, rho)`.
///
/// The transition tensor is stored flat in `(s, a, s')` row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    transition: Vec<f64>,
    reward: DMatrix<f64>,
    init_dist: DVector<f64>,
}

/// A single broken invariant found by [`TabularMdp::validate`].
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub message: String,
    pub magnitude: f64,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} (magnitude {:e})", self.message, self.magnitude)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum InitMode {
    /// All initial mass on the bottom-left cell.
    #[default]
    StartCell,
    /// Uniform over all cells.
    Uniform,
}

/// Gridworld action indices.
pub mod action {
    pub const UP: usize = 0;
    pub const RIGHT: usize = 1;
    pub const DOWN: usize = 2;
    pub const LEFT: usize = 3;
}

impl TabularMdp {
    /// Assembles an MDP after checking shapes only. Use [`TabularMdp::validate`]
    /// to check probabilities and reward ranges.
    pub fn from_parts(
        n_states: usize,
        n_actions: usize,
        gamma: f64,
        transition: Vec<f64>,
        reward: DMatrix<f64>,
        init_dist: DVector<f64>,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(EntacError::shape("n_states and n_actions must be positive"));
        }
        if transition.len() != n_states * n_actions * n_states {
            return Err(EntacError::shape(format!(
                "transition has {} entries, expected {}",
                transition.len(),
                n_states * n_actions * n_states
            )));
        }
        if reward.shape() != (n_states, n_actions) {
            return Err(EntacError::shape(format!(
                "reward is {:?}, expected ({n_states}, {n_actions})",
                reward.shape()
            )));
        }
        if init_dist.len() != n_states {
            return Err(EntacError::shape(format!(
                "init_dist has {} entries, expected {n_states}",
                init_dist.len()
            )));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(EntacError::invalid(format!("gamma must lie in (0,1), got {gamma}")));
        }
        Ok(Self { n_states, n_actions, gamma, transition, reward, init_dist })
    }

    /// Like [`TabularMdp::from_parts`] but also rejects any invariant violation.
    pub fn new(
        n_states: usize,
        n_actions: usize,
        gamma: f64,
        transition: Vec<f64>,
        reward: DMatrix<f64>,
        init_dist: DVector<f64>,
    ) -> Result<Self> {
        let mdp = Self::from_parts(n_states, n_actions, gamma, transition, reward, init_dist)?;
        mdp.ensure_valid()?;
        Ok(mdp)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn reward(&self) -> &DMatrix<f64> {
        &self.reward
    }

    pub fn init_dist(&self) -> &DVector<f64> {
        &self.init_dist
    }

    /// Smallest initial-state probability.
    pub fn rho_min(&self) -> f64 {
        self.init_dist.min()
    }

    /// `P(s' | s, a)`.
    #[inline]
    pub fn p(&self, s: usize, a: usize, s_next: usize) -> f64 {
        self.transition[(s * self.n_actions + a) * self.n_states + s_next]
    }

    /// Next-state distribution `P(. | s, a)`.
    #[inline]
    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.transition[start..start + self.n_states]
    }

    /// Flat `(s, a, s')` transition tensor.
    pub fn transition(&self) -> &[f64] {
        &self.transition
    }

    /// Returns every violated invariant; empty means the MDP is valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                let row = self.transition_row(s, a);
                for (s2, &p) in row.iter().enumerate() {
                    if !(p >= 0.0) {
                        out.push(Violation {
                            message: format!("negative transition probability at ({s},{a},{s2})"),
                            magnitude: p,
                        });
                    }
                }
                let sum = compensated_sum(row.iter().copied());
                if !((sum - 1.0).abs() <= ROW_SUM_TOL) {
                    out.push(Violation {
                        message: format!("transition row ({s},{a}) sums to {sum}"),
                        magnitude: (sum - 1.0).abs(),
                    });
                }
                let r = self.reward[(s, a)];
                if !(0.0..=1.0).contains(&r) {
                    out.push(Violation {
                        message: format!("reward out of [0,1] at ({s},{a})"),
                        magnitude: r,
                    });
                }
            }
        }
        for (s, &rho) in self.init_dist.iter().enumerate() {
            if !(rho >= 0.0) {
                out.push(Violation {
                    message: format!("negative initial probability at state {s}"),
                    magnitude: rho,
                });
            }
        }
        let total = compensated_sum(self.init_dist.iter().copied());
        if !((total - 1.0).abs() <= ROW_SUM_TOL) {
            out.push(Violation {
                message: format!("init_dist sums to {total}"),
                magnitude: (total - 1.0).abs(),
            });
        }
        out
    }

    pub fn ensure_valid(&self) -> Result<()> {
        let violations = self.validate();
        if violations.is_empty() {
            Ok(())
        } else {
            let msgs: Vec<String> = violations.iter().map(ToString::to_string).collect();
            Err(EntacError::invalid(format!("invalid MDP: {}", msgs.join("; "))))
        }
    }

    /// Same dynamics and rewards with a different initial distribution.
    pub fn with_init_dist(&self, init_dist: DVector<f64>) -> Result<Self> {
        Self::new(
            self.n_states,
            self.n_actions,
            self.gamma,
            self.transition.clone(),
            self.reward.clone(),
            init_dist,
        )
    }

    /// State-to-state kernel under `policy`: `P_pi[s, s'] = sum_a pi(a|s) P(s'|s,a)`.
    pub fn policy_kernel(&self, policy: &Policy) -> DMatrix<f64> {
        let probs = policy.probs();
        DMatrix::from_fn(self.n_states, self.n_states, |s, s2| {
            (0..self.n_actions).map(|a| probs[(s, a)] * self.p(s, a, s2)).sum()
        })
    }

    pub(crate) fn check_policy(&self, policy: &Policy) -> Result<()> {
        if policy.probs().shape() != (self.n_states, self.n_actions) {
            return Err(EntacError::shape(format!(
                "policy is {:?}, MDP is ({}, {})",
                policy.probs().shape(),
                self.n_states,
                self.n_actions
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&MdpDocument::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: MdpDocument = serde_json::from_str(text)?;
        doc.try_into()
    }
}

/// JSON layout of a [`TabularMdp`]; matrices are flattened row-major.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MdpDocument {
    pub n_states: usize,
    pub n_actions: usize,
    pub gamma: f64,
    pub transition: Vec<f64>,
    pub reward: Vec<f64>,
    pub init_dist: Vec<f64>,
}

impl From<&TabularMdp> for MdpDocument {
    fn from(m: &TabularMdp) -> Self {
        let mut reward = Vec::with_capacity(m.n_states * m.n_actions);
        for s in 0..m.n_states {
            for a in 0..m.n_actions {
                reward.push(m.reward[(s, a)]);
            }
        }
        MdpDocument {
            n_states: m.n_states,
            n_actions: m.n_actions,
            gamma: m.gamma,
            transition: m.transition.clone(),
            reward,
            init_dist: m.init_dist.iter().copied().collect(),
        }
    }
}

impl TryFrom<MdpDocument> for TabularMdp {
    type Error = EntacError;

    fn try_from(d: MdpDocument) -> Result<Self> {
        if d.reward.len() != d.n_states * d.n_actions {
            return Err(EntacError::shape("reward length does not match n_states * n_actions"));
        }
        let reward = DMatrix::from_row_slice(d.n_states, d.n_actions, &d.reward);
        TabularMdp::from_parts(
            d.n_states,
            d.n_actions,
            d.gamma,
            d.transition,
            reward,
            DVector::from_vec(d.init_dist),
        )
    }
}

/// Deterministic gridworld with the goal in the top-right corner.
///
/// Cell `(row, col)` has index `row * cols + col`, row 0 being the top row.
/// Actions are up, right, down, left. Moves into the boundary leave the agent
/// in place. Entering the goal from another cell pays 1; the goal is absorbing
/// with zero reward.
pub fn make_gridworld(rows: usize, cols: usize, gamma: f64, init_mode: InitMode) -> Result<TabularMdp> {
    let n = rows.checked_mul(cols).unwrap_or(0);
    if n < 2 {
        return Err(EntacError::invalid(format!("gridworld needs at least 2 cells, got {rows}x{cols}")));
    }
    let n_actions = 4;
    let goal = cols - 1;
    let start = (rows - 1) * cols;
    let mut transition = vec![0.0; n * n_actions * n];
    let mut reward = DMatrix::zeros(n, n_actions);
    for s in 0..n {
        let (r, c) = (s / cols, s % cols);
        for a in 0..n_actions {
            let next = if s == goal {
                s
            } else {
                let (nr, nc) = match a {
                    action::UP => (r.saturating_sub(1), c),
                    action::RIGHT => (r, (c + 1).min(cols - 1)),
                    action::DOWN => ((r + 1).min(rows - 1), c),
                    _ => (r, c.saturating_sub(1)),
                };
                nr * cols + nc
            };
            transition[(s * n_actions + a) * n + next] = 1.0;
            if s != goal && next == goal {
                reward[(s, a)] = 1.0;
            }
        }
    }
    let init_dist = match init_mode {
        InitMode::StartCell => {
            let mut d = DVector::zeros(n);
            d[start] = 1.0;
            d
        }
        InitMode::Uniform => DVector::from_element(n, 1.0 / n as f64),
    };
    TabularMdp::new(n, n_actions, gamma, transition, reward, init_dist)
}

/// Random dense MDP: each transition row uniform on the simplex, rewards
/// i.i.d. `Unif[0,1]`, uniform initial distribution. Pure in its arguments.
pub fn make_synthetic(n_states: usize, n_actions: usize, gamma: f64, seed: u64) -> Result<TabularMdp> {
    if n_states == 0 || n_actions == 0 {
        return Err(EntacError::invalid("synthetic MDP needs at least one state and one action"));
    }
    let mut rng = crate::Rng::seed_from_u64(seed);
    let mut transition = Vec::with_capacity(n_states * n_actions * n_states);
    for _ in 0..n_states * n_actions {
        transition.extend(sample_simplex(&mut rng, n_states));
    }
    let reward = DMatrix::from_fn(n_states, n_actions, |_, _| rng.random::<f64>());
    let init_dist = DVector::from_element(n_states, 1.0 / n_states as f64);
    TabularMdp::new(n_states, n_actions, gamma, transition, reward, init_dist)
}

/// Uniform point on the `n`-simplex via normalized standard exponentials.
pub fn sample_simplex<R: rand::Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    let mut xs: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(Exp1)).collect();
    let total: f64 = xs.iter().sum();
    if total > 0.0 {
        xs.iter_mut().for_each(|x| *x /= total);
    } else {
        xs.iter_mut().for_each(|x| *x = 1.0 / n as f64);
    }
    // Absorb the rounding error into the largest entry so the row sums to 1.
    let sum = compensated_sum(xs.iter().copied());
    if let Some((i, _)) = xs.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)) {
        xs[i] += 1.0 - sum;
    }
    xs
}

/// Discounted state occupancy `d = (1-gamma) rho^T (I - gamma P_pi)^{-1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Occupancy {
    d: DVector<f64>,
}

impl Occupancy {
    pub fn as_vector(&self) -> &DVector<f64> {
        &self.d
    }

    pub fn get(&self, s: usize) -> f64 {
        self.d[s]
    }

    pub fn len(&self) -> usize {
        self.d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d.is_empty()
    }
}

/// Occupancy measure under the MDP's own initial distribution.
pub fn occupancy(mdp: &TabularMdp, policy: &Policy) -> Result<Occupancy> {
    occupancy_from(mdp, policy, mdp.init_dist())
}

/// Occupancy measure for an arbitrary initial distribution `rho`.
pub fn occupancy_from(mdp: &TabularMdp, policy: &Policy, rho: &DVector<f64>) -> Result<Occupancy> {
    mdp.check_policy(policy)?;
    let n = mdp.n_states();
    let gamma = mdp.gamma();
    let kernel = mdp.policy_kernel(policy);
    let system = DMatrix::identity(n, n) - kernel.transpose() * gamma;
    let rhs = rho * (1.0 - gamma);
    let d = solve_dense(&system, &rhs, "occupancy", 1e-8)?;
    Ok(Occupancy { d })
}

/// Occupancy measure started from the single state `s`.
pub fn occupancy_from_state(mdp: &TabularMdp, policy: &Policy, s: usize) -> Result<Occupancy> {
    let mut rho = DVector::zeros(mdp.n_states());
    rho[s] = 1.0;
    occupancy_from(mdp, policy, &rho)
}

/// Largest violation of the flow-conservation identity
/// `d(s) = (1-gamma) rho(s) + gamma sum_{s',a'} P(s|s',a') pi(a'|s') d(s')`.
pub fn flow_residual(mdp: &TabularMdp, policy: &Policy, occ: &Occupancy) -> f64 {
    let gamma = mdp.gamma();
    let kernel = mdp.policy_kernel(policy);
    let inflow = kernel.transpose() * occ.as_vector();
    (0..mdp.n_states())
        .map(|s| (occ.get(s) - (1.0 - gamma) * mdp.init_dist()[s] - gamma * inflow[s]).abs())
        .fold(0.0, f64::max)
}

/// Both sides of `||d1 - d2||_1 <= gamma/(1-gamma) max_s ||pi1(.|s) - pi2(.|s)||_1`.
pub fn occupancy_distance_bound(mdp: &TabularMdp, pi1: &Policy, pi2: &Policy) -> Result<(f64, f64)> {
    let d1 = occupancy(mdp, pi1)?;
    let d2 = occupancy(mdp, pi2)?;
    let lhs = l1_distance(d1.as_vector().as_slice(), d2.as_vector().as_slice());
    let max_row = (0..mdp.n_states())
        .map(|s| {
            let r1: Vec<f64> = pi1.probs().row(s).iter().copied().collect();
            let r2: Vec<f64> = pi2.probs().row(s).iter().copied().collect();
            l1_distance(&r1, &r2)
        })
        .fold(0.0, f64::max);
    let gamma = mdp.gamma();
    Ok((lhs, gamma / (1.0 - gamma) * max_row))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{softmax_policy, Logits};

    fn one_state(reward: f64, p: f64) -> TabularMdp {
        TabularMdp::from_parts(
            1,
            1,
            0.9,
            vec![p],
            DMatrix::from_element(1, 1, reward),
            DVector::from_element(1, 1.0),
        )
        .unwrap()
    }

    #[test]
    fn validate_identity_case() {
        assert!(one_state(0.5, 1.0).validate().is_empty());
    }

    #[test]
    fn validate_flags_reward() {
        let v = one_state(1.5, 1.0).validate();
        assert_eq!(v.len(), 1);
        assert!(v[0].message.contains("reward out of [0,1] at (0,0)"));
    }

    #[test]
    fn validate_flags_transition_row() {
        let v = one_state(0.5, 0.9).validate();
        assert_eq!(v.len(), 1);
        assert!(v[0].message.contains("(0,0)"), "{}", v[0].message);
        assert!((v[0].magnitude - 0.1).abs() < 1e-12);
    }

    #[test]
    fn gridworld_two_by_two() {
        let g = make_gridworld(2, 2, 0.99, InitMode::StartCell).unwrap();
        assert_eq!(g.n_states(), 4);
        assert_eq!(g.n_actions(), 4);
        // goal is cell 1 (top-right); its neighbours are 0 (via right) and 3 (via up).
        let rewarded: Vec<(usize, usize)> = (0..4)
            .flat_map(|s| (0..4).map(move |a| (s, a)))
            .filter(|&(s, a)| g.reward()[(s, a)] == 1.0)
            .collect();
        assert_eq!(rewarded, vec![(0, action::RIGHT), (3, action::UP)]);
        assert_eq!(g.init_dist()[2], 1.0);
        let u = make_gridworld(2, 2, 0.99, InitMode::Uniform).unwrap();
        assert!(u.init_dist().iter().all(|&x| x == 0.25));
    }

    #[test]
    fn gridworld_one_by_two_by_hand() {
        let g = make_gridworld(1, 2, 0.9, InitMode::StartCell).unwrap();
        // start = 0, goal = 1.
        assert_eq!(g.p(0, action::RIGHT, 1), 1.0);
        assert_eq!(g.reward()[(0, action::RIGHT)], 1.0);
        for a in [action::UP, action::DOWN, action::LEFT] {
            assert_eq!(g.p(0, a, 0), 1.0);
            assert_eq!(g.reward()[(0, a)], 0.0);
        }
        for a in 0..4 {
            assert_eq!(g.p(1, a, 1), 1.0);
            assert_eq!(g.reward()[(1, a)], 0.0);
        }
    }

    #[test]
    fn gridworld_rejects_single_cell() {
        assert!(make_gridworld(1, 1, 0.9, InitMode::Uniform).is_err());
    }

    #[test]
    fn gridworld_rows_are_one_hot() {
        let g = make_gridworld(3, 4, 0.9, InitMode::Uniform).unwrap();
        assert_eq!(g.n_states(), 12);
        for s in 0..12 {
            for a in 0..4 {
                let row = g.transition_row(s, a);
                assert_eq!(row.iter().filter(|&&p| p == 1.0).count(), 1);
                assert_eq!(row.iter().filter(|&&p| p == 0.0).count(), 11);
            }
        }
    }

    #[test]
    fn synthetic_is_valid_and_deterministic() {
        let m = make_synthetic(4, 4, 0.99, 0).unwrap();
        assert!(m.validate().is_empty());
        assert!(m.init_dist().iter().all(|&x| x == 0.25));
        let a = make_synthetic(3, 2, 0.9, 7).unwrap();
        let b = make_synthetic(3, 2, 0.9, 7).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, make_synthetic(3, 2, 0.9, 8).unwrap());
        let one = make_synthetic(1, 1, 0.5, 42).unwrap();
        assert_eq!(one.transition(), &[1.0]);
        assert!((0.0..=1.0).contains(&one.reward()[(0, 0)]));
    }

    #[test]
    fn occupancy_single_state() {
        let m = one_state(0.5, 1.0);
        let pi = softmax_policy(&Logits::zeros(1, 1));
        let d = occupancy(&m, &pi).unwrap();
        assert!((d.get(0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn occupancy_two_state_chain() {
        // s0 -> s1, s1 -> s1; d(s0) = 1 - gamma, d(s1) = gamma by the geometric series.
        let m = TabularMdp::new(
            2,
            1,
            0.5,
            vec![0.0, 1.0, 0.0, 1.0],
            DMatrix::zeros(2, 1),
            DVector::from_vec(vec![1.0, 0.0]),
        )
        .unwrap();
        let pi = softmax_policy(&Logits::zeros(2, 1));
        let d = occupancy(&m, &pi).unwrap();
        let oracle: f64 = (1..200).map(|t| 0.5 * 0.5f64.powi(t)).sum();
        assert!((d.get(0) - 0.5).abs() < 1e-15);
        assert!((d.get(1) - oracle).abs() < 1e-15);
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let m = make_synthetic(5, 3, 0.97, 11).unwrap();
        let text = m.to_json().unwrap();
        let back = TabularMdp::from_json(&text).unwrap();
        assert_eq!(m, back);
        let bits = |m: &TabularMdp| m.transition().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&m), bits(&back));
    }

    #[test]
    fn json_rejects_unknown_fields() {
        let text = r#"{"n_states":1,"n_actions":1,"gamma":0.5,"transition":[1],"reward":[0],"init_dist":[1],"x":1}"#;
        assert!(TabularMdp::from_json(text).is_err());
    }
}
