//! Tabular entropy-regularized actor-critic.
//!
//! The crate is organised bottom-up:
//!
//! * [`mdp`]: finite discounted MDPs, the gridworld and synthetic generators,
//!   and discounted state occupancy measures.
//! * [`policy`]: softmax policies, the inverse logit map and the
//!   minimum-probability projection.
//! * [`exact`]: exact regularized evaluation, soft value iteration, the policy
//!   gradient and closed-form analysis constants.
//! * [`sampling`]: the actor and critic sampling distributions, one-sample
//!   gradient estimators and their exactly enumerated moments.
//! * [`trainer`]: the actor-critic loop with a TD critic or an exact oracle critic.
//! * [`verify`]: numerical checkers for the inequalities the method relies on.
//! * [`harness`]: configuration parsing, seeded sweeps and result files.
//!
//! Data-parallel loops (sweeps, randomized checks) go through [`par`], which
//! uses rayon when the `parallel` feature is enabled and runs sequentially
//! otherwise. Results never depend on the schedule.

pub mod error;
pub mod exact;
pub mod harness;
pub mod mdp;
pub mod numeric;
pub mod par;
pub mod policy;
pub mod sampling;
pub mod trainer;
pub mod verify;

pub use error::{EntacError, Result};
pub use exact::{ConstantsReport, RegValues, SoftOptimum};
pub use mdp::{InitMode, Occupancy, TabularMdp};
pub use par::Execution;
pub use policy::{Logits, Policy, Tau};
pub use trainer::{CriticMode, RunTrace, TauMode, TrainConfig};
pub use verify::CheckResult;

/// Seeded random stream used everywhere a run needs randomness.
pub type Rng = rand_chacha::ChaCha8Rng;

/// Builds the run-local random stream for `seed`.
pub fn seeded_rng(seed: u64) -> Rng {
    use rand::SeedableRng;
    Rng::seed_from_u64(seed)
}

/// Independent random stream number `stream` under `seed`, for per-item
/// randomness in data-parallel loops.
pub fn stream_rng(seed: u64, stream: u64) -> Rng {
    let mut rng = seeded_rng(seed);
    rng.set_stream(stream);
    rng
}
