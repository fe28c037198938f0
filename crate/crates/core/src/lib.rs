//! Combinatorial K-Max bandits with continuous outcomes and value-index
//! feedback, plus the exponential K-Min special case with full-bandit
//! feedback.
//!
//! The crate is organised bottom-up:
//!
//! - [`env_continuous`]: bi-Lipschitz arms on `[0, 1]`, seeded sampling,
//!   value-index feedback and exact / Monte Carlo expected maxima.
//! - [`discretize`]: bin grids, the `p <-> q` reparameterisation and the
//!   discrete and binary-arm expected rewards (with a brute-force oracle).
//! - [`oracle`]: offline subset maximisers (exact enumeration, greedy).
//! - [`dck_ucb`]: the discretized UCB learner with bias-corrected
//!   optimism, plus concentration and decomposition diagnostics.
//! - [`kmin_exp`]: exponential K-Min model, regularised MLE, confidence
//!   sets and optimistic selection.
//! - [`harness`]: experiment configs, policies, regret traces, exponent
//!   fits and CSV / JSON output.
//! - [`verify`]: property suites shared by the CLI `verify` command.
//!
//! Arm indices are 0-based everywhere.
//!
//! ```
//! use kmaxband::dck_ucb::{DckConfig, DckUcb};
//! use kmaxband::env_continuous::{sample_outcomes, value_index_feedback, ArmKind, ContinuousEnv};
//! use kmaxband::sim_rng;
//!
//! # fn main() -> kmaxband::Result<()> {
//! let kinds = vec![ArmKind::uniform(), ArmKind::TruncatedGaussian { mu: 0.7, sigma: 0.2 }, ArmKind::uniform()];
//! let env = ContinuousEnv::from_kinds(&kinds, 2, 0)?;
//! let mut learner = DckUcb::new(DckConfig::tuned(3, 2, env.lipschitz(), 1_000))?;
//! let mut rng = sim_rng(0, 0);
//! for _ in 0..1_000 {
//!     let s = learner.select_action()?;
//!     let outcomes = sample_outcomes(&env, &s, &mut rng)?;
//!     learner.update(&s, &value_index_feedback(&outcomes, &s)?)?;
//! }
//! assert_eq!(learner.round(), 1_001);
//! # Ok(())
//! # }
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dck_ucb;
pub mod discretize;
pub mod env_continuous;
pub mod error;
pub mod harness;
pub mod kmin_exp;
pub mod oracle;
pub mod subsets;
pub mod verify;

pub use error::{Error, Result};

/// Deterministic random stream used by every simulation component.
pub type SimRng = rand_chacha::ChaCha8Rng;

/// Builds the random stream for `(seed, stream)`; distinct `stream` ids
/// give independent sequences for the same seed.
pub fn sim_rng(seed: u64, stream: u64) -> SimRng {
    use rand::SeedableRng;
    let mut rng = SimRng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
