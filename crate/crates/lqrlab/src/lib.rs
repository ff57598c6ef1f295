//! Finite-horizon online LQR laboratory.
//!
//! The crate simulates receding-horizon control of
//! `x_{t+1} = A x_t + B_u u_t + B_d d_t` under time-varying quadratic costs
//! when only a `W`-step window of (possibly noisy) disturbance predictions is
//! available, and measures how far the online controller lands from the
//! hindsight-optimal one:
//!
//! - [`model`] — problem data, the random instance generator, prediction
//!   streams, validation, instance files;
//! - [`riccati`] — the Riccati operator, backward passes, the DARE fixed
//!   point, the `δ∞` metric, and the stability constants `(τ, ρ, γ)`;
//! - [`offline`] — the hindsight-optimal policy, its rollout, and two
//!   independent oracles (full-horizon QP, lifted value form);
//! - [`mpc`] — the windowed controller with terminal cost `P_max`, in both
//!   its gain representation and a direct per-step QP cross-check;
//! - [`regret`] — exact dynamic regret, the quadratic regret formula, the
//!   action-error decomposition, and the structural bound factors;
//! - [`harness`] — the sweep driver behind the CLI, with deterministic CSV
//!   output.

pub mod config;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod model;
pub mod mpc;
pub mod offline;
pub mod regret;
pub mod riccati;
pub mod rng;

pub use config::Tolerances;
pub use error::{Error, Result};
