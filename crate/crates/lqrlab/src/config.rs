//! Central tolerance ledger.
//!
//! Every numerical threshold used by the crate lives here so experiments can
//! override them in one place instead of hunting through call sites.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    /// Max absolute asymmetry accepted before a matrix is rejected as non-symmetric.
    pub symmetry: f64,
    /// Convergence tolerance for the DARE fixed-point iteration (spectral norm).
    pub dare_tol: f64,
    /// Iteration cap for the DARE fixed-point iteration.
    pub dare_max_iter: usize,
    /// Condition number above which `R + B_u' P B_u` is treated as singular.
    pub condition_limit: f64,
    /// Relative singular-value threshold for the detectability rank test.
    pub rank_sv_rel: f64,
    /// Eigenvalue floor guarding matrix log/sqrt against underflow.
    pub eig_floor: f64,
    /// Absolute part of the default comparison tolerance.
    pub atol: f64,
    /// Relative part of the default comparison tolerance.
    pub rtol: f64,
    /// Slack allowed when checking `A ⪯ B` orderings (min eigenvalue of B−A ≥ −slack).
    pub order_slack: f64,
    /// Cap on stacked-input dimension for the full-horizon QP oracle.
    pub qp_var_cap: usize,
    /// Cap on the lifted value-function dimension `(T−t+1)·n`.
    pub lifted_dim_cap: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            symmetry: 1e-12,
            dare_tol: 1e-12,
            dare_max_iter: 100_000,
            condition_limit: 1e14,
            rank_sv_rel: 1e-9,
            eig_floor: 1e-300,
            atol: 1e-10,
            rtol: 1e-8,
            order_slack: 1e-9,
            qp_var_cap: 2000,
            lifted_dim_cap: 4000,
        }
    }
}

impl Tolerances {
    /// Scale-aware comparison tolerance: `atol + rtol·magnitude`.
    pub fn close(&self, magnitude: f64) -> f64 {
        self.atol + self.rtol * magnitude.abs()
    }
}
