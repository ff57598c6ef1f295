//! Riccati machinery.
//!
//! The single operator everything else leans on is
//!
//! ```text
//!   F_{Q,R}(P) = Q + A'PA − A'P B_u (R + B_u'P B_u)^{-1} B_u'P A
//! ```
//!
//! Backward passes iterate it with stage-varying `(Q_t, R_t)`; the DARE
//! solution is its fixed point under the bound pair `(Q_max, R_max)`,
//! obtained here by plain fixed-point iteration so the solver exercises the
//! same code path the passes do. The module also carries the invariant metric
//! `δ∞(P, P̄) = ‖log(P^{-1/2} P̄ P^{-1/2})‖` under which the operator
//! contracts with factor `γ`, and the stability constants `(τ, ρ, γ)` derived
//! from the cost bounds.

use nalgebra::DMatrix;

use crate::config::Tolerances;
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{CostBounds, CostSchedule, LinearSystem};

/// Where a backward pass came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PassSource {
    /// Full-horizon pass with terminal `Q_T`.
    Offline,
    /// Windowed pass built at stage `t` with terminal `P_max`.
    MpcLocal { t: usize },
}

/// Value matrices and gains from a backward Riccati sweep.
///
/// `p` holds stages `start..=start+len` (one more entry than `k`); accessors
/// take absolute 1-based stage indices.
#[derive(Debug, Clone)]
pub struct BackwardPass {
    pub source: PassSource,
    pub start: usize,
    pub p: Vec<DMatrix<f64>>,
    pub k: Vec<DMatrix<f64>>,
}

impl BackwardPass {
    /// Value matrix `P_t`.
    pub fn p(&self, t: usize) -> &DMatrix<f64> {
        &self.p[t - self.start]
    }

    /// Gain `K_t = (R_t + B_u'P_{t+1}B_u)^{-1} B_u'P_{t+1}A`.
    pub fn k(&self, t: usize) -> &DMatrix<f64> {
        &self.k[t - self.start]
    }

    /// Last stage with a value matrix (the terminal stage of the sweep).
    pub fn end(&self) -> usize {
        self.start + self.p.len() - 1
    }
}

/// One Riccati step together with the gain it implies.
fn step_with_gain(
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    p_next: &DMatrix<f64>,
    sys: &LinearSystem,
    tol: &Tolerances,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let bt_p = sys.b_u.transpose() * p_next;
    let s = linalg::symmetrize(&(r + &bt_p * &sys.b_u));
    let k = linalg::solve_spd(&s, &(&bt_p * &sys.a), tol)?;
    let at_p = sys.a.transpose() * p_next;
    let f = q + &at_p * &sys.a - (&at_p * &sys.b_u) * &k;
    Ok((linalg::symmetrize(&f), k))
}

/// Apply `F_{Q,R}` once. The result is symmetrized; positive definiteness is
/// inherited from `Q ≻ 0`.
pub fn riccati_step(
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    p: &DMatrix<f64>,
    sys: &LinearSystem,
    tol: &Tolerances,
) -> Result<DMatrix<f64>> {
    step_with_gain(q, r, p, sys, tol).map(|(f, _)| f)
}

/// Backward sweep over explicit cost slices: stage costs `qs[j], rs[j]`
/// correspond to absolute stage `start + j`, and `terminal` seeds the value
/// at stage `start + qs.len()`.
pub fn backward_pass_slices(
    qs: &[DMatrix<f64>],
    rs: &[DMatrix<f64>],
    terminal: &DMatrix<f64>,
    sys: &LinearSystem,
    start: usize,
    source: PassSource,
    tol: &Tolerances,
) -> Result<BackwardPass> {
    assert_eq!(qs.len(), rs.len(), "one (Q, R) pair per swept stage");
    let len = qs.len();
    let mut p = vec![DMatrix::zeros(0, 0); len + 1];
    let mut k = vec![DMatrix::zeros(0, 0); len];
    p[len] = terminal.clone();
    for j in (0..len).rev() {
        let stage = start + j;
        let (f, gain) = step_with_gain(&qs[j], &rs[j], &p[j + 1], sys, tol)
            .map_err(|e| e.at_stage(stage))?;
        p[j] = f;
        k[j] = gain;
    }
    Ok(BackwardPass {
        source,
        start,
        p,
        k,
    })
}

/// Full-horizon backward pass: `P_T = terminal`, `P_t = F_{Q_t,R_t}(P_{t+1})`.
///
/// `terminal` is a parameter (rather than always `Q_T`) so the same routine
/// serves the windowed pass with terminal `P_max`.
pub fn backward_pass(
    costs: &CostSchedule,
    terminal: &DMatrix<f64>,
    sys: &LinearSystem,
    tol: &Tolerances,
) -> Result<BackwardPass> {
    let t_horizon = costs.horizon();
    backward_pass_slices(
        &costs.q[..t_horizon - 1],
        &costs.r,
        terminal,
        sys,
        1,
        PassSource::Offline,
        tol,
    )
}

/// Fixed-point iteration for `P = F_{Q,R}(P)` starting at `P⁰ = Q`.
///
/// Returns the first iterate whose residual `‖F(P) − P‖` falls under
/// `fp_tol`; failure to get there within `max_iter` is reported as
/// divergence, which is the practical symptom of a non-stabilizable pair.
pub fn solve_dare(
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    sys: &LinearSystem,
    fp_tol: f64,
    max_iter: usize,
    tol: &Tolerances,
) -> Result<DMatrix<f64>> {
    let mut p = q.clone();
    let mut residual = f64::INFINITY;
    for _ in 0..max_iter {
        let next = riccati_step(q, r, &p, sys, tol)?;
        if next.iter().any(|v| !v.is_finite()) {
            residual = f64::INFINITY;
            break;
        }
        residual = linalg::spectral_norm(&(&next - &p));
        if residual <= fp_tol {
            return Ok(p);
        }
        p = next;
    }
    Err(Error::DareDivergence { max_iter, residual })
}

/// Invariant metric on the positive-definite cone:
/// `δ∞(P, P̄) = max_λ |log λ|` over the eigenvalues of `P^{-1/2} P̄ P^{-1/2}`.
pub fn delta_inf(p: &DMatrix<f64>, pbar: &DMatrix<f64>, tol: &Tolerances) -> Result<f64> {
    linalg::require_spd(p, "P", tol)?;
    linalg::require_spd(pbar, "Pbar", tol)?;
    let lam = linalg::whitened_eigenvalues(p, pbar, tol)?;
    let mut worst = 0.0f64;
    for &v in lam.iter() {
        if v <= 0.0 {
            return Err(Error::NotPositiveDefinite {
                field: "Pbar (whitened)",
                min_eig: v,
            });
        }
        worst = worst.max(v.max(tol.eig_floor).ln().abs());
    }
    Ok(worst)
}

/// The constants governing every exponential bound in the crate.
///
/// `τ = sqrt(λ_max(P_max)/λ_min(Q_min))`,
/// `ρ = sqrt(1 − λ_min(Q_min)/λ_max(P_max))` bound closed-loop transition
/// norms by `τ·ρ^elapsed`; `γ` is the contraction factor of the Riccati
/// operator in `δ∞`. The originating bounds ride along because the regret
/// bound evaluator needs `R_min`/`Q_min` again.
#[derive(Debug, Clone)]
pub struct StabilityConstants {
    pub p_max: DMatrix<f64>,
    pub tau: f64,
    pub rho: f64,
    pub gamma: f64,
    pub bounds: CostBounds,
}

impl StabilityConstants {
    /// `τ·ρ^elapsed`, the transition-norm envelope.
    pub fn phi_bound(&self, elapsed: usize) -> f64 {
        self.tau * self.rho.powi(elapsed as i32)
    }

    /// `τ‖B_u‖λ_max(P_max)/λ_min(R_min)`, the feedforward-gain envelope
    /// coefficient (the gain at lookahead `k` is bounded by this times `ρ^k`).
    pub fn kdi_coeff(&self, sys: &LinearSystem) -> f64 {
        self.tau * linalg::spectral_norm(&sys.b_u) * linalg::lambda_max(&self.p_max)
            / linalg::lambda_min(&self.bounds.r_min)
    }
}

/// Solve the DARE at the cost bounds and assemble `(τ, ρ, γ)`.
pub fn stability_constants(
    sys: &LinearSystem,
    bounds: &CostBounds,
    tol: &Tolerances,
) -> Result<StabilityConstants> {
    linalg::require_spd(&bounds.q_min, "Q_min", tol)?;
    linalg::require_spd(&bounds.r_min, "R_min", tol)?;
    let p_max = solve_dare(
        &bounds.q_max,
        &bounds.r_max,
        sys,
        tol.dare_tol,
        tol.dare_max_iter,
        tol,
    )?;
    let lam_max_p = linalg::lambda_max(&p_max);
    let lam_min_q = linalg::lambda_min(&bounds.q_min);
    let tau = (lam_max_p / lam_min_q).sqrt();
    let rho = (1.0 - lam_min_q / lam_max_p).max(0.0).sqrt();
    let apa = sys.a.transpose() * &p_max * &sys.a;
    let lam_apa = linalg::lambda_max(&apa).max(0.0);
    let gamma = lam_apa / (lam_min_q + lam_apa);
    if !(0.0..1.0).contains(&rho) || !(0.0..1.0).contains(&gamma) {
        return Err(Error::DegenerateConstants(format!(
            "rho {rho}, gamma {gamma} outside [0, 1)"
        )));
    }
    Ok(StabilityConstants {
        p_max,
        tau,
        rho,
        gamma,
        bounds: bounds.clone(),
    })
}
