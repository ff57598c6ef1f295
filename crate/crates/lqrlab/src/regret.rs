//! Dynamic regret: exact values, the quadratic regret formula, the
//! action-error decomposition, and the structural bound factors.
//!
//! The central identity is the cost-difference form of the regret: for any
//! online policy whose action depends only on the current state and the
//! available disturbance information,
//!
//! ```text
//!   J_π − J* = Σ_{t=1}^{T-1} (u_t^π − u_t*)' (R_t + B_u'P_{t+1}B_u) (u_t^π − u_t*)
//! ```
//!
//! where `u_t*` is the *optimal* action evaluated at the online trajectory's
//! own state `x_t^π` with the true disturbance tail — not the action the
//! offline trajectory took at its state. Both sides are computed
//! independently here and tested for equality.
//!
//! The per-step action error further splits into three parts
//! (truncation / prediction / matrices-approximation):
//!
//! ```text
//!   u_t^MPC − u_t* =  Σ_{i>t+W} K_t^{d,i} B_d d_i
//!                   − Σ_{i=t}^{t+W} K̄_t^{d,i} B_d e_{i|t}
//!                   + (K_t − K̄_t) x_t^MPC + Σ_{i=t}^{t+W}(K_t^{d,i} − K̄_t^{d,i}) B_d d_i
//! ```
//!
//! and the expansion matrices `M`, `N`, `L` rewrite the whole error in terms
//! of `(x_1, d, e)` for the bound's bookkeeping.

use nalgebra::{DMatrix, DVector};

use crate::config::Tolerances;
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{DisturbanceTrace, LinearSystem, PredictionStream};
use crate::mpc::MpcRollout;
use crate::offline::{optimal_rollout, OfflinePolicy};
use crate::riccati::StabilityConstants;

/// Per-step split of the action error into its three sources.
#[derive(Debug, Clone)]
pub struct StepDecomposition {
    /// `Σ_{i=t+W+1}^{T-1} K_t^{d,i} B_d d_i` — disturbances beyond the window.
    pub truncation: DVector<f64>,
    /// `−Σ_{i=t}^{t+W} K̄_t^{d,i} B_d e_{i|t}` — forecast errors inside it.
    pub prediction: DVector<f64>,
    /// `(K_t − K̄_t)x_t + Σ (K_t^{d,i} − K̄_t^{d,i}) B_d d_i` — the gap between
    /// windowed and full-horizon gains.
    pub approximation: DVector<f64>,
}

impl StepDecomposition {
    pub fn total(&self) -> DVector<f64> {
        &self.truncation + &self.prediction + &self.approximation
    }
}

#[derive(Debug, Clone)]
pub struct Decomposition {
    /// Entry `t-1` decomposes the error at stage `t`.
    pub steps: Vec<StepDecomposition>,
}

/// Everything [`dynamic_regret`] can say about one rollout.
#[derive(Debug, Clone)]
pub struct RegretReport {
    pub j_pi: f64,
    pub j_star: f64,
    /// `J_π − J*`.
    pub regret: f64,
    /// The quadratic-formula value of the same quantity.
    pub regret_formula: f64,
    /// `u_t^π − u_t*` at the online states.
    pub action_errors: Vec<DVector<f64>>,
    pub decomposition: Option<Decomposition>,
    pub bound: Option<RegretBoundFactors>,
}

impl RegretReport {
    /// Flat key-value record (one `name value` pair per line).
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("j_pi {:.16e}\n", self.j_pi));
        out.push_str(&format!("j_star {:.16e}\n", self.j_star));
        out.push_str(&format!("regret {:.16e}\n", self.regret));
        out.push_str(&format!("regret_formula {:.16e}\n", self.regret_formula));
        if let Some(b) = &self.bound {
            out.push_str(&format!("tau {:.16e}\n", b.tau));
            out.push_str(&format!("rho {:.16e}\n", b.rho));
            out.push_str(&format!("gamma {:.16e}\n", b.gamma));
            out.push_str(&format!("part_i_coeff {:.16e}\n", b.part_i_coeff));
            out.push_str(&format!("energy_d {:.16e}\n", b.energy_d));
            out.push_str(&format!("part_ii_coeff {:.16e}\n", b.part_ii_coeff));
            out.push_str(&format!("energy_e {:.16e}\n", b.energy_e));
        }
        out
    }

    /// Per-step decomposition as CSV (`t`, then one column per input
    /// component of each part).
    pub fn decomposition_to_csv(&self) -> Result<String> {
        let decomp = self
            .decomposition
            .as_ref()
            .ok_or(Error::GainsNotRetained)?;
        let n_u = decomp.steps.first().map_or(0, |s| s.truncation.len());
        let mut out = String::from("t");
        for part in ["truncation", "prediction", "approximation"] {
            for i in 1..=n_u {
                out.push_str(&format!(",{part}{i}"));
            }
        }
        out.push('\n');
        for (idx, s) in decomp.steps.iter().enumerate() {
            out.push_str(&(idx + 1).to_string());
            for v in s
                .truncation
                .iter()
                .chain(s.prediction.iter())
                .chain(s.approximation.iter())
            {
                out.push_str(&format!(",{v:.16e}"));
            }
            out.push('\n');
        }
        Ok(out)
    }
}

fn check_same_instance(
    rollout: &MpcRollout,
    policy: &OfflinePolicy,
    trace: &DisturbanceTrace,
) -> Result<()> {
    if rollout.horizon() != policy.horizon() || trace.horizon() != policy.horizon() {
        return Err(Error::InstanceMismatch(format!(
            "horizons differ: rollout {}, policy {}, trace {}",
            rollout.horizon(),
            policy.horizon(),
            trace.horizon()
        )));
    }
    Ok(())
}

/// Exact dynamic regret of a rollout, with the formula value alongside.
pub fn dynamic_regret(
    rollout: &MpcRollout,
    policy: &OfflinePolicy,
    trace: &DisturbanceTrace,
) -> Result<RegretReport> {
    check_same_instance(rollout, policy, trace)?;
    let j_pi = rollout.traj.total;
    let j_star = optimal_rollout(policy, trace)?.total;
    let t_horizon = policy.horizon();

    let mut action_errors = Vec::with_capacity(t_horizon - 1);
    let mut formula = 0.0;
    for t in 1..t_horizon {
        let u_star = policy.action(t, rollout.traj.x(t), trace)?;
        let err = rollout.traj.u(t) - u_star;
        let s = policy.costs.r(t)
            + policy.sys.b_u.transpose() * policy.pass.p(t + 1) * &policy.sys.b_u;
        formula += (err.transpose() * s * &err)[(0, 0)];
        action_errors.push(err);
    }

    Ok(RegretReport {
        j_pi,
        j_star,
        regret: j_pi - j_star,
        regret_formula: formula,
        action_errors,
        decomposition: None,
        bound: None,
    })
}

/// The quadratic regret formula on its own:
/// `Σ_t (u_t^π − u_t*)'(R_t + B_u'P_{t+1}B_u)(u_t^π − u_t*)`.
pub fn regret_formula_op(
    rollout: &MpcRollout,
    policy: &OfflinePolicy,
    trace: &DisturbanceTrace,
) -> Result<f64> {
    check_same_instance(rollout, policy, trace)?;
    let mut total = 0.0;
    for t in 1..policy.horizon() {
        let u_star = policy.action(t, rollout.traj.x(t), trace)?;
        let err = rollout.traj.u(t) - u_star;
        let s = policy.costs.r(t)
            + policy.sys.b_u.transpose() * policy.pass.p(t + 1) * &policy.sys.b_u;
        total += (err.transpose() * s * &err)[(0, 0)];
    }
    Ok(total)
}

/// Split every step's action error into truncation, prediction and
/// approximation parts. Requires the rollout to have retained its gains.
pub fn decompose_action_errors(
    rollout: &MpcRollout,
    policy: &OfflinePolicy,
    trace: &DisturbanceTrace,
    preds: &PredictionStream,
) -> Result<Decomposition> {
    check_same_instance(rollout, policy, trace)?;
    let steps = rollout.steps()?;
    let t_horizon = policy.horizon();
    let sys = &policy.sys;
    let n_u = sys.input_dim();

    let mut out = Vec::with_capacity(t_horizon - 1);
    for t in 1..t_horizon {
        let step = &steps[t - 1];
        let last = step.last_lookahead();

        let mut truncation = DVector::zeros(n_u);
        for i in last + 1..t_horizon {
            truncation += policy.feedforward_gain(t, i)? * (&sys.b_d * trace.d(i));
        }

        let mut prediction = DVector::zeros(n_u);
        for i in t..=last {
            prediction -= step.kd(i) * (&sys.b_d * preds.error(t, i)?);
        }

        let mut approximation = (policy.pass.k(t) - &step.k) * rollout.traj.x(t);
        for i in t..=last {
            approximation +=
                (policy.feedforward_gain(t, i)? - step.kd(i)) * (&sys.b_d * trace.d(i));
        }

        out.push(StepDecomposition {
            truncation,
            prediction,
            approximation,
        });
    }
    Ok(Decomposition { steps: out })
}

// ---------------------------------------------------------------------------
// Expansion matrices for the trajectory and action-error bookkeeping
// ---------------------------------------------------------------------------

/// `M_{i|t}`: the coefficient of `B_d d_i` in the expansion of `x_t^MPC`.
///
/// ```text
///   M_{i|t} = Σ_j Φ^MPC(t, j+1)(−B_u K̄_j^{d,i}) + 1{i ≤ t−1}·Φ^MPC(t, i+1)
/// ```
/// summed over steps `j ≤ t−1` whose windows cover `i`. Zero whenever no such
/// step exists.
pub fn m_matrix(rollout: &MpcRollout, sys: &LinearSystem, t: usize, i: usize) -> Result<DMatrix<f64>> {
    let steps = rollout.steps()?;
    let n = sys.state_dim();
    let mut m = DMatrix::<f64>::zeros(n, n);
    let j_lo = i.saturating_sub(rollout.w).max(1);
    let j_hi = (t - 1).min(i);
    for j in j_lo..=j_hi.min(steps.len()) {
        let step = &steps[j - 1];
        if i > step.last_lookahead() {
            continue;
        }
        m -= rollout.transition(t, j + 1)? * &sys.b_u * step.kd(i);
    }
    if i < t {
        m += rollout.transition(t, i + 1)?;
    }
    Ok(m)
}

/// Reconstruct `x_t^MPC` from `(x_1, d, e)` via the `M` expansion.
pub fn state_expansion(
    rollout: &MpcRollout,
    sys: &LinearSystem,
    trace: &DisturbanceTrace,
    preds: &PredictionStream,
    t: usize,
) -> Result<DVector<f64>> {
    let steps = rollout.steps()?;
    let t_horizon = rollout.horizon();
    let mut x = rollout.transition(t, 1)? * &trace.x1;
    let i_max = (t - 1 + rollout.w).min(t_horizon - 1);
    for i in 1..=i_max {
        x += m_matrix(rollout, sys, t, i)? * (&sys.b_d * trace.d(i));
    }
    for j in 1..t {
        let step = &steps[j - 1];
        for i in j..=step.last_lookahead() {
            x -= rollout.transition(t, j + 1)?
                * &sys.b_u
                * step.kd(i)
                * (&sys.b_d * preds.error(j, i)?);
        }
    }
    Ok(x)
}

/// `N_{i|t}`: coefficient of `B_d d_i` (or of `x_1` when `i = 0`) in the
/// expansion of `u_t^MPC − u_t*`.
pub fn n_matrix(
    rollout: &MpcRollout,
    policy: &OfflinePolicy,
    t: usize,
    i: usize,
) -> Result<DMatrix<f64>> {
    let steps = rollout.steps()?;
    let sys = &policy.sys;
    let step = &steps[t - 1];
    let k_diff = policy.pass.k(t) - &step.k;
    if i == 0 {
        return Ok(&k_diff * rollout.transition(t, 1)?);
    }
    let mut n = &k_diff * m_matrix(rollout, sys, t, i)?;
    if i >= t && i <= step.last_lookahead() {
        n += policy.feedforward_gain(t, i)? - step.kd(i);
    } else if i > step.last_lookahead() && i < policy.horizon() {
        n += policy.feedforward_gain(t, i)?;
    }
    Ok(n)
}

/// `L_{(i,j)|t}`: coefficient of `B_d e_{i|j}` in the same expansion.
/// Zero for `j > t`; for `j = t` it is `−K̄_t^{d,i}` (the direct prediction
/// term), and for `j < t` the error reaches `u_t` through the state.
pub fn l_matrix(
    rollout: &MpcRollout,
    policy: &OfflinePolicy,
    t: usize,
    i: usize,
    j: usize,
) -> Result<DMatrix<f64>> {
    let steps = rollout.steps()?;
    let sys = &policy.sys;
    let n_u = sys.input_dim();
    let n = sys.state_dim();
    if j > t {
        return Ok(DMatrix::zeros(n_u, n));
    }
    let step_j = &steps[j - 1];
    if i < j || i > step_j.last_lookahead() {
        return Ok(DMatrix::zeros(n_u, n));
    }
    if j == t {
        return Ok(-step_j.kd(i));
    }
    let k_diff = policy.pass.k(t) - &steps[t - 1].k;
    Ok(-(&k_diff * rollout.transition(t, j + 1)? * &sys.b_u * step_j.kd(i)))
}

/// Reconstruct `u_t^MPC − u_t*` from `(x_1, d, e)` via the `N`/`L` expansion.
pub fn action_error_expansion(
    rollout: &MpcRollout,
    policy: &OfflinePolicy,
    trace: &DisturbanceTrace,
    preds: &PredictionStream,
    t: usize,
) -> Result<DVector<f64>> {
    let steps = rollout.steps()?;
    let sys = &policy.sys;
    let t_horizon = policy.horizon();
    let mut u = n_matrix(rollout, policy, t, 0)? * &trace.x1;
    for i in 1..t_horizon {
        u += n_matrix(rollout, policy, t, i)? * (&sys.b_d * trace.d(i));
    }
    for j in 1..=t {
        let step_j = &steps[j - 1];
        for i in j..=step_j.last_lookahead() {
            u += l_matrix(rollout, policy, t, i, j)? * (&sys.b_d * preds.error(j, i)?);
        }
    }
    Ok(u)
}

// ---------------------------------------------------------------------------
// Bound factors
// ---------------------------------------------------------------------------

/// The explicit constants entering the bound machinery.
///
/// `c1` bounds `‖K_t^{d,i}‖` and `‖K̄_t^{d,i}‖` by `c1·ρ^{i−t}`; the gain
/// differences obey `‖K_t − K̄_t‖ ≤ α3·γ^W` and
/// `‖K_t^{d,i} − K̄_t^{d,i}‖ ≤ α4·γ^{W−i+t}ρ^{i−t}` (so `c2 = α3`,
/// `c3 = α4`); `c4`, `c5` bound the trajectory-expansion matrices
/// `‖M_{i|t}‖ ≤ c4·ρ^{t−i−1}` (past) and `≤ c5·ρ^{i−t+1}` (future).
#[derive(Debug, Clone, Copy)]
pub struct BoundConstants {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    pub c5: f64,
    pub alpha3: f64,
    pub alpha4: f64,
}

/// Structural factors of the regret bound
///
/// ```text
///   Regret ≤ α1·partI_coeff·energy_d + α2·partII_coeff·energy_e
/// ```
///
/// with `partI_coeff = [ (γ^W+ρ^W)/(1−ρ) + γ(ρ^W−γ^W)/(ρ−γ) ]²` and
/// `partII_coeff = (1/(1−ρ) + γ^W/(1−ρ²))(1 + γ^W/(1−ρ))`. The absolute
/// prefactors `α1, α2` have no closed form, so the evaluator exposes the two
/// products separately and tests assert decay/monotonicity rather than
/// absolute domination.
#[derive(Debug, Clone)]
pub struct RegretBoundFactors {
    pub tau: f64,
    pub rho: f64,
    pub gamma: f64,
    pub w: usize,
    pub part_i_coeff: f64,
    /// `‖x_1‖² + Σ_t ‖B_d d_t‖²`.
    pub energy_d: f64,
    pub part_ii_coeff: f64,
    /// `Σ_j Σ_{i=j}^{j+W} ρ^{i−j} ‖B_d e_{i|j}‖²`.
    pub energy_e: f64,
    pub constants: BoundConstants,
}

impl RegretBoundFactors {
    pub fn part_i(&self) -> f64 {
        self.part_i_coeff * self.energy_d
    }

    pub fn part_ii(&self) -> f64 {
        self.part_ii_coeff * self.energy_e
    }
}

/// `partI_coeff` alone, exposed for monotonicity sweeps.
///
/// At `ρ = γ` the difference quotient `γ(ρ^W−γ^W)/(ρ−γ)` degenerates and is
/// replaced by its analytic limit `W·γ^W`.
pub fn part_i_coeff(rho: f64, gamma: f64, w: usize) -> f64 {
    let gw = gamma.powi(w as i32);
    let rw = rho.powi(w as i32);
    let base = (gw + rw) / (1.0 - rho);
    let diffq = if (rho - gamma).abs() <= 1e-12 * rho.abs().max(1.0) {
        w as f64 * gw
    } else {
        gamma * (rw - gw) / (rho - gamma)
    };
    (base + diffq).powi(2)
}

/// The explicit constants `c1..c5, α3, α4` from the stability data alone.
pub fn bound_constants(
    constants: &StabilityConstants,
    sys: &LinearSystem,
    tol: &Tolerances,
) -> Result<BoundConstants> {
    let (rho, gamma, tau) = (constants.rho, constants.gamma, constants.tau);
    let norm_a = linalg::spectral_norm(&sys.a);
    let norm_bu = linalg::spectral_norm(&sys.b_u);
    let lam_max_p = linalg::lambda_max(&constants.p_max);
    let lam_min_q = linalg::lambda_min(&constants.bounds.q_min);
    let lam_min_r = linalg::lambda_min(&constants.bounds.r_min);
    let r_min_inv = linalg::sym_power(&constants.bounds.r_min, -1.0, tol)?;
    let bu_rinv_but = linalg::spectral_norm(&(&sys.b_u * r_min_inv * sys.b_u.transpose()));

    let shared = 2.0 * (norm_bu / lam_min_r) * lam_max_p.powi(4) / lam_min_q.powi(2)
        * (bu_rinv_but + 1.0)
        / (1.0 - gamma);
    let alpha3 = norm_a * shared;
    let alpha4 = shared;
    let c1 = tau * norm_bu * lam_max_p / lam_min_r;
    let c5 = bu_rinv_but * lam_max_p * tau * tau / (1.0 - rho * rho);
    let c4 = c5 + tau;
    Ok(BoundConstants {
        c1,
        c2: alpha3,
        c3: alpha4,
        c4,
        c5,
        alpha3,
        alpha4,
    })
}

/// Evaluate every bound factor for one instance/prediction pair.
pub fn regret_bound_factors(
    constants: &StabilityConstants,
    w: usize,
    trace: &DisturbanceTrace,
    preds: &PredictionStream,
    sys: &LinearSystem,
    tol: &Tolerances,
) -> Result<RegretBoundFactors> {
    let (rho, gamma, tau) = (constants.rho, constants.gamma, constants.tau);
    if rho >= 1.0 || gamma >= 1.0 {
        return Err(Error::DegenerateConstants(format!(
            "rho {rho} or gamma {gamma} at 1: bound factors blow up"
        )));
    }
    if preds.window() != w {
        return Err(Error::InstanceMismatch(format!(
            "prediction window {} vs requested W {}",
            preds.window(),
            w
        )));
    }

    let gw = gamma.powi(w as i32);
    let part_i = part_i_coeff(rho, gamma, w);
    let part_ii = (1.0 / (1.0 - rho) + gw / (1.0 - rho * rho)) * (1.0 + gw / (1.0 - rho));

    let mut energy_d = trace.x1.norm_squared();
    for d in &trace.d {
        energy_d += (&sys.b_d * d).norm_squared();
    }

    let mut energy_e = 0.0;
    for j in 1..trace.horizon() {
        for i in j..=preds.last_predicted(j) {
            let e = preds.error(j, i)?;
            energy_e += rho.powi((i - j) as i32) * (&sys.b_d * e).norm_squared();
        }
    }

    Ok(RegretBoundFactors {
        tau,
        rho,
        gamma,
        w,
        part_i_coeff: part_i,
        energy_d,
        part_ii_coeff: part_ii,
        energy_e,
        constants: bound_constants(constants, sys, tol)?,
    })
}

/// Verify the auxiliary quadratic-sum inequality
///
/// ```text
///   Σ_t (Σ_i a_i^t y_i)² ≤ max_i { Σ_t a_i^t (Σ_j a_j^t) } · Σ_i y_i²
/// ```
///
/// for a nonnegative coefficient matrix `a` (rows indexed by `t`). Used as a
/// property-test utility for the bound's summation step.
pub fn quadratic_sum_inequality_check(a: &DMatrix<f64>, y: &DVector<f64>) -> Result<bool> {
    for (row, col) in (0..a.nrows()).flat_map(|r| (0..a.ncols()).map(move |c| (r, c))) {
        let value = a[(row, col)];
        if value < 0.0 {
            return Err(Error::NegativeCoefficient { row, col, value });
        }
    }
    assert_eq!(a.ncols(), y.len(), "one coefficient column per y entry");

    let mut lhs = 0.0;
    for t in 0..a.nrows() {
        let alpha: f64 = (0..a.ncols()).map(|i| a[(t, i)] * y[i]).sum();
        lhs += alpha * alpha;
    }

    let row_sums: Vec<f64> = (0..a.nrows())
        .map(|t| (0..a.ncols()).map(|j| a[(t, j)]).sum())
        .collect();
    let mut best = 0.0f64;
    for i in 0..a.ncols() {
        let s: f64 = (0..a.nrows()).map(|t| a[(t, i)] * row_sums[t]).sum();
        best = best.max(s);
    }
    let rhs = best * y.norm_squared();
    Ok(lhs <= rhs + 1e-12 * (1.0 + rhs.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{
        generate_instance, make_predictions, CostSchedule, GeneratorProfile, Instance, NoiseSpec,
    };
    use crate::mpc::{mpc_rollout, MpcOptions};
    use crate::offline::build_offline_policy;
    use crate::riccati::stability_constants;
    use crate::rng::Stream;

    fn tol() -> Tolerances {
        Tolerances::default()
    }

    fn run(
        inst: &Instance,
        w: usize,
        noise: NoiseSpec,
    ) -> (MpcRollout, OfflinePolicy, PredictionStream) {
        let constants = stability_constants(&inst.sys, &inst.bounds, &tol()).unwrap();
        let preds = make_predictions(&inst.trace, w, noise, inst.seed);
        let rollout = mpc_rollout(
            &inst.sys,
            &inst.costs,
            &constants.p_max,
            &inst.trace,
            &preds,
            &MpcOptions::default(),
            &tol(),
        )
        .unwrap();
        let policy = build_offline_policy(&inst.sys, &inst.costs, &tol()).unwrap();
        (rollout, policy, preds)
    }

    #[test]
    fn identical_policies_have_zero_formula() {
        let inst = generate_instance(1, 20, &GeneratorProfile::paper()).unwrap();
        let (rollout, policy, _) = run(&inst, 19, NoiseSpec::Accurate);
        let report = dynamic_regret(&rollout, &policy, &inst.trace).unwrap();
        assert!(report.regret.abs() <= 1e-9 * (1.0 + report.j_star.abs()));
        assert!(report.regret_formula.abs() <= 1e-9 * (1.0 + report.j_star.abs()));
    }

    #[test]
    fn zero_instance_has_exactly_zero_regret() {
        // x1 = 0, d ≡ 0, accurate predictions: both trajectories sit at the
        // origin, so the regret is 0.0 with no float noise at all.
        let base = generate_instance(99, 15, &GeneratorProfile::paper()).unwrap();
        let inst = Instance {
            trace: crate::model::DisturbanceTrace {
                x1: DVector::zeros(2),
                d: vec![DVector::zeros(1); 14],
            },
            ..base
        };
        let (rollout, policy, _) = run(&inst, 3, NoiseSpec::Accurate);
        let report = dynamic_regret(&rollout, &policy, &inst.trace).unwrap();
        assert_eq!(report.j_pi, 0.0);
        assert_eq!(report.j_star, 0.0);
        assert_eq!(report.regret, 0.0);
        assert_eq!(report.regret_formula, 0.0);
    }

    #[test]
    fn degenerate_constants_are_rejected() {
        let inst = generate_instance(1, 10, &GeneratorProfile::paper()).unwrap();
        let mut constants = stability_constants(&inst.sys, &inst.bounds, &tol()).unwrap();
        constants.rho = 1.0;
        let preds = make_predictions(&inst.trace, 2, NoiseSpec::Accurate, 1);
        let err = regret_bound_factors(&constants, 2, &inst.trace, &preds, &inst.sys, &tol());
        assert!(matches!(err, Err(Error::DegenerateConstants(_))));
    }

    #[test]
    fn regret_matches_formula_across_windows_and_noise() {
        for (seed, w, noise) in [
            (2u64, 0usize, NoiseSpec::Accurate),
            (3, 2, NoiseSpec::Accurate),
            (4, 5, NoiseSpec::Iid { snr: 0.3 }),
            (5, 3, NoiseSpec::Iid { snr: 1.0 }),
            (6, 8, NoiseSpec::DepthGrowing { snr: 0.2, growth: 1.3 }),
        ] {
            let inst = generate_instance(seed, 30, &GeneratorProfile::paper()).unwrap();
            let (rollout, policy, _) = run(&inst, w, noise);
            let report = dynamic_regret(&rollout, &policy, &inst.trace).unwrap();
            let gap = (report.regret - report.regret_formula).abs();
            assert!(
                gap <= 1e-8 * (1.0 + report.j_star.abs()),
                "seed {seed} W {w}: regret {} vs formula {}",
                report.regret,
                report.regret_formula
            );
            assert!(report.regret >= -1e-8 * (1.0 + report.j_star.abs()));
        }
    }

    #[test]
    fn single_deviation_reduces_to_one_quadratic_term() {
        let inst = generate_instance(7, 15, &GeneratorProfile::paper()).unwrap();
        let policy = build_offline_policy(&inst.sys, &inst.costs, &tol()).unwrap();
        let delta = DVector::from_element(1, 0.7);
        let deviate_at = 5;

        // Roll the "optimal except one step" policy forward.
        let mut x = inst.trace.x1.clone();
        let mut j_dev = 0.0;
        for t in 1..15 {
            let mut u = policy.action(t, &x, &inst.trace).unwrap();
            if t == deviate_at {
                u += &delta;
            }
            j_dev += crate::offline::stage_cost(&inst.costs, t, &x, &u);
            x = inst.sys.step(&x, &u, inst.trace.d(t));
        }
        j_dev += (x.transpose() * inst.costs.terminal() * &x)[(0, 0)];

        let j_star = optimal_rollout(&policy, &inst.trace).unwrap().total;
        let s = inst.costs.r(deviate_at)
            + inst.sys.b_u.transpose() * policy.pass.p(deviate_at + 1) * &inst.sys.b_u;
        let formula = (delta.transpose() * s * &delta)[(0, 0)];
        let direct = j_dev - j_star;
        assert!(
            (direct - formula).abs() <= 1e-8 * (1.0 + j_star.abs()),
            "direct {direct} vs formula {formula}"
        );
    }

    #[test]
    fn decomposition_reconstructs_every_action_error() {
        let inst = generate_instance(8, 25, &GeneratorProfile::paper()).unwrap();
        let (rollout, policy, preds) = run(&inst, 4, NoiseSpec::Iid { snr: 0.4 });
        let report = dynamic_regret(&rollout, &policy, &inst.trace).unwrap();
        let decomp = decompose_action_errors(&rollout, &policy, &inst.trace, &preds).unwrap();
        for t in 1..25 {
            let gap = (&report.action_errors[t - 1] - decomp.steps[t - 1].total()).norm();
            assert!(gap <= 1e-8, "t {t}: {gap}");
        }
    }

    #[test]
    fn accurate_predictions_zero_the_prediction_part() {
        let inst = generate_instance(9, 20, &GeneratorProfile::paper()).unwrap();
        let (rollout, policy, preds) = run(&inst, 3, NoiseSpec::Accurate);
        let decomp = decompose_action_errors(&rollout, &policy, &inst.trace, &preds).unwrap();
        for s in &decomp.steps {
            assert_eq!(s.prediction.norm(), 0.0);
        }
    }

    #[test]
    fn full_window_zeroes_the_truncation_part() {
        let inst = generate_instance(10, 15, &GeneratorProfile::paper()).unwrap();
        let (rollout, policy, preds) = run(&inst, 14, NoiseSpec::Iid { snr: 0.5 });
        let decomp = decompose_action_errors(&rollout, &policy, &inst.trace, &preds).unwrap();
        for s in &decomp.steps {
            assert_eq!(s.truncation.norm(), 0.0);
        }
    }

    #[test]
    fn constant_max_costs_zero_the_approximation_part() {
        // With Q_t ≡ Q_max, R_t ≡ R_max and terminal cost P_max itself, both
        // the windowed and the offline pass sit on the DARE fixed point, so
        // K̄ = K everywhere.
        let profile = GeneratorProfile::paper();
        let bounds = profile.bounds();
        let constants = stability_constants(&profile.system, &bounds, &tol()).unwrap();
        let t_horizon = 18;
        let mut q = vec![bounds.q_max.clone(); t_horizon];
        *q.last_mut().unwrap() = constants.p_max.clone();
        let costs =
            CostSchedule::new(q, vec![bounds.r_max.clone(); t_horizon - 1]).unwrap();
        let base = generate_instance(11, t_horizon, &profile).unwrap();
        let preds = make_predictions(&base.trace, 4, NoiseSpec::Iid { snr: 0.3 }, 11);
        let rollout = mpc_rollout(
            &profile.system,
            &costs,
            &constants.p_max,
            &base.trace,
            &preds,
            &MpcOptions::default(),
            &tol(),
        )
        .unwrap();
        let policy = build_offline_policy(&profile.system, &costs, &tol()).unwrap();
        let decomp = decompose_action_errors(&rollout, &policy, &base.trace, &preds).unwrap();
        for (idx, s) in decomp.steps.iter().enumerate() {
            assert!(
                s.approximation.norm() <= 1e-8,
                "t {}: {}",
                idx + 1,
                s.approximation.norm()
            );
        }
    }

    #[test]
    fn state_expansion_reproduces_the_trajectory() {
        let inst = generate_instance(12, 22, &GeneratorProfile::paper()).unwrap();
        let (rollout, _, preds) = run(&inst, 5, NoiseSpec::Iid { snr: 0.6 });
        for t in 1..=22 {
            let rebuilt = state_expansion(&rollout, &inst.sys, &inst.trace, &preds, t).unwrap();
            let gap = (rollout.traj.x(t) - rebuilt).norm();
            assert!(gap <= 1e-8, "t {t}: {gap}");
        }
    }

    #[test]
    fn action_error_expansion_matches_direct_errors() {
        let inst = generate_instance(13, 22, &GeneratorProfile::paper()).unwrap();
        let (rollout, policy, preds) = run(&inst, 5, NoiseSpec::Iid { snr: 0.6 });
        let report = dynamic_regret(&rollout, &policy, &inst.trace).unwrap();
        for t in 1..22 {
            let rebuilt =
                action_error_expansion(&rollout, &policy, &inst.trace, &preds, t).unwrap();
            let gap = (&report.action_errors[t - 1] - rebuilt).norm();
            assert!(gap <= 1e-8, "t {t}: {gap}");
        }
    }

    #[test]
    fn m_matrices_obey_their_envelopes() {
        let inst = generate_instance(14, 30, &GeneratorProfile::paper()).unwrap();
        let constants = stability_constants(&inst.sys, &inst.bounds, &tol()).unwrap();
        let (rollout, _, preds) = run(&inst, 6, NoiseSpec::Accurate);
        let factors =
            regret_bound_factors(&constants, 6, &inst.trace, &preds, &inst.sys, &tol()).unwrap();
        let (c4, c5) = (factors.constants.c4, factors.constants.c5);
        for t in 2..=30 {
            for i in 1..=(t - 1 + 6).min(29) {
                let norm = linalg::spectral_norm(&m_matrix(&rollout, &inst.sys, t, i).unwrap());
                let bound = if i < t {
                    c4 * constants.rho.powi((t - i - 1) as i32)
                } else {
                    c5 * constants.rho.powi((i - t + 1) as i32)
                };
                assert!(norm <= bound + 1e-9, "M(i={i}|t={t}): {norm} > {bound}");
            }
        }
    }

    #[test]
    fn part_i_coeff_hand_value_and_limit() {
        // ρ=0.5, γ=0.4, W=2: [2(0.16+0.25) + 0.4·(0.25−0.16)/0.1]² = 1.3924.
        let v = part_i_coeff(0.5, 0.4, 2);
        assert!((v - 1.3924).abs() < 1e-12, "{v}");
        // The ρ = γ limit replaces the quotient with W·γ^W.
        let lim = part_i_coeff(0.4, 0.4, 3);
        let base = (2.0 * 0.4f64.powi(3)) / 0.6 + 3.0 * 0.4f64.powi(3);
        assert!((lim - base * base).abs() < 1e-12);
        // Approaching the limit continuously.
        let near = part_i_coeff(0.4 + 1e-9, 0.4, 3);
        assert!((near - lim).abs() < 1e-6);
    }

    #[test]
    fn part_i_coeff_decreases_and_vanishes() {
        for (rho, gamma) in [(0.3, 0.6), (0.9, 0.2), (0.85, 0.85), (0.99, 0.97)] {
            let mut prev = part_i_coeff(rho, gamma, 1);
            for w in 2..=50 {
                let cur = part_i_coeff(rho, gamma, w);
                assert!(cur < prev, "ρ={rho} γ={gamma} W={w}: {cur} ≥ {prev}");
                prev = cur;
            }
            // Vanishes eventually.
            assert!(part_i_coeff(rho, gamma, 2000) < 1e-6 * part_i_coeff(rho, gamma, 1));
        }
    }

    #[test]
    fn factors_on_a_real_instance() {
        let inst = generate_instance(15, 25, &GeneratorProfile::paper()).unwrap();
        let constants = stability_constants(&inst.sys, &inst.bounds, &tol()).unwrap();

        let accurate = make_predictions(&inst.trace, 4, NoiseSpec::Accurate, 15);
        let f = regret_bound_factors(&constants, 4, &inst.trace, &accurate, &inst.sys, &tol()).unwrap();
        assert_eq!(f.energy_e, 0.0);
        assert_eq!(f.part_ii(), 0.0);
        let mut expected_d = inst.trace.x1.norm_squared();
        for d in &inst.trace.d {
            expected_d += (&inst.sys.b_d * d).norm_squared();
        }
        assert!((f.energy_d - expected_d).abs() < 1e-12);

        let noisy = make_predictions(&inst.trace, 4, NoiseSpec::Iid { snr: 0.5 }, 15);
        let f = regret_bound_factors(&constants, 4, &inst.trace, &noisy, &inst.sys, &tol()).unwrap();
        assert!(f.energy_e > 0.0);
        assert!(f.constants.c1 > 0.0 && f.constants.alpha3 >= f.constants.alpha4);
        assert!(f.constants.c4 > f.constants.c5);
    }

    #[test]
    fn quadratic_sum_inequality_cases() {
        // All-zero coefficients: 0 ≤ 0.
        let a = DMatrix::zeros(3, 4);
        let y = DVector::from_row_slice(&[1.0, -2.0, 3.0, 0.5]);
        assert!(quadratic_sum_inequality_check(&a, &y).unwrap());

        // Rank-one tight case: single row, single column gives equality.
        let a = DMatrix::from_element(1, 1, 2.5);
        let y = DVector::from_element(1, -1.3);
        assert!(quadratic_sum_inequality_check(&a, &y).unwrap());

        // Negative coefficients are a domain error.
        let mut a = DMatrix::zeros(2, 2);
        a[(1, 0)] = -0.1;
        assert!(matches!(
            quadratic_sum_inequality_check(&a, &DVector::zeros(2)),
            Err(Error::NegativeCoefficient { row: 1, col: 0, .. })
        ));

        // Random nonnegative instances.
        let mut rng = Stream::new(55, &[12]);
        for _ in 0..1000 {
            let rows = 1 + (rng.uniform() * 6.0) as usize;
            let cols = 1 + (rng.uniform() * 6.0) as usize;
            let a = DMatrix::from_fn(rows, cols, |_, _| rng.uniform() * 3.0);
            let y = DVector::from_fn(cols, |_, _| 4.0 * rng.standard_normal());
            assert!(quadratic_sum_inequality_check(&a, &y).unwrap());
        }
    }

    #[test]
    fn report_serialization_shapes() {
        let inst = generate_instance(16, 12, &GeneratorProfile::paper()).unwrap();
        let (rollout, policy, preds) = run(&inst, 3, NoiseSpec::Iid { snr: 0.2 });
        let mut report = dynamic_regret(&rollout, &policy, &inst.trace).unwrap();
        report.decomposition =
            Some(decompose_action_errors(&rollout, &policy, &inst.trace, &preds).unwrap());
        let kv = report.to_kv();
        assert!(kv.contains("regret "));
        let csv = report.decomposition_to_csv().unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "t,truncation1,prediction1,approximation1");
        assert_eq!(lines.len(), 12); // header + T−1 steps
    }
}
