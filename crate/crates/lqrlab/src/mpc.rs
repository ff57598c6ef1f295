//! Receding-horizon control with terminal cost `P_max`.
//!
//! At each stage the controller solves the `W`-step problem
//!
//! ```text
//!   min Σ_{k=t}^{t+W} (x_k'Q_k x_k + u_k'R_k u_k) + x_{t+W+1}' P_max x_{t+W+1}
//!   s.t. x_{k+1} = A x_k + B_u u_k + B_d d_{k|t}
//! ```
//!
//! and applies only the first input. Instead of a numeric solve, the applied
//! action is assembled from the windowed backward pass,
//! `u_t = −K̄_t x_t − Σ_{i=t}^{t+W} K̄_t^{d,i} B_d d_{i|t}`, which is the
//! optimal-policy representation specialized to the windowed subproblem.
//! [`mpc_qp_crosscheck`] solves the same subproblem by state elimination so
//! the two routes can be compared bit-for-bit in tests.
//!
//! Once fewer than `W+1` stages remain (`t > T−W−1`), the window reaches the
//! true terminal cost and the controller switches to the exact finite-horizon
//! gains, still fed with predicted disturbances: the online information model
//! never grants the true future `d_i`, so predictions are substituted where
//! the offline policy would read them. With accurate predictions both
//! branches coincide with the hindsight-optimal action.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};

use crate::config::Tolerances;
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{CostSchedule, DisturbanceTrace, LinearSystem, PredictionStream};
use crate::offline::{rollout_inputs, stage_cost, Trajectory};
use crate::riccati::{backward_pass_slices, BackwardPass, PassSource};

/// Which regime produced a step's action.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    /// Windowed gains with terminal `P_max` (stages `t ≤ T−W−1`).
    Windowed,
    /// Exact finite-horizon gains with terminal `Q_T` (stages `t > T−W−1`).
    ExactTail,
}

/// The windowed gain set at one stage.
#[derive(Debug, Clone)]
pub struct MpcGains {
    pub t: usize,
    pub w: usize,
    /// `P̄_{t+τ|t}` for `τ = 0..=W+1`; the last entry is `P_max` exactly.
    pub pbar: Vec<DMatrix<f64>>,
    /// `K̄_{t+τ|t}` for `τ = 0..=W`.
    pub kbar_local: Vec<DMatrix<f64>>,
    /// `K̄_t^{d,i}` for `i = t..=t+W`.
    pub kbar_d: Vec<DMatrix<f64>>,
}

impl MpcGains {
    /// The applied state gain `K̄_t = K̄_{t|t}`.
    pub fn kbar(&self) -> &DMatrix<f64> {
        &self.kbar_local[0]
    }

    /// `P̄_{stage|t}`, `t ≤ stage ≤ t+W+1`.
    pub fn pbar(&self, stage: usize) -> &DMatrix<f64> {
        &self.pbar[stage - self.t]
    }

    /// `K̄_t^{d,i}`, `t ≤ i ≤ t+W`.
    pub fn kbar_d(&self, i: usize) -> &DMatrix<f64> {
        &self.kbar_d[i - self.t]
    }

    /// Predicted transition `Φ̄_t(t+j, t+i) = (A−B_uK̄_{t+j−1|t})⋯(A−B_uK̄_{t+i|t})`,
    /// `0 ≤ i ≤ j ≤ W+1`.
    pub fn phibar(&self, sys: &LinearSystem, j: usize, i: usize) -> DMatrix<f64> {
        assert!(i <= j && j <= self.w + 1);
        let n = sys.state_dim();
        let mut out = DMatrix::identity(n, n);
        for tau in i..j {
            out = (&sys.a - &sys.b_u * &self.kbar_local[tau]) * out;
        }
        out
    }
}

/// Build the stage-`t` windowed gains: a backward pass over
/// `{Q_i, R_i}_{i=t..t+W}` seeded with `P_max`, then the feedforward gains
/// through the predicted transitions.
///
/// Valid only in the windowed regime `1 ≤ t ≤ T−W−1`; outside it the caller
/// must take the exact-tail path.
pub fn mpc_gains_at(
    t: usize,
    sys: &LinearSystem,
    costs: &CostSchedule,
    p_max: &DMatrix<f64>,
    w: usize,
    tol: &Tolerances,
) -> Result<MpcGains> {
    let t_horizon = costs.horizon();
    let last_windowed = t_horizon.saturating_sub(w + 1);
    if t == 0 || t > last_windowed {
        return Err(Error::WindowedRegime { t, last_windowed });
    }
    let pass = backward_pass_slices(
        &costs.q[t - 1..t + w],
        &costs.r[t - 1..t + w],
        p_max,
        sys,
        t,
        PassSource::MpcLocal { t },
        tol,
    )?;
    let kbar_d = feedforward_from_pass(t, &pass, sys, costs.r(t), tol)?;
    Ok(MpcGains {
        t,
        w,
        pbar: pass.p,
        kbar_local: pass.k,
        kbar_d,
    })
}

/// Feedforward gains `(R_t + B_u'P_{t+1}B_u)^{-1} B_u' Φ(i+1, t+1)' P_{i+1}`
/// for every `i` covered by the pass, accumulating the transposed transition
/// incrementally.
fn feedforward_from_pass(
    t: usize,
    pass: &BackwardPass,
    sys: &LinearSystem,
    r_t: &DMatrix<f64>,
    tol: &Tolerances,
) -> Result<Vec<DMatrix<f64>>> {
    let n = sys.state_dim();
    let s = linalg::symmetrize(&(r_t + sys.b_u.transpose() * pass.p(t + 1) * &sys.b_u));
    let last = pass.end() - 1; // last stage with a gain
    let mut out = Vec::with_capacity(last - t + 1);
    let mut phi_t = DMatrix::<f64>::identity(n, n); // Φ(i+1, t+1)'
    for i in t..=last {
        let rhs = sys.b_u.transpose() * &phi_t * pass.p(i + 1);
        out.push(linalg::solve_spd(&s, &rhs, tol)?);
        if i < last {
            let closed = &sys.a - &sys.b_u * pass.k(i + 1);
            phi_t *= closed.transpose();
        }
    }
    Ok(out)
}

/// The gains actually applied at one rollout step, retained for the
/// action-error decomposition.
#[derive(Debug, Clone)]
pub struct StepGains {
    pub t: usize,
    pub branch: Branch,
    /// State gain applied at `t` (`K̄_t` or, on the tail, `K_t`).
    pub k: DMatrix<f64>,
    /// Feedforward gains for `i = t..=min(t+W, T−1)`.
    pub kd: Vec<DMatrix<f64>>,
}

impl StepGains {
    /// Last stage `i` with a feedforward gain.
    pub fn last_lookahead(&self) -> usize {
        self.t + self.kd.len() - 1
    }

    /// `K^{d,i}` applied at this step, `t ≤ i ≤ last_lookahead()`.
    pub fn kd(&self, i: usize) -> &DMatrix<f64> {
        &self.kd[i - self.t]
    }

    /// The step's control law: `u = −K x − Σ_i K^{d,i} B_d d_{i|t}`.
    pub fn apply(
        &self,
        x: &DVector<f64>,
        preds: &PredictionStream,
        sys: &LinearSystem,
    ) -> Result<DVector<f64>> {
        let mut u = -(&self.k * x);
        for i in self.t..=self.last_lookahead() {
            u -= self.kd(i) * (&sys.b_d * preds.predicted(self.t, i)?);
        }
        Ok(u)
    }
}

/// The MPC action of Algorithm 1 at a windowed stage.
pub fn mpc_action(
    t: usize,
    x: &DVector<f64>,
    preds: &PredictionStream,
    gains: &MpcGains,
    sys: &LinearSystem,
) -> Result<DVector<f64>> {
    assert_eq!(t, gains.t, "gains were built for stage {}", gains.t);
    let mut u = -(gains.kbar() * x);
    for i in t..=t + gains.w {
        u -= gains.kbar_d(i) * (&sys.b_d * preds.predicted(t, i)?);
    }
    Ok(u)
}

/// Exact-tail gains at stage `t > T−W−1`: the finite-horizon pass over the
/// remaining stages with terminal `Q_T`, packaged like any other step.
fn tail_gains(
    t: usize,
    sys: &LinearSystem,
    costs: &CostSchedule,
    tol: &Tolerances,
) -> Result<StepGains> {
    let t_horizon = costs.horizon();
    let pass = backward_pass_slices(
        &costs.q[t - 1..t_horizon - 1],
        &costs.r[t - 1..],
        costs.terminal(),
        sys,
        t,
        PassSource::Offline,
        tol,
    )?;
    let kd = feedforward_from_pass(t, &pass, sys, costs.r(t), tol)?;
    Ok(StepGains {
        t,
        branch: Branch::ExactTail,
        k: pass.k(t).clone(),
        kd,
    })
}

/// The gains Algorithm 1 applies at stage `t`, whichever regime it is in.
pub fn step_gains(
    t: usize,
    sys: &LinearSystem,
    costs: &CostSchedule,
    p_max: &DMatrix<f64>,
    w: usize,
    tol: &Tolerances,
) -> Result<StepGains> {
    let last_windowed = costs.horizon().saturating_sub(w + 1);
    if t <= last_windowed {
        let gains = mpc_gains_at(t, sys, costs, p_max, w, tol)?;
        Ok(StepGains {
            t,
            branch: Branch::Windowed,
            k: gains.kbar().clone(),
            kd: gains.kbar_d,
        })
    } else {
        tail_gains(t, sys, costs, tol)
    }
}

/// One-shot MPC action at `(t, x)` without running a rollout.
pub fn mpc_action_at(
    t: usize,
    x: &DVector<f64>,
    preds: &PredictionStream,
    sys: &LinearSystem,
    costs: &CostSchedule,
    p_max: &DMatrix<f64>,
    tol: &Tolerances,
) -> Result<DVector<f64>> {
    step_gains(t, sys, costs, p_max, preds.window(), tol)?.apply(x, preds, sys)
}

/// Options for [`mpc_rollout`].
#[derive(Debug, Clone)]
pub struct MpcOptions {
    /// Keep every step's gains on the rollout (needed by the regret
    /// decomposition and the closed-loop transition map).
    pub retain_gains: bool,
}

impl Default for MpcOptions {
    fn default() -> Self {
        MpcOptions { retain_gains: true }
    }
}

/// A completed MPC run: the trajectory under the *true* disturbances plus
/// (optionally) the per-step gains that produced it.
pub struct MpcRollout {
    pub traj: Trajectory,
    pub w: usize,
    steps: Option<Vec<StepGains>>,
    /// `phi[t0-1][t-t0] = Φ^MPC(t, t0)` under the applied gains.
    phi: OnceLock<Vec<Vec<DMatrix<f64>>>>,
    sys: LinearSystem,
}

impl MpcRollout {
    pub fn horizon(&self) -> usize {
        self.traj.horizon()
    }

    /// Per-step gains; an error if the rollout was run without retention.
    pub fn steps(&self) -> Result<&[StepGains]> {
        self.steps.as_deref().ok_or(Error::GainsNotRetained)
    }

    pub fn branch_of(&self, t: usize) -> Result<Branch> {
        Ok(self.steps()?[t - 1].branch)
    }

    fn phi_table(&self) -> Result<&Vec<Vec<DMatrix<f64>>>> {
        let steps = self.steps()?;
        Ok(self.phi.get_or_init(|| {
            let t_horizon = self.horizon();
            let n = self.sys.state_dim();
            let mut table = Vec::with_capacity(t_horizon);
            for t0 in 1..=t_horizon {
                let mut row = Vec::with_capacity(t_horizon - t0 + 1);
                row.push(DMatrix::identity(n, n));
                for t in t0 + 1..=t_horizon {
                    let closed = &self.sys.a - &self.sys.b_u * &steps[t - 2].k;
                    let next = &closed * row.last().unwrap();
                    row.push(next);
                }
                table.push(row);
            }
            table
        }))
    }

    /// Closed-loop transition `Φ^MPC(t, t0) = Π_{s=t0}^{t-1} (A − B_u K̄_s)`
    /// built from the gains that actually ran.
    pub fn transition(&self, t: usize, t0: usize) -> Result<&DMatrix<f64>> {
        assert!(t0 >= 1 && t0 <= t && t <= self.horizon());
        Ok(&self.phi_table()?[t0 - 1][t - t0])
    }

    /// Debug dump of every retained gain as plain text: one
    /// `gain <t> <branch> K|Kd(<i>) <rows>x<cols> <entries row-major>` line
    /// per matrix, floats at 17 significant digits.
    pub fn gains_dump(&self) -> Result<String> {
        let mut out = String::new();
        for step in self.steps()? {
            let branch = match step.branch {
                Branch::Windowed => "windowed",
                Branch::ExactTail => "exact-tail",
            };
            let mut emit = |label: String, m: &DMatrix<f64>| {
                out.push_str(&format!("gain {} {branch} {label} {}x{}", step.t, m.nrows(), m.ncols()));
                for r in 0..m.nrows() {
                    for c in 0..m.ncols() {
                        out.push_str(&format!(" {:.16e}", m[(r, c)]));
                    }
                }
                out.push('\n');
            };
            emit("K".into(), &step.k);
            for i in step.t..=step.last_lookahead() {
                emit(format!("Kd({i})"), step.kd(i));
            }
        }
        Ok(out)
    }

    /// CSV export: `t, branch, x…, u…, stage_cost`.
    pub fn to_csv(&self) -> Result<String> {
        let steps = self.steps()?;
        let n = self.sys.state_dim();
        let n_u = self.sys.input_dim();
        let mut out = String::from("t,branch");
        for i in 0..n {
            out.push_str(&format!(",x{}", i + 1));
        }
        for i in 0..n_u {
            out.push_str(&format!(",u{}", i + 1));
        }
        out.push_str(",stage_cost\n");
        for t in 1..=self.horizon() {
            let branch = if t < self.horizon() {
                match steps[t - 1].branch {
                    Branch::Windowed => "windowed",
                    Branch::ExactTail => "exact-tail",
                }
            } else {
                "terminal"
            };
            out.push_str(&format!("{t},{branch}"));
            for v in self.traj.x(t).iter() {
                out.push_str(&format!(",{v:.16e}"));
            }
            if t < self.horizon() {
                for v in self.traj.u(t).iter() {
                    out.push_str(&format!(",{v:.16e}"));
                }
            } else {
                for _ in 0..n_u {
                    out.push(',');
                }
            }
            out.push_str(&format!(",{:.16e}\n", self.traj.stage_costs[t - 1]));
        }
        Ok(out)
    }
}

/// Run Algorithm 1 end to end.
///
/// Gains are rebuilt from scratch at every stage (no warm starting), actions
/// use the predicted disturbances, and the state advances under the true
/// ones from `trace`.
pub fn mpc_rollout(
    sys: &LinearSystem,
    costs: &CostSchedule,
    p_max: &DMatrix<f64>,
    trace: &DisturbanceTrace,
    preds: &PredictionStream,
    opts: &MpcOptions,
    tol: &Tolerances,
) -> Result<MpcRollout> {
    let t_horizon = costs.horizon();
    if trace.d.len() != t_horizon - 1 {
        return Err(Error::Dimension {
            field: "trace.d",
            expected: format!("{} entries", t_horizon - 1),
            got: format!("{}", trace.d.len()),
        });
    }
    if preds.horizon() != t_horizon {
        return Err(Error::InstanceMismatch(format!(
            "prediction stream horizon {} vs costs horizon {}",
            preds.horizon(),
            t_horizon
        )));
    }
    let w = preds.window();

    let mut x = trace.x1.clone();
    let mut states = Vec::with_capacity(t_horizon);
    let mut inputs = Vec::with_capacity(t_horizon - 1);
    let mut steps = Vec::with_capacity(t_horizon - 1);

    for t in 1..t_horizon {
        let step = step_gains(t, sys, costs, p_max, w, tol)?;
        let u = step.apply(&x, preds, sys)?;
        states.push(x.clone());
        x = sys.step(&x, &u, trace.d(t));
        inputs.push(u);
        steps.push(step);
    }
    states.push(x);

    let mut traj = rollout_inputs(sys, costs, trace, &inputs)?;
    traj.x = states;
    Ok(MpcRollout {
        traj,
        w,
        steps: opts.retain_gains.then_some(steps),
        phi: OnceLock::new(),
        sys: sys.clone(),
    })
}

/// Solve the stage-`t` subproblem numerically and return the first input.
///
/// Windowed stages solve the `W+1`-step problem with terminal `P_max`; tail
/// stages solve the remaining horizon with terminal `Q_T`. Both use state
/// elimination and the normal equations, sharing the full-horizon QP oracle,
/// so this path is independent of every Riccati identity the gain
/// representation relies on.
pub fn mpc_qp_crosscheck(
    t: usize,
    x: &DVector<f64>,
    preds: &PredictionStream,
    sys: &LinearSystem,
    costs: &CostSchedule,
    p_max: &DMatrix<f64>,
    tol: &Tolerances,
) -> Result<DVector<f64>> {
    let t_horizon = costs.horizon();
    let w = preds.window();
    let last_windowed = t_horizon.saturating_sub(w + 1);
    assert!(t >= 1 && t < t_horizon);

    let (qs, rs, terminal, last) = if t <= last_windowed {
        (
            costs.q[t - 1..t + w].to_vec(),
            costs.r[t - 1..t + w].to_vec(),
            p_max.clone(),
            t + w,
        )
    } else {
        (
            costs.q[t - 1..t_horizon - 1].to_vec(),
            costs.r[t - 1..].to_vec(),
            costs.terminal().clone(),
            t_horizon - 1,
        )
    };

    let mut q = qs;
    q.push(terminal);
    let local_costs = CostSchedule::new(q, rs)?;
    let d: Vec<DVector<f64>> = (t..=last)
        .map(|i| preds.predicted(t, i).cloned())
        .collect::<Result<_>>()?;
    let local_trace = DisturbanceTrace { x1: x.clone(), d };
    let (u_star, _) = crate::offline::qp_oracle(sys, &local_costs, &local_trace, tol)?;
    Ok(DVector::from(u_star.rows(0, sys.input_dim()).clone_owned()))
}

/// `x'Q_t x + u'R_t u` re-exported for rollout consumers.
pub fn mpc_stage_cost(costs: &CostSchedule, t: usize, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
    stage_cost(costs, t, x, u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{
        generate_instance, make_predictions, GeneratorProfile, Instance, NoiseSpec,
    };
    use crate::offline::{build_offline_policy, optimal_rollout};
    use crate::riccati::{riccati_step, stability_constants, StabilityConstants};
    use crate::rng::Stream;

    fn tol() -> Tolerances {
        Tolerances::default()
    }

    fn setup(seed: u64, t_horizon: usize) -> (Instance, StabilityConstants) {
        let inst = generate_instance(seed, t_horizon, &GeneratorProfile::paper()).unwrap();
        let constants = stability_constants(&inst.sys, &inst.bounds, &tol()).unwrap();
        (inst, constants)
    }

    #[test]
    fn window_zero_gains_close_over_p_max() {
        let (inst, c) = setup(1, 20);
        let gains = mpc_gains_at(5, &inst.sys, &inst.costs, &c.p_max, 0, &tol()).unwrap();
        // K̄_t is a single Riccati gain off P_max.
        let s = inst.costs.r(5) + inst.sys.b_u.transpose() * &c.p_max * &inst.sys.b_u;
        let k = linalg::solve_spd(
            &s,
            &(inst.sys.b_u.transpose() * &c.p_max * &inst.sys.a),
            &tol(),
        )
        .unwrap();
        assert!(linalg::spectral_norm(&(gains.kbar() - &k)) < 1e-12);
        // K̄_t^{d,t} = (R_t + B_u'P_max B_u)^{-1} B_u'P_max.
        let kd = linalg::solve_spd(&s, &(inst.sys.b_u.transpose() * &c.p_max), &tol()).unwrap();
        assert!(linalg::spectral_norm(&(gains.kbar_d(5) - &kd)) < 1e-12);
        assert_eq!(gains.pbar(6), &c.p_max);
    }

    #[test]
    fn constant_max_costs_pin_every_pbar_at_p_max() {
        let profile = GeneratorProfile::paper();
        let bounds = profile.bounds();
        let c = stability_constants(&profile.system, &bounds, &tol()).unwrap();
        let t_horizon = 20;
        let costs = CostSchedule::new(
            vec![bounds.q_max.clone(); t_horizon],
            vec![bounds.r_max.clone(); t_horizon - 1],
        )
        .unwrap();
        let gains = mpc_gains_at(3, &profile.system, &costs, &c.p_max, 6, &tol()).unwrap();
        for stage in 3..=10 {
            let diff = linalg::spectral_norm(&(gains.pbar(stage) - &c.p_max));
            assert!(diff <= 1e-9, "stage {stage}: {diff}");
        }
    }

    #[test]
    fn windowed_regime_is_enforced() {
        let (inst, c) = setup(2, 20);
        // T = 20, W = 5: windowed stages are 1..=14.
        assert!(mpc_gains_at(14, &inst.sys, &inst.costs, &c.p_max, 5, &tol()).is_ok());
        let err = mpc_gains_at(15, &inst.sys, &inst.costs, &c.p_max, 5, &tol()).unwrap_err();
        assert!(matches!(
            err,
            Error::WindowedRegime {
                t: 15,
                last_windowed: 14
            }
        ));
    }

    #[test]
    fn pbar_sandwich_and_local_gain_consistency() {
        let (inst, c) = setup(3, 30);
        for t in [1usize, 7, 19] {
            let gains = mpc_gains_at(t, &inst.sys, &inst.costs, &c.p_max, 10, &tol()).unwrap();
            for stage in t..=t + 11 {
                let p = gains.pbar(stage);
                assert!(linalg::lambda_min(&(p - &inst.bounds.q_min)) >= -1e-9);
                assert!(linalg::lambda_min(&(&c.p_max - p)) >= -1e-9);
            }
            // The local pass reproduces its own recursion.
            for stage in t..=t + 10 {
                let f = riccati_step(
                    inst.costs.q(stage),
                    inst.costs.r(stage),
                    gains.pbar(stage + 1),
                    &inst.sys,
                    &tol(),
                )
                .unwrap();
                assert!(linalg::spectral_norm(&(gains.pbar(stage) - &f)) < 1e-12);
            }
        }
    }

    #[test]
    fn value_matrices_converge_to_offline_inside_the_window() {
        // ‖P̄_{i+1|t} − P_{i+1}‖ ≤ γ^{t+W−i} λ_max(P_max)²/λ_min(Q_min).
        let (inst, c) = setup(4, 30);
        let policy = build_offline_policy(&inst.sys, &inst.costs, &tol()).unwrap();
        let lam_ratio =
            linalg::lambda_max(&c.p_max).powi(2) / linalg::lambda_min(&inst.bounds.q_min);
        let w = 10;
        for t in [1usize, 5, 12] {
            let gains = mpc_gains_at(t, &inst.sys, &inst.costs, &c.p_max, w, &tol()).unwrap();
            for i in t..=t + w {
                let diff = linalg::spectral_norm(&(gains.pbar(i + 1) - policy.pass.p(i + 1)));
                let bound = c.gamma.powi((t + w - i) as i32) * lam_ratio;
                assert!(diff <= bound + 1e-9, "t {t} i {i}: {diff} > {bound}");
            }
        }
    }

    #[test]
    fn predicted_transitions_respect_the_stability_envelope() {
        let (inst, c) = setup(12, 30);
        for t in [1usize, 6, 15] {
            let gains = mpc_gains_at(t, &inst.sys, &inst.costs, &c.p_max, 8, &tol()).unwrap();
            for i in 0..=9usize {
                for j in i..=9usize {
                    let norm = linalg::spectral_norm(&gains.phibar(&inst.sys, j, i));
                    assert!(
                        norm <= c.phi_bound(j - i) + 1e-9,
                        "t {t} Φ̄({j},{i}): {norm}"
                    );
                }
            }
        }
    }

    #[test]
    fn action_at_origin_with_zero_predictions_is_zero() {
        let (inst, c) = setup(5, 15);
        let zero_trace = DisturbanceTrace {
            x1: DVector::zeros(2),
            d: vec![DVector::zeros(1); 14],
        };
        let preds = make_predictions(&zero_trace, 3, NoiseSpec::Accurate, 5);
        let gains = mpc_gains_at(4, &inst.sys, &inst.costs, &c.p_max, 3, &tol()).unwrap();
        let u = mpc_action(4, &DVector::zeros(2), &preds, &gains, &inst.sys).unwrap();
        assert_eq!(u, DVector::zeros(1));
    }

    #[test]
    fn gain_action_matches_direct_qp_solve() {
        let (inst, c) = setup(6, 25);
        let preds = make_predictions(&inst.trace, 4, NoiseSpec::Iid { snr: 0.3 }, 6);
        let mut rng = Stream::new(17, &[1]);
        for probe in 0..40 {
            let t = 1 + (rng.uniform() * 23.0) as usize; // 1..=23 covers both regimes
            let x = DVector::from_fn(2, |_, _| 3.0 * rng.standard_normal());
            let via_qp =
                mpc_qp_crosscheck(t, &x, &preds, &inst.sys, &inst.costs, &c.p_max, &tol()).unwrap();
            let last_windowed = 25usize.saturating_sub(5);
            let via_gains = if t <= last_windowed {
                let gains = mpc_gains_at(t, &inst.sys, &inst.costs, &c.p_max, 4, &tol()).unwrap();
                mpc_action(t, &x, &preds, &gains, &inst.sys).unwrap()
            } else {
                tail_gains(t, &inst.sys, &inst.costs, &tol())
                    .unwrap()
                    .apply(&x, &preds, &inst.sys)
                    .unwrap()
            };
            assert!(
                (via_gains.clone() - &via_qp).norm() <= 1e-8,
                "probe {probe} t {t}: {via_gains} vs {via_qp}"
            );
        }
    }

    #[test]
    fn branch_partition_is_exact() {
        let (inst, c) = setup(7, 18);
        let preds = make_predictions(&inst.trace, 6, NoiseSpec::Accurate, 7);
        let rollout = mpc_rollout(
            &inst.sys,
            &inst.costs,
            &c.p_max,
            &inst.trace,
            &preds,
            &MpcOptions::default(),
            &tol(),
        )
        .unwrap();
        // T = 18, W = 6: windowed through t = 11, tail from 12.
        for t in 1..=17 {
            let expected = if t <= 11 {
                Branch::Windowed
            } else {
                Branch::ExactTail
            };
            assert_eq!(rollout.branch_of(t).unwrap(), expected, "t {t}");
        }
    }

    #[test]
    fn full_window_accurate_predictions_reproduce_the_optimal_rollout() {
        let (inst, c) = setup(8, 22);
        let preds = make_predictions(&inst.trace, 21, NoiseSpec::Accurate, 8);
        let rollout = mpc_rollout(
            &inst.sys,
            &inst.costs,
            &c.p_max,
            &inst.trace,
            &preds,
            &MpcOptions::default(),
            &tol(),
        )
        .unwrap();
        // Every step takes the exact branch.
        for t in 1..=21 {
            assert_eq!(rollout.branch_of(t).unwrap(), Branch::ExactTail);
        }
        let policy = build_offline_policy(&inst.sys, &inst.costs, &tol()).unwrap();
        let opt = optimal_rollout(&policy, &inst.trace).unwrap();
        let regret = rollout.traj.total - opt.total;
        assert!(
            regret.abs() <= 1e-9 * (1.0 + opt.total.abs()),
            "regret {regret}"
        );
    }

    #[test]
    fn closed_loop_transitions_respect_the_stability_envelope() {
        let (inst, c) = setup(9, 60);
        let preds = make_predictions(&inst.trace, 5, NoiseSpec::Accurate, 9);
        let rollout = mpc_rollout(
            &inst.sys,
            &inst.costs,
            &c.p_max,
            &inst.trace,
            &preds,
            &MpcOptions::default(),
            &tol(),
        )
        .unwrap();
        for t0 in 1..=60 {
            for t in t0..=60 {
                let norm = linalg::spectral_norm(rollout.transition(t, t0).unwrap());
                assert!(
                    norm <= c.phi_bound(t - t0) + 1e-9,
                    "Φ^MPC({t},{t0}) = {norm}"
                );
            }
        }
    }

    #[test]
    fn longer_windows_do_not_hurt_in_the_median() {
        let seeds: Vec<u64> = (100..120).collect();
        let mut ratios = Vec::new();
        for &seed in &seeds {
            let (inst, c) = setup(seed, 60);
            let policy = build_offline_policy(&inst.sys, &inst.costs, &tol()).unwrap();
            let j_star = optimal_rollout(&policy, &inst.trace).unwrap().total;
            let j = |w: usize| {
                let preds = make_predictions(&inst.trace, w, NoiseSpec::Accurate, seed);
                mpc_rollout(
                    &inst.sys,
                    &inst.costs,
                    &c.p_max,
                    &inst.trace,
                    &preds,
                    &MpcOptions { retain_gains: false },
                    &tol(),
                )
                .unwrap()
                .traj
                .total
            };
            ratios.push((j(8) - j_star) - (j(1) - j_star));
        }
        ratios.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = ratios[ratios.len() / 2];
        assert!(median <= 0.0, "median regret increase {median}");
    }

    #[test]
    fn gains_not_retained_is_a_configuration_error() {
        let (inst, c) = setup(10, 12);
        let preds = make_predictions(&inst.trace, 2, NoiseSpec::Accurate, 10);
        let rollout = mpc_rollout(
            &inst.sys,
            &inst.costs,
            &c.p_max,
            &inst.trace,
            &preds,
            &MpcOptions { retain_gains: false },
            &tol(),
        )
        .unwrap();
        assert!(matches!(rollout.steps(), Err(Error::GainsNotRetained)));
    }

    #[test]
    fn rollout_csv_carries_branches() {
        let (inst, c) = setup(11, 8);
        let preds = make_predictions(&inst.trace, 3, NoiseSpec::Accurate, 11);
        let rollout = mpc_rollout(
            &inst.sys,
            &inst.costs,
            &c.p_max,
            &inst.trace,
            &preds,
            &MpcOptions::default(),
            &tol(),
        )
        .unwrap();
        let csv = rollout.to_csv().unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "t,branch,x1,x2,u1,stage_cost");
        assert!(lines[1].starts_with("1,windowed"));
        assert!(lines[5].starts_with("5,exact-tail"));
        assert!(lines[8].starts_with("8,terminal"));

        // T = 8, W = 3: one K line per step plus one Kd line per covered
        // lookahead stage (min(t+W, T−1) − t + 1 each).
        let dump = rollout.gains_dump().unwrap();
        let expected: usize = (1..8).map(|t| 1 + (t + 3).min(7) - t + 1).sum();
        assert_eq!(dump.lines().count(), expected);
        assert!(dump.starts_with("gain 1 windowed K 1x2 "));
        assert!(dump.contains("gain 1 windowed Kd(4) 1x2 "));
    }
}
