//! The hindsight-optimal controller and its oracles.
//!
//! With every future disturbance in hand, the optimal action is affine in the
//! current state and the disturbance tail:
//!
//! ```text
//!   u_t* = −K_t x_t − Σ_{i=t}^{T-1} K_t^{d,i} B_d d_i
//!   K_t^{d,i} = (R_t + B_u'P_{t+1}B_u)^{-1} B_u' Φ(i+1, t+1)' P_{i+1}
//! ```
//!
//! where `Φ` is the closed-loop transition under the backward-pass gains.
//! Two independent routes to the same minimizer live here as oracles: a
//! full-horizon quadratic solve with states eliminated ([`qp_oracle`]) and
//! the lifted value-function form over stacked disturbance responses
//! ([`build_lifted`]).

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};

use crate::config::Tolerances;
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{CostSchedule, DisturbanceTrace, LinearSystem};
use crate::riccati::{backward_pass, BackwardPass};

/// A simulated state/input path with its cost breakdown.
///
/// `stage_costs[t-1]` is `x_t'Q_t x_t + u_t'R_t u_t` for `t < T` and the
/// terminal cost at `t = T`; `total` is their sum.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub x: Vec<DVector<f64>>,
    pub u: Vec<DVector<f64>>,
    pub stage_costs: Vec<f64>,
    pub total: f64,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.x.len()
    }

    /// State `x_t`, `1 ≤ t ≤ T`.
    pub fn x(&self, t: usize) -> &DVector<f64> {
        &self.x[t - 1]
    }

    /// Input `u_t`, `1 ≤ t ≤ T−1`.
    pub fn u(&self, t: usize) -> &DVector<f64> {
        &self.u[t - 1]
    }

    /// CSV export: `t, x…, u…, stage_cost` (the terminal row has empty `u`).
    pub fn to_csv(&self) -> String {
        let n = self.x.first().map_or(0, |v| v.len());
        let n_u = self.u.first().map_or(0, |v| v.len());
        let mut out = String::from("t");
        for i in 0..n {
            out.push_str(&format!(",x{}", i + 1));
        }
        for i in 0..n_u {
            out.push_str(&format!(",u{}", i + 1));
        }
        out.push_str(",stage_cost\n");
        for t in 1..=self.horizon() {
            out.push_str(&t.to_string());
            for v in self.x(t).iter() {
                out.push_str(&format!(",{v:.16e}"));
            }
            if t < self.horizon() {
                for v in self.u(t).iter() {
                    out.push_str(&format!(",{v:.16e}"));
                }
            } else {
                for _ in 0..n_u {
                    out.push(',');
                }
            }
            out.push_str(&format!(",{:.16e}\n", self.stage_costs[t - 1]));
        }
        out
    }
}

/// `x'Q_t x + u'R_t u`.
pub fn stage_cost(costs: &CostSchedule, t: usize, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
    (x.transpose() * costs.q(t) * x)[(0, 0)] + (u.transpose() * costs.r(t) * u)[(0, 0)]
}

/// Simulate an explicit input sequence against the true dynamics and price it.
pub fn rollout_inputs(
    sys: &LinearSystem,
    costs: &CostSchedule,
    trace: &DisturbanceTrace,
    inputs: &[DVector<f64>],
) -> Result<Trajectory> {
    let t_horizon = costs.horizon();
    if trace.d.len() != t_horizon - 1 {
        return Err(Error::Dimension {
            field: "trace.d",
            expected: format!("{} entries", t_horizon - 1),
            got: format!("{}", trace.d.len()),
        });
    }
    if inputs.len() != t_horizon - 1 {
        return Err(Error::Dimension {
            field: "inputs",
            expected: format!("{} entries", t_horizon - 1),
            got: format!("{}", inputs.len()),
        });
    }
    let mut x = Vec::with_capacity(t_horizon);
    let mut stage_costs = Vec::with_capacity(t_horizon);
    x.push(trace.x1.clone());
    let mut total = 0.0;
    for t in 1..t_horizon {
        let cost = stage_cost(costs, t, &x[t - 1], &inputs[t - 1]);
        stage_costs.push(cost);
        total += cost;
        x.push(sys.step(&x[t - 1], &inputs[t - 1], trace.d(t)));
    }
    let xt = &x[t_horizon - 1];
    let terminal = (xt.transpose() * costs.terminal() * xt)[(0, 0)];
    stage_costs.push(terminal);
    total += terminal;
    Ok(Trajectory {
        x,
        u: inputs.to_vec(),
        stage_costs,
        total,
    })
}

/// The hindsight-optimal policy: offline backward pass plus the transition
/// and feedforward-gain maps it induces.
///
/// Immutable after build; the transition table is materialized lazily on
/// first use and then shared read-only.
pub struct OfflinePolicy {
    pub sys: LinearSystem,
    pub costs: CostSchedule,
    pub pass: BackwardPass,
    tol: Tolerances,
    /// `phi[t0-1][t-t0] = Φ(t, t0)` for `t0 ≤ t ≤ T`.
    phi: OnceLock<Vec<Vec<DMatrix<f64>>>>,
}

/// Run the offline backward pass (terminal `Q_T`) and wrap it as a policy.
pub fn build_offline_policy(
    sys: &LinearSystem,
    costs: &CostSchedule,
    tol: &Tolerances,
) -> Result<OfflinePolicy> {
    let pass = backward_pass(costs, costs.terminal(), sys, tol)?;
    Ok(OfflinePolicy {
        sys: sys.clone(),
        costs: costs.clone(),
        pass,
        tol: tol.clone(),
        phi: OnceLock::new(),
    })
}

impl OfflinePolicy {
    pub fn horizon(&self) -> usize {
        self.costs.horizon()
    }

    fn phi_table(&self) -> &Vec<Vec<DMatrix<f64>>> {
        self.phi.get_or_init(|| {
            let t_horizon = self.horizon();
            let n = self.sys.state_dim();
            let mut table = Vec::with_capacity(t_horizon);
            for t0 in 1..=t_horizon {
                let mut row = Vec::with_capacity(t_horizon - t0 + 1);
                row.push(DMatrix::identity(n, n));
                for t in t0 + 1..=t_horizon {
                    let closed = &self.sys.a - &self.sys.b_u * self.pass.k(t - 1);
                    let next = &closed * row.last().unwrap();
                    row.push(next);
                }
                table.push(row);
            }
            table
        })
    }

    /// Closed-loop transition `Φ(t, t0)`, `1 ≤ t0 ≤ t ≤ T`.
    pub fn transition(&self, t: usize, t0: usize) -> &DMatrix<f64> {
        assert!(t0 >= 1 && t0 <= t && t <= self.horizon());
        &self.phi_table()[t0 - 1][t - t0]
    }

    /// Feedforward gain `K_t^{d,i}` for `t ≤ i ≤ T−1`.
    pub fn feedforward_gain(&self, t: usize, i: usize) -> Result<DMatrix<f64>> {
        assert!(t >= 1 && t <= i && i < self.horizon());
        let s = linalg::symmetrize(
            &(self.costs.r(t) + self.sys.b_u.transpose() * self.pass.p(t + 1) * &self.sys.b_u),
        );
        let rhs = self.sys.b_u.transpose() * self.transition(i + 1, t + 1).transpose()
            * self.pass.p(i + 1);
        linalg::solve_spd(&s, &rhs, &self.tol)
    }

    /// Optimal action at `(t, x)` given the true disturbance tail.
    ///
    /// The feedforward sum is accumulated fresh from `i = t` using the
    /// recursion `Φ(i+2, t+1)' = Φ(i+1, t+1)'(A − B_u K_{i+1})'`, so a call
    /// never depends on the memoized table.
    pub fn action(&self, t: usize, x: &DVector<f64>, trace: &DisturbanceTrace) -> Result<DVector<f64>> {
        let t_horizon = self.horizon();
        assert!(t >= 1 && t < t_horizon);
        let n = self.sys.state_dim();
        let s = linalg::symmetrize(
            &(self.costs.r(t) + self.sys.b_u.transpose() * self.pass.p(t + 1) * &self.sys.b_u),
        );
        // w = Σ_i Φ(i+1,t+1)' P_{i+1} B_d d_i
        let mut w = DVector::zeros(n);
        let mut phi_t = DMatrix::<f64>::identity(n, n); // Φ(i+1, t+1)'
        for i in t..t_horizon {
            w += &phi_t * (self.pass.p(i + 1) * (&self.sys.b_d * trace.d(i)));
            if i + 1 < t_horizon {
                let closed = &self.sys.a - &self.sys.b_u * self.pass.k(i + 1);
                phi_t *= closed.transpose();
            }
        }
        let ff = linalg::solve_spd_vec(&s, &(self.sys.b_u.transpose() * w), &self.tol)?;
        Ok(-(self.pass.k(t) * x) - ff)
    }
}

/// Closed-loop simulation of the optimal policy under the true disturbances.
pub fn optimal_rollout(policy: &OfflinePolicy, trace: &DisturbanceTrace) -> Result<Trajectory> {
    let t_horizon = policy.horizon();
    if trace.d.len() != t_horizon - 1 {
        return Err(Error::Dimension {
            field: "trace.d",
            expected: format!("{} entries", t_horizon - 1),
            got: format!("{}", trace.d.len()),
        });
    }
    let mut x = trace.x1.clone();
    let mut inputs = Vec::with_capacity(t_horizon - 1);
    let mut states = Vec::with_capacity(t_horizon);
    for t in 1..t_horizon {
        states.push(x.clone());
        let u = policy.action(t, &x, trace)?;
        x = policy.sys.step(&x, &u, trace.d(t));
        inputs.push(u);
    }
    states.push(x);
    // Re-price through the shared costing path so every trajectory in the
    // crate is priced identically.
    let mut traj = rollout_inputs(&policy.sys, &policy.costs, trace, &inputs)?;
    traj.x = states;
    Ok(traj)
}

/// Minimize the full-horizon cost directly: eliminate states through the
/// dynamics and solve the normal equations of the resulting strictly convex
/// quadratic in the stacked inputs. Independent of the Riccati path.
///
/// Returns the stacked minimizer and its cost.
pub fn qp_oracle(
    sys: &LinearSystem,
    costs: &CostSchedule,
    trace: &DisturbanceTrace,
    tol: &Tolerances,
) -> Result<(DVector<f64>, f64)> {
    let t_horizon = costs.horizon();
    let n = sys.state_dim();
    let n_u = sys.input_dim();
    let vars = (t_horizon - 1) * n_u;
    if vars > tol.qp_var_cap {
        return Err(Error::SizeCap {
            got: vars,
            cap: tol.qp_var_cap,
        });
    }

    // Zero-input trajectory (the affine part of x(u)).
    let mut x_free = Vec::with_capacity(t_horizon);
    x_free.push(trace.x1.clone());
    for t in 1..t_horizon {
        let prev = &x_free[t - 1];
        x_free.push(&sys.a * prev + &sys.b_d * trace.d(t));
    }

    // Sensitivity blocks: ∂x_t/∂u_s = A^{t-1-s} B_u for s < t.
    let mut a_pows = Vec::with_capacity(t_horizon);
    a_pows.push(DMatrix::<f64>::identity(n, n));
    for _ in 1..t_horizon {
        let next = &sys.a * a_pows.last().unwrap();
        a_pows.push(next);
    }

    let mut h = DMatrix::<f64>::zeros(vars, vars);
    let mut g = DVector::<f64>::zeros(vars);
    for s in 1..t_horizon {
        let rs = (s - 1) * n_u;
        h.view_mut((rs, rs), (n_u, n_u)).copy_from(costs.r(s));
    }
    // Accumulate Σ_t E_s' Q_t E_r with E_s = ∂x_t/∂u_s, plus the linear term.
    for t in 2..=t_horizon {
        let q = costs.q(t);
        let qx = q * &x_free[t - 1];
        let blocks: Vec<DMatrix<f64>> =
            (1..t).map(|s| &a_pows[t - 1 - s] * &sys.b_u).collect();
        let q_blocks: Vec<DMatrix<f64>> = blocks.iter().map(|e| q * e).collect();
        for s in 1..t {
            let rs = (s - 1) * n_u;
            let et = blocks[s - 1].transpose();
            let mut g_block = g.rows_mut(rs, n_u);
            g_block += &et * &qx;
            for r in 1..t {
                let rr = (r - 1) * n_u;
                let mut h_block = h.view_mut((rs, rr), (n_u, n_u));
                h_block += &et * &q_blocks[r - 1];
            }
        }
    }

    let h = linalg::symmetrize(&h);
    let chol = h
        .clone()
        .cholesky()
        .ok_or(Error::NotPositiveDefinite {
            field: "qp hessian",
            min_eig: linalg::lambda_min(&h),
        })?;
    let u_star = chol.solve(&(-&g));

    let inputs: Vec<DVector<f64>> = (0..t_horizon - 1)
        .map(|k| DVector::from(u_star.rows(k * n_u, n_u).clone_owned()))
        .collect();
    let traj = rollout_inputs(sys, costs, trace, &inputs)?;
    Ok((u_star, traj.total))
}

/// Lifted value-function representation over stacked disturbance responses.
///
/// `v[t-1]` is the block matrix `V_t` of size `(T−t+1)n`, `g[t-1]` the gain
/// `G_t` with `u_t* = −G_t y_t^{t+1:T}(x)`, and `y[t-1] = V_t 𝒜^{(T−t+1)}`.
/// Used as a cross-check oracle; the dimension grows with the horizon, hence
/// the cap.
pub struct LiftedSolution {
    pub v: Vec<DMatrix<f64>>,
    pub g: Vec<DMatrix<f64>>,
    pub y: Vec<DMatrix<f64>>,
    sys: LinearSystem,
    t_horizon: usize,
}

/// Stacked powers `[I; A; …; A^{m-1}]`.
fn stacked_powers(a: &DMatrix<f64>, m: usize) -> DMatrix<f64> {
    let n = a.nrows();
    let mut out = DMatrix::zeros(m * n, n);
    let mut pow = DMatrix::identity(n, n);
    for k in 0..m {
        out.view_mut((k * n, 0), (n, n)).copy_from(&pow);
        pow = a * pow;
    }
    out
}

pub fn build_lifted(
    sys: &LinearSystem,
    costs: &CostSchedule,
    tol: &Tolerances,
) -> Result<LiftedSolution> {
    let t_horizon = costs.horizon();
    let n = sys.state_dim();
    if t_horizon * n > tol.lifted_dim_cap {
        return Err(Error::SizeCap {
            got: t_horizon * n,
            cap: tol.lifted_dim_cap,
        });
    }

    let mut v: Vec<DMatrix<f64>> = vec![DMatrix::zeros(0, 0); t_horizon];
    let mut g: Vec<DMatrix<f64>> = vec![DMatrix::zeros(0, 0); t_horizon - 1];
    v[t_horizon - 1] = costs.terminal().clone();

    for t in (1..t_horizon).rev() {
        let m = t_horizon - t; // lookahead block count of V_{t+1}
        let astack = stacked_powers(&sys.a, m);
        let x = &v[t]; // V_{t+1}, size m·n
        let ab = &astack * &sys.b_u; // (m·n) × n_u
        let xab = x * &ab;
        let s = linalg::symmetrize(&(costs.r(t) + ab.transpose() * &xab));
        let gain = linalg::solve_spd(&s, &xab.transpose(), tol)?; // n_u × m·n
        let f = x - &xab * &gain;
        let dim = (m + 1) * n;
        let mut vt = DMatrix::zeros(dim, dim);
        vt.view_mut((0, 0), (n, n)).copy_from(costs.q(t));
        vt.view_mut((n, n), (m * n, m * n)).copy_from(&linalg::symmetrize(&f));
        g[t - 1] = gain;
        v[t - 1] = vt;
    }

    let y = (1..=t_horizon)
        .map(|t| {
            let m = t_horizon - t + 1;
            &v[t - 1] * stacked_powers(&sys.a, m)
        })
        .collect();

    Ok(LiftedSolution {
        v,
        g,
        y,
        sys: sys.clone(),
        t_horizon,
    })
}

impl LiftedSolution {
    /// `V_t`, `1 ≤ t ≤ T`.
    pub fn v(&self, t: usize) -> &DMatrix<f64> {
        &self.v[t - 1]
    }

    /// `G_t`, `1 ≤ t ≤ T−1`.
    pub fn g(&self, t: usize) -> &DMatrix<f64> {
        &self.g[t - 1]
    }

    /// `Y_t = V_t 𝒜^{(T−t+1)}`.
    pub fn y(&self, t: usize) -> &DMatrix<f64> {
        &self.y[t - 1]
    }

    /// Disturbance-response stack `y_t^{t:T}(x)`: `y¹ = x`,
    /// `y^{i+1} = A y^i + B_d d_{t+i-1}`.
    pub fn y_stack(&self, t: usize, x: &DVector<f64>, trace: &DisturbanceTrace) -> DVector<f64> {
        let n = self.sys.state_dim();
        let m = self.t_horizon - t + 1;
        let mut out = DVector::zeros(m * n);
        let mut cur = x.clone();
        out.rows_mut(0, n).copy_from(&cur);
        for i in 1..m {
            cur = &self.sys.a * &cur + &self.sys.b_d * trace.d(t + i - 1);
            out.rows_mut(i * n, n).copy_from(&cur);
        }
        out
    }

    /// Optimal action in lifted form: `u_t = −G_t y_t^{t+1:T}(x)`.
    pub fn action(&self, t: usize, x: &DVector<f64>, trace: &DisturbanceTrace) -> DVector<f64> {
        let n = self.sys.state_dim();
        let stack = self.y_stack(t, x, trace);
        let tail = stack.rows(n, stack.len() - n).clone_owned();
        -(self.g(t) * tail)
    }

    /// Optimal total cost `y_1'V_1 y_1`.
    pub fn optimal_cost(&self, trace: &DisturbanceTrace) -> f64 {
        let stack = self.y_stack(1, &trace.x1, trace);
        (stack.transpose() * self.v(1) * &stack)[(0, 0)]
    }

    /// `𝒜^{(T−t+1)'} V_t 𝒜^{(T−t+1)}`, the value matrix the lifted form implies.
    pub fn implied_p(&self, t: usize) -> DMatrix<f64> {
        let m = self.t_horizon - t + 1;
        let astack = stacked_powers(&self.sys.a, m);
        linalg::symmetrize(&(astack.transpose() * self.v(t) * astack))
    }
}
