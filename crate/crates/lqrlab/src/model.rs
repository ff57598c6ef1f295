//! Problem data: system, cost schedule, disturbances, predictions.
//!
//! Stages are 1-based throughout the crate, matching the usual statement of
//! the finite-horizon problem
//!
//! ```text
//!   min  Σ_{t=1}^{T-1} (x_t'Q_t x_t + u_t'R_t u_t) + x_T'Q_T x_T
//!   s.t. x_{t+1} = A x_t + B_u u_t + B_d d_t
//! ```
//!
//! Accessors like [`CostSchedule::q`] take the 1-based stage index so call
//! sites read like the recursions they implement.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::config::Tolerances;
use crate::error::{Error, Result};
use crate::linalg;
use crate::rng::{stream, Stream};

/// Time-invariant dynamics triple `(A, B_u, B_d)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    pub a: DMatrix<f64>,
    pub b_u: DMatrix<f64>,
    pub b_d: DMatrix<f64>,
}

impl LinearSystem {
    pub fn new(a: DMatrix<f64>, b_u: DMatrix<f64>, b_d: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n || n == 0 {
            return Err(Error::Dimension {
                field: "A",
                expected: "square, n ≥ 1".into(),
                got: format!("{}x{}", a.nrows(), a.ncols()),
            });
        }
        if b_u.nrows() != n || b_u.ncols() == 0 {
            return Err(Error::Dimension {
                field: "B_u",
                expected: format!("{n}×n_u, n_u ≥ 1"),
                got: format!("{}x{}", b_u.nrows(), b_u.ncols()),
            });
        }
        if b_d.nrows() != n || b_d.ncols() == 0 {
            return Err(Error::Dimension {
                field: "B_d",
                expected: format!("{n}×n_d, n_d ≥ 1"),
                got: format!("{}x{}", b_d.nrows(), b_d.ncols()),
            });
        }
        Ok(LinearSystem { a, b_u, b_d })
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b_u.ncols()
    }

    pub fn disturbance_dim(&self) -> usize {
        self.b_d.ncols()
    }

    /// One step of the true dynamics.
    pub fn step(&self, x: &DVector<f64>, u: &DVector<f64>, d: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.b_u * u + &self.b_d * d
    }
}

/// Time-varying stage costs `{Q_t}_{t=1..T}` and `{R_t}_{t=1..T-1}`.
/// The last `Q` entry is the terminal cost.
#[derive(Debug, Clone, PartialEq)]
pub struct CostSchedule {
    pub q: Vec<DMatrix<f64>>,
    pub r: Vec<DMatrix<f64>>,
}

impl CostSchedule {
    pub fn new(q: Vec<DMatrix<f64>>, r: Vec<DMatrix<f64>>) -> Result<Self> {
        if q.len() < 2 {
            return Err(Error::Horizon { min: 2, got: q.len() });
        }
        if r.len() + 1 != q.len() {
            return Err(Error::Dimension {
                field: "R",
                expected: format!("{} entries (T−1)", q.len() - 1),
                got: format!("{}", r.len()),
            });
        }
        Ok(CostSchedule { q, r })
    }

    /// Number of stages `T` (the schedule holds `Q_1..Q_T`).
    pub fn horizon(&self) -> usize {
        self.q.len()
    }

    /// Stage cost `Q_t`, `1 ≤ t ≤ T`.
    pub fn q(&self, t: usize) -> &DMatrix<f64> {
        &self.q[t - 1]
    }

    /// Input cost `R_t`, `1 ≤ t ≤ T−1`.
    pub fn r(&self, t: usize) -> &DMatrix<f64> {
        &self.r[t - 1]
    }

    pub fn terminal(&self) -> &DMatrix<f64> {
        self.q.last().expect("non-empty schedule")
    }
}

/// Uniform positive-definite bounds `Q_min ⪯ Q_t ⪯ Q_max`, `R_min ⪯ R_t ⪯ R_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostBounds {
    pub q_min: DMatrix<f64>,
    pub q_max: DMatrix<f64>,
    pub r_min: DMatrix<f64>,
    pub r_max: DMatrix<f64>,
}

/// Realized disturbances `d_1..d_{T-1}` together with the fixed initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct DisturbanceTrace {
    pub x1: DVector<f64>,
    pub d: Vec<DVector<f64>>,
}

impl DisturbanceTrace {
    /// Number of stages `T` implied by the trace (`T−1` disturbances).
    pub fn horizon(&self) -> usize {
        self.d.len() + 1
    }

    /// Disturbance `d_t`, `1 ≤ t ≤ T−1`.
    pub fn d(&self, t: usize) -> &DVector<f64> {
        &self.d[t - 1]
    }
}

/// How prediction noise is generated; see [`make_predictions`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum NoiseSpec {
    /// `d_{i|t} = d_i` exactly.
    Accurate,
    /// `d_{i|t} = d_i + snr·z`, `z ~ N(0, I)` i.i.d. across `(t, i)`.
    /// `snr` follows the source naming: it is the amplitude of the additive
    /// noise, so larger values mean *worse* predictions.
    Iid { snr: f64 },
    /// Noise amplitude grows with lookahead depth: `snr·growth^{i−t}`.
    /// Models forecasts that degrade the further out they reach.
    DepthGrowing { snr: f64, growth: f64 },
}

/// The `W`-step lookahead values `d_{i|t}` for `1 ≤ t ≤ T−1`,
/// `t ≤ i ≤ min(t+W, T−1)`, plus the realized disturbances so prediction
/// errors `e_{i|t} = d_{i|t} − d_i` are answerable locally.
#[derive(Debug, Clone)]
pub struct PredictionStream {
    w: usize,
    /// `rows[t-1][i-t]` is `d_{i|t}`.
    rows: Vec<Vec<DVector<f64>>>,
    truth: Vec<DVector<f64>>,
}

impl PredictionStream {
    pub fn window(&self) -> usize {
        self.w
    }

    pub fn horizon(&self) -> usize {
        self.truth.len() + 1
    }

    /// Last stage `i` with a stored prediction at time `t`.
    pub fn last_predicted(&self, t: usize) -> usize {
        (t + self.w).min(self.truth.len())
    }

    /// Prediction `d_{i|t}`; an error outside the stored window.
    pub fn predicted(&self, t: usize, i: usize) -> Result<&DVector<f64>> {
        if t == 0 || t > self.rows.len() || i < t || i > self.last_predicted(t) {
            return Err(Error::PredictionMissing { t, i });
        }
        Ok(&self.rows[t - 1][i - t])
    }

    /// Prediction error `e_{i|t} = d_{i|t} − d_i`.
    pub fn error(&self, t: usize, i: usize) -> Result<DVector<f64>> {
        let pred = self.predicted(t, i)?;
        Ok(pred - &self.truth[i - 1])
    }
}

/// Build a prediction stream from a realized trace.
///
/// Noise draws are keyed by `(seed, PREDICTION, t, i)`, not by stream
/// position, so the draw for a given pair is identical no matter which window
/// `W` or amplitude is in force. Sweeps over `W` and `snr` therefore share
/// noise realizations (common random numbers), which keeps regret curves
/// comparable across cells.
pub fn make_predictions(
    trace: &DisturbanceTrace,
    w: usize,
    noise: NoiseSpec,
    seed: u64,
) -> PredictionStream {
    let t_max = trace.d.len(); // = T−1
    let n_d = trace.d.first().map_or(0, |v| v.len());
    let mut rows = Vec::with_capacity(t_max);
    for t in 1..=t_max {
        let hi = (t + w).min(t_max);
        let mut row = Vec::with_capacity(hi - t + 1);
        for i in t..=hi {
            let base = trace.d(i).clone();
            let pred = match noise {
                NoiseSpec::Accurate => base,
                NoiseSpec::Iid { snr } | NoiseSpec::DepthGrowing { snr, .. } if snr == 0.0 => base,
                NoiseSpec::Iid { snr } => {
                    let mut s = Stream::new(seed, &[stream::PREDICTION, t as u64, i as u64]);
                    base + snr * DVector::from_fn(n_d, |_, _| s.standard_normal())
                }
                NoiseSpec::DepthGrowing { snr, growth } => {
                    let mut s = Stream::new(seed, &[stream::PREDICTION, t as u64, i as u64]);
                    let amp = snr * growth.powi((i - t) as i32);
                    base + amp * DVector::from_fn(n_d, |_, _| s.standard_normal())
                }
            };
            row.push(pred);
        }
        rows.push(row);
    }
    PredictionStream {
        w,
        rows,
        truth: trace.d.clone(),
    }
}

/// Parameters for the random instance generator.
///
/// The default [`GeneratorProfile::paper`] reproduces the simulation setup:
/// a two-state swap system with scalar input and disturbance, `Q_t = q_t·I`
/// with `q_t ~ Unif[2,3]`, `R_t = r_t ~ Unif[5,6]`, and `d_t ~ N(0,1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorProfile {
    pub system: LinearSystem,
    pub q_range: (f64, f64),
    pub r_range: (f64, f64),
    pub disturbance_std: f64,
    pub x1_std: f64,
}

impl GeneratorProfile {
    pub fn paper() -> Self {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let b_u = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let b_d = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        GeneratorProfile {
            system: LinearSystem::new(a, b_u, b_d).expect("static dims"),
            q_range: (2.0, 3.0),
            r_range: (5.0, 6.0),
            disturbance_std: 1.0,
            x1_std: 1.0,
        }
    }

    /// Bounds implied by the uniform cost ranges.
    pub fn bounds(&self) -> CostBounds {
        let n = self.system.state_dim();
        let n_u = self.system.input_dim();
        CostBounds {
            q_min: DMatrix::identity(n, n) * self.q_range.0,
            q_max: DMatrix::identity(n, n) * self.q_range.1,
            r_min: DMatrix::identity(n_u, n_u) * self.r_range.0,
            r_max: DMatrix::identity(n_u, n_u) * self.r_range.1,
        }
    }
}

/// A fully specified problem instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub sys: LinearSystem,
    pub costs: CostSchedule,
    pub bounds: CostBounds,
    pub trace: DisturbanceTrace,
    pub seed: u64,
}

/// Draw a random instance. Identical `(seed, t_horizon, profile)` triples
/// reproduce bit-identical instances.
///
/// Draw order per stream: costs `(q_1..q_T, r_1..r_{T-1})`, disturbances
/// `d_1..d_{T-1}` component-major, then `x_1`.
pub fn generate_instance(seed: u64, t_horizon: usize, profile: &GeneratorProfile) -> Result<Instance> {
    if t_horizon < 2 {
        return Err(Error::Horizon {
            min: 2,
            got: t_horizon,
        });
    }
    let n = profile.system.state_dim();
    let n_u = profile.system.input_dim();
    let n_d = profile.system.disturbance_dim();

    let mut costs_stream = Stream::new(seed, &[stream::COSTS]);
    let q: Vec<DMatrix<f64>> = (0..t_horizon)
        .map(|_| DMatrix::identity(n, n) * costs_stream.uniform_in(profile.q_range.0, profile.q_range.1))
        .collect();
    let r: Vec<DMatrix<f64>> = (0..t_horizon - 1)
        .map(|_| DMatrix::identity(n_u, n_u) * costs_stream.uniform_in(profile.r_range.0, profile.r_range.1))
        .collect();

    let mut d_stream = Stream::new(seed, &[stream::DISTURBANCE]);
    let d: Vec<DVector<f64>> = (0..t_horizon - 1)
        .map(|_| {
            if profile.disturbance_std == 0.0 {
                DVector::zeros(n_d)
            } else {
                DVector::from_fn(n_d, |_, _| profile.disturbance_std * d_stream.standard_normal())
            }
        })
        .collect();

    let mut x1_stream = Stream::new(seed, &[stream::INITIAL_STATE]);
    let x1 = if profile.x1_std == 0.0 {
        DVector::zeros(n)
    } else {
        DVector::from_fn(n, |_, _| profile.x1_std * x1_stream.standard_normal())
    };

    Ok(Instance {
        sys: profile.system.clone(),
        costs: CostSchedule::new(q, r)?,
        bounds: profile.bounds(),
        trace: DisturbanceTrace { x1, d },
        seed,
    })
}

/// One validated property of an instance.
#[derive(Debug, Clone)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Outcome of [`validate_instance`]: one entry per invariant checked.
#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    fn push(&mut self, name: impl Into<String>, passed: bool, detail: impl Into<String>) {
        self.checks.push(Check {
            name: name.into(),
            passed,
            detail: detail.into(),
        });
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for c in &self.checks {
            writeln!(
                f,
                "{} {} — {}",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.detail
            )?;
        }
        Ok(())
    }
}

/// Check every structural assumption the solvers rely on.
///
/// Dimension mismatches are hard errors; everything else (symmetry, positive
/// definiteness, bounds, stabilizability, detectability) is reported
/// per-invariant so a failing instance can be diagnosed in one pass.
// Stabilizability is probed exactly the way the solvers will use it: the
// DARE fixed-point iteration with (Q, R) = (I, I) either converges or it
// does not. Detectability of (A, Q_t) is a rank test on the stacked block
// [Q_t^{1/2}; Q_t^{1/2}A; …; Q_t^{1/2}A^{n-1}] with relative singular-value
// threshold from the tolerance ledger.
pub fn validate_instance(
    sys: &LinearSystem,
    costs: &CostSchedule,
    bounds: &CostBounds,
    tol: &Tolerances,
) -> Result<ValidationReport> {
    let n = sys.state_dim();
    let n_u = sys.input_dim();
    let t_horizon = costs.horizon();

    for (idx, q) in costs.q.iter().enumerate() {
        if q.shape() != (n, n) {
            return Err(Error::Dimension {
                field: "Q_t",
                expected: format!("{n}x{n}"),
                got: format!("{}x{} at stage {}", q.nrows(), q.ncols(), idx + 1),
            });
        }
    }
    for (idx, r) in costs.r.iter().enumerate() {
        if r.shape() != (n_u, n_u) {
            return Err(Error::Dimension {
                field: "R_t",
                expected: format!("{n_u}x{n_u}"),
                got: format!("{}x{} at stage {}", r.nrows(), r.ncols(), idx + 1),
            });
        }
    }
    for (m, field) in [
        (&bounds.q_min, "Q_min"),
        (&bounds.q_max, "Q_max"),
    ] {
        if m.shape() != (n, n) {
            return Err(Error::Dimension {
                field,
                expected: format!("{n}x{n}"),
                got: format!("{}x{}", m.nrows(), m.ncols()),
            });
        }
    }
    for (m, field) in [
        (&bounds.r_min, "R_min"),
        (&bounds.r_max, "R_max"),
    ] {
        if m.shape() != (n_u, n_u) {
            return Err(Error::Dimension {
                field,
                expected: format!("{n_u}x{n_u}"),
                got: format!("{}x{}", m.nrows(), m.ncols()),
            });
        }
    }

    let mut report = ValidationReport { checks: Vec::new() };

    // Symmetry and positive definiteness of every schedule entry.
    let mut worst_asym = 0.0f64;
    let mut min_q_eig = f64::INFINITY;
    for q in &costs.q {
        worst_asym = worst_asym.max(linalg::asymmetry(q));
        min_q_eig = min_q_eig.min(linalg::lambda_min(q));
    }
    report.push(
        "Q symmetric",
        worst_asym <= tol.symmetry,
        format!("max asymmetry {worst_asym:.3e}"),
    );
    report.push(
        "Q positive definite",
        min_q_eig > 0.0,
        format!("min λ_min(Q_t) {min_q_eig:.3e}"),
    );

    let mut worst_asym_r = 0.0f64;
    let mut min_r_eig = f64::INFINITY;
    for r in &costs.r {
        worst_asym_r = worst_asym_r.max(linalg::asymmetry(r));
        min_r_eig = min_r_eig.min(linalg::lambda_min(r));
    }
    report.push(
        "R symmetric",
        worst_asym_r <= tol.symmetry,
        format!("max asymmetry {worst_asym_r:.3e}"),
    );
    report.push(
        "R positive definite",
        min_r_eig > 0.0,
        format!("min λ_min(R_t) {min_r_eig:.3e}"),
    );

    // Schedule inside the declared bounds (Loewner order, small slack).
    let mut bounds_ok = true;
    let mut worst_slack = 0.0f64;
    for q in &costs.q {
        let lo = linalg::lambda_min(&(q - &bounds.q_min));
        let hi = linalg::lambda_min(&(&bounds.q_max - q));
        worst_slack = worst_slack.min(lo).min(hi);
        bounds_ok &= lo >= -1e-10 && hi >= -1e-10;
    }
    for r in &costs.r {
        let lo = linalg::lambda_min(&(r - &bounds.r_min));
        let hi = linalg::lambda_min(&(&bounds.r_max - r));
        worst_slack = worst_slack.min(lo).min(hi);
        bounds_ok &= lo >= -1e-10 && hi >= -1e-10;
    }
    report.push(
        "costs within bounds",
        bounds_ok,
        format!("worst ordering slack {worst_slack:.3e}"),
    );

    // Stabilizability: DARE iteration with (I, I) must converge.
    let ident_q = DMatrix::identity(n, n);
    let ident_r = DMatrix::identity(n_u, n_u);
    match crate::riccati::solve_dare(&ident_q, &ident_r, sys, tol.dare_tol, tol.dare_max_iter, tol) {
        Ok(_) => report.push("(A, B_u) stabilizable", true, "DARE iteration converged"),
        Err(e) => report.push("(A, B_u) stabilizable", false, format!("{e}")),
    }

    // Detectability of every (A, Q_t).
    let mut detectable = true;
    let mut worst_stage = 0usize;
    for t in 1..=t_horizon {
        let q_sqrt = match linalg::sym_power(costs.q(t), 0.5, tol) {
            Ok(m) => m,
            Err(_) => {
                detectable = false;
                worst_stage = t;
                break;
            }
        };
        let mut block = DMatrix::zeros(n * n, n);
        let mut pow = DMatrix::identity(n, n);
        for k in 0..n {
            block.view_mut((k * n, 0), (n, n)).copy_from(&(&q_sqrt * &pow));
            pow = &pow * &sys.a;
        }
        let svd = block.svd(false, false);
        let sv_max = svd.singular_values.max();
        let rank = svd
            .singular_values
            .iter()
            .filter(|&&s| s > tol.rank_sv_rel * sv_max)
            .count();
        if rank < n {
            detectable = false;
            worst_stage = t;
            break;
        }
    }
    report.push(
        "(A, Q_t) detectable",
        detectable,
        if detectable {
            "observability block full rank at every stage".to_string()
        } else {
            format!("rank deficiency at stage {worst_stage}")
        },
    );

    Ok(report)
}

// ---------------------------------------------------------------------------
// Instance files
// ---------------------------------------------------------------------------

// Line-oriented text schema, all floats at 17 significant digits so reload is
// bit-exact:
//
//   lqrlab-instance v1
//   dims <n> <n_u> <n_d>
//   T <T>
//   seed <seed>
//   A <n*n floats row-major>
//   B_u <n*n_u floats>
//   B_d <n*n_d floats>
//   Q_min / Q_max <n*n floats>   R_min / R_max <n_u*n_u floats>
//   x1 <n floats>
//   Q <t> <n*n floats>           for t = 1..T
//   R <t> <n_u*n_u floats>       for t = 1..T-1
//   d <t> <n_d floats>           for t = 1..T-1

fn fmt_floats(out: &mut String, values: impl Iterator<Item = f64>) {
    for v in values {
        out.push(' ');
        out.push_str(&format!("{v:.16e}"));
    }
    out.push('\n');
}

fn matrix_row_major(m: &DMatrix<f64>) -> impl Iterator<Item = f64> + '_ {
    (0..m.nrows()).flat_map(move |i| (0..m.ncols()).map(move |j| m[(i, j)]))
}

/// Serialize an instance to the documented text schema.
pub fn instance_to_string(inst: &Instance) -> String {
    let mut s = String::new();
    s.push_str("lqrlab-instance v1\n");
    s.push_str(&format!(
        "dims {} {} {}\n",
        inst.sys.state_dim(),
        inst.sys.input_dim(),
        inst.sys.disturbance_dim()
    ));
    s.push_str(&format!("T {}\n", inst.costs.horizon()));
    s.push_str(&format!("seed {}\n", inst.seed));
    for (label, m) in [
        ("A", &inst.sys.a),
        ("B_u", &inst.sys.b_u),
        ("B_d", &inst.sys.b_d),
        ("Q_min", &inst.bounds.q_min),
        ("Q_max", &inst.bounds.q_max),
        ("R_min", &inst.bounds.r_min),
        ("R_max", &inst.bounds.r_max),
    ] {
        s.push_str(label);
        fmt_floats(&mut s, matrix_row_major(m));
    }
    s.push_str("x1");
    fmt_floats(&mut s, inst.trace.x1.iter().copied());
    for (t, q) in inst.costs.q.iter().enumerate() {
        s.push_str(&format!("Q {}", t + 1));
        fmt_floats(&mut s, matrix_row_major(q));
    }
    for (t, r) in inst.costs.r.iter().enumerate() {
        s.push_str(&format!("R {}", t + 1));
        fmt_floats(&mut s, matrix_row_major(r));
    }
    for (t, d) in inst.trace.d.iter().enumerate() {
        s.push_str(&format!("d {}", t + 1));
        fmt_floats(&mut s, d.iter().copied());
    }
    s
}

pub fn save_instance(inst: &Instance, path: &std::path::Path) -> Result<()> {
    std::fs::write(path, instance_to_string(inst)).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })
}

/// Parse the documented text schema back into an [`Instance`].
pub fn instance_from_str(text: &str, path: &str) -> Result<Instance> {
    let err = |line: usize, msg: &str| Error::Parse {
        path: path.to_string(),
        line,
        msg: msg.to_string(),
    };
    let mut lines = text.lines().enumerate();

    let (ln, header) = lines.next().ok_or_else(|| err(1, "empty file"))?;
    if header.trim() != "lqrlab-instance v1" {
        return Err(err(ln + 1, "expected header `lqrlab-instance v1`"));
    }

    let mut dims: Option<(usize, usize, usize)> = None;
    let mut t_horizon: Option<usize> = None;
    let mut seed = 0u64;
    let mut named: std::collections::HashMap<String, Vec<f64>> = std::collections::HashMap::new();
    let mut q_entries: Vec<(usize, Vec<f64>)> = Vec::new();
    let mut r_entries: Vec<(usize, Vec<f64>)> = Vec::new();
    let mut d_entries: Vec<(usize, Vec<f64>)> = Vec::new();

    for (ln, raw) in lines {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let tag = parts.next().unwrap();
        let parse_floats = |parts: std::str::SplitWhitespace, ln: usize| -> Result<Vec<f64>> {
            parts
                .map(|p| {
                    let v = p
                        .parse::<f64>()
                        .map_err(|_| err(ln + 1, &format!("bad float `{p}`")))?;
                    if !v.is_finite() {
                        return Err(err(ln + 1, &format!("non-finite value `{p}`")));
                    }
                    Ok(v)
                })
                .collect()
        };
        match tag {
            "dims" => {
                let v: Vec<usize> = parts
                    .map(|p| p.parse().map_err(|_| err(ln + 1, "bad dims")))
                    .collect::<Result<_>>()?;
                if v.len() != 3 {
                    return Err(err(ln + 1, "dims needs 3 entries"));
                }
                dims = Some((v[0], v[1], v[2]));
            }
            "T" => {
                t_horizon = Some(
                    parts
                        .next()
                        .ok_or_else(|| err(ln + 1, "missing T"))?
                        .parse()
                        .map_err(|_| err(ln + 1, "bad T"))?,
                );
            }
            "seed" => {
                seed = parts
                    .next()
                    .ok_or_else(|| err(ln + 1, "missing seed"))?
                    .parse()
                    .map_err(|_| err(ln + 1, "bad seed"))?;
            }
            "Q" | "R" | "d" => {
                let stage: usize = parts
                    .next()
                    .ok_or_else(|| err(ln + 1, "missing stage index"))?
                    .parse()
                    .map_err(|_| err(ln + 1, "bad stage index"))?;
                let vals = parse_floats(parts, ln)?;
                match tag {
                    "Q" => q_entries.push((stage, vals)),
                    "R" => r_entries.push((stage, vals)),
                    _ => d_entries.push((stage, vals)),
                }
            }
            _ => {
                named.insert(tag.to_string(), parse_floats(parts, ln)?);
            }
        }
    }

    let (n, n_u, n_d) = dims.ok_or_else(|| err(0, "missing dims line"))?;
    let t_horizon = t_horizon.ok_or_else(|| err(0, "missing T line"))?;
    let take = |name: &str, rows: usize, cols: usize| -> Result<DMatrix<f64>> {
        let v = named
            .get(name)
            .ok_or_else(|| err(0, &format!("missing `{name}` line")))?;
        if v.len() != rows * cols {
            return Err(err(0, &format!("`{name}` needs {} floats", rows * cols)));
        }
        Ok(DMatrix::from_row_slice(rows, cols, v))
    };

    let sys = LinearSystem::new(take("A", n, n)?, take("B_u", n, n_u)?, take("B_d", n, n_d)?)?;
    let bounds = CostBounds {
        q_min: take("Q_min", n, n)?,
        q_max: take("Q_max", n, n)?,
        r_min: take("R_min", n_u, n_u)?,
        r_max: take("R_max", n_u, n_u)?,
    };
    let x1_vals = named
        .get("x1")
        .ok_or_else(|| err(0, "missing `x1` line"))?;
    if x1_vals.len() != n {
        return Err(err(0, "`x1` has wrong length"));
    }
    let x1 = DVector::from_row_slice(x1_vals);

    let ordered = |mut entries: Vec<(usize, Vec<f64>)>,
                   count: usize,
                   len: usize,
                   what: &str|
     -> Result<Vec<Vec<f64>>> {
        entries.sort_by_key(|(s, _)| *s);
        if entries.len() != count || entries.iter().enumerate().any(|(k, (s, _))| *s != k + 1) {
            return Err(err(0, &format!("expected `{what}` stages 1..={count}")));
        }
        if entries.iter().any(|(_, v)| v.len() != len) {
            return Err(err(0, &format!("`{what}` entry has wrong length")));
        }
        Ok(entries.into_iter().map(|(_, v)| v).collect())
    };

    let q = ordered(q_entries, t_horizon, n * n, "Q")?
        .into_iter()
        .map(|v| DMatrix::from_row_slice(n, n, &v))
        .collect();
    let r = ordered(r_entries, t_horizon - 1, n_u * n_u, "R")?
        .into_iter()
        .map(|v| DMatrix::from_row_slice(n_u, n_u, &v))
        .collect();
    let d = ordered(d_entries, t_horizon - 1, n_d, "d")?
        .into_iter()
        .map(|v| DVector::from_row_slice(&v))
        .collect();

    Ok(Instance {
        sys,
        costs: CostSchedule::new(q, r)?,
        bounds,
        trace: DisturbanceTrace { x1, d },
        seed,
    })
}

pub fn load_instance(path: &std::path::Path) -> Result<Instance> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    instance_from_str(&text, &path.display().to_string())
}
