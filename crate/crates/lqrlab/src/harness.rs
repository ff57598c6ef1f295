//! Experiment driver: regret-vs-window sweeps over seeded random instances.
//!
//! A sweep is the cartesian product `seeds × W values × snr levels`. Every
//! cell generates its instance from the seed, builds predictions, runs the
//! MPC rollout and prices its regret. Output is CSV with a fixed header and
//! 17-significant-digit floats; cells are computed in parallel, gathered,
//! and sorted, so the bytes never depend on scheduling or the job count.
//!
//! `wall_ms` is 0 unless timing is explicitly enabled — real timings and
//! byte-identical reruns are mutually exclusive, and determinism is the
//! default contract.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::Tolerances;
use crate::error::{Error, Result};
use crate::model::{
    generate_instance, make_predictions, GeneratorProfile, Instance, LinearSystem, NoiseSpec,
};
use crate::mpc::{mpc_rollout, MpcOptions};
use crate::offline::{build_offline_policy, optimal_rollout};
use crate::regret::{dynamic_regret, regret_bound_factors};
use crate::riccati::stability_constants;

pub const CSV_HEADER: &str =
    "seed,W,snr,J_pi,J_star,regret,partI_coeff,energy_d,partII_coeff,energy_e,wall_ms";

/// Serializable description of a [`GeneratorProfile`]. Defaults to the
/// two-state swap system with the standard cost ranges.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ProfileConfig {
    pub n: usize,
    pub n_u: usize,
    pub n_d: usize,
    /// Row-major `A`, `B_u`, `B_d`.
    pub a: Vec<f64>,
    pub b_u: Vec<f64>,
    pub b_d: Vec<f64>,
    pub q_range: (f64, f64),
    pub r_range: (f64, f64),
    pub disturbance_std: f64,
    pub x1_std: f64,
}

impl Default for ProfileConfig {
    fn default() -> Self {
        ProfileConfig {
            n: 2,
            n_u: 1,
            n_d: 1,
            a: vec![0.0, 1.0, 1.0, 0.0],
            b_u: vec![0.0, 1.0],
            b_d: vec![0.0, 1.0],
            q_range: (2.0, 3.0),
            r_range: (5.0, 6.0),
            disturbance_std: 1.0,
            x1_std: 1.0,
        }
    }
}

impl ProfileConfig {
    pub fn build(&self) -> Result<GeneratorProfile> {
        let check = |name: &'static str, v: &[f64], rows: usize, cols: usize| -> Result<()> {
            if v.len() != rows * cols {
                return Err(Error::Config(format!(
                    "profile `{name}` needs {} entries, got {}",
                    rows * cols,
                    v.len()
                )));
            }
            Ok(())
        };
        check("a", &self.a, self.n, self.n)?;
        check("b_u", &self.b_u, self.n, self.n_u)?;
        check("b_d", &self.b_d, self.n, self.n_d)?;
        let system = LinearSystem::new(
            nalgebra::DMatrix::from_row_slice(self.n, self.n, &self.a),
            nalgebra::DMatrix::from_row_slice(self.n, self.n_u, &self.b_u),
            nalgebra::DMatrix::from_row_slice(self.n, self.n_d, &self.b_d),
        )?;
        Ok(GeneratorProfile {
            system,
            q_range: self.q_range,
            r_range: self.r_range,
            disturbance_std: self.disturbance_std,
            x1_std: self.x1_std,
        })
    }
}

/// A full sweep description. Loadable from TOML; every field has a default
/// so partial files work.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Horizon `T` of every generated instance.
    pub t: usize,
    pub seeds: Vec<u64>,
    pub ws: Vec<usize>,
    pub snrs: Vec<f64>,
    pub profile: ProfileConfig,
    /// Worker threads; 0 means one per core.
    pub jobs: usize,
    /// Record real per-cell wall time (breaks byte-identical reruns).
    pub timing: bool,
    pub tolerances: Tolerances,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            t: 200,
            seeds: (1..=20).collect(),
            ws: (1..=10).collect(),
            snrs: vec![0.0],
            profile: ProfileConfig::default(),
            jobs: 0,
            timing: false,
            tolerances: Tolerances::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("config parse: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.t < 2 {
            return Err(Error::Config(format!("t must be ≥ 2, got {}", self.t)));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seed list is empty".into()));
        }
        if self.ws.is_empty() {
            return Err(Error::Config("W list is empty".into()));
        }
        if self.snrs.is_empty() {
            return Err(Error::Config("snr list is empty".into()));
        }
        if self.snrs.iter().any(|&s| s.is_nan() || s < 0.0) {
            return Err(Error::Config("snr values must be ≥ 0".into()));
        }
        Ok(())
    }
}

/// One sweep cell's results.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub seed: u64,
    pub w: usize,
    pub snr: f64,
    pub j_pi: f64,
    pub j_star: f64,
    pub regret: f64,
    pub part_i_coeff: f64,
    pub energy_d: f64,
    pub part_ii_coeff: f64,
    pub energy_e: f64,
    pub wall_ms: u64,
}

impl SweepRow {
    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{}",
            self.seed,
            self.w,
            self.snr,
            self.j_pi,
            self.j_star,
            self.regret,
            self.part_i_coeff,
            self.energy_d,
            self.part_ii_coeff,
            self.energy_e,
            self.wall_ms
        )
    }
}

#[derive(Debug, Clone)]
pub struct CellFailure {
    pub seed: u64,
    pub w: usize,
    pub snr: f64,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub failures: Vec<CellFailure>,
}

fn noise_for(snr: f64) -> NoiseSpec {
    if snr == 0.0 {
        NoiseSpec::Accurate
    } else {
        NoiseSpec::Iid { snr }
    }
}

/// Run one `(seed, W, snr)` cell against an already-built instance.
fn run_cell(
    inst: &Instance,
    policy_j_star: f64,
    constants: &crate::riccati::StabilityConstants,
    w: usize,
    snr: f64,
    timing: bool,
    tol: &Tolerances,
) -> Result<SweepRow> {
    let started = Instant::now();
    let preds = make_predictions(&inst.trace, w, noise_for(snr), inst.seed);
    let rollout = mpc_rollout(
        &inst.sys,
        &inst.costs,
        &constants.p_max,
        &inst.trace,
        &preds,
        &MpcOptions { retain_gains: false },
        tol,
    )?;
    let factors = regret_bound_factors(constants, w, &inst.trace, &preds, &inst.sys, tol)?;
    let j_pi = rollout.traj.total;
    let wall_ms = if timing {
        started.elapsed().as_millis() as u64
    } else {
        0
    };
    Ok(SweepRow {
        seed: inst.seed,
        w,
        snr,
        j_pi,
        j_star: policy_j_star,
        regret: j_pi - policy_j_star,
        part_i_coeff: factors.part_i_coeff,
        energy_d: factors.energy_d,
        part_ii_coeff: factors.part_ii_coeff,
        energy_e: factors.energy_e,
        wall_ms,
    })
}

/// All cells for one seed: the instance, offline policy and `J*` are shared.
fn run_seed(config: &ExperimentConfig, seed: u64) -> (Vec<SweepRow>, Vec<CellFailure>) {
    let tol = &config.tolerances;
    let mut rows = Vec::new();
    let mut failures = Vec::new();

    let prepared = (|| -> Result<_> {
        let profile = config.profile.build()?;
        let inst = generate_instance(seed, config.t, &profile)?;
        let constants = stability_constants(&inst.sys, &inst.bounds, tol)?;
        let policy = build_offline_policy(&inst.sys, &inst.costs, tol)?;
        let j_star = optimal_rollout(&policy, &inst.trace)?.total;
        Ok((inst, constants, j_star))
    })();

    let (inst, constants, j_star) = match prepared {
        Ok(v) => v,
        Err(e) => {
            for &w in &config.ws {
                for &snr in &config.snrs {
                    failures.push(CellFailure {
                        seed,
                        w,
                        snr,
                        message: format!("instance setup: {e}"),
                    });
                }
            }
            return (rows, failures);
        }
    };

    for &w in &config.ws {
        for &snr in &config.snrs {
            match run_cell(&inst, j_star, &constants, w, snr, config.timing, tol) {
                Ok(row) => rows.push(row),
                Err(e) => failures.push(CellFailure {
                    seed,
                    w,
                    snr,
                    message: format!("{e}"),
                }),
            }
        }
    }
    (rows, failures)
}

/// Run the whole sweep. Rows come back sorted by `(seed, W, snr)` regardless
/// of scheduling; failed cells are collected, not fatal.
pub fn run_sweep(config: &ExperimentConfig) -> Result<SweepResult> {
    config.validate()?;
    let per_seed: Vec<(Vec<SweepRow>, Vec<CellFailure>)> = if config.jobs == 1 {
        config.seeds.iter().map(|&s| run_seed(config, s)).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.jobs)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(|| {
            use rayon::prelude::*;
            config
                .seeds
                .par_iter()
                .map(|&s| run_seed(config, s))
                .collect()
        })
    };

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (r, f) in per_seed {
        rows.extend(r);
        failures.extend(f);
    }
    rows.sort_by(|a, b| {
        (a.seed, a.w)
            .cmp(&(b.seed, b.w))
            .then(a.snr.total_cmp(&b.snr))
    });
    failures.sort_by(|a, b| {
        (a.seed, a.w)
            .cmp(&(b.seed, b.w))
            .then(a.snr.total_cmp(&b.snr))
    });
    Ok(SweepResult { rows, failures })
}

/// Render the documented CSV.
pub fn sweep_to_csv(result: &SweepResult) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for row in &result.rows {
        out.push_str(&row.to_csv_line());
        out.push('\n');
    }
    out
}

pub fn emit_csv(result: &SweepResult, path: &std::path::Path) -> Result<()> {
    std::fs::write(path, sweep_to_csv(result)).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })
}

/// Outcome of replaying one CSV row.
#[derive(Debug, Clone)]
pub struct ReplayOutcome {
    pub recomputed: SweepRow,
    /// Field-by-field comparison against the supplied row (name, given,
    /// recomputed, match). `wall_ms` is exempt.
    pub fields: Vec<(&'static str, f64, f64, bool)>,
}

impl ReplayOutcome {
    pub fn matches(&self) -> bool {
        self.fields.iter().all(|f| f.3)
    }
}

/// Recompute one row of a sweep CSV from its `(seed, W, snr)` triple and
/// check the numeric columns at relative `1e-9`.
pub fn replay_row(config: &ExperimentConfig, line: &str) -> Result<ReplayOutcome> {
    let parts: Vec<&str> = line.trim().split(',').collect();
    let expected = CSV_HEADER.split(',').count();
    if parts.len() != expected {
        return Err(Error::Config(format!(
            "row has {} fields, expected {expected}",
            parts.len()
        )));
    }
    let parse_f = |idx: usize, name: &str| -> Result<f64> {
        parts[idx]
            .parse::<f64>()
            .map_err(|_| Error::Config(format!("bad {name} `{}`", parts[idx])))
    };
    let seed: u64 = parts[0]
        .parse()
        .map_err(|_| Error::Config(format!("bad seed `{}`", parts[0])))?;
    let w: usize = parts[1]
        .parse()
        .map_err(|_| Error::Config(format!("bad W `{}`", parts[1])))?;
    let snr = parse_f(2, "snr")?;

    let profile = config.profile.build()?;
    let inst = generate_instance(seed, config.t, &profile)?;
    let constants = stability_constants(&inst.sys, &inst.bounds, &config.tolerances)?;
    let policy = build_offline_policy(&inst.sys, &inst.costs, &config.tolerances)?;
    let j_star = optimal_rollout(&policy, &inst.trace)?.total;
    let row = run_cell(
        &inst,
        j_star,
        &constants,
        w,
        snr,
        false,
        &config.tolerances,
    )?;

    let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * (1.0 + a.abs().max(b.abs()));
    let fields = vec![
        ("J_pi", parse_f(3, "J_pi")?, row.j_pi, close(parse_f(3, "J_pi")?, row.j_pi)),
        ("J_star", parse_f(4, "J_star")?, row.j_star, close(parse_f(4, "J_star")?, row.j_star)),
        ("regret", parse_f(5, "regret")?, row.regret, close(parse_f(5, "regret")?, row.regret)),
        (
            "partI_coeff",
            parse_f(6, "partI_coeff")?,
            row.part_i_coeff,
            close(parse_f(6, "partI_coeff")?, row.part_i_coeff),
        ),
        (
            "energy_d",
            parse_f(7, "energy_d")?,
            row.energy_d,
            close(parse_f(7, "energy_d")?, row.energy_d),
        ),
        (
            "partII_coeff",
            parse_f(8, "partII_coeff")?,
            row.part_ii_coeff,
            close(parse_f(8, "partII_coeff")?, row.part_ii_coeff),
        ),
        (
            "energy_e",
            parse_f(9, "energy_e")?,
            row.energy_e,
            close(parse_f(9, "energy_e")?, row.energy_e),
        ),
    ];
    Ok(ReplayOutcome {
        recomputed: row,
        fields,
    })
}

/// Regret report plus full diagnostics for one cell, used by the CLI's
/// verbose paths and by tests that need the whole record.
pub fn full_cell_report(
    inst: &Instance,
    w: usize,
    snr: f64,
    tol: &Tolerances,
) -> Result<crate::regret::RegretReport> {
    let constants = stability_constants(&inst.sys, &inst.bounds, tol)?;
    let preds = make_predictions(&inst.trace, w, noise_for(snr), inst.seed);
    let rollout = mpc_rollout(
        &inst.sys,
        &inst.costs,
        &constants.p_max,
        &inst.trace,
        &preds,
        &MpcOptions::default(),
        tol,
    )?;
    let policy = build_offline_policy(&inst.sys, &inst.costs, tol)?;
    let mut report = dynamic_regret(&rollout, &policy, &inst.trace)?;
    report.decomposition = Some(crate::regret::decompose_action_errors(
        &rollout,
        &policy,
        &inst.trace,
        &preds,
    )?);
    report.bound = Some(regret_bound_factors(
        &constants,
        w,
        &inst.trace,
        &preds,
        &inst.sys,
        tol,
    )?);
    Ok(report)
}
