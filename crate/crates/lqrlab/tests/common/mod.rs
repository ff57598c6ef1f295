//! Shared generators for the integration suites.
#![allow(dead_code)] // each suite uses its own subset

use nalgebra::{DMatrix, DVector};

use lqrlab::config::Tolerances;
use lqrlab::linalg;
use lqrlab::model::{CostBounds, CostSchedule, DisturbanceTrace, GeneratorProfile, Instance};
use lqrlab::riccati::{stability_constants, StabilityConstants};
use lqrlab::rng::Stream;

pub fn tol() -> Tolerances {
    Tolerances::default()
}

pub fn paper_constants() -> (GeneratorProfile, StabilityConstants) {
    let profile = GeneratorProfile::paper();
    let constants = stability_constants(&profile.system, &profile.bounds(), &tol()).unwrap();
    (profile, constants)
}

/// Haar-ish random orthogonal matrix from the QR of a Gaussian.
pub fn random_orthogonal(n: usize, stream: &mut Stream) -> DMatrix<f64> {
    let g = DMatrix::from_fn(n, n, |_, _| stream.standard_normal());
    let qr = g.qr();
    qr.q()
}

/// Random symmetric matrix with `lo ⪯ X ⪯ hi`:
/// `X = lo + Δ^{1/2} V diag(u) V' Δ^{1/2}` with `u ∈ [0,1]^n`, `Δ = hi − lo`.
pub fn random_pd_between(
    lo: &DMatrix<f64>,
    hi: &DMatrix<f64>,
    stream: &mut Stream,
) -> DMatrix<f64> {
    let n = lo.nrows();
    let delta = hi - lo;
    let delta_sqrt = linalg::sym_power(&delta, 0.5, &tol()).unwrap();
    let v = random_orthogonal(n, stream);
    let mut mid = DMatrix::zeros(n, n);
    for i in 0..n {
        let u = stream.uniform();
        for r in 0..n {
            for c in 0..n {
                mid[(r, c)] += u * v[(r, i)] * v[(c, i)];
            }
        }
    }
    linalg::symmetrize(&(lo + &delta_sqrt * mid * &delta_sqrt))
}

/// Random schedule with every stage inside the bound box.
pub fn random_inbounds_costs(
    bounds: &CostBounds,
    t_horizon: usize,
    stream: &mut Stream,
) -> CostSchedule {
    let q = (0..t_horizon)
        .map(|_| random_pd_between(&bounds.q_min, &bounds.q_max, stream))
        .collect();
    let r = (0..t_horizon - 1)
        .map(|_| random_pd_between(&bounds.r_min, &bounds.r_max, stream))
        .collect();
    CostSchedule::new(q, r).unwrap()
}

/// Paper-profile system with a random in-bounds schedule and Gaussian trace.
pub fn random_inbounds_instance(seed: u64, t_horizon: usize) -> Instance {
    let profile = GeneratorProfile::paper();
    let bounds = profile.bounds();
    let mut stream = Stream::new(seed, &[901]);
    let costs = random_inbounds_costs(&bounds, t_horizon, &mut stream);
    let n_d = profile.system.disturbance_dim();
    let trace = DisturbanceTrace {
        x1: DVector::from_fn(profile.system.state_dim(), |_, _| stream.standard_normal()),
        d: (0..t_horizon - 1)
            .map(|_| DVector::from_fn(n_d, |_, _| stream.standard_normal()))
            .collect(),
    };
    Instance {
        sys: profile.system.clone(),
        costs,
        bounds,
        trace,
        seed,
    }
}

pub fn median(mut xs: Vec<f64>) -> f64 {
    assert!(!xs.is_empty());
    xs.sort_by(|a, b| a.total_cmp(b));
    let mid = xs.len() / 2;
    if xs.len() % 2 == 1 {
        xs[mid]
    } else {
        0.5 * (xs[mid - 1] + xs[mid])
    }
}
