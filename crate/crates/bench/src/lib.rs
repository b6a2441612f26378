//! Fixtures shared by the benchmarks: the scalar line system and its
//! safety question at a chosen sample size.

use datacert_core::bounds::{ConfidenceBudget, RhoMode};
use datacert_core::poly::monomial_basis;
use datacert_core::scenario::{
    build_verification_lp, collect_dataset, Caps, ScenarioLp, TransitionDataset,
};
use datacert_core::systems::{Aabb, AffineSystem, Region, SafetySpec};

/// `x+ = 0.5 x + w` with `w ~ N(0, 0.01^2)`.
pub fn line_system() -> AffineSystem {
    AffineSystem::scalar(0.5, 0.01)
}

pub fn line_spec() -> SafetySpec {
    let r = |iv: &[(f64, f64)]| {
        Region::new(
            iv.iter()
                .map(|&p| Aabb::from_intervals(&[p]).unwrap())
                .collect(),
        )
        .unwrap()
    };
    SafetySpec::new(
        r(&[(-1.0, 1.0)]),
        r(&[(-0.1, 0.1)]),
        r(&[(0.8, 1.0), (-1.0, -0.8)]),
        5,
    )
    .unwrap()
}

pub fn line_budget() -> ConfidenceBudget {
    ConfidenceBudget {
        beta: 0.01,
        beta_s: 0.01,
        delta: 0.01,
        m_hat: 0.01,
        epsilon: 0.01,
        rho: RhoMode::Fixed(0.05),
        tighten: false,
    }
}

pub fn line_dataset(n: usize, n_hat: usize, seed: u64) -> TransitionDataset {
    collect_dataset(&line_system(), &line_spec(), None, n, n_hat, seed).unwrap()
}

/// Verification program for a quadratic barrier on the line system.
pub fn line_lp(n: usize, n_hat: usize) -> ScenarioLp {
    let data = line_dataset(n, n_hat, 1);
    let basis = monomial_basis(1, 2, &[]).unwrap();
    build_verification_lp(
        &data,
        &line_spec(),
        &basis,
        &line_budget(),
        &Caps::default(),
    )
    .unwrap()
}
