//! Posterior checks of a produced certificate against the system.
//!
//! Neither check is a proof. Monte Carlo estimates the safety probability of
//! the closed loop; the grid check evaluates the barrier conditions on dense
//! grids and the expected-growth condition with fresh noise.

use rayon::prelude::*;
use statrs::distribution::{Beta, ContinuousCDF};

use super::report::CertificateReport;
use crate::error::{Error, Result};
use crate::poly::Polynomial;
use crate::scenario::InputPolytope;
use crate::systems::rng::{key, Domain};
use crate::systems::{SafetySpec, System};

/// Polynomial state feedback `u = [P_1(x), ..., P_m(x)]` restricted to an input set.
#[derive(Clone, Debug)]
pub struct FeedbackController {
    polys: Vec<Polynomial>,
    inputs: InputPolytope,
}

impl FeedbackController {
    pub fn new(polys: Vec<Polynomial>, inputs: InputPolytope) -> Result<Self> {
        if polys.len() != inputs.dim() || polys.is_empty() {
            return Err(Error::Argument(format!(
                "{} controller polynomials for an input set of dimension {}",
                polys.len(),
                inputs.dim()
            )));
        }
        Ok(FeedbackController { polys, inputs })
    }

    pub fn polys(&self) -> &[Polynomial] {
        &self.polys
    }

    /// Controller output at `x`, projected onto a box-shaped input set.
    /// `None` when a general polytope excludes the raw output.
    pub fn input(&self, x: &[f64]) -> Result<Option<Vec<f64>>> {
        let raw = self
            .polys
            .iter()
            .map(|p| p.eval(x))
            .collect::<Result<Vec<f64>>>()?;
        if let Some(clipped) = self.inputs.clip(&raw) {
            return Ok(Some(clipped));
        }
        Ok(self.inputs.contains(&raw, 1e-9).then_some(raw))
    }
}

/// Result of a Monte Carlo safety estimate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McEstimate {
    pub trials: u64,
    pub safe: u64,
    /// Trials dropped because the controller left a non-box input set.
    pub rejected: u64,
    pub p_hat: f64,
    /// One-sided 99% Clopper–Pearson lower bound on the safety probability.
    pub ci_low: f64,
}

/// One-sided Clopper–Pearson lower confidence bound at level `1 - alpha`.
pub fn clopper_pearson_lower(successes: u64, trials: u64, alpha: f64) -> f64 {
    if trials == 0 || successes == 0 {
        return 0.0;
    }
    if successes == trials {
        return alpha.powf(1.0 / trials as f64);
    }
    let a = successes as f64;
    let b = (trials - successes + 1) as f64;
    Beta::new(a, b).map_or(0.0, |beta| beta.inverse_cdf(alpha))
}

enum Trial {
    Safe,
    Unsafe,
    Rejected,
}

/// Simulates `trials` trajectories from uniform initial states over `horizon`
/// steps and counts those that never enter the unsafe set.
///
/// A zero horizon has no steps and therefore no way to fail.
pub fn monte_carlo_safety(
    system: &dyn System,
    spec: &SafetySpec,
    controller: Option<&FeedbackController>,
    trials: u64,
    seed: u64,
) -> Result<McEstimate> {
    if trials == 0 {
        return Err(Error::Argument(
            "Monte Carlo needs at least one trial".into(),
        ));
    }
    let m = system.input_dim();
    match controller {
        Some(c) if c.polys.len() != m => {
            return Err(Error::Argument(format!(
                "controller has {} outputs, system has {m} inputs",
                c.polys.len()
            )))
        }
        None if m > 0 => {
            return Err(Error::Argument(
                "a system with inputs needs a controller".into(),
            ))
        }
        _ => {}
    }
    let h = spec.horizon as u64;
    let outcomes = (0..trials)
        .into_par_iter()
        .map(|t| -> Result<Trial> {
            let mut rng = key(seed, Domain::TrialStart, t).stream();
            let mut x = spec.initial.sample_uniform(&mut rng);
            for step in 0..h {
                let u = match controller {
                    Some(c) => match c.input(&x)? {
                        Some(u) => u,
                        None => return Ok(Trial::Rejected),
                    },
                    None => Vec::new(),
                };
                x = system.step(&x, &u, key(seed, Domain::TrialStep, t * h + step))?;
                if spec.unsafe_set.contains(&x) {
                    return Ok(Trial::Unsafe);
                }
            }
            Ok(Trial::Safe)
        })
        .try_fold(
            || (0u64, 0u64),
            |(safe, rejected), r| {
                r.map(|t| match t {
                    Trial::Safe => (safe + 1, rejected),
                    Trial::Unsafe => (safe, rejected),
                    Trial::Rejected => (safe, rejected + 1),
                })
            },
        )
        .try_reduce(|| (0, 0), |a, b| Ok((a.0 + b.0, a.1 + b.1)))?;
    let (safe, rejected) = outcomes;
    let counted = trials - rejected;
    Ok(McEstimate {
        trials,
        safe,
        rejected,
        p_hat: if counted == 0 {
            f64::NAN
        } else {
            safe as f64 / counted as f64
        },
        ci_low: clopper_pearson_lower(safe, counted, 0.01),
    })
}

/// Largest violation of each barrier condition found by the grid check.
/// Positive values are violations.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ViolationSummary {
    /// `max(-B)` over the state grid.
    pub nonneg: f64,
    /// `max(B - 1)` over the initial-set grid.
    pub initial: f64,
    /// `max(lambda - B)` over the unsafe-set grid.
    pub unsafe_set: f64,
    /// Largest empirical `mean B(x+) - s B(x) - c` over the state grid, with
    /// `s = kappa` for contraction certificates and `1` otherwise. Statistical.
    pub growth: f64,
    pub state_points: usize,
    pub initial_points: usize,
    pub unsafe_points: usize,
    /// State-grid points skipped because the controller left a non-box input set.
    pub skipped: usize,
}

impl ViolationSummary {
    /// True when every condition holds up to `tol`.
    pub fn passes(&self, tol: f64) -> bool {
        [self.nonneg, self.initial, self.unsafe_set, self.growth]
            .iter()
            .all(|v| *v <= tol)
    }
}

fn max_over(points: &[Vec<f64>], f: impl Fn(&[f64]) -> Result<f64> + Sync) -> Result<f64> {
    points
        .par_iter()
        .map(|x| f(x))
        .try_reduce(|| f64::NEG_INFINITY, |a, b| Ok(a.max(b)))
}

/// Evaluates the barrier conditions of `report` on `grid_per_dim`-point grids of
/// the state, initial and unsafe sets, drawing `fresh_n_hat` new successors per
/// state-grid point for the growth condition.
pub fn check_certificate(
    report: &CertificateReport,
    system: &dyn System,
    spec: &SafetySpec,
    inputs: Option<&InputPolytope>,
    grid_per_dim: usize,
    fresh_n_hat: usize,
    seed: u64,
) -> Result<ViolationSummary> {
    if fresh_n_hat == 0 {
        return Err(Error::Argument(
            "the growth check needs at least one successor per point".into(),
        ));
    }
    let b = &report.barrier;
    if b.dim() != spec.dim() {
        return Err(Error::Argument(
            "barrier and specification dimensions differ".into(),
        ));
    }
    let controller = match (&report.controller, inputs) {
        (Some(polys), Some(u)) => Some(FeedbackController::new(polys.clone(), u.clone())?),
        (Some(_), None) => {
            return Err(Error::Argument(
                "a controller report needs its input set".into(),
            ))
        }
        (None, _) => None,
    };
    if controller.is_none() && system.input_dim() > 0 {
        return Err(Error::Argument(
            "a system with inputs needs a controller report".into(),
        ));
    }

    let state = spec.state.grid(grid_per_dim);
    let initial = spec.initial.grid(grid_per_dim);
    let unsafe_pts = spec.unsafe_set.grid(grid_per_dim);
    let nonneg = max_over(&state, |x| Ok(-b.eval(x)?))?;
    let initial_v = max_over(&initial, |x| Ok(b.eval(x)? - 1.0))?;
    let unsafe_v = max_over(&unsafe_pts, |x| Ok(report.lambda - b.eval(x)?))?;

    let scale = report.kappa.unwrap_or(1.0);
    let growth: Vec<Option<f64>> = state
        .par_iter()
        .enumerate()
        .map(|(p, x)| -> Result<Option<f64>> {
            let u = match &controller {
                Some(c) => match c.input(x)? {
                    Some(u) => u,
                    None => return Ok(None),
                },
                None => Vec::new(),
            };
            let mut mean = 0.0;
            for j in 0..fresh_n_hat {
                let next = system.step(
                    x,
                    &u,
                    key(seed, Domain::CheckNoise, (p * fresh_n_hat + j) as u64),
                )?;
                mean += b.eval(&next)?;
            }
            mean /= fresh_n_hat as f64;
            Ok(Some(mean - scale * b.eval(x)? - report.c))
        })
        .collect::<Result<_>>()?;
    let skipped = growth.iter().filter(|g| g.is_none()).count();
    let growth_v = growth
        .into_iter()
        .flatten()
        .fold(f64::NEG_INFINITY, f64::max);

    Ok(ViolationSummary {
        nonneg,
        initial: initial_v,
        unsafe_set: unsafe_v,
        growth: growth_v,
        state_points: state.len(),
        initial_points: initial.len(),
        unsafe_points: unsafe_pts.len(),
        skipped,
    })
}
