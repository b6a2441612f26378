//! End-to-end certification jobs: sample-count planning, data collection,
//! scenario program solving and posterior checks of the result.
//!
//! The three procedures share one shape. A [`SamplePlan`] fixes `N_hat`, the
//! Lipschitz constant, `eps_bar` and `N`; a [`DatasetProvider`] supplies the
//! transitions; the scenario program is solved lazily; and the outcome is
//! written into a [`CertificateReport`]. When a norm cap is configured and the
//! program does not certify, the cap is doubled and the plan recomputed, up to
//! `max_rounds` times.

mod report;
mod run;
mod solve;
mod validate;

use serde::{Deserialize, Serialize};

use crate::bounds::{
    eps_bar, lipschitz_control, lipschitz_quadratic, nhat_count, scenario_sample_count,
    scenario_sample_count_kappa, ConfidenceBudget, LipschitzParams,
};
use crate::error::{Error, Result};
use crate::lp::SolverOptions;
use crate::poly::Basis;
use crate::scenario::{
    collect_dataset, DatasetKey, InputPolytope, TransitionDataset, DEFAULT_K_MAX,
};
use crate::systems::{SafetySpec, System};

pub use report::{write_barrier_slice, CapRound, CertificateReport, KappaResult};
pub use run::{run_job, run_synthesis, run_verification, run_verification_kappa};
pub use validate::{
    check_certificate, clopper_pearson_lower, monte_carlo_safety, FeedbackController, McEstimate,
    ViolationSummary,
};

/// Which procedure a job runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobKind {
    Verify,
    Synthesize,
    VerifyKappa,
}

impl std::fmt::Display for JobKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            JobKind::Verify => "verify",
            JobKind::Synthesize => "synthesize",
            JobKind::VerifyKappa => "verify_kappa",
        })
    }
}

/// Where the Lipschitz constant comes from.
#[derive(Clone, Debug, PartialEq)]
pub enum LipschitzSource {
    Given(f64),
    /// Closed-form bound from the drift parameters. The norm caps, when set,
    /// replace `p_norm` and `pu_norm`.
    Lemma(LipschitzParams),
}

/// Norm caps on the barrier and controller coefficients plus the box on `K`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CapSettings {
    pub barrier: Option<f64>,
    pub controller: Option<f64>,
    pub k_max: f64,
    /// Cap doublings attempted after an uncertified solve.
    pub max_rounds: usize,
}

impl Default for CapSettings {
    fn default() -> Self {
        CapSettings {
            barrier: None,
            controller: None,
            k_max: DEFAULT_K_MAX,
            max_rounds: 4,
        }
    }
}

/// Controller structure for synthesis: one polynomial basis per input.
#[derive(Clone, Debug, PartialEq)]
pub struct ControllerSettings {
    pub bases: Vec<Basis>,
    pub inputs: InputPolytope,
}

/// Everything a certification job needs apart from the system itself.
#[derive(Clone, Debug)]
pub struct JobSettings {
    pub spec: SafetySpec,
    pub basis: Basis,
    pub budget: ConfidenceBudget,
    pub lipschitz: LipschitzSource,
    pub caps: CapSettings,
    pub seed: u64,
    /// Use this many base points instead of the required count. Voids the guarantee when smaller.
    pub n_override: Option<u64>,
    /// Use this many successors per point instead of the required count.
    pub n_hat_override: Option<u64>,
    pub solver: SolverOptions,
    /// Required for synthesis.
    pub controller: Option<ControllerSettings>,
    /// Grid for the contraction variant; empty means the default grid.
    pub kappa_grid: Vec<f64>,
}

/// Size of the default contraction grid `{1/10, ..., 9/10}`.
pub const DEFAULT_KAPPA_POINTS: usize = 9;

/// `M` uniform interior points `z / (M + 1)`.
pub fn uniform_kappa_grid(points: usize) -> Vec<f64> {
    (1..=points)
        .map(|z| z as f64 / (points + 1) as f64)
        .collect()
}

impl JobSettings {
    pub fn kappa_grid(&self) -> Vec<f64> {
        if self.kappa_grid.is_empty() {
            uniform_kappa_grid(DEFAULT_KAPPA_POINTS)
        } else {
            self.kappa_grid.clone()
        }
    }

    /// Checks every setting that can be checked without sampling.
    pub fn validate(&self, kind: JobKind, system: &dyn System) -> Result<()> {
        self.spec.validate()?;
        self.budget.validate()?;
        let n = self.spec.dim();
        if self.basis.dim() != n {
            return Err(Error::Config(format!(
                "barrier basis has {} variables but the state set has {n}",
                self.basis.dim()
            )));
        }
        if system.state_dim() != n {
            return Err(Error::Config(format!(
                "system state dimension {} differs from the specification's {n}",
                system.state_dim()
            )));
        }
        match kind {
            JobKind::Verify | JobKind::VerifyKappa => {
                if system.input_dim() != 0 {
                    return Err(Error::Config(format!(
                        "system has {} inputs; verification needs an autonomous system (use synthesize)",
                        system.input_dim()
                    )));
                }
            }
            JobKind::Synthesize => {
                let ctrl = self
                    .controller
                    .as_ref()
                    .ok_or_else(|| Error::Config("synthesis needs a controller section".into()))?;
                let m = system.input_dim();
                if m == 0 || ctrl.bases.len() != m || ctrl.inputs.dim() != m {
                    return Err(Error::Config(format!(
                        "system has {m} inputs, controller has {} polynomials, input set has dimension {}",
                        ctrl.bases.len(),
                        ctrl.inputs.dim()
                    )));
                }
                if ctrl.bases.iter().any(|b| b.dim() != n) {
                    return Err(Error::Config(
                        "controller basis dimension differs from the state dimension".into(),
                    ));
                }
            }
        }
        if kind == JobKind::VerifyKappa {
            if matches!(self.lipschitz, LipschitzSource::Lemma(_)) {
                return Err(Error::Config(
                    "verify_kappa needs lipschitz.mode = \"given\": the closed-form bound does not cover the contraction rows".into(),
                ));
            }
            let grid = self.kappa_grid();
            if let Some(bad) = grid.iter().find(|k| !(**k > 0.0 && **k < 1.0)) {
                return Err(Error::Config(format!(
                    "kappa.grid value {bad} is outside (0,1)"
                )));
            }
        }
        if let LipschitzSource::Given(l) = self.lipschitz {
            if !(l > 0.0 && l.is_finite()) {
                return Err(Error::Config(format!(
                    "lipschitz.value = {l} must be positive"
                )));
            }
        }
        for (name, cap) in [
            ("barrier", self.caps.barrier),
            ("controller", self.caps.controller),
        ] {
            if let Some(c) = cap {
                if !(c > 0.0 && c.is_finite()) {
                    return Err(Error::Config(format!(
                        "solver.{name}_cap = {c} must be positive"
                    )));
                }
            }
        }
        if !(self.caps.k_max > 0.0) {
            return Err(Error::Config("solver.k_max must be positive".into()));
        }
        if self.n_override == Some(0) || self.n_hat_override == Some(0) {
            return Err(Error::Config("sample overrides must be at least 1".into()));
        }
        Ok(())
    }
}

/// Sample sizes and the constants that determine them.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplePlan {
    pub n_hat_required: u64,
    pub n_hat: u64,
    pub lipschitz: f64,
    pub eps_bar: f64,
    /// Number of decision variables entering the tail sum.
    pub dims: u64,
    pub n_required: u64,
    pub n: u64,
    /// Set when an override drops below a required count.
    pub guarantees_void: bool,
}

impl SamplePlan {
    /// Simulator calls needed to collect the dataset.
    pub fn simulator_calls(&self) -> u128 {
        self.n as u128 * self.n_hat as u128
    }
}

/// Exponent of `eps / L` in `eps_bar`: the state dimension, plus the input dimension for synthesis.
fn sample_space_dim(kind: JobKind, job: &JobSettings) -> usize {
    let m = match (kind, &job.controller) {
        (JobKind::Synthesize, Some(c)) => c.inputs.dim(),
        _ => 0,
    };
    job.spec.dim() + m
}

/// Lipschitz constant for the given caps.
pub fn lipschitz_for(
    kind: JobKind,
    job: &JobSettings,
    barrier_cap: Option<f64>,
    controller_cap: Option<f64>,
) -> Result<f64> {
    match &job.lipschitz {
        LipschitzSource::Given(l) => Ok(*l),
        LipschitzSource::Lemma(params) => {
            let mut p = *params;
            if let Some(c) = barrier_cap {
                p.p_norm = c;
            }
            if let Some(c) = controller_cap {
                p.pu_norm = c;
            }
            match kind {
                JobKind::Synthesize => {
                    p.m = sample_space_dim(kind, job) - job.spec.dim();
                    Ok(lipschitz_control(&p)?.total)
                }
                _ => lipschitz_quadratic(&p),
            }
        }
    }
}

/// Computes `N_hat`, the Lipschitz constant, `eps_bar` and `N` without sampling anything.
pub fn sample_plan(
    kind: JobKind,
    job: &JobSettings,
    barrier_cap: Option<f64>,
    controller_cap: Option<f64>,
) -> Result<SamplePlan> {
    let b = &job.budget;
    let n_hat_required = nhat_count(b.m_hat, b.delta, b.beta_s)?;
    let lipschitz = lipschitz_for(kind, job, barrier_cap, controller_cap)?;
    let eps_bar = eps_bar(b.epsilon, lipschitz, sample_space_dim(kind, job))?;
    let controller_terms: usize = match (kind, &job.controller) {
        (JobKind::Synthesize, Some(c)) => c.bases.iter().map(Basis::len).sum(),
        _ => 0,
    };
    let dims = (job.basis.len() + controller_terms + 2) as u64;
    let n_required = match kind {
        JobKind::VerifyKappa => {
            scenario_sample_count_kappa(eps_bar, b.beta, dims, job.kappa_grid().len() as u64)?
        }
        _ => scenario_sample_count(eps_bar, b.beta, dims)?,
    };
    let n = job.n_override.unwrap_or(n_required);
    let n_hat = job.n_hat_override.unwrap_or(n_hat_required);
    Ok(SamplePlan {
        n_hat_required,
        n_hat,
        lipschitz,
        eps_bar,
        dims,
        n_required,
        n,
        guarantees_void: n < n_required || n_hat < n_hat_required,
    })
}

/// Source of transition datasets. Implementations may cache on disk.
pub trait DatasetProvider: Sync {
    fn provide(&self, system: &dyn System, key: &DatasetKey) -> Result<TransitionDataset>;
}

/// Collects a fresh dataset on every request.
#[derive(Clone, Copy, Debug, Default)]
pub struct SamplingProvider;

impl DatasetProvider for SamplingProvider {
    fn provide(&self, system: &dyn System, key: &DatasetKey) -> Result<TransitionDataset> {
        collect_dataset(
            system,
            &key.spec,
            key.inputs.as_ref(),
            key.n_samples,
            key.n_hat,
            key.seed,
        )
    }
}
