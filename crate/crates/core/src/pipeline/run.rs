//! Verification, synthesis and contraction-grid procedures.

use rayon::prelude::*;

use super::report::{provenance, CapRound, CertificateReport, KappaResult};
use super::solve::minimise_rho;
use super::{sample_plan, DatasetProvider, JobKind, JobSettings, LipschitzSource, SamplePlan};
use crate::bounds::{rho_kappa, rho_linear, RhoMode};
use crate::error::{Error, Result};
use crate::lp::{solve_lazy, LpSolution, LpStatus};
use crate::poly::Polynomial;
use crate::scenario::{
    build_kappa_lp, build_synthesis_lp, build_verification_lp, Caps, DatasetKey, DecisionLayout,
    ScenarioLp, TransitionDataset,
};
use crate::systems::System;

/// Algorithm for an autonomous system: sample, solve, certify if `K* + epsilon <= 0`.
pub fn run_verification(
    system: &dyn System,
    job: &JobSettings,
    provider: &dyn DatasetProvider,
) -> Result<CertificateReport> {
    run_job(JobKind::Verify, system, job, provider)
}

/// Joint barrier and polynomial controller search from `(x, u)` samples.
pub fn run_synthesis(
    system: &dyn System,
    job: &JobSettings,
    provider: &dyn DatasetProvider,
) -> Result<CertificateReport> {
    run_job(JobKind::Synthesize, system, job, provider)
}

/// Contraction-factor grid: one dataset, one program per factor, best bound wins.
pub fn run_verification_kappa(
    system: &dyn System,
    job: &JobSettings,
    provider: &dyn DatasetProvider,
) -> Result<CertificateReport> {
    run_job(JobKind::VerifyKappa, system, job, provider)
}

/// Solution of one scenario program, with the point that is reported.
struct Outcome {
    sol: LpSolution,
    k_star: f64,
    d: Vec<f64>,
    k_at_bound: f64,
    certified: bool,
    rho: f64,
    kappa: Option<f64>,
    max_violation: f64,
    total_rows: usize,
    layout: DecisionLayout,
    kappa_results: Vec<KappaResult>,
}

/// Runs `kind`, relaxing the norm caps while the program fails to certify.
pub fn run_job(
    kind: JobKind,
    system: &dyn System,
    job: &JobSettings,
    provider: &dyn DatasetProvider,
) -> Result<CertificateReport> {
    job.validate(kind, system)?;
    let mut barrier_cap = job.caps.barrier;
    let mut controller_cap = if kind == JobKind::Synthesize {
        job.caps.controller
    } else {
        None
    };
    let relaxable = barrier_cap.is_some() || controller_cap.is_some();
    let inputs = match kind {
        JobKind::Synthesize => job.controller.as_ref().map(|c| c.inputs.clone()),
        _ => None,
    };
    let mut rounds = Vec::new();
    let mut cached: Option<(String, TransitionDataset)> = None;
    loop {
        let plan = sample_plan(kind, job, barrier_cap, controller_cap)?;
        let key = DatasetKey {
            system: system.describe(),
            spec: job.spec.clone(),
            inputs: inputs.clone(),
            n_samples: usize::try_from(plan.n)
                .map_err(|_| Error::Config(format!("N = {} is too large", plan.n)))?,
            n_hat: plan.n_hat as usize,
            seed: job.seed,
        };
        let fingerprint = key.fingerprint();
        if cached.as_ref().map(|c| &c.0) != Some(&fingerprint) {
            let data = provider.provide(system, &key)?;
            if data.len() != key.n_samples || data.n_hat() != key.n_hat {
                return Err(Error::Data(format!(
                    "dataset provider returned {} x {} transitions, expected {} x {}",
                    data.len(),
                    data.n_hat(),
                    key.n_samples,
                    key.n_hat
                )));
            }
            cached = Some((fingerprint.clone(), data));
        }
        let data = &cached.as_ref().unwrap().1;
        let caps = Caps {
            barrier: barrier_cap,
            controller: controller_cap,
            k_max: job.caps.k_max,
        };
        let outcome = match kind {
            JobKind::VerifyKappa => solve_kappa(job, data, &plan, &caps)?,
            _ => solve_linear(kind, job, data, &plan, &caps)?,
        };
        rounds.push(CapRound {
            round: rounds.len(),
            barrier_cap,
            controller_cap,
            lipschitz: plan.lipschitz,
            eps_bar: plan.eps_bar,
            n_required: plan.n_required,
            k_star: outcome.k_star,
            certified: outcome.certified,
        });
        let done = outcome.certified || !relaxable || rounds.len() > job.caps.max_rounds;
        if done {
            return report(
                kind,
                system,
                job,
                &plan,
                outcome,
                data,
                fingerprint,
                rounds,
                (barrier_cap, controller_cap),
            );
        }
        barrier_cap = barrier_cap.map(|c| 2.0 * c);
        controller_cap = controller_cap.map(|c| 2.0 * c);
    }
}

fn sample_dim(kind: JobKind, data: &TransitionDataset) -> usize {
    match kind {
        JobKind::Synthesize => data.state_dim() + data.input_dim(),
        _ => data.state_dim(),
    }
}

/// Tightening margin `L * epsilon^(1/dim)` when requested.
fn maybe_tighten(
    kind: JobKind,
    job: &JobSettings,
    plan: &SamplePlan,
    data: &TransitionDataset,
    lp: ScenarioLp,
) -> ScenarioLp {
    if job.budget.tighten {
        let dim = sample_dim(kind, data) as f64;
        lp.tighten(plan.lipschitz * job.budget.epsilon.powf(1.0 / dim))
    } else {
        lp
    }
}

fn second_stage_tol(k_star: f64) -> f64 {
    1e-9 * (1.0 + k_star.abs())
}

fn solve_linear(
    kind: JobKind,
    job: &JobSettings,
    data: &TransitionDataset,
    plan: &SamplePlan,
    caps: &Caps,
) -> Result<Outcome> {
    let lp = match kind {
        JobKind::Verify => build_verification_lp(data, &job.spec, &job.basis, &job.budget, caps)?,
        _ => {
            let ctrl = job.controller.as_ref().expect("validated");
            build_synthesis_lp(
                data,
                &job.spec,
                &job.basis,
                &ctrl.bases,
                &ctrl.inputs,
                &job.budget,
                caps,
            )?
        }
    };
    let lp = maybe_tighten(kind, job, plan, data, lp);
    let sol = solve_lazy(&lp, &job.solver);
    let horizon = job.spec.horizon;
    let eps = job.budget.epsilon;
    let layout = lp.layout().expect("scenario program").clone();
    if sol.status != LpStatus::Optimal {
        return Ok(failed(sol, &lp, layout, None));
    }
    let k_star = sol.objective;
    let certified = k_star + eps <= 0.0;
    let rho_at = |d: &[f64]| rho_linear(d[DecisionLayout::C], d[DecisionLayout::LAMBDA], horizon);
    let mut d = sol.d.clone();
    let mut k_at_bound = k_star;
    if certified && job.budget.rho == RhoMode::Auto {
        let limit = k_star + second_stage_tol(k_star);
        if let Some((d2, k2)) = minimise_rho(&lp, limit, 1.0, horizon as f64, &job.solver) {
            if k2 + eps <= 0.0 && rho_at(&d2) < rho_at(&d) {
                d = d2;
                k_at_bound = k2;
            }
        }
    }
    Ok(Outcome {
        rho: rho_at(&d),
        max_violation: lp.max_violation(&d).0,
        total_rows: lp.num_rows(),
        sol,
        k_star,
        d,
        k_at_bound,
        certified,
        kappa: None,
        layout,
        kappa_results: Vec::new(),
    })
}

fn failed(sol: LpSolution, lp: &ScenarioLp, layout: DecisionLayout, kappa: Option<f64>) -> Outcome {
    Outcome {
        k_star: f64::NAN,
        d: vec![f64::NAN; lp.num_vars()],
        k_at_bound: f64::NAN,
        certified: false,
        rho: f64::NAN,
        kappa,
        max_violation: f64::NAN,
        total_rows: lp.num_rows(),
        layout,
        sol,
        kappa_results: Vec::new(),
    }
}

fn solve_kappa(
    job: &JobSettings,
    data: &TransitionDataset,
    plan: &SamplePlan,
    caps: &Caps,
) -> Result<Outcome> {
    let horizon = job.spec.horizon;
    let eps = job.budget.epsilon;
    let grid = job.kappa_grid();
    let outcomes: Vec<Outcome> = grid
        .par_iter()
        .map(|&kappa| -> Result<Outcome> {
            let lp = build_kappa_lp(data, &job.spec, &job.basis, kappa, job.budget.delta, caps)?;
            let lp = maybe_tighten(JobKind::VerifyKappa, job, plan, data, lp);
            let layout = lp.layout().expect("scenario program").clone();
            let sol = solve_lazy(&lp, &job.solver);
            if sol.status != LpStatus::Optimal {
                return Ok(failed(sol, &lp, layout, Some(kappa)));
            }
            let k_star = sol.objective;
            let certified = k_star + eps <= 0.0;
            let rho_at = |d: &[f64]| {
                rho_kappa(
                    d[DecisionLayout::C],
                    d[DecisionLayout::LAMBDA],
                    kappa,
                    horizon,
                )
                .unwrap_or(f64::INFINITY)
            };
            let mut d = sol.d.clone();
            let mut k_at_bound = k_star;
            if certified {
                let decay = (1.0 - kappa).powi(horizon as i32);
                let limit = k_star + second_stage_tol(k_star);
                if let Some((d2, k2)) =
                    minimise_rho(&lp, limit, decay, (1.0 - decay) / kappa, &job.solver)
                {
                    if k2 + eps <= 0.0 && rho_at(&d2) < rho_at(&d) {
                        d = d2;
                        k_at_bound = k2;
                    }
                }
            }
            Ok(Outcome {
                rho: rho_at(&d),
                max_violation: lp.max_violation(&d).0,
                total_rows: lp.num_rows(),
                sol,
                k_star,
                d,
                k_at_bound,
                certified,
                kappa: Some(kappa),
                layout,
                kappa_results: Vec::new(),
            })
        })
        .collect::<Result<_>>()?;

    let results: Vec<KappaResult> = outcomes
        .iter()
        .map(|o| KappaResult {
            kappa: o.kappa.unwrap(),
            lp_status: o.sol.status.to_string(),
            k_star: o.k_star,
            certified: o.certified,
            lambda: o.d[DecisionLayout::LAMBDA],
            c: o.d[DecisionLayout::C],
            rho: o.rho,
        })
        .collect();
    // Best bound among certified factors; otherwise the smallest K*.
    let pick = outcomes
        .iter()
        .enumerate()
        .filter(|(_, o)| o.certified)
        .min_by(|a, b| a.1.rho.total_cmp(&b.1.rho))
        .or_else(|| {
            outcomes
                .iter()
                .enumerate()
                .filter(|(_, o)| o.k_star.is_finite())
                .min_by(|a, b| a.1.k_star.total_cmp(&b.1.k_star))
        })
        .map_or(0, |(i, _)| i);
    let mut chosen = outcomes.into_iter().nth(pick).expect("grid is non-empty");
    chosen.kappa_results = results;
    Ok(chosen)
}

#[allow(clippy::too_many_arguments)]
fn report(
    kind: JobKind,
    system: &dyn System,
    job: &JobSettings,
    plan: &SamplePlan,
    outcome: Outcome,
    data: &TransitionDataset,
    fingerprint: String,
    cap_rounds: Vec<CapRound>,
    caps_used: (Option<f64>, Option<f64>),
) -> Result<CertificateReport> {
    let d = &outcome.d;
    let layout = &outcome.layout;
    let barrier = Polynomial::new(job.basis.clone(), layout.barrier(d).to_vec())?;
    let controller = match (kind, &job.controller) {
        (JobKind::Synthesize, Some(ctrl)) => Some(
            ctrl.bases
                .iter()
                .enumerate()
                .map(|(l, b)| Polynomial::new(b.clone(), layout.controller(d, l).to_vec()))
                .collect::<Result<Vec<_>>>()?,
        ),
        _ => None,
    };
    let rho_target = match (kind, job.budget.rho) {
        (JobKind::VerifyKappa, _) | (_, RhoMode::Auto) => None,
        (_, RhoMode::Fixed(r)) => Some(r),
    };
    Ok(CertificateReport {
        kind,
        system: system.describe(),
        spec_digest: job.spec.digest(),
        certified: outcome.certified,
        k_star: outcome.k_star,
        k_at_bound: outcome.k_at_bound,
        k_shift: outcome.sol.k_shift,
        epsilon: job.budget.epsilon,
        lambda: d[DecisionLayout::LAMBDA],
        c: d[DecisionLayout::C],
        kappa: outcome.kappa,
        rho_target,
        rho: outcome.rho,
        safety_lower_bound: 1.0 - outcome.rho,
        confidence: job.budget.confidence(),
        tightened: job.budget.tighten,
        horizon: job.spec.horizon,
        n: plan.n,
        n_hat: plan.n_hat,
        n_required: plan.n_required,
        n_hat_required: plan.n_hat_required,
        guarantees_void: plan.guarantees_void,
        seed: job.seed,
        lipschitz: plan.lipschitz,
        eps_bar: plan.eps_bar,
        norm_cap_used: caps_used.0,
        controller_cap_used: caps_used.1,
        lp_status: outcome.sol.status.to_string(),
        lp_iterations: outcome.sol.iterations as u64,
        lp_rounds: outcome.sol.rounds as u64,
        working_rows: outcome.sol.working_rows as u64,
        total_rows: outcome.total_rows as u64,
        max_violation: outcome.max_violation,
        dataset_fingerprint: fingerprint,
        dataset_digest: data.digest(),
        barrier,
        controller,
        kappa_results: outcome.kappa_results,
        cap_rounds,
        provenance: provenance(kind, matches!(job.lipschitz, LipschitzSource::Given(_))),
    })
}
