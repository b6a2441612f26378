//! Subcommand bodies. Each returns the process exit code or an error; the
//! binary maps errors to exit code 1.

use std::io::Write;
use std::path::{Path, PathBuf};

use datacert_core::pipeline::{
    check_certificate, monte_carlo_safety, run_job, sample_plan, write_barrier_slice,
    CertificateReport, DatasetProvider, FeedbackController, JobKind, SamplingProvider,
};
use datacert_core::{Error, Result};

use crate::cache::CachedProvider;
use crate::config::JobConfig;

/// Exit code of a certified run or a passing validation.
pub const EXIT_OK: i32 = 0;
/// Exit code of an uncertified run or a failing validation.
pub const EXIT_NOT_CERTIFIED: i32 = 2;
/// Exit code of any error.
pub const EXIT_ERROR: i32 = 1;

/// Command-line overrides applied on top of the config file.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub out: PathBuf,
    pub dataset: Option<PathBuf>,
    pub n_override: Option<u64>,
}

/// Prints the sample-count table without sampling anything.
pub fn sample_count(cfg: &JobConfig, out: &mut dyn Write) -> Result<i32> {
    let job = cfg.job_settings()?;
    job.spec.validate()?;
    job.budget.validate()?;
    let plan = sample_plan(cfg.kind, &job, job.caps.barrier, job.caps.controller)?;
    let rows: Vec<(&str, String)> = vec![
        ("kind", cfg.kind.to_string()),
        ("N_hat", plan.n_hat_required.to_string()),
        ("L", format!("{:.6}", plan.lipschitz)),
        ("eps_bar", format!("{:.6e}", plan.eps_bar)),
        ("dims", plan.dims.to_string()),
        ("N", plan.n_required.to_string()),
        (
            "simulator_calls",
            (plan.n_required as u128 * plan.n_hat_required as u128).to_string(),
        ),
    ];
    let mut text = String::new();
    for (k, v) in rows {
        text.push_str(&format!("{k:<16} {v}\n"));
    }
    if job.n_override.is_some() || job.n_hat_override.is_some() {
        text.push_str(&format!(
            "{:<16} N = {}, N_hat = {}, calls = {}{}\n",
            "overridden",
            plan.n,
            plan.n_hat,
            plan.simulator_calls(),
            if plan.guarantees_void {
                " (guarantees void)"
            } else {
                ""
            }
        ));
    }
    write_out(out, &text)?;
    Ok(EXIT_OK)
}

/// Runs a certification job, writes the report and plot CSVs into `opts.out`,
/// and returns 0 when certified and 2 otherwise.
pub fn run(
    kind: JobKind,
    cfg: &JobConfig,
    opts: &RunOptions,
    out: &mut dyn Write,
) -> Result<(i32, CertificateReport)> {
    if cfg.kind != kind {
        return Err(Error::Config(format!(
            "`kind`: config describes a `{}` job but the `{}` subcommand was used",
            cfg.kind, kind
        )));
    }
    let mut cfg = cfg.clone();
    if let Some(seed) = opts.seed {
        cfg.sampling.seed = seed;
    }
    if let Some(n) = opts.n_override {
        cfg.sampling.n_override = Some(n);
    }
    let job = cfg.job_settings()?;
    let system = cfg.system()?;

    let cache = opts
        .dataset
        .clone()
        .or_else(|| cfg.sampling.cache.clone())
        .map(CachedProvider::new);
    let provider: &dyn DatasetProvider = match &cache {
        Some(c) => c,
        None => &SamplingProvider,
    };
    let report = run_job(kind, system.as_ref(), &job, provider)?;
    if let Some(c) = &cache {
        eprintln!(
            "dataset cache {}: {} hit(s), {} sampled",
            c.path().display(),
            c.hits(),
            c.misses()
        );
    }

    write_artifacts(&report, &job.spec, &opts.out)?;
    write_out(out, &summary(&report, &opts.out))?;
    let code = if report.certified {
        EXIT_OK
    } else {
        EXIT_NOT_CERTIFIED
    };
    Ok((code, report))
}

fn summary(r: &CertificateReport, dir: &Path) -> String {
    let mut s = String::new();
    s.push_str(&format!("certified          {}\n", r.certified));
    s.push_str(&format!(
        "k_star             {:.6e} (epsilon {})\n",
        r.k_star, r.epsilon
    ));
    s.push_str(&format!("lambda, c          {:.6}, {:.6}\n", r.lambda, r.c));
    if let Some(k) = r.kappa {
        s.push_str(&format!("kappa              {k}\n"));
    }
    s.push_str(&format!(
        "safety bound       {:.6} over {} steps with confidence {:.4}\n",
        r.safety_lower_bound, r.horizon, r.confidence
    ));
    s.push_str(&format!(
        "samples            N = {} (required {}), N_hat = {} (required {})\n",
        r.n, r.n_required, r.n_hat, r.n_hat_required
    ));
    if r.guarantees_void {
        s.push_str("warning            sample counts below the required values; the confidence does not hold\n");
    }
    s.push_str(&format!(
        "lp                 {} after {} iterations\n",
        r.lp_status, r.lp_iterations
    ));
    s.push_str(&format!(
        "report             {}\n",
        dir.join(REPORT_FILE).display()
    ));
    s
}

pub const REPORT_FILE: &str = "report.toml";
pub const SLICE_FILE: &str = "barrier_slice.csv";
pub const BARRIER_COEFFS_FILE: &str = "barrier_coeffs.csv";
const SLICE_POINTS: usize = 41;

fn write_artifacts(
    report: &CertificateReport,
    spec: &datacert_core::systems::SafetySpec,
    dir: &Path,
) -> Result<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| Error::Config(format!("cannot create {}: {e}", dir.display())))?;
    let text =
        toml::to_string(report).map_err(|e| Error::Data(format!("serializing report: {e}")))?;
    write_file(&dir.join(REPORT_FILE), text.as_bytes())?;

    let mut buf = Vec::new();
    write_barrier_slice(&report.barrier, spec, (0, 1), SLICE_POINTS, &mut buf)?;
    write_file(&dir.join(SLICE_FILE), &buf)?;

    buf.clear();
    report.barrier.write_coeffs_csv(&mut buf)?;
    write_file(&dir.join(BARRIER_COEFFS_FILE), &buf)?;
    for (i, p) in report.controller.iter().flatten().enumerate() {
        buf.clear();
        p.write_coeffs_csv(&mut buf)?;
        write_file(&dir.join(format!("controller_{}_coeffs.csv", i + 1)), &buf)?;
    }
    Ok(())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes)
        .map_err(|e| Error::Config(format!("cannot write {}: {e}", path.display())))
}

fn write_out(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes())
        .and_then(|_| out.flush())
        .map_err(|e| Error::Config(format!("writing output: {e}")))
}

pub fn read_report(path: &Path) -> Result<CertificateReport> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read report {}: {e}", path.display())))?;
    let de = toml::Deserializer::parse(&text)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let report: CertificateReport = serde_path_to_error::deserialize(de).map_err(|e| {
        Error::Data(format!(
            "{}: `{}`: {}",
            path.display(),
            e.path(),
            e.inner().message().trim()
        ))
    })?;
    report.check()?;
    Ok(report)
}

/// Options of the posterior check.
#[derive(Clone, Debug)]
pub struct ValidateOptions {
    pub trials: u64,
    pub seed: u64,
}

impl Default for ValidateOptions {
    fn default() -> Self {
        ValidateOptions {
            trials: 100_000,
            seed: 7,
        }
    }
}

/// Successors drawn per grid point for the growth condition.
const FRESH_N_HAT: usize = 200;
/// Target number of state-grid points.
const GRID_BUDGET: f64 = 20_000.0;

/// Outcome of [`validate`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Verdict {
    pub mc_passes: bool,
    pub conditions_pass: bool,
}

/// Monte Carlo estimate plus grid checks of a stored report. Exit 0 on PASS,
/// 2 on FAIL or when the report makes no claim.
pub fn validate(
    report_path: &Path,
    cfg: &JobConfig,
    opts: &ValidateOptions,
    out: &mut dyn Write,
) -> Result<(i32, Verdict)> {
    let report = read_report(report_path)?;
    let spec = cfg.spec()?;
    if report.spec_digest != spec.digest() {
        return Err(Error::Config(format!(
            "report {} was produced for a different specification than `spec` in the config",
            report_path.display()
        )));
    }
    let system = cfg.system()?;
    if report.system != system.describe() {
        return Err(Error::Config(format!(
            "report {} was produced for system `{}`, config describes `{}`",
            report_path.display(),
            report.system,
            system.describe()
        )));
    }
    let inputs = cfg.input_polytope()?;
    let controller = match (&report.controller, &inputs) {
        (Some(p), Some(u)) => Some(FeedbackController::new(p.clone(), u.clone())?),
        (Some(_), None) => {
            return Err(Error::Config(
                "report has a controller but the config has no `controller`".into(),
            ))
        }
        (None, _) => None,
    };

    let mc = monte_carlo_safety(
        system.as_ref(),
        &spec,
        controller.as_ref(),
        opts.trials,
        opts.seed,
    )?;
    let per_dim = (GRID_BUDGET.powf(1.0 / spec.dim() as f64).round() as usize).clamp(2, 200);
    let v = check_certificate(
        &report,
        system.as_ref(),
        &spec,
        inputs.as_ref(),
        per_dim,
        FRESH_N_HAT,
        opts.seed,
    )?;

    let tol = 1e-6 * (1.0 + report.lambda.abs());
    let flag = |x: f64| if x > tol { "  FLAGGED" } else { "" };
    let mut s = String::new();
    s.push_str(&format!(
        "monte carlo        {} / {} safe, p_hat = {:.6}, 99% lower bound = {:.6}",
        mc.safe,
        mc.trials - mc.rejected,
        mc.p_hat,
        mc.ci_low
    ));
    if mc.rejected > 0 {
        s.push_str(&format!(
            " ({} trials rejected: controller left the input set)",
            mc.rejected
        ));
    }
    s.push('\n');
    s.push_str(&format!(
        "claimed bound      {:.6} (certified = {})\n",
        report.safety_lower_bound, report.certified
    ));
    s.push_str(&format!(
        "B >= 0 on X        max violation {:.3e} over {} points{}\n",
        v.nonneg,
        v.state_points,
        flag(v.nonneg)
    ));
    s.push_str(&format!(
        "B <= 1 on X_in     max violation {:.3e} over {} points{}\n",
        v.initial,
        v.initial_points,
        flag(v.initial)
    ));
    s.push_str(&format!(
        "B >= lambda on X_u max violation {:.3e} over {} points{}\n",
        v.unsafe_set,
        v.unsafe_points,
        flag(v.unsafe_set)
    ));
    s.push_str(&format!(
        "growth (sampled)   max excess {:.3e} with {} fresh successors per point{}\n",
        v.growth,
        FRESH_N_HAT,
        if v.growth > tol {
            "  (statistical)"
        } else {
            ""
        }
    ));

    // The growth condition is only checked by sampling, so its excess is reported but not judged.
    let conditions_pass = [v.nonneg, v.initial, v.unsafe_set]
        .iter()
        .all(|x| *x <= tol);
    let mc_passes = mc.ci_low >= report.safety_lower_bound;
    let verdict = Verdict {
        mc_passes,
        conditions_pass,
    };
    let code = if !report.certified {
        s.push_str("verdict            NO CLAIM (report is not certified)\n");
        EXIT_NOT_CERTIFIED
    } else if mc_passes && conditions_pass {
        s.push_str("verdict            PASS\n");
        EXIT_OK
    } else {
        s.push_str(&format!(
            "verdict            FAIL ({})\n",
            match (mc_passes, conditions_pass) {
                (false, false) => "monte carlo bound and barrier conditions",
                (false, true) => "monte carlo bound below the claimed bound",
                _ => "barrier conditions",
            }
        ));
        EXIT_NOT_CERTIFIED
    };
    write_out(out, &s)?;
    Ok((code, verdict))
}
