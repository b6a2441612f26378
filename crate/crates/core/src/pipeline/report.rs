//! The report written by every certification job, and CSV slices for plotting.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::JobKind;
use crate::error::{Error, Result};
use crate::poly::Polynomial;
use crate::systems::SafetySpec;

/// Outcome of one contraction factor on the grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KappaResult {
    pub kappa: f64,
    pub lp_status: String,
    pub k_star: f64,
    pub certified: bool,
    pub lambda: f64,
    pub c: f64,
    /// Bound on the failure probability at this factor's optimum (NaN when the solve failed).
    pub rho: f64,
}

/// One pass of the norm-cap relaxation loop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CapRound {
    pub round: usize,
    pub barrier_cap: Option<f64>,
    pub controller_cap: Option<f64>,
    pub lipschitz: f64,
    pub eps_bar: f64,
    pub n_required: u64,
    pub k_star: f64,
    pub certified: bool,
}

/// Everything a job found, in a form that round-trips through a text file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    pub kind: JobKind,
    pub system: String,
    /// Digest of the safety specification the job ran against.
    pub spec_digest: String,
    /// `k_star + epsilon <= 0`.
    pub certified: bool,
    /// Optimum of the scenario program.
    pub k_star: f64,
    /// `K` at the reported coefficients; differs from `k_star` only after the
    /// bound-minimising second stage.
    pub k_at_bound: f64,
    /// Amount `K` was raised to absorb solver round-off.
    pub k_shift: f64,
    pub epsilon: f64,
    pub lambda: f64,
    pub c: f64,
    pub kappa: Option<f64>,
    /// Target failure probability when it was fixed in the program.
    pub rho_target: Option<f64>,
    /// Failure-probability bound at the reported `(c, lambda, kappa)`.
    pub rho: f64,
    /// `1 - rho`.
    pub safety_lower_bound: f64,
    pub confidence: f64,
    pub tightened: bool,
    pub horizon: u32,
    pub n: u64,
    pub n_hat: u64,
    pub n_required: u64,
    pub n_hat_required: u64,
    /// An override dropped `n` or `n_hat` below its required value; `confidence` does not hold.
    pub guarantees_void: bool,
    pub seed: u64,
    pub lipschitz: f64,
    pub eps_bar: f64,
    pub norm_cap_used: Option<f64>,
    pub controller_cap_used: Option<f64>,
    pub lp_status: String,
    pub lp_iterations: u64,
    pub lp_rounds: u64,
    pub working_rows: u64,
    pub total_rows: u64,
    pub max_violation: f64,
    pub dataset_fingerprint: String,
    pub dataset_digest: String,
    pub barrier: Polynomial,
    pub controller: Option<Vec<Polynomial>>,
    pub kappa_results: Vec<KappaResult>,
    pub cap_rounds: Vec<CapRound>,
    /// Formula or source behind each derived number.
    pub provenance: BTreeMap<String, String>,
}

impl CertificateReport {
    /// Structural checks after reading a report back from disk.
    pub fn check(&self) -> Result<()> {
        Polynomial::new(self.barrier.basis().clone(), self.barrier.coeffs().to_vec())?;
        for p in self.controller.iter().flatten() {
            Polynomial::new(p.basis().clone(), p.coeffs().to_vec())?;
        }
        if self.certified != (self.k_star + self.epsilon <= 0.0) {
            return Err(Error::Data(
                "report flag `certified` disagrees with k_star + epsilon".into(),
            ));
        }
        Ok(())
    }
}

pub(crate) fn provenance(kind: JobKind, lipschitz_given: bool) -> BTreeMap<String, String> {
    let mut p = BTreeMap::new();
    let mut put = |k: &str, v: &str| {
        p.insert(k.to_string(), v.to_string());
    };
    put(
        "n_hat_required",
        "ceil(budget.m_hat / (budget.delta^2 * budget.beta_s))",
    );
    put(
        "eps_bar",
        match kind {
            JobKind::Synthesize => "(budget.epsilon / lipschitz)^(n + m)",
            _ => "(budget.epsilon / lipschitz)^n",
        },
    );
    put(
        "n_required",
        match kind {
            JobKind::VerifyKappa => {
                "least N with sum_{i<=dims} C(N,i) eps_bar^i (1-eps_bar)^(N-i) <= beta / M"
            }
            _ => "least N with sum_{i<=dims} C(N,i) eps_bar^i (1-eps_bar)^(N-i) <= beta",
        },
    );
    put(
        "lipschitz",
        match (lipschitz_given, kind) {
            (true, _) => "lipschitz.value",
            (false, JobKind::Synthesize) => {
                "hypot(2 g jac_x ||P|| + L ||P|| + L ||P_u||, 2 g jac_u ||P|| + sqrt(m)), g = L l1 + U l2 + l3"
            }
            (false, _) => "2 ||P|| (l1 L jac_x + l2 jac_x + L)",
        },
    );
    put("k_star", "optimum of the scenario linear program");
    put("certified", "k_star + epsilon <= 0");
    put(
        "rho",
        match kind {
            JobKind::VerifyKappa => {
                "lambda >= c/kappa: 1 - (1 - 1/lambda)(1 - c/lambda); else (1-kappa)^H / lambda + c (1 - (1-kappa)^H) / (kappa lambda)"
            }
            _ => "(1 + c H) / lambda",
        },
    );
    put("safety_lower_bound", "1 - rho");
    put(
        "confidence",
        "1 - beta - beta_s (1 - beta_s when tightened)",
    );
    p
}

/// Writes barrier values over a 2-D slice through the state set as CSV.
///
/// Axes `i` and `j` span the state box on a `per_dim x per_dim` grid; other
/// coordinates sit at the centre of the state set's bounding box. For a
/// one-dimensional state the output is a single column sweep.
pub fn write_barrier_slice<W: Write>(
    barrier: &Polynomial,
    spec: &SafetySpec,
    axes: (usize, usize),
    per_dim: usize,
    writer: W,
) -> Result<()> {
    let n = spec.dim();
    let (lo, hi) = bounding(spec);
    let center: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| 0.5 * (a + b)).collect();
    let per = per_dim.max(2);
    let at = |k: usize, t: usize| lo[k] + (hi[k] - lo[k]) * t as f64 / (per - 1) as f64;
    let mut w = csv::Writer::from_writer(writer);
    if n == 1 {
        w.write_record(["x1", "barrier"])?;
        for t in 0..per {
            let x = [at(0, t)];
            w.write_record([x[0].to_string(), barrier.eval(&x)?.to_string()])?;
        }
    } else {
        let (i, j) = axes;
        if i >= n || j >= n || i == j {
            return Err(Error::Argument(format!(
                "slice axes ({i}, {j}) are invalid for dimension {n}"
            )));
        }
        w.write_record([
            format!("x{}", i + 1),
            format!("x{}", j + 1),
            "barrier".into(),
        ])?;
        let mut x = center.clone();
        for a in 0..per {
            for b in 0..per {
                x[i] = at(i, a);
                x[j] = at(j, b);
                w.write_record([
                    x[i].to_string(),
                    x[j].to_string(),
                    barrier.eval(&x)?.to_string(),
                ])?;
            }
        }
    }
    w.flush().map_err(|e| Error::Io {
        context: "writing barrier slice".into(),
        source: e,
    })?;
    Ok(())
}

fn bounding(spec: &SafetySpec) -> (Vec<f64>, Vec<f64>) {
    let n = spec.dim();
    let mut lo = vec![f64::INFINITY; n];
    let mut hi = vec![f64::NEG_INFINITY; n];
    for b in spec.state.boxes() {
        for k in 0..n {
            lo[k] = lo[k].min(b.lo[k]);
            hi[k] = hi[k].max(b.hi[k]);
        }
    }
    (lo, hi)
}
