//! TOML job configuration.
//!
//! Unknown keys are rejected everywhere so a misspelt confidence parameter
//! fails loudly instead of silently falling back to a default. Every error
//! names the offending key path.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use datacert_core::bounds::{ConfidenceBudget, LipschitzParams, RhoMode};
use datacert_core::lp::SolverOptions;
use datacert_core::pipeline::{
    uniform_kappa_grid, CapSettings, ControllerSettings, JobKind, JobSettings, LipschitzSource,
};
use datacert_core::poly::{monomial_basis, Basis, MultiIndex};
use datacert_core::scenario::{InputPolytope, DEFAULT_K_MAX};
use datacert_core::systems::{
    builtin_system, external_system, Aabb, AffineSystem, Region, SafetySpec, SystemModel,
};
use datacert_core::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobConfig {
    pub kind: JobKind,
    pub system: SystemConfig,
    pub spec: SpecConfig,
    pub barrier: BasisConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub controller: Option<ControllerConfig>,
    pub budget: BudgetConfig,
    pub lipschitz: LipschitzConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<KappaConfig>,
    #[serde(default)]
    pub sampling: SamplingConfig,
    #[serde(default)]
    pub solver: SolverConfig,
}

/// Exactly one of `builtin`, `command` or `affine`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub builtin: Option<String>,
    /// Shell command speaking the line protocol on stdin/stdout.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub affine: Option<AffineConfig>,
}

/// `x+ = A x + B u + offset + w`, `w ~ N(0, diag(noise_std)^2)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AffineConfig {
    pub a: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub b: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset: Option<Vec<f64>>,
    pub noise_std: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxConfig {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecConfig {
    pub horizon: u32,
    pub state: Vec<BoxConfig>,
    pub initial: Vec<BoxConfig>,
    #[serde(rename = "unsafe")]
    pub unsafe_set: Vec<BoxConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisConfig {
    pub degree: u32,
    /// Exponent vectors of monomials fixed to zero.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub zeroed: Vec<Vec<u32>>,
}

/// Controller polynomials (one per input, sharing a basis) and the input polytope `A u <= b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerConfig {
    pub degree: u32,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub zeroed: Vec<Vec<u32>>,
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetConfig {
    pub beta: f64,
    pub beta_s: f64,
    pub delta: f64,
    pub m_hat: f64,
    pub epsilon: f64,
    pub rho: RhoConfig,
    #[serde(default)]
    pub tighten: bool,
}

/// A number in `(0, 1]` or the string `"auto"`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RhoConfig {
    Value(f64),
    Auto,
}

impl Serialize for RhoConfig {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            RhoConfig::Value(v) => s.serialize_f64(*v),
            RhoConfig::Auto => s.serialize_str("auto"),
        }
    }
}

impl<'de> Deserialize<'de> for RhoConfig {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl serde::de::Visitor<'_> for V {
            type Value = RhoConfig;
            fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
                f.write_str("a number in (0, 1] or \"auto\"")
            }
            fn visit_f64<E: serde::de::Error>(self, v: f64) -> std::result::Result<RhoConfig, E> {
                Ok(RhoConfig::Value(v))
            }
            fn visit_i64<E: serde::de::Error>(self, v: i64) -> std::result::Result<RhoConfig, E> {
                Ok(RhoConfig::Value(v as f64))
            }
            fn visit_u64<E: serde::de::Error>(self, v: u64) -> std::result::Result<RhoConfig, E> {
                Ok(RhoConfig::Value(v as f64))
            }
            fn visit_str<E: serde::de::Error>(self, v: &str) -> std::result::Result<RhoConfig, E> {
                if v == "auto" {
                    Ok(RhoConfig::Auto)
                } else {
                    Err(E::invalid_value(serde::de::Unexpected::Str(v), &self))
                }
            }
        }
        d.deserialize_any(V)
    }
}

/// Drift parameters shared by both closed-form bounds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftParams {
    pub state_bound: f64,
    #[serde(default)]
    pub input_bound: f64,
    pub l1: f64,
    #[serde(default)]
    pub l2: f64,
    #[serde(default)]
    pub l3: f64,
    pub jac_x: f64,
    #[serde(default)]
    pub jac_u: f64,
    /// Barrier Gram-matrix norm; replaced by `solver.barrier_cap` when that is set.
    #[serde(default)]
    pub p_norm: f64,
    /// Controller Gram-matrix norm; replaced by `solver.controller_cap` when that is set.
    #[serde(default)]
    pub pu_norm: f64,
}

/// `given` takes a constant; `lemma1` bounds verification programs and
/// `lemma2` synthesis programs from drift parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase", deny_unknown_fields)]
pub enum LipschitzConfig {
    Given { value: f64 },
    Lemma1(DriftParams),
    Lemma2(DriftParams),
}

/// Either an explicit grid or `points` uniform interior values.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KappaConfig {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub grid: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_override: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_hat_override: Option<u64>,
    /// Dataset cache CSV; a `.meta` sidecar holds its fingerprint.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache: Option<PathBuf>,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            seed: 1,
            n_override: None,
            n_hat_override: None,
            cache: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub feas_tol: f64,
    pub opt_tol: f64,
    pub max_iter: usize,
    pub batch: usize,
    pub max_rounds: usize,
    pub k_max: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub barrier_cap: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub controller_cap: Option<f64>,
    /// Cap doublings after an uncertified solve.
    pub cap_rounds: usize,
    /// Per-round trace file of the lazy solver.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<PathBuf>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let lp = SolverOptions::default();
        let caps = CapSettings::default();
        SolverConfig {
            feas_tol: lp.feas_tol,
            opt_tol: lp.opt_tol,
            max_iter: lp.max_iter,
            batch: lp.batch,
            max_rounds: lp.max_rounds,
            k_max: DEFAULT_K_MAX,
            barrier_cap: None,
            controller_cap: None,
            cap_rounds: caps.max_rounds,
            trace: None,
        }
    }
}

impl JobConfig {
    /// Parses TOML; errors name the key path, e.g. `spec.horizon`.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let de = toml::Deserializer::parse(text).map_err(|e| Error::Config(e.to_string()))?;
        serde_path_to_error::deserialize(de).map_err(|e| {
            let mut path = e.path().to_string();
            if path == "." {
                path.clear();
            }
            let msg = e.into_inner().message().trim().to_string();
            // Point missing-field errors at the field itself, not its table.
            if let Some(field) = msg
                .strip_prefix("missing field `")
                .and_then(|r| r.strip_suffix('`'))
            {
                path = if path.is_empty() {
                    field.to_string()
                } else {
                    format!("{path}.{field}")
                };
                return Error::Config(format!("`{path}`: missing required key"));
            }
            if path.is_empty() {
                Error::Config(msg)
            } else {
                Error::Config(format!("`{path}`: {msg}"))
            }
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("serializing config: {e}")))
    }

    pub fn spec(&self) -> Result<SafetySpec> {
        let region = |name: &str, boxes: &[BoxConfig]| -> Result<Region> {
            let boxes = boxes
                .iter()
                .enumerate()
                .map(|(i, b)| {
                    Aabb::new(b.lo.clone(), b.hi.clone())
                        .map_err(|e| Error::Config(format!("`spec.{name}[{i}]`: {e}")))
                })
                .collect::<Result<Vec<_>>>()?;
            Region::new(boxes).map_err(|e| Error::Config(format!("`spec.{name}`: {e}")))
        };
        SafetySpec::new(
            region("state", &self.spec.state)?,
            region("initial", &self.spec.initial)?,
            region("unsafe", &self.spec.unsafe_set)?,
            self.spec.horizon,
        )
    }

    /// Instantiates the configured system. External commands are launched here.
    pub fn system(&self) -> Result<SystemModel> {
        let s = &self.system;
        let forms = [s.builtin.is_some(), s.command.is_some(), s.affine.is_some()];
        if forms.iter().filter(|f| **f).count() != 1 {
            return Err(Error::Config(
                "`system`: set exactly one of `builtin`, `command` or `affine`".into(),
            ));
        }
        if s.command.is_none() && (s.state_dim.is_some() || s.input_dim.is_some()) {
            return Err(Error::Config(
                "`system.state_dim` and `system.input_dim` only apply to `system.command`".into(),
            ));
        }
        if let Some(name) = &s.builtin {
            return builtin_system(name);
        }
        if let Some(cmd) = &s.command {
            let n = s.state_dim.ok_or_else(|| {
                Error::Config("`system.state_dim` is required with `system.command`".into())
            })?;
            return Ok(std::sync::Arc::new(external_system(
                cmd,
                n,
                s.input_dim.unwrap_or(0),
            )?));
        }
        let a = s.affine.as_ref().expect("one form is set");
        let n = a.a.len();
        let sys = AffineSystem::new(
            a.a.clone(),
            a.b.clone(),
            a.offset.clone().unwrap_or_else(|| vec![0.0; n]),
            a.noise_std.clone(),
        )
        .map_err(|e| Error::Config(format!("`system.affine`: {e}")))?;
        Ok(std::sync::Arc::new(sys))
    }

    pub fn input_polytope(&self) -> Result<Option<InputPolytope>> {
        self.controller
            .as_ref()
            .map(|c| {
                InputPolytope::new(c.a.clone(), c.b.clone())
                    .map_err(|e| Error::Config(format!("`controller.a`/`controller.b`: {e}")))
            })
            .transpose()
    }

    /// Builds the library job, checking every cross-field rule that does not
    /// need samples. Agreement with the system's dimensions is checked when the job runs.
    pub fn job_settings(&self) -> Result<JobSettings> {
        let spec = self.spec()?;
        let input_dim = self.input_polytope()?.map_or(0, |u| u.dim());
        let n = spec.dim();
        let basis = basis_of(n, self.barrier.degree, &self.barrier.zeroed, "barrier")?;

        let controller = match (self.kind, &self.controller) {
            (JobKind::Synthesize, Some(c)) => {
                let inputs = self.input_polytope()?.expect("controller present");
                let b = basis_of(n, c.degree, &c.zeroed, "controller")?;
                Some(ControllerSettings {
                    bases: vec![b; inputs.dim()],
                    inputs,
                })
            }
            (JobKind::Synthesize, None) => {
                return Err(Error::Config(
                    "`controller`: required for kind = \"synthesize\"".into(),
                ))
            }
            (_, Some(_)) => {
                return Err(Error::Config(format!(
                    "`controller`: not used by kind = \"{}\"",
                    self.kind
                )))
            }
            (_, None) => None,
        };

        let kappa_grid = match (self.kind, &self.kappa) {
            (JobKind::VerifyKappa, Some(k)) => match (k.grid.is_empty(), k.points) {
                (false, None) => k.grid.clone(),
                (true, Some(p)) if p > 0 => uniform_kappa_grid(p),
                (true, None) => Vec::new(),
                _ => {
                    return Err(Error::Config(
                        "`kappa`: give either a non-empty `grid` or a positive `points`".into(),
                    ))
                }
            },
            (JobKind::VerifyKappa, None) => Vec::new(),
            (_, Some(_)) => {
                return Err(Error::Config(format!(
                    "`kappa`: not used by kind = \"{}\"",
                    self.kind
                )))
            }
            (_, None) => Vec::new(),
        };

        let lipschitz = match (&self.lipschitz, self.kind) {
            (LipschitzConfig::Given { value }, _) => LipschitzSource::Given(*value),
            (LipschitzConfig::Lemma1(p), JobKind::Verify) => LipschitzSource::Lemma(params(p, 0)),
            (LipschitzConfig::Lemma2(p), JobKind::Synthesize) => {
                LipschitzSource::Lemma(params(p, input_dim))
            }
            (LipschitzConfig::Lemma1(_), kind) | (LipschitzConfig::Lemma2(_), kind) => {
                let want = match kind {
                    JobKind::Verify => "\"lemma1\" or \"given\"",
                    JobKind::Synthesize => "\"lemma2\" or \"given\"",
                    JobKind::VerifyKappa => "\"given\"",
                };
                return Err(Error::Config(format!(
                    "`lipschitz.mode`: kind = \"{kind}\" needs {want}"
                )));
            }
        };

        let b = &self.budget;
        let rho = match b.rho {
            RhoConfig::Value(_) if self.kind == JobKind::VerifyKappa => return Err(Error::Config(
                "`budget.rho`: the contraction program has no probability row; set rho = \"auto\""
                    .into(),
            )),
            RhoConfig::Value(v) => RhoMode::Fixed(v),
            RhoConfig::Auto => RhoMode::Auto,
        };
        let s = &self.solver;
        if s.batch == 0 || s.max_iter == 0 || s.max_rounds == 0 {
            return Err(Error::Config(
                "`solver`: batch, max_iter and max_rounds must be positive".into(),
            ));
        }
        if !(s.feas_tol > 0.0 && s.opt_tol > 0.0) {
            return Err(Error::Config(
                "`solver`: tolerances must be positive".into(),
            ));
        }
        if self.sampling.seed > i64::MAX as u64 {
            return Err(Error::Config(
                "`sampling.seed`: must fit in a signed 64-bit integer".into(),
            ));
        }
        Ok(JobSettings {
            spec,
            basis,
            budget: ConfidenceBudget {
                beta: b.beta,
                beta_s: b.beta_s,
                delta: b.delta,
                m_hat: b.m_hat,
                epsilon: b.epsilon,
                rho,
                tighten: b.tighten,
            },
            lipschitz,
            caps: CapSettings {
                barrier: s.barrier_cap,
                controller: s.controller_cap,
                k_max: s.k_max,
                max_rounds: s.cap_rounds,
            },
            seed: self.sampling.seed,
            n_override: self.sampling.n_override,
            n_hat_override: self.sampling.n_hat_override,
            solver: SolverOptions {
                feas_tol: s.feas_tol,
                opt_tol: s.opt_tol,
                max_iter: s.max_iter,
                batch: s.batch,
                max_rounds: s.max_rounds,
                trace: s.trace.clone(),
            },
            controller,
            kappa_grid,
        })
    }
}

fn params(p: &DriftParams, m: usize) -> LipschitzParams {
    LipschitzParams {
        state_bound: p.state_bound,
        input_bound: p.input_bound,
        l1: p.l1,
        l2: p.l2,
        l3: p.l3,
        jac_x: p.jac_x,
        jac_u: p.jac_u,
        p_norm: p.p_norm,
        pu_norm: p.pu_norm,
        m,
    }
}

fn basis_of(n: usize, degree: u32, zeroed: &[Vec<u32>], key: &str) -> Result<Basis> {
    let zeroed: Vec<MultiIndex> = zeroed.iter().map(|e| MultiIndex::new(e.clone())).collect();
    monomial_basis(n, degree, &zeroed).map_err(|e| Error::Config(format!("`{key}`: {e}")))
}
