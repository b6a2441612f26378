//! The black-box system interface and the built-in models.

use std::f64::consts::PI;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use super::rng::NoiseKey;
use crate::error::{Error, Result};

/// One-step sampler `x+ = f(x, u, w)`.
///
/// The noise realization `w` is fully determined by `noise`; calling `step`
/// twice with the same arguments must return the same successor.
pub trait System: Send + Sync {
    fn state_dim(&self) -> usize;

    /// Zero for autonomous systems.
    fn input_dim(&self) -> usize;

    fn step(&self, x: &[f64], u: &[f64], noise: NoiseKey) -> Result<Vec<f64>>;

    /// Canonical description used to fingerprint cached datasets.
    fn describe(&self) -> String;
}

pub type SystemModel = Arc<dyn System>;

pub const BUILTIN_NAMES: [&str; 3] = ["three_rooms", "lane_keeping", "heater"];

/// Looks up a built-in case-study model by name.
pub fn builtin_system(name: &str) -> Result<SystemModel> {
    let kind = match name {
        "three_rooms" => BuiltinKind::ThreeRooms,
        "lane_keeping" => BuiltinKind::LaneKeeping,
        "heater" => BuiltinKind::Heater,
        other => {
            return Err(Error::Config(format!(
                "unknown builtin system `{other}`; valid names: {}",
                BUILTIN_NAMES.join(", ")
            )))
        }
    };
    Ok(Arc::new(BuiltinSystem::new(kind)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BuiltinKind {
    ThreeRooms,
    LaneKeeping,
    Heater,
}

/// Additive-Gaussian-noise model with a known drift.
#[derive(Clone, Debug)]
pub struct BuiltinSystem {
    kind: BuiltinKind,
    noise_std: Vec<f64>,
}

mod rooms {
    pub const TAU: f64 = 5.0;
    pub const ALPHA: f64 = 6.2e-3;
    pub const ALPHA_E: f64 = 8e-3;
    pub const T_E: f64 = 10.0;
}

mod lane {
    pub const TAU: f64 = 0.1;
    pub const V: f64 = 5.0;
    pub const L_R: f64 = 1.384;
    pub const L_F: f64 = 1.384;
    pub const STEER_DEG: f64 = 5.0;
}

mod heater {
    pub const TAU: f64 = 5.0;
    pub const T_E: f64 = 15.0;
    pub const T_H: f64 = 45.0;
    pub const ALPHA_E: f64 = 8e-3;
    pub const ALPHA_H: f64 = 3.6e-3;
}

impl BuiltinSystem {
    pub fn new(kind: BuiltinKind) -> Self {
        let noise_std = match kind {
            BuiltinKind::ThreeRooms => vec![0.01; 3],
            BuiltinKind::LaneKeeping => vec![0.01, 0.01, 0.001],
            BuiltinKind::Heater => vec![0.05],
        };
        BuiltinSystem { kind, noise_std }
    }

    pub fn kind(&self) -> BuiltinKind {
        self.kind
    }

    pub fn noise_std(&self) -> &[f64] {
        &self.noise_std
    }

    /// Slip angle of the single-track model for the fixed steering angle.
    pub fn slip_angle() -> f64 {
        let steer = lane::STEER_DEG * PI / 180.0;
        lane::L_R / (lane::L_R + lane::L_F) * libm::atan(libm::tan(steer))
    }

    /// Noise-free part of the transition.
    pub fn drift(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        match self.kind {
            BuiltinKind::ThreeRooms => {
                use rooms::*;
                let ambient = TAU * ALPHA_E * T_E;
                vec![
                    (1.0 - TAU * (ALPHA + ALPHA_E)) * x[0] + TAU * ALPHA * x[1] + ambient,
                    (1.0 - TAU * (2.0 * ALPHA + ALPHA_E)) * x[1]
                        + TAU * ALPHA * (x[0] + x[2])
                        + ambient,
                    (1.0 - TAU * (ALPHA + ALPHA_E)) * x[2] + TAU * ALPHA * x[1] + ambient,
                ]
            }
            BuiltinKind::LaneKeeping => {
                use lane::*;
                let beta = Self::slip_angle();
                vec![
                    x[0] + TAU * V * libm::cos(x[2] + beta),
                    x[1] + TAU * V * libm::sin(x[2] + beta),
                    x[2] + TAU * V / L_R * libm::sin(beta),
                ]
            }
            BuiltinKind::Heater => {
                use heater::*;
                let t = x[0];
                vec![t + TAU * (ALPHA_E * (T_E - t) + ALPHA_H * (T_H - t) * u[0])]
            }
        }
    }
}

impl System for BuiltinSystem {
    fn state_dim(&self) -> usize {
        self.noise_std.len()
    }

    fn input_dim(&self) -> usize {
        match self.kind {
            BuiltinKind::Heater => 1,
            _ => 0,
        }
    }

    fn step(&self, x: &[f64], u: &[f64], noise: NoiseKey) -> Result<Vec<f64>> {
        check_dims(self, x, u)?;
        let mut next = self.drift(x, u);
        let mut rng = noise.stream();
        for (v, s) in next.iter_mut().zip(&self.noise_std) {
            *v += s * rng.gaussian();
        }
        Ok(next)
    }

    fn describe(&self) -> String {
        let name = match self.kind {
            BuiltinKind::ThreeRooms => "three_rooms",
            BuiltinKind::LaneKeeping => "lane_keeping",
            BuiltinKind::Heater => "heater",
        };
        format!("builtin:{name}")
    }
}

/// `x+ = A x + B u + offset + w` with independent Gaussian noise per coordinate.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineSystem {
    a: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
    offset: Vec<f64>,
    noise_std: Vec<f64>,
}

impl AffineSystem {
    /// `b` may be empty for autonomous systems; otherwise it is `n x m`.
    pub fn new(
        a: Vec<Vec<f64>>,
        b: Vec<Vec<f64>>,
        offset: Vec<f64>,
        noise_std: Vec<f64>,
    ) -> Result<Self> {
        let n = a.len();
        if n == 0 || a.iter().any(|r| r.len() != n) {
            return Err(Error::Config(
                "affine system matrix A must be square".into(),
            ));
        }
        if !b.is_empty() {
            let m = b[0].len();
            if b.len() != n || m == 0 || b.iter().any(|r| r.len() != m) {
                return Err(Error::Config("affine system matrix B must be n x m".into()));
            }
        }
        if offset.len() != n || noise_std.len() != n {
            return Err(Error::Config(
                "affine system offset and noise_std need one entry per state".into(),
            ));
        }
        if noise_std.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::Config(
                "noise_std entries must be non-negative".into(),
            ));
        }
        Ok(AffineSystem {
            a,
            b,
            offset,
            noise_std,
        })
    }

    /// Scalar autonomous system `x+ = a x + w`.
    pub fn scalar(a: f64, noise_std: f64) -> Self {
        AffineSystem {
            a: vec![vec![a]],
            b: Vec::new(),
            offset: vec![0.0],
            noise_std: vec![noise_std],
        }
    }

    pub fn drift(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        (0..self.a.len())
            .map(|r| {
                let ax: f64 = self.a[r].iter().zip(x).map(|(p, q)| p * q).sum();
                let bu: f64 = self
                    .b
                    .get(r)
                    .map_or(0.0, |row| row.iter().zip(u).map(|(p, q)| p * q).sum());
                ax + bu + self.offset[r]
            })
            .collect()
    }
}

impl System for AffineSystem {
    fn state_dim(&self) -> usize {
        self.a.len()
    }

    fn input_dim(&self) -> usize {
        self.b.first().map_or(0, Vec::len)
    }

    fn step(&self, x: &[f64], u: &[f64], noise: NoiseKey) -> Result<Vec<f64>> {
        check_dims(self, x, u)?;
        let mut next = self.drift(x, u);
        let mut rng = noise.stream();
        for (v, s) in next.iter_mut().zip(&self.noise_std) {
            *v += s * rng.gaussian();
        }
        Ok(next)
    }

    fn describe(&self) -> String {
        format!(
            "affine:a={:?};b={:?};offset={:?};noise_std={:?}",
            self.a, self.b, self.offset, self.noise_std
        )
    }
}

pub(crate) fn check_dims(sys: &dyn System, x: &[f64], u: &[f64]) -> Result<()> {
    if x.len() != sys.state_dim() || u.len() != sys.input_dim() {
        return Err(Error::Argument(format!(
            "step called with state dim {} and input dim {}, system has {} and {}",
            x.len(),
            u.len(),
            sys.state_dim(),
            sys.input_dim()
        )));
    }
    Ok(())
}

/// Wraps a system and counts `step` calls.
pub struct CountingSystem {
    inner: SystemModel,
    calls: AtomicU64,
}

impl CountingSystem {
    pub fn new(inner: SystemModel) -> Self {
        CountingSystem {
            inner,
            calls: AtomicU64::new(0),
        }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }
}

impl System for CountingSystem {
    fn state_dim(&self) -> usize {
        self.inner.state_dim()
    }

    fn input_dim(&self) -> usize {
        self.inner.input_dim()
    }

    fn step(&self, x: &[f64], u: &[f64], noise: NoiseKey) -> Result<Vec<f64>> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.inner.step(x, u, noise)
    }

    fn describe(&self) -> String {
        self.inner.describe()
    }
}
