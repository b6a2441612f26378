//! Unions of axis-aligned boxes and the safety specification built from them.

use std::fmt::Write;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::rng::RngStream;
use crate::error::{Error, Result};

/// Closed hyperrectangle `[lo_1, hi_1] x ... x [lo_n, hi_n]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Aabb {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::Config(format!(
                "box bounds have lengths {} and {}",
                lo.len(),
                hi.len()
            )));
        }
        for (d, (l, h)) in lo.iter().zip(&hi).enumerate() {
            if !(l.is_finite() && h.is_finite()) || l > h {
                return Err(Error::Config(format!(
                    "box dimension {} has bounds [{l}, {h}]",
                    d + 1
                )));
            }
        }
        Ok(Aabb { lo, hi })
    }

    /// Box from `(lo, hi)` pairs per dimension.
    pub fn from_intervals(intervals: &[(f64, f64)]) -> Result<Self> {
        Aabb::new(
            intervals.iter().map(|p| p.0).collect(),
            intervals.iter().map(|p| p.1).collect(),
        )
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(v, (l, h))| *l <= *v && *v <= *h)
    }

    pub fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(l, h)| h - l).product()
    }

    pub fn contains_box(&self, other: &Aabb) -> bool {
        self.dim() == other.dim()
            && (0..self.dim()).all(|d| self.lo[d] <= other.lo[d] && other.hi[d] <= self.hi[d])
    }

    pub fn intersects(&self, other: &Aabb) -> bool {
        self.dim() == other.dim()
            && (0..self.dim()).all(|d| self.lo[d] <= other.hi[d] && other.lo[d] <= self.hi[d])
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| 0.5 * (l + h))
            .collect()
    }

    /// Largest Euclidean norm over the box (attained at a corner).
    pub fn max_norm(&self) -> f64 {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| l.abs().max(h.abs()).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    pub fn sample_into(&self, rng: &mut RngStream, out: &mut [f64]) {
        for d in 0..self.dim() {
            out[d] = self.lo[d] + (self.hi[d] - self.lo[d]) * rng.uniform();
        }
    }
}

/// Finite union of boxes; its indicator is membership in any box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Region {
    boxes: Vec<Aabb>,
}

impl Region {
    pub fn new(boxes: Vec<Aabb>) -> Result<Self> {
        let first = boxes
            .first()
            .ok_or_else(|| Error::Config("region needs at least one box".into()))?;
        let n = first.dim();
        if boxes.iter().any(|b| b.dim() != n) {
            return Err(Error::Config("region boxes disagree on dimension".into()));
        }
        Ok(Region { boxes })
    }

    pub fn single(b: Aabb) -> Self {
        Region { boxes: vec![b] }
    }

    pub fn boxes(&self) -> &[Aabb] {
        &self.boxes
    }

    pub fn dim(&self) -> usize {
        self.boxes[0].dim()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.boxes.iter().any(|b| b.contains(x))
    }

    pub fn max_norm(&self) -> f64 {
        self.boxes.iter().map(Aabb::max_norm).fold(0.0, f64::max)
    }

    /// Uniform draw over the union: pick a box with probability proportional
    /// to its volume, then draw uniformly inside it. When every box has zero
    /// volume the boxes are picked with equal probability.
    pub fn sample_uniform(&self, rng: &mut RngStream) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.sample_into(rng, &mut out);
        out
    }

    pub fn sample_into(&self, rng: &mut RngStream, out: &mut [f64]) {
        let chosen = if self.boxes.len() == 1 {
            &self.boxes[0]
        } else {
            let volumes: Vec<f64> = self.boxes.iter().map(Aabb::volume).collect();
            let total: f64 = volumes.iter().sum();
            let u = rng.uniform();
            if total > 0.0 {
                let target = u * total;
                let mut acc = 0.0;
                let mut pick = self.boxes.len() - 1;
                for (i, v) in volumes.iter().enumerate() {
                    acc += v;
                    if target < acc {
                        pick = i;
                        break;
                    }
                }
                &self.boxes[pick]
            } else {
                let i = ((u * self.boxes.len() as f64) as usize).min(self.boxes.len() - 1);
                &self.boxes[i]
            }
        };
        chosen.sample_into(rng, out);
    }

    /// Every box of `self` lies inside some box of `outer`.
    pub fn is_subset_of(&self, outer: &Region) -> bool {
        self.boxes
            .iter()
            .all(|b| outer.boxes.iter().any(|o| o.contains_box(b)))
    }

    pub fn intersects(&self, other: &Region) -> bool {
        self.boxes
            .iter()
            .any(|a| other.boxes.iter().any(|b| a.intersects(b)))
    }

    /// Regular grid with `per_dim` points per dimension over each box.
    pub fn grid(&self, per_dim: usize) -> Vec<Vec<f64>> {
        let mut points = Vec::new();
        for b in &self.boxes {
            let n = b.dim();
            let per = per_dim.max(1);
            let total = per.pow(n as u32);
            for flat in 0..total {
                let mut rest = flat;
                let mut p = vec![0.0; n];
                for d in 0..n {
                    let k = rest % per;
                    rest /= per;
                    p[d] = if per == 1 {
                        0.5 * (b.lo[d] + b.hi[d])
                    } else {
                        b.lo[d] + (b.hi[d] - b.lo[d]) * k as f64 / (per - 1) as f64
                    };
                }
                points.push(p);
            }
        }
        points
    }
}

/// State set, initial set, unsafe set and horizon of a safety question.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SafetySpec {
    pub state: Region,
    pub initial: Region,
    pub unsafe_set: Region,
    pub horizon: u32,
}

impl SafetySpec {
    pub fn new(state: Region, initial: Region, unsafe_set: Region, horizon: u32) -> Result<Self> {
        let spec = SafetySpec {
            state,
            initial,
            unsafe_set,
            horizon,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.state.dim();
        if self.initial.dim() != n || self.unsafe_set.dim() != n {
            return Err(Error::Config(
                "state, initial and unsafe regions must share a dimension".into(),
            ));
        }
        if !self.initial.is_subset_of(&self.state) {
            return Err(Error::Config(
                "initial region is not inside the state set".into(),
            ));
        }
        if !self.unsafe_set.is_subset_of(&self.state) {
            return Err(Error::Config(
                "unsafe region is not inside the state set".into(),
            ));
        }
        if self.initial.intersects(&self.unsafe_set) {
            return Err(Error::Config("initial and unsafe regions overlap".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.state.dim()
    }

    /// One line per box and one for the horizon, with exact float formatting.
    pub fn canonical_text(&self) -> String {
        let mut text = String::new();
        for (name, r) in [
            ("state", &self.state),
            ("initial", &self.initial),
            ("unsafe", &self.unsafe_set),
        ] {
            for b in r.boxes() {
                writeln!(text, "{name}={:?}{:?}", b.lo, b.hi).unwrap();
            }
        }
        writeln!(text, "horizon={}", self.horizon).unwrap();
        text
    }

    /// SHA-256 of [`SafetySpec::canonical_text`], in hex.
    pub fn digest(&self) -> String {
        crate::scenario::dataset::hex(&Sha256::digest(self.canonical_text().as_bytes()))
    }
}
