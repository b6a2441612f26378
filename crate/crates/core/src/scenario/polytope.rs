//! Polytopic input sets `{u : A u <= b}`.

use serde::{Deserialize, Serialize};

use super::program::{RowKind, ScenarioLp};
use crate::error::{Error, Result};
use crate::lp::{solve_simplex, LpStatus, SolverOptions};
use crate::systems::{Aabb, RngStream};

const MAX_REJECTIONS: usize = 1_000_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPolytope", into = "RawPolytope")]
pub struct InputPolytope {
    a: Vec<Vec<f64>>,
    b: Vec<f64>,
    bbox: Aabb,
    is_box: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPolytope {
    a: Vec<Vec<f64>>,
    b: Vec<f64>,
}

impl TryFrom<RawPolytope> for InputPolytope {
    type Error = Error;

    fn try_from(raw: RawPolytope) -> Result<Self> {
        InputPolytope::new(raw.a, raw.b)
    }
}

impl From<InputPolytope> for RawPolytope {
    fn from(p: InputPolytope) -> Self {
        RawPolytope { a: p.a, b: p.b }
    }
}

impl InputPolytope {
    /// Validates the shape and probes every coordinate's range with a small LP.
    ///
    /// Fails with a configuration error when the set is empty or unbounded.
    pub fn new(a: Vec<Vec<f64>>, b: Vec<f64>) -> Result<Self> {
        let m = a.first().map_or(0, Vec::len);
        if a.is_empty() || m == 0 {
            return Err(Error::Config(
                "input polytope needs at least one row and one column".into(),
            ));
        }
        if a.len() != b.len() || a.iter().any(|r| r.len() != m) {
            return Err(Error::Config(
                "input polytope A and b have inconsistent shapes".into(),
            ));
        }
        if a.iter().flatten().chain(&b).any(|v| !v.is_finite()) {
            return Err(Error::Config(
                "input polytope has non-finite entries".into(),
            ));
        }
        let mut lo = vec![0.0; m];
        let mut hi = vec![0.0; m];
        for l in 0..m {
            for (sign, slot) in [(1.0, &mut lo[l]), (-1.0, &mut hi[l])] {
                let mut cost = vec![0.0; m];
                cost[l] = sign;
                let mut lp = ScenarioLp::generic(m, cost);
                for (row, &rhs) in a.iter().zip(&b) {
                    lp.push_row(RowKind::Generic, 0, row, rhs);
                }
                let sol = solve_simplex(&lp, &SolverOptions::default());
                match sol.status {
                    LpStatus::Optimal => *slot = sol.d[l],
                    LpStatus::Infeasible => {
                        return Err(Error::Config("input polytope is empty".into()));
                    }
                    LpStatus::Unbounded => {
                        return Err(Error::Config(format!(
                            "input polytope is unbounded along u_{}",
                            l + 1
                        )));
                    }
                    LpStatus::IterationLimit => {
                        return Err(Error::Config("could not bound the input polytope".into()));
                    }
                }
            }
        }
        let is_box = a
            .iter()
            .all(|r| r.iter().filter(|v| **v != 0.0).count() == 1);
        let bbox = Aabb::new(lo, hi)?;
        Ok(InputPolytope { a, b, bbox, is_box })
    }

    /// The box `lo <= u <= hi` written as `2m` half-spaces.
    pub fn from_box(lo: &[f64], hi: &[f64]) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::Config("input box bounds differ in length".into()));
        }
        let m = lo.len();
        let mut a = Vec::with_capacity(2 * m);
        let mut b = Vec::with_capacity(2 * m);
        for l in 0..m {
            let mut up = vec![0.0; m];
            up[l] = 1.0;
            a.push(up);
            b.push(hi[l]);
            let mut down = vec![0.0; m];
            down[l] = -1.0;
            a.push(down);
            b.push(-lo[l]);
        }
        Self::new(a, b)
    }

    pub fn dim(&self) -> usize {
        self.bbox.dim()
    }

    pub fn a(&self) -> &[Vec<f64>] {
        &self.a
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    /// Number of half-spaces.
    pub fn rows(&self) -> usize {
        self.b.len()
    }

    pub fn bounding_box(&self) -> &Aabb {
        &self.bbox
    }

    /// The set itself when every half-space constrains a single coordinate.
    pub fn as_box(&self) -> Option<&Aabb> {
        self.is_box.then_some(&self.bbox)
    }

    pub fn contains(&self, u: &[f64], tol: f64) -> bool {
        self.a
            .iter()
            .zip(&self.b)
            .all(|(row, &rhs)| row.iter().zip(u).map(|(a, x)| a * x).sum::<f64>() <= rhs + tol)
    }

    /// Uniform draw by rejection from the bounding box.
    pub fn sample_into(&self, rng: &mut RngStream, out: &mut [f64]) -> Result<()> {
        for _ in 0..MAX_REJECTIONS {
            self.bbox.sample_into(rng, out);
            if self.is_box || self.contains(out, 0.0) {
                return Ok(());
            }
        }
        Err(Error::Data(format!(
            "rejection sampling from the input polytope failed {MAX_REJECTIONS} times"
        )))
    }

    /// Coordinate-wise projection onto a box-shaped set; `None` for general polytopes.
    pub fn clip(&self, u: &[f64]) -> Option<Vec<f64>> {
        let b = self.as_box()?;
        Some(
            u.iter()
                .zip(b.lo.iter().zip(&b.hi))
                .map(|(&v, (&lo, &hi))| v.clamp(lo, hi))
                .collect(),
        )
    }
}
