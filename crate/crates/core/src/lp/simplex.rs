//! Dense two-phase simplex applied to the dual of `min c.x s.t. A x <= r`.
//!
//! The scenario programs have a handful of variables and very many rows, so
//! the dual `min r.y s.t. A^T y = -c, y >= 0` has a tableau with one row per
//! primal variable. Primal values are read off the simplex multipliers and
//! then polished by solving the active rows on the unscaled data.

use crate::lp::{LpStatus, SolverOptions};

/// One primal row `a.x <= r`, unscaled.
pub(crate) struct PrimalRow<'a> {
    pub a: &'a [f64],
    pub r: f64,
}

pub(crate) struct RawSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    pub iterations: usize,
    pub dual_objective: Option<f64>,
}

const PIVOT_TOL: f64 = 1e-11;
const STALL_LIMIT: usize = 50;
/// Pivots between rebuilds of the tableau from the original data.
const REFACTOR_EVERY: usize = 100;

struct Tableau {
    rows: usize,
    cols: usize,
    width: usize,
    t: Vec<f64>,
    obj: Vec<f64>,
    basis: Vec<usize>,
    /// Pricing threshold per column; a column enters when its reduced cost is below `-thr`.
    thr: Vec<f64>,
    /// Initial tableau and the cost row of the current phase, kept for refactoring.
    orig: Vec<f64>,
    cost: Vec<f64>,
    since_refactor: usize,
}

enum Phase {
    Optimal,
    Unbounded,
    IterationLimit,
}

impl Tableau {
    fn at(&self, k: usize, j: usize) -> f64 {
        self.t[k * self.width + j]
    }

    fn rhs(&self, k: usize) -> f64 {
        self.t[k * self.width + self.cols]
    }

    fn pivot(&mut self, pr: usize, pc: usize) {
        let w = self.width;
        let p = self.t[pr * w + pc];
        let inv = 1.0 / p;
        for v in &mut self.t[pr * w..(pr + 1) * w] {
            *v *= inv;
        }
        self.t[pr * w + pc] = 1.0;
        let (before, rest) = self.t.split_at_mut(pr * w);
        let (prow, after) = rest.split_at_mut(w);
        for row in before.chunks_mut(w).chain(after.chunks_mut(w)) {
            let f = row[pc];
            if f != 0.0 {
                for (v, pv) in row.iter_mut().zip(prow.iter()) {
                    *v -= f * pv;
                }
                row[pc] = 0.0;
            }
        }
        let f = self.obj[pc];
        if f != 0.0 {
            for (v, pv) in self.obj.iter_mut().zip(prow.iter()) {
                *v -= f * pv;
            }
            self.obj[pc] = 0.0;
        }
        self.basis[pr] = pc;
    }

    /// Recomputes the tableau as `B^-1 T0` and the reduced costs from the
    /// phase cost, discarding the round-off accumulated by pivoting. Returns
    /// false when the basis matrix is numerically singular, leaving the
    /// tableau untouched.
    fn refactor(&mut self) -> bool {
        let (d, w) = (self.rows, self.width);
        let aug = d + w;
        let mut mat = vec![0.0; d * aug];
        for k in 0..d {
            for (p, &j) in self.basis.iter().enumerate() {
                mat[k * aug + p] = self.orig[k * w + j];
            }
            mat[k * aug + d..(k + 1) * aug].copy_from_slice(&self.orig[k * w..(k + 1) * w]);
        }
        if !eliminate(&mut mat, d, aug) {
            return false;
        }
        for k in 0..d {
            self.t[k * w..(k + 1) * w].copy_from_slice(&mat[k * aug + d..(k + 1) * aug]);
        }
        for (p, &j) in self.basis.iter().enumerate() {
            for k in 0..d {
                self.t[k * w + j] = if k == p { 1.0 } else { 0.0 };
            }
        }
        self.obj.copy_from_slice(&self.cost);
        for p in 0..d {
            let cb = self.cost[self.basis[p]];
            if cb != 0.0 {
                for j in 0..w {
                    self.obj[j] -= cb * self.t[p * w + j];
                }
            }
        }
        for &j in &self.basis {
            self.obj[j] = 0.0;
        }
        self.since_refactor = 0;
        true
    }

    /// Current objective value (the last entry stores its negation).
    fn value(&self) -> f64 {
        -self.obj[self.cols]
    }

    fn run(&mut self, allowed: usize, opts: &SolverOptions, iterations: &mut usize) -> Phase {
        let mut bland = false;
        let mut best = self.value();
        let mut stall = 0usize;
        loop {
            if *iterations >= opts.max_iter {
                return Phase::IterationLimit;
            }
            let entering = if bland {
                (0..allowed).find(|&j| self.obj[j] < -self.thr[j])
            } else {
                let mut pick = None;
                let mut most = 0.0;
                for j in 0..allowed {
                    if self.obj[j] < -self.thr[j] && self.obj[j] < most {
                        most = self.obj[j];
                        pick = Some(j);
                    }
                }
                pick
            };
            let Some(pc) = entering else {
                // Confirm optimality on a freshly rebuilt tableau.
                if self.since_refactor > 0 && self.refactor() {
                    continue;
                }
                return Phase::Optimal;
            };
            let mut leave: Option<(usize, f64)> = None;
            for k in 0..self.rows {
                let a = self.at(k, pc);
                if a > PIVOT_TOL {
                    let ratio = self.rhs(k).max(0.0) / a;
                    let better = match leave {
                        None => true,
                        Some((lk, lr)) => {
                            let tie = (ratio - lr).abs() <= 1e-12 * (1.0 + lr.abs());
                            if tie {
                                if bland {
                                    self.basis[k] < self.basis[lk]
                                } else {
                                    a > self.at(lk, pc)
                                }
                            } else {
                                ratio < lr
                            }
                        }
                    };
                    if better {
                        leave = Some((k, ratio));
                    }
                }
            }
            let Some((pr, _)) = leave else {
                if self.since_refactor > 0 && self.refactor() {
                    continue;
                }
                return Phase::Unbounded;
            };
            self.pivot(pr, pc);
            *iterations += 1;
            self.since_refactor += 1;
            if self.since_refactor >= REFACTOR_EVERY {
                self.refactor();
            }
            let v = self.value();
            if v < best - 1e-12 * (1.0 + best.abs()) {
                best = v;
                stall = 0;
            } else {
                stall += 1;
                if stall >= STALL_LIMIT {
                    bland = true;
                }
            }
        }
    }
}

/// Solves `min cost.x` subject to `rows` (bounds must already be rows).
pub(crate) fn solve_rows(
    cost: &[f64],
    rows: &[PrimalRow<'_>],
    opts: &SolverOptions,
) -> RawSolution {
    let d = cost.len();
    let m = rows.len();

    // Row scaling by the largest coefficient, then column scaling.
    let mut row_scale = vec![1.0; m];
    for (s, row) in row_scale.iter_mut().zip(rows) {
        let big = row.a.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        if big > 0.0 {
            *s = 1.0 / big;
        }
    }
    let mut col_scale = vec![1.0; d];
    for (k, s) in col_scale.iter_mut().enumerate() {
        let big = rows
            .iter()
            .zip(&row_scale)
            .fold(0.0f64, |acc, (row, rs)| acc.max((row.a[k] * rs).abs()));
        if big > 0.0 {
            *s = 1.0 / big;
        }
    }

    // Equation k of the dual: sum_i a''_ik y_i = -c''_k, flipped so the right side is >= 0.
    let cols = m + d;
    let width = cols + 1;
    let mut t = vec![0.0; d * width];
    let mut flip = vec![1.0; d];
    for k in 0..d {
        let b = -cost[k] * col_scale[k];
        flip[k] = if b < 0.0 { -1.0 } else { 1.0 };
        let row = &mut t[k * width..(k + 1) * width];
        for (i, pr) in rows.iter().enumerate() {
            row[i] = flip[k] * pr.a[k] * row_scale[i] * col_scale[k];
        }
        row[m + k] = 1.0;
        row[cols] = flip[k] * b;
    }
    let mut tab = Tableau {
        rows: d,
        cols,
        width,
        t,
        obj: vec![0.0; width],
        basis: (m..m + d).collect(),
        thr: vec![opts.opt_tol; m],
        orig: Vec::new(),
        cost: vec![0.0; width],
        since_refactor: 0,
    };
    tab.orig = tab.t.clone();

    // Phase 1: minimise the artificial sum.
    tab.cost[m..cols].fill(1.0);
    for k in 0..d {
        for j in 0..width {
            if j < m || j == cols {
                tab.obj[j] -= tab.t[k * width + j];
            }
        }
    }
    let mut iterations = 0usize;
    match tab.run(m, opts, &mut iterations) {
        Phase::IterationLimit => return failed(LpStatus::IterationLimit, d, iterations),
        // Phase one is bounded below by zero; an unbounded ray here is numerical noise.
        Phase::Unbounded => return failed(LpStatus::IterationLimit, d, iterations),
        Phase::Optimal => {}
    }
    let scale_b = (0..d).fold(1.0f64, |acc, k| acc.max((cost[k] * col_scale[k]).abs()));
    if tab.value() > opts.feas_tol * scale_b {
        // No dual feasible point: the primal is unbounded (or infeasible as well).
        return failed(LpStatus::Unbounded, d, iterations);
    }

    // Drive artificials out of the basis where a structural column can replace them.
    for k in 0..d {
        if tab.basis[k] >= m {
            let best = (0..m)
                .map(|j| (j, tab.at(k, j).abs()))
                .filter(|&(_, v)| v > 1e-9)
                .max_by(|a, b| a.1.total_cmp(&b.1));
            if let Some((j, _)) = best {
                tab.pivot(k, j);
            }
        }
    }

    // In phase two a reduced cost is the scaled slack of a primal row. Rows with
    // large coefficients would otherwise hide unscaled violations well above
    // the feasibility tolerance behind a tiny scaled one.
    for (t, s) in tab.thr.iter_mut().zip(&row_scale) {
        *t = opts.opt_tol.min(0.1 * opts.feas_tol * s);
    }

    // Phase 2 reduced costs with dual costs r''_i = row_scale_i * r_i.
    tab.cost.fill(0.0);
    for ((c, r), s) in tab.cost.iter_mut().zip(rows).zip(&row_scale) {
        *c = r.r * s;
    }
    if !tab.refactor() {
        return failed(LpStatus::IterationLimit, d, iterations);
    }
    match tab.run(m, opts, &mut iterations) {
        Phase::IterationLimit => return failed(LpStatus::IterationLimit, d, iterations),
        Phase::Unbounded => return failed(LpStatus::Infeasible, d, iterations),
        Phase::Optimal => {}
    }

    // Multipliers of the unflipped equations are the scaled primal values.
    let mut x: Vec<f64> = (0..d)
        .map(|k| -flip[k] * tab.obj[m + k] * col_scale[k])
        .collect();
    if let Some(polished) = polish(&tab.basis, m, rows, d) {
        if worst(rows, &polished) <= worst(rows, &x) {
            x = polished;
        }
    }
    RawSolution {
        status: LpStatus::Optimal,
        x,
        iterations,
        dual_objective: Some(-tab.value()),
    }
}

fn failed(status: LpStatus, d: usize, iterations: usize) -> RawSolution {
    RawSolution {
        status,
        x: vec![0.0; d],
        iterations,
        dual_objective: None,
    }
}

fn worst(rows: &[PrimalRow<'_>], x: &[f64]) -> f64 {
    rows.iter()
        .map(|r| r.a.iter().zip(x).map(|(a, v)| a * v).sum::<f64>() - r.r)
        .fold(0.0, f64::max)
}

/// Re-solves the basic rows `a_j.x = r_j` (and `x_k = 0` for leftover artificials)
/// on the original data with partial pivoting, followed by two rounds of
/// iterative refinement. Polynomial rows over boxes far from the origin make
/// this system badly conditioned, and refinement recovers most of the lost digits.
fn polish(basis: &[usize], m: usize, rows: &[PrimalRow<'_>], d: usize) -> Option<Vec<f64>> {
    let mut system = vec![0.0; d * (d + 1)];
    for (p, &j) in basis.iter().enumerate() {
        let eq = &mut system[p * (d + 1)..(p + 1) * (d + 1)];
        if j < m {
            eq[..d].copy_from_slice(rows[j].a);
            eq[d] = rows[j].r;
        } else {
            eq[j - m] = 1.0;
        }
    }
    let mut x = solve_dense(&mut system.clone(), d)?;
    for _ in 0..2 {
        let mut correction = system.clone();
        for p in 0..d {
            let eq = &mut correction[p * (d + 1)..(p + 1) * (d + 1)];
            let r = eq[d] - eq[..d].iter().zip(&x).map(|(a, v)| a * v).sum::<f64>();
            eq[d] = r;
        }
        let Some(dx) = solve_dense(&mut correction, d) else {
            break;
        };
        for (v, c) in x.iter_mut().zip(&dx) {
            *v += c;
        }
    }
    Some(x)
}

/// Gauss-Jordan elimination with partial pivoting on a `d x aug` matrix whose
/// first `d` columns are square. On success the right-hand block holds the
/// solution.
fn eliminate(mat: &mut [f64], d: usize, aug: usize) -> bool {
    for col in 0..d {
        let Some((piv, big)) = (col..d)
            .map(|r| (r, mat[r * aug + col].abs()))
            .max_by(|a, b| a.1.total_cmp(&b.1))
        else {
            return false;
        };
        if big < 1e-13 {
            return false;
        }
        if piv != col {
            for j in 0..aug {
                mat.swap(piv * aug + j, col * aug + j);
            }
        }
        let inv = 1.0 / mat[col * aug + col];
        for v in &mut mat[col * aug..(col + 1) * aug] {
            *v *= inv;
        }
        for r in 0..d {
            if r == col {
                continue;
            }
            let f = mat[r * aug + col];
            if f != 0.0 {
                for j in col..aug {
                    mat[r * aug + j] -= f * mat[col * aug + j];
                }
            }
        }
    }
    mat.iter().all(|v| v.is_finite())
}

/// Gaussian elimination with partial pivoting on an augmented `d x (d+1)` matrix.
pub(crate) fn solve_dense(mat: &mut [f64], d: usize) -> Option<Vec<f64>> {
    let w = d + 1;
    for col in 0..d {
        let (piv, big) = (col..d)
            .map(|r| (r, mat[r * w + col].abs()))
            .max_by(|a, b| a.1.total_cmp(&b.1))?;
        if big < 1e-300 {
            return None;
        }
        if piv != col {
            for j in 0..w {
                mat.swap(piv * w + j, col * w + j);
            }
        }
        let p = mat[col * w + col];
        for r in col + 1..d {
            let f = mat[r * w + col] / p;
            if f != 0.0 {
                for j in col..w {
                    mat[r * w + j] -= f * mat[col * w + j];
                }
            }
        }
    }
    let mut x = vec![0.0; d];
    for r in (0..d).rev() {
        let mut s = mat[r * w + d];
        for j in r + 1..d {
            s -= mat[r * w + j] * x[j];
        }
        x[r] = s / mat[r * w + r];
        if !x[r].is_finite() {
            return None;
        }
    }
    Some(x)
}
