//! Solvers for the scenario linear programs.
//!
//! [`solve_simplex`] runs the dense simplex on every row at once.
//! [`solve_lazy`] grows a working set of rows from the most violated ones
//! until the working-set optimum satisfies the full program. Both re-check the
//! returned point against every row before calling it optimal.

mod simplex;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use rayon::prelude::*;

use crate::scenario::{DecisionLayout, ScenarioLp};
use simplex::{solve_rows, PrimalRow};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
}

impl std::fmt::Display for LpStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LpStatus::Optimal => "optimal",
            LpStatus::Infeasible => "infeasible",
            LpStatus::Unbounded => "unbounded",
            LpStatus::IterationLimit => "iteration_limit",
        })
    }
}

#[derive(Clone, Debug)]
pub struct SolverOptions {
    /// Largest row residual accepted at an optimal point.
    pub feas_tol: f64,
    /// Reduced-cost threshold for optimality.
    pub opt_tol: f64,
    /// Simplex pivots per solve.
    pub max_iter: usize,
    /// Rows added per lazy round.
    pub batch: usize,
    /// Lazy rounds before giving up.
    pub max_rounds: usize,
    /// Optional per-round trace file for the lazy solver.
    pub trace: Option<PathBuf>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            feas_tol: 1e-9,
            opt_tol: 1e-9,
            max_iter: 200_000,
            batch: 256,
            max_rounds: 500,
            trace: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    /// `cost.d`; for scenario programs this is `K`.
    pub objective: f64,
    pub d: Vec<f64>,
    /// Rows within `feas_tol` of equality at `d`.
    pub active_rows: Vec<usize>,
    /// Largest row or bound residual of the full program at `d`.
    pub max_violation: f64,
    pub iterations: usize,
    pub rounds: usize,
    /// Rows handed to the simplex in the final round.
    pub working_rows: usize,
    /// Dual objective of the final simplex solve.
    pub dual_objective: Option<f64>,
    /// How far `K` was raised to absorb round-off in the final rescan.
    pub k_shift: f64,
}

impl LpSolution {
    fn failure(
        status: LpStatus,
        num_vars: usize,
        iterations: usize,
        rounds: usize,
        working: usize,
    ) -> Self {
        LpSolution {
            status,
            objective: f64::NAN,
            d: vec![f64::NAN; num_vars],
            active_rows: Vec::new(),
            max_violation: f64::NAN,
            iterations,
            rounds,
            working_rows: working,
            dual_objective: None,
            k_shift: 0.0,
        }
    }
}

/// Finite variable bounds as rows `x_k <= hi` and `-x_k <= -lo`.
fn bound_rows(lp: &ScenarioLp) -> (Vec<Vec<f64>>, Vec<f64>) {
    let d = lp.num_vars();
    let mut rows = Vec::new();
    let mut rhs = Vec::new();
    for k in 0..d {
        if lp.upper[k].is_finite() {
            let mut r = vec![0.0; d];
            r[k] = 1.0;
            rows.push(r);
            rhs.push(lp.upper[k]);
        }
        if lp.lower[k].is_finite() {
            let mut r = vec![0.0; d];
            r[k] = -1.0;
            rows.push(r);
            rhs.push(-lp.lower[k]);
        }
    }
    (rows, rhs)
}

/// Solves on the row subset `subset`, returning the raw simplex point.
fn solve_subset(lp: &ScenarioLp, subset: &[usize], opts: &SolverOptions) -> simplex::RawSolution {
    let (brows, brhs) = bound_rows(lp);
    let mut rows: Vec<PrimalRow<'_>> = Vec::with_capacity(subset.len() + brows.len());
    for (a, &r) in brows.iter().zip(&brhs) {
        rows.push(PrimalRow { a, r });
    }
    for &i in subset {
        let a = lp.row(i);
        if a.iter().any(|v| *v != 0.0) {
            rows.push(PrimalRow { a, r: lp.rhs(i) });
        } else if lp.rhs(i) < -opts.feas_tol {
            return simplex::RawSolution {
                status: LpStatus::Infeasible,
                x: vec![0.0; lp.num_vars()],
                iterations: 0,
                dual_objective: None,
            };
        }
    }
    solve_rows(&lp.cost, &rows, opts)
}

/// Residuals of every row at `d`, computed in parallel chunks.
fn residuals(lp: &ScenarioLp, d: &[f64]) -> Vec<f64> {
    (0..lp.num_rows())
        .into_par_iter()
        .with_min_len(4096)
        .map(|r| lp.residual(r, d))
        .collect()
}

fn bound_violation(lp: &ScenarioLp, d: &[f64]) -> f64 {
    d.iter()
        .enumerate()
        .map(|(k, &x)| (lp.lower[k] - x).max(x - lp.upper[k]))
        .fold(0.0, f64::max)
}

/// Full-row certification of a candidate point. When the only violations are
/// round-off on rows that carry `-K`, `K` is raised just enough to clear them;
/// every scenario row carries `-K`, so this keeps the point feasible at a
/// marginally worse objective.
fn certify(
    lp: &ScenarioLp,
    mut d: Vec<f64>,
    opts: &SolverOptions,
    iterations: usize,
    rounds: usize,
    working: usize,
    dual_objective: Option<f64>,
) -> LpSolution {
    let mut res = residuals(lp, &d);
    let mut k_shift = 0.0;
    let violated = |res: &[f64]| res.iter().any(|&v| v > opts.feas_tol);
    if violated(&res) && lp.layout().is_some() {
        let k = DecisionLayout::K;
        let mut need = 0.0f64;
        let mut fixable = true;
        for (r, &v) in res.iter().enumerate() {
            if v > opts.feas_tol {
                let a = lp.row(r)[k];
                if a < 0.0 {
                    need = need.max(v / -a);
                } else {
                    fixable = false;
                }
            }
        }
        // Only absorb round-off, never a genuine infeasibility.
        if fixable && need <= 1e-6 * (1.0 + d[k].abs()) && d[k] + need <= lp.upper[k] {
            d[k] += need;
            k_shift = need;
            res = residuals(lp, &d);
        }
    }
    let max_violation = res
        .iter()
        .copied()
        .fold(0.0, f64::max)
        .max(bound_violation(lp, &d));
    let status = if max_violation <= opts.feas_tol {
        LpStatus::Optimal
    } else {
        LpStatus::IterationLimit
    };
    let active_rows = res
        .iter()
        .enumerate()
        .filter(|&(r, &v)| v >= -opts.feas_tol && lp.row(r).iter().any(|a| *a != 0.0))
        .map(|(r, _)| r)
        .collect();
    let objective = lp.cost.iter().zip(&d).map(|(c, x)| c * x).sum();
    LpSolution {
        status,
        objective,
        d,
        active_rows,
        max_violation,
        iterations,
        rounds,
        working_rows: working,
        dual_objective,
        k_shift,
    }
}

/// Solves the program with every row in the simplex.
pub fn solve_simplex(lp: &ScenarioLp, opts: &SolverOptions) -> LpSolution {
    let all: Vec<usize> = (0..lp.num_rows()).collect();
    let raw = solve_subset(lp, &all, opts);
    if raw.status != LpStatus::Optimal {
        return LpSolution::failure(raw.status, lp.num_vars(), raw.iterations, 1, all.len());
    }
    certify(
        lp,
        raw.x,
        opts,
        raw.iterations,
        1,
        all.len(),
        raw.dual_objective,
    )
}

/// Rows every working set starts with: non-sample rows plus an even spread of sample rows.
fn initial_working_set(lp: &ScenarioLp, batch: usize) -> Vec<usize> {
    let mut set: Vec<usize> = (0..lp.num_rows())
        .filter(|&r| !lp.tag(r).kind.is_sample_row())
        .collect();
    let samples: Vec<usize> = (0..lp.num_rows())
        .filter(|&r| lp.tag(r).kind.is_sample_row())
        .collect();
    if samples.len() <= batch {
        set.extend(samples);
    } else {
        let step = samples.len() as f64 / batch as f64;
        set.extend((0..batch).map(|k| samples[(k as f64 * step) as usize]));
    }
    set.sort_unstable();
    set.dedup();
    set
}

/// Constraint generation: solve on a working set, add the `batch` most violated
/// rows of the full program, repeat until none is violated by more than `feas_tol`.
pub fn solve_lazy(lp: &ScenarioLp, opts: &SolverOptions) -> LpSolution {
    solve_lazy_from(lp, initial_working_set(lp, opts.batch.max(1)), opts)
}

/// [`solve_lazy`] starting from an explicit working set.
pub fn solve_lazy_from(lp: &ScenarioLp, start: Vec<usize>, opts: &SolverOptions) -> LpSolution {
    let mut trace = opts
        .trace
        .as_ref()
        .and_then(|p| File::create(p).ok().map(BufWriter::new));
    if let Some(t) = trace.as_mut() {
        let _ = writeln!(t, "round,objective,violated,working_rows");
    }
    let mut in_set = vec![false; lp.num_rows()];
    let mut working = start;
    working.sort_unstable();
    working.dedup();
    for &r in &working {
        in_set[r] = true;
    }
    let mut iterations = 0;
    for round in 1..=opts.max_rounds.max(1) {
        let raw = solve_subset(lp, &working, opts);
        iterations += raw.iterations;
        if raw.status != LpStatus::Optimal {
            return LpSolution::failure(
                raw.status,
                lp.num_vars(),
                iterations,
                round,
                working.len(),
            );
        }
        let res = residuals(lp, &raw.x);
        let mut violated: Vec<(usize, f64)> = res
            .iter()
            .enumerate()
            .filter(|&(r, &v)| v > opts.feas_tol && !in_set[r])
            .map(|(r, &v)| (r, v))
            .collect();
        let objective: f64 = lp.cost.iter().zip(&raw.x).map(|(c, x)| c * x).sum();
        if let Some(t) = trace.as_mut() {
            let _ = writeln!(
                t,
                "{round},{objective},{},{}",
                violated.len(),
                working.len()
            );
        }
        if violated.is_empty() {
            if let Some(t) = trace.as_mut() {
                let _ = t.flush();
            }
            return certify(
                lp,
                raw.x,
                opts,
                iterations,
                round,
                working.len(),
                raw.dual_objective,
            );
        }
        violated.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        for &(r, _) in violated.iter().take(opts.batch.max(1)) {
            in_set[r] = true;
            working.push(r);
        }
        working.sort_unstable();
    }
    LpSolution::failure(
        LpStatus::IterationLimit,
        lp.num_vars(),
        iterations,
        opts.max_rounds,
        working.len(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::RowKind;
    use crate::systems::RngStream;

    fn lp_with(cost: Vec<f64>, rows: &[(&[f64], f64)]) -> ScenarioLp {
        let mut lp = ScenarioLp::generic(cost.len(), cost);
        for (a, r) in rows {
            lp.push_row(RowKind::Generic, 0, a, *r);
        }
        lp
    }

    #[test]
    fn single_lower_bound() {
        let lp = lp_with(vec![1.0], &[(&[-1.0], -3.0), (&[1.0], 10.0)]);
        let sol = solve_simplex(&lp, &SolverOptions::default());
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.objective - 3.0).abs() < 1e-12);
        assert_eq!(sol.active_rows, vec![0]);
    }

    #[test]
    fn two_variable_example() {
        // min K s.t. x - K <= 0, -x <= -2, x <= 5; variables [K, x].
        let lp = lp_with(
            vec![1.0, 0.0],
            &[
                (&[-1.0, 1.0], 0.0),
                (&[0.0, -1.0], -2.0),
                (&[0.0, 1.0], 5.0),
            ],
        );
        let sol = solve_simplex(&lp, &SolverOptions::default());
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.d[0] - 2.0).abs() < 1e-12 && (sol.d[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn infeasible_and_unbounded() {
        let infeasible = lp_with(vec![1.0], &[(&[1.0], 0.0), (&[-1.0], -1.0)]);
        assert_eq!(
            solve_simplex(&infeasible, &SolverOptions::default()).status,
            LpStatus::Infeasible
        );
        let unbounded = lp_with(vec![1.0], &[(&[1.0], 4.0)]);
        assert_eq!(
            solve_simplex(&unbounded, &SolverOptions::default()).status,
            LpStatus::Unbounded
        );
        let zero_row_bad = lp_with(vec![1.0], &[(&[0.0], -1.0), (&[-1.0], 0.0)]);
        assert_eq!(
            solve_simplex(&zero_row_bad, &SolverOptions::default()).status,
            LpStatus::Infeasible
        );
    }

    #[test]
    fn bounds_are_respected() {
        let mut lp = lp_with(vec![1.0, -1.0], &[(&[-1.0, 1.0], 0.5)]);
        lp.set_bounds(0, -2.0, 2.0);
        lp.set_bounds(1, 0.0, 1.0);
        let sol = solve_simplex(&lp, &SolverOptions::default());
        assert_eq!(sol.status, LpStatus::Optimal);
        // The row caps x - K at 0.5, so K - x bottoms out at -0.5.
        assert!((sol.objective - (-0.5)).abs() < 1e-12, "{sol:?}");
    }

    /// Minimum of `cost.x` over the polygon, by enumerating every pair of rows.
    fn vertex_enumeration(cost: &[f64; 2], rows: &[([f64; 2], f64)]) -> Option<f64> {
        let mut best: Option<f64> = None;
        for i in 0..rows.len() {
            for j in i + 1..rows.len() {
                let (a, b) = (rows[i].0, rows[j].0);
                let det = a[0] * b[1] - a[1] * b[0];
                if det.abs() < 1e-12 {
                    continue;
                }
                let x = (rows[i].1 * b[1] - a[1] * rows[j].1) / det;
                let y = (a[0] * rows[j].1 - rows[i].1 * b[0]) / det;
                let feasible = rows
                    .iter()
                    .all(|(r, rhs)| r[0] * x + r[1] * y <= rhs + 1e-9);
                if feasible {
                    let v = cost[0] * x + cost[1] * y;
                    best = Some(best.map_or(v, |b: f64| b.min(v)));
                }
            }
        }
        best
    }

    fn random_instance(rng: &mut RngStream) -> ([f64; 2], Vec<([f64; 2], f64)>) {
        let cost = [2.0 * rng.uniform() - 1.0, 2.0 * rng.uniform() - 1.0];
        let extra = 1 + (rng.uniform() * 2.0) as usize;
        // A bounding box keeps every instance bounded.
        let mut rows = vec![
            ([1.0, 0.0], 5.0),
            ([-1.0, 0.0], 5.0),
            ([0.0, 1.0], 5.0),
            ([0.0, -1.0], 5.0),
        ];
        for _ in 0..extra {
            let a = [2.0 * rng.uniform() - 1.0, 2.0 * rng.uniform() - 1.0];
            rows.push((a, 4.0 * rng.uniform() - 1.0));
        }
        (cost, rows)
    }

    #[test]
    fn matches_vertex_enumeration() {
        let mut rng = RngStream::new(2024, 0);
        let mut optimal = 0;
        for _ in 0..200 {
            let (cost, rows) = random_instance(&mut rng);
            let refs: Vec<(&[f64], f64)> = rows.iter().map(|(a, r)| (&a[..], *r)).collect();
            let lp = lp_with(cost.to_vec(), &refs);
            let sol = solve_simplex(&lp, &SolverOptions::default());
            match vertex_enumeration(&cost, &rows) {
                Some(best) => {
                    assert_eq!(sol.status, LpStatus::Optimal);
                    assert!(
                        (sol.objective - best).abs() <= 1e-7,
                        "{} vs {best}",
                        sol.objective
                    );
                    assert!(sol.max_violation <= 1e-9);
                    let gap = sol.objective - sol.dual_objective.unwrap();
                    assert!(gap.abs() <= 1e-6, "duality gap {gap}");
                    optimal += 1;
                }
                None => assert_eq!(sol.status, LpStatus::Infeasible),
            }
        }
        assert!(optimal > 100);
    }

    fn random_k_lp(rng: &mut RngStream, vars: usize, rows: usize) -> ScenarioLp {
        let mut cost = vec![0.0; vars];
        cost[0] = 1.0;
        let mut lp = ScenarioLp::generic(vars, cost);
        lp.set_bounds(0, -1e6, 1e6);
        for k in 1..vars {
            lp.set_bounds(k, -10.0, 10.0);
        }
        for i in 0..rows {
            let mut a: Vec<f64> = (0..vars).map(|_| 2.0 * rng.uniform() - 1.0).collect();
            a[0] = -1.0;
            lp.push_row(RowKind::Nonneg, i, &a, 2.0 * rng.uniform() - 1.0);
        }
        lp
    }

    #[test]
    fn lazy_agrees_with_full_solve() {
        let mut rng = RngStream::new(99, 0);
        for _ in 0..100 {
            let lp = random_k_lp(&mut rng, 4, 300);
            let opts = SolverOptions {
                batch: 8,
                ..SolverOptions::default()
            };
            let full = solve_simplex(&lp, &opts);
            let lazy = solve_lazy(&lp, &opts);
            assert_eq!(full.status, LpStatus::Optimal);
            assert_eq!(lazy.status, LpStatus::Optimal);
            assert!((full.objective - lazy.objective).abs() <= 1e-7);
            assert!(lazy.max_violation <= 1e-9);
        }
    }

    #[test]
    fn lazy_with_full_start_takes_one_round() {
        let mut rng = RngStream::new(5, 0);
        let lp = random_k_lp(&mut rng, 3, 50);
        let sol = solve_lazy_from(&lp, (0..lp.num_rows()).collect(), &SolverOptions::default());
        assert_eq!(sol.rounds, 1);
        assert_eq!(sol.status, LpStatus::Optimal);
    }

    #[test]
    fn lazy_uses_few_rows_on_large_programs() {
        let mut rng = RngStream::new(6, 0);
        let lp = random_k_lp(&mut rng, 5, 20_000);
        let lazy = solve_lazy(&lp, &SolverOptions::default());
        let full = solve_simplex(&lp, &SolverOptions::default());
        assert!((lazy.objective - full.objective).abs() <= 1e-7);
        assert!(
            lazy.working_rows < lp.num_rows() / 4,
            "{}",
            lazy.working_rows
        );
    }

    #[test]
    fn adding_rows_never_lowers_the_optimum() {
        let mut rng = RngStream::new(7, 0);
        let lp = random_k_lp(&mut rng, 4, 200);
        let mut prev = f64::NEG_INFINITY;
        for take in [10, 50, 100, 200] {
            let sub = {
                let mut s = ScenarioLp::generic(lp.num_vars(), lp.cost.clone());
                s.lower = lp.lower.clone();
                s.upper = lp.upper.clone();
                for r in 0..take {
                    s.push_row(RowKind::Nonneg, r, lp.row(r), lp.rhs(r));
                }
                solve_simplex(&s, &SolverOptions::default())
            };
            assert!(sub.objective >= prev - 1e-12);
            prev = sub.objective;
        }
    }

    #[test]
    fn trace_file_records_rounds() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        let mut rng = RngStream::new(8, 0);
        let lp = random_k_lp(&mut rng, 3, 2000);
        let sol = solve_lazy(
            &lp,
            &SolverOptions {
                batch: 4,
                trace: Some(path.clone()),
                ..SolverOptions::default()
            },
        );
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), sol.rounds + 1);
        assert!(text.lines().last().unwrap().contains(",0,"));
    }
}
