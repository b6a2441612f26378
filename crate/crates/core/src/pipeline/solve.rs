//! Second-stage solve that minimises the probability bound at a fixed `K`.
//!
//! The first stage yields `K*`. Among all points with `K <= K* + tol` the
//! bound `rho = (a + b c) / lambda` is a linear-fractional objective. With
//! `s = 1/lambda` and `y = d s` every row `a.d <= r` becomes `a.y - r s <= 0`,
//! `y_lambda = 1`, and the objective turns into `a s + b y_c`, which is linear.

use crate::lp::{solve_lazy, LpStatus, SolverOptions};
use crate::scenario::{DecisionLayout, RowKind, ScenarioLp, LAMBDA_MARGIN};

/// Homogenised program over `[y, s]`.
fn homogenise(lp: &ScenarioLp, k_limit: f64, cost_s: f64, cost_c: f64) -> ScenarioLp {
    let d = lp.num_vars();
    let s = d;
    let mut cost = vec![0.0; d + 1];
    cost[s] = cost_s;
    cost[DecisionLayout::C] = cost_c;
    let mut out = ScenarioLp::generic(d + 1, cost);
    out.set_bounds(DecisionLayout::LAMBDA, 1.0, 1.0);
    out.set_bounds(s, 0.0, f64::INFINITY);

    let mut row = vec![0.0; d + 1];
    for r in 0..lp.num_rows() {
        row[..d].copy_from_slice(lp.row(r));
        row[s] = -lp.rhs(r);
        let tag = lp.tag(r);
        out.push_row(tag.kind, tag.index, &row, 0.0);
    }
    let mut bound = |var: usize, sign: f64, value: f64| {
        row.fill(0.0);
        row[var] = sign;
        row[s] = -sign * value;
        out.push_row(RowKind::Generic, var, &row, 0.0);
    };
    for k in 0..d {
        if k == DecisionLayout::LAMBDA {
            continue;
        }
        let hi = if k == DecisionLayout::K {
            lp.upper[k].min(k_limit)
        } else {
            lp.upper[k]
        };
        if hi.is_finite() {
            bound(k, 1.0, hi);
        }
        if lp.lower[k].is_finite() {
            bound(k, -1.0, lp.lower[k]);
        }
    }
    // lambda >= lower  <=>  s <= 1 / lower
    let lam_lo = lp.lower[DecisionLayout::LAMBDA].max(1.0 + LAMBDA_MARGIN);
    bound(DecisionLayout::LAMBDA, -1.0, lam_lo);
    out
}

/// Minimises `(cost_s + cost_c c) / lambda` subject to the rows of `lp` and `K <= k_limit`.
/// Returns a refitted point of `lp`, or `None` when the stage fails or degenerates.
pub(crate) fn minimise_rho(
    lp: &ScenarioLp,
    k_limit: f64,
    cost_s: f64,
    cost_c: f64,
    opts: &SolverOptions,
) -> Option<(Vec<f64>, f64)> {
    let h = homogenise(lp, k_limit, cost_s, cost_c);
    let opts = SolverOptions {
        trace: None,
        ..opts.clone()
    };
    let sol = solve_lazy(&h, &opts);
    if sol.status != LpStatus::Optimal {
        return None;
    }
    let d = lp.num_vars();
    let s = sol.d[d];
    if !(s > 1e-12) {
        return None;
    }
    let point: Vec<f64> = sol.d[..d].iter().map(|y| y / s).collect();
    refit(lp, point, opts.feas_tol)
}

/// Repairs round-off in a candidate point: clamps the simple bounds, resets the
/// cap auxiliaries to the absolute coefficients, and raises `K` to the
/// smallest value satisfying every row that carries `-K`. Returns the point
/// and its `K`, or `None` when a row without `K` stays violated.
pub(crate) fn refit(lp: &ScenarioLp, mut d: Vec<f64>, tol: f64) -> Option<(Vec<f64>, f64)> {
    let layout = lp.layout()?;
    d[DecisionLayout::LAMBDA] = d[DecisionLayout::LAMBDA].max(lp.lower[DecisionLayout::LAMBDA]);
    d[DecisionLayout::C] = d[DecisionLayout::C].max(0.0);
    for e in 0..layout.barrier_len() {
        if let Some(aux) = layout.barrier_aux_slot(e) {
            d[aux] = d[layout.barrier_slot(e)].abs();
        }
    }
    let mut k = 0;
    for (l, &len) in layout.controller_lens().iter().enumerate() {
        for e in 0..len {
            if let Some(aux) = layout.controller_aux_slot(k) {
                d[aux] = d[layout.controller_slot(l, e)].abs();
            }
            k += 1;
        }
    }

    let mut need = f64::NEG_INFINITY;
    d[DecisionLayout::K] = 0.0;
    for r in 0..lp.num_rows() {
        let a_k = lp.row(r)[DecisionLayout::K];
        let rest = lp.residual(r, &d);
        if a_k < 0.0 {
            need = need.max(rest / -a_k);
        } else if rest > tol * (1.0 + lp.rhs(r).abs()) {
            return None;
        }
    }
    let k_val = need.max(lp.lower[DecisionLayout::K]);
    if k_val > lp.upper[DecisionLayout::K] {
        return None;
    }
    d[DecisionLayout::K] = k_val;
    Some((d, k_val))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::{ConfidenceBudget, RhoMode};
    use crate::lp::solve_simplex;
    use crate::poly::monomial_basis;
    use crate::scenario::{build_verification_lp, collect_dataset, Caps};
    use crate::systems::{Aabb, AffineSystem, Region, SafetySpec};

    fn setup(n: usize) -> ScenarioLp {
        let r = |iv: &[(f64, f64)]| {
            Region::new(
                iv.iter()
                    .map(|&p| Aabb::from_intervals(&[p]).unwrap())
                    .collect(),
            )
            .unwrap()
        };
        let spec = SafetySpec::new(
            r(&[(-1.0, 1.0)]),
            r(&[(-0.1, 0.1)]),
            r(&[(0.8, 1.0), (-1.0, -0.8)]),
            5,
        )
        .unwrap();
        let data = collect_dataset(&AffineSystem::scalar(0.5, 0.01), &spec, None, n, 8, 3).unwrap();
        let budget = ConfidenceBudget {
            beta: 0.01,
            beta_s: 0.01,
            delta: 0.01,
            m_hat: 0.01,
            epsilon: 0.01,
            rho: RhoMode::Auto,
            tighten: false,
        };
        let basis = monomial_basis(1, 2, &[]).unwrap();
        build_verification_lp(&data, &spec, &basis, &budget, &Caps::default()).unwrap()
    }

    /// Brute force: scan lambda on a grid, solving for the least `c` with `K` fixed.
    fn scan_min_rho(lp: &ScenarioLp, k_star: f64, horizon: f64) -> f64 {
        let mut best = f64::INFINITY;
        let d = lp.num_vars();
        for step in 0..400 {
            let lambda = 1.0 + 1e-6 + step as f64 * 0.05;
            let mut cost = vec![0.0; d];
            cost[DecisionLayout::C] = 1.0;
            let mut fixed = lp.clone();
            fixed.cost = cost;
            fixed.set_bounds(DecisionLayout::LAMBDA, lambda, lambda);
            fixed.set_bounds(DecisionLayout::K, -1e6, k_star + 1e-7);
            let sol = solve_simplex(&fixed, &SolverOptions::default());
            if sol.status == LpStatus::Optimal {
                best = best.min((1.0 + sol.d[DecisionLayout::C] * horizon) / lambda);
            }
        }
        best
    }

    #[test]
    fn second_stage_beats_lambda_scan() {
        let lp = setup(300);
        let first = solve_simplex(&lp, &SolverOptions::default());
        assert_eq!(first.status, LpStatus::Optimal);
        let k_star = first.objective;
        let (d, k) = minimise_rho(&lp, k_star + 1e-7, 1.0, 5.0, &SolverOptions::default()).unwrap();
        assert!(k <= k_star + 1e-6, "{k} vs {k_star}");
        assert!(lp.max_violation(&d).0 <= 1e-8);
        let rho = (1.0 + 5.0 * d[DecisionLayout::C]) / d[DecisionLayout::LAMBDA];
        let scanned = scan_min_rho(&lp, k_star, 5.0);
        assert!(
            rho <= scanned + 1e-6,
            "stage two {rho} vs grid scan {scanned}"
        );
        let first_rho = (1.0 + 5.0 * first.d[DecisionLayout::C]) / first.d[DecisionLayout::LAMBDA];
        assert!(rho <= first_rho + 1e-9);
    }

    #[test]
    fn refit_raises_k_to_the_worst_row() {
        let lp = setup(50);
        let sol = solve_simplex(&lp, &SolverOptions::default());
        let mut d = sol.d.clone();
        d[DecisionLayout::K] = -100.0;
        let (fixed, k) = refit(&lp, d, 1e-9).unwrap();
        assert!((k - sol.objective).abs() <= 1e-9);
        assert!(lp.max_violation(&fixed).0 <= 1e-12);
    }
}
