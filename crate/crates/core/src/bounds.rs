//! Closed-form sample counts, Lipschitz bounds and safety-probability bounds.
//!
//! The scenario sample count is the least `N` whose binomial tail
//! `sum_{i=0}^{dims} C(N,i) e^i (1-e)^(N-i)` drops to `beta`. For the
//! case-study regimes (`N ~ 1e7`, `e ~ 1e-6`) the terms are evaluated in log
//! space; `ln C(N,i)` is accumulated as a short sum of logs because `dims` is
//! small, which keeps the relative error near machine precision.
//!
//! The scenario theory behind these counts carries a Slater constant; the
//! min-max structure of the barrier programs lets it be fixed to one, so no
//! knob is exposed for it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Confidence and accuracy knobs of a certification run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceBudget {
    /// Scenario confidence parameter.
    pub beta: f64,
    /// Empirical-mean confidence parameter.
    pub beta_s: f64,
    /// Empirical-mean slack.
    pub delta: f64,
    /// Bound on the variance of the barrier at a successor state.
    pub m_hat: f64,
    /// Gap between the robust and the scenario optimum.
    pub epsilon: f64,
    pub rho: RhoMode,
    /// Tighten every sample row by `L * epsilon^(1/n)` to drop `beta` from the confidence.
    pub tighten: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum RhoMode {
    Fixed(f64),
    /// Omit the probability constraint and report the bound implied by `(c, lambda)`.
    Auto,
}

impl ConfidenceBudget {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64, open_low: bool| {
            let ok = if open_low {
                v > 0.0 && v <= 1.0
            } else {
                (0.0..=1.0).contains(&v)
            };
            if ok {
                Ok(())
            } else {
                Err(Error::Config(format!(
                    "budget.{name} = {v} is outside its range"
                )))
            }
        };
        unit("beta", self.beta, true)?;
        unit("beta_s", self.beta_s, true)?;
        unit("epsilon", self.epsilon, true)?;
        if !(self.delta > 0.0) {
            return Err(Error::Config(format!(
                "budget.delta = {} must be positive",
                self.delta
            )));
        }
        if !(self.m_hat > 0.0) {
            return Err(Error::Config(format!(
                "budget.m_hat = {} must be positive",
                self.m_hat
            )));
        }
        if let RhoMode::Fixed(rho) = self.rho {
            unit("rho", rho, true)?;
        }
        if self.beta + self.beta_s > 1.0 {
            return Err(Error::Config(
                "budget.beta + budget.beta_s exceeds 1".into(),
            ));
        }
        Ok(())
    }

    /// Confidence attached to a certified report.
    pub fn confidence(&self) -> f64 {
        if self.tighten {
            1.0 - self.beta_s
        } else {
            1.0 - self.beta - self.beta_s
        }
    }
}

/// Inputs to the Lipschitz upper bounds for additive-noise systems with
/// quadratic-form barriers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LipschitzParams {
    /// Bound on `||x||` over the state set.
    pub state_bound: f64,
    /// Bound on `||u||` over the input set.
    pub input_bound: f64,
    /// Drift growth: `||f_a(x,u)|| <= l1 ||x|| + l2 ||u|| + l3` (`l2` is the
    /// constant term when there is no input).
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    /// Bound on the state Jacobian norm of the drift.
    pub jac_x: f64,
    /// Bound on the input Jacobian norm of the drift.
    pub jac_u: f64,
    /// Cap on the barrier Gram-matrix norm.
    pub p_norm: f64,
    /// Cap on the sum of controller Gram-matrix norms.
    pub pu_norm: f64,
    /// Input dimension.
    pub m: usize,
}

impl LipschitzParams {
    fn check(&self) -> Result<()> {
        let fields = [
            ("state_bound", self.state_bound),
            ("input_bound", self.input_bound),
            ("l1", self.l1),
            ("l2", self.l2),
            ("l3", self.l3),
            ("jac_x", self.jac_x),
            ("jac_u", self.jac_u),
            ("p_norm", self.p_norm),
            ("pu_norm", self.pu_norm),
        ];
        for (name, v) in fields {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Argument(format!(
                    "lipschitz.{name} = {v} must be non-negative"
                )));
            }
        }
        if !(self.state_bound > 0.0) {
            return Err(Error::Argument(
                "lipschitz.state_bound must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Smallest `N_hat` with `N_hat >= m_hat / (delta^2 beta_s)`.
pub fn nhat_count(m_hat: f64, delta: f64, beta_s: f64) -> Result<u64> {
    if !(m_hat > 0.0 && delta > 0.0 && beta_s > 0.0) || beta_s > 1.0 {
        return Err(Error::Argument(format!(
            "nhat_count needs m_hat, delta > 0 and beta_s in (0,1]; got {m_hat}, {delta}, {beta_s}"
        )));
    }
    let denom = delta * delta * beta_s;
    let exact = m_hat / denom;
    let mut n = exact.ceil();
    // The quotient can land a few ulps above an integer it should equal.
    if n - 1.0 >= exact * (1.0 - 8.0 * f64::EPSILON) && n > 1.0 {
        n -= 1.0;
    }
    Ok(n.max(1.0) as u64)
}

/// `ln P(Bin(N, eps) <= dims)`.
pub fn log_binomial_tail(n: u64, eps: f64, dims: u64) -> f64 {
    if eps >= 1.0 {
        return if n <= dims { 0.0 } else { f64::NEG_INFINITY };
    }
    if eps <= 0.0 {
        return 0.0;
    }
    let ln_eps = eps.ln();
    let ln_q = (-eps).ln_1p();
    let top = dims.min(n);
    let mut log_choose = 0.0;
    let mut terms = Vec::with_capacity(top as usize + 1);
    for i in 0..=top {
        if i > 0 {
            log_choose += ((n - i + 1) as f64).ln() - (i as f64).ln();
        }
        terms.push(log_choose + i as f64 * ln_eps + (n - i) as f64 * ln_q);
    }
    let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

pub fn binomial_tail(n: u64, eps: f64, dims: u64) -> f64 {
    log_binomial_tail(n, eps, dims).exp()
}

const MAX_SAMPLES: u64 = 1 << 60;

/// Least `N >= 1` with `P(Bin(N, eps_bar) <= dims) <= beta`.
pub fn scenario_sample_count(eps_bar: f64, beta: f64, dims: u64) -> Result<u64> {
    if !(eps_bar > 0.0) {
        return Err(Error::Infeasible(format!(
            "eps_bar = {eps_bar}: no finite sample count exists"
        )));
    }
    if eps_bar > 1.0 {
        return Err(Error::Argument(format!("eps_bar = {eps_bar} exceeds 1")));
    }
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::Argument(format!("beta = {beta} is outside (0,1]")));
    }
    let ln_beta = beta.ln();
    let ok = |n: u64| log_binomial_tail(n, eps_bar, dims) <= ln_beta;
    if ok(1) {
        return Ok(1);
    }
    // Tail is non-increasing in N: bracket by doubling, then bisect.
    let mut lo = 1u64; // known to fail
    let mut hi = (dims + 1).max(2);
    while !ok(hi) {
        lo = hi;
        hi = hi
            .checked_mul(2)
            .filter(|&h| h <= MAX_SAMPLES)
            .ok_or_else(|| {
                Error::Infeasible(format!("sample count for eps_bar = {eps_bar} overflows"))
            })?;
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if ok(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Sample count when the contraction factor is chosen from `grid_size` candidates.
pub fn scenario_sample_count_kappa(
    eps_bar: f64,
    beta: f64,
    dims: u64,
    grid_size: u64,
) -> Result<u64> {
    if grid_size == 0 {
        return Err(Error::Argument("kappa grid must be non-empty".into()));
    }
    scenario_sample_count(eps_bar, beta / grid_size as f64, dims)
}

/// `(epsilon / L)^dim`, rejecting `epsilon > L`.
pub fn eps_bar(epsilon: f64, lipschitz: f64, dim: usize) -> Result<f64> {
    if !(lipschitz > 0.0) {
        return Err(Error::Config(format!(
            "Lipschitz constant {lipschitz} must be positive"
        )));
    }
    if epsilon > lipschitz {
        return Err(Error::Config(format!(
            "epsilon = {epsilon} exceeds the Lipschitz constant {lipschitz}; \
             the sample-count theorem requires epsilon <= L"
        )));
    }
    Ok((epsilon / lipschitz).powi(dim as i32))
}

/// Lipschitz bound for a quadratic-form barrier on an autonomous additive-noise system:
/// `2 ||P|| (l1 L jac + l2 jac + L)`.
pub fn lipschitz_quadratic(p: &LipschitzParams) -> Result<f64> {
    p.check()?;
    Ok(2.0 * p.p_norm * (p.l1 * p.state_bound * p.jac_x + p.l2 * p.jac_x + p.state_bound))
}

/// State and input parts of the controlled Lipschitz bound.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ControlLipschitz {
    pub state_part: f64,
    pub input_part: f64,
    pub total: f64,
}

/// Lipschitz bound in `(x, u)` for a control barrier with polynomial controllers.
pub fn lipschitz_control(p: &LipschitzParams) -> Result<ControlLipschitz> {
    p.check()?;
    if p.m == 0 {
        return Err(Error::Argument("lipschitz_control needs m >= 1".into()));
    }
    let growth = p.state_bound * p.l1 + p.input_bound * p.l2 + p.l3;
    let state_part =
        2.0 * growth * p.jac_x * p.p_norm + p.state_bound * p.p_norm + p.state_bound * p.pu_norm;
    let input_part = 2.0 * growth * p.jac_u * p.p_norm + (p.m as f64).sqrt();
    Ok(ControlLipschitz {
        state_part,
        input_part,
        total: state_part.hypot(input_part),
    })
}

/// A probability lower bound before and after clamping to `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SafetyBound {
    pub raw: f64,
    pub clamped: f64,
}

impl SafetyBound {
    fn from_rho(rho: f64) -> Self {
        let raw = 1.0 - rho;
        SafetyBound {
            raw,
            clamped: raw.clamp(0.0, 1.0),
        }
    }
}

/// `rho = (1 + c H) / lambda`.
pub fn rho_linear(c: f64, lambda: f64, horizon: u32) -> f64 {
    (1.0 + c * horizon as f64) / lambda
}

/// `1 - (1 + c H) / lambda`.
pub fn safety_lower_bound(c: f64, lambda: f64, horizon: u32) -> SafetyBound {
    SafetyBound::from_rho(rho_linear(c, lambda, horizon))
}

/// `rho` under the contraction condition `E[B(x+)] <= kappa B(x) + c`.
/// At `lambda == c / kappa` the first branch is used.
pub fn rho_kappa(c: f64, lambda: f64, kappa: f64, horizon: u32) -> Result<f64> {
    if !(kappa > 0.0 && kappa < 1.0) {
        return Err(Error::Argument(format!("kappa = {kappa} is outside (0,1)")));
    }
    if lambda >= c / kappa {
        Ok(1.0 - (1.0 - 1.0 / lambda) * (1.0 - c / lambda))
    } else {
        let decay = (1.0 - kappa).powi(horizon as i32);
        Ok(decay / lambda + c / (kappa * lambda) * (1.0 - decay))
    }
}

pub fn safety_lower_bound_kappa(
    c: f64,
    lambda: f64,
    kappa: f64,
    horizon: u32,
) -> Result<SafetyBound> {
    rho_kappa(c, lambda, kappa, horizon).map(SafetyBound::from_rho)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chebyshev_counts() {
        assert_eq!(nhat_count(0.001, 0.05, 0.005).unwrap(), 80);
        assert_eq!(nhat_count(0.006, 0.02, 0.005).unwrap(), 3000);
        assert_eq!(nhat_count(6.0, 0.05, 0.045).unwrap(), 53334);
        assert!(nhat_count(0.0, 0.05, 0.1).is_err());
        assert!(nhat_count(1.0, 0.05, 1.5).is_err());
    }

    #[test]
    fn chebyshev_ceiling_is_sufficient() {
        for &m in &[0.001, 0.01, 0.3, 6.0] {
            for &d in &[0.01, 0.02, 0.05, 0.1] {
                for &b in &[0.001, 0.005, 0.045, 0.5] {
                    let n = nhat_count(m, d, b).unwrap() as f64;
                    assert!(n * d * d * b >= m * (1.0 - 1e-12));
                    assert!((n - 1.0) * d * d * b < m * (1.0 + 1e-12) || n == 1.0);
                }
            }
        }
    }

    // Minimal counts from a 40-digit mpmath bisection on the same tail formula.
    #[test]
    fn case_study_counts_match_high_precision_oracle() {
        assert_eq!(
            scenario_sample_count(1.002e-6, 0.005, 12).unwrap(),
            24_096_742
        );
        assert_eq!(scenario_sample_count(1.7e-6, 0.095, 7).unwrap(), 6_986_683);
        assert_eq!(scenario_sample_count(1.2e-5, 0.005, 12).unwrap(), 2_012_073);
        assert_eq!(
            scenario_sample_count_kappa(1.002e-6, 0.005, 12, 10).unwrap(),
            28_147_143
        );
        assert_eq!(scenario_sample_count(0.05, 0.01, 3).unwrap(), 198);
        assert_eq!(scenario_sample_count(0.3, 0.2, 0).unwrap(), 5);
    }

    /// Tail by the term recurrence `t_{i+1} = t_i (N-i)/(i+1) e/(1-e)`, summed in order.
    fn recurrence_tail(n: u64, eps: f64, dims: u64) -> f64 {
        let mut term = (1.0 - eps).powf(n as f64);
        let mut sum = term;
        for i in 0..dims.min(n) {
            term *= (n - i) as f64 / (i + 1) as f64 * eps / (1.0 - eps);
            sum += term;
        }
        sum
    }

    #[test]
    fn returned_count_is_minimal() {
        for &(eps, beta, dims) in &[
            (1.002e-6, 0.005, 12u64),
            (1.7e-6, 0.095, 7),
            (1.2e-5, 0.005, 12),
            (1e-3, 0.01, 5),
            (0.2, 0.05, 2),
        ] {
            let n = scenario_sample_count(eps, beta, dims).unwrap();
            assert!(recurrence_tail(n, eps, dims) <= beta * (1.0 + 1e-9));
            assert!(recurrence_tail(n - 1, eps, dims) > beta * (1.0 - 1e-9));
        }
    }

    #[test]
    fn log_tail_matches_exact_rationals() {
        use num::bigint::BigInt;
        use num::rational::BigRational;
        use num::{One, ToPrimitive, Zero};
        for &(p, q) in &[(1i64, 7i64), (3, 10), (1, 50), (9, 10)] {
            let e = BigRational::new(BigInt::from(p), BigInt::from(q));
            let one_minus = BigRational::one() - e.clone();
            for n in 1u64..=60 {
                for dims in [0u64, 1, 3, 12] {
                    let mut exact = BigRational::zero();
                    let mut choose = BigRational::one();
                    for i in 0..=dims.min(n) {
                        if i > 0 {
                            choose = choose * BigRational::from_integer(BigInt::from(n - i + 1))
                                / BigRational::from_integer(BigInt::from(i));
                        }
                        exact += choose.clone()
                            * num::pow(e.clone(), i as usize)
                            * num::pow(one_minus.clone(), (n - i) as usize);
                    }
                    let want = exact.to_f64().unwrap();
                    let got = binomial_tail(n, p as f64 / q as f64, dims);
                    assert!(
                        (got - want).abs() <= 1e-12 * want.max(1e-300)
                            || (got - want).abs() < 1e-300,
                        "n={n} dims={dims} eps={p}/{q}: {got} vs {want}"
                    );
                }
            }
        }
    }

    #[test]
    fn count_monotone_over_grid() {
        let eps_grid = [1e-4, 3e-4, 1e-3, 3e-3, 1e-2];
        let beta_grid = [1e-4, 1e-3, 1e-2, 0.1, 0.5];
        for dims in 0..6u64 {
            for w in eps_grid.windows(2) {
                for &beta in &beta_grid {
                    let a = scenario_sample_count(w[0], beta, dims).unwrap();
                    let b = scenario_sample_count(w[1], beta, dims).unwrap();
                    assert!(b <= a);
                }
            }
            for &eps in &eps_grid {
                for w in beta_grid.windows(2) {
                    let a = scenario_sample_count(eps, w[0], dims).unwrap();
                    let b = scenario_sample_count(eps, w[1], dims).unwrap();
                    assert!(b <= a);
                }
                let a = scenario_sample_count(eps, 0.01, dims).unwrap();
                let b = scenario_sample_count(eps, 0.01, dims + 1).unwrap();
                assert!(b >= a);
            }
        }
    }

    #[test]
    fn tail_non_increasing_in_n() {
        for &(eps, dims) in &[(1e-3, 4u64), (0.1, 2), (1.2e-5, 12)] {
            let mut prev = 1.0f64;
            let mut n = 1u64;
            while n < 50_000_000 {
                let t = log_binomial_tail(n, eps, dims);
                assert!(t <= prev + 1e-12, "n={n}");
                prev = t;
                n = n * 3 / 2 + 1;
            }
        }
    }

    #[test]
    fn case_study_counts_are_fast() {
        let start = std::time::Instant::now();
        scenario_sample_count(1.002e-6, 0.005, 12).unwrap();
        scenario_sample_count(1.7e-6, 0.095, 7).unwrap();
        scenario_sample_count(1.2e-5, 0.005, 12).unwrap();
        assert!(start.elapsed().as_secs_f64() < 1.0);
    }

    #[test]
    fn kappa_branches_at_the_boundary() {
        // On lambda = c / kappa the first branch is taken. The two closed forms
        // agree there only for a one-step horizon, so the discontinuity is real.
        let mut rng = crate::systems::RngStream::new(19, 0);
        let mut max_gap = 0.0f64;
        for _ in 0..100 {
            // Dyadic kappa keeps c / kappa == lambda exact in floating point.
            let kappa = [0.5, 0.25, 0.125, 0.0625][(rng.uniform() * 4.0) as usize];
            let lambda = 1.5 + 20.0 * rng.uniform();
            let c = kappa * lambda;
            let h = 1 + (rng.uniform() * 10.0) as u32;
            let first = 1.0 - (1.0 - 1.0 / lambda) * (1.0 - c / lambda);
            assert_eq!(rho_kappa(c, lambda, kappa, h).unwrap(), first);
            let decay = (1.0 - kappa).powi(h as i32);
            let second = decay / lambda + c / (kappa * lambda) * (1.0 - decay);
            if h == 1 {
                assert!((first - second).abs() <= 1e-9);
            }
            max_gap = max_gap.max((first - second).abs());
        }
        assert!(max_gap > 1e-3);
    }

    #[test]
    fn degenerate_eps_bar_one() {
        for dims in [0u64, 3, 12] {
            assert_eq!(scenario_sample_count(1.0, 0.5, dims).unwrap(), dims + 1);
        }
    }

    #[test]
    fn zero_eps_bar_is_infeasible() {
        assert!(matches!(
            scenario_sample_count(0.0, 0.1, 3),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn kappa_count_reduces_and_grows() {
        let base = scenario_sample_count(1e-3, 0.01, 5).unwrap();
        assert_eq!(scenario_sample_count_kappa(1e-3, 0.01, 5, 1).unwrap(), base);
        let mut prev = base;
        for m in 2..12 {
            let n = scenario_sample_count_kappa(1e-3, 0.01, 5, m).unwrap();
            assert!(n >= prev);
            prev = n;
        }
    }

    #[test]
    fn lemma_one_case_studies() {
        let rooms = LipschitzParams {
            state_bound: 3f64.sqrt() * 30.0,
            l1: 1.5,
            jac_x: 0.95,
            p_norm: 0.115,
            ..Default::default()
        };
        assert!((lipschitz_quadratic(&rooms).unwrap() - 28.98).abs() <= 0.01);
        let lane = LipschitzParams {
            state_bound: 12.21,
            l1: 1.4,
            jac_x: 1.0,
            p_norm: 0.5,
            ..Default::default()
        };
        assert!((lipschitz_quadratic(&lane).unwrap() - 29.3).abs() <= 0.05);
        let zero = LipschitzParams {
            p_norm: 0.0,
            ..lane
        };
        assert_eq!(lipschitz_quadratic(&zero).unwrap(), 0.0);
    }

    #[test]
    fn lemma_two_heater() {
        let p = LipschitzParams {
            state_bound: 30.0,
            l1: 1.1,
            jac_x: 1.0,
            jac_u: 1.0,
            p_norm: 0.5,
            pu_norm: 0.05,
            m: 1,
            ..Default::default()
        };
        let l = lipschitz_control(&p).unwrap();
        assert!((l.state_part - 49.5).abs() < 1e-9);
        assert!((l.input_part - 34.0).abs() < 1e-9);
        assert!((l.total - 60.05).abs() <= 0.05);
        assert!(l.total >= l.state_part && l.total >= l.input_part);
    }

    #[test]
    fn lemma_two_sqrt_m_survives() {
        let p = LipschitzParams {
            state_bound: 1.0,
            m: 1,
            ..Default::default()
        };
        assert_eq!(lipschitz_control(&p).unwrap().total, 1.0);
    }

    #[test]
    fn lemma_two_monotone() {
        let base = LipschitzParams {
            state_bound: 10.0,
            input_bound: 1.0,
            l1: 1.0,
            l2: 0.5,
            l3: 0.2,
            jac_x: 1.0,
            jac_u: 0.3,
            p_norm: 0.4,
            pu_norm: 0.1,
            m: 2,
        };
        let v0 = lipschitz_control(&base).unwrap().total;
        let bumps: [fn(&mut LipschitzParams); 9] = [
            |p| p.state_bound *= 1.5,
            |p| p.input_bound += 1.0,
            |p| p.l1 += 0.5,
            |p| p.l2 += 0.5,
            |p| p.l3 += 0.5,
            |p| p.jac_x += 0.5,
            |p| p.jac_u += 0.5,
            |p| p.p_norm += 0.5,
            |p| p.pu_norm += 0.5,
        ];
        for bump in bumps {
            let mut p = base;
            bump(&mut p);
            assert!(lipschitz_control(&p).unwrap().total >= v0);
        }
    }

    #[test]
    fn eps_bar_rejects_epsilon_above_lipschitz() {
        assert!(matches!(eps_bar(2.0, 1.0, 1), Err(Error::Config(_))));
        let e = eps_bar(0.29, 28.98, 3).unwrap();
        assert!((e - 1.002e-6).abs() < 1e-9);
    }

    #[test]
    fn linear_bound_examples() {
        assert_eq!(safety_lower_bound(0.0, 2.0, 7).raw, 0.5);
        let rooms = safety_lower_bound(0.2250, 8.6653, 3);
        assert!((rooms.raw - 0.8067).abs() < 1e-4);
        let heater = safety_lower_bound(0.87, 44.76, 9);
        assert!((heater.raw - 0.8027).abs() < 1e-4);
        let hopeless = safety_lower_bound(1.0, 1.5, 10);
        assert!(hopeless.raw < 0.0 && hopeless.clamped == 0.0);
    }

    #[test]
    fn kappa_bound_examples() {
        assert_eq!(safety_lower_bound_kappa(0.0, 2.0, 0.5, 4).unwrap().raw, 0.5);
        let second = rho_kappa(1.0, 2.0, 0.1, 2).unwrap();
        assert!((second - 1.355).abs() < 1e-12);
        assert_eq!(
            safety_lower_bound_kappa(1.0, 2.0, 0.1, 2).unwrap().clamped,
            0.0
        );
        assert!(rho_kappa(1.0, 2.0, 1.0, 2).is_err());
        assert!(rho_kappa(1.0, 2.0, 0.0, 2).is_err());
    }

    #[test]
    fn kappa_bound_never_worse_than_linear() {
        for &c in &[0.0, 0.1, 0.5, 2.0] {
            for &lambda in &[1.5, 3.0, 20.0] {
                for &kappa in &[0.05, 0.3, 0.9] {
                    for h in [1u32, 3, 9] {
                        let k = rho_kappa(c, lambda, kappa, h).unwrap();
                        assert!(k <= rho_linear(c, lambda, h) + 1e-12);
                    }
                }
            }
        }
    }
}
