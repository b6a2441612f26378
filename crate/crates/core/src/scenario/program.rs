//! Scenario programs as explicit linear programs `min cost.d` subject to `row.d <= rhs`.
//!
//! Every program shares the decision layout `d = [K, lambda, c, b, p, t]`:
//! the slack `K` that is minimised, the unsafe-set level `lambda`, the
//! per-step growth `c`, barrier coefficients `b`, controller coefficients `p`
//! (synthesis only) and auxiliary absolute values `t` for the norm caps.

use std::fmt;
use std::io::Write;

use rayon::prelude::*;

use super::dataset::TransitionDataset;
use super::polytope::InputPolytope;
use crate::bounds::{ConfidenceBudget, RhoMode};
use crate::error::{Error, Result};
use crate::poly::Basis;
use crate::systems::SafetySpec;

/// `lambda >= 1 + LAMBDA_MARGIN` stands in for the strict `lambda > 1`.
pub const LAMBDA_MARGIN: f64 = 1e-6;
pub const DEFAULT_K_MAX: f64 = 1e6;

/// Norm caps and the box on `K`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Caps {
    /// Bound on the sum of absolute barrier coefficients.
    pub barrier: Option<f64>,
    /// Bound on the sum of absolute controller coefficients over all inputs.
    pub controller: Option<f64>,
    pub k_max: f64,
}

impl Default for Caps {
    fn default() -> Self {
        Caps {
            barrier: None,
            controller: None,
            k_max: DEFAULT_K_MAX,
        }
    }
}

/// Slot assignment for the decision vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DecisionLayout {
    barrier_len: usize,
    controller_lens: Vec<usize>,
    barrier_aux: bool,
    controller_aux: bool,
}

impl DecisionLayout {
    pub const K: usize = 0;
    pub const LAMBDA: usize = 1;
    pub const C: usize = 2;

    pub fn new(barrier_len: usize, controller_lens: Vec<usize>, caps: &Caps) -> Self {
        let controller_aux = caps.controller.is_some() && controller_lens.iter().sum::<usize>() > 0;
        DecisionLayout {
            barrier_len,
            controller_lens,
            barrier_aux: caps.barrier.is_some(),
            controller_aux,
        }
    }

    pub fn barrier_len(&self) -> usize {
        self.barrier_len
    }

    pub fn controller_lens(&self) -> &[usize] {
        &self.controller_lens
    }

    pub fn controller_total(&self) -> usize {
        self.controller_lens.iter().sum()
    }

    pub fn barrier_slot(&self, e: usize) -> usize {
        3 + e
    }

    pub fn controller_slot(&self, l: usize, e: usize) -> usize {
        3 + self.barrier_len + self.controller_lens[..l].iter().sum::<usize>() + e
    }

    fn aux_start(&self) -> usize {
        3 + self.barrier_len + self.controller_total()
    }

    pub fn barrier_aux_slot(&self, e: usize) -> Option<usize> {
        self.barrier_aux.then(|| self.aux_start() + e)
    }

    pub fn controller_aux_slot(&self, k: usize) -> Option<usize> {
        let skip = if self.barrier_aux {
            self.barrier_len
        } else {
            0
        };
        self.controller_aux.then(|| self.aux_start() + skip + k)
    }

    pub fn len(&self) -> usize {
        let aux = if self.barrier_aux {
            self.barrier_len
        } else {
            0
        } + if self.controller_aux {
            self.controller_total()
        } else {
            0
        };
        self.aux_start() + aux
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn barrier<'a>(&self, d: &'a [f64]) -> &'a [f64] {
        &d[3..3 + self.barrier_len]
    }

    pub fn controller<'a>(&self, d: &'a [f64], l: usize) -> &'a [f64] {
        let start = self.controller_slot(l, 0);
        &d[start..start + self.controller_lens[l]]
    }

    /// Human-readable slot names, used in LP dumps and reports.
    pub fn names(&self, basis: &Basis, controller_bases: &[Basis]) -> Vec<String> {
        let mut names = vec!["K".to_string(), "lambda".into(), "c".into()];
        names.extend(basis.indices().iter().map(|i| format!("b{i}")));
        for (l, cb) in controller_bases.iter().enumerate() {
            names.extend(cb.indices().iter().map(|i| format!("p{}{i}", l + 1)));
        }
        if self.barrier_aux {
            names.extend(basis.indices().iter().map(|i| format!("t_b{i}")));
        }
        if self.controller_aux {
            for (l, cb) in controller_bases.iter().enumerate() {
                names.extend(cb.indices().iter().map(|i| format!("t_p{}{i}", l + 1)));
            }
        }
        names
    }
}

/// Which scenario constraint a row encodes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RowKind {
    /// Plain row of a hand-built LP.
    Generic,
    /// Nonnegativity of the barrier at a sample.
    Nonneg,
    /// Barrier at most one on the initial set.
    Initial,
    /// Barrier at least `lambda` on the unsafe set.
    Unsafe,
    /// Probability target `(1 + cH)/rho <= lambda`.
    Rho,
    /// Empirical expected growth bounded by `c`.
    Decrease,
    /// Empirical expected growth bounded by `kappa B + c`.
    Contraction,
    /// Controller value inside the input polytope, one row per half-space.
    Input(usize),
    CapPos,
    CapNeg,
    CapSum,
}

impl RowKind {
    /// Rows that depend on a sample and are subject to tightening.
    pub fn is_sample_row(self) -> bool {
        matches!(
            self,
            RowKind::Nonneg
                | RowKind::Initial
                | RowKind::Unsafe
                | RowKind::Decrease
                | RowKind::Contraction
                | RowKind::Input(_)
        )
    }
}

impl fmt::Display for RowKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RowKind::Generic => write!(f, "row"),
            RowKind::Nonneg => write!(f, "g1"),
            RowKind::Initial => write!(f, "g2"),
            RowKind::Unsafe => write!(f, "g3"),
            RowKind::Rho => write!(f, "g4"),
            RowKind::Decrease => write!(f, "g5bar"),
            RowKind::Contraction => write!(f, "g4bar"),
            RowKind::Input(q) => write!(f, "g{}", 6 + q),
            RowKind::CapPos => write!(f, "cap+"),
            RowKind::CapNeg => write!(f, "cap-"),
            RowKind::CapSum => write!(f, "capsum"),
        }
    }
}

/// Row provenance: the constraint kind and the sample (or coefficient) index.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RowTag {
    pub kind: RowKind,
    pub index: usize,
}

/// Linear program `min cost.d` s.t. `row_r.d <= rhs_r` and `lower <= d <= upper`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioLp {
    num_vars: usize,
    coeffs: Vec<f64>,
    rhs: Vec<f64>,
    tags: Vec<RowTag>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub cost: Vec<f64>,
    layout: Option<DecisionLayout>,
}

impl ScenarioLp {
    /// An LP with free variables and no rows.
    pub fn generic(num_vars: usize, cost: Vec<f64>) -> Self {
        assert_eq!(
            cost.len(),
            num_vars,
            "cost length must equal the variable count"
        );
        ScenarioLp {
            num_vars,
            coeffs: Vec::new(),
            rhs: Vec::new(),
            tags: Vec::new(),
            lower: vec![f64::NEG_INFINITY; num_vars],
            upper: vec![f64::INFINITY; num_vars],
            cost,
            layout: None,
        }
    }

    fn for_layout(layout: DecisionLayout, k_max: f64) -> Self {
        let d = layout.len();
        let mut cost = vec![0.0; d];
        cost[DecisionLayout::K] = 1.0;
        let mut lp = ScenarioLp::generic(d, cost);
        lp.set_bounds(DecisionLayout::K, -k_max, k_max);
        lp.set_bounds(DecisionLayout::LAMBDA, 1.0 + LAMBDA_MARGIN, f64::INFINITY);
        lp.set_bounds(DecisionLayout::C, 0.0, f64::INFINITY);
        for k in layout.aux_start()..d {
            lp.set_bounds(k, 0.0, f64::INFINITY);
        }
        lp.layout = Some(layout);
        lp
    }

    pub fn set_bounds(&mut self, var: usize, lo: f64, hi: f64) {
        self.lower[var] = lo;
        self.upper[var] = hi;
    }

    pub fn push_row(&mut self, kind: RowKind, index: usize, coeffs: &[f64], rhs: f64) {
        assert_eq!(
            coeffs.len(),
            self.num_vars,
            "row length must equal the variable count"
        );
        self.coeffs.extend_from_slice(coeffs);
        self.rhs.push(rhs);
        self.tags.push(RowTag { kind, index });
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    pub fn num_rows(&self) -> usize {
        self.rhs.len()
    }

    pub fn layout(&self) -> Option<&DecisionLayout> {
        self.layout.as_ref()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.coeffs[r * self.num_vars..(r + 1) * self.num_vars]
    }

    pub fn rhs(&self, r: usize) -> f64 {
        self.rhs[r]
    }

    pub fn tag(&self, r: usize) -> RowTag {
        self.tags[r]
    }

    pub fn tags(&self) -> &[RowTag] {
        &self.tags
    }

    /// `row_r.d - rhs_r`; positive means violated.
    pub fn residual(&self, r: usize, d: &[f64]) -> f64 {
        dot(self.row(r), d) - self.rhs[r]
    }

    /// Largest positive row or bound residual at `d`, with the offending row if it is a row.
    pub fn max_violation(&self, d: &[f64]) -> (f64, Option<usize>) {
        let (mut worst, mut at) = (0.0f64, None);
        for r in 0..self.num_rows() {
            let v = self.residual(r, d);
            if v > worst {
                worst = v;
                at = Some(r);
            }
        }
        for (k, &x) in d.iter().enumerate() {
            let v = (self.lower[k] - x).max(x - self.upper[k]);
            if v > worst {
                worst = v;
                at = None;
            }
        }
        (worst, at)
    }

    /// Copy with every sample row's right-hand side lowered by `amount`.
    /// Rows gated off by an indicator carry no constraint and are left alone.
    pub fn tighten(&self, amount: f64) -> ScenarioLp {
        let mut out = self.clone();
        for r in 0..out.num_rows() {
            let gated_off = out.row(r).iter().all(|v| *v == 0.0);
            if out.tags[r].kind.is_sample_row() && !gated_off {
                out.rhs[r] -= amount;
            }
        }
        out
    }

    /// Writes one line per row: `tag,i,rhs,coeff_0,...`.
    pub fn write_dump<W: Write>(&self, mut w: W) -> Result<()> {
        let err = |e| Error::io("writing LP dump", e);
        for r in 0..self.num_rows() {
            let tag = self.tags[r];
            write!(w, "{},{},{}", tag.kind, tag.index, self.rhs[r]).map_err(err)?;
            for v in self.row(r) {
                write!(w, ",{v}").map_err(err)?;
            }
            writeln!(w).map_err(err)?;
        }
        Ok(())
    }

    fn append(&mut self, block: RowBlock) {
        self.coeffs.extend(block.coeffs);
        self.rhs.extend(block.rhs);
        self.tags.extend(block.tags);
    }

    fn push_caps(&mut self, caps: &Caps) {
        let Some(layout) = self.layout.clone() else {
            return;
        };
        let d = self.num_vars;
        let mut row = vec![0.0; d];
        let mut add_group = |lp: &mut ScenarioLp, slots: Vec<(usize, usize)>, cap: f64| {
            for (k, &(var, aux)) in slots.iter().enumerate() {
                row.fill(0.0);
                row[var] = 1.0;
                row[aux] = -1.0;
                lp.push_row(RowKind::CapPos, k, &row, 0.0);
                row[var] = -1.0;
                lp.push_row(RowKind::CapNeg, k, &row, 0.0);
            }
            row.fill(0.0);
            for &(_, aux) in &slots {
                row[aux] = 1.0;
            }
            lp.push_row(RowKind::CapSum, 0, &row, cap);
        };
        if let Some(cap) = caps.barrier {
            let slots = (0..layout.barrier_len())
                .map(|e| (layout.barrier_slot(e), layout.barrier_aux_slot(e).unwrap()))
                .collect();
            add_group(self, slots, cap);
        }
        if let (Some(cap), true) = (caps.controller, layout.controller_total() > 0) {
            let mut slots = Vec::new();
            let mut k = 0;
            for (l, &len) in layout.controller_lens().iter().enumerate() {
                for e in 0..len {
                    slots.push((
                        layout.controller_slot(l, e),
                        layout.controller_aux_slot(k).unwrap(),
                    ));
                    k += 1;
                }
            }
            add_group(self, slots, cap);
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Default)]
struct RowBlock {
    coeffs: Vec<f64>,
    rhs: Vec<f64>,
    tags: Vec<RowTag>,
}

impl RowBlock {
    fn push(&mut self, kind: RowKind, index: usize, coeffs: &[f64], rhs: f64) {
        self.coeffs.extend_from_slice(coeffs);
        self.rhs.push(rhs);
        self.tags.push(RowTag { kind, index });
    }
}

/// Which expected-growth row to emit per sample.
#[derive(Clone, Copy)]
enum Growth {
    Decrease,
    Contraction(f64),
}

struct Controllers<'a> {
    bases: &'a [Basis],
    inputs: &'a InputPolytope,
}

fn check_common(
    data: &TransitionDataset,
    spec: &SafetySpec,
    basis: &Basis,
    caps: &Caps,
) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Argument(
            "scenario program needs at least one sample".into(),
        ));
    }
    if basis.dim() != spec.dim() || data.state_dim() != spec.dim() {
        return Err(Error::Argument(format!(
            "dimension mismatch: basis {}, dataset {}, specification {}",
            basis.dim(),
            data.state_dim(),
            spec.dim()
        )));
    }
    if !(caps.k_max > 0.0) {
        return Err(Error::Argument("K bound must be positive".into()));
    }
    for cap in [caps.barrier, caps.controller].into_iter().flatten() {
        if !(cap >= 0.0) {
            return Err(Error::Argument(format!(
                "norm cap {cap} must be non-negative"
            )));
        }
    }
    Ok(())
}

/// Emits the per-sample rows for samples in order, in parallel.
fn sample_rows(
    layout: &DecisionLayout,
    data: &TransitionDataset,
    basis: &Basis,
    delta: f64,
    growth: Growth,
    controllers: Option<&Controllers<'_>>,
) -> Result<Vec<RowBlock>> {
    let d = layout.len();
    let q = basis.len();
    let n = data.state_dim();
    let inv = 1.0 / data.n_hat() as f64;
    (0..data.len())
        .into_par_iter()
        .map(|i| {
            let mut block = RowBlock::default();
            let x = data.point(i);
            let bx = basis.eval_row(x)?;
            let mut mean = vec![0.0; q];
            for succ in data.successors_of(i).chunks(n) {
                basis.accumulate_row(succ, 1.0, &mut mean)?;
            }
            mean.iter_mut().for_each(|v| *v *= inv);

            let mut row = vec![0.0; d];
            // -B(x) - K <= 0
            row[DecisionLayout::K] = -1.0;
            for e in 0..q {
                row[layout.barrier_slot(e)] = -bx[e];
            }
            block.push(RowKind::Nonneg, i, &row, 0.0);

            // 1_in(x) B(x) - 1 - K <= 0
            let ind = if data.in_initial(i) { 1.0 } else { 0.0 };
            for e in 0..q {
                row[layout.barrier_slot(e)] = ind * bx[e];
            }
            block.push(RowKind::Initial, i, &row, 1.0);

            // -B(x) + lambda - K <= 0 on the unsafe set. Read literally, the
            // indicator would leave `lambda - K <= 0` everywhere else and force
            // K > 1, so the whole row is gated and stays all-zero off the set.
            if data.in_unsafe(i) {
                for e in 0..q {
                    row[layout.barrier_slot(e)] = -bx[e];
                }
                row[DecisionLayout::LAMBDA] = 1.0;
                block.push(RowKind::Unsafe, i, &row, 0.0);
                row[DecisionLayout::LAMBDA] = 0.0;
            } else {
                block.push(RowKind::Unsafe, i, &vec![0.0; d], 0.0);
            }

            // mean B(x+) - s B(x) [+ sum_l (u_l - P_l(x))] - c + delta - K <= 0
            let (kind, scale) = match growth {
                Growth::Decrease => (RowKind::Decrease, 1.0),
                Growth::Contraction(kappa) => (RowKind::Contraction, kappa),
            };
            for e in 0..q {
                row[layout.barrier_slot(e)] = mean[e] - scale * bx[e];
            }
            row[DecisionLayout::C] = -1.0;
            let mut rhs = -delta;
            let mut ctrl_rows = Vec::new();
            if let Some(ctrl) = controllers {
                let u = data.input(i);
                rhs -= u.iter().sum::<f64>();
                for (l, cb) in ctrl.bases.iter().enumerate() {
                    let pr = cb.eval_row(x)?;
                    for (e, v) in pr.iter().enumerate() {
                        row[layout.controller_slot(l, e)] = -v;
                    }
                    ctrl_rows.push(pr);
                }
            }
            block.push(kind, i, &row, rhs);

            // A [P_l(x)]_l - b - K <= 0
            if let Some(ctrl) = controllers {
                row.fill(0.0);
                row[DecisionLayout::K] = -1.0;
                for (qi, (arow, &b)) in ctrl.inputs.a().iter().zip(ctrl.inputs.b()).enumerate() {
                    for (l, pr) in ctrl_rows.iter().enumerate() {
                        for (e, v) in pr.iter().enumerate() {
                            row[layout.controller_slot(l, e)] = arow[l] * v;
                        }
                    }
                    block.push(RowKind::Input(qi), i, &row, b);
                }
            }
            Ok(block)
        })
        .collect()
}

fn rho_row(lp: &mut ScenarioLp, rho: f64, horizon: u32) {
    // (1 + cH)/rho - lambda - K <= 0
    let mut row = vec![0.0; lp.num_vars()];
    row[DecisionLayout::K] = -1.0;
    row[DecisionLayout::LAMBDA] = -1.0;
    row[DecisionLayout::C] = horizon as f64 / rho;
    lp.push_row(RowKind::Rho, 0, &row, -1.0 / rho);
}

fn fixed_rho(budget: &ConfidenceBudget) -> Result<Option<f64>> {
    match budget.rho {
        RhoMode::Fixed(rho) if rho > 0.0 && rho <= 1.0 => Ok(Some(rho)),
        RhoMode::Fixed(rho) => Err(Error::Argument(format!("rho = {rho} is outside (0,1]"))),
        RhoMode::Auto => Ok(None),
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta.is_finite() {
        Ok(())
    } else {
        Err(Error::Argument(format!("delta = {delta} must be positive")))
    }
}

/// Verification program: rows g1, g2, g3 and the empirical growth row per
/// sample, the probability row once (omitted when rho is automatic), and the norm-cap rows.
pub fn build_verification_lp(
    data: &TransitionDataset,
    spec: &SafetySpec,
    basis: &Basis,
    budget: &ConfidenceBudget,
    caps: &Caps,
) -> Result<ScenarioLp> {
    check_common(data, spec, basis, caps)?;
    check_delta(budget.delta)?;
    let rho = fixed_rho(budget)?;
    let layout = DecisionLayout::new(basis.len(), Vec::new(), caps);
    let blocks = sample_rows(&layout, data, basis, budget.delta, Growth::Decrease, None)?;
    let mut lp = ScenarioLp::for_layout(layout, caps.k_max);
    if let Some(rho) = rho {
        rho_row(&mut lp, rho, spec.horizon);
    }
    lp.push_caps(caps);
    blocks.into_iter().for_each(|b| lp.append(b));
    Ok(lp)
}

/// Synthesis program: the verification rows with the controller coupling in
/// the growth row, plus one row per input half-space and sample.
pub fn build_synthesis_lp(
    data: &TransitionDataset,
    spec: &SafetySpec,
    basis: &Basis,
    controller_bases: &[Basis],
    inputs: &InputPolytope,
    budget: &ConfidenceBudget,
    caps: &Caps,
) -> Result<ScenarioLp> {
    check_common(data, spec, basis, caps)?;
    check_delta(budget.delta)?;
    let m = data.input_dim();
    if m == 0 {
        return Err(Error::Argument(
            "synthesis needs a dataset with inputs".into(),
        ));
    }
    if controller_bases.len() != m || inputs.dim() != m {
        return Err(Error::Argument(format!(
            "dataset has {m} inputs but {} controller bases and an input set of dimension {}",
            controller_bases.len(),
            inputs.dim()
        )));
    }
    if controller_bases.iter().any(|cb| cb.dim() != spec.dim()) {
        return Err(Error::Argument(
            "controller basis dimension differs from the state dimension".into(),
        ));
    }
    let rho = fixed_rho(budget)?;
    let layout = DecisionLayout::new(
        basis.len(),
        controller_bases.iter().map(Basis::len).collect(),
        caps,
    );
    let ctrl = Controllers {
        bases: controller_bases,
        inputs,
    };
    let blocks = sample_rows(
        &layout,
        data,
        basis,
        budget.delta,
        Growth::Decrease,
        Some(&ctrl),
    )?;
    let mut lp = ScenarioLp::for_layout(layout, caps.k_max);
    if let Some(rho) = rho {
        rho_row(&mut lp, rho, spec.horizon);
    }
    lp.push_caps(caps);
    blocks.into_iter().for_each(|b| lp.append(b));
    Ok(lp)
}

/// Fixed-kappa program: rows g1, g2, g3 and the contraction row per sample; no probability row.
pub fn build_kappa_lp(
    data: &TransitionDataset,
    spec: &SafetySpec,
    basis: &Basis,
    kappa: f64,
    delta: f64,
    caps: &Caps,
) -> Result<ScenarioLp> {
    check_common(data, spec, basis, caps)?;
    check_delta(delta)?;
    if !(kappa > 0.0 && kappa < 1.0) {
        return Err(Error::Argument(format!("kappa = {kappa} is outside (0,1)")));
    }
    let layout = DecisionLayout::new(basis.len(), Vec::new(), caps);
    let blocks = sample_rows(
        &layout,
        data,
        basis,
        delta,
        Growth::Contraction(kappa),
        None,
    )?;
    let mut lp = ScenarioLp::for_layout(layout, caps.k_max);
    lp.push_caps(caps);
    blocks.into_iter().for_each(|b| lp.append(b));
    Ok(lp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly::monomial_basis;
    use crate::scenario::dataset::collect_dataset;
    use crate::systems::{builtin_system, Aabb, AffineSystem, Region, RngStream};
    use proptest::prelude::*;

    fn line_spec() -> SafetySpec {
        let r = |iv: &[(f64, f64)]| -> Region {
            Region::new(
                iv.iter()
                    .map(|&p| Aabb::from_intervals(&[p]).unwrap())
                    .collect(),
            )
            .unwrap()
        };
        SafetySpec::new(
            r(&[(-1.0, 1.0)]),
            r(&[(-0.1, 0.1)]),
            r(&[(0.8, 1.0), (-1.0, -0.8)]),
            10,
        )
        .unwrap()
    }

    fn budget(rho: RhoMode) -> ConfidenceBudget {
        ConfidenceBudget {
            beta: 0.01,
            beta_s: 0.01,
            delta: 0.05,
            m_hat: 0.01,
            epsilon: 0.01,
            rho,
            tighten: false,
        }
    }

    fn toy_data(n_samples: usize, seed: u64) -> TransitionDataset {
        let sys = AffineSystem::scalar(0.5, 0.01);
        collect_dataset(&sys, &line_spec(), None, n_samples, 4, seed).unwrap()
    }

    /// Barrier value by explicit `powi` products, independent of the basis row code.
    fn naive_b(basis: &Basis, coeffs: &[f64], x: &[f64]) -> f64 {
        basis
            .indices()
            .iter()
            .zip(coeffs)
            .map(|(idx, c)| {
                c * idx
                    .exponents()
                    .iter()
                    .zip(x)
                    .map(|(&e, &v)| v.powi(e as i32))
                    .product::<f64>()
            })
            .sum()
    }

    fn random_d(rng: &mut RngStream, len: usize) -> Vec<f64> {
        (0..len).map(|_| 4.0 * rng.uniform() - 2.0).collect()
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-12 * (1.0 + a.abs().max(b.abs()))
    }

    /// Direct evaluation of the scenario g-functions for sample `i`.
    fn direct_g(
        data: &TransitionDataset,
        basis: &Basis,
        layout: &DecisionLayout,
        d: &[f64],
        i: usize,
        delta: f64,
        kappa: Option<f64>,
    ) -> [f64; 4] {
        let b = layout.barrier(d);
        let (k, lambda, c) = (d[0], d[1], d[2]);
        let x = data.point(i);
        let bx = naive_b(basis, b, x);
        let mean = (0..data.n_hat())
            .map(|j| naive_b(basis, b, data.successor(i, j)))
            .sum::<f64>()
            / data.n_hat() as f64;
        let ind_in = if data.in_initial(i) { 1.0 } else { 0.0 };
        let g3 = if data.in_unsafe(i) {
            -bx + lambda - k
        } else {
            0.0
        };
        [
            -bx - k,
            ind_in * bx - 1.0 - k,
            g3,
            mean - kappa.unwrap_or(1.0) * bx - c + delta - k,
        ]
    }

    fn rows_of(lp: &ScenarioLp, kind: RowKind) -> Vec<usize> {
        (0..lp.num_rows())
            .filter(|&r| lp.tag(r).kind == kind)
            .collect()
    }

    #[test]
    fn verification_row_count() {
        let data = toy_data(25, 1);
        let basis = monomial_basis(1, 2, &[]).unwrap();
        let lp = build_verification_lp(
            &data,
            &line_spec(),
            &basis,
            &budget(RhoMode::Fixed(0.2)),
            &Caps::default(),
        )
        .unwrap();
        assert_eq!(lp.num_rows(), 4 * 25 + 1);
        let auto = build_verification_lp(
            &data,
            &line_spec(),
            &basis,
            &budget(RhoMode::Auto),
            &Caps::default(),
        )
        .unwrap();
        assert_eq!(auto.num_rows(), 4 * 25);
        let capped = Caps {
            barrier: Some(1.0),
            ..Caps::default()
        };
        let lp = build_verification_lp(
            &data,
            &line_spec(),
            &basis,
            &budget(RhoMode::Fixed(0.2)),
            &capped,
        )
        .unwrap();
        assert_eq!(lp.num_rows(), 4 * 25 + 1 + 2 * 3 + 1);
        assert_eq!(lp.num_vars(), 3 + 3 + 3);
    }

    #[test]
    fn verification_rows_match_direct_evaluation() {
        let data = toy_data(3, 2);
        let spec = line_spec();
        let basis = monomial_basis(1, 4, &[]).unwrap();
        let rho = 0.2;
        let lp = build_verification_lp(
            &data,
            &spec,
            &basis,
            &budget(RhoMode::Fixed(rho)),
            &Caps::default(),
        )
        .unwrap();
        let layout = lp.layout().unwrap().clone();
        let mut rng = RngStream::new(77, 0);
        for _ in 0..20 {
            let d = random_d(&mut rng, lp.num_vars());
            for r in 0..lp.num_rows() {
                let tag = lp.tag(r);
                let got = lp.residual(r, &d);
                let want = match tag.kind {
                    RowKind::Rho => (1.0 + d[2] * spec.horizon as f64) / rho - d[1] - d[0],
                    RowKind::Nonneg => {
                        direct_g(&data, &basis, &layout, &d, tag.index, 0.05, None)[0]
                    }
                    RowKind::Initial => {
                        direct_g(&data, &basis, &layout, &d, tag.index, 0.05, None)[1]
                    }
                    RowKind::Unsafe => {
                        direct_g(&data, &basis, &layout, &d, tag.index, 0.05, None)[2]
                    }
                    RowKind::Decrease => {
                        direct_g(&data, &basis, &layout, &d, tag.index, 0.05, None)[3]
                    }
                    other => panic!("unexpected row {other}"),
                };
                assert!(
                    close(got, want),
                    "{} {}: {got} vs {want}",
                    tag.kind,
                    tag.index
                );
            }
        }
    }

    #[test]
    fn membership_rows_on_three_rooms() {
        let sys = builtin_system("three_rooms").unwrap();
        let cube = |lo: f64, hi: f64| Region::single(Aabb::from_intervals(&[(lo, hi); 3]).unwrap());
        let spec =
            SafetySpec::new(cube(17.0, 30.0), cube(17.0, 20.0), cube(27.0, 30.0), 3).unwrap();
        let data = collect_dataset(sys.as_ref(), &spec, None, 200, 2, 4).unwrap();
        let basis = monomial_basis(3, 2, &[]).unwrap();
        let lp = build_verification_lp(
            &data,
            &spec,
            &basis,
            &budget(RhoMode::Auto),
            &Caps::default(),
        )
        .unwrap();
        let layout = lp.layout().unwrap();
        let mut seen_in = false;
        for r in rows_of(&lp, RowKind::Initial) {
            let i = lp.tag(r).index;
            let b = layout.barrier(lp.row(r));
            if data.in_initial(i) {
                seen_in = true;
                assert!(b.iter().any(|v| *v != 0.0));
            } else {
                assert!(b.iter().all(|v| *v == 0.0));
                assert_eq!(lp.row(r)[0], -1.0);
                assert_eq!(lp.rhs(r), 1.0);
            }
        }
        assert!(seen_in);
        let mut rng = RngStream::new(5, 5);
        let d = random_d(&mut rng, lp.num_vars());
        for r in 0..lp.num_rows() {
            let tag = lp.tag(r);
            let g = direct_g(&data, &basis, layout, &d, tag.index, 0.05, None);
            let want = match tag.kind {
                RowKind::Nonneg => g[0],
                RowKind::Initial => g[1],
                RowKind::Unsafe => g[2],
                RowKind::Decrease => g[3],
                _ => continue,
            };
            assert!(close(lp.residual(r, &d), want));
        }
    }

    #[test]
    fn provenance_covers_every_sample_once() {
        let data = toy_data(10, 3);
        let basis = monomial_basis(1, 2, &[]).unwrap();
        let lp = build_verification_lp(
            &data,
            &line_spec(),
            &basis,
            &budget(RhoMode::Fixed(0.5)),
            &Caps::default(),
        )
        .unwrap();
        for kind in [
            RowKind::Nonneg,
            RowKind::Initial,
            RowKind::Unsafe,
            RowKind::Decrease,
        ] {
            let mut idx: Vec<usize> = rows_of(&lp, kind)
                .iter()
                .map(|&r| lp.tag(r).index)
                .collect();
            idx.sort_unstable();
            assert_eq!(idx, (0..10).collect::<Vec<_>>());
        }
        assert_eq!(rows_of(&lp, RowKind::Rho).len(), 1);
    }

    #[test]
    fn zero_barrier_point_is_feasible() {
        let data = toy_data(40, 4);
        let basis = monomial_basis(1, 2, &[]).unwrap();
        let rho = 0.2;
        let b = budget(RhoMode::Fixed(rho));
        let lp = build_verification_lp(&data, &line_spec(), &basis, &b, &Caps::default()).unwrap();
        let mut d = vec![0.0; lp.num_vars()];
        d[1] = 2.0;
        // With B = 0, lambda = 2 and c = 0 the binding rows are g3 (K >= 2), g4 and g5bar (K >= delta).
        d[0] = (1.0 / rho - 2.0).max(2.0).max(b.delta);
        assert!(lp.max_violation(&d).0 <= 1e-12);
    }

    #[test]
    fn kappa_rows() {
        let data = toy_data(6, 5);
        let spec = line_spec();
        let basis = monomial_basis(1, 3, &[]).unwrap();
        let lp = build_kappa_lp(&data, &spec, &basis, 0.4, 0.05, &Caps::default()).unwrap();
        assert_eq!(lp.num_rows(), 4 * 6);
        assert!(rows_of(&lp, RowKind::Rho).is_empty());
        let layout = lp.layout().unwrap().clone();
        let mut rng = RngStream::new(8, 1);
        for _ in 0..20 {
            let d = random_d(&mut rng, lp.num_vars());
            for r in rows_of(&lp, RowKind::Contraction) {
                let g = direct_g(&data, &basis, &layout, &d, lp.tag(r).index, 0.05, Some(0.4));
                assert!(close(lp.residual(r, &d), g[3]));
            }
        }
        assert!(build_kappa_lp(&data, &spec, &basis, 1.0, 0.05, &Caps::default()).is_err());
        assert!(build_kappa_lp(&data, &spec, &basis, 0.0, 0.05, &Caps::default()).is_err());
    }

    #[test]
    fn kappa_limit_matches_verification_rows() {
        let data = toy_data(8, 6);
        let spec = line_spec();
        let basis = monomial_basis(1, 2, &[]).unwrap();
        let ver = build_verification_lp(
            &data,
            &spec,
            &basis,
            &budget(RhoMode::Auto),
            &Caps::default(),
        )
        .unwrap();
        let kap =
            build_kappa_lp(&data, &spec, &basis, 1.0 - 1e-15, 0.05, &Caps::default()).unwrap();
        assert_eq!(ver.num_rows(), kap.num_rows());
        for r in 0..ver.num_rows() {
            assert_eq!(ver.rhs(r), kap.rhs(r));
            for (a, b) in ver.row(r).iter().zip(kap.row(r)) {
                assert!((a - b).abs() <= 1e-12, "row {r}: {a} vs {b}");
            }
        }
    }

    fn heater_data(n_samples: usize) -> (TransitionDataset, SafetySpec, InputPolytope) {
        let sys = builtin_system("heater").unwrap();
        let iv = |lo: f64, hi: f64| Region::single(Aabb::from_intervals(&[(lo, hi)]).unwrap());
        let spec = SafetySpec::new(iv(1.0, 50.0), iv(19.5, 20.0), iv(46.0, 50.0), 9).unwrap();
        let u = InputPolytope::from_box(&[0.0], &[1.0]).unwrap();
        let data = collect_dataset(sys.as_ref(), &spec, Some(&u), n_samples, 3, 9).unwrap();
        (data, spec, u)
    }

    #[test]
    fn synthesis_rows_and_count() {
        let (data, spec, u) = heater_data(5);
        let basis = monomial_basis(1, 4, &[]).unwrap();
        let cb = vec![monomial_basis(1, 2, &[]).unwrap()];
        let b = budget(RhoMode::Fixed(0.2));
        let lp = build_synthesis_lp(&data, &spec, &basis, &cb, &u, &b, &Caps::default()).unwrap();
        assert_eq!(lp.num_rows(), 4 * 5 + 1 + 2 * 5);
        let layout = lp.layout().unwrap().clone();
        let mut rng = RngStream::new(3, 3);
        for _ in 0..20 {
            let d = random_d(&mut rng, lp.num_vars());
            let p = layout.controller(&d, 0);
            for r in 0..lp.num_rows() {
                let tag = lp.tag(r);
                let got = lp.residual(r, &d);
                let i = tag.index;
                let g = direct_g(&data, &basis, &layout, &d, i, b.delta, None);
                let px = naive_b(&cb[0], p, data.point(i));
                let want = match tag.kind {
                    RowKind::Rho => (1.0 + d[2] * 9.0) / 0.2 - d[1] - d[0],
                    RowKind::Nonneg => g[0],
                    RowKind::Initial => g[1],
                    RowKind::Unsafe => g[2],
                    RowKind::Decrease => g[3] + (data.input(i)[0] - px),
                    RowKind::Input(q) => u.a()[q][0] * px - u.b()[q] - d[0],
                    other => panic!("unexpected row {other}"),
                };
                assert!(close(got, want), "{} {i}: {got} vs {want}", tag.kind);
            }
        }
    }

    #[test]
    fn synthesis_with_zero_controller_reduces_to_verification() {
        let (data, spec, u) = heater_data(6);
        let basis = monomial_basis(1, 2, &[]).unwrap();
        let cb = vec![monomial_basis(1, 1, &[]).unwrap()];
        let b = budget(RhoMode::Fixed(0.3));
        let syn = build_synthesis_lp(&data, &spec, &basis, &cb, &u, &b, &Caps::default()).unwrap();
        let ver = build_verification_lp(&data, &spec, &basis, &b, &Caps::default()).unwrap();
        let mut rng = RngStream::new(4, 4);
        let dv = random_d(&mut rng, ver.num_vars());
        let mut ds = vec![0.0; syn.num_vars()];
        ds[..ver.num_vars()].copy_from_slice(&dv);
        let ver_rows: Vec<usize> = (0..ver.num_rows()).collect();
        let syn_rows: Vec<usize> = (0..syn.num_rows())
            .filter(|&r| !matches!(syn.tag(r).kind, RowKind::Input(_)))
            .collect();
        assert_eq!(ver_rows.len(), syn_rows.len());
        for (&rv, &rs) in ver_rows.iter().zip(&syn_rows) {
            assert_eq!(ver.tag(rv), syn.tag(rs));
            let extra = if syn.tag(rs).kind == RowKind::Decrease {
                data.input(syn.tag(rs).index)[0]
            } else {
                0.0
            };
            assert!(close(syn.residual(rs, &ds), ver.residual(rv, &dv) + extra));
        }
    }

    #[test]
    fn synthesis_rejects_mismatched_inputs() {
        let data = toy_data(3, 1);
        let u = InputPolytope::from_box(&[0.0], &[1.0]).unwrap();
        let basis = monomial_basis(1, 2, &[]).unwrap();
        let cb = vec![basis.clone()];
        let err = build_synthesis_lp(
            &data,
            &line_spec(),
            &basis,
            &cb,
            &u,
            &budget(RhoMode::Auto),
            &Caps::default(),
        );
        assert!(err.is_err());
    }

    #[test]
    fn cap_rows_bound_absolute_sum() {
        let data = toy_data(5, 7);
        let basis = monomial_basis(1, 2, &[]).unwrap();
        let caps = Caps {
            barrier: Some(0.5),
            ..Caps::default()
        };
        let lp = build_verification_lp(&data, &line_spec(), &basis, &budget(RhoMode::Auto), &caps)
            .unwrap();
        let layout = lp.layout().unwrap().clone();
        let mut d = vec![0.0; lp.num_vars()];
        d[3] = 0.3;
        d[4] = -0.2;
        d[layout.barrier_aux_slot(0).unwrap()] = 0.3;
        d[layout.barrier_aux_slot(1).unwrap()] = 0.2;
        let cap_ok = (0..lp.num_rows())
            .filter(|&r| {
                matches!(
                    lp.tag(r).kind,
                    RowKind::CapPos | RowKind::CapNeg | RowKind::CapSum
                )
            })
            .all(|r| lp.residual(r, &d) <= 1e-15);
        assert!(cap_ok);
        d[5] = 0.1;
        d[layout.barrier_aux_slot(2).unwrap()] = 0.1;
        let sum_row = rows_of(&lp, RowKind::CapSum)[0];
        assert!(lp.residual(sum_row, &d) > 0.0);
    }

    #[test]
    fn tighten_lowers_sample_rows_only() {
        let data = toy_data(5, 8);
        let basis = monomial_basis(1, 2, &[]).unwrap();
        let caps = Caps {
            barrier: Some(1.0),
            ..Caps::default()
        };
        let lp = build_verification_lp(
            &data,
            &line_spec(),
            &basis,
            &budget(RhoMode::Fixed(0.2)),
            &caps,
        )
        .unwrap();
        assert_eq!(lp.tighten(0.0), lp);
        let t = lp.tighten(0.1);
        for r in 0..lp.num_rows() {
            let gated_off = lp.row(r).iter().all(|v| *v == 0.0);
            let want = if lp.tag(r).kind.is_sample_row() && !gated_off {
                lp.rhs(r) - 0.1
            } else {
                lp.rhs(r)
            };
            assert_eq!(t.rhs(r), want);
        }
    }

    #[test]
    fn dump_format() {
        let data = toy_data(2, 9);
        let basis = monomial_basis(1, 1, &[]).unwrap();
        let lp = build_verification_lp(
            &data,
            &line_spec(),
            &basis,
            &budget(RhoMode::Fixed(0.5)),
            &Caps::default(),
        )
        .unwrap();
        let mut out = Vec::new();
        lp.write_dump(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), lp.num_rows());
        assert!(lines[0].starts_with("g4,0,-2,"));
        assert_eq!(lines[0].split(',').count(), 3 + lp.num_vars());
        assert!(lines[1].starts_with("g1,0,0,"));
    }

    #[test]
    fn builders_are_deterministic() {
        let data = toy_data(30, 10);
        let basis = monomial_basis(1, 3, &[]).unwrap();
        let b = budget(RhoMode::Fixed(0.2));
        let a = build_verification_lp(&data, &line_spec(), &basis, &b, &Caps::default()).unwrap();
        let c = build_verification_lp(&data, &line_spec(), &basis, &b, &Caps::default()).unwrap();
        assert_eq!(a, c);
    }

    proptest! {
        #[test]
        fn tightened_feasible_points_stay_feasible(amount in 0.0f64..0.5, seed in 0u64..1000) {
            let data = toy_data(5, 11);
            let basis = monomial_basis(1, 2, &[]).unwrap();
            let lp = build_verification_lp(&data, &line_spec(), &basis, &budget(RhoMode::Fixed(0.2)), &Caps::default()).unwrap();
            let t = lp.tighten(amount);
            let mut rng = RngStream::new(seed, 0);
            let mut d: Vec<f64> = (0..lp.num_vars()).map(|_| rng.uniform() - 0.5).collect();
            d[1] = 1.5;
            d[2] = d[2].abs();
            // Pick K just large enough for the tightened program.
            d[0] = 0.0;
            let need = (0..t.num_rows()).map(|r| t.residual(r, &d)).fold(f64::NEG_INFINITY, f64::max);
            d[0] = need.max(-1e6);
            prop_assert!(t.max_violation(&d).0 <= 1e-9);
            prop_assert!(lp.max_violation(&d).0 <= 1e-9);
        }
    }
}
