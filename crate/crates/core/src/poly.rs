//! Dense multivariate polynomials over a graded-lex monomial basis.
//!
//! Barrier certificates and controller polynomials are both stored as a
//! coefficient vector aligned with a [`Basis`]. The basis fixes the monomial
//! order: ascending total degree, then ascending lexicographic order of the
//! exponent tuple. For `n = 2, k = 1` this gives `(1, x_2, x_1)`.

use std::cmp::Ordering;
use std::fmt;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Exponent tuple of a single monomial, one entry per variable.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MultiIndex(pub Vec<u32>);

impl MultiIndex {
    pub fn new(exponents: Vec<u32>) -> Self {
        MultiIndex(exponents)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn total_degree(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn exponents(&self) -> &[u32] {
        &self.0
    }
}

impl PartialOrd for MultiIndex {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Graded lexicographic order.
impl Ord for MultiIndex {
    fn cmp(&self, other: &Self) -> Ordering {
        self.total_degree()
            .cmp(&other.total_degree())
            .then_with(|| self.0.cmp(&other.0))
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{e}")?;
        }
        write!(f, ")")
    }
}

/// Ordered set of monomials in `n` variables of total degree at most `degree`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Basis {
    n: usize,
    degree: u32,
    indices: Vec<MultiIndex>,
}

/// Enumerates every monomial of total degree `<= k` in `n` variables, minus `zeroed`.
pub fn monomial_basis(n: usize, k: u32, zeroed: &[MultiIndex]) -> Result<Basis> {
    if n == 0 {
        return Err(Error::Argument("basis dimension must be at least 1".into()));
    }
    for z in zeroed {
        if z.dim() != n || z.total_degree() > k {
            return Err(Error::Config(format!(
                "zeroed coefficient index {z} is not a monomial of degree <= {k} in {n} variables"
            )));
        }
    }
    let mut indices = Vec::new();
    let mut current = vec![0u32; n];
    for total in 0..=k {
        compositions(&mut current, 0, total, &mut indices);
    }
    indices.sort();
    indices.retain(|idx| !zeroed.contains(idx));
    Ok(Basis {
        n,
        degree: k,
        indices,
    })
}

fn compositions(current: &mut [u32], pos: usize, remaining: u32, out: &mut Vec<MultiIndex>) {
    if pos + 1 == current.len() {
        current[pos] = remaining;
        out.push(MultiIndex(current.to_vec()));
        return;
    }
    for e in 0..=remaining {
        current[pos] = e;
        compositions(current, pos + 1, remaining - e, out);
    }
    current[pos] = 0;
}

impl Basis {
    /// Builds a basis from an explicit index list. Indices are re-sorted.
    pub fn from_indices(n: usize, mut indices: Vec<MultiIndex>) -> Result<Self> {
        if n == 0 {
            return Err(Error::Argument("basis dimension must be at least 1".into()));
        }
        if let Some(bad) = indices.iter().find(|idx| idx.dim() != n) {
            return Err(Error::Argument(format!(
                "index {bad} has {} exponents, expected {n}",
                bad.dim()
            )));
        }
        indices.sort();
        let before = indices.len();
        indices.dedup();
        if indices.len() != before {
            return Err(Error::Argument("duplicate monomial in basis".into()));
        }
        let degree = indices
            .iter()
            .map(MultiIndex::total_degree)
            .max()
            .unwrap_or(0);
        Ok(Basis { n, degree, indices })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn degree(&self) -> u32 {
        self.degree
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[MultiIndex] {
        &self.indices
    }

    pub fn position(&self, idx: &MultiIndex) -> Option<usize> {
        self.indices.binary_search(idx).ok()
    }

    /// Monomial values at `x`, aligned with the basis order.
    pub fn eval_row(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut row = vec![0.0; self.len()];
        self.fill_row(x, &mut row)?;
        Ok(row)
    }

    /// Writes the monomial values at `x` into `out` (length `self.len()`).
    pub fn fill_row(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        self.check_dim(x)?;
        debug_assert_eq!(out.len(), self.len());
        let powers = PowerTable::new(x, self.degree);
        for (slot, idx) in out.iter_mut().zip(&self.indices) {
            *slot = powers.monomial(idx);
        }
        Ok(())
    }

    /// Adds `scale * row(x)` into `acc` without allocating the row.
    pub fn accumulate_row(&self, x: &[f64], scale: f64, acc: &mut [f64]) -> Result<()> {
        self.check_dim(x)?;
        let powers = PowerTable::new(x, self.degree);
        for (slot, idx) in acc.iter_mut().zip(&self.indices) {
            *slot += scale * powers.monomial(idx);
        }
        Ok(())
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n {
            return Err(Error::Argument(format!(
                "point has dimension {}, basis expects {}",
                x.len(),
                self.n
            )));
        }
        Ok(())
    }

    /// Writes the basis as CSV rows of exponent tuples under an `iota_1,...,iota_n` header.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record((1..=self.n).map(|d| format!("iota_{d}")))?;
        for idx in &self.indices {
            w.write_record(idx.0.iter().map(u32::to_string))?;
        }
        w.flush().map_err(|e| Error::io("writing basis csv", e))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let n = r.headers()?.len();
        let mut indices = Vec::new();
        for record in r.records() {
            let record = record?;
            let exps = record
                .iter()
                .map(|s| {
                    s.trim()
                        .parse::<u32>()
                        .map_err(|_| Error::Data(format!("bad exponent `{s}` in basis csv")))
                })
                .collect::<Result<Vec<_>>>()?;
            indices.push(MultiIndex(exps));
        }
        Basis::from_indices(n, indices)
    }
}

/// `powers[d][e] = x[d]^e` for `e <= degree`.
struct PowerTable {
    stride: usize,
    table: Vec<f64>,
}

impl PowerTable {
    fn new(x: &[f64], degree: u32) -> Self {
        let stride = degree as usize + 1;
        let mut table = vec![1.0; x.len() * stride];
        for (d, &xd) in x.iter().enumerate() {
            let row = &mut table[d * stride..(d + 1) * stride];
            for e in 1..stride {
                row[e] = row[e - 1] * xd;
            }
        }
        PowerTable { stride, table }
    }

    #[inline]
    fn monomial(&self, idx: &MultiIndex) -> f64 {
        idx.0
            .iter()
            .enumerate()
            .map(|(d, &e)| self.table[d * self.stride + e as usize])
            .product()
    }
}

/// Polynomial with dense coefficients over a [`Basis`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Polynomial {
    basis: Basis,
    coeffs: Vec<f64>,
}

impl Polynomial {
    pub fn new(basis: Basis, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != basis.len() {
            return Err(Error::Argument(format!(
                "{} coefficients for a basis of {} monomials",
                coeffs.len(),
                basis.len()
            )));
        }
        Ok(Polynomial { basis, coeffs })
    }

    pub fn zero(basis: Basis) -> Self {
        let coeffs = vec![0.0; basis.len()];
        Polynomial { basis, coeffs }
    }

    pub fn basis(&self) -> &Basis {
        &self.basis
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    pub fn degree(&self) -> u32 {
        self.basis.degree()
    }

    /// Coefficient of a monomial; zero when the monomial is not in the basis.
    pub fn coeff(&self, idx: &MultiIndex) -> f64 {
        self.basis.position(idx).map_or(0.0, |p| self.coeffs[p])
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        self.basis.check_dim(x)?;
        let powers = PowerTable::new(x, self.basis.degree);
        Ok(self
            .coeffs
            .iter()
            .zip(&self.basis.indices)
            .map(|(c, idx)| c * powers.monomial(idx))
            .sum())
    }

    /// Sum of absolute coefficient values. Equals the entrywise 1-norm of the
    /// symmetric Gram matrix that splits each coefficient evenly across the
    /// matrix entries producing its monomial.
    pub fn l1_norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c.abs()).sum()
    }

    /// Coefficients as a single CSV row in basis order.
    pub fn write_coeffs_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .has_headers(false)
            .from_writer(writer);
        w.write_record(self.coeffs.iter().map(f64::to_string))?;
        w.flush()
            .map_err(|e| Error::io("writing coefficient csv", e))?;
        Ok(())
    }
}

/// Evaluates `p` at `x`.
pub fn eval_poly(p: &Polynomial, x: &[f64]) -> Result<f64> {
    p.eval(x)
}

/// Monomial values of `basis` at `x`; `eval_poly(p, x) == dot(p.coeffs(), row)`.
pub fn eval_basis_row(basis: &Basis, x: &[f64]) -> Result<Vec<f64>> {
    basis.eval_row(x)
}
