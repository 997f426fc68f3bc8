//! Multi-index combinatorics and polynomials of bounded degree.
//!
//! Multi-indices are ordered graded-lexicographically (total degree first,
//! then lexicographic with the first coordinate strongest), which fixes a
//! deterministic basis for coefficient vectors everywhere in the crate.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::ser::SerializeStruct;
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};

/// A multi-index (α₁,…,α_n) with its total order |α| cached.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MultiIndex {
    entries: Vec<u32>,
    order: u32,
}

impl Serialize for MultiIndex {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.entries.serialize(serializer)
    }
}

impl MultiIndex {
    pub fn new(entries: Vec<u32>) -> Self {
        assert!(!entries.is_empty(), "multi-index needs dimension >= 1");
        let order = entries.iter().sum();
        Self { entries, order }
    }

    pub fn zero(n: usize) -> Self {
        Self::new(vec![0; n])
    }

    pub fn dim(&self) -> usize {
        self.entries.len()
    }

    /// |α| = Σ αᵢ
    pub fn order(&self) -> u32 {
        self.order
    }

    pub fn entries(&self) -> &[u32] {
        &self.entries
    }

    pub fn entry(&self, i: usize) -> u32 {
        self.entries[i]
    }

    /// Componentwise sum α + β.
    pub fn add(&self, other: &MultiIndex) -> MultiIndex {
        assert_eq!(self.dim(), other.dim());
        MultiIndex::new(
            self.entries
                .iter()
                .zip(&other.entries)
                .map(|(a, b)| a + b)
                .collect(),
        )
    }

    /// True when β ≤ γ componentwise (self is β).
    pub fn le_componentwise(&self, other: &MultiIndex) -> bool {
        self.dim() == other.dim()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|(b, g)| b <= g)
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, e) in self.entries.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{e}")?;
        }
        write!(f, ")")
    }
}

impl Ord for MultiIndex {
    fn cmp(&self, other: &Self) -> Ordering {
        self.order
            .cmp(&other.order)
            .then_with(|| other.entries.cmp(&self.entries))
    }
}

impl PartialOrd for MultiIndex {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// All α with |α| ≤ max_degree in graded-lex order.
///
/// `max_degree = -1` encodes the empty polynomial space (m = 0 case).
pub fn enumerate(n: usize, max_degree: i32) -> Vec<MultiIndex> {
    assert!(n >= 1);
    let mut out = Vec::new();
    if max_degree < 0 {
        return out;
    }
    for degree in 0..=(max_degree as u32) {
        let mut prefix = Vec::with_capacity(n);
        push_degree(n, degree, &mut prefix, &mut out);
    }
    out
}

fn push_degree(n: usize, remaining: u32, prefix: &mut Vec<u32>, out: &mut Vec<MultiIndex>) {
    if prefix.len() == n - 1 {
        prefix.push(remaining);
        out.push(MultiIndex::new(prefix.clone()));
        prefix.pop();
        return;
    }
    // lex order with the leading coordinate strongest: largest first entry first
    for a in (0..=remaining).rev() {
        prefix.push(a);
        push_degree(n, remaining - a, prefix, out);
        prefix.pop();
    }
}

fn binom_u64(n: u64, k: u64) -> Result<u64> {
    if k > n {
        return Ok(0);
    }
    let k = k.min(n - k);
    let mut acc: u64 = 1;
    for i in 0..k {
        acc = acc
            .checked_mul(n - i)
            .ok_or_else(|| Error::Overflow(format!("binomial({n},{k})")))?;
        acc /= i + 1;
    }
    Ok(acc)
}

/// N_m = Σ_{j=0}^{m-1} C(j+n-1, n-1): dimension of polynomials of degree ≤ m-1
/// in n variables.
pub fn solution_space_dim(n: usize, m: u32) -> Result<usize> {
    assert!(n >= 1);
    let mut total: u64 = 0;
    for j in 0..m as u64 {
        let c = binom_u64(j + n as u64 - 1, n as u64 - 1)?;
        total = total
            .checked_add(c)
            .ok_or_else(|| Error::Overflow("solution_space_dim".into()))?;
    }
    usize::try_from(total).map_err(|_| Error::Overflow("solution_space_dim".into()))
}

/// α! = Π αᵢ!
pub fn factorial(alpha: &MultiIndex) -> Result<u64> {
    let mut acc: u64 = 1;
    for &a in alpha.entries() {
        for i in 2..=a as u64 {
            acc = acc
                .checked_mul(i)
                .ok_or_else(|| Error::Overflow(format!("factorial of {alpha}")))?;
        }
    }
    Ok(acc)
}

/// x^α = Π xᵢ^{αᵢ}
pub fn monomial(alpha: &MultiIndex, x: &[f64]) -> f64 {
    debug_assert_eq!(alpha.dim(), x.len());
    alpha
        .entries()
        .iter()
        .zip(x)
        .map(|(&a, &xi)| xi.powi(a as i32))
        .product()
}

/// Product of componentwise binomials C(γᵢ, βᵢ); rejects β ≰ γ.
pub fn binom_multi(gamma: &MultiIndex, beta: &MultiIndex) -> Result<u64> {
    if !beta.le_componentwise(gamma) {
        return Err(Error::InvalidParam(format!(
            "binom_multi: {beta} exceeds {gamma} componentwise"
        )));
    }
    let mut acc: u64 = 1;
    for (&g, &b) in gamma.entries().iter().zip(beta.entries()) {
        acc = acc
            .checked_mul(binom_u64(g as u64, b as u64)?)
            .ok_or_else(|| Error::Overflow("binom_multi".into()))?;
    }
    Ok(acc)
}

/// A polynomial Σ c_α x^α with every |α| ≤ max_degree.
///
/// `max_degree = -1` is the zero polynomial of the empty space.
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial {
    pub dim: usize,
    pub max_degree: i32,
    coeffs: BTreeMap<MultiIndex, f64>,
}

impl Serialize for Polynomial {
    /// Serializes as the dense coefficient vector over the graded-lex basis.
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let basis = enumerate(self.dim, self.max_degree);
        let mut st = serializer.serialize_struct("Polynomial", 4)?;
        st.serialize_field("dim", &self.dim)?;
        st.serialize_field("max_degree", &self.max_degree)?;
        st.serialize_field("basis", &basis)?;
        st.serialize_field("coeffs", &self.coeff_vector())?;
        st.end()
    }
}

impl Polynomial {
    pub fn zero(dim: usize, max_degree: i32) -> Self {
        Self {
            dim,
            max_degree,
            coeffs: BTreeMap::new(),
        }
    }

    pub fn from_coeffs(dim: usize, max_degree: i32, coeffs: BTreeMap<MultiIndex, f64>) -> Self {
        for alpha in coeffs.keys() {
            assert_eq!(alpha.dim(), dim);
            assert!(
                (alpha.order() as i32) <= max_degree,
                "coefficient degree exceeds max_degree"
            );
        }
        Self {
            dim,
            max_degree,
            coeffs,
        }
    }

    pub fn set(&mut self, alpha: MultiIndex, c: f64) {
        assert_eq!(alpha.dim(), self.dim);
        assert!((alpha.order() as i32) <= self.max_degree);
        self.coeffs.insert(alpha, c);
    }

    pub fn coeff(&self, alpha: &MultiIndex) -> f64 {
        self.coeffs.get(alpha).copied().unwrap_or(0.0)
    }

    pub fn coeffs(&self) -> &BTreeMap<MultiIndex, f64> {
        &self.coeffs
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim);
        self.coeffs
            .iter()
            .map(|(alpha, c)| c * monomial(alpha, x))
            .sum()
    }

    pub fn add(&self, other: &Polynomial) -> Polynomial {
        assert_eq!(self.dim, other.dim);
        let mut out = self.clone();
        out.max_degree = out.max_degree.max(other.max_degree);
        for (alpha, c) in &other.coeffs {
            *out.coeffs.entry(alpha.clone()).or_insert(0.0) += c;
        }
        out
    }

    pub fn scale(&self, s: f64) -> Polynomial {
        let mut out = self.clone();
        for c in out.coeffs.values_mut() {
            *c *= s;
        }
        out
    }

    /// Coefficients as a dense vector over `enumerate(dim, max_degree)`.
    pub fn coeff_vector(&self) -> Vec<f64> {
        enumerate(self.dim, self.max_degree)
            .iter()
            .map(|alpha| self.coeff(alpha))
            .collect()
    }
}

/// Least-squares polynomial fit of degree ≤ max_degree through weighted
/// samples, plus the sup-norm residual over the sample set.
///
/// The sup residual of the fitted polynomial is an upper bound for the
/// best-possible sup-norm approximation error on the same grid.
pub fn best_poly_fit(
    samples: &[(Vec<f64>, f64)],
    n: usize,
    max_degree: i32,
) -> Result<(Polynomial, f64)> {
    if max_degree < 0 {
        let residual = samples.iter().map(|(_, f)| f.abs()).fold(0.0, f64::max);
        return Ok((Polynomial::zero(n, -1), residual));
    }
    let basis = enumerate(n, max_degree);
    if samples.len() < basis.len() {
        return Err(Error::DegenerateSamples(format!(
            "{} samples for a {}-dimensional space",
            samples.len(),
            basis.len()
        )));
    }
    let rows = samples.len();
    let cols = basis.len();
    let mut v = DMatrix::zeros(rows, cols);
    let mut rhs = DVector::zeros(rows);
    for (i, (x, f)) in samples.iter().enumerate() {
        for (j, alpha) in basis.iter().enumerate() {
            v[(i, j)] = monomial(alpha, x);
        }
        rhs[i] = *f;
    }
    let svd = v.svd(true, true);
    let rank = svd.rank(1e-10);
    if rank < cols {
        return Err(Error::DegenerateSamples(format!(
            "normal system rank {rank} < {cols}; sample points do not determine the space"
        )));
    }
    let coeffs = svd
        .solve(&rhs, 1e-12)
        .map_err(|e| Error::DegenerateSamples(format!("least-squares solve failed: {e}")))?;

    let mut map = BTreeMap::new();
    for (j, alpha) in basis.iter().enumerate() {
        map.insert(alpha.clone(), coeffs[j]);
    }
    let poly = Polynomial::from_coeffs(n, max_degree, map);
    let residual = samples
        .iter()
        .map(|(x, f)| (poly.eval(x) - f).abs())
        .fold(0.0, f64::max);
    Ok((poly, residual))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn enumerate_empty_space() {
        assert!(enumerate(3, -1).is_empty());
    }

    #[test]
    fn enumerate_two_vars_degree_one() {
        let list = enumerate(2, 1);
        let expect: Vec<MultiIndex> = [vec![0, 0], vec![1, 0], vec![0, 1]]
            .into_iter()
            .map(MultiIndex::new)
            .collect();
        assert_eq!(list, expect);
    }

    #[test]
    fn enumerate_univariate_quartic() {
        assert_eq!(enumerate(1, 4).len(), 5);
    }

    #[test]
    fn dims_match_enumeration() {
        assert_eq!(solution_space_dim(5, 0).unwrap(), 0);
        assert_eq!(solution_space_dim(1, 2).unwrap(), 2);
        assert_eq!(solution_space_dim(2, 3).unwrap(), 6);
        for n in 1..=4usize {
            for m in 0..=6u32 {
                assert_eq!(
                    solution_space_dim(n, m).unwrap(),
                    enumerate(n, m as i32 - 1).len(),
                    "n={n} m={m}"
                );
            }
        }
    }

    #[test]
    fn factorial_monomial_binom() {
        let a = MultiIndex::new(vec![2, 1]);
        assert_eq!(factorial(&a).unwrap(), 2);

        let b = MultiIndex::new(vec![1, 2]);
        assert_eq!(monomial(&b, &[3.0, 2.0]), 12.0);

        let gamma = MultiIndex::new(vec![2, 0]);
        let beta = MultiIndex::new(vec![1, 0]);
        assert_eq!(binom_multi(&gamma, &beta).unwrap(), 2);

        let too_big = MultiIndex::new(vec![3, 0]);
        assert!(binom_multi(&gamma, &too_big).is_err());
    }

    #[test]
    fn monomial_product_rule() {
        // monomial(α,x)·monomial(β,x) = monomial(α+β,x)
        let xs = [[0.7, -1.3], [2.0, 0.5], [-0.2, 3.0]];
        for a in enumerate(2, 3) {
            for b in enumerate(2, 3) {
                for x in &xs {
                    let lhs = monomial(&a, x) * monomial(&b, x);
                    let rhs = monomial(&a.add(&b), x);
                    assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()));
                }
            }
        }
    }

    #[test]
    fn fit_recovers_member_of_space() {
        let samples: Vec<(Vec<f64>, f64)> = (0..21)
            .map(|i| {
                let x = -1.0 + 0.1 * i as f64;
                (vec![x], 1.0 + 2.0 * x)
            })
            .collect();
        let (poly, residual) = best_poly_fit(&samples, 1, 1).unwrap();
        assert!(residual <= 1e-12, "residual {residual}");
        assert!((poly.eval(&[0.25]) - 1.5).abs() <= 1e-12);
    }

    #[test]
    fn fit_constant_against_brute_force_scan() {
        // Scan constants c ∈ [0,1] for the least-squares optimum and compare
        // sup residuals with the solver's.
        let samples: Vec<(Vec<f64>, f64)> = (0..21)
            .map(|i| {
                let x: f64 = -1.0 + 0.1 * i as f64;
                (vec![x], x * x)
            })
            .collect();
        let (_, residual) = best_poly_fit(&samples, 1, 0).unwrap();

        let mut best = (f64::INFINITY, 0.0);
        let steps = 100_000;
        for k in 0..=steps {
            let c = k as f64 / steps as f64;
            let sq: f64 = samples.iter().map(|(_, f)| (f - c) * (f - c)).sum();
            if sq < best.0 {
                best = (sq, c);
            }
        }
        let scan_residual = samples
            .iter()
            .map(|(_, f)| (f - best.1).abs())
            .fold(0.0, f64::max);
        assert!(
            (residual - scan_residual).abs() <= 1e-3,
            "solver {residual} vs scan {scan_residual}"
        );
    }

    #[test]
    fn fit_empty_space_returns_sup() {
        let samples = vec![(vec![0.0], 1.0), (vec![0.5], -3.0)];
        let (poly, residual) = best_poly_fit(&samples, 1, -1).unwrap();
        assert_eq!(poly.eval(&[0.3]), 0.0);
        assert_eq!(residual, 3.0);
    }

    #[test]
    fn fit_rejects_degenerate_geometry() {
        // all samples at the same point cannot determine an affine fit
        let samples = vec![(vec![0.5, 0.5], 1.0), (vec![0.5, 0.5], 2.0), (vec![0.5, 0.5], 0.0)];
        assert!(best_poly_fit(&samples, 2, 1).is_err());
    }

    #[test]
    fn polynomial_eval_is_order_independent() {
        let mut p = Polynomial::zero(2, 2);
        p.set(MultiIndex::new(vec![0, 0]), 1.5);
        p.set(MultiIndex::new(vec![1, 0]), -2.0);
        p.set(MultiIndex::new(vec![0, 2]), 0.25);
        let x = [0.3, -0.7];
        let direct = 1.5 - 2.0 * 0.3 + 0.25 * 0.49;
        assert!((p.eval(&x) - direct).abs() < 1e-15);
    }
}
