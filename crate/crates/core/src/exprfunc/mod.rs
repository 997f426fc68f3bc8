//! Candidate functions u: built-in families, a small expression language for
//! the CLI, and numerical membership checks for the integrability
//! hypotheses.

pub mod builtins;
pub mod parser;

use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernels::{Kernel, TailModel};
use crate::multiindex::{enumerate, factorial, MultiIndex};
use crate::quadrature::{self, QuadConfig, QuadResult, Region};

pub use parser::Expr;

/// Growth metadata used for certified tail truncation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum GrowthClass {
    /// u vanishes outside B_radius.
    Compact { radius: f64 },
    /// |u(y)| ≲ (1+|y|)^exponent.
    Power { exponent: f64 },
}

impl GrowthClass {
    pub fn exponent(&self) -> f64 {
        match self {
            GrowthClass::Compact { .. } => 0.0,
            GrowthClass::Power { exponent } => *exponent,
        }
    }

    pub fn compact_radius(&self) -> Option<f64> {
        match self {
            GrowthClass::Compact { radius } => Some(*radius),
            GrowthClass::Power { .. } => None,
        }
    }
}

type EvalFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
type GradFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// A function u: R^n → R with the regularity and growth metadata the
/// operator machinery needs.
#[derive(Clone)]
pub struct ScalarField {
    pub dim: usize,
    pub name: String,
    f: EvalFn,
    grad: Option<GradFn>,
    /// Claimed Hölder class ϑ ∈ [0,2] on B₄ (user-asserted, spot-checked).
    pub theta_class: f64,
    pub growth: GrowthClass,
    /// Known non-smooth locations: coordinates on the line when n = 1,
    /// radii about the origin when n = 2. The function is smooth away from
    /// these.
    pub kinks: Vec<f64>,
}

impl std::fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ScalarField")
            .field("dim", &self.dim)
            .field("name", &self.name)
            .field("theta_class", &self.theta_class)
            .field("growth", &self.growth)
            .field("kinks", &self.kinks)
            .finish()
    }
}

impl ScalarField {
    pub fn new(
        dim: usize,
        name: impl Into<String>,
        f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            dim,
            name: name.into(),
            f: Arc::new(f),
            grad: None,
            theta_class: 2.0,
            growth: GrowthClass::Power { exponent: 0.0 },
            kinks: Vec::new(),
        }
    }

    pub fn with_gradient(
        mut self,
        g: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        self.grad = Some(Arc::new(g));
        self
    }

    pub fn with_theta(mut self, theta: f64) -> Self {
        self.theta_class = theta;
        self
    }

    pub fn with_growth(mut self, growth: GrowthClass) -> Self {
        self.growth = growth;
        self
    }

    pub fn with_kinks(mut self, kinks: Vec<f64>) -> Self {
        self.kinks = kinks;
        self
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim);
        (self.f)(x)
    }

    /// Analytic gradient when present, central finite differences otherwise.
    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        if let Some(g) = &self.grad {
            return g(x);
        }
        let h = f64::EPSILON.cbrt() * (1.0 + x.iter().map(|v| v.abs()).fold(0.0, f64::max));
        (0..self.dim)
            .map(|i| {
                let mut xp = x.to_vec();
                let mut xm = x.to_vec();
                xp[i] += h;
                xm[i] -= h;
                (self.eval(&xp) - self.eval(&xm)) / (2.0 * h)
            })
            .collect()
    }

    /// Distance from x to the nearest recorded kink (∞ when there are none).
    pub fn kink_distance(&self, x: &[f64]) -> f64 {
        if self.kinks.is_empty() {
            return f64::INFINITY;
        }
        match self.dim {
            1 => self
                .kinks
                .iter()
                .map(|k| (x[0] - k).abs())
                .fold(f64::INFINITY, f64::min),
            _ => {
                let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                self.kinks
                    .iter()
                    .map(|k| (r - k).abs())
                    .fold(f64::INFINITY, f64::min)
            }
        }
    }

    /// Pointwise sum; metadata combines conservatively.
    pub fn add(&self, other: &ScalarField) -> ScalarField {
        assert_eq!(self.dim, other.dim);
        let f1 = self.f.clone();
        let f2 = other.f.clone();
        let growth = match (self.growth, other.growth) {
            (GrowthClass::Compact { radius: a }, GrowthClass::Compact { radius: b }) => {
                GrowthClass::Compact { radius: a.max(b) }
            }
            (ga, gb) => GrowthClass::Power {
                exponent: ga.exponent().max(gb.exponent()),
            },
        };
        let mut kinks = self.kinks.clone();
        kinks.extend(&other.kinks);
        kinks.sort_by(|a, b| a.partial_cmp(b).unwrap());
        kinks.dedup();
        ScalarField {
            dim: self.dim,
            name: format!("{}+{}", self.name, other.name),
            f: Arc::new(move |x: &[f64]| f1(x) + f2(x)),
            grad: None,
            theta_class: self.theta_class.min(other.theta_class),
            growth,
            kinks,
        }
    }

    pub fn scale(&self, s: f64) -> ScalarField {
        let f = self.f.clone();
        ScalarField {
            dim: self.dim,
            name: format!("{}*{}", s, self.name),
            f: Arc::new(move |x: &[f64]| s * f(x)),
            grad: None,
            theta_class: self.theta_class,
            growth: self.growth,
            kinks: self.kinks.clone(),
        }
    }
}

/// Numerical report for the annulus and tail integrability hypotheses.
#[derive(Debug, Clone, Serialize)]
pub struct MembershipReport {
    pub m: usize,
    pub r_probe: f64,
    /// Per-α annulus integrals ∫_{B_R \ B_3} |u||∂^α K(0,y)| dy, |α| ≤ m−1.
    pub ring_values: Vec<(MultiIndex, f64)>,
    pub ring_ok: bool,
    /// Tail integral ∫_{B₃^c} |u(y)| sup_{|α|=m, x∈B₁} |∂^α K(x,y)| dy.
    pub tail_value: Option<f64>,
    pub tail_err: Option<f64>,
    pub tail_ok: bool,
    pub diagnostic: Option<String>,
    pub pass: bool,
}

/// Tail integral of |u| against the m-th derivative majorant of the kernel,
/// short-circuited for compactly supported data or kernels.
pub fn mcond_tail(
    u: &ScalarField,
    kernel: &Kernel,
    m: usize,
    cfg: &QuadConfig,
) -> Result<QuadResult> {
    let n = u.dim;
    let integrand = |y: &[f64]| {
        let r = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        u.eval(y).abs() * kernel.deriv_sup_majorant(m, r)
    };
    if let Some(radius) = u.growth.compact_radius() {
        if radius <= 3.0 {
            return Ok(QuadResult::exact_zero());
        }
        let origin = vec![0.0; n];
        return Ok(quadrature::integrate_region(
            &integrand,
            &Region::annulus(origin, 3.0, radius),
            &u.kinks,
            cfg,
        ));
    }
    match kernel.tail_model(m) {
        TailModel::Compact { radius } => {
            let cut = 1.0 + radius;
            if cut <= 3.0 {
                return Ok(QuadResult::exact_zero());
            }
            let origin = vec![0.0; n];
            Ok(quadrature::integrate_region(
                &integrand,
                &Region::annulus(origin, 3.0, cut),
                &u.kinks,
                cfg,
            ))
        }
        TailModel::Power { p } => quadrature::integrate_tail(
            &integrand,
            3.0,
            u.growth.exponent(),
            p,
            n,
            &u.kinks,
            cfg,
        ),
    }
}

/// Estimates the annulus and tail hypothesis integrals for the pair (u, K)
/// at Taylor order m.
pub fn check_membership(
    u: &ScalarField,
    kernel: &Kernel,
    m: usize,
    r_probe: f64,
    cfg: &QuadConfig,
) -> Result<MembershipReport> {
    if m > kernel.max_taylor_order {
        return Err(Error::DerivOrder {
            requested: m,
            supported: kernel.max_taylor_order,
        });
    }
    let n = u.dim;
    if n != kernel.dim {
        return Err(Error::InvalidParam(
            "function and kernel dimensions differ".into(),
        ));
    }

    let mut ring_values = Vec::new();
    let mut ring_ok = true;
    for alpha in enumerate(n, m as i32 - 1) {
        let fact = factorial(&alpha)? as f64;
        let origin_pt = vec![0.0; n];
        let alpha_ref = alpha.clone();
        let full = |y: &[f64]| {
            let d = kernel.deriv_x(&alpha_ref, &origin_pt, y).unwrap_or(f64::NAN);
            u.eval(y).abs() * d.abs() / fact
        };
        let origin = vec![0.0; n];
        let quad = quadrature::integrate_region(
            &full,
            &Region::annulus(origin, 3.0, r_probe),
            &u.kinks,
            cfg,
        );
        ring_ok &= quad.converged && quad.value.is_finite();
        ring_values.push((alpha, quad.value));
    }

    let (tail_value, tail_err, tail_ok, diagnostic) = match mcond_tail(u, kernel, m, cfg) {
        Ok(q) => (Some(q.value), Some(q.err_est), q.converged, None),
        Err(e) => (None, None, false, Some(e.to_string())),
    };

    Ok(MembershipReport {
        m,
        r_probe,
        ring_values,
        ring_ok,
        tail_value,
        tail_err,
        tail_ok,
        diagnostic,
        pass: ring_ok && tail_ok,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{build, KernelSpec};

    #[test]
    fn membership_exponent_arithmetic() {
        let cfg = QuadConfig::default();
        // u(x) = x against |z|^{-(1+2s)}: the m-th derivative decays like
        // |y|^{-(1+2s+m)}, so the tail needs 2s + m > 1
        let u = builtins::coordinate(1, 0);
        let k34 = build(KernelSpec::frac_lap(1, 0.75)).unwrap();
        let rep = check_membership(&u, &k34, 2, 10.0, &cfg).unwrap();
        assert!(rep.pass, "{rep:?}");

        let k14 = build(KernelSpec::frac_lap(1, 0.25)).unwrap();
        let rep = check_membership(&u, &k14, 0, 10.0, &cfg).unwrap();
        assert!(!rep.pass);
        assert!(rep.diagnostic.is_some());
    }

    #[test]
    fn membership_compact_support_always_passes() {
        let cfg = QuadConfig::default();
        let u = builtins::bump(1);
        for s in [0.25, 0.5, 0.75] {
            let k = build(KernelSpec::frac_lap(1, s)).unwrap();
            for m in 0..=2 {
                let rep = check_membership(&u, &k, m, 8.0, &cfg).unwrap();
                assert!(rep.pass, "s={s} m={m}");
                assert_eq!(rep.tail_value, Some(0.0));
            }
        }
    }

    #[test]
    fn membership_monotone_in_m() {
        let cfg = QuadConfig::default();
        let u = builtins::coordinate(1, 0);
        let k = build(KernelSpec::frac_lap(1, 0.25)).unwrap();
        let mut passed_from = None;
        for m in 0..=3usize {
            let rep = check_membership(&u, &k, m, 8.0, &cfg).unwrap();
            if rep.pass && passed_from.is_none() {
                passed_from = Some(m);
            }
            if let Some(m0) = passed_from {
                if m >= m0 {
                    assert!(rep.pass, "monotonicity broken at m={m}");
                }
            }
        }
        assert_eq!(passed_from, Some(1));
    }

    #[test]
    fn field_addition_merges_metadata() {
        let a = builtins::bump(1);
        let b = builtins::coordinate(1, 0);
        let sum = a.add(&b);
        assert_eq!(sum.growth.exponent(), 1.0);
        assert!((sum.eval(&[0.0]) - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn fd_gradient_close_to_analytic() {
        let g = builtins::getoor(1, 0.5).unwrap();
        let x = [0.3];
        let grad = g.gradient(&x);
        let exact = -0.3 / (1.0f64 - 0.09).sqrt();
        assert!((grad[0] - exact).abs() <= 1e-5 * (1.0 + exact.abs()));
    }
}
