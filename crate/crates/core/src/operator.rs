//! Evaluation of A(τu) and its decomposition into a polynomial part plus
//! convergent integrals, the R→∞ limit driver, and the certified tail bound
//! controlling how fast the truncated operator stabilizes.

use std::cell::Cell;
use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::exprfunc::{mcond_tail, ScalarField};
use crate::kernels::{Kernel, TailModel};
use crate::multiindex::{enumerate, factorial, monomial, MultiIndex, Polynomial};
use crate::quadrature::{
    integrate_region, integrate_tail, integrate_unit_interval_weighted, pv_second_difference,
    QuadConfig, QuadResult, Region,
};

/// Cut-off family: sharp indicator of B_R or a smooth radial ramp that is 1
/// on B_{R−width} and 0 outside B_R. Both equal 1 on B₃.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CutoffSpec {
    Sharp { r: f64 },
    Smooth { r: f64, width: f64 },
}

impl CutoffSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            CutoffSpec::Sharp { r } => {
                if r <= 3.0 {
                    return Err(Error::InvalidParam(format!("cutoff radius {r} must exceed 3")));
                }
            }
            CutoffSpec::Smooth { r, width } => {
                if width <= 0.0 || r - width < 3.0 {
                    return Err(Error::InvalidParam(format!(
                        "smooth cutoff needs width > 0 and r − width ≥ 3, got r={r} width={width}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn support_radius(&self) -> f64 {
        match *self {
            CutoffSpec::Sharp { r } | CutoffSpec::Smooth { r, .. } => r,
        }
    }

    /// τ(y), radial.
    pub fn weight(&self, y: &[f64]) -> f64 {
        let rho = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        match *self {
            CutoffSpec::Sharp { r } => {
                if rho <= r {
                    1.0
                } else {
                    0.0
                }
            }
            CutoffSpec::Smooth { r, width } => {
                if rho <= r - width {
                    1.0
                } else if rho >= r {
                    0.0
                } else {
                    0.5 * (1.0 + (std::f64::consts::PI * (rho - (r - width)) / width).cos())
                }
            }
        }
    }

    /// Radii where τ is not smooth (quadrature split points).
    fn kink_radii(&self) -> Vec<f64> {
        match *self {
            CutoffSpec::Sharp { r } => vec![r],
            CutoffSpec::Smooth { r, width } => vec![r - width, r],
        }
    }
}

/// Splits for radial integrands: u's kinks plus the cutoff's radii,
/// mirrored in 1D.
fn radial_splits(u: &ScalarField, tau: Option<&CutoffSpec>) -> Vec<f64> {
    let mut s = u.kinks.clone();
    if let Some(tau) = tau {
        for r in tau.kink_radii() {
            s.push(r);
            if u.dim == 1 {
                s.push(-r);
            }
        }
    }
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    s.dedup();
    s
}

/// ψ(x,y): integral-form Taylor remainder of x ↦ K(x,y) at order m, so that
/// K(x,y) = Σ_{|α|≤m−1} ∂^α_x K(0,y) x^α/α! − ψ(x,y).
///
/// For m = 0 the sum is empty and ψ = −K: that sign is forced by the
/// representation identity (f* must cancel the exterior cut term).
pub fn psi_remainder(
    kernel: &Kernel,
    m: usize,
    x: &[f64],
    y: &[f64],
    cfg: &QuadConfig,
) -> Result<(f64, f64)> {
    if m == 0 {
        return Ok((-kernel.eval(x, y), 0.0));
    }
    if m > kernel.max_taylor_order {
        return Err(Error::DerivOrder {
            requested: m,
            supported: kernel.max_taylor_order,
        });
    }
    let n = x.len();
    let mut psi = 0.0;
    let mut err = 0.0;
    for alpha in enumerate(n, m as i32) {
        if alpha.order() as usize != m {
            continue;
        }
        let coeff = m as f64 * monomial(&alpha, x) / factorial(&alpha)? as f64;
        if coeff == 0.0 {
            continue;
        }
        let bad = Cell::new(false);
        let integrand = |t: f64| {
            let tx: Vec<f64> = x.iter().map(|v| t * v).collect();
            match kernel.deriv_x(&alpha, &tx, y) {
                Ok(v) => v,
                Err(_) => {
                    bad.set(true);
                    f64::NAN
                }
            }
        };
        let inner = integrate_unit_interval_weighted(&integrand, m, cfg);
        if bad.get() {
            return Err(Error::EvalDomain(
                "kernel derivative failed inside the Taylor remainder".into(),
            ));
        }
        psi -= coeff * inner.value;
        err += coeff.abs() * inner.err_est;
    }
    Ok((psi, err))
}

/// θ coefficients: θ_α = ∫_{B₃^c} (τu)(y) ∂^α_x K(0,y)/α! dy for |α| ≤ m−1.
pub fn theta_coefficients(
    u: &ScalarField,
    kernel: &Kernel,
    tau: &CutoffSpec,
    m: usize,
    cfg: &QuadConfig,
) -> Result<(BTreeMap<MultiIndex, f64>, f64)> {
    tau.validate()?;
    let n = u.dim;
    let r_support = tau.support_radius();
    let splits = radial_splits(u, Some(tau));
    let origin = vec![0.0; n];
    let mut out = BTreeMap::new();
    let mut err = 0.0;
    for alpha in enumerate(n, m as i32 - 1) {
        let fact = factorial(&alpha)? as f64;
        let alpha_ref = alpha.clone();
        let origin_ref = origin.clone();
        let integrand = |y: &[f64]| {
            let d = kernel.deriv_x(&alpha_ref, &origin_ref, y).unwrap_or(f64::NAN);
            tau.weight(y) * u.eval(y) * d / fact
        };
        let quad = integrate_region(
            &integrand,
            &Region::annulus(origin.clone(), 3.0, r_support),
            &splits,
            cfg,
        );
        if !quad.value.is_finite() {
            return Err(Error::QuadratureDiverged(format!(
                "θ coefficient for α = {alpha} is not finite"
            )));
        }
        err += quad.err_est;
        out.insert(alpha, quad.value);
    }
    Ok((out, err))
}

/// The decomposition A(τu) = P + f₁ + f₂ + f* at a point of B₁.
#[derive(Debug, Clone, Serialize)]
pub struct Decomposition {
    pub x: Vec<f64>,
    pub m: usize,
    pub f1: QuadResult,
    pub f2: QuadResult,
    pub f_star: QuadResult,
    pub theta: Vec<(MultiIndex, f64)>,
    pub theta_err: f64,
    pub poly: Polynomial,
    pub poly_at_x: f64,
    pub total: f64,
}

impl Decomposition {
    pub fn err_total(&self) -> f64 {
        self.f1.err_est + self.f2.err_est + self.f_star.err_est + self.theta_err
    }
}

/// Principal-value radius at x: stays below the nearest kink of u and inside
/// B₃.
fn pv_radius(u: &ScalarField, x: &[f64]) -> f64 {
    let kd = u.kink_distance(x);
    if kd.is_finite() {
        (0.9 * kd).min(1.0).max(1e-6)
    } else {
        1.0
    }
}

/// Near-diagonal admissibility at the evaluation point: fields are smooth
/// away from their recorded kinks, so the local class is 2 off-kink.
fn check_local_theta(u: &ScalarField, kernel: &Kernel, x: &[f64]) -> Result<()> {
    let theta_local = if u.kink_distance(x) > 1e-9 {
        2.0
    } else {
        u.theta_class
    };
    if !kernel.theta_admissible(theta_local) {
        return Err(Error::HypothesisViolated(format!(
            "local regularity ϑ = {theta_local} at x outside the kernel's admissible interval {:?}",
            kernel.admissible_theta
        )));
    }
    Ok(())
}

/// Tail-integrability gate from metadata: compact support always passes,
/// power growth needs a positive margin against the kernel's decay.
fn check_tail_margin(u: &ScalarField, kernel: &Kernel, m: usize) -> Result<()> {
    if u.growth.compact_radius().is_some() {
        return Ok(());
    }
    match kernel.tail_model(m) {
        TailModel::Compact { .. } => Ok(()),
        TailModel::Power { p } => {
            let margin = p - u.growth.exponent() - u.dim as f64;
            if margin <= 0.0 {
                Err(Error::HypothesisViolated(format!(
                    "tail integrability margin {margin} ≤ 0 at derivative order {m}"
                )))
            } else {
                Ok(())
            }
        }
    }
}

/// f₁(x) = ∫_{B₃}(u(x)−u(y))K(x,y)dy: symmetrized principal value near x
/// plus a regular region integral.
fn f1_local(u: &ScalarField, kernel: &Kernel, x: &[f64], cfg: &QuadConfig) -> Result<QuadResult> {
    let r = pv_radius(u, x);
    let pv = pv_second_difference(u, kernel, x, r, cfg)?;
    let ux = u.eval(x);
    let splits = radial_splits(u, None);
    let outer = integrate_region(
        &|y: &[f64]| (ux - u.eval(y)) * kernel.eval(x, y),
        &Region::BallMinusBall {
            r_outer: 3.0,
            inner_center: x.to_vec(),
            r_inner: r,
        },
        &splits,
        cfg,
    );
    Ok(pv.combine(&outer))
}

/// ∫_{B₃^c} K(x,y) dy with a certified tail.
fn kernel_tail_integral(kernel: &Kernel, x: &[f64], cfg: &QuadConfig) -> Result<QuadResult> {
    let n = kernel.dim;
    match kernel.tail_model(0) {
        TailModel::Compact { radius } => {
            let cut = 1.0 + radius;
            if cut <= 3.0 {
                return Ok(QuadResult::exact_zero());
            }
            Ok(integrate_region(
                &|y: &[f64]| kernel.eval(x, y),
                &Region::annulus(vec![0.0; n], 3.0, cut),
                &[],
                cfg,
            ))
        }
        TailModel::Power { p } => {
            integrate_tail(&|y: &[f64]| kernel.eval(x, y), 3.0, 0.0, p, n, &[], cfg)
        }
    }
}

/// Full decomposition of A(τu)(x) per the cut-off structure.
pub fn decompose(
    u: &ScalarField,
    kernel: &Kernel,
    tau: &CutoffSpec,
    m: usize,
    x: &[f64],
    cfg: &QuadConfig,
) -> Result<Decomposition> {
    tau.validate()?;
    let n = u.dim;
    if n != kernel.dim {
        return Err(Error::InvalidParam("dimension mismatch".into()));
    }
    if x.iter().map(|v| v * v).sum::<f64>() >= 1.0 {
        return Err(Error::InvalidParam("evaluation point must lie in B₁".into()));
    }
    check_local_theta(u, kernel, x)?;
    check_tail_margin(u, kernel, m)?;

    let f1 = f1_local(u, kernel, x, cfg)?;
    let ux = u.eval(x);
    let f2 = if ux == 0.0 {
        QuadResult::exact_zero()
    } else {
        kernel_tail_integral(kernel, x, cfg)?.scale(ux)
    };

    // f*(x) = ∫_{B₃^c} τ(y) u(y) ψ(x,y) dy, supported in B_{Rτ}
    let r_support = tau.support_radius();
    let outer_radius = match u.growth.compact_radius() {
        Some(rad) => rad.min(r_support),
        None => r_support,
    };
    let psi_cfg = QuadConfig {
        abs_tol: cfg.abs_tol * 1e-2,
        rel_tol: cfg.rel_tol * 1e-1,
        max_depth: cfg.max_depth,
    };
    let psi_err = Cell::new(0.0f64);
    let f_star = if outer_radius <= 3.0 {
        QuadResult::exact_zero()
    } else {
        let splits = radial_splits(u, Some(tau));
        let integrand = |y: &[f64]| match psi_remainder(kernel, m, x, y, &psi_cfg) {
            Ok((v, e)) => {
                psi_err.set(psi_err.get().max(e));
                tau.weight(y) * u.eval(y) * v
            }
            Err(_) => f64::NAN,
        };
        let quad = integrate_region(
            &integrand,
            &Region::annulus(vec![0.0; n], 3.0, outer_radius),
            &splits,
            cfg,
        );
        let measure = match n {
            1 => 2.0 * (outer_radius - 3.0),
            _ => std::f64::consts::PI * (outer_radius * outer_radius - 9.0),
        };
        QuadResult {
            err_est: quad.err_est + psi_err.get() * measure,
            ..quad
        }
    };
    if !f_star.value.is_finite() {
        return Err(Error::QuadratureDiverged("f* evaluation failed".into()));
    }

    let (theta, theta_err) = theta_coefficients(u, kernel, tau, m, cfg)?;
    let mut poly = Polynomial::zero(n, m as i32 - 1);
    for (alpha, t) in &theta {
        poly.set(alpha.clone(), -t);
    }
    let poly_at_x = poly.eval(x);
    let total = poly_at_x + f1.value + f2.value + f_star.value;

    Ok(Decomposition {
        x: x.to_vec(),
        m,
        f1,
        f2,
        f_star,
        theta: theta.into_iter().collect(),
        theta_err,
        poly,
        poly_at_x,
        total,
    })
}

/// Direct quadrature of A(τu)(x) with no Taylor step: the independent
/// reconstruction oracle for `decompose`.
pub fn direct_cutoff_apply(
    u: &ScalarField,
    kernel: &Kernel,
    tau: &CutoffSpec,
    x: &[f64],
    cfg: &QuadConfig,
) -> Result<QuadResult> {
    tau.validate()?;
    check_local_theta(u, kernel, x)?;
    let n = u.dim;
    let f1 = f1_local(u, kernel, x, cfg)?;
    let ux = u.eval(x);
    let f2 = if ux == 0.0 {
        QuadResult::exact_zero()
    } else {
        kernel_tail_integral(kernel, x, cfg)?.scale(ux)
    };
    let r_support = tau.support_radius();
    let outer_radius = match u.growth.compact_radius() {
        Some(rad) => rad.min(r_support),
        None => r_support,
    };
    let cut_piece = if outer_radius <= 3.0 {
        QuadResult::exact_zero()
    } else {
        let splits = radial_splits(u, Some(tau));
        integrate_region(
            &|y: &[f64]| tau.weight(y) * u.eval(y) * kernel.eval(x, y),
            &Region::annulus(vec![0.0; n], 3.0, outer_radius),
            &splits,
            cfg,
        )
    };
    Ok(f1.combine(&f2).combine(&cut_piece.scale(-1.0)))
}

/// Direct quadrature of Au(x) for functions whose tail is integrable
/// against the kernel (the m = 0 setting). Uses a different interior split
/// radius than the decomposition path.
pub fn direct_apply(
    u: &ScalarField,
    kernel: &Kernel,
    x: &[f64],
    cfg: &QuadConfig,
) -> Result<QuadResult> {
    check_local_theta(u, kernel, x)?;
    check_tail_margin(u, kernel, 0)?;
    let n = u.dim;
    let r = pv_radius(u, x);
    let pv = pv_second_difference(u, kernel, x, r, cfg)?;
    let ux = u.eval(x);
    let splits = radial_splits(u, None);

    let kernel_cut = match kernel.tail_model(0) {
        TailModel::Compact { radius } => 1.0 + radius,
        TailModel::Power { .. } => 0.0,
    };
    let r_mid = 5.0f64.max(kernel_cut);
    let mid = integrate_region(
        &|y: &[f64]| (ux - u.eval(y)) * kernel.eval(x, y),
        &Region::BallMinusBall {
            r_outer: r_mid,
            inner_center: x.to_vec(),
            r_inner: r,
        },
        &splits,
        cfg,
    );

    let tail = if kernel_cut > 0.0 && kernel_cut <= r_mid {
        QuadResult::exact_zero()
    } else {
        let p = match kernel.tail_model(0) {
            TailModel::Power { p } => p,
            TailModel::Compact { .. } => unreachable!(),
        };
        let growth = match u.growth.compact_radius() {
            Some(_) => 0.0,
            None => u.growth.exponent(),
        };
        integrate_tail(
            &|y: &[f64]| (ux - u.eval(y)) * kernel.eval(x, y),
            r_mid,
            growth,
            p,
            n,
            &splits,
            cfg,
        )?
    };
    Ok(pv.combine(&mid).combine(&tail))
}

/// ∫_{B_R^c} |u(y)| · sup_{|α|=m, x∈B₁} |∂^α_x K(x,y)| dy: the right side of
/// the stabilization bound for the truncated operator family.
pub fn tail_bound(
    u: &ScalarField,
    kernel: &Kernel,
    m: usize,
    r: f64,
    cfg: &QuadConfig,
) -> Result<QuadResult> {
    if r <= 3.0 {
        return Err(Error::InvalidParam("tail bound needs R > 3".into()));
    }
    let n = u.dim;
    let integrand = |y: &[f64]| {
        let rho = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        u.eval(y).abs() * kernel.deriv_sup_majorant(m, rho)
    };
    if let Some(radius) = u.growth.compact_radius() {
        if radius <= r {
            return Ok(QuadResult::exact_zero());
        }
        return Ok(integrate_region(
            &integrand,
            &Region::annulus(vec![0.0; n], r, radius),
            &radial_splits(u, None),
            cfg,
        ));
    }
    match kernel.tail_model(m) {
        TailModel::Compact { radius } => {
            let cut = 1.0 + radius;
            if cut <= r {
                return Ok(QuadResult::exact_zero());
            }
            Ok(integrate_region(
                &integrand,
                &Region::annulus(vec![0.0; n], r, cut),
                &radial_splits(u, None),
                cfg,
            ))
        }
        TailModel::Power { p } => {
            let margin = p - u.growth.exponent() - n as f64;
            if margin <= 0.0 {
                return Err(Error::DivergentTail(format!(
                    "tail bound divergent: margin {margin} ≤ 0"
                )));
            }
            integrate_tail(
                &integrand,
                r,
                u.growth.exponent(),
                p,
                n,
                &radial_splits(u, None),
                cfg,
            )
        }
    }
}

/// f₃(x) = ∫_{B₃^c} u(y) ψ(x,y) dy: the limit of f* as the cut-off is
/// removed.
pub fn f3_limit(
    u: &ScalarField,
    kernel: &Kernel,
    m: usize,
    x: &[f64],
    cfg: &QuadConfig,
) -> Result<QuadResult> {
    let n = u.dim;
    let psi_cfg = QuadConfig {
        abs_tol: cfg.abs_tol * 1e-2,
        rel_tol: cfg.rel_tol * 1e-1,
        max_depth: cfg.max_depth,
    };
    let integrand = |y: &[f64]| match psi_remainder(kernel, m, x, y, &psi_cfg) {
        Ok((v, _)) => u.eval(y) * v,
        Err(_) => f64::NAN,
    };
    if let Some(radius) = u.growth.compact_radius() {
        if radius <= 3.0 {
            return Ok(QuadResult::exact_zero());
        }
        return Ok(integrate_region(
            &integrand,
            &Region::annulus(vec![0.0; n], 3.0, radius),
            &radial_splits(u, None),
            cfg,
        ));
    }
    // |ψ(x,y)| is controlled by the m-th derivative majorant
    match kernel.tail_model(m) {
        TailModel::Compact { radius } => {
            let cut = 1.0 + radius;
            if cut <= 3.0 {
                return Ok(QuadResult::exact_zero());
            }
            Ok(integrate_region(
                &integrand,
                &Region::annulus(vec![0.0; n], 3.0, cut),
                &radial_splits(u, None),
                cfg,
            ))
        }
        TailModel::Power { p } => integrate_tail(
            &integrand,
            3.0,
            u.growth.exponent(),
            p,
            n,
            &radial_splits(u, None),
            cfg,
        ),
    }
}

/// Uniform evaluation grid in B₁: 33 points on [−0.96, 0.96] for n = 1, a
/// polar 13×13 design for n = 2.
pub fn b1_grid(n: usize) -> Vec<Vec<f64>> {
    match n {
        1 => (0..33).map(|i| vec![-0.96 + 0.06 * i as f64]).collect(),
        2 => {
            let mut pts = vec![vec![0.0, 0.0]];
            for j in 1..=12 {
                let rho = 0.96 * j as f64 / 12.0;
                for l in 0..13 {
                    let phi = 2.0 * std::f64::consts::PI * l as f64 / 13.0;
                    pts.push(vec![rho * phi.cos(), rho * phi.sin()]);
                }
            }
            pts
        }
        _ => panic!("grids restricted to n in {{1,2}}"),
    }
}

/// Full R→∞ record: truncated values, per-R polynomials, the extrapolated
/// limit, and tail bounds.
#[derive(Debug, Clone, Serialize)]
pub struct LimitReport {
    pub m: usize,
    pub r_schedule: Vec<f64>,
    pub grid: Vec<Vec<f64>>,
    /// f_R on the grid, one row per scheduled R.
    pub f_r_values: Vec<Vec<f64>>,
    pub f_r_errs: Vec<f64>,
    pub p_r: Vec<Polynomial>,
    /// f₁+f₂+f₃ on the grid: the R→∞ limit computed directly.
    pub f_limit: Vec<f64>,
    pub f_limit_err: Vec<f64>,
    pub tail_bounds: Vec<f64>,
    /// Sup-norm residuals of consecutive f_R differences after removing the
    /// best degree ≤ m−1 polynomial.
    pub residuals: Vec<f64>,
    pub converged: bool,
}

/// Runs the decomposition across the grid and schedule with the sharp
/// cut-off family.
pub fn limit_driver(
    u: &ScalarField,
    kernel: &Kernel,
    m: usize,
    grid: &[Vec<f64>],
    r_schedule: &[f64],
    cfg: &QuadConfig,
) -> Result<LimitReport> {
    if r_schedule.is_empty() || r_schedule[0] < 4.0 {
        return Err(Error::InvalidParam("schedule must start at R ≥ 4".into()));
    }
    if r_schedule.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParam("schedule must be increasing".into()));
    }
    check_tail_margin(u, kernel, m)?;
    let tail_check = mcond_tail(u, kernel, m, cfg)?;
    if !tail_check.converged {
        return Err(Error::HypothesisViolated(format!(
            "tail integrability check did not certify (value {}, err {})",
            tail_check.value, tail_check.err_est
        )));
    }

    let n = u.dim;
    // R-independent pieces per grid point
    let base: Vec<(QuadResult, QuadResult, QuadResult)> = grid
        .par_iter()
        .map(|x| {
            let f1 = f1_local(u, kernel, x, cfg)?;
            let ux = u.eval(x);
            let f2 = if ux == 0.0 {
                QuadResult::exact_zero()
            } else {
                kernel_tail_integral(kernel, x, cfg)?.scale(ux)
            };
            let f3 = f3_limit(u, kernel, m, x, cfg)?;
            Ok((f1, f2, f3))
        })
        .collect::<Result<_>>()?;

    let mut f_r_values: Vec<Vec<f64>> = Vec::with_capacity(r_schedule.len());
    let mut f_r_errs = Vec::with_capacity(r_schedule.len());
    let mut p_r = Vec::with_capacity(r_schedule.len());
    let mut tail_bounds = Vec::with_capacity(r_schedule.len());
    for &r in r_schedule {
        let tau = CutoffSpec::Sharp { r };
        let (theta, _terr) = theta_coefficients(u, kernel, &tau, m, cfg)?;
        let mut poly = Polynomial::zero(n, m as i32 - 1);
        for (alpha, t) in &theta {
            poly.set(alpha.clone(), -t);
        }
        p_r.push(poly);

        let row: Vec<QuadResult> = grid
            .par_iter()
            .zip(&base)
            .map(|(x, (f1, f2, _))| {
                let dec = decompose(u, kernel, &tau, m, x, cfg)?;
                // reuse the precomputed local parts; f* is the R-dependent one
                Ok(f1.combine(f2).combine(&dec.f_star))
            })
            .collect::<Result<_>>()?;
        f_r_errs.push(row.iter().map(|q| q.err_est).fold(0.0, f64::max));
        f_r_values.push(row.iter().map(|q| q.value).collect());
        tail_bounds.push(tail_bound(u, kernel, m, r, cfg)?.value);
    }

    let f_limit: Vec<f64> = base
        .iter()
        .map(|(f1, f2, f3)| f1.value + f2.value + f3.value)
        .collect();
    let f_limit_err: Vec<f64> = base
        .iter()
        .map(|(f1, f2, f3)| f1.err_est + f2.err_est + f3.err_est)
        .collect();

    // residuals of consecutive differences after polynomial subtraction
    let mut residuals = Vec::new();
    for w in f_r_values.windows(2) {
        let samples: Vec<(Vec<f64>, f64)> = grid
            .iter()
            .zip(w[1].iter().zip(w[0].iter()))
            .map(|(x, (b, a))| (x.clone(), b - a))
            .collect();
        let (_, resid) = crate::multiindex::best_poly_fit(&samples, n, m as i32 - 1)?;
        residuals.push(resid);
    }
    let conv_tol = (100.0 * cfg.abs_tol).max(10.0 * f_r_errs.iter().cloned().fold(0.0, f64::max));
    let tail_small = tail_bounds.last().map(|t| *t <= conv_tol.max(1e-6)).unwrap_or(false);
    let resid_ok = match residuals.len() {
        0 => true,
        1 => residuals[0] <= conv_tol.max(1e-6),
        _ => {
            let k = residuals.len();
            residuals[k - 1] <= conv_tol.max(1e-6) && residuals[k - 1] <= residuals[k - 2] * 1.5
        }
    };
    let converged = tail_small && resid_ok;

    Ok(LimitReport {
        m,
        r_schedule: r_schedule.to_vec(),
        grid: grid.to_vec(),
        f_r_values,
        f_r_errs,
        p_r,
        f_limit,
        f_limit_err,
        tail_bounds,
        residuals,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exprfunc::builtins;
    use crate::kernels::{build, KernelName, KernelSpec};

    fn cfg() -> QuadConfig {
        QuadConfig::default()
    }

    fn abel() -> Kernel {
        build(KernelSpec::new(KernelName::Abel, 1)).unwrap()
    }

    fn gauss() -> Kernel {
        build(KernelSpec::new(KernelName::Gauss, 1)).unwrap()
    }

    #[test]
    fn psi_vanishes_at_origin() {
        let k = gauss();
        for m in 1..=3 {
            let (v, _) = psi_remainder(&k, m, &[0.0], &[5.0], &cfg()).unwrap();
            assert_eq!(v, 0.0, "m={m}");
        }
    }

    #[test]
    fn psi_m0_is_negated_kernel() {
        // empty Taylor sum: K = −ψ, so f* = −∫τuK cancels the exterior term
        let k = gauss();
        let (v, e) = psi_remainder(&k, 0, &[0.5], &[5.0], &cfg()).unwrap();
        assert_eq!(v, -k.eval(&[0.5], &[5.0]));
        assert_eq!(e, 0.0);
    }

    #[test]
    fn psi_first_order_taylor_identity() {
        // m = 1: ψ(x,y) = −(K(x,y) − K(0,y)) by the fundamental theorem
        let k = gauss();
        let (x, y) = ([0.5], [5.0]);
        let (psi, _) = psi_remainder(&k, 1, &x, &y, &cfg()).unwrap();
        let expect = -(k.eval(&x, &y) - k.eval(&[0.0], &y));
        assert!((psi - expect).abs() <= 1e-9, "{psi} vs {expect}");
    }

    #[test]
    fn psi_second_order_taylor_identity() {
        // m = 2: K(x,y) = K(0,y) + ∂K(0,y)x − ψ(x,y)
        let k = gauss();
        let (x, y) = ([0.7], [4.0]);
        let (psi, _) = psi_remainder(&k, 2, &x, &y, &cfg()).unwrap();
        let d1 = k
            .deriv_x(&MultiIndex::new(vec![1]), &[0.0], &y)
            .unwrap();
        let expect = -(k.eval(&x, &y) - k.eval(&[0.0], &y) - d1 * x[0]);
        assert!((psi - expect).abs() <= 1e-9, "{psi} vs {expect}");
    }

    #[test]
    fn theta_vanishes_for_interior_support() {
        let u = builtins::bump(1);
        let (theta, _) = theta_coefficients(
            &u,
            &abel(),
            &CutoffSpec::Sharp { r: 10.0 },
            2,
            &cfg(),
        )
        .unwrap();
        for (_, v) in theta {
            assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn theta_constant_against_abel_antiderivative() {
        // θ₀ = ∫_{3<|y|<10} e^{−|y|} dy = 2(e⁻³ − e⁻¹⁰)
        let u = builtins::constant(1, 1.0);
        let (theta, _) =
            theta_coefficients(&u, &abel(), &CutoffSpec::Sharp { r: 10.0 }, 1, &cfg()).unwrap();
        let got = theta[&MultiIndex::new(vec![0])];
        let expect = 2.0 * ((-3.0f64).exp() - (-10.0f64).exp());
        assert!((got - expect).abs() <= 1e-10, "{got} vs {expect}");
    }

    #[test]
    fn theta_parity() {
        // odd u against an even profile: α=(0) vanishes, α=(1) does not
        let u = builtins::coordinate(1, 0);
        let (theta, _) =
            theta_coefficients(&u, &gauss(), &CutoffSpec::Sharp { r: 8.0 }, 2, &cfg()).unwrap();
        let t0 = theta[&MultiIndex::new(vec![0])];
        let t1 = theta[&MultiIndex::new(vec![1])];
        assert!(t0.abs() <= 1e-12, "{t0}");
        assert!(t1.abs() > 1e-8, "{t1}");
    }

    #[test]
    fn decompose_constant_m0_matches_exterior_tail() {
        // u ≡ c, m = 0, sharp χ_R: total = c·∫_{|y|>R} K(x,y) dy
        let c = 2.0;
        let u = builtins::constant(1, c);
        let k = abel();
        let x = [0.3];
        let dec = decompose(&u, &k, &CutoffSpec::Sharp { r: 6.0 }, 0, &x, &cfg()).unwrap();
        // e^{-|x−y|} beyond |y| = 6: e^{-(6−x)} + e^{-(6+x)}
        let expect = c * ((-(6.0 - x[0])).exp() + (-(6.0 + x[0])).exp());
        assert!(
            (dec.total - expect).abs() <= 10.0 * dec.err_total().max(1e-10),
            "{} vs {expect}",
            dec.total
        );
    }

    #[test]
    fn decompose_bump_equals_direct_operator() {
        let u = builtins::bump(1);
        let k = build(KernelSpec::frac_lap(1, 0.5)).unwrap();
        let x = [0.2];
        let tau = CutoffSpec::Sharp { r: 8.0 };
        let dec = decompose(&u, &k, &tau, 1, &x, &cfg()).unwrap();
        assert_eq!(dec.f_star.value, 0.0);
        assert!(dec.theta.iter().all(|(_, t)| *t == 0.0));
        let direct = direct_apply(&u, &k, &x, &cfg()).unwrap();
        assert!(
            (dec.total - direct.value).abs() <= 10.0 * (dec.err_total() + direct.err_est),
            "{} vs {}",
            dec.total,
            direct.value
        );
    }

    #[test]
    fn reconstruction_identity_smooth_cutoff() {
        let u = builtins::coordinate(1, 0);
        let k = build(KernelSpec::frac_lap(1, 0.75)).unwrap();
        let tau = CutoffSpec::Smooth { r: 12.0, width: 4.0 };
        let x = [0.5];
        let dec = decompose(&u, &k, &tau, 2, &x, &cfg()).unwrap();
        let direct = direct_cutoff_apply(&u, &k, &tau, &x, &cfg()).unwrap();
        assert!(
            (dec.total - direct.value).abs() <= 10.0 * (dec.err_total() + direct.err_est),
            "{} vs {}",
            dec.total,
            direct.value
        );
    }

    #[test]
    fn tail_bound_zero_beyond_support() {
        let u = builtins::bump(1);
        let k = gauss();
        let tb = tail_bound(&u, &k, 1, 4.0, &cfg()).unwrap();
        assert_eq!(tb.value, 0.0);
    }

    #[test]
    fn tail_bound_monotone_in_r() {
        let u = builtins::coordinate(1, 0);
        let k = build(KernelSpec::frac_lap(1, 0.75)).unwrap();
        let t4 = tail_bound(&u, &k, 2, 4.0, &cfg()).unwrap().value;
        let t8 = tail_bound(&u, &k, 2, 8.0, &cfg()).unwrap().value;
        assert!(t8 <= t4, "{t8} vs {t4}");
        assert!(t8 > 0.0);
    }

    #[test]
    fn limit_driver_bump_converges_immediately() {
        let u = builtins::bump(1);
        let k = build(KernelSpec::frac_lap(1, 0.5)).unwrap();
        let grid = b1_grid(1);
        let rep = limit_driver(&u, &k, 0, &grid, &[4.0, 8.0], &cfg()).unwrap();
        assert!(rep.converged);
        assert!(rep.tail_bounds.iter().all(|t| *t == 0.0));
        // f_R is independent of R for compactly supported u
        for (a, b) in rep.f_r_values[0].iter().zip(&rep.f_r_values[1]) {
            assert!((a - b).abs() <= 1e-8);
        }
        // and matches the direct operator
        for (x, f) in grid.iter().zip(&rep.f_limit) {
            let direct = direct_apply(&u, &k, x, &cfg()).unwrap();
            assert!((f - direct.value).abs() <= 1e-7, "{f} vs {}", direct.value);
        }
    }

    #[test]
    fn limit_driver_linear_growth_polynomial_drift() {
        // u(x) = x against s = 3/4: f_R drifts by a degree ≤ 1 polynomial
        // only; residual after the affine fit is controlled by the tail bound
        let u = builtins::coordinate(1, 0);
        let k = build(KernelSpec::frac_lap(1, 0.75)).unwrap();
        let grid = b1_grid(1);
        let rep = limit_driver(&u, &k, 2, &grid, &[8.0, 16.0, 32.0], &cfg()).unwrap();
        for (j, resid) in rep.residuals.iter().enumerate() {
            let bound = rep.tail_bounds[j] + 10.0 * rep.f_r_errs[j] + 1e-8;
            assert!(resid <= &bound, "residual {resid} exceeds bound {bound}");
        }
    }

    #[test]
    fn limit_driver_rejects_divergent_pair() {
        let u = builtins::coordinate(1, 0);
        let k = build(KernelSpec::frac_lap(1, 0.25)).unwrap();
        let grid = b1_grid(1);
        assert!(limit_driver(&u, &k, 0, &grid, &[4.0, 8.0], &cfg()).is_err());
    }

    #[test]
    fn plus_polynomial_invariance() {
        // adding a fixed degree ≤ m−1 polynomial to every f_R leaves the
        // post-fit residuals unchanged
        let u = builtins::coordinate(1, 0);
        let k = build(KernelSpec::frac_lap(1, 0.75)).unwrap();
        let grid = b1_grid(1);
        let rep = limit_driver(&u, &k, 2, &grid, &[8.0, 16.0], &cfg()).unwrap();
        let shift = |x: &[f64]| 3.0 - 2.0 * x[0];
        let samples: Vec<(Vec<f64>, f64)> = grid
            .iter()
            .enumerate()
            .map(|(i, x)| {
                let d =
                    (rep.f_r_values[1][i] + shift(x)) - (rep.f_r_values[0][i] + shift(x));
                (x.clone(), d)
            })
            .collect();
        let (_, resid) = crate::multiindex::best_poly_fit(&samples, 1, 1).unwrap();
        assert!((resid - rep.residuals[0]).abs() <= 1e-12);
    }

    #[test]
    fn higher_order_limits_differ_by_polynomial() {
        // limits at m and m+1 differ by a degree ≤ m polynomial on the grid
        let u = builtins::coordinate(1, 0);
        let k = build(KernelSpec::frac_lap(1, 0.75)).unwrap();
        let grid = b1_grid(1);
        let rep2 = limit_driver(&u, &k, 2, &grid, &[8.0], &cfg()).unwrap();
        let rep3 = limit_driver(&u, &k, 3, &grid, &[8.0], &cfg()).unwrap();
        let samples: Vec<(Vec<f64>, f64)> = grid
            .iter()
            .zip(rep2.f_limit.iter().zip(&rep3.f_limit))
            .map(|(x, (a, b))| (x.clone(), a - b))
            .collect();
        let (_, resid) = crate::multiindex::best_poly_fit(&samples, 1, 2).unwrap();
        assert!(resid <= 1e-6, "residual {resid}");
    }

    #[test]
    fn psi_bound_constant_calibrated_on_gauss_holds_elsewhere() {
        // |ψ(x,y)| ≤ C·sup_{|η|=m, z∈B₁}|∂^η K(z,y)|. The remainder formula
        // caps C at the number of multi-indices of order m (each term is a
        // weighted average of |∂^α K| along a segment in B₁); calibrate on
        // gauss, then fix C as the max of the measurement and that count.
        let cfg = cfg();
        let xs = [[-0.9], [-0.4], [0.0], [0.5], [0.9]];
        let ys = [[3.5], [5.0], [9.0]];
        let mut c_cal = 0.0f64;
        let g = gauss();
        for m in 1..=2usize {
            for x in &xs {
                for y in &ys {
                    let (psi, _) = psi_remainder(&g, m, x, y, &cfg).unwrap();
                    let maj = g.deriv_sup_majorant(m, y[0].abs());
                    if maj > 0.0 {
                        c_cal = c_cal.max(psi.abs() / maj);
                    }
                }
            }
        }
        let alpha_count = 1.0; // n = 1: a single α per order
        let c_fixed = c_cal.max(alpha_count);
        assert!(c_fixed <= 2.0, "fixed C = {c_fixed}");
        for kernel in [abel(), build(KernelSpec::frac_lap(1, 0.5)).unwrap()] {
            for m in 1..=2usize {
                for x in &xs {
                    for y in &ys {
                        let (psi, _) = psi_remainder(&kernel, m, x, y, &cfg).unwrap();
                        let maj = kernel.deriv_sup_majorant(m, y[0].abs());
                        assert!(
                            psi.abs() <= c_fixed * maj * 1.0001 + 1e-12,
                            "violation at m={m} x={x:?} y={y:?}: |ψ|={} bound={}",
                            psi.abs(),
                            c_fixed * maj
                        );
                    }
                }
            }
        }
    }
}
