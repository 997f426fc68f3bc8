//! All integration: adaptive Gauss–Kronrod panels on intervals, balls and
//! annuli in n ∈ {1,2}, symmetrized principal-value integrals near the
//! diagonal, infinite tails with certified remainders, and weighted unit
//! interval integrals.

use std::cell::Cell;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exprfunc::ScalarField;
use crate::kernels::Kernel;

/// 15-point Kronrod abscissae on [-1,1] (descending, last = center).
const XGK15: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_17,
    0.207_784_955_007_898_47,
    0.0,
];
const WGK15: [f64; 8] = [
    0.022_935_322_010_529_225,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG7: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_94,
    0.417_959_183_673_469_4,
];

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadConfig {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_depth: usize,
}

impl Default for QuadConfig {
    fn default() -> Self {
        Self {
            abs_tol: 1e-9,
            rel_tol: 1e-8,
            max_depth: 40,
        }
    }
}

impl QuadConfig {
    pub fn with_tols(abs_tol: f64, rel_tol: f64) -> Self {
        Self {
            abs_tol,
            rel_tol,
            ..Self::default()
        }
    }

    fn tolerance_for(&self, value: f64) -> f64 {
        self.abs_tol.max(self.rel_tol * value.abs())
    }
}

/// Value plus error estimate for every integral the crate computes.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct QuadResult {
    pub value: f64,
    pub err_est: f64,
    pub evaluations: usize,
    pub converged: bool,
}

impl QuadResult {
    pub fn exact_zero() -> Self {
        Self {
            value: 0.0,
            err_est: 0.0,
            evaluations: 0,
            converged: true,
        }
    }

    pub fn combine(&self, other: &QuadResult) -> QuadResult {
        QuadResult {
            value: self.value + other.value,
            err_est: self.err_est + other.err_est,
            evaluations: self.evaluations + other.evaluations,
            converged: self.converged && other.converged,
        }
    }

    pub fn scale(&self, s: f64) -> QuadResult {
        QuadResult {
            value: s * self.value,
            err_est: s.abs() * self.err_est,
            ..*self
        }
    }
}

/// Integration domains in n ∈ {1,2}.
#[derive(Debug, Clone)]
pub enum Region {
    Interval { a: f64, b: f64 },
    Ball { center: Vec<f64>, r: f64 },
    Annulus { center: Vec<f64>, r0: f64, r1: f64 },
    /// B_{r_outer}(0) minus B_{r_inner}(inner_center).
    BallMinusBall {
        r_outer: f64,
        inner_center: Vec<f64>,
        r_inner: f64,
    },
}

impl Region {
    pub fn interval(a: f64, b: f64) -> Self {
        Region::Interval { a, b }
    }

    pub fn ball(center: Vec<f64>, r: f64) -> Self {
        Region::Ball { center, r }
    }

    pub fn annulus(center: Vec<f64>, r0: f64, r1: f64) -> Self {
        Region::Annulus { center, r0, r1 }
    }

    fn dim(&self) -> usize {
        match self {
            Region::Interval { .. } => 1,
            Region::Ball { center, .. } | Region::Annulus { center, .. } => center.len(),
            Region::BallMinusBall { inner_center, .. } => inner_center.len(),
        }
    }
}

struct Panel {
    a: f64,
    b: f64,
    value: f64,
    err: f64,
    depth: usize,
}

fn rescale_error(err: f64, res_abs: f64, res_asc: f64) -> f64 {
    let mut scaled = err.abs();
    if res_asc != 0.0 && scaled != 0.0 {
        let scale = (200.0 * scaled / res_asc).powf(1.5);
        scaled = if scale < 1.0 { res_asc * scale } else { res_asc };
    }
    if res_abs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        scaled = scaled.max(50.0 * f64::EPSILON * res_abs);
    }
    scaled
}

fn gk15(f: &mut impl FnMut(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let f_center = f(center);

    let mut res_kronrod = f_center * WGK15[7];
    let mut res_gauss = f_center * WG7[3];
    let mut res_abs = res_kronrod.abs();
    let mut fv = [0.0f64; 15];
    fv[7] = f_center;

    for j in 0..7 {
        let abscissa = half * XGK15[j];
        let f1 = f(center - abscissa);
        let f2 = f(center + abscissa);
        fv[j] = f1;
        fv[14 - j] = f2;
        res_kronrod += WGK15[j] * (f1 + f2);
        res_abs += WGK15[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            res_gauss += WG7[j / 2] * (f1 + f2);
        }
    }

    let mean = res_kronrod * 0.5;
    let mut res_asc = WGK15[7] * (f_center - mean).abs();
    for j in 0..7 {
        res_asc += WGK15[j] * ((fv[j] - mean).abs() + (fv[14 - j] - mean).abs());
    }

    let value = res_kronrod * half;
    let err = rescale_error(
        (res_kronrod - res_gauss) * half,
        res_abs * half.abs(),
        res_asc * half.abs(),
    );
    (value, err)
}

/// Globally adaptive GK15 over a union of intervals, with deterministic
/// worst-panel bisection and a sorted final reduction.
fn adaptive_1d(
    f: &mut impl FnMut(f64) -> f64,
    segments: &[(f64, f64)],
    cfg: &QuadConfig,
) -> QuadResult {
    let evals = Cell::new(0usize);
    let mut call = |t: f64| {
        evals.set(evals.get() + 1);
        let v = f(t);
        if v.is_finite() {
            v
        } else {
            f64::NAN
        }
    };

    let mut panels: Vec<Panel> = Vec::new();
    for &(a, b) in segments {
        if b <= a {
            continue;
        }
        let (value, err) = gk15(&mut call, a, b);
        panels.push(Panel {
            a,
            b,
            value,
            err,
            depth: 0,
        });
    }
    if panels.is_empty() {
        return QuadResult::exact_zero();
    }

    let mut converged = true;
    loop {
        let total: f64 = panels.iter().map(|p| p.value).sum();
        let err: f64 = panels.iter().map(|p| p.err).sum();
        if !total.is_finite() {
            converged = false;
            break;
        }
        if err <= cfg.tolerance_for(total) {
            break;
        }
        // deterministic worst-first refinement
        let worst = panels
            .iter()
            .enumerate()
            .max_by(|(i, p), (j, q)| {
                p.err
                    .partial_cmp(&q.err)
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then(j.cmp(i))
            })
            .map(|(i, _)| i)
            .unwrap();
        if panels[worst].depth >= cfg.max_depth || panels.len() >= 4000 {
            converged = false;
            break;
        }
        let Panel { a, b, depth, .. } = panels[worst];
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            converged = false;
            break;
        }
        let (v1, e1) = gk15(&mut call, a, mid);
        let (v2, e2) = gk15(&mut call, mid, b);
        panels[worst] = Panel {
            a,
            b: mid,
            value: v1,
            err: e1,
            depth: depth + 1,
        };
        panels.push(Panel {
            a: mid,
            b,
            value: v2,
            err: e2,
            depth: depth + 1,
        });
    }

    panels.sort_by(|p, q| p.a.partial_cmp(&q.a).unwrap());
    let value: f64 = panels.iter().map(|p| p.value).sum();
    let err_est: f64 = panels.iter().map(|p| p.err).sum();
    QuadResult {
        value,
        err_est,
        evaluations: evals.get(),
        converged: converged && value.is_finite(),
    }
}

fn split_segments(a: f64, b: f64, splits: &[f64]) -> Vec<(f64, f64)> {
    let mut cuts: Vec<f64> = splits
        .iter()
        .copied()
        .filter(|&s| s > a && s < b)
        .collect();
    cuts.sort_by(|x, y| x.partial_cmp(y).unwrap());
    cuts.dedup();
    let mut segs = Vec::with_capacity(cuts.len() + 1);
    let mut lo = a;
    for c in cuts {
        segs.push((lo, c));
        lo = c;
    }
    segs.push((lo, b));
    segs
}

/// Adaptive integration over a region.
///
/// `splits` lists known non-smooth locations: absolute coordinates in 1D,
/// radii about the region's center in 2D.
pub fn integrate_region(
    f: &dyn Fn(&[f64]) -> f64,
    region: &Region,
    splits: &[f64],
    cfg: &QuadConfig,
) -> QuadResult {
    match (region.dim(), region) {
        (1, Region::Interval { a, b }) => {
            let mut g = |t: f64| f(&[t]);
            adaptive_1d(&mut g, &split_segments(*a, *b, splits), cfg)
        }
        (1, Region::Ball { center, r }) => {
            let mut g = |t: f64| f(&[t]);
            adaptive_1d(&mut g, &split_segments(center[0] - r, center[0] + r, splits), cfg)
        }
        (1, Region::Annulus { center, r0, r1 }) => {
            let c = center[0];
            let mut segs = split_segments(c - r1, c - r0, splits);
            segs.extend(split_segments(c + r0, c + r1, splits));
            let mut g = |t: f64| f(&[t]);
            adaptive_1d(&mut g, &segs, cfg)
        }
        (
            1,
            Region::BallMinusBall {
                r_outer,
                inner_center,
                r_inner,
            },
        ) => {
            let c = inner_center[0];
            let mut segs = split_segments(-r_outer, c - r_inner, splits);
            segs.extend(split_segments(c + r_inner, *r_outer, splits));
            let mut g = |t: f64| f(&[t]);
            adaptive_1d(&mut g, &segs, cfg)
        }
        (2, Region::Ball { center, r }) => radial_2d(f, center, 0.0, *r, splits, cfg),
        (2, Region::Annulus { center, r0, r1 }) => radial_2d(f, center, *r0, *r1, splits, cfg),
        (
            2,
            Region::BallMinusBall {
                r_outer,
                inner_center,
                r_inner,
            },
        ) => eccentric_2d(f, *r_outer, inner_center, *r_inner, cfg),
        _ => unreachable!("regions restricted to n in {{1,2}}"),
    }
}

/// 2D polar integration about `center`: outer adaptive in ρ, inner adaptive
/// in the angle.
fn radial_2d(
    f: &dyn Fn(&[f64]) -> f64,
    center: &[f64],
    r0: f64,
    r1: f64,
    radial_splits: &[f64],
    cfg: &QuadConfig,
) -> QuadResult {
    let inner_cfg = QuadConfig {
        abs_tol: cfg.abs_tol / (20.0 * (1.0 + r1 - r0)),
        rel_tol: cfg.rel_tol / 10.0,
        max_depth: cfg.max_depth,
    };
    let inner_err = Cell::new(0.0f64);
    let inner_evals = Cell::new(0usize);
    let cx = center[0];
    let cy = center[1];
    let mut h = |rho: f64| {
        let mut g = |phi: f64| f(&[cx + rho * phi.cos(), cy + rho * phi.sin()]);
        let segs = [
            (0.0, std::f64::consts::PI),
            (std::f64::consts::PI, 2.0 * std::f64::consts::PI),
        ];
        let inner = adaptive_1d(&mut g, &segs, &inner_cfg);
        inner_err.set(inner_err.get().max(inner.err_est));
        inner_evals.set(inner_evals.get() + inner.evaluations);
        rho * inner.value
    };
    let outer = adaptive_1d(&mut h, &split_segments(r0, r1, radial_splits), cfg);
    QuadResult {
        value: outer.value,
        err_est: outer.err_est + inner_err.get() * (r1 - r0) * (r0 + r1),
        evaluations: inner_evals.get(),
        converged: outer.converged,
    }
}

/// B_R(0) minus B_r(c): polar about c with an angle-dependent outer radius.
fn eccentric_2d(
    f: &dyn Fn(&[f64]) -> f64,
    r_outer: f64,
    c: &[f64],
    r_inner: f64,
    cfg: &QuadConfig,
) -> QuadResult {
    let c_norm2 = c[0] * c[0] + c[1] * c[1];
    assert!(
        c_norm2.sqrt() + r_inner < r_outer,
        "inner ball must sit inside the outer ball"
    );
    let inner_cfg = QuadConfig {
        abs_tol: cfg.abs_tol / (20.0 * (1.0 + r_outer)),
        rel_tol: cfg.rel_tol / 10.0,
        max_depth: cfg.max_depth,
    };
    let inner_err = Cell::new(0.0f64);
    let inner_evals = Cell::new(0usize);
    let mut h = |phi: f64| {
        let (cs, sn) = (phi.cos(), phi.sin());
        let proj = c[0] * cs + c[1] * sn;
        let rho_max = -proj + (proj * proj + r_outer * r_outer - c_norm2).sqrt();
        let mut g = |rho: f64| rho * f(&[c[0] + rho * cs, c[1] + rho * sn]);
        let inner = adaptive_1d(&mut g, &[(r_inner, rho_max)], &inner_cfg);
        inner_err.set(inner_err.get().max(inner.err_est));
        inner_evals.set(inner_evals.get() + inner.evaluations);
        inner.value
    };
    let segs = [
        (0.0, std::f64::consts::PI),
        (std::f64::consts::PI, 2.0 * std::f64::consts::PI),
    ];
    let outer = adaptive_1d(&mut h, &segs, cfg);
    QuadResult {
        value: outer.value,
        err_est: outer.err_est + inner_err.get() * 2.0 * std::f64::consts::PI,
        evaluations: inner_evals.get(),
        converged: outer.converged,
    }
}

/// ½∫_{B_r}(2u(x)−u(x+z)−u(x−z))K(x,x+z) dz by dyadic shells toward z = 0.
///
/// Equals the principal value of ∫_{B_r(x)}(u(x)−u(y))K(x,y) dy when the
/// kernel is symmetric in z. The shells stop once contributions fall below
/// the per-shell floor; a geometric extrapolation of the remaining shells is
/// added to the error estimate.
pub fn pv_second_difference(
    u: &ScalarField,
    kernel: &Kernel,
    x: &[f64],
    r: f64,
    cfg: &QuadConfig,
) -> Result<QuadResult> {
    if !kernel.symmetric_in_z {
        return Err(Error::HypothesisViolated(
            "principal-value symmetrization needs a z-symmetric kernel".into(),
        ));
    }
    if r <= 0.0 {
        return Err(Error::InvalidParam("pv radius must be positive".into()));
    }
    let n = u.dim;
    let ux = u.eval(x);
    let g = |z: &[f64]| {
        let xp: Vec<f64> = x.iter().zip(z).map(|(a, b)| a + b).collect();
        let xm: Vec<f64> = x.iter().zip(z).map(|(a, b)| a - b).collect();
        0.5 * (2.0 * ux - u.eval(&xp) - u.eval(&xm)) * kernel.eval(x, &xp)
    };

    let mut acc = QuadResult::exact_zero();
    let mut prev_mag = f64::INFINITY;
    let mut growing = 0usize;
    let mut small_streak = 0usize;
    let mut last_two = (0.0f64, 0.0f64);
    let mut converged = false;
    let origin = vec![0.0; n];

    let shell_cfg = QuadConfig {
        abs_tol: cfg.abs_tol / 8.0,
        rel_tol: cfg.rel_tol,
        max_depth: cfg.max_depth,
    };
    for j in 0..48 {
        let hi = r * 0.5f64.powi(j);
        let lo = hi / 2.0;
        let shell = integrate_region(&g, &Region::annulus(origin.clone(), lo, hi), &[], &shell_cfg);
        acc = acc.combine(&shell);
        let mag = shell.value.abs();
        last_two = (last_two.1, mag);

        if mag > prev_mag * 0.999 && mag > cfg.abs_tol {
            growing += 1;
            if growing >= 6 {
                return Ok(QuadResult {
                    converged: false,
                    ..acc
                });
            }
        } else {
            growing = 0;
        }

        let floor = cfg.tolerance_for(acc.value) / 8.0;
        if mag < floor {
            small_streak += 1;
            if small_streak >= 2 && j >= 4 {
                // geometric bound on the skipped shells
                let q = if last_two.0 > 0.0 {
                    (last_two.1 / last_two.0).clamp(0.0, 0.9)
                } else {
                    0.5
                };
                acc.err_est += mag * q / (1.0 - q);
                converged = true;
                break;
            }
        } else {
            small_streak = 0;
        }
        prev_mag = mag;
    }

    Ok(QuadResult {
        converged: converged && acc.converged,
        ..acc
    })
}

/// Integral of `f` over |y| > inner_radius with a certified power-law
/// remainder: requires |f(y)| ≤ C(1+|y|)^(growth−decay) beyond the inner
/// radius, with C estimated by sampling (and a safety factor of two).
///
/// `splits` are radii with known kinks of the integrand.
pub fn integrate_tail(
    f: &dyn Fn(&[f64]) -> f64,
    inner_radius: f64,
    growth: f64,
    decay: f64,
    dim: usize,
    splits: &[f64],
    cfg: &QuadConfig,
) -> Result<QuadResult> {
    let margin = decay - growth - dim as f64;
    if margin <= 0.0 {
        return Err(Error::DivergentTail(format!(
            "decay {decay} − growth {growth} must exceed the dimension {dim}"
        )));
    }

    // sample |f|·(1+|y|)^{decay-growth} on log-spaced radii (and a few
    // directions in 2D) to estimate the envelope constant; the window covers
    // all recorded kinks so far-out support is not missed
    let split_hi = splits.iter().fold(0.0f64, |a, s| a.max(s.abs()));
    let sample_hi = (10.0 * inner_radius).max(100.0).max(2.0 * split_hi);
    let mut c_env = 0.0f64;
    let mut evaluations = 0usize;
    for i in 0..64 {
        let t = i as f64 / 63.0;
        let rho = inner_radius * (sample_hi / inner_radius).powf(t);
        let dirs: &[&[f64]] = match dim {
            1 => &[&[1.0], &[-1.0]],
            _ => &[
                &[1.0, 0.0],
                &[-1.0, 0.0],
                &[0.0, 1.0],
                &[0.0, -1.0],
                &[std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2],
            ],
        };
        for d in dirs {
            let y: Vec<f64> = d.iter().map(|v| v * rho).collect();
            let val = f(&y).abs();
            evaluations += 1;
            if val.is_finite() {
                c_env = c_env.max(val * (1.0 + rho).powf(decay - growth));
            }
        }
    }
    c_env *= 2.0;

    let surface = match dim {
        1 => 2.0,
        _ => 2.0 * std::f64::consts::PI,
    };
    // rough scale from a moderate radius fixes the remainder target; slowly
    // decaying tails then run out to very large (geometrically panelled)
    // radii rather than failing the certificate
    let origin = vec![0.0; dim];
    let rough = integrate_region(
        f,
        &Region::annulus(origin.clone(), inner_radius, 100.0 * inner_radius),
        splits,
        &QuadConfig {
            abs_tol: cfg.abs_tol.max(1e-6),
            rel_tol: cfg.rel_tol.max(1e-4),
            max_depth: cfg.max_depth,
        },
    );
    let target = cfg.tolerance_for(rough.value) / 2.0;
    let r_floor = (inner_radius * 2.0).max(1.1 * split_hi);
    let r_star = if c_env == 0.0 {
        r_floor
    } else {
        let needed = (surface * c_env / (margin * target)).powf(1.0 / margin) - 1.0;
        needed.clamp(r_floor, 1e19)
    };
    let remainder = surface * c_env * (1.0 + r_star).powf(-margin) / margin;

    // geometric pre-splits give the adaptive pass sensible starting panels
    // (1D splits are absolute coordinates, so mirror them)
    let mut all_splits: Vec<f64> = splits.to_vec();
    let mut s = inner_radius * 2.0;
    while s < r_star {
        all_splits.push(s);
        if dim == 1 {
            all_splits.push(-s);
        }
        s *= 2.0;
    }

    let finite = integrate_region(
        f,
        &Region::annulus(vec![0.0; dim], inner_radius, r_star),
        &all_splits,
        cfg,
    );
    Ok(QuadResult {
        value: finite.value,
        err_est: finite.err_est + remainder,
        evaluations: finite.evaluations + evaluations + rough.evaluations,
        converged: finite.converged && remainder <= cfg.tolerance_for(finite.value).max(target * 2.0),
    })
}

/// ∫₀¹ (1−t)^(m−1) g(t) dt for m ≥ 1.
pub fn integrate_unit_interval_weighted(
    g: &dyn Fn(f64) -> f64,
    m: usize,
    cfg: &QuadConfig,
) -> QuadResult {
    assert!(m >= 1, "weighted unit-interval integral needs m >= 1");
    let mut f = |t: f64| (1.0 - t).powi(m as i32 - 1) * g(t);
    adaptive_1d(&mut f, &[(0.0, 1.0)], cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exprfunc::builtins;
    use crate::kernels::{build, KernelSpec};

    fn cfg() -> QuadConfig {
        QuadConfig::default()
    }

    #[test]
    fn cubic_monomial_exact() {
        let r = integrate_region(
            &|x: &[f64]| x[0] * x[0],
            &Region::interval(0.0, 1.0),
            &[],
            &cfg(),
        );
        assert!((r.value - 1.0 / 3.0).abs() <= 1e-12, "{}", r.value);
        assert!(r.converged);
    }

    #[test]
    fn gauss_panels_integrate_high_degree_polys() {
        // GK15 is exact far beyond degree 10; one panel suffices
        let r = integrate_region(
            &|x: &[f64]| 7.0 * x[0].powi(10) - x[0].powi(7) + 2.0,
            &Region::interval(-1.0, 1.0),
            &[],
            &cfg(),
        );
        let exact = 7.0 * 2.0 / 11.0 + 4.0;
        assert!((r.value - exact).abs() <= 1e-13 * exact.abs());
    }

    #[test]
    fn two_sided_annulus_inverse_square() {
        let r = integrate_region(
            &|y: &[f64]| y[0].powi(-2),
            &Region::annulus(vec![0.0], 3.0, 100.0),
            &[],
            &cfg(),
        );
        let exact = 2.0 * (1.0 / 3.0 - 1.0 / 100.0);
        assert!((r.value - exact).abs() <= 1e-9, "{} vs {exact}", r.value);
    }

    #[test]
    fn unit_disk_area() {
        let r = integrate_region(&|_: &[f64]| 1.0, &Region::ball(vec![0.0, 0.0], 1.0), &[], &cfg());
        assert!((r.value - std::f64::consts::PI).abs() <= 1e-8, "{}", r.value);
    }

    #[test]
    fn eccentric_region_area() {
        // |B_3| − |B_1(c)| = 9π − π = 8π
        let r = integrate_region(
            &|_: &[f64]| 1.0,
            &Region::BallMinusBall {
                r_outer: 3.0,
                inner_center: vec![0.5, -0.3],
                r_inner: 1.0,
            },
            &[],
            &cfg(),
        );
        assert!(
            (r.value - 8.0 * std::f64::consts::PI).abs() <= 1e-6,
            "{}",
            r.value
        );
    }

    #[test]
    fn pv_vanishes_on_constants_and_affine() {
        let k = build(KernelSpec::frac_lap(1, 0.5)).unwrap();
        let c = builtins::constant(1, 3.0);
        let r = pv_second_difference(&c, &k, &[0.2], 1.0, &cfg()).unwrap();
        assert!(r.value.abs() <= 1e-12);

        let lin = builtins::coordinate(1, 0);
        let r = pv_second_difference(&lin, &k, &[0.3], 1.0, &cfg()).unwrap();
        assert!(r.value.abs() <= 1e-11, "{}", r.value);
    }

    #[test]
    fn pv_smooth_case_matches_split_invariance() {
        // pv(B_r) + region(B_3 \ B_r) must agree across two choices of r
        let k = build(KernelSpec::frac_lap(1, 0.25)).unwrap();
        let u = builtins::bump(1);
        let x = [0.1];
        let total = |r: f64| {
            let pv = pv_second_difference(&u, &k, &x, r, &cfg()).unwrap();
            let ux = u.eval(&x);
            let reg = integrate_region(
                &|y: &[f64]| (ux - u.eval(y)) * k.eval(&x, y),
                &Region::BallMinusBall {
                    r_outer: 3.0,
                    inner_center: x.to_vec(),
                    r_inner: r,
                },
                &[-1.0, 1.0],
                &cfg(),
            );
            (pv.combine(&reg), pv.err_est + reg.err_est)
        };
        let (t1, e1) = total(1.0);
        let (t2, e2) = total(0.5);
        assert!(
            (t1.value - t2.value).abs() <= (e1 + e2).max(1e-9),
            "{} vs {}",
            t1.value,
            t2.value
        );
    }

    #[test]
    fn pv_detects_divergence() {
        // u with a kink at the base point against a supercritical kernel
        let k = build(KernelSpec::frac_lap(1, 0.75)).unwrap();
        let u = builtins::expr_field("abs(x1)", 1).unwrap();
        let r = pv_second_difference(&u, &k, &[0.0], 0.5, &cfg()).unwrap();
        assert!(!r.converged);
    }

    #[test]
    fn tail_inverse_square() {
        let r = integrate_tail(&|y: &[f64]| y[0].powi(-2), 3.0, 0.0, 2.0, 1, &[], &cfg()).unwrap();
        assert!((r.value - 2.0 / 3.0).abs() <= r.err_est.max(1e-8), "{}", r.value);
    }

    #[test]
    fn tail_exponential() {
        let r = integrate_tail(
            &|y: &[f64]| (-y[0].abs()).exp(),
            3.0,
            0.0,
            9.0,
            1,
            &[],
            &cfg(),
        )
        .unwrap();
        let exact = 2.0 * (-3.0f64).exp();
        assert!((r.value - exact).abs() <= r.err_est.max(1e-8), "{}", r.value);
    }

    #[test]
    fn tail_brackets_closed_forms() {
        for (decay, exact) in [(2.0, 2.0 / 3.0), (3.0, 1.0 / 9.0)] {
            let r = integrate_tail(
                &|y: &[f64]| y[0].abs().powf(-decay),
                3.0,
                0.0,
                decay,
                1,
                &[],
                &cfg(),
            )
            .unwrap();
            assert!(
                (r.value - exact).abs() <= r.err_est,
                "decay {decay}: {} ± {} vs {exact}",
                r.value,
                r.err_est
            );
        }
    }

    #[test]
    fn tail_refuses_divergent() {
        assert!(integrate_tail(&|y: &[f64]| 1.0 / y[0].abs(), 3.0, 0.0, 1.0, 1, &[], &cfg()).is_err());
    }

    #[test]
    fn weighted_unit_interval() {
        let r = integrate_unit_interval_weighted(&|_| 1.0, 2, &cfg());
        assert!((r.value - 0.5).abs() <= 1e-13);
        let r = integrate_unit_interval_weighted(&|t| t, 1, &cfg());
        assert!((r.value - 0.5).abs() <= 1e-13);
        let r = integrate_unit_interval_weighted(&|t| t.exp(), 1, &cfg());
        assert!((r.value - (std::f64::consts::E - 1.0)).abs() <= 1e-12);
    }

    #[test]
    fn odd_symmetry_annihilation() {
        // ∫_{B_r} z·|z|^{-(n+2s)} dz = 0 by symmetric panels
        let r = integrate_region(
            &|z: &[f64]| z[0] * z[0].abs().powf(-1.5),
            &Region::annulus(vec![0.0], 0.25, 1.0),
            &[],
            &cfg(),
        );
        assert!(r.value.abs() <= 1e-12, "{}", r.value);
    }
}
