//! The kernel zoo: radial translation-invariant kernels K(x,y) = φ(|x−y|)
//! with x-derivatives, integrability metadata, and numerical hypothesis
//! validation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::multiindex::MultiIndex;
use crate::quadrature::{self, QuadConfig, Region};

/// Decay model of a kernel (or of its x-derivatives) for tail certification.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TailModel {
    /// |K| ≲ r^(-p) for large r.
    Power { p: f64 },
    /// K vanishes for |x−y| ≥ radius.
    Compact { radius: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelName {
    Morse,
    Buckingham,
    Gauss,
    Abel,
    Mollifier,
    FracLap,
    FracLapComparable,
}

impl KernelName {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "morse" => Ok(Self::Morse),
            "buckingham" => Ok(Self::Buckingham),
            "gauss" => Ok(Self::Gauss),
            "abel" => Ok(Self::Abel),
            "mollifier" => Ok(Self::Mollifier),
            "frac_lap" => Ok(Self::FracLap),
            "frac_lap_comparable" => Ok(Self::FracLapComparable),
            other => Err(Error::InvalidParam(format!("unknown kernel '{other}'"))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Morse => "morse",
            Self::Buckingham => "buckingham",
            Self::Gauss => "gauss",
            Self::Abel => "abel",
            Self::Mollifier => "mollifier",
            Self::FracLap => "frac_lap",
            Self::FracLapComparable => "frac_lap_comparable",
        }
    }
}

/// Serializable kernel description (name + parameters).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    pub name: KernelName,
    pub dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none", rename = "Lambda")]
    pub lambda_upper: Option<f64>,
    /// Desingularization level: replaces K by min{1/ε, K}.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    /// Use the exact fractional-Laplacian normalization constant as λ = Λ.
    #[serde(default)]
    pub normalized: bool,
}

impl KernelSpec {
    pub fn new(name: KernelName, dim: usize) -> Self {
        Self {
            name,
            dim,
            s: None,
            lambda: None,
            lambda_upper: None,
            epsilon: None,
            normalized: false,
        }
    }

    pub fn frac_lap(dim: usize, s: f64) -> Self {
        Self {
            s: Some(s),
            ..Self::new(KernelName::FracLap, dim)
        }
    }

    pub fn frac_lap_normalized(dim: usize, s: f64) -> Self {
        Self {
            s: Some(s),
            normalized: true,
            ..Self::new(KernelName::FracLap, dim)
        }
    }

    pub fn desingularized(mut self, eps: f64) -> Self {
        self.epsilon = Some(eps);
        self
    }
}

/// Exact constant c(n,s) with (−Δ)^s u = c(n,s) P.V.∫ (u(x)−u(y))/|x−y|^{n+2s} dy.
///
/// c(n,s) = 4^s Γ(n/2+s) / (π^{n/2} |Γ(−s)|), |Γ(−s)| = Γ(1−s)/s.
pub fn frac_lap_constant(n: usize, s: f64) -> f64 {
    let num = 4f64.powf(s) * gamma(n as f64 / 2.0 + s) * s;
    let den = std::f64::consts::PI.powf(n as f64 / 2.0) * gamma(1.0 - s);
    num / den
}

/// Lanczos approximation of Γ(x) (g = 7, 9 coefficients).
pub fn gamma(x: f64) -> f64 {
    const G: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_59,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_571_6e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        std::f64::consts::PI / ((std::f64::consts::PI * x).sin() * gamma(1.0 - x))
    } else {
        let x = x - 1.0;
        let mut a = G[0];
        let t = x + 7.5;
        for (i, &g) in G.iter().enumerate().skip(1) {
            a += g / (x + i as f64);
        }
        (2.0 * std::f64::consts::PI).sqrt() * t.powf(x + 0.5) * (-t).exp() * a
    }
}

/// Immutable kernel with radial profile, derivatives and metadata.
#[derive(Debug, Clone)]
pub struct Kernel {
    pub spec: KernelSpec,
    pub dim: usize,
    /// σ with |K(x,y)| ≲ |x−y|^(−σ) near the diagonal (0 when bounded).
    pub singularity_order: f64,
    pub symmetric_in_z: bool,
    pub nonnegative: bool,
    /// Interval (lo, hi] of ϑ for which the near-diagonal integrability
    /// hypothesis holds; empty when lo ≥ hi.
    pub admissible_theta: (f64, f64),
    pub max_taylor_order: usize,
    /// Highest profile derivative with a closed form; beyond this the crate
    /// falls back to Richardson finite differences on the profile.
    analytic_profile_order: usize,
    lambda: f64,
    lambda_upper: f64,
    s: f64,
    epsilon: Option<f64>,
}

/// Build a kernel from its spec, validating parameters.
pub fn build(spec: KernelSpec) -> Result<Kernel> {
    if spec.dim == 0 || spec.dim > 2 {
        return Err(Error::InvalidParam(format!(
            "kernel dimension {} unsupported (need 1 or 2)",
            spec.dim
        )));
    }
    if let Some(eps) = spec.epsilon {
        if eps <= 0.0 {
            return Err(Error::InvalidParam("desingularization needs ε > 0".into()));
        }
    }
    let needs_s = matches!(
        spec.name,
        KernelName::FracLap | KernelName::FracLapComparable
    );
    let s = spec.s.unwrap_or(0.0);
    if needs_s && !(0.0 < s && s < 1.0) {
        return Err(Error::InvalidParam(format!("s = {s} outside (0,1)")));
    }
    let n = spec.dim;
    let (lambda, lambda_upper) = if needs_s {
        if spec.normalized {
            let c = frac_lap_constant(n, s);
            (c, c)
        } else {
            let lo = spec.lambda.unwrap_or(1.0);
            let hi = spec.lambda_upper.unwrap_or(lo);
            if lo <= 0.0 || hi < lo {
                return Err(Error::InvalidParam("need Λ ≥ λ > 0".into()));
            }
            (lo, hi)
        }
    } else {
        (1.0, 1.0)
    };

    let desing = spec.epsilon.is_some();
    let (sing, theta_lo, nonneg, analytic) = match spec.name {
        KernelName::Morse => (0.0, 0.0, false, 6),
        KernelName::Buckingham => {
            if desing {
                (0.0, 0.0, false, 6)
            } else {
                // near-diagonal |K| ~ r^{-6}: integrable against min{r^ϑ,1}
                // only when ϑ > 6 − n, which is empty for n ≤ 3
                (6.0, 6.0 - n as f64, false, 6)
            }
        }
        KernelName::Gauss => (0.0, 0.0, true, 4),
        KernelName::Abel => (0.0, 0.0, true, 6),
        KernelName::Mollifier => (0.0, 0.0, true, 0),
        KernelName::FracLap => {
            if desing {
                (0.0, 0.0, true, 6)
            } else {
                (n as f64 + 2.0 * s, 2.0 * s, true, 6)
            }
        }
        KernelName::FracLapComparable => {
            if desing {
                (0.0, 0.0, true, 1)
            } else {
                (n as f64 + 2.0 * s, 2.0 * s, true, 1)
            }
        }
    };

    Ok(Kernel {
        dim: n,
        singularity_order: sing,
        symmetric_in_z: true,
        nonnegative: nonneg,
        admissible_theta: (theta_lo, 2.0),
        max_taylor_order: 4,
        analytic_profile_order: analytic,
        lambda,
        lambda_upper,
        s,
        epsilon: spec.epsilon,
        spec,
    })
}

fn dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

impl Kernel {
    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        self.profile(dist(x, y))
    }

    /// Radial profile φ(r); K(x,y) = φ(|x−y|).
    pub fn profile(&self, r: f64) -> f64 {
        let raw = self.profile_raw(r);
        match self.epsilon {
            Some(eps) => raw.min(1.0 / eps),
            None => raw,
        }
    }

    fn profile_raw(&self, r: f64) -> f64 {
        match self.spec.name {
            KernelName::Morse => (-2.0 * (r - 1.0)).exp() - (-(r - 1.0)).exp(),
            KernelName::Buckingham => (-r).exp() - r.powi(-6),
            KernelName::Gauss => (-r * r).exp(),
            KernelName::Abel => (-r).exp(),
            KernelName::Mollifier => {
                if r < 1.0 {
                    (-1.0 / (1.0 - r * r)).exp()
                } else {
                    0.0
                }
            }
            KernelName::FracLap => self.lambda * r.powf(-(self.dim as f64 + 2.0 * self.s)),
            KernelName::FracLapComparable => {
                let q = self.dim as f64 + 2.0 * self.s;
                let blend = self.lambda + (self.lambda_upper - self.lambda) * r * r / (1.0 + r * r);
                blend * r.powf(-q)
            }
        }
    }

    /// k-th derivative of the radial profile, analytic where available and
    /// Richardson finite differences otherwise. Only meaningful for r away
    /// from the profile's singularity.
    pub fn profile_deriv(&self, k: usize, r: f64) -> f64 {
        if k == 0 {
            return self.profile(r);
        }
        if let Some(eps) = self.epsilon {
            // flat where the cap is active; underlying derivative elsewhere
            if self.profile_raw(r) >= 1.0 / eps {
                return 0.0;
            }
        }
        if k <= self.analytic_profile_order {
            self.profile_deriv_analytic(k, r)
        } else {
            profile_deriv_fd(&|t| self.profile(t), k, r)
        }
    }

    fn profile_deriv_analytic(&self, k: usize, r: f64) -> f64 {
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        match self.spec.name {
            KernelName::Morse => {
                let two = (-2.0f64).powi(k as i32) * (-2.0 * (r - 1.0)).exp();
                let one = sign * (-(r - 1.0)).exp();
                two - one
            }
            KernelName::Buckingham => {
                // d^k/dr^k r^{-6} = (-1)^k (5+k)!/5! r^{-(6+k)}
                let mut fall = 1.0;
                for i in 0..k {
                    fall *= 6.0 + i as f64;
                }
                sign * ((-r).exp() - fall * r.powi(-(6 + k as i32)))
            }
            KernelName::Gauss => {
                // d^k/dr^k e^{-r²} = (-1)^k H_k(r) e^{-r²} (physicists' Hermite)
                let h = match k {
                    1 => 2.0 * r,
                    2 => 4.0 * r * r - 2.0,
                    3 => 8.0 * r.powi(3) - 12.0 * r,
                    4 => 16.0 * r.powi(4) - 48.0 * r * r + 12.0,
                    _ => unreachable!(),
                };
                sign * h * (-r * r).exp()
            }
            KernelName::Abel => sign * (-r).exp(),
            KernelName::FracLap => {
                let q = self.dim as f64 + 2.0 * self.s;
                let mut fall = 1.0;
                for i in 0..k {
                    fall *= q + i as f64;
                }
                self.lambda * sign * fall * r.powf(-(q + k as f64))
            }
            KernelName::FracLapComparable => {
                let q = self.dim as f64 + 2.0 * self.s;
                // φ = ρ(r)·r^{-q}, ρ = λ + (Λ-λ) r²/(1+r²); k = 1 only
                let d = self.lambda_upper - self.lambda;
                let rho = self.lambda + d * r * r / (1.0 + r * r);
                let rho1 = d * 2.0 * r / ((1.0 + r * r) * (1.0 + r * r));
                rho1 * r.powf(-q) - q * rho * r.powf(-q - 1.0)
            }
            KernelName::Mollifier => unreachable!(),
        }
    }

    /// ∂^α_x K(x,y).
    ///
    /// For y away from the diagonal only; rejects evaluation at the
    /// singularity and orders beyond `max_taylor_order`.
    pub fn deriv_x(&self, alpha: &MultiIndex, x: &[f64], y: &[f64]) -> Result<f64> {
        let k = alpha.order() as usize;
        if k > self.max_taylor_order {
            return Err(Error::DerivOrder {
                requested: k,
                supported: self.max_taylor_order,
            });
        }
        let r = dist(x, y);
        if self.singularity_order > 0.0 && r < 1e-12 {
            return Err(Error::EvalDomain(
                "kernel derivative at the singular diagonal".into(),
            ));
        }
        if k == 0 {
            return Ok(self.profile(r));
        }
        match self.dim {
            1 => {
                let d = x[0] - y[0];
                let sgn: f64 = if d >= 0.0 { 1.0 } else { -1.0 };
                Ok(sgn.powi(k as i32) * self.profile_deriv(k, d.abs()))
            }
            2 => self.deriv_x_2d(alpha, x, y),
            _ => unreachable!(),
        }
    }

    fn deriv_x_2d(&self, alpha: &MultiIndex, x: &[f64], y: &[f64]) -> Result<f64> {
        let d = [x[0] - y[0], x[1] - y[1]];
        let r = (d[0] * d[0] + d[1] * d[1]).sqrt();
        let k = alpha.order() as usize;
        match k {
            1 => {
                let i = if alpha.entry(0) == 1 { 0 } else { 1 };
                Ok(self.profile_deriv(1, r) * d[i] / r)
            }
            2 => {
                let p1 = self.profile_deriv(1, r);
                let p2 = self.profile_deriv(2, r);
                let (i, j) = if alpha.entry(0) == 2 {
                    (0, 0)
                } else if alpha.entry(1) == 2 {
                    (1, 1)
                } else {
                    (0, 1)
                };
                let delta = if i == j { 1.0 } else { 0.0 };
                Ok(p2 * d[i] * d[j] / (r * r) + p1 * (delta / r - d[i] * d[j] / (r * r * r)))
            }
            _ => Ok(fd_multi_deriv(
                &|p: &[f64]| self.eval(p, y),
                alpha,
                x,
            )),
        }
    }

    /// sup over x ∈ B₁ of |∂^α_x K(x,y)| maximized over all |α| = m, via a
    /// 16-point design on the radial interval [|y|−1, |y|+1]. The endpoints
    /// are included, so the sup is exact for monotone profile derivatives.
    pub fn deriv_sup_majorant(&self, m: usize, y_norm: f64) -> f64 {
        if m == 0 {
            let mut best = 0.0f64;
            for i in 0..16 {
                let r = (y_norm - 1.0) + 2.0 * i as f64 / 15.0;
                if r > 1e-9 {
                    best = best.max(self.profile(r).abs());
                }
            }
            return best;
        }
        let mut best = 0.0f64;
        for i in 0..16 {
            let r = (y_norm - 1.0) + 2.0 * i as f64 / 15.0;
            if r <= 1e-9 {
                continue;
            }
            match self.dim {
                1 => best = best.max(self.profile_deriv(m, r).abs()),
                _ => {
                    // radial bound: |∂^α φ(|d|)| over |α| = m is controlled by
                    // the profile derivatives up to order m scaled by r powers
                    let mut acc = 0.0f64;
                    for k in 1..=m {
                        acc = acc.max(
                            self.profile_deriv(k, r).abs()
                                * r.powi(k as i32 - m as i32).min(1e300),
                        );
                    }
                    best = best.max(acc);
                }
            }
        }
        best
    }

    /// Decay model of sup_{|α|=order} |∂^α_x K(x,y)| in |y| for tail
    /// certification.
    pub fn tail_model(&self, deriv_order: usize) -> TailModel {
        match self.spec.name {
            KernelName::Mollifier => TailModel::Compact { radius: 1.0 },
            KernelName::FracLap | KernelName::FracLapComparable => TailModel::Power {
                p: self.dim as f64 + 2.0 * self.s + deriv_order as f64,
            },
            // exponentially decaying profiles: any power is a valid majorant,
            // certified through sampled constants
            KernelName::Morse | KernelName::Abel | KernelName::Gauss => TailModel::Power {
                p: self.dim as f64 + deriv_order as f64 + 8.0,
            },
            KernelName::Buckingham => TailModel::Power {
                p: 6.0 + deriv_order as f64,
            },
        }
    }

    /// (λ, s) when this is the undesingularized pure power profile
    /// λ·r^(−(n+2s)) with matching bounds.
    pub fn as_pure_power(&self) -> Option<(f64, f64)> {
        if self.spec.name == KernelName::FracLap
            && self.epsilon.is_none()
            && self.lambda == self.lambda_upper
        {
            Some((self.lambda, self.s))
        } else {
            None
        }
    }

    /// True when ϑ lies in the admissible near-diagonal interval.
    pub fn theta_admissible(&self, theta: f64) -> bool {
        let (lo, hi) = self.admissible_theta;
        if lo >= hi {
            return false;
        }
        if lo == 0.0 {
            (0.0..=hi).contains(&theta)
        } else {
            theta > lo && theta <= hi
        }
    }
}

/// k-th derivative of a scalar profile by central differences with one
/// Richardson level; h balances truncation against round-off.
fn profile_deriv_fd(f: &dyn Fn(f64) -> f64, k: usize, r: f64) -> f64 {
    fn diff(f: &dyn Fn(f64) -> f64, k: usize, r: f64, h: f64) -> f64 {
        if k == 0 {
            f(r)
        } else {
            (diff(f, k - 1, r + h, h) - diff(f, k - 1, r - h, h)) / (2.0 * h)
        }
    }
    let h = f64::EPSILON.powf(1.0 / (2.0 + k as f64)) * (1.0 + r.abs());
    let d1 = diff(f, k, r, h);
    let d2 = diff(f, k, r, h / 2.0);
    (4.0 * d2 - d1) / 3.0
}

/// Multi-index finite-difference derivative in x (each index one central
/// difference, with one Richardson level on the outermost).
fn fd_multi_deriv(f: &dyn Fn(&[f64]) -> f64, alpha: &MultiIndex, x: &[f64]) -> f64 {
    fn rec(f: &dyn Fn(&[f64]) -> f64, alpha: &[u32], x: &[f64], h: f64) -> f64 {
        match alpha.iter().position(|&a| a > 0) {
            None => f(x),
            Some(i) => {
                let mut lower = alpha.to_vec();
                lower[i] -= 1;
                let mut xp = x.to_vec();
                let mut xm = x.to_vec();
                xp[i] += h;
                xm[i] -= h;
                (rec(f, &lower, &xp, h) - rec(f, &lower, &xm, h)) / (2.0 * h)
            }
        }
    }
    let k = alpha.order() as f64;
    let scale = 1.0 + x.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let h = f64::EPSILON.powf(1.0 / (2.0 + k)) * scale;
    let d1 = rec(f, alpha.entries(), x, h);
    let d2 = rec(f, alpha.entries(), x, h / 2.0);
    (4.0 * d2 - d1) / 3.0
}

/// Numerical spot-check report for the kernel hypotheses.
#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub theta: f64,
    pub m: usize,
    /// min{|x−y|^ϑ,1}-weighted absolute integrals at sampled x ∈ B₁.
    pub locint_values: Vec<f64>,
    pub locint_converged: bool,
    pub symmetry_residual: f64,
    pub sign_violations: usize,
    pub sign_witness: Option<f64>,
    pub translation_residual: f64,
    /// Observed integrability agrees with the kernel's admissible-ϑ
    /// metadata.
    pub metadata_consistent: bool,
    /// FAIL when any numerical check exceeds tolerance (divergent weighted
    /// integral, asymmetry, sign mismatch, broken translation invariance).
    pub pass: bool,
}

/// Spot-check (locint), symmetry, sign and translation invariance on
/// deterministic seeded samples.
pub fn validate_hypotheses(
    kernel: &Kernel,
    theta: f64,
    m: usize,
    sample_budget: usize,
    seed: u64,
    cfg: &QuadConfig,
) -> Result<ValidationReport> {
    use rand::SeedableRng;
    if !(0.0..=2.0).contains(&theta) {
        return Err(Error::InvalidParam(format!("ϑ = {theta} outside [0,2]")));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let n = kernel.dim;

    // (locint) at a few sampled base points
    let xs: Vec<Vec<f64>> = (0..3.max(sample_budget / 64).min(8))
        .map(|_| random_in_ball(&mut rng, n, 0.9))
        .collect();
    let mut locint_values = Vec::new();
    let mut locint_converged = true;
    for x in &xs {
        let (value, converged) = locint_integral(kernel, theta, x, cfg);
        locint_values.push(value);
        locint_converged &= converged;
    }

    // symmetry in z
    let mut sym = 0.0f64;
    for _ in 0..sample_budget.max(16) {
        let x = random_in_ball(&mut rng, n, 0.95);
        let z = random_in_ball(&mut rng, n, 0.95);
        if z.iter().map(|v| v * v).sum::<f64>().sqrt() < 1e-3 {
            continue;
        }
        let plus: Vec<f64> = x.iter().zip(&z).map(|(a, b)| a + b).collect();
        let minus: Vec<f64> = x.iter().zip(&z).map(|(a, b)| a - b).collect();
        let kp = kernel.eval(&x, &plus);
        let km = kernel.eval(&x, &minus);
        sym = sym.max((kp - km).abs() / (1.0 + kp.abs()));
    }

    // sign on samples, recording a witness radius for sign-changing kernels
    let mut violations = 0usize;
    let mut witness = None;
    for i in 0..sample_budget.max(64) {
        let r = 0.05 + 10.0 * i as f64 / sample_budget.max(64) as f64;
        if kernel.profile(r) < 0.0 {
            violations += 1;
            witness.get_or_insert(r);
        }
    }

    // translation invariance K(x+h, y+h) = K(x,y)
    let mut trans = 0.0f64;
    for _ in 0..32 {
        let x = random_in_ball(&mut rng, n, 1.0);
        let y: Vec<f64> = random_in_ball(&mut rng, n, 1.0)
            .iter()
            .map(|v| v + 4.0)
            .collect();
        let h = random_in_ball(&mut rng, n, 2.0);
        let xs: Vec<f64> = x.iter().zip(&h).map(|(a, b)| a + b).collect();
        let ys: Vec<f64> = y.iter().zip(&h).map(|(a, b)| a + b).collect();
        let k0 = kernel.eval(&x, &y);
        trans = trans.max((kernel.eval(&xs, &ys) - k0).abs() / (1.0 + k0.abs()));
    }

    let sign_consistent = kernel.nonnegative == (violations == 0);
    let metadata_consistent = locint_converged == kernel.theta_admissible(theta);
    let pass = locint_converged
        && sym <= 1e-10
        && sign_consistent
        && trans <= 1e-12
        && locint_values.iter().all(|v| v.is_finite());

    Ok(ValidationReport {
        theta,
        m,
        locint_values,
        locint_converged,
        symmetry_residual: sym,
        sign_violations: violations,
        sign_witness: witness,
        translation_residual: trans,
        metadata_consistent,
        pass,
    })
}

/// ∫ min{|x−y|^ϑ,1}|K(x,y)| dy split into dyadic shells near the diagonal,
/// a middle annulus and a certified tail. Divergence near the diagonal shows
/// up as non-decaying shell contributions.
fn locint_integral(kernel: &Kernel, theta: f64, x: &[f64], cfg: &QuadConfig) -> (f64, bool) {
    let n = kernel.dim;
    let mut total = 0.0;
    let mut converged = true;

    // near-diagonal dyadic shells |x−y| ∈ [2^-(j+1), 2^-j]
    let mut shells = Vec::new();
    let mut prev = f64::INFINITY;
    let mut growing = 0;
    for j in 0..40 {
        let hi = 0.5f64.powi(j);
        let lo = hi / 2.0;
        let shell = quadrature::integrate_region(
            &|y: &[f64]| {
                let d = dist(x, y);
                d.powf(theta).min(1.0) * kernel.eval(x, y).abs()
            },
            &Region::annulus(x.to_vec(), lo, hi),
            &[],
            cfg,
        );
        shells.push(shell.value);
        total += shell.value;
        if shell.value > prev * 0.999 && shell.value > cfg.abs_tol {
            growing += 1;
            if growing >= 6 {
                converged = false;
                break;
            }
        } else {
            growing = 0;
        }
        if shell.value < cfg.abs_tol / 16.0 && j > 4 {
            break;
        }
        prev = shell.value;
    }

    // middle range and tail
    let mid = quadrature::integrate_region(
        &|y: &[f64]| {
            let d = dist(x, y);
            d.powf(theta).min(1.0) * kernel.eval(x, y).abs()
        },
        &Region::annulus(x.to_vec(), 1.0, 8.0),
        &[],
        cfg,
    );
    total += mid.value;
    match kernel.tail_model(0) {
        TailModel::Compact { .. } => {}
        TailModel::Power { p } => {
            if p > n as f64 {
                if let Ok(tail) = quadrature::integrate_tail(
                    &|y: &[f64]| kernel.eval(x, y).abs(),
                    8.0,
                    0.0,
                    p,
                    n,
                    &[],
                    cfg,
                ) {
                    total += tail.value;
                    converged &= tail.converged;
                }
            } else {
                converged = false;
            }
        }
    }
    (total, converged)
}

fn random_in_ball(rng: &mut impl rand::Rng, n: usize, radius: f64) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        if v.iter().map(|a| a * a).sum::<f64>() <= 1.0 {
            return v.iter().map(|a| a * radius).collect();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::multiindex::MultiIndex;

    fn k(name: KernelName, dim: usize) -> Kernel {
        build(KernelSpec::new(name, dim)).unwrap()
    }

    #[test]
    fn profile_values() {
        assert_eq!(k(KernelName::Morse, 1).profile(1.0), 0.0);
        assert_eq!(k(KernelName::Gauss, 1).profile(0.0), 1.0);
        let b = k(KernelName::Buckingham, 1).profile(1.0);
        assert!((b - ((-1.0f64).exp() - 1.0)).abs() < 1e-12, "{b}");
        let fl = build(KernelSpec::frac_lap(1, 0.5)).unwrap();
        assert!((fl.eval(&[0.0], &[2.0]) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(build(KernelSpec::frac_lap(1, 1.5)).is_err());
        assert!(build(KernelSpec::frac_lap(1, 0.0)).is_err());
        assert!(build(KernelSpec::new(KernelName::Gauss, 1).desingularized(0.0)).is_err());
        assert!(build(KernelSpec::new(KernelName::Gauss, 3)).is_err());
    }

    #[test]
    fn gauss_first_derivative() {
        // ∂_x e^{-(x-y)²} = -2(x-y)e^{-(x-y)²}; at (0,5): 10 e^{-25}
        let g = k(KernelName::Gauss, 1);
        let a = MultiIndex::new(vec![1]);
        let got = g.deriv_x(&a, &[0.0], &[5.0]).unwrap();
        let expect = 10.0 * (-25.0f64).exp();
        assert!(
            (got - expect).abs() <= 1e-6 * expect.abs(),
            "{got} vs {expect}"
        );
    }

    #[test]
    fn abel_zeroth_derivative() {
        let a = k(KernelName::Abel, 1);
        let got = a
            .deriv_x(&MultiIndex::new(vec![0]), &[0.5], &[4.0])
            .unwrap();
        assert!((got - (-3.5f64).exp()).abs() < 1e-14);
    }

    #[test]
    fn analytic_matches_finite_difference() {
        for name in [
            KernelName::Morse,
            KernelName::Gauss,
            KernelName::Abel,
            KernelName::Buckingham,
        ] {
            let kn = k(name, 1);
            for order in 1..=2usize {
                for r in [2.2, 3.7, 5.1] {
                    let analytic = kn.profile_deriv(order, r);
                    let fd = profile_deriv_fd(&|t| kn.profile(t), order, r);
                    assert!(
                        (analytic - fd).abs() <= 1e-5 * (1.0 + analytic.abs()),
                        "{name:?} order {order} r {r}: {analytic} vs {fd}"
                    );
                }
            }
        }
    }

    #[test]
    fn frac_lap_profile_derivs() {
        let fl = build(KernelSpec::frac_lap(1, 0.75)).unwrap();
        // φ(r) = r^{-2.5}; φ''(r) = 2.5·3.5·r^{-4.5}
        let got = fl.profile_deriv(2, 2.0);
        let expect = 2.5 * 3.5 * 2.0f64.powf(-4.5);
        assert!((got - expect).abs() < 1e-12 * expect);
    }

    #[test]
    fn deriv_order_capped() {
        let g = k(KernelName::Gauss, 1);
        assert!(g.deriv_x(&MultiIndex::new(vec![9]), &[0.0], &[5.0]).is_err());
    }

    #[test]
    fn two_dim_gradient_matches_fd() {
        let g = k(KernelName::Gauss, 2);
        let x = [0.3, -0.2];
        let y = [4.0, 1.0];
        for alpha in [MultiIndex::new(vec![1, 0]), MultiIndex::new(vec![0, 1])] {
            let analytic = g.deriv_x(&alpha, &x, &y).unwrap();
            let fd = fd_multi_deriv(&|p| g.eval(p, &y), &alpha, &x);
            assert!(
                (analytic - fd).abs() <= 1e-6 * (1.0 + analytic.abs()),
                "{alpha}: {analytic} vs {fd}"
            );
        }
    }

    #[test]
    fn sign_metadata() {
        for name in [
            KernelName::Gauss,
            KernelName::Abel,
            KernelName::Mollifier,
            KernelName::FracLap,
        ] {
            let spec = if name == KernelName::FracLap {
                KernelSpec::frac_lap(1, 0.5)
            } else {
                KernelSpec::new(name, 1)
            };
            assert!(build(spec).unwrap().nonnegative, "{name:?}");
        }
        assert!(!k(KernelName::Morse, 1).nonnegative);
        assert!(!k(KernelName::Buckingham, 1).nonnegative);
        // witness: both are negative somewhere
        assert!(k(KernelName::Morse, 1).profile(2.0) < 0.0);
        assert!(k(KernelName::Buckingham, 1).profile(1.0) < 0.0);
    }

    #[test]
    fn desingularized_caps_at_inverse_eps() {
        let fl = build(KernelSpec::frac_lap(1, 0.5).desingularized(0.01)).unwrap();
        assert_eq!(fl.profile(1e-6), 100.0);
        assert!((fl.profile(2.0) - 0.25).abs() < 1e-15);
        assert_eq!(fl.singularity_order, 0.0);
    }

    #[test]
    fn gamma_known_values() {
        assert!((gamma(1.0) - 1.0).abs() < 1e-12);
        assert!((gamma(0.5) - std::f64::consts::PI.sqrt()).abs() < 1e-12);
        assert!((gamma(5.0) - 24.0).abs() < 1e-10);
    }

    #[test]
    fn normalization_constant_half() {
        // c(1, 1/2) = 1/π
        let c = frac_lap_constant(1, 0.5);
        assert!((c - 1.0 / std::f64::consts::PI).abs() < 1e-12, "{c}");
    }

    #[test]
    fn validate_hypotheses_examples() {
        let cfg = crate::quadrature::QuadConfig::default();
        // s = 1/2 at ϑ = 2: the weighted integral is finite and its
        // near-diagonal part contributes ∫_{-1}^{1}|z|²|z|^{-2}dz = 2,
        // the mid annulus 2(1 − 1/8) and the tail 2/8, totalling 4
        let fl = build(KernelSpec::frac_lap(1, 0.5)).unwrap();
        let rep = validate_hypotheses(&fl, 2.0, 1, 128, 42, &cfg).unwrap();
        assert!(rep.pass, "{rep:?}");
        assert!(rep.metadata_consistent);
        for v in &rep.locint_values {
            assert!((v - 4.0).abs() <= 1e-2, "weighted integral {v}");
        }

        // bounded compactly supported kernel at ϑ = 0
        let moll = build(KernelSpec::new(KernelName::Mollifier, 1)).unwrap();
        let rep = validate_hypotheses(&moll, 0.0, 0, 128, 42, &cfg).unwrap();
        assert!(rep.pass, "{rep:?}");

        // ϑ below the integrability threshold: divergence detected
        let rep = validate_hypotheses(&fl, 0.5, 1, 128, 42, &cfg).unwrap();
        assert!(!rep.pass);
        assert!(!rep.locint_converged);
        assert!(rep.metadata_consistent);
    }

    #[test]
    fn theta_admissibility() {
        let fl = build(KernelSpec::frac_lap(1, 0.5)).unwrap();
        assert!(fl.theta_admissible(2.0));
        assert!(fl.theta_admissible(1.5));
        assert!(!fl.theta_admissible(1.0));
        let g = k(KernelName::Gauss, 1);
        assert!(g.theta_admissible(0.0));
        let b = k(KernelName::Buckingham, 1);
        assert!(!b.theta_admissible(2.0)); // empty interval in low dimension
        let bd = build(KernelSpec::new(KernelName::Buckingham, 1).desingularized(0.1)).unwrap();
        assert!(bd.theta_admissible(0.0));
    }
}
