//! Catalog of built-in function families plus construction from expression
//! strings and `name(key=value)` descriptors.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::exprfunc::{parser, GrowthClass, ScalarField};
use crate::multiindex::{monomial as eval_monomial, MultiIndex};

pub fn constant(dim: usize, c: f64) -> ScalarField {
    ScalarField::new(dim, format!("constant({c})"), move |_| c)
        .with_gradient(move |x| vec![0.0; x.len()])
        .with_theta(2.0)
        .with_growth(GrowthClass::Power { exponent: 0.0 })
}

pub fn coordinate(dim: usize, i: usize) -> ScalarField {
    assert!(i < dim);
    ScalarField::new(dim, format!("x{}", i + 1), move |x| x[i])
        .with_gradient(move |x| {
            let mut g = vec![0.0; x.len()];
            g[i] = 1.0;
            g
        })
        .with_theta(2.0)
        .with_growth(GrowthClass::Power { exponent: 1.0 })
}

pub fn monomial(alpha: MultiIndex) -> ScalarField {
    let dim = alpha.dim();
    let order = alpha.order() as f64;
    let name = format!("x^{alpha}");
    let a = alpha.clone();
    ScalarField::new(dim, name, move |x| eval_monomial(&a, x))
        .with_theta(2.0)
        .with_growth(GrowthClass::Power { exponent: order })
}

/// Smooth bump exp(−1/(1−|x|²)) supported in the closed unit ball.
pub fn bump(dim: usize) -> ScalarField {
    let field = ScalarField::new(dim, "bump", |x| {
        let r2: f64 = x.iter().map(|v| v * v).sum();
        if r2 < 1.0 {
            (-1.0 / (1.0 - r2)).exp()
        } else {
            0.0
        }
    })
    .with_theta(2.0)
    .with_growth(GrowthClass::Compact { radius: 1.0 });
    // smooth across |x| = 1, but the boundary layer is steep: keep the radius
    // as a quadrature split
    match dim {
        1 => field.with_kinks(vec![-1.0, 1.0]),
        _ => field.with_kinks(vec![1.0]),
    }
}

/// u_k(x) = k·x on (k, ∞), zero elsewhere (n = 1).
pub fn counterexample_uk(k: f64) -> Result<ScalarField> {
    if k <= 1.0 {
        return Err(Error::InvalidParam("counterexample_uk needs k > 1".into()));
    }
    let theta = if k >= 4.0 { 2.0 } else { 1.0 };
    Ok(
        ScalarField::new(1, format!("counterexample_uk({k})"), move |x| {
            if x[0] > k {
                k * x[0]
            } else {
                0.0
            }
        })
        .with_theta(theta)
        .with_growth(GrowthClass::Power { exponent: 1.0 })
        .with_kinks(vec![k]),
    )
}

/// (1 − |x|²)^s_+, the classical boundary-singular benchmark profile.
pub fn getoor(dim: usize, s: f64) -> Result<ScalarField> {
    if !(0.0 < s && s <= 1.0) {
        return Err(Error::InvalidParam(format!("getoor needs s ∈ (0,1], got {s}")));
    }
    let field = ScalarField::new(dim, format!("getoor({s})"), move |x| {
        let r2: f64 = x.iter().map(|v| v * v).sum();
        (1.0 - r2).max(0.0).powf(s)
    })
    .with_theta(s.min(1.0))
    .with_growth(GrowthClass::Compact { radius: 1.0 });
    match dim {
        1 => Ok(field.with_kinks(vec![-1.0, 1.0])),
        _ => Ok(field.with_kinks(vec![1.0])),
    }
}

/// 1 on the annulus r0 ≤ |x| ≤ r1.
pub fn indicator_annulus(dim: usize, r0: f64, r1: f64) -> Result<ScalarField> {
    if r0 < 0.0 || r1 < r0 {
        return Err(Error::InvalidParam(format!(
            "indicator_annulus needs 0 ≤ r0 ≤ r1, got ({r0}, {r1})"
        )));
    }
    let field = ScalarField::new(dim, format!("indicator_annulus({r0},{r1})"), move |x| {
        let r: f64 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if r0 <= r && r <= r1 {
            1.0
        } else {
            0.0
        }
    })
    .with_theta(if r0 == 0.0 && r1 >= 4.0 { 2.0 } else { 0.0 })
    .with_growth(GrowthClass::Compact { radius: r1 });
    match dim {
        1 => Ok(field.with_kinks(vec![-r1, -r0, r0, r1])),
        _ => Ok(field.with_kinks(vec![r0, r1])),
    }
}

/// Build a field from a builtin name and parameter map.
pub fn builtin(name: &str, params: &BTreeMap<String, f64>, dim: usize) -> Result<ScalarField> {
    let get = |key: &str| -> Result<f64> {
        params
            .get(key)
            .copied()
            .ok_or_else(|| Error::InvalidParam(format!("builtin {name} needs parameter {key}")))
    };
    match name {
        "constant" => Ok(constant(dim, get("c")?)),
        "coordinate" => {
            let i = params.get("i").copied().unwrap_or(1.0);
            let i = i as usize;
            if i < 1 || i > dim {
                return Err(Error::InvalidParam(format!("coordinate index {i} outside 1..{dim}")));
            }
            Ok(coordinate(dim, i - 1))
        }
        "monomial" => {
            let mut entries = Vec::with_capacity(dim);
            for i in 1..=dim {
                entries.push(params.get(&format!("a{i}")).copied().unwrap_or(0.0) as u32);
            }
            Ok(monomial(MultiIndex::new(entries)))
        }
        "bump" => Ok(bump(dim)),
        "counterexample_uk" => counterexample_uk(get("k")?),
        "getoor" => getoor(dim, get("s")?),
        "indicator_annulus" => indicator_annulus(dim, get("r0")?, get("r1")?),
        other => Err(Error::InvalidParam(format!("unknown builtin '{other}'"))),
    }
}

/// Parse either a builtin descriptor `name(k=10, s=0.5)` or a plain
/// expression string into a field.
pub fn field_from_str(src: &str, dim: usize) -> Result<ScalarField> {
    if let Some((name, rest)) = src.split_once('(') {
        let name = name.trim();
        if is_builtin_name(name) {
            let inner = rest.trim_end();
            let inner = inner.strip_suffix(')').ok_or_else(|| Error::Parse {
                offset: src.len(),
                msg: "missing ')' in builtin descriptor".into(),
            })?;
            let mut params = BTreeMap::new();
            for part in inner.split(',') {
                let part = part.trim();
                if part.is_empty() {
                    continue;
                }
                let (k, v) = part.split_once('=').ok_or_else(|| Error::Parse {
                    offset: 0,
                    msg: format!("expected key=value in '{part}'"),
                })?;
                let value: f64 = v.trim().parse().map_err(|_| Error::Parse {
                    offset: 0,
                    msg: format!("bad numeric value '{v}'"),
                })?;
                params.insert(k.trim().to_string(), value);
            }
            return builtin(name, &params, dim);
        }
    }
    if is_builtin_name(src.trim()) {
        return builtin(src.trim(), &BTreeMap::new(), dim);
    }
    expr_field(src, dim)
}

fn is_builtin_name(name: &str) -> bool {
    matches!(
        name,
        "constant" | "coordinate" | "monomial" | "bump" | "counterexample_uk" | "getoor"
            | "indicator_annulus"
    )
}

/// Wrap a parsed expression as a field. Evaluation domain errors surface as
/// NaN (the quadrature layer flags them); regularity metadata is
/// conservative and growth is estimated by sampling at large radii.
pub fn expr_field(src: &str, dim: usize) -> Result<ScalarField> {
    let ast = parser::parse(src, dim)?;
    let theta = if ast.has_nonsmooth() { 1.0 } else { 2.0 };
    let kinks = ast.kink_candidates();

    // sample |u| on large radii to estimate a power-growth envelope
    let mut exponent = 0.0f64;
    for &rho in &[1e2, 1e3, 1e4, 1e5] {
        for sign in [-1.0, 1.0] {
            let mut y = vec![0.0; dim];
            y[0] = sign * rho;
            if let Ok(v) = ast.eval(&y) {
                if v.abs() > 1.0 {
                    exponent = exponent.max(v.abs().ln() / rho.ln());
                }
            }
        }
    }
    let exponent = (exponent * 1.02).min(50.0).ceil().max(0.0);

    let ast_for_eval = ast.clone();
    Ok(ScalarField::new(dim, src.to_string(), move |x| {
        ast_for_eval.eval(x).unwrap_or(f64::NAN)
    })
    .with_theta(theta)
    .with_growth(GrowthClass::Power { exponent })
    .with_kinks(kinks))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_metadata() {
        let c = constant(2, 2.0);
        assert_eq!(c.eval(&[0.4, -0.8]), 2.0);
        assert_eq!(c.theta_class, 2.0);
        assert_eq!(c.growth.exponent(), 0.0);
    }

    #[test]
    fn counterexample_values() {
        let u = counterexample_uk(10.0).unwrap();
        assert_eq!(u.eval(&[20.0]), 200.0);
        assert_eq!(u.eval(&[5.0]), 0.0);
        assert_eq!(u.eval(&[-20.0]), 0.0);
        assert!(counterexample_uk(1.0).is_err());
    }

    #[test]
    fn getoor_values() {
        let g = getoor(1, 0.5).unwrap();
        assert_eq!(g.eval(&[0.0]), 1.0);
        assert_eq!(g.eval(&[1.0]), 0.0);
        assert_eq!(g.eval(&[-3.0]), 0.0);
        let inside = g.eval(&[0.6]);
        assert!((inside - 0.8).abs() < 1e-15);
    }

    #[test]
    fn getoor_boundary_hoelder_quotient_bounded() {
        // |u(x) − u(1)| / |x−1|^s stays bounded approaching the boundary
        let s = 0.5;
        let g = getoor(1, s).unwrap();
        for i in 1..40 {
            let d = 1e-6 * i as f64;
            let q = g.eval(&[1.0 - d]) / d.powf(s);
            assert!(q <= 1.5, "quotient {q} at distance {d}");
        }
    }

    #[test]
    fn builtin_descriptor_parsing() {
        let u = field_from_str("counterexample_uk(k=10)", 1).unwrap();
        assert_eq!(u.eval(&[20.0]), 200.0);
        let b = field_from_str("bump", 1).unwrap();
        assert!(b.eval(&[0.0]) > 0.0);
        let e = field_from_str("x1^2 + 1", 1).unwrap();
        assert_eq!(e.eval(&[2.0]), 5.0);
        assert!(field_from_str("nosuch(k=1)", 1).is_err());
    }

    #[test]
    fn expr_growth_estimate() {
        let u = expr_field("x1^2", 1).unwrap();
        assert_eq!(u.growth.exponent(), 3.0_f64.min(u.growth.exponent()).max(2.0));
        let d = expr_field("exp(-abs(x1))", 1).unwrap();
        assert_eq!(d.growth.exponent(), 0.0);
    }

    #[test]
    fn expr_domain_error_becomes_nan() {
        let u = expr_field("x1/(x1-1)", 1).unwrap();
        assert!(u.eval(&[1.0]).is_nan());
        assert_eq!(u.eval(&[2.0]), 2.0);
    }
}
