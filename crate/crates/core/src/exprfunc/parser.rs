//! Recursive-descent parser for the CLI expression language.
//!
//! Grammar (standard precedence, `^` right-associative and tightest):
//!   expr   := term (('+' | '-') term)*
//!   term   := factor (('*' | '/') factor)*
//!   factor := '-' factor | power
//!   power  := atom ('^' factor)?
//!   atom   := number | 'x'k | fn '(' expr {',' expr} ')' | '(' expr ')'
//! Functions: exp, log, abs, sqrt, min, max, indicator(a, b) where the
//! indicator is 1 when a ≤ |x| ≤ b (norm of the evaluation point).

use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    /// 0-based coordinate index.
    Var(usize),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Exp(Box<Expr>),
    Log(Box<Expr>),
    Abs(Box<Expr>),
    Sqrt(Box<Expr>),
    Min(Box<Expr>, Box<Expr>),
    Max(Box<Expr>, Box<Expr>),
    /// 1 when lo ≤ |x| ≤ hi, else 0.
    Indicator(f64, f64),
}

impl Expr {
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        Ok(match self {
            Expr::Num(v) => *v,
            Expr::Var(i) => x[*i],
            Expr::Neg(e) => -e.eval(x)?,
            Expr::Add(a, b) => a.eval(x)? + b.eval(x)?,
            Expr::Sub(a, b) => a.eval(x)? - b.eval(x)?,
            Expr::Mul(a, b) => a.eval(x)? * b.eval(x)?,
            Expr::Div(a, b) => {
                let den = b.eval(x)?;
                if den == 0.0 {
                    return Err(Error::EvalDomain("division by zero".into()));
                }
                a.eval(x)? / den
            }
            Expr::Pow(a, b) => {
                let base = a.eval(x)?;
                let exp = b.eval(x)?;
                let v = base.powf(exp);
                if !v.is_finite() && base.is_finite() && exp.is_finite() {
                    return Err(Error::EvalDomain(format!("{base}^{exp} undefined")));
                }
                v
            }
            Expr::Exp(e) => e.eval(x)?.exp(),
            Expr::Log(e) => {
                let v = e.eval(x)?;
                if v <= 0.0 {
                    return Err(Error::EvalDomain(format!("log of {v}")));
                }
                v.ln()
            }
            Expr::Abs(e) => e.eval(x)?.abs(),
            Expr::Sqrt(e) => {
                let v = e.eval(x)?;
                if v < 0.0 {
                    return Err(Error::EvalDomain(format!("sqrt of {v}")));
                }
                v.sqrt()
            }
            Expr::Min(a, b) => a.eval(x)?.min(b.eval(x)?),
            Expr::Max(a, b) => a.eval(x)?.max(b.eval(x)?),
            Expr::Indicator(lo, hi) => {
                let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                if *lo <= r && r <= *hi {
                    1.0
                } else {
                    0.0
                }
            }
        })
    }

    /// True when the tree contains a non-smooth primitive.
    pub fn has_nonsmooth(&self) -> bool {
        match self {
            Expr::Num(_) | Expr::Var(_) => false,
            Expr::Abs(_) | Expr::Min(_, _) | Expr::Max(_, _) | Expr::Indicator(_, _) => true,
            Expr::Neg(e) | Expr::Exp(e) | Expr::Log(e) | Expr::Sqrt(e) => e.has_nonsmooth(),
            Expr::Add(a, b)
            | Expr::Sub(a, b)
            | Expr::Mul(a, b)
            | Expr::Div(a, b)
            | Expr::Pow(a, b) => a.has_nonsmooth() || b.has_nonsmooth(),
        }
    }

    /// Kink candidates contributed by primitives with known locations.
    pub fn kink_candidates(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.collect_kinks(&mut out);
        out.sort_by(|a, b| a.partial_cmp(b).unwrap());
        out.dedup();
        out
    }

    fn collect_kinks(&self, out: &mut Vec<f64>) {
        match self {
            Expr::Indicator(lo, hi) => {
                out.extend([*lo, *hi, -*lo, -*hi]);
            }
            Expr::Abs(e) => {
                // |x_i| kinks at the coordinate hyperplane through 0
                if matches!(**e, Expr::Var(_)) {
                    out.push(0.0);
                }
                e.collect_kinks(out);
            }
            Expr::Num(_) | Expr::Var(_) => {}
            Expr::Neg(e) | Expr::Exp(e) | Expr::Log(e) | Expr::Sqrt(e) => e.collect_kinks(out),
            Expr::Add(a, b)
            | Expr::Sub(a, b)
            | Expr::Mul(a, b)
            | Expr::Div(a, b)
            | Expr::Pow(a, b)
            | Expr::Min(a, b)
            | Expr::Max(a, b) => {
                a.collect_kinks(out);
                b.collect_kinks(out);
            }
        }
    }
}

impl fmt::Display for Expr {
    /// Canonical fully parenthesized form; reparses to an equal tree.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => write!(f, "{v}"),
            Expr::Var(i) => write!(f, "x{}", i + 1),
            Expr::Neg(e) => write!(f, "(-{e})"),
            Expr::Add(a, b) => write!(f, "({a} + {b})"),
            Expr::Sub(a, b) => write!(f, "({a} - {b})"),
            Expr::Mul(a, b) => write!(f, "({a} * {b})"),
            Expr::Div(a, b) => write!(f, "({a} / {b})"),
            Expr::Pow(a, b) => write!(f, "({a} ^ {b})"),
            Expr::Exp(e) => write!(f, "exp({e})"),
            Expr::Log(e) => write!(f, "log({e})"),
            Expr::Abs(e) => write!(f, "abs({e})"),
            Expr::Sqrt(e) => write!(f, "sqrt({e})"),
            Expr::Min(a, b) => write!(f, "min({a}, {b})"),
            Expr::Max(a, b) => write!(f, "max({a}, {b})"),
            Expr::Indicator(lo, hi) => write!(f, "indicator({lo}, {hi})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    Comma,
}

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn tokens(src: &'a str) -> Result<Vec<(Tok, usize)>> {
        let mut lx = Lexer {
            src: src.as_bytes(),
            pos: 0,
        };
        let mut out = Vec::new();
        while lx.pos < lx.src.len() {
            let start = lx.pos;
            let c = lx.src[lx.pos];
            match c {
                b' ' | b'\t' | b'\n' | b'\r' => {
                    lx.pos += 1;
                    continue;
                }
                b'+' => out.push((Tok::Plus, start)),
                b'-' => out.push((Tok::Minus, start)),
                b'*' => out.push((Tok::Star, start)),
                b'/' => out.push((Tok::Slash, start)),
                b'^' => out.push((Tok::Caret, start)),
                b'(' => out.push((Tok::LParen, start)),
                b')' => out.push((Tok::RParen, start)),
                b',' => out.push((Tok::Comma, start)),
                b'0'..=b'9' | b'.' => {
                    let mut end = lx.pos;
                    let mut seen_e = false;
                    while end < lx.src.len() {
                        let d = lx.src[end];
                        let ok = d.is_ascii_digit()
                            || d == b'.'
                            || d == b'e'
                            || d == b'E'
                            || (seen_e && (d == b'+' || d == b'-') && end == lx.pos + 1)
                            || ((d == b'+' || d == b'-')
                                && end > lx.pos
                                && (lx.src[end - 1] == b'e' || lx.src[end - 1] == b'E'));
                        if !ok {
                            break;
                        }
                        if d == b'e' || d == b'E' {
                            seen_e = true;
                        }
                        end += 1;
                    }
                    let text = std::str::from_utf8(&lx.src[lx.pos..end]).unwrap();
                    let v: f64 = text.parse().map_err(|_| Error::Parse {
                        offset: start,
                        msg: format!("bad number '{text}'"),
                    })?;
                    out.push((Tok::Num(v), start));
                    lx.pos = end;
                    continue;
                }
                b'a'..=b'z' | b'A'..=b'Z' | b'_' => {
                    let mut end = lx.pos;
                    while end < lx.src.len()
                        && (lx.src[end].is_ascii_alphanumeric() || lx.src[end] == b'_')
                    {
                        end += 1;
                    }
                    let text = std::str::from_utf8(&lx.src[lx.pos..end]).unwrap();
                    out.push((Tok::Ident(text.to_string()), start));
                    lx.pos = end;
                    continue;
                }
                other => {
                    return Err(Error::Parse {
                        offset: start,
                        msg: format!("unexpected character '{}'", other as char),
                    })
                }
            }
            lx.pos += 1;
        }
        Ok(out)
    }
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    i: usize,
    dim: usize,
    src_len: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.i).map(|(t, _)| t)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.i).map(|(_, o)| *o).unwrap_or(self.src_len)
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.i).map(|(t, _)| t.clone());
        self.i += 1;
        t
    }

    fn expect(&mut self, want: Tok) -> Result<()> {
        let off = self.offset();
        match self.bump() {
            Some(t) if t == want => Ok(()),
            got => Err(Error::Parse {
                offset: off,
                msg: format!("expected {want:?}, found {got:?}"),
            }),
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some(Tok::Plus) => {
                    self.bump();
                    lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Some(Tok::Minus) => {
                    self.bump();
                    lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.factor()?;
        loop {
            match self.peek() {
                Some(Tok::Star) => {
                    self.bump();
                    lhs = Expr::Mul(Box::new(lhs), Box::new(self.factor()?));
                }
                Some(Tok::Slash) => {
                    self.bump();
                    lhs = Expr::Div(Box::new(lhs), Box::new(self.factor()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn factor(&mut self) -> Result<Expr> {
        if matches!(self.peek(), Some(Tok::Minus)) {
            self.bump();
            return Ok(Expr::Neg(Box::new(self.factor()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if matches!(self.peek(), Some(Tok::Caret)) {
            self.bump();
            let exp = self.factor()?;
            return Ok(Expr::Pow(Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr> {
        let off = self.offset();
        match self.bump() {
            Some(Tok::Num(v)) => Ok(Expr::Num(v)),
            Some(Tok::LParen) => {
                let inner = self.expr()?;
                self.expect(Tok::RParen)?;
                Ok(inner)
            }
            Some(Tok::Ident(name)) => self.ident(&name, off),
            got => Err(Error::Parse {
                offset: off,
                msg: format!("expected value, found {got:?}"),
            }),
        }
    }

    fn ident(&mut self, name: &str, off: usize) -> Result<Expr> {
        if let Some(rest) = name.strip_prefix('x') {
            if let Ok(k) = rest.parse::<usize>() {
                if k >= 1 && k <= self.dim {
                    return Ok(Expr::Var(k - 1));
                }
                return Err(Error::Parse {
                    offset: off,
                    msg: format!("coordinate {name} outside x1..x{}", self.dim),
                });
            }
        }
        let mut args = self.call_args()?;
        let nargs = args.len();
        let want = move |k: usize| -> Result<()> {
            if nargs == k {
                Ok(())
            } else {
                Err(Error::Parse {
                    offset: off,
                    msg: format!("function expects {k} argument(s), found {nargs}"),
                })
            }
        };
        match name {
            "exp" => {
                want(1)?;
                Ok(Expr::Exp(Box::new(args.remove(0))))
            }
            "log" => {
                want(1)?;
                Ok(Expr::Log(Box::new(args.remove(0))))
            }
            "abs" => {
                want(1)?;
                Ok(Expr::Abs(Box::new(args.remove(0))))
            }
            "sqrt" => {
                want(1)?;
                Ok(Expr::Sqrt(Box::new(args.remove(0))))
            }
            "min" => {
                want(2)?;
                let b = args.remove(1);
                Ok(Expr::Min(Box::new(args.remove(0)), Box::new(b)))
            }
            "max" => {
                want(2)?;
                let b = args.remove(1);
                Ok(Expr::Max(Box::new(args.remove(0)), Box::new(b)))
            }
            "indicator" => {
                want(2)?;
                let lo = const_eval(&args[0], off)?;
                let hi = const_eval(&args[1], off)?;
                if lo < 0.0 || hi < lo {
                    return Err(Error::Parse {
                        offset: off,
                        msg: format!("indicator needs 0 ≤ lo ≤ hi, got ({lo}, {hi})"),
                    });
                }
                Ok(Expr::Indicator(lo, hi))
            }
            other => Err(Error::Parse {
                offset: off,
                msg: format!("unknown identifier '{other}'"),
            }),
        }
    }

    fn call_args(&mut self) -> Result<Vec<Expr>> {
        self.expect(Tok::LParen)?;
        let mut args = vec![self.expr()?];
        while matches!(self.peek(), Some(Tok::Comma)) {
            self.bump();
            args.push(self.expr()?);
        }
        self.expect(Tok::RParen)?;
        Ok(args)
    }
}

fn const_eval(e: &Expr, off: usize) -> Result<f64> {
    e.eval(&[]).map_err(|_| Error::Parse {
        offset: off,
        msg: "indicator bounds must be constant".into(),
    })
}

/// Parse an expression in coordinates x1..xn.
pub fn parse(src: &str, dim: usize) -> Result<Expr> {
    if src.trim().is_empty() {
        return Err(Error::Parse {
            offset: 0,
            msg: "empty expression".into(),
        });
    }
    let toks = Lexer::tokens(src)?;
    let mut p = Parser {
        toks,
        i: 0,
        dim,
        src_len: src.len(),
    };
    let e = p.expr()?;
    if p.i != p.toks.len() {
        return Err(Error::Parse {
            offset: p.offset(),
            msg: "trailing input".into(),
        });
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arithmetic() {
        let e = parse("x1^2 + 3", 1).unwrap();
        assert_eq!(e.eval(&[2.0]).unwrap(), 7.0);
    }

    #[test]
    fn exp_abs() {
        let e = parse("exp(-abs(x1))", 1).unwrap();
        assert_eq!(e.eval(&[0.0]).unwrap(), 1.0);
    }

    #[test]
    fn division_by_zero_reported() {
        let e = parse("x1/(x1-1)", 1).unwrap();
        assert!(e.eval(&[1.0]).is_err());
        assert_eq!(e.eval(&[2.0]).unwrap(), 2.0);
    }

    #[test]
    fn syntax_error_carries_offset() {
        match parse("x1 + + 2", 1) {
            Err(crate::error::Error::Parse { offset, .. }) => assert_eq!(offset, 5),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_identifier_rejected() {
        assert!(parse("foo(x1)", 1).is_err());
        assert!(parse("x3", 2).is_err());
    }

    #[test]
    fn precedence_and_right_assoc_pow() {
        let e = parse("2 + 3 * 2 ^ 2", 1).unwrap();
        assert_eq!(e.eval(&[0.0]).unwrap(), 14.0);
        let e = parse("2 ^ 3 ^ 2", 1).unwrap(); // 2^(3^2)
        assert_eq!(e.eval(&[0.0]).unwrap(), 512.0);
    }

    #[test]
    fn indicator_primitive() {
        let e = parse("x1^2 * indicator(0, 2)", 1).unwrap();
        assert_eq!(e.eval(&[1.5]).unwrap(), 2.25);
        assert_eq!(e.eval(&[2.5]).unwrap(), 0.0);
        assert_eq!(e.kink_candidates(), vec![-2.0, 0.0, 2.0]);
    }

    #[test]
    fn print_parse_round_trip() {
        for src in [
            "x1^2 + 3",
            "exp(-abs(x1))",
            "min(x1, max(1, x1*x1))",
            "2 ^ 3 ^ 2",
            "-x1 / (1 - x1)",
            "sqrt(abs(x1)) * indicator(1, 4)",
        ] {
            let e = parse(src, 1).unwrap();
            let printed = e.to_string();
            let reparsed = parse(&printed, 1).unwrap();
            assert_eq!(e, reparsed, "round trip failed for '{src}' → '{printed}'");
        }
    }
}
