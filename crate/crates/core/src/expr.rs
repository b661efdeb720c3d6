//! A small closed arithmetic language for spectral functions `σ(λ)`, `a(λ)`.
//!
//! Supports constants, `lambda` (or `λ`), `+ - * / ^`, unary minus and the
//! functions `exp`, `log`, `abs`, `sqrt`. Derivatives are symbolic.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var,
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
    /// Derivative of `abs`; never produced by the parser.
    Sign(Box<Expr>),
}

use Expr::*;

fn b(e: Expr) -> Box<Expr> {
    Box::new(e)
}

impl Expr {
    pub fn parse(src: &str) -> Result<Expr> {
        let tokens = lex(src)?;
        let mut p = Parser { tokens, pos: 0, len: src.chars().count() };
        let e = p.expr()?;
        if let Some(t) = p.tokens.get(p.pos) {
            return Err(Error::Expression { column: t.column, message: format!("unexpected {:?}", t.kind) });
        }
        Ok(e)
    }

    pub fn constant(c: f64) -> Expr {
        Const(c)
    }

    pub fn var() -> Expr {
        Var
    }

    pub fn powf(self, p: f64) -> Expr {
        simplify(Pow(b(self), b(Const(p))))
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Const(c) => *c,
            Var => x,
            Neg(a) => -a.eval(x),
            Add(a, c) => a.eval(x) + c.eval(x),
            Sub(a, c) => a.eval(x) - c.eval(x),
            Mul(a, c) => a.eval(x) * c.eval(x),
            Div(a, c) => a.eval(x) / c.eval(x),
            Pow(a, c) => {
                let base = a.eval(x);
                match **c {
                    Const(p) if p.fract() == 0.0 && p.abs() < 64.0 => base.powi(p as i32),
                    _ => base.powf(c.eval(x)),
                }
            }
            Exp(a) => a.eval(x).exp(),
            Log(a) => a.eval(x).ln(),
            Abs(a) => a.eval(x).abs(),
            Sqrt(a) => a.eval(x).sqrt(),
            Sign(a) => {
                let v = a.eval(x);
                if v > 0.0 {
                    1.0
                } else if v < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn derivative(&self) -> Expr {
        simplify(self.diff())
    }

    fn diff(&self) -> Expr {
        match self {
            Const(_) => Const(0.0),
            Var => Const(1.0),
            Neg(a) => Neg(b(a.diff())),
            Add(a, c) => Add(b(a.diff()), b(c.diff())),
            Sub(a, c) => Sub(b(a.diff()), b(c.diff())),
            Mul(a, c) => Add(b(Mul(b(a.diff()), c.clone())), b(Mul(a.clone(), b(c.diff())))),
            Div(a, c) => Div(
                b(Sub(b(Mul(b(a.diff()), c.clone())), b(Mul(a.clone(), b(c.diff()))))),
                b(Pow(c.clone(), b(Const(2.0)))),
            ),
            Pow(a, c) => match **c {
                Const(p) => Mul(b(Mul(b(Const(p)), b(Pow(a.clone(), b(Const(p - 1.0)))))), b(a.diff())),
                _ => Mul(
                    b(self.clone()),
                    b(Add(b(Mul(b(c.diff()), b(Log(a.clone())))), b(Div(b(Mul(c.clone(), b(a.diff()))), a.clone())))),
                ),
            },
            Exp(a) => Mul(b(self.clone()), b(a.diff())),
            Log(a) => Div(b(a.diff()), a.clone()),
            Abs(a) => Mul(b(Sign(a.clone())), b(a.diff())),
            Sqrt(a) => Div(b(a.diff()), b(Mul(b(Const(2.0)), b(self.clone())))),
            Sign(_) => Const(0.0),
        }
    }

    /// `self ∘ inner`, substituting `inner` for the variable.
    pub fn compose(&self, inner: &Expr) -> Expr {
        simplify(self.subst(inner))
    }

    fn subst(&self, inner: &Expr) -> Expr {
        let s = |e: &Expr| b(e.subst(inner));
        match self {
            Const(c) => Const(*c),
            Var => inner.clone(),
            Neg(a) => Neg(s(a)),
            Add(a, c) => Add(s(a), s(c)),
            Sub(a, c) => Sub(s(a), s(c)),
            Mul(a, c) => Mul(s(a), s(c)),
            Div(a, c) => Div(s(a), s(c)),
            Pow(a, c) => Pow(s(a), s(c)),
            Exp(a) => Exp(s(a)),
            Log(a) => Log(s(a)),
            Abs(a) => Abs(s(a)),
            Sqrt(a) => Sqrt(s(a)),
            Sign(a) => Sign(s(a)),
        }
    }

    /// Arguments at whose zeros the expression may fail to be smooth.
    pub fn singular_arguments(&self) -> Vec<Expr> {
        let mut out = Vec::new();
        self.collect_singular(&mut out);
        out
    }

    fn collect_singular(&self, out: &mut Vec<Expr>) {
        match self {
            Const(_) | Var => {}
            Neg(a) | Exp(a) => a.collect_singular(out),
            Add(a, c) | Sub(a, c) | Mul(a, c) => {
                a.collect_singular(out);
                c.collect_singular(out);
            }
            Div(a, c) => {
                a.collect_singular(out);
                c.collect_singular(out);
                out.push((**c).clone());
            }
            Pow(a, c) => {
                a.collect_singular(out);
                c.collect_singular(out);
                match **c {
                    Const(p) if p.fract() == 0.0 && p >= 0.0 => {}
                    _ => out.push((**a).clone()),
                }
            }
            Log(a) | Abs(a) | Sqrt(a) | Sign(a) => {
                a.collect_singular(out);
                out.push((**a).clone());
            }
        }
    }

    /// Points in `(lo, hi)` where the expression may be non-smooth.
    pub fn breakpoints(&self, lo: f64, hi: f64) -> Vec<f64> {
        let mut pts = Vec::new();
        for arg in self.singular_arguments() {
            pts.extend(zeros_in(&arg, lo, hi));
        }
        pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        pts.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * a.abs().max(1.0));
        pts
    }
}

/// Zeros of `e` in `(lo, hi)` by sign-change scan and bisection.
fn zeros_in(e: &Expr, lo: f64, hi: f64) -> Vec<f64> {
    if let Const(_) = e {
        return Vec::new();
    }
    let lo_f = if lo.is_finite() { lo } else { -1e6 };
    let hi_f = if hi.is_finite() { hi } else { 1e6 };
    let n = 4096;
    let xs: Vec<f64> = (0..=n).map(|i| lo_f + (hi_f - lo_f) * i as f64 / n as f64).collect();
    let mut out = Vec::new();
    let mut prev = (xs[0], e.eval(xs[0]));
    if prev.1 == 0.0 && lo_f > lo {
        out.push(prev.0);
    }
    for &x in &xs[1..] {
        let v = e.eval(x);
        if v == 0.0 {
            if x < hi {
                out.push(x);
            }
        } else if prev.1.is_finite() && v.is_finite() && prev.1 != 0.0 && prev.1.signum() != v.signum() {
            let (mut a, mut fa, mut c) = (prev.0, prev.1, x);
            for _ in 0..200 {
                let m = 0.5 * (a + c);
                let fm = e.eval(m);
                if fm == 0.0 || (c - a) < 1e-15 * m.abs().max(1.0) {
                    a = m;
                    c = m;
                    break;
                }
                if fm.signum() == fa.signum() {
                    a = m;
                    fa = fm;
                } else {
                    c = m;
                }
            }
            out.push(0.5 * (a + c));
        }
        prev = (x, v);
    }
    out.retain(|&x| x > lo && x < hi);
    out
}

fn simplify(e: Expr) -> Expr {
    match e {
        Neg(a) => match simplify(*a) {
            Const(c) => Const(-c),
            Neg(x) => *x,
            x => Neg(b(x)),
        },
        Add(a, c) => match (simplify(*a), simplify(*c)) {
            (Const(x), Const(y)) => Const(x + y),
            (Const(z), x) | (x, Const(z)) if z == 0.0 => x,
            (x, y) => Add(b(x), b(y)),
        },
        Sub(a, c) => match (simplify(*a), simplify(*c)) {
            (Const(x), Const(y)) => Const(x - y),
            (x, Const(z)) if z == 0.0 => x,
            (Const(z), x) if z == 0.0 => Neg(b(x)),
            (x, y) => Sub(b(x), b(y)),
        },
        Mul(a, c) => match (simplify(*a), simplify(*c)) {
            (Const(x), Const(y)) => Const(x * y),
            (Const(z), _) | (_, Const(z)) if z == 0.0 => Const(0.0),
            (Const(o), x) | (x, Const(o)) if o == 1.0 => x,
            (x, y) => Mul(b(x), b(y)),
        },
        Div(a, c) => match (simplify(*a), simplify(*c)) {
            (Const(x), Const(y)) if y != 0.0 => Const(x / y),
            (Const(z), _) if z == 0.0 => Const(0.0),
            (x, Const(o)) if o == 1.0 => x,
            (x, y) => Div(b(x), b(y)),
        },
        Pow(a, c) => match (simplify(*a), simplify(*c)) {
            (_, Const(z)) if z == 0.0 => Const(1.0),
            (x, Const(o)) if o == 1.0 => x,
            (Const(x), Const(y)) if x > 0.0 => Const(x.powf(y)),
            (x, y) => Pow(b(x), b(y)),
        },
        Exp(a) => Exp(b(simplify(*a))),
        Log(a) => Log(b(simplify(*a))),
        Abs(a) => Abs(b(simplify(*a))),
        Sqrt(a) => Sqrt(b(simplify(*a))),
        Sign(a) => Sign(b(simplify(*a))),
        other => other,
    }
}

impl std::ops::Mul for Expr {
    type Output = Expr;

    fn mul(self, rhs: Expr) -> Expr {
        simplify(Mul(b(self), b(rhs)))
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Const(c) => {
                if *c < 0.0 {
                    write!(f, "({c:?})")
                } else {
                    write!(f, "{c:?}")
                }
            }
            Var => write!(f, "lambda"),
            Neg(a) => write!(f, "(-{a})"),
            Add(a, c) => write!(f, "({a} + {c})"),
            Sub(a, c) => write!(f, "({a} - {c})"),
            Mul(a, c) => write!(f, "({a} * {c})"),
            Div(a, c) => write!(f, "({a} / {c})"),
            Pow(a, c) => write!(f, "({a} ^ {c})"),
            Exp(a) => write!(f, "exp({a})"),
            Log(a) => write!(f, "log({a})"),
            Abs(a) => write!(f, "abs({a})"),
            Sqrt(a) => write!(f, "sqrt({a})"),
            // sign(u) = u / |u| away from zero
            Sign(a) => write!(f, "({a} / abs({a}))"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum TokenKind {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
}

#[derive(Debug, Clone)]
struct Token {
    kind: TokenKind,
    column: usize,
}

fn lex(src: &str) -> Result<Vec<Token>> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let column = i + 1;
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text: String = chars[start..i].iter().collect();
            let v = text
                .parse::<f64>()
                .map_err(|_| Error::Expression { column, message: format!("bad number '{text}'") })?;
            out.push(Token { kind: TokenKind::Num(v), column });
        } else if c.is_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Token { kind: TokenKind::Ident(chars[start..i].iter().collect()), column });
        } else if "+-*/^".contains(c) {
            out.push(Token { kind: TokenKind::Op(c), column });
            i += 1;
        } else if c == '(' {
            out.push(Token { kind: TokenKind::LParen, column });
            i += 1;
        } else if c == ')' {
            out.push(Token { kind: TokenKind::RParen, column });
            i += 1;
        } else {
            return Err(Error::Expression { column, message: format!("unexpected character '{c}'") });
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    len: usize,
}

impl Parser {
    fn peek(&self) -> Option<&TokenKind> {
        self.tokens.get(self.pos).map(|t| &t.kind)
    }

    fn column(&self) -> usize {
        self.tokens.get(self.pos).map(|t| t.column).unwrap_or(self.len + 1)
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        while let Some(TokenKind::Op(op @ ('+' | '-'))) = self.peek().cloned() {
            self.pos += 1;
            let rhs = self.term()?;
            lhs = if op == '+' { Add(b(lhs), b(rhs)) } else { Sub(b(lhs), b(rhs)) };
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        while let Some(TokenKind::Op(op @ ('*' | '/'))) = self.peek().cloned() {
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = if op == '*' { Mul(b(lhs), b(rhs)) } else { Div(b(lhs), b(rhs)) };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr> {
        if let Some(TokenKind::Op('-')) = self.peek() {
            self.pos += 1;
            return Ok(Neg(b(self.unary()?)));
        }
        if let Some(TokenKind::Op('+')) = self.peek() {
            self.pos += 1;
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if let Some(TokenKind::Op('^')) = self.peek() {
            self.pos += 1;
            let exp = self.unary()?;
            return Ok(Pow(b(base), b(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr> {
        let column = self.column();
        let tok =
            self.peek().cloned().ok_or(Error::Expression { column, message: "unexpected end of expression".into() })?;
        self.pos += 1;
        match tok {
            TokenKind::Num(v) => Ok(Const(v)),
            TokenKind::LParen => {
                let e = self.expr()?;
                self.expect_rparen()?;
                Ok(e)
            }
            TokenKind::Ident(name) => match name.as_str() {
                "lambda" | "λ" | "l" => Ok(Var),
                "pi" => Ok(Const(std::f64::consts::PI)),
                "exp" | "log" | "ln" | "abs" | "sqrt" => {
                    if self.peek() != Some(&TokenKind::LParen) {
                        return Err(Error::Expression {
                            column: self.column(),
                            message: format!("expected '(' after {name}"),
                        });
                    }
                    self.pos += 1;
                    let arg = b(self.expr()?);
                    self.expect_rparen()?;
                    Ok(match name.as_str() {
                        "exp" => Exp(arg),
                        "log" | "ln" => Log(arg),
                        "abs" => Abs(arg),
                        _ => Sqrt(arg),
                    })
                }
                other => Err(Error::Expression { column, message: format!("unknown identifier '{other}'") }),
            },
            other => Err(Error::Expression { column, message: format!("unexpected {other:?}") }),
        }
    }

    fn expect_rparen(&mut self) -> Result<()> {
        if self.peek() == Some(&TokenKind::RParen) {
            self.pos += 1;
            Ok(())
        } else {
            Err(Error::Expression { column: self.column(), message: "expected ')'".into() })
        }
    }
}
