//! Scalar expression language.
//!
//! Grammar, loosest to tightest binding:
//!
//! ```text
//! sum     := product (('+' | '-') product)*
//! product := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := atom ('^' exponent)?
//! exponent:= '-' exponent | power          (right-associative)
//! atom    := number | ident | ident '(' sum ')' | '(' sum ')'
//! ```
//!
//! Exponents must be free of symbols; `a^b` with symbolic `b` is written
//! `exp(b*ln(a))`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::jet::Jet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Func {
    Exp,
    Ln,
    Sin,
    Cos,
    Sqrt,
}

impl Func {
    pub fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "exp" => Func::Exp,
            "ln" => Func::Ln,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "sqrt" => Func::Sqrt,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Ln => "ln",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Sqrt => "sqrt",
        }
    }

    /// `f, f', f'', f'''` at `x`, or `None` outside the real domain.
    fn derivatives(self, x: f64) -> Option<[f64; 4]> {
        match self {
            Func::Exp => {
                let e = x.exp();
                Some([e, e, e, e])
            }
            Func::Ln => {
                if x <= 0.0 {
                    return None;
                }
                let r = 1.0 / x;
                Some([x.ln(), r, -r * r, 2.0 * r * r * r])
            }
            Func::Sin => {
                let (s, c) = x.sin_cos();
                Some([s, c, -s, -c])
            }
            Func::Cos => {
                let (s, c) = x.sin_cos();
                Some([c, -s, -c, s])
            }
            Func::Sqrt => {
                if x <= 0.0 {
                    return None;
                }
                let s = x.sqrt();
                Some([s, 0.5 / s, -0.25 / (s * x), 0.375 / (s * x * x)])
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Sym(String),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    /// Exponent is symbol-free.
    Pow(Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("syntax error at offset {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown function `{name}` at offset {offset}")]
    UnknownFunction { offset: usize, name: String },
    #[error("non-constant exponent at offset {offset}")]
    NonConstantExponent { offset: usize },
}

impl ParseError {
    pub fn offset(&self) -> usize {
        match self {
            ParseError::Syntax { offset, .. }
            | ParseError::UnknownFunction { offset, .. }
            | ParseError::NonConstantExponent { offset } => *offset,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("domain error in `{expr}` at {point}: {reason}")]
    Domain {
        expr: String,
        point: String,
        reason: String,
    },
    #[error("unbound symbol `{0}`")]
    Unbound(String),
}

// ---------------------------------------------------------------------------
// construction helpers
//
// Smart constructors fold constant operands and the identities 0 and 1.

// Smart constructors named after the node they build; not operator impls.
#[allow(clippy::should_implement_trait)]
impl Expr {
    pub fn c(v: f64) -> Expr {
        Expr::Const(v)
    }

    pub fn sym(name: impl Into<String>) -> Expr {
        Expr::Sym(name.into())
    }

    fn as_const(&self) -> Option<f64> {
        match self {
            Expr::Const(v) => Some(*v),
            _ => None,
        }
    }

    pub fn add(a: Expr, b: Expr) -> Expr {
        match (a.as_const(), b.as_const()) {
            (Some(x), Some(y)) => Expr::Const(x + y),
            (Some(0.0), _) => b,
            (_, Some(0.0)) => a,
            _ => match b {
                Expr::Neg(nb) => Expr::Sub(Box::new(a), nb),
                b => Expr::Add(Box::new(a), Box::new(b)),
            },
        }
    }

    pub fn sub(a: Expr, b: Expr) -> Expr {
        match (a.as_const(), b.as_const()) {
            (Some(x), Some(y)) => Expr::Const(x - y),
            (_, Some(0.0)) => a,
            (Some(0.0), _) => Expr::neg(b),
            _ => match b {
                Expr::Neg(nb) => Expr::Add(Box::new(a), nb),
                b => Expr::Sub(Box::new(a), Box::new(b)),
            },
        }
    }

    pub fn mul(a: Expr, b: Expr) -> Expr {
        match (a.as_const(), b.as_const()) {
            (Some(x), Some(y)) => Expr::Const(x * y),
            (Some(x), _) | (_, Some(x)) if x == 0.0 => Expr::Const(0.0),
            (Some(1.0), _) => b,
            (_, Some(1.0)) => a,
            _ => match (a, b) {
                (Expr::Neg(x), y) => Expr::neg(Expr::mul(*x, y)),
                (x, Expr::Neg(y)) => Expr::neg(Expr::mul(x, *y)),
                (x, y) => Expr::Mul(Box::new(x), Box::new(y)),
            },
        }
    }

    pub fn div(a: Expr, b: Expr) -> Expr {
        match (a.as_const(), b.as_const()) {
            (Some(x), Some(y)) if y != 0.0 => Expr::Const(x / y),
            (_, Some(1.0)) => a,
            (Some(0.0), _) => Expr::Const(0.0),
            _ => Expr::Div(Box::new(a), Box::new(b)),
        }
    }

    pub fn neg(a: Expr) -> Expr {
        match a {
            Expr::Const(v) => Expr::Const(if v == 0.0 { 0.0 } else { -v }),
            Expr::Neg(inner) => *inner,
            other => Expr::Neg(Box::new(other)),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Expr::Const(v) if *v == 0.0)
    }

    /// Sorted set of symbol names.
    pub fn symbols(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_symbols(&mut out);
        out
    }

    fn collect_symbols(&self, out: &mut BTreeSet<String>) {
        match self {
            Expr::Const(_) => {}
            Expr::Sym(s) => {
                out.insert(s.clone());
            }
            Expr::Neg(a) | Expr::Call(_, a) => a.collect_symbols(out),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) | Expr::Pow(a, b) => {
                a.collect_symbols(out);
                b.collect_symbols(out);
            }
        }
    }

    /// Replace every symbol found in `map` by the mapped expression.
    pub fn substitute(&self, map: &BTreeMap<String, Expr>) -> Expr {
        match self {
            Expr::Const(v) => Expr::Const(*v),
            Expr::Sym(s) => map.get(s).cloned().unwrap_or_else(|| Expr::Sym(s.clone())),
            Expr::Neg(a) => Expr::Neg(Box::new(a.substitute(map))),
            Expr::Call(f, a) => Expr::Call(*f, Box::new(a.substitute(map))),
            Expr::Add(a, b) => Expr::Add(Box::new(a.substitute(map)), Box::new(b.substitute(map))),
            Expr::Sub(a, b) => Expr::Sub(Box::new(a.substitute(map)), Box::new(b.substitute(map))),
            Expr::Mul(a, b) => Expr::Mul(Box::new(a.substitute(map)), Box::new(b.substitute(map))),
            Expr::Div(a, b) => Expr::Div(Box::new(a.substitute(map)), Box::new(b.substitute(map))),
            Expr::Pow(a, b) => Expr::Pow(Box::new(a.substitute(map)), b.clone()),
        }
    }
}

impl std::str::FromStr for Expr {
    type Err = ParseError;
    fn from_str(s: &str) -> Result<Expr, ParseError> {
        parse(s)
    }
}

// ---------------------------------------------------------------------------
// lexer

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
    End,
}

fn lex(text: &str) -> Result<Vec<(Tok, usize)>, ParseError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        let tok = match c {
            b'+' => Tok::Plus,
            b'-' => Tok::Minus,
            b'*' => Tok::Star,
            b'/' => Tok::Slash,
            b'^' => Tok::Caret,
            b'(' => Tok::LParen,
            b')' => Tok::RParen,
            b'0'..=b'9' | b'.' => {
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                    i += 1;
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        while j < bytes.len() && bytes[j].is_ascii_digit() {
                            j += 1;
                        }
                        i = j;
                    }
                }
                let lit = &text[start..i];
                let v: f64 = lit.parse().map_err(|_| ParseError::Syntax {
                    offset: start,
                    message: format!("malformed number `{lit}`"),
                })?;
                out.push((Tok::Num(v), start));
                continue;
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push((Tok::Ident(text[start..i].to_string()), start));
                continue;
            }
            _ => {
                let ch = text[start..].chars().next().unwrap_or('?');
                return Err(ParseError::Syntax {
                    offset: start,
                    message: format!("unexpected character `{ch}`"),
                });
            }
        };
        out.push((tok, start));
        i += 1;
    }
    out.push((Tok::End, text.len()));
    Ok(out)
}

// ---------------------------------------------------------------------------
// parser

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn offset(&self) -> usize {
        self.toks[self.pos].1
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].0.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<(), ParseError> {
        if *self.peek() == want {
            self.bump();
            Ok(())
        } else {
            Err(self.unexpected(what))
        }
    }

    fn unexpected(&self, what: &str) -> ParseError {
        let found = match self.peek() {
            Tok::End => "end of input".to_string(),
            t => format!("{t:?}"),
        };
        ParseError::Syntax {
            offset: self.offset(),
            message: format!("expected {what}, found {found}"),
        }
    }

    fn sum(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.product()?;
        loop {
            match self.peek() {
                Tok::Plus => {
                    self.bump();
                    lhs = Expr::Add(Box::new(lhs), Box::new(self.product()?));
                }
                Tok::Minus => {
                    self.bump();
                    lhs = Expr::Sub(Box::new(lhs), Box::new(self.product()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn product(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            match self.peek() {
                Tok::Star => {
                    self.bump();
                    lhs = Expr::Mul(Box::new(lhs), Box::new(self.unary()?));
                }
                Tok::Slash => {
                    self.bump();
                    lhs = Expr::Div(Box::new(lhs), Box::new(self.unary()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if *self.peek() == Tok::Minus {
            self.bump();
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        if *self.peek() != Tok::Caret {
            return Ok(base);
        }
        self.bump();
        let at = self.offset();
        let exponent = self.exponent()?;
        if !exponent.symbols().is_empty() {
            return Err(ParseError::NonConstantExponent { offset: at });
        }
        Ok(Expr::Pow(Box::new(base), Box::new(exponent)))
    }

    fn exponent(&mut self) -> Result<Expr, ParseError> {
        if *self.peek() == Tok::Minus {
            self.bump();
            return Ok(Expr::Neg(Box::new(self.exponent()?)));
        }
        self.power()
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        let at = self.offset();
        match self.peek().clone() {
            Tok::Num(v) => {
                self.bump();
                Ok(Expr::Const(v))
            }
            Tok::Ident(name) => {
                self.bump();
                if *self.peek() == Tok::LParen {
                    let func = Func::from_name(&name).ok_or(ParseError::UnknownFunction { offset: at, name })?;
                    self.bump();
                    let arg = self.sum()?;
                    self.expect(Tok::RParen, "`)`")?;
                    Ok(Expr::Call(func, Box::new(arg)))
                } else {
                    Ok(Expr::Sym(name))
                }
            }
            Tok::LParen => {
                self.bump();
                let inner = self.sum()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(inner)
            }
            _ => Err(self.unexpected("an operand")),
        }
    }
}

pub fn parse(text: &str) -> Result<Expr, ParseError> {
    let toks = lex(text)?;
    let mut p = Parser { toks, pos: 0 };
    let e = p.sum()?;
    if *p.peek() != Tok::End {
        return Err(p.unexpected("an operator or end of input"));
    }
    Ok(e)
}

// ---------------------------------------------------------------------------
// printer

fn precedence(e: &Expr) -> u8 {
    match e {
        Expr::Add(..) | Expr::Sub(..) => 1,
        Expr::Mul(..) | Expr::Div(..) => 2,
        Expr::Neg(..) => 3,
        Expr::Const(v) if *v < 0.0 || (*v == 0.0 && v.is_sign_negative()) => 3,
        Expr::Pow(..) => 4,
        _ => 5,
    }
}

fn write_child(f: &mut fmt::Formatter<'_>, e: &Expr, min: u8) -> fmt::Result {
    if precedence(e) < min {
        write!(f, "({e})")
    } else {
        write!(f, "{e}")
    }
}

/// Integral values print without a fraction, others in shortest
/// round-trip form.
fn number(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{v}")
    } else {
        format!("{v:?}")
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(v) => {
                if *v < 0.0 {
                    write!(f, "-{}", number(-v))
                } else {
                    f.write_str(&number(*v))
                }
            }
            Expr::Sym(s) => f.write_str(s),
            Expr::Neg(a) => {
                f.write_str("-")?;
                write_child(f, a, 3)
            }
            Expr::Add(a, b) | Expr::Sub(a, b) => {
                write_child(f, a, 1)?;
                f.write_str(if matches!(self, Expr::Add(..)) { " + " } else { " - " })?;
                write_child(f, b, 2)
            }
            Expr::Mul(a, b) | Expr::Div(a, b) => {
                write_child(f, a, 2)?;
                f.write_str(if matches!(self, Expr::Mul(..)) { "*" } else { "/" })?;
                write_child(f, b, 3)
            }
            Expr::Pow(a, b) => {
                write_child(f, a, 5)?;
                f.write_str("^")?;
                write_child(f, b, 3)
            }
            Expr::Call(func, a) => write!(f, "{}({a})", func.name()),
        }
    }
}

// ---------------------------------------------------------------------------
// symbol validation

/// `Ok` iff every symbol is in `allowed`; otherwise the sorted unknown names.
pub fn validate_symbols<S: AsRef<str>>(e: &Expr, allowed: &[S]) -> Result<(), Vec<String>> {
    let unknown: Vec<String> = e
        .symbols()
        .into_iter()
        .filter(|s| !allowed.iter().any(|a| a.as_ref() == s))
        .collect();
    if unknown.is_empty() {
        Ok(())
    } else {
        Err(unknown)
    }
}

// ---------------------------------------------------------------------------
// evaluation

/// Arithmetic needed to evaluate an [`Expr`]; implemented for `f64` and [`Jet`].
pub trait Scalar: Clone {
    fn value(&self) -> f64;
    fn constant_like(&self, c: f64) -> Self;
    fn add(&self, o: &Self) -> Self;
    fn sub(&self, o: &Self) -> Self;
    fn mul(&self, o: &Self) -> Self;
    fn neg(&self) -> Self;
    /// `f(self)` given `f, f', f'', f'''` at `self.value()`.
    fn compose(&self, derivs: [f64; 4]) -> Self;
    fn all_finite(&self) -> bool;
}

impl Scalar for f64 {
    fn value(&self) -> f64 {
        *self
    }
    fn constant_like(&self, c: f64) -> f64 {
        c
    }
    fn add(&self, o: &f64) -> f64 {
        self + o
    }
    fn sub(&self, o: &f64) -> f64 {
        self - o
    }
    fn mul(&self, o: &f64) -> f64 {
        self * o
    }
    fn neg(&self) -> f64 {
        -self
    }
    fn compose(&self, derivs: [f64; 4]) -> f64 {
        derivs[0]
    }
    fn all_finite(&self) -> bool {
        self.is_finite()
    }
}

fn recip_derivs(x: f64) -> [f64; 4] {
    let r = 1.0 / x;
    [r, -r * r, 2.0 * r * r * r, -6.0 * r * r * r * r]
}

fn powi<S: Scalar>(base: &S, mut k: u64) -> S {
    let mut acc = base.constant_like(1.0);
    let mut b = base.clone();
    while k > 0 {
        if k & 1 == 1 {
            acc = acc.mul(&b);
        }
        k >>= 1;
        if k > 0 {
            b = b.mul(&b);
        }
    }
    acc
}

struct Evaluator<'a, S> {
    lookup: &'a dyn Fn(&str) -> Option<S>,
    zero: S,
    point: &'a dyn Fn() -> String,
}

impl<S: Scalar> Evaluator<'_, S> {
    fn domain(&self, e: &Expr, reason: &str) -> EvalError {
        EvalError::Domain {
            expr: e.to_string(),
            point: (self.point)(),
            reason: reason.to_string(),
        }
    }

    fn eval(&self, e: &Expr) -> Result<S, EvalError> {
        let out = match e {
            Expr::Const(v) => self.zero.constant_like(*v),
            Expr::Sym(s) => (self.lookup)(s).ok_or_else(|| EvalError::Unbound(s.clone()))?,
            Expr::Neg(a) => self.eval(a)?.neg(),
            Expr::Add(a, b) => self.eval(a)?.add(&self.eval(b)?),
            Expr::Sub(a, b) => self.eval(a)?.sub(&self.eval(b)?),
            Expr::Mul(a, b) => self.eval(a)?.mul(&self.eval(b)?),
            Expr::Div(a, b) => {
                let num = self.eval(a)?;
                let den = self.eval(b)?;
                if den.value() == 0.0 {
                    return Err(self.domain(e, "division by zero"));
                }
                num.mul(&den.compose(recip_derivs(den.value())))
            }
            Expr::Pow(a, b) => {
                let base = self.eval(a)?;
                let p = eval_scalar(b, &BTreeMap::new())?;
                self.pow(e, &base, p)?
            }
            Expr::Call(func, a) => {
                let arg = self.eval(a)?;
                let d = func
                    .derivatives(arg.value())
                    .ok_or_else(|| self.domain(e, &format!("{} of non-positive argument", func.name())))?;
                arg.compose(d)
            }
        };
        if !out.all_finite() {
            return Err(self.domain(e, "non-finite result"));
        }
        Ok(out)
    }

    fn pow(&self, e: &Expr, base: &S, p: f64) -> Result<S, EvalError> {
        if p.fract() == 0.0 && p.abs() <= 64.0 {
            let k = p.abs() as u64;
            let pos = powi(base, k);
            if p >= 0.0 {
                return Ok(pos);
            }
            if pos.value() == 0.0 {
                return Err(self.domain(e, "division by zero"));
            }
            return Ok(pos.compose(recip_derivs(pos.value())));
        }
        let x = base.value();
        if x <= 0.0 {
            return Err(self.domain(e, "non-integer power of non-positive base"));
        }
        let f0 = x.powf(p);
        Ok(base.compose([
            f0,
            p * f0 / x,
            p * (p - 1.0) * f0 / (x * x),
            p * (p - 1.0) * (p - 2.0) * f0 / (x * x * x),
        ]))
    }
}

fn describe_env(env: &BTreeMap<String, f64>) -> String {
    let parts: Vec<String> = env.iter().map(|(k, v)| format!("{k}={v}")).collect();
    format!("({})", parts.join(", "))
}

/// IEEE double evaluation. Division by zero, `ln`/`sqrt` of non-positive
/// arguments and non-finite intermediates are errors.
pub fn eval_scalar(e: &Expr, env: &BTreeMap<String, f64>) -> Result<f64, EvalError> {
    let lookup = |s: &str| env.get(s).copied();
    let point = || describe_env(env);
    Evaluator {
        lookup: &lookup,
        zero: 0.0,
        point: &point,
    }
    .eval(e)
}

/// Evaluate `e` as an order-3 jet in the variables `vars` at `point`.
/// Symbols not in `vars` are looked up in `params` and enter as constants.
pub fn eval_jet<S: AsRef<str>>(
    e: &Expr,
    point: &[f64],
    vars: &[S],
    params: &BTreeMap<String, f64>,
) -> Result<Jet, EvalError> {
    assert_eq!(point.len(), vars.len(), "point/variable length mismatch");
    let n = vars.len();
    let lookup = |s: &str| {
        if let Some(i) = vars.iter().position(|v| v.as_ref() == s) {
            Some(Jet::variable(n, i, point[i]))
        } else {
            params.get(s).map(|&c| Jet::constant(n, c))
        }
    };
    let describe = || {
        let mut parts: Vec<String> = vars
            .iter()
            .zip(point)
            .map(|(v, x)| format!("{}={x}", v.as_ref()))
            .collect();
        parts.extend(params.iter().map(|(k, v)| format!("{k}={v}")));
        format!("({})", parts.join(", "))
    };
    Evaluator {
        lookup: &lookup,
        zero: Jet::constant(n, 0.0),
        point: &describe,
    }
    .eval(e)
}

/// Nested central differences for a derivative of order `|index| <= 3`,
/// with one Richardson step between `h` and `h/2`.
///
/// `h` is `2e-4 * max(1, |x_i|)` per axis for first and second order and
/// `3e-3 * max(1, |x_i|)` for third order, where the truncation/round-off
/// balance shifts. Test oracle only.
pub fn fd_oracle<S: AsRef<str>>(
    e: &Expr,
    point: &[f64],
    vars: &[S],
    params: &BTreeMap<String, f64>,
    index: &[usize],
) -> Result<f64, EvalError> {
    let order: usize = index.iter().sum();
    assert!(order <= 3, "fd_oracle supports total order <= 3");
    let base_step = if order == 3 { 3e-3 } else { 2e-4 };
    let mut env = params.clone();
    let mut axes = Vec::new();
    for (i, &m) in index.iter().enumerate() {
        for _ in 0..m {
            axes.push(i);
        }
    }
    // steps fixed at the base point so the nested stencil stays symmetric
    let scale: Vec<f64> = point.iter().map(|x| x.abs().max(1.0)).collect();
    fn rec<S: AsRef<str>>(
        e: &Expr,
        x: &mut Vec<f64>,
        vars: &[S],
        env: &mut BTreeMap<String, f64>,
        axes: &[usize],
        steps: &[f64],
    ) -> Result<f64, EvalError> {
        match axes.split_first() {
            None => {
                for (v, xi) in vars.iter().zip(x.iter()) {
                    env.insert(v.as_ref().to_string(), *xi);
                }
                eval_scalar(e, env)
            }
            Some((&ax, rest)) => {
                let h = steps[ax];
                let orig = x[ax];
                x[ax] = orig + h;
                let plus = rec(e, x, vars, env, rest, steps)?;
                x[ax] = orig - h;
                let minus = rec(e, x, vars, env, rest, steps)?;
                x[ax] = orig;
                Ok((plus - minus) / (2.0 * h))
            }
        }
    }
    let mut x = point.to_vec();
    let steps: Vec<f64> = scale.iter().map(|s| base_step * s).collect();
    let coarse = rec(e, &mut x, vars, &mut env, &axes, &steps)?;
    let steps: Vec<f64> = steps.iter().map(|h| h / 2.0).collect();
    let fine = rec(e, &mut x, vars, &mut env, &axes, &steps)?;
    // the nested stencil's error is even in h
    Ok((4.0 * fine - coarse) / 3.0)
}
