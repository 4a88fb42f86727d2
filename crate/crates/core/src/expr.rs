//! Scalar symbolic expressions.
//!
//! The grammar (byte-exact, ASCII, whitespace-insensitive between tokens):
//!
//! ```text
//! expr   := term (("+" | "-") term)*
//! term   := unary (("*" | "/") unary)*
//! unary  := "-" unary | power
//! power  := atom ("^" unary)?
//! atom   := NUMBER | IDENT | IDENT "(" expr ")" | "(" expr ")"
//! IDENT  := [a-zA-Z][a-zA-Z0-9_]*
//! NUMBER := [0-9]+ ("." [0-9]+)? (("e"|"E") ("+"|"-")? [0-9]+)?
//! ```
//!
//! Reserved function names: `sin cos exp ln sqrt`. Reserved constant: `pi`.
//! Everything else is a variable.
//!
//! Constants parsed from plain decimal literals with at most 9 fractional
//! digits are stored as exact `i64` rationals; literals with an exponent or
//! more fractional digits become doubles. The canonical printer renders
//! rationals as plain decimals (or `p/q` when the denominator is not a
//! divisor of 10^9) and doubles in exponent form, so the stored kind survives
//! a print/parse round trip. Simplification is conservative: constant
//! folding, the identities `0+e`, `e+0`, `e-0`, `0*e`, `e*0`, `1*e`, `e*1`,
//! `e/1`, `e^1`, and `e-e -> 0` for structurally equal operands. Negative
//! constants normalise to `Neg` of a positive constant so that trees survive
//! the grammar's unary minus.

use num_rational::Ratio;
use num_traits::{Signed, Zero};
use std::collections::{BTreeSet, HashMap};
use std::fmt;
use thiserror::Error;

/// A numeric constant: exact rational or double.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Number {
    Rational(Ratio<i64>),
    Float(f64),
}

impl Number {
    pub fn from_int(n: i64) -> Self {
        Number::Rational(Ratio::from_integer(n))
    }

    pub fn as_f64(&self) -> f64 {
        match self {
            Number::Rational(r) => *r.numer() as f64 / *r.denom() as f64,
            Number::Float(f) => *f,
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Number::Rational(r) => r.is_zero(),
            Number::Float(f) => *f == 0.0,
        }
    }

    pub fn is_one(&self) -> bool {
        match self {
            Number::Rational(r) => *r.numer() == 1 && *r.denom() == 1,
            Number::Float(f) => *f == 1.0,
        }
    }

    pub fn is_negative(&self) -> bool {
        match self {
            Number::Rational(r) => r.is_negative(),
            Number::Float(f) => *f < 0.0,
        }
    }

    fn abs(&self) -> Number {
        match self {
            Number::Rational(r) => Number::Rational(r.abs()),
            Number::Float(f) => Number::Float(f.abs()),
        }
    }
}

fn gcd_i128(mut a: i128, mut b: i128) -> i128 {
    a = a.abs();
    b = b.abs();
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a.max(1)
}

/// Builds a reduced `Ratio<i64>` from i128 parts when it fits.
fn ratio_from_i128(num: i128, den: i128) -> Option<Ratio<i64>> {
    if den == 0 {
        return None;
    }
    let g = gcd_i128(num, den);
    let (mut n, mut d) = (num / g, den / g);
    if d < 0 {
        n = -n;
        d = -d;
    }
    let n = i64::try_from(n).ok()?;
    let d = i64::try_from(d).ok()?;
    Some(Ratio::new_raw(n, d))
}

fn rat_add(a: Ratio<i64>, b: Ratio<i64>) -> Option<Ratio<i64>> {
    let (an, ad) = (*a.numer() as i128, *a.denom() as i128);
    let (bn, bd) = (*b.numer() as i128, *b.denom() as i128);
    ratio_from_i128(an * bd + bn * ad, ad * bd)
}

fn rat_mul(a: Ratio<i64>, b: Ratio<i64>) -> Option<Ratio<i64>> {
    let (an, ad) = (*a.numer() as i128, *a.denom() as i128);
    let (bn, bd) = (*b.numer() as i128, *b.denom() as i128);
    ratio_from_i128(an * bn, ad * bd)
}

fn rat_div(a: Ratio<i64>, b: Ratio<i64>) -> Option<Ratio<i64>> {
    if b.is_zero() {
        return None;
    }
    let (an, ad) = (*a.numer() as i128, *a.denom() as i128);
    let (bn, bd) = (*b.numer() as i128, *b.denom() as i128);
    ratio_from_i128(an * bd, ad * bn)
}

/// Reserved function names.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Ln,
    Sqrt,
}

impl Func {
    pub fn as_str(&self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Ln => "ln",
            Func::Sqrt => "sqrt",
        }
    }

    fn from_name(name: &str) -> Option<Func> {
        match name {
            "sin" => Some(Func::Sin),
            "cos" => Some(Func::Cos),
            "exp" => Some(Func::Exp),
            "ln" => Some(Func::Ln),
            "sqrt" => Some(Func::Sqrt),
            _ => None,
        }
    }
}

/// Expression tree over named scalar variables.
#[derive(Clone, Debug, PartialEq)]
pub enum ScalarExpr {
    Const(Number),
    Var(String),
    Add(Box<ScalarExpr>, Box<ScalarExpr>),
    Sub(Box<ScalarExpr>, Box<ScalarExpr>),
    Mul(Box<ScalarExpr>, Box<ScalarExpr>),
    Div(Box<ScalarExpr>, Box<ScalarExpr>),
    Neg(Box<ScalarExpr>),
    Pow(Box<ScalarExpr>, Box<ScalarExpr>),
    Call(Func, Box<ScalarExpr>),
}

/// Point environment mapping variable names to values.
#[derive(Clone, Debug, Default)]
pub struct Env {
    map: HashMap<String, f64>,
}

impl Env {
    pub fn new() -> Self {
        Env::default()
    }

    pub fn set(&mut self, name: impl Into<String>, value: f64) {
        self.map.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.map.get(name).copied()
    }
}

impl FromIterator<(String, f64)> for Env {
    fn from_iter<T: IntoIterator<Item = (String, f64)>>(iter: T) -> Self {
        Env {
            map: iter.into_iter().collect(),
        }
    }
}

/// Parse failure with the byte offset where it occurred.
#[derive(Debug, Error, PartialEq, Eq)]
#[error("parse error at byte {offset}: {message}")]
pub struct ParseError {
    pub offset: usize,
    pub message: String,
}

/// Evaluation failure.
#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("unbound variable `{0}`")]
    Unbound(String),
    #[error("domain error: {0}")]
    Domain(String),
}

// ---------------------------------------------------------------------------
// Construction helpers
// ---------------------------------------------------------------------------

impl ScalarExpr {
    pub fn int(n: i64) -> Self {
        ScalarExpr::Const(Number::from_int(n))
    }

    pub fn rat(num: i64, den: i64) -> Self {
        ScalarExpr::Const(Number::Rational(Ratio::new(num, den)))
    }

    pub fn float(v: f64) -> Self {
        ScalarExpr::Const(Number::Float(v))
    }

    pub fn var(name: impl Into<String>) -> Self {
        ScalarExpr::Var(name.into())
    }

    pub fn zero() -> Self {
        ScalarExpr::int(0)
    }

    pub fn one() -> Self {
        ScalarExpr::int(1)
    }

    pub fn pow(self, exponent: ScalarExpr) -> Self {
        ScalarExpr::Pow(Box::new(self), Box::new(exponent))
    }

    pub fn powi(self, exponent: i64) -> Self {
        self.pow(ScalarExpr::int(exponent))
    }

    pub fn call(func: Func, arg: ScalarExpr) -> Self {
        ScalarExpr::Call(func, Box::new(arg))
    }

    pub fn sin(arg: ScalarExpr) -> Self {
        ScalarExpr::call(Func::Sin, arg)
    }

    pub fn cos(arg: ScalarExpr) -> Self {
        ScalarExpr::call(Func::Cos, arg)
    }

    pub fn exp(arg: ScalarExpr) -> Self {
        ScalarExpr::call(Func::Exp, arg)
    }

    pub fn ln(arg: ScalarExpr) -> Self {
        ScalarExpr::call(Func::Ln, arg)
    }

    pub fn sqrt(arg: ScalarExpr) -> Self {
        ScalarExpr::call(Func::Sqrt, arg)
    }

    pub fn is_zero_const(&self) -> bool {
        matches!(self.const_value(), Some(n) if n.is_zero())
    }

    /// Constant value of the tree when it is a (possibly negated) constant.
    pub fn const_value(&self) -> Option<Number> {
        match self {
            ScalarExpr::Const(n) => Some(*n),
            ScalarExpr::Neg(inner) => inner.const_value().map(|n| match n {
                Number::Rational(r) => Number::Rational(-r),
                Number::Float(f) => Number::Float(-f),
            }),
            _ => None,
        }
    }

    /// Collects free variable names.
    pub fn free_vars(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut BTreeSet<String>) {
        match self {
            ScalarExpr::Const(_) => {}
            ScalarExpr::Var(name) => {
                out.insert(name.clone());
            }
            ScalarExpr::Add(l, r)
            | ScalarExpr::Sub(l, r)
            | ScalarExpr::Mul(l, r)
            | ScalarExpr::Div(l, r)
            | ScalarExpr::Pow(l, r) => {
                l.collect_vars(out);
                r.collect_vars(out);
            }
            ScalarExpr::Neg(e) | ScalarExpr::Call(_, e) => e.collect_vars(out),
        }
    }

    /// True when the variable occurs free in the tree.
    pub fn depends_on(&self, name: &str) -> bool {
        match self {
            ScalarExpr::Const(_) => false,
            ScalarExpr::Var(v) => v == name,
            ScalarExpr::Add(l, r)
            | ScalarExpr::Sub(l, r)
            | ScalarExpr::Mul(l, r)
            | ScalarExpr::Div(l, r)
            | ScalarExpr::Pow(l, r) => l.depends_on(name) || r.depends_on(name),
            ScalarExpr::Neg(e) | ScalarExpr::Call(_, e) => e.depends_on(name),
        }
    }
}

impl std::ops::Add for ScalarExpr {
    type Output = ScalarExpr;
    fn add(self, rhs: ScalarExpr) -> ScalarExpr {
        ScalarExpr::Add(Box::new(self), Box::new(rhs))
    }
}

impl std::ops::Sub for ScalarExpr {
    type Output = ScalarExpr;
    fn sub(self, rhs: ScalarExpr) -> ScalarExpr {
        ScalarExpr::Sub(Box::new(self), Box::new(rhs))
    }
}

impl std::ops::Mul for ScalarExpr {
    type Output = ScalarExpr;
    fn mul(self, rhs: ScalarExpr) -> ScalarExpr {
        ScalarExpr::Mul(Box::new(self), Box::new(rhs))
    }
}

impl std::ops::Div for ScalarExpr {
    type Output = ScalarExpr;
    fn div(self, rhs: ScalarExpr) -> ScalarExpr {
        ScalarExpr::Div(Box::new(self), Box::new(rhs))
    }
}

impl std::ops::Neg for ScalarExpr {
    type Output = ScalarExpr;
    fn neg(self) -> ScalarExpr {
        ScalarExpr::Neg(Box::new(self))
    }
}

// ---------------------------------------------------------------------------
// Parser
// ---------------------------------------------------------------------------

struct Parser<'a> {
    bytes: &'a [u8],
    pos: usize,
}

/// Parses expression text into the unique AST under the grammar precedence.
pub fn parse(text: &str) -> Result<ScalarExpr, ParseError> {
    let mut p = Parser {
        bytes: text.as_bytes(),
        pos: 0,
    };
    let e = p.expr()?;
    p.skip_ws();
    if p.pos != p.bytes.len() {
        return Err(p.error("unexpected trailing input"));
    }
    Ok(e)
}

impl<'a> Parser<'a> {
    fn error(&self, message: impl Into<String>) -> ParseError {
        ParseError {
            offset: self.pos,
            message: message.into(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.bytes.get(self.pos).copied()
    }

    fn eat(&mut self, byte: u8) -> bool {
        if self.peek() == Some(byte) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<ScalarExpr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some(b'+') => {
                    self.pos += 1;
                    let rhs = self.term()?;
                    lhs = lhs + rhs;
                }
                Some(b'-') => {
                    self.pos += 1;
                    let rhs = self.term()?;
                    lhs = lhs - rhs;
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<ScalarExpr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            match self.peek() {
                Some(b'*') => {
                    self.pos += 1;
                    let rhs = self.unary()?;
                    lhs = lhs * rhs;
                }
                Some(b'/') => {
                    self.pos += 1;
                    let rhs = self.unary()?;
                    lhs = lhs / rhs;
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<ScalarExpr, ParseError> {
        if self.eat(b'-') {
            Ok(-self.unary()?)
        } else {
            self.power()
        }
    }

    fn power(&mut self) -> Result<ScalarExpr, ParseError> {
        let base = self.atom()?;
        if self.eat(b'^') {
            let exponent = self.unary()?;
            Ok(base.pow(exponent))
        } else {
            Ok(base)
        }
    }

    fn atom(&mut self) -> Result<ScalarExpr, ParseError> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let inner = self.expr()?;
                if !self.eat(b')') {
                    return Err(self.error("expected `)`"));
                }
                Ok(inner)
            }
            Some(c) if c.is_ascii_digit() => self.number(),
            Some(c) if c.is_ascii_alphabetic() => self.ident(),
            Some(c) => Err(self.error(format!("unexpected byte `{}`", c as char))),
            None => Err(self.error("unexpected end of input")),
        }
    }

    fn number(&mut self) -> Result<ScalarExpr, ParseError> {
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        let mut frac_digits = 0usize;
        if self.bytes.get(self.pos) == Some(&b'.') {
            if !matches!(self.bytes.get(self.pos + 1), Some(d) if d.is_ascii_digit()) {
                self.pos += 1;
                return Err(self.error("expected digit after decimal point"));
            }
            self.pos += 1;
            while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
                self.pos += 1;
                frac_digits += 1;
            }
        }
        let mut has_exponent = false;
        if matches!(self.bytes.get(self.pos), Some(b'e') | Some(b'E')) {
            // Only take the exponent when digits follow (allowing a sign);
            // otherwise the `e` starts an identifier and is not ours.
            let mut probe = self.pos + 1;
            if matches!(self.bytes.get(probe), Some(b'+') | Some(b'-')) {
                probe += 1;
            }
            if matches!(self.bytes.get(probe), Some(d) if d.is_ascii_digit()) {
                has_exponent = true;
                self.pos = probe;
                while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
                    self.pos += 1;
                }
            }
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos]).unwrap();
        if !has_exponent && frac_digits <= 9 {
            if let Some(rat) = decimal_to_rational(text) {
                return Ok(ScalarExpr::Const(Number::Rational(rat)));
            }
        }
        match text.parse::<f64>() {
            // Non-finite literals would not survive printing and reparsing.
            Ok(v) if v.is_finite() => Ok(ScalarExpr::Const(Number::Float(v))),
            Ok(_) => Err(self.error(format!("number `{text}` overflows"))),
            Err(_) => Err(self.error(format!("invalid number `{text}`"))),
        }
    }

    fn ident(&mut self) -> Result<ScalarExpr, ParseError> {
        let start = self.pos;
        while self.pos < self.bytes.len()
            && (self.bytes[self.pos].is_ascii_alphanumeric() || self.bytes[self.pos] == b'_')
        {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.bytes[start..self.pos]).unwrap();
        if self.peek() == Some(b'(') {
            let func = Func::from_name(name).ok_or_else(|| ParseError {
                offset: start,
                message: format!("unknown function `{name}`"),
            })?;
            self.pos += 1;
            let arg = self.expr()?;
            if !self.eat(b')') {
                return Err(self.error("expected `)`"));
            }
            Ok(ScalarExpr::call(func, arg))
        } else if name == "pi" {
            Ok(ScalarExpr::float(std::f64::consts::PI))
        } else {
            Ok(ScalarExpr::var(name))
        }
    }
}

/// Exact rational value of a plain decimal literal, when it fits in i64.
fn decimal_to_rational(text: &str) -> Option<Ratio<i64>> {
    let (int_part, frac_part) = match text.split_once('.') {
        Some((i, f)) => (i, f),
        None => (text, ""),
    };
    let mut num: i128 = int_part.parse::<i128>().ok()?;
    let mut den: i128 = 1;
    for b in frac_part.bytes() {
        num = num.checked_mul(10)?.checked_add((b - b'0') as i128)?;
        den = den.checked_mul(10)?;
    }
    ratio_from_i128(num, den)
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

impl ScalarExpr {
    /// Evaluates at a point. Total on points where every subexpression is
    /// defined; division by zero, `ln` of a nonpositive argument, `sqrt` of a
    /// negative argument and fractional powers of negative bases are errors.
    pub fn eval(&self, env: &Env) -> Result<f64, EvalError> {
        match self {
            ScalarExpr::Const(n) => Ok(n.as_f64()),
            ScalarExpr::Var(name) => env
                .get(name)
                .ok_or_else(|| EvalError::Unbound(name.clone())),
            ScalarExpr::Add(l, r) => Ok(l.eval(env)? + r.eval(env)?),
            ScalarExpr::Sub(l, r) => Ok(l.eval(env)? - r.eval(env)?),
            ScalarExpr::Mul(l, r) => Ok(l.eval(env)? * r.eval(env)?),
            ScalarExpr::Div(l, r) => {
                let denom = r.eval(env)?;
                if denom == 0.0 {
                    return Err(EvalError::Domain("division by zero".into()));
                }
                Ok(l.eval(env)? / denom)
            }
            ScalarExpr::Neg(e) => Ok(-e.eval(env)?),
            ScalarExpr::Pow(b, e) => {
                let base = b.eval(env)?;
                let exponent = e.eval(env)?;
                if base == 0.0 && exponent < 0.0 {
                    return Err(EvalError::Domain("zero raised to negative power".into()));
                }
                if base < 0.0 && exponent.fract() != 0.0 {
                    return Err(EvalError::Domain(
                        "negative base with fractional exponent".into(),
                    ));
                }
                Ok(base.powf(exponent))
            }
            ScalarExpr::Call(func, arg) => {
                let v = arg.eval(env)?;
                match func {
                    Func::Sin => Ok(v.sin()),
                    Func::Cos => Ok(v.cos()),
                    Func::Exp => Ok(v.exp()),
                    Func::Ln => {
                        if v <= 0.0 {
                            Err(EvalError::Domain("ln of nonpositive argument".into()))
                        } else {
                            Ok(v.ln())
                        }
                    }
                    Func::Sqrt => {
                        if v < 0.0 {
                            Err(EvalError::Domain("sqrt of negative argument".into()))
                        } else {
                            Ok(v.sqrt())
                        }
                    }
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Differentiation
// ---------------------------------------------------------------------------

impl ScalarExpr {
    /// Exact partial derivative with respect to `var`, simplified.
    pub fn diff(&self, var: &str) -> ScalarExpr {
        self.diff_raw(var).simplify()
    }

    fn diff_raw(&self, var: &str) -> ScalarExpr {
        match self {
            ScalarExpr::Const(_) => ScalarExpr::zero(),
            ScalarExpr::Var(name) => {
                if name == var {
                    ScalarExpr::one()
                } else {
                    ScalarExpr::zero()
                }
            }
            ScalarExpr::Add(l, r) => l.diff_raw(var) + r.diff_raw(var),
            ScalarExpr::Sub(l, r) => l.diff_raw(var) - r.diff_raw(var),
            ScalarExpr::Mul(l, r) => {
                l.diff_raw(var) * (**r).clone() + (**l).clone() * r.diff_raw(var)
            }
            ScalarExpr::Div(l, r) => {
                (l.diff_raw(var) * (**r).clone() - (**l).clone() * r.diff_raw(var))
                    / (**r).clone().powi(2)
            }
            ScalarExpr::Neg(e) => -e.diff_raw(var),
            ScalarExpr::Pow(base, exponent) => {
                if !exponent.depends_on(var) {
                    // n * base^(n-1) * base' with the exponent shifted exactly
                    // when it is constant.
                    let shifted = match exponent.const_value() {
                        Some(Number::Rational(r)) => match rat_add(r, Ratio::from_integer(-1)) {
                            Some(s) => ScalarExpr::Const(Number::Rational(s)),
                            None => (**exponent).clone() - ScalarExpr::one(),
                        },
                        Some(Number::Float(f)) => ScalarExpr::float(f - 1.0),
                        None => (**exponent).clone() - ScalarExpr::one(),
                    };
                    (**exponent).clone() * (**base).clone().pow(shifted) * base.diff_raw(var)
                } else {
                    // d(f^g) = f^g * (g' ln f + g f'/f)
                    (**base).clone().pow((**exponent).clone())
                        * (exponent.diff_raw(var) * ScalarExpr::ln((**base).clone())
                            + (**exponent).clone() * base.diff_raw(var) / (**base).clone())
                }
            }
            ScalarExpr::Call(func, arg) => {
                let inner = arg.diff_raw(var);
                let outer = match func {
                    Func::Sin => ScalarExpr::cos((**arg).clone()),
                    Func::Cos => -ScalarExpr::sin((**arg).clone()),
                    Func::Exp => ScalarExpr::exp((**arg).clone()),
                    Func::Ln => ScalarExpr::one() / (**arg).clone(),
                    Func::Sqrt => {
                        ScalarExpr::one() / (ScalarExpr::int(2) * ScalarExpr::sqrt((**arg).clone()))
                    }
                };
                outer * inner
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Simplification
// ---------------------------------------------------------------------------

fn fold_binary(
    op: fn(f64, f64) -> f64,
    rat_op: fn(Ratio<i64>, Ratio<i64>) -> Option<Ratio<i64>>,
    a: Number,
    b: Number,
) -> Option<Number> {
    if let (Number::Rational(x), Number::Rational(y)) = (a, b) {
        if let Some(r) = rat_op(x, y) {
            return Some(Number::Rational(r));
        }
    }
    let v = op(a.as_f64(), b.as_f64());
    v.is_finite().then_some(Number::Float(v))
}

fn fold_pow(base: Number, exponent: Number) -> Option<Number> {
    if let (Number::Rational(b), Number::Rational(e)) = (base, exponent) {
        if e.is_integer() {
            let n = *e.numer();
            if n.unsigned_abs() <= 64 {
                let mut num: i128 = 1;
                let mut den: i128 = 1;
                for _ in 0..n.unsigned_abs() {
                    num = num.checked_mul(*b.numer() as i128)?;
                    den = den.checked_mul(*b.denom() as i128)?;
                }
                if n < 0 {
                    if num == 0 {
                        return None;
                    }
                    std::mem::swap(&mut num, &mut den);
                }
                return ratio_from_i128(num, den).map(Number::Rational);
            }
        }
    }
    let (b, e) = (base.as_f64(), exponent.as_f64());
    if b == 0.0 && e < 0.0 {
        return None;
    }
    if b < 0.0 && e.fract() != 0.0 {
        return None;
    }
    let v = b.powf(e);
    v.is_finite().then_some(Number::Float(v))
}

/// Negation of an already-simplified tree: collapses double negation and
/// negated zero instead of stacking `Neg` nodes.
fn neg_expr(e: ScalarExpr) -> ScalarExpr {
    match e {
        ScalarExpr::Neg(inner) => *inner,
        other if other.is_zero_const() => ScalarExpr::zero(),
        other => -other,
    }
}

/// Canonical constant node: negatives become `Neg` of the positive constant.
fn const_expr(n: Number) -> ScalarExpr {
    let n = match n {
        // Normalise -0.0 so folding cannot smuggle in a sign bit.
        Number::Float(f) if f == 0.0 => Number::Float(0.0),
        other => other,
    };
    if n.is_negative() {
        -ScalarExpr::Const(n.abs())
    } else {
        ScalarExpr::Const(n)
    }
}

impl ScalarExpr {
    /// Conservative simplification; idempotent.
    pub fn simplify(&self) -> ScalarExpr {
        match self {
            ScalarExpr::Const(n) => const_expr(*n),
            ScalarExpr::Var(_) => self.clone(),
            ScalarExpr::Neg(e) => neg_expr(e.simplify()),
            ScalarExpr::Add(l, r) => {
                let (sl, sr) = (l.simplify(), r.simplify());
                if sl.is_zero_const() {
                    return sr;
                }
                if sr.is_zero_const() {
                    return sl;
                }
                if let (Some(a), Some(b)) = (sl.const_value(), sr.const_value()) {
                    if let Some(v) = fold_binary(|x, y| x + y, rat_add, a, b) {
                        return const_expr(v);
                    }
                }
                sl + sr
            }
            ScalarExpr::Sub(l, r) => {
                let (sl, sr) = (l.simplify(), r.simplify());
                if sr.is_zero_const() {
                    return sl;
                }
                if sl.is_zero_const() {
                    return neg_expr(sr);
                }
                if sl == sr {
                    return ScalarExpr::zero();
                }
                if let (Some(a), Some(b)) = (sl.const_value(), sr.const_value()) {
                    if let Some(v) =
                        fold_binary(|x, y| x - y, |x, y| rat_add(x, -y), a, b)
                    {
                        return const_expr(v);
                    }
                }
                sl - sr
            }
            ScalarExpr::Mul(l, r) => {
                let (sl, sr) = (l.simplify(), r.simplify());
                if sl.is_zero_const() || sr.is_zero_const() {
                    return ScalarExpr::zero();
                }
                if let Some(n) = sl.const_value() {
                    if n.is_one() {
                        return sr;
                    }
                }
                if let Some(n) = sr.const_value() {
                    if n.is_one() {
                        return sl;
                    }
                }
                if let (Some(a), Some(b)) = (sl.const_value(), sr.const_value()) {
                    if let Some(v) = fold_binary(|x, y| x * y, rat_mul, a, b) {
                        return const_expr(v);
                    }
                }
                sl * sr
            }
            ScalarExpr::Div(l, r) => {
                let (sl, sr) = (l.simplify(), r.simplify());
                if let Some(n) = sr.const_value() {
                    if n.is_one() {
                        return sl;
                    }
                }
                if let (Some(a), Some(b)) = (sl.const_value(), sr.const_value()) {
                    if !b.is_zero() {
                        if let Some(v) = fold_binary(|x, y| x / y, rat_div, a, b) {
                            return const_expr(v);
                        }
                    }
                }
                sl / sr
            }
            ScalarExpr::Pow(b, e) => {
                let (sb, se) = (b.simplify(), e.simplify());
                if let Some(n) = se.const_value() {
                    if n.is_one() {
                        return sb;
                    }
                }
                if let (Some(a), Some(b)) = (sb.const_value(), se.const_value()) {
                    if let Some(v) = fold_pow(a, b) {
                        return const_expr(v);
                    }
                }
                sb.pow(se)
            }
            ScalarExpr::Call(func, arg) => ScalarExpr::call(*func, arg.simplify()),
        }
    }

    /// Replaces free variables by expressions.
    pub fn substitute(&self, map: &HashMap<String, ScalarExpr>) -> ScalarExpr {
        match self {
            ScalarExpr::Const(_) => self.clone(),
            ScalarExpr::Var(name) => map.get(name).cloned().unwrap_or_else(|| self.clone()),
            ScalarExpr::Add(l, r) => l.substitute(map) + r.substitute(map),
            ScalarExpr::Sub(l, r) => l.substitute(map) - r.substitute(map),
            ScalarExpr::Mul(l, r) => l.substitute(map) * r.substitute(map),
            ScalarExpr::Div(l, r) => l.substitute(map) / r.substitute(map),
            ScalarExpr::Neg(e) => -e.substitute(map),
            ScalarExpr::Pow(b, e) => b.substitute(map).pow(e.substitute(map)),
            ScalarExpr::Call(func, arg) => ScalarExpr::call(*func, arg.substitute(map)),
        }
    }
}

// ---------------------------------------------------------------------------
// Printing
// ---------------------------------------------------------------------------

const PREC_ADD: u8 = 1;
const PREC_MUL: u8 = 2;
const PREC_UNARY: u8 = 3;
const PREC_POW: u8 = 4;
const PREC_ATOM: u8 = 5;

fn rational_text(r: Ratio<i64>) -> (String, u8) {
    debug_assert!(!r.is_negative());
    let (p, q) = (*r.numer(), *r.denom());
    if q == 1 {
        return (p.to_string(), PREC_ATOM);
    }
    // Plain decimal when the denominator divides 10^9.
    let mut scale: i64 = 1;
    for digits in 1..=9u32 {
        scale *= 10;
        if scale % q == 0 {
            let units = p as i128 * (scale / q) as i128;
            let text = format!(
                "{:0>width$}",
                units,
                width = digits as usize + 1
            );
            let split = text.len() - digits as usize;
            return (format!("{}.{}", &text[..split], &text[split..]), PREC_ATOM);
        }
    }
    (format!("{p}/{q}"), PREC_MUL)
}

fn number_text(n: Number) -> (String, u8) {
    match n {
        Number::Rational(r) => rational_text(r),
        // Exponent form forces the float path on re-parse. `{:e}` prints the
        // shortest digits that round-trip.
        Number::Float(f) => (format!("{f:e}"), PREC_ATOM),
    }
}

fn prec(e: &ScalarExpr) -> u8 {
    match e {
        ScalarExpr::Const(n) => {
            if n.is_negative() {
                PREC_UNARY
            } else {
                number_text(*n).1
            }
        }
        ScalarExpr::Var(_) | ScalarExpr::Call(_, _) => PREC_ATOM,
        ScalarExpr::Add(_, _) | ScalarExpr::Sub(_, _) => PREC_ADD,
        ScalarExpr::Mul(_, _) | ScalarExpr::Div(_, _) => PREC_MUL,
        ScalarExpr::Neg(_) => PREC_UNARY,
        ScalarExpr::Pow(_, _) => PREC_POW,
    }
}

fn render(e: &ScalarExpr, out: &mut String, min_prec: u8) {
    let own = prec(e);
    if own < min_prec {
        out.push('(');
        render_node(e, out);
        out.push(')');
    } else {
        render_node(e, out);
    }
}

fn render_node(e: &ScalarExpr, out: &mut String) {
    match e {
        ScalarExpr::Const(n) => {
            if n.is_negative() {
                out.push('-');
                let (text, p) = number_text(n.abs());
                if p < PREC_UNARY {
                    out.push('(');
                    out.push_str(&text);
                    out.push(')');
                } else {
                    out.push_str(&text);
                }
            } else {
                out.push_str(&number_text(*n).0);
            }
        }
        ScalarExpr::Var(name) => out.push_str(name),
        ScalarExpr::Add(l, r) => {
            render(l, out, PREC_ADD);
            out.push_str(" + ");
            render(r, out, PREC_ADD + 1);
        }
        ScalarExpr::Sub(l, r) => {
            render(l, out, PREC_ADD);
            out.push_str(" - ");
            render(r, out, PREC_ADD + 1);
        }
        ScalarExpr::Mul(l, r) => {
            render(l, out, PREC_MUL);
            out.push('*');
            render(r, out, PREC_MUL + 1);
        }
        ScalarExpr::Div(l, r) => {
            render(l, out, PREC_MUL);
            out.push('/');
            render(r, out, PREC_MUL + 1);
        }
        ScalarExpr::Neg(inner) => {
            out.push('-');
            render(inner, out, PREC_UNARY);
        }
        ScalarExpr::Pow(b, e) => {
            render(b, out, PREC_ATOM);
            out.push('^');
            render(e, out, PREC_UNARY);
        }
        ScalarExpr::Call(func, arg) => {
            out.push_str(func.as_str());
            out.push('(');
            render(arg, out, 0);
            out.push(')');
        }
    }
}

impl fmt::Display for ScalarExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.print())
    }
}

impl ScalarExpr {
    /// Canonical text with minimal parentheses under the grammar precedence.
    /// Re-parsing yields a structurally equal tree for simplified input
    /// (rationals with a denominator not dividing 10^9 print as `p/q`, which
    /// re-folds under one `simplify`).
    pub fn print(&self) -> String {
        let mut out = String::new();
        render(self, &mut out, 0);
        out
    }

    /// LaTeX rendering with default variable names.
    pub fn print_latex(&self) -> String {
        self.print_latex_with(&|name| name.to_string())
    }

    /// LaTeX rendering; `var_name` maps variable names to LaTeX.
    pub fn print_latex_with(&self, var_name: &dyn Fn(&str) -> String) -> String {
        let mut out = String::new();
        latex(self, &mut out, 0, var_name);
        out
    }
}

fn latex(e: &ScalarExpr, out: &mut String, min_prec: u8, var_name: &dyn Fn(&str) -> String) {
    let own = match e {
        // \frac renders atomically.
        ScalarExpr::Div(_, _) => PREC_ATOM,
        _ => prec(e),
    };
    if own < min_prec {
        out.push_str("\\left(");
        latex_node(e, out, var_name);
        out.push_str("\\right)");
    } else {
        latex_node(e, out, var_name);
    }
}

fn latex_node(e: &ScalarExpr, out: &mut String, var_name: &dyn Fn(&str) -> String) {
    match e {
        ScalarExpr::Const(n) => {
            if n.is_negative() {
                out.push('-');
                out.push_str(&latex_number(n.abs()));
            } else {
                out.push_str(&latex_number(*n));
            }
        }
        ScalarExpr::Var(name) => out.push_str(&var_name(name)),
        ScalarExpr::Add(l, r) => {
            latex(l, out, PREC_ADD, var_name);
            out.push_str(" + ");
            latex(r, out, PREC_ADD + 1, var_name);
        }
        ScalarExpr::Sub(l, r) => {
            latex(l, out, PREC_ADD, var_name);
            out.push_str(" - ");
            latex(r, out, PREC_ADD + 1, var_name);
        }
        ScalarExpr::Mul(l, r) => {
            latex(l, out, PREC_MUL, var_name);
            out.push_str(" \\, ");
            latex(r, out, PREC_MUL + 1, var_name);
        }
        ScalarExpr::Div(l, r) => {
            out.push_str("\\frac{");
            latex(l, out, 0, var_name);
            out.push_str("}{");
            latex(r, out, 0, var_name);
            out.push('}');
        }
        ScalarExpr::Neg(inner) => {
            out.push('-');
            latex(inner, out, PREC_UNARY, var_name);
        }
        ScalarExpr::Pow(b, e) => {
            latex(b, out, PREC_ATOM, var_name);
            out.push_str("^{");
            latex(e, out, 0, var_name);
            out.push('}');
        }
        ScalarExpr::Call(func, arg) => {
            let name = match func {
                Func::Sin => "\\sin",
                Func::Cos => "\\cos",
                Func::Exp => "\\exp",
                Func::Ln => "\\ln",
                Func::Sqrt => "\\sqrt",
            };
            if matches!(func, Func::Sqrt) {
                out.push_str("\\sqrt{");
                latex(arg, out, 0, var_name);
                out.push('}');
            } else {
                out.push_str(name);
                out.push_str("\\left(");
                latex(arg, out, 0, var_name);
                out.push_str("\\right)");
            }
        }
    }
}

fn latex_number(n: Number) -> String {
    match n {
        Number::Rational(r) => {
            let (p, q) = (*r.numer(), *r.denom());
            if q == 1 {
                p.to_string()
            } else {
                format!("\\frac{{{p}}}{{{q}}}")
            }
        }
        Number::Float(f) => {
            let text = format!("{f}");
            text
        }
    }
}

// ---------------------------------------------------------------------------
// Seeded random expression sampling (shared by unit and acceptance tests)
// ---------------------------------------------------------------------------

pub mod sample {
    //! Deterministic random expressions over given variables, restricted to a
    //! domain-safe subfamily of the grammar (guarded denominators and `ln`
    //! and `sqrt` arguments) so finite-difference checks are well posed on
    //! bounded boxes.

    use super::{Func, ScalarExpr};
    use rand::Rng;

    /// Random expression of the given depth over `vars`.
    pub fn random_expr<R: Rng>(rng: &mut R, vars: &[String], depth: usize) -> ScalarExpr {
        if depth == 0 || rng.random_range(0..10) == 0 {
            return leaf(rng, vars);
        }
        match rng.random_range(0..12) {
            0 | 1 => random_expr(rng, vars, depth - 1) + random_expr(rng, vars, depth - 1),
            2 | 3 => random_expr(rng, vars, depth - 1) - random_expr(rng, vars, depth - 1),
            4 | 5 => random_expr(rng, vars, depth - 1) * random_expr(rng, vars, depth - 1),
            6 => {
                // Guarded denominator bounded away from zero.
                let denom = ScalarExpr::int(2)
                    + random_expr(rng, vars, depth.saturating_sub(2)).powi(2);
                random_expr(rng, vars, depth - 1) / denom
            }
            7 => -random_expr(rng, vars, depth - 1),
            8 => random_expr(rng, vars, depth - 1).powi(rng.random_range(2..=3)),
            9 => ScalarExpr::call(
                if rng.random_range(0..2) == 0 {
                    Func::Sin
                } else {
                    Func::Cos
                },
                random_expr(rng, vars, depth - 1),
            ),
            10 => {
                // Guarded positive argument.
                let arg = ScalarExpr::one()
                    + random_expr(rng, vars, depth.saturating_sub(2)).powi(2);
                ScalarExpr::call(
                    if rng.random_range(0..2) == 0 {
                        Func::Ln
                    } else {
                        Func::Sqrt
                    },
                    arg,
                )
            }
            _ => {
                // exp of a damped argument to avoid overflow on boxes.
                let arg = random_expr(rng, vars, depth.saturating_sub(2))
                    * ScalarExpr::rat(1, 4);
                ScalarExpr::exp(arg)
            }
        }
    }

    fn leaf<R: Rng>(rng: &mut R, vars: &[String]) -> ScalarExpr {
        if !vars.is_empty() && rng.random_range(0..3) > 0 {
            let idx = rng.random_range(0..vars.len());
            ScalarExpr::var(vars[idx].clone())
        } else {
            match rng.random_range(0..3) {
                0 => ScalarExpr::int(rng.random_range(0..=4)),
                1 => ScalarExpr::rat(rng.random_range(1..=9), rng.random_range(1..=4)),
                _ => ScalarExpr::Const(super::Number::Float(rng.random_range(0.1..2.0_f64))),
            }
        }
    }
}
