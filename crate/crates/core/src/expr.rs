//! A small arithmetic language for density potentials.
//!
//! Expressions are built from numeric literals, parameter variables `x1..xd`,
//! sample variables `w1` (and `w2` on product spaces), the binary operators
//! `+ - * / ^` and the functions `exp`, `log`, `sqrt`, `cosh`, `abs` and
//! `pow(a, b)`.
//!
//! Precedence, from tightest to loosest: `^` (right-associative), unary minus,
//! `* /`, `+ -`. So `-x1^2` is `-(x1^2)` and `2^3^2` is `2^(3^2)`.
//!
//! ```
//! use infogeo::expr::Expression;
//!
//! let e: Expression = "exp(-x1^2 / w1^(1/3))".parse().unwrap();
//! let v = e.eval(&[1.0], &[0.001]).unwrap();
//! assert!((v - (-10.0f64).exp()).abs() < 1e-15);
//! ```
//!
//! Log-derivatives of a potential in the parameter are taken by central
//! differences of `ln p̄` (see [`dlog_dv`]).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ParseError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },

    #[error("unknown identifier `{name}` at byte {offset}")]
    UnknownIdentifier { offset: usize, name: String },

    #[error("`{name}` at byte {offset} takes {expected} argument(s), got {got}")]
    Arity {
        offset: usize,
        name: String,
        expected: usize,
        got: usize,
    },

    #[error("variable `{name}` exceeds the declared dimension {limit}")]
    VariableOutOfRange { name: String, limit: usize },
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum EvalError {
    #[error("domain error in {op} (argument {value})")]
    Domain { op: &'static str, value: f64 },

    #[error("non-finite result {value} in {op}")]
    NonFinite { op: &'static str, value: f64 },

    #[error("variable `{name}` is not bound (got {available} values)")]
    Unbound { name: String, available: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Pow => "^",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Exp,
    Log,
    Sqrt,
    Cosh,
    Abs,
    Pow,
}

impl Func {
    fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sqrt" => Func::Sqrt,
            "cosh" => Func::Cosh,
            "abs" => Func::Abs,
            "pow" => Func::Pow,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Cosh => "cosh",
            Func::Abs => "abs",
            Func::Pow => "pow",
        }
    }

    fn arity(self) -> usize {
        match self {
            Func::Pow => 2,
            _ => 1,
        }
    }
}

/// Syntax tree node. Variable indices are zero-based (`x1` is `Param(0)`).
#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Num(f64),
    Param(usize),
    Sample(usize),
    Neg(Box<Node>),
    Bin(BinOp, Box<Node>, Box<Node>),
    Call(Func, Vec<Node>),
}

/// A parsed expression together with the variable counts it references.
#[derive(Debug, Clone, PartialEq)]
pub struct Expression {
    root: Node,
    params: usize,
    samples: usize,
}

impl Expression {
    pub fn parse(text: &str) -> Result<Expression, ParseError> {
        let mut p = Parser {
            src: text,
            bytes: text.as_bytes(),
            pos: 0,
        };
        let root = p.expr()?;
        p.skip_ws();
        if p.pos != p.bytes.len() {
            return Err(p.syntax("unexpected trailing input"));
        }
        Ok(Expression::from_node(root))
    }

    pub fn from_node(root: Node) -> Expression {
        let (mut params, mut samples) = (0, 0);
        scan_vars(&root, &mut params, &mut samples);
        Expression {
            root,
            params,
            samples,
        }
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    /// Number of parameter variables referenced (highest `xN` index).
    pub fn param_count(&self) -> usize {
        self.params
    }

    /// Number of sample variables referenced (highest `wN` index).
    pub fn sample_count(&self) -> usize {
        self.samples
    }

    /// Rejects expressions that mention variables beyond the given dimensions.
    pub fn check_dims(&self, params: usize, samples: usize) -> Result<(), ParseError> {
        if self.params > params {
            return Err(ParseError::VariableOutOfRange {
                name: format!("x{}", self.params),
                limit: params,
            });
        }
        if self.samples > samples {
            return Err(ParseError::VariableOutOfRange {
                name: format!("w{}", self.samples),
                limit: samples,
            });
        }
        Ok(())
    }

    pub fn eval(&self, x: &[f64], w: &[f64]) -> Result<f64, EvalError> {
        let v = eval_node(&self.root, x, w)?;
        finite("result", v)
    }

    /// Evaluates `ln` of the expression, peeling `exp`, products, quotients
    /// and powers structurally so that tiny densities keep full precision.
    pub fn eval_ln(&self, x: &[f64], w: &[f64]) -> Result<f64, EvalError> {
        ln_node(&self.root, x, w)
    }
}

impl FromStr for Expression {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Expression::parse(s)
    }
}

impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_node(&self.root, f)
    }
}

impl Serialize for Expression {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Expression {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        Expression::parse(&text).map_err(serde::de::Error::custom)
    }
}

fn scan_vars(node: &Node, params: &mut usize, samples: &mut usize) {
    match node {
        Node::Num(_) => {}
        Node::Param(i) => *params = (*params).max(i + 1),
        Node::Sample(i) => *samples = (*samples).max(i + 1),
        Node::Neg(a) => scan_vars(a, params, samples),
        Node::Bin(_, a, b) => {
            scan_vars(a, params, samples);
            scan_vars(b, params, samples);
        }
        Node::Call(_, args) => args.iter().for_each(|a| scan_vars(a, params, samples)),
    }
}

fn write_node(node: &Node, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    match node {
        Node::Num(v) => write!(f, "{v}"),
        Node::Param(i) => write!(f, "x{}", i + 1),
        Node::Sample(i) => write!(f, "w{}", i + 1),
        Node::Neg(a) => {
            f.write_str("(-")?;
            write_node(a, f)?;
            f.write_str(")")
        }
        Node::Bin(op, a, b) => {
            f.write_str("(")?;
            write_node(a, f)?;
            write!(f, " {} ", op.symbol())?;
            write_node(b, f)?;
            f.write_str(")")
        }
        Node::Call(func, args) => {
            write!(f, "{}(", func.name())?;
            for (i, a) in args.iter().enumerate() {
                if i > 0 {
                    f.write_str(", ")?;
                }
                write_node(a, f)?;
            }
            f.write_str(")")
        }
    }
}

fn finite(op: &'static str, v: f64) -> Result<f64, EvalError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(EvalError::NonFinite { op, value: v })
    }
}

fn lookup(vals: &[f64], i: usize, prefix: char) -> Result<f64, EvalError> {
    vals.get(i).copied().ok_or_else(|| EvalError::Unbound {
        name: format!("{prefix}{}", i + 1),
        available: vals.len(),
    })
}

fn power(a: f64, b: f64) -> Result<f64, EvalError> {
    if a == 0.0 && b < 0.0 {
        return Err(EvalError::Domain { op: "^", value: a });
    }
    let v = a.powf(b);
    if v.is_nan() {
        return Err(EvalError::Domain { op: "^", value: a });
    }
    finite("^", v)
}

fn eval_node(node: &Node, x: &[f64], w: &[f64]) -> Result<f64, EvalError> {
    match node {
        Node::Num(v) => Ok(*v),
        Node::Param(i) => lookup(x, *i, 'x'),
        Node::Sample(i) => lookup(w, *i, 'w'),
        Node::Neg(a) => Ok(-eval_node(a, x, w)?),
        Node::Bin(op, a, b) => {
            let a = eval_node(a, x, w)?;
            let b = eval_node(b, x, w)?;
            match op {
                BinOp::Add => finite("+", a + b),
                BinOp::Sub => finite("-", a - b),
                BinOp::Mul => finite("*", a * b),
                BinOp::Div => {
                    if b == 0.0 {
                        Err(EvalError::Domain { op: "/", value: b })
                    } else {
                        finite("/", a / b)
                    }
                }
                BinOp::Pow => power(a, b),
            }
        }
        Node::Call(func, args) => {
            let a = eval_node(&args[0], x, w)?;
            match func {
                Func::Exp => finite("exp", a.exp()),
                Func::Log => {
                    if a <= 0.0 {
                        Err(EvalError::Domain { op: "log", value: a })
                    } else {
                        Ok(a.ln())
                    }
                }
                Func::Sqrt => {
                    if a < 0.0 {
                        Err(EvalError::Domain { op: "sqrt", value: a })
                    } else {
                        Ok(a.sqrt())
                    }
                }
                Func::Cosh => finite("cosh", a.cosh()),
                Func::Abs => Ok(a.abs()),
                Func::Pow => power(a, eval_node(&args[1], x, w)?),
            }
        }
    }
}

fn ln_node(node: &Node, x: &[f64], w: &[f64]) -> Result<f64, EvalError> {
    // negative factors can still give a positive product; retry directly
    ln_structural(node, x, w).or_else(|_| ln_direct(node, x, w))
}

fn ln_direct(node: &Node, x: &[f64], w: &[f64]) -> Result<f64, EvalError> {
    let v = eval_node(node, x, w)?;
    if v <= 0.0 {
        Err(EvalError::Domain { op: "ln", value: v })
    } else {
        Ok(v.ln())
    }
}

fn ln_structural(node: &Node, x: &[f64], w: &[f64]) -> Result<f64, EvalError> {
    match node {
        Node::Call(Func::Exp, args) => eval_node(&args[0], x, w),
        Node::Bin(BinOp::Mul, a, b) => Ok(ln_node(a, x, w)? + ln_node(b, x, w)?),
        Node::Bin(BinOp::Div, a, b) => Ok(ln_node(a, x, w)? - ln_node(b, x, w)?),
        Node::Bin(BinOp::Pow, base, exponent) => ln_power(base, exponent, x, w),
        Node::Call(Func::Pow, args) => ln_power(&args[0], &args[1], x, w),
        _ => ln_direct(node, x, w),
    }
}

fn ln_power(base: &Node, exponent: &Node, x: &[f64], w: &[f64]) -> Result<f64, EvalError> {
    let e = eval_node(exponent, x, w)?;
    let lb = ln_node(base, x, w)?;
    finite("ln", e * lb)
}

struct Parser<'a> {
    src: &'a str,
    bytes: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn syntax(&self, message: &str) -> ParseError {
        ParseError::Syntax {
            offset: self.pos,
            message: message.to_string(),
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

    fn expr(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.term()?;
        while let Some(c @ (b'+' | b'-')) = self.peek() {
            self.pos += 1;
            let rhs = self.term()?;
            let op = if c == b'+' { BinOp::Add } else { BinOp::Sub };
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.unary()?;
        while let Some(c @ (b'*' | b'/')) = self.peek() {
            self.pos += 1;
            let rhs = self.unary()?;
            let op = if c == b'*' { BinOp::Mul } else { BinOp::Div };
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Node, ParseError> {
        match self.peek() {
            Some(b'-') => {
                self.pos += 1;
                Ok(Node::Neg(Box::new(self.unary()?)))
            }
            Some(b'+') => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Node, ParseError> {
        let base = self.primary()?;
        if self.peek() == Some(b'^') {
            self.pos += 1;
            // right-associative; the exponent may carry its own sign
            let exponent = self.unary()?;
            return Ok(Node::Bin(BinOp::Pow, Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Node, ParseError> {
        match self.peek() {
            None => Err(self.syntax("unexpected end of input")),
            Some(b'(') => {
                self.pos += 1;
                let inner = self.expr()?;
                if self.peek() != Some(b')') {
                    return Err(self.syntax("expected `)`"));
                }
                self.pos += 1;
                Ok(inner)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() => self.identifier(),
            Some(_) => Err(self.syntax("unexpected character")),
        }
    }

    fn number(&mut self) -> Result<Node, ParseError> {
        let start = self.pos;
        let b = self.bytes;
        while self.pos < b.len() && (b[self.pos].is_ascii_digit() || b[self.pos] == b'.') {
            self.pos += 1;
        }
        if self.pos < b.len() && (b[self.pos] == b'e' || b[self.pos] == b'E') {
            let mut look = self.pos + 1;
            if look < b.len() && (b[look] == b'+' || b[look] == b'-') {
                look += 1;
            }
            if look < b.len() && b[look].is_ascii_digit() {
                self.pos = look;
                while self.pos < b.len() && b[self.pos].is_ascii_digit() {
                    self.pos += 1;
                }
            }
        }
        let text = &self.src[start..self.pos];
        text.parse::<f64>().map(Node::Num).map_err(|_| ParseError::Syntax {
            offset: start,
            message: format!("malformed number `{text}`"),
        })
    }

    fn identifier(&mut self) -> Result<Node, ParseError> {
        let start = self.pos;
        let b = self.bytes;
        while self.pos < b.len() && (b[self.pos].is_ascii_alphanumeric() || b[self.pos] == b'_') {
            self.pos += 1;
        }
        let name = &self.src[start..self.pos];

        if let Some(func) = Func::from_name(name) {
            if self.peek() != Some(b'(') {
                return Err(self.syntax("expected `(` after function name"));
            }
            self.pos += 1;
            let mut args = Vec::new();
            if self.peek() != Some(b')') {
                loop {
                    args.push(self.expr()?);
                    match self.peek() {
                        Some(b',') => self.pos += 1,
                        Some(b')') => break,
                        _ => return Err(self.syntax("expected `,` or `)`")),
                    }
                }
            }
            self.pos += 1;
            if args.len() != func.arity() {
                return Err(ParseError::Arity {
                    offset: start,
                    name: name.to_string(),
                    expected: func.arity(),
                    got: args.len(),
                });
            }
            return Ok(Node::Call(func, args));
        }

        let var = |prefix: char| -> Option<usize> {
            let digits = name.strip_prefix(prefix)?;
            if digits.is_empty() || digits.starts_with('0') {
                return None;
            }
            digits.parse::<usize>().ok().map(|i| i - 1)
        };
        if let Some(i) = var('x') {
            return Ok(Node::Param(i));
        }
        if let Some(i) = var('w') {
            return Ok(Node::Sample(i));
        }
        Err(ParseError::UnknownIdentifier {
            offset: start,
            name: name.to_string(),
        })
    }
}

/// Central-difference step rule: `h = rel * max(1, |x_i|)` per axis, with
/// `rel = ε^{1/3}` by default and optional per-axis absolute overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffConfig {
    pub relative_step: f64,
    #[serde(default)]
    pub overrides: Vec<Option<f64>>,
}

impl Default for DiffConfig {
    fn default() -> Self {
        DiffConfig {
            relative_step: f64::EPSILON.cbrt(),
            overrides: Vec::new(),
        }
    }
}

impl DiffConfig {
    /// Step along a direction: the smallest per-axis step over active axes.
    pub fn step(&self, x: &[f64], dir: &[f64]) -> f64 {
        let mut h = f64::INFINITY;
        for (i, (&xi, &di)) in x.iter().zip(dir).enumerate() {
            if di == 0.0 {
                continue;
            }
            let hi = match self.overrides.get(i).copied().flatten() {
                Some(o) => o,
                None => self.relative_step * xi.abs().max(1.0),
            };
            h = h.min(hi);
        }
        if h.is_finite() {
            h
        } else {
            self.relative_step
        }
    }
}

/// Central difference of `f` along `dir` at `x`.
///
/// The direction is normalised by its max-norm before stepping, so the result
/// is exactly homogeneous in `dir`.
pub fn central_difference<E>(
    f: impl Fn(&[f64]) -> Result<f64, E>,
    x: &[f64],
    dir: &[f64],
    cfg: &DiffConfig,
) -> Result<f64, E> {
    let scale = dir.iter().fold(0.0f64, |m, d| m.max(d.abs()));
    if scale == 0.0 {
        return Ok(0.0);
    }
    let unit: Vec<f64> = dir.iter().map(|d| d / scale).collect();
    let h = cfg.step(x, &unit);
    let plus: Vec<f64> = x.iter().zip(&unit).map(|(a, u)| a + h * u).collect();
    let minus: Vec<f64> = x.iter().zip(&unit).map(|(a, u)| a - h * u).collect();
    Ok(scale * (f(&plus)? - f(&minus)?) / (2.0 * h))
}

/// `∂_V ln e(x, w)` by central differences of `ln e`.
pub fn dlog_dv(
    e: &Expression,
    x: &[f64],
    v: &[f64],
    w: &[f64],
    cfg: &DiffConfig,
) -> Result<f64, EvalError> {
    central_difference(|p| e.eval_ln(p, w), x, v, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(s: &str) -> Expression {
        s.parse().unwrap()
    }

    #[test]
    fn root_exponential_potential_parses() {
        let e = p("exp(-x1^2 / w1^(1/3))");
        assert!(matches!(e.root(), Node::Call(Func::Exp, _)));
        assert_eq!(e.param_count(), 1);
        assert_eq!(e.sample_count(), 1);
    }

    #[test]
    fn single_variable() {
        assert_eq!(*p("x1").root(), Node::Param(0));
        assert_eq!(*p("w2").root(), Node::Sample(1));
    }

    #[test]
    fn division_by_zero_fails_at_eval_not_parse() {
        let e = p("1/0");
        assert!(matches!(e.eval(&[], &[]), Err(EvalError::Domain { op: "/", .. })));
    }

    #[test]
    fn precedence() {
        assert_eq!(p("-2^2").eval(&[], &[]).unwrap(), -4.0);
        assert_eq!(p("2^3^2").eval(&[], &[]).unwrap(), 512.0);
        assert_eq!(p("2^-1").eval(&[], &[]).unwrap(), 0.5);
        assert_eq!(p("1 - 2 - 3").eval(&[], &[]).unwrap(), -4.0);
        assert_eq!(p("8 / 4 / 2").eval(&[], &[]).unwrap(), 1.0);
        assert_eq!(p("2 + 3 * 4").eval(&[], &[]).unwrap(), 14.0);
        assert_eq!(p("-x1 * 3").eval(&[2.0], &[]).unwrap(), -6.0);
        assert_eq!(p("1e-3 * 2E2").eval(&[], &[]).unwrap(), 0.2);
    }

    #[test]
    fn evaluation_examples() {
        assert_eq!(p("x1*w1").eval(&[2.0], &[3.0]).unwrap(), 6.0);
        let v = p("exp(-x1^2/w1^(1/3))").eval(&[1.0], &[0.001]).unwrap();
        // 0.001^(1/3) = 0.1 up to rounding
        assert!((v / (-10.0f64).exp() - 1.0).abs() < 1e-13);
        assert!(matches!(
            p("log(x1)").eval(&[-1.0], &[]),
            Err(EvalError::Domain { op: "log", .. })
        ));
        assert!(matches!(
            p("sqrt(w1)").eval(&[], &[-1.0]),
            Err(EvalError::Domain { op: "sqrt", .. })
        ));
        assert!(matches!(
            p("exp(x1)").eval(&[1000.0], &[]),
            Err(EvalError::NonFinite { .. })
        ));
        assert_eq!(p("pow(2, 10)").eval(&[], &[]).unwrap(), 1024.0);
        assert_eq!(p("abs(-3) + cosh(0)").eval(&[], &[]).unwrap(), 4.0);
    }

    #[test]
    fn parse_errors_carry_offsets() {
        match Expression::parse("1 + ") {
            Err(ParseError::Syntax { offset, .. }) => assert_eq!(offset, 4),
            other => panic!("{other:?}"),
        }
        match Expression::parse("2 * foo") {
            Err(ParseError::UnknownIdentifier { offset, name }) => {
                assert_eq!(offset, 4);
                assert_eq!(name, "foo");
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            Expression::parse("pow(1)"),
            Err(ParseError::Arity { expected: 2, got: 1, .. })
        ));
        assert!(matches!(
            Expression::parse("exp(1, 2)"),
            Err(ParseError::Arity { .. })
        ));
        assert!(Expression::parse("(1 + 2").is_err());
        assert!(Expression::parse("x0").is_err());
        assert!(Expression::parse("1 2").is_err());
    }

    #[test]
    fn unbound_and_out_of_range_variables() {
        assert!(matches!(
            p("x2").eval(&[1.0], &[]),
            Err(EvalError::Unbound { .. })
        ));
        assert!(p("x1 + w2").check_dims(1, 2).is_ok());
        assert!(p("x3").check_dims(2, 1).is_err());
    }

    #[test]
    fn ln_is_structural() {
        let e = p("exp(-x1^2/w1^(1/3))");
        // the direct value underflows, the structural logarithm does not
        let ln = e.eval_ln(&[1.0], &[1e-40]).unwrap();
        assert!((ln + 1.0 / 1e-40f64.cbrt()).abs() < 1e-3 * 1.0 / 1e-40f64.cbrt());
        assert!(e.eval(&[1.0], &[1e-40]).unwrap() == 0.0);

        let q = p("x1 * w1 / 2 ^ 3");
        let direct = q.eval(&[3.0], &[5.0]).unwrap().ln();
        assert!((q.eval_ln(&[3.0], &[5.0]).unwrap() - direct).abs() < 1e-14);
        assert!(p("x1 - 1").eval_ln(&[0.5], &[]).is_err());
        let neg = p("(x1 - 3) * (x1 - 4)").eval_ln(&[1.0], &[]).unwrap();
        assert!((neg - 6f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn dlog_examples() {
        let cfg = DiffConfig::default();
        let e = p("exp(x1*w1)");
        for x in [-1.5, 0.0, 0.3, 4.0] {
            let d = dlog_dv(&e, &[x], &[1.0], &[2.0], &cfg).unwrap();
            assert!((d - 2.0).abs() < 1e-8, "{d}");
        }
        assert_eq!(dlog_dv(&e, &[0.3], &[0.0], &[2.0], &cfg).unwrap(), 0.0);

        // Bernoulli atom 1 has potential x1; ∂ ln x = 1/x
        let d = dlog_dv(&p("x1"), &[0.25], &[1.0], &[1.0], &cfg).unwrap();
        assert!((d - 4.0).abs() < 1e-7, "{d}");
    }

    /// Closed-form derivatives of ln e for a catalog of expressions.
    #[test]
    fn fd_matches_symbolic_catalog() {
        let cfg = DiffConfig::default();
        type Exact = fn(f64, f64) -> f64;
        let catalog: Vec<(&str, Exact)> = vec![
            ("exp(x1*w1)", |_, w| w),
            ("x1^2 + w1", |x, w| 2.0 * x / (x * x + w)),
            ("exp(-x1^2/w1^(1/3))", |x, w| -2.0 * x / w.cbrt()),
            ("cosh(x1) * w1", |x, _| x.tanh()),
            ("sqrt(x1 + w1)", |x, w| 0.5 / (x + w)),
            ("1 / (1 + exp(-x1 * w1))", |x, w| w / (1.0 + (x * w).exp())),
            ("pow(x1, w1)", |x, w| w / x),
        ];
        for (text, exact) in catalog {
            let e = p(text);
            for &(x, w) in &[(0.7, 0.4), (1.3, 2.0), (2.5, 0.9)] {
                let fd = dlog_dv(&e, &[x], &[1.0], &[w], &cfg).unwrap();
                let ex = exact(x, w);
                assert!(
                    (fd - ex).abs() <= 1e-6 * ex.abs().max(1e-300),
                    "{text} at ({x},{w}): {fd} vs {ex}"
                );
            }
        }
    }

    #[test]
    fn printing_round_trips() {
        for text in [
            "exp(-x1^2 / w1^(1/3))",
            "-2^2",
            "2^3^2",
            "x1 * (w1 - 0.1) / pow(3, -x2)",
            "abs(-w2) + cosh(1e-7) - sqrt(12345.678)",
        ] {
            let e = p(text);
            let again = p(&e.to_string());
            assert_eq!(e, again, "{text} -> {e}");
        }
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        fn arb_node() -> impl Strategy<Value = Node> {
            let leaf = prop_oneof![
                (0.0f64..100.0).prop_map(Node::Num),
                (0usize..3).prop_map(Node::Param),
                (0usize..2).prop_map(Node::Sample),
            ];
            leaf.prop_recursive(4, 24, 2, |inner| {
                prop_oneof![
                    inner.clone().prop_map(|a| Node::Neg(Box::new(a))),
                    (
                        prop_oneof![
                            Just(BinOp::Add),
                            Just(BinOp::Sub),
                            Just(BinOp::Mul),
                            Just(BinOp::Div),
                            Just(BinOp::Pow)
                        ],
                        inner.clone(),
                        inner.clone()
                    )
                        .prop_map(|(op, a, b)| Node::Bin(op, Box::new(a), Box::new(b))),
                    inner.clone().prop_map(|a| Node::Call(Func::Exp, vec![a])),
                    (inner.clone(), inner).prop_map(|(a, b)| Node::Call(Func::Pow, vec![a, b])),
                ]
            })
        }

        proptest! {
            #[test]
            fn parse_print_parse_is_idempotent(node in arb_node()) {
                let e = Expression::from_node(node);
                let once = Expression::parse(&e.to_string()).unwrap();
                prop_assert_eq!(&once, &e);
                let twice = Expression::parse(&once.to_string()).unwrap();
                prop_assert_eq!(twice, once);
            }

            #[test]
            fn dlog_is_homogeneous_in_direction(x in 0.2f64..3.0, w in 0.1f64..2.0) {
                let e = Expression::parse("exp(-x1^2/w1^(1/3)) * (1 + x1^2)").unwrap();
                let cfg = DiffConfig::default();
                let base = dlog_dv(&e, &[x], &[1.0], &[w], &cfg).unwrap();
                for lambda in [-2.0, 0.5, 3.0] {
                    let scaled = dlog_dv(&e, &[x], &[lambda], &[w], &cfg).unwrap();
                    prop_assert!((scaled - lambda * base).abs() <= 1e-7 * (lambda * base).abs().max(1e-12));
                }
            }
        }
    }
}
