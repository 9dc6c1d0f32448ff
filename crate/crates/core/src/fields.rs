//! Scalar coefficient fields written in a small arithmetic language.
//!
//! Grammar (lowest to highest precedence):
//!
//! ```text
//! expr    := sum (("<" | "<=" | ">" | ">=") sum)?
//! sum     := product (("+" | "-") product)*
//! product := unary (("*" | "/") unary)*
//! unary   := "-" unary | power
//! power   := primary ("^" "-"? integer)?
//! primary := number | "pi" | x<k> | func "(" expr ("," expr)* ")" | "(" expr ")"
//! ```
//!
//! Functions: `cos sin exp abs sqrt` (one argument), `min max` (two),
//! `if(cond, then, else)` (three). A comparison evaluates to 1 or 0 and `if`
//! picks `then` whenever its condition is nonzero. Variables are 1-based:
//! `x1` is the first coordinate of the evaluation point.

use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown identifier `{name}` at byte {offset}")]
    UnknownIdentifier { name: String, offset: usize },
    #[error("variable x{index} at byte {offset} exceeds dimension {dimension}")]
    VariableOutOfRange {
        index: usize,
        dimension: usize,
        offset: usize,
    },
    #[error("function `{name}` at byte {offset} takes {expected} argument(s), got {found}")]
    Arity {
        name: String,
        expected: usize,
        found: usize,
        offset: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("point has dimension {found}, field expects {expected}")]
    Dimension { expected: usize, found: usize },
    #[error("domain error in `{subexpr}`: {reason}")]
    Domain { subexpr: String, reason: &'static str },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Comparison {
    Lt,
    Le,
    Gt,
    Ge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Cos,
    Sin,
    Exp,
    Abs,
    Sqrt,
    Min,
    Max,
}

impl Func {
    fn lookup(name: &str) -> Option<Func> {
        Some(match name {
            "cos" => Func::Cos,
            "sin" => Func::Sin,
            "exp" => Func::Exp,
            "abs" => Func::Abs,
            "sqrt" => Func::Sqrt,
            "min" => Func::Min,
            "max" => Func::Max,
            _ => return None,
        })
    }

    fn arity(self) -> usize {
        match self {
            Func::Min | Func::Max => 2,
            _ => 1,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Func::Cos => "cos",
            Func::Sin => "sin",
            Func::Exp => "exp",
            Func::Abs => "abs",
            Func::Sqrt => "sqrt",
            Func::Min => "min",
            Func::Max => "max",
        }
    }
}

/// Expression tree. Variables are stored 0-based.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Number(f64),
    Pi,
    Var(usize),
    Neg(Box<Expr>),
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, i32),
    Compare(Comparison, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
    If(Box<Expr>, Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn eval(&self, x: &[f64]) -> Result<f64, EvalError> {
        let value = match self {
            Expr::Number(v) => *v,
            Expr::Pi => std::f64::consts::PI,
            Expr::Var(i) => x[*i],
            Expr::Neg(e) => -e.eval(x)?,
            Expr::Binary(op, lhs, rhs) => {
                let a = lhs.eval(x)?;
                let b = rhs.eval(x)?;
                match op {
                    BinaryOp::Add => a + b,
                    BinaryOp::Sub => a - b,
                    BinaryOp::Mul => a * b,
                    BinaryOp::Div => {
                        if b == 0.0 {
                            return Err(self.domain("division by zero"));
                        }
                        a / b
                    }
                }
            }
            Expr::Pow(base, k) => {
                let b = base.eval(x)?;
                if b == 0.0 && *k < 0 {
                    return Err(self.domain("negative power of zero"));
                }
                b.powi(*k)
            }
            Expr::Compare(cmp, lhs, rhs) => {
                let a = lhs.eval(x)?;
                let b = rhs.eval(x)?;
                let holds = match cmp {
                    Comparison::Lt => a < b,
                    Comparison::Le => a <= b,
                    Comparison::Gt => a > b,
                    Comparison::Ge => a >= b,
                };
                if holds {
                    1.0
                } else {
                    0.0
                }
            }
            Expr::Call(func, args) => {
                let a = args[0].eval(x)?;
                match func {
                    Func::Cos => a.cos(),
                    Func::Sin => a.sin(),
                    Func::Exp => a.exp(),
                    Func::Abs => a.abs(),
                    Func::Sqrt => {
                        if a < 0.0 {
                            return Err(self.domain("square root of a negative number"));
                        }
                        a.sqrt()
                    }
                    Func::Min => a.min(args[1].eval(x)?),
                    Func::Max => a.max(args[1].eval(x)?),
                }
            }
            Expr::If(cond, then, otherwise) => {
                if cond.eval(x)? != 0.0 {
                    then.eval(x)?
                } else {
                    otherwise.eval(x)?
                }
            }
        };
        if value.is_finite() {
            Ok(value)
        } else {
            Err(self.domain("non-finite result"))
        }
    }

    fn domain(&self, reason: &'static str) -> EvalError {
        EvalError::Domain {
            subexpr: self.to_string(),
            reason,
        }
    }

    /// 0-based indices of every variable referenced.
    pub fn variables(&self) -> BTreeSet<usize> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut BTreeSet<usize>) {
        match self {
            Expr::Number(_) | Expr::Pi => {}
            Expr::Var(i) => {
                out.insert(*i);
            }
            Expr::Neg(e) | Expr::Pow(e, _) => e.collect_vars(out),
            Expr::Binary(_, a, b) | Expr::Compare(_, a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
            Expr::Call(_, args) => args.iter().for_each(|a| a.collect_vars(out)),
            Expr::If(c, a, b) => {
                c.collect_vars(out);
                a.collect_vars(out);
                b.collect_vars(out);
            }
        }
    }

    /// Rewrites variable indices through `map`.
    pub fn remap(&self, map: &impl Fn(usize) -> usize) -> Expr {
        let b = |e: &Expr| Box::new(e.remap(map));
        match self {
            Expr::Number(v) => Expr::Number(*v),
            Expr::Pi => Expr::Pi,
            Expr::Var(i) => Expr::Var(map(*i)),
            Expr::Neg(e) => Expr::Neg(b(e)),
            Expr::Binary(op, l, r) => Expr::Binary(*op, b(l), b(r)),
            Expr::Pow(e, k) => Expr::Pow(b(e), *k),
            Expr::Compare(c, l, r) => Expr::Compare(*c, b(l), b(r)),
            Expr::Call(f, args) => Expr::Call(*f, args.iter().map(|a| a.remap(map)).collect()),
            Expr::If(c, t, e) => Expr::If(b(c), b(t), b(e)),
        }
    }
}

// Printing parenthesizes every compound subexpression so the output reparses
// to the same tree regardless of precedence.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Number(v) => {
                if *v < 0.0 {
                    write!(f, "(-{:?})", -v)
                } else {
                    write!(f, "{v:?}")
                }
            }
            Expr::Pi => f.write_str("pi"),
            Expr::Var(i) => write!(f, "x{}", i + 1),
            Expr::Neg(e) => write!(f, "(-{e})"),
            Expr::Binary(op, a, b) => {
                let sym = match op {
                    BinaryOp::Add => "+",
                    BinaryOp::Sub => "-",
                    BinaryOp::Mul => "*",
                    BinaryOp::Div => "/",
                };
                write!(f, "({a} {sym} {b})")
            }
            Expr::Pow(e, k) => write!(f, "({e}^{k})"),
            Expr::Compare(c, a, b) => {
                let sym = match c {
                    Comparison::Lt => "<",
                    Comparison::Le => "<=",
                    Comparison::Gt => ">",
                    Comparison::Ge => ">=",
                };
                write!(f, "({a} {sym} {b})")
            }
            Expr::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (k, a) in args.iter().enumerate() {
                    if k > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
            Expr::If(c, a, b) => write!(f, "if({c}, {a}, {b})"),
        }
    }
}

/// A parsed field together with its source text and the dimension of the
/// points it is evaluated at.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    source: String,
    expr: Expr,
    dimension: usize,
}

impl ScalarField {
    pub fn parse(source: &str, dimension: usize) -> Result<Self, ParseError> {
        let expr = parse_field(source, dimension)?;
        Ok(ScalarField {
            source: source.trim().to_string(),
            expr,
            dimension,
        })
    }

    pub fn constant(value: f64, dimension: usize) -> Self {
        let expr = Expr::Number(value);
        ScalarField {
            source: expr.to_string(),
            expr,
            dimension,
        }
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn expr(&self) -> &Expr {
        &self.expr
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64, EvalError> {
        if x.len() != self.dimension {
            return Err(EvalError::Dimension {
                expected: self.dimension,
                found: x.len(),
            });
        }
        self.expr.eval(x)
    }

    pub fn variables(&self) -> BTreeSet<usize> {
        self.expr.variables()
    }

    /// Restricts the field to the coordinates `keep` (0-based, in order):
    /// variable `keep[j]` becomes variable `j` of a `keep.len()`-dimensional
    /// field. Returns `None` when the field reads a coordinate outside `keep`.
    pub fn restrict(&self, keep: &[usize]) -> Option<ScalarField> {
        let vars = self.variables();
        if vars.iter().any(|v| !keep.contains(v)) {
            return None;
        }
        let expr = self
            .expr
            .remap(&|i| keep.iter().position(|&k| k == i).expect("checked above"));
        Some(ScalarField {
            source: expr.to_string(),
            expr,
            dimension: keep.len(),
        })
    }

    pub fn is_constant(&self) -> bool {
        self.variables().is_empty()
    }
}

/// Parses `source` into an expression over points of dimension `dimension`.
pub fn parse_field(source: &str, dimension: usize) -> Result<Expr, ParseError> {
    let mut parser = Parser {
        src: source,
        bytes: source.as_bytes(),
        pos: 0,
        dimension,
    };
    parser.skip_ws();
    if parser.pos == parser.bytes.len() {
        return Err(ParseError::Syntax {
            offset: 0,
            message: "empty expression".into(),
        });
    }
    let expr = parser.expr()?;
    parser.skip_ws();
    if parser.pos != parser.bytes.len() {
        return Err(parser.syntax("unexpected trailing input"));
    }
    Ok(expr)
}

pub fn eval_field(expr: &Expr, x: &[f64]) -> Result<f64, EvalError> {
    expr.eval(x)
}

struct Parser<'a> {
    src: &'a str,
    bytes: &'a [u8],
    pos: usize,
    dimension: usize,
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

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: u8) -> Result<(), ParseError> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(self.syntax(&format!("expected `{}`", c as char)))
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let lhs = self.sum()?;
        let cmp = match self.peek() {
            Some(b'<') => Comparison::Lt,
            Some(b'>') => Comparison::Gt,
            _ => return Ok(lhs),
        };
        self.pos += 1;
        let cmp = if self.bytes.get(self.pos) == Some(&b'=') {
            self.pos += 1;
            match cmp {
                Comparison::Lt => Comparison::Le,
                _ => Comparison::Ge,
            }
        } else {
            cmp
        };
        let rhs = self.sum()?;
        if matches!(self.peek(), Some(b'<') | Some(b'>')) {
            return Err(self.syntax("chained comparisons are not supported"));
        }
        Ok(Expr::Compare(cmp, Box::new(lhs), Box::new(rhs)))
    }

    fn sum(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.product()?;
        loop {
            let op = match self.peek() {
                Some(b'+') => BinaryOp::Add,
                Some(b'-') => BinaryOp::Sub,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.product()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn product(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Some(b'*') => BinaryOp::Mul,
                Some(b'/') => BinaryOp::Div,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.eat(b'-') {
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.primary()?;
        if !self.eat(b'^') {
            return Ok(base);
        }
        let negative = self.eat(b'-');
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.syntax("exponent must be an integer literal"));
        }
        let k: i32 = self.src[start..self.pos].parse().map_err(|_| ParseError::Syntax {
            offset: start,
            message: "exponent out of range".into(),
        })?;
        if self.peek() == Some(b'^') {
            return Err(self.syntax("chained powers need parentheses"));
        }
        Ok(Expr::Pow(Box::new(base), if negative { -k } else { k }))
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(b')')?;
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() => self.identifier(),
            Some(_) => Err(self.syntax("unexpected character")),
            None => Err(self.syntax("unexpected end of input")),
        }
    }

    fn number(&mut self) -> Result<Expr, ParseError> {
        let start = self.pos;
        let digits = |p: &mut Self| {
            while p.pos < p.bytes.len() && p.bytes[p.pos].is_ascii_digit() {
                p.pos += 1;
            }
        };
        digits(self);
        if self.bytes.get(self.pos) == Some(&b'.') {
            self.pos += 1;
            digits(self);
        }
        if matches!(self.bytes.get(self.pos), Some(b'e') | Some(b'E')) {
            let save = self.pos;
            self.pos += 1;
            if matches!(self.bytes.get(self.pos), Some(b'+') | Some(b'-')) {
                self.pos += 1;
            }
            let exp_start = self.pos;
            digits(self);
            if exp_start == self.pos {
                self.pos = save;
            }
        }
        self.src[start..self.pos]
            .parse::<f64>()
            .map(Expr::Number)
            .map_err(|_| ParseError::Syntax {
                offset: start,
                message: "malformed number".into(),
            })
    }

    fn identifier(&mut self) -> Result<Expr, ParseError> {
        let start = self.pos;
        while self.pos < self.bytes.len()
            && (self.bytes[self.pos].is_ascii_alphanumeric() || self.bytes[self.pos] == b'_')
        {
            self.pos += 1;
        }
        let name = &self.src[start..self.pos];
        if name == "pi" {
            return Ok(Expr::Pi);
        }
        if let Some(digits) = name.strip_prefix('x') {
            if !digits.is_empty() && digits.bytes().all(|c| c.is_ascii_digit()) {
                let index: usize = digits.parse().unwrap_or(usize::MAX);
                if index == 0 || index > self.dimension {
                    return Err(ParseError::VariableOutOfRange {
                        index,
                        dimension: self.dimension,
                        offset: start,
                    });
                }
                return Ok(Expr::Var(index - 1));
            }
        }
        let is_if = name == "if";
        let func = Func::lookup(name);
        if !is_if && func.is_none() {
            return Err(ParseError::UnknownIdentifier {
                name: name.to_string(),
                offset: start,
            });
        }
        self.expect(b'(')?;
        let mut args = vec![self.expr()?];
        while self.eat(b',') {
            args.push(self.expr()?);
        }
        self.expect(b')')?;
        let expected = func.map_or(3, Func::arity);
        if args.len() != expected {
            return Err(ParseError::Arity {
                name: name.to_string(),
                expected,
                found: args.len(),
                offset: start,
            });
        }
        Ok(match func {
            Some(f) => Expr::Call(f, args),
            None => {
                let mut it = args.into_iter();
                let (c, t, e) = (it.next().unwrap(), it.next().unwrap(), it.next().unwrap());
                Expr::If(Box::new(c), Box::new(t), Box::new(e))
            }
        })
    }
}
