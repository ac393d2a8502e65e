//! A small, branch-cut-free expression language for holomorphic potentials.
//!
//! Every primitive admitted by the grammar is entire or meromorphic, so a
//! parsed expression is single-valued and holomorphic wherever it is finite.
//! The grammar (see `docs/grammar.md` for the EBNF):
//!
//! ```text
//! expr    := term (("+" | "-") term)*
//! term    := unary (("*" | "/") unary)*
//! unary   := ("-" | "+") unary | power
//! power   := primary ("^" exponent)*
//! primary := number | imag | "z" | "i" | "pi" | func "(" expr ")" | "(" expr ")"
//! ```
//!
//! Evaluation carries a first derivative alongside the value so that
//! denominators approaching a zero can be recognised as pole proximity.

use std::fmt;

use num_complex::Complex64;
use thiserror::Error;

/// Maximum accepted source length in bytes.
pub const MAX_SOURCE_LEN: usize = 64 * 1024;
/// Largest admissible magnitude of an integer exponent.
pub const MAX_EXPONENT: i32 = 16;
/// Intermediate magnitudes above this are reported as pole proximity.
pub const OVERFLOW_SENTINEL: f64 = 1e100;
/// A denominator whose Newton distance to its nearest zero falls below this is
/// treated as sitting on a pole.
pub const POLE_RADIUS: f64 = 1e-11;

const BRANCH_CUT_NAMES: &[&str] = &[
    "log", "ln", "log10", "log2", "sqrt", "cbrt", "pow", "asin", "acos", "atan", "asinh", "acosh",
    "atanh", "arcsin", "arccos", "arctan", "arg",
];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExprError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown identifier `{name}` at byte {offset}")]
    UnknownIdentifier { name: String, offset: usize },
    #[error("`{name}` at byte {offset} needs a branch cut and is not admitted")]
    BranchCut { name: String, offset: usize },
    #[error("exponent at byte {offset} must be an integer literal")]
    NonIntegerExponent { offset: usize },
    #[error("exponent {value} at byte {offset} is outside [-16, 16]")]
    ExponentOutOfRange { value: i64, offset: usize },
    #[error("expression is {len} bytes, limit is 65536")]
    TooLong { len: usize },
}

/// Raised when evaluation lands on (or numerically next to) a pole.
#[derive(Debug, Clone, Copy, PartialEq, Error)]
#[error("pole proximity at z = {z}")]
pub struct PoleProximity {
    pub z: Complex64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Exp,
    Sin,
    Cos,
    Sinh,
    Cosh,
    Tanh,
    Sech,
}

impl Func {
    fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "exp" => Func::Exp,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "sinh" => Func::Sinh,
            "cosh" => Func::Cosh,
            "tanh" => Func::Tanh,
            "sech" => Func::Sech,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Sinh => "sinh",
            Func::Cosh => "cosh",
            Func::Tanh => "tanh",
            Func::Sech => "sech",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Const(Complex64),
    Var,
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Pow(Box<Node>, i32),
    Call(Func, Box<Node>),
}

/// A parsed potential `p(z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialExpr {
    root: Node,
    source: String,
}

impl PotentialExpr {
    pub fn parse(text: &str) -> Result<Self, ExprError> {
        if text.len() > MAX_SOURCE_LEN {
            return Err(ExprError::TooLong { len: text.len() });
        }
        let tokens = lex(text)?;
        let mut parser = Parser { tokens, pos: 0 };
        let root = parser.expr()?;
        let tok = parser.peek();
        if tok.kind != Tok::End {
            return Err(ExprError::Syntax {
                offset: tok.offset,
                message: "unexpected trailing input".into(),
            });
        }
        Ok(PotentialExpr {
            root,
            source: text.to_owned(),
        })
    }

    /// The zero potential.
    pub fn zero() -> Self {
        PotentialExpr {
            root: Node::Const(Complex64::new(0.0, 0.0)),
            source: "0".into(),
        }
    }

    /// Builds `c0 + c1 z + c2 z^2 + ...` in Horner form from tabulated coefficients.
    pub fn from_polynomial(coeffs: &[Complex64]) -> Self {
        let mut iter = coeffs.iter().rev();
        let mut root = match iter.next() {
            Some(c) => Node::Const(*c),
            None => Node::Const(Complex64::new(0.0, 0.0)),
        };
        for c in iter {
            root = Node::Add(
                Box::new(Node::Const(*c)),
                Box::new(Node::Mul(Box::new(Node::Var), Box::new(root))),
            );
        }
        let source = root.to_string();
        PotentialExpr { root, source }
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.root, Node::Const(c) if c == Complex64::new(0.0, 0.0))
    }

    /// Evaluates `p(z)`, reporting pole proximity instead of overflowing.
    pub fn eval(&self, z: Complex64) -> Result<Complex64, PoleProximity> {
        self.eval_with_derivative(z).map(|j| j.0)
    }

    /// Evaluates `p(z)` and `p'(z)` together.
    pub fn eval_with_derivative(
        &self,
        z: Complex64,
    ) -> Result<(Complex64, Complex64), PoleProximity> {
        let jet = eval_node(&self.root, Jet::var(z)).ok_or(PoleProximity { z })?;
        Ok((jet.v, jet.d))
    }
}

impl fmt::Display for PotentialExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.root.fmt(f)
    }
}

impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Node::Const(c) => {
                if c.im == 0.0 {
                    if c.re.is_sign_negative() {
                        write!(f, "(-{:?})", -c.re)
                    } else {
                        write!(f, "{:?}", c.re)
                    }
                } else {
                    write!(f, "({:?} + {:?}i)", c.re, c.im)
                }
            }
            Node::Var => f.write_str("z"),
            Node::Neg(a) => write!(f, "(-{a})"),
            Node::Add(a, b) => write!(f, "({a} + {b})"),
            Node::Sub(a, b) => write!(f, "({a} - {b})"),
            Node::Mul(a, b) => write!(f, "({a} * {b})"),
            Node::Div(a, b) => write!(f, "({a} / {b})"),
            Node::Pow(a, n) => write!(f, "({a}^({n}))"),
            Node::Call(func, a) => write!(f, "{}({a})", func.name()),
        }
    }
}

/// Value and first derivative with respect to `z`.
#[derive(Debug, Clone, Copy)]
struct Jet {
    v: Complex64,
    d: Complex64,
}

impl Jet {
    fn var(z: Complex64) -> Self {
        Jet {
            v: z,
            d: Complex64::new(1.0, 0.0),
        }
    }

    fn constant(c: Complex64) -> Self {
        Jet {
            v: c,
            d: Complex64::new(0.0, 0.0),
        }
    }

    fn checked(self) -> Option<Self> {
        let m = self.v.norm();
        if m.is_finite() && m <= OVERFLOW_SENTINEL {
            Some(self)
        } else {
            None
        }
    }

    /// `1 / self`, refusing when `self` is within `POLE_RADIUS` of a zero.
    fn recip(self) -> Option<Self> {
        let den = self.v.norm();
        if den == 0.0 || den < POLE_RADIUS * self.d.norm() {
            return None;
        }
        let inv = self.v.inv();
        Jet {
            v: inv,
            d: -self.d * inv * inv,
        }
        .checked()
    }

    fn mul(self, o: Jet) -> Jet {
        Jet {
            v: self.v * o.v,
            d: self.d * o.v + self.v * o.d,
        }
    }
}

fn eval_node(node: &Node, z: Jet) -> Option<Jet> {
    let out = match node {
        Node::Const(c) => Jet::constant(*c),
        Node::Var => z,
        Node::Neg(a) => {
            let a = eval_node(a, z)?;
            Jet { v: -a.v, d: -a.d }
        }
        Node::Add(a, b) => {
            let (a, b) = (eval_node(a, z)?, eval_node(b, z)?);
            Jet {
                v: a.v + b.v,
                d: a.d + b.d,
            }
        }
        Node::Sub(a, b) => {
            let (a, b) = (eval_node(a, z)?, eval_node(b, z)?);
            Jet {
                v: a.v - b.v,
                d: a.d - b.d,
            }
        }
        Node::Mul(a, b) => eval_node(a, z)?.mul(eval_node(b, z)?),
        Node::Div(a, b) => {
            let num = eval_node(a, z)?;
            let den = eval_node(b, z)?;
            num.mul(den.recip()?)
        }
        Node::Pow(a, n) => {
            let base = eval_node(a, z)?;
            let base = if *n < 0 { base.recip()? } else { base };
            powi(base, n.unsigned_abs())?
        }
        Node::Call(func, a) => {
            let a = eval_node(a, z)?;
            apply(*func, a)?
        }
    };
    out.checked()
}

fn powi(base: Jet, n: u32) -> Option<Jet> {
    if n == 0 {
        return Some(Jet::constant(Complex64::new(1.0, 0.0)));
    }
    let mut v = Complex64::new(1.0, 0.0);
    for _ in 0..n - 1 {
        v *= base.v;
    }
    // v = base^(n-1)
    let d = base.d * v * f64::from(n);
    Jet { v: v * base.v, d }.checked()
}

fn apply(func: Func, a: Jet) -> Option<Jet> {
    let j = match func {
        Func::Exp => {
            let e = a.v.exp();
            Jet { v: e, d: e * a.d }
        }
        Func::Sin => Jet {
            v: a.v.sin(),
            d: a.v.cos() * a.d,
        },
        Func::Cos => Jet {
            v: a.v.cos(),
            d: -a.v.sin() * a.d,
        },
        Func::Sinh => Jet {
            v: a.v.sinh(),
            d: a.v.cosh() * a.d,
        },
        Func::Cosh => Jet {
            v: a.v.cosh(),
            d: a.v.sinh() * a.d,
        },
        Func::Tanh => {
            let s = Jet {
                v: a.v.sinh(),
                d: a.v.cosh() * a.d,
            }
            .checked()?;
            let c = Jet {
                v: a.v.cosh(),
                d: a.v.sinh() * a.d,
            }
            .checked()?;
            s.mul(c.recip()?)
        }
        Func::Sech => Jet {
            v: a.v.cosh(),
            d: a.v.sinh() * a.d,
        }
        .checked()?
        .recip()?,
    };
    j.checked()
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Imag(f64),
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

#[derive(Debug, Clone)]
struct Token {
    kind: Tok,
    offset: usize,
    /// Whether a numeric literal was written without a fraction or exponent part.
    integral: bool,
}

fn lex(text: &str) -> Result<Vec<Token>, ExprError> {
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
        let simple = match c {
            b'+' => Some(Tok::Plus),
            b'-' => Some(Tok::Minus),
            b'*' => Some(Tok::Star),
            b'/' => Some(Tok::Slash),
            b'^' => Some(Tok::Caret),
            b'(' => Some(Tok::LParen),
            b')' => Some(Tok::RParen),
            _ => None,
        };
        if let Some(kind) = simple {
            out.push(Token {
                kind,
                offset: start,
                integral: false,
            });
            i += 1;
            continue;
        }
        if c.is_ascii_digit() || c == b'.' {
            let mut integral = true;
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            if i < bytes.len() && bytes[i] == b'.' {
                integral = false;
                i += 1;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    integral = false;
                    i = j;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let lit = &text[start..i];
            let value: f64 = lit.parse().map_err(|_| ExprError::Syntax {
                offset: start,
                message: format!("malformed number `{lit}`"),
            })?;
            if !value.is_finite() {
                return Err(ExprError::Syntax {
                    offset: start,
                    message: format!("number `{lit}` is out of range"),
                });
            }
            // `2.5i` is an imaginary literal unless `i` starts a longer identifier.
            let imag = i < bytes.len()
                && bytes[i] == b'i'
                && !bytes
                    .get(i + 1)
                    .is_some_and(|b| b.is_ascii_alphanumeric() || *b == b'_');
            if imag {
                i += 1;
                out.push(Token {
                    kind: Tok::Imag(value),
                    offset: start,
                    integral: false,
                });
            } else {
                out.push(Token {
                    kind: Tok::Num(value),
                    offset: start,
                    integral,
                });
            }
            continue;
        }
        if c.is_ascii_alphabetic() || c == b'_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push(Token {
                kind: Tok::Ident(text[start..i].to_owned()),
                offset: start,
                integral: false,
            });
            continue;
        }
        let ch = text[start..].chars().next().unwrap_or('?');
        return Err(ExprError::Syntax {
            offset: start,
            message: format!("unexpected character `{ch}`"),
        });
    }
    out.push(Token {
        kind: Tok::End,
        offset: text.len(),
        integral: false,
    });
    Ok(out)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.tokens[self.pos]
    }

    fn bump(&mut self) -> Token {
        let t = self.tokens[self.pos].clone();
        if t.kind != Tok::End {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, kind: Tok, what: &str) -> Result<(), ExprError> {
        let t = self.bump();
        if t.kind == kind {
            Ok(())
        } else {
            Err(ExprError::Syntax {
                offset: t.offset,
                message: format!("expected {what}"),
            })
        }
    }

    fn expr(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.term()?;
        loop {
            match self.peek().kind {
                Tok::Plus => {
                    self.bump();
                    lhs = Node::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Tok::Minus => {
                    self.bump();
                    lhs = Node::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            match self.peek().kind {
                Tok::Star => {
                    self.bump();
                    lhs = Node::Mul(Box::new(lhs), Box::new(self.unary()?));
                }
                Tok::Slash => {
                    self.bump();
                    lhs = Node::Div(Box::new(lhs), Box::new(self.unary()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<Node, ExprError> {
        match self.peek().kind {
            Tok::Minus => {
                self.bump();
                Ok(Node::Neg(Box::new(self.unary()?)))
            }
            Tok::Plus => {
                self.bump();
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Node, ExprError> {
        let mut base = self.primary()?;
        while self.peek().kind == Tok::Caret {
            self.bump();
            let n = self.exponent()?;
            base = Node::Pow(Box::new(base), n);
        }
        Ok(base)
    }

    fn exponent(&mut self) -> Result<i32, ExprError> {
        let offset = self.peek().offset;
        let parens = self.peek().kind == Tok::LParen;
        if parens {
            self.bump();
        }
        let mut sign = 1.0;
        loop {
            match self.peek().kind {
                Tok::Minus => {
                    sign = -sign;
                    self.bump();
                }
                Tok::Plus => {
                    self.bump();
                }
                _ => break,
            }
        }
        let tok = self.bump();
        let value = match tok.kind {
            Tok::Num(v) => v,
            Tok::End => {
                return Err(ExprError::Syntax {
                    offset: tok.offset,
                    message: "missing exponent".into(),
                })
            }
            _ => return Err(ExprError::NonIntegerExponent { offset }),
        };
        if parens {
            let t = self.peek();
            if t.kind != Tok::RParen {
                return Err(ExprError::NonIntegerExponent { offset });
            }
            self.bump();
        }
        if !tok.integral && value.fract() != 0.0 {
            return Err(ExprError::BranchCut {
                name: "^".into(),
                offset,
            });
        }
        let value = sign * value;
        if value.abs() > f64::from(MAX_EXPONENT) {
            return Err(ExprError::ExponentOutOfRange {
                value: value.clamp(i64::MIN as f64, i64::MAX as f64) as i64,
                offset,
            });
        }
        Ok(value as i32)
    }

    fn primary(&mut self) -> Result<Node, ExprError> {
        let tok = self.bump();
        match tok.kind {
            Tok::Num(v) => Ok(Node::Const(Complex64::new(v, 0.0))),
            Tok::Imag(v) => Ok(Node::Const(Complex64::new(0.0, v))),
            Tok::LParen => {
                let inner = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(inner)
            }
            Tok::Ident(name) => self.ident(name, tok.offset),
            Tok::End => Err(ExprError::Syntax {
                offset: tok.offset,
                message: "unexpected end of input".into(),
            }),
            _ => Err(ExprError::Syntax {
                offset: tok.offset,
                message: "expected an operand".into(),
            }),
        }
    }

    fn ident(&mut self, name: String, offset: usize) -> Result<Node, ExprError> {
        match name.as_str() {
            "z" => return Ok(Node::Var),
            "i" => return Ok(Node::Const(Complex64::new(0.0, 1.0))),
            "pi" => return Ok(Node::Const(Complex64::new(std::f64::consts::PI, 0.0))),
            _ => {}
        }
        if BRANCH_CUT_NAMES.contains(&name.as_str()) {
            return Err(ExprError::BranchCut { name, offset });
        }
        let Some(func) = Func::from_name(&name) else {
            return Err(ExprError::UnknownIdentifier { name, offset });
        };
        self.expect(Tok::LParen, "`(` after function name")?;
        let arg = self.expr()?;
        self.expect(Tok::RParen, "`)`")?;
        Ok(Node::Call(func, Box::new(arg)))
    }
}
