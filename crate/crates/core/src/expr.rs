//! A small expression language for coefficient functions.
//!
//! Grammar (lowest to highest precedence):
//!
//! ```text
//! sum     := product (('+' | '-') product)*
//! product := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := atom ('^' unary)?          right associative
//! atom    := number | var | func '(' sum (',' sum)* ')' | '(' sum ')'
//! var     := 't' | 'x' | 'y1' .. 'yN'
//! func    := exp | log | sqrt | abs | min | max
//! ```
//!
//! `-x^2` parses as `-(x^2)`.

use std::fmt;

use thiserror::Error;

use crate::scalar::Scalar;

/// Byte range into the source text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..{}", self.start, self.end)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("parse error at {span}: {message}")]
pub struct ParseError {
    pub message: String,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("unbound variable `{name}` at {span}")]
    Unbound { name: String, span: Span },
    #[error("division by zero at {span}")]
    DivisionByZero { span: Span },
    #[error("log of non-positive value {value} at {span}")]
    LogDomain { value: f64, span: Span },
    #[error("sqrt of negative value {value} at {span}")]
    SqrtDomain { value: f64, span: Span },
    #[error("non-finite result at {span}")]
    NonFinite { span: Span },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    T,
    X,
    /// `y{k+1}`, zero-based.
    Y(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Exp,
    Log,
    Sqrt,
    Abs,
    Min,
    Max,
}

impl Func {
    fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            "min" => Func::Min,
            "max" => Func::Max,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
            Func::Min => "min",
            Func::Max => "max",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Num(f64),
    Var(Var),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    pub node: Node,
    pub span: Span,
}

/// Variable values for one evaluation. Unset entries are unbound.
#[derive(Debug, Clone, Copy)]
pub struct Bindings<'a, S> {
    pub t: Option<S>,
    pub x: Option<S>,
    pub y: &'a [S],
}

impl<'a, S: Scalar> Bindings<'a, S> {
    pub fn new(t: S, x: S, y: &'a [S]) -> Self {
        Self {
            t: Some(t),
            x: Some(x),
            y,
        }
    }

    pub fn space(x: S) -> Self {
        Self {
            t: None,
            x: Some(x),
            y: &[],
        }
    }
}

impl Expr {
    pub fn parse(src: &str) -> Result<Expr, ParseError> {
        let tokens = lex(src)?;
        let mut p = Parser { tokens, pos: 0, len: src.len() };
        let e = p.sum()?;
        if let Some(tok) = p.peek() {
            return Err(ParseError {
                message: format!("unexpected `{}`", tok.kind),
                span: tok.span,
            });
        }
        Ok(e)
    }

    pub fn constant(v: f64) -> Expr {
        Expr {
            node: Node::Num(v),
            span: Span::default(),
        }
    }

    pub fn eval<S: Scalar>(&self, b: &Bindings<'_, S>) -> Result<S, EvalError> {
        let v = self.eval_inner(b)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(EvalError::NonFinite { span: self.span })
        }
    }

    fn eval_inner<S: Scalar>(&self, b: &Bindings<'_, S>) -> Result<S, EvalError> {
        let span = self.span;
        let out = match &self.node {
            Node::Num(v) => S::lit(*v),
            Node::Var(v) => {
                let (val, name) = match *v {
                    Var::T => (b.t, "t".to_string()),
                    Var::X => (b.x, "x".to_string()),
                    Var::Y(k) => (b.y.get(k).copied(), format!("y{}", k + 1)),
                };
                val.ok_or(EvalError::Unbound { name, span })?
            }
            Node::Neg(e) => -e.eval_inner(b)?,
            Node::Bin(op, l, r) => {
                let l = l.eval_inner(b)?;
                let r = r.eval_inner(b)?;
                match op {
                    BinOp::Add => l + r,
                    BinOp::Sub => l - r,
                    BinOp::Mul => l * r,
                    BinOp::Div => {
                        if r == S::zero() {
                            return Err(EvalError::DivisionByZero { span });
                        }
                        l / r
                    }
                    BinOp::Pow => pow(l, r),
                }
            }
            Node::Call(f, args) => {
                let vals = args.iter().map(|a| a.eval_inner(b)).collect::<Result<Vec<S>, _>>()?;
                match f {
                    Func::Exp => vals[0].exp(),
                    Func::Log => {
                        if vals[0] <= S::zero() {
                            return Err(EvalError::LogDomain {
                                value: vals[0].as_f64(),
                                span,
                            });
                        }
                        vals[0].ln()
                    }
                    Func::Sqrt => {
                        if vals[0] < S::zero() {
                            return Err(EvalError::SqrtDomain {
                                value: vals[0].as_f64(),
                                span,
                            });
                        }
                        vals[0].sqrt()
                    }
                    Func::Abs => vals[0].abs(),
                    Func::Min => vals.iter().copied().fold(S::infinity(), S::min),
                    Func::Max => vals.iter().copied().fold(S::neg_infinity(), S::max),
                }
            }
        };
        if out.is_nan() {
            return Err(EvalError::NonFinite { span });
        }
        Ok(out)
    }

    /// Largest `y` index referenced (one-based), 0 if none.
    pub fn max_y_index(&self) -> usize {
        let mut best = 0;
        self.visit(&mut |n| {
            if let Node::Var(Var::Y(k)) = n {
                best = best.max(k + 1);
            }
        });
        best
    }

    pub fn uses(&self, var: Var) -> bool {
        let mut hit = false;
        self.visit(&mut |n| {
            if let Node::Var(v) = n {
                hit |= *v == var;
            }
        });
        hit
    }

    /// True when no variable appears.
    pub fn is_constant(&self) -> bool {
        let mut any = false;
        self.visit(&mut |n| any |= matches!(n, Node::Var(_)));
        !any
    }

    fn visit(&self, f: &mut impl FnMut(&Node)) {
        f(&self.node);
        match &self.node {
            Node::Neg(e) => e.visit(f),
            Node::Bin(_, l, r) => {
                l.visit(f);
                r.visit(f);
            }
            Node::Call(_, args) => args.iter().for_each(|a| a.visit(f)),
            Node::Num(_) | Node::Var(_) => {}
        }
    }
}

fn pow<S: Scalar>(base: S, exp: S) -> S {
    if exp == exp.round() && exp.abs() <= S::lit(64.0) {
        base.powi(exp.as_f64() as i32)
    } else {
        base.powf(exp)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.node {
            Node::Num(v) => {
                if *v < 0.0 {
                    write!(f, "({v:?})")
                } else {
                    write!(f, "{v:?}")
                }
            }
            Node::Var(Var::T) => f.write_str("t"),
            Node::Var(Var::X) => f.write_str("x"),
            Node::Var(Var::Y(k)) => write!(f, "y{}", k + 1),
            Node::Neg(e) => write!(f, "(-{e})"),
            Node::Bin(op, l, r) => {
                let sym = match op {
                    BinOp::Add => "+",
                    BinOp::Sub => "-",
                    BinOp::Mul => "*",
                    BinOp::Div => "/",
                    BinOp::Pow => "^",
                };
                write!(f, "({l} {sym} {r})")
            }
            Node::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum TokKind {
    Num(f64),
    Ident(String),
    Op(char),
}

impl fmt::Display for TokKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TokKind::Num(v) => write!(f, "{v}"),
            TokKind::Ident(s) => f.write_str(s),
            TokKind::Op(c) => write!(f, "{c}"),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    kind: TokKind,
    span: Span,
}

fn lex(src: &str) -> Result<Vec<Token>, ParseError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        if c.is_ascii_digit() || c == '.' {
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            // exponent only when followed by a digit (optionally signed)
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    i = j;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text = &src[start..i];
            let v: f64 = text.parse().map_err(|_| ParseError {
                message: format!("malformed number `{text}`"),
                span: Span { start, end: i },
            })?;
            out.push(Token {
                kind: TokKind::Num(v),
                span: Span { start, end: i },
            });
        } else if c.is_ascii_alphabetic() || c == '_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push(Token {
                kind: TokKind::Ident(src[start..i].to_string()),
                span: Span { start, end: i },
            });
        } else if "+-*/^(),".contains(c) {
            i += 1;
            out.push(Token {
                kind: TokKind::Op(c),
                span: Span { start, end: i },
            });
        } else {
            return Err(ParseError {
                message: format!("unexpected character `{c}`"),
                span: Span { start, end: start + c.len_utf8() },
            });
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
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn eat_op(&mut self, op: char) -> Option<Span> {
        match self.peek() {
            Some(Token { kind: TokKind::Op(c), span }) if *c == op => {
                let s = *span;
                self.pos += 1;
                Some(s)
            }
            _ => None,
        }
    }

    fn eof_span(&self) -> Span {
        Span { start: self.len, end: self.len }
    }

    fn expect_op(&mut self, op: char) -> Result<Span, ParseError> {
        self.eat_op(op).ok_or_else(|| match self.peek() {
            Some(t) => ParseError {
                message: format!("expected `{op}`, found `{}`", t.kind),
                span: t.span,
            },
            None => ParseError {
                message: format!("expected `{op}`, found end of input"),
                span: self.eof_span(),
            },
        })
    }

    fn sum(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.product()?;
        loop {
            let op = if self.eat_op('+').is_some() {
                BinOp::Add
            } else if self.eat_op('-').is_some() {
                BinOp::Sub
            } else {
                return Ok(lhs);
            };
            let rhs = self.product()?;
            lhs = binary(op, lhs, rhs);
        }
    }

    fn product(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = if self.eat_op('*').is_some() {
                BinOp::Mul
            } else if self.eat_op('/').is_some() {
                BinOp::Div
            } else {
                return Ok(lhs);
            };
            let rhs = self.unary()?;
            lhs = binary(op, lhs, rhs);
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if let Some(s) = self.eat_op('-') {
            let inner = self.unary()?;
            let span = Span { start: s.start, end: inner.span.end };
            return Ok(Expr {
                node: Node::Neg(Box::new(inner)),
                span,
            });
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        if self.eat_op('^').is_some() {
            let exp = self.unary()?;
            return Ok(binary(BinOp::Pow, base, exp));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        let Some(tok) = self.peek().cloned() else {
            return Err(ParseError {
                message: "unexpected end of input".into(),
                span: self.eof_span(),
            });
        };
        self.pos += 1;
        match tok.kind {
            TokKind::Num(v) => Ok(Expr {
                node: Node::Num(v),
                span: tok.span,
            }),
            TokKind::Op('(') => {
                let inner = self.sum()?;
                let close = self.expect_op(')')?;
                Ok(Expr {
                    node: inner.node,
                    span: Span { start: tok.span.start, end: close.end },
                })
            }
            TokKind::Ident(name) => {
                if let Some(func) = Func::from_name(&name) {
                    self.expect_op('(')?;
                    let mut args = vec![self.sum()?];
                    while self.eat_op(',').is_some() {
                        args.push(self.sum()?);
                    }
                    let close = self.expect_op(')')?;
                    let span = Span { start: tok.span.start, end: close.end };
                    let arity_ok = match func {
                        Func::Min | Func::Max => args.len() >= 2,
                        _ => args.len() == 1,
                    };
                    if !arity_ok {
                        return Err(ParseError {
                            message: format!("wrong number of arguments to `{name}`"),
                            span,
                        });
                    }
                    return Ok(Expr {
                        node: Node::Call(func, args),
                        span,
                    });
                }
                let var = match name.as_str() {
                    "t" => Var::T,
                    "x" => Var::X,
                    _ => match name.strip_prefix('y').and_then(|d| d.parse::<usize>().ok()) {
                        Some(k) if k >= 1 => Var::Y(k - 1),
                        _ => {
                            return Err(ParseError {
                                message: format!("unknown identifier `{name}`"),
                                span: tok.span,
                            })
                        }
                    },
                };
                Ok(Expr {
                    node: Node::Var(var),
                    span: tok.span,
                })
            }
            other => Err(ParseError {
                message: format!("unexpected `{other}`"),
                span: tok.span,
            }),
        }
    }
}

fn binary(op: BinOp, l: Expr, r: Expr) -> Expr {
    let span = Span { start: l.span.start, end: r.span.end };
    Expr {
        node: Node::Bin(op, Box::new(l), Box::new(r)),
        span,
    }
}
