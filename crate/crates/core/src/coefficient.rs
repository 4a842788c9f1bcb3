//! Coefficient functions of `(t, x, y)` used for the dynamics and the
//! switching data.

use std::fmt;
use std::sync::Arc;

use crate::expr::{Bindings, EvalError, Expr, Var};
use crate::scalar::Scalar;

type NativeFn<S> = dyn Fn(S, S, &[S]) -> S + Send + Sync;

/// Piecewise-linear function of `x`, flat outside the knots.
#[derive(Debug, Clone, PartialEq)]
pub struct Table<S> {
    knots: Vec<(S, S)>,
}

impl<S: Scalar> Table<S> {
    pub fn new(mut knots: Vec<(S, S)>) -> Option<Self> {
        if knots.is_empty() {
            return None;
        }
        knots.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite knots"));
        if knots.windows(2).any(|w| w[0].0 == w[1].0) {
            return None;
        }
        Some(Self { knots })
    }

    pub fn knots(&self) -> &[(S, S)] {
        &self.knots
    }

    pub fn eval(&self, x: S) -> S {
        let k = &self.knots;
        if x <= k[0].0 {
            return k[0].1;
        }
        let last = k[k.len() - 1];
        if x >= last.0 {
            return last.1;
        }
        let i = k.partition_point(|p| p.0 <= x);
        let (x0, y0) = k[i - 1];
        let (x1, y1) = k[i];
        y0 + (y1 - y0) * (x - x0) / (x1 - x0)
    }
}

#[derive(Clone)]
pub enum Coefficient<S> {
    Constant(S),
    /// `intercept + slope * x`
    Affine { intercept: S, slope: S },
    Tabulated(Table<S>),
    Expr(Arc<Expr>),
    Native(Arc<NativeFn<S>>),
}

impl<S: Scalar> fmt::Debug for Coefficient<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Coefficient::Constant(c) => write!(f, "Constant({c})"),
            Coefficient::Affine { intercept, slope } => write!(f, "Affine({intercept} + {slope} x)"),
            Coefficient::Tabulated(t) => write!(f, "Tabulated({} knots)", t.knots.len()),
            Coefficient::Expr(e) => write!(f, "Expr({e})"),
            Coefficient::Native(_) => f.write_str("Native(..)"),
        }
    }
}

impl<S: Scalar> From<Expr> for Coefficient<S> {
    fn from(e: Expr) -> Self {
        Coefficient::Expr(Arc::new(e))
    }
}

impl<S: Scalar> Coefficient<S> {
    pub fn constant(c: f64) -> Self {
        Coefficient::Constant(S::lit(c))
    }

    pub fn native(f: impl Fn(S, S, &[S]) -> S + Send + Sync + 'static) -> Self {
        Coefficient::Native(Arc::new(f))
    }

    /// Parse an expression coefficient.
    pub fn parse(src: &str) -> Result<Self, crate::expr::ParseError> {
        Ok(Expr::parse(src)?.into())
    }

    pub fn eval(&self, t: S, x: S, y: &[S]) -> Result<S, EvalError> {
        match self {
            Coefficient::Constant(c) => Ok(*c),
            Coefficient::Affine { intercept, slope } => Ok(*intercept + *slope * x),
            Coefficient::Tabulated(tab) => Ok(tab.eval(x)),
            Coefficient::Expr(e) => e.eval(&Bindings::new(t, x, y)),
            Coefficient::Native(f) => {
                let v = f(t, x, y);
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(EvalError::NonFinite {
                        span: Default::default(),
                    })
                }
            }
        }
    }

    /// Whether the value can depend on the coupling argument `y`.
    /// Native closures are assumed to.
    pub fn depends_on_y(&self) -> bool {
        match self {
            Coefficient::Expr(e) => e.max_y_index() > 0,
            Coefficient::Native(_) => true,
            _ => false,
        }
    }

    pub fn depends_on_t(&self) -> bool {
        match self {
            Coefficient::Expr(e) => e.uses(Var::T),
            Coefficient::Native(_) => true,
            _ => false,
        }
    }

    pub fn is_zero_constant(&self) -> bool {
        match self {
            Coefficient::Constant(c) => *c == S::zero(),
            Coefficient::Expr(e) => e.is_constant() && e.eval::<S>(&Bindings::new(S::zero(), S::zero(), &[])).ok() == Some(S::zero()),
            _ => false,
        }
    }
}
