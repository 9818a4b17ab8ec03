//! Runtime expression language for drift and diffusion templates.
//!
//! A template is a single expression evaluated once per equation index `i`.
//! Available names:
//!
//! | name        | meaning                                    |
//! |-------------|--------------------------------------------|
//! | `t`         | current time                               |
//! | `i`         | equation index, `0..N`                     |
//! | `N`         | number of equations                        |
//! | `y[k]`      | state component                            |
//! | `p[k]`      | parameter                                  |
//! | `n[k]`      | standard normal draw (diffusion only)      |
//! | `sum(j, e)` | `e` summed over `j = 0..N`                 |
//!
//! plus `sin cos tan exp ln sqrt abs`, `+ - * / ^` and parentheses.
//! `^` binds tightest and is right-associative, then unary minus, then
//! `* /`, then `+ -`.

mod eval;
mod model_file;
mod parser;
mod validate;

use std::fmt;

pub use eval::{EvalContext, EvalError};
pub use model_file::{parse_model_file, ModelFile, ModelFileError};
pub use parser::{parse, ParseError};
pub use validate::{validate, Diagnostic, Role};

/// 1-based source position of a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Span {
    pub line: usize,
    pub col: usize,
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Vector {
    State,
    Params,
    Noise,
}

impl Vector {
    pub fn symbol(self) -> char {
        match self {
            Vector::State => 'y',
            Vector::Params => 'p',
            Vector::Noise => 'n',
        }
    }
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
    fn symbol(self) -> char {
        match self {
            BinOp::Add => '+',
            BinOp::Sub => '-',
            BinOp::Mul => '*',
            BinOp::Div => '/',
            BinOp::Pow => '^',
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Tan,
    Exp,
    Ln,
    Sqrt,
    Abs,
}

impl Func {
    pub const ALL: [Func; 7] = [Func::Sin, Func::Cos, Func::Tan, Func::Exp, Func::Ln, Func::Sqrt, Func::Abs];

    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tan => "tan",
            Func::Exp => "exp",
            Func::Ln => "ln",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
        }
    }

    pub fn from_name(name: &str) -> Option<Func> {
        Func::ALL.into_iter().find(|f| f.name() == name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExprKind {
    Const(f64),
    Time,
    EqIndex,
    EqCount,
    /// Variable bound by an enclosing `sum`; `depth` counts enclosing sums
    /// from the outermost (0) inward.
    Bound { name: String, depth: usize },
    Index { vector: Vector, index: Box<Expr> },
    Neg(Box<Expr>),
    Binary { op: BinOp, lhs: Box<Expr>, rhs: Box<Expr> },
    Call { func: Func, arg: Box<Expr> },
    Sum { var: String, body: Box<Expr> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    pub kind: ExprKind,
    pub span: Span,
}

impl Expr {
    pub fn new(kind: ExprKind) -> Self {
        Self { kind, span: Span::default() }
    }

    pub fn at(kind: ExprKind, span: Span) -> Self {
        Self { kind, span }
    }

    /// Calls `visit` on this node and every descendant, pre-order.
    pub fn walk<'a>(&'a self, visit: &mut impl FnMut(&'a Expr)) {
        visit(self);
        match &self.kind {
            ExprKind::Const(_) | ExprKind::Time | ExprKind::EqIndex | ExprKind::EqCount | ExprKind::Bound { .. } => {}
            ExprKind::Index { index, .. } => index.walk(visit),
            ExprKind::Neg(inner) | ExprKind::Call { arg: inner, .. } | ExprKind::Sum { body: inner, .. } => inner.walk(visit),
            ExprKind::Binary { lhs, rhs, .. } => {
                lhs.walk(visit);
                rhs.walk(visit);
            }
        }
    }
}

/// Fully parenthesised, re-parseable rendering.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            ExprKind::Const(c) if c.is_sign_negative() => write!(f, "(-{})", -c),
            ExprKind::Const(c) => write!(f, "{c}"),
            ExprKind::Time => f.write_str("t"),
            ExprKind::EqIndex => f.write_str("i"),
            ExprKind::EqCount => f.write_str("N"),
            ExprKind::Bound { name, .. } => f.write_str(name),
            ExprKind::Index { vector, index } => write!(f, "{}[{index}]", vector.symbol()),
            ExprKind::Neg(inner) => write!(f, "(-{inner})"),
            ExprKind::Binary { op, lhs, rhs } => write!(f, "({lhs} {} {rhs})", op.symbol()),
            ExprKind::Call { func, arg } => write!(f, "{}({arg})", func.name()),
            ExprKind::Sum { var, body } => write!(f, "sum({var}, {body})"),
        }
    }
}

/// Drift template of the stochastic Kuramoto model with parameter layout
/// `(K, omega_1..omega_N, p_1..p_N)`.
pub const KURAMOTO_DRIFT: &str = "p[i+1] + (p[0]/N)*sum(j, sin(y[j]-y[i]))";

/// Diffusion template of the stochastic Kuramoto model.
pub const KURAMOTO_DIFFUSION: &str = "p[N+1+i]*n[i]";
