use thiserror::Error;

use super::{BinOp, Expr, ExprKind, Func, Span, Vector};

/// Which slot of the model a template fills.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Drift,
    Diffusion,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Diagnostic {
    #[error("{span}: {vector}[..] reaches index {index}, outside 0..{len}")]
    IndexOutOfRange { span: Span, vector: char, index: f64, len: usize },
    #[error("{span}: {vector}[..] takes the non-integer value {index}")]
    NonIntegerIndex { span: Span, vector: char, index: f64 },
    #[error("{span}: noise n[..] cannot appear in a drift expression")]
    NoiseInDrift { span: Span },
    #[error("{span}: nested sum reuses the index `{name}`")]
    ShadowedSumIndex { span: Span, name: String },
}

/// Static checks against the owning model's dimensions. An empty list means
/// the expression is valid.
///
/// Index expressions built only from constants, `i`, `N` and summation
/// indices are checked exhaustively over every value those names can take.
pub fn validate(expr: &Expr, nequat: usize, nparams: usize, nnoise: usize, role: Role) -> Vec<Diagnostic> {
    let mut checker = Checker { nequat, nparams, nnoise, role, sums: Vec::new(), out: Vec::new() };
    checker.visit(expr);
    checker.out
}

/// Upper bound on assignments tried when enumerating an index expression.
const MAX_ENUMERATION: usize = 1_000_000;

struct Checker<'a> {
    nequat: usize,
    nparams: usize,
    nnoise: usize,
    role: Role,
    sums: Vec<&'a str>,
    out: Vec<Diagnostic>,
}

impl<'a> Checker<'a> {
    fn visit(&mut self, expr: &'a Expr) {
        match &expr.kind {
            ExprKind::Const(_) | ExprKind::Time | ExprKind::EqIndex | ExprKind::EqCount | ExprKind::Bound { .. } => {}
            ExprKind::Index { vector, index } => {
                if *vector == Vector::Noise && self.role == Role::Drift {
                    self.out.push(Diagnostic::NoiseInDrift { span: expr.span });
                }
                let len = match vector {
                    Vector::State => self.nequat,
                    Vector::Params => self.nparams,
                    Vector::Noise => self.nnoise,
                };
                self.check_index(expr.span, *vector, index, len);
                self.visit(index);
            }
            ExprKind::Neg(inner) | ExprKind::Call { arg: inner, .. } => self.visit(inner),
            ExprKind::Binary { lhs, rhs, .. } => {
                self.visit(lhs);
                self.visit(rhs);
            }
            ExprKind::Sum { var, body } => {
                if self.sums.contains(&var.as_str()) {
                    self.out.push(Diagnostic::ShadowedSumIndex { span: expr.span, name: var.clone() });
                }
                self.sums.push(var);
                self.visit(body);
                self.sums.pop();
            }
        }
    }

    fn check_index(&mut self, span: Span, vector: Vector, index: &Expr, len: usize) {
        let mut uses_i = false;
        let mut depths: Vec<usize> = Vec::new();
        let mut resolvable = true;
        index.walk(&mut |node| match &node.kind {
            ExprKind::EqIndex => uses_i = true,
            ExprKind::Bound { depth, .. } => {
                if !depths.contains(depth) {
                    depths.push(*depth);
                }
            }
            ExprKind::Time | ExprKind::Index { .. } | ExprKind::Sum { .. } => resolvable = false,
            _ => {}
        });
        if !resolvable {
            return;
        }
        let n = self.nequat;
        let free = depths.len() + usize::from(uses_i);
        let combos = (0..free).try_fold(1usize, |acc, _| acc.checked_mul(n.max(1)));
        if !matches!(combos, Some(c) if c <= MAX_ENUMERATION) {
            return;
        }
        let max_depth = depths.iter().copied().max().map_or(0, |d| d + 1);
        let mut binds = vec![0.0; max_depth];
        let mut counter = vec![0usize; free];
        loop {
            let i = if uses_i { counter[free - 1] } else { 0 };
            for (slot, depth) in depths.iter().enumerate() {
                binds[*depth] = counter[slot] as f64;
            }
            if let Some(value) = static_eval(index, i as f64, n as f64, &binds) {
                let diagnostic = if !(value.fract() == 0.0) {
                    Some(Diagnostic::NonIntegerIndex { span, vector: vector.symbol(), index: value })
                } else if value < 0.0 || value >= len as f64 {
                    Some(Diagnostic::IndexOutOfRange { span, vector: vector.symbol(), index: value, len })
                } else {
                    None
                };
                if let Some(d) = diagnostic {
                    self.out.push(d);
                    return;
                }
            }
            // Advance the mixed-radix counter; N = 0 leaves nothing to try.
            let mut digit = 0;
            loop {
                if digit == free || n == 0 {
                    return;
                }
                counter[digit] += 1;
                if counter[digit] < n {
                    break;
                }
                counter[digit] = 0;
                digit += 1;
            }
        }
    }
}

/// Evaluates an index expression that only involves constants, `i`, `N` and
/// bound indices. `None` means the value could not be decided statically.
fn static_eval(expr: &Expr, i: f64, n: f64, binds: &[f64]) -> Option<f64> {
    Some(match &expr.kind {
        ExprKind::Const(c) => *c,
        ExprKind::EqIndex => i,
        ExprKind::EqCount => n,
        ExprKind::Bound { depth, .. } => binds[*depth],
        ExprKind::Neg(inner) => -static_eval(inner, i, n, binds)?,
        ExprKind::Binary { op, lhs, rhs } => {
            let a = static_eval(lhs, i, n, binds)?;
            let b = static_eval(rhs, i, n, binds)?;
            match op {
                BinOp::Add => a + b,
                BinOp::Sub => a - b,
                BinOp::Mul => a * b,
                BinOp::Div if b == 0.0 => return None,
                BinOp::Div => a / b,
                BinOp::Pow => a.powf(b),
            }
        }
        ExprKind::Call { func, arg } => {
            let x = static_eval(arg, i, n, binds)?;
            match func {
                Func::Sin => x.sin(),
                Func::Cos => x.cos(),
                Func::Tan => x.tan(),
                Func::Exp => x.exp(),
                Func::Ln if x > 0.0 => x.ln(),
                Func::Sqrt if x >= 0.0 => x.sqrt(),
                Func::Ln | Func::Sqrt => return None,
                Func::Abs => x.abs(),
            }
        }
        ExprKind::Time | ExprKind::Index { .. } | ExprKind::Sum { .. } => return None,
    })
}
