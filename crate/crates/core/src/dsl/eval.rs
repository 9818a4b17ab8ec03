use thiserror::Error;

use super::{BinOp, Expr, ExprKind, Func, Vector};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("{func}({arg}) is outside the function's domain")]
    Domain { func: &'static str, arg: f64 },
    #[error("{base} ^ {exponent} is not a real number")]
    PowDomain { base: f64, exponent: f64 },
    #[error("division by zero")]
    DivisionByZero,
    #[error("{vector}[{index}] is out of range (length {len})")]
    IndexOutOfRange { vector: char, index: f64, len: usize },
    #[error("{vector}[{index}]: index is not an integer")]
    NonIntegerIndex { vector: char, index: f64 },
}

/// Values visible to an expression while evaluating equation `i`.
#[derive(Debug, Clone, Copy)]
pub struct EvalContext<'a> {
    pub t: f64,
    pub i: usize,
    pub n_eq: usize,
    pub y: &'a [f64],
    pub p: &'a [f64],
    pub noise: &'a [f64],
}

/// Bound summation indices, innermost last. Fixed capacity keeps
/// evaluation allocation-free; deeper nesting falls back to the heap.
struct Frames {
    inline: [f64; 8],
    spill: Vec<f64>,
    len: usize,
}

impl Frames {
    fn new() -> Self {
        Self { inline: [0.0; 8], spill: Vec::new(), len: 0 }
    }

    fn push(&mut self, v: f64) {
        if self.len < self.inline.len() {
            self.inline[self.len] = v;
        } else {
            self.spill.push(v);
        }
        self.len += 1;
    }

    fn set_top(&mut self, v: f64) {
        let top = self.len - 1;
        if top < self.inline.len() {
            self.inline[top] = v;
        } else {
            *self.spill.last_mut().expect("frame") = v;
        }
    }

    fn pop(&mut self) {
        self.len -= 1;
        if self.len >= self.inline.len() {
            self.spill.pop();
        }
    }

    fn get(&self, depth: usize) -> f64 {
        if depth < self.inline.len() {
            self.inline[depth]
        } else {
            self.spill[depth - self.inline.len()]
        }
    }
}

impl Expr {
    /// Evaluates the expression in double precision.
    pub fn evaluate(&self, ctx: &EvalContext<'_>) -> Result<f64, EvalError> {
        self.eval_in(ctx, &mut Frames::new())
    }

    fn eval_in(&self, ctx: &EvalContext<'_>, frames: &mut Frames) -> Result<f64, EvalError> {
        Ok(match &self.kind {
            ExprKind::Const(c) => *c,
            ExprKind::Time => ctx.t,
            ExprKind::EqIndex => ctx.i as f64,
            ExprKind::EqCount => ctx.n_eq as f64,
            ExprKind::Bound { depth, .. } => frames.get(*depth),
            ExprKind::Index { vector, index } => {
                let raw = index.eval_in(ctx, frames)?;
                let data = match vector {
                    Vector::State => ctx.y,
                    Vector::Params => ctx.p,
                    Vector::Noise => ctx.noise,
                };
                data[checked_index(*vector, raw, data.len())?]
            }
            ExprKind::Neg(inner) => -inner.eval_in(ctx, frames)?,
            ExprKind::Binary { op, lhs, rhs } => {
                let a = lhs.eval_in(ctx, frames)?;
                let b = rhs.eval_in(ctx, frames)?;
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => {
                        if b == 0.0 {
                            return Err(EvalError::DivisionByZero);
                        }
                        a / b
                    }
                    BinOp::Pow => {
                        let v = a.powf(b);
                        if v.is_nan() && !a.is_nan() && !b.is_nan() {
                            return Err(EvalError::PowDomain { base: a, exponent: b });
                        }
                        v
                    }
                }
            }
            ExprKind::Call { func, arg } => apply(*func, arg.eval_in(ctx, frames)?)?,
            ExprKind::Sum { body, .. } => {
                let mut acc = 0.0;
                frames.push(0.0);
                for j in 0..ctx.n_eq {
                    frames.set_top(j as f64);
                    match body.eval_in(ctx, frames) {
                        Ok(v) => acc += v,
                        Err(e) => {
                            frames.pop();
                            return Err(e);
                        }
                    }
                }
                frames.pop();
                acc
            }
        })
    }
}

fn checked_index(vector: Vector, raw: f64, len: usize) -> Result<usize, EvalError> {
    if raw.fract() != 0.0 || !raw.is_finite() {
        return Err(EvalError::NonIntegerIndex { vector: vector.symbol(), index: raw });
    }
    if raw < 0.0 || raw >= len as f64 {
        return Err(EvalError::IndexOutOfRange { vector: vector.symbol(), index: raw, len });
    }
    Ok(raw as usize)
}

fn apply(func: Func, x: f64) -> Result<f64, EvalError> {
    let domain = || EvalError::Domain { func: func.name(), arg: x };
    Ok(match func {
        Func::Sin => x.sin(),
        Func::Cos => x.cos(),
        Func::Tan => x.tan(),
        Func::Exp => x.exp(),
        Func::Ln => {
            if !(x > 0.0) {
                return Err(domain());
            }
            x.ln()
        }
        Func::Sqrt => {
            if x < 0.0 {
                return Err(domain());
            }
            x.sqrt()
        }
        Func::Abs => x.abs(),
    })
}
