//! Fixed-step single-step integrators.
//!
//! [`Stepper`] owns the scratch buffers and advances a state in place; the
//! free functions are allocating conveniences around it.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsl::EvalError;
use crate::model::ModelSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Solver {
    /// Euler-Maruyama (the only scheme that consumes noise).
    Em,
    Euler,
    Rk4,
    /// Implicit Euler by fixed-point iteration.
    Ie,
    /// Implicit midpoint by fixed-point iteration.
    Im,
}

impl Solver {
    pub const ALL: [Solver; 5] = [Solver::Em, Solver::Euler, Solver::Rk4, Solver::Ie, Solver::Im];

    pub fn name(self) -> &'static str {
        match self {
            Solver::Em => "em",
            Solver::Euler => "euler",
            Solver::Rk4 => "rk4",
            Solver::Ie => "ie",
            Solver::Im => "im",
        }
    }

    pub fn is_stochastic(self) -> bool {
        self == Solver::Em
    }
}

impl fmt::Display for Solver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Solver {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Solver::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| format!("unknown solver `{s}` (expected one of em, euler, rk4, ie, im)"))
    }
}

/// Fixed-point iteration controls for the implicit methods.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImplicitOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for ImplicitOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 50 }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StepError {
    #[error("step size must be positive, got {0}")]
    InvalidStep(f64),
    #[error("non-finite state at t = {t}")]
    NonFinite { t: f64 },
    #[error("fixed-point iteration did not converge at t = {t} after {iterations} iterations (last update {update:e})")]
    NonConvergence { t: f64, iterations: usize, update: f64 },
    #[error("model evaluation failed at t = {t}: {source}")]
    Eval { t: f64, source: EvalError },
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub y_next: Vec<f64>,
    /// Fixed-point iterations used; zero for explicit methods.
    pub iterations: usize,
}

/// Reusable integrator state for one model dimension.
#[derive(Debug, Clone)]
pub struct Stepper {
    solver: Solver,
    implicit: ImplicitOptions,
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Stepper {
    pub fn new(solver: Solver, implicit: ImplicitOptions, nequat: usize) -> Self {
        let buf = || vec![0.0; nequat];
        Self { solver, implicit, k1: buf(), k2: buf(), k3: buf(), k4: buf(), tmp: buf() }
    }

    pub fn solver(&self) -> Solver {
        self.solver
    }

    /// Advances `y` by one step of size `dt` from time `t` and returns the
    /// number of fixed-point iterations used. `noise` is read only by
    /// Euler-Maruyama. On error `y` is left unspecified.
    pub fn advance(
        &mut self,
        model: &ModelSpec,
        t: f64,
        y: &mut [f64],
        p: &[f64],
        dt: f64,
        noise: &[f64],
    ) -> Result<usize, StepError> {
        if !(dt > 0.0) {
            return Err(StepError::InvalidStep(dt));
        }
        let iterations = match self.solver {
            Solver::Em => {
                self.euler_maruyama(model, t, y, p, dt, noise)?;
                0
            }
            Solver::Euler => {
                self.euler(model, t, y, p, dt)?;
                0
            }
            Solver::Rk4 => {
                self.rk4(model, t, y, p, dt)?;
                0
            }
            Solver::Ie => self.implicit(model, t, y, p, dt, false)?,
            Solver::Im => self.implicit(model, t, y, p, dt, true)?,
        };
        if y.iter().any(|v| !v.is_finite()) {
            return Err(StepError::NonFinite { t });
        }
        Ok(iterations)
    }

    fn euler_maruyama(&mut self, model: &ModelSpec, t: f64, y: &mut [f64], p: &[f64], dt: f64, noise: &[f64]) -> Result<(), StepError> {
        let eval = |source| StepError::Eval { t, source };
        model.drift_eval(t, y, p, &mut self.k1).map_err(eval)?;
        if model.nnoise == 0 {
            for (yi, fi) in y.iter_mut().zip(&self.k1) {
                *yi += fi * dt;
            }
            return Ok(());
        }
        model.diffusion_eval(t, y, p, noise, &mut self.k2).map_err(eval)?;
        let sqrt_dt = dt.sqrt();
        for ((yi, fi), gi) in y.iter_mut().zip(&self.k1).zip(&self.k2) {
            *yi = *yi + fi * dt + sqrt_dt * gi;
        }
        Ok(())
    }

    fn euler(&mut self, model: &ModelSpec, t: f64, y: &mut [f64], p: &[f64], dt: f64) -> Result<(), StepError> {
        model.drift_eval(t, y, p, &mut self.k1).map_err(|source| StepError::Eval { t, source })?;
        for (yi, fi) in y.iter_mut().zip(&self.k1) {
            *yi += fi * dt;
        }
        Ok(())
    }

    fn rk4(&mut self, model: &ModelSpec, t: f64, y: &mut [f64], p: &[f64], dt: f64) -> Result<(), StepError> {
        let eval = |source| StepError::Eval { t, source };
        let half = 0.5 * dt;
        model.drift_eval(t, y, p, &mut self.k1).map_err(eval)?;
        offset(&mut self.tmp, y, &self.k1, half);
        model.drift_eval(t + half, &self.tmp, p, &mut self.k2).map_err(eval)?;
        offset(&mut self.tmp, y, &self.k2, half);
        model.drift_eval(t + half, &self.tmp, p, &mut self.k3).map_err(eval)?;
        offset(&mut self.tmp, y, &self.k3, dt);
        model.drift_eval(t + dt, &self.tmp, p, &mut self.k4).map_err(eval)?;
        for i in 0..y.len() {
            y[i] += dt * (self.k1[i] + 2.0 * self.k2[i] + 2.0 * self.k3[i] + self.k4[i]) / 6.0;
        }
        Ok(())
    }

    /// Solves `y' = y + dt f(t*, z, p)` by fixed-point iteration, where
    /// `z = y'` (implicit Euler, `t* = t + dt`) or `z = (y + y') / 2`
    /// (implicit midpoint, `t* = t + dt/2`).
    fn implicit(&mut self, model: &ModelSpec, t: f64, y: &mut [f64], p: &[f64], dt: f64, midpoint: bool) -> Result<usize, StepError> {
        let ImplicitOptions { tol, max_iter } = self.implicit;
        let t_eval = if midpoint { t + 0.5 * dt } else { t + dt };
        // k3 holds the start value, k4 the current iterate.
        self.k3.copy_from_slice(y);
        self.k4.copy_from_slice(y);
        let mut update = f64::INFINITY;
        for iteration in 1..=max_iter {
            if midpoint {
                for i in 0..y.len() {
                    self.tmp[i] = 0.5 * (self.k3[i] + self.k4[i]);
                }
            } else {
                self.tmp.copy_from_slice(&self.k4);
            }
            model
                .drift_eval(t_eval, &self.tmp, p, &mut self.k1)
                .map_err(|source| StepError::Eval { t, source })?;
            update = 0.0;
            for i in 0..y.len() {
                let next = self.k3[i] + dt * self.k1[i];
                update = update.max((next - self.k4[i]).abs());
                self.k4[i] = next;
            }
            if !update.is_finite() {
                break;
            }
            if update < tol {
                y.copy_from_slice(&self.k4);
                return Ok(iteration);
            }
        }
        Err(StepError::NonConvergence { t, iterations: max_iter, update })
    }
}

fn offset(out: &mut [f64], y: &[f64], k: &[f64], h: f64) {
    for ((o, yi), ki) in out.iter_mut().zip(y).zip(k) {
        *o = yi + h * ki;
    }
}

fn one_step(
    solver: Solver,
    implicit: ImplicitOptions,
    model: &ModelSpec,
    t: f64,
    y: &[f64],
    p: &[f64],
    dt: f64,
    noise: &[f64],
) -> Result<StepResult, StepError> {
    let mut y_next = y.to_vec();
    let iterations = Stepper::new(solver, implicit, model.nequat).advance(model, t, &mut y_next, p, dt, noise)?;
    Ok(StepResult { y_next, iterations })
}

/// `y + f dt + sqrt(dt) * diffusion_eval(noise)`.
pub fn euler_maruyama_step(model: &ModelSpec, t: f64, y: &[f64], p: &[f64], dt: f64, noise: &[f64]) -> Result<StepResult, StepError> {
    one_step(Solver::Em, ImplicitOptions::default(), model, t, y, p, dt, noise)
}

pub fn euler_step(model: &ModelSpec, t: f64, y: &[f64], p: &[f64], dt: f64) -> Result<StepResult, StepError> {
    one_step(Solver::Euler, ImplicitOptions::default(), model, t, y, p, dt, &[])
}

pub fn rk4_step(model: &ModelSpec, t: f64, y: &[f64], p: &[f64], dt: f64) -> Result<StepResult, StepError> {
    one_step(Solver::Rk4, ImplicitOptions::default(), model, t, y, p, dt, &[])
}

pub fn implicit_euler_step(model: &ModelSpec, t: f64, y: &[f64], p: &[f64], dt: f64, opts: ImplicitOptions) -> Result<StepResult, StepError> {
    one_step(Solver::Ie, opts, model, t, y, p, dt, &[])
}

pub fn implicit_midpoint_step(model: &ModelSpec, t: f64, y: &[f64], p: &[f64], dt: f64, opts: ImplicitOptions) -> Result<StepResult, StepError> {
    one_step(Solver::Im, opts, model, t, y, p, dt, &[])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(drift: &str) -> ModelSpec {
        ModelSpec::from_expressions("scalar", 1, 0, 0, drift, None).unwrap()
    }

    fn close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() < tol, "{a} vs {b}");
    }

    #[test]
    fn names_round_trip() {
        for s in Solver::ALL {
            assert_eq!(s.name().parse::<Solver>().unwrap(), s);
        }
        assert!("milstein".parse::<Solver>().is_err());
    }

    #[test]
    fn euler_examples() {
        assert_eq!(euler_step(&scalar("0"), 0.0, &[3.0], &[], 0.1).unwrap().y_next, vec![3.0]);
        close(euler_step(&scalar("-y[i]"), 0.0, &[1.0], &[], 0.1).unwrap().y_next[0], 0.9, 1e-15);
        assert_eq!(euler_step(&scalar("t"), 1.0, &[0.0], &[], 0.5).unwrap().y_next, vec![0.5]);
    }

    #[test]
    fn euler_maruyama_examples() {
        let noiseless = ModelSpec::from_expressions("m", 1, 0, 1, "-y[i]", Some("0*n[i]")).unwrap();
        close(euler_maruyama_step(&noiseless, 0.0, &[1.0], &[], 0.1, &[0.7]).unwrap().y_next[0], 0.9, 1e-15);

        let additive = ModelSpec::from_expressions("m", 1, 1, 1, "-y[i]", Some("p[0]*n[i]")).unwrap();
        let y = euler_maruyama_step(&additive, 0.0, &[1.0], &[0.5], 0.04, &[1.0]).unwrap().y_next[0];
        close(y, 1.06, 1e-15);
    }

    #[test]
    fn zero_noise_matches_euler_bitwise() {
        let sde = ModelSpec::from_expressions("m", 2, 1, 2, "sin(y[1-i]) - p[0]*y[i]", Some("y[i]*n[i]")).unwrap();
        let em = euler_maruyama_step(&sde, 0.3, &[0.4, -1.2], &[0.7], 0.01, &[0.0, 0.0]).unwrap();
        let eu = euler_step(&sde, 0.3, &[0.4, -1.2], &[0.7], 0.01).unwrap();
        assert_eq!(em.y_next, eu.y_next);

        let ode = ModelSpec::from_expressions("m", 2, 1, 0, "sin(y[1-i]) - p[0]*y[i]", None).unwrap();
        let em = euler_maruyama_step(&ode, 0.3, &[0.4, -1.2], &[0.7], 0.01, &[]).unwrap();
        assert_eq!(em.y_next, euler_step(&ode, 0.3, &[0.4, -1.2], &[0.7], 0.01).unwrap().y_next);
    }

    #[test]
    fn rk4_examples() {
        assert_eq!(rk4_step(&scalar("0"), 0.0, &[2.0], &[], 0.1).unwrap().y_next, vec![2.0]);
        let y = rk4_step(&scalar("-y[i]"), 0.0, &[1.0], &[], 0.1).unwrap().y_next[0];
        // 1 - h + h^2/2 - h^3/6 + h^4/24 at h = 0.1
        close(y, 0.9048375, 1e-15);
        for h in [0.05, 0.1, 0.2] {
            let y = rk4_step(&scalar("-y[i]"), 0.0, &[1.0], &[], h).unwrap().y_next[0];
            let exact = f64::exp(-h);
            assert!((y - exact).abs() <= h.powi(5) / 120.0 * 1.0001, "h={h}");
        }
    }

    #[test]
    fn implicit_euler_examples() {
        let opts = ImplicitOptions::default();
        let r = implicit_euler_step(&scalar("0"), 0.0, &[4.0], &[], 0.1, opts).unwrap();
        assert_eq!((r.y_next, r.iterations), (vec![4.0], 1));
        let r = implicit_euler_step(&scalar("-y[i]"), 0.0, &[1.0], &[], 0.1, opts).unwrap();
        close(r.y_next[0], 1.0 / 1.1, 1e-10);
        assert!(r.iterations > 1);
        let err = implicit_euler_step(&scalar("-100*y[i]"), 0.0, &[1.0], &[], 0.1, opts).unwrap_err();
        assert!(matches!(err, StepError::NonConvergence { iterations: 50, .. }), "{err:?}");
    }

    #[test]
    fn implicit_midpoint_examples() {
        let opts = ImplicitOptions::default();
        assert_eq!(implicit_midpoint_step(&scalar("0"), 0.0, &[4.0], &[], 0.1, opts).unwrap().y_next, vec![4.0]);
        let r = implicit_midpoint_step(&scalar("-y[i]"), 0.0, &[1.0], &[], 0.1, opts).unwrap();
        close(r.y_next[0], 0.95 / 1.05, 1e-10);
    }

    #[test]
    fn implicit_midpoint_preserves_oscillator_energy() {
        // y0' = y1, y1' = -y0
        let osc = ModelSpec::from_expressions("osc", 2, 0, 0, "(1-2*i)*y[1-i]", None).unwrap();
        let opts = ImplicitOptions { tol: 1e-15, max_iter: 200 };
        let mut y = vec![1.0, 0.0];
        for k in 0..100 {
            y = implicit_midpoint_step(&osc, k as f64 * 0.05, &y, &[], 0.05, opts).unwrap().y_next;
        }
        close(y[0] * y[0] + y[1] * y[1], 1.0, 1e-12);
    }

    #[test]
    fn invalid_step_and_non_finite() {
        assert_eq!(euler_step(&scalar("1"), 0.0, &[0.0], &[], 0.0).unwrap_err(), StepError::InvalidStep(0.0));
        assert!(matches!(euler_step(&scalar("1e308*1e308"), 0.0, &[0.0], &[], 1.0), Err(StepError::NonFinite { .. })));
        assert!(matches!(euler_step(&scalar("ln(y[i])"), 0.0, &[0.0], &[], 1.0), Err(StepError::Eval { .. })));
    }
}
