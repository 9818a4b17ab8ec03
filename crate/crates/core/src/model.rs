//! SDE systems `dX = f(t, X, p) dt + g(t, X, p) dW` and the built-in
//! stochastic Kuramoto population.

use std::f64::consts::PI;
use std::fmt;
use std::ops::Range;
use std::sync::Arc;

use thiserror::Error;

use crate::dsl::{self, EvalContext, EvalError, Expr, ModelFile, Role};
use crate::engine::OrbitBatch;
use crate::rng::AuxUniforms;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("a model needs at least one equation")]
    NoEquations,
    #[error("the Kuramoto model needs at least one oscillator")]
    NoOscillators,
    #[error(transparent)]
    Parse(#[from] dsl::ParseError),
    #[error(transparent)]
    File(#[from] dsl::ModelFileError),
    #[error("{role:?} expression is invalid: {}", .diagnostics.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    Invalid { role: Role, diagnostics: Vec<dsl::Diagnostic> },
    #[error("a model with {0} noise terms needs a diffusion expression")]
    MissingDiffusion(usize),
    #[error("sampling range {lo}..{hi} is empty")]
    EmptyRange { lo: f64, hi: f64 },
    #[error("batch needs at least one orbit")]
    NoOrbits,
    #[error("unknown model `{0}` (expected `kuramoto:<N>`)")]
    UnknownModel(String),
}

/// Hand-written drift and diffusion, for systems that are awkward to express
/// as a single template.
pub trait SdeSystem: Send + Sync {
    fn drift(&self, t: f64, y: &[f64], p: &[f64], out: &mut [f64]) -> Result<(), EvalError>;

    /// Writes `sum_j g_ij(t, y, p) * noise_j` for every equation `i`.
    fn diffusion(&self, t: f64, y: &[f64], p: &[f64], noise: &[f64], out: &mut [f64]) -> Result<(), EvalError>;
}

#[derive(Clone)]
pub enum Dynamics {
    Kuramoto,
    Expr { drift: Expr, diffusion: Option<Expr> },
    Custom(Arc<dyn SdeSystem>),
}

impl fmt::Debug for Dynamics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Dynamics::Kuramoto => f.write_str("Kuramoto"),
            Dynamics::Expr { drift, diffusion } => f
                .debug_struct("Expr")
                .field("drift", &drift.to_string())
                .field("diffusion", &diffusion.as_ref().map(ToString::to_string))
                .finish(),
            Dynamics::Custom(_) => f.write_str("Custom"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub name: String,
    pub nequat: usize,
    pub nparams: usize,
    /// Zero makes the system an ODE.
    pub nnoise: usize,
    pub dynamics: Dynamics,
}

impl ModelSpec {
    pub fn from_expressions(
        name: impl Into<String>,
        nequat: usize,
        nparams: usize,
        nnoise: usize,
        drift: &str,
        diffusion: Option<&str>,
    ) -> Result<Self, ModelError> {
        let drift = dsl::parse(drift)?;
        let diffusion = diffusion.map(dsl::parse).transpose()?;
        Self::from_parsed(name.into(), nequat, nparams, nnoise, drift, diffusion)
    }

    pub fn from_model_file(name: impl Into<String>, text: &str) -> Result<Self, ModelError> {
        let ModelFile { nequat, nparams, nnoise, drift, diffusion } = dsl::parse_model_file(text)?;
        Self::from_parsed(name.into(), nequat, nparams, nnoise, drift, diffusion)
    }

    fn from_parsed(
        name: String,
        nequat: usize,
        nparams: usize,
        nnoise: usize,
        drift: Expr,
        diffusion: Option<Expr>,
    ) -> Result<Self, ModelError> {
        if nequat == 0 {
            return Err(ModelError::NoEquations);
        }
        if nnoise > 0 && diffusion.is_none() {
            return Err(ModelError::MissingDiffusion(nnoise));
        }
        for (role, expr) in [(Role::Drift, Some(&drift)), (Role::Diffusion, diffusion.as_ref())] {
            let Some(expr) = expr else { continue };
            let diagnostics = dsl::validate(expr, nequat, nparams, nnoise, role);
            if !diagnostics.is_empty() {
                return Err(ModelError::Invalid { role, diagnostics });
            }
        }
        Ok(Self { name, nequat, nparams, nnoise, dynamics: Dynamics::Expr { drift, diffusion } })
    }

    pub fn custom(
        name: impl Into<String>,
        nequat: usize,
        nparams: usize,
        nnoise: usize,
        system: Arc<dyn SdeSystem>,
    ) -> Result<Self, ModelError> {
        if nequat == 0 {
            return Err(ModelError::NoEquations);
        }
        Ok(Self { name: name.into(), nequat, nparams, nnoise, dynamics: Dynamics::Custom(system) })
    }

    /// Resolves a built-in model name such as `kuramoto:100`.
    pub fn builtin(name: &str) -> Result<Self, ModelError> {
        match name.split_once(':') {
            Some(("kuramoto", n)) => {
                let n = n.trim().parse().map_err(|_| ModelError::UnknownModel(name.to_string()))?;
                kuramoto_model(n)
            }
            _ => Err(ModelError::UnknownModel(name.to_string())),
        }
    }

    pub fn is_ode(&self) -> bool {
        self.nnoise == 0
    }

    /// Writes `f(t, y, p)` into `out`.
    pub fn drift_eval(&self, t: f64, y: &[f64], p: &[f64], out: &mut [f64]) -> Result<(), EvalError> {
        debug_assert_eq!(y.len(), self.nequat);
        debug_assert_eq!(out.len(), self.nequat);
        match &self.dynamics {
            Dynamics::Kuramoto => {
                kuramoto_drift(y, p, out);
                Ok(())
            }
            Dynamics::Expr { drift, .. } => {
                for (i, slot) in out.iter_mut().enumerate() {
                    let ctx = EvalContext { t, i, n_eq: self.nequat, y, p, noise: &[] };
                    *slot = drift.evaluate(&ctx)?;
                }
                Ok(())
            }
            Dynamics::Custom(system) => system.drift(t, y, p, out),
        }
    }

    /// Writes the noise-weighted increment `sum_j g_ij * noise_j` into `out`.
    pub fn diffusion_eval(&self, t: f64, y: &[f64], p: &[f64], noise: &[f64], out: &mut [f64]) -> Result<(), EvalError> {
        debug_assert_eq!(noise.len(), self.nnoise);
        if self.nnoise == 0 {
            out.fill(0.0);
            return Ok(());
        }
        match &self.dynamics {
            Dynamics::Kuramoto => {
                let n = self.nequat;
                for (i, slot) in out.iter_mut().enumerate() {
                    *slot = p[n + 1 + i] * noise[i];
                }
                Ok(())
            }
            Dynamics::Expr { diffusion, .. } => {
                let expr = diffusion.as_ref().expect("validated at construction");
                for (i, slot) in out.iter_mut().enumerate() {
                    let ctx = EvalContext { t, i, n_eq: self.nequat, y, p, noise };
                    *slot = expr.evaluate(&ctx)?;
                }
                Ok(())
            }
            Dynamics::Custom(system) => system.diffusion(t, y, p, noise, out),
        }
    }

    pub fn drift(&self, t: f64, y: &[f64], p: &[f64]) -> Result<Vec<f64>, EvalError> {
        let mut out = vec![0.0; self.nequat];
        self.drift_eval(t, y, p, &mut out)?;
        Ok(out)
    }

    pub fn diffusion(&self, t: f64, y: &[f64], p: &[f64], noise: &[f64]) -> Result<Vec<f64>, EvalError> {
        let mut out = vec![0.0; self.nequat];
        self.diffusion_eval(t, y, p, noise, &mut out)?;
        Ok(out)
    }
}

/// Mean-field drift `omega_i + (K/N) sum_j sin(theta_j - theta_i)`.
///
/// The accumulation order matches the DSL template evaluation exactly, so the
/// two paths agree bitwise.
fn kuramoto_drift(theta: &[f64], p: &[f64], out: &mut [f64]) {
    let n = theta.len();
    let scale = p[0] / n as f64;
    for (i, slot) in out.iter_mut().enumerate() {
        let ti = theta[i];
        let mut acc = 0.0;
        for &tj in theta {
            acc += (tj - ti).sin();
        }
        *slot = p[i + 1] + scale * acc;
    }
}

/// Stochastic Kuramoto population of `n` oscillators with parameter layout
/// `(K, omega_1..omega_N, p_1..p_N)`.
pub fn kuramoto_model(n: usize) -> Result<ModelSpec, ModelError> {
    if n == 0 {
        return Err(ModelError::NoOscillators);
    }
    Ok(ModelSpec { name: format!("kuramoto:{n}"), nequat: n, nparams: 2 * n + 1, nnoise: n, dynamics: Dynamics::Kuramoto })
}

/// The same system through the expression language.
pub fn kuramoto_dsl_model(n: usize) -> Result<ModelSpec, ModelError> {
    if n == 0 {
        return Err(ModelError::NoOscillators);
    }
    ModelSpec::from_expressions(
        format!("kuramoto-dsl:{n}"),
        n,
        2 * n + 1,
        n,
        dsl::KURAMOTO_DRIFT,
        Some(dsl::KURAMOTO_DIFFUSION),
    )
}

/// Distributions for drawing Kuramoto orbits.
#[derive(Debug, Clone, PartialEq)]
pub struct KuramotoSampling {
    pub omega: Range<f64>,
    pub noise: Range<f64>,
    pub coupling: f64,
}

impl KuramotoSampling {
    /// Speed-evaluation preset: omega in [0.01, 0.03], p in [0.001, 0.003], K = 1.
    pub fn speed() -> Self {
        Self { omega: 0.01..0.03, noise: 0.001..0.003, coupling: 1.0 }
    }

    /// Accuracy preset: omega in [0.2, 0.4], p in [0.01, 0.03].
    pub fn accuracy(coupling: f64) -> Self {
        Self { omega: 0.2..0.4, noise: 0.01..0.03, coupling }
    }
}

fn check_range(r: &Range<f64>) -> Result<(), ModelError> {
    if r.start < r.end && r.start.is_finite() && r.end.is_finite() {
        Ok(())
    } else {
        Err(ModelError::EmptyRange { lo: r.start, hi: r.end })
    }
}

/// Draws `orbits` independent orbits: phases uniform on `[-pi, pi)`,
/// frequencies and noise strengths uniform on the given ranges.
pub fn sample_kuramoto_batch(
    n: usize,
    orbits: usize,
    sampling: &KuramotoSampling,
    seed: u64,
) -> Result<OrbitBatch, ModelError> {
    if n == 0 {
        return Err(ModelError::NoOscillators);
    }
    if orbits == 0 {
        return Err(ModelError::NoOrbits);
    }
    check_range(&sampling.omega)?;
    check_range(&sampling.noise)?;
    let nparams = 2 * n + 1;
    let mut init = Vec::with_capacity(orbits * n);
    let mut params = Vec::with_capacity(orbits * nparams);
    for orbit in 0..orbits {
        let mut u = AuxUniforms::new(seed, orbit as u32, 0);
        init.extend((0..n).map(|_| u.next_in(-PI, PI)));
        params.push(sampling.coupling);
        params.extend((0..n).map(|_| u.next_in(sampling.omega.start, sampling.omega.end)));
        params.extend((0..n).map(|_| u.next_in(sampling.noise.start, sampling.noise.end)));
    }
    Ok(OrbitBatch::from_flat(n, nparams, init, params).expect("dimensions are consistent by construction"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn equal_phases_give_natural_frequencies() {
        let m = kuramoto_model(3).unwrap();
        let p = [0.7, 0.1, 0.2, 0.3, 0.0, 0.0, 0.0];
        assert_eq!(m.drift(0.0, &[1.3; 3], &p).unwrap(), vec![0.1, 0.2, 0.3]);
    }

    #[test]
    fn two_oscillator_hand_values() {
        let m = kuramoto_model(2).unwrap();
        let f = m.drift(0.0, &[0.0, FRAC_PI_2], &[1.0, 0.1, 0.2, 0.0, 0.0]).unwrap();
        assert!((f[0] - 0.6).abs() < 1e-15 && (f[1] + 0.3).abs() < 1e-15, "{f:?}");
    }

    #[test]
    fn zero_coupling_is_exactly_omega() {
        let m = kuramoto_model(4).unwrap();
        let p = [0.0, 0.11, 0.22, 0.33, 0.44, 1.0, 1.0, 1.0, 1.0];
        assert_eq!(m.drift(0.0, &[0.3, -2.0, 1.0, 3.0], &p).unwrap(), vec![0.11, 0.22, 0.33, 0.44]);
    }

    #[test]
    fn diffusion_values() {
        let m = kuramoto_model(2).unwrap();
        let p = [1.0, 0.1, 0.2, 0.001, 0.003];
        assert_eq!(m.diffusion(0.0, &[0.0, 0.0], &p, &[1.0, -1.0]).unwrap(), vec![0.001, -0.003]);
        assert_eq!(m.diffusion(0.0, &[0.0, 0.0], &p, &[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn ode_model_has_zero_diffusion() {
        let m = ModelSpec::from_expressions("decay", 1, 0, 0, "-y[i]", None).unwrap();
        assert!(m.is_ode());
        assert_eq!(m.diffusion(0.0, &[5.0], &[], &[]).unwrap(), vec![0.0]);
    }

    #[test]
    fn kuramoto_dimensions() {
        let m = kuramoto_model(5).unwrap();
        assert_eq!((m.nequat, m.nparams, m.nnoise), (5, 11, 5));
        assert_eq!(kuramoto_model(100).unwrap().nparams, 201);
        assert_eq!(kuramoto_model(0).unwrap_err(), ModelError::NoOscillators);
        let single = kuramoto_model(1).unwrap();
        assert_eq!(single.drift(0.0, &[2.5], &[3.0, 0.25, 0.0]).unwrap(), vec![0.25]);
    }

    #[test]
    fn builtin_names() {
        assert_eq!(ModelSpec::builtin("kuramoto:7").unwrap().nequat, 7);
        assert!(matches!(ModelSpec::builtin("kuramoto:x"), Err(ModelError::UnknownModel(_))));
        assert!(matches!(ModelSpec::builtin("lorenz"), Err(ModelError::UnknownModel(_))));
        assert_eq!(ModelSpec::builtin("kuramoto:0").unwrap_err(), ModelError::NoOscillators);
    }

    #[test]
    fn dsl_model_requires_diffusion_when_noisy() {
        assert_eq!(
            ModelSpec::from_expressions("x", 1, 0, 1, "0", None).unwrap_err(),
            ModelError::MissingDiffusion(1)
        );
        assert!(matches!(
            ModelSpec::from_expressions("x", 1, 0, 0, "p[0]", None),
            Err(ModelError::Invalid { role: Role::Drift, .. })
        ));
    }

    #[test]
    fn sampled_batch_respects_protocol_ranges() {
        let batch = sample_kuramoto_batch(10, 32, &KuramotoSampling::speed(), 3).unwrap();
        assert_eq!(batch.orbits(), 32);
        for m in 0..32 {
            assert!(batch.init(m).iter().all(|x| (-PI..PI).contains(x)));
            let p = batch.params(m);
            assert_eq!(p[0], 1.0);
            assert!(p[1..11].iter().all(|w| (0.01..0.03).contains(w)));
            assert!(p[11..].iter().all(|s| (0.001..0.003).contains(s)));
        }
        let acc = KuramotoSampling::accuracy(0.2);
        assert_eq!((acc.omega.clone(), acc.noise.clone(), acc.coupling), (0.2..0.4, 0.01..0.03, 0.2));
    }

    #[test]
    fn sampling_is_deterministic() {
        let a = sample_kuramoto_batch(4, 8, &KuramotoSampling::accuracy(0.02), 11).unwrap();
        let b = sample_kuramoto_batch(4, 8, &KuramotoSampling::accuracy(0.02), 11).unwrap();
        let c = sample_kuramoto_batch(4, 8, &KuramotoSampling::accuracy(0.02), 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn sampling_rejects_bad_input() {
        let bad = KuramotoSampling { omega: 0.3..0.3, ..KuramotoSampling::speed() };
        assert!(matches!(sample_kuramoto_batch(2, 1, &bad, 0), Err(ModelError::EmptyRange { .. })));
        assert_eq!(sample_kuramoto_batch(2, 0, &KuramotoSampling::speed(), 0).unwrap_err(), ModelError::NoOrbits);
    }
}
