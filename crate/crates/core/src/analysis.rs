//! Phase-coherence analysis of Kuramoto trajectories.

use std::f64::consts::{PI, TAU};

use serde::Serialize;
use thiserror::Error;

use crate::engine::{run_batch, ConfigError, EngineConfig, Threads, TrajectoryStore, DEFAULT_CHUNK_GROUP};
use crate::model::{kuramoto_model, sample_kuramoto_batch, KuramotoSampling, ModelError};
use crate::solvers::Solver;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("order parameter of an empty phase list")]
    NoPhases,
    #[error("ensemble statistics need at least two realisations, got {0}")]
    TooFewRealisations(usize),
    #[error("realisation {index} has {len} samples, expected {expected}")]
    Ragged { index: usize, len: usize, expected: usize },
    #[error("orbit {orbit} is out of range (store has {orbits})")]
    OrbitOutOfRange { orbit: usize, orbits: usize },
    #[error("{0} orbit(s) failed during the sweep; first: {1}")]
    OrbitFailures(usize, String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// `r e^{i Phi}`, the mean of the unit phasors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CoherencePoint {
    pub r: f64,
    pub phi: f64,
}

/// Below this modulus the collective phase is reported as 0.
const PHASE_UNDEFINED_BELOW: f64 = 1e-14;

/// Wraps an angle onto `[-pi, pi)`.
pub fn wrap_phase(theta: f64) -> f64 {
    let mut w = theta - TAU * ((theta + PI) / TAU).floor();
    if w >= PI {
        w -= TAU;
    }
    if w < -PI {
        w += TAU;
    }
    w
}

pub fn order_parameter(phases: &[f64]) -> Result<CoherencePoint, AnalysisError> {
    if phases.is_empty() {
        return Err(AnalysisError::NoPhases);
    }
    let (mut re, mut im) = (0.0, 0.0);
    for &theta in phases {
        let (s, c) = theta.sin_cos();
        re += c;
        im += s;
    }
    let n = phases.len() as f64;
    let (re, im) = (re / n, im / n);
    let r = re.hypot(im).min(1.0);
    let phi = if r < PHASE_UNDEFINED_BELOW { 0.0 } else { wrap_phase(im.atan2(re)) };
    Ok(CoherencePoint { r, phi })
}

/// Order parameter of every orbit at every sample: `[orbit][sample]`.
pub fn coherence_series(store: &TrajectoryStore) -> Vec<Vec<CoherencePoint>> {
    (0..store.orbits())
        .map(|orbit| {
            (0..store.samples())
                .map(|j| order_parameter(store.state(orbit, j)).expect("nequat >= 1"))
                .collect()
        })
        .collect()
}

/// Per-time mean and population standard deviation of `r` across
/// realisations.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleStats {
    pub times: Vec<f64>,
    pub mean_r: Vec<f64>,
    pub std_r: Vec<f64>,
    pub count: usize,
}

impl EnsembleStats {
    /// First time `mean_r` reaches `threshold`.
    pub fn first_crossing(&self, threshold: f64) -> Option<f64> {
        self.mean_r.iter().position(|&r| r >= threshold).map(|j| self.times[j])
    }
}

pub fn ensemble_stats(times: &[f64], series: &[Vec<CoherencePoint>]) -> Result<EnsembleStats, AnalysisError> {
    if series.len() < 2 {
        return Err(AnalysisError::TooFewRealisations(series.len()));
    }
    let expected = times.len();
    if let Some((index, s)) = series.iter().enumerate().find(|(_, s)| s.len() != expected) {
        return Err(AnalysisError::Ragged { index, len: s.len(), expected });
    }
    let mut mean_r = vec![0.0; expected];
    let mut std_r = vec![0.0; expected];
    for j in 0..expected {
        // Welford update.
        let (mut mean, mut m2) = (0.0, 0.0);
        for (k, s) in series.iter().enumerate() {
            let x = s[j].r;
            let delta = x - mean;
            mean += delta / (k + 1) as f64;
            m2 += delta * (x - mean);
        }
        mean_r[j] = mean;
        std_r[j] = (m2 / series.len() as f64).max(0.0).sqrt();
    }
    Ok(EnsembleStats { times: times.to_vec(), mean_r, std_r, count: series.len() })
}

/// Wrapped phases of one orbit: `[sample][oscillator]`.
pub fn kymograph_export(store: &TrajectoryStore, orbit: usize) -> Result<Vec<Vec<f64>>, AnalysisError> {
    if orbit >= store.orbits() {
        return Err(AnalysisError::OrbitOutOfRange { orbit, orbits: store.orbits() });
    }
    Ok((0..store.samples()).map(|j| store.state(orbit, j).iter().map(|&x| wrap_phase(x)).collect()).collect())
}

/// `dt = 2^(l-5) / 5` for `l = 1..=5`.
pub fn protocol_time_steps() -> Vec<f64> {
    (1..=5).map(|l| 2f64.powi(l - 5) / 5.0).collect()
}

/// Setup for the Kuramoto accuracy protocol.
#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyRun {
    pub oscillators: usize,
    pub coupling: f64,
    pub realisations: usize,
    pub dt: f64,
    pub tspan: f64,
    /// Time between stored samples.
    pub sample_interval: f64,
    pub seed: u64,
    pub threads: Threads,
}

impl AccuracyRun {
    pub fn new(coupling: f64, dt: f64) -> Self {
        Self {
            oscillators: 100,
            coupling,
            realisations: 64,
            dt,
            tspan: 400.0,
            sample_interval: 1.0,
            seed: 0,
            threads: Threads::All,
        }
    }

    pub fn engine_config(&self) -> Result<EngineConfig, ConfigError> {
        let ksteps = (self.sample_interval / self.dt).round().max(1.0) as usize;
        let config = EngineConfig {
            chunk_group: DEFAULT_CHUNK_GROUP,
            seed: self.seed,
            threads: self.threads,
            ..EngineConfig::new(Solver::Em, self.dt, self.tspan, ksteps, self.realisations)
        };
        config.validate()?;
        Ok(config)
    }

    /// Samples the realisations and integrates them.
    pub fn run(&self) -> Result<TrajectoryStore, AnalysisError> {
        let model = kuramoto_model(self.oscillators)?;
        let batch = sample_kuramoto_batch(self.oscillators, self.realisations, &KuramotoSampling::accuracy(self.coupling), self.seed)?;
        let store = run_batch(&model, &self.engine_config()?, &batch)?;
        if let Some(first) = store.failures.first() {
            return Err(AnalysisError::OrbitFailures(store.failures.len(), first.to_string()));
        }
        Ok(store)
    }
}

/// Terminal coherence for one `(K, dt)` pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub coupling: f64,
    pub dt: f64,
    pub mean_r_final: f64,
    pub std_r_final: f64,
}

/// Runs the accuracy protocol for every `(K, dt)` pair and reports
/// `<r(t_max)>` and `sigma(r(t_max))` from the last stored sample.
///
/// For a given `K` every `dt` integrates the same sampled orbits; noise
/// differs across `dt` because it is addressed by step index.
pub fn dt_sweep(template: &AccuracyRun, couplings: &[f64], dts: &[f64]) -> Result<Vec<SweepRow>, AnalysisError> {
    let mut rows = Vec::with_capacity(couplings.len() * dts.len());
    for &coupling in couplings {
        for &dt in dts {
            let run = AccuracyRun { coupling, dt, ..template.clone() };
            let store = run.run()?;
            let stats = ensemble_stats(store.times(), &coherence_series(&store))?;
            let last = stats.times.len() - 1;
            rows.push(SweepRow { coupling, dt, mean_r_final: stats.mean_r[last], std_r_final: stats.std_r[last] });
        }
    }
    Ok(rows)
}
