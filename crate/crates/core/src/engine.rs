//! Batch execution: every orbit runs the chunked loop independently
//!
//! ```text
//! for chunk in 0..k:
//!     for s in 0..ksteps:
//!         n = chunk * ksteps + s
//!         noise = normals(seed, orbit, n)
//!         y = step(t = n * dt, y, noise)
//!     record y
//! ```
//!
//! Orbits are handed to workers in contiguous groups of `chunk_group`.
//! Noise is addressed by the absolute step `n`, so the output is bitwise
//! independent of the worker count, of scheduling, and of `ksteps` at the
//! sample times the two runs share.

use std::fmt;
use std::num::NonZeroUsize;
use std::ops::Range;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::ModelSpec;
use crate::rng;
use crate::solvers::{ImplicitOptions, Solver, StepError, Stepper};

/// Default orbit group width handed to one worker.
pub const DEFAULT_CHUNK_GROUP: usize = 8;

/// Default ceiling on trajectory store size (8 GiB).
pub const DEFAULT_MAX_STORE_BYTES: u64 = 8 << 30;

const DIVISIBILITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("{0} must be positive")]
    NotPositive(&'static str),
    #[error("{0} must be finite")]
    NotFinite(&'static str),
    #[error("tspan {tspan} is not a whole number of chunks of dt*ksteps = {chunk} ({ratio} chunks); pass --pad to round up")]
    NotDivisible { tspan: f64, chunk: f64, ratio: f64 },
    #[error("{0} orbits exceed the 2^32 addressable orbit indices")]
    TooManyOrbits(usize),
    #[error("trajectory store needs {needed} bytes, above the cap of {cap} bytes")]
    StoreTooLarge { needed: u128, cap: u64 },
    #[error("batch mismatch: {0}")]
    Batch(String),
    #[error("could not start worker pool: {0}")]
    Pool(String),
}

/// Worker count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Threads {
    #[default]
    All,
    Fixed(NonZeroUsize),
}

impl Threads {
    pub fn fixed(n: usize) -> Option<Self> {
        NonZeroUsize::new(n).map(Threads::Fixed)
    }

    pub fn resolve(self) -> usize {
        match self {
            Threads::All => std::thread::available_parallelism().map_or(1, NonZeroUsize::get),
            Threads::Fixed(n) => n.get(),
        }
    }
}

impl fmt::Display for Threads {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Threads::All => f.write_str("all"),
            Threads::Fixed(n) => write!(f, "{n}"),
        }
    }
}

impl FromStr for Threads {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("all") {
            return Ok(Threads::All);
        }
        s.parse::<usize>()
            .ok()
            .and_then(Threads::fixed)
            .ok_or_else(|| format!("threads must be a positive integer or `all`, got `{s}`"))
    }
}

impl Serialize for Threads {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Threads {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub solver: Solver,
    pub dt: f64,
    pub tspan: f64,
    /// Solver steps per chunk; the state is recorded once per chunk.
    pub ksteps: usize,
    pub orbits: usize,
    pub chunk_group: usize,
    pub seed: u64,
    pub threads: Threads,
    /// Round the chunk count up instead of rejecting a tspan that is not a
    /// whole number of chunks.
    #[serde(default)]
    pub pad: bool,
    #[serde(default)]
    pub implicit: ImplicitOptions,
    #[serde(default = "default_cap")]
    pub max_store_bytes: u64,
}

fn default_cap() -> u64 {
    DEFAULT_MAX_STORE_BYTES
}

impl EngineConfig {
    pub fn new(solver: Solver, dt: f64, tspan: f64, ksteps: usize, orbits: usize) -> Self {
        Self {
            solver,
            dt,
            tspan,
            ksteps,
            orbits,
            chunk_group: DEFAULT_CHUNK_GROUP,
            seed: 0,
            threads: Threads::All,
            pad: false,
            implicit: ImplicitOptions::default(),
            max_store_bytes: DEFAULT_MAX_STORE_BYTES,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_threads(mut self, threads: Threads) -> Self {
        self.threads = threads;
        self
    }

    pub fn with_chunk_group(mut self, chunk_group: usize) -> Self {
        self.chunk_group = chunk_group;
        self
    }

    /// Checks every field and returns the number of chunks.
    pub fn validate(&self) -> Result<usize, ConfigError> {
        if !self.dt.is_finite() {
            return Err(ConfigError::NotFinite("dt"));
        }
        if !(self.dt > 0.0) {
            return Err(ConfigError::NotPositive("dt"));
        }
        if !self.tspan.is_finite() {
            return Err(ConfigError::NotFinite("tspan"));
        }
        if !(self.tspan > 0.0) {
            return Err(ConfigError::NotPositive("tspan"));
        }
        for (name, v) in [("ksteps", self.ksteps), ("orbits", self.orbits), ("chunk_group", self.chunk_group)] {
            if v == 0 {
                return Err(ConfigError::NotPositive(name));
            }
        }
        if self.solver == Solver::Ie || self.solver == Solver::Im {
            if !(self.implicit.tol > 0.0) {
                return Err(ConfigError::NotPositive("tol"));
            }
            if self.implicit.max_iter == 0 {
                return Err(ConfigError::NotPositive("max_iter"));
            }
        }
        if self.orbits as u64 > u64::from(u32::MAX) + 1 {
            return Err(ConfigError::TooManyOrbits(self.orbits));
        }
        if self.pad {
            padded_iteration_count(self.tspan, self.dt, self.ksteps)
        } else {
            iteration_count(self.tspan, self.dt, self.ksteps)
        }
    }

    /// Bytes of sample data a run with this config stores.
    pub fn store_bytes(&self, nequat: usize) -> Result<u128, ConfigError> {
        let chunks = self.validate()?;
        Ok(self.orbits as u128 * (chunks as u128 + 1) * nequat as u128 * 8)
    }
}

/// Number of chunks `tspan / (dt * ksteps)`, which must be a whole number.
pub fn iteration_count(tspan: f64, dt: f64, ksteps: usize) -> Result<usize, ConfigError> {
    let chunk = dt * ksteps as f64;
    let ratio = tspan / chunk;
    let k = ratio.round();
    if k < 1.0 || (ratio - k).abs() > DIVISIBILITY_TOL * k {
        return Err(ConfigError::NotDivisible { tspan, chunk, ratio });
    }
    Ok(k as usize)
}

/// Chunk count rounded up, integrating past `tspan` if needed.
pub fn padded_iteration_count(tspan: f64, dt: f64, ksteps: usize) -> Result<usize, ConfigError> {
    match iteration_count(tspan, dt, ksteps) {
        Ok(k) => Ok(k),
        Err(_) => Ok((tspan / (dt * ksteps as f64)).ceil().max(1.0) as usize),
    }
}

/// Contiguous orbit ranges of width `chunk_group`; the last may be short.
pub fn partition_orbits(orbits: usize, chunk_group: usize) -> Vec<Range<usize>> {
    let width = chunk_group.max(1);
    (0..orbits).step_by(width).map(|start| start..(start + width).min(orbits)).collect()
}

/// Initial states and parameter vectors for a batch, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct OrbitBatch {
    nequat: usize,
    nparams: usize,
    init: Vec<f64>,
    params: Vec<f64>,
}

impl OrbitBatch {
    pub fn from_flat(nequat: usize, nparams: usize, init: Vec<f64>, params: Vec<f64>) -> Result<Self, ConfigError> {
        if nequat == 0 || !init.len().is_multiple_of(nequat) {
            return Err(ConfigError::Batch(format!("{} initial values do not split into rows of {nequat}", init.len())));
        }
        let orbits = init.len() / nequat;
        if params.len() != orbits * nparams {
            return Err(ConfigError::Batch(format!(
                "{orbits} orbits need {} parameter values ({nparams} each), got {}",
                orbits * nparams,
                params.len()
            )));
        }
        Ok(Self { nequat, nparams, init, params })
    }

    pub fn from_rows(init: &[Vec<f64>], params: &[Vec<f64>]) -> Result<Self, ConfigError> {
        if init.len() != params.len() {
            return Err(ConfigError::Batch(format!("{} initial states but {} parameter rows", init.len(), params.len())));
        }
        let nequat = init.first().map_or(0, Vec::len);
        let nparams = params.first().map_or(0, Vec::len);
        if let Some(row) = init.iter().position(|r| r.len() != nequat) {
            return Err(ConfigError::Batch(format!("initial state row {row} has {} values, expected {nequat}", init[row].len())));
        }
        if let Some(row) = params.iter().position(|r| r.len() != nparams) {
            return Err(ConfigError::Batch(format!("parameter row {row} has {} values, expected {nparams}", params[row].len())));
        }
        Self::from_flat(nequat, nparams, init.concat(), params.concat())
    }

    pub fn orbits(&self) -> usize {
        self.init.len() / self.nequat
    }

    pub fn nequat(&self) -> usize {
        self.nequat
    }

    pub fn nparams(&self) -> usize {
        self.nparams
    }

    pub fn init(&self, orbit: usize) -> &[f64] {
        &self.init[orbit * self.nequat..(orbit + 1) * self.nequat]
    }

    pub fn params(&self, orbit: usize) -> &[f64] {
        &self.params[orbit * self.nparams..(orbit + 1) * self.nparams]
    }

    /// Keeps the first `orbits` rows.
    pub fn truncated(&self, orbits: usize) -> Self {
        let orbits = orbits.min(self.orbits());
        Self {
            nequat: self.nequat,
            nparams: self.nparams,
            init: self.init[..orbits * self.nequat].to_vec(),
            params: self.params[..orbits * self.nparams].to_vec(),
        }
    }

    fn check(&self, model: &ModelSpec, config: &EngineConfig) -> Result<(), ConfigError> {
        if self.nequat != model.nequat {
            return Err(ConfigError::Batch(format!("initial states have {} columns, model has {} equations", self.nequat, model.nequat)));
        }
        if self.nparams != model.nparams {
            return Err(ConfigError::Batch(format!("parameter rows have {} columns, model has {} parameters", self.nparams, model.nparams)));
        }
        if self.orbits() != config.orbits {
            return Err(ConfigError::Batch(format!("batch has {} orbits, config asks for {}", self.orbits(), config.orbits)));
        }
        if let Some(pos) = self.init.iter().position(|v| !v.is_finite()) {
            return Err(ConfigError::Batch(format!("initial state of orbit {} is not finite", pos / self.nequat)));
        }
        Ok(())
    }
}

/// An orbit whose integration stopped early.
#[derive(Debug, Clone, PartialEq)]
pub struct OrbitFailure {
    pub orbit: usize,
    pub chunk: usize,
    /// Step within the chunk.
    pub step: usize,
    pub error: StepError,
}

impl fmt::Display for OrbitFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "orbit {} failed at chunk {}, step {}: {}", self.orbit, self.chunk, self.step, self.error)
    }
}

/// Sampled states of every orbit: `orbits x samples x nequat`, orbit-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryStore {
    nequat: usize,
    orbits: usize,
    times: Vec<f64>,
    values: Vec<f64>,
    /// Samples after a failure are NaN.
    pub failures: Vec<OrbitFailure>,
    pub config: Option<EngineConfig>,
}

impl TrajectoryStore {
    pub fn from_parts(orbits: usize, nequat: usize, times: Vec<f64>, values: Vec<f64>) -> Result<Self, ConfigError> {
        if values.len() != orbits * times.len() * nequat {
            return Err(ConfigError::Batch(format!(
                "{} values do not fill {orbits} orbits x {} samples x {nequat} equations",
                values.len(),
                times.len()
            )));
        }
        Ok(Self { nequat, orbits, times, values, failures: Vec::new(), config: None })
    }

    pub fn orbits(&self) -> usize {
        self.orbits
    }

    pub fn nequat(&self) -> usize {
        self.nequat
    }

    pub fn samples(&self) -> usize {
        self.times.len()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// All samples of one orbit, time-major.
    pub fn orbit(&self, orbit: usize) -> &[f64] {
        let stride = self.samples() * self.nequat;
        &self.values[orbit * stride..(orbit + 1) * stride]
    }

    pub fn state(&self, orbit: usize, sample: usize) -> &[f64] {
        let start = (orbit * self.samples() + sample) * self.nequat;
        &self.values[start..start + self.nequat]
    }

    /// SHA-256 over dimensions, sample times and values (little-endian).
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for dim in [self.orbits, self.samples(), self.nequat] {
            h.update((dim as u64).to_le_bytes());
        }
        for v in self.times.iter().chain(&self.values) {
            h.update(v.to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Runs every orbit of `batch` and collects the sampled trajectories.
///
/// Configuration and batch errors fail the whole call. A solver error stops
/// only the orbit it occurred in and is listed in
/// [`TrajectoryStore::failures`].
pub fn run_batch(model: &ModelSpec, config: &EngineConfig, batch: &OrbitBatch) -> Result<TrajectoryStore, ConfigError> {
    let chunks = config.validate()?;
    batch.check(model, config)?;
    let needed = config.orbits as u128 * (chunks as u128 + 1) * model.nequat as u128 * 8;
    if needed > u128::from(config.max_store_bytes) {
        return Err(ConfigError::StoreTooLarge { needed, cap: config.max_store_bytes });
    }

    let samples = chunks + 1;
    let stride = samples * model.nequat;
    let times: Vec<f64> = (0..samples).map(|c| (c * config.ksteps) as f64 * config.dt).collect();
    let mut values = vec![0.0; config.orbits * stride];
    let groups = partition_orbits(config.orbits, config.chunk_group);

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads.resolve())
        .build()
        .map_err(|e| ConfigError::Pool(e.to_string()))?;

    let group_failures: Vec<Vec<OrbitFailure>> = pool.install(|| {
        values
            .par_chunks_mut(config.chunk_group * stride)
            .zip(groups.par_iter())
            .map(|(out, range)| {
                let mut worker = OrbitWorker::new(model, config);
                range
                    .clone()
                    .zip(out.chunks_mut(stride))
                    .filter_map(|(orbit, dst)| worker.run(orbit, batch.init(orbit), batch.params(orbit), chunks, dst).err())
                    .collect()
            })
            .collect()
    });

    Ok(TrajectoryStore {
        nequat: model.nequat,
        orbits: config.orbits,
        times,
        values,
        failures: group_failures.into_iter().flatten().collect(),
        config: Some(config.clone()),
    })
}

struct OrbitWorker<'a> {
    model: &'a ModelSpec,
    config: &'a EngineConfig,
    stepper: Stepper,
    noise: Vec<f64>,
    draws: bool,
}

impl<'a> OrbitWorker<'a> {
    fn new(model: &'a ModelSpec, config: &'a EngineConfig) -> Self {
        Self {
            model,
            config,
            stepper: Stepper::new(config.solver, config.implicit, model.nequat),
            noise: vec![0.0; model.nnoise],
            draws: config.solver.is_stochastic() && model.nnoise > 0,
        }
    }

    fn run(&mut self, orbit: usize, init: &[f64], p: &[f64], chunks: usize, out: &mut [f64]) -> Result<(), OrbitFailure> {
        let n = self.model.nequat;
        let (ksteps, dt, seed) = (self.config.ksteps, self.config.dt, self.config.seed);
        let (first, rest) = out.split_at_mut(n);
        first.copy_from_slice(init);
        let mut y = init.to_vec();
        for (chunk, dst) in rest.chunks_mut(n).enumerate() {
            for step in 0..ksteps {
                let absolute = chunk * ksteps + step;
                if self.draws {
                    rng::fill_normals_for_step(seed, orbit as u32, absolute as u64, &mut self.noise);
                }
                let t = absolute as f64 * dt;
                if let Err(error) = self.stepper.advance(self.model, t, &mut y, p, dt, &self.noise) {
                    rest[chunk * n..].fill(f64::NAN);
                    return Err(OrbitFailure { orbit, chunk, step, error });
                }
            }
            dst.copy_from_slice(&y);
        }
        debug_assert_eq!(rest.len(), chunks * n);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::kuramoto_model;

    #[test]
    fn iteration_counts() {
        assert_eq!(iteration_count(400.0, 0.05, 40), Ok(200));
        assert_eq!(iteration_count(0.05 * 40.0, 0.05, 40), Ok(1));
        assert!(matches!(iteration_count(400.0, 0.05, 7), Err(ConfigError::NotDivisible { .. })));
        assert_eq!(padded_iteration_count(400.0, 0.05, 7), Ok(1143));
        assert!(iteration_count(0.01, 0.05, 40).is_err());
        for l in 1..=5 {
            let dt = 2f64.powi(l - 5) / 5.0;
            assert_eq!(iteration_count(400.0, dt, 1), Ok((400.0 / dt).round() as usize));
        }
    }

    #[test]
    fn partitions() {
        assert_eq!(partition_orbits(10, 4), vec![0..4, 4..8, 8..10]);
        assert_eq!(partition_orbits(512, 8).len(), 64);
        assert_eq!(partition_orbits(5, 9), vec![0..5]);
    }

    #[test]
    fn config_validation() {
        let base = EngineConfig::new(Solver::Em, 0.05, 400.0, 40, 1);
        assert_eq!(base.validate(), Ok(200));
        let mut c = base.clone();
        c.dt = 0.0;
        assert_eq!(c.validate().unwrap_err().to_string(), "dt must be positive");
        let mut c = base.clone();
        c.tspan = -1.0;
        assert_eq!(c.validate(), Err(ConfigError::NotPositive("tspan")));
        let mut c = base.clone();
        c.ksteps = 0;
        assert_eq!(c.validate(), Err(ConfigError::NotPositive("ksteps")));
        let mut c = base.clone();
        c.chunk_group = 0;
        assert_eq!(c.validate(), Err(ConfigError::NotPositive("chunk_group")));
        let mut c = base;
        c.dt = f64::NAN;
        assert_eq!(c.validate(), Err(ConfigError::NotFinite("dt")));
    }

    #[test]
    fn threads_parse() {
        assert_eq!("all".parse::<Threads>(), Ok(Threads::All));
        assert_eq!("3".parse::<Threads>(), Ok(Threads::fixed(3).unwrap()));
        assert!("0".parse::<Threads>().is_err());
        assert!("many".parse::<Threads>().is_err());
    }

    #[test]
    fn uncoupled_rotator_is_linear_in_time() {
        let model = kuramoto_model(1).unwrap();
        let batch = OrbitBatch::from_rows(&[vec![0.5]], &[vec![1.0, 0.25, 0.0]]).unwrap();
        let config = EngineConfig::new(Solver::Em, 0.05, 10.0, 20, 1);
        let store = run_batch(&model, &config, &batch).unwrap();
        assert_eq!(store.samples(), 11);
        assert_eq!(store.state(0, 0), &[0.5]);
        for (j, t) in store.times().iter().enumerate() {
            assert!((store.state(0, j)[0] - (0.5 + 0.25 * t)).abs() < 1e-12);
        }
    }

    #[test]
    fn memory_cap_is_checked_before_allocation() {
        let model = kuramoto_model(2).unwrap();
        let batch = OrbitBatch::from_rows(&[vec![0.0, 0.0]], &[vec![0.0; 5]]).unwrap();
        let mut config = EngineConfig::new(Solver::Em, 0.1, 1.0, 1, 1);
        config.max_store_bytes = 11 * 2 * 8 - 1;
        assert!(matches!(run_batch(&model, &config, &batch), Err(ConfigError::StoreTooLarge { needed: 176, .. })));
        config.max_store_bytes = 176;
        assert!(run_batch(&model, &config, &batch).is_ok());
    }

    #[test]
    fn batch_mismatch_rejected() {
        let model = kuramoto_model(2).unwrap();
        let batch = OrbitBatch::from_rows(&[vec![0.0, 0.0]], &[vec![0.0; 4]]).unwrap();
        let config = EngineConfig::new(Solver::Em, 0.1, 1.0, 1, 1);
        assert!(matches!(run_batch(&model, &config, &batch), Err(ConfigError::Batch(_))));
        assert!(OrbitBatch::from_rows(&[vec![0.0], vec![0.0, 1.0]], &[vec![], vec![]]).is_err());
        assert!(OrbitBatch::from_rows(&[vec![0.0]], &[]).is_err());
    }

    #[test]
    fn failed_orbit_does_not_stop_the_others() {
        let model = ModelSpec::from_expressions("log", 1, 0, 0, "-ln(y[i])", None).unwrap();
        let batch = OrbitBatch::from_rows(&[vec![2.0], vec![0.0], vec![3.0]], &[vec![], vec![], vec![]]).unwrap();
        let config = EngineConfig::new(Solver::Euler, 0.01, 0.1, 5, 3).with_chunk_group(1);
        let store = run_batch(&model, &config, &batch).unwrap();
        assert_eq!(store.failures.len(), 1);
        let failure = &store.failures[0];
        assert_eq!((failure.orbit, failure.chunk, failure.step), (1, 0, 0));
        assert!(store.orbit(0).iter().all(|v| v.is_finite()));
        assert!(store.orbit(2).iter().all(|v| v.is_finite()));
        assert_eq!(store.state(1, 0), &[0.0]);
        assert!(store.state(1, 1)[0].is_nan());
    }
}
