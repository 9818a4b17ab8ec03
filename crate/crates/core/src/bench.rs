//! Wall-clock timing of batch runs over orbit count, system size and worker
//! count.
//!
//! Each point gets one untimed warm-up run, then `repeats` timed runs. The
//! timed region is `run_batch` alone (store allocation included); model
//! construction and batch sampling happen before the clock starts. Every
//! timed run's store is hashed afterwards and the hashes must agree.

use std::io::Write;
use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use crate::engine::{run_batch, ConfigError, EngineConfig, OrbitBatch, Threads, DEFAULT_CHUNK_GROUP};
use crate::model::{kuramoto_model, sample_kuramoto_batch, KuramotoSampling, ModelError, ModelSpec};
use crate::solvers::Solver;

pub const DEFAULT_REPEATS: usize = 8;
pub const GRID_SIZES: [usize; 3] = [5, 10, 15];
pub const GRID_ORBITS: [usize; 6] = [512, 5120, 25600, 40960, 81920, 163840];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BenchError {
    #[error("repeats must be at least 1")]
    NoRepeats,
    #[error("benchmark grid needs at least one {0}")]
    EmptyList(&'static str),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{0} orbit(s) failed; first: {1}")]
    OrbitFailures(usize, String),
    #[error("timed runs produced different stores ({0} distinct hashes)")]
    Nondeterministic(usize),
    #[error("no baseline point for N = {n}, orbits = {orbits}")]
    Unmatched { n: usize, orbits: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchPoint {
    pub n: usize,
    pub orbits: usize,
    pub threads: usize,
    pub chunk_group: usize,
    /// Wall-clock seconds of each timed run.
    pub runtimes: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation; 0 when only one run was made.
    pub std: f64,
    pub std_defined: bool,
    pub store_hash: String,
}

fn summarise(runtimes: &[f64]) -> (f64, f64, bool) {
    let n = runtimes.len() as f64;
    let mean = runtimes.iter().sum::<f64>() / n;
    if runtimes.len() < 2 {
        return (mean, 0.0, false);
    }
    let var = runtimes.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt(), true)
}

pub fn time_run(model: &ModelSpec, config: &EngineConfig, batch: &OrbitBatch, repeats: usize) -> Result<BenchPoint, BenchError> {
    if repeats == 0 {
        return Err(BenchError::NoRepeats);
    }
    let warmup = run_batch(model, config, batch)?;
    if let Some(first) = warmup.failures.first() {
        return Err(BenchError::OrbitFailures(warmup.failures.len(), first.to_string()));
    }
    drop(warmup);

    let mut runtimes = Vec::with_capacity(repeats);
    let mut hashes = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let start = Instant::now();
        let store = run_batch(model, config, batch)?;
        runtimes.push(start.elapsed().as_secs_f64());
        hashes.push(store.content_hash());
    }
    hashes.sort();
    hashes.dedup();
    if hashes.len() != 1 {
        return Err(BenchError::Nondeterministic(hashes.len()));
    }
    let (mean, std, std_defined) = summarise(&runtimes);
    Ok(BenchPoint {
        n: model.nequat,
        orbits: config.orbits,
        threads: config.threads.resolve(),
        chunk_group: config.chunk_group,
        runtimes,
        mean,
        std,
        std_defined,
        store_hash: hashes.pop().expect("one hash"),
    })
}

/// Sweep description. Defaults reproduce the speed-evaluation protocol:
/// Euler-Maruyama, `dt = 0.05`, 400 s, `K = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub sizes: Vec<usize>,
    pub orbit_counts: Vec<usize>,
    pub threads: Vec<Threads>,
    pub chunk_group: usize,
    pub dt: f64,
    pub tspan: f64,
    pub ksteps: usize,
    pub repeats: usize,
    pub seed: u64,
    pub max_store_bytes: u64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            sizes: GRID_SIZES.to_vec(),
            orbit_counts: GRID_ORBITS.to_vec(),
            threads: vec![Threads::fixed(1).expect("nonzero"), Threads::All],
            chunk_group: DEFAULT_CHUNK_GROUP,
            dt: 0.05,
            tspan: 400.0,
            ksteps: 40,
            repeats: DEFAULT_REPEATS,
            seed: 0,
            max_store_bytes: crate::engine::DEFAULT_MAX_STORE_BYTES,
        }
    }
}

/// One grid cell; failures are kept so the sweep can continue.
#[derive(Debug, Clone, PartialEq)]
pub struct GridCell {
    pub n: usize,
    pub orbits: usize,
    pub threads: Threads,
    pub result: Result<BenchPoint, BenchError>,
}

/// Times every `(N, orbits, threads)` combination on the Kuramoto model.
/// `progress` is called after each cell.
pub fn scaling_grid(spec: &GridSpec, mut progress: impl FnMut(&GridCell)) -> Result<Vec<GridCell>, BenchError> {
    if spec.sizes.is_empty() {
        return Err(BenchError::EmptyList("system size"));
    }
    if spec.orbit_counts.is_empty() {
        return Err(BenchError::EmptyList("orbit count"));
    }
    if spec.threads.is_empty() {
        return Err(BenchError::EmptyList("thread count"));
    }
    let mut cells = Vec::new();
    for &n in &spec.sizes {
        for &orbits in &spec.orbit_counts {
            let prepared = kuramoto_model(n)
                .and_then(|model| Ok((model, sample_kuramoto_batch(n, orbits, &KuramotoSampling::speed(), spec.seed)?)));
            for &threads in &spec.threads {
                let result = match &prepared {
                    Ok((model, batch)) => {
                        let config = EngineConfig {
                            chunk_group: spec.chunk_group,
                            seed: spec.seed,
                            threads,
                            max_store_bytes: spec.max_store_bytes,
                            ..EngineConfig::new(Solver::Em, spec.dt, spec.tspan, spec.ksteps, orbits)
                        };
                        time_run(model, &config, batch, spec.repeats)
                    }
                    Err(e) => Err(e.clone().into()),
                };
                let cell = GridCell { n, orbits, threads, result };
                progress(&cell);
                cells.push(cell);
            }
        }
    }
    Ok(cells)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpeedupRow {
    pub n: usize,
    pub orbits: usize,
    pub threads: usize,
    pub speedup: f64,
}

/// `baseline mean / candidate mean` for every candidate, matched on
/// `(N, orbits)`.
pub fn speedup_table(baseline: &[BenchPoint], candidates: &[BenchPoint]) -> Result<Vec<SpeedupRow>, BenchError> {
    candidates
        .iter()
        .map(|c| {
            let base = baseline
                .iter()
                .find(|b| b.n == c.n && b.orbits == c.orbits)
                .ok_or(BenchError::Unmatched { n: c.n, orbits: c.orbits })?;
            Ok(SpeedupRow { n: c.n, orbits: c.orbits, threads: c.threads, speedup: base.mean / c.mean })
        })
        .collect()
}

pub fn write_points_csv(points: &[BenchPoint], out: impl Write) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["N", "orbits", "threads", "chunk_group", "mean_s", "std_s"])?;
    for p in points {
        w.write_record([
            p.n.to_string(),
            p.orbits.to_string(),
            p.threads.to_string(),
            p.chunk_group.to_string(),
            p.mean.to_string(),
            p.std.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_speedup_csv(rows: &[SpeedupRow], out: impl Write) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["N", "orbits", "threads", "speedup"])?;
    for r in rows {
        w.write_record([r.n.to_string(), r.orbits.to_string(), r.threads.to_string(), r.speedup.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn point(n: usize, orbits: usize, threads: usize, mean: f64) -> BenchPoint {
        BenchPoint {
            n,
            orbits,
            threads,
            chunk_group: 8,
            runtimes: vec![mean],
            mean,
            std: 0.0,
            std_defined: false,
            store_hash: String::new(),
        }
    }

    #[test]
    fn summary_statistics() {
        assert_eq!(summarise(&[2.0]), (2.0, 0.0, false));
        let (mean, std, defined) = summarise(&[1.0, 3.0]);
        assert_eq!((mean, std, defined), (2.0, 1.0, true));
    }

    #[test]
    fn speedups() {
        let base = vec![point(5, 512, 1, 4.0), point(10, 512, 1, 9.0)];
        let rows = speedup_table(&base, &[point(5, 512, 4, 2.0), point(5, 512, 1, 4.0)]).unwrap();
        assert_eq!(rows[0].speedup, 2.0);
        assert_eq!(rows[1].speedup, 1.0);
        assert_eq!(speedup_table(&base, &[point(15, 512, 4, 1.0)]), Err(BenchError::Unmatched { n: 15, orbits: 512 }));
    }

    #[test]
    fn single_cell_grid() {
        let spec = GridSpec {
            sizes: vec![3],
            orbit_counts: vec![16],
            threads: vec![Threads::fixed(1).unwrap()],
            tspan: 1.0,
            ksteps: 10,
            repeats: 1,
            ..GridSpec::default()
        };
        let mut seen = 0;
        let cells = scaling_grid(&spec, |_| seen += 1).unwrap();
        assert_eq!((cells.len(), seen), (1, 1));
        let p = cells[0].result.as_ref().unwrap();
        assert_eq!((p.n, p.orbits, p.threads, p.runtimes.len()), (3, 16, 1, 1));
        assert!(!p.std_defined && p.std == 0.0);
        assert!(p.runtimes[0] > 0.0);
    }

    #[test]
    fn grid_failures_are_recorded() {
        let spec = GridSpec {
            sizes: vec![0, 2],
            orbit_counts: vec![4],
            threads: vec![Threads::fixed(1).unwrap()],
            tspan: 1.0,
            ksteps: 10,
            repeats: 1,
            ..GridSpec::default()
        };
        let cells = scaling_grid(&spec, |_| {}).unwrap();
        assert!(cells[0].result.is_err());
        assert!(cells[1].result.is_ok());
        assert_eq!(scaling_grid(&GridSpec { sizes: vec![], ..spec }, |_| {}).unwrap_err(), BenchError::EmptyList("system size"));
    }

    #[test]
    fn default_grid_shape() {
        let spec = GridSpec::default();
        assert_eq!(spec.sizes.len() * spec.orbit_counts.len(), 18);
        assert_eq!(spec.repeats, 8);
    }

    #[test]
    fn csv_layout() {
        let mut buf = Vec::new();
        write_points_csv(&[point(5, 512, 2, 0.25)], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "N,orbits,threads,chunk_group,mean_s,std_s\n5,512,2,8,0.25,0\n");
        let mut buf = Vec::new();
        write_speedup_csv(&[SpeedupRow { n: 5, orbits: 512, threads: 2, speedup: 1.5 }], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "N,orbits,threads,speedup\n5,512,2,1.5\n");
    }
}
