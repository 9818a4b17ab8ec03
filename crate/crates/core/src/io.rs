//! File formats.
//!
//! * Matrix CSV (`initx`, `params`): one orbit per row, no header, `#`
//!   starts a comment line.
//! * Store CSV: header `orbit,time,y0,..`, one row per orbit and sample.
//! * Store binary: `SDB1`, a little-endian `u64` byte length, that many bytes
//!   of UTF-8 JSON metadata, then little-endian `f64` values ordered orbit,
//!   sample, equation.
//!
//! Floats are written in Rust's shortest round-trip form, so every reader
//! here recovers the written values exactly.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{CoherencePoint, EnsembleStats, SweepRow};
use crate::engine::{EngineConfig, TrajectoryStore};

pub const STORE_MAGIC: &[u8; 4] = b"SDB1";

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl IoError {
    fn io(path: &Path, source: io::Error) -> Self {
        IoError::Io { path: path.to_path_buf(), source }
    }

    fn format(path: &Path, message: impl Into<String>) -> Self {
        IoError::Format { path: path.to_path_buf(), message: message.into() }
    }

    fn csv(path: &Path, e: csv::Error) -> Self {
        if e.is_io_error() {
            match e.into_kind() {
                csv::ErrorKind::Io(source) => IoError::io(path, source),
                other => IoError::format(path, format!("{other:?}")),
            }
        } else {
            IoError::format(path, e.to_string())
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, IoError> {
    File::create(path).map(BufWriter::new).map_err(|e| IoError::io(path, e))
}

fn parse_f64(path: &Path, row: usize, field: &str) -> Result<f64, IoError> {
    field
        .trim()
        .parse()
        .map_err(|_| IoError::format(path, format!("row {}: `{field}` is not a number", row + 1)))
}

/// Reads a headerless numeric CSV into rows.
pub fn read_matrix_csv(path: &Path) -> Result<Vec<Vec<f64>>, IoError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)
        .map_err(|e| IoError::csv(path, e))?;
    let mut rows = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| IoError::csv(path, e))?;
        if record.iter().all(str::is_empty) {
            continue;
        }
        rows.push(record.iter().map(|f| parse_f64(path, idx, f)).collect::<Result<Vec<_>, _>>()?);
    }
    Ok(rows)
}

pub fn write_matrix_csv(path: &Path, rows: &[Vec<f64>]) -> Result<(), IoError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).flexible(true).from_writer(create(path)?);
    for row in rows {
        w.write_record(row.iter().map(f64::to_string)).map_err(|e| IoError::csv(path, e))?;
    }
    w.flush().map_err(|e| IoError::io(path, e))
}

pub fn write_store_csv(path: &Path, store: &TrajectoryStore) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let mut header = vec!["orbit".to_string(), "time".to_string()];
    header.extend((0..store.nequat()).map(|i| format!("y{i}")));
    w.write_record(&header).map_err(|e| IoError::csv(path, e))?;
    let mut record = Vec::with_capacity(store.nequat() + 2);
    for orbit in 0..store.orbits() {
        for (j, t) in store.times().iter().enumerate() {
            record.clear();
            record.push(orbit.to_string());
            record.push(t.to_string());
            record.extend(store.state(orbit, j).iter().map(f64::to_string));
            w.write_record(&record).map_err(|e| IoError::csv(path, e))?;
        }
    }
    w.flush().map_err(|e| IoError::io(path, e))
}

pub fn read_store_csv(path: &Path) -> Result<TrajectoryStore, IoError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(|e| IoError::csv(path, e))?;
    let header = reader.headers().map_err(|e| IoError::csv(path, e))?.clone();
    if header.len() < 3 || &header[0] != "orbit" || &header[1] != "time" {
        return Err(IoError::format(path, "expected a header `orbit,time,y0,...`"));
    }
    let nequat = header.len() - 2;
    let mut times: Vec<f64> = Vec::new();
    let mut values = Vec::new();
    let mut orbit_count = 0usize;
    let mut sample = 0usize;
    let mut current: Option<usize> = None;
    for (idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| IoError::csv(path, e))?;
        let orbit: usize = record[0]
            .parse()
            .map_err(|_| IoError::format(path, format!("row {}: bad orbit index `{}`", idx + 1, &record[0])))?;
        let t = parse_f64(path, idx, &record[1])?;
        if current != Some(orbit) {
            if current.is_some() && sample != times.len() {
                return Err(IoError::format(path, format!("orbit {} has {sample} samples, expected {}", orbit_count - 1, times.len())));
            }
            if orbit != orbit_count {
                return Err(IoError::format(path, format!("row {}: orbit {orbit} out of order", idx + 1)));
            }
            current = Some(orbit);
            orbit_count += 1;
            sample = 0;
        }
        if orbit == 0 {
            times.push(t);
        } else if times.get(sample) != Some(&t) {
            return Err(IoError::format(path, format!("row {}: time {t} does not match orbit 0", idx + 1)));
        }
        sample += 1;
        for field in record.iter().skip(2) {
            values.push(parse_f64(path, idx, field)?);
        }
    }
    if orbit_count == 0 {
        return Err(IoError::format(path, "store has no rows"));
    }
    if sample != times.len() {
        return Err(IoError::format(path, format!("last orbit has {sample} samples, expected {}", times.len())));
    }
    TrajectoryStore::from_parts(orbit_count, nequat, times, values).map_err(|e| IoError::format(path, e.to_string()))
}

/// JSON block embedded in a binary store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreHeader {
    pub orbits: usize,
    pub samples: usize,
    pub nequat: usize,
    pub times: Vec<f64>,
    #[serde(default)]
    pub manifest: Option<RunManifest>,
}

pub fn write_store_bin(path: &Path, store: &TrajectoryStore, manifest: Option<&RunManifest>) -> Result<(), IoError> {
    let header = StoreHeader {
        orbits: store.orbits(),
        samples: store.samples(),
        nequat: store.nequat(),
        times: store.times().to_vec(),
        manifest: manifest.cloned(),
    };
    let meta = serde_json::to_vec(&header).map_err(|e| IoError::format(path, e.to_string()))?;
    let mut w = create(path)?;
    let io = |e| IoError::io(path, e);
    w.write_all(STORE_MAGIC).map_err(io)?;
    w.write_all(&(meta.len() as u64).to_le_bytes()).map_err(io)?;
    w.write_all(&meta).map_err(io)?;
    for v in store.values() {
        w.write_all(&v.to_le_bytes()).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_store_bin(path: &Path) -> Result<(TrajectoryStore, StoreHeader), IoError> {
    let mut r = BufReader::new(File::open(path).map_err(|e| IoError::io(path, e))?);
    let short = |what: &str| IoError::format(path, format!("truncated store: missing {what}"));
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| short("magic bytes"))?;
    if &magic != STORE_MAGIC {
        return Err(IoError::format(path, "not a binary trajectory store (bad magic)"));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len).map_err(|_| short("metadata length"))?;
    let len = u64::from_le_bytes(len);
    let mut meta = Vec::new();
    r.by_ref().take(len).read_to_end(&mut meta).map_err(|e| IoError::io(path, e))?;
    if meta.len() as u64 != len {
        return Err(short("metadata"));
    }
    let header: StoreHeader = serde_json::from_slice(&meta).map_err(|e| IoError::format(path, format!("bad metadata: {e}")))?;
    if header.times.len() != header.samples {
        return Err(IoError::format(path, "metadata sample count disagrees with its time list"));
    }
    let count = header.orbits * header.samples * header.nequat;
    let mut raw = Vec::new();
    r.read_to_end(&mut raw).map_err(|e| IoError::io(path, e))?;
    if raw.len() != count * 8 {
        return Err(IoError::format(path, format!("expected {} value bytes, found {}", count * 8, raw.len())));
    }
    let values = raw.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))).collect();
    let mut store = TrajectoryStore::from_parts(header.orbits, header.nequat, header.times.clone(), values)
        .map_err(|e| IoError::format(path, e.to_string()))?;
    store.config = header.manifest.as_ref().map(|m| m.config.clone());
    Ok((store, header))
}

/// Reads either store format, chosen by the leading magic bytes.
pub fn read_store(path: &Path) -> Result<TrajectoryStore, IoError> {
    let mut magic = [0u8; 4];
    let is_bin = File::open(path)
        .map_err(|e| IoError::io(path, e))?
        .read_exact(&mut magic)
        .is_ok_and(|_| &magic == STORE_MAGIC);
    if is_bin {
        read_store_bin(path).map(|(store, _)| store)
    } else {
        read_store_csv(path)
    }
}

/// `orbit,time,r,phi` for every orbit and sample.
pub fn write_coherence_csv(path: &Path, times: &[f64], series: &[Vec<CoherencePoint>]) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let err = |e| IoError::csv(path, e);
    w.write_record(["orbit", "time", "r", "phi"]).map_err(err)?;
    for (orbit, s) in series.iter().enumerate() {
        for (t, p) in times.iter().zip(s) {
            w.write_record([orbit.to_string(), t.to_string(), p.r.to_string(), p.phi.to_string()]).map_err(err)?;
        }
    }
    w.flush().map_err(|e| IoError::io(path, e))
}

/// `time,mean_r,std_r,count`; `std_r` is the population standard deviation.
pub fn write_ensemble_csv(path: &Path, stats: &EnsembleStats) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let err = |e| IoError::csv(path, e);
    w.write_record(["time", "mean_r", "std_r", "count"]).map_err(err)?;
    for j in 0..stats.times.len() {
        w.write_record([
            stats.times[j].to_string(),
            stats.mean_r[j].to_string(),
            stats.std_r[j].to_string(),
            stats.count.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| IoError::io(path, e))
}

/// `time,theta0,..`, phases wrapped onto `[-pi, pi)`.
pub fn write_kymograph_csv(path: &Path, times: &[f64], grid: &[Vec<f64>]) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let err = |e| IoError::csv(path, e);
    let width = grid.first().map_or(0, Vec::len);
    let mut header = vec!["time".to_string()];
    header.extend((0..width).map(|i| format!("theta{i}")));
    w.write_record(&header).map_err(err)?;
    for (t, row) in times.iter().zip(grid) {
        let mut record = vec![t.to_string()];
        record.extend(row.iter().map(f64::to_string));
        w.write_record(&record).map_err(err)?;
    }
    w.flush().map_err(|e| IoError::io(path, e))
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let err = |e| IoError::csv(path, e);
    w.write_record(["K", "dt", "mean_r_final", "std_r_final"]).map_err(err)?;
    for r in rows {
        w.write_record([r.coupling.to_string(), r.dt.to_string(), r.mean_r_final.to_string(), r.std_r_final.to_string()])
            .map_err(err)?;
    }
    w.flush().map_err(|e| IoError::io(path, e))
}

/// Where a run's model came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelSource {
    Builtin(String),
    File(PathBuf),
}

/// Where a run's initial states and parameters came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchSource {
    /// `params` may be absent for models without parameters.
    Files { initx: PathBuf, params: Option<PathBuf> },
    /// Kuramoto orbits drawn from a protocol preset with the given seed.
    Sampled { preset: String, coupling: f64, seed: u64 },
}

/// Written next to every output so the run can be repeated exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub timestamp_unix: u64,
    pub model: ModelSource,
    pub batch: BatchSource,
    pub config: EngineConfig,
    pub format: String,
    pub outputs: Vec<PathBuf>,
    /// Host logical processors.
    pub host_threads: usize,
    #[serde(default)]
    pub notes: Vec<String>,
    /// Present for accuracy-protocol runs, which derive several stores.
    #[serde(default)]
    pub accuracy: Option<AccuracyPlan>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyPlan {
    pub oscillators: usize,
    pub realisations: usize,
    pub couplings: Vec<f64>,
    pub dts: Vec<f64>,
    pub sample_interval: f64,
    pub dt_sweep: bool,
}

impl RunManifest {
    pub fn new(command: &str, model: ModelSource, batch: BatchSource, config: EngineConfig, format: &str) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            timestamp_unix: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
            model,
            batch,
            config,
            format: format.to_string(),
            outputs: Vec::new(),
            host_threads: std::thread::available_parallelism().map_or(1, |n| n.get()),
            notes: Vec::new(),
            accuracy: None,
        }
    }

    pub fn write(&self, path: &Path) -> Result<(), IoError> {
        let mut w = create(path)?;
        serde_json::to_writer_pretty(&mut w, self).map_err(|e| IoError::format(path, e.to_string()))?;
        w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| IoError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self, IoError> {
        let text = std::fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| IoError::format(path, format!("bad manifest: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solvers::Solver;

    fn sample_store() -> TrajectoryStore {
        let values = vec![0.1, -2.5, 1.0 / 3.0, 1e-300, f64::MAX, -0.0, 7.0, 8.0, 0.1 + 0.2, f64::MIN_POSITIVE, 5e-324, 1e21];
        TrajectoryStore::from_parts(2, 2, vec![0.0, 0.05 * 3.0, 0.3], values).unwrap()
    }

    #[test]
    fn store_csv_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let store = sample_store();
        write_store_csv(&path, &store).unwrap();
        let back = read_store_csv(&path).unwrap();
        assert_eq!(back.content_hash(), store.content_hash());
        assert_eq!(read_store(&path).unwrap().values(), store.values());
    }

    #[test]
    fn store_bin_is_exact_and_carries_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.bin");
        let store = sample_store();
        let manifest = RunManifest::new(
            "run",
            ModelSource::Builtin("kuramoto:2".into()),
            BatchSource::Sampled { preset: "speed".into(), coupling: 1.0, seed: 1 },
            EngineConfig::new(Solver::Em, 0.05, 0.3, 3, 2),
            "bin",
        );
        write_store_bin(&path, &store, Some(&manifest)).unwrap();
        let raw = std::fs::read(&path).unwrap();
        assert_eq!(&raw[..4], b"SDB1");
        let meta_len = u64::from_le_bytes(raw[4..12].try_into().unwrap()) as usize;
        assert_eq!(raw.len(), 12 + meta_len + 12 * 8);
        assert_eq!(f64::from_le_bytes(raw[12 + meta_len..12 + meta_len + 8].try_into().unwrap()), 0.1);
        let (back, header) = read_store_bin(&path).unwrap();
        assert_eq!(back.content_hash(), store.content_hash());
        assert_eq!(header.manifest, Some(manifest));
        assert_eq!(read_store(&path).unwrap().values(), store.values());
    }

    #[test]
    fn corrupt_stores_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.bin");
        let store = sample_store();
        write_store_bin(&path, &store, None).unwrap();
        let raw = std::fs::read(&path).unwrap();
        std::fs::write(&path, &raw[..raw.len() - 3]).unwrap();
        assert!(matches!(read_store(&path), Err(IoError::Format { .. })));
        std::fs::write(&path, b"SDB1\xff").unwrap();
        assert!(matches!(read_store(&path), Err(IoError::Format { .. })));
        std::fs::write(&path, "orbit,time,y0\n0,0,1\n2,0,1\n").unwrap();
        assert!(matches!(read_store(&path), Err(IoError::Format { .. })));
        std::fs::write(&path, "orbit,time,y0\n0,0,1\n0,1,1\n1,0,1\n").unwrap();
        assert!(matches!(read_store(&path), Err(IoError::Format { .. })));
        std::fs::write(&path, "a,b\n1,2\n").unwrap();
        assert!(matches!(read_store(&path), Err(IoError::Format { .. })));
        assert!(matches!(read_store(&dir.path().join("missing.csv")), Err(IoError::Io { .. })));
    }

    #[test]
    fn matrix_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        std::fs::write(&path, "# header comment\n1, 2.5,3\n\n-4,5e-3,6\n").unwrap();
        assert_eq!(read_matrix_csv(&path).unwrap(), vec![vec![1.0, 2.5, 3.0], vec![-4.0, 0.005, 6.0]]);
        let rows = vec![vec![0.1, 0.2], vec![1.0 / 3.0, -7.0]];
        write_matrix_csv(&path, &rows).unwrap();
        assert_eq!(read_matrix_csv(&path).unwrap(), rows);
        std::fs::write(&path, "1,x\n").unwrap();
        assert!(matches!(read_matrix_csv(&path), Err(IoError::Format { .. })));
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        let mut m = RunManifest::new(
            "run",
            ModelSource::File("model.txt".into()),
            BatchSource::Files { initx: "x.csv".into(), params: Some("p.csv".into()) },
            EngineConfig::new(Solver::Rk4, 0.1, 1.0, 2, 3).with_threads(crate::engine::Threads::fixed(2).unwrap()),
            "csv",
        );
        m.outputs.push("trajectory.csv".into());
        m.write(&path).unwrap();
        assert_eq!(RunManifest::read(&path).unwrap(), m);
    }
}
