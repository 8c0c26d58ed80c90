//! File helpers shared by the loaders: CSV tables and TOML documents.

use std::fs::File;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::{Error, Result};

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path.to_path_buf())
        } else {
            Error::Io { path: path.to_path_buf(), source: e }
        }
    })
}

/// Reads a headed CSV file into rows. Leading/trailing whitespace in fields
/// is ignored and lines starting with `#` are skipped.
pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).comment(Some(b'#')).from_reader(open(path)?);
    rdr.deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(|e| Error::Csv { path: path.to_path_buf(), source: e })
}

pub fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let csv_err = |e| Error::Csv { path: path.to_path_buf(), source: e };
    let file = File::create(path).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
}

pub fn read_toml<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path.to_path_buf())
        } else {
            Error::Io { path: path.to_path_buf(), source: e }
        }
    })?;
    toml::from_str(&text).map_err(|e| Error::Parse { path: path.to_path_buf(), msg: e.to_string() })
}

pub fn write_toml<T: Serialize>(path: &Path, value: &T, header: &str) -> Result<()> {
    let body = toml::to_string(value).map_err(|e| Error::Input(e.to_string()))?;
    std::fs::write(path, format!("{header}{body}")).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
}

/// File names of a run directory, shared by the simulator and the estimator.
pub mod run_files {
    pub const LAYOUT: &str = "layout.toml";
    pub const CAMERA_LEFT: &str = "camera_left.toml";
    pub const CAMERA_RIGHT: &str = "camera_right.toml";
    pub const TEMPLATE: &str = "template.toml";
    pub const RUN: &str = "run.toml";
    pub const IMU: &str = "imu.csv";
    pub const ENCODER: &str = "encoder.csv";
    pub const FRAMES: &str = "frames.csv";
    pub const PIXELS: &str = "pixels.csv";
    pub const TRUTH: &str = "truth.csv";
    pub const IRREGULARITIES: &str = "irregularities.csv";
    pub const MANIFEST: &str = "manifest.toml";
    pub const ESTIMATE: &str = "estimate.csv";
    pub const FITS: &str = "fits.csv";
    pub const ANCHORS: &str = "anchors.csv";
    pub const ATTITUDE: &str = "attitude.csv";
    pub const NE2: &str = "ne2.csv";
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
pub struct EncoderRecord {
    pub t: f64,
    pub s_app: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
pub struct FrameRecord {
    pub frame_id: usize,
    pub t: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
pub struct PixelRecord {
    pub frame_id: usize,
    pub side: crate::track_model::Side,
    pub px: f64,
    pub py: f64,
}

/// Quality bits of an output record.
pub mod quality {
    pub const OK: u32 = 0;
    /// Twist needs `base` metres of history.
    pub const NO_TWIST: u32 = 1;
    /// A profile fit stopped before meeting its tolerances.
    pub const FIT_NOT_CONVERGED: u32 = 2;
}

/// One row of the estimate or ground-truth CSV. Irregularities in metres,
/// twist in m/m; `tw` is NaN where unavailable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
pub struct OutputRecord {
    pub s: f64,
    pub al: f64,
    pub vp: f64,
    pub gv: f64,
    pub cl: f64,
    pub tw: f64,
    pub quality: u32,
}

/// Facts about a recorded run the estimator needs besides the streams.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct RunInfo {
    /// Track position at the first encoder reading (m).
    pub start_s: f64,
    #[serde(default)]
    pub seed: Option<u64>,
}

const RUN_HEADER: &str = "# Run description. start_s: track arc length at the first encoder reading (m)\n";

impl RunInfo {
    pub fn load(path: &Path) -> Result<Self> {
        read_toml(path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_toml(path, self, RUN_HEADER)
    }
}

/// Reproducibility record: file hashes plus the parameters used.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub files: Vec<FileHash>,
    pub parameters: toml::Table,
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    use sha2::{Digest, Sha256};
    let bytes = std::fs::read(path).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl Manifest {
    /// Hashes `files` (relative to `dir`) and records `parameters`.
    pub fn build(dir: &Path, command: &str, files: &[&str], parameters: toml::Table) -> Result<Self> {
        let files = files
            .iter()
            .map(|f| Ok(FileHash { path: f.to_string(), sha256: sha256_file(&dir.join(f))? }))
            .collect::<Result<Vec<_>>>()?;
        Ok(Manifest {
            tool: "railgauge".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            files,
            parameters,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_toml(path, self, "# Run manifest: inputs/outputs with SHA-256 hashes and parameters.\n")
    }
}

/// Serialises any parameter struct into a TOML table for a manifest.
pub fn to_table<T: Serialize>(value: &T) -> Result<toml::Table> {
    toml::Table::try_from(value).map_err(|e| Error::Input(e.to_string()))
}

/// Thread pool for the parallel stages, capped by `RAILGAUGE_THREADS`
/// when set.
pub fn thread_pool(max: Option<usize>) -> Result<rayon::ThreadPool> {
    let env = std::env::var("RAILGAUGE_THREADS").ok().and_then(|v| v.trim().parse::<usize>().ok());
    let n = match (max, env) {
        (Some(a), Some(b)) => a.min(b),
        (a, b) => a.or(b).unwrap_or(0),
    };
    rayon::ThreadPoolBuilder::new().num_threads(n).build().map_err(|e| Error::Numerical(format!("thread pool: {e}")))
}
