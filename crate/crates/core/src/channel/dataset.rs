//! Binary channel dataset files.
//!
//! Layout: `b"WBCH"`, `u32` version, five `u32` dims `(M, K, N_R, N_T, count)`,
//! then little-endian `f64` pairs `(re, im)` in `(sample, m, k·N_R + r, n)`
//! order. The scenario snapshot and split tag live in a `<path>.cfg` sidecar
//! in the flat key-value format.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use num_complex::Complex64;
use thiserror::Error;

use super::{ChannelTensor, ScenarioConfig};
use crate::config::{ConfigError, KeyValues};
use crate::report::write_atomic;

pub const DATASET_MAGIC: &[u8; 4] = b"WBCH";
pub const DATASET_VERSION: u32 = 1;
const HEADER_BYTES: usize = 4 + 4 + 5 * 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Split {
    Train,
    Test,
    #[default]
    Unspecified,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
            Split::Unspecified => "unspecified",
        })
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            "unspecified" => Ok(Split::Unspecified),
            _ => Err(format!("unknown split {s:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub config: Option<ScenarioConfig>,
    pub split: Split,
    pub samples: Vec<ChannelTensor>,
}

impl Dataset {
    pub fn new(config: ScenarioConfig, split: Split, samples: Vec<ChannelTensor>) -> Self {
        Self { config: Some(config), split, samples }
    }

    pub fn dims(&self) -> Option<(usize, usize, usize, usize)> {
        self.samples.first().map(ChannelTensor::dims)
    }
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("dataset io on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("not a channel dataset (bad magic)")]
    Magic,
    #[error("unsupported dataset version {0}")]
    Version(u32),
    #[error("header promises {expected} payload bytes, file has {actual}")]
    Size { expected: usize, actual: usize },
    #[error("dataset is empty")]
    Empty,
    #[error("sample {0} has different dimensions")]
    Ragged(usize),
    #[error("non-finite channel entry in sample {0}")]
    NonFinite(usize),
    #[error("sidecar config: {0}")]
    Config(#[from] ConfigError),
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".cfg");
    PathBuf::from(s)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io { path: path.display().to_string(), source }
}

pub fn write_dataset(path: impl AsRef<Path>, ds: &Dataset) -> Result<(), DatasetError> {
    let path = path.as_ref();
    let (m, k, n_r, n_t) = ds.dims().ok_or(DatasetError::Empty)?;
    for (i, s) in ds.samples.iter().enumerate() {
        if s.dims() != (m, k, n_r, n_t) {
            return Err(DatasetError::Ragged(i));
        }
        if s.data.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(DatasetError::NonFinite(i));
        }
    }
    let per = m * k * n_r * n_t;
    let mut buf = Vec::with_capacity(HEADER_BYTES + ds.samples.len() * per * 16);
    buf.extend_from_slice(DATASET_MAGIC);
    buf.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    for d in [m, k, n_r, n_t, ds.samples.len()] {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for s in &ds.samples {
        for c in &s.data {
            buf.extend_from_slice(&c.re.to_le_bytes());
            buf.extend_from_slice(&c.im.to_le_bytes());
        }
    }
    write_atomic(path, &buf).map_err(io_err(path))?;

    let side = sidecar(path);
    let mut text = format!("split = {}\n", ds.split);
    if let Some(cfg) = &ds.config {
        text.push_str(&cfg.to_kv());
    }
    write_atomic(&side, text.as_bytes()).map_err(io_err(&side))?;
    Ok(())
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset, DatasetError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(io_err(path))?;
    if bytes.len() < HEADER_BYTES || &bytes[..4] != DATASET_MAGIC {
        return Err(if bytes.len() >= 4 && &bytes[..4] != DATASET_MAGIC {
            DatasetError::Magic
        } else {
            DatasetError::Size { expected: HEADER_BYTES, actual: bytes.len() }
        });
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    let version = word(0);
    if version != DATASET_VERSION {
        return Err(DatasetError::Version(version));
    }
    let [m, k, n_r, n_t, count] = [1, 2, 3, 4, 5].map(|i| word(i) as usize);
    let per = m * k * n_r * n_t;
    let expected = count
        .checked_mul(per)
        .and_then(|v| v.checked_mul(16))
        .unwrap_or(usize::MAX);
    let actual = bytes.len() - HEADER_BYTES;
    if expected != actual {
        return Err(DatasetError::Size { expected, actual });
    }
    if count == 0 || per == 0 {
        return Err(DatasetError::Empty);
    }

    let payload = &bytes[HEADER_BYTES..];
    let f = |o: usize| f64::from_le_bytes(payload[o..o + 8].try_into().unwrap());
    let mut samples = Vec::with_capacity(count);
    for s in 0..count {
        let base = s * per * 16;
        let data: Vec<Complex64> = (0..per).map(|i| Complex64::new(f(base + 16 * i), f(base + 16 * i + 8))).collect();
        if data.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(DatasetError::NonFinite(s));
        }
        samples.push(ChannelTensor { m, k, n_r, n_t, data });
    }

    let side = sidecar(path);
    let (config, split) = if side.exists() {
        let mut kv = KeyValues::read(&side)?;
        let mut split = Split::Unspecified;
        kv.take("split", &mut split)?;
        (Some(ScenarioConfig::from_kv(kv)?), split)
    } else {
        (None, Split::Unspecified)
    };
    Ok(Dataset { config, split, samples })
}
