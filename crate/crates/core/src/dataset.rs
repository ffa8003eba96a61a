//! Directory datasets: a `meta.json` descriptor, one raw little-endian `f64`
//! file per observation in C order, and an optional `mask.bin` of 0/1 bytes.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Lattice, SearchSpace};

pub const META_FILE: &str = "meta.json";
pub const MASK_FILE: &str = "mask.bin";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: malformed meta descriptor: {source}")]
    Meta { path: PathBuf, source: serde_json::Error },
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error("{path}: {got} bytes, expected {expected} for dims {dims:?}")]
    FileLength { path: PathBuf, expected: usize, got: usize, dims: Vec<usize> },
    #[error("{path}: byte {index} is {value}, mask bytes must be 0 or 1")]
    MaskByte { path: PathBuf, index: usize, value: u8 },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Meta {
    pub dims: Vec<usize>,
    pub axes: Vec<String>,
    pub units: Vec<String>,
    pub dtype: String,
    pub order: String,
    pub n_obs: usize,
    pub files: Vec<String>,
    /// Coordinate of index 0 along each axis, in axis units.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<Vec<f64>>,
    /// Axis-unit spacing between neighbouring indices.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<Vec<f64>>,
}

impl Meta {
    pub fn n_values(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let bad = |msg: String| Err(DatasetError::Invalid(msg));
        if self.dims.is_empty() || self.dims.contains(&0) {
            return bad(format!("dims must be non-empty and positive, got {:?}", self.dims));
        }
        let nd = self.dims.len();
        if self.axes.len() != nd || self.units.len() != nd {
            return bad(format!("{nd} dims need {nd} axes and units, got {} and {}", self.axes.len(), self.units.len()));
        }
        if self.dtype != "f64le" {
            return bad(format!("dtype must be \"f64le\", got {:?}", self.dtype));
        }
        if self.order != "C" {
            return bad(format!("order must be \"C\", got {:?}", self.order));
        }
        if self.n_obs == 0 || self.files.len() != self.n_obs {
            return bad(format!("n_obs = {} but {} files listed", self.n_obs, self.files.len()));
        }
        for f in &self.files {
            let p = Path::new(f);
            if f.is_empty() || p.is_absolute() || p.components().count() != 1 || f == META_FILE || f == MASK_FILE {
                return bad(format!("observation file {f:?} must be a plain file name inside the dataset"));
            }
        }
        for (name, v) in [("origin", &self.origin), ("step", &self.step)] {
            if let Some(v) = v {
                if v.len() != nd || v.iter().any(|x| !x.is_finite()) {
                    return bad(format!("{name} must hold {nd} finite numbers"));
                }
            }
        }
        if self.step.as_ref().is_some_and(|s| s.contains(&0.0)) {
            return bad("step entries must be non-zero".into());
        }
        Ok(())
    }

    /// `(origin, step)` per axis, defaulting to index coordinates.
    pub fn axis_scale(&self) -> Vec<(f64, f64)> {
        (0..self.dims.len())
            .map(|a| {
                let o = self.origin.as_ref().map_or(0.0, |o| o[a]);
                let s = self.step.as_ref().map_or(1.0, |s| s[a]);
                (o, s)
            })
            .collect()
    }
}

/// An in-memory dataset whose observations all share the grid in `meta`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub meta: Meta,
    pub observations: Vec<Vec<f64>>,
    pub mask: Option<Vec<bool>>,
}

impl Dataset {
    /// Builds a dataset with files named `obs_0000.bin`, `obs_0001.bin`, ...
    pub fn new(
        dims: Vec<usize>,
        axes: Vec<String>,
        units: Vec<String>,
        observations: Vec<Vec<f64>>,
        mask: Option<Vec<bool>>,
    ) -> Result<Self, DatasetError> {
        let n_obs = observations.len();
        let meta = Meta {
            dims,
            axes,
            units,
            dtype: "f64le".into(),
            order: "C".into(),
            n_obs,
            files: (0..n_obs).map(|i| format!("obs_{i:04}.bin")).collect(),
            origin: None,
            step: None,
        };
        let ds = Self { meta, observations, mask };
        ds.validate()?;
        Ok(ds)
    }

    pub fn with_axis_scale(mut self, origin: Vec<f64>, step: Vec<f64>) -> Result<Self, DatasetError> {
        self.meta.origin = Some(origin);
        self.meta.step = Some(step);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        self.meta.validate()?;
        let n = self.meta.n_values();
        if self.observations.len() != self.meta.n_obs {
            return Err(DatasetError::Invalid(format!("{} observations for n_obs = {}", self.observations.len(), self.meta.n_obs)));
        }
        if let Some(i) = self.observations.iter().position(|o| o.len() != n) {
            return Err(DatasetError::Invalid(format!("observation {i} has {} values, expected {n}", self.observations[i].len())));
        }
        if let Some(m) = &self.mask {
            if m.len() != n {
                return Err(DatasetError::Invalid(format!("mask has {} entries, expected {n}", m.len())));
            }
        }
        Ok(())
    }

    pub fn dims(&self) -> &[usize] {
        &self.meta.dims
    }

    pub fn n_values(&self) -> usize {
        self.meta.n_values()
    }

    /// The mask, or all-true when none is stored.
    pub fn mask_or_full(&self) -> Vec<bool> {
        self.mask.clone().unwrap_or_else(|| vec![true; self.n_values()])
    }

    /// Lattice search space over the dataset grid and mask.
    pub fn lattice(&self) -> Result<SearchSpace, crate::domain::DomainError> {
        let lattice = Lattice::new(&self.meta.dims, self.mask_or_full())?.with_axes(self.meta.axes.clone(), self.meta.units.clone())?;
        Ok(SearchSpace::from(lattice))
    }

    pub fn read(dir: impl AsRef<Path>) -> Result<Self, DatasetError> {
        let dir = dir.as_ref();
        let meta_path = dir.join(META_FILE);
        let text = fs::read_to_string(&meta_path).map_err(io_err(&meta_path))?;
        let meta: Meta = serde_json::from_str(&text).map_err(|source| DatasetError::Meta { path: meta_path.clone(), source })?;
        meta.validate()?;
        let n = meta.n_values();
        let mut observations = Vec::with_capacity(meta.n_obs);
        for f in &meta.files {
            let path = dir.join(f);
            let bytes = fs::read(&path).map_err(io_err(&path))?;
            if bytes.len() != 8 * n {
                return Err(DatasetError::FileLength { path, expected: 8 * n, got: bytes.len(), dims: meta.dims.clone() });
            }
            observations.push(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8"))).collect());
        }
        let mask_path = dir.join(MASK_FILE);
        let mask = if mask_path.exists() {
            let bytes = fs::read(&mask_path).map_err(io_err(&mask_path))?;
            if bytes.len() != n {
                return Err(DatasetError::FileLength { path: mask_path, expected: n, got: bytes.len(), dims: meta.dims.clone() });
            }
            if let Some(index) = bytes.iter().position(|&b| b > 1) {
                return Err(DatasetError::MaskByte { path: mask_path, index, value: bytes[index] });
            }
            Some(bytes.iter().map(|&b| b == 1).collect())
        } else {
            None
        };
        Ok(Self { meta, observations, mask })
    }

    /// Writes the dataset into `dir`, creating it if needed. Existing files
    /// with the same names are replaced.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<(), DatasetError> {
        self.validate()?;
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        for (name, obs) in self.meta.files.iter().zip(&self.observations) {
            let path = dir.join(name);
            let bytes: Vec<u8> = obs.iter().flat_map(|v| v.to_le_bytes()).collect();
            fs::write(&path, bytes).map_err(io_err(&path))?;
        }
        let mask_path = dir.join(MASK_FILE);
        if let Some(m) = &self.mask {
            fs::write(&mask_path, m.iter().map(|&b| u8::from(b)).collect::<Vec<_>>()).map_err(io_err(&mask_path))?;
        }
        let meta_path = dir.join(META_FILE);
        let text = serde_json::to_string_pretty(&self.meta).expect("meta serializes");
        fs::write(&meta_path, text + "\n").map_err(io_err(&meta_path))?;
        Ok(())
    }
}
