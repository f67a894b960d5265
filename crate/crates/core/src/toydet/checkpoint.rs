//! Versioned JSON container of named parameter arrays.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DetError, DetectorConfig, DetectorParams};
use crate::scalar::Real;

pub const CHECKPOINT_VERSION: u32 = 1;
const FORMAT: &str = "uda3d-checkpoint";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Mean loss terms of one training epoch. `det` is the sum of the three
/// detection terms; `total` is the weighted objective actually minimized.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub stage: String,
    pub epoch: usize,
    pub steps: usize,
    pub lr: f64,
    pub det_cls: f64,
    pub det_reg: f64,
    pub det_refine: f64,
    pub det: f64,
    pub text: f64,
    pub img: f64,
    pub st: f64,
    pub total: f64,
    /// Mean pseudo labels per scene (self-training only).
    pub pseudo_labels: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub arch: DetectorConfig,
    pub step: u64,
    pub tensors: Vec<NamedTensor>,
    pub history: Vec<EpochLoss>,
}

impl Checkpoint {
    pub fn from_params<T: Real>(arch: &DetectorConfig, params: &DetectorParams<T>, step: u64, history: Vec<EpochLoss>) -> Self {
        let tensors = params
            .tensors()
            .into_iter()
            .map(|(name, shape, data)| NamedTensor {
                name,
                shape,
                data: data.iter().map(|v| v.as_f64()).collect(),
            })
            .collect();
        Self {
            format: FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            arch: arch.clone(),
            step,
            tensors,
            history,
        }
    }

    /// Rebuilds the parameters, checking every name and shape against the
    /// stored architecture.
    pub fn to_params<T: Real>(&self) -> Result<DetectorParams<T>, DetError> {
        if self.format != FORMAT {
            return Err(DetError::Checkpoint(format!("unknown format {:?}", self.format)));
        }
        if self.version != CHECKPOINT_VERSION {
            return Err(DetError::Checkpoint(format!("unsupported version {}", self.version)));
        }
        let mut params = DetectorParams::<T>::new(&self.arch, 0);
        let shapes = params.shapes();
        if shapes.len() != self.tensors.len() {
            return Err(DetError::Checkpoint(format!(
                "expected {} tensors, found {}",
                shapes.len(),
                self.tensors.len()
            )));
        }
        for ((name, shape), t) in shapes.iter().zip(&self.tensors) {
            if *name != t.name || *shape != t.shape || t.data.len() != shape.iter().product::<usize>() {
                return Err(DetError::Checkpoint(format!(
                    "tensor {} {:?} does not match architecture ({} {:?})",
                    t.name, t.shape, name, shape
                )));
            }
            if t.data.iter().any(|v| !v.is_finite()) {
                return Err(DetError::Checkpoint(format!("tensor {} has non-finite values", t.name)));
            }
        }
        for ((_, arr), t) in params.tensors_mut().into_iter().zip(&self.tensors) {
            for (x, v) in arr.iter_mut().zip(&t.data) {
                *x = T::lit(*v);
            }
        }
        Ok(params)
    }

    pub fn save(&self, path: &Path) -> Result<(), DetError> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(f, self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, DetError> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        Ok(serde_json::from_reader(f)?)
    }
}
