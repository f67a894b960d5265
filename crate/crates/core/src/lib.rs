//! Multi-modal-assisted domain adaptation for a toy LiDAR 3D detector:
//! synthetic source/target worlds with image and text oracles, a two-stage
//! BEV detector, cross-modal feature alignment and fusion, teacher-student
//! self-training and KITTI-style evaluation.

pub mod ablation;
pub mod alignfuse;
pub mod evalkit;
pub mod geometry;
pub mod nn;
pub mod scalar;
pub mod selftrain;
pub mod synthworld;
pub mod toydet;

pub use scalar::Real;

/// Boxes and geometry run in double precision throughout.
pub type Box3Df = geometry::Box3D<f64>;
/// Single-precision parameters, the width used for training.
pub type DetectorParamsF32 = toydet::DetectorParams<f32>;
/// Double-precision parameters, the width used by gradient checks.
pub type DetectorParamsF64 = toydet::DetectorParams<f64>;
pub type DetectionF32 = toydet::Detection<f32>;
pub type DetectionF64 = toydet::Detection<f64>;
pub type TrainerF32 = selftrain::Trainer<f32>;
