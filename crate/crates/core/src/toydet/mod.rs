//! A small two-stage BEV detector.
//!
//! Stage one encodes per-pillar point statistics, mixes a dilated
//! neighbourhood around every cell that holds above-ground returns and
//! regresses one anchor per cell. Stage two pools a rotated 7x7 grid of the
//! encoder features inside each proposal, and a refinement head turns the
//! fused RoI feature into box deltas and a confidence.

mod bev;
mod checkpoint;
mod detect;
mod head;
mod nms;
mod params;
mod refine;
mod roi;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Box3D;

pub use bev::{encode_bev, encode_stats, pillar_stats, BevGrid, PillarStats, STATS};
pub use checkpoint::{Checkpoint, EpochLoss, NamedTensor, CHECKPOINT_VERSION};
pub use detect::{detect, fused_features, infer, propose, refine_input, refine_proposals, Mode};
pub use head::{
    candidate_cells, decode_anchor, encode_target, focal_grad, focal_loss, smooth_l1, smooth_l1_grad,
    HeadTargets, SceneForward, ANCHOR_SIZE, ANCHOR_Z, HEAD_OUT,
};
pub use nms::nms;
pub use params::DetectorParams;
pub use refine::{apply_deltas, delta_targets, final_confidence, refine_loss, REFINE_OUT, REGRESS_IOU};
pub(crate) use roi::roi_backward;
pub use roi::{extract_box_feature, pool_box, RoiTrace, LOCAL_CH};

#[derive(Debug, Error)]
pub enum DetError {
    #[error("final mode needs one fused feature per proposal")]
    MissingFused,
    #[error("fused feature count {got} does not match {want} proposals")]
    FusedCount { got: usize, want: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Extent and resolution of the BEV grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub resolution: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            x_min: 0.0,
            x_max: 80.0,
            y_min: -40.0,
            y_max: 40.0,
            resolution: 0.5,
        }
    }
}

impl GridConfig {
    pub fn nx(&self) -> usize {
        ((self.x_max - self.x_min) / self.resolution).round() as usize
    }

    pub fn ny(&self) -> usize {
        ((self.y_max - self.y_min) / self.resolution).round() as usize
    }

    pub fn cells(&self) -> usize {
        self.nx() * self.ny()
    }

    /// Row-major cell index (`iy * nx + ix`) of a ground-plane point.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<usize> {
        let ix = ((x - self.x_min) / self.resolution).floor();
        let iy = ((y - self.y_min) / self.resolution).floor();
        if ix < 0.0 || iy < 0.0 || ix >= self.nx() as f64 || iy >= self.ny() as f64 {
            return None;
        }
        Some(iy as usize * self.nx() + ix as usize)
    }

    pub fn center(&self, cell: usize) -> (f64, f64) {
        let ix = cell % self.nx();
        let iy = cell / self.nx();
        (
            self.x_min + (ix as f64 + 0.5) * self.resolution,
            self.y_min + (iy as f64 + 0.5) * self.resolution,
        )
    }
}

/// Architecture descriptor. Two parameter sets built from equal configs
/// have identical shapes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorConfig {
    pub grid: GridConfig,
    /// Encoder channels `C`.
    pub channels: usize,
    /// Channels of the reduced map read by the dilated neighbourhood.
    pub reduced: usize,
    pub kernel: usize,
    pub dilation: usize,
    pub hidden: usize,
    /// RoI feature width `C_3D`.
    pub c3d: usize,
    pub roi_grid: usize,
    pub proj_hidden: usize,
    pub fuse_hidden: usize,
    pub refine_hidden: usize,
    pub k_max: usize,
    pub pre_nms: usize,
    /// Suppression threshold for stage-one proposals.
    pub nms_iou: f64,
    /// Suppression threshold after refinement.
    pub final_nms_iou: f64,
    pub train_threshold: f64,
    pub eval_threshold: f64,
    /// Use raw fusion logits as weights instead of their softmax.
    pub raw_fusion_weights: bool,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            grid: GridConfig::default(),
            channels: 32,
            reduced: 8,
            kernel: 5,
            dilation: 2,
            hidden: 48,
            c3d: 64,
            roi_grid: 7,
            proj_hidden: 64,
            fuse_hidden: 16,
            refine_hidden: 32,
            k_max: 128,
            pre_nms: 256,
            nms_iou: 0.5,
            final_nms_iou: 0.1,
            train_threshold: 0.3,
            eval_threshold: 0.1,
            raw_fusion_weights: false,
        }
    }
}

impl DetectorConfig {
    /// Width of the mixing layer input: neighbourhood, own features, position.
    pub fn mix_inputs(&self) -> usize {
        self.kernel * self.kernel * self.reduced + self.channels + 2
    }

    /// Width of the refinement input: fused feature, then the local layout.
    pub fn refine_inputs(&self) -> usize {
        self.c3d + self.roi_grid * self.roi_grid * LOCAL_CH
    }
}

/// One detected box. `logit` is the stage-one objectness the box came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection<T> {
    pub bbox: Box3D<f64>,
    pub confidence: f64,
    pub f3d: Vec<T>,
    /// Local layout feature of the RoI (see [`RoiTrace::local`]); empty until
    /// the RoI is pooled.
    pub local: Vec<T>,
    pub logit: f64,
}
