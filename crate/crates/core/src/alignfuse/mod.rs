//! Cross-modal feature alignment: IoU matching, image/text alignment
//! losses, teacher-student feature alignment, the projection heads that map
//! RoI features into the image and text spaces, and weighted fusion.

mod cosine;
mod heads;
mod losses;
mod matching;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::IouVariant;

pub use cosine::{cosine_grad, cosine_sim};
pub use heads::{
    fuse, fuse_backward, project_heads, project_heads_backward, FuseTrace, FuseWeights, FusionHead,
    ProjectionHeads, ProjectionTrace,
};
pub use losses::{
    image_align_loss, image_align_loss_grad, teacher_student_align_loss, teacher_student_align_loss_grad,
    text_align_loss, text_align_loss_grad,
};
pub use matching::{match_boxes, match_to_labels};

#[derive(Debug, Error, PartialEq)]
pub enum AlignError {
    #[error("image alignment needs at least one background feature")]
    NoBackground,
    #[error("record {0} has no image target")]
    MissingImageTarget(usize),
    #[error("record {0} has no text target")]
    MissingTextTarget(usize),
    #[error("invalid hyperparameter {name}: {value}")]
    InvalidHyper { name: &'static str, value: f64 },
}

/// Features of one prediction together with its (optional) oracle targets.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRecord<T> {
    pub f3d: Vec<T>,
    pub f_img: Vec<T>,
    pub f_text: Vec<T>,
    pub g_img: Option<Vec<T>>,
    pub g_text: Option<Vec<T>>,
}

/// Loss weights and thresholds of both training stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HyperParams {
    /// Text alignment weight.
    pub alpha: f64,
    /// Image alignment weight.
    pub beta: f64,
    /// Teacher-student alignment weight.
    pub gamma: f64,
    pub sigma_margin: f64,
    /// Prediction-to-label IoU threshold.
    pub mu: f64,
    /// Student-to-teacher IoU threshold.
    pub eta: f64,
    /// Image pseudo-label overlap ceiling.
    pub xi: f64,
    /// Image pseudo-label distance floor, meters.
    pub tau: f64,
    pub epsilon_ema: f64,
    pub n_bg: usize,
    pub lr: f64,
    pub epochs: usize,
    pub iou_variant: IouVariant,
    /// Draw background boxes once per frame instead of every step.
    pub cache_background: bool,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self::pretrain()
    }
}

impl HyperParams {
    pub fn pretrain() -> Self {
        Self {
            alpha: 0.3,
            beta: 0.3,
            gamma: 0.1,
            sigma_margin: 0.5,
            mu: 0.5,
            eta: 0.5,
            xi: 0.5,
            tau: 30.0,
            epsilon_ema: 0.999,
            n_bg: 8,
            lr: 1.5e-3,
            epochs: 30,
            iou_variant: IouVariant::Bev,
            cache_background: true,
        }
    }

    pub fn selftrain() -> Self {
        Self {
            alpha: 0.03,
            beta: 0.03,
            ..Self::pretrain()
        }
    }

    pub fn validate(&self) -> Result<(), AlignError> {
        let bad = |name, value| Err(AlignError::InvalidHyper { name, value });
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(name, v);
            }
        }
        for (name, v) in [("mu", self.mu), ("eta", self.eta), ("xi", self.xi)] {
            if !(0.0..=1.0).contains(&v) {
                return bad(name, v);
            }
        }
        if !(self.sigma_margin >= 0.0 && self.sigma_margin <= 2.0) {
            return bad("sigma_margin", self.sigma_margin);
        }
        if !(self.tau >= 0.0 && self.tau.is_finite()) {
            return bad("tau", self.tau);
        }
        if !(0.0..=1.0).contains(&self.epsilon_ema) {
            return bad("epsilon_ema", self.epsilon_ema);
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr", self.lr);
        }
        if self.n_bg == 0 {
            return bad("n_bg", 0.0);
        }
        Ok(())
    }
}
