//! Source pre-training with cross-modal alignment and target self-training
//! with a mean teacher, pseudo-label enhancement from lifted image boxes and
//! teacher-student feature alignment.

mod data;
mod optim;
mod step;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alignfuse::{AlignError, HyperParams};
use crate::geometry::{box_distance, Box3D, IouVariant};
use crate::scalar::Real;
use crate::synthworld::SynthError;
use crate::toydet::{infer, DetError, DetectorConfig, DetectorParams, PillarStats};

pub use data::{alignment_targets, background_features, lifted_labels, PreparedScene};
pub use optim::{Adam, OneCycle};
pub use step::{sample_extra_rois, scene_loss, scene_loss_with_proposals, AlignTarget, Objective, StepInput, StepLoss};
pub use train::{pretrain, pretrain_as, selftrain, selftrain_as, Trainer};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("no training scenes")]
    EmptyDataset,
    #[error("parameter shapes differ between teacher and student")]
    ShapeMismatch,
    #[error("checkpoint architecture does not match the training config: {0}")]
    Architecture(String),
    #[error("non-finite loss at epoch {epoch}, step {step}")]
    Diverged { epoch: usize, step: usize },
    #[error(transparent)]
    Detector(#[from] DetError),
    #[error(transparent)]
    Align(#[from] AlignError),
    #[error(transparent)]
    Synth(#[from] SynthError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Pretrain,
    Selftrain,
}

/// Component switches: image alignment, text alignment, image-lifted
/// pseudo labels and teacher-student alignment.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationFlags {
    pub ia: bool,
    pub ta: bool,
    pub cam: bool,
    pub sta: bool,
}

impl AblationFlags {
    pub const NONE: Self = Self {
        ia: false,
        ta: false,
        cam: false,
        sta: false,
    };
    pub const ALL: Self = Self {
        ia: true,
        ta: true,
        cam: true,
        sta: true,
    };

    pub fn new(ia: bool, ta: bool, cam: bool, sta: bool) -> Self {
        Self { ia, ta, cam, sta }
    }

    /// `IA+TA+CAM+STA` style label; `none` when all are off.
    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        for (on, name) in [(self.cam, "CAM"), (self.ia, "IA"), (self.ta, "TA"), (self.sta, "STA")] {
            if on {
                parts.push(name);
            }
        }
        if parts.is_empty() {
            "none".into()
        } else {
            parts.join("+")
        }
    }
}

/// Error model of the mock 2D detector feeding the lifted labels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Mock2dSettings {
    pub fp_rate: f64,
    pub noise_px: f64,
    pub miss_rate: f64,
}

impl Default for Mock2dSettings {
    fn default() -> Self {
        let d = crate::synthworld::Mock2dConfig::default();
        Self {
            fp_rate: d.fp_rate,
            noise_px: d.noise_px,
            miss_rate: d.miss_rate,
        }
    }
}

impl From<Mock2dSettings> for crate::synthworld::Mock2dConfig {
    fn from(s: Mock2dSettings) -> Self {
        Self {
            fp_rate: s.fp_rate,
            noise_px: s.noise_px,
            miss_rate: s.miss_rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub stage: Stage,
    pub hyper: HyperParams,
    pub seed: u64,
    /// Caps the scenes visited per epoch; all scenes when absent.
    #[serde(default)]
    pub steps_per_epoch: Option<usize>,
    /// Confidence floor of teacher pseudo labels.
    pub conf_threshold_pseudo: f64,
    /// Teacher detections between this floor and `conf_threshold_pseudo`
    /// are neither labels nor background.
    pub conf_threshold_ignore: f64,
    pub flags: AblationFlags,
    pub detector: DetectorConfig,
    /// Beam-resampling augmentation of the student input.
    pub augment: bool,
    pub grad_clip: f64,
    pub weight_decay: f64,
    /// Jittered label copies per label used as extra refinement RoIs.
    pub roi_copies: usize,
    /// Anchor boxes at random candidate cells used as extra refinement RoIs.
    pub roi_anchors: usize,
    pub mock2d: Mock2dSettings,
}

impl TrainConfig {
    pub fn pretrain(seed: u64) -> Self {
        Self {
            stage: Stage::Pretrain,
            hyper: HyperParams::pretrain(),
            seed,
            steps_per_epoch: None,
            conf_threshold_pseudo: 0.6,
            conf_threshold_ignore: 0.2,
            flags: AblationFlags::new(true, true, false, false),
            detector: DetectorConfig::default(),
            augment: true,
            grad_clip: 10.0,
            weight_decay: 0.01,
            roi_copies: 2,
            roi_anchors: 16,
            mock2d: Mock2dSettings::default(),
        }
    }

    pub fn selftrain(seed: u64) -> Self {
        Self {
            stage: Stage::Selftrain,
            hyper: HyperParams::selftrain(),
            flags: AblationFlags::ALL,
            ..Self::pretrain(seed)
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        self.hyper.validate()?;
        let bad = |name: &'static str, value: f64| Err(AlignError::InvalidHyper { name, value }.into());
        if !(0.0..=1.01).contains(&self.conf_threshold_pseudo) {
            return bad("conf_threshold_pseudo", self.conf_threshold_pseudo);
        }
        if !(0.0..=1.01).contains(&self.conf_threshold_ignore) {
            return bad("conf_threshold_ignore", self.conf_threshold_ignore);
        }
        if !(self.grad_clip > 0.0) {
            return bad("grad_clip", self.grad_clip);
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay", self.weight_decay);
        }
        Ok(())
    }

    pub fn objective(&self) -> Objective {
        let mut flags = self.flags;
        if self.stage == Stage::Pretrain {
            flags.cam = false;
            flags.sta = false;
        }
        Objective {
            hyper: self.hyper.clone(),
            flags,
        }
    }
}

/// `t <- eps * t + (1 - eps) * s` for every parameter.
pub fn ema_update<T: Real>(
    teacher: &DetectorParams<T>,
    student: &DetectorParams<T>,
    epsilon: f64,
) -> Result<DetectorParams<T>, TrainError> {
    let mut t = teacher.clone();
    ema_update_in_place(&mut t, student, epsilon)?;
    Ok(t)
}

pub fn ema_update_in_place<T: Real>(
    teacher: &mut DetectorParams<T>,
    student: &DetectorParams<T>,
    epsilon: f64,
) -> Result<(), TrainError> {
    if !teacher.same_shape(student) {
        return Err(TrainError::ShapeMismatch);
    }
    let e = T::lit(epsilon);
    let k = T::lit(1.0 - epsilon);
    for ((_, t), (_, _, s)) in teacher.tensors_mut().into_iter().zip(student.tensors()) {
        for (a, b) in t.iter_mut().zip(s) {
            *a = e * *a + k * *b;
        }
    }
    Ok(())
}

/// Final teacher detections at or above `conf_threshold`.
pub fn generate_teacher_labels<T: Real>(
    teacher: &DetectorParams<T>,
    stats: &PillarStats<T>,
    cfg: &DetectorConfig,
    conf_threshold: f64,
) -> Vec<(Box3D<f64>, f64)> {
    infer(stats, teacher, cfg, cfg.eval_threshold)
        .into_iter()
        .filter(|d| d.confidence >= conf_threshold)
        .map(|d| (d.bbox, d.confidence))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelSource {
    Teacher,
    Image,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabelSet {
    pub teacher_labels: Vec<Box3D<f64>>,
    pub image_labels: Vec<Box3D<f64>>,
    /// Indices into `image_labels` that passed the distance and overlap test.
    pub selected: Vec<usize>,
    pub merged: Vec<Box3D<f64>>,
    pub provenance: Vec<LabelSource>,
}

/// Keeps image-lifted boxes at least `tau` meters away whose best overlap
/// with any teacher box is at most `xi`, and appends them to the teacher
/// boxes.
pub fn merge_pseudo_labels(
    teacher: &[Box3D<f64>],
    image: &[Box3D<f64>],
    tau: f64,
    xi: f64,
    variant: IouVariant,
) -> PseudoLabelSet {
    let selected: Vec<usize> = image
        .iter()
        .enumerate()
        .filter(|(_, b)| {
            let max_iou = teacher.iter().map(|t| variant.iou(*b, t)).fold(0.0, f64::max);
            box_distance(*b) >= tau && max_iou <= xi
        })
        .map(|(i, _)| i)
        .collect();
    let mut merged = teacher.to_vec();
    let mut provenance = vec![LabelSource::Teacher; teacher.len()];
    for &i in &selected {
        merged.push(image[i]);
        provenance.push(LabelSource::Image);
    }
    PseudoLabelSet {
        teacher_labels: teacher.to_vec(),
        image_labels: image.to_vec(),
        selected,
        merged,
        provenance,
    }
}
