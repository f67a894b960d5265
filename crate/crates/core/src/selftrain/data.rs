//! Per-scene inputs that do not change during training: pillar statistics
//! of each input view, oracle features and image-lifted boxes.

use super::step::AlignTarget;
use super::{TrainConfig, TrainError};
use crate::geometry::{iou_bev, project_box, select_camera_view, Box3D};
use crate::scalar::Real;
use crate::synthworld::{
    background_feature_oracle, beam_resample, hash_seed, image_feature_oracle, lift_2d_to_3d, mock_2d_detector,
    region_object, sample_background_boxes, text_description_oracle, text_feature_oracle, Mock2dConfig, Scene,
};
use crate::toydet::{pillar_stats, PillarStats};

/// Cached training inputs of one scene.
#[derive(Debug, Clone)]
pub struct PreparedScene<T> {
    /// `views[0]` is the native sweep; later entries are beam-resampled.
    pub views: Vec<PillarStats<T>>,
    pub bg: Vec<Vec<T>>,
    /// 3D boxes lifted from mock 2D detections (self-training only).
    pub lifted: Vec<Box3D<f64>>,
}

impl<T: Real> PreparedScene<T> {
    pub fn new(scene: &Scene, cfg: &TrainConfig, with_lifted: bool) -> Result<Self, TrainError> {
        let grid = &cfg.detector.grid;
        let mut views = vec![pillar_stats(&scene.points, grid)];
        if cfg.augment {
            let b = scene.beam_count;
            let other = if b >= 64 { b / 2 } else { b * 2 };
            views.push(pillar_stats(&beam_resample(&scene.points, b, other)?, grid));
        }
        let bg = background_features(scene, cfg.hyper.n_bg, hash_seed(&[cfg.seed, scene.rng_seed, 0xb9]))
            .into_iter()
            .map(|v| v.into_iter().map(T::lit).collect())
            .collect();
        let lifted = if with_lifted {
            lifted_labels(scene, &cfg.mock2d.into(), cfg.seed)
        } else {
            Vec::new()
        };
        Ok(Self { views, bg, lifted })
    }
}

/// `n` background features drawn round-robin over the cameras from image
/// regions that touch no labeled object.
pub fn background_features(scene: &Scene, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let cams = &scene.cameras;
    if cams.is_empty() {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let cam = &cams[i % cams.len()];
        let gt: Vec<_> = scene.objects.iter().filter_map(|o| project_box(&o.bbox, cam)).collect();
        let s = hash_seed(&[seed, i as u64]);
        if let Some(b) = sample_background_boxes(&gt, cam, 1, s).first() {
            out.push(background_feature_oracle(b, s));
        }
    }
    out
}

/// Image and text targets for each label through its least-truncated
/// camera view. Ground-truth labels (`known_objects`) use their own object;
/// other boxes use the object whose projection overlaps theirs with 2D IoU
/// at least 0.5, and get no target otherwise.
pub fn alignment_targets<T: Real>(
    scene: &Scene,
    labels: &[Box3D<f64>],
    known_objects: bool,
) -> Vec<Option<AlignTarget<T>>> {
    labels
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let (_, view) = select_camera_view(b, &scene.cameras).ok().flatten()?;
            let obj = if known_objects {
                scene.objects.get(i)?
            } else {
                &scene.objects[region_object(scene, &view, 0.5)?.0]
            };
            let noise_seed = hash_seed(&[scene.rng_seed, view.camera_id as u64, obj.object_id as u64]);
            let g_img = image_feature_oracle(&view, obj, noise_seed);
            let g_text = text_feature_oracle(&text_description_oracle(obj, &view).ok()?).ok()?;
            Some(AlignTarget {
                g_img: g_img.into_iter().map(T::lit).collect(),
                g_text: g_text.into_iter().map(T::lit).collect(),
            })
        })
        .collect()
}

/// Mock 2D detections of every camera lifted to 3D boxes.
pub fn lifted_labels(scene: &Scene, mock: &Mock2dConfig, seed: u64) -> Vec<Box3D<f64>> {
    let mut out = Vec::new();
    for cam in &scene.cameras {
        for b in mock_2d_detector(scene, cam, mock, seed) {
            if let Some(l) = lift_2d_to_3d(&b, &scene.points, cam) {
                // overlapping camera views can lift the same car twice
                if out.iter().all(|o| iou_bev(o, &l) <= 0.5) {
                    out.push(l);
                }
            }
        }
    }
    out
}
