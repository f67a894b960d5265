use super::roi::extract_box_feature;
use super::{
    final_confidence, nms, pillar_stats, apply_deltas, DetError, Detection, DetectorConfig, DetectorParams,
    PillarStats, SceneForward,
};
use crate::alignfuse::{fuse, project_heads, FuseWeights};
use crate::scalar::Real;
use crate::synthworld::LidarPoint;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Stage-one boxes with RoI features attached.
    Proposals,
    /// Refined boxes from caller-supplied fused features.
    Final,
}

impl DetectorConfig {
    pub fn fuse_weights(&self) -> FuseWeights {
        if self.raw_fusion_weights {
            FuseWeights::Raw
        } else {
            FuseWeights::Softmax
        }
    }
}

/// Stage-one proposals at `threshold` with their RoI features.
pub fn propose<T: Real>(
    stats: &PillarStats<T>,
    params: &DetectorParams<T>,
    cfg: &DetectorConfig,
    threshold: f64,
) -> Vec<Detection<T>> {
    let fwd = SceneForward::run(stats, params, cfg);
    let mut props = fwd.proposals(threshold, cfg);
    for p in props.iter_mut() {
        let t = extract_box_feature(&fwd.grid, &p.bbox, params, cfg.roi_grid);
        p.f3d = t.f3d;
        p.local = t.local;
    }
    props
}

/// Runs the refinement head on one fused feature per proposal and applies a
/// final suppression pass.
pub fn refine_proposals<T: Real>(
    proposals: &[Detection<T>],
    fused: &[Vec<T>],
    params: &DetectorParams<T>,
    cfg: &DetectorConfig,
) -> Result<Vec<Detection<T>>, DetError> {
    if fused.len() != proposals.len() {
        return Err(DetError::FusedCount {
            got: fused.len(),
            want: proposals.len(),
        });
    }
    let refined: Vec<Detection<T>> = proposals
        .iter()
        .zip(fused)
        .map(|(p, f)| {
            let o: Vec<f64> = params
                .refine
                .forward(&refine_input(f, &p.local, cfg), false)
                .out
                .iter()
                .map(|v| v.as_f64())
                .collect();
            Detection {
                bbox: apply_deltas(&p.bbox, &o[1..]),
                confidence: final_confidence(p.confidence, o[0]),
                f3d: p.f3d.clone(),
                local: p.local.clone(),
                logit: p.logit,
            }
        })
        .collect();
    Ok(nms(&refined, cfg.final_nms_iou))
}

/// Fused feature followed by the local layout feature; a proposal without a
/// pooled layout reads zeros there.
pub fn refine_input<T: Real>(fused: &[T], local: &[T], cfg: &DetectorConfig) -> Vec<T> {
    let mut x = Vec::with_capacity(cfg.refine_inputs());
    x.extend_from_slice(fused);
    x.extend_from_slice(local);
    x.resize(cfg.refine_inputs(), T::zero());
    x
}

/// Fused features of proposals under the model's own projection and fusion
/// heads.
pub fn fused_features<T: Real>(proposals: &[Detection<T>], params: &DetectorParams<T>, cfg: &DetectorConfig) -> Vec<Vec<T>> {
    proposals
        .iter()
        .map(|p| {
            let pr = project_heads(&p.f3d, &params.project, false);
            fuse(&p.f3d, pr.f_img(), pr.f_text(), &params.fusion, cfg.fuse_weights()).out
        })
        .collect()
}

/// Stage one in `Proposals` mode; refinement of the supplied fused
/// features in `Final` mode. Uses the evaluation threshold.
pub fn detect<T: Real>(
    points: &[LidarPoint],
    params: &DetectorParams<T>,
    cfg: &DetectorConfig,
    mode: Mode,
    fused: Option<&[Vec<T>]>,
) -> Result<Vec<Detection<T>>, DetError> {
    let stats = pillar_stats(points, &cfg.grid);
    let props = propose(&stats, params, cfg, cfg.eval_threshold);
    match mode {
        Mode::Proposals => Ok(props),
        Mode::Final => {
            let fused = fused.ok_or(DetError::MissingFused)?;
            refine_proposals(&props, fused, params, cfg)
        }
    }
}

/// Full pipeline: proposals, projection, fusion and refinement.
pub fn infer<T: Real>(
    stats: &PillarStats<T>,
    params: &DetectorParams<T>,
    cfg: &DetectorConfig,
    threshold: f64,
) -> Vec<Detection<T>> {
    let props = propose(stats, params, cfg, threshold);
    let fused = fused_features(&props, params, cfg);
    refine_proposals(&props, &fused, params, cfg).expect("one fused feature per proposal")
}
