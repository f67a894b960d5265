//! KITTI-style average precision over 40 recall positions, range-bucketed
//! AP and the closed-gap ratio.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{box_distance, Box3D, IouVariant};
use crate::toydet::Detection;

pub const RECALL_POSITIONS: usize = 40;
pub const DEFAULT_IOU: f64 = 0.7;
pub const DEFAULT_BUCKETS: [f64; 4] = [0.0, 30.0, 60.0, 150.0];
pub const CSV_HEADER: &str = "run,bucket,ap_bev,ap_3d,n_gt,n_det,iou_threshold";

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("closed gap undefined: oracle AP equals source AP ({0})")]
    DegenerateGap(f64),
    #[error("bucket edges must be strictly increasing and at least two: {0:?}")]
    BadBuckets(Vec<f64>),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Detections and ground truth of one frame.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Frame {
    pub dets: Vec<(Box3D<f64>, f64)>,
    pub gts: Vec<Box3D<f64>>,
}

impl Frame {
    pub fn new<T>(dets: &[Detection<T>], gts: &[Box3D<f64>]) -> Self {
        Self {
            dets: dets.iter().map(|d| (d.bbox, d.confidence)).collect(),
            gts: gts.to_vec(),
        }
    }
}

/// Sorts detections by descending confidence, equal confidences in input
/// order.
fn order(dets: &[(Box3D<f64>, f64)]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..dets.len()).collect();
    idx.sort_by(|&a, &b| dets[b].1.total_cmp(&dets[a].1));
    idx
}

/// Greedy matching in descending confidence: each detection takes the
/// unmatched ground truth of highest IoU (lower index on ties) if it reaches
/// `iou_thresh`. Returns a true-positive flag per detection.
pub fn greedy_match(dets: &[(Box3D<f64>, f64)], gts: &[Box3D<f64>], iou_thresh: f64, mode: IouVariant) -> Vec<bool> {
    let mut used = vec![false; gts.len()];
    let mut tp = vec![false; dets.len()];
    for i in order(dets) {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if used[g] {
                continue;
            }
            let iou = mode.iou(&dets[i].0, gt);
            if iou >= iou_thresh && best.map_or(true, |(_, b)| iou > b) {
                best = Some((g, iou));
            }
        }
        if let Some((g, _)) = best {
            used[g] = true;
            tp[i] = true;
        }
    }
    tp
}

/// Interpolated 40-point AP (percent) from `(confidence, true positive)`
/// pairs. Precision/recall points are taken at every distinct confidence.
pub fn ap_from_scores(scored: &mut [(f64, bool)], n_gt: usize) -> f64 {
    if n_gt == 0 {
        return 0.0;
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut points: Vec<(f64, f64)> = Vec::new();
    let (mut tp, mut n) = (0usize, 0usize);
    let mut i = 0;
    while i < scored.len() {
        let c = scored[i].0;
        while i < scored.len() && scored[i].0 == c {
            tp += usize::from(scored[i].1);
            n += 1;
            i += 1;
        }
        points.push((tp as f64 / n_gt as f64, tp as f64 / n as f64));
    }
    let mut sum = 0.0;
    for k in 1..=RECALL_POSITIONS {
        let r = k as f64 / RECALL_POSITIONS as f64;
        let p = points
            .iter()
            .filter(|(rec, _)| *rec >= r - 1e-12)
            .map(|(_, p)| *p)
            .fold(0.0, f64::max);
        sum += p;
    }
    100.0 * sum / RECALL_POSITIONS as f64
}

/// AP (percent) over a set of frames; matching is per frame.
pub fn dataset_ap(frames: &[Frame], iou_thresh: f64, mode: IouVariant) -> f64 {
    let n_gt: usize = frames.iter().map(|f| f.gts.len()).sum();
    if n_gt == 0 {
        log::warn!("average precision over zero ground-truth boxes taken as 0");
        return 0.0;
    }
    let mut scored = Vec::new();
    for f in frames {
        let tp = greedy_match(&f.dets, &f.gts, iou_thresh, mode);
        scored.extend(f.dets.iter().zip(tp).map(|(d, t)| (d.1, t)));
    }
    ap_from_scores(&mut scored, n_gt)
}

/// AP (percent) of one frame's detections.
pub fn average_precision<T>(dets: &[Detection<T>], gts: &[Box3D<f64>], iou_thresh: f64, mode: IouVariant) -> f64 {
    dataset_ap(&[Frame::new(dets, gts)], iou_thresh, mode)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketAp {
    pub lo: f64,
    pub hi: f64,
    pub ap_bev: f64,
    pub ap_3d: f64,
    pub n_gt: usize,
    pub n_det: usize,
}

impl BucketAp {
    pub fn label(&self) -> String {
        format!("{}-{}m", self.lo, self.hi)
    }
}

fn check_buckets(edges: &[f64]) -> Result<(), EvalError> {
    if edges.len() < 2 || edges.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(EvalError::BadBuckets(edges.to_vec()));
    }
    Ok(())
}

/// AP per distance bucket `[edges[i], edges[i+1])`. Ground truth and
/// detections are assigned by their own distance to the sensor; a
/// detection of an object in another bucket is a false positive in its own.
pub fn range_bucketed_ap(frames: &[Frame], edges: &[f64], iou_thresh: f64) -> Result<Vec<BucketAp>, EvalError> {
    check_buckets(edges)?;
    let mut out = Vec::new();
    for w in edges.windows(2) {
        let inside = |b: &Box3D<f64>| {
            let d = box_distance(b);
            d >= w[0] && d < w[1]
        };
        let sub: Vec<Frame> = frames
            .iter()
            .map(|f| Frame {
                dets: f.dets.iter().filter(|d| inside(&d.0)).cloned().collect(),
                gts: f.gts.iter().filter(|g| inside(g)).cloned().collect(),
            })
            .collect();
        let n_gt = sub.iter().map(|f| f.gts.len()).sum();
        let n_det = sub.iter().map(|f| f.dets.len()).sum();
        if n_gt == 0 {
            log::warn!("range bucket {}-{} m holds no ground truth; AP reported as 0", w[0], w[1]);
        }
        out.push(BucketAp {
            lo: w[0],
            hi: w[1],
            ap_bev: dataset_ap(&sub, iou_thresh, IouVariant::Bev),
            ap_3d: dataset_ap(&sub, iou_thresh, IouVariant::ThreeD),
            n_gt,
            n_det,
        });
    }
    Ok(out)
}

/// `(model - source) / (oracle - source) * 100`, sign preserved.
pub fn closed_gap(ap_model: f64, ap_source: f64, ap_oracle: f64) -> Result<f64, EvalError> {
    let den = ap_oracle - ap_source;
    if den == 0.0 {
        return Err(EvalError::DegenerateGap(ap_source));
    }
    Ok((ap_model - ap_source) / den * 100.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub ap_bev: f64,
    pub ap_3d: f64,
    pub per_range: Vec<BucketAp>,
    pub n_gt: usize,
    pub n_det: usize,
    pub iou_threshold: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub closed_gap_bev: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub closed_gap_3d: Option<f64>,
}

pub fn evaluate(frames: &[Frame], iou_thresh: f64, edges: &[f64]) -> Result<EvalResult, EvalError> {
    Ok(EvalResult {
        ap_bev: dataset_ap(frames, iou_thresh, IouVariant::Bev),
        ap_3d: dataset_ap(frames, iou_thresh, IouVariant::ThreeD),
        per_range: range_bucketed_ap(frames, edges, iou_thresh)?,
        n_gt: frames.iter().map(|f| f.gts.len()).sum(),
        n_det: frames.iter().map(|f| f.dets.len()).sum(),
        iou_threshold: iou_thresh,
        closed_gap_bev: None,
        closed_gap_3d: None,
    })
}

impl EvalResult {
    /// Flat key-value view: global metrics plus `<bucket>_ap_bev` style keys.
    pub fn flat(&self) -> serde_json::Map<String, serde_json::Value> {
        let mut m = serde_json::Map::new();
        m.insert("ap_bev".into(), self.ap_bev.into());
        m.insert("ap_3d".into(), self.ap_3d.into());
        m.insert("n_gt".into(), self.n_gt.into());
        m.insert("n_det".into(), self.n_det.into());
        m.insert("iou_threshold".into(), self.iou_threshold.into());
        if let Some(g) = self.closed_gap_bev {
            m.insert("closed_gap_bev".into(), g.into());
        }
        if let Some(g) = self.closed_gap_3d {
            m.insert("closed_gap_3d".into(), g.into());
        }
        for b in &self.per_range {
            m.insert(format!("{}_ap_bev", b.label()), b.ap_bev.into());
            m.insert(format!("{}_ap_3d", b.label()), b.ap_3d.into());
            m.insert(format!("{}_n_gt", b.label()), b.n_gt.into());
        }
        m
    }

    pub fn write_json(&self, path: &Path) -> Result<(), EvalError> {
        let mut s = serde_json::to_string_pretty(&serde_json::Value::Object(self.flat()))?;
        s.push('\n');
        std::fs::write(path, s)?;
        Ok(())
    }

    /// Rows under [`CSV_HEADER`]: one `all` row and one per bucket.
    pub fn csv_rows(&self, run: &str) -> Vec<String> {
        let mut rows = vec![format!(
            "{run},all,{:.4},{:.4},{},{},{}",
            self.ap_bev, self.ap_3d, self.n_gt, self.n_det, self.iou_threshold
        )];
        for b in &self.per_range {
            rows.push(format!(
                "{run},{},{:.4},{:.4},{},{},{}",
                b.label(),
                b.ap_bev,
                b.ap_3d,
                b.n_gt,
                b.n_det,
                self.iou_threshold
            ));
        }
        rows
    }

    /// Appends to a results CSV, writing the header if the file is new.
    pub fn append_csv(&self, path: &Path, run: &str) -> Result<(), EvalError> {
        let fresh = !path.exists();
        let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
        if fresh {
            writeln!(f, "{CSV_HEADER}")?;
        }
        for r in self.csv_rows(run) {
            writeln!(f, "{r}")?;
        }
        Ok(())
    }
}

/// Final detections of `params` on every scene paired with its labels.
pub fn detector_frames<T: crate::scalar::Real>(
    params: &crate::toydet::DetectorParams<T>,
    scenes: &[crate::synthworld::Scene],
    cfg: &crate::toydet::DetectorConfig,
) -> Vec<Frame> {
    scenes
        .iter()
        .map(|s| {
            let stats = crate::toydet::pillar_stats(&s.points, &cfg.grid);
            let dets = crate::toydet::infer(&stats, params, cfg, cfg.eval_threshold);
            Frame::new(&dets, &s.labels())
        })
        .collect()
}
