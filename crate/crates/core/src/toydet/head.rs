//! Neighbourhood mixing, the per-cell anchor head and its loss.

use super::bev::{encoder_backward, NON_GROUND_Z};
use super::{encode_stats, nms, BevGrid, DetectorConfig, DetectorParams, Detection, PillarStats};
use crate::geometry::{normalize_angle, Box3D};
use crate::nn::{relu_backward, relu_inplace, sigmoid};
use crate::scalar::Real;

/// Objectness logit, then `dx, dy, dz, log l, log w, log h, cos 2θ, sin 2θ`.
pub const HEAD_OUT: usize = 9;
/// Anchor `(l, w, h)`.
pub const ANCHOR_SIZE: [f64; 3] = [4.5, 1.85, 1.6];
/// Anchor center height.
pub const ANCHOR_Z: f64 = 0.8;
const FOCAL_ALPHA: f64 = 0.25;
const FOCAL_GAMMA: f64 = 2.0;
const SMOOTH_L1_BETA: f64 = 1.0 / 9.0;
const REG_WEIGHT: f64 = 2.0;
/// Cells whose centers fall within this margin of a box footprint may be
/// positives; cells further than `NEG_MARGIN` from every box are negatives.
const POS_MARGIN: f64 = 0.25;
const NEG_MARGIN: f64 = 0.75;
/// Positive cells lie within this distance of a box center.
const POS_RADIUS: f64 = 0.5;
const MAX_LOG_SCALE: f64 = 3.0;

/// Cells with an above-ground return, grown by one cell in every direction.
pub fn candidate_cells<T: Real>(stats: &PillarStats<T>) -> Vec<u32> {
    let nx = stats.grid.nx() as isize;
    let ny = stats.grid.ny() as isize;
    let mut mark = vec![false; stats.grid.cells()];
    for (k, &c) in stats.cells.iter().enumerate() {
        if stats.max_z[k] < NON_GROUND_Z {
            continue;
        }
        let ix = c as isize % nx;
        let iy = c as isize / nx;
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (x, y) = (ix + dx, iy + dy);
                if x >= 0 && y >= 0 && x < nx && y < ny {
                    mark[(y * nx + x) as usize] = true;
                }
            }
        }
    }
    mark.iter()
        .enumerate()
        .filter(|(_, m)| **m)
        .map(|(c, _)| c as u32)
        .collect()
}

/// Box encoded by head outputs `o[1..9]` relative to a cell-centered anchor.
pub fn decode_anchor<T: Real>(center: (f64, f64), o: &[T]) -> Box3D<f64> {
    let v = |i: usize| o[i].as_f64();
    let ls = |i: usize| v(i).clamp(-MAX_LOG_SCALE, MAX_LOG_SCALE).exp();
    Box3D::clamped(
        center.0 + v(1),
        center.1 + v(2),
        ANCHOR_Z + v(3),
        ANCHOR_SIZE[0] * ls(4),
        ANCHOR_SIZE[1] * ls(5),
        ANCHOR_SIZE[2] * ls(6),
        0.5 * v(8).atan2(v(7)),
        0.05,
    )
}

/// Regression target of `gt` for the anchor at `center`.
pub fn encode_target(center: (f64, f64), gt: &Box3D<f64>) -> [f64; 8] {
    let t2 = 2.0 * gt.theta;
    [
        gt.x - center.0,
        gt.y - center.1,
        gt.z - ANCHOR_Z,
        (gt.l / ANCHOR_SIZE[0]).ln(),
        (gt.w / ANCHOR_SIZE[1]).ln(),
        (gt.h / ANCHOR_SIZE[2]).ln(),
        t2.cos(),
        t2.sin(),
    ]
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Sigmoid focal loss of logit `z` (alpha 0.25, gamma 2).
pub fn focal_loss(z: f64, positive: bool) -> f64 {
    let p = sigmoid(z);
    if positive {
        FOCAL_ALPHA * (1.0 - p).powf(FOCAL_GAMMA) * softplus(-z)
    } else {
        (1.0 - FOCAL_ALPHA) * p.powf(FOCAL_GAMMA) * softplus(z)
    }
}

/// Derivative of [`focal_loss`] with respect to `z`.
pub fn focal_grad(z: f64, positive: bool) -> f64 {
    let p = sigmoid(z);
    let g = FOCAL_GAMMA;
    if positive {
        // log p = -softplus(-z)
        FOCAL_ALPHA * (1.0 - p).powf(g) * (-g * p * softplus(-z) - (1.0 - p))
    } else {
        (1.0 - FOCAL_ALPHA) * p.powf(g) * (p + g * (1.0 - p) * softplus(z))
    }
}

pub fn smooth_l1(x: f64) -> f64 {
    let a = x.abs();
    if a < SMOOTH_L1_BETA {
        0.5 * a * a / SMOOTH_L1_BETA
    } else {
        a - 0.5 * SMOOTH_L1_BETA
    }
}

pub fn smooth_l1_grad(x: f64) -> f64 {
    if x.abs() < SMOOTH_L1_BETA {
        x / SMOOTH_L1_BETA
    } else {
        x.signum()
    }
}

/// Candidate labels: 1 positive, 0 negative, -1 ignored.
#[derive(Debug, Clone)]
pub struct HeadTargets {
    pub labels: Vec<i8>,
    pub gt_index: Vec<usize>,
    pub n_pos: usize,
}

/// Stage-one activations of one scene.
#[derive(Debug, Clone)]
pub struct SceneForward<T> {
    pub grid: BevGrid<T>,
    pub candidates: Vec<u32>,
    /// `occupied x reduced`.
    pub reduced: Vec<T>,
    /// `candidates x mix_inputs`.
    pub mix_in: Vec<T>,
    /// `candidates x hidden`.
    pub hidden: Vec<T>,
    /// `candidates x HEAD_OUT`.
    pub out: Vec<T>,
}

impl<T: Real> SceneForward<T> {
    pub fn run(stats: &PillarStats<T>, params: &DetectorParams<T>, cfg: &DetectorConfig) -> Self {
        let grid = encode_stats(stats, params);
        let candidates = candidate_cells(stats);
        let c = cfg.channels;
        let r = cfg.reduced;
        let mut reduced = vec![T::zero(); grid.cells.len() * r];
        for k in 0..grid.cells.len() {
            let y = &mut reduced[k * r..(k + 1) * r];
            params.reduce.forward(&grid.feats[k * c..(k + 1) * c], y);
            relu_inplace(y);
        }
        let m = cfg.mix_inputs();
        let h = cfg.hidden;
        let mut mix_in = vec![T::zero(); candidates.len() * m];
        let mut hidden = vec![T::zero(); candidates.len() * h];
        let mut out = vec![T::zero(); candidates.len() * HEAD_OUT];
        let nx = cfg.grid.nx();
        let half = (cfg.kernel / 2) as isize;
        let dil = cfg.dilation as isize;
        let gx = cfg.grid.x_max - cfg.grid.x_min;
        let gy = cfg.grid.y_max - cfg.grid.y_min;
        for (j, &cell) in candidates.iter().enumerate() {
            let x = &mut mix_in[j * m..(j + 1) * m];
            let ix = (cell as usize % nx) as isize;
            let iy = (cell as usize / nx) as isize;
            let mut slot = 0;
            for dy in -half..=half {
                for dx in -half..=half {
                    if let Some(row) = grid.row_of(ix + dx * dil, iy + dy * dil) {
                        x[slot..slot + r].copy_from_slice(&reduced[row * r..(row + 1) * r]);
                    }
                    slot += r;
                }
            }
            if let Some(f) = grid.feature(cell as usize) {
                x[slot..slot + c].copy_from_slice(f);
            }
            slot += c;
            let (cx, cy) = cfg.grid.center(cell as usize);
            x[slot] = T::lit(2.0 * (cx - cfg.grid.x_min) / gx - 1.0);
            x[slot + 1] = T::lit(2.0 * (cy - cfg.grid.y_min) / gy - 1.0);
            let hj = &mut hidden[j * h..(j + 1) * h];
            params.mix.forward(x, hj);
            relu_inplace(hj);
            params.head.forward(hj, &mut out[j * HEAD_OUT..(j + 1) * HEAD_OUT]);
        }
        Self {
            grid,
            candidates,
            reduced,
            mix_in,
            hidden,
            out,
        }
    }

    pub fn output(&self, j: usize) -> &[T] {
        &self.out[j * HEAD_OUT..(j + 1) * HEAD_OUT]
    }

    pub fn decode(&self, j: usize) -> Box3D<f64> {
        decode_anchor(self.grid.grid.center(self.candidates[j] as usize), self.output(j))
    }

    /// Thresholded, top-k, non-maximum-suppressed stage-one boxes. The
    /// returned detections carry no RoI feature yet.
    pub fn proposals(&self, threshold: f64, cfg: &DetectorConfig) -> Vec<Detection<T>> {
        let mut scored: Vec<(usize, f64)> = (0..self.candidates.len())
            .map(|j| (j, sigmoid(self.output(j)[0].as_f64())))
            .filter(|(_, s)| *s >= threshold)
            .collect();
        // stable: equal scores keep cell order
        scored.sort_by(|a, b| b.1.total_cmp(&a.1));
        scored.truncate(cfg.pre_nms);
        let dets: Vec<Detection<T>> = scored
            .iter()
            .map(|&(j, s)| Detection {
                bbox: self.decode(j),
                confidence: s,
                f3d: Vec::new(),
                local: Vec::new(),
                logit: self.output(j)[0].as_f64(),
            })
            .collect();
        let mut kept = nms(&dets, cfg.nms_iou);
        kept.truncate(cfg.k_max);
        kept
    }

    /// Assigns candidates to ground-truth boxes: cells inside a footprint and
    /// near its center are positives, the rest of the footprint (plus a
    /// margin) is ignored. A box with no such cell takes its closest
    /// candidate within the margin. Cells near an `ignore` box are never
    /// negatives.
    pub fn targets(&self, gts: &[Box3D<f64>], ignore: &[Box3D<f64>]) -> HeadTargets {
        let n = self.candidates.len();
        let mut labels = vec![0i8; n];
        let mut gt_index = vec![usize::MAX; n];
        let mut best: Vec<Option<(usize, f64)>> = vec![None; n];
        let mut fallback: Vec<Option<(usize, f64)>> = vec![None; gts.len()];
        for (j, &cell) in self.candidates.iter().enumerate() {
            let (cx, cy) = self.grid.grid.center(cell as usize);
            let outside = |b: &Box3D<f64>| {
                let q = b.ego_to_local([cx, cy, b.z]);
                ((q[0].abs() - b.l / 2.0).max(q[1].abs() - b.w / 2.0), q)
            };
            if ignore.iter().any(|b| outside(b).0 <= NEG_MARGIN) {
                labels[j] = -1;
            }
            for (g, b) in gts.iter().enumerate() {
                let (out, q) = outside(b);
                if out > NEG_MARGIN {
                    continue;
                }
                if labels[j] == 0 {
                    labels[j] = -1;
                }
                let d = q[0].hypot(q[1]);
                if out <= POS_MARGIN && fallback[g].map_or(true, |(_, bd)| d < bd) {
                    fallback[g] = Some((j, d));
                }
                if out <= 0.0 && d <= POS_RADIUS && best[j].map_or(true, |(_, bd)| d < bd) {
                    best[j] = Some((g, d));
                }
            }
        }
        let mut n_pos = 0;
        for j in 0..n {
            if let Some((g, _)) = best[j] {
                labels[j] = 1;
                gt_index[j] = g;
                n_pos += 1;
            }
        }
        for (g, f) in fallback.iter().enumerate() {
            if let Some((j, _)) = *f {
                if !gt_index.contains(&g) && labels[j] != 1 {
                    labels[j] = 1;
                    gt_index[j] = g;
                    n_pos += 1;
                }
            }
        }
        HeadTargets {
            labels,
            gt_index,
            n_pos,
        }
    }

    /// Focal classification and smooth-L1 regression losses with the
    /// gradient of their sum with respect to `out`.
    pub fn loss(&self, gts: &[Box3D<f64>], ignore: &[Box3D<f64>]) -> (f64, f64, Vec<T>) {
        let t = self.targets(gts, ignore);
        let norm = t.n_pos.max(1) as f64;
        let mut cls = 0.0;
        let mut reg = 0.0;
        let mut d = vec![T::zero(); self.out.len()];
        for j in 0..self.candidates.len() {
            if t.labels[j] < 0 {
                continue;
            }
            let o = self.output(j);
            let pos = t.labels[j] == 1;
            let z = o[0].as_f64();
            cls += focal_loss(z, pos) / norm;
            d[j * HEAD_OUT] = T::lit(focal_grad(z, pos) / norm);
            if pos {
                let center = self.grid.grid.center(self.candidates[j] as usize);
                let tgt = encode_target(center, &gts[t.gt_index[j]]);
                for i in 0..8 {
                    let e = o[i + 1].as_f64() - tgt[i];
                    reg += REG_WEIGHT * smooth_l1(e) / norm;
                    d[j * HEAD_OUT + i + 1] = T::lit(REG_WEIGHT * smooth_l1_grad(e) / norm);
                }
            }
        }
        (cls, reg, d)
    }

    /// Backpropagates head-output gradients `d_out` plus encoder-feature
    /// gradients `d_feats` (from RoI pooling) down to the encoder.
    pub fn backward(
        &self,
        stats: &PillarStats<T>,
        d_out: &[T],
        mut d_feats: Vec<T>,
        params: &DetectorParams<T>,
        grads: &mut DetectorParams<T>,
        cfg: &DetectorConfig,
    ) {
        let c = cfg.channels;
        let r = cfg.reduced;
        let m = cfg.mix_inputs();
        let h = cfg.hidden;
        let nx = cfg.grid.nx();
        let half = (cfg.kernel / 2) as isize;
        let dil = cfg.dilation as isize;
        let mut d_reduced = vec![T::zero(); self.reduced.len()];
        let mut dh = vec![T::zero(); h];
        let mut dx = vec![T::zero(); m];
        for j in 0..self.candidates.len() {
            let dout = &d_out[j * HEAD_OUT..(j + 1) * HEAD_OUT];
            if dout.iter().all(|v| *v == T::zero()) {
                continue;
            }
            dh.iter_mut().for_each(|v| *v = T::zero());
            let hj = &self.hidden[j * h..(j + 1) * h];
            params.head.backward(hj, dout, &mut grads.head, Some(&mut dh));
            relu_backward(hj, &mut dh);
            dx.iter_mut().for_each(|v| *v = T::zero());
            params.mix.backward(&self.mix_in[j * m..(j + 1) * m], &dh, &mut grads.mix, Some(&mut dx));
            let cell = self.candidates[j] as usize;
            let ix = (cell % nx) as isize;
            let iy = (cell / nx) as isize;
            let mut slot = 0;
            for ddy in -half..=half {
                for ddx in -half..=half {
                    if let Some(row) = self.grid.row_of(ix + ddx * dil, iy + ddy * dil) {
                        for q in 0..r {
                            d_reduced[row * r + q] += dx[slot + q];
                        }
                    }
                    slot += r;
                }
            }
            let own = self.grid.index[cell];
            if own >= 0 {
                let own = own as usize;
                for q in 0..c {
                    d_feats[own * c + q] += dx[slot + q];
                }
            }
        }
        let mut dr = vec![T::zero(); r];
        for k in 0..self.grid.cells.len() {
            dr.copy_from_slice(&d_reduced[k * r..(k + 1) * r]);
            if dr.iter().all(|v| *v == T::zero()) {
                continue;
            }
            relu_backward(&self.reduced[k * r..(k + 1) * r], &mut dr);
            params.reduce.backward(
                &self.grid.feats[k * c..(k + 1) * c],
                &dr,
                &mut grads.reduce,
                Some(&mut d_feats[k * c..(k + 1) * c]),
            );
        }
        encoder_backward(stats, &self.grid, &d_feats, params, grads);
    }
}

/// Heading difference folded into `[-π/2, π/2)`; boxes are symmetric
/// under a half turn.
pub(super) fn half_turn_diff(a: f64, b: f64) -> f64 {
    let d = normalize_angle(a - b);
    if d >= std::f64::consts::FRAC_PI_2 {
        d - std::f64::consts::PI
    } else if d < -std::f64::consts::FRAC_PI_2 {
        d + std::f64::consts::PI
    } else {
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn focal_grad_matches_finite_difference() {
        for &z in &[-3.0, -0.4, 0.0, 0.7, 2.5] {
            for pos in [true, false] {
                let h = 1e-6;
                let fd = (focal_loss(z + h, pos) - focal_loss(z - h, pos)) / (2.0 * h);
                assert!((fd - focal_grad(z, pos)).abs() < 1e-8, "z {z} pos {pos}");
            }
        }
    }

    #[test]
    fn anchor_round_trip() {
        let gt = Box3D::new(10.3, -4.1, 0.9, 4.2, 1.9, 1.5, 0.4).unwrap();
        let t = encode_target((10.25, -4.25), &gt);
        let b = decode_anchor::<f64>((10.25, -4.25), &[0.0, t[0], t[1], t[2], t[3], t[4], t[5], t[6], t[7]]);
        assert!((b.x - gt.x).abs() < 1e-12 && (b.l - gt.l).abs() < 1e-12);
        assert!(half_turn_diff(b.theta, gt.theta).abs() < 1e-12);
    }
}
