//! Stage-two refinement: box deltas in the proposal frame and a quality
//! logit.

use super::head::{half_turn_diff, smooth_l1, smooth_l1_grad};
use crate::geometry::{iou_bev, Box3D};
use crate::nn::sigmoid;

/// Quality logit followed by seven box deltas.
pub const REFINE_OUT: usize = 8;
const MAX_LOG_SCALE: f64 = 1.0;
/// Quality target ramps from 0 at this IoU to 1 at `QUALITY_HIGH`.
const QUALITY_LOW: f64 = 0.25;
const QUALITY_HIGH: f64 = 0.75;
/// Proposals overlapping their label at least this much get box targets.
pub const REGRESS_IOU: f64 = 0.55;
const REG_WEIGHT: f64 = 1.0;

/// Applies `d = [dx, dy, dz, dl, dw, dh, dθ]`; offsets are in the
/// proposal's heading frame, sizes in log scale.
pub fn apply_deltas(p: &Box3D<f64>, d: &[f64]) -> Box3D<f64> {
    let (s, c) = p.theta.sin_cos();
    let ls = |v: f64| v.clamp(-MAX_LOG_SCALE, MAX_LOG_SCALE).exp();
    Box3D::clamped(
        p.x + c * d[0] - s * d[1],
        p.y + s * d[0] + c * d[1],
        p.z + d[2],
        p.l * ls(d[3]),
        p.w * ls(d[4]),
        p.h * ls(d[5]),
        p.theta + d[6],
        0.05,
    )
}

/// Deltas taking `p` to `gt`; the heading difference is folded modulo a
/// half turn.
pub fn delta_targets(p: &Box3D<f64>, gt: &Box3D<f64>) -> [f64; 7] {
    let (s, c) = p.theta.sin_cos();
    let (dx, dy) = (gt.x - p.x, gt.y - p.y);
    [
        c * dx + s * dy,
        -s * dx + c * dy,
        gt.z - p.z,
        (gt.l / p.l).ln(),
        (gt.w / p.w).ln(),
        (gt.h / p.h).ln(),
        half_turn_diff(gt.theta, p.theta),
    ]
}

/// Geometric mean of the proposal score and the refined quality.
pub fn final_confidence(proposal_conf: f64, quality_logit: f64) -> f64 {
    (proposal_conf * sigmoid(quality_logit)).sqrt()
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Refinement loss of one RoI with output `out` against its matched label
/// (if any): soft-target cross-entropy on the quality logit plus smooth-L1
/// on the deltas for well-overlapping RoIs. Returns `(quality, regression,
/// d_out)`.
pub fn refine_loss(out: &[f64], roi: &Box3D<f64>, label: Option<&Box3D<f64>>) -> (f64, f64, [f64; REFINE_OUT]) {
    let mut d = [0.0; REFINE_OUT];
    let iou = label.map_or(0.0, |g| iou_bev(roi, g));
    let t = ((iou - QUALITY_LOW) / (QUALITY_HIGH - QUALITY_LOW)).clamp(0.0, 1.0);
    let z = out[0];
    let q = softplus(z) - t * z;
    d[0] = sigmoid(z) - t;
    let mut reg = 0.0;
    if let (Some(g), true) = (label, iou >= REGRESS_IOU) {
        let tgt = delta_targets(roi, g);
        for i in 0..7 {
            let e = out[i + 1] - tgt[i];
            reg += REG_WEIGHT * smooth_l1(e);
            d[i + 1] = REG_WEIGHT * smooth_l1_grad(e);
        }
    }
    (q, reg, d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deltas_round_trip() {
        let p = Box3D::new(20.0, 3.0, 0.7, 4.0, 1.7, 1.4, 0.6).unwrap();
        let g = Box3D::new(20.4, 2.7, 0.8, 4.4, 1.9, 1.5, 0.7).unwrap();
        let b = apply_deltas(&p, &delta_targets(&p, &g));
        assert!((b.x - g.x).abs() < 1e-12 && (b.y - g.y).abs() < 1e-12);
        assert!((b.l - g.l).abs() < 1e-12 && (b.theta - g.theta).abs() < 1e-12);
    }

    #[test]
    fn zero_deltas_are_identity() {
        let p = Box3D::new(20.0, 3.0, 0.7, 4.0, 1.7, 1.4, 0.6).unwrap();
        assert_eq!(apply_deltas(&p, &[0.0; 7]), p);
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let p = Box3D::new(20.0, 3.0, 0.7, 4.0, 1.7, 1.4, 0.6).unwrap();
        let g = Box3D::new(20.3, 2.9, 0.8, 4.2, 1.8, 1.5, 0.65).unwrap();
        let out = [0.3, 0.5, -0.2, 0.01, 0.3, -0.4, 0.2, 0.05];
        let (_, _, d) = refine_loss(&out, &p, Some(&g));
        let h = 1e-6;
        for i in 0..REFINE_OUT {
            let mut a = out;
            a[i] += h;
            let mut b = out;
            b[i] -= h;
            let la = refine_loss(&a, &p, Some(&g));
            let lb = refine_loss(&b, &p, Some(&g));
            let fd = ((la.0 + la.1) - (lb.0 + lb.1)) / (2.0 * h);
            assert!((fd - d[i]).abs() < 1e-6, "{i}");
        }
    }
}
