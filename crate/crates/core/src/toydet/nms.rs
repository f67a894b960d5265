use super::Detection;
use crate::geometry::iou_bev;

/// Greedy non-maximum suppression by BEV IoU. Detections are visited in
/// descending confidence; equal confidences keep their input order.
/// A kept box suppresses every later box overlapping it above `iou_thresh`.
pub fn nms<T: Clone>(dets: &[Detection<T>], iou_thresh: f64) -> Vec<Detection<T>> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].confidence.total_cmp(&dets[a].confidence));
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        let bi = &dets[i].bbox;
        let ri = bi.l.hypot(bi.w) / 2.0;
        let suppressed = kept.iter().any(|&k| {
            let bk = &dets[k].bbox;
            let rk = bk.l.hypot(bk.w) / 2.0;
            // circumcircles apart: no overlap possible
            if (bi.x - bk.x).hypot(bi.y - bk.y) > ri + rk {
                return false;
            }
            iou_bev(bi, bk) > iou_thresh
        });
        if !suppressed {
            kept.push(i);
        }
    }
    kept.into_iter().map(|i| dets[i].clone()).collect()
}
