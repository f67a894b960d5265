use crate::geometry::{Box3D, IouVariant};
use crate::toydet::Detection;

/// Pairs every prediction with its highest-IoU label and keeps the pairs
/// reaching `mu`. Ties go to the lower label index; a label may be matched
/// by several predictions.
pub fn match_boxes(preds: &[Box3D<f64>], labels: &[Box3D<f64>], mu: f64, variant: IouVariant) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (i, p) in preds.iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for (j, l) in labels.iter().enumerate() {
            let iou = variant.iou(p, l);
            if best.map_or(true, |(_, b)| iou > b) {
                best = Some((j, iou));
            }
        }
        if let Some((j, iou)) = best {
            if iou >= mu {
                out.push((i, j));
            }
        }
    }
    out
}

pub fn match_to_labels<T>(
    preds: &[Detection<T>],
    labels: &[Box3D<f64>],
    mu: f64,
    variant: IouVariant,
) -> Vec<(usize, usize)> {
    let boxes: Vec<Box3D<f64>> = preds.iter().map(|d| d.bbox).collect();
    match_boxes(&boxes, labels, mu, variant)
}
