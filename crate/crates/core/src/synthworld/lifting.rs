//! Frustum-based lifting of 2D detections to 3D boxes.

use std::collections::HashMap;

use super::LidarPoint;
use crate::geometry::{Box2D, Box3D, CameraModel};

/// Points at or below this height are treated as ground.
pub const GROUND_CLEARANCE: f64 = 0.25;
const MIN_POINTS: usize = 5;
const MIN_DEPTH: f64 = 0.5;
const CLUSTER_RADIUS: f64 = 0.8;
const PRIOR_LENGTH: f64 = 4.4;
const PRIOR_WIDTH: f64 = 1.8;

/// Minimum-area enclosing rectangle of a planar point set:
/// `(center, extents along (axis, normal), axis angle)`.
///
/// A sweep that sees two faces of a car yields an L-shaped, nearly
/// triangular hull, whose hypotenuse-aligned rectangle has almost the same
/// area as the face-aligned one. Among hull-edge orientations within 10%
/// of the minimum area, the one whose edges the points hug most closely is
/// kept.
pub fn min_area_rect(pts: &[[f64; 2]]) -> Option<([f64; 2], [f64; 2], f64)> {
    let hull = convex_hull(pts);
    if hull.is_empty() {
        return None;
    }
    if hull.len() < 3 {
        let a = hull[0];
        let b = *hull.last().expect("non-empty");
        let d = [b[0] - a[0], b[1] - a[1]];
        let len = d[0].hypot(d[1]);
        let ang = if len > 0.0 { d[1].atan2(d[0]) } else { 0.0 };
        return Some(([(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0], [len, 0.0], ang));
    }
    let fit = |ang: f64| {
        let (s, c) = ang.sin_cos();
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for h in &hull {
            let u = c * h[0] + s * h[1];
            let v = -s * h[0] + c * h[1];
            lo = [lo[0].min(u), lo[1].min(v)];
            hi = [hi[0].max(u), hi[1].max(v)];
        }
        (lo, hi)
    };
    let mut cands: Vec<(f64, f64)> = Vec::with_capacity(hull.len());
    for i in 0..hull.len() {
        let p = hull[i];
        let q = hull[(i + 1) % hull.len()];
        let ang = (q[1] - p[1]).atan2(q[0] - p[0]);
        let (lo, hi) = fit(ang);
        cands.push((ang, (hi[0] - lo[0]) * (hi[1] - lo[1])));
    }
    let min_area = cands.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
    let mut best: Option<(f64, f64)> = None;
    for &(ang, area) in &cands {
        if area > min_area * 1.1 + 1e-12 {
            continue;
        }
        let (s, c) = ang.sin_cos();
        let (lo, hi) = fit(ang);
        let score: f64 = pts
            .iter()
            .map(|p| {
                let u = c * p[0] + s * p[1];
                let v = -s * p[0] + c * p[1];
                let du = (u - lo[0]).min(hi[0] - u);
                let dv = (v - lo[1]).min(hi[1] - v);
                1.0 / du.min(dv).max(0.02)
            })
            .sum();
        if best.map_or(true, |b| score > b.1) {
            best = Some((ang, score));
        }
    }
    let (ang, _) = best?;
    let (s, c) = ang.sin_cos();
    let (lo, hi) = fit(ang);
    let cu = (lo[0] + hi[0]) / 2.0;
    let cv = (lo[1] + hi[1]) / 2.0;
    Some(([c * cu - s * cv, s * cu + c * cv], [hi[0] - lo[0], hi[1] - lo[1]], ang))
}

/// Andrew's monotone chain; counter-clockwise, no repeated endpoint.
fn convex_hull(pts: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut p: Vec<[f64; 2]> = pts.to_vec();
    p.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    p.dedup();
    if p.len() < 3 {
        return p;
    }
    let cross = |o: [f64; 2], a: [f64; 2], b: [f64; 2]| {
        (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
    };
    let mut lower: Vec<[f64; 2]> = Vec::new();
    for &q in &p {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], q) <= 0.0 {
            lower.pop();
        }
        lower.push(q);
    }
    let mut upper: Vec<[f64; 2]> = Vec::new();
    for &q in p.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], q) <= 0.0 {
            upper.pop();
        }
        upper.push(q);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Index of each point's cluster under single-linkage at `radius` in BEV.
fn cluster(pts: &[[f64; 2]], radius: f64) -> Vec<usize> {
    let mut parent: Vec<usize> = (0..pts.len()).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    let key = |p: &[f64; 2]| ((p[0] / radius).floor() as i64, (p[1] / radius).floor() as i64);
    let mut cells: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (i, p) in pts.iter().enumerate() {
        cells.entry(key(p)).or_default().push(i);
    }
    let r2 = radius * radius;
    for (i, p) in pts.iter().enumerate() {
        let (cx, cy) = key(p);
        for dx in -1..=1 {
            for dy in -1..=1 {
                if let Some(list) = cells.get(&(cx + dx, cy + dy)) {
                    for &j in list {
                        if j <= i {
                            continue;
                        }
                        let q = pts[j];
                        if (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) <= r2 {
                            let a = find(&mut parent, i);
                            let b = find(&mut parent, j);
                            if a != b {
                                parent[a.max(b)] = a.min(b);
                            }
                        }
                    }
                }
            }
        }
    }
    (0..pts.len()).map(|i| find(&mut parent, i)).collect()
}

/// Lifts a 2D box to a 3D car box from the LiDAR points in its frustum.
///
/// Non-ground frustum points are clustered in BEV; the largest cluster is
/// fit with a minimum-area rectangle. Because a sweep only sees the faces
/// turned toward the sensor, short extents are grown to a car-sized prior,
/// extending away from the sensor. A cluster shorter than any car is read
/// as an end face, so its long side becomes the box width.
pub fn lift_2d_to_3d(
    box2d: &Box2D<f64>,
    points: &[LidarPoint],
    cam: &CameraModel<f64>,
) -> Option<Box3D<f64>> {
    let mut sel: Vec<[f64; 3]> = Vec::new();
    for p in points {
        let xyz = p.xyz();
        if xyz[2] <= GROUND_CLEARANCE {
            continue;
        }
        if let Some((u, v, depth)) = cam.project_point(xyz) {
            if depth > MIN_DEPTH && box2d.contains_point(u, v) {
                sel.push(xyz);
            }
        }
    }
    if sel.len() < MIN_POINTS {
        return None;
    }
    let bev: Vec<[f64; 2]> = sel.iter().map(|p| [p[0], p[1]]).collect();
    let labels = cluster(&bev, CLUSTER_RADIUS);
    let mut sizes: HashMap<usize, usize> = HashMap::new();
    for &l in &labels {
        *sizes.entry(l).or_default() += 1;
    }
    // largest cluster; ties go to the lowest root index
    let (&root, _) = sizes
        .iter()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))?;
    let members: Vec<usize> = (0..sel.len()).filter(|&i| labels[i] == root).collect();
    if members.len() < 3 {
        return None;
    }
    let pts2: Vec<[f64; 2]> = members.iter().map(|&i| bev[i]).collect();
    let (center, ext, ang) = min_area_rect(&pts2)?;
    let top = members.iter().map(|&i| sel[i][2]).fold(f64::NEG_INFINITY, f64::max);

    // axis 0 is the fitted edge direction; order by extent
    let axes = [[ang.cos(), ang.sin()], [-ang.sin(), ang.cos()]];
    let (long, short) = if ext[0] >= ext[1] { (0, 1) } else { (1, 0) };
    let end_face = ext[long] < 2.6;
    let (len_axis, wid_axis) = if end_face { (short, long) } else { (long, short) };
    let mut c = center;
    let mut grow = |axis: usize, have: f64, want: f64| -> f64 {
        if have >= want {
            return have;
        }
        let a = axes[axis];
        let away = if a[0] * c[0] + a[1] * c[1] >= 0.0 { 1.0 } else { -1.0 };
        let shift = (want - have) / 2.0 * away;
        c = [c[0] + shift * a[0], c[1] + shift * a[1]];
        want
    };
    let l = grow(len_axis, ext[len_axis], PRIOR_LENGTH);
    let w = grow(wid_axis, ext[wid_axis], PRIOR_WIDTH);
    let heading = axes[len_axis][1].atan2(axes[len_axis][0]);
    let h = top.max(0.5);
    Some(Box3D::clamped(c[0], c[1], h / 2.0, l, w, h, heading, 0.1))
}
