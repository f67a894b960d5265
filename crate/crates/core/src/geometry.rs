//! Oriented-box geometry: cuboid corners, pinhole projection with truncation,
//! rotated BEV / 3D / image-plane IoU and ground-plane range.
//!
//! Frames: the ego frame is x forward, y left, z up with the ground plane at
//! `z = 0`. Camera frames are x right, y down, z along the optical axis.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("box extents must be positive and finite (l={l}, w={w}, h={h})")]
    InvalidExtent { l: f64, w: f64, h: f64 },
    #[error("box coordinates must be finite")]
    NonFinite,
    #[error("2D box must satisfy x_min < x_max and y_min < y_max")]
    Degenerate2d,
    #[error("truncation {0} outside [0, 1]")]
    Truncation(f64),
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("camera list is empty")]
    NoCameras,
}

/// Wraps an angle into `[-pi, pi)`.
pub fn normalize_angle<T: Real>(theta: T) -> T {
    let two_pi = T::PI() + T::PI();
    let mut r = theta - two_pi * ((theta + T::PI()) / two_pi).floor();
    if r >= T::PI() {
        r -= two_pi;
    }
    if r < -T::PI() {
        r += two_pi;
    }
    r
}

/// Oriented 3D box `(x, y, z, l, w, h, theta)`; `theta` is the yaw of the
/// length axis about +z.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box3D<T> {
    pub x: T,
    pub y: T,
    pub z: T,
    pub l: T,
    pub w: T,
    pub h: T,
    pub theta: T,
}

impl<T: Real> Box3D<T> {
    /// Validating constructor; the heading is normalized.
    pub fn new(x: T, y: T, z: T, l: T, w: T, h: T, theta: T) -> Result<Self, GeometryError> {
        if ![x, y, z, theta].iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        let ok = |v: T| v.is_finite() && v > T::zero();
        if !(ok(l) && ok(w) && ok(h)) {
            return Err(GeometryError::InvalidExtent {
                l: l.as_f64(),
                w: w.as_f64(),
                h: h.as_f64(),
            });
        }
        Ok(Self {
            x,
            y,
            z,
            l,
            w,
            h,
            theta: normalize_angle(theta),
        })
    }

    /// Constructor for network outputs: extents are clamped to `min_extent`
    /// and non-finite values replaced, so the result always satisfies the
    /// box invariants.
    pub fn clamped(x: T, y: T, z: T, l: T, w: T, h: T, theta: T, min_extent: T) -> Self {
        let fin = |v: T| if v.is_finite() { v } else { T::zero() };
        let ext = |v: T| {
            if v.is_finite() {
                v.max(min_extent)
            } else {
                min_extent
            }
        };
        Self {
            x: fin(x),
            y: fin(y),
            z: fin(z),
            l: ext(l),
            w: ext(w),
            h: ext(h),
            theta: normalize_angle(fin(theta)),
        }
    }

    pub fn cast<U: Real>(&self) -> Box3D<U> {
        Box3D {
            x: U::cast(self.x),
            y: U::cast(self.y),
            z: U::cast(self.z),
            l: U::cast(self.l),
            w: U::cast(self.w),
            h: U::cast(self.h),
            theta: U::cast(self.theta),
        }
    }

    pub fn volume(&self) -> T {
        self.l * self.w * self.h
    }

    pub fn bev_area(&self) -> T {
        self.l * self.w
    }

    pub fn z_min(&self) -> T {
        self.z - self.h / T::lit(2.0)
    }

    pub fn z_max(&self) -> T {
        self.z + self.h / T::lit(2.0)
    }

    /// Maps a point in the box's local frame to the ego frame.
    pub fn local_to_ego(&self, u: T, v: T, wz: T) -> [T; 3] {
        let (s, c) = self.theta.sin_cos();
        [self.x + c * u - s * v, self.y + s * u + c * v, self.z + wz]
    }

    /// Maps an ego point into the box's local frame.
    pub fn ego_to_local(&self, p: [T; 3]) -> [T; 3] {
        let (s, c) = self.theta.sin_cos();
        let dx = p[0] - self.x;
        let dy = p[1] - self.y;
        [c * dx + s * dy, -s * dx + c * dy, p[2] - self.z]
    }

    /// Whether `p` lies inside the box scaled by `inflate` about its center.
    pub fn contains(&self, p: [T; 3], inflate: T) -> bool {
        let q = self.ego_to_local(p);
        let half = T::lit(0.5) * inflate;
        q[0].abs() <= self.l * half && q[1].abs() <= self.w * half && q[2].abs() <= self.h * half
    }

    /// Footprint corners, counter-clockwise.
    pub fn bev_corners(&self) -> [[T; 2]; 4] {
        let hl = self.l / T::lit(2.0);
        let hw = self.w / T::lit(2.0);
        let offs = [(hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)];
        let (s, c) = self.theta.sin_cos();
        offs.map(|(u, v)| [self.x + c * u - s * v, self.y + s * u + c * v])
    }

    /// The eight cuboid corners: bottom face first, then top, each
    /// counter-clockwise seen from above.
    pub fn corners(&self) -> [[T; 3]; 8] {
        let bev = self.bev_corners();
        let lo = self.z_min();
        let hi = self.z_max();
        let mut out = [[T::zero(); 3]; 8];
        for (i, c) in bev.iter().enumerate() {
            out[i] = [c[0], c[1], lo];
            out[i + 4] = [c[0], c[1], hi];
        }
        out
    }
}

/// Ground-plane distance of the box center from the ego origin.
pub fn box_distance<T: Real>(b: &Box3D<T>) -> T {
    b.x.hypot(b.y)
}

/// Axis-aligned image box with the camera it was taken from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box2D<T> {
    pub x_min: T,
    pub y_min: T,
    pub x_max: T,
    pub y_max: T,
    pub camera_id: u32,
    pub truncation: T,
}

impl<T: Real> Box2D<T> {
    pub fn new(
        x_min: T,
        y_min: T,
        x_max: T,
        y_max: T,
        camera_id: u32,
        truncation: T,
    ) -> Result<Self, GeometryError> {
        if !(x_min < x_max && y_min < y_max) {
            return Err(GeometryError::Degenerate2d);
        }
        if !(truncation >= T::zero() && truncation <= T::one()) {
            return Err(GeometryError::Truncation(truncation.as_f64()));
        }
        Ok(Self {
            x_min,
            y_min,
            x_max,
            y_max,
            camera_id,
            truncation,
        })
    }

    pub fn area(&self) -> T {
        (self.x_max - self.x_min) * (self.y_max - self.y_min)
    }

    pub fn center(&self) -> (T, T) {
        let half = T::lit(0.5);
        (
            (self.x_min + self.x_max) * half,
            (self.y_min + self.y_max) * half,
        )
    }

    /// Area of the part of this box inside `[0, width] x [0, height]`.
    pub fn visible_area(&self, width: T, height: T) -> T {
        let w = (self.x_max.min(width) - self.x_min.max(T::zero())).max(T::zero());
        let h = (self.y_max.min(height) - self.y_min.max(T::zero())).max(T::zero());
        w * h
    }

    pub fn contains_point(&self, u: T, v: T) -> bool {
        u >= self.x_min && u <= self.x_max && v >= self.y_min && v <= self.y_max
    }
}

pub fn iou_2d<T: Real>(a: &Box2D<T>, b: &Box2D<T>) -> T {
    let iw = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(T::zero());
    let ih = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(T::zero());
    let inter = iw * ih;
    if inter <= T::zero() {
        return T::zero();
    }
    let union = a.area() + b.area() - inter;
    (inter / union).min(T::one())
}

/// Pinhole camera: intrinsics `k` and an ego-to-camera rigid transform `e`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraModel<T> {
    pub id: u32,
    pub k: [[T; 3]; 3],
    pub e: [[T; 4]; 4],
    pub width: T,
    pub height: T,
}

impl<T: Real> CameraModel<T> {
    pub fn new(
        id: u32,
        k: [[T; 3]; 3],
        e: [[T; 4]; 4],
        width: T,
        height: T,
    ) -> Result<Self, GeometryError> {
        let bad = |m: &str| Err(GeometryError::InvalidCamera(m.to_string()));
        if !(k[0][0] > T::zero() && k[1][1] > T::zero()) {
            return bad("focal entries must be positive");
        }
        if k[1][0] != T::zero() || k[2][0] != T::zero() || k[2][1] != T::zero() {
            return bad("intrinsic lower triangle must be zero");
        }
        if k[2][2] != T::one() {
            return bad("intrinsic K[2][2] must be 1");
        }
        if !(width > T::zero() && height > T::zero()) {
            return bad("image size must be positive");
        }
        let r = |i: usize, j: usize| e[i][j].as_f64();
        let det = r(0, 0) * (r(1, 1) * r(2, 2) - r(1, 2) * r(2, 1))
            - r(0, 1) * (r(1, 0) * r(2, 2) - r(1, 2) * r(2, 0))
            + r(0, 2) * (r(1, 0) * r(2, 1) - r(1, 1) * r(2, 0));
        let mut ortho_err = 0.0f64;
        for i in 0..3 {
            for j in 0..3 {
                let d: f64 = (0..3).map(|m| r(i, m) * r(j, m)).sum();
                let target = if i == j { 1.0 } else { 0.0 };
                ortho_err = ortho_err.max((d - target).abs());
            }
        }
        if (det - 1.0).abs() > 1e-9 || ortho_err > 1e-9 {
            return bad("extrinsic rotation is not a proper orthonormal matrix");
        }
        let last = [r(3, 0), r(3, 1), r(3, 2), r(3, 3)];
        if last != [0.0, 0.0, 0.0, 1.0] {
            return bad("extrinsic bottom row must be (0, 0, 0, 1)");
        }
        Ok(Self {
            id,
            k,
            e,
            width,
            height,
        })
    }

    /// Camera mounted at `position` (ego frame) looking horizontally along
    /// `yaw`, with square pixels of focal length `focal` and the principal
    /// point at the image center.
    pub fn looking_along(
        id: u32,
        position: [T; 3],
        yaw: T,
        focal: T,
        width: T,
        height: T,
    ) -> Result<Self, GeometryError> {
        let (s, c) = yaw.sin_cos();
        let z = T::zero();
        let one = T::one();
        // rows: camera x (right), y (down), z (forward) expressed in ego axes
        let rot = [[s, -c, z], [z, z, -one], [c, s, z]];
        let mut e = [[z; 4]; 4];
        for i in 0..3 {
            for j in 0..3 {
                e[i][j] = rot[i][j];
            }
            e[i][3] = -(rot[i][0] * position[0] + rot[i][1] * position[1] + rot[i][2] * position[2]);
        }
        e[3][3] = one;
        let half = T::lit(0.5);
        let k = [[focal, z, width * half], [z, focal, height * half], [z, z, one]];
        Self::new(id, k, e, width, height)
    }

    pub fn cast<U: Real>(&self) -> CameraModel<U> {
        CameraModel {
            id: self.id,
            k: self.k.map(|r| r.map(U::cast)),
            e: self.e.map(|r| r.map(U::cast)),
            width: U::cast(self.width),
            height: U::cast(self.height),
        }
    }

    pub fn ego_to_camera(&self, p: [T; 3]) -> [T; 3] {
        let e = &self.e;
        let mut out = [T::zero(); 3];
        for (i, o) in out.iter_mut().enumerate() {
            *o = e[i][0] * p[0] + e[i][1] * p[1] + e[i][2] * p[2] + e[i][3];
        }
        out
    }

    /// Pixel coordinates of a camera-frame point with positive depth.
    pub fn pixel(&self, pc: [T; 3]) -> (T, T) {
        let k = &self.k;
        let u = k[0][0] * pc[0] + k[0][1] * pc[1] + k[0][2] * pc[2];
        let v = k[1][1] * pc[1] + k[1][2] * pc[2];
        (u / pc[2], v / pc[2])
    }

    /// Projects an ego point; `None` when it is not in front of the camera.
    pub fn project_point(&self, p: [T; 3]) -> Option<(T, T, T)> {
        let pc = self.ego_to_camera(p);
        if pc[2] <= T::lit(MIN_DEPTH) {
            return None;
        }
        let (u, v) = self.pixel(pc);
        Some((u, v, pc[2]))
    }
}

/// Corners closer than this to the image plane count as behind the camera.
pub const MIN_DEPTH: f64 = 1e-6;

/// Projects a box into a camera image.
///
/// The returned box is the axis-aligned hull of the projected corners in
/// front of the camera, not clipped to the image; its truncation is the
/// fraction of the hull area outside the image.
pub fn project_box<T: Real>(b: &Box3D<T>, cam: &CameraModel<T>) -> Option<Box2D<T>> {
    let mut lo = [T::infinity(); 2];
    let mut hi = [T::neg_infinity(); 2];
    let mut any = false;
    for c in b.corners() {
        if let Some((u, v, _)) = cam.project_point(c) {
            any = true;
            lo[0] = lo[0].min(u);
            lo[1] = lo[1].min(v);
            hi[0] = hi[0].max(u);
            hi[1] = hi[1].max(v);
        }
    }
    if !any || !(lo[0] < hi[0] && lo[1] < hi[1]) {
        return None;
    }
    let mut hull = Box2D {
        x_min: lo[0],
        y_min: lo[1],
        x_max: hi[0],
        y_max: hi[1],
        camera_id: cam.id,
        truncation: T::zero(),
    };
    let visible = hull.visible_area(cam.width, cam.height);
    if visible <= T::zero() {
        return None;
    }
    hull.truncation = (T::one() - visible / hull.area()).max(T::zero()).min(T::one());
    Some(hull)
}

/// Picks the camera whose projection of `b` is least truncated; ties go to
/// the camera listed first.
pub fn select_camera_view<T: Real>(
    b: &Box3D<T>,
    cams: &[CameraModel<T>],
) -> Result<Option<(u32, Box2D<T>)>, GeometryError> {
    if cams.is_empty() {
        return Err(GeometryError::NoCameras);
    }
    let mut best: Option<(u32, Box2D<T>)> = None;
    for cam in cams {
        if let Some(p) = project_box(b, cam) {
            match &best {
                Some((_, q)) if q.truncation <= p.truncation => {}
                _ => best = Some((cam.id, p)),
            }
        }
    }
    Ok(best)
}

fn cross2<T: Real>(o: [T; 2], a: [T; 2], b: [T; 2]) -> T {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Shoelace area of a simple polygon (positive when counter-clockwise).
pub fn polygon_area<T: Real>(poly: &[[T; 2]]) -> T {
    let n = poly.len();
    if n < 3 {
        return T::zero();
    }
    let mut acc = T::zero();
    for i in 0..n {
        let p = poly[i];
        let q = poly[(i + 1) % n];
        acc += p[0] * q[1] - q[0] * p[1];
    }
    acc / T::lit(2.0)
}

/// Sutherland-Hodgman clip of `subject` by the convex counter-clockwise
/// polygon `clip`.
pub fn clip_convex<T: Real>(subject: &[[T; 2]], clip: &[[T; 2]]) -> Vec<[T; 2]> {
    let mut out: Vec<[T; 2]> = subject.to_vec();
    let n = clip.len();
    for i in 0..n {
        if out.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % n];
        let input = std::mem::take(&mut out);
        let m = input.len();
        for j in 0..m {
            let p = input[j];
            let q = input[(j + 1) % m];
            let sp = cross2(a, b, p);
            let sq = cross2(a, b, q);
            let p_in = sp >= T::zero();
            let q_in = sq >= T::zero();
            if p_in {
                out.push(p);
            }
            if p_in != q_in {
                let t = sp / (sp - sq);
                out.push([p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]);
            }
        }
    }
    out
}

/// Order-independent key so pairwise functions are exactly symmetric.
fn pair_order<T: Real>(a: &Box3D<T>, b: &Box3D<T>) -> bool {
    let ka = [a.x, a.y, a.z, a.l, a.w, a.h, a.theta];
    let kb = [b.x, b.y, b.z, b.l, b.w, b.h, b.theta];
    for (x, y) in ka.iter().zip(kb.iter()) {
        if x < y {
            return true;
        }
        if x > y {
            return false;
        }
    }
    true
}

/// Area of the footprint intersection of two boxes.
pub fn bev_intersection<T: Real>(a: &Box3D<T>, b: &Box3D<T>) -> T {
    let (a, b) = if pair_order(a, b) { (a, b) } else { (b, a) };
    let ra = (a.l * a.l + a.w * a.w).sqrt() / T::lit(2.0);
    let rb = (b.l * b.l + b.w * b.w).sqrt() / T::lit(2.0);
    let d = (a.x - b.x).hypot(a.y - b.y);
    if d >= ra + rb {
        return T::zero();
    }
    let poly = clip_convex(&a.bev_corners(), &b.bev_corners());
    polygon_area(&poly).max(T::zero())
}

pub fn iou_bev<T: Real>(a: &Box3D<T>, b: &Box3D<T>) -> T {
    let inter = bev_intersection(a, b);
    if inter <= T::zero() {
        return T::zero();
    }
    let union = a.bev_area() + b.bev_area() - inter;
    (inter / union).max(T::zero()).min(T::one())
}

pub fn iou_3d<T: Real>(a: &Box3D<T>, b: &Box3D<T>) -> T {
    let overlap_h = (a.z_max().min(b.z_max()) - a.z_min().max(b.z_min())).max(T::zero());
    if overlap_h <= T::zero() {
        return T::zero();
    }
    let inter = bev_intersection(a, b) * overlap_h;
    if inter <= T::zero() {
        return T::zero();
    }
    let union = a.volume() + b.volume() - inter;
    (inter / union).max(T::zero()).min(T::one())
}

/// Which overlap measure drives label matching and pseudo-label selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum IouVariant {
    #[default]
    Bev,
    #[serde(rename = "3d")]
    ThreeD,
}

impl IouVariant {
    pub fn iou<T: Real>(self, a: &Box3D<T>, b: &Box3D<T>) -> T {
        match self {
            IouVariant::Bev => iou_bev(a, b),
            IouVariant::ThreeD => iou_3d(a, b),
        }
    }
}
