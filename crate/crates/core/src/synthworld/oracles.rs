//! Stand-ins for the vision backbone, captioning model, text encoder and
//! open-vocabulary 2D detector. Every function is pure in its inputs.

use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson, StandardNormal};
use regex::Regex;

use super::codebook::{codebooks, C_IMG, C_TEXT, IMG_BG, IMG_POS, TXT_REGION};
use super::{hash_seed, BodyStyle, Color, ObjectSpec, Scene, SizeClass, SynthError};
use crate::geometry::{iou_2d, project_box, Box2D, CameraModel};

/// Norm of the image-feature noise relative to the attribute signal.
pub const IMAGE_NOISE: f64 = 0.15;
const POSITION_WEIGHT: f64 = 0.1;
const REGION_WEIGHT: f64 = 0.1;

fn box_words(b: &Box2D<f64>) -> [u64; 5] {
    [
        b.x_min.to_bits(),
        b.y_min.to_bits(),
        b.x_max.to_bits(),
        b.y_max.to_bits(),
        b.camera_id as u64,
    ]
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// Image feature of an object seen through `box2d`, with the default noise.
pub fn image_feature_oracle(box2d: &Box2D<f64>, obj: &ObjectSpec, cam_noise_seed: u64) -> Vec<f64> {
    image_feature_oracle_with(box2d, obj, cam_noise_seed, IMAGE_NOISE)
}

/// Image feature with an explicit relative noise level (0 disables noise).
///
/// The feature is the sum of the object's attribute codewords, a weak
/// component encoding the box center, and a noise vector whose norm is
/// `noise` times the attribute signal norm. The result is unit length.
pub fn image_feature_oracle_with(
    box2d: &Box2D<f64>,
    obj: &ObjectSpec,
    cam_noise_seed: u64,
    noise: f64,
) -> Vec<f64> {
    let cb = codebooks();
    let mut v = vec![0.0; C_IMG];
    let add = |v: &mut Vec<f64>, q: &[f64; C_IMG], s: f64| {
        for (x, qi) in v.iter_mut().zip(q) {
            *x += s * qi;
        }
    };
    let attrs = &obj.attributes;
    if let Some(c) = attrs.color() {
        add(&mut v, cb.image_color(c), 1.0);
    }
    if let Some(b) = attrs.body() {
        add(&mut v, cb.image_body(b), 1.0);
    }
    if let Some(s) = attrs.size() {
        add(&mut v, cb.image_size(s), 1.0);
    }
    let signal = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let (cx, cy) = box2d.center();
    add(&mut v, &cb.image[IMG_POS], POSITION_WEIGHT * cx / 1000.0);
    add(&mut v, &cb.image[IMG_POS + 1], POSITION_WEIGHT * cy / 1000.0);
    if noise > 0.0 {
        let mut parts = box_words(box2d).to_vec();
        parts.extend([obj.object_id as u64, cam_noise_seed, 0x1a6e]);
        let mut rng = ChaCha8Rng::seed_from_u64(hash_seed(&parts));
        let mut n: Vec<f64> = (0..C_IMG).map(|_| StandardNormal.sample(&mut rng)).collect();
        normalize(&mut n);
        let scale = noise * signal.max(1.0);
        for (x, ni) in v.iter_mut().zip(&n) {
            *x += scale * ni;
        }
    }
    normalize(&mut v);
    v
}

/// Feature of an object-free image region: a unit vector in the background
/// subspace, which is orthogonal to every attribute codeword.
pub fn background_feature_oracle(box2d: &Box2D<f64>, seed: u64) -> Vec<f64> {
    let cb = codebooks();
    let mut parts = box_words(box2d).to_vec();
    parts.extend([seed, 0xb6]);
    let mut rng = ChaCha8Rng::seed_from_u64(hash_seed(&parts));
    let mut v = vec![0.0; C_IMG];
    for i in IMG_BG {
        let c: f64 = StandardNormal.sample(&mut rng);
        for (x, qi) in v.iter_mut().zip(&cb.image[i]) {
            *x += c * qi;
        }
    }
    normalize(&mut v);
    v
}

/// Caption of an object seen through `box2d`.
pub fn text_description_oracle(obj: &ObjectSpec, box2d: &Box2D<f64>) -> Result<String, SynthError> {
    let (color, size, body) = obj.attributes.triple()?;
    Ok(format!(
        "a {color} {size} {body} car located in region ({},{},{},{})",
        box2d.x_min.round() as i64,
        box2d.y_min.round() as i64,
        box2d.x_max.round() as i64,
        box2d.y_max.round() as i64
    ))
}

fn caption_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"^a (\w+) (\w+) (\w+) car located in region \((-?\d+),(-?\d+),(-?\d+),(-?\d+)\)$")
            .expect("static pattern")
    })
}

/// Encodes a caption: attribute codewords plus a weak region component,
/// L2-normalized.
pub fn text_feature_oracle(description: &str) -> Result<Vec<f64>, SynthError> {
    let bad = || SynthError::Unparseable(description.to_string());
    let caps = caption_pattern().captures(description).ok_or_else(bad)?;
    let color = Color::from_word(&caps[1]).ok_or_else(bad)?;
    let size = SizeClass::from_word(&caps[2]).ok_or_else(bad)?;
    let body = BodyStyle::from_word(&caps[3]).ok_or_else(bad)?;
    let mut region = [0.0f64; 4];
    for (i, r) in region.iter_mut().enumerate() {
        *r = caps[4 + i].parse::<f64>().map_err(|_| bad())?;
    }
    let cx = (region[0] + region[2]) / 2.0;
    let cy = (region[1] + region[3]) / 2.0;
    let mut reg = [(cx * 0.01).cos(), (cx * 0.01).sin(), (cy * 0.01).cos(), (cy * 0.01).sin()];
    normalize(&mut reg);

    let cb = codebooks();
    let mut v = vec![0.0; C_TEXT];
    for q in [cb.text_color(color), cb.text_size(size), cb.text_body(body)] {
        for (x, qi) in v.iter_mut().zip(q) {
            *x += qi;
        }
    }
    for (k, r) in reg.iter().enumerate() {
        for (x, qi) in v.iter_mut().zip(&cb.text[TXT_REGION + k]) {
            *x += REGION_WEIGHT * r * qi;
        }
    }
    normalize(&mut v);
    Ok(v)
}

/// Error model of the mock open-vocabulary 2D detector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mock2dConfig {
    /// Expected false positives per camera image.
    pub fp_rate: f64,
    /// Standard deviation of the per-coordinate pixel noise.
    pub noise_px: f64,
    /// Probability that a visible object is not reported.
    pub miss_rate: f64,
}

impl Default for Mock2dConfig {
    fn default() -> Self {
        Self {
            fp_rate: 0.3,
            noise_px: 2.0,
            miss_rate: 0.1,
        }
    }
}

/// 2D detections in one camera: noisy projections of the visible labeled
/// objects, minus misses, plus uniformly placed false positives.
pub fn mock_2d_detector(
    scene: &Scene,
    cam: &CameraModel<f64>,
    cfg: &Mock2dConfig,
    seed: u64,
) -> Vec<Box2D<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(hash_seed(&[seed, scene.rng_seed, cam.id as u64, 0x2d]));
    let noise = (cfg.noise_px > 0.0).then(|| Normal::new(0.0, cfg.noise_px).expect("positive sigma"));
    let mut out = Vec::new();
    for obj in &scene.objects {
        let Some(mut b) = project_box(&obj.bbox, cam) else {
            continue;
        };
        if cfg.miss_rate > 0.0 && rng.gen_bool(cfg.miss_rate.min(1.0)) {
            continue;
        }
        if let Some(n) = &noise {
            let mut c = [b.x_min, b.y_min, b.x_max, b.y_max];
            for v in c.iter_mut() {
                *v += n.sample(&mut rng);
            }
            let (x0, x1) = (c[0].min(c[2]), c[0].max(c[2]).max(c[0].min(c[2]) + 1.0));
            let (y0, y1) = (c[1].min(c[3]), c[1].max(c[3]).max(c[1].min(c[3]) + 1.0));
            let mut nb = Box2D { x_min: x0, y_min: y0, x_max: x1, y_max: y1, ..b };
            let vis = nb.visible_area(cam.width, cam.height);
            if vis <= 0.0 {
                continue;
            }
            nb.truncation = (1.0 - vis / nb.area()).clamp(0.0, 1.0);
            b = nb;
        }
        out.push(b);
    }
    if cfg.fp_rate > 0.0 {
        let n_fp = Poisson::new(cfg.fp_rate).expect("positive rate").sample(&mut rng) as usize;
        for _ in 0..n_fp {
            let w = rng.gen_range(24.0..160.0f64).min(cam.width - 1.0);
            let h = rng.gen_range(24.0..120.0f64).min(cam.height - 1.0);
            let x0 = rng.gen_range(0.0..cam.width - w);
            let y0 = rng.gen_range(0.0..cam.height - h);
            out.push(Box2D {
                x_min: x0,
                y_min: y0,
                x_max: x0 + w,
                y_max: y0 + h,
                camera_id: cam.id,
                truncation: 0.0,
            });
        }
    }
    out
}

/// Background boxes fully inside the image that do not touch any box in
/// `gt`. Each box gets 200 placement attempts; failures are skipped.
pub fn sample_background_boxes(
    gt: &[Box2D<f64>],
    cam: &CameraModel<f64>,
    n: usize,
    seed: u64,
) -> Vec<Box2D<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(hash_seed(&[seed, cam.id as u64, 0xbb]));
    let max_w = 128.0f64.min(cam.width);
    let max_h = 128.0f64.min(cam.height);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        for _ in 0..200 {
            let w = rng.gen_range(24.0f64.min(max_w / 2.0)..=max_w);
            let h = rng.gen_range(24.0f64.min(max_h / 2.0)..=max_h);
            let x0 = rng.gen_range(0.0..=cam.width - w);
            let y0 = rng.gen_range(0.0..=cam.height - h);
            let b = Box2D {
                x_min: x0,
                y_min: y0,
                x_max: x0 + w,
                y_max: y0 + h,
                camera_id: cam.id,
                truncation: 0.0,
            };
            if gt.iter().all(|g| iou_2d(g, &b) == 0.0) {
                out.push(b);
                break;
            }
        }
    }
    out
}

/// The labeled object whose projection into `box2d`'s camera best overlaps
/// it, provided the 2D IoU reaches `min_iou`. Returns the object index and
/// its projected box.
pub fn region_object(scene: &Scene, box2d: &Box2D<f64>, min_iou: f64) -> Option<(usize, Box2D<f64>)> {
    let cam = scene.cameras.iter().find(|c| c.id == box2d.camera_id)?;
    let mut best: Option<(usize, Box2D<f64>, f64)> = None;
    for (i, o) in scene.objects.iter().enumerate() {
        if let Some(p) = project_box(&o.bbox, cam) {
            let iou = iou_2d(&p, box2d);
            if iou >= min_iou && best.as_ref().map_or(true, |b| iou > b.2) {
                best = Some((i, p, iou));
            }
        }
    }
    best.map(|(i, p, _)| (i, p))
}
