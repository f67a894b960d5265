//! Independent reference implementations and the measurement loops built
//! on them. Each `*_suite` returns numbers; callers decide pass or fail.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use uda3d::evalkit::average_precision;
use uda3d::geometry::{iou_bev, project_box, select_camera_view, Box2D, Box3D, CameraModel, IouVariant};
use uda3d::selftrain::{ema_update_in_place, merge_pseudo_labels};
use uda3d::synthworld::{
    generate_scene, image_feature_oracle_with, text_description_oracle, text_feature_oracle, AttributeSet, BodyStyle,
    Color, DomainConfig, ObjectSpec, Scene, SizeClass,
};
use uda3d::toydet::{Detection, DetectorParams};

pub const PITCH: f64 = 0.005;

/// Horizontal extent of the rectangle `b` on the line `y = yc`, from the
/// four half-planes of its footprint.
fn row_interval(b: &Box3D<f64>, yc: f64) -> Option<(f64, f64)> {
    let (s, c) = b.theta.sin_cos();
    // local u = c*(x-bx) + s*(y-by), v = -s*(x-bx) + c*(y-by)
    let dy = yc - b.y;
    let mut lo = f64::NEG_INFINITY;
    let mut hi = f64::INFINITY;
    for (coef, off, half) in [(c, s * dy, b.l / 2.0), (-s, c * dy, b.w / 2.0)] {
        // |coef * dx + off| <= half
        if coef.abs() < 1e-15 {
            if off.abs() > half {
                return None;
            }
            continue;
        }
        let a = (-half - off) / coef;
        let z = (half - off) / coef;
        lo = lo.max(a.min(z));
        hi = hi.min(a.max(z));
    }
    (lo < hi).then_some((b.x + lo, b.x + hi))
}

/// Cells of pitch `PITCH` whose centers lie in the interval.
fn cells_in(lo: f64, hi: f64, x0: f64) -> i64 {
    let first = ((lo - x0) / PITCH - 0.5).ceil() as i64;
    let last = ((hi - x0) / PITCH - 0.5).floor() as i64;
    (last - first + 1).max(0)
}

/// Rasterized BEV IoU: counts grid cells (centers) covered by each box and
/// by both over the bounding box of the union.
pub fn raster_iou(a: &Box3D<f64>, b: &Box3D<f64>) -> f64 {
    let ys = a.bev_corners().iter().chain(b.bev_corners().iter()).map(|p| p[1]).collect::<Vec<_>>();
    let xs = a.bev_corners().iter().chain(b.bev_corners().iter()).map(|p| p[0]).collect::<Vec<_>>();
    let y0 = ys.iter().cloned().fold(f64::INFINITY, f64::min);
    let y1 = ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let x0 = xs.iter().cloned().fold(f64::INFINITY, f64::min);
    let rows = ((y1 - y0) / PITCH).ceil() as usize;
    let (mut na, mut nb, mut nab) = (0i64, 0i64, 0i64);
    for r in 0..rows {
        let yc = y0 + (r as f64 + 0.5) * PITCH;
        let ia = row_interval(a, yc);
        let ib = row_interval(b, yc);
        if let Some((l, h)) = ia {
            na += cells_in(l, h, x0);
        }
        if let Some((l, h)) = ib {
            nb += cells_in(l, h, x0);
        }
        if let (Some(p), Some(q)) = (ia, ib) {
            let (l, h) = (p.0.max(q.0), p.1.min(q.1));
            if l < h {
                nab += cells_in(l, h, x0);
            }
        }
    }
    nab as f64 / (na + nb - nab) as f64
}

pub fn random_box(rng: &mut ChaCha8Rng, cx: f64, cy: f64, spread: f64) -> Box3D<f64> {
    Box3D::new(
        cx + rng.gen_range(-spread..spread),
        cy + rng.gen_range(-spread..spread),
        rng.gen_range(-0.5..1.5),
        rng.gen_range(0.5..5.0),
        rng.gen_range(0.5..2.5),
        rng.gen_range(0.5..2.0),
        rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI),
    )
    .unwrap()
}

pub fn random_camera(rng: &mut ChaCha8Rng, id: u32) -> CameraModel<f64> {
    CameraModel::looking_along(
        id,
        [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(1.0..2.0)],
        rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI),
        rng.gen_range(300.0..1200.0),
        rng.gen_range(400.0..1600.0),
        rng.gen_range(300.0..900.0),
    )
    .unwrap()
}

/// Worst |iou_bev - raster| over `n` overlapping-biased pairs, and how
/// many of them overlap at all.
pub fn raster_suite(n: usize, seed: u64) -> (f64, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut overlapping = 0;
    for _ in 0..n {
        let a = random_box(&mut rng, 0.0, 0.0, 0.5);
        let b = random_box(&mut rng, a.x, a.y, 2.0);
        let exact = iou_bev(&a, &b);
        overlapping += usize::from(exact > 0.0);
        worst = worst.max((exact - raster_iou(&a, &b)).abs());
    }
    (worst, overlapping)
}

/// Projects `n` random boxes into random cameras and measures how far any
/// positive-depth corner, projected by hand, falls outside the hull.
/// Returns (worst excess in pixels, boxes projected, worst truncation
/// outside [0, 1]).
pub fn containment_suite(n: usize, seed: u64) -> (f64, usize, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut worst, mut projected, mut bad_trunc) = (0.0f64, 0, 0.0f64);
    for _ in 0..n {
        let cam = random_camera(&mut rng, 0);
        let b = random_box(&mut rng, 0.0, 0.0, 25.0);
        let Some(hull) = project_box(&b, &cam) else {
            continue;
        };
        projected += 1;
        bad_trunc = bad_trunc.max((-hull.truncation).max(hull.truncation - 1.0));
        for c in b.corners() {
            let pc = cam.ego_to_camera(c);
            if pc[2] <= 1e-6 {
                continue;
            }
            // pinhole by hand: u = fx * x / z + s * y / z + cx
            let u = cam.k[0][0] * pc[0] / pc[2] + cam.k[0][1] * pc[1] / pc[2] + cam.k[0][2];
            let v = cam.k[1][1] * pc[1] / pc[2] + cam.k[1][2];
            let out = (hull.x_min - u).max(u - hull.x_max).max(hull.y_min - v).max(v - hull.y_max);
            worst = worst.max(out);
        }
    }
    (worst, projected, bad_trunc)
}

/// Worst deviation of |t_k - s| from eps^k |t_0 - s| over `steps` EMA
/// updates, relative to the operand magnitude (the scale of rounding).
pub fn ema_suite(t0: &DetectorParams<f64>, s: &DetectorParams<f64>, eps: f64, steps: i32) -> f64 {
    let (x0, xs) = (t0.flat(), s.flat());
    let mut t = t0.clone();
    let mut worst: f64 = 0.0;
    for k in 1..=steps {
        ema_update_in_place(&mut t, s, eps).unwrap();
        let decay = eps.powi(k);
        for ((a, b), c) in t.flat().iter().zip(&xs).zip(&x0) {
            let want = decay * (c - b).abs();
            let got = (a - b).abs();
            let scale = c.abs().max(b.abs()).max(f64::MIN_POSITIVE);
            worst = worst.max((got - want).abs() / scale);
        }
    }
    worst
}

pub fn bev_box(x: f64, y: f64, theta: f64) -> Box3D<f64> {
    Box3D::new(x, y, 0.8, 4.0, 1.8, 1.5, theta).unwrap()
}

/// Pseudo-label selection written out directly: an image box is kept when
/// it is at least `tau` from the sensor and overlaps no teacher box by more
/// than `xi`.
pub fn brute_force_selection(teacher: &[Box3D<f64>], image: &[Box3D<f64>], tau: f64, xi: f64) -> Vec<Box3D<f64>> {
    let mut out = teacher.to_vec();
    'next: for b in image {
        if (b.x * b.x + b.y * b.y).sqrt() < tau {
            continue;
        }
        for t in teacher {
            if iou_bev(b, t) > xi {
                continue 'next;
            }
        }
        out.push(*b);
    }
    out
}

/// Random teacher/image configurations: (configs whose merge equals the
/// brute force, configs that kept at least one image box).
pub fn merge_suite(n: usize, seed: u64) -> (usize, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut equal, mut kept_some) = (0, 0);
    for _ in 0..n {
        let random = |k: usize, rng: &mut ChaCha8Rng| -> Vec<Box3D<f64>> {
            (0..k)
                .map(|_| bev_box(rng.gen_range(0.0..60.0), rng.gen_range(-20.0..20.0), rng.gen_range(-3.1..3.1)))
                .collect()
        };
        let teacher = random(rng.gen_range(0..8), &mut rng);
        let mut image = random(rng.gen_range(0..8), &mut rng);
        // perturbed teacher copies exercise the overlap test near xi
        for t in &teacher {
            if rng.gen_bool(0.5) {
                image.push(bev_box(t.x + rng.gen_range(-2.0..2.0), t.y + rng.gen_range(-1.0..1.0), t.theta));
            }
        }
        let tau = rng.gen_range(0.0..50.0);
        let xi = rng.gen_range(0.0..1.0);
        let set = merge_pseudo_labels(&teacher, &image, tau, xi, IouVariant::Bev);
        equal += usize::from(set.merged == brute_force_selection(&teacher, &image, tau, xi));
        kept_some += usize::from(set.merged.len() > teacher.len());
    }
    (equal, kept_some)
}

pub const GT_X: [f64; 4] = [0.0, 6.0, 12.0, 18.0];
/// Shifts along the car axis: IoU 1, 3.5/4.5 and 2.8/5.2.
pub const SHIFTS: [f64; 3] = [0.0, 0.5, 1.2];
pub const CONFS: [f64; 2] = [0.8, 0.4];

pub fn car(x: f64, y: f64) -> Box3D<f64> {
    Box3D::new(x, y, 0.8, 4.0, 2.0, 1.5, 0.0).unwrap()
}

pub fn det(b: Box3D<f64>, c: f64) -> Detection<f64> {
    Detection {
        bbox: b,
        confidence: c,
        f3d: vec![],
        local: vec![],
        logit: 0.0,
    }
}

/// Independent AP: for every distinct confidence cut, re-run greedy
/// matching on the detections above it, then sample the interpolated
/// precision at the 40 recall positions.
pub fn brute_force_ap(dets: &[(Box3D<f64>, f64)], gts: &[Box3D<f64>], thr: f64) -> f64 {
    if gts.is_empty() {
        return 0.0;
    }
    let mut idx: Vec<usize> = (0..dets.len()).collect();
    idx.sort_by(|&a, &b| dets[b].1.partial_cmp(&dets[a].1).unwrap());
    let mut cuts: Vec<f64> = dets.iter().map(|d| d.1).collect();
    cuts.sort_by(|a, b| b.partial_cmp(a).unwrap());
    cuts.dedup();
    let mut pr = Vec::new();
    for cut in cuts {
        let mut taken = vec![false; gts.len()];
        let (mut tp, mut n) = (0, 0);
        for &i in idx.iter().filter(|&&i| dets[i].1 >= cut) {
            n += 1;
            let ious: Vec<f64> = gts.iter().map(|g| iou_bev(&dets[i].0, g)).collect();
            let mut best = None;
            for g in 0..gts.len() {
                if !taken[g] && ious[g] >= thr && best.map_or(true, |b: usize| ious[g] > ious[b]) {
                    best = Some(g);
                }
            }
            if let Some(g) = best {
                taken[g] = true;
                tp += 1;
            }
        }
        pr.push((tp as f64 / gts.len() as f64, tp as f64 / n as f64));
    }
    let mut total = 0.0;
    for k in 1..=40 {
        let r = k as f64 / 40.0;
        total += pr.iter().filter(|p| p.0 >= r - 1e-12).map(|p| p.1).fold(0.0, f64::max);
    }
    total * 100.0 / 40.0
}

/// Every detection multiset of size <= 4 over the placements (on a ground
/// truth with each shift, or far away) and confidences, for 0..=4 ground
/// truths. Returns (configurations, worst |AP - brute force|).
pub fn ap_enumeration_suite() -> (usize, f64) {
    let mut configs = 0usize;
    let mut worst: f64 = 0.0;
    for n_gt in 0..=4 {
        let gts: Vec<Box3D<f64>> = GT_X[..n_gt].iter().map(|&x| car(x, 0.0)).collect();
        let mut spots: Vec<Box3D<f64>> = Vec::new();
        for &x in &GT_X[..n_gt] {
            for s in SHIFTS {
                spots.push(car(x + s, 0.0));
            }
        }
        spots.push(car(40.0, 10.0));
        let choices: Vec<(Box3D<f64>, f64)> = spots.iter().flat_map(|b| CONFS.iter().map(move |c| (*b, *c))).collect();
        for n_det in 0..=4u32 {
            for code in 0..choices.len().pow(n_det) {
                let mut c = code;
                let dets: Vec<(Box3D<f64>, f64)> = (0..n_det)
                    .map(|_| {
                        let d = choices[c % choices.len()];
                        c /= choices.len();
                        d
                    })
                    .collect();
                let as_dets: Vec<Detection<f64>> = dets.iter().map(|d| det(d.0, d.1)).collect();
                let got = average_precision(&as_dets, &gts, 0.7, IouVariant::Bev);
                worst = worst.max((got - brute_force_ap(&dets, &gts, 0.7)).abs());
                configs += 1;
            }
        }
    }
    (configs, worst)
}

pub fn cos(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    d / (na * nb)
}

pub fn random_attrs(rng: &mut ChaCha8Rng) -> AttributeSet {
    AttributeSet::new(
        Color::ALL[rng.gen_range(0..Color::ALL.len())],
        SizeClass::ALL[rng.gen_range(0..SizeClass::ALL.len())],
        BodyStyle::ALL[rng.gen_range(0..BodyStyle::ALL.len())],
    )
}

/// Cross-domain cosine similarities with noise disabled.
#[derive(Debug, Default)]
pub struct BridgeCosines {
    pub same_img: Vec<f64>,
    pub same_txt: Vec<f64>,
    pub disjoint_img: Vec<f64>,
    pub disjoint_txt: Vec<f64>,
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Pairs every visible source object with every visible target object
/// over `scenes` scene pairs, plus synthetic same-attribute pairs at
/// random image positions.
pub fn bridge_suite(scenes: u64, seed: u64) -> BridgeCosines {
    let cfg_s = DomainConfig::source();
    let cfg_t = DomainConfig::target();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = BridgeCosines::default();
    let views = |s: &Scene| -> Vec<(ObjectSpec, Box2D<f64>)> {
        s.objects
            .iter()
            .filter_map(|o| select_camera_view(&o.bbox, &s.cameras).unwrap().map(|(_, b)| (o.clone(), b)))
            .collect()
    };
    for k in 0..scenes {
        let a = generate_scene(&cfg_s, k).unwrap();
        let b = generate_scene(&cfg_t, 1000 + k).unwrap();
        for (oa, ba) in &views(&a) {
            for (ob, bb) in &views(&b) {
                let overlap = oa.attributes.overlap(&ob.attributes);
                if overlap != 3 && overlap != 0 {
                    continue;
                }
                let fa = image_feature_oracle_with(ba, oa, 1, 0.0);
                let fb = image_feature_oracle_with(bb, ob, 2, 0.0);
                let ta = text_feature_oracle(&text_description_oracle(oa, ba).unwrap()).unwrap();
                let tb = text_feature_oracle(&text_description_oracle(ob, bb).unwrap()).unwrap();
                if overlap == 3 {
                    out.same_img.push(cos(&fa, &fb));
                    out.same_txt.push(cos(&ta, &tb));
                } else {
                    out.disjoint_img.push(cos(&fa, &fb));
                    out.disjoint_txt.push(cos(&ta, &tb));
                }
            }
        }
    }
    // guarantee identical-attribute pairs even if the scenes had none
    for _ in 0..50 {
        let attrs = random_attrs(&mut rng);
        let bx = |x: f64| Box2D::new(x, 100.0, x + 60.0, 150.0, 0, 0.0).unwrap();
        let mk = |id| ObjectSpec {
            object_id: id,
            bbox: Box3D::new(10.0, 0.0, 0.8, 4.5, 1.8, 1.6, 0.0).unwrap(),
            attributes: attrs.clone(),
        };
        let x0 = rng.gen_range(0.0..500.0);
        let x1 = rng.gen_range(0.0..500.0);
        out.same_img.push(cos(
            &image_feature_oracle_with(&bx(x0), &mk(1), 0, 0.0),
            &image_feature_oracle_with(&bx(x1), &mk(2), 0, 0.0),
        ));
        out.same_txt.push(cos(
            &text_feature_oracle(&text_description_oracle(&mk(1), &bx(x0)).unwrap()).unwrap(),
            &text_feature_oracle(&text_description_oracle(&mk(2), &bx(x1)).unwrap()).unwrap(),
        ));
    }
    out
}
