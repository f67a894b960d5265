//! Scene placement and LiDAR ray casting.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};

use super::{
    hash_seed, nominal_dims, AttributeSet, BodyStyle, Color, DomainConfig, LidarPoint, ObjectSpec,
    Scene, SizeClass, SynthError, OWNER_CLUTTER, OWNER_GROUND,
};
use crate::geometry::{bev_intersection, Box3D};

/// Sensor height above the ground plane, meters.
pub const LIDAR_HEIGHT: f64 = 1.8;
const ELEV_MIN_DEG: f64 = -24.0;
const ELEV_SPAN_DEG: f64 = 26.0;
const MAX_RANGE: f64 = 90.0;
const PLACEMENT_ATTEMPTS: usize = 1000;
/// Elevation offset applied to each duplicated ring when upsampling, degrees.
const UPSAMPLE_JITTER_DEG: f64 = 0.1;

/// Elevation of ring `i` in radians. Layouts nest: ring `2i` of a `2B`-beam
/// sensor coincides with ring `i` of a `B`-beam one.
pub fn ring_elevation(i: usize, beams: usize) -> f64 {
    (ELEV_MIN_DEG + i as f64 * ELEV_SPAN_DEG / beams as f64).to_radians()
}

struct Solid {
    bbox: Box3D<f64>,
    owner: i32,
    az_lo: f64,
    az_hi: f64,
}

fn in_workspace(b: &Box3D<f64>) -> bool {
    b.bev_corners()
        .iter()
        .all(|c| c[0] > 0.5 && c[0] < 79.5 && c[1].abs() < 39.5)
}

fn overlaps_any(b: &Box3D<f64>, placed: &[Box3D<f64>]) -> bool {
    let mut grown = *b;
    grown.l += 0.6;
    grown.w += 0.6;
    placed.iter().any(|p| bev_intersection(&grown, p) > 0.0)
}

fn sample_heading(rng: &mut ChaCha8Rng) -> f64 {
    if rng.gen_bool(0.7) {
        let base = if rng.gen_bool(0.5) { 0.0 } else { std::f64::consts::PI };
        base + rng.gen_range(-0.15..0.15)
    } else {
        rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI)
    }
}

fn sample_center(rng: &mut ChaCha8Rng, far_bias: f64) -> (f64, f64) {
    let r = if rng.gen_bool(far_bias) {
        rng.gen_range(30.0..72.0)
    } else {
        rng.gen_range(5.0..30.0)
    };
    let az = rng.gen_range(-65f64..65.0).to_radians();
    (r * az.cos(), r * az.sin())
}

fn sample_car(rng: &mut ChaCha8Rng, cfg: &DomainConfig) -> (Box3D<f64>, AttributeSet) {
    let color = Color::ALL[rng.gen_range(0..Color::ALL.len())];
    let body = {
        let u: f64 = rng.gen();
        if u < 0.4 {
            BodyStyle::Sedan
        } else if u < 0.65 {
            BodyStyle::Suv
        } else if u < 0.85 {
            BodyStyle::Hatchback
        } else {
            BodyStyle::Van
        }
    };
    let size = SizeClass::ALL[rng.gen_range(0..SizeClass::ALL.len())];
    let dims = nominal_dims(size, body);
    let mut ext = [0.0; 3];
    for i in 0..3 {
        ext[i] = dims[i] * rng.gen_range(0.97..1.03) * cfg.size_shift[i];
    }
    let (x, y) = sample_center(rng, cfg.far_bias);
    let theta = sample_heading(rng);
    let b = Box3D::new(x, y, ext[2] / 2.0, ext[0], ext[1], ext[2], theta).expect("positive extents");
    (b, AttributeSet::new(color, size, body))
}

fn sample_clutter(rng: &mut ChaCha8Rng) -> Box3D<f64> {
    let (l, w, h) = match rng.gen_range(0..4) {
        0 => (0.3, 0.3, rng.gen_range(2.5..4.0)),
        1 => (rng.gen_range(0.8..2.0), rng.gen_range(0.8..2.0), rng.gen_range(0.5..1.2)),
        2 => (0.6, 0.6, rng.gen_range(1.6..1.9)),
        _ => (rng.gen_range(3.0..6.0), 0.3, rng.gen_range(1.0..2.0)),
    };
    let r = rng.gen_range(4.0..75.0);
    let az = rng.gen_range(-70f64..70.0).to_radians();
    let theta = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
    Box3D::new(r * az.cos(), r * az.sin(), h / 2.0, l, w, h, theta).expect("positive extents")
}

/// Ray/box entry distance via the slab test in the box frame.
fn ray_box(origin: [f64; 3], dir: [f64; 3], b: &Box3D<f64>) -> Option<f64> {
    let o = b.ego_to_local(origin);
    let (s, c) = b.theta.sin_cos();
    let d = [c * dir[0] + s * dir[1], -s * dir[0] + c * dir[1], dir[2]];
    let half = [b.l / 2.0, b.w / 2.0, b.h / 2.0];
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    for i in 0..3 {
        if d[i].abs() < 1e-12 {
            if o[i].abs() > half[i] {
                return None;
            }
        } else {
            let a = (-half[i] - o[i]) / d[i];
            let bb = (half[i] - o[i]) / d[i];
            t0 = t0.max(a.min(bb));
            t1 = t1.min(a.max(bb));
        }
    }
    if t1 >= t0 && t0 > 0.0 {
        Some(t0)
    } else {
        None
    }
}

/// Generates one scene. Object placement draws from a random stream that is
/// independent of the sensor configuration, so two configs differing only in
/// beam layout see the same objects.
pub fn generate_scene(cfg: &DomainConfig, seed: u64) -> Result<Scene, SynthError> {
    cfg.validate()?;
    let mut place_rng = ChaCha8Rng::seed_from_u64(hash_seed(&[seed, 1]));
    let mut sensor_rng = ChaCha8Rng::seed_from_u64(hash_seed(&[seed, 2, cfg.beam_count as u64]));

    let n_objects = draw_count(&mut place_rng, cfg.object_density);
    let n_clutter = draw_count(&mut place_rng, cfg.clutter_density);

    let mut placed: Vec<Box3D<f64>> = Vec::new();
    let mut objects: Vec<ObjectSpec> = Vec::new();
    'objects: for k in 0..n_objects {
        for _ in 0..PLACEMENT_ATTEMPTS {
            let (b, attrs) = sample_car(&mut place_rng, cfg);
            if in_workspace(&b) && !overlaps_any(&b, &placed) {
                placed.push(b);
                objects.push(ObjectSpec {
                    object_id: k as u32,
                    bbox: b,
                    attributes: attrs,
                });
                continue 'objects;
            }
        }
        log::warn!(
            "scene seed {seed}: placement gave up after {PLACEMENT_ATTEMPTS} attempts, {} of {n_objects} objects placed",
            objects.len()
        );
        break;
    }
    let mut clutter = Vec::new();
    for _ in 0..n_clutter {
        for _ in 0..PLACEMENT_ATTEMPTS {
            let b = sample_clutter(&mut place_rng);
            if in_workspace(&b) && !overlaps_any(&b, &placed) {
                placed.push(b);
                clutter.push(b);
                break;
            }
        }
    }

    let mut solids: Vec<Solid> = Vec::new();
    for (i, o) in objects.iter().enumerate() {
        solids.push(solid(o.bbox, i as i32));
    }
    for b in &clutter {
        solids.push(solid(*b, OWNER_CLUTTER));
    }

    let step = cfg.azimuth_step_deg.to_radians();
    let az_start = -std::f64::consts::FRAC_PI_2;
    let n_cols = (std::f64::consts::PI / step).floor() as usize;
    let mut columns: Vec<Vec<usize>> = vec![Vec::new(); n_cols];
    for (si, s) in solids.iter().enumerate() {
        let lo = (((s.az_lo - az_start) / step).floor().max(0.0)) as usize;
        let hi = (((s.az_hi - az_start) / step).ceil() as usize).min(n_cols);
        for col in columns.iter_mut().take(hi).skip(lo) {
            col.push(si);
        }
    }

    let dropped = (cfg.dropout_rate * cfg.beam_count as f64).round() as usize;
    let mut active = vec![true; cfg.beam_count];
    if dropped > 0 {
        for r in sample(&mut sensor_rng, cfg.beam_count, dropped) {
            active[r] = false;
        }
    }

    let noise = if cfg.point_noise_sigma > 0.0 {
        Some(Normal::new(0.0, cfg.point_noise_sigma).expect("positive sigma"))
    } else {
        None
    };
    let origin = [0.0, 0.0, LIDAR_HEIGHT];
    let mut points = Vec::new();
    for (ring, _) in active.iter().enumerate().filter(|(_, a)| **a) {
        let elev = ring_elevation(ring, cfg.beam_count);
        let (se, ce) = elev.sin_cos();
        for (j, col) in columns.iter().enumerate() {
            let az = az_start + (j as f64 + 0.5) * step;
            let (sa, ca) = az.sin_cos();
            let dir = [ce * ca, ce * sa, se];
            let mut best_t = if se < 0.0 { LIDAR_HEIGHT / -se } else { f64::INFINITY };
            let mut owner = OWNER_GROUND;
            for &si in col {
                if let Some(t) = ray_box(origin, dir, &solids[si].bbox) {
                    if t < best_t {
                        best_t = t;
                        owner = solids[si].owner;
                    }
                }
            }
            if best_t > MAX_RANGE {
                continue;
            }
            let mut p = [
                origin[0] + best_t * dir[0],
                origin[1] + best_t * dir[1],
                origin[2] + best_t * dir[2],
            ];
            if let Some(n) = &noise {
                for v in p.iter_mut() {
                    *v += n.sample(&mut sensor_rng);
                }
            }
            points.push(LidarPoint {
                x: p[0] as f32,
                y: p[1] as f32,
                z: p[2] as f32,
                ring: ring as u16,
                owner,
            });
        }
    }

    // Labels without a single return are dropped, as annotation tools do.
    let mut counts = vec![0usize; objects.len()];
    for p in &points {
        if p.owner >= 0 {
            counts[p.owner as usize] += 1;
        }
    }
    let mut remap = vec![-1i32; objects.len()];
    let mut kept = Vec::new();
    for (i, o) in objects.into_iter().enumerate() {
        if counts[i] > 0 {
            remap[i] = kept.len() as i32;
            kept.push(o);
        }
    }
    for p in points.iter_mut() {
        if p.owner >= 0 {
            p.owner = remap[p.owner as usize];
        }
    }

    Ok(Scene {
        scene_id: 0,
        domain_tag: cfg.tag,
        rng_seed: seed,
        beam_count: cfg.beam_count,
        points,
        objects: kept,
        cameras: cfg.camera_rig.clone(),
    })
}

fn draw_count(rng: &mut ChaCha8Rng, mean: f64) -> usize {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).expect("positive mean").sample(rng) as usize
}

fn solid(bbox: Box3D<f64>, owner: i32) -> Solid {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for c in bbox.bev_corners() {
        let a = c[1].atan2(c[0]);
        lo = lo.min(a);
        hi = hi.max(a);
    }
    Solid {
        bbox,
        owner,
        az_lo: lo,
        az_hi: hi,
    }
}

/// Changes the ring layout of a sweep.
///
/// Downsampling keeps the evenly spaced rings `floor(k * source / target)`
/// and renumbers them `k`. Upsampling maps each ring onto consecutive new
/// rings; copies after the first are rotated upward about the sensor by a
/// small fixed elevation step.
pub fn beam_resample(
    points: &[LidarPoint],
    source_beams: usize,
    target_beams: usize,
) -> Result<Vec<LidarPoint>, SynthError> {
    if target_beams < 2 {
        return Err(SynthError::TooFewBeams(target_beams));
    }
    if let Some(p) = points.iter().find(|p| p.ring as usize >= source_beams) {
        return Err(SynthError::UnknownRing {
            ring: p.ring,
            beams: source_beams,
        });
    }
    if target_beams == source_beams {
        return Ok(points.to_vec());
    }
    if target_beams < source_beams {
        let mut map = vec![None; source_beams];
        for k in 0..target_beams {
            map[k * source_beams / target_beams] = Some(k as u16);
        }
        return Ok(points
            .iter()
            .filter_map(|p| map[p.ring as usize].map(|r| LidarPoint { ring: r, ..*p }))
            .collect());
    }
    let mut out = Vec::with_capacity(points.len() * target_beams / source_beams + 1);
    for p in points {
        let r = p.ring as usize;
        let first = r * target_beams / source_beams;
        let last = (r + 1) * target_beams / source_beams;
        for (m, new_ring) in (first..last).enumerate() {
            let q = if m == 0 {
                *p
            } else {
                raise_elevation(p, (UPSAMPLE_JITTER_DEG * m as f64).to_radians())
            };
            out.push(LidarPoint {
                ring: new_ring as u16,
                ..q
            });
        }
    }
    Ok(out)
}

fn raise_elevation(p: &LidarPoint, delta: f64) -> LidarPoint {
    let dx = p.x as f64;
    let dy = p.y as f64;
    let dz = p.z as f64 - LIDAR_HEIGHT;
    let horiz = dx.hypot(dy);
    let range = horiz.hypot(dz);
    let elev = dz.atan2(horiz) + delta;
    let new_h = range * elev.cos();
    let scale = if horiz > 1e-9 { new_h / horiz } else { 1.0 };
    LidarPoint {
        x: (dx * scale) as f32,
        y: (dy * scale) as f32,
        z: (LIDAR_HEIGHT + range * elev.sin()) as f32,
        ..*p
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn pts(rings: &[u16]) -> Vec<LidarPoint> {
        rings
            .iter()
            .enumerate()
            .map(|(i, &r)| LidarPoint {
                x: 10.0 + i as f32,
                y: 0.0,
                z: 0.5,
                ring: r,
                owner: -1,
            })
            .collect()
    }

    #[test]
    fn resample_identity() {
        let p = pts(&[0, 5, 63, 12]);
        assert_eq!(beam_resample(&p, 64, 64).unwrap(), p);
    }

    #[test]
    fn resample_keeps_even_rings() {
        let rings: Vec<u16> = (0..64).collect();
        let out = beam_resample(&pts(&rings), 64, 32).unwrap();
        assert_eq!(out.len(), 32);
        for (k, p) in out.iter().enumerate() {
            assert_eq!(p.ring as usize, k);
            // the survivor of ring 2k sits at x = 10 + 2k
            assert_eq!(p.x, 10.0 + 2.0 * k as f32);
        }
        let distinct: BTreeSet<u16> = out.iter().map(|p| p.ring).collect();
        assert_eq!(distinct.len(), 32);
    }

    #[test]
    fn resample_upsamples_with_duplicates() {
        let rings: Vec<u16> = (0..32).collect();
        let out = beam_resample(&pts(&rings), 32, 64).unwrap();
        assert_eq!(out.len(), 64);
        let distinct: BTreeSet<u16> = out.iter().map(|p| p.ring).collect();
        assert_eq!(distinct.len(), 64);
        // first copy is untouched
        assert_eq!(out[0].z, 0.5);
        assert!(out[1].z > 0.5);
    }

    #[test]
    fn resample_errors() {
        assert!(matches!(
            beam_resample(&pts(&[70]), 64, 32),
            Err(SynthError::UnknownRing { ring: 70, .. })
        ));
        assert!(matches!(beam_resample(&pts(&[1]), 64, 1), Err(SynthError::TooFewBeams(1))));
    }

    #[test]
    fn ring_layouts_nest() {
        for i in 0..32 {
            assert!((ring_elevation(i, 32) - ring_elevation(2 * i, 64)).abs() < 1e-15);
        }
    }

    #[test]
    fn slab_test_hits_front_face() {
        let b = Box3D::new(10.0, 0.0, 0.75, 4.0, 2.0, 1.5, 0.0).unwrap();
        let t = ray_box([0.0, 0.0, 0.75], [1.0, 0.0, 0.0], &b).unwrap();
        assert!((t - 8.0).abs() < 1e-12);
        assert!(ray_box([0.0, 0.0, 0.75], [0.0, 1.0, 0.0], &b).is_none());
    }
}
