mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uda3d::alignfuse::{fuse, project_heads, FuseWeights};
use uda3d::evalkit::{dataset_ap, detector_frames, greedy_match};
use uda3d::geometry::{Box3D, IouVariant};
use uda3d::selftrain::{pretrain_as, AblationFlags, TrainConfig};
use uda3d::synthworld::{generate_split, DomainConfig, LidarPoint};
use uda3d::toydet::{
    detect, encode_bev, extract_box_feature, pillar_stats, pool_box, propose, refine_proposals, BevGrid, Checkpoint,
    DetError, DetectorConfig, DetectorParams, GridConfig, Mode, NamedTensor,
};

use common::{busy_params, scene_fixture, small_config};

fn point(x: f32, y: f32, z: f32) -> LidarPoint {
    LidarPoint { x, y, z, ring: 0, owner: -1 }
}

#[test]
fn encoder_examples() {
    let cfg = small_config();
    let params = DetectorParams::<f64>::new(&cfg, 1);
    let empty = encode_bev(&[], &params, &cfg);
    assert!(empty.dense().iter().all(|v| *v == 0.0));

    let one = encode_bev(&[point(10.1, 0.2, 0.9)], &params, &cfg);
    assert_eq!(one.nonzero_cells().len(), 1);

    // a cloud and its copy one cell further along x
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cloud: Vec<LidarPoint> = (0..300)
        .map(|_| point(rng.gen_range(6.0..20.0), rng.gen_range(-8.0..8.0), rng.gen_range(-1.5..2.0)))
        .collect();
    let pitch = cfg.grid.resolution as f32;
    let moved: Vec<LidarPoint> = cloud.iter().map(|p| point(p.x + pitch, p.y, p.z)).collect();
    let a = pillar_stats::<f64>(&cloud, &cfg.grid);
    let b = pillar_stats::<f64>(&moved, &cfg.grid);
    let shifted: Vec<u32> = a.cells.iter().map(|c| c + 1).collect();
    assert_eq!(shifted, b.cells);
}

fn constant_grid(cfg: &GridConfig, value: &[f64]) -> BevGrid<f64> {
    let n = cfg.cells();
    BevGrid {
        grid: *cfg,
        channels: value.len(),
        index: (0..n as i32).collect(),
        cells: (0..n as u32).collect(),
        feats: value.iter().copied().cycle().take(n * value.len()).collect(),
    }
}

#[test]
fn roi_pooling_examples() {
    let cfg = small_config();
    let params = DetectorParams::<f64>::new(&cfg, 3);
    let b = Box3D::new(12.0, 1.0, 0.8, 4.2, 1.9, 1.6, 0.7).unwrap();
    let zero = encode_bev::<f64>(&[], &params, &cfg);
    assert!(pool_box(&zero, &b, 7).pooled.iter().all(|v| *v == 0.0));

    let value: Vec<f64> = (0..cfg.channels).map(|k| 0.1 * k as f64 - 1.0).collect();
    let flat = constant_grid(&cfg.grid, &value);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..20 {
        let q = Box3D::new(
            rng.gen_range(8.0..20.0),
            rng.gen_range(-6.0..6.0),
            0.8,
            rng.gen_range(1.0..5.0),
            rng.gen_range(1.0..2.5),
            1.5,
            rng.gen_range(-3.0..3.0),
        )
        .unwrap();
        for (p, v) in pool_box(&flat, &q, 7).pooled.iter().zip(&value) {
            assert!((p - v).abs() < 1e-12);
        }
    }

    let fx = scene_fixture();
    let grid = encode_bev(&fx.scene.points, &params, &cfg);
    let turned = Box3D::new(b.x, b.y, b.z, b.l, b.w, b.h, b.theta + 2.0 * std::f64::consts::PI).unwrap();
    let f0 = extract_box_feature(&grid, &b, &params, 7).f3d;
    let f1 = extract_box_feature(&grid, &turned, &params, 7).f3d;
    for (x, y) in f0.iter().zip(&f1) {
        assert!((x - y).abs() < 1e-6);
    }
}

#[test]
fn proposals_are_bounded_and_valid() {
    let fx = scene_fixture();
    let cfg = DetectorConfig { k_max: 128, ..fx.cfg.clone() };
    let mut params = DetectorParams::<f64>::new(&cfg, 5);
    params.head = params.head.zeros_like();
    let zero = propose(&pillar_stats(&[], &cfg.grid), &params, &cfg, 0.0);
    assert!(zero.is_empty());
    let props = propose(&fx.stats, &busy_params(&cfg, 6), &cfg, 0.0);
    assert!(!props.is_empty() && props.len() <= 128);
    for p in &props {
        assert!(p.bbox.l > 0.0 && p.bbox.w > 0.0 && p.bbox.h > 0.0);
        assert!(p.bbox.theta > -std::f64::consts::PI - 1e-12 && p.bbox.theta <= std::f64::consts::PI + 1e-12);
        assert_eq!(p.f3d.len(), cfg.c3d);
    }
}

#[test]
fn detect_modes() {
    let fx = scene_fixture();
    // keep every refined box so the comparison is one to one
    let cfg = DetectorConfig { final_nms_iou: 1.0, ..fx.cfg.clone() };
    let params = busy_params(&cfg, 7);
    let mut identity = params.clone();
    identity.refine = DetectorParams::<f64>::new(&cfg, 0).refine;

    let props = detect(&fx.scene.points, &identity, &cfg, Mode::Proposals, None).unwrap();
    assert!(!props.is_empty());
    let fused: Vec<Vec<f64>> = props
        .iter()
        .map(|p| {
            let t = project_heads(&p.f3d, &identity.project, false);
            fuse(&p.f3d, t.f_img(), t.f_text(), &identity.fusion, FuseWeights::Forced([1.0, 0.0, 0.0])).out
        })
        .collect();
    assert!(fused.iter().zip(&props).all(|(f, p)| *f == p.f3d));
    let finals = detect(&fx.scene.points, &identity, &cfg, Mode::Final, Some(&fused)).unwrap();
    let mut a: Vec<_> = props.iter().map(|d| d.bbox).collect();
    let mut b: Vec<_> = finals.iter().map(|d| d.bbox).collect();
    let key = |x: &Box3D<f64>| (x.x, x.y);
    a.sort_by(|p, q| key(p).partial_cmp(&key(q)).unwrap());
    b.sort_by(|p, q| key(p).partial_cmp(&key(q)).unwrap());
    assert_eq!(a, b);

    assert!(matches!(detect(&fx.scene.points, &params, &cfg, Mode::Final, None), Err(DetError::MissingFused)));
    assert!(matches!(
        refine_proposals(&props, &fused[1..], &params, &cfg),
        Err(DetError::FusedCount { .. })
    ));
    assert!(detect::<f64>(&[], &params, &cfg, Mode::Proposals, None).unwrap().is_empty());
    let again = detect(&fx.scene.points, &identity, &cfg, Mode::Proposals, None).unwrap();
    assert_eq!(props, again);
}

#[test]
fn parameter_shapes_are_stable() {
    let cfg = DetectorConfig::default();
    let a = DetectorParams::<f32>::new(&cfg, 1);
    let b = DetectorParams::<f32>::new(&cfg, 2);
    assert!(a.same_shape(&b));
    assert_eq!(a.shapes(), b.shapes());
    assert_ne!(a.flat(), b.flat());
    assert_eq!(a.cast::<f64>().shapes(), a.shapes());
}

#[test]
fn checkpoint_round_trip_and_validation() {
    let cfg = small_config();
    let params = DetectorParams::<f32>::new(&cfg, 9);
    let ck = Checkpoint::from_params(&cfg, &params, 17, vec![]);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.json");
    ck.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back, ck);
    assert_eq!(back.to_params::<f32>().unwrap(), params);

    let mut bad = ck.clone();
    bad.tensors[0].shape = vec![1];
    assert!(matches!(bad.to_params::<f32>(), Err(DetError::Checkpoint(_))));
    let mut bad = ck.clone();
    bad.tensors.pop();
    assert!(bad.to_params::<f32>().is_err());
    let mut bad = ck.clone();
    bad.tensors[1] = NamedTensor { data: vec![f64::NAN; bad.tensors[1].data.len()], ..bad.tensors[1].clone() };
    assert!(bad.to_params::<f32>().is_err());
    let mut bad = ck;
    bad.version += 1;
    assert!(bad.to_params::<f32>().is_err());
}

#[test]
fn memorizes_a_small_set() {
    let mut dc = DomainConfig::source();
    dc.object_density = 6.0;
    let scenes = generate_split(&dc, 5, 31).unwrap();
    let mut cfg = TrainConfig::pretrain(31);
    cfg.flags = AblationFlags::NONE;
    cfg.augment = false;
    cfg.hyper.epochs = 100;
    cfg.hyper.lr = 3e-3;
    let tr = pretrain_as::<f32>(&scenes, &cfg).unwrap();
    assert_eq!(tr.step, 500);
    let frames = detector_frames(&tr.student, &scenes, &cfg.detector);
    let (mut hit, mut total) = (0, 0);
    for f in &frames {
        // each detection claims at most one box, so true positives count boxes found
        hit += greedy_match(&f.dets, &f.gts, 0.5, IouVariant::Bev).iter().filter(|m| **m).count();
        total += f.gts.len();
    }
    let recall = hit as f64 / total as f64;
    let ap = dataset_ap(&frames, 0.7, IouVariant::Bev);
    println!("overfit: recall@0.5 {recall:.3} over {total} boxes, AP_BEV@0.7 {ap:.1}");
    assert!(recall >= 0.95);
    assert!(ap >= 90.0);
}
