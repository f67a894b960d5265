//! Shared fixtures and oracles for the integration tests.
#![allow(dead_code)]

pub mod oracles;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use uda3d::alignfuse::{
    fuse, fuse_backward, image_align_loss_grad, project_heads, project_heads_backward, teacher_student_align_loss_grad,
    text_align_loss_grad, FeatureRecord, FuseWeights, HyperParams,
};
use uda3d::geometry::Box3D;
use uda3d::selftrain::{
    alignment_targets, background_features, sample_extra_rois, scene_loss_with_proposals, AblationFlags, AlignTarget, Objective,
    StepInput,
};
use uda3d::synthworld::{generate_scene, DomainConfig, Scene};
use uda3d::toydet::{extract_box_feature, pillar_stats, propose, SceneForward, Detection, DetectorConfig, DetectorParams, GridConfig, PillarStats};

pub const FD_STEP: f64 = 1e-4;
pub const REL_TOL: f64 = 1e-4;
pub const MIN_COORDS: usize = 100;

/// Relative error with a floor so that two vanishing derivatives agree.
pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

/// Outcome of one central-difference comparison.
#[derive(Debug, Clone)]
pub struct GradCheck {
    pub name: String,
    pub coords: usize,
    pub max_rel: f64,
    pub worst: (usize, f64, f64),
    /// Coordinates whose stencil crossed a kink and were replaced.
    pub skipped: usize,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.coords >= MIN_COORDS && self.max_rel < REL_TOL
    }
}

/// Picks `n` coordinates of `pool`, preferring those with a nonzero
/// analytic derivative.
pub fn pick_coords(pool: &[usize], grad: &[f64], n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut live: Vec<usize> = pool.iter().copied().filter(|&i| grad[i].abs() > 1e-9).collect();
    let mut dead: Vec<usize> = pool.iter().copied().filter(|&i| grad[i].abs() <= 1e-9).collect();
    live.shuffle(rng);
    dead.shuffle(rng);
    live.into_iter().chain(dead).take(n).collect()
}

/// Central differences of `f` at `x` along `coords`, compared to `grad`.
/// `f` returns the value and a branch fingerprint; a coordinate whose
/// stencil straddles a kink (fingerprints differ) is replaced by the next
/// candidate in `pool`.
pub fn fd_check_branches(
    name: &str,
    f: &dyn Fn(&[f64]) -> (f64, u64),
    x: &[f64],
    grad: &[f64],
    pool: &[usize],
    want: usize,
) -> GradCheck {
    let mut worst = (0, 0.0, 0.0);
    let mut max_rel = 0.0;
    let mut xp = x.to_vec();
    let (_, b0) = f(x);
    let mut used = 0;
    let mut skipped = 0;
    for &i in pool {
        if used == want {
            break;
        }
        xp[i] = x[i] + FD_STEP;
        let (fp, bp) = f(&xp);
        xp[i] = x[i] - FD_STEP;
        let (fm, bm) = f(&xp);
        xp[i] = x[i];
        if bp != b0 || bm != b0 {
            skipped += 1;
            continue;
        }
        used += 1;
        let num = (fp - fm) / (2.0 * FD_STEP);
        let r = rel_err(grad[i], num);
        if r > max_rel || !r.is_finite() {
            max_rel = if r.is_finite() { r } else { f64::INFINITY };
            worst = (i, grad[i], num);
        }
    }
    GradCheck {
        name: name.to_string(),
        coords: used,
        max_rel,
        worst,
        skipped,
    }
}

/// Central differences of a smooth `f` at `x` along `coords`.
pub fn fd_check(name: &str, f: &dyn Fn(&[f64]) -> f64, x: &[f64], grad: &[f64], coords: &[usize]) -> GradCheck {
    let g = |v: &[f64]| (f(v), 0);
    fd_check_branches(name, &g, x, grad, coords, coords.len())
}

/// A small-grid scene with a few cars, its labels and a detector config.
pub struct SceneFixture {
    pub cfg: DetectorConfig,
    pub scene: Scene,
    pub stats: PillarStats<f64>,
    pub labels: Vec<Box3D<f64>>,
    pub targets: Vec<Option<AlignTarget<f64>>>,
    pub bg: Vec<Vec<f64>>,
}

pub fn small_config() -> DetectorConfig {
    DetectorConfig {
        grid: GridConfig {
            x_min: 4.0,
            x_max: 24.0,
            y_min: -10.0,
            y_max: 10.0,
            resolution: 0.5,
        },
        pre_nms: 100_000,
        k_max: 100_000,
        ..DetectorConfig::default()
    }
}

pub fn scene_fixture() -> SceneFixture {
    let cfg = small_config();
    let mut dc = DomainConfig::source();
    dc.far_bias = 0.0;
    dc.object_density = 10.0;
    let g = cfg.grid;
    for seed in 0.. {
        let scene = generate_scene(&dc, seed).expect("valid config");
        let inside: Vec<Box3D<f64>> = scene
            .labels()
            .into_iter()
            .filter(|b| {
                b.bev_corners()
                    .iter()
                    .all(|c| c[0] > g.x_min && c[0] < g.x_max && c[1] > g.y_min && c[1] < g.y_max)
            })
            .collect();
        if inside.len() >= 2 {
            let mut scene = scene;
            scene.objects.retain(|o| inside.contains(&o.bbox));
            let labels = scene.labels();
            let stats = pillar_stats(&scene.points, &cfg.grid);
            let targets = alignment_targets(&scene, &labels, true);
            let bg = background_features(&scene, 8, 5);
            return SceneFixture {
                cfg,
                scene,
                stats,
                labels,
                targets,
                bg,
            };
        }
    }
    unreachable!()
}

/// Initialized parameters with every zero-initialized output layer
/// randomized and a neutral objectness prior, so that every branch carries
/// gradient.
pub fn busy_params(cfg: &DetectorConfig, seed: u64) -> DetectorParams<f64> {
    let mut p = DetectorParams::<f64>::new(cfg, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for l in [&mut p.refine.l2, &mut p.fusion.weight.l2] {
        for w in l.w.iter_mut().chain(l.b.iter_mut()) {
            *w = rng.gen_range(-0.2..0.2);
        }
    }
    for b in p.project.img.l1.b.iter_mut().chain(p.project.text.l1.b.iter_mut()) {
        *b = rng.gen_range(-0.1..0.1);
    }
    p.head.b[0] = 0.5;
    p
}

fn group(params: &DetectorParams<f64>, prefixes: &[&str]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut off = 0;
    for (name, _, data) in params.tensors() {
        if prefixes.iter().any(|p| name.starts_with(p)) {
            out.extend(off..off + data.len());
        }
        off += data.len();
    }
    out
}

fn scene_objective_check(
    name: &str,
    fx: &SceneFixture,
    params: &DetectorParams<f64>,
    obj: &Objective,
    teacher: &[Detection<f64>],
    prefixes: &[&str],
    rng: &mut ChaCha8Rng,
) -> GradCheck {
    let extra = sample_extra_rois(&fx.stats, &fx.labels, 2, 8, &mut ChaCha8Rng::seed_from_u64(3));
    let input = StepInput {
        stats: &fx.stats,
        labels: &fx.labels,
        targets: &fx.targets,
        bg: &fx.bg,
        teacher,
        extra_rois: &extra,
        ignore: &[],
    };
    // proposal boxes are constants of the objective; labelled copies make
    // sure the alignment terms see matched proposals
    let mut props = SceneForward::run(&fx.stats, params, &fx.cfg).proposals(fx.cfg.train_threshold, &fx.cfg);
    props.extend(label_copies(&fx.labels));
    let mut grads = params.zeros_like();
    let base = scene_loss_with_proposals(&input, &props, params, &fx.cfg, obj, Some(&mut grads));
    // every enabled term must be live at the fixture
    assert!(base.n_proposals > 0);
    assert!(!obj.flags.ta || base.text > 0.0, "{name}: text term inactive");
    assert!(!obj.flags.ia || base.img > 0.0, "{name}: image term inactive");
    assert!(!obj.flags.sta || base.n_st_pairs > 0, "{name}: no teacher pairs");
    let g = grads.flat();
    let x = params.flat();
    let f = |v: &[f64]| {
        let mut p = params.clone();
        p.set_flat(v);
        let l = scene_loss_with_proposals(&input, &props, &p, &fx.cfg, obj, None);
        (l.total, l.branch)
    };
    let pool = if prefixes.is_empty() {
        (0..x.len()).collect()
    } else {
        group(params, prefixes)
    };
    let order = pick_coords(&pool, &g, pool.len(), rng);
    fd_check_branches(name, &f, &x, &g, &order, MIN_COORDS)
}

/// Slightly shifted copies of the labels as detections without features.
pub fn label_copies(labels: &[Box3D<f64>]) -> Vec<Detection<f64>> {
    labels
        .iter()
        .map(|l| Detection {
            bbox: Box3D::new(l.x + 0.2, l.y - 0.1, l.z, l.l, l.w, l.h, l.theta + 0.05).unwrap(),
            confidence: 0.5,
            f3d: Vec::new(),
            local: Vec::new(),
            logit: 0.0,
        })
        .collect()
}

fn random_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Every analytic gradient of the model against central differences.
pub fn gradient_suite() -> Vec<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let fx = scene_fixture();
    let cfg = &fx.cfg;
    let params = busy_params(cfg, 11);
    let mut out = Vec::new();

    let det_only = Objective {
        hyper: HyperParams::pretrain(),
        flags: AblationFlags::NONE,
    };
    out.push(scene_objective_check("encoder", &fx, &params, &det_only, &[], &["encoder"], &mut rng));
    out.push(scene_objective_check(
        "proposal head",
        &fx,
        &params,
        &det_only,
        &[],
        &["reduce", "mix", "head"],
        &mut rng,
    ));
    out.push(scene_objective_check(
        "roi + refinement head",
        &fx,
        &params,
        &det_only,
        &[],
        &["roi", "refine"],
        &mut rng,
    ));

    // projection heads: linear probe of both outputs
    {
        let f3d = random_vec(cfg.c3d, &mut rng);
        let ci = random_vec(params.project.img.l2.out, &mut rng);
        let ct = random_vec(params.project.text.l2.out, &mut rng);
        let n_par = params.flat().len();
        let probe = |p: &DetectorParams<f64>, x: &[f64]| {
            let t = project_heads(x, &p.project, false);
            t.f_img().iter().zip(&ci).map(|(a, b)| a * b).sum::<f64>()
                + t.f_text().iter().zip(&ct).map(|(a, b)| a * b).sum::<f64>()
        };
        let t = project_heads(&f3d, &params.project, false);
        let mut g = params.zeros_like();
        let mut d_f3d = vec![0.0; cfg.c3d];
        project_heads_backward(&f3d, &t, &ci, &ct, &params.project, &mut g.project, false, &mut d_f3d);
        let mut x = params.flat();
        x.extend(&f3d);
        let mut grad = g.flat();
        grad.extend(&d_f3d);
        let f = |v: &[f64]| {
            let mut p = params.clone();
            p.set_flat(&v[..n_par]);
            probe(&p, &v[n_par..])
        };
        let mut pool = group(&params, &["project"]);
        pool.extend(n_par..n_par + cfg.c3d);
        let coords = pick_coords(&pool, &grad, MIN_COORDS, &mut rng);
        out.push(fd_check("project_heads", &f, &x, &grad, &coords));
    }

    // fusion: squared norm of the fused vector
    {
        let f3d = random_vec(cfg.c3d, &mut rng);
        let fi = random_vec(params.fusion.img_map.inp, &mut rng);
        let ft = random_vec(params.fusion.text_map.inp, &mut rng);
        let n_par = params.flat().len();
        let mode = FuseWeights::Softmax;
        let t = fuse(&f3d, &fi, &ft, &params.fusion, mode);
        let d_out: Vec<f64> = t.out.iter().map(|v| 2.0 * v).collect();
        let mut g = params.zeros_like();
        let (da, di, dt) = fuse_backward(&f3d, &fi, &ft, &t, &d_out, &params.fusion, &mut g.fusion, mode);
        let mut x = params.flat();
        x.extend(f3d.iter().chain(&fi).chain(&ft));
        let mut grad = g.flat();
        grad.extend(da.iter().chain(&di).chain(&dt));
        let (na, ni) = (f3d.len(), fi.len());
        let f = |v: &[f64]| {
            let mut p = params.clone();
            p.set_flat(&v[..n_par]);
            let r = &v[n_par..];
            let o = fuse(&r[..na], &r[na..na + ni], &r[na + ni..], &p.fusion, mode).out;
            o.iter().map(|v| v * v).sum::<f64>()
        };
        let mut pool = group(&params, &["fusion"]);
        pool.extend(n_par..x.len());
        let coords = pick_coords(&pool, &grad, 2 * MIN_COORDS, &mut rng);
        out.push(fd_check("fuse", &f, &x, &grad, &coords));
    }

    // alignment losses over random records
    {
        let n = 6;
        let dim = 32;
        let recs: Vec<FeatureRecord<f64>> = (0..n)
            .map(|_| FeatureRecord {
                f3d: random_vec(cfg.c3d, &mut rng),
                f_img: random_vec(dim, &mut rng),
                f_text: random_vec(dim, &mut rng),
                g_img: Some(random_vec(dim, &mut rng)),
                g_text: Some(random_vec(dim, &mut rng)),
            })
            .collect();
        let bg: Vec<Vec<f64>> = (0..8).map(|_| random_vec(dim, &mut rng)).collect();
        let with = |v: &[f64], img: bool| {
            let mut r = recs.clone();
            for (k, rec) in r.iter_mut().enumerate() {
                let dst = if img { &mut rec.f_img } else { &mut rec.f_text };
                dst.copy_from_slice(&v[k * dim..(k + 1) * dim]);
            }
            r
        };
        // sigma large enough that every hinge is active
        let sigma = 2.0;
        let x: Vec<f64> = recs.iter().flat_map(|r| r.f_img.clone()).collect();
        let (_, g) = image_align_loss_grad(&recs, &bg, sigma).unwrap();
        let grad: Vec<f64> = g.concat();
        let f = |v: &[f64]| image_align_loss_grad(&with(v, true), &bg, sigma).unwrap().0;
        let coords = pick_coords(&(0..x.len()).collect::<Vec<_>>(), &grad, 2 * MIN_COORDS, &mut rng);
        out.push(fd_check("image alignment loss", &f, &x, &grad, &coords));

        let x: Vec<f64> = recs.iter().flat_map(|r| r.f_text.clone()).collect();
        let (_, g) = text_align_loss_grad(&recs).unwrap();
        let grad: Vec<f64> = g.concat();
        let f = |v: &[f64]| text_align_loss_grad(&with(v, false)).unwrap().0;
        let coords = pick_coords(&(0..x.len()).collect::<Vec<_>>(), &grad, 2 * MIN_COORDS, &mut rng);
        out.push(fd_check("text alignment loss", &f, &x, &grad, &coords));
    }

    // teacher-student loss over student features
    {
        let dim = cfg.c3d;
        let mk = |x: f64, y: f64, f: Vec<f64>| Detection {
            bbox: Box3D::new(x, y, 0.8, 4.5, 1.9, 1.6, 0.1).unwrap(),
            confidence: 0.9,
            f3d: f,
            local: Vec::new(),
            logit: 0.0,
        };
        let student: Vec<Detection<f64>> = (0..4)
            .map(|k| mk(10.0 + 6.0 * k as f64, 0.2 * k as f64, random_vec(dim, &mut rng)))
            .collect();
        let teacher: Vec<Detection<f64>> = (0..4)
            .map(|k| mk(10.3 + 6.0 * k as f64, 0.1, random_vec(dim, &mut rng)))
            .collect();
        let x: Vec<f64> = student.iter().flat_map(|d| d.f3d.clone()).collect();
        let variant = uda3d::geometry::IouVariant::Bev;
        let (_, g, n) = teacher_student_align_loss_grad(&student, &teacher, 0.5, variant);
        assert_eq!(n, 4);
        let grad: Vec<f64> = g.concat();
        let f = |v: &[f64]| {
            let mut s = student.clone();
            for (k, d) in s.iter_mut().enumerate() {
                d.f3d.copy_from_slice(&v[k * dim..(k + 1) * dim]);
            }
            teacher_student_align_loss_grad(&s, &teacher, 0.5, variant).0
        };
        let coords = pick_coords(&(0..x.len()).collect::<Vec<_>>(), &grad, 2 * MIN_COORDS, &mut rng);
        out.push(fd_check("teacher-student alignment loss", &f, &x, &grad, &coords));
    }

    // composite objectives through the whole network
    let pre = Objective {
        hyper: HyperParams::pretrain(),
        flags: AblationFlags::new(true, true, false, false),
    };
    out.push(scene_objective_check("composite pre-training objective", &fx, &params, &pre, &[], &[], &mut rng));
    let teacher_params = busy_params(cfg, 12);
    let mut teacher = propose(&fx.stats, &teacher_params, cfg, cfg.train_threshold);
    let grid = uda3d::toydet::encode_stats(&fx.stats, &teacher_params);
    for mut d in label_copies(&fx.labels) {
        d.f3d = extract_box_feature(&grid, &d.bbox, &teacher_params, cfg.roi_grid).f3d;
        teacher.push(d);
    }
    let st = Objective {
        hyper: HyperParams::selftrain(),
        flags: AblationFlags::ALL,
    };
    out.push(scene_objective_check("composite self-training objective", &fx, &params, &st, &teacher, &[], &mut rng));
    out
}
