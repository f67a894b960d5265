//! Loss and full backward pass of one training scene.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::AblationFlags;
use crate::alignfuse::{
    fuse, fuse_backward, image_align_loss_grad, match_to_labels, project_heads, project_heads_backward,
    teacher_student_align_loss_grad, text_align_loss_grad, FeatureRecord, HyperParams,
};
use crate::geometry::{iou_bev, Box3D};
use crate::scalar::Real;
use crate::synthworld::mix64;
use crate::toydet::{
    candidate_cells, extract_box_feature, refine_input, refine_loss, roi_backward, Detection, DetectorConfig, DetectorParams,
    PillarStats, SceneForward, ANCHOR_SIZE, ANCHOR_Z, REFINE_OUT, REGRESS_IOU,
};

/// RoIs overlapping an ignored box by more than this (and more than any
/// label) get no quality target.
const IGNORE_IOU: f64 = 0.25;

/// Image and text targets of one label.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignTarget<T> {
    pub g_img: Vec<T>,
    pub g_text: Vec<T>,
}

/// Everything one training step reads about a scene.
#[derive(Debug, Clone, Copy)]
pub struct StepInput<'a, T> {
    pub stats: &'a PillarStats<T>,
    pub labels: &'a [Box3D<f64>],
    /// One entry per label; `None` when the label has no camera view.
    pub targets: &'a [Option<AlignTarget<T>>],
    pub bg: &'a [Vec<T>],
    /// Teacher proposals with RoI features (teacher-student alignment).
    pub teacher: &'a [Detection<T>],
    /// RoIs supervised by the refinement head besides the proposals.
    pub extra_rois: &'a [Box3D<f64>],
    /// Uncertain boxes: nothing near them is trained as background.
    pub ignore: &'a [Box3D<f64>],
}

/// Loss weights and switches of the objective.
#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    pub hyper: HyperParams,
    pub flags: AblationFlags,
}

/// Individual terms of one scene. `det = det_cls + det_reg + det_refine`;
/// `total = det + alpha * text + beta * img + gamma * st`, with a term
/// reading 0 when its flag is off.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepLoss {
    pub det_cls: f64,
    pub det_reg: f64,
    pub det_refine: f64,
    pub det: f64,
    pub text: f64,
    pub img: f64,
    pub st: f64,
    pub total: f64,
    pub n_proposals: usize,
    pub n_aligned: usize,
    pub n_st_pairs: usize,
    /// Fingerprint of every discrete branch the evaluation took (ReLU
    /// activity, max-pool winners, hinge activity). Evaluations with equal
    /// fingerprints lie on the same smooth piece of the loss.
    pub branch: u64,
}

#[derive(Default)]
struct Fingerprint(u64);

impl Fingerprint {
    fn word(&mut self, w: u64) {
        self.0 = mix64(self.0 ^ w);
    }

    fn active<T: Real>(&mut self, v: &[T]) {
        for chunk in v.chunks(64) {
            let mut w = 0u64;
            for (i, x) in chunk.iter().enumerate() {
                if *x > T::zero() {
                    w |= 1 << i;
                }
            }
            self.word(w);
        }
    }
}

impl StepLoss {
    pub fn recompose(&self, alpha: f64, beta: f64, gamma: f64) -> f64 {
        self.det + alpha * self.text + beta * self.img + gamma * self.st
    }
}

/// Per-RoI activations kept for the backward pass.
struct RoiPass<T> {
    roi: crate::toydet::RoiTrace<T>,
    proj: crate::alignfuse::ProjectionTrace<T>,
    fuse: crate::alignfuse::FuseTrace<T>,
    refine_in: Vec<T>,
    refine: crate::nn::MlpTrace<T>,
}

/// Scene loss; when `grads` is given, its gradient with respect to every
/// parameter is accumulated into it.
pub fn scene_loss<T: Real>(
    input: &StepInput<T>,
    params: &DetectorParams<T>,
    cfg: &DetectorConfig,
    obj: &Objective,
    grads: Option<&mut DetectorParams<T>>,
) -> StepLoss {
    let fwd = SceneForward::run(input.stats, params, cfg);
    let props = fwd.proposals(cfg.train_threshold, cfg);
    loss_on(&fwd, props, input, params, cfg, obj, grads)
}

/// [`scene_loss`] with the proposal boxes given. Proposal geometry is never
/// differentiated, so this is the function whose gradient `scene_loss`
/// returns when `proposals` are its own proposals.
pub fn scene_loss_with_proposals<T: Real>(
    input: &StepInput<T>,
    proposals: &[Detection<T>],
    params: &DetectorParams<T>,
    cfg: &DetectorConfig,
    obj: &Objective,
    grads: Option<&mut DetectorParams<T>>,
) -> StepLoss {
    let fwd = SceneForward::run(input.stats, params, cfg);
    loss_on(&fwd, proposals.to_vec(), input, params, cfg, obj, grads)
}

fn loss_on<T: Real>(
    fwd: &SceneForward<T>,
    mut props: Vec<Detection<T>>,
    input: &StepInput<T>,
    params: &DetectorParams<T>,
    cfg: &DetectorConfig,
    obj: &Objective,
    grads: Option<&mut DetectorParams<T>>,
) -> StepLoss {
    let h = &obj.hyper;
    let flags = obj.flags;
    let (cls, reg, d_out) = fwd.loss(input.labels, input.ignore);
    let n_prop = props.len();
    let mode = cfg.fuse_weights();

    let boxes: Vec<Box3D<f64>> = props.iter().map(|p| p.bbox).chain(input.extra_rois.iter().copied()).collect();
    let mut passes = Vec::with_capacity(boxes.len());
    for b in &boxes {
        let roi = extract_box_feature(&fwd.grid, b, params, cfg.roi_grid);
        let proj = project_heads(&roi.f3d, &params.project, false);
        let fz = fuse(&roi.f3d, proj.f_img(), proj.f_text(), &params.fusion, mode);
        let refine_in = refine_input(&fz.out, &roi.local, cfg);
        let refine = params.refine.forward(&refine_in, false);
        passes.push(RoiPass {
            roi,
            proj,
            fuse: fz,
            refine_in,
            refine,
        });
    }
    for (p, pass) in props.iter_mut().zip(&passes) {
        p.f3d = pass.roi.f3d.clone();
        p.local = pass.roi.local.clone();
    }

    // refinement: quality on every RoI, deltas on well-overlapping ones
    let n_roi = boxes.len().max(1) as f64;
    let mut q_sum = 0.0;
    let mut refine_d: Vec<[f64; REFINE_OUT]> = Vec::with_capacity(boxes.len());
    let mut reg_terms: Vec<(usize, f64)> = Vec::new();
    for (k, b) in boxes.iter().enumerate() {
        let best = input
            .labels
            .iter()
            .map(|l| iou_bev(b, l))
            .enumerate()
            .fold(None, |acc: Option<(usize, f64)>, (j, v)| match acc {
                Some((_, bv)) if bv >= v => acc,
                _ => Some((j, v)),
            });
        let label = best.filter(|(_, v)| *v > 0.0).map(|(j, _)| &input.labels[j]);
        let best_iou = best.map_or(0.0, |(_, v)| v);
        let out: Vec<f64> = passes[k].refine.out.iter().map(|v| v.as_f64()).collect();
        let (mut q, r, mut d) = refine_loss(&out, b, label);
        // no quality target for RoIs that mostly cover an uncertain box
        if input.ignore.iter().any(|g| iou_bev(b, g) > best_iou.max(IGNORE_IOU)) {
            q = 0.0;
            d[0] = 0.0;
        }
        q_sum += q;
        if best.map_or(false, |(_, v)| v >= REGRESS_IOU) {
            reg_terms.push((k, r));
        }
        refine_d.push(d);
    }
    let n_reg = reg_terms.len().max(1) as f64;
    let reg2: f64 = reg_terms.iter().map(|t| t.1).sum::<f64>() / n_reg;
    let det_refine = q_sum / n_roi + reg2;
    let mut is_reg = vec![false; boxes.len()];
    for (k, _) in &reg_terms {
        is_reg[*k] = true;
    }

    // alignment on proposals matched to labels with targets
    let mut d_img: Vec<Vec<T>> = vec![Vec::new(); n_prop];
    let mut d_text: Vec<Vec<T>> = vec![Vec::new(); n_prop];
    let (mut text, mut img, mut n_aligned) = (0.0, 0.0, 0);
    if flags.ia || flags.ta {
        let pairs = match_to_labels(&props, input.labels, h.mu, h.iou_variant);
        let mut records = Vec::new();
        let mut owners = Vec::new();
        for &(p, l) in &pairs {
            if let Some(t) = &input.targets[l] {
                records.push(FeatureRecord {
                    f3d: passes[p].roi.f3d.clone(),
                    f_img: passes[p].proj.f_img().to_vec(),
                    f_text: passes[p].proj.f_text().to_vec(),
                    g_img: Some(t.g_img.clone()),
                    g_text: Some(t.g_text.clone()),
                });
                owners.push(p);
            }
        }
        n_aligned = records.len();
        if flags.ta {
            let (l, g) = text_align_loss_grad(&records).expect("targets present");
            text = l.as_f64();
            for (o, gi) in owners.iter().zip(g) {
                d_text[*o] = gi.into_iter().map(|v| v * T::lit(h.alpha)).collect();
            }
        }
        if flags.ia && !records.is_empty() && !input.bg.is_empty() {
            let (l, g) = image_align_loss_grad(&records, input.bg, T::lit(h.sigma_margin)).expect("targets present");
            img = l.as_f64();
            for (o, gi) in owners.iter().zip(g) {
                d_img[*o] = gi.into_iter().map(|v| v * T::lit(h.beta)).collect();
            }
        }
    }

    // teacher-student feature alignment
    let (mut st, mut n_st) = (0.0, 0);
    let mut d_st: Vec<Vec<T>> = vec![Vec::new(); n_prop];
    if flags.sta && !input.teacher.is_empty() {
        let (l, g, n) = teacher_student_align_loss_grad(&props, input.teacher, h.eta, h.iou_variant);
        st = l.as_f64();
        n_st = n;
        for (k, gi) in g.into_iter().enumerate() {
            d_st[k] = gi.into_iter().map(|v| v * T::lit(h.gamma)).collect();
        }
    }

    let det = cls + reg + det_refine;
    let alpha = if flags.ta { h.alpha } else { 0.0 };
    let beta = if flags.ia { h.beta } else { 0.0 };
    let gamma = if flags.sta { h.gamma } else { 0.0 };
    let loss = StepLoss {
        det_cls: cls,
        det_reg: reg,
        det_refine,
        det,
        text,
        img,
        st,
        total: det + alpha * text + beta * img + gamma * st,
        n_proposals: n_prop,
        n_aligned,
        n_st_pairs: n_st,
        branch: 0,
    };
    let mut fp = Fingerprint::default();
    fp.active(&fwd.grid.feats);
    fp.active(&fwd.reduced);
    fp.active(&fwd.hidden);
    for pass in &passes {
        fp.active(&pass.roi.f3d);
        pass.roi.argmax.iter().for_each(|a| fp.word(*a as u64));
        fp.active(&pass.proj.img.hidden);
        fp.active(&pass.proj.text.hidden);
        if let Some(w) = &pass.fuse.weight {
            fp.active(&w.hidden);
        }
        fp.active(&pass.refine.hidden);
    }
    for d in &d_img {
        fp.word(u64::from(d.iter().any(|v| *v != T::zero())));
    }
    let loss = StepLoss { branch: fp.0, ..loss };

    let Some(grads) = grads else {
        return loss;
    };
    let c = cfg.channels;
    let mut d_feats = vec![T::zero(); fwd.grid.cells.len() * c];
    for (k, pass) in passes.iter().enumerate() {
        let rd = &refine_d[k];
        let reg_scale = if is_reg[k] { 1.0 / n_reg } else { 0.0 };
        let mut dr = vec![T::zero(); REFINE_OUT];
        dr[0] = T::lit(rd[0] / n_roi);
        for i in 1..REFINE_OUT {
            dr[i] = T::lit(rd[i] * reg_scale);
        }
        let mut d_in = vec![T::zero(); pass.refine_in.len()];
        params
            .refine
            .backward(&pass.refine_in, &pass.refine, &dr, false, &mut grads.refine, Some(&mut d_in));
        let (d_fused, d_local) = d_in.split_at(pass.fuse.out.len());
        let f3d = &pass.roi.f3d;
        let (mut d_f3d, mut di, mut dt) = fuse_backward(
            f3d,
            pass.proj.f_img(),
            pass.proj.f_text(),
            &pass.fuse,
            d_fused,
            &params.fusion,
            &mut grads.fusion,
            mode,
        );
        if k < n_prop {
            add_into(&mut di, &d_img[k]);
            add_into(&mut dt, &d_text[k]);
            add_into(&mut d_f3d, &d_st[k]);
        }
        project_heads_backward(f3d, &pass.proj, &di, &dt, &params.project, &mut grads.project, false, &mut d_f3d);
        roi_backward(&pass.roi, &d_f3d, d_local, params, grads, &mut d_feats);
    }
    fwd.backward(input.stats, &d_out, d_feats, params, grads, cfg);
    loss
}

fn add_into<T: Real>(a: &mut [T], b: &[T]) {
    for (x, y) in a.iter_mut().zip(b) {
        *x += *y;
    }
}

/// Jittered copies of each label plus anchor boxes at random candidate
/// cells, used as extra refinement RoIs.
pub fn sample_extra_rois<T: Real, R: Rng>(
    stats: &PillarStats<T>,
    labels: &[Box3D<f64>],
    copies: usize,
    anchors: usize,
    rng: &mut R,
) -> Vec<Box3D<f64>> {
    let n = Normal::new(0.0, 1.0).expect("unit normal");
    let mut out = Vec::new();
    for l in labels {
        for _ in 0..copies {
            let mut g = || n.sample(rng);
            out.push(Box3D::clamped(
                l.x + 0.4 * g(),
                l.y + 0.4 * g(),
                l.z + 0.1 * g(),
                l.l * (0.08 * g()).exp(),
                l.w * (0.08 * g()).exp(),
                l.h * (0.05 * g()).exp(),
                l.theta + 0.1 * g(),
                0.1,
            ));
        }
    }
    let cands = candidate_cells(stats);
    if !cands.is_empty() {
        for _ in 0..anchors {
            let cell = cands[rng.gen_range(0..cands.len())] as usize;
            let (x, y) = stats.grid.center(cell);
            out.push(Box3D::clamped(
                x,
                y,
                ANCHOR_Z,
                ANCHOR_SIZE[0],
                ANCHOR_SIZE[1],
                ANCHOR_SIZE[2],
                rng.gen_range(-std::f64::consts::FRAC_PI_2..std::f64::consts::FRAC_PI_2),
                0.1,
            ));
        }
    }
    out
}
