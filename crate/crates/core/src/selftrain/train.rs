//! The two training loops.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::data::{alignment_targets, PreparedScene};
use super::step::{sample_extra_rois, scene_loss, AlignTarget, StepInput, StepLoss};
use super::{
    ema_update_in_place, generate_teacher_labels, merge_pseudo_labels, Adam, OneCycle, Stage, TrainConfig,
    TrainError,
};
use crate::geometry::Box3D;
use crate::scalar::Real;
use crate::synthworld::{hash_seed, Scene};
use crate::toydet::{propose, Checkpoint, Detection, DetectorParams, EpochLoss};

/// Student (and, when self-training, teacher) parameters with their
/// optimizer state.
#[derive(Debug, Clone)]
pub struct Trainer<T> {
    pub cfg: TrainConfig,
    pub student: DetectorParams<T>,
    pub teacher: Option<DetectorParams<T>>,
    pub adam: Adam<T>,
    pub schedule: OneCycle,
    pub step: u64,
    pub history: Vec<EpochLoss>,
}

#[derive(Default)]
struct EpochSums {
    steps: usize,
    loss: StepLoss,
    lr: f64,
    pseudo: f64,
}

impl EpochSums {
    fn add(&mut self, l: &StepLoss, lr: f64) {
        self.steps += 1;
        self.lr += lr;
        let s = &mut self.loss;
        s.det_cls += l.det_cls;
        s.det_reg += l.det_reg;
        s.det_refine += l.det_refine;
        s.det += l.det;
        s.text += l.text;
        s.img += l.img;
        s.st += l.st;
        s.total += l.total;
    }

    fn finish(&self, stage: Stage, epoch: usize) -> EpochLoss {
        let n = self.steps.max(1) as f64;
        let s = &self.loss;
        EpochLoss {
            stage: match stage {
                Stage::Pretrain => "pretrain".into(),
                Stage::Selftrain => "selftrain".into(),
            },
            epoch,
            steps: self.steps,
            lr: self.lr / n,
            det_cls: s.det_cls / n,
            det_reg: s.det_reg / n,
            det_refine: s.det_refine / n,
            det: s.det / n,
            text: s.text / n,
            img: s.img / n,
            st: s.st / n,
            total: s.total / n,
            pseudo_labels: self.pseudo,
        }
    }
}

impl<T: Real> Trainer<T> {
    fn new(cfg: &TrainConfig, student: DetectorParams<T>, n_scenes: usize) -> Self {
        let per_epoch = cfg.steps_per_epoch.map_or(n_scenes, |s| s.min(n_scenes));
        let total = (per_epoch * cfg.hyper.epochs).max(1);
        Self {
            adam: Adam::new(&student, cfg.weight_decay),
            schedule: OneCycle::new(cfg.hyper.lr, total),
            cfg: cfg.clone(),
            student,
            teacher: None,
            step: 0,
            history: Vec::new(),
        }
    }

    fn order(&self, n: usize, epoch: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(hash_seed(&[self.cfg.seed, epoch as u64, 0x0de7]));
        idx.shuffle(&mut rng);
        if let Some(s) = self.cfg.steps_per_epoch {
            idx.truncate(s);
        }
        idx
    }

    /// One optimizer step on one scene.
    fn train_scene(
        &mut self,
        prep: &PreparedScene<T>,
        labels: &[Box3D<f64>],
        ignore: &[Box3D<f64>],
        targets: &[Option<AlignTarget<T>>],
        epoch: usize,
        scene: usize,
    ) -> Result<(StepLoss, f64), TrainError> {
        let cfg = &self.cfg;
        let obj = cfg.objective();
        // per-scene stream, shared by every configuration with this seed
        let mut rng = ChaCha8Rng::seed_from_u64(hash_seed(&[cfg.seed, epoch as u64, scene as u64, 0x57e9]));
        let view = if prep.views.len() > 1 && rng.gen_bool(0.5) { 1 } else { 0 };
        let stats = &prep.views[view];
        let extra = sample_extra_rois(stats, labels, cfg.roi_copies, cfg.roi_anchors, &mut rng);
        let teacher_dets: Vec<Detection<T>> = match (&self.teacher, obj.flags.sta) {
            (Some(t), true) => propose(&prep.views[0], t, &cfg.detector, cfg.detector.train_threshold),
            _ => Vec::new(),
        };
        let input = StepInput {
            stats,
            labels,
            targets,
            bg: &prep.bg,
            teacher: &teacher_dets,
            extra_rois: &extra,
            ignore,
        };
        let mut grads = self.student.zeros_like();
        let loss = scene_loss(&input, &self.student, &cfg.detector, &obj, Some(&mut grads));
        let gn = grads.sq_norm().as_f64().sqrt();
        if !loss.total.is_finite() || !gn.is_finite() {
            return Err(TrainError::Diverged {
                epoch,
                step: self.step as usize,
            });
        }
        if gn > cfg.grad_clip {
            grads.scale(T::lit(cfg.grad_clip / gn));
        }
        let s = self.step as usize;
        let lr = self.schedule.lr(s);
        self.adam.step(&mut self.student, &grads, lr, self.schedule.beta1(s));
        if let Some(t) = self.teacher.as_mut() {
            ema_update_in_place(t, &self.student, cfg.hyper.epsilon_ema)?;
        }
        self.step += 1;
        Ok((loss, lr))
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::from_params(&self.cfg.detector, &self.student, self.step, self.history.clone())
    }
}

fn prepare<T: Real>(scenes: &[Scene], cfg: &TrainConfig, lifted: bool) -> Result<Vec<PreparedScene<T>>, TrainError> {
    scenes.iter().map(|s| PreparedScene::new(s, cfg, lifted)).collect()
}

/// Supervised training on labeled source scenes with optional image and
/// text alignment.
pub fn pretrain(scenes: &[Scene], cfg: &TrainConfig) -> Result<Checkpoint, TrainError> {
    pretrain_as::<f32>(scenes, cfg).map(|t| t.checkpoint())
}

pub fn pretrain_as<T: Real>(scenes: &[Scene], cfg: &TrainConfig) -> Result<Trainer<T>, TrainError> {
    cfg.validate()?;
    if scenes.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut cfg = cfg.clone();
    cfg.stage = Stage::Pretrain;
    let prep = prepare::<T>(scenes, &cfg, false)?;
    let labels: Vec<Vec<Box3D<f64>>> = scenes.iter().map(|s| s.labels()).collect();
    let targets: Vec<Vec<Option<AlignTarget<T>>>> =
        scenes.iter().zip(&labels).map(|(s, l)| alignment_targets(s, l, true)).collect();
    let init = DetectorParams::new(&cfg.detector, hash_seed(&[cfg.seed, 0x1417]));
    let mut tr = Trainer::new(&cfg, init, scenes.len());
    for epoch in 0..cfg.hyper.epochs {
        let mut sums = EpochSums::default();
        for i in tr.order(scenes.len(), epoch) {
            let (l, lr) = tr.train_scene(&prep[i], &labels[i], &[], &targets[i], epoch, i)?;
            sums.add(&l, lr);
        }
        let e = sums.finish(Stage::Pretrain, epoch);
        log::info!("pretrain epoch {epoch}: total {:.4} det {:.4}", e.total, e.det);
        tr.history.push(e);
    }
    Ok(tr)
}

/// Mean-teacher self-training on unlabeled target scenes starting from a
/// pre-trained checkpoint.
pub fn selftrain(scenes: &[Scene], init: &Checkpoint, cfg: &TrainConfig) -> Result<Checkpoint, TrainError> {
    selftrain_as::<f32>(scenes, init, cfg).map(|t| t.checkpoint())
}

pub fn selftrain_as<T: Real>(scenes: &[Scene], init: &Checkpoint, cfg: &TrainConfig) -> Result<Trainer<T>, TrainError> {
    cfg.validate()?;
    if scenes.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    if init.arch != cfg.detector {
        return Err(TrainError::Architecture(format!(
            "checkpoint {:?} vs config {:?}",
            init.arch, cfg.detector
        )));
    }
    let mut cfg = cfg.clone();
    cfg.stage = Stage::Selftrain;
    let student: DetectorParams<T> = init.to_params()?;
    let mut tr = Trainer::new(&cfg, student.clone(), scenes.len());
    tr.teacher = Some(student);
    tr.history = init.history.clone();
    let prep = prepare::<T>(scenes, &cfg, cfg.flags.cam)?;
    let want_targets = cfg.flags.ia || cfg.flags.ta;
    for epoch in 0..cfg.hyper.epochs {
        // pseudo labels from the current teacher, refreshed every epoch
        let teacher = tr.teacher.as_ref().expect("teacher set");
        let mut labels = Vec::with_capacity(scenes.len());
        let mut ignored = Vec::with_capacity(scenes.len());
        let mut targets = Vec::with_capacity(scenes.len());
        let mut n_labels = 0usize;
        for (s, p) in scenes.iter().zip(&prep) {
            let all = generate_teacher_labels(teacher, &p.views[0], &cfg.detector, cfg.conf_threshold_ignore);
            let t: Vec<Box3D<f64>> = all
                .iter()
                .filter(|(_, c)| *c >= cfg.conf_threshold_pseudo)
                .map(|(b, _)| *b)
                .collect();
            ignored.push(
                all.iter()
                    .filter(|(_, c)| *c < cfg.conf_threshold_pseudo)
                    .map(|(b, _)| *b)
                    .collect::<Vec<_>>(),
            );
            let merged = if cfg.flags.cam {
                merge_pseudo_labels(&t, &p.lifted, cfg.hyper.tau, cfg.hyper.xi, cfg.hyper.iou_variant).merged
            } else {
                t
            };
            n_labels += merged.len();
            targets.push(if want_targets {
                alignment_targets(s, &merged, false)
            } else {
                vec![None; merged.len()]
            });
            labels.push(merged);
        }
        let mut sums = EpochSums {
            pseudo: n_labels as f64 / scenes.len() as f64,
            ..Default::default()
        };
        for i in tr.order(scenes.len(), epoch) {
            let (l, lr) = tr.train_scene(&prep[i], &labels[i], &ignored[i], &targets[i], epoch, i)?;
            sums.add(&l, lr);
        }
        let e = sums.finish(Stage::Selftrain, epoch);
        log::info!(
            "selftrain epoch {epoch}: total {:.4} det {:.4} pseudo/scene {:.2}",
            e.total,
            e.det,
            e.pseudo_labels
        );
        tr.history.push(e);
    }
    Ok(tr)
}
