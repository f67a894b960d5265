use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DetectorConfig, HEAD_OUT, LOCAL_CH, REFINE_OUT, STATS};
use crate::alignfuse::{FusionHead, ProjectionHeads};
use crate::nn::{Linear, Mlp};
use crate::scalar::Real;
use crate::synthworld::{C_IMG, C_TEXT};

/// Every trainable array of the detector, including the alignment
/// projection heads and the fusion head. The same type doubles as a
/// gradient accumulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorParams<T> {
    pub encoder: Linear<T>,
    pub reduce: Linear<T>,
    pub mix: Linear<T>,
    pub head: Linear<T>,
    pub roi: Linear<T>,
    pub roi_local: Linear<T>,
    pub project: ProjectionHeads<T>,
    pub fusion: FusionHead<T>,
    pub refine: Mlp<T>,
}

/// Prior probability behind the objectness bias initialization.
const PRIOR: f64 = 0.01;

impl<T: Real> DetectorParams<T> {
    pub fn new(cfg: &DetectorConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = cfg.channels;
        let mut head = Linear::init(cfg.hidden, HEAD_OUT, true, 0.1, &mut rng);
        head.b[0] = T::lit(-((1.0 - PRIOR) / PRIOR).ln());
        let mut encoder = Linear::init(STATS, c, true, 1.0, &mut rng);
        for b in encoder.b.iter_mut() {
            *b = T::lit(0.05);
        }
        // zero output layer: refinement starts as the identity on boxes
        let refine = Mlp::init(cfg.refine_inputs(), cfg.refine_hidden, REFINE_OUT, 0.0, &mut rng);
        Self {
            encoder,
            reduce: Linear::init(c, cfg.reduced, false, 1.0, &mut rng),
            mix: Linear::init(cfg.mix_inputs(), cfg.hidden, true, 1.0, &mut rng),
            head,
            roi: Linear::init(c, cfg.c3d, true, 1.0, &mut rng),
            roi_local: Linear::init(c, LOCAL_CH, false, 1.0, &mut rng),
            project: ProjectionHeads {
                img: Mlp::init(cfg.c3d, cfg.proj_hidden, C_IMG, 1.0, &mut rng),
                text: Mlp::init(cfg.c3d, cfg.proj_hidden, C_TEXT, 1.0, &mut rng),
            },
            fusion: FusionHead {
                img_map: Linear::init(C_IMG, cfg.c3d, true, 0.5, &mut rng),
                text_map: Linear::init(C_TEXT, cfg.c3d, true, 0.5, &mut rng),
                weight: Mlp::init(3 * cfg.c3d, cfg.fuse_hidden, 3, 0.0, &mut rng),
            },
            refine,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            encoder: self.encoder.zeros_like(),
            reduce: self.reduce.zeros_like(),
            mix: self.mix.zeros_like(),
            head: self.head.zeros_like(),
            roi: self.roi.zeros_like(),
            roi_local: self.roi_local.zeros_like(),
            project: ProjectionHeads {
                img: self.project.img.zeros_like(),
                text: self.project.text.zeros_like(),
            },
            fusion: FusionHead {
                img_map: self.fusion.img_map.zeros_like(),
                text_map: self.fusion.text_map.zeros_like(),
                weight: self.fusion.weight.zeros_like(),
            },
            refine: self.refine.zeros_like(),
        }
    }

    /// Named arrays with their shapes, in a fixed order.
    pub fn tensors(&self) -> Vec<(String, Vec<usize>, &[T])> {
        let mut out = Vec::new();
        for (name, l) in self.all_layers() {
            out.push((format!("{name}.w"), vec![l.out, l.inp], l.w.as_slice()));
            if l.has_bias() {
                out.push((format!("{name}.b"), vec![l.out], l.b.as_slice()));
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Vec<T>)> {
        let mut out = Vec::new();
        for (name, l) in self.all_layers_mut() {
            let has_bias = l.has_bias();
            out.push((format!("{name}.w"), &mut l.w));
            if has_bias {
                out.push((format!("{name}.b"), &mut l.b));
            }
        }
        out
    }

    fn all_layers(&self) -> Vec<(&'static str, &Linear<T>)> {
        vec![
            ("encoder", &self.encoder),
            ("reduce", &self.reduce),
            ("mix", &self.mix),
            ("head", &self.head),
            ("roi", &self.roi),
            ("roi_local", &self.roi_local),
            ("project.img.l1", &self.project.img.l1),
            ("project.img.l2", &self.project.img.l2),
            ("project.text.l1", &self.project.text.l1),
            ("project.text.l2", &self.project.text.l2),
            ("fusion.img_map", &self.fusion.img_map),
            ("fusion.text_map", &self.fusion.text_map),
            ("fusion.weight.l1", &self.fusion.weight.l1),
            ("fusion.weight.l2", &self.fusion.weight.l2),
            ("refine.l1", &self.refine.l1),
            ("refine.l2", &self.refine.l2),
        ]
    }

    fn all_layers_mut(&mut self) -> Vec<(&'static str, &mut Linear<T>)> {
        vec![
            ("encoder", &mut self.encoder),
            ("reduce", &mut self.reduce),
            ("mix", &mut self.mix),
            ("head", &mut self.head),
            ("roi", &mut self.roi),
            ("roi_local", &mut self.roi_local),
            ("project.img.l1", &mut self.project.img.l1),
            ("project.img.l2", &mut self.project.img.l2),
            ("project.text.l1", &mut self.project.text.l1),
            ("project.text.l2", &mut self.project.text.l2),
            ("fusion.img_map", &mut self.fusion.img_map),
            ("fusion.text_map", &mut self.fusion.text_map),
            ("fusion.weight.l1", &mut self.fusion.weight.l1),
            ("fusion.weight.l2", &mut self.fusion.weight.l2),
            ("refine.l1", &mut self.refine.l1),
            ("refine.l2", &mut self.refine.l2),
        ]
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.2.len()).sum()
    }

    /// Shapes in [`tensors`](Self::tensors) order.
    pub fn shapes(&self) -> Vec<(String, Vec<usize>)> {
        self.tensors().into_iter().map(|(n, s, _)| (n, s)).collect()
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.shapes() == other.shapes()
    }

    /// Flattened copy of every array.
    pub fn flat(&self) -> Vec<T> {
        self.tensors().into_iter().flat_map(|t| t.2.iter().copied()).collect()
    }

    pub fn set_flat(&mut self, v: &[T]) {
        let mut it = v.iter();
        for (_, arr) in self.tensors_mut() {
            for x in arr.iter_mut() {
                *x = *it.next().expect("flat vector long enough");
            }
        }
    }

    pub fn cast<U: Real>(&self) -> DetectorParams<U> {
        DetectorParams::<U> {
            encoder: cast_linear(&self.encoder),
            reduce: cast_linear(&self.reduce),
            mix: cast_linear(&self.mix),
            head: cast_linear(&self.head),
            roi: cast_linear(&self.roi),
            roi_local: cast_linear(&self.roi_local),
            project: ProjectionHeads {
                img: cast_mlp(&self.project.img),
                text: cast_mlp(&self.project.text),
            },
            fusion: FusionHead {
                img_map: cast_linear(&self.fusion.img_map),
                text_map: cast_linear(&self.fusion.text_map),
                weight: cast_mlp(&self.fusion.weight),
            },
            refine: cast_mlp(&self.refine),
        }
    }

    /// `self += k * other`.
    pub fn add_scaled(&mut self, other: &Self, k: T) {
        let src = other.flat();
        let mut i = 0;
        for (_, arr) in self.tensors_mut() {
            for x in arr.iter_mut() {
                *x += k * src[i];
                i += 1;
            }
        }
    }

    pub fn scale(&mut self, k: T) {
        for (_, arr) in self.tensors_mut() {
            arr.iter_mut().for_each(|x| *x *= k);
        }
    }

    pub fn sq_norm(&self) -> T {
        self.tensors()
            .iter()
            .flat_map(|t| t.2.iter())
            .fold(T::zero(), |a, x| a + *x * *x)
    }
}

fn cast_linear<T: Real, U: Real>(l: &Linear<T>) -> Linear<U> {
    Linear {
        inp: l.inp,
        out: l.out,
        w: l.w.iter().map(|x| U::cast(*x)).collect(),
        b: l.b.iter().map(|x| U::cast(*x)).collect(),
    }
}

fn cast_mlp<T: Real, U: Real>(m: &Mlp<T>) -> Mlp<U> {
    Mlp {
        l1: cast_linear(&m.l1),
        l2: cast_linear(&m.l2),
    }
}
