use serde::{Deserialize, Serialize};

use crate::nn::{Linear, Mlp, MlpTrace};
use crate::scalar::Real;

/// Two independent two-layer maps from RoI features into the image and
/// text feature spaces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionHeads<T> {
    pub img: Mlp<T>,
    pub text: Mlp<T>,
}

/// Maps the projected features back to the RoI width and predicts the
/// three fusion weights from the concatenation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionHead<T> {
    pub img_map: Linear<T>,
    pub text_map: Linear<T>,
    pub weight: Mlp<T>,
}

#[derive(Debug, Clone)]
pub struct ProjectionTrace<T> {
    pub img: MlpTrace<T>,
    pub text: MlpTrace<T>,
}

impl<T> ProjectionTrace<T> {
    pub fn f_img(&self) -> &[T] {
        &self.img.out
    }

    pub fn f_text(&self) -> &[T] {
        &self.text.out
    }
}

/// `linear` disables the hidden activation.
pub fn project_heads<T: Real>(f3d: &[T], heads: &ProjectionHeads<T>, linear: bool) -> ProjectionTrace<T> {
    ProjectionTrace {
        img: heads.img.forward(f3d, linear),
        text: heads.text.forward(f3d, linear),
    }
}

/// Accumulates head gradients and adds the input gradient into `d_f3d`.
#[allow(clippy::too_many_arguments)]
pub fn project_heads_backward<T: Real>(
    f3d: &[T],
    trace: &ProjectionTrace<T>,
    d_img: &[T],
    d_text: &[T],
    heads: &ProjectionHeads<T>,
    grads: &mut ProjectionHeads<T>,
    linear: bool,
    d_f3d: &mut [T],
) {
    if d_img.iter().any(|v| *v != T::zero()) {
        heads.img.backward(f3d, &trace.img, d_img, linear, &mut grads.img, Some(&mut *d_f3d));
    }
    if d_text.iter().any(|v| *v != T::zero()) {
        heads.text.backward(f3d, &trace.text, d_text, linear, &mut grads.text, Some(d_f3d));
    }
}

/// How fusion logits become weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FuseWeights {
    Softmax,
    /// Logits used as weights directly.
    Raw,
    /// Fixed weights; the weight head is bypassed.
    Forced([f64; 3]),
}

#[derive(Debug, Clone)]
pub struct FuseTrace<T> {
    pub img_mapped: Vec<T>,
    pub text_mapped: Vec<T>,
    pub concat: Vec<T>,
    pub weight: Option<MlpTrace<T>>,
    pub w: [T; 3],
    pub out: Vec<T>,
}

/// `w0 * f3d + w1 * img_map(f_img) + w2 * text_map(f_text)`.
pub fn fuse<T: Real>(f3d: &[T], f_img: &[T], f_text: &[T], head: &FusionHead<T>, mode: FuseWeights) -> FuseTrace<T> {
    let b = head.img_map.apply(f_img);
    let c = head.text_map.apply(f_text);
    let mut concat = Vec::with_capacity(3 * f3d.len());
    concat.extend_from_slice(f3d);
    concat.extend_from_slice(&b);
    concat.extend_from_slice(&c);
    let (weight, w) = match mode {
        FuseWeights::Forced(w) => (None, [T::lit(w[0]), T::lit(w[1]), T::lit(w[2])]),
        FuseWeights::Raw => {
            let t = head.weight.forward(&concat, false);
            let w = [t.out[0], t.out[1], t.out[2]];
            (Some(t), w)
        }
        FuseWeights::Softmax => {
            let t = head.weight.forward(&concat, false);
            let m = t.out[0].max(t.out[1]).max(t.out[2]);
            let e = [(t.out[0] - m).exp(), (t.out[1] - m).exp(), (t.out[2] - m).exp()];
            let s = e[0] + e[1] + e[2];
            (Some(t), [e[0] / s, e[1] / s, e[2] / s])
        }
    };
    let out = f3d
        .iter()
        .zip(&b)
        .zip(&c)
        .map(|((a, b), c)| w[0] * *a + w[1] * *b + w[2] * *c)
        .collect();
    FuseTrace {
        img_mapped: b,
        text_mapped: c,
        concat,
        weight,
        w,
        out,
    }
}

/// Input gradients `(d_f3d, d_f_img, d_f_text)` of [`fuse`]; parameter
/// gradients are accumulated into `grads`.
#[allow(clippy::too_many_arguments)]
pub fn fuse_backward<T: Real>(
    f3d: &[T],
    f_img: &[T],
    f_text: &[T],
    trace: &FuseTrace<T>,
    d_out: &[T],
    head: &FusionHead<T>,
    grads: &mut FusionHead<T>,
    mode: FuseWeights,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let n = f3d.len();
    let w = trace.w;
    let mut d_concat = vec![T::zero(); 3 * n];
    for k in 0..n {
        d_concat[k] = w[0] * d_out[k];
        d_concat[n + k] = w[1] * d_out[k];
        d_concat[2 * n + k] = w[2] * d_out[k];
    }
    if let Some(wt) = &trace.weight {
        let dot = |v: &[T]| v.iter().zip(d_out).fold(T::zero(), |a, (x, y)| a + *x * *y);
        let dw = [dot(f3d), dot(&trace.img_mapped), dot(&trace.text_mapped)];
        let dlogit = match mode {
            FuseWeights::Raw => dw,
            _ => {
                let m = w[0] * dw[0] + w[1] * dw[1] + w[2] * dw[2];
                [w[0] * (dw[0] - m), w[1] * (dw[1] - m), w[2] * (dw[2] - m)]
            }
        };
        head.weight
            .backward(&trace.concat, wt, &dlogit, false, &mut grads.weight, Some(&mut d_concat));
    }
    let mut d_img = vec![T::zero(); f_img.len()];
    head.img_map
        .backward(f_img, &d_concat[n..2 * n], &mut grads.img_map, Some(&mut d_img));
    let mut d_text = vec![T::zero(); f_text.len()];
    head.text_map
        .backward(f_text, &d_concat[2 * n..], &mut grads.text_map, Some(&mut d_text));
    d_concat.truncate(n);
    (d_concat, d_img, d_text)
}
