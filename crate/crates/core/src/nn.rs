//! Dense layers with hand-written backward passes.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::scalar::Real;

/// `y = W x + b` with `W` stored row-major as `out x inp`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear<T> {
    pub inp: usize,
    pub out: usize,
    pub w: Vec<T>,
    /// Empty when the layer has no bias.
    pub b: Vec<T>,
}

impl<T: Real> Linear<T> {
    pub fn zeros(inp: usize, out: usize, bias: bool) -> Self {
        Self {
            inp,
            out,
            w: vec![T::zero(); inp * out],
            b: if bias { vec![T::zero(); out] } else { Vec::new() },
        }
    }

    /// He-normal weights scaled by `gain`, zero bias.
    pub fn init<R: Rng>(inp: usize, out: usize, bias: bool, gain: f64, rng: &mut R) -> Self {
        let mut l = Self::zeros(inp, out, bias);
        let std = gain * (2.0 / inp as f64).sqrt();
        if std > 0.0 {
            let n = Normal::new(0.0, std).expect("positive std");
            for w in l.w.iter_mut() {
                *w = T::lit(n.sample(rng));
            }
        }
        l
    }

    pub fn has_bias(&self) -> bool {
        !self.b.is_empty()
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.inp, self.out, self.has_bias())
    }

    pub fn forward(&self, x: &[T], y: &mut [T]) {
        debug_assert_eq!(x.len(), self.inp);
        debug_assert_eq!(y.len(), self.out);
        for (o, yo) in y.iter_mut().enumerate() {
            let row = &self.w[o * self.inp..(o + 1) * self.inp];
            let mut acc = if self.b.is_empty() { T::zero() } else { self.b[o] };
            for (wi, xi) in row.iter().zip(x) {
                acc += *wi * *xi;
            }
            *yo = acc;
        }
    }

    pub fn apply(&self, x: &[T]) -> Vec<T> {
        let mut y = vec![T::zero(); self.out];
        self.forward(x, &mut y);
        y
    }

    /// Accumulates parameter gradients into `g` and, when given, the input
    /// gradient into `dx`.
    pub fn backward(&self, x: &[T], dy: &[T], g: &mut Linear<T>, dx: Option<&mut [T]>) {
        for (o, &d) in dy.iter().enumerate() {
            if d == T::zero() {
                continue;
            }
            let grow = &mut g.w[o * self.inp..(o + 1) * self.inp];
            for (gi, xi) in grow.iter_mut().zip(x) {
                *gi += d * *xi;
            }
            if !g.b.is_empty() {
                g.b[o] += d;
            }
        }
        if let Some(dx) = dx {
            for (o, &d) in dy.iter().enumerate() {
                if d == T::zero() {
                    continue;
                }
                let row = &self.w[o * self.inp..(o + 1) * self.inp];
                for (dxi, wi) in dx.iter_mut().zip(row) {
                    *dxi += d * *wi;
                }
            }
        }
    }
}

pub fn relu_inplace<T: Real>(v: &mut [T]) {
    for x in v.iter_mut() {
        if *x < T::zero() {
            *x = T::zero();
        }
    }
}

/// Zeroes `d` wherever the post-activation `y` is not positive.
pub fn relu_backward<T: Real>(y: &[T], d: &mut [T]) {
    for (di, yi) in d.iter_mut().zip(y) {
        if *yi <= T::zero() {
            *di = T::zero();
        }
    }
}

pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Two-layer perceptron `l2(relu(l1 x))`; `linear` skips the activation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp<T> {
    pub l1: Linear<T>,
    pub l2: Linear<T>,
}

/// Saved activations of one [`Mlp`] evaluation.
#[derive(Debug, Clone)]
pub struct MlpTrace<T> {
    pub hidden: Vec<T>,
    pub out: Vec<T>,
}

impl<T: Real> Mlp<T> {
    pub fn init<R: Rng>(inp: usize, hidden: usize, out: usize, gain2: f64, rng: &mut R) -> Self {
        Self {
            l1: Linear::init(inp, hidden, true, 1.0, rng),
            l2: Linear::init(hidden, out, true, gain2, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            l1: self.l1.zeros_like(),
            l2: self.l2.zeros_like(),
        }
    }

    pub fn forward(&self, x: &[T], linear: bool) -> MlpTrace<T> {
        let mut hidden = self.l1.apply(x);
        if !linear {
            relu_inplace(&mut hidden);
        }
        let out = self.l2.apply(&hidden);
        MlpTrace { hidden, out }
    }

    pub fn backward(
        &self,
        x: &[T],
        trace: &MlpTrace<T>,
        dout: &[T],
        linear: bool,
        g: &mut Mlp<T>,
        dx: Option<&mut [T]>,
    ) {
        let mut dh = vec![T::zero(); self.l1.out];
        self.l2.backward(&trace.hidden, dout, &mut g.l2, Some(&mut dh));
        if !linear {
            relu_backward(&trace.hidden, &mut dh);
        }
        self.l1.backward(x, &dh, &mut g.l1, dx);
    }
}
