//! Adam with a one-cycle learning-rate and momentum schedule.

use serde::{Deserialize, Serialize};

use crate::scalar::Real;
use crate::toydet::DetectorParams;

/// Cosine one-cycle schedule: warm up from `max_lr / div_factor` to `max_lr`
/// over the first `pct_start` of the steps, then anneal to
/// `max_lr / (div_factor * final_div_factor)`. The first-moment decay moves
/// inversely between `moms.0` and `moms.1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OneCycle {
    pub max_lr: f64,
    pub total_steps: usize,
    pub pct_start: f64,
    pub div_factor: f64,
    pub final_div_factor: f64,
    pub moms: (f64, f64),
}

fn cos_anneal(start: f64, end: f64, frac: f64) -> f64 {
    end + (start - end) / 2.0 * (1.0 + (std::f64::consts::PI * frac).cos())
}

impl OneCycle {
    pub fn new(max_lr: f64, total_steps: usize) -> Self {
        Self {
            max_lr,
            total_steps,
            pct_start: 0.4,
            div_factor: 10.0,
            final_div_factor: 1e4,
            moms: (0.95, 0.85),
        }
    }

    fn phase(&self, step: usize) -> (bool, f64) {
        let warm = ((self.total_steps as f64 * self.pct_start).round() as usize).max(1);
        if step < warm {
            (true, step as f64 / warm as f64)
        } else {
            let rest = self.total_steps.saturating_sub(warm).max(1);
            (false, ((step - warm) as f64 / rest as f64).min(1.0))
        }
    }

    pub fn lr(&self, step: usize) -> f64 {
        let init = self.max_lr / self.div_factor;
        match self.phase(step) {
            (true, f) => cos_anneal(init, self.max_lr, f),
            (false, f) => cos_anneal(self.max_lr, init / self.final_div_factor, f),
        }
    }

    pub fn beta1(&self, step: usize) -> f64 {
        match self.phase(step) {
            (true, f) => cos_anneal(self.moms.0, self.moms.1, f),
            (false, f) => cos_anneal(self.moms.1, self.moms.0, f),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: DetectorParams<T>,
    v: DetectorParams<T>,
    t: u32,
}

impl<T: Real> Adam<T> {
    pub fn new(like: &DetectorParams<T>, weight_decay: f64) -> Self {
        Self {
            beta2: 0.99,
            eps: 1e-8,
            weight_decay,
            m: like.zeros_like(),
            v: like.zeros_like(),
            t: 0,
        }
    }

    /// One update with decoupled weight decay.
    pub fn step(&mut self, params: &mut DetectorParams<T>, grads: &DetectorParams<T>, lr: f64, beta1: f64) {
        self.t += 1;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let (b1, b2) = (T::lit(beta1), T::lit(self.beta2));
        let step = T::lit(lr / bc1);
        let decay = T::lit(1.0 - lr * self.weight_decay);
        let eps = T::lit(self.eps);
        let inv_bc2 = T::lit(1.0 / bc2);
        let g_all = grads.tensors();
        for ((((_, p), (_, m)), (_, v)), g) in params
            .tensors_mut()
            .into_iter()
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut())
            .zip(g_all.iter())
        {
            for i in 0..p.len() {
                let gi = g.2[i];
                m[i] = b1 * m[i] + (T::one() - b1) * gi;
                v[i] = b2 * v[i] + (T::one() - b2) * gi * gi;
                p[i] = p[i] * decay - step * m[i] / ((v[i] * inv_bc2).sqrt() + eps);
            }
        }
    }
}
