//! Rotated-grid RoI pooling over the encoder feature map.

use super::{BevGrid, DetectorParams};
use crate::geometry::Box3D;
use crate::nn::{relu_backward, relu_inplace};
use crate::scalar::Real;

/// Bilinear taps of one sample: feature row (or -1 when the cell is empty
/// or off-grid) and weight.
type Taps = [(i32, f64); 4];

/// Channels each RoI sample keeps in the local layout feature.
pub const LOCAL_CH: usize = 4;

/// Activations needed to backpropagate through one pooled box.
#[derive(Debug, Clone, PartialEq)]
pub struct RoiTrace<T> {
    /// Max-pooled encoder channels.
    pub pooled: Vec<T>,
    /// Winning sample per channel.
    pub argmax: Vec<u16>,
    taps: Vec<Taps>,
    /// Bilinear reads, `samples x channels`.
    samples: Vec<T>,
    /// `relu(roi(pooled))`.
    pub f3d: Vec<T>,
    /// `roi_local` applied to every sample, `samples x LOCAL_CH`. Unlike the
    /// max-pool this keeps where inside the box each response sits.
    pub local: Vec<T>,
}

fn taps<T: Real>(grid: &BevGrid<T>, x: f64, y: f64) -> Taps {
    let g = &grid.grid;
    let fx = (x - g.x_min) / g.resolution - 0.5;
    let fy = (y - g.y_min) / g.resolution - 0.5;
    let ix = fx.floor();
    let iy = fy.floor();
    let tx = fx - ix;
    let ty = fy - iy;
    let (ix, iy) = (ix as isize, iy as isize);
    let row = |dx: isize, dy: isize| grid.row_of(ix + dx, iy + dy).map_or(-1, |r| r as i32);
    [
        (row(0, 0), (1.0 - tx) * (1.0 - ty)),
        (row(1, 0), tx * (1.0 - ty)),
        (row(0, 1), (1.0 - tx) * ty),
        (row(1, 1), tx * ty),
    ]
}

/// Samples an `n x n` rotated grid inside the footprint of `b` and max-pools
/// each channel over the samples. Off-grid and empty cells read as zero.
pub fn pool_box<T: Real>(grid: &BevGrid<T>, b: &Box3D<f64>, n: usize) -> RoiTrace<T> {
    let c = grid.channels;
    let (s, co) = b.theta.sin_cos();
    let mut pooled = vec![T::neg_infinity(); c];
    let mut argmax = vec![0u16; c];
    let mut all = Vec::with_capacity(n * n);
    let mut samples = Vec::with_capacity(n * n * c);
    let mut v = vec![T::zero(); c];
    for i in 0..n {
        for j in 0..n {
            let u = ((i as f64 + 0.5) / n as f64 - 0.5) * b.l;
            let w = ((j as f64 + 0.5) / n as f64 - 0.5) * b.w;
            let t = taps(grid, b.x + co * u - s * w, b.y + s * u + co * w);
            v.iter_mut().for_each(|x| *x = T::zero());
            for &(r, wt) in &t {
                if r < 0 {
                    continue;
                }
                let wt = T::lit(wt);
                let f = &grid.feats[r as usize * c..(r as usize + 1) * c];
                for (x, fk) in v.iter_mut().zip(f) {
                    *x += wt * *fk;
                }
            }
            let k = all.len() as u16;
            for ch in 0..c {
                if v[ch] > pooled[ch] {
                    pooled[ch] = v[ch];
                    argmax[ch] = k;
                }
            }
            all.push(t);
            samples.extend_from_slice(&v);
        }
    }
    if all.is_empty() {
        pooled.iter_mut().for_each(|x| *x = T::zero());
    }
    RoiTrace {
        pooled,
        argmax,
        taps: all,
        samples,
        f3d: Vec::new(),
        local: Vec::new(),
    }
}

/// Pooled features of `b` projected to the RoI feature width.
pub fn extract_box_feature<T: Real>(
    grid: &BevGrid<T>,
    b: &Box3D<f64>,
    params: &DetectorParams<T>,
    n: usize,
) -> RoiTrace<T> {
    let mut t = pool_box(grid, b, n);
    let mut f = params.roi.apply(&t.pooled);
    relu_inplace(&mut f);
    t.f3d = f;
    let c = grid.channels;
    t.local = t
        .samples
        .chunks(c)
        .flat_map(|s| params.roi_local.apply(s))
        .collect();
    t
}

/// Backpropagates `d_f3d` and `d_local` through the projections, the
/// max-pool and the bilinear reads into `d_feats` (layout of `grid.feats`).
pub(crate) fn roi_backward<T: Real>(
    trace: &RoiTrace<T>,
    d_f3d: &[T],
    d_local: &[T],
    params: &DetectorParams<T>,
    grads: &mut DetectorParams<T>,
    d_feats: &mut [T],
) {
    let c = trace.pooled.len();
    let mut ds = vec![T::zero(); c];
    for (k, dl) in d_local.chunks(LOCAL_CH).enumerate() {
        if dl.iter().all(|v| *v == T::zero()) {
            continue;
        }
        ds.iter_mut().for_each(|v| *v = T::zero());
        let s = &trace.samples[k * c..(k + 1) * c];
        params.roi_local.backward(s, dl, &mut grads.roi_local, Some(&mut ds));
        for &(r, wt) in &trace.taps[k] {
            if r >= 0 {
                let wt = T::lit(wt);
                for ch in 0..c {
                    d_feats[r as usize * c + ch] += wt * ds[ch];
                }
            }
        }
    }
    let mut d = d_f3d.to_vec();
    relu_backward(&trace.f3d, &mut d);
    let mut dp = vec![T::zero(); c];
    params.roi.backward(&trace.pooled, &d, &mut grads.roi, Some(&mut dp));
    if trace.taps.is_empty() {
        return;
    }
    for ch in 0..c {
        if dp[ch] == T::zero() {
            continue;
        }
        for &(r, wt) in &trace.taps[trace.argmax[ch] as usize] {
            if r >= 0 {
                d_feats[r as usize * c + ch] += T::lit(wt) * dp[ch];
            }
        }
    }
}
