//! Pillar statistics and the trainable per-cell encoder.

use super::{DetectorConfig, DetectorParams, GridConfig};
use crate::nn::relu_backward;
use crate::scalar::Real;
use crate::synthworld::LidarPoint;

/// Statistics per occupied pillar: log count, max/mean/min height, height
/// span, mean in-cell x/y offset, fraction of points above 0.3 m.
pub const STATS: usize = 8;
/// Height above which a return counts as an object return.
pub const NON_GROUND_Z: f64 = 0.3;

/// Sparse per-pillar statistics; not trainable, so they can be cached.
#[derive(Debug, Clone, PartialEq)]
pub struct PillarStats<T> {
    pub grid: GridConfig,
    /// Occupied cells, ascending.
    pub cells: Vec<u32>,
    /// `cells.len() x STATS`, row-major.
    pub stats: Vec<T>,
    /// Highest return per occupied cell.
    pub max_z: Vec<f64>,
}

impl<T: Real> PillarStats<T> {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn row(&self, k: usize) -> &[T] {
        &self.stats[k * STATS..(k + 1) * STATS]
    }
}

#[derive(Clone, Copy)]
struct Acc {
    n: u32,
    above: u32,
    sum_z: f64,
    max_z: f64,
    min_z: f64,
    sum_dx: f64,
    sum_dy: f64,
}

/// Pools the points of each pillar. Points outside the grid are dropped.
pub fn pillar_stats<T: Real>(points: &[LidarPoint], grid: &GridConfig) -> PillarStats<T> {
    let empty = Acc {
        n: 0,
        above: 0,
        sum_z: 0.0,
        max_z: f64::NEG_INFINITY,
        min_z: f64::INFINITY,
        sum_dx: 0.0,
        sum_dy: 0.0,
    };
    let mut acc = vec![empty; grid.cells()];
    for p in points {
        let [x, y, z] = p.xyz();
        let Some(c) = grid.cell_of(x, y) else {
            continue;
        };
        let (cx, cy) = grid.center(c);
        let a = &mut acc[c];
        a.n += 1;
        a.above += u32::from(z > NON_GROUND_Z);
        a.sum_z += z;
        a.max_z = a.max_z.max(z);
        a.min_z = a.min_z.min(z);
        a.sum_dx += (x - cx) / grid.resolution;
        a.sum_dy += (y - cy) / grid.resolution;
    }
    let mut out = PillarStats {
        grid: *grid,
        cells: Vec::new(),
        stats: Vec::new(),
        max_z: Vec::new(),
    };
    for (c, a) in acc.iter().enumerate() {
        if a.n == 0 {
            continue;
        }
        let n = a.n as f64;
        let row = [
            (1.0 + n).ln() / 3.0,
            a.max_z / 2.0,
            a.sum_z / n / 2.0,
            a.min_z / 2.0,
            (a.max_z - a.min_z) / 2.0,
            a.sum_dx / n,
            a.sum_dy / n,
            a.above as f64 / n,
        ];
        out.cells.push(c as u32);
        out.stats.extend(row.iter().map(|v| T::lit(*v)));
        out.max_z.push(a.max_z);
    }
    out
}

/// Encoded BEV feature map, stored sparsely: empty cells read as zero.
#[derive(Debug, Clone, PartialEq)]
pub struct BevGrid<T> {
    pub grid: GridConfig,
    pub channels: usize,
    /// Row of each cell in `feats`, or -1 for empty cells.
    pub index: Vec<i32>,
    pub cells: Vec<u32>,
    /// `cells.len() x channels`.
    pub feats: Vec<T>,
}

impl<T: Real> BevGrid<T> {
    pub fn feature(&self, cell: usize) -> Option<&[T]> {
        let r = self.index[cell];
        (r >= 0).then(|| &self.feats[r as usize * self.channels..(r as usize + 1) * self.channels])
    }

    pub fn row_of(&self, ix: isize, iy: isize) -> Option<usize> {
        if ix < 0 || iy < 0 || ix >= self.grid.nx() as isize || iy >= self.grid.ny() as isize {
            return None;
        }
        let r = self.index[iy as usize * self.grid.nx() + ix as usize];
        (r >= 0).then_some(r as usize)
    }

    /// Dense `ny x nx x channels` copy.
    pub fn dense(&self) -> Vec<T> {
        let mut d = vec![T::zero(); self.grid.cells() * self.channels];
        for (k, &c) in self.cells.iter().enumerate() {
            let c = c as usize;
            d[c * self.channels..(c + 1) * self.channels]
                .copy_from_slice(&self.feats[k * self.channels..(k + 1) * self.channels]);
        }
        d
    }

    /// Cells with at least one nonzero channel.
    pub fn nonzero_cells(&self) -> Vec<usize> {
        self.cells
            .iter()
            .enumerate()
            .filter(|(k, _)| {
                self.feats[k * self.channels..(k + 1) * self.channels]
                    .iter()
                    .any(|v| *v != T::zero())
            })
            .map(|(_, &c)| c as usize)
            .collect()
    }
}

/// Runs the per-cell encoder over cached statistics.
pub fn encode_stats<T: Real>(stats: &PillarStats<T>, params: &DetectorParams<T>) -> BevGrid<T> {
    let c = params.encoder.out;
    let mut index = vec![-1i32; stats.grid.cells()];
    let mut feats = vec![T::zero(); stats.len() * c];
    for k in 0..stats.len() {
        index[stats.cells[k] as usize] = k as i32;
        let y = &mut feats[k * c..(k + 1) * c];
        params.encoder.forward(stats.row(k), y);
        crate::nn::relu_inplace(y);
    }
    BevGrid {
        grid: stats.grid,
        channels: c,
        index,
        cells: stats.cells.clone(),
        feats,
    }
}

pub fn encode_bev<T: Real>(
    points: &[LidarPoint],
    params: &DetectorParams<T>,
    cfg: &DetectorConfig,
) -> BevGrid<T> {
    encode_stats(&pillar_stats(points, &cfg.grid), params)
}

/// Backpropagates `d_feats` (same layout as `grid.feats`) into the encoder.
pub(super) fn encoder_backward<T: Real>(
    stats: &PillarStats<T>,
    grid: &BevGrid<T>,
    d_feats: &[T],
    params: &DetectorParams<T>,
    grads: &mut DetectorParams<T>,
) {
    let c = grid.channels;
    let mut d = vec![T::zero(); c];
    for k in 0..stats.len() {
        let dk = &d_feats[k * c..(k + 1) * c];
        if dk.iter().all(|v| *v == T::zero()) {
            continue;
        }
        d.copy_from_slice(dk);
        relu_backward(&grid.feats[k * c..(k + 1) * c], &mut d);
        params.encoder.backward(stats.row(k), &d, &mut grads.encoder, None);
    }
}
