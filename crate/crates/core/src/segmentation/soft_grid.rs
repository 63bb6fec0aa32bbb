//! Randomized low-resolution keep grids, trilinearly upsampled to the video.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{param, Result};
use crate::perturbation::SoftMask;
use crate::tensor::Dims;

/// Cell counts of a low-resolution grid along `(t, y, x)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridShape {
    pub t: usize,
    pub y: usize,
    pub x: usize,
}

impl GridShape {
    pub const fn new(t: usize, y: usize, x: usize) -> Self {
        Self { t, y, x }
    }

    pub fn cells(&self) -> usize {
        self.t * self.y * self.x
    }
}

/// Source sample positions for resizing `cells` to `n` with cell-centre
/// alignment: `(lower index, upper index, fraction)` per output coordinate.
fn axis_taps(cells: usize, n: usize) -> Vec<(usize, usize, f32)> {
    (0..n)
        .map(|i| {
            let s =
                ((i as f64 + 0.5) * cells as f64 / n as f64 - 0.5).clamp(0.0, (cells - 1) as f64);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(cells - 1);
            (i0, i1, (s - i0 as f64) as f32)
        })
        .collect()
}

#[inline]
fn lerp(a: f32, b: f32, f: f32) -> f32 {
    a + f * (b - a)
}

/// Trilinear upsampling of per-cell keep values (in `(t, y, x)` order) to
/// a full-resolution soft mask.
pub fn upsample_cells(cells: &[f32], grid: GridShape, dims: Dims) -> Result<SoftMask> {
    if grid.t == 0 || grid.y == 0 || grid.x == 0 {
        return param("grid dims must be >= 1");
    }
    if cells.len() != grid.cells() {
        return param(format!(
            "{} cell values for a {}x{}x{} grid",
            cells.len(),
            grid.t,
            grid.y,
            grid.x
        ));
    }
    let tt = axis_taps(grid.t, dims.t);
    let ty = axis_taps(grid.y, dims.h);
    let tx = axis_taps(grid.x, dims.w);
    let cell = |t: usize, y: usize, x: usize| cells[(t * grid.y + y) * grid.x + x];
    let mut data = Vec::with_capacity(dims.voxels());
    for &(t0, t1, ft) in &tt {
        for &(y0, y1, fy) in &ty {
            for &(x0, x1, fx) in &tx {
                let c00 = lerp(cell(t0, y0, x0), cell(t0, y0, x1), fx);
                let c01 = lerp(cell(t0, y1, x0), cell(t0, y1, x1), fx);
                let c10 = lerp(cell(t1, y0, x0), cell(t1, y0, x1), fx);
                let c11 = lerp(cell(t1, y1, x0), cell(t1, y1, x1), fx);
                let v = lerp(lerp(c00, c01, fy), lerp(c10, c11, fy), ft);
                data.push(v.clamp(0.0, 1.0));
            }
        }
    }
    SoftMask::new(dims, data)
}

/// Samples each cell kept with probability `p_keep` and upsamples.
pub fn low_res_soft_grid(dims: Dims, grid: GridShape, p_keep: f64, seed: u64) -> Result<SoftMask> {
    Dims::new(dims.t, dims.h, dims.w)?;
    if !(p_keep > 0.0 && p_keep < 1.0) {
        return param(format!("p_keep must be in (0, 1), got {p_keep}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cells: Vec<f32> = (0..grid.cells())
        .map(|_| {
            if rng.random::<f64>() < p_keep {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    upsample_cells(&cells, grid, dims)
}
