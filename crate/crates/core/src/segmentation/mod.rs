//! Partitioning a video volume into regions, the feature space every removal
//! method perturbs.

mod slic;
mod soft_grid;

pub use slic::{slic_3d, SlicParams};
pub use soft_grid::{low_res_soft_grid, upsample_cells, GridShape};

use crate::error::{param, Result};
use crate::tensor::{Dims, VideoTensor};

/// Per-voxel region labels in `0..regions`, each label occurring at least once.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentationMap {
    dims: Dims,
    labels: Vec<u32>,
    regions: usize,
}

impl SegmentationMap {
    /// Validates the partition property: the label set is exactly `0..R`.
    pub fn from_labels(dims: Dims, labels: Vec<u32>) -> Result<Self> {
        Dims::new(dims.t, dims.h, dims.w)?;
        if labels.len() != dims.voxels() {
            return param(format!("{} labels for a {dims} volume", labels.len()));
        }
        let regions = labels.iter().copied().max().map_or(0, |m| m as usize + 1);
        let mut seen = vec![false; regions];
        for &l in &labels {
            seen[l as usize] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return param(format!("label {missing} has no voxels"));
        }
        Ok(Self {
            dims,
            labels,
            regions,
        })
    }

    /// Renumbers arbitrary labels to `0..R` in order of increasing old label.
    pub fn from_sparse_labels(dims: Dims, labels: &[u32]) -> Result<Self> {
        let max = labels.iter().copied().max().unwrap_or(0) as usize;
        let mut remap = vec![u32::MAX; max + 1];
        for &l in labels {
            remap[l as usize] = 0;
        }
        let mut next = 0u32;
        for r in remap.iter_mut() {
            if *r == 0 {
                *r = next;
                next += 1;
            }
        }
        Self::from_labels(dims, labels.iter().map(|&l| remap[l as usize]).collect())
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn regions(&self) -> usize {
        self.regions
    }

    #[inline]
    pub fn label(&self, t: usize, y: usize, x: usize) -> u32 {
        self.labels[self.dims.index(t, y, x)]
    }

    pub fn region_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.regions];
        for &l in &self.labels {
            sizes[l as usize] += 1;
        }
        sizes
    }

    /// Per-region inclusive bounding cuboid `(t0, t1, y0, y1, x0, x1)`.
    pub fn bounding_boxes(&self) -> Vec<[usize; 6]> {
        let mut b = vec![[usize::MAX, 0, usize::MAX, 0, usize::MAX, 0]; self.regions];
        for (i, &l) in self.labels.iter().enumerate() {
            let (t, y, x) = self.dims.coords(i);
            let e = &mut b[l as usize];
            e[0] = e[0].min(t);
            e[1] = e[1].max(t);
            e[2] = e[2].min(y);
            e[3] = e[3].max(y);
            e[4] = e[4].min(x);
            e[5] = e[5].max(x);
        }
        b
    }

    /// Voxels whose right or lower in-frame neighbour has another label.
    pub fn boundaries(&self) -> Vec<bool> {
        let d = self.dims;
        let mut out = vec![false; d.voxels()];
        for t in 0..d.t {
            for y in 0..d.h {
                for x in 0..d.w {
                    let l = self.label(t, y, x);
                    let right = x + 1 < d.w && self.label(t, y, x + 1) != l;
                    let down = y + 1 < d.h && self.label(t, y + 1, x) != l;
                    out[d.index(t, y, x)] = right || down;
                }
            }
        }
        out
    }
}

/// Axis-aligned grid of `nt * ny * nx` cuboids whose sizes differ by at most
/// one voxel along each axis.
pub fn grid_3d(dims: Dims, nt: usize, ny: usize, nx: usize) -> Result<SegmentationMap> {
    Dims::new(dims.t, dims.h, dims.w)?;
    if nt == 0 || ny == 0 || nx == 0 {
        return param("grid cell counts must be >= 1");
    }
    if nt > dims.t || ny > dims.h || nx > dims.w {
        return param(format!("grid {nt}x{ny}x{nx} exceeds volume {dims}"));
    }
    let mut labels = Vec::with_capacity(dims.voxels());
    for t in 0..dims.t {
        let ct = t * nt / dims.t;
        for y in 0..dims.h {
            let cy = y * ny / dims.h;
            for x in 0..dims.w {
                let cx = x * nx / dims.w;
                labels.push(((ct * ny + cy) * nx + cx) as u32);
            }
        }
    }
    SegmentationMap::from_labels(dims, labels)
}

/// Channel-wise mean colour of each region, `R` vectors of length `c`.
pub fn region_mean_color(v: &VideoTensor, s: &SegmentationMap) -> Result<Vec<Vec<f32>>> {
    if v.dims() != s.dims() {
        return param(format!(
            "video {} and segmentation {} differ",
            v.dims(),
            s.dims()
        ));
    }
    let c = v.channels();
    let mut sums = vec![0.0f64; s.regions() * c];
    let mut counts = vec![0usize; s.regions()];
    for (i, &l) in s.labels().iter().enumerate() {
        let l = l as usize;
        counts[l] += 1;
        for ch in 0..c {
            sums[l * c + ch] += v.data()[i * c + ch] as f64;
        }
    }
    Ok((0..s.regions())
        .map(|r| {
            (0..c)
                .map(|ch| (sums[r * c + ch] / counts[r] as f64) as f32)
                .collect()
        })
        .collect())
}

/// Labels `0..R` each form a single 6-connected component.
pub fn is_six_connected(s: &SegmentationMap) -> bool {
    let comps = slic::components(s.labels(), s.dims());
    comps.count == s.regions()
}
