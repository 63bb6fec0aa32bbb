//! SLIC superpixels extended to spatio-temporal volumes.
//!
//! Clustering runs in `(colour, x, y, temporal_scale * t)`. Distance is
//! `sqrt(d_color^2 + (m / S)^2 * d_space^2)` with `S` the expected cluster
//! edge in scaled coordinates. Centers start on a regular lattice, so the
//! result is a deterministic function of the input.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::SegmentationMap;
use crate::error::{param, Result};
use crate::par;
use crate::tensor::{Dims, VideoTensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlicParams {
    pub n_segments: usize,
    pub compactness: f64,
    /// Weight of the frame axis relative to pixels. `None` uses
    /// `sqrt(h * w) / t`.
    pub temporal_scale: Option<f64>,
    pub max_iters: usize,
}

impl Default for SlicParams {
    fn default() -> Self {
        Self {
            n_segments: 200,
            compactness: 10.0,
            temporal_scale: None,
            max_iters: 10,
        }
    }
}

impl SlicParams {
    pub fn with_segments(n_segments: usize) -> Self {
        Self {
            n_segments,
            ..Self::default()
        }
    }

    pub fn resolved_temporal_scale(&self, dims: Dims) -> f64 {
        self.temporal_scale
            .unwrap_or(((dims.h * dims.w) as f64).sqrt() / dims.t as f64)
    }

    fn validate(&self, dims: Dims) -> Result<()> {
        if self.n_segments == 0 {
            return param("n_segments must be >= 1");
        }
        if self.n_segments > dims.voxels() {
            return param(format!(
                "n_segments {} exceeds voxel count {}",
                self.n_segments,
                dims.voxels()
            ));
        }
        if !(self.compactness > 0.0 && self.compactness.is_finite()) {
            return param("compactness must be > 0");
        }
        if let Some(ts) = self.temporal_scale {
            if !(ts > 0.0 && ts.is_finite()) {
                return param("temporal_scale must be > 0");
            }
        }
        if self.max_iters == 0 {
            return param("max_iters must be >= 1");
        }
        Ok(())
    }
}

fn srgb_to_linear(c: f64) -> f64 {
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn lab_f(t: f64) -> f64 {
    const D: f64 = 6.0 / 29.0;
    if t > D * D * D {
        t.cbrt()
    } else {
        t / (3.0 * D * D) + 4.0 / 29.0
    }
}

/// sRGB in `[0, 1]` to CIELAB (D65).
pub(crate) fn rgb_to_lab(r: f32, g: f32, b: f32) -> [f32; 3] {
    let (r, g, b) = (
        srgb_to_linear(r as f64),
        srgb_to_linear(g as f64),
        srgb_to_linear(b as f64),
    );
    let x = (0.4124564 * r + 0.3575761 * g + 0.1804375 * b) / 0.95047;
    let y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
    let z = (0.0193339 * r + 0.119192 * g + 0.9503041 * b) / 1.08883;
    let (fx, fy, fz) = (lab_f(x), lab_f(y), lab_f(z));
    [
        (116.0 * fy - 16.0) as f32,
        (500.0 * (fx - fy)) as f32,
        (200.0 * (fy - fz)) as f32,
    ]
}

fn voxel_features(v: &VideoTensor) -> Vec<[f32; 3]> {
    let c = v.channels();
    v.data()
        .chunks_exact(c)
        .map(|px| {
            if c == 3 {
                rgb_to_lab(px[0], px[1], px[2])
            } else {
                let l = rgb_to_lab(px[0], px[0], px[0])[0];
                [l, 0.0, 0.0]
            }
        })
        .collect()
}

/// Picks per-axis lattice counts whose cells are close to cubes of edge `s`
/// and whose product is close to `n`. Ties keep the earliest candidate in
/// `(t, y, x)` order, so time is split first.
fn lattice_counts(dims: Dims, extents: [f64; 3], n: usize, s: f64) -> [usize; 3] {
    let limits = [dims.t, dims.h, dims.w];
    let cap = |a: usize| {
        limits[a]
            .min((4.0 * extents[a] / s).ceil() as usize + 1)
            .max(1)
    };
    let cost = |c: [usize; 3]| {
        let shape: f64 = (0..3)
            .map(|a| ((extents[a] / c[a] as f64) / s).ln().powi(2))
            .sum();
        let prod = (c[0] * c[1] * c[2]) as f64;
        shape + 4.0 * (prod / n as f64).ln().powi(2)
    };
    // Descending scan with a tolerance: ties go to the earlier axis.
    let mut best = [1, 1, 1];
    let mut best_cost = f64::INFINITY;
    for nt in (1..=cap(0)).rev() {
        for ny in (1..=cap(1)).rev() {
            for nx in (1..=cap(2)).rev() {
                let c = cost([nt, ny, nx]);
                if c < best_cost - 1e-9 {
                    best_cost = c;
                    best = [nt, ny, nx];
                }
            }
        }
    }
    best
}

#[derive(Clone, Copy, Default)]
struct Center {
    color: [f64; 3],
    pos: [f64; 3],
}

#[derive(Clone, Default)]
struct Accum {
    color: [f64; 3],
    pos: [f64; 3],
    count: usize,
}

/// 3D SLIC. Fragments are merged into their largest adjacent region
/// afterwards, so every returned region is 6-connected.
pub fn slic_3d(v: &VideoTensor, p: &SlicParams) -> Result<SegmentationMap> {
    let dims = v.dims();
    p.validate(dims)?;
    let tau = p.resolved_temporal_scale(dims);
    let extents = [tau * dims.t as f64, dims.h as f64, dims.w as f64];
    let s = (extents.iter().product::<f64>() / p.n_segments as f64).cbrt();
    let counts = lattice_counts(dims, extents, p.n_segments, s);
    let [nt, ny, nx] = counts;
    let k = nt * ny * nx;
    let step = [
        extents[0] / nt as f64,
        extents[1] / ny as f64,
        extents[2] / nx as f64,
    ];
    let spatial_w = (p.compactness / s).powi(2);

    let features = voxel_features(v);
    let mut centers: Vec<Center> = Vec::with_capacity(k);
    for it in 0..nt {
        let t = (2 * it + 1) * dims.t / (2 * nt);
        for iy in 0..ny {
            let y = (2 * iy + 1) * dims.h / (2 * ny);
            for ix in 0..nx {
                let x = (2 * ix + 1) * dims.w / (2 * nx);
                let f = features[dims.index(t, y, x)];
                centers.push(Center {
                    color: [f[0] as f64, f[1] as f64, f[2] as f64],
                    pos: [tau * t as f64, y as f64, x as f64],
                });
            }
        }
    }

    // Each voxel compares against the 27 lattice neighbours of its home cell.
    let home = |t: usize, y: usize, x: usize| [t * nt / dims.t, y * ny / dims.h, x * nx / dims.w];
    let frame_len = dims.frame_len();
    let mut labels = vec![0u32; dims.voxels()];
    for _ in 0..p.max_iters {
        let snapshot = &centers;
        let feats = &features;
        let per_frame: Vec<Vec<u32>> = par::map_range(dims.t, |t| {
            let mut out = Vec::with_capacity(frame_len);
            let pt = tau * t as f64;
            for y in 0..dims.h {
                for x in 0..dims.w {
                    let f = feats[dims.index(t, y, x)];
                    let cell = home(t, y, x);
                    let mut best = (f64::INFINITY, u32::MAX);
                    let mut fallback = (f64::INFINITY, u32::MAX);
                    for ct in cell[0].saturating_sub(1)..=(cell[0] + 1).min(nt - 1) {
                        for cy in cell[1].saturating_sub(1)..=(cell[1] + 1).min(ny - 1) {
                            for cx in cell[2].saturating_sub(1)..=(cell[2] + 1).min(nx - 1) {
                                let id = (ct * ny + cy) * nx + cx;
                                let c = &snapshot[id];
                                let dp = [pt - c.pos[0], y as f64 - c.pos[1], x as f64 - c.pos[2]];
                                let ds2 = dp[0] * dp[0] + dp[1] * dp[1] + dp[2] * dp[2];
                                let dc2: f64 =
                                    (0..3).map(|i| (f[i] as f64 - c.color[i]).powi(2)).sum();
                                let d = dc2 + spatial_w * ds2;
                                let inside = (0..3).all(|a| dp[a].abs() <= step[a]);
                                if inside && d < best.0 {
                                    best = (d, id as u32);
                                }
                                if d < fallback.0 {
                                    fallback = (d, id as u32);
                                }
                            }
                        }
                    }
                    out.push(if best.1 != u32::MAX {
                        best.1
                    } else {
                        fallback.1
                    });
                }
            }
            out
        });
        let next: Vec<u32> = per_frame.concat();
        let changed = next != labels;
        labels = next;

        let lab = &labels;
        let partials: Vec<Vec<Accum>> = par::map_range(dims.t, |t| {
            let mut acc = vec![Accum::default(); k];
            for y in 0..dims.h {
                for x in 0..dims.w {
                    let i = dims.index(t, y, x);
                    let a = &mut acc[lab[i] as usize];
                    for (ac, &f) in a.color.iter_mut().zip(&feats[i]) {
                        *ac += f as f64;
                    }
                    a.pos[0] += tau * t as f64;
                    a.pos[1] += y as f64;
                    a.pos[2] += x as f64;
                    a.count += 1;
                }
            }
            acc
        });
        for (id, c) in centers.iter_mut().enumerate() {
            let mut tot = Accum::default();
            for part in &partials {
                let a = &part[id];
                for i in 0..3 {
                    tot.color[i] += a.color[i];
                    tot.pos[i] += a.pos[i];
                }
                tot.count += a.count;
            }
            if tot.count > 0 {
                let n = tot.count as f64;
                c.color = tot.color.map(|x| x / n);
                c.pos = tot.pos.map(|x| x / n);
            }
        }
        if !changed {
            break;
        }
    }

    let expected = dims.voxels() / k.max(1);
    let merged = enforce_connectivity(&labels, dims, (expected / 16).max(1));
    SegmentationMap::from_sparse_labels(dims, &merged)
}

pub(crate) struct Components {
    /// Component id per voxel.
    pub ids: Vec<u32>,
    pub count: usize,
    pub label: Vec<u32>,
    pub size: Vec<usize>,
}

fn neighbours(dims: Dims, i: usize, out: &mut Vec<usize>) {
    out.clear();
    let (t, y, x) = dims.coords(i);
    if t > 0 {
        out.push(i - dims.frame_len());
    }
    if t + 1 < dims.t {
        out.push(i + dims.frame_len());
    }
    if y > 0 {
        out.push(i - dims.w);
    }
    if y + 1 < dims.h {
        out.push(i + dims.w);
    }
    if x > 0 {
        out.push(i - 1);
    }
    if x + 1 < dims.w {
        out.push(i + 1);
    }
}

/// 6-connected components of equal-label voxels, numbered in scan order.
pub(crate) fn components(labels: &[u32], dims: Dims) -> Components {
    let mut ids = vec![u32::MAX; labels.len()];
    let mut label = Vec::new();
    let mut size = Vec::new();
    let mut stack = Vec::new();
    let mut nb = Vec::with_capacity(6);
    for start in 0..labels.len() {
        if ids[start] != u32::MAX {
            continue;
        }
        let id = label.len() as u32;
        let l = labels[start];
        ids[start] = id;
        stack.push(start);
        let mut n = 0usize;
        while let Some(i) = stack.pop() {
            n += 1;
            neighbours(dims, i, &mut nb);
            for &j in &nb {
                if ids[j] == u32::MAX && labels[j] == l {
                    ids[j] = id;
                    stack.push(j);
                }
            }
        }
        label.push(l);
        size.push(n);
    }
    Components {
        count: label.len(),
        ids,
        label,
        size,
    }
}

/// Keeps the largest component of each label (if at least `min_size`) and
/// attaches every other component to the largest adjacent kept region.
pub(crate) fn enforce_connectivity(labels: &[u32], dims: Dims, min_size: usize) -> Vec<u32> {
    let comps = components(labels, dims);
    let n_labels = comps
        .label
        .iter()
        .copied()
        .max()
        .map_or(0, |m| m as usize + 1);
    let mut main = vec![usize::MAX; n_labels];
    for c in 0..comps.count {
        let l = comps.label[c] as usize;
        if main[l] == usize::MAX || comps.size[c] > comps.size[main[l]] {
            main[l] = c;
        }
    }
    // `owner[c]` is the kept component that `c` resolves into.
    let mut owner = vec![usize::MAX; comps.count];
    for &m in main.iter().filter(|&&m| m != usize::MAX) {
        if comps.size[m] >= min_size {
            owner[m] = m;
        }
    }
    if owner.iter().all(|&o| o == usize::MAX) {
        let largest = (0..comps.count)
            .max_by(|&a, &b| comps.size[a].cmp(&comps.size[b]).then(b.cmp(&a)))
            .unwrap();
        owner[largest] = largest;
    }

    let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); comps.count];
    let mut nb = Vec::with_capacity(6);
    for i in 0..labels.len() {
        let a = comps.ids[i] as usize;
        neighbours(dims, i, &mut nb);
        for &j in &nb {
            let b = comps.ids[j] as usize;
            if a != b {
                adj[a].insert(b);
            }
        }
    }

    let mut pending: Vec<usize> = (0..comps.count)
        .filter(|&c| owner[c] == usize::MAX)
        .collect();
    // Small pieces first so they join the surrounding region rather than
    // each other.
    pending.sort_by_key(|&c| (comps.size[c], c));
    while !pending.is_empty() {
        let mut progressed = false;
        let mut rest = Vec::new();
        for &c in &pending {
            let target = adj[c]
                .iter()
                .filter(|&&n| owner[n] != usize::MAX)
                .map(|&n| owner[n])
                .max_by(|&a, &b| comps.size[a].cmp(&comps.size[b]).then(b.cmp(&a)));
            match target {
                Some(t) => {
                    owner[c] = t;
                    progressed = true;
                }
                None => rest.push(c),
            }
        }
        assert!(progressed, "volume graph is connected");
        pending = rest;
    }

    comps
        .ids
        .iter()
        .map(|&c| comps.label[owner[c as usize]])
        .collect()
}
