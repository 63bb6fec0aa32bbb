//! Single-feature occlusion summaries: leave-one-out, keep-one, and sliding
//! cuboid windows.

use super::{Method, RegionRelevance, SaliencyVolume};
use crate::error::{param, Result};
use crate::perturbation::Window;
use crate::tensor::Dims;

/// `phi_k = p_full - loo_preds[k]`.
pub fn explain_loco(
    p_full: f64,
    loo_preds: &[f64],
    regions: usize,
    class_index: usize,
) -> Result<RegionRelevance> {
    if loo_preds.len() != regions {
        return param(format!(
            "{} predictions for {regions} regions",
            loo_preds.len()
        ));
    }
    RegionRelevance::new(
        loo_preds.iter().map(|p| p_full - p).collect(),
        Method::Loco,
        class_index,
    )
}

/// `phi_k = keep_one_preds[k] - baseline`, where the baseline is the
/// all-removed prediction if given and 0 otherwise.
pub fn explain_up(
    keep_one_preds: &[f64],
    baseline: Option<f64>,
    class_index: usize,
) -> Result<RegionRelevance> {
    if keep_one_preds.is_empty() {
        return param("no keep-one predictions");
    }
    let b = baseline.unwrap_or(0.0);
    RegionRelevance::new(
        keep_one_preds.iter().map(|p| p - b).collect(),
        Method::Up,
        class_index,
    )
}

/// Mean of `p_full - pred` over the windows covering each voxel. Uncovered
/// voxels are 0 and counted in `uncovered`.
pub fn explain_sos(
    windows: &[Window],
    preds: &[f64],
    p_full: f64,
    dims: Dims,
) -> Result<SaliencyVolume> {
    if windows.len() != preds.len() {
        return param(format!(
            "{} windows vs {} predictions",
            windows.len(),
            preds.len()
        ));
    }
    let mut sum = vec![0.0f64; dims.voxels()];
    let mut cover = vec![0u32; dims.voxels()];
    for (w, &p) in windows.iter().zip(preds) {
        let drop = p_full - p;
        for t in w.origin[0]..(w.origin[0] + w.size[0]).min(dims.t) {
            for y in w.origin[1]..(w.origin[1] + w.size[1]).min(dims.h) {
                let row = dims.index(t, y, 0);
                for x in w.origin[2]..(w.origin[2] + w.size[2]).min(dims.w) {
                    sum[row + x] += drop;
                    cover[row + x] += 1;
                }
            }
        }
    }
    let uncovered = cover.iter().filter(|&&c| c == 0).count();
    if uncovered > 0 {
        log::warn!("SOS: {uncovered} voxel(s) not covered by any window");
    }
    let data = sum
        .iter()
        .zip(&cover)
        .map(|(&s, &c)| if c == 0 { 0.0 } else { (s / c as f64) as f32 })
        .collect();
    let mut v = SaliencyVolume::new(dims, data)?;
    v.uncovered = uncovered;
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perturbation::occlusion_windows;

    #[test]
    fn loco_definition() {
        let r = explain_loco(0.9, &[0.9, 0.9, 0.3, 0.9], 4, 0).unwrap();
        let expect = [0.0, 0.0, 0.6, 0.0];
        for k in 0..4 {
            assert!((r.values[k] - expect[k]).abs() < 1e-12);
        }
        assert!(explain_loco(0.9, &[0.9], 2, 0).is_err());
    }

    #[test]
    fn up_is_identity_without_baseline() {
        let r = explain_up(&[0.1, 0.8, 0.1], None, 0).unwrap();
        assert_eq!(r.values, vec![0.1, 0.8, 0.1]);
        assert_eq!(r.argmax(), 1);
        let b = explain_up(&[0.1, 0.8], Some(0.1), 0).unwrap();
        assert!((b.values[1] - 0.7).abs() < 1e-12);
    }

    #[test]
    fn sos_single_window_drop() {
        let d = Dims::new(8, 8, 8).unwrap();
        let w = occlusion_windows(d, [4, 4, 4], [2, 2, 2]).unwrap();
        let mut preds = vec![0.8; w.len()];
        preds[3] = 0.3;
        let s = explain_sos(&w, &preds, 0.8, d).unwrap();
        for t in 0..8 {
            for y in 0..8 {
                for x in 0..8 {
                    let v = s.data()[d.index(t, y, x)];
                    let expect = if w[3].contains(t, y, x) { 0.5 } else { 0.0 };
                    assert!((v - expect).abs() < 1e-6);
                }
            }
        }
        assert_eq!(s.uncovered, 0);
    }

    #[test]
    fn sos_counts_uncovered() {
        let d = Dims::new(4, 4, 4).unwrap();
        let w = occlusion_windows(d, [2, 2, 2], [1, 1, 1]).unwrap();
        let s = explain_sos(&w, &[0.0], 1.0, d).unwrap();
        assert_eq!(s.uncovered, 64 - 8);
    }
}
