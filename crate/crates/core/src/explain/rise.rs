//! Mean prediction when included: `sum_i p_i * m_i(u) / sum_i m_i(u)`.

use super::{Method, RegionRelevance, SaliencyVolume};
use crate::error::{param, Result};
use crate::perturbation::{Coalition, SoftMask};
use crate::tensor::Dims;

/// Region-level RISE. Regions never kept get the mean prediction and are
/// listed in `flagged`.
pub fn explain_rise_regions(
    samples: &[Coalition],
    preds: &[f64],
    class_index: usize,
) -> Result<RegionRelevance> {
    if samples.is_empty() {
        return param("RISE needs at least one sample");
    }
    if samples.len() != preds.len() {
        return param(format!(
            "{} samples vs {} predictions",
            samples.len(),
            preds.len()
        ));
    }
    let r = samples[0].len();
    if samples.iter().any(|s| s.len() != r) {
        return param("coalitions must share a length");
    }
    let mut num = vec![0.0f64; r];
    let mut den = vec![0.0f64; r];
    for (s, &p) in samples.iter().zip(preds) {
        for k in 0..r {
            if s.kept(k) {
                num[k] += p;
                den[k] += 1.0;
            }
        }
    }
    let mean = preds.iter().sum::<f64>() / preds.len() as f64;
    let mut flagged = Vec::new();
    let values = (0..r)
        .map(|k| {
            if den[k] > 0.0 {
                num[k] / den[k]
            } else {
                flagged.push(k);
                mean
            }
        })
        .collect();
    let mut out = RegionRelevance::new(values, Method::Rise, class_index)?;
    if !flagged.is_empty() {
        log::warn!(
            "RISE: {} region(s) never kept; using mean prediction",
            flagged.len()
        );
    }
    out.flagged = flagged;
    Ok(out)
}

/// Streaming voxel-level RISE; samples are folded in call order so the
/// result does not depend on how masks were produced.
#[derive(Debug, Clone)]
pub struct RiseAccumulator {
    dims: Dims,
    num: Vec<f64>,
    den: Vec<f64>,
    pred_sum: f64,
    count: usize,
}

impl RiseAccumulator {
    pub fn new(dims: Dims) -> Self {
        Self {
            dims,
            num: vec![0.0; dims.voxels()],
            den: vec![0.0; dims.voxels()],
            pred_sum: 0.0,
            count: 0,
        }
    }

    pub fn add(&mut self, mask: &SoftMask, pred: f64) -> Result<()> {
        if mask.dims() != self.dims {
            return param("mask dims do not match the accumulator");
        }
        for ((n, d), &m) in self.num.iter_mut().zip(&mut self.den).zip(mask.data()) {
            let m = m as f64;
            *n += pred * m;
            *d += m;
        }
        self.pred_sum += pred;
        self.count += 1;
        Ok(())
    }

    pub fn finish(self) -> Result<SaliencyVolume> {
        if self.count == 0 {
            return param("RISE needs at least one sample");
        }
        let mean = self.pred_sum / self.count as f64;
        let mut uncovered = 0;
        let data = self
            .num
            .iter()
            .zip(&self.den)
            .map(|(&n, &d)| {
                if d > 0.0 {
                    (n / d) as f32
                } else {
                    uncovered += 1;
                    mean as f32
                }
            })
            .collect();
        let mut v = SaliencyVolume::new(self.dims, data)?;
        if uncovered > 0 {
            log::warn!("RISE: {uncovered} voxel(s) never unmasked; using mean prediction");
        }
        v.uncovered = uncovered;
        Ok(v)
    }
}

/// Voxel-level RISE over explicit soft masks.
pub fn explain_rise_masks(masks: &[SoftMask], preds: &[f64]) -> Result<SaliencyVolume> {
    if masks.is_empty() {
        return param("RISE needs at least one sample");
    }
    if masks.len() != preds.len() {
        return param(format!(
            "{} masks vs {} predictions",
            masks.len(),
            preds.len()
        ));
    }
    let mut acc = RiseAccumulator::new(masks[0].dims());
    for (m, &p) in masks.iter().zip(preds) {
        acc.add(m, p)?;
    }
    acc.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_predictions() {
        let zs = vec![
            Coalition::new(vec![true, false]),
            Coalition::new(vec![false, true]),
        ];
        let r = explain_rise_regions(&zs, &[0.4, 0.4], 0).unwrap();
        assert_eq!(r.values, vec![0.4, 0.4]);
    }

    #[test]
    fn single_full_mask() {
        let d = Dims::new(2, 3, 3).unwrap();
        let v = explain_rise_masks(&[SoftMask::filled(d, 1.0).unwrap()], &[0.7]).unwrap();
        assert!(v.data().iter().all(|&x| (x - 0.7).abs() < 1e-7));
    }

    #[test]
    fn never_kept_region_is_flagged() {
        let zs = vec![Coalition::new(vec![true, false]); 3];
        let r = explain_rise_regions(&zs, &[0.2, 0.4, 0.6], 0).unwrap();
        assert_eq!(r.flagged, vec![1]);
        assert!((r.values[1] - 0.4).abs() < 1e-12);
    }

    #[test]
    fn empty_sample_set_errors() {
        assert!(explain_rise_regions(&[], &[], 0).is_err());
        assert!(explain_rise_masks(&[], &[]).is_err());
    }
}
