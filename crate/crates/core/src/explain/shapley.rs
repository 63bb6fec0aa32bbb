//! Exact Shapley values by enumerating all `2^r` coalitions.

use super::{Method, RegionRelevance};
use crate::error::{param, Result};
use crate::perturbation::Coalition;

pub const MAX_EXACT_REGIONS: usize = 12;

/// Exact Shapley values of a game given as `values[mask]`, where bit `k` of
/// `mask` means region `k` is in the coalition.
pub fn shapley_from_table(values: &[f64], r: usize) -> Result<Vec<f64>> {
    if r == 0 || r > MAX_EXACT_REGIONS {
        return param(format!(
            "exact Shapley supports 1..={MAX_EXACT_REGIONS} regions, got {r}"
        ));
    }
    if values.len() != 1 << r {
        return param(format!(
            "need {} coalition values, got {}",
            1usize << r,
            values.len()
        ));
    }
    let mut fact = vec![1.0f64; r + 1];
    for i in 1..=r {
        fact[i] = fact[i - 1] * i as f64;
    }
    // weight[s] = s! (r - s - 1)! / r!
    let weight: Vec<f64> = (0..r)
        .map(|s| fact[s] * fact[r - s - 1] / fact[r])
        .collect();
    let mut phi = vec![0.0f64; r];
    for (k, p) in phi.iter_mut().enumerate() {
        let bit = 1usize << k;
        for mask in 0..(1usize << r) {
            if mask & bit != 0 {
                continue;
            }
            let s = mask.count_ones() as usize;
            *p += weight[s] * (values[mask | bit] - values[mask]);
        }
    }
    Ok(phi)
}

/// Evaluates `coalition_value` on every coalition and returns exact Shapley
/// values.
pub fn brute_force_shapley(
    coalition_value: impl FnMut(&Coalition) -> f64,
    r: usize,
) -> Result<RegionRelevance> {
    let mut v = coalition_value;
    if r == 0 || r > MAX_EXACT_REGIONS {
        return param(format!(
            "exact Shapley supports 1..={MAX_EXACT_REGIONS} regions, got {r}"
        ));
    }
    let table: Vec<f64> = (0..1usize << r)
        .map(|mask| {
            v(&Coalition::new(
                (0..r).map(|k| mask >> k & 1 == 1).collect(),
            ))
        })
        .collect();
    RegionRelevance::new(shapley_from_table(&table, r)?, Method::KernelShap, 0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn additive_game() {
        let w = [0.5, -0.25, 1.0, 0.125];
        let r =
            brute_force_shapley(|z| (0..4).filter(|&k| z.kept(k)).map(|k| w[k]).sum(), 4).unwrap();
        for k in 0..4 {
            assert!((r.values[k] - w[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn unanimity_game() {
        let r = brute_force_shapley(|z| if z.kept_count() == 5 { 1.0 } else { 0.0 }, 5).unwrap();
        assert!(r.values.iter().all(|v| (v - 0.2).abs() < 1e-12));
    }

    #[test]
    fn hand_computed_three_player_table() {
        // v(∅)=0 v(A)=1 v(B)=2 v(AB)=4 v(C)=0 v(AC)=1 v(BC)=3 v(ABC)=6,
        // masks in bit order (A=bit0, B=bit1, C=bit2).
        let table = [0.0, 1.0, 2.0, 4.0, 0.0, 1.0, 3.0, 6.0];
        // Marginal contributions averaged over the six orderings, e.g. for A:
        // (1 + 1 + 2 + 3 + 1 + 3) / 6 = 11/6.
        let orders = [
            [0, 1, 2],
            [0, 2, 1],
            [1, 0, 2],
            [1, 2, 0],
            [2, 0, 1],
            [2, 1, 0],
        ];
        let mut expect = [0.0f64; 3];
        for o in orders {
            let mut mask = 0usize;
            for &p in &o {
                expect[p] += table[mask | 1 << p] - table[mask];
                mask |= 1 << p;
            }
        }
        expect.iter_mut().for_each(|e| *e /= 6.0);
        assert!((expect[0] - 11.0 / 6.0).abs() < 1e-12);
        let phi = shapley_from_table(&table, 3).unwrap();
        for k in 0..3 {
            assert!((phi[k] - expect[k]).abs() < 1e-12);
        }
        assert!((phi.iter().sum::<f64>() - 6.0).abs() < 1e-12);
    }

    #[test]
    fn too_many_regions() {
        assert!(brute_force_shapley(|_| 0.0, 13).is_err());
        assert!(shapley_from_table(&[0.0; 4], 3).is_err());
    }
}
