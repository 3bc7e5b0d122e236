use rand::seq::SliceRandom;

use crate::rng;

use super::{ModelError, Result};

/// A masked/visible partition of patch indices plus the permutation that
/// restores the shuffled concatenation `visible ++ masked` to original order.
///
/// Both index lists are kept sorted, so plans with the same visible set are
/// identical regardless of the shuffle that produced them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskPlan {
    pub masked: Vec<usize>,
    pub visible: Vec<usize>,
    /// `restore[i]` is the row of `visible ++ masked` holding original index `i`.
    pub restore: Vec<usize>,
}

impl MaskPlan {
    pub fn num_patches(&self) -> usize {
        self.masked.len() + self.visible.len()
    }
}

/// Draws a uniformly random mask plan over `p` patches with
/// `round(ratio · p)` masked indices. Deterministic for a fixed seed.
pub fn make_mask_plan(p: usize, ratio: f64, seed: u64) -> Result<MaskPlan> {
    if p < 2 {
        return Err(ModelError::Arg { op: "make_mask_plan", detail: format!("need at least 2 patches, got {p}") });
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(ModelError::Arg { op: "make_mask_plan", detail: format!("mask ratio {ratio} outside (0, 1)") });
    }
    let num_masked = (ratio * p as f64).round() as usize;
    if num_masked == 0 || num_masked >= p {
        return Err(ModelError::Arg {
            op: "make_mask_plan",
            detail: format!("degenerate mask count {num_masked} for {p} patches at ratio {ratio}"),
        });
    }

    let mut order: Vec<usize> = (0..p).collect();
    let mut rng = rng::seeded(seed);
    order.shuffle(&mut rng);
    let mut masked: Vec<usize> = order[..num_masked].to_vec();
    let mut visible: Vec<usize> = order[num_masked..].to_vec();
    masked.sort_unstable();
    visible.sort_unstable();

    let mut restore = vec![0usize; p];
    for (pos, &idx) in visible.iter().chain(masked.iter()).enumerate() {
        restore[idx] = pos;
    }
    Ok(MaskPlan { masked, visible, restore })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_match_rounded_ratio() {
        let plan = make_mask_plan(10, 0.8, 1).unwrap();
        assert_eq!(plan.masked.len(), 8);
        assert_eq!(plan.visible.len(), 2);
    }

    #[test]
    fn ties_round_up() {
        // 0.5 · 5 = 2.5 rounds to 3
        let plan = make_mask_plan(5, 0.5, 1).unwrap();
        assert_eq!(plan.masked.len(), 3);
    }

    #[test]
    fn same_seed_same_plan() {
        assert_eq!(make_mask_plan(16, 0.8, 42).unwrap(), make_mask_plan(16, 0.8, 42).unwrap());
    }

    #[test]
    fn partition_is_exact() {
        for seed in 0..50 {
            let plan = make_mask_plan(23, 0.7, seed).unwrap();
            let mut all: Vec<usize> = plan.masked.iter().chain(plan.visible.iter()).copied().collect();
            all.sort_unstable();
            assert_eq!(all, (0..23).collect::<Vec<_>>());
        }
    }

    #[test]
    fn restore_maps_shuffled_back_to_original() {
        for seed in 0..50 {
            let plan = make_mask_plan(17, 0.8, seed).unwrap();
            let shuffled: Vec<usize> = plan.visible.iter().chain(plan.masked.iter()).copied().collect();
            for i in 0..17 {
                assert_eq!(shuffled[plan.restore[i]], i);
            }
        }
    }

    #[test]
    fn degenerate_counts_are_errors() {
        assert!(make_mask_plan(1, 0.5, 0).is_err());
        assert!(make_mask_plan(2, 0.1, 0).is_err()); // rounds to 0 masked
        assert!(make_mask_plan(2, 0.9, 0).is_err()); // rounds to 2 masked
    }

    #[test]
    fn masking_frequency_is_uniform() {
        // Monte Carlo over seeds: P = 16, ratio 0.8 → 13 of 16 masked, so each
        // index should be masked with frequency 13/16 = 0.8125 ± sampling noise.
        let p = 16;
        let draws = 10_000;
        let mut counts = vec![0usize; p];
        for seed in 0..draws {
            let plan = make_mask_plan(p, 0.8, seed).unwrap();
            for &m in &plan.masked {
                counts[m] += 1;
            }
        }
        for &c in &counts {
            let freq = c as f64 / draws as f64;
            assert!((freq - 0.8).abs() < 0.02, "masking frequency {freq} drifted from 0.8");
        }
    }
}
