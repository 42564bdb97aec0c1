//! Masked hard instance mining: top-k attention masking with multi-head
//! voting fusion, randomized high-attention masking, random masking, mask
//! union/application, and the cosine mask-ratio decay schedule.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::models::AttentionScores;
use crate::tensor::Mat;

#[derive(Debug, Error)]
pub enum MaskError {
    #[error("mask ratio out of range: {0}")]
    RatioOutOfRange(f64),
    #[error("all instances masked")]
    AllMasked,
    #[error("mask length {0} does not match bag size {1}")]
    LengthMismatch(usize, usize),
}

pub type Result<T> = std::result::Result<T, MaskError>;

/// Per-instance mask flags; 1 = masked (excluded from the student input).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskFlags {
    pub flags: Vec<u8>,
}

impl MaskFlags {
    pub fn none(n: usize) -> Self {
        MaskFlags { flags: vec![0; n] }
    }

    pub fn from_indices(n: usize, indices: &[usize]) -> Self {
        let mut flags = vec![0u8; n];
        for &i in indices {
            flags[i] = 1;
        }
        MaskFlags { flags }
    }

    pub fn len(&self) -> usize {
        self.flags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flags.is_empty()
    }

    pub fn popcount(&self) -> usize {
        self.flags.iter().filter(|&&f| f == 1).count()
    }
}

/// Mask ratio configuration, percentages in [0, 100].
#[derive(Debug, Clone, PartialEq)]
pub struct MaskRatios {
    pub beta_h: f64,
    pub beta_l: f64,
    pub beta_r: f64,
    pub randomized_ham: bool,
    pub decay_high: bool,
}

impl Default for MaskRatios {
    fn default() -> Self {
        MaskRatios {
            beta_h: 10.0,
            beta_l: 0.0,
            beta_r: 0.0,
            randomized_ham: false,
            decay_high: true,
        }
    }
}

impl MaskRatios {
    /// Worst-case total mask count must leave at least one survivor for a bag
    /// of `min_bag_size` instances. Returns the name of the offending field
    /// group on failure.
    pub fn validate(&self, min_bag_size: usize) -> std::result::Result<(), String> {
        for (name, v) in [
            ("beta_h", self.beta_h),
            ("beta_l", self.beta_l),
            ("beta_r", self.beta_r),
        ] {
            if !(0.0..=100.0).contains(&v) {
                return Err(format!("{} = {} is outside [0, 100]", name, v));
            }
        }
        if self.randomized_ham && 2.0 * self.beta_h > 100.0 {
            return Err(format!(
                "beta_h = {} requires 2*beta_h <= 100 when randomized_ham is enabled",
                self.beta_h
            ));
        }
        let n = min_bag_size;
        let total =
            mask_count(self.beta_h, n) + mask_count(self.beta_l, n) + mask_count(self.beta_r, n);
        if total >= n {
            return Err(format!(
                "beta_h/beta_l/beta_r mask {} of {} instances in the smallest bag; \
                 at least one instance must survive",
                total, n
            ));
        }
        Ok(())
    }
}

/// A bag after masking: surviving rows in original relative order.
#[derive(Debug, Clone)]
pub struct MaskedBag {
    pub features: Mat,
    pub kept_indices: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Highest,
    Lowest,
}

/// k = ceil(ratio% of n), clamped to n.
pub fn mask_count(ratio: f64, n: usize) -> usize {
    let k = (ratio * n as f64 / 100.0).ceil() as usize;
    k.min(n)
}

fn check_ratio(ratio: f64) -> Result<()> {
    if !(0.0..=100.0).contains(&ratio) {
        return Err(MaskError::RatioOutOfRange(ratio));
    }
    Ok(())
}

/// Indices of one head's top-k, ties broken by smaller index first.
fn head_topk(row: &[f64], k: usize, direction: Direction) -> Vec<usize> {
    let mut order: Vec<usize> = (0..row.len()).collect();
    order.sort_by(|&a, &b| match direction {
        Direction::Highest => row[b]
            .partial_cmp(&row[a])
            .unwrap()
            .then_with(|| a.cmp(&b)),
        Direction::Lowest => row[a]
            .partial_cmp(&row[b])
            .unwrap()
            .then_with(|| a.cmp(&b)),
    });
    order.truncate(k);
    order
}

/// Select the k masked indices. Single head: plain top-k. Multi-head: each
/// head votes for its own top-k; the final set is the k instances with the
/// most votes, vote ties broken by summed attention across heads (larger for
/// Highest, smaller for Lowest), then by smaller index.
fn select_masked(attention: &Mat, k: usize, direction: Direction) -> Vec<usize> {
    let n = attention.cols;
    if attention.rows == 1 {
        return head_topk(attention.row(0), k, direction);
    }
    let mut votes = vec![0usize; n];
    for h in 0..attention.rows {
        for idx in head_topk(attention.row(h), k, direction) {
            votes[idx] += 1;
        }
    }
    let sums: Vec<f64> = (0..n)
        .map(|i| (0..attention.rows).map(|h| attention.get(h, i)).sum())
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        votes[b].cmp(&votes[a]).then_with(|| {
            let att = match direction {
                Direction::Highest => sums[b].partial_cmp(&sums[a]).unwrap(),
                Direction::Lowest => sums[a].partial_cmp(&sums[b]).unwrap(),
            };
            att.then_with(|| a.cmp(&b))
        })
    });
    order.truncate(k);
    order
}

/// Mask the top ratio% of instances by attention (per `direction`).
pub fn topk_mask(attention: &AttentionScores, ratio: f64, direction: Direction) -> Result<MaskFlags> {
    check_ratio(ratio)?;
    let n = attention.values.cols;
    let k = mask_count(ratio, n);
    Ok(MaskFlags::from_indices(
        n,
        &select_masked(&attention.values, k, direction),
    ))
}

/// Randomly High Attention Masking: take the top 2*ratio% by attention as
/// candidates, then mask a uniformly random half of them (ratio% of the bag).
pub fn randomized_ham(
    attention: &AttentionScores,
    ratio: f64,
    rng: &mut ChaCha8Rng,
) -> Result<MaskFlags> {
    check_ratio(ratio)?;
    if 2.0 * ratio > 100.0 {
        return Err(MaskError::RatioOutOfRange(ratio));
    }
    let n = attention.values.cols;
    let k = mask_count(ratio, n);
    let cand_k = mask_count(2.0 * ratio, n);
    let mut candidates = select_masked(&attention.values, cand_k, Direction::Highest);
    let chosen = sample_without_replacement(&mut candidates, k, rng);
    Ok(MaskFlags::from_indices(n, &chosen))
}

/// Mask exactly ceil(ratio% of n) indices uniformly at random.
pub fn random_mask(n: usize, ratio: f64, rng: &mut ChaCha8Rng) -> Result<MaskFlags> {
    check_ratio(ratio)?;
    let k = mask_count(ratio, n);
    let mut pool: Vec<usize> = (0..n).collect();
    let chosen = sample_without_replacement(&mut pool, k, rng);
    Ok(MaskFlags::from_indices(n, &chosen))
}

/// Partial Fisher-Yates: draw k items without replacement.
fn sample_without_replacement(pool: &mut [usize], k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let k = k.min(pool.len());
    for i in 0..k {
        let j = rng.gen_range(i..pool.len());
        pool.swap(i, j);
    }
    pool[..k].to_vec()
}

/// Union all masks (elementwise OR) and drop the masked rows, keeping the
/// survivors in their original relative order.
pub fn union_and_apply(features: &Mat, masks: &[&MaskFlags]) -> Result<MaskedBag> {
    let n = features.rows;
    let mut combined = vec![0u8; n];
    for m in masks {
        if m.len() != n {
            return Err(MaskError::LengthMismatch(m.len(), n));
        }
        for (c, &f) in combined.iter_mut().zip(&m.flags) {
            *c |= f;
        }
    }
    let kept_indices: Vec<usize> = (0..n).filter(|&i| combined[i] == 0).collect();
    if kept_indices.is_empty() {
        return Err(MaskError::AllMasked);
    }
    let mut data = Vec::with_capacity(kept_indices.len() * features.cols);
    for &i in &kept_indices {
        data.extend_from_slice(features.row(i));
    }
    Ok(MaskedBag {
        features: Mat::new(kept_indices.len(), features.cols, data),
        kept_indices,
    })
}

/// Cosine decay of the high-attention mask ratio over training progress.
pub fn decay_ratio(beta0: f64, epoch: usize, total_epochs: usize) -> f64 {
    assert!(total_epochs >= 1 && epoch <= total_epochs);
    beta0 * 0.5 * (1.0 + (std::f64::consts::PI * epoch as f64 / total_epochs as f64).cos())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{AttentionScores, LayerTag};
    use crate::rng;
    use rand::Rng;

    fn attn(rows: &[Vec<f64>]) -> AttentionScores {
        AttentionScores {
            values: Mat::from_rows(rows),
            layer_tag: LayerTag::Gated,
        }
    }

    /// Independent brute-force oracle for single-head top-k: full sort of
    /// (value, index) pairs with the stated tie rule, take k.
    fn brute_force_single_head(row: &[f64], ratio: f64, direction: Direction) -> Vec<u8> {
        let n = row.len();
        let k = (ratio * n as f64 / 100.0).ceil() as usize;
        let mut pairs: Vec<(f64, usize)> = row.iter().cloned().zip(0..n).collect();
        match direction {
            Direction::Highest => {
                pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)))
            }
            Direction::Lowest => {
                pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)))
            }
        }
        let mut flags = vec![0u8; n];
        for &(_, i) in pairs.iter().take(k.min(n)) {
            flags[i] = 1;
        }
        flags
    }

    #[test]
    fn topk_single_head_example() {
        let a = attn(&[vec![0.9, 0.1, 0.5, 0.3]]);
        let m = topk_mask(&a, 25.0, Direction::Highest).unwrap();
        assert_eq!(m.flags, vec![1, 0, 0, 0]);
    }

    #[test]
    fn topk_ratio_zero_masks_nothing() {
        let a = attn(&[vec![0.9, 0.1, 0.5, 0.3]]);
        let m = topk_mask(&a, 0.0, Direction::Highest).unwrap();
        assert_eq!(m.flags, vec![0, 0, 0, 0]);
    }

    #[test]
    fn topk_voting_example() {
        // Head top-2 sets {0,1} and {1,2}; votes [1,2,1,0]; idx 1 wins, then
        // the 0-vs-2 tie goes to the larger attention sum (1.0 vs 0.9).
        let a = attn(&[vec![0.9, 0.8, 0.1, 0.1], vec![0.1, 0.9, 0.8, 0.2]]);
        let m = topk_mask(&a, 50.0, Direction::Highest).unwrap();
        assert_eq!(m.flags, vec![1, 1, 0, 0]);
    }

    #[test]
    fn topk_ratio_out_of_range() {
        let a = attn(&[vec![0.5, 0.5]]);
        assert!(matches!(
            topk_mask(&a, 120.0, Direction::Highest),
            Err(MaskError::RatioOutOfRange(_))
        ));
        assert!(matches!(
            topk_mask(&a, -1.0, Direction::Highest),
            Err(MaskError::RatioOutOfRange(_))
        ));
    }

    #[test]
    fn topk_matches_brute_force_oracle_with_duplicates() {
        let mut r = rng::stream(21, &["mask-oracle"]);
        for trial in 0..1000 {
            let n = r.gen_range(1..40);
            // Quantized values force duplicates.
            let row: Vec<f64> = (0..n).map(|_| r.gen_range(0..6) as f64 / 10.0).collect();
            let ratio = r.gen_range(0..=100) as f64;
            let dir = if trial % 2 == 0 {
                Direction::Highest
            } else {
                Direction::Lowest
            };
            let m = topk_mask(&attn(&[row.clone()]), ratio, dir).unwrap();
            assert_eq!(m.flags, brute_force_single_head(&row, ratio, dir));
            assert_eq!(m.popcount(), mask_count(ratio, n));
        }
    }

    #[test]
    fn topk_scale_invariance() {
        let mut r = rng::stream(22, &["mask-scale"]);
        for _ in 0..100 {
            let n = r.gen_range(2..30);
            let row: Vec<f64> = (0..n).map(|_| r.gen_range(0.0..1.0)).collect();
            let scaled: Vec<f64> = row.iter().map(|v| v * 37.5).collect();
            let ratio = r.gen_range(0..=100) as f64;
            let a = topk_mask(&attn(&[row]), ratio, Direction::Highest).unwrap();
            let b = topk_mask(&attn(&[scaled]), ratio, Direction::Highest).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn randomized_ham_zero_ratio() {
        let a = attn(&[vec![0.4, 0.3, 0.2, 0.1]]);
        let mut r = rng::stream(1, &["rham"]);
        let m = randomized_ham(&a, 0.0, &mut r).unwrap();
        assert_eq!(m.popcount(), 0);
    }

    #[test]
    fn randomized_ham_subset_of_candidates() {
        // N=8, ratio 25 -> 4 candidates (top half by attention), 2 masked.
        let row = vec![0.8, 0.7, 0.6, 0.5, 0.1, 0.1, 0.1, 0.1];
        let a = attn(&[row]);
        for seed in 0..1000u64 {
            let mut r = rng::stream(seed, &["rham-prop"]);
            let m = randomized_ham(&a, 25.0, &mut r).unwrap();
            assert_eq!(m.popcount(), 2);
            for (i, &f) in m.flags.iter().enumerate() {
                if f == 1 {
                    assert!(i < 4, "masked index {} outside candidate set", i);
                }
            }
        }
    }

    #[test]
    fn randomized_ham_fixed_seed_determinism() {
        let a = attn(&[vec![0.8, 0.7, 0.6, 0.5, 0.1, 0.1, 0.1, 0.1]]);
        let mut r1 = rng::stream(42, &["rham-det"]);
        let mut r2 = rng::stream(42, &["rham-det"]);
        let m1 = randomized_ham(&a, 25.0, &mut r1).unwrap();
        let m2 = randomized_ham(&a, 25.0, &mut r2).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(m1.popcount(), 2);
        assert!(m1.flags[4..].iter().all(|&f| f == 0));
    }

    #[test]
    fn randomized_ham_rejects_ratio_over_half() {
        let a = attn(&[vec![0.5, 0.5]]);
        let mut r = rng::stream(1, &["rham-err"]);
        assert!(matches!(
            randomized_ham(&a, 60.0, &mut r),
            Err(MaskError::RatioOutOfRange(_))
        ));
    }

    #[test]
    fn random_mask_extremes_and_determinism() {
        let mut r = rng::stream(7, &["rm"]);
        assert_eq!(random_mask(5, 0.0, &mut r).unwrap().popcount(), 0);
        assert_eq!(random_mask(5, 100.0, &mut r).unwrap().popcount(), 5);
        let mut r1 = rng::stream(7, &["rm-det"]);
        let mut r2 = rng::stream(7, &["rm-det"]);
        let m1 = random_mask(10, 30.0, &mut r1).unwrap();
        let m2 = random_mask(10, 30.0, &mut r2).unwrap();
        assert_eq!(m1.popcount(), 3);
        assert_eq!(m1, m2);
    }

    #[test]
    fn union_disjoint() {
        let z = Mat::from_rows(&[
            vec![0.0, 0.0],
            vec![1.0, 1.0],
            vec![2.0, 2.0],
            vec![3.0, 3.0],
        ]);
        let a = MaskFlags {
            flags: vec![1, 0, 0, 0],
        };
        let b = MaskFlags {
            flags: vec![0, 0, 0, 1],
        };
        let mb = union_and_apply(&z, &[&a, &b]).unwrap();
        assert_eq!(mb.kept_indices, vec![1, 2]);
        assert_eq!(mb.features.data, vec![1.0, 1.0, 2.0, 2.0]);
    }

    #[test]
    fn union_identity_on_empty_mask() {
        let z = Mat::from_rows(&[vec![1.0], vec![2.0]]);
        let mb = union_and_apply(&z, &[&MaskFlags::none(2)]).unwrap();
        assert_eq!(mb.kept_indices, vec![0, 1]);
        assert_eq!(mb.features, z);
    }

    #[test]
    fn union_overlap() {
        let z = Mat::from_rows(&[vec![0.0], vec![1.0], vec![2.0], vec![3.0]]);
        let a = MaskFlags {
            flags: vec![1, 1, 0, 0],
        };
        let b = MaskFlags {
            flags: vec![0, 1, 1, 0],
        };
        let mb = union_and_apply(&z, &[&a, &b]).unwrap();
        assert_eq!(mb.kept_indices, vec![3]);
    }

    #[test]
    fn union_all_masked_error() {
        let z = Mat::from_rows(&[vec![0.0], vec![1.0]]);
        let m = MaskFlags { flags: vec![1, 1] };
        assert!(matches!(
            union_and_apply(&z, &[&m]),
            Err(MaskError::AllMasked)
        ));
    }

    #[test]
    fn decay_endpoints() {
        assert_eq!(decay_ratio(40.0, 0, 100), 40.0);
        assert!(decay_ratio(40.0, 100, 100).abs() < 1e-12);
        assert!((decay_ratio(40.0, 50, 100) - 20.0).abs() < 1e-12);
    }

    #[test]
    fn decay_is_monotone_nonincreasing() {
        let mut prev = f64::INFINITY;
        for e in 0..=200 {
            let v = decay_ratio(33.0, e, 200);
            assert!(v <= prev + 1e-15);
            prev = v;
        }
    }

    #[test]
    fn ratios_validation() {
        let mut r = MaskRatios {
            beta_h: 40.0,
            beta_l: 30.0,
            beta_r: 30.0,
            randomized_ham: false,
            decay_high: false,
        };
        assert!(r.validate(10).is_err());
        r.beta_r = 20.0;
        assert!(r.validate(10).is_ok());
        r.randomized_ham = true;
        assert!(r.validate(10).is_ok()); // 2*40 <= 100 still fine
        r.beta_h = 60.0;
        r.beta_l = 0.0;
        r.beta_r = 0.0;
        assert!(r.validate(10).is_err()); // 2*60 > 100
    }

    proptest::proptest! {
        #[test]
        fn popcount_is_always_ceil(
            vals in proptest::collection::vec(0.0f64..1.0, 1..50),
            ratio in 0.0f64..100.0,
        ) {
            let n = vals.len();
            let m = topk_mask(&attn(&[vals]), ratio, Direction::Highest).unwrap();
            proptest::prop_assert_eq!(m.popcount(), mask_count(ratio, n));
        }
    }
}
