//! Per-epoch mini-batch schedules.

use crate::error::{Error, Result};
use crate::numerics::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchTag {
    Labeled,
    Unlabeled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleMode {
    /// Labeled batches only.
    L,
    /// Labeled and unlabeled batches, strictly alternating, labeled first.
    Ul,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpochPolicy {
    /// Each epoch draws as many unlabeled samples as there are labeled ones.
    Subsample,
    /// Each epoch visits the whole unlabeled pool; the labeled stream
    /// reshuffles and repeats to keep pace.
    Full,
}

/// One scheduled batch: sample indices into the labeled or unlabeled pool.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchPlan {
    pub tag: BatchTag,
    pub indices: Vec<usize>,
}

/// Splits `items` into `⌈n/size⌉` batches whose sizes differ by at most one,
/// so no batch is left with a single sample unless `n` is 1.
fn chunk(items: &[usize], size: usize) -> Vec<Vec<usize>> {
    let n = items.len();
    if n == 0 {
        return Vec::new();
    }
    let k = n.div_ceil(size);
    let (base, extra) = (n / k, n % k);
    let mut out = Vec::with_capacity(k);
    let mut start = 0;
    for b in 0..k {
        let len = base + usize::from(b < extra);
        out.push(items[start..start + len].to_vec());
        start += len;
    }
    out
}

fn shuffled(pool: &[usize], rng: &mut RngStream) -> Vec<usize> {
    let mut v = pool.to_vec();
    rng.shuffle(&mut v);
    v
}

/// Draws `count` indices by walking reshuffled passes over `pool`.
fn cycled(pool: &[usize], count: usize, rng: &mut RngStream) -> Vec<usize> {
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let pass = shuffled(pool, rng);
        let take = (count - out.len()).min(pass.len());
        out.extend_from_slice(&pass[..take]);
    }
    out
}

/// Builds one epoch of batches over the given index pools.
pub fn make_schedule(
    labeled: &[usize],
    unlabeled: &[usize],
    batch_size: usize,
    mode: ScheduleMode,
    policy: EpochPolicy,
    rng: &mut RngStream,
) -> Result<Vec<BatchPlan>> {
    if batch_size == 0 {
        return Err(Error::Parameter("batch size must be at least 1".into()));
    }
    if labeled.is_empty() {
        return Err(Error::Data("no labeled samples to schedule".into()));
    }
    let plan = |tag, indices| BatchPlan { tag, indices };
    let lab_batches = |rng: &mut RngStream| chunk(&shuffled(labeled, rng), batch_size);
    match mode {
        ScheduleMode::L => Ok(lab_batches(rng).into_iter().map(|b| plan(BatchTag::Labeled, b)).collect()),
        ScheduleMode::Ul => {
            if unlabeled.is_empty() {
                return Err(Error::Data("UL schedule needs a non-empty unlabeled pool".into()));
            }
            let (lab, unl) = match policy {
                EpochPolicy::Subsample => {
                    let lab = lab_batches(rng);
                    let unl = chunk(&cycled(unlabeled, labeled.len(), rng), batch_size);
                    (lab, unl)
                }
                EpochPolicy::Full => {
                    let unl = chunk(&shuffled(unlabeled, rng), batch_size);
                    let mut lab = lab_batches(rng);
                    while lab.len() < unl.len() {
                        lab.extend(lab_batches(rng));
                    }
                    let mut unl = unl;
                    while unl.len() < lab.len() {
                        unl.extend(chunk(&shuffled(unlabeled, rng), batch_size));
                    }
                    let pairs = lab.len().min(unl.len());
                    lab.truncate(pairs);
                    unl.truncate(pairs);
                    (lab, unl)
                }
            };
            Ok(lab
                .into_iter()
                .zip(unl)
                .flat_map(|(l, u)| [plan(BatchTag::Labeled, l), plan(BatchTag::Unlabeled, u)])
                .collect())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tags(s: &[BatchPlan]) -> Vec<BatchTag> {
        s.iter().map(|b| b.tag).collect()
    }

    fn alternates(s: &[BatchPlan]) -> bool {
        s.iter().enumerate().all(|(i, b)| b.tag == if i % 2 == 0 { BatchTag::Labeled } else { BatchTag::Unlabeled })
    }

    #[test]
    fn four_and_four_alternate() {
        let lab: Vec<usize> = (0..40).collect();
        let unl: Vec<usize> = (0..40).collect();
        let s = make_schedule(&lab, &unl, 10, ScheduleMode::Ul, EpochPolicy::Full, &mut RngStream::new(1)).unwrap();
        use BatchTag::*;
        assert_eq!(tags(&s), [Labeled, Unlabeled, Labeled, Unlabeled, Labeled, Unlabeled, Labeled, Unlabeled]);
    }

    #[test]
    fn labeled_mode_has_no_unlabeled_batches() {
        let lab: Vec<usize> = (0..25).collect();
        let s = make_schedule(&lab, &[], 8, ScheduleMode::L, EpochPolicy::Subsample, &mut RngStream::new(1)).unwrap();
        assert!(s.iter().all(|b| b.tag == BatchTag::Labeled));
        let mut seen: Vec<usize> = s.iter().flat_map(|b| b.indices.clone()).collect();
        seen.sort();
        assert_eq!(seen, lab);
        assert!(s.iter().all(|b| b.indices.len() >= 6));
    }

    #[test]
    fn ul_without_unlabeled_pool_fails() {
        assert!(make_schedule(&[0, 1], &[], 2, ScheduleMode::Ul, EpochPolicy::Subsample, &mut RngStream::new(1)).is_err());
    }

    #[test]
    fn full_policy_covers_the_unlabeled_pool() {
        let lab: Vec<usize> = (0..20).collect();
        let unl: Vec<usize> = (0..200).collect();
        let s = make_schedule(&lab, &unl, 10, ScheduleMode::Ul, EpochPolicy::Full, &mut RngStream::new(2)).unwrap();
        assert!(alternates(&s));
        let mut seen: Vec<usize> =
            s.iter().filter(|b| b.tag == BatchTag::Unlabeled).flat_map(|b| b.indices.clone()).collect();
        seen.sort();
        assert_eq!(seen, unl);
    }

    proptest! {
        #[test]
        fn subsample_policy_balances_counts(nl in 1usize..200, factor in 1usize..12, bs in 1usize..64, seed in 0u64..1000) {
            let lab: Vec<usize> = (0..nl).collect();
            let unl: Vec<usize> = (0..nl * factor).collect();
            let s = make_schedule(&lab, &unl, bs, ScheduleMode::Ul, EpochPolicy::Subsample, &mut RngStream::new(seed)).unwrap();
            let l = s.iter().filter(|b| b.tag == BatchTag::Labeled).count();
            let u = s.len() - l;
            prop_assert_eq!(l, u);
            prop_assert!(alternates(&s));
            let lab_samples: usize = s.iter().filter(|b| b.tag == BatchTag::Labeled).map(|b| b.indices.len()).sum();
            let unl_samples: usize = s.iter().filter(|b| b.tag == BatchTag::Unlabeled).map(|b| b.indices.len()).sum();
            prop_assert_eq!(lab_samples, unl_samples);
        }

        #[test]
        fn schedules_alternate_under_both_policies(nl in 1usize..100, nu in 1usize..400, bs in 1usize..32, seed in 0u64..1000) {
            let lab: Vec<usize> = (0..nl).collect();
            let unl: Vec<usize> = (0..nu).collect();
            for policy in [EpochPolicy::Subsample, EpochPolicy::Full] {
                let s = make_schedule(&lab, &unl, bs, ScheduleMode::Ul, policy, &mut RngStream::new(seed)).unwrap();
                prop_assert!(alternates(&s));
                prop_assert!(s.iter().all(|b| !b.indices.is_empty() && b.indices.len() <= bs));
            }
        }
    }
}
