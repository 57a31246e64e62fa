use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::substream;

/// Stratified, seeded train/validation split over item indices.
///
/// `strata[i]` is the group of item `i`. The validation total is
/// `round(val_fraction * n)`, shared among groups by largest remainder; every
/// group then gets at least one validation and one training item.
pub fn split_train_val<K: Ord + Clone + std::fmt::Debug>(
    strata: &[K],
    val_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if strata.is_empty() {
        return Err(Error::config("cannot split an empty dataset"));
    }
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::config(format!("val_fraction {val_fraction} outside (0, 1)")));
    }
    let mut groups: BTreeMap<K, Vec<usize>> = BTreeMap::new();
    for (i, k) in strata.iter().enumerate() {
        groups.entry(k.clone()).or_default().push(i);
    }
    if let Some((k, _)) = groups.iter().find(|(_, v)| v.len() < 2) {
        return Err(Error::config(format!(
            "group {k:?} has fewer than 2 items and cannot be stratified"
        )));
    }
    let n = strata.len() as f64;
    let total = (val_fraction * n).round() as usize;
    let quotas: Vec<f64> = groups
        .values()
        .map(|v| total as f64 * v.len() as f64 / n)
        .collect();
    let mut alloc: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..quotas.len()).collect();
    // Ties go to the earlier group so the result is independent of float noise.
    order.sort_by(|&a, &b| {
        let (ra, rb) = (quotas[a] - quotas[a].floor(), quotas[b] - quotas[b].floor());
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    let short = total.saturating_sub(alloc.iter().sum());
    for &g in order.iter().take(short) {
        alloc[g] += 1;
    }

    let mut rng = substream(seed, "split");
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (members, k) in groups.into_values().zip(alloc) {
        let mut m = members;
        m.shuffle(&mut rng);
        let k = k.clamp(1, m.len() - 1);
        val.extend_from_slice(&m[..k]);
        train.extend_from_slice(&m[k..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    Ok((train, val))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn thousand_clips() {
        let strata = vec!["fan"; 1000];
        let (t, v) = split_train_val(&strata, 0.1, 1).unwrap();
        assert_eq!((t.len(), v.len()), (900, 100));
    }

    #[test]
    fn six_types_ten_each() {
        let types = ["ToyCar", "ToyConveyor", "fan", "pump", "slider", "valve"];
        let strata: Vec<&str> = types.iter().flat_map(|t| [*t; 100]).collect();
        let (_, v) = split_train_val(&strata, 0.1, 9).unwrap();
        for t in types {
            assert_eq!(v.iter().filter(|&&i| strata[i] == t).count(), 10);
        }
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let strata: Vec<u8> = (0..200).map(|i| (i % 3) as u8).collect();
        let a = split_train_val(&strata, 0.2, 5).unwrap();
        assert_eq!(a, split_train_val(&strata, 0.2, 5).unwrap());
        assert_ne!(a, split_train_val(&strata, 0.2, 6).unwrap());
    }

    #[test]
    fn singleton_group_rejected() {
        assert!(split_train_val(&["a", "a", "b"], 0.5, 0).is_err());
        assert!(split_train_val::<u8>(&[], 0.5, 0).is_err());
    }

    proptest! {
        #[test]
        fn disjoint_exhaustive_every_group_in_val(
            sizes in prop::collection::vec(2usize..40, 1..6),
            frac in 0.05f64..0.5,
            seed in 0u64..100,
        ) {
            let strata: Vec<usize> = sizes.iter().enumerate().flat_map(|(g, &s)| vec![g; s]).collect();
            let (t, v) = split_train_val(&strata, frac, seed).unwrap();
            let mut all: Vec<usize> = t.iter().chain(&v).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..strata.len()).collect::<Vec<_>>());
            for g in 0..sizes.len() {
                prop_assert!(v.iter().any(|&i| strata[i] == g));
                prop_assert!(t.iter().any(|&i| strata[i] == g));
            }
        }
    }
}
