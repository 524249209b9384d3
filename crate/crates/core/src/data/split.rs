use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Labeled, ShipClass};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
    pub stratified: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            seed: 0,
            stratified: true,
        }
    }
}

/// Partitions `samples` into `(train, test)`. Both halves keep the input
/// order. Stratified splits put `round(fraction · n_c)` of each class in
/// train, kept within `1..n_c`.
pub fn split<T: Labeled + Clone>(samples: &[T], spec: &SplitSpec) -> Result<(Vec<T>, Vec<T>)> {
    let f = spec.train_fraction;
    if !(f > 0.0 && f < 1.0) {
        return Err(Error::Split(format!("train_fraction {f} outside (0, 1)")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut in_train = vec![false; samples.len()];
    if spec.stratified {
        let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ShipClass::ALL.len()];
        for (i, s) in samples.iter().enumerate() {
            by_class[s.label()].push(i);
        }
        let short: Vec<String> = by_class
            .iter()
            .enumerate()
            .filter(|(_, idx)| idx.len() < 2)
            .map(|(l, idx)| format!("{} ({} samples)", ShipClass::ALL[l], idx.len()))
            .collect();
        if !short.is_empty() {
            return Err(Error::Split(format!(
                "stratified split needs at least 2 samples per class: {}",
                short.join(", ")
            )));
        }
        for idx in &mut by_class {
            idx.shuffle(&mut rng);
            let n_train = ((f * idx.len() as f64).round() as usize).clamp(1, idx.len() - 1);
            idx[..n_train].iter().for_each(|&i| in_train[i] = true);
        }
    } else {
        let mut idx: Vec<usize> = (0..samples.len()).collect();
        idx.shuffle(&mut rng);
        let n_train = (f * samples.len() as f64).round() as usize;
        idx[..n_train].iter().for_each(|&i| in_train[i] = true);
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (s, t) in samples.iter().zip(in_train) {
        if t {
            train.push(s.clone())
        } else {
            test.push(s.clone())
        }
    }
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::label_histogram;
    use proptest::prelude::*;

    #[derive(Debug, Clone, PartialEq)]
    struct Item(usize, usize);

    impl Labeled for Item {
        fn label(&self) -> usize {
            self.0
        }
    }

    fn items(per_class: &[usize]) -> Vec<Item> {
        let mut v = Vec::new();
        for (l, &n) in per_class.iter().enumerate() {
            for _ in 0..n {
                let id = v.len();
                v.push(Item(l, id));
            }
        }
        v
    }

    #[test]
    fn sixty_at_eighty_percent() {
        let s = items(&[10; 6]);
        let (train, test) = split(&s, &SplitSpec::default()).unwrap();
        assert_eq!((train.len(), test.len()), (48, 12));
        assert_eq!(label_histogram(&train), [8; 6]);
        assert_eq!(label_histogram(&test), [2; 6]);
    }

    #[test]
    fn half_of_two_per_class() {
        let spec = SplitSpec {
            train_fraction: 0.5,
            ..Default::default()
        };
        let (train, test) = split(&items(&[2; 6]), &spec).unwrap();
        assert_eq!(label_histogram(&train), [1; 6]);
        assert_eq!(label_histogram(&test), [1; 6]);
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let s = items(&[20; 6]);
        let spec = SplitSpec {
            seed: 4,
            ..Default::default()
        };
        assert_eq!(split(&s, &spec).unwrap(), split(&s, &spec).unwrap());
        let other = SplitSpec {
            seed: 5,
            ..Default::default()
        };
        assert_ne!(split(&s, &spec).unwrap().0, split(&s, &other).unwrap().0);
    }

    #[test]
    fn degenerate_class_fails_loudly() {
        let err = split(&items(&[3, 3, 3, 3, 3, 0]), &SplitSpec::default()).unwrap_err();
        assert!(matches!(err, Error::Split(ref m) if m.contains("Tug")));
        assert!(split(
            &items(&[3; 6]),
            &SplitSpec {
                train_fraction: 1.0,
                ..Default::default()
            }
        )
        .is_err());
    }

    proptest! {
        #[test]
        fn stratified_bounds_hold(
            counts in proptest::collection::vec(2usize..30, 6),
            fi in 0usize..3,
            seed in any::<u64>(),
        ) {
            let f = [0.5, 0.7, 0.8][fi];
            let s = items(&counts);
            let (train, test) = split(&s, &SplitSpec { train_fraction: f, seed, stratified: true }).unwrap();
            prop_assert_eq!(train.len() + test.len(), s.len());
            let mut ids: Vec<usize> = train.iter().chain(&test).map(|i| i.1).collect();
            ids.sort_unstable();
            prop_assert_eq!(ids, (0..s.len()).collect::<Vec<_>>());
            let (htr, hte) = (label_histogram(&train), label_histogram(&test));
            for c in 0..6 {
                prop_assert!(htr[c] >= 1 && hte[c] >= 1);
                prop_assert!((htr[c] as f64 - f * counts[c] as f64).abs() <= 1.0);
            }
        }
    }
}
