use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::manifest::{DatasetManifest, Label, Tool};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPair {
    pub train: Vec<String>,
    pub test: Vec<String>,
    pub seed: u64,
    pub ratio: f64,
}

fn stratum_seed(seed: u64, label: Label, tool: &Tool) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(label.as_str().as_bytes());
    h.update([0]);
    h.update(tool.as_str().as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

/// Stratified split by `(label, tool)`. Every stratum contributes
/// `round(ratio * n)` samples to train, clamped so both sides are non-empty.
/// Ids within each side are sorted.
pub fn split_train_test(manifest: &DatasetManifest, ratio: f64, seed: u64) -> Result<SplitPair> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidParam(format!(
            "split ratio {ratio} not in (0, 1)"
        )));
    }
    let mut strata: BTreeMap<(Label, Tool), Vec<&str>> = BTreeMap::new();
    for r in &manifest.records {
        strata.entry(r.stratum()).or_default().push(&r.id);
    }
    if strata.is_empty() {
        return Err(Error::Split("no records".into()));
    }

    let mut train = Vec::new();
    let mut test = Vec::new();
    for ((label, tool), mut ids) in strata {
        let n = ids.len();
        if n < 2 {
            return Err(Error::Split(format!(
                "stratum ({label}, {tool}) has {n} sample(s), need at least 2"
            )));
        }
        ids.sort_unstable();
        let mut rng = ChaCha8Rng::seed_from_u64(stratum_seed(seed, label, &tool));
        ids.shuffle(&mut rng);
        let n_train = ((ratio * n as f64).round() as usize).clamp(1, n - 1);
        train.extend(ids[..n_train].iter().map(|s| s.to_string()));
        test.extend(ids[n_train..].iter().map(|s| s.to_string()));
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(SplitPair {
        train,
        test,
        seed,
        ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{SampleRecord, SourceDb};
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn manifest(n_bf: usize, morphs: &[(&str, usize)]) -> DatasetManifest {
        let mut records = Vec::new();
        for i in 0..n_bf {
            records.push(SampleRecord {
                id: format!("bf{i:04}"),
                path: format!("bf{i}.png").into(),
                label: Label::Bonafide,
                tool: Tool::none(),
                source_db: SourceDb::Frll,
                landmarks: None,
            });
        }
        for (tool, n) in morphs {
            for i in 0..*n {
                records.push(SampleRecord {
                    id: format!("{tool}{i:04}"),
                    path: format!("{tool}{i}.png").into(),
                    label: Label::Morph,
                    tool: Tool::new(tool).unwrap(),
                    source_db: SourceDb::Frll,
                    landmarks: None,
                });
            }
        }
        DatasetManifest::new(records).unwrap()
    }

    #[test]
    fn seventy_thirty_per_stratum() {
        let m = manifest(100, &[("webmorph", 100)]);
        let s = split_train_test(&m, 0.7, 1).unwrap();
        assert_eq!(s.train.len(), 140);
        assert_eq!(s.test.len(), 60);
        let bf_train = s.train.iter().filter(|id| id.starts_with("bf")).count();
        assert_eq!(bf_train, 70);
    }

    #[test]
    fn deterministic() {
        let m = manifest(37, &[("opencv", 23), ("amsl", 11)]);
        let a = split_train_test(&m, 0.7, 9).unwrap();
        let b = split_train_test(&m, 0.7, 9).unwrap();
        assert_eq!(
            serde_json::to_vec(&a).unwrap(),
            serde_json::to_vec(&b).unwrap()
        );
        let c = split_train_test(&m, 0.7, 10).unwrap();
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn half_split_of_ten() {
        let m = manifest(10, &[]);
        let s = split_train_test(&m, 0.5, 3).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (5, 5));
    }

    #[test]
    fn singleton_stratum_cannot_split() {
        let m = manifest(10, &[("amsl", 1)]);
        assert!(matches!(split_train_test(&m, 0.7, 0), Err(Error::Split(_))));
    }

    #[test]
    fn ratio_bounds() {
        let m = manifest(10, &[]);
        assert!(split_train_test(&m, 0.0, 0).is_err());
        assert!(split_train_test(&m, 1.0, 0).is_err());
    }

    proptest! {
        #[test]
        fn disjoint_cover_and_ratio(
            n_bf in 2usize..60,
            n_a in 2usize..60,
            n_b in 2usize..60,
            ratio in 0.05f64..0.95,
            seed in any::<u64>(),
        ) {
            let m = manifest(n_bf, &[("amsl", n_a), ("webmorph", n_b)]);
            let s = split_train_test(&m, ratio, seed).unwrap();
            let train: HashSet<_> = s.train.iter().collect();
            let test: HashSet<_> = s.test.iter().collect();
            prop_assert!(train.is_disjoint(&test));
            prop_assert_eq!(train.len() + test.len(), m.len());
            for (prefix, n) in [("bf", n_bf), ("amsl", n_a), ("webmorph", n_b)] {
                let k = s.train.iter().filter(|id| id.starts_with(prefix)).count();
                prop_assert!((k as f64 - ratio * n as f64).abs() <= 1.0);
                prop_assert!(k >= 1 && k < n);
            }
        }
    }
}
