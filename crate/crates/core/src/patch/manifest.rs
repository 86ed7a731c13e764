use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Label, PatchError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Twin-graph file, relative to the manifest's directory.
    pub path: String,
    pub commit_id: String,
    #[serde(with = "label_serde")]
    pub label: Label,
}

mod label_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    use crate::patch::Label;

    pub fn serialize<S: Serializer>(l: &Label, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(l.as_str())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Label, D::Error> {
        let s = String::deserialize(d)?;
        Label::parse(&s).ok_or_else(|| serde::de::Error::custom(format!("unknown label {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    #[serde(default = "default_ratio")]
    pub split_ratio: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_ratio() -> f64 {
    0.8
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self, PatchError> {
        let text = std::fs::read_to_string(path).map_err(|source| PatchError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Vec<ManifestEntry>,
    pub test: Vec<ManifestEntry>,
    /// Achieved train fraction of entries.
    pub train_fraction: f64,
    /// Largest single commit's share of all entries; bounds the deviation
    /// of `train_fraction` from the requested ratio.
    pub max_commit_share: f64,
}

/// Commit-disjoint split. Commits are shuffled with the seed, then taken
/// largest first; each goes to train when that moves the train count closer
/// to `split_ratio × total`, otherwise to test. Neither side is left empty.
pub fn split_dataset(m: &DatasetManifest) -> Result<Split, PatchError> {
    if m.entries.is_empty() {
        return Err(PatchError::EmptyDataset);
    }
    if !(m.split_ratio > 0.0 && m.split_ratio < 1.0) {
        return Err(PatchError::BadSplitRatio(m.split_ratio));
    }
    let mut groups: BTreeMap<&str, Vec<&ManifestEntry>> = BTreeMap::new();
    for e in &m.entries {
        groups.entry(e.commit_id.as_str()).or_default().push(e);
    }
    if groups.len() < 2 {
        return Err(PatchError::SingleCommit);
    }
    let mut commits: Vec<(&str, Vec<&ManifestEntry>)> = groups.into_iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(m.seed);
    commits.shuffle(&mut rng);
    commits.sort_by_key(|c| std::cmp::Reverse(c.1.len()));

    let total = m.entries.len();
    let target = m.split_ratio * total as f64;
    let mut in_train = vec![false; commits.len()];
    let mut n_train = 0usize;
    for (i, (_, entries)) in commits.iter().enumerate() {
        let with = (n_train + entries.len()) as f64;
        if (with - target).abs() < (n_train as f64 - target).abs() {
            in_train[i] = true;
            n_train += entries.len();
        }
    }
    if n_train == total {
        // move the last (smallest) commit taken into train over to test
        let i = in_train.iter().rposition(|&t| t).expect("train non-empty");
        in_train[i] = false;
        n_train -= commits[i].1.len();
    }
    if n_train == 0 {
        let i = in_train.iter().position(|&t| !t).expect("test non-empty");
        in_train[i] = true;
        n_train += commits[i].1.len();
    }

    // Emit entries in manifest order for stable downstream processing.
    let train_commits: std::collections::BTreeSet<&str> = commits
        .iter()
        .zip(&in_train)
        .filter(|(_, &t)| t)
        .map(|((c, _), _)| *c)
        .collect();
    let (train, test): (Vec<ManifestEntry>, Vec<ManifestEntry>) = m
        .entries
        .iter()
        .cloned()
        .partition(|e| train_commits.contains(e.commit_id.as_str()));
    let max_group = commits.iter().map(|(_, e)| e.len()).max().unwrap_or(0);
    Ok(Split {
        train_fraction: n_train as f64 / total as f64,
        max_commit_share: max_group as f64 / total as f64,
        train,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest(sizes: &[usize], seed: u64) -> DatasetManifest {
        let mut entries = Vec::new();
        for (c, &n) in sizes.iter().enumerate() {
            for k in 0..n {
                entries.push(ManifestEntry {
                    path: format!("c{c}_{k}.json"),
                    commit_id: format!("c{c}"),
                    label: Label::Security,
                });
            }
        }
        DatasetManifest {
            entries,
            split_ratio: 0.8,
            seed,
        }
    }

    #[test]
    fn ten_single_commits() {
        let s = split_dataset(&manifest(&[1; 10], 3)).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (8, 2));
    }

    #[test]
    fn eight_and_two() {
        // Enumerating both assignments: only {8-entry -> train, 2-entry -> test}
        // reaches the 0.8 target exactly.
        for seed in 0..20 {
            let s = split_dataset(&manifest(&[2, 8], seed)).unwrap();
            assert_eq!(s.train.len(), 8);
            assert!(s.train.iter().all(|e| e.commit_id == "c1"));
            assert!(s.test.iter().all(|e| e.commit_id == "c0"));
        }
    }

    #[test]
    fn deterministic() {
        let m = manifest(&[3, 1, 4, 1, 5, 9, 2, 6], 11);
        assert_eq!(split_dataset(&m).unwrap(), split_dataset(&m).unwrap());
    }

    #[test]
    fn errors() {
        assert!(matches!(
            split_dataset(&manifest(&[], 0)),
            Err(PatchError::EmptyDataset)
        ));
        assert!(matches!(
            split_dataset(&manifest(&[5], 0)),
            Err(PatchError::SingleCommit)
        ));
        let mut m = manifest(&[1, 1], 0);
        m.split_ratio = 1.0;
        assert!(matches!(
            split_dataset(&m),
            Err(PatchError::BadSplitRatio(_))
        ));
    }

    #[test]
    fn two_equal_commits_still_split() {
        let s = split_dataset(&manifest(&[5, 5], 0)).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (5, 5));
    }

    #[test]
    fn manifest_json_round_trip() {
        let m = manifest(&[1, 2], 4);
        let back: DatasetManifest = serde_json::from_str(&m.to_json()).unwrap();
        assert_eq!(back, m);
        assert!(m.to_json().contains("\"label\": \"security\""));
    }
}
