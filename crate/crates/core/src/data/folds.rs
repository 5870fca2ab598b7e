//! Seeded, stratified K-fold splits.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Per-image class instance counts used for stratification.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldItem {
    pub id: String,
    pub class_counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldSplit {
    pub folds: Vec<Vec<String>>,
}

/// Stratification bucket: dominant class (ties to the lower id, `None` for
/// negatives) and total instance count capped at 4.
fn bucket(counts: &[usize]) -> (Option<usize>, usize) {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return (None, 0);
    }
    let dom = (0..counts.len()).fold(0, |b, c| if counts[c] > counts[b] { c } else { b });
    (Some(dom), total.min(4))
}

/// Squared distance of one fold's class mix from the global mix.
fn imbalance(sums: &[f64], share: &[f64]) -> f64 {
    let total: f64 = sums.iter().sum();
    sums.iter().zip(share).map(|(c, p)| (c - p * total).powi(2)).sum()
}

/// Pairwise swaps between folds while they reduce the class-mix imbalance.
/// Sizes are untouched, so the round-robin size guarantee survives.
fn rebalance(folds: &mut [Vec<String>], items: &[FoldItem]) {
    let classes = items.iter().map(|i| i.class_counts.len()).max().unwrap_or(0);
    let counts: std::collections::HashMap<&str, Vec<f64>> = items
        .iter()
        .map(|i| {
            let mut v = vec![0.0; classes];
            for (c, n) in i.class_counts.iter().enumerate() {
                v[c] = *n as f64;
            }
            (i.id.as_str(), v)
        })
        .collect();
    let grand: f64 = counts.values().flatten().sum();
    if grand == 0.0 {
        return;
    }
    let share: Vec<f64> = (0..classes).map(|c| counts.values().map(|v| v[c]).sum::<f64>() / grand).collect();
    let mut sums: Vec<Vec<f64>> = folds
        .iter()
        .map(|f| (0..classes).map(|c| f.iter().map(|id| counts[id.as_str()][c]).sum()).collect())
        .collect();
    for _ in 0..64 {
        let mut improved = false;
        for a in 0..folds.len() {
            for b in a + 1..folds.len() {
                for i in 0..folds[a].len() {
                    for j in 0..folds[b].len() {
                        let (ca, cb) = (&counts[folds[a][i].as_str()], &counts[folds[b][j].as_str()]);
                        if ca == cb {
                            continue;
                        }
                        let ta: Vec<f64> = (0..classes).map(|c| sums[a][c] + cb[c] - ca[c]).collect();
                        let tb: Vec<f64> = (0..classes).map(|c| sums[b][c] + ca[c] - cb[c]).collect();
                        let before = imbalance(&sums[a], &share) + imbalance(&sums[b], &share);
                        if imbalance(&ta, &share) + imbalance(&tb, &share) < before - 1e-9 {
                            sums[a] = ta;
                            sums[b] = tb;
                            let tmp = std::mem::take(&mut folds[a][i]);
                            folds[a][i] = std::mem::replace(&mut folds[b][j], tmp);
                            improved = true;
                        }
                    }
                }
            }
        }
        if !improved {
            break;
        }
    }
}

/// Buckets the items, shuffles each bucket with `seed`, then deals the
/// concatenation round-robin so fold sizes differ by at most one, then
/// swaps images between folds to even out the class mix.
pub fn make_folds(items: &[FoldItem], k: usize, seed: u64) -> Result<FoldSplit> {
    if k < 2 {
        return Err(Error::Config(format!("fold count must be at least 2, got {k}")));
    }
    if k > items.len() {
        return Err(Error::Data(format!("{k} folds requested for {} images", items.len())));
    }
    let mut order: Vec<&FoldItem> = items.iter().collect();
    order.sort_by(|a, b| bucket(&a.class_counts).cmp(&bucket(&b.class_counts)).then(a.id.cmp(&b.id)));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut start = 0;
    while start < order.len() {
        let key = bucket(&order[start].class_counts);
        let end = start + order[start..].iter().take_while(|i| bucket(&i.class_counts) == key).count();
        order[start..end].shuffle(&mut rng);
        start = end;
    }
    let mut folds = vec![Vec::new(); k];
    // rotate the first fold so leftover slots do not always land in fold 0
    let offset = rand::Rng::gen_range(&mut rng, 0..k);
    for (i, item) in order.iter().enumerate() {
        folds[(i + offset) % k].push(item.id.clone());
    }
    rebalance(&mut folds, items);
    let split = FoldSplit { folds };
    split.check_partition(items.iter().map(|i| i.id.as_str()))?;
    Ok(split)
}

impl FoldSplit {
    pub fn k(&self) -> usize {
        self.folds.len()
    }

    /// Fails unless the folds are disjoint and cover `ids` exactly.
    pub fn check_partition<'a>(&self, ids: impl IntoIterator<Item = &'a str>) -> Result<()> {
        let mut seen = std::collections::BTreeMap::new();
        for (f, fold) in self.folds.iter().enumerate() {
            for id in fold {
                if let Some(prev) = seen.insert(id.as_str(), f) {
                    return Err(Error::Data(format!("image `{id}` is in folds {prev} and {f}")));
                }
            }
        }
        let mut expected: Vec<&str> = ids.into_iter().collect();
        expected.sort_unstable();
        expected.dedup();
        for id in &expected {
            if seen.remove(id).is_none() {
                return Err(Error::Data(format!("image `{id}` is in no fold")));
            }
        }
        if let Some(extra) = seen.keys().next() {
            return Err(Error::Data(format!("fold lists unknown image `{extra}`")));
        }
        Ok(())
    }

    /// Training ids for holding out `fold`.
    pub fn train_ids(&self, fold: usize) -> Vec<&str> {
        self.folds
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != fold)
            .flat_map(|(_, f)| f.iter().map(String::as_str))
            .collect()
    }

    /// Writes `fold_0.txt` … `fold_{k-1}.txt` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        for (i, fold) in self.folds.iter().enumerate() {
            let mut text = fold.join("\n");
            text.push('\n');
            super::write_atomic(&dir.join(format!("fold_{i}.txt")), text.as_bytes())?;
        }
        Ok(())
    }

    /// Reads consecutive `fold_k.txt` files and checks they partition `ids`.
    pub fn read<'a>(dir: &Path, ids: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let mut folds = Vec::new();
        loop {
            let p = dir.join(format!("fold_{}.txt", folds.len()));
            if !p.is_file() {
                break;
            }
            let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
            folds.push(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect());
        }
        if folds.is_empty() {
            return Err(Error::Data(format!("no fold_0.txt in {}", dir.display())));
        }
        let split = Self { folds };
        split.check_partition(ids)?;
        Ok(split)
    }

    /// Ratio of class-0 to class-1 instances in each fold, given per-image
    /// counts. `None` where the fold has no class-1 instances.
    pub fn class_ratios(&self, items: &[FoldItem]) -> Vec<Option<f64>> {
        let by_id: std::collections::HashMap<&str, &FoldItem> = items.iter().map(|i| (i.id.as_str(), i)).collect();
        self.folds
            .iter()
            .map(|fold| {
                let (mut a, mut b) = (0usize, 0usize);
                for id in fold {
                    if let Some(it) = by_id.get(id.as_str()) {
                        a += it.class_counts.first().copied().unwrap_or(0);
                        b += it.class_counts.get(1).copied().unwrap_or(0);
                    }
                }
                (b > 0).then(|| a as f64 / b as f64)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn items(n: usize) -> Vec<FoldItem> {
        (0..n)
            .map(|i| FoldItem {
                id: format!("img{i:03}"),
                class_counts: if i % 2 == 0 { vec![1, 0] } else { vec![0, 1] },
            })
            .collect()
    }

    #[test]
    fn ten_of_ten() {
        let it = items(100);
        let s = make_folds(&it, 10, 3).unwrap();
        assert!(s.folds.iter().all(|f| f.len() == 10));
        assert_eq!(s, make_folds(&it, 10, 3).unwrap());
        for r in s.class_ratios(&it) {
            assert!((r.unwrap() - 1.0).abs() <= 0.1);
        }
        assert!(make_folds(&items(5), 10, 0).is_err());
    }

    #[test]
    fn partition_check() {
        let s = FoldSplit {
            folds: vec![vec!["a".into()], vec!["a".into()]],
        };
        assert!(s.check_partition(["a"]).is_err());
        let s = FoldSplit {
            folds: vec![vec!["a".into()], vec![]],
        };
        assert!(s.check_partition(["a", "b"]).is_err());
    }
}
