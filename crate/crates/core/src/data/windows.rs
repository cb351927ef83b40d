use std::collections::BTreeMap;

use ndarray::{s, Array3};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::labels::StateLabel;
use super::recording::WormRecording;
use crate::error::{Error, Result};

pub const DEFAULT_WINDOW_LEN: usize = 8;
pub const DEFAULT_FOLDS: usize = 10;

/// A contiguous slice of a recording.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub worm_id: String,
    pub start_index: usize,
    /// `[N, W, 2]`: trace channel then derivative channel.
    pub features: Array3<f64>,
    pub labels: Vec<StateLabel>,
}

impl Window {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Most frequent label; ties go to the smallest label.
    pub fn majority_label(&self) -> StateLabel {
        let mut counts: BTreeMap<StateLabel, usize> = BTreeMap::new();
        for &l in &self.labels {
            *counts.entry(l).or_default() += 1;
        }
        let best = counts.values().copied().max().unwrap_or(0);
        counts
            .into_iter()
            .find(|&(_, c)| c == best)
            .map(|(l, _)| l)
            .unwrap_or(StateLabel::Unknown)
    }
}

/// Cuts a recording into `floor(T / W)` non-overlapping windows (the
/// remainder is dropped) and shuffles them deterministically by `seed`.
pub fn windowize(rec: &WormRecording, window_len: usize, seed: u64) -> Result<Vec<Window>> {
    if window_len < 2 {
        return Err(Error::config(format!("window length must be at least 2, got {window_len}")));
    }
    let t = rec.n_timesteps();
    if window_len > t {
        return Err(Error::config(format!(
            "window length {window_len} exceeds recording length {t} ({})",
            rec.worm_id
        )));
    }
    let n = rec.n_neurons();
    let mut windows: Vec<Window> = (0..t / window_len)
        .map(|k| {
            let start = k * window_len;
            let mut features = Array3::zeros((n, window_len, 2));
            features
                .slice_mut(s![.., .., 0])
                .assign(&rec.traces.slice(s![.., start..start + window_len]));
            features
                .slice_mut(s![.., .., 1])
                .assign(&rec.derivatives.slice(s![.., start..start + window_len]));
            Window {
                worm_id: rec.worm_id.clone(),
                start_index: start,
                features,
                labels: rec.labels[start..start + window_len].to_vec(),
            }
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    windows.shuffle(&mut rng);
    Ok(windows)
}

/// Fold index for each window of a list (aligned by position).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    pub fold_count: usize,
    pub assignment: Vec<usize>,
    pub seed: u64,
}

/// Train/validation/test window indices for one cross-validation cell.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FoldSplit {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

impl FoldAssignment {
    pub fn members(&self, fold: usize) -> Vec<usize> {
        self.assignment
            .iter()
            .enumerate()
            .filter(|&(_, &f)| f == fold)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.fold_count];
        for &f in &self.assignment {
            sizes[f] += 1;
        }
        sizes
    }

    /// Fold `test_fold` is held out for testing, the next fold (cyclically)
    /// for validation, and the rest train.
    pub fn split(&self, test_fold: usize) -> FoldSplit {
        let val_fold = (test_fold + 1) % self.fold_count;
        let mut split = FoldSplit::default();
        for (i, &f) in self.assignment.iter().enumerate() {
            if f == test_fold {
                split.test.push(i);
            } else if f == val_fold {
                split.validation.push(i);
            } else {
                split.train.push(i);
            }
        }
        split
    }

    /// Like [`split`](Self::split) but without a test fold: one validation
    /// fold and everything else trains.
    pub fn split_validation_only(&self, val_fold: usize) -> FoldSplit {
        let mut split = FoldSplit::default();
        for (i, &f) in self.assignment.iter().enumerate() {
            if f == val_fold {
                split.validation.push(i);
            } else {
                split.train.push(i);
            }
        }
        split
    }
}

/// Partitions windows into `k` near-equal folds, stratified by each
/// window's majority label so every fold carries the global label mix.
pub fn assign_folds(windows: &[Window], k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 {
        return Err(Error::config(format!("fold count must be at least 2, got {k}")));
    }
    if k > windows.len() {
        return Err(Error::config(format!(
            "fold count {k} exceeds window count {}",
            windows.len()
        )));
    }
    let mut strata: BTreeMap<StateLabel, Vec<usize>> = BTreeMap::new();
    for (i, w) in windows.iter().enumerate() {
        strata.entry(w.majority_label()).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![0; windows.len()];
    let mut next = 0;
    for members in strata.values_mut() {
        members.shuffle(&mut rng);
        for &i in members.iter() {
            assignment[i] = next % k;
            next += 1;
        }
    }
    Ok(FoldAssignment {
        fold_count: k,
        assignment,
        seed,
    })
}

/// All size-`r` subsets of `ids`, in lexicographic order of positions.
pub fn worm_permutations<T: Clone>(ids: &[T], r: usize) -> Result<Vec<Vec<T>>> {
    let n = ids.len();
    if r == 0 || r > n {
        return Err(Error::config(format!(
            "permutation size {r} out of range 1..={n}"
        )));
    }
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..r).collect();
    loop {
        out.push(idx.iter().map(|&i| ids[i].clone()).collect());
        let Some(pos) = (0..r).rev().find(|&p| idx[p] < n - r + p) else {
            break;
        };
        idx[pos] += 1;
        for q in pos + 1..r {
            idx[q] = idx[q - 1] + 1;
        }
    }
    Ok(out)
}

/// Binomial coefficient, for checking enumeration sizes.
pub fn n_choose_k(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}
