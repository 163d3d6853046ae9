use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitMode {
    /// Train on one sample group of every class, test on the rest.
    GroupHoldout,
    /// Membership read from list files.
    FixedLists,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitPlan {
    pub mode: SplitMode,
    pub index: usize,
    /// Item indices into the dataset, ascending.
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitPlan {
    /// Disjointness always; full coverage for group-holdout plans.
    pub fn validate(&self, dataset: &Dataset) -> Result<()> {
        let n = dataset.len();
        let mut seen = vec![false; n];
        for &i in self.train.iter().chain(&self.test) {
            if i >= n {
                return Err(Error::Protocol(format!("item {i} outside dataset of {n}")));
            }
            if seen[i] {
                return Err(Error::Protocol(format!(
                    "item {i} listed twice in split {}",
                    self.index
                )));
            }
            seen[i] = true;
        }
        if self.mode == SplitMode::GroupHoldout && seen.iter().any(|s| !s) {
            return Err(Error::Protocol(format!(
                "split {} leaves items unassigned",
                self.index
            )));
        }
        Ok(())
    }
}

/// Trains on group `group` of every class and tests on all other items.
pub fn holdout_split(dataset: &Dataset, group: usize) -> Result<SplitPlan> {
    let (train, test): (Vec<usize>, Vec<usize>) =
        (0..dataset.len()).partition(|&i| dataset.items[i].group == group);
    if train.is_empty() || test.is_empty() {
        return Err(Error::Protocol(format!(
            "holding out group {group} leaves an empty train or test set"
        )));
    }
    Ok(SplitPlan {
        mode: SplitMode::GroupHoldout,
        index: group,
        train,
        test,
    })
}

/// One plan per sample group: plan `i` trains on group `i` of every class.
/// Every class must have the same number of groups, and at least two.
pub fn kth_style_splits(dataset: &Dataset) -> Result<Vec<SplitPlan>> {
    let counts = dataset.groups_per_class();
    let g = *counts
        .first()
        .ok_or_else(|| Error::Protocol("dataset has no classes".into()))?;
    if let Some((class, &c)) = counts.iter().enumerate().find(|&(_, &c)| c != g) {
        return Err(Error::Protocol(format!(
            "class {} has {c} sample groups, class {} has {g}",
            dataset.classes[class], dataset.classes[0]
        )));
    }
    if g < 2 {
        return Err(Error::Protocol(
            "group holdout needs at least two sample groups per class".into(),
        ));
    }
    (0..g).map(|i| holdout_split(dataset, i)).collect()
}

fn read_list(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| l.replace('\\', "/"))
        .collect())
}

/// Split from newline-delimited lists of dataset-relative paths.
pub fn fixed_list_split(
    dataset: &Dataset,
    train_list: impl AsRef<Path>,
    test_list: impl AsRef<Path>,
    index: usize,
) -> Result<SplitPlan> {
    let lookup: HashMap<&str, usize> = dataset
        .items
        .iter()
        .enumerate()
        .filter_map(|(i, it)| it.path.as_deref().map(|p| (p, i)))
        .collect();
    let resolve = |list: &Path| -> Result<Vec<usize>> {
        let mut ids = read_list(list)?
            .iter()
            .map(|p| {
                lookup.get(p.as_str()).copied().ok_or_else(|| {
                    Error::Protocol(format!("{} names unknown image {p}", list.display()))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        ids.sort_unstable();
        Ok(ids)
    };
    let plan = SplitPlan {
        mode: SplitMode::FixedLists,
        index,
        train: resolve(train_list.as_ref())?,
        test: resolve(test_list.as_ref())?,
    };
    plan.validate(dataset)?;
    Ok(plan)
}
