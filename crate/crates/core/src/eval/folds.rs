use std::collections::BTreeSet;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<u32>,
    pub test: Vec<u32>,
}

/// Train/test subject splits; test sets partition the subjects.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    pub folds: Vec<Fold>,
}

impl FoldPlan {
    pub fn len(&self) -> usize {
        self.folds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.folds.is_empty()
    }
}

fn unique_sorted(subjects: &[u32]) -> Vec<u32> {
    subjects.iter().copied().collect::<BTreeSet<_>>().into_iter().collect()
}

/// One fold per subject, holding that subject out.
pub fn loso_folds(subjects: &[u32]) -> Result<FoldPlan> {
    let ids = unique_sorted(subjects);
    if ids.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "leave-one-subject-out needs at least 2 subjects, got {}",
            ids.len()
        )));
    }
    let sizes = vec![1; ids.len()];
    grouped_folds(&ids, &sizes)
}

/// Leave-one-group-out over contiguous blocks of the sorted subject ids.
pub fn grouped_folds(subjects: &[u32], sizes: &[usize]) -> Result<FoldPlan> {
    let ids = unique_sorted(subjects);
    let total: usize = sizes.iter().sum();
    if total != ids.len() || sizes.contains(&0) {
        return Err(Error::InvalidArgument(format!(
            "group sizes {sizes:?} do not partition {} subjects",
            ids.len()
        )));
    }
    if sizes.len() < 2 {
        return Err(Error::InvalidArgument(
            "a single group leaves no training subjects".into(),
        ));
    }
    let mut folds = Vec::with_capacity(sizes.len());
    let mut start = 0;
    for &s in sizes {
        let test = ids[start..start + s].to_vec();
        let train = ids[..start].iter().chain(&ids[start + s..]).copied().collect();
        folds.push(Fold { train, test });
        start += s;
    }
    Ok(FoldPlan { folds })
}
