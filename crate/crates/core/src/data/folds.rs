use std::collections::{BTreeSet, HashMap};

use crate::data::{Dataset, FoldTag};
use crate::error::{usage_err, Result};
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq)]
pub enum SplitProtocol {
    /// Rotating k-fold split, whole subjects per fold.
    SubjectKFold { folds: usize },
    /// Folds and train/valid/test roles come from the manifest.
    ManifestFolds,
}

/// Assigns every subject to one of `k` folds and returns the per-sample fold.
///
/// Subjects (in first-appearance order) are shuffled with `rng`, then each is
/// placed in the fold with the fewest samples so far, ties to the lower fold.
pub fn assign_subject_folds(subject_ids: &[&str], k: usize, rng: &mut Rng) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(usage_err!("fold count must be positive"));
    }
    let mut order: Vec<&str> = Vec::new();
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for &s in subject_ids {
        let c = counts.entry(s).or_insert(0);
        if *c == 0 {
            order.push(s);
        }
        *c += 1;
    }
    if order.len() < k {
        return Err(usage_err!("{} subjects cannot fill {k} subject-independent folds", order.len()));
    }
    rng.shuffle(&mut order);
    let mut sizes = vec![0usize; k];
    let mut fold_of: HashMap<&str, usize> = HashMap::new();
    for s in order {
        let target = (0..k).min_by_key(|&f| (sizes[f], f)).expect("k > 0");
        sizes[target] += counts[s];
        fold_of.insert(s, target);
    }
    Ok(subject_ids.iter().map(|s| fold_of[s]).collect())
}

/// Attaches fold assignments to `dataset` according to `protocol`.
pub fn split_folds(mut dataset: Dataset, protocol: &SplitProtocol, rng: &mut Rng) -> Result<Dataset> {
    match protocol {
        SplitProtocol::SubjectKFold { folds } => {
            let ids: Vec<&str> = dataset.samples.iter().map(|s| s.subject_id.as_str()).collect();
            let assignment = assign_subject_folds(&ids, *folds, rng)?;
            dataset.folds = Some(assignment.into_iter().map(|fold| FoldTag { fold, role: None }).collect());
            check_subject_disjoint(&dataset)?;
            Ok(dataset)
        }
        SplitProtocol::ManifestFolds => {
            let tags = dataset
                .folds
                .as_ref()
                .ok_or_else(|| usage_err!("manifest has no fold/role columns"))?;
            if let Some(i) = tags.iter().position(|t| t.role.is_none()) {
                return Err(usage_err!("sample {i} has a fold but no role"));
            }
            Ok(dataset)
        }
    }
}

/// Errors if any subject appears in two folds.
pub fn check_subject_disjoint(dataset: &Dataset) -> Result<()> {
    let tags = dataset.folds.as_ref().ok_or_else(|| usage_err!("dataset has no fold assignment"))?;
    let mut seen: HashMap<&str, usize> = HashMap::new();
    for (s, t) in dataset.samples.iter().zip(tags) {
        if let Some(&f) = seen.get(s.subject_id.as_str()) {
            if f != t.fold {
                return Err(usage_err!("subject {} appears in folds {f} and {}", s.subject_id, t.fold));
            }
        } else {
            seen.insert(&s.subject_id, t.fold);
        }
    }
    Ok(())
}

/// Subject-independent holdout: one of `folds` greedy folds becomes the test
/// split (`folds = 5` gives 80/20). Returns `(train, test)` sample indices.
pub fn subject_holdout(dataset: &Dataset, folds: usize, rng: &mut Rng) -> Result<(Vec<usize>, Vec<usize>)> {
    let ids: Vec<&str> = dataset.samples.iter().map(|s| s.subject_id.as_str()).collect();
    let assignment = assign_subject_folds(&ids, folds, rng)?;
    let (test, train): (Vec<usize>, Vec<usize>) = (0..dataset.len()).partition(|&i| assignment[i] == 0);
    let train_subjects: BTreeSet<&str> = train.iter().map(|&i| ids[i]).collect();
    debug_assert!(test.iter().all(|&i| !train_subjects.contains(ids[i])));
    Ok((train, test))
}
