use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Role};
use crate::error::{usage_err, Result};
use crate::model::ModelSpec;
use crate::rng::Rng;
use crate::tensor::Scalar;
use crate::train::fit::{evaluate, train, Control, EpochMetrics, TrainConfig};
use crate::train::init::{calibrate, init_params, InitConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CvProtocol {
    /// Rotate over subject-independent folds: train on all others, test on one.
    CkPlus10Fold,
    /// Per fold: train on its train split, pick the best epoch on its valid
    /// split, report on its test split.
    Tfd5Fold,
}

impl CvProtocol {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "ck_plus_10fold" => Some(CvProtocol::CkPlus10Fold),
            "tfd_5fold" => Some(CvProtocol::Tfd5Fold),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub accuracy: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub best_epoch: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub folds: Vec<FoldReport>,
    pub mean: f64,
    /// Sample standard deviation over folds (0 for a single fold).
    pub std: f64,
}

impl fmt::Display for CvReport {
    /// `95.1% ± 3.1%`
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.1}% ± {:.1}%", 100.0 * self.mean, 100.0 * self.std)
    }
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Clone, Debug)]
pub struct FoldSplit {
    pub fold: usize,
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
}

/// Sample indices of every fold's splits. Errors if a test sample id or (for
/// the rotating protocol) a test subject also occurs in training.
pub fn fold_splits(dataset: &Dataset, protocol: CvProtocol) -> Result<Vec<FoldSplit>> {
    let tags = dataset.folds.as_ref().ok_or_else(|| usage_err!("dataset has no fold assignments"))?;
    let n_folds = tags.iter().map(|t| t.fold + 1).max().unwrap_or(0);
    let mut splits = Vec::with_capacity(n_folds);
    for fold in 0..n_folds {
        let mut s = FoldSplit { fold, train: vec![], valid: vec![], test: vec![] };
        for (i, t) in tags.iter().enumerate() {
            match protocol {
                CvProtocol::CkPlus10Fold => {
                    if t.fold == fold {
                        s.test.push(i)
                    } else {
                        s.train.push(i)
                    }
                }
                CvProtocol::Tfd5Fold if t.fold == fold => match t.role {
                    Some(Role::Train) => s.train.push(i),
                    Some(Role::Valid) => s.valid.push(i),
                    Some(Role::Test) => s.test.push(i),
                    None => return Err(usage_err!("sample {i} has no train/valid/test role")),
                },
                CvProtocol::Tfd5Fold => {}
            }
        }
        if s.train.is_empty() || s.test.is_empty() {
            return Err(usage_err!("fold {fold} has an empty train or test split"));
        }
        let ids = |idx: &[usize]| -> BTreeSet<usize> { idx.iter().map(|&i| dataset.samples[i].sample_id).collect() };
        let train_ids = ids(&s.train);
        if ids(&s.test).iter().chain(ids(&s.valid).iter()).any(|id| train_ids.contains(id)) {
            return Err(usage_err!("fold {fold}: a held-out sample id also appears in training"));
        }
        if protocol == CvProtocol::CkPlus10Fold {
            let subjects: BTreeSet<&str> = s.train.iter().map(|&i| dataset.samples[i].subject_id.as_str()).collect();
            if let Some(&i) = s.test.iter().find(|&&i| subjects.contains(dataset.samples[i].subject_id.as_str())) {
                return Err(usage_err!("fold {fold}: subject {} is in both train and test", dataset.samples[i].subject_id));
            }
        }
        splits.push(s);
    }
    Ok(splits)
}

#[derive(Clone, Debug)]
pub struct CvConfig {
    pub spec: ModelSpec,
    pub init: InitConfig,
    pub train: TrainConfig,
}

/// Runs the protocol; fold `f` initializes and trains from `rng.child(f)`.
/// `on_epoch` receives `(fold, metrics)`.
pub fn cross_validate<S: Scalar>(
    dataset: &Dataset,
    protocol: CvProtocol,
    cfg: &CvConfig,
    rng: &Rng,
    on_epoch: &mut dyn FnMut(usize, &EpochMetrics),
) -> Result<CvReport> {
    if cfg.spec.n_classes() != dataset.n_classes() {
        return Err(usage_err!(
            "model has {} outputs but the dataset has {} classes",
            cfg.spec.n_classes(),
            dataset.n_classes()
        ));
    }
    let mut folds = Vec::new();
    for split in fold_splits(dataset, protocol)? {
        let mut frng = rng.child(split.fold as u64);
        let (mut params, _) = init_params::<S>(&cfg.spec, &cfg.init, &mut frng)?;
        let train_set = dataset.prepare::<S>(&split.train)?;
        calibrate(&mut params, &train_set, &cfg.init)?;
        let valid_set = if split.valid.is_empty() { None } else { Some(dataset.prepare::<S>(&split.valid)?) };
        let test_set = dataset.prepare::<S>(&split.test)?;
        let outcome = train(params, &train_set, valid_set.as_ref(), &cfg.train, &mut frng, &mut |m, _| {
            on_epoch(split.fold, m);
            Control::Continue
        })?;
        let eval = evaluate(&outcome.params, &test_set)?;
        folds.push(FoldReport {
            fold: split.fold,
            accuracy: eval.accuracy,
            n_train: split.train.len(),
            n_test: split.test.len(),
            best_epoch: outcome.best_epoch,
        });
    }
    let accs: Vec<f64> = folds.iter().map(|f| f.accuracy).collect();
    let (mean, std) = mean_std(&accs);
    Ok(CvReport { folds, mean, std })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aggregation() {
        assert_eq!(mean_std(&[1.0; 10]), (1.0, 0.0));
        let (m, s) = mean_std(&[0.9, 1.0]);
        assert!((m - 0.95).abs() < 1e-12);
        assert!((s - 0.0707).abs() < 1e-4);
        assert!((s - 0.005f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn table_format() {
        let r = CvReport { folds: vec![], mean: 0.951, std: 0.031 };
        assert_eq!(r.to_string(), "95.1% ± 3.1%");
    }

    #[test]
    fn missing_folds_is_usage_error() {
        let ds = Dataset { samples: vec![], classes: vec!["a".into(), "b".into()], folds: None };
        assert!(matches!(fold_splits(&ds, CvProtocol::CkPlus10Fold), Err(crate::Error::Usage(_))));
    }
}
