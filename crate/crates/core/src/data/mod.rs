//! Samples, datasets, ingestion, preprocessing, fold construction and the
//! synthetic face generator.

mod augment;
mod folds;
mod manifest;
pub mod synth;

use std::collections::BTreeSet;

pub use augment::{augment, standardize, AugmentConfig};
pub use folds::{assign_subject_folds, split_folds, subject_holdout, SplitProtocol};
pub use manifest::{load_manifest, write_manifest, MANIFEST_COLUMNS};
pub use synth::{synth_generate, write_synth, Factors};

use serde::{Deserialize, Serialize};

use crate::error::{usage_err, Result};
use crate::tensor::{Scalar, Tensor};

/// Side length of every input image.
pub const IMAGE_SIDE: usize = 96;

#[derive(Clone, Debug)]
pub struct Sample {
    /// `(1, 1, 96, 96)` grayscale in `[0, 1]`, not standardized.
    pub image: Tensor<f32>,
    pub label: usize,
    pub fau_set: BTreeSet<u32>,
    pub subject_id: String,
    pub sample_id: usize,
    /// Generative factors, present for synthetic samples only.
    pub factors: Option<Factors>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    Train,
    Valid,
    Test,
}

impl Role {
    pub fn parse(s: &str) -> Option<Role> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Some(Role::Train),
            "valid" | "val" | "validation" => Some(Role::Valid),
            "test" => Some(Role::Test),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Role::Train => "train",
            Role::Valid => "valid",
            Role::Test => "test",
        }
    }
}

/// Fold membership of one sample. `role` is set for manifest-provided
/// train/valid/test protocols and absent for rotating k-fold splits.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FoldTag {
    pub fold: usize,
    pub role: Option<Role>,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub classes: Vec<String>,
    /// Per-sample fold tags aligned with `samples`, once assigned.
    pub folds: Option<Vec<FoldTag>>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    /// Distinct action-unit ids present anywhere, ascending.
    pub fn fau_ids(&self) -> Vec<u32> {
        let all: BTreeSet<u32> = self.samples.iter().flat_map(|s| s.fau_set.iter().copied()).collect();
        all.into_iter().collect()
    }

    /// New dataset holding the samples at `indices` (in that order); fold
    /// tags travel with their samples.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            classes: self.classes.clone(),
            folds: self.folds.as_ref().map(|f| indices.iter().map(|&i| f[i]).collect()),
        }
    }

    /// Standardized images and labels of the samples at `indices`.
    pub fn prepare<S: Scalar>(&self, indices: &[usize]) -> Result<Prepared<S>> {
        let mut out = Prepared::default();
        for &i in indices {
            let s = self
                .samples
                .get(i)
                .ok_or_else(|| usage_err!("sample index {i} out of range"))?;
            out.images.push(standardize(&s.image.convert::<S>()));
            out.labels.push(s.label);
            out.sample_ids.push(s.sample_id);
        }
        Ok(out)
    }

    pub fn prepare_all<S: Scalar>(&self) -> Result<Prepared<S>> {
        self.prepare(&(0..self.len()).collect::<Vec<_>>())
    }
}

/// Model-ready view of a dataset slice: standardized `(1, 1, h, w)` images.
#[derive(Clone, Debug)]
pub struct Prepared<S> {
    pub images: Vec<Tensor<S>>,
    pub labels: Vec<usize>,
    pub sample_ids: Vec<usize>,
}

impl<S> Default for Prepared<S> {
    fn default() -> Self {
        Prepared { images: Vec::new(), labels: Vec::new(), sample_ids: Vec::new() }
    }
}

impl<S: Scalar> Prepared<S> {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Stacks the images at `positions` into one `(n, 1, h, w)` batch.
    pub fn batch(&self, positions: &[usize]) -> Result<Tensor<S>> {
        stack(positions.iter().map(|&p| &self.images[p]))
    }
}

/// Concatenates single-sample tensors along the batch axis.
pub fn stack<'a, S: Scalar>(items: impl IntoIterator<Item = &'a Tensor<S>>) -> Result<Tensor<S>> {
    let mut data = Vec::new();
    let mut shape: Option<[usize; 4]> = None;
    let mut n = 0;
    for t in items {
        match shape {
            None => shape = Some(t.shape()),
            Some(s) if s[1..] != t.shape()[1..] => {
                return Err(crate::error::shape_err!("cannot stack {:?} with {:?}", s, t.shape()))
            }
            _ => {}
        }
        n += t.shape()[0];
        data.extend_from_slice(t.data());
    }
    let [_, c, h, w] = shape.ok_or_else(|| usage_err!("cannot stack an empty batch"))?;
    Tensor::from_vec([n, c, h, w], data)
}
