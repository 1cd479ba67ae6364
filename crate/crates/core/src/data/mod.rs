//! Datasets, loaders, synthetic generators, augmentation and predefined folds.

mod augment;
mod folds;
mod load;
mod synth;

pub use augment::{flip_horizontal, pad_crop, Augment, PadCrop};
pub use folds::{make_folds, Fold, FoldProtocol};
pub use load::{load_csv, load_idx, scale_pixel, unscale_pixel, CsvOptions};
pub use synth::{synth_blobs, synth_spirals, synth_spirals_with_turns, DEFAULT_SPIRAL_TURNS};

use crate::{Error, Result, Rng, Tensor};

/// Labelled instances: `x` has shape `(n, feature shape...)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: Tensor,
    y: Vec<usize>,
    classes: usize,
}

impl Dataset {
    pub fn new(x: Tensor, y: Vec<usize>, classes: usize) -> Result<Self> {
        if x.ndim() < 2 {
            return Err(Error::Shape(format!(
                "dataset tensor needs a batch axis and features, got {:?}",
                x.shape()
            )));
        }
        if x.rows() != y.len() {
            return Err(Error::Consistency(format!(
                "{} instances but {} labels",
                x.rows(),
                y.len()
            )));
        }
        if y.is_empty() {
            return Err(Error::EmptySample("dataset has no instances".into()));
        }
        if let Some(&bad) = y.iter().find(|&&l| l >= classes) {
            return Err(Error::Index(format!("label {bad} with {classes} classes")));
        }
        Ok(Dataset { x, y, classes })
    }

    pub fn x(&self) -> &Tensor {
        &self.x
    }

    pub fn labels(&self) -> &[usize] {
        &self.y
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    /// Always false: construction rejects empty datasets.
    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn feature_shape(&self) -> &[usize] {
        &self.x.shape()[1..]
    }

    /// Instances and labels at `indices`, in that order.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::Index(format!("instance {bad} of {}", self.len())));
        }
        let y = indices.iter().map(|&i| self.y[i]).collect();
        Ok((self.x.select_rows(indices), y))
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let (x, y) = self.batch(indices)?;
        Dataset::new(x, y, self.classes)
    }

    /// Widens the class count, e.g. when a split is missing some labels.
    pub fn with_classes(mut self, classes: usize) -> Result<Self> {
        if classes < self.classes {
            return Err(Error::Config(format!(
                "cannot shrink class count from {} to {classes}",
                self.classes
            )));
        }
        self.classes = classes;
        Ok(self)
    }

    /// One seeded shuffle split into consecutive batches; the last may be short.
    pub fn minibatches(&self, batch_size: usize, rng: &mut Rng) -> Result<Vec<Vec<usize>>> {
        if batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        let order = rng.permutation(self.len());
        Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
    }
}
