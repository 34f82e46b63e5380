mod idx;
mod partition;
mod synthetic;

pub use idx::{
    load_idx_dataset, load_idx_images, load_idx_labels, read_file_maybe_gzip, write_idx_images,
    write_idx_labels,
};
pub use partition::{partition, ClientId, PartitionPlan, PartitionScheme};
pub use synthetic::synthetic_dataset;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One minibatch of training or evaluation samples.
#[derive(Debug, Clone)]
pub struct Batch {
    /// Shape [B, channels, height, width].
    pub inputs: Tensor,
    /// Class index per sample; length B.
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn new(inputs: Tensor, labels: Vec<usize>) -> Result<Self> {
        match inputs.shape() {
            [b, ..] if *b > 0 && inputs.shape().len() == 4 => {
                if labels.len() != *b {
                    return Err(Error::shape(format!(
                        "batch has {} inputs but {} labels",
                        b,
                        labels.len()
                    )));
                }
            }
            other => {
                return Err(Error::shape(format!(
                    "batch inputs must be rank-4 and non-empty, got {other:?}"
                )))
            }
        }
        Ok(Batch { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Labeled image collection with pixels normalized into [0,1].
#[derive(Debug, Clone)]
pub struct Dataset {
    images: Tensor,
    labels: Vec<usize>,
    classes: usize,
}

impl Dataset {
    pub fn new(images: Tensor, labels: Vec<usize>, classes: usize) -> Result<Self> {
        let n = match images.shape() {
            [n, c, h, w] if *n > 0 && *c > 0 && *h > 0 && *w > 0 => *n,
            other => {
                return Err(Error::shape(format!(
                    "dataset images must be a non-empty [N, C, H, W] tensor, got {other:?}"
                )))
            }
        };
        if labels.len() != n {
            return Err(Error::shape(format!(
                "dataset has {n} images but {} labels",
                labels.len()
            )));
        }
        if classes == 0 {
            return Err(Error::domain("dataset must have at least one class".to_string()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::domain(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        if let Some(&bad) = images
            .data()
            .iter()
            .find(|&&p| !(0.0..=1.0).contains(&p))
        {
            return Err(Error::domain(format!(
                "pixel value {bad} outside [0, 1]"
            )));
        }
        Ok(Dataset {
            images,
            labels,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    /// (channels, height, width) of each sample.
    pub fn sample_shape(&self) -> (usize, usize, usize) {
        let s = self.images.shape();
        (s[1], s[2], s[3])
    }

    /// Gathers the given sample indices into a batch, in the given order.
    pub fn batch(&self, indices: &[usize]) -> Result<Batch> {
        if indices.is_empty() {
            return Err(Error::domain("cannot build an empty batch".to_string()));
        }
        let (c, h, w) = self.sample_shape();
        let stride = c * h * w;
        let src = self.images.data();
        let mut data = Vec::with_capacity(indices.len() * stride);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::domain(format!(
                    "sample index {i} out of range for dataset of {}",
                    self.len()
                )));
            }
            data.extend_from_slice(&src[i * stride..(i + 1) * stride]);
            labels.push(self.labels[i]);
        }
        Batch::new(Tensor::new(vec![indices.len(), c, h, w], data)?, labels)
    }

    /// First n samples as a new dataset.
    pub fn take_prefix(&self, n: usize) -> Result<Dataset> {
        if n == 0 || n > self.len() {
            return Err(Error::domain(format!(
                "prefix of {n} samples out of range for dataset of {}",
                self.len()
            )));
        }
        let (c, h, w) = self.sample_shape();
        let stride = c * h * w;
        Dataset::new(
            Tensor::new(
                vec![n, c, h, w],
                self.images.data()[..n * stride].to_vec(),
            )?,
            self.labels[..n].to_vec(),
            self.classes,
        )
    }
}
