//! Paired visuotactile samples, augmentation, synthetic generation, on-disk
//! loaders and batching.

mod augment;
mod batch;
mod loader;
mod synth;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub use augment::{
    augment, augment_traced, eval_view, make_views, AugTrace, AugmentationConfig, ChannelStats,
    Normalization, PairAugmentation, ViewEntry,
};
pub use batch::Batcher;
pub use loader::{
    detect_layout, export_pair_dataset, load_grasp_dataset, load_pair_dataset, load_png, save_png, Layout,
};
pub use synth::{synth_generate, SynthSpec};

/// Planar `[C,H,W]` image with values nominally in `[0,1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if channels * height * width != data.len() || data.is_empty() {
            return Err(Error::conform("image", &[channels, height, width], &[data.len()]));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f32) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let hw = self.height * self.width;
        &self.data[c * hw..(c + 1) * hw]
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    /// Concatenates along the channel axis.
    pub fn stack_channels(&self, other: &Image) -> Result<Image> {
        if (self.height, self.width) != (other.height, other.width) {
            return Err(Error::conform(
                "stack_channels",
                &[self.channels, self.height, self.width],
                &[other.channels, other.height, other.width],
            ));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Image::new(self.channels + other.channels, self.height, self.width, data)
    }
}

/// Stacks equally sized images into an `[N,C,H,W]` tensor.
pub fn stack_images<F: Real>(images: &[&Image]) -> Result<Tensor<F>> {
    let first = images.first().ok_or_else(|| Error::Config("cannot stack zero images".into()))?;
    let mut data = Vec::with_capacity(images.len() * first.data.len());
    for img in images {
        if (img.channels, img.height, img.width) != (first.channels, first.height, first.width) {
            return Err(Error::conform(
                "stack_images",
                &[first.channels, first.height, first.width],
                &[img.channels, img.height, img.width],
            ));
        }
        data.extend(img.data.iter().map(|&v| F::of(v as f64)));
    }
    Tensor::from_vec(vec![images.len(), first.channels, first.height, first.width], data)
}

/// Downstream classification tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Category,
    HardSoft,
    RoughSmooth,
    Grasp,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Category => "category",
            Task::HardSoft => "hardsoft",
            Task::RoughSmooth => "roughsmooth",
            Task::Grasp => "grasp",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "category" => Ok(Task::Category),
            "hardsoft" => Ok(Task::HardSoft),
            "roughsmooth" => Ok(Task::RoughSmooth),
            "grasp" => Ok(Task::Grasp),
            other => Err(Error::Config(format!("unknown task '{other}'"))),
        }
    }
}

/// Per-task labels of one sample; absent values are `None`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TaskLabels {
    pub category: Option<usize>,
    pub hard_soft: Option<usize>,
    pub rough_smooth: Option<usize>,
    pub grasp: Option<usize>,
}

impl TaskLabels {
    pub fn get(&self, task: Task) -> Option<usize> {
        match task {
            Task::Category => self.category,
            Task::HardSoft => self.hard_soft,
            Task::RoughSmooth => self.rough_smooth,
            Task::Grasp => self.grasp,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// One visual/tactile observation pair of the same contact.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSample {
    pub stem: String,
    pub visual: Image,
    pub tactile: Image,
    pub labels: TaskLabels,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairedDataset {
    pub samples: Vec<PairedSample>,
    /// Entries dropped by a loader because a counterpart was missing.
    pub skipped: usize,
}

impl PairedDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn split(&self, split: Split) -> PairedDataset {
        PairedDataset {
            samples: self.samples.iter().filter(|s| s.split == split).cloned().collect(),
            skipped: 0,
        }
    }

    /// Number of classes of `task`: 2 for the binary tasks, else `max label + 1`.
    pub fn class_count(&self, task: Task) -> usize {
        match task {
            Task::HardSoft | Task::RoughSmooth | Task::Grasp => 2,
            Task::Category => self
                .samples
                .iter()
                .filter_map(|s| s.labels.category)
                .max()
                .map_or(0, |m| m + 1),
        }
    }

    pub fn tactile_channels(&self) -> Option<usize> {
        self.samples.first().map(|s| s.tactile.channels)
    }

    /// Assigns a seeded `train_fraction` train/test partition, ignoring any existing split.
    pub fn assign_random_split(&mut self, train_fraction: f64, seed: u64) {
        use rand::seq::SliceRandom;
        let mut order: Vec<usize> = (0..self.samples.len()).collect();
        order.shuffle(&mut crate::rng::rng_from(seed));
        let n_train = (self.samples.len() as f64 * train_fraction).floor() as usize;
        for (rank, &i) in order.iter().enumerate() {
            self.samples[i].split = if rank < n_train { Split::Train } else { Split::Test };
        }
    }
}

/// The four augmented batches of one training step, each `[N,C,S,S]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewBatch<F = f32> {
    pub visual_q: Tensor<F>,
    pub visual_k: Tensor<F>,
    pub tactile_q: Tensor<F>,
    pub tactile_k: Tensor<F>,
}

impl<F: Real> ViewBatch<F> {
    pub fn from_entries(entries: &[ViewEntry]) -> Result<Self> {
        let pick = |f: fn(&ViewEntry) -> &Image| -> Result<Tensor<F>> {
            stack_images(&entries.iter().map(f).collect::<Vec<_>>())
        };
        Ok(Self {
            visual_q: pick(|e| &e.visual_q)?,
            visual_k: pick(|e| &e.visual_k)?,
            tactile_q: pick(|e| &e.tactile_q)?,
            tactile_k: pick(|e| &e.tactile_k)?,
        })
    }

    /// Shared batch size; a mismatch is a conformability error.
    pub fn batch_size(&self) -> Result<usize> {
        let n = self.visual_q.shape()[0];
        for t in [&self.visual_k, &self.tactile_q, &self.tactile_k] {
            if t.shape()[0] != n {
                return Err(Error::conform("view batch", self.visual_q.shape(), t.shape()));
            }
        }
        Ok(n)
    }
}
