//! Synthetic multi-subject sensor windows, the dataset container and file
//! format, the labeled/unlabeled/test split protocol and standardization.

mod generate;
mod io;
mod split;
mod standardize;

pub use generate::{
    class_templates, generate_subject, ClassTemplate, SubjectSpec, TaskSpec, MAX_CONDITION,
};
pub use io::{
    decode_dataset, encode_dataset, load_dataset, save_dataset, DATASET_MAGIC, DATASET_VERSION,
};
pub use split::{make_ssl_split, SplitMode, SplitSpec, SslSplit, SubjectPool};
pub use standardize::{Standardizer, MIN_STD};

use crate::error::{Error, Result};
use crate::model::Domain;
use crate::tensor::Tensor;

/// One `C×T` window. `s` is the pool it came from; labeled-pool windows
/// always carry a label.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorWindow {
    pub subject_id: i32,
    pub s: Domain,
    pub x: Tensor,
    pub label: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    channels: usize,
    window_len: usize,
    n_classes: usize,
    windows: Vec<SensorWindow>,
}

impl Dataset {
    pub fn new(
        channels: usize,
        window_len: usize,
        n_classes: usize,
        windows: Vec<SensorWindow>,
    ) -> Result<Self> {
        if channels == 0 || window_len == 0 {
            return Err(Error::InvalidArgument(
                "dataset dimensions must be positive".into(),
            ));
        }
        if n_classes < 2 {
            return Err(Error::InvalidArgument(format!(
                "n_classes must be at least 2, got {n_classes}"
            )));
        }
        for (i, w) in windows.iter().enumerate() {
            if w.x.shape() != [channels, window_len] {
                return Err(Error::shape(
                    "dataset",
                    format!("window {i}"),
                    format!("[{channels}, {window_len}]"),
                    format!("{:?}", w.x.shape()),
                ));
            }
            if w.s == Domain::Labeled && w.label.is_none() {
                return Err(Error::Data(format!(
                    "window {i} is in the labeled pool but has no label"
                )));
            }
            if let Some(y) = w.label.filter(|&y| y >= n_classes) {
                return Err(Error::Data(format!(
                    "window {i} label {y} outside [0, {n_classes})"
                )));
            }
            if !w.x.all_finite() {
                return Err(Error::Data(format!("window {i} has a non-finite value")));
            }
        }
        Ok(Dataset {
            channels,
            window_len,
            n_classes,
            windows,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn window_len(&self) -> usize {
        self.window_len
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn windows(&self) -> &[SensorWindow] {
        &self.windows
    }

    pub fn into_windows(self) -> Vec<SensorWindow> {
        self.windows
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    /// Labels of every window, or an error naming the first unlabeled one.
    pub fn labels(&self) -> Result<Vec<usize>> {
        self.windows
            .iter()
            .enumerate()
            .map(|(i, w)| {
                w.label
                    .ok_or_else(|| Error::Data(format!("window {i} has no label")))
            })
            .collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for y in self.windows.iter().filter_map(|w| w.label) {
            counts[y] += 1;
        }
        counts
    }

    pub fn subjects(&self) -> Vec<i32> {
        let mut ids: Vec<i32> = self.windows.iter().map(|w| w.subject_id).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// Stacks the selected windows into a `B×C×T` tensor.
    pub fn batch(&self, indices: &[usize]) -> Result<Tensor> {
        stack_windows(indices.iter().map(|&i| &self.windows[i].x))
    }

    pub fn all_x(&self) -> Result<Tensor> {
        stack_windows(self.windows.iter().map(|w| &w.x))
    }

    /// Label-free view for the unlabeled training stream.
    pub fn unlabeled(&self) -> UnlabeledSet {
        UnlabeledSet {
            channels: self.channels,
            window_len: self.window_len,
            windows: self
                .windows
                .iter()
                .map(|w| UnlabeledWindow {
                    subject_id: w.subject_id,
                    x: w.x.clone(),
                })
                .collect(),
        }
    }

    /// Same windows with new signal values (used by standardization).
    pub(crate) fn map_x(&self, f: impl Fn(&Tensor) -> Tensor) -> Dataset {
        Dataset {
            channels: self.channels,
            window_len: self.window_len,
            n_classes: self.n_classes,
            windows: self
                .windows
                .iter()
                .map(|w| SensorWindow {
                    x: f(&w.x),
                    ..w.clone()
                })
                .collect(),
        }
    }
}

/// An unlabeled window: there is no label field to leak.
#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledWindow {
    pub subject_id: i32,
    pub x: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledSet {
    channels: usize,
    window_len: usize,
    windows: Vec<UnlabeledWindow>,
}

impl UnlabeledSet {
    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn window_len(&self) -> usize {
        self.window_len
    }

    pub fn windows(&self) -> &[UnlabeledWindow] {
        &self.windows
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn batch(&self, indices: &[usize]) -> Result<Tensor> {
        stack_windows(indices.iter().map(|&i| &self.windows[i].x))
    }
}

fn stack_windows<'a>(xs: impl Iterator<Item = &'a Tensor>) -> Result<Tensor> {
    let items: Vec<&Tensor> = xs.collect();
    Tensor::stack(&items)
}
