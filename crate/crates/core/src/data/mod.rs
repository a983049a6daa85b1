//! Activation containers shared by every stage.
//!
//! An [`ActivationSet`] holds one pooled hidden-state vector per sample for
//! every layer of a model, together with the binary grounded/hallucinated
//! label of each sample. Layer matrices are stored row-major as `f32`, the
//! precision the dump format carries on disk.

mod dump;
mod split;

pub use dump::{parse_dump, read_dump, write_dump, write_text_dump, TextLayer, DUMP_MAGIC, DUMP_VERSION};
pub use split::{split_three_way, SplitAssignment, SplitMix64};

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Gold label of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    Grounded,
    Hallucinated,
}

impl Label {
    pub fn from_bit(bit: u8) -> Result<Self> {
        match bit {
            0 => Ok(Label::Grounded),
            1 => Ok(Label::Hallucinated),
            other => Err(Error::Header(format!("label must be 0 or 1, found {other}"))),
        }
    }

    pub fn bit(self) -> u8 {
        match self {
            Label::Grounded => 0,
            Label::Hallucinated => 1,
        }
    }

    pub fn is_hallucinated(self) -> bool {
        self == Label::Hallucinated
    }

    pub(crate) fn name(self) -> &'static str {
        match self {
            Label::Grounded => "grounded",
            Label::Hallucinated => "hallucinated",
        }
    }
}

/// How token positions were reduced to one vector per sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    LastToken,
    MeanPool,
}

impl fmt::Display for Pooling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Pooling::LastToken => "last_token",
            Pooling::MeanPool => "mean_pool",
        })
    }
}

/// Labeled per-layer activations for a single pooling mode.
///
/// Immutable once built: every transform in this crate returns a modified
/// copy instead of mutating in place.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationSet {
    model_name: String,
    pooling: Pooling,
    hidden_dim: usize,
    labels: Vec<Label>,
    sample_ids: Vec<String>,
    layers: Vec<Vec<f32>>,
    metadata: serde_json::Map<String, serde_json::Value>,
}

impl ActivationSet {
    /// Builds a set, checking that every layer is `S × d` and ids are unique.
    pub fn new(
        model_name: impl Into<String>,
        pooling: Pooling,
        hidden_dim: usize,
        labels: Vec<Label>,
        sample_ids: Vec<String>,
        layers: Vec<Vec<f32>>,
    ) -> Result<Self> {
        let num_samples = labels.len();
        if sample_ids.len() != num_samples {
            return Err(Error::DimensionMismatch(format!(
                "{} sample ids for {} labels",
                sample_ids.len(),
                num_samples
            )));
        }
        if hidden_dim == 0 {
            return Err(Error::DimensionMismatch("hidden_dim must be positive".into()));
        }
        for (l, layer) in layers.iter().enumerate() {
            if layer.len() != num_samples * hidden_dim {
                return Err(Error::DimensionMismatch(format!(
                    "layer {l} holds {} values, expected {num_samples}x{hidden_dim}",
                    layer.len()
                )));
            }
        }
        let mut seen = HashSet::with_capacity(num_samples);
        for id in &sample_ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::DimensionMismatch(format!("duplicate sample id {id:?}")));
            }
        }
        Ok(Self {
            model_name: model_name.into(),
            pooling,
            hidden_dim,
            labels,
            sample_ids,
            layers,
            metadata: serde_json::Map::new(),
        })
    }

    /// Attaches free-form provenance (for example an exporter's truncation
    /// length). Carried through dump round trips untouched.
    pub fn with_metadata(mut self, metadata: serde_json::Map<String, serde_json::Value>) -> Self {
        self.metadata = metadata;
        self
    }

    pub fn model_name(&self) -> &str {
        &self.model_name
    }

    pub fn pooling(&self) -> Pooling {
        self.pooling
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn num_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn label(&self, sample: usize) -> Label {
        self.labels[sample]
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    pub fn metadata(&self) -> &serde_json::Map<String, serde_json::Value> {
        &self.metadata
    }

    /// Row-major `S × d` matrix of one layer.
    pub fn layer(&self, layer: usize) -> &[f32] {
        &self.layers[layer]
    }

    pub fn row(&self, layer: usize, sample: usize) -> &[f32] {
        let d = self.hidden_dim;
        &self.layers[layer][sample * d..(sample + 1) * d]
    }

    pub(crate) fn layers(&self) -> &[Vec<f32>] {
        &self.layers
    }

    pub(crate) fn check_layer(&self, layer: usize) -> Result<()> {
        if layer >= self.num_layers() {
            return Err(Error::InvalidArgument(format!(
                "layer {layer} out of range for {} layers",
                self.num_layers()
            )));
        }
        Ok(())
    }

    pub(crate) fn check_indices(&self, idx: &[usize]) -> Result<()> {
        if let Some(&bad) = idx.iter().find(|&&i| i >= self.num_samples()) {
            return Err(Error::InvalidArgument(format!(
                "sample index {bad} out of range for {} samples",
                self.num_samples()
            )));
        }
        Ok(())
    }

    /// Copy of this set with one layer's rows replaced by `f(sample, row)`
    /// for every sample in `idx`. All other layers and rows are untouched.
    pub fn map_rows<F>(&self, layer: usize, idx: &[usize], mut f: F) -> Result<ActivationSet>
    where
        F: FnMut(usize, &[f32]) -> Result<Vec<f32>>,
    {
        self.check_layer(layer)?;
        self.check_indices(idx)?;
        let d = self.hidden_dim;
        let mut out = self.clone();
        for &i in idx {
            let new_row = f(i, self.row(layer, i))?;
            if new_row.len() != d {
                return Err(Error::LengthMismatch {
                    expected: d,
                    found: new_row.len(),
                });
            }
            out.layers[layer][i * d..(i + 1) * d].copy_from_slice(&new_row);
        }
        Ok(out)
    }

    /// Replaces one layer wholesale.
    pub fn with_layer(&self, layer: usize, values: Vec<f32>) -> Result<ActivationSet> {
        self.check_layer(layer)?;
        if values.len() != self.num_samples() * self.hidden_dim {
            return Err(Error::LengthMismatch {
                expected: self.num_samples() * self.hidden_dim,
                found: values.len(),
            });
        }
        let mut out = self.clone();
        out.layers[layer] = values;
        Ok(out)
    }

    /// Sample indices in `idx` carrying the given label, in input order.
    pub fn indices_with_label(&self, idx: &[usize], label: Label) -> Vec<usize> {
        idx.iter().copied().filter(|&i| self.labels[i] == label).collect()
    }

    /// Features of `idx` at the concatenation of `layers`, one row per sample.
    pub fn features(&self, layers: &[usize], idx: &[usize]) -> Result<Vec<Vec<f64>>> {
        for &l in layers {
            self.check_layer(l)?;
        }
        self.check_indices(idx)?;
        Ok(idx
            .iter()
            .map(|&i| {
                layers
                    .iter()
                    .flat_map(|&l| self.row(l, i).iter().map(|&v| f64::from(v)))
                    .collect()
            })
            .collect())
    }

    pub(crate) fn require_both_classes(&self, idx: &[usize]) -> Result<()> {
        let hall = idx.iter().filter(|&&i| self.labels[i].is_hallucinated()).count();
        if hall == 0 || hall == idx.len() {
            return Err(Error::DegenerateLabels);
        }
        Ok(())
    }
}
