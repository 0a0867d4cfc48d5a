//! Flat model representation, layer-aware scalar groups and the elementwise
//! scalar product used to forge poisoned models.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A flat, finite parameter vector together with the layer boundaries it was
/// flattened from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelVector {
    values: Vec<f64>,
    layer_spans: Vec<(usize, usize)>,
}

impl ModelVector {
    pub fn new(values: Vec<f64>, layer_spans: Vec<(usize, usize)>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyModel);
        }
        check_spans(&layer_spans, values.len())?;
        for (layer, &(off, len)) in layer_spans.iter().enumerate() {
            if values[off..off + len].iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { layer });
            }
        }
        Ok(Self { values, layer_spans })
    }

    /// A single-layer model.
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        let n = values.len();
        Self::new(values, vec![(0, n)])
    }

    /// Same layout as `self`, new values. Used by arithmetic that cannot leave
    /// the finite domain except through overflow, which is still checked.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        if values.len() != self.values.len() {
            return Err(Error::DimensionMismatch {
                expected: self.values.len(),
                actual: values.len(),
            });
        }
        Self::new(values, self.layer_spans.clone())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn layer_spans(&self) -> &[(usize, usize)] {
        &self.layer_spans
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn num_layers(&self) -> usize {
        self.layer_spans.len()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn scaled(&self, k: f64) -> Result<Self> {
        self.with_values(self.values.iter().map(|v| v * k).collect())
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            values: vec![0.0; self.values.len()],
            layer_spans: self.layer_spans.clone(),
        }
    }

    pub fn check_dim(&self, other: &ModelVector) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: other.dim(),
            });
        }
        Ok(())
    }
}

fn check_spans(spans: &[(usize, usize)], dim: usize) -> Result<()> {
    let mut cursor = 0;
    for &(off, len) in spans {
        if off != cursor || len == 0 {
            return Err(Error::BadSpans { dim });
        }
        cursor += len;
    }
    if cursor != dim {
        return Err(Error::BadSpans { dim });
    }
    Ok(())
}

/// Concatenates layers in order. Each layer is already row-major.
pub fn flatten(layers: &[Vec<f64>]) -> Result<ModelVector> {
    if layers.is_empty() || layers.iter().all(|l| l.is_empty()) {
        return Err(Error::EmptyModel);
    }
    let mut values = Vec::with_capacity(layers.iter().map(Vec::len).sum());
    let mut spans = Vec::with_capacity(layers.len());
    for (layer, data) in layers.iter().enumerate() {
        if data.is_empty() {
            return Err(Error::EmptyModel);
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { layer });
        }
        spans.push((values.len(), data.len()));
        values.extend_from_slice(data);
    }
    Ok(ModelVector {
        values,
        layer_spans: spans,
    })
}

pub fn unflatten(model: &ModelVector) -> Vec<Vec<f64>> {
    model
        .layer_spans
        .iter()
        .map(|&(off, len)| model.values[off..off + len].to_vec())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionStrategy {
    /// Group 0 is the last layer, group 1 is everything else.
    OutputLayerSplit,
    PerLayer,
    /// `T` contiguous blocks of near-equal size over the flat vector.
    UniformBlocks(usize),
}

impl Default for PartitionStrategy {
    fn default() -> Self {
        PartitionStrategy::OutputLayerSplit
    }
}

/// Assignment of every parameter to one of `T` scalar groups.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupPartition {
    group_of: Vec<usize>,
    num_groups: usize,
}

impl GroupPartition {
    pub fn new(group_of: Vec<usize>, num_groups: usize) -> Result<Self> {
        if num_groups == 0 {
            return Err(Error::BadPartition("T must be positive".into()));
        }
        if num_groups > group_of.len() {
            return Err(Error::BadPartition(format!(
                "T = {num_groups} exceeds J = {}",
                group_of.len()
            )));
        }
        let mut seen = vec![false; num_groups];
        for &g in &group_of {
            if g >= num_groups {
                return Err(Error::BadPartition(format!("group index {g} out of range")));
            }
            seen[g] = true;
        }
        if let Some(empty) = seen.iter().position(|s| !s) {
            return Err(Error::BadPartition(format!("group {empty} is empty")));
        }
        Ok(Self { group_of, num_groups })
    }

    pub fn group_of(&self) -> &[usize] {
        &self.group_of
    }

    pub fn num_groups(&self) -> usize {
        self.num_groups
    }

    pub fn dim(&self) -> usize {
        self.group_of.len()
    }

    pub fn group_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.num_groups];
        for &g in &self.group_of {
            sizes[g] += 1;
        }
        sizes
    }

    /// Per-group sums of squared parameter values.
    pub fn group_square_sums(&self, w: &[f64]) -> Vec<f64> {
        // Runs of equal group index are summed pairwise.
        let mut sums = vec![0.0; self.num_groups];
        let mut start = 0;
        while start < self.group_of.len() {
            let g = self.group_of[start];
            let mut end = start + 1;
            while end < self.group_of.len() && self.group_of[end] == g {
                end += 1;
            }
            let block = &w[start..end];
            sums[g] += crate::numeric::pairwise_sum_by(block.len(), |i| block[i] * block[i]);
            start = end;
        }
        sums
    }
}

pub fn partition_groups(mv: &ModelVector, strategy: PartitionStrategy) -> Result<GroupPartition> {
    let dim = mv.dim();
    match strategy {
        PartitionStrategy::OutputLayerSplit => {
            if mv.num_layers() < 2 {
                return Err(Error::BadPartition(
                    "output_layer_split needs at least two layers".into(),
                ));
            }
            let (off, _) = *mv.layer_spans().last().expect("non-empty spans");
            let group_of = (0..dim).map(|j| if j >= off { 0 } else { 1 }).collect();
            GroupPartition::new(group_of, 2)
        }
        PartitionStrategy::PerLayer => {
            let mut group_of = vec![0; dim];
            for (layer, &(off, len)) in mv.layer_spans().iter().enumerate() {
                group_of[off..off + len].fill(layer);
            }
            GroupPartition::new(group_of, mv.num_layers())
        }
        PartitionStrategy::UniformBlocks(t) => {
            if t == 0 || t > dim {
                return Err(Error::BadPartition(format!("uniform_blocks({t}) with J = {dim}")));
            }
            let group_of = (0..dim).map(|j| j * t / dim).collect();
            GroupPartition::new(group_of, t)
        }
    }
}

/// Strictly positive per-parameter scalars.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarVector {
    values: Vec<f64>,
}

impl ScalarVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some((index, &value)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v > 0.0))
        {
            return Err(Error::NonPositiveScalar { index, value });
        }
        Ok(Self { values })
    }

    pub fn ones(dim: usize) -> Self {
        Self {
            values: vec![1.0; dim],
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// True when at least one scalar differs from 1 by more than `tol`.
    pub fn perturbs(&self, tol: f64) -> bool {
        self.values.iter().any(|a| (a - 1.0).abs() > tol)
    }
}

pub fn expand_group_scalars(group_scalars: &[f64], p: &GroupPartition) -> Result<ScalarVector> {
    if group_scalars.len() != p.num_groups() {
        return Err(Error::DimensionMismatch {
            expected: p.num_groups(),
            actual: group_scalars.len(),
        });
    }
    if let Some((index, &value)) = group_scalars
        .iter()
        .enumerate()
        .find(|(_, v)| !(v.is_finite() && **v > 0.0))
    {
        return Err(Error::NonPositiveScalar { index, value });
    }
    Ok(ScalarVector {
        values: p.group_of().iter().map(|&g| group_scalars[g]).collect(),
    })
}

/// The elementwise product `a ⊗ w`.
pub fn apply_scalars(w: &ModelVector, a: &ScalarVector) -> Result<ModelVector> {
    if w.dim() != a.dim() {
        return Err(Error::DimensionMismatch {
            expected: w.dim(),
            actual: a.dim(),
        });
    }
    w.with_values(
        w.values()
            .iter()
            .zip(a.values())
            .map(|(x, s)| x * s)
            .collect(),
    )
}
