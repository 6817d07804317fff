//! Memory bank, embedding-space search, K-means and restricted samplers.

mod kmeans;
mod sampling;
mod search;

pub use kmeans::{kmeans, KMeans};
pub use sampling::{
    candidate_pool, close_set, sample_close_neighbors, sample_negatives, AnnealSchedule, NegativeKind,
    NegativeSpec, NeighborKind, NeighborSpec,
};
pub use search::{rank_by_similarity, rank_count, squared_distances};

use crate::data::{apply_view_indexed, ViewFunction};
use crate::error::{Error, Result};
use crate::ndmath::{Mlp, ParamSet, Tensor};

/// Per-datum embedding store with update `M[i] ← α·M[i] + (1−α)·g`.
#[derive(Clone, Debug, PartialEq)]
pub struct MemoryBank {
    entries: Tensor,
    alpha: f64,
    renormalize: bool,
}

impl MemoryBank {
    /// A zero-initialized bank of `n` entries of dimension `dim`.
    pub fn zeros(n: usize, dim: usize, alpha: f64, renormalize: bool) -> Result<Self> {
        Self::from_entries(Tensor::zeros(&[n, dim]), alpha, renormalize)
    }

    pub fn from_entries(entries: Tensor, alpha: f64, renormalize: bool) -> Result<Self> {
        entries.dims2()?;
        if !(0.0..1.0).contains(&alpha) {
            return Err(Error::domain(format!("bank update rate must lie in [0, 1), got {alpha}")));
        }
        Ok(Self {
            entries,
            alpha,
            renormalize,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.entries.cols()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn renormalizes(&self) -> bool {
        self.renormalize
    }

    pub fn entries(&self) -> &Tensor {
        &self.entries
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.entries.row(i)
    }

    /// Overwrites every row, ignoring α.
    pub fn reset(&mut self, entries: Tensor) -> Result<()> {
        if entries.shape() != self.entries.shape() {
            return Err(Error::shape(
                "MemoryBank::reset",
                format!("{:?} vs {:?}", entries.shape(), self.entries.shape()),
            ));
        }
        self.entries = entries;
        Ok(())
    }

    pub fn update(&mut self, index: usize, embedding: &[f64]) -> Result<()> {
        let n = self.len();
        if index >= n {
            return Err(Error::IndexOutOfRange { index, len: n });
        }
        if embedding.len() != self.dim() {
            return Err(Error::shape(
                "MemoryBank::update",
                format!("embedding of length {}, bank dim {}", embedding.len(), self.dim()),
            ));
        }
        if embedding.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "MemoryBank::update" });
        }
        let a = self.alpha;
        let row = self.entries.row_mut(index);
        for (m, g) in row.iter_mut().zip(embedding) {
            *m = a * *m + (1.0 - a) * g;
        }
        if self.renormalize {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm < 1e-300 {
                return Err(Error::domain(format!("bank row {index} collapsed to zero")));
            }
            row.iter_mut().for_each(|v| *v /= norm);
        }
        Ok(())
    }
}

/// `Σ_m w[m] · g(ν(x, a_m))`: the embedding of a weighted set of views.
pub fn weighted_view_encode(
    encoder: &Mlp,
    params: &ParamSet,
    view: &ViewFunction,
    datum: &[f64],
    view_indices: &[u64],
    weights: &[f64],
) -> Result<Vec<f64>> {
    if view_indices.len() != weights.len() {
        return Err(Error::shape(
            "weighted_view_encode",
            format!("{} views, {} weights", view_indices.len(), weights.len()),
        ));
    }
    if view_indices.is_empty() {
        return Err(Error::domain("weighted view set is empty"));
    }
    let mut rows = Vec::new();
    for &a in view_indices {
        rows.push(apply_view_indexed(view, datum, a)?);
    }
    let emb = encoder.eval(params, &Tensor::from_rows(&rows)?)?;
    let mut out = vec![0.0; emb.cols()];
    for (m, w) in weights.iter().enumerate() {
        for (o, v) in out.iter_mut().zip(emb.row(m)) {
            *o += w * v;
        }
    }
    Ok(out)
}
