//! Small dense/sparse vector helpers used by the policy and optimizer.
//!
//! Parameter vectors are plain `Vec<f64>` (or [`ParamVector`] when named
//! segments help). Feature vectors are sparse (index, value) lists:
//! observation encodings are one-hot blocks, so most coordinates are zero
//! and sparse dot/axpy makes the training loops several times faster than
//! dense arithmetic at these dimensions.

use serde::{Deserialize, Serialize};

/// Dense dot product.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += alpha * x` elementwise.
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `x *= alpha` elementwise.
pub fn scale(x: &mut [f64], alpha: f64) {
    for xi in x.iter_mut() {
        *xi *= alpha;
    }
}

/// Euclidean norm.
pub fn norm2(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

/// `a - b` as a new vector.
pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Sparse vector: sorted unique indices with their values, plus the dense
/// dimension it embeds into.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseVec {
    dim: usize,
    indices: Vec<u32>,
    values: Vec<f64>,
}

impl SparseVec {
    pub fn new(dim: usize) -> SparseVec {
        SparseVec {
            dim,
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Builds from (index, value) pairs; indices must be strictly increasing.
    pub fn from_pairs(dim: usize, pairs: impl IntoIterator<Item = (usize, f64)>) -> SparseVec {
        let mut v = SparseVec::new(dim);
        for (i, x) in pairs {
            v.push(i, x);
        }
        v
    }

    /// Appends an entry; `index` must exceed all existing indices.
    pub fn push(&mut self, index: usize, value: f64) {
        debug_assert!(index < self.dim);
        debug_assert!(self.indices.last().map_or(true, |&last| (last as usize) < index));
        if value != 0.0 {
            self.indices.push(index as u32);
            self.values.push(value);
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices
            .iter()
            .zip(&self.values)
            .map(|(&i, &v)| (i as usize, v))
    }

    /// Dot product against a dense vector (or a dense row slice).
    pub fn dot_dense(&self, dense: &[f64]) -> f64 {
        debug_assert_eq!(dense.len(), self.dim);
        self.indices
            .iter()
            .zip(&self.values)
            .map(|(&i, &v)| v * dense[i as usize])
            .sum()
    }

    /// `y += alpha * self` into a dense vector.
    pub fn axpy_into(&self, alpha: f64, y: &mut [f64]) {
        debug_assert_eq!(y.len(), self.dim);
        for (&i, &v) in self.indices.iter().zip(&self.values) {
            y[i as usize] += alpha * v;
        }
    }

    /// Materializes the dense form.
    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.axpy_into(1.0, &mut out);
        out
    }
}

/// A flat parameter vector with named, non-overlapping segments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    values: Vec<f64>,
    segments: Vec<Segment>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct Segment {
    name: String,
    offset: usize,
    len: usize,
}

impl ParamVector {
    /// Lays out segments contiguously in the given order, zero-initialized.
    pub fn new(layout: &[(&str, usize)]) -> ParamVector {
        let mut segments = Vec::with_capacity(layout.len());
        let mut offset = 0;
        for &(name, len) in layout {
            segments.push(Segment {
                name: name.to_string(),
                offset,
                len,
            });
            offset += len;
        }
        ParamVector {
            values: vec![0.0; offset],
            segments,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    fn find(&self, name: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.name == name)
    }

    pub fn segment(&self, name: &str) -> Option<&[f64]> {
        self.find(name)
            .map(|s| &self.values[s.offset..s.offset + s.len])
    }

    pub fn segment_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let seg = self.find(name)?.clone();
        Some(&mut self.values[seg.offset..seg.offset + seg.len])
    }

    pub fn segment_names(&self) -> Vec<&str> {
        self.segments.iter().map(|s| s.name.as_str()).collect()
    }
}
