use std::ops::{Index, IndexMut};

use indexmap::IndexMap;

use super::Tensor;
use crate::error::{Error, Result};

/// Named model parameters with a canonical flat view.
///
/// The flat ordering is insertion order, each tensor contributing its
/// row-major data.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    tensors: IndexMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.tensors.insert(name.into(), tensor);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.tensors.get_index_of(name)
    }

    pub fn by_index(&self, index: usize) -> (&str, &Tensor) {
        let (k, v) = self.tensors.get_index(index).expect("param index");
        (k.as_str(), v)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn total_len(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    /// Start offset of every parameter in the flat view.
    pub fn offsets(&self) -> Vec<usize> {
        let mut acc = 0;
        self.tensors
            .values()
            .map(|t| {
                let o = acc;
                acc += t.numel();
                o
            })
            .collect()
    }

    /// Flat range owned by `name`.
    pub fn range_of(&self, name: &str) -> Option<std::ops::Range<usize>> {
        let idx = self.index_of(name)?;
        let start = self.offsets()[idx];
        Some(start..start + self.tensors[idx].numel())
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.total_len());
        for t in self.tensors.values() {
            out.extend_from_slice(t.data());
        }
        out
    }

    pub fn unflatten(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.total_len() {
            return Err(Error::Shape {
                op: "unflatten",
                left: vec![self.total_len()],
                right: vec![flat.len()],
            });
        }
        let mut at = 0;
        for t in self.tensors.values_mut() {
            let n = t.numel();
            t.data_mut().copy_from_slice(&flat[at..at + n]);
            at += n;
        }
        Ok(())
    }

    /// Maps a flat coordinate to (parameter name, offset inside it).
    pub fn locate(&self, flat_index: usize) -> Option<(&str, usize)> {
        let mut at = 0;
        for (name, t) in &self.tensors {
            if flat_index < at + t.numel() {
                return Some((name.as_str(), flat_index - at));
            }
            at += t.numel();
        }
        None
    }

    pub fn get_flat(&self, flat_index: usize) -> Option<f64> {
        let (name, off) = self.locate(flat_index)?;
        Some(self.tensors[name].data()[off])
    }

    pub fn set_flat(&mut self, flat_index: usize, value: f64) -> Result<()> {
        let (name, off) = self
            .locate(flat_index)
            .map(|(n, o)| (n.to_owned(), o))
            .ok_or(Error::OutOfRange {
                what: "flat parameter",
                index: flat_index,
                len: self.total_len(),
            })?;
        self.tensors[name.as_str()].data_mut()[off] = value;
        Ok(())
    }
}

/// Gradient (or update) in the canonical flat ordering of a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradVector(pub Vec<f64>);

impl GradVector {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dot(&self, other: &GradVector) -> f64 {
        dot(&self.0, &other.0)
    }

    pub fn norm_sq(&self) -> f64 {
        dot(&self.0, &self.0)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn scaled(&self, c: f64) -> GradVector {
        GradVector(self.0.iter().map(|v| v * c).collect())
    }

    /// `self += c * other`
    pub fn axpy(&mut self, c: f64, other: &GradVector) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += c * b;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Slice belonging to one named parameter.
    pub fn slice_for<'a>(&'a self, params: &ParamStore, name: &str) -> Option<&'a [f64]> {
        params.range_of(name).map(|r| &self.0[r])
    }
}

impl Index<usize> for GradVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl IndexMut<usize> for GradVector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
