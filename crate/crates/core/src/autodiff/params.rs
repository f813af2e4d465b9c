use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One named block inside a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub offset: usize,
    /// Logical shape; complex blocks carry a trailing axis of length 2
    /// (interleaved real/imaginary).
    pub dims: Vec<usize>,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Maps component names to index ranges of the flat vector.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Registry {
    entries: Vec<ParamEntry>,
    total: usize,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a block and returns its index. Names must be unique.
    pub fn add(&mut self, name: impl Into<String>, dims: Vec<usize>) -> Result<ParamId> {
        let name = name.into();
        if self.entries.iter().any(|e| e.name == name) {
            return Err(Error::config(format!("duplicate parameter block {name}")));
        }
        let entry = ParamEntry { name, offset: self.total, dims };
        self.total += entry.len();
        self.entries.push(entry);
        Ok(ParamId(self.entries.len() - 1))
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn get(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    /// Total length of all blocks whose name starts with `prefix`.
    pub fn count_prefix(&self, prefix: &str) -> usize {
        self.entries.iter().filter(|e| e.name.starts_with(prefix)).map(|e| e.len()).sum()
    }
}

/// Index of a block in a [`Registry`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// Flat parameter vector with its registry.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    registry: Registry,
    values: Vec<f64>,
}

impl ParamVector {
    pub fn zeros(registry: Registry) -> Self {
        let values = vec![0.0; registry.total()];
        ParamVector { registry, values }
    }

    pub fn from_values(registry: Registry, values: Vec<f64>) -> Result<Self> {
        if values.len() != registry.total() {
            return Err(Error::config(format!(
                "parameter payload has {} values, registry expects {}",
                values.len(),
                registry.total()
            )));
        }
        Ok(ParamVector { registry, values })
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn block(&self, id: ParamId) -> &[f64] {
        &self.values[self.registry.get(id).range()]
    }

    pub fn block_mut(&mut self, id: ParamId) -> &mut [f64] {
        let r = self.registry.get(id).range();
        &mut self.values[r]
    }

    pub fn block_by_name(&self, name: &str) -> Option<&[f64]> {
        self.registry.find(name).map(|id| self.block(id))
    }

    pub fn block_by_name_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        self.registry.find(name).map(|id| self.block_mut(id))
    }
}
