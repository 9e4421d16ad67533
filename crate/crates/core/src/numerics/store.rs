use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Gradients, Graph, NodeId, Tensor};

/// Named parameter tensors in a fixed insertion order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    index: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub tensor: Tensor,
    pub trainable: bool,
}

/// Gradients keyed by parameter name.
pub type ParamGrads = BTreeMap<String, Tensor>;

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor, trainable: bool) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Argument(format!("duplicate parameter `{name}`")));
        }
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push(ParamEntry {
            name,
            tensor,
            trainable,
        });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.index
            .get(name)
            .map(|&i| &self.entries[i].tensor)
            .ok_or_else(|| Error::Key(name.to_string()))
    }

    /// Replaces a tensor in place; the shape must not change.
    pub fn set(&mut self, name: &str, tensor: Tensor) -> Result<()> {
        let i = *self.index.get(name).ok_or_else(|| Error::Key(name.to_string()))?;
        let slot = &mut self.entries[i].tensor;
        if slot.shape() != tensor.shape() {
            return Err(Error::shape("set", slot.shape(), tensor.shape()));
        }
        *slot = tensor;
        Ok(())
    }

    pub fn set_trainable(&mut self, name: &str, trainable: bool) -> Result<()> {
        let i = *self.index.get(name).ok_or_else(|| Error::Key(name.to_string()))?;
        self.entries[i].trainable = trainable;
        Ok(())
    }

    pub fn is_trainable(&self, name: &str) -> bool {
        self.index.get(name).is_some_and(|&i| self.entries[i].trainable)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub(crate) fn entry_mut(&mut self, name: &str) -> Result<&mut ParamEntry> {
        let i = *self.index.get(name).ok_or_else(|| Error::Key(name.to_string()))?;
        Ok(&mut self.entries[i])
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.numel()).sum()
    }

    /// Places every parameter into `graph` as a leaf (trainable or constant).
    pub fn bind(&self, graph: &mut Graph) -> BoundParams {
        let ids = self
            .entries
            .iter()
            .map(|e| {
                let id = if e.trainable {
                    graph.param(e.tensor.clone())
                } else {
                    graph.constant(e.tensor.clone())
                };
                (e.name.clone(), id)
            })
            .collect();
        BoundParams { ids }
    }

    pub fn to_named(&self) -> Vec<NamedTensor> {
        self.entries
            .iter()
            .map(|e| NamedTensor {
                name: e.name.clone(),
                tensor: e.tensor.clone(),
            })
            .collect()
    }

    /// Overwrites every parameter from `tensors`, validating names and shapes.
    pub fn load_named(&mut self, tensors: Vec<NamedTensor>) -> Result<()> {
        let mut seen = BTreeMap::new();
        for nt in tensors {
            let entry = self.entry_mut(&nt.name)?;
            if entry.tensor.shape() != nt.tensor.shape() {
                return Err(Error::validation(
                    "shape",
                    &nt.name,
                    format!("expected {:?}, file has {:?}", entry.tensor.shape(), nt.tensor.shape()),
                ));
            }
            entry.tensor = nt.tensor;
            seen.insert(nt.name, ());
        }
        if let Some(missing) = self.entries.iter().find(|e| !seen.contains_key(&e.name)) {
            return Err(Error::Key(missing.name.clone()));
        }
        Ok(())
    }
}

/// Graph node handles for a bound [`ParamStore`].
#[derive(Debug, Clone)]
pub struct BoundParams {
    ids: Vec<(String, NodeId)>,
}

impl BoundParams {
    pub fn id(&self, name: &str) -> Result<NodeId> {
        self.ids
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, id)| *id)
            .ok_or_else(|| Error::Key(name.to_string()))
    }

    /// Gradients for the trainable parameters, keyed by name.
    pub fn collect(&self, grads: &Gradients) -> ParamGrads {
        self.ids
            .iter()
            .filter_map(|(name, id)| grads.get(*id).map(|g| (name.clone(), g.clone())))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    #[serde(flatten)]
    pub tensor: Tensor,
}

/// JSON container for named tensors plus an arbitrary configuration echo.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TensorFile<C> {
    pub format: String,
    pub config: C,
    pub tensors: Vec<NamedTensor>,
}
