//! Named parameter storage keyed by module path (`flow.2.post.weight`, ...).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Which optimizer owns a store.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum StoreKind {
    Generator,
    Discriminator,
    /// Load-only weights; always read as constants on a graph.
    Frozen,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId {
    store: StoreKind,
    index: u32,
}

impl ParamId {
    pub fn store(self) -> StoreKind {
        self.store
    }

    pub fn index(self) -> usize {
        self.index as usize
    }
}

#[derive(Clone, Debug)]
pub struct ParamStore<T> {
    kind: StoreKind,
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    by_name: BTreeMap<String, usize>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new(kind: StoreKind) -> Self {
        ParamStore {
            kind,
            names: Vec::new(),
            tensors: Vec::new(),
            by_name: BTreeMap::new(),
        }
    }

    pub fn kind(&self) -> StoreKind {
        self.kind
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let name = name.into();
        assert!(!self.by_name.contains_key(&name), "duplicate parameter {name}");
        let index = self.tensors.len();
        self.by_name.insert(name.clone(), index);
        self.names.push(name);
        self.tensors.push(value);
        ParamId {
            store: self.kind,
            index: index as u32,
        }
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        debug_assert_eq!(id.store, self.kind, "parameter from another store");
        &self.tensors[id.index()]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        debug_assert_eq!(id.store, self.kind, "parameter from another store");
        &mut self.tensors[id.index()]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).map(|&i| ParamId {
            store: self.kind,
            index: i as u32,
        })
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.index()]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.tensors.len()).map(|i| ParamId {
            store: self.kind,
            index: i as u32,
        })
    }

    /// Parameters whose name starts with `prefix` followed by a `.`.
    pub fn ids_in_module<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = ParamId> + 'a {
        self.ids().filter(move |&id| {
            let n = self.name(id);
            n.len() > prefix.len() && n.starts_with(prefix) && n.as_bytes()[prefix.len()] == b'.'
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// SHA-256 over names, shapes and little-endian values, in insertion order.
    pub fn checksum(&self) -> String {
        let mut hasher = Sha256::new();
        let mut buf = Vec::new();
        for (name, t) in self.iter() {
            hasher.update(name.as_bytes());
            for &d in t.shape() {
                hasher.update((d as u64).to_le_bytes());
            }
            buf.clear();
            for &v in t.data() {
                v.write_le(&mut buf);
            }
            hasher.update(&buf);
        }
        hex::encode(hasher.finalize())
    }

    /// Replace values from `other`, matching by name. Shapes must agree.
    pub fn load_from(&mut self, other: &BTreeMap<String, Tensor<T>>) -> Result<(), String> {
        for (i, name) in self.names.iter().enumerate() {
            let t = other
                .get(name)
                .ok_or_else(|| format!("missing parameter {name}"))?;
            if t.shape() != self.tensors[i].shape() {
                return Err(format!(
                    "shape mismatch for {name}: stored {:?}, expected {:?}",
                    t.shape(),
                    self.tensors[i].shape()
                ));
            }
            self.tensors[i] = t.clone();
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::all_finite)
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            kind: self.kind,
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            by_name: self.by_name.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn module_prefix_matching_is_exact() {
        let mut s = ParamStore::<f32>::new(StoreKind::Generator);
        s.insert("flow.0.w", Tensor::zeros(&[1]));
        s.insert("flowx.w", Tensor::zeros(&[1]));
        s.insert("decoder.w", Tensor::zeros(&[1]));
        let names: Vec<_> = s.ids_in_module("flow").map(|id| s.name(id).to_string()).collect();
        assert_eq!(names, vec!["flow.0.w"]);
    }

    #[test]
    fn checksum_tracks_values() {
        let mut s = ParamStore::<f32>::new(StoreKind::Generator);
        let id = s.insert("a", Tensor::zeros(&[2]));
        let before = s.checksum();
        assert_eq!(before, s.clone().checksum());
        s.get_mut(id).data_mut()[1] = 1.0;
        assert_ne!(before, s.checksum());
    }
}
