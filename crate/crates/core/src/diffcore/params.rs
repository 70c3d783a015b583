use std::collections::BTreeMap;

use crate::io::sha256_hex;
use crate::tensor::Tensor2;

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub value: Tensor2,
    pub grad: Tensor2,
}

impl Parameter {
    pub fn new(value: Tensor2) -> Self {
        let grad = Tensor2::zeros(value.rows(), value.cols());
        Parameter { value, grad }
    }
}

/// Named parameters in a deterministic (sorted) order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor2) {
        self.params.insert(name.into(), Parameter::new(value));
    }

    pub fn remove(&mut self, name: &str) -> Option<Parameter> {
        self.params.remove(name)
    }

    pub fn get(&self, name: &str) -> Option<&Parameter> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Parameter> {
        self.params.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn names(&self) -> Vec<String> {
        self.params.keys().cloned().collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Parameter)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Parameter)> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params.values_mut() {
            p.grad.fill(0.0);
        }
    }

    /// SHA-256 over the names, shapes and value bits of parameters whose
    /// name starts with `prefix`.
    pub fn checksum(&self, prefix: &str) -> String {
        let mut bytes = Vec::new();
        for (name, p) in self.params.range(prefix.to_string()..) {
            if !name.starts_with(prefix) {
                break;
            }
            bytes.extend_from_slice(name.as_bytes());
            bytes.extend_from_slice(&(p.value.rows() as u64).to_le_bytes());
            bytes.extend_from_slice(&(p.value.cols() as u64).to_le_bytes());
            for v in p.value.data() {
                bytes.extend_from_slice(&v.to_bits().to_le_bytes());
            }
        }
        sha256_hex(&bytes)
    }

    pub fn all_finite(&self) -> bool {
        self.params.values().all(|p| p.value.is_finite())
    }
}
