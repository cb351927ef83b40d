use std::collections::BTreeMap;

use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, Tensor};

/// A named trainable array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parameter {
    pub name: String,
    pub shape: Vec<usize>,
    /// Row-major values.
    pub values: Vec<f64>,
}

impl Parameter {
    pub fn to_array(&self) -> ArrayD<f64> {
        ArrayD::from_shape_vec(IxDyn(&self.shape), self.values.clone())
            .expect("parameter values match shape")
    }
}

/// Registry of named parameters and non-trainable buffers (batch-norm
/// running statistics). Iteration order is sorted by name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, ArrayD<f64>>,
    buffers: BTreeMap<String, ArrayD<f64>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter. Panics on a duplicate name: parameter layout is
    /// a pure function of the model configuration, so a clash is a bug.
    pub fn insert(&mut self, name: impl Into<String>, value: ArrayD<f64>) {
        let name = name.into();
        assert!(
            !self.params.contains_key(&name),
            "duplicate parameter name `{name}`"
        );
        self.params.insert(name, value);
    }

    /// Weight matrix `[fan_in, fan_out]` drawn uniformly from ±1/√fan_in.
    pub fn insert_weight(&mut self, name: impl Into<String>, fan_in: usize, fan_out: usize, rng: &mut impl Rng) {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let values: Vec<f64> = (0..fan_in * fan_out)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        self.insert(
            name,
            ArrayD::from_shape_vec(IxDyn(&[fan_in, fan_out]), values).unwrap(),
        );
    }

    pub fn insert_filled(&mut self, name: impl Into<String>, shape: &[usize], fill: f64) {
        self.insert(name, ArrayD::from_elem(IxDyn(shape), fill));
    }

    pub fn insert_buffer(&mut self, name: impl Into<String>, value: ArrayD<f64>) {
        self.buffers.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&ArrayD<f64>> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut ArrayD<f64>> {
        self.params.get_mut(name)
    }

    pub fn buffer(&self, name: &str) -> Option<&ArrayD<f64>> {
        self.buffers.get(name)
    }

    pub fn buffer_mut(&mut self, name: &str) -> Option<&mut ArrayD<f64>> {
        self.buffers.get_mut(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ArrayD<f64>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut ArrayD<f64>)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn buffers(&self) -> impl Iterator<Item = (&str, &ArrayD<f64>)> {
        self.buffers.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn parameter_count(&self) -> usize {
        self.params.values().map(|a| a.len()).sum()
    }

    pub fn to_parameters(&self) -> Vec<Parameter> {
        self.params
            .iter()
            .map(|(name, a)| Parameter {
                name: name.clone(),
                shape: a.shape().to_vec(),
                values: a.iter().copied().collect(),
            })
            .collect()
    }

    pub fn buffers_as_parameters(&self) -> Vec<Parameter> {
        self.buffers
            .iter()
            .map(|(name, a)| Parameter {
                name: name.clone(),
                shape: a.shape().to_vec(),
                values: a.iter().copied().collect(),
            })
            .collect()
    }

    /// Records every parameter as a gradient-tracking leaf.
    pub fn bind(&self, graph: &mut Graph) -> Bindings {
        let map = self
            .params
            .iter()
            .map(|(k, v)| (k.clone(), graph.leaf(v.clone(), true)))
            .collect();
        Bindings { map }
    }

    /// Records every parameter as a constant (no gradients).
    pub fn bind_frozen(&self, graph: &mut Graph) -> Bindings {
        let map = self
            .params
            .iter()
            .map(|(k, v)| (k.clone(), graph.constant(v.clone())))
            .collect();
        Bindings { map }
    }
}

/// Parameter name to graph handle, for one forward pass.
#[derive(Debug, Clone, Default)]
pub struct Bindings {
    map: BTreeMap<String, Tensor>,
}

impl Bindings {
    pub fn get(&self, name: &str) -> Tensor {
        *self
            .map
            .get(name)
            .unwrap_or_else(|| panic!("parameter `{name}` is not bound"))
    }

    pub fn try_get(&self, name: &str) -> Option<Tensor> {
        self.map.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Tensor)> {
        self.map.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// Gradients of all bound parameters after a backward pass; `None`
    /// entries were not reached from the root.
    pub fn gradients(&self, graph: &Graph) -> BTreeMap<String, Option<ArrayD<f64>>> {
        self.map
            .iter()
            .map(|(k, t)| (k.clone(), graph.grad(*t).cloned()))
            .collect()
    }
}
