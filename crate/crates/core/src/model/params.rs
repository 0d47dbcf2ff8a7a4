use std::collections::HashMap;
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::scalar::Scalar;

/// Learning-rate group of a parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Group {
    /// Text encoder-decoder weights.
    Backbone,
    /// Newly added visual layers: projection, fusion, temporal encodings.
    Adapter,
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Group::Backbone => "backbone",
            Group::Adapter => "adapter",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter<T> {
    pub name: String,
    pub group: Group,
    pub tensor: Tensor<T>,
}

/// Named, grouped learnable tensors in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterStore<T> {
    params: Vec<Parameter<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> Default for ParameterStore<T> {
    fn default() -> Self {
        ParameterStore {
            params: Vec::new(),
            index: HashMap::new(),
        }
    }
}

impl<T: Scalar> ParameterStore<T> {
    pub fn push(&mut self, name: impl Into<String>, group: Group, tensor: Tensor<T>) -> usize {
        let name = name.into();
        let idx = self.params.len();
        let previous = self.index.insert(name.clone(), idx);
        assert!(previous.is_none(), "duplicate parameter {name}");
        self.params.push(Parameter { name, group, tensor });
        idx
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.params.iter()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.position(name).map(|i| &self.params[i].tensor)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.position(name).map(move |i| &mut self.params[i].tensor)
    }

    pub fn at(&self, i: usize) -> &Parameter<T> {
        &self.params[i]
    }

    pub fn tensor(&self, i: usize) -> &Tensor<T> {
        &self.params[i].tensor
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.params.iter().map(|p| &p.tensor)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|p| p.name.as_str())
    }

    pub fn groups(&self) -> Vec<Group> {
        self.params.iter().map(|p| p.group).collect()
    }

    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    /// Moves the tensors out, to be reinstated with [`Self::restore`].
    pub fn take_tensors(&mut self) -> Vec<Tensor<T>> {
        self.params
            .iter_mut()
            .map(|p| std::mem::replace(&mut p.tensor, Tensor::scalar(T::zero())))
            .collect()
    }

    pub fn restore(&mut self, tensors: Vec<Tensor<T>>) {
        assert_eq!(tensors.len(), self.params.len());
        for (p, t) in self.params.iter_mut().zip(tensors) {
            p.tensor = t;
        }
    }

    /// Replaces the tensor named `name`, requiring an identical shape.
    pub fn assign(&mut self, name: &str, tensor: Tensor<T>) -> Result<()> {
        let slot = self
            .get_mut(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter {name}")))?;
        if slot.shape() != tensor.shape() {
            return Err(Error::Config(format!(
                "parameter {name}: expected shape {:?}, found {:?}",
                slot.shape(),
                tensor.shape()
            )));
        }
        *slot = tensor;
        Ok(())
    }
}

/// Seeded initializer: normal(0, std) weights, zero biases and unit gains.
pub(crate) struct Initializer {
    rng: ChaCha8Rng,
    normal: Normal<f64>,
}

impl Initializer {
    pub fn new(seed: u64, std: f64) -> Self {
        Initializer {
            rng: ChaCha8Rng::seed_from_u64(seed),
            normal: Normal::new(0.0, std).expect("positive std"),
        }
    }

    pub fn normal<T: Scalar>(&mut self, shape: &[usize]) -> Tensor<T> {
        Tensor::from_fn(shape, |_| T::lit(self.normal.sample(&mut self.rng)))
    }
}
