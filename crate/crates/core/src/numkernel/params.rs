use std::collections::HashMap;

use rand::Rng;

use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

/// Index of a tensor inside a [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Named, ordered collection of trainable tensors.
///
/// Insertion order is the checkpoint payload order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    by_name: HashMap<String, ParamId>,
}

/// Initialisation rule for a new parameter.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Zeros,
    Const(f64),
    /// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
    Glorot { fan_in: usize, fan_out: usize },
    /// Fused `[i, f, g, o]` LSTM bias: forget block 1, the rest 0.
    LstmBias { hidden: usize },
}

impl Init {
    fn tensor<T: Real, R: Rng + ?Sized>(self, shape: &[usize], rng: &mut R) -> Tensor<T> {
        match self {
            Init::Zeros => Tensor::zeros(shape),
            Init::Const(v) => Tensor::full(shape, T::from_f64(v)),
            Init::Glorot { fan_in, fan_out } => {
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                Tensor::uniform(shape, bound, rng)
            }
            Init::LstmBias { hidden } => {
                let mut t = Tensor::zeros(shape);
                t.data_mut()[hidden..2 * hidden].fill(T::one());
                t
            }
        }
    }
}

/// Declared parameter: name, shape and initialiser, no storage.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Ordered parameter declarations. Lets a model be sized and counted
/// before (or without) allocating it.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamLayout {
    specs: Vec<ParamSpec>,
}

impl ParamLayout {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, shape: &[usize], init: Init) -> ParamId {
        self.specs.push(ParamSpec {
            name: name.into(),
            shape: shape.to_vec(),
            init,
        });
        ParamId(self.specs.len() - 1)
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn numel(&self) -> usize {
        self.specs.iter().map(ParamSpec::numel).sum()
    }

    pub fn numel_with_prefix(&self, prefix: &str) -> usize {
        self.specs
            .iter()
            .filter(|s| s.name.starts_with(prefix))
            .map(ParamSpec::numel)
            .sum()
    }

    /// Allocates and initialises every declared tensor in order.
    pub fn materialize<T: Real, R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ParamSet<T>> {
        let mut set = ParamSet::new();
        for s in &self.specs {
            set.insert(s.name.clone(), s.init.tensor(&s.shape, rng))?;
        }
        Ok(set)
    }

    /// Checks that `set` holds exactly these names and shapes, in order.
    pub fn check<T: Real>(&self, set: &ParamSet<T>) -> Result<()> {
        if set.len() != self.specs.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter tensors, found {}",
                self.specs.len(),
                set.len()
            )));
        }
        for (spec, (_, name, t)) in self.specs.iter().zip(set.iter()) {
            if spec.name != name || spec.shape != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter mismatch: expected {} {:?}, found {name} {:?}",
                    spec.name,
                    spec.shape,
                    t.shape()
                )));
            }
        }
        Ok(())
    }
}

impl<T: Real> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet {
            names: Vec::new(),
            tensors: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        let id = ParamId(self.tensors.len());
        self.by_name.insert(name.clone(), id);
        self.names.push(name);
        self.tensors.push(tensor);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor<T>)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    /// Total number of scalar entries.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Scalar count of every parameter whose name starts with `prefix`.
    pub fn numel_with_prefix(&self, prefix: &str) -> usize {
        self.iter()
            .filter(|(_, n, _)| n.starts_with(prefix))
            .map(|(_, _, t)| t.len())
            .sum()
    }

    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        ParamSet {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            by_name: self.by_name.clone(),
        }
    }
}
