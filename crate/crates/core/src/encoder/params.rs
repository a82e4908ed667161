use std::collections::HashMap;

use crate::autodiff::{Array, Gradients, Tape, Var};
use crate::error::{Error, Result};

/// Index of a parameter within a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// Ordered, named parameter arrays.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<Array>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Array) -> ParamId {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter {name}"
        );
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.values.push(value);
        ParamId(self.names.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Array {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array {
        &mut self.values[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Array> {
        self.index.get(name).map(|&i| &self.values[i])
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Array] {
        &self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn total_size(&self) -> usize {
        self.values.iter().map(Array::len).sum()
    }

    /// Replaces every value from `other`, which must have the same names
    /// and shapes in the same order.
    pub fn assign_from(&mut self, other: &ParamSet) -> Result<()> {
        if self.names != other.names {
            return Err(Error::Config("parameter names differ".into()));
        }
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            if a.shape() != b.shape() {
                return Err(Error::Config("parameter shapes differ".into()));
            }
            *a = b.clone();
        }
        Ok(())
    }

    /// Puts every parameter on `tape` as a leaf (trainable) or constant.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundParams {
        let vars = self
            .values
            .iter()
            .map(|v| {
                if trainable {
                    tape.leaf(v.clone())
                } else {
                    tape.constant(v.clone())
                }
            })
            .collect();
        BoundParams { vars }
    }
}

/// Tape variables for a [`ParamSet`], same order.
#[derive(Debug, Clone)]
pub struct BoundParams {
    vars: Vec<Var>,
}

impl BoundParams {
    /// Wraps variables already on a tape, one per parameter in order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self { vars }
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Gradient per parameter, zeros where the loss does not depend on it.
    pub fn gradients(&self, grads: &Gradients, params: &ParamSet) -> Vec<Array> {
        self.vars
            .iter()
            .zip(params.values())
            .map(|(v, p)| {
                grads
                    .get(*v)
                    .cloned()
                    .unwrap_or_else(|| Array::zeros(p.shape()))
            })
            .collect()
    }
}
