use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Optimizer parameter group. The token encoder and everything else train
/// at separate learning rates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamGroup {
    Encoder,
    Other,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub group: ParamGroup,
    pub value: Array2<f64>,
}

/// Flat registry of named trainable matrices.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, group: ParamGroup, value: Array2<f64>) -> ParamId {
        self.entries.push(ParamEntry {
            name: name.into(),
            group,
            value,
        });
        ParamId(self.entries.len() - 1)
    }

    /// Glorot-uniform initialised matrix.
    pub fn add_glorot(
        &mut self,
        name: impl Into<String>,
        group: ParamGroup,
        shape: (usize, usize),
        rng: &mut impl Rng,
    ) -> ParamId {
        let bound = (6.0 / (shape.0 + shape.1) as f64).sqrt();
        let value = Array2::from_shape_simple_fn(shape, || rng.gen_range(-bound..bound));
        self.add(name, group, value)
    }

    pub fn add_normal(
        &mut self,
        name: impl Into<String>,
        group: ParamGroup,
        shape: (usize, usize),
        std: f64,
        rng: &mut impl Rng,
    ) -> ParamId {
        // Irwin-Hall approximation keeps the sampler dependency-free.
        let value = Array2::from_shape_simple_fn(shape, || {
            let s: f64 = (0..12).map(|_| rng.gen::<f64>()).sum();
            (s - 6.0) * std
        });
        self.add(name, group, value)
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, group: ParamGroup, shape: (usize, usize)) -> ParamId {
        self.add(name, group, Array2::zeros(shape))
    }

    pub fn add_ones(&mut self, name: impl Into<String>, group: ParamGroup, shape: (usize, usize)) -> ParamId {
        self.add(name, group, Array2::ones(shape))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn value(&self, id: ParamId) -> &Array2<f64> {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
        &mut self.entries[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn group(&self, id: ParamId) -> ParamGroup {
        self.entries[id.0].group
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    /// Replaces all values from another store with identical names and shapes.
    pub fn load_values(&mut self, other: &ParamStore) -> Result<()> {
        if other.len() != self.len() {
            return Err(Error::State(format!(
                "parameter count mismatch: expected {}, found {}",
                self.len(),
                other.len()
            )));
        }
        for (mine, theirs) in self.entries.iter_mut().zip(&other.entries) {
            if mine.name != theirs.name || mine.value.dim() != theirs.value.dim() {
                return Err(Error::State(format!(
                    "parameter {} does not match stored {} {:?}",
                    mine.name,
                    theirs.name,
                    theirs.value.dim()
                )));
            }
            mine.value.assign(&theirs.value);
        }
        Ok(())
    }
}

/// Per-parameter gradient buffer, `None` for parameters that received no
/// gradient.
#[derive(Clone, Debug)]
pub struct ParamGrads {
    grads: Vec<Option<Array2<f64>>>,
}

impl ParamGrads {
    pub fn empty(n: usize) -> Self {
        Self { grads: vec![None; n] }
    }

    pub fn get(&self, id: ParamId) -> Option<&Array2<f64>> {
        self.grads[id.0].as_ref()
    }

    pub fn set(&mut self, id: ParamId, g: Array2<f64>) {
        match &mut self.grads[id.0] {
            Some(existing) => *existing += &g,
            slot => *slot = Some(g),
        }
    }

    /// Accumulates `other` into `self` in parameter order.
    pub fn accumulate(&mut self, other: &ParamGrads) {
        for (mine, theirs) in self.grads.iter_mut().zip(&other.grads) {
            if let Some(t) = theirs {
                match mine {
                    Some(m) => *m += t,
                    slot => *slot = Some(t.clone()),
                }
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in self.grads.iter_mut().flatten() {
            g.mapv_inplace(|x| x * s);
        }
    }

    /// Euclidean norm of the gradient of one parameter (0 when absent).
    pub fn norm(&self, id: ParamId) -> f64 {
        self.get(id)
            .map(|g| g.iter().map(|x| x * x).sum::<f64>().sqrt())
            .unwrap_or(0.0)
    }

    pub fn global_norm(&self) -> f64 {
        self.grads
            .iter()
            .flatten()
            .map(|g| g.iter().map(|x| x * x).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.grads.iter().flatten().all(|g| g.iter().all(|x| x.is_finite()))
    }
}
