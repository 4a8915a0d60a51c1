use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{AutodiffError, Tensor};

/// Handle to one entry of a [`ModelParams`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    #[serde(skip)]
    grad: Option<Tensor>,
}

impl Param {
    /// Accumulated gradient; zeros before any backward pass.
    pub fn grad(&self) -> Tensor {
        self.grad
            .clone()
            .unwrap_or_else(|| Tensor::zeros(self.value.rows(), self.value.cols()))
    }
}

/// Named parameter set `θ` with gradient accumulators.
///
/// The set of names and shapes is fixed once the owning layer stack has
/// been built; [`ModelParams::load_values`] only swaps values.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    params: Vec<Param>,
    #[serde(skip)]
    index: BTreeMap<String, usize>,
}

impl ModelParams {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId, AutodiffError> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(AutodiffError::DuplicateParam(name));
        }
        if !value.is_finite() {
            return Err(AutodiffError::NonFinite(name));
        }
        let id = self.params.len();
        self.index.insert(name.clone(), id);
        self.params.push(Param {
            name,
            value,
            grad: None,
        });
        Ok(ParamId(id))
    }

    /// Uniform in `±√(6 / (rows + cols))`.
    pub fn add_xavier<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        rng: &mut R,
    ) -> Result<ParamId, AutodiffError> {
        let bound = libm::sqrt(6.0 / (rows + cols) as f64);
        let t = Tensor::from_fn(rows, cols, |_, _| rng.random_range(-bound..=bound));
        self.add(name, t)
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> Result<ParamId, AutodiffError> {
        self.add(name, Tensor::zeros(rows, cols))
    }

    pub fn add_filled(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        v: f64,
    ) -> Result<ParamId, AutodiffError> {
        self.add(name, Tensor::filled(rows, cols, v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalars.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    pub(crate) fn accumulate(&mut self, id: ParamId, g: &Tensor) {
        let p = &mut self.params[id.0];
        match &mut p.grad {
            Some(acc) => acc.add_assign(g),
            None => p.grad = Some(g.clone()),
        }
    }

    pub fn grad(&self, id: ParamId) -> Tensor {
        self.params[id.0].grad()
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.value.is_finite())
    }

    /// All values, concatenated in parameter order.
    pub fn flat_values(&self) -> Vec<f64> {
        self.params.iter().flat_map(|p| p.value.data().iter().copied()).collect()
    }

    /// All gradients, concatenated in parameter order.
    pub fn flat_grads(&self) -> Vec<f64> {
        self.params.iter().flat_map(|p| p.grad().into_data()).collect()
    }

    /// Sets the scalar at `flat` position of [`ModelParams::flat_values`].
    pub fn set_flat(&mut self, flat: usize, v: f64) {
        let mut k = flat;
        for p in &mut self.params {
            if k < p.value.len() {
                p.value.data_mut()[k] = v;
                return;
            }
            k -= p.value.len();
        }
        panic!("flat index {flat} out of range");
    }

    /// Replaces every value from another set with identical names and
    /// shapes, e.g. one read back from a checkpoint.
    pub fn load_values(&mut self, other: &ModelParams) -> Result<(), AutodiffError> {
        if other.params.len() != self.params.len() {
            return Err(AutodiffError::ParamSetMismatch {
                expected: self.params.len(),
                found: other.params.len(),
            });
        }
        for (mine, theirs) in self.params.iter().zip(&other.params) {
            if mine.name != theirs.name {
                return Err(AutodiffError::UnknownParam(theirs.name.clone()));
            }
            if mine.value.shape() != theirs.value.shape() {
                return Err(AutodiffError::Shape {
                    op: "load",
                    left: mine.value.shape(),
                    right: theirs.value.shape(),
                });
            }
            if !theirs.value.is_finite() {
                return Err(AutodiffError::NonFinite(theirs.name.clone()));
            }
        }
        for (mine, theirs) in self.params.iter_mut().zip(&other.params) {
            mine.value = theirs.value.clone();
            mine.grad = None;
        }
        Ok(())
    }

    /// Rebuilds the name index after deserialization.
    pub fn reindex(&mut self) -> Result<(), AutodiffError> {
        self.index.clear();
        for (i, p) in self.params.iter().enumerate() {
            if self.index.insert(p.name.clone(), i).is_some() {
                return Err(AutodiffError::DuplicateParam(p.name.clone()));
            }
        }
        Ok(())
    }
}
