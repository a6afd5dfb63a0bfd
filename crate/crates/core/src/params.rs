//! Flat parameter storage shared by every layer of a model.
//!
//! Layers refer to their tensors by [`ParamId`]. Two task paths that share
//! a layer simply hold the same ids, so gradients from both paths land in
//! the same slot of [`Grads`].

use ndarray::{ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    /// Buffers (batch-norm running statistics) are stored alongside the
    /// weights but never touched by the optimizer.
    pub trainable: bool,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, shape: &[usize], data: Vec<f64>) -> ParamId {
        self.push(name.into(), shape, data, true)
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, shape: &[usize], data: Vec<f64>) -> ParamId {
        self.push(name.into(), shape, data, false)
    }

    fn push(&mut self, name: String, shape: &[usize], data: Vec<f64>, trainable: bool) -> ParamId {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "parameter `{name}` data does not match its shape"
        );
        self.params.push(Param {
            name,
            shape: shape.to_vec(),
            trainable,
            data,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn data(&self, id: ParamId) -> &[f64] {
        &self.params[id.0].data
    }

    pub fn data_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.params[id.0].data
    }

    pub(crate) fn data_vec_mut(&mut self, id: ParamId) -> &mut Vec<f64> {
        &mut self.params[id.0].data
    }

    pub fn vector(&self, id: ParamId) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.params[id.0].data[..])
    }

    pub fn matrix(&self, id: ParamId) -> ArrayView2<'_, f64> {
        let p = &self.params[id.0];
        let (rows, cols) = matrix_dims(&p.shape);
        ArrayView2::from_shape((rows, cols), &p.data[..]).expect("contiguous parameter")
    }

    /// Total number of trainable scalars.
    pub fn num_trainable(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.data.len())
            .sum()
    }

    pub fn zero_grads(&self) -> Grads {
        Grads {
            slots: self.params.iter().map(|p| vec![0.0; p.data.len()]).collect(),
            shapes: self.params.iter().map(|p| p.shape.clone()).collect(),
        }
    }

    /// True when both stores hold the same tensors in the same layout.
    pub fn same_layout(&self, other: &ParamStore) -> bool {
        self.params.len() == other.params.len()
            && self
                .params
                .iter()
                .zip(&other.params)
                .all(|(a, b)| a.name == b.name && a.shape == b.shape)
    }
}

/// Collapse all trailing axes into the column dimension.
fn matrix_dims(shape: &[usize]) -> (usize, usize) {
    match shape {
        [] => (1, 1),
        [n] => (1, *n),
        [r, rest @ ..] => (*r, rest.iter().product()),
    }
}

/// Gradient accumulator with one slot per parameter.
#[derive(Debug, Clone)]
pub struct Grads {
    slots: Vec<Vec<f64>>,
    shapes: Vec<Vec<usize>>,
}

impl Grads {
    pub fn slot(&self, id: ParamId) -> &[f64] {
        &self.slots[id.0]
    }

    pub fn slot_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.slots[id.0]
    }

    pub fn vector_mut(&mut self, id: ParamId) -> ArrayViewMut1<'_, f64> {
        ArrayViewMut1::from(&mut self.slots[id.0][..])
    }

    pub fn matrix_mut(&mut self, id: ParamId) -> ArrayViewMut2<'_, f64> {
        let (rows, cols) = matrix_dims(&self.shapes[id.0]);
        ArrayViewMut2::from_shape((rows, cols), &mut self.slots[id.0][..]).expect("contiguous gradient")
    }

    pub fn max_abs(&self, id: ParamId) -> f64 {
        self.slots[id.0].iter().fold(0.0, |m, g| m.max(g.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.slots.iter().flatten().all(|g| g.is_finite())
    }
}
