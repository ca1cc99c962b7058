//! Named parameter storage and graph binding.

use rand::Rng;

use crate::autodiff::{Graph, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Clone, Debug)]
struct Entry {
    name: String,
    tensor: Tensor,
    trainable: bool,
}

/// Ordered collection of named tensors. Insertion order is the canonical
/// order for checkpoints and optimiser state.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: Vec<Entry>,
}

/// Graph handles for every parameter of one store, indexed by [`ParamId`].
#[derive(Clone, Debug)]
pub struct Bindings(Vec<Var>);

impl Bindings {
    /// Wrap externally created leaves, one per parameter in store order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Bindings(vars)
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.0[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.0
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor, trainable: bool) -> ParamId {
        let name = name.into();
        debug_assert!(
            self.entries.iter().all(|e| e.name != name),
            "duplicate parameter {name}"
        );
        self.entries.push(Entry {
            name,
            tensor,
            trainable,
        });
        ParamId(self.entries.len() - 1)
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

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].tensor
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.entries[id.0].trainable
    }

    pub fn set_trainable(&mut self, trainable: bool) {
        for e in &mut self.entries {
            e.trainable = trainable;
        }
    }

    pub fn tensors(&self) -> Vec<Tensor> {
        self.entries.iter().map(|e| e.tensor.clone()).collect()
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.numel()).sum()
    }

    /// Register every parameter as a leaf; trainable ones require gradients.
    pub fn bind(&self, g: &mut Graph) -> Bindings {
        Bindings(
            self.entries
                .iter()
                .map(|e| g.leaf(e.tensor.clone(), e.trainable))
                .collect(),
        )
    }

    /// Register every parameter as a constant.
    pub fn bind_frozen(&self, g: &mut Graph) -> Bindings {
        Bindings(
            self.entries
                .iter()
                .map(|e| g.constant(e.tensor.clone()))
                .collect(),
        )
    }

    /// Gradients after `backward`; zeros where the loss did not reach.
    pub fn grads(&self, g: &Graph, b: &Bindings) -> Vec<Tensor> {
        self.entries
            .iter()
            .zip(&b.0)
            .map(|(e, v)| g.grad(*v).cloned().unwrap_or_else(|| Tensor::zeros(e.tensor.shape())))
            .collect()
    }
}

/// He-normal initialised conv weight `[out, in, k, k]`.
pub fn he_conv(out: usize, input: usize, k: usize, rng: &mut impl Rng) -> Tensor {
    let std = (2.0 / (input * k * k) as f64).sqrt();
    Tensor::normal(&[out, input, k, k], std, rng)
}

/// Normal initialised linear map `[out, in]` with variance `1 / in`.
pub fn lecun_linear(out: usize, input: usize, rng: &mut impl Rng) -> Tensor {
    Tensor::normal(&[out, input], (1.0 / input as f64).sqrt(), rng)
}

/// Conv weight and bias registered together.
#[derive(Clone, Copy, Debug)]
pub struct ConvParams {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl ConvParams {
    pub fn he(
        store: &mut ParamStore,
        name: &str,
        out: usize,
        input: usize,
        k: usize,
        trainable: bool,
        rng: &mut impl Rng,
    ) -> Self {
        ConvParams {
            weight: store.add(format!("{name}.weight"), he_conv(out, input, k, rng), trainable),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[out]), trainable),
            stride: 1,
            pad: k / 2,
        }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn apply(&self, g: &mut Graph, b: &Bindings, x: Var) -> crate::Result<Var> {
        g.conv2d(x, b.var(self.weight), Some(b.var(self.bias)), self.stride, self.pad)
    }
}
