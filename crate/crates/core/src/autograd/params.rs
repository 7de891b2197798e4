use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

/// Handle to a non-learned state tensor (batch-norm running statistics).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BufferId(pub(crate) usize);

#[derive(Clone, Debug)]
pub struct Parameter<T: Scalar> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

#[derive(Clone, Debug)]
pub struct Buffer<T: Scalar> {
    pub name: String,
    pub value: Tensor<T>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Slot {
    Param(ParamId),
    Buffer(BufferId),
}

/// Owns every learnable tensor (with its gradient accumulator) and every
/// buffer of a model, addressed by unique dotted names.
#[derive(Clone, Debug)]
pub struct ParamStore<T: Scalar = f32> {
    params: Vec<Parameter<T>>,
    buffers: Vec<Buffer<T>>,
    names: HashMap<String, Slot>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            params: Vec::new(),
            buffers: Vec::new(),
            names: HashMap::new(),
        }
    }

    fn claim(&mut self, name: &str, slot: Slot) -> Result<()> {
        if self.names.contains_key(name) {
            return Err(Error::InvalidArgument(format!(
                "duplicate tensor name `{name}`"
            )));
        }
        self.names.insert(name.to_string(), slot);
        Ok(())
    }

    pub fn add_param(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        let id = ParamId(self.params.len());
        self.claim(&name, Slot::Param(id))?;
        let grad = Tensor::zeros(value.shape());
        self.params.push(Parameter { name, value, grad });
        Ok(id)
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<BufferId> {
        let name = name.into();
        let id = BufferId(self.buffers.len());
        self.claim(&name, Slot::Buffer(id))?;
        self.buffers.push(Buffer { name, value });
        Ok(id)
    }

    pub fn param(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn param_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn buffer(&self, id: BufferId) -> &Buffer<T> {
        &self.buffers[id.0]
    }

    pub fn buffer_mut(&mut self, id: BufferId) -> &mut Buffer<T> {
        &mut self.buffers[id.0]
    }

    pub fn params(&self) -> &[Parameter<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter<T>] {
        &mut self.params
    }

    pub fn buffers(&self) -> &[Buffer<T>] {
        &self.buffers
    }

    pub fn param_ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn find_param(&self, name: &str) -> Option<ParamId> {
        match self.names.get(name) {
            Some(Slot::Param(id)) => Some(*id),
            _ => None,
        }
    }

    pub fn find_buffer(&self, name: &str) -> Option<BufferId> {
        match self.names.get(name) {
            Some(Slot::Buffer(id)) => Some(*id),
            _ => None,
        }
    }

    /// Total number of learnable scalars.
    pub fn num_param_elements(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(T::zero());
        }
    }

    pub fn accumulate(&mut self, grads: &Gradients<T>) {
        for (i, g) in grads.by_param.iter().enumerate() {
            if let Some(g) = g {
                let acc = self.params[i].grad.data_mut();
                for (a, &v) in acc.iter_mut().zip(g.data()) {
                    *a = *a + v;
                }
            }
        }
    }

    pub fn apply_buffer_updates(&mut self, updates: Vec<(BufferId, Tensor<T>)>) {
        for (id, v) in updates {
            self.buffers[id.0].value = v;
        }
    }

    /// Same names and layout, converted element type.
    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Parameter {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    grad: p.grad.cast(),
                })
                .collect(),
            buffers: self
                .buffers
                .iter()
                .map(|b| Buffer {
                    name: b.name.clone(),
                    value: b.value.cast(),
                })
                .collect(),
            names: self.names.clone(),
        }
    }

    /// Every parameter and buffer value, in registration order.
    pub fn named_tensors(&self) -> Vec<(&str, &Tensor<T>)> {
        self.params
            .iter()
            .map(|p| (p.name.as_str(), &p.value))
            .chain(self.buffers.iter().map(|b| (b.name.as_str(), &b.value)))
            .collect()
    }

    /// Overwrites the tensor called `name`; its shape must already match.
    pub fn assign(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let target = match self.names.get(name) {
            Some(Slot::Param(id)) => &mut self.params[id.0].value,
            Some(Slot::Buffer(id)) => &mut self.buffers[id.0].value,
            None => return Err(Error::MissingTensor(name.to_string())),
        };
        if target.shape() != value.shape() {
            return Err(Error::ShapeConflict {
                name: name.to_string(),
                expected: target.shape().to_vec(),
                found: value.shape().to_vec(),
            });
        }
        *target = value;
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.names.contains_key(name)
    }
}

/// Gradients produced by one backward pass, indexed by parameter.
#[derive(Clone, Debug)]
pub struct Gradients<T: Scalar> {
    pub(crate) by_param: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub(crate) fn new(n: usize) -> Self {
        Gradients {
            by_param: vec![None; n],
        }
    }

    pub(crate) fn add(&mut self, id: ParamId, g: Tensor<T>) {
        match &mut self.by_param[id.0] {
            Some(acc) => {
                for (a, &v) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a = *a + v;
                }
            }
            slot @ None => *slot = Some(g),
        }
    }

    /// Gradient for `id`, or `None` if the parameter was unreachable from the loss.
    pub fn get(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.by_param.get(id.0).and_then(|g| g.as_ref())
    }
}
