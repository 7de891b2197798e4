use crate::autograd::{BufferId, Graph, ParamId, Var};
use crate::error::{Error, Result};
use crate::tensor::ops::{Activation, Conv2dParams};
use crate::tensor::Scalar;

#[derive(Clone, Copy, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub mean: BufferId,
    pub var: BufferId,
}

/// Convolution with optional bias, batch norm and activation, in that order.
#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub bn: Option<BatchNorm>,
    pub activation: Option<Activation>,
    pub params: Conv2dParams,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl Conv {
    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let c = g.shape(x).get(1).copied().unwrap_or(0);
        if c != self.in_channels {
            return Err(Error::shape(format!(
                "expected {} input channels, got {c}",
                self.in_channels
            )));
        }
        let w = g.param(self.weight);
        let b = self.bias.map(|b| g.param(b));
        let mut y = g.conv2d(x, w, b, self.params)?;
        if let Some(bn) = self.bn {
            let (gamma, beta) = (g.param(bn.gamma), g.param(bn.beta));
            y = g.batch_norm(y, gamma, beta, bn.mean, bn.var)?;
        }
        match self.activation {
            Some(kind) => g.activation(y, kind),
            None => Ok(y),
        }
    }
}

#[derive(Clone, Debug)]
pub struct DsConv {
    pub depthwise: Conv,
    pub pointwise: Conv,
}

impl DsConv {
    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let h = self.depthwise.forward(g, x)?;
        self.pointwise.forward(g, h)
    }

    pub fn out_channels(&self) -> usize {
        self.pointwise.out_channels
    }
}

/// Fully connected layer on `[N, C]` rows.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub activation: Activation,
}

impl Linear {
    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        let y = g.linear(x, w, Some(b))?;
        g.activation(y, self.activation)
    }
}
