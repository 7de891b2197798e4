use crate::autograd::{ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::nn::layers::{BatchNorm, Conv, DsConv, Linear};
use crate::nn::spec::{LayerKind, LayerSpec};
use crate::tensor::ops::{Activation, Conv2dParams};
use crate::tensor::Tensor;

/// How a parameter is filled by weight initialization.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    /// Normal(0, σ) with the model's init std.
    Normal,
    Zeros,
    Ones,
    /// Identity matrix plus Normal(0, σ) noise.
    IdentityPlusNoise,
}

/// Convolution layer options. Defaults: stride 1, dilation 1, one group,
/// bias on, no batch norm, no activation, "same" padding.
#[derive(Clone, Copy, Debug)]
pub struct ConvCfg {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub dilation: usize,
    pub groups: usize,
    pub bias: bool,
    pub batch_norm: bool,
    pub activation: Option<Activation>,
    pub kind: LayerKind,
}

impl ConvCfg {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        ConvCfg {
            in_channels,
            out_channels,
            kernel,
            dilation: 1,
            groups: 1,
            bias: true,
            batch_norm: false,
            activation: None,
            kind: LayerKind::Conv,
        }
    }

    pub fn dilation(mut self, d: usize) -> Self {
        self.dilation = d;
        self
    }

    pub fn depthwise(mut self) -> Self {
        self.groups = self.in_channels;
        self.kind = LayerKind::Depthwise;
        self
    }

    pub fn pointwise(mut self) -> Self {
        self.kind = LayerKind::Pointwise;
        self
    }

    pub fn bn(mut self) -> Self {
        self.batch_norm = true;
        self
    }

    pub fn relu(mut self) -> Self {
        self.activation = Some(Activation::Relu);
        self
    }

    pub fn sigmoid(mut self) -> Self {
        self.activation = Some(Activation::Sigmoid);
        self
    }
}

/// Allocates parameters into a store while recording one [`LayerSpec`] per
/// layer and the initializer each parameter expects. Parameters start at
/// zero; the model's weight initialization fills them afterwards.
pub struct Builder {
    store: ParamStore<f32>,
    specs: Vec<LayerSpec>,
    inits: Vec<(ParamId, Init)>,
    block: String,
    stride: usize,
}

impl Default for Builder {
    fn default() -> Self {
        Self::new()
    }
}

impl Builder {
    pub fn new() -> Self {
        Builder {
            store: ParamStore::new(),
            specs: Vec::new(),
            inits: Vec::new(),
            block: String::new(),
            stride: 1,
        }
    }

    /// Block label attached to subsequently built layers.
    pub fn set_block(&mut self, block: impl Into<String>) {
        self.block = block.into();
    }

    /// Output stride (relative to the network input) of subsequent layers.
    pub fn set_stride(&mut self, stride: usize) {
        self.stride = stride;
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    fn param(&mut self, name: String, shape: &[usize], init: Init) -> Result<ParamId> {
        let id = self.store.add_param(name, Tensor::zeros(shape))?;
        self.inits.push((id, init));
        Ok(id)
    }

    pub fn conv(&mut self, name: &str, cfg: ConvCfg) -> Result<Conv> {
        let ConvCfg {
            in_channels: cin,
            out_channels: cout,
            kernel: k,
            dilation,
            groups,
            ..
        } = cfg;
        if cin == 0 || cout == 0 || k == 0 || k % 2 == 0 || dilation == 0 {
            return Err(Error::InvalidArgument(format!(
                "{name}: invalid convolution {cin}->{cout} k={k} dilation={dilation}"
            )));
        }
        if groups == 0 || cin % groups != 0 || cout % groups != 0 {
            return Err(Error::InvalidArgument(format!(
                "{name}: {groups} groups do not divide {cin}->{cout}"
            )));
        }
        let weight = self.param(
            format!("{name}.weight"),
            &[cout, cin / groups, k, k],
            Init::Normal,
        )?;
        let bias = if cfg.bias {
            Some(self.param(format!("{name}.bias"), &[cout], Init::Zeros)?)
        } else {
            None
        };
        let bn = if cfg.batch_norm {
            let gamma = self.param(format!("{name}.bn.gamma"), &[cout], Init::Ones)?;
            let beta = self.param(format!("{name}.bn.beta"), &[cout], Init::Zeros)?;
            let mean = self
                .store
                .add_buffer(format!("{name}.bn.running_mean"), Tensor::zeros(&[cout]))?;
            let var = self
                .store
                .add_buffer(format!("{name}.bn.running_var"), Tensor::ones(&[cout]))?;
            Some(BatchNorm {
                gamma,
                beta,
                mean,
                var,
            })
        } else {
            None
        };
        self.specs.push(LayerSpec {
            name: name.to_string(),
            block: self.block.clone(),
            kind: cfg.kind,
            in_channels: cin,
            out_channels: cout,
            kernel: k,
            stride: 1,
            dilation,
            groups,
            bias: cfg.bias,
            batch_norm: cfg.batch_norm,
            out_stride: Some(self.stride),
        });
        Ok(Conv {
            weight,
            bias,
            bn,
            activation: cfg.activation,
            params: Conv2dParams::new(1, dilation * (k - 1) / 2, dilation, groups),
            in_channels: cin,
            out_channels: cout,
        })
    }

    /// Depthwise 3×3 (with bias) followed by pointwise 1×1 with batch norm and ReLU.
    pub fn ds_conv(
        &mut self,
        name: &str,
        cin: usize,
        cout: usize,
        dilation: usize,
    ) -> Result<DsConv> {
        let depthwise = self.conv(
            &format!("{name}.dw"),
            ConvCfg::new(cin, cin, 3).dilation(dilation).depthwise(),
        )?;
        let pointwise = self.conv(
            &format!("{name}.pw"),
            ConvCfg::new(cin, cout, 1).pointwise().bn().relu(),
        )?;
        Ok(DsConv {
            depthwise,
            pointwise,
        })
    }

    pub fn linear(
        &mut self,
        name: &str,
        cin: usize,
        cout: usize,
        activation: Activation,
    ) -> Result<Linear> {
        let weight = self.param(format!("{name}.weight"), &[cout, cin], Init::Normal)?;
        let bias = self.param(format!("{name}.bias"), &[cout], Init::Zeros)?;
        self.specs.push(LayerSpec {
            name: name.to_string(),
            block: self.block.clone(),
            kind: LayerKind::FullyConnected,
            in_channels: cin,
            out_channels: cout,
            kernel: 1,
            stride: 1,
            dilation: 1,
            groups: 1,
            bias: true,
            batch_norm: false,
            out_stride: None,
        });
        Ok(Linear {
            weight,
            bias,
            activation,
        })
    }

    /// The C×C correlation weight.
    pub fn correlation(&mut self, name: &str, channels: usize) -> Result<ParamId> {
        let id = self.param(
            format!("{name}.weight"),
            &[channels, channels],
            Init::IdentityPlusNoise,
        )?;
        self.specs.push(LayerSpec {
            name: name.to_string(),
            block: self.block.clone(),
            kind: LayerKind::Correlation,
            in_channels: channels,
            out_channels: channels,
            kernel: 1,
            stride: 1,
            dilation: 1,
            groups: 1,
            bias: false,
            batch_norm: false,
            out_stride: Some(self.stride),
        });
        Ok(id)
    }

    pub fn finish(self) -> (ParamStore<f32>, Vec<LayerSpec>, Vec<(ParamId, Init)>) {
        (self.store, self.specs, self.inits)
    }
}
