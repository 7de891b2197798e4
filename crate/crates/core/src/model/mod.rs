//! CorrNet: backbone, decoder and the assembled model.

pub mod backbone;
pub mod config;
pub mod decoder;

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autograd::{Graph, ParamId, ParamStore, Var};
use crate::data::checkpoint::load_checkpoint;
use crate::error::{Error, Result};
use crate::nn::{Builder, Init, LayerSpec};
use crate::tensor::ops::NormMode;
use crate::tensor::{Scalar, Tensor};

pub use backbone::{count_backbone_params, Backbone, BackboneKind};
pub use config::CorrNetConfig;
pub use decoder::{Decoder, SaliencyOutputs};

pub const INIT_STD: f64 = 0.01;

/// Where initial weights come from.
#[derive(Clone, Debug)]
pub enum InitSource<'a> {
    Normal,
    /// Checkpoint whose tensors override matching names after normal init.
    Pretrained(&'a Path),
}

/// Names taken from a pre-trained file versus ignored ones.
#[derive(Clone, Debug, Default)]
pub struct LoadSummary {
    pub loaded: Vec<String>,
    pub ignored: Vec<String>,
}

pub struct CorrNet {
    pub config: CorrNetConfig,
    pub backbone: Backbone,
    pub decoder: Decoder,
    pub store: ParamStore<f32>,
    layers: Vec<LayerSpec>,
    inits: Vec<(ParamId, Init)>,
}

/// The four predicted maps as plain tensors, finest first.
#[derive(Clone, Debug)]
pub struct Prediction {
    pub maps: [Tensor<f32>; 4],
}

impl CorrNet {
    /// Allocates every layer with zeroed parameters; call
    /// [`CorrNet::init_weights`] before use.
    pub fn build(config: &CorrNetConfig) -> Result<Self> {
        config.validate()?;
        let mut b = Builder::new();
        let backbone = Backbone::build(&mut b, config.backbone)?;
        let decoder = Decoder::build(&mut b, config)?;
        let (store, layers, inits) = b.finish();
        Ok(CorrNet {
            config: config.clone(),
            backbone,
            decoder,
            store,
            layers,
            inits,
        })
    }

    pub fn new(config: &CorrNetConfig, seed: u64) -> Result<Self> {
        let mut m = Self::build(config)?;
        m.init_weights(InitSource::Normal, seed)?;
        Ok(m)
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn num_params(&self) -> usize {
        self.store.num_param_elements()
    }

    /// Weights ~ Normal(0, 0.01), biases and shifts 0, scales 1, the
    /// correlation weight identity plus Normal(0, 0.01) noise; running
    /// statistics reset to mean 0, variance 1.
    pub fn init_weights(&mut self, source: InitSource<'_>, seed: u64) -> Result<LoadSummary> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0f64, INIT_STD).expect("valid std");
        for &(id, init) in &self.inits {
            let p = self.store.param_mut(id);
            let shape = p.value.shape().to_vec();
            let data = p.value.data_mut();
            match init {
                Init::Normal => data
                    .iter_mut()
                    .for_each(|v| *v = normal.sample(&mut rng) as f32),
                Init::Zeros => data.fill(0.0),
                Init::Ones => data.fill(1.0),
                Init::IdentityPlusNoise => {
                    let c = shape[0];
                    for (i, v) in data.iter_mut().enumerate() {
                        let eye = if i / c == i % c { 1.0 } else { 0.0 };
                        *v = (eye + normal.sample(&mut rng)) as f32;
                    }
                }
            }
            p.grad.data_mut().fill(0.0);
        }
        let buffer_names: Vec<String> = self
            .store
            .buffers()
            .iter()
            .map(|b| b.name.clone())
            .collect();
        for name in buffer_names {
            let id = self.store.find_buffer(&name).expect("registered buffer");
            let fill = if name.ends_with("running_var") {
                1.0
            } else {
                0.0
            };
            self.store.buffer_mut(id).value.data_mut().fill(fill);
        }
        match source {
            InitSource::Normal => Ok(LoadSummary::default()),
            InitSource::Pretrained(path) => {
                let tensors = load_checkpoint(path)?;
                let mut summary = LoadSummary::default();
                for (name, t) in tensors {
                    if self.store.contains(&name) {
                        self.store.assign(&name, t)?;
                        summary.loaded.push(name);
                    } else {
                        summary.ignored.push(name);
                    }
                }
                Ok(summary)
            }
        }
    }

    /// Every parameter and buffer by name.
    pub fn named_tensors(&self) -> BTreeMap<String, Tensor<f32>> {
        self.store
            .named_tensors()
            .into_iter()
            .map(|(n, t)| (n.to_string(), t.clone()))
            .collect()
    }

    /// Replaces all weights; the set of names and every shape must match exactly.
    pub fn load_tensors(&mut self, tensors: BTreeMap<String, Tensor<f32>>) -> Result<()> {
        for (name, _) in self.store.named_tensors() {
            if !tensors.contains_key(name) {
                return Err(Error::MissingTensor(name.to_string()));
            }
        }
        for (name, t) in tensors {
            if !self.store.contains(&name) {
                return Err(Error::CheckpointFormat(format!(
                    "checkpoint tensor `{name}` does not belong to this model variant"
                )));
            }
            self.store.assign(&name, t)?;
        }
        Ok(())
    }

    /// Records a forward pass on `g`; the graph may be built on this model's
    /// store or on a cast copy of it.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<SaliencyOutputs> {
        let taps = self.backbone.forward(g, x)?;
        self.decoder.forward(g, taps)
    }

    /// Inference with running statistics on an `N×3×H×W` batch.
    pub fn predict(&self, images: &Tensor<f32>) -> Result<Prediction> {
        let mut g = Graph::new(&self.store, NormMode::Eval);
        let x = g.input(images.clone());
        let out = self.forward(&mut g, x)?;
        let maps = out.maps().map(|v| g.value(v).clone());
        Ok(Prediction { maps })
    }
}
