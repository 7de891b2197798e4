use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Conv,
    Depthwise,
    Pointwise,
    FullyConnected,
    /// Bilinear cross-layer correlation with a learnable C×C weight.
    Correlation,
}

/// Static description of one learnable layer, recorded by the builder as the
/// layer is allocated. Costs are derived from these records alone.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    pub block: String,
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub dilation: usize,
    pub groups: usize,
    pub bias: bool,
    pub batch_norm: bool,
    /// Downsampling factor of the output map relative to the network input;
    /// `None` for layers acting on pooled vectors.
    pub out_stride: Option<usize>,
}

impl LayerSpec {
    /// Learnable scalars: weights, biases and batch-norm scale/shift.
    pub fn params(&self) -> u64 {
        let (cin, cout) = (self.in_channels as u64, self.out_channels as u64);
        match self.kind {
            LayerKind::Correlation => cin * cout,
            LayerKind::FullyConnected => cin * cout + if self.bias { cout } else { 0 },
            _ => {
                let k2 = (self.kernel * self.kernel) as u64;
                k2 * cin * cout / self.groups as u64
                    + if self.bias { cout } else { 0 }
                    + if self.batch_norm { 2 * cout } else { 0 }
            }
        }
    }

    /// Output extent along one spatial axis for a square input of `input_size`.
    pub fn out_extent(&self, input_size: usize) -> Option<usize> {
        self.out_stride.map(|s| input_size / s)
    }

    pub fn output_shape(&self, input_size: usize) -> Vec<usize> {
        match self.out_extent(input_size) {
            Some(e) => vec![self.out_channels, e, e],
            None => vec![self.out_channels],
        }
    }

    /// Multiply-accumulates for one image of side `input_size`.
    pub fn macs(&self, input_size: usize) -> u64 {
        let (cin, cout) = (self.in_channels as u64, self.out_channels as u64);
        let area = self.out_extent(input_size).map_or(1, |e| (e * e) as u64);
        match self.kind {
            LayerKind::FullyConnected => cin * cout,
            // W·f4 (C×C·HW), f5ᵀ·(W·f4) (HW·C·HW), and the two aggregations
            // f·softmax(r) (C·HW·HW each).
            LayerKind::Correlation => cin * cin * area + 3 * cin * area * area,
            _ => {
                let k2 = (self.kernel * self.kernel) as u64;
                cout * area * k2 * cin / self.groups as u64
            }
        }
    }
}
