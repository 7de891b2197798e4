use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::{Builder, Conv, ConvCfg, DsConv};
use crate::tensor::ops::PoolKind;
use crate::tensor::Scalar;

pub const BLOCK_CHANNELS: [usize; 5] = [64, 128, 256, 512, 512];
pub const CONVS_PER_BLOCK: [usize; 5] = [2, 2, 3, 3, 3];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackboneKind {
    /// Regular convolutions in blocks 1–3, depthwise-separable in blocks 4–5.
    #[default]
    Lfe,
    /// VGG-16 with regular convolutions throughout.
    Vanilla,
    /// VGG-16 with depthwise-separable convolutions throughout.
    #[serde(rename = "ds")]
    DsAll,
}

impl BackboneKind {
    pub fn block_is_separable(self, t: usize) -> bool {
        match self {
            BackboneKind::Lfe => t >= 4,
            BackboneKind::Vanilla => false,
            BackboneKind::DsAll => true,
        }
    }

    /// Display label of block `t` (1-based), e.g. `E2` or `DS-E4`.
    pub fn block_label(self, t: usize) -> String {
        if self.block_is_separable(t) {
            format!("DS-E{t}")
        } else {
            format!("E{t}")
        }
    }
}

impl std::str::FromStr for BackboneKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lfe" => Ok(BackboneKind::Lfe),
            "vanilla" => Ok(BackboneKind::Vanilla),
            "ds" => Ok(BackboneKind::DsAll),
            _ => Err(Error::Config(format!(
                "unknown backbone `{s}` (expected lfe, vanilla or ds)"
            ))),
        }
    }
}

#[derive(Clone, Debug)]
pub enum BlockLayer {
    Regular(Conv),
    Separable(DsConv),
}

#[derive(Clone, Debug)]
pub struct BackboneBlock {
    pub index: usize,
    pub label: String,
    pub layers: Vec<BlockLayer>,
    pub pool_after: bool,
}

/// Parameter prefix of convolution `j` in block `t`, both 1-based.
pub fn conv_name(t: usize, j: usize) -> String {
    format!("backbone.e{t}.conv{j}")
}

/// Closed-form parameter count of each block (weights, biases, batch-norm
/// scale and shift), independent of any allocation.
pub fn count_backbone_params(kind: BackboneKind) -> Vec<(String, u64)> {
    let mut cin = 3u64;
    (1..=5)
        .map(|t| {
            let cout = BLOCK_CHANNELS[t - 1] as u64;
            let mut total = 0;
            for _ in 0..CONVS_PER_BLOCK[t - 1] {
                total += if kind.block_is_separable(t) {
                    // depthwise 3×3 + bias, pointwise + bias, batch norm
                    9 * cin + cin + cin * cout + cout + 2 * cout
                } else {
                    9 * cin * cout + cout + 2 * cout
                };
                cin = cout;
            }
            (kind.block_label(t), total)
        })
        .collect()
}

/// Spatial side of each tap for a square input: 1, 1/2, 1/4, 1/8, 1/16.
pub fn tap_strides() -> [usize; 5] {
    [1, 2, 4, 8, 16]
}

pub fn check_input_size(size: usize) -> Result<()> {
    if size == 0 || !size.is_multiple_of(16) {
        return Err(Error::Config(format!(
            "input size {size} is not a positive multiple of 16"
        )));
    }
    Ok(())
}

/// `[C, H, W]` of the five feature taps for a square input.
pub fn tap_shapes(input_size: usize) -> Result<[[usize; 3]; 5]> {
    check_input_size(input_size)?;
    let s = tap_strides();
    Ok(std::array::from_fn(|i| {
        [BLOCK_CHANNELS[i], input_size / s[i], input_size / s[i]]
    }))
}

#[derive(Clone, Debug)]
pub struct Backbone {
    pub kind: BackboneKind,
    pub blocks: Vec<BackboneBlock>,
}

impl Backbone {
    /// Five VGG-16 blocks of 3×3 convolutions (batch norm + ReLU after each),
    /// with 2×2 max pooling after the first four.
    pub fn build(b: &mut Builder, kind: BackboneKind) -> Result<Self> {
        let mut cin = 3;
        let mut blocks = Vec::with_capacity(5);
        for (t, stride) in (1..=5).zip(tap_strides()) {
            let label = kind.block_label(t);
            b.set_block(label.clone());
            b.set_stride(stride);
            let cout = BLOCK_CHANNELS[t - 1];
            let mut layers = Vec::new();
            for j in 1..=CONVS_PER_BLOCK[t - 1] {
                let name = conv_name(t, j);
                layers.push(if kind.block_is_separable(t) {
                    BlockLayer::Separable(b.ds_conv(&name, cin, cout, 1)?)
                } else {
                    BlockLayer::Regular(b.conv(&name, ConvCfg::new(cin, cout, 3).bn().relu())?)
                });
                cin = cout;
            }
            blocks.push(BackboneBlock {
                index: t,
                label,
                layers,
                pool_after: t < 5,
            });
        }
        Ok(Backbone { kind, blocks })
    }

    /// Returns the pre-pooling output of every block (f1..f5).
    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<[Var; 5]> {
        let shape = g.shape(x).to_vec();
        if shape.len() != 4 || shape[1] != 3 {
            return Err(Error::shape(format!(
                "backbone expects N×3×H×W input, got {shape:?}"
            )));
        }
        if !shape[2].is_multiple_of(16) || !shape[3].is_multiple_of(16) {
            return Err(Error::shape(format!(
                "input extents {}x{} must be multiples of 16",
                shape[2], shape[3]
            )));
        }
        let mut taps = [x; 5];
        let mut h = x;
        for (i, block) in self.blocks.iter().enumerate() {
            for layer in &block.layers {
                h = match layer {
                    BlockLayer::Regular(c) => c.forward(g, h)?,
                    BlockLayer::Separable(d) => d.forward(g, h)?,
                };
            }
            taps[i] = h;
            if block.pool_after {
                h = g.pool(h, PoolKind::Max2x2)?;
            }
        }
        Ok(taps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vanilla_first_block_closed_form() {
        let counts = count_backbone_params(BackboneKind::Vanilla);
        // 1,728 + 36,864 weights, 128 biases, 256 batch-norm scalars
        assert_eq!(counts[0], ("E1".to_string(), 38_976));
    }

    #[test]
    fn labels_follow_kind() {
        assert_eq!(BackboneKind::Lfe.block_label(3), "E3");
        assert_eq!(BackboneKind::Lfe.block_label(4), "DS-E4");
        assert_eq!(BackboneKind::DsAll.block_label(1), "DS-E1");
        assert_eq!(BackboneKind::Vanilla.block_label(5), "E5");
    }

    #[test]
    fn tap_geometry() {
        let t = tap_shapes(256).unwrap();
        assert_eq!(t[3], [512, 32, 32]);
        assert_eq!(t[4], [512, 16, 16]);
        assert_eq!(tap_shapes(64).unwrap()[3], [512, 8, 8]);
        assert!(tap_shapes(72).is_err());
    }
}
