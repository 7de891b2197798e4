use crate::autograd::{Graph, ParamId, Var};
use crate::error::{Error, Result};
use crate::model::config::CorrNetConfig;
use crate::nn::{Builder, Conv, ConvCfg, DsConv, Linear};
use crate::tensor::ops::{Activation, PoolKind, SoftmaxAxis};
use crate::tensor::Scalar;

/// Channel attention (global max pool, two fully connected layers) followed
/// by spatial attention (channel-wise max, one 3×3 conv), both sigmoid-gated.
#[derive(Clone, Debug)]
pub struct Fem {
    pub channels: usize,
    pub fc1: Linear,
    pub fc2: Linear,
    pub spatial: Conv,
}

impl Fem {
    pub fn build(b: &mut Builder, name: &str, channels: usize, reduction: usize) -> Result<Self> {
        if reduction == 0 || !channels.is_multiple_of(reduction) {
            return Err(Error::Config(format!(
                "{name}: reduction {reduction} does not divide {channels} channels"
            )));
        }
        let hidden = channels / reduction;
        Ok(Fem {
            channels,
            fc1: b.linear(&format!("{name}.fc1"), channels, hidden, Activation::Relu)?,
            fc2: b.linear(
                &format!("{name}.fc2"),
                hidden,
                channels,
                Activation::Sigmoid,
            )?,
            spatial: b.conv(&format!("{name}.spatial"), ConvCfg::new(1, 1, 3).sigmoid())?,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let [n, c, _, _] = g.value(x).dims4()?;
        if c != self.channels {
            return Err(Error::shape(format!(
                "FEM expects {} channels, got {c}",
                self.channels
            )));
        }
        let pooled = g.pool(x, PoolKind::GlobalMaxSpatial)?;
        let v = g.reshape(pooled, &[n, c])?;
        let h = self.fc1.forward(g, v)?;
        let a = self.fc2.forward(g, h)?;
        let ca = g.reshape(a, &[n, c, 1, 1])?;
        let x1 = g.mul(x, ca)?;
        let m = g.pool(x1, PoolKind::MaxOverChannels)?;
        let sa = self.spatial.forward(g, m)?;
        g.mul(x1, sa)
    }
}

/// Sigmoid response map from a 1×1 conv, used to filter correlation features.
#[derive(Clone, Debug)]
pub struct Gate {
    pub gate: Conv,
    pub polish: DsConv,
}

#[derive(Clone, Debug)]
pub struct CorrM {
    pub compress4: Conv,
    pub compress5: Conv,
    pub correlation: Option<ParamId>,
    pub gates: Option<[Gate; 2]>,
    /// Separate polishing DSConvs for the gate-free variant.
    pub polish: Option<[DsConv; 2]>,
    pub fuse: DsConv,
    pub head: Conv,
}

/// Intermediate tensors of the correlation module, exposed for inspection.
#[derive(Clone, Copy, Debug)]
pub struct CorrMOutputs {
    pub f4_dse: Var,
    pub f5_dse: Var,
    pub f4_corr: Var,
    pub f5_corr: Var,
    pub s4: Var,
}

/// `r = f5ᵀ·W·f4` over flattened positions, then each stream aggregated with
/// column-normalized weights: `f4·softmax_cols(r)` and `f5·softmax_cols(rᵀ)`.
pub fn cross_layer_correlation<T: Scalar>(
    g: &mut Graph<'_, T>,
    f4: Var,
    f5: Var,
    wc: Var,
) -> Result<(Var, Var)> {
    let s4 = g.value(f4).dims4()?;
    let s5 = g.value(f5).dims4()?;
    if s4 != s5 {
        return Err(Error::shape(format!(
            "correlation inputs differ: {s4:?} vs {s5:?}"
        )));
    }
    let [n, c, h, w] = s4;
    if g.shape(wc) != [c, c] {
        return Err(Error::shape(format!(
            "correlation weight must be [{c}, {c}], got {:?}",
            g.shape(wc)
        )));
    }
    let f4m = g.reshape(f4, &[n, c, h * w])?;
    let f5m = g.reshape(f5, &[n, c, h * w])?;
    let wf4 = g.matmul(wc, f4m)?;
    let f5t = g.transpose(f5m)?;
    let r = g.matmul(f5t, wf4)?;
    let a4 = g.softmax(r, SoftmaxAxis::Cols)?;
    let rt = g.transpose(r)?;
    let a5 = g.softmax(rt, SoftmaxAxis::Cols)?;
    let c4 = g.matmul(f4m, a4)?;
    let c5 = g.matmul(f5m, a5)?;
    Ok((g.reshape(c4, &[n, c, h, w])?, g.reshape(c5, &[n, c, h, w])?))
}

impl CorrM {
    pub fn build(b: &mut Builder, cfg: &CorrNetConfig) -> Result<Self> {
        let c = cfg.compressed_channels;
        b.set_block("CorrM");
        b.set_stride(16);
        let compress5 = b.conv(
            "decoder.corrm.compress5",
            ConvCfg::new(512, c, 1).bn().relu(),
        )?;
        b.set_stride(8);
        let compress4 = b.conv(
            "decoder.corrm.compress4",
            ConvCfg::new(512, c, 1).bn().relu(),
        )?;
        let correlation = if cfg.enable_correlation {
            Some(b.correlation("decoder.corrm.correlation", c)?)
        } else {
            None
        };
        let (gates, polish) = if !cfg.enable_corrm {
            (None, None)
        } else if cfg.enable_gate {
            let mut mk = |s: usize| -> Result<Gate> {
                Ok(Gate {
                    gate: b.conv(
                        &format!("decoder.corrm.gate{s}"),
                        ConvCfg::new(c, 1, 1).sigmoid(),
                    )?,
                    polish: b.ds_conv(&format!("decoder.corrm.polish{s}"), c, c, 1)?,
                })
            };
            (Some([mk(4)?, mk(5)?]), None)
        } else {
            let p4 = b.ds_conv("decoder.corrm.polish4", c, c, 1)?;
            let p5 = b.ds_conv("decoder.corrm.polish5", c, c, 1)?;
            (None, Some([p4, p5]))
        };
        let fuse = b.ds_conv("decoder.corrm.fuse", 2 * c, c, 1)?;
        let head = b.conv("decoder.corrm.head", ConvCfg::new(c, 1, 1).sigmoid())?;
        Ok(CorrM {
            compress4,
            compress5,
            correlation,
            gates,
            polish,
            fuse,
            head,
        })
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        f4: Var,
        f5: Var,
    ) -> Result<CorrMOutputs> {
        let f4_dse = self.compress4.forward(g, f4)?;
        let f5_small = self.compress5.forward(g, f5)?;
        let [_, _, h4, w4] = g.value(f4_dse).dims4()?;
        let f5_dse = g.resize(f5_small, h4, w4)?;

        let (f4_corr, f5_corr) = match self.correlation {
            Some(wc) => {
                let wc = g.param(wc);
                cross_layer_correlation(g, f4_dse, f5_dse, wc)?
            }
            None => (f4_dse, f5_dse),
        };

        let (g4, g5) = match (&self.gates, &self.polish) {
            (Some([ga, gb]), _) => (
                self.polish_gate(g, ga, f4_corr, f4_dse)?,
                self.polish_gate(g, gb, f5_corr, f5_dse)?,
            ),
            (None, Some([pa, pb])) => {
                let s4 = g.add(f4_corr, f4_dse)?;
                let s5 = g.add(f5_corr, f5_dse)?;
                (pa.forward(g, s4)?, pb.forward(g, s5)?)
            }
            // Concatenation-convolution replacement of the whole module.
            (None, None) => (f4_dse, f5_dse),
        };
        let cat = g.concat(g4, g5)?;
        let fused = self.fuse.forward(g, cat)?;
        let s4 = self.head.forward(g, fused)?;
        Ok(CorrMOutputs {
            f4_dse,
            f5_dse,
            f4_corr,
            f5_corr,
            s4,
        })
    }

    fn polish_gate<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        gate: &Gate,
        f_corr: Var,
        f_dse: Var,
    ) -> Result<Var> {
        let m = gate.gate.forward(g, f_corr)?;
        let gated = g.mul(m, f_corr)?;
        let s = g.add(gated, f_dse)?;
        gate.polish.forward(g, s)
    }
}

/// `Up(S4) ⊗ f3 ⊕ f3`.
pub fn modulate<T: Scalar>(g: &mut Graph<'_, T>, s4: Var, f3: Var) -> Result<Var> {
    let [_, _, h, w] = g.value(f3).dims4()?;
    let [_, c, sh, sw] = g.value(s4).dims4()?;
    if c != 1 || h != 2 * sh || w != 2 * sw {
        return Err(Error::shape(format!(
            "cannot modulate {h}x{w} features with a {c}-channel {sh}x{sw} map"
        )));
    }
    let up = g.upsample(s4, 2)?;
    let m = g.mul(up, f3)?;
    g.add(m, f3)
}

/// Three dilated DSConvs with dense additive skips, each merged by a 1×1
/// conv; without merges it degenerates to a plain cascade.
#[derive(Clone, Debug)]
pub struct Dlrb {
    pub stages: [DsConv; 3],
    pub merges: Option<[Conv; 3]>,
}

impl Dlrb {
    pub fn build(
        b: &mut Builder,
        name: &str,
        channels: usize,
        rates: [usize; 3],
        dense: bool,
    ) -> Result<Self> {
        let mut ds = Vec::with_capacity(3);
        let mut merges = Vec::with_capacity(3);
        for (i, &r) in rates.iter().enumerate() {
            ds.push(b.ds_conv(&format!("{name}.ds{}", i + 1), channels, channels, r)?);
            if dense {
                merges.push(b.conv(
                    &format!("{name}.merge{}", i + 1),
                    ConvCfg::new(channels, channels, 1),
                )?);
            }
        }
        let stages: [DsConv; 3] = ds.try_into().expect("three stages");
        let merges = if dense {
            Some(merges.try_into().expect("three merges"))
        } else {
            None
        };
        Ok(Dlrb { stages, merges })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        self.forward_with(g, x, true)
    }

    /// With `skips = false` each stage sees only the previous output.
    pub fn forward_with<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        x: Var,
        skips: bool,
    ) -> Result<Var> {
        let Some(merges) = &self.merges else {
            let mut h = x;
            for s in &self.stages {
                h = s.forward(g, h)?;
            }
            return Ok(h);
        };
        let mut prev: Vec<Var> = vec![x];
        let mut h = x;
        for (stage, merge) in self.stages.iter().zip(merges) {
            let mut acc = stage.forward(g, h)?;
            if skips {
                for &p in prev.iter().rev() {
                    acc = g.add(acc, p)?;
                }
            }
            h = merge.forward(g, acc)?;
            prev.push(h);
        }
        Ok(h)
    }
}

/// Joins a refined deep feature with the next shallower skip feature:
/// concat with the ×2-upsampled feature, 1×1 reduction, then a DSConv.
#[derive(Clone, Debug)]
pub struct Fusion {
    pub reduce: Conv,
    pub refine: DsConv,
}

impl Fusion {
    pub fn build(b: &mut Builder, name: &str, skip_c: usize, deep_c: usize) -> Result<Self> {
        Ok(Fusion {
            reduce: b.conv(
                &format!("{name}.reduce"),
                ConvCfg::new(skip_c + deep_c, skip_c, 1).bn().relu(),
            )?,
            refine: b.ds_conv(&format!("{name}.refine"), skip_c, skip_c, 1)?,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, skip: Var, deep: Var) -> Result<Var> {
        let up = g.upsample(deep, 2)?;
        let cat = g.concat(skip, up)?;
        let r = self.reduce.forward(g, cat)?;
        self.refine.forward(g, r)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SaliencyOutputs {
    /// Finest map, input resolution.
    pub s1: Var,
    pub s2: Var,
    pub s3: Var,
    /// Coarse map at 1/8 resolution.
    pub s4: Var,
}

impl SaliencyOutputs {
    /// Finest first.
    pub fn maps(&self) -> [Var; 4] {
        [self.s1, self.s2, self.s3, self.s4]
    }
}

#[derive(Clone, Debug)]
pub struct Decoder {
    pub fem: Option<[Fem; 2]>,
    pub corrm: CorrM,
    pub dlrb: [Dlrb; 3],
    pub fusion: [Fusion; 2],
    pub heads: [Conv; 3],
}

impl Decoder {
    pub fn build(b: &mut Builder, cfg: &CorrNetConfig) -> Result<Self> {
        let fem = if cfg.enable_fem {
            b.set_block("FEM");
            b.set_stride(1);
            let f1 = Fem::build(b, "decoder.fem1", 64, cfg.fem_reduction)?;
            b.set_stride(2);
            let f2 = Fem::build(b, "decoder.fem2", 128, cfg.fem_reduction)?;
            Some([f1, f2])
        } else {
            None
        };
        let corrm = CorrM::build(b, cfg)?;

        let rates = cfg.dilation_rates;
        let dense = cfg.enable_dlrb;
        b.set_block("Refine");
        b.set_stride(4);
        let d3 = Dlrb::build(b, "decoder.dlrb3", 256, rates, dense)?;
        let h3 = b.conv("decoder.head3", ConvCfg::new(256, 1, 1).sigmoid())?;
        b.set_stride(2);
        let u2 = Fusion::build(b, "decoder.fuse2", 128, 256)?;
        let d2 = Dlrb::build(b, "decoder.dlrb2", 128, rates, dense)?;
        let h2 = b.conv("decoder.head2", ConvCfg::new(128, 1, 1).sigmoid())?;
        b.set_stride(1);
        let u1 = Fusion::build(b, "decoder.fuse1", 64, 128)?;
        let d1 = Dlrb::build(b, "decoder.dlrb1", 64, rates, dense)?;
        let h1 = b.conv("decoder.head1", ConvCfg::new(64, 1, 1).sigmoid())?;
        Ok(Decoder {
            fem,
            corrm,
            dlrb: [d1, d2, d3],
            fusion: [u1, u2],
            heads: [h1, h2, h3],
        })
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        taps: [Var; 5],
    ) -> Result<SaliencyOutputs> {
        let [f1, f2, f3, f4, f5] = taps;
        let (f1, f2) = match &self.fem {
            Some([a, b]) => (a.forward(g, f1)?, b.forward(g, f2)?),
            None => (f1, f2),
        };
        let s4 = self.corrm.forward(g, f4, f5)?.s4;
        let f3 = modulate(g, s4, f3)?;

        let [d1b, d2b, d3b] = &self.dlrb;
        let [h1, h2, h3] = &self.heads;
        let [u1, u2] = &self.fusion;
        let d3 = d3b.forward(g, f3)?;
        let s3 = h3.forward(g, d3)?;
        let t2 = u2.forward(g, f2, d3)?;
        let d2 = d2b.forward(g, t2)?;
        let s2 = h2.forward(g, d2)?;
        let t1 = u1.forward(g, f1, d2)?;
        let d1 = d1b.forward(g, t1)?;
        let s1 = h1.forward(g, d1)?;
        Ok(SaliencyOutputs { s1, s2, s3, s4 })
    }
}
