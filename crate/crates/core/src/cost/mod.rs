//! Analytic parameter and multiply-accumulate accounting.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::backbone::check_input_size;
use crate::model::{CorrNet, CorrNetConfig};
use crate::nn::{LayerKind, LayerSpec};

pub const CONVENTION: &str =
    "1 MAC = 1 FLOP; convolution, fully connected and correlation products only";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerCost {
    pub name: String,
    pub block: String,
    pub kind: LayerKind,
    pub params: u64,
    pub macs: u64,
    pub output_shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockCost {
    pub name: String,
    pub params: u64,
    pub macs: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Totals {
    pub params: u64,
    pub macs: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostReport {
    pub convention: String,
    pub input_size: usize,
    pub layers: Vec<LayerCost>,
    pub blocks: Vec<BlockCost>,
    pub totals: Totals,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Text,
    Json,
}

impl CostReport {
    pub fn block(&self, name: &str) -> Option<&BlockCost> {
        self.blocks.iter().find(|b| b.name == name)
    }

    /// Sum over blocks whose name satisfies `pred`.
    pub fn subtotal(&self, pred: impl Fn(&str) -> bool) -> Totals {
        self.blocks
            .iter()
            .filter(|b| pred(&b.name))
            .fold(Totals { params: 0, macs: 0 }, |t, b| Totals {
                params: t.params + b.params,
                macs: t.macs + b.macs,
            })
    }
}

pub fn layer_cost(spec: &LayerSpec, input_size: usize) -> LayerCost {
    LayerCost {
        name: spec.name.clone(),
        block: spec.block.clone(),
        kind: spec.kind,
        params: spec.params(),
        macs: spec.macs(input_size),
        output_shape: spec.output_shape(input_size),
    }
}

/// Per-layer costs in build order, block subtotals in first-appearance order.
pub fn report_from_layers(layers: &[LayerSpec], input_size: usize) -> CostReport {
    let layers: Vec<LayerCost> = layers.iter().map(|l| layer_cost(l, input_size)).collect();
    let mut blocks: Vec<BlockCost> = Vec::new();
    for l in &layers {
        match blocks.iter_mut().find(|b| b.name == l.block) {
            Some(b) => {
                b.params += l.params;
                b.macs += l.macs;
            }
            None => blocks.push(BlockCost {
                name: l.block.clone(),
                params: l.params,
                macs: l.macs,
            }),
        }
    }
    let totals = Totals {
        params: layers.iter().map(|l| l.params).sum(),
        macs: layers.iter().map(|l| l.macs).sum(),
    };
    CostReport {
        convention: CONVENTION.to_string(),
        input_size,
        layers,
        blocks,
        totals,
    }
}

/// Builds the variant (parameters zeroed, no initialization) and walks its layers.
pub fn model_cost(config: &CorrNetConfig, input_size: usize) -> Result<CostReport> {
    check_input_size(input_size)?;
    let model = CorrNet::build(config)?;
    Ok(report_from_layers(model.layers(), input_size))
}

/// Checks every layer's analytic count against the allocated tensors named
/// `<layer>.*`, and that no allocated parameter is left unaccounted.
pub fn verify_against_allocation(model: &CorrNet, report: &CostReport) -> Result<()> {
    let mut allocated: BTreeMap<&str, u64> = BTreeMap::new();
    let mut claimed = vec![false; model.store.params().len()];
    let mut diffs = Vec::new();
    for layer in &report.layers {
        let prefix = format!("{}.", layer.name);
        let mut n = 0u64;
        for (i, p) in model.store.params().iter().enumerate() {
            if p.name.starts_with(&prefix) {
                n += p.value.numel() as u64;
                claimed[i] = true;
            }
        }
        allocated.insert(&layer.name, n);
        if n != layer.params {
            diffs.push(format!(
                "{}: report {} vs allocated {}",
                layer.name, layer.params, n
            ));
        }
    }
    for (i, p) in model.store.params().iter().enumerate() {
        if !claimed[i] {
            diffs.push(format!("{}: allocated but not in report", p.name));
        }
    }
    let sum: u64 = report.layers.iter().map(|l| l.params).sum();
    if sum != report.totals.params {
        diffs.push(format!(
            "totals: report {} vs layer sum {sum}",
            report.totals.params
        ));
    }
    if diffs.is_empty() {
        Ok(())
    } else {
        Err(Error::CostMismatch(diffs.join("\n")))
    }
}

pub fn millions(n: u64) -> String {
    format!("{:.2}", n as f64 / 1e6)
}

pub fn billions(n: u64) -> String {
    format!("{:.2}", n as f64 / 1e9)
}

fn shape_str(s: &[usize]) -> String {
    s.iter()
        .map(|d| d.to_string())
        .collect::<Vec<_>>()
        .join("x")
}

pub fn emit_report(report: &CostReport, format: ReportFormat) -> Result<Vec<u8>> {
    match format {
        ReportFormat::Json => {
            let mut v = serde_json::to_vec_pretty(report)?;
            v.push(b'\n');
            Ok(v)
        }
        ReportFormat::Text => Ok(text_report(report).into_bytes()),
    }
}

fn text_report(r: &CostReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "convention: {}", r.convention);
    let _ = writeln!(s, "input: {0}x{0}", r.input_size);
    let _ = writeln!(s);
    let _ = writeln!(
        s,
        "{:<36} {:<16} {:>10} {:>14}  output",
        "layer", "kind", "params", "MACs"
    );
    for l in &r.layers {
        let kind = serde_json::to_value(l.kind)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default();
        let _ = writeln!(
            s,
            "{:<36} {:<16} {:>10} {:>14}  {}",
            l.name,
            kind,
            l.params,
            l.macs,
            shape_str(&l.output_shape)
        );
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "{:<10} {:>10} {:>10}", "block", "params(M)", "FLOPs(G)");
    for b in &r.blocks {
        let _ = writeln!(
            s,
            "{:<10} {:>10} {:>10}",
            b.name,
            millions(b.params),
            billions(b.macs)
        );
    }
    let _ = writeln!(
        s,
        "{:<10} {:>10} {:>10}",
        "total",
        millions(r.totals.params),
        billions(r.totals.macs)
    );
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn conv(
        cin: usize,
        cout: usize,
        k: usize,
        groups: usize,
        bn: bool,
        stride: usize,
    ) -> LayerSpec {
        LayerSpec {
            name: "l".into(),
            block: "b".into(),
            kind: if groups > 1 {
                LayerKind::Depthwise
            } else {
                LayerKind::Conv
            },
            in_channels: cin,
            out_channels: cout,
            kernel: k,
            stride: 1,
            dilation: 1,
            groups,
            bias: true,
            batch_norm: bn,
            out_stride: Some(stride),
        }
    }

    #[test]
    fn first_vgg_conv() {
        let c = layer_cost(&conv(3, 64, 3, 1, true, 1), 256);
        assert_eq!(c.params, 1_792 + 128);
        assert_eq!(c.macs, 113_246_208);
        assert_eq!(c.output_shape, vec![64, 256, 256]);
    }

    #[test]
    fn pointwise_and_depthwise() {
        assert_eq!(conv(40, 7, 1, 1, false, 1).params(), 40 * 7 + 7);
        assert_eq!(conv(512, 512, 3, 512, false, 16).params(), 4_608 + 512);
    }

    #[test]
    fn macs_scale_with_area() {
        let l = conv(16, 32, 3, 1, true, 4);
        assert_eq!(l.macs(256), 16 * l.macs(64));
        assert_eq!(l.params(), layer_cost(&l, 64).params);
    }
}
