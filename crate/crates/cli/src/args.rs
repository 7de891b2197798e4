use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use corrnet_core::model::{BackboneKind, CorrNetConfig};
use corrnet_core::Result;

#[derive(Debug, Parser)]
#[command(
    name = "corrnet",
    version,
    about = "Lightweight salient object detection toolkit"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parameter and MAC report, per layer and per block.
    Cost(CostArgs),
    /// Writes a freshly initialized checkpoint.
    Init(InitArgs),
    /// Predicts a saliency map for one image.
    Infer(InferArgs),
    /// Scores a directory of predictions against ground-truth masks.
    Eval(EvalArgs),
    /// Trains on generated shapes and reports per-epoch loss and held-out MAE.
    TrainToy(TrainArgs),
    /// Checks analytic gradients against central differences.
    Gradcheck(GradcheckArgs),
}

/// Architecture flags. Precedence: built-in defaults, then `--config`, then
/// the individual flags.
#[derive(Debug, Default, Args)]
pub struct VariantArgs {
    /// JSON file whose keys mirror the model config fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub backbone: Option<BackboneArg>,
    /// Drops the whole correlation module (and its correlation and gate).
    #[arg(long)]
    pub no_corrm: bool,
    #[arg(long)]
    pub no_correlation: bool,
    #[arg(long)]
    pub no_gate: bool,
    #[arg(long)]
    pub no_fem: bool,
    /// Replaces each refinement block by a plain cascade of three DSConvs.
    #[arg(long)]
    pub no_dlrb: bool,
    /// Dilation rates of the refinement blocks, e.g. `1,3,5`.
    #[arg(long, value_parser = parse_dilations)]
    pub dilations: Option<[usize; 3]>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum BackboneArg {
    Lfe,
    Vanilla,
    Ds,
}

impl From<BackboneArg> for BackboneKind {
    fn from(b: BackboneArg) -> Self {
        match b {
            BackboneArg::Lfe => BackboneKind::Lfe,
            BackboneArg::Vanilla => BackboneKind::Vanilla,
            BackboneArg::Ds => BackboneKind::DsAll,
        }
    }
}

fn parse_dilations(s: &str) -> std::result::Result<[usize; 3], String> {
    let rates = s
        .split(',')
        .map(|v| v.trim().parse::<usize>().map_err(|e| format!("{v:?}: {e}")))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    rates
        .try_into()
        .map_err(|v: Vec<usize>| format!("expected three rates, got {}", v.len()))
}

impl VariantArgs {
    pub fn resolve(&self) -> Result<CorrNetConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| corrnet_core::Error::Io {
                    path: path.clone(),
                    source: e,
                })?;
                CorrNetConfig::from_json(&text)?
            }
            None => CorrNetConfig::default(),
        };
        if let Some(b) = self.backbone {
            cfg.backbone = b.into();
        }
        if self.no_corrm {
            cfg = cfg.without_corrm();
        }
        if self.no_correlation {
            cfg.enable_correlation = false;
        }
        if self.no_gate {
            cfg.enable_gate = false;
        }
        if self.no_fem {
            cfg.enable_fem = false;
        }
        if self.no_dlrb {
            cfg.enable_dlrb = false;
        }
        if let Some(d) = &self.dilations {
            cfg.dilation_rates = *d;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Text,
    Json,
}

#[derive(Debug, Args)]
pub struct CostArgs {
    #[command(flatten)]
    pub variant: VariantArgs,
    #[arg(long, default_value_t = 256)]
    pub input_size: usize,
    #[arg(long, value_enum, default_value_t = FormatArg::Text)]
    pub format: FormatArg,
    /// Writes the report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InitArgs {
    #[command(flatten)]
    pub variant: VariantArgs,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Checkpoint whose tensors override the random values where names match.
    #[arg(long)]
    pub pretrained: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[command(flatten)]
    pub variant: VariantArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// PPM/PGM image with sides divisible by 16.
    #[arg(long)]
    pub input: PathBuf,
    /// Output PGM for the finest map.
    #[arg(long)]
    pub output: PathBuf,
    /// Also writes all four maps, upsampled to the input size.
    #[arg(long)]
    pub emit_intermediate: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    /// JSON report destination.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub pr_csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub variant: VariantArgs,
    /// Checkpoint written after the last epoch.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    /// Training samples.
    #[arg(long, default_value_t = 200)]
    pub n: usize,
    #[arg(long, default_value_t = 50)]
    pub holdout: usize,
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 4)]
    pub batch_size: usize,
    #[arg(long)]
    pub no_augment: bool,
    /// Per-epoch CSV history.
    #[arg(long)]
    pub history: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PrecisionArg {
    F64,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, value_enum, default_value_t = PrecisionArg::F64)]
    pub mode: PrecisionArg,
    /// Largest accepted relative error for the primitive ops.
    #[arg(long, default_value_t = 1e-6)]
    pub tolerance: f64,
    /// Also checks the whole network's training loss on a 32×32 batch.
    #[arg(long)]
    pub full_model: bool,
    #[arg(long, default_value_t = 1e-5)]
    pub full_tolerance: f64,
    #[command(flatten)]
    pub variant: VariantArgs,
    /// Cuts the backward pass of the named primitive case.
    #[arg(long, hide = true)]
    pub break_op: Option<String>,
}
