use std::fs::File;
use std::io::{BufWriter, Write};
use std::process::ExitCode;

use corrnet_core::autograd::{primitive_checks, GradCheckOptions, GradCheckReport};
use corrnet_core::cost::{emit_report, model_cost, ReportFormat};
use corrnet_core::data::{load_checkpoint, load_image, save_checkpoint, save_map};
use corrnet_core::metrics::{evaluate_directory, write_pr_csv};
use corrnet_core::model::{CorrNet, CorrNetConfig, InitSource};
use corrnet_core::tensor::ops::resize_bilinear;
use corrnet_core::train::{model_grad_check, toy_data, train_toy, TrainConfig};
use corrnet_core::{Error, Result};

use crate::args::{CostArgs, EvalArgs, FormatArg, GradcheckArgs, InferArgs, InitArgs, TrainArgs};

fn echo(cfg: &CorrNetConfig) -> Result<String> {
    Ok(format!("config: {}", serde_json::to_string(cfg)?))
}

fn write_out(path: &std::path::Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

pub fn cost(args: &CostArgs) -> Result<ExitCode> {
    let mut cfg = args.variant.resolve()?;
    cfg.input_size = args.input_size;
    cfg.validate()?;
    let report = model_cost(&cfg, args.input_size)?;
    let bytes = match args.format {
        FormatArg::Text => {
            let mut out = echo(&cfg)?.into_bytes();
            out.push(b'\n');
            out.extend(emit_report(&report, ReportFormat::Text)?);
            out
        }
        FormatArg::Json => {
            let mut value: serde_json::Value =
                serde_json::from_slice(&emit_report(&report, ReportFormat::Json)?)?;
            value["config"] = serde_json::to_value(&cfg)?;
            let mut out = serde_json::to_vec_pretty(&value)?;
            out.push(b'\n');
            out
        }
    };
    match &args.out {
        Some(path) => write_out(path, &bytes)?,
        None => std::io::stdout().write_all(&bytes).map_err(|e| Error::Io {
            path: "<stdout>".into(),
            source: e,
        })?,
    }
    Ok(ExitCode::SUCCESS)
}

pub fn init(args: &InitArgs) -> Result<ExitCode> {
    let cfg = args.variant.resolve()?;
    println!("{}", echo(&cfg)?);
    let mut model = CorrNet::build(&cfg)?;
    let summary = match &args.pretrained {
        Some(path) => model.init_weights(InitSource::Pretrained(path), args.seed)?,
        None => model.init_weights(InitSource::Normal, args.seed)?,
    };
    if !summary.loaded.is_empty() {
        println!("loaded {} pretrained tensors", summary.loaded.len());
    }
    if !summary.ignored.is_empty() {
        println!(
            "ignored {} tensors not in this variant",
            summary.ignored.len()
        );
    }
    save_checkpoint(&args.out, &model.named_tensors())?;
    println!(
        "wrote {} ({} parameters)",
        args.out.display(),
        model.num_params()
    );
    Ok(ExitCode::SUCCESS)
}

pub fn infer(args: &InferArgs) -> Result<ExitCode> {
    let cfg = args.variant.resolve()?;
    println!("{}", echo(&cfg)?);
    let image = load_image(&args.input)?;
    let (h, w) = (image.shape()[1], image.shape()[2]);
    if h % 16 != 0 || w % 16 != 0 {
        return Err(Error::Config(format!(
            "{}: image is {w}×{h}; both sides must be multiples of 16",
            args.input.display()
        )));
    }
    let mut model = CorrNet::build(&cfg)?;
    model.load_tensors(load_checkpoint(&args.checkpoint)?)?;
    let pred = model.predict(&image.into_reshaped(&[1, 3, h, w])?)?;
    let maps = pred
        .maps
        .iter()
        .map(|m| resize_bilinear(m, h, w))
        .collect::<Result<Vec<_>>>()?;
    save_map(&args.output, &maps[0])?;
    println!("wrote {}", args.output.display());
    if let Some(dir) = &args.emit_intermediate {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.clone(),
            source: e,
        })?;
        let stem = args
            .input
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("map");
        for (k, m) in maps.iter().enumerate() {
            let path = dir.join(format!("{stem}_s{}.pgm", k + 1));
            save_map(&path, m)?;
            println!("wrote {}", path.display());
        }
    }
    Ok(ExitCode::SUCCESS)
}

pub fn eval(args: &EvalArgs) -> Result<ExitCode> {
    println!("pred: {}  gt: {}", args.pred.display(), args.gt.display());
    let report = evaluate_directory(&args.pred, &args.gt)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    write_out(&args.out, report.to_json()?.as_bytes())?;
    if let Some(csv) = &args.pr_csv {
        write_pr_csv(csv, &report.pr)?;
    }
    let m = &report.means;
    let opt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.4}"));
    println!(
        "images {}  S {:.4}  maxF {}  meanF {}  adpF {}  maxE {:.4}  meanE {:.4}  adpE {:.4}  MAE {:.4}",
        report.images.len(),
        m.s_alpha,
        opt(m.f_max),
        opt(m.f_mean),
        opt(m.f_adaptive),
        m.e_max,
        m.e_mean,
        m.e_adaptive,
        m.mae
    );
    Ok(ExitCode::SUCCESS)
}

pub fn train(args: &TrainArgs) -> Result<ExitCode> {
    let mut cfg = args.variant.resolve()?;
    cfg.input_size = args.size;
    cfg.validate()?;
    let tc = TrainConfig {
        lr: args.lr,
        batch_size: args.batch_size,
        epochs: args.epochs,
        seed: args.seed,
        input_size: args.size,
        augment: !args.no_augment,
        ..TrainConfig::default()
    };
    tc.validate()?;
    println!("{}", echo(&cfg)?);
    println!("train: {}", serde_json::to_string(&tc)?);
    let (train, holdout) = toy_data(args.n, args.holdout, args.size, args.seed)?;
    let mut model = CorrNet::new(&cfg, args.seed)?;
    let history = train_toy(&mut model, &train, &holdout, &tc, |r| {
        println!(
            "epoch {:>3}  lr {:.1e}  loss {:.5}  mae s1 {:.5} s2 {:.5} s3 {:.5} s4 {:.5}",
            r.epoch, r.lr, r.loss, r.mae[0], r.mae[1], r.mae[2], r.mae[3]
        );
    })?;
    save_checkpoint(&args.out, &model.named_tensors())?;
    println!("wrote {}", args.out.display());
    if let Some(path) = &args.history {
        let file = File::create(path).map_err(|e| Error::Io {
            path: path.clone(),
            source: e,
        })?;
        history
            .write_csv(BufWriter::new(file))
            .map_err(|e| Error::Io {
                path: path.clone(),
                source: e,
            })?;
    }
    if let (Some(first), Some(last)) = (history.epochs.first(), history.epochs.last()) {
        println!(
            "final/first loss {:.3}  held-out MAE s1 {:.5}  s4 {:.5}",
            last.loss / first.loss,
            last.mae[0],
            last.mae[3]
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn print_report_row(name: &str, report: &GradCheckReport, tolerance: f64) -> bool {
    let ok = report.max_rel_err() <= tolerance;
    let worst = report
        .worst()
        .map(|p| {
            format!(
                "{}[{}] analytic {:.6e} numeric {:.6e}",
                p.name, p.worst.0, p.worst.1, p.worst.2
            )
        })
        .unwrap_or_default();
    println!(
        "{:<28} {:>7} {:>7} {:>11.3e}  {}  {}",
        name,
        report.checked(),
        report.skipped(),
        report.max_rel_err(),
        if ok { "PASS" } else { "FAIL" },
        worst
    );
    ok
}

pub fn gradcheck(args: &GradcheckArgs) -> Result<ExitCode> {
    let mut all_ok = true;
    println!(
        "{:<28} {:>7} {:>7} {:>11}  result",
        "op", "checked", "skipped", "max rel err"
    );
    let results = primitive_checks(&GradCheckOptions::default(), args.break_op.as_deref())?;
    for r in &results {
        all_ok &= print_report_row(&r.name, &r.report, args.tolerance);
    }
    if args.full_model {
        let cfg = args.variant.resolve()?;
        println!("{}", echo(&cfg)?);
        let report = model_grad_check(&cfg, 32, 2, &GradCheckOptions::end_to_end())?;
        all_ok &= print_report_row("full model (32x32)", &report, args.full_tolerance);
        let unverified: Vec<&str> = report
            .params
            .iter()
            .filter(|p| p.checked == 0)
            .map(|p| p.name.as_str())
            .collect();
        if !unverified.is_empty() {
            println!(
                "no kink-free coordinate found for: {}",
                unverified.join(", ")
            );
        }
    }
    println!(
        "{}",
        if all_ok {
            "all checks passed"
        } else {
            "gradient check FAILED"
        }
    );
    Ok(if all_ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}
