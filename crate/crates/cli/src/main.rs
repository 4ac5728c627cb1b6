use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use lightformer::efficiency::{channel_table_csv, channel_table_text, count_flops, report_channel_management, Extent};
use lightformer::gradcheck::{all_cases, run_case};
use lightformer::io::pnm;
use lightformer::io::synth::{toy_split, Split};
use lightformer::io::{parse_shape, Preset, RunConfig};
use lightformer::network::{attention_maps, init_params, read_checkpoint, write_checkpoint, Network};
use lightformer::nn::ParamStore;
use lightformer::training::{argmax, predict_logits, sliding_window_infer, standardize, EpochLog, Trainer};
use lightformer::{AdjointFault, Tensor};

#[derive(Parser)]
#[command(name = "lightformer", version, about = "Lightweight segmentation decoder: analysis, checks, training and inference")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Configuration file of `key = value` lines with `[section]` headers.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one configuration key, e.g. `--set train.epochs=5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Parameter and FLOP report, including the channel-management comparison.
    Analyze {
        #[command(flatten)]
        common: Common,
        /// Feature shape B,C,H,W for the channel-management table; repeatable.
        #[arg(long)]
        shape: Vec<String>,
    },
    /// Finite-difference gradient checks over primitives, blocks and losses.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        /// Only run the named case; repeatable.
        #[arg(long)]
        op: Vec<String>,
        #[arg(long, default_value_t = 5)]
        instances: usize,
        /// Deliberately break an adjoint: `corrupt:OP` or `missing:OP`.
        #[arg(long, hide = true)]
        fault: Option<String>,
    },
    /// Train on the synthetic shapes dataset.
    TrainToy {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Sliding-window inference on a PPM image, writing a PGM class mask.
    Infer {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// Window size, `N` or `H,W`.
        #[arg(long)]
        window: Option<String>,
        /// Window stride, `N` or `H,W`.
        #[arg(long)]
        stride: Option<String>,
        /// Also write the averaged logits as an LFTR tensor.
        #[arg(long)]
        logits: Option<PathBuf>,
    },
    /// Write attention-entropy and spatial-selection maps as PGM heatmaps.
    DumpAttn {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
    },
}

/// A failure with its exit status: 2 for usage and configuration errors,
/// 1 for everything else.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        let code = match error.downcast_ref::<lightformer::Error>() {
            Some(lightformer::Error::Config(_)) => 2,
            _ => 1,
        };
        Failure { code, error }
    }
}

impl From<lightformer::Error> for Failure {
    fn from(e: lightformer::Error) -> Self {
        anyhow::Error::from(e).into()
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure { code: 2, error: anyhow::anyhow!(msg.into()) }
}

fn load_config(common: &Common, preset: Preset, extra: &[(&str, Option<&String>)]) -> Result<RunConfig, Failure> {
    let mut cfg = RunConfig::preset(preset);
    if let Some(path) = &common.config {
        let text = fs::read_to_string(path).map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
        cfg.apply_text(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    }
    for kv in &common.overrides {
        cfg.apply_override(kv).map_err(|e| usage(e.to_string()))?;
    }
    for (key, v) in extra {
        if let Some(v) = v {
            cfg.set(key, v).map_err(|e| usage(e.to_string()))?;
        }
    }
    cfg.apply_env().map_err(|e| usage(e.to_string()))?;
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

fn prepare_out(common: &Common, cfg: &RunConfig) -> anyhow::Result<PathBuf> {
    fs::create_dir_all(&common.out).with_context(|| format!("creating {}", common.out.display()))?;
    fs::write(common.out.join("config.txt"), cfg.to_text())?;
    Ok(common.out.clone())
}

fn load_model(cfg: &RunConfig, checkpoint: &Path) -> anyhow::Result<(Network, ParamStore<f32>)> {
    let net = Network::new(&cfg.model)?;
    let mut store = init_params::<f32>(&cfg.model, cfg.seed)?;
    read_checkpoint(checkpoint, &mut store).with_context(|| format!("loading checkpoint {}", checkpoint.display()))?;
    Ok((net, store))
}

fn load_image(cfg: &RunConfig, path: &Path) -> anyhow::Result<Tensor<f32>> {
    let img = pnm::read_file(path, pnm::read_ppm).with_context(|| format!("reading {}", path.display()))?;
    let s = img.shape().to_vec();
    let x = img.reshape(&[1, s[0], s[1], s[2]])?;
    Ok(standardize(&x, &cfg.train.mean, &cfg.train.std)?)
}

fn analyze(common: Common, shape: Vec<String>) -> Result<(), Failure> {
    let mut cfg = load_config(&common, Preset::Reference, &[])?;
    if !shape.is_empty() {
        cfg.analyze.shapes = shape.iter().map(|s| parse_shape(s).map_err(|e| usage(e.to_string()))).collect::<Result<_, _>>()?;
    }
    let out = prepare_out(&common, &cfg)?;
    let rows = report_channel_management(&cfg.analyze.shapes, &cfg.model.block);
    let table = channel_table_text(&rows);
    fs::write(out.join("channel_management.txt"), &table).context("writing report")?;
    fs::write(out.join("channel_management.csv"), channel_table_csv(&rows)).context("writing report")?;
    let (h, w) = cfg.analyze.input;
    let report = count_flops(&cfg.model, Extent::new(1, h, w));
    fs::write(out.join("cost_report.txt"), report.to_text()).context("writing report")?;
    fs::write(out.join("cost_report.csv"), report.to_csv()).context("writing report")?;
    let dec = report.under("decoder.");
    let all = report.totals();
    print!("{table}");
    println!(
        "network at 1x{h}x{w}: {} params ({} decoder), {:.3} GFLOPs ({:.3} decoder)",
        all.params,
        dec.params,
        all.flops as f64 / 1e9,
        dec.flops as f64 / 1e9
    );
    println!("reports written to {}", out.display());
    Ok(())
}

fn parse_fault(s: &str) -> Result<AdjointFault, Failure> {
    let (kind, op) = s.split_once(':').ok_or_else(|| usage(format!("fault `{s}` is not KIND:OP")))?;
    let op: &'static str = Box::leak(op.to_string().into_boxed_str());
    match kind {
        "corrupt" => Ok(AdjointFault::Corrupt(op)),
        "missing" => Ok(AdjointFault::Missing(op)),
        _ => Err(usage(format!("unknown fault kind `{kind}`"))),
    }
}

fn gradcheck(common: Common, ops: Vec<String>, instances: usize, fault: Option<String>) -> Result<(), Failure> {
    let cfg = load_config(&common, Preset::Reference, &[])?;
    let fault = fault.as_deref().map(parse_fault).transpose()?;
    let cases = all_cases();
    if let Some(bad) = ops.iter().find(|o| !cases.iter().any(|c| c.name == o.as_str())) {
        let names: Vec<&str> = cases.iter().map(|c| c.name).collect();
        return Err(usage(format!("unknown op `{bad}`; known: {}", names.join(", "))));
    }
    if instances == 0 {
        return Err(usage("--instances must be positive"));
    }
    let mut failed = Vec::new();
    for case in cases.iter().filter(|c| ops.is_empty() || ops.iter().any(|o| o == c.name)) {
        let r = run_case(case, instances, cfg.seed, fault);
        let status = if r.passed() { "PASS" } else { "FAIL" };
        match &r.error {
            Some(e) => println!("{status} {:<22} error: {e}", r.name),
            None => println!(
                "{status} {:<22} max rel err {:.2e} < {:.0e} over {} coords in {} instances ({} non-smooth skipped)",
                r.name, r.max_rel_err, r.tolerance, r.coords, r.instances, r.skipped
            ),
        }
        if !r.passed() {
            failed.push(r.name);
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(anyhow::anyhow!("gradient check failed for: {}", failed.join(", ")).into())
    }
}

fn metrics_row(log: &EpochLog) -> String {
    let loss = log.train_loss.map_or(String::new(), |l| l.to_string());
    let v = &log.val;
    format!("{},{},{},{},{},{},{}\n", log.epoch, loss, log.lr_decoder, v.miou, v.oa, v.oa_per_class, v.mf1)
}

fn train_toy(common: Common, epochs: Option<usize>) -> Result<(), Failure> {
    let epochs = epochs.map(|e| e.to_string());
    let cfg = load_config(&common, Preset::Toy, &[("train.epochs", epochs.as_ref())])?;
    let out = prepare_out(&common, &cfg)?;
    let d = &cfg.data;
    let train = toy_split(cfg.seed, Split::Train, d.train_size, d.image_size);
    let val = toy_split(cfg.seed, Split::Val, d.val_size, d.image_size);
    let net = Network::new(&cfg.model)?;
    let store = init_params::<f32>(&cfg.model, cfg.seed)?;
    let mut trainer = Trainer::new(&net, store, cfg.train.clone(), train.len())?;
    let mut csv = String::from("epoch,train_loss,lr_decoder,val_miou,val_oa,val_oa_per_class,val_mf1\n");
    let start = Instant::now();
    let logs = trainer.fit(&train, &val, |log| {
        csv.push_str(&metrics_row(log));
        let loss = log.train_loss.map_or("-".to_string(), |l| format!("{l:.4}"));
        println!(
            "epoch {:>3}  loss {loss:>7}  val mIoU {:.4}  OA {:.4}  mF1 {:.4}  ({:.1}s)",
            log.epoch,
            log.val.miou,
            log.val.oa,
            log.val.mf1,
            start.elapsed().as_secs_f64()
        );
    });
    // Keep what was recorded even if training stopped early.
    fs::write(out.join("metrics.csv"), &csv).context("writing metrics")?;
    let logs = logs.context("training failed")?;
    write_checkpoint(out.join("checkpoint.lfck"), &trainer.store).context("writing checkpoint")?;
    let best = logs.iter().map(|l| l.val.miou).fold(0.0, f64::max);
    println!("best val mIoU {best:.4}; outputs in {}", out.display());
    Ok(())
}

fn infer(
    common: Common,
    checkpoint: PathBuf,
    image: PathBuf,
    window: Option<String>,
    stride: Option<String>,
    logits_path: Option<PathBuf>,
) -> Result<(), Failure> {
    let cfg = load_config(&common, Preset::Toy, &[("infer.window", window.as_ref()), ("infer.stride", stride.as_ref())])?;
    let (net, store) = load_model(&cfg, &checkpoint)?;
    let x = load_image(&cfg, &image)?;
    let out = prepare_out(&common, &cfg)?;
    let logits = sliding_window_infer(&x, cfg.infer.window, cfg.infer.stride, |w| predict_logits(&net, &store, w))?;
    let (h, w) = (logits.shape()[2], logits.shape()[3]);
    let mask: Vec<u32> = argmax(&logits).into_iter().map(|c| c as u32).collect();
    let stem = image.file_stem().map_or("image".into(), |s| s.to_string_lossy().into_owned());
    let path = out.join(format!("{stem}_mask.pgm"));
    pnm::write_file(&path, |f| pnm::write_mask(f, h, w, &mask))?;
    if let Some(p) = logits_path {
        lightformer::lftr::write_file(&p, &logits)?;
    }
    let mut hist = vec![0usize; cfg.model.num_classes];
    mask.iter().for_each(|&m| hist[m as usize] += 1);
    println!("{h}x{w} mask written to {}; pixels per class {hist:?}", path.display());
    Ok(())
}

fn dump_attn(common: Common, checkpoint: PathBuf, image: PathBuf) -> Result<(), Failure> {
    let cfg = load_config(&common, Preset::Toy, &[])?;
    let (net, store) = load_model(&cfg, &checkpoint)?;
    let x = load_image(&cfg, &image)?;
    let out = prepare_out(&common, &cfg)?;
    let maps = attention_maps(&net, &store, &x)?;
    let mut index = String::from("map,height,width,min,max\n");
    for m in &maps {
        let (lo, hi) = m.range();
        if m.name.starts_with("sism") && !(lo > 0.0 && hi < 1.0) {
            return Err(anyhow::anyhow!("{} has values outside (0, 1): [{lo}, {hi}]", m.name).into());
        }
        let path = out.join(format!("{}.pgm", m.name));
        pnm::write_file(&path, |f| pnm::write_pgm(f, m.height, m.width, &pnm::heatmap_bytes(&m.values, lo, hi)))?;
        let _ = writeln!(index, "{},{},{},{lo},{hi}", m.name, m.height, m.width);
        println!("{:<16} {:>4}x{:<4} range [{lo:.4}, {hi:.4}]", m.name, m.height, m.width);
    }
    fs::write(out.join("maps.csv"), index).context("writing map index")?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Analyze { common, shape } => analyze(common, shape),
        Command::Gradcheck { common, op, instances, fault } => gradcheck(common, op, instances, fault),
        Command::TrainToy { common, epochs } => train_toy(common, epochs),
        Command::Infer { common, checkpoint, image, window, stride, logits } => infer(common, checkpoint, image, window, stride, logits),
        Command::DumpAttn { common, checkpoint, image } => dump_attn(common, checkpoint, image),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
