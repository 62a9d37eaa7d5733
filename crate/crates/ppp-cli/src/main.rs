//! `ppp` — measure and visualize the position information that padding
//! schemes leave in convolutional features.

use clap::{Args, Parser, Subcommand};
use ppp_core::alignment::{compute_plan, AlignmentPlan};
use ppp_core::arch::{registered, ArchSpec};
use ppp_core::error::Error as CoreError;
use ppp_core::exec::{forward_capture, PadCtx};
use ppp_core::experiments::arch_for_scheme;
use ppp_core::experiments::bhv::{run_bhv, BhvConfig};
use ppp_core::experiments::chrono::{run_chronological, write_chrono_csv, ChronoConfig, ChronoTask};
use ppp_core::experiments::posenet::{run_posenet, PosenetOpts};
use ppp_core::experiments::synth::synth_dataset;
use ppp_core::experiments::train::{train, TrainOpts};
use ppp_core::harness::checkpoint::Checkpoint;
use ppp_core::harness::data::{gen_data, ImageSource};
use ppp_core::metrics::{
    load_map, ppp_measure, save_map, write_heatmap_pgm, write_metrics_csv, CanvasSource, ReportRow,
};
use ppp_core::padding::{PadMode, PaddingScheme};
use ppp_core::params::ParamSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "ppp", version, about = "Padding position-information measurement toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a deterministic synthetic measurement image set (PPM).
    GenData(GenDataArgs),
    /// Train a network on a task and save the final checkpoint.
    Train(TrainArgs),
    /// Measure PPP for a checkpoint: CSV metrics plus per-layer heatmaps.
    Measure(MeasureArgs),
    /// Border-handling experiment: similar/dissimilar accuracy and
    /// trajectory inconsistency over several trials.
    Bhv(BhvArgs),
    /// Optimization-based positional probe on frozen features.
    Posenet(PosenetArgs),
    /// Train with periodic snapshots and measure PPP at each one.
    Chrono(ChronoArgs),
    /// Re-render a saved raw map as a PGM heatmap.
    Render(RenderArgs),
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 480)]
    count: usize,
    #[arg(long, default_value_t = 2048)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    /// Task: `synthetic-classify` or `bhv`.
    #[arg(long, default_value = "synthetic-classify")]
    task: String,
    #[arg(long, default_value = "mini-vgg")]
    arch: String,
    /// zeros | circular | reflect | replicate | randn[:WINDOW] | none
    #[arg(long, default_value = "zeros")]
    scheme: String,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    #[arg(long, default_value_t = 0.02)]
    lr: f64,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    #[arg(long, default_value_t = 5e-4)]
    weight_decay: f64,
    #[arg(long, default_value_t = 512)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MeasureArgs {
    /// Architecture name; defaults to the checkpoint's arch.
    #[arg(long)]
    arch: Option<String>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value = "zeros")]
    scheme: String,
    /// Directory of PGM/PPM images, or `procedural` for generated noise.
    #[arg(long, default_value = "procedural")]
    dataset: String,
    /// Sample count for procedural datasets.
    #[arg(long, default_value_t = 64)]
    samples: usize,
    /// Seed for procedural data and random init (no checkpoint).
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Measurement input extent (defaults to the arch nominal size).
    #[arg(long)]
    input: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the alignment plan (crops, per-layer and total shifts) and exit.
    #[arg(long)]
    explain: bool,
    /// Also dump raw per-layer maps next to the heatmaps.
    #[arg(long)]
    save_maps: bool,
}

#[derive(Args)]
struct BhvArgs {
    #[arg(long, default_value = "zeros")]
    scheme: String,
    /// Convolution mode: `same` or `full` (full-padding convolution).
    #[arg(long, default_value = "same")]
    mode: String,
    /// Background gray level in [0, 1].
    #[arg(long, default_value_t = 0.0)]
    background: f32,
    #[arg(long, default_value_t = 5)]
    trials: usize,
    #[arg(long, default_value_t = 8)]
    epochs: usize,
    #[arg(long, default_value_t = 0.04)]
    lr: f64,
    #[arg(long, default_value_t = 1000)]
    train_per_class: usize,
    #[arg(long, default_value_t = 250)]
    test_per_class: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PosenetArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    arch: Option<String>,
    #[arg(long, default_value = "zeros")]
    scheme: String,
    /// Capture layer index (defaults to the deepest capture layer).
    #[arg(long)]
    layer: Option<usize>,
    #[arg(long, default_value_t = 5)]
    trials: usize,
    #[arg(long, default_value_t = 60)]
    epochs: usize,
    #[arg(long, default_value = "procedural")]
    dataset: String,
    #[arg(long, default_value_t = 48)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ChronoArgs {
    #[arg(long, default_value = "synthetic-classify")]
    task: String,
    #[arg(long, default_value = "mini-vgg")]
    arch: String,
    #[arg(long, default_value = "zeros")]
    scheme: String,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    /// Snapshot interval in epochs.
    #[arg(long, default_value_t = 10)]
    every: usize,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    #[arg(long, default_value_t = 0.02)]
    lr: f64,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    #[arg(long, default_value_t = 5e-4)]
    weight_decay: f64,
    #[arg(long, default_value_t = 512)]
    train_count: usize,
    #[arg(long, default_value_t = 48)]
    measure_count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    map: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn exit_code_for(category: &str) -> u8 {
    match category {
        "config" => 2,
        "io" => 3,
        "misaligned-plan" => 4,
        "divergence" => 5,
        "format" => 6,
        _ => 1,
    }
}

fn main() -> ExitCode {
    if let Ok(threads) = std::env::var("PPP_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let category = err
                .downcast_ref::<CoreError>()
                .map(|e| e.category())
                .unwrap_or("internal");
            eprintln!("error: {category}: {err}");
            ExitCode::from(exit_code_for(category))
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::GenData(a) => {
            gen_data(&a.out, a.count, a.size, a.seed)?;
            println!("wrote {} images of {}x{} to {}", a.count, a.size, a.size, a.out.display());
            Ok(())
        }
        Command::Train(a) => cmd_train(a),
        Command::Measure(a) => cmd_measure(a),
        Command::Bhv(a) => cmd_bhv(a),
        Command::Posenet(a) => cmd_posenet(a),
        Command::Chrono(a) => cmd_chrono(a),
        Command::Render(a) => {
            let map = load_map(&a.map)?;
            write_heatmap_pgm(&map, &a.out)?;
            println!("rendered layer {} map ({}x{}) to {}", map.layer, map.w, map.h, a.out.display());
            Ok(())
        }
    }
}

fn load_arch_and_params(
    arch_flag: Option<&str>,
    checkpoint: Option<&Path>,
    scheme: &PaddingScheme,
    seed: u64,
) -> anyhow::Result<(ArchSpec, ParamSet<f32>, String)> {
    let (base, params, tag) = match checkpoint {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            let name = arch_flag.unwrap_or(&ck.arch);
            let base = registered(name)?;
            let arch = arch_for_scheme(base, scheme);
            let mut params = ParamSet::<f32>::init(&arch, 0)?;
            ck.apply_to(&mut params)?;
            let tag = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "checkpoint".into());
            (arch, params, tag)
        }
        None => {
            let name = arch_flag.ok_or_else(|| {
                CoreError::Config("need --arch or --checkpoint".into())
            })?;
            let base = registered(name)?;
            let arch = arch_for_scheme(base, scheme);
            let params = ParamSet::<f32>::init(&arch, seed)?;
            (arch, params, format!("random-init-{seed}"))
        }
    };
    Ok((base, params, tag))
}

fn make_source(
    dataset: &str,
    samples: usize,
    seed: u64,
    channels: usize,
    h: usize,
    w: usize,
) -> anyhow::Result<ImageSource> {
    if dataset == "procedural" {
        Ok(ImageSource::procedural(seed, samples, channels, h, w))
    } else {
        Ok(ImageSource::directory(Path::new(dataset), channels, h, w)?)
    }
}

fn print_plan_summary(plan: &AlignmentPlan) {
    println!(
        "arch {} nominal {}x{} oversize {}x{} margins ({}, {})",
        plan.arch,
        plan.nominal_h,
        plan.nominal_w,
        plan.oversize_h,
        plan.oversize_w,
        plan.margin_top,
        plan.margin_left
    );
    for l in &plan.layers {
        println!(
            "  layer {:>2}: crop ({}, {}) {}x{} of {}x{}  shift ({}, {}) px  input-shift ({}, {}) px",
            l.layer,
            l.crop_top,
            l.crop_left,
            l.crop_h,
            l.crop_w,
            l.valid_h,
            l.valid_w,
            l.shift_y,
            l.shift_x,
            l.input_shift_y,
            l.input_shift_x
        );
    }
    println!("total shift ({}, {})", plan.total_shift_y, plan.total_shift_x);
}

fn cmd_measure(a: MeasureArgs) -> anyhow::Result<()> {
    let scheme = PaddingScheme::parse(&a.scheme)?;
    let (arch, params, tag) =
        load_arch_and_params(a.arch.as_deref(), a.checkpoint.as_deref(), &scheme, a.seed)?;

    let input = match a.input {
        Some(v) => v,
        None if scheme.is_none() => {
            ppp_core::experiments::chrono::smallest_valid_input(&arch)?
        }
        None => arch.in_h,
    };
    let plan = compute_plan(&arch, input, input, &scheme)?;

    if a.explain {
        print_plan_summary(&plan);
        println!("{}", plan.to_json());
        return Ok(());
    }

    let out = a.out.clone().ok_or_else(|| CoreError::Config("--out required".into()))?;
    std::fs::create_dir_all(&out)?;
    let source = make_source(
        &a.dataset,
        a.samples,
        a.seed,
        arch.in_ch,
        plan.oversize_h,
        plan.oversize_w,
    )?;
    let measurements = ppp_measure(&arch, &params, &source, scheme, &plan, a.seed)?;

    let mut rows = Vec::new();
    for m in &measurements {
        let row = ReportRow::from_measurement(&arch.name, scheme.name(), &tag, m);
        if row.degenerate {
            eprintln!(
                "warning: degenerate feature statistics at layer {} (snr reported as {})",
                row.layer,
                ppp_core::metrics::format_sig9(row.snr_ppp)
            );
        }
        write_heatmap_pgm(&m.map, &out.join(format!("layer{:02}.pgm", m.map.layer)))?;
        if a.save_maps {
            save_map(&m.map, &out.join(format!("layer{:02}.pppmap", m.map.layer)))?;
        }
        rows.push(row);
    }
    let mut buf = Vec::new();
    write_metrics_csv(&rows, &mut buf)?;
    std::fs::write(out.join("metrics.csv"), &buf)?;
    print!("{}", String::from_utf8_lossy(&buf));
    Ok(())
}

fn cmd_train(a: TrainArgs) -> anyhow::Result<()> {
    let scheme = PaddingScheme::parse(&a.scheme)?;
    let base = registered(&a.arch)?;
    let arch = arch_for_scheme(base, &scheme);
    std::fs::create_dir_all(&a.out)?;

    let data = match a.task.as_str() {
        "synthetic-classify" | "synthetic" => synth_dataset(a.seed, a.samples, arch.in_h),
        "bhv" => {
            let cfg = BhvConfig {
                canvas: arch.in_h,
                train_per_class: a.samples / 2,
                seed: a.seed,
                ..Default::default()
            };
            ppp_core::experiments::bhv::gen_bhv(&cfg, ppp_core::experiments::bhv::Split::Train)?.0
        }
        other => return Err(CoreError::Config(format!("unknown task `{other}`")).into()),
    };

    let opts = TrainOpts {
        epochs: a.epochs,
        batch_size: a.batch,
        lr: a.lr,
        momentum: a.momentum,
        weight_decay: a.weight_decay,
    };
    let mut params = ParamSet::<f32>::init(&arch, a.seed)?;
    let losses = train(&arch, &mut params, &data, scheme, &opts, a.seed, 0, |_, _| Ok(()))?;
    for (e, loss) in losses.iter().enumerate() {
        println!("epoch {:>3}  loss {loss:.6}", e + 1);
    }
    let ck_path = a.out.join("final.ckpt");
    Checkpoint::from_params(&arch.name, a.epochs as u64, &params).save(&ck_path)?;
    println!("saved {}", ck_path.display());
    Ok(())
}

fn parse_mode(s: &str) -> anyhow::Result<PadMode> {
    match s {
        "same" => Ok(PadMode::Same),
        "full" => Ok(PadMode::Full),
        other => Err(CoreError::Config(format!("mode must be same|full, got `{other}`")).into()),
    }
}

pub const BHV_CSV_HEADER: &str = "scheme,mode,background,trials,similar_mean,similar_std,dissimilar_mean,dissimilar_std,diff,inconsistency_mean,inconsistency_std";

fn cmd_bhv(a: BhvArgs) -> anyhow::Result<()> {
    let scheme = PaddingScheme::parse(&a.scheme)?;
    let mode = parse_mode(&a.mode)?;
    let cfg = BhvConfig {
        background: a.background,
        train_per_class: a.train_per_class,
        test_per_class: a.test_per_class,
        seed: a.seed,
        ..Default::default()
    };
    let opts = TrainOpts {
        epochs: a.epochs,
        batch_size: 32,
        lr: a.lr,
        momentum: 0.9,
        weight_decay: 5e-4,
    };
    let outcome = run_bhv(scheme, mode, &cfg, &opts, a.trials)?;

    let (sm, ss) = outcome.similar_mean_std();
    let (dm, ds) = outcome.dissimilar_mean_std();
    let (im, is) = outcome.inconsistency_mean_std();
    let line = format!(
        "{},{},{},{},{:.2},{:.2},{:.2},{:.2},{:.2},{:.2},{:.2}",
        scheme.name(),
        a.mode,
        a.background,
        a.trials,
        sm,
        ss,
        dm,
        ds,
        dm - sm,
        im,
        is
    );
    println!("{BHV_CSV_HEADER}");
    println!("{line}");
    if let Some(out) = a.out {
        if let Some(parent) = out.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        std::fs::write(&out, format!("{BHV_CSV_HEADER}\n{line}\n"))?;
    }
    Ok(())
}

fn cmd_posenet(a: PosenetArgs) -> anyhow::Result<()> {
    let scheme = PaddingScheme::parse(&a.scheme)?;
    let (arch, params, tag) =
        load_arch_and_params(a.arch.as_deref(), a.checkpoint.as_deref(), &scheme, a.seed)?;
    let captures = arch.capture_layers();
    let layer = a.layer.unwrap_or(*captures.last().expect("arch has captures"));
    if !captures.contains(&layer) {
        return Err(CoreError::Config(format!(
            "layer {layer} is not a capture layer (captures: {captures:?})"
        ))
        .into());
    }

    let source =
        make_source(&a.dataset, a.samples, a.seed, arch.in_ch, arch.in_h, arch.in_w)?;
    let mut features = Vec::with_capacity(source.len());
    for i in 0..source.len() {
        let img = source.canvas(i)?;
        let caps = forward_capture(&arch, &params, &img, scheme, PadCtx::for_sample(a.seed, i as u64))?;
        let feat = caps.into_iter().find(|(l, _)| *l == layer).expect("capture present").1;
        features.push(feat);
    }
    let split = (features.len() * 4) / 5;
    if split == 0 || split == features.len() {
        return Err(CoreError::Config("need enough samples for a train/test split".into()).into());
    }
    let outcome = run_posenet(
        &features[..split],
        &features[split..],
        &PosenetOpts { trials: a.trials, epochs: a.epochs, lr: 0.05, seed: a.seed },
    )?;

    let mut csv = String::from("checkpoint,layer,trial,spc,mae,diverged\n");
    for (i, t) in outcome.trials.iter().enumerate() {
        csv.push_str(&format!(
            "{tag},{layer},{i},{},{},{}\n",
            ppp_core::metrics::format_sig9(t.spc),
            ppp_core::metrics::format_sig9(t.mae),
            t.diverged
        ));
    }
    print!("{csv}");
    let (spc_m, spc_s) = outcome.spc_mean_std();
    let (mae_m, mae_s) = outcome.mae_mean_std();
    println!("# spc {spc_m:.4} ± {spc_s:.4}   mae {mae_m:.4} ± {mae_s:.4}");
    if let Some(out) = a.out {
        std::fs::write(&out, csv)?;
    }
    Ok(())
}

fn cmd_chrono(a: ChronoArgs) -> anyhow::Result<()> {
    let scheme = PaddingScheme::parse(&a.scheme)?;
    let cfg = ChronoConfig {
        task: ChronoTask::parse(&a.task)?,
        arch: a.arch.clone(),
        scheme,
        epochs: a.epochs,
        snapshot_every: a.every,
        seed: a.seed,
        train: TrainOpts {
            epochs: a.epochs,
            batch_size: a.batch,
            lr: a.lr,
            momentum: a.momentum,
            weight_decay: a.weight_decay,
        },
        train_count: a.train_count,
        measure_count: a.measure_count,
        measure_input: None,
        out_dir: Some(a.out.clone()),
    };
    let (rows, plan) = run_chronological(&cfg)?;
    let mut buf = Vec::new();
    write_chrono_csv(&rows, &mut buf)?;
    print!("{}", String::from_utf8_lossy(&buf));
    std::fs::write(a.out.join("chronological.csv"), &buf)?;
    eprintln!(
        "# plan: oversize {}x{}, total shift ({}, {})",
        plan.oversize_h, plan.oversize_w, plan.total_shift_y, plan.total_shift_x
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_structure_is_valid() {
        Cli::command().debug_assert();
    }

    #[test]
    fn registered_arch_names_resolve() {
        for name in ppp_core::arch::registered_names() {
            assert!(registered(name).is_ok());
        }
    }
}
