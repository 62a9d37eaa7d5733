//! Chronological measurement: train, snapshot on an epoch grid, and run the
//! full metrics pipeline at every snapshot.

use crate::alignment::{compute_plan, AlignmentPlan};
use crate::arch::{registered, ArchSpec};
use crate::error::{Error, Result};
use crate::experiments::bhv::{gen_bhv, BhvConfig, Split};
use crate::experiments::synth::synth_dataset;
use crate::experiments::train::{train, Dataset, TrainOpts};
use crate::harness::checkpoint::Checkpoint;
use crate::harness::data::ImageSource;
use crate::metrics::{ppp_measure, ReportRow};
use crate::padding::PaddingScheme;
use crate::params::ParamSet;
use crate::rng::{Purpose, RngStream};
use std::io::Write;
use std::path::PathBuf;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChronoTask {
    SyntheticClassify,
    Bhv,
}

impl ChronoTask {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "synthetic-classify" | "synthetic" => Ok(ChronoTask::SyntheticClassify),
            "bhv" => Ok(ChronoTask::Bhv),
            other => Err(Error::Config(format!("unknown task `{other}`"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ChronoConfig {
    pub task: ChronoTask,
    pub arch: String,
    pub scheme: PaddingScheme,
    pub epochs: usize,
    pub snapshot_every: usize,
    pub seed: u64,
    pub train: TrainOpts,
    pub train_count: usize,
    pub measure_count: usize,
    /// Measurement input extent; defaults to the arch's nominal size (or
    /// the smallest valid-survivable size for scheme `none`).
    pub measure_input: Option<usize>,
    /// Write checkpoints (and partial rows) here when set.
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct ChronoRow {
    pub epoch: usize,
    pub report: ReportRow,
}

pub const CHRONO_CSV_HEADER: &str = "arch,scheme,checkpoint,epoch,layer,n,snr_ppp,mae_ppp";

pub fn write_chrono_csv(rows: &[ChronoRow], mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "{CHRONO_CSV_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            r.report.arch,
            r.report.scheme,
            r.report.checkpoint,
            r.epoch,
            r.report.layer,
            r.report.n,
            crate::metrics::format_sig9(r.report.snr_ppp),
            crate::metrics::format_sig9(r.report.mae_ppp)
        )?;
    }
    Ok(())
}

/// Smallest input extent >= the nominal at which the no-padding regime
/// passes shape inference.
pub fn smallest_valid_input(arch: &ArchSpec) -> Result<usize> {
    for s in arch.in_h..=arch.in_h * 4 {
        if arch.geometry(s, s, true).is_ok() {
            return Ok(s);
        }
    }
    Err(Error::ShapeInference {
        layer: 0,
        detail: format!("no valid-regime input size found for {}", arch.name),
    })
}

fn training_data(cfg: &ChronoConfig, input: usize, seed: u64) -> Result<Dataset> {
    match cfg.task {
        ChronoTask::SyntheticClassify => Ok(synth_dataset(seed, cfg.train_count, input)),
        ChronoTask::Bhv => {
            let bhv = BhvConfig {
                canvas: input,
                train_per_class: cfg.train_count / 2,
                seed,
                ..Default::default()
            };
            Ok(gen_bhv(&bhv, Split::Train)?.0)
        }
    }
}

/// Train and measure. Snapshots land at epoch 0, every `snapshot_every`
/// epochs, and the final epoch; each snapshot contributes one row per
/// capture layer. One alignment plan is computed up front and reused for
/// every snapshot (plans depend on geometry, not weights).
pub fn run_chronological(cfg: &ChronoConfig) -> Result<(Vec<ChronoRow>, AlignmentPlan)> {
    if cfg.snapshot_every == 0 {
        return Err(Error::Config("snapshot interval must be positive".into()));
    }
    let base = registered(&cfg.arch)?;
    let arch = super::arch_for_scheme(base, &cfg.scheme);

    // With scheme `none` the network runs valid everywhere, so both the
    // training input and the measurement input must be large enough to
    // survive the spatial shrinkage.
    let default_input =
        if cfg.scheme.is_none() { smallest_valid_input(&arch)? } else { arch.in_h };
    let measure_input = cfg.measure_input.unwrap_or(default_input);
    let plan = compute_plan(&arch, measure_input, measure_input, &cfg.scheme)?;
    let source = ImageSource::procedural(
        RngStream::new(cfg.seed, Purpose::DataGen).bits(&[0xCA11]),
        cfg.measure_count,
        arch.in_ch,
        plan.oversize_h,
        plan.oversize_w,
    );

    if let Some(dir) = &cfg.out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    }

    let data = training_data(cfg, default_input, cfg.seed)?;
    let mut params = ParamSet::<f32>::init(&arch, cfg.seed ^ 0x1A17)?;
    let mut rows: Vec<ChronoRow> = Vec::new();
    let pad_seed = RngStream::new(cfg.seed, Purpose::RandnPad).bits(&[0x3EA5]);

    let snapshot = |epoch: usize, params: &ParamSet<f32>, rows: &mut Vec<ChronoRow>| -> Result<()> {
        let tag = format!("epoch{epoch:04}");
        if let Some(dir) = &cfg.out_dir {
            Checkpoint::from_params(&arch.name, epoch as u64, params)
                .save(&dir.join(format!("{tag}.ckpt")))?;
        }
        let measurements = ppp_measure(&arch, params, &source, cfg.scheme, &plan, pad_seed)?;
        for m in &measurements {
            rows.push(ChronoRow {
                epoch,
                report: ReportRow::from_measurement(&arch.name, cfg.scheme.name(), &tag, m),
            });
        }
        // Preserve partial results on later failures.
        if let Some(dir) = &cfg.out_dir {
            let mut buf = Vec::new();
            write_chrono_csv(rows, &mut buf).expect("vec write");
            std::fs::write(dir.join("chronological.csv"), &buf)
                .map_err(|e| Error::io(dir.display().to_string(), e))?;
        }
        Ok(())
    };

    train(
        &arch,
        &mut params,
        &data,
        cfg.scheme,
        &cfg.train,
        cfg.seed,
        0,
        |epoch, params| {
            if epoch == 0 || epoch % cfg.snapshot_every == 0 || epoch == cfg.train.epochs {
                snapshot(epoch, params, &mut rows)?;
            }
            Ok(())
        },
    )?;

    Ok((rows, plan))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg(scheme: PaddingScheme) -> ChronoConfig {
        ChronoConfig {
            task: ChronoTask::SyntheticClassify,
            arch: "mini-vgg".into(),
            scheme,
            epochs: 2,
            snapshot_every: 2,
            seed: 11,
            train: TrainOpts { epochs: 2, batch_size: 8, lr: 0.02, momentum: 0.9, weight_decay: 5e-4 },
            train_count: 16,
            measure_count: 2,
            measure_input: None,
            out_dir: None,
        }
    }

    #[test]
    fn epoch_zero_row_always_present() {
        let (rows, _) = run_chronological(&tiny_cfg(PaddingScheme::Zeros)).unwrap();
        assert!(rows.iter().any(|r| r.epoch == 0));
        assert!(rows.iter().any(|r| r.epoch == 2));
        // 4 capture layers per snapshot
        assert_eq!(rows.iter().filter(|r| r.epoch == 0).count(), 4);
    }

    #[test]
    fn scheme_none_rows_are_identically_zero() {
        let (rows, _) = run_chronological(&tiny_cfg(PaddingScheme::None)).unwrap();
        assert!(!rows.is_empty());
        for r in &rows {
            assert_eq!(r.report.snr_ppp, 0.0, "epoch {} layer {}", r.epoch, r.report.layer);
            assert_eq!(r.report.mae_ppp, 0.0);
        }
    }
}
