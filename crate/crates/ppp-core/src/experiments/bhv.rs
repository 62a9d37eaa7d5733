//! Border-handling test: a two-square relative-position classification task
//! with a deliberate location bias, plus the trajectory-consistency probe.
//!
//! Class 0 has the red square strictly left of the green square, class 1
//! the reverse. With the bias on, class-0 training samples live in the
//! upper half of the canvas and class-1 in the lower half; the "similar"
//! test keeps that bias, the "dissimilar" test swaps it. A model that truly
//! ignores absolute position scores the same on both.

use crate::arch::{bhv_cnn, ArchSpec};
use crate::error::{Error, Result};
use crate::exec::{predict, PadCtx};
use crate::experiments::train::{accuracy, train, Dataset, TrainOpts};
use crate::padding::{PadMode, PaddingScheme};
use crate::params::ParamSet;
use crate::rng::{Purpose, RngStream, SeqRng};
use crate::tensor::{Shape, Tensor};
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BhvConfig {
    pub canvas: usize,
    pub square: usize,
    /// Background gray level in [0, 1]; 0 is the classic black canvas.
    pub background: f32,
    pub location_bias: bool,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub seed: u64,
}

impl Default for BhvConfig {
    fn default() -> Self {
        BhvConfig {
            canvas: 32,
            square: 4,
            background: 0.0,
            location_bias: true,
            train_per_class: 1000,
            test_per_class: 250,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    SimilarTest,
    DissimilarTest,
}

impl Split {
    fn tag(self) -> u64 {
        match self {
            Split::Train => 0,
            Split::SimilarTest => 1,
            Split::DissimilarTest => 2,
        }
    }
}

/// Top-left corners (y, x) of the two squares.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SquarePair {
    pub red: (usize, usize),
    pub green: (usize, usize),
}

fn check_feasible(cfg: &BhvConfig) -> Result<()> {
    let half = cfg.canvas / 2;
    if cfg.square == 0 || half < cfg.square || cfg.canvas < 2 * cfg.square {
        return Err(Error::Config(format!(
            "bhv geometry infeasible: canvas {} square {}",
            cfg.canvas, cfg.square
        )));
    }
    Ok(())
}

/// Vertical placement range (inclusive) for a square's top row.
fn y_range(cfg: &BhvConfig, class: usize, split: Split) -> (usize, usize) {
    if !cfg.location_bias {
        return (0, cfg.canvas - cfg.square);
    }
    let upper = (0, cfg.canvas / 2 - cfg.square);
    let lower = (cfg.canvas / 2, cfg.canvas - cfg.square);
    let flipped = matches!(split, Split::DissimilarTest);
    match (class, flipped) {
        (0, false) | (1, true) => upper,
        _ => lower,
    }
}

fn sample_pair(cfg: &BhvConfig, class: usize, split: Split, rng: &mut SeqRng) -> SquarePair {
    let sq = cfg.square;
    let (y_lo, y_hi) = y_range(cfg, class, split);
    let y1 = y_lo + rng.index(y_hi - y_lo + 1);
    let y2 = y_lo + rng.index(y_hi - y_lo + 1);
    // Left square anywhere that leaves room; right square strictly clear of
    // it, so the rectangles can never overlap.
    let left_x = rng.index(cfg.canvas - 2 * sq + 1);
    let right_x = left_x + sq + rng.index(cfg.canvas - sq - (left_x + sq) + 1);
    match class {
        0 => SquarePair { red: (y1, left_x), green: (y2, right_x) },
        _ => SquarePair { red: (y1, right_x), green: (y2, left_x) },
    }
}

fn render(cfg: &BhvConfig, pair: &SquarePair) -> Tensor {
    let c = cfg.canvas;
    let mut img = Tensor::full(Shape::new(1, 3, c, c), cfg.background);
    let mut fill = |top: (usize, usize), channel: usize| {
        for y in top.0..top.0 + cfg.square {
            for x in top.1..top.1 + cfg.square {
                for ch in 0..3 {
                    *img.at_mut(0, ch, y, x) = if ch == channel { 1.0 } else { 0.0 };
                }
            }
        }
    };
    fill(pair.red, 0);
    fill(pair.green, 1);
    img
}

/// Generate a balanced labeled split. Also returns the square geometry for
/// oracle checks.
pub fn gen_bhv(cfg: &BhvConfig, split: Split) -> Result<(Dataset, Vec<SquarePair>)> {
    check_feasible(cfg)?;
    let per_class = match split {
        Split::Train => cfg.train_per_class,
        _ => cfg.test_per_class,
    };
    let n = per_class * 2;
    let stream = RngStream::new(cfg.seed, Purpose::BhvGeometry).derive(split.tag());
    let mut images = Tensor::zeros(Shape::new(n, 3, cfg.canvas, cfg.canvas));
    let mut labels = Vec::with_capacity(n);
    let mut pairs = Vec::with_capacity(n);
    let chw = 3 * cfg.canvas * cfg.canvas;
    for i in 0..n {
        let class = i % 2;
        let mut rng = SeqRng::new(stream.derive(i as u64));
        let pair = sample_pair(cfg, class, split, &mut rng);
        let img = render(cfg, &pair);
        images.data_mut()[i * chw..(i + 1) * chw].copy_from_slice(img.data());
        labels.push(class);
        pairs.push(pair);
    }
    Ok((Dataset { images, labels }, pairs))
}

/// Recover the label from pixel content: centroid of the red blob left of
/// the green blob's. Translation invariant by construction.
pub fn centroid_label(image: &Tensor, sample: usize) -> Option<usize> {
    let s = image.shape();
    let mut acc = [(0.0f64, 0usize); 2]; // (sum_x, count) for red, green
    for y in 0..s.h {
        for x in 0..s.w {
            let r = image.at(sample, 0, y, x);
            let g = image.at(sample, 1, y, x);
            let b = image.at(sample, 2, y, x);
            if r - g.max(b) > 0.5 {
                acc[0].0 += x as f64;
                acc[0].1 += 1;
            } else if g - r.max(b) > 0.5 {
                acc[1].0 += x as f64;
                acc[1].1 += 1;
            }
        }
    }
    if acc[0].1 == 0 || acc[1].1 == 0 {
        return None;
    }
    let red_cx = acc[0].0 / acc[0].1 as f64;
    let green_cx = acc[1].0 / acc[1].1 as f64;
    Some(if red_cx < green_cx { 0 } else { 1 })
}

/// One vertical trajectory: the squares keep their arrangement and slide
/// down one pixel per step until the lower square reaches the bottom.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub start: SquarePair,
    pub offsets: Vec<usize>,
    pub predictions: Vec<usize>,
}

impl Trajectory {
    pub fn inconsistent(&self) -> bool {
        self.predictions.iter().any(|&p| p != self.predictions[0])
    }
}

#[derive(Debug, Clone)]
pub struct InconsistencyReport {
    pub rate: f64,
    pub trajectories: Vec<Trajectory>,
}

/// Inconsistency rate of an arbitrary batch classifier over uniformly
/// sampled class-0 starts.
pub fn inconsistency_of(
    cfg: &BhvConfig,
    n_trajectories: usize,
    seed: u64,
    mut classify: impl FnMut(&Tensor) -> Result<Vec<usize>>,
) -> Result<InconsistencyReport> {
    check_feasible(cfg)?;
    let stream = RngStream::new(seed, Purpose::BhvGeometry).derive(0xF00D);
    let mut trajectories = Vec::with_capacity(n_trajectories);
    let mut flat: Vec<Tensor> = Vec::new();
    let mut spans = Vec::with_capacity(n_trajectories);
    for t in 0..n_trajectories {
        let mut rng = SeqRng::new(stream.derive(t as u64));
        let start = sample_pair(cfg, 0, Split::SimilarTest, &mut rng);
        let max_y = start.red.0.max(start.green.0);
        let max_off = cfg.canvas - cfg.square - max_y;
        let offsets: Vec<usize> = (0..=max_off).collect();
        let begin = flat.len();
        for &o in &offsets {
            let shifted = SquarePair {
                red: (start.red.0 + o, start.red.1),
                green: (start.green.0 + o, start.green.1),
            };
            flat.push(render(cfg, &shifted));
        }
        spans.push((begin, flat.len()));
        trajectories.push(Trajectory { start, offsets, predictions: Vec::new() });
    }

    // Batched prediction over all steps.
    let chw = 3 * cfg.canvas * cfg.canvas;
    let mut preds = Vec::with_capacity(flat.len());
    for chunk in flat.chunks(64) {
        let mut batch = Tensor::zeros(Shape::new(chunk.len(), 3, cfg.canvas, cfg.canvas));
        for (i, img) in chunk.iter().enumerate() {
            batch.data_mut()[i * chw..(i + 1) * chw].copy_from_slice(img.data());
        }
        preds.extend(classify(&batch)?);
    }
    for (traj, (b, e)) in trajectories.iter_mut().zip(spans) {
        traj.predictions = preds[b..e].to_vec();
    }
    let inconsistent = trajectories.iter().filter(|t| t.inconsistent()).count();
    Ok(InconsistencyReport {
        rate: 100.0 * inconsistent as f64 / n_trajectories as f64,
        trajectories,
    })
}

/// Inconsistency rate of a trained network.
pub fn inconsistency_rate(
    arch: &ArchSpec,
    params: &ParamSet<f32>,
    scheme: PaddingScheme,
    cfg: &BhvConfig,
    n_trajectories: usize,
    seed: u64,
    pad_seed: u64,
) -> Result<InconsistencyReport> {
    inconsistency_of(cfg, n_trajectories, seed, |batch| {
        predict(arch, params, batch, scheme, PadCtx::new(pad_seed))
    })
}

#[derive(Debug, Clone)]
pub struct BhvTrial {
    pub similar: f64,
    pub dissimilar: f64,
    pub inconsistency: f64,
    pub final_train_loss: f64,
}

#[derive(Debug, Clone)]
pub struct BhvOutcome {
    pub scheme: PaddingScheme,
    pub conv_mode: PadMode,
    pub config: BhvConfig,
    pub trials: Vec<BhvTrial>,
}

impl BhvOutcome {
    pub fn similar_mean_std(&self) -> (f64, f64) {
        super::stats::mean_std(&self.trials.iter().map(|t| t.similar).collect::<Vec<_>>())
    }
    pub fn dissimilar_mean_std(&self) -> (f64, f64) {
        super::stats::mean_std(&self.trials.iter().map(|t| t.dissimilar).collect::<Vec<_>>())
    }
    pub fn inconsistency_mean_std(&self) -> (f64, f64) {
        super::stats::mean_std(&self.trials.iter().map(|t| t.inconsistency).collect::<Vec<_>>())
    }
    pub fn diff(&self) -> f64 {
        self.dissimilar_mean_std().0 - self.similar_mean_std().0
    }
}

pub const DEFAULT_TRAJECTORIES: usize = 228;

/// Train fresh classifiers and score the similar/dissimilar splits plus the
/// trajectory inconsistency. Trials run in parallel on disjoint seed
/// streams.
pub fn run_bhv(
    scheme: PaddingScheme,
    conv_mode: PadMode,
    cfg: &BhvConfig,
    opts: &TrainOpts,
    trials: usize,
) -> Result<BhvOutcome> {
    if trials == 0 {
        return Err(Error::Config("at least one trial required".into()));
    }
    let base = bhv_cnn(conv_mode);
    let arch = super::arch_for_scheme(base, &scheme);
    let trial_stream = RngStream::new(cfg.seed, Purpose::TrialSeed);

    let results: Vec<Result<BhvTrial>> = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let tseed = trial_stream.bits(&[trial as u64]);
            let mut tcfg = *cfg;
            tcfg.seed = tseed;
            let (train_set, _) = gen_bhv(&tcfg, Split::Train)?;
            let (similar, _) = gen_bhv(&tcfg, Split::SimilarTest)?;
            let (dissimilar, _) = gen_bhv(&tcfg, Split::DissimilarTest)?;

            let mut params = ParamSet::<f32>::init(&arch, tseed ^ 0xA11CE)?;
            let losses =
                train(&arch, &mut params, &train_set, scheme, opts, tseed, trial, |_, _| Ok(()))?;

            let sim = accuracy(&arch, &params, &similar, scheme, tseed)?;
            let dis = accuracy(&arch, &params, &dissimilar, scheme, tseed)?;
            let inc = inconsistency_rate(
                &arch,
                &params,
                scheme,
                &tcfg,
                DEFAULT_TRAJECTORIES,
                tseed ^ 0x7247,
                tseed,
            )?;
            Ok(BhvTrial {
                similar: sim,
                dissimilar: dis,
                inconsistency: inc.rate,
                final_train_loss: losses.last().copied().unwrap_or(f64::NAN),
            })
        })
        .collect();

    let mut trials_out = Vec::with_capacity(trials);
    for r in results {
        trials_out.push(r?);
    }
    Ok(BhvOutcome { scheme, conv_mode, config: *cfg, trials: trials_out })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn black_background_is_exactly_zero() {
        let cfg = BhvConfig { train_per_class: 4, ..Default::default() };
        let (data, pairs) = gen_bhv(&cfg, Split::Train).unwrap();
        let img = data.images.sample(0);
        let pair = pairs[0];
        let inside = |y: usize, x: usize, p: (usize, usize)| {
            y >= p.0 && y < p.0 + cfg.square && x >= p.1 && x < p.1 + cfg.square
        };
        for y in 0..cfg.canvas {
            for x in 0..cfg.canvas {
                if !inside(y, x, pair.red) && !inside(y, x, pair.green) {
                    for c in 0..3 {
                        assert_eq!(img.at(0, c, y, x), 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn bias_keeps_class0_squares_in_upper_half() {
        let cfg = BhvConfig { train_per_class: 64, ..Default::default() };
        let (_, pairs) = gen_bhv(&cfg, Split::SimilarTest).unwrap();
        for (i, p) in pairs.iter().enumerate() {
            if i % 2 == 0 {
                assert!(p.red.0 + cfg.square <= cfg.canvas / 2, "sample {i}");
                assert!(p.green.0 + cfg.square <= cfg.canvas / 2, "sample {i}");
            } else {
                assert!(p.red.0 >= cfg.canvas / 2, "sample {i}");
                assert!(p.green.0 >= cfg.canvas / 2, "sample {i}");
            }
        }
    }

    #[test]
    fn dissimilar_swaps_halves() {
        let cfg = BhvConfig { test_per_class: 32, ..Default::default() };
        let (_, pairs) = gen_bhv(&cfg, Split::DissimilarTest).unwrap();
        for (i, p) in pairs.iter().enumerate() {
            if i % 2 == 0 {
                assert!(p.red.0 >= cfg.canvas / 2, "class0 sample {i} should be lower-half");
            } else {
                assert!(p.red.0 + cfg.square <= cfg.canvas / 2);
            }
        }
    }

    #[test]
    fn labels_agree_with_centroid_oracle() {
        for background in [0.0f32, 0.5] {
            let cfg = BhvConfig {
                train_per_class: 500,
                background,
                seed: 3,
                ..Default::default()
            };
            let (data, _) = gen_bhv(&cfg, Split::Train).unwrap();
            for i in 0..data.len() {
                let label = centroid_label(&data.images, i).expect("blobs found");
                assert_eq!(label, data.labels[i], "sample {i} bg {background}");
            }
        }
    }

    #[test]
    fn squares_never_overlap() {
        let cfg = BhvConfig { train_per_class: 512, seed: 9, ..Default::default() };
        let (_, pairs) = gen_bhv(&cfg, Split::Train).unwrap();
        for p in pairs {
            let (l, r) = if p.red.1 < p.green.1 { (p.red, p.green) } else { (p.green, p.red) };
            assert!(l.1 + cfg.square <= r.1);
        }
    }

    #[test]
    fn translation_invariant_oracle_has_zero_inconsistency() {
        let cfg = BhvConfig::default();
        let report = inconsistency_of(&cfg, 50, 4, |batch| {
            Ok((0..batch.shape().n)
                .map(|i| centroid_label(batch, i).expect("blobs"))
                .collect())
        })
        .unwrap();
        assert_eq!(report.rate, 0.0);
        // All trajectories start at class 0.
        for t in &report.trajectories {
            assert_eq!(t.predictions[0], 0);
        }
    }

    #[test]
    fn constant_classifier_has_zero_inconsistency() {
        let cfg = BhvConfig::default();
        let report =
            inconsistency_of(&cfg, 40, 5, |batch| Ok(vec![1; batch.shape().n])).unwrap();
        assert_eq!(report.rate, 0.0);
    }

    #[test]
    fn replay_oracle_matches_rate() {
        let cfg = BhvConfig::default();
        // A deliberately position-sensitive rule: class by vertical position
        // of the red blob.
        let report = inconsistency_of(&cfg, 30, 6, |batch| {
            let s = batch.shape();
            Ok((0..s.n)
                .map(|i| {
                    let mut top = s.h;
                    for y in 0..s.h {
                        for x in 0..s.w {
                            if batch.at(i, 0, y, x) > 0.9 && batch.at(i, 1, y, x) < 0.1 {
                                top = top.min(y);
                            }
                        }
                    }
                    usize::from(top >= s.h / 2)
                })
                .collect())
        })
        .unwrap();
        let replayed = report.trajectories.iter().filter(|t| t.inconsistent()).count();
        assert_eq!(report.rate, 100.0 * replayed as f64 / 30.0);
        // Trajectories cross the half boundary, so the rule flips on all of
        // them that start high enough.
        assert!(report.rate > 90.0);
    }

    #[test]
    fn infeasible_geometry_rejected() {
        let cfg = BhvConfig { canvas: 8, square: 5, ..Default::default() };
        assert!(gen_bhv(&cfg, Split::Train).is_err());
    }
}
