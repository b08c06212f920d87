//! Two-stage training and inference, the mask-weight sweep, the checkpoint
//! pairing ablation and k-fold cross-validation.
//!
//! Stage one (proposal) sees the whole volume resampled to `proposal_dims`.
//! Its probability map is upsampled back to full resolution, localized, and
//! used to cut and enhance a `crop_dims` window that stage two (segmentation)
//! labels at full resolution.

mod config;
mod optim;

pub use config::{parse_dims, LabelDownsample, LocalizeOn, OptimizerKind, OptimizerSettings, PipelineConfig};
pub use optim::Optimizer;

use crate::dataset::{split_fold, Manifest, Sample, Side};
use crate::dice::{batch_dice_loss_and_grad, compute_metrics, dice_score, MetricReport};
use crate::error::{Error, Result};
use crate::localize::{axis_histograms, crop, crop_labels, localize, paste_back_labels, CropWindow, Localization};
use crate::mask::{binarize, enhance_crop};
use crate::model::{build_network, FcnModel, NetworkConfig};
use crate::tensor::{resample_volume, Tensor};
use crate::volume::{Dims, LabelVolume, Volume};
use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::fmt::Write as _;
use std::time::Instant;

/// Network outputs above this are foreground.
pub const OUTPUT_THRESHOLD: f32 = 0.5;

/// Seed streams under the master seed.
pub const PROPOSAL_INIT: u64 = 1;
pub const SEGMENTATION_INIT: u64 = 2;
pub const PROPOSAL_ORDER: u64 = 3;
pub const SEGMENTATION_ORDER: u64 = 4;
pub const CROSSVAL_JOB: u64 = 1 << 16;

/// Independent 64-bit seed for `stream` under the master seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.next_u64()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    /// 1-based optimizer step.
    pub iteration: usize,
    /// Dice loss of this step's forward pass.
    pub loss: f64,
    pub val_dsc: Option<f64>,
    /// Wall-clock time of the step (excluding validation).
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainRecord {
    pub rows: Vec<IterationRecord>,
}

impl TrainRecord {
    pub const CSV_HEADER: &'static str = "iteration,loss,val_dsc";

    /// `iteration,loss,val_dsc` rows; `val_dsc` is blank on steps without
    /// validation. Timing is left out so reruns compare byte for byte.
    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::CSV_HEADER);
        for r in &self.rows {
            let dsc = r.val_dsc.map(|d| d.to_string()).unwrap_or_default();
            writeln!(s, "{},{},{dsc}", r.iteration, r.loss).expect("writing to a String");
        }
        s
    }

    /// First step whose validation DSC is at least `dsc`.
    pub fn first_reaching(&self, dsc: f64) -> Option<usize> {
        self.rows
            .iter()
            .find(|r| r.val_dsc.is_some_and(|d| d >= dsc))
            .map(|r| r.iteration)
    }

    pub fn final_val_dsc(&self) -> Option<f64> {
        self.rows.iter().rev().find_map(|r| r.val_dsc)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub model: FcnModel,
    /// `(step, model)` every `checkpoint_interval` steps.
    pub checkpoints: Vec<(usize, FcnModel)>,
    pub record: TrainRecord,
}

fn stage_network(config: &PipelineConfig, stream: u64) -> NetworkConfig {
    NetworkConfig {
        input_channels: 1,
        output_channels: 1,
        seed: derive_seed(config.seed, stream),
        ..config.network
    }
}

fn proposal_input(volume: &Volume, config: &PipelineConfig) -> Result<Tensor> {
    Ok(Tensor::from_volume(&resample_volume(volume, config.proposal_dims)?))
}

/// Nearest-neighbour pick on the same align-corners grid as the trilinear
/// resampler.
fn nearest_labels(label: &LabelVolume, target: Dims) -> Result<LabelVolume> {
    let src = label.dims();
    let pick = |i: usize, a: usize| {
        let (s, t) = (src[a], target[a]);
        if t == 1 {
            (s - 1) / 2
        } else {
            ((i * (s - 1)) as f64 / (t - 1) as f64).round() as usize
        }
    };
    LabelVolume::from_fn(target, |x, y, z| label.get(pick(x, 0), pick(y, 1), pick(z, 2)) == 1)
}

/// Ground truth brought down to `proposal_dims`.
pub fn proposal_target(label: &LabelVolume, config: &PipelineConfig) -> Result<LabelVolume> {
    match config.label_downsample {
        LabelDownsample::Trilinear => Ok(binarize(
            &resample_volume(&label.to_volume(), config.proposal_dims)?,
            0.5,
        )),
        LabelDownsample::Nearest => nearest_labels(label, config.proposal_dims),
    }
}

/// Proposal probability map at the volume's own resolution.
pub fn infer_proposal(model: &FcnModel, volume: &Volume, proposal_dims: Dims) -> Result<Volume> {
    let x = Tensor::from_volume(&resample_volume(volume, proposal_dims)?);
    let low = model.predict(&x)?.to_volume()?;
    resample_volume(&low, volume.dims())?.with_spacing(volume.spacing())
}

pub fn localize_proposal(prob: &Volume, config: &PipelineConfig) -> Result<Localization> {
    let hist = match config.localize_on {
        LocalizeOn::Binary => axis_histograms(&binarize(prob, config.mask.binarize_threshold).to_volume()),
        LocalizeOn::Soft => axis_histograms(prob),
    };
    localize(&hist, config.epsilon)
}

/// Localization and enhanced crop for one sample, ready for stage two.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationCase {
    pub localization: Localization,
    pub window: CropWindow,
    pub input: Volume,
    /// Ground truth cut with the same window.
    pub label: LabelVolume,
    /// Localization came from the ground truth because the proposal was empty.
    pub fallback: bool,
}

/// Runs the proposal stage on `sample` and builds its segmentation input.
/// With `allow_fallback`, an empty proposal is replaced by the center of the
/// ground-truth bounding box.
pub fn segmentation_case(
    proposal: &FcnModel,
    sample: &Sample,
    config: &PipelineConfig,
    allow_fallback: bool,
) -> Result<SegmentationCase> {
    let prob = infer_proposal(proposal, &sample.volume, config.proposal_dims)?;
    let (localization, fallback) = match localize_proposal(&prob, config) {
        Ok(loc) => (loc, false),
        Err(Error::EmptyProposal { axis }) if allow_fallback => {
            let bounds = sample.label.bounding_box().ok_or_else(|| {
                Error::Data(format!("{}: empty proposal and empty ground truth", sample.id))
            })?;
            log::warn!(
                "{}: empty proposal on axis {axis}, using the ground-truth center",
                sample.id
            );
            (Localization::from_bounds(bounds), true)
        }
        Err(e) => return Err(e),
    };
    let (input, window) = enhance_crop(&prob, &sample.volume, &localization, config.crop_dims, &config.mask)?;
    Ok(SegmentationCase {
        localization,
        window,
        input,
        label: crop_labels(&sample.label, &window)?,
        fallback,
    })
}

/// Segmentation input without any mask: the plain crop of the original.
pub fn mask_free_input(volume: &Volume, localization: &Localization, crop_dims: Dims) -> Result<Volume> {
    Ok(crop(volume, localization.center, crop_dims)?.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoStageResult {
    pub labels: LabelVolume,
    pub localization: Localization,
    pub window: CropWindow,
}

/// Full inference chain. An empty proposal is an error here.
pub fn infer_two_stage(
    proposal: &FcnModel,
    segmentation: &FcnModel,
    volume: &Volume,
    config: &PipelineConfig,
) -> Result<TwoStageResult> {
    let prob = infer_proposal(proposal, volume, config.proposal_dims)?;
    let localization = localize_proposal(&prob, config)?;
    let (input, window) = enhance_crop(&prob, volume, &localization, config.crop_dims, &config.mask)?;
    let labels = segment_crop(segmentation, &input, &window)?;
    Ok(TwoStageResult {
        labels,
        localization,
        window,
    })
}

fn segment_crop(segmentation: &FcnModel, input: &Volume, window: &CropWindow) -> Result<LabelVolume> {
    let out = segmentation.predict(&Tensor::from_volume(input))?.to_volume()?;
    paste_back_labels(&binarize(&out, OUTPUT_THRESHOLD), window)
}

/// Full-volume DSC of the binarized proposal map alone.
pub fn proposal_dsc(proposal: &FcnModel, sample: &Sample, config: &PipelineConfig) -> Result<f64> {
    let prob = infer_proposal(proposal, &sample.volume, config.proposal_dims)?;
    dice_score(&binarize(&prob, OUTPUT_THRESHOLD), &sample.label)
}

fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

struct Batches {
    n: usize,
    queue: Vec<usize>,
    rng: ChaCha8Rng,
}

impl Batches {
    fn new(n: usize, seed: u64) -> Self {
        Batches {
            n,
            queue: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Next sample index; each epoch visits every sample once in shuffled order.
    fn next_index(&mut self) -> usize {
        if self.queue.is_empty() {
            self.queue = (0..self.n).rev().collect();
            self.queue.shuffle(&mut self.rng);
        }
        self.queue.pop().expect("refilled above")
    }
}

fn fit(
    mut model: FcnModel,
    inputs: &[Tensor],
    targets: &[Tensor],
    iterations: usize,
    order_seed: u64,
    config: &PipelineConfig,
    mut validate: Option<&mut dyn FnMut(&FcnModel) -> Result<f64>>,
) -> Result<TrainOutput> {
    let mut opt = Optimizer::new(config.optimizer);
    let mut batches = Batches::new(inputs.len(), order_seed);
    let mut record = TrainRecord::default();
    let mut checkpoints = Vec::new();
    for iteration in 1..=iterations {
        let t0 = Instant::now();
        let idx: Vec<usize> = (0..config.batch_size).map(|_| batches.next_index()).collect();
        let (x, t) = if let [i] = idx[..] {
            (inputs[i].clone(), targets[i].clone())
        } else {
            let pick = |src: &[Tensor]| idx.iter().map(|&i| src[i].clone()).collect::<Vec<_>>();
            (Tensor::stack_batch(&pick(inputs))?, Tensor::stack_batch(&pick(targets))?)
        };
        let y = model.forward(&x, true)?;
        let (loss, grad) = batch_dice_loss_and_grad(&y, &t)?;
        if !loss.is_finite() {
            return Err(Error::Divergence { iteration });
        }
        model.backward(&grad)?;
        opt.step(model.params_mut())?;
        let seconds = t0.elapsed().as_secs_f64();

        let due = config.eval_interval > 0 && (iteration % config.eval_interval == 0 || iteration == iterations);
        let val_dsc = match validate.as_mut() {
            Some(f) if due => Some(f(&model)?),
            _ => None,
        };
        if let Some(d) = val_dsc {
            log::debug!("step {iteration}: loss {loss:.5}, val dsc {d:.4}");
        }
        record.rows.push(IterationRecord {
            iteration,
            loss,
            val_dsc,
            seconds,
        });
        if config.checkpoint_interval > 0 && iteration % config.checkpoint_interval == 0 {
            checkpoints.push((iteration, without_grads(&model)));
        }
    }
    Ok(TrainOutput {
        model: without_grads(&model),
        checkpoints,
        record,
    })
}

fn without_grads(model: &FcnModel) -> FcnModel {
    let mut m = model.clone();
    for p in m.params_mut() {
        p.value.clear_grad();
    }
    m
}

/// Trains the proposal network on whole volumes resampled to `proposal_dims`.
/// Validation DSC (if enabled) is the full-resolution proposal-alone DSC
/// averaged over `val`.
pub fn train_proposal(train: &[Sample], val: &[Sample], config: &PipelineConfig) -> Result<TrainOutput> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Data("no training samples".into()));
    }
    let model = build_network(stage_network(config, PROPOSAL_INIT))?;
    let mut inputs = Vec::with_capacity(train.len());
    let mut targets = Vec::with_capacity(train.len());
    for s in train {
        inputs.push(proposal_input(&s.volume, config)?);
        targets.push(Tensor::from_volume(&proposal_target(&s.label, config)?.to_volume()));
    }
    let mut validate = |m: &FcnModel| -> Result<f64> {
        Ok(mean(val.iter().map(|s| proposal_dsc(m, s, config)).collect::<Result<Vec<_>>>()?))
    };
    let validate: Option<&mut dyn FnMut(&FcnModel) -> Result<f64>> =
        if val.is_empty() { None } else { Some(&mut validate) };
    fit(
        model,
        &inputs,
        &targets,
        config.proposal_iterations,
        derive_seed(config.seed, PROPOSAL_ORDER),
        config,
        validate,
    )
}

/// Trains the segmentation network on enhanced crops produced by the fixed
/// `proposal` model. Validation DSC (if enabled) is the full-volume two-stage
/// DSC averaged over `val`; a validation sample with an empty proposal scores 0.
pub fn train_segmentation(
    train: &[Sample],
    val: &[Sample],
    proposal: &FcnModel,
    config: &PipelineConfig,
) -> Result<TrainOutput> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Data("no training samples".into()));
    }
    let model = build_network(stage_network(config, SEGMENTATION_INIT))?;
    let mut inputs = Vec::with_capacity(train.len());
    let mut targets = Vec::with_capacity(train.len());
    for s in train {
        let case = segmentation_case(proposal, s, config, true)?;
        inputs.push(Tensor::from_volume(&case.input));
        targets.push(Tensor::from_volume(&case.label.to_volume()));
    }
    let val_cases = val
        .iter()
        .map(|s| match segmentation_case(proposal, s, config, false) {
            Ok(c) => Ok(Some(c)),
            Err(Error::EmptyProposal { .. }) => Ok(None),
            Err(e) => Err(e),
        })
        .collect::<Result<Vec<_>>>()?;
    let mut validate = |m: &FcnModel| -> Result<f64> {
        let mut scores = Vec::with_capacity(val.len());
        for (s, case) in val.iter().zip(&val_cases) {
            scores.push(match case {
                Some(c) => dice_score(&segment_crop(m, &c.input, &c.window)?, &s.label)?,
                None => 0.0,
            });
        }
        Ok(mean(scores))
    };
    let validate: Option<&mut dyn FnMut(&FcnModel) -> Result<f64>> =
        if val.is_empty() { None } else { Some(&mut validate) };
    fit(
        model,
        &inputs,
        &targets,
        config.segmentation_iterations,
        derive_seed(config.seed, SEGMENTATION_ORDER),
        config,
        validate,
    )
}

/// Two-stage metrics of one sample. Failures (empty proposal, empty output)
/// score zero and keep their reason.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleEval {
    pub id: String,
    pub metrics: MetricReport,
    pub failure: Option<String>,
}

pub fn evaluate_sample(
    proposal: &FcnModel,
    segmentation: &FcnModel,
    sample: &Sample,
    config: &PipelineConfig,
) -> Result<SampleEval> {
    let outcome = infer_two_stage(proposal, segmentation, &sample.volume, config)
        .and_then(|r| compute_metrics(&r.labels, &sample.label));
    let (metrics, failure) = match outcome {
        Ok(m) => (m, None),
        Err(e @ (Error::EmptyProposal { .. } | Error::EmptySegmentation)) => {
            log::warn!("{}: {e}; scored as zero", sample.id);
            (MetricReport::zero(), Some(e.to_string()))
        }
        Err(e) => return Err(e),
    };
    Ok(SampleEval {
        id: sample.id.clone(),
        metrics,
        failure,
    })
}

pub fn evaluate(
    proposal: &FcnModel,
    segmentation: &FcnModel,
    samples: &[Sample],
    config: &PipelineConfig,
) -> Result<Vec<SampleEval>> {
    samples
        .iter()
        .map(|s| evaluate_sample(proposal, segmentation, s, config))
        .collect()
}

#[derive(Debug, Clone)]
pub struct SweepRun {
    pub alpha: f32,
    pub output: TrainOutput,
}

/// Trains one segmentation network per mask weight, all from the same seeds.
/// Runs are independent jobs and may execute in parallel.
pub fn alpha_sweep(
    train: &[Sample],
    val: &[Sample],
    proposal: &FcnModel,
    alphas: &[f32],
    config: &PipelineConfig,
) -> Result<Vec<SweepRun>> {
    alphas
        .par_iter()
        .map(|&alpha| {
            let mut c = config.clone();
            c.mask.alpha = alpha;
            Ok(SweepRun {
                alpha,
                output: train_segmentation(train, val, proposal, &c)?,
            })
        })
        .collect()
}

pub const DEFAULT_ALPHAS: [f32; 4] = [0.0, 0.1, 0.3, 1.0];

/// Row `i` holds proposal checkpoint `i`'s standalone DSC followed by the
/// two-stage DSC with every segmentation checkpoint, each averaged over `val`.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationGrid {
    pub matrix: Vec<Vec<f64>>,
}

impl AblationGrid {
    pub fn to_csv(&self, proposal_labels: &[String], segmentation_labels: &[String]) -> String {
        let mut s = String::from("proposal,alone");
        for l in segmentation_labels {
            write!(s, ",{l}").expect("writing to a String");
        }
        s.push('\n');
        for (label, row) in proposal_labels.iter().zip(&self.matrix) {
            s.push_str(label);
            for v in row {
                write!(s, ",{v:.6}").expect("writing to a String");
            }
            s.push('\n');
        }
        s
    }
}

pub fn ablation_grid(
    proposals: &[FcnModel],
    segmentations: &[FcnModel],
    val: &[Sample],
    config: &PipelineConfig,
) -> Result<AblationGrid> {
    if val.is_empty() {
        return Err(Error::Data("ablation needs validation samples".into()));
    }
    let matrix = proposals
        .par_iter()
        .map(|p| {
            let mut row = vec![mean(val.iter().map(|s| proposal_dsc(p, s, config)).collect::<Result<Vec<_>>>()?)];
            for seg in segmentations {
                let evals = evaluate(p, seg, val, config)?;
                row.push(mean(evals.iter().map(|e| e.metrics.dsc)));
            }
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AblationGrid { matrix })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldResult {
    pub side: Side,
    pub fold: usize,
    pub samples: Vec<SampleEval>,
    pub mean: MetricReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossValReport {
    pub folds: Vec<FoldResult>,
}

impl CrossValReport {
    /// Mean of the per-fold means for `side`.
    pub fn side_mean(&self, side: Side) -> Option<MetricReport> {
        let means: Vec<MetricReport> = self.folds.iter().filter(|f| f.side == side).map(|f| f.mean).collect();
        MetricReport::mean(&means)
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("side,fold,{}\n", MetricReport::CSV_HEADER);
        for f in &self.folds {
            writeln!(s, "{},{},{}", f.side, f.fold, f.mean.to_csv_row()).expect("writing to a String");
        }
        for side in Side::BOTH {
            if let Some(m) = self.side_mean(side) {
                writeln!(s, "{side},mean,{}", m.to_csv_row()).expect("writing to a String");
            }
        }
        s
    }
}

/// Trains both stages on the complement of every fold and evaluates on the
/// fold, independently for each side. Fold jobs run in parallel with
/// per-job seeds.
pub fn cross_validate(manifest: &Manifest, config: &PipelineConfig) -> Result<CrossValReport> {
    config.validate()?;
    let folds = manifest.fold_count();
    if folds < 2 {
        return Err(Error::Data(format!("cross-validation needs at least 2 folds, manifest has {folds}")));
    }
    let mut by_side = Vec::new();
    for side in Side::BOTH {
        by_side.push((side, manifest.load(side)?));
    }
    let jobs: Vec<(usize, Side, usize)> = by_side
        .iter()
        .enumerate()
        .flat_map(|(si, (side, _))| (0..folds).map(move |f| (si, *side, f)))
        .collect();
    let results = jobs
        .par_iter()
        .map(|&(si, side, fold)| {
            let (train, val) = split_fold(&by_side[si].1, fold);
            if val.is_empty() || train.is_empty() {
                return Err(Error::Data(format!("fold {fold} leaves an empty split")));
            }
            let mut c = config.clone();
            c.side = side;
            c.seed = derive_seed(config.seed, CROSSVAL_JOB + (fold as u64) * 2 + si as u64);
            log::info!("{side} fold {fold}: training on {} samples", train.len());
            let proposal = train_proposal(&train, &[], &c)?.model;
            let segmentation = train_segmentation(&train, &[], &proposal, &c)?.model;
            let samples = evaluate(&proposal, &segmentation, &val, &c)?;
            let metrics: Vec<MetricReport> = samples.iter().map(|e| e.metrics).collect();
            Ok(FoldResult {
                side,
                fold,
                mean: MetricReport::mean(&metrics).expect("non-empty fold"),
                samples,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CrossValReport { folds: results })
}
