//! Pipeline hyperparameters and their `key = value` text form.

use crate::dataset::Side;
use crate::error::{Error, Result};
use crate::mask::MaskParams;
use crate::model::NetworkConfig;
use crate::volume::Dims;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerSettings {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    /// SGD momentum `μ`.
    pub momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        OptimizerSettings {
            kind: OptimizerKind::Adam,
            // at 1e-3 the default 8/2/3 proposal network saturates its sigmoid
            // within a few dozen steps and never recovers
            learning_rate: 3e-4,
            momentum: 0.9,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
        }
    }
}

/// How proposal-stage labels are brought down to `proposal_dims`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelDownsample {
    /// Trilinear resample, then `> 0.5`.
    Trilinear,
    Nearest,
}

/// Which map the localization histograms are built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LocalizeOn {
    /// The proposal thresholded at `binarize_threshold`.
    Binary,
    /// The raw probability map.
    Soft,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    /// Whole-volume resample target for the proposal stage, `[W, H, D]`.
    pub proposal_dims: Dims,
    pub crop_dims: Dims,
    pub mask: MaskParams,
    /// Localization threshold on histogram mass.
    pub epsilon: f64,
    pub localize_on: LocalizeOn,
    /// Architecture shared by both stages; its seed is replaced per stage.
    pub network: NetworkConfig,
    pub optimizer: OptimizerSettings,
    pub proposal_iterations: usize,
    pub segmentation_iterations: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub folds: usize,
    pub side: Side,
    /// Keep a checkpoint every this many steps; 0 keeps only the final model.
    pub checkpoint_interval: usize,
    /// Score the validation set every this many steps; 0 disables it.
    pub eval_interval: usize,
    pub label_downsample: LabelDownsample,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            proposal_dims: [32; 3],
            crop_dims: [32; 3],
            mask: MaskParams::default(),
            epsilon: 5.0,
            localize_on: LocalizeOn::Binary,
            network: NetworkConfig::default(),
            optimizer: OptimizerSettings::default(),
            proposal_iterations: 600,
            segmentation_iterations: 600,
            batch_size: 1,
            seed: 0,
            folds: 5,
            side: Side::Left,
            checkpoint_interval: 0,
            eval_interval: 0,
            label_downsample: LabelDownsample::Trilinear,
        }
    }
}

/// Parses `N` (cube) or `WxHxD`.
pub fn parse_dims(v: &str) -> Result<Dims> {
    let parts = v
        .split(['x', 'X', ','])
        .map(|p| p.trim().parse::<usize>().map_err(|e| Error::Parse(format!("dims {v:?}: {e}"))))
        .collect::<Result<Vec<_>>>()?;
    match parts[..] {
        [n] => Ok([n; 3]),
        [w, h, d] => Ok([w, h, d]),
        _ => Err(Error::Parse(format!("dims {v:?} must be N or WxHxD"))),
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse().map_err(|e| Error::Parse(format!("{key} = {v:?}: {e}")))
}

impl PipelineConfig {
    pub const KEYS: &'static [&'static str] = &[
        "proposal_dims",
        "crop_dims",
        "alpha",
        "beta",
        "binarize_threshold",
        "soft_mask",
        "epsilon",
        "localize_on",
        "levels",
        "base_channels",
        "convs_per_level",
        "optimizer",
        "learning_rate",
        "momentum",
        "beta1",
        "beta2",
        "adam_epsilon",
        "proposal_iterations",
        "segmentation_iterations",
        "batch_size",
        "seed",
        "folds",
        "side",
        "checkpoint_interval",
        "eval_interval",
        "label_downsample",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "proposal_dims" => self.proposal_dims = parse_dims(v)?,
            "crop_dims" => self.crop_dims = parse_dims(v)?,
            "alpha" => self.mask.alpha = parse(key, v)?,
            "beta" => self.mask.beta = parse(key, v)?,
            "binarize_threshold" => self.mask.binarize_threshold = parse(key, v)?,
            "soft_mask" => self.mask.soft = parse(key, v)?,
            "epsilon" => self.epsilon = parse(key, v)?,
            "localize_on" => {
                self.localize_on = match v {
                    "binary" => LocalizeOn::Binary,
                    "soft" => LocalizeOn::Soft,
                    _ => return Err(Error::Parse(format!("localize_on must be binary or soft, got {v:?}"))),
                }
            }
            "levels" => self.network.levels = parse(key, v)?,
            "base_channels" => self.network.base_channels = parse(key, v)?,
            "convs_per_level" => self.network.convs_per_level = parse(key, v)?,
            "optimizer" => {
                self.optimizer.kind = match v {
                    "adam" => OptimizerKind::Adam,
                    "sgd" => OptimizerKind::Sgd,
                    _ => return Err(Error::Parse(format!("optimizer must be adam or sgd, got {v:?}"))),
                }
            }
            "learning_rate" => self.optimizer.learning_rate = parse(key, v)?,
            "momentum" => self.optimizer.momentum = parse(key, v)?,
            "beta1" => self.optimizer.beta1 = parse(key, v)?,
            "beta2" => self.optimizer.beta2 = parse(key, v)?,
            "adam_epsilon" => self.optimizer.adam_epsilon = parse(key, v)?,
            "proposal_iterations" => self.proposal_iterations = parse(key, v)?,
            "segmentation_iterations" => self.segmentation_iterations = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "folds" => self.folds = parse(key, v)?,
            "side" => self.side = v.parse()?,
            "checkpoint_interval" => self.checkpoint_interval = parse(key, v)?,
            "eval_interval" => self.eval_interval = parse(key, v)?,
            "label_downsample" => {
                self.label_downsample = match v {
                    "trilinear" => LabelDownsample::Trilinear,
                    "nearest" => LabelDownsample::Nearest,
                    _ => return Err(Error::Parse(format!("label_downsample must be trilinear or nearest, got {v:?}"))),
                }
            }
            other => return Err(Error::Parse(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of `self`. Blank lines and `#`
    /// comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("line {}: expected key = value, got {line:?}", n + 1)))?;
            self.set(k, v)
                .map_err(|e| Error::Parse(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_text(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    pub fn to_text(&self) -> String {
        let dims = |d: Dims| format!("{}x{}x{}", d[0], d[1], d[2]);
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").expect("writing to a String");
        kv("proposal_dims", dims(self.proposal_dims));
        kv("crop_dims", dims(self.crop_dims));
        kv("alpha", self.mask.alpha.to_string());
        kv("beta", self.mask.beta.to_string());
        kv("binarize_threshold", self.mask.binarize_threshold.to_string());
        kv("soft_mask", self.mask.soft.to_string());
        kv("epsilon", self.epsilon.to_string());
        kv(
            "localize_on",
            match self.localize_on {
                LocalizeOn::Binary => "binary",
                LocalizeOn::Soft => "soft",
            }
            .into(),
        );
        kv("levels", self.network.levels.to_string());
        kv("base_channels", self.network.base_channels.to_string());
        kv("convs_per_level", self.network.convs_per_level.to_string());
        kv(
            "optimizer",
            match self.optimizer.kind {
                OptimizerKind::Adam => "adam",
                OptimizerKind::Sgd => "sgd",
            }
            .into(),
        );
        kv("learning_rate", self.optimizer.learning_rate.to_string());
        kv("momentum", self.optimizer.momentum.to_string());
        kv("beta1", self.optimizer.beta1.to_string());
        kv("beta2", self.optimizer.beta2.to_string());
        kv("adam_epsilon", self.optimizer.adam_epsilon.to_string());
        kv("proposal_iterations", self.proposal_iterations.to_string());
        kv("segmentation_iterations", self.segmentation_iterations.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("seed", self.seed.to_string());
        kv("folds", self.folds.to_string());
        kv("side", self.side.to_string());
        kv("checkpoint_interval", self.checkpoint_interval.to_string());
        kv("eval_interval", self.eval_interval.to_string());
        kv(
            "label_downsample",
            match self.label_downsample {
                LabelDownsample::Trilinear => "trilinear",
                LabelDownsample::Nearest => "nearest",
            }
            .into(),
        );
        s
    }

    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        self.mask.validate()?;
        self.network
            .check_input(self.proposal_dims)
            .map_err(|e| Error::InvalidConfig(format!("proposal_dims: {e}")))?;
        self.network
            .check_input(self.crop_dims)
            .map_err(|e| Error::InvalidConfig(format!("crop_dims: {e}")))?;
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return bad(format!("epsilon must be finite and >= 0, got {}", self.epsilon));
        }
        let o = &self.optimizer;
        if !(o.learning_rate.is_finite() && o.learning_rate > 0.0) {
            return bad(format!("learning_rate must be positive, got {}", o.learning_rate));
        }
        for (name, v) in [("momentum", o.momentum), ("beta1", o.beta1), ("beta2", o.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1), got {v}"));
            }
        }
        if !(o.adam_epsilon.is_finite() && o.adam_epsilon > 0.0) {
            return bad(format!("adam_epsilon must be positive, got {}", o.adam_epsilon));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.folds == 0 {
            return bad("folds must be at least 1".into());
        }
        Ok(())
    }
}
