//! Encoder-decoder FCN shared by the proposal and segmentation stages.
//!
//! Encoder level `ℓ` runs `convs_per_level` 3³ conv+ReLU blocks at
//! `base·2^ℓ` channels, then a 2³ stride-2 conv (+ReLU) that halves the extent
//! and doubles the channels. Each decoder level upsamples with a 2³ stride-2
//! deconv (+ReLU) that halves the channels, concatenates the matching encoder
//! feature map, and runs `convs_per_level` conv+ReLU blocks. A 3³ conv head
//! with a sigmoid produces the probability map.

mod checkpoint;

pub use checkpoint::{
    checkpoint_from_bytes, checkpoint_to_bytes, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};

use crate::error::{Error, Result};
use crate::tensor::conv::conv3d_backward_impl;
use crate::tensor::{
    activation, activation_backward, concat_channels, conv3d, deconv3d, deconv3d_backward,
    split_channels, Activation, Real, Tensor,
};
use crate::volume::Dims;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetworkConfig {
    pub levels: usize,
    pub base_channels: usize,
    pub convs_per_level: usize,
    pub input_channels: usize,
    pub output_channels: usize,
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            levels: 3,
            base_channels: 8,
            convs_per_level: 2,
            input_channels: 1,
            output_channels: 1,
            seed: 0,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("levels", self.levels),
            ("base_channels", self.base_channels),
            ("convs_per_level", self.convs_per_level),
            ("input_channels", self.input_channels),
            ("output_channels", self.output_channels),
        ];
        for (name, v) in fields {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be at least 1")));
            }
        }
        if self.levels > 16 {
            return Err(Error::InvalidConfig(format!("levels = {} is absurd", self.levels)));
        }
        Ok(())
    }

    /// Channel count of encoder level `level`.
    pub fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    /// Extent multiple every spatial input dim must satisfy.
    pub fn divisor(&self) -> usize {
        1 << self.levels
    }

    /// Checks that spatial dims `(W, H, D)` survive `levels` halvings.
    pub fn check_input(&self, dims: Dims) -> Result<()> {
        self.validate()?;
        let q = self.divisor();
        if dims.iter().any(|&e| e == 0 || e % q != 0) {
            return Err(Error::InvalidConfig(format!(
                "input dims {dims:?} are not divisible by 2^{} = {q}",
                self.levels
            )));
        }
        Ok(())
    }

    /// Layer list in forward execution order.
    pub fn layers(&self) -> Vec<LayerSpec> {
        let mut layers = Vec::new();
        let conv = |name: String, cin, cout| LayerSpec {
            name,
            kind: LayerKind::Conv,
            cin,
            cout,
        };
        for l in 0..self.levels {
            let c = self.channels(l);
            for i in 0..self.convs_per_level {
                let cin = match (l, i) {
                    (0, 0) => self.input_channels,
                    _ => c,
                };
                layers.push(conv(format!("enc{l}.conv{i}"), cin, c));
            }
            layers.push(LayerSpec {
                name: format!("enc{l}.down"),
                kind: LayerKind::Down,
                cin: c,
                cout: 2 * c,
            });
        }
        for l in (0..self.levels).rev() {
            let c = self.channels(l);
            layers.push(LayerSpec {
                name: format!("dec{l}.up"),
                kind: LayerKind::Up,
                cin: 2 * c,
                cout: c,
            });
            for i in 0..self.convs_per_level {
                let cin = if i == 0 { 2 * c } else { c };
                layers.push(conv(format!("dec{l}.conv{i}"), cin, c));
            }
        }
        layers.push(LayerSpec {
            name: "head".into(),
            kind: LayerKind::Head,
            cin: self.base_channels,
            cout: self.output_channels,
        });
        layers
    }

    /// Total scalar parameter count (weights and biases).
    pub fn parameter_count(&self) -> usize {
        self.layers()
            .iter()
            .map(|l| l.weight_shape().iter().product::<usize>() + l.cout)
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    /// 3³ stride-1 conv, padding 1, followed by ReLU.
    Conv,
    /// 2³ stride-2 conv followed by ReLU.
    Down,
    /// 2³ stride-2 deconv followed by ReLU.
    Up,
    /// 3³ stride-1 conv, padding 1, followed by a sigmoid.
    Head,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    pub cin: usize,
    pub cout: usize,
}

impl LayerSpec {
    pub fn weight_shape(&self) -> Vec<usize> {
        match self.kind {
            LayerKind::Conv | LayerKind::Head => vec![self.cout, self.cin, 3, 3, 3],
            LayerKind::Down => vec![self.cout, self.cin, 2, 2, 2],
            LayerKind::Up => vec![self.cin, self.cout, 2, 2, 2],
        }
    }

    fn fan_in(&self) -> usize {
        match self.kind {
            LayerKind::Conv | LayerKind::Head => self.cin * 27,
            LayerKind::Down => self.cin * 8,
            // each deconv output voxel sees one tap from every input channel
            LayerKind::Up => self.cin,
        }
    }

    fn activation(&self) -> Activation {
        match self.kind {
            LayerKind::Head => Activation::Sigmoid,
            _ => Activation::Relu,
        }
    }

    fn apply<T: Real>(&self, x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        let pre = match self.kind {
            LayerKind::Conv | LayerKind::Head => conv3d(x, w, b, 1, 1)?,
            LayerKind::Down => conv3d(x, w, b, 2, 0)?,
            LayerKind::Up => deconv3d(x, w, b)?,
        };
        Ok(activation(&pre, self.activation()))
    }
}

/// A named trainable tensor; its gradient lives in the tensor's grad buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T: Real = f32> {
    pub name: String,
    pub value: Tensor<T>,
}

/// Activations kept by a recording forward pass: the input and the
/// post-activation output of every layer.
#[derive(Debug, Clone)]
struct Recording<T: Real> {
    inputs: Vec<Tensor<T>>,
    outputs: Vec<Tensor<T>>,
}

#[derive(Debug, Clone)]
pub struct FcnModel<T: Real = f32> {
    config: NetworkConfig,
    layers: Vec<LayerSpec>,
    params: Vec<Param<T>>,
    recording: Option<Recording<T>>,
}

/// Builds a network with He-scaled Gaussian weights (`std = sqrt(2/fan_in)`)
/// and zero biases, drawn from a ChaCha8 stream seeded by `config.seed`.
pub fn build_network<T: Real>(config: NetworkConfig) -> Result<FcnModel<T>> {
    config.validate()?;
    let layers = config.layers();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = Vec::with_capacity(2 * layers.len());
    for layer in &layers {
        let normal = Normal::new(0.0, (2.0 / layer.fan_in() as f64).sqrt())
            .map_err(|e| Error::InvalidConfig(e.to_string()))?;
        let shape = layer.weight_shape();
        let n = shape.iter().product();
        let w = (0..n).map(|_| T::from_f64(normal.sample(&mut rng))).collect();
        params.push(Param {
            name: format!("{}.weight", layer.name),
            value: Tensor::new(shape, w)?,
        });
        params.push(Param {
            name: format!("{}.bias", layer.name),
            value: Tensor::zeros(vec![layer.cout])?,
        });
    }
    Ok(FcnModel {
        config,
        layers,
        params,
        recording: None,
    })
}

impl<T: Real> FcnModel<T> {
    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Overwrites every parameter with `value` (used to build constant-output
    /// reference models).
    pub fn fill_parameters(&mut self, value: T) {
        for p in &mut self.params {
            p.value.data_mut().iter_mut().for_each(|v| *v = value);
        }
    }

    /// Replaces parameter values in order, checking names and shapes.
    pub fn load_parameters(&mut self, params: Vec<Param<T>>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::ShapeMismatch(format!(
                "model has {} parameters, got {}",
                self.params.len(),
                params.len()
            )));
        }
        for (mine, theirs) in self.params.iter().zip(&params) {
            if mine.name != theirs.name || mine.value.shape() != theirs.value.shape() {
                return Err(Error::ShapeMismatch(format!(
                    "parameter {} {:?} does not match {} {:?}",
                    mine.name,
                    mine.value.shape(),
                    theirs.name,
                    theirs.value.shape()
                )));
            }
        }
        self.params = params;
        self.recording = None;
        Ok(())
    }

    /// Same network in another storage precision.
    pub fn cast<U: Real>(&self) -> FcnModel<U> {
        FcnModel {
            config: self.config,
            layers: self.layers.clone(),
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.cast(),
                })
                .collect(),
            recording: None,
        }
    }

    fn check_input(&self, input: &Tensor<T>) -> Result<()> {
        let [_, c, d, h, w] = input.dims5()?;
        if c != self.config.input_channels {
            return Err(Error::ShapeMismatch(format!(
                "network expects {} input channels, got {c}",
                self.config.input_channels
            )));
        }
        self.config
            .check_input([w, h, d])
            .map_err(|e| Error::ShapeMismatch(e.to_string()))
    }

    fn weights(&self, layer: usize) -> (&Tensor<T>, &Tensor<T>) {
        (&self.params[2 * layer].value, &self.params[2 * layer + 1].value)
    }

    fn run(&self, input: &Tensor<T>, record: bool) -> Result<(Tensor<T>, Option<Recording<T>>)> {
        self.check_input(input)?;
        let cfg = &self.config;
        let mut rec = Recording {
            inputs: Vec::new(),
            outputs: Vec::new(),
        };
        let mut skips: Vec<Tensor<T>> = Vec::with_capacity(cfg.levels);
        let mut x = input.clone();
        let mut li = 0;
        let step = |x: Tensor<T>, li: &mut usize, rec: &mut Recording<T>| -> Result<Tensor<T>> {
            let (w, b) = self.weights(*li);
            let y = self.layers[*li].apply(&x, w, b)?;
            if record {
                rec.inputs.push(x);
                rec.outputs.push(y.clone());
            }
            *li += 1;
            Ok(y)
        };
        for _ in 0..cfg.levels {
            for _ in 0..cfg.convs_per_level {
                x = step(x, &mut li, &mut rec)?;
            }
            skips.push(x.clone());
            x = step(x, &mut li, &mut rec)?;
        }
        for _ in (0..cfg.levels).rev() {
            x = step(x, &mut li, &mut rec)?;
            x = concat_channels(&x, &skips.pop().expect("one skip per level"))?;
            for _ in 0..cfg.convs_per_level {
                x = step(x, &mut li, &mut rec)?;
            }
        }
        x = step(x, &mut li, &mut rec)?;
        debug_assert_eq!(li, self.layers.len());
        debug_assert!(x.all_finite());
        Ok((x, record.then_some(rec)))
    }

    /// Runs the network on an `N×C×D×H×W` batch; output has the input's
    /// spatial extents and values strictly in (0, 1). With `record`, the
    /// activations needed by [`FcnModel::backward`] are kept.
    pub fn forward(&mut self, input: &Tensor<T>, record: bool) -> Result<Tensor<T>> {
        let (y, rec) = self.run(input, record)?;
        self.recording = rec;
        Ok(y)
    }

    /// Inference-only forward pass.
    pub fn predict(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.run(input, false)?.0)
    }

    /// Back-propagates `grad_output` (dL/d output) through the recorded pass
    /// and stores each parameter's gradient in its grad buffer. The recording
    /// is consumed.
    pub fn backward(&mut self, grad_output: &Tensor<T>) -> Result<()> {
        let rec = self
            .recording
            .take()
            .ok_or_else(|| Error::State("backward called without a recorded forward pass".into()))?;
        let cfg = self.config;
        let last = self.layers.len() - 1;
        if grad_output.shape() != rec.outputs[last].shape() {
            return Err(Error::ShapeMismatch(format!(
                "output gradient {:?} vs output {:?}",
                grad_output.shape(),
                rec.outputs[last].shape()
            )));
        }
        let mut grads: Vec<Option<(Tensor<T>, Tensor<T>)>> = vec![None; self.layers.len()];

        // Gradient w.r.t. the input of layer `li`, given dL/d(its output).
        let mut back = |li: usize, g: &Tensor<T>, want_input: bool| -> Result<Option<Tensor<T>>> {
            let layer = &self.layers[li];
            let gpre = activation_backward(g, &rec.outputs[li], layer.activation())?;
            let (w, _) = self.weights(li);
            let x = &rec.inputs[li];
            let (gi, gw, gb) = match layer.kind {
                LayerKind::Conv | LayerKind::Head => conv3d_backward_impl(&gpre, x, w, 1, 1, want_input)?,
                LayerKind::Down => conv3d_backward_impl(&gpre, x, w, 2, 0, want_input)?,
                LayerKind::Up => {
                    let g = deconv3d_backward(&gpre, x, w)?;
                    (Some(g.input), g.weight, g.bias)
                }
            };
            grads[li] = Some((gw, gb));
            Ok(gi)
        };

        let mut li = last;
        let mut g = back(li, grad_output, true)?.expect("input gradient");
        let mut skip_grads: Vec<Tensor<T>> = Vec::with_capacity(cfg.levels);
        for l in 0..cfg.levels {
            for _ in 0..cfg.convs_per_level {
                li -= 1;
                g = back(li, &g, true)?.expect("input gradient");
            }
            let (g_up, g_skip) = split_channels(&g, cfg.channels(l))?;
            skip_grads.push(g_skip);
            li -= 1;
            g = back(li, &g_up, true)?.expect("input gradient");
        }
        for l in (0..cfg.levels).rev() {
            li -= 1;
            g = back(li, &g, true)?.expect("input gradient");
            let g_skip = skip_grads.pop().expect("one skip gradient per level");
            for (a, b) in g.data_mut().iter_mut().zip(g_skip.data()) {
                *a += *b;
            }
            for i in (0..cfg.convs_per_level).rev() {
                li -= 1;
                let want_input = !(l == 0 && i == 0);
                if let Some(gi) = back(li, &g, want_input)? {
                    g = gi;
                }
            }
        }
        debug_assert_eq!(li, 0);
        for (i, gr) in grads.into_iter().enumerate() {
            let (gw, gb) = gr.expect("every layer visited");
            self.params[2 * i].value.set_grad(gw.into_data())?;
            self.params[2 * i + 1].value.set_grad(gb.into_data())?;
        }
        Ok(())
    }
}
