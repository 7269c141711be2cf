//! Minimal deterministic network engine.
//!
//! Sequential networks of [`LayerKind::Dense`], [`LayerKind::Conv2d`] (stride 1,
//! valid padding) and [`LayerKind::Flatten`] layers, each weighted layer followed
//! by either ReLU or the identity. Every weight carries a binary mask; a masked
//! weight is held at exactly `0.0` by every operation in this module.

mod backward;
mod checkpoint;
mod forward;
mod train;

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{shape_len, Tensor};

pub use backward::{Gradients, ParamGrad};
pub use checkpoint::{Checkpoint, CheckpointLayer, FORMAT_VERSION};
pub use train::{sgd_step, train, train_with_seed, EpochStats, TrainConfig, Velocity};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Dense,
    Conv2d,
    Flatten,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

/// Trainable parameters of a weighted layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    /// Dense: `[out, in]`; Conv2d: `[out_ch, in_ch, kh, kw]`.
    pub weights: Tensor,
    /// One entry per neuron (output unit or output channel).
    pub bias: Vec<f64>,
    /// `false` marks a pruned weight.
    pub mask: Vec<bool>,
}

impl Params {
    pub fn unmasked_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Sum of `|w|` over unmasked weights.
    pub fn unmasked_abs_sum(&self) -> f64 {
        self.weights
            .data()
            .iter()
            .zip(&self.mask)
            .filter(|(_, &m)| m)
            .map(|(w, _)| w.abs())
            .sum()
    }

    /// Zeroes every masked weight.
    pub fn apply_mask(&mut self) {
        for (w, &m) in self.weights.data_mut().iter_mut().zip(&self.mask) {
            if !m {
                *w = 0.0;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub kind: LayerKind,
    pub activation: Activation,
    pub in_shape: Vec<usize>,
    pub out_shape: Vec<usize>,
    /// `None` exactly for `Flatten`.
    pub params: Option<Params>,
}

impl Layer {
    pub fn dense(
        weights: Tensor,
        bias: Vec<f64>,
        activation: Activation,
    ) -> Result<Self> {
        let &[out, inp] = weights.shape() else {
            return Err(Error::Shape(format!(
                "dense weights must be 2-D, got {:?}",
                weights.shape()
            )));
        };
        let mask = vec![true; weights.len()];
        let layer = Self {
            kind: LayerKind::Dense,
            activation,
            in_shape: vec![inp],
            out_shape: vec![out],
            params: Some(Params {
                weights,
                bias,
                mask,
            }),
        };
        layer.validate()?;
        Ok(layer)
    }

    /// Stride-1, valid-padding convolution over a `[in_ch, h, w]` input.
    pub fn conv2d(
        in_shape: [usize; 3],
        weights: Tensor,
        bias: Vec<f64>,
        activation: Activation,
    ) -> Result<Self> {
        let &[oc, ic, kh, kw] = weights.shape() else {
            return Err(Error::Shape(format!(
                "conv2d weights must be 4-D, got {:?}",
                weights.shape()
            )));
        };
        let [c, h, w] = in_shape;
        if ic != c || kh == 0 || kw == 0 || kh > h || kw > w {
            return Err(Error::Shape(format!(
                "kernel {:?} does not fit input {in_shape:?}",
                weights.shape()
            )));
        }
        let mask = vec![true; weights.len()];
        let layer = Self {
            kind: LayerKind::Conv2d,
            activation,
            in_shape: in_shape.to_vec(),
            out_shape: vec![oc, h - kh + 1, w - kw + 1],
            params: Some(Params {
                weights,
                bias,
                mask,
            }),
        };
        layer.validate()?;
        Ok(layer)
    }

    pub fn flatten(in_shape: Vec<usize>) -> Self {
        let n = shape_len(&in_shape);
        Self {
            kind: LayerKind::Flatten,
            activation: Activation::Identity,
            in_shape,
            out_shape: vec![n],
            params: None,
        }
    }

    /// Neuron count: dense output units or conv output channels; 0 for `Flatten`.
    pub fn neurons(&self) -> usize {
        match self.kind {
            LayerKind::Flatten => 0,
            _ => self.out_shape[0],
        }
    }

    /// Spatial positions per sample of one neuron's output map.
    pub fn positions(&self) -> usize {
        match self.kind {
            LayerKind::Conv2d => self.out_shape[1] * self.out_shape[2],
            _ => 1,
        }
    }

    pub fn fan_in(&self) -> usize {
        match self.kind {
            LayerKind::Dense => self.in_shape[0],
            LayerKind::Conv2d => {
                let s = self.params.as_ref().map(|p| p.weights.shape()).unwrap_or(&[]);
                s[1] * s[2] * s[3]
            }
            LayerKind::Flatten => 0,
        }
    }

    /// Weighted, ReLU-activated: the layers whose states are measured and
    /// whose weights are pruned.
    pub fn is_considered(&self) -> bool {
        self.params.is_some() && self.activation == Activation::Relu
    }

    pub fn params(&self) -> Option<&Params> {
        self.params.as_ref()
    }

    pub fn params_mut(&mut self) -> Option<&mut Params> {
        self.params.as_mut()
    }

    /// Checks internal consistency of shapes, masks and values.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidNetwork(msg));
        if self.in_shape.iter().chain(&self.out_shape).any(|&d| d == 0) {
            return bad(format!(
                "zero-sized dimension in {:?} -> {:?}",
                self.in_shape, self.out_shape
            ));
        }
        match self.kind {
            LayerKind::Flatten => {
                if self.params.is_some() || self.activation != Activation::Identity {
                    return bad("flatten layer has parameters or an activation".into());
                }
                if self.out_shape != [shape_len(&self.in_shape)] {
                    return bad(format!(
                        "flatten {:?} -> {:?} changes element count",
                        self.in_shape, self.out_shape
                    ));
                }
                return Ok(());
            }
            LayerKind::Dense => {
                let Some(p) = &self.params else {
                    return bad("dense layer without parameters".into());
                };
                if self.in_shape.len() != 1
                    || self.out_shape.len() != 1
                    || p.weights.shape() != [self.out_shape[0], self.in_shape[0]]
                {
                    return bad(format!(
                        "dense weights {:?} inconsistent with {:?} -> {:?}",
                        p.weights.shape(),
                        self.in_shape,
                        self.out_shape
                    ));
                }
            }
            LayerKind::Conv2d => {
                let Some(p) = &self.params else {
                    return bad("conv2d layer without parameters".into());
                };
                let ok = match (p.weights.shape(), &self.in_shape[..], &self.out_shape[..]) {
                    (&[oc, ic, kh, kw], &[c, h, w], &[o, oh, ow]) => {
                        oc == o && ic == c && kh <= h && kw <= w && oh == h - kh + 1 && ow == w - kw + 1
                    }
                    _ => false,
                };
                if !ok {
                    return bad(format!(
                        "conv2d weights {:?} inconsistent with {:?} -> {:?}",
                        p.weights.shape(),
                        self.in_shape,
                        self.out_shape
                    ));
                }
            }
        }
        let p = self.params.as_ref().expect("weighted layer");
        if p.bias.len() != self.neurons() {
            return bad(format!(
                "bias has {} entries for {} neurons",
                p.bias.len(),
                self.neurons()
            ));
        }
        if p.mask.len() != p.weights.len() {
            return bad("mask and weights differ in length".into());
        }
        if !p.weights.all_finite() || p.bias.iter().any(|b| !b.is_finite()) {
            return bad("non-finite parameter".into());
        }
        if p.weights.data().iter().zip(&p.mask).any(|(&w, &m)| !m && w != 0.0) {
            return bad("masked weight is not zero".into());
        }
        Ok(())
    }
}

/// Hidden-layer recipe used by [`Network::build`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum LayerDef {
    Dense { units: usize },
    Conv2d { out_channels: usize, kernel: [usize; 2] },
    Flatten,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub layers: Vec<Layer>,
    pub rng_seed: u64,
    pub metadata: BTreeMap<String, String>,
}

impl Network {
    /// Wraps `layers` after validating shape chaining.
    pub fn new(layers: Vec<Layer>, rng_seed: u64) -> Result<Self> {
        let net = Self {
            layers,
            rng_seed,
            metadata: BTreeMap::new(),
        };
        net.validate()?;
        Ok(net)
    }

    /// Builds a He-uniform initialised network: every hidden layer is
    /// ReLU-activated and a dense identity-activated output layer with
    /// `num_classes` units is appended. A `Flatten` is inserted automatically
    /// wherever a dense layer follows a multi-dimensional shape.
    pub fn build(
        input_shape: &[usize],
        hidden: &[LayerDef],
        num_classes: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut layers = Vec::new();
        let mut shape = input_shape.to_vec();
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::Shape(format!("invalid input shape {shape:?}")));
        }
        let push_flatten = |layers: &mut Vec<Layer>, shape: &mut Vec<usize>| {
            if shape.len() != 1 {
                let f = Layer::flatten(shape.clone());
                *shape = f.out_shape.clone();
                layers.push(f);
            }
        };
        for def in hidden.iter().chain(std::iter::once(&LayerDef::Dense {
            units: num_classes,
        })) {
            match *def {
                LayerDef::Dense { units } => {
                    push_flatten(&mut layers, &mut shape);
                    if units == 0 {
                        return Err(Error::Shape("dense layer with zero units".into()));
                    }
                    let w = Tensor::zeros(vec![units, shape[0]]);
                    layers.push(Layer::dense(w, vec![0.0; units], Activation::Relu)?);
                    shape = vec![units];
                }
                LayerDef::Conv2d {
                    out_channels,
                    kernel: [kh, kw],
                } => {
                    let &[c, h, w] = &shape[..] else {
                        return Err(Error::Shape(format!(
                            "conv2d needs a [c, h, w] input, got {shape:?}"
                        )));
                    };
                    if out_channels == 0 {
                        return Err(Error::Shape("conv2d layer with zero channels".into()));
                    }
                    let wt = Tensor::zeros(vec![out_channels, c, kh, kw]);
                    let layer =
                        Layer::conv2d([c, h, w], wt, vec![0.0; out_channels], Activation::Relu)?;
                    shape = layer.out_shape.clone();
                    layers.push(layer);
                }
                LayerDef::Flatten => {
                    if shape.len() == 1 {
                        return Err(Error::Shape("flatten of an already flat shape".into()));
                    }
                    push_flatten(&mut layers, &mut shape);
                }
            }
        }
        layers.last_mut().expect("output layer").activation = Activation::Identity;
        let mut net = Self::new(layers, seed)?;
        net.init_he_uniform(seed);
        Ok(net)
    }

    /// Redraws every weight from `U(-sqrt(6 / fan_in), sqrt(6 / fan_in))` and
    /// zeroes biases; masks are reset to all-ones.
    pub fn init_he_uniform(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &mut self.layers {
            let fan_in = layer.fan_in();
            let Some(p) = layer.params.as_mut() else {
                continue;
            };
            let bound = (6.0 / fan_in as f64).sqrt();
            for w in p.weights.data_mut() {
                *w = rng.random_range(-bound..bound);
            }
            p.bias.iter_mut().for_each(|b| *b = 0.0);
            p.mask.iter_mut().for_each(|m| *m = true);
        }
    }

    pub fn validate(&self) -> Result<()> {
        let Some(last) = self.layers.last() else {
            return Err(Error::InvalidNetwork("network has no layers".into()));
        };
        for (i, layer) in self.layers.iter().enumerate() {
            layer
                .validate()
                .map_err(|e| Error::InvalidNetwork(format!("layer {i}: {e}")))?;
        }
        for (i, pair) in self.layers.windows(2).enumerate() {
            if pair[0].out_shape != pair[1].in_shape {
                return Err(Error::InvalidNetwork(format!(
                    "layer {i} outputs {:?} but layer {} expects {:?}",
                    pair[0].out_shape,
                    i + 1,
                    pair[1].in_shape
                )));
            }
        }
        if last.activation != Activation::Identity || last.out_shape.len() != 1 {
            return Err(Error::InvalidNetwork(
                "final layer must produce identity-activated 1-D logits".into(),
            ));
        }
        Ok(())
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.layers[0].in_shape
    }

    pub fn num_outputs(&self) -> usize {
        self.layers.last().map(|l| l.out_shape[0]).unwrap_or(0)
    }

    /// Indices of weighted ReLU layers.
    pub fn considered_layers(&self) -> Vec<usize> {
        (0..self.layers.len())
            .filter(|&i| self.layers[i].is_considered())
            .collect()
    }

    /// Total weight count (masked or not) over the considered layers.
    pub fn considered_weight_total(&self) -> usize {
        self.considered_layers()
            .into_iter()
            .map(|i| self.layers[i].params.as_ref().unwrap().weights.len())
            .sum()
    }

    /// Unmasked weight count over the considered layers.
    pub fn considered_weight_remaining(&self) -> usize {
        self.considered_layers()
            .into_iter()
            .map(|i| self.layers[i].params.as_ref().unwrap().unmasked_count())
            .sum()
    }

    /// Fraction of considered-layer weights that are masked, in percent.
    pub fn sparsity_pct(&self) -> f64 {
        let total = self.considered_weight_total();
        if total == 0 {
            return 0.0;
        }
        100.0 * (total - self.considered_weight_remaining()) as f64 / total as f64
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .filter_map(|l| l.params.as_ref())
            .map(|p| p.weights.len() + p.bias.len())
            .sum()
    }

    /// Compact human-readable architecture string, e.g. `dense16x64r-dense64x4`.
    pub fn topology(&self) -> Vec<String> {
        self.layers
            .iter()
            .map(|l| {
                let act = match (l.kind, l.activation) {
                    (LayerKind::Flatten, _) => "",
                    (_, Activation::Relu) => ":relu",
                    (_, Activation::Identity) => ":id",
                };
                let kind = match l.kind {
                    LayerKind::Dense => "dense",
                    LayerKind::Conv2d => "conv2d",
                    LayerKind::Flatten => "flatten",
                };
                let dims = |s: &[usize]| {
                    s.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x")
                };
                format!("{kind}({}->{}){act}", dims(&l.in_shape), dims(&l.out_shape))
            })
            .collect()
    }

    /// Same architecture, fresh He-uniform weights from `seed`.
    pub fn reinitialized(&self, seed: u64) -> Network {
        let mut net = self.clone();
        net.rng_seed = seed;
        net.metadata.clear();
        net.init_he_uniform(seed);
        net
    }
}
