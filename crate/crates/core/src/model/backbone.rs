//! Feature extractors behind a common trait, selected by name at runtime.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::nn;

/// A named parameter block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    #[serde(skip)]
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(name: impl Into<String>, shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor { name: name.into(), shape, data: vec![0.0; n] }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub(crate) fn he_normal(name: impl Into<String>, shape: Vec<usize>, fan_in: usize, rng: &mut ChaCha8Rng) -> Self {
        let dist = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
        let mut t = Tensor::zeros(name, shape);
        for v in &mut t.data {
            *v = dist.sample(rng) as f32;
        }
        t
    }
}

/// Activations a backbone keeps from a training forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    inputs: Vec<Vec<f32>>,
    pre_activations: Vec<Vec<f32>>,
    argmax: Vec<Vec<u32>>,
    /// (height, width) at the input of each block.
    dims: Vec<(usize, usize)>,
    final_hw: usize,
}

/// Maps a `3 x H x W` image to a fixed-length feature vector.
pub trait Backbone: Send + Sync + fmt::Debug {
    /// Registry name of the architecture.
    fn kind(&self) -> &'static str;

    fn feature_dim(&self) -> usize;

    /// Rejects input sizes the architecture cannot consume.
    fn check_input(&self, height: usize, width: usize) -> Result<()>;

    fn params(&self) -> Vec<&Tensor>;

    fn params_mut(&mut self) -> Vec<&mut Tensor>;

    fn forward(&self, input: &[f32], height: usize, width: usize) -> Vec<f32>;

    fn forward_train(&self, input: &[f32], height: usize, width: usize) -> (Vec<f32>, Tape);

    /// Accumulates parameter gradients, one buffer per entry of
    /// [`Backbone::params`].
    fn backward(&self, tape: &Tape, grad_features: &[f32], grads: &mut [Vec<f32>]);

    fn clone_box(&self) -> Box<dyn Backbone>;
}

impl Clone for Box<dyn Backbone> {
    fn clone(&self) -> Self {
        self.clone_box()
    }
}

/// Stacked blocks of 3x3 same-padded convolution, ReLU and 2x2 max-pool,
/// finished by global average pooling.
#[derive(Debug, Clone)]
pub struct ConvStack {
    kind: &'static str,
    channels: Vec<usize>,
    weights: Vec<Tensor>,
    biases: Vec<Tensor>,
}

impl ConvStack {
    fn init(kind: &'static str, widths: &[usize], rng: &mut ChaCha8Rng) -> Self {
        let mut channels = vec![3];
        channels.extend_from_slice(widths);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (i, pair) in channels.windows(2).enumerate() {
            let (c_in, c_out) = (pair[0], pair[1]);
            weights.push(Tensor::he_normal(format!("conv{i}.weight"), vec![c_out, c_in, 3, 3], c_in * 9, rng));
            biases.push(Tensor::zeros(format!("conv{i}.bias"), vec![c_out]));
        }
        ConvStack { kind, channels, weights, biases }
    }

    fn restore(kind: &'static str, widths: &[usize], tensors: Vec<Tensor>) -> Result<Self> {
        let mut stack = Self::init(kind, widths, &mut rand::SeedableRng::seed_from_u64(0));
        let mut by_name: BTreeMap<String, Tensor> = tensors.into_iter().map(|t| (t.name.clone(), t)).collect();
        for p in stack.params_mut() {
            let t = by_name.remove(&p.name).ok_or_else(|| Error::Data(format!("{kind}: missing tensor {}", p.name)))?;
            if t.shape != p.shape || t.data.len() != p.data.len() {
                return Err(Error::Shape(format!(
                    "{kind}: tensor {} has shape {:?}, expected {:?}",
                    t.name, t.shape, p.shape
                )));
            }
            p.data = t.data;
        }
        if let Some(extra) = by_name.keys().next() {
            return Err(Error::Data(format!("{kind}: unexpected tensor {extra}")));
        }
        Ok(stack)
    }

    fn blocks(&self) -> usize {
        self.weights.len()
    }

    fn run(&self, input: &[f32], height: usize, width: usize, mut tape: Option<&mut Tape>) -> Vec<f32> {
        let mut x = input.to_vec();
        let (mut h, mut w) = (height, width);
        let mut col = Vec::new();
        for b in 0..self.blocks() {
            let (c_in, c_out) = (self.channels[b], self.channels[b + 1]);
            let mut pre = vec![0.0; c_out * h * w];
            nn::conv3_forward(&x, c_in, h, w, &self.weights[b].data, &self.biases[b].data, c_out, &mut col, &mut pre);
            let (pooled, arg) = nn::relu_maxpool2(&pre, c_out, h, w);
            if let Some(t) = tape.as_deref_mut() {
                t.inputs.push(std::mem::take(&mut x));
                t.pre_activations.push(pre);
                t.argmax.push(arg);
                t.dims.push((h, w));
            }
            x = pooled;
            h /= 2;
            w /= 2;
        }
        if let Some(t) = tape {
            t.final_hw = h * w;
        }
        nn::global_avg_pool(&x, *self.channels.last().unwrap(), h * w)
    }
}

impl Backbone for ConvStack {
    fn kind(&self) -> &'static str {
        self.kind
    }

    fn feature_dim(&self) -> usize {
        *self.channels.last().unwrap()
    }

    fn check_input(&self, height: usize, width: usize) -> Result<()> {
        let m = 1 << self.blocks();
        if height == 0 || width == 0 || !height.is_multiple_of(m) || !width.is_multiple_of(m) {
            return Err(Error::Config(format!(
                "{} needs input sides divisible by {m}, got {width}x{height}",
                self.kind
            )));
        }
        Ok(())
    }

    fn params(&self) -> Vec<&Tensor> {
        self.weights.iter().zip(&self.biases).flat_map(|(w, b)| [w, b]).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.weights.iter_mut().zip(self.biases.iter_mut()).flat_map(|(w, b)| [w, b]).collect()
    }

    fn forward(&self, input: &[f32], height: usize, width: usize) -> Vec<f32> {
        self.run(input, height, width, None)
    }

    fn forward_train(&self, input: &[f32], height: usize, width: usize) -> (Vec<f32>, Tape) {
        let mut tape = Tape::default();
        let features = self.run(input, height, width, Some(&mut tape));
        (features, tape)
    }

    fn backward(&self, tape: &Tape, grad_features: &[f32], grads: &mut [Vec<f32>]) {
        let mut grad = nn::global_avg_pool_backward(grad_features, self.feature_dim(), tape.final_hw);
        let mut col = Vec::new();
        for b in (0..self.blocks()).rev() {
            let (c_in, c_out) = (self.channels[b], self.channels[b + 1]);
            let pre = &tape.pre_activations[b];
            let input = &tape.inputs[b];
            let (h, w) = tape.dims[b];
            let mut grad_pre = vec![0.0; pre.len()];
            nn::relu_maxpool2_backward(pre, &tape.argmax[b], &grad, &mut grad_pre);
            let (gw, rest) = grads[2 * b..].split_at_mut(1);
            let mut grad_in = if b > 0 { vec![0.0; input.len()] } else { Vec::new() };
            nn::conv3_backward(
                input,
                c_in,
                h,
                w,
                &self.weights[b].data,
                c_out,
                &grad_pre,
                &mut gw[0],
                &mut rest[0],
                (b > 0).then_some(grad_in.as_mut_slice()),
                &mut col,
            );
            grad = grad_in;
        }
    }

    fn clone_box(&self) -> Box<dyn Backbone> {
        Box::new(self.clone())
    }
}

/// How a backbone should be obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneSpec {
    /// Registry name.
    pub name: String,
    /// Weights file for pretrained backbones.
    pub weights: Option<PathBuf>,
}

impl Default for BackboneSpec {
    fn default() -> Self {
        BackboneSpec { name: SMALL_CNN.to_string(), weights: None }
    }
}

pub const SMALL_CNN: &str = "small-cnn";
pub const TINY_CNN: &str = "tiny-cnn";
pub const PRETRAINED: &str = "pretrained";

/// Outcome of resolving a [`BackboneSpec`].
#[derive(Debug)]
pub struct ResolvedBackbone {
    pub backbone: Box<dyn Backbone>,
    /// Human-readable identity recorded in the artifact.
    pub backbone_id: String,
    pub frozen: bool,
    /// Pretrained weights were requested but could not be loaded.
    pub fallback: bool,
}

type InitFn = fn(&BackboneSpec, &mut ChaCha8Rng) -> Result<ResolvedBackbone>;
type RestoreFn = fn(Vec<Tensor>) -> Result<Box<dyn Backbone>>;

pub struct BackboneEntry {
    pub description: &'static str,
    init: InitFn,
}

/// Name -> constructor table for backbones, plus architecture restorers
/// used when loading artifacts.
pub struct BackboneRegistry {
    entries: BTreeMap<&'static str, BackboneEntry>,
    architectures: BTreeMap<&'static str, RestoreFn>,
}

impl fmt::Debug for BackboneRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.entries.keys()).finish()
    }
}

const SMALL_WIDTHS: [usize; 3] = [16, 32, 64];
const TINY_WIDTHS: [usize; 3] = [8, 16, 32];

fn scratch(kind: &'static str, widths: &[usize], rng: &mut ChaCha8Rng) -> ResolvedBackbone {
    ResolvedBackbone {
        backbone: Box::new(ConvStack::init(kind, widths, rng)),
        backbone_id: format!("{kind} (trained from scratch)"),
        frozen: false,
        fallback: false,
    }
}

fn init_pretrained(spec: &BackboneSpec, rng: &mut ChaCha8Rng) -> Result<ResolvedBackbone> {
    let loaded = spec
        .weights
        .as_ref()
        .ok_or_else(|| "no weights file given".to_string())
        .and_then(|p| crate::model::artifact::load_backbone(p).map_err(|e| e.to_string()).map(|b| (p, b)));
    match loaded {
        Ok((path, backbone)) => Ok(ResolvedBackbone {
            backbone_id: format!("{} pretrained from {}", backbone.kind(), path.display()),
            backbone,
            frozen: true,
            fallback: false,
        }),
        Err(reason) => {
            log::warn!("pretrained backbone unavailable ({reason}); falling back to {SMALL_CNN}");
            let mut r = scratch(SMALL_CNN, &SMALL_WIDTHS, rng);
            r.fallback = true;
            r.backbone_id = format!("{SMALL_CNN} (fallback: pretrained weights unavailable: {reason})");
            Ok(r)
        }
    }
}

impl Default for BackboneRegistry {
    fn default() -> Self {
        let mut reg = BackboneRegistry { entries: BTreeMap::new(), architectures: BTreeMap::new() };
        reg.register(
            SMALL_CNN,
            BackboneEntry {
                description: "3 conv blocks (16/32/64 filters), trained from scratch",
                init: |_, rng| Ok(scratch(SMALL_CNN, &SMALL_WIDTHS, rng)),
            },
            |t| Ok(Box::new(ConvStack::restore(SMALL_CNN, &SMALL_WIDTHS, t)?)),
        );
        reg.register(
            TINY_CNN,
            BackboneEntry {
                description: "3 conv blocks (8/16/32 filters), trained from scratch; for quick experiments",
                init: |_, rng| Ok(scratch(TINY_CNN, &TINY_WIDTHS, rng)),
            },
            |t| Ok(Box::new(ConvStack::restore(TINY_CNN, &TINY_WIDTHS, t)?)),
        );
        reg.entries.insert(
            PRETRAINED,
            BackboneEntry {
                description: "frozen feature extractor taken from a saved model; falls back to small-cnn",
                init: init_pretrained,
            },
        );
        reg
    }
}

impl BackboneRegistry {
    pub fn register(&mut self, name: &'static str, entry: BackboneEntry, restore: RestoreFn) {
        self.entries.insert(name, entry);
        self.architectures.insert(name, restore);
    }

    pub fn names(&self) -> impl Iterator<Item = (&'static str, &'static str)> + '_ {
        self.entries.iter().map(|(k, v)| (*k, v.description))
    }

    pub fn resolve(&self, spec: &BackboneSpec, rng: &mut ChaCha8Rng) -> Result<ResolvedBackbone> {
        let entry = self.entries.get(spec.name.as_str()).ok_or_else(|| {
            Error::Config(format!(
                "unknown backbone {:?}; available: {}",
                spec.name,
                self.entries.keys().copied().collect::<Vec<_>>().join(", ")
            ))
        })?;
        (entry.init)(spec, rng)
    }

    /// Rebuilds a backbone of architecture `kind` from stored tensors.
    pub fn restore(&self, kind: &str, tensors: Vec<Tensor>) -> Result<Box<dyn Backbone>> {
        let f = self
            .architectures
            .get(kind)
            .ok_or_else(|| Error::Data(format!("unknown backbone architecture {kind:?}")))?;
        f(tensors)
    }
}
