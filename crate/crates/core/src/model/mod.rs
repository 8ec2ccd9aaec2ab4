//! The VoltaVision network: three conv/batch-norm/ReLU stages, one max pool
//! after the first stage, and a fully connected classification head.
//!
//! ```text
//! (n,3,32,32) conv1 -> (n,12,34,34) pool -> (n,12,11,11) conv2 -> (n,20,13,13)
//!             conv3 -> (n,32,15,15) flatten -> (n,7200) linear -> (n,C)
//! ```
//!
//! Parameters are addressed as *groups* (one weight or bias vector each) in
//! layer order. The last two groups always belong to the head.

mod checkpoint;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::layers::{
    relu_backward, relu_forward, BatchNorm2d, BatchNormCache, BatchNormMode, Conv2d, Linear,
    MaxPool2d, PoolCache,
};
use crate::tensor::{Scalar, Shape4, Tensor};

/// Hyperparameters fixing the network's shape.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchitectureConfig {
    pub input_channels: usize,
    pub input_h: usize,
    pub input_w: usize,
    pub conv_filters: Vec<usize>,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub pool_kernel: usize,
    pub pool_stride: usize,
    pub num_classes: usize,
}

impl ArchitectureConfig {
    pub fn voltavision(num_classes: usize) -> Self {
        Self {
            input_channels: 3,
            input_h: 32,
            input_w: 32,
            conv_filters: vec![12, 20, 32],
            kernel: 3,
            stride: 1,
            padding: 2,
            pool_kernel: 3,
            pool_stride: 3,
            num_classes,
        }
    }

    pub fn input_shape(&self, n: usize) -> Shape4 {
        Shape4::new(n, self.input_channels, self.input_h, self.input_w)
    }

    /// Per-stage output shapes for a single sample, ending with the flattened
    /// feature vector and the logits.
    pub fn shape_chain(&self) -> Result<Vec<Shape4>> {
        let graph = ModelGraph::<f32>::zeroed(self.clone())?;
        let mut shape = self.input_shape(1);
        let mut chain = vec![shape];
        for layer in &graph.layers {
            shape = layer.output_shape(shape)?;
            if !matches!(layer, LayerNode::BatchNorm(_) | LayerNode::Relu) {
                chain.push(shape);
            }
        }
        Ok(chain)
    }

    /// Width of the head's input (`filters * s * s` after the last conv).
    pub fn flatten_width(&self) -> Result<usize> {
        let chain = self.shape_chain()?;
        Ok(chain[chain.len() - 2].c)
    }

    /// Equal up to the number of output classes.
    pub fn same_backbone(&self, other: &Self) -> bool {
        Self {
            num_classes: other.num_classes,
            ..self.clone()
        } == *other
    }

    fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Config(format!(
                "need at least 2 classes, got {}",
                self.num_classes
            )));
        }
        if self.conv_filters.is_empty() {
            return Err(Error::Config("need at least one conv stage".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv = 1,
    BatchNorm = 2,
    Relu = 3,
    MaxPool = 4,
    Flatten = 5,
    Linear = 6,
}

impl LayerKind {
    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            1 => Self::Conv,
            2 => Self::BatchNorm,
            3 => Self::Relu,
            4 => Self::MaxPool,
            5 => Self::Flatten,
            6 => Self::Linear,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Conv => "conv",
            Self::BatchNorm => "batchnorm",
            Self::Relu => "relu",
            Self::MaxPool => "maxpool",
            Self::Flatten => "flatten",
            Self::Linear => "linear",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerNode<T = f32> {
    Conv(Conv2d<T>),
    BatchNorm(BatchNorm2d<T>),
    Relu,
    MaxPool(MaxPool2d),
    Flatten,
    Linear(Linear<T>),
}

impl<T: Scalar> LayerNode<T> {
    pub fn kind(&self) -> LayerKind {
        match self {
            Self::Conv(_) => LayerKind::Conv,
            Self::BatchNorm(_) => LayerKind::BatchNorm,
            Self::Relu => LayerKind::Relu,
            Self::MaxPool(_) => LayerKind::MaxPool,
            Self::Flatten => LayerKind::Flatten,
            Self::Linear(_) => LayerKind::Linear,
        }
    }

    pub fn output_shape(&self, input: Shape4) -> Result<Shape4> {
        match self {
            Self::Conv(c) => c.output_shape(input),
            Self::MaxPool(p) => p.output_shape(input),
            Self::Flatten => Ok(Shape4::new(input.n, input.sample_len(), 1, 1)),
            Self::Linear(l) => {
                if input.sample_len() != l.in_features {
                    return Err(Error::shape(
                        "linear_forward",
                        format!("(n, {}, 1, 1)", l.in_features),
                        input,
                    ));
                }
                Ok(Shape4::new(input.n, l.out_features, 1, 1))
            }
            Self::BatchNorm(_) | Self::Relu => Ok(input),
        }
    }

    /// Trainable vectors, in serialization order.
    pub fn params(&self) -> Vec<&[T]> {
        match self {
            Self::Conv(c) => vec![&c.weight, &c.bias],
            Self::BatchNorm(b) => vec![&b.gamma, &b.beta],
            Self::Linear(l) => vec![&l.weight, &l.bias],
            _ => vec![],
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut [T]> {
        match self {
            Self::Conv(c) => vec![&mut c.weight, &mut c.bias],
            Self::BatchNorm(b) => vec![&mut b.gamma, &mut b.beta],
            Self::Linear(l) => vec![&mut l.weight, &mut l.bias],
            _ => vec![],
        }
    }

    /// Non-trainable state (batch-norm running statistics).
    pub fn state(&self) -> Vec<&[T]> {
        match self {
            Self::BatchNorm(b) => vec![&b.running_mean, &b.running_var],
            _ => vec![],
        }
    }

    pub fn state_mut(&mut self) -> Vec<&mut [T]> {
        match self {
            Self::BatchNorm(b) => vec![&mut b.running_mean, &mut b.running_var],
            _ => vec![],
        }
    }

    /// Shapes of every stored tensor (parameters, then state).
    pub fn tensor_shapes(&self) -> Vec<(TensorRole, Vec<usize>)> {
        match self {
            Self::Conv(c) => vec![
                (
                    TensorRole::Weight,
                    vec![c.out_channels, c.in_channels, c.kernel, c.kernel],
                ),
                (TensorRole::Bias, vec![c.out_channels]),
            ],
            Self::BatchNorm(b) => vec![
                (TensorRole::Gamma, vec![b.channels]),
                (TensorRole::Beta, vec![b.channels]),
                (TensorRole::RunningMean, vec![b.channels]),
                (TensorRole::RunningVar, vec![b.channels]),
            ],
            Self::Linear(l) => vec![
                (TensorRole::Weight, vec![l.out_features, l.in_features]),
                (TensorRole::Bias, vec![l.out_features]),
            ],
            _ => vec![],
        }
    }

    fn cast<U: Scalar>(&self) -> LayerNode<U> {
        match self {
            Self::Conv(c) => LayerNode::Conv(c.cast()),
            Self::BatchNorm(b) => LayerNode::BatchNorm(b.cast()),
            Self::Relu => LayerNode::Relu,
            Self::MaxPool(p) => LayerNode::MaxPool(*p),
            Self::Flatten => LayerNode::Flatten,
            Self::Linear(l) => LayerNode::Linear(l.cast()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorRole {
    Weight = 1,
    Bias = 2,
    Gamma = 3,
    Beta = 4,
    RunningMean = 5,
    RunningVar = 6,
}

impl TensorRole {
    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            1 => Self::Weight,
            2 => Self::Bias,
            3 => Self::Gamma,
            4 => Self::Beta,
            5 => Self::RunningMean,
            6 => Self::RunningVar,
            _ => return None,
        })
    }
}

/// Which parameter groups an optimizer may update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TrainablePolicy {
    /// Only the classification head.
    #[default]
    HeadOnly,
    All,
    /// Nothing; training runs forward/backward but never changes a parameter.
    Frozen,
}

impl TrainablePolicy {
    pub fn name(self) -> &'static str {
        match self {
            Self::HeadOnly => "head_only",
            Self::All => "all",
            Self::Frozen => "frozen",
        }
    }
}

impl std::str::FromStr for TrainablePolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "head_only" | "head-only" => Ok(Self::HeadOnly),
            "all" => Ok(Self::All),
            "frozen" => Ok(Self::Frozen),
            other => Err(Error::Config(format!("unknown trainable policy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParameterCount {
    /// Every weight, bias, gamma and beta.
    pub parameters: usize,
    /// `parameters` plus batch-norm running statistics.
    pub with_stats: usize,
    /// Parameters the current trainable mask lets an optimizer touch.
    pub trainable: usize,
}

/// One gradient vector per parameter group; `None` for groups that were not
/// differentiated (frozen, or upstream of every trainable group).
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    pub groups: Vec<Option<Vec<T>>>,
}

/// Per-layer values the backward pass needs.
#[derive(Debug, Clone)]
enum LayerCache<T> {
    Input(Tensor<T>),
    BatchNormTrain(BatchNormCache<T>),
    Pool(PoolCache),
    Flatten(Shape4),
}

/// Saved activations from a train-mode forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace<T> {
    caches: Vec<LayerCache<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelGraph<T = f32> {
    config: ArchitectureConfig,
    layers: Vec<LayerNode<T>>,
    trainable: Vec<bool>,
    provenance: String,
}

/// Uniform in `±sqrt(6 / fan_in)`.
fn fill_fan_in<T: Scalar>(values: &mut [T], fan_in: usize, rng: &mut ChaCha8Rng) {
    let limit = (6.0 / fan_in as f64).sqrt();
    let dist = Uniform::new(-limit, limit);
    for v in values {
        *v = T::from_f64(dist.sample(rng));
    }
}

/// RNG stream used for head surgery, distinct from the build stream of the same seed.
const HEAD_STREAM: u64 = 1;

pub fn build_voltavision(num_classes: usize, seed: u64) -> Result<ModelGraph> {
    ModelGraph::build(ArchitectureConfig::voltavision(num_classes), seed)
}

impl<T: Scalar> ModelGraph<T> {
    /// The architecture with every parameter zeroed and identity batch norms.
    pub fn zeroed(config: ArchitectureConfig) -> Result<Self> {
        config.validate()?;
        let mut layers = Vec::new();
        let mut channels = config.input_channels;
        let mut shape = config.input_shape(1);
        for (i, &filters) in config.conv_filters.iter().enumerate() {
            let conv = Conv2d::new(channels, filters, config.kernel, config.stride, config.padding)?;
            shape = conv.output_shape(shape)?;
            layers.push(LayerNode::Conv(conv));
            layers.push(LayerNode::BatchNorm(BatchNorm2d::new(filters)?));
            layers.push(LayerNode::Relu);
            if i == 0 {
                let pool = MaxPool2d::new(config.pool_kernel, config.pool_stride)?;
                shape = pool.output_shape(shape)?;
                layers.push(LayerNode::MaxPool(pool));
            }
            channels = filters;
        }
        layers.push(LayerNode::Flatten);
        layers.push(LayerNode::Linear(Linear::new(
            shape.sample_len(),
            config.num_classes,
        )?));
        let groups = layers.iter().map(|l| l.params().len()).sum();
        Ok(Self {
            config,
            layers,
            trainable: vec![true; groups],
            provenance: String::new(),
        })
    }

    /// Fan-in-scaled uniform weights, zero biases, identity batch norms.
    pub fn build(config: ArchitectureConfig, seed: u64) -> Result<Self> {
        let mut graph = Self::zeroed(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &mut graph.layers {
            match layer {
                LayerNode::Conv(c) => {
                    let fan_in = c.in_channels * c.kernel * c.kernel;
                    fill_fan_in(&mut c.weight, fan_in, &mut rng);
                }
                LayerNode::Linear(l) => fill_fan_in(&mut l.weight, l.in_features, &mut rng),
                _ => {}
            }
        }
        Ok(graph)
    }

    pub fn config(&self) -> &ArchitectureConfig {
        &self.config
    }

    pub fn layers(&self) -> &[LayerNode<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [LayerNode<T>] {
        &mut self.layers
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn set_provenance(&mut self, note: impl Into<String>) {
        self.provenance = note.into();
    }

    pub fn head(&self) -> &Linear<T> {
        match self.layers.last() {
            Some(LayerNode::Linear(l)) => l,
            _ => unreachable!("graph always ends in a linear head"),
        }
    }

    fn head_mut(&mut self) -> &mut Linear<T> {
        match self.layers.last_mut() {
            Some(LayerNode::Linear(l)) => l,
            _ => unreachable!("graph always ends in a linear head"),
        }
    }

    pub fn group_count(&self) -> usize {
        self.trainable.len()
    }

    /// Index of the first head group; every group before it is backbone.
    pub fn head_group_start(&self) -> usize {
        self.trainable.len() - 2
    }

    pub fn trainable_mask(&self) -> &[bool] {
        &self.trainable
    }

    pub fn set_trainable(&mut self, policy: TrainablePolicy) {
        let head = self.head_group_start();
        for (i, t) in self.trainable.iter_mut().enumerate() {
            *t = match policy {
                TrainablePolicy::All => true,
                TrainablePolicy::HeadOnly => i >= head,
                TrainablePolicy::Frozen => false,
            };
        }
    }

    pub fn with_trainable(mut self, policy: TrainablePolicy) -> Self {
        self.set_trainable(policy);
        self
    }

    pub fn param_groups(&self) -> Vec<&[T]> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn param_groups_mut(&mut self) -> Vec<&mut [T]> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn count_parameters(&self) -> ParameterCount {
        let groups = self.param_groups();
        let parameters = groups.iter().map(|g| g.len()).sum();
        let trainable = groups
            .iter()
            .zip(&self.trainable)
            .filter(|(_, &t)| t)
            .map(|(g, _)| g.len())
            .sum();
        let stats: usize = self
            .layers
            .iter()
            .flat_map(|l| l.state())
            .map(|s| s.len())
            .sum();
        ParameterCount {
            parameters,
            with_stats: parameters + stats,
            trainable,
        }
    }

    /// Every stored tensor in manifest order, parameters before state within a layer.
    pub fn tensors(&self) -> Vec<&[T]> {
        self.layers
            .iter()
            .flat_map(|l| l.params().into_iter().chain(l.state()))
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        self.layers
            .iter_mut()
            .flat_map(|l| match l {
                LayerNode::BatchNorm(b) => vec![
                    &mut b.gamma[..],
                    &mut b.beta[..],
                    &mut b.running_mean[..],
                    &mut b.running_var[..],
                ],
                other => other.params_mut(),
            })
            .collect()
    }

    /// Little-endian bytes of every backbone parameter and running statistic.
    pub fn backbone_bytes(&self) -> Vec<u8> {
        let n = self.layers.len() - 1;
        self.layers[..n]
            .iter()
            .flat_map(|l| l.params().into_iter().chain(l.state()))
            .flat_map(|t| t.iter())
            .flat_map(|v| (v.as_f64() as f32).to_le_bytes())
            .collect()
    }

    /// Swaps the head for a freshly initialised one with `num_classes` outputs.
    /// Backbone parameters and statistics are untouched.
    pub fn replace_head(&mut self, num_classes: usize, seed: u64) -> Result<()> {
        if num_classes < 2 {
            return Err(Error::Config(format!(
                "need at least 2 classes, got {num_classes}"
            )));
        }
        let in_features = self.head().in_features;
        let mut head = Linear::new(in_features, num_classes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(HEAD_STREAM);
        fill_fan_in(&mut head.weight, in_features, &mut rng);
        *self.head_mut() = head;
        self.config.num_classes = num_classes;
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> ModelGraph<U> {
        ModelGraph {
            config: self.config.clone(),
            layers: self.layers.iter().map(|l| l.cast()).collect(),
            trainable: self.trainable.clone(),
            provenance: self.provenance.clone(),
        }
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let s = x.shape();
        if s.with_batch(1) != self.config.input_shape(1) || s.n == 0 {
            return Err(Error::shape(
                "model_forward",
                format!("(n>=1, {})", {
                    let i = self.config.input_shape(1);
                    format!("{}, {}, {}", i.c, i.h, i.w)
                }),
                s,
            ));
        }
        Ok(())
    }

    /// Eval-mode logits `(n, num_classes, 1, 1)`. Does not change the model.
    pub fn forward_eval(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut h = x.clone();
        for layer in &self.layers {
            h = match layer {
                LayerNode::Conv(c) => c.forward(&h)?,
                LayerNode::BatchNorm(b) => b.forward_eval(&h)?,
                LayerNode::Relu => relu_forward(&h),
                LayerNode::MaxPool(p) => p.forward(&h)?.0,
                LayerNode::Flatten => h.flatten_to_rows(),
                LayerNode::Linear(l) => l.forward(&h)?,
            };
        }
        Ok(h)
    }

    /// Group index of each layer's first parameter group.
    fn group_offsets(&self) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut acc = 0;
        for l in &self.layers {
            offsets.push(acc);
            acc += l.params().len();
        }
        offsets
    }

    fn layer_trainable(&self, offsets: &[usize], i: usize) -> bool {
        let n = self.layers[i].params().len();
        self.trainable[offsets[i]..offsets[i] + n].iter().any(|&t| t)
    }

    /// Train-mode forward pass. Batch norms whose affine parameters are
    /// trainable use batch statistics and update their running estimates;
    /// frozen batch norms behave as in eval mode.
    pub fn forward_train(&mut self, x: &Tensor<T>) -> Result<(Tensor<T>, ForwardTrace<T>)> {
        self.check_input(x)?;
        let offsets = self.group_offsets();
        let live: Vec<bool> = (0..self.layers.len())
            .map(|i| self.layer_trainable(&offsets, i))
            .collect();
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for (layer, &live) in self.layers.iter_mut().zip(&live) {
            h = match layer {
                LayerNode::Conv(c) => {
                    let y = c.forward(&h)?;
                    caches.push(LayerCache::Input(h));
                    y
                }
                LayerNode::BatchNorm(b) if live => {
                    let (y, cache) = b.forward_train(&h)?;
                    caches.push(LayerCache::BatchNormTrain(cache));
                    y
                }
                LayerNode::BatchNorm(b) => {
                    let y = b.forward(&h, BatchNormMode::Eval)?;
                    caches.push(LayerCache::Input(h));
                    y
                }
                LayerNode::Relu => {
                    let y = relu_forward(&h);
                    caches.push(LayerCache::Input(h));
                    y
                }
                LayerNode::MaxPool(p) => {
                    let (y, cache) = p.forward(&h)?;
                    caches.push(LayerCache::Pool(cache));
                    y
                }
                LayerNode::Flatten => {
                    caches.push(LayerCache::Flatten(h.shape()));
                    h.flatten_to_rows()
                }
                LayerNode::Linear(l) => {
                    let y = l.forward(&h)?;
                    caches.push(LayerCache::Input(h));
                    y
                }
            };
        }
        Ok((h, ForwardTrace { caches }))
    }

    /// Backpropagates `grad_logits` through a trace from [`ModelGraph::forward_train`].
    ///
    /// Gradients are produced for trainable groups only. The pass stops at
    /// the earliest trainable layer unless `want_input_grad` is set, in which
    /// case it runs to the input and returns the input gradient as well.
    pub fn backward(
        &self,
        trace: &ForwardTrace<T>,
        grad_logits: &Tensor<T>,
        want_input_grad: bool,
    ) -> Result<(Gradients<T>, Option<Tensor<T>>)> {
        let offsets = self.group_offsets();
        let mut groups: Vec<Option<Vec<T>>> = vec![None; self.trainable.len()];
        let stop = if want_input_grad {
            0
        } else {
            match (0..self.layers.len()).find(|&i| self.layer_trainable(&offsets, i)) {
                Some(i) => i,
                None => return Ok((Gradients { groups }, None)),
            }
        };
        let mut g = grad_logits.clone();
        for i in (stop..self.layers.len()).rev() {
            let need_input = want_input_grad || i > stop;
            let o = offsets[i];
            let mut keep = |slot: usize, v: Vec<T>| {
                if self.trainable[o + slot] {
                    groups[o + slot] = Some(v);
                }
            };
            g = match (&self.layers[i], &trace.caches[i]) {
                (LayerNode::Conv(c), LayerCache::Input(x)) => {
                    let grads = c.backward(x, &g)?;
                    keep(0, grads.weight);
                    keep(1, grads.bias);
                    grads.input
                }
                (LayerNode::BatchNorm(b), LayerCache::BatchNormTrain(cache)) => {
                    let grads = b.backward(cache, &g)?;
                    keep(0, grads.gamma);
                    keep(1, grads.beta);
                    grads.input
                }
                (LayerNode::BatchNorm(b), LayerCache::Input(x)) => {
                    let grads = b.backward_eval(x, &g)?;
                    keep(0, grads.gamma);
                    keep(1, grads.beta);
                    grads.input
                }
                (LayerNode::Relu, LayerCache::Input(x)) => relu_backward(x, &g)?,
                (LayerNode::MaxPool(p), LayerCache::Pool(cache)) => p.backward(cache, &g)?,
                (LayerNode::Flatten, LayerCache::Flatten(shape)) => g.reshape(*shape)?,
                (LayerNode::Linear(l), LayerCache::Input(x)) => {
                    let grads = l.backward(x, &g)?;
                    keep(0, grads.weight);
                    keep(1, grads.bias);
                    grads.input
                }
                _ => {
                    return Err(Error::Config(
                        "forward trace does not belong to this model".into(),
                    ))
                }
            };
            if !need_input {
                break;
            }
        }
        Ok((Gradients { groups }, want_input_grad.then_some(g)))
    }
}

impl ModelGraph<f32> {
    pub fn build_voltavision(num_classes: usize, seed: u64) -> Result<Self> {
        build_voltavision(num_classes, seed)
    }
}
