//! Loss, optimizer, learning-rate schedule, the training loop, and a
//! finite-difference gradient checker.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{iterate_batches, LabeledDataset};
use crate::error::{Error, Result};
use crate::layers::{relu_backward, relu_forward, BatchNorm2d, Conv2d, Linear, MaxPool2d};
use crate::model::{LayerNode, ModelGraph, TrainablePolicy};
use crate::tensor::{Scalar, Shape4, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub base_lr: f64,
    pub momentum: f32,
    pub lr_step: usize,
    pub lr_gamma: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub trainable_policy: TrainablePolicy,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 25,
            base_lr: 1e-3,
            momentum: 0.9,
            lr_step: 7,
            lr_gamma: 0.1,
            batch_size: 32,
            seed: 0,
            trainable_policy: TrainablePolicy::HeadOnly,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.epochs < 1 {
            return fail("epochs must be at least 1".into());
        }
        if !(self.lr_gamma > 0.0 && self.lr_gamma <= 1.0) {
            return fail(format!("lr_gamma must be in (0, 1], got {}", self.lr_gamma));
        }
        if self.lr_step < 1 {
            return fail("lr_step must be at least 1".into());
        }
        if self.batch_size < 2 {
            return fail(format!(
                "batch_size must be at least 2 for batch norm, got {}",
                self.batch_size
            ));
        }
        if !(self.base_lr > 0.0) || !self.base_lr.is_finite() {
            return fail(format!("base_lr must be positive, got {}", self.base_lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        Ok(())
    }
}

/// `base_lr * gamma^floor(epoch / step)`.
pub fn step_lr(base_lr: f64, step: usize, gamma: f64, epoch: usize) -> f64 {
    base_lr * gamma.powi((epoch / step.max(1)) as i32)
}

/// Row-wise softmax of `(n, C)` logits.
pub fn softmax<T: Scalar>(logits: &[T], classes: usize) -> Vec<T> {
    let mut out = logits.to_vec();
    for row in out.chunks_mut(classes) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    out
}

/// Mean cross-entropy over the batch and its gradient `(softmax - one_hot) / n`.
pub fn cross_entropy<T: Scalar>(logits: &Tensor<T>, targets: &[usize]) -> Result<(T, Tensor<T>)> {
    let s = logits.shape();
    let classes = s.sample_len();
    if s.n != targets.len() || s.h != 1 || s.w != 1 {
        return Err(Error::shape(
            "cross_entropy",
            format!("({}, C, 1, 1)", targets.len()),
            s,
        ));
    }
    if let Some((i, &t)) = targets.iter().enumerate().find(|(_, &t)| t >= classes) {
        return Err(Error::Label {
            sample: i,
            label: t,
            classes,
        });
    }
    let n = T::from_f64(s.n as f64);
    let mut loss = T::zero();
    let mut grad = Tensor::zeros(s);
    for (i, (row, g)) in logits
        .data()
        .chunks(classes)
        .zip(grad.data_mut().chunks_mut(classes))
        .enumerate()
    {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let sum: T = row.iter().map(|&v| (v - max).exp()).sum();
        let log_z = max + sum.ln();
        loss += log_z - row[targets[i]];
        for (gv, &v) in g.iter_mut().zip(row) {
            *gv = (v - log_z).exp() / n;
        }
        g[targets[i]] -= T::one() / n;
    }
    Ok((loss / n, grad))
}

/// Momentum buffers, one per trainable parameter group.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub momentum: f32,
    pub velocity: Vec<Option<Vec<f32>>>,
}

impl OptimizerState {
    pub fn new(model: &ModelGraph, momentum: f32) -> Self {
        let velocity = model
            .param_groups()
            .iter()
            .zip(model.trainable_mask())
            .map(|(g, &t)| t.then(|| vec![0.0; g.len()]))
            .collect();
        Self { momentum, velocity }
    }
}

/// `v <- momentum * v + g; p <- p - lr * v`.
pub fn sgd_update(params: &mut [f32], velocity: &mut [f32], grads: &[f32], lr: f32, momentum: f32) {
    for ((p, v), &g) in params.iter_mut().zip(velocity.iter_mut()).zip(grads) {
        *v = momentum * *v + g;
        *p -= lr * *v;
    }
}

/// One SGD step over every group that has both a velocity buffer and a gradient.
pub fn sgd_step(
    state: &mut OptimizerState,
    model: &mut ModelGraph,
    grads: &[Option<Vec<f32>>],
    lr: f32,
) -> Result<()> {
    let mut groups = model.param_groups_mut();
    if grads.len() != groups.len() || state.velocity.len() != groups.len() {
        return Err(Error::Config(format!(
            "optimizer expects {} parameter groups, got {} gradients / {} buffers",
            groups.len(),
            grads.len(),
            state.velocity.len()
        )));
    }
    for (i, (params, velocity)) in groups.iter_mut().zip(&mut state.velocity).enumerate() {
        let (Some(velocity), Some(g)) = (velocity.as_mut(), grads[i].as_ref()) else {
            continue;
        };
        if g.len() != params.len() || velocity.len() != params.len() {
            return Err(Error::Config(format!(
                "gradient for group {i} has {} values, parameters have {}",
                g.len(),
                params.len()
            )));
        }
        sgd_update(params, velocity, g, lr, state.momentum);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochSummary {
    pub mean_loss: f32,
    pub accuracy: f32,
}

fn argmax_rows(logits: &Tensor, classes: usize) -> Vec<usize> {
    logits
        .data()
        .chunks(classes)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold(0, |best, (i, &v)| if v > row[best] { i } else { best })
        })
        .collect()
}

/// One pass over `batches`, stepping the optimizer after each batch.
pub fn train_epoch(
    model: &mut ModelGraph,
    dataset: &LabeledDataset,
    batches: &[Vec<usize>],
    lr: f64,
    opt: &mut OptimizerState,
) -> Result<EpochSummary> {
    if batches.is_empty() {
        return Err(Error::Data("no training batches".into()));
    }
    let mut loss_sum = 0.0f64;
    let mut correct = 0usize;
    let mut seen = 0usize;
    for batch in batches {
        if batch.len() < 2 {
            return Err(Error::DegenerateBatch {
                op: "train_epoch",
                count: batch.len(),
            });
        }
        let (x, labels) = dataset.batch(batch)?;
        let (logits, trace) = model.forward_train(&x)?;
        let (loss, grad) = cross_entropy(&logits, &labels)?;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("training loss became {loss}")));
        }
        let (grads, _) = model.backward(&trace, &grad, false)?;
        sgd_step(opt, model, &grads.groups, lr as f32)?;

        loss_sum += f64::from(loss);
        let preds = argmax_rows(&logits, model.num_classes());
        correct += preds.iter().zip(&labels).filter(|(p, l)| p == l).count();
        seen += labels.len();
    }
    Ok(EpochSummary {
        mean_loss: (loss_sum / batches.len() as f64) as f32,
        accuracy: correct as f32 / seen as f32,
    })
}

/// Eval-mode mean loss and accuracy over `indices`.
pub fn evaluate(
    model: &ModelGraph,
    dataset: &LabeledDataset,
    indices: &[usize],
    batch_size: usize,
) -> Result<EpochSummary> {
    if indices.is_empty() {
        return Err(Error::Data("nothing to evaluate".into()));
    }
    let mut loss_sum = 0.0f64;
    let mut correct = 0;
    for chunk in indices.chunks(batch_size.max(1)) {
        let (x, labels) = dataset.batch(chunk)?;
        let logits = model.forward_eval(&x)?;
        let (loss, _) = cross_entropy(&logits, &labels)?;
        loss_sum += f64::from(loss) * chunk.len() as f64;
        correct += argmax_rows(&logits, model.num_classes())
            .iter()
            .zip(&labels)
            .filter(|(p, l)| p == l)
            .count();
    }
    Ok(EpochSummary {
        mean_loss: (loss_sum / indices.len() as f64) as f32,
        accuracy: correct as f32 / indices.len() as f32,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train: EpochSummary,
    pub validation: Option<EpochSummary>,
}

/// Which samples of a dataset to train and (optionally) validate on.
#[derive(Debug, Clone, Copy)]
pub struct DatasetSplit<'a> {
    pub dataset: &'a LabeledDataset,
    pub train: &'a [usize],
    pub validation: Option<&'a [usize]>,
}

impl<'a> DatasetSplit<'a> {
    pub fn new(dataset: &'a LabeledDataset, train: &'a [usize]) -> Self {
        Self {
            dataset,
            train,
            validation: None,
        }
    }

    pub fn with_validation(mut self, validation: &'a [usize]) -> Self {
        self.validation = Some(validation);
        self
    }
}

/// Trains `model` for `cfg.epochs` epochs under the step schedule and
/// returns the per-epoch history. The trainable policy in `cfg` is applied
/// to the model first.
pub fn fit(model: &mut ModelGraph, split: DatasetSplit<'_>, cfg: &TrainConfig) -> Result<Vec<EpochRecord>> {
    cfg.validate()?;
    if split.train.is_empty() {
        return Err(Error::Data("empty training set".into()));
    }
    if split.train.len() < 2 {
        return Err(Error::DegenerateBatch {
            op: "fit",
            count: split.train.len(),
        });
    }
    if split.dataset.num_classes() != model.num_classes() {
        return Err(Error::Config(format!(
            "model has {} outputs but dataset has {} classes",
            model.num_classes(),
            split.dataset.num_classes()
        )));
    }
    model.set_trainable(cfg.trainable_policy);
    let mut opt = OptimizerState::new(model, cfg.momentum);
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = step_lr(cfg.base_lr, cfg.lr_step, cfg.lr_gamma, epoch);
        let batches = iterate_batches(split.train, cfg.batch_size, cfg.seed, epoch);
        let train = train_epoch(model, split.dataset, &batches, lr, &mut opt)?;
        let validation = split
            .validation
            .filter(|v| !v.is_empty())
            .map(|v| evaluate(model, split.dataset, v, cfg.batch_size))
            .transpose()?;
        log::debug!(
            "epoch {epoch:>2} lr {lr:.1e} loss {:.4} acc {:.3}",
            train.mean_loss,
            train.accuracy
        );
        history.push(EpochRecord {
            epoch,
            lr,
            train,
            validation,
        });
    }
    Ok(history)
}

/// `|a - f| / max(|a|, |f|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

pub const FD_STEP: f64 = 1e-5;

/// What [`gradient_check`] differentiates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradProbe {
    Conv { out_channels: usize, kernel: usize, stride: usize, padding: usize },
    /// Train mode, batch statistics.
    BatchNorm,
    /// Inputs kept at least `1e-3` away from the kink.
    Relu,
    MaxPool { kernel: usize, stride: usize },
    Linear { out_features: usize },
    /// Cross-entropy of the whole network.
    Network { num_classes: usize, scope: NetworkScope },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetworkScope {
    /// Head weights and bias only.
    Head,
    /// Every parameter group and the input.
    All,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub probe: GradProbe,
    pub coordinates: usize,
    pub max_relative_error: f64,
}

fn random_tensor(shape: Shape4, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let data = (0..shape.numel()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::from_vec(shape, data).expect("length matches shape")
}

fn random_fill(values: &mut [f64], scale: f64, rng: &mut ChaCha8Rng) {
    values.iter_mut().for_each(|v| *v = rng.gen_range(-scale..scale));
}

/// Picks up to `budget` coordinates out of `len`, always including the ends.
fn sample_coords(len: usize, budget: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if len <= budget {
        return (0..len).collect();
    }
    let mut out = vec![0, len - 1];
    while out.len() < budget {
        out.push(rng.gen_range(0..len));
    }
    out
}

/// Checks analytic against central-difference gradients in `f64` for one
/// coordinate set. `eval` returns the scalar loss for the current buffer.
fn compare<F>(
    buffer: &mut [f64],
    analytic: &[f64],
    coords: &[usize],
    mut eval: F,
    worst: &mut f64,
) -> Result<()>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    for &i in coords {
        let orig = buffer[i];
        buffer[i] = orig + FD_STEP;
        let plus = eval(buffer)?;
        buffer[i] = orig - FD_STEP;
        let minus = eval(buffer)?;
        buffer[i] = orig;
        let numeric = (plus - minus) / (2.0 * FD_STEP);
        if !numeric.is_finite() || !analytic[i].is_finite() {
            return Err(Error::Numeric(format!(
                "coordinate {i}: analytic {} numeric {numeric}",
                analytic[i]
            )));
        }
        *worst = worst.max(relative_error(analytic[i], numeric));
    }
    Ok(())
}

/// Absolute noise allowed when the exact gradient is zero.
const ZERO_GRAD_TOLERANCE: f64 = 1e-9;

/// For coordinates whose exact gradient vanishes: both sides must be within
/// [`ZERO_GRAD_TOLERANCE`] of zero.
fn compare_zero<F>(buffer: &mut [f64], analytic: &[f64], coords: &[usize], mut eval: F) -> Result<()>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    for &i in coords {
        let orig = buffer[i];
        buffer[i] = orig + FD_STEP;
        let plus = eval(buffer)?;
        buffer[i] = orig - FD_STEP;
        let minus = eval(buffer)?;
        buffer[i] = orig;
        let numeric = (plus - minus) / (2.0 * FD_STEP);
        if analytic[i].abs() > ZERO_GRAD_TOLERANCE || numeric.abs() > ZERO_GRAD_TOLERANCE {
            return Err(Error::Numeric(format!(
                "coordinate {i}: expected vanishing gradient, analytic {} numeric {numeric}",
                analytic[i]
            )));
        }
    }
    Ok(())
}

/// Bias groups of convolutions that feed a train-mode batch norm. The batch
/// mean subtracts any per-channel shift, so their gradient is exactly zero.
fn normalized_bias_groups<T: Scalar>(model: &ModelGraph<T>) -> Vec<usize> {
    let mut out = Vec::new();
    let mut group = 0;
    let layers = model.layers();
    for (i, layer) in layers.iter().enumerate() {
        if let LayerNode::Conv(_) = layer {
            if matches!(layers.get(i + 1), Some(LayerNode::BatchNorm(_))) {
                out.push(group + 1);
            }
        }
        group += layer.params().len();
    }
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Central finite differences (step `1e-5`) against the analytic backward
/// pass, evaluated in `f64`.
///
/// Layer probes use the scalar `sum(r * layer(x))` for a fixed random `r`;
/// the network probe uses mean cross-entropy on random labels. At most
/// `budget` coordinates are sampled from each input or parameter buffer.
/// Returns the largest relative error seen.
pub fn gradient_check(probe: GradProbe, shape: Shape4, seed: u64, budget: usize) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut coordinates = 0usize;
    let mut x = random_tensor(shape, &mut rng);

    match probe {
        GradProbe::Conv { out_channels, kernel, stride, padding } => {
            let mut conv = Conv2d::<f64>::new(shape.c, out_channels, kernel, stride, padding)?;
            random_fill(&mut conv.weight, 1.0, &mut rng);
            random_fill(&mut conv.bias, 1.0, &mut rng);
            let r = random_tensor(conv.output_shape(shape)?, &mut rng);
            let g = conv.backward(&x, &r)?;

            let coords = sample_coords(x.numel(), budget, &mut rng);
            let analytic = g.input.data().to_vec();
            let mut buf = x.data().to_vec();
            compare(&mut buf, &analytic, &coords, |b| {
                let xt = Tensor::from_vec(shape, b.to_vec())?;
                Ok(dot(conv.forward(&xt)?.data(), r.data()))
            }, &mut worst)?;
            coordinates += coords.len();

            for which in 0..2 {
                let (mut buf, analytic) = if which == 0 {
                    (conv.weight.clone(), g.weight.clone())
                } else {
                    (conv.bias.clone(), g.bias.clone())
                };
                let coords = sample_coords(buf.len(), budget, &mut rng);
                let mut probe_conv = conv.clone();
                compare(&mut buf, &analytic, &coords, |b| {
                    if which == 0 {
                        probe_conv.weight.copy_from_slice(b);
                    } else {
                        probe_conv.bias.copy_from_slice(b);
                    }
                    Ok(dot(probe_conv.forward(&x)?.data(), r.data()))
                }, &mut worst)?;
                coordinates += coords.len();
            }
        }
        GradProbe::BatchNorm => {
            let mut bn = BatchNorm2d::<f64>::new(shape.c)?;
            random_fill(&mut bn.gamma, 2.0, &mut rng);
            random_fill(&mut bn.beta, 1.0, &mut rng);
            let r = random_tensor(shape, &mut rng);
            let (_, cache) = bn.clone().forward_train(&x)?;
            let g = bn.backward(&cache, &r)?;

            let coords = sample_coords(x.numel(), budget, &mut rng);
            let mut buf = x.data().to_vec();
            compare(&mut buf, g.input.data(), &coords, |b| {
                let xt = Tensor::from_vec(shape, b.to_vec())?;
                Ok(dot(bn.clone().forward_train(&xt)?.0.data(), r.data()))
            }, &mut worst)?;
            coordinates += coords.len();

            for which in 0..2 {
                let (mut buf, analytic) = if which == 0 {
                    (bn.gamma.clone(), g.gamma.clone())
                } else {
                    (bn.beta.clone(), g.beta.clone())
                };
                let coords = sample_coords(buf.len(), budget, &mut rng);
                compare(&mut buf, &analytic, &coords, |b| {
                    let mut probe_bn = bn.clone();
                    if which == 0 {
                        probe_bn.gamma.copy_from_slice(b);
                    } else {
                        probe_bn.beta.copy_from_slice(b);
                    }
                    Ok(dot(probe_bn.forward_train(&x)?.0.data(), r.data()))
                }, &mut worst)?;
                coordinates += coords.len();
            }
        }
        GradProbe::Relu => {
            for v in x.data_mut() {
                *v = v.signum() * (1e-3 + v.abs());
            }
            let r = random_tensor(shape, &mut rng);
            let g = relu_backward(&x, &r)?;
            let coords = sample_coords(x.numel(), budget, &mut rng);
            let mut buf = x.data().to_vec();
            compare(&mut buf, g.data(), &coords, |b| {
                let xt = Tensor::from_vec(shape, b.to_vec())?;
                Ok(dot(relu_forward(&xt).data(), r.data()))
            }, &mut worst)?;
            coordinates += coords.len();
        }
        GradProbe::MaxPool { kernel, stride } => {
            let pool = MaxPool2d::new(kernel, stride)?;
            let (y, cache) = pool.forward(&x)?;
            let r = random_tensor(y.shape(), &mut rng);
            let g = pool.backward(&cache, &r)?;
            let coords = sample_coords(x.numel(), budget, &mut rng);
            let mut buf = x.data().to_vec();
            compare(&mut buf, g.data(), &coords, |b| {
                let xt = Tensor::from_vec(shape, b.to_vec())?;
                Ok(dot(pool.forward(&xt)?.0.data(), r.data()))
            }, &mut worst)?;
            coordinates += coords.len();
        }
        GradProbe::Linear { out_features } => {
            let mut lin = Linear::<f64>::new(shape.sample_len(), out_features)?;
            random_fill(&mut lin.weight, 1.0, &mut rng);
            random_fill(&mut lin.bias, 1.0, &mut rng);
            let x = x.flatten_to_rows();
            let fshape = x.shape();
            let r = random_tensor(Shape4::new(fshape.n, out_features, 1, 1), &mut rng);
            let g = lin.backward(&x, &r)?;

            let coords = sample_coords(x.numel(), budget, &mut rng);
            let mut buf = x.data().to_vec();
            compare(&mut buf, g.input.data(), &coords, |b| {
                let xt = Tensor::from_vec(fshape, b.to_vec())?;
                Ok(dot(lin.forward(&xt)?.data(), r.data()))
            }, &mut worst)?;
            coordinates += coords.len();

            for which in 0..2 {
                let (mut buf, analytic) = if which == 0 {
                    (lin.weight.clone(), g.weight.clone())
                } else {
                    (lin.bias.clone(), g.bias.clone())
                };
                let coords = sample_coords(buf.len(), budget, &mut rng);
                let mut probe_lin = lin.clone();
                compare(&mut buf, &analytic, &coords, |b| {
                    if which == 0 {
                        probe_lin.weight.copy_from_slice(b);
                    } else {
                        probe_lin.bias.copy_from_slice(b);
                    }
                    Ok(dot(probe_lin.forward(&x)?.data(), r.data()))
                }, &mut worst)?;
                coordinates += coords.len();
            }
        }
        GradProbe::Network { num_classes, scope } => {
            let mut model: ModelGraph<f64> =
                ModelGraph::<f32>::build(network_config(shape, num_classes), seed)?.cast();
            model.set_trainable(TrainablePolicy::All);
            let labels: Vec<usize> = (0..shape.n).map(|_| rng.gen_range(0..num_classes)).collect();
            let loss_of = |m: &ModelGraph<f64>, xt: &Tensor<f64>| -> Result<f64> {
                let (logits, _) = m.clone().forward_train(xt)?;
                Ok(cross_entropy(&logits, &labels)?.0)
            };
            let (logits, trace) = model.clone().forward_train(&x)?;
            let (_, grad_logits) = cross_entropy(&logits, &labels)?;
            let (grads, gx) = model.backward(&trace, &grad_logits, scope == NetworkScope::All)?;

            let first = match scope {
                NetworkScope::Head => model.head_group_start(),
                NetworkScope::All => 0,
            };
            let cancelled = normalized_bias_groups(&model);
            for group in first..model.group_count() {
                let analytic = grads.groups[group]
                    .clone()
                    .ok_or_else(|| Error::Numeric(format!("no gradient for group {group}")))?;
                let mut buf = model.param_groups()[group].to_vec();
                let coords = sample_coords(buf.len(), budget, &mut rng);
                let mut probe_model = model.clone();
                let mut eval = |b: &[f64]| {
                    probe_model.param_groups_mut()[group].copy_from_slice(b);
                    loss_of(&probe_model, &x)
                };
                if cancelled.contains(&group) {
                    compare_zero(&mut buf, &analytic, &coords, eval)?;
                } else {
                    compare(&mut buf, &analytic, &coords, &mut eval, &mut worst)?;
                }
                coordinates += coords.len();
            }
            if let Some(gx) = gx {
                let coords = sample_coords(x.numel(), budget, &mut rng);
                let mut buf = x.data().to_vec();
                compare(&mut buf, gx.data(), &coords, |b| {
                    loss_of(&model, &Tensor::from_vec(shape, b.to_vec())?)
                }, &mut worst)?;
                coordinates += coords.len();
            }
        }
    }
    Ok(GradCheckReport {
        probe,
        coordinates,
        max_relative_error: worst,
    })
}

fn network_config(shape: Shape4, num_classes: usize) -> crate::model::ArchitectureConfig {
    crate::model::ArchitectureConfig {
        input_channels: shape.c,
        input_h: shape.h,
        input_w: shape.w,
        ..crate::model::ArchitectureConfig::voltavision(num_classes)
    }
}
