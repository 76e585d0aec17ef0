//! A small feedforward / 1-D convolutional network that maps scenario
//! features to allocations, trained on solver labels.
//!
//! Activations are stored channel-major as `(channels, length)`. The input
//! is a single channel. `conv1d` layers keep the length (zero "same"
//! padding, cross-correlation); `dense` layers flatten their input and emit
//! a single channel. The output layer is always dense with identity
//! activation.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::allocator::{
    is_feasible, kkt_allocation, max_violation, per_ap_best_response, repair_allocation,
    solve_dual_from, AllocationProblem, AllocationSolution, Method, MultiplierState, SolverConfig,
    TraceRow,
};
use crate::dataset::{label_matrix, problem_features, Dataset, FeatureLayout, MinMax};
use crate::error::{invalid, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative in terms of the pre-activation `z` and output `a`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
            Activation::Identity => 1.0,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "identity" | "linear" => Ok(Activation::Identity),
            other => Err(Error::Config(format!("unknown activation {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Dense,
    Conv1d,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    /// Neurons (dense) or output channels (conv1d).
    pub width: usize,
    /// Kernel width, conv1d only; odd.
    pub kernel: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn dense(width: usize, activation: Activation) -> Self {
        Self {
            kind: LayerKind::Dense,
            width,
            kernel: 1,
            activation,
        }
    }

    pub fn conv1d(channels: usize, kernel: usize, activation: Activation) -> Self {
        Self {
            kind: LayerKind::Conv1d,
            width: channels,
            kernel,
            activation,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 {
            return Err(Error::Config("layer width must be at least 1".into()));
        }
        if self.kind == LayerKind::Conv1d && (self.kernel == 0 || self.kernel.is_multiple_of(2)) {
            return Err(Error::Config(format!(
                "conv1d kernel width {} must be odd",
                self.kernel
            )));
        }
        Ok(())
    }

    fn to_arch(self) -> String {
        match self.kind {
            LayerKind::Dense => format!("dense:{}:{}", self.width, self.activation.name()),
            LayerKind::Conv1d => format!(
                "conv1d:{}:{}:{}",
                self.width,
                self.kernel,
                self.activation.name()
            ),
        }
    }
}

/// Parse `conv1d:16:3,conv1d:16:3,dense:64`; each layer may end in an
/// activation name (`relu` by default).
pub fn parse_arch(text: &str) -> Result<Vec<LayerSpec>> {
    let bad = |part: &str| Error::Config(format!("bad layer spec {part:?}"));
    let mut layers = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let fields: Vec<&str> = part.split(':').collect();
        let num = |i: usize| {
            fields
                .get(i)
                .and_then(|f| f.parse::<usize>().ok())
                .ok_or_else(|| bad(part))
        };
        let spec = match fields[0] {
            "dense" => {
                let act = match fields.len() {
                    2 => Activation::Relu,
                    3 => fields[2].parse()?,
                    _ => return Err(bad(part)),
                };
                LayerSpec::dense(num(1)?, act)
            }
            "conv1d" => {
                let act = match fields.len() {
                    3 => Activation::Relu,
                    4 => fields[3].parse()?,
                    _ => return Err(bad(part)),
                };
                LayerSpec::conv1d(num(1)?, num(2)?, act)
            }
            _ => return Err(bad(part)),
        };
        spec.validate()?;
        layers.push(spec);
    }
    Ok(layers)
}

pub fn arch_string(layers: &[LayerSpec]) -> String {
    layers
        .iter()
        .map(|l| l.to_arch())
        .collect::<Vec<_>>()
        .join(",")
}

/// Same-length 1-D cross-correlation with zero padding, plus a bias.
pub fn conv_transform(input: &[f64], kernel: &[f64], bias: f64) -> Result<Vec<f64>> {
    if input.is_empty() {
        return Err(invalid("convolution input is empty"));
    }
    if kernel.is_empty() || kernel.len().is_multiple_of(2) {
        return Err(invalid("kernel width must be odd"));
    }
    if kernel.len() > input.len() {
        return Err(invalid("kernel is wider than the input"));
    }
    let mut out = vec![bias; input.len()];
    conv_accumulate(input, kernel, &mut out);
    Ok(out)
}

fn conv_accumulate(x: &[f64], w: &[f64], out: &mut [f64]) {
    let n = x.len() as isize;
    let half = (w.len() / 2) as isize;
    for (j, wj) in w.iter().enumerate() {
        let shift = j as isize - half;
        let lo = (-shift).max(0);
        let hi = (n - shift).min(n);
        for i in lo..hi {
            out[i as usize] += wj * x[(i + shift) as usize];
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    pub in_channels: usize,
    pub in_len: usize,
    /// Dense: `width x (in_channels * in_len)` row-major.
    /// Conv1d: `width x in_channels x kernel`.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Layer {
    fn new(
        spec: LayerSpec,
        in_channels: usize,
        in_len: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        spec.validate()?;
        let fan_in = match spec.kind {
            LayerKind::Dense => in_channels * in_len,
            LayerKind::Conv1d => {
                if spec.kernel > in_len {
                    return Err(Error::Config(format!(
                        "conv1d kernel {} is wider than its input length {in_len}",
                        spec.kernel
                    )));
                }
                in_channels * spec.kernel
            }
        };
        let bound = 1.0 / (fan_in as f64).sqrt();
        let weights = (0..spec.width * fan_in)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        Ok(Self {
            spec,
            in_channels,
            in_len,
            weights,
            biases: vec![0.0; spec.width],
        })
    }

    pub fn out_channels(&self) -> usize {
        match self.spec.kind {
            LayerKind::Dense => 1,
            LayerKind::Conv1d => self.spec.width,
        }
    }

    pub fn out_len(&self) -> usize {
        match self.spec.kind {
            LayerKind::Dense => self.spec.width,
            LayerKind::Conv1d => self.in_len,
        }
    }

    fn output_size(&self) -> usize {
        self.out_channels() * self.out_len()
    }

    fn pre_activation(&self, x: &[f64]) -> Vec<f64> {
        match self.spec.kind {
            LayerKind::Dense => {
                let n = x.len();
                self.biases
                    .iter()
                    .enumerate()
                    .map(|(o, b)| b + dot(&self.weights[o * n..(o + 1) * n], x))
                    .collect()
            }
            LayerKind::Conv1d => {
                let (len, kw, cin) = (self.in_len, self.spec.kernel, self.in_channels);
                let mut out = vec![0.0; self.output_size()];
                for (o, b) in self.biases.iter().enumerate() {
                    let y = &mut out[o * len..(o + 1) * len];
                    y.fill(*b);
                    for c in 0..cin {
                        let w = &self.weights[(o * cin + c) * kw..(o * cin + c + 1) * kw];
                        conv_accumulate(&x[c * len..(c + 1) * len], w, y);
                    }
                }
                out
            }
        }
    }

    /// Accumulate parameter gradients for upstream gradient `dz` and
    /// return the gradient with respect to the input.
    fn backward(&self, x: &[f64], dz: &[f64], grad: &mut LayerGrad, need_input: bool) -> Vec<f64> {
        let mut dx = if need_input {
            vec![0.0; x.len()]
        } else {
            Vec::new()
        };
        match self.spec.kind {
            LayerKind::Dense => {
                let n = x.len();
                for (o, d) in dz.iter().enumerate() {
                    grad.biases[o] += d;
                    if *d == 0.0 {
                        continue;
                    }
                    let w = &self.weights[o * n..(o + 1) * n];
                    for (g, xi) in grad.weights[o * n..(o + 1) * n].iter_mut().zip(x) {
                        *g += d * xi;
                    }
                    if need_input {
                        for (dxi, wi) in dx.iter_mut().zip(w) {
                            *dxi += d * wi;
                        }
                    }
                }
            }
            LayerKind::Conv1d => {
                let (len, kw, cin) = (self.in_len, self.spec.kernel, self.in_channels);
                let half = (kw / 2) as isize;
                for o in 0..self.spec.width {
                    let dy = &dz[o * len..(o + 1) * len];
                    grad.biases[o] += dy.iter().sum::<f64>();
                    for c in 0..cin {
                        let base = (o * cin + c) * kw;
                        let xc = &x[c * len..(c + 1) * len];
                        for j in 0..kw {
                            let shift = j as isize - half;
                            let lo = (-shift).max(0) as usize;
                            let hi = ((len as isize - shift).min(len as isize)) as usize;
                            let mut acc = 0.0;
                            for i in lo..hi {
                                acc += dy[i] * xc[(i as isize + shift) as usize];
                            }
                            grad.weights[base + j] += acc;
                            if need_input {
                                let w = self.weights[base + j];
                                let dxc = &mut dx[c * len..(c + 1) * len];
                                for i in lo..hi {
                                    dxc[(i as isize + shift) as usize] += dy[i] * w;
                                }
                            }
                        }
                    }
                }
            }
        }
        dx
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrad {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
}

impl Gradients {
    fn zeros_like(net: &Network) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weights: vec![0.0; l.weights.len()],
                    biases: vec![0.0; l.biases.len()],
                })
                .collect(),
        }
    }

    fn scale(&mut self, s: f64) {
        for g in &mut self.layers {
            g.weights
                .iter_mut()
                .chain(g.biases.iter_mut())
                .for_each(|v| *v *= s);
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|g| g.weights.iter().chain(&g.biases))
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Activations from one forward pass: `pre[d]` and `post[d]` for every
/// layer, with `post` of the last layer being the network output.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardPass {
    pub input: Vec<f64>,
    pub pre: Vec<Vec<f64>>,
    pub post: Vec<Vec<f64>>,
}

impl ForwardPass {
    pub fn output(&self) -> &[f64] {
        self.post.last().map_or(&self.input[..0], Vec::as_slice)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub input_len: usize,
    pub layers: Vec<Layer>,
}

impl Network {
    /// Hidden layers from `hidden` followed by an identity dense layer of
    /// width `output_len`. Weights are uniform in `+-1/sqrt(fan_in)`,
    /// biases zero.
    pub fn new(
        input_len: usize,
        hidden: &[LayerSpec],
        output_len: usize,
        seed: u64,
    ) -> Result<Self> {
        if input_len == 0 || output_len == 0 {
            return Err(Error::Config(
                "network input and output must be non-empty".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let (mut channels, mut len) = (1, input_len);
        for spec in hidden.iter().chain(std::iter::once(&LayerSpec::dense(
            output_len,
            Activation::Identity,
        ))) {
            let layer = Layer::new(*spec, channels, len, &mut rng)?;
            channels = layer.out_channels();
            len = layer.out_len();
            layers.push(layer);
        }
        Ok(Self { input_len, layers })
    }

    pub fn output_len(&self) -> usize {
        self.layers.last().map_or(0, Layer::output_size)
    }

    pub fn num_parameters(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.biases.len())
            .sum()
    }

    pub fn hidden_specs(&self) -> Vec<LayerSpec> {
        self.layers[..self.layers.len() - 1]
            .iter()
            .map(|l| l.spec)
            .collect()
    }

    pub fn forward(&self, x: &[f64]) -> Result<ForwardPass> {
        if x.len() != self.input_len {
            return Err(invalid(format!(
                "input has {} values, network expects {}",
                x.len(),
                self.input_len
            )));
        }
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        for (d, layer) in self.layers.iter().enumerate() {
            let input = post.last().map_or(x, Vec::as_slice);
            let z = layer.pre_activation(input);
            let a: Vec<f64> = z.iter().map(|v| layer.spec.activation.apply(*v)).collect();
            if a.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric {
                    layer: d,
                    msg: "non-finite activation".into(),
                });
            }
            pre.push(z);
            post.push(a);
        }
        Ok(ForwardPass {
            input: x.to_vec(),
            pre,
            post,
        })
    }

    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(x)?.post.pop().unwrap_or_default())
    }

    /// Batch MSE and its exact gradient with respect to every parameter.
    pub fn compute_gradients(&self, batch: &[(Vec<f64>, Vec<f64>)]) -> Result<(f64, Gradients)> {
        if batch.is_empty() {
            return Err(invalid("gradient batch is empty"));
        }
        let mut grads = Gradients::zeros_like(self);
        let mut loss = 0.0;
        let out_len = self.output_len();
        for (x, y) in batch {
            if y.len() != out_len {
                return Err(invalid(format!(
                    "target has {} values, network emits {out_len}",
                    y.len()
                )));
            }
            let pass = self.forward(x)?;
            let out = pass.output();
            loss += mse_loss(out, y)?;
            // d(mean squared error)/d(output)
            let mut upstream: Vec<f64> = out
                .iter()
                .zip(y)
                .map(|(o, t)| 2.0 * (o - t) / out_len as f64)
                .collect();
            for d in (0..self.layers.len()).rev() {
                let layer = &self.layers[d];
                let act = layer.spec.activation;
                let dz: Vec<f64> = upstream
                    .iter()
                    .zip(pass.pre[d].iter().zip(&pass.post[d]))
                    .map(|(g, (z, a))| g * act.derivative(*z, *a))
                    .collect();
                let input = if d == 0 {
                    &pass.input
                } else {
                    &pass.post[d - 1]
                };
                upstream = layer.backward(input, &dz, &mut grads.layers[d], d > 0);
            }
        }
        let n = batch.len() as f64;
        grads.scale(1.0 / n);
        Ok((loss / n, grads))
    }

    fn parameters_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.biases.iter_mut()))
    }

    pub fn parameters(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.biases))
            .copied()
            .collect()
    }

    pub fn set_parameters(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.num_parameters() {
            return Err(invalid("parameter count mismatch"));
        }
        for (p, v) in self.parameters_mut().zip(values) {
            *p = *v;
        }
        Ok(())
    }

    pub fn mean_loss(&self, data: &[(Vec<f64>, Vec<f64>)]) -> Result<f64> {
        if data.is_empty() {
            return Err(invalid("cannot evaluate loss on no data"));
        }
        let mut total = 0.0;
        for (x, y) in data {
            total += mse_loss(&self.predict(x)?, y)?;
        }
        Ok(total / data.len() as f64)
    }
}

/// Mean of squared component differences.
pub fn mse_loss(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(invalid(format!(
            "prediction has {} values, target has {}",
            pred.len(),
            target.len()
        )));
    }
    Ok(pred
        .iter()
        .zip(target)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / pred.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean batch loss over the epoch.
    pub train_mse: f64,
    /// Validation loss after the epoch.
    pub val_mse: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputLayout {
    /// Per-user totals followed by per-AP loads, `K + L` values.
    Summary,
    /// The full `K x L` allocation, row-major.
    Full,
}

impl OutputLayout {
    pub fn len(&self, layout: FeatureLayout) -> usize {
        match self {
            OutputLayout::Summary => layout.k + layout.l,
            OutputLayout::Full => layout.k * layout.l,
        }
    }

    pub fn targets(&self, e: &DMatrix<f64>) -> Vec<f64> {
        match self {
            OutputLayout::Summary => {
                let mut t: Vec<f64> = (0..e.nrows()).map(|k| e.row(k).sum()).collect();
                t.extend((0..e.ncols()).map(|l| e.column(l).sum()));
                t
            }
            OutputLayout::Full => crate::dataset::flatten_allocation(e),
        }
    }

    fn name(&self) -> &'static str {
        match self {
            OutputLayout::Summary => "summary",
            OutputLayout::Full => "full",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurrogateConfig {
    pub arch: String,
    pub output: OutputLayout,
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    /// Refinement iterations after repairing a prediction.
    pub refine: usize,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        Self {
            arch: "conv1d:16:3,conv1d:16:3,dense:64".into(),
            output: OutputLayout::Summary,
            epochs: 50,
            learning_rate: 1e-3,
            momentum: 0.9,
            batch_size: 32,
            refine: 5,
        }
    }
}

impl SurrogateConfig {
    pub fn validate(&self) -> Result<()> {
        parse_arch(&self.arch)?;
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "epochs and batch_size must be at least 1".into(),
            ));
        }
        if !(self.learning_rate >= 0.0 && (0.0..1.0).contains(&self.momentum)) {
            return Err(Error::Config(
                "learning rate must be >= 0 and momentum in [0, 1)".into(),
            ));
        }
        Ok(())
    }
}

/// Mini-batch SGD with momentum. Returns per-epoch statistics and leaves
/// the best-validation weights in `net`.
pub fn train_network(
    net: &mut Network,
    train: &[(Vec<f64>, Vec<f64>)],
    val: &[(Vec<f64>, Vec<f64>)],
    cfg: &SurrogateConfig,
    seed: u64,
) -> Result<Vec<EpochStats>> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(invalid("training and validation sets must be non-empty"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut velocity = vec![0.0; net.num_parameters()];
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, Vec<f64>)> = None;
    let last_finite = |h: &Vec<EpochStats>| h.last().map_or(0, |s| s.epoch);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<(Vec<f64>, Vec<f64>)> =
                chunk.iter().map(|&i| train[i].clone()).collect();
            let (loss, grads) = match net.compute_gradients(&batch) {
                Ok(v) => v,
                Err(Error::Numeric { .. }) => {
                    return Err(Error::TrainingFailure {
                        last_finite_epoch: last_finite(&history),
                    })
                }
                Err(e) => return Err(e),
            };
            if !loss.is_finite() {
                return Err(Error::TrainingFailure {
                    last_finite_epoch: last_finite(&history),
                });
            }
            total += loss * chunk.len() as f64;
            let flat = grads
                .layers
                .iter()
                .flat_map(|g| g.weights.iter().chain(&g.biases));
            for ((p, v), g) in net.parameters_mut().zip(velocity.iter_mut()).zip(flat) {
                *v = cfg.momentum * *v + g;
                *p -= cfg.learning_rate * *v;
            }
        }
        let val_mse = match net.mean_loss(val) {
            Ok(v) if v.is_finite() => v,
            Ok(_) | Err(Error::Numeric { .. }) => {
                return Err(Error::TrainingFailure {
                    last_finite_epoch: last_finite(&history),
                })
            }
            Err(e) => return Err(e),
        };
        let train_mse = total / train.len() as f64;
        if !train_mse.is_finite() {
            return Err(Error::TrainingFailure {
                last_finite_epoch: last_finite(&history),
            });
        }
        history.push(EpochStats {
            epoch,
            train_mse,
            val_mse,
        });
        if best.as_ref().is_none_or(|(b, _)| val_mse < *b) {
            best = Some((val_mse, net.parameters()));
        }
    }
    if let Some((_, params)) = best {
        net.set_parameters(&params)?;
    }
    Ok(history)
}

/// Input and output scaling carried by a trained model.
#[derive(Clone, Debug, PartialEq)]
pub struct Normalizers {
    pub input: MinMax,
    pub output: MinMax,
}

impl Normalizers {
    /// Input constants from the dataset, output constants fitted to its
    /// targets under `output`.
    pub fn fit(ds: &Dataset, output: OutputLayout) -> Result<Self> {
        let targets: Vec<Vec<f64>> = ds
            .samples
            .iter()
            .map(|s| output.targets(&label_matrix(ds.layout, &s.label)))
            .collect();
        Ok(Self {
            input: ds.feature_norm.clone(),
            output: MinMax::fit(targets.iter().map(Vec::as_slice))?,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SurrogateModel {
    pub network: Network,
    pub layout: FeatureLayout,
    pub output: OutputLayout,
    pub norm: Normalizers,
    pub history: Vec<EpochStats>,
}

impl SurrogateModel {
    pub fn init(
        arch: &[LayerSpec],
        layout: FeatureLayout,
        output: OutputLayout,
        norm: Normalizers,
        seed: u64,
    ) -> Result<Self> {
        if norm.input.len() != layout.feature_len() || norm.output.len() != output.len(layout) {
            return Err(Error::Config(
                "normalization constants do not match the layout".into(),
            ));
        }
        Ok(Self {
            network: Network::new(layout.feature_len(), arch, output.len(layout), seed)?,
            layout,
            output,
            norm,
            history: Vec::new(),
        })
    }

    /// Normalized `(features, targets)` pairs for training.
    pub fn prepare(&self, ds: &Dataset) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
        if ds.layout != self.layout {
            return Err(Error::Config(
                "dataset layout does not match the model".into(),
            ));
        }
        Ok(ds
            .samples
            .iter()
            .map(|s| {
                let t = self.output.targets(&label_matrix(ds.layout, &s.label));
                (
                    self.norm.input.normalize(&s.features),
                    self.norm.output.normalize(&t),
                )
            })
            .collect())
    }

    pub fn train(
        &mut self,
        train: &Dataset,
        val: &Dataset,
        cfg: &SurrogateConfig,
        seed: u64,
    ) -> Result<&[EpochStats]> {
        let tr = self.prepare(train)?;
        let va = self.prepare(val)?;
        self.history = train_network(&mut self.network, &tr, &va, cfg, seed)?;
        Ok(&self.history)
    }

    /// De-normalized network output for a problem.
    pub fn predict_raw(&self, problem: &AllocationProblem) -> Result<Vec<f64>> {
        if (problem.num_users(), problem.num_aps()) != (self.layout.k, self.layout.l) {
            return Err(Error::Config(
                "problem size does not match the model".into(),
            ));
        }
        let x = self.norm.input.normalize(&problem_features(problem));
        Ok(self.norm.output.denormalize(&self.network.predict(&x)?))
    }

    /// Allocation implied by the raw output, before repair, and the prices
    /// it was reconstructed from when the output is a summary.
    fn decode(
        &self,
        problem: &AllocationProblem,
        cfg: &SolverConfig,
    ) -> Result<(DMatrix<f64>, Option<MultiplierState>)> {
        let raw = self.predict_raw(problem)?;
        let (k, l) = (self.layout.k, self.layout.l);
        Ok(match self.output {
            OutputLayout::Full => (
                DMatrix::from_row_slice(k, l, &raw).map(|v| v.max(0.0)),
                None,
            ),
            OutputLayout::Summary => {
                let (lambda, nu) = prices_for_margins(problem, &raw[..k], &raw[k..]);
                let state = state_from_prices(lambda, &nu, problem, cfg);
                (respond_all(&state, problem)?, Some(state))
            }
        })
    }

    /// Allocation matrix implied by the raw output, before repair.
    pub fn predict_allocation(&self, problem: &AllocationProblem) -> Result<DMatrix<f64>> {
        Ok(self.decode(problem, &SolverConfig::default())?.0)
    }

    pub fn to_text(&self) -> String {
        let join = |v: &[f64]| {
            v.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(" ")
        };
        let mut out = String::from("owalloc-surrogate v1\n");
        let _ = writeln!(out, "layout k={} l={}", self.layout.k, self.layout.l);
        let _ = writeln!(out, "output {}", self.output.name());
        let _ = writeln!(out, "arch {}", arch_string(&self.network.hidden_specs()));
        let _ = writeln!(out, "input_min {}", join(&self.norm.input.min));
        let _ = writeln!(out, "input_max {}", join(&self.norm.input.max));
        let _ = writeln!(out, "output_min {}", join(&self.norm.output.min));
        let _ = writeln!(out, "output_max {}", join(&self.norm.output.max));
        for (d, layer) in self.network.layers.iter().enumerate() {
            let _ = writeln!(out, "layer {d} weights {}", layer.weights.len());
            let _ = writeln!(out, "{}", join(&layer.weights));
            let _ = writeln!(out, "layer {d} biases {}", layer.biases.len());
            let _ = writeln!(out, "{}", join(&layer.biases));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let mut next = |key: &str| -> Result<(usize, String)> {
            let (i, line) = lines.next().ok_or(Error::Parse {
                line: 0,
                msg: format!("missing `{key}`"),
            })?;
            let rest = line.strip_prefix(key).ok_or_else(|| Error::Parse {
                line: i + 1,
                msg: format!("expected `{key}`"),
            })?;
            Ok((i + 1, rest.trim().to_string()))
        };
        let floats = |line: usize, s: &str| -> Result<Vec<f64>> {
            s.split_whitespace()
                .map(|v| {
                    v.parse::<f64>().map_err(|e| Error::Parse {
                        line,
                        msg: e.to_string(),
                    })
                })
                .collect()
        };
        let (line, version) = next("owalloc-surrogate")?;
        if version != "v1" {
            return Err(Error::Parse {
                line,
                msg: format!("unsupported weights version {version:?}"),
            });
        }
        let (line, layout) = next("layout")?;
        let layout = {
            let mut parts = layout.split_whitespace();
            let k = parts
                .next()
                .and_then(|p| p.strip_prefix("k="))
                .and_then(|v| v.parse().ok());
            let l = parts
                .next()
                .and_then(|p| p.strip_prefix("l="))
                .and_then(|v| v.parse().ok());
            match (k, l) {
                (Some(k), Some(l)) => FeatureLayout { k, l },
                _ => {
                    return Err(Error::Parse {
                        line,
                        msg: "bad layout".into(),
                    })
                }
            }
        };
        let (line, output) = next("output")?;
        let output = match output.as_str() {
            "summary" => OutputLayout::Summary,
            "full" => OutputLayout::Full,
            _ => {
                return Err(Error::Parse {
                    line,
                    msg: format!("bad output layout {output:?}"),
                })
            }
        };
        let (_, arch) = next("arch")?;
        let arch = parse_arch(&arch)?;
        let mut norm_rows = Vec::new();
        for key in ["input_min", "input_max", "output_min", "output_max"] {
            let (line, rest) = next(key)?;
            norm_rows.push(floats(line, &rest)?);
        }
        let norm = Normalizers {
            input: MinMax {
                min: norm_rows[0].clone(),
                max: norm_rows[1].clone(),
            },
            output: MinMax {
                min: norm_rows[2].clone(),
                max: norm_rows[3].clone(),
            },
        };
        let mut model = SurrogateModel::init(&arch, layout, output, norm, 0)?;
        for d in 0..model.network.layers.len() {
            for part in ["weights", "biases"] {
                let (line, header) = next(&format!("layer {d} {part}"))?;
                let n: usize = header.parse().map_err(|_| Error::Parse {
                    line,
                    msg: "bad count".into(),
                })?;
                let (line, values) = next("")?;
                let values = floats(line, &values)?;
                let layer = &mut model.network.layers[d];
                let slot = if part == "weights" {
                    &mut layer.weights
                } else {
                    &mut layer.biases
                };
                if values.len() != n || n != slot.len() {
                    return Err(Error::Parse {
                        line,
                        msg: format!(
                            "layer {d} {part}: expected {} values, found {}",
                            slot.len(),
                            values.len()
                        ),
                    });
                }
                *slot = values;
            }
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

/// AP prices `lambda >= 0` and signed user prices `nu` whose closed-form
/// best response has (approximately) the requested user totals and AP
/// loads. Targets are clamped into their feasible boxes first.
///
/// Each total is monotone in its own price, so the prices are found by
/// Gauss-Seidel sweeps of 1-D bisections.
pub fn prices_for_margins(
    problem: &AllocationProblem,
    totals: &[f64],
    loads: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let (k, l) = problem.rates.shape();
    let totals: Vec<f64> = (0..k)
        .map(|u| totals[u].clamp(problem.e_min[u], problem.e_max[u]))
        .collect();
    let loads: Vec<f64> = (0..l)
        .map(|a| loads[a].clamp(0.0, problem.capacity[a]))
        .collect();
    let xr = |u: usize, a: usize| problem.weights[u] * problem.rates[(u, a)];
    let kappa = (0..k)
        .flat_map(|u| (0..l).map(move |a| (u, a)))
        .map(|(u, a)| xr(u, a))
        .fold(0.0, f64::max);
    if kappa <= 0.0 {
        return (vec![0.0; l], vec![0.0; k]);
    }
    let e = |u: usize, a: usize, mu: f64| {
        kkt_allocation(
            mu,
            problem.weights[u],
            problem.rates[(u, a)],
            problem.e_max[u],
        )
    };
    // smallest p in [lo, hi] with f(p) <= target for non-increasing f
    let bisect = |lo: f64, hi: f64, target: f64, f: &dyn Fn(f64) -> f64| {
        let (mut lo, mut hi) = (lo, hi);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        hi
    };
    let mut lambda = vec![0.0; l];
    let mut nu = vec![0.0; k];
    for _ in 0..200 {
        for u in 0..k {
            let lam_min = lambda.iter().copied().fold(f64::INFINITY, f64::min);
            let f = |v: f64| (0..l).map(|a| e(u, a, lambda[a] + v)).sum::<f64>();
            nu[u] = bisect(-lam_min, kappa, totals[u], &f);
        }
        for a in 0..l {
            let g = |lam: f64| (0..k).map(|u| e(u, a, lam + nu[u])).sum::<f64>();
            let nu_min = nu.iter().copied().fold(f64::INFINITY, f64::min);
            lambda[a] = if g(0.0) <= loads[a] {
                0.0
            } else {
                bisect(0.0, kappa - nu_min.min(0.0), loads[a], &g)
            };
        }
    }
    (lambda, nu)
}

fn state_from_prices(
    lambda: Vec<f64>,
    nu: &[f64],
    problem: &AllocationProblem,
    cfg: &SolverConfig,
) -> MultiplierState {
    MultiplierState {
        lambda,
        eta_max: nu.iter().map(|v| v.max(0.0)).collect(),
        eta_min: nu.iter().map(|v| (-v).max(0.0)).collect(),
        iteration: 0,
        schedule: cfg.schedule(problem),
    }
}

fn respond_all(state: &MultiplierState, problem: &AllocationProblem) -> Result<DMatrix<f64>> {
    let (k, l) = problem.rates.shape();
    let mut e = DMatrix::zeros(k, l);
    for a in 0..l {
        for (u, v) in per_ap_best_response(a, state, problem)?
            .into_iter()
            .enumerate()
        {
            e[(u, a)] = v;
        }
    }
    Ok(e)
}

/// Prices consistent with `e` under the per-link stationarity condition
/// `mu = xi r / (1 + xi r e)`, split additively into AP and user parts.
fn infer_multipliers(
    e: &DMatrix<f64>,
    problem: &AllocationProblem,
    cfg: &SolverConfig,
) -> MultiplierState {
    let (k, l) = e.shape();
    let mut lambda = vec![0.0; l];
    let mut nu = vec![0.0; k];
    let mut links = Vec::new();
    for u in 0..k {
        for a in 0..l {
            let xr = problem.weights[u] * problem.rates[(u, a)];
            if xr > 0.0 && e[(u, a)] > 0.0 {
                links.push((u, a, xr / (1.0 + xr * e[(u, a)])));
            }
        }
    }
    for _ in 0..20 {
        let mut acc = vec![(0.0, 0usize); l];
        for &(u, a, mu) in &links {
            acc[a].0 += mu - nu[u];
            acc[a].1 += 1;
        }
        for a in 0..l {
            lambda[a] = if acc[a].1 > 0 {
                acc[a].0 / acc[a].1 as f64
            } else {
                0.0
            };
        }
        let mut acc = vec![(0.0, 0usize); k];
        for &(u, a, mu) in &links {
            acc[u].0 += mu - lambda[a];
            acc[u].1 += 1;
        }
        for u in 0..k {
            nu[u] = if acc[u].1 > 0 {
                acc[u].0 / acc[u].1 as f64
            } else {
                0.0
            };
        }
    }
    // keep lambda >= 0 by moving any negative offset into the user terms
    let shift = lambda.iter().copied().fold(0.0, f64::min);
    lambda.iter_mut().for_each(|v| *v -= shift);
    nu.iter_mut().for_each(|v| *v += shift);
    state_from_prices(lambda, &nu, problem, cfg)
}

/// Repaired model prediction, optionally refined by `refine` iterations
/// of the dual solver warm-started from prices consistent with the
/// prediction. The best feasible candidate is returned.
pub fn predict_and_repair(
    model: &SurrogateModel,
    problem: &AllocationProblem,
    refine: usize,
    solver: &SolverConfig,
) -> Result<AllocationSolution> {
    problem.validate()?;
    let (raw, prices) = model.decode(problem, solver)?;
    let repaired = repair_allocation(&raw, problem);
    if refine == 0 {
        if !is_feasible(&repaired, problem) {
            return Err(Error::Infeasible(
                "repair could not reach a feasible allocation".into(),
            ));
        }
        let mut sol = AllocationSolution::finished(repaired, problem, Method::Surrogate);
        sol.trace = vec![TraceRow {
            iter: 0,
            utility: sol.utility,
            max_violation: max_violation(&raw, problem),
        }];
        return Ok(sol);
    }
    let start = match prices {
        Some(state) => state,
        None => infer_multipliers(&repaired, problem, solver),
    };
    let mut cfg = solver.clone();
    cfg.max_iters = refine;
    let mut sol = solve_dual_from(problem, &cfg, &start, Some(&repaired))?;
    sol.method = Method::Surrogate;
    sol.diagnostic = None;
    Ok(sol)
}
