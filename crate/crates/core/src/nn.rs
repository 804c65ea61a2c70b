//! A small fully connected network with exact backpropagation, a softmax
//! classification head and SGD / Adam optimizers.
//!
//! Layers compute `act(x W^T + b)` with `W` stored `out x in`. Weights and
//! biases are initialised uniformly in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`
//! from the network's seed stream.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng as _;

use crate::error::{invalid, shape, Error, Result};
use crate::rng::{stream, stream_rng, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub input: usize,
    pub output: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(input: usize, output: usize, activation: Activation) -> Self {
        Self { input, output, activation }
    }
}

/// Renders specs as `2x20:relu,20x20:identity`.
pub fn format_layer_specs(specs: &[LayerSpec]) -> String {
    specs
        .iter()
        .map(|s| format!("{}x{}:{}", s.input, s.output, s.activation.name()))
        .collect::<Vec<_>>()
        .join(",")
}

pub fn parse_layer_specs(text: &str) -> Result<Vec<LayerSpec>> {
    text.split(',')
        .map(|part| {
            let (dims, act) = part
                .split_once(':')
                .ok_or_else(|| invalid(format!("layer spec {part:?} lacks an activation")))?;
            let (i, o) = dims
                .split_once('x')
                .ok_or_else(|| invalid(format!("layer spec {part:?} lacks 'x'")))?;
            let num = |v: &str| v.parse::<usize>().map_err(|e| invalid(format!("{part:?}: {e}")));
            let activation = match act {
                "relu" => Activation::Relu,
                "identity" => Activation::Identity,
                other => return Err(invalid(format!("unknown activation {other:?}"))),
            };
            Ok(LayerSpec::new(num(i)?, num(o)?, activation))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl Dense {
    pub fn spec(&self) -> LayerSpec {
        LayerSpec::new(self.weight.ncols(), self.weight.nrows(), self.activation)
    }
}

static NEXT_VERSION: AtomicU64 = AtomicU64::new(1);

fn fresh_version() -> u64 {
    NEXT_VERSION.fetch_add(1, Ordering::Relaxed)
}

fn uniform_fan_in(rng: &mut Rng, rows: usize, cols: usize, fan_in: usize) -> Array2<f64> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-bound..bound))
}

/// Stack of dense layers.
///
/// Every mutable access to the parameters stamps a new version; a [`Tape`]
/// remembers the version it was recorded at and [`DenseNet::backward`]
/// refuses tapes from other versions.
#[derive(Clone, Debug)]
pub struct DenseNet {
    layers: Vec<Dense>,
    seed: u64,
    version: u64,
}

impl PartialEq for DenseNet {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

/// Activations cached by [`DenseNet::forward`].
#[derive(Clone, Debug)]
pub struct Tape {
    inputs: Vec<Array2<f64>>,
    pre_activations: Vec<Array2<f64>>,
    version: u64,
}

/// Parameter gradients, layer by layer, shaped like the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseGrads {
    pub layers: Vec<(Array2<f64>, Array1<f64>)>,
}

impl DenseGrads {
    /// Flat views in the same order as [`DenseNet::param_slices_mut`].
    pub fn slices(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|(w, b)| [w.as_slice().expect("standard layout"), b.as_slice().expect("standard layout")])
            .collect()
    }
}

impl DenseNet {
    pub fn new(specs: &[LayerSpec], seed: u64) -> Result<Self> {
        Self::new_on_stream(specs, seed, stream::NET_INIT)
    }

    /// Like [`DenseNet::new`] but drawing the initial weights from `stream_id`.
    pub fn new_on_stream(specs: &[LayerSpec], seed: u64, stream_id: u64) -> Result<Self> {
        Self::check_chain(specs)?;
        let mut rng = stream_rng(seed, stream_id);
        let layers = specs
            .iter()
            .map(|s| {
                let weight = uniform_fan_in(&mut rng, s.output, s.input, s.input);
                let bias = uniform_fan_in(&mut rng, 1, s.output, s.input).into_shape_with_order(s.output).expect("1 x out");
                Dense { weight, bias, activation: s.activation }
            })
            .collect();
        Ok(Self { layers, seed, version: fresh_version() })
    }

    pub fn from_layers(layers: Vec<Dense>, seed: u64) -> Result<Self> {
        let specs: Vec<LayerSpec> = layers.iter().map(Dense::spec).collect();
        Self::check_chain(&specs)?;
        for l in &layers {
            if l.bias.len() != l.weight.nrows() {
                return Err(shape(format!("bias of {}", l.weight.nrows()), l.bias.len()));
            }
            if l.weight.iter().chain(l.bias.iter()).any(|v| !v.is_finite()) {
                return Err(invalid("non-finite parameter"));
            }
        }
        let layers = layers
            .into_iter()
            .map(|l| Dense { weight: l.weight.as_standard_layout().into_owned(), ..l })
            .collect();
        Ok(Self { layers, seed, version: fresh_version() })
    }

    fn check_chain(specs: &[LayerSpec]) -> Result<()> {
        if specs.is_empty() {
            return Err(invalid("network needs at least one layer"));
        }
        for s in specs {
            if s.input == 0 || s.output == 0 {
                return Err(invalid(format!("zero-sized layer {s:?}")));
            }
        }
        for w in specs.windows(2) {
            if w[0].output != w[1].input {
                return Err(shape(format!("layer input {}", w[0].output), format!("{}", w[1].input)));
            }
        }
        Ok(())
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        self.version = fresh_version();
        &mut self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(Dense::spec).collect()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").weight.nrows()
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    /// Weights then bias for each layer, as flat row-major slices.
    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.version = fresh_version();
        self.layers
            .iter_mut()
            .flat_map(|l| {
                [
                    l.weight.as_slice_mut().expect("standard layout"),
                    l.bias.as_slice_mut().expect("standard layout"),
                ]
            })
            .collect()
    }

    pub fn forward(&self, batch: ArrayView2<f64>) -> Result<(Array2<f64>, Tape)> {
        if batch.ncols() != self.input_dim() {
            return Err(shape(format!("{} input features", self.input_dim()), batch.ncols()));
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let mut x = batch.to_owned();
        for layer in &self.layers {
            let z = x.dot(&layer.weight.t()) + &layer.bias;
            let a = match layer.activation {
                Activation::Relu => z.mapv(|v| v.max(0.0)),
                Activation::Identity => z.clone(),
            };
            inputs.push(x);
            pre_activations.push(z);
            x = a;
        }
        Ok((x, Tape { inputs, pre_activations, version: self.version }))
    }

    /// Output only, no tape.
    pub fn predict(&self, batch: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.forward(batch)?.0)
    }

    /// Reverse-mode gradients of a scalar whose gradient w.r.t. the output is `grad_out`.
    ///
    /// Returns parameter gradients and the gradient w.r.t. the input batch.
    /// The ReLU derivative at 0 is taken as 0.
    pub fn backward(&self, tape: &Tape, grad_out: ArrayView2<f64>) -> Result<(DenseGrads, Array2<f64>)> {
        if tape.version != self.version {
            return Err(Error::StaleTape { tape: tape.version, net: self.version });
        }
        let last = tape.pre_activations.last().expect("non-empty");
        if grad_out.dim() != last.dim() {
            return Err(shape(format!("{:?}", last.dim()), format!("{:?}", grad_out.dim())));
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut g = grad_out.to_owned();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            if layer.activation == Activation::Relu {
                g.zip_mut_with(&tape.pre_activations[l], |gv, &z| {
                    if z <= 0.0 {
                        *gv = 0.0;
                    }
                });
            }
            let dw = g.t().dot(&tape.inputs[l]);
            let db = g.sum_axis(Axis(0));
            g = g.dot(&layer.weight);
            grads.push((dw, db));
        }
        grads.reverse();
        Ok((DenseGrads { layers: grads }, g))
    }
}

/// Writes `# densenet layers=<spec> step=<k>` followed by, for each layer,
/// one line per weight row and one bias line, at 17 significant digits.
pub fn format_checkpoint(net: &DenseNet, step: u64) -> String {
    let mut out = format!("# densenet layers={} step={}\n", format_layer_specs(&net.specs()), step);
    let mut line = |vals: &mut dyn Iterator<Item = &f64>| {
        let strs: Vec<String> = vals.map(|v| format!("{v:.16e}")).collect();
        let _ = writeln!(out, "{}", strs.join(" "));
    };
    for layer in net.layers() {
        for row in layer.weight.rows() {
            line(&mut row.iter());
        }
        line(&mut layer.bias.iter());
    }
    out
}

pub fn save_checkpoint(net: &DenseNet, step: u64, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, format_checkpoint(net, step))?;
    Ok(())
}

/// Parses a checkpoint; the loaded network has seed 0 (seeds are not stored).
pub fn parse_checkpoint(text: &str) -> Result<(DenseNet, u64)> {
    let perr = |line: usize, message: String| Error::Parse { line, message };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, header) = lines.next().ok_or_else(|| invalid("empty checkpoint"))?;
    let rest = header
        .strip_prefix("# densenet ")
        .ok_or_else(|| perr(1, "missing '# densenet' header".into()))?;
    let (mut specs, mut step) = (None, None);
    for field in rest.split_whitespace() {
        match field.split_once('=') {
            Some(("layers", v)) => specs = Some(parse_layer_specs(v).map_err(|e| perr(1, e.to_string()))?),
            Some(("step", v)) => step = Some(v.parse::<u64>().map_err(|e| perr(1, format!("step: {e}")))?),
            _ => return Err(perr(1, format!("unexpected header field {field:?}"))),
        }
    }
    let specs = specs.ok_or_else(|| perr(1, "header lacks layers".into()))?;
    let step = step.ok_or_else(|| perr(1, "header lacks step".into()))?;

    let mut read_row = |expected: usize| -> Result<Vec<f64>> {
        let (lineno, line) = lines.next().ok_or_else(|| perr(text.lines().count(), "truncated checkpoint".into()))?;
        let vals = line
            .split(' ')
            .map(|t| t.parse::<f64>().map_err(|e| perr(lineno, format!("{t:?}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        if vals.len() != expected {
            return Err(perr(lineno, format!("expected {expected} values, found {}", vals.len())));
        }
        Ok(vals)
    };
    let mut layers = Vec::with_capacity(specs.len());
    for s in &specs {
        let mut w = Vec::with_capacity(s.input * s.output);
        for _ in 0..s.output {
            w.extend(read_row(s.input)?);
        }
        let b = read_row(s.output)?;
        layers.push(Dense {
            weight: Array2::from_shape_vec((s.output, s.input), w).expect("counted"),
            bias: Array1::from(b),
            activation: s.activation,
        });
    }
    Ok((DenseNet::from_layers(layers, 0)?, step))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(DenseNet, u64)> {
    parse_checkpoint(&std::fs::read_to_string(path)?)
}

/// Linear layer followed by softmax over `C` classes.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftmaxHead {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct XentOutput {
    /// Mean cross-entropy over the batch.
    pub loss: f64,
    pub grad_weight: Array2<f64>,
    pub grad_bias: Array1<f64>,
    pub grad_features: Array2<f64>,
}

impl SoftmaxHead {
    pub fn new(features: usize, classes: usize, seed: u64) -> Result<Self> {
        Self::new_on_stream(features, classes, seed, stream::HEAD_INIT)
    }

    pub fn new_on_stream(features: usize, classes: usize, seed: u64, stream_id: u64) -> Result<Self> {
        if features == 0 || classes < 2 {
            return Err(invalid(format!("head needs features >= 1 and classes >= 2, got {features}, {classes}")));
        }
        let mut rng = stream_rng(seed, stream_id);
        let weight = uniform_fan_in(&mut rng, classes, features, features);
        let bias = uniform_fan_in(&mut rng, 1, classes, features).into_shape_with_order(classes).expect("1 x C");
        Ok(Self { weight, bias })
    }

    pub fn classes(&self) -> usize {
        self.weight.nrows()
    }

    pub fn logits(&self, features: ArrayView2<f64>) -> Result<Array2<f64>> {
        if features.ncols() != self.weight.ncols() {
            return Err(shape(format!("{} features", self.weight.ncols()), features.ncols()));
        }
        Ok(features.dot(&self.weight.t()) + &self.bias)
    }

    /// Arg-max class per row; the lowest index wins ties.
    pub fn predict(&self, features: ArrayView2<f64>) -> Result<Vec<usize>> {
        let logits = self.logits(features)?;
        Ok(logits
            .rows()
            .into_iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (c, &v)| if v > best.1 { (c, v) } else { best })
                    .0
            })
            .collect())
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.weight.as_slice_mut().expect("standard layout"),
            self.bias.as_slice_mut().expect("standard layout"),
        ]
    }
}

/// Mean softmax cross-entropy with log-sum-exp stabilisation, and its gradients.
pub fn softmax_xent(head: &SoftmaxHead, features: ArrayView2<f64>, labels: &[usize]) -> Result<XentOutput> {
    let logits = head.logits(features)?;
    let (b, c) = logits.dim();
    if labels.len() != b {
        return Err(shape(format!("{b} labels"), labels.len()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(invalid(format!("label {bad} out of range for {c} classes")));
    }
    let mut probs = logits;
    let mut loss = 0.0;
    for (mut row, &y) in probs.rows_mut().into_iter().zip(labels) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - row[y];
        row.mapv_inplace(|v| (v - lse).exp());
    }
    let inv_b = 1.0 / b as f64;
    // dL/dlogits = (softmax - onehot) / B
    let mut g = probs;
    for (mut row, &y) in g.rows_mut().into_iter().zip(labels) {
        row[y] -= 1.0;
        row.mapv_inplace(|v| v * inv_b);
    }
    Ok(XentOutput {
        loss: loss * inv_b,
        grad_weight: g.t().dot(&features),
        grad_bias: g.sum_axis(Axis(0)),
        grad_features: g.dot(&head.weight),
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OptimizerKind {
    /// Weight decay is added to the gradient before the momentum update.
    Sgd { lr: f64, momentum: f64, nesterov: bool, weight_decay: f64 },
    /// Adam with bias-corrected moments.
    Adam { lr: f64, beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn sgd(lr: f64) -> Self {
        OptimizerKind::Sgd { lr, momentum: 0.0, nesterov: false, weight_decay: 0.0 }
    }

    pub fn adam(lr: f64) -> Self {
        OptimizerKind::Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            OptimizerKind::Sgd { lr, momentum, nesterov, weight_decay } => {
                lr > 0.0 && (0.0..1.0).contains(&momentum) && weight_decay >= 0.0 && (!nesterov || momentum > 0.0)
            }
            OptimizerKind::Adam { lr, beta1, beta2, eps } => {
                lr > 0.0 && (0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(invalid(format!("invalid optimizer settings {self:?}")))
        }
    }
}

/// Optimizer with per-parameter buffers, created lazily on the first step.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind) -> Result<Self> {
        kind.validate()?;
        Ok(Self { kind, first: Vec::new(), second: Vec::new(), step: 0 })
    }

    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(shape(format!("{} gradient tensors", params.len()), grads.len()));
        }
        for (p, g) in params.iter().zip(grads) {
            if p.len() != g.len() {
                return Err(shape(format!("tensor of {}", p.len()), g.len()));
            }
        }
        if self.step == 0 {
            self.first = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.second = params.iter().map(|p| vec![0.0; p.len()]).collect();
        } else if self.first.len() != params.len() || self.first.iter().zip(params.iter()).any(|(b, p)| b.len() != p.len()) {
            return Err(shape("parameters matching optimizer buffers", "different layout"));
        }
        self.step += 1;
        match self.kind {
            OptimizerKind::Sgd { lr, momentum, nesterov, weight_decay } => {
                for ((p, g), buf) in params.iter_mut().zip(grads).zip(&mut self.first) {
                    for ((pv, &gv), bv) in p.iter_mut().zip(g.iter()).zip(buf.iter_mut()) {
                        let mut d = gv + weight_decay * *pv;
                        if momentum > 0.0 {
                            *bv = if self.step == 1 { d } else { momentum * *bv + d };
                            d = if nesterov { d + momentum * *bv } else { *bv };
                        }
                        *pv -= lr * d;
                    }
                }
            }
            OptimizerKind::Adam { lr, beta1, beta2, eps } => {
                let t = self.step as i32;
                let bc1 = 1.0 - beta1.powi(t);
                let bc2_sqrt = (1.0 - beta2.powi(t)).sqrt();
                let step_size = lr / bc1;
                for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.first).zip(&mut self.second) {
                    for (((pv, &gv), mv), vv) in p.iter_mut().zip(g.iter()).zip(m.iter_mut()).zip(v.iter_mut()) {
                        *mv = beta1 * *mv + (1.0 - beta1) * gv;
                        *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
                        let denom = vv.sqrt() / bc2_sqrt + eps;
                        *pv -= step_size * *mv / denom;
                    }
                }
            }
        }
        Ok(())
    }
}
