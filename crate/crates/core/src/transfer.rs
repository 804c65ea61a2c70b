//! Training loops: free-point configuration transfer, feature transfer
//! between networks, supervised training of a classifier or a probe head,
//! and the stylized coherence-versus-accuracy study built from them.

use std::fmt::Write as _;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::coherence::dc_exact_features;
use crate::datasets::{gen_two_moons, split, PointSet, SplitPointSet};
use crate::error::{invalid, shape, Error, Result};
use crate::eval::{accuracy, pearson};
use crate::loss::{coherence_loss, grad_wrt_coords, grad_wrt_features, LossConfig};
use crate::metric::{pairwise, Metric};
use crate::nn::{softmax_xent, Activation, DenseNet, LayerSpec, OptimizerKind, OptimizerState, SoftmaxHead};
use crate::ranking::min_gap;
use crate::rng::{stream, stream_rng, Rng};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TransferConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub optimizer: OptimizerKind,
    pub loss: LossConfig,
    /// Checkpoint period in epochs; 0 disables checkpoints.
    pub checkpoint_every: usize,
    pub seed: u64,
    /// Standard deviation of the Gaussian student configuration at start.
    pub init_scale: f64,
}

impl TransferConfig {
    /// Free-point recipe: B = 64, Adam lr 0.1, tau 0.1, 800 epochs.
    pub fn configuration_default(seed: u64) -> Self {
        Self {
            batch_size: 64,
            epochs: 800,
            optimizer: OptimizerKind::adam(0.1),
            loss: LossConfig { tau_teacher: 0.1, tau_student: 0.1, weight: 1.0 },
            checkpoint_every: 100,
            seed,
            init_scale: 10.0,
        }
    }

    /// Network recipe: B = 64, Adam lr 1e-3, 40 epochs, checkpoint every 4.
    pub fn features_default(seed: u64) -> Self {
        Self {
            batch_size: 64,
            epochs: 40,
            optimizer: OptimizerKind::adam(1e-3),
            loss: LossConfig { tau_teacher: 0.1, tau_student: 0.3, weight: 1.0 },
            checkpoint_every: 4,
            seed,
            init_scale: 10.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(invalid(format!("batch_size must be >= 2, got {}", self.batch_size)));
        }
        if self.epochs == 0 {
            return Err(invalid("epochs must be >= 1"));
        }
        if !(self.init_scale.is_finite() && self.init_scale > 0.0) {
            return Err(invalid(format!("init_scale must be positive, got {}", self.init_scale)));
        }
        self.optimizer.validate()?;
        self.loss.validate()
    }

    fn validate_for(&self, n: usize) -> Result<()> {
        self.validate()?;
        if self.batch_size > n {
            return Err(invalid(format!("batch_size {} exceeds the {n} available points", self.batch_size)));
        }
        Ok(())
    }

    fn is_checkpoint(&self, epoch: usize) -> bool {
        self.checkpoint_every > 0 && epoch % self.checkpoint_every == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Snapshot {
    Configuration(Array2<f64>),
    Network(DenseNet),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    /// 1-based epoch after which the snapshot was taken.
    pub epoch: usize,
    /// Exact global coherence on the full transfer set.
    pub phi: f64,
    pub snapshot: Snapshot,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransferTrace {
    /// Mean weighted batch loss of each epoch.
    pub epoch_loss: Vec<f64>,
    pub checkpoints: Vec<Checkpoint>,
    pub final_phi: f64,
    /// Some teacher row contains tied dissimilarities.
    pub teacher_ties: bool,
}

impl TransferTrace {
    /// CSV with columns `epoch,loss,phi_or_blank`; the last epoch always carries a phi.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss,phi_or_blank\n");
        let last = self.epoch_loss.len();
        for (e, loss) in self.epoch_loss.iter().enumerate() {
            let epoch = e + 1;
            let phi = match self.checkpoints.iter().find(|c| c.epoch == epoch) {
                Some(c) => c.phi.to_string(),
                None if epoch == last => self.final_phi.to_string(),
                None => String::new(),
            };
            let _ = writeln!(out, "{epoch},{loss},{phi}");
        }
        out
    }

    pub fn checkpoint_phis(&self) -> Vec<f64> {
        self.checkpoints.iter().map(|c| c.phi).collect()
    }
}

fn has_ties(d: ArrayView2<f64>) -> Result<bool> {
    match min_gap(d) {
        Ok(_) => Ok(false),
        Err(Error::Ties { .. }) => Ok(true),
        Err(e) => Err(e),
    }
}

fn submatrix(d: &Array2<f64>, idx: &[usize]) -> Array2<f64> {
    Array2::from_shape_fn((idx.len(), idx.len()), |(a, b)| d[[idx[a], idx[b]]])
}

fn flat(a: &Array2<f64>) -> &[f64] {
    a.as_slice().expect("standard layout")
}

/// Learns free student coordinates whose Euclidean rankings match the teacher's.
///
/// The whole configuration is one optimizer parameter, so rows outside the
/// current batch still move with their Adam momentum.
pub fn transfer_configuration(
    teacher: &PointSet,
    student_dim: usize,
    cfg: &TransferConfig,
) -> Result<(PointSet, TransferTrace)> {
    let n = teacher.len();
    cfg.validate_for(n)?;
    if student_dim == 0 {
        return Err(invalid("student_dim must be >= 1"));
    }
    let euclid = Metric::euclidean();
    let dt_full = pairwise(teacher.points.view(), euclid)?.values;
    let teacher_ties = has_ties(dt_full.view())?;

    let mut init_rng = stream_rng(cfg.seed, stream::STUDENT_INIT);
    let mut coords = Array2::from_shape_fn((n, student_dim), |_| {
        cfg.init_scale * init_rng.sample::<f64, _>(StandardNormal)
    });
    let mut opt = OptimizerState::new(cfg.optimizer)?;
    let mut shuffle = stream_rng(cfg.seed, stream::SHUFFLE);
    let mut order: Vec<usize> = (0..n).collect();
    let mut grad = Array2::<f64>::zeros((n, student_dim));
    let phi_of = |c: &Array2<f64>| -> Result<f64> {
        Ok(dc_exact_features(teacher.points.view(), c.view(), (euclid, euclid))?.global_phi)
    };

    let mut epoch_loss = Vec::with_capacity(cfg.epochs);
    let mut checkpoints = Vec::new();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle);
        let mut total = 0.0;
        let batches = n / cfg.batch_size;
        for batch in order.chunks_exact(cfg.batch_size) {
            let xs = coords.select(Axis(0), batch);
            let ds = pairwise(xs.view(), euclid)?;
            let lr = coherence_loss(submatrix(&dt_full, batch).view(), ds.view(), &cfg.loss)?;
            total += cfg.loss.weight * lr.value;
            let cg = grad_wrt_coords(&lr, xs.view())?;
            grad.fill(0.0);
            for (row, &i) in batch.iter().enumerate() {
                grad.row_mut(i).scaled_add(cfg.loss.weight, &cg.grad.row(row));
            }
            let params = coords.as_slice_mut().expect("standard layout");
            opt.step(&mut [params], &[flat(&grad)])?;
        }
        epoch_loss.push(total / batches as f64);
        if cfg.is_checkpoint(epoch) {
            checkpoints.push(Checkpoint { epoch, phi: phi_of(&coords)?, snapshot: Snapshot::Configuration(coords.clone()) });
        }
    }
    let final_phi = match checkpoints.last() {
        Some(c) if c.epoch == cfg.epochs => c.phi,
        _ => phi_of(&coords)?,
    };
    let learned = PointSet::new(coords, teacher.labels.clone(), cfg.seed, format!("{}_student", teacher.name))?;
    Ok((learned, TransferTrace { epoch_loss, checkpoints, final_phi, teacher_ties }))
}

/// Trains `student` so that cosine rankings of its output features match the
/// frozen `teacher`'s on the (unlabeled) transfer set.
pub fn transfer_features(
    teacher: &DenseNet,
    student: &mut DenseNet,
    transfer: &PointSet,
    cfg: &TransferConfig,
) -> Result<TransferTrace> {
    let n = transfer.len();
    cfg.validate_for(n)?;
    if teacher.input_dim() != transfer.dim() || student.input_dim() != transfer.dim() {
        return Err(shape(
            format!("networks taking {} inputs", transfer.dim()),
            format!("{} and {}", teacher.input_dim(), student.input_dim()),
        ));
    }
    let cos = Metric::cosine();
    let teacher_feats = teacher.predict(transfer.points.view())?;
    let dt_full = pairwise(teacher_feats.view(), cos)?.values;
    let teacher_ties = has_ties(dt_full.view())?;
    let phi_of = |net: &DenseNet| -> Result<f64> {
        let sf = net.predict(transfer.points.view())?;
        Ok(dc_exact_features(teacher_feats.view(), sf.view(), (cos, cos))?.global_phi)
    };

    let mut opt = OptimizerState::new(cfg.optimizer)?;
    let mut shuffle = stream_rng(cfg.seed, stream::SHUFFLE);
    let mut order: Vec<usize> = (0..n).collect();
    let mut epoch_loss = Vec::with_capacity(cfg.epochs);
    let mut checkpoints = Vec::new();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle);
        let mut total = 0.0;
        for batch in order.chunks_exact(cfg.batch_size) {
            let xb = transfer.points.select(Axis(0), batch);
            let (feats, tape) = student.forward(xb.view())?;
            let ds = pairwise(feats.view(), cos)?;
            let lr = coherence_loss(submatrix(&dt_full, batch).view(), ds.view(), &cfg.loss)?;
            total += cfg.loss.weight * lr.value;
            let gf = grad_wrt_features(&lr, feats.view(), cos.eps())? * cfg.loss.weight;
            let (grads, _) = student.backward(&tape, gf.view())?;
            opt.step(&mut student.param_slices_mut(), &grads.slices())?;
        }
        epoch_loss.push(total / (n / cfg.batch_size) as f64);
        if cfg.is_checkpoint(epoch) {
            checkpoints.push(Checkpoint { epoch, phi: phi_of(student)?, snapshot: Snapshot::Network(student.clone()) });
        }
    }
    let final_phi = match checkpoints.last() {
        Some(c) if c.epoch == cfg.epochs => c.phi,
        _ => phi_of(student)?,
    };
    Ok(TransferTrace { epoch_loss, checkpoints, final_phi, teacher_ties })
}

/// Supervised training settings for the classifier and for probe heads.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SupervisedConfig {
    pub epochs: usize,
    /// `None` trains on the full set each step.
    pub batch_size: Option<usize>,
    pub optimizer: OptimizerKind,
}

impl SupervisedConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(invalid("epochs must be >= 1"));
        }
        if self.batch_size == Some(0) {
            return Err(invalid("batch_size must be >= 1"));
        }
        self.optimizer.validate()
    }
}

fn labels_of(ps: &PointSet) -> Result<&[usize]> {
    ps.labels.as_deref().ok_or(Error::MissingLabels)
}

fn epoch_batches(n: usize, batch: Option<usize>, rng: &mut Rng, order: &mut Vec<usize>) -> Vec<Vec<usize>> {
    order.clear();
    order.extend(0..n);
    match batch {
        None => vec![order.clone()],
        Some(b) if b >= n => vec![order.clone()],
        Some(b) => {
            order.shuffle(rng);
            order.chunks(b).map(<[usize]>::to_vec).collect()
        }
    }
}

/// Trains extractor and head jointly with cross-entropy; returns per-epoch mean loss.
pub fn train_supervised(
    net: &mut DenseNet,
    head: &mut SoftmaxHead,
    train: &PointSet,
    cfg: &SupervisedConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    let labels = labels_of(train)?;
    let mut net_opt = OptimizerState::new(cfg.optimizer)?;
    let mut head_opt = OptimizerState::new(cfg.optimizer)?;
    let mut rng = stream_rng(seed, stream::TEACHER_SHUFFLE);
    let mut order = Vec::with_capacity(train.len());
    let mut losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let batches = epoch_batches(train.len(), cfg.batch_size, &mut rng, &mut order);
        let mut total = 0.0;
        for idx in &batches {
            let xb = train.points.select(Axis(0), idx);
            let yb: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            let (feats, tape) = net.forward(xb.view())?;
            let out = softmax_xent(head, feats.view(), &yb)?;
            total += out.loss;
            let (grads, _) = net.backward(&tape, out.grad_features.view())?;
            net_opt.step(&mut net.param_slices_mut(), &grads.slices())?;
            head_opt.step(
                &mut head.param_slices_mut(),
                &[flat(&out.grad_weight), out.grad_bias.as_slice().expect("contiguous")],
            )?;
        }
        losses.push(total / batches.len() as f64);
    }
    Ok(losses)
}

pub fn classify(net: &DenseNet, head: &SoftmaxHead, ps: &PointSet) -> Result<Vec<usize>> {
    head.predict(net.predict(ps.points.view())?.view())
}

pub fn classifier_accuracy(net: &DenseNet, head: &SoftmaxHead, ps: &PointSet) -> Result<f64> {
    accuracy(&classify(net, head, ps)?, labels_of(ps)?)
}

/// Trains only `head` on frozen features of `labeled.train`; returns test accuracy.
pub fn train_probe(
    frozen: &DenseNet,
    head: &mut SoftmaxHead,
    labeled: &SplitPointSet,
    cfg: &SupervisedConfig,
    seed: u64,
) -> Result<f64> {
    cfg.validate()?;
    let labels = labels_of(&labeled.train)?;
    labels_of(&labeled.test)?;
    let feats = frozen.predict(labeled.train.points.view())?;
    let mut opt = OptimizerState::new(cfg.optimizer)?;
    let mut rng = stream_rng(seed, stream::PROBE_SHUFFLE);
    let mut order = Vec::with_capacity(feats.nrows());
    for _ in 0..cfg.epochs {
        for idx in epoch_batches(feats.nrows(), cfg.batch_size, &mut rng, &mut order) {
            let fb = feats.select(Axis(0), &idx);
            let yb: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            let out = softmax_xent(head, fb.view(), &yb)?;
            opt.step(
                &mut head.param_slices_mut(),
                &[flat(&out.grad_weight), out.grad_bias.as_slice().expect("contiguous")],
            )?;
        }
    }
    classifier_accuracy(frozen, head, &labeled.test)
}

/// Two-layer extractor `Linear(2, hidden) -> ReLU -> Linear(hidden, features)`.
pub fn extractor_specs(hidden: usize, features: usize) -> Vec<LayerSpec> {
    vec![LayerSpec::new(2, hidden, Activation::Relu), LayerSpec::new(hidden, features, Activation::Identity)]
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StylizedConfig {
    pub n_points: usize,
    pub noise: f64,
    pub train_fraction: f64,
    pub hidden: usize,
    pub features: usize,
    pub teacher: SupervisedConfig,
    pub transfer: TransferConfig,
    pub probe: SupervisedConfig,
    pub seed: u64,
}

impl StylizedConfig {
    /// 800 two-moon points split 400/400, `Linear(2, 20) -> ReLU -> Linear(20, 20)`
    /// extractors, teacher 200 epochs / transfer 40 epochs / probe 20 epochs,
    /// all Adam 1e-3, mini-batches of 32 / 64 / 64.
    pub fn new(seed: u64) -> Self {
        Self {
            n_points: 800,
            noise: 0.05,
            train_fraction: 0.5,
            hidden: 20,
            features: 20,
            teacher: SupervisedConfig { epochs: 200, batch_size: Some(32), optimizer: OptimizerKind::adam(1e-3) },
            transfer: TransferConfig::features_default(seed),
            probe: SupervisedConfig { epochs: 20, batch_size: Some(64), optimizer: OptimizerKind::adam(1e-3) },
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.features == 0 {
            return Err(invalid("hidden and features must be >= 1"));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return Err(invalid(format!("noise must be >= 0, got {}", self.noise)));
        }
        self.teacher.validate()?;
        self.transfer.validate()?;
        self.probe.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StylizedRow {
    pub epoch: usize,
    pub phi: f64,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StylizedResult {
    pub teacher_train_accuracy: f64,
    pub teacher_test_accuracy: f64,
    pub rows: Vec<StylizedRow>,
    /// `None` when the phis or accuracies have zero variance.
    pub pearson: Option<f64>,
    pub trace: TransferTrace,
}

/// Data, trained teacher and its accuracies for the stylized pipeline.
pub struct TrainedTeacher {
    pub data: SplitPointSet,
    pub net: DenseNet,
    pub head: SoftmaxHead,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
}

pub fn train_teacher(cfg: &StylizedConfig) -> Result<TrainedTeacher> {
    cfg.validate()?;
    let moons = gen_two_moons(cfg.n_points, cfg.noise, cfg.seed)?;
    let data = split(&moons, cfg.train_fraction, cfg.seed)?;
    let mut net = DenseNet::new(&extractor_specs(cfg.hidden, cfg.features), cfg.seed)?;
    let mut head = SoftmaxHead::new_on_stream(cfg.features, 2, cfg.seed, stream::TEACHER_HEAD_INIT)?;
    train_supervised(&mut net, &mut head, &data.train, &cfg.teacher, cfg.seed)?;
    let train_accuracy = classifier_accuracy(&net, &head, &data.train)?;
    let test_accuracy = classifier_accuracy(&net, &head, &data.test)?;
    Ok(TrainedTeacher { data, net, head, train_accuracy, test_accuracy })
}

/// Transfers into a fresh student of the given hidden width, then probes each checkpoint.
pub fn transfer_and_probe(teacher: &TrainedTeacher, cfg: &StylizedConfig, hidden: usize) -> Result<(Vec<StylizedRow>, TransferTrace)> {
    let mut student = DenseNet::new_on_stream(&extractor_specs(hidden, cfg.features), cfg.seed, stream::STUDENT_INIT)?;
    let unlabeled = PointSet::new(teacher.data.train.points.clone(), None, cfg.seed, "transfer_set")?;
    let trace = transfer_features(&teacher.net, &mut student, &unlabeled, &cfg.transfer)?;
    let mut snapshots: Vec<(usize, f64, &DenseNet)> = trace
        .checkpoints
        .iter()
        .filter_map(|c| match &c.snapshot {
            Snapshot::Network(net) => Some((c.epoch, c.phi, net)),
            Snapshot::Configuration(_) => None,
        })
        .collect();
    if snapshots.is_empty() {
        snapshots.push((cfg.transfer.epochs, trace.final_phi, &student));
    }
    let rows = snapshots
        .into_iter()
        .map(|(epoch, phi, net)| {
            let mut head = SoftmaxHead::new(cfg.features, 2, cfg.seed)?;
            let acc = train_probe(net, &mut head, &teacher.data, &cfg.probe, cfg.seed)?;
            Ok(StylizedRow { epoch, phi, accuracy: acc })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((rows, trace))
}

/// Teacher training, feature transfer with checkpoints, one probe per
/// checkpoint and the correlation between checkpoint phi and probe accuracy.
pub fn stylized_study(cfg: &StylizedConfig) -> Result<StylizedResult> {
    let teacher = train_teacher(cfg)?;
    let (rows, trace) = transfer_and_probe(&teacher, cfg, cfg.hidden)?;
    let phis: Vec<f64> = rows.iter().map(|r| r.phi).collect();
    let accs: Vec<f64> = rows.iter().map(|r| r.accuracy).collect();
    let pearson = match pearson(&phis, &accs) {
        Ok(r) => Some(r),
        Err(Error::UndefinedCorrelation(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(StylizedResult {
        teacher_train_accuracy: teacher.train_accuracy,
        teacher_test_accuracy: teacher.test_accuracy,
        rows,
        pearson,
        trace,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WidthRow {
    pub hidden: usize,
    pub phi: f64,
    pub accuracy: f64,
}

/// Final phi and probe accuracy of students with different hidden widths,
/// all distilled from the same teacher.
pub fn width_ablation(cfg: &StylizedConfig, widths: &[usize]) -> Result<Vec<WidthRow>> {
    if widths.contains(&0) {
        return Err(invalid("widths must be >= 1"));
    }
    let teacher = train_teacher(cfg)?;
    let mut final_only = *cfg;
    final_only.transfer.checkpoint_every = 0;
    widths
        .iter()
        .map(|&hidden| {
            let (rows, trace) = transfer_and_probe(&teacher, &final_only, hidden)?;
            Ok(WidthRow { hidden, phi: trace.final_phi, accuracy: rows[0].accuracy })
        })
        .collect()
}
