//! Run configuration: one JSON document per run.
//!
//! A document names an `experiment` and overrides any subset of that
//! experiment's defaults. Keys the experiment does not use are rejected, and
//! the fully resolved document is what gets written to `resolved_config.json`.

use std::fmt;
use std::path::PathBuf;

use pct_core::loss::LossConfig;
use pct_core::nn::OptimizerKind;
use pct_core::transfer::{StylizedConfig, SupervisedConfig, TransferConfig};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Toy2d,
    Toy3d,
    Stylized,
    AblateBatch,
    AblateWidth,
    RateCheck,
    ProbeTheorems,
    Retrieve,
}

impl Experiment {
    pub const ALL: [Experiment; 8] = [
        Experiment::Toy2d,
        Experiment::Toy3d,
        Experiment::Stylized,
        Experiment::AblateBatch,
        Experiment::AblateWidth,
        Experiment::RateCheck,
        Experiment::ProbeTheorems,
        Experiment::Retrieve,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Experiment::Toy2d => "toy2d",
            Experiment::Toy3d => "toy3d",
            Experiment::Stylized => "stylized",
            Experiment::AblateBatch => "ablate_batch",
            Experiment::AblateWidth => "ablate_width",
            Experiment::RateCheck => "rate_check",
            Experiment::ProbeTheorems => "probe_theorems",
            Experiment::Retrieve => "retrieve",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|e| e.as_str() == s)
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MoonsSpec {
    pub n_points: usize,
    pub noise: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClustersSpec {
    pub n_points: usize,
    pub clusters: usize,
    pub dim: usize,
    pub spread: f64,
    pub centers_scale: f64,
}

fn beta1() -> f64 {
    0.9
}
fn beta2() -> f64 {
    0.999
}
fn adam_eps() -> f64 {
    1e-8
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerSpec {
    Adam {
        lr: f64,
        #[serde(default = "beta1")]
        beta1: f64,
        #[serde(default = "beta2")]
        beta2: f64,
        #[serde(default = "adam_eps")]
        eps: f64,
    },
    Sgd {
        lr: f64,
        #[serde(default)]
        momentum: f64,
        #[serde(default)]
        nesterov: bool,
        #[serde(default)]
        weight_decay: f64,
    },
}

impl From<OptimizerSpec> for OptimizerKind {
    fn from(s: OptimizerSpec) -> Self {
        match s {
            OptimizerSpec::Adam { lr, beta1, beta2, eps } => OptimizerKind::Adam { lr, beta1, beta2, eps },
            OptimizerSpec::Sgd { lr, momentum, nesterov, weight_decay } => {
                OptimizerKind::Sgd { lr, momentum, nesterov, weight_decay }
            }
        }
    }
}

impl From<OptimizerKind> for OptimizerSpec {
    fn from(k: OptimizerKind) -> Self {
        match k {
            OptimizerKind::Adam { lr, beta1, beta2, eps } => OptimizerSpec::Adam { lr, beta1, beta2, eps },
            OptimizerKind::Sgd { lr, momentum, nesterov, weight_decay } => {
                OptimizerSpec::Sgd { lr, momentum, nesterov, weight_decay }
            }
        }
    }
}

/// Transfer settings. `batch_size` is absent for batch sweeps, `init_scale`
/// and `student_dim` only apply to free-point configurations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    pub epochs: usize,
    pub optimizer: OptimizerSpec,
    pub tau_teacher: f64,
    pub tau_student: f64,
    pub checkpoint_every: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub student_dim: Option<usize>,
}

impl TransferSpec {
    fn from_core(c: &TransferConfig, configuration: bool) -> Self {
        Self {
            batch_size: Some(c.batch_size),
            epochs: c.epochs,
            optimizer: c.optimizer.into(),
            tau_teacher: c.loss.tau_teacher,
            tau_student: c.loss.tau_student,
            checkpoint_every: c.checkpoint_every,
            init_scale: configuration.then_some(c.init_scale),
            student_dim: configuration.then_some(2),
        }
    }

    /// Core settings; `batch` fills in for sweeps without a fixed batch size.
    pub fn to_core(&self, seed: u64, batch: Option<usize>) -> TransferConfig {
        TransferConfig {
            batch_size: batch.or(self.batch_size).unwrap_or(0),
            epochs: self.epochs,
            optimizer: self.optimizer.into(),
            loss: LossConfig { tau_teacher: self.tau_teacher, tau_student: self.tau_student, weight: 1.0 },
            checkpoint_every: self.checkpoint_every,
            seed,
            init_scale: self.init_scale.unwrap_or(1.0),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SupervisedSpec {
    pub epochs: usize,
    /// `null` trains on the full set each step.
    pub batch_size: Option<usize>,
    pub optimizer: OptimizerSpec,
}

impl From<SupervisedSpec> for SupervisedConfig {
    fn from(s: SupervisedSpec) -> Self {
        SupervisedConfig { epochs: s.epochs, batch_size: s.batch_size, optimizer: s.optimizer.into() }
    }
}

impl From<SupervisedConfig> for SupervisedSpec {
    fn from(c: SupervisedConfig) -> Self {
        SupervisedSpec { epochs: c.epochs, batch_size: c.batch_size, optimizer: c.optimizer.into() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StylizedSpec {
    pub train_fraction: f64,
    pub hidden: usize,
    pub features: usize,
    pub teacher: SupervisedSpec,
    pub probe: SupervisedSpec,
}

/// Fixed nonlinear maps applied to the teacher coordinates in the rate check.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distortion {
    /// `(|x1|, x2)`
    Fold,
    /// `(x1, x2 + 3 sin(x1 / 2))`
    Sine,
    /// Rotation by an angle proportional to the radius.
    Swirl,
    /// `(x1^3, x2)`
    Cube,
}

impl Distortion {
    pub fn apply(self, x1: f64, x2: f64) -> (f64, f64) {
        match self {
            Distortion::Fold => (x1.abs(), x2),
            Distortion::Sine => (x1, x2 + 3.0 * (0.5 * x1).sin()),
            Distortion::Swirl => {
                let t = 0.15 * x1.hypot(x2);
                (x1 * t.cos() - x2 * t.sin(), x1 * t.sin() + x2 * t.cos())
            }
            Distortion::Cube => (x1.powi(3), x2),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateSpec {
    pub batch_sizes: Vec<usize>,
    pub reps: usize,
    pub distortion: Distortion,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSpec {
    /// Number of random point sets.
    pub sets: usize,
    pub points: usize,
    pub eps1: f64,
    pub eps2: f64,
    pub eps: f64,
    /// Std of the Gaussian jitter that makes the perturbed student.
    pub noise: f64,
    /// Triples drawn when a set is too large to enumerate.
    pub samples: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrievalSpec {
    pub k: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub seed: u64,
    pub output_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub moons: Option<MoonsSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clusters: Option<ClustersSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transfer: Option<TransferSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stylized: Option<StylizedSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_sizes: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub widths: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate: Option<RateSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probes: Option<ProbeSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retrieval: Option<RetrievalSpec>,
}

/// A configuration problem, reported against a dotted field path.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ConfigError {
    fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self { field: field.into(), message: message.into() }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.field.is_empty() {
            write!(f, "{}", self.message)
        } else {
            write!(f, "{}: {}", self.field, self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

fn stylized_defaults(seed: u64) -> (MoonsSpec, TransferSpec, StylizedSpec) {
    let s = StylizedConfig::new(seed);
    (
        MoonsSpec { n_points: s.n_points, noise: s.noise },
        TransferSpec::from_core(&s.transfer, false),
        StylizedSpec {
            train_fraction: s.train_fraction,
            hidden: s.hidden,
            features: s.features,
            teacher: s.teacher.into(),
            probe: s.probe.into(),
        },
    )
}

impl RunConfig {
    /// Every setting of `experiment` at its default value.
    pub fn defaults(experiment: Experiment) -> Self {
        let seed = 0;
        let mut cfg = RunConfig {
            experiment,
            seed,
            output_dir: PathBuf::from("runs").join(experiment.as_str()),
            moons: None,
            clusters: None,
            transfer: None,
            stylized: None,
            batch_sizes: None,
            widths: None,
            rate: None,
            probes: None,
            retrieval: None,
        };
        let toy_transfer = TransferSpec::from_core(&TransferConfig::configuration_default(seed), true);
        let toy_moons = MoonsSpec { n_points: 700, noise: 0.05 };
        match experiment {
            Experiment::Toy2d => {
                cfg.moons = Some(toy_moons);
                cfg.transfer = Some(toy_transfer);
            }
            Experiment::Toy3d => {
                cfg.clusters =
                    Some(ClustersSpec { n_points: 1000, clusters: 5, dim: 3, spread: 1.0, centers_scale: 10.0 });
                cfg.transfer = Some(toy_transfer);
            }
            Experiment::AblateBatch => {
                cfg.moons = Some(toy_moons);
                cfg.transfer = Some(TransferSpec { batch_size: None, checkpoint_every: 0, ..toy_transfer });
                cfg.batch_sizes = Some(vec![3, 16, 64]);
            }
            Experiment::Stylized | Experiment::AblateWidth | Experiment::Retrieve => {
                let (moons, transfer, stylized) = stylized_defaults(seed);
                cfg.moons = Some(moons);
                cfg.transfer = Some(transfer);
                cfg.stylized = Some(stylized);
                match experiment {
                    Experiment::AblateWidth => cfg.widths = Some(vec![2, 5, 10, 20]),
                    Experiment::Retrieve => cfg.retrieval = Some(RetrievalSpec { k: 10 }),
                    _ => {}
                }
            }
            Experiment::RateCheck => {
                cfg.clusters =
                    Some(ClustersSpec { n_points: 2000, clusters: 5, dim: 2, spread: 1.0, centers_scale: 10.0 });
                cfg.rate = Some(RateSpec {
                    batch_sizes: vec![4, 8, 16, 32, 64, 128, 256],
                    reps: 500,
                    distortion: Distortion::Fold,
                });
            }
            Experiment::ProbeTheorems => {
                cfg.probes = Some(ProbeSpec {
                    sets: 50,
                    points: 30,
                    eps1: 0.05,
                    eps2: 0.1,
                    eps: 0.05,
                    noise: 0.3,
                    samples: 200_000,
                });
            }
        }
        cfg
    }

    /// Parses a document, applies the command-line overrides and validates the result.
    pub fn from_json(text: &str, seed: Option<u64>, output_dir: Option<PathBuf>) -> Result<Self, ConfigError> {
        let user: Value = serde_json::from_str(text).map_err(|e| ConfigError::new("", format!("malformed JSON: {e}")))?;
        let Value::Object(obj) = &user else {
            return Err(ConfigError::new("", "the configuration must be a JSON object"));
        };
        let experiment = match obj.get("experiment") {
            Some(Value::String(s)) => Experiment::parse(s).ok_or_else(|| {
                let names: Vec<&str> = Experiment::ALL.iter().map(|e| e.as_str()).collect();
                ConfigError::new("experiment", format!("unknown experiment {s:?}, expected one of {}", names.join(", ")))
            })?,
            Some(_) => return Err(ConfigError::new("experiment", "must be a string")),
            None => return Err(ConfigError::new("experiment", "missing")),
        };
        let mut merged = serde_json::to_value(Self::defaults(experiment)).expect("defaults serialize");
        merge(&mut merged, &user, "")?;
        let mut cfg: RunConfig = serde_path_to_error::deserialize(&merged)
            .map_err(|e| ConfigError::new(e.path().to_string(), e.inner().to_string()))?;
        if let Some(s) = seed {
            cfg.seed = s;
        }
        if let Some(dir) = output_dir {
            cfg.output_dir = dir;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    pub fn moons(&self) -> MoonsSpec {
        self.moons.expect("validated config has a moons section")
    }

    pub fn clusters(&self) -> ClustersSpec {
        self.clusters.expect("validated config has a clusters section")
    }

    pub fn transfer(&self) -> TransferSpec {
        self.transfer.expect("validated config has a transfer section")
    }

    /// The core stylized settings assembled from the moons, transfer and stylized sections.
    pub fn stylized_config(&self) -> StylizedConfig {
        let m = self.moons();
        let s = self.stylized.expect("validated config has a stylized section");
        StylizedConfig {
            n_points: m.n_points,
            noise: m.noise,
            train_fraction: s.train_fraction,
            hidden: s.hidden,
            features: s.features,
            teacher: s.teacher.into(),
            transfer: self.transfer().to_core(self.seed, None),
            probe: s.probe.into(),
            seed: self.seed,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.output_dir.as_os_str().is_empty() {
            return Err(ConfigError::new("output_dir", "must not be empty"));
        }
        let n = if let Some(m) = &self.moons {
            check(m.n_points >= 2, "moons.n_points", "must be >= 2")?;
            check(m.noise.is_finite() && m.noise >= 0.0, "moons.noise", "must be finite and >= 0")?;
            m.n_points
        } else if let Some(c) = &self.clusters {
            check(c.clusters >= 1, "clusters.clusters", "must be >= 1")?;
            check(c.n_points >= c.clusters.max(2), "clusters.n_points", "must be >= max(clusters, 2)")?;
            check(c.dim >= 2, "clusters.dim", "must be >= 2")?;
            check(c.spread.is_finite() && c.spread > 0.0, "clusters.spread", "must be positive")?;
            check(c.centers_scale.is_finite() && c.centers_scale >= 0.0, "clusters.centers_scale", "must be >= 0")?;
            c.n_points
        } else {
            0
        };
        if let Some(t) = &self.transfer {
            let usable = match &self.stylized {
                Some(s) => ((n as f64) * s.train_fraction).round() as usize,
                None => n,
            };
            validate_transfer(t, usable)?;
        }
        if let Some(s) = &self.stylized {
            check(s.train_fraction > 0.0 && s.train_fraction < 1.0, "stylized.train_fraction", "must lie in (0, 1)")?;
            check(s.hidden >= 1, "stylized.hidden", "must be >= 1")?;
            check(s.features >= 1, "stylized.features", "must be >= 1")?;
            validate_supervised(&s.teacher, "stylized.teacher")?;
            validate_supervised(&s.probe, "stylized.probe")?;
        }
        if let Some(b) = &self.batch_sizes {
            check(!b.is_empty(), "batch_sizes", "must not be empty")?;
            check(b.windows(2).all(|w| w[0] < w[1]), "batch_sizes", "must be strictly increasing")?;
            check(b[0] >= 2, "batch_sizes", "every batch size must be >= 2")?;
            check(*b.last().unwrap() <= n, "batch_sizes", format!("every batch size must be <= {n}"))?;
        }
        if let Some(w) = &self.widths {
            check(!w.is_empty(), "widths", "must not be empty")?;
            check(w.iter().all(|&v| v >= 1), "widths", "every width must be >= 1")?;
        }
        if let Some(r) = &self.rate {
            let b = &r.batch_sizes;
            check(b.len() >= 4, "rate.batch_sizes", "need at least four batch sizes for a slope")?;
            check(b.windows(2).all(|w| w[0] < w[1]), "rate.batch_sizes", "must be strictly increasing")?;
            check(b[0] >= 2 && *b.last().unwrap() <= n, "rate.batch_sizes", format!("must lie in [2, {n}]"))?;
            check(r.reps >= 2, "rate.reps", "must be >= 2")?;
            check(self.clusters().dim == 2, "clusters.dim", "the distortions act on 2D points")?;
        }
        if let Some(p) = &self.probes {
            check(p.sets >= 1, "probes.sets", "must be >= 1")?;
            check(p.points >= 3, "probes.points", "must be >= 3")?;
            check(p.eps1 > 0.0, "probes.eps1", "must be positive")?;
            check(p.eps2 > p.eps1, "probes.eps2", "must exceed eps1")?;
            check(p.eps > 0.0, "probes.eps", "must be positive")?;
            check(p.noise.is_finite() && p.noise > 0.0, "probes.noise", "must be positive")?;
            check(p.samples >= 1, "probes.samples", "must be >= 1")?;
        }
        if let Some(r) = &self.retrieval {
            let train = self.stylized.map_or(n, |s| ((n as f64) * s.train_fraction).round() as usize);
            check(r.k >= 1 && r.k <= train, "retrieval.k", format!("must lie in [1, {train}]"))?;
        }
        Ok(())
    }
}

fn check(ok: bool, field: &str, message: impl Into<String>) -> Result<(), ConfigError> {
    if ok {
        Ok(())
    } else {
        Err(ConfigError::new(field, message))
    }
}

fn validate_optimizer(o: &OptimizerSpec, field: &str) -> Result<(), ConfigError> {
    OptimizerKind::from(*o).validate().map_err(|e| ConfigError::new(field, e.to_string()))
}

fn validate_transfer(t: &TransferSpec, n: usize) -> Result<(), ConfigError> {
    if let Some(b) = t.batch_size {
        check(b >= 2, "transfer.batch_size", "must be >= 2")?;
        check(b <= n, "transfer.batch_size", format!("must not exceed the {n} transfer points"))?;
    }
    check(t.epochs >= 1, "transfer.epochs", "must be >= 1")?;
    check(t.tau_teacher.is_finite() && t.tau_teacher > 0.0, "transfer.tau_teacher", "must be positive")?;
    check(t.tau_student.is_finite() && t.tau_student > 0.0, "transfer.tau_student", "must be positive")?;
    if let Some(s) = t.init_scale {
        check(s.is_finite() && s > 0.0, "transfer.init_scale", "must be positive")?;
    }
    if let Some(d) = t.student_dim {
        check(d >= 1, "transfer.student_dim", "must be >= 1")?;
    }
    validate_optimizer(&t.optimizer, "transfer.optimizer")
}

fn validate_supervised(s: &SupervisedSpec, field: &str) -> Result<(), ConfigError> {
    check(s.epochs >= 1, &format!("{field}.epochs"), "must be >= 1")?;
    check(s.batch_size != Some(0), &format!("{field}.batch_size"), "must be >= 1 or null")?;
    validate_optimizer(&s.optimizer, &format!("{field}.optimizer"))
}

/// Overlays `user` onto `base`, rejecting keys that `base` does not have.
///
/// An object whose `kind` differs from the default replaces it wholesale, so
/// switching optimizer does not inherit the other optimizer's fields.
fn merge(base: &mut Value, user: &Value, path: &str) -> Result<(), ConfigError> {
    match (base, user) {
        (Value::Object(b), Value::Object(u)) => {
            if b.get("kind").is_some() && u.get("kind").is_some() && b.get("kind") != u.get("kind") {
                *b = u.clone();
                return Ok(());
            }
            merge_objects(b, u, path)
        }
        (b, u) => {
            *b = u.clone();
            Ok(())
        }
    }
}

fn merge_objects(b: &mut Map<String, Value>, u: &Map<String, Value>, path: &str) -> Result<(), ConfigError> {
    for (key, value) in u {
        let field = if path.is_empty() { key.clone() } else { format!("{path}.{key}") };
        match b.get_mut(key) {
            Some(slot) => merge(slot, value, &field)?,
            None => return Err(ConfigError::new(field, "unknown key for this experiment")),
        }
    }
    Ok(())
}
