//! `results.csv`: one row per reported number.
//!
//! Columns are `experiment,metric,value,stderr,meta`. Floats use Rust's
//! shortest round-trip formatting, `stderr` is blank when not applicable and
//! `meta` holds `key=value` pairs separated by `;`.

use std::fmt::{self, Write as _};

use crate::config::Experiment;

pub const HEADER: &str = "experiment,metric,value,stderr,meta";

/// The closed vocabulary of metric names.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MetricName {
    /// Exact global coherence level on the evaluation set.
    GlobalPhi,
    /// Exact Difference Coefficient, `1 - global_phi`.
    Dc,
    /// Mean per-row Spearman correlation between teacher and student dissimilarities.
    RowSpearman,
    /// Mean training loss over the last epoch.
    FinalLoss,
    /// 1 when some teacher row has tied dissimilarities, else 0.
    TeacherTies,
    /// Exact coherence level at a checkpoint (`meta: epoch`).
    CheckpointPhi,
    /// Linear-probe test accuracy (`meta: epoch` or `hidden`).
    ProbeAcc,
    /// Pearson correlation between checkpoint phi and probe accuracy.
    PearsonR,
    TeacherTrainAcc,
    TeacherTestAcc,
    /// Mean mini-batch coherence estimate over replications (`meta: batch`).
    MeanPc,
    /// Exact coherence level the mini-batch estimates target.
    ExactPc,
    /// Mean of `|DC_B - DC|` over replications (`meta: batch`).
    MeanAbsError,
    /// Log-log slope of `mean_abs_error` against batch size.
    RateSlope,
    /// Number of point sets whose student was absolutely coherent.
    CoherentSets,
    /// Largest exact Difference Coefficient over the point sets.
    MaxDc,
    /// Pooled conditional frequency of the rank-preservation event (`meta: case`).
    RankProbeFreq,
    /// Pooled conditional frequency of the order-preservation event (`meta: case`).
    OrderProbeFreq,
    /// 11-point interpolated mean average precision (`meta: model`).
    Map,
    /// Relevant fraction among the first k retrieved items (`meta: model;k`).
    TopkPrecision,
}

impl MetricName {
    pub const ALL: [MetricName; 20] = [
        MetricName::GlobalPhi,
        MetricName::Dc,
        MetricName::RowSpearman,
        MetricName::FinalLoss,
        MetricName::TeacherTies,
        MetricName::CheckpointPhi,
        MetricName::ProbeAcc,
        MetricName::PearsonR,
        MetricName::TeacherTrainAcc,
        MetricName::TeacherTestAcc,
        MetricName::MeanPc,
        MetricName::ExactPc,
        MetricName::MeanAbsError,
        MetricName::RateSlope,
        MetricName::CoherentSets,
        MetricName::MaxDc,
        MetricName::RankProbeFreq,
        MetricName::OrderProbeFreq,
        MetricName::Map,
        MetricName::TopkPrecision,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MetricName::GlobalPhi => "global_phi",
            MetricName::Dc => "dc",
            MetricName::RowSpearman => "row_spearman",
            MetricName::FinalLoss => "final_loss",
            MetricName::TeacherTies => "teacher_ties",
            MetricName::CheckpointPhi => "checkpoint_phi",
            MetricName::ProbeAcc => "probe_acc",
            MetricName::PearsonR => "pearson_r",
            MetricName::TeacherTrainAcc => "teacher_train_acc",
            MetricName::TeacherTestAcc => "teacher_test_acc",
            MetricName::MeanPc => "mean_pc",
            MetricName::ExactPc => "exact_pc",
            MetricName::MeanAbsError => "mean_abs_error",
            MetricName::RateSlope => "rate_slope",
            MetricName::CoherentSets => "coherent_sets",
            MetricName::MaxDc => "max_dc",
            MetricName::RankProbeFreq => "rank_probe_freq",
            MetricName::OrderProbeFreq => "order_probe_freq",
            MetricName::Map => "map",
            MetricName::TopkPrecision => "topk_precision",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.as_str() == s)
    }
}

impl fmt::Display for MetricName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub experiment: Experiment,
    pub metric: MetricName,
    pub value: f64,
    pub stderr: Option<f64>,
    pub meta: Vec<(String, String)>,
}

impl ResultRow {
    pub fn new(experiment: Experiment, metric: MetricName, value: f64) -> Self {
        Self { experiment, metric, value, stderr: None, meta: Vec::new() }
    }

    pub fn stderr(mut self, se: Option<f64>) -> Self {
        self.stderr = se;
        self
    }

    pub fn meta(mut self, key: &str, value: impl ToString) -> Self {
        self.meta.push((key.to_string(), value.to_string()));
        self
    }

    pub fn meta_value(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn to_csv_line(&self) -> String {
        let stderr = self.stderr.map(|s| s.to_string()).unwrap_or_default();
        let meta: Vec<String> = self.meta.iter().map(|(k, v)| format!("{k}={v}")).collect();
        format!("{},{},{},{},{}", self.experiment, self.metric, self.value, stderr, meta.join(";"))
    }

    pub fn parse_csv_line(line: &str) -> Result<Self, String> {
        let fields: Vec<&str> = line.split(',').collect();
        let [experiment, metric, value, stderr, meta] = fields[..] else {
            return Err(format!("expected 5 fields, got {}", fields.len()));
        };
        let experiment = Experiment::parse(experiment).ok_or_else(|| format!("unknown experiment {experiment:?}"))?;
        let metric = MetricName::parse(metric).ok_or_else(|| format!("unknown metric {metric:?}"))?;
        let value = value.parse().map_err(|_| format!("bad value {value:?}"))?;
        let stderr = match stderr {
            "" => None,
            s => Some(s.parse().map_err(|_| format!("bad stderr {s:?}"))?),
        };
        let meta = meta
            .split(';')
            .filter(|p| !p.is_empty())
            .map(|p| {
                p.split_once('=')
                    .map(|(k, v)| (k.to_string(), v.to_string()))
                    .ok_or_else(|| format!("bad meta entry {p:?}"))
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { experiment, metric, value, stderr, meta })
    }
}

pub fn format_results(rows: &[ResultRow]) -> String {
    let mut out = String::from(HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(out, "{}", r.to_csv_line());
    }
    out
}

pub fn parse_results(text: &str) -> Result<Vec<ResultRow>, String> {
    let mut lines = text.lines();
    match lines.next() {
        Some(HEADER) => {}
        other => return Err(format!("expected header {HEADER:?}, got {other:?}")),
    }
    lines
        .enumerate()
        .map(|(i, l)| ResultRow::parse_csv_line(l).map_err(|e| format!("line {}: {e}", i + 2)))
        .collect()
}
