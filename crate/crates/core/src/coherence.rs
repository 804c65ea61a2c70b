//! Perception-coherence levels, the Difference Coefficient and its
//! mini-batch estimator, plus empirical probes of the rank/order
//! preservation bounds.
//!
//! For a finite point set the empirical distribution over its points is
//! taken as the ground-truth input distribution. With cumulative matrices
//! `F1`, `F2` (normalised hard ranks under teacher and student metrics):
//!
//! ```text
//! phi(i) = 1 - mean_j |F1[i][j] - F2[i][j]|
//! DC     = mean_{i,j} |F1[i][j] - F2[i][j]| = 1 - mean_i phi(i)
//! ```

use ndarray::{ArrayView2, Axis};
use rand::Rng as _;

use crate::error::{invalid, shape, Result};
use crate::metric::{pairwise, Metric};
use crate::ranking::{empirical_cdf, hard_ranks, min_gap, EmpiricalCdfMatrix};
use crate::rng::{stream, stream_rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EstimatorMethod {
    ExactFull,
    Minibatch { batch: usize, replications: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoherenceReport {
    /// One level per point for exact reports; empty for mini-batch estimates.
    pub per_point_phi: Vec<f64>,
    pub global_phi: f64,
    pub dc: f64,
    pub method: EstimatorMethod,
    /// Standard error of the mean across replications (mini-batch, reps >= 2).
    pub stderr: Option<f64>,
}

fn check_pair(f1: &EmpiricalCdfMatrix, f2: &EmpiricalCdfMatrix) -> Result<usize> {
    if f1.values.dim() != f2.values.dim() {
        return Err(shape(format!("{:?}", f1.values.dim()), format!("{:?}", f2.values.dim())));
    }
    Ok(f1.values.nrows())
}

/// Coherence level at reference point `i`.
pub fn phi_at(i: usize, f1: &EmpiricalCdfMatrix, f2: &EmpiricalCdfMatrix) -> Result<f64> {
    let n = check_pair(f1, f2)?;
    if i >= n {
        return Err(invalid(format!("reference index {i} out of range for {n} points")));
    }
    let gap: f64 = f1.values.row(i).iter().zip(f2.values.row(i)).map(|(a, b)| (a - b).abs()).sum();
    Ok(1.0 - gap / f1.values.ncols() as f64)
}

/// Exact Difference Coefficient over all ordered pairs.
pub fn dc_exact(f1: &EmpiricalCdfMatrix, f2: &EmpiricalCdfMatrix) -> Result<CoherenceReport> {
    let n = check_pair(f1, f2)?;
    let per_point_phi = (0..n).map(|i| phi_at(i, f1, f2)).collect::<Result<Vec<_>>>()?;
    let dc = per_point_phi.iter().map(|p| 1.0 - p).sum::<f64>() / n as f64;
    Ok(CoherenceReport {
        per_point_phi,
        global_phi: 1.0 - dc,
        dc,
        method: EstimatorMethod::ExactFull,
        stderr: None,
    })
}

/// Exact report straight from two feature matrices.
pub fn dc_exact_features(
    features1: ArrayView2<f64>,
    features2: ArrayView2<f64>,
    metrics: (Metric, Metric),
) -> Result<CoherenceReport> {
    let f1 = empirical_cdf(pairwise(features1, metrics.0)?.view())?;
    let f2 = empirical_cdf(pairwise(features2, metrics.1)?.view())?;
    dc_exact(&f1, &f2)
}

fn check_features(features1: ArrayView2<f64>, features2: ArrayView2<f64>, batch: usize) -> Result<usize> {
    let n = features1.nrows();
    if features2.nrows() != n {
        return Err(shape(format!("{n} rows"), format!("{} rows", features2.nrows())));
    }
    if batch < 2 || batch > n {
        return Err(invalid(format!("batch size must lie in [2, {n}], got {batch}")));
    }
    Ok(n)
}

/// `DC_B` on one batch given by (possibly repeated) row indices.
pub fn dc_on_batch(
    features1: ArrayView2<f64>,
    features2: ArrayView2<f64>,
    metrics: (Metric, Metric),
    indices: &[usize],
) -> Result<f64> {
    let b1 = features1.select(Axis(0), indices);
    let b2 = features2.select(Axis(0), indices);
    let f1 = empirical_cdf(pairwise(b1.view(), metrics.0)?.view())?;
    let f2 = empirical_cdf(pairwise(b2.view(), metrics.1)?.view())?;
    let b = indices.len() as f64;
    Ok(f1.values.iter().zip(f2.values.iter()).map(|(a, c)| (a - c).abs()).sum::<f64>() / (b * b))
}

/// One `DC_B` value per replication.
///
/// Replication `r` draws `batch` indices uniformly with replacement from its
/// own stream `MINIBATCH_BASE + r`, so values do not depend on evaluation order.
pub fn dc_minibatch_samples(
    features1: ArrayView2<f64>,
    features2: ArrayView2<f64>,
    metrics: (Metric, Metric),
    batch: usize,
    reps: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let n = check_features(features1, features2, batch)?;
    if reps == 0 {
        return Err(invalid("at least one replication is required"));
    }
    (0..reps)
        .map(|r| {
            let mut rng = stream_rng(seed, stream::MINIBATCH_BASE + r as u64);
            let idx: Vec<usize> = (0..batch).map(|_| rng.random_range(0..n)).collect();
            dc_on_batch(features1, features2, metrics, &idx)
        })
        .collect()
}

pub fn mean_and_stderr(xs: &[f64]) -> (f64, Option<f64>) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, None);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, Some((var / n).sqrt()))
}

/// Mini-batch estimate of the Difference Coefficient, averaged over `reps` batches.
pub fn dc_minibatch(
    features1: ArrayView2<f64>,
    features2: ArrayView2<f64>,
    metrics: (Metric, Metric),
    batch: usize,
    reps: usize,
    seed: u64,
) -> Result<CoherenceReport> {
    let samples = dc_minibatch_samples(features1, features2, metrics, batch, reps, seed)?;
    let (dc, stderr) = mean_and_stderr(&samples);
    Ok(CoherenceReport {
        per_point_phi: Vec::new(),
        global_phi: 1.0 - dc,
        dc,
        method: EstimatorMethod::Minibatch { batch, replications: reps },
        stderr,
    })
}

/// Largest number of ordered batches [`dc_minibatch_exhaustive`] will enumerate.
pub const EXHAUSTIVE_LIMIT: u64 = 2_000_000;

/// Exact expectation of `DC_B` over all `N^B` equally likely ordered batches.
///
/// Serves as the oracle for the sampling estimator on tiny sets (N <= 40).
pub fn dc_minibatch_exhaustive(
    features1: ArrayView2<f64>,
    features2: ArrayView2<f64>,
    metrics: (Metric, Metric),
    batch: usize,
) -> Result<f64> {
    let n = check_features(features1, features2, batch)?;
    let total = (n as u64).checked_pow(batch as u32).filter(|&t| t <= EXHAUSTIVE_LIMIT);
    let total = match total {
        Some(t) if n <= 40 => t,
        _ => return Err(invalid(format!("{n}^{batch} batches is too many to enumerate"))),
    };
    let mut idx = vec![0usize; batch];
    let mut sum = 0.0;
    for _ in 0..total {
        sum += dc_on_batch(features1, features2, metrics, &idx)?;
        for slot in idx.iter_mut().rev() {
            *slot += 1;
            if *slot < n {
                break;
            }
            *slot = 0;
        }
    }
    Ok(sum / total as f64)
}

/// Least-squares slope of `ln(error)` against `ln(B)`.
pub fn rate_fit(errors: &[(usize, f64)]) -> Result<f64> {
    let mut sizes: Vec<usize> = errors.iter().map(|e| e.0).collect();
    sizes.sort_unstable();
    sizes.dedup();
    if sizes.len() < 4 {
        return Err(invalid(format!("need >= 4 distinct batch sizes, got {}", sizes.len())));
    }
    if let Some(bad) = errors.iter().find(|e| !(e.1 > 0.0) || !e.1.is_finite() || e.0 == 0) {
        return Err(invalid(format!("errors must be positive and finite, got {bad:?}")));
    }
    let xs: Vec<f64> = errors.iter().map(|e| (e.0 as f64).ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.1.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    Ok(sxy / sxx)
}

/// True iff every row of the two matrices induces the same ordering.
///
/// Tied rows are refused.
pub fn is_absolutely_coherent(dm1: ArrayView2<f64>, dm2: ArrayView2<f64>) -> Result<bool> {
    if dm1.dim() != dm2.dim() {
        return Err(shape(format!("{:?}", dm1.dim()), format!("{:?}", dm2.dim())));
    }
    min_gap(dm1)?;
    min_gap(dm2)?;
    Ok(hard_ranks(dm1)?.values == hard_ranks(dm2)?.values)
}

/// The conditional events probed on triples `(i, j, k)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ProbeEvent {
    /// Condition `|F1[i][j] - F1[i][k]| <= eps1`, event `|F2[i][j] - F2[i][k]| >= eps2`.
    RankPreservation { eps1: f64, eps2: f64 },
    /// Condition `F1[i][j] <= F1[i][k]`, event `F2[i][j] - F2[i][k] >= eps`.
    OrderPreservation { eps: f64 },
}

impl ProbeEvent {
    fn validate(&self) -> Result<()> {
        match *self {
            ProbeEvent::RankPreservation { eps1, eps2 } if eps1 > 0.0 && eps2 > eps1 => Ok(()),
            ProbeEvent::OrderPreservation { eps } if eps > 0.0 => Ok(()),
            other => Err(invalid(format!("invalid probe thresholds {other:?}"))),
        }
    }

    /// `(condition, event)` for one triple.
    #[inline]
    fn test(&self, f1j: f64, f1k: f64, f2j: f64, f2k: f64) -> (bool, bool) {
        match *self {
            ProbeEvent::RankPreservation { eps1, eps2 } => {
                ((f1j - f1k).abs() <= eps1, (f2j - f2k).abs() >= eps2)
            }
            ProbeEvent::OrderPreservation { eps } => (f1j <= f1k, f2j - f2k >= eps),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sampling {
    /// Every one of the `N^3` triples.
    Exhaustive,
    /// `samples` triples drawn uniformly with replacement.
    Random { samples: usize, seed: u64 },
}

/// Largest `N^3` for which the automatic probes enumerate instead of sampling.
pub const PROBE_ENUMERATION_LIMIT: usize = 1_000_000;

#[derive(Clone, Debug, PartialEq)]
pub struct ThetaProbeResult {
    /// `event_hits / condition_hits`; `None` when the condition never held.
    pub conditional_frequency: Option<f64>,
    pub event: ProbeEvent,
    pub samples: usize,
    pub condition_hits: usize,
    pub event_hits: usize,
}

pub fn probe(
    f1: &EmpiricalCdfMatrix,
    f2: &EmpiricalCdfMatrix,
    event: ProbeEvent,
    sampling: Sampling,
) -> Result<ThetaProbeResult> {
    let n = check_pair(f1, f2)?;
    event.validate()?;
    let (a, b) = (&f1.values, &f2.values);
    let mut samples = 0;
    let mut condition_hits = 0;
    let mut event_hits = 0;
    let mut visit = |i: usize, j: usize, k: usize| {
        samples += 1;
        let (cond, ev) = event.test(a[[i, j]], a[[i, k]], b[[i, j]], b[[i, k]]);
        if cond {
            condition_hits += 1;
            event_hits += usize::from(ev);
        }
    };
    match sampling {
        Sampling::Exhaustive => {
            for i in 0..n {
                for j in 0..n {
                    for k in 0..n {
                        visit(i, j, k);
                    }
                }
            }
        }
        Sampling::Random { samples: count, seed } => {
            let mut rng = stream_rng(seed, stream::PROBE_TRIPLES);
            for _ in 0..count {
                let (i, j, k) = (rng.random_range(0..n), rng.random_range(0..n), rng.random_range(0..n));
                visit(i, j, k);
            }
        }
    }
    Ok(ThetaProbeResult {
        conditional_frequency: (condition_hits > 0).then(|| event_hits as f64 / condition_hits as f64),
        event,
        samples,
        condition_hits,
        event_hits,
    })
}

fn auto_sampling(n: usize, samples: usize, seed: u64) -> Sampling {
    match n.checked_pow(3) {
        Some(t) if t <= PROBE_ENUMERATION_LIMIT => Sampling::Exhaustive,
        _ => Sampling::Random { samples, seed },
    }
}

/// Rank-preservation probe; enumerates all triples when `N^3 <= 10^6`, otherwise samples.
pub fn probe_rank_preservation(
    f1: &EmpiricalCdfMatrix,
    f2: &EmpiricalCdfMatrix,
    eps1: f64,
    eps2: f64,
    samples: usize,
    seed: u64,
) -> Result<ThetaProbeResult> {
    let sampling = auto_sampling(f1.len(), samples, seed);
    probe(f1, f2, ProbeEvent::RankPreservation { eps1, eps2 }, sampling)
}

/// Relative-order probe; same enumeration rule as [`probe_rank_preservation`].
pub fn probe_order_preservation(
    f1: &EmpiricalCdfMatrix,
    f2: &EmpiricalCdfMatrix,
    eps: f64,
    samples: usize,
    seed: u64,
) -> Result<ThetaProbeResult> {
    let sampling = auto_sampling(f1.len(), samples, seed);
    probe(f1, f2, ProbeEvent::OrderPreservation { eps }, sampling)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    fn cdf_of_line(xs: &[f64]) -> EmpiricalCdfMatrix {
        let pts = Array2::from_shape_vec((xs.len(), 1), xs.to_vec()).unwrap();
        empirical_cdf(pairwise(pts.view(), Metric::euclidean()).unwrap().view()).unwrap()
    }

    #[test]
    fn phi_examples() {
        let f = cdf_of_line(&[0.0, 1.0, 3.0]);
        for i in 0..3 {
            assert_eq!(phi_at(i, &f, &f).unwrap(), 1.0);
        }
        let g = cdf_of_line(&[0.0, 1.0, 10.0]);
        assert_eq!(f, g);
        for i in 0..3 {
            assert_eq!(phi_at(i, &f, &g).unwrap(), 1.0);
        }
        let h = cdf_of_line(&[0.0, 3.0, 1.0]);
        assert_eq!(f.values.row(0).to_vec(), vec![1.0 / 3.0, 2.0 / 3.0, 1.0]);
        assert_eq!(h.values.row(0).to_vec(), vec![1.0 / 3.0, 1.0, 2.0 / 3.0]);
        for i in 0..3 {
            assert!((phi_at(i, &f, &h).unwrap() - 7.0 / 9.0).abs() < 1e-15);
        }
        assert!(phi_at(3, &f, &h).is_err());
    }

    #[test]
    fn dc_exact_examples() {
        let f = cdf_of_line(&[0.0, 1.0, 3.0]);
        let h = cdf_of_line(&[0.0, 3.0, 1.0]);
        let r = dc_exact(&f, &f).unwrap();
        assert_eq!((r.dc, r.global_phi), (0.0, 1.0));

        let r = dc_exact(&f, &h).unwrap();
        assert!((r.dc - 2.0 / 9.0).abs() < 1e-15);
        assert!((r.global_phi - 7.0 / 9.0).abs() < 1e-15);
        let mean_phi = r.per_point_phi.iter().sum::<f64>() / 3.0;
        assert!((mean_phi - r.global_phi).abs() < 1e-15);
        assert_eq!(dc_exact(&h, &f).unwrap().dc, r.dc);

        let wrong = cdf_of_line(&[0.0, 1.0]);
        assert!(dc_exact(&f, &wrong).is_err());
    }

    #[test]
    fn rate_fit_examples() {
        let sqrt: Vec<(usize, f64)> = [4, 8, 16, 32, 64].iter().map(|&b| (b, 0.3 / (b as f64).sqrt())).collect();
        assert!((rate_fit(&sqrt).unwrap() + 0.5).abs() < 1e-12);
        let lin: Vec<(usize, f64)> = [4, 8, 16, 32].iter().map(|&b| (b, 2.0 / b as f64)).collect();
        assert!((rate_fit(&lin).unwrap() + 1.0).abs() < 1e-12);
        assert!(rate_fit(&[(4, 0.1), (8, 0.0), (16, 0.1), (32, 0.1)]).is_err());
        assert!(rate_fit(&[(4, 0.1), (8, 0.1), (16, 0.1)]).is_err());
    }

    #[test]
    fn absolute_coherence_examples() {
        let pts = array![[0.0, 0.0], [1.0, 0.2], [0.3, 2.0], [3.0, 1.1]];
        let dm = pairwise(pts.view(), Metric::euclidean()).unwrap().values;
        assert!(is_absolutely_coherent(dm.view(), (&dm * 10.0).view()).unwrap());

        // Swap the two smallest off-diagonal entries of row 0.
        let mut swapped = dm.clone();
        let mut order: Vec<usize> = (1..4).collect();
        order.sort_by(|&a, &b| dm[[0, a]].total_cmp(&dm[[0, b]]));
        let (a, b) = (order[0], order[1]);
        swapped[[0, a]] = dm[[0, b]];
        swapped[[0, b]] = dm[[0, a]];
        assert!(!is_absolutely_coherent(dm.view(), swapped.view()).unwrap());

        let tied = array![[0.0, 1.0, 1.0], [1.0, 0.0, 2.0], [1.0, 2.0, 0.0]];
        assert!(is_absolutely_coherent(tied.view(), tied.view()).is_err());
    }

    #[test]
    fn probes_vanish_on_identical_rankings() {
        let f = cdf_of_line(&[0.0, 0.4, 1.1, 2.5, 2.7, 4.0]);
        for (e1, e2) in [(0.1, 0.2), (0.3, 0.31), (0.5, 1.5)] {
            let r = probe_rank_preservation(&f, &f, e1, e2, 0, 0).unwrap();
            assert_eq!(r.conditional_frequency, Some(0.0));
            assert_eq!(r.samples, 216);
        }
        for eps in [1e-9, 0.2, 1.5] {
            let r = probe_order_preservation(&f, &f, eps, 0, 0).unwrap();
            assert_eq!(r.conditional_frequency, Some(0.0));
        }
        assert!(probe_order_preservation(&f, &f, 0.0, 0, 0).is_err());
        assert!(probe_rank_preservation(&f, &f, 0.2, 0.2, 0, 0).is_err());
    }

    #[test]
    fn exhaustive_oracle_counts_batches() {
        let x = array![[0.0], [1.0], [3.0]];
        let y = array![[0.0], [3.0], [1.0]];
        let m = (Metric::euclidean(), Metric::euclidean());
        let e = dc_minibatch_exhaustive(x.view(), y.view(), m, 3).unwrap();
        // Averaging DC_3 over all 27 batches by a second route.
        let mut sum = 0.0;
        for a in 0..3 {
            for b in 0..3 {
                for c in 0..3 {
                    sum += dc_on_batch(x.view(), y.view(), m, &[a, b, c]).unwrap();
                }
            }
        }
        assert!((e - sum / 27.0).abs() < 1e-15);
        assert!(dc_minibatch_exhaustive(x.view(), y.view(), m, 1).is_err());
    }

    #[test]
    fn minibatch_identical_features_is_zero() {
        let x = array![[0.0, 1.0], [2.0, 0.5], [1.0, 1.0], [3.0, -1.0]];
        let m = (Metric::euclidean(), Metric::euclidean());
        let s = dc_minibatch_samples(x.view(), x.view(), m, 4, 20, 3).unwrap();
        assert!(s.iter().all(|&v| v == 0.0));
        let r = dc_minibatch(x.view(), x.view(), m, 4, 20, 3).unwrap();
        assert_eq!(r.global_phi, 1.0);
        assert_eq!(r.method, EstimatorMethod::Minibatch { batch: 4, replications: 20 });
        assert!(dc_minibatch(x.view(), x.view(), m, 5, 1, 0).is_err());
    }
}
