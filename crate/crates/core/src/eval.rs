//! Retrieval metrics, correlation coefficients and the mini-batch size ablation.

use ndarray::ArrayView2;

use crate::coherence::{dc_exact_features, dc_minibatch};
use crate::error::{invalid, shape, Error, Result};
use crate::metric::Metric;

#[derive(Clone, Debug, PartialEq)]
pub struct RetrievalResult {
    /// Mean of `per_query_ap`.
    pub map: f64,
    pub k: usize,
    pub topk_precision: f64,
    pub per_query_ap: Vec<f64>,
    /// Queries whose class never occurs in the database; their AP is 0.
    pub missing_class_queries: Vec<usize>,
}

/// 11-point interpolated average precision of a ranked relevance list.
///
/// Interpolated precision at recall `r` is the best precision at any cut-off
/// whose recall is at least `r`. Returns `None` when nothing is relevant.
pub fn interpolated_ap(relevant: &[bool]) -> Option<f64> {
    let total = relevant.iter().filter(|&&r| r).count();
    if total == 0 {
        return None;
    }
    let mut precision = Vec::with_capacity(relevant.len());
    let mut hits_at = Vec::with_capacity(relevant.len());
    let mut hits = 0usize;
    for (m, &r) in relevant.iter().enumerate() {
        hits += r as usize;
        precision.push(hits as f64 / (m + 1) as f64);
        hits_at.push(hits);
    }
    for m in (0..precision.len().saturating_sub(1)).rev() {
        precision[m] = precision[m].max(precision[m + 1]);
    }
    let sum: f64 = (0..=10usize)
        .map(|t| {
            // recall >= t/10, compared in integers
            let first = hits_at.partition_point(|&h| h * 10 < t * total);
            precision.get(first).copied().unwrap_or(0.0)
        })
        .sum();
    Some(sum / 11.0)
}

/// Ranks the database by ascending dissimilarity to each query (ties by
/// database index) and scores label matches.
pub fn retrieve_eval(
    db: ArrayView2<f64>,
    db_labels: &[usize],
    queries: ArrayView2<f64>,
    query_labels: &[usize],
    metric: Metric,
    k: usize,
) -> Result<RetrievalResult> {
    if db.ncols() != queries.ncols() {
        return Err(shape(format!("{} query features", db.ncols()), queries.ncols()));
    }
    if db_labels.len() != db.nrows() {
        return Err(shape(format!("{} database labels", db.nrows()), db_labels.len()));
    }
    if query_labels.len() != queries.nrows() {
        return Err(shape(format!("{} query labels", queries.nrows()), query_labels.len()));
    }
    if queries.nrows() == 0 {
        return Err(invalid("no queries"));
    }
    if k == 0 || k > db.nrows() {
        return Err(invalid(format!("k must lie in [1, {}], got {k}", db.nrows())));
    }
    let mut per_query_ap = Vec::with_capacity(queries.nrows());
    let mut missing_class_queries = Vec::new();
    let mut topk_sum = 0.0;
    let mut order: Vec<(f64, usize)> = Vec::with_capacity(db.nrows());
    for (q, (query, &ql)) in queries.rows().into_iter().zip(query_labels).enumerate() {
        order.clear();
        for (j, item) in db.rows().into_iter().enumerate() {
            order.push((metric.dissim(query, item)?, j));
        }
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let relevant: Vec<bool> = order.iter().map(|&(_, j)| db_labels[j] == ql).collect();
        topk_sum += relevant[..k].iter().filter(|&&r| r).count() as f64 / k as f64;
        per_query_ap.push(interpolated_ap(&relevant).unwrap_or_else(|| {
            missing_class_queries.push(q);
            0.0
        }));
    }
    let nq = queries.nrows() as f64;
    Ok(RetrievalResult {
        map: per_query_ap.iter().sum::<f64>() / nq,
        k,
        topk_precision: topk_sum / nq,
        per_query_ap,
        missing_class_queries,
    })
}

/// Fraction of positions where `predicted` equals `truth`.
pub fn accuracy(predicted: &[usize], truth: &[usize]) -> Result<f64> {
    if predicted.len() != truth.len() || truth.is_empty() {
        return Err(shape(format!("{} non-empty predictions", truth.len()), predicted.len()));
    }
    let hits = predicted.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / truth.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CorrelationResult {
    pub pearson: f64,
    pub spearman: f64,
    pub n: usize,
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(shape(format!("{} values", xs.len()), ys.len()));
    }
    if xs.len() < 2 {
        return Err(Error::UndefinedCorrelation("need at least two pairs".into()));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(invalid("non-finite value in correlation input"));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("zero variance".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based ranks with ties sharing the mean of their positions.
pub fn midranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && xs[idx[end]] == xs[idx[start]] {
            end += 1;
        }
        let mid = (start + end + 1) as f64 / 2.0;
        for &i in &idx[start..end] {
            ranks[i] = mid;
        }
        start = end;
    }
    ranks
}

pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(shape(format!("{} values", xs.len()), ys.len()));
    }
    pearson(&midranks(xs), &midranks(ys))
}

pub fn correlation(xs: &[f64], ys: &[f64]) -> Result<CorrelationResult> {
    Ok(CorrelationResult { pearson: pearson(xs, ys)?, spearman: spearman(xs, ys)?, n: xs.len() })
}

/// Mean over reference points of the Spearman correlation between their
/// rows of two dissimilarity matrices, leaving out the self entry.
pub fn mean_row_spearman(d1: ArrayView2<f64>, d2: ArrayView2<f64>) -> Result<f64> {
    if d1.dim() != d2.dim() || d1.nrows() != d1.ncols() {
        return Err(shape(format!("matching square {:?}", d1.dim()), format!("{:?}", d2.dim())));
    }
    let n = d1.nrows();
    if n < 3 {
        return Err(invalid("need at least three points"));
    }
    let mut total = 0.0;
    for i in 0..n {
        let a: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| d1[[i, j]]).collect();
        let b: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| d2[[i, j]]).collect();
        total += spearman(&a, &b)?;
    }
    Ok(total / n as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AblationRow {
    /// `None` marks the exact full-dataset row.
    pub batch: Option<usize>,
    pub mean_pc: f64,
    pub stderr: Option<f64>,
}

/// Mini-batch coherence estimates for each batch size, followed by the exact value.
pub fn batch_ablation(
    features1: ArrayView2<f64>,
    features2: ArrayView2<f64>,
    metrics: (Metric, Metric),
    batches: &[usize],
    reps: usize,
    seed: u64,
) -> Result<Vec<AblationRow>> {
    if batches.windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid("batch sizes must be strictly increasing"));
    }
    let mut rows = batches
        .iter()
        .map(|&b| {
            let rep = dc_minibatch(features1, features2, metrics, b, reps, seed)?;
            Ok(AblationRow { batch: Some(b), mean_pc: rep.global_phi, stderr: rep.stderr })
        })
        .collect::<Result<Vec<_>>>()?;
    let exact = dc_exact_features(features1, features2, metrics)?;
    rows.push(AblationRow { batch: None, mean_pc: exact.global_phi, stderr: None });
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn single_relevant_item_first() {
        assert_eq!(interpolated_ap(&[true]), Some(1.0));
        assert_eq!(interpolated_ap(&[true, false, false]), Some(1.0));
        assert_eq!(interpolated_ap(&[false]), None);
    }

    #[test]
    fn alternating_pattern_by_hand() {
        // Hits at ranks 1 and 3: precision 1 up to recall 0.5, then 2/3.
        let ap = interpolated_ap(&[true, false, true, false]).unwrap();
        let expected = (6.0 * 1.0 + 5.0 * (2.0 / 3.0)) / 11.0;
        assert!((ap - expected).abs() < 1e-15);
    }

    #[test]
    fn retrieval_ties_break_by_index() {
        let db = array![[1.0], [1.0], [5.0]];
        let q = array![[1.0]];
        let r = retrieve_eval(db.view(), &[1, 0, 0], q.view(), &[0], Metric::euclidean(), 1).unwrap();
        assert_eq!(r.topk_precision, 0.0);
        let r = retrieve_eval(db.view(), &[0, 1, 1], q.view(), &[0], Metric::euclidean(), 1).unwrap();
        assert_eq!(r.topk_precision, 1.0);
        assert_eq!(r.map, 1.0);
    }

    #[test]
    fn missing_class_scores_zero() {
        let db = array![[0.0], [1.0]];
        let q = array![[0.0], [0.5]];
        let r = retrieve_eval(db.view(), &[0, 0], q.view(), &[0, 7], Metric::euclidean(), 2).unwrap();
        assert_eq!(r.per_query_ap, vec![1.0, 0.0]);
        assert_eq!(r.missing_class_queries, vec![1]);
        assert_eq!(r.map, 0.5);
        assert!(retrieve_eval(db.view(), &[0, 0], q.view(), &[0, 7], Metric::euclidean(), 3).is_err());
    }

    #[test]
    fn correlation_examples() {
        let xs = [1.0, 2.0, 4.0, 8.0];
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x + 3.0).collect();
        assert!((pearson(&xs, &ys).unwrap() - 1.0).abs() < 1e-15);
        let rev: Vec<f64> = xs.iter().rev().cloned().collect();
        assert!((spearman(&xs, &rev).unwrap() + 1.0).abs() < 1e-15);
        assert!(matches!(pearson(&[1.0, 1.0], &[2.0, 3.0]), Err(Error::UndefinedCorrelation(_))));
        assert_eq!(midranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn stylized_table_pearson() {
        let pc = [0.841, 0.877, 0.889, 0.901, 0.911, 0.921, 0.931, 0.940, 0.949, 0.956];
        let acc = [82.00, 83.50, 83.25, 85.75, 86.75, 88.00, 86.75, 89.25, 87.00, 90.00];
        let r = pearson(&pc, &acc).unwrap();
        assert!((r - 0.920).abs() <= 0.005, "{r}");
    }

    #[test]
    fn ablation_of_identical_features_is_one() {
        let x = array![[0.0, 0.0], [1.0, 0.2], [0.3, 2.0], [4.0, 1.0], [2.0, 2.5]];
        let m = (Metric::euclidean(), Metric::euclidean());
        let rows = batch_ablation(x.view(), x.view(), m, &[2, 3, 5], 20, 1).unwrap();
        assert_eq!(rows.len(), 4);
        assert!(rows.iter().all(|r| r.mean_pc == 1.0));
        assert_eq!(rows[3].batch, None);
        assert!(batch_ablation(x.view(), x.view(), m, &[3, 2], 5, 1).is_err());
    }
}
