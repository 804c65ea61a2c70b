//! Statistical and oracle checks for the coherence estimators, probes and retrieval metrics.

use ndarray::Array2;
use pct_core::coherence::{
    dc_exact, dc_exact_features, dc_minibatch, dc_minibatch_exhaustive, dc_minibatch_samples, is_absolutely_coherent,
    mean_and_stderr, probe, probe_order_preservation, probe_rank_preservation, ProbeEvent, Sampling,
};
use pct_core::eval::{batch_ablation, interpolated_ap, retrieve_eval, spearman};
use pct_core::metric::{pairwise, Metric};
use pct_core::ranking::empirical_cdf;
use pct_core::rng::{stream, stream_rng};
use rand::Rng;
use rand_distr::StandardNormal;

fn gaussian(rng: &mut impl Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.sample::<f64, _>(StandardNormal))
}

fn warp(x: &Array2<f64>) -> Array2<f64> {
    let mut y = x.clone();
    for mut r in y.rows_mut() {
        r[1] += 1.5 * r[0].sin();
    }
    y
}

fn euclid() -> (Metric, Metric) {
    (Metric::euclidean(), Metric::euclidean())
}

#[test]
fn sampled_cumulative_value_is_unbiased() {
    let mut rng = stream_rng(31, stream::USER);
    let x = gaussian(&mut rng, 50, 2);
    let d = pairwise(x.view(), Metric::euclidean()).unwrap();
    let f = empirical_cdf(d.view()).unwrap();
    let (i, j) = (3, 17);
    let reps = 4000;
    let b = 10;
    let est: Vec<f64> = (0..reps)
        .map(|_| {
            let hits = (0..b).filter(|_| d.values[[i, rng.random_range(0..50)]] <= d.values[[i, j]]).count();
            hits as f64 / b as f64
        })
        .collect();
    let (mean, se) = mean_and_stderr(&est);
    let se = se.unwrap();
    assert!((mean - f.values[[i, j]]).abs() <= 3.0 * se, "{mean} vs {} (se {se})", f.values[[i, j]]);
}

#[test]
fn minibatch_mean_matches_exhaustive_expectation() {
    let mut rng = stream_rng(32, stream::USER);
    let x = gaussian(&mut rng, 7, 2);
    let y = warp(&x);
    for b in [2, 3, 4] {
        let exact = dc_minibatch_exhaustive(x.view(), y.view(), euclid(), b).unwrap();
        let est = dc_minibatch(x.view(), y.view(), euclid(), b, 6000, 5).unwrap();
        let se = est.stderr.unwrap();
        assert!((est.dc - exact).abs() <= 3.0 * se, "B={b}: {} vs {exact} (se {se})", est.dc);
    }
}

#[test]
fn ablation_rows_converge_to_their_expectations() {
    let mut rng = stream_rng(33, stream::USER);
    let x = gaussian(&mut rng, 8, 2);
    let y = warp(&x);
    let rows = batch_ablation(x.view(), y.view(), euclid(), &[2, 3, 4, 5], 2000, 9).unwrap();
    for row in &rows[..4] {
        let b = row.batch.unwrap();
        let expected = 1.0 - dc_minibatch_exhaustive(x.view(), y.view(), euclid(), b).unwrap();
        assert!((row.mean_pc - expected).abs() <= 3.0 * row.stderr.unwrap(), "B={b}");
    }
    let exact = dc_exact_features(x.view(), y.view(), euclid()).unwrap();
    assert_eq!(rows[4].mean_pc, exact.global_phi);
}

#[test]
fn stderr_shrinks_with_batch_size() {
    let mut rng = stream_rng(34, stream::USER);
    let x = gaussian(&mut rng, 300, 2);
    let y = warp(&x);
    let mut prev = f64::INFINITY;
    for b in [4, 8, 16, 32, 64] {
        let s = dc_minibatch_samples(x.view(), y.view(), euclid(), b, 400, 3).unwrap();
        let se = mean_and_stderr(&s).1.unwrap();
        assert!(se <= prev * 1.15, "B={b}: {se} after {prev}");
        prev = se;
    }
}

#[test]
fn dc_is_symmetric_and_bounded() {
    let mut rng = stream_rng(35, stream::USER);
    for _ in 0..20 {
        let x = gaussian(&mut rng, 15, 3);
        let y = gaussian(&mut rng, 15, 2);
        let a = dc_exact_features(x.view(), y.view(), euclid()).unwrap();
        let b = dc_exact_features(y.view(), x.view(), euclid()).unwrap();
        assert_eq!(a.dc, b.dc);
        assert!((0.0..=1.0).contains(&a.dc));
        assert!(a.per_point_phi.iter().all(|p| (0.0..=1.0).contains(p)));
    }
}

#[test]
fn increasing_transforms_are_absolutely_coherent() {
    let mut rng = stream_rng(36, stream::USER);
    for _ in 0..10 {
        let x = gaussian(&mut rng, 20, 2);
        let d1 = pairwise(x.view(), Metric::euclidean()).unwrap().values;
        let d2 = d1.mapv(|v| v.powi(3) + 2.0 * v);
        assert!(is_absolutely_coherent(d1.view(), d2.view()).unwrap());
        let (f1, f2) = (empirical_cdf(d1.view()).unwrap(), empirical_cdf(d2.view()).unwrap());
        assert_eq!(dc_exact(&f1, &f2).unwrap().dc, 0.0);
        let rank = probe_rank_preservation(&f1, &f2, 0.05, 0.1, 0, 0).unwrap();
        let order = probe_order_preservation(&f1, &f2, 1e-9, 0, 0).unwrap();
        assert_eq!((rank.conditional_frequency, order.conditional_frequency), (Some(0.0), Some(0.0)));
    }
}

/// Counts the probe events directly from the definitions.
fn brute_force_probe(f1: &Array2<f64>, f2: &Array2<f64>, event: ProbeEvent) -> (usize, usize) {
    let n = f1.nrows();
    let (mut cond, mut hit) = (0, 0);
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let (c, e) = match event {
                    ProbeEvent::RankPreservation { eps1, eps2 } => (
                        (f1[[i, j]] - f1[[i, k]]).abs() <= eps1,
                        (f2[[i, j]] - f2[[i, k]]).abs() >= eps2,
                    ),
                    ProbeEvent::OrderPreservation { eps } => (f1[[i, j]] <= f1[[i, k]], f2[[i, j]] - f2[[i, k]] >= eps),
                };
                if c {
                    cond += 1;
                    hit += usize::from(e);
                }
            }
        }
    }
    (cond, hit)
}

#[test]
fn probes_match_enumeration_and_sampling_agrees() {
    let mut rng = stream_rng(37, stream::USER);
    let x = gaussian(&mut rng, 24, 2);
    let y = warp(&x).mapv(|v| v + 0.3 * rng.sample::<f64, _>(StandardNormal));
    let f1 = empirical_cdf(pairwise(x.view(), Metric::euclidean()).unwrap().view()).unwrap();
    let f2 = empirical_cdf(pairwise(y.view(), Metric::euclidean()).unwrap().view()).unwrap();
    for event in [ProbeEvent::RankPreservation { eps1: 0.05, eps2: 0.1 }, ProbeEvent::OrderPreservation { eps: 0.05 }] {
        let full = probe(&f1, &f2, event, Sampling::Exhaustive).unwrap();
        let (cond, hit) = brute_force_probe(&f1.values, &f2.values, event);
        assert_eq!((full.condition_hits, full.event_hits), (cond, hit));
        let p = full.conditional_frequency.unwrap();
        assert!(p > 0.0);

        let sampled = probe(&f1, &f2, event, Sampling::Random { samples: 200_000, seed: 4 }).unwrap();
        let q = sampled.conditional_frequency.unwrap();
        let se = (p * (1.0 - p) / sampled.condition_hits as f64).sqrt();
        assert!((q - p).abs() <= 4.0 * se, "{event:?}: {q} vs {p}");
    }
    // Differences of cumulative values never exceed 1.
    let r = probe_rank_preservation(&f1, &f2, 0.05, 1.05, 0, 0).unwrap();
    assert_eq!(r.event_hits, 0);
    assert_eq!(probe_order_preservation(&f1, &f2, 1.01, 0, 0).unwrap().event_hits, 0);
}

#[test]
fn reversed_row_order_is_detected() {
    // Student reverses the order of every dissimilarity from point 0.
    let mut rng = stream_rng(38, stream::USER);
    let x = gaussian(&mut rng, 12, 2);
    let d1 = pairwise(x.view(), Metric::euclidean()).unwrap().values;
    let mut d2 = d1.clone();
    let max = d1.row(0).iter().cloned().fold(0.0, f64::max);
    for j in 1..12 {
        d2[[0, j]] = 2.0 * max - d1[[0, j]];
    }
    let f1 = empirical_cdf(d1.view()).unwrap();
    let f2 = empirical_cdf(d2.view()).unwrap();
    let r = probe(&f1, &f2, ProbeEvent::OrderPreservation { eps: 1e-9 }, Sampling::Exhaustive).unwrap();
    // Only row 0 triples with j, k >= 1 and j != k violate the order.
    assert_eq!(r.event_hits, 11 * 10 / 2);
}

/// Independent 11-point AP: for every recall level scan all cut-offs.
fn oracle_ap(relevant: &[bool]) -> f64 {
    let total = relevant.iter().filter(|&&r| r).count() as f64;
    let mut sum = 0.0;
    for level in 0..=10 {
        let r = level as f64 / 10.0;
        let mut best: f64 = 0.0;
        for cut in 1..=relevant.len() {
            let hits = relevant[..cut].iter().filter(|&&v| v).count() as f64;
            if hits / total >= r - 1e-12 {
                best = best.max(hits / cut as f64);
            }
        }
        sum += best;
    }
    sum / 11.0
}

#[test]
fn ap_matches_oracle_on_all_short_patterns() {
    for mask in 1u32..(1 << 10) {
        let rel: Vec<bool> = (0..10).map(|b| mask >> b & 1 == 1).collect();
        let ap = interpolated_ap(&rel).unwrap();
        assert!((ap - oracle_ap(&rel)).abs() < 1e-15, "{rel:?}");
    }
}

#[test]
fn map_depends_only_on_the_ranking() {
    let mut rng = stream_rng(39, stream::USER);
    let db = gaussian(&mut rng, 40, 3);
    let q = gaussian(&mut rng, 10, 3);
    let dl: Vec<usize> = (0..40).map(|i| i % 3).collect();
    let ql: Vec<usize> = (0..10).map(|i| i % 3).collect();
    let base = retrieve_eval(db.view(), &dl, q.view(), &ql, Metric::cosine(), 5).unwrap();
    let scaled = db.mapv(|v| 7.0 * v);
    let again = retrieve_eval(scaled.view(), &dl, q.view(), &ql, Metric::cosine(), 5).unwrap();
    assert_eq!(base, again);
    assert!(base.per_query_ap.iter().all(|ap| (0.0..=1.0).contains(ap)));
}

#[test]
fn random_ranking_map_is_near_class_prior() {
    let mut rng = stream_rng(40, stream::USER);
    let db = gaussian(&mut rng, 2000, 4);
    let q = gaussian(&mut rng, 60, 4);
    let dl: Vec<usize> = (0..2000).map(|_| rng.random_range(0..2)).collect();
    let ql: Vec<usize> = (0..60).map(|i| i % 2).collect();
    let r = retrieve_eval(db.view(), &dl, q.view(), &ql, Metric::euclidean(), 10).unwrap();
    assert!((r.map - 0.5).abs() <= 0.05, "{}", r.map);
}

#[test]
fn spearman_ignores_increasing_maps() {
    let mut rng = stream_rng(41, stream::USER);
    let xs: Vec<f64> = (0..30).map(|_| rng.random::<f64>()).collect();
    let ys: Vec<f64> = xs.iter().map(|x| x + 0.3 * rng.random::<f64>()).collect();
    let a = spearman(&xs, &ys).unwrap();
    let b = spearman(&xs.iter().map(|x| x.exp()).collect::<Vec<_>>(), &ys.iter().map(|y| y.powi(3)).collect::<Vec<_>>()).unwrap();
    assert_eq!(a, b);
}
