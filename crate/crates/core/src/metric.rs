//! Dissimilarity metrics and pairwise dissimilarity matrices.

use ndarray::{Array2, ArrayView1, ArrayView2};

use crate::error::{invalid, shape, Result};

/// Norm floor used by the cosine dissimilarity for (near) zero vectors.
pub const DEFAULT_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MetricKind {
    Euclidean,
    Cosine,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metric {
    kind: MetricKind,
    eps: f64,
}

impl Metric {
    pub fn new(kind: MetricKind, eps: f64) -> Result<Self> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(invalid(format!("metric eps must be positive, got {eps}")));
        }
        Ok(Self { kind, eps })
    }

    pub fn euclidean() -> Self {
        Self { kind: MetricKind::Euclidean, eps: DEFAULT_EPS }
    }

    pub fn cosine() -> Self {
        Self { kind: MetricKind::Cosine, eps: DEFAULT_EPS }
    }

    pub fn kind(&self) -> MetricKind {
        self.kind
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn dissim(&self, u: ArrayView1<f64>, v: ArrayView1<f64>) -> Result<f64> {
        if u.len() != v.len() {
            return Err(shape(format!("dimension {}", u.len()), format!("dimension {}", v.len())));
        }
        Ok(match self.kind {
            MetricKind::Euclidean => euclidean_unchecked(u, v),
            MetricKind::Cosine => cosine_unchecked(u, v, self.eps),
        })
    }
}

fn euclidean_unchecked(u: ArrayView1<f64>, v: ArrayView1<f64>) -> f64 {
    u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

fn cosine_unchecked(u: ArrayView1<f64>, v: ArrayView1<f64>, eps: f64) -> f64 {
    let nu = u.dot(&u).sqrt().max(eps);
    let nv = v.dot(&v).sqrt().max(eps);
    let cos = (u.dot(&v) / (nu * nv)).clamp(-1.0, 1.0);
    0.5 * (1.0 - cos)
}

/// Euclidean distance `||u - v||`.
pub fn euclidean(u: ArrayView1<f64>, v: ArrayView1<f64>) -> Result<f64> {
    Metric::euclidean().dissim(u, v)
}

/// Cosine dissimilarity `(1 - cos(u, v)) / 2`, valued in `[0, 1]`.
pub fn cosine_dissim(u: ArrayView1<f64>, v: ArrayView1<f64>) -> Result<f64> {
    Metric::cosine().dissim(u, v)
}

/// Square matrix of pairwise dissimilarities; row `i` holds distances from point `i`.
///
/// Symmetric bit-for-bit with a zero diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct DissimMatrix {
    pub values: Array2<f64>,
    pub metric: Metric,
    pub source: String,
}

impl DissimMatrix {
    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Pairwise dissimilarities between the rows of `x`.
///
/// Only the upper triangle is evaluated; the lower triangle is a mirror copy.
pub fn pairwise(x: ArrayView2<f64>, metric: Metric) -> Result<DissimMatrix> {
    pairwise_tagged(x, metric, "")
}

pub fn pairwise_tagged(x: ArrayView2<f64>, metric: Metric, source: &str) -> Result<DissimMatrix> {
    let b = x.nrows();
    if b < 2 {
        return Err(invalid(format!("pairwise needs at least 2 rows, got {b}")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(invalid("pairwise input contains non-finite values"));
    }
    let mut values = Array2::zeros((b, b));
    for i in 0..b {
        for j in i + 1..b {
            let d = metric.dissim(x.row(i), x.row(j))?;
            values[[i, j]] = d;
            values[[j, i]] = d;
        }
    }
    Ok(DissimMatrix { values, metric, source: source.to_string() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array1};
    use proptest::prelude::*;

    #[test]
    fn euclidean_examples() {
        assert_eq!(euclidean(array![0.0, 0.0].view(), array![3.0, 4.0].view()).unwrap(), 5.0);
        let u = array![1.5, -2.0, 7.0];
        assert_eq!(euclidean(u.view(), u.view()).unwrap(), 0.0);
        assert!(euclidean(u.view(), array![1.0].view()).is_err());
    }

    #[test]
    fn cosine_examples() {
        let d = |a: Array1<f64>, b: Array1<f64>| cosine_dissim(a.view(), b.view()).unwrap();
        assert_eq!(d(array![1.0, 0.0], array![0.0, 1.0]), 0.5);
        assert_eq!(d(array![1.0, 0.0], array![-1.0, 0.0]), 1.0);
        assert_eq!(d(array![2.0, 0.0], array![1.0, 0.0]), 0.0);
        // Zero vectors are clamped, not NaN.
        assert_eq!(d(array![0.0, 0.0], array![1.0, 0.0]), 0.5);
    }

    #[test]
    fn pairwise_collinear() {
        let x = array![[0.0], [1.0], [3.0]];
        let dm = pairwise(x.view(), Metric::euclidean()).unwrap();
        assert_eq!(dm.values, array![[0.0, 1.0, 3.0], [1.0, 0.0, 2.0], [3.0, 2.0, 0.0]]);
    }

    #[test]
    fn pairwise_rejects_bad_input() {
        assert!(pairwise(array![[1.0, 2.0]].view(), Metric::euclidean()).is_err());
        assert!(pairwise(array![[1.0], [f64::NAN]].view(), Metric::cosine()).is_err());
        assert!(Metric::new(MetricKind::Cosine, 0.0).is_err());
    }

    fn batch() -> impl Strategy<Value = Array2<f64>> {
        (2usize..10, 1usize..6).prop_flat_map(|(b, d)| {
            proptest::collection::vec(-5.0f64..5.0, b * d)
                .prop_map(move |v| Array2::from_shape_vec((b, d), v).unwrap())
        })
    }

    proptest! {
        #[test]
        fn pairwise_invariants(x in batch(), cos in any::<bool>()) {
            let metric = if cos { Metric::cosine() } else { Metric::euclidean() };
            let dm = pairwise(x.view(), metric).unwrap();
            let b = x.nrows();
            for i in 0..b {
                prop_assert_eq!(dm.values[[i, i]], 0.0);
                for j in 0..b {
                    prop_assert_eq!(dm.values[[i, j]].to_bits(), dm.values[[j, i]].to_bits());
                    prop_assert!(dm.values[[i, j]] >= 0.0);
                    if cos { prop_assert!(dm.values[[i, j]] <= 1.0); }
                    if i != j {
                        let direct = metric.dissim(x.row(i), x.row(j)).unwrap();
                        prop_assert_eq!(dm.values[[i, j]].to_bits(), direct.to_bits());
                    }
                }
            }
        }

        #[test]
        fn euclidean_triangle_inequality(x in batch()) {
            let dm = pairwise(x.view(), Metric::euclidean()).unwrap().values;
            let b = x.nrows();
            for i in 0..b { for j in 0..b { for k in 0..b {
                prop_assert!(dm[[i, k]] <= dm[[i, j]] + dm[[j, k]] + 1e-12);
            }}}
        }

        #[test]
        fn euclidean_matches_componentwise(u in proptest::collection::vec(-10.0f64..10.0, 3),
                                           v in proptest::collection::vec(-10.0f64..10.0, 3)) {
            let oracle = ((u[0]-v[0]).powi(2) + (u[1]-v[1]).powi(2) + (u[2]-v[2]).powi(2)).sqrt();
            let got = euclidean(Array1::from(u).view(), Array1::from(v).view()).unwrap();
            prop_assert!((got - oracle).abs() <= 1e-12 * oracle.max(1.0));
        }

        #[test]
        fn cosine_scale_invariant(u in proptest::collection::vec(0.1f64..5.0, 4),
                                  v in proptest::collection::vec(-5.0f64..5.0, 4)) {
            let u = Array1::from(u);
            let v = Array1::from(v);
            let base = cosine_dissim(u.view(), v.view()).unwrap();
            for alpha in [0.1, 10.0] {
                let su = &u * alpha;
                let sv = &v * alpha;
                prop_assert!((cosine_dissim(su.view(), v.view()).unwrap() - base).abs() <= 1e-12);
                prop_assert!((cosine_dissim(u.view(), sv.view()).unwrap() - base).abs() <= 1e-12);
            }
        }
    }
}
