//! Hard ranks, sigmoid soft ranks and empirical cumulative functions.
//!
//! All operations act row by row on a matrix whose row `i` holds the
//! dissimilarities `d_ij` from reference point `i`. Self terms (`k = j` and
//! the diagonal column) are included everywhere, so a hard rank is
//! `r(d_ij) = #{k : d_ik <= d_ij}` and a soft rank is
//!
//! ```text
//! r~(d_ij) = sum_k sigmoid((d_ij - d_ik) / tau)
//! ```
//!
//! The `k = j` term contributes `sigmoid(0) = 0.5` to every soft rank.

use ndarray::{Array2, ArrayView1, ArrayView2};

use crate::error::{invalid, Error, Result};

/// Beyond this `|z|` the sigmoid is returned as exactly 0 or 1 (error below 5e-18).
pub const SIGMOID_SATURATION: f64 = 40.0;

/// Logistic sigmoid, evaluated without overflow for any finite `z`.
#[inline]
pub fn sigmoid(z: f64) -> f64 {
    let a = z.abs();
    let e = if a > SIGMOID_SATURATION { 0.0 } else { (-a).exp() };
    if z >= 0.0 {
        1.0 / (1.0 + e)
    } else {
        e / (1.0 + e)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RankConfig {
    pub tau: f64,
    /// Always true: the self term is part of every rank.
    pub include_diagonal: bool,
}

impl RankConfig {
    pub fn new(tau: f64) -> Result<Self> {
        if !(tau > 0.0) || tau.is_nan() {
            return Err(invalid(format!("temperature must be positive, got {tau}")));
        }
        Ok(Self { tau, include_diagonal: true })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RankMode {
    Hard,
    Soft { tau: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct RankMatrix {
    pub values: Array2<f64>,
    pub mode: RankMode,
}

/// Normalised hard ranks: entry `(i, j)` is the fraction of the row at most `d_ij`.
#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalCdfMatrix {
    pub values: Array2<f64>,
}

impl EmpiricalCdfMatrix {
    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

fn check_square(d: ArrayView2<f64>) -> Result<usize> {
    let (r, c) = d.dim();
    if r != c {
        return Err(crate::error::shape("square matrix", format!("{r}x{c}")));
    }
    if r < 2 {
        return Err(invalid(format!("ranking needs B >= 2, got {r}")));
    }
    Ok(r)
}

/// Hard ranks of one row: `out[j] = #{k : row[k] <= row[j]}`.
pub fn hard_rank_row(row: ArrayView1<f64>, out: &mut [f64]) {
    let mut sorted: Vec<f64> = row.to_vec();
    sorted.sort_by(f64::total_cmp);
    for (o, &v) in out.iter_mut().zip(row.iter()) {
        *o = sorted.partition_point(|&s| s <= v) as f64;
    }
}

/// Max-rank convention on ties: equal values share the larger rank.
pub fn hard_ranks(d: ArrayView2<f64>) -> Result<RankMatrix> {
    let b = check_square(d)?;
    let mut values = Array2::zeros((b, b));
    let mut buf = vec![0.0; b];
    for (i, row) in d.rows().into_iter().enumerate() {
        hard_rank_row(row, &mut buf);
        values.row_mut(i).iter_mut().zip(&buf).for_each(|(v, &r)| *v = r);
    }
    Ok(RankMatrix { values, mode: RankMode::Hard })
}

/// Largest row spread `(max - min) / tau` handled by the exponential form.
const EXP_SPREAD_LIMIT: f64 = 1400.0;

/// Fills `out[k] = exp((row[k] - mid) / tau)` with `mid` the midpoint of the
/// row's range. Returns `false`, leaving `out` unspecified, when the spread
/// would push an exponent outside the normal floating-point range.
fn centred_exponentials(row: &[f64], tau: f64, out: &mut [f64]) -> bool {
    let (lo, hi) = row.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let inv_tau = 1.0 / tau;
    if !((hi - lo) * inv_tau <= EXP_SPREAD_LIMIT) {
        return false;
    }
    let mid = 0.5 * (lo + hi);
    out.iter_mut().zip(row).for_each(|(e, &v)| *e = ((v - mid) * inv_tau).exp());
    true
}

/// Soft ranks of one row at temperature `tau`.
///
/// Each unordered pair `(j, k)` is evaluated once. With `E_k = exp(d_k / tau)`
/// (shifted for range), `sigmoid((d_j - d_k) / tau) = E_j / (E_j + E_k)` and
/// the mirrored term is `E_k / (E_j + E_k)`, so a row needs only `B`
/// exponentials. Rows too wide for that fall back to direct sigmoids.
pub fn soft_rank_row(row: &[f64], tau: f64, out: &mut [f64]) {
    let mut scratch = vec![0.0; row.len()];
    soft_rank_row_with(row, tau, out, &mut scratch, None);
}

/// [`soft_rank_row`] with caller-provided scratch (length `B`). When
/// `slopes` is given (length `B(B-1)/2`) it receives `sigmoid'(z_jk)` for
/// `j < k`, packed row-major.
pub(crate) fn soft_rank_row_with(
    row: &[f64],
    tau: f64,
    out: &mut [f64],
    scratch: &mut [f64],
    mut slopes: Option<&mut [f64]>,
) {
    let b = row.len();
    out.iter_mut().for_each(|o| *o = 0.5);
    let mut p = 0;
    if centred_exponentials(row, tau, scratch) {
        let e = &scratch[..b];
        for j in 0..b {
            let ej = e[j];
            let (head, tail) = out.split_at_mut(j + 1);
            let mut acc = 0.0;
            match slopes.as_deref_mut() {
                Some(w) => {
                    let w = &mut w[p..p + tail.len()];
                    for ((ek, o), wv) in e[j + 1..].iter().zip(tail.iter_mut()).zip(w.iter_mut()) {
                        let inv = 1.0 / (ej + ek);
                        let (v, u) = (ej * inv, ek * inv);
                        acc += v;
                        *o += u;
                        *wv = v * u;
                    }
                }
                None => {
                    for (ek, o) in e[j + 1..].iter().zip(tail.iter_mut()) {
                        let inv = 1.0 / (ej + ek);
                        acc += ej * inv;
                        *o += ek * inv;
                    }
                }
            }
            p += b - j - 1;
            head[j] += acc;
        }
    } else {
        let inv_tau = 1.0 / tau;
        for j in 0..b {
            let mut acc = 0.0;
            for k in j + 1..b {
                let z = (row[j] - row[k]) * inv_tau;
                let (v, u) = (sigmoid(z), sigmoid(-z));
                acc += v;
                out[k] += u;
                if let Some(w) = slopes.as_deref_mut() {
                    w[p] = v * u;
                }
                p += 1;
            }
            out[j] += acc;
        }
    }
}

pub fn soft_ranks(d: ArrayView2<f64>, cfg: RankConfig) -> Result<RankMatrix> {
    let b = check_square(d)?;
    RankConfig::new(cfg.tau)?;
    let mut values = Array2::zeros((b, b));
    let mut row = vec![0.0; b];
    let mut out = vec![0.0; b];
    for i in 0..b {
        row.iter_mut().zip(d.row(i)).for_each(|(r, &v)| *r = v);
        soft_rank_row(&row, cfg.tau, &mut out);
        values.row_mut(i).iter_mut().zip(&out).for_each(|(v, &r)| *v = r);
    }
    Ok(RankMatrix { values, mode: RankMode::Soft { tau: cfg.tau } })
}

/// Smallest gap `|d_ij - d_ik|` over all rows and column pairs `j != k`.
///
/// Fails with [`Error::Ties`] when some row holds two equal values.
pub fn min_gap(d: ArrayView2<f64>) -> Result<f64> {
    check_square(d)?;
    let mut gap = f64::INFINITY;
    for (i, row) in d.rows().into_iter().enumerate() {
        let mut idx: Vec<usize> = (0..row.len()).collect();
        idx.sort_by(|&a, &b| row[a].total_cmp(&row[b]));
        for w in idx.windows(2) {
            let g = row[w[1]] - row[w[0]];
            if g == 0.0 {
                return Err(Error::Ties { row: i, first: w[0].min(w[1]), second: w[0].max(w[1]) });
            }
            gap = gap.min(g);
        }
    }
    Ok(gap)
}

/// Largest `|soft_rank - (hard_rank - 0.5)|` at temperature `tau`.
///
/// The `-0.5` accounts for the self term, which is `sigmoid(0) = 0.5` in the
/// soft rank but a full count of 1 in the hard rank. Tied inputs are refused.
pub fn soft_rank_limit_check(d: ArrayView2<f64>, tau: f64) -> Result<f64> {
    min_gap(d)?;
    let hard = hard_ranks(d)?;
    let soft = soft_ranks(d, RankConfig::new(tau)?)?;
    Ok(soft
        .values
        .iter()
        .zip(hard.values.iter())
        .map(|(s, h)| (s - (h - 0.5)).abs())
        .fold(0.0, f64::max))
}

pub fn empirical_cdf(d: ArrayView2<f64>) -> Result<EmpiricalCdfMatrix> {
    let ranks = hard_ranks(d)?;
    let b = d.nrows() as f64;
    Ok(EmpiricalCdfMatrix { values: ranks.values.mapv(|r| r / b) })
}
