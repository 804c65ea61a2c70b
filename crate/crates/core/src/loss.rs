//! The soft-rank coherence loss and its analytic gradients.
//!
//! For a batch of `B` points with teacher dissimilarities `t` and student
//! dissimilarities `s`, let `Rt`, `Rs` be their soft ranks at temperatures
//! `tau_teacher` and `tau_student`. The loss is
//!
//! ```text
//! L = (1 / B^3) * sum_i || Rs_i - Rt_i ||^2
//! ```
//!
//! The teacher side is constant. With `g_ij = 2 (Rs_ij - Rt_ij) / B^3` and
//! `w_jk = sigmoid'((s_ij - s_ik) / tau) / tau`, the derivative with respect
//! to a student entry is
//!
//! ```text
//! dL/ds_ij = sum_{k != j} w_jk (g_ij - g_ik)
//! ```
//!
//! which is accumulated pair by pair, reusing the sigmoid slopes computed
//! alongside the ranks.

use ndarray::{Array2, ArrayView2};

use crate::error::{invalid, shape, Result};
use crate::ranking::{soft_rank_row_with, RankMatrix, RankMode};

/// Denominator floor for distances and norms in the chain rule.
pub const GUARD: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    pub tau_teacher: f64,
    pub tau_student: f64,
    /// Multiplier applied when the loss is combined with other objectives.
    pub weight: f64,
}

impl LossConfig {
    pub fn new(tau_teacher: f64, tau_student: f64, weight: f64) -> Result<Self> {
        let cfg = Self { tau_teacher, tau_student, weight };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Same temperature on both sides, unit weight.
    pub fn symmetric(tau: f64) -> Result<Self> {
        Self::new(tau, tau, 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |t: f64| t > 0.0 && t.is_finite();
        if !ok(self.tau_teacher) || !ok(self.tau_student) {
            return Err(invalid(format!(
                "temperatures must be positive, got teacher {} student {}",
                self.tau_teacher, self.tau_student
            )));
        }
        if !(self.weight >= 0.0 && self.weight.is_finite()) {
            return Err(invalid(format!("weight must be >= 0, got {}", self.weight)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossResult {
    pub value: f64,
    /// `dL/d s_im` for every student entry, diagonal included.
    pub grad_student_dissim: Array2<f64>,
    pub teacher_ranks: RankMatrix,
    pub student_ranks: RankMatrix,
}

pub fn coherence_loss(
    dm_teacher: ArrayView2<f64>,
    dm_student: ArrayView2<f64>,
    cfg: &LossConfig,
) -> Result<LossResult> {
    cfg.validate()?;
    let (b, c) = dm_teacher.dim();
    if dm_student.dim() != (b, c) {
        return Err(shape(format!("{b}x{c}"), format!("{:?}", dm_student.dim())));
    }
    if b != c {
        return Err(shape("square matrix", format!("{b}x{c}")));
    }
    if b < 2 {
        return Err(invalid(format!("loss needs a batch of at least 2, got {b}")));
    }

    let scale = 1.0 / (b as f64).powi(3);
    let inv_tau = 1.0 / cfg.tau_student;
    let mut teacher_ranks = Array2::zeros((b, b));
    let mut student_ranks = Array2::zeros((b, b));
    let mut grad = Array2::zeros((b, b));
    let mut t_row = vec![0.0; b];
    let mut s_row = vec![0.0; b];
    let mut rt = vec![0.0; b];
    let mut rs = vec![0.0; b];
    let mut g = vec![0.0; b];
    let mut gr = vec![0.0; b];
    let mut scratch = vec![0.0; b];
    // sigmoid' for the current student row's pairs j < k, packed row-major.
    let mut slopes = vec![0.0; b * (b - 1) / 2];
    let mut total = 0.0;

    for i in 0..b {
        t_row.iter_mut().zip(dm_teacher.row(i)).for_each(|(d, &v)| *d = v);
        s_row.iter_mut().zip(dm_student.row(i)).for_each(|(d, &v)| *d = v);
        soft_rank_row_with(&t_row, cfg.tau_teacher, &mut rt, &mut scratch, None);
        soft_rank_row_with(&s_row, cfg.tau_student, &mut rs, &mut scratch, Some(&mut slopes));

        let mut row_sq = 0.0;
        for j in 0..b {
            let diff = rs[j] - rt[j];
            row_sq += diff * diff;
            g[j] = 2.0 * scale * inv_tau * diff;
        }
        total += row_sq;

        gr.iter_mut().for_each(|x| *x = 0.0);
        let mut p = 0;
        for j in 0..b {
            let gj = g[j];
            let (head, tail) = gr.split_at_mut(j + 1);
            let mut acc = 0.0;
            for ((w, gk), grk) in slopes[p..p + tail.len()].iter().zip(&g[j + 1..]).zip(tail.iter_mut()) {
                let v = w * (gj - gk);
                acc += v;
                *grk -= v;
            }
            p += b - j - 1;
            head[j] += acc;
        }

        teacher_ranks.row_mut(i).iter_mut().zip(&rt).for_each(|(d, &v)| *d = v);
        student_ranks.row_mut(i).iter_mut().zip(&rs).for_each(|(d, &v)| *d = v);
        grad.row_mut(i).iter_mut().zip(&gr).for_each(|(d, &v)| *d = v);
    }

    Ok(LossResult {
        value: total * scale,
        grad_student_dissim: grad,
        teacher_ranks: RankMatrix { values: teacher_ranks, mode: RankMode::Soft { tau: cfg.tau_teacher } },
        student_ranks: RankMatrix { values: student_ranks, mode: RankMode::Soft { tau: cfg.tau_student } },
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoordGradient {
    pub grad: Array2<f64>,
    /// Number of off-diagonal pairs whose distance fell below [`GUARD`].
    pub coincident_pairs: usize,
}

/// Chains the loss gradient through Euclidean distances onto point coordinates.
///
/// `points` must be the batch the student matrix was built from.
pub fn grad_wrt_coords(lr: &LossResult, points: ArrayView2<f64>) -> Result<CoordGradient> {
    let gd = &lr.grad_student_dissim;
    let (b, dim) = points.dim();
    if gd.nrows() != b {
        return Err(shape(format!("{} points", gd.nrows()), format!("{b} points")));
    }
    let mut grad = Array2::zeros((b, dim));
    let mut coincident_pairs = 0;
    let mut delta = vec![0.0; dim];
    for i in 0..b {
        for m in i + 1..b {
            let mut sq = 0.0;
            for (k, dk) in delta.iter_mut().enumerate() {
                *dk = points[[i, k]] - points[[m, k]];
                sq += *dk * *dk;
            }
            let dist = sq.sqrt();
            if dist < GUARD {
                coincident_pairs += 1;
            }
            let coef = (gd[[i, m]] + gd[[m, i]]) / dist.max(GUARD);
            for (k, &dk) in delta.iter().enumerate() {
                grad[[i, k]] += coef * dk;
                grad[[m, k]] -= coef * dk;
            }
        }
    }
    Ok(CoordGradient { grad, coincident_pairs })
}

/// Chains the loss gradient through cosine dissimilarities onto feature rows.
///
/// Norms are floored at `eps`, matching [`crate::metric::Metric::cosine`].
pub fn grad_wrt_features(lr: &LossResult, feats: ArrayView2<f64>, eps: f64) -> Result<Array2<f64>> {
    let gd = &lr.grad_student_dissim;
    let (b, dim) = feats.dim();
    if gd.nrows() != b {
        return Err(shape(format!("{} rows", gd.nrows()), format!("{b} rows")));
    }
    let norms: Vec<f64> = feats.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
    let mut grad = Array2::zeros((b, dim));
    for i in 0..b {
        let ni = norms[i].max(eps);
        let ui = feats.row(i);
        for m in i + 1..b {
            let nm = norms[m].max(eps);
            let um = feats.row(m);
            let dot = ui.dot(&um);
            let coef = gd[[i, m]] + gd[[m, i]];
            // d = (1 - dot / (ni nm)) / 2; the norm term only moves when unclamped.
            let a = -0.5 * coef / (ni * nm);
            let ci = if norms[i] > eps { 0.5 * coef * dot / (ni.powi(3) * nm) } else { 0.0 };
            let cm = if norms[m] > eps { 0.5 * coef * dot / (nm.powi(3) * ni) } else { 0.0 };
            for k in 0..dim {
                grad[[i, k]] += a * um[k] + ci * ui[k];
                grad[[m, k]] += a * ui[k] + cm * um[k];
            }
        }
    }
    Ok(grad)
}
