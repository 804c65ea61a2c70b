//! Static scatter snapshots of a configuration transfer.
//!
//! The canvas is 800x400: teacher panel on the left, student on the right,
//! one gray line from each teacher point to its student counterpart.
//! Teachers with more than two dimensions are projected orthographically
//! onto their first two principal axes.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array2, ArrayView2};
use pct_core::datasets::PointSet;

pub const WIDTH: f64 = 800.0;
pub const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 20.0;
const RADIUS: f64 = 3.0;

/// Colors by label, cycled; unlabeled points take the first.
pub const PALETTE: [&str; 8] =
    ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

/// Centered coordinates on the first two principal axes.
///
/// Axes are ordered by decreasing variance and signed so that the largest
/// loading of each axis is positive, which makes the projection deterministic.
pub fn pca_2d(x: ArrayView2<f64>) -> Array2<f64> {
    let (n, d) = x.dim();
    let mean = x.mean_axis(ndarray::Axis(0)).expect("non-empty");
    let centered = &x - &mean;
    let m = DMatrix::from_fn(n, d, |i, j| centered[[i, j]]);
    let cov = m.transpose() * &m;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut out = Array2::zeros((n, 2));
    for (slot, &axis) in order.iter().take(2).enumerate() {
        let v = eig.eigenvectors.column(axis);
        let lead = v.iter().copied().max_by(|a, b| a.abs().total_cmp(&b.abs())).unwrap_or(1.0);
        let sign = if lead < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            out[[i, slot]] = sign * (0..d).map(|j| centered[[i, j]] * v[j]).sum::<f64>();
        }
    }
    out
}

/// Six significant digits, shortest form.
fn num(v: f64) -> String {
    let rounded: f64 = format!("{v:.5e}").parse().expect("formatted float parses");
    if rounded == 0.0 {
        "0".to_string()
    } else {
        rounded.to_string()
    }
}

/// Maps points into the square panel starting at `x0`, preserving aspect ratio.
fn fit(points: ArrayView2<f64>, x0: f64) -> Vec<(f64, f64)> {
    let size = HEIGHT - 2.0 * MARGIN;
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for r in points.rows() {
        for k in 0..2 {
            lo[k] = lo[k].min(r[k]);
            hi[k] = hi[k].max(r[k]);
        }
    }
    let span = (hi[0] - lo[0]).max(hi[1] - lo[1]);
    let scale = if span > 0.0 { size / span } else { 0.0 };
    let offset = [(size - scale * (hi[0] - lo[0])) / 2.0, (size - scale * (hi[1] - lo[1])) / 2.0];
    points
        .rows()
        .into_iter()
        .map(|r| {
            let x = x0 + MARGIN + offset[0] + scale * (r[0] - lo[0]);
            // SVG y grows downwards.
            let y = HEIGHT - MARGIN - offset[1] - scale * (r[1] - lo[1]);
            (x, y)
        })
        .collect()
}

fn plane(ps: &PointSet, role: &str) -> Result<Array2<f64>, String> {
    match ps.dim() {
        2 => Ok(ps.points.clone()),
        d if d > 2 => Ok(pca_2d(ps.points.view())),
        d => Err(format!("{role} points must have at least 2 dimensions, got {d}")),
    }
}

pub fn render_svg(teacher: &PointSet, student: &PointSet, epoch: usize) -> Result<String, String> {
    if teacher.len() != student.len() {
        return Err(format!("teacher has {} points, student {}", teacher.len(), student.len()));
    }
    if student.dim() != 2 {
        return Err(format!("student points must be 2D, got {}", student.dim()));
    }
    let left = fit(plane(teacher, "teacher")?.view(), 0.0);
    let right = fit(student.points.view(), HEIGHT);
    let color = |i: usize| {
        let label = teacher.labels.as_ref().map_or(0, |l| l[i]);
        PALETTE[label % PALETTE.len()]
    };

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#,
        w = WIDTH,
        h = HEIGHT
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(s, r#"<line x1="{HEIGHT}" y1="0" x2="{HEIGHT}" y2="{HEIGHT}" stroke="black"/>"#);
    let _ = writeln!(s, r#"<text x="10" y="15" font-size="12">teacher</text>"#);
    let _ = writeln!(s, r#"<text x="{}" y="15" font-size="12">student, epoch {epoch}</text>"#, HEIGHT + 10.0);
    let _ = writeln!(s, r#"<g stroke="gray" stroke-opacity="0.2">"#);
    for (a, b) in left.iter().zip(&right) {
        let _ = writeln!(s, r#"<line x1="{}" y1="{}" x2="{}" y2="{}"/>"#, num(a.0), num(a.1), num(b.0), num(b.1));
    }
    s.push_str("</g>\n<g>\n");
    for (i, p) in left.iter().chain(&right).enumerate() {
        let _ = writeln!(
            s,
            r#"<circle cx="{}" cy="{}" r="{RADIUS}" fill="{}"/>"#,
            num(p.0),
            num(p.1),
            color(i % left.len())
        );
    }
    s.push_str("</g>\n</svg>\n");
    Ok(s)
}

pub fn emit_svg(teacher: &PointSet, student: &PointSet, epoch: usize, path: &Path) -> Result<(), String> {
    let svg = render_svg(teacher, student, epoch)?;
    std::fs::write(path, svg).map_err(|e| format!("{}: {e}", path.display()))
}
