//! Synthetic point sets and their text file format.
//!
//! Generators are pure functions of their arguments: the same seed always
//! produces the same bytes. See [`crate::rng`] for how streams are derived.
//!
//! File format (UTF-8, LF line endings):
//!
//! ```text
//! # pointset name=<tag> n=<N> d=<D> labeled=<0|1> seed=<u64>
//! <x_1> <x_2> ... <x_D>[\t<label>]
//! ```
//!
//! Coordinates are written with 17 significant digits so a save/load round
//! trip is bit-exact.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::{invalid, Error, Result};
use crate::rng::{stream, stream_rng};

/// A finite collection of points with optional class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct PointSet {
    pub points: Array2<f64>,
    pub labels: Option<Vec<usize>>,
    pub seed: u64,
    pub name: String,
}

impl PointSet {
    pub fn new(
        points: Array2<f64>,
        labels: Option<Vec<usize>>,
        seed: u64,
        name: impl Into<String>,
    ) -> Result<Self> {
        let name = name.into();
        let (n, d) = points.dim();
        if n == 0 || d == 0 {
            return Err(invalid(format!("point set must be non-empty, got {n}x{d}")));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(invalid("point set contains non-finite coordinates"));
        }
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(invalid(format!("{} labels for {n} points", l.len())));
            }
        }
        if name.is_empty() || name.chars().any(char::is_whitespace) {
            return Err(invalid(format!("name {name:?} must be non-empty without whitespace")));
        }
        Ok(Self { points, labels, seed, name })
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    /// Rows `indices` (in that order) as a new point set with the same metadata.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let points = self.points.select(Axis(0), indices);
        let labels = self
            .labels
            .as_ref()
            .map(|l| indices.iter().map(|&i| l[i]).collect());
        Self::new(points, labels, self.seed, self.name.clone())
    }
}

/// A disjoint train/test partition of a point set.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitPointSet {
    pub train: PointSet,
    pub test: PointSet,
    pub split_seed: u64,
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
}

/// Two interleaved half circles of radius 1.
///
/// The upper moon is `(cos t, sin t)` and the lower moon `(1 - cos t, 0.5 - sin t)`
/// for `t` evenly spaced on `[0, pi]`. The first `n / 2` points are class 0,
/// the rest class 1. Gaussian noise of std `noise` is added to every
/// coordinate, x before y, point by point.
pub fn gen_two_moons(n: usize, noise: f64, seed: u64) -> Result<PointSet> {
    if n < 2 {
        return Err(invalid(format!("two moons needs n >= 2, got {n}")));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(invalid(format!("noise must be finite and >= 0, got {noise}")));
    }
    let n_upper = n / 2;
    let n_lower = n - n_upper;
    let mut rng = stream_rng(seed, stream::MOONS_NOISE);
    let mut points = Array2::zeros((n, 2));
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let (label, k, m) = if i < n_upper { (0, i, n_upper) } else { (1, i - n_upper, n_lower) };
        let t = if m > 1 { std::f64::consts::PI * k as f64 / (m - 1) as f64 } else { 0.0 };
        let (x, y) = if label == 0 { (t.cos(), t.sin()) } else { (1.0 - t.cos(), 0.5 - t.sin()) };
        let ex: f64 = rng.sample(StandardNormal);
        let ey: f64 = rng.sample(StandardNormal);
        points[[i, 0]] = x + noise * ex;
        points[[i, 1]] = y + noise * ey;
        labels.push(label);
    }
    PointSet::new(points, Some(labels), seed, "two_moons")
}

/// `n` points spread round-robin over `k` isotropic Gaussian blobs.
///
/// Point `i` belongs to cluster `i % k`. Centers are drawn uniformly from
/// `[-centers_scale, centers_scale]^dims` on their own stream, before any noise.
pub fn gen_gaussian_clusters(
    k: usize,
    n: usize,
    dims: usize,
    spread: f64,
    centers_scale: f64,
    seed: u64,
) -> Result<PointSet> {
    if k == 0 || n < k {
        return Err(invalid(format!("need 1 <= k <= n, got k={k}, n={n}")));
    }
    if dims != 2 && dims != 3 {
        return Err(invalid(format!("dims must be 2 or 3, got {dims}")));
    }
    if !(spread >= 0.0 && spread.is_finite()) || !(centers_scale > 0.0 && centers_scale.is_finite()) {
        return Err(invalid("spread must be >= 0 and centers_scale > 0"));
    }
    let mut center_rng = stream_rng(seed, stream::CLUSTER_CENTERS);
    let centers = Array2::from_shape_fn((k, dims), |_| {
        center_rng.random_range(-centers_scale..=centers_scale)
    });
    let mut noise_rng = stream_rng(seed, stream::CLUSTER_NOISE);
    let mut points = Array2::zeros((n, dims));
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % k;
        for d in 0..dims {
            let e: f64 = noise_rng.sample(StandardNormal);
            points[[i, d]] = centers[[c, d]] + spread * e;
        }
        labels.push(c);
    }
    PointSet::new(points, Some(labels), seed, format!("gaussian_{k}x{dims}d"))
}

/// Uniformly random train/test partition; `round(train_fraction * N)` points go to train.
pub fn split(ps: &PointSet, train_fraction: f64, seed: u64) -> Result<SplitPointSet> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(invalid(format!("train fraction must lie in (0, 1), got {train_fraction}")));
    }
    let n = ps.len();
    let n_train = (train_fraction * n as f64).round() as usize;
    if n_train == 0 || n_train >= n {
        return Err(invalid(format!(
            "fraction {train_fraction} of {n} points leaves an empty side"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut stream_rng(seed, stream::SPLIT));
    let (tr, te) = perm.split_at(n_train);
    Ok(SplitPointSet {
        train: ps.select(tr)?,
        test: ps.select(te)?,
        split_seed: seed,
        train_indices: tr.to_vec(),
        test_indices: te.to_vec(),
    })
}

/// Renders a point set in the text format described in the module docs.
pub fn format_pointset(ps: &PointSet) -> String {
    let mut out = format!(
        "# pointset name={} n={} d={} labeled={} seed={}\n",
        ps.name,
        ps.len(),
        ps.dim(),
        u8::from(ps.labels.is_some()),
        ps.seed
    );
    for (i, row) in ps.points.rows().into_iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                out.push(' ');
            }
            let _ = write!(out, "{v:.16e}");
        }
        if let Some(l) = &ps.labels {
            let _ = write!(out, "\t{}", l[i]);
        }
        out.push('\n');
    }
    out
}

pub fn save_pointset(ps: &PointSet, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, format_pointset(ps))?;
    Ok(())
}

pub fn load_pointset(path: impl AsRef<Path>) -> Result<PointSet> {
    parse_pointset(&std::fs::read_to_string(path)?)
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse { line, message: message.into() }
}

pub fn parse_pointset(text: &str) -> Result<PointSet> {
    if text.trim().is_empty() {
        return Err(invalid("empty point set file (N >= 1 required)"));
    }
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, header) = lines.next().expect("non-empty text has a first line");
    let fields = header
        .strip_prefix("# pointset ")
        .ok_or_else(|| parse_err(1, "missing '# pointset' header"))?;
    let (mut name, mut n, mut d, mut labeled, mut seed) = (None, None, None, None, None);
    for field in fields.split_whitespace() {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| parse_err(1, format!("malformed header field {field:?}")))?;
        let num = |v: &str| v.parse::<u64>().map_err(|e| parse_err(1, format!("{key}: {e}")));
        match key {
            "name" => name = Some(value.to_string()),
            "n" => n = Some(num(value)? as usize),
            "d" => d = Some(num(value)? as usize),
            "labeled" => labeled = Some(num(value)? == 1),
            "seed" => seed = Some(num(value)?),
            _ => return Err(parse_err(1, format!("unknown header field {key:?}"))),
        }
    }
    let missing = |k: &str| parse_err(1, format!("header lacks {k}"));
    let name = name.ok_or_else(|| missing("name"))?;
    let n = n.ok_or_else(|| missing("n"))?;
    let d = d.ok_or_else(|| missing("d"))?;
    let labeled = labeled.ok_or_else(|| missing("labeled"))?;
    let seed = seed.ok_or_else(|| missing("seed"))?;
    if n == 0 || d == 0 {
        return Err(invalid(format!("header declares {n}x{d} points (N, D >= 1 required)")));
    }

    let mut coords = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(if labeled { n } else { 0 });
    let mut rows = 0;
    for (lineno, line) in lines {
        if line.is_empty() {
            continue;
        }
        rows += 1;
        if rows > n {
            return Err(parse_err(lineno, format!("more than the declared {n} rows")));
        }
        let (values, label) = match line.split_once('\t') {
            Some((v, l)) => (v, Some(l)),
            None => (line, None),
        };
        let row: Vec<&str> = values.split(' ').collect();
        if row.len() != d {
            return Err(parse_err(
                lineno,
                format!("row {rows} has {} values, expected {d}", row.len()),
            ));
        }
        for tok in row {
            coords.push(
                tok.parse::<f64>()
                    .map_err(|e| parse_err(lineno, format!("row {rows}: {tok:?}: {e}")))?,
            );
        }
        match (labeled, label) {
            (true, Some(l)) => labels.push(
                l.trim()
                    .parse::<usize>()
                    .map_err(|e| parse_err(lineno, format!("row {rows}: label {l:?}: {e}")))?,
            ),
            (false, None) => {}
            (true, None) => return Err(parse_err(lineno, format!("row {rows} lacks a label"))),
            (false, Some(_)) => {
                return Err(parse_err(lineno, format!("row {rows} has a label but file is unlabeled")))
            }
        }
    }
    if rows != n {
        return Err(parse_err(text.lines().count(), format!("expected {n} rows, found {rows}")));
    }
    let points = Array2::from_shape_vec((n, d), coords).expect("row arity checked");
    PointSet::new(points, labeled.then_some(labels), seed, name)
}
