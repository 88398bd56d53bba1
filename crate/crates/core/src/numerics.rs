//! Dense matrix utilities, pairwise distances, RBF kernels with adaptive
//! length scales, quantiles, and the small linear-algebra kernels the score
//! estimators need.
//!
//! Kernel convention used throughout the crate:
//! `k(a, b) = exp(-|a - b|^2 / (2 sigma^2))`, with `sigma` either fixed, the
//! median of unsquared pairwise distances, or replaced by per-point inverse
//! scales found by a perplexity search.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major dense matrix of `f64`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::Dimension(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Mat { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Mat { rows, cols, data }
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::Dimension(format!(
                    "row {i} has {} columns, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Mat { rows: rows.len(), cols, data })
    }

    /// Column vector.
    pub fn column(values: &[f64]) -> Self {
        Mat { rows: values.len(), cols: 1, data: values.to_vec() }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols;
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact panics on zero chunk size
        let c = self.cols.max(1);
        self.data.chunks_exact(c).take(self.rows)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Mat {
        Mat::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    /// `self * other`.
    pub fn matmul(&self, other: &Mat) -> Result<Mat> {
        if self.cols != other.rows {
            return Err(Error::Dimension(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let a_row = self.row(i);
            let o_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, &b) in o_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self^T * other` without materializing the transpose.
    pub fn t_matmul(&self, other: &Mat) -> Result<Mat> {
        if self.rows != other.rows {
            return Err(Error::Dimension(format!(
                "cannot multiply ({}x{})^T by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Mat::zeros(self.cols, other.cols);
        for n in 0..self.rows {
            let a_row = self.row(n);
            let b_row = other.row(n);
            for (i, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let o_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (o, &b) in o_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// Rows selected by index, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Mat {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Mat { rows: idx.len(), cols: self.cols, data }
    }

    /// Contiguous column block `[start, end)`.
    pub fn select_cols(&self, start: usize, end: usize) -> Mat {
        Mat::from_fn(self.rows, end - start, |i, j| self[(i, start + j)])
    }

    /// Writes `block` into columns `[start, start + block.cols)`.
    pub fn set_cols(&mut self, start: usize, block: &Mat) {
        for i in 0..self.rows {
            for j in 0..block.cols {
                self[(i, start + j)] = block[(i, j)];
            }
        }
    }

    pub fn hstack(a: &Mat, b: &Mat) -> Result<Mat> {
        if a.rows != b.rows {
            return Err(Error::Dimension(format!(
                "hstack of {} and {} rows",
                a.rows, b.rows
            )));
        }
        Ok(Mat::from_fn(a.rows, a.cols + b.cols, |i, j| {
            if j < a.cols {
                a[(i, j)]
            } else {
                b[(i, j - a.cols)]
            }
        }))
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    pub fn scaled(&self, s: f64) -> Mat {
        let mut m = self.clone();
        m.scale(s);
        m
    }

    /// `self += s * other`.
    pub fn add_scaled(&mut self, other: &Mat, s: f64) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Dimension(format!(
                "cannot add {:?} to {:?}",
                other.shape(),
                self.shape()
            )));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
        Ok(())
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &Mat) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        if self.rows != self.cols {
            return false;
        }
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                let (a, b) = (self[(i, j)], self[(j, i)]);
                if (a - b).abs() > tol * a.abs().max(b.abs()).max(1.0) {
                    return false;
                }
            }
        }
        true
    }

    pub(crate) fn to_nalgebra(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }

    pub(crate) fn from_nalgebra(m: &DMatrix<f64>) -> Mat {
        Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
    }
}

impl std::ops::Index<(usize, usize)> for Mat {
    type Output = f64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Mat {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

#[inline]
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `out[i][j] = |A_i - B_j|^2`.
pub fn pairwise_sq_dists(a: &Mat, b: &Mat) -> Result<Mat> {
    if a.cols() != b.cols() {
        return Err(Error::Dimension(format!(
            "pairwise distances between {} and {} columns",
            a.cols(),
            b.cols()
        )));
    }
    let mut out = Mat::zeros(a.rows(), b.rows());
    for i in 0..a.rows() {
        let ai = a.row(i);
        for j in 0..b.rows() {
            out[(i, j)] = sq_dist(ai, b.row(j));
        }
    }
    Ok(out)
}

/// Median of the distinct-pair Euclidean distances of a batch.
///
/// If more than half of the pairs coincide (median zero) but not all do, the
/// median over the strictly positive distances is returned instead so the
/// result is always usable as a kernel length scale.
pub fn median_heuristic(points: &Mat) -> Result<f64> {
    let t = points.rows();
    if t < 2 {
        return Err(Error::InvalidArgument(format!(
            "median heuristic needs at least 2 points, got {t}"
        )));
    }
    let mut dists = Vec::with_capacity(t * (t - 1) / 2);
    for i in 0..t {
        for j in (i + 1)..t {
            dists.push(sq_dist(points.row(i), points.row(j)).sqrt());
        }
    }
    if dists.iter().all(|&d| d == 0.0) {
        return Err(Error::DegenerateBatch("all pairwise distances are zero".into()));
    }
    let med = quantile(&dists, 0.5)?;
    if med > 0.0 {
        return Ok(med);
    }
    let positive: Vec<f64> = dists.into_iter().filter(|&d| d > 0.0).collect();
    quantile(&positive, 0.5)
}

/// `exp(-d2 / (2 sigma^2))` elementwise.
pub fn rbf_kernel(d2: &Mat, sigma: f64) -> Result<Mat> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidArgument(format!("kernel length scale must be positive, got {sigma}")));
    }
    let two_s2 = 2.0 * sigma * sigma;
    let mut out = d2.clone();
    out.as_mut_slice().iter_mut().for_each(|v| *v = (-*v / two_s2).exp());
    Ok(out)
}

/// How kernel length scales are chosen for a batch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum LengthScalePolicy {
    Fixed { sigma: f64 },
    Median,
    /// Per-point scales matched to a neighbor-distribution perplexity.
    Perplexity { target: f64 },
}

impl Default for LengthScalePolicy {
    fn default() -> Self {
        LengthScalePolicy::Median
    }
}

impl LengthScalePolicy {
    pub fn validate(&self) -> Result<()> {
        match *self {
            LengthScalePolicy::Fixed { sigma } if !(sigma > 0.0) => Err(Error::Config(format!(
                "fixed length scale must be positive, got {sigma}"
            ))),
            LengthScalePolicy::Perplexity { target } if !(target > 1.0) => Err(Error::Config(
                format!("perplexity target must exceed 1, got {target}"),
            )),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for LengthScalePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LengthScalePolicy::Fixed { sigma } => write!(f, "fixed:{sigma}"),
            LengthScalePolicy::Median => write!(f, "median"),
            LengthScalePolicy::Perplexity { target } => write!(f, "perplexity:{target}"),
        }
    }
}

impl FromStr for LengthScalePolicy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let (kind, arg) = match s.split_once(':') {
            Some((k, a)) => (k, Some(a)),
            None => (s, None),
        };
        let num = |a: Option<&str>, default: Option<f64>| -> Result<f64> {
            match a {
                Some(a) => a
                    .parse::<f64>()
                    .map_err(|_| Error::Config(format!("bad length-scale argument '{a}'"))),
                None => default.ok_or_else(|| Error::Config(format!("'{kind}' needs a value"))),
            }
        };
        let policy = match kind {
            "median" => LengthScalePolicy::Median,
            "fixed" => LengthScalePolicy::Fixed { sigma: num(arg, None)? },
            "perplexity" | "tsne" => LengthScalePolicy::Perplexity {
                target: num(arg, Some(DEFAULT_PERPLEXITY))?,
            },
            other => return Err(Error::Config(format!("unknown length-scale policy '{other}'"))),
        };
        policy.validate()?;
        Ok(policy)
    }
}

impl TryFrom<String> for LengthScalePolicy {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<LengthScalePolicy> for String {
    fn from(v: LengthScalePolicy) -> String {
        v.to_string()
    }
}

/// Perplexity target used when the policy is given without a value.
pub const DEFAULT_PERPLEXITY: f64 = 10.0;

const PERPLEXITY_TOL: f64 = 1e-5;
const PERPLEXITY_MAX_STEPS: usize = 100;
const PERPLEXITY_MAX_BRACKET: usize = 50;

/// Outcome of the per-point inverse-scale search.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BetaSearch {
    pub beta: f64,
    pub perplexity: f64,
    pub steps: usize,
    pub converged: bool,
}

/// Perplexity (exp of the natural-log entropy) of `p_j ∝ exp(-beta d_j)`.
pub fn neighbor_perplexity(sq_dists: &[f64], beta: f64) -> f64 {
    let dmin = sq_dists.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut z = 0.0;
    let mut weighted = 0.0;
    for &d in sq_dists {
        let shifted = d - dmin;
        let w = (-beta * shifted).exp();
        z += w;
        weighted += w * shifted;
    }
    let entropy = beta * weighted / z + z.ln();
    entropy.exp()
}

/// Binary search for the inverse scale `beta` whose neighbor distribution over
/// `sq_dists` has the target perplexity.
///
/// Starts at `beta = 1`, doubles or halves until the target is bracketed (at
/// most 50 times), then bisects. Stops within `1e-5` of the target or after
/// 100 evaluations.
pub fn search_beta(sq_dists: &[f64], target: f64) -> BetaSearch {
    let mut beta = 1.0;
    let mut lo: Option<f64> = None;
    let mut hi: Option<f64> = None;
    let mut expansions = 0;
    let mut perp = neighbor_perplexity(sq_dists, beta);
    let mut steps = 1;
    loop {
        if (perp - target).abs() <= PERPLEXITY_TOL {
            return BetaSearch { beta, perplexity: perp, steps, converged: true };
        }
        if steps >= PERPLEXITY_MAX_STEPS {
            break;
        }
        if perp > target {
            // too spread out: sharpen
            lo = Some(beta);
            beta = match hi {
                Some(h) => 0.5 * (beta + h),
                None => {
                    if expansions >= PERPLEXITY_MAX_BRACKET {
                        break;
                    }
                    expansions += 1;
                    beta * 2.0
                }
            };
        } else {
            hi = Some(beta);
            beta = match lo {
                Some(l) => 0.5 * (beta + l),
                None => {
                    if expansions >= PERPLEXITY_MAX_BRACKET {
                        break;
                    }
                    expansions += 1;
                    beta * 0.5
                }
            };
        }
        perp = neighbor_perplexity(sq_dists, beta);
        steps += 1;
    }
    BetaSearch { beta, perplexity: perp, steps, converged: (perp - target).abs() <= PERPLEXITY_TOL }
}

/// Symmetric kernel entry built from two directed inverse scales: the
/// log-space average of `exp(-beta_i d)` and `exp(-beta_j d)`.
#[inline]
pub fn perplexity_entry(d2: f64, beta_i: f64, beta_j: f64) -> f64 {
    ((-beta_i * d2 + -beta_j * d2) / 2.0).exp()
}

/// Per-point inverse scales and the symmetrized kernel.
pub fn perplexity_kernel(points: &Mat, target: f64) -> Result<(Vec<f64>, Mat)> {
    let t = points.rows();
    if t < 2 {
        return Err(Error::InvalidArgument(format!(
            "perplexity kernel needs at least 2 points, got {t}"
        )));
    }
    if !(target > 1.0 && target < t as f64) {
        return Err(Error::InvalidArgument(format!(
            "perplexity target {target} outside (1, {t})"
        )));
    }
    let d2 = pairwise_sq_dists(points, points)?;
    let beta = perplexity_betas(&d2, target);
    let k = Mat::from_fn(t, t, |i, j| perplexity_entry(d2[(i, j)], beta[i], beta[j]));
    Ok((beta, k))
}

fn perplexity_betas(d2: &Mat, target: f64) -> Vec<f64> {
    let t = d2.rows();
    (0..t)
        .map(|i| {
            let others: Vec<f64> = (0..t).filter(|&j| j != i).map(|j| d2[(i, j)]).collect();
            search_beta(&others, target).beta
        })
        .collect()
}

/// Perplexity target actually used for a batch of `t` points: the requested
/// target clamped into the attainable range `(1, t - 1)`.
pub fn effective_perplexity(target: f64, t: usize) -> f64 {
    let upper = t as f64 - 1.0;
    if upper <= 1.5 {
        // two points: any target in (1, 2) gives the same kernel
        return 1.5;
    }
    target.min(upper - 0.5).max(1.0 + 1e-3)
}

/// Resolved kernel scale for a batch of training points.
#[derive(Clone, Debug, PartialEq)]
pub enum Bandwidth {
    Global { sigma: f64 },
    PerPoint { beta: Vec<f64> },
}

impl Bandwidth {
    /// Resolves a policy on a batch. Perplexity targets are clamped into the
    /// attainable range for the batch size.
    pub fn resolve(points: &Mat, policy: &LengthScalePolicy) -> Result<Self> {
        match *policy {
            LengthScalePolicy::Fixed { sigma } => {
                if !(sigma > 0.0) {
                    return Err(Error::InvalidArgument(format!("length scale {sigma} must be positive")));
                }
                Ok(Bandwidth::Global { sigma })
            }
            LengthScalePolicy::Median => Ok(Bandwidth::Global { sigma: median_heuristic(points)? }),
            LengthScalePolicy::Perplexity { target } => {
                let t = points.rows();
                if t < 2 {
                    return Err(Error::InvalidArgument("perplexity kernel needs at least 2 points".into()));
                }
                let d2 = pairwise_sq_dists(points, points)?;
                if d2.as_slice().iter().all(|&d| d == 0.0) {
                    return Err(Error::DegenerateBatch("all pairwise distances are zero".into()));
                }
                let beta = perplexity_betas(&d2, effective_perplexity(target, t));
                Ok(Bandwidth::PerPoint { beta })
            }
        }
    }

    /// Gram matrix between the training points from their squared distances.
    pub fn gram(&self, d2: &Mat) -> Mat {
        match self {
            Bandwidth::Global { sigma } => {
                let two_s2 = 2.0 * sigma * sigma;
                Mat::from_fn(d2.rows(), d2.cols(), |i, j| (-d2[(i, j)] / two_s2).exp())
            }
            Bandwidth::PerPoint { beta } => {
                Mat::from_fn(d2.rows(), d2.cols(), |i, j| perplexity_entry(d2[(i, j)], beta[i], beta[j]))
            }
        }
    }

    /// Decay coefficients `c[i][j]` with `k = exp(-c d2)` between the training
    /// points; the kernel gradient is `-2 c (a - b) k`.
    pub fn gram_coeffs(&self, n: usize) -> Mat {
        match self {
            Bandwidth::Global { sigma } => {
                let c = 1.0 / (2.0 * sigma * sigma);
                Mat::from_fn(n, n, |_, _| c)
            }
            Bandwidth::PerPoint { beta } => Mat::from_fn(n, n, |i, j| 0.5 * (beta[i] + beta[j])),
        }
    }

    /// Kernel and decay coefficients between queries and training points.
    /// A query borrows the inverse scale of its nearest training point.
    pub fn cross(&self, d2_qx: &Mat) -> (Mat, Mat) {
        match self {
            Bandwidth::Global { sigma } => {
                let two_s2 = 2.0 * sigma * sigma;
                let k = Mat::from_fn(d2_qx.rows(), d2_qx.cols(), |i, j| (-d2_qx[(i, j)] / two_s2).exp());
                let c = Mat::from_fn(d2_qx.rows(), d2_qx.cols(), |_, _| 1.0 / two_s2);
                (k, c)
            }
            Bandwidth::PerPoint { beta } => {
                let (u, t) = d2_qx.shape();
                let mut k = Mat::zeros(u, t);
                let mut c = Mat::zeros(u, t);
                for q in 0..u {
                    let row = d2_qx.row(q);
                    let mut nn = 0;
                    for j in 1..t {
                        if row[j] < row[nn] {
                            nn = j;
                        }
                    }
                    let bq = beta[nn];
                    for j in 0..t {
                        k[(q, j)] = perplexity_entry(row[j], bq, beta[j]);
                        c[(q, j)] = 0.5 * (bq + beta[j]);
                    }
                }
                (k, c)
            }
        }
    }
}

/// Linear-interpolation quantile (`h = q (n - 1)` on the sorted values).
pub fn quantile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("quantile of an empty set".into()));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::InvalidArgument(format!("quantile level {q} outside [0, 1]")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let h = q * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    Ok(sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]))
}

/// Solves `(K + eta I) X = B` for symmetric positive semi-definite `K`.
pub fn solve_ridge(k: &Mat, eta: f64, b: &Mat) -> Result<Mat> {
    let n = k.rows();
    if k.cols() != n || b.rows() != n {
        return Err(Error::Dimension(format!(
            "ridge system {:?} with right-hand side {:?}",
            k.shape(),
            b.shape()
        )));
    }
    if !(eta > 0.0) {
        return Err(Error::InvalidArgument(format!("ridge parameter must be positive, got {eta}")));
    }
    if !k.is_symmetric(1e-8) {
        return Err(Error::InvalidArgument("ridge system matrix is not symmetric".into()));
    }
    let mut a = k.to_nalgebra();
    for i in 0..n {
        a[(i, i)] += eta;
    }
    let rhs = b.to_nalgebra();
    let x = match a.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => a
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Numeric("singular ridge system".into()))?,
    };
    let x = Mat::from_nalgebra(&x);
    if !x.is_finite() {
        return Err(Error::Numeric("non-finite ridge solution".into()));
    }
    Ok(x)
}

/// Leading `j` eigenpairs of a symmetric matrix, eigenvalues descending.
///
/// Each eigenvector's sign is fixed so its largest-magnitude entry is
/// positive.
pub fn sym_eig_topj(k: &Mat, j: usize) -> Result<(Vec<f64>, Mat)> {
    let n = k.rows();
    if k.cols() != n {
        return Err(Error::Dimension(format!("eigendecomposition of non-square {:?}", k.shape())));
    }
    if j == 0 || j > n {
        return Err(Error::InvalidArgument(format!("requested {j} eigenpairs of a {n}x{n} matrix")));
    }
    if !k.is_symmetric(1e-8) {
        return Err(Error::InvalidArgument("eigendecomposition of a non-symmetric matrix".into()));
    }
    let eig = SymmetricEigen::new(k.to_nalgebra());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut values = Vec::with_capacity(j);
    let mut vectors = Mat::zeros(n, j);
    for (col, &src) in order.iter().take(j).enumerate() {
        values.push(eig.eigenvalues[src]);
        let v = eig.eigenvectors.column(src);
        let mut pivot = 0;
        for r in 1..n {
            if v[r].abs() > v[pivot].abs() {
                pivot = r;
            }
        }
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        for r in 0..n {
            vectors[(r, col)] = sign * v[r];
        }
    }
    Ok((values, vectors))
}
