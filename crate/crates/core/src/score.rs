//! Kernel score-function estimators and the entropy-gradient subroutine built
//! on them.
//!
//! Every estimator fits a function of the form
//!
//! ```text
//! g(q) = a * div(q) + sum_m k(q, x_m) w_m,    div(q) = sum_m grad_{x_m} k(x_m, q)
//! ```
//!
//! so out-of-sample evaluation is shared. What differs is how `a` and the
//! weights `w` are obtained:
//!
//! * **Stein**: in-sample scores `G = -(K + eta I)^{-1} div(X)` with
//!   `eta = T * reg`, extended by the regression identity
//!   `g(q) = -(div(q) + k_q^T G) / eta`, which reproduces `G` at the samples.
//! * **Tikhonov**: the same normal equations, then a kernel ridge regression
//!   from the in-sample scores to the queries, `g(q) = k_q^T (K + eta I)^{-1} G`.
//! * **nu-method**: accelerated Landweber iterations on the same regression
//!   with the operator `K / T`; the iteration count is the regularizer.
//! * **SSGE**: truncated Nystrom eigenfunction expansion of the kernel.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{pairwise_sq_dists, solve_ridge, sym_eig_topj, Bandwidth, LengthScalePolicy, Mat};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ScoreEstimatorKind {
    Ssge,
    /// SSGE with the wider truncation of the original MIGE setup.
    MigeDefault,
    NuMethod,
    Tikhonov,
    Stein,
}

impl ScoreEstimatorKind {
    pub const ALL: [ScoreEstimatorKind; 5] = [
        ScoreEstimatorKind::Ssge,
        ScoreEstimatorKind::MigeDefault,
        ScoreEstimatorKind::NuMethod,
        ScoreEstimatorKind::Tikhonov,
        ScoreEstimatorKind::Stein,
    ];

    /// Whether the regularization strength and length-scale policy are tunable.
    pub fn is_regularized(self) -> bool {
        matches!(self, ScoreEstimatorKind::NuMethod | ScoreEstimatorKind::Tikhonov | ScoreEstimatorKind::Stein)
    }

    pub fn name(self) -> &'static str {
        match self {
            ScoreEstimatorKind::Ssge => "ssge",
            ScoreEstimatorKind::MigeDefault => "mige-default",
            ScoreEstimatorKind::NuMethod => "nu-method",
            ScoreEstimatorKind::Tikhonov => "tikhonov",
            ScoreEstimatorKind::Stein => "stein",
        }
    }
}

impl fmt::Display for ScoreEstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScoreEstimatorKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "ssge" => Ok(ScoreEstimatorKind::Ssge),
            "mige-default" | "mige" => Ok(ScoreEstimatorKind::MigeDefault),
            "nu-method" | "nu" => Ok(ScoreEstimatorKind::NuMethod),
            "tikhonov" => Ok(ScoreEstimatorKind::Tikhonov),
            "stein" => Ok(ScoreEstimatorKind::Stein),
            other => Err(Error::Config(format!("unknown score estimator '{other}'"))),
        }
    }
}

impl TryFrom<String> for ScoreEstimatorKind {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ScoreEstimatorKind> for String {
    fn from(v: ScoreEstimatorKind) -> String {
        v.to_string()
    }
}

/// How many eigenfunctions the spectral estimator keeps.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum SsgeTruncation {
    Count(usize),
    /// Keep eigenvalues at or above `value * lambda_max`.
    RelativeThreshold(f64),
    /// Smallest leading set whose eigenvalues hold this fraction of the trace.
    CumulativeRatio(f64),
}

impl SsgeTruncation {
    /// "all numerically nonzero eigenvalues".
    pub const ALL: SsgeTruncation = SsgeTruncation::RelativeThreshold(1e-8);
}

impl Default for SsgeTruncation {
    fn default() -> Self {
        SsgeTruncation::CumulativeRatio(0.9)
    }
}

const MIGE_DEFAULT_TRUNCATION: SsgeTruncation = SsgeTruncation::CumulativeRatio(0.99);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoreConfig {
    pub kind: ScoreEstimatorKind,
    /// Estimator regularization strength.
    pub score_reg: f64,
    pub lengthscale: LengthScalePolicy,
    pub ssge_j: SsgeTruncation,
    pub nu_iters: usize,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        ScoreConfig {
            kind: ScoreEstimatorKind::Stein,
            score_reg: 1e-3,
            lengthscale: LengthScalePolicy::Median,
            ssge_j: SsgeTruncation::default(),
            nu_iters: 100,
        }
    }
}

impl ScoreConfig {
    pub fn new(kind: ScoreEstimatorKind, score_reg: f64, lengthscale: LengthScalePolicy) -> Self {
        ScoreConfig { kind, score_reg, lengthscale, ..ScoreConfig::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.score_reg > 0.0) || !self.score_reg.is_finite() {
            return Err(Error::Config(format!("score_reg must be positive, got {}", self.score_reg)));
        }
        if self.nu_iters == 0 {
            return Err(Error::Config("nu_iters must be at least 1".into()));
        }
        match self.ssge_j {
            SsgeTruncation::Count(0) => return Err(Error::Config("ssge_j count must be at least 1".into())),
            SsgeTruncation::RelativeThreshold(t) if !(t > 0.0 && t < 1.0) => {
                return Err(Error::Config(format!("ssge threshold {t} outside (0, 1)")))
            }
            SsgeTruncation::CumulativeRatio(r) if !(r > 0.0 && r <= 1.0) => {
                return Err(Error::Config(format!("ssge ratio {r} outside (0, 1]")))
            }
            _ => {}
        }
        self.lengthscale.validate()
    }

    /// Landweber-type iteration count: `round(1 / sqrt(reg))`, capped by `nu_iters`.
    pub fn nu_iteration_count(&self) -> usize {
        let from_reg = (1.0 / self.score_reg.sqrt()).round().max(1.0) as usize;
        from_reg.min(self.nu_iters)
    }
}

/// A fitted estimator of `grad_z log q(z)`; immutable once built.
#[derive(Clone, Debug)]
pub struct FittedScore {
    samples: Mat,
    bandwidth: Bandwidth,
    config: ScoreConfig,
    div_coeff: f64,
    weights: Mat,
    in_sample: Mat,
}

/// Scores at query points plus the number of queries with no kernel support.
#[derive(Clone, Debug)]
pub struct ScoreEval {
    pub scores: Mat,
    pub extrapolated: usize,
}

/// Queries whose largest kernel value against the training set falls below
/// this are counted as extrapolations.
const EXTRAPOLATION_KERNEL_FLOOR: f64 = 1e-8;

/// `div[i] = sum_m 2 c_im (q_i - x_m) k_im`: the summed kernel gradient with
/// respect to the training argument.
fn kernel_divergence(queries: &Mat, samples: &Mat, k: &Mat, c: &Mat) -> Mat {
    let dim = samples.cols();
    let mut out = Mat::zeros(queries.rows(), dim);
    for i in 0..queries.rows() {
        let q = queries.row(i);
        let row = out.row_mut(i);
        for m in 0..samples.rows() {
            let w = 2.0 * c[(i, m)] * k[(i, m)];
            if w == 0.0 {
                continue;
            }
            let x = samples.row(m);
            for d in 0..dim {
                row[d] += w * (q[d] - x[d]);
            }
        }
    }
    out
}

fn all_rows_equal(m: &Mat) -> bool {
    let first = m.row(0);
    m.row_iter().all(|r| r == first)
}

/// Fits the configured estimator to `samples` (T x K). Deterministic.
pub fn fit_score(samples: &Mat, cfg: &ScoreConfig) -> Result<FittedScore> {
    cfg.validate()?;
    let (t, dim) = samples.shape();
    if t < 2 {
        return Err(Error::InvalidArgument(format!("score fit needs at least 2 samples, got {t}")));
    }
    if dim == 0 {
        return Err(Error::Dimension("score fit on zero-dimensional samples".into()));
    }
    if all_rows_equal(samples) {
        return Err(Error::DegenerateBatch("all samples are identical".into()));
    }
    let lengthscale = match cfg.kind {
        ScoreEstimatorKind::MigeDefault => LengthScalePolicy::Median,
        _ => cfg.lengthscale.clone(),
    };
    let bandwidth = Bandwidth::resolve(samples, &lengthscale)?;
    let d2 = pairwise_sq_dists(samples, samples)?;
    let k = bandwidth.gram(&d2);
    let c = bandwidth.gram_coeffs(t);
    let div = kernel_divergence(samples, samples, &k, &c);
    let tf = t as f64;

    let (div_coeff, weights, in_sample) = match cfg.kind {
        ScoreEstimatorKind::Stein => {
            let eta = tf * cfg.score_reg;
            let g = solve_ridge(&k, eta, &div)?.scaled(-1.0);
            (-1.0 / eta, g.scaled(-1.0 / eta), g)
        }
        ScoreEstimatorKind::Tikhonov => {
            let eta = tf * cfg.score_reg;
            let g = solve_ridge(&k, eta, &div)?.scaled(-1.0);
            let alpha = solve_ridge(&k, eta, &g)?;
            let fitted = k.matmul(&alpha)?;
            (0.0, alpha, fitted)
        }
        ScoreEstimatorKind::NuMethod => nu_method(&k, &div, cfg.nu_iteration_count())?,
        ScoreEstimatorKind::Ssge | ScoreEstimatorKind::MigeDefault => {
            let trunc = if cfg.kind == ScoreEstimatorKind::MigeDefault { MIGE_DEFAULT_TRUNCATION } else { cfg.ssge_j };
            ssge(samples, &k, &c, trunc)?
        }
    };
    if !in_sample.is_finite() || !weights.is_finite() {
        return Err(Error::Numeric(format!("{} score fit produced non-finite values", cfg.kind)));
    }
    Ok(FittedScore {
        samples: samples.clone(),
        bandwidth,
        config: ScoreConfig { lengthscale, ..cfg.clone() },
        div_coeff,
        weights,
        in_sample,
    })
}

/// nu-method (nu = 1) on `(K / T) h = -div / T`, tracking the iterate as
/// `a * div(.) / T + k(., X) c / T` so it can be evaluated anywhere.
fn nu_method(k: &Mat, div: &Mat, iters: usize) -> Result<(f64, Mat, Mat)> {
    let t = k.rows();
    let tf = t as f64;
    let nu = 1.0;
    let z = div.scaled(1.0 / tf);
    let (mut a, mut a_prev) = (0.0, 0.0);
    let mut c = Mat::zeros(t, div.cols());
    let mut c_prev = c.clone();
    let mut h = Mat::zeros(t, div.cols());
    for step in 1..=iters {
        let s = step as f64;
        let (mu, omega) = if step == 1 {
            (0.0, (4.0 * nu + 2.0) / (4.0 * nu + 1.0))
        } else {
            let mu = (s - 1.0) * (2.0 * s - 3.0) * (2.0 * s + 2.0 * nu - 1.0)
                / ((s + 2.0 * nu - 1.0) * (2.0 * s + 4.0 * nu - 1.0) * (2.0 * s + 2.0 * nu - 3.0));
            let omega = 4.0 * (2.0 * s + 2.0 * nu - 1.0) * (s + nu - 1.0)
                / ((s + 2.0 * nu - 1.0) * (2.0 * s + 4.0 * nu - 1.0));
            (mu, omega)
        };
        let a_next = a + mu * (a - a_prev) - omega;
        let mut c_next = c.clone();
        c_next.add_scaled(&c, mu)?;
        c_next.add_scaled(&c_prev, -mu)?;
        c_next.add_scaled(&h, -omega)?;
        a_prev = a;
        a = a_next;
        c_prev = std::mem::replace(&mut c, c_next);
        // h = a z + (K / T) c
        h = k.matmul(&c)?.scaled(1.0 / tf);
        h.add_scaled(&z, a)?;
    }
    Ok((a / tf, c.scaled(1.0 / tf), h))
}

fn ssge(samples: &Mat, k: &Mat, c: &Mat, trunc: SsgeTruncation) -> Result<(f64, Mat, Mat)> {
    let (t, dim) = samples.shape();
    let tf = t as f64;
    let (vals, vecs) = sym_eig_topj(k, t)?;
    let lmax = vals[0];
    if !(lmax > 0.0) {
        return Err(Error::Numeric("kernel matrix has no positive eigenvalue".into()));
    }
    let usable = vals.iter().take_while(|&&v| v > 1e-12 * lmax).count();
    let j = match trunc {
        SsgeTruncation::Count(n) => n.min(usable),
        SsgeTruncation::RelativeThreshold(thr) => vals.iter().take(usable).take_while(|&&v| v >= thr * lmax).count(),
        SsgeTruncation::CumulativeRatio(r) => {
            let total: f64 = vals.iter().take(usable).sum();
            let mut acc = 0.0;
            let mut n = 0;
            for &v in vals.iter().take(usable) {
                acc += v;
                n += 1;
                if acc >= r * total {
                    break;
                }
            }
            n
        }
    }
    .max(1);

    // grad psi_j(x_i) = sqrt(T)/lambda_j sum_m grad_x k(x_i, x_m) u_mj, and
    // grad_x k(x_i, x_m) = -2 c (x_i - x_m) k, so sum over i of the gradient
    // needs S[m] = sum_i -2 c_im k_im (x_i - x_m).
    let mut s = Mat::zeros(t, dim);
    for m in 0..t {
        let xm = samples.row(m);
        let row = s.row_mut(m);
        for i in 0..t {
            let w = -2.0 * c[(i, m)] * k[(i, m)];
            let xi = samples.row(i);
            for d in 0..dim {
                row[d] += w * (xi[d] - xm[d]);
            }
        }
    }
    // beta_j = -(1/T) sum_i grad psi_j(x_i) = -(sqrt(T)/(T lambda_j)) sum_m u_mj S[m]
    let mut weights = Mat::zeros(t, dim);
    for col in 0..j {
        let scale = tf.sqrt() / vals[col];
        let mut beta = vec![0.0; dim];
        for m in 0..t {
            let u = vecs[(m, col)];
            for d in 0..dim {
                beta[d] += u * s[(m, d)];
            }
        }
        beta.iter_mut().for_each(|b| *b *= -scale / tf);
        // g(x) = sum_j beta_j psi_j(x) = sum_m k(x, x_m) [sum_j scale_j u_mj beta_j]
        for m in 0..t {
            let u = vecs[(m, col)] * scale;
            for d in 0..dim {
                weights[(m, d)] += u * beta[d];
            }
        }
    }
    let in_sample = k.matmul(&weights)?;
    Ok((0.0, weights, in_sample))
}

impl FittedScore {
    pub fn samples(&self) -> &Mat {
        &self.samples
    }

    pub fn config(&self) -> &ScoreConfig {
        &self.config
    }

    pub fn bandwidth(&self) -> &Bandwidth {
        &self.bandwidth
    }

    /// Scores at the training samples as produced by the fitting solve.
    pub fn in_sample(&self) -> &Mat {
        &self.in_sample
    }

    /// Estimated score at arbitrary query points (U x K).
    pub fn score_at(&self, queries: &Mat) -> Result<ScoreEval> {
        if queries.cols() != self.samples.cols() {
            return Err(Error::Dimension(format!(
                "queries have {} columns, estimator was fitted on {}",
                queries.cols(),
                self.samples.cols()
            )));
        }
        let d2 = pairwise_sq_dists(queries, &self.samples)?;
        let (k, c) = self.bandwidth.cross(&d2);
        let mut scores = k.matmul(&self.weights)?;
        if self.div_coeff != 0.0 {
            let div = kernel_divergence(queries, &self.samples, &k, &c);
            scores.add_scaled(&div, self.div_coeff)?;
        }
        let extrapolated = k
            .row_iter()
            .filter(|row| row.iter().cloned().fold(0.0, f64::max) < EXTRAPOLATION_KERNEL_FLOOR)
            .count();
        if !scores.is_finite() {
            return Err(Error::Numeric("non-finite score evaluation".into()));
        }
        Ok(ScoreEval { scores, extrapolated })
    }
}

/// Convenience wrapper for [`FittedScore::score_at`].
pub fn score_at(fitted: &FittedScore, queries: &Mat) -> Result<ScoreEval> {
    fitted.score_at(queries)
}

/// Per-sample cotangents `c_i = -(1/T) score(z_i)`. Back-propagating them as
/// the upstream gradient of `z_i` through the encoder yields the gradient of
/// the differential entropy `H(z)` with respect to the encoder parameters.
pub fn entropy_grad_cotangents(samples: &Mat, cfg: &ScoreConfig) -> Result<Mat> {
    let fitted = fit_score(samples, cfg)?;
    Ok(fitted.in_sample.scaled(-1.0 / samples.rows() as f64))
}
