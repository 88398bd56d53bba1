//! Unbiased MMD estimation and the MMD / pairwise-MMD censoring penalties.
//!
//! Penalties are evaluated through a weighted Gram matrix: every MMD term
//! adds its coefficients into one `N x N` weight matrix over the batch, so the
//! penalty is `sum(W .* K)` and its gradient with respect to the latents
//! follows from the kernel derivative with the length scale held fixed.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::censoring::{split_point, CensorMode};
use crate::error::{Error, Result};
use crate::numerics::{pairwise_sq_dists, rbf_kernel, Bandwidth, LengthScalePolicy, Mat};

/// Task and nuisance labels of a batch, both 0-based.
#[derive(Clone, Copy, Debug)]
pub struct BatchLabels<'a> {
    pub s: &'a [usize],
    pub y: &'a [usize],
    pub n_subjects: usize,
    pub n_classes: usize,
}

impl<'a> BatchLabels<'a> {
    pub fn new(s: &'a [usize], y: &'a [usize], n_subjects: usize, n_classes: usize) -> Result<Self> {
        if s.len() != y.len() {
            return Err(Error::Dimension(format!("{} subject labels vs {} class labels", s.len(), y.len())));
        }
        if let Some(&bad) = s.iter().find(|&&v| v >= n_subjects) {
            return Err(Error::InvalidArgument(format!("subject label {bad} outside 0..{n_subjects}")));
        }
        if let Some(&bad) = y.iter().find(|&&v| v >= n_classes) {
            return Err(Error::InvalidArgument(format!("class label {bad} outside 0..{n_classes}")));
        }
        Ok(BatchLabels { s, y, n_subjects, n_classes })
    }

    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }

    /// Indices per subject.
    pub fn by_subject(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_subjects];
        for (i, &s) in self.s.iter().enumerate() {
            out[s].push(i);
        }
        out
    }

    /// Indices per class.
    pub fn by_class(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_classes];
        for (i, &y) in self.y.iter().enumerate() {
            out[y].push(i);
        }
        out
    }

    /// Indices per (class, subject) cell.
    pub fn by_class_subject(&self) -> Vec<Vec<Vec<usize>>> {
        let mut out = vec![vec![Vec::new(); self.n_subjects]; self.n_classes];
        for i in 0..self.len() {
            out[self.y[i]][self.s[i]].push(i);
        }
        out
    }
}

fn sum_sorted(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    v.into_iter().sum()
}

/// Unbiased estimate of the squared MMD between two samples with an RBF kernel
/// of length scale `sigma`. May be negative.
///
/// Each sum is accumulated in sorted order so the estimate is exactly
/// symmetric in its arguments.
pub fn mmd_sq_unbiased(x: &Mat, y: &Mat, sigma: f64) -> Result<f64> {
    let (n, u) = (x.rows(), y.rows());
    if n < 2 || u < 2 {
        return Err(Error::SubsetTooSmall(format!("MMD needs at least 2 points per side, got {n} and {u}")));
    }
    if x.cols() != y.cols() {
        return Err(Error::Dimension(format!("MMD between {} and {} columns", x.cols(), y.cols())));
    }
    let within = |m: &Mat| -> Result<f64> {
        let k = rbf_kernel(&pairwise_sq_dists(m, m)?, sigma)?;
        let t = m.rows();
        let vals: Vec<f64> = (0..t)
            .flat_map(|i| (0..t).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| k[(i, j)])
            .collect();
        Ok(sum_sorted(vals) / (t * (t - 1)) as f64)
    };
    let term1 = within(x)?;
    let term2 = within(y)?;
    let cross = rbf_kernel(&pairwise_sq_dists(x, y)?, sigma)?;
    let term3 = 2.0 * sum_sorted(cross.into_vec()) / (n * u) as f64;
    Ok(term1 + term2 - term3)
}

/// Which subject pairs the pairwise penalty compares.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum PairPolicy {
    /// Every ordered pair kept independently with probability `b`.
    Bernoulli { b: f64 },
    /// All ordered pairs among `d` randomly chosen subjects.
    Clique { d: usize },
}

impl fmt::Display for PairPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PairPolicy::Bernoulli { b } => write!(f, "bernoulli:{b}"),
            PairPolicy::Clique { d } => write!(f, "clique:{d}"),
        }
    }
}

impl FromStr for PairPolicy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let (kind, arg) = s
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("pair policy '{s}' should look like bernoulli:0.5 or clique:4")))?;
        match kind {
            "bernoulli" => {
                let b: f64 = arg.parse().map_err(|_| Error::Config(format!("bad bernoulli fraction '{arg}'")))?;
                if !(0.0..=1.0).contains(&b) {
                    return Err(Error::Config(format!("bernoulli fraction {b} outside [0, 1]")));
                }
                Ok(PairPolicy::Bernoulli { b })
            }
            "clique" => {
                let d: usize = arg.parse().map_err(|_| Error::Config(format!("bad clique size '{arg}'")))?;
                if d == 0 {
                    return Err(Error::Config("clique size must be at least 1".into()));
                }
                Ok(PairPolicy::Clique { d })
            }
            other => Err(Error::Config(format!("unknown pair policy '{other}'"))),
        }
    }
}

impl TryFrom<String> for PairPolicy {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<PairPolicy> for String {
    fn from(v: PairPolicy) -> String {
        v.to_string()
    }
}

/// Ordered subject pairs `(r, t)`, `r != t`, chosen by `policy`.
pub fn select_pairs<R: Rng + ?Sized>(m: usize, policy: &PairPolicy, rng: &mut R) -> Result<Vec<(usize, usize)>> {
    if m < 2 {
        return Err(Error::InvalidArgument(format!("pair selection needs at least 2 subjects, got {m}")));
    }
    let mut pairs = Vec::new();
    match *policy {
        PairPolicy::Bernoulli { b } => {
            if !(0.0..=1.0).contains(&b) {
                return Err(Error::InvalidArgument(format!("bernoulli fraction {b} outside [0, 1]")));
            }
            for r in 0..m {
                for t in 0..m {
                    if t != r && rng.random::<f64>() < b {
                        pairs.push((r, t));
                    }
                }
            }
        }
        PairPolicy::Clique { d } => {
            if d == 0 || d > m {
                return Err(Error::InvalidArgument(format!("clique size {d} outside 1..={m}")));
            }
            let mut perm: Vec<usize> = (0..m).collect();
            perm.shuffle(rng);
            let chosen = &perm[..d];
            for &r in chosen {
                for &t in chosen {
                    if r != t {
                        pairs.push((r, t));
                    }
                }
            }
        }
    }
    Ok(pairs)
}

/// Penalty value: a single divergence, or one per latent half.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum MmdPenalty {
    Single(f64),
    Complementary { penalty_z1: f64, penalty_z2: f64 },
}

impl MmdPenalty {
    pub fn components(&self) -> Vec<f64> {
        match *self {
            MmdPenalty::Single(v) => vec![v],
            MmdPenalty::Complementary { penalty_z1, penalty_z2 } => vec![penalty_z1, penalty_z2],
        }
    }
}

#[derive(Clone, Debug)]
pub struct MmdPenaltyResult {
    pub penalty: MmdPenalty,
    pub terms_computed: usize,
    pub terms_skipped: usize,
    /// Gradient of each penalty component with respect to the full latent
    /// batch (N x K), aligned with [`MmdPenalty::components`].
    pub grads: Vec<Mat>,
}

/// Accumulates MMD terms over index subsets of one latent block.
struct WeightedGram {
    k: Mat,
    c: Mat,
    w: Mat,
    computed: usize,
    skipped: usize,
}

impl WeightedGram {
    fn new(block: &Mat, policy: &LengthScalePolicy) -> Result<Self> {
        let bw = Bandwidth::resolve(block, policy)?;
        let d2 = pairwise_sq_dists(block, block)?;
        let n = block.rows();
        Ok(WeightedGram { k: bw.gram(&d2), c: bw.gram_coeffs(n), w: Mat::zeros(n, n), computed: 0, skipped: 0 })
    }

    fn add_term(&mut self, xs: &[usize], ys: &[usize]) {
        let (n, u) = (xs.len(), ys.len());
        if n < 2 || u < 2 {
            self.skipped += 1;
            return;
        }
        self.computed += 1;
        let wx = 1.0 / (n * (n - 1)) as f64;
        for (a, &i) in xs.iter().enumerate() {
            for (b, &j) in xs.iter().enumerate() {
                if a != b {
                    self.w[(i, j)] += wx;
                }
            }
        }
        let wy = 1.0 / (u * (u - 1)) as f64;
        for (a, &i) in ys.iter().enumerate() {
            for (b, &j) in ys.iter().enumerate() {
                if a != b {
                    self.w[(i, j)] += wy;
                }
            }
        }
        let wxy = 2.0 / (n * u) as f64;
        for &i in xs {
            for &j in ys {
                self.w[(i, j)] -= wxy;
            }
        }
    }

    /// Value and gradient with respect to the block's rows.
    fn finish(&self, block: &Mat, scale: f64) -> (f64, Mat) {
        let n = block.rows();
        let dim = block.cols();
        let mut value = 0.0;
        let mut grad = Mat::zeros(n, dim);
        for a in 0..n {
            for b in 0..n {
                let wab = self.w[(a, b)];
                value += wab * self.k[(a, b)];
                let sym = wab + self.w[(b, a)];
                if sym == 0.0 || a == b {
                    continue;
                }
                let coef = -2.0 * self.c[(a, b)] * self.k[(a, b)] * sym * scale;
                let (za, zb) = (block.row(a), block.row(b));
                let g = grad.row_mut(a);
                for d in 0..dim {
                    g[d] += coef * (za[d] - zb[d]);
                }
            }
        }
        (value * scale, grad)
    }
}

fn embed_grad(block_grad: &Mat, total_cols: usize, start: usize) -> Mat {
    let mut g = Mat::zeros(block_grad.rows(), total_cols);
    g.set_cols(start, block_grad);
    g
}

fn check_batch(z: &Mat, labels: &BatchLabels) -> Result<()> {
    if z.rows() != labels.len() {
        return Err(Error::Dimension(format!("{} latents vs {} labels", z.rows(), labels.len())));
    }
    if z.rows() < 2 {
        return Err(Error::InvalidArgument("MMD penalty needs at least 2 samples".into()));
    }
    Ok(())
}

fn single_block<F>(z: &Mat, policy: &LengthScalePolicy, scale_fn: impl Fn(usize) -> f64, fill: F) -> Result<(f64, Mat, usize, usize)>
where
    F: Fn(&mut WeightedGram),
{
    let mut wg = WeightedGram::new(z, policy)?;
    fill(&mut wg);
    if wg.computed == 0 {
        return Ok((0.0, Mat::zeros(z.rows(), z.cols()), 0, wg.skipped));
    }
    let (v, g) = wg.finish(z, scale_fn(wg.computed));
    Ok((v, g, wg.computed, wg.skipped))
}

fn assemble(
    z: &Mat,
    mode: CensorMode,
    policy: &LengthScalePolicy,
    scale_fn: impl Fn(usize) -> f64 + Copy,
    fill: impl Fn(&mut WeightedGram) + Copy,
    allow_empty: bool,
) -> Result<MmdPenaltyResult> {
    let result = match mode {
        CensorMode::Marginal | CensorMode::Conditional => {
            let (v, g, computed, skipped) = single_block(z, policy, scale_fn, fill)?;
            MmdPenaltyResult { penalty: MmdPenalty::Single(v), terms_computed: computed, terms_skipped: skipped, grads: vec![g] }
        }
        CensorMode::Complementary => {
            let split = split_point(z.cols())?;
            let z1 = z.select_cols(0, split);
            let z2 = z.select_cols(split, z.cols());
            let (v1, g1, c1, s1) = single_block(&z1, policy, scale_fn, fill)?;
            let (v2, g2, c2, s2) = single_block(&z2, policy, scale_fn, fill)?;
            MmdPenaltyResult {
                penalty: MmdPenalty::Complementary { penalty_z1: v1, penalty_z2: v2 },
                terms_computed: c1 + c2,
                terms_skipped: s1 + s2,
                grads: vec![embed_grad(&g1, z.cols(), 0), embed_grad(&g2, z.cols(), split)],
            }
        }
    };
    if result.terms_computed == 0 && !(allow_empty && result.terms_skipped == 0) {
        return Err(Error::NoComputableTerms(format!(
            "all {} MMD terms had subsets smaller than 2",
            result.terms_skipped
        )));
    }
    Ok(result)
}

/// MMD censoring penalty: full batch (or class subset) against each subject
/// subset. Length scales are resolved once on the whole batch (per half in
/// complementary mode) and held fixed for the gradient.
pub fn mmd_penalty(
    z: &Mat,
    labels: &BatchLabels,
    mode: CensorMode,
    lengthscale: &LengthScalePolicy,
) -> Result<MmdPenaltyResult> {
    check_batch(z, labels)?;
    let all: Vec<usize> = (0..z.rows()).collect();
    let subjects = labels.by_subject();
    let classes = labels.by_class();
    let cells = labels.by_class_subject();
    let fill = |wg: &mut WeightedGram| match mode {
        CensorMode::Marginal | CensorMode::Complementary => {
            for sub in &subjects {
                wg.add_term(&all, sub);
            }
        }
        CensorMode::Conditional => {
            for (c, class_idx) in classes.iter().enumerate() {
                for cell in &cells[c] {
                    wg.add_term(class_idx, cell);
                }
            }
        }
    };
    assemble(z, mode, lengthscale, |_| 1.0, fill, false)
}

/// Pairwise MMD censoring penalty over the subject pairs in `pairs`.
///
/// Terms are summed; with `average` they are divided by the number of
/// computed terms.
pub fn pairmmd_penalty_with_pairs(
    z: &Mat,
    labels: &BatchLabels,
    mode: CensorMode,
    pairs: &[(usize, usize)],
    lengthscale: &LengthScalePolicy,
    average: bool,
) -> Result<MmdPenaltyResult> {
    check_batch(z, labels)?;
    if let Some(&(r, t)) = pairs.iter().find(|&&(r, t)| r >= labels.n_subjects || t >= labels.n_subjects) {
        return Err(Error::InvalidArgument(format!("pair ({r}, {t}) outside 0..{}", labels.n_subjects)));
    }
    let subjects = labels.by_subject();
    let cells = labels.by_class_subject();
    let fill = |wg: &mut WeightedGram| match mode {
        CensorMode::Marginal | CensorMode::Complementary => {
            for &(r, t) in pairs {
                wg.add_term(&subjects[r], &subjects[t]);
            }
        }
        CensorMode::Conditional => {
            for class_cells in &cells {
                for &(r, t) in pairs {
                    wg.add_term(&class_cells[r], &class_cells[t]);
                }
            }
        }
    };
    let scale = move |computed: usize| if average { 1.0 / computed as f64 } else { 1.0 };
    assemble(z, mode, lengthscale, scale, fill, true)
}

/// Pairwise MMD penalty with pairs drawn fresh from `rng`.
pub fn pairmmd_penalty<R: Rng + ?Sized>(
    z: &Mat,
    labels: &BatchLabels,
    mode: CensorMode,
    policy: &PairPolicy,
    lengthscale: &LengthScalePolicy,
    average: bool,
    rng: &mut R,
) -> Result<MmdPenaltyResult> {
    let pairs = select_pairs(labels.n_subjects, policy, rng)?;
    pairmmd_penalty_with_pairs(z, labels, mode, &pairs, lengthscale, average)
}

/// Per-subject marginal MMD terms, keyed by subject; used for diagnostics.
pub fn per_subject_mmd(z: &Mat, labels: &BatchLabels, sigma: f64) -> Result<BTreeMap<usize, f64>> {
    check_batch(z, labels)?;
    let mut out = BTreeMap::new();
    for (m, idx) in labels.by_subject().iter().enumerate() {
        if idx.len() >= 2 {
            out.insert(m, mmd_sq_unbiased(z, &z.select_rows(idx), sigma)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn col(v: &[f64]) -> Mat {
        Mat::column(v)
    }

    #[test]
    fn mmd_examples() {
        let c = col(&[1.5, 1.5]);
        assert!(mmd_sq_unbiased(&c, &c, 1.0).unwrap().abs() < 1e-15);
        let x = col(&[0.0, 2.0]);
        let v = mmd_sq_unbiased(&x, &x, 2f64.sqrt()).unwrap();
        assert!((v - ((-1f64).exp() - 1.0)).abs() < 1e-12);
        let v = mmd_sq_unbiased(&col(&[0.0, 0.0]), &col(&[10.0, 10.0]), 1.0).unwrap();
        assert!((v - 2.0).abs() < 1e-12);
        assert!(matches!(mmd_sq_unbiased(&col(&[0.0]), &x, 1.0), Err(Error::SubsetTooSmall(_))));
        assert!(mmd_sq_unbiased(&x, &x, 0.0).is_err());
    }

    #[test]
    fn select_pairs_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let all = select_pairs(4, &PairPolicy::Bernoulli { b: 1.0 }, &mut rng).unwrap();
        assert_eq!(all.len(), 12);
        assert!(select_pairs(4, &PairPolicy::Bernoulli { b: 0.0 }, &mut rng).unwrap().is_empty());
        let clique = select_pairs(5, &PairPolicy::Clique { d: 3 }, &mut rng).unwrap();
        assert_eq!(clique.len(), 6);
        let mut members: Vec<usize> = clique.iter().flat_map(|&(r, t)| [r, t]).collect();
        members.sort();
        members.dedup();
        assert_eq!(members.len(), 3);
        assert!(clique.iter().all(|&(r, t)| r != t));
        assert!(select_pairs(5, &PairPolicy::Clique { d: 6 }, &mut rng).is_err());
        assert!(select_pairs(1, &PairPolicy::Bernoulli { b: 0.5 }, &mut rng).is_err());
    }

    #[test]
    fn marginal_two_identical_subjects_have_equal_terms() {
        // subjects 0 and 1 each hold {0, 2}
        let z = col(&[0.0, 2.0, 0.0, 2.0]);
        let s = [0, 0, 1, 1];
        let y = [0, 0, 0, 0];
        let labels = BatchLabels::new(&s, &y, 2, 1).unwrap();
        let sigma = 2f64.sqrt();
        let res = mmd_penalty(&z, &labels, CensorMode::Marginal, &LengthScalePolicy::Fixed { sigma }).unwrap();
        let per = per_subject_mmd(&z, &labels, sigma).unwrap();
        assert_eq!(per[&0], per[&1]);
        // brute force: MMD^2({0,2,0,2},{0,2}); e = exp(-1)
        // term1: 12 ordered pairs, 4 zero-distance (k=1) and 8 at distance 2 -> (4 + 8e)/12
        // term2: 2e/2 = e; term3: 2/(4*2) * (4 + 4e)
        let e = (-1f64).exp();
        let brute = (4.0 + 8.0 * e) / 12.0 + e - 0.25 * (4.0 + 4.0 * e);
        assert!((per[&0] - brute).abs() < 1e-12);
        match res.penalty {
            MmdPenalty::Single(v) => assert!((v - 2.0 * brute).abs() < 1e-12),
            _ => unreachable!(),
        }
        assert_eq!(res.terms_computed, 2);
    }

    #[test]
    fn single_subject_uses_full_batch_term_only() {
        let z = col(&[0.0, 1.0, 3.0]);
        let s = [0, 0, 0];
        let y = [0, 1, 0];
        let labels = BatchLabels::new(&s, &y, 1, 2).unwrap();
        let sigma = 1.3;
        let res = mmd_penalty(&z, &labels, CensorMode::Marginal, &LengthScalePolicy::Fixed { sigma }).unwrap();
        assert_eq!(res.terms_computed, 1);
        let direct = mmd_sq_unbiased(&z, &z, sigma).unwrap();
        assert!((res.penalty.components()[0] - direct).abs() < 1e-12);
    }

    #[test]
    fn undersized_subsets_skipped_then_error_when_nothing_left() {
        let z = col(&[0.0, 1.0, 3.0, 4.0]);
        let s = [0, 0, 1, 2];
        let y = [0, 0, 0, 0];
        let labels = BatchLabels::new(&s, &y, 3, 1).unwrap();
        let res = mmd_penalty(&z, &labels, CensorMode::Marginal, &LengthScalePolicy::Median).unwrap();
        assert_eq!((res.terms_computed, res.terms_skipped), (1, 2));

        let s = [0, 1, 2, 3];
        let labels = BatchLabels::new(&s, &y, 4, 1).unwrap();
        let err = mmd_penalty(&z, &labels, CensorMode::Marginal, &LengthScalePolicy::Median).unwrap_err();
        assert!(matches!(err, Error::NoComputableTerms(_)));
    }

    #[test]
    fn pairwise_examples() {
        let z = col(&[0.0, 2.0, 0.0, 2.0]);
        let s = [0, 0, 1, 1];
        let y = [0, 0, 0, 0];
        let labels = BatchLabels::new(&s, &y, 2, 1).unwrap();
        let ls = LengthScalePolicy::Fixed { sigma: 2f64.sqrt() };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let empty = pairmmd_penalty(&z, &labels, CensorMode::Marginal, &PairPolicy::Bernoulli { b: 0.0 }, &ls, false, &mut rng).unwrap();
        assert_eq!(empty.penalty, MmdPenalty::Single(0.0));
        assert_eq!(empty.terms_computed, 0);

        let one = pairmmd_penalty_with_pairs(&z, &labels, CensorMode::Marginal, &[(0, 1)], &ls, false).unwrap();
        let v1 = one.penalty.components()[0];
        assert!((v1 - ((-1f64).exp() - 1.0)).abs() < 1e-12);
        let two = pairmmd_penalty_with_pairs(&z, &labels, CensorMode::Marginal, &[(0, 1), (1, 0)], &ls, false).unwrap();
        assert!((two.penalty.components()[0] - 2.0 * v1).abs() < 1e-12);
        let avg = pairmmd_penalty_with_pairs(&z, &labels, CensorMode::Marginal, &[(0, 1), (1, 0)], &ls, true).unwrap();
        assert!((avg.penalty.components()[0] - v1).abs() < 1e-12);
    }

    #[test]
    fn complementary_splits_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 12;
        let z = Mat::from_fn(n, 3, |_, _| rng.random::<f64>());
        let s: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let y = vec![0; n];
        let labels = BatchLabels::new(&s, &y, 2, 1).unwrap();
        let ls = LengthScalePolicy::Median;
        let res = mmd_penalty(&z, &labels, CensorMode::Complementary, &ls).unwrap();
        let first = mmd_penalty(&z.select_cols(0, 2), &labels, CensorMode::Marginal, &ls).unwrap();
        let second = mmd_penalty(&z.select_cols(2, 3), &labels, CensorMode::Marginal, &ls).unwrap();
        match res.penalty {
            MmdPenalty::Complementary { penalty_z1, penalty_z2 } => {
                assert_eq!(penalty_z1, first.penalty.components()[0]);
                assert_eq!(penalty_z2, second.penalty.components()[0]);
            }
            _ => unreachable!(),
        }
        // gradient blocks live in their own columns
        assert!(res.grads[0].select_cols(2, 3).frobenius_norm() == 0.0);
        assert!(res.grads[1].select_cols(0, 2).frobenius_norm() == 0.0);
    }

    #[test]
    fn penalty_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 10;
        let z = Mat::from_fn(n, 2, |_, _| rng.random::<f64>() * 2.0);
        let s: Vec<usize> = (0..n).map(|i| i % 3).collect();
        let y: Vec<usize> = (0..n).map(|i| (i / 3) % 2).collect();
        let labels = BatchLabels::new(&s, &y, 3, 2).unwrap();
        let ls = LengthScalePolicy::Fixed { sigma: 0.8 };
        for mode in [CensorMode::Marginal, CensorMode::Conditional] {
            let res = mmd_penalty(&z, &labels, mode, &ls).unwrap();
            let h = 1e-6;
            for i in 0..n {
                for d in 0..2 {
                    let mut zp = z.clone();
                    zp[(i, d)] += h;
                    let mut zm = z.clone();
                    zm[(i, d)] -= h;
                    let fp = mmd_penalty(&zp, &labels, mode, &ls).unwrap().penalty.components()[0];
                    let fm = mmd_penalty(&zm, &labels, mode, &ls).unwrap().penalty.components()[0];
                    let fd = (fp - fm) / (2.0 * h);
                    assert!((fd - res.grads[0][(i, d)]).abs() < 1e-6, "{mode:?} ({i},{d}): {fd} vs {}", res.grads[0][(i, d)]);
                }
            }
        }
    }
}
