//! Censoring penalty engines behind one contract consumed by the trainer.
//!
//! Engines return unscaled outputs; the trainer applies `lambda`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::divergence::{mmd_penalty, pairmmd_penalty, BatchLabels, MmdPenalty, MmdPenaltyResult, PairPolicy};
use crate::error::{Error, Result};
use crate::neural::{sample_nll, Activation, Model, NetSpec, PROB_FLOOR};
use crate::numerics::{LengthScalePolicy, Mat};
use crate::score::{fit_score, ScoreConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CensorMode {
    Marginal,
    Conditional,
    Complementary,
}

impl CensorMode {
    pub const ALL: [CensorMode; 3] = [CensorMode::Marginal, CensorMode::Conditional, CensorMode::Complementary];

    pub fn name(self) -> &'static str {
        match self {
            CensorMode::Marginal => "marginal",
            CensorMode::Conditional => "conditional",
            CensorMode::Complementary => "complementary",
        }
    }
}

impl fmt::Display for CensorMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CensorMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        CensorMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown censoring mode '{s}'")))
    }
}

/// Penalty engine. `None` is plain ERM.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CensorMethod {
    None,
    Adversarial,
    Mige,
    Mmd,
    #[serde(rename = "pairmmd")]
    PairMmd,
    Began,
}

impl CensorMethod {
    pub const ALL: [CensorMethod; 6] = [
        CensorMethod::None,
        CensorMethod::Adversarial,
        CensorMethod::Mige,
        CensorMethod::Mmd,
        CensorMethod::PairMmd,
        CensorMethod::Began,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CensorMethod::None => "baseline",
            CensorMethod::Adversarial => "adversarial",
            CensorMethod::Mige => "mige",
            CensorMethod::Mmd => "mmd",
            CensorMethod::PairMmd => "pairmmd",
            CensorMethod::Began => "began",
        }
    }

    pub fn has_aux_model(self) -> bool {
        matches!(self, CensorMethod::Adversarial | CensorMethod::Began)
    }
}

impl fmt::Display for CensorMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CensorMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s == "none" {
            return Ok(CensorMethod::None);
        }
        CensorMethod::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown censoring method '{s}'")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CensorConfig {
    pub method: CensorMethod,
    pub mode: CensorMode,
    pub lambda: f64,
    pub score: ScoreConfig,
    pub pair: PairPolicy,
    /// Average pairwise terms instead of summing them.
    pub pair_average: bool,
    pub mmd_lengthscale: LengthScalePolicy,
    pub began_beta: f64,
    pub began_diversity: f64,
    pub adv_steps: usize,
    /// Hidden widths of adversaries and discriminators.
    pub aux_hidden: Vec<usize>,
}

impl Default for CensorConfig {
    fn default() -> Self {
        CensorConfig {
            method: CensorMethod::None,
            mode: CensorMode::Marginal,
            lambda: 0.0,
            score: ScoreConfig::default(),
            pair: PairPolicy::Bernoulli { b: 0.5 },
            pair_average: false,
            mmd_lengthscale: LengthScalePolicy::Median,
            began_beta: 0.001,
            began_diversity: 0.5,
            adv_steps: 5,
            aux_hidden: vec![32],
        }
    }
}

impl CensorConfig {
    pub fn baseline() -> Self {
        CensorConfig::default()
    }

    pub fn new(method: CensorMethod, mode: CensorMode, lambda: f64) -> Self {
        CensorConfig { method, mode, lambda, ..CensorConfig::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be a finite non-negative number, got {}", self.lambda)));
        }
        if !(self.began_diversity > 0.0 && self.began_diversity <= 1.0) {
            return Err(Error::Config(format!("began diversity {} outside (0, 1]", self.began_diversity)));
        }
        if !(self.began_beta >= 0.0 && self.began_beta.is_finite()) {
            return Err(Error::Config(format!("began control rate {} must be non-negative", self.began_beta)));
        }
        if self.adv_steps == 0 {
            return Err(Error::Config("adv_steps must be at least 1".into()));
        }
        if self.aux_hidden.contains(&0) {
            return Err(Error::Config("auxiliary hidden widths must be positive".into()));
        }
        self.score.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.mmd_lengthscale.validate().map_err(|e| Error::Config(e.to_string()))?;
        if let PairPolicy::Bernoulli { b } = self.pair {
            if !(0.0..=1.0).contains(&b) {
                return Err(Error::Config(format!("bernoulli fraction {b} outside [0, 1]")));
            }
        }
        Ok(())
    }

    /// True when training reduces to plain ERM.
    pub fn is_inactive(&self) -> bool {
        self.method == CensorMethod::None || self.lambda == 0.0
    }

    /// Short identifier used in reports.
    pub fn label(&self) -> String {
        match self.method {
            CensorMethod::None => "baseline".into(),
            CensorMethod::Mige => format!(
                "mige/{}/lambda={}/{}/reg={}/{}",
                self.mode, self.lambda, self.score.kind, self.score.score_reg, self.score.lengthscale
            ),
            CensorMethod::PairMmd => format!("pairmmd/{}/lambda={}/{}", self.mode, self.lambda, self.pair),
            m => format!("{m}/{}/lambda={}", self.mode, self.lambda),
        }
    }
}

/// Column where the second latent half starts: `ceil(K/2)`.
pub fn split_point(k: usize) -> Result<usize> {
    if k < 2 {
        return Err(Error::Dimension(format!("complementary mode needs at least 2 latent dimensions, got {k}")));
    }
    Ok(k.div_ceil(2))
}

/// What the encoder receives from an engine.
#[derive(Clone, Debug)]
pub enum EncoderSignal {
    /// A scalar penalty and its gradient with respect to the latents.
    Scalar { value: f64, grad_z: Mat },
    /// Latent cotangents whose encoder pullback is the penalty gradient.
    Cotangents(Mat),
}

#[derive(Clone, Debug)]
pub struct PenaltyOutput {
    pub encoder: EncoderSignal,
    /// Named objectives minimized by the auxiliary models.
    pub aux_losses: Vec<(String, f64)>,
    /// Parameter gradients of the auxiliary objectives, one per auxiliary
    /// model in the order supplied.
    pub aux_grads: Vec<Vec<f64>>,
    pub control_next: Option<Vec<f64>>,
    pub terms_computed: usize,
    pub terms_skipped: usize,
}

impl PenaltyOutput {
    /// Gradient (or cotangent) with respect to the latent batch.
    pub fn latent_grad(&self) -> &Mat {
        match &self.encoder {
            EncoderSignal::Scalar { grad_z, .. } => grad_z,
            EncoderSignal::Cotangents(c) => c,
        }
    }

    /// Scalar penalty value when the engine has one.
    pub fn value(&self) -> Option<f64> {
        match &self.encoder {
            EncoderSignal::Scalar { value, .. } => Some(*value),
            EncoderSignal::Cotangents(_) => None,
        }
    }

    pub fn aux_loss(&self, name: &str) -> Option<f64> {
        self.aux_losses.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }
}

fn one_hot(y: &[usize], c: usize) -> Mat {
    Mat::from_fn(y.len(), c, |i, j| if y[i] == j { 1.0 } else { 0.0 })
}

fn check_latents(z: &Mat, labels: &BatchLabels) -> Result<()> {
    if z.rows() != labels.len() {
        return Err(Error::Dimension(format!("{} latents vs {} labels", z.rows(), labels.len())));
    }
    if z.rows() == 0 {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    Ok(())
}

/// Auxiliary network specs for a method and mode: adversaries classify the
/// subject, discriminators autoencode the (half-)latent.
pub fn aux_model_specs(cfg: &CensorConfig, k: usize, n_subjects: usize, n_classes: usize) -> Result<Vec<NetSpec>> {
    let relu = Activation::Relu;
    let widths = |inp: usize| -> Result<Vec<usize>> {
        match cfg.mode {
            CensorMode::Complementary => {
                let sp = split_point(inp)?;
                Ok(vec![sp, inp - sp])
            }
            _ => Ok(vec![inp]),
        }
    };
    match cfg.method {
        CensorMethod::Adversarial => {
            let inputs = match cfg.mode {
                CensorMode::Conditional => vec![k + n_classes],
                _ => widths(k)?,
            };
            inputs
                .into_iter()
                .map(|w| NetSpec::mlp(w, &cfg.aux_hidden, n_subjects, relu, Activation::Softmax))
                .collect()
        }
        CensorMethod::Began => widths(k)?
            .into_iter()
            .map(|w| NetSpec::mlp(w, &cfg.aux_hidden, w, relu, Activation::Identity))
            .collect(),
        _ => Ok(Vec::new()),
    }
}

fn check_aux(models: &[Model], expected: usize, inputs: &[usize]) -> Result<()> {
    if models.len() != expected {
        return Err(Error::InvalidArgument(format!("expected {expected} auxiliary models, got {}", models.len())));
    }
    for (m, &w) in models.iter().zip(inputs) {
        if m.spec.input_width() != w {
            return Err(Error::Dimension(format!(
                "auxiliary model takes {} inputs, latent block has {w}",
                m.spec.input_width()
            )));
        }
    }
    Ok(())
}

/// Weighted adversary cross entropy `sum_i a_i (-log q(s_i | input_i))`,
/// its parameter gradient, and its input gradient.
fn adversary_ce(model: &Model, input: &Mat, s: &[usize], weights: &[f64]) -> Result<(f64, Vec<f64>, Mat)> {
    if model.spec.output_width() <= *s.iter().max().unwrap_or(&0) {
        return Err(Error::InvalidArgument(format!(
            "adversary predicts {} subjects but labels reach {}",
            model.spec.output_width(),
            s.iter().max().unwrap_or(&0)
        )));
    }
    let (probs, tape) = model.forward(input)?;
    let nll = sample_nll(&probs, s)?;
    let loss: f64 = nll.iter().zip(weights).map(|(e, a)| e * a).sum();
    let mut cot = Mat::zeros(probs.rows(), probs.cols());
    for (i, &si) in s.iter().enumerate() {
        cot[(i, si)] = -weights[i] / probs[(i, si)].max(PROB_FLOOR);
    }
    let g = model.backward(&tape, &cot)?;
    Ok((loss, g.params, g.input))
}

/// Adversarial censoring. The adversary loss is the mean cross entropy
/// (per-class means summed over classes in conditional mode); the encoder
/// penalty is its negation, and in complementary mode `-CE(z1) + CE(z2)`.
pub fn adversarial_penalty(z: &Mat, labels: &BatchLabels, adversaries: &[Model], mode: CensorMode) -> Result<PenaltyOutput> {
    check_latents(z, labels)?;
    let n = z.rows();
    let k = z.cols();
    match mode {
        CensorMode::Marginal => {
            check_aux(adversaries, 1, &[k])?;
            let w = vec![1.0 / n as f64; n];
            let (loss, gp, gi) = adversary_ce(&adversaries[0], z, labels.s, &w)?;
            Ok(PenaltyOutput {
                encoder: EncoderSignal::Scalar { value: -loss, grad_z: gi.scaled(-1.0) },
                aux_losses: vec![("adversary_ce".into(), loss)],
                aux_grads: vec![gp],
                control_next: None,
                terms_computed: 1,
                terms_skipped: 0,
            })
        }
        CensorMode::Conditional => {
            check_aux(adversaries, 1, &[k + labels.n_classes])?;
            let classes = labels.by_class();
            let w: Vec<f64> = labels.y.iter().map(|&c| 1.0 / classes[c].len() as f64).collect();
            let input = Mat::hstack(z, &one_hot(labels.y, labels.n_classes))?;
            let (loss, gp, gi) = adversary_ce(&adversaries[0], &input, labels.s, &w)?;
            let computed = classes.iter().filter(|c| !c.is_empty()).count();
            Ok(PenaltyOutput {
                encoder: EncoderSignal::Scalar { value: -loss, grad_z: gi.select_cols(0, k).scaled(-1.0) },
                aux_losses: vec![("adversary_ce".into(), loss)],
                aux_grads: vec![gp],
                control_next: None,
                terms_computed: computed,
                terms_skipped: labels.n_classes - computed,
            })
        }
        CensorMode::Complementary => {
            let sp = split_point(k)?;
            check_aux(adversaries, 2, &[sp, k - sp])?;
            let w = vec![1.0 / n as f64; n];
            let (l1, gp1, gi1) = adversary_ce(&adversaries[0], &z.select_cols(0, sp), labels.s, &w)?;
            let (l2, gp2, gi2) = adversary_ce(&adversaries[1], &z.select_cols(sp, k), labels.s, &w)?;
            let mut grad = Mat::zeros(n, k);
            grad.set_cols(0, &gi1.scaled(-1.0));
            grad.set_cols(sp, &gi2);
            Ok(PenaltyOutput {
                encoder: EncoderSignal::Scalar { value: l2 - l1, grad_z: grad },
                aux_losses: vec![("adversary_ce_z1".into(), l1), ("adversary_ce_z2".into(), l2)],
                aux_grads: vec![gp1, gp2],
                control_next: None,
                terms_computed: 2,
                terms_skipped: 0,
            })
        }
    }
}

/// Scores of a fitted estimator at its own samples, or `None` when the
/// subset is too small or degenerate to fit.
fn subset_scores(z: &Mat, idx: &[usize], cfg: &ScoreConfig) -> Result<Option<Mat>> {
    if idx.len() < 2 {
        return Ok(None);
    }
    match fit_score(&z.select_rows(idx), cfg) {
        Ok(f) => Ok(Some(f.in_sample().clone())),
        Err(Error::DegenerateBatch(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Adds `scale * (MI-gradient cotangents)` for reference set `reference`
/// split into `groups`: `-(1/|R|) s_R(z_i) + (1/M') (1/|G|) s_G(z_i)`.
/// Returns (fits computed, fits skipped, whether anything was added).
fn add_mi_cotangents(
    z: &Mat,
    reference: &[usize],
    groups: &[Vec<usize>],
    cfg: &ScoreConfig,
    scale: f64,
    out: &mut Mat,
) -> Result<(usize, usize, bool)> {
    let Some(full) = subset_scores(z, reference, cfg)? else {
        return Ok((0, 1 + groups.len(), false));
    };
    let mut fits = Vec::new();
    let mut skipped = 0;
    for g in groups {
        if g.is_empty() {
            continue;
        }
        if g.len() == reference.len() {
            fits.push((g, full.clone()));
            continue;
        }
        match subset_scores(z, g, cfg)? {
            Some(s) => fits.push((g, s)),
            None => skipped += 1,
        }
    }
    if fits.is_empty() {
        return Ok((1, skipped, false));
    }
    let dim = z.cols();
    let r = reference.len() as f64;
    for (row, &i) in reference.iter().enumerate() {
        let o = out.row_mut(i);
        for d in 0..dim {
            o[d] -= scale * full[(row, d)] / r;
        }
    }
    let m = fits.len() as f64;
    for (g, s) in &fits {
        let gl = g.len() as f64;
        for (row, &i) in g.iter().enumerate() {
            let o = out.row_mut(i);
            for d in 0..dim {
                o[d] += scale * s[(row, d)] / (m * gl);
            }
        }
    }
    Ok((1 + fits.len(), skipped, true))
}

fn mige_block(z: &Mat, labels: &BatchLabels, cfg: &ScoreConfig, conditional: bool) -> Result<(Mat, usize, usize)> {
    if !conditional {
        let mut out = Mat::zeros(z.rows(), z.cols());
        let all: Vec<usize> = (0..z.rows()).collect();
        let (c, s, added) = add_mi_cotangents(z, &all, &labels.by_subject(), cfg, 1.0, &mut out)?;
        if !added {
            return Err(Error::NoComputableTerms("no subject subset admits a score fit".into()));
        }
        return Ok((out, c, s));
    }
    let classes = labels.by_class();
    let cells = labels.by_class_subject();
    // count usable classes first so the class weight is 1/C'
    let mut plan = Vec::new();
    let mut skipped = 0;
    for (c, idx) in classes.iter().enumerate() {
        if idx.len() >= 2 && cells[c].iter().any(|g| g.len() >= 2) {
            plan.push(c);
        } else if !idx.is_empty() {
            skipped += 1;
        }
    }
    let mut computed = 0;
    let mut used = Vec::new();
    for &c in &plan {
        let mut part = Mat::zeros(z.rows(), z.cols());
        let (cc, ss, added) = add_mi_cotangents(z, &classes[c], &cells[c], cfg, 1.0, &mut part)?;
        computed += cc;
        skipped += ss;
        if added {
            used.push(part);
        }
    }
    if used.is_empty() {
        return Err(Error::NoComputableTerms("no class subset admits a score fit".into()));
    }
    let w = 1.0 / used.len() as f64;
    let mut out = Mat::zeros(z.rows(), z.cols());
    for part in &used {
        out.add_scaled(part, w)?;
    }
    Ok((out, computed, skipped))
}

/// MIGE censoring: latent cotangents of the estimated mutual information
/// gradient. Complementary mode returns `+dI(z1;s)` on the first half and
/// `-dI(z2;s)` on the second.
pub fn mige_penalty(z: &Mat, labels: &BatchLabels, cfg: &ScoreConfig, mode: CensorMode) -> Result<PenaltyOutput> {
    check_latents(z, labels)?;
    let (cot, computed, skipped) = match mode {
        CensorMode::Marginal => mige_block(z, labels, cfg, false)?,
        CensorMode::Conditional => mige_block(z, labels, cfg, true)?,
        CensorMode::Complementary => {
            let k = z.cols();
            let sp = split_point(k)?;
            let (c1, n1, s1) = mige_block(&z.select_cols(0, sp), labels, cfg, false)?;
            let (c2, n2, s2) = mige_block(&z.select_cols(sp, k), labels, cfg, false)?;
            let mut cot = Mat::zeros(z.rows(), k);
            cot.set_cols(0, &c1);
            cot.set_cols(sp, &c2.scaled(-1.0));
            (cot, n1 + n2, s1 + s2)
        }
    };
    Ok(PenaltyOutput {
        encoder: EncoderSignal::Cotangents(cot),
        aux_losses: Vec::new(),
        aux_grads: Vec::new(),
        control_next: None,
        terms_computed: computed,
        terms_skipped: skipped,
    })
}

/// BEGAN control trade-off state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeganControl {
    /// One value, or two in complementary mode.
    pub k: Vec<f64>,
    pub beta: f64,
    pub diversity: f64,
}

impl BeganControl {
    pub fn new(mode: CensorMode, beta: f64, diversity: f64) -> Self {
        let n = if mode == CensorMode::Complementary { 2 } else { 1 };
        BeganControl { k: vec![0.0; n], beta, diversity }
    }
}

/// `clip(k + beta (diversity L_real - L_sub), 0, 1)`.
pub fn began_control_update(k: f64, beta: f64, diversity: f64, l_real: f64, l_sub: f64) -> f64 {
    (k + beta * (diversity * l_real - l_sub)).clamp(0.0, 1.0)
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Per-sample weights realizing `L_AE` sums: `real` gives the reference
/// loss, `sub` the 1/M'-scaled subset losses.
struct AeWeights {
    real: Vec<f64>,
    sub: Vec<f64>,
    computed: usize,
    skipped: usize,
}

fn ae_weights(labels: &BatchLabels, conditional: bool) -> AeWeights {
    let n = labels.len();
    let mut real = vec![0.0; n];
    let mut sub = vec![0.0; n];
    let mut computed = 0;
    let mut skipped = 0;
    let mut add_group = |reference: &[usize], groups: &[Vec<usize>], real: &mut [f64], sub: &mut [f64]| {
        for &i in reference {
            real[i] += 1.0 / reference.len() as f64;
        }
        let present: Vec<&Vec<usize>> = groups.iter().filter(|g| !g.is_empty()).collect();
        skipped += groups.len() - present.len();
        computed += 1 + present.len();
        let m = present.len() as f64;
        for g in present {
            for &i in g {
                sub[i] += 1.0 / (m * g.len() as f64);
            }
        }
    };
    if conditional {
        let cells = labels.by_class_subject();
        for (c, idx) in labels.by_class().iter().enumerate() {
            if !idx.is_empty() {
                add_group(idx, &cells[c], &mut real, &mut sub);
            }
        }
    } else {
        let all: Vec<usize> = (0..n).collect();
        add_group(&all, &labels.by_subject(), &mut real, &mut sub);
    }
    AeWeights { real, sub, computed, skipped }
}

struct AeEval {
    l_real: f64,
    l_sub: f64,
    /// d/d(D params) of sum_i disc_w_i a_i
    disc_grad: Vec<f64>,
    /// d/dz of sum_i enc_w_i a_i
    enc_grad_z: Mat,
}

/// Evaluates the autoencoder losses on one latent block. `a_i` is the mean
/// absolute reconstruction error of sample `i`.
fn ae_eval(disc: &Model, zb: &Mat, w: &AeWeights, k: f64, enc_real: f64, enc_sub: f64) -> Result<AeEval> {
    let (recon, tape) = disc.forward(zb)?;
    let dim = zb.cols() as f64;
    let mut a = vec![0.0; zb.rows()];
    let mut sg = Mat::zeros(zb.rows(), zb.cols());
    for i in 0..zb.rows() {
        for d in 0..zb.cols() {
            let r = zb[(i, d)] - recon[(i, d)];
            a[i] += r.abs() / dim;
            sg[(i, d)] = sign(r) / dim;
        }
    }
    let l_real: f64 = a.iter().zip(&w.real).map(|(x, y)| x * y).sum();
    let l_sub: f64 = a.iter().zip(&w.sub).map(|(x, y)| x * y).sum();

    let scaled_rows = |coef: &dyn Fn(usize) -> f64| -> Mat { Mat::from_fn(sg.rows(), sg.cols(), |i, d| coef(i) * sg[(i, d)]) };
    // d a_i / d recon = -sign / dim
    let disc_cot = scaled_rows(&|i| -(w.real[i] - k * w.sub[i]));
    let disc_grad = disc.backward(&tape, &disc_cot)?.params;
    let enc_direct = scaled_rows(&|i| enc_real * w.real[i] + enc_sub * w.sub[i]);
    let through = disc.backward(&tape, &enc_direct.scaled(-1.0))?.input;
    let mut enc_grad_z = enc_direct;
    enc_grad_z.add_scaled(&through, 1.0)?;
    Ok(AeEval { l_real, l_sub, disc_grad, enc_grad_z })
}

/// BEGAN-discriminator censoring. Subset losses are scaled by one over the
/// number of non-empty subsets.
pub fn began_penalty(
    z: &Mat,
    labels: &BatchLabels,
    discriminators: &[Model],
    control: &BeganControl,
    mode: CensorMode,
) -> Result<PenaltyOutput> {
    check_latents(z, labels)?;
    let k = z.cols();
    let expect = if mode == CensorMode::Complementary { 2 } else { 1 };
    if control.k.len() != expect {
        return Err(Error::InvalidArgument(format!("{} control values for {mode} mode", control.k.len())));
    }
    if control.k.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::InvalidArgument(format!("control values {:?} outside [0, 1]", control.k)));
    }
    let (beta, gamma) = (control.beta, control.diversity);
    match mode {
        CensorMode::Marginal | CensorMode::Conditional => {
            check_aux(discriminators, 1, &[k])?;
            let w = ae_weights(labels, mode == CensorMode::Conditional);
            let kp = control.k[0];
            let ev = ae_eval(&discriminators[0], z, &w, kp, 0.0, 1.0)?;
            let l_disc = ev.l_real - kp * ev.l_sub;
            Ok(PenaltyOutput {
                encoder: EncoderSignal::Scalar { value: ev.l_sub, grad_z: ev.enc_grad_z },
                aux_losses: vec![("disc_objective".into(), l_disc), ("ae_real".into(), ev.l_real), ("ae_sub".into(), ev.l_sub)],
                aux_grads: vec![ev.disc_grad],
                control_next: Some(vec![began_control_update(kp, beta, gamma, ev.l_real, ev.l_sub)]),
                terms_computed: w.computed,
                terms_skipped: w.skipped,
            })
        }
        CensorMode::Complementary => {
            let sp = split_point(k)?;
            check_aux(discriminators, 2, &[sp, k - sp])?;
            let w = ae_weights(labels, false);
            let (k1, k2) = (control.k[0], control.k[1]);
            let e1 = ae_eval(&discriminators[0], &z.select_cols(0, sp), &w, k1, 0.0, 1.0)?;
            let e2 = ae_eval(&discriminators[1], &z.select_cols(sp, k), &w, k2, 1.0, -k2)?;
            let l_disc = (e1.l_real - k1 * e1.l_sub) + (e2.l_real - k2 * e2.l_sub);
            let l_enc = e1.l_sub + (e2.l_real - k2 * e2.l_sub);
            let mut grad = Mat::zeros(z.rows(), k);
            grad.set_cols(0, &e1.enc_grad_z);
            grad.set_cols(sp, &e2.enc_grad_z);
            Ok(PenaltyOutput {
                encoder: EncoderSignal::Scalar { value: l_enc, grad_z: grad },
                aux_losses: vec![
                    ("disc_objective".into(), l_disc),
                    ("ae_real_z1".into(), e1.l_real),
                    ("ae_sub_z1".into(), e1.l_sub),
                    ("ae_real_z2".into(), e2.l_real),
                    ("ae_sub_z2".into(), e2.l_sub),
                ],
                aux_grads: vec![e1.disc_grad, e2.disc_grad],
                control_next: Some(vec![
                    began_control_update(k1, beta, gamma, e1.l_real, e1.l_sub),
                    began_control_update(k2, beta, gamma, e2.l_real, e2.l_sub),
                ]),
                terms_computed: 2 * w.computed,
                terms_skipped: 2 * w.skipped,
            })
        }
    }
}

/// Encoder signal from an MMD result. In complementary mode the encoder
/// minimizes the first-half divergence and maximizes the second.
pub fn mmd_encoder_output(res: MmdPenaltyResult) -> Result<PenaltyOutput> {
    let (value, grad_z) = match res.penalty {
        MmdPenalty::Single(v) => (v, res.grads[0].clone()),
        MmdPenalty::Complementary { penalty_z1, penalty_z2 } => {
            let mut g = res.grads[0].clone();
            g.add_scaled(&res.grads[1], -1.0)?;
            (penalty_z1 - penalty_z2, g)
        }
    };
    let aux_losses = match res.penalty {
        MmdPenalty::Single(v) => vec![("mmd".into(), v)],
        MmdPenalty::Complementary { penalty_z1, penalty_z2 } => {
            vec![("mmd_z1".into(), penalty_z1), ("mmd_z2".into(), penalty_z2)]
        }
    };
    Ok(PenaltyOutput {
        encoder: EncoderSignal::Scalar { value, grad_z },
        aux_losses,
        aux_grads: Vec::new(),
        control_next: None,
        terms_computed: res.terms_computed,
        terms_skipped: res.terms_skipped,
    })
}

/// Runs the engine selected by `cfg`.
pub fn evaluate<R: Rng + ?Sized>(
    cfg: &CensorConfig,
    z: &Mat,
    labels: &BatchLabels,
    aux: &[Model],
    control: Option<&BeganControl>,
    rng: &mut R,
) -> Result<PenaltyOutput> {
    match cfg.method {
        CensorMethod::None => Ok(PenaltyOutput {
            encoder: EncoderSignal::Scalar { value: 0.0, grad_z: Mat::zeros(z.rows(), z.cols()) },
            aux_losses: Vec::new(),
            aux_grads: Vec::new(),
            control_next: None,
            terms_computed: 0,
            terms_skipped: 0,
        }),
        CensorMethod::Adversarial => adversarial_penalty(z, labels, aux, cfg.mode),
        CensorMethod::Mige => mige_penalty(z, labels, &cfg.score, cfg.mode),
        CensorMethod::Mmd => mmd_encoder_output(mmd_penalty(z, labels, cfg.mode, &cfg.mmd_lengthscale)?),
        CensorMethod::PairMmd => mmd_encoder_output(pairmmd_penalty(
            z,
            labels,
            cfg.mode,
            &cfg.pair,
            &cfg.mmd_lengthscale,
            cfg.pair_average,
            rng,
        )?),
        CensorMethod::Began => {
            let control = control.ok_or_else(|| Error::InvalidArgument("BEGAN censoring needs control state".into()))?;
            began_penalty(z, labels, aux, control, cfg.mode)
        }
    }
}
