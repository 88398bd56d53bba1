//! Hyperparameter grid, tuning on a fixed split, cross-subject validation,
//! quantile-based method selection, and report rendering.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::censoring::{split_point, CensorConfig, CensorMethod, CensorMode};
use crate::data::{loso_split, TrialSet};
use crate::divergence::PairPolicy;
use crate::error::{Error, Result};
use crate::numerics::{quantile, LengthScalePolicy, DEFAULT_PERPLEXITY};
use crate::score::ScoreEstimatorKind;
use crate::training::{evaluate_task, subject_probe, train, ProbeSpec, TrainConfig};
use crate::neural::class_weights;

/// Search axes. Score-estimator axes apply to MIGE only and pair policies to
/// pairwise MMD only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperGrid {
    pub methods: Vec<CensorMethod>,
    pub modes: Vec<CensorMode>,
    /// Penalty weights for adversarial, MIGE and BEGAN censoring.
    pub lambdas: Vec<f64>,
    /// Penalty weights for MMD and pairwise MMD.
    pub lambdas_mmd: Vec<f64>,
    pub score_kinds: Vec<ScoreEstimatorKind>,
    pub score_regs: Vec<f64>,
    pub lengthscales: Vec<LengthScalePolicy>,
    /// Empty means `bernoulli:0.5` and `clique:min(4, M)`.
    pub pair_policies: Vec<PairPolicy>,
}

impl Default for HyperGrid {
    fn default() -> Self {
        HyperGrid {
            methods: vec![
                CensorMethod::Adversarial,
                CensorMethod::Mige,
                CensorMethod::Mmd,
                CensorMethod::PairMmd,
                CensorMethod::Began,
            ],
            modes: CensorMode::ALL.to_vec(),
            lambdas: vec![1.0, 0.3, 0.1, 0.03, 0.01],
            lambdas_mmd: vec![1.0, 3.0, 10.0, 30.0, 100.0],
            score_kinds: ScoreEstimatorKind::ALL.to_vec(),
            score_regs: vec![0.01, 0.001, 0.0001],
            lengthscales: vec![LengthScalePolicy::Median, LengthScalePolicy::Perplexity { target: DEFAULT_PERPLEXITY }],
            pair_policies: Vec::new(),
        }
    }
}

impl HyperGrid {
    pub fn lambdas_for(&self, method: CensorMethod) -> &[f64] {
        match method {
            CensorMethod::Mmd | CensorMethod::PairMmd => &self.lambdas_mmd,
            CensorMethod::None => &[],
            _ => &self.lambdas,
        }
    }

    /// Every configuration, in enumeration order: method, mode, lambda,
    /// then method-specific axes. Estimators without a regularization or
    /// length-scale knob appear once per lambda.
    pub fn configs(&self, base: &CensorConfig, n_subjects: usize) -> Result<Vec<CensorConfig>> {
        let pair_policies = if self.pair_policies.is_empty() {
            vec![PairPolicy::Bernoulli { b: 0.5 }, PairPolicy::Clique { d: n_subjects.min(4) }]
        } else {
            self.pair_policies.clone()
        };
        let mut out = Vec::new();
        for &method in &self.methods {
            if method == CensorMethod::None {
                continue;
            }
            for &mode in &self.modes {
                for &lambda in self.lambdas_for(method) {
                    let cfg = CensorConfig { method, mode, lambda, ..base.clone() };
                    match method {
                        CensorMethod::Mige => {
                            for &kind in &self.score_kinds {
                                let tunable = kind.is_regularized();
                                let regs: &[f64] = if tunable { &self.score_regs } else { &self.score_regs[..self.score_regs.len().min(1)] };
                                let scales: Vec<LengthScalePolicy> = if kind == ScoreEstimatorKind::MigeDefault {
                                    vec![LengthScalePolicy::Median]
                                } else {
                                    self.lengthscales.clone()
                                };
                                for &reg in regs {
                                    for ls in &scales {
                                        let mut c = cfg.clone();
                                        c.score.kind = kind;
                                        c.score.score_reg = reg;
                                        c.score.lengthscale = ls.clone();
                                        out.push(c);
                                    }
                                }
                            }
                        }
                        CensorMethod::PairMmd => {
                            for p in &pair_policies {
                                out.push(CensorConfig { pair: *p, ..cfg.clone() });
                            }
                        }
                        _ => out.push(cfg),
                    }
                }
            }
        }
        for c in &out {
            c.validate()?;
        }
        Ok(out)
    }
}

fn fold_seed(seed: u64, fold: usize) -> u64 {
    seed ^ (fold as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuneEntry {
    pub id: usize,
    pub config: CensorConfig,
    pub val_bal_acc: f64,
    pub test_bal_acc: f64,
    pub best_epoch: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuneReport {
    pub val_subject: usize,
    pub test_subject: usize,
    pub entries: Vec<TuneEntry>,
    /// Best configurations per method, methods in grid order.
    pub top: BTreeMap<String, Vec<usize>>,
}

impl TuneReport {
    pub fn top_configs(&self) -> Vec<CensorConfig> {
        let mut ids: Vec<usize> = self.top.values().flatten().copied().collect();
        ids.sort_unstable();
        ids.into_iter().map(|i| self.entries[i].config.clone()).collect()
    }
}

/// Trains every configuration on one fixed split and keeps the `top_k`
/// per method by validation balanced accuracy (ties: smaller lambda, then
/// enumeration order).
pub fn tune(
    ts: &TrialSet,
    configs: &[CensorConfig],
    base: &TrainConfig,
    split: (usize, usize),
    seed: u64,
    top_k: usize,
) -> Result<TuneReport> {
    if configs.is_empty() {
        return Err(Error::Config("the tuning grid is empty".into()));
    }
    if ts.subjects_present().len() < 3 {
        return Err(Error::InvalidArgument("tuning needs at least 3 subjects".into()));
    }
    let (tr, va, te) = loso_split(ts, split.0, split.1)?;
    let weights = class_weights(&tr.class_counts())?;
    let entries: Vec<TuneEntry> = configs
        .par_iter()
        .enumerate()
        .map(|(id, c)| {
            let cfg = TrainConfig { censor: c.clone(), seed, ..base.clone() };
            let res = train(&tr, &va, &cfg)?;
            let (_, test_bal_acc) = evaluate_task(&res.best, &te, &weights)?;
            Ok(TuneEntry {
                id,
                config: c.clone(),
                val_bal_acc: res.best_record().val_bal_acc,
                test_bal_acc,
                best_epoch: res.best_epoch,
            })
        })
        .collect::<Result<_>>()?;
    let mut top: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    let mut by_method: BTreeMap<CensorMethod, Vec<&TuneEntry>> = BTreeMap::new();
    for e in &entries {
        by_method.entry(e.config.method).or_default().push(e);
    }
    for (method, mut list) in by_method {
        list.sort_by(|a, b| {
            b.val_bal_acc
                .total_cmp(&a.val_bal_acc)
                .then(a.config.lambda.total_cmp(&b.config.lambda))
                .then(a.id.cmp(&b.id))
        });
        top.insert(method.name().to_string(), list.iter().take(top_k).map(|e| e.id).collect());
    }
    Ok(TuneReport { val_subject: split.0, test_subject: split.1, entries, top })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldRecord {
    pub fold: usize,
    pub val_subject: usize,
    pub test_subject: usize,
    pub val_bal_acc: f64,
    pub test_bal_acc: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub runtime_secs: f64,
    /// Subject probe on the training subjects' latents.
    pub probe_acc: Option<f64>,
    /// Probes on the two latent halves.
    pub probe_acc_halves: Option<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvEntry {
    pub id: usize,
    pub label: String,
    pub config: CensorConfig,
    pub folds: Vec<FoldRecord>,
}

impl CvEntry {
    pub fn val_scores(&self) -> Vec<f64> {
        self.folds.iter().map(|f| f.val_bal_acc).collect()
    }

    pub fn test_scores(&self) -> Vec<f64> {
        self.folds.iter().map(|f| f.test_bal_acc).collect()
    }

    pub fn is_baseline(&self) -> bool {
        self.config.is_inactive()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub seed: u64,
    pub subject_names: Vec<String>,
    pub entries: Vec<CvEntry>,
}

impl CvReport {
    pub fn baseline(&self) -> Option<&CvEntry> {
        self.entries.iter().find(|e| e.is_baseline())
    }

    /// Equality ignoring wall-clock runtimes.
    pub fn same_scores(&self, other: &CvReport) -> bool {
        let strip = |r: &CvReport| {
            let mut r = r.clone();
            r.entries.iter_mut().flat_map(|e| e.folds.iter_mut()).for_each(|f| f.runtime_secs = 0.0);
            r
        };
        strip(self) == strip(other)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvOptions {
    /// Probe spec; probes are skipped when absent.
    pub probe: Option<ProbeSpec>,
}

impl Default for CvOptions {
    fn default() -> Self {
        CvOptions { probe: None }
    }
}

/// `(val, test)` subject pairs: every present subject is tested once and
/// validated by the next present subject, cyclically.
pub fn fold_rotation(ts: &TrialSet) -> Vec<(usize, usize)> {
    let present = ts.subjects_present();
    let m = present.len();
    (0..m).map(|t| (present[(t + 1) % m], present[t])).collect()
}

fn run_fold(ts: &TrialSet, cfg: &CensorConfig, base: &TrainConfig, fold: usize, split: (usize, usize), seed: u64, opts: &CvOptions) -> Result<FoldRecord> {
    let start = Instant::now();
    let (tr, va, te) = loso_split(ts, split.0, split.1)?;
    let weights = class_weights(&tr.class_counts())?;
    let tcfg = TrainConfig { censor: cfg.clone(), seed: fold_seed(seed, fold), ..base.clone() };
    let res = train(&tr, &va, &tcfg)?;
    let (_, test_bal_acc) = evaluate_task(&res.best, &te, &weights)?;
    let (mut probe_acc, mut probe_acc_halves) = (None, None);
    if let Some(spec) = &opts.probe {
        let z = res.best.encode(&tr.x)?;
        let pseed = fold_seed(seed, fold).wrapping_add(1);
        probe_acc = Some(subject_probe(&z, &tr.s, spec, pseed)?);
        if z.cols() >= 2 {
            let sp = split_point(z.cols())?;
            probe_acc_halves = Some((
                subject_probe(&z.select_cols(0, sp), &tr.s, spec, pseed)?,
                subject_probe(&z.select_cols(sp, z.cols()), &tr.s, spec, pseed)?,
            ));
        }
    }
    Ok(FoldRecord {
        fold,
        val_subject: split.0,
        test_subject: split.1,
        val_bal_acc: res.best_record().val_bal_acc,
        test_bal_acc,
        best_epoch: res.best_epoch,
        epochs_run: res.history.len(),
        runtime_secs: start.elapsed().as_secs_f64(),
        probe_acc,
        probe_acc_halves,
    })
}

/// Cross-subject validation of `configs` plus a lambda = 0 baseline. The
/// run seed depends only on `(seed, fold)`.
pub fn cross_validate(ts: &TrialSet, configs: &[CensorConfig], base: &TrainConfig, seed: u64, opts: &CvOptions) -> Result<CvReport> {
    if ts.subjects_present().len() < 3 {
        return Err(Error::InvalidArgument("cross-validation needs at least 3 subjects".into()));
    }
    let mut all = vec![CensorConfig { method: CensorMethod::None, lambda: 0.0, ..base.censor.clone() }];
    all.extend(configs.iter().filter(|c| !c.is_inactive()).cloned());
    let folds = fold_rotation(ts);
    let jobs: Vec<(usize, usize)> = (0..all.len()).flat_map(|e| (0..folds.len()).map(move |f| (e, f))).collect();
    let records: Vec<FoldRecord> = jobs
        .par_iter()
        .map(|&(e, f)| run_fold(ts, &all[e], base, f, folds[f], seed, opts))
        .collect::<Result<_>>()?;
    let mut entries: Vec<CvEntry> = all
        .into_iter()
        .enumerate()
        .map(|(id, config)| CvEntry { id, label: config.label(), config, folds: Vec::new() })
        .collect();
    for (&(e, _), rec) in jobs.iter().zip(records) {
        entries[e].folds.push(rec);
    }
    Ok(CvReport { seed, subject_names: ts.meta.subject_names.clone(), entries })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub entry_id: usize,
    pub label: String,
    pub method: CensorMethod,
    pub quantile: f64,
    pub score: f64,
    pub baseline_score: Option<f64>,
}

/// Picks the entry whose validation-accuracy quantile is highest. Ties go
/// to the baseline, then to the lexicographically first method name, then
/// label.
pub fn autotransfer_select(report: &CvReport, q: f64) -> Result<Selection> {
    if report.entries.is_empty() {
        return Err(Error::InvalidArgument("empty report".into()));
    }
    let mut scored = Vec::with_capacity(report.entries.len());
    for e in &report.entries {
        if e.folds.is_empty() {
            return Err(Error::InvalidArgument(format!("entry '{}' has no folds", e.label)));
        }
        scored.push((e, quantile(&e.val_scores(), q)?));
    }
    let best = scored.iter().map(|(_, v)| *v).fold(f64::NEG_INFINITY, f64::max);
    let (winner, score) = scored
        .iter()
        .filter(|(_, v)| *v == best)
        .min_by(|(a, _), (b, _)| {
            b.is_baseline()
                .cmp(&a.is_baseline())
                .then(a.config.method.name().cmp(b.config.method.name()))
                .then(a.label.cmp(&b.label))
        })
        .copied()
        .expect("non-empty");
    let baseline_score = scored.iter().find(|(e, _)| e.is_baseline()).map(|(_, v)| *v);
    Ok(Selection { entry_id: winner.id, label: winner.label.clone(), method: winner.config.method, quantile: q, score, baseline_score })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub mean: f64,
}

fn quartiles(v: &[f64]) -> Result<Quartiles> {
    Ok(Quartiles {
        q25: quantile(v, 0.25)?,
        median: quantile(v, 0.5)?,
        q75: quantile(v, 0.75)?,
        mean: v.iter().sum::<f64>() / v.len() as f64,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntrySummary {
    pub id: usize,
    pub label: String,
    pub method: String,
    pub mode: String,
    pub lambda: f64,
    pub val: Quartiles,
    pub test: Quartiles,
    pub selection_score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub selection: Selection,
    pub entries: Vec<EntrySummary>,
    /// Highest-scoring entry id per method.
    pub best_per_method: BTreeMap<String, usize>,
}

pub fn summarize(report: &CvReport, q: f64) -> Result<ReportSummary> {
    let selection = autotransfer_select(report, q)?;
    let mut entries = Vec::new();
    let mut best_per_method: BTreeMap<String, (usize, f64)> = BTreeMap::new();
    for e in &report.entries {
        let score = quantile(&e.val_scores(), q)?;
        let name = e.config.method.name().to_string();
        let slot = best_per_method.entry(name.clone()).or_insert((e.id, score));
        if score > slot.1 {
            *slot = (e.id, score);
        }
        entries.push(EntrySummary {
            id: e.id,
            label: e.label.clone(),
            method: name,
            mode: e.config.mode.to_string(),
            lambda: e.config.lambda,
            val: quartiles(&e.val_scores())?,
            test: quartiles(&e.test_scores())?,
            selection_score: score,
        });
    }
    Ok(ReportSummary { selection, entries, best_per_method: best_per_method.into_iter().map(|(k, v)| (k, v.0)).collect() })
}

const W: f64 = 720.0;
const H: f64 = 420.0;
const PAD_L: f64 = 60.0;
const PAD_R: f64 = 20.0;
const PAD_T: f64 = 30.0;
const PAD_B: f64 = 110.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn y_axis(svg: &mut String, lo: f64, hi: f64, title: &str) {
    let plot_h = H - PAD_T - PAD_B;
    for k in 0..=4 {
        let v = lo + (hi - lo) * k as f64 / 4.0;
        let y = PAD_T + plot_h * (1.0 - k as f64 / 4.0);
        let _ = writeln!(svg, r##"<line x1="{PAD_L}" x2="{}" y1="{y:.1}" y2="{y:.1}" stroke="#ddd"/>"##, W - PAD_R);
        let _ = writeln!(svg, r#"<text x="{}" y="{:.1}" font-size="11" text-anchor="end">{v:.2}</text>"#, PAD_L - 6.0, y + 4.0);
    }
    let _ = writeln!(
        svg,
        r#"<text x="14" y="{:.1}" font-size="12" transform="rotate(-90 14 {:.1})" text-anchor="middle">{}</text>"#,
        PAD_T + plot_h / 2.0,
        PAD_T + plot_h / 2.0,
        escape(title)
    );
}

fn score_range(report: &CvReport) -> (f64, f64) {
    let all: Vec<f64> = report.entries.iter().flat_map(|e| e.test_scores()).collect();
    let lo = all.iter().cloned().fold(1.0, f64::min);
    let hi = all.iter().cloned().fold(0.0, f64::max);
    let lo = ((lo - 0.05) * 10.0).floor() / 10.0;
    let hi = ((hi + 0.05) * 10.0).ceil() / 10.0;
    (lo.max(0.0), hi.min(1.0).max(lo.max(0.0) + 0.1))
}

/// Per-entry fold test scores with a mean marker.
pub fn strip_plot_svg(report: &CvReport) -> String {
    let (lo, hi) = score_range(report);
    let plot_w = W - PAD_L - PAD_R;
    let plot_h = H - PAD_T - PAD_B;
    let ypos = |v: f64| PAD_T + plot_h * (1.0 - (v - lo) / (hi - lo));
    let n = report.entries.len().max(1) as f64;
    let mut svg = format!(r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif">"#);
    svg.push('\n');
    let _ = writeln!(svg, r#"<text x="{}" y="18" font-size="14" text-anchor="middle">Test balanced accuracy per fold</text>"#, W / 2.0);
    y_axis(&mut svg, lo, hi, "balanced accuracy");
    for (k, e) in report.entries.iter().enumerate() {
        let cx = PAD_L + plot_w * (k as f64 + 0.5) / n;
        let color = PALETTE[k % PALETTE.len()];
        let scores = e.test_scores();
        for (j, v) in scores.iter().enumerate() {
            let jitter = (j as f64 - scores.len() as f64 / 2.0) * 3.0;
            let _ = writeln!(svg, r#"<circle cx="{:.1}" cy="{:.1}" r="3.5" fill="{color}" fill-opacity="0.7"/>"#, cx + jitter, ypos(*v));
        }
        let mean = scores.iter().sum::<f64>() / scores.len().max(1) as f64;
        let _ = writeln!(svg, r##"<line x1="{:.1}" x2="{:.1}" y1="{:.1}" y2="{:.1}" stroke="#000" stroke-width="2"/>"##, cx - 12.0, cx + 12.0, ypos(mean), ypos(mean));
        let ty = H - PAD_B + 12.0;
        let _ = writeln!(
            svg,
            r#"<text x="{cx:.1}" y="{ty:.1}" font-size="10" text-anchor="end" transform="rotate(-40 {cx:.1} {ty:.1})">{}</text>"#,
            escape(&e.label)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Test accuracy per test subject, subjects sorted by baseline accuracy.
pub fn subject_curves_svg(report: &CvReport) -> String {
    let (lo, hi) = score_range(report);
    let plot_w = W - PAD_L - PAD_R;
    let plot_h = H - PAD_T - PAD_B;
    let ypos = |v: f64| PAD_T + plot_h * (1.0 - (v - lo) / (hi - lo));
    let mut subjects: Vec<usize> = report.entries.first().map(|e| e.folds.iter().map(|f| f.test_subject).collect()).unwrap_or_default();
    if let Some(base) = report.baseline() {
        let acc = |m: usize| base.folds.iter().find(|f| f.test_subject == m).map_or(0.0, |f| f.test_bal_acc);
        subjects.sort_by(|&a, &b| acc(a).total_cmp(&acc(b)).then(a.cmp(&b)));
    }
    let n = subjects.len().max(2) as f64;
    let xpos = |k: usize| PAD_L + plot_w * k as f64 / (n - 1.0);
    let mut svg = format!(r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif">"#);
    svg.push('\n');
    let _ = writeln!(svg, r#"<text x="{}" y="18" font-size="14" text-anchor="middle">Test accuracy by held-out subject</text>"#, W / 2.0);
    y_axis(&mut svg, lo, hi, "balanced accuracy");
    for (k, &m) in subjects.iter().enumerate() {
        let name = report.subject_names.get(m).cloned().unwrap_or_else(|| m.to_string());
        let _ = writeln!(svg, r#"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="middle">{}</text>"#, xpos(k), H - PAD_B + 14.0, escape(&name));
    }
    for (k, e) in report.entries.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let pts: Vec<String> = subjects
            .iter()
            .enumerate()
            .filter_map(|(j, &m)| e.folds.iter().find(|f| f.test_subject == m).map(|f| format!("{:.1},{:.1}", xpos(j), ypos(f.test_bal_acc))))
            .collect();
        let width = if e.is_baseline() { 2.5 } else { 1.5 };
        let _ = writeln!(svg, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="{width}"/>"#, pts.join(" "));
        let ly = H - PAD_B + 34.0 + 12.0 * (k % 6) as f64;
        let lx = PAD_L + 230.0 * (k / 6) as f64;
        let _ = writeln!(svg, r#"<rect x="{lx:.1}" y="{:.1}" width="10" height="3" fill="{color}"/>"#, ly - 4.0);
        let _ = writeln!(svg, r#"<text x="{:.1}" y="{ly:.1}" font-size="10">{}</text>"#, lx + 14.0, escape(&e.label));
    }
    svg.push_str("</svg>\n");
    svg
}

/// Writes `folds.csv`, `summary.json`, `cv_report.json`,
/// `fold_scores.svg` and `subject_curves.svg` into `out_dir`.
pub fn emit_report(report: &CvReport, q: f64, out_dir: &Path) -> Result<Vec<PathBuf>> {
    if report.entries.is_empty() {
        return Err(Error::InvalidArgument("nothing to render: the report has no entries".into()));
    }
    let summary = summarize(report, q)?;
    fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();

    let csv_path = out_dir.join("folds.csv");
    let mut w = csv::Writer::from_path(&csv_path)?;
    w.write_record([
        "entry_id", "label", "method", "mode", "lambda", "fold", "val_subject", "test_subject", "val_bal_acc", "test_bal_acc",
        "best_epoch", "epochs_run", "probe_acc",
    ])?;
    let name = |m: usize| report.subject_names.get(m).cloned().unwrap_or_else(|| m.to_string());
    for e in &report.entries {
        for f in &e.folds {
            w.write_record([
                e.id.to_string(),
                e.label.clone(),
                e.config.method.name().to_string(),
                e.config.mode.to_string(),
                e.config.lambda.to_string(),
                f.fold.to_string(),
                name(f.val_subject),
                name(f.test_subject),
                f.val_bal_acc.to_string(),
                f.test_bal_acc.to_string(),
                f.best_epoch.to_string(),
                f.epochs_run.to_string(),
                f.probe_acc.map(|v| v.to_string()).unwrap_or_default(),
            ])?;
        }
    }
    w.flush()?;
    written.push(csv_path);

    let summary_path = out_dir.join("summary.json");
    fs::write(&summary_path, serde_json::to_vec_pretty(&summary)?)?;
    written.push(summary_path);
    let report_path = out_dir.join("cv_report.json");
    fs::write(&report_path, serde_json::to_vec_pretty(report)?)?;
    written.push(report_path);
    let strip = out_dir.join("fold_scores.svg");
    fs::write(&strip, strip_plot_svg(report))?;
    written.push(strip);
    let curves = out_dir.join("subject_curves.svg");
    fs::write(&curves, subject_curves_svg(report))?;
    written.push(curves);
    Ok(written)
}
