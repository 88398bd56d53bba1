use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use autotransfer::autotransfer::{autotransfer_select, cross_validate, emit_report, fold_rotation, tune, CvOptions, CvReport, HyperGrid, TuneReport};
use autotransfer::censoring::{CensorMethod, CensorMode};
use autotransfer::data::{load_dataset, loso_split, save_dataset, synth_generate, zscore_trials, SynthConfig, TableSchema, TrialSet};
use autotransfer::divergence::PairPolicy;
use autotransfer::neural::{class_weights, Checkpoint};
use autotransfer::score::ScoreEstimatorKind;
use autotransfer::training::{evaluate_task, subject_probe, train, write_history_jsonl, ProbeSpec, TrainConfig};
use autotransfer::{Error, LengthScalePolicy, Result};

/// Config file layout. Every section is optional.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RunConfig {
    data: DataSection,
    synth: SynthConfig,
    train: TrainConfig,
    grid: HyperGrid,
    select: SelectSection,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct DataSection {
    path: Option<PathBuf>,
    schema: TableSchema,
    zscore: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SelectSection {
    quantile: f64,
    top_k: usize,
    /// Tuning split as subject names; defaults to the first fold.
    tune_val: Option<String>,
    tune_test: Option<String>,
    /// Run subject probes on every fold.
    probe: bool,
}

impl Default for SelectSection {
    fn default() -> Self {
        SelectSection { quantile: 0.25, top_k: 3, tune_val: None, tune_test: None, probe: false }
    }
}

#[derive(Parser)]
#[command(name = "autotransfer", version, about = "Nuisance-censored training and cross-subject method selection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic subject-shift dataset.
    GenData(GenDataArgs),
    /// Train one model on a leave-subjects-out split.
    Train(TrainArgs),
    /// Train every grid configuration on one split and keep the best per method.
    Tune(TuneArgs),
    /// Cross-subject validation of grid (or tuned) configurations.
    Cv(CvArgs),
    /// Tune, cross-validate, select and write the report.
    Autotransfer(TuneArgs),
    /// Re-render report artifacts from a saved cv_report.json.
    Report(ReportArgs),
}

#[derive(Args, Clone, Default)]
struct ConfigArg {
    /// TOML config file; flags override it.
    #[arg(long, short)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct GenDataArgs {
    #[command(flatten)]
    cfg: ConfigArg,
    /// Output path; `.bin` writes the binary cache, anything else CSV.
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long)]
    subjects: Option<usize>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    channels: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    offset_scale: Option<f64>,
    #[arg(long)]
    gain_scale: Option<f64>,
    #[arg(long)]
    template_scale: Option<f64>,
    #[arg(long)]
    noise_scale: Option<f64>,
    #[arg(long)]
    label_skew: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Clone, Default)]
struct DataArgs {
    /// Dataset (`.bin` cache or delimited text).
    #[arg(long, short)]
    data: Option<PathBuf>,
    #[arg(long)]
    subject_col: Option<String>,
    #[arg(long)]
    label_col: Option<String>,
    /// Comma-separated feature columns.
    #[arg(long, value_delimiter = ',')]
    feature_cols: Option<Vec<String>>,
    #[arg(long)]
    channels: Option<usize>,
    #[arg(long)]
    delimiter: Option<char>,
    /// Z-score every channel of every trial.
    #[arg(long)]
    zscore: bool,
}

#[derive(Args, Clone, Default)]
struct TrainFlags {
    #[arg(long)]
    method: Option<CensorMethod>,
    #[arg(long)]
    mode: Option<CensorMode>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Early-stopping patience; 0 disables it.
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    latent_dim: Option<usize>,
    #[arg(long)]
    adv_steps: Option<usize>,
    #[arg(long)]
    score_kind: Option<ScoreEstimatorKind>,
    #[arg(long)]
    score_reg: Option<f64>,
    #[arg(long)]
    lengthscale: Option<LengthScalePolicy>,
    #[arg(long)]
    pair: Option<PairPolicy>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    cfg: ConfigArg,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    train: TrainFlags,
    /// Validation subject (name or index).
    #[arg(long)]
    val: String,
    /// Test subject (name or index).
    #[arg(long)]
    test: String,
    #[arg(long, short)]
    out: PathBuf,
    /// Also report the subject probe on the training latents.
    #[arg(long)]
    probe: bool,
}

#[derive(Args, Clone, Default)]
struct GridFlags {
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<CensorMethod>>,
    #[arg(long, value_delimiter = ',')]
    modes: Option<Vec<CensorMode>>,
    #[arg(long, value_delimiter = ',')]
    lambdas: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    lambdas_mmd: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    score_kinds: Option<Vec<ScoreEstimatorKind>>,
    #[arg(long, value_delimiter = ',')]
    score_regs: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    lengthscales: Option<Vec<LengthScalePolicy>>,
    #[arg(long, value_delimiter = ',')]
    pair_policies: Option<Vec<PairPolicy>>,
}

#[derive(Args)]
struct TuneArgs {
    #[command(flatten)]
    cfg: ConfigArg,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    train: TrainFlags,
    #[command(flatten)]
    grid: GridFlags,
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long)]
    quantile: Option<f64>,
    /// Tuning validation subject.
    #[arg(long)]
    val: Option<String>,
    /// Tuning test subject.
    #[arg(long)]
    test: Option<String>,
    #[arg(long)]
    probe: bool,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct CvArgs {
    #[command(flatten)]
    tune: TuneArgs,
    /// Cross-validate the top configurations of a saved tune_report.json
    /// instead of the whole grid.
    #[arg(long)]
    from_tune: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// A cv_report.json written by `cv` or `autotransfer`.
    #[arg(long, short)]
    report: PathBuf,
    #[arg(long)]
    quantile: Option<f64>,
    #[arg(long, short)]
    out: PathBuf,
}

fn load_config(arg: &ConfigArg) -> Result<RunConfig> {
    match &arg.config {
        None => Ok(RunConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))
        }
    }
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn apply_data(cfg: &mut RunConfig, a: &DataArgs) {
    if a.data.is_some() {
        cfg.data.path = a.data.clone();
    }
    let s = &mut cfg.data.schema;
    set(&mut s.subject_col, a.subject_col.clone());
    set(&mut s.label_col, a.label_col.clone());
    set(&mut s.feature_cols, a.feature_cols.clone());
    if a.channels.is_some() {
        s.channels = a.channels;
    }
    set(&mut s.delimiter, a.delimiter);
    cfg.data.zscore |= a.zscore;
}

fn apply_train(t: &mut TrainConfig, a: &TrainFlags) {
    set(&mut t.censor.method, a.method);
    set(&mut t.censor.mode, a.mode);
    set(&mut t.censor.lambda, a.lambda);
    set(&mut t.max_epochs, a.epochs);
    set(&mut t.batch_size, a.batch_size);
    set(&mut t.optim.base_lr, a.lr);
    if let Some(p) = a.patience {
        t.patience = (p > 0).then_some(p);
    }
    set(&mut t.model.latent_dim, a.latent_dim);
    set(&mut t.censor.adv_steps, a.adv_steps);
    set(&mut t.censor.score.kind, a.score_kind);
    set(&mut t.censor.score.score_reg, a.score_reg);
    set(&mut t.censor.score.lengthscale, a.lengthscale.clone());
    set(&mut t.censor.pair, a.pair);
    set(&mut t.seed, a.seed);
}

fn apply_grid(g: &mut HyperGrid, a: &GridFlags) {
    set(&mut g.methods, a.methods.clone());
    set(&mut g.modes, a.modes.clone());
    set(&mut g.lambdas, a.lambdas.clone());
    set(&mut g.lambdas_mmd, a.lambdas_mmd.clone());
    set(&mut g.score_kinds, a.score_kinds.clone());
    set(&mut g.score_regs, a.score_regs.clone());
    set(&mut g.lengthscales, a.lengthscales.clone());
    set(&mut g.pair_policies, a.pair_policies.clone());
}

fn load_data(cfg: &RunConfig) -> Result<TrialSet> {
    let path = cfg.data.path.as_ref().ok_or_else(|| Error::Config("no dataset given (use --data or [data] path)".into()))?;
    let ts = load_dataset(path, &cfg.data.schema)?;
    if cfg.data.zscore {
        zscore_trials(&ts)
    } else {
        Ok(ts)
    }
}

/// Subject by name, falling back to a 0-based index.
fn resolve_subject(ts: &TrialSet, key: &str) -> Result<usize> {
    if let Some(i) = ts.meta.subject_names.iter().position(|n| n == key) {
        return Ok(i);
    }
    match key.parse::<usize>() {
        Ok(i) if i < ts.n_subjects() => Ok(i),
        _ => Err(Error::Config(format!("unknown subject '{key}'"))),
    }
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    fs::write(path, serde_json::to_vec_pretty(value)?)?;
    Ok(())
}

fn cmd_gen_data(a: &GenDataArgs) -> Result<()> {
    let mut cfg = load_config(&a.cfg)?;
    let s = &mut cfg.synth;
    set(&mut s.n_subjects, a.subjects);
    set(&mut s.n_classes, a.classes);
    set(&mut s.channels, a.channels);
    set(&mut s.samples_per_channel, a.samples);
    set(&mut s.trials_per_subject, a.trials);
    set(&mut s.subject_offset_scale, a.offset_scale);
    set(&mut s.subject_gain_scale, a.gain_scale);
    set(&mut s.class_template_scale, a.template_scale);
    set(&mut s.noise_scale, a.noise_scale);
    set(&mut s.label_skew, a.label_skew);
    set(&mut s.seed, a.seed);
    let ts = synth_generate(&cfg.synth)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    save_dataset(&ts, &a.out)?;
    println!("wrote {} trials ({} subjects, {} features) to {}", ts.len(), ts.n_subjects(), ts.dim(), a.out.display());
    Ok(())
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let mut cfg = load_config(&a.cfg)?;
    apply_data(&mut cfg, &a.data);
    apply_train(&mut cfg.train, &a.train);
    cfg.train.validate()?;
    let ts = load_data(&cfg)?;
    let (val, test) = (resolve_subject(&ts, &a.val)?, resolve_subject(&ts, &a.test)?);
    let (tr, va, te) = loso_split(&ts, val, test)?;
    let res = train(&tr, &va, &cfg.train)?;
    let weights = class_weights(&tr.class_counts())?;
    let (test_loss, test_bal_acc) = evaluate_task(&res.best, &te, &weights)?;
    fs::create_dir_all(&a.out)?;
    write_history_jsonl(&res.history, &a.out.join("metrics.jsonl"))?;
    let mut models = vec![("encoder".to_string(), res.best.encoder.clone()), ("classifier".to_string(), res.best.classifier.clone())];
    models.extend(res.best.aux.iter().enumerate().map(|(i, m)| (format!("aux{i}"), m.clone())));
    Checkpoint::new(models).save(&a.out.join("checkpoint.json"))?;
    let probe = if a.probe {
        Some(subject_probe(&res.best.encode(&tr.x)?, &tr.s, &ProbeSpec::default(), cfg.train.seed)?)
    } else {
        None
    };
    let best = res.best_record();
    let summary = serde_json::json!({
        "config": cfg.train,
        "val_subject": ts.meta.subject_names[val],
        "test_subject": ts.meta.subject_names[test],
        "best_epoch": res.best_epoch,
        "epochs_run": res.history.len(),
        "val_loss": best.val_loss,
        "val_bal_acc": best.val_bal_acc,
        "test_loss": test_loss,
        "test_bal_acc": test_bal_acc,
        "subject_probe": probe,
    });
    write_json(&summary, &a.out.join("train_summary.json"))?;
    println!(
        "{}: best epoch {} of {}, val acc {:.4}, test acc {:.4}",
        cfg.train.censor.label(),
        res.best_epoch,
        res.history.len(),
        best.val_bal_acc,
        test_bal_acc
    );
    Ok(())
}

struct Prepared {
    cfg: RunConfig,
    ts: TrialSet,
    split: (usize, usize),
}

fn prepare(a: &TuneArgs) -> Result<Prepared> {
    let mut cfg = load_config(&a.cfg)?;
    apply_data(&mut cfg, &a.data);
    apply_train(&mut cfg.train, &a.train);
    apply_grid(&mut cfg.grid, &a.grid);
    set(&mut cfg.select.top_k, a.top_k);
    set(&mut cfg.select.quantile, a.quantile);
    if a.val.is_some() {
        cfg.select.tune_val = a.val.clone();
    }
    if a.test.is_some() {
        cfg.select.tune_test = a.test.clone();
    }
    cfg.select.probe |= a.probe;
    cfg.train.validate()?;
    if !(0.0..=1.0).contains(&cfg.select.quantile) {
        return Err(Error::Config(format!("selection quantile {} outside [0, 1]", cfg.select.quantile)));
    }
    if cfg.select.top_k == 0 {
        return Err(Error::Config("top_k must be at least 1".into()));
    }
    let ts = load_data(&cfg)?;
    let first = fold_rotation(&ts).first().copied().ok_or_else(|| Error::Data("dataset has no subjects".into()))?;
    let val = cfg.select.tune_val.as_deref().map(|k| resolve_subject(&ts, k)).transpose()?.unwrap_or(first.0);
    let test = cfg.select.tune_test.as_deref().map(|k| resolve_subject(&ts, k)).transpose()?.unwrap_or(first.1);
    Ok(Prepared { cfg, ts, split: (val, test) })
}

fn run_tune(p: &Prepared) -> Result<TuneReport> {
    let configs = p.cfg.grid.configs(&p.cfg.train.censor, p.ts.subjects_present().len())?;
    let report = tune(&p.ts, &configs, &p.cfg.train, p.split, p.cfg.train.seed, p.cfg.select.top_k)?;
    for (method, ids) in &report.top {
        for &i in ids {
            let e = &report.entries[i];
            println!("tune {method}: {} val acc {:.4}", e.config.label(), e.val_bal_acc);
        }
    }
    Ok(report)
}

fn cv_options(cfg: &RunConfig) -> CvOptions {
    CvOptions { probe: cfg.select.probe.then(ProbeSpec::default) }
}

fn finish_report(report: &CvReport, q: f64, out: &Path) -> Result<()> {
    let written = emit_report(report, q, out)?;
    let sel = autotransfer_select(report, q)?;
    println!(
        "selected {} (q{:.0} val acc {:.4}, baseline {})",
        sel.label,
        q * 100.0,
        sel.score,
        sel.baseline_score.map(|v| format!("{v:.4}")).unwrap_or_else(|| "n/a".into())
    );
    for p in written {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn cmd_tune(a: &TuneArgs) -> Result<()> {
    let p = prepare(a)?;
    let report = run_tune(&p)?;
    fs::create_dir_all(&a.out)?;
    write_json(&report, &a.out.join("tune_report.json"))?;
    Ok(())
}

fn cmd_cv(a: &CvArgs) -> Result<()> {
    let p = prepare(&a.tune)?;
    let configs = match &a.from_tune {
        Some(path) => {
            let tr: TuneReport = serde_json::from_slice(&fs::read(path)?)?;
            tr.top_configs()
        }
        None => p.cfg.grid.configs(&p.cfg.train.censor, p.ts.subjects_present().len())?,
    };
    let report = cross_validate(&p.ts, &configs, &p.cfg.train, p.cfg.train.seed, &cv_options(&p.cfg))?;
    finish_report(&report, p.cfg.select.quantile, &a.tune.out)
}

fn cmd_autotransfer(a: &TuneArgs) -> Result<()> {
    let p = prepare(a)?;
    let tuned = run_tune(&p)?;
    fs::create_dir_all(&a.out)?;
    write_json(&tuned, &a.out.join("tune_report.json"))?;
    let report = cross_validate(&p.ts, &tuned.top_configs(), &p.cfg.train, p.cfg.train.seed, &cv_options(&p.cfg))?;
    let sel = autotransfer_select(&report, p.cfg.select.quantile)?;
    write_json(&sel, &a.out.join("selection.json"))?;
    finish_report(&report, p.cfg.select.quantile, &a.out)
}

fn cmd_report(a: &ReportArgs) -> Result<()> {
    let report: CvReport = serde_json::from_slice(&fs::read(&a.report)?)?;
    finish_report(&report, a.quantile.unwrap_or(0.25), &a.out)
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::GenData(a) => cmd_gen_data(a),
        Command::Train(a) => cmd_train(a),
        Command::Tune(a) => cmd_tune(a),
        Command::Cv(a) => cmd_cv(a),
        Command::Autotransfer(a) => cmd_autotransfer(a),
        Command::Report(a) => cmd_report(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
