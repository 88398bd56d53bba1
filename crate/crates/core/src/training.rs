//! Regularized ERM with alternating auxiliary-model updates, inverse
//! square-root learning-rate decay, min-validation-loss model selection,
//! and the evaluation metrics used throughout.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::censoring::{aux_model_specs, evaluate, BeganControl, CensorConfig, CensorMethod, EncoderSignal};
use crate::data::TrialSet;
use crate::divergence::BatchLabels;
use crate::error::{Error, Result};
use crate::neural::{class_weights, epoch_lr, weighted_ce, weighted_ce_with_grad, Activation, Model, NetSpec, OptimConfig};
use crate::numerics::Mat;

/// Encoder and classifier shapes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub latent_dim: usize,
    pub encoder_hidden: Vec<usize>,
    pub encoder_activation: Activation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { latent_dim: 8, encoder_hidden: vec![64], encoder_activation: Activation::Relu }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub optim: OptimConfig,
    /// Stop after this many epochs without a new best validation loss.
    pub patience: Option<usize>,
    /// Interleave subjects inside each batch instead of plain shuffling.
    pub stratified: bool,
    pub model: ModelConfig,
    pub censor: CensorConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_epochs: 500,
            batch_size: 64,
            optim: OptimConfig::default(),
            patience: Some(75),
            stratified: false,
            model: ModelConfig::default(),
            censor: CensorConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be at least 1".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be at least 2".into()));
        }
        if self.patience == Some(0) {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if self.model.latent_dim == 0 || self.model.encoder_hidden.contains(&0) {
            return Err(Error::Config("model widths must be positive".into()));
        }
        if self.model.encoder_activation == Activation::Softmax {
            return Err(Error::Config("the encoder cannot use a softmax activation".into()));
        }
        self.optim.validate()?;
        self.censor.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub task_loss: f64,
    /// Mean scalar penalty over batches (0 for cotangent engines).
    pub penalty: f64,
    /// Mean of the first auxiliary loss over auxiliary steps.
    pub aux_loss: f64,
    pub val_loss: f64,
    pub val_bal_acc: f64,
    pub train_bal_acc: f64,
    pub control_k: Option<Vec<f64>>,
    pub penalty_batches_skipped: usize,
    pub aux_updates: usize,
}

/// Encoder, classifier and auxiliary models.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainedModels {
    pub encoder: Model,
    pub classifier: Model,
    pub aux: Vec<Model>,
}

impl TrainedModels {
    pub fn encode(&self, x: &Mat) -> Result<Mat> {
        self.encoder.predict(x)
    }

    pub fn predict_proba(&self, x: &Mat) -> Result<Mat> {
        self.classifier.predict(&self.encoder.predict(x)?)
    }

    pub fn predict(&self, x: &Mat) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.predict_proba(x)?))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainResult {
    pub best: TrainedModels,
    pub history: Vec<EpochRecord>,
    /// Epoch number (1-based) of minimum validation loss.
    pub best_epoch: usize,
    /// Control values after every encoder step (BEGAN only).
    pub control_trace: Vec<Vec<f64>>,
}

impl TrainResult {
    pub fn best_record(&self) -> &EpochRecord {
        &self.history[self.best_epoch - 1]
    }
}

pub fn argmax_rows(m: &Mat) -> Vec<usize> {
    m.row_iter()
        .map(|r| r.iter().enumerate().fold((0, f64::NEG_INFINITY), |b, (j, &v)| if v > b.1 { (j, v) } else { b }).0)
        .collect()
}

/// Mean per-class recall over classes present in `y_true`.
pub fn balanced_accuracy(y_true: &[usize], y_pred: &[usize]) -> Result<f64> {
    if y_true.is_empty() || y_true.len() != y_pred.len() {
        return Err(Error::InvalidArgument(format!("{} labels vs {} predictions", y_true.len(), y_pred.len())));
    }
    let c = y_true.iter().chain(y_pred).max().unwrap() + 1;
    let mut hit = vec![0usize; c];
    let mut tot = vec![0usize; c];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        tot[t] += 1;
        if t == p {
            hit[t] += 1;
        }
    }
    let recalls: Vec<f64> = (0..c).filter(|&k| tot[k] > 0).map(|k| hit[k] as f64 / tot[k] as f64).collect();
    Ok(recalls.iter().sum::<f64>() / recalls.len() as f64)
}

fn batches<R: Rng + ?Sized>(s: &[usize], batch_size: usize, stratified: bool, rng: &mut R) -> Vec<Vec<usize>> {
    let n = s.len();
    let order: Vec<usize> = if stratified {
        let m = s.iter().max().map_or(0, |v| v + 1);
        let mut groups = vec![Vec::new(); m];
        for (i, &g) in s.iter().enumerate() {
            groups[g].push(i);
        }
        groups.iter_mut().for_each(|g| g.shuffle(rng));
        let mut order = Vec::with_capacity(n);
        let longest = groups.iter().map(Vec::len).max().unwrap_or(0);
        for k in 0..longest {
            for g in &groups {
                if let Some(&i) = g.get(k) {
                    order.push(i);
                }
            }
        }
        order
    } else {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        order
    };
    let mut out: Vec<Vec<usize>> = order.chunks(batch_size).map(|c| c.to_vec()).collect();
    // fold a lone trailing sample into the previous batch
    if out.len() > 1 && out.last().is_some_and(|b| b.len() < 2) {
        let tail = out.pop().unwrap();
        out.last_mut().unwrap().extend(tail);
    }
    out
}

fn build_models(cfg: &TrainConfig, dim: usize, n_subjects: usize, n_classes: usize, rng: &mut ChaCha8Rng) -> Result<TrainedModels> {
    let m = &cfg.model;
    let enc_spec = NetSpec::mlp(dim, &m.encoder_hidden, m.latent_dim, m.encoder_activation, Activation::Identity)?;
    let cls_spec = NetSpec::mlp(m.latent_dim, &[], n_classes, Activation::Identity, Activation::Softmax)?;
    let encoder = Model::new(enc_spec, &cfg.optim, rng)?;
    let classifier = Model::new(cls_spec, &cfg.optim, rng)?;
    let aux = if cfg.censor.is_inactive() {
        Vec::new()
    } else {
        aux_model_specs(&cfg.censor, m.latent_dim, n_subjects, n_classes)?
            .into_iter()
            .map(|s| Model::new(s, &cfg.optim, rng))
            .collect::<Result<_>>()?
    };
    Ok(TrainedModels { encoder, classifier, aux })
}

/// Weighted cross entropy and balanced accuracy of `models` on `ts`.
pub fn evaluate_task(models: &TrainedModels, ts: &TrialSet, weights: &[f64]) -> Result<(f64, f64)> {
    let probs = models.predict_proba(&ts.x)?;
    let loss = weighted_ce(&probs, &ts.y, weights)?;
    let acc = balanced_accuracy(&ts.y, &argmax_rows(&probs))?;
    Ok((loss, acc))
}

fn numeric_failure(epoch: usize, batch: usize, what: &str, task: f64, penalty: f64) -> Error {
    Error::Numeric(format!("{what} at epoch {epoch}, batch {batch} (task loss {task}, penalty {penalty})"))
}

/// Trains encoder and classifier on `train_set`, selecting the epoch of
/// minimum validation loss on `val_set`.
pub fn train(train_set: &TrialSet, val_set: &TrialSet, cfg: &TrainConfig) -> Result<TrainResult> {
    cfg.validate()?;
    if train_set.dim() != val_set.dim() {
        return Err(Error::Dimension(format!("train has {} features, validation {}", train_set.dim(), val_set.dim())));
    }
    let train_subjects = train_set.subjects_present();
    if val_set.subjects_present().iter().any(|m| train_subjects.contains(m)) {
        return Err(Error::InvalidArgument("training and validation subjects overlap".into()));
    }
    let n_subjects = train_set.n_subjects();
    let n_classes = train_set.n_classes();
    let weights = class_weights(&train_set.class_counts())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut models = build_models(cfg, train_set.dim(), n_subjects, n_classes, &mut rng)?;
    let active = !cfg.censor.is_inactive();
    let lambda = cfg.censor.lambda;
    let mut control = (active && cfg.censor.method == CensorMethod::Began)
        .then(|| BeganControl::new(cfg.censor.mode, cfg.censor.began_beta, cfg.censor.began_diversity));

    let mut history = Vec::new();
    let mut control_trace = Vec::new();
    let mut best: Option<(f64, usize, TrainedModels)> = None;

    for epoch in 1..=cfg.max_epochs {
        let lr = epoch_lr(cfg.optim.base_lr, epoch);
        let (mut task_sum, mut pen_sum, mut aux_sum) = (0.0, 0.0, 0.0);
        let (mut n_batches, mut skipped, mut aux_updates) = (0usize, 0usize, 0usize);
        for (b, idx) in batches(&train_set.s, cfg.batch_size, cfg.stratified, &mut rng).into_iter().enumerate() {
            let xb = train_set.x.select_rows(&idx);
            let yb: Vec<usize> = idx.iter().map(|&i| train_set.y[i]).collect();
            let sb: Vec<usize> = idx.iter().map(|&i| train_set.s[i]).collect();
            let labels = BatchLabels::new(&sb, &yb, n_subjects, n_classes)?;
            let (z, enc_tape) = models.encoder.forward(&xb)?;

            if active && cfg.censor.method.has_aux_model() {
                for _ in 0..cfg.censor.adv_steps {
                    let out = evaluate(&cfg.censor, &z, &labels, &models.aux, control.as_ref(), &mut rng)?;
                    if let Some((_, v)) = out.aux_losses.first() {
                        if !v.is_finite() {
                            return Err(numeric_failure(epoch, b, "non-finite auxiliary loss", f64::NAN, *v));
                        }
                        aux_sum += v;
                    }
                    for (model, g) in models.aux.iter_mut().zip(&out.aux_grads) {
                        model.params.accumulate(g, 1.0)?;
                        model.step(epoch)?;
                    }
                    aux_updates += 1;
                }
            }

            let (probs, cls_tape) = models.classifier.forward(&z)?;
            let (task, dprobs) = weighted_ce_with_grad(&probs, &yb, &weights)?;
            let cls_grads = models.classifier.backward(&cls_tape, &dprobs)?;
            let mut dz = cls_grads.input;
            let mut penalty = 0.0;
            if active {
                match evaluate(&cfg.censor, &z, &labels, &models.aux, control.as_ref(), &mut rng) {
                    Ok(out) => {
                        if let EncoderSignal::Scalar { value, .. } = out.encoder {
                            penalty = value;
                        }
                        if !penalty.is_finite() || !out.latent_grad().is_finite() {
                            return Err(numeric_failure(epoch, b, "non-finite penalty", task, penalty));
                        }
                        dz.add_scaled(out.latent_grad(), lambda)?;
                        if let (Some(ctl), Some(next)) = (control.as_mut(), out.control_next) {
                            ctl.k = next;
                            control_trace.push(ctl.k.clone());
                        }
                    }
                    Err(Error::NoComputableTerms(_)) => skipped += 1,
                    Err(e) => return Err(e),
                }
            }
            if !task.is_finite() {
                return Err(numeric_failure(epoch, b, "non-finite task loss", task, penalty));
            }
            let enc_grads = models.encoder.backward(&enc_tape, &dz)?;
            models.encoder.params.accumulate(&enc_grads.params, 1.0)?;
            models.classifier.params.accumulate(&cls_grads.params, 1.0)?;
            models.encoder.step(epoch).map_err(|e| numeric_failure(epoch, b, &e.to_string(), task, penalty))?;
            models.classifier.step(epoch).map_err(|e| numeric_failure(epoch, b, &e.to_string(), task, penalty))?;
            task_sum += task;
            pen_sum += penalty;
            n_batches += 1;
        }

        let (val_loss, val_bal_acc) = evaluate_task(&models, val_set, &weights)?;
        if !val_loss.is_finite() {
            return Err(numeric_failure(epoch, n_batches, "non-finite validation loss", task_sum, pen_sum));
        }
        let (_, train_bal_acc) = evaluate_task(&models, train_set, &weights)?;
        history.push(EpochRecord {
            epoch,
            lr,
            task_loss: task_sum / n_batches as f64,
            penalty: pen_sum / n_batches as f64,
            aux_loss: if aux_updates > 0 { aux_sum / aux_updates as f64 } else { 0.0 },
            val_loss,
            val_bal_acc,
            train_bal_acc,
            control_k: control.as_ref().map(|c| c.k.clone()),
            penalty_batches_skipped: skipped,
            aux_updates,
        });
        if best.as_ref().is_none_or(|(l, _, _)| val_loss < *l) {
            best = Some((val_loss, epoch, models.clone()));
        }
        let best_epoch = best.as_ref().map(|b| b.1).unwrap();
        if cfg.patience.is_some_and(|p| epoch - best_epoch >= p) {
            break;
        }
    }
    let (_, best_epoch, best_models) = best.expect("at least one epoch");
    Ok(TrainResult { best: best_models, history, best_epoch, control_trace })
}

/// One JSON object per epoch.
pub fn write_history_jsonl(history: &[EpochRecord], path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for rec in history {
        serde_json::to_writer(&mut f, rec)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

/// Subject-probe classifier settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeSpec {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub train_fraction: f64,
}

impl Default for ProbeSpec {
    fn default() -> Self {
        ProbeSpec { hidden: vec![32], epochs: 60, lr: 1e-2, batch_size: 64, train_fraction: 0.8 }
    }
}

/// Held-out balanced accuracy of a fresh classifier predicting `s` from
/// frozen latents. Features are standardized with training-split statistics.
pub fn subject_probe(latents: &Mat, s: &[usize], spec: &ProbeSpec, seed: u64) -> Result<f64> {
    if latents.rows() != s.len() {
        return Err(Error::Dimension(format!("{} latents vs {} subject labels", latents.rows(), s.len())));
    }
    let mut present: Vec<usize> = s.to_vec();
    present.sort_unstable();
    present.dedup();
    if present.len() < 2 {
        return Err(Error::InvalidArgument("the subject probe needs at least 2 subjects".into()));
    }
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) || spec.epochs == 0 || spec.batch_size == 0 {
        return Err(Error::Config(format!("invalid probe settings {spec:?}")));
    }
    let codes: Vec<usize> = s.iter().map(|v| present.binary_search(v).unwrap()).collect();
    let m = present.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.shuffle(&mut rng);
    let n_train = ((s.len() as f64) * spec.train_fraction).round() as usize;
    let n_train = n_train.clamp(1, s.len() - 1);
    let (tr, te) = order.split_at(n_train);

    let k = latents.cols();
    let xtr = latents.select_rows(tr);
    let mut mean = vec![0.0; k];
    let mut sd = vec![0.0; k];
    for j in 0..k {
        mean[j] = (0..xtr.rows()).map(|i| xtr[(i, j)]).sum::<f64>() / xtr.rows() as f64;
        let var = (0..xtr.rows()).map(|i| (xtr[(i, j)] - mean[j]).powi(2)).sum::<f64>() / xtr.rows() as f64;
        sd[j] = var.sqrt().max(1e-8);
    }
    let standardize = |x: &Mat| Mat::from_fn(x.rows(), k, |i, j| (x[(i, j)] - mean[j]) / sd[j]);
    let xtr = standardize(&xtr);
    let xte = standardize(&latents.select_rows(te));
    let ytr: Vec<usize> = tr.iter().map(|&i| codes[i]).collect();
    let yte: Vec<usize> = te.iter().map(|&i| codes[i]).collect();

    let optim = OptimConfig { base_lr: spec.lr, weight_decay: 0.0, ..OptimConfig::default() };
    let net = NetSpec::mlp(k, &spec.hidden, m, Activation::Relu, Activation::Softmax)?;
    let mut model = Model::new(net, &optim, &mut rng)?;
    let mut counts = vec![0usize; m];
    ytr.iter().for_each(|&c| counts[c] += 1);
    let weights: Vec<f64> = if counts.contains(&0) { vec![1.0 / m as f64; m] } else { class_weights(&counts)? };
    for _ in 0..spec.epochs {
        let mut idx: Vec<usize> = (0..xtr.rows()).collect();
        idx.shuffle(&mut rng);
        for chunk in idx.chunks(spec.batch_size) {
            let xb = xtr.select_rows(chunk);
            let yb: Vec<usize> = chunk.iter().map(|&i| ytr[i]).collect();
            let (p, tape) = model.forward(&xb)?;
            let (_, g) = weighted_ce_with_grad(&p, &yb, &weights)?;
            let grads = model.backward(&tape, &g)?;
            model.params.accumulate(&grads.params, 1.0)?;
            model.step(1)?;
        }
    }
    balanced_accuracy(&yte, &argmax_rows(&model.predict(&xte)?))
}
