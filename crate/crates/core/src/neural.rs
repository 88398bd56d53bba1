//! Dense networks with exact reverse-mode gradients, AdamW, and weighted
//! cross entropy.

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Mat;

/// Floor applied to probabilities inside `log`.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
    /// Row-wise softmax; only allowed on the output layer.
    Softmax,
}

impl Activation {
    fn apply(self, pre: &mut Mat) {
        match self {
            Activation::Identity => {}
            Activation::Relu => pre.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0)),
            Activation::Tanh => pre.as_mut_slice().iter_mut().for_each(|v| *v = v.tanh()),
            Activation::Softmax => {
                let cols = pre.cols();
                for row in pre.as_mut_slice().chunks_exact_mut(cols) {
                    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let mut sum = 0.0;
                    for v in row.iter_mut() {
                        *v = (*v - max).exp();
                        sum += *v;
                    }
                    row.iter_mut().for_each(|v| *v /= sum);
                }
            }
        }
    }

    /// Vector-Jacobian product given the activation output `out`.
    fn vjp(self, out: &Mat, g: &Mat) -> Mat {
        match self {
            Activation::Identity => g.clone(),
            Activation::Relu => Mat::from_fn(g.rows(), g.cols(), |i, j| if out[(i, j)] > 0.0 { g[(i, j)] } else { 0.0 }),
            Activation::Tanh => Mat::from_fn(g.rows(), g.cols(), |i, j| g[(i, j)] * (1.0 - out[(i, j)] * out[(i, j)])),
            Activation::Softmax => {
                let mut res = Mat::zeros(g.rows(), g.cols());
                for i in 0..g.rows() {
                    let (p, gi) = (out.row(i), g.row(i));
                    let dot: f64 = p.iter().zip(gi).map(|(a, b)| a * b).sum();
                    for (r, (&pj, &gj)) in res.row_mut(i).iter_mut().zip(p.iter().zip(gi)) {
                        *r = pj * (gj - dot);
                    }
                }
                res
            }
        }
    }
}

/// Layer widths and per-layer activations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetSpec {
    pub widths: Vec<usize>,
    pub activations: Vec<Activation>,
}

/// Offsets of one layer's weights (`in x out`, row-major) and biases in the
/// flat parameter vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerSlot {
    pub fan_in: usize,
    pub fan_out: usize,
    pub w_offset: usize,
    pub b_offset: usize,
}

impl NetSpec {
    pub fn new(widths: Vec<usize>, activations: Vec<Activation>) -> Result<Self> {
        let spec = NetSpec { widths, activations };
        spec.validate()?;
        Ok(spec)
    }

    /// `input -> hidden... -> output`, `hidden_act` on hidden layers.
    pub fn mlp(input: usize, hidden: &[usize], output: usize, hidden_act: Activation, out_act: Activation) -> Result<Self> {
        let mut widths = vec![input];
        widths.extend_from_slice(hidden);
        widths.push(output);
        let mut acts = vec![hidden_act; hidden.len()];
        acts.push(out_act);
        NetSpec::new(widths, acts)
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 {
            return Err(Error::Config("a network needs at least one layer".into()));
        }
        if self.activations.len() != self.widths.len() - 1 {
            return Err(Error::Config(format!(
                "{} activations for {} layers",
                self.activations.len(),
                self.widths.len() - 1
            )));
        }
        if self.widths.contains(&0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        let last = self.activations.len() - 1;
        if self.activations[..last].contains(&Activation::Softmax) {
            return Err(Error::Config("softmax is only allowed on the output layer".into()));
        }
        Ok(())
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().expect("validated spec")
    }

    pub fn n_layers(&self) -> usize {
        self.activations.len()
    }

    pub fn layout(&self) -> Vec<LayerSlot> {
        let mut offset = 0;
        self.widths
            .windows(2)
            .map(|w| {
                let slot = LayerSlot { fan_in: w[0], fan_out: w[1], w_offset: offset, b_offset: offset + w[0] * w[1] };
                offset = slot.b_offset + w[1];
                slot
            })
            .collect()
    }

    pub fn n_params(&self) -> usize {
        self.widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }
}

/// Flat parameters plus a gradient accumulator of the same shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    pub values: Vec<f64>,
    pub grads: Vec<f64>,
}

impl ParamStore {
    /// Uniform Glorot initialization for weights, zero biases.
    pub fn init<R: Rng + ?Sized>(spec: &NetSpec, rng: &mut R) -> Self {
        let mut values = vec![0.0; spec.n_params()];
        for slot in spec.layout() {
            let limit = (6.0 / (slot.fan_in + slot.fan_out) as f64).sqrt();
            for v in &mut values[slot.w_offset..slot.b_offset] {
                *v = rng.random_range(-limit..limit);
            }
        }
        let n = values.len();
        ParamStore { values, grads: vec![0.0; n] }
    }

    pub fn from_values(values: Vec<f64>) -> Self {
        let n = values.len();
        ParamStore { values, grads: vec![0.0; n] }
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = 0.0);
    }

    pub fn accumulate(&mut self, grads: &[f64], scale: f64) -> Result<()> {
        if grads.len() != self.grads.len() {
            return Err(Error::Dimension(format!("{} gradients for {} parameters", grads.len(), self.grads.len())));
        }
        for (a, g) in self.grads.iter_mut().zip(grads) {
            *a += scale * g;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Layer inputs and outputs recorded by [`forward`].
#[derive(Clone, Debug)]
pub struct Tape {
    inputs: Vec<Mat>,
    outputs: Vec<Mat>,
}

#[derive(Clone, Debug)]
pub struct Gradients {
    pub params: Vec<f64>,
    pub input: Mat,
}

fn check_params(spec: &NetSpec, params: &[f64]) -> Result<()> {
    if params.len() != spec.n_params() {
        return Err(Error::Dimension(format!("{} parameters for a spec needing {}", params.len(), spec.n_params())));
    }
    Ok(())
}

pub fn forward(spec: &NetSpec, params: &[f64], x: &Mat) -> Result<(Mat, Tape)> {
    check_params(spec, params)?;
    if x.cols() != spec.input_width() {
        return Err(Error::Dimension(format!("input has {} columns, network expects {}", x.cols(), spec.input_width())));
    }
    let mut inputs = Vec::with_capacity(spec.n_layers());
    let mut outputs = Vec::with_capacity(spec.n_layers());
    let mut a = x.clone();
    for (slot, act) in spec.layout().into_iter().zip(&spec.activations) {
        let w = Mat::new(slot.fan_in, slot.fan_out, params[slot.w_offset..slot.b_offset].to_vec())?;
        let b = &params[slot.b_offset..slot.b_offset + slot.fan_out];
        let mut pre = a.matmul(&w)?;
        for row in pre.as_mut_slice().chunks_exact_mut(slot.fan_out) {
            row.iter_mut().zip(b).for_each(|(v, bb)| *v += bb);
        }
        act.apply(&mut pre);
        inputs.push(a);
        a = pre.clone();
        outputs.push(pre);
    }
    Ok((a, Tape { inputs, outputs }))
}

/// Output only.
pub fn predict(spec: &NetSpec, params: &[f64], x: &Mat) -> Result<Mat> {
    Ok(forward(spec, params, x)?.0)
}

pub fn backward(spec: &NetSpec, params: &[f64], tape: &Tape, cotangents: &Mat) -> Result<Gradients> {
    check_params(spec, params)?;
    let last = tape.outputs.last().ok_or_else(|| Error::InvalidArgument("empty tape".into()))?;
    if tape.outputs.len() != spec.n_layers() || cotangents.shape() != last.shape() {
        return Err(Error::Dimension(format!(
            "cotangents {:?} do not match network output {:?}",
            cotangents.shape(),
            last.shape()
        )));
    }
    let mut grads = vec![0.0; params.len()];
    let mut g = cotangents.clone();
    let layout = spec.layout();
    for l in (0..spec.n_layers()).rev() {
        let slot = layout[l];
        let g_pre = spec.activations[l].vjp(&tape.outputs[l], &g);
        let dw = tape.inputs[l].t_matmul(&g_pre)?;
        grads[slot.w_offset..slot.b_offset].copy_from_slice(dw.as_slice());
        let db = &mut grads[slot.b_offset..slot.b_offset + slot.fan_out];
        for row in g_pre.row_iter() {
            db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
        }
        let w = Mat::new(slot.fan_in, slot.fan_out, params[slot.w_offset..slot.b_offset].to_vec())?;
        g = g_pre.matmul(&w.transpose())?;
    }
    Ok(Gradients { params: grads, input: g })
}

/// Inverse-proportion class weights normalized to sum to one.
pub fn class_weights(counts: &[usize]) -> Result<Vec<f64>> {
    if counts.is_empty() {
        return Err(Error::InvalidArgument("no classes".into()));
    }
    if let Some(k) = counts.iter().position(|&c| c == 0) {
        return Err(Error::InvalidArgument(format!("class {k} has no examples")));
    }
    let total: usize = counts.iter().sum();
    let raw: Vec<f64> = counts.iter().map(|&c| total as f64 / c as f64).collect();
    let sum: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|w| w / sum).collect())
}

fn check_ce_inputs(probs: &Mat, y: &[usize], w: &[f64]) -> Result<()> {
    if probs.rows() != y.len() || probs.rows() == 0 {
        return Err(Error::Dimension(format!("{} probability rows for {} labels", probs.rows(), y.len())));
    }
    if probs.cols() != w.len() {
        return Err(Error::Dimension(format!("{} classes but {} weights", probs.cols(), w.len())));
    }
    if let Some(&bad) = y.iter().find(|&&c| c >= w.len()) {
        return Err(Error::InvalidArgument(format!("label {bad} outside 0..{}", w.len())));
    }
    for (i, row) in probs.row_iter().enumerate() {
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidArgument(format!("probability row {i} sums to {sum}")));
        }
        if row[y[i]].is_nan() || row[y[i]] < 0.0 {
            return Err(Error::Numeric(format!("invalid probability {} at the true label of row {i}", row[y[i]])));
        }
    }
    Ok(())
}

/// `(1/N) sum_i C w_{y_i} (-log p_i[y_i])`.
pub fn weighted_ce(probs: &Mat, y: &[usize], w: &[f64]) -> Result<f64> {
    Ok(weighted_ce_with_grad(probs, y, w)?.0)
}

/// Weighted cross entropy and its gradient with respect to `probs`.
pub fn weighted_ce_with_grad(probs: &Mat, y: &[usize], w: &[f64]) -> Result<(f64, Mat)> {
    check_ce_inputs(probs, y, w)?;
    let n = probs.rows() as f64;
    let c = w.len() as f64;
    let mut loss = 0.0;
    let mut grad = Mat::zeros(probs.rows(), probs.cols());
    for (i, &yi) in y.iter().enumerate() {
        let p = probs[(i, yi)].max(PROB_FLOOR);
        let wi = c * w[yi] / n;
        loss -= wi * p.ln();
        grad[(i, yi)] = -wi / p;
    }
    Ok((loss, grad))
}

/// Per-sample `-log p_i[y_i]` with the probability floor.
pub fn sample_nll(probs: &Mat, y: &[usize]) -> Result<Vec<f64>> {
    if probs.rows() != y.len() {
        return Err(Error::Dimension(format!("{} probability rows for {} labels", probs.rows(), y.len())));
    }
    y.iter()
        .enumerate()
        .map(|(i, &yi)| {
            if yi >= probs.cols() {
                return Err(Error::InvalidArgument(format!("label {yi} outside 0..{}", probs.cols())));
            }
            Ok(-probs[(i, yi)].max(PROB_FLOOR).ln())
        })
        .collect()
}

/// AdamW state with decoupled weight decay.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimState {
    pub base_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimConfig {
    pub base_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig { base_lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.base_lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0;
        if !ok {
            return Err(Error::Config(format!("invalid optimizer settings {self:?}")));
        }
        Ok(())
    }
}

impl OptimState {
    pub fn new(n_params: usize, cfg: &OptimConfig) -> Self {
        OptimState {
            base_lr: cfg.base_lr,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            weight_decay: cfg.weight_decay,
            step: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }
}

/// Learning rate `base / sqrt(epoch)`.
pub fn epoch_lr(base_lr: f64, epoch: usize) -> f64 {
    base_lr / (epoch as f64).sqrt()
}

/// One AdamW step at rate `base_lr / sqrt(epoch)`. Returns the rate used.
pub fn optim_step(params: &mut [f64], grads: &[f64], opt: &mut OptimState, epoch: usize) -> Result<f64> {
    if epoch == 0 {
        return Err(Error::InvalidArgument("epochs are counted from 1".into()));
    }
    if params.len() != grads.len() || params.len() != opt.m.len() {
        return Err(Error::Dimension(format!(
            "{} parameters, {} gradients, {} optimizer slots",
            params.len(),
            grads.len(),
            opt.m.len()
        )));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::Numeric(format!("non-finite gradient at parameter {i}")));
    }
    let lr = epoch_lr(opt.base_lr, epoch);
    opt.step += 1;
    let t = opt.step as i32;
    let bc1 = 1.0 - opt.beta1.powi(t);
    let bc2 = 1.0 - opt.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        params[i] -= lr * opt.weight_decay * params[i];
        opt.m[i] = opt.beta1 * opt.m[i] + (1.0 - opt.beta1) * g;
        opt.v[i] = opt.beta2 * opt.v[i] + (1.0 - opt.beta2) * g * g;
        let mhat = opt.m[i] / bc1;
        let vhat = opt.v[i] / bc2;
        params[i] -= lr * mhat / (vhat.sqrt() + opt.eps);
    }
    Ok(lr)
}

/// A network with its parameters and optimizer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub spec: NetSpec,
    pub params: ParamStore,
    pub optim: OptimState,
}

impl Model {
    pub fn new<R: Rng + ?Sized>(spec: NetSpec, optim: &OptimConfig, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let params = ParamStore::init(&spec, rng);
        let optim = OptimState::new(params.len(), optim);
        Ok(Model { spec, params, optim })
    }

    pub fn forward(&self, x: &Mat) -> Result<(Mat, Tape)> {
        forward(&self.spec, &self.params.values, x)
    }

    pub fn predict(&self, x: &Mat) -> Result<Mat> {
        predict(&self.spec, &self.params.values, x)
    }

    pub fn backward(&self, tape: &Tape, cotangents: &Mat) -> Result<Gradients> {
        backward(&self.spec, &self.params.values, tape, cotangents)
    }

    /// Applies the accumulated gradients and clears them.
    pub fn step(&mut self, epoch: usize) -> Result<f64> {
        let lr = optim_step(&mut self.params.values, &self.params.grads, &mut self.optim, epoch)?;
        self.params.zero_grad();
        Ok(lr)
    }
}

pub const CHECKPOINT_VERSION: u32 = 1;

/// Named models in a versioned JSON container. Floats round-trip exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub models: Vec<(String, Model)>,
}

impl Checkpoint {
    pub fn new(models: Vec<(String, Model)>) -> Self {
        Checkpoint { version: CHECKPOINT_VERSION, models }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        for (name, m) in &self.models {
            if m.params.values.iter().chain(&m.optim.m).chain(&m.optim.v).any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("model '{name}' has non-finite state")));
            }
        }
        fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_slice(&fs::read(path)?)?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Data(format!("checkpoint version {} is not supported", ck.version)));
        }
        for (name, m) in &ck.models {
            m.spec.validate()?;
            if m.params.len() != m.spec.n_params() {
                return Err(Error::Data(format!("model '{name}' has a parameter count that does not match its spec")));
            }
        }
        Ok(ck)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn eye_layer(d: usize, act: Activation) -> (NetSpec, Vec<f64>) {
        let spec = NetSpec::new(vec![d, d], vec![act]).unwrap();
        let mut p = vec![0.0; spec.n_params()];
        for i in 0..d {
            p[i * d + i] = 1.0;
        }
        (spec, p)
    }

    #[test]
    fn forward_examples() {
        let x = Mat::from_rows(&[[-1.0, 2.0], [0.5, 3.0]]).unwrap();
        let (spec, p) = eye_layer(2, Activation::Identity);
        assert_eq!(predict(&spec, &p, &x).unwrap(), x);
        let (spec, p) = eye_layer(2, Activation::Relu);
        let out = predict(&spec, &p, &Mat::from_rows(&[[-1.0, 2.0]]).unwrap()).unwrap();
        assert_eq!(out.as_slice(), &[0.0, 2.0]);
        let spec = NetSpec::new(vec![2, 3], vec![Activation::Softmax]).unwrap();
        let out = predict(&spec, &vec![0.0; spec.n_params()], &x).unwrap();
        assert!(out.as_slice().iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
        assert!(predict(&spec, &vec![0.0; spec.n_params()], &Mat::zeros(1, 3)).is_err());
    }

    #[test]
    fn softmax_only_on_output() {
        assert!(NetSpec::new(vec![2, 3, 2], vec![Activation::Softmax, Activation::Identity]).is_err());
        assert!(NetSpec::new(vec![2], vec![]).is_err());
        assert!(NetSpec::new(vec![2, 0], vec![Activation::Relu]).is_err());
    }

    #[test]
    fn zero_cotangents_give_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let spec = NetSpec::mlp(3, &[5], 2, Activation::Tanh, Activation::Identity).unwrap();
        let ps = ParamStore::init(&spec, &mut rng);
        let x = Mat::from_fn(4, 3, |_, _| rng.random::<f64>());
        let (out, tape) = forward(&spec, &ps.values, &x).unwrap();
        let g = backward(&spec, &ps.values, &tape, &Mat::zeros(out.rows(), out.cols())).unwrap();
        assert!(g.params.iter().all(|&v| v == 0.0));
        assert!(g.input.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn class_weight_examples() {
        let w = class_weights(&[10, 30]).unwrap();
        assert!((w[0] - 0.75).abs() < 1e-15 && (w[1] - 0.25).abs() < 1e-15);
        let w = class_weights(&[5, 5, 5]).unwrap();
        assert!(w.iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
        let w = class_weights(&[1, 99]).unwrap();
        assert!((w[0] - 0.99).abs() < 1e-12 && (w[1] - 0.01).abs() < 1e-12);
        assert!(class_weights(&[3, 0]).is_err());
    }

    #[test]
    fn weighted_ce_examples() {
        let w = [0.75, 0.25];
        let onehot = Mat::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        assert_eq!(weighted_ce(&onehot, &[0, 1], &w).unwrap(), 0.0);
        let half = Mat::from_rows(&[[0.5, 0.5]]).unwrap();
        let v = weighted_ce(&half, &[0], &w).unwrap();
        assert!((v - 1.5 * 2f64.ln()).abs() < 1e-15);
        let uniform = Mat::from_fn(4, 4, |_, _| 0.25);
        let v = weighted_ce(&uniform, &[0, 1, 2, 3], &[0.1, 0.2, 0.3, 0.4]).unwrap();
        assert!((v - 4f64.ln()).abs() < 1e-12);
        let bad = Mat::from_rows(&[[0.7, 0.7]]).unwrap();
        assert!(weighted_ce(&bad, &[0], &w).is_err());
        // floored, not infinite
        let wrong = Mat::from_rows(&[[0.0, 1.0]]).unwrap();
        assert!(weighted_ce(&wrong, &[0], &w).unwrap().is_finite());
    }

    #[test]
    fn uniform_weights_match_plain_ce() {
        let p = Mat::from_rows(&[[0.2, 0.8], [0.6, 0.4], [0.3, 0.7]]).unwrap();
        let y = [1, 0, 0];
        let plain = -(0.8f64.ln() + 0.6f64.ln() + 0.3f64.ln()) / 3.0;
        assert!((weighted_ce(&p, &y, &[0.5, 0.5]).unwrap() - plain).abs() < 1e-14);
    }

    #[test]
    fn optimizer_examples() {
        assert_eq!(epoch_lr(1e-3, 4), 5e-4);

        let cfg = OptimConfig { weight_decay: 0.0, ..OptimConfig::default() };
        let mut p = vec![1.0, -2.0];
        let mut st = OptimState::new(2, &cfg);
        optim_step(&mut p, &[0.0, 0.0], &mut st, 1).unwrap();
        assert_eq!(p, vec![1.0, -2.0]);

        let mut p = vec![0.0];
        let mut st = OptimState::new(1, &cfg);
        let lr = optim_step(&mut p, &[1.0], &mut st, 1).unwrap();
        assert!((p[0] + lr).abs() < 1e-10);

        let mut p = vec![3.0, -4.0];
        let mut st = OptimState::new(2, &OptimConfig::default());
        let mut prev = 5.0;
        for epoch in 1..20 {
            optim_step(&mut p, &[0.0, 0.0], &mut st, epoch).unwrap();
            let norm = (p[0] * p[0] + p[1] * p[1]).sqrt();
            assert!(norm < prev);
            prev = norm;
        }
        assert!(optim_step(&mut p, &[f64::NAN, 0.0], &mut st, 1).is_err());
        assert!(optim_step(&mut p, &[0.0, 0.0], &mut st, 0).is_err());
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let spec = NetSpec::mlp(4, &[3], 2, Activation::Relu, Activation::Softmax).unwrap();
        let mut model = Model::new(spec, &OptimConfig::default(), &mut rng).unwrap();
        let grads: Vec<f64> = (0..model.params.len()).map(|_| rng.random::<f64>() - 0.5).collect();
        model.params.accumulate(&grads, 1.0).unwrap();
        model.step(1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        let ck = Checkpoint::new(vec![("encoder".into(), model)]);
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ck);
        for (a, b) in back.models[0].1.params.values.iter().zip(&ck.models[0].1.params.values) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
