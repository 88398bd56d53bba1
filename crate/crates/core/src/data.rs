//! Trial container, per-trial z-scoring, synthetic subject-shift data,
//! delimited-text ingestion, a checksummed binary cache, and
//! leave-subjects-out splitting.
//!
//! Labels are stored densely and 0-based; `subject_names` / `class_names`
//! map them back to the source values.

use std::collections::HashMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numerics::Mat;

/// Standard-deviation floor used by [`zscore_trials`].
pub const ZSCORE_EPS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialMeta {
    pub channels: usize,
    pub samples_per_channel: usize,
    pub class_names: Vec<String>,
    pub subject_names: Vec<String>,
    pub source: String,
}

/// `N` trials with features `x` laid out channel-major
/// (`x[i][c * samples_per_channel + t]`).
#[derive(Clone, Debug, PartialEq)]
pub struct TrialSet {
    pub x: Mat,
    pub y: Vec<usize>,
    pub s: Vec<usize>,
    pub meta: TrialMeta,
}

impl TrialSet {
    pub fn new(x: Mat, y: Vec<usize>, s: Vec<usize>, meta: TrialMeta) -> Result<Self> {
        let ts = TrialSet { x, y, s, meta };
        ts.validate()?;
        Ok(ts)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.x.rows();
        if n == 0 {
            return Err(Error::Data("a trial set needs at least one trial".into()));
        }
        if self.y.len() != n || self.s.len() != n {
            return Err(Error::Data(format!("{n} trials but {} task labels and {} subject labels", self.y.len(), self.s.len())));
        }
        if self.meta.channels * self.meta.samples_per_channel != self.x.cols() {
            return Err(Error::Data(format!(
                "{} channels x {} samples does not match {} features",
                self.meta.channels,
                self.meta.samples_per_channel,
                self.x.cols()
            )));
        }
        if let Some(&c) = self.y.iter().find(|&&c| c >= self.n_classes()) {
            return Err(Error::Data(format!("task label {c} outside 0..{}", self.n_classes())));
        }
        if let Some(&m) = self.s.iter().find(|&&m| m >= self.n_subjects()) {
            return Err(Error::Data(format!("subject label {m} outside 0..{}", self.n_subjects())));
        }
        if !self.x.is_finite() {
            return Err(Error::Data("features contain non-finite values".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    pub fn n_classes(&self) -> usize {
        self.meta.class_names.len()
    }

    pub fn n_subjects(&self) -> usize {
        self.meta.subject_names.len()
    }

    /// Subjects with at least one trial, ascending.
    pub fn subjects_present(&self) -> Vec<usize> {
        let mut seen = vec![false; self.n_subjects()];
        self.s.iter().for_each(|&m| seen[m] = true);
        (0..self.n_subjects()).filter(|&m| seen[m]).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes()];
        self.y.iter().for_each(|&c| counts[c] += 1);
        counts
    }

    /// Trials at `idx`, keeping the full label spaces.
    pub fn subset(&self, idx: &[usize]) -> TrialSet {
        TrialSet {
            x: self.x.select_rows(idx),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            s: idx.iter().map(|&i| self.s[i]).collect(),
            meta: self.meta.clone(),
        }
    }
}

/// Standardizes every channel of every trial to mean 0 and population std 1.
pub fn zscore_trials(ts: &TrialSet) -> Result<TrialSet> {
    let t = ts.meta.samples_per_channel;
    if t < 2 {
        return Err(Error::InvalidArgument(format!("z-scoring needs at least 2 samples per channel, got {t}")));
    }
    let mut out = ts.clone();
    for row in out.x.as_mut_slice().chunks_exact_mut(ts.dim()) {
        for ch in row.chunks_exact_mut(t) {
            let mean = ch.iter().sum::<f64>() / t as f64;
            let var = ch.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / t as f64;
            let sd = var.sqrt().max(ZSCORE_EPS);
            ch.iter_mut().for_each(|v| *v = (*v - mean) / sd);
        }
    }
    Ok(out)
}

/// Synthetic subject-shift generator settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_subjects: usize,
    pub n_classes: usize,
    pub channels: usize,
    pub samples_per_channel: usize,
    pub trials_per_subject: usize,
    pub subject_offset_scale: f64,
    pub subject_gain_scale: f64,
    pub class_template_scale: f64,
    pub noise_scale: f64,
    /// Per-subject tilt of the class prior, in [0, 1).
    pub label_skew: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_subjects: 6,
            n_classes: 2,
            channels: 8,
            samples_per_channel: 8,
            trials_per_subject: 200,
            subject_offset_scale: 1.0,
            subject_gain_scale: 0.2,
            class_template_scale: 0.3,
            noise_scale: 1.0,
            label_skew: 0.2,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_subjects == 0 || self.n_classes == 0 || self.channels == 0 || self.samples_per_channel == 0 || self.trials_per_subject == 0 {
            return Err(Error::Config("subject, class, channel, sample and trial counts must be positive".into()));
        }
        let scales = [self.subject_offset_scale, self.subject_gain_scale, self.class_template_scale, self.noise_scale];
        if scales.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(Error::Config("generator scales must be finite and non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.label_skew) {
            return Err(Error::Config(format!("label skew {} outside [0, 1)", self.label_skew)));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.channels * self.samples_per_channel
    }
}

fn gaussian_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| { let e: f64 = StandardNormal.sample(rng); scale * e }).collect()
}

/// Class prior of subject `m`: `(1 - skew)/C + skew [c == m mod C]`.
pub fn synth_class_prior(m: usize, n_classes: usize, skew: f64) -> Vec<f64> {
    (0..n_classes)
        .map(|c| (1.0 - skew) / n_classes as f64 + if c == m % n_classes { skew } else { 0.0 })
        .collect()
}

/// `x = g_m * (t_c + o_m) + noise`, deterministic in `cfg.seed`.
pub fn synth_generate(cfg: &SynthConfig) -> Result<TrialSet> {
    cfg.validate()?;
    let d = cfg.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let templates: Vec<Vec<f64>> = (0..cfg.n_classes).map(|_| gaussian_vec(&mut rng, d, cfg.class_template_scale)).collect();
    let offsets: Vec<Vec<f64>> = (0..cfg.n_subjects).map(|_| gaussian_vec(&mut rng, d, cfg.subject_offset_scale)).collect();
    let gains: Vec<Vec<f64>> = (0..cfg.n_subjects)
        .map(|_| gaussian_vec(&mut rng, d, cfg.subject_gain_scale).into_iter().map(|g| 1.0 + g).collect())
        .collect();
    let n = cfg.n_subjects * cfg.trials_per_subject;
    let mut data = Vec::with_capacity(n * d);
    let mut y = Vec::with_capacity(n);
    let mut s = Vec::with_capacity(n);
    for m in 0..cfg.n_subjects {
        let prior = synth_class_prior(m, cfg.n_classes, cfg.label_skew);
        for _ in 0..cfg.trials_per_subject {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut c = cfg.n_classes - 1;
            for (k, p) in prior.iter().enumerate() {
                acc += p;
                if u < acc {
                    c = k;
                    break;
                }
            }
            for j in 0..d {
                let eps: f64 = StandardNormal.sample(&mut rng);
                data.push(gains[m][j] * (templates[c][j] + offsets[m][j]) + cfg.noise_scale * eps);
            }
            y.push(c);
            s.push(m);
        }
    }
    let meta = TrialMeta {
        channels: cfg.channels,
        samples_per_channel: cfg.samples_per_channel,
        class_names: (1..=cfg.n_classes).map(|c| c.to_string()).collect(),
        subject_names: (1..=cfg.n_subjects).map(|m| m.to_string()).collect(),
        source: format!("synthetic(seed={})", cfg.seed),
    };
    TrialSet::new(Mat::new(n, d, data)?, y, s, meta)
}

/// Column layout of a delimited table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TableSchema {
    pub subject_col: String,
    pub label_col: String,
    /// Feature columns; every other column when empty.
    pub feature_cols: Vec<String>,
    /// Channel count of the flattened features; 1 when absent.
    pub channels: Option<usize>,
    pub delimiter: char,
}

impl Default for TableSchema {
    fn default() -> Self {
        TableSchema {
            subject_col: "subject".into(),
            label_col: "label".into(),
            feature_cols: Vec::new(),
            channels: None,
            delimiter: ',',
        }
    }
}

fn delimiter_byte(c: char) -> Result<u8> {
    u8::try_from(c).map_err(|_| Error::Config(format!("delimiter '{c}' is not a single byte")))
}

/// Dense 0-based codes for string labels. Numeric labels sort numerically.
fn dense_codes(raw: &[String]) -> (Vec<usize>, Vec<String>) {
    let mut names: Vec<String> = raw.to_vec();
    names.sort();
    names.dedup();
    if names.iter().all(|n| n.parse::<f64>().is_ok()) {
        names.sort_by(|a, b| a.parse::<f64>().unwrap().total_cmp(&b.parse::<f64>().unwrap()));
    }
    let index: HashMap<&str, usize> = names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
    let codes = raw.iter().map(|r| index[r.as_str()]).collect();
    (codes, names)
}

/// Reads a delimited table with a header row. Row numbers in errors count
/// data rows from 1.
pub fn load_table(path: &Path, schema: &TableSchema) -> Result<TrialSet> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(delimiter_byte(schema.delimiter)?)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Data(format!("missing column '{name}'")))
    };
    let s_col = col(&schema.subject_col)?;
    let y_col = col(&schema.label_col)?;
    let f_cols: Vec<usize> = if schema.feature_cols.is_empty() {
        (0..headers.len()).filter(|&i| i != s_col && i != y_col).collect()
    } else {
        schema.feature_cols.iter().map(|c| col(c)).collect::<Result<_>>()?
    };
    if f_cols.is_empty() {
        return Err(Error::Data("no feature columns".into()));
    }
    let mut data = Vec::new();
    let mut raw_s = Vec::new();
    let mut raw_y = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let row = r + 1;
        let rec = rec.map_err(|e| Error::DataRow { row, msg: e.to_string() })?;
        if rec.len() != headers.len() {
            return Err(Error::DataRow { row, msg: format!("{} fields, header has {}", rec.len(), headers.len()) });
        }
        raw_s.push(rec[s_col].to_string());
        raw_y.push(rec[y_col].to_string());
        for &c in &f_cols {
            let v: f64 = rec[c]
                .parse()
                .map_err(|_| Error::DataRow { row, msg: format!("non-numeric value '{}' in column '{}'", &rec[c], &headers[c]) })?;
            if !v.is_finite() {
                return Err(Error::DataRow { row, msg: format!("non-finite value in column '{}'", &headers[c]) });
            }
            data.push(v);
        }
    }
    if raw_s.is_empty() {
        return Err(Error::Data(format!("{} has no data rows", path.display())));
    }
    let d = f_cols.len();
    let channels = schema.channels.unwrap_or(1);
    if channels == 0 || d % channels != 0 {
        return Err(Error::Data(format!("{d} features cannot be split into {channels} channels")));
    }
    let (s, subject_names) = dense_codes(&raw_s);
    let (y, class_names) = dense_codes(&raw_y);
    let meta = TrialMeta {
        channels,
        samples_per_channel: d / channels,
        class_names,
        subject_names,
        source: path.display().to_string(),
    };
    TrialSet::new(Mat::new(raw_s.len(), d, data)?, y, s, meta)
}

/// Writes `subject,label,f0,...` with the original label names.
pub fn save_table(ts: &TrialSet, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["subject".to_string(), "label".to_string()];
    header.extend((0..ts.dim()).map(|j| format!("f{j}")));
    w.write_record(&header)?;
    for i in 0..ts.len() {
        let mut rec = vec![ts.meta.subject_names[ts.s[i]].clone(), ts.meta.class_names[ts.y[i]].clone()];
        rec.extend(ts.x.row(i).iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

const CACHE_MAGIC: &[u8; 8] = b"ATTRIALS";
pub const CACHE_VERSION: u32 = 1;

/// Binary cache: magic, version, payload length, payload, SHA-256 of payload.
pub fn save_cache(ts: &TrialSet, path: &Path) -> Result<()> {
    let mut payload = Vec::with_capacity(ts.len() * (ts.dim() * 8 + 16) + 256);
    let meta = serde_json::to_vec(&ts.meta)?;
    payload.extend_from_slice(&(meta.len() as u64).to_le_bytes());
    payload.extend_from_slice(&meta);
    payload.extend_from_slice(&(ts.len() as u64).to_le_bytes());
    payload.extend_from_slice(&(ts.dim() as u64).to_le_bytes());
    for v in ts.x.as_slice() {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    for (&y, &s) in ts.y.iter().zip(&ts.s) {
        payload.extend_from_slice(&(y as u64).to_le_bytes());
        payload.extend_from_slice(&(s as u64).to_le_bytes());
    }
    let mut f = fs::File::create(path)?;
    f.write_all(CACHE_MAGIC)?;
    f.write_all(&CACHE_VERSION.to_le_bytes())?;
    f.write_all(&(payload.len() as u64).to_le_bytes())?;
    f.write_all(&payload)?;
    f.write_all(&Sha256::digest(&payload))?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| Error::Data("truncated cache file".into()))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn load_cache(path: &Path) -> Result<TrialSet> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut head = Cursor { buf: &bytes, pos: 0 };
    if head.take(8)? != CACHE_MAGIC {
        return Err(Error::Data(format!("{} is not a trial cache", path.display())));
    }
    let version = u32::from_le_bytes(head.take(4)?.try_into().expect("4 bytes"));
    if version != CACHE_VERSION {
        return Err(Error::Data(format!("cache version {version} is not supported")));
    }
    let len = head.u64()? as usize;
    let payload = head.take(len)?;
    let digest = head.take(32)?;
    if Sha256::digest(payload).as_slice() != digest {
        return Err(Error::Data("cache checksum mismatch".into()));
    }
    let mut c = Cursor { buf: payload, pos: 0 };
    let meta_len = c.u64()? as usize;
    let meta: TrialMeta = serde_json::from_slice(c.take(meta_len)?)?;
    let n = c.u64()? as usize;
    let d = c.u64()? as usize;
    let x: Vec<f64> = (0..n.saturating_mul(d)).map(|_| c.f64()).collect::<Result<_>>()?;
    let mut y = Vec::with_capacity(n);
    let mut s = Vec::with_capacity(n);
    for _ in 0..n {
        y.push(c.u64()? as usize);
        s.push(c.u64()? as usize);
    }
    TrialSet::new(Mat::new(n, d, x)?, y, s, meta)
}

/// Loads a cache (`.bin`) or a delimited table.
pub fn load_dataset(path: &Path, schema: &TableSchema) -> Result<TrialSet> {
    if path.extension().is_some_and(|e| e == "bin") {
        load_cache(path)
    } else {
        load_table(path, schema)
    }
}

pub fn save_dataset(ts: &TrialSet, path: &Path) -> Result<()> {
    if path.extension().is_some_and(|e| e == "bin") {
        save_cache(ts, path)
    } else {
        save_table(ts, path)
    }
}

/// Splits off one validation and one test subject; everything else trains.
pub fn loso_split(ts: &TrialSet, val_subject: usize, test_subject: usize) -> Result<(TrialSet, TrialSet, TrialSet)> {
    if val_subject == test_subject {
        return Err(Error::InvalidArgument(format!("validation and test subject are both {val_subject}")));
    }
    let present = ts.subjects_present();
    for m in [val_subject, test_subject] {
        if !present.contains(&m) {
            return Err(Error::InvalidArgument(format!("subject {m} has no trials")));
        }
    }
    if present.len() < 3 {
        return Err(Error::InvalidArgument(format!("{} subjects leave none for training", present.len())));
    }
    let (mut tr, mut va, mut te) = (Vec::new(), Vec::new(), Vec::new());
    for (i, &m) in ts.s.iter().enumerate() {
        if m == val_subject {
            va.push(i);
        } else if m == test_subject {
            te.push(i);
        } else {
            tr.push(i);
        }
    }
    Ok((ts.subset(&tr), ts.subset(&va), ts.subset(&te)))
}
