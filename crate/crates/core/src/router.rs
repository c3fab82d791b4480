//! Category router: a hashed word n-gram linear softmax classifier in the
//! style of fastText.
//!
//! A text is lowercased and split on whitespace (edge punctuation trimmed);
//! every word n-gram of order `1..=ngram_order` is hashed with FNV-1a into
//! `bucket_count` buckets. The hidden vector is the mean of the input rows of
//! the features, logits are `hidden · output`, and training is per-example SGD
//! on softmax cross-entropy with a linearly decaying learning rate.
//!
//! Only buckets seen at least `min_count` times during training carry an input
//! row; at prediction time other buckets are ignored.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embed::fnv1a64;
use crate::error::{Error, Result};
use crate::eval::{ClassificationReport, Classifier};
use crate::fsutil::{read_to_string, write_atomic};

pub const MODEL_FORMAT: &str = "catrag-router";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CategoryLabel {
    pub id: usize,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub text: String,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub ngram_order: usize,
    pub dim: usize,
    pub bucket_count: u64,
    pub lr_start: f32,
    pub seed: u64,
    pub min_count: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            ngram_order: 3,
            dim: 64,
            bucket_count: 1 << 20,
            lr_start: 0.1,
            seed: 0,
            min_count: 1,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.ngram_order == 0 || self.dim == 0 || self.bucket_count == 0 {
            return Err(Error::InvalidConfig(
                "epochs, ngram_order, dim and bucket_count must be positive".into(),
            ));
        }
        if !(self.lr_start > 0.0 && self.lr_start.is_finite()) {
            return Err(Error::InvalidConfig("lr_start must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    pub label: CategoryLabel,
    pub confidence: f64,
    pub distribution: Vec<f64>,
    /// No known features: the distribution is uniform.
    pub low_signal: bool,
}

/// Lowercased whitespace tokens with edge punctuation trimmed.
pub fn words(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .filter(|w| !w.is_empty())
        .collect()
}

/// Hashed word n-gram buckets of `text`, in occurrence order (duplicates kept).
pub fn feature_buckets(text: &str, ngram_order: usize, bucket_count: u64) -> Vec<u64> {
    let toks = words(text);
    let mut out = Vec::new();
    for n in 1..=ngram_order {
        for w in toks.windows(n) {
            out.push(fnv1a64(w.join(" ").as_bytes()) % bucket_count);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct RouterModel {
    labels: Vec<CategoryLabel>,
    ngram_order: usize,
    bucket_count: u64,
    dim: usize,
    seed: u64,
    /// bucket -> row in `input`
    rows: HashMap<u64, usize>,
    /// rows.len() x dim
    input: Vec<f32>,
    /// dim x K, row-major by hidden unit
    output: Vec<f32>,
}

fn softmax(logits: &[f32]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let exps: Vec<f64> = logits.iter().map(|&l| f64::from(l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// First index of the maximum.
fn argmax(xs: &[f64]) -> usize {
    xs.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}

impl RouterModel {
    pub fn labels(&self) -> &[CategoryLabel] {
        &self.labels
    }

    pub fn label(&self, name: &str) -> Option<&CategoryLabel> {
        self.labels.iter().find(|l| l.name == name)
    }

    pub fn ngram_order(&self) -> usize {
        self.ngram_order
    }

    fn known_rows(&self, text: &str) -> Vec<usize> {
        feature_buckets(text, self.ngram_order, self.bucket_count)
            .into_iter()
            .filter_map(|b| self.rows.get(&b).copied())
            .collect()
    }

    fn hidden(&self, rows: &[usize]) -> Vec<f32> {
        let mut h = vec![0.0f32; self.dim];
        for &r in rows {
            for (hv, w) in h.iter_mut().zip(&self.input[r * self.dim..(r + 1) * self.dim]) {
                *hv += w;
            }
        }
        let inv = 1.0 / rows.len().max(1) as f32;
        h.iter_mut().for_each(|v| *v *= inv);
        h
    }

    fn logits(&self, hidden: &[f32]) -> Vec<f32> {
        let k = self.labels.len();
        let mut out = vec![0.0f32; k];
        for (d, &hv) in hidden.iter().enumerate() {
            for (o, w) in out.iter_mut().zip(&self.output[d * k..(d + 1) * k]) {
                *o += hv * w;
            }
        }
        out
    }

    /// Raw output scores before softmax.
    pub fn scores(&self, text: &str) -> Vec<f32> {
        let rows = self.known_rows(text);
        self.logits(&self.hidden(&rows))
    }

    pub fn predict(&self, text: &str) -> Prediction {
        let rows = self.known_rows(text);
        let low_signal = rows.is_empty();
        let distribution = if low_signal {
            vec![1.0 / self.labels.len() as f64; self.labels.len()]
        } else {
            softmax(&self.logits(&self.hidden(&rows)))
        };
        let best = argmax(&distribution);
        Prediction {
            label: self.labels[best].clone(),
            confidence: distribution[best],
            distribution,
            low_signal,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        let mut rows: Vec<(u64, usize)> = self.rows.iter().map(|(&b, &r)| (b, r)).collect();
        rows.sort_unstable();
        let file = ModelFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            labels: self.labels.iter().map(|l| l.name.clone()).collect(),
            ngram_order: self.ngram_order,
            bucket_count: self.bucket_count,
            dim: self.dim,
            seed: self.seed,
            input: rows
                .into_iter()
                .map(|(b, r)| (b, self.input[r * self.dim..(r + 1) * self.dim].to_vec()))
                .collect(),
            output: self.output.clone(),
        };
        serde_json::to_string(&file).expect("model serializes")
    }

    pub fn from_json(raw: &str) -> Result<Self> {
        let file: ModelFile =
            serde_json::from_str(raw).map_err(|e| Error::ModelVersion(format!("unreadable model: {e}")))?;
        if file.format != MODEL_FORMAT || file.version != MODEL_VERSION {
            return Err(Error::ModelVersion(format!(
                "expected {MODEL_FORMAT} v{MODEL_VERSION}, found {} v{}",
                file.format, file.version
            )));
        }
        let k = file.labels.len();
        let bad = |m: &str| Error::ModelVersion(format!("inconsistent model: {m}"));
        if k < 2 || file.dim == 0 || file.ngram_order == 0 || file.bucket_count == 0 {
            return Err(bad("degenerate shape"));
        }
        if file.output.len() != file.dim * k || file.output.iter().any(|w| !w.is_finite()) {
            return Err(bad("output weights"));
        }
        let mut rows = HashMap::with_capacity(file.input.len());
        let mut input = Vec::with_capacity(file.input.len() * file.dim);
        for (bucket, row) in file.input {
            if row.len() != file.dim || row.iter().any(|w| !w.is_finite()) || bucket >= file.bucket_count {
                return Err(bad("input row"));
            }
            rows.insert(bucket, rows.len());
            input.extend(row);
        }
        Ok(Self {
            labels: file
                .labels
                .into_iter()
                .enumerate()
                .map(|(id, name)| CategoryLabel { id, name })
                .collect(),
            ngram_order: file.ngram_order,
            bucket_count: file.bucket_count,
            dim: file.dim,
            seed: file.seed,
            rows,
            input,
            output: file.output,
        })
    }
}

impl Classifier for RouterModel {
    fn label_names(&self) -> Vec<String> {
        self.labels.iter().map(|l| l.name.clone()).collect()
    }

    fn classify(&self, text: &str) -> String {
        self.predict(text).label.name
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    labels: Vec<String>,
    ngram_order: usize,
    bucket_count: u64,
    dim: usize,
    seed: u64,
    input: Vec<(u64, Vec<f32>)>,
    output: Vec<f32>,
}

/// Trains a router. Labels get ids in sorted name order.
pub fn train(examples: &[TrainingExample], config: &TrainConfig) -> Result<RouterModel> {
    config.validate()?;
    if examples.is_empty() {
        return Err(Error::EmptyTraining);
    }
    let names: Vec<String> = examples
        .iter()
        .map(|e| e.label.clone())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    if names.len() < 2 {
        return Err(Error::DegenerateLabels);
    }
    let label_id: HashMap<&str, usize> = names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();

    let featurized: Vec<Vec<u64>> = examples
        .iter()
        .map(|e| feature_buckets(&e.text, config.ngram_order, config.bucket_count))
        .collect();
    let mut counts: BTreeMap<u64, usize> = BTreeMap::new();
    for f in featurized.iter().flatten() {
        *counts.entry(*f).or_default() += 1;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let dim = config.dim;
    let mut rows = HashMap::new();
    let mut input = Vec::new();
    let bound = 1.0 / dim as f32;
    for (&bucket, &count) in &counts {
        if count >= config.min_count {
            rows.insert(bucket, rows.len());
            input.extend((0..dim).map(|_| rng.random_range(-bound..bound)));
        }
    }
    let k = names.len();
    let mut model = RouterModel {
        labels: names
            .iter()
            .enumerate()
            .map(|(id, name)| CategoryLabel { id, name: name.clone() })
            .collect(),
        ngram_order: config.ngram_order,
        bucket_count: config.bucket_count,
        dim,
        seed: config.seed,
        rows,
        input,
        output: vec![0.0; dim * k],
    };

    let data: Vec<(Vec<usize>, usize)> = featurized
        .iter()
        .zip(examples)
        .map(|(f, e)| {
            let rows = f.iter().filter_map(|b| model.rows.get(b).copied()).collect();
            (rows, label_id[e.label.as_str()])
        })
        .filter(|(rows, _): &(Vec<usize>, usize)| !rows.is_empty())
        .collect();

    let total = (config.epochs * data.len()).max(1) as f32;
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut step = 0usize;
    let mut grad = vec![0.0f32; dim];
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let lr = config.lr_start * (1.0 - step as f32 / total);
            step += 1;
            let (rows, target) = &data[i];
            let hidden = model.hidden(rows);
            let probs = softmax(&model.logits(&hidden));
            grad.iter_mut().for_each(|g| *g = 0.0);
            for (c, &p) in probs.iter().enumerate() {
                let y = if c == *target { 1.0 } else { 0.0 };
                let alpha = lr * (y - p as f32);
                for d in 0..dim {
                    let w = &mut model.output[d * k + c];
                    grad[d] += alpha * *w;
                    *w += alpha * hidden[d];
                }
            }
            let scale = 1.0 / rows.len() as f32;
            for &r in rows {
                for (w, g) in model.input[r * dim..(r + 1) * dim].iter_mut().zip(&grad) {
                    *w += g * scale;
                }
            }
        }
    }
    Ok(model)
}

#[derive(Debug, Clone, Serialize)]
pub struct RouterEvaluation {
    pub report: ClassificationReport,
    pub train_time: Option<Duration>,
    pub test_time: Duration,
}

/// Scores any classifier on a labelled test set.
pub fn evaluate_router(model: &dyn Classifier, testset: &[TrainingExample]) -> Result<RouterEvaluation> {
    if testset.is_empty() {
        return Err(Error::EmptyEval);
    }
    let started = Instant::now();
    let predicted: Vec<String> = testset.iter().map(|e| model.classify(&e.text)).collect();
    let test_time = started.elapsed();
    let gold: Vec<&str> = testset.iter().map(|e| e.label.as_str()).collect();
    let report = ClassificationReport::from_pairs(&model.label_names(), &gold, &predicted)?;
    Ok(RouterEvaluation {
        report,
        train_time: None,
        test_time,
    })
}

/// Seeded shuffle then split at `ratio` of the examples.
pub fn split_examples(
    examples: &[TrainingExample],
    ratio: f64,
    seed: u64,
) -> Result<(Vec<TrainingExample>, Vec<TrainingExample>)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidConfig(format!("split ratio {ratio} must lie strictly between 0 and 1")));
    }
    let mut shuffled = examples.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let cut = ((shuffled.len() as f64) * ratio).round() as usize;
    let test = shuffled.split_off(cut.min(shuffled.len()));
    Ok((shuffled, test))
}

/// Reads `{"text", "label"}` lines.
pub fn load_examples(path: &Path) -> Result<Vec<TrainingExample>> {
    let raw = read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let ex: TrainingExample = serde_json::from_str(line).map_err(|e| Error::MalformedRecord {
            line: i + 1,
            message: e.to_string(),
        })?;
        if ex.text.trim().is_empty() || ex.label.is_empty() {
            return Err(Error::MalformedRecord {
                line: i + 1,
                message: "text and label must be non-empty".into(),
            });
        }
        out.push(ex);
    }
    Ok(out)
}
