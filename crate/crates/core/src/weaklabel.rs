//! The weak labeler and the entropy filter.
//!
//! The labeler is a multinomial logistic regression over hashed word
//! unigrams/bigrams and character trigrams of the target utterance, plus
//! word features of the preceding `context_window` turns. It only needs to
//! produce a full probability vector; [`filter`] does the rest:
//!
//! * a candidate whose argmax matches its prescribed label is kept,
//! * among mismatched candidates, entropies are sorted ascending and the
//!   nearest-rank threshold `tau = sorted[min(ceil(P/100 * m), m - 1)]` is taken;
//!   mismatched candidates with entropy `>= tau` survive, the rest are dropped.

use std::collections::HashMap;
use std::hash::Hasher;
use std::path::Path;

use fnv::FnvHasher;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{Candidate, Payload, Verdict};
use crate::corpus::{LabelId, LabelSpace, Partition, Speaker, Task, Turn};
use crate::error::{Error, Result};
use crate::seed;

// ---- features -------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeaturizerConfig {
    pub dim: usize,
    pub word_ngrams: usize,
    pub char_ngrams: usize,
    pub context_window: usize,
}

impl Default for FeaturizerConfig {
    fn default() -> Self {
        Self {
            dim: 1 << 15,
            word_ngrams: 2,
            char_ngrams: 3,
            context_window: 1,
        }
    }
}

/// Sparse, L2-normalised feature vector sorted by feature id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureVector(pub Vec<(u32, f64)>);

impl FeatureVector {
    pub fn nnz(&self) -> usize {
        self.0.len()
    }
}

/// A classification input: the target utterance and its preceding turns.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub text: String,
    pub speaker: Option<Speaker>,
    /// Oldest first; each entry is `(speaker, text)`.
    pub context: Vec<(Speaker, String)>,
}

impl Instance {
    pub fn utterance(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            speaker: None,
            context: Vec::new(),
        }
    }

    /// Turn `index` of `turns` with up to `window` preceding turns as context.
    pub fn from_turns(turns: &[Turn], index: usize, window: usize) -> Self {
        let start = index.saturating_sub(window);
        Self {
            text: turns[index].text.clone(),
            speaker: Some(turns[index].speaker),
            context: turns[start..index]
                .iter()
                .map(|t| (t.speaker, t.text.clone()))
                .collect(),
        }
    }
}

fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() || ch == '\'' {
            cur.extend(ch.to_lowercase());
        } else {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
            if matches!(ch, '?' | '!') {
                out.push(ch.to_string());
            }
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

impl FeaturizerConfig {
    fn bucket(&self, key: &str) -> u32 {
        let mut h = FnvHasher::default();
        h.write(key.as_bytes());
        (h.finish() % self.dim as u64) as u32
    }

    fn add_words(&self, acc: &mut HashMap<u32, f64>, ns: &str, text: &str, weight: f64) {
        let toks = tokenize(text);
        for n in 1..=self.word_ngrams.max(1) {
            for w in toks.windows(n) {
                *acc.entry(self.bucket(&format!("{ns}{n}:{}", w.join(" ")))).or_default() += weight;
            }
        }
    }

    pub fn featurize(&self, inst: &Instance) -> FeatureVector {
        let mut acc: HashMap<u32, f64> = HashMap::new();
        self.add_words(&mut acc, "w", &inst.text, 1.0);
        if self.char_ngrams > 0 {
            let padded: Vec<char> = format!(" {} ", inst.text.to_lowercase()).chars().collect();
            for w in padded.windows(self.char_ngrams) {
                let s: String = w.iter().collect();
                *acc.entry(self.bucket(&format!("c:{s}"))).or_default() += 1.0;
            }
        }
        if let Some(s) = inst.speaker {
            *acc.entry(self.bucket(&format!("spk:{s:?}"))).or_default() += 1.0;
        }
        let ctx = &inst.context[inst.context.len().saturating_sub(self.context_window)..];
        if ctx.is_empty() && inst.speaker.is_some() {
            *acc.entry(self.bucket("ctx:none")).or_default() += 1.0;
        }
        for (speaker, text) in ctx {
            let rel = if Some(*speaker) == inst.speaker { "xs" } else { "xo" };
            self.add_words(&mut acc, rel, text, 0.5);
        }
        let mut v: Vec<(u32, f64)> = acc.into_iter().collect();
        v.sort_unstable_by_key(|&(k, _)| k);
        let norm = v.iter().map(|(_, x)| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            for (_, x) in &mut v {
                *x /= norm;
            }
        }
        FeatureVector(v)
    }
}

// ---- instances from data ----------------------------------------------------

/// Every labeled turn (dialogue) or every utterance, with its label.
pub fn gold_instances(gold: &Partition, task: Task, window: usize) -> Vec<(Instance, LabelId)> {
    match gold {
        Partition::Dialogue(convs) => convs
            .iter()
            .flat_map(|c| {
                c.turns.iter().enumerate().filter_map(move |(i, t)| {
                    t.label(task).map(|l| (Instance::from_turns(&c.turns, i, window), l))
                })
            })
            .collect(),
        Partition::Utterance(utts) => utts.iter().map(|u| (Instance::utterance(&u.text), u.label)).collect(),
    }
}

/// The instance a candidate is judged on: its final generated utterance.
pub fn candidate_instance(c: &Candidate, window: usize) -> Instance {
    match &c.payload {
        Payload::Dialogue(conv) => Instance::from_turns(&conv.turns, conv.turns.len() - 1, window),
        Payload::Utterance(u) => Instance::utterance(&u.text),
    }
}

/// Training instances contributed by usable candidates: each generated turn
/// with its prescribed label.
pub fn silver_instances<'a>(
    candidates: impl IntoIterator<Item = &'a Candidate>,
    task: Task,
    window: usize,
) -> Vec<(Instance, LabelId)> {
    let mut out = Vec::new();
    for c in candidates.into_iter().filter(|c| c.is_usable()) {
        match &c.payload {
            Payload::Dialogue(conv) => {
                for (i, t) in conv.turns.iter().enumerate() {
                    if let (true, Some(l)) = (t.generated, t.label(task)) {
                        out.push((Instance::from_turns(&conv.turns, i, window), l));
                    }
                }
            }
            Payload::Utterance(u) => out.push((Instance::utterance(&u.text), c.prescribed_label)),
        }
    }
    out
}

// ---- model ------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProbVector(pub Vec<f64>);

impl ProbVector {
    /// Argmax with ties going to the lowest index.
    pub fn argmax(&self) -> LabelId {
        let mut best = 0;
        for (i, &p) in self.0.iter().enumerate() {
            if p > self.0[best] {
                best = i;
            }
        }
        LabelId(best)
    }

    pub fn is_valid(&self) -> bool {
        !self.0.is_empty()
            && self.0.iter().all(|p| (0.0..=1.0).contains(p))
            && (self.0.iter().sum::<f64>() - 1.0).abs() <= 1e-9
    }
}

/// Shannon entropy in bits; zero-probability terms contribute nothing.
pub fn entropy_bits(p: &[f64]) -> f64 {
    p.iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| -x * x.log2())
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub l2: f64,
    /// Epochs without validation-loss improvement before stopping.
    pub patience: usize,
    /// Held-out share used for early stopping when no validation set is given.
    pub holdout_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            batch_size: 16,
            learning_rate: 0.5,
            l2: 1e-5,
            patience: 4,
            holdout_fraction: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeakLabeler {
    pub featurizer: FeaturizerConfig,
    pub label_space: LabelSpace,
    /// Row-major `classes x dim`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl WeakLabeler {
    pub fn zeros(label_space: LabelSpace, featurizer: FeaturizerConfig) -> Self {
        let c = label_space.len();
        Self {
            weights: vec![0.0; c * featurizer.dim],
            bias: vec![0.0; c],
            featurizer,
            label_space,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.bias.len()
    }

    fn scores(&self, fv: &FeatureVector) -> Vec<f64> {
        let d = self.featurizer.dim;
        (0..self.num_classes())
            .map(|c| {
                let row = &self.weights[c * d..(c + 1) * d];
                self.bias[c] + fv.0.iter().map(|&(f, x)| row[f as usize] * x).sum::<f64>()
            })
            .collect()
    }

    pub fn predict_features(&self, fv: &FeatureVector) -> ProbVector {
        ProbVector(softmax(&self.scores(fv)))
    }

    pub fn predict_proba(&self, inst: &Instance) -> ProbVector {
        self.predict_features(&self.featurizer.featurize(inst))
    }

    pub fn predict(&self, inst: &Instance) -> LabelId {
        self.predict_proba(inst).argmax()
    }

    fn mean_loss(&self, data: &[(FeatureVector, LabelId)]) -> f64 {
        if data.is_empty() {
            return 0.0;
        }
        data.iter()
            .map(|(fv, y)| -self.predict_features(fv).0[y.0].max(1e-300).ln())
            .sum::<f64>()
            / data.len() as f64
    }

    fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.bias).all(|w| w.is_finite())
    }
}

fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Fits the labeler by mini-batch gradient descent on softmax cross-entropy,
/// keeping the parameters with the lowest validation loss.
pub fn train(
    data: &[(Instance, LabelId)],
    label_space: &LabelSpace,
    featurizer: FeaturizerConfig,
    validation: Option<&[(Instance, LabelId)]>,
    cfg: &TrainConfig,
) -> Result<WeakLabeler> {
    if featurizer.dim == 0 {
        return Err(Error::InvalidArgument("feature dimension must be at least 1".into()));
    }
    let mut present = vec![false; label_space.len()];
    for (_, y) in data {
        if y.0 >= present.len() {
            return Err(Error::UnknownLabel(format!("#{}", y.0)));
        }
        present[y.0] = true;
    }
    if let Some(missing) = present.iter().position(|p| !p) {
        return Err(Error::MissingLabel(label_space.labels[missing].clone()));
    }

    let featurize = |d: &[(Instance, LabelId)]| -> Vec<(FeatureVector, LabelId)> {
        d.par_iter().map(|(i, y)| (featurizer.featurize(i), *y)).collect()
    };
    let mut train_set = featurize(data);
    let val_set = match validation {
        Some(v) => featurize(v),
        None if cfg.holdout_fraction > 0.0 && train_set.len() >= 20 => {
            let mut order: Vec<usize> = (0..train_set.len()).collect();
            order.shuffle(&mut seed::rng(seed::derive(cfg.seed, &[0x484f])));
            let n_hold = ((train_set.len() as f64 * cfg.holdout_fraction).round() as usize).max(1);
            let hold: std::collections::HashSet<usize> = order[..n_hold].iter().copied().collect();
            let (mut keep, mut held) = (Vec::new(), Vec::new());
            for (i, ex) in train_set.into_iter().enumerate() {
                if hold.contains(&i) {
                    held.push(ex);
                } else {
                    keep.push(ex);
                }
            }
            train_set = keep;
            held
        }
        None => Vec::new(),
    };

    let mut model = WeakLabeler::zeros(label_space.clone(), featurizer);
    let d = featurizer.dim;
    let c = label_space.len();
    let mut rng = seed::rng(seed::derive(cfg.seed, &[0x5452]));
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut best = (f64::INFINITY, model.clone());
    let mut stale = 0;
    let batch = cfg.batch_size.max(1);

    for _epoch in 0..cfg.epochs.max(1) {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch) {
            let mut grad_w: HashMap<usize, f64> = HashMap::new();
            let mut grad_b = vec![0.0; c];
            for &i in chunk {
                let (fv, y) = &train_set[i];
                let p = model.predict_features(fv).0;
                for k in 0..c {
                    let g = p[k] - if k == y.0 { 1.0 } else { 0.0 };
                    if g == 0.0 {
                        continue;
                    }
                    grad_b[k] += g;
                    for &(f, x) in &fv.0 {
                        *grad_w.entry(k * d + f as usize).or_default() += g * x;
                    }
                }
            }
            let step = cfg.learning_rate / chunk.len() as f64;
            let mut keys: Vec<usize> = grad_w.keys().copied().collect();
            keys.sort_unstable();
            for key in keys {
                let w = &mut model.weights[key];
                *w -= step * (grad_w[&key] + cfg.l2 * chunk.len() as f64 * *w);
            }
            for k in 0..c {
                model.bias[k] -= step * grad_b[k];
            }
        }
        if !model.is_finite() {
            return Err(Error::InvalidArgument("training diverged".into()));
        }
        if val_set.is_empty() {
            best = (0.0, model.clone());
            continue;
        }
        let loss = model.mean_loss(&val_set);
        if loss < best.0 - 1e-12 {
            best = (loss, model.clone());
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience.max(1) {
                break;
            }
        }
    }
    Ok(best.1)
}

// ---- checkpoints --------------------------------------------------------------

const CHECKPOINT_FORMAT: &str = "weakdap-weak-labeler";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    featurizer: FeaturizerConfig,
    label_space: LabelSpace,
    bias: Vec<f64>,
    /// Non-zero weights per class as `(feature, value)`.
    weights: Vec<Vec<(u32, f64)>>,
}

impl WeakLabeler {
    pub fn to_json(&self) -> Result<String> {
        let d = self.featurizer.dim;
        let ck = Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            featurizer: self.featurizer,
            label_space: self.label_space.clone(),
            bias: self.bias.clone(),
            weights: (0..self.num_classes())
                .map(|c| {
                    self.weights[c * d..(c + 1) * d]
                        .iter()
                        .enumerate()
                        .filter(|(_, w)| **w != 0.0)
                        .map(|(f, w)| (f as u32, *w))
                        .collect()
                })
                .collect(),
        };
        Ok(serde_json::to_string(&ck)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::InvalidRecord(format!(
                "unsupported checkpoint {} v{}",
                ck.format, ck.version
            )));
        }
        let c = ck.label_space.len();
        if ck.bias.len() != c || ck.weights.len() != c || ck.featurizer.dim == 0 {
            return Err(Error::InvalidRecord("checkpoint shape does not match its label space".into()));
        }
        let mut m = WeakLabeler::zeros(ck.label_space, ck.featurizer);
        m.bias = ck.bias;
        for (k, row) in ck.weights.into_iter().enumerate() {
            for (f, w) in row {
                if f as usize >= m.featurizer.dim {
                    return Err(Error::InvalidRecord(format!("feature {f} out of range")));
                }
                m.weights[k * m.featurizer.dim + f as usize] = w;
            }
        }
        if !m.is_finite() {
            return Err(Error::InvalidRecord("checkpoint has non-finite parameters".into()));
        }
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    /// Loads a checkpoint, rejecting it when `expected` is given and differs.
    pub fn load(path: impl AsRef<Path>, expected: Option<&LabelSpace>) -> Result<Self> {
        let path = path.as_ref();
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let m = Self::from_json(&text)?;
        if let Some(exp) = expected {
            if !m.label_space.compatible(exp) {
                return Err(Error::LabelSpaceMismatch(format!(
                    "checkpoint has {:?} {:?}, data has {:?} {:?}",
                    m.label_space.task, m.label_space.labels, exp.task, exp.labels
                )));
            }
        }
        Ok(m)
    }
}

// ---- filtering ----------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    pub percentile: f64,
    pub enabled: bool,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            percentile: 80.0,
            enabled: true,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=100.0).contains(&self.percentile) {
            return Err(Error::InvalidArgument(format!(
                "percentile must be in [0, 100], got {}",
                self.percentile
            )));
        }
        Ok(())
    }
}

/// Nearest-rank threshold over `entropies`; `None` when empty.
pub fn nearest_rank_threshold(entropies: &[f64], percentile: f64) -> Option<f64> {
    if entropies.is_empty() {
        return None;
    }
    let mut sorted = entropies.to_vec();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len();
    let idx = ((percentile * m as f64) / 100.0).ceil() as usize;
    Some(sorted[idx.min(m - 1)])
}

/// Keep decisions for one batch: matched entries are always kept; mismatched
/// ones are kept iff their entropy reaches the nearest-rank threshold.
pub fn entropy_keep_mask(matched: &[bool], entropies: &[f64], percentile: f64) -> Vec<bool> {
    let mismatched: Vec<f64> = matched
        .iter()
        .zip(entropies)
        .filter(|(m, _)| !**m)
        .map(|(_, e)| *e)
        .collect();
    let tau = nearest_rank_threshold(&mismatched, percentile);
    matched
        .iter()
        .zip(entropies)
        .map(|(&m, &e)| m || tau.is_some_and(|t| e >= t))
        .collect()
}

/// Parse failures and duplicates stay dropped; earlier filter verdicts are
/// overwritten.
fn judgeable(c: &Candidate) -> bool {
    !matches!(c.verdict, Verdict::DroppedParse | Verdict::DroppedDuplicate)
}

/// Scores every judgeable candidate with `model` and assigns verdicts.
pub fn filter(mut candidates: Vec<Candidate>, model: &WeakLabeler, config: &FilterConfig) -> Result<Vec<Candidate>> {
    config.validate()?;
    let window = model.featurizer.context_window;
    let scored: Vec<Option<ProbVector>> = candidates
        .par_iter()
        .map(|c| judgeable(c).then(|| model.predict_proba(&candidate_instance(c, window))))
        .collect();
    let mut idx = Vec::new();
    for (i, (c, p)) in candidates.iter_mut().zip(scored).enumerate() {
        if let Some(p) = p {
            c.silver_label = Some(p.argmax());
            c.entropy = Some(entropy_bits(&p.0));
            c.prob = Some(p);
            idx.push(i);
        }
    }
    if !config.enabled {
        for &i in &idx {
            candidates[i].verdict = Verdict::Kept;
        }
        return Ok(candidates);
    }
    let matched: Vec<bool> = idx
        .iter()
        .map(|&i| candidates[i].silver_label == Some(candidates[i].prescribed_label))
        .collect();
    let entropies: Vec<f64> = idx.iter().map(|&i| candidates[i].entropy.unwrap_or(0.0)).collect();
    let keep = entropy_keep_mask(&matched, &entropies, config.percentile);
    for (&i, k) in idx.iter().zip(keep) {
        candidates[i].verdict = if k { Verdict::Kept } else { Verdict::DroppedMismatch };
    }
    Ok(candidates)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseReport {
    pub total: usize,
    pub noisy: usize,
    pub kept: usize,
    pub kept_noisy: usize,
    pub overall_noise_rate: f64,
    pub kept_noise_rate: f64,
}

/// Noise among already-judged candidates, using the labels planted by the
/// mock generator.
pub fn noise_report(candidates: &[Candidate]) -> Result<NoiseReport> {
    let mut r = NoiseReport {
        total: 0,
        noisy: 0,
        kept: 0,
        kept_noisy: 0,
        overall_noise_rate: 0.0,
        kept_noise_rate: 0.0,
    };
    for c in candidates.iter().filter(|c| c.verdict != Verdict::DroppedParse) {
        let planted = c.planted_label.ok_or_else(|| {
            Error::InvalidArgument(format!("candidate `{}` carries no planted label (not from the mock generator)", c.id))
        })?;
        let noisy = planted != c.prescribed_label;
        r.total += 1;
        r.noisy += usize::from(noisy);
        if c.is_usable() {
            r.kept += 1;
            r.kept_noisy += usize::from(noisy);
        }
    }
    r.overall_noise_rate = ratio(r.noisy, r.total);
    r.kept_noise_rate = ratio(r.kept_noisy, r.kept);
    Ok(r)
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Filters mock candidates with `model` and reports planted-noise retention.
pub fn planted_noise_retention(
    candidates: Vec<Candidate>,
    model: &WeakLabeler,
    config: &FilterConfig,
) -> Result<(NoiseReport, Vec<Candidate>)> {
    if let Some(c) = candidates.iter().find(|c| c.is_usable() && c.planted_label.is_none()) {
        return Err(Error::InvalidArgument(format!(
            "candidate `{}` carries no planted label (not from the mock generator)",
            c.id
        )));
    }
    let judged = filter(candidates, model, config)?;
    Ok((noise_report(&judged)?, judged))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::Strategy;
    use crate::corpus::{Lang, LabeledUtterance, Provenance};

    fn space(n: usize) -> LabelSpace {
        LabelSpace::new(Task::Intent, (0..n).map(|i| format!("l{i}"))).unwrap()
    }

    fn toy() -> Vec<(Instance, LabelId)> {
        let words = [["red", "apple", "cherry"], ["blue", "sky", "ocean"]];
        let mut out = Vec::new();
        for i in 0..40 {
            let y = i % 2;
            let w = &words[y];
            out.push((
                Instance::utterance(format!("{} {} {}", w[i % 3], w[(i + 1) % 3], w[(i / 3) % 3])),
                LabelId(y),
            ));
        }
        out
    }

    #[test]
    fn separable_toy_fits_perfectly() {
        let data = toy();
        let m = train(&data, &space(2), FeaturizerConfig::default(), None, &TrainConfig::default()).unwrap();
        for (x, y) in &data {
            assert_eq!(m.predict(x), *y);
        }
    }

    #[test]
    fn training_is_deterministic() {
        let data = toy();
        let a = train(&data, &space(2), FeaturizerConfig::default(), None, &TrainConfig::default()).unwrap();
        let b = train(&data, &space(2), FeaturizerConfig::default(), None, &TrainConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn missing_label_is_named() {
        let err = train(&toy(), &space(3), FeaturizerConfig::default(), None, &TrainConfig::default()).unwrap_err();
        assert!(err.to_string().contains("`l2`"), "{err}");
    }

    #[test]
    fn zero_weights_give_uniform() {
        let m = WeakLabeler::zeros(space(4), FeaturizerConfig::default());
        let p = m.predict_proba(&Instance::utterance("anything"));
        assert!(p.0.iter().all(|&x| (x - 0.25).abs() < 1e-15));
        assert_eq!(p.argmax(), LabelId(0));
        assert!(p.is_valid());
    }

    #[test]
    fn features_nonempty_and_normalised() {
        let f = FeaturizerConfig::default();
        let v = f.featurize(&Instance::utterance("Hi!"));
        assert!(v.nnz() > 0);
        let n: f64 = v.0.iter().map(|(_, x)| x * x).sum();
        assert!((n - 1.0).abs() < 1e-12);
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(entropy_bits(&[1.0, 0.0, 0.0]), 0.0);
        assert!((entropy_bits(&[1.0 / 7.0; 7]) - 7f64.log2()).abs() < 1e-12);
        // -(0.9 log2 0.9 + 2 * 0.05 log2 0.05) = 0.568996...
        assert!((entropy_bits(&[0.9, 0.05, 0.05]) - 0.5690).abs() < 1e-4);
    }

    #[test]
    fn threshold_boundaries() {
        let e: Vec<f64> = (0..50).map(|i| i as f64 / 10.0).collect();
        let matched = vec![false; 50];
        let keep = entropy_keep_mask(&matched, &e, 80.0);
        assert_eq!(keep.iter().filter(|k| **k).count(), 10);
        assert!(keep[40..].iter().all(|k| *k));

        let keep = entropy_keep_mask(&matched, &e, 100.0);
        assert_eq!(keep.iter().filter(|k| **k).count(), 1);
        let keep = entropy_keep_mask(&matched, &e, 0.0);
        assert!(keep.iter().all(|k| *k));

        // single mismatched candidate survives
        assert_eq!(entropy_keep_mask(&[false], &[0.3], 80.0), vec![true]);
        // no mismatches
        assert_eq!(entropy_keep_mask(&[true, true], &[0.0, 2.0], 80.0), vec![true, true]);
    }

    #[test]
    fn max_ties_survive_at_p100() {
        let keep = entropy_keep_mask(&[false; 4], &[0.1, 0.9, 0.9, 0.5], 100.0);
        assert_eq!(keep, vec![false, true, true, false]);
    }

    fn utt_candidate(text: &str, prescribed: usize, planted: usize) -> Candidate {
        Candidate {
            id: text.into(),
            payload: Payload::Utterance(LabeledUtterance {
                id: text.into(),
                text: text.into(),
                label: LabelId(prescribed),
                lang: Lang::En,
                provenance: Provenance::Silver,
            }),
            prescribed_label: LabelId(prescribed),
            strategy: Strategy::Incontext,
            source_id: "g".into(),
            silver_label: None,
            prob: None,
            entropy: None,
            verdict: Verdict::Pending,
            planted_label: Some(LabelId(planted)),
        }
    }

    #[test]
    fn filter_keeps_matches_and_drops_confident_mismatches() {
        let m = train(&toy(), &space(2), FeaturizerConfig::default(), None, &TrainConfig::default()).unwrap();
        let cands = vec![
            utt_candidate("red apple cherry", 0, 0),
            utt_candidate("blue sky ocean", 1, 1),
            utt_candidate("blue ocean sky", 0, 1),
            utt_candidate("cherry apple red", 1, 0),
            utt_candidate("sky blue", 0, 1),
        ];
        let out = filter(cands, &m, &FilterConfig::default()).unwrap();
        assert_eq!(out[0].verdict, Verdict::Kept);
        assert_eq!(out[1].verdict, Verdict::Kept);
        let dropped = out.iter().filter(|c| c.verdict == Verdict::DroppedMismatch).count();
        assert_eq!(dropped, 2);
        assert!(out.iter().all(|c| c.prob.as_ref().unwrap().is_valid()));

        let (report, _) = planted_noise_retention(out.clone(), &m, &FilterConfig::default()).unwrap();
        assert_eq!(report.noisy, 3);
        assert!(report.kept_noise_rate < report.overall_noise_rate);

        let off = FilterConfig {
            enabled: false,
            ..FilterConfig::default()
        };
        let (report, judged) = planted_noise_retention(out, &m, &off).unwrap();
        assert!(judged.iter().all(|c| c.verdict == Verdict::Kept));
        assert_eq!(report.kept_noise_rate, report.overall_noise_rate);
    }

    #[test]
    fn zero_noise_retention_is_zero() {
        let m = WeakLabeler::zeros(space(2), FeaturizerConfig::default());
        let cands = vec![utt_candidate("a", 0, 0), utt_candidate("b", 1, 1)];
        let (r, _) = planted_noise_retention(cands, &m, &FilterConfig::default()).unwrap();
        assert_eq!(r.kept_noise_rate, 0.0);
    }

    #[test]
    fn retention_requires_mock_candidates() {
        let m = WeakLabeler::zeros(space(2), FeaturizerConfig::default());
        let mut c = utt_candidate("a", 0, 0);
        c.planted_label = None;
        assert!(planted_noise_retention(vec![c], &m, &FilterConfig::default()).is_err());
    }

    #[test]
    fn empty_filter_is_empty() {
        let m = WeakLabeler::zeros(space(2), FeaturizerConfig::default());
        assert!(filter(vec![], &m, &FilterConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn checkpoint_roundtrip_and_mismatch() {
        let m = train(&toy(), &space(2), FeaturizerConfig::default(), None, &TrainConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        m.save(&p).unwrap();
        assert_eq!(WeakLabeler::load(&p, Some(&space(2))).unwrap(), m);
        let err = WeakLabeler::load(&p, Some(&space(3))).unwrap_err();
        assert!(matches!(err, Error::LabelSpaceMismatch(_)));
    }

    proptest::proptest! {
        #[test]
        fn entropy_bounds_and_permutation(raw in proptest::collection::vec(0.0f64..1.0, 2..12), rot in 0usize..12) {
            let z: f64 = raw.iter().sum();
            proptest::prop_assume!(z > 1e-6);
            let p: Vec<f64> = raw.iter().map(|x| x / z).collect();
            let h = entropy_bits(&p);
            proptest::prop_assert!(h >= 0.0);
            proptest::prop_assert!(h <= (p.len() as f64).log2() + 1e-12);
            let mut q = p.clone();
            q.rotate_left(rot % p.len());
            q.reverse();
            proptest::prop_assert!((entropy_bits(&q) - h).abs() < 1e-12);
        }
    }
}
