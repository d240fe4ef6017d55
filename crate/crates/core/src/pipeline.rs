//! The iterative augment, filter, train, evaluate loop.
//!
//! Iteration 0 augments the gold data without filtering and trains on gold
//! plus all parsed silver. Every later iteration produces candidates (fresh
//! generation or the iteration-0 pool), filters them with the classifier of
//! the previous iteration, and trains a new classifier from scratch. The loop
//! stops once `patience` consecutive iterations fail to improve on the last
//! reference score by at least `epsilon`, or at `max_iterations`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::{self, AugmentPlan, Augmenter, Candidate, Verdict};
use crate::corpus::{self, DialogueLabels, LabelId, LabelSpace, LabeledUtterance, Partition};
use crate::error::{Error, Result};
use crate::eval::{self, ConfusionMatrix};
use crate::genbackend::{GenError, Generator};
use crate::prompt::PromptSpec;
use crate::seed;
use crate::weaklabel::{self, FeaturizerConfig, FilterConfig, NoiseReport, TrainConfig, WeakLabeler};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    MicroF1NoMajority,
    MacroF1,
    Accuracy,
}

impl Metric {
    pub fn score(self, cm: &ConfusionMatrix, majority: LabelId) -> f64 {
        match self {
            Metric::MicroF1NoMajority => eval::micro_f1_no_majority(cm, majority),
            Metric::MacroF1 => eval::macro_f1(cm),
            Metric::Accuracy => eval::accuracy(cm).unwrap_or(0.0),
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "micro_f1_no_majority" => Ok(Metric::MicroF1NoMajority),
            "macro_f1" => Ok(Metric::MacroF1),
            "accuracy" => Ok(Metric::Accuracy),
            other => Err(Error::InvalidArgument(format!("unknown metric `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regen {
    /// Re-invoke the generator every iteration.
    #[default]
    Fresh,
    /// Re-filter the iteration-0 candidate pool.
    Refilter,
}

impl std::str::FromStr for Regen {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fresh" => Ok(Regen::Fresh),
            "refilter" => Ok(Regen::Refilter),
            other => Err(Error::InvalidArgument(format!("unknown regen mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoopConfig {
    pub epsilon: f64,
    pub patience: usize,
    pub max_iterations: usize,
    pub metric: Metric,
    pub regen: Regen,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.005,
            patience: 3,
            max_iterations: 20,
            metric: Metric::MicroF1NoMajority,
            regen: Regen::Fresh,
        }
    }
}

impl LoopConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || self.patience == 0 || self.max_iterations == 0 {
            return Err(Error::InvalidArgument(
                "loop needs epsilon > 0, patience >= 1 and max_iterations >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    MaxIterations,
}

/// The `(epsilon, k)` stopping automaton.
///
/// `best` tracks the highest score seen (earliest on ties). Patience is
/// counted against an anchor that only moves when a score beats it by at
/// least `epsilon`, so slow creeping gains still exhaust the patience.
#[derive(Debug, Clone, PartialEq)]
pub struct Convergence {
    epsilon: f64,
    patience: usize,
    max_iterations: usize,
    anchor: f64,
    pub history: Vec<f64>,
    pub best_score: f64,
    pub best_iteration: usize,
    pub no_improve_count: usize,
}

impl Convergence {
    pub fn new(cfg: &LoopConfig) -> Self {
        Self {
            epsilon: cfg.epsilon,
            patience: cfg.patience,
            max_iterations: cfg.max_iterations,
            anchor: f64::NEG_INFINITY,
            history: Vec::new(),
            best_score: f64::NEG_INFINITY,
            best_iteration: 0,
            no_improve_count: 0,
        }
    }

    /// Records the score of the next iteration; `Some` means stop now.
    pub fn observe(&mut self, score: f64) -> Option<StopReason> {
        let t = self.history.len();
        self.history.push(score);
        if score > self.best_score {
            self.best_score = score;
            self.best_iteration = t;
        }
        if t == 0 || score - self.anchor >= self.epsilon - 1e-12 {
            self.anchor = score;
            self.no_improve_count = 0;
        } else {
            self.no_improve_count += 1;
        }
        if self.no_improve_count >= self.patience {
            Some(StopReason::Converged)
        } else if t >= self.max_iterations {
            Some(StopReason::MaxIterations)
        } else {
            None
        }
    }

    pub fn iteration(&self) -> usize {
        self.history.len().saturating_sub(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub filtered: bool,
    pub produced: usize,
    pub kept: usize,
    pub dropped_mismatch: usize,
    pub dropped_parse: usize,
    pub dropped_duplicate: usize,
    pub generation_failures: usize,
    pub effective_multiplier: f64,
    pub score: f64,
    pub model: String,
    pub candidates: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub planted_noise: Option<NoiseReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestPointer {
    pub iteration: usize,
    pub score: f64,
    pub model: String,
    pub candidates: String,
}

/// The persisted `run.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: serde_json::Value,
    pub iterations: Vec<IterationRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best: Option<BestPointer>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_reason: Option<StopReason>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aborted: Option<String>,
}

impl RunRecord {
    pub fn new(config: serde_json::Value) -> Self {
        Self {
            config,
            iterations: Vec::new(),
            best: None,
            stop_reason: None,
            aborted: None,
        }
    }
}

/// Writes `record` as pretty JSON to `path`.
pub fn snapshot(record: &RunRecord, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(record)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn reload(path: impl AsRef<Path>) -> Result<RunRecord> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    Ok(serde_json::from_str(&text)?)
}

#[derive(Debug, Clone)]
pub struct LoopState {
    pub iteration: usize,
    pub score_history: Vec<f64>,
    pub best_score: f64,
    pub best_iteration: usize,
    pub best_model: WeakLabeler,
    pub best_silver: Vec<Candidate>,
    pub no_improve_count: usize,
    pub record: RunRecord,
}

/// Data and settings for one run.
pub struct WeakDap<'a> {
    pub train: &'a Partition,
    pub validation: &'a Partition,
    pub label_space: &'a LabelSpace,
    pub dialogue_labels: &'a DialogueLabels,
    /// English example pool for cross-lingual intent augmentation.
    pub pool: Option<&'a [LabeledUtterance]>,
    pub plan: &'a AugmentPlan,
    pub spec: &'a PromptSpec,
    pub filter: &'a FilterConfig,
    pub loop_cfg: &'a LoopConfig,
    pub train_cfg: &'a TrainConfig,
    pub featurizer: FeaturizerConfig,
    pub gen: &'a dyn Generator,
    /// Run directory; nothing is written when `None`.
    pub out_dir: Option<&'a Path>,
    /// Effective configuration echoed into `run.json`.
    pub config: serde_json::Value,
}

fn verdict_count(cands: &[Candidate], v: Verdict) -> usize {
    cands.iter().filter(|c| c.verdict == v).count()
}

impl WeakDap<'_> {
    fn iter_dir(&self, t: usize) -> Result<Option<PathBuf>> {
        let Some(root) = self.out_dir else { return Ok(None) };
        let dir = root.join(format!("iter_{t}"));
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        Ok(Some(dir))
    }

    fn persist_record(&self, record: &RunRecord) -> Result<()> {
        if let Some(root) = self.out_dir {
            snapshot(record, root.join("run.json"))?;
            if let Some(best) = &record.best {
                let mut text = serde_json::to_string_pretty(best)?;
                text.push('\n');
                let p = root.join("best.json");
                std::fs::write(&p, text).map_err(|e| Error::io(format!("writing {}", p.display()), e))?;
            }
        }
        Ok(())
    }

    fn candidates_for(&self, t: usize) -> Result<augment::AugmentOutput> {
        let plan = AugmentPlan {
            seed: seed::derive(self.plan.seed, &[t as u64]),
            ..self.plan.clone()
        };
        Augmenter::new(self.gen, self.spec, self.label_space, &plan).run(self.train, self.pool)
    }

    /// Runs the loop to convergence and returns the final state.
    pub fn run(&self) -> Result<LoopState> {
        self.loop_cfg.validate()?;
        self.filter.validate()?;
        self.plan.validate()?;
        if self.train.is_empty() || self.validation.is_empty() {
            return Err(Error::InvalidArgument("gold train and validation must be non-empty".into()));
        }
        if let Some(root) = self.out_dir {
            std::fs::create_dir_all(root).map_err(|e| Error::io(format!("creating {}", root.display()), e))?;
        }

        let task = self.label_space.task;
        let window = self.featurizer.context_window;
        let majority = self
            .label_space
            .majority
            .unwrap_or_else(|| corpus::majority_label(self.train, self.label_space));
        let gold = weaklabel::gold_instances(self.train, task, window);
        let val = weaklabel::gold_instances(self.validation, task, window);

        let mut conv = Convergence::new(self.loop_cfg);
        let mut record = RunRecord::new(self.config.clone());
        let mut pool0: Option<augment::AugmentOutput> = None;
        let mut prev_model: Option<WeakLabeler> = None;
        let mut best: Option<(WeakLabeler, Vec<Candidate>)> = None;
        let gold_units = self.train.len();

        loop {
            let t = conv.history.len();
            let out = match (self.loop_cfg.regen, &pool0) {
                (Regen::Refilter, Some(p)) => {
                    let mut p = p.clone();
                    p.candidates.iter_mut().for_each(Candidate::reset_judgement);
                    p
                }
                _ => self.candidates_for(t)?,
            };
            if !out.candidates.is_empty() && out.generation_failures == out.candidates.len() {
                record.aborted = Some(format!("iteration {t}: every generation request failed"));
                self.persist_record(&record)?;
                return Err(GenError::Transport {
                    attempts: 0,
                    message: format!("backend `{}` failed for every candidate", self.gen.id()),
                }
                .into());
            }
            if t == 0 {
                pool0 = Some(out.clone());
            }

            let mut candidates = out.candidates;
            let filtered = match &prev_model {
                Some(m) => {
                    candidates = weaklabel::filter(candidates, m, self.filter)?;
                    self.filter.enabled
                }
                None => {
                    for c in candidates.iter_mut().filter(|c| c.verdict == Verdict::Pending) {
                        c.verdict = Verdict::Kept;
                    }
                    false
                }
            };

            let silver = weaklabel::silver_instances(&candidates, task, window);
            let note = silver
                .is_empty()
                .then(|| "no silver candidates kept; trained on gold only".to_string());
            let mut data = gold.clone();
            data.extend(silver);
            let train_cfg = TrainConfig {
                seed: seed::derive(self.train_cfg.seed, &[t as u64]),
                ..self.train_cfg.clone()
            };
            let model = weaklabel::train(&data, self.label_space, self.featurizer, Some(&val), &train_cfg)?;
            let cm = eval::evaluate(&model, &val);
            let score = self.loop_cfg.metric.score(&cm, majority);

            let dir = self.iter_dir(t)?;
            let model_ref = format!("iter_{t}/model.ckpt");
            let cand_ref = format!("iter_{t}/candidates.jsonl");
            if let Some(dir) = &dir {
                model.save(dir.join("model.ckpt"))?;
                augment::write_candidates(
                    dir.join("candidates.jsonl"),
                    &candidates,
                    self.dialogue_labels,
                    self.label_space,
                )?;
            }
            let planted_noise = if !candidates.is_empty()
                && candidates
                    .iter()
                    .all(|c| c.verdict == Verdict::DroppedParse || c.planted_label.is_some())
            {
                weaklabel::noise_report(&candidates).ok()
            } else {
                None
            };
            record.iterations.push(IterationRecord {
                iteration: t,
                filtered,
                produced: candidates.len(),
                kept: verdict_count(&candidates, Verdict::Kept),
                dropped_mismatch: verdict_count(&candidates, Verdict::DroppedMismatch),
                dropped_parse: verdict_count(&candidates, Verdict::DroppedParse),
                dropped_duplicate: verdict_count(&candidates, Verdict::DroppedDuplicate),
                generation_failures: out.generation_failures,
                effective_multiplier: augment::effective_multiplier(&candidates, gold_units),
                score,
                model: model_ref.clone(),
                candidates: cand_ref.clone(),
                planted_noise,
                note,
            });

            let stop = conv.observe(score);
            if conv.best_iteration == t {
                record.best = Some(BestPointer {
                    iteration: t,
                    score,
                    model: model_ref,
                    candidates: cand_ref,
                });
                let kept: Vec<Candidate> = candidates.iter().filter(|c| c.is_usable()).cloned().collect();
                best = Some((model.clone(), kept));
            }
            prev_model = Some(model);
            if let Some(reason) = stop {
                record.stop_reason = Some(reason);
                self.persist_record(&record)?;
                break;
            }
            self.persist_record(&record)?;
        }

        let (best_model, best_silver) = best.expect("at least one iteration ran");
        Ok(LoopState {
            iteration: conv.iteration(),
            score_history: conv.history.clone(),
            best_score: conv.best_score,
            best_iteration: conv.best_iteration,
            best_model,
            best_silver,
            no_improve_count: conv.no_improve_count,
            record,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_scores(scores: &[f64], cfg: &LoopConfig) -> (Convergence, Option<StopReason>) {
        let mut c = Convergence::new(cfg);
        for &s in scores {
            if let Some(r) = c.observe(s) {
                return (c, Some(r));
            }
        }
        (c, None)
    }

    #[test]
    fn hand_traced_sequence_stops_after_iteration_four() {
        let (c, r) = run_scores(&[0.50, 0.51, 0.512, 0.513, 0.514, 0.9], &LoopConfig::default());
        assert_eq!(r, Some(StopReason::Converged));
        assert_eq!(c.iteration(), 4);
        assert_eq!(c.best_score, 0.514);
        assert_eq!(c.best_iteration, 4);
    }

    #[test]
    fn monotone_runs_to_cap() {
        let cfg = LoopConfig {
            max_iterations: 6,
            ..LoopConfig::default()
        };
        let scores: Vec<f64> = (0..20).map(|i| 0.3 + 0.01 * i as f64).collect();
        let (c, r) = run_scores(&scores, &cfg);
        assert_eq!(r, Some(StopReason::MaxIterations));
        assert_eq!(c.iteration(), 6);
    }

    #[test]
    fn minimal_patience_flat() {
        let cfg = LoopConfig {
            patience: 1,
            ..LoopConfig::default()
        };
        let (c, r) = run_scores(&[0.4, 0.4, 0.4], &cfg);
        assert_eq!(r, Some(StopReason::Converged));
        assert_eq!(c.iteration(), 1);
        assert_eq!(c.best_iteration, 0);
    }

    #[test]
    fn creeping_gains_reset_once_cumulative_gain_reaches_epsilon() {
        let (c, r) = run_scores(&[0.50, 0.504, 0.508, 0.509, 0.510, 0.511], &LoopConfig::default());
        // 0.508 is >= 0.50 + 0.005, which resets patience
        assert_eq!(r, Some(StopReason::Converged));
        assert_eq!(c.iteration(), 5);
    }

    #[test]
    fn config_validation() {
        assert!(LoopConfig::default().validate().is_ok());
        let bad = LoopConfig {
            epsilon: 0.0,
            ..LoopConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn record_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.json");
        let empty = RunRecord::new(serde_json::json!({"epsilon": 0.005}));
        snapshot(&empty, &p).unwrap();
        assert_eq!(reload(&p).unwrap(), empty);
        assert!(snapshot(&empty, dir.path().join("missing/run.json")).is_err());
    }
}
