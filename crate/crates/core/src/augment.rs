//! Silver candidate generation.
//!
//! Three dialogue strategies replace turns of a gold conversation with
//! generated ones:
//!
//! * last-turn (LTA): regenerate turn `n` from gold turns `1..n-1`,
//! * all-turn (ATA): for every `i` in `2..=n`, regenerate turn `i` from gold
//!   turns `1..i-1`, giving `n-1` candidates of lengths `2..=n`,
//! * trajectory (CTA): keep turns 1 and 2, then generate turns `3..=n`
//!   feeding each generated turn back as context.
//!
//! Single-turn intent data uses cross-lingual in-context prompting with beam
//! search and duplicate rejection. [`Augmenter::run`] schedules repeated
//! passes over the gold data until the size-multiplier budget is reached.

use std::collections::HashSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    self, Conversation, ConversationRecord, DialogueLabels, LabelId, LabelSpace, LabeledUtterance,
    Lang, Partition, Provenance, Turn, UtteranceRecord,
};
use crate::error::{Error, Result};
use crate::genbackend::{Completion, GenError, GenParams, Generator};
use crate::prompt::{self, LabelMode, PromptSpec};
use crate::seed;
use crate::weaklabel::ProbVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Lta,
    Ata,
    Cta,
    Incontext,
    Eda,
    Aeda,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Lta => "lta",
            Strategy::Ata => "ata",
            Strategy::Cta => "cta",
            Strategy::Incontext => "incontext",
            Strategy::Eda => "eda",
            Strategy::Aeda => "aeda",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lta" => Ok(Strategy::Lta),
            "ata" => Ok(Strategy::Ata),
            "cta" => Ok(Strategy::Cta),
            "incontext" => Ok(Strategy::Incontext),
            "eda" => Ok(Strategy::Eda),
            "aeda" => Ok(Strategy::Aeda),
            other => Err(Error::InvalidArgument(format!("unknown strategy `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    #[default]
    Pending,
    Kept,
    DroppedMismatch,
    DroppedParse,
    DroppedDuplicate,
}

impl Verdict {
    pub fn is_dropped(self) -> bool {
        matches!(
            self,
            Verdict::DroppedMismatch | Verdict::DroppedParse | Verdict::DroppedDuplicate
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Dialogue(Conversation),
    Utterance(LabeledUtterance),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub id: String,
    pub payload: Payload,
    pub prescribed_label: LabelId,
    pub strategy: Strategy,
    pub source_id: String,
    pub silver_label: Option<LabelId>,
    pub prob: Option<ProbVector>,
    pub entropy: Option<f64>,
    pub verdict: Verdict,
    /// Label actually realised by the mock generator; see
    /// [`Completion::planted_label`].
    #[doc(hidden)]
    pub planted_label: Option<LabelId>,
}

impl Candidate {
    /// Text of the (final) generated utterance.
    pub fn generated_text(&self) -> &str {
        match &self.payload {
            Payload::Dialogue(c) => c.turns.last().map_or("", |t| t.text.as_str()),
            Payload::Utterance(u) => &u.text,
        }
    }

    pub fn is_usable(&self) -> bool {
        matches!(self.verdict, Verdict::Pending | Verdict::Kept)
    }

    pub fn reset_judgement(&mut self) {
        if self.verdict != Verdict::DroppedParse && self.verdict != Verdict::DroppedDuplicate {
            self.verdict = Verdict::Pending;
        }
        self.silver_label = None;
        self.prob = None;
        self.entropy = None;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentPlan {
    pub strategy: Strategy,
    pub multiplier: f64,
    pub label_mode: LabelMode,
    pub seed: u64,
}

impl AugmentPlan {
    pub fn new(strategy: Strategy, multiplier: f64, seed: u64) -> Self {
        Self {
            strategy,
            multiplier,
            label_mode: LabelMode::Gold,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.multiplier > 0.0 && self.multiplier.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "multiplier must be positive, got {}",
                self.multiplier
            )));
        }
        Ok(())
    }

    /// Candidate budget for `gold_len` gold units.
    pub fn budget(&self, gold_len: usize) -> usize {
        (self.multiplier * gold_len as f64 - 1e-9).ceil().max(0.0) as usize
    }
}

const LABEL_STREAM: u64 = 0x4c41_4245;
const GEN_STREAM: u64 = 0x4745_4e53;
const EXAMPLE_STREAM: u64 = 0x4558_4d50;
const ORDER_STREAM: u64 = 0x4f52_4452;

/// Seed of the prescribed-label stream for gold item `index` in `pass`.
pub fn label_stream_seed(plan_seed: u64, pass: u64, index: u64) -> u64 {
    seed::derive(plan_seed, &[LABEL_STREAM, pass, index])
}

fn gen_seed(plan_seed: u64, pass: u64, index: u64, turn: u64) -> u64 {
    seed::derive(plan_seed, &[GEN_STREAM, pass, index, turn])
}

/// Lowercased, whitespace-collapsed text used for duplicate detection.
pub fn normalize_text(text: &str) -> String {
    text.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Drops candidates whose normalized generated text repeats an earlier
/// candidate or any of `gold_texts`. Order is preserved.
pub fn dedup<S: AsRef<str>>(candidates: Vec<Candidate>, gold_texts: &[S]) -> Vec<Candidate> {
    let mut seen: HashSet<String> = gold_texts.iter().map(|t| normalize_text(t.as_ref())).collect();
    candidates
        .into_iter()
        .filter(|c| seen.insert(normalize_text(c.generated_text())))
        .collect()
}

/// Everything needed to turn gold items into candidates.
pub struct Augmenter<'a> {
    pub gen: &'a dyn Generator,
    pub spec: &'a PromptSpec,
    pub labels: &'a LabelSpace,
    pub plan: &'a AugmentPlan,
    /// Base generation parameters; the seed is replaced per request.
    pub params: GenParams,
}

/// Candidates of one scheduling run plus bookkeeping.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AugmentOutput {
    pub candidates: Vec<Candidate>,
    pub passes: usize,
    pub generation_failures: usize,
}

struct Generated {
    text: Option<String>,
    raw: String,
    planted: Option<LabelId>,
    failed: bool,
}

impl<'a> Augmenter<'a> {
    pub fn new(
        gen: &'a dyn Generator,
        spec: &'a PromptSpec,
        labels: &'a LabelSpace,
        plan: &'a AugmentPlan,
    ) -> Self {
        let mut params = GenParams {
            stop_markers: crate::genbackend::speaker_markers(&spec.speaker_names),
            ..GenParams::default()
        };
        if spec.task == corpus::Task::Intent {
            params.mode = crate::genbackend::GenMode::Beam;
            params.num_return = 3;
        }
        Self {
            gen,
            spec,
            labels,
            plan,
            params,
        }
    }

    fn generate_one(&self, prompt: &prompt::RenderedPrompt, seed: u64) -> Result<Generated> {
        let params = GenParams {
            seed,
            num_return: 1,
            ..self.params.clone()
        };
        match self.gen.generate(prompt, &params) {
            Ok(mut cs) if !cs.is_empty() => {
                let c: Completion = cs.swap_remove(0);
                Ok(Generated {
                    text: c.parsed,
                    raw: c.raw,
                    planted: c.planted_label,
                    failed: false,
                })
            }
            Ok(_) | Err(GenError::EmptyCompletion) => Ok(Generated {
                text: None,
                raw: String::new(),
                planted: None,
                failed: false,
            }),
            Err(e @ GenError::Transport { .. }) => Ok(Generated {
                text: None,
                raw: e.to_string(),
                planted: None,
                failed: true,
            }),
            Err(e) => Err(e.into()),
        }
    }

    fn dialogue_candidate(
        &self,
        gold: &Conversation,
        turns: Vec<Turn>,
        id: String,
        prescribed: LabelId,
        planted: Option<LabelId>,
        verdict: Verdict,
    ) -> Candidate {
        Candidate {
            payload: Payload::Dialogue(Conversation {
                id: id.clone(),
                turns,
                provenance: Provenance::Silver,
                source_id: Some(gold.id.clone()),
            }),
            id,
            prescribed_label: prescribed,
            strategy: self.plan.strategy,
            source_id: gold.id.clone(),
            silver_label: None,
            prob: None,
            entropy: None,
            verdict,
            planted_label: planted,
        }
    }

    fn generated_turn(&self, speaker: corpus::Speaker, text: String, label: LabelId) -> Turn {
        let mut t = Turn {
            speaker,
            text,
            emotion: None,
            act: None,
            generated: true,
        };
        t.set_label(self.spec.task, label);
        t
    }

    /// Regenerates turn `target` (zero-based) from gold turns `0..target`.
    fn replace_turn(
        &self,
        conv: &Conversation,
        target: usize,
        prescribed: LabelId,
        pass: u64,
        index: u64,
    ) -> Result<(Candidate, bool)> {
        let prefix = &conv.turns[..target];
        let prompt = prompt::render_dialogue_prompt(prefix, self.spec, self.labels, prescribed)?;
        let g = self.generate_one(&prompt, gen_seed(self.plan.seed, pass, index, target as u64))?;
        let id = format!("{}~{}~p{pass}~t{}", conv.id, self.plan.strategy.as_str(), target + 1);
        let speaker = conv.turns[target].speaker;
        let (text, verdict) = match g.text {
            Some(t) => (t, Verdict::Pending),
            None => (placeholder(&g.raw), Verdict::DroppedParse),
        };
        let mut turns = prefix.to_vec();
        turns.push(self.generated_turn(speaker, text, prescribed));
        Ok((
            self.dialogue_candidate(conv, turns, id, prescribed, g.planted, verdict),
            g.failed,
        ))
    }

    pub fn last_turn(&self, conv: &Conversation, pass: u64, index: u64) -> Result<Candidate> {
        Ok(self.last_turn_inner(conv, pass, index)?.0)
    }

    fn last_turn_inner(&self, conv: &Conversation, pass: u64, index: u64) -> Result<(Candidate, bool)> {
        require_len(conv, 2)?;
        let mut rng = seed::rng(label_stream_seed(self.plan.seed, pass, index));
        let n = conv.len();
        let prescribed = prompt::choose_label(
            self.plan.label_mode,
            conv.turns[n - 1].label(self.spec.task),
            self.labels.len(),
            &mut rng,
        );
        self.replace_turn(conv, n - 1, prescribed, pass, index)
    }

    /// One candidate per position `2..=n`; `limit` truncates the list.
    pub fn all_turns(&self, conv: &Conversation, pass: u64, index: u64) -> Result<Vec<Candidate>> {
        Ok(self
            .all_turns_inner(conv, pass, index, usize::MAX)?
            .into_iter()
            .map(|(c, _)| c)
            .collect())
    }

    fn all_turns_inner(
        &self,
        conv: &Conversation,
        pass: u64,
        index: u64,
        limit: usize,
    ) -> Result<Vec<(Candidate, bool)>> {
        require_len(conv, 2)?;
        let mut rng = seed::rng(label_stream_seed(self.plan.seed, pass, index));
        (1..conv.len())
            .take(limit)
            .map(|target| {
                let prescribed = prompt::choose_label(
                    self.plan.label_mode,
                    conv.turns[target].label(self.spec.task),
                    self.labels.len(),
                    &mut rng,
                );
                self.replace_turn(conv, target, prescribed, pass, index)
            })
            .collect()
    }

    /// Keeps turns 1 and 2 and generates the rest autoregressively. A
    /// two-turn conversation degenerates to regenerating turn 2.
    pub fn trajectory(&self, conv: &Conversation, pass: u64, index: u64) -> Result<Candidate> {
        Ok(self.trajectory_inner(conv, pass, index)?.0)
    }

    fn trajectory_inner(&self, conv: &Conversation, pass: u64, index: u64) -> Result<(Candidate, bool)> {
        require_len(conv, 2)?;
        let n = conv.len();
        let start = if n == 2 { 1 } else { 2 };
        let mut rng = seed::rng(label_stream_seed(self.plan.seed, pass, index));
        let mut turns: Vec<Turn> = conv.turns[..start].to_vec();
        let mut last_label = LabelId(0);
        let mut planted = None;
        let id = format!("{}~{}~p{pass}", conv.id, self.plan.strategy.as_str());
        for target in start..n {
            let prescribed = prompt::choose_label(
                self.plan.label_mode,
                conv.turns[target].label(self.spec.task),
                self.labels.len(),
                &mut rng,
            );
            let prompt = prompt::render_dialogue_prompt(&turns, self.spec, self.labels, prescribed)?;
            let g = self.generate_one(&prompt, gen_seed(self.plan.seed, pass, index, target as u64))?;
            let speaker = conv.turns[target].speaker;
            match g.text {
                Some(text) => {
                    turns.push(self.generated_turn(speaker, text, prescribed));
                    last_label = prescribed;
                    planted = g.planted;
                }
                None => {
                    turns.push(self.generated_turn(speaker, placeholder(&g.raw), prescribed));
                    return Ok((
                        self.dialogue_candidate(conv, turns, id, prescribed, g.planted, Verdict::DroppedParse),
                        g.failed,
                    ));
                }
            }
        }
        Ok((
            self.dialogue_candidate(conv, turns, id, last_label, planted, Verdict::Pending),
            false,
        ))
    }

    /// Same-intent English examples for `reference`, in seeded order.
    pub fn intent_examples<'p>(
        &self,
        reference: &LabeledUtterance,
        pool: &'p [LabeledUtterance],
        pass: u64,
        index: u64,
    ) -> Vec<&'p LabeledUtterance> {
        let mut same: Vec<&LabeledUtterance> = pool.iter().filter(|u| u.label == reference.label).collect();
        let mut rng = seed::rng(seed::derive(self.plan.seed, &[EXAMPLE_STREAM, pass, index]));
        same.shuffle(&mut rng);
        same.truncate(self.spec.k_examples);
        same
    }

    /// All beam sequences for one Spanish reference, with verdicts assigned
    /// for unparsable sequences and duplicates within the beam.
    fn cross_lingual_raw(
        &self,
        reference: &LabeledUtterance,
        pool: &[LabeledUtterance],
        pass: u64,
        index: u64,
    ) -> Result<(Vec<Candidate>, bool)> {
        let examples: Vec<LabeledUtterance> = self
            .intent_examples(reference, pool, pass, index)
            .into_iter()
            .cloned()
            .collect();
        let prompt = prompt::render_intent_prompt(reference, &examples, self.spec, self.labels)?;
        let params = GenParams {
            seed: gen_seed(self.plan.seed, pass, index, 0),
            num_return: self.params.num_return.clamp(1, 3),
            ..self.params.clone()
        };
        let (completions, failed) = match self.gen.generate(&prompt, &params) {
            Ok(cs) => (cs, false),
            Err(GenError::EmptyCompletion) => (Vec::new(), false),
            Err(e @ GenError::Transport { .. }) => (
                vec![Completion {
                    raw: e.to_string(),
                    parsed: None,
                    backend_id: self.gen.id().to_string(),
                    planted_label: None,
                }],
                true,
            ),
            Err(e) => return Err(e.into()),
        };
        let mut out = Vec::new();
        for (r, c) in completions.into_iter().enumerate() {
            let id = format!("{}~{}~p{pass}~s{r}", reference.id, self.plan.strategy.as_str());
            let (text, verdict) = match c.parsed {
                Some(t) => (t, Verdict::Pending),
                None => (placeholder(&c.raw), Verdict::DroppedParse),
            };
            out.push(Candidate {
                payload: Payload::Utterance(LabeledUtterance {
                    id: id.clone(),
                    text,
                    label: reference.label,
                    lang: Lang::Es,
                    provenance: Provenance::Silver,
                }),
                id,
                prescribed_label: reference.label,
                strategy: self.plan.strategy,
                source_id: reference.id.clone(),
                silver_label: None,
                prob: None,
                entropy: None,
                verdict,
                planted_label: c.planted_label,
            });
        }
        Ok((out, failed))
    }

    /// Parsed, de-duplicated candidates for one Spanish reference. Duplicates
    /// of each other or of `gold_texts` are rejected.
    pub fn cross_lingual<S: AsRef<str>>(
        &self,
        reference: &LabeledUtterance,
        pool: &[LabeledUtterance],
        gold_texts: &[S],
        pass: u64,
        index: u64,
    ) -> Result<Vec<Candidate>> {
        let (raw, _) = self.cross_lingual_raw(reference, pool, pass, index)?;
        let parsed: Vec<Candidate> = raw.into_iter().filter(|c| c.verdict == Verdict::Pending).collect();
        Ok(dedup(parsed, gold_texts))
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.gen.parallelism().max(1))
            .build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))
    }

    /// Runs passes over `gold` until `ceil(multiplier * |gold|)` candidates
    /// (kept or dropped) have been produced. `pool` is the English example
    /// pool for utterance data and is ignored for dialogues.
    pub fn run(&self, gold: &Partition, pool: Option<&[LabeledUtterance]>) -> Result<AugmentOutput> {
        self.plan.validate()?;
        self.spec.validate()?;
        match gold {
            Partition::Dialogue(convs) => self.run_dialogue(convs),
            Partition::Utterance(utts) => self.run_utterance(utts, pool.unwrap_or(&[])),
        }
    }

    fn unit_yield(&self, conv: &Conversation) -> usize {
        match self.plan.strategy {
            Strategy::Ata => conv.len() - 1,
            _ => 1,
        }
    }

    fn run_dialogue(&self, convs: &[Conversation]) -> Result<AugmentOutput> {
        if !matches!(self.plan.strategy, Strategy::Lta | Strategy::Ata | Strategy::Cta) {
            return Err(Error::InvalidArgument(format!(
                "strategy `{}` does not apply to dialogue data",
                self.plan.strategy.as_str()
            )));
        }
        for c in convs {
            require_len(c, 2)?;
        }
        let mut out = AugmentOutput::default();
        if convs.is_empty() {
            return Ok(out);
        }
        let target = self.plan.budget(convs.len());
        let pass_yield: usize = convs.iter().map(|c| self.unit_yield(c)).sum();
        let threads = self.pool()?;
        let mut pass = 0u64;
        while out.candidates.len() < target {
            let remaining = target - out.candidates.len();
            // (index, max candidates to take from it)
            let work: Vec<(usize, usize)> = if remaining >= pass_yield {
                (0..convs.len()).map(|i| (i, usize::MAX)).collect()
            } else {
                let mut order: Vec<usize> = (0..convs.len()).collect();
                order.shuffle(&mut seed::rng(seed::derive(self.plan.seed, &[ORDER_STREAM, pass])));
                let mut left = remaining;
                let mut w = Vec::new();
                for i in order {
                    if left == 0 {
                        break;
                    }
                    let take = self.unit_yield(&convs[i]).min(left);
                    left -= take;
                    w.push((i, take));
                }
                w
            };
            let produced: Vec<Result<Vec<(Candidate, bool)>>> = threads.install(|| {
                work.par_iter()
                    .map(|&(i, take)| {
                        let conv = &convs[i];
                        match self.plan.strategy {
                            Strategy::Lta => self.last_turn_inner(conv, pass, i as u64).map(|c| vec![c]),
                            Strategy::Cta => self.trajectory_inner(conv, pass, i as u64).map(|c| vec![c]),
                            _ => self.all_turns_inner(conv, pass, i as u64, take),
                        }
                    })
                    .collect()
            });
            for batch in produced {
                for (c, failed) in batch? {
                    out.generation_failures += usize::from(failed);
                    out.candidates.push(c);
                }
            }
            out.candidates.truncate(target);
            pass += 1;
        }
        out.passes = pass as usize;
        Ok(out)
    }

    fn run_utterance(&self, refs: &[LabeledUtterance], pool: &[LabeledUtterance]) -> Result<AugmentOutput> {
        if self.plan.strategy != Strategy::Incontext {
            return Err(Error::InvalidArgument(format!(
                "strategy `{}` does not apply to utterance data",
                self.plan.strategy.as_str()
            )));
        }
        let mut out = AugmentOutput::default();
        if refs.is_empty() {
            return Ok(out);
        }
        let target = self.plan.budget(refs.len());
        let mut seen: HashSet<String> = refs.iter().map(|u| normalize_text(&u.text)).collect();
        let threads = self.pool()?;
        let mut pass = 0u64;
        while out.candidates.len() < target {
            let produced: Vec<Result<(Vec<Candidate>, bool)>> = threads.install(|| {
                refs.par_iter()
                    .enumerate()
                    .map(|(i, r)| self.cross_lingual_raw(r, pool, pass, i as u64))
                    .collect()
            });
            'pass: for batch in produced {
                let (cands, failed) = batch?;
                out.generation_failures += usize::from(failed);
                for mut c in cands {
                    if out.candidates.len() == target {
                        break 'pass;
                    }
                    if c.verdict == Verdict::Pending && !seen.insert(normalize_text(c.generated_text())) {
                        c.verdict = Verdict::DroppedDuplicate;
                    }
                    out.candidates.push(c);
                }
            }
            pass += 1;
        }
        out.passes = pass as usize;
        Ok(out)
    }
}

fn require_len(conv: &Conversation, min: usize) -> Result<()> {
    if conv.len() < min {
        return Err(Error::InvalidRecord(format!(
            "conversation `{}` has {} turns, need at least {min}",
            conv.id,
            conv.len()
        )));
    }
    Ok(())
}

fn placeholder(raw: &str) -> String {
    let t = raw.split_whitespace().collect::<Vec<_>>().join(" ");
    if t.is_empty() {
        "<unparsed>".to_string()
    } else {
        t
    }
}

/// Kept (or still pending) silver units per gold unit.
pub fn effective_multiplier(candidates: &[Candidate], gold_len: usize) -> f64 {
    if gold_len == 0 {
        return 0.0;
    }
    candidates.iter().filter(|c| c.is_usable()).count() as f64 / gold_len as f64
}

// ---- persistence ----------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum PayloadRecord {
    Dialogue(ConversationRecord),
    Utterance(UtteranceRecord),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CandidateRecord {
    id: String,
    strategy: Strategy,
    source_id: String,
    prescribed_label: String,
    payload: PayloadRecord,
    verdict: Verdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    silver_label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    entropy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    prob: Option<Vec<f64>>,
}

fn dialogue_labels_for(labels: &DialogueLabels, space: &LabelSpace) -> Result<DialogueLabels> {
    if space.task.is_dialogue() {
        labels.clone().with_space(space.clone())
    } else {
        Ok(labels.clone())
    }
}

pub fn write_candidates(
    path: impl AsRef<Path>,
    candidates: &[Candidate],
    labels: &DialogueLabels,
    space: &LabelSpace,
) -> Result<()> {
    let dl = dialogue_labels_for(labels, space)?;
    corpus::write_lines(
        path.as_ref(),
        candidates.iter().map(|c| CandidateRecord {
            id: c.id.clone(),
            strategy: c.strategy,
            source_id: c.source_id.clone(),
            prescribed_label: space.name(c.prescribed_label).to_string(),
            payload: match &c.payload {
                Payload::Dialogue(conv) => {
                    PayloadRecord::Dialogue(ConversationRecord::from_conversation(conv, &dl))
                }
                Payload::Utterance(u) => PayloadRecord::Utterance(UtteranceRecord::from_utterance(u, space)),
            },
            verdict: c.verdict,
            silver_label: c.silver_label.map(|l| space.name(l).to_string()),
            entropy: c.entropy,
            prob: c.prob.as_ref().map(|p| p.0.clone()),
        }),
    )
}

pub fn read_candidates(
    path: impl AsRef<Path>,
    labels: &DialogueLabels,
    space: &LabelSpace,
) -> Result<Vec<Candidate>> {
    let path = path.as_ref();
    let dl = dialogue_labels_for(labels, space)?;
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let wrap = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        };
        let rec: CandidateRecord = serde_json::from_str(line).map_err(|e| wrap(e.to_string()))?;
        let payload = match rec.payload {
            PayloadRecord::Dialogue(c) => Payload::Dialogue(c.intern(&dl).map_err(|e| wrap(e.to_string()))?),
            PayloadRecord::Utterance(u) => Payload::Utterance(u.intern(space).map_err(|e| wrap(e.to_string()))?),
        };
        out.push(Candidate {
            id: rec.id,
            payload,
            prescribed_label: space.index_of(&rec.prescribed_label).map_err(|e| wrap(e.to_string()))?,
            strategy: rec.strategy,
            source_id: rec.source_id,
            silver_label: rec
                .silver_label
                .as_deref()
                .map(|l| space.index_of(l))
                .transpose()
                .map_err(|e| wrap(e.to_string()))?,
            prob: rec.prob.map(ProbVector),
            entropy: rec.entropy,
            verdict: rec.verdict,
            planted_label: None,
        });
    }
    Ok(out)
}
