//! Data model, JSONL ingestion and few-shot sampling.
//!
//! Labels are stored as strings on disk and interned to dense [`LabelId`]s in
//! memory. Dialogue files carry both emotion and act labels per turn, so they
//! are read against a [`DialogueLabels`] pair of label spaces.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Emotion,
    Act,
    Intent,
}

impl Task {
    pub fn is_dialogue(self) -> bool {
        !matches!(self, Task::Intent)
    }
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "emotion" => Ok(Task::Emotion),
            "act" => Ok(Task::Act),
            "intent" => Ok(Task::Intent),
            other => Err(Error::InvalidArgument(format!("unknown task `{other}`"))),
        }
    }
}

pub const EMOTION_LABELS: [&str; 7] = [
    "neutral",
    "anger",
    "disgust",
    "fear",
    "happiness",
    "sadness",
    "surprise",
];

pub const ACT_LABELS: [&str; 4] = ["inform", "question", "directive", "commissive"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSpace {
    pub task: Task,
    pub labels: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub majority: Option<LabelId>,
}

impl LabelSpace {
    pub fn new<S: Into<String>>(task: Task, labels: impl IntoIterator<Item = S>) -> Result<Self> {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        if labels.is_empty() {
            return Err(Error::InvalidArgument("label space is empty".into()));
        }
        let mut seen = HashSet::new();
        for l in &labels {
            if !seen.insert(l.as_str()) {
                return Err(Error::InvalidArgument(format!("duplicate label `{l}`")));
            }
        }
        Ok(Self {
            task,
            labels,
            majority: None,
        })
    }

    pub fn emotion() -> Self {
        Self::new(Task::Emotion, EMOTION_LABELS).expect("static labels are unique")
    }

    pub fn act() -> Self {
        Self::new(Task::Act, ACT_LABELS).expect("static labels are unique")
    }

    /// Reads a label-space file: `{"task": ..., "labels": [...]}`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let raw: LabelSpace = serde_json::from_str(&text)?;
        let mut space = Self::new(raw.task, raw.labels)?;
        if let Some(m) = raw.majority {
            space.set_majority(m)?;
        }
        Ok(space)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Result<LabelId> {
        self.labels
            .iter()
            .position(|l| l == name)
            .map(LabelId)
            .ok_or_else(|| Error::UnknownLabel(name.to_string()))
    }

    pub fn name(&self, id: LabelId) -> &str {
        &self.labels[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = LabelId> {
        (0..self.labels.len()).map(LabelId)
    }

    pub fn set_majority(&mut self, id: LabelId) -> Result<()> {
        if id.0 >= self.labels.len() {
            return Err(Error::InvalidArgument(format!(
                "majority index {} out of range",
                id.0
            )));
        }
        self.majority = Some(id);
        Ok(())
    }

    /// Same task and same ordered label names; the majority marker is ignored.
    pub fn compatible(&self, other: &LabelSpace) -> bool {
        self.task == other.task && self.labels == other.labels
    }
}

/// The pair of label spaces a dialogue file is read against.
#[derive(Debug, Clone, PartialEq)]
pub struct DialogueLabels {
    pub emotion: LabelSpace,
    pub act: LabelSpace,
}

impl Default for DialogueLabels {
    fn default() -> Self {
        Self {
            emotion: LabelSpace::emotion(),
            act: LabelSpace::act(),
        }
    }
}

impl DialogueLabels {
    pub fn for_task(&self, task: Task) -> Option<&LabelSpace> {
        match task {
            Task::Emotion => Some(&self.emotion),
            Task::Act => Some(&self.act),
            Task::Intent => None,
        }
    }

    /// Replaces whichever space matches `space.task`.
    pub fn with_space(mut self, space: LabelSpace) -> Result<Self> {
        match space.task {
            Task::Emotion => self.emotion = space,
            Task::Act => self.act = space,
            Task::Intent => {
                return Err(Error::InvalidArgument(
                    "intent labels do not apply to dialogue turns".into(),
                ))
            }
        }
        Ok(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Speaker {
    A,
    B,
}

impl Speaker {
    pub fn other(self) -> Speaker {
        match self {
            Speaker::A => Speaker::B,
            Speaker::B => Speaker::A,
        }
    }

    /// Speaker of the turn at zero-based position `index` under strict alternation.
    pub fn at(index: usize) -> Speaker {
        if index % 2 == 0 {
            Speaker::A
        } else {
            Speaker::B
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    #[default]
    Gold,
    Silver,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Lang {
    #[default]
    En,
    Es,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Turn {
    pub speaker: Speaker,
    pub text: String,
    pub emotion: Option<LabelId>,
    pub act: Option<LabelId>,
    /// Set on turns produced by a generator.
    pub generated: bool,
}

impl Turn {
    pub fn label(&self, task: Task) -> Option<LabelId> {
        match task {
            Task::Emotion => self.emotion,
            Task::Act => self.act,
            Task::Intent => None,
        }
    }

    pub fn set_label(&mut self, task: Task, label: LabelId) {
        match task {
            Task::Emotion => self.emotion = Some(label),
            Task::Act => self.act = Some(label),
            Task::Intent => {}
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conversation {
    pub id: String,
    pub turns: Vec<Turn>,
    pub provenance: Provenance,
    pub source_id: Option<String>,
}

impl Conversation {
    pub fn validate(&self) -> Result<()> {
        if self.turns.len() < 2 {
            return Err(Error::InvalidRecord(format!(
                "conversation `{}` has fewer than 2 turns",
                self.id
            )));
        }
        for (i, t) in self.turns.iter().enumerate() {
            if t.speaker != Speaker::at(i) {
                return Err(Error::NonAlternating(self.id.clone()));
            }
            if t.text.trim().is_empty() {
                return Err(Error::InvalidRecord(format!(
                    "conversation `{}` turn {} has empty text",
                    self.id,
                    i + 1
                )));
            }
        }
        if self.provenance == Provenance::Silver && self.source_id.is_none() {
            return Err(Error::InvalidRecord(format!(
                "silver conversation `{}` has no source_id",
                self.id
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.turns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.turns.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledUtterance {
    pub id: String,
    pub text: String,
    /// Intent for the cross-lingual task; the generic class label elsewhere.
    pub label: LabelId,
    pub lang: Lang,
    pub provenance: Provenance,
}

// ---- file records -------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct TurnRecord {
    pub speaker: Speaker,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub emotion: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub act: Option<String>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub generated: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct ConversationRecord {
    pub id: String,
    pub turns: Vec<TurnRecord>,
    #[serde(default, skip_serializing_if = "is_gold")]
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_id: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct UtteranceRecord {
    pub id: String,
    pub text: String,
    pub intent: String,
    pub lang: Lang,
    #[serde(default, skip_serializing_if = "is_gold")]
    pub provenance: Provenance,
}

fn is_gold(p: &Provenance) -> bool {
    *p == Provenance::Gold
}

impl ConversationRecord {
    pub(crate) fn intern(self, labels: &DialogueLabels) -> Result<Conversation> {
        let turns = self
            .turns
            .into_iter()
            .map(|t| {
                Ok(Turn {
                    speaker: t.speaker,
                    text: t.text,
                    emotion: t
                        .emotion
                        .as_deref()
                        .map(|l| labels.emotion.index_of(l))
                        .transpose()?,
                    act: t.act.as_deref().map(|l| labels.act.index_of(l)).transpose()?,
                    generated: t.generated,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let conv = Conversation {
            id: self.id,
            turns,
            provenance: self.provenance,
            source_id: self.source_id,
        };
        conv.validate()?;
        Ok(conv)
    }

    pub(crate) fn from_conversation(conv: &Conversation, labels: &DialogueLabels) -> Self {
        Self {
            id: conv.id.clone(),
            turns: conv
                .turns
                .iter()
                .map(|t| TurnRecord {
                    speaker: t.speaker,
                    text: t.text.clone(),
                    emotion: t.emotion.map(|l| labels.emotion.name(l).to_string()),
                    act: t.act.map(|l| labels.act.name(l).to_string()),
                    generated: t.generated,
                })
                .collect(),
            provenance: conv.provenance,
            source_id: conv.source_id.clone(),
        }
    }
}

impl UtteranceRecord {
    pub(crate) fn intern(self, space: &LabelSpace) -> Result<LabeledUtterance> {
        if self.text.trim().is_empty() {
            return Err(Error::InvalidRecord(format!(
                "utterance `{}` has empty text",
                self.id
            )));
        }
        Ok(LabeledUtterance {
            label: space.index_of(&self.intent)?,
            id: self.id,
            text: self.text,
            lang: self.lang,
            provenance: self.provenance,
        })
    }

    pub(crate) fn from_utterance(u: &LabeledUtterance, space: &LabelSpace) -> Self {
        Self {
            id: u.id.clone(),
            text: u.text.clone(),
            intent: space.name(u.label).to_string(),
            lang: u.lang,
            provenance: u.provenance,
        }
    }
}

// ---- partitions ---------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schema {
    Dialogue,
    Utterance,
}

impl std::str::FromStr for Schema {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dialogue" => Ok(Schema::Dialogue),
            "utterance" => Ok(Schema::Utterance),
            other => Err(Error::InvalidArgument(format!("unknown schema `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Partition {
    Dialogue(Vec<Conversation>),
    Utterance(Vec<LabeledUtterance>),
}

impl Partition {
    pub fn len(&self) -> usize {
        match self {
            Partition::Dialogue(v) => v.len(),
            Partition::Utterance(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn schema(&self) -> Schema {
        match self {
            Partition::Dialogue(_) => Schema::Dialogue,
            Partition::Utterance(_) => Schema::Utterance,
        }
    }

    pub fn ids(&self) -> Vec<&str> {
        match self {
            Partition::Dialogue(v) => v.iter().map(|c| c.id.as_str()).collect(),
            Partition::Utterance(v) => v.iter().map(|u| u.id.as_str()).collect(),
        }
    }

    /// Every label occurrence for `task`: one per labeled turn or per utterance.
    pub fn label_occurrences(&self, task: Task) -> Vec<LabelId> {
        match self {
            Partition::Dialogue(v) => v
                .iter()
                .flat_map(|c| c.turns.iter().filter_map(move |t| t.label(task)))
                .collect(),
            Partition::Utterance(v) => v.iter().map(|u| u.label).collect(),
        }
    }

    pub fn as_dialogue(&self) -> Option<&[Conversation]> {
        match self {
            Partition::Dialogue(v) => Some(v),
            Partition::Utterance(_) => None,
        }
    }

    pub fn as_utterance(&self) -> Option<&[LabeledUtterance]> {
        match self {
            Partition::Utterance(v) => Some(v),
            Partition::Dialogue(_) => None,
        }
    }
}

/// Train/validation/test partitions plus the task label space.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub train: Partition,
    pub validation: Partition,
    pub test: Partition,
    pub label_space: LabelSpace,
}

impl Dataset {
    pub fn new(
        train: Partition,
        validation: Partition,
        test: Partition,
        label_space: LabelSpace,
    ) -> Result<Self> {
        let mut seen = HashSet::new();
        for part in [&train, &validation, &test] {
            for id in part.ids() {
                if !seen.insert(id.to_string()) {
                    return Err(Error::DuplicateId(id.to_string()));
                }
            }
            for l in part.label_occurrences(label_space.task) {
                if l.0 >= label_space.len() {
                    return Err(Error::UnknownLabel(format!("#{}", l.0)));
                }
            }
        }
        Ok(Self {
            train,
            validation,
            test,
            label_space,
        })
    }
}

// ---- JSONL io -----------------------------------------------------------

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))
}

fn for_each_line<R: Read>(
    reader: BufReader<R>,
    path: &Path,
    mut f: impl FnMut(usize, &str) -> Result<()>,
) -> Result<()> {
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        if line.trim().is_empty() {
            continue;
        }
        f(i + 1, &line).map_err(|e| match e {
            e @ Error::Parse { .. } => e,
            other => Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: other.to_string(),
            },
        })?;
    }
    Ok(())
}

pub fn read_dialogues<R: Read>(
    reader: R,
    origin: &Path,
    labels: &DialogueLabels,
) -> Result<Vec<Conversation>> {
    let mut out = Vec::new();
    let mut ids = HashSet::new();
    for_each_line(BufReader::new(reader), origin, |_, line| {
        let rec: ConversationRecord =
            serde_json::from_str(line).map_err(|e| Error::InvalidRecord(e.to_string()))?;
        let conv = rec.intern(labels)?;
        if !ids.insert(conv.id.clone()) {
            return Err(Error::DuplicateId(conv.id));
        }
        out.push(conv);
        Ok(())
    })?;
    Ok(out)
}

pub fn read_utterances<R: Read>(
    reader: R,
    origin: &Path,
    space: &LabelSpace,
) -> Result<Vec<LabeledUtterance>> {
    let mut out = Vec::new();
    let mut ids = HashSet::new();
    for_each_line(BufReader::new(reader), origin, |_, line| {
        let rec: UtteranceRecord =
            serde_json::from_str(line).map_err(|e| Error::InvalidRecord(e.to_string()))?;
        let u = rec.intern(space)?;
        if !ids.insert(u.id.clone()) {
            return Err(Error::DuplicateId(u.id));
        }
        out.push(u);
        Ok(())
    })?;
    Ok(out)
}

pub fn load_dialogues(path: impl AsRef<Path>, labels: &DialogueLabels) -> Result<Vec<Conversation>> {
    let path = path.as_ref();
    read_dialogues(open(path)?, path, labels)
}

pub fn load_utterances(path: impl AsRef<Path>, space: &LabelSpace) -> Result<Vec<LabeledUtterance>> {
    let path = path.as_ref();
    read_utterances(open(path)?, path, space)
}

/// Loads a partition with the given schema. `task_space` is used for
/// utterance files and replaces the matching dialogue space for dialogue files.
pub fn load_jsonl(
    path: impl AsRef<Path>,
    schema: Schema,
    labels: &DialogueLabels,
    task_space: &LabelSpace,
) -> Result<Partition> {
    match schema {
        Schema::Dialogue => {
            let labels = labels.clone().with_space(task_space.clone())?;
            load_dialogues(path, &labels).map(Partition::Dialogue)
        }
        Schema::Utterance => load_utterances(path, task_space).map(Partition::Utterance),
    }
}

pub(crate) fn write_lines<T: Serialize>(path: &Path, records: impl IntoIterator<Item = T>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, &r)?;
        w.write_all(b"\n")
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    }
    w.flush()
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn write_dialogues(
    path: impl AsRef<Path>,
    convs: &[Conversation],
    labels: &DialogueLabels,
) -> Result<()> {
    write_lines(
        path.as_ref(),
        convs
            .iter()
            .map(|c| ConversationRecord::from_conversation(c, labels)),
    )
}

pub fn write_utterances(
    path: impl AsRef<Path>,
    utts: &[LabeledUtterance],
    space: &LabelSpace,
) -> Result<()> {
    write_lines(
        path.as_ref(),
        utts.iter().map(|u| UtteranceRecord::from_utterance(u, space)),
    )
}

pub fn write_jsonl(
    path: impl AsRef<Path>,
    partition: &Partition,
    labels: &DialogueLabels,
    task_space: &LabelSpace,
) -> Result<()> {
    match partition {
        Partition::Dialogue(v) => {
            let labels = labels.clone().with_space(task_space.clone())?;
            write_dialogues(path, v, &labels)
        }
        Partition::Utterance(v) => write_utterances(path, v, task_space),
    }
}

// ---- label statistics and sampling ---------------------------------------

pub fn label_counts(occurrences: &[LabelId], num_labels: usize) -> Vec<usize> {
    let mut counts = vec![0usize; num_labels];
    for l in occurrences {
        counts[l.0] += 1;
    }
    counts
}

/// Most frequent label; ties go to the lowest index.
pub fn majority_label(partition: &Partition, space: &LabelSpace) -> LabelId {
    let counts = label_counts(&partition.label_occurrences(space.task), space.len());
    argmax_lowest(&counts)
}

fn argmax_lowest(counts: &[usize]) -> LabelId {
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = i;
        }
    }
    LabelId(best)
}

/// Stratum of a conversation: its most frequent non-majority turn label,
/// falling back to the majority label when every turn carries it.
pub fn conversation_stratum(conv: &Conversation, task: Task, num_labels: usize, majority: LabelId) -> Option<LabelId> {
    let occ: Vec<LabelId> = conv.turns.iter().filter_map(|t| t.label(task)).collect();
    if occ.is_empty() {
        return None;
    }
    let mut counts = label_counts(&occ, num_labels);
    counts[majority.0] = 0;
    if counts.iter().all(|&c| c == 0) {
        Some(majority)
    } else {
        Some(argmax_lowest(&counts))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Stratify {
    #[default]
    ByLabel,
    Uniform,
}

/// Per-stratum sample size: `max(1, round(fraction * count))`, rounding half
/// away from zero.
pub fn stratum_quota(fraction: f64, count: usize) -> usize {
    ((fraction * count as f64).round() as usize).clamp(1, count.max(1))
}

/// Draws a seeded few-shot subset. Output keeps the partition's original order.
pub fn sample_few_shot(
    partition: &Partition,
    space: &LabelSpace,
    fraction: f64,
    seed: u64,
    stratify: Stratify,
) -> Result<Partition> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "fraction must be in (0, 1], got {fraction}"
        )));
    }
    if partition.is_empty() {
        return Ok(partition.clone());
    }
    let strata: Vec<Option<LabelId>> = match (partition, stratify) {
        (_, Stratify::Uniform) => vec![Some(LabelId(0)); partition.len()],
        (Partition::Utterance(v), Stratify::ByLabel) => v.iter().map(|u| Some(u.label)).collect(),
        (Partition::Dialogue(v), Stratify::ByLabel) => {
            let majority = space.majority.unwrap_or_else(|| majority_label(partition, space));
            v.iter()
                .map(|c| conversation_stratum(c, space.task, space.len(), majority))
                .collect()
        }
    };
    let mut groups: BTreeMap<Option<LabelId>, Vec<usize>> = BTreeMap::new();
    for (i, s) in strata.iter().enumerate() {
        groups.entry(*s).or_default().push(i);
    }
    let mut chosen = Vec::new();
    for (stratum, members) in groups {
        let mut members = members;
        let key = stratum.map_or(u64::MAX, |l| l.0 as u64);
        let mut rng = seed::rng(seed::derive(seed, &[key]));
        members.shuffle(&mut rng);
        let take = stratum_quota(fraction, members.len());
        chosen.extend_from_slice(&members[..take]);
    }
    chosen.sort_unstable();
    Ok(match partition {
        Partition::Dialogue(v) => Partition::Dialogue(chosen.iter().map(|&i| v[i].clone()).collect()),
        Partition::Utterance(v) => {
            Partition::Utterance(chosen.iter().map(|&i| v[i].clone()).collect())
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dd_line() -> &'static str {
        r#"{"id":"d1","turns":[{"speaker":"A","text":"Hi","emotion":"happiness"},{"speaker":"B","text":"Hello","emotion":"neutral"}]}"#
    }

    fn read_d(s: &str) -> Result<Vec<Conversation>> {
        read_dialogues(s.as_bytes(), Path::new("mem.jsonl"), &DialogueLabels::default())
    }

    fn utt(id: usize, label: usize) -> LabeledUtterance {
        LabeledUtterance {
            id: format!("u{id}"),
            text: format!("text {id}"),
            label: LabelId(label),
            lang: Lang::Es,
            provenance: Provenance::Gold,
        }
    }

    #[test]
    fn minimal_dialogue_record() {
        let convs = read_d(dd_line()).unwrap();
        assert_eq!(convs.len(), 1);
        assert_eq!(convs[0].len(), 2);
        assert_eq!(convs[0].turns[0].emotion, Some(LabelId(4)));
    }

    #[test]
    fn non_alternating_speakers_rejected() {
        let line = r#"{"id":"d1","turns":[{"speaker":"A","text":"Hi"},{"speaker":"A","text":"Hello"}]}"#;
        let err = read_d(line).unwrap_err();
        assert!(err.to_string().contains("non-alternating speakers"), "{err}");
        assert!(err.to_string().contains(":1:"), "{err}");
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = format!("{}\n{{not json\n", dd_line());
        match read_d(&text).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn duplicate_id_rejected() {
        let text = format!("{}\n{}\n", dd_line(), dd_line());
        let err = read_d(&text).unwrap_err();
        assert!(err.to_string().contains("duplicate id `d1`"), "{err}");
    }

    #[test]
    fn unknown_label_named() {
        let line = r#"{"id":"d1","turns":[{"speaker":"A","text":"Hi","emotion":"joy"},{"speaker":"B","text":"Hello"}]}"#;
        let err = read_d(line).unwrap_err();
        assert!(err.to_string().contains("unknown label `joy`"), "{err}");
    }

    #[test]
    fn empty_text_rejected() {
        let line = r#"{"id":"d1","turns":[{"speaker":"A","text":"  "},{"speaker":"B","text":"Hello"}]}"#;
        assert!(read_d(line).is_err());
    }

    #[test]
    fn majority_strict_and_tie() {
        let space = LabelSpace::new(Task::Intent, ["neutral", "anger"]).unwrap();
        let mut v: Vec<_> = (0..50).map(|i| utt(i, 0)).collect();
        v.extend((50..53).map(|i| utt(i, 1)));
        assert_eq!(majority_label(&Partition::Utterance(v), &space), LabelId(0));

        let space = LabelSpace::new(Task::Intent, ["inform", "question"]).unwrap();
        let v: Vec<_> = (0..20).map(|i| utt(i, if i % 2 == 0 { 1 } else { 0 })).collect();
        assert_eq!(majority_label(&Partition::Utterance(v), &space), LabelId(0));
    }

    #[test]
    fn few_shot_quota_floor_rule() {
        // {A:200, B:3} at 1% -> round(2.0) = 2 of A, max(1, round(0.03)) = 1 of B
        assert_eq!(stratum_quota(0.01, 200), 2);
        assert_eq!(stratum_quota(0.01, 3), 1);
        let space = LabelSpace::new(Task::Intent, ["A", "B"]).unwrap();
        let mut v: Vec<_> = (0..200).map(|i| utt(i, 0)).collect();
        v.extend((200..203).map(|i| utt(i, 1)));
        let s = sample_few_shot(&Partition::Utterance(v), &space, 0.01, 3, Stratify::ByLabel).unwrap();
        let counts = label_counts(&s.label_occurrences(Task::Intent), 2);
        assert_eq!(counts, vec![2, 1]);
    }

    #[test]
    fn quota_rounds_half_away_from_zero() {
        assert_eq!(stratum_quota(0.5, 5), 3);
        assert_eq!(stratum_quota(0.25, 10), 3);
        assert_eq!(stratum_quota(0.1, 4), 1);
    }

    #[test]
    fn few_shot_rejects_bad_fraction() {
        let space = LabelSpace::new(Task::Intent, ["A"]).unwrap();
        let p = Partition::Utterance(vec![utt(0, 0)]);
        assert!(sample_few_shot(&p, &space, 0.0, 1, Stratify::ByLabel).is_err());
        assert!(sample_few_shot(&p, &space, 1.5, 1, Stratify::ByLabel).is_err());
        assert!(sample_few_shot(&p, &space, -0.1, 1, Stratify::ByLabel).is_err());
    }

    #[test]
    fn dialogue_stratum_prefers_rare_labels() {
        let convs = read_d(concat!(
            r#"{"id":"a","turns":[{"speaker":"A","text":"x","emotion":"neutral"},{"speaker":"B","text":"y","emotion":"neutral"}]}"#,
            "\n",
            r#"{"id":"b","turns":[{"speaker":"A","text":"x","emotion":"neutral"},{"speaker":"B","text":"y","emotion":"fear"},{"speaker":"A","text":"z","emotion":"neutral"}]}"#,
        ))
        .unwrap();
        let majority = LabelId(0);
        assert_eq!(conversation_stratum(&convs[0], Task::Emotion, 7, majority), Some(LabelId(0)));
        assert_eq!(conversation_stratum(&convs[1], Task::Emotion, 7, majority), Some(LabelId(3)));
    }

    #[test]
    fn label_space_file_parses() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("labels.json");
        std::fs::write(&p, r#"{"task":"intent","labels":["alarm/set_alarm","weather/find"]}"#).unwrap();
        let s = LabelSpace::load(&p).unwrap();
        assert_eq!(s.task, Task::Intent);
        assert_eq!(s.index_of("weather/find").unwrap(), LabelId(1));
        std::fs::write(&p, r#"{"task":"intent","labels":["x","x"]}"#).unwrap();
        assert!(LabelSpace::load(&p).is_err());
    }

    #[test]
    fn dataset_partitions_must_be_disjoint() {
        let space = LabelSpace::new(Task::Intent, ["A"]).unwrap();
        let p = Partition::Utterance(vec![utt(0, 0)]);
        let err = Dataset::new(p.clone(), p.clone(), Partition::Utterance(vec![]), space).unwrap_err();
        assert!(matches!(err, Error::DuplicateId(_)));
    }
}
