//! Prefix-prompt rendering for dialogue and cross-lingual intent augmentation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::augment::Strategy;
use crate::corpus::{LabelId, LabelSpace, LabeledUtterance, Speaker, Task, Turn};
use crate::error::{Error, Result};

/// Where the prescribed label of a generated turn comes from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelMode {
    #[default]
    Gold,
    Random,
}

impl std::str::FromStr for LabelMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gold" => Ok(LabelMode::Gold),
            "random" => Ok(LabelMode::Random),
            other => Err(Error::InvalidArgument(format!("unknown label mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub task: Task,
    pub strategy: Strategy,
    pub speaker_names: (String, String),
    pub label_mode: LabelMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control_prefix: Option<String>,
    pub k_examples: usize,
}

impl PromptSpec {
    pub fn new(task: Task, strategy: Strategy) -> Self {
        Self {
            task,
            strategy,
            speaker_names: ("Alice".into(), "Bob".into()),
            label_mode: LabelMode::Gold,
            control_prefix: None,
            k_examples: 10,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (a, b) = &self.speaker_names;
        if a.trim().is_empty() || b.trim().is_empty() || a == b {
            return Err(Error::InvalidArgument(
                "speaker names must be distinct and non-empty".into(),
            ));
        }
        if self.k_examples == 0 {
            return Err(Error::InvalidArgument("k_examples must be at least 1".into()));
        }
        Ok(())
    }

    pub fn name_of(&self, speaker: Speaker) -> &str {
        match speaker {
            Speaker::A => &self.speaker_names.0,
            Speaker::B => &self.speaker_names.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedPrompt {
    pub text: String,
    /// `None` for single-turn (utterance) prompts.
    pub target_speaker: Option<Speaker>,
    pub prescribed_label: LabelId,
    pub context_turn_count: usize,
}

impl RenderedPrompt {
    pub fn line_count(&self) -> usize {
        self.text.lines().count()
    }

    pub fn cue_line(&self) -> &str {
        self.text.lines().last().unwrap_or("")
    }
}

pub fn emotion_adjective(emotion: &str) -> Option<&'static str> {
    Some(match emotion {
        "neutral" => "neutral",
        "anger" => "angry",
        "disgust" => "disgusted",
        "fear" => "fearful",
        "happiness" => "happy",
        "sadness" => "sad",
        "surprise" => "surprised",
        _ => return None,
    })
}

pub fn act_verb(act: &str) -> Option<&'static str> {
    Some(match act {
        "inform" => "informs",
        "question" => "asks",
        "directive" => "directs",
        "commissive" => "commits to",
        _ => return None,
    })
}

/// `"<speaker> in a <adjective> mood:"`
pub fn render_emotion_cue(speaker: &str, emotion: &str) -> Result<String> {
    let adj = emotion_adjective(emotion).ok_or_else(|| Error::UnknownLabel(emotion.to_string()))?;
    Ok(format!("{speaker} in a {adj} mood:"))
}

/// `"<speaker> <verb> <other>:"`
pub fn render_act_cue(speaker: &str, other: &str, act: &str) -> Result<String> {
    let verb = act_verb(act).ok_or_else(|| Error::UnknownLabel(act.to_string()))?;
    Ok(format!("{speaker} {verb} {other}:"))
}

fn turn_cue(spec: &PromptSpec, labels: &LabelSpace, speaker: Speaker, label: Option<LabelId>) -> Result<String> {
    let name = spec.name_of(speaker);
    match (spec.task, label) {
        (Task::Emotion, Some(l)) => render_emotion_cue(name, labels.name(l)),
        (Task::Act, Some(l)) => render_act_cue(name, spec.name_of(speaker.other()), labels.name(l)),
        (Task::Intent, _) => Err(Error::InvalidArgument(
            "intent prompts are rendered with render_intent_prompt".into(),
        )),
        (_, None) => Ok(format!("{name}:")),
    }
}

/// Picks the label for a generated turn: the gold one, or a uniform draw.
pub fn choose_label<R: Rng>(mode: LabelMode, gold: Option<LabelId>, num_labels: usize, rng: &mut R) -> LabelId {
    match (mode, gold) {
        (LabelMode::Gold, Some(g)) => g,
        _ => LabelId(rng.random_range(0..num_labels)),
    }
}

/// Renders the context turns as labeled lines followed by the cue for the
/// next speaker carrying `prescribed`.
pub fn render_dialogue_prompt(
    prefix: &[Turn],
    spec: &PromptSpec,
    labels: &LabelSpace,
    prescribed: LabelId,
) -> Result<RenderedPrompt> {
    if prefix.is_empty() {
        return Err(Error::InvalidArgument("prompt context is empty".into()));
    }
    if prescribed.0 >= labels.len() {
        return Err(Error::UnknownLabel(format!("#{}", prescribed.0)));
    }
    let mut lines = Vec::with_capacity(prefix.len() + 2);
    if let Some(c) = &spec.control_prefix {
        lines.push(c.clone());
    }
    for turn in prefix {
        let cue = turn_cue(spec, labels, turn.speaker, turn.label(spec.task))?;
        lines.push(format!("{cue} {}", turn.text.trim()));
    }
    let target = prefix.last().expect("non-empty").speaker.other();
    lines.push(turn_cue(spec, labels, target, Some(prescribed))?);
    Ok(RenderedPrompt {
        text: lines.join("\n"),
        target_speaker: Some(target),
        prescribed_label: prescribed,
        context_turn_count: prefix.len(),
    })
}

pub const INTENT_CUE: &str = "Spanish (new, same intent):";

/// Cross-lingual prompt: English same-intent examples, the Spanish reference,
/// then the cue for a new Spanish utterance.
pub fn render_intent_prompt(
    reference: &LabeledUtterance,
    examples: &[LabeledUtterance],
    spec: &PromptSpec,
    labels: &LabelSpace,
) -> Result<RenderedPrompt> {
    if let Some(bad) = examples.iter().find(|e| e.label != reference.label) {
        return Err(Error::InvalidArgument(format!(
            "example `{}` has intent `{}`, reference has `{}`",
            bad.id,
            labels.name(bad.label),
            labels.name(reference.label)
        )));
    }
    let label = labels.name(reference.label);
    let mut lines = Vec::with_capacity(examples.len() + 3);
    if let Some(c) = &spec.control_prefix {
        lines.push(c.clone());
    }
    for e in examples.iter().take(spec.k_examples) {
        lines.push(format!("English: {} => intent: {label}", e.text.trim()));
    }
    lines.push(format!("Spanish: {} => intent: {label}", reference.text.trim()));
    lines.push(INTENT_CUE.to_string());
    Ok(RenderedPrompt {
        text: lines.join("\n"),
        target_speaker: None,
        prescribed_label: reference.label,
        context_turn_count: 1,
    })
}

/// Context-free prompt of same-label example utterances, used by the random
/// in-context baseline.
pub fn render_examples_prompt(
    examples: &[&str],
    label: LabelId,
    spec: &PromptSpec,
    labels: &LabelSpace,
) -> Result<RenderedPrompt> {
    let mut lines = Vec::with_capacity(examples.len() + 2);
    if let Some(c) = &spec.control_prefix {
        lines.push(c.clone());
    }
    let cue = match spec.task {
        Task::Intent => {
            let name = labels.name(label);
            for e in examples {
                lines.push(format!("Utterance: {} => intent: {name}", e.trim()));
            }
            "Utterance (new, same intent):".to_string()
        }
        _ => {
            let cue = turn_cue(spec, labels, Speaker::A, Some(label))?;
            for e in examples {
                lines.push(format!("{cue} {}", e.trim()));
            }
            cue
        }
    };
    lines.push(cue);
    Ok(RenderedPrompt {
        text: lines.join("\n"),
        target_speaker: spec.task.is_dialogue().then_some(Speaker::A),
        prescribed_label: label,
        context_turn_count: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Lang, Provenance, ACT_LABELS, EMOTION_LABELS};
    use crate::seed;

    fn turn(i: usize, text: &str, emotion: usize) -> Turn {
        Turn {
            speaker: Speaker::at(i),
            text: text.into(),
            emotion: Some(LabelId(emotion)),
            act: None,
            generated: false,
        }
    }

    #[test]
    fn emotion_cues() {
        assert_eq!(render_emotion_cue("Alice", "happiness").unwrap(), "Alice in a happy mood:");
        assert_eq!(render_emotion_cue("Bob", "neutral").unwrap(), "Bob in a neutral mood:");
        assert_eq!(render_emotion_cue("Alice", "surprise").unwrap(), "Alice in a surprised mood:");
        assert!(render_emotion_cue("Alice", "joy").is_err());
    }

    #[test]
    fn emotion_map_is_total_and_injective() {
        let adjs: std::collections::HashSet<_> = EMOTION_LABELS
            .iter()
            .map(|e| emotion_adjective(e).expect("total"))
            .collect();
        assert_eq!(adjs.len(), 7);
    }

    #[test]
    fn act_cues() {
        assert_eq!(render_act_cue("Alice", "Bob", "directive").unwrap(), "Alice directs Bob:");
        assert_eq!(render_act_cue("Bob", "Alice", "question").unwrap(), "Bob asks Alice:");
        assert_eq!(render_act_cue("Alice", "Bob", "inform").unwrap(), "Alice informs Bob:");
        assert!(render_act_cue("Alice", "Bob", "greet").is_err());
        let verbs: std::collections::HashSet<_> = ACT_LABELS.iter().map(|a| act_verb(a).unwrap()).collect();
        assert_eq!(verbs.len(), 4);
    }

    #[test]
    fn five_turn_prefix_gives_six_lines() {
        let spec = PromptSpec::new(Task::Emotion, Strategy::Lta);
        let space = LabelSpace::emotion();
        let prefix: Vec<_> = (0..5).map(|i| turn(i, "hello there", 0)).collect();
        let p = render_dialogue_prompt(&prefix, &spec, &space, LabelId(4)).unwrap();
        assert_eq!(p.line_count(), 6);
        assert_eq!(p.cue_line(), "Bob in a happy mood:");
        assert_eq!(p.target_speaker, Some(Speaker::B));
        assert_eq!(p.context_turn_count, 5);
        assert!(p.text.starts_with("Alice in a neutral mood: hello there\nBob in a neutral mood:"));
    }

    #[test]
    fn one_turn_prefix_gives_two_lines() {
        let spec = PromptSpec::new(Task::Emotion, Strategy::Lta);
        let p = render_dialogue_prompt(&[turn(0, "hi", 1)], &spec, &LabelSpace::emotion(), LabelId(0)).unwrap();
        assert_eq!(p.text, "Alice in a angry mood: hi\nBob in a neutral mood:");
    }

    #[test]
    fn empty_prefix_is_an_error() {
        let spec = PromptSpec::new(Task::Emotion, Strategy::Lta);
        assert!(render_dialogue_prompt(&[], &spec, &LabelSpace::emotion(), LabelId(0)).is_err());
    }

    #[test]
    fn act_prompt_lines() {
        let spec = PromptSpec::new(Task::Act, Strategy::Lta);
        let t = Turn {
            speaker: Speaker::A,
            text: "Close the door.".into(),
            emotion: None,
            act: Some(LabelId(2)),
            generated: false,
        };
        let p = render_dialogue_prompt(&[t], &spec, &LabelSpace::act(), LabelId(3)).unwrap();
        assert_eq!(p.text, "Alice directs Bob: Close the door.\nBob commits to Alice:");
    }

    #[test]
    fn random_label_mode_matches_seeded_draw() {
        use rand::SeedableRng;
        let s = 99u64;
        let mut rng = seed::rng(s);
        let got = choose_label(LabelMode::Random, Some(LabelId(0)), 7, &mut rng);
        // independent replay of the same uniform draw
        let mut replay = rand_chacha::ChaCha8Rng::seed_from_u64(s);
        let want = LabelId(rand::Rng::random_range(&mut replay, 0..7usize));
        assert_eq!(got, want);
        let mut rng = seed::rng(s);
        assert_eq!(choose_label(LabelMode::Gold, Some(LabelId(5)), 7, &mut rng), LabelId(5));
    }

    fn utt(id: &str, text: &str, label: usize, lang: Lang) -> LabeledUtterance {
        LabeledUtterance {
            id: id.into(),
            text: text.into(),
            label: LabelId(label),
            lang,
            provenance: Provenance::Gold,
        }
    }

    #[test]
    fn intent_prompt_template() {
        let space = LabelSpace::new(Task::Intent, ["alarm/set_alarm", "weather/find"]).unwrap();
        let reference = utt("es1", "pon una alarma a las 7", 0, Lang::Es);
        let ex: Vec<_> = (0..10)
            .map(|i| utt(&format!("en{i}"), &format!("set an alarm for {i} am"), 0, Lang::En))
            .collect();
        let mut spec = PromptSpec::new(Task::Intent, Strategy::Incontext);
        let p = render_intent_prompt(&reference, &ex, &spec, &space).unwrap();
        assert_eq!(p.line_count(), 12);
        let lines: Vec<_> = p.text.lines().collect();
        assert_eq!(lines[0], "English: set an alarm for 0 am => intent: alarm/set_alarm");
        assert_eq!(lines[10], "Spanish: pon una alarma a las 7 => intent: alarm/set_alarm");
        assert_eq!(lines[11], "Spanish (new, same intent):");

        spec.control_prefix = Some("[CLM]".into());
        let p = render_intent_prompt(&reference, &ex, &spec, &space).unwrap();
        assert!(p.text.starts_with("[CLM]"));
        assert_eq!(p.line_count(), 13);

        let p = render_intent_prompt(&reference, &[], &spec, &space).unwrap();
        assert_eq!(p.line_count(), 3);

        let bad = vec![utt("en", "weather?", 1, Lang::En)];
        assert!(render_intent_prompt(&reference, &bad, &spec, &space).is_err());
    }

    #[test]
    fn spec_validation() {
        let mut spec = PromptSpec::new(Task::Emotion, Strategy::Lta);
        assert!(spec.validate().is_ok());
        spec.speaker_names.1 = "Alice".into();
        assert!(spec.validate().is_err());
        spec.speaker_names.1 = "Bob".into();
        spec.k_examples = 0;
        assert!(spec.validate().is_err());
    }
}
