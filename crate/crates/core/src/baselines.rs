//! Perturbation baselines (EDA, AEDA) and random same-label in-context
//! prompting without dialogue context.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{Candidate, Payload, Strategy, Verdict};
use crate::corpus::{Conversation, LabelId, LabelSpace, LabeledUtterance, Lang, Partition, Provenance, Task};
use crate::error::{Error, Result};
use crate::genbackend::{GenParams, Generator};
use crate::prompt::{self, PromptSpec, RenderedPrompt};
use crate::seed;

const BUNDLED_LEXICON: &str = include_str!("../data/lexicon.tsv");

/// Word to synonym list. Lines are `word<TAB>syn1,syn2,...`; blank lines and
/// lines starting with `#` are skipped.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lexicon(pub BTreeMap<String, Vec<String>>);

impl Lexicon {
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end();
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |msg: &str| Error::Parse {
                path: "lexicon".into(),
                line: i + 1,
                msg: msg.into(),
            };
            let (word, syns) = line.split_once('\t').ok_or_else(|| bad("expected word<TAB>synonyms"))?;
            let syns: Vec<String> = syns
                .split(',')
                .map(|s| s.trim().to_lowercase())
                .filter(|s| !s.is_empty())
                .collect();
            if syns.is_empty() {
                return Err(bad("empty synonym list"));
            }
            map.insert(word.trim().to_lowercase(), syns);
        }
        Ok(Self(map))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::parse(&text)
    }

    /// The small English lexicon shipped with the crate.
    pub fn bundled() -> Self {
        Self::parse(BUNDLED_LEXICON).expect("bundled lexicon parses")
    }

    pub fn synonyms(&self, word: &str) -> Option<&[String]> {
        self.0.get(&word.to_lowercase()).map(Vec::as_slice)
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdaConfig {
    pub alpha_sr: f64,
    pub alpha_ri: f64,
    pub alpha_rs: f64,
    pub alpha_rd: f64,
    pub n_aug: usize,
    pub seed: u64,
    #[serde(skip)]
    pub lexicon: Lexicon,
}

impl EdaConfig {
    pub fn new(lexicon: Lexicon, seed: u64) -> Self {
        Self {
            alpha_sr: 0.1,
            alpha_ri: 0.1,
            alpha_rs: 0.1,
            alpha_rd: 0.1,
            n_aug: 4,
            seed,
            lexicon,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let alphas = [self.alpha_sr, self.alpha_ri, self.alpha_rs, self.alpha_rd];
        if alphas.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(Error::InvalidArgument("EDA alphas must lie in [0, 1]".into()));
        }
        if self.n_aug == 0 {
            return Err(Error::InvalidArgument("n_aug must be positive".into()));
        }
        Ok(())
    }
}

fn words(text: &str) -> Result<Vec<String>> {
    let w: Vec<String> = text.split_whitespace().map(str::to_string).collect();
    if w.is_empty() {
        return Err(Error::InvalidArgument("baseline input text is empty".into()));
    }
    Ok(w)
}

fn synonym_replace<R: Rng>(w: &mut [String], alpha: f64, lex: &Lexicon, rng: &mut R) {
    for word in w.iter_mut() {
        if rng.random::<f64>() < alpha {
            if let Some(s) = lex.synonyms(word).and_then(|s| s.choose(rng)) {
                *word = s.clone();
            }
        }
    }
}

/// Each input word, with probability `alpha`, contributes one of its
/// synonyms at a random position.
fn random_insert<R: Rng>(w: &mut Vec<String>, originals: &[String], alpha: f64, lex: &Lexicon, rng: &mut R) {
    for word in originals {
        if rng.random::<f64>() < alpha {
            if let Some(s) = lex.synonyms(word).and_then(|s| s.choose(rng)) {
                let at = rng.random_range(0..=w.len());
                w.insert(at, s.clone());
            }
        }
    }
}

fn random_swap<R: Rng>(w: &mut [String], alpha: f64, rng: &mut R) {
    let n = w.len();
    if n < 2 {
        return;
    }
    for i in 0..n {
        if rng.random::<f64>() < alpha {
            w.swap(i, swap_partner(i, n, rng));
        }
    }
}

/// Uniform over `0..n` without `i`; needs `n >= 2`.
fn swap_partner<R: Rng>(i: usize, n: usize, rng: &mut R) -> usize {
    let j = rng.random_range(0..n - 1);
    if j >= i {
        j + 1
    } else {
        j
    }
}

fn random_delete<R: Rng>(w: &mut Vec<String>, alpha: f64, rng: &mut R) {
    if w.is_empty() {
        return;
    }
    let survivor = rng.random_range(0..w.len());
    let mut i = 0;
    w.retain(|_| {
        let keep = i == survivor || rng.random::<f64>() >= alpha;
        i += 1;
        keep
    });
}

/// `n_aug` variants, each from one pass of replacement, insertion, swap and
/// deletion in that order.
pub fn eda_augment(text: &str, cfg: &EdaConfig) -> Result<Vec<String>> {
    cfg.validate()?;
    let base = words(text)?;
    let text_seed = seed::derive_bytes(cfg.seed, text.as_bytes(), &[]);
    let mut out = Vec::with_capacity(cfg.n_aug);
    for v in 0..cfg.n_aug {
        let mut rng = seed::rng(seed::derive(text_seed, &[v as u64]));
        let mut w = base.clone();
        synonym_replace(&mut w, cfg.alpha_sr, &cfg.lexicon, &mut rng);
        random_insert(&mut w, &base, cfg.alpha_ri, &cfg.lexicon, &mut rng);
        random_swap(&mut w, cfg.alpha_rs, &mut rng);
        random_delete(&mut w, cfg.alpha_rd, &mut rng);
        out.push(w.join(" "));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AedaConfig {
    pub punctuation: Vec<String>,
    pub alpha: f64,
    pub seed: u64,
}

impl AedaConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            punctuation: [".", ";", "?", ":", "!", ","].map(String::from).to_vec(),
            alpha: 0.3,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.punctuation.is_empty() || self.punctuation.iter().any(|p| p.is_empty() || p.chars().any(char::is_whitespace)) {
            return Err(Error::InvalidArgument("punctuation set must be non-empty".into()));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidArgument("AEDA alpha must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AedaOutput {
    pub text: String,
    /// Indices into the output token sequence that hold inserted marks.
    pub inserted: Vec<usize>,
}

impl AedaOutput {
    /// Output tokens with the inserted marks removed.
    pub fn original_tokens(&self) -> Vec<&str> {
        self.text
            .split_whitespace()
            .enumerate()
            .filter(|(i, _)| self.inserted.binary_search(i).is_err())
            .map(|(_, t)| t)
            .collect()
    }
}

pub fn aeda_max_marks(n: usize, alpha: f64) -> usize {
    ((alpha * n as f64).floor() as usize).max(1)
}

/// Inserts `r` marks before `r` distinct word positions; `r` is uniform in
/// `1..=max(1, floor(alpha * n))`.
pub fn aeda_augment_detailed(text: &str, cfg: &AedaConfig) -> Result<AedaOutput> {
    cfg.validate()?;
    let w = words(text)?;
    let n = w.len();
    let mut rng = seed::rng(seed::derive_bytes(cfg.seed, text.as_bytes(), &[]));
    let r = rng.random_range(1..=aeda_max_marks(n, cfg.alpha).min(n));
    let mut slots: Vec<usize> = (0..n).collect();
    slots.shuffle(&mut rng);
    let mut chosen = slots[..r].to_vec();
    chosen.sort_unstable();

    let mut tokens = Vec::with_capacity(n + r);
    let mut inserted = Vec::with_capacity(r);
    let mut next = chosen.iter().peekable();
    for (i, word) in w.into_iter().enumerate() {
        if next.peek() == Some(&&i) {
            next.next();
            inserted.push(tokens.len());
            tokens.push(cfg.punctuation.choose(&mut rng).expect("non-empty").clone());
        }
        tokens.push(word);
    }
    Ok(AedaOutput {
        text: tokens.join(" "),
        inserted,
    })
}

pub fn aeda_augment(text: &str, cfg: &AedaConfig) -> Result<String> {
    aeda_augment_detailed(text, cfg).map(|o| o.text)
}

/// Random same-label in-context generation: `min(k, |pool|)` seeded picks
/// from `pool`, then a cue. The candidate carries the label and no context.
pub fn random_in_context_augment(
    label: LabelId,
    pool: &[&str],
    k: usize,
    gen: &dyn Generator,
    seed_value: u64,
    spec: &PromptSpec,
    labels: &LabelSpace,
) -> Result<(Candidate, RenderedPrompt)> {
    if pool.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no pool utterances for label `{}`",
            labels.name(label)
        )));
    }
    let mut rng = seed::rng(seed::derive(seed_value, &[label.0 as u64]));
    let examples: Vec<&str> = pool.choose_multiple(&mut rng, k.min(pool.len())).copied().collect();
    let rendered = prompt::render_examples_prompt(&examples, label, spec, labels)?;
    let params = GenParams {
        seed: seed_value,
        stop_markers: crate::genbackend::speaker_markers(&spec.speaker_names),
        ..GenParams::default()
    };
    let completion = gen.generate(&rendered, &params)?.into_iter().next();
    let (text, verdict, planted) = match completion {
        Some(c) => match c.parsed {
            Some(t) => (t, Verdict::Pending, c.planted_label),
            None => (c.raw, Verdict::DroppedParse, c.planted_label),
        },
        None => (String::new(), Verdict::DroppedParse, None),
    };
    let source = format!("pool:{}", labels.name(label));
    let id = format!("{source}~incontext~{seed_value:016x}");
    let lang = if spec.task == Task::Intent { Lang::Es } else { Lang::En };
    let candidate = Candidate {
        payload: Payload::Utterance(LabeledUtterance {
            id: id.clone(),
            text,
            label,
            lang,
            provenance: Provenance::Silver,
        }),
        id,
        prescribed_label: label,
        strategy: Strategy::Incontext,
        source_id: source,
        silver_label: None,
        prob: None,
        entropy: None,
        verdict,
        planted_label: planted,
    };
    Ok((candidate, rendered))
}

/// Applies a text perturbation to every labelled unit of `gold`. For
/// dialogues each turn yields a candidate holding the conversation up to that
/// turn with the perturbed text in its place.
pub fn perturb_partition<F>(gold: &Partition, task: Task, strategy: Strategy, mut perturb: F) -> Result<Vec<Candidate>>
where
    F: FnMut(&str) -> Result<Vec<String>>,
{
    let mut out = Vec::new();
    let mut push = |id: String, source: &str, payload: Payload, label: LabelId| {
        out.push(Candidate {
            id,
            payload,
            prescribed_label: label,
            strategy,
            source_id: source.to_string(),
            silver_label: None,
            prob: None,
            entropy: None,
            verdict: Verdict::Pending,
            planted_label: None,
        });
    };
    match gold {
        Partition::Dialogue(convs) => {
            for conv in convs {
                for (i, turn) in conv.turns.iter().enumerate() {
                    let Some(label) = turn.label(task) else { continue };
                    for (v, text) in perturb(&turn.text)?.into_iter().enumerate() {
                        let id = format!("{}~{}~t{i}~v{v}", conv.id, strategy.as_str());
                        let mut turns = conv.turns[..=i].to_vec();
                        turns[i].text = text;
                        turns[i].generated = true;
                        let payload = Payload::Dialogue(Conversation {
                            id: id.clone(),
                            turns,
                            provenance: Provenance::Silver,
                            source_id: Some(conv.id.clone()),
                        });
                        push(id, &conv.id, payload, label);
                    }
                }
            }
        }
        Partition::Utterance(utts) => {
            for u in utts {
                for (v, text) in perturb(&u.text)?.into_iter().enumerate() {
                    let id = format!("{}~{}~v{v}", u.id, strategy.as_str());
                    let payload = Payload::Utterance(LabeledUtterance {
                        id: id.clone(),
                        text,
                        label: u.label,
                        lang: u.lang,
                        provenance: Provenance::Silver,
                    });
                    push(id, &u.id, payload, u.label);
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genbackend::{MockGenConfig, MockGenerator};

    fn zero_eda(seed: u64) -> EdaConfig {
        EdaConfig {
            alpha_sr: 0.0,
            alpha_ri: 0.0,
            alpha_rs: 0.0,
            alpha_rd: 0.0,
            ..EdaConfig::new(Lexicon::bundled(), seed)
        }
    }

    #[test]
    fn lexicon_parsing() {
        let lex = Lexicon::parse("# c\nhappy\tglad, cheerful\n\nbig\tlarge\n").unwrap();
        assert_eq!(lex.synonyms("Happy").unwrap(), ["glad", "cheerful"]);
        assert!(Lexicon::parse("happy glad").is_err());
        assert!(Lexicon::parse("happy\t , ").is_err());
        assert!(!Lexicon::bundled().is_empty());
    }

    #[test]
    fn eda_zero_rates_copy_input() {
        let out = eda_augment("i am very happy today", &zero_eda(1)).unwrap();
        assert_eq!(out, vec!["i am very happy today"; 4]);
    }

    #[test]
    fn eda_full_deletion_keeps_one_token() {
        let cfg = EdaConfig {
            alpha_rd: 1.0,
            n_aug: 20,
            ..zero_eda(3)
        };
        for v in eda_augment("a b c", &cfg).unwrap() {
            assert!(["a", "b", "c"].contains(&v.as_str()), "{v}");
        }
    }

    #[test]
    fn eda_single_swap_of_two_words() {
        let mut rng = seed::rng(5);
        for _ in 0..50 {
            assert_eq!(swap_partner(0, 2, &mut rng), 1);
        }
        let mut w = vec!["a".to_string(), "b".to_string()];
        let j = swap_partner(0, 2, &mut rng);
        w.swap(0, j);
        assert_eq!(w, ["b", "a"]);
    }

    #[test]
    fn eda_outputs_use_known_vocabulary() {
        let lex = Lexicon::bundled();
        let cfg = EdaConfig {
            alpha_sr: 0.5,
            alpha_ri: 0.5,
            alpha_rs: 0.5,
            alpha_rd: 0.2,
            n_aug: 8,
            ..EdaConfig::new(lex.clone(), 9)
        };
        let text = "the happy dog is very big and fast";
        let input: Vec<&str> = text.split_whitespace().collect();
        for v in eda_augment(text, &cfg).unwrap() {
            for tok in v.split_whitespace() {
                let from_lexicon = input
                    .iter()
                    .any(|w| lex.synonyms(w).is_some_and(|s| s.iter().any(|x| x == tok)));
                assert!(input.contains(&tok) || from_lexicon, "{tok}");
            }
        }
        assert_eq!(eda_augment(text, &cfg).unwrap(), eda_augment(text, &cfg).unwrap());
        assert!(eda_augment("   ", &cfg).is_err());
    }

    #[test]
    fn aeda_single_word_gets_one_mark() {
        let out = aeda_augment_detailed("hello", &AedaConfig::new(2)).unwrap();
        assert_eq!(out.inserted, vec![0]);
        assert_eq!(out.original_tokens(), ["hello"]);
    }

    #[test]
    fn aeda_ten_words_at_most_three_marks() {
        let text = "one two three four five six seven eight nine ten";
        let mut seen = std::collections::BTreeSet::new();
        for s in 0..200 {
            let out = aeda_augment_detailed(text, &AedaConfig::new(s)).unwrap();
            seen.insert(out.inserted.len());
            assert_eq!(out.original_tokens().join(" "), text);
        }
        assert_eq!(seen.into_iter().collect::<Vec<_>>(), vec![1, 2, 3]);
        assert!(aeda_augment("", &AedaConfig::new(0)).is_err());
    }

    #[test]
    fn in_context_prompt_sizes() {
        let labels = LabelSpace::emotion();
        let happy = labels.index_of("happiness").unwrap();
        let spec = PromptSpec::new(Task::Emotion, Strategy::Incontext);
        let templates: BTreeMap<LabelId, Vec<String>> = labels
            .ids()
            .map(|l| (l, vec![if l == happy { "what a lovely day" } else { "meh" }.to_string()]))
            .collect();
        let gen = MockGenerator::new(MockGenConfig::new(templates, 0.0, 1, labels.len()).unwrap());
        let pool: Vec<String> = (0..25).map(|i| format!("glad utterance {i}")).collect();
        let refs: Vec<&str> = pool.iter().map(String::as_str).collect();
        let (c, p) = random_in_context_augment(happy, &refs, 10, &gen, 4, &spec, &labels).unwrap();
        assert_eq!(p.line_count(), 11);
        assert_eq!(c.prescribed_label, happy);
        assert!(matches!(c.payload, Payload::Utterance(_)));
        assert_eq!(c.generated_text(), "what a lovely day");
        let (_, p3) = random_in_context_augment(happy, &refs[..3], 10, &gen, 4, &spec, &labels).unwrap();
        assert_eq!(p3.line_count(), 4);
        let (_, again) = random_in_context_augment(happy, &refs, 10, &gen, 4, &spec, &labels).unwrap();
        assert_eq!(again, p);
        assert!(random_in_context_augment(happy, &[], 10, &gen, 4, &spec, &labels).is_err());
    }
}
