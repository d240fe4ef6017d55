use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde_json::json;

use weakdap_core::augment::{self, Augmenter};
use weakdap_core::baselines::{self, AedaConfig, EdaConfig, Lexicon};
use weakdap_core::corpus::{self, Schema, Stratify};
use weakdap_core::eval::{self, ExportItem};
use weakdap_core::genbackend::{HttpBackend, MockGenConfig, MockGenerator};
use weakdap_core::pipeline::WeakDap;
use weakdap_core::weaklabel::{self, Instance};
use weakdap_core::{
    seed, AugmentPlan, Candidate, DialogueLabels, Generator, LabelId, LabelSpace, MetricReport, Partition,
    PromptSpec, Provenance, Strategy, Task, WeakLabeler,
};

use crate::settings::{Backend, Settings};
use crate::{BaselineMethod, Cli, Command, DataArgs, GenArgs, LoopArgs, TrainArgs};

/// Bad invocation; exits with status 2 like argument errors.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

impl DataArgs {
    fn apply(&self, s: &mut Settings) {
        if let Some(t) = self.task {
            s.task = t;
        }
        if let Some(l) = &self.labels {
            s.labels = Some(l.clone());
        }
    }
}

impl GenArgs {
    fn apply(&self, s: &mut Settings) {
        if let Some(b) = self.backend {
            s.backend = b;
        }
        if let Some(e) = &self.endpoint {
            s.endpoint = Some(e.clone());
        }
        if let Some(p) = self.parallelism {
            s.parallelism = p;
        }
        if let Some(q) = self.mock_noise {
            s.mock_noise = q;
        }
        if let Some(t) = &self.mock_templates {
            s.mock_templates = Some(t.clone());
        }
        if let Some(st) = self.strategy {
            s.strategy = st;
        }
        if let Some(m) = self.multiplier {
            s.multiplier = m;
        }
        if let Some(m) = self.label_mode {
            s.label_mode = m;
        }
        if let Some(k) = self.k {
            s.k_examples = k;
        }
        if let Some(c) = &self.control_prefix {
            s.control_prefix = Some(c.clone());
        }
    }
}

impl LoopArgs {
    fn apply(&self, s: &mut Settings) {
        if let Some(p) = self.filter_percentile {
            s.filter.percentile = p;
        }
        if self.no_filter {
            s.filter.enabled = false;
        }
        if let Some(e) = self.epsilon {
            s.loop_cfg.epsilon = e;
        }
        if let Some(k) = self.patience {
            s.loop_cfg.patience = k;
        }
        if let Some(m) = self.max_iterations {
            s.loop_cfg.max_iterations = m;
        }
        if let Some(m) = self.metric {
            s.loop_cfg.metric = m;
        }
        if let Some(r) = self.regen {
            s.loop_cfg.regen = r;
        }
    }
}

impl TrainArgs {
    fn apply(&self, s: &mut Settings) {
        if let Some(e) = self.epochs {
            s.train.epochs = e;
        }
        if let Some(lr) = self.learning_rate {
            s.train.learning_rate = lr;
        }
        if let Some(w) = self.context_window {
            s.featurizer.context_window = w;
        }
    }
}

fn schema(task: Task) -> Schema {
    if task.is_dialogue() {
        Schema::Dialogue
    } else {
        Schema::Utterance
    }
}

/// Distinct `intent` values across utterance files, sorted.
fn infer_intents(paths: &[&Path]) -> Result<LabelSpace> {
    let mut names = BTreeSet::new();
    for p in paths {
        let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let v: serde_json::Value =
                serde_json::from_str(line).with_context(|| format!("{}:{}: malformed JSON", p.display(), i + 1))?;
            if let Some(s) = v.get("intent").and_then(|s| s.as_str()) {
                names.insert(s.to_string());
            }
        }
    }
    Ok(LabelSpace::new(Task::Intent, names)?)
}

fn label_space(s: &Settings, inputs: &[&Path]) -> Result<LabelSpace> {
    if let Some(p) = &s.labels {
        let space = LabelSpace::load(p)?;
        if space.task != s.task {
            bail!("label file {} is for another task", p.display());
        }
        return Ok(space);
    }
    Ok(match s.task {
        Task::Emotion => LabelSpace::emotion(),
        Task::Act => LabelSpace::act(),
        Task::Intent => infer_intents(inputs)?,
    })
}

fn load(path: &Path, space: &LabelSpace) -> Result<Partition> {
    corpus::load_jsonl(path, schema(space.task), &DialogueLabels::default(), space)
        .with_context(|| format!("loading {}", path.display()))
}

fn out_dir(out: Option<&Path>) -> Result<PathBuf> {
    let dir = out.ok_or_else(|| usage("--out is required for this command"))?;
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir.to_path_buf())
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn prompt_spec(s: &Settings, strategy: Strategy) -> Result<PromptSpec> {
    let spec = PromptSpec {
        task: s.task,
        strategy,
        speaker_names: s.speaker_names.clone(),
        label_mode: s.label_mode,
        control_prefix: s.control_prefix.clone(),
        k_examples: s.k_examples,
    };
    spec.validate()?;
    Ok(spec)
}

fn check_strategy(task: Task, strategy: Strategy) -> Result<()> {
    let ok = match task {
        Task::Intent => strategy == Strategy::Incontext,
        _ => matches!(strategy, Strategy::Lta | Strategy::Ata | Strategy::Cta),
    };
    if ok {
        Ok(())
    } else {
        Err(usage(format!(
            "strategy `{}` does not apply to the {:?} task",
            strategy.as_str(),
            task
        )))
    }
}

fn generator(s: &Settings, gold: &Partition, space: &LabelSpace) -> Result<Box<dyn Generator>> {
    Ok(match s.backend {
        Backend::Mock => {
            let source = match &s.mock_templates {
                Some(p) => load(p, space)?,
                None => gold.clone(),
            };
            let cfg = MockGenConfig::from_partition(&source, s.task, space.len(), s.mock_noise, s.seed)?;
            Box::new(MockGenerator::new(cfg))
        }
        Backend::Http => {
            let ep = s.endpoint.clone().expect("validated");
            Box::new(HttpBackend::new(ep).with_parallelism(s.parallelism))
        }
    })
}

fn majority(space: &LabelSpace, data: &Partition) -> LabelId {
    space.majority.unwrap_or_else(|| corpus::majority_label(data, space))
}

pub fn dispatch(cli: Cli) -> Result<()> {
    let mut s = Settings::from_env(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        s.seed = seed;
    }
    s.train.seed = s.seed;
    let out = cli.out.as_deref();
    match &cli.command {
        Command::Sample {
            input,
            fraction,
            uniform,
            data,
        } => {
            data.apply(&mut s);
            if *uniform {
                s.stratified = false;
            }
            s.validate()?;
            sample(&s, input, *fraction, out)
        }
        Command::Augment { input, pool, data, gen } => {
            data.apply(&mut s);
            gen.apply(&mut s);
            s.validate()?;
            augment_cmd(&s, input, pool.as_deref(), out)
        }
        Command::Train {
            input,
            validation,
            candidates,
            data,
            train,
        } => {
            data.apply(&mut s);
            train.apply(&mut s);
            s.validate()?;
            train_cmd(&s, input, validation.as_deref(), candidates.as_deref(), out)
        }
        Command::Weakdap {
            train,
            validation,
            pool,
            data,
            gen,
            loop_args,
            train_args,
        } => {
            data.apply(&mut s);
            gen.apply(&mut s);
            loop_args.apply(&mut s);
            train_args.apply(&mut s);
            s.validate()?;
            weakdap_cmd(&s, train, validation, pool.as_deref(), out)
        }
        Command::Eval {
            model,
            input,
            export_features,
            data,
        } => {
            let task_given = data.task.is_some();
            data.apply(&mut s);
            eval_cmd(&s, task_given, model, input, export_features.as_deref(), out)
        }
        Command::Baseline {
            method,
            input,
            lexicon,
            alpha_sr,
            alpha_ri,
            alpha_rs,
            alpha_rd,
            aeda_alpha,
            n_aug,
            data,
            gen,
        } => {
            data.apply(&mut s);
            gen.apply(&mut s);
            s.validate()?;
            let n_aug = n_aug.unwrap_or(s.multiplier.ceil() as usize).max(1);
            let gold_space = label_space(&s, &[input])?;
            let gold = load(input, &gold_space)?;
            let cands = match method {
                BaselineMethod::Eda => {
                    let lex = if lexicon == "bundled" {
                        Lexicon::bundled()
                    } else {
                        Lexicon::load(lexicon).with_context(|| format!("loading lexicon {lexicon}"))?
                    };
                    let base = EdaConfig::new(lex, s.seed);
                    let cfg = EdaConfig {
                        alpha_sr: alpha_sr.unwrap_or(base.alpha_sr),
                        alpha_ri: alpha_ri.unwrap_or(base.alpha_ri),
                        alpha_rs: alpha_rs.unwrap_or(base.alpha_rs),
                        alpha_rd: alpha_rd.unwrap_or(base.alpha_rd),
                        n_aug,
                        ..base
                    };
                    cfg.validate().map_err(|e| usage(e.to_string()))?;
                    baselines::perturb_partition(&gold, s.task, Strategy::Eda, |t| baselines::eda_augment(t, &cfg))?
                }
                BaselineMethod::Aeda => {
                    let base = AedaConfig::new(s.seed);
                    let alpha = aeda_alpha.unwrap_or(base.alpha);
                    let cfgs: Vec<AedaConfig> = (0..n_aug)
                        .map(|v| AedaConfig {
                            alpha,
                            seed: seed::derive(s.seed, &[v as u64]),
                            ..base.clone()
                        })
                        .collect();
                    cfgs[0].validate().map_err(|e| usage(e.to_string()))?;
                    baselines::perturb_partition(&gold, s.task, Strategy::Aeda, |t| {
                        cfgs.iter().map(|c| baselines::aeda_augment(t, c)).collect()
                    })?
                }
                BaselineMethod::Incontext => return incontext_baseline(&s, &gold, &gold_space, out),
            };
            let dir = out_dir(out)?;
            augment::write_candidates(dir.join("candidates.jsonl"), &cands, &DialogueLabels::default(), &gold_space)?;
            println!("wrote {} {:?} candidates", cands.len(), method);
            Ok(())
        }
    }
}

fn sample(s: &Settings, input: &Path, fraction: f64, out: Option<&Path>) -> Result<()> {
    let space = label_space(s, &[input])?;
    let part = load(input, &space)?;
    let stratify = if s.stratified { Stratify::ByLabel } else { Stratify::Uniform };
    let sampled = corpus::sample_few_shot(&part, &space, fraction, s.seed, stratify)?;
    let dir = out_dir(out)?;
    corpus::write_jsonl(dir.join("train.jsonl"), &sampled, &DialogueLabels::default(), &space)?;
    let counts = corpus::label_counts(&sampled.label_occurrences(space.task), space.len());
    let label_counts: BTreeMap<&str, usize> = space.ids().map(|l| (space.name(l), counts[l.0])).collect();
    let manifest = json!({
        "input": input.display().to_string(),
        "task": s.task,
        "fraction": fraction,
        "seed": s.seed,
        "stratified": s.stratified,
        "records_in": part.len(),
        "records_out": sampled.len(),
        "label_counts": label_counts,
    });
    write_json(&dir.join("manifest.json"), &manifest)?;
    println!("sampled {} of {} records", sampled.len(), part.len());
    Ok(())
}

fn load_pool(pool: Option<&Path>, space: &LabelSpace) -> Result<Option<Vec<weakdap_core::LabeledUtterance>>> {
    pool.map(|p| corpus::load_utterances(p, space).with_context(|| format!("loading {}", p.display())))
        .transpose()
}

fn augment_cmd(s: &Settings, input: &Path, pool: Option<&Path>, out: Option<&Path>) -> Result<()> {
    check_strategy(s.task, s.strategy)?;
    let mut inputs = vec![input];
    inputs.extend(pool);
    let space = label_space(s, &inputs)?;
    let gold = load(input, &space)?;
    let pool = load_pool(pool, &space)?;
    let gen = generator(s, &gold, &space)?;
    let spec = prompt_spec(s, s.strategy)?;
    let plan = AugmentPlan {
        strategy: s.strategy,
        multiplier: s.multiplier,
        label_mode: s.label_mode,
        seed: s.seed,
    };
    let result = Augmenter::new(gen.as_ref(), &spec, &space, &plan).run(&gold, pool.as_deref())?;
    let n = result.candidates.len();
    if n > 0 && result.generation_failures == n {
        bail!("backend `{}` failed for every request", gen.id());
    }
    let dir = out_dir(out)?;
    augment::write_candidates(dir.join("candidates.jsonl"), &result.candidates, &DialogueLabels::default(), &space)?;
    let count = |v: weakdap_core::Verdict| result.candidates.iter().filter(|c| c.verdict == v).count();
    println!(
        "produced {n} candidates in {} passes: {} parsed, {} unparsable, {} duplicates, {} failed requests; effective multiplier {:.3}",
        result.passes,
        count(weakdap_core::Verdict::Pending),
        count(weakdap_core::Verdict::DroppedParse),
        count(weakdap_core::Verdict::DroppedDuplicate),
        result.generation_failures,
        augment::effective_multiplier(&result.candidates, gold.len()),
    );
    Ok(())
}

fn train_cmd(
    s: &Settings,
    input: &Path,
    validation: Option<&Path>,
    candidates: Option<&Path>,
    out: Option<&Path>,
) -> Result<()> {
    let mut inputs = vec![input];
    inputs.extend(validation);
    let space = label_space(s, &inputs)?;
    let gold = load(input, &space)?;
    let window = s.featurizer.context_window;
    let mut data = weaklabel::gold_instances(&gold, s.task, window);
    let gold_n = data.len();
    if let Some(p) = candidates {
        let cands = augment::read_candidates(p, &DialogueLabels::default(), &space)?;
        data.extend(weaklabel::silver_instances(&cands, s.task, window));
    }
    let val = validation.map(|p| load(p, &space)).transpose()?;
    let val_data = val.as_ref().map(|v| weaklabel::gold_instances(v, s.task, window));
    let model = weaklabel::train(&data, &space, s.featurizer, val_data.as_deref(), &s.train)?;
    let dir = out_dir(out)?;
    model.save(dir.join("model.ckpt"))?;
    println!("trained on {gold_n} gold and {} silver instances", data.len() - gold_n);
    if let Some(vd) = &val_data {
        let cm = eval::evaluate(&model, vd);
        let report = MetricReport::from_confusion(&cm, &space, majority(&space, &gold))?;
        write_json(&dir.join("validation_report.json"), &report)?;
        println!("{}", serde_json::to_string_pretty(&report)?);
    }
    Ok(())
}

fn weakdap_cmd(s: &Settings, train: &Path, validation: &Path, pool: Option<&Path>, out: Option<&Path>) -> Result<()> {
    check_strategy(s.task, s.strategy)?;
    let mut inputs = vec![train, validation];
    inputs.extend(pool);
    let space = label_space(s, &inputs)?;
    let gold = load(train, &space)?;
    let val = load(validation, &space)?;
    let pool_data = load_pool(pool, &space)?;
    let mut space = space;
    space.set_majority(majority(&space, &gold))?;
    let gen = generator(s, &gold, &space)?;
    let spec = prompt_spec(s, s.strategy)?;
    let plan = AugmentPlan {
        strategy: s.strategy,
        multiplier: s.multiplier,
        label_mode: s.label_mode,
        seed: s.seed,
    };
    let dir = out_dir(out)?;
    let mut config = s.to_value();
    config["inputs"] = json!({
        "train": train.display().to_string(),
        "validation": validation.display().to_string(),
        "pool": pool.map(|p| p.display().to_string()),
    });
    let dl = DialogueLabels::default();
    let state = WeakDap {
        train: &gold,
        validation: &val,
        label_space: &space,
        dialogue_labels: &dl,
        pool: pool_data.as_deref(),
        plan: &plan,
        spec: &spec,
        filter: &s.filter,
        loop_cfg: &s.loop_cfg,
        train_cfg: &s.train,
        featurizer: s.featurizer,
        gen: gen.as_ref(),
        out_dir: Some(&dir),
        config,
    }
    .run()?;
    println!(
        "{} iterations, best iteration {} with {:?} {:.4}; stop: {:?}",
        state.score_history.len(),
        state.best_iteration,
        s.loop_cfg.metric,
        state.best_score,
        state.record.stop_reason,
    );
    Ok(())
}

fn eval_cmd(
    s: &Settings,
    task_given: bool,
    model_path: &Path,
    input: &Path,
    export: Option<&Path>,
    out: Option<&Path>,
) -> Result<()> {
    let expected = s.labels.as_ref().map(LabelSpace::load).transpose()?;
    let model = WeakLabeler::load(model_path, expected.as_ref())?;
    let space = model.label_space.clone();
    if task_given && s.task != space.task {
        return Err(weakdap_core::Error::LabelSpaceMismatch(format!(
            "model is for the {:?} task, --task says {:?}",
            space.task, s.task
        ))
        .into());
    }
    let data = load(input, &space)?;
    let window = model.featurizer.context_window;
    let inst = weaklabel::gold_instances(&data, space.task, window);
    let cm = eval::evaluate(&model, &inst);
    let report = MetricReport::from_confusion(&cm, &space, majority(&space, &data))?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        write_json(&dir.join("report.json"), &report)?;
        std::fs::write(dir.join("confusion.csv"), cm.to_csv(&space))?;
    }
    if let Some(path) = export {
        let ids = instance_ids(&data, space.task);
        let items: Vec<ExportItem<'_>> = ids
            .iter()
            .zip(inst)
            .map(|(id, (instance, label))| ExportItem {
                id,
                instance,
                label,
                provenance: Provenance::Gold,
                strategy: None,
            })
            .collect();
        eval::export_features(&items, &model, path)?;
    }
    Ok(())
}

/// Ids aligned with `weaklabel::gold_instances`.
fn instance_ids(data: &Partition, task: Task) -> Vec<String> {
    match data {
        Partition::Dialogue(convs) => convs
            .iter()
            .flat_map(|c| {
                c.turns
                    .iter()
                    .enumerate()
                    .filter(|(_, t)| t.label(task).is_some())
                    .map(move |(i, _)| format!("{}#{}", c.id, i + 1))
            })
            .collect(),
        Partition::Utterance(v) => v.iter().map(|u| u.id.clone()).collect(),
    }
}

fn incontext_baseline(s: &Settings, gold: &Partition, space: &LabelSpace, out: Option<&Path>) -> Result<()> {
    let spec = prompt_spec(s, Strategy::Incontext)?;
    let units: Vec<(Instance, LabelId)> = weaklabel::gold_instances(gold, s.task, 0);
    if units.is_empty() {
        bail!("no labelled gold instances");
    }
    let mut pools: BTreeMap<LabelId, Vec<&str>> = BTreeMap::new();
    for (inst, l) in &units {
        pools.entry(*l).or_default().push(inst.text.as_str());
    }
    let gen = generator(s, gold, space)?;
    let budget = (s.multiplier * units.len() as f64 - 1e-9).ceil() as usize;
    let mut cands: Vec<Candidate> = Vec::with_capacity(budget);
    let mut prompts = Vec::with_capacity(budget);
    for i in 0..budget {
        let label = units[i % units.len()].1;
        let (c, p) = baselines::random_in_context_augment(
            label,
            &pools[&label],
            s.k_examples,
            gen.as_ref(),
            seed::derive(s.seed, &[i as u64]),
            &spec,
            space,
        )?;
        prompts.push(json!({ "id": c.id, "prompt": p.text }));
        cands.push(c);
    }
    let dir = out_dir(out)?;
    augment::write_candidates(dir.join("candidates.jsonl"), &cands, &DialogueLabels::default(), space)?;
    let lines: Vec<String> = prompts.iter().map(|p| p.to_string()).collect();
    std::fs::write(dir.join("prompts.jsonl"), lines.join("\n") + "\n")?;
    println!("wrote {} in-context candidates", cands.len());
    Ok(())
}
