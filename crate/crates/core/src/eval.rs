//! Task metrics computed from a confusion matrix.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::augment::{Candidate, Strategy};
use crate::corpus::{LabelId, LabelSpace, Provenance};
use crate::error::{Error, Result};
use crate::weaklabel::{Instance, WeakLabeler};

/// Rows are gold labels, columns are predictions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: usize,
    pub counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Self {
        let c = rows.len();
        assert!(rows.iter().all(|r| r.len() == c), "confusion matrix must be square");
        Self {
            classes: c,
            counts: rows.iter().flatten().copied().collect(),
        }
    }

    pub fn from_predictions(gold: &[LabelId], pred: &[LabelId], classes: usize) -> Self {
        assert_eq!(gold.len(), pred.len());
        let mut cm = Self::new(classes);
        for (g, p) in gold.iter().zip(pred) {
            cm.add(*g, *p);
        }
        cm
    }

    pub fn add(&mut self, gold: LabelId, pred: LabelId) {
        self.counts[gold.0 * self.classes + pred.0] += 1;
    }

    pub fn get(&self, gold: usize, pred: usize) -> u64 {
        self.counts[gold * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    fn tp_fp_fn(&self, class: usize) -> (u64, u64, u64) {
        let tp = self.get(class, class);
        let col: u64 = (0..self.classes).map(|r| self.get(r, class)).sum();
        let row: u64 = (0..self.classes).map(|p| self.get(class, p)).sum();
        (tp, col - tp, row - tp)
    }

    pub fn to_csv(&self, labels: &LabelSpace) -> String {
        let mut s = String::from("gold\\pred");
        for l in &labels.labels {
            let _ = write!(s, ",{l}");
        }
        s.push('\n');
        for r in 0..self.classes {
            s.push_str(&labels.labels[r]);
            for p in 0..self.classes {
                let _ = write!(s, ",{}", self.get(r, p));
            }
            s.push('\n');
        }
        s
    }
}

fn f1(tp: u64, fp: u64, fn_: u64) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

/// Micro-F1 pooled over every class except `majority`. Cells predicting the
/// majority class still count as false negatives of the gold class, and gold
/// majority instances predicted as another class count as false positives.
pub fn micro_f1_no_majority(cm: &ConfusionMatrix, majority: LabelId) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for c in (0..cm.classes).filter(|&c| c != majority.0) {
        let (t, p, n) = cm.tp_fp_fn(c);
        tp += t;
        fp += p;
        fn_ += n;
    }
    f1(tp, fp, fn_)
}

pub fn per_class_f1(cm: &ConfusionMatrix) -> Vec<f64> {
    (0..cm.classes)
        .map(|c| {
            let (t, p, n) = cm.tp_fp_fn(c);
            f1(t, p, n)
        })
        .collect()
}

pub fn macro_f1(cm: &ConfusionMatrix) -> f64 {
    if cm.classes == 0 {
        return 0.0;
    }
    per_class_f1(cm).iter().sum::<f64>() / cm.classes as f64
}

pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::InvalidArgument("accuracy of an empty confusion matrix".into()));
    }
    let trace: u64 = (0..cm.classes).map(|c| cm.get(c, c)).sum();
    Ok(trace as f64 / total as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub micro_f1_no_majority: f64,
    pub majority_label: LabelId,
    pub majority_label_name: String,
    pub per_class: Vec<ClassScores>,
    pub instances: u64,
}

impl MetricReport {
    pub fn from_confusion(cm: &ConfusionMatrix, labels: &LabelSpace, majority: LabelId) -> Result<Self> {
        let per_class = (0..cm.classes)
            .map(|c| {
                let (t, p, n) = cm.tp_fp_fn(c);
                let div = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
                ClassScores {
                    label: labels.labels[c].clone(),
                    precision: div(t, t + p),
                    recall: div(t, t + n),
                    f1: f1(t, p, n),
                    support: t + n,
                }
            })
            .collect();
        Ok(Self {
            accuracy: accuracy(cm)?,
            macro_f1: macro_f1(cm),
            micro_f1_no_majority: micro_f1_no_majority(cm, majority),
            majority_label: majority,
            majority_label_name: labels.name(majority).to_string(),
            per_class,
            instances: cm.total(),
        })
    }
}

/// Predicts every instance and tallies the confusion matrix.
pub fn evaluate(model: &WeakLabeler, data: &[(Instance, LabelId)]) -> ConfusionMatrix {
    use rayon::prelude::*;
    let preds: Vec<LabelId> = data.par_iter().map(|(x, _)| model.predict(x)).collect();
    let gold: Vec<LabelId> = data.iter().map(|(_, y)| *y).collect();
    ConfusionMatrix::from_predictions(&gold, &preds, model.num_classes())
}

// ---- feature export -------------------------------------------------------------

/// One row of a feature export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub id: String,
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategy: Option<Strategy>,
    pub label: String,
    pub features: Vec<(u32, f64)>,
}

/// An instance to export, tagged with where it came from.
pub struct ExportItem<'a> {
    pub id: &'a str,
    pub instance: Instance,
    pub label: LabelId,
    pub provenance: Provenance,
    pub strategy: Option<Strategy>,
}

impl<'a> ExportItem<'a> {
    pub fn from_candidate(c: &'a Candidate, window: usize) -> Self {
        Self {
            id: &c.id,
            instance: crate::weaklabel::candidate_instance(c, window),
            label: c.prescribed_label,
            provenance: Provenance::Silver,
            strategy: Some(c.strategy),
        }
    }
}

/// Writes one sparse JSON row per item using the model's featurizer.
pub fn export_features(items: &[ExportItem<'_>], model: &WeakLabeler, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    let mut w = std::io::BufWriter::new(file);
    for it in items {
        let row = FeatureRow {
            id: it.id.to_string(),
            provenance: it.provenance,
            strategy: it.strategy,
            label: model.label_space.name(it.label).to_string(),
            features: model.featurizer.featurize(&it.instance).0,
        };
        serde_json::to_writer(&mut w, &row)?;
        w.write_all(b"\n").map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    }
    w.flush().map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Task;
    use crate::weaklabel::FeaturizerConfig;

    fn worked() -> ConfusionMatrix {
        ConfusionMatrix::from_rows(&[vec![5, 0, 0], vec![1, 3, 0], vec![0, 1, 2]])
    }

    #[test]
    fn micro_f1_worked_example() {
        assert!((micro_f1_no_majority(&worked(), LabelId(0)) - 10.0 / 13.0).abs() < 1e-12);
    }

    #[test]
    fn micro_f1_edge_cases() {
        let perfect = ConfusionMatrix::from_rows(&[vec![4, 0], vec![0, 2]]);
        assert_eq!(micro_f1_no_majority(&perfect, LabelId(0)), 1.0);
        let all_majority = ConfusionMatrix::from_rows(&[vec![0, 0], vec![5, 0]]);
        assert_eq!(micro_f1_no_majority(&all_majority, LabelId(0)), 0.0);
    }

    #[test]
    fn micro_f1_ignores_majority_diagonal() {
        let mut cm = worked();
        let before = micro_f1_no_majority(&cm, LabelId(0));
        cm.counts[0] += 1000;
        assert_eq!(micro_f1_no_majority(&cm, LabelId(0)), before);
    }

    #[test]
    fn macro_f1_examples() {
        assert_eq!(macro_f1(&ConfusionMatrix::from_rows(&[vec![3, 0], vec![0, 5]])), 1.0);
        assert!((macro_f1(&ConfusionMatrix::from_rows(&[vec![3, 1], vec![1, 3]])) - 0.75).abs() < 1e-12);
        let cm = ConfusionMatrix::from_rows(&[vec![2, 0, 0], vec![0, 2, 0], vec![0, 0, 0]]);
        assert!((macro_f1(&cm) - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&ConfusionMatrix::from_rows(&[vec![2, 0], vec![0, 9]])).unwrap(), 1.0);
        assert_eq!(accuracy(&ConfusionMatrix::from_rows(&[vec![1, 1], vec![1, 1]])).unwrap(), 0.5);
        assert!((accuracy(&worked()).unwrap() - 10.0 / 12.0).abs() < 1e-12);
        assert!(accuracy(&ConfusionMatrix::new(2)).is_err());
    }

    #[test]
    fn report_json_roundtrip() {
        let labels = LabelSpace::new(Task::Emotion, ["neutral", "anger", "fear"]).unwrap();
        let r = MetricReport::from_confusion(&worked(), &labels, LabelId(0)).unwrap();
        assert_eq!(r.majority_label, LabelId(0));
        let back: MetricReport = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        assert_eq!(back, r);
        assert!(worked().to_csv(&labels).starts_with("gold\\pred,neutral,anger,fear\nneutral,5,0,0\n"));
    }

    #[test]
    fn export_rows_and_determinism() {
        let labels = LabelSpace::new(Task::Intent, ["a", "b"]).unwrap();
        let m = WeakLabeler::zeros(labels, FeaturizerConfig::default());
        let items = vec![
            ExportItem {
                id: "g1",
                instance: Instance::utterance("hello"),
                label: LabelId(0),
                provenance: Provenance::Gold,
                strategy: None,
            },
            ExportItem {
                id: "s1",
                instance: Instance::utterance("bye"),
                label: LabelId(1),
                provenance: Provenance::Silver,
                strategy: Some(Strategy::Lta),
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
        export_features(&items, &m, &a).unwrap();
        export_features(&items, &m, &b).unwrap();
        let ta = std::fs::read(&a).unwrap();
        assert_eq!(ta, std::fs::read(&b).unwrap());
        let rows: Vec<FeatureRow> = String::from_utf8(ta)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].provenance, Provenance::Gold);
        assert_eq!(rows[1].provenance, Provenance::Silver);
        assert_eq!(rows[1].strategy, Some(Strategy::Lta));
    }
}
