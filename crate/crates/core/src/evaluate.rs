//! Confusion matrices and the metrics derived from them.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::harvest::BlobStore;
use crate::manifest::{Manifest, Split};
use crate::taxonomy::ClassId;
use crate::trainer::{evaluate_samples, load_split, Checkpoint, Sample};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("label `{0}` is not in the class order")]
    UnknownLabel(ClassId),
    #[error("predictions ({0}) and truths ({1}) differ in length")]
    LengthMismatch(usize, usize),
    #[error("matrix is empty")]
    Empty,
    #[error("matrix is not {0}x{0}")]
    NotSquare(usize),
    #[error("class order contains `{0}` twice")]
    DuplicateClass(ClassId),
    #[error("permutation does not match the class set")]
    BadPermutation,
    #[error("split `{0}` has no accepted records")]
    EmptySplit(String),
    #[error("none of the {0} records in the split could be loaded")]
    NothingLoaded(usize),
    #[error("prediction failed: {0}")]
    Predict(String),
}

/// K×K counts, rows = true class, columns = predicted class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    classes: Vec<ClassId>,
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn zeros(classes: Vec<ClassId>) -> Result<Self, EvalError> {
        check_unique(&classes)?;
        let k = classes.len();
        Ok(ConfusionMatrix {
            classes,
            counts: vec![vec![0; k]; k],
        })
    }

    pub fn from_rows(classes: Vec<ClassId>, counts: Vec<Vec<u64>>) -> Result<Self, EvalError> {
        check_unique(&classes)?;
        let k = classes.len();
        if counts.len() != k || counts.iter().any(|r| r.len() != k) {
            return Err(EvalError::NotSquare(k));
        }
        Ok(ConfusionMatrix { classes, counts })
    }

    pub fn classes(&self) -> &[ClassId] {
        &self.classes
    }

    pub fn rows(&self) -> &[Vec<u64>] {
        &self.counts
    }

    fn position(&self, class: ClassId) -> Result<usize, EvalError> {
        self.classes
            .iter()
            .position(|c| *c == class)
            .ok_or(EvalError::UnknownLabel(class))
    }

    pub fn record(&mut self, truth: ClassId, predicted: ClassId) -> Result<(), EvalError> {
        let i = self.position(truth)?;
        let j = self.position(predicted)?;
        self.counts[i][j] += 1;
        Ok(())
    }

    pub fn get(&self, truth: ClassId, predicted: ClassId) -> u64 {
        match (self.position(truth), self.position(predicted)) {
            (Ok(i), Ok(j)) => self.counts[i][j],
            _ => 0,
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes.len()).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sum(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    pub fn col_sum(&self, j: usize) -> u64 {
        self.counts.iter().map(|r| r[j]).sum()
    }

    /// Reorders rows and columns to `order`, which must be a permutation
    /// of the current classes.
    pub fn permuted(&self, order: &[ClassId]) -> Result<ConfusionMatrix, EvalError> {
        if order.len() != self.classes.len() {
            return Err(EvalError::BadPermutation);
        }
        check_unique(order)?;
        let idx: Vec<usize> = order
            .iter()
            .map(|c| self.position(*c).map_err(|_| EvalError::BadPermutation))
            .collect::<Result<_, _>>()?;
        let counts = idx
            .iter()
            .map(|&i| idx.iter().map(|&j| self.counts[i][j]).collect())
            .collect();
        Ok(ConfusionMatrix {
            classes: order.to_vec(),
            counts,
        })
    }
}

fn check_unique(classes: &[ClassId]) -> Result<(), EvalError> {
    for (i, c) in classes.iter().enumerate() {
        if classes[..i].contains(c) {
            return Err(EvalError::DuplicateClass(*c));
        }
    }
    Ok(())
}

pub fn confusion_matrix(
    predictions: &[ClassId],
    truths: &[ClassId],
    class_order: &[ClassId],
) -> Result<ConfusionMatrix, EvalError> {
    if predictions.len() != truths.len() {
        return Err(EvalError::LengthMismatch(predictions.len(), truths.len()));
    }
    let mut m = ConfusionMatrix::zeros(class_order.to_vec())?;
    for (p, t) in predictions.iter().zip(truths) {
        m.record(*t, *p)?;
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: ClassId,
    pub support: u64,
    pub predicted: u64,
    pub correct: u64,
    pub precision: f64,
    /// Top-1 accuracy of the class row.
    pub recall: f64,
    pub f1: f64,
    /// Set when a zero denominator forced a metric to 0.
    pub undefined: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: u64,
    pub correct: u64,
    pub accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
    /// Unweighted mean of per-class F1, negative class included.
    pub macro_f1: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss: Option<f64>,
}

impl EvalReport {
    pub fn class(&self, class: ClassId) -> Option<&ClassMetrics> {
        self.per_class.iter().find(|m| m.class == class)
    }
}

pub fn metrics(matrix: &ConfusionMatrix) -> Result<EvalReport, EvalError> {
    let n = matrix.total();
    if n == 0 {
        return Err(EvalError::Empty);
    }
    let correct = matrix.trace();
    let per_class: Vec<ClassMetrics> = matrix
        .classes()
        .iter()
        .enumerate()
        .map(|(k, &class)| {
            let tp = matrix.rows()[k][k];
            let support = matrix.row_sum(k);
            let predicted = matrix.col_sum(k);
            let mut undefined = false;
            let precision = if predicted == 0 {
                undefined = true;
                0.0
            } else {
                tp as f64 / predicted as f64
            };
            let recall = if support == 0 {
                undefined = true;
                0.0
            } else {
                tp as f64 / support as f64
            };
            // 2PR/(P+R) == 2tp / (support + predicted)
            let f1 = if support + predicted == 0 || tp == 0 {
                0.0
            } else {
                2.0 * tp as f64 / (support + predicted) as f64
            };
            ClassMetrics {
                class,
                support,
                predicted,
                correct: tp,
                precision,
                recall,
                f1,
                undefined,
            }
        })
        .collect();
    let macro_f1 = per_class.iter().map(|m| m.f1).sum::<f64>() / per_class.len() as f64;
    Ok(EvalReport {
        n,
        correct,
        accuracy: correct as f64 / n as f64,
        per_class,
        macro_f1,
        loss: None,
    })
}

/// Per-record outcome of [`evaluate_split`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordPrediction {
    pub id: String,
    pub truth: ClassId,
    pub predicted: ClassId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitEvaluation {
    pub report: EvalReport,
    pub matrix: ConfusionMatrix,
    pub predictions: Vec<RecordPrediction>,
    /// Records skipped because their image could not be loaded, with the reason.
    pub missing: Vec<(String, String)>,
}

/// Predicts every accepted record of `split` (all accepted records when
/// `None`) without augmentation. Unloadable records are reported and skipped.
pub fn evaluate_split(
    checkpoint: &Checkpoint,
    manifest: &Manifest,
    blobs: &BlobStore,
    split: Option<Split>,
) -> Result<SplitEvaluation, EvalError> {
    let name = split.map(Split::as_str).unwrap_or("all");
    let listed = manifest
        .accepted()
        .filter(|r| split.is_none() || r.split == split)
        .count();
    if listed == 0 {
        return Err(EvalError::EmptySplit(name.to_string()));
    }
    let (samples, missing) = load_split(manifest, blobs, split, checkpoint.model.arch.input_size);
    for (id, why) in &missing {
        log::warn!("skipping {id}: {why}");
    }
    if samples.is_empty() {
        return Err(EvalError::NothingLoaded(listed));
    }
    let (loss, preds) = predict_parallel(checkpoint, &samples)?;
    let order = ClassId::ALL.to_vec();
    let mut matrix = ConfusionMatrix::zeros(order)?;
    let mut predictions = Vec::with_capacity(samples.len());
    for (s, &p) in samples.iter().zip(&preds) {
        let truth = ClassId::from_index(s.label).ok_or(EvalError::Predict(format!("label {}", s.label)))?;
        let predicted = ClassId::from_index(p).ok_or(EvalError::Predict(format!("class {p}")))?;
        matrix.record(truth, predicted)?;
        predictions.push(RecordPrediction {
            id: s.id.clone(),
            truth,
            predicted,
        });
    }
    let mut report = metrics(&matrix)?;
    report.loss = Some(loss);
    Ok(SplitEvaluation {
        report,
        matrix,
        predictions,
        missing,
    })
}

/// Mean weighted loss and predicted class indices, fanned out over threads.
fn predict_parallel(checkpoint: &Checkpoint, samples: &[Sample]) -> Result<(f64, Vec<usize>), EvalError> {
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    let chunk = samples.len().div_ceil(threads).max(1);
    let bs = checkpoint.config.batch_size.max(1);
    let parts: Vec<_> = std::thread::scope(|scope| {
        let handles: Vec<_> = samples
            .chunks(chunk)
            .map(|part| {
                scope.spawn(move || {
                    evaluate_samples(&checkpoint.model, part, &checkpoint.norm, &checkpoint.weights, bs)
                        .map(|(loss, _, p)| (loss * part.len() as f64, p))
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("evaluation thread")).collect()
    });
    let mut total = 0.0;
    let mut preds = Vec::with_capacity(samples.len());
    for part in parts {
        let (loss, p) = part.map_err(|e| EvalError::Predict(e.to_string()))?;
        total += loss;
        preds.extend(p);
    }
    Ok((total / samples.len() as f64, preds))
}

/// Renders the matrix with F1 and Top-1 columns, percentages to two
/// decimals and F1 to four.
pub struct MatrixTable<'a> {
    pub matrix: &'a ConfusionMatrix,
    pub report: &'a EvalReport,
}

impl fmt::Display for MatrixTable<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let classes = self.matrix.classes();
        write!(f, "{:<16}", "true \\ pred")?;
        for c in classes {
            write!(f, " {:>6}", abbreviate(*c))?;
        }
        writeln!(f, " {:>7} {:>8}", "F1", "Top-1")?;
        for (i, c) in classes.iter().enumerate() {
            write!(f, "{:<16}", c.as_str())?;
            for v in &self.matrix.rows()[i] {
                write!(f, " {v:>6}")?;
            }
            let m = &self.report.per_class[i];
            writeln!(f, " {:>7.4} {:>7.2}%", m.f1, 100.0 * m.recall)?;
        }
        writeln!(
            f,
            "accuracy {:.2}% ({}/{}), macro F1 {:.4}",
            100.0 * self.report.accuracy,
            self.report.correct,
            self.report.n,
            self.report.macro_f1
        )?;
        if let Some(loss) = self.report.loss {
            writeln!(f, "loss {loss:.4}")?;
        }
        Ok(())
    }
}

fn abbreviate(c: ClassId) -> &'static str {
    match c {
        ClassId::AnimalOnRoad => "animal",
        ClassId::Collapse => "collap",
        ClassId::VehicleCrash => "crash",
        ClassId::Fire => "fire",
        ClassId::Flooding => "flood",
        ClassId::Landslide => "slide",
        ClassId::Treefall => "tree",
        ClassId::Snow => "snow",
        ClassId::Negative => "neg",
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reference;

    #[test]
    fn perfect_predictions_are_diagonal() {
        let labels = [ClassId::Fire, ClassId::Snow, ClassId::Snow, ClassId::Negative];
        let m = confusion_matrix(&labels, &labels, &ClassId::ALL).unwrap();
        assert_eq!(m.trace(), 4);
        assert_eq!(m.total(), 4);
        assert_eq!(metrics(&m).unwrap().accuracy, 1.0);
    }

    #[test]
    fn single_off_diagonal() {
        let m = confusion_matrix(&[ClassId::Negative], &[ClassId::Fire], &ClassId::ALL).unwrap();
        assert_eq!(m.get(ClassId::Fire, ClassId::Negative), 1);
        assert_eq!(m.trace(), 0);
    }

    #[test]
    fn replaying_prediction_multiset_rebuilds_matrix() {
        let reference = reference::full_test_matrix();
        let mut truths = Vec::new();
        let mut preds = Vec::new();
        for (i, t) in reference.classes().iter().enumerate() {
            for (j, p) in reference.classes().iter().enumerate() {
                for _ in 0..reference.rows()[i][j] {
                    truths.push(*t);
                    preds.push(*p);
                }
            }
        }
        let rebuilt = confusion_matrix(&preds, &truths, reference.classes()).unwrap();
        assert_eq!(rebuilt, reference);
    }

    #[test]
    fn unknown_label_and_length_mismatch() {
        let order = [ClassId::Fire, ClassId::Snow];
        assert_eq!(
            confusion_matrix(&[ClassId::Negative], &[ClassId::Fire], &order),
            Err(EvalError::UnknownLabel(ClassId::Negative))
        );
        assert_eq!(
            confusion_matrix(&[ClassId::Fire], &[], &order),
            Err(EvalError::LengthMismatch(1, 0))
        );
    }

    #[test]
    fn empty_matrix_has_no_metrics() {
        let m = ConfusionMatrix::zeros(ClassId::ALL.to_vec()).unwrap();
        assert_eq!(metrics(&m), Err(EvalError::Empty));
    }

    #[test]
    fn full_test_animal_and_fire_rows() {
        let r = metrics(&reference::full_test_matrix()).unwrap();
        let animal = r.class(ClassId::AnimalOnRoad).unwrap();
        assert_eq!((animal.support, animal.predicted, animal.correct), (135, 151, 129));
        assert!((animal.recall - 0.9556).abs() < 5e-5);
        assert!((animal.f1 - 0.9021).abs() < 5e-5);
        let fire = r.class(ClassId::Fire).unwrap();
        assert_eq!(fire.precision, 1.0);
        assert!((fire.recall - 0.97).abs() < 1e-12);
        assert!((fire.f1 - 0.9848).abs() < 5e-5);
    }

    #[test]
    fn geo_test_snow_row() {
        let r = metrics(&reference::geo_test_matrix()).unwrap();
        let snow = r.class(ClassId::Snow).unwrap();
        assert_eq!((snow.correct, snow.support), (112, 115));
        assert!((100.0 * snow.recall - 97.39).abs() < 5e-3);
        assert!((snow.f1 - 0.9782).abs() < 5e-5);
        // The macro mean of the geo-test F1 column matches the headline
        // test F1 of that model.
        assert!((r.macro_f1 - 0.9169).abs() < 5e-5);
    }

    #[test]
    fn f1_is_harmonic_mean() {
        let r = metrics(&reference::full_test_matrix()).unwrap();
        for m in &r.per_class {
            let h = 2.0 * m.precision * m.recall / (m.precision + m.recall);
            assert!((h - m.f1).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_denominators_flagged() {
        let m = ConfusionMatrix::from_rows(
            vec![ClassId::Fire, ClassId::Snow],
            vec![vec![3, 0], vec![0, 0]],
        )
        .unwrap();
        let r = metrics(&m).unwrap();
        let snow = r.class(ClassId::Snow).unwrap();
        assert!(snow.undefined);
        assert_eq!(snow.f1, 0.0);
        assert!(!r.class(ClassId::Fire).unwrap().undefined);
    }

    #[test]
    fn permutation_keeps_accuracy_and_macro_f1() {
        let m = reference::full_test_matrix();
        let mut order = m.classes().to_vec();
        order.reverse();
        order.swap(1, 4);
        let p = m.permuted(&order).unwrap();
        let (a, b) = (metrics(&m).unwrap(), metrics(&p).unwrap());
        assert_eq!(a.correct, b.correct);
        assert!((a.macro_f1 - b.macro_f1).abs() < 1e-12);
        assert_eq!(p.get(ClassId::Negative, ClassId::Flooding), 21);
    }

    #[test]
    fn table_rendering_mentions_every_class() {
        let m = reference::geo_test_matrix();
        let r = metrics(&m).unwrap();
        let text = MatrixTable { matrix: &m, report: &r }.to_string();
        assert!(text.contains("97.39%"));
        assert!(text.contains("0.9782"));
        assert!(text.contains("287/309"));
    }
}
