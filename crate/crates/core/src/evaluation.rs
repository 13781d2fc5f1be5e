//! Scoring of predictions against ground truth: per-class one-vs-rest
//! precision/recall/F1, macro averaging, and run-vs-run comparison
//! tables.

use std::collections::BTreeMap;

use crate::labels::ClassLabel;
use crate::vlm::ClassificationResult;

#[derive(Debug, thiserror::Error)]
pub enum EvaluationError {
    #[error("no predictions to score")]
    EmptyPredictions,
    #[error("reports cover different class sets")]
    ClassSetMismatch,
    #[error("ground truth line {line} is malformed: {text:?}")]
    MalformedGroundTruth { line: usize, text: String },
    #[error("prediction for unknown id {0:?}")]
    UnknownQuery(String),
}

/// One scored item. `predicted` is None when the model's text did not
/// normalize to any canonical class.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPrediction {
    pub query_id: String,
    pub truth: ClassLabel,
    pub predicted: Option<ClassLabel>,
}

/// One-vs-rest counts and the derived rates for a single class.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ClassMetrics {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl ClassMetrics {
    /// Zero-denominator convention: a rate with an empty denominator is
    /// 0, and F1 is 0 when precision + recall is 0.
    fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let precision = if tp + fp > 0 {
            tp as f64 / (tp + fp) as f64
        } else {
            0.0
        };
        let recall = if tp + fn_ > 0 {
            tp as f64 / (tp + fn_) as f64
        } else {
            0.0
        };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        ClassMetrics {
            true_positives: tp,
            false_positives: fp,
            false_negatives: fn_,
            precision,
            recall,
            f1,
        }
    }

    /// Items of this class in the ground truth.
    pub fn support(&self) -> usize {
        self.true_positives + self.false_negatives
    }
}

/// Provenance recorded alongside the scores.
#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct RunMetadata {
    pub shots: usize,
    pub processed: bool,
    pub seed: u64,
}

/// Full scorecard: metrics for every canonical class plus the macro
/// average.
///
/// The macro average is the unweighted mean of per-class F1 over the
/// classes represented in the ground truth. On a run covering all 12
/// classes that is exactly the mean of the 12 per-class values; classes
/// a scene never contained would otherwise contribute vacuous zeros.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Report {
    pub per_class: BTreeMap<ClassLabel, ClassMetrics>,
    pub macro_f1: f64,
    pub metadata: RunMetadata,
}

/// Per-class F1 differences between two reports.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaTable {
    pub per_class: BTreeMap<ClassLabel, f64>,
    pub macro_delta: f64,
}

/// One-vs-rest tally over all canonical classes. An unparseable
/// prediction is a false negative for the true class and a false
/// positive for no class.
pub fn confusion(
    preds: &[LabeledPrediction],
) -> Result<BTreeMap<ClassLabel, (usize, usize, usize)>, EvaluationError> {
    if preds.is_empty() {
        return Err(EvaluationError::EmptyPredictions);
    }
    let mut counts: BTreeMap<ClassLabel, (usize, usize, usize)> = ClassLabel::ALL
        .iter()
        .map(|&l| (l, (0usize, 0usize, 0usize)))
        .collect();
    for pred in preds {
        match pred.predicted {
            Some(p) if p == pred.truth => counts.get_mut(&p).unwrap().0 += 1,
            Some(p) => {
                counts.get_mut(&p).unwrap().1 += 1;
                counts.get_mut(&pred.truth).unwrap().2 += 1;
            }
            None => counts.get_mut(&pred.truth).unwrap().2 += 1,
        }
    }
    Ok(counts)
}

/// Unweighted mean. Callers feeding a full 12-value column get the plain
/// Avg-row arithmetic.
pub fn macro_f1(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Builds the scorecard from raw predictions.
pub fn f1_report(
    preds: &[LabeledPrediction],
    metadata: RunMetadata,
) -> Result<Report, EvaluationError> {
    let counts = confusion(preds)?;
    let per_class: BTreeMap<ClassLabel, ClassMetrics> = counts
        .into_iter()
        .map(|(label, (tp, fp, fn_))| (label, ClassMetrics::from_counts(tp, fp, fn_)))
        .collect();
    let supported: Vec<f64> = per_class
        .values()
        .filter(|m| m.support() > 0)
        .map(|m| m.f1)
        .collect();
    Ok(Report {
        macro_f1: macro_f1(&supported),
        per_class,
        metadata,
    })
}

/// Per-class and macro F1 differences, a - b.
pub fn compare_runs(a: &Report, b: &Report) -> Result<DeltaTable, EvaluationError> {
    if a.per_class.len() != b.per_class.len()
        || a.per_class.keys().zip(b.per_class.keys()).any(|(x, y)| x != y)
    {
        return Err(EvaluationError::ClassSetMismatch);
    }
    let per_class = a
        .per_class
        .iter()
        .map(|(&label, ma)| (label, ma.f1 - b.per_class[&label].f1))
        .collect();
    Ok(DeltaTable {
        per_class,
        macro_delta: a.macro_f1 - b.macro_f1,
    })
}

/// Parses ground truth lines of the form "track_id,label". Blank lines
/// and #-comments are skipped; labels go through alias normalization.
pub fn parse_ground_truth(text: &str) -> Result<Vec<(String, ClassLabel)>, EvaluationError> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (id, label_text) =
            line.split_once(',')
                .ok_or_else(|| EvaluationError::MalformedGroundTruth {
                    line: idx + 1,
                    text: line.to_string(),
                })?;
        let label = crate::labels::normalize_label(label_text).ok_or_else(|| {
            EvaluationError::MalformedGroundTruth {
                line: idx + 1,
                text: label_text.trim().to_string(),
            }
        })?;
        out.push((id.trim().to_string(), label));
    }
    Ok(out)
}

/// Joins classifier output onto ground truth by query id. Every truth
/// row yields one LabeledPrediction (missing predictions count as
/// unparseable); a prediction whose id has no truth row is an error.
pub fn join_predictions(
    results: &[ClassificationResult],
    truth: &[(String, ClassLabel)],
) -> Result<Vec<LabeledPrediction>, EvaluationError> {
    let mut by_id: BTreeMap<&str, Option<ClassLabel>> = BTreeMap::new();
    for r in results {
        if !truth.iter().any(|(id, _)| id == &r.query_id) {
            return Err(EvaluationError::UnknownQuery(r.query_id.clone()));
        }
        by_id.insert(&r.query_id, r.label);
    }
    Ok(truth
        .iter()
        .map(|(id, label)| LabeledPrediction {
            query_id: id.clone(),
            truth: *label,
            predicted: by_id.get(id.as_str()).copied().flatten(),
        })
        .collect())
}

/// Aligned text table: one row per canonical class plus the Avg row, one
/// F1 column per named report.
pub fn format_text_table(columns: &[(&str, &Report)]) -> String {
    let name_width = ClassLabel::ALL
        .iter()
        .map(|l| l.as_str().len())
        .max()
        .unwrap_or(0)
        .max("Avg".len());
    let mut out = String::new();
    out.push_str(&format!("{:<name_width$}", "Class"));
    for (name, _) in columns {
        out.push_str(&format!("  {name:>10}"));
    }
    out.push('\n');
    for &label in ClassLabel::ALL.iter() {
        out.push_str(&format!("{:<name_width$}", label.as_str()));
        for (_, report) in columns {
            out.push_str(&format!("  {:>10.2}", report.per_class[&label].f1));
        }
        out.push('\n');
    }
    out.push_str(&format!("{:<name_width$}", "Avg"));
    for (_, report) in columns {
        out.push_str(&format!("  {:>10.2}", report.macro_f1));
    }
    out.push('\n');
    out
}

/// Processed-vs-original comparison rendering, one row per class with
/// both scores and the difference.
pub fn format_delta_table(processed: &Report, original: &Report) -> Result<String, EvaluationError> {
    let delta = compare_runs(processed, original)?;
    let name_width = ClassLabel::ALL
        .iter()
        .map(|l| l.as_str().len())
        .max()
        .unwrap_or(0)
        .max("Avg".len());
    let mut out = String::new();
    out.push_str(&format!(
        "{:<name_width$}  {:>10}  {:>10}  {:>7}\n",
        "Class", "Processed", "Original", "Delta"
    ));
    for &label in ClassLabel::ALL.iter() {
        out.push_str(&format!(
            "{:<name_width$}  {:>10.2}  {:>10.2}  {:>+7.2}\n",
            label.as_str(),
            processed.per_class[&label].f1,
            original.per_class[&label].f1,
            delta.per_class[&label],
        ));
    }
    out.push_str(&format!(
        "{:<name_width$}  {:>10.2}  {:>10.2}  {:>+7.2}\n",
        "Avg", processed.macro_f1, original.macro_f1, delta.macro_delta
    ));
    Ok(out)
}
