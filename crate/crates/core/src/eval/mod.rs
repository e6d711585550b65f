//! Splitting, cross-validation, weighted metrics, confusion matrices, and
//! inter-annotator agreement.

mod report;

pub use report::{format_machine, format_table};

use crate::error::{Error, Result};
use crate::textprep::{Label, ALL_LABELS, NUM_CLASSES};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// 4x4 count matrix: rows are actual classes, columns predicted, in the
/// order NEGATIVE, NEUTRAL, POSITIVE, CONFLICT.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; NUM_CLASSES]; NUM_CLASSES],
}

impl ConfusionMatrix {
    pub fn from_counts(counts: [[u64; NUM_CLASSES]; NUM_CLASSES]) -> Self {
        ConfusionMatrix { counts }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..NUM_CLASSES).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sum(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    pub fn col_sum(&self, class: usize) -> u64 {
        (0..NUM_CLASSES).map(|r| self.counts[r][class]).sum()
    }
}

/// Tally predictions against actual labels.
pub fn confusion(preds: &[Label], actuals: &[Label]) -> Result<ConfusionMatrix> {
    if preds.len() != actuals.len() {
        return Err(Error::Input(format!(
            "{} predictions vs {} actual labels",
            preds.len(),
            actuals.len()
        )));
    }
    let mut cm = ConfusionMatrix::default();
    for (p, a) in preds.iter().zip(actuals) {
        cm.counts[a.index()][p.index()] += 1;
    }
    Ok(cm)
}

/// Accuracy plus per-class and support-weighted precision/recall/F1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub precision: [f64; NUM_CLASSES],
    pub recall: [f64; NUM_CLASSES],
    pub f1: [f64; NUM_CLASSES],
    pub weighted_precision: f64,
    pub weighted_recall: f64,
    pub weighted_f1: f64,
    pub support: [u64; NUM_CLASSES],
}

/// Derive the metrics report from a confusion matrix. Empty rows or columns
/// contribute zero for the affected class (the usual evaluation-tooling
/// convention); weighted averages use the row sums as supports, which makes
/// weighted recall identical to accuracy.
pub fn weighted_metrics(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Metrics("empty confusion matrix".into()));
    }
    let mut precision = [0.0; NUM_CLASSES];
    let mut recall = [0.0; NUM_CLASSES];
    let mut f1 = [0.0; NUM_CLASSES];
    let mut support = [0u64; NUM_CLASSES];
    for c in 0..NUM_CLASSES {
        let diag = cm.counts[c][c] as f64;
        let col = cm.col_sum(c) as f64;
        let row = cm.row_sum(c) as f64;
        support[c] = cm.row_sum(c);
        precision[c] = if col > 0.0 { diag / col } else { 0.0 };
        recall[c] = if row > 0.0 { diag / row } else { 0.0 };
        f1[c] = if precision[c] + recall[c] > 0.0 {
            2.0 * precision[c] * recall[c] / (precision[c] + recall[c])
        } else {
            0.0
        };
    }
    let weight = |xs: &[f64; NUM_CLASSES]| -> f64 {
        xs.iter()
            .zip(&support)
            .map(|(&x, &s)| x * s as f64)
            .sum::<f64>()
            / total as f64
    };
    Ok(MetricsReport {
        accuracy: cm.trace() as f64 / total as f64,
        precision,
        recall,
        f1,
        weighted_precision: weight(&precision),
        weighted_recall: weight(&recall),
        weighted_f1: weight(&f1),
        support,
    })
}

impl MetricsReport {
    /// Unweighted mean of several reports (used to aggregate CV folds).
    pub fn mean(reports: &[MetricsReport]) -> Result<MetricsReport> {
        if reports.is_empty() {
            return Err(Error::Metrics("no reports to aggregate".into()));
        }
        let n = reports.len() as f64;
        let mut out = MetricsReport {
            accuracy: 0.0,
            precision: [0.0; NUM_CLASSES],
            recall: [0.0; NUM_CLASSES],
            f1: [0.0; NUM_CLASSES],
            weighted_precision: 0.0,
            weighted_recall: 0.0,
            weighted_f1: 0.0,
            support: [0; NUM_CLASSES],
        };
        for r in reports {
            out.accuracy += r.accuracy / n;
            out.weighted_precision += r.weighted_precision / n;
            out.weighted_recall += r.weighted_recall / n;
            out.weighted_f1 += r.weighted_f1 / n;
            for c in 0..NUM_CLASSES {
                out.precision[c] += r.precision[c] / n;
                out.recall[c] += r.recall[c] / n;
                out.f1[c] += r.f1[c] / n;
                out.support[c] += r.support[c];
            }
        }
        Ok(out)
    }
}

/// Shuffled split of `n` items into train/validation index lists at
/// `ratio = (train, val)` parts; the validation side takes the remainder.
pub fn holdout_split(n: usize, ratio: (usize, usize), seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if ratio.0 == 0 || ratio.1 == 0 {
        return Err(Error::Split(format!(
            "ratio parts must be positive, got {}:{}",
            ratio.0, ratio.1
        )));
    }
    if n < NUM_CLASSES {
        return Err(Error::Split(format!(
            "cannot split {n} documents over {NUM_CLASSES} classes"
        )));
    }
    let mut indices: Vec<usize> = (0..n).collect();
    indices.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let train_count = n * ratio.0 / (ratio.0 + ratio.1);
    let val = indices.split_off(train_count);
    Ok((indices, val))
}

/// Partition of a dataset into k folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub folds: Vec<Vec<usize>>,
    pub stratified: bool,
    pub seed: u64,
}

impl FoldPlan {
    /// Indices of every fold except `fold` (the training side).
    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        let mut out = Vec::new();
        for (i, f) in self.folds.iter().enumerate() {
            if i != fold {
                out.extend_from_slice(f);
            }
        }
        out
    }
}

/// Split indices into k folds whose sizes differ by at most one.
///
/// Stratified mode deals the shuffled items class by class to a single
/// rotating fold pointer, which keeps both the global fold sizes and every
/// per-class count within one of each other.
pub fn kfold(labels: &[Label], k: usize, stratified: bool, seed: u64) -> Result<FoldPlan> {
    let n = labels.len();
    if k < 2 || k > n {
        return Err(Error::Split(format!("cannot make {k} folds from {n} documents")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![Vec::new(); k];
    if stratified {
        let mut cursor = 0usize;
        for class in ALL_LABELS {
            let mut members: Vec<usize> = (0..n).filter(|&i| labels[i] == class).collect();
            members.shuffle(&mut rng);
            for idx in members {
                folds[cursor % k].push(idx);
                cursor += 1;
            }
        }
    } else {
        let mut indices: Vec<usize> = (0..n).collect();
        indices.shuffle(&mut rng);
        for (pos, idx) in indices.into_iter().enumerate() {
            folds[pos % k].push(idx);
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(FoldPlan {
        k,
        folds,
        stratified,
        seed,
    })
}

/// Chance-corrected agreement between two annotators over the same items.
pub fn cohens_kappa(a: &[Label], b: &[Label]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Input(format!(
            "label sequences differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::Input("empty label sequences".into()));
    }
    let n = a.len() as f64;
    let observed = a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / n;
    let mut expected = 0.0;
    for class in ALL_LABELS {
        let pa = a.iter().filter(|&&x| x == class).count() as f64 / n;
        let pb = b.iter().filter(|&&x| x == class).count() as f64 / n;
        expected += pa * pb;
    }
    if (1.0 - expected).abs() < 1e-15 {
        return if (observed - 1.0).abs() < 1e-15 {
            Ok(1.0)
        } else {
            Err(Error::KappaUndefined)
        };
    }
    Ok((observed - expected) / (1.0 - expected))
}

/// Observed and expected agreement, for kappa reports.
pub fn agreement_components(a: &[Label], b: &[Label]) -> Result<(f64, f64)> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Input(format!(
            "label sequences differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len() as f64;
    let observed = a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / n;
    let mut expected = 0.0;
    for class in ALL_LABELS {
        let pa = a.iter().filter(|&&x| x == class).count() as f64 / n;
        let pb = b.iter().filter(|&&x| x == class).count() as f64 / n;
        expected += pa * pb;
    }
    Ok((observed, expected))
}
