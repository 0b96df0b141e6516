//! MAP segmentation of a fitted model and scoring of unsupervised label
//! sequences against ground truth: optimal label matching, confusion
//! matrices and per-class false positive / false negative rates.

use nalgebra::DMatrix;
use pathfinding::kuhn_munkres::kuhn_munkres;
use pathfinding::matrix::Matrix as PfMatrix;

use crate::error::{Error, Result};
use crate::logistic;
use crate::model::{argmax_row, MrhlpModel, PosteriorMatrix, Segmentation, TimeSeries};

/// Class sizes up to which label matching enumerates every permutation.
/// Beyond this the equivalent maximum-weight assignment is solved instead.
pub const EXHAUSTIVE_MATCHING_LIMIT: usize = 8;

/// Hard cap on the number of distinct classes accepted by `match_labels`.
pub const MAX_CLASSES: usize = 12;

/// True labels accompanying a series, one class index per sample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledGroundTruth {
    pub labels: Vec<usize>,
}

/// Outcome of matching predicted labels against ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// Fraction of samples correct under the best label map.
    pub accuracy: f64,
    /// Distinct class values, sorted; indices below refer to this list.
    pub classes: Vec<usize>,
    /// Winning label map: predicted class index -> matched class index.
    pub permutation: Vec<usize>,
    /// Count matrix after relabeling: rows = true, columns = obtained.
    pub confusion: Vec<Vec<usize>>,
    /// Per-class false positive rates, percent.
    pub fp_rates: Vec<f64>,
    /// Per-class false negative rates, percent.
    pub fn_rates: Vec<f64>,
    /// False when the class never appears in the obtained labels
    /// (FP denominator zero).
    pub fp_defined: Vec<bool>,
    /// False when the class never appears in the truth (FN denominator
    /// zero).
    pub fn_defined: Vec<bool>,
}

/// MAP segmentation: each sample gets the regime with the highest prior
/// probability under the fitted weights, ties broken toward the lowest
/// index. With degree-one logistic covariates the result is a sequence of
/// contiguous runs.
pub fn map_segment(series: &TimeSeries, model: &MrhlpModel) -> Result<Segmentation> {
    series.validate()?;
    model.validate()?;
    if model.dim() != series.dim() {
        return Err(Error::DimensionMismatch {
            context: "model dimension vs series dimension",
            expected: model.dim(),
            actual: series.dim(),
        });
    }
    let v = logistic::build_covariates(&series.t, model.hyper.u);
    let pi = logistic::priors(&v, &model.weights)?;
    Ok(Segmentation::from_pi_trace(pi))
}

/// Per-row argmax of the responsibilities, ties toward the lowest index.
/// A diagnostic companion to [`map_segment`].
pub fn posterior_segment(tau: &PosteriorMatrix) -> Vec<usize> {
    (0..tau.tau.nrows()).map(|i| argmax_row(&tau.tau, i)).collect()
}

/// Contingency counts: `counts[i][j]` = samples with truth class index i
/// and predicted class index j, over the union alphabet `classes`.
fn contingency(pred: &[usize], truth: &[usize]) -> (Vec<usize>, Vec<Vec<usize>>) {
    let mut classes: Vec<usize> = truth.iter().chain(pred.iter()).copied().collect();
    classes.sort_unstable();
    classes.dedup();
    let idx = |label: usize| classes.binary_search(&label).unwrap();
    let m = classes.len();
    let mut counts = vec![vec![0usize; m]; m];
    for (&p, &t) in pred.iter().zip(truth) {
        counts[idx(t)][idx(p)] += 1;
    }
    (classes, counts)
}

/// Exhaustive search over all permutations of the predicted classes,
/// maximizing the matched diagonal. Returns (best map, matched count).
fn match_exhaustive(counts: &[Vec<usize>]) -> (Vec<usize>, usize) {
    let m = counts.len();
    let mut perm: Vec<usize> = (0..m).collect();
    let mut best_perm = perm.clone();
    let mut best_score = 0;
    // Heap's algorithm, iterative.
    let mut stack = vec![0usize; m];
    let eval = |perm: &[usize], best_perm: &mut Vec<usize>, best_score: &mut usize| {
        let score: usize = (0..m).map(|j| counts[perm[j]][j]).sum();
        if score > *best_score {
            *best_score = score;
            *best_perm = perm.to_vec();
        }
    };
    eval(&perm, &mut best_perm, &mut best_score);
    let mut i = 1;
    while i < m {
        if stack[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(stack[i], i);
            }
            eval(&perm, &mut best_perm, &mut best_score);
            stack[i] += 1;
            i = 1;
        } else {
            stack[i] = 0;
            i += 1;
        }
    }
    // best_perm[j] is the truth index matched to predicted index j.
    (best_perm, best_score)
}

/// Maximum-weight assignment on the contingency matrix; exact and
/// equivalent to the exhaustive search.
fn match_assignment(counts: &[Vec<usize>]) -> (Vec<usize>, usize) {
    let m = counts.len();
    // Row player = predicted class, column player = truth class.
    let weights = PfMatrix::from_fn(m, m, |(j, i)| counts[i][j] as i64);
    let (score, assignment) = kuhn_munkres(&weights);
    (assignment, score as usize)
}

/// Matches predicted labels to ground truth over all label maps, then
/// scores accuracy, the confusion matrix and per-class FP/FN rates under
/// the winning map.
///
/// The two sequences may use different label alphabets; matching runs on
/// the sorted union. Exhaustive permutation search is used up to
/// [`EXHAUSTIVE_MATCHING_LIMIT`] classes, the equivalent assignment
/// problem above.
pub fn match_labels(pred: &[usize], truth: &[usize]) -> Result<EvalReport> {
    if pred.len() != truth.len() {
        return Err(Error::LengthMismatch {
            left: pred.len(),
            right: truth.len(),
        });
    }
    if pred.is_empty() {
        return Err(Error::EmptySeries);
    }
    let (classes, counts) = contingency(pred, truth);
    if classes.len() > MAX_CLASSES {
        return Err(Error::TooManyClasses {
            classes: classes.len(),
            limit: MAX_CLASSES,
        });
    }
    let (permutation, matched) = if classes.len() <= EXHAUSTIVE_MATCHING_LIMIT {
        match_exhaustive(&counts)
    } else {
        match_assignment(&counts)
    };
    let n = pred.len();
    let accuracy = matched as f64 / n as f64;

    // Confusion after relabeling: predicted class j becomes permutation[j].
    let m = classes.len();
    let mut confusion = vec![vec![0usize; m]; m];
    for (i, row) in counts.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            confusion[i][permutation[j]] += c;
        }
    }
    let rates = fp_fn_rates(&confusion)?;

    Ok(EvalReport {
        accuracy,
        classes,
        permutation,
        confusion,
        fp_rates: rates.fp_rates,
        fn_rates: rates.fn_rates,
        fp_defined: rates.fp_defined,
        fn_defined: rates.fn_defined,
    })
}

/// Per-class error rates of a square confusion matrix (rows = true,
/// columns = obtained), in percent.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassRates {
    pub fp_rates: Vec<f64>,
    pub fn_rates: Vec<f64>,
    /// False where the column sum is zero and the FP rate reported as 0.
    pub fp_defined: Vec<bool>,
    /// False where the row sum is zero and the FN rate reported as 0.
    pub fn_defined: Vec<bool>,
}

/// For class k: FN rate = (row sum - diagonal) / row sum, FP rate =
/// (column sum - diagonal) / column sum, both as percentages. Classes
/// with a zero denominator report 0 and are flagged undefined.
pub fn fp_fn_rates(confusion: &[Vec<usize>]) -> Result<ClassRates> {
    let m = confusion.len();
    for row in confusion {
        if row.len() != m {
            return Err(Error::DimensionMismatch {
                context: "confusion matrix rows vs columns",
                expected: m,
                actual: row.len(),
            });
        }
    }
    let mut rates = ClassRates {
        fp_rates: vec![0.0; m],
        fn_rates: vec![0.0; m],
        fp_defined: vec![true; m],
        fn_defined: vec![true; m],
    };
    for (k, row) in confusion.iter().enumerate() {
        let row_sum: usize = row.iter().sum();
        let col_sum: usize = (0..m).map(|i| confusion[i][k]).sum();
        let diag = row[k];
        if row_sum == 0 {
            rates.fn_defined[k] = false;
        } else {
            rates.fn_rates[k] = 100.0 * (row_sum - diag) as f64 / row_sum as f64;
        }
        if col_sum == 0 {
            rates.fp_defined[k] = false;
        } else {
            rates.fp_rates[k] = 100.0 * (col_sum - diag) as f64 / col_sum as f64;
        }
    }
    Ok(rates)
}

/// Pools several per-sequence evaluations into one accuracy figure
/// (total correct over total samples).
pub fn pooled_accuracy(reports: &[(usize, EvalReport)]) -> f64 {
    let total: usize = reports.iter().map(|(n, _)| n).sum();
    if total == 0 {
        return 0.0;
    }
    let correct: f64 = reports
        .iter()
        .map(|(n, r)| r.accuracy * *n as f64)
        .sum();
    correct / total as f64
}

/// Internal hook for tests: expose both matching routes.
#[doc(hidden)]
pub fn matching_routes(pred: &[usize], truth: &[usize]) -> (f64, f64) {
    let (_, counts) = contingency(pred, truth);
    let n = pred.len() as f64;
    let (_, exhaustive) = match_exhaustive(&counts);
    let (_, assignment) = match_assignment(&counts);
    (exhaustive as f64 / n, assignment as f64 / n)
}

#[allow(unused)]
fn segmentation_to_matrix(seg: &Segmentation) -> DMatrix<f64> {
    seg.pi_trace.clone()
}
