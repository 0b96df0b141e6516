//! Domain types shared by every other module: the time series container,
//! hyperparameters, regime parameters, the full model, posterior matrices,
//! segmentations, and fit reports.
//!
//! All types are immutable value objects after construction and can be
//! shared or sent between threads freely.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Default minimum eigenvalue enforced on every regime covariance.
pub const DEFAULT_COV_FLOOR: f64 = 1e-6;

/// A regularly sampled multivariate time series: `n` observations of
/// dimension `d` with strictly increasing time stamps.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    /// Time stamps in seconds, strictly increasing, length `n`.
    pub t: Vec<f64>,
    /// Observations, one row per time stamp (`n x d`).
    pub y: DMatrix<f64>,
}

impl TimeSeries {
    /// Builds a validated series. Rejects empty input, non-increasing time
    /// stamps and non-finite entries, naming the offending index.
    pub fn new(t: Vec<f64>, y: DMatrix<f64>) -> Result<Self> {
        let series = TimeSeries { t, y };
        series.validate()?;
        Ok(series)
    }

    /// Re-checks every invariant of an already constructed series.
    pub fn validate(&self) -> Result<()> {
        if self.t.is_empty() || self.y.ncols() == 0 {
            return Err(Error::EmptySeries);
        }
        if self.y.nrows() != self.t.len() {
            return Err(Error::DimensionMismatch {
                context: "time series rows vs time stamps",
                expected: self.t.len(),
                actual: self.y.nrows(),
            });
        }
        for (i, &ti) in self.t.iter().enumerate() {
            if !ti.is_finite() {
                return Err(Error::NonFiniteValue { row: i, col: 0 });
            }
            if i > 0 && ti <= self.t[i - 1] {
                return Err(Error::NonIncreasingTime { index: i });
            }
        }
        for i in 0..self.y.nrows() {
            for j in 0..self.y.ncols() {
                if !self.y[(i, j)].is_finite() {
                    return Err(Error::NonFiniteValue { row: i, col: j });
                }
            }
        }
        Ok(())
    }

    /// Number of observations.
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// Observation dimension `d`.
    pub fn dim(&self) -> usize {
        self.y.ncols()
    }
}

/// Validates a series and passes it through unchanged. Equivalent to
/// [`TimeSeries::new`] for a series built field-by-field.
pub fn validate_series(series: TimeSeries) -> Result<TimeSeries> {
    series.validate()?;
    Ok(series)
}

/// Structural hyperparameters of the model: regime count, per-regime
/// polynomial degrees and logistic covariate degree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Hyperparams {
    /// Number of regimes `K` (>= 1).
    pub k: usize,
    /// Polynomial degree of each regime, length `K`.
    pub degrees: Vec<usize>,
    /// Degree of the time monomials feeding the logistic process.
    pub u: usize,
}

impl Hyperparams {
    /// All regimes share one polynomial degree.
    pub fn shared(k: usize, p: usize, u: usize) -> Self {
        Hyperparams {
            k,
            degrees: vec![p; k],
            u,
        }
    }

    /// One polynomial degree per regime.
    pub fn with_degrees(degrees: Vec<usize>, u: usize) -> Self {
        Hyperparams {
            k: degrees.len(),
            degrees,
            u,
        }
    }

    pub fn max_degree(&self) -> usize {
        self.degrees.iter().copied().max().unwrap_or(0)
    }

    /// True when every regime uses the same polynomial degree.
    pub fn shared_degree(&self) -> Option<usize> {
        let first = *self.degrees.first()?;
        self.degrees.iter().all(|&p| p == first).then_some(first)
    }

    /// Checks the invariants against a series of length `n`: design
    /// matrices must be square or over-determined.
    pub fn validate_for(&self, n: usize) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidHyperparams {
                reason: "regime count K must be >= 1".into(),
            });
        }
        if self.degrees.len() != self.k {
            return Err(Error::InvalidHyperparams {
                reason: format!("expected {} degrees, got {}", self.k, self.degrees.len()),
            });
        }
        for (k, &p) in self.degrees.iter().enumerate() {
            if p + 1 > n {
                return Err(Error::InvalidHyperparams {
                    reason: format!("degree {p} of regime {k} needs more than {n} samples"),
                });
            }
        }
        if self.u + 1 > n {
            return Err(Error::InvalidHyperparams {
                reason: format!("logistic degree {} needs more than {n} samples", self.u),
            });
        }
        Ok(())
    }
}

/// Parameters of one polynomial regression regime.
#[derive(Debug, Clone, PartialEq)]
pub struct RegimeParams {
    /// Regression coefficients, `(p_k + 1) x d`; column j drives channel j.
    pub coefficients: DMatrix<f64>,
    /// Noise covariance, `d x d`, symmetric positive definite.
    pub covariance: DMatrix<f64>,
}

impl RegimeParams {
    pub fn new(coefficients: DMatrix<f64>, covariance: DMatrix<f64>) -> Self {
        RegimeParams {
            coefficients,
            covariance,
        }
    }

    /// Polynomial degree of this regime.
    pub fn degree(&self) -> usize {
        self.coefficients.nrows().saturating_sub(1)
    }
}

/// Coefficients of the logistic process, one row per regime.
///
/// The softmax in the prior probabilities is invariant under adding a
/// constant row to all rows, so the last row is pinned to zero as the
/// reference class. Constructors enforce the constraint; matrices loaded
/// from files are rejected if it does not hold.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticWeights {
    /// `K x (u + 1)` coefficient matrix, row `K - 1` identically zero.
    pub w: DMatrix<f64>,
}

impl LogisticWeights {
    /// All-zero weights: every regime has equal prior at every time.
    pub fn zeros(k: usize, u: usize) -> Self {
        LogisticWeights {
            w: DMatrix::zeros(k, u + 1),
        }
    }

    /// Wraps a coefficient matrix, requiring the last row to be zero.
    pub fn new(w: DMatrix<f64>) -> Result<Self> {
        if w.nrows() == 0 || w.ncols() == 0 {
            return Err(Error::InvalidModel {
                reason: "logistic weight matrix must be non-empty".into(),
            });
        }
        let last = w.nrows() - 1;
        if (0..w.ncols()).any(|j| w[(last, j)] != 0.0) {
            return Err(Error::InvalidModel {
                reason: "last row of the logistic weights must be zero (reference class)".into(),
            });
        }
        Ok(LogisticWeights { w })
    }

    /// Subtracts the last row from every row, producing the canonical
    /// representation with a zero reference class. The prior probabilities
    /// are unchanged.
    pub fn canonicalize(mut w: DMatrix<f64>) -> Self {
        let last = w.nrows() - 1;
        let reference: DVector<f64> = w.row(last).transpose();
        for i in 0..w.nrows() {
            for j in 0..w.ncols() {
                w[(i, j)] -= reference[j];
            }
        }
        LogisticWeights { w }
    }

    pub fn num_regimes(&self) -> usize {
        self.w.nrows()
    }

    /// Logistic covariate degree `u`.
    pub fn degree(&self) -> usize {
        self.w.ncols() - 1
    }
}

/// The full parameter vector: logistic weights plus one regression/
/// covariance pair per regime, together with the hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MrhlpModel {
    pub hyper: Hyperparams,
    pub weights: LogisticWeights,
    pub regimes: Vec<RegimeParams>,
}

impl MrhlpModel {
    pub fn new(
        hyper: Hyperparams,
        weights: LogisticWeights,
        regimes: Vec<RegimeParams>,
    ) -> Result<Self> {
        let model = MrhlpModel {
            hyper,
            weights,
            regimes,
        };
        model.validate()?;
        Ok(model)
    }

    /// Observation dimension `d`.
    pub fn dim(&self) -> usize {
        self.regimes.first().map_or(0, |r| r.covariance.nrows())
    }

    pub fn validate(&self) -> Result<()> {
        if self.regimes.len() != self.hyper.k {
            return Err(Error::DimensionMismatch {
                context: "regimes vs K",
                expected: self.hyper.k,
                actual: self.regimes.len(),
            });
        }
        if self.weights.num_regimes() != self.hyper.k {
            return Err(Error::DimensionMismatch {
                context: "logistic weight rows vs K",
                expected: self.hyper.k,
                actual: self.weights.num_regimes(),
            });
        }
        if self.weights.degree() != self.hyper.u {
            return Err(Error::DimensionMismatch {
                context: "logistic weight columns vs u + 1",
                expected: self.hyper.u + 1,
                actual: self.weights.degree() + 1,
            });
        }
        let d = self.dim();
        if d == 0 {
            return Err(Error::InvalidModel {
                reason: "model must have at least one regime and channel".into(),
            });
        }
        for (k, regime) in self.regimes.iter().enumerate() {
            if regime.coefficients.nrows() != self.hyper.degrees[k] + 1 {
                return Err(Error::DimensionMismatch {
                    context: "coefficient rows vs degree + 1",
                    expected: self.hyper.degrees[k] + 1,
                    actual: regime.coefficients.nrows(),
                });
            }
            if regime.coefficients.ncols() != d || regime.covariance.nrows() != d {
                return Err(Error::DimensionMismatch {
                    context: "regime dimension vs d",
                    expected: d,
                    actual: regime.coefficients.ncols(),
                });
            }
            if regime.covariance.ncols() != regime.covariance.nrows() {
                return Err(Error::InvalidModel {
                    reason: format!("covariance of regime {k} is not square"),
                });
            }
            let sym_err = (&regime.covariance - regime.covariance.transpose()).abs().max();
            if sym_err > 1e-8 * (1.0 + regime.covariance.abs().max()) {
                return Err(Error::InvalidModel {
                    reason: format!("covariance of regime {k} is not symmetric"),
                });
            }
            if nalgebra::Cholesky::new(regime.covariance.clone()).is_none() {
                return Err(Error::NonPdCovariance { regime: k });
            }
        }
        Ok(())
    }
}

/// Posterior responsibilities from the E-step: `n x K`, rows sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorMatrix {
    pub tau: DMatrix<f64>,
}

impl PosteriorMatrix {
    pub fn new(tau: DMatrix<f64>) -> Result<Self> {
        let posterior = PosteriorMatrix { tau };
        posterior.validate()?;
        Ok(posterior)
    }

    pub fn validate(&self) -> Result<()> {
        for i in 0..self.tau.nrows() {
            let mut sum = 0.0;
            for k in 0..self.tau.ncols() {
                let v = self.tau[(i, k)];
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::InvalidModel {
                        reason: format!("responsibility ({i}, {k}) = {v} outside [0, 1]"),
                    });
                }
                sum += v;
            }
            if (sum - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidModel {
                    reason: format!("responsibility row {i} sums to {sum}"),
                });
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tau.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.tau.nrows() == 0
    }

    pub fn num_regimes(&self) -> usize {
        self.tau.ncols()
    }

    /// Column `k` as an owned weight vector.
    pub fn column(&self, k: usize) -> DVector<f64> {
        self.tau.column(k).into_owned()
    }
}

/// A segmentation: per-sample regime labels plus the prior-probability
/// trace they were derived from.
#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    /// Zero-based regime index per sample. File formats shift to 1-based.
    pub labels: Vec<usize>,
    /// `n x K` matrix of prior probabilities under the fitted weights.
    pub pi_trace: DMatrix<f64>,
}

impl Segmentation {
    /// Derives labels from a probability trace by row-wise argmax with
    /// lowest-index tie-breaking.
    pub fn from_pi_trace(pi_trace: DMatrix<f64>) -> Self {
        let labels = (0..pi_trace.nrows())
            .map(|i| argmax_row(&pi_trace, i))
            .collect();
        Segmentation { labels, pi_trace }
    }

    /// Run-length encoding of the label sequence: `(label, length)` pairs.
    pub fn runs(&self) -> Vec<(usize, usize)> {
        let mut runs: Vec<(usize, usize)> = Vec::new();
        for &label in &self.labels {
            match runs.last_mut() {
                Some((l, n)) if *l == label => *n += 1,
                _ => runs.push((label, 1)),
            }
        }
        runs
    }
}

/// Row-wise argmax with ties broken toward the lowest index.
pub(crate) fn argmax_row(m: &DMatrix<f64>, row: usize) -> usize {
    let mut best = 0;
    let mut best_val = m[(row, 0)];
    for k in 1..m.ncols() {
        if m[(row, k)] > best_val {
            best_val = m[(row, k)];
            best = k;
        }
    }
    best
}

/// Diagnostics from one EM fit: the winning restart's log-likelihood
/// trajectory and bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    /// Observed-data log-likelihood per iteration, starting at the
    /// initial parameters.
    pub loglik_history: Vec<f64>,
    /// True when the relative increment dropped below tolerance before
    /// the iteration cap.
    pub converged: bool,
    /// Completed EM iterations.
    pub iterations: usize,
    /// Penalized likelihood criterion of the final model.
    pub bic: f64,
    /// Which restart produced this fit.
    pub restart_index: usize,
    /// Base RNG seed of the whole fit.
    pub seed: u64,
    /// Iterations on which an empty component was re-seeded; these are
    /// exempt from the monotonicity guarantee.
    pub rescued_iterations: Vec<usize>,
    /// Non-fatal notes (for instance a series too short for the regime
    /// count).
    pub warnings: Vec<String>,
}

impl FitReport {
    /// Final log-likelihood of the trajectory.
    pub fn final_loglik(&self) -> f64 {
        *self.loglik_history.last().unwrap_or(&f64::NEG_INFINITY)
    }

    /// Indices `q` where `L(q+1) < L(q) - 1e-8 * (1 + |L(q)|)` and
    /// iteration `q + 1` was not an empty-component rescue.
    pub fn monotonicity_violations(&self) -> Vec<usize> {
        self.loglik_history
            .windows(2)
            .enumerate()
            .filter(|(q, w)| {
                w[1] < w[0] - 1e-8 * (1.0 + w[0].abs())
                    && !self.rescued_iterations.contains(&(q + 1))
            })
            .map(|(q, _)| q)
            .collect()
    }
}

/// Parameter counting convention for the BIC penalty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ParamCountMode {
    /// Exact count for the multivariate model:
    /// `sum_k d*(p_k+1) + K*d*(d+1)/2 + (K-1)*(u+1)`.
    #[default]
    General,
    /// Legacy univariate count `K*(p+4) - 2`, kept for compatibility with
    /// earlier single-channel tooling (meaningful for d = 1, u = 1 and a
    /// shared degree).
    UnivariateLegacy,
}

/// Number of free parameters of a model with the given hyperparameters
/// and observation dimension.
pub fn num_free_params(hyper: &Hyperparams, d: usize) -> usize {
    num_free_params_with_mode(hyper, d, ParamCountMode::General)
}

pub fn num_free_params_with_mode(hyper: &Hyperparams, d: usize, mode: ParamCountMode) -> usize {
    match mode {
        ParamCountMode::General => {
            let regression: usize = hyper.degrees.iter().map(|&p| d * (p + 1)).sum();
            let covariance = hyper.k * d * (d + 1) / 2;
            let logistic = (hyper.k - 1) * (hyper.u + 1);
            regression + covariance + logistic
        }
        ParamCountMode::UnivariateLegacy => {
            let p = hyper.degrees.first().copied().unwrap_or(0);
            (hyper.k * (p + 4)).saturating_sub(2)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    #[test]
    fn accepts_well_formed_series() {
        let y = dmatrix![1.0; 2.0; 3.0];
        let series = TimeSeries::new(vec![0.0, 1.0, 2.0], y).unwrap();
        assert_eq!(series.len(), 3);
        assert_eq!(series.dim(), 1);
    }

    #[test]
    fn rejects_non_increasing_time() {
        let y = dmatrix![1.0; 2.0; 3.0];
        let err = TimeSeries::new(vec![0.0, 1.0, 1.0], y).unwrap_err();
        match err {
            Error::NonIncreasingTime { index } => assert_eq!(index, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn rejects_non_finite_entry() {
        let mut y = DMatrix::zeros(6, 3);
        y[(4, 2)] = f64::NAN;
        let t: Vec<f64> = (0..6).map(|i| i as f64).collect();
        let err = TimeSeries::new(t, y).unwrap_err();
        match err {
            Error::NonFiniteValue { row, col } => {
                assert_eq!((row, col), (4, 2));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn rejects_empty_series() {
        let err = TimeSeries::new(vec![], DMatrix::zeros(0, 1)).unwrap_err();
        assert!(matches!(err, Error::EmptySeries));
    }

    #[test]
    fn free_param_count_examples() {
        // Single Gaussian: mean + variance.
        assert_eq!(num_free_params(&Hyperparams::shared(1, 0, 1), 1), 2);
        // Counted by enumeration: 3*3*3 + 3*6 + 2*2.
        assert_eq!(num_free_params(&Hyperparams::shared(3, 2, 1), 3), 49);
        // Counted by enumeration: 2*2*2 + 2*3 + 1*1.
        assert_eq!(num_free_params(&Hyperparams::shared(2, 1, 0), 2), 15);
    }

    #[test]
    fn legacy_count_matches_univariate_formula() {
        let h = Hyperparams::shared(3, 2, 1);
        assert_eq!(
            num_free_params_with_mode(&h, 1, ParamCountMode::UnivariateLegacy),
            3 * 6 - 2
        );
    }

    #[test]
    fn free_param_count_is_strictly_increasing() {
        for k in 2..5 {
            for p in 0..3 {
                for u in 0..3 {
                    for d in 1..4 {
                        let base = num_free_params(&Hyperparams::shared(k, p, u), d);
                        assert!(num_free_params(&Hyperparams::shared(k + 1, p, u), d) > base);
                        assert!(num_free_params(&Hyperparams::shared(k, p + 1, u), d) > base);
                        assert!(num_free_params(&Hyperparams::shared(k, p, u + 1), d) > base);
                        // Bumping a single regime's degree also increases the count.
                        let mut degrees = vec![p; k];
                        degrees[1] += 1;
                        assert!(
                            num_free_params(&Hyperparams::with_degrees(degrees, u), d) > base
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn logistic_weights_require_zero_reference_row() {
        let w = dmatrix![1.0, 2.0; 0.5, 0.0];
        assert!(LogisticWeights::new(w.clone()).is_err());
        let canon = LogisticWeights::canonicalize(w);
        assert_eq!(canon.w[(1, 0)], 0.0);
        assert_eq!(canon.w[(1, 1)], 0.0);
        assert_eq!(canon.w[(0, 0)], 0.5);
        assert_eq!(canon.w[(0, 1)], 2.0);
    }

    #[test]
    fn segmentation_breaks_ties_toward_lowest_index() {
        let pi = dmatrix![0.5, 0.5; 0.2, 0.8];
        let seg = Segmentation::from_pi_trace(pi);
        assert_eq!(seg.labels, vec![0, 1]);
        assert_eq!(seg.runs(), vec![(0, 1), (1, 1)]);
    }

    #[test]
    fn posterior_rows_must_sum_to_one() {
        assert!(PosteriorMatrix::new(dmatrix![0.3, 0.7; 0.5, 0.5]).is_ok());
        assert!(PosteriorMatrix::new(dmatrix![0.3, 0.6]).is_err());
        assert!(PosteriorMatrix::new(dmatrix![1.2, -0.2]).is_err());
    }

    #[test]
    fn report_monotonicity_helper_flags_drops() {
        let mut report = FitReport {
            loglik_history: vec![-10.0, -5.0, -5.5, -4.0],
            converged: true,
            iterations: 3,
            bic: 0.0,
            restart_index: 0,
            seed: 0,
            rescued_iterations: vec![],
            warnings: vec![],
        };
        assert_eq!(report.monotonicity_violations(), vec![1]);
        report.rescued_iterations.push(2);
        assert!(report.monotonicity_violations().is_empty());
    }
}
