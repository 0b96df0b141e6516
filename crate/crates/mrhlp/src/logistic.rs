//! The time-dependent logistic process: prior probabilities of each regime
//! as a softmax of polynomial functions of time, and the weighted
//! multinomial logistic regression sub-problem solved by Newton steps with
//! step-halving (IRLS).

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{LogisticWeights, PosteriorMatrix};

/// Covariate matrix of the logistic process: row i is the monomial
/// expansion `(1, s_i, ..., s_i^u)` of the rescaled time `s_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateMatrix {
    pub v: DMatrix<f64>,
}

impl CovariateMatrix {
    pub fn num_samples(&self) -> usize {
        self.v.nrows()
    }

    /// Covariate degree `u`.
    pub fn degree(&self) -> usize {
        self.v.ncols() - 1
    }
}

/// Affinely rescales time stamps to `[0, 1]`. A single time stamp maps
/// to 0. Raw seconds raised to a power would ill-condition every design
/// matrix; the affine map leaves the model class unchanged.
pub fn rescale_times(t: &[f64]) -> Vec<f64> {
    if t.is_empty() {
        return Vec::new();
    }
    let lo = t[0];
    let span = t[t.len() - 1] - lo;
    if span > 0.0 {
        t.iter().map(|&ti| (ti - lo) / span).collect()
    } else {
        vec![0.0; t.len()]
    }
}

/// Vandermonde-style monomial expansion of already rescaled times:
/// `n x (degree + 1)` with first column all ones.
pub(crate) fn monomials(scaled: &[f64], degree: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(scaled.len(), degree + 1);
    for (i, &s) in scaled.iter().enumerate() {
        let mut pow = 1.0;
        for j in 0..=degree {
            m[(i, j)] = pow;
            pow *= s;
        }
    }
    m
}

/// Builds the logistic covariates for raw time stamps (rescaled to
/// `[0, 1]` internally).
pub fn build_covariates(t: &[f64], u: usize) -> CovariateMatrix {
    let scaled = rescale_times(t);
    CovariateMatrix {
        v: monomials(&scaled, u),
    }
}

/// Log prior probabilities `log pi_k(s_i; w)`, computed with
/// max-subtraction so that large logits cannot overflow.
pub(crate) fn log_priors(v: &CovariateMatrix, w: &LogisticWeights) -> Result<DMatrix<f64>> {
    if v.v.ncols() != w.w.ncols() {
        return Err(Error::DimensionMismatch {
            context: "covariate columns vs logistic weight columns",
            expected: w.w.ncols(),
            actual: v.v.ncols(),
        });
    }
    let mut logits = &v.v * w.w.transpose(); // n x K
    for i in 0..logits.nrows() {
        let mut max = f64::NEG_INFINITY;
        for k in 0..logits.ncols() {
            max = max.max(logits[(i, k)]);
        }
        let mut sum = 0.0;
        for k in 0..logits.ncols() {
            sum += (logits[(i, k)] - max).exp();
        }
        let lse = max + sum.ln();
        for k in 0..logits.ncols() {
            logits[(i, k)] -= lse;
        }
    }
    Ok(logits)
}

/// Prior probabilities `pi_k(s_i; w)` of each regime at each covariate
/// row. Rows sum to one.
pub fn priors(v: &CovariateMatrix, w: &LogisticWeights) -> Result<DMatrix<f64>> {
    let mut lp = log_priors(v, w)?;
    for i in 0..lp.nrows() {
        let mut sum = 0.0;
        for k in 0..lp.ncols() {
            let p = lp[(i, k)].exp();
            lp[(i, k)] = p;
            sum += p;
        }
        for k in 0..lp.ncols() {
            lp[(i, k)] /= sum;
        }
    }
    Ok(lp)
}

/// The weighted multinomial log-likelihood
/// `Q_w(w) = sum_i sum_k tau_ik log pi_k(s_i; w)` maximized in the M-step.
pub fn q_w(v: &CovariateMatrix, tau: &PosteriorMatrix, w: &LogisticWeights) -> Result<f64> {
    let lp = log_priors(v, w)?;
    if tau.tau.nrows() != lp.nrows() || tau.tau.ncols() != lp.ncols() {
        return Err(Error::DimensionMismatch {
            context: "responsibilities vs covariates",
            expected: lp.nrows() * lp.ncols(),
            actual: tau.tau.nrows() * tau.tau.ncols(),
        });
    }
    let mut total = 0.0;
    for i in 0..lp.nrows() {
        for k in 0..lp.ncols() {
            let t = tau.tau[(i, k)];
            if t > 0.0 {
                total += t * lp[(i, k)];
            }
        }
    }
    Ok(total)
}

/// Analytic gradient of `Q_w` on the free block (rows `0..K-1`):
/// `g_k = sum_i (tau_ik - pi_ik) v_i`.
pub fn q_w_gradient(
    v: &CovariateMatrix,
    tau: &PosteriorMatrix,
    w: &LogisticWeights,
) -> Result<DMatrix<f64>> {
    let pi = priors(v, w)?;
    let k_free = w.num_regimes() - 1;
    let cols = v.v.ncols();
    let mut grad = DMatrix::zeros(k_free, cols);
    for i in 0..v.v.nrows() {
        for k in 0..k_free {
            let diff = tau.tau[(i, k)] - pi[(i, k)];
            for j in 0..cols {
                grad[(k, j)] += diff * v.v[(i, j)];
            }
        }
    }
    Ok(grad)
}

/// Options of the IRLS solver.
#[derive(Debug, Clone, PartialEq)]
pub struct IrlsOptions {
    /// Maximum Newton iterations.
    pub max_iter: usize,
    /// Stop when the max-norm of the regularized gradient falls below this.
    pub grad_tol: f64,
    /// Ridge penalty `ridge * ||w||^2 / 2` subtracted from the objective;
    /// keeps separable configurations bounded.
    pub ridge: f64,
    /// Halvings tried before declaring the current point converged.
    pub step_halvings: usize,
}

impl Default for IrlsOptions {
    fn default() -> Self {
        IrlsOptions {
            max_iter: 50,
            grad_tol: 1e-6,
            ridge: 1e-6,
            step_halvings: 20,
        }
    }
}

impl IrlsOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter == 0 || self.grad_tol <= 0.0 || self.ridge <= 0.0 || self.step_halvings == 0
        {
            return Err(Error::InvalidOptions {
                reason: "IRLS options must all be positive".into(),
            });
        }
        Ok(())
    }
}

/// Result of an IRLS solve.
#[derive(Debug, Clone)]
pub struct IrlsFit {
    /// Fitted weights, last row zero.
    pub weights: LogisticWeights,
    /// `Q_w` (without the ridge term) at the fitted weights.
    pub q_w: f64,
    /// Regularized objective after every accepted iterate, starting at
    /// the warm-start point.
    pub trajectory: Vec<f64>,
    /// Newton iterations performed.
    pub iterations: usize,
}

fn ridge_objective(
    v: &CovariateMatrix,
    tau: &PosteriorMatrix,
    w: &LogisticWeights,
    ridge: f64,
) -> Result<f64> {
    let free = w.w.rows(0, w.num_regimes() - 1);
    Ok(q_w(v, tau, w)? - 0.5 * ridge * free.norm_squared())
}

/// Maximizes the ridge-regularized `Q_w` over the free weight rows by
/// Newton steps with step-halving, warm-started at `w0`.
///
/// Guarantees `Q_w(result) >= Q_w(w0)`: if the regularizer pulled the
/// final iterate below the warm start in unregularized terms, the warm
/// start is returned unchanged.
pub fn irls_fit(
    v: &CovariateMatrix,
    tau: &PosteriorMatrix,
    w0: &LogisticWeights,
    opts: &IrlsOptions,
) -> Result<IrlsFit> {
    opts.validate()?;
    let k = w0.num_regimes();
    let n = v.num_samples();
    if tau.tau.nrows() != n {
        return Err(Error::DimensionMismatch {
            context: "responsibility rows vs covariate rows",
            expected: n,
            actual: tau.tau.nrows(),
        });
    }
    if tau.tau.ncols() != k {
        return Err(Error::DimensionMismatch {
            context: "responsibility columns vs regimes",
            expected: k,
            actual: tau.tau.ncols(),
        });
    }
    if k == 1 {
        // Single regime: log pi_1 = 0 everywhere, nothing to fit.
        return Ok(IrlsFit {
            weights: LogisticWeights::zeros(1, v.degree()),
            q_w: 0.0,
            trajectory: vec![0.0],
            iterations: 0,
        });
    }

    let cols = v.v.ncols();
    let dim = (k - 1) * cols;
    let mut w = w0.clone();
    let mut obj = ridge_objective(v, tau, &w, opts.ridge)?;
    let mut trajectory = vec![obj];
    let mut iterations = 0;

    for _ in 0..opts.max_iter {
        let pi = priors(v, &w)?;

        // Regularized gradient on the free block, flattened row-major.
        let mut grad = DVector::zeros(dim);
        for i in 0..n {
            for a in 0..k - 1 {
                let diff = tau.tau[(i, a)] - pi[(i, a)];
                for j in 0..cols {
                    grad[a * cols + j] += diff * v.v[(i, j)];
                }
            }
        }
        for a in 0..k - 1 {
            for j in 0..cols {
                grad[a * cols + j] -= opts.ridge * w.w[(a, j)];
            }
        }
        if grad.amax() <= opts.grad_tol {
            break;
        }

        // Negated Hessian: sum_i pi_ia (delta_ab - pi_ib) v_i v_i^T plus ridge.
        let mut neg_hess = DMatrix::zeros(dim, dim);
        for i in 0..n {
            for a in 0..k - 1 {
                for b in a..k - 1 {
                    let weight = if a == b {
                        pi[(i, a)] * (1.0 - pi[(i, a)])
                    } else {
                        -pi[(i, a)] * pi[(i, b)]
                    };
                    if weight == 0.0 {
                        continue;
                    }
                    for p in 0..cols {
                        for q in 0..cols {
                            let val = weight * v.v[(i, p)] * v.v[(i, q)];
                            neg_hess[(a * cols + p, b * cols + q)] += val;
                            if a != b {
                                neg_hess[(b * cols + q, a * cols + p)] += val;
                            }
                        }
                    }
                }
            }
        }
        for idx in 0..dim {
            neg_hess[(idx, idx)] += opts.ridge;
        }

        let direction = solve_with_ridge_boost(&neg_hess, &grad, opts.ridge)?;

        // Step-halving until the regularized objective increases.
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..=opts.step_halvings {
            let mut w_try = w.clone();
            for a in 0..k - 1 {
                for j in 0..cols {
                    w_try.w[(a, j)] += step * direction[a * cols + j];
                }
            }
            let obj_try = ridge_objective(v, tau, &w_try, opts.ridge)?;
            if obj_try > obj {
                w = w_try;
                obj = obj_try;
                trajectory.push(obj);
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        iterations += 1;
        if !accepted {
            // No ascent left along the Newton direction: converged here.
            break;
        }
    }

    let q_final = q_w(v, tau, &w)?;
    let q_start = q_w(v, tau, w0)?;
    if q_final < q_start {
        // The ridge shrank the iterate below the warm start in pure Q_w
        // terms; keep the warm start so callers always see Q_w(W) >= Q_w(W0).
        return Ok(IrlsFit {
            weights: w0.clone(),
            q_w: q_start,
            trajectory,
            iterations,
        });
    }
    Ok(IrlsFit {
        weights: w,
        q_w: q_final,
        trajectory,
        iterations,
    })
}

/// Solves `A x = b` for symmetric positive definite `A`, retrying with a
/// boosted diagonal when the factorization fails.
fn solve_with_ridge_boost(a: &DMatrix<f64>, b: &DVector<f64>, ridge: f64) -> Result<DVector<f64>> {
    if let Some(chol) = nalgebra::Cholesky::new(a.clone()) {
        return Ok(chol.solve(b));
    }
    let mut boost = ridge.max(1e-12) * 100.0;
    for _ in 0..8 {
        let mut boosted = a.clone();
        for i in 0..boosted.nrows() {
            boosted[(i, i)] += boost;
        }
        if let Some(chol) = nalgebra::Cholesky::new(boosted) {
            return Ok(chol.solve(b));
        }
        boost *= 100.0;
    }
    Err(Error::SingularHessian)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::dmatrix;

    fn uniform_tau(n: usize, k: usize) -> PosteriorMatrix {
        PosteriorMatrix::new(DMatrix::from_element(n, k, 1.0 / k as f64)).unwrap()
    }

    #[test]
    fn covariates_degree_zero_is_column_of_ones() {
        let v = build_covariates(&[0.0, 1.0, 2.0], 0);
        assert_eq!(v.v, DMatrix::from_element(3, 1, 1.0));
    }

    #[test]
    fn covariates_rescale_to_unit_interval() {
        let v = build_covariates(&[0.0, 5.0, 10.0], 1);
        assert_eq!(v.v, dmatrix![1.0, 0.0; 1.0, 0.5; 1.0, 1.0]);
        let v2 = build_covariates(&[0.0, 5.0, 10.0], 2);
        assert_eq!(v2.v, dmatrix![1.0, 0.0, 0.0; 1.0, 0.5, 0.25; 1.0, 1.0, 1.0]);
    }

    #[test]
    fn zero_weights_give_uniform_priors() {
        let v = build_covariates(&[0.0, 1.0, 2.0], 1);
        let pi = priors(&v, &LogisticWeights::zeros(3, 1)).unwrap();
        for i in 0..3 {
            for k in 0..3 {
                assert_relative_eq!(pi[(i, k)], 1.0 / 3.0, max_relative = 1e-14);
            }
        }
    }

    #[test]
    fn priors_match_scalar_sigmoid() {
        // K=2, u=1, w_1=(0,10), reference row zero. At s=1 the first
        // regime's probability is 1/(1+e^{-10}); at s=0 both are 1/2.
        let w = LogisticWeights::new(dmatrix![0.0, 10.0; 0.0, 0.0]).unwrap();
        let v = build_covariates(&[0.0, 1.0], 1);
        let pi = priors(&v, &w).unwrap();
        let expected = 1.0 / (1.0 + (-10.0f64).exp());
        assert_relative_eq!(pi[(1, 0)], expected, epsilon = 1e-10);
        assert_relative_eq!(pi[(1, 1)], 1.0 - expected, epsilon = 1e-10);
        assert_relative_eq!(pi[(0, 0)], 0.5, epsilon = 1e-14);
        assert_relative_eq!(pi[(0, 1)], 0.5, epsilon = 1e-14);
    }

    #[test]
    fn priors_rows_sum_to_one_under_extreme_logits() {
        let w = LogisticWeights::new(dmatrix![500.0, 400.0; -300.0, 200.0; 0.0, 0.0]).unwrap();
        let t: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let v = build_covariates(&t, 1);
        let pi = priors(&v, &w).unwrap();
        for i in 0..pi.nrows() {
            let sum: f64 = (0..pi.ncols()).map(|k| pi[(i, k)]).sum();
            assert!((sum - 1.0).abs() <= 1e-12, "row {i} sums to {sum}");
            for k in 0..pi.ncols() {
                assert!(pi[(i, k)].is_finite());
            }
        }
    }

    #[test]
    fn priors_invariant_under_constant_row_shift() {
        let t: Vec<f64> = (0..20).map(|i| i as f64 * 0.3).collect();
        let v = build_covariates(&t, 2);
        let w = dmatrix![1.0, -2.0, 0.5; 0.3, 0.7, -1.1; 0.0, 0.0, 0.0];
        let base = priors(&v, &LogisticWeights::new(w.clone()).unwrap()).unwrap();
        // Shift every row by the same constant vector and canonicalize back.
        let mut shifted = w;
        for i in 0..3 {
            shifted[(i, 0)] += 3.5;
            shifted[(i, 1)] -= 1.25;
            shifted[(i, 2)] += 0.75;
        }
        let canon = LogisticWeights::canonicalize(shifted);
        let moved = priors(&v, &canon).unwrap();
        for i in 0..base.nrows() {
            for k in 0..base.ncols() {
                assert!((base[(i, k)] - moved[(i, k)]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn priors_reject_dimension_mismatch() {
        let v = build_covariates(&[0.0, 1.0], 1);
        let err = priors(&v, &LogisticWeights::zeros(2, 2)).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
    }

    #[test]
    fn irls_stationary_at_uniform_responsibilities() {
        let t: Vec<f64> = (0..30).map(|i| i as f64).collect();
        let v = build_covariates(&t, 1);
        let tau = uniform_tau(30, 3);
        let fit = irls_fit(&v, &tau, &LogisticWeights::zeros(3, 1), &IrlsOptions::default())
            .unwrap();
        assert_eq!(fit.weights.w, DMatrix::zeros(3, 2));
    }

    #[test]
    fn irls_single_regime_returns_zero_row() {
        let v = build_covariates(&[0.0, 1.0, 2.0], 1);
        let tau = uniform_tau(3, 1);
        let fit = irls_fit(&v, &tau, &LogisticWeights::zeros(1, 1), &IrlsOptions::default())
            .unwrap();
        assert_eq!(fit.weights.w, DMatrix::zeros(1, 2));
        assert_eq!(fit.q_w, 0.0);
    }

    #[test]
    fn irls_recovers_midpoint_split_against_grid_search() {
        // One-hot responsibilities: first half regime 0, second half regime 1.
        let n = 40;
        let t: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let v = build_covariates(&t, 1);
        let mut tau = DMatrix::zeros(n, 2);
        for i in 0..n {
            tau[(i, usize::from(i >= n / 2))] = 1.0;
        }
        let tau = PosteriorMatrix::new(tau).unwrap();

        let fit = irls_fit(&v, &tau, &LogisticWeights::zeros(2, 1), &IrlsOptions::default())
            .unwrap();

        // Independent brute-force search over w_1 in [-50, 50]^2.
        let mut best = (f64::NEG_INFINITY, 0.0, 0.0);
        let grid: Vec<f64> = (-50..=50).map(|v| v as f64).collect();
        for &a in &grid {
            for &b in &grid {
                let w = LogisticWeights::new(dmatrix![a, b; 0.0, 0.0]).unwrap();
                let q = q_w(&v, &tau, &w).unwrap();
                if q > best.0 {
                    best = (q, a, b);
                }
            }
        }
        assert!(
            fit.q_w >= best.0 - 1e-6,
            "IRLS Q_w {} below grid-search Q_w {}",
            fit.q_w,
            best.0
        );

        // The fitted priors reproduce the split everywhere.
        let pi = priors(&v, &fit.weights).unwrap();
        for i in 0..n {
            let predicted = usize::from(pi[(i, 1)] > pi[(i, 0)]);
            assert_eq!(predicted, usize::from(i >= n / 2), "sample {i}");
        }
    }

    #[test]
    fn irls_trajectory_never_decreases() {
        let n = 50;
        let t: Vec<f64> = (0..n).map(|i| i as f64 * 0.1).collect();
        let v = build_covariates(&t, 1);
        let mut tau = DMatrix::zeros(n, 3);
        for i in 0..n {
            // Soft, time-drifting responsibilities, normalized per row.
            let s = i as f64 / (n - 1) as f64;
            let raw = [(1.0 - s) * 0.8 + 0.1, s * 0.8 + 0.1, 0.2];
            let sum: f64 = raw.iter().sum();
            for k in 0..3 {
                tau[(i, k)] = raw[k] / sum;
            }
            let row_sum = tau[(i, 0)] + tau[(i, 1)] + tau[(i, 2)];
            tau[(i, 2)] += 1.0 - row_sum;
        }
        let tau = PosteriorMatrix::new(tau).unwrap();
        let fit = irls_fit(&v, &tau, &LogisticWeights::zeros(3, 1), &IrlsOptions::default())
            .unwrap();
        for pair in fit.trajectory.windows(2) {
            assert!(pair[1] >= pair[0], "objective decreased: {pair:?}");
        }
        assert!(fit.q_w >= q_w(&v, &tau, &LogisticWeights::zeros(3, 1)).unwrap());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let n = 25;
        let t: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let v = build_covariates(&t, 2);
        let mut tau = DMatrix::zeros(n, 3);
        for i in 0..n {
            let s = (i as f64 / 7.0).sin().abs();
            tau[(i, 0)] = s * 0.5;
            tau[(i, 1)] = (1.0 - s) * 0.5;
            tau[(i, 2)] = 1.0 - tau[(i, 0)] - tau[(i, 1)];
        }
        let tau = PosteriorMatrix::new(tau).unwrap();
        let w = LogisticWeights::new(
            dmatrix![0.4, -1.2, 0.3; -0.8, 0.9, 1.1; 0.0, 0.0, 0.0],
        )
        .unwrap();

        let analytic = q_w_gradient(&v, &tau, &w).unwrap();
        let numeric = crate::simulate::finite_diff_grad(
            |wp| q_w(&v, &tau, wp).unwrap(),
            &w,
            1e-5,
        );
        let scale = 1.0 + analytic.amax();
        assert!((&analytic - &numeric).amax() <= 1e-5 * scale);
    }
}
