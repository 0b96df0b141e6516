//! The dedicated EM trainer: log-likelihood evaluation, E-step
//! responsibilities, closed-form weighted least-squares M-step, covariance
//! re-estimation, IRLS delegation for the logistic weights, convergence
//! control and multi-restart initialization.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::logistic::{self, CovariateMatrix, IrlsOptions};
use crate::model::{
    FitReport, Hyperparams, LogisticWeights, MrhlpModel, PosteriorMatrix, RegimeParams,
    TimeSeries, DEFAULT_COV_FLOOR,
};
use crate::selection;

const LN_2PI: f64 = 1.8378770664093453;

/// How each restart builds its initial regime parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitStrategy {
    /// Partition the samples into K contiguous blocks with uniformly
    /// random cut points and fit per-block least squares.
    #[default]
    ContiguousRandom,
    /// Cluster the means of small contiguous windows with k-means and fit
    /// per-cluster least squares.
    KmeansTimeWindows,
}

/// Options of the EM trainer.
#[derive(Debug, Clone, PartialEq)]
pub struct EmOptions {
    /// Iteration cap per restart.
    pub max_iter: usize,
    /// Relative log-likelihood increment below which a run is converged.
    pub tol: f64,
    /// Independent restarts; the best final log-likelihood wins.
    pub restarts: usize,
    /// Base RNG seed; restart r uses `seed + r`.
    pub seed: u64,
    /// Minimum eigenvalue enforced on every covariance update.
    pub cov_floor: f64,
    pub init: InitStrategy,
    /// Options forwarded to the logistic weight solver.
    pub irls: IrlsOptions,
}

impl Default for EmOptions {
    fn default() -> Self {
        EmOptions {
            max_iter: 300,
            tol: 1e-6,
            restarts: 5,
            seed: 0,
            cov_floor: DEFAULT_COV_FLOOR,
            init: InitStrategy::default(),
            irls: IrlsOptions::default(),
        }
    }
}

impl EmOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter == 0 || self.restarts == 0 {
            return Err(Error::InvalidOptions {
                reason: "max_iter and restarts must be >= 1".into(),
            });
        }
        if self.tol <= 0.0 || self.cov_floor <= 0.0 {
            return Err(Error::InvalidOptions {
                reason: "tol and cov_floor must be positive".into(),
            });
        }
        self.irls.validate()
    }
}

/// Per-regime regression matrices over rescaled time. Regimes sharing a
/// degree share one allocation.
#[derive(Debug, Clone)]
pub struct DesignMatrices {
    mats: Vec<Arc<DMatrix<f64>>>,
}

impl DesignMatrices {
    /// Builds the design matrix of every regime from rescaled times.
    pub fn build(scaled: &[f64], degrees: &[usize]) -> Self {
        let mut cache: Vec<(usize, Arc<DMatrix<f64>>)> = Vec::new();
        let mats = degrees
            .iter()
            .map(|&p| {
                if let Some((_, m)) = cache.iter().find(|(d, _)| *d == p) {
                    Arc::clone(m)
                } else {
                    let m = Arc::new(logistic::monomials(scaled, p));
                    cache.push((p, Arc::clone(&m)));
                    m
                }
            })
            .collect();
        DesignMatrices { mats }
    }

    pub fn regime(&self, k: usize) -> &DMatrix<f64> {
        &self.mats[k]
    }

    pub fn num_regimes(&self) -> usize {
        self.mats.len()
    }
}

/// Everything derived from a series once per fit: rescaled times, logistic
/// covariates and per-regime design matrices.
struct Scaffold {
    v: CovariateMatrix,
    designs: DesignMatrices,
}

impl Scaffold {
    fn build(series: &TimeSeries, hyper: &Hyperparams) -> Self {
        let scaled = logistic::rescale_times(&series.t);
        Scaffold {
            v: CovariateMatrix {
                v: logistic::monomials(&scaled, hyper.u),
            },
            designs: DesignMatrices::build(&scaled, &hyper.degrees),
        }
    }
}

fn check_dims(series: &TimeSeries, model: &MrhlpModel) -> Result<()> {
    if model.dim() != series.dim() {
        return Err(Error::DimensionMismatch {
            context: "model dimension vs series dimension",
            expected: model.dim(),
            actual: series.dim(),
        });
    }
    Ok(())
}

/// Per-sample Gaussian log densities of one regime,
/// `log N(y_i; B^T x_i, Sigma)` for every i.
fn log_density_column(
    y: &DMatrix<f64>,
    x: &DMatrix<f64>,
    coefficients: &DMatrix<f64>,
    covariance: &DMatrix<f64>,
    regime: usize,
) -> Result<DVector<f64>> {
    let n = y.nrows();
    let d = y.ncols();
    let chol = nalgebra::Cholesky::new(covariance.clone())
        .ok_or(Error::NonPdCovariance { regime })?;
    let log_det: f64 = (0..d).map(|i| chol.l_dirty()[(i, i)].ln()).sum::<f64>() * 2.0;
    let base = -0.5 * (d as f64 * LN_2PI + log_det);
    let residuals = y - x * coefficients; // n x d
    // Whiten all residuals in one triangular solve: L Z^T = R^T.
    let z = chol
        .l_dirty()
        .solve_lower_triangular(&residuals.transpose())
        .ok_or(Error::NonPdCovariance { regime })?;
    let mut out = DVector::zeros(n);
    for i in 0..n {
        let quad: f64 = (0..d).map(|j| z[(j, i)] * z[(j, i)]).sum();
        out[i] = base - 0.5 * quad;
    }
    Ok(out)
}

/// Per-sample, per-regime Gaussian log densities
/// `log N(y_i; B_k^T x_i, Sigma_k)`, an `n x K` matrix.
fn component_log_densities(
    y: &DMatrix<f64>,
    designs: &DesignMatrices,
    model: &MrhlpModel,
) -> Result<DMatrix<f64>> {
    let mut out = DMatrix::zeros(y.nrows(), model.hyper.k);
    for (k, regime) in model.regimes.iter().enumerate() {
        let col = log_density_column(
            y,
            designs.regime(k),
            &regime.coefficients,
            &regime.covariance,
            k,
        )?;
        out.set_column(k, &col);
    }
    Ok(out)
}

/// Normalizes `log_pi + log_dens` row-wise in log space. Returns the
/// responsibilities, the observed-data log-likelihood, and the per-sample
/// mixture log-densities.
fn posterior_from_log(
    log_pi: &DMatrix<f64>,
    log_dens: &DMatrix<f64>,
) -> (DMatrix<f64>, f64, Vec<f64>) {
    let n = log_pi.nrows();
    let k = log_pi.ncols();
    let mut tau = DMatrix::zeros(n, k);
    let mut row_ll = vec![0.0; n];
    let mut total = 0.0;
    for i in 0..n {
        let mut max = f64::NEG_INFINITY;
        for j in 0..k {
            tau[(i, j)] = log_pi[(i, j)] + log_dens[(i, j)];
            max = max.max(tau[(i, j)]);
        }
        let mut sum = 0.0;
        for j in 0..k {
            sum += (tau[(i, j)] - max).exp();
        }
        let lse = max + sum.ln();
        row_ll[i] = lse;
        total += lse;
        let mut norm = 0.0;
        for j in 0..k {
            let p = (tau[(i, j)] - lse).exp();
            tau[(i, j)] = p;
            norm += p;
        }
        for j in 0..k {
            tau[(i, j)] /= norm;
        }
    }
    (tau, total, row_ll)
}

/// Observed-data log-likelihood of a model on a series, evaluated in log
/// space with log-sum-exp over regimes.
pub fn log_likelihood(series: &TimeSeries, model: &MrhlpModel) -> Result<f64> {
    series.validate()?;
    model.validate()?;
    check_dims(series, model)?;
    let scaffold = Scaffold::build(series, &model.hyper);
    let log_pi = logistic::log_priors(&scaffold.v, &model.weights)?;
    let log_dens = component_log_densities(&series.y, &scaffold.designs, model)?;
    let (_, ll, _) = posterior_from_log(&log_pi, &log_dens);
    Ok(ll)
}

/// E-step: posterior responsibilities and the log-likelihood evaluated in
/// the same pass.
pub fn e_step(series: &TimeSeries, model: &MrhlpModel) -> Result<(PosteriorMatrix, f64)> {
    series.validate()?;
    model.validate()?;
    check_dims(series, model)?;
    let scaffold = Scaffold::build(series, &model.hyper);
    let log_pi = logistic::log_priors(&scaffold.v, &model.weights)?;
    let log_dens = component_log_densities(&series.y, &scaffold.designs, model)?;
    let (tau, ll, _) = posterior_from_log(&log_pi, &log_dens);
    Ok((PosteriorMatrix { tau }, ll))
}

/// Weighted least-squares update of the regression coefficients: solves
/// the normal equations `(X^T W X) B = X^T W Y` through a Cholesky
/// factorization with a ridge retry on the Gram matrix.
pub fn m_step_regression(
    y: &DMatrix<f64>,
    x: &DMatrix<f64>,
    weights: &DVector<f64>,
    ridge: f64,
) -> Result<DMatrix<f64>> {
    let n = y.nrows();
    if x.nrows() != n || weights.len() != n {
        return Err(Error::DimensionMismatch {
            context: "regression rows vs weights",
            expected: n,
            actual: x.nrows().min(weights.len()),
        });
    }
    // Scale rows by sqrt(w): the Gram matrix (W^1/2 X)^T (W^1/2 X) is then
    // symmetric by construction.
    let mut xs = x.clone();
    let mut ys = y.clone();
    for i in 0..n {
        let s = weights[i].sqrt();
        for j in 0..x.ncols() {
            xs[(i, j)] *= s;
        }
        for j in 0..y.ncols() {
            ys[(i, j)] *= s;
        }
    }
    let gram = xs.transpose() * &xs;
    let rhs = xs.transpose() * &ys;
    let chol = match nalgebra::Cholesky::new(gram.clone()) {
        Some(chol) => chol,
        None => {
            let mut ridged = gram.clone();
            for i in 0..ridged.nrows() {
                ridged[(i, i)] += ridge;
            }
            nalgebra::Cholesky::new(ridged).ok_or(Error::RankDeficientDesign { regime: 0 })?
        }
    };
    let mut solution = chol.solve(&rhs);
    // One step of iterative refinement sharpens the normal-equations
    // solve by several digits when the Gram matrix is ill conditioned.
    let residual = &rhs - &gram * &solution;
    solution += chol.solve(&residual);
    if solution.iter().any(|v| !v.is_finite()) {
        return Err(Error::RankDeficientDesign { regime: 0 });
    }
    Ok(solution)
}

/// Weighted covariance update: `(Y - X B)^T W (Y - X B) / sum(w)`,
/// symmetrized and eigenvalue-floored.
pub fn m_step_covariance(
    y: &DMatrix<f64>,
    x: &DMatrix<f64>,
    coefficients: &DMatrix<f64>,
    weights: &DVector<f64>,
    cov_floor: f64,
) -> DMatrix<f64> {
    let residuals = y - x * coefficients;
    let mut weighted = residuals.clone();
    let total: f64 = weights.iter().sum();
    for i in 0..weighted.nrows() {
        let w = weights[i];
        for j in 0..weighted.ncols() {
            weighted[(i, j)] *= w;
        }
    }
    let cov = residuals.transpose() * weighted / total;
    floor_spd(cov, cov_floor)
}

/// Symmetrizes a matrix and floors its eigenvalues, guaranteeing a
/// symmetric positive definite result with min eigenvalue >= `floor` even
/// after reconstruction rounding (the clamp target carries a margin
/// proportional to the spectral radius).
pub fn floor_spd(m: DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let sym = (&m + m.transpose()) * 0.5;
    let eig = nalgebra::SymmetricEigen::new(sym);
    let spread = eig.eigenvalues.amax().max(floor);
    let target = floor + spread * 1e-12;
    let clamped = DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|&l| l.max(target)),
    );
    let rebuilt = &eig.eigenvectors * DMatrix::from_diagonal(&clamped) * eig.eigenvectors.transpose();
    (&rebuilt + rebuilt.transpose()) * 0.5
}

/// Result of a fit: the winning model, its responsibilities and the
/// diagnostics report.
#[derive(Debug, Clone)]
pub struct FitOutput {
    pub model: MrhlpModel,
    pub posterior: PosteriorMatrix,
    pub report: FitReport,
}

/// Fits the model by EM with multiple random restarts. Restarts run
/// independently (in parallel when a rayon pool is available) and the one
/// with the highest final log-likelihood wins, ties broken toward the
/// lowest restart index.
pub fn fit(series: &TimeSeries, hyper: &Hyperparams, opts: &EmOptions) -> Result<FitOutput> {
    series.validate()?;
    hyper.validate_for(series.len())?;
    opts.validate()?;

    let mut warnings = Vec::new();
    let recommended = hyper.k * (hyper.max_degree() + 1);
    if series.len() < recommended {
        warnings.push(format!(
            "series has {} samples; at least {} recommended for K={} regimes of degree {}",
            series.len(),
            recommended,
            hyper.k,
            hyper.max_degree()
        ));
    }

    let scaffold = Scaffold::build(series, hyper);
    let runs: Vec<Result<EmRun>> = if opts.restarts == 1 {
        vec![run_em(series, hyper, opts, &scaffold, 0)]
    } else {
        (0..opts.restarts)
            .into_par_iter()
            .map(|r| run_em(series, hyper, opts, &scaffold, r))
            .collect()
    };

    let mut best: Option<EmRun> = None;
    let mut last_err = String::from("no restart executed");
    for run in runs {
        match run {
            Ok(run) => {
                let better = match &best {
                    Some(b) => run.final_ll > b.final_ll,
                    None => true,
                };
                if better {
                    best = Some(run);
                }
            }
            Err(e) => last_err = e.to_string(),
        }
    }
    let run = best.ok_or(Error::AllRestartsFailed {
        attempts: opts.restarts,
        last: last_err,
    })?;

    let nu = crate::model::num_free_params(hyper, series.dim());
    let bic = selection::bic_value(run.final_ll, nu, series.len() as f64);
    Ok(FitOutput {
        model: run.model,
        posterior: PosteriorMatrix { tau: run.tau },
        report: FitReport {
            loglik_history: run.history,
            converged: run.converged,
            iterations: run.iterations,
            bic,
            restart_index: run.restart_index,
            seed: opts.seed,
            rescued_iterations: run.rescued,
            warnings,
        },
    })
}

struct EmRun {
    model: MrhlpModel,
    tau: DMatrix<f64>,
    history: Vec<f64>,
    converged: bool,
    iterations: usize,
    rescued: Vec<usize>,
    restart_index: usize,
    final_ll: f64,
}

fn run_em(
    series: &TimeSeries,
    hyper: &Hyperparams,
    opts: &EmOptions,
    scaffold: &Scaffold,
    restart_index: usize,
) -> Result<EmRun> {
    let n = series.len();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(restart_index as u64));

    let regimes = match opts.init {
        InitStrategy::ContiguousRandom => {
            init_contiguous_random(series, hyper, scaffold, &mut rng, opts.cov_floor)?
        }
        InitStrategy::KmeansTimeWindows => {
            init_kmeans_windows(series, hyper, scaffold, &mut rng, opts.cov_floor)?
        }
    };
    let mut model = MrhlpModel {
        hyper: hyper.clone(),
        weights: LogisticWeights::zeros(hyper.k, hyper.u),
        regimes,
    };

    let log_pi = logistic::log_priors(&scaffold.v, &model.weights)?;
    let mut log_dens = component_log_densities(&series.y, &scaffold.designs, &model)?;
    let (mut tau, mut ll, mut row_ll) = posterior_from_log(&log_pi, &log_dens);

    let mut history = vec![ll];
    let mut rescued = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    for q in 0..opts.max_iter {
        // M-step: regression and covariance per regime, with a rescue for
        // starved components. Each closed-form update is accepted only if
        // it does not lower the component's weighted log-density sum: a
        // nearly empty component can make the normal equations rank
        // deficient, and the ridge fallback is then no longer the exact
        // weighted-least-squares maximizer.
        for k in 0..hyper.k {
            let weight_sum: f64 = (0..n).map(|i| tau[(i, k)]).sum();
            let x = scaffold.designs.regime(k);
            if weight_sum < 1e-8 * n as f64 {
                let (b, sigma) = rescue_component(
                    &series.y,
                    x,
                    &row_ll,
                    hyper.degrees[k],
                    hyper.k,
                    opts.cov_floor,
                )?;
                let col = log_density_column(&series.y, x, &b, &sigma, k)?;
                log_dens.set_column(k, &col);
                model.regimes[k] = RegimeParams::new(b, sigma);
                rescued.push(q + 1);
                continue;
            }
            let weights = DVector::from_iterator(n, (0..n).map(|i| tau[(i, k)]));
            let b = m_step_regression(&series.y, x, &weights, opts.cov_floor)
                .map_err(|e| match e {
                    Error::RankDeficientDesign { .. } => Error::RankDeficientDesign { regime: k },
                    other => other,
                })?;
            let sigma = m_step_covariance(&series.y, x, &b, &weights, opts.cov_floor);
            let col = log_density_column(&series.y, x, &b, &sigma, k)?;
            let q_old: f64 = (0..n).map(|i| tau[(i, k)] * log_dens[(i, k)]).sum();
            let q_new: f64 = (0..n).map(|i| tau[(i, k)] * col[i]).sum();
            if q_new >= q_old {
                log_dens.set_column(k, &col);
                model.regimes[k] = RegimeParams::new(b, sigma);
            }
        }

        // Logistic weight update by IRLS, warm-started at the previous
        // weights; the solver never returns a worse Q_w.
        let posterior = PosteriorMatrix { tau: tau.clone() };
        let irls = logistic::irls_fit(&scaffold.v, &posterior, &model.weights, &opts.irls)?;
        model.weights = irls.weights;

        // E-step at the updated parameters, reusing the density columns
        // maintained through the M-step.
        let log_pi = logistic::log_priors(&scaffold.v, &model.weights)?;
        let (tau_new, ll_new, row_ll_new) = posterior_from_log(&log_pi, &log_dens);
        history.push(ll_new);
        iterations = q + 1;

        let increment = (ll_new - ll) / (1.0 + ll.abs());
        tau = tau_new;
        row_ll = row_ll_new;
        ll = ll_new;

        if q + 1 == opts.max_iter {
            break; // iteration cap; converged stays false
        }
        if increment < opts.tol {
            converged = true;
            break;
        }
    }

    Ok(EmRun {
        model,
        tau,
        history,
        converged,
        iterations,
        rescued,
        restart_index,
        final_ll: ll,
    })
}

/// Re-seeds a starved component from the contiguous window of samples the
/// current mixture explains worst.
fn rescue_component(
    y: &DMatrix<f64>,
    x: &DMatrix<f64>,
    row_ll: &[f64],
    degree: usize,
    k: usize,
    cov_floor: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = y.nrows();
    let len = (degree + 2).max(n / (2 * k).max(1)).min(n);
    let start = worst_window(row_ll, len);
    let mut weights = DVector::zeros(n);
    for i in start..start + len {
        weights[i] = 1.0;
    }
    let b = m_step_regression(y, x, &weights, cov_floor)?;
    let sigma = m_step_covariance(y, x, &b, &weights, cov_floor);
    Ok((b, sigma))
}

/// Start of the length-`len` window with the lowest total log-density.
fn worst_window(row_ll: &[f64], len: usize) -> usize {
    let mut sum: f64 = row_ll[..len].iter().sum();
    let mut best_sum = sum;
    let mut best_start = 0;
    for start in 1..=row_ll.len() - len {
        sum += row_ll[start + len - 1] - row_ll[start - 1];
        if sum < best_sum {
            best_sum = sum;
            best_start = start;
        }
    }
    best_start
}

/// Uniformly random composition of `n` into `k` contiguous blocks of at
/// least `min_len` samples; falls back to an equal split when the series
/// is too short for the minimum.
fn random_blocks(n: usize, k: usize, min_len: usize, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
    if n < k {
        return Err(Error::InvalidHyperparams {
            reason: format!("cannot split {n} samples into {k} non-empty blocks"),
        });
    }
    if k == 1 {
        return Ok(vec![n]);
    }
    let m = if n >= k * min_len { min_len } else { n / k };
    let m = m.max(1);
    // Compositions of n with parts >= m map to (k-1)-subsets of
    // {1, ..., n - k*(m-1) - 1}.
    let pool = n - k * (m - 1) - 1;
    let mut cuts: Vec<usize> = index::sample(rng, pool, k - 1)
        .into_iter()
        .map(|c| c + 1)
        .collect();
    cuts.sort_unstable();
    let mut blocks = Vec::with_capacity(k);
    let mut prev = 0;
    for &c in &cuts {
        blocks.push(c - prev + m - 1);
        prev = c;
    }
    blocks.push(n - k * (m - 1) - prev + m - 1);
    debug_assert_eq!(blocks.iter().sum::<usize>(), n);
    Ok(blocks)
}

fn params_from_indicator(
    y: &DMatrix<f64>,
    x: &DMatrix<f64>,
    members: impl Iterator<Item = usize>,
    cov_floor: f64,
) -> Result<RegimeParams> {
    let mut weights = DVector::zeros(y.nrows());
    for i in members {
        weights[i] = 1.0;
    }
    let b = m_step_regression(y, x, &weights, cov_floor)?;
    let sigma = m_step_covariance(y, x, &b, &weights, cov_floor);
    Ok(RegimeParams::new(b, sigma))
}

fn init_contiguous_random(
    series: &TimeSeries,
    hyper: &Hyperparams,
    scaffold: &Scaffold,
    rng: &mut ChaCha8Rng,
    cov_floor: f64,
) -> Result<Vec<RegimeParams>> {
    let min_len = hyper.max_degree() + 2;
    let blocks = random_blocks(series.len(), hyper.k, min_len, rng)?;
    let mut start = 0;
    let mut regimes = Vec::with_capacity(hyper.k);
    for (k, &len) in blocks.iter().enumerate() {
        regimes.push(params_from_indicator(
            &series.y,
            scaffold.designs.regime(k),
            start..start + len,
            cov_floor,
        )?);
        start += len;
    }
    Ok(regimes)
}

fn init_kmeans_windows(
    series: &TimeSeries,
    hyper: &Hyperparams,
    scaffold: &Scaffold,
    rng: &mut ChaCha8Rng,
    cov_floor: f64,
) -> Result<Vec<RegimeParams>> {
    let n = series.len();
    let k = hyper.k;
    let d = series.dim();
    let num_windows = (8 * k).min(n);
    if num_windows < k {
        return init_contiguous_random(series, hyper, scaffold, rng, cov_floor);
    }

    // Mean vector of each contiguous window.
    let mut bounds = Vec::with_capacity(num_windows + 1);
    for w in 0..=num_windows {
        bounds.push(w * n / num_windows);
    }
    let mut features = vec![vec![0.0; d]; num_windows];
    for w in 0..num_windows {
        let (lo, hi) = (bounds[w], bounds[w + 1]);
        for i in lo..hi {
            for (j, f) in features[w].iter_mut().enumerate() {
                *f += series.y[(i, j)];
            }
        }
        let len = (hi - lo).max(1) as f64;
        features[w].iter_mut().for_each(|v| *v /= len);
    }

    // k-means++ seeding followed by Lloyd iterations.
    let dist2 = |a: &[f64], b: &[f64]| -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
    };
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    centroids.push(features[rng.random_range(0..num_windows)].clone());
    while centroids.len() < k {
        let weights: Vec<f64> = features
            .iter()
            .map(|f| {
                centroids
                    .iter()
                    .map(|c| dist2(f, c))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            centroids.push(features[rng.random_range(0..num_windows)].clone());
            continue;
        }
        let mut target = rng.random::<f64>() * total;
        let mut chosen = num_windows - 1;
        for (i, &w) in weights.iter().enumerate() {
            target -= w;
            if target <= 0.0 {
                chosen = i;
                break;
            }
        }
        centroids.push(features[chosen].clone());
    }
    let mut assignment = vec![0usize; num_windows];
    for _ in 0..50 {
        let mut moved = false;
        for (w, f) in features.iter().enumerate() {
            let best = (0..k)
                .min_by(|&a, &b| {
                    dist2(f, &centroids[a])
                        .partial_cmp(&dist2(f, &centroids[b]))
                        .unwrap()
                })
                .unwrap();
            if assignment[w] != best {
                assignment[w] = best;
                moved = true;
            }
        }
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (w, f) in features.iter().enumerate() {
            counts[assignment[w]] += 1;
            for j in 0..d {
                sums[assignment[w]][j] += f[j];
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for j in 0..d {
                    centroids[c][j] = sums[c][j] / counts[c] as f64;
                }
            }
        }
        if !moved {
            break;
        }
    }

    // Empty clusters make the init ill-posed; contiguous blocks are a
    // sound fallback.
    let mut counts = vec![0usize; k];
    for &a in &assignment {
        counts[a] += 1;
    }
    if counts.contains(&0) {
        return init_contiguous_random(series, hyper, scaffold, rng, cov_floor);
    }

    let mut regimes = Vec::with_capacity(k);
    for c in 0..k {
        let members = (0..num_windows)
            .filter(|&w| assignment[w] == c)
            .flat_map(|w| bounds[w]..bounds[w + 1])
            .collect::<Vec<_>>();
        regimes.push(params_from_indicator(
            &series.y,
            scaffold.designs.regime(c),
            members.into_iter(),
            cov_floor,
        )?);
    }
    Ok(regimes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::dmatrix;

    fn standard_model(k: usize) -> MrhlpModel {
        let regime = RegimeParams::new(DMatrix::zeros(1, 1), DMatrix::identity(1, 1));
        MrhlpModel {
            hyper: Hyperparams::shared(k, 0, 1),
            weights: LogisticWeights::zeros(k, 1),
            regimes: vec![regime; k],
        }
    }

    fn two_zero_series() -> TimeSeries {
        TimeSeries::new(vec![0.0, 1.0], dmatrix![0.0; 0.0]).unwrap()
    }

    #[test]
    fn loglik_of_standard_normal_pair() {
        let ll = log_likelihood(&two_zero_series(), &standard_model(1)).unwrap();
        assert_relative_eq!(ll, -LN_2PI, epsilon = 1e-12);
        assert_relative_eq!(ll, -1.837877, epsilon = 1e-6);
    }

    #[test]
    fn identical_components_collapse_to_single() {
        let series = two_zero_series();
        let single = log_likelihood(&series, &standard_model(1)).unwrap();
        let double = log_likelihood(&series, &standard_model(2)).unwrap();
        assert_relative_eq!(single, double, epsilon = 1e-12);
    }

    #[test]
    fn e_step_single_component_is_one() {
        let (tau, _) = e_step(&two_zero_series(), &standard_model(1)).unwrap();
        assert_eq!(tau.tau, DMatrix::from_element(2, 1, 1.0));
    }

    #[test]
    fn e_step_symmetric_components_split_evenly() {
        let (tau, _) = e_step(&two_zero_series(), &standard_model(2)).unwrap();
        for i in 0..2 {
            assert_relative_eq!(tau.tau[(i, 0)], 0.5, epsilon = 1e-14);
            assert_relative_eq!(tau.tau[(i, 1)], 0.5, epsilon = 1e-14);
        }
    }

    #[test]
    fn e_step_matches_naive_scalar_oracle() {
        // n=2, K=2, d=1, p=0: direct formula with scalar Gaussians.
        let series = TimeSeries::new(vec![0.0, 1.0], dmatrix![0.4; -1.3]).unwrap();
        let hyper = Hyperparams::shared(2, 0, 1);
        let weights =
            LogisticWeights::new(dmatrix![0.3, -0.8; 0.0, 0.0]).unwrap();
        let regimes = vec![
            RegimeParams::new(dmatrix![0.5], dmatrix![0.7]),
            RegimeParams::new(dmatrix![-1.0], dmatrix![1.4]),
        ];
        let model = MrhlpModel::new(hyper, weights, regimes).unwrap();
        let (tau, ll) = e_step(&series, &model).unwrap();

        let dens = |y: f64, mu: f64, var: f64| {
            (-0.5 * (y - mu) * (y - mu) / var).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
        };
        let mut expected_ll = 0.0;
        for (i, s) in [0.0f64, 1.0f64].iter().enumerate() {
            let l1 = 0.3 - 0.8 * s;
            let p1 = l1.exp() / (l1.exp() + 1.0);
            let p2 = 1.0 - p1;
            let y = series.y[(i, 0)];
            let n1 = p1 * dens(y, 0.5, 0.7);
            let n2 = p2 * dens(y, -1.0, 1.4);
            expected_ll += (n1 + n2).ln();
            assert_relative_eq!(tau.tau[(i, 0)], n1 / (n1 + n2), epsilon = 1e-12);
            assert_relative_eq!(tau.tau[(i, 1)], n2 / (n1 + n2), epsilon = 1e-12);
        }
        assert_relative_eq!(ll, expected_ll, epsilon = 1e-12);
        assert_relative_eq!(ll, log_likelihood(&series, &model).unwrap(), epsilon = 1e-10);
    }

    #[test]
    fn regression_recovers_noiseless_polynomial() {
        let n = 30;
        let t: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
        let x = logistic::monomials(&t, 2);
        let truth = dmatrix![1.0, -2.0; 0.5, 3.0; -1.5, 0.25];
        let y = &x * &truth;
        let weights = DVector::from_element(n, 1.0);
        let b = m_step_regression(&y, &x, &weights, DEFAULT_COV_FLOOR).unwrap();
        assert!((&b - &truth).amax() < 1e-8);
    }

    #[test]
    fn regression_with_one_hot_weights_equals_subblock_ols() {
        let n = 24;
        let t: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
        let x = logistic::monomials(&t, 1);
        let y = DMatrix::from_fn(n, 2, |i, j| ((i * 7 + j * 3) % 11) as f64 * 0.37 - 1.0);
        let mut weights = DVector::zeros(n);
        for i in 5..14 {
            weights[i] = 1.0;
        }
        let weighted = m_step_regression(&y, &x, &weights, DEFAULT_COV_FLOOR).unwrap();

        // Plain OLS on the extracted rows via an independent route (SVD).
        let xs = x.rows(5, 9).into_owned();
        let ys = y.rows(5, 9).into_owned();
        let direct = xs.svd(true, true).solve(&ys, 1e-12).unwrap();
        assert!((&weighted - &direct).amax() < 1e-9);
    }

    #[test]
    fn constant_regression_is_weighted_mean() {
        let y = dmatrix![1.0; 2.0; 4.0];
        let x = DMatrix::from_element(3, 1, 1.0);
        let weights = DVector::from_vec(vec![0.2, 0.3, 0.5]);
        let b = m_step_regression(&y, &x, &weights, DEFAULT_COV_FLOOR).unwrap();
        let expected = (0.2 * 1.0 + 0.3 * 2.0 + 0.5 * 4.0) / 1.0;
        assert_relative_eq!(b[(0, 0)], expected, epsilon = 1e-12);
    }

    #[test]
    fn zero_residual_covariance_is_floored_identity() {
        let n = 10;
        let t: Vec<f64> = (0..n).map(|i| i as f64 / 9.0).collect();
        let x = logistic::monomials(&t, 1);
        let b = dmatrix![2.0, -1.0; 0.5, 0.75];
        let y = &x * &b;
        let weights = DVector::from_element(n, 1.0);
        let sigma = m_step_covariance(&y, &x, &b, &weights, 1e-6);
        assert!((sigma - DMatrix::identity(2, 2) * 1e-6).amax() < 1e-12);
    }

    #[test]
    fn unit_weight_covariance_is_uncentered_moment() {
        let y = dmatrix![1.0, 0.5; -2.0, 1.5; 0.25, -0.75; 1.5, 2.0];
        let x = DMatrix::from_element(4, 1, 1.0);
        let b = DMatrix::zeros(1, 2);
        let weights = DVector::from_element(4, 1.0);
        let sigma = m_step_covariance(&y, &x, &b, &weights, 1e-12);
        let expected = y.transpose() * &y / 4.0;
        assert!((&sigma - &expected).amax() < 1e-12);
    }

    #[test]
    fn scalar_weighted_variance_closed_form() {
        let y = dmatrix![1.0; 3.0; 6.0];
        let x = DMatrix::from_element(3, 1, 1.0);
        let weights = DVector::from_vec(vec![0.5, 0.25, 0.25]);
        let mu = 0.5 * 1.0 + 0.25 * 3.0 + 0.25 * 6.0;
        let b = DMatrix::from_element(1, 1, mu);
        let sigma = m_step_covariance(&y, &x, &b, &weights, 1e-12);
        let expected =
            (0.5 * (1.0 - mu).powi(2) + 0.25 * (3.0 - mu).powi(2) + 0.25 * (6.0 - mu).powi(2))
                / 1.0;
        assert_relative_eq!(sigma[(0, 0)], expected, epsilon = 1e-12);
    }

    #[test]
    fn floor_spd_keeps_eigenvalues_above_floor() {
        let m = dmatrix![1e-9, 0.0; 0.0, 2.0];
        let floored = floor_spd(m, 1e-6);
        let eig = nalgebra::SymmetricEigen::new(floored);
        assert!(eig.eigenvalues.iter().all(|&l| l >= 1e-6 * (1.0 - 1e-12)));
    }

    fn simulate_k1_series(n: usize) -> TimeSeries {
        // Quadratic trend plus deterministic pseudo-noise; no RNG needed.
        let t: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let y = DMatrix::from_fn(n, 2, |i, j| {
            let s = i as f64 / (n - 1) as f64;
            1.5 + 2.0 * s - 3.0 * s * s + 0.05 * ((i * 31 + j * 17) % 13) as f64
        });
        TimeSeries::new(t, y).unwrap()
    }

    #[test]
    fn single_regime_fit_matches_direct_mle() {
        let series = simulate_k1_series(60);
        let hyper = Hyperparams::shared(1, 2, 1);
        let opts = EmOptions {
            restarts: 1,
            ..EmOptions::default()
        };
        let out = fit(&series, &hyper, &opts).unwrap();
        assert!(out.report.converged);
        assert_eq!(out.report.iterations, 1);

        let scaled = logistic::rescale_times(&series.t);
        let x = logistic::monomials(&scaled, 2);
        let ones = DVector::from_element(60, 1.0);
        let b = m_step_regression(&series.y, &x, &ones, DEFAULT_COV_FLOOR).unwrap();
        let sigma = m_step_covariance(&series.y, &x, &b, &ones, opts.cov_floor);
        assert!((&out.model.regimes[0].coefficients - &b).amax() < 1e-12);
        assert!((&out.model.regimes[0].covariance - &sigma).amax() < 1e-12);
    }

    #[test]
    fn iteration_cap_reports_not_converged() {
        let series = simulate_k1_series(40);
        let hyper = Hyperparams::shared(1, 1, 1);
        let opts = EmOptions {
            max_iter: 1,
            restarts: 1,
            ..EmOptions::default()
        };
        let out = fit(&series, &hyper, &opts).unwrap();
        assert_eq!(out.report.iterations, 1);
        assert!(!out.report.converged);
        assert_eq!(out.report.loglik_history.len(), 2);
    }

    #[test]
    fn fit_history_is_monotone_and_deterministic() {
        let series = crate::simulate::tests::three_regime_series(240, 7);
        let hyper = Hyperparams::shared(3, 0, 1);
        let opts = EmOptions {
            restarts: 2,
            seed: 11,
            ..EmOptions::default()
        };
        let a = fit(&series, &hyper, &opts).unwrap();
        let b = fit(&series, &hyper, &opts).unwrap();
        assert_eq!(a.report.loglik_history, b.report.loglik_history);
        assert!(a.report.monotonicity_violations().is_empty());
        // Posterior rows sum to one.
        a.posterior.validate().unwrap();
        // Covariances stay floored.
        for regime in &a.model.regimes {
            let eig = nalgebra::SymmetricEigen::new(regime.covariance.clone());
            assert!(eig
                .eigenvalues
                .iter()
                .all(|&l| l >= opts.cov_floor * (1.0 - 1e-12)));
        }
    }

    #[test]
    fn fit_scaling_equivariance() {
        // Soft transitions keep the logistic solve well-conditioned, so
        // the two runs follow the same iterate path.
        let spec = crate::simulate::SimulationSpec {
            model: crate::simulate::tests::three_regime_model(8.0),
            n: 240,
            t_start: 0.0,
            t_end: 10.0,
            seed: 3,
        };
        let series = crate::simulate::simulate(&spec).unwrap().0;
        let c = 2.5;
        let scaled_series =
            TimeSeries::new(series.t.clone(), series.y.clone() * c).unwrap();
        let hyper = Hyperparams::shared(3, 0, 1);
        let opts = EmOptions {
            restarts: 1,
            seed: 1,
            tol: 1e-12,
            max_iter: 1000,
            ..EmOptions::default()
        };
        let base = fit(&series, &hyper, &opts).unwrap();
        let scaled = fit(&scaled_series, &hyper, &opts).unwrap();
        for (br, sr) in base.model.regimes.iter().zip(&scaled.model.regimes) {
            let b_scaled = &br.coefficients * c;
            let rel = (&sr.coefficients - &b_scaled).amax() / (1.0 + b_scaled.amax());
            assert!(rel < 1e-6, "coefficients deviate: {rel}");
            let cov_scaled = &br.covariance * (c * c);
            let rel = (&sr.covariance - &cov_scaled).amax() / (1.0 + cov_scaled.amax());
            assert!(rel < 1e-6, "covariances deviate: {rel}");
        }
    }

    #[test]
    fn kmeans_init_also_fits() {
        let series = crate::simulate::tests::three_regime_series(200, 19);
        let hyper = Hyperparams::shared(3, 0, 1);
        let opts = EmOptions {
            restarts: 2,
            seed: 3,
            init: InitStrategy::KmeansTimeWindows,
            ..EmOptions::default()
        };
        let out = fit(&series, &hyper, &opts).unwrap();
        assert!(out.report.monotonicity_violations().is_empty());
    }

    #[test]
    fn short_series_records_warning() {
        let series = simulate_k1_series(8);
        let hyper = Hyperparams::shared(3, 2, 1);
        let opts = EmOptions {
            restarts: 1,
            ..EmOptions::default()
        };
        let out = fit(&series, &hyper, &opts).unwrap();
        assert!(!out.report.warnings.is_empty());
    }

    #[test]
    fn random_blocks_respect_minimum_length() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..200 {
            let blocks = random_blocks(50, 4, 3, &mut rng).unwrap();
            assert_eq!(blocks.iter().sum::<usize>(), 50);
            assert!(blocks.iter().all(|&b| b >= 3));
        }
        // Too short for the minimum: falls back to an equal-ish split.
        let blocks = random_blocks(7, 3, 5, &mut rng).unwrap();
        assert_eq!(blocks.iter().sum::<usize>(), 7);
        assert!(blocks.iter().all(|&b| b >= 1));
        assert!(random_blocks(2, 3, 1, &mut rng).is_err());
    }

    #[test]
    fn worst_window_finds_low_density_run() {
        let mut row_ll = vec![-1.0; 20];
        for v in row_ll.iter_mut().skip(12).take(5) {
            *v = -40.0;
        }
        assert_eq!(worst_window(&row_ll, 5), 12);
    }

    #[test]
    fn rescue_reseeds_from_worst_explained_block() {
        // Mixture explains everything well except samples 30..40, which sit
        // at level 50. The rescued component must move there.
        let n = 60;
        let t: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
        let x = logistic::monomials(&t, 0);
        let y = DMatrix::from_fn(n, 1, |i, _| if (30..40).contains(&i) { 50.0 } else { 0.1 });
        let mut row_ll = vec![-1.0; n];
        for v in row_ll.iter_mut().skip(30).take(10) {
            *v = -500.0;
        }
        let (b, sigma) = rescue_component(&y, &x, &row_ll, 0, 2, 1e-6).unwrap();
        assert!((b[(0, 0)] - 50.0).abs() < 20.0, "rescued mean {}", b[(0, 0)]);
        assert!(sigma[(0, 0)] >= 1e-6);
    }
}
