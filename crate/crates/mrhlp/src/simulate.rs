//! Sampling from the generative model, plus brute-force reference
//! implementations used as independent oracles in the test suites.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::logistic::{self, CovariateMatrix};
use crate::model::{LogisticWeights, MrhlpModel, TimeSeries, DEFAULT_COV_FLOOR};
use crate::segmentation::LabeledGroundTruth;

/// Everything needed to sample one dataset from a model.
#[derive(Debug, Clone)]
pub struct SimulationSpec {
    pub model: MrhlpModel,
    /// Number of samples on the uniform time grid.
    pub n: usize,
    pub t_start: f64,
    pub t_end: f64,
    pub seed: u64,
}

impl SimulationSpec {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.n == 0 {
            return Err(Error::InvalidOptions {
                reason: "simulation needs n >= 1".into(),
            });
        }
        if self.t_end <= self.t_start {
            return Err(Error::InvalidOptions {
                reason: "t_end must exceed t_start".into(),
            });
        }
        Ok(())
    }
}

/// Samples a labeled series: `t` is a uniform grid over the time span,
/// each label is drawn from the time-dependent multinomial prior, and each
/// observation is the regime's polynomial mean plus correlated Gaussian
/// noise.
///
/// Sample `i` uses its own ChaCha8 stream (`set_stream(i)`) off the spec
/// seed, so serial and parallel generation agree and results are
/// bit-reproducible.
pub fn simulate(spec: &SimulationSpec) -> Result<(TimeSeries, LabeledGroundTruth)> {
    spec.validate()?;
    let n = spec.n;
    let k = spec.model.hyper.k;
    let d = spec.model.dim();

    let t: Vec<f64> = if n == 1 {
        vec![spec.t_start]
    } else {
        (0..n)
            .map(|i| {
                spec.t_start + (spec.t_end - spec.t_start) * i as f64 / (n - 1) as f64
            })
            .collect()
    };
    let scaled = logistic::rescale_times(&t);
    let v = CovariateMatrix {
        v: logistic::monomials(&scaled, spec.model.hyper.u),
    };
    let pi = logistic::priors(&v, &spec.model.weights)?;

    // Per-regime mean curves and noise factors. Degenerate covariances
    // are floored exactly as the trainer floors them.
    let mut means = Vec::with_capacity(k);
    let mut factors = Vec::with_capacity(k);
    for (r, regime) in spec.model.regimes.iter().enumerate() {
        let x = logistic::monomials(&scaled, spec.model.hyper.degrees[r]);
        means.push(x * &regime.coefficients);
        let floored = crate::em::floor_spd(regime.covariance.clone(), DEFAULT_COV_FLOOR);
        let chol = nalgebra::Cholesky::new(floored)
            .ok_or(Error::NonPdCovariance { regime: r })?;
        factors.push(chol.unpack());
    }

    let mut y = DMatrix::zeros(n, d);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(i as u64);
        // Multinomial draw over the prior row.
        let mut z = k - 1;
        let mut acc = 0.0;
        let coin: f64 = rng.random();
        for r in 0..k {
            acc += pi[(i, r)];
            if coin < acc {
                z = r;
                break;
            }
        }
        labels.push(z);
        let noise: DVector<f64> =
            DVector::from_iterator(d, (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let e = &factors[z] * noise;
        for j in 0..d {
            y[(i, j)] = means[z][(i, j)] + e[j];
        }
    }

    Ok((TimeSeries::new(t, y)?, LabeledGroundTruth { labels }))
}

/// Direct, non-log-space evaluation of the observed-data log-likelihood:
/// plain densities, plain summation, explicit matrix inverses. Slow and
/// underflow-prone by design; it exists to cross-check the trainer on
/// small instances.
pub fn naive_loglik(series: &TimeSeries, model: &MrhlpModel) -> Result<f64> {
    series.validate()?;
    model.validate()?;
    let d = series.dim();
    let k = model.hyper.k;
    let scaled = logistic::rescale_times(&series.t);
    let two_pi = 2.0 * std::f64::consts::PI;

    let mut total = 0.0;
    for (i, &s) in scaled.iter().enumerate() {
        // Logistic priors by direct exponentiation.
        let mut logits = Vec::with_capacity(k);
        for r in 0..k {
            let mut logit = 0.0;
            let mut pow = 1.0;
            for j in 0..=model.hyper.u {
                logit += model.weights.w[(r, j)] * pow;
                pow *= s;
            }
            logits.push(logit.exp());
        }
        let logit_sum: f64 = logits.iter().sum();

        let mut mixture = 0.0;
        for (r, regime) in model.regimes.iter().enumerate() {
            let pi_r = logits[r] / logit_sum;
            // Polynomial mean at this time point.
            let mut mean: DVector<f64> = DVector::zeros(d);
            let mut pow = 1.0;
            for row in 0..regime.coefficients.nrows() {
                for j in 0..d {
                    mean[j] += regime.coefficients[(row, j)] * pow;
                }
                pow *= s;
            }
            let diff: DVector<f64> =
                DVector::from_iterator(d, (0..d).map(|j| series.y[(i, j)] - mean[j]));
            let det = regime.covariance.determinant();
            let inv = regime
                .covariance
                .clone()
                .try_inverse()
                .ok_or(Error::NonPdCovariance { regime: r })?;
            let quad: f64 = (diff.transpose() * inv * &diff)[(0, 0)];
            let dens = (-0.5 * quad).exp() / (two_pi.powi(d as i32) * det).sqrt();
            mixture += pi_r * dens;
        }
        total += mixture.ln();
    }
    Ok(total)
}

/// Central finite differences of a scalar objective over the free rows of
/// the logistic weights (the last row stays pinned at zero).
pub fn finite_diff_grad<F>(objective: F, w: &LogisticWeights, h: f64) -> DMatrix<f64>
where
    F: Fn(&LogisticWeights) -> f64,
{
    assert!(h > 0.0, "step must be positive");
    let k_free = w.num_regimes() - 1;
    let cols = w.w.ncols();
    let mut grad = DMatrix::zeros(k_free, cols);
    for a in 0..k_free {
        for j in 0..cols {
            let mut plus = w.clone();
            plus.w[(a, j)] += h;
            let mut minus = w.clone();
            minus.w[(a, j)] -= h;
            grad[(a, j)] = (objective(&plus) - objective(&minus)) / (2.0 * h);
        }
    }
    grad
}
