//! Joint segmentation of multivariate time series with a hidden logistic
//! process regression model.
//!
//! A series of `n` observations in `R^d` is modeled as switching between
//! `K` polynomial regression regimes. The active regime at each time point
//! is a latent variable drawn from a multinomial whose probabilities are a
//! softmax of polynomial functions of time, so segment boundaries are
//! learned jointly with the per-regime dynamics. Training maximizes the
//! observed-data log-likelihood with a dedicated EM algorithm whose M-step
//! combines closed-form weighted least squares with a multi-class IRLS
//! solver for the logistic weights. The number of regimes can be chosen by
//! BIC, and segmentations are scored against ground truth with optimal
//! unsupervised label matching.
//!
//! ```
//! use mrhlp::{EmOptions, Hyperparams};
//!
//! let series = mrhlp::demo_series(300, 7);
//! let out = mrhlp::fit(&series, &Hyperparams::shared(3, 0, 1), &EmOptions::default())?;
//! let segmentation = mrhlp::map_segment(&series, &out.model)?;
//! assert!(segmentation.runs().len() <= 3);
//! # Ok::<(), mrhlp::Error>(())
//! ```
//!
//! ## Runnable examples
//!
//! One example per capability, under `examples/`:
//!
//! - `simulate_series` — sample a labeled dataset from a hand-built model
//! - `fit_model` — train on simulated data and inspect the fit report
//! - `segment_series` — MAP segmentation and posterior labels
//! - `select_regime_count` — BIC grid search over the number of regimes
//! - `evaluate_segmentation` — unsupervised label matching and error rates
//! - `irls_priors` — the weighted logistic sub-problem on its own
//! - `plot_segmentation` — render a fitted segmentation as SVG
//!
//! ```text
//! cargo run --release --example fit_model
//! ```
//!
//! The `mrhlp` binary exposes the same capabilities as subcommands
//! (`fit`, `segment`, `simulate`, `select`, `eval`, `plot`); see the
//! repository README for the file formats.

pub mod cli;
pub mod em;
pub mod error;
pub mod io;
pub mod logistic;
pub mod model;
pub mod plot;
pub mod segmentation;
pub mod selection;
pub mod simulate;

pub use em::{e_step, fit, log_likelihood, EmOptions, FitOutput, InitStrategy};
pub use error::{Error, Result};
pub use logistic::{build_covariates, irls_fit, priors, CovariateMatrix, IrlsOptions};
pub use model::{
    num_free_params, validate_series, FitReport, Hyperparams, LogisticWeights, MrhlpModel,
    ParamCountMode, PosteriorMatrix, RegimeParams, Segmentation, TimeSeries,
};
pub use segmentation::{
    fp_fn_rates, map_segment, match_labels, posterior_segment, EvalReport, LabeledGroundTruth,
};
pub use selection::{bic, select, SelectionGrid, SelectionOutcome};
pub use simulate::{finite_diff_grad, naive_loglik, simulate, SimulationSpec};

/// A small labeled demo dataset: three well-separated constant regimes in
/// three channels over contiguous segments. Used by doc tests and
/// examples.
pub fn demo_series(n: usize, seed: u64) -> TimeSeries {
    demo_spec(n, seed).and_then(|spec| simulate::simulate(&spec).map(|(s, _)| s))
        .expect("demo model is valid")
}

/// The simulation spec behind [`demo_series`].
pub fn demo_spec(n: usize, seed: u64) -> Result<SimulationSpec> {
    use nalgebra::{DMatrix, dmatrix};
    let hyper = Hyperparams::shared(3, 0, 1);
    // Steep logits whose upper envelope switches regimes at one third and
    // two thirds of the time span.
    let weights = LogisticWeights::new(DMatrix::from_row_slice(
        3,
        2,
        &[2000.0, -4000.0, 4000.0 / 3.0, -2000.0, 0.0, 0.0],
    ))?;
    let cov = DMatrix::identity(3, 3) * 0.25;
    let regimes = vec![
        RegimeParams::new(dmatrix![0.0, 0.0, 0.0], cov.clone()),
        RegimeParams::new(dmatrix![6.0, 6.0, 6.0], cov.clone()),
        RegimeParams::new(dmatrix![12.0, 12.0, 12.0], cov),
    ];
    Ok(SimulationSpec {
        model: MrhlpModel::new(hyper, weights, regimes)?,
        n,
        t_start: 0.0,
        t_end: 10.0,
        seed,
    })
}
