//! BIC computation and grid search over (K, p, u) for choosing the number
//! of regimes.

use rayon::prelude::*;

use crate::em::{self, EmOptions};
use crate::error::{Error, Result};
use crate::model::{
    num_free_params_with_mode, FitReport, Hyperparams, ParamCountMode, TimeSeries,
};

/// Deterministic seed stride between grid cells so every cell is
/// reproducible in isolation.
const CELL_SEED_STRIDE: u64 = 1009;

/// Inclusive search ranges for the hyperparameter grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectionGrid {
    pub k_min: usize,
    pub k_max: usize,
    pub p_min: usize,
    pub p_max: usize,
    pub u_min: usize,
    pub u_max: usize,
}

impl SelectionGrid {
    /// Grid over K only, with fixed p and u.
    pub fn over_k(k_min: usize, k_max: usize, p: usize, u: usize) -> Self {
        SelectionGrid {
            k_min,
            k_max,
            p_min: p,
            p_max: p,
            u_min: u,
            u_max: u,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_min == 0 || self.k_min > self.k_max || self.p_min > self.p_max
            || self.u_min > self.u_max
        {
            return Err(Error::InvalidOptions {
                reason: "selection grid ranges must be non-empty with K >= 1".into(),
            });
        }
        Ok(())
    }

    /// All grid cells in deterministic (K, p, u) order.
    pub fn cells(&self) -> Vec<Hyperparams> {
        let mut cells = Vec::new();
        for k in self.k_min..=self.k_max {
            for p in self.p_min..=self.p_max {
                for u in self.u_min..=self.u_max {
                    cells.push(Hyperparams::shared(k, p, u));
                }
            }
        }
        cells
    }
}

/// BIC from a log-likelihood and an explicit free-parameter count:
/// `L - nu * ln(n) / 2`. Higher is better.
pub fn bic_value(loglik: f64, nu: usize, n: f64) -> f64 {
    loglik - nu as f64 * n.ln() / 2.0
}

/// BIC of a fitted model under the general parameter count.
pub fn bic(loglik: f64, hyper: &Hyperparams, d: usize, n: usize) -> f64 {
    bic_with_mode(loglik, hyper, d, n, ParamCountMode::General)
}

pub fn bic_with_mode(
    loglik: f64,
    hyper: &Hyperparams,
    d: usize,
    n: usize,
    mode: ParamCountMode,
) -> f64 {
    bic_value(loglik, num_free_params_with_mode(hyper, d, mode), n as f64)
}

/// One fitted grid cell.
#[derive(Debug, Clone)]
pub struct SelectionEntry {
    pub hyper: Hyperparams,
    pub report: FitReport,
    /// Free-parameter count used in the penalty.
    pub nu: usize,
}

/// Grid search outcome: cells ranked by BIC (descending, ties toward the
/// smaller parameter count) plus the cells that failed numerically.
#[derive(Debug, Clone)]
pub struct SelectionOutcome {
    pub ranked: Vec<SelectionEntry>,
    pub failed: Vec<(Hyperparams, String)>,
}

impl SelectionOutcome {
    /// Hyperparameters of the top-ranked cell.
    pub fn best(&self) -> Option<&SelectionEntry> {
        self.ranked.first()
    }
}

/// Fits every cell of the grid (each with full restarts) and ranks the
/// results by BIC. Cells run independently and may execute in parallel;
/// results are merged in grid order before ranking, so the outcome is
/// deterministic.
pub fn select(
    series: &TimeSeries,
    grid: &SelectionGrid,
    opts: &EmOptions,
) -> Result<SelectionOutcome> {
    select_with_mode(series, grid, opts, ParamCountMode::General)
}

pub fn select_with_mode(
    series: &TimeSeries,
    grid: &SelectionGrid,
    opts: &EmOptions,
    mode: ParamCountMode,
) -> Result<SelectionOutcome> {
    series.validate()?;
    grid.validate()?;
    opts.validate()?;

    let cells = grid.cells();
    let fits: Vec<(Hyperparams, std::result::Result<em::FitOutput, Error>)> = cells
        .into_par_iter()
        .enumerate()
        .map(|(idx, hyper)| {
            let cell_opts = EmOptions {
                seed: opts.seed.wrapping_add(idx as u64 * CELL_SEED_STRIDE),
                ..opts.clone()
            };
            let fit = em::fit(series, &hyper, &cell_opts);
            (hyper, fit)
        })
        .collect();

    let mut ranked = Vec::new();
    let mut failed = Vec::new();
    for (hyper, fit) in fits {
        match fit {
            Ok(out) => {
                let nu = num_free_params_with_mode(&hyper, series.dim(), mode);
                let bic = bic_value(out.report.final_loglik(), nu, series.len() as f64);
                let report = FitReport { bic, ..out.report };
                ranked.push(SelectionEntry { hyper, report, nu });
            }
            Err(e) => failed.push((hyper, e.to_string())),
        }
    }
    ranked.sort_by(|a, b| {
        b.report
            .bic
            .partial_cmp(&a.report.bic)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.nu.cmp(&b.nu))
    });
    Ok(SelectionOutcome { ranked, failed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn bic_penalty_examples() {
        // L = 0, nu = 2, n = e^2: penalty is exactly 2.
        assert_relative_eq!(
            bic_value(0.0, 2, std::f64::consts::E * std::f64::consts::E),
            -2.0,
            epsilon = 1e-12
        );
        // Standard-normal pair: L = -ln(2pi), nu = 2, n = 2.
        let h = Hyperparams::shared(1, 0, 1);
        let expected = -1.8378770664093453 - 2.0 * (2.0f64).ln() / 2.0;
        assert_relative_eq!(bic(-1.8378770664093453, &h, 1, 2), expected, epsilon = 1e-9);
        assert_relative_eq!(bic(-1.8378770664093453, &h, 1, 2), -2.531024, epsilon = 1e-6);
    }

    #[test]
    fn bic_strictly_decreasing_in_parameter_count() {
        let l = -100.0;
        let n = 50;
        let mut prev = f64::INFINITY;
        for k in 1..6 {
            let h = Hyperparams::shared(k, 1, 1);
            let b = bic(l, &h, 2, n);
            assert!(b < prev);
            prev = b;
        }
    }

    #[test]
    fn legacy_mode_changes_penalty_only() {
        let h = Hyperparams::shared(3, 2, 1);
        let general = bic_with_mode(-10.0, &h, 1, 100, ParamCountMode::General);
        let legacy = bic_with_mode(-10.0, &h, 1, 100, ParamCountMode::UnivariateLegacy);
        let nu_g = crate::model::num_free_params(&h, 1) as f64;
        let nu_l = (3 * (2 + 4) - 2) as f64;
        assert_relative_eq!(general - legacy, (nu_l - nu_g) * (100.0f64).ln() / 2.0);
    }

    #[test]
    fn singleton_grid_returns_one_ranked_cell() {
        let series = crate::simulate::tests::three_regime_series(150, 5);
        let grid = SelectionGrid::over_k(3, 3, 0, 1);
        let opts = EmOptions {
            restarts: 2,
            seed: 1,
            ..EmOptions::default()
        };
        let outcome = select(&series, &grid, &opts).unwrap();
        assert_eq!(outcome.ranked.len(), 1);
        assert!(outcome.failed.is_empty());
        assert_eq!(outcome.best().unwrap().hyper.k, 3);
    }

    #[test]
    fn grid_over_u_exercises_both_cells() {
        let series = crate::simulate::tests::two_regime_series(120, 9);
        let grid = SelectionGrid {
            k_min: 2,
            k_max: 2,
            p_min: 0,
            p_max: 0,
            u_min: 0,
            u_max: 1,
        };
        let opts = EmOptions {
            restarts: 2,
            seed: 7,
            ..EmOptions::default()
        };
        let outcome = select(&series, &grid, &opts).unwrap();
        assert_eq!(outcome.ranked.len(), 2);
        // Every non-failed cell appears exactly once.
        let mut us: Vec<usize> = outcome.ranked.iter().map(|e| e.hyper.u).collect();
        us.sort_unstable();
        assert_eq!(us, vec![0, 1]);
        // Ranking is by BIC descending.
        assert!(outcome.ranked[0].report.bic >= outcome.ranked[1].report.bic);
    }

    #[test]
    fn select_is_deterministic() {
        let series = crate::simulate::tests::three_regime_series(150, 5);
        let grid = SelectionGrid::over_k(1, 3, 0, 1);
        let opts = EmOptions {
            restarts: 2,
            seed: 3,
            ..EmOptions::default()
        };
        let a = select(&series, &grid, &opts).unwrap();
        let b = select(&series, &grid, &opts).unwrap();
        let key = |o: &SelectionOutcome| -> Vec<(usize, String)> {
            o.ranked
                .iter()
                .map(|e| (e.hyper.k, format!("{:.17e}", e.report.bic)))
                .collect()
        };
        assert_eq!(key(&a), key(&b));
    }
}
