//! Choose the number of regimes by BIC over a grid of candidate K.
//!
//!     cargo run --release --example select_regime_count

use mrhlp::{EmOptions, SelectionGrid};

fn main() -> mrhlp::Result<()> {
    let series = mrhlp::demo_series(900, 23);
    let grid = SelectionGrid::over_k(1, 5, 0, 1);
    let opts = EmOptions {
        restarts: 5,
        seed: 9,
        max_iter: 100,
        ..EmOptions::default()
    };
    let outcome = mrhlp::select(&series, &grid, &opts)?;

    println!("{:>3} {:>12} {:>5} {:>12} {:>10}", "K", "loglik", "nu", "BIC", "converged");
    for entry in &outcome.ranked {
        println!(
            "{:>3} {:>12.3} {:>5} {:>12.3} {:>10}",
            entry.hyper.k,
            entry.report.final_loglik(),
            entry.nu,
            entry.report.bic,
            entry.report.converged
        );
    }
    if let Some(best) = outcome.best() {
        println!("selected K = {}", best.hyper.k);
    }
    Ok(())
}
