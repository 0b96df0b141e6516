//! Fit a three-regime model to simulated data and inspect the fit report.
//!
//!     cargo run --release --example fit_model

use mrhlp::{EmOptions, Hyperparams};

fn main() -> mrhlp::Result<()> {
    let series = mrhlp::demo_series(900, 7);
    let opts = EmOptions {
        restarts: 5,
        seed: 42,
        ..EmOptions::default()
    };
    let out = mrhlp::fit(&series, &Hyperparams::shared(3, 0, 1), &opts)?;

    let report = &out.report;
    println!(
        "converged: {} after {} iterations (winning restart {})",
        report.converged, report.iterations, report.restart_index
    );
    println!("log-likelihood: {:.4}", report.final_loglik());
    println!("BIC: {:.4}", report.bic);
    print!("trajectory:");
    for ll in &report.loglik_history {
        print!(" {ll:.2}");
    }
    println!();

    for (k, regime) in out.model.regimes.iter().enumerate() {
        let mean: Vec<f64> = (0..out.model.dim())
            .map(|j| regime.coefficients[(0, j)])
            .collect();
        println!("regime {}: mean {mean:?}", k + 1);
    }

    let path = "model.json";
    let metadata = mrhlp::io::ModelMetadata {
        seed: report.seed,
        loglik: report.final_loglik(),
        bic: report.bic,
    };
    mrhlp::io::write_model(std::fs::File::create(path)?, &out.model, Some(&metadata))?;
    println!("wrote {path}");
    Ok(())
}
