//! The weighted multinomial logistic sub-problem on its own: fit
//! time-dependent prior probabilities to given responsibilities by IRLS.
//!
//!     cargo run --release --example irls_priors

use nalgebra::DMatrix;
use mrhlp::model::{LogisticWeights, PosteriorMatrix};
use mrhlp::{build_covariates, irls_fit, priors, IrlsOptions};

fn main() -> mrhlp::Result<()> {
    // One-hot responsibilities over three phases of unequal length.
    let n = 90;
    let t: Vec<f64> = (0..n).map(|i| i as f64 * 0.5).collect();
    let mut tau = DMatrix::zeros(n, 3);
    for i in 0..n {
        let k = if i < 25 {
            0
        } else if i < 70 {
            1
        } else {
            2
        };
        tau[(i, k)] = 1.0;
    }
    let tau = PosteriorMatrix::new(tau)?;

    let v = build_covariates(&t, 1);
    let fit = irls_fit(&v, &tau, &LogisticWeights::zeros(3, 1), &IrlsOptions::default())?;
    println!(
        "IRLS finished after {} iterations, Q_w = {:.4}",
        fit.iterations, fit.q_w
    );
    println!("weights (last row is the reference class):");
    for a in 0..3 {
        println!("  w_{} = ({:.3}, {:.3})", a + 1, fit.weights.w[(a, 0)], fit.weights.w[(a, 1)]);
    }

    // Where the fitted priors switch regimes.
    let pi = priors(&v, &fit.weights)?;
    let mut previous = 0;
    for i in 0..n {
        let label = (0..3).max_by(|&a, &b| pi[(i, a)].partial_cmp(&pi[(i, b)]).unwrap()).unwrap();
        if label != previous {
            println!("switch to regime {} at sample {i} (true boundary 25/70)", label + 1);
            previous = label;
        }
    }
    Ok(())
}
