//! Segment a fitted series two ways: by the time-dependent prior
//! probabilities (contiguous by construction for u = 1) and by the
//! posterior responsibilities.
//!
//!     cargo run --release --example segment_series

use mrhlp::{EmOptions, Hyperparams};

fn main() -> mrhlp::Result<()> {
    let series = mrhlp::demo_series(600, 13);
    let opts = EmOptions {
        restarts: 5,
        seed: 1,
        ..EmOptions::default()
    };
    let out = mrhlp::fit(&series, &Hyperparams::shared(3, 0, 1), &opts)?;

    let segmentation = mrhlp::map_segment(&series, &out.model)?;
    println!("prior-based segments (regime, length):");
    for (label, len) in segmentation.runs() {
        println!("  regime {}: {len} samples", label + 1);
    }

    let posterior_labels = mrhlp::posterior_segment(&out.posterior);
    let agree = segmentation
        .labels
        .iter()
        .zip(&posterior_labels)
        .filter(|(a, b)| a == b)
        .count();
    println!(
        "posterior argmax agrees with the prior labeling on {agree}/{} samples",
        series.len()
    );
    Ok(())
}
