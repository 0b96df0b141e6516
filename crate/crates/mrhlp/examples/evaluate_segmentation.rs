//! Score an unsupervised segmentation against ground truth: optimal label
//! matching, confusion matrix and per-class error rates.
//!
//!     cargo run --release --example evaluate_segmentation

use mrhlp::{EmOptions, Hyperparams};

fn main() -> mrhlp::Result<()> {
    let spec = mrhlp::demo_spec(900, 31)?;
    let (series, truth) = mrhlp::simulate(&spec)?;
    let opts = EmOptions {
        restarts: 5,
        seed: 3,
        ..EmOptions::default()
    };
    let out = mrhlp::fit(&series, &Hyperparams::shared(3, 0, 1), &opts)?;
    let segmentation = mrhlp::map_segment(&series, &out.model)?;

    let report = mrhlp::match_labels(&segmentation.labels, &truth.labels)?;
    println!("accuracy after matching: {:.4}", report.accuracy);
    println!(
        "label map: {:?}",
        report
            .permutation
            .iter()
            .enumerate()
            .map(|(from, &to)| (report.classes[from] + 1, report.classes[to] + 1))
            .collect::<Vec<_>>()
    );
    println!("confusion (rows = true, cols = obtained):");
    for row in &report.confusion {
        println!("  {row:?}");
    }
    for (k, class) in report.classes.iter().enumerate() {
        println!(
            "class {}: FP {:.2}%  FN {:.2}%",
            class + 1,
            report.fp_rates[k],
            report.fn_rates[k]
        );
    }
    Ok(())
}
