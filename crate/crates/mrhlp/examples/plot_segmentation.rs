//! Render a fitted segmentation as a self-contained SVG: one panel per
//! channel with shaded segments, plus the regime probability curves.
//!
//!     cargo run --release --example plot_segmentation

use mrhlp::{EmOptions, Hyperparams};

fn main() -> mrhlp::Result<()> {
    let series = mrhlp::demo_series(600, 17);
    let opts = EmOptions {
        restarts: 5,
        seed: 5,
        ..EmOptions::default()
    };
    let out = mrhlp::fit(&series, &Hyperparams::shared(3, 0, 1), &opts)?;
    let segmentation = mrhlp::map_segment(&series, &out.model)?;

    let svg = mrhlp::plot::render_svg(
        &series.t,
        &series.y,
        &mrhlp::io::default_channel_names(series.dim()),
        &segmentation,
    )?;
    let path = "segmentation.svg";
    std::fs::write(path, svg)?;
    println!(
        "wrote {path} ({} segments over {} samples)",
        segmentation.runs().len(),
        series.len()
    );
    Ok(())
}
