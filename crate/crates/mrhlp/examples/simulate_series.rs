//! Sample a labeled dataset from a hand-built model and write it as CSV.
//!
//!     cargo run --release --example simulate_series

use nalgebra::{dmatrix, DMatrix};
use mrhlp::{
    Hyperparams, LogisticWeights, MrhlpModel, RegimeParams, SimulationSpec,
};

fn main() -> mrhlp::Result<()> {
    // Two regimes in two channels: a rising line handing over to a flat
    // noisy plateau halfway through the observation window.
    let hyper = Hyperparams::shared(2, 1, 1);
    let weights = LogisticWeights::new(dmatrix![30.0, -60.0; 0.0, 0.0])?;
    let regimes = vec![
        RegimeParams::new(dmatrix![0.0, 1.0; 4.0, -2.0], DMatrix::identity(2, 2) * 0.05),
        RegimeParams::new(dmatrix![3.0, -0.5; 0.0, 0.0], DMatrix::identity(2, 2) * 0.10),
    ];
    let model = MrhlpModel::new(hyper, weights, regimes)?;

    let spec = SimulationSpec {
        model,
        n: 400,
        t_start: 0.0,
        t_end: 20.0,
        seed: 42,
    };
    let (series, truth) = mrhlp::simulate(&spec)?;

    let mut counts = [0usize; 2];
    for &z in &truth.labels {
        counts[z] += 1;
    }
    println!("simulated {} samples in {} channels", series.len(), series.dim());
    println!("regime occupancy: {} / {}", counts[0], counts[1]);

    let path = "simulated.csv";
    mrhlp::io::write_csv(
        std::fs::File::create(path)?,
        &series,
        &mrhlp::io::default_channel_names(series.dim()),
        Some(&truth.labels),
    )?;
    println!("wrote {path}");
    Ok(())
}
