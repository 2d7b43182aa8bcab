//! Simulation-based calibration of the reduced two-group model, with a
//! deliberately corrupted simulator as a negative control.

use std::path::Path;

use evsynth::prevalence::{build_prevalence_graph, ModelConfig};
use evsynth::sampler::SamplerConfig;
use evsynth::synthgen::{run_sbc, run_sbc_with, Corruption, Design, CHI_SQUARE_9_DF_1PCT};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/reduced.toml");
    let graph = build_prevalence_graph(&ModelConfig::load(&path)?)?.graph;
    let design = Design::from_graph(&graph);
    let config = SamplerConfig {
        chains: 1,
        burnin: 1_000,
        iterations: 1_000 + 99 * 10,
        thin: 10,
        ..SamplerConfig::default()
    };

    let run = run_sbc(&graph, &design, 100, &config);
    println!(
        "{} replications, {} failed",
        run.replications(),
        run.failures.len()
    );
    for (j, q) in run.quantities.iter().enumerate() {
        println!("{q:<32} chi-square {:.2}", run.chi_square(j, 10));
    }
    let bad = run_sbc_with(
        &graph,
        &design,
        100,
        &config,
        Corruption::ScaleProbabilities(2.0),
    );
    println!(
        "corrupted simulator: max chi-square {:.2}",
        bad.max_chi_square(10)
    );
    println!("1% critical value {CHI_SQUARE_9_DF_1PCT:.3}");
    Ok(())
}
