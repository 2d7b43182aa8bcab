//! Fits the synthetic England & Wales model and prints regional totals.

use std::path::Path;
use std::time::Instant;

use evsynth::prevalence::{build_prevalence_graph, ModelConfig};
use evsynth::sampler::{default_monitors, run_chains, summarize, SamplerConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/england_wales.toml");
    let config = ModelConfig::load(&path)?;
    let model = build_prevalence_graph(&config)?;
    println!(
        "{} basic θ parameters, {} data nodes",
        model.theta_dimension(),
        model.graph.data_nodes().len()
    );

    let start = Instant::now();
    let chains = run_chains(
        &model.graph,
        &SamplerConfig::default(),
        &default_monitors(&model.graph),
    )?;
    println!("sampled in {:.1?}", start.elapsed());

    let summary = summarize(&chains)?;
    let worst = summary.iter().filter_map(|s| s.rhat).fold(0.0f64, f64::max);
    println!("max R-hat {worst:.3}");
    for s in summary
        .iter()
        .filter(|s| s.quantity.starts_with("infected.") || s.quantity.starts_with("undiagnosed."))
    {
        println!(
            "{:<40} {:>8.0} ({:.0}, {:.0})",
            s.quantity, s.median, s.q025, s.q975
        );
    }
    Ok(())
}
