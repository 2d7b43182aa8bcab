//! Prevalence in lower-risk heterosexual men has no direct survey. With
//! the log odds ratio hierarchy it borrows strength from women and from
//! the other male groups; without it only the prior remains.

use std::path::Path;

use evsynth::prevalence::{build_prevalence_graph, ModelConfig};
use evsynth::sampler::{default_monitors, run_chains, summarize_quantity, SamplerConfig};

fn fit(
    config: &ModelConfig,
    quantity: &str,
) -> Result<(f64, f64, f64), Box<dyn std::error::Error>> {
    let graph = build_prevalence_graph(config)?.graph;
    let mut monitors = default_monitors(&graph);
    monitors.extend(graph.id(quantity));
    let chains = run_chains(&graph, &SamplerConfig::default(), &monitors)?;
    let s = summarize_quantity(&chains, quantity)?;
    Ok((s.median, s.q025, s.q975))
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/borrowing.toml");
    let mut config = ModelConfig::load(&path)?;
    let quantity = "pi.male-lr.inner-london";
    for hierarchy in [true, false] {
        config.hyperpriors.hierarchy = hierarchy;
        let (m, lo, hi) = fit(&config, quantity)?;
        let label = if hierarchy { "linked" } else { "independent" };
        println!(
            "{label:<12} {quantity} {m:.5} ({lo:.5}, {hi:.5}), width {:.5}",
            hi - lo
        );
    }
    Ok(())
}
