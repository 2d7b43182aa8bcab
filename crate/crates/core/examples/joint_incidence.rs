//! Fits the joint prevalence and incidence model and prints the posterior
//! incidence rate for each interval next to the value used to simulate
//! the data.

use std::fs::File;
use std::path::Path;

use evsynth::cli::joint_graph;
use evsynth::prevalence::ModelConfig;
use evsynth::sampler::{default_monitors, run_chains, summarize_quantity, SamplerConfig};
use evsynth::synthgen::read_truth_csv;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    let path = dir.join("joint_msm.toml");
    let config = ModelConfig::load(&path)?;
    let (graph, joint) = joint_graph(&path, &config, &[])?;
    let truth = read_truth_csv(File::open(dir.join("joint_msm_truth.csv"))?)?;

    let chains = run_chains(&graph, &SamplerConfig::default(), &default_monitors(&graph))?;
    println!("interval  truth   median  (95% interval)");
    for t in 1..joint.years {
        let label = format!("lambda_su.{t}");
        let s = summarize_quantity(&chains, &label)?;
        let v = truth
            .iter()
            .find(|(q, _)| *q == label)
            .map(|(_, v)| *v)
            .unwrap_or(f64::NAN);
        println!(
            "{t:>8}  {v:.4}  {:.4}  ({:.4}, {:.4})",
            s.median, s.q025, s.q975
        );
    }
    Ok(())
}
