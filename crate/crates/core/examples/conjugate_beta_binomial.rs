//! Beta-binomial posterior from the sampler against the closed form.

use evsynth::graph::{GraphBuilder, Observation, Prior, Support};
use evsynth::sampler::{default_monitors, run_chains, summarize_quantity, SamplerConfig};
use evsynth::synthgen::{
    beta_cdf_integer, conjugate_posterior_oracle, ks_critical_1pct, ks_statistic,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (x, n) = (7, 10);
    let mut b = GraphBuilder::new();
    let pi = b.add_basic(
        "pi",
        Support::UnitInterval,
        Prior::Uniform {
            lower: 0.0,
            upper: 1.0,
        },
    )?;
    b.add_data("y", vec![pi], Observation::Binomial { x, n })?;
    let graph = b.freeze()?;

    let config = SamplerConfig {
        iterations: 1_000 + 80_000,
        burnin: 1_000,
        thin: 10,
        ..SamplerConfig::default()
    };
    let chains = run_chains(&graph, &config, &default_monitors(&graph))?;
    let s = summarize_quantity(&chains, "pi")?;
    let (a, b) = conjugate_posterior_oracle(x, n);
    println!(
        "posterior mean {:.4} (exact {:.4}), ESS {:.0}, R-hat {:.4}",
        s.mean,
        a / (a + b),
        s.ess,
        s.rhat.unwrap_or(f64::NAN)
    );
    println!("95% interval ({:.4}, {:.4})", s.q025, s.q975);

    let draws: Vec<f64> = chains.iter().flat_map(|c| c.column(0)).collect();
    let ks = ks_statistic(&draws, |t| beta_cdf_integer(a as u64, b as u64, t));
    println!(
        "KS distance to Beta({a}, {b}): {ks:.4} (1% critical {:.4})",
        ks_critical_1pct(draws.len())
    );
    Ok(())
}
