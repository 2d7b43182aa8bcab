use rand::RngCore;
use rayon::prelude::*;

use super::{draw_prior, simulate_values, Design};
use crate::graph::{Graph, NodeId};
use crate::sampler::{chain_rng, run_chains, SamplerConfig};

/// Deliberate mismatch between simulation and fit, for negative controls.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Corruption {
    None,
    /// Binomial data are simulated at `factor × ψ` (capped at one).
    ScaleProbabilities(f64),
}

/// Rank of each truth among its own posterior draws, per replication.
#[derive(Debug, Clone, PartialEq)]
pub struct SbcRun {
    pub quantities: Vec<String>,
    /// Posterior draws per replication; ranks lie in `[0, draws]`.
    pub draws: usize,
    /// `None` where the fit failed.
    pub ranks: Vec<Option<Vec<usize>>>,
    pub failures: Vec<(usize, String)>,
}

impl SbcRun {
    pub fn replications(&self) -> usize {
        self.ranks.len()
    }

    /// Pearson chi-square of the ranks of quantity `j` against uniformity
    /// over `bins` equal-width rank bins.
    pub fn chi_square(&self, j: usize, bins: usize) -> f64 {
        let slots = self.draws + 1;
        let bin_of = |r: usize| r * bins / slots;
        let mut expected_share = vec![0.0; bins];
        for r in 0..slots {
            expected_share[bin_of(r)] += 1.0 / slots as f64;
        }
        let mut observed = vec![0.0; bins];
        let mut n = 0.0;
        for ranks in self.ranks.iter().flatten() {
            observed[bin_of(ranks[j])] += 1.0;
            n += 1.0;
        }
        observed
            .iter()
            .zip(&expected_share)
            .map(|(o, p)| (o - n * p).powi(2) / (n * p))
            .sum()
    }

    /// Worst chi-square over all quantities.
    pub fn max_chi_square(&self, bins: usize) -> f64 {
        (0..self.quantities.len())
            .map(|j| self.chi_square(j, bins))
            .fold(0.0, f64::max)
    }
}

/// Simulation-based calibration over the graph's basic parameters.
pub fn run_sbc(
    graph: &Graph,
    design: &Design,
    replications: usize,
    config: &SamplerConfig,
) -> SbcRun {
    run_sbc_with(graph, design, replications, config, Corruption::None)
}

/// As [`run_sbc`], optionally simulating from a corrupted model.
/// Replication `r` draws its truth, data and sampler seed from stream `r`
/// of `config.seed`.
pub fn run_sbc_with(
    graph: &Graph,
    design: &Design,
    replications: usize,
    config: &SamplerConfig,
    corruption: Corruption,
) -> SbcRun {
    let monitors: Vec<NodeId> = graph.basic_nodes().collect();
    let scale = match corruption {
        Corruption::None => 1.0,
        Corruption::ScaleProbabilities(f) => f,
    };
    let results: Vec<Result<(Vec<usize>, usize), String>> = (0..replications)
        .into_par_iter()
        .map(|r| {
            let mut rng = chain_rng(config.seed, r);
            let truth = draw_prior(graph, &mut rng);
            let full = graph
                .evaluate_functionals(&truth)
                .map_err(|e| e.to_string())?;
            let data = simulate_values(graph, full.values(), design, scale, &mut rng);
            let fitted = graph.with_observations(data).map_err(|e| e.to_string())?;
            let cfg = SamplerConfig {
                seed: rng.next_u64(),
                ..config.clone()
            };
            let chains = run_chains(&fitted, &cfg, &monitors).map_err(|e| e.to_string())?;
            let draws = chains.iter().map(|c| c.samples.len()).sum();
            let ranks = monitors
                .iter()
                .enumerate()
                .map(|(j, id)| {
                    let t = truth.get(*id);
                    chains
                        .iter()
                        .flat_map(|c| c.samples.iter())
                        .filter(|row| row[j] < t)
                        .count()
                })
                .collect();
            Ok((ranks, draws))
        })
        .collect();

    let mut run = SbcRun {
        quantities: monitors
            .iter()
            .map(|id| graph.label(*id).to_string())
            .collect(),
        draws: config.chains * config.retained(),
        ranks: Vec::with_capacity(replications),
        failures: Vec::new(),
    };
    for (r, res) in results.into_iter().enumerate() {
        match res {
            Ok((ranks, _)) => run.ranks.push(Some(ranks)),
            Err(e) => {
                run.ranks.push(None);
                run.failures.push((r, e));
            }
        }
    }
    run
}
