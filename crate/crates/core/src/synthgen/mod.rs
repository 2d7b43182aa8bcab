//! Synthetic truths and datasets drawn from a graph's own generative
//! process, plus the independent oracles that validate the engine.

mod oracle;
mod sbc;

use std::io::{Read, Write};

use rand::distr::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Binomial, Distribution, Gamma, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::graph::{Assignment, Graph, GraphError, Observation, Prior, Support};

pub use oracle::{
    beta_cdf_integer, conjugate_posterior_oracle, ks_critical_1pct, ks_statistic,
    linear_chain_oracle, CHI_SQUARE_9_DF_1PCT,
};
pub use sbc::{run_sbc, run_sbc_with, Corruption, SbcRun};

/// A full basic-parameter assignment and the seed that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub seed: u64,
    pub values: Assignment,
}

fn draw_truncated(
    support: Support,
    rng: &mut impl Rng,
    mut draw: impl FnMut(&mut dyn FnMut() -> f64) -> f64,
) -> f64 {
    let mut z = || rng.sample::<f64, _>(StandardNormal);
    for _ in 0..10_000 {
        let x = draw(&mut z);
        if support.contains(x) && !(support == Support::UnitInterval && (x == 0.0 || x == 1.0)) {
            return x;
        }
    }
    // Essentially no prior mass inside the support; fall back to the
    // midpoint so the draw stays valid.
    match support {
        Support::UnitInterval | Support::SimplexComponent => 0.5,
        Support::PositiveReal => 1.0,
        Support::Real => 0.0,
    }
}

/// One joint draw from every prior in the graph. Parents of hierarchical
/// priors are drawn before their children; normal priors are truncated
/// to the node's support by rejection.
pub fn draw_prior(graph: &Graph, rng: &mut impl Rng) -> Assignment {
    draw_with_sd_cap(graph, rng, f64::INFINITY)
}

/// Standard deviation cap for fixed normal priors when drawing chain
/// starting points.
pub const INIT_SD_CAP: f64 = 2.0;

/// A prior draw in which fixed normal priors use at most
/// [`INIT_SD_CAP`] as their standard deviation. Vague top-level means
/// otherwise start chains far out in the tails.
pub fn draw_initial(graph: &Graph, rng: &mut impl Rng) -> Assignment {
    draw_with_sd_cap(graph, rng, INIT_SD_CAP)
}

fn draw_with_sd_cap(graph: &Graph, rng: &mut impl Rng, sd_cap: f64) -> Assignment {
    let mut a = graph.assignment();
    for id in graph.basic_nodes() {
        if !a.get(id).is_nan() {
            continue;
        }
        let b = graph.basic(id).expect("basic");
        if let Some(block) = b.block {
            let block = graph.block(block);
            let mut draws: Vec<f64> = block
                .concentration
                .iter()
                .map(|c| {
                    Gamma::new(*c, 1.0)
                        .expect("positive concentration")
                        .sample(rng)
                        .max(f64::MIN_POSITIVE)
                })
                .collect();
            let total: f64 = draws.iter().sum();
            draws.iter_mut().for_each(|d| *d /= total);
            for (m, v) in block.members.iter().zip(draws) {
                a.set(*m, v);
            }
            continue;
        }
        let x = match &b.prior {
            Prior::Uniform { lower, upper } => {
                lower + (upper - lower) * rng.sample::<f64, _>(Open01)
            }
            Prior::Normal { mean, sd } => {
                let sd = sd.min(sd_cap);
                draw_truncated(b.support, rng, |z| mean + sd * z())
            }
            Prior::HalfNormal { sd } => draw_truncated(b.support, rng, |z| (sd * z()).abs()),
            Prior::HierarchicalNormal { mean, sd } => {
                let (m, s) = (a.get(*mean), a.get(*sd));
                draw_truncated(b.support, rng, |z| m + s * z())
            }
            Prior::Dirichlet { .. } => unreachable!("dirichlet priors live on blocks"),
        };
        a.set(id, x);
    }
    a
}

/// Seeded prior draw.
pub fn sample_prior(graph: &Graph, seed: u64) -> GroundTruth {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    GroundTruth {
        seed,
        values: draw_prior(graph, &mut rng),
    }
}

/// Sample size or exposure for one data node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DesignEntry {
    Binomial {
        n: u64,
    },
    Poisson {
        exposure: f64,
    },
    /// Size used when the node has no linked Poisson total.
    Multinomial {
        size: u64,
    },
}

/// Per-data-node design, in data-node order.
#[derive(Debug, Clone, PartialEq)]
pub struct Design(pub Vec<DesignEntry>);

impl Design {
    /// The sizes and exposures already attached to the graph's data.
    pub fn from_graph(graph: &Graph) -> Self {
        Design(
            (0..graph.data_nodes().len())
                .map(|i| match &graph.data_node(i).observation {
                    Observation::Binomial { n, .. } => DesignEntry::Binomial { n: *n },
                    Observation::Poisson { exposure, .. } => DesignEntry::Poisson {
                        exposure: *exposure,
                    },
                    Observation::Multinomial { counts, .. } => DesignEntry::Multinomial {
                        size: counts.iter().sum(),
                    },
                })
                .collect(),
        )
    }

    /// Every binomial node gets size `n`; other entries are kept.
    pub fn with_binomial_size(graph: &Graph, n: u64) -> Self {
        let mut d = Self::from_graph(graph);
        for e in &mut d.0 {
            if let DesignEntry::Binomial { n: size } = e {
                *size = n;
            }
        }
        d
    }
}

fn binomial(n: u64, p: f64, rng: &mut impl Rng) -> u64 {
    Binomial::new(n, p.clamp(0.0, 1.0))
        .expect("valid binomial")
        .sample(rng)
}

fn poisson(mean: f64, rng: &mut impl Rng) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).expect("positive mean").sample(rng) as u64
}

/// Draws every data node from its family at the functionals implied by
/// `values`. Binomial probabilities are multiplied by `probability_scale`
/// (capped at one), which is one for an honest simulation.
pub(crate) fn simulate_values(
    graph: &Graph,
    values: &[f64],
    design: &Design,
    probability_scale: f64,
    rng: &mut impl Rng,
) -> Vec<Observation> {
    let nd = graph.data_nodes().len();
    let mut out: Vec<Option<Observation>> = vec![None; nd];
    // Totals first so linked splits can use them.
    for pass in 0..2 {
        for i in 0..nd {
            let node = graph.data_node(i);
            let is_split = matches!(node.observation, Observation::Multinomial { .. });
            if is_split != (pass == 1) {
                continue;
            }
            let target = |j: usize| values[node.targets[j].index()];
            let obs = match (&node.observation, design.0[i]) {
                (Observation::Binomial { .. }, DesignEntry::Binomial { n }) => {
                    Observation::Binomial {
                        x: binomial(n, (target(0) * probability_scale).min(1.0), rng),
                        n,
                    }
                }
                (Observation::Poisson { .. }, DesignEntry::Poisson { exposure }) => {
                    Observation::Poisson {
                        x: poisson(target(0) * exposure, rng),
                        exposure,
                    }
                }
                (Observation::Multinomial { size_from, .. }, DesignEntry::Multinomial { size }) => {
                    let size = match size_from {
                        Some(total) => {
                            let pos = graph
                                .data_nodes()
                                .iter()
                                .position(|d| d == total)
                                .expect("linked total is a data node");
                            match &out[pos] {
                                Some(Observation::Poisson { x, .. }) => *x,
                                _ => size,
                            }
                        }
                        None => size,
                    };
                    let probs: Vec<f64> = (0..node.targets.len()).map(target).collect();
                    let mut counts = Vec::with_capacity(probs.len());
                    let mut left = size;
                    let mut mass = 1.0;
                    for (j, p) in probs.iter().enumerate() {
                        let c = if j + 1 == probs.len() || mass <= 0.0 {
                            left
                        } else {
                            binomial(left, (p / mass).clamp(0.0, 1.0), rng)
                        };
                        counts.push(c);
                        left -= c;
                        mass -= p;
                    }
                    Observation::Multinomial {
                        counts,
                        size_from: *size_from,
                    }
                }
                (obs, entry) => panic!("design entry {entry:?} does not fit {:?}", obs.family()),
            };
            out[i] = Some(obs);
        }
    }
    out.into_iter()
        .map(|o| o.expect("every node simulated"))
        .collect()
}

/// Draws a dataset at `truth` with the given design.
pub fn simulate_dataset(
    graph: &Graph,
    truth: &GroundTruth,
    design: &Design,
    seed: u64,
) -> Result<Vec<Observation>, GraphError> {
    let full = graph.evaluate_functionals(&truth.values)?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    Ok(simulate_values(graph, full.values(), design, 1.0, &mut rng))
}

#[derive(Debug, Serialize, Deserialize)]
struct TruthRow {
    quantity: String,
    value: f64,
}

/// `quantity,value` for every basic parameter.
pub fn write_truth_csv(
    graph: &Graph,
    truth: &GroundTruth,
    writer: impl Write,
) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    for id in graph.basic_nodes() {
        w.serialize(TruthRow {
            quantity: graph.label(id).to_string(),
            value: truth.values.get(id),
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_truth_csv(reader: impl Read) -> Result<Vec<(String, f64)>, csv::Error> {
    csv::Reader::from_reader(reader)
        .deserialize::<TruthRow>()
        .map(|r| r.map(|r| (r.quantity, r.value)))
        .collect()
}

#[cfg(test)]
mod tests;
