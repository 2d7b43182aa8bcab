//! Adaptive random-walk Metropolis-within-Gibbs over parameter blocks.
//!
//! Each basic parameter outside a simplex is its own block, proposed on a
//! transformed scale (scaled logit for bounded priors, log for positive
//! ones, identity for real ones). Simplex blocks move jointly through an
//! additive log-ratio transform. Proposal scales follow a Robbins–Monro
//! recursion during burn-in and are frozen afterwards.

mod diagnostics;
mod export;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::distributions::{expit, logit};
use crate::graph::{Assignment, Dependents, Graph, GraphError, Node, NodeId, Prior, Support};
use crate::synthgen::draw_initial;

pub use diagnostics::{
    density_strip, effective_sample_size, gelman_rubin, quantile, summarize, summarize_quantity,
    DensityStrip, DiagnosticError, PosteriorSummary,
};
pub use export::{
    write_adaptation_csv, write_diagnostics_csv, write_samples_csv, write_strip_csv,
    write_summary_csv,
};

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("graph has no free parameters")]
    NoFreeParameters,
    #[error("no finite starting point after {attempts} prior draws: {last}")]
    InitializationFailed { attempts: usize, last: String },
    #[error("invalid sampler config: {0}")]
    InvalidConfig(String),
    #[error("`{0}` cannot be monitored")]
    UnknownMonitor(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Prior draws tried before giving up on initialization.
pub const INIT_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub chains: usize,
    pub iterations: usize,
    pub burnin: usize,
    pub thin: usize,
    pub seed: u64,
    /// Acceptance rate targeted by scalar blocks.
    pub target_scalar: f64,
    /// Acceptance rate targeted by simplex blocks.
    pub target_simplex: f64,
    /// Proposals between scale adjustments during burn-in.
    pub adaptation_window: usize,
    pub initial_scale: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            chains: 2,
            iterations: 14_000,
            burnin: 10_000,
            thin: 1,
            seed: 1,
            target_scalar: 0.44,
            target_simplex: 0.234,
            adaptation_window: 50,
            initial_scale: 0.5,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), SamplerError> {
        let bad = |m: &str| Err(SamplerError::InvalidConfig(m.to_string()));
        if self.chains == 0 {
            return bad("at least one chain");
        }
        if self.iterations <= self.burnin {
            return bad("iterations must exceed burn-in");
        }
        if self.thin == 0 {
            return bad("thinning must be at least 1");
        }
        if self.adaptation_window == 0 {
            return bad("adaptation window must be at least 1");
        }
        for t in [self.target_scalar, self.target_simplex] {
            if !(t > 0.0 && t < 1.0) {
                return bad("target acceptance must lie in (0, 1)");
            }
        }
        if !(self.initial_scale > 0.0) {
            return bad("initial scale must be positive");
        }
        Ok(())
    }

    /// Retained draws per chain.
    pub fn retained(&self) -> usize {
        (self.iterations - self.burnin) / self.thin
    }
}

/// Transformed scale a block is proposed on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BlockKind {
    /// `z = logit((x − lower)/(upper − lower))`.
    ScalarLogit {
        lower: f64,
        upper: f64,
    },
    /// `z = ln x`.
    ScalarLog,
    ScalarIdentity,
    /// Additive log-ratio against the last component.
    Simplex,
    /// Moves component `index` of a simplex on the logit scale and
    /// rescales the rest proportionally.
    SimplexComponent {
        index: usize,
    },
    /// Shifts a hierarchical mean and all of its descendants by one
    /// common amount.
    Translation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockSpec {
    pub label: String,
    pub members: Vec<NodeId>,
    pub kind: BlockKind,
    pub scale: f64,
}

/// One block per scalar basic parameter and one per simplex, followed by
/// auxiliary moves: per-component updates inside simplices of three or
/// more components, and joint shifts of each hierarchical mean with its
/// descendants.
pub fn default_blocks(graph: &Graph, initial_scale: f64) -> Vec<BlockSpec> {
    let mut blocks = Vec::new();
    let mut seen_simplex = vec![false; graph.blocks().len()];
    for id in graph.basic_nodes() {
        let b = graph.basic(id).expect("basic");
        if let Some(block) = b.block {
            if !seen_simplex[block.index()] {
                seen_simplex[block.index()] = true;
                let s = graph.block(block);
                blocks.push(BlockSpec {
                    label: s.label.clone(),
                    members: s.members.clone(),
                    kind: BlockKind::Simplex,
                    scale: initial_scale,
                });
                if s.members.len() > 2 {
                    for (index, m) in s.members.iter().enumerate() {
                        blocks.push(BlockSpec {
                            label: format!("{}[{}]", s.label, graph.label(*m)),
                            members: s.members.clone(),
                            kind: BlockKind::SimplexComponent { index },
                            scale: initial_scale,
                        });
                    }
                }
            }
            continue;
        }
        let kind = match (&b.prior, b.support) {
            (Prior::Uniform { lower, upper }, _) => BlockKind::ScalarLogit {
                lower: *lower,
                upper: *upper,
            },
            (_, Support::UnitInterval) => BlockKind::ScalarLogit {
                lower: 0.0,
                upper: 1.0,
            },
            (_, Support::PositiveReal) => BlockKind::ScalarLog,
            _ => BlockKind::ScalarIdentity,
        };
        blocks.push(BlockSpec {
            label: b.label.clone(),
            members: vec![id],
            kind,
            scale: initial_scale,
        });
    }
    blocks.extend(translation_blocks(graph, initial_scale));
    blocks
}

fn translation_blocks(graph: &Graph, initial_scale: f64) -> Vec<BlockSpec> {
    let basics: Vec<NodeId> = graph.basic_nodes().collect();
    let children_of = |m: NodeId| -> Vec<NodeId> {
        basics
            .iter()
            .copied()
            .filter(|c| {
                matches!(graph.basic(*c).map(|b| &b.prior),
                    Some(Prior::HierarchicalNormal { mean, .. }) if *mean == m)
            })
            .collect()
    };
    let mut out = Vec::new();
    for &root in &basics {
        let mut members = vec![root];
        let mut i = 0;
        while i < members.len() {
            members.extend(children_of(members[i]));
            i += 1;
        }
        let real = members
            .iter()
            .all(|m| graph.basic(*m).map(|b| b.support) == Some(Support::Real));
        if members.len() > 1 && real {
            out.push(BlockSpec {
                label: format!("shift.{}", graph.label(root)),
                members,
                kind: BlockKind::Translation,
                scale: initial_scale,
            });
        }
    }
    out
}

/// Log-Jacobian of the map from the transformed scale back to `x`,
/// up to a constant.
fn log_jacobian(kind: BlockKind, x: &[f64]) -> f64 {
    match kind {
        BlockKind::ScalarLogit { lower, upper } => (x[0] - lower).ln() + (upper - x[0]).ln(),
        BlockKind::ScalarLog => x[0].ln(),
        BlockKind::ScalarIdentity => 0.0,
        BlockKind::Simplex => x.iter().map(|p| p.ln()).sum(),
        BlockKind::SimplexComponent { index } => {
            let p = x[index];
            p.ln() + (x.len() - 1) as f64 * (1.0 - p).ln()
        }
        BlockKind::Translation => 0.0,
    }
}

fn propose(kind: BlockKind, x: &[f64], scale: f64, rng: &mut impl Rng) -> Vec<f64> {
    let mut step = || scale * rng.sample::<f64, _>(StandardNormal);
    match kind {
        BlockKind::ScalarLogit { lower, upper } => {
            let width = upper - lower;
            let z = logit((x[0] - lower) / width) + step();
            vec![lower + width * expit(z)]
        }
        BlockKind::ScalarLog => vec![(x[0].ln() + step()).exp()],
        BlockKind::ScalarIdentity => vec![x[0] + step()],
        BlockKind::Simplex => {
            let k = x.len();
            let last = x[k - 1].ln();
            let z: Vec<f64> = x[..k - 1].iter().map(|p| p.ln() - last + step()).collect();
            // Softmax of (z, 0), shifted for stability.
            let m = z.iter().copied().fold(0.0f64, f64::max);
            let mut out: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
            out.push((-m).exp());
            let total: f64 = out.iter().sum();
            out.iter_mut().for_each(|p| *p /= total);
            out
        }
        BlockKind::SimplexComponent { index } => {
            let p = expit(logit(x[index]) + step());
            let rest = (1.0 - p) / (1.0 - x[index]);
            let mut out: Vec<f64> = x.iter().map(|q| q * rest).collect();
            out[index] = p;
            out
        }
        BlockKind::Translation => {
            let e = step();
            x.iter().map(|v| v + e).collect()
        }
    }
}

/// A single chain's mutable state: values of every node plus cached
/// log-prior and log-likelihood terms.
pub struct Chain<'g> {
    graph: &'g Graph,
    blocks: Vec<BlockSpec>,
    deps: Vec<Dependents>,
    values: Vec<f64>,
    prior_terms: Vec<f64>,
    data_terms: Vec<f64>,
    saved: Vec<(usize, f64)>,
}

impl<'g> Chain<'g> {
    /// Starts from a basic-parameter assignment; fails when the joint
    /// density there is not finite.
    pub fn new(
        graph: &'g Graph,
        blocks: Vec<BlockSpec>,
        theta: &Assignment,
    ) -> Result<Self, String> {
        let full = graph
            .evaluate_functionals(theta)
            .map_err(|e| e.to_string())?;
        let values = full.into_values();
        let prior_terms: Vec<f64> = (0..graph.prior_term_count())
            .map(|t| graph.prior_term(t, &values))
            .collect();
        let mut data_terms = Vec::with_capacity(graph.data_nodes().len());
        for i in 0..graph.data_nodes().len() {
            data_terms.push(graph.data_term(i, &values).map_err(|e| e.to_string())?);
        }
        let lp: f64 = prior_terms.iter().chain(&data_terms).sum();
        if !lp.is_finite() {
            return Err(format!("log density {lp}"));
        }
        let deps = blocks
            .iter()
            .map(|b| graph.dependents(&b.members))
            .collect();
        Ok(Self {
            graph,
            blocks,
            deps,
            values,
            prior_terms,
            data_terms,
            saved: Vec::new(),
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn blocks(&self) -> &[BlockSpec] {
        &self.blocks
    }

    pub fn set_scale(&mut self, block: usize, scale: f64) {
        self.blocks[block].scale = scale;
    }

    pub fn log_density(&self) -> f64 {
        self.prior_terms.iter().chain(&self.data_terms).sum()
    }

    /// One Metropolis update of `block`. Returns whether it was accepted;
    /// on rejection every value is restored exactly.
    pub fn step(&mut self, block: usize, rng: &mut impl Rng) -> bool {
        let spec = &self.blocks[block];
        let deps = &self.deps[block];
        let current: Vec<f64> = spec
            .members
            .iter()
            .map(|m| self.values[m.index()])
            .collect();
        let proposed = propose(spec.kind, &current, spec.scale, rng);
        let log_u: f64 = rng.random::<f64>().ln();

        let jac_new = log_jacobian(spec.kind, &proposed);
        if !jac_new.is_finite() {
            return false;
        }
        let jac_old = log_jacobian(spec.kind, &current);

        self.saved.clear();
        for (m, v) in spec.members.iter().zip(&proposed) {
            self.saved.push((m.index(), self.values[m.index()]));
            self.values[m.index()] = *v;
        }
        for c in &deps.computed {
            self.saved.push((c.index(), self.values[c.index()]));
        }

        let mut new_prior = Vec::with_capacity(deps.priors.len());
        let mut new_data = Vec::with_capacity(deps.data.len());
        let accepted = self
            .graph
            .recompute(&deps.computed, &mut self.values)
            .ok()
            .and_then(|()| {
                let mut delta = 0.0;
                for t in &deps.priors {
                    let v = self.graph.prior_term(*t, &self.values);
                    delta += v - self.prior_terms[*t];
                    new_prior.push(v);
                }
                for i in &deps.data {
                    let v = self.graph.data_term(*i, &self.values).ok()?;
                    delta += v - self.data_terms[*i];
                    new_data.push(v);
                }
                Some(delta)
            })
            .is_some_and(|delta| {
                let log_ratio = delta + jac_new - jac_old;
                log_ratio.is_finite() && log_u < log_ratio
            });

        if accepted {
            for (t, v) in deps.priors.iter().zip(new_prior) {
                self.prior_terms[*t] = v;
            }
            for (i, v) in deps.data.iter().zip(new_data) {
                self.data_terms[*i] = v;
            }
        } else {
            for (i, v) in self.saved.drain(..) {
                self.values[i] = v;
            }
        }
        accepted
    }
}

/// Draws retained by one chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainOutput {
    pub chain: usize,
    /// The chain's stream is `ChaCha20(seed)` with stream id `chain`.
    pub seed: u64,
    pub monitors: Vec<String>,
    /// One row per retained draw.
    pub samples: Vec<Vec<f64>>,
    pub block_labels: Vec<String>,
    /// Acceptance rate per block after burn-in.
    pub acceptance: Vec<f64>,
    pub burnin_acceptance: Vec<f64>,
    pub scales_at_burnin_end: Vec<f64>,
    pub final_scales: Vec<f64>,
    pub init_attempts: usize,
}

impl ChainOutput {
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.samples.iter().map(|row| row[j]).collect()
    }

    pub fn column_by_label(&self, label: &str) -> Option<Vec<f64>> {
        let j = self.monitors.iter().position(|m| m == label)?;
        Some(self.column(j))
    }
}

/// Basic parameters plus registered reports.
pub fn default_monitors(graph: &Graph) -> Vec<NodeId> {
    let mut out: Vec<NodeId> = graph.basic_nodes().collect();
    for r in graph.reports() {
        if !out.contains(r) {
            out.push(*r);
        }
    }
    out
}

pub fn chain_rng(seed: u64, chain: usize) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(chain as u64);
    rng
}

fn check_monitors(graph: &Graph, monitors: &[NodeId]) -> Result<Vec<String>, SamplerError> {
    monitors
        .iter()
        .map(|id| {
            if id.index() >= graph.len() {
                return Err(SamplerError::UnknownMonitor(format!("#{}", id.index())));
            }
            match graph.node(*id) {
                Node::Data(_) | Node::Trajectory(_) => {
                    Err(SamplerError::UnknownMonitor(graph.label(*id).to_string()))
                }
                _ => Ok(graph.label(*id).to_string()),
            }
        })
        .collect()
}

/// Runs one chain with its own random stream.
pub fn run_chain(
    graph: &Graph,
    config: &SamplerConfig,
    monitors: &[NodeId],
    chain: usize,
) -> Result<ChainOutput, SamplerError> {
    config.validate()?;
    if graph.free_dimension() == 0 {
        return Err(SamplerError::NoFreeParameters);
    }
    let labels = check_monitors(graph, monitors)?;
    let mut rng = chain_rng(config.seed, chain);
    let blocks = default_blocks(graph, config.initial_scale);

    let mut last = String::new();
    let mut state = None;
    let mut attempts = 0;
    while attempts < INIT_ATTEMPTS {
        attempts += 1;
        let theta = draw_initial(graph, &mut rng);
        match Chain::new(graph, blocks.clone(), &theta) {
            Ok(c) => {
                state = Some(c);
                break;
            }
            Err(e) => last = e,
        }
    }
    let mut state = state.ok_or(SamplerError::InitializationFailed { attempts, last })?;

    let nb = blocks.len();
    let targets: Vec<f64> = blocks
        .iter()
        .map(|b| match b.kind {
            BlockKind::Simplex => config.target_simplex,
            _ => config.target_scalar,
        })
        .collect();
    let mut log_scales: Vec<f64> = blocks.iter().map(|b| b.scale.ln()).collect();
    let mut window_accepts = vec![0usize; nb];
    let mut burnin_accepts = vec![0usize; nb];
    let mut accepts = vec![0usize; nb];
    let mut scales_at_burnin_end = Vec::new();
    let mut samples = Vec::with_capacity(config.retained());

    for iter in 0..config.iterations {
        let adapting = iter < config.burnin;
        if iter == config.burnin {
            scales_at_burnin_end = state.blocks().iter().map(|b| b.scale).collect();
        }
        for b in 0..nb {
            let ok = state.step(b, &mut rng);
            if adapting {
                burnin_accepts[b] += ok as usize;
                window_accepts[b] += ok as usize;
            } else {
                accepts[b] += ok as usize;
            }
        }
        if adapting && (iter + 1) % config.adaptation_window == 0 {
            let batch = ((iter + 1) / config.adaptation_window) as f64;
            let gain = (1.0 / batch.sqrt()).min(1.0);
            for b in 0..nb {
                let rate = window_accepts[b] as f64 / config.adaptation_window as f64;
                log_scales[b] = (log_scales[b] + gain * (rate - targets[b])).clamp(-15.0, 5.0);
                state.set_scale(b, log_scales[b].exp());
                window_accepts[b] = 0;
            }
        }
        if !adapting && (iter - config.burnin) % config.thin == config.thin - 1 {
            let v = state.values();
            samples.push(monitors.iter().map(|m| v[m.index()]).collect());
        }
    }

    let post = (config.iterations - config.burnin) as f64;
    let burn = config.burnin.max(1) as f64;
    Ok(ChainOutput {
        chain,
        seed: config.seed,
        monitors: labels,
        samples,
        block_labels: blocks.iter().map(|b| b.label.clone()).collect(),
        acceptance: accepts.iter().map(|a| *a as f64 / post).collect(),
        burnin_acceptance: burnin_accepts.iter().map(|a| *a as f64 / burn).collect(),
        scales_at_burnin_end,
        final_scales: state.blocks().iter().map(|b| b.scale).collect(),
        init_attempts: attempts,
    })
}

/// Runs `config.chains` chains concurrently. Output depends only on
/// `(graph, config, monitors)`.
pub fn run_chains(
    graph: &Graph,
    config: &SamplerConfig,
    monitors: &[NodeId],
) -> Result<Vec<ChainOutput>, SamplerError> {
    config.validate()?;
    if config.chains == 1 {
        return Ok(vec![run_chain(graph, config, monitors, 0)?]);
    }
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..config.chains)
            .map(|c| scope.spawn(move || run_chain(graph, config, monitors, c)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("chain thread panicked"))
            .collect()
    })
}
