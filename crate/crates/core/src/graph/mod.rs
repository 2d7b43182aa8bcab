//! Directed acyclic graph of basic parameters, functional parameters and
//! data nodes, with the joint log-density
//! `log p(θ) + Σᵢ log Lᵢ(ψᵢ(θ); yᵢ)`.
//!
//! A [`GraphBuilder`] accepts nodes whose parents already exist, so
//! insertion order is always a valid topological order. [`GraphBuilder::freeze`]
//! turns it into an immutable [`Graph`] that caches the evaluation order
//! and, for incremental updates, which functionals, likelihood terms and
//! prior terms depend on each basic parameter.

mod doc;
pub mod expr;

use std::collections::{HashMap, VecDeque};

use thiserror::Error;

use crate::distributions::{
    binomial_log_pmf, dirichlet_log_pdf, half_normal_log_pdf, multinomial_log_pmf, normal_log_pdf,
    poisson_log_pmf, uniform_log_pdf, DistributionError,
};
use crate::dynamics::{self, CompartmentState, DynamicsError, IntervalRates};

pub use expr::{EvalError, Expr};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub(crate) u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BlockId(pub(crate) u32);

impl BlockId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("duplicate node label `{0}`")]
    DuplicateLabel(String),
    #[error("invalid node label `{0}`")]
    InvalidLabel(String),
    #[error("unknown parent `{0}`")]
    UnknownParent(String),
    #[error("invalid prior for `{label}`: {reason}")]
    InvalidPrior { label: String, reason: String },
    #[error("hierarchical prior on `{0}` is deeper than two levels")]
    HierarchyTooDeep(String),
    #[error("data node `{label}` is incompatible with its target: {reason}")]
    IncompatibleTarget { label: String, reason: String },
    #[error("division by zero while evaluating `{0}`")]
    DivisionByZero(String),
    #[error("non-finite value while evaluating `{0}`")]
    NonFinite(String),
    #[error("value {value} of `{label}` lies outside its support")]
    OutOfSupport { label: String, value: f64 },
    #[error("target of `{label}` evaluated to {value}, outside the range its likelihood accepts")]
    TargetOutOfRange { label: String, value: f64 },
    #[error("observation for `{label}` is malformed: {reason}")]
    BadObservation { label: String, reason: String },
    #[error("graph has a cycle")]
    Cycle,
    #[error("trajectory `{label}` failed: {source}")]
    Dynamics {
        label: String,
        #[source]
        source: DynamicsError,
    },
    #[error("likelihood of `{label}`: {source}")]
    Distribution {
        label: String,
        #[source]
        source: DistributionError,
    },
    #[error("graph document: {0}")]
    Document(String),
}

/// Range a basic parameter lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Support {
    UnitInterval,
    PositiveReal,
    Real,
    SimplexComponent,
}

impl Support {
    pub fn contains(&self, v: f64) -> bool {
        match self {
            Support::UnitInterval | Support::SimplexComponent => (0.0..=1.0).contains(&v),
            Support::PositiveReal => v > 0.0 && v.is_finite(),
            Support::Real => v.is_finite(),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Support::UnitInterval => "unit-interval",
            Support::PositiveReal => "positive-real",
            Support::Real => "real",
            Support::SimplexComponent => "simplex-component",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Prior {
    Uniform {
        lower: f64,
        upper: f64,
    },
    Normal {
        mean: f64,
        sd: f64,
    },
    HalfNormal {
        sd: f64,
    },
    Dirichlet {
        concentration: Vec<f64>,
    },
    /// Normal whose mean and standard deviation are other basic nodes.
    HierarchicalNormal {
        mean: NodeId,
        sd: NodeId,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BasicNode {
    pub label: String,
    pub support: Support,
    pub prior: Prior,
    pub block: Option<BlockId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalNode {
    pub label: String,
    pub expr: Expr,
    pub parents: Vec<NodeId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Binomial,
    Poisson,
    Multinomial,
}

impl Family {
    pub fn as_str(&self) -> &'static str {
        match self {
            Family::Binomial => "binomial",
            Family::Poisson => "poisson",
            Family::Multinomial => "multinomial",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Observation {
    /// `x ~ Binomial(n, ψ)`.
    Binomial { x: u64, n: u64 },
    /// `x ~ Poisson(ψ · exposure)`.
    Poisson { x: u64, exposure: f64 },
    /// `counts ~ Multinomial(Σ counts, ψ)`. When `size_from` names a Poisson
    /// data node, the multinomial size is that node's count.
    Multinomial {
        counts: Vec<u64>,
        size_from: Option<NodeId>,
    },
}

impl Observation {
    pub fn family(&self) -> Family {
        match self {
            Observation::Binomial { .. } => Family::Binomial,
            Observation::Poisson { .. } => Family::Poisson,
            Observation::Multinomial { .. } => Family::Multinomial,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataNode {
    pub label: String,
    pub targets: Vec<NodeId>,
    pub observation: Observation,
}

/// Basic nodes holding one interval's transition rates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateNodes {
    pub uptake: NodeId,
    pub incidence: NodeId,
    pub diagnosis: NodeId,
    pub exit: NodeId,
}

/// Solves the compartment system from an initial state and a rate
/// schedule; its annual states populate `outputs[year][compartment]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryNode {
    pub label: String,
    pub initial: [NodeId; 4],
    pub intervals: Vec<RateNodes>,
    pub step: f64,
    pub outputs: Vec<[NodeId; 4]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryOutput {
    pub label: String,
    pub source: NodeId,
    pub year: usize,
    pub compartment: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Basic(BasicNode),
    Functional(FunctionalNode),
    Data(DataNode),
    Trajectory(TrajectoryNode),
    TrajectoryOutput(TrajectoryOutput),
}

impl Node {
    pub fn label(&self) -> &str {
        match self {
            Node::Basic(n) => &n.label,
            Node::Functional(n) => &n.label,
            Node::Data(n) => &n.label,
            Node::Trajectory(n) => &n.label,
            Node::TrajectoryOutput(n) => &n.label,
        }
    }

    /// True for nodes whose value is derived from others.
    fn is_computed(&self) -> bool {
        matches!(
            self,
            Node::Functional(_) | Node::Trajectory(_) | Node::TrajectoryOutput(_)
        )
    }

    fn has_value(&self) -> bool {
        !matches!(self, Node::Data(_) | Node::Trajectory(_))
    }

    /// Parents along value edges.
    fn value_parents(&self) -> Vec<NodeId> {
        match self {
            Node::Basic(_) => Vec::new(),
            Node::Functional(f) => f.parents.clone(),
            Node::Data(d) => d.targets.clone(),
            Node::Trajectory(t) => {
                let mut out = t.initial.to_vec();
                for r in &t.intervals {
                    out.extend([r.uptake, r.incidence, r.diagnosis, r.exit]);
                }
                out
            }
            Node::TrajectoryOutput(o) => vec![o.source],
        }
    }

    /// Parents along any edge, including hierarchical-prior edges.
    fn all_parents(&self) -> Vec<NodeId> {
        let mut out = self.value_parents();
        match self {
            Node::Basic(BasicNode {
                prior: Prior::HierarchicalNormal { mean, sd },
                ..
            }) => out.extend([*mean, *sd]),
            Node::Data(DataNode {
                observation:
                    Observation::Multinomial {
                        size_from: Some(s), ..
                    },
                ..
            }) => out.push(*s),
            _ => {}
        }
        out
    }
}

/// Simplex block: members sum to one and share one Dirichlet prior.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexBlock {
    pub label: String,
    pub members: Vec<NodeId>,
    pub concentration: Vec<f64>,
}

/// Input to [`GraphBuilder::add_node`].
#[derive(Debug, Clone, PartialEq)]
pub enum NodeSpec {
    Basic {
        label: String,
        support: Support,
        prior: Prior,
    },
    Functional {
        label: String,
        expr: Expr,
    },
    Data {
        label: String,
        targets: Vec<NodeId>,
        observation: Observation,
    },
}

pub(crate) fn validate_label(label: &str) -> Result<(), GraphError> {
    let bad = || GraphError::InvalidLabel(label.to_string());
    let first = label.chars().next().ok_or_else(bad)?;
    if !first.is_ascii_alphabetic() {
        return Err(bad());
    }
    if label
        .chars()
        .any(|c| c.is_whitespace() || matches!(c, '(' | ')' | ',' | '"' | '\''))
    {
        return Err(bad());
    }
    let lower = label.to_ascii_lowercase();
    if matches!(lower.as_str(), "inf" | "infinity" | "nan") {
        return Err(bad());
    }
    Ok(())
}

#[derive(Debug, Default, Clone)]
pub struct GraphBuilder {
    nodes: Vec<Node>,
    index: HashMap<String, NodeId>,
    blocks: Vec<SimplexBlock>,
    reports: Vec<NodeId>,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn id(&self, label: &str) -> Option<NodeId> {
        self.index.get(label).copied()
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.index()]
    }

    fn reserve_label(&self, label: &str) -> Result<(), GraphError> {
        validate_label(label)?;
        if self.index.contains_key(label) {
            return Err(GraphError::DuplicateLabel(label.to_string()));
        }
        Ok(())
    }

    fn push(&mut self, node: Node) -> NodeId {
        let id = NodeId(self.nodes.len() as u32);
        self.index.insert(node.label().to_string(), id);
        self.nodes.push(node);
        id
    }

    fn check_parent(&self, id: NodeId) -> Result<&Node, GraphError> {
        self.nodes
            .get(id.index())
            .ok_or_else(|| GraphError::UnknownParent(format!("#{}", id.0)))
    }

    fn check_value_parent(&self, id: NodeId) -> Result<&Node, GraphError> {
        let node = self.check_parent(id)?;
        if !node.has_value() {
            return Err(GraphError::UnknownParent(format!(
                "{} (not a parameter)",
                node.label()
            )));
        }
        Ok(node)
    }

    pub fn add_node(&mut self, spec: NodeSpec) -> Result<NodeId, GraphError> {
        match spec {
            NodeSpec::Basic {
                label,
                support,
                prior,
            } => self.add_basic(&label, support, prior),
            NodeSpec::Functional { label, expr } => self.add_functional(&label, expr),
            NodeSpec::Data {
                label,
                targets,
                observation,
            } => self.add_data(&label, targets, observation),
        }
    }

    pub fn add_basic(
        &mut self,
        label: &str,
        support: Support,
        prior: Prior,
    ) -> Result<NodeId, GraphError> {
        self.reserve_label(label)?;
        let invalid = |reason: &str| GraphError::InvalidPrior {
            label: label.to_string(),
            reason: reason.to_string(),
        };
        match (&support, &prior) {
            (Support::SimplexComponent, _) | (_, Prior::Dirichlet { .. }) => {
                return Err(invalid("simplex components are added with add_simplex"))
            }
            (_, Prior::Uniform { lower, upper }) => {
                if !(lower < upper) || !lower.is_finite() || !upper.is_finite() {
                    return Err(invalid("uniform needs finite lower < upper"));
                }
                let fits = match support {
                    Support::UnitInterval => *lower >= 0.0 && *upper <= 1.0,
                    Support::PositiveReal => *lower >= 0.0,
                    _ => true,
                };
                if !fits {
                    return Err(invalid("uniform bounds exceed the support"));
                }
            }
            // Truncated to the support on bounded scales.
            (_, Prior::Normal { sd, .. }) => {
                if !(*sd > 0.0) {
                    return Err(invalid("sd must be positive"));
                }
            }
            (Support::PositiveReal, Prior::HalfNormal { sd }) => {
                if !(*sd > 0.0) {
                    return Err(invalid("sd must be positive"));
                }
            }
            (Support::Real, Prior::HierarchicalNormal { mean, sd }) => {
                let mean_node = self.check_parent(*mean)?;
                let sd_node = self.check_parent(*sd)?;
                let (Node::Basic(m), Node::Basic(s)) = (mean_node, sd_node) else {
                    return Err(invalid("hierarchical parents must be basic parameters"));
                };
                if m.support != Support::Real || s.support != Support::PositiveReal {
                    return Err(invalid("hierarchical mean must be real and sd positive"));
                }
                if matches!(s.prior, Prior::HierarchicalNormal { .. }) {
                    return Err(GraphError::HierarchyTooDeep(label.to_string()));
                }
                if let Prior::HierarchicalNormal { mean: grand, .. } = &m.prior {
                    if let Node::Basic(g) = self.node(*grand) {
                        if matches!(g.prior, Prior::HierarchicalNormal { .. }) {
                            return Err(GraphError::HierarchyTooDeep(label.to_string()));
                        }
                    }
                }
            }
            _ => return Err(invalid("prior family does not match the support")),
        }
        Ok(self.push(Node::Basic(BasicNode {
            label: label.to_string(),
            support,
            prior,
            block: None,
        })))
    }

    /// Adds a block of simplex components under one Dirichlet prior.
    pub fn add_simplex(
        &mut self,
        block_label: &str,
        member_labels: &[&str],
        concentration: Vec<f64>,
    ) -> Result<Vec<NodeId>, GraphError> {
        let invalid = |reason: &str| GraphError::InvalidPrior {
            label: block_label.to_string(),
            reason: reason.to_string(),
        };
        if member_labels.len() < 2 {
            return Err(invalid("a simplex needs at least two components"));
        }
        if concentration.len() != member_labels.len() {
            return Err(invalid("one concentration per component"));
        }
        if concentration.iter().any(|a| !(*a > 0.0) || !a.is_finite()) {
            return Err(invalid("concentrations must be positive"));
        }
        validate_label(block_label)?;
        if self.blocks.iter().any(|b| b.label == block_label) {
            return Err(GraphError::DuplicateLabel(block_label.to_string()));
        }
        for (i, l) in member_labels.iter().enumerate() {
            self.reserve_label(l)?;
            if member_labels[..i].contains(l) {
                return Err(GraphError::DuplicateLabel(l.to_string()));
            }
        }
        let block = BlockId(self.blocks.len() as u32);
        let members: Vec<NodeId> = member_labels
            .iter()
            .map(|l| {
                self.push(Node::Basic(BasicNode {
                    label: l.to_string(),
                    support: Support::SimplexComponent,
                    prior: Prior::Dirichlet {
                        concentration: concentration.clone(),
                    },
                    block: Some(block),
                }))
            })
            .collect();
        self.blocks.push(SimplexBlock {
            label: block_label.to_string(),
            members: members.clone(),
            concentration,
        });
        Ok(members)
    }

    pub fn add_functional(&mut self, label: &str, expr: Expr) -> Result<NodeId, GraphError> {
        self.reserve_label(label)?;
        let parents = expr.references();
        for p in &parents {
            self.check_value_parent(*p)?;
        }
        Ok(self.push(Node::Functional(FunctionalNode {
            label: label.to_string(),
            expr,
            parents,
        })))
    }

    pub fn add_data(
        &mut self,
        label: &str,
        targets: Vec<NodeId>,
        observation: Observation,
    ) -> Result<NodeId, GraphError> {
        self.reserve_label(label)?;
        let incompatible = |reason: String| GraphError::IncompatibleTarget {
            label: label.to_string(),
            reason,
        };
        for t in &targets {
            self.check_value_parent(*t)?;
        }
        let expected = match &observation {
            Observation::Binomial { x, n } => {
                if x > n {
                    return Err(GraphError::BadObservation {
                        label: label.to_string(),
                        reason: format!("x = {x} exceeds n = {n}"),
                    });
                }
                1
            }
            Observation::Poisson { exposure, .. } => {
                if !(*exposure > 0.0) {
                    return Err(GraphError::BadObservation {
                        label: label.to_string(),
                        reason: "exposure must be positive".into(),
                    });
                }
                1
            }
            Observation::Multinomial { counts, size_from } => {
                if counts.len() < 2 {
                    return Err(incompatible(
                        "multinomial needs at least two categories".into(),
                    ));
                }
                if let Some(src) = size_from {
                    let total: u64 = counts.iter().sum();
                    match self.check_parent(*src)? {
                        Node::Data(DataNode {
                            observation: Observation::Poisson { x, .. },
                            ..
                        }) if *x == total => {}
                        Node::Data(DataNode {
                            observation: Observation::Poisson { x, .. },
                            ..
                        }) => {
                            return Err(GraphError::BadObservation {
                                label: label.to_string(),
                                reason: format!("counts sum to {total}, size node reports {x}"),
                            })
                        }
                        _ => {
                            return Err(incompatible(
                                "size must come from a Poisson data node".into(),
                            ))
                        }
                    }
                }
                counts.len()
            }
        };
        if targets.len() != expected {
            return Err(incompatible(format!(
                "{} likelihood needs {expected} target(s), got {}",
                observation.family().as_str(),
                targets.len()
            )));
        }
        for t in &targets {
            if let Node::Basic(b) = self.node(*t) {
                let ok = match observation.family() {
                    Family::Binomial | Family::Multinomial => {
                        matches!(b.support, Support::UnitInterval | Support::SimplexComponent)
                    }
                    Family::Poisson => b.support != Support::Real,
                };
                if !ok {
                    return Err(incompatible(format!(
                        "`{}` has support {}",
                        b.label,
                        b.support.as_str()
                    )));
                }
            }
        }
        Ok(self.push(Node::Data(DataNode {
            label: label.to_string(),
            targets,
            observation,
        })))
    }

    /// Adds a trajectory node for `intervals.len() + 1` annual states, with
    /// one output node per state and compartment labelled
    /// `<label>.<compartment>.<year>`.
    pub fn add_trajectory(
        &mut self,
        label: &str,
        initial: [NodeId; 4],
        intervals: Vec<RateNodes>,
        step: f64,
    ) -> Result<NodeId, GraphError> {
        self.reserve_label(label)?;
        dynamics::steps_per_interval(step).map_err(|source| GraphError::Dynamics {
            label: label.to_string(),
            source,
        })?;
        for id in initial.iter().chain(
            intervals
                .iter()
                .flat_map(|r| [&r.uptake, &r.incidence, &r.diagnosis, &r.exit]),
        ) {
            self.check_value_parent(*id)?;
        }
        let years = intervals.len() + 1;
        let mut output_labels = Vec::with_capacity(years * 4);
        for year in 1..=years {
            for comp in dynamics::COMPARTMENTS {
                let l = format!("{label}.{comp}.{year}");
                self.reserve_label(&l)?;
                output_labels.push(l);
            }
        }
        let first_output = self.nodes.len() as u32 + 1;
        let outputs = (0..years)
            .map(|y| std::array::from_fn(|c| NodeId(first_output + (y * 4 + c) as u32)))
            .collect();
        let traj = self.push(Node::Trajectory(TrajectoryNode {
            label: label.to_string(),
            initial,
            intervals,
            step,
            outputs,
        }));
        for (i, l) in output_labels.into_iter().enumerate() {
            self.push(Node::TrajectoryOutput(TrajectoryOutput {
                label: l,
                source: traj,
                year: i / 4 + 1,
                compartment: i % 4,
            }));
        }
        Ok(traj)
    }

    /// Registers a node as a reported quantity (monitored by default).
    pub fn add_report(&mut self, id: NodeId) -> Result<(), GraphError> {
        self.check_value_parent(id)?;
        if !self.reports.contains(&id) {
            self.reports.push(id);
        }
        Ok(())
    }

    pub fn freeze(self) -> Result<Graph, GraphError> {
        Graph::from_parts(self.nodes, self.blocks, self.reports)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum PriorTerm {
    Node(NodeId),
    Block(BlockId),
}

/// What must be recomputed when a set of basic parameters changes.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dependents {
    /// Computed nodes in evaluation order.
    pub computed: Vec<NodeId>,
    /// Indices into [`Graph::data_nodes`].
    pub data: Vec<usize>,
    /// Indices of prior terms.
    pub priors: Vec<usize>,
}

/// A value for every node, indexed by [`NodeId`].
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    values: Vec<f64>,
}

impl Assignment {
    pub fn get(&self, id: NodeId) -> f64 {
        self.values[id.index()]
    }

    pub fn set(&mut self, id: NodeId, v: f64) {
        self.values[id.index()] = v;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// Frozen, immutable model graph. Shareable across threads.
#[derive(Debug, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
    index: HashMap<String, NodeId>,
    blocks: Vec<SimplexBlock>,
    reports: Vec<NodeId>,
    eval_order: Vec<NodeId>,
    order_pos: Vec<usize>,
    data: Vec<NodeId>,
    data_pos: Vec<Option<usize>>,
    children: Vec<Vec<NodeId>>,
    prior_terms: Vec<PriorTerm>,
    own_prior_term: Vec<Option<usize>>,
    hier_children_terms: Vec<Vec<usize>>,
    block_term: Vec<usize>,
}

impl Graph {
    fn from_parts(
        nodes: Vec<Node>,
        blocks: Vec<SimplexBlock>,
        reports: Vec<NodeId>,
    ) -> Result<Self, GraphError> {
        let n = nodes.len();
        let mut children = vec![Vec::new(); n];
        let mut indegree = vec![0usize; n];
        let mut all_children = vec![Vec::new(); n];
        for (i, node) in nodes.iter().enumerate() {
            for p in node.value_parents() {
                if !children[p.index()].contains(&NodeId(i as u32)) {
                    children[p.index()].push(NodeId(i as u32));
                }
            }
            for p in node.all_parents() {
                all_children[p.index()].push(i);
                indegree[i] += 1;
            }
        }
        // Kahn's algorithm; ties broken by insertion order.
        let mut queue: VecDeque<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
        let mut topo = Vec::with_capacity(n);
        while let Some(i) = queue.pop_front() {
            topo.push(i);
            for &c in &all_children[i] {
                indegree[c] -= 1;
                if indegree[c] == 0 {
                    queue.push_back(c);
                }
            }
        }
        if topo.len() != n {
            return Err(GraphError::Cycle);
        }
        let eval_order: Vec<NodeId> = topo
            .iter()
            .filter(|&&i| nodes[i].is_computed())
            .map(|&i| NodeId(i as u32))
            .collect();
        let mut order_pos = vec![usize::MAX; n];
        for (k, id) in eval_order.iter().enumerate() {
            order_pos[id.index()] = k;
        }

        let mut data = Vec::new();
        let mut data_pos = vec![None; n];
        for (i, node) in nodes.iter().enumerate() {
            if matches!(node, Node::Data(_)) {
                data_pos[i] = Some(data.len());
                data.push(NodeId(i as u32));
            }
        }

        let mut prior_terms = Vec::new();
        let mut own_prior_term = vec![None; n];
        let mut hier_children_terms = vec![Vec::new(); n];
        for (i, node) in nodes.iter().enumerate() {
            if let Node::Basic(b) = node {
                if b.block.is_none() {
                    own_prior_term[i] = Some(prior_terms.len());
                    if let Prior::HierarchicalNormal { mean, sd } = b.prior {
                        hier_children_terms[mean.index()].push(prior_terms.len());
                        hier_children_terms[sd.index()].push(prior_terms.len());
                    }
                    prior_terms.push(PriorTerm::Node(NodeId(i as u32)));
                }
            }
        }
        let mut block_term = Vec::with_capacity(blocks.len());
        for b in 0..blocks.len() {
            block_term.push(prior_terms.len());
            prior_terms.push(PriorTerm::Block(BlockId(b as u32)));
        }

        let index = nodes
            .iter()
            .enumerate()
            .map(|(i, node)| (node.label().to_string(), NodeId(i as u32)))
            .collect();
        Ok(Self {
            nodes,
            index,
            blocks,
            reports,
            eval_order,
            order_pos,
            data,
            data_pos,
            children,
            prior_terms,
            own_prior_term,
            hier_children_terms,
            block_term,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.index()]
    }

    pub fn nodes(&self) -> impl Iterator<Item = (NodeId, &Node)> {
        self.nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (NodeId(i as u32), n))
    }

    pub fn id(&self, label: &str) -> Option<NodeId> {
        self.index.get(label).copied()
    }

    pub fn label(&self, id: NodeId) -> &str {
        self.nodes[id.index()].label()
    }

    pub fn basic(&self, id: NodeId) -> Option<&BasicNode> {
        match &self.nodes[id.index()] {
            Node::Basic(b) => Some(b),
            _ => None,
        }
    }

    /// Basic parameters in insertion order.
    pub fn basic_nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes()
            .filter(|(_, n)| matches!(n, Node::Basic(_)))
            .map(|(id, _)| id)
    }

    pub fn blocks(&self) -> &[SimplexBlock] {
        &self.blocks
    }

    pub fn block(&self, id: BlockId) -> &SimplexBlock {
        &self.blocks[id.index()]
    }

    pub fn data_nodes(&self) -> &[NodeId] {
        &self.data
    }

    pub fn data_node(&self, data_index: usize) -> &DataNode {
        match &self.nodes[self.data[data_index].index()] {
            Node::Data(d) => d,
            _ => unreachable!("data index points at a data node"),
        }
    }

    pub fn reports(&self) -> &[NodeId] {
        &self.reports
    }

    /// Computed nodes in the cached topological order.
    pub fn eval_order(&self) -> &[NodeId] {
        &self.eval_order
    }

    /// Number of free dimensions: scalar basic parameters plus `k − 1`
    /// per simplex block.
    pub fn free_dimension(&self) -> usize {
        let scalars = self
            .nodes
            .iter()
            .filter(|n| matches!(n, Node::Basic(b) if b.block.is_none()))
            .count();
        scalars
            + self
                .blocks
                .iter()
                .map(|b| b.members.len() - 1)
                .sum::<usize>()
    }

    /// Fresh assignment with every value unset (`NaN`).
    pub fn assignment(&self) -> Assignment {
        Assignment {
            values: vec![f64::NAN; self.nodes.len()],
        }
    }

    /// Assignment from `(label, value)` pairs for basic parameters.
    pub fn assignment_from(&self, pairs: &[(&str, f64)]) -> Result<Assignment, GraphError> {
        let mut a = self.assignment();
        for (label, v) in pairs {
            let id = self
                .id(label)
                .ok_or_else(|| GraphError::UnknownParent(label.to_string()))?;
            a.set(id, *v);
        }
        Ok(a)
    }

    /// Checks every basic value lies in its support and each simplex block
    /// sums to one.
    pub fn check_support(&self, values: &[f64]) -> Result<(), GraphError> {
        for id in self.basic_nodes() {
            let b = self.basic(id).expect("basic");
            let v = values[id.index()];
            if !b.support.contains(v) {
                return Err(GraphError::OutOfSupport {
                    label: b.label.clone(),
                    value: v,
                });
            }
        }
        for block in &self.blocks {
            let total: f64 = block.members.iter().map(|m| values[m.index()]).sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(GraphError::OutOfSupport {
                    label: block.label.clone(),
                    value: total,
                });
            }
        }
        Ok(())
    }

    fn compute_node(&self, id: NodeId, values: &mut [f64]) -> Result<(), GraphError> {
        match &self.nodes[id.index()] {
            Node::Functional(f) => {
                values[id.index()] = f.expr.eval(values).map_err(|e| match e {
                    EvalError::DivisionByZero => GraphError::DivisionByZero(f.label.clone()),
                    EvalError::NonFinite => GraphError::NonFinite(f.label.clone()),
                })?;
            }
            Node::Trajectory(t) => {
                let c1 = CompartmentState::from_array(t.initial.map(|i| values[i.index()]));
                let schedule: Vec<IntervalRates> = t
                    .intervals
                    .iter()
                    .map(|r| IntervalRates {
                        uptake: values[r.uptake.index()],
                        incidence: values[r.incidence.index()],
                        diagnosis: values[r.diagnosis.index()],
                        exit: values[r.exit.index()],
                    })
                    .collect();
                let traj = dynamics::integrate(&c1, &schedule, t.step).map_err(|source| {
                    GraphError::Dynamics {
                        label: t.label.clone(),
                        source,
                    }
                })?;
                for (state, ids) in traj.states.iter().zip(&t.outputs) {
                    for (v, id) in state.to_array().iter().zip(ids) {
                        values[id.index()] = *v;
                    }
                }
            }
            // Written by the owning trajectory.
            Node::TrajectoryOutput(_) => {}
            Node::Basic(_) | Node::Data(_) => {}
        }
        Ok(())
    }

    /// Recomputes the given computed nodes, which must be in evaluation order.
    pub fn recompute(&self, computed: &[NodeId], values: &mut [f64]) -> Result<(), GraphError> {
        for id in computed {
            self.compute_node(*id, values)?;
        }
        Ok(())
    }

    /// Fills every functional node from the basic values in `theta`.
    pub fn evaluate_functionals(&self, theta: &Assignment) -> Result<Assignment, GraphError> {
        self.check_support(&theta.values)?;
        let mut out = theta.clone();
        self.recompute(&self.eval_order, &mut out.values)?;
        Ok(out)
    }

    pub fn prior_term_count(&self) -> usize {
        self.prior_terms.len()
    }

    pub fn prior_term(&self, term: usize, values: &[f64]) -> f64 {
        match self.prior_terms[term] {
            PriorTerm::Node(id) => {
                let b = self.basic(id).expect("prior term on a basic node");
                let x = values[id.index()];
                match &b.prior {
                    Prior::Uniform { lower, upper } => uniform_log_pdf(x, *lower, *upper),
                    Prior::Normal { mean, sd } => normal_log_pdf(x, *mean, *sd),
                    Prior::HalfNormal { sd } => half_normal_log_pdf(x, *sd),
                    Prior::HierarchicalNormal { mean, sd } => {
                        let sd = values[sd.index()];
                        if sd > 0.0 {
                            normal_log_pdf(x, values[mean.index()], sd)
                        } else {
                            f64::NEG_INFINITY
                        }
                    }
                    Prior::Dirichlet { .. } => unreachable!("dirichlet lives on blocks"),
                }
            }
            PriorTerm::Block(b) => {
                let block = &self.blocks[b.index()];
                let p: Vec<f64> = block.members.iter().map(|m| values[m.index()]).collect();
                dirichlet_log_pdf(&p, &block.concentration).unwrap_or(f64::NEG_INFINITY)
            }
        }
    }

    pub fn log_prior(&self, values: &[f64]) -> f64 {
        (0..self.prior_terms.len())
            .map(|t| self.prior_term(t, values))
            .sum()
    }

    /// Log-likelihood of one data node given fully computed `values`.
    pub fn data_term(&self, data_index: usize, values: &[f64]) -> Result<f64, GraphError> {
        let d = self.data_node(data_index);
        let out_of_range = |value: f64| GraphError::TargetOutOfRange {
            label: d.label.clone(),
            value,
        };
        let dist_err = |source| GraphError::Distribution {
            label: d.label.clone(),
            source,
        };
        match &d.observation {
            Observation::Binomial { x, n } => {
                let p = clamp_probability(values[d.targets[0].index()]).map_err(out_of_range)?;
                binomial_log_pmf(*x, *n, p).map_err(dist_err)
            }
            Observation::Poisson { x, exposure } => {
                let rate = values[d.targets[0].index()];
                if !(rate >= 0.0) || !rate.is_finite() {
                    return Err(out_of_range(rate));
                }
                Ok(poisson_log_pmf(*x, rate * exposure))
            }
            Observation::Multinomial { counts, .. } => {
                let mut probs = Vec::with_capacity(counts.len());
                for t in &d.targets {
                    probs.push(clamp_probability(values[t.index()]).map_err(out_of_range)?);
                }
                multinomial_log_pmf(counts, &probs).map_err(dist_err)
            }
        }
    }

    pub fn log_likelihood(&self, values: &[f64]) -> Result<f64, GraphError> {
        let mut total = 0.0;
        for i in 0..self.data.len() {
            total += self.data_term(i, values)?;
        }
        Ok(total)
    }

    /// `log p(θ) + Σ log Lᵢ`. Zero-likelihood states give `-inf`.
    pub fn log_joint(&self, theta: &Assignment) -> Result<f64, GraphError> {
        let full = self.evaluate_functionals(theta)?;
        let prior = self.log_prior(&full.values);
        if prior == f64::NEG_INFINITY {
            return Ok(prior);
        }
        Ok(prior + self.log_likelihood(&full.values)?)
    }

    /// Everything downstream of a set of basic parameters.
    pub fn dependents(&self, basics: &[NodeId]) -> Dependents {
        let mut seen = vec![false; self.nodes.len()];
        let mut stack: Vec<NodeId> = basics.to_vec();
        let mut computed = Vec::new();
        let mut data = Vec::new();
        while let Some(id) = stack.pop() {
            for &c in &self.children[id.index()] {
                if seen[c.index()] {
                    continue;
                }
                seen[c.index()] = true;
                if let Some(k) = self.data_pos[c.index()] {
                    data.push(k);
                } else {
                    computed.push(c);
                    stack.push(c);
                }
            }
        }
        computed.sort_by_key(|id| self.order_pos[id.index()]);
        data.sort_unstable();

        let mut priors = Vec::new();
        for b in basics {
            if let Some(t) = self.own_prior_term[b.index()] {
                priors.push(t);
            }
            priors.extend(&self.hier_children_terms[b.index()]);
            if let Some(Node::Basic(BasicNode {
                block: Some(block), ..
            })) = self.nodes.get(b.index())
            {
                priors.push(self.block_term[block.index()]);
            }
        }
        priors.sort_unstable();
        priors.dedup();
        Dependents {
            computed,
            data,
            priors,
        }
    }

    /// Same structure with replacement observations, one per data node in
    /// [`Graph::data_nodes`] order. Families and category counts must match.
    pub fn with_observations(&self, observations: Vec<Observation>) -> Result<Graph, GraphError> {
        if observations.len() != self.data.len() {
            return Err(GraphError::BadObservation {
                label: "<graph>".into(),
                reason: format!(
                    "expected {} observations, got {}",
                    self.data.len(),
                    observations.len()
                ),
            });
        }
        let mut builder = GraphBuilder {
            nodes: Vec::with_capacity(self.nodes.len()),
            index: HashMap::new(),
            blocks: Vec::new(),
            reports: self.reports.clone(),
        };
        let mut replacements = observations.into_iter();
        // Re-adding data nodes re-runs their validation (x ≤ n, size links).
        for node in &self.nodes {
            match node {
                Node::Data(d) => {
                    let mut obs = replacements.next().expect("length checked");
                    if obs.family() != d.observation.family() {
                        return Err(GraphError::BadObservation {
                            label: d.label.clone(),
                            reason: "family differs from the original".into(),
                        });
                    }
                    if let (
                        Observation::Multinomial { size_from, .. },
                        Observation::Multinomial {
                            size_from: original,
                            ..
                        },
                    ) = (&mut obs, &d.observation)
                    {
                        *size_from = *original;
                    }
                    builder.add_data(&d.label, d.targets.clone(), obs)?;
                }
                other => {
                    builder.push(other.clone());
                }
            }
        }
        builder.blocks = self.blocks.clone();
        builder.freeze()
    }
}

/// Accepts probabilities within 1e-12 of `[0, 1]`, clamping them.
fn clamp_probability(p: f64) -> Result<f64, f64> {
    const SLACK: f64 = 1e-12;
    if (0.0..=1.0).contains(&p) {
        Ok(p)
    } else if p > -SLACK && p < 0.0 {
        Ok(0.0)
    } else if p > 1.0 && p < 1.0 + SLACK {
        Ok(1.0)
    } else {
        Err(p)
    }
}
