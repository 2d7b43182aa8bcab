//! TOML form of a graph: every node with its label, kind, parents,
//! prior or likelihood, and functional expression in prefix notation.

use serde::{Deserialize, Serialize};

use super::{
    Expr, Graph, GraphBuilder, GraphError, Node, NodeId, Observation, Prior, RateNodes, Support,
};

#[derive(Debug, Serialize, Deserialize)]
struct GraphDocument {
    #[serde(default)]
    reports: Vec<String>,
    nodes: Vec<NodeDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
enum NodeDoc {
    Basic {
        label: String,
        support: String,
        prior: PriorDoc,
    },
    Simplex {
        label: String,
        members: Vec<String>,
        concentration: Vec<f64>,
    },
    Functional {
        label: String,
        expr: String,
    },
    Data {
        label: String,
        targets: Vec<String>,
        observation: ObservationDoc,
    },
    Trajectory {
        label: String,
        initial: Vec<String>,
        /// Per interval: uptake, incidence, diagnosis, exit.
        intervals: Vec<Vec<String>>,
        step: f64,
    },
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
enum PriorDoc {
    Uniform { lower: f64, upper: f64 },
    Normal { mean: f64, sd: f64 },
    HalfNormal { sd: f64 },
    HierarchicalNormal { mean: String, sd: String },
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
enum ObservationDoc {
    Binomial {
        x: u64,
        n: u64,
    },
    Poisson {
        x: u64,
        exposure: f64,
    },
    Multinomial {
        counts: Vec<u64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        size_from: Option<String>,
    },
}

fn parse_support(s: &str) -> Result<Support, GraphError> {
    Ok(match s {
        "unit-interval" => Support::UnitInterval,
        "positive-real" => Support::PositiveReal,
        "real" => Support::Real,
        other => return Err(GraphError::Document(format!("unknown support `{other}`"))),
    })
}

impl Graph {
    /// Serializes the graph as a TOML document.
    pub fn to_document(&self) -> String {
        let name = |id: NodeId| self.label(id).to_string();
        let mut nodes = Vec::new();
        for (id, node) in self.nodes() {
            let doc = match node {
                Node::Basic(b) => match b.block {
                    Some(block) => {
                        let block = self.block(block);
                        if block.members[0] != id {
                            continue;
                        }
                        NodeDoc::Simplex {
                            label: block.label.clone(),
                            members: block.members.iter().map(|m| name(*m)).collect(),
                            concentration: block.concentration.clone(),
                        }
                    }
                    None => NodeDoc::Basic {
                        label: b.label.clone(),
                        support: b.support.as_str().to_string(),
                        prior: match &b.prior {
                            Prior::Uniform { lower, upper } => PriorDoc::Uniform {
                                lower: *lower,
                                upper: *upper,
                            },
                            Prior::Normal { mean, sd } => PriorDoc::Normal {
                                mean: *mean,
                                sd: *sd,
                            },
                            Prior::HalfNormal { sd } => PriorDoc::HalfNormal { sd: *sd },
                            Prior::HierarchicalNormal { mean, sd } => {
                                PriorDoc::HierarchicalNormal {
                                    mean: name(*mean),
                                    sd: name(*sd),
                                }
                            }
                            Prior::Dirichlet { .. } => unreachable!("only on block members"),
                        },
                    },
                },
                Node::Functional(f) => NodeDoc::Functional {
                    label: f.label.clone(),
                    expr: f.expr.to_prefix(&|id| self.label(id)),
                },
                Node::Data(d) => NodeDoc::Data {
                    label: d.label.clone(),
                    targets: d.targets.iter().map(|t| name(*t)).collect(),
                    observation: match &d.observation {
                        Observation::Binomial { x, n } => ObservationDoc::Binomial { x: *x, n: *n },
                        Observation::Poisson { x, exposure } => ObservationDoc::Poisson {
                            x: *x,
                            exposure: *exposure,
                        },
                        Observation::Multinomial { counts, size_from } => {
                            ObservationDoc::Multinomial {
                                counts: counts.clone(),
                                size_from: size_from.map(name),
                            }
                        }
                    },
                },
                Node::Trajectory(t) => NodeDoc::Trajectory {
                    label: t.label.clone(),
                    initial: t.initial.iter().map(|i| name(*i)).collect(),
                    intervals: t
                        .intervals
                        .iter()
                        .map(|r| {
                            [r.uptake, r.incidence, r.diagnosis, r.exit]
                                .map(name)
                                .to_vec()
                        })
                        .collect(),
                    step: t.step,
                },
                Node::TrajectoryOutput(_) => continue,
            };
            nodes.push(doc);
        }
        let doc = GraphDocument {
            reports: self.reports().iter().map(|r| name(*r)).collect(),
            nodes,
        };
        toml::to_string(&doc).expect("graph documents always serialize")
    }

    /// Rebuilds a graph from [`Graph::to_document`] output.
    pub fn from_document(text: &str) -> Result<Graph, GraphError> {
        let doc: GraphDocument =
            toml::from_str(text).map_err(|e| GraphError::Document(e.to_string()))?;
        let mut b = GraphBuilder::new();
        let lookup = |b: &GraphBuilder, l: &str| {
            b.id(l)
                .ok_or_else(|| GraphError::UnknownParent(l.to_string()))
        };
        for node in doc.nodes {
            match node {
                NodeDoc::Basic {
                    label,
                    support,
                    prior,
                } => {
                    let prior = match prior {
                        PriorDoc::Uniform { lower, upper } => Prior::Uniform { lower, upper },
                        PriorDoc::Normal { mean, sd } => Prior::Normal { mean, sd },
                        PriorDoc::HalfNormal { sd } => Prior::HalfNormal { sd },
                        PriorDoc::HierarchicalNormal { mean, sd } => Prior::HierarchicalNormal {
                            mean: lookup(&b, &mean)?,
                            sd: lookup(&b, &sd)?,
                        },
                    };
                    b.add_basic(&label, parse_support(&support)?, prior)?;
                }
                NodeDoc::Simplex {
                    label,
                    members,
                    concentration,
                } => {
                    let members: Vec<&str> = members.iter().map(String::as_str).collect();
                    b.add_simplex(&label, &members, concentration)?;
                }
                NodeDoc::Functional { label, expr } => {
                    let parsed =
                        Expr::parse_prefix(&expr, &|s| b.id(s)).map_err(GraphError::Document)?;
                    b.add_functional(&label, parsed)?;
                }
                NodeDoc::Data {
                    label,
                    targets,
                    observation,
                } => {
                    let targets = targets
                        .iter()
                        .map(|t| lookup(&b, t))
                        .collect::<Result<Vec<_>, _>>()?;
                    let observation = match observation {
                        ObservationDoc::Binomial { x, n } => Observation::Binomial { x, n },
                        ObservationDoc::Poisson { x, exposure } => {
                            Observation::Poisson { x, exposure }
                        }
                        ObservationDoc::Multinomial { counts, size_from } => {
                            Observation::Multinomial {
                                counts,
                                size_from: size_from.map(|s| lookup(&b, &s)).transpose()?,
                            }
                        }
                    };
                    b.add_data(&label, targets, observation)?;
                }
                NodeDoc::Trajectory {
                    label,
                    initial,
                    intervals,
                    step,
                } => {
                    let resolve_four = |names: &[String]| -> Result<[NodeId; 4], GraphError> {
                        if names.len() != 4 {
                            return Err(GraphError::Document(format!(
                                "trajectory `{label}` expects groups of four parents"
                            )));
                        }
                        let ids = names
                            .iter()
                            .map(|n| lookup(&b, n))
                            .collect::<Result<Vec<_>, _>>()?;
                        Ok([ids[0], ids[1], ids[2], ids[3]])
                    };
                    let initial = resolve_four(&initial)?;
                    let intervals = intervals
                        .iter()
                        .map(|r| {
                            resolve_four(r).map(|[uptake, incidence, diagnosis, exit]| RateNodes {
                                uptake,
                                incidence,
                                diagnosis,
                                exit,
                            })
                        })
                        .collect::<Result<Vec<_>, _>>()?;
                    b.add_trajectory(&label, initial, intervals, step)?;
                }
            }
        }
        for r in &doc.reports {
            let id = lookup(&b, r)?;
            b.add_report(id)?;
        }
        b.freeze()
    }
}
