//! Graph form of the joint prevalence–incidence model.
//!
//! Basic parameters are the initial state `c.1` (a four-component simplex)
//! and four rates per interval. A trajectory node carries the solution;
//! functionals `rho.t`, `pi.t`, `delta.t` and `undiagnosed.t` map each
//! annual state back to prevalence parameters for the binomial data.

use thiserror::Error;

use super::{DynamicsError, PrevalenceDatum, PrevalenceQuantity, RateDatum, RateQuantity};
use crate::graph::{
    Expr, Graph, GraphBuilder, GraphError, NodeId, Observation, Prior, RateNodes, Support,
};

#[derive(Debug, Error)]
pub enum JointError {
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointConfig {
    /// Number of annual states `T`; there are `T − 1` rate intervals.
    pub years: usize,
    pub step: f64,
    /// Rates get `Uniform(0, rate_upper)` priors.
    pub rate_upper: f64,
    pub initial_concentration: [f64; 4],
}

impl Default for JointConfig {
    fn default() -> Self {
        Self {
            years: 7,
            step: super::DEFAULT_STEP,
            rate_upper: 2.0,
            initial_concentration: [1.0; 4],
        }
    }
}

pub const INITIAL_LABELS: [&str; 4] = ["e.1", "s.1", "u.1", "d.1"];

/// Label of the basic rate node for interval `t` (1-based).
pub fn rate_label(kind: RateKind, t: usize) -> String {
    format!("{}.{t}", kind.as_str())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateKind {
    Uptake,
    Incidence,
    Diagnosis,
    Exit,
}

impl RateKind {
    pub const ALL: [RateKind; 4] = [
        RateKind::Uptake,
        RateKind::Incidence,
        RateKind::Diagnosis,
        RateKind::Exit,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            RateKind::Uptake => "lambda_es",
            RateKind::Incidence => "lambda_su",
            RateKind::Diagnosis => "lambda_ud",
            RateKind::Exit => "mu_out",
        }
    }
}

impl From<RateQuantity> for RateKind {
    fn from(q: RateQuantity) -> Self {
        match q {
            RateQuantity::UptakeCount => RateKind::Uptake,
            RateQuantity::DiagnosisCount => RateKind::Diagnosis,
            RateQuantity::ExitCount => RateKind::Exit,
        }
    }
}

pub fn quantity_label(q: PrevalenceQuantity, t: usize) -> String {
    let name = match q {
        PrevalenceQuantity::Rho => "rho",
        PrevalenceQuantity::Pi => "pi",
        PrevalenceQuantity::Delta => "delta",
        PrevalenceQuantity::UndiagnosedPrevalence => "undiagnosed",
    };
    format!("{name}.{t}")
}

pub fn build_joint_graph(
    config: &JointConfig,
    prevalence: &[PrevalenceDatum],
    rates: &[RateDatum],
) -> Result<Graph, JointError> {
    let years = config.years;
    if years < 2 {
        return Err(DynamicsError::TooFewYears(years).into());
    }
    let mut b = GraphBuilder::new();
    let c1 = b.add_simplex(
        "c.1",
        &INITIAL_LABELS,
        config.initial_concentration.to_vec(),
    )?;
    let rate_prior = Prior::Uniform {
        lower: 0.0,
        upper: config.rate_upper,
    };
    let mut intervals = Vec::with_capacity(years - 1);
    for t in 1..years {
        let mut add = |kind| {
            b.add_basic(
                &rate_label(kind, t),
                Support::PositiveReal,
                rate_prior.clone(),
            )
        };
        intervals.push(RateNodes {
            uptake: add(RateKind::Uptake)?,
            incidence: add(RateKind::Incidence)?,
            diagnosis: add(RateKind::Diagnosis)?,
            exit: add(RateKind::Exit)?,
        });
    }
    b.add_trajectory(
        "traj",
        [c1[0], c1[1], c1[2], c1[3]],
        intervals.clone(),
        config.step,
    )?;

    let mut quantity_nodes: Vec<[NodeId; 4]> = Vec::with_capacity(years);
    for t in 1..=years {
        let comp = |b: &GraphBuilder, c: &str| {
            Expr::node(b.id(&format!("traj.{c}.{t}")).expect("trajectory output"))
        };
        let (s, u, d) = (comp(&b, "s"), comp(&b, "u"), comp(&b, "d"));
        let at_risk = Expr::sum(vec![s.clone(), u.clone(), d.clone()]);
        let infected = Expr::sum(vec![u.clone(), d.clone()]);
        let rho = b.add_functional(&quantity_label(PrevalenceQuantity::Rho, t), at_risk.clone())?;
        let pi = b.add_functional(
            &quantity_label(PrevalenceQuantity::Pi, t),
            Expr::div(infected.clone(), at_risk.clone()),
        )?;
        let delta = b.add_functional(
            &quantity_label(PrevalenceQuantity::Delta, t),
            Expr::div(d, infected),
        )?;
        let undiagnosed = b.add_functional(
            &quantity_label(PrevalenceQuantity::UndiagnosedPrevalence, t),
            Expr::div(u, at_risk),
        )?;
        for id in [rho, pi, delta] {
            b.add_report(id)?;
        }
        quantity_nodes.push([rho, pi, delta, undiagnosed]);
    }

    for (k, datum) in prevalence.iter().enumerate() {
        if datum.t == 0 || datum.t > years {
            return Err(DynamicsError::TimeOutOfRange {
                t: datum.t,
                max: years,
            }
            .into());
        }
        let slot = match datum.quantity {
            PrevalenceQuantity::Rho => 0,
            PrevalenceQuantity::Pi => 1,
            PrevalenceQuantity::Delta => 2,
            PrevalenceQuantity::UndiagnosedPrevalence => 3,
        };
        b.add_data(
            &format!("y{k}.{}", quantity_label(datum.quantity, datum.t)),
            vec![quantity_nodes[datum.t - 1][slot]],
            Observation::Binomial {
                x: datum.x,
                n: datum.n,
            },
        )?;
    }
    for (k, datum) in rates.iter().enumerate() {
        if datum.t == 0 || datum.t >= years {
            return Err(DynamicsError::TimeOutOfRange {
                t: datum.t,
                max: years - 1,
            }
            .into());
        }
        let r = &intervals[datum.t - 1];
        let target = match datum.quantity {
            RateQuantity::UptakeCount => r.uptake,
            RateQuantity::DiagnosisCount => r.diagnosis,
            RateQuantity::ExitCount => r.exit,
        };
        b.add_data(
            &format!("z{k}.{}", rate_label(datum.quantity.into(), datum.t)),
            vec![target],
            Observation::Poisson {
                x: datum.x,
                exposure: datum.exposure,
            },
        )?;
    }
    Ok(b.freeze()?)
}
