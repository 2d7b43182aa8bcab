use std::collections::{BTreeMap, HashMap};

use thiserror::Error;

use super::config::{BiasScale, DataItem, HyperpriorConfig, ModelConfig};
use super::{CellParams, Family, Gender, Region, RiskGroup};
use crate::graph::{Expr, Graph, GraphBuilder, GraphError, NodeId, Observation, Prior, Support};

#[derive(Debug, Error)]
pub enum BuildError {
    /// Semantic problem in the config, e.g. a data item naming an
    /// undefined (group, region) cell.
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

fn config_err(msg: impl Into<String>) -> BuildError {
    BuildError::Config(msg.into())
}

/// What a binomial item measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Measure {
    Rho,
    Pi,
    Delta,
    UndiagnosedPrevalence,
}

impl Measure {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "rho" => Measure::Rho,
            "pi" => Measure::Pi,
            "delta" => Measure::Delta,
            "undiagnosed-prevalence" => Measure::UndiagnosedPrevalence,
            _ => return None,
        })
    }
}

/// Node ids for one (group, region) cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellNodes {
    pub rho: NodeId,
    pub pi: NodeId,
    pub delta: NodeId,
}

/// A built prevalence graph plus the layout needed to read it back.
#[derive(Debug, Clone)]
pub struct PrevalenceModel {
    pub graph: Graph,
    pub year: u32,
    pub regions: Vec<Region>,
    /// Active groups in canonical order.
    pub groups: Vec<RiskGroup>,
    pub populations: BTreeMap<(Gender, Region), u64>,
    cells: HashMap<(RiskGroup, Region), CellNodes>,
    nu: HashMap<RiskGroup, NodeId>,
    theta_dimension: usize,
}

impl PrevalenceModel {
    /// Free dimensions of `(ρ, π, δ)`: `Σ (k_gender − 1)` per region for ρ
    /// plus one π slot and one δ slot per cell. Male cells linked to
    /// female ones keep their slot through the log odds ratio.
    pub fn theta_dimension(&self) -> usize {
        self.theta_dimension
    }

    pub fn genders(&self) -> Vec<Gender> {
        Gender::ALL
            .into_iter()
            .filter(|g| self.groups.iter().any(|r| r.gender() == *g))
            .collect()
    }

    pub fn groups_of(&self, gender: Gender) -> Vec<RiskGroup> {
        self.groups
            .iter()
            .copied()
            .filter(|g| g.gender() == gender)
            .collect()
    }

    pub fn cell(&self, group: RiskGroup, region: Region) -> Option<CellNodes> {
        self.cells.get(&(group, region)).copied()
    }

    /// `(ρ, π, δ)` per active group of `gender` in `region`, read from a
    /// fully evaluated assignment.
    pub fn cell_params(&self, values: &[f64], gender: Gender, region: Region) -> Vec<CellParams> {
        self.groups_of(gender)
            .into_iter()
            .map(|g| {
                let c = self.cells[&(g, region)];
                CellParams {
                    rho: values[c.rho.index()],
                    pi: values[c.pi.index()],
                    delta: values[c.delta.index()],
                }
            })
            .collect()
    }

    /// Under-reporting per active group of `gender`; zero when the model
    /// has no bias parameters.
    pub fn nu(&self, values: &[f64], gender: Gender) -> Vec<f64> {
        self.groups_of(gender)
            .into_iter()
            .map(|g| self.nu.get(&g).map_or(0.0, |id| values[id.index()]))
            .collect()
    }
}

impl PrevalenceModel {
    /// Copies `items` with their counts replaced by `observations`, given
    /// in data-node order. `items` must be the ones the model was built from.
    pub fn items_with_observations(
        &self,
        items: &[DataItem],
        observations: &[Observation],
    ) -> Vec<DataItem> {
        let position = |label: &str| {
            let id = self.graph.id(label)?;
            self.graph.data_nodes().iter().position(|d| *d == id)
        };
        items
            .iter()
            .enumerate()
            .map(|(k, item)| {
                let mut out = item.clone();
                let region = Region::parse(&item.region);
                let gender = Gender::parse(&item.gender);
                if item.family == "multinomial" {
                    let (Some(gender), Some(region)) = (gender, region) else {
                        return out;
                    };
                    let label = format!("split.{}.{gender}.{region}", item.source);
                    let slot = RiskGroup::parse(&item.group)
                        .and_then(|g| self.groups_of(gender).iter().position(|h| *h == g));
                    if let (Some(i), Some(slot)) = (position(&label), slot) {
                        if let Observation::Multinomial { counts, .. } = &observations[i] {
                            out.x = counts[slot];
                        }
                    }
                } else if let Some(region) = region {
                    let label = format!("y{k}.{}.{}.{region}", item.source, item.group);
                    if let Some(i) = position(&label) {
                        match &observations[i] {
                            Observation::Binomial { x, .. } | Observation::Poisson { x, .. } => {
                                out.x = *x
                            }
                            Observation::Multinomial { .. } => {}
                        }
                    }
                }
                out
            })
            .collect()
    }
}

fn label(kind: &str, group: RiskGroup, region: Region) -> String {
    format!("{kind}.{group}.{region}")
}

struct Builder<'a> {
    config: &'a ModelConfig,
    b: GraphBuilder,
    groups: Vec<RiskGroup>,
    regions: Vec<Region>,
    populations: BTreeMap<(Gender, Region), u64>,
    cells: HashMap<(RiskGroup, Region), CellNodes>,
    nu: HashMap<RiskGroup, NodeId>,
    hyper: HashMap<&'static str, NodeId>,
    epsilon: HashMap<String, NodeId>,
    functionals: HashMap<String, NodeId>,
    theta_dimension: usize,
}

impl<'a> Builder<'a> {
    fn groups_of(&self, gender: Gender) -> Vec<RiskGroup> {
        self.groups
            .iter()
            .copied()
            .filter(|g| g.gender() == gender)
            .collect()
    }

    fn linked(&self, group: RiskGroup) -> Option<RiskGroup> {
        if !self.config.hyperpriors.hierarchy {
            return None;
        }
        group
            .female_counterpart()
            .filter(|f| self.groups.contains(f))
    }

    fn hyper_node(&mut self, name: &'static str) -> Result<NodeId, BuildError> {
        if let Some(id) = self.hyper.get(name) {
            return Ok(*id);
        }
        let h = &self.config.hyperpriors;
        let (support, prior) = match name {
            "Pi" | "Delta" => (
                Support::Real,
                Prior::Normal {
                    mean: 0.0,
                    sd: h.mean_sd,
                },
            ),
            _ => {
                let factor = match name {
                    "sigma_pi" => h.sigma_pi_factor,
                    "sigma_delta" => h.sigma_delta_factor,
                    "omega_pi" => h.omega_pi_factor,
                    _ => h.omega_delta_factor,
                };
                (
                    Support::PositiveReal,
                    Prior::HalfNormal {
                        sd: HyperpriorConfig::factor_scale(factor),
                    },
                )
            }
        };
        let id = self.b.add_basic(name, support, prior)?;
        self.hyper.insert(name, id);
        Ok(id)
    }

    /// Group-level mean `P.<family>` or `D.<family>`.
    fn family_mean(&mut self, quantity: &str, family: Family) -> Result<NodeId, BuildError> {
        let (prefix, top, omega) = if quantity == "pi" {
            ("P", "Pi", "omega_pi")
        } else {
            ("D", "Delta", "omega_delta")
        };
        let name = format!("{prefix}.{}", family.as_str());
        if let Some(id) = self.b.id(&name) {
            return Ok(id);
        }
        let mean = self.hyper_node(top)?;
        let sd = self.hyper_node(omega)?;
        Ok(self
            .b
            .add_basic(&name, Support::Real, Prior::HierarchicalNormal { mean, sd })?)
    }

    /// π or δ of a male cell linked to its female counterpart.
    fn linked_probability(
        &mut self,
        quantity: &str,
        group: RiskGroup,
        female: NodeId,
        region: Region,
    ) -> Result<NodeId, BuildError> {
        let family = group.family().expect("linked groups have a family");
        let mean = self.family_mean(quantity, family)?;
        let sd = self.hyper_node(if quantity == "pi" {
            "sigma_pi"
        } else {
            "sigma_delta"
        })?;
        let lor = self.b.add_basic(
            &label(&format!("lor_{quantity}"), group, region),
            Support::Real,
            Prior::HierarchicalNormal { mean, sd },
        )?;
        // expit(lor + logit(p)) in odds form, `p·e^lor / (p·e^lor + 1 − p)`,
        // which returns p bit-for-bit when lor = 0.
        let scaled = Expr::product(vec![Expr::node(female), Expr::exp(Expr::node(lor))]);
        Ok(self.b.add_functional(
            &label(quantity, group, region),
            Expr::div(
                scaled.clone(),
                Expr::sum(vec![scaled, Expr::complement(Expr::node(female))]),
            ),
        )?)
    }

    fn add_cells(&mut self) -> Result<(), BuildError> {
        let unit = Prior::Uniform {
            lower: 0.0,
            upper: 1.0,
        };
        for region in self.regions.clone() {
            // Female cells first so linked male cells can refer to them.
            for gender in [Gender::Female, Gender::Male] {
                let groups = self.groups_of(gender);
                if groups.is_empty() {
                    continue;
                }
                let rhos: Vec<NodeId> = if groups.len() == 1 {
                    vec![self
                        .b
                        .add_functional(&label("rho", groups[0], region), Expr::constant(1.0))?]
                } else {
                    let labels: Vec<String> =
                        groups.iter().map(|g| label("rho", *g, region)).collect();
                    let refs: Vec<&str> = labels.iter().map(String::as_str).collect();
                    self.theta_dimension += groups.len() - 1;
                    self.b.add_simplex(
                        &format!("rho.{gender}.{region}"),
                        &refs,
                        vec![self.config.hyperpriors.rho_concentration; groups.len()],
                    )?
                };
                for (group, rho) in groups.into_iter().zip(rhos) {
                    self.theta_dimension += 2;
                    let (pi, delta) = match self.linked(group) {
                        Some(female) => {
                            let f = self.cells[&(female, region)];
                            (
                                self.linked_probability("pi", group, f.pi, region)?,
                                self.linked_probability("delta", group, f.delta, region)?,
                            )
                        }
                        None => (
                            self.b.add_basic(
                                &label("pi", group, region),
                                Support::UnitInterval,
                                unit.clone(),
                            )?,
                            self.b.add_basic(
                                &label("delta", group, region),
                                Support::UnitInterval,
                                unit.clone(),
                            )?,
                        ),
                    };
                    self.cells
                        .insert((group, region), CellNodes { rho, pi, delta });
                }
            }
        }
        Ok(())
    }

    /// Groups and inclusion weights behind a data item's `group` field.
    fn resolve_groups(
        &self,
        name: &str,
        gender: Gender,
    ) -> Result<(Vec<RiskGroup>, Vec<f64>), BuildError> {
        if let Some(agg) = self.config.aggregates.get(name) {
            let mut groups = Vec::new();
            for g in &agg.groups {
                let group = RiskGroup::parse(g).ok_or_else(|| {
                    config_err(format!("aggregate `{name}`: unknown group `{g}`"))
                })?;
                if group.gender() != gender || !self.groups.contains(&group) {
                    return Err(config_err(format!(
                        "aggregate `{name}`: group `{g}` is not an active {gender} group"
                    )));
                }
                groups.push(group);
            }
            let weights = agg
                .weights
                .clone()
                .unwrap_or_else(|| vec![1.0; groups.len()]);
            if weights.len() != groups.len() || weights.iter().any(|w| !(*w > 0.0)) {
                return Err(config_err(format!(
                    "aggregate `{name}` needs one positive weight per group"
                )));
            }
            return Ok((groups, weights));
        }
        let groups: Vec<RiskGroup> = match name {
            "all" => self.groups_of(gender),
            "msm" => self
                .groups_of(gender)
                .into_iter()
                .filter(|g| {
                    matches!(
                        g,
                        RiskGroup::MsmSti | RiskGroup::MsmNonSti | RiskGroup::MsmPast
                    )
                })
                .collect(),
            "idu" => self
                .groups_of(gender)
                .into_iter()
                .filter(|g| g.family() == Some(Family::Idu))
                .collect(),
            other => {
                let group = RiskGroup::parse(other)
                    .ok_or_else(|| config_err(format!("unknown group `{other}`")))?;
                if group.gender() != gender {
                    return Err(config_err(format!(
                        "group `{other}` is not a {gender} group"
                    )));
                }
                if !self.groups.contains(&group) {
                    return Err(config_err(format!("group `{other}` is not in the model")));
                }
                vec![group]
            }
        };
        if groups.is_empty() {
            return Err(config_err(format!(
                "`{name}` has no active {gender} groups"
            )));
        }
        let n = groups.len();
        Ok((groups, vec![1.0; n]))
    }

    fn cell_refs(&self, group: RiskGroup, region: Region) -> (Expr, Expr, Expr) {
        let c = self.cells[&(group, region)];
        (Expr::node(c.rho), Expr::node(c.pi), Expr::node(c.delta))
    }

    fn measure_expr(
        &self,
        measure: Measure,
        groups: &[RiskGroup],
        weights: &[f64],
        region: Region,
    ) -> Expr {
        if groups.len() == 1 {
            let (rho, pi, delta) = self.cell_refs(groups[0], region);
            return match measure {
                Measure::Rho => rho,
                Measure::Pi => pi,
                Measure::Delta => delta,
                Measure::UndiagnosedPrevalence => Expr::product(vec![pi, Expr::complement(delta)]),
            };
        }
        if measure == Measure::Rho {
            return Expr::sum(
                groups
                    .iter()
                    .map(|g| self.cell_refs(*g, region).0)
                    .collect(),
            );
        }
        let mut w = Vec::with_capacity(groups.len());
        let mut v = Vec::with_capacity(groups.len());
        for (g, weight) in groups.iter().zip(weights) {
            let (rho, pi, delta) = self.cell_refs(*g, region);
            match measure {
                Measure::Pi => {
                    w.push(Expr::product(vec![Expr::constant(*weight), rho]));
                    v.push(pi);
                }
                Measure::Delta => {
                    w.push(Expr::product(vec![Expr::constant(*weight), rho, pi]));
                    v.push(delta);
                }
                Measure::UndiagnosedPrevalence => {
                    w.push(Expr::product(vec![Expr::constant(*weight), rho]));
                    v.push(Expr::product(vec![pi, Expr::complement(delta)]));
                }
                Measure::Rho => unreachable!(),
            }
        }
        Expr::Mixture {
            weights: w,
            values: v,
        }
    }

    /// Reuses or creates a functional node by label.
    fn functional(&mut self, label: String, expr: Expr) -> Result<NodeId, BuildError> {
        if let Some(id) = self.functionals.get(&label) {
            return Ok(*id);
        }
        let id = match expr {
            Expr::Ref(id) => id,
            expr => self.b.add_functional(&label, expr)?,
        };
        self.functionals.insert(label, id);
        Ok(id)
    }

    /// Reported diagnoses per group: `(1 − ν) δ π ρ`.
    fn diagnosed_terms(&self, gender: Gender, region: Region) -> Vec<Expr> {
        self.groups_of(gender)
            .into_iter()
            .map(|g| {
                let (rho, pi, delta) = self.cell_refs(g, region);
                let mut factors = vec![delta, pi, rho];
                if let Some(nu) = self.nu.get(&g) {
                    factors.insert(0, Expr::complement(Expr::node(*nu)));
                }
                Expr::product(factors)
            })
            .collect()
    }

    fn with_bias(
        &mut self,
        source: &str,
        target: NodeId,
        suffix: &str,
    ) -> Result<NodeId, BuildError> {
        let Some(bias) = self.config.sources.get(source).and_then(|s| s.bias.clone()) else {
            return Ok(target);
        };
        let eps = match self.epsilon.get(source) {
            Some(id) => *id,
            None => {
                let prior = bias.prior.to_prior();
                let support = match prior {
                    Prior::HalfNormal { .. } => Support::PositiveReal,
                    _ => Support::Real,
                };
                let id = self.b.add_basic(&format!("eps.{source}"), support, prior)?;
                self.epsilon.insert(source.to_string(), id);
                id
            }
        };
        let t = Expr::node(target);
        let e = Expr::node(eps);
        let expr = match bias.scale {
            BiasScale::Logit => Expr::expit(Expr::sum(vec![Expr::logit(t), e])),
            BiasScale::Log => Expr::exp(Expr::sum(vec![Expr::log(t), e])),
            BiasScale::Identity => Expr::sum(vec![t, e]),
        };
        self.functional(format!("biased.{source}.{suffix}"), expr)
    }

    fn parse_cell(&self, item: &DataItem) -> Result<(Gender, Region), BuildError> {
        let cell = format!("({}, {}, {})", item.gender, item.group, item.region);
        let gender = Gender::parse(&item.gender).ok_or_else(|| {
            config_err(format!("unknown gender `{}` in cell {cell}", item.gender))
        })?;
        let region = Region::parse(&item.region).ok_or_else(|| {
            config_err(format!("unknown region `{}` in cell {cell}", item.region))
        })?;
        if !self.regions.contains(&region) {
            return Err(config_err(format!(
                "region `{region}` of cell {cell} has no population"
            )));
        }
        Ok((gender, region))
    }

    fn add_data(&mut self) -> Result<(), BuildError> {
        let items = self.config.data.clone();
        let diagnosed_data = items
            .iter()
            .any(|i| i.family == "poisson" || i.family == "multinomial");
        if self.config.bias.enabled && diagnosed_data {
            for g in self.groups.clone() {
                let id = self.b.add_basic(
                    &format!("nu.{g}"),
                    Support::UnitInterval,
                    self.config.bias.prior.to_prior(),
                )?;
                self.nu.insert(g, id);
            }
        }
        for source in items.iter().map(|i| &i.source) {
            if !self.config.sources.contains_key(source) {
                return Err(config_err(format!("undeclared source `{source}`")));
            }
        }

        let mut totals: HashMap<(String, Gender, Region), NodeId> = HashMap::new();
        let mut splits: BTreeMap<(String, Gender, Region), Vec<(RiskGroup, u64)>> = BTreeMap::new();
        for (k, item) in items.iter().enumerate() {
            let (gender, region) = self.parse_cell(item)?;
            let tag = format!("{}.{}.{}", item.source, item.group, region);
            match item.family.as_str() {
                "binomial" => {
                    let n = item
                        .n
                        .ok_or_else(|| config_err(format!("binomial item {tag} needs n")))?;
                    let measure = self.config.sources[&item.source]
                        .measure
                        .as_deref()
                        .and_then(Measure::parse)
                        .ok_or_else(|| {
                            config_err(format!(
                                "source `{}` needs a binomial measure (rho, pi, delta, undiagnosed-prevalence)",
                                item.source
                            ))
                        })?;
                    let (groups, weights) = self.resolve_groups(&item.group, gender)?;
                    let expr = self.measure_expr(measure, &groups, &weights, region);
                    let psi = self.functional(
                        format!(
                            "psi.{}.{gender}.{}.{region}",
                            measure_name(measure),
                            item.group
                        ),
                        expr,
                    )?;
                    let target = self.with_bias(
                        &item.source,
                        psi,
                        &format!("{gender}.{}.{region}", item.group),
                    )?;
                    self.b.add_data(
                        &format!("y{k}.{tag}"),
                        vec![target],
                        Observation::Binomial { x: item.x, n },
                    )?;
                }
                "poisson" => {
                    if item.group != "all" {
                        return Err(config_err(format!(
                            "poisson item {tag} must target group `all`"
                        )));
                    }
                    let population = self.populations[&(gender, region)] as f64;
                    let terms = self.diagnosed_terms(gender, region);
                    let mu = self.functional(
                        format!("mu.{gender}.{region}"),
                        Expr::product(vec![Expr::constant(population), Expr::sum(terms)]),
                    )?;
                    let target = self.with_bias(&item.source, mu, &format!("{gender}.{region}"))?;
                    let id = self.b.add_data(
                        &format!("y{k}.{tag}"),
                        vec![target],
                        Observation::Poisson {
                            x: item.x,
                            exposure: 1.0,
                        },
                    )?;
                    totals.insert((item.source.clone(), gender, region), id);
                }
                "multinomial" => {
                    if self.config.sources[&item.source].bias.is_some() {
                        return Err(config_err(format!(
                            "source `{}` has a bias model, which diagnosed splits do not support",
                            item.source
                        )));
                    }
                    let group = RiskGroup::parse(&item.group)
                        .filter(|g| g.gender() == gender && self.groups.contains(g))
                        .ok_or_else(|| {
                            config_err(format!(
                                "multinomial item {tag} needs an active {gender} group"
                            ))
                        })?;
                    splits
                        .entry((item.source.clone(), gender, region))
                        .or_default()
                        .push((group, item.x));
                }
                other => return Err(config_err(format!("unknown likelihood family `{other}`"))),
            }
        }

        for ((source, gender, region), rows) in splits {
            let groups = self.groups_of(gender);
            let mut counts = Vec::with_capacity(groups.len());
            for g in &groups {
                let matching: Vec<u64> = rows.iter().filter(|r| r.0 == *g).map(|r| r.1).collect();
                match matching.as_slice() {
                    [x] => counts.push(*x),
                    [] => return Err(config_err(format!(
                        "diagnosed split `{source}` in {gender}/{region} lacks a count for `{g}`"
                    ))),
                    _ => {
                        return Err(config_err(format!(
                            "diagnosed split `{source}` in {gender}/{region} repeats `{g}`"
                        )))
                    }
                }
            }
            if groups.len() < 2 {
                return Err(config_err(format!(
                    "diagnosed split in {gender}/{region} needs at least two groups"
                )));
            }
            let terms = self.diagnosed_terms(gender, region);
            let mut targets = Vec::with_capacity(groups.len());
            for (i, g) in groups.iter().enumerate() {
                targets.push(self.functional(
                    label("xi", *g, region),
                    Expr::Share {
                        index: i,
                        terms: terms.clone(),
                    },
                )?);
            }
            let size_from = totals.get(&(source.clone(), gender, region)).copied();
            self.b.add_data(
                &format!("split.{source}.{gender}.{region}"),
                targets,
                Observation::Multinomial { counts, size_from },
            )?;
        }
        Ok(())
    }

    fn add_reports(&mut self) -> Result<(), BuildError> {
        for region in self.regions.clone() {
            let mut per_gender: Vec<[NodeId; 3]> = Vec::new();
            for gender in Gender::ALL {
                let groups = self.groups_of(gender);
                if groups.is_empty() {
                    continue;
                }
                let population = self.populations[&(gender, region)] as f64;
                let mut infected = Vec::new();
                let mut diagnosed = Vec::new();
                let mut undiagnosed = Vec::new();
                for g in groups {
                    let (rho, pi, delta) = self.cell_refs(g, region);
                    infected.push(Expr::product(vec![rho.clone(), pi.clone()]));
                    diagnosed.push(Expr::product(vec![rho.clone(), pi.clone(), delta.clone()]));
                    undiagnosed.push(Expr::product(vec![rho, pi, Expr::complement(delta)]));
                }
                let mut ids = [NodeId(0); 3];
                for (slot, (name, terms)) in [
                    ("infected", infected),
                    ("diagnosed", diagnosed),
                    ("undiagnosed", undiagnosed),
                ]
                .into_iter()
                .enumerate()
                {
                    let id = self.b.add_functional(
                        &format!("{name}.{gender}.{region}"),
                        Expr::product(vec![Expr::constant(population), Expr::sum(terms)]),
                    )?;
                    self.b.add_report(id)?;
                    ids[slot] = id;
                }
                per_gender.push(ids);
            }
            if per_gender.len() > 1 {
                for (slot, name) in ["infected", "diagnosed", "undiagnosed"].iter().enumerate() {
                    let id = self.b.add_functional(
                        &format!("{name}.{region}"),
                        Expr::sum(per_gender.iter().map(|ids| Expr::node(ids[slot])).collect()),
                    )?;
                    self.b.add_report(id)?;
                }
            }
        }
        Ok(())
    }
}

fn measure_name(m: Measure) -> &'static str {
    match m {
        Measure::Rho => "rho",
        Measure::Pi => "pi",
        Measure::Delta => "delta",
        Measure::UndiagnosedPrevalence => "undiagnosed",
    }
}

pub fn build_prevalence_graph(config: &ModelConfig) -> Result<PrevalenceModel, BuildError> {
    let groups: Vec<RiskGroup> = match &config.groups.include {
        None => RiskGroup::ALL.to_vec(),
        Some(names) => {
            let mut out = Vec::new();
            for n in names {
                let g = RiskGroup::parse(n)
                    .ok_or_else(|| config_err(format!("unknown group `{n}`")))?;
                if out.contains(&g) {
                    return Err(config_err(format!("group `{n}` listed twice")));
                }
                out.push(g);
            }
            RiskGroup::ALL
                .into_iter()
                .filter(|g| out.contains(g))
                .collect()
        }
    };
    if groups.is_empty() {
        return Err(config_err("no risk groups selected"));
    }

    let mut populations = BTreeMap::new();
    let mut regions = Vec::new();
    for (gender_name, by_region) in &config.populations {
        let gender = Gender::parse(gender_name)
            .ok_or_else(|| config_err(format!("unknown gender `{gender_name}` in populations")))?;
        for (region_name, n) in by_region {
            let region = Region::parse(region_name).ok_or_else(|| {
                config_err(format!("unknown region `{region_name}` in populations"))
            })?;
            if *n == 0 {
                return Err(config_err(format!(
                    "population of {gender}/{region} is zero"
                )));
            }
            populations.insert((gender, region), *n);
            if !regions.contains(&region) {
                regions.push(region);
            }
        }
    }
    regions.sort();
    if regions.is_empty() {
        return Err(config_err("no populations given"));
    }
    for g in &groups {
        for r in &regions {
            if !populations.contains_key(&(g.gender(), *r)) {
                return Err(config_err(format!(
                    "missing {} population for region `{r}`",
                    g.gender()
                )));
            }
        }
    }

    let mut builder = Builder {
        config,
        b: GraphBuilder::new(),
        groups,
        regions,
        populations,
        cells: HashMap::new(),
        nu: HashMap::new(),
        hyper: HashMap::new(),
        epsilon: HashMap::new(),
        functionals: HashMap::new(),
        theta_dimension: 0,
    };
    builder.add_cells()?;
    builder.add_data()?;
    builder.add_reports()?;
    Ok(PrevalenceModel {
        graph: builder.b.freeze()?,
        year: config.year,
        regions: builder.regions,
        groups: builder.groups,
        populations: builder.populations,
        cells: builder.cells,
        nu: builder.nu,
        theta_dimension: builder.theta_dimension,
    })
}
