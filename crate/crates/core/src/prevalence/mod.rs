//! Multi-source HIV prevalence model: 13 risk groups across two genders
//! and three regions, diagnosed-count totals and splits, reporting bias,
//! and hierarchical male-to-female log odds ratios.

mod build;
mod config;

use std::fmt;

use thiserror::Error;

use crate::distributions::{expit, logit};

pub use build::{build_prevalence_graph, BuildError, CellNodes, Measure, PrevalenceModel};
pub use config::{
    read_data_csv, write_data_csv, AggregateConfig, BiasConfig, BiasScale, ConfigError, DataItem,
    DynamicsConfig, GroupsConfig, HyperpriorConfig, ModelConfig, PriorConfig, SourceBias,
    SourceConfig,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PrevalenceError {
    #[error("every diagnosed-share numerator is zero")]
    ZeroShares,
    #[error("male-to-female link needs 0 < π_f < 1, got {0}")]
    BoundaryProbability(f64),
    #[error("empty or zero-weight mixture")]
    EmptyMixture,
    #[error("{0} weights for {1} groups")]
    WeightMismatch(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Gender {
    Male,
    Female,
}

impl Gender {
    pub const ALL: [Gender; 2] = [Gender::Male, Gender::Female];

    pub fn as_str(&self) -> &'static str {
        match self {
            Gender::Male => "male",
            Gender::Female => "female",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Gender::ALL.into_iter().find(|g| g.as_str() == s)
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Region {
    InnerLondon,
    OuterLondon,
    RestOfEw,
}

impl Region {
    pub const ALL: [Region; 3] = [Region::InnerLondon, Region::OuterLondon, Region::RestOfEw];

    pub fn as_str(&self) -> &'static str {
        match self {
            Region::InnerLondon => "inner-london",
            Region::OuterLondon => "outer-london",
            Region::RestOfEw => "rest-of-ew",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Region::ALL.into_iter().find(|r| r.as_str() == s)
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Groups that share a male-to-female log odds ratio family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    Idu,
    Ssa,
    Sti,
    Lr,
}

impl Family {
    pub fn as_str(&self) -> &'static str {
        match self {
            Family::Idu => "idu",
            Family::Ssa => "ssa",
            Family::Sti => "sti",
            Family::Lr => "lr",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RiskGroup {
    MsmSti,
    MsmNonSti,
    MsmPast,
    MaleIduCurrent,
    MaleIduPast,
    MaleSsa,
    MaleSti,
    MaleLr,
    FemaleIduCurrent,
    FemaleIduPast,
    FemaleSsa,
    FemaleSti,
    FemaleLr,
}

impl RiskGroup {
    pub const ALL: [RiskGroup; 13] = [
        RiskGroup::MsmSti,
        RiskGroup::MsmNonSti,
        RiskGroup::MsmPast,
        RiskGroup::MaleIduCurrent,
        RiskGroup::MaleIduPast,
        RiskGroup::MaleSsa,
        RiskGroup::MaleSti,
        RiskGroup::MaleLr,
        RiskGroup::FemaleIduCurrent,
        RiskGroup::FemaleIduPast,
        RiskGroup::FemaleSsa,
        RiskGroup::FemaleSti,
        RiskGroup::FemaleLr,
    ];

    pub fn of_gender(gender: Gender) -> impl Iterator<Item = RiskGroup> {
        Self::ALL.into_iter().filter(move |g| g.gender() == gender)
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            RiskGroup::MsmSti => "msm-sti",
            RiskGroup::MsmNonSti => "msm-non-sti",
            RiskGroup::MsmPast => "msm-past",
            RiskGroup::MaleIduCurrent => "male-idu-current",
            RiskGroup::MaleIduPast => "male-idu-past",
            RiskGroup::MaleSsa => "male-ssa",
            RiskGroup::MaleSti => "male-sti",
            RiskGroup::MaleLr => "male-lr",
            RiskGroup::FemaleIduCurrent => "female-idu-current",
            RiskGroup::FemaleIduPast => "female-idu-past",
            RiskGroup::FemaleSsa => "female-ssa",
            RiskGroup::FemaleSti => "female-sti",
            RiskGroup::FemaleLr => "female-lr",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|g| g.as_str() == s)
    }

    pub fn gender(&self) -> Gender {
        match self {
            RiskGroup::FemaleIduCurrent
            | RiskGroup::FemaleIduPast
            | RiskGroup::FemaleSsa
            | RiskGroup::FemaleSti
            | RiskGroup::FemaleLr => Gender::Female,
            _ => Gender::Male,
        }
    }

    /// Log odds ratio family; `None` for the MSM groups.
    pub fn family(&self) -> Option<Family> {
        match self {
            RiskGroup::MaleIduCurrent
            | RiskGroup::MaleIduPast
            | RiskGroup::FemaleIduCurrent
            | RiskGroup::FemaleIduPast => Some(Family::Idu),
            RiskGroup::MaleSsa | RiskGroup::FemaleSsa => Some(Family::Ssa),
            RiskGroup::MaleSti | RiskGroup::FemaleSti => Some(Family::Sti),
            RiskGroup::MaleLr | RiskGroup::FemaleLr => Some(Family::Lr),
            _ => None,
        }
    }

    /// The female group a male group is linked to.
    pub fn female_counterpart(&self) -> Option<RiskGroup> {
        match self {
            RiskGroup::MaleIduCurrent => Some(RiskGroup::FemaleIduCurrent),
            RiskGroup::MaleIduPast => Some(RiskGroup::FemaleIduPast),
            RiskGroup::MaleSsa => Some(RiskGroup::FemaleSsa),
            RiskGroup::MaleSti => Some(RiskGroup::FemaleSti),
            RiskGroup::MaleLr => Some(RiskGroup::FemaleLr),
            _ => None,
        }
    }
}

impl fmt::Display for RiskGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// `(ρ, π, δ)` for one group in one gender × region.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellParams {
    pub rho: f64,
    pub pi: f64,
    pub delta: f64,
}

/// `N Σ_g (1 − ν_g) δ_g π_g ρ_g`.
pub fn mu_diagnosed(population: f64, cells: &[CellParams], nu: &[f64]) -> f64 {
    population
        * cells
            .iter()
            .zip(nu)
            .map(|(c, v)| (1.0 - v) * c.delta * c.pi * c.rho)
            .sum::<f64>()
}

/// Share of each group among reported diagnoses.
pub fn xi_group_shares(cells: &[CellParams], nu: &[f64]) -> Result<Vec<f64>, PrevalenceError> {
    let terms: Vec<f64> = cells
        .iter()
        .zip(nu)
        .map(|(c, v)| (1.0 - v) * c.delta * c.pi * c.rho)
        .collect();
    let total: f64 = terms.iter().sum();
    if !(total > 0.0) {
        return Err(PrevalenceError::ZeroShares);
    }
    Ok(terms.into_iter().map(|t| t / total).collect())
}

/// `expit(lor + logit(π_f))`; the same link serves δ.
pub fn link_male_to_female(pi_f: f64, lor: f64) -> Result<f64, PrevalenceError> {
    if !(pi_f > 0.0 && pi_f < 1.0) {
        return Err(PrevalenceError::BoundaryProbability(pi_f));
    }
    Ok(expit(lor + logit(pi_f)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregatePrevalence {
    pub total: f64,
    pub diagnosed: f64,
    pub undiagnosed: f64,
}

pub fn aggregate_prevalence(cells: &[CellParams]) -> AggregatePrevalence {
    let diagnosed = cells.iter().map(|c| c.rho * c.pi * c.delta).sum();
    let undiagnosed = cells.iter().map(|c| c.rho * c.pi * (1.0 - c.delta)).sum();
    AggregatePrevalence {
        total: diagnosed + undiagnosed,
        diagnosed,
        undiagnosed,
    }
}

fn check_weights(cells: &[CellParams], weights: &[f64]) -> Result<(), PrevalenceError> {
    if cells.len() != weights.len() {
        return Err(PrevalenceError::WeightMismatch(weights.len(), cells.len()));
    }
    if cells.is_empty() {
        return Err(PrevalenceError::EmptyMixture);
    }
    Ok(())
}

/// Prevalence in a weighted mixture: `Σ w ρ π / Σ w ρ`.
pub fn composite_survey_functional(
    cells: &[CellParams],
    weights: &[f64],
) -> Result<f64, PrevalenceError> {
    check_weights(cells, weights)?;
    let den: f64 = cells.iter().zip(weights).map(|(c, w)| w * c.rho).sum();
    if !(den > 0.0) {
        return Err(PrevalenceError::EmptyMixture);
    }
    let num: f64 = cells
        .iter()
        .zip(weights)
        .map(|(c, w)| w * c.rho * c.pi)
        .sum();
    Ok(num / den)
}

/// Proportion diagnosed among the infected of a weighted mixture:
/// `Σ w ρ π δ / Σ w ρ π`.
pub fn composite_diagnosed_fraction(
    cells: &[CellParams],
    weights: &[f64],
) -> Result<f64, PrevalenceError> {
    check_weights(cells, weights)?;
    let den: f64 = cells
        .iter()
        .zip(weights)
        .map(|(c, w)| w * c.rho * c.pi)
        .sum();
    if !(den > 0.0) {
        return Err(PrevalenceError::EmptyMixture);
    }
    let num: f64 = cells
        .iter()
        .zip(weights)
        .map(|(c, w)| w * c.rho * c.pi * c.delta)
        .sum();
    Ok(num / den)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::{multinomial_log_pmf, poisson_log_pmf};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn cell(rho: f64, pi: f64, delta: f64) -> CellParams {
        CellParams { rho, pi, delta }
    }

    #[test]
    fn group_catalogue() {
        assert_eq!(RiskGroup::of_gender(Gender::Male).count(), 8);
        assert_eq!(RiskGroup::of_gender(Gender::Female).count(), 5);
        assert_eq!(Region::ALL.len(), 3);
        for g in RiskGroup::ALL {
            assert_eq!(RiskGroup::parse(g.as_str()), Some(g));
            if let Some(f) = g.female_counterpart() {
                assert_eq!(f.gender(), Gender::Female);
                assert_eq!(f.family(), g.family());
            }
        }
    }

    #[test]
    fn mu_examples() {
        assert_eq!(mu_diagnosed(1000.0, &[cell(1.0, 0.1, 0.5)], &[0.0]), 50.0);
        assert_eq!(mu_diagnosed(1000.0, &[cell(1.0, 0.1, 0.5)], &[1.0]), 0.0);
        let two = [cell(0.6, 0.1, 0.5), cell(0.4, 0.2, 0.25)];
        assert_relative_eq!(
            mu_diagnosed(1000.0, &two, &[0.0, 0.5]),
            40.0,
            max_relative = 1e-14
        );
    }

    #[test]
    fn xi_examples() {
        let same = [cell(0.25, 0.1, 0.5); 4];
        let xi = xi_group_shares(&same, &[0.1; 4]).unwrap();
        assert!(xi.iter().all(|s| (*s - 0.25).abs() < 1e-15));

        let two = [cell(0.6, 0.1, 0.5), cell(0.4, 0.2, 0.25)];
        let xi = xi_group_shares(&two, &[0.0, 0.5]).unwrap();
        assert_relative_eq!(xi[0], 0.75, max_relative = 1e-14);
        assert_relative_eq!(xi[1], 0.25, max_relative = 1e-14);

        assert_eq!(
            xi_group_shares(&[cell(1.0, 0.3, 0.2)], &[0.1]).unwrap(),
            vec![1.0]
        );
        assert_eq!(
            xi_group_shares(&[cell(1.0, 0.0, 0.2)], &[0.0]),
            Err(PrevalenceError::ZeroShares)
        );
    }

    #[test]
    fn link_examples() {
        assert_relative_eq!(
            link_male_to_female(0.37, 0.0).unwrap(),
            0.37,
            max_relative = 1e-14
        );
        assert_relative_eq!(
            link_male_to_female(0.5, 2f64.ln()).unwrap(),
            2.0 / 3.0,
            max_relative = 1e-14
        );
        assert_relative_eq!(
            link_male_to_female(0.1, 3f64.ln()).unwrap(),
            0.25,
            max_relative = 1e-14
        );
        assert!(link_male_to_female(0.0, 1.0).is_err());
        assert!(link_male_to_female(1.0, 1.0).is_err());
    }

    #[test]
    fn aggregate_examples() {
        let a = aggregate_prevalence(&[cell(1.0, 0.1, 0.6)]);
        assert_relative_eq!(a.total, 0.1, max_relative = 1e-15);
        assert_relative_eq!(a.diagnosed, 0.06, max_relative = 1e-15);
        assert_relative_eq!(a.undiagnosed, 0.04, max_relative = 1e-14);

        let a = aggregate_prevalence(&[cell(0.3, 0.2, 1.0), cell(0.7, 0.05, 1.0)]);
        assert_eq!(a.undiagnosed, 0.0);

        let a = aggregate_prevalence(&[cell(0.5, 0.02, 0.5), cell(0.5, 0.2, 0.5)]);
        assert_relative_eq!(a.total, 0.11, max_relative = 1e-14);
        assert_relative_eq!(a.diagnosed, 0.055, max_relative = 1e-14);
    }

    #[test]
    fn composite_examples() {
        assert_relative_eq!(
            composite_survey_functional(&[cell(0.3, 0.17, 0.5)], &[4.0]).unwrap(),
            0.17,
            max_relative = 1e-15
        );
        let sym = [cell(0.5, 0.1, 0.5), cell(0.5, 0.3, 0.5)];
        assert_relative_eq!(
            composite_survey_functional(&sym, &[1.0, 1.0]).unwrap(),
            0.2,
            max_relative = 1e-14
        );
        let skew = [cell(0.01, 0.4, 0.5), cell(0.99, 0.01, 0.5)];
        let want = (2.0 * 0.01 * 0.4 + 0.99 * 0.01) / (2.0 * 0.01 + 0.99);
        let got = composite_survey_functional(&skew, &[2.0, 1.0]).unwrap();
        assert_relative_eq!(got, want, max_relative = 1e-14);
        assert!((got - 0.01772).abs() < 5e-6);
        assert_eq!(
            composite_survey_functional(&[], &[]),
            Err(PrevalenceError::EmptyMixture)
        );
        assert_relative_eq!(
            composite_diagnosed_fraction(&[cell(0.5, 0.1, 0.2), cell(0.5, 0.1, 0.6)], &[1.0, 1.0])
                .unwrap(),
            0.4,
            max_relative = 1e-14
        );
    }

    #[test]
    fn poisson_multinomial_factorization() {
        // Brute force over every count vector with total ≤ 8, k ≤ 3.
        for k in 1..=3usize {
            let xi: Vec<f64> = match k {
                1 => vec![1.0],
                2 => vec![0.3, 0.7],
                _ => vec![0.2, 0.5, 0.3],
            };
            let mu = 4.2;
            let mut counts = vec![0u64; k];
            loop {
                let total: u64 = counts.iter().sum();
                if total <= 8 {
                    let joint =
                        poisson_log_pmf(total, mu) + multinomial_log_pmf(&counts, &xi).unwrap();
                    let split: f64 = counts
                        .iter()
                        .zip(&xi)
                        .map(|(x, s)| poisson_log_pmf(*x, mu * s))
                        .sum();
                    assert!((joint - split).abs() < 1e-10, "{counts:?}");
                }
                let mut i = 0;
                while i < k {
                    counts[i] += 1;
                    if counts[i] <= 8 {
                        break;
                    }
                    counts[i] = 0;
                    i += 1;
                }
                if i == k {
                    break;
                }
            }
        }
    }

    proptest! {
        #[test]
        fn shares_scale_invariant(
            raw in prop::collection::vec((0.01f64..1.0, 0.01f64..1.0, 0.01f64..1.0, 0.0f64..0.5), 1..8),
            scale in 0.01f64..0.99,
        ) {
            let cells: Vec<CellParams> = raw.iter().map(|(r, p, d, _)| cell(*r, *p, *d)).collect();
            let nu: Vec<f64> = raw.iter().map(|t| t.3).collect();
            let scaled: Vec<CellParams> = cells.iter().map(|c| cell(c.rho * scale, c.pi, c.delta)).collect();
            let a = xi_group_shares(&cells, &nu).unwrap();
            let b = xi_group_shares(&scaled, &nu).unwrap();
            prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]
        #[test]
        fn aggregate_decomposes_exactly(
            raw in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0), 1..13),
        ) {
            let cells: Vec<CellParams> = raw.iter().map(|(r, p, d)| cell(*r, *p, *d)).collect();
            let a = aggregate_prevalence(&cells);
            let residual = a.total - a.diagnosed - a.undiagnosed;
            prop_assert!(residual.abs() <= 4.0 * f64::EPSILON * a.total.max(f64::MIN_POSITIVE));
            let nu = vec![0.0; cells.len()];
            let mu = mu_diagnosed(1234.0, &cells, &nu);
            prop_assert!((mu - 1234.0 * a.diagnosed).abs() <= 1e-9 * mu.max(1.0));
        }
    }
}
