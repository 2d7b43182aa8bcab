use std::path::Path;

use evsynth::graph::{Node, Observation};
use evsynth::prevalence::{build_prevalence_graph, Gender, ModelConfig, Region, RiskGroup};

fn full_config() -> ModelConfig {
    ModelConfig::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/england_wales.toml"))
        .unwrap()
}

/// Check-marks of the data pattern for one region, by gender, excluding
/// the population column: (measure column, rows carrying a mark).
const MALE_MARKS: usize = 3 + 4 + 2 + 3 + 1;
const FEMALE_MARKS: usize = 5 + 4 + 4 + 1 + 2;

#[test]
fn full_model_has_111_theta_parameters() {
    let model = build_prevalence_graph(&full_config()).unwrap();
    assert_eq!(model.theta_dimension(), 111);
    assert_eq!(model.groups.len(), 13);
    assert_eq!(model.regions, Region::ALL.to_vec());
    assert_eq!(model.groups_of(Gender::Male).len(), 8);
    assert_eq!(model.groups_of(Gender::Female).len(), 5);
}

#[test]
fn data_nodes_follow_the_check_mark_tally() {
    assert_eq!(MALE_MARKS + FEMALE_MARKS, 29);
    let model = build_prevalence_graph(&full_config()).unwrap();
    let g = &model.graph;
    // Marks that share one observation collapse into one node: the
    // diagnosed-split column of each gender is one multinomial, and the
    // three lower-risk/IDU/STI ψ(ρ,π) marks for women are one NSSA survey.
    let male_nodes = MALE_MARKS - (4 - 1);
    let female_nodes = FEMALE_MARKS - (3 - 1) - (3 - 1);
    assert_eq!(male_nodes, 10);
    assert_eq!(female_nodes, 12);
    // Extra surveys beyond the tally: ρ for msm-sti, msm-past and each
    // gender's current IDU, plus an undiagnosed-prevalence survey of all MSM.
    let extra = 3 + 1 + 1;
    assert_eq!(
        g.data_nodes().len(),
        3 * (male_nodes + female_nodes + extra)
    );

    let mut multinomials = 0;
    let mut poissons = 0;
    for id in g.data_nodes() {
        if let Node::Data(d) = g.node(*id) {
            match &d.observation {
                Observation::Multinomial { counts, size_from } => {
                    multinomials += 1;
                    assert!(size_from.is_some());
                    assert!(counts.len() == 8 || counts.len() == 5);
                }
                Observation::Poisson { .. } => poissons += 1,
                Observation::Binomial { .. } => {}
            }
        }
    }
    assert_eq!((multinomials, poissons), (6, 6));
}

#[test]
fn full_model_evaluates_at_a_central_point() {
    let model = build_prevalence_graph(&full_config()).unwrap();
    let g = &model.graph;
    let mut theta = g.assignment();
    for id in g.basic_nodes() {
        let label = g.label(id);
        let v = if label.starts_with("pi.") {
            0.01
        } else if label.starts_with("delta.") {
            0.7
        } else if label.starts_with("nu.") {
            0.05
        } else if label.starts_with("sigma") || label.starts_with("omega") {
            0.1
        } else {
            0.0
        };
        theta.set(id, v);
    }
    for block in g.blocks() {
        let k = block.members.len() as f64;
        for m in &block.members {
            theta.set(*m, 1.0 / k);
        }
    }
    let lj = g.log_joint(&theta).unwrap();
    assert!(lj.is_finite(), "{lj}");
    let c = model.cell(RiskGroup::MaleSsa, Region::OuterLondon).unwrap();
    let full = g.evaluate_functionals(&theta).unwrap();
    assert_eq!(full.get(c.pi), 0.01);
}

#[test]
fn graph_document_round_trips_for_the_full_model() {
    let model = build_prevalence_graph(&full_config()).unwrap();
    let text = model.graph.to_document();
    let back = evsynth::graph::Graph::from_document(&text).unwrap();
    assert_eq!(back.to_document(), text);
    assert_eq!(back.len(), model.graph.len());
}
