use approx::assert_relative_eq;

use super::*;
use crate::graph::{GraphBuilder, NodeId};
use crate::sampler::SamplerConfig;

fn unit() -> Prior {
    Prior::Uniform {
        lower: 0.0,
        upper: 1.0,
    }
}

fn beta_binomial(n: u64) -> Graph {
    let mut b = GraphBuilder::new();
    let pi = b.add_basic("pi", Support::UnitInterval, unit()).unwrap();
    b.add_data("y", vec![pi], Observation::Binomial { x: 0, n })
        .unwrap();
    b.freeze().unwrap()
}

fn hierarchy() -> (Graph, NodeId, NodeId) {
    let mut b = GraphBuilder::new();
    let m = b
        .add_basic("m", Support::Real, Prior::Normal { mean: 0.0, sd: 2.0 })
        .unwrap();
    let s = b
        .add_basic("s", Support::PositiveReal, Prior::HalfNormal { sd: 0.5 })
        .unwrap();
    let lor = b
        .add_basic(
            "lor",
            Support::Real,
            Prior::HierarchicalNormal { mean: m, sd: s },
        )
        .unwrap();
    b.add_simplex("w", &["w.a", "w.b", "w.c"], vec![0.5, 1.0, 2.0])
        .unwrap();
    let _ = lor;
    (b.freeze().unwrap(), m, lor)
}

#[test]
fn prior_draws_are_in_support_and_reproducible() {
    let (g, _, _) = hierarchy();
    for seed in 0..200 {
        let t = sample_prior(&g, seed);
        g.check_support(t.values.values()).unwrap();
        let w: f64 = ["w.a", "w.b", "w.c"]
            .iter()
            .map(|l| t.values.get(g.id(l).unwrap()))
            .sum();
        assert!((w - 1.0).abs() < 1e-12);
        assert_eq!(sample_prior(&g, seed), t);
    }
    let u = sample_prior(&beta_binomial(3), 4);
    let p = u.values.get(NodeId(0));
    assert!(p > 0.0 && p < 1.0);
}

#[test]
fn hierarchical_child_centres_on_parent() {
    // E[lor − m] = 0 by the law of total expectation.
    let (g, m, lor) = hierarchy();
    let mut rng = ChaCha20Rng::seed_from_u64(11);
    let reps = 100_000;
    let diffs: Vec<f64> = (0..reps)
        .map(|_| {
            let a = draw_prior(&g, &mut rng);
            a.get(lor) - a.get(m)
        })
        .collect();
    let mean = diffs.iter().sum::<f64>() / reps as f64;
    let sd = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (reps - 1) as f64).sqrt();
    assert!(mean.abs() < 3.0 * sd / (reps as f64).sqrt(), "{mean}");
}

#[test]
fn truncated_normal_prior_respects_support() {
    let mut b = GraphBuilder::new();
    b.add_basic(
        "nu",
        Support::UnitInterval,
        Prior::Normal {
            mean: 0.02,
            sd: 0.05,
        },
    )
    .unwrap();
    let g = b.freeze().unwrap();
    for seed in 0..500 {
        let v = sample_prior(&g, seed).values.get(NodeId(0));
        assert!(v > 0.0 && v < 1.0);
    }
}

#[test]
fn binomial_simulation_clt() {
    let g = beta_binomial(1_000_000);
    let truth = GroundTruth {
        seed: 0,
        values: g.assignment_from(&[("pi", 0.2)]).unwrap(),
    };
    let obs = simulate_dataset(&g, &truth, &Design::from_graph(&g), 5).unwrap();
    let Observation::Binomial { x, n } = obs[0] else {
        panic!()
    };
    let se = (0.2f64 * 0.8 / 1e6).sqrt();
    assert!((x as f64 / n as f64 - 0.2).abs() < 3.0 * se);
}

fn total_and_split(exposure: f64) -> Graph {
    let mut b = GraphBuilder::new();
    let mu = b
        .add_basic(
            "mu",
            Support::PositiveReal,
            Prior::Uniform {
                lower: 0.0,
                upper: 500.0,
            },
        )
        .unwrap();
    let w = b
        .add_simplex("w", &["w.a", "w.b", "w.c"], vec![1.0; 3])
        .unwrap();
    let total = b
        .add_data("total", vec![mu], Observation::Poisson { x: 0, exposure })
        .unwrap();
    b.add_data(
        "split",
        w,
        Observation::Multinomial {
            counts: vec![0, 0, 0],
            size_from: Some(total),
        },
    )
    .unwrap();
    b.freeze().unwrap()
}

#[test]
fn poisson_total_drives_multinomial_split() {
    let g = total_and_split(1.0);
    for seed in 0..50 {
        let truth = sample_prior(&g, seed);
        let obs = simulate_dataset(&g, &truth, &Design::from_graph(&g), seed).unwrap();
        let (Observation::Poisson { x, .. }, Observation::Multinomial { counts, .. }) =
            (&obs[0], &obs[1])
        else {
            panic!()
        };
        assert_eq!(counts.iter().sum::<u64>(), *x);
        let fitted = g.with_observations(obs.clone()).unwrap();
        assert!(fitted.log_joint(&truth.values).unwrap().is_finite());
    }
    let zero = Design(vec![
        DesignEntry::Poisson { exposure: 0.0 },
        DesignEntry::Multinomial { size: 0 },
    ]);
    for seed in 0..20 {
        let obs = simulate_dataset(&g, &sample_prior(&g, seed), &zero, seed).unwrap();
        assert!(matches!(obs[0], Observation::Poisson { x: 0, .. }));
    }
}

#[test]
fn truth_csv_round_trip() {
    let (g, _, _) = hierarchy();
    let t = sample_prior(&g, 3);
    let mut buf = Vec::new();
    write_truth_csv(&g, &t, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("quantity,value\nm,"));
    let rows = read_truth_csv(text.as_bytes()).unwrap();
    let pairs: Vec<(&str, f64)> = rows.iter().map(|(q, v)| (q.as_str(), *v)).collect();
    assert_eq!(g.assignment_from(&pairs).unwrap(), t.values);
}

#[test]
fn conjugate_oracle() {
    assert_eq!(conjugate_posterior_oracle(7, 10), (8.0, 4.0));
    assert_eq!(conjugate_posterior_oracle(0, 0), (1.0, 1.0));
    let (a, b) = conjugate_posterior_oracle(9, 9);
    assert_relative_eq!(a / (a + b), 10.0 / 11.0);
    // Reference value of the Beta(8, 4) CDF at 0.6.
    assert_relative_eq!(beta_cdf_integer(8, 4, 0.6), 0.2962842624, epsilon = 1e-10);
    assert_relative_eq!(beta_cdf_integer(1, 1, 0.3), 0.3, epsilon = 1e-15);
}

#[test]
fn linear_chain_oracle_values() {
    assert_eq!(linear_chain_oracle(0.7, 1.3, 0.0), (1.0, 0.0, 0.0));
    assert_relative_eq!(
        linear_chain_oracle(0.5, 1.0, 1.0).1,
        0.238651,
        epsilon = 1e-6
    );
    assert_relative_eq!(
        linear_chain_oracle(1.0, 1.0, 1.0).1,
        (-1.0f64).exp(),
        epsilon = 1e-15
    );
}

#[test]
fn ks_statistic_of_exact_quantiles_is_small() {
    let n = 1000;
    let draws: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
    assert_relative_eq!(ks_statistic(&draws, |x| x), 0.5 / n as f64, epsilon = 1e-12);
    assert!(ks_critical_1pct(8000) > 0.018 && ks_critical_1pct(8000) < 0.0183);
}

fn sbc_config() -> SamplerConfig {
    SamplerConfig {
        chains: 1,
        iterations: 1_000 + 99 * 10,
        burnin: 1_000,
        thin: 10,
        seed: 17,
        ..SamplerConfig::default()
    }
}

#[test]
fn sbc_beta_binomial_passes_and_negative_control_fails() {
    let g = beta_binomial(20);
    let design = Design::from_graph(&g);
    let run = run_sbc(&g, &design, 100, &sbc_config());
    assert!(run.failures.is_empty());
    assert_eq!(run.draws, 99);
    assert!(run.ranks.iter().flatten().all(|r| r[0] <= 99));
    let good = run.chi_square(0, 10);
    assert!(good < CHI_SQUARE_9_DF_1PCT, "{good}");

    let bad = run_sbc_with(
        &g,
        &design,
        100,
        &sbc_config(),
        Corruption::ScaleProbabilities(2.0),
    );
    let stat = bad.chi_square(0, 10);
    assert!(stat > CHI_SQUARE_9_DF_1PCT, "{stat}");
}

#[test]
fn sbc_without_data_is_uniform() {
    let mut b = GraphBuilder::new();
    b.add_basic("pi", Support::UnitInterval, unit()).unwrap();
    let g = b.freeze().unwrap();
    let run = run_sbc(&g, &Design(vec![]), 60, &sbc_config());
    assert!(run.chi_square(0, 10) < CHI_SQUARE_9_DF_1PCT);
}
