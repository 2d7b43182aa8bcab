//! Acceptance checks. Runs every criterion, prints one PASS/FAIL line for
//! each and exits non-zero if any fails.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use evsynth::cli::{joint_graph, run, Command, SamplerArgs, MANIFEST_FILE};
use evsynth::distributions::{multinomial_log_pmf, poisson_log_pmf};
use evsynth::dynamics::{integrate, CompartmentState, IntervalRates};
use evsynth::graph::{Graph, GraphBuilder, NodeId, Observation, Prior, Support};
use evsynth::prevalence::{build_prevalence_graph, ModelConfig, Region};
use evsynth::sampler::{
    default_monitors, run_chains, summarize, summarize_quantity, SamplerConfig,
};
use evsynth::synthgen::{
    beta_cdf_integer, conjugate_posterior_oracle, ks_critical_1pct, ks_statistic,
    linear_chain_oracle, read_truth_csv, run_sbc, run_sbc_with, sample_prior, simulate_dataset,
    Corruption, Design, GroundTruth, CHI_SQUARE_9_DF_1PCT,
};

/// Tolerances and thresholds.
const FACTORIZATION_TOL: f64 = 1e-10;
const ODE_TOL: f64 = 1e-6;
const ODE_MIN_ORDER: f64 = 3.9;
const RHAT_MAX: f64 = 1.05;
const TRAJECTORY_SUM_TOL: f64 = 1e-9;
const SBC_BINS: usize = 10;

struct Outcome {
    pass: bool,
    detail: String,
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn load(name: &str) -> ModelConfig {
    ModelConfig::load(&configs().join(name)).expect("config loads")
}

fn beta_binomial(x: u64, n: u64) -> Graph {
    let mut b = GraphBuilder::new();
    let pi = b
        .add_basic(
            "pi",
            Support::UnitInterval,
            Prior::Uniform {
                lower: 0.0,
                upper: 1.0,
            },
        )
        .unwrap();
    b.add_data("y", vec![pi], Observation::Binomial { x, n })
        .unwrap();
    b.freeze().unwrap()
}

fn conjugate_recovery() -> Outcome {
    let g = beta_binomial(7, 10);
    let (a, b) = conjugate_posterior_oracle(7, 10);
    let (thin, kept, burnin) = (10, 8000, 1000);
    let crit = ks_critical_1pct(2 * kept);
    let mut ks_passes = 0;
    let mut mean_ok = false;
    let mut mean_detail = String::new();
    for seed in 1..=20 {
        let config = SamplerConfig {
            chains: 2,
            iterations: burnin + kept * thin,
            burnin,
            thin,
            seed,
            ..SamplerConfig::default()
        };
        let chains = run_chains(&g, &config, &default_monitors(&g)).unwrap();
        let draws: Vec<f64> = chains.iter().flat_map(|c| c.column(0)).collect();
        if ks_statistic(&draws, |t| beta_cdf_integer(a as u64, b as u64, t)) < crit {
            ks_passes += 1;
        }
        if seed == 1 {
            let s = summarize_quantity(&chains, "pi").unwrap();
            let mcse = s.sd / s.ess.sqrt();
            let err = (s.mean - a / (a + b)).abs();
            mean_ok = err < 3.0 * mcse;
            mean_detail = format!("|mean − 2/3| = {err:.5} vs 3·MCSE = {:.5}", 3.0 * mcse);
        }
    }
    Outcome {
        pass: mean_ok && ks_passes >= 18,
        detail: format!("{mean_detail}; KS below {crit:.5} in {ks_passes}/20 seeds"),
    }
}

fn compositions(total: u64, k: usize) -> Vec<Vec<u64>> {
    if k == 1 {
        return vec![vec![total]];
    }
    (0..=total)
        .flat_map(|first| {
            compositions(total - first, k - 1)
                .into_iter()
                .map(move |mut rest| {
                    rest.insert(0, first);
                    rest
                })
        })
        .collect()
}

fn split_graph(k: usize) -> Graph {
    let mut b = GraphBuilder::new();
    let mu = b
        .add_basic(
            "mu",
            Support::PositiveReal,
            Prior::Uniform {
                lower: 0.0,
                upper: 100.0,
            },
        )
        .unwrap();
    let labels: Vec<String> = (0..k).map(|i| format!("w.{i}")).collect();
    let refs: Vec<&str> = labels.iter().map(String::as_str).collect();
    let w = b.add_simplex("w", &refs, vec![1.0; k]).unwrap();
    let total = b
        .add_data(
            "total",
            vec![mu],
            Observation::Poisson {
                x: 0,
                exposure: 1.0,
            },
        )
        .unwrap();
    b.add_data(
        "split",
        w,
        Observation::Multinomial {
            counts: vec![0; k],
            size_from: Some(total),
        },
    )
    .unwrap();
    b.freeze().unwrap()
}

fn poisson_multinomial_factorization() -> Outcome {
    let rates = [0.7, 2.3, 5.1];
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for k in 1..=3 {
        let mus = &rates[..k];
        let sum: f64 = mus.iter().sum();
        let shares: Vec<f64> = mus.iter().map(|m| m / sum).collect();
        let graph = (k > 1).then(|| split_graph(k));
        for total in 0..=8u64 {
            for counts in compositions(total, k) {
                let independent: f64 = counts
                    .iter()
                    .zip(mus)
                    .map(|(x, m)| poisson_log_pmf(*x, *m))
                    .sum();
                let joint =
                    poisson_log_pmf(total, sum) + multinomial_log_pmf(&counts, &shares).unwrap();
                worst = worst.max((joint - independent).abs());
                if let Some(g) = &graph {
                    let fitted = g
                        .with_observations(vec![
                            Observation::Poisson {
                                x: total,
                                exposure: 1.0,
                            },
                            Observation::Multinomial {
                                counts: counts.clone(),
                                size_from: Some(g.data_nodes()[0]),
                            },
                        ])
                        .unwrap();
                    let mut pairs = vec![("mu".to_string(), sum)];
                    pairs.extend(
                        shares
                            .iter()
                            .enumerate()
                            .map(|(i, s)| (format!("w.{i}"), *s)),
                    );
                    let refs: Vec<(&str, f64)> =
                        pairs.iter().map(|(l, v)| (l.as_str(), *v)).collect();
                    let theta = fitted.assignment_from(&refs).unwrap();
                    let full = fitted.evaluate_functionals(&theta).unwrap();
                    let ll = fitted.log_likelihood(full.values()).unwrap();
                    worst = worst.max((ll - independent).abs());
                }
                cases += 1;
            }
        }
    }
    Outcome {
        pass: worst < FACTORIZATION_TOL,
        detail: format!("{cases} count vectors, max |Δ log L| = {worst:.2e}"),
    }
}

fn model_scale() -> Outcome {
    let model = build_prevalence_graph(&load("england_wales.toml")).unwrap();
    let (theta, groups, regions) = (
        model.theta_dimension(),
        model.groups.len(),
        model.regions.len(),
    );
    Outcome {
        pass: theta == 111 && groups == 13 && regions == 3 && model.regions == Region::ALL.to_vec(),
        detail: format!("{theta} θ parameters, {groups} groups, {regions} regions"),
    }
}

fn chain_rates(alpha: f64, beta: f64) -> IntervalRates {
    IntervalRates {
        uptake: 0.0,
        incidence: alpha,
        diagnosis: beta,
        exit: 0.0,
    }
}

fn chain_error(alpha: f64, beta: f64, h: f64, years: usize) -> f64 {
    let start = CompartmentState::new(0.0, 1.0, 0.0, 0.0).unwrap();
    let traj = integrate(&start, &vec![chain_rates(alpha, beta); years], h).unwrap();
    traj.states
        .iter()
        .enumerate()
        .map(|(t, c)| {
            let (s, u, d) = linear_chain_oracle(alpha, beta, t as f64);
            (c.s - s).abs().max((c.u - u).abs()).max((c.d - d).abs())
        })
        .fold(0.0, f64::max)
}

fn ode_accuracy() -> Outcome {
    let grid = [0.1, 0.4, 0.8, 1.5, 3.0];
    let mut worst: f64 = 0.0;
    for alpha in grid {
        for beta in grid {
            worst = worst.max(chain_error(alpha, beta, 0.01, 5));
        }
    }
    let order = (chain_error(3.0, 1.5, 0.1, 1) / chain_error(3.0, 1.5, 0.05, 1)).log2();
    Outcome {
        pass: worst < ODE_TOL && order >= ODE_MIN_ORDER,
        detail: format!(
            "max error {worst:.2e} at h = 0.01 over 25 (α, β); observed order {order:.3}"
        ),
    }
}

fn static_recovery() -> Outcome {
    let model = build_prevalence_graph(&load("reduced.toml")).unwrap();
    let g = &model.graph;
    let design = Design::from_graph(g);
    let (mut covered, mut total, mut worst_rhat) = (0, 0, 0.0f64);
    for r in 0..20u64 {
        let truth = sample_prior(g, 100 + r);
        let fitted = g
            .with_observations(simulate_dataset(g, &truth, &design, 200 + r).unwrap())
            .unwrap();
        let config = SamplerConfig {
            seed: 300 + r,
            ..SamplerConfig::default()
        };
        let basics: Vec<NodeId> = fitted.basic_nodes().collect();
        let chains = run_chains(&fitted, &config, &basics).unwrap();
        for s in summarize(&chains).unwrap() {
            let t = truth.values.get(fitted.id(&s.quantity).unwrap());
            covered += usize::from(s.q025 <= t && t <= s.q975);
            total += 1;
            worst_rhat = worst_rhat.max(s.rhat.unwrap_or(f64::INFINITY));
        }
    }
    let share = covered as f64 / total as f64;
    Outcome {
        pass: share >= 0.9 && worst_rhat < RHAT_MAX,
        detail: format!(
            "{covered}/{total} truths inside 95% intervals ({:.1}%), max R̂ {worst_rhat:.4}",
            100.0 * share
        ),
    }
}

fn interval_width(config: &ModelConfig, quantity: &str) -> f64 {
    let g = build_prevalence_graph(config).unwrap().graph;
    let mut monitors = default_monitors(&g);
    let id = g.id(quantity).unwrap();
    if !monitors.contains(&id) {
        monitors.push(id);
    }
    let chains = run_chains(&g, &SamplerConfig::default(), &monitors).unwrap();
    let s = summarize_quantity(&chains, quantity).unwrap();
    s.q975 - s.q025
}

fn hierarchy_borrowing() -> Outcome {
    let quantity = "pi.male-lr.inner-london";
    let mut config = load("borrowing.toml");
    let linked = interval_width(&config, quantity);
    config.hyperpriors.hierarchy = false;
    let independent = interval_width(&config, quantity);
    Outcome {
        pass: linked < independent,
        detail: format!(
            "95% width of {quantity}: {linked:.5} linked vs {independent:.5} independent"
        ),
    }
}

fn joint_recovery() -> Outcome {
    let path = configs().join("joint_msm.toml");
    let config = ModelConfig::load(&path).unwrap();
    let (g, joint) = joint_graph(&path, &config, &[]).unwrap();
    let truth_rows =
        read_truth_csv(fs::File::open(configs().join("joint_msm_truth.csv")).unwrap()).unwrap();
    let refs: Vec<(&str, f64)> = truth_rows.iter().map(|(l, v)| (l.as_str(), *v)).collect();
    let truth = GroundTruth {
        seed: 0,
        values: g.assignment_from(&refs).unwrap(),
    };
    let fitted = g
        .with_observations(simulate_dataset(&g, &truth, &Design::from_graph(&g), 77).unwrap())
        .unwrap();
    let mut monitors = default_monitors(&fitted);
    let mut compartments = Vec::new();
    for t in 1..=joint.years {
        let ids: Vec<NodeId> = ["e", "s", "u", "d"]
            .iter()
            .map(|c| fitted.id(&format!("traj.{c}.{t}")).unwrap())
            .collect();
        monitors.extend(&ids);
        compartments.push(ids);
    }
    let chains = run_chains(&fitted, &SamplerConfig::default(), &monitors).unwrap();

    let mut covered = 0;
    for t in 1..joint.years {
        let label = format!("lambda_su.{t}");
        let s = summarize_quantity(&chains, &label).unwrap();
        let v = truth.values.get(fitted.id(&label).unwrap());
        covered += usize::from(s.q025 <= v && v <= s.q975);
    }
    let mut worst_sum: f64 = 0.0;
    for chain in &chains {
        let columns: Vec<Vec<usize>> = compartments
            .iter()
            .map(|ids| {
                ids.iter()
                    .map(|id| {
                        chain
                            .monitors
                            .iter()
                            .position(|m| m == fitted.label(*id))
                            .unwrap()
                    })
                    .collect()
            })
            .collect();
        for row in &chain.samples {
            for cols in &columns {
                let sum: f64 = cols.iter().map(|j| row[*j]).sum();
                worst_sum = worst_sum.max((sum - 1.0).abs());
            }
        }
    }
    let intervals = joint.years - 1;
    Outcome {
        pass: covered + 1 >= intervals && worst_sum < TRAJECTORY_SUM_TOL,
        detail: format!(
            "λ_su covered in {covered}/{intervals} intervals; max |Σ c − 1| = {worst_sum:.2e}"
        ),
    }
}

fn sbc() -> Outcome {
    let g = build_prevalence_graph(&load("reduced.toml")).unwrap().graph;
    let design = Design::from_graph(&g);
    let config = SamplerConfig {
        chains: 1,
        burnin: 1000,
        iterations: 1000 + 99 * 10,
        thin: 10,
        seed: 8,
        ..SamplerConfig::default()
    };
    let honest = run_sbc(&g, &design, 100, &config);
    let worst = honest.max_chi_square(SBC_BINS);
    let corrupted = run_sbc_with(
        &g,
        &design,
        100,
        &config,
        Corruption::ScaleProbabilities(2.0),
    );
    let control = corrupted.max_chi_square(SBC_BINS);
    Outcome {
        pass: honest.failures.is_empty() && worst < CHI_SQUARE_9_DF_1PCT && control > CHI_SQUARE_9_DF_1PCT,
        detail: format!(
            "max χ² {worst:.2} over {} quantities, corrupted control {control:.2}, critical {CHI_SQUARE_9_DF_1PCT:.3}",
            honest.quantities.len()
        ),
    }
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("fit");
    let sampler = SamplerArgs {
        chains: 2,
        iterations: 1500,
        burnin: 500,
        thin: 2,
        seed: 42,
        rhat_threshold: f64::INFINITY,
        out: out.clone(),
    };
    run(&Command::Fit {
        config: configs().join("borrowing.toml"),
        data: vec![],
        sampler,
    })
    .unwrap();
    let files = [
        "samples_chain1.csv",
        "samples_chain2.csv",
        "summary.csv",
        "diagnostics.csv",
    ];
    let first: Vec<Vec<u8>> = files
        .iter()
        .map(|f| fs::read(out.join(f)).unwrap())
        .collect();
    for f in files {
        fs::remove_file(out.join(f)).unwrap();
    }
    run(&Command::Rerun {
        manifest: out.join(MANIFEST_FILE),
    })
    .unwrap();
    let identical = files
        .iter()
        .zip(&first)
        .filter(|(f, bytes)| fs::read(out.join(f)).unwrap() == **bytes)
        .count();
    Outcome {
        pass: identical == files.len(),
        detail: format!(
            "{identical}/{} output files byte-identical after rerun",
            files.len()
        ),
    }
}

type Criterion = (&'static str, f64, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 9] = [
        ("conjugate recovery", 10.0, conjugate_recovery),
        (
            "Poisson–multinomial factorization",
            1.0,
            poisson_multinomial_factorization,
        ),
        ("model scale", 1.0, model_scale),
        ("ODE accuracy", 5.0, ode_accuracy),
        ("static posterior recovery", 600.0, static_recovery),
        ("hierarchy borrowing", 300.0, hierarchy_borrowing),
        ("joint-model recovery", 1200.0, joint_recovery),
        ("simulation-based calibration", 1800.0, sbc),
        ("determinism", f64::INFINITY, determinism),
    ];
    let mut failed = 0;
    for (i, (name, budget, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = check();
        let secs = start.elapsed().as_secs_f64();
        let pass = outcome.pass && secs < *budget;
        failed += usize::from(!pass);
        println!(
            "{} {}. {name}: {} [{secs:.1} s, limit {budget} s]",
            if pass { "PASS" } else { "FAIL" },
            i + 1,
            outcome.detail
        );
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
