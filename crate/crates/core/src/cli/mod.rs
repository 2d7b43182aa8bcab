//! Command-line front end: `check`, `simulate`, `fit`, `fit-joint` and
//! `rerun`.

mod manifest;

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::dynamics::joint::{build_joint_graph, rate_label, JointConfig, JointError, RateKind};
use crate::dynamics::{
    read_rate_csv, write_trajectory_csv, CompartmentState, DynamicsError, PrevalenceDatum,
    PrevalenceQuantity, RateQuantity, RateRecord, Trajectory,
};
use crate::graph::{Graph, GraphError, Node, NodeId, Observation};
use crate::prevalence::{
    build_prevalence_graph, read_data_csv, write_data_csv, BuildError, ConfigError, DataItem,
    ModelConfig,
};
use crate::sampler::{
    default_monitors, density_strip, run_chains, summarize, write_adaptation_csv,
    write_diagnostics_csv, write_samples_csv, write_strip_csv, write_summary_csv, ChainOutput,
    SamplerConfig, SamplerError,
};
use crate::synthgen::{sample_prior, simulate_dataset, write_truth_csv, Design};

pub use manifest::{RunManifest, MANIFEST_FILE};

/// Bins in exported density strips.
pub const STRIP_BINS: usize = 50;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Parse(String),
    #[error("{0}")]
    Semantic(String),
    #[error("R-hat above {threshold} for {count} quantities, worst {worst} ({quantity})")]
    NotConverged {
        threshold: f64,
        count: usize,
        worst: f64,
        quantity: String,
    },
    #[error("sampler initialization failed: {0}")]
    Init(String),
    #[error("ODE solver: {0}")]
    Solver(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io { .. } => 1,
            CliError::Parse(_) => 2,
            CliError::Semantic(_) => 3,
            CliError::NotConverged { .. } => 4,
            CliError::Init(_) => 5,
            CliError::Solver(_) => 6,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io { path, source } => CliError::Io { path, source },
            other => CliError::Parse(other.to_string()),
        }
    }
}

impl From<BuildError> for CliError {
    fn from(e: BuildError) -> Self {
        CliError::Semantic(e.to_string())
    }
}

impl From<GraphError> for CliError {
    fn from(e: GraphError) -> Self {
        match e {
            GraphError::Dynamics { .. } => CliError::Solver(e.to_string()),
            other => CliError::Semantic(other.to_string()),
        }
    }
}

impl From<JointError> for CliError {
    fn from(e: JointError) -> Self {
        match e {
            JointError::Dynamics(
                DynamicsError::InvalidStep(_) | DynamicsError::StepFailure { .. },
            ) => CliError::Solver(e.to_string()),
            JointError::Dynamics(d) => CliError::Semantic(d.to_string()),
            JointError::Graph(g) => g.into(),
        }
    }
}

impl From<SamplerError> for CliError {
    fn from(e: SamplerError) -> Self {
        match e {
            SamplerError::InitializationFailed { .. } => CliError::Init(e.to_string()),
            SamplerError::Graph(g) => g.into(),
            other => CliError::Semantic(other.to_string()),
        }
    }
}

fn csv_err(path: &Path, e: csv::Error) -> CliError {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(source) => CliError::Io {
                path: path.to_path_buf(),
                source,
            },
            _ => unreachable!(),
        }
    } else {
        CliError::Parse(format!("{}: {e}", path.display()))
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "evsynth",
    version,
    about = "Bayesian evidence synthesis for multi-source prevalence estimation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse a model config, build its graph and report its size.
    Check { config: PathBuf },
    /// Draw a ground truth from the prior and a dataset with the config's design.
    Simulate {
        config: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Output directory for truth.csv, data.csv (and rates.csv).
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a static prevalence model.
    Fit {
        config: PathBuf,
        /// Data CSVs replacing the data items in the config.
        #[arg(long = "data")]
        data: Vec<PathBuf>,
        #[command(flatten)]
        sampler: SamplerArgs,
    },
    /// Fit the joint prevalence–incidence model.
    FitJoint {
        config: PathBuf,
        /// Prevalence data CSV with a `t` column, replacing the config's data.
        #[arg(long = "data")]
        data: Vec<PathBuf>,
        /// Rate data CSV (`t,quantity,x,exposure`), replacing the config's rate-csv.
        #[arg(long = "rates")]
        rates: Vec<PathBuf>,
        #[command(flatten)]
        sampler: SamplerArgs,
    },
    /// Repeat a run recorded in a manifest.
    Rerun {
        #[arg(long)]
        manifest: PathBuf,
    },
}

#[derive(Debug, Clone, Args)]
pub struct SamplerArgs {
    #[arg(long, default_value_t = 2)]
    pub chains: usize,
    #[arg(long, default_value_t = 14_000)]
    pub iterations: usize,
    #[arg(long, default_value_t = 10_000)]
    pub burnin: usize,
    #[arg(long, default_value_t = 1)]
    pub thin: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Monitored quantities must have R-hat below this value.
    #[arg(long, default_value_t = 1.05)]
    pub rhat_threshold: f64,
    #[arg(long)]
    pub out: PathBuf,
}

impl SamplerArgs {
    pub fn sampler_config(&self) -> SamplerConfig {
        SamplerConfig {
            chains: self.chains,
            iterations: self.iterations,
            burnin: self.burnin,
            thin: self.thin,
            seed: self.seed,
            ..SamplerConfig::default()
        }
    }
}

/// What a successful command produced, for callers and tests.
#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Checked(CheckReport),
    Simulated {
        files: Vec<PathBuf>,
    },
    Fitted {
        files: Vec<PathBuf>,
        warnings: Vec<String>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub nodes: usize,
    pub theta_parameters: usize,
    pub free_dimension: usize,
    pub data_nodes: usize,
    pub groups: usize,
    pub regions: usize,
    pub warnings: Vec<String>,
}

impl std::fmt::Display for CheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "nodes: {}", self.nodes)?;
        writeln!(f, "basic θ parameters: {}", self.theta_parameters)?;
        writeln!(f, "free dimension: {}", self.free_dimension)?;
        writeln!(f, "data nodes: {}", self.data_nodes)?;
        writeln!(f, "groups: {}", self.groups)?;
        write!(f, "regions: {}", self.regions)
    }
}

/// Parses arguments, runs the command and returns the exit status.
pub fn main() -> i32 {
    let cli = Cli::parse();
    match run(&cli.command) {
        Ok(outcome) => {
            match &outcome {
                Outcome::Checked(report) => {
                    println!("{report}");
                    for w in &report.warnings {
                        eprintln!("warning: {w}");
                    }
                }
                Outcome::Simulated { files } => {
                    for f in files {
                        println!("wrote {}", f.display());
                    }
                }
                Outcome::Fitted { files, warnings } => {
                    for w in warnings {
                        eprintln!("warning: {w}");
                    }
                    for f in files {
                        println!("wrote {}", f.display());
                    }
                }
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(command: &Command) -> Result<Outcome, CliError> {
    match command {
        Command::Check { config } => cmd_check(config).map(Outcome::Checked),
        Command::Simulate { config, seed, out } => cmd_simulate(config, *seed, out),
        Command::Fit {
            config,
            data,
            sampler,
        } => {
            let m = RunManifest::new("fit", config, data, &[], sampler);
            cmd_fit(&m)
        }
        Command::FitJoint {
            config,
            data,
            rates,
            sampler,
        } => {
            let m = RunManifest::new("fit-joint", config, data, rates, sampler);
            cmd_fit_joint(&m)
        }
        Command::Rerun { manifest } => {
            let m = RunManifest::read(manifest)?;
            match m.command.as_str() {
                "fit" => cmd_fit(&m),
                "fit-joint" => cmd_fit_joint(&m),
                other => Err(CliError::Parse(format!(
                    "manifest names unknown command `{other}`"
                ))),
            }
        }
    }
}

fn load_config(path: &Path, data: &[PathBuf]) -> Result<ModelConfig, CliError> {
    let mut config = ModelConfig::load(path)?;
    if !data.is_empty() {
        config.data.clear();
        for p in data {
            let file = File::open(p).map_err(io_err(p))?;
            config
                .data
                .extend(read_data_csv(file).map_err(|e| csv_err(p, e))?);
        }
    }
    Ok(config)
}

pub fn cmd_check(config_path: &Path) -> Result<CheckReport, CliError> {
    let config = ModelConfig::load(config_path)?;
    let mut warnings = Vec::new();
    if config.data.is_empty() {
        warnings.push("prior-only model".to_string());
    }
    if config.dynamics.is_some() {
        let (graph, _) = joint_graph(config_path, &config, &[])?;
        return Ok(CheckReport {
            nodes: graph.len(),
            theta_parameters: graph.basic_nodes().count(),
            free_dimension: graph.free_dimension(),
            data_nodes: graph.data_nodes().len(),
            groups: 1,
            regions: 1,
            warnings,
        });
    }
    let model = build_prevalence_graph(&config)?;
    Ok(CheckReport {
        nodes: model.graph.len(),
        theta_parameters: model.theta_dimension(),
        free_dimension: model.graph.free_dimension(),
        data_nodes: model.graph.data_nodes().len(),
        groups: model.groups.len(),
        regions: model.regions.len(),
        warnings,
    })
}

fn create_out_dir(out: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(out).map_err(io_err(out))
}

fn write_file(
    path: &Path,
    f: impl FnOnce(BufWriter<File>) -> Result<(), csv::Error>,
) -> Result<PathBuf, CliError> {
    let file = File::create(path).map_err(io_err(path))?;
    f(BufWriter::new(file)).map_err(|e| csv_err(path, e))?;
    Ok(path.to_path_buf())
}

pub fn cmd_simulate(config_path: &Path, seed: u64, out: &Path) -> Result<Outcome, CliError> {
    let config = ModelConfig::load(config_path)?;
    let (graph, model) = if config.dynamics.is_some() {
        (joint_graph(config_path, &config, &[])?.0, None)
    } else {
        let m = build_prevalence_graph(&config)?;
        (m.graph.clone(), Some(m))
    };
    create_out_dir(out)?;
    let truth = sample_prior(&graph, seed);
    let observations = simulate_dataset(
        &graph,
        &truth,
        &Design::from_graph(&graph),
        seed.wrapping_add(1),
    )?;

    let mut files = vec![write_file(&out.join("truth.csv"), |w| {
        write_truth_csv(&graph, &truth, w)
    })?];
    match model {
        Some(model) => {
            let items = model.items_with_observations(&config.data, &observations);
            files.push(write_file(&out.join("data.csv"), |w| {
                write_data_csv(&items, w)
            })?);
        }
        None => {
            let (items, rates) = joint_observations(&graph, &config, &observations);
            files.push(write_file(&out.join("data.csv"), |w| {
                write_data_csv(&items, w)
            })?);
            files.push(write_file(&out.join("rates.csv"), |w| {
                write_rate_records(&rates, w)
            })?);
        }
    }
    Ok(Outcome::Simulated { files })
}

/// `t,quantity,x,exposure` rows.
pub fn write_rate_records(
    rows: &[RateRecord],
    writer: impl std::io::Write,
) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn joint_prevalence_data(config: &ModelConfig) -> Result<Vec<PrevalenceDatum>, CliError> {
    config
        .data
        .iter()
        .map(|item| {
            let here = format!("{}/{}/{}", item.source, item.group, item.region);
            if item.family != "binomial" {
                return Err(CliError::Semantic(format!(
                    "joint prevalence item {here} must be binomial"
                )));
            }
            let t = item.t.ok_or_else(|| {
                CliError::Semantic(format!("joint prevalence item {here} needs t"))
            })?;
            let n = item.n.ok_or_else(|| {
                CliError::Semantic(format!("joint prevalence item {here} needs n"))
            })?;
            let measure = config
                .sources
                .get(&item.source)
                .and_then(|s| s.measure.as_deref())
                .ok_or_else(|| {
                    CliError::Semantic(format!("source `{}` needs a measure", item.source))
                })?;
            let quantity = match measure {
                "rho" => PrevalenceQuantity::Rho,
                "pi" => PrevalenceQuantity::Pi,
                "delta" => PrevalenceQuantity::Delta,
                "undiagnosed-prevalence" => PrevalenceQuantity::UndiagnosedPrevalence,
                other => return Err(CliError::Semantic(format!("unknown measure `{other}`"))),
            };
            Ok(PrevalenceDatum {
                t,
                quantity,
                x: item.x,
                n,
            })
        })
        .collect()
}

/// Joint graph for a config with a `[dynamics]` section. Without explicit
/// rate files the config's `rate-csv` is used.
pub fn joint_graph(
    config_path: &Path,
    config: &ModelConfig,
    rate_paths: &[PathBuf],
) -> Result<(Graph, JointConfig), CliError> {
    let dynamics = config
        .dynamics
        .as_ref()
        .ok_or_else(|| CliError::Semantic("config has no [dynamics] section".into()))?;
    let joint = JointConfig {
        years: dynamics.years,
        step: dynamics.step,
        rate_upper: dynamics.rate_upper,
        initial_concentration: dynamics.initial_concentration,
    };
    let mut paths: Vec<PathBuf> = rate_paths.to_vec();
    if paths.is_empty() {
        if let Some(p) = &dynamics.rate_csv {
            paths.push(config_path.parent().unwrap_or(Path::new(".")).join(p));
        }
    }
    let mut rates = Vec::new();
    for p in &paths {
        let file = File::open(p).map_err(io_err(p))?;
        for record in read_rate_csv(file).map_err(|e| csv_err(p, e))? {
            rates.push(
                record
                    .to_datum()
                    .map_err(|e| CliError::Semantic(format!("{}: {e}", p.display())))?,
            );
        }
    }
    let prevalence = joint_prevalence_data(config)?;
    Ok((build_joint_graph(&joint, &prevalence, &rates)?, joint))
}

/// Splits simulated joint observations back into prevalence items and
/// rate records.
pub fn joint_observations(
    graph: &Graph,
    config: &ModelConfig,
    observations: &[Observation],
) -> (Vec<DataItem>, Vec<RateRecord>) {
    let mut items = config.data.clone();
    let mut rates = Vec::new();
    for (i, obs) in observations.iter().enumerate() {
        let label = &graph.data_node(i).label;
        match obs {
            Observation::Binomial { x, .. } => {
                if let Some(k) = label
                    .strip_prefix('y')
                    .and_then(|r| r.split('.').next())
                    .and_then(|k| k.parse::<usize>().ok())
                {
                    items[k].x = *x;
                }
            }
            Observation::Poisson { x, exposure } => {
                let d = graph.data_node(i);
                let target = graph.label(d.targets[0]);
                let (kind, t) = target.rsplit_once('.').expect("rate labels carry t");
                let quantity = match kind {
                    "lambda_es" => RateQuantity::UptakeCount,
                    "lambda_ud" => RateQuantity::DiagnosisCount,
                    _ => RateQuantity::ExitCount,
                };
                rates.push(RateRecord {
                    t: t.parse().expect("numeric t"),
                    quantity: quantity.as_str().to_string(),
                    x: *x,
                    exposure: *exposure,
                });
            }
            Observation::Multinomial { .. } => {}
        }
    }
    (items, rates)
}

fn fit_warnings(config: &ModelConfig, sampler: &SamplerConfig) -> Vec<String> {
    let mut w = Vec::new();
    if config.data.is_empty() {
        w.push("prior-only model".to_string());
    }
    if sampler.chains < 2 {
        w.push("R-hat needs at least two chains; convergence was not checked".to_string());
    }
    w
}

/// Writes per-chain samples, summary, diagnostics and adaptation tables.
fn write_fit_outputs(
    out: &Path,
    chains: &[ChainOutput],
    threshold: f64,
) -> Result<(Vec<PathBuf>, Option<CliError>), CliError> {
    let mut files = Vec::new();
    for c in chains {
        let p = out.join(format!("samples_chain{}.csv", c.chain + 1));
        files.push(write_file(&p, |w| write_samples_csv(c, w))?);
    }
    let summary = summarize(chains).map_err(|e| CliError::Semantic(e.to_string()))?;
    files.push(write_file(&out.join("summary.csv"), |w| {
        write_summary_csv(&summary, w)
    })?);
    files.push(write_file(&out.join("diagnostics.csv"), |w| {
        write_diagnostics_csv(&summary, threshold, w)
    })?);
    files.push(write_file(&out.join("adaptation.csv"), |w| {
        write_adaptation_csv(chains, w)
    })?);

    let failing: Vec<_> = summary
        .iter()
        .filter_map(|s| s.rhat.map(|r| (r, &s.quantity)))
        .filter(|(r, _)| !(*r < threshold))
        .collect();
    let verdict = failing
        .iter()
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(worst, q)| CliError::NotConverged {
            threshold,
            count: failing.len(),
            worst: *worst,
            quantity: q.to_string(),
        });
    Ok((files, verdict))
}

pub fn cmd_fit(manifest: &RunManifest) -> Result<Outcome, CliError> {
    let config = load_config(&manifest.config, &manifest.data)?;
    let model = build_prevalence_graph(&config)?;
    let sampler = manifest.sampler_config();
    sampler.validate()?;
    let out = &manifest.out;
    create_out_dir(out)?;
    let mut manifest = manifest.clone();
    manifest.start();
    manifest.write(out)?;

    let monitors = default_monitors(&model.graph);
    let chains = run_chains(&model.graph, &sampler, &monitors)?;
    let (mut files, verdict) = write_fit_outputs(out, &chains, manifest.rhat_threshold)?;
    manifest.finish();
    files.push(manifest.write(out)?);
    finish(files, fit_warnings(&config, &sampler), verdict)
}

fn finish(
    files: Vec<PathBuf>,
    warnings: Vec<String>,
    verdict: Option<CliError>,
) -> Result<Outcome, CliError> {
    match verdict {
        Some(e) => Err(e),
        None => Ok(Outcome::Fitted { files, warnings }),
    }
}

/// Trajectory outputs of the graph's trajectory node, by year.
fn trajectory_monitors(graph: &Graph) -> Vec<[NodeId; 4]> {
    graph
        .nodes()
        .find_map(|(_, n)| match n {
            Node::Trajectory(t) => Some(t.outputs.clone()),
            _ => None,
        })
        .unwrap_or_default()
}

pub fn cmd_fit_joint(manifest: &RunManifest) -> Result<Outcome, CliError> {
    let config = load_config(&manifest.config, &manifest.data)?;
    let (graph, joint) = joint_graph(&manifest.config, &config, &manifest.rates)?;
    let sampler = manifest.sampler_config();
    sampler.validate()?;
    let out = &manifest.out;
    create_out_dir(out)?;
    let mut manifest = manifest.clone();
    manifest.start();
    manifest.write(out)?;

    let traj = trajectory_monitors(&graph);
    let mut monitors = default_monitors(&graph);
    monitors.extend(traj.iter().flatten());
    let chains = run_chains(&graph, &sampler, &monitors)?;
    let (mut files, verdict) = write_fit_outputs(out, &chains, manifest.rhat_threshold)?;

    let column = |id: NodeId| -> Vec<f64> {
        let label = graph.label(id);
        chains
            .iter()
            .flat_map(|c| c.column_by_label(label).expect("monitored"))
            .collect()
    };
    let median = |id: NodeId| {
        let mut v = column(id);
        v.sort_by(f64::total_cmp);
        crate::sampler::quantile(&v, 0.5)
    };
    let states = traj
        .iter()
        .map(|ids| {
            let [e, s, u, d] = ids.map(median);
            CompartmentState { e, s, u, d }
        })
        .collect();
    let trajectory = Trajectory {
        states,
        rates: Vec::new(),
        step: joint.step,
    };
    files.push(write_file(&out.join("trajectory.csv"), |w| {
        write_trajectory_csv(&trajectory, w)
    })?);
    for kind in [RateKind::Incidence, RateKind::Diagnosis] {
        for t in 1..joint.years {
            let label = rate_label(kind, t);
            let id = graph.id(&label).expect("rate node");
            let strip = density_strip(&column(id), STRIP_BINS)
                .map_err(|e| CliError::Semantic(e.to_string()))?;
            files.push(write_file(&out.join(format!("strip_{label}.csv")), |w| {
                write_strip_csv(&strip, w)
            })?);
        }
    }
    manifest.finish();
    files.push(manifest.write(out)?);
    finish(files, fit_warnings(&config, &sampler), verdict)
}
