use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use tracking_admm::baselines::run_parallel;
use tracking_admm::certify::{
    build_certificate, check_descent, check_prop1, identity_monitors, CertificateReport, DescentReport,
    IdentityReport, Prop1Report, ReferencePoint,
};
use tracking_admm::engine::{run, Algorithm};
use tracking_admm::export::{write_lambdas_csv, write_trajectory_csv, RunSummary};
use tracking_admm::instances::{desk_network, random_problem, RandomConfig};
use tracking_admm::network::{Graph, GraphDocument};
use tracking_admm::pev::{self, PevConfig};
use tracking_admm::problem::PrimalDualDocument;
use tracking_admm::qp::solve_centralized;
use tracking_admm::{ConsensusMatrix, EngineConfig, PrimalDualPair, Problem, Trajectory};

/// Slack tolerance (relative to `max(1, V_0)`) for the descent monitors.
const SLACK_TOL: f64 = 1e-6;

#[derive(Parser)]
#[command(name = "tadmm", version, about = "Tracking-ADMM experiment runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write trajectory CSVs and a summary.
    Run(RunArgs),
    /// Check a graph or weight matrix file against the mixing assumptions.
    Validate(ValidateArgs),
    /// Solve a problem centrally and store the optimal primal/dual pair.
    Reference(ReferenceArgs),
    /// Generate an electric vehicle charging problem.
    PevGen(PevGenArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Preset {
    /// 20 vehicles, 24 slots.
    PevDesk,
    /// 100 vehicles, 24 slots, c = 1e-4, 200 rounds.
    PevPaper,
    /// Random strongly convex instance with 10 agents and 4 coupling rows.
    Random,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum AlgorithmChoice {
    TrackingAdmm,
    ParallelAdmm,
    Both,
}

/// Engine settings shared by flags and the JSON config file. Flags win.
#[derive(Args, Debug, Default, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
struct EngineFlags {
    #[arg(long)]
    c: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    feas_tol: Option<f64>,
    #[arg(long)]
    cons_tol: Option<f64>,
    #[arg(long)]
    dual_tol: Option<f64>,
    #[arg(long)]
    subproblem_tol: Option<f64>,
    #[arg(long)]
    subproblem_max_iter: Option<usize>,
    /// Worker threads for the local solves (default: available parallelism).
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    warm_start: Option<bool>,
    /// Run all rounds regardless of the stop rule.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    fixed_budget: Option<bool>,
}

impl EngineFlags {
    fn merged(self, file: EngineFlags) -> EngineFlags {
        EngineFlags {
            c: self.c.or(file.c),
            max_iters: self.max_iters.or(file.max_iters),
            feas_tol: self.feas_tol.or(file.feas_tol),
            cons_tol: self.cons_tol.or(file.cons_tol),
            dual_tol: self.dual_tol.or(file.dual_tol),
            subproblem_tol: self.subproblem_tol.or(file.subproblem_tol),
            subproblem_max_iter: self.subproblem_max_iter.or(file.subproblem_max_iter),
            threads: self.threads.or(file.threads),
            warm_start: self.warm_start.or(file.warm_start),
            fixed_budget: self.fixed_budget.or(file.fixed_budget),
        }
    }

    fn apply(&self, mut cfg: EngineConfig) -> EngineConfig {
        if let Some(v) = self.c {
            cfg.c = v;
        }
        if let Some(v) = self.max_iters {
            cfg.max_iters = v;
        }
        if let Some(v) = self.feas_tol {
            cfg.feas_tol = v;
        }
        if let Some(v) = self.cons_tol {
            cfg.cons_tol = v;
        }
        if let Some(v) = self.dual_tol {
            cfg.dual_tol = v;
        }
        if let Some(v) = self.subproblem_tol {
            cfg.subproblem_tol = v;
        }
        if let Some(v) = self.subproblem_max_iter {
            cfg.subproblem_max_iter = v;
        }
        if let Some(v) = self.warm_start {
            cfg.warm_start = v;
        }
        if let Some(v) = self.fixed_budget {
            cfg.fixed_budget = v;
        }
        cfg.threads = self.threads;
        cfg
    }
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Problem JSON file.
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    problem: Option<PathBuf>,
    /// Built-in problem; also sets default c and round budget.
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    /// Graph JSON file; a seeded random graph is drawn when absent.
    #[arg(long)]
    graph: Option<PathBuf>,
    /// Square the weights loaded from --graph.
    #[arg(long)]
    square: bool,
    /// Seed for preset instances and random graphs.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Edge probability of the random graph.
    #[arg(long)]
    density: Option<f64>,
    #[arg(long, value_enum, default_value = "tracking-admm")]
    algorithm: AlgorithmChoice,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// JSON file with engine settings (camelCase keys).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Build the Lyapunov certificate and run the trajectory monitors.
    #[arg(long)]
    certify: bool,
    /// Solve the problem centrally for the cost gap column.
    #[arg(long)]
    reference: bool,
    /// Stored reference pair to use instead of solving.
    #[arg(long, conflicts_with = "reference")]
    reference_file: Option<PathBuf>,
    #[command(flatten)]
    engine: EngineFlags,
}

#[derive(Args, Debug)]
struct ValidateArgs {
    /// Graph JSON file (`{n, edges, weights?}`).
    file: PathBuf,
    /// Validate the squared weights instead.
    #[arg(long)]
    square: bool,
}

#[derive(Args, Debug)]
struct ReferenceArgs {
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    problem: Option<PathBuf>,
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    /// Output JSON file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct PevGenArgs {
    /// Generator settings as JSON (camelCase keys); flags override them.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Start from the 100-vehicle configuration.
    #[arg(long)]
    paper_scale: bool,
    #[arg(long)]
    vehicles: Option<usize>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Problem JSON output.
    #[arg(long)]
    out: PathBuf,
    /// Also write the preset communication graph here.
    #[arg(long)]
    graph_out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Validate(args) => cmd_validate(args),
        Command::Reference(args) => cmd_reference(args),
        Command::PevGen(args) => cmd_pev_gen(args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn read_json<D: serde::de::DeserializeOwned>(path: &Path) -> Result<D> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    serde_json::to_writer_pretty(BufWriter::new(file), value)?;
    Ok(())
}

fn preset_problem(preset: Preset, seed: u64) -> Result<(Problem, EngineConfig)> {
    Ok(match preset {
        Preset::PevDesk | Preset::PevPaper => {
            let (mut pcfg, ecfg) = if preset == Preset::PevDesk {
                pev::preset_desk_scale::<f64>()
            } else {
                pev::preset_paper_scale::<f64>()
            };
            pcfg.seed = seed;
            (pev::generate(&pcfg)?, ecfg)
        }
        Preset::Random => (random_problem(&RandomConfig::desk(seed))?, EngineConfig::default()),
    })
}

fn load_problem(file: Option<&Path>, preset: Option<Preset>, seed: u64) -> Result<(Problem, EngineConfig)> {
    match (file, preset) {
        (Some(path), _) => Ok((
            Problem::load_json(path).with_context(|| format!("loading problem {}", path.display()))?,
            EngineConfig::default(),
        )),
        (None, Some(preset)) => preset_problem(preset, seed),
        (None, None) => bail!("either --problem or --preset is required"),
    }
}

fn load_network(args: &RunArgs, n: usize) -> Result<ConsensusMatrix> {
    if let Some(path) = &args.graph {
        let doc = GraphDocument::load(path).with_context(|| format!("loading graph {}", path.display()))?;
        let w: ConsensusMatrix = doc.consensus()?;
        return Ok(if args.square { w.squared() } else { w });
    }
    let w = match (args.preset, args.density) {
        (_, Some(p)) => ConsensusMatrix::metropolis(&Graph::erdos_renyi(n, p, args.seed)?)?.squared(),
        (Some(Preset::PevDesk | Preset::PevPaper), None) => pev::preset_network(n, args.seed)?,
        _ => desk_network(n, args.seed)?,
    };
    Ok(w)
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct Comparison {
    /// Largest per-round `‖x_tracking − x_parallel‖∞` over the common rounds.
    max_primal_difference: f64,
    final_cost_difference: f64,
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct ExperimentSummary {
    seed: u64,
    runs: Vec<RunSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    comparison: Option<Comparison>,
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct CertificateOutput {
    certificate: CertificateReport,
    identities: IdentityReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    descent: Option<DescentReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    prop1: Option<Prop1Report>,
}

fn write_trajectory(dir: &Path, traj: &Trajectory, reference: Option<f64>) -> Result<()> {
    let tag = traj.algorithm.tag();
    let path = dir.join(format!("trajectory-{tag}.csv"));
    write_trajectory_csv(traj, reference, BufWriter::new(File::create(&path)?))
        .with_context(|| format!("writing {}", path.display()))?;
    let path = dir.join(format!("lambdas-{tag}.csv"));
    write_lambdas_csv(traj, BufWriter::new(File::create(&path)?))
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn cmd_run(args: RunArgs) -> Result<ExitCode> {
    let (problem, preset_cfg) = load_problem(args.problem.as_deref(), args.preset, args.seed)?;
    let file_flags = match &args.config {
        Some(path) => read_json(path)?,
        None => EngineFlags::default(),
    };
    let config = args.engine.clone().merged(file_flags).apply(preset_cfg);
    let w = load_network(&args, problem.num_agents())?;
    if w.size() != problem.num_agents() {
        bail!(
            "graph has {} nodes but the problem has {} agents",
            w.size(),
            problem.num_agents()
        );
    }
    let report = w.validate();
    if !report.passes {
        let mut msg = report.failures().join("; ");
        if report.mixing_ok() && !report.psd {
            msg.push_str(" (use --square)");
        }
        bail!("consensus matrix rejected: {msg}");
    }
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;

    let reference: Option<PrimalDualPair> = if let Some(path) = &args.reference_file {
        let doc: PrimalDualDocument = read_json(path)?;
        Some(PrimalDualPair::from_document(&doc))
    } else if args.reference || args.certify {
        info!("solving the centralized reference");
        Some(solve_centralized(&problem, 1e-8).context("centralized reference solve failed")?)
    } else {
        None
    };
    let ref_cost = reference.as_ref().map(|r| r.cost);

    let mut runs = Vec::new();
    if args.algorithm != AlgorithmChoice::ParallelAdmm {
        runs.push(run(&problem, &w, &config)?);
    }
    if args.algorithm != AlgorithmChoice::TrackingAdmm {
        runs.push(run_parallel(&problem, &config)?);
    }
    for traj in &runs {
        write_trajectory(&args.out, traj, ref_cost)?;
        info!(
            "{}: {:?} after {} rounds",
            traj.algorithm.tag(),
            traj.stop,
            traj.rounds()
        );
    }
    let comparison = (runs.len() == 2).then(|| {
        let (a, b) = (&runs[0], &runs[1]);
        let max_primal_difference = a
            .metrics
            .iter()
            .zip(&b.metrics)
            .map(|(ma, mb)| (&ma.x - &mb.x).amax())
            .fold(0.0, f64::max);
        Comparison {
            max_primal_difference,
            final_cost_difference: a.last().cost - b.last().cost,
        }
    });
    let summary = ExperimentSummary {
        seed: args.seed,
        runs: runs.iter().map(|t| RunSummary::new(t, ref_cost)).collect(),
        comparison,
    };
    write_json(&args.out.join("summary.json"), &summary)?;

    if args.certify {
        let tracking = runs.iter().find(|t| t.algorithm == Algorithm::TrackingAdmm);
        let Some(traj) = tracking else {
            bail!("--certify needs a tracking-admm run");
        };
        let cert = build_certificate(&w, problem.coupling_dim())?;
        let (descent, prop1) = match &reference {
            Some(pair) => {
                let point = ReferencePoint::new(&problem, pair)?;
                (
                    Some(check_descent(traj, &point, &cert, SLACK_TOL)?),
                    Some(check_prop1(traj, &point, Some(&cert), SLACK_TOL)?),
                )
            }
            None => (None, None),
        };
        let out = CertificateOutput {
            certificate: cert.report(),
            identities: identity_monitors(traj, &problem, &w),
            descent,
            prop1,
        };
        if !out.certificate.certified {
            warn!("Lyapunov certificate not established for this network");
        }
        write_json(&args.out.join("certificate.json"), &out)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_validate(args: ValidateArgs) -> Result<ExitCode> {
    let doc = GraphDocument::load(&args.file).with_context(|| format!("loading {}", args.file.display()))?;
    let w: ConsensusMatrix = doc.consensus()?;
    let w = if args.square { w.squared() } else { w };
    let report = w.validate();
    println!("{}", serde_json::to_string_pretty(&report)?);
    if report.passes {
        println!("PASS");
        return Ok(ExitCode::SUCCESS);
    }
    for f in report.failures() {
        println!("FAIL: {f}");
    }
    if report.mixing_ok() && !report.psd {
        println!("hint: use --square");
    }
    Ok(ExitCode::FAILURE)
}

fn cmd_reference(args: ReferenceArgs) -> Result<ExitCode> {
    let (problem, _) = load_problem(args.problem.as_deref(), args.preset, args.seed)?;
    let pair = solve_centralized(&problem, args.tol).context("centralized solve failed")?;
    info!("f* = {}", pair.cost);
    write_json(&args.out, &pair.to_document())?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_pev_gen(args: PevGenArgs) -> Result<ExitCode> {
    let mut cfg: PevConfig = match &args.config {
        Some(path) => read_json(path)?,
        None if args.paper_scale => PevConfig::paper_scale(),
        None => PevConfig::desk_scale(),
    };
    if let Some(v) = args.vehicles {
        cfg.n_vehicles = v;
    }
    if let Some(v) = args.horizon {
        cfg.horizon = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    let problem: Problem = pev::generate(&cfg)?;
    problem.save_json(&args.out)?;
    if let Some(path) = &args.graph_out {
        let w: ConsensusMatrix = pev::preset_network(cfg.n_vehicles, cfg.seed)?;
        w.save_json(path)?;
    }
    Ok(ExitCode::SUCCESS)
}
