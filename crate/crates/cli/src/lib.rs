//! Experiment runner: config → problem → schedule → engine → artifacts.

pub mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use disc_admm::decentralized::{self, Graph, MessageModel};
use disc_admm::diagnostics::{self, TheoremConstants};
use disc_admm::fusion::{self, SolverConfig};
use disc_admm::inexact::{AdversarialPattern, ErrorModel};
use disc_admm::problems::{build_recipe, Recipe, RecipeParams};
use disc_admm::schedule::{self, DelayModel};
use disc_admm::{RunTrace, Schedule};

use config::{Engine, ErrorKindName, ExperimentConfig, PatternName, RhoSetting};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Solver(#[from] disc_admm::Error),
}

impl CliError {
    /// 2 invalid config, 3 divergence, 4 infeasible schedule, 1 anything else.
    pub fn exit_code(&self) -> u8 {
        use disc_admm::Error as E;
        match self {
            Self::Config(_) => 2,
            Self::Io { .. } => 1,
            Self::Solver(e) => match e {
                E::Divergence { .. } => 3,
                E::ScheduleInfeasible { .. } | E::Scheduling { .. } => 4,
                E::InvalidParameter(_)
                | E::Capability(_)
                | E::DimensionMismatch { .. }
                | E::Range(_)
                | E::Parse { .. } => 2,
                E::NonFinite(_) | E::InnerSolver { .. } => 1,
            },
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub strict_rho: bool,
    pub dump_schedule: bool,
    pub quiet: bool,
    pub output: Option<PathBuf>,
}

/// Everything resolved from a config before any solver work.
pub struct Prepared {
    pub config: ExperimentConfig,
    pub seed: u64,
    pub recipe: Recipe,
    pub graph: Option<Graph>,
    pub delay: DelayModel,
    pub schedule: Schedule,
    pub errors: ErrorModel,
    pub messages: MessageModel,
    pub solver: SolverConfig,
    pub rho_auto: bool,
    pub constants: TheoremConstants,
    pub output: PathBuf,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub trace: RunTrace,
    pub summary: String,
    pub output: PathBuf,
}

// seeds of the independent random streams derived from the experiment seed
const DELAY_STREAM: u64 = 0x00de_1a07;
const ERROR_STREAM: u64 = 0x00e4_4004;
const MESSAGE_STREAM: u64 = 0x003e_55a6;

fn graph_from(spec: Option<&str>, nodes: usize, base: &Path) -> Result<Option<Graph>, CliError> {
    let Some(spec) = spec else { return Ok(None) };
    let g = match spec {
        "path" => Graph::path(nodes)?,
        "ring" => Graph::ring(nodes)?,
        "complete" => Graph::complete(nodes)?,
        file => {
            let path = base.join(file);
            let text = fs::read_to_string(&path)
                .map_err(|e| CliError::Config(format!("cannot read graph {}: {e}", path.display())))?;
            Graph::parse_edge_list(&text, Some(nodes))?
        }
    };
    Ok(Some(g))
}

fn error_model(cfg: &ExperimentConfig, seed: u64) -> ErrorModel {
    let e = &cfg.error;
    match e.kind {
        ErrorKindName::Exact => ErrorModel::exact(),
        ErrorKindName::Gaussian => ErrorModel::gaussian(e.sigma, seed.wrapping_add(ERROR_STREAM)),
        ErrorKindName::Quantize => ErrorModel::quantize(e.step),
        ErrorKindName::Adversarial => ErrorModel::adversarial(
            e.bound,
            match e.pattern {
                PatternName::Bias => AdversarialPattern::Bias,
                PatternName::Alternating => AdversarialPattern::Alternating,
                PatternName::Rotating => AdversarialPattern::Rotating,
                PatternName::Opposing => AdversarialPattern::Opposing,
            },
        ),
    }
}

/// Resolves a config into a runnable experiment. Fails without touching the
/// output directory.
pub fn prepare(config: ExperimentConfig, base: &Path, opts: &RunOptions) -> Result<Prepared, CliError> {
    let seed = opts.seed.unwrap_or(config.seed);
    let p = &config.problem;
    let graph = graph_from(p.graph.as_deref(), p.nodes, base)?;
    let graph = match (config.solver.engine, graph) {
        (Engine::Decentralized, None) => Some(Graph::path(p.nodes)?),
        (_, g) => g,
    };
    let params = RecipeParams {
        nodes: p.nodes,
        dim: p.dim,
        seed: p.seed.unwrap_or(seed),
        theta: p.theta,
        lambda: p.lambda,
        l1: p.l1,
        rank: p.rank,
        graph: graph.clone(),
    };
    let recipe = build_recipe(&p.recipe, &params)?;
    let problem = &recipe.problem;
    if let (Engine::Decentralized, Some(g)) = (config.solver.engine, &graph) {
        decentralized::check_compatible(problem, g)?;
    }

    let d = &config.delay;
    let mut delay = DelayModel::new(d.tau1, d.tau2, d.drop, seed.wrapping_add(DELAY_STREAM));
    if let Some(f) = d.z_freq {
        delay.z_freq = f;
    }
    delay.check()?;
    if !(0.0..1.0).contains(&d.message_loss) {
        return Err(CliError::Config(format!("message_loss {} not in [0, 1)", d.message_loss)));
    }
    if d.message_loss > 0.0 && config.solver.engine == Engine::Fusion {
        return Err(CliError::Config("message_loss applies to the decentralized engine only".into()));
    }
    let errors = error_model(&config, seed);
    errors.validate()?;

    let s = &config.solver;
    let tau = delay.tau();
    let rho_min = diagnostics::rho_min(problem, tau);
    let (rho, rho_auto) = match &s.rho {
        RhoSetting::Value(v) => (*v, false),
        RhoSetting::Keyword(k) if k == "auto" => (2.0 * rho_min, true),
        RhoSetting::Keyword(k) => return Err(CliError::Config(format!("rho must be a number or \"auto\", got {k:?}"))),
    };
    let mut solver = SolverConfig::new(rho, s.horizon);
    solver.eta = s.eta;
    solver.eps_stop = s.eps_stop;
    solver.strict_rho = s.strict_rho || opts.strict_rho;
    solver.validate(problem.dim())?;
    if solver.strict_rho && rho <= rho_min {
        return Err(CliError::Config(format!("rho = {rho} does not exceed rho_min = {rho_min}")));
    }

    let nodes = problem.nodes();
    let schedule = schedule::generate(&delay, s.horizon, nodes)?;
    let constants = TheoremConstants::for_problem(problem, rho, tau, solver.eta, &solver.bregman);
    let output = opts.output.clone().unwrap_or_else(|| config.output.clone());
    Ok(Prepared {
        messages: MessageModel {
            loss_prob: d.message_loss,
            seed: seed.wrapping_add(MESSAGE_STREAM),
        },
        config,
        seed,
        recipe,
        graph,
        delay,
        schedule,
        errors,
        solver,
        rho_auto,
        constants,
        output,
    })
}

/// Runs the engine and writes `trace.csv`, `schedule.txt`, `summary.txt`
/// and `constants.txt` into the output directory.
pub fn execute(prep: &Prepared, opts: &RunOptions) -> Result<RunOutcome, CliError> {
    let problem = &prep.recipe.problem;
    if prep.rho_auto && !opts.quiet {
        eprintln!("rho = auto resolved to {:.6e}", prep.solver.rho);
    }
    let start = Instant::now();
    let trace = match (prep.config.solver.engine, &prep.graph) {
        (Engine::Decentralized, Some(g)) => {
            decentralized::run(problem, g, &prep.solver, &prep.schedule, &prep.errors, &prep.messages)?
        }
        _ => fusion::run(problem, &prep.solver, &prep.schedule, &prep.errors)?,
    };
    let wall = start.elapsed().as_secs_f64();
    if !opts.quiet {
        for w in &trace.warnings {
            eprintln!("warning: {w}");
        }
    }

    let summary = summary_text(prep, &trace, wall)?;
    let out = &prep.output;
    write(out, "trace.csv", &trace.to_csv())?;
    let sched_text = prep.schedule.to_text();
    write(out, "schedule.txt", &sched_text)?;
    write(out, "summary.txt", &summary)?;
    write(out, "constants.txt", &prep.constants.to_text())?;
    if opts.dump_schedule {
        print!("{sched_text}");
    }
    if !opts.quiet {
        eprint!("{summary}");
    }
    Ok(RunOutcome {
        trace,
        summary,
        output: out.clone(),
    })
}

pub fn run_experiment(config: ExperimentConfig, base: &Path, opts: &RunOptions) -> Result<RunOutcome, CliError> {
    let prep = prepare(config, base, opts)?;
    execute(&prep, opts)
}

fn write(dir: &Path, name: &str, text: &str) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|source| CliError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let path = dir.join(name);
    fs::write(&path, text).map_err(|source| CliError::Io { path, source })
}

fn summary_text(prep: &Prepared, trace: &RunTrace, wall: f64) -> Result<String, CliError> {
    let mut s = String::new();
    let last = trace.final_record();
    let (min_theta, argmin) = trace.min_theta(trace.slots()).unwrap_or((f64::NAN, 0));
    let e_t = if trace.slots() == 0 { 0.0 } else { trace.average_error()? };
    let _ = writeln!(s, "recipe = {}", prep.recipe.name);
    let _ = writeln!(s, "engine = {:?}", prep.config.solver.engine);
    let _ = writeln!(s, "seed = {}", prep.seed);
    let _ = writeln!(s, "rho = {:.16e}", prep.solver.rho);
    let _ = writeln!(s, "rho_auto = {}", prep.rho_auto);
    let _ = writeln!(s, "rho_min = {:.16e}", prep.constants.rho_min);
    let _ = writeln!(s, "slots = {}", trace.slots());
    let _ = writeln!(s, "stopped_early = {}", trace.stopped_early);
    let _ = writeln!(s, "final_theta = {:.16e}", last.map_or(f64::NAN, |r| r.theta));
    let _ = writeln!(s, "min_theta = {min_theta:.16e}");
    let _ = writeln!(s, "min_theta_slot = {argmin}");
    let _ = writeln!(s, "E_T = {e_t:.16e}");
    let _ = writeln!(
        s,
        "final_consensus_residual = {:.16e}",
        last.map_or(f64::NAN, |r| r.consensus_residual)
    );
    let _ = writeln!(s, "final_lagrangian = {:.16e}", last.map_or(f64::NAN, |r| r.lagrangian));
    if let Some(opt) = &prep.recipe.optimum {
        let _ = writeln!(s, "distance_to_optimum = {:.16e}", (trace.final_z() - opt).norm());
    }
    for w in &trace.warnings {
        let _ = writeln!(s, "warning = {w}");
    }
    let _ = writeln!(s, "wall_time_s = {wall:.3}");
    Ok(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Horizon,
    Sigma,
    Tau1,
    Tau2,
    Rho,
}

impl std::str::FromStr for SweepAxis {
    type Err = CliError;
    fn from_str(s: &str) -> Result<Self, CliError> {
        Ok(match s {
            "T" => Self::Horizon,
            "sigma" => Self::Sigma,
            "tau1" => Self::Tau1,
            "tau2" => Self::Tau2,
            "rho" => Self::Rho,
            other => {
                return Err(CliError::Config(format!(
                    "sweep axis must be one of T, sigma, tau1, tau2, rho; got {other:?}"
                )))
            }
        })
    }
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Horizon => "T",
            Self::Sigma => "sigma",
            Self::Tau1 => "tau1",
            Self::Tau2 => "tau2",
            Self::Rho => "rho",
        }
    }

    fn apply(&self, cfg: &mut ExperimentConfig, value: f64) -> Result<(), CliError> {
        let count = || {
            if value >= 0.0 && value.fract() == 0.0 {
                Ok(value as usize)
            } else {
                Err(CliError::Config(format!("{} needs a non-negative integer, got {value}", self.name())))
            }
        };
        match self {
            Self::Horizon => cfg.solver.horizon = count()?,
            Self::Sigma => {
                cfg.error.sigma = value;
                cfg.error.kind = if value == 0.0 {
                    ErrorKindName::Exact
                } else {
                    ErrorKindName::Gaussian
                };
            }
            Self::Tau1 => cfg.delay.tau1 = count()?,
            Self::Tau2 => cfg.delay.tau2 = count()?,
            Self::Rho => cfg.solver.rho = RhoSetting::Value(value),
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub csv: String,
    pub runs: Vec<RunOutcome>,
}

/// One run per value with a shared seed, each in `<output>/<axis>=<value>`,
/// plus a combined `sweep.csv` in the output directory.
pub fn sweep(
    config: ExperimentConfig,
    base: &Path,
    axis: SweepAxis,
    values: &[f64],
    opts: &RunOptions,
) -> Result<SweepOutcome, CliError> {
    if values.is_empty() {
        return Err(CliError::Config("sweep needs at least one value".into()));
    }
    let root = opts.output.clone().unwrap_or_else(|| config.output.clone());
    // resolve every point first so that a bad value leaves no artifacts
    let mut prepared = Vec::with_capacity(values.len());
    for &v in values {
        let mut cfg = config.clone();
        axis.apply(&mut cfg, v)?;
        let sub = RunOptions {
            output: Some(root.join(format!("{}={v}", axis.name()))),
            ..opts.clone()
        };
        prepared.push((v, prepare(cfg, base, &sub)?, sub));
    }
    let mut runs = Vec::with_capacity(values.len());
    let mut csv = format!("{},T,min_theta,T_min_theta,floor,E_T,final_theta\n", axis.name());
    for (v, prep, sub) in &prepared {
        let run = execute(prep, sub)?;
        let tr = &run.trace;
        let slots = tr.slots();
        let min_theta = tr.min_theta(slots).map_or(f64::NAN, |m| m.0);
        let e_t = if slots == 0 { 0.0 } else { tr.average_error()? };
        let _ = writeln!(
            csv,
            "{v},{slots},{min_theta:.16e},{:.16e},{:.16e},{e_t:.16e},{:.16e}",
            slots as f64 * min_theta,
            diagnostics::theta_floor(tr),
            tr.final_record().map_or(f64::NAN, |r| r.theta)
        );
        runs.push(run);
    }
    if runs.len() >= 2 {
        let traces: Vec<RunTrace> = runs.iter().map(|r| r.trace.clone()).collect();
        let summary = diagnostics::rate_summary(&traces)?;
        if !opts.quiet {
            eprintln!(
                "sweep over {}: T*min_theta spread {:.3e}, floor monotone in E_T: {}",
                axis.name(),
                summary.scaled_spread(),
                summary.floor_monotone_in_error()
            );
        }
    }
    write(&root, "sweep.csv", &csv)?;
    Ok(SweepOutcome { csv, runs })
}
