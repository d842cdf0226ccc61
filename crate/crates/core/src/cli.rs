//! Command-line front end: `certify`, `simulate`, `check-assumptions`,
//! `stats`.
//!
//! Exit status 0 means certified or clean, 1 means refuted, inconclusive or
//! violations found, 2 means a usage, input or I/O error.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::certifier::{certify_graph, Overall};
use crate::enumeration::DEFAULT_CYCLE_CAP;
use crate::graph::{GraphError, StabilityGraph};
use crate::signals::{read_signal, stats, validate_signal, SignalError};
use crate::simulator::{
    check_assumptions, parse_comparison, simulate_batch, write_trajectory_csv,
    AssumptionProbeConfig, ComparisonFunction, MonteCarloConfig, ProbeError, SimError,
};
use crate::system::{build_graph, load_spec, SpecError, SystemSpec};

pub const THREADS_ENV: &str = "IOSS_CERTIFY_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "ioss",
    version,
    about = "IOSS certification and simulation for switched systems under restricted switching"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check the cycle conditions on the switching graph and write a report.
    Certify(CertifyArgs),
    /// Integrate the system under random admissible signals, one file per seed.
    Simulate(SimulateArgs),
    /// Sample the Lyapunov-like assumptions for violations.
    CheckAssumptions(AssumptionArgs),
    /// Switch statistics of a recorded signal over a window.
    Stats(StatsArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// System file (JSON).
    pub spec: PathBuf,
    /// Directory for written reports and trajectories.
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct CertifyArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Strictness of the contractivity test; defaults to the system file's value.
    #[arg(long)]
    pub tolerance: Option<f64>,
    /// Largest number of cycles (and of simple walks per vertex pair) to enumerate.
    #[arg(long, default_value_t = DEFAULT_CYCLE_CAP)]
    pub max_cycles: usize,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Number of runs.
    #[arg(long, default_value_t = 10)]
    pub seeds: usize,
    /// Seed of the first run; run k uses seed + k. Defaults to the system file's value.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 15.0)]
    pub horizon: f64,
    /// RK4 step; defaults to the system file's value.
    #[arg(long)]
    pub step: Option<f64>,
    /// Initial subsystem id; drawn per run when absent.
    #[arg(long)]
    pub start: Option<String>,
    /// Initial states are uniform in [-r, r]^d.
    #[arg(long, default_value_t = 1.0)]
    pub x0_radius: f64,
    /// Input components are uniform in [-a, a].
    #[arg(long, default_value_t = 0.5)]
    pub input_amp: f64,
    /// Input is redrawn every this many time units.
    #[arg(long, default_value_t = 0.1)]
    pub input_hold: f64,
    /// Input gain as an expression in `s`; with --gamma2 enables the bound check.
    #[arg(long, requires = "gamma2")]
    pub gamma1: Option<String>,
    /// Output gain as an expression in `s`.
    #[arg(long, requires = "gamma1")]
    pub gamma2: Option<String>,
    /// Bound slack below minus this value counts as a violation.
    #[arg(long, default_value_t = 1e-3)]
    pub slack_tolerance: f64,
}

#[derive(Debug, Args)]
pub struct AssumptionArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, default_value_t = 10_000)]
    pub samples: usize,
    /// States are sampled from [-r, r]^d.
    #[arg(long, default_value_t = 2.0)]
    pub state_radius: f64,
    /// Inputs are sampled from [-r, r]^m.
    #[arg(long, default_value_t = 1.0)]
    pub input_radius: f64,
    /// Lower sandwich bound in `s`; fitted from samples when absent.
    #[arg(long)]
    pub alpha_lower: Option<String>,
    #[arg(long)]
    pub alpha_upper: Option<String>,
    /// Input gain in `s`; fitted from samples when absent.
    #[arg(long)]
    pub gamma1: Option<String>,
    #[arg(long)]
    pub gamma2: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Relative slack before a sampled margin counts as a violation.
    #[arg(long, default_value_t = 1e-7)]
    pub tolerance: f64,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// System file (JSON).
    pub spec: PathBuf,
    /// Signal file: `# horizon T` line, then `instant,index` rows.
    #[arg(long)]
    pub signal: PathBuf,
    /// Window start (exclusive); defaults to 0.
    #[arg(long)]
    pub from: Option<f64>,
    /// Window end (inclusive); defaults to the horizon.
    #[arg(long)]
    pub to: Option<f64>,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Probe(#[from] ProbeError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0}")]
    Usage(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Sizes the global thread pool from `IOSS_CERTIFY_THREADS` when set.
pub fn configure_threads() -> Result<Option<usize>, CliError> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(None);
    };
    let n: usize = raw.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        CliError::Usage(format!(
            "{THREADS_ENV} must be a positive integer, got `{raw}`"
        ))
    })?;
    // A pool built earlier in the same process keeps its size.
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global();
    Ok(Some(n))
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "system".to_string())
}

fn create(dir: &Path, name: &str) -> Result<(PathBuf, BufWriter<File>), CliError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let path = dir.join(name);
    let file = File::create(&path).map_err(io_err(&path))?;
    Ok((path, BufWriter::new(file)))
}

fn load(path: &Path) -> Result<(SystemSpec, StabilityGraph), CliError> {
    let spec = load_spec(path)?;
    let graph = build_graph(&spec)?;
    Ok((spec, graph))
}

fn comparison(text: &Option<String>) -> Result<Option<ComparisonFunction>, CliError> {
    Ok(text.as_deref().map(parse_comparison).transpose()?)
}

/// Runs one command, writing human-readable output to `out`. Returns the
/// exit status.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<i32, CliError> {
    let threads = configure_threads()?;
    let stdout_err = |source| CliError::Io {
        path: PathBuf::from("<stdout>"),
        source,
    };
    match cli.command {
        Command::Certify(a) => certify_cmd(a, threads),
        Command::Simulate(a) => simulate_cmd(a),
        Command::CheckAssumptions(a) => assumptions_cmd(a),
        Command::Stats(a) => stats_cmd(a),
    }
    .and_then(|(code, text)| {
        out.write_all(text.as_bytes()).map_err(stdout_err)?;
        Ok(code)
    })
}

type Outcome = Result<(i32, String), CliError>;

fn certify_cmd(a: CertifyArgs, threads: Option<usize>) -> Outcome {
    let (spec, graph) = load(&a.common.spec)?;
    let tolerance = a.tolerance.unwrap_or(spec.defaults.tolerance);
    if !(tolerance.is_finite() && tolerance >= 0.0) {
        return Err(CliError::Usage(format!(
            "tolerance must be >= 0, got {tolerance}"
        )));
    }
    let report = certify_graph(&graph, tolerance, a.max_cycles);
    let text = report.to_text(&[
        ("system", a.common.spec.display().to_string()),
        (
            "threads",
            threads.map_or_else(|| "default".to_string(), |n| n.to_string()),
        ),
    ]);
    let (path, mut file) = create(
        &a.common.out_dir,
        &format!("{}.cert.txt", stem(&a.common.spec)),
    )?;
    file.write_all(text.as_bytes()).map_err(io_err(&path))?;
    file.flush().map_err(io_err(&path))?;
    let code = if report.overall == Overall::Certified {
        0
    } else {
        1
    };
    Ok((
        code,
        format!("{text}\nreport written to {}\n", path.display()),
    ))
}

fn simulate_cmd(a: SimulateArgs) -> Outcome {
    let (spec, graph) = load(&a.common.spec)?;
    let mut cfg = MonteCarloConfig::for_spec(&spec);
    cfg.runs = a.seeds;
    cfg.horizon = a.horizon;
    cfg.x0_radius = a.x0_radius;
    cfg.input_amplitude = a.input_amp;
    cfg.input_hold = a.input_hold;
    if let Some(s) = a.seed {
        cfg.base_seed = s;
    }
    if let Some(h) = a.step {
        cfg.step = h;
    }
    if let Some(label) = &a.start {
        cfg.start = Some(graph.index_of(label)?);
    }
    if !(cfg.horizon.is_finite() && cfg.horizon > 0.0) {
        return Err(CliError::Usage(format!(
            "horizon must be positive, got {}",
            cfg.horizon
        )));
    }
    if !(cfg.input_hold.is_finite() && cfg.input_hold > 0.0) {
        return Err(CliError::Usage(format!(
            "input hold must be positive, got {}",
            cfg.input_hold
        )));
    }
    let gammas = match (comparison(&a.gamma1)?, comparison(&a.gamma2)?) {
        (Some(g1), Some(g2)) => Some((g1.expr, g2.expr)),
        _ => None,
    };
    let runs = simulate_batch(&spec, &graph, &cfg, gammas.as_ref().map(|(a, b)| (a, b)));

    let stem = stem(&a.common.spec);
    let mut text = String::new();
    text.push_str(&format!(
        "system: {}\nruns: {}\nbase_seed: {}\nhorizon: {}\nstep: {}\nstart: {}\nx0_radius: {}\ninput_amp: {}\ninput_hold: {}\ngamma1: {}\ngamma2: {}\n\n",
        a.common.spec.display(),
        cfg.runs,
        cfg.base_seed,
        cfg.horizon,
        cfg.step,
        a.start.as_deref().unwrap_or("random"),
        cfg.x0_radius,
        cfg.input_amplitude,
        cfg.input_hold,
        a.gamma1.as_deref().unwrap_or("-"),
        a.gamma2.as_deref().unwrap_or("-"),
    ));
    text.push_str("seed switches max_norm max_psi2 min_slack file\n");
    let mut failed = false;
    for (k, run) in runs.into_iter().enumerate() {
        let seed = cfg.run_seed(k);
        let run = match run {
            Ok(r) => r,
            Err(e @ SimError::BlowUp { .. }) => {
                failed = true;
                text.push_str(&format!("{seed} blow-up: {e}\n"));
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        let (path, mut file) = create(&a.common.out_dir, &format!("{stem}.seed{seed}.csv"))?;
        write_trajectory_csv(&mut file, &spec, &run)?;
        file.flush().map_err(io_err(&path))?;
        let (sig_path, mut sig_file) =
            create(&a.common.out_dir, &format!("{stem}.seed{seed}.signal.txt"))?;
        crate::signals::write_signal(&mut sig_file, &graph, &run.signal)?;
        sig_file.flush().map_err(io_err(&sig_path))?;

        let max_psi2 = run.psi2.iter().copied().fold(0.0, f64::max);
        let slack = match &run.bound {
            Some(b) => {
                if b.min_slack < -a.slack_tolerance {
                    failed = true;
                }
                format!("{}@{}", b.min_slack, b.min_time)
            }
            None => "-".to_string(),
        };
        text.push_str(&format!(
            "{seed} {} {} {} {} {}\n",
            run.signal.switch_count(),
            run.trajectory.max_state_norm(),
            max_psi2,
            slack,
            path.display()
        ));
    }
    Ok((i32::from(failed), text))
}

fn assumptions_cmd(a: AssumptionArgs) -> Outcome {
    let (spec, _) = load(&a.common.spec)?;
    let mut cfg = AssumptionProbeConfig::symmetric(&spec, a.state_radius, a.input_radius);
    cfg.samples = a.samples;
    cfg.tolerance = a.tolerance;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.alpha_lower = comparison(&a.alpha_lower)?;
    cfg.alpha_upper = comparison(&a.alpha_upper)?;
    cfg.gamma1 = comparison(&a.gamma1)?;
    cfg.gamma2 = comparison(&a.gamma2)?;
    let r = check_assumptions(&spec, &cfg)?;

    let mut text = format!(
        "# assumption probe (sampling; a clean run is evidence, not proof)\nsystem: {}\nsamples: {}\nstate_box: [-{sr}, {sr}]^{}\ninput_box: [-{ir}, {ir}]^{}\nseed: {}\ntolerance: {}\nfd_step: {}\nalpha_lower: {}\nalpha_upper: {}\ngamma1: {}\ngamma2: {}\ngamma_capped: {}\n",
        a.common.spec.display(),
        r.samples,
        spec.dims.d,
        spec.dims.m,
        cfg.seed,
        cfg.tolerance,
        cfg.fd_step,
        r.alpha_lower,
        r.alpha_upper,
        r.gamma1,
        r.gamma2,
        r.gamma_capped,
        sr = a.state_radius,
        ir = a.input_radius,
    );
    text.push_str("\n[worst margins]\nsubsystem lower upper dissipation\n");
    for (id, m) in &r.worst_subsystem {
        text.push_str(&format!("{id} {} {} {}\n", m[0], m[1], m[2]));
    }
    text.push_str("edge jump\n");
    for (e, m) in &r.worst_edge {
        text.push_str(&format!("{e} {m}\n"));
    }
    text.push_str(&format!("\n[violations] {}\n", r.violations.len()));
    for v in &r.violations {
        text.push_str(&format!(
            "{} {} state={:?} input={:?} margin={}\n",
            v.kind, v.location, v.state, v.input, v.margin
        ));
    }
    let (path, mut file) = create(
        &a.common.out_dir,
        &format!("{}.assumptions.txt", stem(&a.common.spec)),
    )?;
    file.write_all(text.as_bytes()).map_err(io_err(&path))?;
    file.flush().map_err(io_err(&path))?;
    Ok((i32::from(!r.clean()), text))
}

fn stats_cmd(a: StatsArgs) -> Outcome {
    let (_, graph) = load(&a.spec)?;
    let file = File::open(&a.signal).map_err(io_err(&a.signal))?;
    let signal = read_signal(file, &graph)?;
    let s = a.from.unwrap_or(0.0);
    let t = a.to.unwrap_or(signal.horizon());
    let st = stats(&signal, s, t)?;
    let check = validate_signal(&graph, &signal);

    let mut text = format!("window: ({s}, {t}]\nN: {}\n", st.switches);
    for (&p, &tp) in &st.activation {
        text.push_str(&format!("T[{}]: {tp}\n", graph.label(p)));
    }
    for (&(p, q), &n) in &st.switch_counts {
        text.push_str(&format!("N[{}->{}]: {n}\n", graph.label(p), graph.label(q)));
    }
    text.push_str(&format!("xi: {}\n", st.aggregate_xi(&graph)));
    text.push_str(&format!("admissible: {}\n", check.ok));
    for v in &check.violations {
        text.push_str(&format!("violation: {v}\n"));
    }
    Ok((i32::from(!check.ok), text))
}
