//! Command-line driver: simulate cohorts, run the experiment commands,
//! estimate on panel files, bootstrap intervals, and query the exact
//! small-system oracle.
//!
//! Every output is CSV with `#`-prefixed metadata lines (grid, options,
//! truth values) so a result file documents how it was produced. Exit
//! codes sort failures by who must fix them: 2 for configuration, 3 for
//! data and i/o, 4 for numeric failures.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use binfx::coarsen::{coarse_indices, coarsen_panel, coarsen_regime, CoarsenError};
use binfx::dgp::{self, DgpError};
use binfx::estimators::{bootstrap_ci, estimate_with, EstimatorError, EstimatorSpec};
use binfx::exactg::{
    bias_bound, check_conditions, gform_coarsened, gform_uncoarsened, DiscreteMdp, ExactError,
};
use binfx::harness::{
    parse_estimator, run_effect_delay, run_rct, run_sweep, run_varred, ExperimentReport,
    HarnessError, PlanSpec, SweepConfig,
};
use binfx::panel::{Panel, PanelError, TreatmentRegime};
use binfx::Real;

const EXIT_CONFIG: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_NUMERIC: u8 = 4;

struct Failure {
    code: u8,
    msg: String,
}

impl Failure {
    fn data(msg: impl Into<String>) -> Self {
        Failure { code: EXIT_DATA, msg: msg.into() }
    }
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        let code = match e {
            HarnessError::Config(_) => EXIT_CONFIG,
            HarnessError::Io { .. } => EXIT_DATA,
            HarnessError::Numeric(_) => EXIT_NUMERIC,
        };
        Failure { code, msg: e.to_string() }
    }
}

impl From<PanelError> for Failure {
    fn from(e: PanelError) -> Self {
        // Panel failures concern the data files themselves.
        Failure { code: EXIT_DATA, msg: e.to_string() }
    }
}

impl From<CoarsenError> for Failure {
    fn from(e: CoarsenError) -> Self {
        Failure { code: EXIT_CONFIG, msg: e.to_string() }
    }
}

impl From<DgpError> for Failure {
    fn from(e: DgpError) -> Self {
        let code = match e {
            DgpError::Io { .. } | DgpError::Parse { .. } => EXIT_DATA,
            _ => EXIT_CONFIG,
        };
        Failure { code, msg: e.to_string() }
    }
}

impl From<EstimatorError> for Failure {
    fn from(e: EstimatorError) -> Self {
        let code = match e {
            EstimatorError::Invalid(_) | EstimatorError::HorizonMismatch(_) => EXIT_CONFIG,
            _ => EXIT_NUMERIC,
        };
        Failure { code, msg: e.to_string() }
    }
}

impl From<ExactError> for Failure {
    fn from(e: ExactError) -> Self {
        let code = match e {
            ExactError::Io { .. } | ExactError::Parse { .. } => EXIT_DATA,
            _ => EXIT_CONFIG,
        };
        Failure { code, msg: e.to_string() }
    }
}

/// Estimate mean outcomes of treatment-timing plans on coarsened
/// longitudinal data, and reproduce the bin-width bias/variance trade-off
/// in simulation.
#[derive(Parser)]
#[command(name = "binfx", version, about, arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort and write panel/outcome CSV files.
    Simulate(SimulateArgs),
    /// Sweep bin width; compare every estimator against the simulated truth.
    Sweep(ExperimentArgs),
    /// Sweep bin width against the treatment effect lag.
    EffectDelay(ExperimentArgs),
    /// Sweep bin width under randomized assignment (adds a naive benchmark).
    Rct(ExperimentArgs),
    /// Compare variance-reduction options on the fine grid.
    Varred(ExperimentArgs),
    /// Run one estimator on a panel file.
    Estimate(EstimateArgs),
    /// Percentile bootstrap interval for one estimator on a panel file.
    Bootstrap(BootstrapArgs),
    /// Exact values, bias bounds, and condition checks for a small system.
    Exact(ExactArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Subjects to simulate.
    #[arg(long, default_value_t = 1000)]
    n: usize,
    /// Fine-grid horizon (time points per subject).
    #[arg(long, default_value_t = 257)]
    t_star: usize,
    /// Treatment effect lag.
    #[arg(long, default_value_t = 1)]
    omega: usize,
    /// Seed of the generator's coefficient draw.
    #[arg(long, default_value_t = 17)]
    dgp_seed: u64,
    /// Seed of the cohort draw.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Bin width to coarsen the written panel to.
    #[arg(long, default_value_t = 1)]
    delta: usize,
    /// Assign treatment at random instead of by the confounded hazard.
    #[arg(long)]
    randomized: bool,
    /// Output prefix; writes `<prefix>_panel.csv` and `<prefix>_outcomes.csv`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Configuration file (flat `key = value`); flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Report destination (CSV).
    #[arg(long)]
    out: PathBuf,
    /// Also write a plain gnuplot script next to the report.
    #[arg(long)]
    emit_gnuplot: bool,
    /// Fine-grid horizon.
    #[arg(long)]
    t_star: Option<usize>,
    /// Subjects per replicate dataset.
    #[arg(long)]
    n: Option<usize>,
    /// Replicate datasets per cell.
    #[arg(long)]
    replications: Option<usize>,
    /// Bin widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    deltas: Option<Vec<usize>>,
    /// Effect lags, comma separated (effect-delay command).
    #[arg(long, value_delimiter = ',')]
    omegas: Option<Vec<usize>>,
    /// Estimators, comma separated; options attach with `:`
    /// (e.g. `ipw,tmle:clip=2.5,ir:pool-regimes`... options that contain
    /// commas must go through a config file).
    #[arg(long, value_delimiter = ',')]
    estimators: Option<Vec<String>>,
    /// Target plan: never, immediate, jump-at:<k>, or no-treat-before:<k>.
    #[arg(long)]
    regime: Option<String>,
    /// Seed of the generator's coefficient draw.
    #[arg(long)]
    dgp_seed: Option<u64>,
    /// Root seed for panels and the truth oracle.
    #[arg(long)]
    root_seed: Option<u64>,
    /// Monte Carlo draws behind the truth value.
    #[arg(long)]
    truth_draws: Option<usize>,
    /// Clip percentiles compared by the varred command, comma separated.
    #[arg(long, value_delimiter = ',')]
    clip_alphas: Option<Vec<f64>>,
    /// Assign treatment at random instead of by the confounded hazard.
    #[arg(long)]
    randomized: bool,
}

#[derive(Args)]
struct EstimateArgs {
    /// Panel CSV (one row per subject-time).
    #[arg(long)]
    panel: PathBuf,
    /// Outcome CSV (one row per subject).
    #[arg(long)]
    outcomes: PathBuf,
    /// Estimator: ipw, ir, or tmle.
    #[arg(long)]
    method: String,
    /// Target plan: never, immediate, jump-at:<k>, or no-treat-before:<k>,
    /// with times counted on the input panel's grid.
    #[arg(long)]
    regime: String,
    /// Bin width applied to the input panel before estimating.
    #[arg(long, default_value_t = 1)]
    delta: usize,
    /// Clip weights at this percentile from each tail.
    #[arg(long)]
    clip: Option<f64>,
    /// One treatment-hazard fit on all stacked person-times.
    #[arg(long)]
    pool_time: bool,
    /// One regression per step over a treatment-time column.
    #[arg(long)]
    pool_regimes: bool,
    /// Intercept-only outcome regressions.
    #[arg(long)]
    intercept_only: bool,
    /// Also compute a percentile bootstrap interval with this many replicates.
    #[arg(long)]
    bootstrap: Option<usize>,
    /// Bootstrap confidence level, in percent.
    #[arg(long, default_value_t = 95.0)]
    level: f64,
    /// Bootstrap seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Result destination (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BootstrapArgs {
    #[command(flatten)]
    estimate: EstimateArgs,
    /// Bootstrap replicates.
    #[arg(long, default_value_t = 500)]
    replicates: usize,
}

#[derive(Copy, Clone, ValueEnum)]
enum ExactMode {
    /// Exact mean outcome of the plan on the fine grid.
    Value,
    /// The value identified on the coarse grid.
    Coarsened,
    /// Extremes of the coarsening bias over interior policies.
    Bound,
    /// Evaluate the structural conditions for coarsening to be harmless.
    Check,
}

#[derive(Args)]
struct ExactArgs {
    /// System description file.
    #[arg(long)]
    mdp: PathBuf,
    /// Target plan: never, immediate, jump-at:<k>, or no-treat-before:<k>.
    #[arg(long)]
    regime: String,
    /// Bin width of the coarse grid.
    #[arg(long, default_value_t = 1)]
    delta: usize,
    /// What to compute.
    #[arg(long, value_enum)]
    mode: ExactMode,
    /// Result destination (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(args) => simulate(args),
        Command::Sweep(args) => experiment(args, "sweep", run_sweep::<Real>),
        Command::EffectDelay(args) => experiment(args, "effect-delay", run_effect_delay),
        Command::Rct(args) => experiment(args, "rct", run_rct),
        Command::Varred(args) => experiment(args, "varred", run_varred),
        Command::Estimate(args) => estimate(args, None),
        Command::Bootstrap(args) => estimate(args.estimate, Some(args.replicates)),
        Command::Exact(args) => exact(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}

fn write_out(path: Option<&Path>, content: &str) -> Result<(), Failure> {
    match path {
        Some(p) => std::fs::write(p, content)
            .map_err(|e| Failure::data(format!("writing {}: {e}", p.display()))),
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

fn simulate(args: SimulateArgs) -> Result<(), Failure> {
    let mut params = dgp::sample_params::<Real>(args.dgp_seed);
    params.horizon = args.t_star;
    params.effect_lag = args.omega;
    if args.randomized {
        params = params.into_randomized();
    }
    let fine = dgp::generate_panel(&params, args.n, args.seed)?;
    let grid = coarse_indices(args.t_star, args.delta)?;
    let panel = coarsen_panel(&fine, &grid)?;
    panel.write_csv(&args.out)?;
    println!(
        "wrote {0}_panel.csv and {0}_outcomes.csv: n={1} points={2} (bin width {3} \
         over {4} fine points)",
        args.out.display(),
        panel.n_subjects(),
        panel.horizon(),
        args.delta,
        args.t_star,
    );
    Ok(())
}

fn experiment(
    args: ExperimentArgs,
    name: &str,
    run: impl Fn(&SweepConfig) -> Result<ExperimentReport<Real>, HarnessError>,
) -> Result<(), Failure> {
    let mut config = match &args.config {
        Some(path) => SweepConfig::read_text(path)?,
        None => SweepConfig::desk_default(),
    };
    if let Some(v) = args.t_star {
        config.t_star = v;
    }
    if let Some(v) = args.n {
        config.n = v;
    }
    if let Some(v) = args.replications {
        config.replications = v;
    }
    if let Some(v) = args.deltas {
        config.deltas = v;
    }
    if let Some(v) = args.omegas {
        config.omegas = v;
    }
    if let Some(tokens) = &args.estimators {
        config.estimators = tokens
            .iter()
            .map(|t| parse_estimator(t))
            .collect::<Result<Vec<_>, _>>()?;
    }
    if let Some(regime) = &args.regime {
        config.plan = PlanSpec::parse(regime)?;
    }
    if let Some(v) = args.dgp_seed {
        config.dgp_seed = v;
    }
    if let Some(v) = args.root_seed {
        config.root_seed = v;
    }
    if let Some(v) = args.truth_draws {
        config.truth_draws = v;
    }
    if let Some(v) = args.clip_alphas {
        config.clip_alphas = v;
    }
    if args.randomized {
        config.confounded = false;
    }
    let report = run(&config)?;
    report.write_csv(&args.out)?;
    eprintln!("{name}: wrote {} ({} rows)", args.out.display(), report.rows.len());
    if args.emit_gnuplot {
        let csv_name = args
            .out
            .file_name()
            .map(|f| f.to_string_lossy().into_owned())
            .unwrap_or_else(|| args.out.display().to_string());
        let script_path = args.out.with_extension("gnuplot");
        write_out(Some(&script_path), &report.gnuplot_script(&csv_name))?;
        eprintln!("{name}: wrote {}", script_path.display());
    }
    Ok(())
}

/// Read, coarsen, estimate, optionally bootstrap, and emit the one-row
/// result CSV shared by `estimate` and `bootstrap`.
fn estimate(args: EstimateArgs, forced_replicates: Option<usize>) -> Result<(), Failure> {
    let fine = Panel::<Real>::read_csv(&args.panel, &args.outcomes)?;
    let plan_spec = PlanSpec::parse(&args.regime)?;
    let fine_plan = plan_spec.materialize(fine.horizon())?;
    let grid = coarse_indices(fine.horizon(), args.delta)?;
    let panel = coarsen_panel(&fine, &grid)?;
    let plan = coarsen_regime(&fine_plan, &grid)?;
    let mut spec = EstimatorSpec::new(args.method.parse()?);
    spec.clip_alpha = args.clip;
    spec.pool_time = args.pool_time;
    spec.pool_regimes = args.pool_regimes;
    spec.intercept_only_q = args.intercept_only;
    let est = estimate_with(&panel, &plan, &spec)?;
    let replicates = forced_replicates.or(args.bootstrap);
    let interval = match replicates {
        Some(b) => Some(bootstrap_ci(&panel, &plan, &spec, b, args.level, args.seed)?),
        None => None,
    };

    let mut flags: Vec<String> = Vec::new();
    if est.undefined {
        flags.push("undefined".into());
    }
    if est.n_fallback_fits > 0 {
        flags.push(format!("fallback_fits={}", est.n_fallback_fits));
    }
    if est.n_degenerate_fits > 0 {
        flags.push(format!("degenerate_fits={}", est.n_degenerate_fits));
    }
    if let Some(ci) = &interval {
        if ci.n_skipped > 0 {
            flags.push(format!("bootstrap_skipped={}", ci.n_skipped));
        }
    }
    let flags = if flags.is_empty() { "ok".to_string() } else { flags.join(";") };

    let mut out = String::new();
    out.push_str(&format!("# method: {}\n", binfx::harness::spec_text(&spec)));
    out.push_str(&format!("# regime: {}\n", plan_spec.label()));
    out.push_str(&format!(
        "# grid: delta={} points={} of {}\n",
        args.delta,
        grid.len(),
        fine.horizon()
    ));
    if let Some(ci) = &interval {
        out.push_str(&format!(
            "# bootstrap: replicates={} level={} seed={}\n",
            ci.n_kept + ci.n_skipped,
            ci.level,
            args.seed
        ));
    }
    out.push_str("psi_hat,ci_lo,ci_hi,n_followers,ess,flags\n");
    let (lo, hi) = match &interval {
        Some(ci) => (ci.lo, ci.hi),
        None => (Real::NAN, Real::NAN),
    };
    out.push_str(&format!(
        "{},{},{},{},{},{}\n",
        est.psi, lo, hi, est.n_followers, est.ess, flags
    ));
    write_out(args.out.as_deref(), &out)
}

fn exact(args: ExactArgs) -> Result<(), Failure> {
    let mdp = DiscreteMdp::<Real>::read_text(&args.mdp)?;
    let plan_spec = PlanSpec::parse(&args.regime)?;
    let plan: TreatmentRegime = plan_spec.materialize(mdp.horizon())?;
    let grid = coarse_indices(mdp.horizon(), args.delta)?;
    let mut out = String::new();
    out.push_str(&format!("# system: {}\n", args.mdp.display()));
    out.push_str(&format!("# regime: {}\n", plan_spec.label()));
    out.push_str(&format!(
        "# grid: delta={} points={} of {}\n",
        args.delta,
        grid.len(),
        mdp.horizon()
    ));
    match args.mode {
        ExactMode::Value => {
            let value = gform_uncoarsened(&mdp, &plan)?;
            out.push_str("value\n");
            out.push_str(&format!("{value}\n"));
        }
        ExactMode::Coarsened => {
            let value = gform_coarsened(&mdp, &plan, &grid)?;
            out.push_str("coarsened_value\n");
            out.push_str(&format!("{value}\n"));
        }
        ExactMode::Bound => {
            let (lo, hi) = bias_bound(&mdp, &plan, &grid)?;
            out.push_str("bias_lo,bias_hi,width\n");
            out.push_str(&format!("{lo},{hi},{}\n", hi - lo));
        }
        ExactMode::Check => {
            let report = check_conditions(&mdp, &plan, &grid)?;
            out.push_str(
                "prefix_determined,no_inbin_effect,max_inbin_effect,coarsened,\
                 uncoarsened,equality_implied,equality_holds\n",
            );
            let holds = match report.equality_holds {
                Some(h) => h.to_string(),
                None => "NA".to_string(),
            };
            out.push_str(&format!(
                "{},{},{},{},{},{},{holds}\n",
                report.prefix_determined,
                report.no_inbin_effect,
                report.max_inbin_effect,
                report.coarsened,
                report.uncoarsened,
                report.equality_implied,
            ));
        }
    }
    write_out(args.out.as_deref(), &out)
}
