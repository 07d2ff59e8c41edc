//! Multi-replicate simulation experiments: bin-width sweeps, effect-delay
//! sweeps, randomized-assignment comparisons, and variance-reduction
//! comparisons, aggregated into CSV reports with Monte Carlo error bars.
//!
//! Reproducibility contract: every random draw is keyed by the
//! configuration's root seed through [`crate::rng::derive_seed`] tags and
//! per-replicate substreams, replicates are collected in index order, and
//! all reductions run sequentially — so a report is a pure function of its
//! configuration, byte for byte, regardless of thread count.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

use crate::coarsen::{coarse_indices, coarsen_panel, coarsen_regime, CoarseGrid};
use crate::dgp::{self, DgpParams, TruthEstimate, TRUTH_MIN_DRAWS};
use crate::estimators::{
    estimate_with, fit_propensity, ipw, ir, tmle, Estimate, EstimatorSpec, Method,
    PropensityModel,
};
use crate::panel::{Panel, TreatmentRegime};
use crate::rng::{derive_seed, tag};
use crate::scalar::Scalar;

/// Failures are grouped by who must fix them: the configuration, the
/// filesystem, or the numbers. The command-line layer maps the groups to
/// distinct exit codes.
#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("i/o on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("numeric failure: {0}")]
    Numeric(String),
}

// ---------------------------------------------------------------------------
// Target plans
// ---------------------------------------------------------------------------

/// A target plan described independently of the horizon it will be laid
/// onto, so one configuration can drive grids of different lengths.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlanSpec {
    /// Never initiate.
    Never,
    /// Initiate at entry.
    Immediate,
    /// Untreated strictly before `k`, treated from `k` on.
    JumpAt(usize),
    /// Untreated strictly before `k`, unspecified afterwards.
    NoTreatBefore(usize),
}

impl PlanSpec {
    /// Parse `never`, `immediate`, `jump-at:<k>`, or `no-treat-before:<k>`.
    pub fn parse(s: &str) -> Result<Self, HarnessError> {
        let s = s.trim();
        if let Some(k) = s.strip_prefix("jump-at:") {
            let k = k
                .parse()
                .map_err(|_| HarnessError::Config(format!("bad jump time in `{s}`")))?;
            return Ok(PlanSpec::JumpAt(k));
        }
        if let Some(k) = s.strip_prefix("no-treat-before:") {
            let k = k
                .parse()
                .map_err(|_| HarnessError::Config(format!("bad time in `{s}`")))?;
            return Ok(PlanSpec::NoTreatBefore(k));
        }
        match s {
            "never" => Ok(PlanSpec::Never),
            "immediate" => Ok(PlanSpec::Immediate),
            other => Err(HarnessError::Config(format!(
                "unknown plan `{other}` (expected never, immediate, jump-at:<k>, \
                 or no-treat-before:<k>)"
            ))),
        }
    }

    /// The text [`PlanSpec::parse`] accepts.
    pub fn label(&self) -> String {
        match self {
            PlanSpec::Never => "never".into(),
            PlanSpec::Immediate => "immediate".into(),
            PlanSpec::JumpAt(k) => format!("jump-at:{k}"),
            PlanSpec::NoTreatBefore(k) => format!("no-treat-before:{k}"),
        }
    }

    /// Lay the plan onto a grid of `horizon` time points.
    pub fn materialize(&self, horizon: usize) -> Result<TreatmentRegime, HarnessError> {
        let bad = |e| HarnessError::Config(format!("plan does not fit the grid: {e}"));
        match *self {
            PlanSpec::Never => Ok(TreatmentRegime::never(horizon)),
            PlanSpec::Immediate => Ok(TreatmentRegime::immediate(horizon)),
            PlanSpec::JumpAt(k) => TreatmentRegime::jump_at(k, horizon).map_err(bad),
            PlanSpec::NoTreatBefore(k) => TreatmentRegime::no_treat_before(k, horizon).map_err(bad),
        }
    }
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Everything a sweep needs: the generator, the grids, the estimators, the
/// truth oracle, and the seeds. One configuration drives all four commands;
/// fields a command does not use are simply ignored by it.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    /// Fine-grid horizon T* (time points per simulated subject).
    pub t_star: usize,
    /// Subjects per replicate dataset.
    pub n: usize,
    /// Number of replicate datasets R.
    pub replications: usize,
    /// Bin widths to coarsen to; 1 keeps the fine grid.
    pub deltas: Vec<usize>,
    /// Effect lags for the effect-delay sweep.
    pub omegas: Vec<usize>,
    /// Estimators (with options) to run.
    pub estimators: Vec<EstimatorSpec>,
    /// Target plan whose mean outcome is estimated.
    pub plan: PlanSpec,
    /// Seed of the generator's coefficient draw.
    pub dgp_seed: u64,
    /// Root seed for panels and the truth oracle.
    pub root_seed: u64,
    /// Monte Carlo draws for the truth value.
    pub truth_draws: usize,
    /// When false, treatment is assigned at random (hazard ignores state).
    pub confounded: bool,
    /// Clip percentiles compared by the variance-reduction command.
    pub clip_alphas: Vec<f64>,
}

impl SweepConfig {
    /// Desk-scale defaults: the full grid and cohort size with the
    /// replication count and truth draws reduced to fit on one machine.
    pub fn desk_default() -> Self {
        SweepConfig {
            t_star: 257,
            n: 1000,
            replications: 200,
            deltas: vec![1, 2, 4, 8, 16, 32, 64, 128, 256],
            omegas: vec![8],
            estimators: vec![
                EstimatorSpec::new(Method::Ipw),
                EstimatorSpec::new(Method::Ir),
                EstimatorSpec::new(Method::Tmle),
            ],
            plan: PlanSpec::Never,
            dgp_seed: 17,
            root_seed: 99,
            truth_draws: 200_000,
            confounded: true,
            clip_alphas: vec![0.1, 1.0, 2.5],
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |msg: String| Err(HarnessError::Config(msg));
        if self.t_star < 2 {
            return bad(format!("t_star must be at least 2, got {}", self.t_star));
        }
        if self.n == 0 {
            return bad("n must be positive".into());
        }
        if self.replications < 2 {
            return bad(format!("need at least 2 replications, got {}", self.replications));
        }
        if self.deltas.is_empty() {
            return bad("deltas must not be empty".into());
        }
        if self.omegas.is_empty() {
            return bad("omegas must not be empty".into());
        }
        if self.omegas.contains(&0) {
            return bad("effect lags must be at least 1".into());
        }
        if self.estimators.is_empty() {
            return bad("estimators must not be empty".into());
        }
        if self.truth_draws < TRUTH_MIN_DRAWS {
            return bad(format!(
                "truth_draws must be at least {TRUTH_MIN_DRAWS}, got {}",
                self.truth_draws
            ));
        }
        for &alpha in &self.clip_alphas {
            if !(0.0..50.0).contains(&alpha) {
                return bad(format!("clip percentile must lie in [0, 50), got {alpha}"));
            }
        }
        // Every bin width must produce a grid the plan survives on.
        let fine_plan = self.plan.materialize(self.t_star)?;
        for &delta in &self.deltas {
            let grid = coarse_indices(self.t_star, delta).map_err(|e| {
                HarnessError::Config(format!("bin width {delta} on {} points: {e}", self.t_star))
            })?;
            coarsen_regime(&fine_plan, &grid).map_err(|e| {
                HarnessError::Config(format!(
                    "plan {} does not survive bin width {delta}: {e}",
                    self.plan.label()
                ))
            })?;
        }
        Ok(())
    }

    /// Serialize to the flat `key = value` text format.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "t_star = {}", self.t_star);
        let _ = writeln!(out, "n = {}", self.n);
        let _ = writeln!(out, "replications = {}", self.replications);
        let _ = writeln!(out, "deltas = {}", join(&self.deltas));
        let _ = writeln!(out, "omegas = {}", join(&self.omegas));
        let _ = writeln!(
            out,
            "estimators = {}",
            self.estimators.iter().map(spec_text).collect::<Vec<_>>().join(" ")
        );
        let _ = writeln!(out, "regime = {}", self.plan.label());
        let _ = writeln!(out, "dgp_seed = {}", self.dgp_seed);
        let _ = writeln!(out, "root_seed = {}", self.root_seed);
        let _ = writeln!(out, "truth_draws = {}", self.truth_draws);
        let _ = writeln!(out, "confounded = {}", self.confounded);
        let _ = writeln!(out, "clip_alphas = {}", join(&self.clip_alphas));
        out
    }

    /// Parse the format produced by [`SweepConfig::to_text`]. Every key is
    /// optional — absent keys keep their desk-scale defaults — but unknown
    /// keys are rejected loudly.
    pub fn parse_text(text: &str, origin: &str) -> Result<Self, HarnessError> {
        let mut kv: HashMap<&str, (usize, &str)> = HashMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                HarnessError::Config(format!("{origin}:{}: expected `key = value`", idx + 1))
            })?;
            kv.insert(k.trim(), (idx + 1, v.trim()));
        }
        let mut config = SweepConfig::desk_default();
        let mut take = |key: &str| kv.remove(key).map(|(_, v)| v.to_string());
        fn parse_one<T: std::str::FromStr>(
            origin: &str,
            key: &str,
            v: &str,
        ) -> Result<T, HarnessError> {
            v.parse().map_err(|_| HarnessError::Config(format!("{origin}: bad {key} `{v}`")))
        }
        fn parse_list<T: std::str::FromStr>(
            origin: &str,
            key: &str,
            v: &str,
        ) -> Result<Vec<T>, HarnessError> {
            v.split_whitespace().map(|p| parse_one(origin, key, p)).collect()
        }
        if let Some(v) = take("t_star") {
            config.t_star = parse_one(origin, "t_star", &v)?;
        }
        if let Some(v) = take("n") {
            config.n = parse_one(origin, "n", &v)?;
        }
        if let Some(v) = take("replications") {
            config.replications = parse_one(origin, "replications", &v)?;
        }
        if let Some(v) = take("deltas") {
            config.deltas = parse_list(origin, "delta", &v)?;
        }
        if let Some(v) = take("omegas") {
            config.omegas = parse_list(origin, "omega", &v)?;
        }
        if let Some(v) = take("estimators") {
            config.estimators = v
                .split_whitespace()
                .map(parse_estimator)
                .collect::<Result<Vec<_>, _>>()?;
        }
        if let Some(v) = take("regime") {
            config.plan = PlanSpec::parse(&v)?;
        }
        if let Some(v) = take("dgp_seed") {
            config.dgp_seed = parse_one(origin, "dgp_seed", &v)?;
        }
        if let Some(v) = take("root_seed") {
            config.root_seed = parse_one(origin, "root_seed", &v)?;
        }
        if let Some(v) = take("truth_draws") {
            config.truth_draws = parse_one(origin, "truth_draws", &v)?;
        }
        if let Some(v) = take("confounded") {
            config.confounded = parse_one(origin, "confounded", &v)?;
        }
        if let Some(v) = take("clip_alphas") {
            config.clip_alphas = parse_list(origin, "clip percentile", &v)?;
        }
        if let Some((&key, &(line, _))) = kv.iter().next() {
            return Err(HarnessError::Config(format!("{origin}:{line}: unknown key `{key}`")));
        }
        config.validate()?;
        Ok(config)
    }

    pub fn read_text(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Self::parse_text(&text, &path.display().to_string())
    }
}

fn join<T: std::fmt::Display>(xs: &[T]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

/// Parse one estimator token: a method name optionally followed by
/// comma-separated options, e.g. `ipw`, `tmle:clip=2.5,pool-time`,
/// `ir:pool-regimes`.
pub fn parse_estimator(token: &str) -> Result<EstimatorSpec, HarnessError> {
    let (name, opts) = match token.split_once(':') {
        Some((n, o)) => (n, Some(o)),
        None => (token, None),
    };
    let method: Method =
        name.parse().map_err(|e| HarnessError::Config(format!("{e}")))?;
    let mut spec = EstimatorSpec::new(method);
    if let Some(opts) = opts {
        for opt in opts.split(',') {
            let opt = opt.trim();
            if let Some(v) = opt.strip_prefix("clip=") {
                let alpha: f64 = v.parse().map_err(|_| {
                    HarnessError::Config(format!("bad clip percentile `{v}` in `{token}`"))
                })?;
                spec.clip_alpha = Some(alpha);
            } else {
                match opt {
                    "pool-time" => spec.pool_time = true,
                    "pool-regimes" => spec.pool_regimes = true,
                    "intercept-only" => spec.intercept_only_q = true,
                    other => {
                        return Err(HarnessError::Config(format!(
                            "unknown estimator option `{other}` in `{token}`"
                        )))
                    }
                }
            }
        }
    }
    Ok(spec)
}

/// The token [`parse_estimator`] accepts for `spec`.
pub fn spec_text(spec: &EstimatorSpec) -> String {
    let mut opts = Vec::new();
    if let Some(alpha) = spec.clip_alpha {
        opts.push(format!("clip={alpha}"));
    }
    if spec.pool_time {
        opts.push("pool-time".into());
    }
    if spec.pool_regimes {
        opts.push("pool-regimes".into());
    }
    if spec.intercept_only_q {
        opts.push("intercept-only".into());
    }
    if opts.is_empty() {
        spec.method.name().to_string()
    } else {
        format!("{}:{}", spec.method.name(), opts.join(","))
    }
}

/// The variant column for a spec: its options, or `plain`.
fn variant_label(spec: &EstimatorSpec) -> String {
    match spec_text(spec).split_once(':') {
        Some((_, opts)) => opts.replace(',', "+"),
        None => "plain".into(),
    }
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

/// One aggregated cell of an experiment: an estimator variant on one
/// (effect lag, bin width) grid, summarized over the defined replicates.
#[derive(Debug, Clone)]
pub struct ReportRow<S> {
    pub estimator: String,
    pub variant: String,
    pub omega: usize,
    pub delta: usize,
    /// Number of time points on the coarse grid.
    pub t_coarse: usize,
    /// Mean estimate minus the truth value.
    pub bias: S,
    pub abs_bias: S,
    /// Sample variance of the estimates (divisor k−1 over k defined).
    pub variance: S,
    /// Mean squared error about the truth.
    pub mse: S,
    /// Monte Carlo standard error of `bias`, truth uncertainty included.
    pub mc_se: S,
    /// Mean effective sample size (NaN for the weight-free recursion).
    pub mean_ess: S,
    /// Share of defined replicates with at least one hazard-fit fallback.
    pub fallback_rate: S,
    /// Replicates whose estimate was undefined or failed.
    pub n_undefined: usize,
}

/// Raw per-replicate estimates for one cell, aligned by replicate index so
/// cells can be compared pairwise (undefined replicates hold NaN).
#[derive(Debug, Clone)]
pub struct RawCell<S> {
    pub estimator: String,
    pub variant: String,
    pub omega: usize,
    pub delta: usize,
    pub estimates: Vec<S>,
    pub ess: Vec<S>,
    pub any_fallback: Vec<bool>,
}

/// A finished experiment: aggregated rows for the CSV, raw per-replicate
/// estimates for paired comparisons, and the truth values used.
#[derive(Debug, Clone)]
pub struct ExperimentReport<S> {
    /// Which command produced the report.
    pub command: String,
    /// The configuration, echoed in its text form.
    pub config_echo: String,
    /// Truth value per effect lag (one per lag; shared by every bin width).
    pub truths: Vec<(usize, TruthEstimate<S>)>,
    pub rows: Vec<ReportRow<S>>,
    pub raw: Vec<RawCell<S>>,
}

impl<S: Scalar> ExperimentReport<S> {
    /// Render the report as CSV: `#`-prefixed metadata (configuration,
    /// truth values, definitions), then a fixed header and one row per
    /// cell. Contains nothing time- or machine-dependent.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# report: {}", self.command);
        for line in self.config_echo.lines() {
            let _ = writeln!(out, "# config: {line}");
        }
        for (omega, truth) in &self.truths {
            let _ = writeln!(
                out,
                "# truth omega={omega}: value={} mc_se={} draws={}",
                truth.value, truth.mc_se, truth.draws
            );
        }
        let _ = writeln!(
            out,
            "# definitions: over the k of R replicates with a defined estimate:\n\
             #   bias = mean(estimate) - truth; variance = sample variance (k-1 divisor);\n\
             #   mse = mean((estimate - truth)^2), so mse = bias^2 + ((k-1)/k)*variance;\n\
             #   mc_se = sqrt(variance/k + truth_mc_se^2);\n\
             #   mean_ess = mean effective sample size (NaN where weights are not used);\n\
             #   fallback_rate = share of defined replicates with a hazard-fit fallback."
        );
        let _ = writeln!(
            out,
            "estimator,variant,omega,delta,t_coarse,bias,abs_bias,variance,mse,mc_se,\
             mean_ess,fallback_rate,n_undefined"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.estimator,
                r.variant,
                r.omega,
                r.delta,
                r.t_coarse,
                r.bias,
                r.abs_bias,
                r.variance,
                r.mse,
                r.mc_se,
                r.mean_ess,
                r.fallback_rate,
                r.n_undefined
            );
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), HarnessError> {
        std::fs::write(path, self.to_csv()).map_err(|e| HarnessError::Io {
            path: path.display().to_string(),
            source: e,
        })
    }

    /// A plain gnuplot script for the report, reading the CSV at
    /// `csv_name`. Sweep-style reports plot absolute bias against bin
    /// width per estimator series; the variance-reduction report plots
    /// variance per labeled variant.
    pub fn gnuplot_script(&self, csv_name: &str) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# gnuplot script for {csv_name}");
        let _ = writeln!(out, "set datafile separator ','");
        let _ = writeln!(out, "set key outside");
        let mut series: Vec<(String, String, usize)> = Vec::new();
        for r in &self.rows {
            let key = (r.estimator.clone(), r.variant.clone(), r.omega);
            if !series.contains(&key) {
                series.push(key);
            }
        }
        if self.command == "varred" {
            let _ = writeln!(out, "set ylabel 'variance'");
            let _ = writeln!(out, "set xtics rotate by -30");
            let _ = writeln!(out, "set style data points");
            let _ = writeln!(
                out,
                "plot '{csv_name}' every ::1 using 0:8:xticlabels(strcol(1).' '.strcol(2)) \
                 title 'variance'"
            );
            return out;
        }
        let _ = writeln!(out, "set logscale x 2");
        let _ = writeln!(out, "set xlabel 'bin width'");
        let _ = writeln!(out, "set ylabel 'absolute bias'");
        let _ = write!(out, "plot ");
        let clauses: Vec<String> = series
            .iter()
            .map(|(est, var, omega)| {
                format!(
                    "'{csv_name}' every ::1 using 4:(strcol(1) eq '{est}' && strcol(2) eq \
                     '{var}' && column(3) == {omega} ? column(7) : NaN) with linespoints \
                     title '{est} {var} omega={omega}'"
                )
            })
            .collect();
        let _ = writeln!(out, "{}", clauses.join(", \\\n     "));
        out
    }
}

// ---------------------------------------------------------------------------
// Runners
// ---------------------------------------------------------------------------

/// What to run in one report cell: an estimator, or the model-free
/// follower mean (the naive benchmark under randomized assignment).
#[derive(Debug, Clone, Copy)]
enum Runner {
    Spec(EstimatorSpec),
    NaiveMean,
}

struct CellJob {
    runner: Runner,
    estimator: String,
    variant: String,
}

impl CellJob {
    fn of(spec: EstimatorSpec) -> Self {
        CellJob {
            runner: Runner::Spec(spec),
            estimator: spec.method.name().to_string(),
            variant: variant_label(&spec),
        }
    }

    fn naive() -> Self {
        CellJob {
            runner: Runner::NaiveMean,
            estimator: "naive".into(),
            variant: "plain".into(),
        }
    }
}

/// One estimate's contribution to a raw cell; `psi` is NaN when the
/// replicate produced nothing usable.
#[derive(Clone, Copy)]
struct CellOut<S> {
    psi: S,
    ess: S,
    fallback: bool,
}

impl<S: Scalar> CellOut<S> {
    fn failed() -> Self {
        CellOut { psi: S::nan(), ess: S::nan(), fallback: false }
    }

    fn of(est: &Estimate<S>) -> Self {
        if est.undefined || !est.psi.is_finite() {
            CellOut { psi: S::nan(), ess: S::nan(), fallback: est.n_fallback_fits > 0 }
        } else {
            CellOut { psi: est.psi, ess: est.ess, fallback: est.n_fallback_fits > 0 }
        }
    }
}

/// Self-normalized follower mean with no modeling at all.
fn naive_mean<S: Scalar>(panel: &Panel<S>, plan: &TreatmentRegime) -> CellOut<S> {
    let mut num = S::zero();
    let mut den = S::zero();
    let mut count = 0usize;
    for i in 0..panel.n_subjects() {
        if panel.follows_fully(plan, i) {
            let w = panel.weight(i);
            num += w * panel.y_of(i);
            den += w;
            count += 1;
        }
    }
    if count > 0 && den > S::zero() {
        CellOut { psi: num / den, ess: S::of_usize(count), fallback: false }
    } else {
        CellOut::failed()
    }
}

fn run_one_cell<S: Scalar>(
    panel: &Panel<S>,
    plan: &TreatmentRegime,
    runner: Runner,
    unpooled: Option<&PropensityModel<S>>,
    pooled: Option<&PropensityModel<S>>,
) -> CellOut<S> {
    let spec = match runner {
        Runner::NaiveMean => return naive_mean(panel, plan),
        Runner::Spec(spec) => spec,
    };
    if spec.intercept_only_q {
        // The flattened-regression variant carries its own model fitting.
        return match estimate_with(panel, plan, &spec) {
            Ok(est) => CellOut::of(&est),
            Err(_) => CellOut::failed(),
        };
    }
    let model = if spec.pool_time { pooled } else { unpooled };
    let result = match spec.method {
        Method::Ir => ir(panel, plan, spec.pool_regimes),
        Method::Ipw => match model {
            Some(m) => ipw(panel, plan, m, spec.clip_alpha),
            None => return CellOut::failed(),
        },
        Method::Tmle => match model {
            Some(m) => tmle(panel, plan, m, spec.pool_regimes, spec.clip_alpha),
            None => return CellOut::failed(),
        },
    };
    match result {
        Ok(est) => CellOut::of(&est),
        Err(_) => CellOut::failed(),
    }
}

/// Generate, coarsen, estimate, and aggregate. The workhorse behind all
/// four commands: one truth value per effect lag, independent replicate
/// substreams, and sequential index-ordered aggregation.
fn run_cells<S: Scalar>(
    command: &str,
    config: &SweepConfig,
    omegas: &[usize],
    jobs: &[CellJob],
) -> Result<ExperimentReport<S>, HarnessError> {
    config.validate()?;
    let truth_root = derive_seed(config.root_seed, tag::TRUTH);
    let panel_root = derive_seed(config.root_seed, tag::PANEL);
    let fine_plan = config.plan.materialize(config.t_star)?;
    let grids: Vec<(usize, CoarseGrid, TreatmentRegime)> = config
        .deltas
        .iter()
        .map(|&delta| {
            let grid = coarse_indices(config.t_star, delta)
                .map_err(|e| HarnessError::Config(format!("bin width {delta}: {e}")))?;
            let plan = coarsen_regime(&fine_plan, &grid)
                .map_err(|e| HarnessError::Config(format!("bin width {delta}: {e}")))?;
            Ok((delta, grid, plan))
        })
        .collect::<Result<_, HarnessError>>()?;
    let needs_unpooled = jobs.iter().any(|j| match j.runner {
        Runner::Spec(s) => {
            !s.intercept_only_q && !s.pool_time && !matches!(s.method, Method::Ir)
        }
        Runner::NaiveMean => false,
    });
    let needs_pooled = jobs.iter().any(|j| match j.runner {
        Runner::Spec(s) => {
            !s.intercept_only_q && s.pool_time && !matches!(s.method, Method::Ir)
        }
        Runner::NaiveMean => false,
    });

    let mut truths = Vec::new();
    let mut raw: Vec<RawCell<S>> = Vec::new();
    for &omega in omegas {
        let mut params: DgpParams<S> = dgp::sample_params(config.dgp_seed);
        // The horizon must be in place before randomizing: the randomized
        // hazard intercept is calibrated to the number of decisions.
        params.horizon = config.t_star;
        params.effect_lag = omega;
        if !config.confounded {
            params = params.into_randomized();
        }
        let truth = dgp::truth_mc(
            &params,
            &fine_plan,
            config.truth_draws,
            derive_seed(truth_root, omega as u64),
        )
        .map_err(|e| HarnessError::Numeric(format!("truth oracle: {e}")))?;
        truths.push((omega, truth));

        let panel_base = derive_seed(panel_root, omega as u64);
        // Replicates are independent jobs; the indexed collect keeps the
        // aggregation order fixed for any worker count.
        let per_rep: Vec<Vec<Vec<CellOut<S>>>> = (0..config.replications)
            .into_par_iter()
            .map(|r| {
                let seed = derive_seed(panel_base, r as u64);
                let fine = match dgp::generate_panel(&params, config.n, seed) {
                    Ok(p) => p,
                    Err(_) => {
                        return vec![vec![CellOut::failed(); jobs.len()]; grids.len()];
                    }
                };
                grids
                    .iter()
                    .map(|(_, grid, plan)| {
                        let panel = match coarsen_panel(&fine, grid) {
                            Ok(p) => p,
                            Err(_) => return vec![CellOut::failed(); jobs.len()],
                        };
                        let unpooled = if needs_unpooled {
                            fit_propensity(&panel, false).ok()
                        } else {
                            None
                        };
                        let pooled = if needs_pooled {
                            fit_propensity(&panel, true).ok()
                        } else {
                            None
                        };
                        jobs.iter()
                            .map(|job| {
                                run_one_cell(
                                    &panel,
                                    plan,
                                    job.runner,
                                    unpooled.as_ref(),
                                    pooled.as_ref(),
                                )
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();

        for (di, (delta, _, _)) in grids.iter().enumerate() {
            for (ji, job) in jobs.iter().enumerate() {
                let mut cell = RawCell {
                    estimator: job.estimator.clone(),
                    variant: job.variant.clone(),
                    omega,
                    delta: *delta,
                    estimates: Vec::with_capacity(config.replications),
                    ess: Vec::with_capacity(config.replications),
                    any_fallback: Vec::with_capacity(config.replications),
                };
                for rep in &per_rep {
                    let out = rep[di][ji];
                    cell.estimates.push(out.psi);
                    cell.ess.push(out.ess);
                    cell.any_fallback.push(out.fallback);
                }
                raw.push(cell);
            }
        }
    }

    let rows = raw
        .iter()
        .map(|cell| {
            let truth = truths
                .iter()
                .find(|(w, _)| *w == cell.omega)
                .map(|(_, t)| t)
                .expect("truth computed per effect lag");
            let t_coarse = grids
                .iter()
                .find(|(d, _, _)| *d == cell.delta)
                .map(|(_, g, _)| g.len())
                .expect("grid built per bin width");
            summarize(cell, truth, t_coarse)
        })
        .collect();

    Ok(ExperimentReport {
        command: command.to_string(),
        config_echo: config.to_text(),
        truths,
        rows,
        raw,
    })
}

/// Collapse one raw cell into its report row.
fn summarize<S: Scalar>(
    cell: &RawCell<S>,
    truth: &TruthEstimate<S>,
    t_coarse: usize,
) -> ReportRow<S> {
    let defined: Vec<S> = cell.estimates.iter().copied().filter(|p| p.is_finite()).collect();
    let n_undefined = cell.estimates.len() - defined.len();
    let k = defined.len();
    let (bias, variance, mse, mc_se) = if k >= 2 {
        let kf = S::of_usize(k);
        let mut sum = S::zero();
        for &p in &defined {
            sum += p;
        }
        let mean = sum / kf;
        let mut ss = S::zero();
        let mut se = S::zero();
        for &p in &defined {
            let d = p - mean;
            ss += d * d;
            let e = p - truth.value;
            se += e * e;
        }
        let variance = ss / S::of_usize(k - 1);
        let mse = se / kf;
        let mc_se = (variance / kf + truth.mc_se * truth.mc_se).sqrt();
        (mean - truth.value, variance, mse, mc_se)
    } else {
        (S::nan(), S::nan(), S::nan(), S::nan())
    };
    let mut ess_sum = S::zero();
    let mut ess_n = 0usize;
    let mut fallbacks = 0usize;
    for ((&p, &e), &f) in cell.estimates.iter().zip(&cell.ess).zip(&cell.any_fallback) {
        if !p.is_finite() {
            continue;
        }
        if e.is_finite() {
            ess_sum += e;
            ess_n += 1;
        }
        if f {
            fallbacks += 1;
        }
    }
    let mean_ess = if ess_n > 0 { ess_sum / S::of_usize(ess_n) } else { S::nan() };
    let fallback_rate =
        if k > 0 { S::of_usize(fallbacks) / S::of_usize(k) } else { S::nan() };
    ReportRow {
        estimator: cell.estimator.clone(),
        variant: cell.variant.clone(),
        omega: cell.omega,
        delta: cell.delta,
        t_coarse,
        bias,
        abs_bias: bias.abs(),
        variance,
        mse,
        mc_se,
        mean_ess,
        fallback_rate,
        n_undefined,
    }
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

/// Bin-width sweep: every configured estimator on every configured bin
/// width, at the generator's one-step effect lag.
pub fn run_sweep<S: Scalar>(config: &SweepConfig) -> Result<ExperimentReport<S>, HarnessError> {
    let jobs: Vec<CellJob> = config.estimators.iter().map(|s| CellJob::of(*s)).collect();
    run_cells("sweep", config, &[1], &jobs)
}

/// Effect-delay sweep: the configured estimators over every (effect lag,
/// bin width) pair. Estimates stay near the truth while the bin width does
/// not exceed the lag; with a lag of 1 the cells reproduce [`run_sweep`]
/// exactly (same seeds, same draws).
pub fn run_effect_delay<S: Scalar>(
    config: &SweepConfig,
) -> Result<ExperimentReport<S>, HarnessError> {
    let jobs: Vec<CellJob> = config.estimators.iter().map(|s| CellJob::of(*s)).collect();
    let omegas = config.omegas.clone();
    run_cells("effect-delay", config, &omegas, &jobs)
}

/// Randomized-assignment sweep: like [`run_sweep`] but with the treatment
/// hazard blinded to the state (`confounded` is forced off), plus a
/// model-free follower-mean benchmark, which randomization makes unbiased
/// on the fine grid.
pub fn run_rct<S: Scalar>(config: &SweepConfig) -> Result<ExperimentReport<S>, HarnessError> {
    let mut config = config.clone();
    config.confounded = false;
    let mut jobs: Vec<CellJob> = config.estimators.iter().map(|s| CellJob::of(*s)).collect();
    jobs.push(CellJob::naive());
    run_cells("rct", &config, &[1], &jobs)
}

/// Variance-reduction comparison on the fine grid: per configured method, a
/// plain baseline next to weight clipping at each configured percentile,
/// pooled-time hazard fitting, and plan-pooled regression — each option on
/// the estimators it applies to.
pub fn run_varred<S: Scalar>(config: &SweepConfig) -> Result<ExperimentReport<S>, HarnessError> {
    let mut config = config.clone();
    config.deltas = vec![1];
    let mut jobs: Vec<CellJob> = Vec::new();
    for spec in &config.estimators {
        let method = spec.method;
        jobs.push(CellJob::of(EstimatorSpec::new(method)));
        let weights = matches!(method, Method::Ipw | Method::Tmle);
        let regressions = matches!(method, Method::Ir | Method::Tmle);
        if weights {
            for &alpha in &config.clip_alphas {
                let mut s = EstimatorSpec::new(method);
                s.clip_alpha = Some(alpha);
                jobs.push(CellJob::of(s));
            }
            let mut s = EstimatorSpec::new(method);
            s.pool_time = true;
            jobs.push(CellJob::of(s));
        }
        if regressions {
            let mut s = EstimatorSpec::new(method);
            s.pool_regimes = true;
            jobs.push(CellJob::of(s));
        }
    }
    run_cells("varred", &config, &[1], &jobs)
}
