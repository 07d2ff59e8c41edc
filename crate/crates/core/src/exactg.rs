//! Exact value computation on small discrete longitudinal processes.
//!
//! A [`DiscreteMdp`] is a finite-state, finite-horizon process with the
//! same shape as the simulated cohorts: state `L_t` realized first, then
//! an absorbing binary treatment decision `A_t` made with a state-dependent
//! hazard, a one-step Markov transition driven by the current treatment,
//! and a terminal outcome mean determined by the last state and treatment.
//!
//! Everything here is computed by exact forward dynamic programming over
//! joint (state, treatment) marginals — no sampling, no path enumeration
//! (except [`bias_bound`], whose whole point is enumerating deterministic
//! policies). The module answers four questions:
//!
//! * [`gform_uncoarsened`]: the exact mean outcome under a fully
//!   specified treatment plan on the fine time grid.
//! * [`gform_coarsened`]: what an analyst who only observes the process
//!   on a coarse grid identifies — per-bin transition kernels are the true
//!   conditional laws given bin-start state and treatment, with the
//!   behavioral hazard marginalized over the hidden interior steps.
//! * [`stochastic_policy_value`]: the same number reached along an
//!   entirely different route — the value of the policy that forces the
//!   plan at retained times and follows the behavioral hazard in between.
//!   The two agree to machine precision, which makes each a continuous
//!   cross-check of the other.
//! * [`bias_bound`]: brute-force extremes of the fine-grid value over all
//!   deterministic interior policies consistent with the plan at retained
//!   times. The coarse value is a mixture of those policy values, so the
//!   coarsening discrepancy always lands inside the returned interval.
//!
//! [`check_conditions`] reports the two structural conditions under which
//! coarsening is harmless: the coarse plan pins down the fine treatment
//! path, and interior treatments never move the bin-end state
//! distribution.
//!
//! [`population_panel`] converts the exact law into a finite panel with
//! frequency weights and indicator-coded states, so regression-based
//! estimators can be run on the population itself and compared against
//! the dynamic programs to ten digits.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::coarsen::{coarsen_regime, CoarseGrid, CoarsenError};
use crate::panel::{Panel, TreatmentRegime};
use crate::rng::substream;
use crate::scalar::Scalar;

/// Probability rows must sum to one within this tolerance.
pub const ROW_SUM_TOL: f64 = 1e-12;
/// Interior-treatment effects below this count as "no effect".
pub const INBIN_TOL: f64 = 1e-12;
/// When both coarsening conditions hold, the coarse and fine values must
/// agree within this tolerance.
pub const IMPLIED_EQ_TOL: f64 = 1e-10;
/// Ceiling on the number of deterministic policies [`bias_bound`] will
/// enumerate.
pub const POLICY_GUARD: u64 = 1_000_000;

#[derive(Debug, Error)]
pub enum ExactError {
    #[error("invalid process: {0}")]
    Invalid(String),
    #[error("plan must be fully specified on the fine grid")]
    PlanNotFullySpecified,
    #[error("plan horizon {plan} does not match process horizon {mdp}")]
    HorizonMismatch { plan: usize, mdp: usize },
    #[error("grid incompatible with process or plan: {0}")]
    Grid(#[from] CoarsenError),
    #[error("{policies} deterministic policies exceed the enumeration ceiling of {POLICY_GUARD}")]
    TooManyPolicies { policies: u128 },
    #[error("enumeration of {paths} trajectories exceeds the ceiling of {ceiling}")]
    TooManyPaths { paths: u128, ceiling: u128 },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("process file {path}, line {line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
}

/// Finite-state, finite-horizon longitudinal process with an absorbing
/// binary treatment.
///
/// Per time point `t = 0..horizon−1`: the state is realized, then (if
/// still untreated) treatment initiates with probability
/// `behavior[t][state]`; the transition to the next state depends on the
/// current treatment. The outcome mean depends on the final state and
/// final treatment.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMdp<S> {
    horizon: usize,
    n_states: usize,
    state_names: Vec<String>,
    /// `P(L_0 = s)`, length `n_states`.
    initial: Vec<S>,
    /// `P(L_{t+1} = s' | A_t = a, L_t = s)` at
    /// `[((t·2 + a)·n + s)·n + s']`, for `t = 0..horizon−1`.
    transition: Vec<S>,
    /// `P(A_t = 1 | A_{t−1} = 0, L_t = s)` at `[t·n + s]`.
    behavior: Vec<S>,
    /// `E[Y | A_last = a, L_last = s]` at `[a·n + s]`.
    outcome: Vec<S>,
}

impl<S: Scalar> DiscreteMdp<S> {
    pub fn new(
        horizon: usize,
        state_names: Vec<String>,
        initial: Vec<S>,
        transition: Vec<S>,
        behavior: Vec<S>,
        outcome: Vec<S>,
    ) -> Result<Self, ExactError> {
        let n = state_names.len();
        let bad = |msg: String| Err(ExactError::Invalid(msg));
        if horizon == 0 {
            return bad("horizon must be at least 1".into());
        }
        if n == 0 {
            return bad("at least one state required".into());
        }
        for (i, name) in state_names.iter().enumerate() {
            if name.is_empty() || name.chars().any(char::is_whitespace) {
                return bad(format!("state name {i} must be non-empty without whitespace"));
            }
            if state_names[..i].contains(name) {
                return bad(format!("duplicate state name `{name}`"));
            }
        }
        if initial.len() != n {
            return bad(format!("initial distribution needs {n} entries"));
        }
        let steps = horizon - 1;
        if transition.len() != steps * 2 * n * n {
            return bad(format!(
                "transition table needs {} entries, got {}",
                steps * 2 * n * n,
                transition.len()
            ));
        }
        if behavior.len() != horizon * n {
            return bad(format!("behavior table needs {} entries", horizon * n));
        }
        if outcome.len() != 2 * n {
            return bad(format!("outcome table needs {} entries", 2 * n));
        }
        let check_prob_row = |row: &[S], what: &str| -> Result<(), ExactError> {
            let mut sum = S::zero();
            for &p in row {
                if !(p >= S::zero() && p <= S::one()) {
                    return Err(ExactError::Invalid(format!(
                        "{what}: probability {p} outside [0, 1]"
                    )));
                }
                sum += p;
            }
            if (sum - S::one()).abs().as_f64() > ROW_SUM_TOL {
                return Err(ExactError::Invalid(format!("{what}: row sums to {sum}")));
            }
            Ok(())
        };
        check_prob_row(&initial, "initial distribution")?;
        for t in 0..steps {
            for a in 0..2 {
                for s in 0..n {
                    let base = ((t * 2 + a) * n + s) * n;
                    check_prob_row(
                        &transition[base..base + n],
                        &format!("transition step {t} a={a} from state {s}"),
                    )?;
                }
            }
        }
        for (i, &p) in behavior.iter().enumerate() {
            if !(p >= S::zero() && p <= S::one()) {
                return bad(format!("behavior entry {i}: probability {p} outside [0, 1]"));
            }
        }
        for (i, &y) in outcome.iter().enumerate() {
            if !y.is_finite() {
                return bad(format!("outcome entry {i} is not finite"));
            }
        }
        Ok(Self {
            horizon,
            n_states: n,
            state_names,
            initial,
            transition,
            behavior,
            outcome,
        })
    }

    /// Build a process whose transition and behavior tables are the same
    /// at every time point.
    pub fn time_constant(
        horizon: usize,
        state_names: Vec<String>,
        initial: Vec<S>,
        transition_step: Vec<S>, // 2 × n × n
        behavior_step: Vec<S>,   // n
        outcome: Vec<S>,         // 2 × n
    ) -> Result<Self, ExactError> {
        let n = state_names.len();
        if transition_step.len() != 2 * n * n || behavior_step.len() != n {
            return Err(ExactError::Invalid(
                "time-constant tables have the wrong size".into(),
            ));
        }
        let steps = horizon.saturating_sub(1);
        let mut transition = Vec::with_capacity(steps * 2 * n * n);
        for _ in 0..steps {
            transition.extend_from_slice(&transition_step);
        }
        let mut behavior = Vec::with_capacity(horizon * n);
        for _ in 0..horizon {
            behavior.extend_from_slice(&behavior_step);
        }
        Self::new(horizon, state_names, initial, transition, behavior, outcome)
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn state_names(&self) -> &[String] {
        &self.state_names
    }

    pub fn initial(&self) -> &[S] {
        &self.initial
    }

    /// `P(L_{t+1} = · | A_t = a, L_t = s)`.
    pub fn transition_row(&self, t: usize, a: u8, s: usize) -> &[S] {
        let base = ((t * 2 + a as usize) * self.n_states + s) * self.n_states;
        &self.transition[base..base + self.n_states]
    }

    /// `P(A_t = 1 | A_{t−1} = 0, L_t = s)`.
    pub fn behavior_prob(&self, t: usize, s: usize) -> S {
        self.behavior[t * self.n_states + s]
    }

    /// `E[Y | A_last = a, L_last = s]`.
    pub fn outcome_mean(&self, a: u8, s: usize) -> S {
        self.outcome[a as usize * self.n_states + s]
    }

    fn check_plan(&self, regime: &TreatmentRegime) -> Result<(), ExactError> {
        if regime.horizon() != self.horizon {
            return Err(ExactError::HorizonMismatch {
                plan: regime.horizon(),
                mdp: self.horizon,
            });
        }
        if !regime.fully_specified() {
            return Err(ExactError::PlanNotFullySpecified);
        }
        Ok(())
    }

    fn check_grid(&self, grid: &CoarseGrid) -> Result<(), ExactError> {
        if grid.fine_horizon() != self.horizon {
            return Err(ExactError::Invalid(format!(
                "grid is for horizon {}, process has {}",
                grid.fine_horizon(),
                self.horizon
            )));
        }
        Ok(())
    }

    /// Mean outcome when the treatment decision at `(t, state,
    /// previous treatment)` initiates with probability `prob1(..)`.
    /// Forward pass over the joint (state, treatment) distribution; every
    /// operation on this path is shared by all public values, so
    /// cross-checks below exercise genuinely independent reformulations.
    fn policy_value(&self, prob1: impl Fn(usize, usize, u8) -> S) -> S {
        let n = self.n_states;
        // mu[s] = P(L_t = s, A_t = 0); mu[n + s] = P(L_t = s, A_t = 1),
        // both after the time-t decision.
        let mut mu = vec![S::zero(); 2 * n];
        for s in 0..n {
            let p = prob1(0, s, 0);
            mu[n + s] = self.initial[s] * p;
            mu[s] = self.initial[s] * (S::one() - p);
        }
        let mut nu = vec![S::zero(); 2 * n];
        for t in 0..self.horizon - 1 {
            nu.iter_mut().for_each(|x| *x = S::zero());
            for a in 0..2usize {
                for s in 0..n {
                    let m = mu[a * n + s];
                    if m == S::zero() {
                        continue;
                    }
                    let row = self.transition_row(t, a as u8, s);
                    for (sp, &p) in row.iter().enumerate() {
                        nu[a * n + sp] += m * p;
                    }
                }
            }
            for s in 0..n {
                let p0 = prob1(t + 1, s, 0);
                let p1 = prob1(t + 1, s, 1);
                mu[n + s] = nu[s] * p0 + nu[n + s] * p1;
                mu[s] = nu[s] * (S::one() - p0) + nu[n + s] * (S::one() - p1);
            }
        }
        let mut value = S::zero();
        for a in 0..2u8 {
            for s in 0..n {
                value += mu[a as usize * n + s] * self.outcome_mean(a, s);
            }
        }
        value
    }

    /// Distribution of the bin-end state given the bin-start state, with
    /// treatment forced to `a_start` at the bin start and following the
    /// behavioral hazard at interior times. Row-major `n × n`:
    /// `kernel[s·n + s']`.
    fn bin_kernel(&self, start: usize, end: usize, a_start: u8) -> Vec<S> {
        let n = self.n_states;
        let mut kernel = vec![S::zero(); n * n];
        let mut mu = vec![S::zero(); 2 * n];
        let mut nu = vec![S::zero(); 2 * n];
        for s0 in 0..n {
            mu.iter_mut().for_each(|x| *x = S::zero());
            mu[a_start as usize * n + s0] = S::one();
            for t in start..end {
                nu.iter_mut().for_each(|x| *x = S::zero());
                for a in 0..2usize {
                    for s in 0..n {
                        let m = mu[a * n + s];
                        if m == S::zero() {
                            continue;
                        }
                        let row = self.transition_row(t, a as u8, s);
                        for (sp, &p) in row.iter().enumerate() {
                            nu[a * n + sp] += m * p;
                        }
                    }
                }
                if t + 1 < end {
                    // Interior decision: untreated subjects initiate with
                    // the behavioral hazard; treatment is absorbing.
                    for s in 0..n {
                        let p = self.behavior_prob(t + 1, s);
                        mu[n + s] = nu[n + s] + nu[s] * p;
                        mu[s] = nu[s] * (S::one() - p);
                    }
                } else {
                    mu.copy_from_slice(&nu);
                }
            }
            for sp in 0..n {
                kernel[s0 * n + sp] = mu[sp] + mu[n + sp];
            }
        }
        kernel
    }
}

/// Exact mean outcome under a fully specified fine-grid treatment plan.
pub fn gform_uncoarsened<S: Scalar>(
    mdp: &DiscreteMdp<S>,
    regime: &TreatmentRegime,
) -> Result<S, ExactError> {
    mdp.check_plan(regime)?;
    let forced: Vec<S> = (0..mdp.horizon)
        .map(|t| S::of_usize(regime.value_at(t).unwrap() as usize))
        .collect();
    Ok(mdp.policy_value(|t, _s, _ap| forced[t]))
}

/// The value identified on the coarse grid: per-bin transition kernels
/// are the true conditional laws of the bin-end state given the bin-start
/// state and treatment (behavioral hazard marginalized over interior
/// steps), composed by the g-formula on the coarse grid. This is the
/// probability limit of regression-based estimation on coarsened data.
///
/// `regime` is the fine-grid plan; its initiation time must land on a
/// retained index.
pub fn gform_coarsened<S: Scalar>(
    mdp: &DiscreteMdp<S>,
    regime: &TreatmentRegime,
    grid: &CoarseGrid,
) -> Result<S, ExactError> {
    mdp.check_plan(regime)?;
    mdp.check_grid(grid)?;
    let coarse = coarsen_regime(regime, grid)?;
    let idx = grid.indices();
    let k = idx.len();
    let n = mdp.n_states;
    // Backward: v[s] = expected outcome from coarse point j in state s.
    let last = coarse.value_at(k - 1).unwrap();
    let mut v: Vec<S> = (0..n).map(|s| mdp.outcome_mean(last, s)).collect();
    for j in (0..k - 1).rev() {
        let a = coarse.value_at(j).unwrap();
        let kernel = mdp.bin_kernel(idx[j], idx[j + 1], a);
        let mut next = vec![S::zero(); n];
        for s in 0..n {
            let mut acc = S::zero();
            for sp in 0..n {
                acc += kernel[s * n + sp] * v[sp];
            }
            next[s] = acc;
        }
        v = next;
    }
    let psi = mdp
        .initial
        .iter()
        .zip(&v)
        .fold(S::zero(), |acc, (&p0, &vs)| acc + p0 * vs);
    Ok(psi)
}

/// Mean outcome of the mixed policy that forces the plan's value at
/// retained times and follows the behavioral hazard elsewhere, evaluated
/// in a single fine-grid forward pass. Equals [`gform_coarsened`] (the
/// coarse value *is* this policy's value) to machine precision but shares
/// none of its bin-kernel code.
pub fn stochastic_policy_value<S: Scalar>(
    mdp: &DiscreteMdp<S>,
    regime: &TreatmentRegime,
    grid: &CoarseGrid,
) -> Result<S, ExactError> {
    mdp.check_plan(regime)?;
    mdp.check_grid(grid)?;
    // Validates plan/grid compatibility exactly as the coarse route does.
    coarsen_regime(regime, grid)?;
    let forced: Vec<Option<S>> = (0..mdp.horizon)
        .map(|t| {
            grid.retains(t)
                .then(|| S::of_usize(regime.value_at(t).unwrap() as usize))
        })
        .collect();
    Ok(mdp.policy_value(|t, s, a_prev| match forced[t] {
        Some(f) => f,
        None if a_prev == 1 => S::one(),
        None => mdp.behavior_prob(t, s),
    }))
}

/// Extremes of `E[Y(plan)] − E[Y(d)]` over every deterministic interior
/// policy `d` (a map from non-retained time and state to initiate/wait,
/// with treatment absorbing and the plan forced at retained times).
///
/// The coarse value is a convex mixture of the `E[Y(d)]` — the policy
/// value is multilinear in the per-(time, state) initiation probabilities
/// — so `gform_uncoarsened − gform_coarsened` always lies in the returned
/// interval, and its width bounds the coarsening bias. Enumeration cost
/// is `2^(free_times × states)`, guarded at [`POLICY_GUARD`].
pub fn bias_bound<S: Scalar>(
    mdp: &DiscreteMdp<S>,
    regime: &TreatmentRegime,
    grid: &CoarseGrid,
) -> Result<(S, S), ExactError> {
    mdp.check_plan(regime)?;
    mdp.check_grid(grid)?;
    coarsen_regime(regime, grid)?;
    let n = mdp.n_states;
    // Bit position of each free (time, state) decision.
    let mut slot = vec![usize::MAX; mdp.horizon];
    let mut n_free_times = 0usize;
    for (t, sl) in slot.iter_mut().enumerate() {
        if !grid.retains(t) {
            *sl = n_free_times;
            n_free_times += 1;
        }
    }
    let bits = n_free_times * n;
    if bits >= 64 || (1u64 << bits) > POLICY_GUARD {
        return Err(ExactError::TooManyPolicies {
            policies: 1u128.checked_shl(bits as u32).unwrap_or(u128::MAX),
        });
    }
    let forced: Vec<S> = (0..mdp.horizon)
        .map(|t| S::of_usize(regime.value_at(t).unwrap() as usize))
        .collect();
    let psi_plan = mdp.policy_value(|t, _s, _ap| forced[t]);
    let mut lo = S::infinity();
    let mut hi = S::neg_infinity();
    for mask in 0..(1u64 << bits) {
        let value = mdp.policy_value(|t, s, a_prev| {
            if slot[t] == usize::MAX {
                forced[t]
            } else if a_prev == 1 {
                S::one()
            } else {
                S::of_usize(((mask >> (slot[t] * n + s)) & 1) as usize)
            }
        });
        let diff = psi_plan - value;
        if diff < lo {
            lo = diff;
        }
        if diff > hi {
            hi = diff;
        }
    }
    Ok((lo, hi))
}

/// Per-bin detail from [`check_conditions`].
#[derive(Debug, Clone)]
pub struct BinReport<S> {
    /// Fine indices delimiting the bin (both retained).
    pub start: usize,
    pub end: usize,
    /// Treatment the plan forces at the bin start.
    pub forced: u8,
    /// Largest absolute change in any bin-end state probability across
    /// the possible interior initiation times.
    pub max_effect: S,
}

/// Outcome of [`check_conditions`].
#[derive(Debug, Clone)]
pub struct ConditionsReport<S> {
    /// The coarse plan determines the fine treatment path (the plan is
    /// constant, initiates at the first point, or its initiation bin has
    /// width one).
    pub prefix_determined: bool,
    /// No interior initiation time moves any bin-end state distribution
    /// by more than [`INBIN_TOL`].
    pub no_inbin_effect: bool,
    pub max_inbin_effect: S,
    pub per_bin: Vec<BinReport<S>>,
    pub coarsened: S,
    pub uncoarsened: S,
    /// Both conditions hold, so the two values above must agree within
    /// [`IMPLIED_EQ_TOL`].
    pub equality_implied: bool,
    /// `Some(true/false)` when implied; `None` otherwise.
    pub equality_holds: Option<bool>,
}

/// Evaluate the two structural conditions under which coarsening leaves
/// the identified value unchanged, and both values themselves.
pub fn check_conditions<S: Scalar>(
    mdp: &DiscreteMdp<S>,
    regime: &TreatmentRegime,
    grid: &CoarseGrid,
) -> Result<ConditionsReport<S>, ExactError> {
    mdp.check_plan(regime)?;
    mdp.check_grid(grid)?;
    let coarse = coarsen_regime(regime, grid)?;
    let idx = grid.indices();
    let n = mdp.n_states;

    // Condition (i): the coarse observations pin the fine path. Treatment
    // is absorbing, so ambiguity only arises inside the bin where the
    // plan flips on.
    let prefix_determined = match coarse.jump_index() {
        None | Some(0) => true,
        Some(j) => idx[j] - idx[j - 1] == 1,
    };

    // Condition (ii): within each bin, the initiation time (across every
    // monotone interior assignment, including "never") must not move the
    // bin-end state distribution. Treatment paths inside a bin are
    // exactly these monotone sequences, so the comparison is exhaustive.
    let mut per_bin = Vec::with_capacity(idx.len().saturating_sub(1));
    let mut max_inbin_effect = S::zero();
    for j in 0..idx.len() - 1 {
        let (start, end) = (idx[j], idx[j + 1]);
        let forced = coarse.value_at(j).unwrap();
        let width = end - start;
        let mut max_effect = S::zero();
        if forced == 0 && width > 1 {
            for s0 in 0..n {
                // switch = offset of the first treated transition source;
                // `width` means the treatment never turns on in this bin.
                let reference = inbin_end_dist(mdp, start, end, s0, width);
                for switch in 1..width {
                    let alt = inbin_end_dist(mdp, start, end, s0, switch);
                    for (a, b) in alt.iter().zip(&reference) {
                        let d = (*a - *b).abs();
                        if d > max_effect {
                            max_effect = d;
                        }
                    }
                }
            }
        }
        if max_effect > max_inbin_effect {
            max_inbin_effect = max_effect;
        }
        per_bin.push(BinReport {
            start,
            end,
            forced,
            max_effect,
        });
    }
    let no_inbin_effect = max_inbin_effect.as_f64() <= INBIN_TOL;

    let coarsened = gform_coarsened(mdp, regime, grid)?;
    let uncoarsened = gform_uncoarsened(mdp, regime)?;
    let equality_implied = prefix_determined && no_inbin_effect;
    let equality_holds = equality_implied
        .then(|| (coarsened - uncoarsened).abs().as_f64() <= IMPLIED_EQ_TOL);
    debug_assert!(
        equality_holds != Some(false),
        "conditions hold but coarse {coarsened} != fine {uncoarsened}"
    );
    Ok(ConditionsReport {
        prefix_determined,
        no_inbin_effect,
        max_inbin_effect,
        per_bin,
        coarsened,
        uncoarsened,
        equality_implied,
        equality_holds,
    })
}

/// Bin-end state distribution from `s0` when treatment turns on at
/// interior offset `switch` (transition sources `start + switch` onward;
/// `switch == end − start` means it never turns on). The bin-start source
/// uses the untreated table — callers only explore bins forced to 0.
fn inbin_end_dist<S: Scalar>(
    mdp: &DiscreteMdp<S>,
    start: usize,
    end: usize,
    s0: usize,
    switch: usize,
) -> Vec<S> {
    let n = mdp.n_states;
    let mut d = vec![S::zero(); n];
    d[s0] = S::one();
    for t in start..end {
        let a = u8::from(t - start >= switch);
        let mut next = vec![S::zero(); n];
        for (s, &ds) in d.iter().enumerate() {
            if ds == S::zero() {
                continue;
            }
            let row = mdp.transition_row(t, a, s);
            for (sp, &p) in row.iter().enumerate() {
                next[sp] += ds * p;
            }
        }
        d = next;
    }
    d
}

/// Ceiling on the number of trajectories [`population_panel`] will
/// enumerate.
pub const PATH_GUARD: u128 = 4_000_000;

/// The exact observational law as a finite coarse panel.
///
/// Every fine (state, treatment) trajectory with positive probability is
/// enumerated, projected onto the retained indices, and merged with equal
/// projections; the row weight is the total probability mass. States are
/// indicator-coded (state `s > 0` sets feature column `s − 1`, state 0 is
/// the reference), so an intercept plus the state columns is a saturated
/// regression design. Outcomes carry the exact conditional mean — the
/// panel holds the population law, free of sampling and outcome noise.
pub fn population_panel<S: Scalar>(
    mdp: &DiscreteMdp<S>,
    grid: &CoarseGrid,
) -> Result<Panel<S>, ExactError> {
    mdp.check_grid(grid)?;
    let n = mdp.n_states;
    let paths = (2 * n as u128).checked_pow(mdp.horizon as u32);
    match paths {
        Some(p) if p <= PATH_GUARD => {}
        _ => {
            return Err(ExactError::TooManyPaths {
                paths: paths.unwrap_or(u128::MAX),
                ceiling: PATH_GUARD,
            })
        }
    }

    // Depth-first walk over (state, decision, transition) choices,
    // accumulating the coarse projection of each trajectory. BTreeMap
    // keys give a deterministic row order.
    let mut rows: PathRows<S> = BTreeMap::new();
    let k = grid.indices().len();
    let mut coarse_l = vec![0u8; k];
    let mut coarse_a = vec![0u8; k];
    let mut coarse_pos = vec![usize::MAX; mdp.horizon];
    for (j, &t) in grid.indices().iter().enumerate() {
        coarse_pos[t] = j;
    }

    // One frame per realized (time, state, treatment) node.
    struct Frame<S> {
        t: usize,
        s: usize,
        a: u8,
        p: S,
    }
    let mut roots: Vec<Frame<S>> = Vec::new();
    for s in 0..n {
        let p0 = mdp.initial[s];
        if p0 == S::zero() {
            continue;
        }
        let hazard = mdp.behavior_prob(0, s);
        if hazard < S::one() {
            roots.push(Frame {
                t: 0,
                s,
                a: 0,
                p: p0 * (S::one() - hazard),
            });
        }
        if hazard > S::zero() {
            roots.push(Frame {
                t: 0,
                s,
                a: 1,
                p: p0 * hazard,
            });
        }
    }
    // Accumulated (probability mass, outcome) per distinct coarse
    // (state path, treatment path); BTreeMap so emission order is stable.
    type PathRows<S> = BTreeMap<(Vec<u8>, Vec<u8>), (S, S)>;
    // Depth-first recursion shares the coarse scratch vectors: a frame
    // overwrites its own time slot before descending, and ancestors'
    // slots stay valid until the leaf (the last retained time) reads
    // the completed projection.
    fn walk<S: Scalar>(
        mdp: &DiscreteMdp<S>,
        frame: &Frame<S>,
        coarse_pos: &[usize],
        coarse_l: &mut [u8],
        coarse_a: &mut [u8],
        rows: &mut PathRows<S>,
    ) {
        let Frame { t, s, a, p } = *frame;
        if let Some(j) = coarse_pos.get(t).copied().filter(|&j| j != usize::MAX) {
            coarse_l[j] = s as u8;
            coarse_a[j] = a;
        }
        if t == mdp.horizon() - 1 {
            let y = mdp.outcome_mean(a, s);
            let entry = rows
                .entry((coarse_l.to_vec(), coarse_a.to_vec()))
                .or_insert((S::zero(), y));
            entry.0 += p;
            return;
        }
        let row = mdp.transition_row(t, a, s);
        for (sp, &pt) in row.iter().enumerate() {
            if pt == S::zero() {
                continue;
            }
            let branch = |a_next: u8, q: S| Frame {
                t: t + 1,
                s: sp,
                a: a_next,
                p: p * pt * q,
            };
            if a == 1 {
                walk(mdp, &branch(1, S::one()), coarse_pos, coarse_l, coarse_a, rows);
            } else {
                let hazard = mdp.behavior_prob(t + 1, sp);
                if hazard < S::one() {
                    walk(
                        mdp,
                        &branch(0, S::one() - hazard),
                        coarse_pos,
                        coarse_l,
                        coarse_a,
                        rows,
                    );
                }
                if hazard > S::zero() {
                    walk(mdp, &branch(1, hazard), coarse_pos, coarse_l, coarse_a, rows);
                }
            }
        }
    }
    for frame in &roots {
        walk(mdp, frame, &coarse_pos, &mut coarse_l, &mut coarse_a, &mut rows);
    }

    let n_rows = rows.len();
    let l_dim = n - 1;
    let mut l = Vec::with_capacity(n_rows * k * l_dim);
    let mut a = Vec::with_capacity(n_rows * k);
    let mut y = Vec::with_capacity(n_rows);
    let mut w = Vec::with_capacity(n_rows);
    for ((ls, az), (weight, yv)) in rows {
        for &state in &ls {
            for c in 1..n {
                l.push(if state as usize == c { S::one() } else { S::zero() });
            }
        }
        a.extend_from_slice(&az);
        y.push(yv);
        w.push(weight);
    }
    let panel = Panel::new(n_rows, k, 0, l_dim, Vec::new(), l, a, y, None, None, Some(w))
        .map_err(|e| ExactError::Invalid(format!("population panel: {e}")))?;
    Ok(panel.with_delta(grid.delta()))
}

/// Draw an observational cohort of `n` subjects from the process and
/// project it onto the coarse grid. States are indicator-coded as in
/// [`population_panel`]; outcomes carry the exact conditional mean given
/// the path end, so all variability is in the trajectories.
pub fn sample_panel<S: Scalar>(
    mdp: &DiscreteMdp<S>,
    grid: &CoarseGrid,
    n: usize,
    seed: u64,
) -> Result<Panel<S>, ExactError> {
    mdp.check_grid(grid)?;
    let ns = mdp.n_states;
    let k = grid.indices().len();
    let l_dim = ns - 1;
    let mut l = Vec::with_capacity(n * k * l_dim);
    let mut a = Vec::with_capacity(n * k);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = substream(seed, i as u64);
        let mut s = draw_from(&mdp.initial, &mut rng);
        let mut treated = S::unit_uniform(&mut rng) < mdp.behavior_prob(0, s);
        for t in 0..mdp.horizon {
            if t > 0 {
                let a_cur = u8::from(treated);
                s = draw_from(mdp.transition_row(t - 1, a_cur, s), &mut rng);
                let u = S::unit_uniform(&mut rng);
                if !treated {
                    treated = u < mdp.behavior_prob(t, s);
                }
            }
            if grid.retains(t) {
                for c in 1..ns {
                    l.push(if s == c { S::one() } else { S::zero() });
                }
                a.push(u8::from(treated));
            }
        }
        y.push(mdp.outcome_mean(u8::from(treated), s));
    }
    let panel = Panel::new(n, k, 0, l_dim, Vec::new(), l, a, y, None, None, None)
        .map_err(|e| ExactError::Invalid(format!("sampled panel: {e}")))?;
    Ok(panel.with_delta(grid.delta()))
}

/// Monte Carlo mean outcome under a forced fine-grid plan — a sampling
/// cross-check of [`gform_uncoarsened`]. Returns the mean and its
/// standard error.
pub fn sample_value_mc<S: Scalar>(
    mdp: &DiscreteMdp<S>,
    regime: &TreatmentRegime,
    m: usize,
    seed: u64,
) -> Result<(S, S), ExactError> {
    mdp.check_plan(regime)?;
    if m < 2 {
        return Err(ExactError::Invalid("need at least two draws".into()));
    }
    let mut ss = S::zero();
    let mut mean = S::zero();
    let mut count = S::zero();
    for i in 0..m {
        let mut rng = substream(seed, i as u64);
        let mut s = draw_from(&mdp.initial, &mut rng);
        for t in 1..mdp.horizon {
            let a = regime.value_at(t - 1).unwrap();
            s = draw_from(mdp.transition_row(t - 1, a, s), &mut rng);
        }
        let yv = mdp.outcome_mean(regime.value_at(mdp.horizon - 1).unwrap(), s);
        // Welford accumulation, sequential and order-fixed.
        count += S::one();
        let d = yv - mean;
        mean += d / count;
        ss += d * (yv - mean);
    }
    let var = ss / (count - S::one());
    Ok((mean, (var / count).sqrt()))
}

fn draw_from<S: Scalar, R: rand::Rng>(probs: &[S], rng: &mut R) -> usize {
    let u = S::unit_uniform(rng);
    let mut acc = S::zero();
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

// ---------------------------------------------------------------------------
// Plain-text process description files.
//
// Grammar (one directive per line, `#` starts a comment, times are
// 1-based as in the panel CSVs):
//
//   horizon <T>
//   states <name> <name> ...
//   initial <p> ... <p>                      (one per state)
//   transition <t|*> <a> <from> <p> ... <p>  (t in 1..T−1, source time)
//   behavior <t|*> <state> <p>               (t in 1..T)
//   outcome <a> <state> <y>
//
// `*` applies to every time; lines naming a specific time override `*`
// regardless of file order. Within the same specificity the last line
// wins.

impl<S: Scalar> DiscreteMdp<S> {
    /// Serialize to the plain-text format (explicit per-time lines, so
    /// parsing the output reproduces the process bit for bit).
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "horizon {}", self.horizon);
        let _ = writeln!(out, "states {}", self.state_names.join(" "));
        let probs = |row: &[S]| {
            row.iter()
                .map(|p| format!("{p}"))
                .collect::<Vec<_>>()
                .join(" ")
        };
        let _ = writeln!(out, "initial {}", probs(&self.initial));
        for t in 0..self.horizon - 1 {
            for a in 0..2u8 {
                for s in 0..self.n_states {
                    let _ = writeln!(
                        out,
                        "transition {} {} {} {}",
                        t + 1,
                        a,
                        self.state_names[s],
                        probs(self.transition_row(t, a, s))
                    );
                }
            }
        }
        for t in 0..self.horizon {
            for s in 0..self.n_states {
                let _ = writeln!(
                    out,
                    "behavior {} {} {}",
                    t + 1,
                    self.state_names[s],
                    self.behavior_prob(t, s)
                );
            }
        }
        for a in 0..2u8 {
            for s in 0..self.n_states {
                let _ = writeln!(
                    out,
                    "outcome {} {} {}",
                    a,
                    self.state_names[s],
                    self.outcome_mean(a, s)
                );
            }
        }
        out
    }

    pub fn write_text(&self, path: &Path) -> Result<(), ExactError> {
        std::fs::write(path, self.to_text()).map_err(|e| ExactError::Io {
            path: path.display().to_string(),
            source: e,
        })
    }

    pub fn parse_text(text: &str, origin: &str) -> Result<Self, ExactError> {
        let err = |line: usize, msg: String| ExactError::Parse {
            path: origin.to_string(),
            line,
            msg,
        };
        let mut horizon: Option<usize> = None;
        let mut names: Vec<String> = Vec::new();
        let mut initial_raw: Option<(usize, Vec<f64>)> = None;
        // (line, time-or-star, a, state, values)
        type RawTransition = (usize, Option<usize>, u8, usize, Vec<f64>);
        let mut transitions: Vec<RawTransition> = Vec::new();
        let mut behaviors: Vec<(usize, Option<usize>, usize, f64)> = Vec::new();
        let mut outcomes: Vec<(usize, u8, usize, f64)> = Vec::new();

        for (li, raw) in text.lines().enumerate() {
            let line_no = li + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let head = parts.next().unwrap();
            let rest: Vec<&str> = parts.collect();
            let state_index = |tok: &str, names: &[String]| -> Result<usize, ExactError> {
                names
                    .iter()
                    .position(|s| s == tok)
                    .ok_or_else(|| err(line_no, format!("unknown state `{tok}`")))
            };
            let parse_f = |tok: &str| -> Result<f64, ExactError> {
                tok.parse::<f64>()
                    .map_err(|_| err(line_no, format!("bad number `{tok}`")))
            };
            let parse_time = |tok: &str, max: usize| -> Result<Option<usize>, ExactError> {
                if tok == "*" {
                    return Ok(None);
                }
                let t: usize = tok
                    .parse()
                    .map_err(|_| err(line_no, format!("bad time `{tok}`")))?;
                if t == 0 || t > max {
                    return Err(err(line_no, format!("time {t} outside 1..={max}")));
                }
                Ok(Some(t - 1))
            };
            let parse_a = |tok: &str| -> Result<u8, ExactError> {
                match tok {
                    "0" => Ok(0),
                    "1" => Ok(1),
                    _ => Err(err(line_no, format!("treatment must be 0 or 1, got `{tok}`"))),
                }
            };
            match head {
                "horizon" => {
                    if rest.len() != 1 {
                        return Err(err(line_no, "horizon takes one integer".into()));
                    }
                    horizon = Some(
                        rest[0]
                            .parse()
                            .map_err(|_| err(line_no, format!("bad horizon `{}`", rest[0])))?,
                    );
                }
                "states" => {
                    if rest.is_empty() {
                        return Err(err(line_no, "states needs at least one label".into()));
                    }
                    names = rest.iter().map(|s| s.to_string()).collect();
                }
                "initial" => {
                    let vals = rest.iter().map(|t| parse_f(t)).collect::<Result<_, _>>()?;
                    initial_raw = Some((line_no, vals));
                }
                "transition" => {
                    let h = horizon.ok_or_else(|| err(line_no, "horizon must come first".into()))?;
                    if names.is_empty() {
                        return Err(err(line_no, "states must come first".into()));
                    }
                    if rest.len() != 3 + names.len() {
                        return Err(err(
                            line_no,
                            format!("transition needs time, treatment, state, {} probabilities", names.len()),
                        ));
                    }
                    if h < 2 {
                        return Err(err(line_no, "no transitions on a one-point horizon".into()));
                    }
                    let t = parse_time(rest[0], h - 1)?;
                    let a = parse_a(rest[1])?;
                    let s = state_index(rest[2], &names)?;
                    let vals = rest[3..].iter().map(|t| parse_f(t)).collect::<Result<_, _>>()?;
                    transitions.push((line_no, t, a, s, vals));
                }
                "behavior" => {
                    let h = horizon.ok_or_else(|| err(line_no, "horizon must come first".into()))?;
                    if names.is_empty() {
                        return Err(err(line_no, "states must come first".into()));
                    }
                    if rest.len() != 3 {
                        return Err(err(line_no, "behavior needs time, state, probability".into()));
                    }
                    let t = parse_time(rest[0], h)?;
                    let s = state_index(rest[1], &names)?;
                    behaviors.push((line_no, t, s, parse_f(rest[2])?));
                }
                "outcome" => {
                    if names.is_empty() {
                        return Err(err(line_no, "states must come first".into()));
                    }
                    if rest.len() != 3 {
                        return Err(err(line_no, "outcome needs treatment, state, value".into()));
                    }
                    let a = parse_a(rest[0])?;
                    let s = state_index(rest[1], &names)?;
                    outcomes.push((line_no, a, s, parse_f(rest[2])?));
                }
                other => return Err(err(line_no, format!("unknown directive `{other}`"))),
            }
        }

        let horizon = horizon.ok_or_else(|| err(0, "missing `horizon` line".into()))?;
        if names.is_empty() {
            return Err(err(0, "missing `states` line".into()));
        }
        let n = names.len();
        let (iline, ivals) = initial_raw.ok_or_else(|| err(0, "missing `initial` line".into()))?;
        if ivals.len() != n {
            return Err(err(iline, format!("initial needs {n} probabilities")));
        }

        let nan = f64::NAN;
        let steps = horizon - 1;
        let mut transition = vec![nan; steps * 2 * n * n];
        // Star rows first, then specific rows, preserving line order
        // within each pass so later lines override earlier ones.
        for pass_star in [true, false] {
            for (_, t, a, s, vals) in transitions.iter().filter(|r| r.1.is_none() == pass_star) {
                let times: Vec<usize> = match t {
                    None => (0..steps).collect(),
                    Some(t) => vec![*t],
                };
                for ti in times {
                    let base = ((ti * 2 + *a as usize) * n + s) * n;
                    transition[base..base + n]
                        .iter_mut()
                        .zip(vals)
                        .for_each(|(dst, v)| *dst = *v);
                }
            }
        }
        let mut behavior = vec![nan; horizon * n];
        for pass_star in [true, false] {
            for (_, t, s, v) in behaviors.iter().filter(|r| r.1.is_none() == pass_star) {
                let times: Vec<usize> = match t {
                    None => (0..horizon).collect(),
                    Some(t) => vec![*t],
                };
                for ti in times {
                    behavior[ti * n + s] = *v;
                }
            }
        }
        let mut outcome = vec![nan; 2 * n];
        for (_, a, s, v) in &outcomes {
            outcome[*a as usize * n + s] = *v;
        }

        let missing = |what: &str| err(0, format!("incomplete {what} table"));
        if transition.iter().any(|v| v.is_nan()) {
            return Err(missing("transition"));
        }
        if behavior.iter().any(|v| v.is_nan()) {
            return Err(missing("behavior"));
        }
        if outcome.iter().any(|v| v.is_nan()) {
            return Err(missing("outcome"));
        }

        Self::new(
            horizon,
            names,
            ivals.into_iter().map(S::of).collect(),
            transition.into_iter().map(S::of).collect(),
            behavior.into_iter().map(S::of).collect(),
            outcome.into_iter().map(S::of).collect(),
        )
    }

    pub fn read_text(path: &Path) -> Result<Self, ExactError> {
        let text = std::fs::read_to_string(path).map_err(|e| ExactError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Self::parse_text(&text, &path.display().to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coarsen::coarse_indices;

    /// Two states, moderate treatment effect on transitions, distinct
    /// outcome means.
    fn toy(horizon: usize) -> DiscreteMdp<f64> {
        DiscreteMdp::time_constant(
            horizon,
            vec!["lo".into(), "hi".into()],
            vec![0.6, 0.4],
            vec![
                0.8, 0.2, 0.3, 0.7, // a = 0: from lo, from hi
                0.5, 0.5, 0.1, 0.9, // a = 1
            ],
            vec![0.2, 0.45],
            vec![0.0, 1.0, 0.25, 1.5],
        )
        .unwrap()
    }

    #[test]
    fn single_point_reduces_to_outcome_average() {
        // A one-point horizon has no transitions; the step table is
        // replicated zero times, so its content never enters validation.
        let mdp = DiscreteMdp::<f64>::time_constant(
            1,
            vec!["lo".into(), "hi".into()],
            vec![0.3, 0.7],
            vec![0.0; 8],
            vec![0.5, 0.5],
            vec![10.0, 20.0, 30.0, 40.0],
        )
        .unwrap();
        let never = TreatmentRegime::never(1);
        let imm = TreatmentRegime::immediate(1);
        let v0 = gform_uncoarsened(&mdp, &never).unwrap();
        let v1 = gform_uncoarsened(&mdp, &imm).unwrap();
        assert!((v0 - (0.3 * 10.0 + 0.7 * 20.0)).abs() < 1e-15);
        assert!((v1 - (0.3 * 30.0 + 0.7 * 40.0)).abs() < 1e-15);
    }

    #[test]
    fn constant_outcome_is_plan_invariant() {
        let mut mdp = toy(4);
        mdp.outcome = vec![3.25; 4];
        for regime in [
            TreatmentRegime::never(4),
            TreatmentRegime::immediate(4),
            TreatmentRegime::jump_at(2, 4).unwrap(),
        ] {
            let v = gform_uncoarsened(&mdp, &regime).unwrap();
            assert!((v - 3.25).abs() < 1e-14);
        }
    }

    #[test]
    fn identity_grid_collapses_every_route() {
        let mdp = toy(5);
        let grid = coarse_indices(5, 1).unwrap();
        for regime in [
            TreatmentRegime::never(5),
            TreatmentRegime::immediate(5),
            TreatmentRegime::jump_at(3, 5).unwrap(),
        ] {
            let fine = gform_uncoarsened(&mdp, &regime).unwrap();
            let coarse = gform_coarsened(&mdp, &regime, &grid).unwrap();
            let stoch = stochastic_policy_value(&mdp, &regime, &grid).unwrap();
            assert!((fine - coarse).abs() < 1e-14);
            assert!((fine - stoch).abs() < 1e-14);
            let (lo, hi) = bias_bound(&mdp, &regime, &grid).unwrap();
            assert_eq!((lo, hi), (0.0, 0.0));
        }
    }

    #[test]
    fn treatment_invisible_process_has_zero_bias_bound() {
        let mdp = DiscreteMdp::<f64>::time_constant(
            5,
            vec!["lo".into(), "hi".into()],
            vec![0.6, 0.4],
            vec![
                0.8, 0.2, 0.3, 0.7, // a = 0
                0.8, 0.2, 0.3, 0.7, // a = 1: identical
            ],
            vec![0.2, 0.45],
            vec![0.0, 1.0, 0.0, 1.0], // outcome also ignores treatment
        )
        .unwrap();
        let regime = TreatmentRegime::never(5);
        for delta in [1usize, 2, 4] {
            let grid = coarse_indices(5, delta).unwrap();
            let fine = gform_uncoarsened(&mdp, &regime).unwrap();
            let coarse = gform_coarsened(&mdp, &regime, &grid).unwrap();
            assert!((fine - coarse).abs() < 1e-14);
            let (lo, hi) = bias_bound(&mdp, &regime, &grid).unwrap();
            assert!(lo.abs() < 1e-14 && hi.abs() < 1e-14);
            let report = check_conditions(&mdp, &regime, &grid).unwrap();
            assert!(report.no_inbin_effect);
            assert_eq!(report.equality_holds, Some(true));
        }
    }

    #[test]
    fn coarse_value_differs_when_interior_treatment_matters() {
        // Three points, grid keeping only the endpoints: the hidden
        // middle decision uses a transition table that depends on
        // treatment, so the coarse value must move away from the fine
        // one, by a hand-computable amount.
        let mdp = toy(3);
        let grid = coarse_indices(3, 2).unwrap();
        let never = TreatmentRegime::never(3);
        let fine = gform_uncoarsened(&mdp, &never).unwrap();
        let coarse = gform_coarsened(&mdp, &never, &grid).unwrap();
        assert!((fine - coarse).abs() > 1e-4, "expected visible bias");

        // Hand recomputation of the coarse value: bin kernel from state s
        // = sum over middle state m of P(m | s, a=0) × [initiate at m →
        // treated transition, else untreated].
        let k = |s: usize, sp: usize| -> f64 {
            let mut acc = 0.0;
            for m in 0..2 {
                let p_m = mdp.transition_row(0, 0, s)[m];
                let h = mdp.behavior_prob(1, m);
                acc += p_m * (h * mdp.transition_row(1, 1, m)[sp] + (1.0 - h) * mdp.transition_row(1, 0, m)[sp]);
            }
            acc
        };
        let mut by_hand = 0.0;
        for s in 0..2 {
            for sp in 0..2 {
                by_hand += mdp.initial[s] * k(s, sp) * mdp.outcome_mean(0, sp);
            }
        }
        assert!((coarse - by_hand).abs() < 1e-12);

        let (lo, hi) = bias_bound(&mdp, &never, &grid).unwrap();
        let diff = fine - coarse;
        assert!(lo <= diff && diff <= hi);
        assert!(lo <= 0.0 && 0.0 <= hi);
    }

    #[test]
    fn policy_guard_trips() {
        let mdp = toy(25);
        let regime = TreatmentRegime::never(25);
        let grid = coarse_indices(25, 24).unwrap();
        assert!(matches!(
            bias_bound(&mdp, &regime, &grid),
            Err(ExactError::TooManyPolicies { .. })
        ));
    }

    #[test]
    fn text_round_trip_is_exact() {
        let mdp = toy(4);
        let text = mdp.to_text();
        let back = DiscreteMdp::<f64>::parse_text(&text, "mem").unwrap();
        assert_eq!(mdp, back);
    }

    #[test]
    fn text_star_and_override_lines() {
        let text = "\
# tiny
horizon 3
states a b
initial 0.5 0.5
transition * 0 a 0.9 0.1
transition * 0 b 0.2 0.8
transition * 1 a 0.6 0.4
transition * 1 b 0.3 0.7
transition 2 1 a 1.0 0.0
behavior * a 0.25
behavior * b 0.5
behavior 1 b 0.75
outcome 0 a 0
outcome 0 b 1
outcome 1 a 2
outcome 1 b 3
";
        let mdp = DiscreteMdp::<f64>::parse_text(text, "mem").unwrap();
        assert_eq!(mdp.transition_row(1, 1, 0), &[1.0, 0.0]);
        assert_eq!(mdp.transition_row(0, 1, 0), &[0.6, 0.4]);
        assert_eq!(mdp.behavior_prob(0, 1), 0.75);
        assert_eq!(mdp.behavior_prob(1, 1), 0.5);
    }

    #[test]
    fn malformed_tables_are_rejected() {
        // Row sum off.
        let bad = DiscreteMdp::time_constant(
            3,
            vec!["a".into(), "b".into()],
            vec![0.5, 0.5],
            vec![0.9, 0.2, 0.2, 0.8, 0.6, 0.4, 0.3, 0.7],
            vec![0.2, 0.2],
            vec![0.0; 4],
        );
        assert!(matches!(bad, Err(ExactError::Invalid(_))));
        // Probability out of range.
        let bad = DiscreteMdp::time_constant(
            3,
            vec!["a".into(), "b".into()],
            vec![0.5, 0.5],
            vec![1.1, -0.1, 0.2, 0.8, 0.6, 0.4, 0.3, 0.7],
            vec![0.2, 0.2],
            vec![0.0; 4],
        );
        assert!(bad.is_err());
        // Duplicate state names.
        let bad = DiscreteMdp::time_constant(
            3,
            vec!["a".into(), "a".into()],
            vec![0.5, 0.5],
            vec![0.8, 0.2, 0.2, 0.8, 0.6, 0.4, 0.3, 0.7],
            vec![0.2, 0.2],
            vec![0.0; 4],
        );
        assert!(bad.is_err());
    }

    #[test]
    fn population_panel_masses_and_coding() {
        let mdp = toy(3);
        let grid = coarse_indices(3, 2).unwrap();
        let panel = population_panel(&mdp, &grid).unwrap();
        assert_eq!(panel.horizon(), 2);
        assert_eq!(panel.delta(), 2);
        let total: f64 = (0..panel.n_subjects()).map(|i| panel.weight(i)).sum();
        assert!((total - 1.0).abs() < 1e-12);
        // Indicator coding: single feature column, 0/1 only.
        for i in 0..panel.n_subjects() {
            for t in 0..2 {
                let v = panel.l_row(i, t)[0];
                assert!(v == 0.0 || v == 1.0);
            }
        }
    }
}
