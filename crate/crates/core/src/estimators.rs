//! Estimators for the mean outcome under a treatment plan.
//!
//! Three estimators share one data contract (a [`Panel`] whose time grid the
//! caller has already coarsened as desired, plus a [`TreatmentRegime`] on the
//! same grid):
//!
//! * **Inverse-probability weighting** ([`ipw`]): subjects consistent with
//!   the plan are reweighted by the inverse of their fitted probability of
//!   being consistent with it, and the estimate is the ratio of the weighted
//!   outcome sum to the weighted count (a self-normalizing ratio, so
//!   rescaling every weight by a constant leaves it unchanged).
//! * **Iterated regression** ([`ir`]): a backward recursion of conditional
//!   mean regressions. At the last planned decision time the observed
//!   outcome is regressed on covariates among subjects consistent with the
//!   plan through that time; the fitted values, evaluated one consistency
//!   level up, become the next response; the estimate is the mean of the
//!   final fitted values over the whole sample.
//! * **Targeted update** ([`tmle`]): the same recursion, but after each
//!   regression the fitted values are shifted by a weighted-residual
//!   intercept (weights: plan consistency through the current time divided by
//!   the cumulative fitted propensity), which restores the estimating
//!   equation that inverse-probability weighting solves while keeping the
//!   regression's variance behavior.
//!
//! # Treatment mechanism
//!
//! Treatment initiation is absorbing, so the mechanism is a per-time hazard
//! `P(A_t = 1 | A_{t-1} = 0, L_t, V)`, fitted by logistic regression on the
//! at-risk rows ([`fit_propensity`]). Once a subject initiates, later times
//! contribute no decision and no weight factor. With
//! [`PropensityModel::pooled_time`], one logistic fit on all stacked at-risk
//! person-times replaces the per-time fits.
//!
//! # Censoring and terminal events
//!
//! Panels may carry two absorbing event columns with different meanings:
//!
//! * **Censoring** (`c`): observation stops and the outcome is missing.
//!   Estimands are defined under the plan "follow the treatment plan and
//!   remain uncensored", so censoring hazards are fitted alongside treatment
//!   hazards and their complements enter the cumulative weight products.
//!   Censored subjects stop being plan-consistent at the censoring time.
//! * **Death/discharge** (`d`): the outcome is determined and observed, but
//!   no further treatment or censoring can occur. Both hazards are
//!   structurally zero from that time on (the corresponding weight factors
//!   are one) and the recursion pins the subject's regression value to the
//!   observed outcome instead of a fitted one.
//!
//! # Diagnostics
//!
//! Every estimate reports follower counts, the effective sample size implied
//! by the final weights, weight extremes, and counts of degraded model fits,
//! so sparse-follower settings are visible rather than silent. Weight
//! clipping ([`clip_weights`]) and pooled fitting are provided as explicit
//! variance/bias trade-offs.
//!
//! All estimators are deterministic given their inputs; [`bootstrap_ci`]
//! draws its resamples from per-replicate random substreams, so its output
//! does not depend on thread count or scheduling.

use crate::panel::{Panel, TreatmentRegime};
use crate::regress::{
    logit_fit, offset_intercept_fit, tol, wls_fit, DesignMatrix, LinearFit, LogisticFit,
    RegressError,
};
use crate::rng::{derive_seed, substream, tag};
use crate::scalar::Scalar;
use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

/// Errors produced by estimator construction or evaluation.
#[derive(Debug, Error)]
pub enum EstimatorError {
    /// Inputs fail a precondition (empty data, bad clip percentile, ...).
    #[error("invalid estimator input: {0}")]
    Invalid(String),
    /// Panel, plan, and model do not share one time grid.
    #[error("time grid mismatch: {0}")]
    HorizonMismatch(String),
    /// A per-subject query was made for a subject inconsistent with the plan.
    #[error("subject {subject} does not follow the plan at its specified times")]
    NotFollower { subject: usize },
    /// An underlying regression failed.
    #[error(transparent)]
    Regress(#[from] RegressError),
}

/// Which estimator to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Inverse-probability weighting.
    Ipw,
    /// Iterated regression.
    Ir,
    /// Iterated regression with targeted weighted-residual updates.
    Tmle,
}

impl Method {
    /// Stable lowercase name, used in reports and configuration.
    pub fn name(self) -> &'static str {
        match self {
            Method::Ipw => "ipw",
            Method::Ir => "ir",
            Method::Tmle => "tmle",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = EstimatorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "ipw" => Ok(Method::Ipw),
            "ir" => Ok(Method::Ir),
            "tmle" => Ok(Method::Tmle),
            other => Err(EstimatorError::Invalid(format!(
                "unknown estimator '{other}' (expected ipw, ir, or tmle)"
            ))),
        }
    }
}

/// Full description of one estimator run: the method plus its options.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorSpec {
    pub method: Method,
    /// Percentile for weight clipping (`None` disables clipping).
    pub clip_alpha: Option<f64>,
    /// Fit one treatment-hazard model on all stacked person-times instead of
    /// one per time point.
    pub pool_time: bool,
    /// Fit regression steps on all subjects with the current treatment
    /// status as a covariate, instead of on plan-consistent subjects only.
    pub pool_regimes: bool,
    /// Restrict regression steps to an intercept (a deliberately coarse
    /// outcome model, useful for robustness checks).
    pub intercept_only_q: bool,
}

impl EstimatorSpec {
    /// The plain estimator with no variance-reduction options.
    pub fn new(method: Method) -> Self {
        EstimatorSpec {
            method,
            clip_alpha: None,
            pool_time: false,
            pool_regimes: false,
            intercept_only_q: false,
        }
    }
}

/// A point estimate together with sample diagnostics.
///
/// `ess`, `min_weight`, and `max_weight` describe the inverse-probability
/// weights among plan-followers (after clipping, excluding frequency
/// weights); for [`ir`], which uses no such weights, they are NaN.
#[derive(Debug, Clone)]
pub struct Estimate<S> {
    /// The estimated mean outcome under the plan (NaN when `undefined`).
    pub psi: S,
    /// Set when the panel contains no usable information for the plan
    /// (no followers, or no regression rows at the deepest recursion level).
    pub undefined: bool,
    /// Subjects consistent with the plan at every specified time and
    /// uncensored through the end (outcome observed).
    pub n_followers: usize,
    /// Effective sample size `(Σw)² / Σw²` of the final follower weights
    /// (frequency times inverse-probability).
    pub ess: S,
    /// Smallest inverse-probability weight among followers.
    pub min_weight: S,
    /// Largest inverse-probability weight among followers.
    pub max_weight: S,
    /// Hazard fits that fell back to an intercept-only model (constant
    /// response, non-convergence, or an empty at-risk set).
    pub n_fallback_fits: usize,
    /// Regression steps that were rank-deficient or carried forward from the
    /// previous time point for lack of rows.
    pub n_degenerate_fits: usize,
}

impl<S: Scalar> Estimate<S> {
    fn undefined_with(n_fallback: usize, n_degenerate: usize) -> Self {
        Estimate {
            psi: S::nan(),
            undefined: true,
            n_followers: 0,
            ess: S::nan(),
            min_weight: S::nan(),
            max_weight: S::nan(),
            n_fallback_fits: n_fallback,
            n_degenerate_fits: n_degenerate,
        }
    }
}

// ---------------------------------------------------------------------------
// Propensity (treatment and censoring hazard) models
// ---------------------------------------------------------------------------

/// Fitted treatment-initiation hazards, and censoring hazards when the panel
/// records censoring.
///
/// The design of every hazard row is `[1, V..., L_t...]` in that order; the
/// same layout is used for fitting and prediction, and must be respected by
/// externally constructed fits passed to [`PropensityModel::from_fits`].
#[derive(Debug, Clone)]
pub struct PropensityModel<S> {
    horizon: usize,
    pooled_time: bool,
    /// One fit per time point, or a single fit when `pooled_time`.
    treatment: Vec<LogisticFit<S>>,
    /// Censoring-hazard fits with the same shape, when fitted.
    censoring: Option<Vec<LogisticFit<S>>>,
    /// Per-time size of the treatment at-risk set.
    at_risk: Vec<usize>,
    n_fallback: usize,
    n_degenerate: usize,
}

impl<S: Scalar> PropensityModel<S> {
    /// Assemble a model from externally constructed fits (exact hazards in
    /// tests, models fitted elsewhere). `treatment` must hold one fit per
    /// time point, or exactly one when `pooled_time`; `censoring`, when
    /// present, must have the same shape. Every fit's coefficient vector
    /// must match the `[1, V..., L_t...]` row layout of the panels it will
    /// be asked to predict on.
    pub fn from_fits(
        horizon: usize,
        pooled_time: bool,
        treatment: Vec<LogisticFit<S>>,
        censoring: Option<Vec<LogisticFit<S>>>,
    ) -> Result<Self, EstimatorError> {
        if horizon == 0 {
            return Err(EstimatorError::Invalid("horizon must be positive".into()));
        }
        let want = if pooled_time { 1 } else { horizon };
        if treatment.len() != want {
            return Err(EstimatorError::Invalid(format!(
                "expected {want} treatment fits, got {}",
                treatment.len()
            )));
        }
        if let Some(c) = &censoring {
            if c.len() != want {
                return Err(EstimatorError::Invalid(format!(
                    "expected {want} censoring fits, got {}",
                    c.len()
                )));
            }
        }
        Ok(PropensityModel {
            horizon,
            pooled_time,
            treatment,
            censoring,
            at_risk: vec![0; horizon],
            n_fallback: 0,
            n_degenerate: 0,
        })
    }

    /// Number of time points the model covers.
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Whether one pooled fit covers all time points.
    pub fn pooled_time(&self) -> bool {
        self.pooled_time
    }

    /// Whether censoring hazards were fitted.
    pub fn has_censoring(&self) -> bool {
        self.censoring.is_some()
    }

    /// Per-time sizes of the treatment at-risk sets (zeros for models built
    /// via [`PropensityModel::from_fits`]).
    pub fn at_risk_counts(&self) -> &[usize] {
        &self.at_risk
    }

    /// Hazard fits that used an intercept-only fallback.
    pub fn n_fallback_fits(&self) -> usize {
        self.n_fallback
    }

    /// Hazard fits whose solve needed a ridge for rank deficiency.
    pub fn n_degenerate_fits(&self) -> usize {
        self.n_degenerate
    }

    /// Fitted `P(A_t = 1 | A_{t-1} = 0, L_t, V)` for subject `i` at `t`,
    /// unclamped.
    pub fn initiation_prob(&self, panel: &Panel<S>, i: usize, t: usize) -> S {
        let fit = if self.pooled_time { &self.treatment[0] } else { &self.treatment[t] };
        let mut row = Vec::with_capacity(1 + panel.v_dim() + panel.l_dim());
        hazard_row(panel, i, t, &mut row);
        fit.predict_prob(&row)
    }

    /// Fitted `P(C_t = 1 | C_{t-1} = 0, D_t = 0, L_t, V)` for subject `i` at
    /// `t`, unclamped; `None` when no censoring model was fitted.
    pub fn censoring_prob(&self, panel: &Panel<S>, i: usize, t: usize) -> Option<S> {
        let fits = self.censoring.as_ref()?;
        let fit = if self.pooled_time { &fits[0] } else { &fits[t] };
        let mut row = Vec::with_capacity(1 + panel.v_dim() + panel.l_dim());
        hazard_row(panel, i, t, &mut row);
        Some(fit.predict_prob(&row))
    }
}

/// Column names for hazard designs: intercept, baseline covariates, then the
/// current time-varying covariates.
fn hazard_names<S: Scalar>(panel: &Panel<S>) -> Vec<String> {
    let mut names = Vec::with_capacity(1 + panel.v_dim() + panel.l_dim());
    names.push("intercept".to_string());
    for k in 0..panel.v_dim() {
        names.push(format!("v{k}"));
    }
    for k in 0..panel.l_dim() {
        names.push(format!("l{k}"));
    }
    names
}

/// Fill `out` with the hazard design row `[1, V..., L_t...]`.
fn hazard_row<S: Scalar>(panel: &Panel<S>, i: usize, t: usize, out: &mut Vec<S>) {
    out.clear();
    out.push(S::one());
    out.extend_from_slice(panel.v_row(i));
    out.extend_from_slice(panel.l_row(i, t));
}

fn row_is_finite<S: Scalar>(row: &[S]) -> bool {
    row.iter().all(|v| v.is_finite())
}

/// Whether subject `i` is in the treatment at-risk set at time `t`: not yet
/// treated at the previous time, uncensored at `t`, and not dead/discharged.
fn at_risk_for_treatment<S: Scalar>(panel: &Panel<S>, i: usize, t: usize) -> bool {
    (t == 0 || panel.a_at(i, t - 1) == 0) && panel.c_at(i, t) == 0 && panel.d_at(i, t) == 0
}

/// Whether subject `i` is at risk of becoming newly censored at time `t`.
fn at_risk_for_censoring<S: Scalar>(panel: &Panel<S>, i: usize, t: usize) -> bool {
    (t == 0 || panel.c_at(i, t - 1) == 0) && panel.d_at(i, t) == 0
}

/// An intercept-only fit pinned at probability one half, used when an
/// at-risk set is empty and there is nothing to fit.
fn coin_flip_fit<S: Scalar>(names: &[String]) -> LogisticFit<S> {
    LogisticFit {
        coefficients: vec![S::zero(); names.len()],
        column_names: names.to_vec(),
        n_used: 0,
        iterations: 0,
        converged: false,
        fallback: Some(crate::regress::Fallback::ConstantResponse),
        degenerate: false,
    }
}

/// Fit treatment-initiation hazards (and censoring hazards when the panel
/// records censoring) by per-time logistic regressions on the at-risk rows,
/// or by one pooled regression on all stacked at-risk person-times when
/// `pooled_time` is set.
///
/// Rows enter a fit only while observable: uncensored, not dead/discharged,
/// with finite covariates. A time point whose at-risk set is empty receives
/// an intercept-only fit at probability one half and is counted as a
/// fallback. Frequency weights are honored.
///
/// On a coarsened panel a subject censored strictly inside a bin has no
/// covariates at the bin's end, so its censoring row cannot enter the fit;
/// the censoring model is then conditional on being observed at the bin
/// end. This is a coarsening artifact of the data, not a modeling choice.
pub fn fit_propensity<S: Scalar>(
    panel: &Panel<S>,
    pooled_time: bool,
) -> Result<PropensityModel<S>, EstimatorError> {
    let h = panel.horizon();
    let n = panel.n_subjects();
    if n == 0 {
        return Err(EstimatorError::Invalid("panel has no subjects".into()));
    }
    let names = hazard_names(panel);
    let mut at_risk = vec![0usize; h];
    let mut n_fallback = 0usize;
    let mut n_degenerate = 0usize;
    let mut row = Vec::with_capacity(names.len());

    // Collect (design, response, weight) for one hazard over a given at-risk
    // predicate, either per time point or stacked across all of them.
    let mut fit_hazard = |is_at_risk: &dyn Fn(usize, usize) -> bool,
                          response: &dyn Fn(usize, usize) -> u8,
                          counts: Option<&mut Vec<usize>>|
     -> Result<Vec<LogisticFit<S>>, EstimatorError> {
        let mut per_time_counts = vec![0usize; h];
        let groups: Vec<std::ops::Range<usize>> =
            if pooled_time { Vec::from([0..h]) } else { (0..h).map(|t| t..t + 1).collect() };
        let mut fits = Vec::with_capacity(groups.len());
        for group in groups {
            let mut x = DesignMatrix::new(names.len(), names.clone());
            let mut y = Vec::new();
            let mut w = Vec::new();
            for t in group {
                for i in 0..n {
                    if !is_at_risk(i, t) {
                        continue;
                    }
                    hazard_row(panel, i, t, &mut row);
                    if !row_is_finite(&row) {
                        continue;
                    }
                    per_time_counts[t] += 1;
                    x.push_row(&row);
                    y.push(S::of_usize(response(i, t) as usize));
                    w.push(panel.weight(i));
                }
            }
            if x.n_rows() == 0 {
                n_fallback += 1;
                fits.push(coin_flip_fit(&names));
                continue;
            }
            let fit = logit_fit(&x, &y, &w)?;
            n_fallback += fit.fallback.is_some() as usize;
            n_degenerate += fit.degenerate as usize;
            fits.push(fit);
        }
        if let Some(c) = counts {
            *c = per_time_counts;
        }
        Ok(fits)
    };

    let treatment = fit_hazard(
        &|i, t| at_risk_for_treatment(panel, i, t),
        &|i, t| panel.a_at(i, t),
        Some(&mut at_risk),
    )?;
    let censoring = if panel.has_censoring() {
        Some(fit_hazard(
            &|i, t| at_risk_for_censoring(panel, i, t),
            &|i, t| panel.c_at(i, t),
            None,
        )?)
    } else {
        None
    };

    Ok(PropensityModel {
        horizon: h,
        pooled_time,
        treatment,
        censoring,
        at_risk,
        n_fallback,
        n_degenerate,
    })
}

// ---------------------------------------------------------------------------
// Cumulative plan-consistency probabilities
// ---------------------------------------------------------------------------

/// Per-subject cumulative fitted probabilities of remaining consistent with
/// a plan (treatment matches at specified times, uncensored), one value per
/// specified time point.
///
/// Entries are meaningful for a subject at time `t` only while the subject
/// actually follows the plan through `t`; estimators read them exactly
/// there.
#[derive(Debug, Clone)]
pub struct CumulativeProbs<S> {
    n_times: usize,
    /// Row-major `n_subjects x n_times` cumulative products.
    g: Vec<S>,
    min_raw: S,
    n_floored: usize,
}

impl<S: Scalar> CumulativeProbs<S> {
    /// Cumulative probability for subject `i` through time `t` inclusive.
    pub fn through(&self, i: usize, t: usize) -> S {
        self.g[i * self.n_times + t]
    }

    /// Cumulative probability through the last specified time point.
    pub fn through_end(&self, i: usize) -> S {
        self.through(i, self.n_times - 1)
    }

    /// Number of specified time points covered.
    pub fn n_times(&self) -> usize {
        self.n_times
    }

    /// Smallest single-factor probability encountered before flooring
    /// (a positivity diagnostic).
    pub fn min_raw(&self) -> S {
        self.min_raw
    }

    /// Number of factors clamped by the probability floor.
    pub fn n_floored(&self) -> usize {
        self.n_floored
    }
}

/// Compute every subject's cumulative plan-consistency probabilities under
/// the fitted hazards.
///
/// For each specified time `t` the cumulative product gains: the probability
/// of the planned treatment decision (initiation hazard if the plan starts
/// treatment at `t`, its complement while the plan stays untreated, nothing
/// after a planned start since initiation is absorbing); and, when a
/// censoring model is present, the probability of remaining uncensored.
/// Dead/discharged subjects contribute factors of one from the event time on
/// (both hazards are structurally zero), and entries from a subject's
/// censoring time on are NaN (no plan can be followed there, and covariates
/// may be missing). Every factor is clamped to `[1e-6, 1 - 1e-6]` before
/// multiplying; the pre-clamp minimum and clamp count are retained as
/// positivity diagnostics.
pub fn cumulative_probs<S: Scalar>(
    model: &PropensityModel<S>,
    panel: &Panel<S>,
    regime: &TreatmentRegime,
) -> Result<CumulativeProbs<S>, EstimatorError> {
    check_grids(panel, regime)?;
    if model.horizon() != panel.horizon() {
        return Err(EstimatorError::HorizonMismatch(format!(
            "model covers {} time points, panel has {}",
            model.horizon(),
            panel.horizon()
        )));
    }
    let n = panel.n_subjects();
    let t_spec = regime.specified_len();
    let jump = regime.jump_index();
    let floor = S::of(tol::PROB_FLOOR);
    let ceil = S::one() - floor;
    let mut g = vec![S::one(); n * t_spec];
    let mut min_raw = S::one();
    let mut n_floored = 0usize;

    for i in 0..n {
        let mut acc = S::one();
        for t in 0..t_spec {
            // From the censoring time on, the subject cannot follow any plan
            // and covariates may be missing: probabilities there have no
            // estimand role, so mark them unusable instead of evaluating.
            if panel.c_at(i, t) == 1 {
                for slot in &mut g[i * t_spec + t..(i + 1) * t_spec] {
                    *slot = S::nan();
                }
                break;
            }
            let dead = panel.d_at(i, t) == 1;
            let mut factors = [S::nan(); 2];
            let mut n_factors = 0;
            if model.has_censoring() && !dead {
                let hc = model.censoring_prob(panel, i, t).expect("censoring fits");
                factors[n_factors] = S::one() - hc;
                n_factors += 1;
            }
            let decision_open = jump.is_none_or(|j| t <= j);
            if decision_open && !dead {
                let m = model.initiation_prob(panel, i, t);
                factors[n_factors] =
                    if regime.value_at(t) == Some(1) { m } else { S::one() - m };
                n_factors += 1;
            }
            for &p_raw in &factors[..n_factors] {
                if !p_raw.is_finite() {
                    return Err(EstimatorError::Invalid(format!(
                        "non-finite fitted probability for subject {i} at time {t}"
                    )));
                }
                if p_raw < min_raw {
                    min_raw = p_raw;
                }
                let p = p_raw.max(floor).min(ceil);
                n_floored += (p != p_raw) as usize;
                acc *= p;
            }
            g[i * t_spec + t] = acc;
        }
    }
    Ok(CumulativeProbs { n_times: t_spec, g, min_raw, n_floored })
}

/// Cumulative plan-consistency probability for one subject through the last
/// specified time point.
///
/// Errors with [`EstimatorError::NotFollower`] when the subject is not
/// actually consistent with the plan there, since the probability of an
/// unfollowed plan has no estimand role.
pub fn cumulative_prob<S: Scalar>(
    model: &PropensityModel<S>,
    panel: &Panel<S>,
    subject: usize,
    regime: &TreatmentRegime,
) -> Result<S, EstimatorError> {
    let probs = cumulative_probs(model, panel, regime)?;
    if !panel.follows_through(regime, subject, regime.specified_len() - 1) {
        return Err(EstimatorError::NotFollower { subject });
    }
    Ok(probs.through_end(subject))
}

// ---------------------------------------------------------------------------
// Weight utilities
// ---------------------------------------------------------------------------

/// Linear-interpolation quantile of an ascending-sorted slice, `p` in [0, 1]
/// (the common "type 7" rule: index `(n-1)p`, interpolated).
pub(crate) fn quantile_sorted<S: Scalar>(sorted: &[S], p: f64) -> S {
    debug_assert!(!sorted.is_empty());
    debug_assert!((0.0..=1.0).contains(&p));
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    if lo + 1 >= sorted.len() {
        return sorted[sorted.len() - 1];
    }
    sorted[lo] + S::of(h - lo as f64) * (sorted[lo + 1] - sorted[lo])
}

/// Clamp weights into their empirical `[alpha, 100 - alpha]` percentile
/// range (percentiles by linear interpolation between order statistics).
///
/// `alpha` is in percent and must satisfy `0 <= alpha < 50`; zero returns
/// the weights unchanged. Clipping trades variance for bias: it shrinks the
/// influence of extreme weights at the cost of distorting them.
pub fn clip_weights<S: Scalar>(weights: &[S], alpha: f64) -> Result<Vec<S>, EstimatorError> {
    if !(0.0..50.0).contains(&alpha) {
        return Err(EstimatorError::Invalid(format!(
            "clip percentile must lie in [0, 50), got {alpha}"
        )));
    }
    if weights.is_empty() {
        return Err(EstimatorError::Invalid("cannot clip an empty weight vector".into()));
    }
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(EstimatorError::Invalid("weights must be finite".into()));
    }
    if alpha == 0.0 {
        return Ok(weights.to_vec());
    }
    let mut sorted = weights.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite weights"));
    let lo = quantile_sorted(&sorted, alpha / 100.0);
    let hi = quantile_sorted(&sorted, 1.0 - alpha / 100.0);
    Ok(weights.iter().map(|w| (*w).max(lo).min(hi)).collect())
}

/// Effective sample size `(Σw)² / Σw²` of a weight vector.
fn effective_sample_size<S: Scalar>(weights: &[S]) -> S {
    let mut sum = S::zero();
    let mut sq = S::zero();
    for w in weights {
        sum += *w;
        sq += *w * *w;
    }
    if sq > S::zero() {
        sum * sum / sq
    } else {
        S::nan()
    }
}

// ---------------------------------------------------------------------------
// Inverse-probability weighting
// ---------------------------------------------------------------------------

fn check_grids<S: Scalar>(panel: &Panel<S>, regime: &TreatmentRegime) -> Result<(), EstimatorError> {
    if panel.horizon() != regime.horizon() {
        return Err(EstimatorError::HorizonMismatch(format!(
            "panel has {} time points, plan covers {}",
            panel.horizon(),
            regime.horizon()
        )));
    }
    if panel.n_subjects() == 0 {
        return Err(EstimatorError::Invalid("panel has no subjects".into()));
    }
    Ok(())
}

/// Inverse-probability-weighted estimate of the mean outcome under a plan.
///
/// Followers (subjects consistent with the plan at every specified time and
/// uncensored through the end) are weighted by the inverse of their
/// cumulative fitted plan-consistency probability; the estimate is the ratio
/// of the weighted outcome sum to the weighted follower count. With
/// `clip_alpha`, the inverse-probability weights are percentile-clipped
/// among followers first ([`clip_weights`]). A panel with no followers
/// yields an `undefined` estimate rather than an error.
pub fn ipw<S: Scalar>(
    panel: &Panel<S>,
    regime: &TreatmentRegime,
    model: &PropensityModel<S>,
    clip_alpha: Option<f64>,
) -> Result<Estimate<S>, EstimatorError> {
    check_grids(panel, regime)?;
    let probs = cumulative_probs(model, panel, regime)?;
    let followers: Vec<usize> =
        (0..panel.n_subjects()).filter(|&i| panel.follows_fully(regime, i)).collect();
    if followers.is_empty() {
        return Ok(Estimate::undefined_with(model.n_fallback_fits(), model.n_degenerate_fits()));
    }
    for &i in &followers {
        if !panel.y_of(i).is_finite() {
            return Err(EstimatorError::Invalid(format!(
                "follower {i} has a non-finite outcome"
            )));
        }
    }

    let mut inv: Vec<S> = followers.iter().map(|&i| S::one() / probs.through_end(i)).collect();
    if let Some(alpha) = clip_alpha {
        inv = clip_weights(&inv, alpha)?;
    }
    let mut num = S::zero();
    let mut den = S::zero();
    let mut full = Vec::with_capacity(followers.len());
    let mut min_w = S::infinity();
    let mut max_w = S::neg_infinity();
    for (&i, &w) in followers.iter().zip(&inv) {
        let fw = panel.weight(i) * w;
        num += fw * panel.y_of(i);
        den += fw;
        full.push(fw);
        min_w = min_w.min(w);
        max_w = max_w.max(w);
    }
    Ok(Estimate {
        psi: num / den,
        undefined: false,
        n_followers: followers.len(),
        ess: effective_sample_size(&full),
        min_weight: min_w,
        max_weight: max_w,
        n_fallback_fits: model.n_fallback_fits(),
        n_degenerate_fits: model.n_degenerate_fits(),
    })
}

// ---------------------------------------------------------------------------
// Backward regression recursion (shared by `ir` and `tmle`)
// ---------------------------------------------------------------------------

/// Column names for regression designs.
fn q_names<S: Scalar>(panel: &Panel<S>, pool_regimes: bool, intercept_only: bool) -> Vec<String> {
    if intercept_only {
        return vec!["intercept".to_string()];
    }
    let mut names = hazard_names(panel);
    if pool_regimes {
        names.push("a".to_string());
    }
    names
}

/// Fill `out` with a regression design row; `a_value` appends the treatment
/// column used by pooled fits.
fn q_row<S: Scalar>(
    panel: &Panel<S>,
    i: usize,
    t: usize,
    a_value: Option<S>,
    intercept_only: bool,
    out: &mut Vec<S>,
) {
    if intercept_only {
        out.clear();
        out.push(S::one());
    } else {
        hazard_row(panel, i, t, out);
    }
    if let Some(a) = a_value {
        out.push(a);
    }
}

/// Targeting inputs for the recursion: cumulative fitted plan-consistency
/// probabilities plus an optional clip percentile for the step weights.
struct Targeting<'a, S> {
    probs: &'a CumulativeProbs<S>,
    clip_alpha: Option<f64>,
}

struct Recursed<S> {
    /// Final fitted values, one per subject where defined.
    q0: Vec<Option<S>>,
    n_degenerate: usize,
    /// No regression rows existed at the deepest level; nothing was fit.
    undefined: bool,
}

/// Run the backward regression recursion.
///
/// At each specified time `t` (last first), the current iterate is regressed
/// on `[1, V, L_t]` — among plan-followers through `t` by default, or among
/// all observed subjects with the actual treatment status appended as a
/// covariate when `pool_regimes` — and the fit is evaluated one consistency
/// level up (everyone, at the planned treatment value, once `t` reaches
/// zero). Dead/discharged subjects are excluded from fits and their values
/// pinned to the observed outcome. A time point with no regression rows
/// reuses the previous time's fit and is counted as degenerate. With
/// `targeting`, each fit's predictions are shifted by the weighted-residual
/// intercept before becoming the next response.
fn backward_recursion<S: Scalar>(
    panel: &Panel<S>,
    regime: &TreatmentRegime,
    pool_regimes: bool,
    intercept_only: bool,
    targeting: Option<&Targeting<'_, S>>,
) -> Result<Recursed<S>, EstimatorError> {
    let n = panel.n_subjects();
    let t_spec = regime.specified_len();
    let horizon = panel.horizon();
    let names = q_names(panel, pool_regimes, intercept_only);
    let mut row = Vec::with_capacity(names.len());
    let mut n_degenerate = 0usize;

    // The iterate: value of the step-(t+1) evaluation for each subject, or
    // None where undefined (off-plan, unobserved, or missing covariates).
    // Base case: the observed outcome where it is observed and, without
    // pooling, the subject followed the plan through its last specified time.
    let mut q: Vec<Option<S>> = (0..n)
        .map(|i| {
            let y = panel.y_of(i);
            let eligible = if pool_regimes {
                !panel.censored(i)
            } else {
                panel.follows_through(regime, i, t_spec - 1) && !panel.censored(i)
            };
            (eligible && y.is_finite()).then_some(y)
        })
        .collect();

    let mut last_fit: Option<LinearFit<S>> = None;
    for t in (0..t_spec).rev() {
        // --- Fit -----------------------------------------------------------
        let mut x = DesignMatrix::new(names.len(), names.clone());
        let mut resp = Vec::new();
        let mut w = Vec::new();
        let mut fit_rows = Vec::new();
        for (i, qi) in q.iter().enumerate() {
            let Some(value) = qi else { continue };
            if panel.d_at(i, t) == 1 {
                continue;
            }
            let eligible = if pool_regimes {
                panel.c_at(i, t) == 0
            } else {
                panel.follows_through(regime, i, t)
            };
            if !eligible {
                continue;
            }
            let a_fit = pool_regimes.then(|| S::of_usize(panel.a_at(i, t) as usize));
            q_row(panel, i, t, a_fit, intercept_only, &mut row);
            if !row_is_finite(&row) {
                continue;
            }
            x.push_row(&row);
            resp.push(*value);
            w.push(panel.weight(i));
            fit_rows.push(i);
        }
        let fit = if x.n_rows() > 0 {
            let f = wls_fit(&x, &resp, &w)?;
            n_degenerate += f.degenerate as usize;
            f
        } else if let Some(prev) = &last_fit {
            n_degenerate += 1;
            prev.clone()
        } else {
            return Ok(Recursed { q0: vec![None; n], n_degenerate, undefined: true });
        };

        // --- Targeting step --------------------------------------------------
        // Weighted-residual intercept over plan-followers through t, with
        // weights 1 / (cumulative fitted plan-consistency probability).
        let planned_a = || {
            regime
                .value_at(t)
                .map(|v| S::of_usize(v as usize))
                .expect("t below the specified prefix length")
        };
        let mut shift = S::zero();
        if let Some(tg) = targeting {
            let mut f_resp = Vec::new();
            let mut f_offset = Vec::new();
            let mut f_inv = Vec::new();
            let mut f_freq = Vec::new();
            for &i in &fit_rows {
                if !panel.follows_through(regime, i, t) {
                    continue;
                }
                // Followers carry the planned treatment at t, so evaluating
                // the fit at their own rows equals evaluating at the plan.
                let a_fit = pool_regimes.then(planned_a);
                q_row(panel, i, t, a_fit, intercept_only, &mut row);
                f_resp.push(q[i].expect("fit rows have responses"));
                f_offset.push(fit.predict_row(&row));
                f_inv.push(S::one() / tg.probs.through(i, t));
                f_freq.push(panel.weight(i));
            }
            if f_resp.is_empty() {
                n_degenerate += 1;
            } else {
                if let Some(alpha) = tg.clip_alpha {
                    f_inv = clip_weights(&f_inv, alpha)?;
                }
                let wts: Vec<S> =
                    f_inv.iter().zip(&f_freq).map(|(inv, fw)| *inv * *fw).collect();
                shift = offset_intercept_fit(&f_resp, &f_offset, &wts)?;
            }
        }

        // --- Evaluate one consistency level up -------------------------------
        let mut next: Vec<Option<S>> = vec![None; n];
        for (i, slot) in next.iter_mut().enumerate() {
            let eligible = if t == 0 {
                true
            } else if pool_regimes {
                panel.c_at(i, t - 1) == 0
            } else {
                panel.follows_through(regime, i, t - 1)
            };
            if !eligible {
                continue;
            }
            if panel.d_at(i, t) == 1 {
                let y = panel.y_of(i);
                *slot = y.is_finite().then_some(y);
                continue;
            }
            let a_eval = pool_regimes.then(planned_a);
            q_row(panel, i, t, a_eval, intercept_only, &mut row);
            if !row_is_finite(&row) {
                continue;
            }
            *slot = Some(fit.predict_row(&row) + shift);
        }
        q = next;
        last_fit = Some(fit);
    }
    debug_assert!(horizon >= t_spec);
    Ok(Recursed { q0: q, n_degenerate, undefined: false })
}

/// Mean of the final iterate over the sample (frequency-weighted).
fn mean_of_q0<S: Scalar>(panel: &Panel<S>, q0: &[Option<S>]) -> Option<S> {
    let mut num = S::zero();
    let mut den = S::zero();
    for (i, q) in q0.iter().enumerate() {
        if let Some(v) = q {
            num += panel.weight(i) * *v;
            den += panel.weight(i);
        }
    }
    (den > S::zero()).then(|| num / den)
}

/// Follower-weight diagnostics shared by the weighted estimators: counts,
/// effective sample size, and extremes of the (optionally clipped)
/// inverse-probability weights among full followers.
fn follower_diagnostics<S: Scalar>(
    panel: &Panel<S>,
    regime: &TreatmentRegime,
    probs: &CumulativeProbs<S>,
    clip_alpha: Option<f64>,
) -> Result<(usize, S, S, S), EstimatorError> {
    let followers: Vec<usize> =
        (0..panel.n_subjects()).filter(|&i| panel.follows_fully(regime, i)).collect();
    if followers.is_empty() {
        return Ok((0, S::nan(), S::nan(), S::nan()));
    }
    let mut inv: Vec<S> = followers.iter().map(|&i| S::one() / probs.through_end(i)).collect();
    if let Some(alpha) = clip_alpha {
        inv = clip_weights(&inv, alpha)?;
    }
    let full: Vec<S> =
        followers.iter().zip(&inv).map(|(&i, &w)| panel.weight(i) * w).collect();
    let mut min_w = S::infinity();
    let mut max_w = S::neg_infinity();
    for &w in &inv {
        min_w = min_w.min(w);
        max_w = max_w.max(w);
    }
    Ok((followers.len(), effective_sample_size(&full), min_w, max_w))
}

fn count_followers<S: Scalar>(panel: &Panel<S>, regime: &TreatmentRegime) -> usize {
    (0..panel.n_subjects()).filter(|&i| panel.follows_fully(regime, i)).count()
}

fn ir_impl<S: Scalar>(
    panel: &Panel<S>,
    regime: &TreatmentRegime,
    pool_regimes: bool,
    intercept_only: bool,
) -> Result<Estimate<S>, EstimatorError> {
    check_grids(panel, regime)?;
    let rec = backward_recursion(panel, regime, pool_regimes, intercept_only, None)?;
    let psi = if rec.undefined { None } else { mean_of_q0(panel, &rec.q0) };
    Ok(match psi {
        Some(psi) => Estimate {
            psi,
            undefined: false,
            n_followers: count_followers(panel, regime),
            ess: S::nan(),
            min_weight: S::nan(),
            max_weight: S::nan(),
            n_fallback_fits: 0,
            n_degenerate_fits: rec.n_degenerate,
        },
        None => Estimate::undefined_with(0, rec.n_degenerate),
    })
}

/// Iterated-regression estimate of the mean outcome under a plan.
///
/// See the module docs for the recursion. With `pool_regimes`, each
/// regression uses all observed subjects with the current treatment status
/// as an extra covariate (evaluated at the planned value), trading the
/// plan-specific follower restriction for more rows.
pub fn ir<S: Scalar>(
    panel: &Panel<S>,
    regime: &TreatmentRegime,
    pool_regimes: bool,
) -> Result<Estimate<S>, EstimatorError> {
    ir_impl(panel, regime, pool_regimes, false)
}

fn tmle_impl<S: Scalar>(
    panel: &Panel<S>,
    regime: &TreatmentRegime,
    model: &PropensityModel<S>,
    pool_regimes: bool,
    clip_alpha: Option<f64>,
    intercept_only: bool,
) -> Result<Estimate<S>, EstimatorError> {
    check_grids(panel, regime)?;
    let probs = cumulative_probs(model, panel, regime)?;
    let targeting = Targeting { probs: &probs, clip_alpha };
    let rec = backward_recursion(panel, regime, pool_regimes, intercept_only, Some(&targeting))?;
    let psi = if rec.undefined { None } else { mean_of_q0(panel, &rec.q0) };
    Ok(match psi {
        Some(psi) => {
            let (n_followers, ess, min_w, max_w) =
                follower_diagnostics(panel, regime, &probs, clip_alpha)?;
            Estimate {
                psi,
                undefined: false,
                n_followers,
                ess,
                min_weight: min_w,
                max_weight: max_w,
                n_fallback_fits: model.n_fallback_fits(),
                n_degenerate_fits: rec.n_degenerate,
            }
        }
        None => {
            Estimate::undefined_with(model.n_fallback_fits(), rec.n_degenerate)
        }
    })
}

/// Targeted estimate of the mean outcome under a plan: the regression
/// recursion of [`ir`] with a weighted-residual intercept update after each
/// step, using weights "plan consistency through `t`" over "cumulative
/// fitted plan-consistency probability through `t`" (optionally
/// percentile-clipped via `clip_alpha`).
pub fn tmle<S: Scalar>(
    panel: &Panel<S>,
    regime: &TreatmentRegime,
    model: &PropensityModel<S>,
    pool_regimes: bool,
    clip_alpha: Option<f64>,
) -> Result<Estimate<S>, EstimatorError> {
    tmle_impl(panel, regime, model, pool_regimes, clip_alpha, false)
}

/// Run the estimator described by `spec`, fitting hazard models as needed.
pub fn estimate_with<S: Scalar>(
    panel: &Panel<S>,
    regime: &TreatmentRegime,
    spec: &EstimatorSpec,
) -> Result<Estimate<S>, EstimatorError> {
    match spec.method {
        Method::Ipw => {
            let model = fit_propensity(panel, spec.pool_time)?;
            ipw(panel, regime, &model, spec.clip_alpha)
        }
        Method::Ir => ir_impl(panel, regime, spec.pool_regimes, spec.intercept_only_q),
        Method::Tmle => {
            let model = fit_propensity(panel, spec.pool_time)?;
            tmle_impl(panel, regime, &model, spec.pool_regimes, spec.clip_alpha, spec.intercept_only_q)
        }
    }
}

// ---------------------------------------------------------------------------
// Bootstrap confidence intervals
// ---------------------------------------------------------------------------

/// A percentile bootstrap interval with bookkeeping.
#[derive(Debug, Clone)]
pub struct BootstrapInterval<S> {
    pub lo: S,
    pub hi: S,
    /// Nominal coverage in percent, echoed from the request.
    pub level: f64,
    /// Replicates that produced a finite estimate.
    pub n_kept: usize,
    /// Replicates skipped because the resample had no usable followers (or
    /// the estimator otherwise failed to produce a finite value).
    pub n_skipped: usize,
}

/// Percentile bootstrap confidence interval for the estimator described by
/// `spec`, resampling subjects with replacement.
///
/// Every replicate refits the hazard and regression models on its resample.
/// Replicate `r` draws from its own random substream of `seed`, so results
/// are identical for any worker count. Replicates whose resample yields an
/// undefined or non-finite estimate are skipped and counted; an error is
/// returned only when every replicate is skipped.
pub fn bootstrap_ci<S: Scalar>(
    panel: &Panel<S>,
    regime: &TreatmentRegime,
    spec: &EstimatorSpec,
    replicates: usize,
    level: f64,
    seed: u64,
) -> Result<BootstrapInterval<S>, EstimatorError> {
    check_grids(panel, regime)?;
    if replicates < 2 {
        return Err(EstimatorError::Invalid(format!(
            "need at least 2 bootstrap replicates, got {replicates}"
        )));
    }
    if !(0.0 < level && level < 100.0) {
        return Err(EstimatorError::Invalid(format!(
            "confidence level must lie in (0, 100), got {level}"
        )));
    }
    let n = panel.n_subjects();
    let root = derive_seed(seed, tag::BOOT);
    let draws: Vec<Option<S>> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = substream(root, r as u64);
            let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let resample = panel.select(&idx);
            match estimate_with(&resample, regime, spec) {
                Ok(e) if !e.undefined && e.psi.is_finite() => Some(e.psi),
                _ => None,
            }
        })
        .collect();

    let mut kept: Vec<S> = draws.iter().filter_map(|d| *d).collect();
    let n_skipped = replicates - kept.len();
    if kept.is_empty() {
        return Err(EstimatorError::Invalid(
            "every bootstrap replicate was skipped (no usable followers)".into(),
        ));
    }
    kept.sort_by(|a, b| a.partial_cmp(b).expect("finite estimates"));
    let tail = (1.0 - level / 100.0) / 2.0;
    Ok(BootstrapInterval {
        lo: quantile_sorted(&kept, tail),
        hi: quantile_sorted(&kept, 1.0 - tail),
        level,
        n_kept: kept.len(),
        n_skipped,
    })
}
