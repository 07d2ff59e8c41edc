//! Synthetic longitudinal cohort generator.
//!
//! One subject carries two standard-normal baseline features `V`, three
//! time-varying features `L`, an absorbing binary treatment `A`, and an
//! end-of-follow-up outcome `Y`. Per time step, in order: features update,
//! (optionally) censoring can strike, then the treatment decision is made.
//!
//! Features 1 and 2 are noisy linear functions of baseline, the previous
//! step's features, and a (possibly lagged) treatment term. Feature 3 is a
//! slow accumulator: it keeps its previous value plus a small drift that
//! treatment switches off — so the longer a subject stays untreated, the
//! higher it climbs. The treatment hazard is logistic in baseline and the
//! current features, with an intercept calibrated so that roughly a
//! quarter of subjects never initiate over the default horizon. The
//! outcome is the accumulator's next step, which makes "never initiate"
//! the plan with the highest mean outcome.
//!
//! `effect_lag` (ω) delays every treatment term: features at `t` respond
//! to the treatment chosen at `t − ω`. With the default ω = 1 the response
//! is immediate-next-step.
//!
//! Randomness: every subject draws from its own counter-derived stream
//! with a fixed per-step draw layout, so panels of different sizes agree
//! on shared subjects, and an intervened panel is the exact noise-for-
//! noise counterpart of the observational panel generated from the same
//! seed (treatment draws are consumed even where a plan overrides the
//! decision).

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use thiserror::Error;

use crate::panel::{Panel, TreatmentRegime};
use crate::rng::substream;
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum DgpError {
    #[error("invalid parameters: {0}")]
    Invalid(String),
    #[error("treatment plan must cover every decision to simulate under it")]
    PlanNotFullySpecified,
    #[error("plan horizon {plan} does not match parameter horizon {params}")]
    HorizonMismatch { plan: usize, params: usize },
    #[error("at least {min} Monte Carlo draws required, got {got}")]
    TooFewDraws { min: usize, got: usize },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parameter file {path}, line {line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
}

/// Coefficients of one linear feature-update equation.
#[derive(Debug, Clone, PartialEq)]
pub struct LagEq<S> {
    pub intercept: S,
    pub v: [S; 2],
    pub l: [S; 3],
    pub a: S,
}

/// Logistic censoring-hazard coefficients (per-step probability of
/// becoming newly censored, given baseline and current features).
#[derive(Debug, Clone, PartialEq)]
pub struct CensorModel<S> {
    pub intercept: S,
    pub v: [S; 2],
    pub l: [S; 3],
}

/// Full parameterization of the generator.
#[derive(Debug, Clone, PartialEq)]
pub struct DgpParams<S> {
    /// Number of time points.
    pub horizon: usize,
    /// Treatment effect lag ω ≥ 1: features at `t` see the treatment from
    /// `t − ω` (treatment before the first time point is 0).
    pub effect_lag: usize,
    /// Standard deviation of every feature/outcome noise term.
    pub noise_sd: S,
    /// When false, the treatment hazard ignores baseline and features
    /// (randomized assignment) with an intercept recalibrated to keep the
    /// never-initiate fraction near a quarter.
    pub confounded: bool,
    pub feat1: LagEq<S>,
    pub feat2: LagEq<S>,
    /// Accumulator drift; also (negated) its treatment coefficient, so
    /// treatment exactly cancels the drift.
    pub accum_drift: S,
    pub accum_v: [S; 2],
    pub accum_l12: [S; 2],
    pub haz_intercept: S,
    pub haz_v: [S; 2],
    pub haz_l: [S; 3],
    pub censoring: Option<CensorModel<S>>,
}

/// Fraction of subjects that should never initiate treatment under the
/// default calibration.
const NEVER_TREAT_TARGET: f64 = 0.25;

impl<S: Scalar> DgpParams<S> {
    pub fn validate(&self) -> Result<(), DgpError> {
        if self.horizon == 0 {
            return Err(DgpError::Invalid("horizon must be at least 1".into()));
        }
        if self.effect_lag == 0 {
            return Err(DgpError::Invalid("effect lag must be at least 1".into()));
        }
        if self.noise_sd <= S::zero() || !self.noise_sd.is_finite() {
            return Err(DgpError::Invalid("noise sd must be positive".into()));
        }
        if !self.confounded {
            let zero = |x: &[S]| x.iter().all(|v| *v == S::zero());
            if !zero(&self.haz_v) || !zero(&self.haz_l) {
                return Err(DgpError::Invalid(
                    "randomized assignment requires zero hazard covariate coefficients".into(),
                ));
            }
        }
        Ok(())
    }

    /// Switch to randomized treatment assignment: zero the hazard's
    /// covariate coefficients and recalibrate the intercept so the
    /// expected never-initiate fraction stays at the calibration target
    /// (constant per-step hazard ⇒ survival `(1−p)^(horizon−1) = target`;
    /// the first decision keeps everyone at risk since features start
    /// near zero, matching the confounded design's early behavior).
    pub fn into_randomized(mut self) -> Self {
        let steps = (self.horizon.max(2) - 1) as f64;
        let p = 1.0 - NEVER_TREAT_TARGET.powf(1.0 / steps);
        self.haz_v = [S::zero(); 2];
        self.haz_l = [S::zero(); 3];
        self.haz_intercept = S::of(p).logit();
        self.confounded = false;
        self
    }

    /// Attach a censoring hazard.
    pub fn with_censoring(mut self, model: CensorModel<S>) -> Self {
        self.censoring = Some(model);
        self
    }
}

/// Draw a parameterization: the structural constants (horizon 257, lag 1,
/// noise 0.05, hazard intercept −5.5, accumulator hazard loading 0.5,
/// drift 0.006) are fixed; every remaining coefficient is an independent
/// N(0, 0.005²) draw. Holding the returned value fixed across replicates
/// makes the coefficient draw part of the design, not of the noise.
pub fn sample_params<S: Scalar>(seed: u64) -> DgpParams<S> {
    let mut rng = substream(seed, 0);
    let sd = 0.005;
    let mut draw = || S::of(sd) * S::std_normal(&mut rng);
    let mut lag_eq = || LagEq {
        intercept: draw(),
        v: [draw(), draw()],
        l: [draw(), draw(), draw()],
        a: draw(),
    };
    let feat1 = lag_eq();
    let feat2 = lag_eq();
    DgpParams {
        horizon: 257,
        effect_lag: 1,
        noise_sd: S::of(0.05),
        confounded: true,
        feat1,
        feat2,
        accum_drift: S::of(0.006),
        accum_v: [draw(), draw()],
        accum_l12: [draw(), draw()],
        haz_intercept: S::of(-5.5),
        haz_v: [draw(), draw()],
        haz_l: [draw(), draw(), S::of(0.5)],
        censoring: None,
    }
}

/// How treatment is assigned during simulation.
enum Arm<'r> {
    Observational,
    Intervened(&'r TreatmentRegime),
}

struct SubjectPath<S> {
    v: [S; 2],
    l: Vec<S>, // horizon × 3
    a: Vec<u8>,
    c: Vec<u8>,
    y: S,
}

#[inline]
fn dot2<S: Scalar>(c: &[S; 2], x: &[S; 2]) -> S {
    c[0] * x[0] + c[1] * x[1]
}

#[inline]
fn dot3<S: Scalar>(c: &[S; 3], x: &[S]) -> S {
    c[0] * x[0] + c[1] * x[1] + c[2] * x[2]
}

/// Simulate one subject. The draw layout is fixed — `v1 v2`, then per
/// step `z1 z2 z3 [u_censor] u_treat`, then `z_y` — regardless of arm or
/// realized path, which is what keeps arms noise-aligned.
fn simulate_subject<S: Scalar, R: Rng>(
    params: &DgpParams<S>,
    arm: &Arm<'_>,
    rng: &mut R,
) -> SubjectPath<S> {
    let t_star = params.horizon;
    let omega = params.effect_lag;
    let sd = params.noise_sd;
    let v = [S::std_normal(rng), S::std_normal(rng)];
    let mut l = vec![S::zero(); t_star * 3];
    let mut a = vec![0u8; t_star];
    let mut c = vec![0u8; t_star];
    let with_censoring = params.censoring.is_some();

    let mut censored = false;
    for t in 0..t_star {
        let (lag, a_prev): ([S; 3], u8) = if t == 0 {
            ([S::zero(); 3], 0)
        } else {
            let prev = &l[(t - 1) * 3..t * 3];
            ([prev[0], prev[1], prev[2]], a[t - 1])
        };
        // Treatment seen by this step's feature update: chosen ω steps ago.
        let a_lagged: S = if t >= omega {
            S::of_usize(a[t - omega] as usize)
        } else {
            S::zero()
        };
        let z1 = S::std_normal(rng);
        let z2 = S::std_normal(rng);
        let z3 = S::std_normal(rng);
        let f1 = params.feat1.intercept
            + dot2(&params.feat1.v, &v)
            + dot3(&params.feat1.l, &lag)
            + params.feat1.a * a_lagged
            + sd * z1;
        let f2 = params.feat2.intercept
            + dot2(&params.feat2.v, &v)
            + dot3(&params.feat2.l, &lag)
            + params.feat2.a * a_lagged
            + sd * z2;
        let f3 = params.accum_drift
            + dot2(&params.accum_v, &v)
            + lag[2]
            + params.accum_l12[0] * lag[0]
            + params.accum_l12[1] * lag[1]
            - params.accum_drift * a_lagged
            + sd * z3;
        l[t * 3] = f1;
        l[t * 3 + 1] = f2;
        l[t * 3 + 2] = f3;

        if with_censoring {
            let u_c = S::unit_uniform(rng);
            if let (Arm::Observational, Some(cm)) = (arm, params.censoring.as_ref()) {
                if !censored {
                    let haz = (cm.intercept
                        + dot2(&cm.v, &v)
                        + dot3(&cm.l, &l[t * 3..t * 3 + 3]))
                    .expit();
                    if u_c < haz {
                        censored = true;
                    }
                }
            }
            if censored {
                c[t] = 1;
            }
        }

        // The treatment draw is always consumed to keep streams aligned.
        let u_a = S::unit_uniform(rng);
        a[t] = match arm {
            Arm::Observational => {
                if a_prev == 1 {
                    1
                } else {
                    let haz = (params.haz_intercept
                        + dot2(&params.haz_v, &v)
                        + dot3(&params.haz_l, &l[t * 3..t * 3 + 3]))
                    .expit();
                    u8::from(u_a < haz)
                }
            }
            Arm::Intervened(regime) => regime.value_at(t).expect("plan fully specified"),
        };
    }

    let z_y = S::std_normal(rng);
    // The outcome is the accumulator's next update; with lag ω it sees the
    // treatment from `horizon − ω` (zero-based index `horizon − ω`).
    let a_for_y: S = if t_star >= omega {
        S::of_usize(a[t_star - omega] as usize)
    } else {
        S::zero()
    };
    let last = &l[(t_star - 1) * 3..t_star * 3];
    let y = params.accum_drift
        + dot2(&params.accum_v, &v)
        + last[2]
        + params.accum_l12[0] * last[0]
        + params.accum_l12[1] * last[1]
        - params.accum_drift * a_for_y
        + sd * z_y;

    SubjectPath {
        v,
        l,
        a,
        c,
        y: if censored { S::nan() } else { y },
    }
}

fn assemble<S: Scalar>(
    params: &DgpParams<S>,
    paths: Vec<SubjectPath<S>>,
) -> Panel<S> {
    let n = paths.len();
    let t = params.horizon;
    let mut v = Vec::with_capacity(n * 2);
    let mut l = Vec::with_capacity(n * t * 3);
    let mut a = Vec::with_capacity(n * t);
    let mut y = Vec::with_capacity(n);
    let mut c = params.censoring.as_ref().map(|_| Vec::with_capacity(n * t));
    for p in paths {
        v.extend_from_slice(&p.v);
        l.extend(p.l);
        a.extend(p.a);
        y.push(p.y);
        if let Some(dst) = c.as_mut() {
            dst.extend(p.c);
        }
    }
    Panel::new(n, t, 2, 3, v, l, a, y, c, None, None)
        .expect("simulated panels satisfy the panel invariants")
}

/// Generate an observational cohort of `n` subjects.
pub fn generate_panel<S: Scalar>(
    params: &DgpParams<S>,
    n: usize,
    seed: u64,
) -> Result<Panel<S>, DgpError> {
    params.validate()?;
    let paths = (0..n)
        .map(|i| simulate_subject(params, &Arm::Observational, &mut substream(seed, i as u64)))
        .collect();
    Ok(assemble(params, paths))
}

/// Generate a cohort with every treatment decision (and censoring) forced
/// by the plan — the counterfactual counterpart of [`generate_panel`]
/// under the same seed.
pub fn generate_intervened<S: Scalar>(
    params: &DgpParams<S>,
    regime: &TreatmentRegime,
    n: usize,
    seed: u64,
) -> Result<Panel<S>, DgpError> {
    params.validate()?;
    check_plan(params, regime)?;
    let paths = (0..n)
        .map(|i| {
            simulate_subject(params, &Arm::Intervened(regime), &mut substream(seed, i as u64))
        })
        .collect();
    Ok(assemble(params, paths))
}

fn check_plan<S: Scalar>(params: &DgpParams<S>, regime: &TreatmentRegime) -> Result<(), DgpError> {
    if regime.horizon() != params.horizon {
        return Err(DgpError::HorizonMismatch {
            plan: regime.horizon(),
            params: params.horizon,
        });
    }
    if !regime.fully_specified() {
        return Err(DgpError::PlanNotFullySpecified);
    }
    Ok(())
}

/// Monte Carlo value of a fully specified plan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthEstimate<S> {
    /// Mean counterfactual outcome.
    pub value: S,
    /// Monte Carlo standard error of `value`.
    pub mc_se: S,
    pub draws: usize,
}

/// Minimum number of Monte Carlo draws [`truth_mc`] accepts.
pub const TRUTH_MIN_DRAWS: usize = 1000;

/// Estimate the mean counterfactual outcome under `regime` by simulating
/// `m` intervened subjects. Deterministic in `seed` and independent of
/// parallelism: outcomes are accumulated in subject order.
pub fn truth_mc<S: Scalar>(
    params: &DgpParams<S>,
    regime: &TreatmentRegime,
    m: usize,
    seed: u64,
) -> Result<TruthEstimate<S>, DgpError> {
    params.validate()?;
    check_plan(params, regime)?;
    if m < TRUTH_MIN_DRAWS {
        return Err(DgpError::TooFewDraws {
            min: TRUTH_MIN_DRAWS,
            got: m,
        });
    }
    use rayon::prelude::*;
    let ys: Vec<S> = (0..m)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(seed, i as u64);
            simulate_subject(params, &Arm::Intervened(regime), &mut rng).y
        })
        .collect();
    // Sequential, index-ordered reduction so thread count cannot perturb
    // floating-point results.
    let mut sum = S::zero();
    for &y in &ys {
        sum += y;
    }
    let mean = sum / S::of_usize(m);
    let mut ss = S::zero();
    for &y in &ys {
        let d = y - mean;
        ss += d * d;
    }
    let var = ss / S::of_usize(m - 1);
    Ok(TruthEstimate {
        value: mean,
        mc_se: (var / S::of_usize(m)).sqrt(),
        draws: m,
    })
}

// ---------------------------------------------------------------------------
// Flat key-value parameter files.

impl<S: Scalar> DgpParams<S> {
    /// Serialize to the flat `key = value` text format (vectors are
    /// space-separated). Floats use shortest round-trip form, so writing
    /// and re-reading reproduces the parameters bit for bit.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "horizon = {}", self.horizon);
        let _ = writeln!(out, "effect_lag = {}", self.effect_lag);
        let _ = writeln!(out, "confounded = {}", self.confounded);
        let _ = writeln!(out, "noise_sd = {}", self.noise_sd);
        for (name, eq) in [("feat1", &self.feat1), ("feat2", &self.feat2)] {
            let _ = writeln!(out, "{name}_intercept = {}", eq.intercept);
            let _ = writeln!(out, "{name}_v = {} {}", eq.v[0], eq.v[1]);
            let _ = writeln!(out, "{name}_l = {} {} {}", eq.l[0], eq.l[1], eq.l[2]);
            let _ = writeln!(out, "{name}_a = {}", eq.a);
        }
        let _ = writeln!(out, "accum_drift = {}", self.accum_drift);
        let _ = writeln!(out, "accum_v = {} {}", self.accum_v[0], self.accum_v[1]);
        let _ = writeln!(
            out,
            "accum_l12 = {} {}",
            self.accum_l12[0], self.accum_l12[1]
        );
        let _ = writeln!(out, "haz_intercept = {}", self.haz_intercept);
        let _ = writeln!(out, "haz_v = {} {}", self.haz_v[0], self.haz_v[1]);
        let _ = writeln!(
            out,
            "haz_l = {} {} {}",
            self.haz_l[0], self.haz_l[1], self.haz_l[2]
        );
        if let Some(cm) = &self.censoring {
            let _ = writeln!(out, "censor_intercept = {}", cm.intercept);
            let _ = writeln!(out, "censor_v = {} {}", cm.v[0], cm.v[1]);
            let _ = writeln!(out, "censor_l = {} {} {}", cm.l[0], cm.l[1], cm.l[2]);
        }
        out
    }

    pub fn write_text(&self, path: &Path) -> Result<(), DgpError> {
        std::fs::write(path, self.to_text()).map_err(|e| DgpError::Io {
            path: path.display().to_string(),
            source: e,
        })
    }

    /// Parse the format produced by [`DgpParams::to_text`].
    pub fn parse_text(text: &str, origin: &str) -> Result<Self, DgpError> {
        use std::collections::HashMap;
        let mut kv: HashMap<&str, (usize, &str)> = HashMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| DgpError::Parse {
                path: origin.to_string(),
                line: idx + 1,
                msg: "expected `key = value`".into(),
            })?;
            kv.insert(k.trim(), (idx + 1, v.trim()));
        }
        let err = |line: usize, msg: String| DgpError::Parse {
            path: origin.to_string(),
            line,
            msg,
        };
        let take = |kv: &mut HashMap<&str, (usize, &str)>, key: &str| -> Result<(usize, String), DgpError> {
            kv.remove(key)
                .map(|(l, v)| (l, v.to_string()))
                .ok_or_else(|| err(0, format!("missing key `{key}`")))
        };
        fn floats<S: Scalar>(
            raw: &str,
            want: usize,
            line: usize,
            origin: &str,
        ) -> Result<Vec<S>, DgpError> {
            let parts: Vec<&str> = raw.split_whitespace().collect();
            if parts.len() != want {
                return Err(DgpError::Parse {
                    path: origin.to_string(),
                    line,
                    msg: format!("expected {want} numbers, found {}", parts.len()),
                });
            }
            parts
                .iter()
                .map(|p| {
                    p.parse::<f64>().map(S::of).map_err(|_| DgpError::Parse {
                        path: origin.to_string(),
                        line,
                        msg: format!("bad number `{p}`"),
                    })
                })
                .collect()
        }
        let mut kv2 = kv;
        let one = |kv2: &mut HashMap<&str, (usize, &str)>, key: &str| -> Result<S, DgpError> {
            let (l, v) = take(kv2, key)?;
            Ok(floats::<S>(&v, 1, l, origin)?[0])
        };
        let two = |kv2: &mut HashMap<&str, (usize, &str)>, key: &str| -> Result<[S; 2], DgpError> {
            let (l, v) = take(kv2, key)?;
            let f = floats::<S>(&v, 2, l, origin)?;
            Ok([f[0], f[1]])
        };
        let three =
            |kv2: &mut HashMap<&str, (usize, &str)>, key: &str| -> Result<[S; 3], DgpError> {
                let (l, v) = take(kv2, key)?;
                let f = floats::<S>(&v, 3, l, origin)?;
                Ok([f[0], f[1], f[2]])
            };

        let (l, v) = take(&mut kv2, "horizon")?;
        let horizon: usize = v
            .parse()
            .map_err(|_| err(l, format!("bad horizon `{v}`")))?;
        let (l, v) = take(&mut kv2, "effect_lag")?;
        let effect_lag: usize = v
            .parse()
            .map_err(|_| err(l, format!("bad effect_lag `{v}`")))?;
        let (l, v) = take(&mut kv2, "confounded")?;
        let confounded: bool = v
            .parse()
            .map_err(|_| err(l, format!("bad confounded `{v}`")))?;

        let mut lag_eq = |name: &str| -> Result<LagEq<S>, DgpError> {
            Ok(LagEq {
                intercept: one(&mut kv2, &format!("{name}_intercept"))?,
                v: two(&mut kv2, &format!("{name}_v"))?,
                l: three(&mut kv2, &format!("{name}_l"))?,
                a: one(&mut kv2, &format!("{name}_a"))?,
            })
        };
        let feat1 = lag_eq("feat1")?;
        let feat2 = lag_eq("feat2")?;
        let noise_sd = one(&mut kv2, "noise_sd")?;
        let accum_drift = one(&mut kv2, "accum_drift")?;
        let accum_v = two(&mut kv2, "accum_v")?;
        let accum_l12 = two(&mut kv2, "accum_l12")?;
        let haz_intercept = one(&mut kv2, "haz_intercept")?;
        let haz_v = two(&mut kv2, "haz_v")?;
        let haz_l = three(&mut kv2, "haz_l")?;
        let censoring = if kv2.contains_key("censor_intercept") {
            Some(CensorModel {
                intercept: one(&mut kv2, "censor_intercept")?,
                v: two(&mut kv2, "censor_v")?,
                l: three(&mut kv2, "censor_l")?,
            })
        } else {
            None
        };
        if let Some((&key, &(line, _))) = kv2.iter().next() {
            return Err(err(line, format!("unknown key `{key}`")));
        }
        let params = DgpParams {
            horizon,
            effect_lag,
            noise_sd,
            confounded,
            feat1,
            feat2,
            accum_drift,
            accum_v,
            accum_l12,
            haz_intercept,
            haz_v,
            haz_l,
            censoring,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn read_text(path: &Path) -> Result<Self, DgpError> {
        let text = std::fs::read_to_string(path).map_err(|e| DgpError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Self::parse_text(&text, &path.display().to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn params_text_round_trip_is_bitwise() {
        let p: DgpParams<f64> = sample_params(42);
        let q = DgpParams::parse_text(&p.to_text(), "mem").unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn randomized_calibration_targets_quarter_survival() {
        let p: DgpParams<f64> = sample_params(1).into_randomized();
        let haz = p.haz_intercept.expit();
        let survive = (1.0 - haz).powi(256);
        assert!((survive - 0.25).abs() < 1e-10);
        assert!(p.validate().is_ok());
    }

    #[test]
    fn unknown_key_is_rejected() {
        let mut text = sample_params::<f64>(3).to_text();
        text.push_str("mystery = 1\n");
        assert!(matches!(
            DgpParams::<f64>::parse_text(&text, "mem"),
            Err(DgpError::Parse { .. })
        ));
    }
}
