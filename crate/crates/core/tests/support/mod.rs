//! Shared fixtures and independent re-implementations used as oracles by
//! the integration tests. Everything here deliberately avoids the library
//! code paths it exists to check: values come from exhaustive path sums
//! or textbook algorithms, not from the crate's dynamic programs.

#![allow(dead_code)] // compiled once per test binary; not all use every helper

use binfx::coarsen::CoarseGrid;
use binfx::estimators::PropensityModel;
use binfx::exactg::DiscreteMdp;
use binfx::panel::{Panel, TreatmentRegime};
use binfx::regress::LogisticFit;
use binfx::Scalar;
use rand::Rng;

/// Random process with everything strictly positive, so every state and
/// treatment history is reachable.
pub fn random_mdp<R: Rng>(rng: &mut R, horizon: usize, n_states: usize) -> DiscreteMdp<f64> {
    let n = n_states;
    let mut row = |len: usize| -> Vec<f64> {
        let raw: Vec<f64> = (0..len).map(|_| 0.05 + rng.random::<f64>()).collect();
        let sum: f64 = raw.iter().sum();
        raw.into_iter().map(|x| x / sum).collect()
    };
    let initial = row(n);
    let steps = horizon - 1;
    let mut transition = Vec::with_capacity(steps * 2 * n * n);
    for _ in 0..steps * 2 * n {
        transition.extend(row(n));
    }
    let behavior: Vec<f64> = (0..horizon * n)
        .map(|_| 0.1 + 0.8 * rng.random::<f64>())
        .collect();
    let outcome: Vec<f64> = (0..2 * n).map(|_| 2.0 * rng.random::<f64>()).collect();
    DiscreteMdp::new(
        horizon,
        (0..n).map(|s| format!("s{s}")).collect(),
        initial,
        transition,
        behavior,
        outcome,
    )
    .unwrap()
}

/// A treatment plan compatible with the grid: never, immediate, or a jump
/// at a retained index.
pub fn random_compatible_regime<R: Rng>(
    rng: &mut R,
    horizon: usize,
    grid: &CoarseGrid,
) -> TreatmentRegime {
    let retained = grid.indices();
    match rng.random_range(0..3u8) {
        0 => TreatmentRegime::never(horizon),
        1 => TreatmentRegime::immediate(horizon),
        _ => {
            let j = retained[rng.random_range(0..retained.len())];
            TreatmentRegime::jump_at(j, horizon).unwrap()
        }
    }
}

/// Exhaustive path sum for the mean outcome under a forced plan —
/// the brute-force counterpart of `gform_uncoarsened`.
pub fn path_enum_value(mdp: &DiscreteMdp<f64>, regime: &TreatmentRegime) -> f64 {
    let n = mdp.n_states();
    let h = mdp.horizon();
    let mut acc = 0.0;
    let mut stack: Vec<(usize, usize, f64)> = (0..n)
        .filter(|&s| mdp.initial()[s] > 0.0)
        .map(|s| (0usize, s, mdp.initial()[s]))
        .collect();
    while let Some((t, s, p)) = stack.pop() {
        let a = regime.value_at(t).unwrap();
        if t == h - 1 {
            acc += p * mdp.outcome_mean(a, s);
            continue;
        }
        let row = mdp.transition_row(t, a, s);
        for (sp, &pt) in row.iter().enumerate() {
            if pt > 0.0 {
                stack.push((t + 1, sp, p * pt));
            }
        }
    }
    acc
}

/// Exhaustive sum over joint (state, treatment) trajectories under the
/// policy that forces the plan at retained times and follows the
/// behavioral hazard elsewhere — the brute-force counterpart of both
/// `stochastic_policy_value` and `gform_coarsened`.
pub fn joint_enum_stochastic_value(
    mdp: &DiscreteMdp<f64>,
    regime: &TreatmentRegime,
    grid: &CoarseGrid,
) -> f64 {
    let h = mdp.horizon();
    let mut acc = 0.0;
    // (t, state, treatment after the time-t decision, probability).
    let mut stack: Vec<(usize, usize, u8, f64)> = Vec::new();
    for s in 0..mdp.n_states() {
        let p0 = mdp.initial()[s];
        if p0 > 0.0 {
            // The first index is always retained, so the decision at
            // t = 0 is forced.
            stack.push((0, s, regime.value_at(0).unwrap(), p0));
        }
    }
    while let Some((t, s, a, p)) = stack.pop() {
        if t == h - 1 {
            acc += p * mdp.outcome_mean(a, s);
            continue;
        }
        let row = mdp.transition_row(t, a, s);
        for (sp, &pt) in row.iter().enumerate() {
            if pt == 0.0 {
                continue;
            }
            let q = p * pt;
            if grid.retains(t + 1) {
                stack.push((t + 1, sp, regime.value_at(t + 1).unwrap(), q));
            } else if a == 1 {
                stack.push((t + 1, sp, 1, q));
            } else {
                let haz = mdp.behavior_prob(t + 1, sp);
                if haz < 1.0 {
                    stack.push((t + 1, sp, 0, q * (1.0 - haz)));
                }
                if haz > 0.0 {
                    stack.push((t + 1, sp, 1, q * haz));
                }
            }
        }
    }
    acc
}

/// Backward-induction extremes of E[Y(d)] over deterministic interior
/// policies (the plan forced at retained times, treatment absorbing).
/// Pointwise optimization at each free (time, state) decision reaches the
/// same extremes as enumerating whole policies, because decisions at
/// distinct points are never in conflict.
pub fn bellman_policy_extremes(
    mdp: &DiscreteMdp<f64>,
    regime: &TreatmentRegime,
    grid: &CoarseGrid,
) -> (f64, f64) {
    let max = bellman(mdp, regime, grid, true);
    let min = bellman(mdp, regime, grid, false);
    (min, max)
}

fn bellman(mdp: &DiscreteMdp<f64>, regime: &TreatmentRegime, grid: &CoarseGrid, maximize: bool) -> f64 {
    let n = mdp.n_states();
    let h = mdp.horizon();
    // x[a][s]: value given the time-t decision already made.
    let mut x = vec![[0.0f64; 2]; n];
    for (s, xs) in x.iter_mut().enumerate() {
        *xs = [mdp.outcome_mean(0, s), mdp.outcome_mean(1, s)];
    }
    for t in (0..h - 1).rev() {
        // y[s][a_prev]: value at time t+1 before its decision.
        let mut y = vec![[0.0f64; 2]; n];
        for (s, val) in y.iter_mut().enumerate() {
            let decided = |a: usize| x[s][a];
            if grid.retains(t + 1) {
                let a = regime.value_at(t + 1).unwrap() as usize;
                *val = [decided(a), decided(a)];
            } else {
                let free = if maximize {
                    decided(0).max(decided(1))
                } else {
                    decided(0).min(decided(1))
                };
                *val = [free, decided(1)];
            }
        }
        let mut x_new = vec![[0.0f64; 2]; n];
        for s in 0..n {
            for a in 0..2usize {
                let row = mdp.transition_row(t, a as u8, s);
                let mut acc = 0.0;
                for (sp, &p) in row.iter().enumerate() {
                    acc += p * y[sp][a];
                }
                x_new[s][a] = acc;
            }
        }
        x = x_new;
    }
    let a0 = regime.value_at(0).unwrap() as usize;
    (0..n).map(|s| mdp.initial()[s] * x[s][a0]).sum()
}

/// Process whose transitions respond to treatment only at source times
/// that are positive multiples of `omega`; everywhere else the treated
/// and untreated transition tables coincide. On a uniform grid of width
/// δ, interior treatment can move a bin-end state distribution iff some
/// sensitive source falls strictly inside a bin — which happens exactly
/// when δ does not divide ω (for horizons `2ω + 1` with ω a power of
/// two, that is exactly δ > ω).
pub fn sensitivity_limited_mdp(omega: usize, horizon: usize) -> DiscreteMdp<f64> {
    let n = 2;
    let insensitive = [0.85, 0.15, 0.25, 0.75]; // same for both treatments
    let untreated = insensitive;
    let treated = [0.10, 0.90, 0.60, 0.40]; // very different from untreated
    let steps = horizon - 1;
    let mut transition = Vec::with_capacity(steps * 2 * n * n);
    for t in 0..steps {
        let sensitive = t > 0 && t % omega == 0;
        transition.extend_from_slice(&untreated);
        if sensitive {
            transition.extend_from_slice(&treated);
        } else {
            transition.extend_from_slice(&insensitive);
        }
    }
    let behavior: Vec<f64> = (0..horizon * n)
        .map(|i| if i % n == 0 { 0.25 } else { 0.4 })
        .collect();
    let outcome = vec![0.0, 1.0, 0.2, 1.4];
    DiscreteMdp::new(
        horizon,
        vec!["lo".into(), "hi".into()],
        vec![0.7, 0.3],
        transition,
        behavior,
        outcome,
    )
    .unwrap()
}

// ---------------------------------------------------------------------------
// Panel-level helpers for the estimator oracles
// ---------------------------------------------------------------------------

/// Decode the indicator-coded state of subject `i` at time `t` in a panel
/// produced by `population_panel` / `sample_panel` (state `s > 0` sets
/// feature column `s - 1`; the all-zero row is state 0).
pub fn state_of_row(panel: &Panel<f64>, i: usize, t: usize) -> usize {
    let row = panel.l_row(i, t);
    row.iter().position(|&x| x == 1.0).map_or(0, |c| c + 1)
}

/// Saturated logistic fit reproducing one probability per state exactly,
/// laid out for the `[1, state indicators...]` hazard design.
fn saturated_fit(rates: &[f64]) -> LogisticFit<f64> {
    let base = rates[0].logit();
    let mut coefficients = vec![base];
    coefficients.extend(rates[1..].iter().map(|r| r.logit() - base));
    let mut column_names = vec!["intercept".to_string()];
    column_names.extend((0..rates.len() - 1).map(|k| format!("l{k}")));
    LogisticFit {
        coefficients,
        column_names,
        n_used: 0,
        iterations: 0,
        converged: true,
        fallback: None,
        degenerate: false,
    }
}

/// Per-time, per-state weighted event rates over an at-risk set, turned into
/// exact saturated fits. States with no at-risk mass (or a degenerate rate)
/// get one half; such states are never queried by the estimators.
fn rate_fits(
    panel: &Panel<f64>,
    at_risk: impl Fn(usize, usize) -> bool,
    event: impl Fn(usize, usize) -> bool,
) -> Vec<LogisticFit<f64>> {
    assert_eq!(panel.v_dim(), 0, "rate fits assume indicator-only designs");
    let n_states = panel.l_dim() + 1;
    (0..panel.horizon())
        .map(|t| {
            let mut mass = vec![0.0; n_states];
            let mut hits = vec![0.0; n_states];
            for i in 0..panel.n_subjects() {
                if !at_risk(i, t) || !panel.l_row(i, t).iter().all(|x| x.is_finite()) {
                    continue;
                }
                let s = state_of_row(panel, i, t);
                mass[s] += panel.weight(i);
                if event(i, t) {
                    hits[s] += panel.weight(i);
                }
            }
            let rates: Vec<f64> = mass
                .iter()
                .zip(&hits)
                .map(|(&m, &h)| {
                    let r = if m > 0.0 { h / m } else { 0.5 };
                    if r > 0.0 && r < 1.0 {
                        r
                    } else {
                        0.5
                    }
                })
                .collect();
            saturated_fit(&rates)
        })
        .collect()
}

/// The exact treatment-initiation hazards of a (population) panel: per-time,
/// per-state weighted initiation rates among the at-risk rows, as saturated
/// logistic fits. On a population panel these are the true hazards of the
/// observed law, so a model built from them carries no fitting error.
pub fn exact_hazard_fits(panel: &Panel<f64>) -> Vec<LogisticFit<f64>> {
    rate_fits(
        panel,
        |i, t| {
            (t == 0 || panel.a_at(i, t - 1) == 0)
                && panel.c_at(i, t) == 0
                && panel.d_at(i, t) == 0
        },
        |i, t| panel.a_at(i, t) == 1,
    )
}

/// The exact censoring hazards of a panel, analogous to
/// [`exact_hazard_fits`].
pub fn exact_censor_fits(panel: &Panel<f64>) -> Vec<LogisticFit<f64>> {
    rate_fits(
        panel,
        |i, t| (t == 0 || panel.c_at(i, t - 1) == 0) && panel.d_at(i, t) == 0,
        |i, t| panel.c_at(i, t) == 1,
    )
}

/// A propensity model whose hazards are the panel's exact population rates.
pub fn exact_propensity_model(panel: &Panel<f64>) -> PropensityModel<f64> {
    let censoring = panel.has_censoring().then(|| exact_censor_fits(panel));
    PropensityModel::from_fits(panel.horizon(), false, exact_hazard_fits(panel), censoring)
        .unwrap()
}

/// Random process with a third, absorbing "exit" state: transitions send
/// some probability mass there from every live state, nothing leaves it,
/// no treatment initiates in it, and the final outcome there is the same
/// under both arms — an exit settles the outcome, so treatment prescribed
/// after it must not be able to change anything.
pub fn exit_mdp<R: Rng>(rng: &mut R, horizon: usize) -> DiscreteMdp<f64> {
    let n = 3; // live states s0, s1 and the absorbing exit
    let steps = horizon - 1;
    let mut transition = Vec::with_capacity(steps * 2 * n * n);
    for _ in 0..steps {
        for _a in 0..2 {
            for s in 0..n {
                if s == 2 {
                    transition.extend_from_slice(&[0.0, 0.0, 1.0]);
                } else {
                    let exit = 0.05 + 0.25 * rng.random::<f64>();
                    let live0 = 0.05 + rng.random::<f64>();
                    let live1 = 0.05 + rng.random::<f64>();
                    let scale = (1.0 - exit) / (live0 + live1);
                    transition.extend_from_slice(&[live0 * scale, live1 * scale, exit]);
                }
            }
        }
    }
    let behavior: Vec<f64> = (0..horizon * n)
        .map(|i| if i % n == 2 { 0.0 } else { 0.1 + 0.8 * rng.random::<f64>() })
        .collect();
    let mut outcome: Vec<f64> = (0..2 * n).map(|_| 2.0 * rng.random::<f64>()).collect();
    outcome[n + 2] = outcome[2]; // the exit outcome ignores the arm
    let init0 = 0.3 + 0.4 * rng.random::<f64>();
    DiscreteMdp::new(
        horizon,
        vec!["s0".into(), "s1".into(), "exit".into()],
        vec![init0, 1.0 - init0, 0.0],
        transition,
        behavior,
        outcome,
    )
    .unwrap()
}

/// Rebuild a panel with its terminal-event column set from an absorbing
/// state's indicator (feature column `exit_state - 1`).
pub fn attach_exit_flags(panel: &Panel<f64>, exit_state: usize) -> Panel<f64> {
    let (n, h) = (panel.n_subjects(), panel.horizon());
    let col = exit_state - 1;
    let mut l = Vec::with_capacity(n * h * panel.l_dim());
    let mut a = Vec::with_capacity(n * h);
    let mut d = Vec::with_capacity(n * h);
    let mut y = Vec::with_capacity(n);
    let mut w = Vec::with_capacity(n);
    for i in 0..n {
        for t in 0..h {
            l.extend_from_slice(panel.l_row(i, t));
            a.push(panel.a_at(i, t));
            d.push(u8::from(panel.l_row(i, t)[col] == 1.0));
        }
        y.push(panel.y_of(i));
        w.push(panel.weight(i));
    }
    Panel::new(n, h, 0, panel.l_dim(), Vec::new(), l, a, y, None, Some(d), Some(w)).unwrap()
}

/// Random process whose transitions ignore treatment and whose outcome is
/// shifted by a constant under treatment, with no initiation possible at
/// the final time point. On such a process a regression design that is
/// saturated in the state and linear in the current treatment is correctly
/// specified at every recursion step.
pub fn additive_mdp<R: Rng>(
    rng: &mut R,
    horizon: usize,
    n_states: usize,
    effect: f64,
) -> DiscreteMdp<f64> {
    let n = n_states;
    let mut row = |len: usize| -> Vec<f64> {
        let raw: Vec<f64> = (0..len).map(|_| 0.05 + rng.random::<f64>()).collect();
        let sum: f64 = raw.iter().sum();
        raw.into_iter().map(|x| x / sum).collect()
    };
    let initial = row(n);
    let steps = horizon - 1;
    let mut transition = Vec::with_capacity(steps * 2 * n * n);
    for _ in 0..steps {
        let shared: Vec<Vec<f64>> = (0..n).map(|_| row(n)).collect();
        for _a in 0..2 {
            for r in &shared {
                transition.extend_from_slice(r);
            }
        }
    }
    let behavior: Vec<f64> = (0..horizon * n)
        .map(|i| if i / n == horizon - 1 { 0.0 } else { 0.1 + 0.8 * rng.random::<f64>() })
        .collect();
    let base: Vec<f64> = (0..n).map(|_| 2.0 * rng.random::<f64>()).collect();
    let mut outcome = base.clone();
    outcome.extend(base.iter().map(|y| y + effect));
    DiscreteMdp::new(
        horizon,
        (0..n).map(|s| format!("s{s}")).collect(),
        initial,
        transition,
        behavior,
        outcome,
    )
    .unwrap()
}

/// Expand a panel (typically a population panel) with censoring that strikes
/// independently of state with per-time probabilities `kappas`: each source
/// row splits into one variant censored at each time (outcome missing,
/// covariates blank after the censoring time) plus the uncensored variant,
/// with weights multiplied by the censoring-time probabilities. Because the
/// mechanism ignores the state, every estimand is unchanged.
pub fn with_independent_censoring(panel: &Panel<f64>, kappas: &[f64]) -> Panel<f64> {
    let (n, h, ld) = (panel.n_subjects(), panel.horizon(), panel.l_dim());
    assert_eq!(kappas.len(), h);
    assert!(kappas.iter().all(|k| *k > 0.0 && *k < 1.0));
    assert!(!panel.has_death(), "expansion assumes no terminal events");
    let rows = n * (h + 1);
    let mut l = Vec::with_capacity(rows * h * ld);
    let mut a = Vec::with_capacity(rows * h);
    let mut c = Vec::with_capacity(rows * h);
    let mut y = Vec::with_capacity(rows);
    let mut w = Vec::with_capacity(rows);
    for i in 0..n {
        // Censoring at time s (observation covers times 0..=s, with the
        // state at s still recorded), then the fully observed variant.
        for s in 0..=h {
            let mut prob = 1.0;
            for k in kappas.iter().take(s.min(h)) {
                prob *= 1.0 - k;
            }
            if s < h {
                prob *= kappas[s];
            }
            for t in 0..h {
                if t <= s {
                    l.extend_from_slice(panel.l_row(i, t));
                } else {
                    l.extend(std::iter::repeat_n(f64::NAN, ld));
                }
                a.push(panel.a_at(i, t));
                c.push(u8::from(t >= s));
            }
            y.push(if s < h { f64::NAN } else { panel.y_of(i) });
            w.push(panel.weight(i) * prob);
        }
    }
    Panel::new(rows, h, 0, ld, Vec::new(), l, a, y, Some(c), None, Some(w)).unwrap()
}
