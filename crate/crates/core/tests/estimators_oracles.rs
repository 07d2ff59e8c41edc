//! Oracle tests for the panel estimators. On a population panel that holds
//! an exact discrete law with a saturated (indicator) state design, each
//! estimator has a closed-form target: the marginalization computed by the
//! independent dynamic programs in `exactg`. Equalities are asserted to
//! machine precision where the hazards are injected exactly, to solver
//! precision where they are fitted, and to ridge precision where a voided
//! indicator column makes the regressions rank-deficient by construction.

mod support;

use binfx::coarsen::{coarse_indices, coarsen_panel, coarsen_regime};
use binfx::estimators::{
    bootstrap_ci, cumulative_probs, estimate_with, fit_propensity, ipw, ir, tmle, EstimatorError,
    EstimatorSpec, Method,
};
use binfx::exactg::{
    gform_coarsened, gform_uncoarsened, population_panel, sample_panel, DiscreteMdp,
};
use binfx::panel::{Panel, TreatmentRegime};
use binfx::rng::substream;
use rand::Rng;
use rayon::ThreadPoolBuilder;
use support::{
    additive_mdp, attach_exit_flags, exact_propensity_model, exit_mdp, random_compatible_regime,
    random_mdp, with_independent_censoring,
};

fn prob_row<R: Rng>(rng: &mut R, len: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..len).map(|_| 0.05 + rng.random::<f64>()).collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / sum).collect()
}

/// The regression and targeted estimators reproduce the coarse-grid
/// marginalization on population panels at every bin width: exactly under
/// the true hazards (where the targeting step also provably adds nothing),
/// and to solver precision under fitted hazards. The weighting estimator
/// joins them — with a self-normalizing denominator of exactly one — on the
/// fine grid and for plans settled at entry; on wider bins its
/// state-conditional hazard product is a different functional (see the note
/// in the loop body), so there it is only held to agree with its own
/// exact-hazard value.
#[test]
fn all_three_estimators_match_exact_marginalization_on_population_panels() {
    for k in 0..12u64 {
        let mut rng = substream(0xe571, k);
        let horizon = 3 + (k as usize % 3); // 3..=5
        let n_states = 2 + (k as usize % 2); // 2..=3
        let mdp = random_mdp(&mut rng, horizon, n_states);
        let mut deltas = vec![1usize, 2, horizon - 1];
        deltas.dedup();
        for &delta in &deltas {
            let grid = coarse_indices(horizon, delta).unwrap();
            let fine = random_compatible_regime(&mut rng, horizon, &grid);
            let truth = gform_coarsened(&mdp, &fine, &grid).unwrap();
            let panel = population_panel(&mdp, &grid).unwrap();
            let plan = coarsen_regime(&fine, &grid).unwrap();
            let tag = format!("instance {k} δ={delta}");

            let est_ir = ir(&panel, &plan, false).unwrap();
            assert!(!est_ir.undefined, "{tag}: recursion undefined");
            assert!(est_ir.ess.is_nan(), "{tag}: the recursion carries no weights");
            assert!(
                (est_ir.psi - truth).abs() < 1e-10,
                "{tag}: recursion {} vs truth {truth}",
                est_ir.psi
            );

            let exact = exact_propensity_model(&panel);
            let est_ipw = ipw(&panel, &plan, &exact, None).unwrap();
            assert!(est_ipw.n_followers > 0, "{tag}: no followers");
            assert!(
                est_ipw.ess > 0.0 && est_ipw.ess <= est_ipw.n_followers as f64 + 1e-9,
                "{tag}: effective sample size {} out of range",
                est_ipw.ess
            );
            assert!(
                est_ipw.min_weight > 0.0 && est_ipw.min_weight <= est_ipw.max_weight,
                "{tag}: weight range bad"
            );

            let est_tmle = tmle(&panel, &plan, &exact, false, None).unwrap();
            assert!(
                (est_tmle.psi - truth).abs() < 1e-10,
                "{tag}: exact-hazard targeting {} vs truth {truth}",
                est_tmle.psi
            );
            assert!(
                (est_tmle.psi - est_ir.psi).abs() < 1e-10,
                "{tag}: targeting must add nothing when the recursion is saturated"
            );

            let fitted = fit_propensity(&panel, false).unwrap();
            let f_ipw = ipw(&panel, &plan, &fitted, None).unwrap();
            assert!(
                (f_ipw.psi - est_ipw.psi).abs() < 1e-6,
                "{tag}: fitted-hazard weighting {} vs exact-hazard {}",
                f_ipw.psi,
                est_ipw.psi
            );
            let f_tmle = tmle(&panel, &plan, &fitted, false, None).unwrap();
            assert!(
                (f_tmle.psi - truth).abs() < 1e-6,
                "{tag}: fitted-hazard targeting {} vs truth {truth}",
                f_tmle.psi
            );

            // The hazards condition on the current state alone. On the fine
            // grid that is the whole treatment history, and for a plan whose
            // only decision is at entry the single entry factor is exact at
            // any width. Between those cases the subsampled treatment
            // process is not Markov in the bin-end state — how likely a
            // subject was to initiate by the end of a bin depends on where
            // the bin started — so the product of state-conditional hazards
            // is a different functional and the weighting estimator parts
            // ways with the marginalization. The recursion is immune: each
            // refit integrates the full bin kernel by construction.
            if delta == 1 || plan.jump_index() == Some(0) {
                assert!(
                    (est_ipw.psi - truth).abs() < 1e-10,
                    "{tag}: exact-hazard weighting {} vs truth {truth}",
                    est_ipw.psi
                );
                assert!(
                    (f_ipw.psi - truth).abs() < 1e-6,
                    "{tag}: fitted-hazard weighting {} vs truth {truth}",
                    f_ipw.psi
                );

                // Each follower contributes weight / cumulative probability
                // = its plan-world path probability, so the sum is one.
                let probs = cumulative_probs(&exact, &panel, &plan).unwrap();
                assert_eq!(probs.n_floored(), 0, "{tag}: unexpected probability clamping");
                let mut denom = 0.0;
                for i in 0..panel.n_subjects() {
                    if panel.follows_fully(&plan, i) {
                        denom += panel.weight(i) / probs.through_end(i);
                    }
                }
                assert!((denom - 1.0).abs() < 1e-10, "{tag}: denominator {denom}");
            }
        }
    }
}

/// With an intercept-only outcome model the fluctuation step *is* the
/// weighting estimator: the deepest intercept update lands on the
/// self-normalized weighted follower mean and every later step passes the
/// constant through untouched. The two estimates agree to machine precision
/// on the same fitted hazards — and both still land on the truth, because
/// the weights alone identify it while the outcome model is useless.
#[test]
fn intercept_only_targeting_collapses_to_the_weighting_estimator() {
    for k in 0..6u64 {
        let mut rng = substream(0x10c0, k);
        let horizon = 3 + (k as usize % 3);
        let mdp = random_mdp(&mut rng, horizon, 2);
        let grid = coarse_indices(horizon, 1).unwrap();
        let panel = population_panel(&mdp, &grid).unwrap();
        for plan in [
            TreatmentRegime::never(horizon),
            TreatmentRegime::immediate(horizon),
            TreatmentRegime::jump_at(horizon - 2, horizon).unwrap(),
        ] {
            let truth = gform_uncoarsened(&mdp, &plan).unwrap();
            let mut flat_q = EstimatorSpec::new(Method::Tmle);
            flat_q.intercept_only_q = true;
            let collapsed = estimate_with(&panel, &plan, &flat_q).unwrap();
            let weighted = estimate_with(&panel, &plan, &EstimatorSpec::new(Method::Ipw)).unwrap();
            assert_eq!(collapsed.n_followers, weighted.n_followers, "instance {k}");
            assert!(
                (collapsed.psi - weighted.psi).abs() < 1e-10,
                "instance {k}: flat-model targeting {} vs weighting {}",
                collapsed.psi,
                weighted.psi
            );
            assert!(
                (weighted.psi - truth).abs() < 1e-6,
                "instance {k}: weighting {} vs truth {truth}",
                weighted.psi
            );
        }
    }
}

/// Terminal events pin the recursion to the observed outcome, freeze the
/// weights, and drop out of every hazard fit. Over a process with an
/// absorbing exit state the estimators still recover the exact
/// marginalization — to ridge precision, because the exit indicator is
/// all-zero among regression rows and every fit is rank-deficient by
/// construction, which must be surfaced in the diagnostics.
#[test]
fn terminal_events_pin_outcomes_and_freeze_weights() {
    for k in 0..4u64 {
        let mut rng = substream(0xdead, k);
        let horizon = 5usize;
        let mdp = exit_mdp(&mut rng, horizon);
        let id = coarse_indices(horizon, 1).unwrap();
        let flagged = attach_exit_flags(&population_panel(&mdp, &id).unwrap(), 2);
        for delta in [1usize, 2] {
            let grid = coarse_indices(horizon, delta).unwrap();
            let panel = coarsen_panel(&flagged, &grid).unwrap();
            assert!(panel.has_death());
            for fine in [
                TreatmentRegime::never(horizon),
                TreatmentRegime::immediate(horizon),
                TreatmentRegime::jump_at(2, horizon).unwrap(),
            ] {
                let tag = format!("instance {k} δ={delta} jump {:?}", fine.jump_index());
                let plan = coarsen_regime(&fine, &grid).unwrap();
                let truth = gform_coarsened(&mdp, &fine, &grid).unwrap();

                let est_ir = ir(&panel, &plan, false).unwrap();
                assert!(
                    est_ir.n_degenerate_fits > 0,
                    "{tag}: the exit indicator must void a regression column"
                );
                assert!(
                    (est_ir.psi - truth).abs() < 1e-5,
                    "{tag}: recursion {} vs truth {truth}",
                    est_ir.psi
                );

                let exact = exact_propensity_model(&panel);
                let e_tmle = tmle(&panel, &plan, &exact, false, None).unwrap();
                assert!(
                    (e_tmle.psi - truth).abs() < 1e-5,
                    "{tag}: exact-hazard targeting {} vs truth {truth}",
                    e_tmle.psi
                );
                let fitted = fit_propensity(&panel, false).unwrap();
                assert!(fitted.n_degenerate_fits() > 0, "{tag}: hazard fits see the void column");
                let f_tmle = tmle(&panel, &plan, &fitted, false, None).unwrap();
                assert!(
                    (f_tmle.psi - truth).abs() < 1e-5,
                    "{tag}: fitted-hazard targeting {} vs truth {truth}",
                    f_tmle.psi
                );

                // Pure weighting is held to the marginalization only where
                // it identifies it. A plan that initiates after entry drops
                // subjects who exit untreated first, so it identifies a
                // survivor-restricted mean instead (any width); and on a
                // coarse grid the state-conditional hazard product is a
                // different functional for any plan with post-entry
                // decisions (see the note in the saturated test above).
                // That leaves plans settled at entry, plus the never-treat
                // plan on the fine grid.
                let weighting_identifies = fine.jump_index() == Some(0)
                    || (fine.jump_index().is_none() && delta == 1);
                if !weighting_identifies {
                    continue;
                }
                let e_ipw = ipw(&panel, &plan, &exact, None).unwrap();
                assert!(
                    (e_ipw.psi - truth).abs() < 1e-10,
                    "{tag}: exact-hazard weighting {} vs truth {truth}",
                    e_ipw.psi
                );
                let probs = cumulative_probs(&exact, &panel, &plan).unwrap();
                let mut denom = 0.0;
                for i in 0..panel.n_subjects() {
                    if panel.follows_fully(&plan, i) {
                        denom += panel.weight(i) / probs.through_end(i);
                    }
                }
                assert!((denom - 1.0).abs() < 1e-10, "{tag}: denominator {denom}");
                // Every hazard fit here is rank-deficient (the exit column),
                // so the solver converges onto a ridge fixed point rather
                // than the maximum-likelihood rates: ridge precision, not
                // solver precision.
                let f_ipw = ipw(&panel, &plan, &fitted, None).unwrap();
                assert!(
                    (f_ipw.psi - truth).abs() < 1e-5,
                    "{tag}: fitted-hazard weighting {} vs truth {truth}",
                    f_ipw.psi
                );
            }
        }
    }
}

/// Censoring that strikes independently of the state multiplies every
/// profile's weight by the same per-time survival factors. The recursion
/// never sees the censored tails, and the censoring factors are common to
/// all followers, so they cancel from the self-normalized weights: every
/// estimator returns exactly what it returns on the uncensored panel, on
/// the fine grid and on a coarse one — where a subject censored strictly
/// inside a bin has no bin-end state and simply drops out of that fit's
/// rows. The weighting estimator is additionally held to the
/// marginalization itself where it identifies it (fine grid, or a plan
/// settled at entry); the recursion and the targeted step hit it at both
/// widths.
#[test]
fn state_blind_censoring_leaves_every_estimator_unchanged() {
    for k in 0..4u64 {
        let mut rng = substream(0xce50, k);
        let horizon = 5usize;
        let mdp = random_mdp(&mut rng, horizon, 2);
        let id = coarse_indices(horizon, 1).unwrap();
        let kappas = [0.08, 0.15, 0.10, 0.12, 0.09];
        let fine_pop = population_panel(&mdp, &id).unwrap();
        let expanded = with_independent_censoring(&fine_pop, &kappas);
        for delta in [1usize, 2] {
            let grid = coarse_indices(horizon, delta).unwrap();
            let panel = coarsen_panel(&expanded, &grid).unwrap();
            assert!(panel.has_censoring());
            let base = coarsen_panel(&fine_pop, &grid).unwrap();
            let base_exact = exact_propensity_model(&base);
            let base_fitted = fit_propensity(&base, false).unwrap();
            for fine in [
                TreatmentRegime::never(horizon),
                TreatmentRegime::immediate(horizon),
                TreatmentRegime::jump_at(2, horizon).unwrap(),
            ] {
                let tag = format!("instance {k} δ={delta} jump {:?}", fine.jump_index());
                let plan = coarsen_regime(&fine, &grid).unwrap();
                let truth = gform_coarsened(&mdp, &fine, &grid).unwrap();

                let est_ir = ir(&panel, &plan, false).unwrap();
                assert!(
                    (est_ir.psi - truth).abs() < 1e-10,
                    "{tag}: recursion {} vs truth {truth}",
                    est_ir.psi
                );

                let exact = exact_propensity_model(&panel);
                assert!(exact.has_censoring(), "{tag}");
                let e_ipw = ipw(&panel, &plan, &exact, None).unwrap();
                let b_ipw = ipw(&base, &plan, &base_exact, None).unwrap();
                assert!(
                    (e_ipw.psi - b_ipw.psi).abs() < 1e-10,
                    "{tag}: censoring moved the weighting estimator: {} vs {}",
                    e_ipw.psi,
                    b_ipw.psi
                );
                let e_tmle = tmle(&panel, &plan, &exact, false, None).unwrap();
                assert!(
                    (e_tmle.psi - truth).abs() < 1e-10,
                    "{tag}: exact-hazard targeting {} vs truth {truth}",
                    e_tmle.psi
                );

                let fitted = fit_propensity(&panel, false).unwrap();
                assert!(fitted.has_censoring(), "{tag}: censoring hazards must be fit");
                let f_ipw = ipw(&panel, &plan, &fitted, None).unwrap();
                let bf_ipw = ipw(&base, &plan, &base_fitted, None).unwrap();
                assert!(
                    (f_ipw.psi - bf_ipw.psi).abs() < 1e-6,
                    "{tag}: censoring moved the fitted weighting estimator: {} vs {}",
                    f_ipw.psi,
                    bf_ipw.psi
                );
                let f_tmle = tmle(&panel, &plan, &fitted, false, None).unwrap();
                assert!(
                    (f_tmle.psi - truth).abs() < 1e-6,
                    "{tag}: fitted-hazard targeting {} vs truth {truth}",
                    f_tmle.psi
                );

                if delta == 1 || plan.jump_index() == Some(0) {
                    assert!(
                        (e_ipw.psi - truth).abs() < 1e-10,
                        "{tag}: exact-hazard weighting {} vs truth {truth}",
                        e_ipw.psi
                    );
                    assert!(
                        (f_ipw.psi - truth).abs() < 1e-6,
                        "{tag}: fitted-hazard weighting {} vs truth {truth}",
                        f_ipw.psi
                    );
                }
            }
        }
    }
}

/// When the initiation hazard depends only on the state, pooling the hazard
/// fit across time points loses nothing: the stacked fit reproduces every
/// per-time at-risk probability, and the weighted estimators built on it
/// land on the same exact marginalization.
#[test]
fn pooled_time_hazards_recover_time_constant_rates() {
    for k in 0..5u64 {
        let mut rng = substream(0x9001, k);
        let horizon = 4 + (k as usize % 2);
        let n = 2 + (k as usize % 2);
        let initial = prob_row(&mut rng, n);
        let mut step = Vec::with_capacity(2 * n * n);
        for _ in 0..2 * n {
            step.extend(prob_row(&mut rng, n));
        }
        let behavior: Vec<f64> = (0..n).map(|_| 0.15 + 0.7 * rng.random::<f64>()).collect();
        let outcome: Vec<f64> = (0..2 * n).map(|_| 2.0 * rng.random::<f64>()).collect();
        let mdp = DiscreteMdp::time_constant(
            horizon,
            (0..n).map(|s| format!("s{s}")).collect(),
            initial,
            step,
            behavior,
            outcome,
        )
        .unwrap();
        let grid = coarse_indices(horizon, 1).unwrap();
        let panel = population_panel(&mdp, &grid).unwrap();

        let pooled = fit_propensity(&panel, true).unwrap();
        assert!(pooled.pooled_time(), "instance {k}");
        let per_time = fit_propensity(&panel, false).unwrap();
        let mut worst = 0.0f64;
        for i in 0..panel.n_subjects() {
            for t in 0..horizon {
                if t == 0 || panel.a_at(i, t - 1) == 0 {
                    let gap = (pooled.initiation_prob(&panel, i, t)
                        - per_time.initiation_prob(&panel, i, t))
                    .abs();
                    worst = worst.max(gap);
                }
            }
        }
        assert!(worst < 1e-6, "instance {k}: pooled vs per-time hazards differ by {worst}");

        for plan in [
            TreatmentRegime::never(horizon),
            TreatmentRegime::immediate(horizon),
            TreatmentRegime::jump_at(horizon - 2, horizon).unwrap(),
        ] {
            let truth = gform_uncoarsened(&mdp, &plan).unwrap();
            let p_ipw = ipw(&panel, &plan, &pooled, None).unwrap();
            assert!(
                (p_ipw.psi - truth).abs() < 1e-6,
                "instance {k}: pooled-hazard weighting {} vs truth {truth}",
                p_ipw.psi
            );
            let p_tmle = tmle(&panel, &plan, &pooled, false, None).unwrap();
            assert!(
                (p_tmle.psi - truth).abs() < 1e-6,
                "instance {k}: pooled-hazard targeting {} vs truth {truth}",
                p_tmle.psi
            );
        }
    }
}

/// With treatment-blind transitions and a constant additive outcome effect,
/// a design that is saturated in the state and linear in the current
/// treatment is correctly specified at every recursion step, so the
/// plan-pooled recursion — fit on all subjects, evaluated at the planned
/// value — is exact. The final time point's initiation risk set has no
/// events by construction, which must surface as a hazard-fit fallback.
#[test]
fn plan_pooled_recursion_is_exact_under_additive_effects() {
    for k in 0..6u64 {
        let mut rng = substream(0xadd1, k);
        let horizon = 4usize;
        let n = 2 + (k as usize % 2);
        let effect = 0.4 + 0.2 * k as f64;
        let mdp = additive_mdp(&mut rng, horizon, n, effect);
        let grid = coarse_indices(horizon, 1).unwrap();
        let panel = population_panel(&mdp, &grid).unwrap();
        let fitted = fit_propensity(&panel, false).unwrap();
        assert!(
            fitted.n_fallback_fits() >= 1,
            "instance {k}: the event-free final risk set must fall back"
        );
        for plan in [
            TreatmentRegime::never(horizon),
            TreatmentRegime::immediate(horizon),
            TreatmentRegime::jump_at(2, horizon).unwrap(),
        ] {
            let truth = gform_uncoarsened(&mdp, &plan).unwrap();
            let pooled = ir(&panel, &plan, true).unwrap();
            assert!(
                (pooled.psi - truth).abs() < 1e-10,
                "instance {k}: plan-pooled recursion {} vs truth {truth}",
                pooled.psi
            );
            let targeted = tmle(&panel, &plan, &fitted, true, None).unwrap();
            assert!(
                (targeted.psi - truth).abs() < 1e-6,
                "instance {k}: plan-pooled targeting {} vs truth {truth}",
                targeted.psi
            );
            assert!(targeted.n_fallback_fits >= 1, "instance {k}: fallback not surfaced");
        }
    }
}

/// Bootstrap intervals are a pure function of (panel, plan, options, seed):
/// repeated calls and different worker counts give bit-identical endpoints,
/// the interval brackets the full-sample estimate, and replicates that lose
/// every follower are skipped and counted rather than poisoning the result.
#[test]
fn bootstrap_intervals_are_deterministic_and_bracket_the_estimate() {
    let mut rng = substream(0xb007, 0);
    let mdp = random_mdp(&mut rng, 3, 2);
    let grid = coarse_indices(3, 1).unwrap();
    let panel = sample_panel(&mdp, &grid, 300, 0x51ab).unwrap();
    let plan = TreatmentRegime::never(3);
    let spec = EstimatorSpec::new(Method::Ir);

    let first = bootstrap_ci(&panel, &plan, &spec, 200, 95.0, 7).unwrap();
    let again = bootstrap_ci(&panel, &plan, &spec, 200, 95.0, 7).unwrap();
    assert_eq!(first.lo.to_bits(), again.lo.to_bits(), "repeat call differs");
    assert_eq!(first.hi.to_bits(), again.hi.to_bits(), "repeat call differs");
    assert_eq!(first.n_kept + first.n_skipped, 200);
    assert_eq!(first.level, 95.0);
    assert!(first.lo < first.hi);

    let full = estimate_with(&panel, &plan, &spec).unwrap();
    assert!(
        first.lo <= full.psi && full.psi <= first.hi,
        "interval [{}, {}] misses the estimate {}",
        first.lo,
        first.hi,
        full.psi
    );

    for workers in [1usize, 3] {
        let pool = ThreadPoolBuilder::new().num_threads(workers).build().unwrap();
        let r = pool.install(|| bootstrap_ci(&panel, &plan, &spec, 200, 95.0, 7)).unwrap();
        assert_eq!(r.lo.to_bits(), first.lo.to_bits(), "{workers} workers change the interval");
        assert_eq!(r.hi.to_bits(), first.hi.to_bits(), "{workers} workers change the interval");
    }

    // With a single follower, every kept replicate equals that subject's
    // outcome, so the interval collapses to the point — and resamples that
    // lose the follower entirely are counted, not fatal.
    let tiny = single_follower_panel();
    let immediate = TreatmentRegime::immediate(2);
    let ci =
        bootstrap_ci(&tiny, &immediate, &EstimatorSpec::new(Method::Ipw), 100, 95.0, 3).unwrap();
    assert!(ci.n_skipped >= 1, "some resample must miss the lone follower");
    assert!(ci.n_kept >= 1, "some resample must keep the lone follower");
    assert_eq!(ci.n_kept + ci.n_skipped, 100);
    assert_eq!(ci.lo, 2.0);
    assert_eq!(ci.hi, 2.0);
}

/// Five subjects over two time points; only the first initiates (at entry)
/// and carries outcome 2.
fn single_follower_panel() -> Panel<f64> {
    let a: Vec<u8> = vec![1, 1, 0, 0, 0, 0, 0, 0, 0, 0];
    let l: Vec<f64> = (0..5).flat_map(|i| [i as f64, i as f64]).collect();
    let y = vec![2.0, 0.0, 1.0, 3.0, 4.0];
    Panel::new(5, 2, 0, 1, Vec::new(), l, a, y, None, None, None).unwrap()
}

/// Structural misuse is a loud error, not a number: mismatched grids,
/// degenerate bootstrap parameters, and out-of-range clipping fractions.
#[test]
fn grid_mismatches_and_bad_options_error_loudly() {
    let mut rng = substream(0xbad0, 0);
    let mdp = random_mdp(&mut rng, 3, 2);
    let grid = coarse_indices(3, 1).unwrap();
    let panel = population_panel(&mdp, &grid).unwrap();
    let plan = TreatmentRegime::never(3);

    let longer = TreatmentRegime::never(4);
    assert!(matches!(ir(&panel, &longer, false), Err(EstimatorError::HorizonMismatch(_))));

    let other =
        population_panel(&random_mdp(&mut rng, 2, 2), &coarse_indices(2, 1).unwrap()).unwrap();
    let short_model = fit_propensity(&other, false).unwrap();
    assert!(matches!(
        ipw(&panel, &plan, &short_model, None),
        Err(EstimatorError::HorizonMismatch(_))
    ));

    let model = fit_propensity(&panel, false).unwrap();
    assert!(matches!(
        ipw(&panel, &plan, &model, Some(50.0)),
        Err(EstimatorError::Invalid(_))
    ));
    assert!(matches!(
        ipw(&panel, &plan, &model, Some(-0.5)),
        Err(EstimatorError::Invalid(_))
    ));

    let spec = EstimatorSpec::new(Method::Ir);
    let too_few = bootstrap_ci(&panel, &plan, &spec, 1, 95.0, 0);
    assert!(matches!(too_few, Err(EstimatorError::Invalid(_))));
    let zero_level = bootstrap_ci(&panel, &plan, &spec, 50, 0.0, 0);
    assert!(matches!(zero_level, Err(EstimatorError::Invalid(_))));
    let full_level = bootstrap_ci(&panel, &plan, &spec, 50, 100.0, 0);
    assert!(matches!(full_level, Err(EstimatorError::Invalid(_))));
}
