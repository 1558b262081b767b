mod common;

use common::{relative_gap, selector_for, staggered_panel};
use matchdid::estimators::{lemma_a1_decompose, pairwise_matched_did, pooled_matched_2wfe, weighted_2wfe};
use matchdid::matcher::{match_all_cohorts, match_units, MatchSpec, Replacement, Scaling};
use matchdid::{CohortLabel, CovariateKind, Error, Panel, PeriodSelector, WeightVector};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn finite_cohort<R: Rng>(rng: &mut R, panel: &Panel) -> usize {
    let finite: Vec<usize> = panel.cohort_labels().into_iter().filter_map(|c| c.period()).collect();
    *finite.choose(rng).unwrap()
}

fn shifted(panel: &Panel, f: impl Fn(usize, usize) -> f64) -> Panel {
    let rows = (0..panel.n())
        .map(|i| {
            panel
                .outcome_row(i)
                .iter()
                .enumerate()
                .map(|(t, y)| y + f(i, t + 1))
                .collect()
        })
        .collect();
    Panel::new(
        rows,
        panel.cohorts().to_vec(),
        (0..panel.n()).map(|i| panel.covariate_row(i).to_vec()).collect(),
        panel.covariate_kinds().to_vec(),
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pairwise_equals_weighted_2wfe(seed in any::<u64>(), n in 10usize..60, periods in 2usize..6, q in 1usize..4, m in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let panel = staggered_panel(&mut rng, n, periods, q, m);
        let s = finite_cohort(&mut rng, &panel);
        let lambda = selector_for(&mut rng, periods, s);
        let mr = match_units(&panel, &MatchSpec::new(CohortLabel::Period(s), m)).unwrap();
        let est = pairwise_matched_did(&panel, &mr, &lambda).unwrap().estimate;
        let w = WeightVector::pairwise(&panel, &mr).unwrap();
        let twfe = weighted_2wfe(&panel, &w, &lambda).unwrap();
        prop_assert!(relative_gap(est, twfe) < 1e-10, "{est} vs {twfe}");
    }

    #[test]
    fn pooled_estimate_recombines(seed in any::<u64>(), n in 10usize..60, periods in 2usize..6, m in 1usize..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let panel = staggered_panel(&mut rng, n, periods, 2, m);
        let lambda = PeriodSelector::all(periods);
        let matches = match_all_cohorts(&panel, m, Scaling::None).unwrap();
        let (report, dec) = pooled_matched_2wfe(&panel, &matches, &lambda).unwrap();
        prop_assert!(relative_gap(report.estimate, dec.recombine()) < 1e-10);
    }

    #[test]
    fn normalized_weights_give_same_estimate(seed in any::<u64>(), n in 10usize..60, periods in 2usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let panel = staggered_panel(&mut rng, n, periods, 1, 1);
        let s = finite_cohort(&mut rng, &panel);
        let lambda = selector_for(&mut rng, periods, s);
        let mr = match_units(&panel, &MatchSpec::new(CohortLabel::Period(s), 1)).unwrap();
        let w = WeightVector::pairwise(&panel, &mr).unwrap();
        let n_s = panel.cohort_size(CohortLabel::Period(s)) as f64;
        let a = weighted_2wfe(&panel, &w, &lambda).unwrap();
        let b = weighted_2wfe(&panel, &w.scaled(1.0 / n_s).unwrap(), &lambda).unwrap();
        prop_assert!(relative_gap(a, b) < 1e-12);
    }

    #[test]
    fn usage_counts_sum_to_targets_times_m(seed in any::<u64>(), n in 10usize..80, m in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let panel = staggered_panel(&mut rng, n, 4, 2, m);
        let s = CohortLabel::Period(finite_cohort(&mut rng, &panel));
        let mr = match_units(&panel, &MatchSpec::new(s, m)).unwrap();
        prop_assert_eq!(mr.usage_counts().iter().sum::<usize>(), panel.cohort_size(s) * m);
    }

    #[test]
    fn without_replacement_uses_each_unit_once(seed in any::<u64>(), n in 10usize..80, m in 1usize..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let panel = staggered_panel(&mut rng, n, 3, 2, m);
        let s = CohortLabel::Period(finite_cohort(&mut rng, &panel));
        let spec = MatchSpec::new(s, m).replacement(Replacement::Without);
        match match_units(&panel, &spec) {
            Ok(mr) => {
                prop_assert!(mr.usage_counts().iter().all(|&k| k <= 1));
                prop_assert_eq!(mr.usage_counts().iter().sum::<usize>(), panel.cohort_size(s) * m);
            }
            Err(Error::InsufficientComparisons { needed, available }) => prop_assert!(needed > available),
            Err(e) => prop_assert!(false, "unexpected error {e}"),
        }
    }

    #[test]
    fn fixed_effects_do_not_move_estimators(seed in any::<u64>(), n in 10usize..50, periods in 2usize..6, delta in -10.0..10.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let panel = staggered_panel(&mut rng, n, periods, 1, 1);
        let s = finite_cohort(&mut rng, &panel);
        let lambda = selector_for(&mut rng, periods, s);
        let t0 = rng.gen_range(1..=periods);
        let unit_fx: Vec<f64> = (0..n).map(|_| rng.gen_range(-20.0..20.0)).collect();
        let variants = [
            shifted(&panel, |_, t| if t == t0 { delta } else { 0.0 }),
            shifted(&panel, |i, _| unit_fx[i]),
        ];
        let spec = MatchSpec::new(CohortLabel::Period(s), 1);
        let base = pairwise_matched_did(&panel, &match_units(&panel, &spec).unwrap(), &lambda).unwrap().estimate;
        let all = PeriodSelector::all(periods);
        let pooled = |p: &Panel| {
            let mm = match_all_cohorts(p, 1, Scaling::None).unwrap();
            pooled_matched_2wfe(p, &mm, &all).unwrap().0.estimate
        };
        let pooled_base = pooled(&panel);
        for v in &variants {
            let est = pairwise_matched_did(v, &match_units(v, &spec).unwrap(), &lambda).unwrap().estimate;
            prop_assert!((est - base).abs() < 1e-9 * (1.0 + base.abs()));
            prop_assert!((pooled(v) - pooled_base).abs() < 1e-9 * (1.0 + pooled_base.abs()));
        }
    }

    #[test]
    fn decomposition_recombines_for_any_weights(seed in any::<u64>(), n in 10usize..50, periods in 3usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let panel = staggered_panel(&mut rng, n, periods, 1, 1);
        let w = WeightVector::custom(common::positive_weights(&mut rng, n)).unwrap();
        let lambda = PeriodSelector::all(periods);
        match weighted_2wfe(&panel, &w, &lambda) {
            Ok(est) => {
                let dec = lemma_a1_decompose(&panel, &w, &lambda).unwrap();
                prop_assert!(relative_gap(est, dec.recombine()) < 1e-10);
            }
            Err(Error::DegenerateDesign(_)) => {}
            Err(e) => prop_assert!(false, "unexpected error {e}"),
        }
    }

    #[test]
    fn matching_is_translation_invariant(seed in any::<u64>(), n in 10usize..80, shift in -8i32..8) {
        // dyadic covariates keep every distance exact under integer shifts
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = staggered_panel(&mut rng, n, 3, 2, 2);
        let grid = |v: f64| (v * 16.0).floor() / 16.0;
        let make = |off: f64| {
            Panel::new(
                (0..n).map(|i| base.outcome_row(i).to_vec()).collect(),
                base.cohorts().to_vec(),
                (0..n).map(|i| base.covariate_row(i).iter().map(|&x| grid(x) + off).collect()).collect(),
                vec![CovariateKind::Continuous; 2],
            )
            .unwrap()
        };
        let (a, b) = (make(0.0), make(shift as f64));
        let s = CohortLabel::Period(finite_cohort(&mut rng, &a));
        let spec = MatchSpec::new(s, 2);
        let (ra, rb) = (match_units(&a, &spec).unwrap(), match_units(&b, &spec).unwrap());
        prop_assert_eq!(ra.pairs().map(|(i, nb)| (i, nb.to_vec())).collect::<Vec<_>>(),
                        rb.pairs().map(|(i, nb)| (i, nb.to_vec())).collect::<Vec<_>>());
        prop_assert_eq!(ra.usage_counts(), rb.usage_counts());
    }

    #[test]
    fn matching_is_permutation_equivariant(seed in any::<u64>(), n in 10usize..80) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let panel = staggered_panel(&mut rng, n, 3, 2, 2);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        // unit perm[k] of the original becomes unit k of the permuted panel
        let permuted = Panel::new(
            perm.iter().map(|&i| panel.outcome_row(i).to_vec()).collect(),
            perm.iter().map(|&i| panel.cohort(i)).collect(),
            perm.iter().map(|&i| panel.covariate_row(i).to_vec()).collect(),
            panel.covariate_kinds().to_vec(),
        )
        .unwrap();
        let s = CohortLabel::Period(finite_cohort(&mut rng, &panel));
        let spec = MatchSpec::new(s, 1);
        let (a, b) = (match_units(&panel, &spec).unwrap(), match_units(&permuted, &spec).unwrap());
        let mut from_a: Vec<(usize, usize)> = a.pairs().map(|(i, nb)| (i, nb[0])).collect();
        let mut from_b: Vec<(usize, usize)> = b.pairs().map(|(i, nb)| (perm[i], perm[nb[0]])).collect();
        from_a.sort();
        from_b.sort();
        prop_assert_eq!(from_a, from_b);
    }

    #[test]
    fn matching_is_deterministic(seed in any::<u64>(), n in 10usize..80) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let panel = staggered_panel(&mut rng, n, 3, 3, 3);
        let s = CohortLabel::Period(finite_cohort(&mut rng, &panel));
        let spec = MatchSpec::new(s, 3);
        let (a, b) = (match_units(&panel, &spec).unwrap(), match_units(&panel, &spec).unwrap());
        prop_assert_eq!(a, b);
    }

    #[test]
    fn period_effect_shifts_transform_uniformly(seed in any::<u64>(), n in 3usize..30, periods in 2usize..6, delta in -5.0..5.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let panel = staggered_panel(&mut rng, n, periods, 1, 1);
        let s = finite_cohort(&mut rng, &panel);
        let lambda = selector_for(&mut rng, periods, s);
        let t0 = rng.gen_range(1..=periods);
        let moved = shifted(&panel, |_, t| if t == t0 { delta } else { 0.0 });
        let c = CohortLabel::Period(s);
        let (a, b) = (panel.transform_outcome(c, &lambda).unwrap(), moved.transform_outcome(c, &lambda).unwrap());
        let d0 = b[0] - a[0];
        for (x, y) in a.iter().zip(&b) {
            prop_assert!(((y - x) - d0).abs() < 1e-10);
        }
    }
}
