mod common;

use common::{
    cell_exhaustive, exhaustive_neighbors, least_squares_twfe, positive_weights, relative_gap, selector_for,
    staggered_panel,
};
use matchdid::estimators::{discrete_did, weighted_2wfe};
use matchdid::matcher::{match_cells, match_units, MatchSpec, SearchStrategy};
use matchdid::{CohortLabel, CovariateKind, Error, Panel, PeriodSelector, WeightVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn matcher_agrees_with_exhaustive_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for instance in 0..100 {
        let n = rng.gen_range(20..=200);
        let q = rng.gen_range(1..=4);
        let m = rng.gen_range(1..=3);
        let mut panel = staggered_panel(&mut rng, n, 3, q, m);
        if instance % 3 == 0 {
            // coarse grid: many exact ties
            panel = Panel::new(
                (0..n).map(|i| panel.outcome_row(i).to_vec()).collect(),
                panel.cohorts().to_vec(),
                (0..n)
                    .map(|i| panel.covariate_row(i).iter().map(|v| (v * 4.0).floor()).collect())
                    .collect(),
                vec![CovariateKind::Continuous; q],
            )
            .unwrap();
        }
        let s = panel.cohort_labels()[0];
        let never = panel.units_in(CohortLabel::Never);
        for strategy in [SearchStrategy::KdTree, SearchStrategy::BruteForce, SearchStrategy::Auto] {
            let mr = match_units(&panel, &MatchSpec::new(s, m).search(strategy)).unwrap();
            for (i, nb) in mr.pairs() {
                assert_eq!(
                    nb,
                    exhaustive_neighbors(&panel, i, &never, m).as_slice(),
                    "instance {instance}, unit {i}"
                );
            }
        }
    }
}

#[test]
fn weighted_2wfe_matches_least_squares() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut checked = 0;
    while checked < 50 {
        let n = rng.gen_range(6..40);
        let periods = rng.gen_range(2..6);
        let panel = staggered_panel(&mut rng, n, periods, 1, 1);
        let w = positive_weights(&mut rng, n);
        let s = panel.cohort_labels()[0].period().unwrap();
        let lambda = selector_for(&mut rng, periods, s);
        let est = match weighted_2wfe(&panel, &WeightVector::custom(w.clone()).unwrap(), &lambda) {
            Ok(v) => v,
            Err(Error::DegenerateDesign(_)) => continue,
            Err(e) => panic!("{e}"),
        };
        let ls = least_squares_twfe(&panel, &w, &lambda);
        assert!(relative_gap(est, ls) < 1e-8, "{est} vs {ls}");
        checked += 1;
    }
}

#[test]
fn discrete_estimator_equals_cell_exhaustive_matching() {
    // power-of-two cell sizes and integer outcomes keep every step exact
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let sizes = [1usize, 2, 4];
    for _ in 0..100 {
        let total_targets = [2usize, 4, 8][rng.gen_range(0..3)];
        let a = rng.gen_range(1..total_targets);
        let target_cells = [a, total_targets - a];
        let comp_cells = [sizes[rng.gen_range(0..3)], sizes[rng.gen_range(0..3)]];
        let mut cohorts = Vec::new();
        let mut cov = Vec::new();
        for cell in 0..2 {
            for _ in 0..target_cells[cell] {
                cohorts.push(CohortLabel::Period(2));
                cov.push(vec![cell as f64]);
            }
            for _ in 0..comp_cells[cell] {
                cohorts.push(CohortLabel::Never);
                cov.push(vec![cell as f64]);
            }
        }
        let outcomes = cohorts
            .iter()
            .map(|_| vec![rng.gen_range(-20..20) as f64, rng.gen_range(-20..20) as f64])
            .collect();
        let panel = Panel::new(outcomes, cohorts, cov, vec![CovariateKind::Discrete]).unwrap();
        let lambda = PeriodSelector::all(2);
        let cells = match_cells(&panel, CohortLabel::Period(2), CohortLabel::Never).unwrap();
        let est = discrete_did(&panel, &cells, &lambda).unwrap().estimate;
        assert_eq!(est, cell_exhaustive(&panel, CohortLabel::Period(2), &lambda));
    }
}
