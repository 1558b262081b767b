//! Random panel generators shared by the integration tests.
#![allow(dead_code)]

use matchdid::{CohortLabel, CovariateKind, Panel, PeriodSelector};
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;

/// A staggered panel with `n` units, `periods` periods, a never-treated
/// cohort of at least `min_never` units and every finite cohort non-empty.
pub fn staggered_panel<R: Rng>(rng: &mut R, n: usize, periods: usize, q: usize, min_never: usize) -> Panel {
    let finite: Vec<usize> = (2..=periods).filter(|_| rng.gen_bool(0.7)).collect();
    let finite = if finite.is_empty() {
        vec![rng.gen_range(2..=periods)]
    } else {
        finite
    };
    let mut cohorts: Vec<CohortLabel> = vec![CohortLabel::Never; min_never];
    cohorts.extend(finite.iter().map(|&s| CohortLabel::Period(s)));
    while cohorts.len() < n {
        cohorts.push(if rng.gen_bool(0.4) {
            CohortLabel::Never
        } else {
            CohortLabel::Period(*finite.choose(rng).unwrap())
        });
    }
    cohorts.shuffle(rng);
    let outcomes = cohorts
        .iter()
        .map(|_| (0..periods).map(|_| rng.gen_range(-5.0..5.0)).collect())
        .collect();
    let covariates = cohorts
        .iter()
        .map(|_| (0..q).map(|_| rng.gen_range(0.0..1.0)).collect())
        .collect();
    Panel::new(outcomes, cohorts, covariates, vec![CovariateKind::Continuous; q]).unwrap()
}

/// A random selector over `periods` that gives `cohort` at least one pre
/// and one post period.
pub fn selector_for<R: Rng>(rng: &mut R, periods: usize, cohort: usize) -> PeriodSelector {
    loop {
        let ind: Vec<bool> = (0..periods).map(|_| rng.gen_bool(0.7)).collect();
        let pre = ind[..cohort - 1].iter().any(|&b| b);
        let post = ind[cohort - 1..].iter().any(|&b| b);
        if pre && post {
            return PeriodSelector::new(ind).unwrap();
        }
    }
}

/// Random weights, strictly positive.
pub fn positive_weights<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(0.1..3.0)).collect()
}

pub fn relative_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// Exhaustive neighbor search: sort every comparison unit by squared
/// distance, then by index.
pub fn exhaustive_neighbors(panel: &Panel, target: usize, comparisons: &[usize], m: usize) -> Vec<usize> {
    let x = panel.covariate_row(target);
    let mut all: Vec<(f64, usize)> = comparisons
        .iter()
        .map(|&j| {
            let d: f64 = panel
                .covariate_row(j)
                .iter()
                .zip(x)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            (d, j)
        })
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    all.into_iter().take(m).map(|(_, j)| j).collect()
}

/// Weighted least squares of `Y_it` on unit dummies, period dummies and
/// `D_it` over the included periods; returns the `D` coefficient.
pub fn least_squares_twfe(panel: &Panel, w: &[f64], lambda: &PeriodSelector) -> f64 {
    let periods: Vec<usize> = lambda.periods().collect();
    let (n, tl) = (panel.n(), periods.len());
    let cols = n + (tl - 1) + 1;
    let mut x = DMatrix::<f64>::zeros(n * tl, cols);
    let mut y = DVector::<f64>::zeros(n * tl);
    for i in 0..n {
        let sw = w[i].sqrt();
        for (k, &t) in periods.iter().enumerate() {
            let r = i * tl + k;
            x[(r, i)] = sw;
            if k > 0 {
                x[(r, n + k - 1)] = sw;
            }
            x[(r, cols - 1)] = if panel.cohort(i).treated_at(t) { sw } else { 0.0 };
            y[r] = sw * panel.outcome(i, t);
        }
    }
    let svd = x.svd(true, true);
    let beta = svd.solve(&y, 1e-12).unwrap();
    beta[cols - 1]
}

/// Every target matched to all comparisons in its cell with equal weight.
pub fn cell_exhaustive(panel: &Panel, s: CohortLabel, lambda: &PeriodSelector) -> f64 {
    let dy = panel.transform_outcome(s, lambda).unwrap();
    let targets = panel.units_in(s);
    let never = panel.units_in(CohortLabel::Never);
    let per_target: Vec<f64> = targets
        .iter()
        .map(|&i| {
            let peers: Vec<usize> = never
                .iter()
                .copied()
                .filter(|&j| panel.covariate_row(j) == panel.covariate_row(i))
                .collect();
            dy[i] - peers.iter().map(|&j| dy[j]).sum::<f64>() / peers.len() as f64
        })
        .collect();
    per_target.iter().sum::<f64>() / per_target.len() as f64
}
