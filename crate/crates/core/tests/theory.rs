use std::collections::BTreeMap;

use matchdid::decomposition::{plim_bias, plim_weights};
use matchdid::estimators::weighted_2wfe;
use matchdid::inference::{alpha, seb_and_gap, theoretical_variance, AlphaTable, DgpMoments};
use matchdid::simulation::{design2_estimand, InferenceDgpConfig, StaggeredDgpConfig};
use matchdid::{CohortLabel, CohortShares, CovariateKind, Panel, PeriodSelector, WeightVector};
use num_bigint::BigInt;
use num_rational::BigRational;
use proptest::prelude::*;

fn random_shares(raw: &[u32], never: u32) -> BTreeMap<CohortLabel, f64> {
    let total: f64 = raw.iter().map(|&r| r as f64).sum::<f64>() + never as f64;
    let mut map: BTreeMap<CohortLabel, f64> = raw
        .iter()
        .enumerate()
        .filter(|(_, &r)| r > 0)
        .map(|(k, &r)| (CohortLabel::Period(k + 2), r as f64 / total))
        .collect();
    map.insert(CohortLabel::Never, never as f64 / total);
    map
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn phi_weights_sum_to_one_and_are_nonnegative(
        raw in proptest::collection::vec(0u32..100, 1..6),
        never in 1u32..100,
        mask in proptest::collection::vec(any::<bool>(), 7),
    ) {
        prop_assume!(raw.iter().any(|&r| r > 0));
        let periods = raw.len() + 1;
        let ind: Vec<bool> = mask[..periods].to_vec();
        prop_assume!(ind.iter().filter(|&&b| b).count() >= 2);
        let lambda = PeriodSelector::new(ind).unwrap();
        let shares = CohortShares::new(random_shares(&raw, never), 1e-12).unwrap();
        match plim_weights(&shares, &lambda) {
            Ok(w) => {
                prop_assert!((w.phi_total() - 1.0).abs() < 1e-12);
                prop_assert!(w.phi1.values().chain(w.phi2.values()).all(|&v| v >= 0.0));
            }
            Err(matchdid::Error::DegenerateDesign(_)) => {}
            Err(e) => prop_assert!(false, "unexpected error {e}"),
        }
    }
}

#[test]
fn exact_rational_weights_sum_to_one() {
    let r = |a: i64, b: i64| BigRational::new(BigInt::from(a), BigInt::from(b));
    let shares: BTreeMap<CohortLabel, BigRational> = [
        (CohortLabel::Period(2), r(1, 7)),
        (CohortLabel::Period(3), r(2, 7)),
        (CohortLabel::Period(5), r(1, 3)),
        (CohortLabel::Never, r(5, 21)),
    ]
    .into_iter()
    .collect();
    let shares = CohortShares::new(shares, r(0, 1)).unwrap();
    for ind in [
        vec![true; 5],
        vec![true, false, true, true, true],
        vec![true, true, false, true, true],
    ] {
        let w = plim_weights(&shares, &PeriodSelector::new(ind).unwrap()).unwrap();
        assert_eq!(w.phi_total(), r(1, 1));
    }
}

#[test]
fn alpha_closed_form_for_scalar_covariate() {
    let t = AlphaTable::new();
    for m in 1..=100usize {
        assert_eq!(alpha(m, 1, &t).unwrap(), (m * (2 * m + 1)) as f64 / 2.0);
    }
}

#[test]
fn efficiency_gap_is_positive_and_shrinks_with_m() {
    let dgp = InferenceDgpConfig::constant_effect();
    let lambda = PeriodSelector::all(4);
    let t = AlphaTable::new();
    let gaps: Vec<f64> = [1, 2, 4, 8, 16]
        .iter()
        .map(|&m| seb_and_gap(&dgp, CohortLabel::Period(3), &lambda, m, &t).unwrap().gap)
        .collect();
    assert!(gaps.iter().all(|&g| g > 0.0), "{gaps:?}");
    assert!(gaps.windows(2).all(|w| w[1] < w[0]), "{gaps:?}");
}

#[test]
fn efficiency_gap_vanishes_without_comparison_noise() {
    let mut dgp = InferenceDgpConfig::constant_effect();
    dgp.noise_sd = 0.0;
    let g = seb_and_gap(
        &dgp,
        CohortLabel::Period(3),
        &PeriodSelector::all(4),
        1,
        &AlphaTable::new(),
    )
    .unwrap();
    assert_eq!(g.gap, 0.0);
}

/// Midpoint-rule `E[g(X) | cohort]` for a scalar uniform covariate.
fn midpoint_cohort_mean(dgp: &dyn DgpMoments, lo: f64, hi: f64, c: CohortLabel, g: impl Fn(f64) -> f64) -> f64 {
    let k = 100_000;
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..k {
        let x = lo + (hi - lo) * (i as f64 + 0.5) / k as f64;
        let e = dgp.propensity(c, &[x]);
        num += e * g(x);
        den += e;
    }
    num / den
}

#[test]
fn design_one_variance_by_hand() {
    // constant effect, noise variance 1 on each transformed outcome:
    // V = E[e]/p² + (E[e] + alpha E[e²/(1-e)])/p², alpha(1,1) = 1.5
    let dgp = InferenceDgpConfig::constant_effect();
    let k = 200_000;
    let (mut e1, mut ratio) = (0.0, 0.0);
    for i in 0..k {
        let x = -0.5 + (i as f64 + 0.5) / k as f64;
        let e = 1.0 / (1.0 + (-x).exp());
        e1 += e / k as f64;
        ratio += e * e / (1.0 - e) / k as f64;
    }
    let expected = (e1 + e1 + 1.5 * ratio) / (e1 * e1);
    let v = theoretical_variance(
        &dgp,
        CohortLabel::Period(3),
        &PeriodSelector::all(4),
        1,
        &AlphaTable::new(),
    )
    .unwrap();
    assert!((v - expected).abs() < 1e-6 * expected, "{v} vs {expected}");
}

#[test]
fn single_cohort_plim_is_the_cohort_att() {
    let dgp = InferenceDgpConfig::heterogeneous();
    let b = plim_bias(&dgp, &PeriodSelector::all(4)).unwrap();
    assert!((b.total_plim - design2_estimand(&dgp)).abs() < 1e-9);
    assert!(b.b_pool.abs() < 1e-12 && b.b_het_cohort.abs() < 1e-12 && b.b_het_time.abs() < 1e-12);
}

#[test]
fn no_bias_without_covariate_trends() {
    let dgp = StaggeredDgpConfig {
        trend_slope: 0.0,
        ..Default::default()
    };
    let b = plim_bias(&dgp, &PeriodSelector::all(4)).unwrap();
    assert!((b.total_plim - 5.0).abs() < 1e-9, "{b:?}");
    assert!(b.b_pool.abs() < 1e-9 && b.b_pool_matched.abs() < 1e-9);
}

#[test]
fn staggered_plim_matches_population_2wfe() {
    // The probability limit is the weighted 2WFE on population cohort mean
    // paths: cohort s carries mass p_s, and the never-treated carry the
    // matched mass 1 - p_inf with their untreated path averaged over the
    // pooled treated covariate law.
    let dgp = StaggeredDgpConfig::default();
    let (lo, hi) = (dgp.x_lower, dgp.x_upper);
    let slope = dgp.trend_slope;
    let path = |ex: f64, s: Option<usize>| -> Vec<f64> {
        (1..=4)
            .map(|t| {
                let lag = t as f64 - 1.0;
                lag + slope * ex * lag + if s.is_some_and(|s| t >= s) { dgp.effect } else { 0.0 }
            })
            .collect()
    };
    let k = 100_000;
    let mass = |c: CohortLabel| {
        (0..k)
            .map(|i| dgp.propensity(c, &[lo + (hi - lo) * (i as f64 + 0.5) / k as f64]))
            .sum::<f64>()
            / k as f64
    };
    let (p2, p3, pn) = (
        mass(CohortLabel::Period(2)),
        mass(CohortLabel::Period(3)),
        mass(CohortLabel::Never),
    );
    let ex2 = midpoint_cohort_mean(&dgp, lo, hi, CohortLabel::Period(2), |x| x);
    let ex3 = midpoint_cohort_mean(&dgp, lo, hi, CohortLabel::Period(3), |x| x);
    let ex_treated = (p2 * ex2 + p3 * ex3) / (p2 + p3);
    let panel = Panel::new(
        vec![path(ex2, Some(2)), path(ex3, Some(3)), path(ex_treated, None)],
        vec![CohortLabel::Period(2), CohortLabel::Period(3), CohortLabel::Never],
        vec![vec![0.0]; 3],
        vec![CovariateKind::Continuous],
    )
    .unwrap();
    let w = WeightVector::custom(vec![p2, p3, 1.0 - pn]).unwrap();
    let oracle = weighted_2wfe(&panel, &w, &PeriodSelector::all(4)).unwrap();
    let b = plim_bias(&dgp, &PeriodSelector::all(4)).unwrap();
    assert!((b.total_plim - oracle).abs() < 1e-6, "{} vs {oracle}", b.total_plim);
    assert!(b.b_pool.abs() > 0.1);
}
