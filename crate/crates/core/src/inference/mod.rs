//! Variance estimation for the matched estimators and the α(M, q) constant.

mod alpha;
mod theory;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::twfe::{demean, fit_2wfe};
use crate::estimators::WeightVector;
use crate::matcher::kdtree::PointSet;
use crate::matcher::{MatchResult, Replacement, SearchStrategy, Searcher};
use crate::panel::{CohortLabel, PanelDataset, PeriodSelector};
use crate::scalar::Scalar;

pub use alpha::{alpha, AlphaTable};
pub use theory::{seb_and_gap, theoretical_variance, DgpMoments, EfficiencyGap};

/// Default number of same-cohort neighbors for conditional variances.
pub const DEFAULT_SIGMA_NEIGHBORS: usize = 2;

/// Naive and matching-corrected variances of a pairwise estimate, with the
/// three components of the corrected one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceReport<F> {
    pub naive: F,
    pub corrected: F,
    /// Conditional-ATT heterogeneity term.
    pub heterogeneity: F,
    /// Treated-unit conditional variance term.
    pub treated_noise: F,
    /// `K²`-weighted comparison-unit conditional variance term.
    pub comparison_noise: F,
    pub sigma_neighbors: usize,
}

/// Clustered variance of a two-group weighted contrast
/// `(1/N_s)[Σ_target ε̂_i² + Σ_comparison v_i² ε̂_i²]`, with residuals demeaned
/// within the target group and (`v`-weighted) within the comparison group.
pub(crate) fn two_group_naive_variance<F: Scalar>(
    panel: &PanelDataset<F>,
    dy: &[F],
    target: CohortLabel,
    comparison: CohortLabel,
    comparison_weight: &[F],
) -> F {
    let targets = panel.units_in(target);
    let comps = panel.units_in(comparison);
    let n_s = F::from_count(targets.len());
    let mean_t = targets.iter().map(|&i| dy[i]).sum::<F>() / n_s;
    let wsum = comps.iter().map(|&i| comparison_weight[i]).sum::<F>();
    let mean_c = if wsum > F::zero() {
        comps.iter().map(|&i| comparison_weight[i] * dy[i]).sum::<F>() / wsum
    } else {
        F::zero()
    };
    let st = targets.iter().map(|&i| (dy[i] - mean_t).powi(2)).sum::<F>();
    let sc = comps
        .iter()
        .map(|&i| (comparison_weight[i] * (dy[i] - mean_c)).powi(2))
        .sum::<F>();
    (st + sc) / (n_s * n_s)
}

fn check_pairwise<F: Scalar>(panel: &PanelDataset<F>, matched: &MatchResult<F>) -> Result<()> {
    if matched.fingerprint() != panel.fingerprint() || matched.n() != panel.n() {
        return Err(Error::MismatchedPanels);
    }
    Ok(())
}

fn usage_weights<F: Scalar>(panel: &PanelDataset<F>, matched: &MatchResult<F>) -> Vec<F> {
    let m = F::from_count(matched.m());
    (0..panel.n())
        .map(|i| {
            if panel.cohort(i) == matched.comparison_cohort() {
                F::from_count(matched.usage(i)) / m
            } else {
                F::zero()
            }
        })
        .collect()
}

/// Naive clustered variance `V̂_ncr` of the pairwise estimate, which treats
/// the match weights as fixed.
pub fn naive_cr_variance<F: Scalar>(
    panel: &PanelDataset<F>,
    matched: &MatchResult<F>,
    lambda: &PeriodSelector,
) -> Result<F> {
    check_pairwise(panel, matched)?;
    let dy = panel.transform_outcome(matched.target_cohort(), lambda)?;
    Ok(two_group_naive_variance(
        panel,
        &dy,
        matched.target_cohort(),
        matched.comparison_cohort(),
        &usage_weights(panel, matched),
    ))
}

/// `σ̂²(X_i)` for every unit of `cohort`: `(J/(J+1))(ΔȲ_i − mean of its J
/// nearest same-cohort neighbors)²`. Entries outside the cohort are zero.
fn neighbor_sigma2<F: Scalar>(
    panel: &PanelDataset<F>,
    dy: &[F],
    cohort: CohortLabel,
    scale: &[F],
    j: usize,
) -> Result<Vec<F>> {
    let units = panel.units_in(cohort);
    if units.len() <= j {
        return Err(Error::TooFewForSigma {
            cohort: cohort.to_string(),
            size: units.len(),
            j,
        });
    }
    let row = |i: usize| -> Vec<F> { panel.covariate_row(i).iter().zip(scale).map(|(x, s)| *x / *s).collect() };
    let coords = units.iter().flat_map(|&i| row(i)).collect();
    let searcher = Searcher::new(
        PointSet::new(panel.covariate_dim(), coords, units.clone()),
        SearchStrategy::Auto,
    );
    let factor = F::from_count(j) / F::from_count(j + 1);
    let jf = F::from_count(j);
    let values: Vec<F> = units
        .par_iter()
        .map(|&i| {
            let nb = searcher.knn(&row(i), j, |u| u != i);
            let mean = nb.iter().map(|x| dy[x.index]).sum::<F>() / jf;
            factor * (dy[i] - mean).powi(2)
        })
        .collect();
    let mut out = vec![F::zero(); panel.n()];
    for (&i, v) in units.iter().zip(values) {
        out[i] = v;
    }
    Ok(out)
}

/// Per-target matched differences `τ̂_i = ΔȲ_i − (1/M) Σ_m ΔȲ_{j_m(i)}`.
fn unit_effects<F: Scalar>(matched: &MatchResult<F>, dy: &[F]) -> Vec<F> {
    let m = F::from_count(matched.m());
    matched
        .pairs()
        .map(|(i, nb)| dy[i] - nb.iter().map(|&j| dy[j]).sum::<F>() / m)
        .collect()
}

/// Matching-corrected variance of the pairwise estimate, `V̂ = Â + B̂ + Ĉ`.
pub fn corrected_variance<F: Scalar>(
    panel: &PanelDataset<F>,
    matched: &MatchResult<F>,
    lambda: &PeriodSelector,
    j: usize,
) -> Result<VarianceReport<F>> {
    corrected_variance_adjusted(panel, matched, lambda, j, None)
}

/// As [`corrected_variance`], with optional per-target adjustments
/// subtracted from `τ̂_i` (the bias-correction terms of the bias-corrected
/// estimator).
pub fn corrected_variance_adjusted<F: Scalar>(
    panel: &PanelDataset<F>,
    matched: &MatchResult<F>,
    lambda: &PeriodSelector,
    j: usize,
    adjustment: Option<&[F]>,
) -> Result<VarianceReport<F>> {
    check_pairwise(panel, matched)?;
    if j == 0 {
        return Err(Error::invalid("J must be at least 1"));
    }
    let s = matched.target_cohort();
    let c = matched.comparison_cohort();
    let dy = panel.transform_outcome(s, lambda)?;
    let sigma_t = neighbor_sigma2(panel, &dy, s, matched.scale(), j)?;
    let sigma_c = neighbor_sigma2(panel, &dy, c, matched.scale(), j)?;

    let mut effects = unit_effects(matched, &dy);
    if let Some(adj) = adjustment {
        if adj.len() != effects.len() {
            return Err(Error::invalid("adjustment length must equal the number of targets"));
        }
        for (e, a) in effects.iter_mut().zip(adj) {
            *e = *e - *a;
        }
    }
    let n_s = F::from_count(effects.len());
    let tau = crate::summation::pairwise_sum(&effects) / n_s;
    let m = F::from_count(matched.m());
    let m2 = m * m;

    let het_terms: Vec<F> = matched
        .pairs()
        .zip(&effects)
        .map(|((i, nb), e)| {
            let matched_noise = nb.iter().map(|&k| sigma_c[k]).sum::<F>() / m2;
            (*e - tau).powi(2) - sigma_t[i] - matched_noise
        })
        .collect();
    let n2 = n_s * n_s;
    let heterogeneity = crate::summation::pairwise_sum(&het_terms).max(F::zero()) / n2;
    let treated_noise = matched.targets().iter().map(|&i| sigma_t[i]).sum::<F>() / n2;
    let comparison_noise = panel
        .units_in(c)
        .iter()
        .map(|&i| {
            let k = F::from_count(matched.usage(i)) / m;
            k * k * sigma_c[i]
        })
        .sum::<F>()
        / n2;
    let naive = two_group_naive_variance(panel, &dy, s, c, &usage_weights(panel, matched));
    Ok(VarianceReport {
        naive,
        corrected: heterogeneity + treated_noise + comparison_noise,
        heterogeneity,
        treated_noise,
        comparison_noise,
        sigma_neighbors: j,
    })
}

/// Variance of the without-replacement estimate: the plug-in of
/// `V_nr / ((M + 1) N_s)` with the same `σ̂²` and `τ̂_i` machinery.
pub fn nr_variance<F: Scalar>(
    panel: &PanelDataset<F>,
    matched: &MatchResult<F>,
    lambda: &PeriodSelector,
    j: usize,
) -> Result<F> {
    if matched.spec().replacement != Replacement::Without {
        return Err(Error::invalid("nr_variance needs a without-replacement match"));
    }
    check_pairwise(panel, matched)?;
    let s = matched.target_cohort();
    let dy = panel.transform_outcome(s, lambda)?;
    let sigma_t = neighbor_sigma2(panel, &dy, s, matched.scale(), j)?;
    let sigma_c = neighbor_sigma2(panel, &dy, matched.comparison_cohort(), matched.scale(), j)?;
    let effects = unit_effects(matched, &dy);
    let n_s = F::from_count(effects.len());
    let tau = crate::summation::pairwise_sum(&effects) / n_s;
    let m = F::from_count(matched.m());

    let mut het = Vec::with_capacity(effects.len());
    let mut noise = Vec::with_capacity(effects.len());
    for ((i, nb), e) in matched.pairs().zip(&effects) {
        let avg_c = nb.iter().map(|&k| sigma_c[k]).sum::<F>() / m;
        het.push((*e - tau).powi(2) - sigma_t[i] - avg_c / m);
        noise.push(sigma_t[i] + avg_c / m);
    }
    let heterogeneity = (crate::summation::pairwise_sum(&het) / n_s).max(F::zero());
    let noise = crate::summation::pairwise_sum(&noise) / n_s;
    // V_nr = (1 + M)(het + noise); var(τ̂) = V_nr / ((M + 1) N_s)
    Ok((heterogeneity + noise) / n_s)
}

/// Weighted 2WFE estimate and its unit-clustered variance
/// `Σ_i (w_i Σ_t λ_t D̈_it ê_it)² / (Σ_it w_i λ_t D_it D̈_it)²`, with no
/// small-sample factor.
pub fn cluster_robust_2wfe_variance<F: Scalar>(
    panel: &PanelDataset<F>,
    w: &WeightVector<F>,
    lambda: &PeriodSelector,
) -> Result<(F, F)> {
    let fit = fit_2wfe(panel, w, lambda)?;
    let periods = panel.periods();
    let y: Vec<F> = (0..panel.n()).flat_map(|i| panel.outcome_row(i).to_vec()).collect();
    let y_ddot = demean(&y, w.as_slice(), lambda);
    let scores: Vec<F> = w
        .as_slice()
        .iter()
        .enumerate()
        .map(|(i, &wi)| {
            let mut acc = F::zero();
            for t in lambda.periods() {
                let k = i * periods + t - 1;
                let resid = y_ddot[k] - fit.estimate * fit.d_ddot[k];
                acc = acc + fit.d_ddot[k] * resid;
            }
            (wi * acc).powi(2)
        })
        .collect();
    let variance = crate::summation::pairwise_sum(&scores) / (fit.denominator * fit.denominator);
    Ok((fit.estimate, variance))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matcher::{match_units, MatchSpec};
    use crate::panel::CovariateKind;

    const S: CohortLabel = CohortLabel::Period(2);
    const NEVER: CohortLabel = CohortLabel::Never;

    fn two_period(dy: &[f64], xs: &[f64], cohorts: &[CohortLabel]) -> PanelDataset<f64> {
        PanelDataset::new(
            dy.iter().map(|&d| vec![0.0, d]).collect(),
            cohorts.to_vec(),
            xs.iter().map(|&x| vec![x]).collect(),
            vec![CovariateKind::Continuous],
        )
        .unwrap()
    }

    #[test]
    fn constant_groups_have_zero_naive_variance() {
        let p = two_period(
            &[3.0, 3.0, 3.0, 1.0, 1.0, 1.0],
            &[0.0, 1.0, 2.0, 0.1, 1.1, 2.1],
            &[S, S, S, NEVER, NEVER, NEVER],
        );
        let r = match_units(&p, &MatchSpec::new(S, 1)).unwrap();
        assert_eq!(naive_cr_variance(&p, &r, &PeriodSelector::all(2)).unwrap(), 0.0);
    }

    #[test]
    fn corrected_components_sum_exactly() {
        let dy = [1.0, 2.5, 0.3, 4.0, 1.0, 0.2, 0.9, 3.3, 2.2];
        let xs = [0.1, 0.5, 0.9, 0.0, 0.2, 0.4, 0.6, 0.8, 1.0];
        let cohorts = [S, S, S, NEVER, NEVER, NEVER, NEVER, NEVER, NEVER];
        let p = two_period(&dy, &xs, &cohorts);
        let r = match_units(&p, &MatchSpec::new(S, 1)).unwrap();
        let v = corrected_variance(&p, &r, &PeriodSelector::all(2), 2).unwrap();
        assert_eq!(v.corrected, v.heterogeneity + v.treated_noise + v.comparison_noise);
        assert!(v.heterogeneity >= 0.0 && v.treated_noise >= 0.0 && v.comparison_noise >= 0.0);
        assert!(matches!(
            corrected_variance(&p, &r, &PeriodSelector::all(2), 3),
            Err(Error::TooFewForSigma { size: 3, j: 3, .. })
        ));
    }

    #[test]
    fn pairwise_cluster_variance_matches_two_group_formula() {
        let dy = [1.0, 2.5, 0.3, 4.0, 1.0, 0.2, 0.9, 3.3, 2.2];
        let xs = [0.1, 0.5, 0.9, 0.0, 0.2, 0.4, 0.6, 0.8, 1.0];
        let cohorts = [S, S, S, NEVER, NEVER, NEVER, NEVER, NEVER, NEVER];
        let p = two_period(&dy, &xs, &cohorts);
        let r = match_units(&p, &MatchSpec::new(S, 1)).unwrap();
        let lam = PeriodSelector::all(2);
        let w = WeightVector::pairwise(&p, &r).unwrap();
        let (_, v2wfe) = cluster_robust_2wfe_variance(&p, &w, &lam).unwrap();
        let vncr = naive_cr_variance(&p, &r, &lam).unwrap();
        assert!((v2wfe - vncr).abs() < 1e-12 * vncr);
    }
}
