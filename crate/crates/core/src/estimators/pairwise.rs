//! Cross-sectional forms of the matched estimators: pairwise, bias
//! corrected, exact-cell and without replacement.

use serde::{Deserialize, Serialize};

use super::regression::{weighted_least_squares, LinearFit};
use super::{check_same_panel, Diagnostics, EstimateReport, EstimatorKind, Target};
use crate::error::{Error, Result};
use crate::inference::two_group_naive_variance;
use crate::matcher::{CellMatchResult, MatchResult, Replacement};
use crate::panel::{CohortLabel, PanelDataset, PeriodSelector};
use crate::scalar::Scalar;

/// A finite comparison cohort must be untreated throughout the included
/// periods.
pub(crate) fn check_comparison_window(comparison: CohortLabel, lambda: &PeriodSelector) -> Result<()> {
    if let Some(sp) = comparison.period() {
        if lambda.periods().any(|t| t >= sp) {
            return Err(Error::invalid(format!(
                "comparison cohort {sp} is treated within the included periods"
            )));
        }
    }
    Ok(())
}

/// `K_M(i,s)/M` for comparison units, zero elsewhere.
pub(crate) fn match_weights<F: Scalar>(panel: &PanelDataset<F>, matched: &MatchResult<F>) -> Vec<F> {
    let m = F::from_count(matched.m());
    let c = matched.comparison_cohort();
    (0..panel.n())
        .map(|i| {
            if panel.cohort(i) == c {
                F::from_count(matched.usage(i)) / m
            } else {
                F::zero()
            }
        })
        .collect()
}

/// `(1/N_s) Σ_i (1(t_i = s) − 1(t_i = c) v_i) ΔȲ_i`.
fn weighted_contrast<F: Scalar>(
    panel: &PanelDataset<F>,
    dy: &[F],
    target: CohortLabel,
    comparison: CohortLabel,
    comparison_weight: &[F],
) -> F {
    let terms: Vec<F> = (0..panel.n())
        .filter_map(|i| {
            let c = panel.cohort(i);
            if c == target {
                Some(dy[i])
            } else if c == comparison {
                Some(-comparison_weight[i] * dy[i])
            } else {
                None
            }
        })
        .collect();
    crate::summation::pairwise_sum(&terms) / F::from_count(panel.cohort_size(target))
}

fn pairwise_parts<F: Scalar>(
    panel: &PanelDataset<F>,
    matched: &MatchResult<F>,
    lambda: &PeriodSelector,
) -> Result<(Vec<F>, Vec<F>, F)> {
    check_same_panel(panel, matched)?;
    check_comparison_window(matched.comparison_cohort(), lambda)?;
    let dy = panel.transform_outcome(matched.target_cohort(), lambda)?;
    let weights = match_weights(panel, matched);
    let estimate = weighted_contrast(
        panel,
        &dy,
        matched.target_cohort(),
        matched.comparison_cohort(),
        &weights,
    );
    Ok((dy, weights, estimate))
}

/// Matched pairwise DiD: the mean transformed outcome of cohort `s` minus
/// the usage-weighted mean of its matched comparisons. Reports the naive
/// clustered standard error.
pub fn pairwise_matched_did<F: Scalar>(
    panel: &PanelDataset<F>,
    matched: &MatchResult<F>,
    lambda: &PeriodSelector,
) -> Result<EstimateReport<F>> {
    let (dy, weights, estimate) = pairwise_parts(panel, matched, lambda)?;
    let naive = two_group_naive_variance(
        panel,
        &dy,
        matched.target_cohort(),
        matched.comparison_cohort(),
        &weights,
    );
    Ok(EstimateReport::new(
        EstimatorKind::Pairwise,
        estimate,
        naive.sqrt(),
        Target::new(Some(matched.target_cohort()), Some(matched.comparison_cohort()), lambda),
        Diagnostics::from_match(panel, matched),
    ))
}

/// Which outcome-model fit the bias correction ended up using.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BiasFit {
    /// Weighted by `K/M` over the matched comparison units.
    MatchWeighted,
    /// Unweighted over every comparison unit.
    UnweightedFallback,
    /// No usable fit; no correction applied.
    Uncorrected,
}

/// Estimated matching bias `B̂` and its per-target contributions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasCorrection<F> {
    pub fit: BiasFit,
    /// `B̂ = (1/N_s) Σ_i adjustment_i`.
    pub correction: F,
    /// `(1/M) Σ_m (μ̂₀(X_i) − μ̂₀(X_{j_m(i)}))` per target, in target order.
    pub per_target: Vec<F>,
    /// Covariate columns dropped as collinear (0-based, excluding the
    /// intercept).
    pub dropped_columns: Vec<usize>,
    pub notes: Vec<String>,
}

impl<F: Scalar> BiasCorrection<F> {
    /// Linear outcome-model fit of `ΔȲ` on `(1, X)` over comparison units,
    /// weighted by match usage, with the documented fallbacks.
    pub fn estimate(panel: &PanelDataset<F>, matched: &MatchResult<F>, lambda: &PeriodSelector) -> Result<Self> {
        check_same_panel(panel, matched)?;
        check_comparison_window(matched.comparison_cohort(), lambda)?;
        let dy = panel.transform_outcome(matched.target_cohort(), lambda)?;
        let comparisons = panel.units_in(matched.comparison_cohort());
        let design: Vec<Vec<F>> = comparisons
            .iter()
            .map(|&i| {
                let mut row = vec![F::one()];
                row.extend_from_slice(panel.covariate_row(i));
                row
            })
            .collect();
        let y: Vec<F> = comparisons.iter().map(|&i| dy[i]).collect();
        let m = F::from_count(matched.m());
        let match_w: Vec<F> = comparisons
            .iter()
            .map(|&i| F::from_count(matched.usage(i)) / m)
            .collect();

        let mut notes = Vec::new();
        let (fit, kind) = match weighted_least_squares(&design, &y, &match_w) {
            Ok(f) => (Some(f), BiasFit::MatchWeighted),
            Err(e) => {
                notes.push(format!("match-weighted outcome fit failed ({e}); refitting unweighted"));
                match weighted_least_squares(&design, &y, &vec![F::one(); y.len()]) {
                    Ok(f) => (Some(f), BiasFit::UnweightedFallback),
                    Err(e) => {
                        notes.push(format!("unweighted outcome fit failed ({e}); no bias correction"));
                        (None, BiasFit::Uncorrected)
                    }
                }
            }
        };

        let Some(fit) = fit else {
            return Ok(Self {
                fit: kind,
                correction: F::zero(),
                per_target: vec![F::zero(); matched.targets().len()],
                dropped_columns: Vec::new(),
                notes,
            });
        };
        let dropped_columns: Vec<usize> = fit.dropped.iter().filter(|&&j| j > 0).map(|&j| j - 1).collect();
        if !dropped_columns.is_empty() {
            notes.push(format!(
                "{} collinear covariate column(s) dropped from the outcome fit",
                dropped_columns.len()
            ));
        }
        let per_target = per_target_adjustment(panel, matched, &fit);
        let correction = crate::summation::pairwise_sum(&per_target) / F::from_count(per_target.len());
        Ok(Self {
            fit: kind,
            correction,
            per_target,
            dropped_columns,
            notes,
        })
    }
}

fn per_target_adjustment<F: Scalar>(panel: &PanelDataset<F>, matched: &MatchResult<F>, fit: &LinearFit<F>) -> Vec<F> {
    let mu = |i: usize| {
        let mut row = vec![F::one()];
        row.extend_from_slice(panel.covariate_row(i));
        fit.predict(&row)
    };
    let m = F::from_count(matched.m());
    matched
        .pairs()
        .map(|(i, nb)| {
            let own = mu(i);
            nb.iter().map(|&j| own - mu(j)).sum::<F>() / m
        })
        .collect()
}

/// Pairwise estimate minus the regression-based matching-bias estimate.
pub fn bias_corrected_pairwise<F: Scalar>(
    panel: &PanelDataset<F>,
    matched: &MatchResult<F>,
    lambda: &PeriodSelector,
) -> Result<EstimateReport<F>> {
    let correction = BiasCorrection::estimate(panel, matched, lambda)?;
    let mut report = pairwise_matched_did(panel, matched, lambda)?;
    report.estimator = EstimatorKind::BiasCorrected;
    report.bias_corrected_estimate = Some(report.estimate - correction.correction);
    report.diagnostics.notes.extend(correction.notes);
    report.refresh_interval();
    Ok(report)
}

/// Exact-cell DiD: comparison units weighted by `N_{s,x}/N_{0,x}` of their
/// covariate cell.
pub fn discrete_did<F: Scalar>(
    panel: &PanelDataset<F>,
    cells: &CellMatchResult<F>,
    lambda: &PeriodSelector,
) -> Result<EstimateReport<F>> {
    if cells.fingerprint() != panel.fingerprint() {
        return Err(Error::MismatchedPanels);
    }
    check_comparison_window(cells.comparison_cohort(), lambda)?;
    let s = cells.target_cohort();
    let c = cells.comparison_cohort();
    let dy = panel.transform_outcome(s, lambda)?;
    let estimate = weighted_contrast(panel, &dy, s, c, cells.weights());
    let naive = two_group_naive_variance(panel, &dy, s, c, cells.weights());
    let diagnostics = Diagnostics {
        treated_units: panel.cohort_size(s),
        comparison_units: panel.cohort_size(c),
        notes: vec![format!("{} covariate cells", cells.cells().len())],
        ..Diagnostics::default()
    };
    Ok(EstimateReport::new(
        EstimatorKind::Discrete,
        estimate,
        naive.sqrt(),
        Target::new(Some(s), Some(c), lambda),
        diagnostics,
    ))
}

/// Matched DiD from a without-replacement match: mean over targets of
/// `ΔȲ_i` minus the mean of its `M` matches.
pub fn no_replacement_did<F: Scalar>(
    panel: &PanelDataset<F>,
    matched: &MatchResult<F>,
    lambda: &PeriodSelector,
) -> Result<EstimateReport<F>> {
    if matched.spec().replacement != Replacement::Without {
        return Err(Error::invalid(
            "no-replacement estimator needs a without-replacement match",
        ));
    }
    check_same_panel(panel, matched)?;
    check_comparison_window(matched.comparison_cohort(), lambda)?;
    let dy = panel.transform_outcome(matched.target_cohort(), lambda)?;
    let m = F::from_count(matched.m());
    let per_pair: Vec<F> = matched
        .pairs()
        .map(|(i, nb)| dy[i] - nb.iter().map(|&j| dy[j]).sum::<F>() / m)
        .collect();
    let estimate = crate::summation::pairwise_sum(&per_pair) / F::from_count(per_pair.len());
    let weights = match_weights(panel, matched);
    let naive = two_group_naive_variance(
        panel,
        &dy,
        matched.target_cohort(),
        matched.comparison_cohort(),
        &weights,
    );
    let mut diagnostics = Diagnostics::from_match(panel, matched);
    diagnostics.matched_sample_size = Some((matched.m() + 1) * matched.targets().len());
    Ok(EstimateReport::new(
        EstimatorKind::NoReplacement,
        estimate,
        naive.sqrt(),
        Target::new(Some(matched.target_cohort()), Some(matched.comparison_cohort()), lambda),
        diagnostics,
    ))
}
