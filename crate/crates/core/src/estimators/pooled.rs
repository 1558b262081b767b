use super::{check_same_panel, Decomposition, Diagnostics, EstimateReport, EstimatorKind, Target, WeightVector};
use crate::error::{Error, Result};
use crate::inference::cluster_robust_2wfe_variance;
use crate::matcher::{pool_usage, MatchResult};
use crate::panel::{CohortLabel, PanelDataset, PeriodSelector};
use crate::scalar::Scalar;

use super::twfe::lemma_a1_decompose;

/// Pooled matched 2WFE: every eventually treated unit gets weight one and
/// each never-treated unit `K_M(i)/M`, its total usage across the per-cohort
/// matches. Returns the report (with the clustered naive standard error)
/// and the exact 2x2 decomposition under the same weights.
pub fn pooled_matched_2wfe<F: Scalar>(
    panel: &PanelDataset<F>,
    matches: &[MatchResult<F>],
    lambda: &PeriodSelector,
) -> Result<(EstimateReport<F>, Decomposition<F>)> {
    let first = matches
        .first()
        .ok_or_else(|| Error::invalid("pooled estimator needs one match per treated cohort"))?;
    for r in matches {
        check_same_panel(panel, r)?;
        if r.comparison_cohort() != CohortLabel::Never {
            return Err(Error::invalid(
                "pooled estimator matches against the never-treated only",
            ));
        }
        if r.m() != first.m() {
            return Err(Error::invalid("all cohort matches must use the same M"));
        }
    }
    let mut matched: Vec<CohortLabel> = matches.iter().map(|r| r.target_cohort()).collect();
    matched.sort();
    let finite: Vec<CohortLabel> = panel.cohort_labels().into_iter().filter(|c| !c.is_never()).collect();
    if matched != finite {
        return Err(Error::invalid(format!(
            "pooled estimator needs exactly one match per treated cohort {finite:?}, got {matched:?}"
        )));
    }

    let usage = pool_usage(matches)?;
    let w = WeightVector::pooled(panel, &usage, first.m())?;
    let (estimate, variance) = cluster_robust_2wfe_variance(panel, &w, lambda)?;
    let decomposition = lemma_a1_decompose(panel, &w, lambda)?;

    let distances: Vec<F> = matches
        .iter()
        .flat_map(|r| (0..r.targets().len()).flat_map(move |k| r.distances_of(k).to_vec()))
        .collect();
    let mean_distance = if distances.is_empty() {
        F::zero()
    } else {
        crate::summation::pairwise_sum(&distances) / F::from_count(distances.len())
    };
    let diagnostics = Diagnostics {
        neighbors: Some(first.m()),
        mean_match_distance: Some(mean_distance),
        max_usage: usage.iter().copied().max(),
        tied_matches: Some(matches.iter().map(|r| r.tie_count(panel)).sum()),
        treated_units: panel.n() - panel.cohort_size(CohortLabel::Never),
        comparison_units: panel.cohort_size(CohortLabel::Never),
        matched_sample_size: None,
        notes: Vec::new(),
    };
    let report = EstimateReport::new(
        EstimatorKind::Pooled,
        estimate,
        variance.sqrt(),
        Target::new(None, Some(CohortLabel::Never), lambda),
        diagnostics,
    );
    Ok((report, decomposition))
}
