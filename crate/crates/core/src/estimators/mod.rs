//! Point estimators and their reports.

mod pairwise;
mod pooled;
pub(crate) mod regression;
pub(crate) mod twfe;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::matcher::MatchResult;
use crate::panel::{CohortLabel, PanelDataset, PeriodSelector};
use crate::scalar::Scalar;

pub use pairwise::{
    bias_corrected_pairwise, discrete_did, no_replacement_did, pairwise_matched_did, BiasCorrection, BiasFit,
};
pub use pooled::pooled_matched_2wfe;
pub use twfe::{lemma_a1_decompose, weighted_2wfe, ComparisonKind, Decomposition, TwoByTwoComponent};

/// Where a weight vector came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "cohort")]
pub enum WeightProvenance {
    Pooled,
    Pairwise(CohortLabel),
    Custom,
}

/// Nonnegative unit weights `w_i` for the weighted 2WFE.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector<F> {
    weights: Vec<F>,
    provenance: WeightProvenance,
}

impl<F: Scalar> WeightVector<F> {
    /// Arbitrary weights; must be finite, nonnegative and not all zero.
    pub fn custom(weights: Vec<F>) -> Result<Self> {
        Self::checked(weights, WeightProvenance::Custom)
    }

    fn checked(weights: Vec<F>, provenance: WeightProvenance) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite() || *w < F::zero()) {
            return Err(Error::invalid("weights must be finite and nonnegative"));
        }
        if weights.iter().copied().sum::<F>() <= F::zero() {
            return Err(Error::invalid("weights must not all be zero"));
        }
        Ok(Self { weights, provenance })
    }

    /// `w^s`: one for cohort-`s` units, `K_M(i,s)/M` for comparison units,
    /// zero elsewhere.
    pub fn pairwise(panel: &PanelDataset<F>, matched: &MatchResult<F>) -> Result<Self> {
        check_same_panel(panel, matched)?;
        let s = matched.target_cohort();
        let c = matched.comparison_cohort();
        let m = F::from_count(matched.m());
        let weights = (0..panel.n())
            .map(|i| {
                let cohort = panel.cohort(i);
                if cohort == s {
                    F::one()
                } else if cohort == c {
                    F::from_count(matched.usage(i)) / m
                } else {
                    F::zero()
                }
            })
            .collect();
        Self::checked(weights, WeightProvenance::Pairwise(s))
    }

    /// `w^pool`: one for every eventually treated unit, `K_M(i)/M` for the
    /// never-treated, from total usage counts `K_M(i)`.
    pub fn pooled(panel: &PanelDataset<F>, usage: &[usize], neighbors: usize) -> Result<Self> {
        if usage.len() != panel.n() {
            return Err(Error::MismatchedPanels);
        }
        let m = F::from_count(neighbors);
        let weights = (0..panel.n())
            .map(|i| {
                if panel.cohort(i).is_never() {
                    F::from_count(usage[i]) / m
                } else {
                    F::one()
                }
            })
            .collect();
        Self::checked(weights, WeightProvenance::Pooled)
    }

    /// The same weights multiplied by `c > 0`, e.g. `1/N_s` for the
    /// normalized pairwise weights.
    pub fn scaled(&self, c: F) -> Result<Self> {
        if !(c > F::zero()) {
            return Err(Error::invalid("weight scale must be positive"));
        }
        Self::checked(self.weights.iter().map(|w| *w * c).collect(), self.provenance)
    }

    pub fn as_slice(&self) -> &[F] {
        &self.weights
    }

    pub fn provenance(&self) -> WeightProvenance {
        self.provenance
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

pub(crate) fn check_same_panel<F: Scalar>(panel: &PanelDataset<F>, matched: &MatchResult<F>) -> Result<()> {
    if matched.fingerprint() != panel.fingerprint() || matched.n() != panel.n() {
        return Err(Error::MismatchedPanels);
    }
    Ok(())
}

/// Which estimator produced a report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorKind {
    Pooled,
    Pairwise,
    BiasCorrected,
    Discrete,
    NoReplacement,
    TwoWayFixedEffects,
    DifferenceInMeans,
}

/// The estimand: cohort-`s` ATT averaged over the included post periods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub cohort: Option<CohortLabel>,
    pub comparison: Option<CohortLabel>,
    pub periods: Vec<usize>,
}

impl Target {
    pub fn new(cohort: Option<CohortLabel>, comparison: Option<CohortLabel>, lambda: &PeriodSelector) -> Self {
        Self {
            cohort,
            comparison,
            periods: lambda.periods().collect(),
        }
    }
}

/// Match and fit summaries attached to a report.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Diagnostics<F> {
    pub neighbors: Option<usize>,
    pub mean_match_distance: Option<F>,
    pub max_usage: Option<usize>,
    pub tied_matches: Option<usize>,
    pub treated_units: usize,
    pub comparison_units: usize,
    pub matched_sample_size: Option<usize>,
    pub notes: Vec<String>,
}

impl<F: Scalar> Diagnostics<F> {
    pub(crate) fn from_match(panel: &PanelDataset<F>, matched: &MatchResult<F>) -> Self {
        Self {
            neighbors: Some(matched.m()),
            mean_match_distance: Some(matched.mean_distance()),
            max_usage: Some(matched.max_usage()),
            tied_matches: Some(matched.tie_count(panel)),
            treated_units: matched.targets().len(),
            comparison_units: panel.cohort_size(matched.comparison_cohort()),
            matched_sample_size: None,
            notes: Vec::new(),
        }
    }
}

/// Point estimate with standard errors and a two-sided 95% normal interval.
///
/// The interval and p-value are centered on the bias-corrected estimate when
/// present and use the corrected standard error when present, falling back
/// to the naive one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport<F> {
    pub estimator: EstimatorKind,
    pub estimate: F,
    pub bias_corrected_estimate: Option<F>,
    pub naive_se: Option<F>,
    pub corrected_se: Option<F>,
    pub ci_low: F,
    pub ci_high: F,
    pub p_value: F,
    pub target: Target,
    pub diagnostics: Diagnostics<F>,
}

/// Two-sided 95% standard normal critical value.
pub fn normal_critical_value() -> f64 {
    Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(0.975)
}

impl<F: Scalar> EstimateReport<F> {
    pub(crate) fn new(
        estimator: EstimatorKind,
        estimate: F,
        naive_se: F,
        target: Target,
        diagnostics: Diagnostics<F>,
    ) -> Self {
        let mut r = Self {
            estimator,
            estimate,
            bias_corrected_estimate: None,
            naive_se: Some(naive_se),
            corrected_se: None,
            ci_low: estimate,
            ci_high: estimate,
            p_value: F::one(),
            target,
            diagnostics,
        };
        r.refresh_interval();
        r
    }

    /// Estimate the interval is centered on.
    pub fn point(&self) -> F {
        self.bias_corrected_estimate.unwrap_or(self.estimate)
    }

    /// Standard error the interval uses.
    pub fn se(&self) -> Option<F> {
        self.corrected_se.or(self.naive_se)
    }

    /// Attach a matching-corrected standard error and rebuild the interval.
    pub fn with_corrected_se(mut self, se: F) -> Self {
        self.corrected_se = Some(se);
        self.refresh_interval();
        self
    }

    /// Whether the 95% interval covers `value`.
    pub fn covers(&self, value: F) -> bool {
        self.ci_low <= value && value <= self.ci_high
    }

    pub(crate) fn refresh_interval(&mut self) {
        let point = self.point();
        let Some(se) = self.se() else {
            self.ci_low = point;
            self.ci_high = point;
            self.p_value = F::one();
            return;
        };
        let z = F::lit(normal_critical_value());
        self.ci_low = point - z * se;
        self.ci_high = point + z * se;
        self.p_value = if se > F::zero() {
            let stat = (point / se).abs().to_f64().unwrap_or(f64::INFINITY);
            let sf = Normal::new(0.0, 1.0).expect("standard normal").sf(stat);
            F::lit((2.0 * sf).min(1.0))
        } else if point == F::zero() {
            F::one()
        } else {
            F::zero()
        };
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(est: f64, se: f64) -> EstimateReport<f64> {
        EstimateReport::new(
            EstimatorKind::Pairwise,
            est,
            se,
            Target {
                cohort: None,
                comparison: None,
                periods: vec![1, 2],
            },
            Diagnostics::default(),
        )
    }

    #[test]
    fn interval_and_p_value() {
        let r = report(1.959963984540054, 1.0);
        assert!((r.p_value - 0.05).abs() < 1e-9, "{}", r.p_value);
        assert!(r.ci_low.abs() < 1e-12);
        assert!(r.covers(1.0));
        let r = report(0.0, 0.0);
        assert_eq!(r.p_value, 1.0);
        let r = report(2.0, 0.0);
        assert_eq!(r.p_value, 0.0);
    }

    #[test]
    fn corrected_se_replaces_naive_in_interval() {
        let r = report(1.0, 1.0).with_corrected_se(0.1);
        assert!(r.ci_high < 1.2);
        assert_eq!(r.naive_se, Some(1.0));
    }

    #[test]
    fn custom_weights_validated() {
        assert!(WeightVector::custom(vec![0.0, 0.0]).is_err());
        assert!(WeightVector::custom(vec![-1.0, 2.0]).is_err());
        let w = WeightVector::custom(vec![1.0, 2.0]).unwrap();
        assert!(w.scaled(0.0).is_err());
        assert_eq!(w.scaled(0.5).unwrap().as_slice(), &[0.5, 1.0]);
    }
}
