use serde::{Deserialize, Serialize};

use super::weights::{plim_weights, PlimWeights};
use crate::error::Result;
use crate::inference::DgpMoments;
use crate::panel::{CohortLabel, CohortShares, PeriodSelector};

/// Probability limit of the pooled matched 2WFE split into its parts.
///
/// `b_pool_matched` collects the bias of the comparisons against the
/// never-treated: matching on pooled usage counts reweights the
/// never-treated to the covariate distribution of all treated units rather
/// than of each cohort, so under conditional parallel trends those
/// comparisons pick up the trend gap between cohort `s` and the pooled
/// treated population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasDecomposition {
    pub weighted_att_part: f64,
    pub b_het_cohort: f64,
    pub b_het_time: f64,
    pub b_pool: f64,
    pub b_pool_matched: f64,
    pub total_plim: f64,
    pub weights: PlimWeights<f64>,
}

impl BiasDecomposition {
    fn assemble(
        weighted_att_part: f64,
        b_het_cohort: f64,
        b_het_time: f64,
        b_pool: f64,
        b_pool_matched: f64,
        weights: PlimWeights<f64>,
    ) -> Self {
        Self {
            weighted_att_part,
            b_het_cohort,
            b_het_time,
            b_pool,
            b_pool_matched,
            total_plim: weighted_att_part + b_het_cohort - b_het_time + b_pool + b_pool_matched,
            weights,
        }
    }
}

/// Shares tolerance when shares come from numerical integration.
const SHARE_TOLERANCE: f64 = 1e-6;

fn mean_over<I: Iterator<Item = f64>>(it: I) -> Option<f64> {
    let (sum, count) = it.fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    (count > 0).then(|| sum / count as f64)
}

/// Evaluate every term of the pooled estimator's probability limit for a
/// known DGP.
pub fn plim_bias(dgp: &dyn DgpMoments, lambda: &PeriodSelector) -> Result<BiasDecomposition> {
    let cohorts = dgp.cohorts();
    let share_map = cohorts.iter().map(|&c| (c, dgp.share(c))).collect();
    let shares = CohortShares::new(share_map, SHARE_TOLERANCE)?;
    let weights = plim_weights(&shares, lambda)?;
    let finite = shares.finite_cohorts();
    let never = CohortLabel::Never;
    let periods: Vec<usize> = lambda.periods().collect();

    let att = |c: CohortLabel, t: usize| dgp.cohort_mean(c, &|x| dgp.effect_mean(c, t, x));
    let trend = |c: CohortLabel, t: usize, tp: usize| {
        dgp.cohort_mean(c, &|x| dgp.untreated_mean(c, t, x) - dgp.untreated_mean(c, tp, x))
    };
    let p_never = shares.never();
    // never-treated trend averaged over the pooled treated covariate law
    let matched_trend = |t: usize, tp: usize| {
        dgp.integrate(&|x| {
            (1.0 - dgp.propensity(never, x)) * (dgp.untreated_mean(never, t, x) - dgp.untreated_mean(never, tp, x))
        }) / (1.0 - p_never)
    };

    let mut att_part = 0.0;
    for (&s, &phi) in &weights.phi1 {
        if let Some(v) = mean_over(periods.iter().filter(|&&t| s.treated_at(t)).map(|&t| att(s, t))) {
            att_part += phi * v;
        }
    }
    for (&(s, sp), &phi) in &weights.phi2 {
        if let Some(v) = mean_over(
            periods
                .iter()
                .filter(|&&t| s.treated_at(t) && !sp.treated_at(t))
                .map(|&t| att(s, t)),
        ) {
            att_part += phi * v;
        }
    }

    let mut b_cohort = 0.0;
    for (&(s, sp), &eta) in &weights.eta1 {
        let start = s.max(sp);
        if let Some(v) = mean_over(
            periods
                .iter()
                .filter(|&&t| start.treated_at(t))
                .map(|&t| att(s, t) - att(sp, t)),
        ) {
            b_cohort += eta * v;
        }
    }

    let mut b_time = 0.0;
    for (&(s, sp), &eta) in &weights.eta2 {
        let mut vals = Vec::new();
        for &t in periods.iter().filter(|&&t| s.treated_at(t)) {
            for &tp in periods.iter().filter(|&&tp| sp.treated_at(tp) && !s.treated_at(tp)) {
                vals.push(att(sp, t) - att(sp, tp));
            }
        }
        if let Some(v) = mean_over(vals.into_iter()) {
            b_time += eta * v;
        }
    }

    let pre_post = |s: CohortLabel| -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for &t in periods.iter().filter(|&&t| s.treated_at(t)) {
            for &tp in periods.iter().filter(|&&tp| !s.treated_at(tp)) {
                out.push((t, tp));
            }
        }
        out
    };

    let mut b_pool = 0.0;
    for (&(s, sp), &eta) in &weights.eta3 {
        if let Some(v) = mean_over(
            pre_post(s)
                .into_iter()
                .map(|(t, tp)| trend(s, t, tp) - trend(sp, t, tp)),
        ) {
            b_pool += eta * v;
        }
    }

    // weight of the vs-never comparisons of cohort s: p_s Λ_s (1 − Λ_s) / D
    let mut b_matched = 0.0;
    for &s in &finite {
        let ls: f64 = lambda.post_share(s);
        let w = shares.get(s) * ls * (1.0 - ls) / weights.denominator;
        if let Some(v) = mean_over(
            pre_post(s)
                .into_iter()
                .map(|(t, tp)| trend(s, t, tp) - matched_trend(t, tp)),
        ) {
            b_matched += w * v;
        }
    }

    Ok(BiasDecomposition::assemble(
        att_part, b_cohort, b_time, b_pool, b_matched, weights,
    ))
}
