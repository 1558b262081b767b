//! Population variance calculators for known data-generating processes.

use serde::{Deserialize, Serialize};

use super::alpha::{alpha, AlphaTable};
use crate::error::{Error, Result};
use crate::panel::{CohortLabel, PeriodSelector};

/// Conditional moments of a known DGP with one treated-cohort structure.
///
/// `propensity(c, x)` is `P[t* = c | X = x]`; `untreated_mean(c, t, x)` is
/// `E[Y_t(0) | t* = c, X = x]`; `effect_mean(c, t, x)` is
/// `E[Y_t(1) − Y_t(0) | t* = c, X = x]` (zero before `c` by no
/// anticipation); `transformed_variance(g, s, λ, x)` is the conditional
/// variance of `ΔȲ^s(λ)` for cohort `g` (treated outcomes for `g = s`,
/// untreated outcomes for the never-treated).
pub trait DgpMoments: Sync {
    fn covariate_dim(&self) -> usize;

    /// `E[g(X)]` over the marginal covariate distribution.
    fn integrate(&self, g: &dyn Fn(&[f64]) -> f64) -> f64;

    fn cohorts(&self) -> Vec<CohortLabel>;

    fn propensity(&self, cohort: CohortLabel, x: &[f64]) -> f64;

    fn untreated_mean(&self, cohort: CohortLabel, t: usize, x: &[f64]) -> f64;

    fn effect_mean(&self, cohort: CohortLabel, t: usize, x: &[f64]) -> f64;

    fn transformed_variance(&self, group: CohortLabel, s: CohortLabel, lambda: &PeriodSelector, x: &[f64]) -> f64;

    /// `p_c = E[e_c(X)]`.
    fn share(&self, cohort: CohortLabel) -> f64 {
        self.integrate(&|x| self.propensity(cohort, x))
    }

    /// Cohort-`s` conditional ATT averaged over included post periods.
    fn conditional_att(&self, s: CohortLabel, lambda: &PeriodSelector, x: &[f64]) -> f64 {
        let post: Vec<usize> = lambda.periods().filter(|&t| s.treated_at(t)).collect();
        post.iter().map(|&t| self.effect_mean(s, t, x)).sum::<f64>() / post.len() as f64
    }

    /// `E[g(X) | t* = c] = E[e_c(X) g(X)] / p_c`.
    fn cohort_mean(&self, cohort: CohortLabel, g: &dyn Fn(&[f64]) -> f64) -> f64 {
        self.integrate(&|x| self.propensity(cohort, x) * g(x)) / self.share(cohort)
    }
}

fn check_cohort(s: CohortLabel, lambda: &PeriodSelector) -> Result<()> {
    if s.is_never() {
        return Err(Error::invalid("variance calculators need a finite cohort"));
    }
    if lambda.count_post(s) == 0 || lambda.count_pre(s) == 0 {
        return Err(Error::EmptyWindow(format!(
            "cohort {s} under the given period selector"
        )));
    }
    Ok(())
}

struct Pieces {
    p_s: f64,
    heterogeneity: f64,
    treated_noise: f64,
    /// `E[e_s σ²₀]`
    noise_linear: f64,
    /// `E[e_s² σ²₀ / e_∞]`
    noise_ratio: f64,
}

fn pieces(dgp: &dyn DgpMoments, s: CohortLabel, lambda: &PeriodSelector) -> Pieces {
    let never = CohortLabel::Never;
    let p_s = dgp.share(s);
    let att = dgp.cohort_mean(s, &|x| dgp.conditional_att(s, lambda, x));
    let heterogeneity = dgp.integrate(&|x| {
        let d = dgp.conditional_att(s, lambda, x) - att;
        dgp.propensity(s, x) * d * d
    });
    let treated_noise = dgp.integrate(&|x| dgp.propensity(s, x) * dgp.transformed_variance(s, s, lambda, x));
    let noise_linear = dgp.integrate(&|x| dgp.propensity(s, x) * dgp.transformed_variance(never, s, lambda, x));
    let noise_ratio = dgp.integrate(&|x| {
        let e_s = dgp.propensity(s, x);
        e_s * e_s * dgp.transformed_variance(never, s, lambda, x) / dgp.propensity(never, x)
    });
    Pieces {
        p_s,
        heterogeneity,
        treated_noise,
        noise_linear,
        noise_ratio,
    }
}

/// Asymptotic variance `V(s, λ)` of the pairwise matched estimator:
/// `E[e_s (τ(X) − τ)²]/p_s² + E[e_s σ²_s]/p_s² + E[(M + α e_s/e_∞) e_s σ²₀]/(p_s² M²)`.
pub fn theoretical_variance(
    dgp: &dyn DgpMoments,
    s: CohortLabel,
    lambda: &PeriodSelector,
    m: usize,
    table: &AlphaTable,
) -> Result<f64> {
    check_cohort(s, lambda)?;
    let a = alpha(m, dgp.covariate_dim(), table)?;
    let p = pieces(dgp, s, lambda);
    let p2 = p.p_s * p.p_s;
    let mf = m as f64;
    Ok((p.heterogeneity + p.treated_noise) / p2 + (mf * p.noise_linear + a * p.noise_ratio) / (p2 * mf * mf))
}

/// Efficiency bound, matched-estimator variance and their gap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyGap {
    pub variance: f64,
    pub bound: f64,
    pub gap: f64,
}

/// Semiparametric efficiency bound and the gap
/// `(1/M) E[e_s σ²₀]/p_s² + (α/M² − 1) E[e_s² σ²₀/e_∞]/p_s²`.
///
/// The gap is computed from its own closed form and checked against
/// `V − V_SEB`.
pub fn seb_and_gap(
    dgp: &dyn DgpMoments,
    s: CohortLabel,
    lambda: &PeriodSelector,
    m: usize,
    table: &AlphaTable,
) -> Result<EfficiencyGap> {
    check_cohort(s, lambda)?;
    let a = alpha(m, dgp.covariate_dim(), table)?;
    let p = pieces(dgp, s, lambda);
    let p2 = p.p_s * p.p_s;
    let mf = m as f64;
    let bound = (p.heterogeneity + p.treated_noise + p.noise_ratio) / p2;
    let gap = p.noise_linear / (mf * p2) + (a / (mf * mf) - 1.0) * p.noise_ratio / p2;
    let variance = theoretical_variance(dgp, s, lambda, m, table)?;
    let scale = variance.abs().max(f64::MIN_POSITIVE);
    if ((variance - bound) - gap).abs() > 1e-10 * scale {
        return Err(Error::invalid(format!(
            "variance decomposition inconsistent: V - V_SEB = {}, gap = {gap}",
            variance - bound
        )));
    }
    Ok(EfficiencyGap { variance, bound, gap })
}
