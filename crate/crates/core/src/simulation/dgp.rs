//! The two data-generating processes of the Monte Carlo harness.

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::DgpMoments;
use crate::integration::{CovariateMeasure, UniformMeasure};
use crate::panel::{CohortLabel, CovariateKind, PanelDataset, PeriodSelector};

/// Number of periods in both designs.
pub const PERIODS: usize = 4;

/// Staggered-adoption design with a scalar uniform covariate.
///
/// Cohort `s` is drawn with probability proportional to `exp((s − 1) X)`
/// and the never-treated with probability proportional to one. Outcomes are
/// `Y_t(0) = α + (t − 1) + slope·X(t − 1) + u_t` and
/// `Y_t(1) = effect + Y_t(0)` with fresh noise `v_t` in place of `u_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StaggeredDgpConfig {
    pub n: usize,
    pub treated_cohorts: Vec<usize>,
    pub x_lower: f64,
    pub x_upper: f64,
    pub effect: f64,
    pub trend_slope: f64,
    pub unit_effect_sd: f64,
    pub noise_sd: f64,
}

impl Default for StaggeredDgpConfig {
    fn default() -> Self {
        Self {
            n: 1000,
            treated_cohorts: vec![2, 3],
            x_lower: -1.0,
            x_upper: 2.0,
            effect: 5.0,
            trend_slope: 5.0,
            unit_effect_sd: 1.0,
            noise_sd: 1.0,
        }
    }
}

/// The two single-cohort designs used for the inference study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InferenceDesign {
    ConstantEffect,
    Heterogeneous,
}

/// One treated cohort (period 3) against the never-treated, logistic
/// assignment `P[t* = 3 | X] = 1 / (1 + exp(−propensity_slope·X))`.
///
/// `Y_t(0) = α + (t − 1) + untreated_slope·X(t − 1) + u_t` and
/// `Y_t(1) = level + α + (t − 1) + treated_slope·X(t − 1) + v_t`, so the
/// conditional effect is `level + (treated_slope − untreated_slope) X (t − 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceDgpConfig {
    pub n: usize,
    pub design: InferenceDesign,
    pub x_lower: f64,
    pub x_upper: f64,
    pub propensity_slope: f64,
    pub level: f64,
    pub untreated_slope: f64,
    pub treated_slope: f64,
    pub unit_effect_sd: f64,
    pub noise_sd: f64,
}

impl InferenceDgpConfig {
    pub fn new(design: InferenceDesign) -> Self {
        let untreated_slope = match design {
            InferenceDesign::ConstantEffect => 5.0,
            InferenceDesign::Heterogeneous => -2.0,
        };
        Self {
            n: 1000,
            design,
            x_lower: -0.5,
            x_upper: 0.5,
            propensity_slope: 1.0,
            level: 5.0,
            untreated_slope,
            treated_slope: 5.0,
            unit_effect_sd: 1.0,
            noise_sd: 1.0,
        }
    }

    pub fn constant_effect() -> Self {
        Self::new(InferenceDesign::ConstantEffect)
    }

    pub fn heterogeneous() -> Self {
        Self::new(InferenceDesign::Heterogeneous)
    }

    /// The single treated cohort.
    pub fn cohort(&self) -> CohortLabel {
        CohortLabel::Period(3)
    }
}

fn check_common(n: usize, lower: f64, upper: f64, sds: [f64; 2]) -> Result<()> {
    if n < 2 {
        return Err(Error::invalid("simulation needs n >= 2"));
    }
    if !(lower < upper) || !lower.is_finite() || !upper.is_finite() {
        return Err(Error::invalid(format!("covariate support [{lower}, {upper}] is empty")));
    }
    if sds.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
        return Err(Error::invalid("standard deviations must be finite and nonnegative"));
    }
    Ok(())
}

fn normal(sd: f64) -> Normal<f64> {
    Normal::new(0.0, sd).expect("validated standard deviation")
}

/// Cohort index from cumulative probabilities.
fn draw_category<R: Rng>(rng: &mut R, probs: &[f64]) -> usize {
    debug_assert!(
        (probs.iter().sum::<f64>() - 1.0).abs() < 1e-12,
        "assignment probabilities must sum to one"
    );
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (k, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    probs.len() - 1
}

/// A simulated unit: covariate, cohort, and per-period slopes and levels.
struct UnitDraw {
    x: f64,
    cohort: CohortLabel,
}

fn simulate_outcomes<R: Rng>(
    rng: &mut R,
    unit: &UnitDraw,
    unit_sd: f64,
    noise_sd: f64,
    untreated: impl Fn(usize, f64) -> f64,
    treated: impl Fn(usize, f64) -> f64,
) -> Vec<f64> {
    let alpha = normal(unit_sd).sample(rng);
    let noise = normal(noise_sd);
    (1..=PERIODS)
        .map(|t| {
            let mean = if unit.cohort.treated_at(t) {
                treated(t, unit.x)
            } else {
                untreated(t, unit.x)
            };
            alpha + mean + noise.sample(rng)
        })
        .collect()
}

fn assemble(units: Vec<UnitDraw>, outcomes: Vec<Vec<f64>>) -> Result<PanelDataset<f64>> {
    let cohorts = units.iter().map(|u| u.cohort).collect();
    let covariates = units.iter().map(|u| vec![u.x]).collect();
    PanelDataset::new(outcomes, cohorts, covariates, vec![CovariateKind::Continuous])
}

/// Variance of `ΔȲ^s(λ)` given `X` when every period carries independent
/// noise of variance `σ²` and the unit effect cancels.
fn transformed_noise(noise_sd: f64, s: CohortLabel, lambda: &PeriodSelector) -> f64 {
    let post = lambda.count_post(s) as f64;
    let pre = lambda.count_pre(s) as f64;
    noise_sd * noise_sd * (1.0 / post + 1.0 / pre)
}

impl StaggeredDgpConfig {
    pub fn validate(&self) -> Result<()> {
        check_common(self.n, self.x_lower, self.x_upper, [self.unit_effect_sd, self.noise_sd])?;
        let mut seen = self.treated_cohorts.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.treated_cohorts.len() || seen.iter().any(|s| !(2..=PERIODS).contains(s)) {
            return Err(Error::InvalidCohortLabel(format!(
                "treated cohorts {:?} must be distinct and within 2..={PERIODS}",
                self.treated_cohorts
            )));
        }
        Ok(())
    }

    fn probabilities(&self, x: f64) -> Vec<f64> {
        // never-treated first, then the treated cohorts in configured order
        let mut raw = vec![1.0];
        raw.extend(self.treated_cohorts.iter().map(|&s| ((s as f64 - 1.0) * x).exp()));
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|r| r / total).collect()
    }

    fn label(&self, k: usize) -> CohortLabel {
        if k == 0 {
            CohortLabel::Never
        } else {
            CohortLabel::Period(self.treated_cohorts[k - 1])
        }
    }

    /// Draw one panel.
    pub fn draw<R: Rng>(&self, rng: &mut R) -> Result<PanelDataset<f64>> {
        let xdist = Uniform::new(self.x_lower, self.x_upper);
        let mut units = Vec::with_capacity(self.n);
        let mut outcomes = Vec::with_capacity(self.n);
        for _ in 0..self.n {
            let x = xdist.sample(rng);
            let k = draw_category(rng, &self.probabilities(x));
            let unit = UnitDraw {
                x,
                cohort: self.label(k),
            };
            outcomes.push(simulate_outcomes(
                rng,
                &unit,
                self.unit_effect_sd,
                self.noise_sd,
                |t, x| self.untreated(t, x),
                |t, x| self.effect + self.untreated(t, x),
            ));
            units.push(unit);
        }
        assemble(units, outcomes)
    }

    fn untreated(&self, t: usize, x: f64) -> f64 {
        let lag = t as f64 - 1.0;
        lag + self.trend_slope * x * lag
    }

    fn measure(&self) -> UniformMeasure {
        UniformMeasure::interval(self.x_lower, self.x_upper)
    }
}

impl DgpMoments for StaggeredDgpConfig {
    fn covariate_dim(&self) -> usize {
        1
    }

    fn integrate(&self, g: &dyn Fn(&[f64]) -> f64) -> f64 {
        self.measure().expect(g)
    }

    fn cohorts(&self) -> Vec<CohortLabel> {
        let mut c: Vec<CohortLabel> = self.treated_cohorts.iter().map(|&s| CohortLabel::Period(s)).collect();
        c.push(CohortLabel::Never);
        c.sort();
        c
    }

    fn propensity(&self, cohort: CohortLabel, x: &[f64]) -> f64 {
        let probs = self.probabilities(x[0]);
        (0..probs.len())
            .find(|&k| self.label(k) == cohort)
            .map_or(0.0, |k| probs[k])
    }

    fn untreated_mean(&self, _cohort: CohortLabel, t: usize, x: &[f64]) -> f64 {
        self.untreated(t, x[0])
    }

    fn effect_mean(&self, cohort: CohortLabel, t: usize, _x: &[f64]) -> f64 {
        if cohort.treated_at(t) {
            self.effect
        } else {
            0.0
        }
    }

    fn transformed_variance(&self, _group: CohortLabel, s: CohortLabel, lambda: &PeriodSelector, _x: &[f64]) -> f64 {
        transformed_noise(self.noise_sd, s, lambda)
    }
}

impl InferenceDgpConfig {
    pub fn validate(&self) -> Result<()> {
        check_common(self.n, self.x_lower, self.x_upper, [self.unit_effect_sd, self.noise_sd])
    }

    fn treated_probability(&self, x: f64) -> f64 {
        1.0 / (1.0 + (-self.propensity_slope * x).exp())
    }

    fn untreated(&self, t: usize, x: f64) -> f64 {
        let lag = t as f64 - 1.0;
        lag + self.untreated_slope * x * lag
    }

    fn treated(&self, t: usize, x: f64) -> f64 {
        let lag = t as f64 - 1.0;
        self.level + lag + self.treated_slope * x * lag
    }

    /// Draw one panel.
    pub fn draw<R: Rng>(&self, rng: &mut R) -> Result<PanelDataset<f64>> {
        let xdist = Uniform::new(self.x_lower, self.x_upper);
        let mut units = Vec::with_capacity(self.n);
        let mut outcomes = Vec::with_capacity(self.n);
        for _ in 0..self.n {
            let x = xdist.sample(rng);
            let p = self.treated_probability(x);
            let cohort = if draw_category(rng, &[p, 1.0 - p]) == 0 {
                self.cohort()
            } else {
                CohortLabel::Never
            };
            let unit = UnitDraw { x, cohort };
            outcomes.push(simulate_outcomes(
                rng,
                &unit,
                self.unit_effect_sd,
                self.noise_sd,
                |t, x| self.untreated(t, x),
                |t, x| self.treated(t, x),
            ));
            units.push(unit);
        }
        assemble(units, outcomes)
    }

    fn measure(&self) -> UniformMeasure {
        UniformMeasure::interval(self.x_lower, self.x_upper)
    }
}

impl DgpMoments for InferenceDgpConfig {
    fn covariate_dim(&self) -> usize {
        1
    }

    fn integrate(&self, g: &dyn Fn(&[f64]) -> f64) -> f64 {
        self.measure().expect(g)
    }

    fn cohorts(&self) -> Vec<CohortLabel> {
        vec![self.cohort(), CohortLabel::Never]
    }

    fn propensity(&self, cohort: CohortLabel, x: &[f64]) -> f64 {
        let p = self.treated_probability(x[0]);
        if cohort == self.cohort() {
            p
        } else if cohort.is_never() {
            1.0 - p
        } else {
            0.0
        }
    }

    fn untreated_mean(&self, _cohort: CohortLabel, t: usize, x: &[f64]) -> f64 {
        self.untreated(t, x[0])
    }

    fn effect_mean(&self, cohort: CohortLabel, t: usize, x: &[f64]) -> f64 {
        if cohort.treated_at(t) {
            self.treated(t, x[0]) - self.untreated(t, x[0])
        } else {
            0.0
        }
    }

    fn transformed_variance(&self, _group: CohortLabel, s: CohortLabel, lambda: &PeriodSelector, _x: &[f64]) -> f64 {
        transformed_noise(self.noise_sd, s, lambda)
    }
}

/// Population ATT of the treated cohort averaged over every post period
/// (λ all ones), by quadrature against the cohort's covariate density.
///
/// Equals `level` exactly when the treated and untreated slopes coincide.
pub fn design2_estimand(config: &InferenceDgpConfig) -> f64 {
    let lambda = PeriodSelector::all(PERIODS);
    let s = config.cohort();
    let heterogeneity = config.treated_slope - config.untreated_slope;
    if heterogeneity == 0.0 {
        return config.level;
    }
    config.cohort_mean(s, &|x| config.conditional_att(s, &lambda, x))
}
