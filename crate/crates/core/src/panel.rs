//! Balanced staggered-adoption panels and cohort/period bookkeeping.
//!
//! Periods are indexed `1..=T`. A unit's cohort is the first period in which
//! it is treated (treatment is absorbing) or [`CohortLabel::Never`].

use std::collections::hash_map::DefaultHasher;
use std::collections::BTreeMap;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::scalar::{Field, Scalar};

/// First treatment period of a unit, or never treated.
///
/// Every finite period orders before `Never`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CohortLabel {
    Period(usize),
    Never,
}

impl CohortLabel {
    pub fn is_never(self) -> bool {
        matches!(self, CohortLabel::Never)
    }

    /// The treatment period, `None` for never-treated.
    pub fn period(self) -> Option<usize> {
        match self {
            CohortLabel::Period(s) => Some(s),
            CohortLabel::Never => None,
        }
    }

    /// Treatment indicator `D_it = 1(t >= s)`.
    pub fn treated_at(self, t: usize) -> bool {
        match self {
            CohortLabel::Period(s) => t >= s,
            CohortLabel::Never => false,
        }
    }
}

impl fmt::Display for CohortLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CohortLabel::Period(s) => write!(f, "{s}"),
            CohortLabel::Never => f.write_str("inf"),
        }
    }
}

impl FromStr for CohortLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        if t.is_empty() || t.eq_ignore_ascii_case("inf") || t == "∞" {
            return Ok(CohortLabel::Never);
        }
        t.parse::<usize>()
            .map(CohortLabel::Period)
            .map_err(|_| Error::InvalidCohortLabel(format!("cannot parse `{t}`")))
    }
}

impl Serialize for CohortLabel {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for CohortLabel {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// How a covariate column is matched on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovariateKind {
    Continuous,
    Discrete,
}

/// Period inclusion indicators `λ_t`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeriodSelector {
    included: Vec<bool>,
}

impl PeriodSelector {
    pub fn new(included: Vec<bool>) -> Result<Self> {
        let count = included.iter().filter(|&&b| b).count();
        if count < 2 {
            return Err(Error::invalid(format!(
                "period selector must include at least two periods, got {count}"
            )));
        }
        Ok(Self { included })
    }

    /// All `periods` periods included.
    pub fn all(periods: usize) -> Self {
        Self::new(vec![true; periods]).expect("at least two periods")
    }

    /// Parse `1,0,1,1` style indicator lists.
    pub fn parse(s: &str) -> Result<Self> {
        let flags = s
            .split(',')
            .map(|tok| match tok.trim() {
                "1" => Ok(true),
                "0" => Ok(false),
                other => Err(Error::invalid(format!("bad period indicator `{other}`"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(flags)
    }

    pub fn len(&self) -> usize {
        self.included.len()
    }

    pub fn is_empty(&self) -> bool {
        self.included.is_empty()
    }

    /// Whether period `t` (1-based) is included.
    pub fn includes(&self, t: usize) -> bool {
        t >= 1 && t <= self.included.len() && self.included[t - 1]
    }

    pub fn indicators(&self) -> &[bool] {
        &self.included
    }

    /// Included periods, 1-based and ascending.
    pub fn periods(&self) -> impl Iterator<Item = usize> + '_ {
        self.included.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i + 1)
    }

    pub fn count(&self) -> usize {
        self.included.iter().filter(|&&b| b).count()
    }

    /// Number of included periods with `t >= s` (zero for never-treated).
    pub fn count_post(&self, cohort: CohortLabel) -> usize {
        self.periods().filter(|&t| cohort.treated_at(t)).count()
    }

    /// Number of included periods with `t < s` (all for never-treated).
    pub fn count_pre(&self, cohort: CohortLabel) -> usize {
        self.count() - self.count_post(cohort)
    }

    /// `Λ_s = Σ_{t≥s} λ_t / Σ_t λ_t`, zero for never-treated.
    pub fn post_share<F: Field>(&self, cohort: CohortLabel) -> F {
        let post = F::from_usize(self.count_post(cohort)).expect("count");
        let all = F::from_usize(self.count()).expect("count");
        post / all
    }
}

/// Cohort shares `p_s`, including the never-treated mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortShares<F> {
    shares: BTreeMap<CohortLabel, F>,
}

impl<F: Field> CohortShares<F> {
    /// Shares must be nonnegative, sum to one within `tolerance`, and put
    /// positive mass on the never-treated.
    pub fn new(shares: BTreeMap<CohortLabel, F>, tolerance: F) -> Result<Self> {
        let zero = F::zero();
        let mut total = zero.clone();
        for (label, p) in &shares {
            if *p < zero {
                return Err(Error::invalid(format!("negative share for cohort {label}")));
            }
            total = total + p.clone();
        }
        let diff = if total > F::one() {
            total - F::one()
        } else {
            F::one() - total
        };
        if diff > tolerance {
            return Err(Error::invalid("cohort shares do not sum to one"));
        }
        match shares.get(&CohortLabel::Never) {
            Some(p) if *p > zero => {}
            _ => return Err(Error::invalid("cohort shares need positive never-treated mass")),
        }
        Ok(Self { shares })
    }

    /// Empirical shares `N_s / n` of a list of labels.
    pub fn from_labels(labels: &[CohortLabel]) -> Self {
        let mut counts: BTreeMap<CohortLabel, usize> = BTreeMap::new();
        for &l in labels {
            *counts.entry(l).or_default() += 1;
        }
        let n = F::from_usize(labels.len()).expect("count");
        let shares = counts
            .into_iter()
            .map(|(l, c)| (l, F::from_usize(c).expect("count") / n.clone()))
            .collect();
        Self { shares }
    }

    pub fn get(&self, cohort: CohortLabel) -> F {
        self.shares.get(&cohort).cloned().unwrap_or_else(F::zero)
    }

    pub fn never(&self) -> F {
        self.get(CohortLabel::Never)
    }

    /// Finite cohorts in ascending order.
    pub fn finite_cohorts(&self) -> Vec<CohortLabel> {
        self.shares.keys().copied().filter(|c| !c.is_never()).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (CohortLabel, &F)> {
        self.shares.iter().map(|(k, v)| (*k, v))
    }
}

/// Balanced unit-by-period panel with time-invariant covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelDataset<F> {
    periods: usize,
    outcomes: Vec<F>,
    cohorts: Vec<CohortLabel>,
    covariates: Vec<F>,
    covariate_kinds: Vec<CovariateKind>,
    unit_ids: Vec<String>,
    period_labels: Vec<String>,
    fingerprint: u64,
}

impl<F: Scalar> PanelDataset<F> {
    /// Build and validate a panel from per-unit outcome rows and covariate
    /// rows.
    pub fn new(
        outcomes: Vec<Vec<F>>,
        cohorts: Vec<CohortLabel>,
        covariates: Vec<Vec<F>>,
        covariate_kinds: Vec<CovariateKind>,
    ) -> Result<Self> {
        let n = outcomes.len();
        let periods = outcomes.first().map_or(0, Vec::len);
        let q = covariate_kinds.len();
        if let Some((i, row)) = outcomes.iter().enumerate().find(|(_, r)| r.len() != periods) {
            return Err(Error::UnbalancedPanel(format!(
                "unit {i} has {} periods, expected {periods}",
                row.len()
            )));
        }
        if cohorts.len() != n || covariates.len() != n {
            return Err(Error::invalid(format!(
                "length mismatch: {n} outcome rows, {} cohorts, {} covariate rows",
                cohorts.len(),
                covariates.len()
            )));
        }
        if let Some(i) = covariates.iter().position(|r| r.len() != q) {
            return Err(Error::invalid(format!(
                "unit {i} has {} covariates, expected {q}",
                covariates[i].len()
            )));
        }
        let panel = Self {
            periods,
            outcomes: outcomes.into_iter().flatten().collect(),
            cohorts,
            covariates: covariates.into_iter().flatten().collect(),
            covariate_kinds,
            unit_ids: (1..=n).map(|i| i.to_string()).collect(),
            period_labels: (1..=periods).map(|t| t.to_string()).collect(),
            fingerprint: 0,
        }
        .with_fingerprint();
        panel.validate()?;
        Ok(panel)
    }

    /// Attach external unit identifiers and period labels (e.g. calendar
    /// years) kept as metadata.
    pub fn with_labels(mut self, unit_ids: Vec<String>, period_labels: Vec<String>) -> Result<Self> {
        if unit_ids.len() != self.n() || period_labels.len() != self.periods {
            return Err(Error::invalid("label lengths do not match panel shape"));
        }
        self.unit_ids = unit_ids;
        self.period_labels = period_labels;
        Ok(self)
    }

    fn with_fingerprint(mut self) -> Self {
        let mut h = DefaultHasher::new();
        self.periods.hash(&mut h);
        self.cohorts.hash(&mut h);
        for v in self.outcomes.iter().chain(&self.covariates) {
            v.integer_decode().hash(&mut h);
        }
        self.covariate_kinds.len().hash(&mut h);
        self.fingerprint = h.finish();
        self
    }

    /// Checks every structural invariant and that at least two distinct
    /// cohorts are present.
    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        if self.outcomes.len() != n * self.periods {
            return Err(Error::UnbalancedPanel("outcome matrix is not n x T".into()));
        }
        if self.periods < 2 {
            return Err(Error::invalid("panel needs at least two periods"));
        }
        for (i, c) in self.cohorts.iter().enumerate() {
            if let CohortLabel::Period(s) = *c {
                if s < 2 || s > self.periods {
                    return Err(Error::InvalidCohortLabel(format!(
                        "unit {} has cohort {s}; finite cohorts must lie in 2..={}",
                        self.unit_ids[i], self.periods
                    )));
                }
            }
        }
        if self.covariate_kinds.is_empty() {
            return Err(Error::invalid("at least one covariate is required"));
        }
        if self.outcomes.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("outcomes must be finite"));
        }
        if self.covariates.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("covariates must be finite"));
        }
        let first = self.cohorts.first().copied();
        if self.cohorts.iter().all(|&c| Some(c) == first) {
            return Err(Error::DegenerateDesign(
                "panel needs at least two distinct cohorts".into(),
            ));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.cohorts.len()
    }

    pub fn periods(&self) -> usize {
        self.periods
    }

    pub fn covariate_dim(&self) -> usize {
        self.covariate_kinds.len()
    }

    pub fn covariate_kinds(&self) -> &[CovariateKind] {
        &self.covariate_kinds
    }

    pub fn cohort(&self, unit: usize) -> CohortLabel {
        self.cohorts[unit]
    }

    pub fn cohorts(&self) -> &[CohortLabel] {
        &self.cohorts
    }

    /// Outcome `Y_it` for period `t` in `1..=T`.
    pub fn outcome(&self, unit: usize, t: usize) -> F {
        self.outcomes[unit * self.periods + t - 1]
    }

    pub fn outcome_row(&self, unit: usize) -> &[F] {
        &self.outcomes[unit * self.periods..(unit + 1) * self.periods]
    }

    pub fn covariate_row(&self, unit: usize) -> &[F] {
        let q = self.covariate_dim();
        &self.covariates[unit * q..(unit + 1) * q]
    }

    pub fn unit_ids(&self) -> &[String] {
        &self.unit_ids
    }

    pub fn period_labels(&self) -> &[String] {
        &self.period_labels
    }

    /// Content hash used to detect match results computed on other panels.
    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    /// Units with the given cohort label, ascending.
    pub fn units_in(&self, cohort: CohortLabel) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.cohorts[i] == cohort).collect()
    }

    pub fn cohort_size(&self, cohort: CohortLabel) -> usize {
        self.cohorts.iter().filter(|&&c| c == cohort).count()
    }

    /// Distinct cohort labels present, ascending.
    pub fn cohort_labels(&self) -> Vec<CohortLabel> {
        let mut v = self.cohorts.clone();
        v.sort();
        v.dedup();
        v
    }

    /// Empirical shares `N_s / n`.
    pub fn sample_shares(&self) -> CohortShares<F> {
        CohortShares::from_labels(&self.cohorts)
    }

    /// `ΔȲ_i^s(λ)`: mean outcome over included periods `t >= s` minus the
    /// mean over included periods `t < s`, for every unit.
    pub fn transform_outcome(&self, cohort: CohortLabel, lambda: &PeriodSelector) -> Result<Vec<F>> {
        let s = cohort
            .period()
            .ok_or_else(|| Error::invalid("outcome transformation needs a finite cohort"))?;
        if lambda.len() != self.periods {
            return Err(Error::invalid(format!(
                "period selector has {} entries, panel has {} periods",
                lambda.len(),
                self.periods
            )));
        }
        let post: Vec<usize> = lambda.periods().filter(|&t| t >= s).collect();
        let pre: Vec<usize> = lambda.periods().filter(|&t| t < s).collect();
        if post.is_empty() || pre.is_empty() {
            return Err(Error::EmptyWindow(format!(
                "cohort {s}: {} post and {} pre periods selected",
                post.len(),
                pre.len()
            )));
        }
        Ok((0..self.n())
            .map(|i| window_difference(self.outcome_row(i), &post, &pre))
            .collect())
    }
}

fn window_difference<F: Scalar>(row: &[F], post: &[usize], pre: &[usize]) -> F {
    let mean = |ts: &[usize]| ts.iter().map(|&t| row[t - 1]).sum::<F>() / F::from_count(ts.len());
    mean(post) - mean(pre)
}
