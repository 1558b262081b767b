use std::collections::BTreeMap;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::panel::{CohortLabel, CohortShares, PeriodSelector};
use crate::scalar::Field;

/// Probability-limit weights of the pooled matched 2WFE.
///
/// Pair maps are keyed by the ordered `(s, s')` exactly as subscripted:
/// `phi2` for `s < s' < ∞`, `eta1` and `eta3` for `s' ≠ s` finite, `eta2`
/// for `s' < s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlimWeights<F> {
    pub phi1: BTreeMap<CohortLabel, F>,
    #[serde(with = "pair_map")]
    pub phi2: BTreeMap<(CohortLabel, CohortLabel), F>,
    #[serde(with = "pair_map")]
    pub eta1: BTreeMap<(CohortLabel, CohortLabel), F>,
    #[serde(with = "pair_map")]
    pub eta2: BTreeMap<(CohortLabel, CohortLabel), F>,
    #[serde(with = "pair_map")]
    pub eta3: BTreeMap<(CohortLabel, CohortLabel), F>,
    pub denominator: F,
}

impl<F: Field> PlimWeights<F> {
    /// `Σ φ₁ + Σ φ₂`, one for every valid input.
    pub fn phi_total(&self) -> F {
        self.phi1
            .values()
            .chain(self.phi2.values())
            .cloned()
            .fold(F::zero(), |a, b| a + b)
    }
}

/// Serializes `(s, s') → value` maps as a list of records, since JSON maps
/// need string keys.
mod pair_map {
    use super::*;

    #[derive(Serialize, Deserialize)]
    struct Entry<F> {
        s: CohortLabel,
        s_prime: CohortLabel,
        value: F,
    }

    pub fn serialize<F: Serialize, S: Serializer>(
        map: &BTreeMap<(CohortLabel, CohortLabel), F>,
        serializer: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        let entries: Vec<Entry<&F>> = map
            .iter()
            .map(|(&(s, s_prime), value)| Entry { s, s_prime, value })
            .collect();
        entries.serialize(serializer)
    }

    pub fn deserialize<'de, F: Deserialize<'de>, D: Deserializer<'de>>(
        deserializer: D,
    ) -> std::result::Result<BTreeMap<(CohortLabel, CohortLabel), F>, D::Error> {
        let entries: Vec<Entry<F>> = Vec::deserialize(deserializer)?;
        Ok(entries.into_iter().map(|e| ((e.s, e.s_prime), e.value)).collect())
    }
}

/// Evaluate the weight families from cohort shares and the period selector.
///
/// Works in any ordered field, so exact rational evaluation is available.
pub fn plim_weights<F: Field>(shares: &CohortShares<F>, lambda: &PeriodSelector) -> Result<PlimWeights<F>> {
    let finite = shares.finite_cohorts();
    if finite.is_empty() {
        return Err(Error::invalid("plim weights need at least one finite cohort"));
    }
    for s in &finite {
        let s_val = s.period().expect("finite");
        if s_val < 2 || s_val > lambda.len() {
            return Err(Error::InvalidCohortLabel(format!(
                "cohort {s_val} outside 2..={}",
                lambda.len()
            )));
        }
    }
    let one = F::one();
    let p = |c: CohortLabel| shares.get(c);
    let big = |c: CohortLabel| lambda.post_share::<F>(c);
    let treated_mass = one.clone() - shares.never();
    if !(treated_mass > F::zero()) {
        return Err(Error::DegenerateDesign("no treated mass".into()));
    }

    // per-cohort numerators of φ₁ and pair numerators of φ₂
    let mut phi1_num = BTreeMap::new();
    let mut phi2_num = BTreeMap::new();
    for &s in &finite {
        let ls = big(s);
        let mut earlier = F::zero();
        for &sp in finite.iter().filter(|&&sp| sp < s) {
            earlier = earlier + p(sp) * (big(sp) - ls.clone());
        }
        let bracket = (one.clone() - ls.clone()) + earlier / treated_mass.clone();
        phi1_num.insert(s, p(s) * ls.clone() * bracket);
        for &sp in finite.iter().filter(|&&sp| sp > s) {
            let v = p(s) * p(sp) * (one.clone() - ls.clone()) * (ls.clone() - big(sp)) / treated_mass.clone();
            phi2_num.insert((s, sp), v);
        }
    }
    let denominator = phi1_num
        .values()
        .chain(phi2_num.values())
        .cloned()
        .fold(F::zero(), |a, b| a + b);
    if denominator == F::zero() {
        return Err(Error::DegenerateDesign(
            "plim weight denominator is zero: no cohort switches treatment within the included periods".into(),
        ));
    }

    let mut eta1 = BTreeMap::new();
    let mut eta2 = BTreeMap::new();
    let mut eta3 = BTreeMap::new();
    for &s in &finite {
        let ls = big(s);
        for &sp in finite.iter().filter(|&&sp| sp != s) {
            let lsp = big(sp);
            let (hi, lo) = if s > sp { (s, sp) } else { (sp, s) };
            let base = p(s) * p(sp) / treated_mass.clone();
            eta1.insert(
                (s, sp),
                base.clone() * big(hi) * (one.clone() - big(lo)) / denominator.clone(),
            );
            eta3.insert(
                (s, sp),
                base.clone() * ls.clone() * (one.clone() - ls.clone()) / denominator.clone(),
            );
            if sp < s {
                eta2.insert((s, sp), base * ls.clone() * (lsp - ls.clone()) / denominator.clone());
            }
        }
    }
    Ok(PlimWeights {
        phi1: phi1_num
            .into_iter()
            .map(|(k, v)| (k, v / denominator.clone()))
            .collect(),
        phi2: phi2_num
            .into_iter()
            .map(|(k, v)| (k, v / denominator.clone()))
            .collect(),
        eta1,
        eta2,
        eta3,
        denominator,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shares(p: &[(CohortLabel, f64)]) -> CohortShares<f64> {
        CohortShares::new(p.iter().cloned().collect(), 1e-12).unwrap()
    }

    #[test]
    fn single_cohort_collapses() {
        let w = plim_weights(
            &shares(&[(CohortLabel::Period(3), 0.4), (CohortLabel::Never, 0.6)]),
            &PeriodSelector::all(4),
        )
        .unwrap();
        assert_eq!(w.phi1[&CohortLabel::Period(3)], 1.0);
        assert!(w.phi2.is_empty() && w.eta1.is_empty() && w.eta2.is_empty() && w.eta3.is_empty());
    }

    #[test]
    fn degenerate_when_window_has_no_switch() {
        let lam = PeriodSelector::new(vec![false, false, true, true]).unwrap();
        let err = plim_weights(
            &shares(&[(CohortLabel::Period(2), 0.5), (CohortLabel::Never, 0.5)]),
            &lam,
        );
        assert!(matches!(err, Err(Error::DegenerateDesign(_))));
    }

    #[test]
    fn serializes_pair_maps() {
        let w = plim_weights(
            &shares(&[
                (CohortLabel::Period(2), 0.3),
                (CohortLabel::Period(3), 0.3),
                (CohortLabel::Never, 0.4),
            ]),
            &PeriodSelector::all(4),
        )
        .unwrap();
        let json = serde_json::to_string(&w).unwrap();
        let back: PlimWeights<f64> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, w);
        assert_eq!(w.eta2.len(), 1);
        assert!(w.eta2.contains_key(&(CohortLabel::Period(3), CohortLabel::Period(2))));
    }
}
