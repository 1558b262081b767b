//! Weighted two-way fixed effects in closed form and its exact 2x2
//! decomposition.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::WeightVector;
use crate::error::{Error, Result};
use crate::panel::{CohortLabel, PanelDataset, PeriodSelector};
use crate::scalar::Scalar;

/// Whether a 2x2 comparison uses never-treated or eventually-treated
/// controls.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ComparisonKind {
    VsNeverTreated,
    TreatedVsTreated,
}

/// One 2x2 difference-in-differences `τ̂ˢ_{s'}(t, t')` with its weight in
/// the recombination (weights sum over components to the estimate's
/// denominator normalization, so `Σ weight · value` is the estimate).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoByTwoComponent<F> {
    pub treated: CohortLabel,
    pub comparison: CohortLabel,
    pub t: usize,
    pub t_prime: usize,
    pub value: F,
    pub weight: F,
    pub kind: ComparisonKind,
    /// Treated-vs-treated comparison whose control cohort is already treated
    /// in the base period `t'`.
    pub forbidden: bool,
}

/// Numerator components and denominator of the weighted 2WFE.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decomposition<F> {
    pub components: Vec<TwoByTwoComponent<F>>,
    pub numerator: F,
    pub denominator: F,
}

impl<F: Scalar> Decomposition<F> {
    /// `Σ weight · value`, which reproduces the weighted 2WFE estimate.
    pub fn recombine(&self) -> F {
        let terms: Vec<F> = self.components.iter().map(|c| c.weight * c.value).collect();
        crate::summation::pairwise_sum(&terms)
    }
}

fn degeneracy_tolerance<F: Scalar>() -> F {
    F::epsilon() * F::lit(1e4)
}

fn check_shapes<F: Scalar>(panel: &PanelDataset<F>, w: &WeightVector<F>, lambda: &PeriodSelector) -> Result<()> {
    if w.len() != panel.n() {
        return Err(Error::invalid(format!(
            "weight vector has {} entries, panel has {} units",
            w.len(),
            panel.n()
        )));
    }
    if lambda.len() != panel.periods() {
        return Err(Error::invalid(format!(
            "period selector has {} entries, panel has {} periods",
            lambda.len(),
            panel.periods()
        )));
    }
    Ok(())
}

/// Two-way demeaning under product weights `w_i λ_t`:
/// `v_it − v̄_i − ṽ_t + v̄`, row-major. Entries of excluded periods are left
/// at zero since they carry no weight.
pub(crate) fn demean<F: Scalar>(values: &[F], w: &[F], lambda: &PeriodSelector) -> Vec<F> {
    let n = w.len();
    let periods = lambda.len();
    let included: Vec<usize> = lambda.periods().map(|t| t - 1).collect();
    let sum_lambda = F::from_count(included.len());
    let sum_w: F = w.iter().copied().sum();

    let unit_mean: Vec<F> = (0..n)
        .map(|i| included.iter().map(|&t| values[i * periods + t]).sum::<F>() / sum_lambda)
        .collect();
    let mut period_mean = vec![F::zero(); periods];
    for &t in &included {
        period_mean[t] = (0..n).map(|i| w[i] * values[i * periods + t]).sum::<F>() / sum_w;
    }
    let grand = (0..n).map(|i| w[i] * unit_mean[i]).sum::<F>() / sum_w;

    let mut out = vec![F::zero(); n * periods];
    for i in 0..n {
        for &t in &included {
            out[i * periods + t] = values[i * periods + t] - unit_mean[i] - period_mean[t] + grand;
        }
    }
    out
}

pub(crate) fn treatment_matrix<F: Scalar>(panel: &PanelDataset<F>) -> Vec<F> {
    let periods = panel.periods();
    let mut d = vec![F::zero(); panel.n() * periods];
    for i in 0..panel.n() {
        for t in 1..=periods {
            if panel.cohort(i).treated_at(t) {
                d[i * periods + t - 1] = F::one();
            }
        }
    }
    d
}

/// Pieces of the weighted 2WFE fit reused by the clustered variance.
pub(crate) struct TwfeFit<F> {
    pub estimate: F,
    pub denominator: F,
    pub d_ddot: Vec<F>,
}

pub(crate) fn fit_2wfe<F: Scalar>(
    panel: &PanelDataset<F>,
    w: &WeightVector<F>,
    lambda: &PeriodSelector,
) -> Result<TwfeFit<F>> {
    check_shapes(panel, w, lambda)?;
    let periods = panel.periods();
    let weights = w.as_slice();
    let d = treatment_matrix(panel);
    let d_ddot = demean(&d, weights, lambda);
    let mut num = F::zero();
    let mut den = F::zero();
    for (i, &wi) in weights.iter().enumerate() {
        if wi == F::zero() {
            continue;
        }
        let mut row_num = F::zero();
        let mut row_den = F::zero();
        for t in lambda.periods() {
            let k = i * periods + t - 1;
            row_num = row_num + panel.outcome(i, t) * d_ddot[k];
            row_den = row_den + d[k] * d_ddot[k];
        }
        num = num + wi * row_num;
        den = den + wi * row_den;
    }
    let scale = weights.iter().copied().sum::<F>() * F::from_count(lambda.count());
    if !(den.abs() > degeneracy_tolerance::<F>() * scale) {
        return Err(Error::DegenerateDesign(
            "weighted 2WFE denominator is zero: no included cohort changes treatment status \
             differently from the others within the included periods"
                .into(),
        ));
    }
    Ok(TwfeFit {
        estimate: num / den,
        denominator: den,
        d_ddot,
    })
}

/// Weighted 2WFE coefficient `τ̂(w, λ)` computed from demeaned treatment
/// indicators.
pub fn weighted_2wfe<F: Scalar>(panel: &PanelDataset<F>, w: &WeightVector<F>, lambda: &PeriodSelector) -> Result<F> {
    fit_2wfe(panel, w, lambda).map(|f| f.estimate)
}

/// Weight shares and weighted period means of each cohort with positive
/// weight mass.
struct CohortMeans<F> {
    share: BTreeMap<CohortLabel, F>,
    means: BTreeMap<CohortLabel, Vec<F>>,
}

fn cohort_means<F: Scalar>(panel: &PanelDataset<F>, w: &[F]) -> CohortMeans<F> {
    let periods = panel.periods();
    let total: F = w.iter().copied().sum();
    let mut mass: BTreeMap<CohortLabel, F> = BTreeMap::new();
    let mut sums: BTreeMap<CohortLabel, Vec<F>> = BTreeMap::new();
    for (i, &wi) in w.iter().enumerate() {
        if wi == F::zero() {
            continue;
        }
        let c = panel.cohort(i);
        let m = mass.entry(c).or_insert_with(F::zero);
        *m = *m + wi;
        let acc = sums.entry(c).or_insert_with(|| vec![F::zero(); periods]);
        for (a, y) in acc.iter_mut().zip(panel.outcome_row(i)) {
            *a = *a + wi * *y;
        }
    }
    let means = sums
        .into_iter()
        .map(|(c, v)| {
            let m = mass[&c];
            (c, v.into_iter().map(|x| x / m).collect())
        })
        .collect();
    let share = mass.into_iter().map(|(c, m)| (c, m / total)).collect();
    CohortMeans { share, means }
}

/// Exact representation of the weighted 2WFE as a weighted sum of 2x2
/// comparisons between every treated cohort `s` and every other cohort
/// `s'`, over post periods `t >= s` and pre periods `t' < s`.
///
/// Raw component weights are `p̂ˢ_w p̂ˢ'_w` (the weight share of each
/// cohort) for included period pairs; the reported `weight` is divided by
/// the denominator so that [`Decomposition::recombine`] gives the estimate.
pub fn lemma_a1_decompose<F: Scalar>(
    panel: &PanelDataset<F>,
    w: &WeightVector<F>,
    lambda: &PeriodSelector,
) -> Result<Decomposition<F>> {
    check_shapes(panel, w, lambda)?;
    let cm = cohort_means(panel, w.as_slice());
    let sum_lambda = F::from_count(lambda.count());
    let big_lambda = |c: CohortLabel| -> F { lambda.post_share::<F>(c) };
    let p_never = cm.share.get(&CohortLabel::Never).copied().unwrap_or_else(F::zero);

    let mut den_terms = Vec::new();
    for (&s, &ps) in cm.share.iter().filter(|(c, _)| !c.is_never()) {
        let ls = big_lambda(s);
        let mut inner = p_never * ls * (F::one() - ls);
        for (&sp, &pp) in cm.share.iter().filter(|(c, _)| !c.is_never() && **c != s) {
            let lsp = big_lambda(sp);
            inner = inner
                + if sp < s {
                    pp * ls * (lsp - ls)
                } else {
                    pp * (F::one() - ls) * (ls - lsp)
                };
        }
        den_terms.push(ps * inner);
    }
    let denominator = sum_lambda * sum_lambda * den_terms.into_iter().sum::<F>();
    if !(denominator.abs() > degeneracy_tolerance::<F>() * sum_lambda * sum_lambda) {
        return Err(Error::DegenerateDesign("weighted 2WFE denominator is zero".into()));
    }

    let mut components = Vec::new();
    let mut raw = Vec::new();
    for (&s, &ps) in cm.share.iter().filter(|(c, _)| !c.is_never()) {
        let s_val = s.period().expect("finite cohort");
        let ms = &cm.means[&s];
        for (&sp, &pp) in cm.share.iter().filter(|(c, _)| **c != s) {
            let msp = &cm.means[&sp];
            let kind = if sp.is_never() {
                ComparisonKind::VsNeverTreated
            } else {
                ComparisonKind::TreatedVsTreated
            };
            for t in lambda.periods().filter(|&t| t >= s_val) {
                for tp in lambda.periods().filter(|&tp| tp < s_val) {
                    let value = (ms[t - 1] - ms[tp - 1]) - (msp[t - 1] - msp[tp - 1]);
                    let raw_weight = ps * pp;
                    raw.push(raw_weight * value);
                    components.push(TwoByTwoComponent {
                        treated: s,
                        comparison: sp,
                        t,
                        t_prime: tp,
                        value,
                        weight: raw_weight / denominator,
                        kind,
                        forbidden: kind == ComparisonKind::TreatedVsTreated && sp.treated_at(tp),
                    });
                }
            }
        }
    }
    Ok(Decomposition {
        components,
        numerator: crate::summation::pairwise_sum(&raw),
        denominator,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::CovariateKind;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn panel(rows: Vec<Vec<f64>>, cohorts: Vec<CohortLabel>) -> PanelDataset<f64> {
        let n = rows.len();
        PanelDataset::new(
            rows,
            cohorts,
            (0..n).map(|i| vec![i as f64]).collect(),
            vec![CovariateKind::Continuous],
        )
        .unwrap()
    }

    fn random_staggered(rng: &mut ChaCha8Rng, n: usize) -> PanelDataset<f64> {
        let labels = [CohortLabel::Period(2), CohortLabel::Period(3), CohortLabel::Never];
        let cohorts = (0..n).map(|i| labels[i % 3]).collect();
        let rows = (0..n)
            .map(|_| (0..4).map(|_| rng.gen_range(-5.0..5.0)).collect())
            .collect();
        panel(rows, cohorts)
    }

    #[test]
    fn two_by_two_equals_difference_in_means() {
        let p = panel(
            vec![vec![1.0, 4.0], vec![2.0, 7.0], vec![0.0, 1.0], vec![3.0, 3.0]],
            vec![
                CohortLabel::Period(2),
                CohortLabel::Period(2),
                CohortLabel::Never,
                CohortLabel::Never,
            ],
        );
        let w = WeightVector::custom(vec![1.0; 4]).unwrap();
        let lam = PeriodSelector::all(2);
        let did = (3.0 + 5.0) / 2.0 - (1.0 + 0.0) / 2.0;
        assert!((weighted_2wfe(&p, &w, &lam).unwrap() - did).abs() < 1e-12);
        let dec = lemma_a1_decompose(&p, &w, &lam).unwrap();
        assert_eq!(dec.components.len(), 1);
        assert!((dec.components[0].weight - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fourteen_components_for_two_cohorts_and_never() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = random_staggered(&mut rng, 30);
        let w = WeightVector::custom(vec![1.0; 30]).unwrap();
        let dec = lemma_a1_decompose(&p, &w, &PeriodSelector::all(4)).unwrap();
        assert_eq!(dec.components.len(), 14);
        let forbidden = dec.components.iter().filter(|c| c.forbidden).count();
        // s = 3 against s' = 2 with t' = 2
        assert_eq!(forbidden, 2);
    }

    #[test]
    fn decomposition_recombines_with_arbitrary_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let p = random_staggered(&mut rng, 30);
            let w: Vec<f64> = (0..30).map(|_| rng.gen_range(0.0..3.0)).collect();
            let w = WeightVector::custom(w).unwrap();
            let lam = PeriodSelector::new(vec![rng.gen_bool(0.7), true, true, rng.gen_bool(0.7)]).unwrap();
            let direct = match weighted_2wfe(&p, &w, &lam) {
                Ok(v) => v,
                Err(_) => continue,
            };
            let dec = lemma_a1_decompose(&p, &w, &lam).unwrap();
            assert!((dec.recombine() - direct).abs() <= 1e-10 * direct.abs().max(1.0));
            assert!((dec.numerator / dec.denominator - direct).abs() <= 1e-10 * direct.abs().max(1.0));
        }
    }

    #[test]
    fn single_cohort_is_degenerate() {
        let p = panel(
            vec![vec![1.0, 4.0, 2.0], vec![2.0, 7.0, 1.0], vec![0.0, 1.0, 5.0]],
            vec![CohortLabel::Period(2), CohortLabel::Period(2), CohortLabel::Never],
        );
        // zero weight on the never-treated leaves one cohort with mass
        let w = WeightVector::custom(vec![1.0, 1.0, 0.0]).unwrap();
        let lam = PeriodSelector::all(3);
        assert!(matches!(weighted_2wfe(&p, &w, &lam), Err(Error::DegenerateDesign(_))));
        assert!(matches!(
            lemma_a1_decompose(&p, &w, &lam),
            Err(Error::DegenerateDesign(_))
        ));
    }
}
