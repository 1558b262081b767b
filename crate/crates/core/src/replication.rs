//! NSW experimental and CPS comparison samples: ingestion, two-period panel
//! construction and the six comparison specifications.
//!
//! Data files are not shipped. Point `MATCHDID_NSW_EXPERIMENTAL` and
//! `MATCHDID_NSW_CPS` at the two CSV files to run the pipeline from the
//! environment.

use std::collections::BTreeSet;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{
    bias_corrected_pairwise, normal_critical_value, pairwise_matched_did, BiasCorrection, WeightVector,
};
use crate::inference::{
    cluster_robust_2wfe_variance, corrected_variance, corrected_variance_adjusted, naive_cr_variance,
    DEFAULT_SIGMA_NEIGHBORS,
};
use crate::matcher::{match_units, MatchSpec};
use crate::panel::{CohortLabel, CovariateKind, PanelDataset, PeriodSelector};

pub const ENV_EXPERIMENTAL: &str = "MATCHDID_NSW_EXPERIMENTAL";
pub const ENV_CPS: &str = "MATCHDID_NSW_CPS";

/// One individual from the NSW or CPS files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NswRecord {
    pub treated: bool,
    pub earnings74: f64,
    pub earnings75: f64,
    pub earnings78: f64,
    pub age: u32,
    pub education: u32,
    pub married: bool,
    pub black: bool,
    pub hispanic: bool,
}

/// Column names of an NSW/CPS file. A missing treatment column marks every
/// row untreated, which suits comparison-only files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NswSchema {
    pub treat: String,
    pub re74: String,
    pub re75: String,
    pub re78: String,
    pub age: String,
    pub education: String,
    pub married: String,
    pub black: String,
    pub hispanic: String,
}

impl Default for NswSchema {
    fn default() -> Self {
        Self {
            treat: "treat".into(),
            re74: "re74".into(),
            re75: "re75".into(),
            re78: "re78".into(),
            age: "age".into(),
            education: "education".into(),
            married: "married".into(),
            black: "black".into(),
            hispanic: "hispanic".into(),
        }
    }
}

/// Read and validate NSW/CPS records.
pub fn read_nsw<R: Read>(reader: R, schema: &NswSchema) -> Result<Vec<NswRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let col = |name: &str| find(name).ok_or_else(|| Error::MissingColumn(name.to_string()));
    let c_treat = find(&schema.treat);
    let cols = [
        col(&schema.re74)?,
        col(&schema.re75)?,
        col(&schema.re78)?,
        col(&schema.age)?,
        col(&schema.education)?,
        col(&schema.married)?,
        col(&schema.black)?,
        col(&schema.hispanic)?,
    ];
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let fail = |column: &str, message: String| Error::ParseError {
            line,
            column: column.to_string(),
            message,
        };
        let num = |k: usize, name: &str| -> Result<f64> {
            let raw = record.get(k).unwrap_or("");
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| fail(name, format!("`{raw}` is not a finite number")))
        };
        let flag = |k: usize, name: &str| -> Result<bool> {
            match num(k, name)? {
                0.0 => Ok(false),
                1.0 => Ok(true),
                v => Err(fail(name, format!("indicator must be 0 or 1, got {v}"))),
            }
        };
        let integer = |k: usize, name: &str, lo: u32, hi: u32| -> Result<u32> {
            let v = num(k, name)?;
            if v.fract() != 0.0 || v < lo as f64 || v > hi as f64 {
                return Err(fail(name, format!("expected an integer in [{lo}, {hi}], got {v}")));
            }
            Ok(v as u32)
        };
        let earnings = |k: usize, name: &str| -> Result<f64> {
            let v = num(k, name)?;
            if v < 0.0 {
                return Err(fail(name, format!("earnings must be nonnegative, got {v}")));
            }
            Ok(v)
        };
        out.push(NswRecord {
            treated: match c_treat {
                Some(k) => flag(k, &schema.treat)?,
                None => false,
            },
            earnings74: earnings(cols[0], &schema.re74)?,
            earnings75: earnings(cols[1], &schema.re75)?,
            earnings78: earnings(cols[2], &schema.re78)?,
            age: integer(cols[3], &schema.age, 16, 70)?,
            education: integer(cols[4], &schema.education, 0, 20)?,
            married: flag(cols[5], &schema.married)?,
            black: flag(cols[6], &schema.black)?,
            hispanic: flag(cols[7], &schema.hispanic)?,
        });
    }
    Ok(out)
}

pub fn read_nsw_csv(path: impl AsRef<Path>, schema: &NswSchema) -> Result<Vec<NswRecord>> {
    read_nsw(std::fs::File::open(path)?, schema)
}

/// Which pair of years forms the two-period panel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Window {
    /// 1975 (pre) and 1978 (post).
    Outcome,
    /// 1974 (pre) and 1975 (post).
    Placebo,
}

impl Window {
    pub fn years(self) -> [&'static str; 2] {
        match self {
            Window::Outcome => ["1975", "1978"],
            Window::Placebo => ["1974", "1975"],
        }
    }

    fn outcomes(self, r: &NswRecord) -> Vec<f64> {
        match self {
            Window::Outcome => vec![r.earnings75, r.earnings78],
            Window::Placebo => vec![r.earnings74, r.earnings75],
        }
    }
}

/// Indicator covariates: one column per distinct age, one per distinct
/// education level, then married, black and hispanic.
fn indicator_rows(records: &[&NswRecord]) -> Vec<Vec<f64>> {
    let ages: BTreeSet<u32> = records.iter().map(|r| r.age).collect();
    let educ: BTreeSet<u32> = records.iter().map(|r| r.education).collect();
    let ind = |b: bool| if b { 1.0 } else { 0.0 };
    records
        .iter()
        .map(|r| {
            let mut row: Vec<f64> = ages.iter().map(|&a| ind(a == r.age)).collect();
            row.extend(educ.iter().map(|&e| ind(e == r.education)));
            row.extend([ind(r.married), ind(r.black), ind(r.hispanic)]);
            row
        })
        .collect()
}

fn panel_from(records: &[&NswRecord], cohorts: Vec<CohortLabel>, window: Window) -> Result<PanelDataset<f64>> {
    let outcomes = records.iter().map(|r| window.outcomes(r)).collect();
    let covariates = indicator_rows(records);
    let q = covariates.first().map_or(0, Vec::len);
    let ids = (1..=records.len()).map(|i| i.to_string()).collect();
    let years = window.years().iter().map(|y| y.to_string()).collect();
    PanelDataset::new(outcomes, cohorts, covariates, vec![CovariateKind::Discrete; q])?.with_labels(ids, years)
}

/// Treated NSW units (cohort 2) followed by every comparison record
/// (never treated), in file order.
pub fn build_panel(experimental: &[NswRecord], cps: &[NswRecord], window: Window) -> Result<PanelDataset<f64>> {
    let treated = experimental.iter().filter(|r| r.treated);
    let records: Vec<&NswRecord> = treated.chain(cps.iter()).collect();
    let cohorts = records
        .iter()
        .map(|r| {
            if r.treated {
                CohortLabel::Period(2)
            } else {
                CohortLabel::Never
            }
        })
        .collect();
    panel_from(&records, cohorts, window)
}

/// The experimental sample alone: NSW treated (cohort 2) and NSW controls.
pub fn build_experimental_panel(experimental: &[NswRecord], window: Window) -> Result<PanelDataset<f64>> {
    let records: Vec<&NswRecord> = experimental.iter().collect();
    let cohorts = records
        .iter()
        .map(|r| {
            if r.treated {
                CohortLabel::Period(2)
            } else {
                CohortLabel::Never
            }
        })
        .collect();
    panel_from(&records, cohorts, window)
}

/// The six specifications, in table order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpecName {
    Experimental,
    #[serde(rename = "2WFE")]
    TwoWayFixedEffects,
    NaiveMatched2WFE,
    Matched2WFE,
    #[serde(rename = "Matched2WFE-BC")]
    Matched2WFEBiasCorrected,
    #[serde(rename = "2WFEMatchedSample")]
    TwoWayFixedEffectsMatchedSample,
}

impl SpecName {
    pub const ALL: [SpecName; 6] = [
        SpecName::Experimental,
        SpecName::TwoWayFixedEffects,
        SpecName::NaiveMatched2WFE,
        SpecName::Matched2WFE,
        SpecName::Matched2WFEBiasCorrected,
        SpecName::TwoWayFixedEffectsMatchedSample,
    ];

    pub fn label(self) -> &'static str {
        match self {
            SpecName::Experimental => "Experimental",
            SpecName::TwoWayFixedEffects => "2WFE",
            SpecName::NaiveMatched2WFE => "NaiveMatched2WFE",
            SpecName::Matched2WFE => "Matched2WFE",
            SpecName::Matched2WFEBiasCorrected => "Matched2WFE-BC",
            SpecName::TwoWayFixedEffectsMatchedSample => "2WFEMatchedSample",
        }
    }
}

/// One specification's coefficient and unit-clustered inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecResult {
    pub spec: SpecName,
    pub coefficient: f64,
    pub se: f64,
    pub p_value: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub sample_size: usize,
}

impl SpecResult {
    fn new(spec: SpecName, coefficient: f64, se: f64, sample_size: usize) -> Self {
        use statrs::distribution::{ContinuousCDF, Normal};
        let z = normal_critical_value();
        let p_value = if se > 0.0 {
            let sf = Normal::new(0.0, 1.0)
                .expect("standard normal")
                .sf((coefficient / se).abs());
            (2.0 * sf).min(1.0)
        } else {
            f64::NAN
        };
        Self {
            spec,
            coefficient,
            se,
            p_value,
            ci_low: coefficient - z * se,
            ci_high: coefficient + z * se,
            sample_size,
        }
    }
}

/// Panels for one window.
#[derive(Debug, Clone)]
pub struct NswPanels {
    /// NSW treated and NSW controls.
    pub experimental: PanelDataset<f64>,
    /// NSW treated and CPS comparisons.
    pub combined: PanelDataset<f64>,
}

impl NswPanels {
    pub fn build(experimental: &[NswRecord], cps: &[NswRecord], window: Window) -> Result<Self> {
        Ok(Self {
            experimental: build_experimental_panel(experimental, window)?,
            combined: build_panel(experimental, cps, window)?,
        })
    }
}

const TREATED: CohortLabel = CohortLabel::Period(2);

/// Difference in post-period means with the heteroskedasticity-robust
/// (unit-clustered) standard error of the dummy regression.
fn difference_in_means(panel: &PanelDataset<f64>) -> Result<SpecResult> {
    let group = |c: CohortLabel| -> Vec<f64> { panel.units_in(c).iter().map(|&i| panel.outcome(i, 2)).collect() };
    let (a, b) = (group(TREATED), group(CohortLabel::Never));
    if a.is_empty() || b.is_empty() {
        return Err(Error::DegenerateDesign(
            "experimental sample needs treated and control units".into(),
        ));
    }
    let moments = |v: &[f64]| {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        let ss = v.iter().map(|x| (x - m).powi(2)).sum::<f64>();
        (m, ss / (n * n))
    };
    let ((ma, va), (mb, vb)) = (moments(&a), moments(&b));
    Ok(SpecResult::new(
        SpecName::Experimental,
        ma - mb,
        (va + vb).sqrt(),
        a.len() + b.len(),
    ))
}

fn unweighted_2wfe(panel: &PanelDataset<f64>, spec: SpecName) -> Result<SpecResult> {
    let lambda = PeriodSelector::all(panel.periods());
    let w = WeightVector::custom(vec![1.0; panel.n()])?;
    let (est, var) = cluster_robust_2wfe_variance(panel, &w, &lambda)?;
    Ok(SpecResult::new(spec, est, var.sqrt(), panel.n()))
}

fn subpanel(panel: &PanelDataset<f64>, keep: &[usize]) -> Result<PanelDataset<f64>> {
    let sub = PanelDataset::new(
        keep.iter().map(|&i| panel.outcome_row(i).to_vec()).collect(),
        keep.iter().map(|&i| panel.cohort(i)).collect(),
        keep.iter().map(|&i| panel.covariate_row(i).to_vec()).collect(),
        panel.covariate_kinds().to_vec(),
    )?;
    sub.with_labels(
        keep.iter().map(|&i| panel.unit_ids()[i].clone()).collect(),
        panel.period_labels().to_vec(),
    )
}

/// Run the six specifications with `M` nearest neighbors (lowest index
/// wins ties). Returns the specifications in table order.
pub fn run_table3(panels: &NswPanels, neighbors: usize) -> Result<Vec<SpecResult>> {
    let panel = &panels.combined;
    if panel.periods() != 2 {
        return Err(Error::invalid("NSW panels have exactly two periods"));
    }
    let lambda = PeriodSelector::all(2);
    let n_treated = panel.cohort_size(TREATED);

    let experimental = difference_in_means(&panels.experimental)?;
    let twfe = unweighted_2wfe(panel, SpecName::TwoWayFixedEffects)?;

    let matched = match_units(panel, &MatchSpec::new(TREATED, neighbors))?;
    let matched_n = n_treated + matched.usage_counts().iter().filter(|&&k| k > 0).count();
    let report = pairwise_matched_did(panel, &matched, &lambda)?;
    let naive = naive_cr_variance(panel, &matched, &lambda)?;
    let corrected = corrected_variance(panel, &matched, &lambda, DEFAULT_SIGMA_NEIGHBORS)?;
    let bc_report = bias_corrected_pairwise(panel, &matched, &lambda)?;
    let correction = BiasCorrection::estimate(panel, &matched, &lambda)?;
    let bc_var = corrected_variance_adjusted(
        panel,
        &matched,
        &lambda,
        DEFAULT_SIGMA_NEIGHBORS,
        Some(&correction.per_target),
    )?;

    let keep: Vec<usize> = (0..panel.n())
        .filter(|&i| panel.cohort(i) == TREATED || matched.usage(i) > 0)
        .collect();
    let matched_sample = unweighted_2wfe(&subpanel(panel, &keep)?, SpecName::TwoWayFixedEffectsMatchedSample)?;

    Ok(vec![
        experimental,
        twfe,
        SpecResult::new(SpecName::NaiveMatched2WFE, report.estimate, naive.sqrt(), matched_n),
        SpecResult::new(
            SpecName::Matched2WFE,
            report.estimate,
            corrected.corrected.sqrt(),
            matched_n,
        ),
        SpecResult::new(
            SpecName::Matched2WFEBiasCorrected,
            bc_report.point(),
            bc_var.corrected.sqrt(),
            matched_n,
        ),
        matched_sample,
    ])
}

/// Text table of specification results.
pub fn render_spec_results(results: &[SpecResult]) -> String {
    let mut out = format!(
        "{:<20} {:>12} {:>10} {:>8} {:>24} {:>7}\n",
        "spec", "coefficient", "se", "p-value", "95% ci", "n"
    );
    for r in results {
        out.push_str(&format!(
            "{:<20} {:>12.2} {:>10.2} {:>8.3} {:>24} {:>7}\n",
            r.spec.label(),
            r.coefficient,
            r.se,
            r.p_value,
            format!("[{:.2}, {:.2}]", r.ci_low, r.ci_high),
            r.sample_size
        ));
    }
    out
}

/// Data file locations from [`ENV_EXPERIMENTAL`] and [`ENV_CPS`], when
/// both are set and exist.
pub fn data_from_env() -> Option<(PathBuf, PathBuf)> {
    let get = |k: &str| std::env::var_os(k).map(PathBuf::from).filter(|p| p.is_file());
    Some((get(ENV_EXPERIMENTAL)?, get(ENV_CPS)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "treat,re74,re75,re78,age,education,married,black,hispanic\n";

    fn records(rows: &str) -> Vec<NswRecord> {
        read_nsw(format!("{HEADER}{rows}").as_bytes(), &NswSchema::default()).unwrap()
    }

    #[test]
    fn negative_earnings_rejected() {
        let e = read_nsw(
            format!("{HEADER}1,0,-5,10,30,12,0,1,0\n").as_bytes(),
            &NswSchema::default(),
        );
        assert!(matches!(e, Err(Error::ParseError { line: 2, ref column, .. }) if column == "re75"));
    }

    #[test]
    fn missing_column_rejected() {
        let e = read_nsw("treat,re74\n1,0\n".as_bytes(), &NswSchema::default());
        assert!(matches!(e, Err(Error::MissingColumn(_))));
    }

    #[test]
    fn outcome_window_is_two_periods() {
        let exp = records("1,0,100,900,25,10,0,1,0\n0,0,200,300,30,12,1,0,0\n");
        let p = build_experimental_panel(&exp, Window::Outcome).unwrap();
        assert_eq!((p.n(), p.periods()), (2, 2));
        assert_eq!(p.period_labels(), ["1975", "1978"]);
        assert_eq!(p.outcome_row(0), [100.0, 900.0]);
        // two ages, two education levels, three flags
        assert_eq!(p.covariate_dim(), 7);
    }

    #[test]
    fn experimental_spec_is_difference_in_post_means() {
        let exp =
            records("1,0,0,1000,25,10,0,1,0\n1,0,0,3000,30,12,0,1,0\n0,0,0,500,25,10,0,1,0\n0,0,0,1500,30,12,0,1,0\n");
        let panel = build_experimental_panel(&exp, Window::Outcome).unwrap();
        let r = difference_in_means(&panel).unwrap();
        assert_eq!(r.coefficient, 1000.0);
        // HC0: var/n per arm with 1/n variances: 1e6/2 + 2.5e5/2
        assert!((r.se - (1e6f64 / 2.0 + 2.5e5 / 2.0).sqrt()).abs() < 1e-9);
        let placebo = build_experimental_panel(&exp, Window::Placebo).unwrap();
        assert_eq!(difference_in_means(&placebo).unwrap().coefficient, 0.0);
    }

    #[test]
    fn all_specifications_run_on_a_small_sample() {
        let mut exp = String::new();
        let mut cps = String::new();
        for i in 0..12 {
            let age = 20 + (i % 3);
            exp.push_str(&format!(
                "1,0,{},{},{age},{},0,1,0\n",
                100 * i,
                1000 + 150 * i,
                10 + i % 2
            ));
            exp.push_str(&format!(
                "0,0,{},{},{age},{},0,1,0\n",
                110 * i,
                800 + 120 * i,
                10 + i % 2
            ));
        }
        for i in 0..30 {
            cps.push_str(&format!(
                "0,0,{},{},{},{},1,0,0\n",
                300 * i,
                500 + 310 * i,
                20 + (i % 3),
                10 + i % 2
            ));
        }
        let e = records(&exp);
        let c = records(&cps);
        let panels = NswPanels::build(&e, &c, Window::Outcome).unwrap();
        let r = run_table3(&panels, 1).unwrap();
        assert_eq!(r.iter().map(|s| s.spec).collect::<Vec<_>>(), SpecName::ALL);
        assert_eq!(r[2].coefficient, r[3].coefficient);
        let matched = match_units(&panels.combined, &MatchSpec::new(TREATED, 1)).unwrap();
        let used = matched.usage_counts().iter().filter(|&&k| k > 0).count();
        assert_eq!(r[5].sample_size, 12 + used);
        assert!(render_spec_results(&r).contains("Matched2WFE-BC"));
    }
}
