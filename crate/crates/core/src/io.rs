//! Long-format CSV ingestion, panel export and report rendering.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::decomposition::PlimWeights;
use crate::error::{Error, Result};
use crate::estimators::{Decomposition, EstimateReport};
use crate::panel::{CohortLabel, CovariateKind, PanelDataset};
use crate::scalar::Scalar;

/// Column layout of a long-format panel file (one row per unit and period).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PanelSchema {
    pub unit: String,
    pub period: String,
    pub outcome: String,
    pub cohort: String,
    pub covariates: Vec<String>,
    /// Subset of `covariates` flagged discrete.
    pub discrete: Vec<String>,
}

impl Default for PanelSchema {
    fn default() -> Self {
        Self {
            unit: "unit".into(),
            period: "period".into(),
            outcome: "outcome".into(),
            cohort: "cohort".into(),
            covariates: Vec::new(),
            discrete: Vec::new(),
        }
    }
}

impl PanelSchema {
    fn kinds(&self) -> Result<Vec<CovariateKind>> {
        if let Some(d) = self.discrete.iter().find(|d| !self.covariates.contains(d)) {
            return Err(Error::invalid(format!(
                "discrete column `{d}` is not a listed covariate"
            )));
        }
        Ok(self
            .covariates
            .iter()
            .map(|c| {
                if self.discrete.contains(c) {
                    CovariateKind::Discrete
                } else {
                    CovariateKind::Continuous
                }
            })
            .collect())
    }
}

/// Period labels in increasing order: numerically when every label parses
/// as a number, lexicographically otherwise.
fn order_periods(labels: Vec<String>) -> Vec<String> {
    let mut labels = labels;
    let numeric: Option<Vec<f64>> = labels.iter().map(|l| l.trim().parse::<f64>().ok()).collect();
    match numeric {
        Some(_) => labels.sort_by(|a, b| {
            let (x, y) = (a.trim().parse::<f64>().unwrap(), b.trim().parse::<f64>().unwrap());
            x.total_cmp(&y)
        }),
        None => labels.sort(),
    }
    labels
}

struct UnitRows<F> {
    id: String,
    cohort_raw: String,
    covariates: Vec<F>,
    outcomes: BTreeMap<String, F>,
}

/// Read a long-format panel. Periods are re-indexed to `1..=T` preserving
/// their order; the original labels are kept as panel metadata. The cohort
/// column holds the label of the first treated period, or `inf`/empty for
/// never-treated units.
pub fn read_panel_csv<F: Scalar>(path: impl AsRef<Path>, schema: &PanelSchema) -> Result<PanelDataset<F>> {
    read_panel(std::fs::File::open(path)?, schema)
}

/// As [`read_panel_csv`], from any reader.
pub fn read_panel<F: Scalar, R: Read>(reader: R, schema: &PanelSchema) -> Result<PanelDataset<F>> {
    let kinds = schema.kinds()?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let (c_unit, c_period, c_outcome, c_cohort) = (
        col(&schema.unit)?,
        col(&schema.period)?,
        col(&schema.outcome)?,
        col(&schema.cohort)?,
    );
    let c_cov: Vec<usize> = schema.covariates.iter().map(|c| col(c)).collect::<Result<_>>()?;

    let mut order: Vec<String> = Vec::new();
    let mut units: HashMap<String, UnitRows<F>> = HashMap::new();
    let mut period_set: Vec<String> = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |k: usize| record.get(k).unwrap_or("");
        let number = |k: usize, name: &str| -> Result<F> {
            let raw = field(k);
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .and_then(F::from_f64)
                .ok_or_else(|| Error::ParseError {
                    line,
                    column: name.to_string(),
                    message: format!("`{raw}` is not a finite number"),
                })
        };
        let id = field(c_unit).to_string();
        let period = field(c_period).to_string();
        if period.is_empty() {
            return Err(Error::ParseError {
                line,
                column: schema.period.clone(),
                message: "empty period".into(),
            });
        }
        let y = number(c_outcome, &schema.outcome)?;
        let cov: Vec<F> = c_cov
            .iter()
            .zip(&schema.covariates)
            .map(|(&k, name)| number(k, name))
            .collect::<Result<_>>()?;
        let cohort_raw = match field(c_cohort) {
            "" | "inf" | "Inf" | "∞" => "inf".to_string(),
            raw => raw.to_string(),
        };
        if !period_set.contains(&period) {
            period_set.push(period.clone());
        }
        let entry = units.entry(id.clone()).or_insert_with(|| {
            order.push(id.clone());
            UnitRows {
                id: id.clone(),
                cohort_raw: cohort_raw.clone(),
                covariates: cov.clone(),
                outcomes: BTreeMap::new(),
            }
        });
        if entry.cohort_raw != cohort_raw {
            return Err(Error::ParseError {
                line,
                column: schema.cohort.clone(),
                message: format!("cohort of unit `{id}` changes across rows"),
            });
        }
        if let Some(k) = entry.covariates.iter().zip(&cov).position(|(a, b)| a != b) {
            return Err(Error::TimeVaryingCovariate {
                unit: id,
                column: schema.covariates[k].clone(),
            });
        }
        if entry.outcomes.insert(period.clone(), y).is_some() {
            return Err(Error::UnbalancedPanel(format!(
                "unit `{id}` has two rows for period `{period}`"
            )));
        }
    }

    let periods = order_periods(period_set);
    let index: HashMap<&str, usize> = periods.iter().enumerate().map(|(k, p)| (p.as_str(), k + 1)).collect();
    let mut outcomes = Vec::with_capacity(order.len());
    let mut cohorts = Vec::with_capacity(order.len());
    let mut covariates = Vec::with_capacity(order.len());
    for id in &order {
        let u = units.remove(id).expect("unit recorded");
        if u.outcomes.len() != periods.len() {
            let missing: Vec<&String> = periods.iter().filter(|p| !u.outcomes.contains_key(*p)).collect();
            return Err(Error::UnbalancedPanel(format!(
                "unit `{}` is missing periods {missing:?}",
                u.id
            )));
        }
        let cohort = match u.cohort_raw.as_str() {
            "inf" => CohortLabel::Never,
            raw => match index.get(raw) {
                Some(&t) => CohortLabel::Period(t),
                None => {
                    return Err(Error::InvalidCohortLabel(format!(
                        "unit `{}` has cohort `{raw}`, which is not an observed period",
                        u.id
                    )))
                }
            },
        };
        outcomes.push(periods.iter().map(|p| u.outcomes[p]).collect());
        cohorts.push(cohort);
        covariates.push(u.covariates);
    }
    PanelDataset::new(outcomes, cohorts, covariates, kinds)?.with_labels(order, periods)
}

/// Write a panel in long format using `schema`'s column names. Reading the
/// file back with the same schema reproduces the panel exactly.
pub fn write_panel<F: Scalar, W: Write>(panel: &PanelDataset<F>, schema: &PanelSchema, writer: W) -> Result<()> {
    if schema.covariates.len() != panel.covariate_dim() {
        return Err(Error::invalid(format!(
            "schema names {} covariates, panel has {}",
            schema.covariates.len(),
            panel.covariate_dim()
        )));
    }
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec![
        schema.unit.clone(),
        schema.period.clone(),
        schema.outcome.clone(),
        schema.cohort.clone(),
    ];
    header.extend(schema.covariates.iter().cloned());
    w.write_record(&header)?;
    let labels = panel.period_labels();
    for i in 0..panel.n() {
        let cohort = match panel.cohort(i) {
            CohortLabel::Never => "inf".to_string(),
            CohortLabel::Period(t) => labels[t - 1].clone(),
        };
        let cov: Vec<String> = panel.covariate_row(i).iter().map(|v| v.to_string()).collect();
        for (t, y) in panel.outcome_row(i).iter().enumerate() {
            let mut row = vec![
                panel.unit_ids()[i].clone(),
                labels[t].clone(),
                y.to_string(),
                cohort.clone(),
            ];
            row.extend(cov.iter().cloned());
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_panel_csv<F: Scalar>(panel: &PanelDataset<F>, schema: &PanelSchema, path: impl AsRef<Path>) -> Result<()> {
    write_panel(panel, schema, std::fs::File::create(path)?)
}

/// Machine-readable output of one run: the effective configuration, the
/// results and free-form metadata (such as the period re-indexing).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunDocument<C, R> {
    pub tool: String,
    pub version: String,
    pub config: C,
    pub results: R,
    pub metadata: BTreeMap<String, String>,
}

impl<C, R> RunDocument<C, R> {
    pub fn new(config: C, results: R) -> Self {
        Self {
            tool: "matchdid".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config,
            results,
            metadata: BTreeMap::new(),
        }
    }

    pub fn with_meta(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.metadata.insert(key.into(), value.into());
        self
    }
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)?)
}

pub fn from_json<T: DeserializeOwned>(text: &str) -> Result<T> {
    Ok(serde_json::from_str(text)?)
}

/// Human-readable rendering of an estimate report.
pub fn render_report<F: Scalar>(r: &EstimateReport<F>) -> String {
    let opt = |v: Option<F>| v.map_or("-".to_string(), |v| format!("{v:.6}"));
    let mut out = String::new();
    out.push_str(&format!("estimator            {:?}\n", r.estimator));
    if let Some(c) = r.target.cohort {
        out.push_str(&format!("cohort               {c}\n"));
    }
    if let Some(c) = r.target.comparison {
        out.push_str(&format!("comparison           {c}\n"));
    }
    out.push_str(&format!("periods              {:?}\n", r.target.periods));
    out.push_str(&format!("estimate             {:.6}\n", r.estimate));
    if r.bias_corrected_estimate.is_some() {
        out.push_str(&format!("bias-corrected       {}\n", opt(r.bias_corrected_estimate)));
    }
    out.push_str(&format!("naive se             {}\n", opt(r.naive_se)));
    out.push_str(&format!("corrected se         {}\n", opt(r.corrected_se)));
    out.push_str(&format!("95% ci               [{:.6}, {:.6}]\n", r.ci_low, r.ci_high));
    out.push_str(&format!("p-value              {:.4}\n", r.p_value));
    let d = &r.diagnostics;
    out.push_str(&format!(
        "units                {} treated, {} comparison\n",
        d.treated_units, d.comparison_units
    ));
    if let Some(m) = d.neighbors {
        out.push_str(&format!("neighbors            {m}\n"));
    }
    if let Some(v) = d.max_usage {
        out.push_str(&format!("max usage            {v}\n"));
    }
    if let Some(v) = d.tied_matches {
        out.push_str(&format!("tied matches         {v}\n"));
    }
    if let Some(v) = d.matched_sample_size {
        out.push_str(&format!("matched sample size  {v}\n"));
    }
    for note in &d.notes {
        out.push_str(&format!("note: {note}\n"));
    }
    out
}

/// One row per 2x2 component, flagging forbidden comparisons.
pub fn render_decomposition<F: Scalar>(d: &Decomposition<F>) -> String {
    let mut out = format!(
        "{:<8} {:<10} {:>3} {:>3} {:<19} {:>12} {:>14}  {}\n",
        "treated", "comparison", "t", "t'", "kind", "weight", "value", "flag"
    );
    for c in &d.components {
        let kind = match c.kind {
            crate::estimators::ComparisonKind::VsNeverTreated => "vs-never-treated",
            crate::estimators::ComparisonKind::TreatedVsTreated => "treated-vs-treated",
        };
        out.push_str(&format!(
            "{:<8} {:<10} {:>3} {:>3} {:<19} {:>12.6} {:>14.6}  {}\n",
            c.treated.to_string(),
            c.comparison.to_string(),
            c.t,
            c.t_prime,
            kind,
            c.weight,
            c.value,
            if c.forbidden { "forbidden comparison" } else { "" }
        ));
    }
    out.push_str(&format!("recombined estimate {:.6}\n", d.recombine()));
    out
}

/// Weight families, one line per entry.
pub fn render_plim_weights(w: &PlimWeights<f64>) -> String {
    let mut out = String::new();
    for (s, v) in &w.phi1 {
        out.push_str(&format!("phi1({s})        {v:.6}\n"));
    }
    let pairs = [
        ("phi2", &w.phi2),
        ("eta1", &w.eta1),
        ("eta2", &w.eta2),
        ("eta3", &w.eta3),
    ];
    for (name, map) in pairs {
        for ((s, sp), v) in map {
            out.push_str(&format!("{name}({s},{sp})    {v:.6}\n"));
        }
    }
    out.push_str(&format!("sum of phi       {:.12}\n", w.phi_total()));
    out
}
