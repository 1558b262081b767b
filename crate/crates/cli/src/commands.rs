//! Subcommand execution. Each command returns its rendered output.

use std::collections::BTreeMap;

use matchdid::decomposition::plim_weights;
use matchdid::estimators::{
    bias_corrected_pairwise, discrete_did, lemma_a1_decompose, no_replacement_did, pairwise_matched_did,
    pooled_matched_2wfe, weighted_2wfe, BiasCorrection,
};
use matchdid::inference::{corrected_variance, corrected_variance_adjusted, nr_variance};
use matchdid::io::{read_panel_csv, render_decomposition, render_plim_weights, render_report, to_json, RunDocument};
use matchdid::matcher::{match_all_cohorts, match_cells, match_units, MatchSpec, Replacement, Scaling};
use matchdid::replication::{
    data_from_env, read_nsw_csv, render_spec_results, run_table3, NswPanels, NswSchema, Window, ENV_CPS,
    ENV_EXPERIMENTAL,
};
use matchdid::simulation::{run_inference, run_staggered, InferenceDgpConfig, SimulationSummary, StaggeredDgpConfig};
use matchdid::{CohortLabel, CohortShares, MatchResult, Panel, PeriodSelector, WeightVector};
use serde::Serialize;

use crate::config::{Format, RunConfig};
use crate::Failure;

pub const DEFAULT_REPS: usize = 2000;
pub const DEFAULT_SEED: u64 = 42;
const SHARE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy)]
pub enum Estimator {
    Pairwise,
    Pooled,
    Discrete,
    NoReplacement,
}

#[derive(Debug, Clone, Copy)]
pub enum Action {
    Match { without_replacement: bool },
    Estimate(Estimator),
    Decompose,
    Weights,
    SimulateStaggered,
    SimulateInference,
    ReplicateNsw,
}

impl Action {
    fn name(&self) -> &'static str {
        match self {
            Action::Match { .. } => "match",
            Action::Estimate(Estimator::Pairwise) => "estimate pairwise",
            Action::Estimate(Estimator::Pooled) => "estimate pooled",
            Action::Estimate(Estimator::Discrete) => "estimate discrete",
            Action::Estimate(Estimator::NoReplacement) => "estimate no-replacement",
            Action::Decompose => "decompose",
            Action::Weights => "weights",
            Action::SimulateStaggered => "simulate staggered",
            Action::SimulateInference => "simulate inference",
            Action::ReplicateNsw => "replicate-nsw",
        }
    }
}

/// Rendered table text, or a JSON run document.
struct Output<'a> {
    config: &'a RunConfig,
    command: &'static str,
    meta: Vec<(String, String)>,
}

impl Output<'_> {
    fn emit<R: Serialize>(self, results: &R, table: impl FnOnce() -> String) -> Result<String, Failure> {
        match self.config.format.unwrap_or_default() {
            Format::Table => Ok(table()),
            Format::Json => {
                let mut doc = RunDocument::new(self.config, results).with_meta("command", self.command);
                for (k, v) in self.meta {
                    doc = doc.with_meta(k, v);
                }
                let mut text = to_json(&doc)?;
                text.push('\n');
                Ok(text)
            }
        }
    }
}

pub fn execute(action: &Action, config: &RunConfig) -> Result<String, Failure> {
    let mut out = Output {
        config,
        command: action.name(),
        meta: Vec::new(),
    };
    match action {
        Action::Match { without_replacement } => {
            let panel = load_panel(config, &mut out)?;
            let spec = match_spec(&panel, config, *without_replacement)?;
            let mr = match_units(&panel, &spec)?;
            out.emit(&mr, || render_match(&panel, &mr))
        }
        Action::Estimate(kind) => {
            let panel = load_panel(config, &mut out)?;
            let lambda = lambda(config, panel.periods())?;
            let report = match kind {
                Estimator::Pairwise => {
                    let mr = match_units(&panel, &match_spec(&panel, config, false)?)?;
                    let j = config.sigma_neighbors()?;
                    if config.bias_correct.unwrap_or(false) {
                        let bc = BiasCorrection::estimate(&panel, &mr, &lambda)?;
                        let v = corrected_variance_adjusted(&panel, &mr, &lambda, j, Some(&bc.per_target))?;
                        bias_corrected_pairwise(&panel, &mr, &lambda)?.with_corrected_se(v.corrected.sqrt())
                    } else {
                        let v = corrected_variance(&panel, &mr, &lambda, j)?;
                        pairwise_matched_did(&panel, &mr, &lambda)?.with_corrected_se(v.corrected.sqrt())
                    }
                }
                Estimator::NoReplacement => {
                    let mr = match_units(&panel, &match_spec(&panel, config, true)?)?;
                    let v = nr_variance(&panel, &mr, &lambda, config.sigma_neighbors()?)?;
                    no_replacement_did(&panel, &mr, &lambda)?.with_corrected_se(v.sqrt())
                }
                Estimator::Discrete => {
                    let s = target_cohort(&panel, config)?;
                    let c = comparison_cohort(&panel, config)?;
                    discrete_did(&panel, &match_cells(&panel, s, c)?, &lambda)?
                }
                Estimator::Pooled => {
                    let matches = match_all_cohorts(&panel, config.neighbors()?, scaling(config))?;
                    pooled_matched_2wfe(&panel, &matches, &lambda)?.0
                }
            };
            out.emit(&report, || render_report(&report))
        }
        Action::Decompose => {
            let panel = load_panel(config, &mut out)?;
            let lambda = lambda(config, panel.periods())?;
            let dec = if config.unweighted.unwrap_or(false) {
                let w = WeightVector::custom(vec![1.0; panel.n()])?;
                let est = weighted_2wfe(&panel, &w, &lambda)?;
                out.meta.push(("estimate".into(), format!("{est}")));
                lemma_a1_decompose(&panel, &w, &lambda)?
            } else {
                let matches = match_all_cohorts(&panel, config.neighbors()?, scaling(config))?;
                let (report, dec) = pooled_matched_2wfe(&panel, &matches, &lambda)?;
                out.meta.push(("estimate".into(), format!("{}", report.estimate)));
                dec
            };
            out.emit(&dec, || render_decomposition(&dec))
        }
        Action::Weights => {
            let text = config
                .shares
                .as_deref()
                .ok_or_else(|| Failure::Usage("weights needs --shares".into()))?;
            let shares = parse_shares(text)?;
            let periods = match (config.periods, config.lambda.as_deref()) {
                (Some(t), _) => t,
                (None, Some(l)) => l.split(',').count(),
                (None, None) => return Err(Failure::Usage("weights needs --T or --lambda".into())),
            };
            let lambda = lambda(config, periods)?;
            let w = plim_weights(&CohortShares::new(shares, SHARE_TOLERANCE)?, &lambda)?;
            out.emit(&w, || render_plim_weights(&w))
        }
        Action::SimulateStaggered => {
            let mut dgp = StaggeredDgpConfig::default();
            if let Some(n) = config.n {
                dgp.n = n;
            }
            let s = run_staggered(&dgp, reps(config), config.seed.unwrap_or(DEFAULT_SEED))?;
            out.emit(&s, || SimulationSummary::render_table(&[&s]))
        }
        Action::SimulateInference => {
            let mut dgp = match config.design.unwrap_or(1) {
                1 => InferenceDgpConfig::constant_effect(),
                2 => InferenceDgpConfig::heterogeneous(),
                d => return Err(Failure::Usage(format!("design must be 1 or 2, got {d}"))),
            };
            if let Some(n) = config.n {
                dgp.n = n;
            }
            let s = run_inference(&dgp, reps(config), config.seed.unwrap_or(DEFAULT_SEED))?;
            out.emit(&s, || SimulationSummary::render_table(&[&s]))
        }
        Action::ReplicateNsw => {
            let (exp_path, cps_path) = match (&config.experimental, &config.cps) {
                (Some(e), Some(c)) => (e.clone(), c.clone()),
                _ => {
                    let env = data_from_env();
                    let e = config
                        .experimental
                        .clone()
                        .or_else(|| env.as_ref().map(|p| p.0.clone()));
                    let c = config.cps.clone().or_else(|| env.map(|p| p.1));
                    match (e, c) {
                        (Some(e), Some(c)) => (e, c),
                        _ => {
                            return Err(Failure::Usage(format!(
                                "replicate-nsw needs --experimental and --cps (or {ENV_EXPERIMENTAL} and {ENV_CPS})"
                            )))
                        }
                    }
                }
            };
            let schema = NswSchema::default();
            let exp = read_nsw_csv(exp_path, &schema)?;
            let cps = read_nsw_csv(cps_path, &schema)?;
            let window: Window = config.window.map(Into::into).unwrap_or(Window::Outcome);
            let panels = NswPanels::build(&exp, &cps, window)?;
            let results = run_table3(&panels, config.neighbors()?)?;
            let [pre, post] = window.years();
            out.meta.push(("window".into(), format!("{pre} to {post}")));
            out.emit(&results, || render_spec_results(&results))
        }
    }
}

fn reps(config: &RunConfig) -> usize {
    config.reps.unwrap_or(DEFAULT_REPS)
}

fn scaling(config: &RunConfig) -> Scaling {
    config.scaling.map(Into::into).unwrap_or_default()
}

fn load_panel(config: &RunConfig, out: &mut Output<'_>) -> Result<Panel, Failure> {
    let path = config
        .input
        .as_ref()
        .ok_or_else(|| Failure::Usage("an --input panel file is required".into()))?;
    let schema = config.schema();
    if schema.covariates.is_empty() {
        return Err(Failure::Usage("at least one --covariates column is required".into()));
    }
    let panel: Panel = read_panel_csv(path, &schema)?;
    for (t, label) in panel.period_labels().iter().enumerate() {
        out.meta.push((format!("period {}", t + 1), label.clone()));
    }
    Ok(panel)
}

fn lambda(config: &RunConfig, periods: usize) -> Result<PeriodSelector, Failure> {
    match config.lambda.as_deref() {
        None => {
            if periods < 2 {
                return Err(Failure::Usage("need at least two periods".into()));
            }
            Ok(PeriodSelector::all(periods))
        }
        Some(text) => {
            let sel = PeriodSelector::parse(text).map_err(|e| Failure::Usage(format!("--lambda: {e}")))?;
            if sel.len() != periods {
                return Err(Failure::Usage(format!(
                    "--lambda has {} indicators but the panel has {periods} periods",
                    sel.len()
                )));
            }
            Ok(sel)
        }
    }
}

/// Resolve a cohort given by its period label in the input file (or by its
/// 1-based period index when no label matches).
fn resolve_cohort(panel: &Panel, text: &str) -> Result<CohortLabel, Failure> {
    let t = text.trim();
    if let Some(k) = panel.period_labels().iter().position(|l| l == t) {
        return Ok(CohortLabel::Period(k + 1));
    }
    match t.parse::<CohortLabel>() {
        Ok(CohortLabel::Period(s)) if s == 0 || s > panel.periods() => {
            Err(Failure::Usage(format!("cohort `{t}` is not a period of the panel")))
        }
        Ok(c) => Ok(c),
        Err(e) => Err(Failure::Usage(e.to_string())),
    }
}

fn target_cohort(panel: &Panel, config: &RunConfig) -> Result<CohortLabel, Failure> {
    let text = config
        .cohort
        .as_deref()
        .ok_or_else(|| Failure::Usage("--cohort is required".into()))?;
    resolve_cohort(panel, text)
}

fn comparison_cohort(panel: &Panel, config: &RunConfig) -> Result<CohortLabel, Failure> {
    config
        .comparison
        .as_deref()
        .map_or(Ok(CohortLabel::Never), |c| resolve_cohort(panel, c))
}

fn match_spec(panel: &Panel, config: &RunConfig, without_replacement: bool) -> Result<MatchSpec, Failure> {
    let mut spec = MatchSpec::new(target_cohort(panel, config)?, config.neighbors()?)
        .comparison(comparison_cohort(panel, config)?)
        .scaling(scaling(config));
    if let Some(s) = config.search {
        spec = spec.search(s.into());
    }
    if without_replacement {
        spec = spec.replacement(Replacement::Without);
    }
    Ok(spec)
}

/// Shares as `s=p` pairs, or a plain list for cohorts 2, 3, ... with the
/// never-treated share last.
fn parse_shares(text: &str) -> Result<BTreeMap<CohortLabel, f64>, Failure> {
    let bad = |tok: &str| Failure::Usage(format!("bad share `{tok}`"));
    let tokens: Vec<&str> = text.split(',').map(str::trim).collect();
    let mut shares = BTreeMap::new();
    if tokens.iter().any(|t| t.contains('=')) {
        for tok in tokens {
            let (label, value) = tok.split_once('=').ok_or_else(|| bad(tok))?;
            let label: CohortLabel = label.parse().map_err(|_| bad(tok))?;
            let value: f64 = value.trim().parse().map_err(|_| bad(tok))?;
            if shares.insert(label, value).is_some() {
                return Err(Failure::Usage(format!("cohort {label} listed twice")));
            }
        }
    } else {
        let (never, finite) = tokens
            .split_last()
            .ok_or_else(|| Failure::Usage("empty --shares".into()))?;
        for (k, tok) in finite.iter().enumerate() {
            shares.insert(CohortLabel::Period(k + 2), tok.parse().map_err(|_| bad(tok))?);
        }
        shares.insert(CohortLabel::Never, never.parse().map_err(|_| bad(never))?);
    }
    Ok(shares)
}

fn render_match(panel: &Panel, mr: &MatchResult) -> String {
    let ids = panel.unit_ids();
    let label = |c: CohortLabel| match c {
        CohortLabel::Period(s) => panel.period_labels()[s - 1].clone(),
        CohortLabel::Never => "inf".into(),
    };
    let mut out = String::new();
    out.push_str(&format!("target cohort        {}\n", label(mr.target_cohort())));
    out.push_str(&format!("comparison cohort    {}\n", label(mr.comparison_cohort())));
    out.push_str(&format!("neighbors            {}\n", mr.m()));
    out.push_str(&format!("targets              {}\n", mr.targets().len()));
    out.push_str(&format!(
        "comparisons used     {}\n",
        mr.usage_counts().iter().filter(|&&k| k > 0).count()
    ));
    out.push_str(&format!("max usage            {}\n", mr.max_usage()));
    out.push_str(&format!("mean distance        {:.6}\n", mr.mean_distance()));
    out.push_str(&format!("tied matches         {}\n", mr.tie_count(panel)));
    out.push_str("\nunit -> matches\n");
    for (i, nb) in mr.pairs() {
        let names: Vec<&str> = nb.iter().map(|&j| ids[j].as_str()).collect();
        out.push_str(&format!("{} -> {}\n", ids[i], names.join(" ")));
    }
    out
}
