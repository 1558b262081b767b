//! Seeded Monte Carlo harness.
//!
//! Replication `r` draws from a ChaCha8 generator seeded with the run seed
//! and positioned on stream `r | attempt << 40`, so every replication has
//! its own substream and the output does not depend on how rayon schedules
//! the work. A draw that yields a degenerate design is discarded and
//! retried on the next attempt's stream.

mod dgp;

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use dgp::{design2_estimand, InferenceDesign, InferenceDgpConfig, StaggeredDgpConfig, PERIODS};

use crate::error::{Error, Result};
use crate::estimators::{normal_critical_value, pairwise_matched_did, pooled_matched_2wfe};
use crate::inference::{corrected_variance, naive_cr_variance, DEFAULT_SIGMA_NEIGHBORS};
use crate::matcher::{match_all_cohorts, match_units, MatchSpec, Scaling};
use crate::panel::{PanelDataset, PeriodSelector};
use crate::summation::pairwise_sum;

/// Smallest accepted number of replications.
pub const MIN_REPLICATIONS: usize = 100;

/// Draws attempted per replication before giving up.
pub const MAX_ATTEMPTS: u64 = 64;

/// Per-estimator Monte Carlo summary; coverages are percentages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSummary {
    pub name: String,
    pub truth: f64,
    pub mean_estimate: f64,
    pub bias: f64,
    pub mc_sd: f64,
    pub mean_naive_se: f64,
    pub naive_coverage: f64,
    pub mean_corrected_se: Option<f64>,
    pub corrected_coverage: Option<f64>,
}

/// Result of a simulation run.
///
/// Equality ignores `wall_time_secs`; everything else is a deterministic
/// function of configuration, replication count and seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub design: String,
    pub replications: usize,
    pub seed: u64,
    pub degenerate_redraws: usize,
    pub estimators: Vec<EstimatorSummary>,
    pub wall_time_secs: f64,
}

impl PartialEq for SimulationSummary {
    fn eq(&self, other: &Self) -> bool {
        self.design == other.design
            && self.replications == other.replications
            && self.seed == other.seed
            && self.degenerate_redraws == other.degenerate_redraws
            && self.estimators == other.estimators
    }
}

impl SimulationSummary {
    /// Formatted table, one column per summary.
    pub fn render_table(columns: &[&SimulationSummary]) -> String {
        let cells: Vec<&EstimatorSummary> = columns.iter().flat_map(|s| s.estimators.iter()).collect();
        let fmt = |v: Option<f64>, digits: usize| v.map_or("-".to_string(), |v| format!("{v:.digits$}"));
        let rows: [(&str, Box<dyn Fn(&EstimatorSummary) -> String>); 6] = [
            ("Bias", Box::new(|e| fmt(Some(e.bias), 3))),
            ("MC se", Box::new(|e| fmt(Some(e.mc_sd), 3))),
            ("Naive CR se", Box::new(|e| fmt(Some(e.mean_naive_se), 3))),
            ("Coverage (naive)", Box::new(|e| fmt(Some(e.naive_coverage), 1))),
            ("CR se", Box::new(|e| fmt(e.mean_corrected_se, 3))),
            ("Coverage", Box::new(|e| fmt(e.corrected_coverage, 1))),
        ];
        let mut out = format!("{:<18}", "");
        for (k, c) in columns.iter().enumerate() {
            out.push_str(&format!("{:>14}", format!("({}) {}", k + 1, c.design)));
        }
        out.push('\n');
        for (label, f) in &rows {
            out.push_str(&format!("{label:<18}"));
            for e in &cells {
                out.push_str(&format!("{:>14}", f(e)));
            }
            out.push('\n');
        }
        let reps: Vec<String> = columns.iter().map(|c| c.replications.to_string()).collect();
        out.push_str(&format!("replications: {}\n", reps.join(", ")));
        out
    }
}

/// One replication's outputs.
#[derive(Debug, Clone, Copy)]
struct Draw {
    estimate: f64,
    naive_se: f64,
    corrected_se: Option<f64>,
}

fn is_degenerate(e: &Error) -> bool {
    matches!(
        e,
        Error::DegenerateDesign(_)
            | Error::EmptyComparisonCohort(_)
            | Error::InsufficientComparisons { .. }
            | Error::TooFewForSigma { .. }
            | Error::EmptyWindow(_)
    )
}

fn substream(seed: u64, rep: usize, attempt: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep as u64 | (attempt << 40));
    rng
}

fn run<D>(reps: usize, seed: u64, one: D) -> Result<(Vec<Draw>, usize)>
where
    D: Fn(&mut ChaCha8Rng) -> Result<Draw> + Sync,
{
    if reps < MIN_REPLICATIONS {
        return Err(Error::invalid(format!(
            "need at least {MIN_REPLICATIONS} replications, got {reps}"
        )));
    }
    let results: Vec<Result<(Draw, usize)>> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let mut last = None;
            for attempt in 0..MAX_ATTEMPTS {
                match one(&mut substream(seed, rep, attempt)) {
                    Ok(d) => return Ok((d, attempt as usize)),
                    Err(e) if is_degenerate(&e) => last = Some(e),
                    Err(e) => return Err(e),
                }
            }
            Err(Error::DegenerateDesign(format!(
                "replication {rep}: {MAX_ATTEMPTS} consecutive degenerate draws, last: {}",
                last.map_or_else(String::new, |e| e.to_string())
            )))
        })
        .collect();
    let mut draws = Vec::with_capacity(reps);
    let mut redraws = 0;
    for r in results {
        let (d, k) = r?;
        draws.push(d);
        redraws += k;
    }
    Ok((draws, redraws))
}

fn mean(values: &[f64]) -> f64 {
    pairwise_sum(values) / values.len() as f64
}

fn summarize(name: &str, truth: f64, draws: &[Draw]) -> EstimatorSummary {
    let z = normal_critical_value();
    let est: Vec<f64> = draws.iter().map(|d| d.estimate).collect();
    let mean_estimate = mean(&est);
    let sq: Vec<f64> = est.iter().map(|e| (e - mean_estimate).powi(2)).collect();
    let mc_sd = (pairwise_sum(&sq) / (est.len() as f64 - 1.0)).sqrt();
    let coverage = |se: &dyn Fn(&Draw) -> f64| {
        let hits = draws.iter().filter(|d| (d.estimate - truth).abs() <= z * se(d)).count();
        100.0 * hits as f64 / draws.len() as f64
    };
    let naive: Vec<f64> = draws.iter().map(|d| d.naive_se).collect();
    let corrected: Option<Vec<f64>> = draws.iter().map(|d| d.corrected_se).collect();
    EstimatorSummary {
        name: name.to_string(),
        truth,
        mean_estimate,
        bias: mean_estimate - truth,
        mc_sd,
        mean_naive_se: mean(&naive),
        naive_coverage: coverage(&|d| d.naive_se),
        mean_corrected_se: corrected.as_ref().map(|c| mean(c)),
        corrected_coverage: corrected.map(|_| coverage(&|d| d.corrected_se.unwrap_or(0.0))),
    }
}

/// Pooled matched 2WFE with `M = 1` over all periods of the staggered design.
pub fn run_staggered(config: &StaggeredDgpConfig, reps: usize, seed: u64) -> Result<SimulationSummary> {
    config.validate()?;
    let started = Instant::now();
    let lambda = PeriodSelector::all(PERIODS);
    let (draws, redraws) = run(reps, seed, |rng| {
        let panel = config.draw(rng)?;
        let matches = match_all_cohorts(&panel, 1, Scaling::None)?;
        let (report, _) = pooled_matched_2wfe(&panel, &matches, &lambda)?;
        Ok(Draw {
            estimate: report.estimate,
            naive_se: report.naive_se.unwrap_or(f64::NAN),
            corrected_se: None,
        })
    })?;
    Ok(SimulationSummary {
        design: "staggered".into(),
        replications: reps,
        seed,
        degenerate_redraws: redraws,
        estimators: vec![summarize("pooled matched 2WFE", config.effect, &draws)],
        wall_time_secs: started.elapsed().as_secs_f64(),
    })
}

/// Pairwise matched estimator (`M = 1`) with naive and corrected standard
/// errors for the single-cohort designs.
pub fn run_inference(config: &InferenceDgpConfig, reps: usize, seed: u64) -> Result<SimulationSummary> {
    config.validate()?;
    let started = Instant::now();
    let lambda = PeriodSelector::all(PERIODS);
    let truth = design2_estimand(config);
    let spec = MatchSpec::new(config.cohort(), 1);
    let (draws, redraws) = run(reps, seed, |rng| {
        let panel: PanelDataset<f64> = config.draw(rng)?;
        let matched = match_units(&panel, &spec)?;
        let report = pairwise_matched_did(&panel, &matched, &lambda)?;
        let naive = naive_cr_variance(&panel, &matched, &lambda)?;
        let corrected = corrected_variance(&panel, &matched, &lambda, DEFAULT_SIGMA_NEIGHBORS)?;
        Ok(Draw {
            estimate: report.estimate,
            naive_se: naive.sqrt(),
            corrected_se: Some(corrected.corrected.sqrt()),
        })
    })?;
    let design = match config.design {
        InferenceDesign::ConstantEffect => "constant-effect",
        InferenceDesign::Heterogeneous => "heterogeneous",
    };
    Ok(SimulationSummary {
        design: design.into(),
        replications: reps,
        seed,
        degenerate_redraws: redraws,
        estimators: vec![summarize("pairwise matched DiD", truth, &draws)],
        wall_time_secs: started.elapsed().as_secs_f64(),
    })
}
