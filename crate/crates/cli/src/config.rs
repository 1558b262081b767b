//! Run configuration: a TOML file mirroring the command-line flags, with
//! flags taking precedence.

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use matchdid::io::PanelSchema;
use matchdid::matcher::{Scaling, SearchStrategy};
use matchdid::replication::Window;
use serde::{Deserialize, Serialize};

use crate::Failure;

/// Environment variable holding the default worker thread count.
pub const ENV_THREADS: &str = "MATCHDID_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Table,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ScalingArg {
    None,
    Standardize,
}

impl From<ScalingArg> for Scaling {
    fn from(s: ScalingArg) -> Self {
        match s {
            ScalingArg::None => Scaling::None,
            ScalingArg::Standardize => Scaling::Standardize,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum SearchArg {
    Auto,
    KdTree,
    BruteForce,
}

impl From<SearchArg> for SearchStrategy {
    fn from(s: SearchArg) -> Self {
        match s {
            SearchArg::Auto => SearchStrategy::Auto,
            SearchArg::KdTree => SearchStrategy::KdTree,
            SearchArg::BruteForce => SearchStrategy::BruteForce,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum WindowArg {
    Outcome,
    Placebo,
}

impl From<WindowArg> for Window {
    fn from(w: WindowArg) -> Self {
        match w {
            WindowArg::Outcome => Window::Outcome,
            WindowArg::Placebo => Window::Placebo,
        }
    }
}

/// Every setting a run can take. Each field is optional so that a config
/// file and the command line can be layered; the merged value is echoed in
/// machine-readable output.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub format: Option<Format>,
    pub threads: Option<usize>,

    pub unit_column: Option<String>,
    pub period_column: Option<String>,
    pub outcome_column: Option<String>,
    pub cohort_column: Option<String>,
    pub covariates: Option<Vec<String>>,
    pub discrete: Option<Vec<String>>,

    pub cohort: Option<String>,
    pub comparison: Option<String>,
    #[serde(rename = "M")]
    pub neighbors: Option<usize>,
    #[serde(rename = "J")]
    pub sigma_neighbors: Option<usize>,
    pub lambda: Option<String>,
    pub scaling: Option<ScalingArg>,
    pub search: Option<SearchArg>,
    pub bias_correct: Option<bool>,
    pub unweighted: Option<bool>,

    pub shares: Option<String>,
    #[serde(rename = "T")]
    pub periods: Option<usize>,

    pub seed: Option<u64>,
    pub reps: Option<usize>,
    pub n: Option<usize>,
    pub design: Option<u8>,

    pub experimental: Option<PathBuf>,
    pub cps: Option<PathBuf>,
    pub window: Option<WindowArg>,
}

macro_rules! overlay_fields {
    ($dst:ident, $src:ident; $($f:ident),* $(,)?) => {
        $( if $src.$f.is_some() { $dst.$f = $src.$f; } )*
    };
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Failure::Usage(format!("bad config {}: {e}", path.display())))
    }

    /// Replace every field that `flags` sets.
    pub fn overlay(&mut self, flags: RunConfig) {
        let dst = self;
        overlay_fields!(dst, flags;
            input, output, format, threads,
            unit_column, period_column, outcome_column, cohort_column, covariates, discrete,
            cohort, comparison, neighbors, sigma_neighbors, lambda, scaling, search, bias_correct, unweighted,
            shares, periods, seed, reps, n, design, experimental, cps, window,
        );
    }

    pub fn schema(&self) -> PanelSchema {
        let d = PanelSchema::default();
        PanelSchema {
            unit: self.unit_column.clone().unwrap_or(d.unit),
            period: self.period_column.clone().unwrap_or(d.period),
            outcome: self.outcome_column.clone().unwrap_or(d.outcome),
            cohort: self.cohort_column.clone().unwrap_or(d.cohort),
            covariates: self.covariates.clone().unwrap_or_default(),
            discrete: self.discrete.clone().unwrap_or_default(),
        }
    }

    pub fn neighbors(&self) -> Result<usize, Failure> {
        positive(self.neighbors.unwrap_or(1), "M")
    }

    pub fn sigma_neighbors(&self) -> Result<usize, Failure> {
        positive(
            self.sigma_neighbors
                .unwrap_or(matchdid::inference::DEFAULT_SIGMA_NEIGHBORS),
            "J",
        )
    }

    /// Thread count from the flag or file, then the environment.
    pub fn resolved_threads(&self) -> Result<Option<usize>, Failure> {
        if let Some(t) = self.threads {
            return positive(t, "threads").map(Some);
        }
        match std::env::var(ENV_THREADS) {
            Ok(v) if !v.trim().is_empty() => v
                .trim()
                .parse::<usize>()
                .ok()
                .filter(|&t| t > 0)
                .map(Some)
                .ok_or_else(|| Failure::Usage(format!("{ENV_THREADS} must be a positive integer, got `{v}`"))),
            _ => Ok(None),
        }
    }
}

fn positive(v: usize, name: &str) -> Result<usize, Failure> {
    if v == 0 {
        Err(Failure::Usage(format!("{name} must be at least 1")))
    } else {
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file() {
        let mut file: RunConfig = toml::from_str("M = 3\nJ = 4\ncohort = \"2\"\nformat = \"json\"").unwrap();
        file.overlay(RunConfig {
            neighbors: Some(1),
            ..Default::default()
        });
        assert_eq!(file.neighbors, Some(1));
        assert_eq!(file.sigma_neighbors, Some(4));
        assert_eq!(file.cohort.as_deref(), Some("2"));
        assert_eq!(file.format, Some(Format::Json));
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<RunConfig>("neighbours = 2").is_err());
    }

    #[test]
    fn zero_neighbors_is_a_usage_error() {
        let c = RunConfig {
            neighbors: Some(0),
            ..Default::default()
        };
        assert!(matches!(c.neighbors(), Err(Failure::Usage(_))));
    }
}
