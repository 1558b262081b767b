//! `matchdid` command-line tool.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use config::{Format, RunConfig, ScalingArg, SearchArg, WindowArg};

/// Post-matching difference-in-differences for staggered-adoption panels.
#[derive(Debug, Parser)]
#[command(name = "matchdid", version, about)]
struct Cli {
    /// TOML file with defaults for any flag; flags given here win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output format.
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,

    /// Write output here instead of stdout.
    #[arg(long, short, global = true)]
    output: Option<PathBuf>,

    /// Worker threads (default: MATCHDID_THREADS, then all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Match each unit of a cohort to its nearest comparison units.
    Match {
        #[command(flatten)]
        panel: PanelArgs,
        #[command(flatten)]
        matching: MatchArgs,
        /// Match without replacement.
        #[arg(long)]
        without_replacement: bool,
    },
    /// Matched DiD or 2WFE estimate with standard errors.
    Estimate {
        #[arg(value_enum)]
        estimator: EstimatorArg,
        #[command(flatten)]
        panel: PanelArgs,
        #[command(flatten)]
        matching: MatchArgs,
        #[command(flatten)]
        window: WindowArgs,
        /// Subtract the regression-based matching bias (pairwise only).
        #[arg(long)]
        bias_correct: bool,
    },
    /// 2x2 decomposition of the pooled matched (or plain) 2WFE estimate.
    Decompose {
        #[command(flatten)]
        panel: PanelArgs,
        #[command(flatten)]
        matching: MatchArgs,
        #[command(flatten)]
        window: WindowArgs,
        /// Decompose the unweighted 2WFE instead of the matched one.
        #[arg(long)]
        unweighted: bool,
    },
    /// Probability-limit weights from population cohort shares.
    Weights {
        /// Cohort shares: either `s=p` pairs (`2=0.3,3=0.3,inf=0.4`) or a
        /// plain list for cohorts 2, 3, ... with the never-treated last.
        #[arg(long)]
        shares: Option<String>,
        /// Number of periods.
        #[arg(long = "T")]
        periods: Option<usize>,
        /// Period indicators, e.g. `1,1,0,1`.
        #[arg(long)]
        lambda: Option<String>,
    },
    /// Monte Carlo studies.
    Simulate {
        #[arg(value_enum)]
        study: StudyArg,
        /// Inference design: 1 constant effect, 2 heterogeneous.
        #[arg(long)]
        design: Option<u8>,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Units per simulated panel.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Six-specification comparison on the NSW experimental and CPS files.
    ReplicateNsw {
        /// NSW experimental file (default: MATCHDID_NSW_EXPERIMENTAL).
        #[arg(long)]
        experimental: Option<PathBuf>,
        /// CPS comparison file (default: MATCHDID_NSW_CPS).
        #[arg(long)]
        cps: Option<PathBuf>,
        #[arg(long, value_enum)]
        window: Option<WindowArg>,
        #[arg(long = "M")]
        neighbors: Option<usize>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EstimatorArg {
    Pairwise,
    Pooled,
    Discrete,
    NoReplacement,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum StudyArg {
    Staggered,
    Inference,
}

/// Long-format panel input and its columns.
#[derive(Debug, Args)]
struct PanelArgs {
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    unit_column: Option<String>,
    #[arg(long)]
    period_column: Option<String>,
    #[arg(long)]
    outcome_column: Option<String>,
    #[arg(long)]
    cohort_column: Option<String>,
    /// Covariate columns, comma separated.
    #[arg(long, value_delimiter = ',')]
    covariates: Option<Vec<String>>,
    /// Covariates to treat as discrete.
    #[arg(long, value_delimiter = ',')]
    discrete: Option<Vec<String>>,
}

#[derive(Debug, Args)]
struct MatchArgs {
    /// Target cohort (first treatment period, as labelled in the file).
    #[arg(long)]
    cohort: Option<String>,
    /// Comparison cohort (default: never treated).
    #[arg(long)]
    comparison: Option<String>,
    /// Neighbors per target unit.
    #[arg(long = "M")]
    neighbors: Option<usize>,
    #[arg(long, value_enum)]
    scaling: Option<ScalingArg>,
    #[arg(long, value_enum)]
    search: Option<SearchArg>,
}

#[derive(Debug, Args)]
struct WindowArgs {
    /// Period indicators, e.g. `1,1,0,1` (default: all periods).
    #[arg(long)]
    lambda: Option<String>,
    /// Same-cohort neighbors for the conditional variance estimates.
    #[arg(long = "J")]
    sigma_neighbors: Option<usize>,
}

/// What went wrong, split by exit code.
#[derive(Debug)]
pub enum Failure {
    /// Bad flags, config or option values: exit 2.
    Usage(String),
    /// The data or the requested design cannot be processed: exit 1.
    Data(matchdid::Error),
}

impl From<matchdid::Error> for Failure {
    fn from(e: matchdid::Error) -> Self {
        Failure::Data(e)
    }
}

impl PanelArgs {
    fn apply(self, c: &mut RunConfig) {
        c.input = self.input;
        c.unit_column = self.unit_column;
        c.period_column = self.period_column;
        c.outcome_column = self.outcome_column;
        c.cohort_column = self.cohort_column;
        c.covariates = self.covariates;
        c.discrete = self.discrete;
    }
}

impl MatchArgs {
    fn apply(self, c: &mut RunConfig) {
        c.cohort = self.cohort;
        c.comparison = self.comparison;
        c.neighbors = self.neighbors;
        c.scaling = self.scaling;
        c.search = self.search;
    }
}

impl WindowArgs {
    fn apply(self, c: &mut RunConfig) {
        c.lambda = self.lambda;
        c.sigma_neighbors = self.sigma_neighbors;
    }
}

fn flag(set: bool) -> Option<bool> {
    set.then_some(true)
}

/// Settings given on the command line, plus the action to run.
fn split(cli: Cli) -> (Option<PathBuf>, RunConfig, commands::Action) {
    use commands::Action;
    let mut c = RunConfig {
        format: cli.format,
        output: cli.output,
        threads: cli.threads,
        ..Default::default()
    };
    let action = match cli.command {
        Command::Match {
            panel,
            matching,
            without_replacement,
        } => {
            panel.apply(&mut c);
            matching.apply(&mut c);
            Action::Match { without_replacement }
        }
        Command::Estimate {
            estimator,
            panel,
            matching,
            window,
            bias_correct,
        } => {
            panel.apply(&mut c);
            matching.apply(&mut c);
            window.apply(&mut c);
            c.bias_correct = flag(bias_correct);
            Action::Estimate(match estimator {
                EstimatorArg::Pairwise => commands::Estimator::Pairwise,
                EstimatorArg::Pooled => commands::Estimator::Pooled,
                EstimatorArg::Discrete => commands::Estimator::Discrete,
                EstimatorArg::NoReplacement => commands::Estimator::NoReplacement,
            })
        }
        Command::Decompose {
            panel,
            matching,
            window,
            unweighted,
        } => {
            panel.apply(&mut c);
            matching.apply(&mut c);
            window.apply(&mut c);
            c.unweighted = flag(unweighted);
            Action::Decompose
        }
        Command::Weights {
            shares,
            periods,
            lambda,
        } => {
            c.shares = shares;
            c.periods = periods;
            c.lambda = lambda;
            Action::Weights
        }
        Command::Simulate {
            study,
            design,
            reps,
            seed,
            n,
        } => {
            c.design = design;
            c.reps = reps;
            c.seed = seed;
            c.n = n;
            match study {
                StudyArg::Staggered => Action::SimulateStaggered,
                StudyArg::Inference => Action::SimulateInference,
            }
        }
        Command::ReplicateNsw {
            experimental,
            cps,
            window,
            neighbors,
        } => {
            c.experimental = experimental;
            c.cps = cps;
            c.window = window;
            c.neighbors = neighbors;
            Action::ReplicateNsw
        }
    };
    (cli.config, c, action)
}

fn run(cli: Cli) -> Result<(), Failure> {
    let (config_path, flags, action) = split(cli);
    let mut config = match config_path {
        Some(p) => RunConfig::load(&p)?,
        None => RunConfig::default(),
    };
    config.overlay(flags);
    if let Some(t) = config.resolved_threads()? {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Failure::Usage(format!("cannot start {t} threads: {e}")))?;
    }
    let rendered = commands::execute(&action, &config)?;
    match &config.output {
        Some(path) => std::fs::write(path, rendered).map_err(|e| Failure::Data(e.into()))?,
        None => print!("{rendered}"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn command_definition_is_consistent() {
        Cli::command().debug_assert();
    }
}
