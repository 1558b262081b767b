//! Nearest-neighbor matching of a target cohort to a comparison cohort.

mod cells;
pub mod kdtree;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{CohortLabel, PanelDataset};
use crate::scalar::Scalar;

pub use cells::{match_cells, CellMatchResult, CellSummary};
use kdtree::{brute_force_knn, KdTree, Neighbor, PointSet};

/// Whether comparison units may be reused across target units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Replacement {
    #[default]
    With,
    Without,
}

/// Covariate scaling applied before distances are computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scaling {
    #[default]
    None,
    /// Divide every column by its sample standard deviation over the target
    /// and comparison units.
    Standardize,
}

/// Neighbor search backend. `Auto` picks brute force for `q > 8` or fewer
/// than 64 comparison units and a k-d tree otherwise; both are exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SearchStrategy {
    #[default]
    Auto,
    KdTree,
    BruteForce,
}

/// Parameters of one cohort-to-cohort match.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchSpec {
    pub target: CohortLabel,
    pub comparison: CohortLabel,
    pub neighbors: usize,
    pub replacement: Replacement,
    pub scaling: Scaling,
    pub search: SearchStrategy,
}

impl MatchSpec {
    /// `M` nearest never-treated neighbors, with replacement, raw covariates.
    pub fn new(target: CohortLabel, neighbors: usize) -> Self {
        Self {
            target,
            comparison: CohortLabel::Never,
            neighbors,
            replacement: Replacement::With,
            scaling: Scaling::None,
            search: SearchStrategy::Auto,
        }
    }

    pub fn comparison(mut self, comparison: CohortLabel) -> Self {
        self.comparison = comparison;
        self
    }

    pub fn replacement(mut self, replacement: Replacement) -> Self {
        self.replacement = replacement;
        self
    }

    pub fn scaling(mut self, scaling: Scaling) -> Self {
        self.scaling = scaling;
        self
    }

    pub fn search(mut self, search: SearchStrategy) -> Self {
        self.search = search;
        self
    }

    fn check(&self) -> Result<()> {
        if self.neighbors == 0 {
            return Err(Error::invalid("number of neighbors M must be at least 1"));
        }
        if self.target.is_never() {
            return Err(Error::invalid("target cohort must be finite"));
        }
        if self.target == self.comparison {
            return Err(Error::invalid("target and comparison cohorts must differ"));
        }
        Ok(())
    }
}

/// Neighbor sets `J_M(i, s')` and usage counts `K_M(i, s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult<F> {
    fingerprint: u64,
    n: usize,
    spec: MatchSpec,
    targets: Vec<usize>,
    neighbors: Vec<usize>,
    distances: Vec<F>,
    usage: Vec<usize>,
    scale: Vec<F>,
}

impl<F: Scalar> MatchResult<F> {
    pub fn spec(&self) -> &MatchSpec {
        &self.spec
    }

    pub fn target_cohort(&self) -> CohortLabel {
        self.spec.target
    }

    pub fn comparison_cohort(&self) -> CohortLabel {
        self.spec.comparison
    }

    /// Number of neighbors per target unit.
    pub fn m(&self) -> usize {
        self.spec.neighbors
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    /// Panel size the result was computed on.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Target units in ascending order.
    pub fn targets(&self) -> &[usize] {
        &self.targets
    }

    /// Matched comparison units of the `k`-th target, nearest first.
    pub fn neighbors_of(&self, k: usize) -> &[usize] {
        let m = self.m();
        &self.neighbors[k * m..(k + 1) * m]
    }

    /// Euclidean match distances of the `k`-th target, nondecreasing.
    pub fn distances_of(&self, k: usize) -> &[F] {
        let m = self.m();
        &self.distances[k * m..(k + 1) * m]
    }

    /// `(target unit, neighbor units)` pairs.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, &[usize])> {
        self.targets.iter().enumerate().map(|(k, &i)| (i, self.neighbors_of(k)))
    }

    /// `K_M(i, s)` for every unit of the panel (zero outside the comparison
    /// cohort).
    pub fn usage_counts(&self) -> &[usize] {
        &self.usage
    }

    pub fn usage(&self, unit: usize) -> usize {
        self.usage[unit]
    }

    /// Column scale factors applied before distances were computed.
    pub fn scale(&self) -> &[F] {
        &self.scale
    }

    pub fn mean_distance(&self) -> F {
        if self.distances.is_empty() {
            return F::zero();
        }
        crate::summation::pairwise_sum(&self.distances) / F::from_count(self.distances.len())
    }

    pub fn max_usage(&self) -> usize {
        self.usage.iter().copied().max().unwrap_or(0)
    }

    /// Number of matched pairs whose nearest neighbor was one of several
    /// equidistant candidates, which makes the match tie-break dependent.
    pub fn tie_count(&self, panel: &PanelDataset<F>) -> usize {
        let pool = scaled_points(panel, &panel.units_in(self.spec.comparison), &self.scale);
        self.targets
            .iter()
            .enumerate()
            .filter(|&(k, &i)| {
                let q = scaled_row(panel, i, &self.scale);
                let d2 = |j: usize| kdtree::squared_distance(&scaled_row(panel, j, &self.scale), &q);
                let nb = self.neighbors_of(k);
                let worst2 = d2(*nb.last().expect("M >= 1"));
                let at_boundary = (0..pool.len())
                    .filter(|&p| kdtree::squared_distance(pool.point(p), &q) == worst2)
                    .count();
                let inside = nb.iter().filter(|&&j| d2(j) == worst2).count();
                at_boundary > inside
            })
            .count()
    }
}

fn scaled_row<F: Scalar>(panel: &PanelDataset<F>, unit: usize, scale: &[F]) -> Vec<F> {
    panel
        .covariate_row(unit)
        .iter()
        .zip(scale)
        .map(|(x, s)| *x / *s)
        .collect()
}

fn scaled_points<F: Scalar>(panel: &PanelDataset<F>, units: &[usize], scale: &[F]) -> PointSet<F> {
    let coords = units.iter().flat_map(|&i| scaled_row(panel, i, scale)).collect();
    PointSet::new(panel.covariate_dim(), coords, units.to_vec())
}

/// Per-column scale factors for the requested scaling. Columns with zero
/// spread keep factor one.
pub(crate) fn scale_factors<F: Scalar>(panel: &PanelDataset<F>, units: &[usize], scaling: Scaling) -> Vec<F> {
    let q = panel.covariate_dim();
    match scaling {
        Scaling::None => vec![F::one(); q],
        Scaling::Standardize => (0..q)
            .map(|c| {
                let col: Vec<F> = units.iter().map(|&i| panel.covariate_row(i)[c]).collect();
                let sd = sample_sd(&col);
                if sd > F::zero() {
                    sd
                } else {
                    F::one()
                }
            })
            .collect(),
    }
}

fn sample_sd<F: Scalar>(v: &[F]) -> F {
    if v.len() < 2 {
        return F::zero();
    }
    let n = F::from_count(v.len());
    let mean = v.iter().copied().sum::<F>() / n;
    let ss = v.iter().map(|x| (*x - mean) * (*x - mean)).sum::<F>();
    (ss / (n - F::one())).sqrt()
}

/// Neighbor searcher over a fixed set of units, used by the matcher and by
/// the same-cohort variance estimator.
pub(crate) enum Searcher<F> {
    Tree(KdTree<F>),
    Brute(PointSet<F>),
}

impl<F: Scalar> Searcher<F> {
    pub(crate) fn new(points: PointSet<F>, strategy: SearchStrategy) -> Self {
        let use_tree = match strategy {
            SearchStrategy::KdTree => true,
            SearchStrategy::BruteForce => false,
            SearchStrategy::Auto => points.dim() <= 8 && points.len() >= 64,
        };
        if use_tree {
            Searcher::Tree(KdTree::build(points))
        } else {
            Searcher::Brute(points)
        }
    }

    pub(crate) fn knn(&self, query: &[F], k: usize, accept: impl Fn(usize) -> bool) -> Vec<Neighbor<F>> {
        match self {
            Searcher::Tree(t) => t.knn(query, k, accept),
            Searcher::Brute(p) => brute_force_knn(p, query, k, accept),
        }
    }
}

/// Match every unit of `spec.target` to its `M` nearest units of
/// `spec.comparison` by Euclidean covariate distance.
///
/// Ties are broken toward the lower unit index. Without replacement, target
/// units are processed in ascending index order and each takes its nearest
/// still-unused comparison units.
pub fn match_units<F: Scalar>(panel: &PanelDataset<F>, spec: &MatchSpec) -> Result<MatchResult<F>> {
    spec.check()?;
    let targets = panel.units_in(spec.target);
    if targets.is_empty() {
        return Err(Error::DegenerateDesign(format!(
            "target cohort {} has no units",
            spec.target
        )));
    }
    let pool = panel.units_in(spec.comparison);
    if pool.is_empty() {
        return Err(Error::EmptyComparisonCohort(spec.comparison.to_string()));
    }
    let m = spec.neighbors;
    let needed = match spec.replacement {
        Replacement::With => m,
        Replacement::Without => m * targets.len(),
    };
    if pool.len() < needed {
        return Err(Error::InsufficientComparisons {
            needed,
            available: pool.len(),
        });
    }

    let mut scale_units = targets.clone();
    scale_units.extend_from_slice(&pool);
    let scale = scale_factors(panel, &scale_units, spec.scaling);
    let searcher = Searcher::new(scaled_points(panel, &pool, &scale), spec.search);

    let found: Vec<Vec<Neighbor<F>>> = match spec.replacement {
        Replacement::With => targets
            .par_iter()
            .map(|&i| searcher.knn(&scaled_row(panel, i, &scale), m, |_| true))
            .collect(),
        Replacement::Without => {
            let mut used = vec![false; panel.n()];
            targets
                .iter()
                .map(|&i| {
                    let nb = searcher.knn(&scaled_row(panel, i, &scale), m, |j| !used[j]);
                    for x in &nb {
                        used[x.index] = true;
                    }
                    nb
                })
                .collect()
        }
    };

    let mut usage = vec![0usize; panel.n()];
    let mut neighbors = Vec::with_capacity(targets.len() * m);
    let mut distances = Vec::with_capacity(targets.len() * m);
    for nb in &found {
        for x in nb {
            usage[x.index] += 1;
            neighbors.push(x.index);
            distances.push(x.dist2.sqrt());
        }
    }
    Ok(MatchResult {
        fingerprint: panel.fingerprint(),
        n: panel.n(),
        spec: spec.clone(),
        targets,
        neighbors,
        distances,
        usage,
        scale,
    })
}

/// Match every finite cohort of the panel to the never-treated with `M`
/// neighbors, as needed by the pooled estimator.
pub fn match_all_cohorts<F: Scalar>(
    panel: &PanelDataset<F>,
    neighbors: usize,
    scaling: Scaling,
) -> Result<Vec<MatchResult<F>>> {
    panel
        .cohort_labels()
        .into_iter()
        .filter(|c| !c.is_never())
        .map(|s| match_units(panel, &MatchSpec::new(s, neighbors).scaling(scaling)))
        .collect()
}

/// Total usage `K_M(i) = Σ_s K_M(i, s)` across per-cohort match results.
pub fn pool_usage<F: Scalar>(results: &[MatchResult<F>]) -> Result<Vec<usize>> {
    let first = results
        .first()
        .ok_or_else(|| Error::invalid("no match results to pool"))?;
    let mut seen = Vec::new();
    for r in results {
        if r.fingerprint != first.fingerprint
            || r.n != first.n
            || r.spec.comparison != first.spec.comparison
            || seen.contains(&r.spec.target)
        {
            return Err(Error::MismatchedPanels);
        }
        seen.push(r.spec.target);
    }
    let mut total = vec![0usize; first.n];
    for r in results {
        for (t, k) in total.iter_mut().zip(&r.usage) {
            *t += k;
        }
    }
    Ok(total)
}
