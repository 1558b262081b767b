//! Exact matching on discrete covariate cells.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{CohortLabel, CovariateKind, PanelDataset};
use crate::scalar::Scalar;

/// Counts for one covariate cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary<F> {
    pub key: Vec<F>,
    pub targets: usize,
    pub comparisons: usize,
}

/// Cell membership of every unit and the comparison weights
/// `ê_s(x) / ê_∞(x) = N_{s,x} / N_{0,x}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellMatchResult<F> {
    fingerprint: u64,
    target: CohortLabel,
    comparison: CohortLabel,
    cell_of: Vec<Option<usize>>,
    cells: Vec<CellSummary<F>>,
    weights: Vec<F>,
}

impl<F: Scalar> CellMatchResult<F> {
    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn target_cohort(&self) -> CohortLabel {
        self.target
    }

    pub fn comparison_cohort(&self) -> CohortLabel {
        self.comparison
    }

    /// Cells in order of first appearance.
    pub fn cells(&self) -> &[CellSummary<F>] {
        &self.cells
    }

    /// Cell index of a unit; `None` outside the target and comparison
    /// cohorts.
    pub fn cell_of(&self, unit: usize) -> Option<usize> {
        self.cell_of[unit]
    }

    /// Comparison weight per unit, zero for non-comparison units.
    pub fn weights(&self) -> &[F] {
        &self.weights
    }
}

fn cell_key<F: Scalar>(row: &[F]) -> Vec<(u64, i16, i8)> {
    // adding zero folds -0.0 into +0.0
    row.iter().map(|v| (*v + F::zero()).integer_decode()).collect()
}

/// Group target and comparison units by their exact covariate vector.
pub fn match_cells<F: Scalar>(
    panel: &PanelDataset<F>,
    target: CohortLabel,
    comparison: CohortLabel,
) -> Result<CellMatchResult<F>> {
    if let Some(col) = panel
        .covariate_kinds()
        .iter()
        .position(|k| *k != CovariateKind::Discrete)
    {
        return Err(Error::ContinuousCovariate(col));
    }
    if target.is_never() || target == comparison {
        return Err(Error::invalid(
            "target cohort must be finite and differ from the comparison",
        ));
    }
    if panel.cohort_size(comparison) == 0 {
        return Err(Error::EmptyComparisonCohort(comparison.to_string()));
    }
    if panel.cohort_size(target) == 0 {
        return Err(Error::DegenerateDesign(format!("target cohort {target} has no units")));
    }

    let mut index: HashMap<Vec<(u64, i16, i8)>, usize> = HashMap::new();
    let mut cells: Vec<CellSummary<F>> = Vec::new();
    let mut cell_of = vec![None; panel.n()];
    for (i, slot) in cell_of.iter_mut().enumerate() {
        let c = panel.cohort(i);
        if c != target && c != comparison {
            continue;
        }
        let row = panel.covariate_row(i);
        let id = *index.entry(cell_key(row)).or_insert_with(|| {
            cells.push(CellSummary {
                key: row.to_vec(),
                targets: 0,
                comparisons: 0,
            });
            cells.len() - 1
        });
        if c == target {
            cells[id].targets += 1;
        } else {
            cells[id].comparisons += 1;
        }
        *slot = Some(id);
    }
    if let Some(bad) = cells.iter().find(|c| c.targets > 0 && c.comparisons == 0) {
        let key: Vec<String> = bad.key.iter().map(|v| v.to_string()).collect();
        return Err(Error::EmptyCellForTreated {
            cell: format!("({})", key.join(", ")),
        });
    }
    let weights = (0..panel.n())
        .map(|i| match cell_of[i] {
            Some(id) if panel.cohort(i) == comparison => {
                F::from_count(cells[id].targets) / F::from_count(cells[id].comparisons)
            }
            _ => F::zero(),
        })
        .collect();
    Ok(CellMatchResult {
        fingerprint: panel.fingerprint(),
        target,
        comparison,
        cell_of,
        cells,
        weights,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const S: CohortLabel = CohortLabel::Period(2);
    const NEVER: CohortLabel = CohortLabel::Never;

    fn binary(xs: &[f64], cohorts: &[CohortLabel]) -> PanelDataset<f64> {
        PanelDataset::new(
            vec![vec![0.0, 0.0]; xs.len()],
            cohorts.to_vec(),
            xs.iter().map(|&x| vec![x]).collect(),
            vec![CovariateKind::Discrete],
        )
        .unwrap()
    }

    #[test]
    fn ratio_is_target_over_comparison_count() {
        let panel = binary(
            &[1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0],
            &[S, S, NEVER, NEVER, NEVER, NEVER, NEVER, NEVER],
        );
        let r = match_cells(&panel, S, NEVER).unwrap();
        assert_eq!(r.weights()[2..6], [0.5; 4]);
        // comparison-only cell gets weight zero
        assert_eq!(r.weights()[6..], [0.0; 2]);
        assert_eq!(r.cells().len(), 2);
    }

    #[test]
    fn empty_cell_for_treated() {
        let panel = binary(&[1.0, 0.0, 0.0], &[S, NEVER, NEVER]);
        assert!(matches!(
            match_cells(&panel, S, NEVER),
            Err(Error::EmptyCellForTreated { .. })
        ));
    }

    #[test]
    fn continuous_columns_rejected() {
        let panel = PanelDataset::new(
            vec![vec![0.0, 0.0]; 2],
            vec![S, NEVER],
            vec![vec![1.0], vec![1.0]],
            vec![CovariateKind::Continuous],
        )
        .unwrap();
        assert!(matches!(
            match_cells(&panel, S, NEVER),
            Err(Error::ContinuousCovariate(0))
        ));
    }
}
