//! Column layout of the mixed-model design matrix.
//!
//! Columns are ordered: intercept, gender contrast (if active), the four
//! age intercepts (if active), the twelve region intercepts (if active).
//! Each observation row has at most four nonzero entries, so rows are
//! materialized as sparse (column, value) pairs.

use crate::config::{N_AGE_GROUPS, N_REGIONS};

use super::ObsCell;

#[derive(Debug, Clone, Copy)]
pub(crate) struct Layout {
    pub gender_active: bool,
    pub age_active: bool,
    pub region_active: bool,
}

impl Layout {
    pub fn n_cols(&self) -> usize {
        1 + usize::from(self.gender_active)
            + if self.age_active { N_AGE_GROUPS } else { 0 }
            + if self.region_active { N_REGIONS } else { 0 }
    }

    pub fn n_fixed(&self) -> usize {
        1 + usize::from(self.gender_active)
    }

    pub fn n_random(&self) -> usize {
        self.n_cols() - self.n_fixed()
    }

    fn age_offset(&self) -> usize {
        self.n_fixed()
    }

    fn region_offset(&self) -> usize {
        self.age_offset() + if self.age_active { N_AGE_GROUPS } else { 0 }
    }

    pub fn age_col(&self, age: usize) -> Option<usize> {
        self.age_active.then(|| self.age_offset() + age)
    }

    pub fn region_col(&self, region: usize) -> Option<usize> {
        self.region_active.then(|| self.region_offset() + region)
    }

    /// Inverse variance of the prior on `col`: 0 for fixed columns.
    pub fn penalty(&self, col: usize, sigma_age: f64, sigma_region: f64) -> f64 {
        if col < self.n_fixed() {
            0.0
        } else if self.age_active && col < self.region_offset() {
            1.0 / (sigma_age * sigma_age)
        } else {
            1.0 / (sigma_region * sigma_region)
        }
    }

    /// Per-column prior variance for random columns (fixed columns get 0).
    pub fn prior_variance(&self, col: usize, sigma_age: f64, sigma_region: f64) -> f64 {
        if col < self.n_fixed() {
            0.0
        } else if self.age_active && col < self.region_offset() {
            sigma_age * sigma_age
        } else {
            sigma_region * sigma_region
        }
    }

    /// Sparse design row for a cell: at most 4 (column, value) entries.
    pub fn row(&self, cell: &ObsCell) -> SparseRow {
        let mut row = SparseRow::default();
        row.push(0, 1.0);
        if self.gender_active {
            row.push(1, cell.male);
        }
        if let Some(col) = self.age_col(cell.age) {
            row.push(col, 1.0);
        }
        if let Some(col) = self.region_col(cell.region) {
            row.push(col, 1.0);
        }
        row
    }
}

#[derive(Debug, Default, Clone, Copy)]
pub(crate) struct SparseRow {
    entries: [(usize, f64); 4],
    len: usize,
}

impl SparseRow {
    fn push(&mut self, col: usize, value: f64) {
        self.entries[self.len] = (col, value);
        self.len += 1;
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.entries[..self.len].iter().copied()
    }

    /// Dot product with a dense coefficient vector.
    pub fn dot(&self, theta: &nalgebra::DVector<f64>) -> f64 {
        self.iter().map(|(col, value)| value * theta[col]).sum()
    }
}
