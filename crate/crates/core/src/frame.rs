//! Poststratification frame: the gender × age × region cell crossing.
//!
//! A [`CellTable`] always holds all 96 cells in canonical key order
//! (gender, then age group, then region, each in configured label order),
//! so every downstream output is deterministic. Cells the sample misses
//! stay in the table with an undefined mean.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::config::{Labels, N_AGE_GROUPS, N_CELLS, N_GENDERS, N_REGIONS};
use crate::error::{Error, Result};
use crate::ingest::CensusCell;

/// Index triple identifying one demographic cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct CellKey {
    pub gender: u8,
    pub age: u8,
    pub region: u8,
}

impl CellKey {
    pub fn new(gender: usize, age: usize, region: usize) -> CellKey {
        debug_assert!(gender < N_GENDERS && age < N_AGE_GROUPS && region < N_REGIONS);
        CellKey {
            gender: gender as u8,
            age: age as u8,
            region: region as u8,
        }
    }

    /// Position in canonical order: gender-major, then age, then region.
    pub fn index(self) -> usize {
        (self.gender as usize * N_AGE_GROUPS + self.age as usize) * N_REGIONS
            + self.region as usize
    }

    pub fn from_index(index: usize) -> CellKey {
        debug_assert!(index < N_CELLS);
        CellKey {
            gender: (index / (N_AGE_GROUPS * N_REGIONS)) as u8,
            age: (index / N_REGIONS % N_AGE_GROUPS) as u8,
            region: (index % N_REGIONS) as u8,
        }
    }

    /// All 96 keys in canonical order.
    pub fn all() -> impl Iterator<Item = CellKey> {
        (0..N_CELLS).map(CellKey::from_index)
    }

    pub fn gender_label<'a>(&self, labels: &'a Labels) -> &'a str {
        &labels.genders()[self.gender as usize]
    }

    pub fn age_label<'a>(&self, labels: &'a Labels) -> &'a str {
        &labels.age_groups()[self.age as usize]
    }

    pub fn region_label<'a>(&self, labels: &'a Labels) -> &'a str {
        &labels.regions()[self.region as usize]
    }

    pub fn describe(&self, labels: &Labels) -> String {
        format!(
            "{}/{}/{}",
            self.gender_label(labels),
            self.age_label(labels),
            self.region_label(labels)
        )
    }
}

/// Per-cell aggregate: sample mean and count plus the census population.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Cell {
    pub mean: Option<f64>,
    pub count: u64,
    pub census_population: u64,
}

/// The full 96-cell frame in canonical key order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellTable {
    cells: Vec<Cell>,
}

impl CellTable {
    /// Collapses records into per-cell means and counts.
    ///
    /// Each record is a cell key plus a real outcome. Cells with no records
    /// get count 0 and an undefined mean. Outcomes within a cell are summed
    /// in ascending value order so the result is exactly permutation
    /// invariant.
    pub fn collapse(records: &[(CellKey, f64)], census: &CensusCounts) -> CellTable {
        let mut buckets: Vec<Vec<f64>> = vec![Vec::new(); N_CELLS];
        for (key, outcome) in records {
            buckets[key.index()].push(*outcome);
        }
        let cells = buckets
            .into_iter()
            .enumerate()
            .map(|(index, mut bucket)| {
                bucket.sort_by(f64::total_cmp);
                let count = bucket.len() as u64;
                let mean = if bucket.is_empty() {
                    None
                } else {
                    Some(bucket.iter().sum::<f64>() / count as f64)
                };
                Cell {
                    mean,
                    count,
                    census_population: census.get(CellKey::from_index(index)),
                }
            })
            .collect();
        CellTable { cells }
    }

    /// Builds a table directly from per-cell means (used for model
    /// predictions, which are defined for every cell).
    pub fn from_means(means: &[f64], census: &CensusCounts) -> CellTable {
        assert_eq!(means.len(), N_CELLS);
        let cells = means
            .iter()
            .enumerate()
            .map(|(index, &mean)| Cell {
                mean: Some(mean),
                count: 0,
                census_population: census.get(CellKey::from_index(index)),
            })
            .collect();
        CellTable { cells }
    }

    pub fn get(&self, key: CellKey) -> &Cell {
        &self.cells[key.index()]
    }

    pub fn iter(&self) -> impl Iterator<Item = (CellKey, &Cell)> {
        self.cells
            .iter()
            .enumerate()
            .map(|(index, cell)| (CellKey::from_index(index), cell))
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        false // the frame always holds the full crossing
    }

    pub fn total_count(&self) -> u64 {
        self.cells.iter().map(|c| c.count).sum()
    }

    /// Serializes the table as `cells.csv` (undefined means are empty).
    pub fn write_csv<W: Write>(&self, writer: W, labels: &Labels) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        out.write_record(["gender", "age_group", "region", "mean", "count", "census_population"])
            .map_err(csv_io)?;
        for (key, cell) in self.iter() {
            let mean = cell.mean.map(|m| m.to_string()).unwrap_or_default();
            out.write_record([
                key.gender_label(labels),
                key.age_label(labels),
                key.region_label(labels),
                &mean,
                &cell.count.to_string(),
                &cell.census_population.to_string(),
            ])
            .map_err(csv_io)?;
        }
        out.flush().map_err(|e| Error::Internal(e.to_string()))?;
        Ok(())
    }

    pub fn write_csv_path(&self, path: impl AsRef<Path>, labels: &Labels) -> Result<()> {
        let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        self.write_csv(file, labels)
    }
}

fn csv_io(e: csv::Error) -> Error {
    Error::Internal(e.to_string())
}

/// Census populations indexed by cell, in canonical order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CensusCounts {
    populations: Vec<u64>,
}

impl CensusCounts {
    /// Builds the 96-slot vector; census-absent cells get population 0.
    pub fn from_cells(cells: &[CensusCell]) -> CensusCounts {
        let mut populations = vec![0u64; N_CELLS];
        for cell in cells {
            populations[cell.key.index()] = cell.population;
        }
        CensusCounts { populations }
    }

    pub fn uniform(population: u64) -> CensusCounts {
        CensusCounts {
            populations: vec![population; N_CELLS],
        }
    }

    pub fn get(&self, key: CellKey) -> u64 {
        self.populations[key.index()]
    }

    pub fn total(&self) -> u64 {
        self.populations.iter().sum()
    }

    pub fn region_total(&self, region: usize) -> u64 {
        CellKey::all()
            .filter(|k| k.region as usize == region)
            .map(|k| self.get(k))
            .sum()
    }

    pub fn as_slice(&self) -> &[u64] {
        &self.populations
    }
}

/// Paired cell means over the keys where both tables are defined.
#[derive(Debug, Clone, PartialEq)]
pub struct Aligned {
    pub keys: Vec<CellKey>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    /// Keys left out because at least one side is undefined.
    pub excluded: Vec<CellKey>,
}

/// Pairs two tables cell by cell, keeping keys where both means are defined.
///
/// Output follows canonical key order. Errors when no cell is defined in
/// both tables, since no correlation can be computed from that.
pub fn align(a: &CellTable, b: &CellTable) -> Result<Aligned> {
    let mut aligned = Aligned {
        keys: Vec::new(),
        a: Vec::new(),
        b: Vec::new(),
        excluded: Vec::new(),
    };
    for key in CellKey::all() {
        match (a.get(key).mean, b.get(key).mean) {
            (Some(ma), Some(mb)) => {
                aligned.keys.push(key);
                aligned.a.push(ma);
                aligned.b.push(mb);
            }
            _ => aligned.excluded.push(key),
        }
    }
    if aligned.keys.is_empty() {
        return Err(Error::NoOverlap);
    }
    Ok(aligned)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_records() -> Vec<(CellKey, f64)> {
        vec![
            (CellKey::new(0, 0, 0), 0.7),
            (CellKey::new(0, 0, 0), 0.3),
            (CellKey::new(1, 3, 11), 0.9),
        ]
    }

    #[test]
    fn collapse_always_yields_full_crossing() {
        let table = CellTable::collapse(&sample_records(), &CensusCounts::uniform(1));
        assert_eq!(table.len(), N_CELLS);
        assert_eq!(table.total_count(), 3);
    }

    #[test]
    fn single_record_cell_mean() {
        let records = vec![(CellKey::new(0, 1, 2), 0.7)];
        let table = CellTable::collapse(&records, &CensusCounts::uniform(0));
        let cell = table.get(CellKey::new(0, 1, 2));
        assert_eq!(cell.count, 1);
        assert_eq!(cell.mean, Some(0.7));
    }

    #[test]
    fn empty_cell_has_undefined_mean() {
        let table = CellTable::collapse(&sample_records(), &CensusCounts::uniform(1));
        let cell = table.get(CellKey::new(1, 0, 0));
        assert_eq!(cell.count, 0);
        assert_eq!(cell.mean, None);
    }

    #[test]
    fn align_fully_defined_tables() {
        let census = CensusCounts::uniform(1);
        let means: Vec<f64> = (0..N_CELLS).map(|i| i as f64 / 100.0).collect();
        let a = CellTable::from_means(&means, &census);
        let b = CellTable::from_means(&means, &census);
        let aligned = align(&a, &b).unwrap();
        assert_eq!(aligned.keys.len(), N_CELLS);
        assert!(aligned.excluded.is_empty());
    }

    #[test]
    fn align_reports_exclusions() {
        let census = CensusCounts::uniform(1);
        let means: Vec<f64> = (0..N_CELLS).map(|i| i as f64 / 100.0).collect();
        let a = CellTable::from_means(&means, &census);
        // b defined everywhere except six cells
        let records: Vec<(CellKey, f64)> = CellKey::all()
            .skip(6)
            .map(|k| (k, 0.5))
            .collect();
        let b = CellTable::collapse(&records, &census);
        let aligned = align(&a, &b).unwrap();
        assert_eq!(aligned.keys.len(), 90);
        assert_eq!(aligned.excluded.len(), 6);
    }

    #[test]
    fn align_disjoint_definedness_errors() {
        let census = CensusCounts::uniform(1);
        let first: Vec<(CellKey, f64)> = CellKey::all().take(10).map(|k| (k, 0.1)).collect();
        let rest: Vec<(CellKey, f64)> = CellKey::all().skip(10).map(|k| (k, 0.2)).collect();
        let a = CellTable::collapse(&first, &census);
        let b = CellTable::collapse(&rest, &census);
        assert!(matches!(align(&a, &b), Err(Error::NoOverlap)));
    }

    #[test]
    fn key_index_round_trip() {
        for key in CellKey::all() {
            assert_eq!(CellKey::from_index(key.index()), key);
        }
    }
}
