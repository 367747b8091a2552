//! Table data model and ingestion.
//!
//! A [`Table`] is a rectangular grid of trimmed UTF-8 cells. Header rows are
//! ordinary rows: nothing in the model distinguishes them, row 1 is simply the
//! first row of the grid.

mod format;
mod index;
mod special;

pub use format::{augment_position_strings, serialize_format, RenderFormat};
pub use index::{assign_indices, IndexCaps, StructuralIndexMap, TokenRole};
pub use special::{deserialize_special, serialize_special, SpecialToken};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TableError {
    #[error("table is empty")]
    Empty,
    #[error("ragged rows: row {row} has {found} cells, expected {expected}")]
    RaggedRows { row: usize, expected: usize, found: usize },
    #[error("cell ({row}, {col}) contains reserved literal {literal}")]
    ReservedLiteral { row: usize, col: usize, literal: &'static str },
    #[error("malformed serialization at byte {offset}: {reason}")]
    MalformedSerialization { offset: usize, reason: String },
    #[error("structural index ({row}, {col}) exceeds caps ({max_rows}, {max_cols})")]
    IndexOverflow { row: usize, col: usize, max_rows: usize, max_cols: usize },
    #[error("delimited input: {0}")]
    Delimited(String),
}

/// Input layout accepted by [`parse_table`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputFormat {
    Tsv,
    Csv,
}

/// Rectangular grid of string cells, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Table {
    cells: Vec<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    caption: Option<String>,
}

impl Table {
    /// Builds a table from a grid, trimming every cell and enforcing the
    /// rectangular / non-empty / no-reserved-literal invariants.
    pub fn new<S: AsRef<str>>(grid: Vec<Vec<S>>) -> Result<Self, TableError> {
        if grid.is_empty() || grid[0].is_empty() {
            return Err(TableError::Empty);
        }
        let n_cols = grid[0].len();
        let mut cells = Vec::with_capacity(grid.len());
        for (i, row) in grid.into_iter().enumerate() {
            if row.len() != n_cols {
                return Err(TableError::RaggedRows { row: i, expected: n_cols, found: row.len() });
            }
            let mut out = Vec::with_capacity(n_cols);
            for (j, cell) in row.iter().enumerate() {
                let v = cell.as_ref().trim();
                if let Some(lit) = SpecialToken::ALL.iter().map(|s| s.literal()).find(|l| v.contains(l)) {
                    return Err(TableError::ReservedLiteral { row: i, col: j, literal: lit });
                }
                out.push(v.to_string());
            }
            cells.push(out);
        }
        Ok(Self { cells, caption: None })
    }

    pub fn with_caption(mut self, caption: impl Into<String>) -> Self {
        self.caption = Some(caption.into());
        self
    }

    pub fn caption(&self) -> Option<&str> {
        self.caption.as_deref()
    }

    pub fn n_rows(&self) -> usize {
        self.cells.len()
    }

    pub fn n_cols(&self) -> usize {
        self.cells[0].len()
    }

    /// Zero-based cell access.
    pub fn cell(&self, row: usize, col: usize) -> &str {
        &self.cells[row][col]
    }

    pub fn rows(&self) -> &[Vec<String>] {
        &self.cells
    }

    /// Maps every cell through `f(row, col, value)`, keeping the shape.
    /// Used by control transforms, so values are not re-validated or trimmed.
    pub fn map_cells(&self, mut f: impl FnMut(usize, usize, &str) -> String) -> Table {
        let cells = self
            .cells
            .iter()
            .enumerate()
            .map(|(i, row)| row.iter().enumerate().map(|(j, v)| f(i, j, v)).collect())
            .collect();
        Table { cells, caption: self.caption.clone() }
    }

    /// Returns a copy with columns reordered so that new column `k` is old
    /// column `perm[k]`.
    pub fn permute_columns(&self, perm: &[usize]) -> Table {
        assert_eq!(perm.len(), self.n_cols(), "permutation length");
        let cells = self.cells.iter().map(|row| perm.iter().map(|&p| row[p].clone()).collect()).collect();
        Table { cells, caption: self.caption.clone() }
    }
}

/// Parses delimited text into a [`Table`]. Blank lines are skipped and cell
/// whitespace is trimmed.
pub fn parse_table(raw: &str, fmt: InputFormat) -> Result<Table, TableError> {
    if raw.trim().is_empty() {
        return Err(TableError::Empty);
    }
    let grid: Vec<Vec<String>> = match fmt {
        InputFormat::Tsv => raw
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| l.trim_end_matches('\r').split('\t').map(str::to_string).collect())
            .collect(),
        InputFormat::Csv => {
            let mut reader = csv::ReaderBuilder::new()
                .has_headers(false)
                .flexible(true)
                .from_reader(raw.as_bytes());
            let mut grid = Vec::new();
            for record in reader.records() {
                let record = record.map_err(|e| TableError::Delimited(e.to_string()))?;
                if record.iter().all(|c| c.trim().is_empty()) && record.len() <= 1 {
                    continue;
                }
                grid.push(record.iter().map(str::to_string).collect());
            }
            grid
        }
    };
    Table::new(grid)
}
