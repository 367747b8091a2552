//! Per-token row/column indices.
//!
//! Indices are 1-based; 0 is the "outside the table" sentinel on each axis.
//! `[TAB]` is (0, 0), the k-th `[ROW]` is (k, 0), and a `[CELL]` together
//! with every token of its value carries the cell's (row, col).

use serde::{Deserialize, Serialize};

use super::{SpecialToken, TableError};

/// What a token is, as far as table structure is concerned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TokenRole {
    /// Text outside any table.
    Text,
    Special(SpecialToken),
    /// Part of the value of the most recently opened cell.
    CellValue,
}

/// Largest row / column index an index map may contain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexCaps {
    pub max_rows: usize,
    pub max_cols: usize,
}

impl Default for IndexCaps {
    fn default() -> Self {
        Self { max_rows: 600, max_cols: 40 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StructuralIndexMap {
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
}

impl StructuralIndexMap {
    pub fn zeros(len: usize) -> Self {
        Self { rows: vec![0; len], cols: vec![0; len] }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, t: usize) -> (usize, usize) {
        (self.rows[t], self.cols[t])
    }

    pub fn push(&mut self, row: usize, col: usize) {
        self.rows.push(row);
        self.cols.push(col);
    }

    pub fn extend(&mut self, other: &StructuralIndexMap) {
        self.rows.extend_from_slice(&other.rows);
        self.cols.extend_from_slice(&other.cols);
    }

    /// Cell identity of token `t` if it sits inside a table cell.
    pub fn cell_of(&self, t: usize) -> Option<(usize, usize)> {
        let (r, c) = self.get(t);
        (r > 0 && c > 0).then_some((r, c))
    }
}

/// Assigns (row, col) indices to an annotated token stream.
///
/// A `[TAB]` resets the row counter and each `[ROW]` resets the column
/// counter. Text tokens map to (0, 0) wherever they occur.
pub fn assign_indices(roles: &[TokenRole], caps: IndexCaps) -> Result<StructuralIndexMap, TableError> {
    let mut map = StructuralIndexMap::default();
    let (mut row, mut col) = (0usize, 0usize);
    for role in roles {
        let pair = match role {
            TokenRole::Text => (0, 0),
            TokenRole::Special(SpecialToken::Tab) => {
                row = 0;
                col = 0;
                (0, 0)
            }
            TokenRole::Special(SpecialToken::Row) => {
                row += 1;
                col = 0;
                (row, 0)
            }
            TokenRole::Special(SpecialToken::Cell) => {
                col += 1;
                (row, col)
            }
            TokenRole::CellValue => (row, col),
        };
        if pair.0 > caps.max_rows || pair.1 > caps.max_cols {
            return Err(TableError::IndexOverflow {
                row: pair.0,
                col: pair.1,
                max_rows: caps.max_rows,
                max_cols: caps.max_cols,
            });
        }
        map.push(pair.0, pair.1);
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use SpecialToken::*;
    use TokenRole::*;

    #[test]
    fn text_is_sentinel() {
        let m = assign_indices(&[Text, Text], IndexCaps::default()).unwrap();
        assert_eq!(m.rows, vec![0, 0]);
        assert_eq!(m.cols, vec![0, 0]);
    }

    #[test]
    fn second_row_token() {
        let roles = [Special(Tab), Special(Row), Special(Cell), CellValue, Special(Row)];
        let m = assign_indices(&roles, IndexCaps::default()).unwrap();
        assert_eq!(m.get(4), (2, 0));
        assert_eq!(m.get(0), (0, 0));
        assert_eq!(m.get(2), (1, 1));
        assert_eq!(m.get(3), (1, 1));
    }

    #[test]
    fn overflow() {
        let roles = [Special(Tab), Special(Row), Special(Cell), Special(Cell)];
        let err = assign_indices(&roles, IndexCaps { max_rows: 5, max_cols: 1 }).unwrap_err();
        assert!(matches!(err, TableError::IndexOverflow { row: 1, col: 2, .. }));
    }
}
