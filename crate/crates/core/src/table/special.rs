use serde::{Deserialize, Serialize};

use super::{Table, TableError};

/// Structural delimiter emitted by [`serialize_special`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SpecialToken {
    Tab,
    Row,
    Cell,
}

impl SpecialToken {
    pub const ALL: [SpecialToken; 3] = [SpecialToken::Tab, SpecialToken::Row, SpecialToken::Cell];

    pub fn literal(self) -> &'static str {
        match self {
            SpecialToken::Tab => "[TAB]",
            SpecialToken::Row => "[ROW]",
            SpecialToken::Cell => "[CELL]",
        }
    }

    /// Position of this token inside the special-token encoder table.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_literal(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.literal() == s)
    }

    /// Matches a special literal at the start of `s`.
    pub(crate) fn strip_prefix(s: &str) -> Option<(Self, &str)> {
        Self::ALL.into_iter().find_map(|t| s.strip_prefix(t.literal()).map(|rest| (t, rest)))
    }
}

/// `[TAB]` then per row `[ROW]` and per cell `[CELL]`, with a single space
/// before each non-empty value.
pub fn serialize_special(t: &Table) -> String {
    let mut out = String::from(SpecialToken::Tab.literal());
    for row in t.rows() {
        out.push_str(SpecialToken::Row.literal());
        for value in row {
            out.push_str(SpecialToken::Cell.literal());
            if !value.is_empty() {
                out.push(' ');
                out.push_str(value);
            }
        }
    }
    out
}

/// Inverse of [`serialize_special`].
pub fn deserialize_special(s: &str) -> Result<Table, TableError> {
    let malformed = |offset: usize, reason: &str| TableError::MalformedSerialization {
        offset,
        reason: reason.to_string(),
    };

    let mut rest = s.strip_prefix(SpecialToken::Tab.literal()).ok_or_else(|| malformed(0, "expected [TAB]"))?;
    let mut grid: Vec<Vec<String>> = Vec::new();
    let mut current: Option<Vec<String>> = None;

    while !rest.is_empty() {
        let offset = s.len() - rest.len();
        let (tok, after) = SpecialToken::strip_prefix(rest).ok_or_else(|| match current {
            None => malformed(offset, "expected [ROW]"),
            Some(_) => malformed(offset, "text outside a cell"),
        })?;
        match tok {
            SpecialToken::Tab => return Err(malformed(offset, "nested [TAB]")),
            SpecialToken::Row => {
                if let Some(row) = current.take() {
                    if row.is_empty() {
                        return Err(malformed(offset, "row without cells"));
                    }
                    grid.push(row);
                }
                current = Some(Vec::new());
                rest = after;
            }
            SpecialToken::Cell => {
                let row = current.as_mut().ok_or_else(|| malformed(offset, "[CELL] before [ROW]"))?;
                let end = next_delimiter(after);
                let raw = &after[..end];
                let value = if raw.is_empty() {
                    ""
                } else {
                    raw.strip_prefix(' ').ok_or_else(|| malformed(offset, "missing value separator"))?
                };
                row.push(value.to_string());
                rest = &after[end..];
            }
        }
    }
    match current {
        Some(row) if !row.is_empty() => grid.push(row),
        Some(_) => return Err(malformed(s.len(), "row without cells")),
        None => return Err(malformed(s.len(), "table without rows")),
    }
    Table::new(grid)
}

fn next_delimiter(s: &str) -> usize {
    SpecialToken::ALL.iter().filter_map(|t| s.find(t.literal())).min().unwrap_or(s.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(rows: &[&[&str]]) -> Table {
        Table::new(rows.iter().map(|r| r.to_vec()).collect()).unwrap()
    }

    #[test]
    fn golden_two_by_two() {
        let t = table(&[&["a", "b"], &["c", "d"]]);
        assert_eq!(serialize_special(&t), "[TAB][ROW][CELL] a[CELL] b[ROW][CELL] c[CELL] d");
    }

    #[test]
    fn golden_smallest() {
        assert_eq!(serialize_special(&table(&[&["a"]])), "[TAB][ROW][CELL] a");
    }

    #[test]
    fn golden_empty_cell() {
        let t = table(&[&["low income", ""], &["x", "y"]]);
        assert_eq!(serialize_special(&t), "[TAB][ROW][CELL] low income[CELL][ROW][CELL] x[CELL] y");
    }

    #[test]
    fn deserialize_smallest() {
        assert_eq!(deserialize_special("[TAB][ROW][CELL] a").unwrap(), table(&[&["a"]]));
    }

    #[test]
    fn deserialize_rejects_bad_order() {
        for bad in ["[ROW][TAB]", "", "[TAB]", "[TAB][CELL] a", "[TAB][ROW]", "[TAB][ROW][CELL]x", "[TAB][ROW][ROW][CELL] a", "[TAB] junk[ROW][CELL] a", "[TAB][ROW][CELL] a[TAB]"] {
            assert!(
                matches!(deserialize_special(bad), Err(TableError::MalformedSerialization { .. })),
                "{bad:?} should be malformed"
            );
        }
    }

    #[test]
    fn deserialize_ragged() {
        assert!(matches!(
            deserialize_special("[TAB][ROW][CELL] a[CELL] b[ROW][CELL] c"),
            Err(TableError::RaggedRows { .. })
        ));
    }

    #[test]
    fn deserialize_empty_cells() {
        let t = deserialize_special("[TAB][ROW][CELL][CELL] z").unwrap();
        assert_eq!(t.rows(), &[vec!["", "z"]]);
    }
}
