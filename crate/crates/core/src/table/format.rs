//! Alternative table renderings used by the format and position-string
//! control runs.

use serde::{Deserialize, Serialize};

use super::Table;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RenderFormat {
    Markdown,
    Html,
    Csv,
}

/// Renders `t` with its first row as the header. No index column is emitted.
pub fn serialize_format(t: &Table, fmt: RenderFormat) -> String {
    match fmt {
        RenderFormat::Markdown => markdown(t),
        RenderFormat::Html => html(t),
        RenderFormat::Csv => csv_text(t),
    }
}

/// Prefixes every cell with its 1-based `(row, col)` position string.
pub fn augment_position_strings(t: &Table) -> Table {
    t.map_cells(|i, j, v| format!("({}, {}) {}", i + 1, j + 1, v))
}

fn is_numeric(s: &str) -> bool {
    s.parse::<f64>().is_ok()
}

// Pipe table in the tabulate style: header padded to width+2, left-aligned
// text columns, right-aligned numeric columns, colon markers on the rule.
fn markdown(t: &Table) -> String {
    let rows = t.rows();
    let header = &rows[0];
    let body = &rows[1..];
    let n = t.n_cols();

    let mut widths = Vec::with_capacity(n);
    let mut right = Vec::with_capacity(n);
    for j in 0..n {
        let w = body.iter().map(|r| r[j].chars().count()).max().unwrap_or(0);
        widths.push(w.max(header[j].chars().count() + 2));
        let numeric = body.iter().any(|r| !r[j].is_empty()) && body.iter().all(|r| r[j].is_empty() || is_numeric(&r[j]));
        right.push(numeric);
    }

    let pad = |s: &str, w: usize, right: bool| {
        let fill = " ".repeat(w - s.chars().count());
        if right {
            format!("{fill}{s}")
        } else {
            format!("{s}{fill}")
        }
    };
    let line = |cells: &[String]| {
        let parts: Vec<String> = (0..n).map(|j| format!(" {} ", pad(&cells[j], widths[j], right[j]))).collect();
        format!("|{}|", parts.join("|"))
    };

    let mut out = line(header);
    out.push('\n');
    let rule: Vec<String> = (0..n)
        .map(|j| {
            let dashes = "-".repeat(widths[j] + 1);
            if right[j] {
                format!("{dashes}:")
            } else {
                format!(":{dashes}")
            }
        })
        .collect();
    out.push_str(&format!("|{}|", rule.join("|")));
    for row in body {
        out.push('\n');
        out.push_str(&line(row));
    }
    out
}

fn escape_html(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn html(t: &Table) -> String {
    let mut out = String::from("<table>\n");
    let row_html = |row: &[String]| {
        let mut s = String::from("    <tr>\n");
        for v in row {
            s.push_str(&format!("      <td>{}</td>\n", escape_html(v)));
        }
        s.push_str("    </tr>\n");
        s
    };
    let rows = t.rows();
    out.push_str("  <thead>\n");
    out.push_str(&row_html(&rows[0]));
    out.push_str("  </thead>\n  <tbody>\n");
    for row in &rows[1..] {
        out.push_str(&row_html(row));
    }
    out.push_str("  </tbody>\n</table>");
    out
}

fn csv_text(t: &Table) -> String {
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    for row in t.rows() {
        // writing to an in-memory buffer cannot fail
        w.write_record(row).expect("in-memory csv write");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("csv output is utf-8")
}
