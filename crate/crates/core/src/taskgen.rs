//! Seeded synthetic table tasks with unambiguous answers.
//!
//! Every table has a header row (column names) and a header column (row
//! names). Headers and values come from small fixed pools so that train and
//! test share one vocabulary.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::table::{serialize_special, IndexCaps, Table, TableError};

#[derive(Debug, Error)]
pub enum TaskError {
    #[error("dims {rows}×{cols} exceed what the generator supports ({max_rows}×{max_cols})")]
    DimsTooLarge { rows: usize, cols: usize, max_rows: usize, max_cols: usize },
    #[error("invalid dims: {0}")]
    BadDims(String),
    #[error("split ratios must be non-negative and sum to 1, got {0:?}")]
    BadRatios([f64; 3]),
    #[error("unknown task kind {0:?}")]
    UnknownKind(String),
    #[error("line {line}: {reason}")]
    BadRecord { line: usize, reason: String },
    #[error(transparent)]
    Table(#[from] TableError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    CellRetrieval,
    SameRowcol,
    Argmax,
    HierRetrieval,
}

impl TaskKind {
    pub const ALL: [TaskKind; 4] = [TaskKind::CellRetrieval, TaskKind::SameRowcol, TaskKind::Argmax, TaskKind::HierRetrieval];

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::CellRetrieval => "cell_retrieval",
            TaskKind::SameRowcol => "same_rowcol",
            TaskKind::Argmax => "argmax",
            TaskKind::HierRetrieval => "hier_retrieval",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskKind {
    type Err = TaskError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TaskKind::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| TaskError::UnknownKind(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TaskMeta {
    /// Rows of the table grid, header row included.
    pub n_rows: usize,
    /// Columns of the table grid, header column included.
    pub n_cols: usize,
    pub header_depth: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSample {
    pub table: Table,
    pub text: String,
    pub answer: String,
    pub task_kind: TaskKind,
    pub meta: TaskMeta,
}

/// Inclusive size range; each table draws its size uniformly from it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SizeRange {
    pub min: usize,
    pub max: usize,
}

impl SizeRange {
    pub fn fixed(n: usize) -> Self {
        Self { min: n, max: n }
    }

    pub fn new(min: usize, max: usize) -> Self {
        Self { min, max }
    }

    fn draw(self, rng: &mut ChaCha8Rng) -> usize {
        rng.random_range(self.min..=self.max)
    }
}

/// Table size for a generator. `rows` and `cols` count data rows/columns,
/// headers excluded. For hierarchical tables `rows` is the number of child
/// rows per group and `groups` the number of parent rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub rows: SizeRange,
    pub cols: SizeRange,
    #[serde(default = "Dims::default_groups")]
    pub groups: SizeRange,
}

impl Dims {
    pub fn fixed(rows: usize, cols: usize) -> Self {
        Self { rows: SizeRange::fixed(rows), cols: SizeRange::fixed(cols), groups: Self::default_groups() }
    }

    fn default_groups() -> SizeRange {
        SizeRange::fixed(2)
    }

    pub fn with_groups(self, groups: SizeRange) -> Self {
        Self { groups, ..self }
    }
}

const ROW_NAMES: [&str; 6] = ["ann", "bob", "cruz", "dana", "eli", "fay"];
const COL_NAMES: [&str; 6] = ["age", "city", "team", "rank", "color", "pet"];
const GROUP_NAMES: [&str; 4] = ["north", "south", "east", "west"];
const CHILD_NAMES: [&str; 4] = ["male", "female", "young", "old"];
const VALUE_HEADS: [&str; 4] = ["ba", "ko", "mi", "te"];
const VALUE_TAILS: [&str; 3] = ["ru", "zo", "la"];
const MAX_NUMBER: u32 = 99;

fn value_pool() -> Vec<String> {
    let mut pool = Vec::new();
    for a in VALUE_HEADS {
        for b in VALUE_TAILS {
            pool.push(format!("{a}{b}"));
        }
    }
    pool
}

fn check_dims(dims: &Dims, max_rows: usize, max_cols: usize, min_rows: usize, min_cols: usize) -> Result<(), TaskError> {
    let caps = IndexCaps::default();
    for r in [dims.rows, dims.cols, dims.groups] {
        if r.min > r.max {
            return Err(TaskError::BadDims(format!("range {}..={} is empty", r.min, r.max)));
        }
    }
    if dims.rows.max > max_rows.min(caps.max_rows - 1) || dims.cols.max > max_cols.min(caps.max_cols - 1) {
        return Err(TaskError::DimsTooLarge { rows: dims.rows.max, cols: dims.cols.max, max_rows, max_cols });
    }
    if dims.rows.min < min_rows || dims.cols.min < min_cols {
        return Err(TaskError::BadDims(format!("need at least {min_rows} data rows and {min_cols} data columns")));
    }
    Ok(())
}

/// Value cells are drawn without replacement, so the pool bounds the table.
fn check_value_budget(cells: usize, dims: &Dims, pool: usize) -> Result<(), TaskError> {
    if cells > pool {
        return Err(TaskError::BadDims(format!(
            "{cells} value cells ({}x{} in up to {} groups) exceed the {pool} distinct values",
            dims.rows.max, dims.cols.max, dims.groups.max
        )));
    }
    Ok(())
}

fn pick<'a>(rng: &mut ChaCha8Rng, pool: &[&'a str], n: usize) -> Vec<&'a str> {
    pool.choose_multiple(rng, n).copied().collect()
}

fn sample(table: Vec<Vec<String>>, text: String, answer: String, kind: TaskKind, depth: usize) -> Result<TaskSample, TaskError> {
    let table = Table::new(table)?;
    let meta = TaskMeta { n_rows: table.n_rows(), n_cols: table.n_cols(), header_depth: depth };
    Ok(TaskSample { table, text, answer, task_kind: kind, meta })
}

/// Header row plus one row per name, values produced by `cell`.
fn grid(corner: &str, cols: &[&str], rows: &[&str], mut cell: impl FnMut(usize, usize) -> String) -> Vec<Vec<String>> {
    let mut g = vec![std::iter::once(corner.to_string()).chain(cols.iter().map(|c| c.to_string())).collect::<Vec<_>>()];
    for (i, r) in rows.iter().enumerate() {
        let mut row = vec![r.to_string()];
        row.extend((0..cols.len()).map(|j| cell(i, j)));
        g.push(row);
    }
    g
}

pub fn gen_cell_retrieval(seed: u64, n_samples: usize, dims: Dims) -> Result<Vec<TaskSample>, TaskError> {
    check_dims(&dims, ROW_NAMES.len(), COL_NAMES.len(), 1, 1)?;
    let pool = value_pool();
    check_value_budget(dims.rows.max * dims.cols.max, &dims, pool.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_samples)
        .map(|_| {
            let (nr, nc) = (dims.rows.draw(&mut rng), dims.cols.draw(&mut rng));
            let rows = pick(&mut rng, &ROW_NAMES, nr);
            let cols = pick(&mut rng, &COL_NAMES, nc);
            let values: Vec<String> = pool.choose_multiple(&mut rng, nr * nc).cloned().collect();
            let g = grid("name", &cols, &rows, |i, j| values[i * nc + j].clone());
            let (i, j) = (rng.random_range(0..nr), rng.random_range(0..nc));
            let answer = g[i + 1][j + 1].clone();
            let text = format!("what is the {} of {} ?", cols[j], rows[i]);
            sample(g, text, answer, TaskKind::CellRetrieval, 1)
        })
        .collect()
}

/// Labels alternate in blocks of two (one yes, one no, random order), so any
/// even-length prefix is exactly balanced.
pub fn gen_same_rowcol(seed: u64, n_samples: usize, dims: Dims) -> Result<Vec<TaskSample>, TaskError> {
    check_dims(&dims, ROW_NAMES.len(), COL_NAMES.len(), 2, 2)?;
    let pool = value_pool();
    check_value_budget(dims.rows.max * dims.cols.max, &dims, pool.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut block = [true, false];
    let mut out = Vec::with_capacity(n_samples);
    for k in 0..n_samples {
        if k % 2 == 0 {
            block.shuffle(&mut rng);
        }
        let yes = block[k % 2];
        let (nr, nc) = (dims.rows.draw(&mut rng), dims.cols.draw(&mut rng));
        let rows = pick(&mut rng, &ROW_NAMES, nr);
        let cols = pick(&mut rng, &COL_NAMES, nc);
        let values: Vec<String> = pool.choose_multiple(&mut rng, nr * nc).cloned().collect();
        let g = grid("name", &cols, &rows, |i, j| values[i * nc + j].clone());
        let by_row = rng.random_bool(0.5);
        let (a, b) = match (by_row, yes) {
            (true, true) => {
                let i = rng.random_range(0..nr);
                let js = rand::seq::index::sample(&mut rng, nc, 2);
                ((i, js.index(0)), (i, js.index(1)))
            }
            (false, true) => {
                let j = rng.random_range(0..nc);
                let is = rand::seq::index::sample(&mut rng, nr, 2);
                ((is.index(0), j), (is.index(1), j))
            }
            (true, false) => {
                let is = rand::seq::index::sample(&mut rng, nr, 2);
                ((is.index(0), rng.random_range(0..nc)), (is.index(1), rng.random_range(0..nc)))
            }
            (false, false) => {
                let js = rand::seq::index::sample(&mut rng, nc, 2);
                ((rng.random_range(0..nr), js.index(0)), (rng.random_range(0..nr), js.index(1)))
            }
        };
        let axis = if by_row { "row" } else { "column" };
        let text = format!("are {} and {} in the same {axis} ?", g[a.0 + 1][a.1 + 1], g[b.0 + 1][b.1 + 1]);
        let answer = if yes { "yes" } else { "no" }.to_string();
        out.push(sample(g, text, answer, TaskKind::SameRowcol, 1)?);
    }
    Ok(out)
}

/// Every column holds distinct integers; half the questions ask for the
/// largest entry and half for the smallest.
pub fn gen_argmax(seed: u64, n_samples: usize, dims: Dims) -> Result<Vec<TaskSample>, TaskError> {
    check_dims(&dims, ROW_NAMES.len(), COL_NAMES.len(), 1, 1)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_samples)
        .map(|_| {
            let (nr, nc) = (dims.rows.draw(&mut rng), dims.cols.draw(&mut rng));
            let rows = pick(&mut rng, &ROW_NAMES, nr);
            let cols = pick(&mut rng, &COL_NAMES, nc);
            let columns: Vec<Vec<u32>> = (0..nc)
                .map(|_| rand::seq::index::sample(&mut rng, MAX_NUMBER as usize, nr).iter().map(|v| v as u32 + 1).collect())
                .collect();
            let g = grid("name", &cols, &rows, |i, j| columns[j][i].to_string());
            let j = rng.random_range(0..nc);
            let largest = rng.random_bool(0.5);
            let col = &columns[j];
            let best = (0..nr).max_by_key(|&i| if largest { col[i] as i64 } else { -(col[i] as i64) }).unwrap();
            let word = if largest { "largest" } else { "smallest" };
            let text = format!("which name has the {word} {} ?", cols[j]);
            sample(g, text, rows[best].to_string(), TaskKind::Argmax, 1)
        })
        .collect()
}

/// Two-level left header: each group label sits on its own row with empty
/// value cells, followed by its child rows. Child labels repeat across
/// groups, so the group is needed to resolve the question.
pub fn gen_hier_retrieval(seed: u64, n_samples: usize, dims: Dims) -> Result<Vec<TaskSample>, TaskError> {
    check_dims(&dims, CHILD_NAMES.len(), COL_NAMES.len(), 1, 1)?;
    if dims.groups.min < 1 || dims.groups.max > GROUP_NAMES.len() {
        return Err(TaskError::DimsTooLarge {
            rows: dims.groups.max * (dims.rows.max + 1),
            cols: dims.cols.max,
            max_rows: GROUP_NAMES.len() * (CHILD_NAMES.len() + 1),
            max_cols: COL_NAMES.len(),
        });
    }
    let pool = value_pool();
    check_value_budget(dims.groups.max * dims.rows.max * dims.cols.max, &dims, pool.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_samples)
        .map(|_| {
            let (ng, nr, nc) = (dims.groups.draw(&mut rng), dims.rows.draw(&mut rng), dims.cols.draw(&mut rng));
            let groups = pick(&mut rng, &GROUP_NAMES, ng);
            let children = pick(&mut rng, &CHILD_NAMES, nr);
            let cols = pick(&mut rng, &COL_NAMES, nc);
            let mut g = grid("group", &cols, &[], |_, _| String::new());
            let (gi, ci, j) = (rng.random_range(0..ng), rng.random_range(0..nr), rng.random_range(0..nc));
            let mut values = pool.choose_multiple(&mut rng, ng * nr * nc).cloned();
            let mut answer = String::new();
            for (a, group) in groups.iter().enumerate() {
                let mut parent = vec![group.to_string()];
                parent.extend(std::iter::repeat_n(String::new(), nc));
                g.push(parent);
                for (b, child) in children.iter().enumerate() {
                    let mut row = vec![child.to_string()];
                    row.extend(values.by_ref().take(nc));
                    if (a, b) == (gi, ci) {
                        answer = row[j + 1].clone();
                    }
                    g.push(row);
                }
            }
            let text = format!("what is the {} of {} in {} ?", cols[j], children[ci], groups[gi]);
            sample(g, text, answer, TaskKind::HierRetrieval, 2)
        })
        .collect()
}

pub fn generate(kind: TaskKind, seed: u64, n_samples: usize, dims: Dims) -> Result<Vec<TaskSample>, TaskError> {
    match kind {
        TaskKind::CellRetrieval => gen_cell_retrieval(seed, n_samples, dims),
        TaskKind::SameRowcol => gen_same_rowcol(seed, n_samples, dims),
        TaskKind::Argmax => gen_argmax(seed, n_samples, dims),
        TaskKind::HierRetrieval => gen_hier_retrieval(seed, n_samples, dims),
    }
}

/// Hex SHA-256 of the table's special-token serialization.
pub fn table_hash(t: &Table) -> String {
    hex::encode(Sha256::digest(serialize_special(t).as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<TaskSample>,
    pub val: Vec<TaskSample>,
    pub test: Vec<TaskSample>,
}

/// Seeded shuffle split. Samples sharing a table always land in the same
/// split; split sizes hit `round(ratio * n)` whenever grouping allows.
pub fn split(samples: Vec<TaskSample>, ratios: [f64; 3], seed: u64) -> Result<Split, TaskError> {
    let sum: f64 = ratios.iter().sum();
    if ratios.iter().any(|r| *r < 0.0 || !r.is_finite()) || (sum - 1.0).abs() > 1e-9 {
        return Err(TaskError::BadRatios(ratios));
    }
    let n = samples.len();
    let n_train = (ratios[0] * n as f64).round() as usize;
    let n_val = (ratios[1] * n as f64).round() as usize;

    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Vec<TaskSample>> = HashMap::new();
    for s in samples {
        let h = table_hash(&s.table);
        if !groups.contains_key(&h) {
            order.push(h.clone());
        }
        groups.entry(h).or_default().push(s);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let mut out = Split::default();
    for h in order {
        let g = groups.remove(&h).expect("group exists");
        if out.train.len() + g.len() <= n_train {
            out.train.extend(g);
        } else if out.val.len() + g.len() <= n_val {
            out.val.extend(g);
        } else {
            out.test.extend(g);
        }
    }
    Ok(out)
}

fn escape(cell: &str) -> String {
    cell.replace('\\', "\\\\").replace('\t', "\\t").replace('\n', "\\n")
}

fn unescape(cell: &str) -> String {
    let mut out = String::with_capacity(cell.len());
    let mut chars = cell.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            match chars.next() {
                Some('t') => out.push('\t'),
                Some('n') => out.push('\n'),
                Some(other) => out.push(other),
                None => out.push('\\'),
            }
        } else {
            out.push(c);
        }
    }
    out
}

/// Tab-separated rows joined by newlines, with `\\`, `\t`, `\n` escaped.
pub fn table_to_tsv(t: &Table) -> String {
    t.rows().iter().map(|r| r.iter().map(|c| escape(c)).collect::<Vec<_>>().join("\t")).collect::<Vec<_>>().join("\n")
}

pub fn table_from_tsv(s: &str) -> Result<Table, TaskError> {
    let grid: Vec<Vec<String>> = s.split('\n').map(|line| line.split('\t').map(unescape).collect()).collect();
    Ok(Table::new(grid)?)
}

#[derive(Serialize, Deserialize)]
struct Record {
    table: String,
    question: String,
    answer: String,
    task_kind: TaskKind,
    meta: TaskMeta,
}

pub fn write_jsonl(samples: &[TaskSample], path: &Path) -> Result<(), TaskError> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    for s in samples {
        let rec = Record {
            table: table_to_tsv(&s.table),
            question: s.text.clone(),
            answer: s.answer.clone(),
            task_kind: s.task_kind,
            meta: s.meta,
        };
        serde_json::to_writer(&mut f, &rec)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_jsonl(path: &Path) -> Result<Vec<TaskSample>, TaskError> {
    let f = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in f.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| TaskError::BadRecord { line: i + 1, reason: e.to_string() })?;
        out.push(TaskSample {
            table: table_from_tsv(&rec.table)?,
            text: rec.question,
            answer: rec.answer,
            task_kind: rec.task_kind,
            meta: rec.meta,
        });
    }
    Ok(out)
}
