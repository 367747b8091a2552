use std::collections::HashSet;

use proptest::prelude::*;

use tablelora::table::{IndexCaps, Table};
use tablelora::taskgen::{
    generate, read_jsonl, split, table_from_tsv, table_hash, table_to_tsv, write_jsonl, Dims, SizeRange, TaskKind, TaskSample,
};

fn words(s: &str) -> Vec<&str> {
    s.trim_end_matches(" ?").split(' ').collect()
}

fn col_of(t: &Table, name: &str) -> usize {
    (0..t.n_cols()).find(|&j| t.cell(0, j) == name).expect("column header")
}

fn cell_retrieval(t: &Table, q: &str) -> String {
    // what is the <col> of <row>
    let w = words(q);
    let j = col_of(t, w[3]);
    let i = (1..t.n_rows()).find(|&i| t.cell(i, 0) == w[5]).unwrap();
    t.cell(i, j).to_string()
}

fn same_rowcol(t: &Table, q: &str) -> String {
    // are <x> and <y> in the same <axis>
    let w = words(q);
    let find = |v: &str| {
        let hits: Vec<(usize, usize)> =
            (1..t.n_rows()).flat_map(|i| (1..t.n_cols()).map(move |j| (i, j))).filter(|&(i, j)| t.cell(i, j) == v).collect();
        assert_eq!(hits.len(), 1, "value {v} must be unique");
        hits[0]
    };
    let (a, b) = (find(w[1]), find(w[3]));
    let same = if w[7] == "row" { a.0 == b.0 } else { a.1 == b.1 };
    if same { "yes" } else { "no" }.to_string()
}

fn argmax(t: &Table, q: &str) -> String {
    // which name has the <largest|smallest> <col>
    let w = words(q);
    let j = col_of(t, w[5]);
    let mut best: Option<(i64, usize)> = None;
    for i in 1..t.n_rows() {
        let v: i64 = t.cell(i, j).parse().unwrap();
        let key = if w[4] == "largest" { v } else { -v };
        if best.is_none_or(|(k, _)| key > k) {
            best = Some((key, i));
        }
    }
    t.cell(best.unwrap().1, 0).to_string()
}

/// Scans for the parent label, then the first matching child below it.
fn hier_retrieval(t: &Table, parent: &str, child: &str, col: &str) -> String {
    let j = col_of(t, col);
    let start = (1..t.n_rows()).find(|&i| t.cell(i, 0) == parent).expect("parent row");
    let i = (start + 1..t.n_rows()).find(|&i| t.cell(i, 0) == child).expect("child row");
    t.cell(i, j).to_string()
}

fn hier_from_question(t: &Table, q: &str) -> String {
    // what is the <col> of <child> in <group>
    let w = words(q);
    hier_retrieval(t, w[7], w[5], w[3])
}

fn resolve(s: &TaskSample) -> String {
    match s.task_kind {
        TaskKind::CellRetrieval => cell_retrieval(&s.table, &s.text),
        TaskKind::SameRowcol => same_rowcol(&s.table, &s.text),
        TaskKind::Argmax => argmax(&s.table, &s.text),
        TaskKind::HierRetrieval => hier_from_question(&s.table, &s.text),
    }
}

fn kinds() -> [(TaskKind, Dims); 4] {
    [
        (TaskKind::CellRetrieval, Dims { rows: SizeRange::new(1, 4), cols: SizeRange::new(1, 3), ..Dims::fixed(1, 1) }),
        (TaskKind::SameRowcol, Dims { rows: SizeRange::new(2, 4), cols: SizeRange::new(2, 3), ..Dims::fixed(2, 2) }),
        (TaskKind::Argmax, Dims { rows: SizeRange::new(1, 6), cols: SizeRange::new(1, 4), ..Dims::fixed(1, 1) }),
        (TaskKind::HierRetrieval, Dims::fixed(2, 2).with_groups(SizeRange::new(1, 3))),
    ]
}

#[test]
fn hier_fixture() {
    let t = Table::new(vec![
        vec!["", "male", "female"],
        vec!["15 to 24 years", "", ""],
        vec!["visible minority", "12.5", "14.1"],
        vec!["not a visible minority", "9.8", "10.2"],
        vec!["25 to 54 years", "", ""],
        vec!["visible minority", "30.2", "31.9"],
    ])
    .unwrap();
    assert_eq!(hier_retrieval(&t, "15 to 24 years", "visible minority", "female"), "14.1");
    assert_eq!(hier_retrieval(&t, "25 to 54 years", "visible minority", "female"), "31.9");
}

#[test]
fn every_answer_matches_brute_force() {
    for (kind, dims) in kinds() {
        for seed in 0..5 {
            for s in generate(kind, seed, 200, dims).unwrap() {
                assert_eq!(resolve(&s), s.answer, "{kind} seed {seed}: {}", s.text);
            }
        }
    }
}

#[test]
fn generators_are_deterministic() {
    for (kind, dims) in kinds() {
        assert_eq!(generate(kind, 7, 50, dims).unwrap(), generate(kind, 7, 50, dims).unwrap());
        assert_ne!(generate(kind, 7, 50, dims).unwrap(), generate(kind, 8, 50, dims).unwrap());
    }
}

#[test]
fn body_values_are_unique_within_a_table() {
    for (kind, dims) in kinds() {
        for s in generate(kind, 11, 200, dims).unwrap() {
            let t = &s.table;
            // argmax needs distinct numbers within each column only
            let groups: Vec<Vec<usize>> =
                if kind == TaskKind::Argmax { (1..t.n_cols()).map(|j| vec![j]).collect() } else { vec![(1..t.n_cols()).collect()] };
            for cols in groups {
                let values: Vec<&str> =
                    (1..t.n_rows()).flat_map(|i| cols.iter().map(move |&j| t.cell(i, j))).filter(|v| !v.is_empty()).collect();
                let distinct: HashSet<&str> = values.iter().copied().collect();
                assert_eq!(distinct.len(), values.len(), "{kind}: {}", s.text);
            }
        }
    }
}

#[test]
fn tables_fit_caps_and_meta_is_right() {
    let caps = IndexCaps::default();
    for (kind, dims) in kinds() {
        for s in generate(kind, 3, 100, dims).unwrap() {
            assert!(s.table.n_rows() <= caps.max_rows && s.table.n_cols() <= caps.max_cols);
            assert_eq!((s.meta.n_rows, s.meta.n_cols), (s.table.n_rows(), s.table.n_cols()));
            let depth = if kind == TaskKind::HierRetrieval { 2 } else { 1 };
            assert_eq!(s.meta.header_depth, depth);
        }
    }
}

#[test]
fn hier_parent_rows_are_empty() {
    for s in generate(TaskKind::HierRetrieval, 1, 50, Dims::fixed(2, 3)).unwrap() {
        let rows = s.table.rows();
        for (i, row) in rows.iter().enumerate().skip(1) {
            let is_parent = (i - 1) % 3 == 0;
            assert_eq!(row[1..].iter().all(String::is_empty), is_parent);
        }
    }
}

#[test]
fn same_rowcol_labels_balance() {
    let samples = generate(TaskKind::SameRowcol, 11, 1000, Dims::fixed(3, 3)).unwrap();
    let yes = samples.iter().filter(|s| s.answer == "yes").count();
    assert_eq!((yes, samples.len() - yes), (500, 500));
}

#[test]
fn degenerate_one_by_one() {
    for s in generate(TaskKind::CellRetrieval, 2, 20, Dims::fixed(1, 1)).unwrap() {
        assert_eq!(s.answer, s.table.cell(1, 1));
    }
}

#[test]
fn oversized_dims_rejected() {
    assert!(generate(TaskKind::CellRetrieval, 0, 1, Dims::fixed(50, 3)).is_err());
    assert!(generate(TaskKind::SameRowcol, 0, 1, Dims::fixed(1, 3)).is_err());
    assert!(generate(TaskKind::CellRetrieval, 0, 1, Dims::fixed(5, 3)).is_err());
    assert!(generate(TaskKind::HierRetrieval, 0, 1, Dims::fixed(2, 2).with_groups(SizeRange::fixed(40))).is_err());
}

#[test]
fn split_sizes_and_disjointness() {
    let samples = generate(TaskKind::CellRetrieval, 5, 1000, Dims::fixed(3, 3)).unwrap();
    let s = split(samples.clone(), [0.8, 0.1, 0.1], 9).unwrap();
    assert_eq!((s.train.len(), s.val.len(), s.test.len()), (800, 100, 100));
    let hashes = |v: &[TaskSample]| v.iter().map(|x| table_hash(&x.table)).collect::<HashSet<_>>();
    let (a, b, c) = (hashes(&s.train), hashes(&s.val), hashes(&s.test));
    assert!(a.is_disjoint(&b) && a.is_disjoint(&c) && b.is_disjoint(&c));
    assert_eq!(split(samples.clone(), [0.8, 0.1, 0.1], 9).unwrap(), s);
    assert!(split(samples, [0.8, 0.3, 0.1], 9).is_err());
}

#[test]
fn split_keeps_duplicate_tables_together() {
    let mut samples = generate(TaskKind::CellRetrieval, 5, 100, Dims::fixed(2, 2)).unwrap();
    let dup = samples[..30].to_vec();
    samples.extend(dup);
    let s = split(samples, [0.6, 0.2, 0.2], 1).unwrap();
    let hashes = |v: &[TaskSample]| v.iter().map(|x| table_hash(&x.table)).collect::<HashSet<_>>();
    assert!(hashes(&s.train).is_disjoint(&hashes(&s.test)));
    assert!(hashes(&s.val).is_disjoint(&hashes(&s.test)));
    assert_eq!(s.train.len() + s.val.len() + s.test.len(), 130);
}

#[test]
fn jsonl_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.jsonl");
    let mut samples = Vec::new();
    for (kind, dims) in kinds() {
        samples.extend(generate(kind, 4, 10, dims).unwrap());
    }
    write_jsonl(&samples, &path).unwrap();
    assert_eq!(read_jsonl(&path).unwrap(), samples);
    let first = std::fs::read_to_string(&path).unwrap().lines().next().unwrap().to_string();
    let v: serde_json::Value = serde_json::from_str(&first).unwrap();
    for key in ["table", "question", "answer", "task_kind", "meta"] {
        assert!(v.get(key).is_some(), "{key}");
    }
}

proptest! {
    #[test]
    fn tsv_escaping_round_trips(cells in prop::collection::vec("[a-z\\\\\t\n ]{0,6}", 6)) {
        let g: Vec<Vec<String>> = cells.chunks(3).map(|c| c.iter().map(|s| s.trim().to_string()).collect()).collect();
        let t = Table::new(g).unwrap();
        prop_assert_eq!(table_from_tsv(&table_to_tsv(&t)).unwrap(), t);
    }
}
