use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::gap::{gap_reduction, GapReport};
use super::train::{prepare_data, train, Dataset};
use super::{HarnessError, RunConfig};
use crate::adapters::{ParamCount, Variant};
use crate::taskgen::TaskKind;
use crate::tok::TableEncoding;

/// One base run configuration crossed with variants and seeds. Each seed
/// sets both the model initialization and the optimizer seed; data are
/// shared by every run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareConfig {
    pub run: RunConfig,
    pub variants: Vec<Variant>,
    pub seeds: Vec<u64>,
}

impl CompareConfig {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        Ok(toml::from_str(&std::fs::read_to_string(path)?)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub mean: f64,
    /// Sample standard deviation (0 for a single value).
    pub spread: f64,
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

impl Stats {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len().max(1) as f64;
        let mean = values.iter().sum::<f64>() / n;
        let spread = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let median = match sorted.len() {
            0 => f64::NAN,
            k if k % 2 == 1 => sorted[k / 2],
            k => 0.5 * (sorted[k / 2 - 1] + sorted[k / 2]),
        };
        Self { mean, spread, median, min: *sorted.first().unwrap_or(&f64::NAN), max: *sorted.last().unwrap_or(&f64::NAN) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub config_hash: String,
    pub best_epoch: usize,
    pub exact_match: f64,
    pub per_kind: BTreeMap<TaskKind, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantRow {
    pub variant: Variant,
    pub param_count: ParamCount,
    pub runs: Vec<RunSummary>,
    pub overall: Stats,
    pub per_kind: BTreeMap<TaskKind, Stats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub variant: Variant,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gap: Option<GapReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub rows: Vec<VariantRow>,
    /// Present when both `lora` and `full-finetune` were run.
    pub gap: Vec<GapRow>,
}

impl ComparisonReport {
    pub fn row(&self, v: Variant) -> Option<&VariantRow> {
        self.rows.iter().find(|r| r.variant == v)
    }

    /// Plain-text table: one line per variant, mean ± spread exact match
    /// per task kind.
    pub fn render(&self) -> String {
        let kinds: Vec<TaskKind> = self.rows.first().map(|r| r.per_kind.keys().copied().collect()).unwrap_or_default();
        let mut out = format!("{:<28} {:>10} {:>9}", "variant", "params", "fraction");
        for k in &kinds {
            write!(out, " {:>18}", k.name()).unwrap();
        }
        writeln!(out, " {:>18}", "overall").unwrap();
        for r in &self.rows {
            write!(out, "{:<28} {:>10} {:>8.4}%", r.variant.name(), r.param_count.count, r.param_count.percent()).unwrap();
            for k in &kinds {
                let s = r.per_kind[k];
                write!(out, " {:>10.3} ± {:<5.3}", s.mean, s.spread).unwrap();
            }
            writeln!(out, " {:>10.3} ± {:<5.3}", r.overall.mean, r.overall.spread).unwrap();
        }
        for g in &self.gap {
            match (&g.gap, &g.note) {
                (Some(gap), _) => writeln!(
                    out,
                    "gap {:<24} remaining {:.4} closed {:.4} ({} used, {} excluded)",
                    g.variant.name(),
                    gap.remaining_gap_fraction,
                    gap.closed_fraction,
                    gap.used,
                    gap.excluded.len()
                )
                .unwrap(),
                (None, Some(note)) => writeln!(out, "gap {:<24} {note}", g.variant.name()).unwrap(),
                (None, None) => {}
            }
        }
        out
    }
}

/// Scores per (seed, task kind), in a fixed order.
fn scores(row: &VariantRow) -> Vec<f64> {
    row.runs.iter().flat_map(|r| r.per_kind.values().copied()).collect()
}

pub fn compare(cfg: &CompareConfig, out_dir: Option<&Path>) -> Result<ComparisonReport, HarnessError> {
    if cfg.variants.is_empty() || cfg.seeds.is_empty() {
        return Err(HarnessError::Config("compare needs at least one variant and one seed".into()));
    }
    let mut datasets: Vec<(TableEncoding, Dataset)> = Vec::new();
    let mut rows = Vec::new();
    for &variant in &cfg.variants {
        let encoding = variant.table_encoding();
        if !datasets.iter().any(|(e, _)| *e == encoding) {
            let mut rc = cfg.run.clone();
            rc.adapter.variant = variant;
            datasets.push((encoding, prepare_data(&rc)?));
        }
        let data = &datasets.iter().find(|(e, _)| *e == encoding).expect("prepared above").1;

        let mut runs = Vec::new();
        let mut param_count = None;
        for &seed in &cfg.seeds {
            let mut rc = cfg.run.clone();
            rc.adapter.variant = variant;
            rc.model.rng_seed = seed;
            rc.optim.seed = seed;
            let dir = out_dir.map(|d| d.join(variant.name()).join(format!("seed-{seed}")));
            let art = train(&rc, data, dir.as_deref())?;
            param_count = Some(art.report.param_count);
            let t = &art.report.test;
            runs.push(RunSummary {
                seed,
                config_hash: art.report.config_hash.clone(),
                best_epoch: art.report.best_epoch,
                exact_match: t.exact_match(),
                per_kind: t.per_kind.iter().map(|(k, b)| (*k, b.exact_match)).collect(),
            });
        }
        let overall = Stats::of(&runs.iter().map(|r| r.exact_match).collect::<Vec<_>>());
        let kinds: Vec<TaskKind> = runs[0].per_kind.keys().copied().collect();
        let per_kind = kinds
            .into_iter()
            .map(|k| (k, Stats::of(&runs.iter().map(|r| r.per_kind[&k]).collect::<Vec<_>>())))
            .collect();
        rows.push(VariantRow { variant, param_count: param_count.expect("at least one seed"), runs, overall, per_kind });
    }

    let mut gap = Vec::new();
    let find = |v: Variant| rows.iter().find(|r| r.variant == v);
    if let (Some(lora), Some(full)) = (find(Variant::Lora), find(Variant::FullFinetune)) {
        let (p_lora, p_full) = (scores(lora), scores(full));
        for r in rows.iter().filter(|r| !matches!(r.variant, Variant::Lora | Variant::FullFinetune)) {
            match gap_reduction(&p_full, &p_lora, &scores(r)) {
                Ok(g) => gap.push(GapRow { variant: r.variant, gap: Some(g), note: None }),
                Err(e) => gap.push(GapRow { variant: r.variant, gap: None, note: Some(e.to_string()) }),
            }
        }
    }
    let report = ComparisonReport { rows, gap };
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("comparison.json"), serde_json::to_string_pretty(&report)?)?;
        std::fs::write(dir.join("comparison.txt"), report.render())?;
    }
    Ok(report)
}
