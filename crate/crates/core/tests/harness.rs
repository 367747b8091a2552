use proptest::prelude::*;

use tablelora::adapters::Variant;
use tablelora::harness::{
    compare, evaluate, gap_reduction, greedy_decode, prepare_data, train, CompareConfig, Dataset, RunConfig, TaskSpec,
    CHECKPOINT_DIR, CONFIG_FILE, METRICS_FILE, REPORT_FILE, VOCAB_FILE,
};
use tablelora::nn::{load_checkpoint, loss, Model, ToyModelConfig};
use tablelora::taskgen::{Dims, TaskKind};
use tablelora::tok::Vocab;

fn tiny() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.model = ToyModelConfig { n_layers: 2, d_model: 16, n_heads: 2, d_ff: 32, max_seq_len: 96, ..cfg.model };
    cfg.adapter.rank = 4;
    cfg.adapter.max_rows = 8;
    cfg.adapter.max_cols = 4;
    cfg.data.tasks = vec![
        TaskSpec { kind: TaskKind::CellRetrieval, dims: Dims::fixed(2, 2) },
        TaskSpec { kind: TaskKind::HierRetrieval, dims: Dims::fixed(2, 2) },
    ];
    cfg.data.train = 48;
    cfg.data.val = 8;
    cfg.data.test = 8;
    cfg.optim.epochs = 2;
    cfg.optim.batch_size = 8;
    cfg.optim.lr = 3e-3;
    cfg
}

fn mean_loss(model: &Model<f32>, data: &Dataset) -> f64 {
    data.train.iter().map(|s| loss(&model.logits(&s.input).unwrap(), &s.input).unwrap() as f64).sum::<f64>() / data.train.len() as f64
}

#[test]
fn first_epoch_lowers_the_loss() {
    let mut cfg = tiny();
    cfg.data.tasks.truncate(1);
    cfg.optim.epochs = 1;
    let data = prepare_data(&cfg).unwrap();
    let art = train(&cfg, &data, None).unwrap();
    let init = Model::<f32>::new(art.config.model.clone(), art.config.adapter.clone()).unwrap();
    assert!(mean_loss(&art.model, &data) < mean_loss(&init, &data));
}

#[test]
fn zero_epochs_leave_the_initialization() {
    let mut cfg = tiny();
    cfg.optim.epochs = 0;
    let data = prepare_data(&cfg).unwrap();
    let art = train(&cfg, &data, None).unwrap();
    let init = Model::<f32>::new(art.config.model.clone(), art.config.adapter.clone()).unwrap();
    assert_eq!(art.model, init);
    assert!(art.metrics.is_empty());
}

#[test]
fn run_directory_contents_are_deterministic() {
    let cfg = tiny();
    let data = prepare_data(&cfg).unwrap();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let art = train(&cfg, &data, Some(a.path())).unwrap();
    train(&cfg, &data, Some(b.path())).unwrap();
    for f in [CONFIG_FILE, METRICS_FILE, VOCAB_FILE] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let ckpt = |d: &std::path::Path| std::fs::read(d.join(CHECKPOINT_DIR).join("tensors.bin")).unwrap();
    assert_eq!(ckpt(a.path()), ckpt(b.path()));

    let metrics = std::fs::read_to_string(a.path().join(METRICS_FILE)).unwrap();
    assert_eq!(metrics.lines().count(), cfg.optim.epochs);
    for line in metrics.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["config_hash"], art.report.config_hash.as_str());
    }
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(a.path().join(REPORT_FILE)).unwrap()).unwrap();
    assert_eq!(report["config_hash"], art.report.config_hash.as_str());
    let snapshot = RunConfig::load(&a.path().join(CONFIG_FILE)).unwrap();
    assert_eq!(snapshot.hash().unwrap(), art.report.config_hash);
}

#[test]
fn saved_run_evaluates_like_the_returned_model() {
    let cfg = tiny();
    let data = prepare_data(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let art = train(&cfg, &data, Some(dir.path())).unwrap();
    let (model, manifest) = load_checkpoint::<f32>(&dir.path().join(CHECKPOINT_DIR)).unwrap();
    assert_eq!(manifest.config_hash.as_deref(), Some(art.report.config_hash.as_str()));
    let vocab = Vocab::load(&dir.path().join(VOCAB_FILE)).unwrap();
    let r = evaluate(&model, &vocab, &data.test, &data.options, cfg.optim.max_answer_tokens).unwrap();
    assert_eq!(r, art.report.test);
}

#[test]
fn decoding_ignores_the_reference_answer() {
    let cfg = tiny();
    let data = prepare_data(&cfg).unwrap();
    let art = train(&cfg, &data, None).unwrap();
    let mut altered = data.test.clone();
    for s in &mut altered {
        s.answer = "zzz".into();
    }
    for (a, b) in data.test.iter().zip(&altered) {
        let pa = greedy_decode(&art.model, &data.vocab, &a.table, &a.text, &data.options, 4).unwrap();
        let pb = greedy_decode(&art.model, &data.vocab, &b.table, &b.text, &data.options, 4).unwrap();
        assert_eq!(pa, pb);
    }
}

#[test]
fn report_accounting() {
    let cfg = tiny();
    let data = prepare_data(&cfg).unwrap();
    let r = train(&cfg, &data, None).unwrap().report;
    assert_eq!(r.test.overall.n, 8);
    let weighted: usize = r.test.per_kind.values().map(|b| b.correct).sum();
    assert_eq!(weighted, r.test.overall.correct);
    assert_eq!(r.test.per_depth.keys().copied().collect::<Vec<_>>(), vec![1, 2]);
    assert!((0.0..=1.0).contains(&r.test.exact_match()));
    assert!(r.best_epoch >= 1 && r.best_epoch <= cfg.optim.epochs);
}

#[test]
fn compare_shape_and_duplicate_rows() {
    let mut run = tiny();
    run.data.train = 16;
    run.optim.epochs = 1;
    let cfg = CompareConfig { run, variants: vec![Variant::Lora, Variant::TableLora, Variant::Lora], seeds: vec![0, 1, 2] };
    let dir = tempfile::tempdir().unwrap();
    let report = compare(&cfg, Some(dir.path())).unwrap();
    assert_eq!(report.rows.len(), 3);
    assert_eq!(report.rows[0], report.rows[2]);
    for row in &report.rows {
        assert_eq!(row.runs.len(), 3);
        assert_eq!(row.per_kind.len(), 2);
        let model = Model::<f32>::new(
            ToyModelConfig { vocab_size: 50, ..cfg.run.model.clone() },
            tablelora::adapters::AdapterConfig { variant: row.variant, ..cfg.run.adapter.clone() },
        )
        .unwrap();
        assert_eq!(row.param_count.count, model.param_count().unwrap().count);
    }
    assert!(report.gap.is_empty());
    assert!(dir.path().join("comparison.json").exists());
    assert!(dir.path().join("tablelora/seed-1").join(METRICS_FILE).exists());
    let text = report.render();
    assert!(text.contains("tablelora") && text.contains("cell_retrieval"));
}

#[test]
fn gap_examples() {
    let g = gap_reduction(&[61.62], &[57.06], &[58.56]).unwrap();
    assert!((g.remaining_gap_fraction - 3.06 / 4.56).abs() < 1e-12);
    let full = [0.9, 0.8];
    let lora = [0.5, 0.6];
    assert_eq!(gap_reduction(&full, &lora, &full).unwrap().closed_fraction, 1.0);
    assert_eq!(gap_reduction(&full, &lora, &lora).unwrap().remaining_gap_fraction, 1.0);
    let g = gap_reduction(&[0.5, 0.9], &[0.5, 0.7], &[0.4, 0.8]).unwrap();
    assert_eq!(g.excluded, vec![0]);
    assert_eq!(g.used, 1);
    assert!(gap_reduction(&[0.5], &[0.5], &[0.1]).is_err());
    assert!(gap_reduction(&[0.5], &[0.4, 0.3], &[0.1]).is_err());
}

proptest! {
    #[test]
    fn gap_is_affine_invariant(
        rows in prop::collection::vec((0.0f64..100.0, 0.0f64..100.0, 0.0f64..100.0), 1..8),
        scale in 0.01f64..50.0,
        shift in -100.0f64..100.0,
    ) {
        prop_assume!(rows.iter().all(|r| (r.0 - r.1).abs() > 1e-3));
        let full: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let lora: Vec<f64> = rows.iter().map(|r| r.1).collect();
        let var: Vec<f64> = rows.iter().map(|r| r.2).collect();
        let map = |v: &[f64]| v.iter().map(|x| scale * x + shift).collect::<Vec<_>>();
        let a = gap_reduction(&full, &lora, &var).unwrap();
        let b = gap_reduction(&map(&full), &map(&lora), &map(&var)).unwrap();
        let tol = 1e-6 * (1.0 + a.remaining_gap_fraction.abs());
        prop_assert!((a.remaining_gap_fraction - b.remaining_gap_fraction).abs() < tol);
        prop_assert!((a.closed_fraction - (1.0 - a.remaining_gap_fraction)).abs() < 1e-12);
    }
}

#[test]
fn shipped_configs_parse() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let run = RunConfig::load(&dir.join("retrieval.toml")).unwrap();
    run.validate().unwrap();
    let cmp = CompareConfig::load(&dir.join("compare.toml")).unwrap();
    assert_eq!(cmp.run, run);
    assert_eq!(cmp.variants, vec![Variant::Lora, Variant::TableLora]);
}
