use ndarray::{Array1, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tablelora::adapters::{
    count_trainable, embed_token, lora2d_forward, lora_forward, select_layers, sinusoid, sinusoidal_rowcol_embedding,
    AdapterConfig, IndexEmbeddings, LayerSpec, LoraParams, Projection, Variant,
};
use tablelora::nn::{Model, ToyModelConfig};
use tablelora::table::{IndexCaps, StructuralIndexMap};
use tablelora::tok::{CELL, ROW};

const D: usize = 6;
const R: usize = 3;

fn rand_mat(rng: &mut ChaCha8Rng, shape: (usize, usize)) -> Array2<f64> {
    Array2::from_shape_simple_fn(shape, || rng.random_range(-1.0..1.0))
}

struct Setup {
    w0: Array2<f64>,
    p: LoraParams<f64>,
    b_tab: Array2<f64>,
    emb: IndexEmbeddings<f64>,
}

fn setup(seed: u64) -> Setup {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Setup {
        w0: rand_mat(&mut rng, (D, D)),
        p: LoraParams { a: rand_mat(&mut rng, (R, D)), b: rand_mat(&mut rng, (D, R)) },
        b_tab: rand_mat(&mut rng, (D, R)),
        emb: IndexEmbeddings { row: rand_mat(&mut rng, (5, R)), col: rand_mat(&mut rng, (4, R)) },
    }
}

fn index_map(pairs: &[(usize, usize)]) -> StructuralIndexMap {
    StructuralIndexMap { rows: pairs.iter().map(|p| p.0).collect(), cols: pairs.iter().map(|p| p.1).collect() }
}

/// The 2D term isolated as output minus the plain LoRA output.
fn two_d_term(s: &Setup, x: &Array2<f64>, idx: &StructuralIndexMap, scale: f64) -> Array2<f64> {
    lora2d_forward(&s.w0, &s.p, &s.b_tab, &s.emb, x, idx, scale, None).unwrap() - lora_forward(&s.w0, &s.p, x, scale, None).unwrap()
}

/// `B_tab·(Emb_row[i] + Emb_col[j])` computed element by element.
fn expected_term(s: &Setup, i: usize, j: usize) -> Vec<f64> {
    (0..D).map(|o| (0..R).map(|k| s.b_tab[[o, k]] * (s.emb.row[[i, k]] + s.emb.col[[j, k]])).sum()).collect()
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

fn pairs() -> impl Strategy<Value = Vec<(usize, usize)>> {
    prop::collection::vec((0usize..5, 0usize..4), 2..8)
}

#[test]
fn hand_arithmetic() {
    let d = 4;
    let w0 = Array2::from_shape_fn((d, d), |(i, j)| (i * d + j) as f64);
    let p = LoraParams { a: Array2::ones((1, d)), b: Array2::ones((d, 1)) };
    let x = Array2::ones((1, d));
    let h = lora_forward(&w0, &p, &x, 1.0, None).unwrap();
    let base = x.dot(&w0.t());
    assert_eq!(h, base + d as f64);
}

#[test]
fn zero_cases() {
    let s = setup(1);
    let x = Array2::zeros((2, D));
    assert!(lora_forward(&s.w0, &s.p, &x, 2.0, None).unwrap().iter().all(|&v| v == 0.0));
    let idx = index_map(&[(3, 1), (3, 2)]);
    let h = lora2d_forward(&s.w0, &s.p, &s.b_tab, &s.emb, &x, &idx, 2.0, None).unwrap();
    assert!(close(h.row(0).as_slice().unwrap(), &expected_term(&s, 3, 1), 1e-12));
    let zero_tab = Array2::zeros((D, R));
    let x = rand_mat(&mut ChaCha8Rng::seed_from_u64(2), (2, D));
    let a = lora2d_forward(&s.w0, &s.p, &zero_tab, &s.emb, &x, &idx, 2.0, None).unwrap();
    assert_eq!(a, lora_forward(&s.w0, &s.p, &x, 2.0, None).unwrap());
}

#[test]
fn neighbouring_columns_differ_by_column_embeddings() {
    let s = setup(3);
    let row: Array1<f64> = rand_mat(&mut ChaCha8Rng::seed_from_u64(4), (1, D)).row(0).to_owned();
    let x = ndarray::stack![ndarray::Axis(0), row, row];
    let h = lora2d_forward(&s.w0, &s.p, &s.b_tab, &s.emb, &x, &index_map(&[(3, 1), (3, 2)]), 2.0, None).unwrap();
    let diff = &h.row(0) - &h.row(1);
    let expected: Vec<f64> = (0..D).map(|o| (0..R).map(|k| s.b_tab[[o, k]] * (s.emb.col[[1, k]] - s.emb.col[[2, k]])).sum()).collect();
    assert!(close(diff.as_slice().unwrap(), &expected, 1e-12));
}

#[test]
fn index_overflow_is_reported() {
    let s = setup(5);
    let x = Array2::zeros((1, D));
    assert!(lora2d_forward(&s.w0, &s.p, &s.b_tab, &s.emb, &x, &index_map(&[(5, 0)]), 1.0, None).is_err());
    assert!(lora_forward(&s.w0, &s.p, &Array2::zeros((1, D + 1)), 1.0, None).is_err());
}

#[test]
fn cell_embedding_ignores_position() {
    let cfg = ToyModelConfig { n_layers: 1, d_model: 8, n_heads: 2, d_ff: 16, vocab_size: 20, max_seq_len: 1000, rng_seed: 3 };
    let mut model = Model::<f64>::new(cfg, AdapterConfig { max_rows: 4, max_cols: 4, ..AdapterConfig::default() }).unwrap();
    for (name, mut t) in model.adapters.named_tensors_mut() {
        if name.starts_with("special_encoder") {
            t.mapv_inplace(|v| v * 1.5 + 0.1);
        }
    }
    let enc = model.adapters.encoder.as_ref().unwrap();
    let a = embed_token(CELL, true, &model.base.tok_emb, Some(enc)).unwrap();
    let b = embed_token(CELL, true, &model.base.tok_emb, Some(enc)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, model.base.tok_emb.row(CELL).to_owned());
    assert_ne!(a, embed_token(ROW, true, &model.base.tok_emb, Some(enc)).unwrap());
    assert_eq!(embed_token(9, false, &model.base.tok_emb, Some(enc)).unwrap(), model.base.tok_emb.row(9).to_owned());
    assert!(embed_token(20, false, &model.base.tok_emb, Some(enc)).is_err());
}

#[test]
fn layer_selection_examples() {
    assert_eq!(select_layers(&LayerSpec::FirstHalf, 32).unwrap(), (0..16).collect::<Vec<_>>());
    assert_eq!(select_layers(&LayerSpec::SecondHalf, 32).unwrap(), (16..32).collect::<Vec<_>>());
    assert_eq!(select_layers(&LayerSpec::Even, 32).unwrap(), (0..32).step_by(2).collect::<Vec<_>>());
    assert_eq!(select_layers(&LayerSpec::Quarter(1), 32).unwrap(), (0..8).collect::<Vec<_>>());
    assert_eq!(select_layers(&LayerSpec::Quarter(2), 32).unwrap(), (8..16).collect::<Vec<_>>());
    assert!(select_layers(&LayerSpec::Quarter(5), 32).is_err());
    assert!(select_layers(&LayerSpec::Explicit(vec![40]), 32).is_err());
}

proptest! {
    #[test]
    fn two_d_term_depends_only_on_indices(seed in any::<u64>(), idx in pairs(), scale in 0.1f64..4.0) {
        let s = setup(seed);
        let m = index_map(&idx);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let x1 = rand_mat(&mut rng, (idx.len(), D));
        let x2 = rand_mat(&mut rng, (idx.len(), D));
        let t1 = two_d_term(&s, &x1, &m, scale);
        let t2 = two_d_term(&s, &x2, &m, scale);
        for (t, &(i, j)) in idx.iter().enumerate() {
            let want = expected_term(&s, i, j);
            prop_assert!(close(t1.row(t).as_slice().unwrap(), &want, 1e-10));
            prop_assert!(close(t2.row(t).as_slice().unwrap(), &want, 1e-10));
        }
    }

    #[test]
    fn same_row_tokens_share_row_contribution(seed in any::<u64>(), row in 0usize..5, cols in prop::collection::vec(0usize..4, 2..6)) {
        let s = setup(seed);
        let idx: Vec<_> = cols.iter().map(|&c| (row, c)).collect();
        let x = Array2::zeros((idx.len(), D));
        let t = two_d_term(&s, &x, &index_map(&idx), 1.0);
        // subtract each token's column part; what remains is the row part
        let col_part = |j: usize| -> Array1<f64> { Array1::from_shape_fn(D, |o| (0..R).map(|k| s.b_tab[[o, k]] * s.emb.col[[j, k]]).sum()) };
        let first = &t.row(0) - &col_part(cols[0]);
        for (k, &c) in cols.iter().enumerate() {
            let rest = &t.row(k) - &col_part(c);
            prop_assert!(close(rest.as_slice().unwrap(), first.as_slice().unwrap(), 1e-12));
        }
    }

    #[test]
    fn non_table_tokens_share_one_vector(seed in any::<u64>(), n in 2usize..7) {
        let s = setup(seed);
        let x = rand_mat(&mut ChaCha8Rng::seed_from_u64(seed), (n, D));
        let t = two_d_term(&s, &x, &StructuralIndexMap::zeros(n), 0.5);
        let want = expected_term(&s, 0, 0);
        for r in 0..n {
            prop_assert!(close(t.row(r).as_slice().unwrap(), &want, 1e-10));
        }
    }

    #[test]
    fn alpha_scales_the_low_rank_term(seed in any::<u64>(), c in 0.1f64..8.0) {
        let s = setup(seed);
        let x = rand_mat(&mut ChaCha8Rng::seed_from_u64(seed), (3, D));
        let base = x.dot(&s.w0.t());
        let cfg = AdapterConfig { rank: R, alpha: 2.0, ..AdapterConfig::default() };
        let scaled = AdapterConfig { alpha: 2.0 * c, ..cfg.clone() };
        let t1 = lora_forward(&s.w0, &s.p, &x, cfg.scale(), None).unwrap() - &base;
        let tc = lora_forward(&s.w0, &s.p, &x, scaled.scale(), None).unwrap() - &base;
        for (a, b) in t1.iter().zip(tc.iter()) {
            prop_assert!((a * c - b).abs() <= 1e-10 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn sinusoids_are_bounded(i in 0usize..600, j in 0usize..40, half in 1usize..32) {
        let d = 2 * half;
        let v: Array1<f64> = sinusoidal_rowcol_embedding((i, j), d, IndexCaps::default()).unwrap();
        prop_assert!(v.iter().all(|x| x.abs() <= 2.0 + 1e-12));
        prop_assert!(v.dot(&v).sqrt() <= (2.0 * d as f64).sqrt() + 1e-9);
        if j == 0 {
            let want: Array1<f64> = if i == 0 { Array1::zeros(d) } else { sinusoid(i, d) };
            prop_assert_eq!(v, want);
        }
    }

    #[test]
    fn count_matches_tensor_enumeration(
        v in 0usize..Variant::ALL.len(),
        rank in 1usize..6,
        layers in 1usize..5,
        spec in prop::sample::select(vec!["all", "even", "odd", "first-half", "second-half"]),
        proj_mask in 1u8..16,
        shared in any::<bool>(),
    ) {
        let projections: Vec<Projection> = [Projection::Query, Projection::Key, Projection::Value, Projection::Output]
            .into_iter().enumerate().filter(|(k, _)| proj_mask & (1 << k) != 0).map(|(_, p)| p).collect();
        let cfg = ToyModelConfig { n_layers: layers, d_model: 8, n_heads: 2, d_ff: 16, vocab_size: 30, max_seq_len: 32, rng_seed: 0 };
        let acfg = AdapterConfig {
            variant: Variant::ALL[v],
            rank,
            projections,
            layer_set: spec.parse().unwrap(),
            max_rows: 7,
            max_cols: 5,
            share_index_embeddings: shared,
            ..AdapterConfig::default()
        };
        prop_assume!(select_layers(&acfg.layer_set, layers).is_ok());
        let mut model = Model::<f64>::new(cfg.clone(), acfg.clone()).unwrap();
        let enumerated: usize = model.trainable_tensors_mut().iter().map(|(_, t)| t.len()).sum();
        let counted = count_trainable(model.dims(), &acfg).unwrap().count;
        prop_assert_eq!(enumerated as u64, counted);
    }
}
