//! LoRA and 2D LoRA on token matrices (one row per token).
//!
//! For a frozen `W0` (d_out × d_in) the adapted projection is
//!
//! ```text
//! h = W0·x + (alpha/r)·B·A·dropout(x) + B_tab·(Emb_row[i] + Emb_col[j])
//! ```
//!
//! where (i, j) are the token's structural indices. The 2D term depends on
//! the indices only and is never dropped out.

use ndarray::{Array2, Axis};

use super::{AdapterError, Projection};
use crate::nn::Scalar;
use crate::table::StructuralIndexMap;

#[derive(Debug, Clone, PartialEq)]
pub struct LoraParams<T> {
    /// r × d_in
    pub a: Array2<T>,
    /// d_out × r
    pub b: Array2<T>,
}

impl<T: Scalar> LoraParams<T> {
    pub fn rank(&self) -> usize {
        self.a.nrows()
    }
}

/// Row and column index embeddings; row 0 of each table is the sentinel.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexEmbeddings<T> {
    /// (max_rows + 1) × r
    pub row: Array2<T>,
    /// (max_cols + 1) × r
    pub col: Array2<T>,
}

impl<T: Scalar> IndexEmbeddings<T> {
    fn check(&self, idx: &StructuralIndexMap) -> Result<(), AdapterError> {
        let (max_rows, max_cols) = (self.row.nrows() - 1, self.col.nrows() - 1);
        for t in 0..idx.len() {
            let (row, col) = idx.get(t);
            if row > max_rows || col > max_cols {
                return Err(AdapterError::IndexOverflow { row, col, max_rows, max_cols });
            }
        }
        Ok(())
    }

    /// `Emb_row[i_t] + Emb_col[j_t]` for every token, L × r.
    pub fn lookup(&self, idx: &StructuralIndexMap) -> Array2<T> {
        let r = self.row.ncols();
        let mut e = Array2::zeros((idx.len(), r));
        for (t, mut out) in e.axis_iter_mut(Axis(0)).enumerate() {
            let (i, j) = idx.get(t);
            out.assign(&(&self.row.row(i) + &self.col.row(j)));
        }
        e
    }

    fn scatter_add(&mut self, idx: &StructuralIndexMap, de: &Array2<T>) {
        for (t, d) in de.axis_iter(Axis(0)).enumerate() {
            let (i, j) = idx.get(t);
            let mut r = self.row.row_mut(i);
            r += &d;
            let mut c = self.col.row_mut(j);
            c += &d;
        }
    }
}

/// Adapter attached to one projection of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjAdapter<T> {
    pub proj: Projection,
    pub lora: LoraParams<T>,
    /// d_out × r, present on layers carrying the 2D term.
    pub b_tab: Option<Array2<T>>,
    /// Per-projection index embeddings when they are not shared in the layer.
    pub own_emb: Option<IndexEmbeddings<T>>,
}

fn check_shapes<T: Scalar>(w0: &Array2<T>, p: &LoraParams<T>, x: &Array2<T>) -> Result<(), AdapterError> {
    let (d_out, d_in) = w0.dim();
    if x.ncols() != d_in || p.a.ncols() != d_in || p.b.nrows() != d_out || p.a.nrows() != p.b.ncols() {
        return Err(AdapterError::ShapeMismatch(format!(
            "W0 {:?}, A {:?}, B {:?}, x {:?}",
            w0.dim(),
            p.a.dim(),
            p.b.dim(),
            x.dim()
        )));
    }
    Ok(())
}

/// `h = x·W0ᵀ + scale·(dropout(x)·Aᵀ)·Bᵀ`. `dropout_mask` holds the
/// already-rescaled keep mask in training mode and is `None` otherwise.
pub fn lora_forward<T: Scalar>(
    w0: &Array2<T>,
    p: &LoraParams<T>,
    x: &Array2<T>,
    scale: T,
    dropout_mask: Option<&Array2<T>>,
) -> Result<Array2<T>, AdapterError> {
    check_shapes(w0, p, x)?;
    let xd = match dropout_mask {
        Some(m) => x * m,
        None => x.clone(),
    };
    Ok(x.dot(&w0.t()) + xd.dot(&p.a.t()).dot(&p.b.t()) * scale)
}

/// LoRA plus the index-only 2D term `B_tab·(Emb_row[i] + Emb_col[j])`.
#[allow(clippy::too_many_arguments)]
pub fn lora2d_forward<T: Scalar>(
    w0: &Array2<T>,
    p: &LoraParams<T>,
    b_tab: &Array2<T>,
    emb: &IndexEmbeddings<T>,
    x: &Array2<T>,
    idx: &StructuralIndexMap,
    scale: T,
    dropout_mask: Option<&Array2<T>>,
) -> Result<Array2<T>, AdapterError> {
    emb.check(idx)?;
    if idx.len() != x.nrows() || b_tab.dim() != p.b.dim() {
        return Err(AdapterError::ShapeMismatch(format!(
            "index map {} vs {} tokens, B_tab {:?} vs B {:?}",
            idx.len(),
            x.nrows(),
            b_tab.dim(),
            p.b.dim()
        )));
    }
    Ok(lora_forward(w0, p, x, scale, dropout_mask)? + emb.lookup(idx).dot(&b_tab.t()))
}

pub(crate) struct ProjCache<T> {
    x_drop: Option<Array2<T>>,
    u: Array2<T>,
    e: Option<Array2<T>>,
}

pub(crate) struct ProjGrads<'a, T> {
    pub lora: &'a mut LoraParams<T>,
    pub b_tab: Option<&'a mut Array2<T>>,
    pub emb: Option<&'a mut IndexEmbeddings<T>>,
}

/// Forward through `W0` plus whatever adapter is attached, keeping what the
/// backward pass needs. `emb` is the index-embedding pair this projection
/// reads (shared or its own).
pub(crate) fn adapted_forward<T: Scalar>(
    w0: &Array2<T>,
    adapter: Option<&ProjAdapter<T>>,
    emb: Option<&IndexEmbeddings<T>>,
    x: &Array2<T>,
    idx: &StructuralIndexMap,
    scale: T,
    dropout_mask: Option<&Array2<T>>,
) -> (Array2<T>, Option<ProjCache<T>>) {
    let mut h = x.dot(&w0.t());
    let Some(ad) = adapter else {
        return (h, None);
    };
    let x_drop = dropout_mask.map(|m| x * m);
    let u = x_drop.as_ref().unwrap_or(x).dot(&ad.lora.a.t());
    h.scaled_add(scale, &u.dot(&ad.lora.b.t()));
    let e = match (&ad.b_tab, emb) {
        (Some(bt), Some(emb)) => {
            let e = emb.lookup(idx);
            h += &e.dot(&bt.t());
            Some(e)
        }
        _ => None,
    };
    (h, Some(ProjCache { x_drop, u, e }))
}

/// Backward of [`adapted_forward`]: accumulates adapter gradients (and
/// `dW0` when the base is trainable) and returns dx.
#[allow(clippy::too_many_arguments)]
pub(crate) fn adapted_backward<T: Scalar>(
    dh: &Array2<T>,
    x: &Array2<T>,
    w0: &Array2<T>,
    adapter: Option<&ProjAdapter<T>>,
    cache: Option<&ProjCache<T>>,
    idx: &StructuralIndexMap,
    scale: T,
    dropout_mask: Option<&Array2<T>>,
    dw0: Option<&mut Array2<T>>,
    grads: Option<ProjGrads<'_, T>>,
) -> Array2<T> {
    let mut dx = dh.dot(w0);
    if let Some(dw0) = dw0 {
        *dw0 += &dh.t().dot(x);
    }
    let (Some(ad), Some(cache), Some(g)) = (adapter, cache, grads) else {
        return dx;
    };
    // LoRA path
    g.lora.b.scaled_add(scale, &dh.t().dot(&cache.u));
    let du = dh.dot(&ad.lora.b) * scale;
    g.lora.a += &du.t().dot(cache.x_drop.as_ref().unwrap_or(x));
    let mut dxd = du.dot(&ad.lora.a);
    if let Some(m) = dropout_mask {
        dxd *= m;
    }
    dx += &dxd;
    // 2D path
    if let (Some(e), Some(bt), Some(gbt)) = (&cache.e, &ad.b_tab, g.b_tab) {
        *gbt += &dh.t().dot(e);
        if let Some(gemb) = g.emb {
            gemb.scatter_add(idx, &dh.dot(bt));
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    fn params(d_in: usize, d_out: usize, r: usize, seed: u64) -> LoraParams<f64> {
        let mut s = seed;
        let mut next = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 33) as f64 / (1u64 << 31) as f64) - 0.5
        };
        LoraParams {
            a: Array2::from_shape_fn((r, d_in), |_| next()),
            b: Array2::from_shape_fn((d_out, r), |_| next()),
        }
    }

    #[test]
    fn zero_b_is_inert() {
        let w0 = array![[1.0, 2.0], [3.0, 4.0], [0.5, -1.0]];
        let mut p = params(2, 3, 2, 1);
        p.b.fill(0.0);
        let x = array![[0.3, -0.7]];
        let h = lora_forward(&w0, &p, &x, 2.0, None).unwrap();
        assert_eq!(h, x.dot(&w0.t()));
    }

    #[test]
    fn zero_input_gives_zero() {
        let w0 = array![[1.0, 2.0], [3.0, 4.0]];
        let p = params(2, 2, 1, 7);
        let h = lora_forward(&w0, &p, &Array2::zeros((1, 2)), 2.0, None).unwrap();
        assert!(h.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rank_one_ones() {
        // r=1, alpha=1: h = W0·x + d·ones
        let d = 4;
        let w0 = Array2::from_shape_fn((d, d), |(i, j)| (i * d + j) as f64 * 0.1);
        let p = LoraParams { a: Array2::ones((1, d)), b: Array2::ones((d, 1)) };
        let x = Array2::ones((1, d));
        let h = lora_forward(&w0, &p, &x, 1.0, None).unwrap();
        let expected = x.dot(&w0.t()) + d as f64;
        assert_eq!(h, expected);
    }

    #[test]
    fn shape_mismatch() {
        let w0 = Array2::<f64>::zeros((3, 2));
        let p = params(3, 3, 1, 2);
        assert!(matches!(lora_forward(&w0, &p, &Array2::zeros((1, 2)), 1.0, None), Err(AdapterError::ShapeMismatch(_))));
    }

    fn embeddings(max_rows: usize, max_cols: usize, r: usize) -> IndexEmbeddings<f64> {
        IndexEmbeddings {
            row: Array2::from_shape_fn((max_rows + 1, r), |(i, k)| (i as f64 + 1.0) * 0.3 - k as f64 * 0.2),
            col: Array2::from_shape_fn((max_cols + 1, r), |(j, k)| (j as f64 - 1.5) * 0.7 + k as f64 * 0.11),
        }
    }

    #[test]
    fn zero_b_tab_matches_lora() {
        let w0 = array![[1.0, 0.5], [-0.3, 2.0]];
        let p = params(2, 2, 2, 3);
        let emb = embeddings(4, 3, 2);
        let idx = StructuralIndexMap { rows: vec![0, 2], cols: vec![0, 3] };
        let x = array![[0.1, 0.2], [0.3, -0.4]];
        let a = lora2d_forward(&w0, &p, &Array2::zeros((2, 2)), &emb, &x, &idx, 2.0, None).unwrap();
        assert_eq!(a, lora_forward(&w0, &p, &x, 2.0, None).unwrap());
    }

    #[test]
    fn zero_input_leaves_index_term() {
        let w0 = array![[1.0, 0.5], [-0.3, 2.0]];
        let p = params(2, 2, 2, 5);
        let bt = array![[0.2, -1.0], [0.7, 0.4]];
        let emb = embeddings(4, 3, 2);
        let idx = StructuralIndexMap { rows: vec![3], cols: vec![1] };
        let h = lora2d_forward(&w0, &p, &bt, &emb, &Array2::zeros((1, 2)), &idx, 2.0, None).unwrap();
        let e = &emb.row.row(3) + &emb.col.row(1);
        let expected = bt.dot(&e);
        for k in 0..2 {
            assert!((h[[0, k]] - expected[k]).abs() < 1e-15);
        }
    }

    #[test]
    fn column_difference() {
        let w0 = array![[1.0, 0.5, 0.0], [-0.3, 2.0, 1.0]];
        let p = params(3, 2, 2, 9);
        let bt = array![[0.2, -1.0], [0.7, 0.4]];
        let emb = embeddings(4, 3, 2);
        let x = array![[0.5, -0.1, 0.8], [0.5, -0.1, 0.8]];
        let idx = StructuralIndexMap { rows: vec![3, 3], cols: vec![1, 2] };
        let h = lora2d_forward(&w0, &p, &bt, &emb, &x, &idx, 2.0, None).unwrap();
        let expected = bt.dot(&(&emb.col.row(1) - &emb.col.row(2)));
        for k in 0..2 {
            assert!((h[[0, k]] - h[[1, k]] - expected[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn index_overflow() {
        let w0 = Array2::<f64>::eye(2);
        let p = params(2, 2, 2, 1);
        let emb = embeddings(2, 2, 2);
        let idx = StructuralIndexMap { rows: vec![3], cols: vec![0] };
        let err = lora2d_forward(&w0, &p, &Array2::zeros((2, 2)), &emb, &Array2::zeros((1, 2)), &idx, 1.0, None);
        assert!(matches!(err, Err(AdapterError::IndexOverflow { row: 3, .. })));
    }
}
