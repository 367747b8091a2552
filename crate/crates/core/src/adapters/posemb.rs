//! Sinusoidal row/column embeddings for the positional-embedding control.

use ndarray::Array1;

use super::AdapterError;
use crate::nn::Scalar;
use crate::table::IndexCaps;

/// Standard transformer sinusoid of `pos`: even dims `sin(pos / 10000^(2k/d))`,
/// odd dims the matching cosine.
pub fn sinusoid<T: Scalar>(pos: usize, d_model: usize) -> Array1<T> {
    Array1::from_shape_fn(d_model, |i| {
        let k = (i / 2) as f64;
        let angle = pos as f64 / 10000f64.powf(2.0 * k / d_model as f64);
        T::from_f64(if i % 2 == 0 { angle.sin() } else { angle.cos() }).unwrap()
    })
}

/// `sinusoid(i) + sinusoid(j)`, where index 0 on either axis contributes the
/// zero vector.
pub fn sinusoidal_rowcol_embedding<T: Scalar>(
    idx: (usize, usize),
    d_model: usize,
    caps: IndexCaps,
) -> Result<Array1<T>, AdapterError> {
    let (row, col) = idx;
    if row > caps.max_rows || col > caps.max_cols {
        return Err(AdapterError::IndexOverflow { row, col, max_rows: caps.max_rows, max_cols: caps.max_cols });
    }
    let mut v = Array1::zeros(d_model);
    if row > 0 {
        v += &sinusoid::<T>(row, d_model);
    }
    if col > 0 {
        v += &sinusoid::<T>(col, d_model);
    }
    Ok(v)
}
