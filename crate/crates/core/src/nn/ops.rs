//! Row-wise kernels with their hand-derived backward passes.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};

use super::Scalar;

pub const LN_EPS: f64 = 1e-5;

pub struct LayerNormCache<T> {
    pub xhat: Array2<T>,
    pub rstd: Array1<T>,
}

pub fn layer_norm<T: Scalar>(x: &Array2<T>, g: &Array1<T>, b: &Array1<T>) -> (Array2<T>, LayerNormCache<T>) {
    let (l, d) = x.dim();
    let n = T::from_usize(d).unwrap();
    let eps = T::from_f64(LN_EPS).unwrap();
    let mut xhat = Array2::zeros((l, d));
    let mut rstd = Array1::zeros(l);
    for t in 0..l {
        let row = x.row(t);
        let mean = row.sum() / n;
        let var = row.fold(T::zero(), |acc, &v| acc + (v - mean) * (v - mean)) / n;
        let r = T::one() / (var + eps).sqrt();
        rstd[t] = r;
        Zip::from(xhat.row_mut(t)).and(&row).for_each(|o, &v| *o = (v - mean) * r);
    }
    let y = &xhat * g + b;
    (y, LayerNormCache { xhat, rstd })
}

/// Returns dx and accumulates dg, db.
pub fn layer_norm_backward<T: Scalar>(
    dy: &Array2<T>,
    g: &Array1<T>,
    cache: &LayerNormCache<T>,
    dg: Option<&mut Array1<T>>,
    db: Option<&mut Array1<T>>,
) -> Array2<T> {
    let (l, d) = dy.dim();
    let n = T::from_usize(d).unwrap();
    if let Some(dg) = dg {
        *dg += &(dy * &cache.xhat).sum_axis(Axis(0));
    }
    if let Some(db) = db {
        *db += &dy.sum_axis(Axis(0));
    }
    let dxhat = dy * g;
    let mut dx = Array2::zeros((l, d));
    for t in 0..l {
        let dh = dxhat.row(t);
        let xh = cache.xhat.row(t);
        let mean_dh = dh.sum() / n;
        let mean_dhx = dh.dot(&xh) / n;
        let r = cache.rstd[t];
        Zip::from(dx.row_mut(t)).and(&dh).and(&xh).for_each(|o, &a, &b| *o = r * (a - mean_dh - b * mean_dhx));
    }
    dx
}

fn gelu_consts<T: Scalar>() -> (T, T) {
    (T::from_f64((2.0 / std::f64::consts::PI).sqrt()).unwrap(), T::from_f64(0.044715).unwrap())
}

/// `0.5·(1 + tanh(z))` written as the logistic `1 / (1 + e^(-2z))`, with
/// `z = c·(x + k·x³)`.
fn gelu_gate<T: Scalar>(x: T, c: T, k: T) -> T {
    let two = T::one() + T::one();
    T::one() / (T::one() + (-two * c * (x + k * x * x * x)).exp())
}

/// tanh-approximated GELU.
pub fn gelu<T: Scalar>(u: &Array2<T>) -> Array2<T> {
    let (c, k) = gelu_consts::<T>();
    u.mapv(|x| x * gelu_gate(x, c, k))
}

pub fn gelu_backward<T: Scalar>(u: &Array2<T>, dy: &Array2<T>) -> Array2<T> {
    let (c, k) = gelu_consts::<T>();
    let two = T::one() + T::one();
    let three = two + T::one();
    let mut out = Array2::zeros(u.dim());
    Zip::from(&mut out).and(u).and(dy).for_each(|o, &x, &g| {
        let s = gelu_gate(x, c, k);
        let d = s + x * s * (T::one() - s) * two * c * (T::one() + three * k * x * x);
        *o = g * d;
    });
    out
}

/// Softmax over the first `t + 1` entries of every row `t` (causal support);
/// entries past the diagonal are zero.
pub fn causal_softmax<T: Scalar>(scores: &mut Array2<T>) {
    let l = scores.nrows();
    for t in 0..l {
        let mut row = scores.row_mut(t);
        let mut m = T::neg_infinity();
        for s in 0..=t {
            if row[s] > m {
                m = row[s];
            }
        }
        let mut sum = T::zero();
        for s in 0..=t {
            let e = if row[s] == T::neg_infinity() { T::zero() } else { (row[s] - m).exp() };
            row[s] = e;
            sum += e;
        }
        for s in 0..=t {
            row[s] /= sum;
        }
        for s in t + 1..row.len() {
            row[s] = T::zero();
        }
    }
}

/// dS from dP for a row-softmax: `P ⊙ (dP − rowsum(dP ⊙ P))`.
pub fn softmax_backward<T: Scalar>(p: ArrayView2<T>, dp: &Array2<T>) -> Array2<T> {
    let mut ds = Array2::zeros(p.dim());
    for t in 0..p.nrows() {
        let pr = p.row(t);
        let dr = dp.row(t);
        let dot = pr.dot(&dr);
        Zip::from(ds.row_mut(t)).and(&pr).and(&dr).for_each(|o, &pv, &dv| *o = pv * (dv - dot));
    }
    ds
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn numeric<F: Fn(&Array2<f64>) -> f64>(f: F, x: &Array2<f64>) -> Array2<f64> {
        let eps = 1e-6;
        let mut g = Array2::zeros(x.dim());
        for idx in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp.as_slice_mut().unwrap()[idx] += eps;
            xm.as_slice_mut().unwrap()[idx] -= eps;
            g.as_slice_mut().unwrap()[idx] = (f(&xp) - f(&xm)) / (2.0 * eps);
        }
        g
    }

    #[test]
    fn layer_norm_matches_finite_differences() {
        let x = array![[0.3, -1.2, 2.0, 0.1], [1.0, 0.5, -0.5, 0.7]];
        let g = array![1.1, 0.9, -0.3, 2.0];
        let b = array![0.1, 0.0, 0.2, -0.1];
        let w = array![[0.5, -1.0, 0.25, 2.0], [1.5, 0.3, -0.7, 0.1]];
        let f = |x: &Array2<f64>| (&layer_norm(x, &g, &b).0 * &w).sum();
        let (_, cache) = layer_norm(&x, &g, &b);
        let dx = layer_norm_backward(&w, &g, &cache, None, None);
        let num = numeric(f, &x);
        for (a, n) in dx.iter().zip(num.iter()) {
            assert!((a - n).abs() < 1e-7, "{a} vs {n}");
        }
    }

    #[test]
    fn gelu_matches_finite_differences() {
        let u = array![[-3.0, -0.5, 0.0, 0.4, 2.5]];
        let w = array![[1.0, 2.0, -1.0, 0.5, 0.3]];
        let f = |u: &Array2<f64>| (&gelu(u) * &w).sum();
        let du = gelu_backward(&u, &w);
        let num = numeric(f, &u);
        for (a, n) in du.iter().zip(num.iter()) {
            assert!((a - n).abs() < 1e-7, "{a} vs {n}");
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut s = array![[1.0, 5.0, 5.0], [0.2, -3.0, 9.0], [1.0, f64::NEG_INFINITY, 0.0]];
        causal_softmax(&mut s);
        for t in 0..3 {
            let sum: f64 = s.row(t).iter().take(t + 1).sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
        assert_eq!(s[[0, 1]], 0.0);
        assert_eq!(s[[2, 1]], 0.0);
    }
}
