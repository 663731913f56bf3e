use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

/// Tolerance for symmetry checks on ingested matrices.
pub const SYMMETRY_TOL: f64 = 1e-9;

/// Number of distinct off-diagonal connections for `r` ROIs.
pub fn n_edges(r: usize) -> usize {
    r * r.saturating_sub(1) / 2
}

/// Row-major position of connection `(i, j)`, `i < j`, in the upper-triangle
/// vector.
pub fn edge_index(i: usize, j: usize, r: usize) -> usize {
    debug_assert!(i < j && j < r);
    i * r - i * (i + 1) / 2 + (j - i - 1)
}

/// All `(i, j)` pairs with `i < j` in vectorization order.
pub fn edge_pairs(r: usize) -> Vec<(usize, usize)> {
    (0..r).flat_map(|i| ((i + 1)..r).map(move |j| (i, j))).collect()
}

/// Symmetric functional-connectivity matrix with a zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct FcMatrix(Array2<f64>);

impl FcMatrix {
    /// Validates squareness, finiteness and symmetry, then zeroes the
    /// diagonal and copies the upper triangle onto the lower one.
    pub fn new(values: Array2<f64>) -> Result<Self> {
        let (rows, cols) = values.dim();
        if rows != cols {
            return Err(Error::Shape(format!("FC matrix must be square, got {rows}x{cols}")));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidMatrix(format!("non-finite entry {v}")));
        }
        for i in 0..rows {
            for j in (i + 1)..rows {
                let d = (values[[i, j]] - values[[j, i]]).abs();
                if d > SYMMETRY_TOL {
                    return Err(Error::InvalidMatrix(format!(
                        "asymmetric at ({i},{j}): |difference| = {d:e}"
                    )));
                }
            }
        }
        let mut m = values;
        for i in 0..rows {
            m[[i, i]] = 0.0;
            for j in (i + 1)..rows {
                m[[j, i]] = m[[i, j]];
            }
        }
        Ok(FcMatrix(m))
    }

    /// Like [`FcMatrix::new`] but clamps entries into `[-1, 1]`, returning the
    /// number of clamped entries alongside the matrix.
    pub fn from_ingested(values: Array2<f64>) -> Result<(Self, usize)> {
        let mut m = Self::new(values)?;
        let mut clamped = 0;
        m.0.mapv_inplace(|v| {
            if v.abs() > 1.0 {
                clamped += 1;
                v.clamp(-1.0, 1.0)
            } else {
                v
            }
        });
        Ok((m, clamped))
    }

    pub fn zeros(r: usize) -> Self {
        FcMatrix(Array2::zeros((r, r)))
    }

    /// Builds the matrix from an upper-triangle vector.
    pub fn from_upper(v: &[f64], r: usize) -> Result<Self> {
        devectorize_symmetric(v, r).map(FcMatrix)
    }

    pub fn r(&self) -> usize {
        self.0.nrows()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }

    pub fn upper(&self) -> Vec<f64> {
        vectorize_upper(self)
    }
}

/// Pearson correlation between all pairs of columns of a T×R time-series
/// matrix, with the diagonal set to zero.
pub fn pearson_fc(timeseries: ArrayView2<'_, f64>) -> Result<FcMatrix> {
    let (t, r) = timeseries.dim();
    if t < 3 {
        return Err(Error::Shape(format!("need at least 3 time points, got {t}")));
    }
    let mut centered = timeseries.to_owned();
    let mut norms = Vec::with_capacity(r);
    for (c, mut col) in centered.columns_mut().into_iter().enumerate() {
        let mean = col.sum() / t as f64;
        col.mapv_inplace(|v| v - mean);
        let ss = col.dot(&col);
        if ss <= 0.0 || !ss.is_finite() {
            return Err(Error::ConstantSeries(c));
        }
        norms.push(ss.sqrt());
    }
    let mut m = Array2::zeros((r, r));
    for i in 0..r {
        for j in (i + 1)..r {
            let v = centered.column(i).dot(&centered.column(j)) / (norms[i] * norms[j]);
            let v = v.clamp(-1.0, 1.0);
            m[[i, j]] = v;
            m[[j, i]] = v;
        }
    }
    Ok(FcMatrix(m))
}

/// Upper triangle (excluding the diagonal) in row-major pair order.
pub fn vectorize_upper(fc: &FcMatrix) -> Vec<f64> {
    upper_of(fc.values().view())
}

/// Upper triangle of any square matrix, same order as [`vectorize_upper`].
pub fn upper_of(m: ArrayView2<'_, f64>) -> Vec<f64> {
    let r = m.nrows();
    let mut out = Vec::with_capacity(n_edges(r));
    for i in 0..r {
        for j in (i + 1)..r {
            out.push(m[[i, j]]);
        }
    }
    out
}

/// Inverse of [`vectorize_upper`]: symmetric, zero diagonal.
pub fn devectorize_symmetric(v: &[f64], r: usize) -> Result<Array2<f64>> {
    if v.len() != n_edges(r) {
        return Err(Error::Shape(format!(
            "upper-triangle vector of length {} does not match r = {r} (expected {})",
            v.len(),
            n_edges(r)
        )));
    }
    let mut m = Array2::zeros((r, r));
    let mut k = 0;
    for i in 0..r {
        for j in (i + 1)..r {
            m[[i, j]] = v[k];
            m[[j, i]] = v[k];
            k += 1;
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identical_columns_fully_correlated() {
        let ts = array![[1.0, 1.0, 0.3], [2.0, 2.0, -0.1], [4.0, 4.0, 0.8], [3.0, 3.0, 0.2]];
        let fc = pearson_fc(ts.view()).unwrap();
        assert!((fc.values()[[0, 1]] - 1.0).abs() < 1e-12);
        assert_eq!(fc.values()[[0, 0]], 0.0);
    }

    #[test]
    fn negated_column_anticorrelated() {
        let ts = array![[1.0, -1.0], [2.5, -2.5], [0.5, -0.5], [3.0, -3.0]];
        let fc = pearson_fc(ts.view()).unwrap();
        assert!((fc.values()[[0, 1]] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn pearson_matches_textbook_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ts = Array2::from_shape_fn((50, 5), |_| rng.random::<f64>() * 2.0 - 1.0);
        let fc = pearson_fc(ts.view()).unwrap();
        // cov(x,y) / (sd(x) sd(y)), each from its own loop
        let n = 50.0;
        for i in 0..5 {
            for j in 0..5 {
                if i == j {
                    continue;
                }
                let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for t in 0..50 {
                    let (x, y) = (ts[[t, i]], ts[[t, j]]);
                    sx += x;
                    sy += y;
                    sxx += x * x;
                    syy += y * y;
                    sxy += x * y;
                }
                let cov = sxy / n - (sx / n) * (sy / n);
                let sdx = (sxx / n - (sx / n).powi(2)).sqrt();
                let sdy = (syy / n - (sy / n).powi(2)).sqrt();
                assert!((fc.values()[[i, j]] - cov / (sdx * sdy)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn pearson_errors() {
        let short = array![[1.0, 2.0], [2.0, 1.0]];
        assert!(matches!(pearson_fc(short.view()), Err(Error::Shape(_))));
        let flat = array![[1.0, 2.0], [1.0, 1.0], [1.0, 3.0]];
        assert!(matches!(pearson_fc(flat.view()), Err(Error::ConstantSeries(0))));
    }

    #[test]
    fn vectorize_small_and_large() {
        let m = FcMatrix::new(array![[0.0, 0.1, 0.2], [0.1, 0.0, 0.3], [0.2, 0.3, 0.0]]).unwrap();
        assert_eq!(vectorize_upper(&m), vec![0.1, 0.2, 0.3]);
        assert_eq!(vectorize_upper(&FcMatrix::zeros(200)).len(), 19900);
    }

    #[test]
    fn devectorize_examples() {
        assert_eq!(devectorize_symmetric(&[0.0; 3], 3).unwrap(), Array2::<f64>::zeros((3, 3)));
        let m = devectorize_symmetric(&[1.0, 2.0, 3.0], 3).unwrap();
        assert_eq!(m, array![[0.0, 1.0, 2.0], [1.0, 0.0, 3.0], [2.0, 3.0, 0.0]]);
        assert!(matches!(devectorize_symmetric(&[1.0, 2.0], 3), Err(Error::Shape(_))));
    }

    #[test]
    fn edge_index_matches_enumeration() {
        for (k, (i, j)) in edge_pairs(9).into_iter().enumerate() {
            assert_eq!(edge_index(i, j, 9), k);
        }
    }

    #[test]
    fn validation_rejects_asymmetry_and_clamps() {
        let bad = array![[0.0, 0.5], [0.5 + 1e-6, 0.0]];
        assert!(FcMatrix::new(bad).is_err());
        let wide = array![[1.0, 1.4], [1.4, 1.0]];
        let (m, clamped) = FcMatrix::from_ingested(wide).unwrap();
        assert_eq!(clamped, 2);
        assert_eq!(m.values(), &array![[0.0, 1.0], [1.0, 0.0]]);
    }

    proptest! {
        #[test]
        fn vectorize_devectorize_round_trip(v in proptest::collection::vec(-1.0f64..1.0, 45)) {
            let m = devectorize_symmetric(&v, 10).unwrap();
            for i in 0..10 {
                prop_assert_eq!(m[[i, i]], 0.0);
                for j in 0..10 {
                    prop_assert_eq!(m[[i, j]], m[[j, i]]);
                }
            }
            prop_assert_eq!(upper_of(m.view()), v);
        }
    }
}
