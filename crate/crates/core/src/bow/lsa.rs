//! Truncated spectral projection of the tf-idf matrix.
//!
//! The top-k left singular vectors of `T` are the dominant eigenvectors of
//! `T Tᵀ`. They are found by orthogonal (subspace) iteration with a few
//! extra guard vectors and a Rayleigh-Ritz rotation each step, so `T` is
//! only ever touched through products `T x` and `Tᵀ y`.

use ndarray::{Array1, Array2, Axis};

use super::tfidf::SparseVec;
use crate::error::{Error, Result};
use crate::linalg;

/// Matrix accessed through products only.
pub trait LinearOperator {
    fn nrows(&self) -> usize;
    fn ncols(&self) -> usize;
    /// `self · x` for `x` of shape ncols×m.
    fn apply(&self, x: &Array2<f64>) -> Array2<f64>;
    /// `selfᵀ · y` for `y` of shape nrows×m.
    fn apply_transpose(&self, y: &Array2<f64>) -> Array2<f64>;
}

impl LinearOperator for Array2<f64> {
    fn nrows(&self) -> usize {
        Array2::nrows(self)
    }
    fn ncols(&self) -> usize {
        Array2::ncols(self)
    }
    fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        self.dot(x)
    }
    fn apply_transpose(&self, y: &Array2<f64>) -> Array2<f64> {
        self.t().dot(y)
    }
}

/// Column-sparse |V|×|D| matrix: one sparse column per document.
#[derive(Debug, Clone)]
pub struct SparseColumns {
    pub rows: usize,
    pub columns: Vec<SparseVec>,
}

impl LinearOperator for SparseColumns {
    fn nrows(&self) -> usize {
        self.rows
    }
    fn ncols(&self) -> usize {
        self.columns.len()
    }
    fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros((self.rows, x.ncols()));
        for (j, col) in self.columns.iter().enumerate() {
            let xj = x.row(j);
            for &(r, v) in col {
                out.row_mut(r).scaled_add(v, &xj);
            }
        }
        out
    }
    fn apply_transpose(&self, y: &Array2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros((self.columns.len(), y.ncols()));
        for (j, col) in self.columns.iter().enumerate() {
            let mut row = out.row_mut(j);
            for &(r, v) in col {
                row.scaled_add(v, &y.row(r));
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LsaOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
    pub oversample: usize,
    pub seed: u64,
}

impl Default for LsaOptions {
    fn default() -> Self {
        LsaOptions {
            tolerance: 1e-10,
            max_iterations: 500,
            oversample: 10,
            seed: 0x15a,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LsaProjection {
    /// k×|V|, orthonormal rows ordered by descending singular value.
    pub components: Array2<f64>,
    pub singular_values: Array1<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl LsaProjection {
    pub fn k(&self) -> usize {
        self.components.nrows()
    }

    pub fn project(&self, t: &Array1<f64>) -> Array1<f64> {
        self.components.dot(t)
    }

    pub fn project_sparse(&self, t: &SparseVec) -> Array1<f64> {
        let mut out = Array1::zeros(self.k());
        for &(r, v) in t {
            out.scaled_add(v, &self.components.column(r));
        }
        out
    }
}

pub fn fit_lsa<T: LinearOperator + ?Sized>(t: &T, k: usize, opts: &LsaOptions) -> Result<LsaProjection> {
    let (rows, cols) = (t.nrows(), t.ncols());
    if k == 0 || k > rows.min(cols) {
        return Err(Error::InvalidArgument(format!(
            "LSA dimension k = {k} must lie in 1..={} for a {rows}x{cols} matrix",
            rows.min(cols)
        )));
    }
    let m = (k + opts.oversample).min(rows);
    let mut q = linalg::gaussian_matrix(rows, m, opts.seed);
    linalg::orthonormalize_columns(&mut q, opts.seed ^ 1);

    let mut iterations = 0;
    let mut converged = false;
    let mut values: Array1<f64>;
    loop {
        iterations += 1;
        // Rayleigh-Ritz on span(Q): B = (TᵀQ)ᵀ(TᵀQ).
        let w = t.apply_transpose(&q);
        let b = w.t().dot(&w);
        let (vals, rot) = linalg::symmetric_eigen(&b);
        q = q.dot(&rot);
        let w = w.dot(&rot);
        let z = t.apply(&w);
        values = vals;

        let lead = values[0].abs().max(f64::MIN_POSITIVE);
        let worst = (0..k)
            .map(|i| {
                let mut r = z.column(i).to_owned();
                r.scaled_add(-values[i], &q.column(i));
                linalg::norm(r.view())
            })
            .fold(0.0f64, f64::max);
        if worst <= opts.tolerance * lead {
            converged = true;
            break;
        }
        if iterations >= opts.max_iterations {
            tracing::warn!(iterations, residual = worst / lead, "LSA subspace iteration did not converge");
            break;
        }
        q = z;
        linalg::orthonormalize_columns(&mut q, opts.seed.wrapping_add(iterations as u64));
    }

    let mut components = linalg::take_columns(&q, k).reversed_axes();
    linalg::canonicalize_row_signs(&mut components);
    let singular_values = values.iter().take(k).map(|&l| l.max(0.0).sqrt()).collect();
    Ok(LsaProjection {
        components,
        singular_values,
        iterations,
        converged,
    })
}

/// Project every column of a dense matrix.
pub fn project_columns(p: &LsaProjection, t: &Array2<f64>) -> Array2<f64> {
    p.components.dot(t)
}

pub(crate) fn stack_rows(rows: Vec<Array1<f64>>, dim: usize) -> Array2<f64> {
    let mut out = Array2::zeros((rows.len(), dim));
    for (mut dst, src) in out.axis_iter_mut(Axis(0)).zip(rows) {
        dst.assign(&src);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn rank_one_column() {
        let mut t = Array2::zeros((4, 3));
        t.column_mut(1).assign(&array![0.0, -3.0, 4.0, 0.0]);
        let p = fit_lsa(&t, 1, &LsaOptions::default()).unwrap();
        let c = p.components.row(0);
        assert!((c[1] - 0.6).abs() < 1e-12 && (c[2] + 0.8).abs() < 1e-12, "{c}");
        assert!((p.singular_values[0] - 5.0).abs() < 1e-10);
    }

    #[test]
    fn k_out_of_range() {
        let t = Array2::<f64>::eye(3);
        assert!(fit_lsa(&t, 0, &LsaOptions::default()).is_err());
        assert!(fit_lsa(&t, 4, &LsaOptions::default()).is_err());
    }

    #[test]
    fn sparse_and_dense_operators_agree() {
        let dense = array![[1.0, 0.0, 2.0], [0.0, 3.0, 0.0], [4.0, 0.0, 5.0], [0.0, 6.0, 0.0]];
        let sparse = SparseColumns {
            rows: 4,
            columns: vec![vec![(0, 1.0), (2, 4.0)], vec![(1, 3.0), (3, 6.0)], vec![(0, 2.0), (2, 5.0)]],
        };
        let x = array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]];
        assert_eq!(dense.apply(&x), sparse.apply(&x));
        let y = array![[1.0], [2.0], [3.0], [4.0]];
        assert_eq!(dense.apply_transpose(&y), sparse.apply_transpose(&y));
        let a = fit_lsa(&dense, 2, &LsaOptions::default()).unwrap();
        let b = fit_lsa(&sparse, 2, &LsaOptions::default()).unwrap();
        for (x, y) in a.components.iter().zip(b.components.iter()) {
            assert!((x - y).abs() < 1e-9);
        }
    }
}
