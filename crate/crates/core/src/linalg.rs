//! Small dense kernels used by the spectral projection.

use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues in descending order with eigenvectors as columns.
pub fn symmetric_eigen(a: &Array2<f64>) -> (Array1<f64>, Array2<f64>) {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "symmetric_eigen needs a square matrix");
    let mut m = a.clone();
    let mut v = Array2::<f64>::eye(n);
    let scale = m.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);

    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off += m[[p, q]] * m[[p, q]];
            }
        }
        if off.sqrt() <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[[p, q]];
                if apq.abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let theta = (m[[q, q]] - m[[p, p]]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[[k, p]];
                    let mkq = m[[k, q]];
                    m[[k, p]] = c * mkp - s * mkq;
                    m[[k, q]] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[[p, k]];
                    let mqk = m[[q, k]];
                    m[[p, k]] = c * mpk - s * mqk;
                    m[[q, k]] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[[j, j]].partial_cmp(&m[[i, i]]).unwrap_or(std::cmp::Ordering::Equal));
    let values = order.iter().map(|&i| m[[i, i]]).collect();
    let vectors = v.select(Axis(1), &order);
    (values, vectors)
}

/// Orthonormalize the columns of `q` in place (modified Gram-Schmidt, two
/// passes). Columns that collapse are replaced by seeded random directions.
pub fn orthonormalize_columns(q: &mut Array2<f64>, seed: u64) {
    let (rows, cols) = q.dim();
    assert!(cols <= rows, "cannot orthonormalize {cols} columns in dimension {rows}");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for j in 0..cols {
        let original = q.column(j).dot(&q.column(j)).sqrt();
        let mut attempts = 0;
        loop {
            for _pass in 0..2 {
                for i in 0..j {
                    let proj = q.column(i).dot(&q.column(j));
                    let qi = q.column(i).to_owned();
                    q.column_mut(j).scaled_add(-proj, &qi);
                }
            }
            let norm = q.column(j).dot(&q.column(j)).sqrt();
            if norm > 1e-10 * original.max(1.0) && norm > 0.0 {
                q.column_mut(j).mapv_inplace(|x| x / norm);
                break;
            }
            attempts += 1;
            assert!(attempts < 50, "failed to complete an orthonormal basis");
            for x in q.column_mut(j).iter_mut() {
                *x = StandardNormal.sample(&mut rng);
            }
        }
    }
}

/// Seeded standard-normal matrix.
pub fn gaussian_matrix(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(&mut rng))
}

pub fn norm(v: ArrayView1<f64>) -> f64 {
    v.dot(&v).sqrt()
}

/// Flip each row so that its first nonzero entry is positive.
pub fn canonicalize_row_signs(m: &mut Array2<f64>) {
    for mut row in m.rows_mut() {
        let scale = row.iter().fold(0.0f64, |a, &x| a.max(x.abs()));
        if let Some(&first) = row.iter().find(|x| x.abs() > 1e-9 * scale) {
            if first < 0.0 {
                row.mapv_inplace(|x| -x);
            }
        }
    }
}

/// Max absolute deviation of `m mᵀ` from the identity.
pub fn row_orthonormality_error(m: &Array2<f64>) -> f64 {
    let g = m.dot(&m.t());
    let n = g.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g[[i, j]] - target).abs());
        }
    }
    worst
}

pub(crate) fn take_columns(m: &Array2<f64>, k: usize) -> Array2<f64> {
    m.slice(s![.., ..k]).to_owned()
}
