//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Eigenvalues in (-EIGEN_CLAMP, 0) are treated as roundoff and set to zero.
pub const EIGEN_CLAMP: f64 = 1e-8;

/// Modified Gram-Schmidt on the columns of `b`.
///
/// Returns the orthonormal basis and whether the input had to be changed by
/// more than `1e-6` to get there.
pub fn orthonormalize(b: &DMatrix<f64>) -> Result<(DMatrix<f64>, bool)> {
    let (p, q) = b.shape();
    if q == 0 || q > p {
        return Err(Error::InvalidArgument(format!(
            "projection must have 1..=p columns, got {p}x{q}"
        )));
    }
    let mut out = b.clone();
    for j in 0..q {
        for _ in 0..2 {
            for k in 0..j {
                let proj = out.column(k).dot(&out.column(j));
                let ck = out.column(k).clone_owned();
                out.column_mut(j).axpy(-proj, &ck, 1.0);
            }
        }
        let norm = out.column(j).norm();
        let scale = b.column(j).norm().max(1.0);
        if !(norm > 1e-10 * scale) {
            return Err(Error::InvalidArgument(format!(
                "projection column {j} is linearly dependent on the others"
            )));
        }
        out.column_mut(j).scale_mut(1.0 / norm);
    }
    let changed = (&out - b).amax() > 1e-6;
    Ok((out, changed))
}

pub fn is_orthonormal(b: &DMatrix<f64>, tol: f64) -> bool {
    let gram = b.transpose() * b;
    let eye = DMatrix::<f64>::identity(b.ncols(), b.ncols());
    (gram - eye).amax() <= tol
}

/// Symmetric eigendecomposition sorted by descending eigenvalue. Tiny
/// negative eigenvalues are clamped to zero.
pub fn sym_eigen_desc(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let sym = 0.5 * (m + m.transpose());
    let eig = SymmetricEigen::new(sym);
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = DVector::from_iterator(
        n,
        order.iter().map(|&i| {
            let v = eig.eigenvalues[i];
            if v < 0.0 && v > -EIGEN_CLAMP {
                0.0
            } else {
                v
            }
        }),
    );
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut col = eig.eigenvectors.column(src).clone_owned();
        // deterministic sign: largest-magnitude entry positive
        let imax = col.iamax();
        if col[imax] < 0.0 {
            col.neg_mut();
        }
        vectors.set_column(dst, &col);
    }
    (values, vectors)
}

/// Solve the symmetric positive semi-definite system `a x = b` after adding
/// `ridge * trace(a) / dim` to the diagonal. Falls back to an SVD
/// pseudo-inverse if the Cholesky factorization fails.
pub fn solve_psd_ridge(a: &DMatrix<f64>, b: &DVector<f64>, ridge: f64) -> Option<DVector<f64>> {
    let dim = a.nrows();
    let tr = a.trace();
    let mut m = a.clone();
    let shift = ridge * if tr > 0.0 { tr } else { 1.0 };
    for i in 0..dim {
        m[(i, i)] += shift;
    }
    if let Some(ch) = m.clone().cholesky() {
        let x = ch.solve(b);
        if x.iter().all(|v| v.is_finite()) {
            return Some(x);
        }
    }
    let svd = m.svd(true, true);
    let x = svd.solve(b, 1e-12 * svd.singular_values.max()).ok()?;
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Largest principal angle (radians) between the column spans of two
/// orthonormal matrices with the same number of columns.
pub fn largest_principal_angle(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let m = a.transpose() * b;
    let sv = m.singular_values();
    let smallest = sv.iter().copied().fold(f64::INFINITY, f64::min);
    smallest.clamp(-1.0, 1.0).acos()
}
