//! Kernel weight matrices on projected covariates and local-linear gradient
//! fits. Shared by the test statistics and the dimension-reduction step.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::kernelmath::quartic;
use crate::linalg::{is_orthonormal, orthonormalize, solve_psd_ridge};

/// Rows whose raw kernel sum falls below `n * DENOMINATOR_FLOOR` are dropped.
pub const DENOMINATOR_FLOOR: f64 = 1e-12;

/// Relative ridge applied to rank-deficient local systems.
pub const LOCAL_RIDGE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SmoothingKernel {
    /// Product of quartic kernels, compact support.
    #[default]
    Quartic,
    /// Product of standard normal densities (unnormalized).
    Gaussian,
}

impl SmoothingKernel {
    /// Product kernel over the scaled coordinates `u`.
    #[inline]
    pub fn eval_scaled(self, u: impl Iterator<Item = f64>) -> f64 {
        match self {
            SmoothingKernel::Quartic => {
                let mut acc = 1.0;
                for v in u {
                    acc *= quartic(v);
                    if acc == 0.0 {
                        break;
                    }
                }
                acc
            }
            SmoothingKernel::Gaussian => (-0.5 * u.map(|v| v * v).sum::<f64>()).exp(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SmootherWeights {
    /// Row `i` holds the weights used to estimate the regression at `x_i`.
    pub weights: DMatrix<f64>,
    pub loo: bool,
    pub bandwidth: f64,
    pub q_used: usize,
    /// Rows whose denominator fell below the floor (0-based, ascending).
    pub dropped: Vec<usize>,
    /// Set when the supplied projection had to be re-orthonormalized.
    pub reorthonormalized: bool,
}

impl SmootherWeights {
    pub fn n(&self) -> usize {
        self.weights.nrows()
    }

    /// Indicator of rows that take part in the statistics.
    pub fn retained_mask(&self) -> Vec<bool> {
        let mut mask = vec![true; self.n()];
        for &i in &self.dropped {
            mask[i] = false;
        }
        mask
    }

    /// `sum_j w_ij y_j` for every row.
    pub fn smooth(&self, y: &DVector<f64>) -> DVector<f64> {
        &self.weights * y
    }
}

/// Project the rows of `x` onto `b` (columns are re-orthonormalized when off by
/// more than `1e-6`).
fn project(x: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<(DMatrix<f64>, bool)> {
    if b.nrows() != x.ncols() {
        return Err(Error::InvalidArgument(format!(
            "projection has {} rows but data has {} covariates",
            b.nrows(),
            x.ncols()
        )));
    }
    if is_orthonormal(b, 1e-6) {
        Ok((x * b, false))
    } else {
        let (ortho, _) = orthonormalize(b)?;
        Ok((x * ortho, true))
    }
}

/// Nadaraya-Watson weight matrix on `B' x` with the quartic product kernel.
///
/// With `loo` the diagonal is excluded from both numerator and denominator.
/// Rows with a raw denominator below `n * 1e-12` are listed in `dropped` and
/// receive uniform weights over the other points.
pub fn nw_weight_matrix(x: &DMatrix<f64>, b: &DMatrix<f64>, h: f64, loo: bool) -> Result<SmootherWeights> {
    nw_weight_matrix_with(x, b, h, loo, SmoothingKernel::Quartic)
}

pub fn nw_weight_matrix_with(
    x: &DMatrix<f64>,
    b: &DMatrix<f64>,
    h: f64,
    loo: bool,
    kernel: SmoothingKernel,
) -> Result<SmootherWeights> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::InvalidArgument(format!("bandwidth must be positive, got {h}")));
    }
    let (z, reorthonormalized) = project(x, b)?;
    let n = z.nrows();
    let q = z.ncols();
    let floor = n as f64 * DENOMINATOR_FLOOR;
    let rows: Vec<(Vec<f64>, bool)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut row = vec![0.0; n];
            let mut sum = 0.0;
            for (j, slot) in row.iter_mut().enumerate() {
                if loo && j == i {
                    continue;
                }
                let k = kernel.eval_scaled((0..q).map(|c| (z[(i, c)] - z[(j, c)]) / h));
                *slot = k;
                sum += k;
            }
            if sum < floor || !sum.is_finite() {
                let others = if n > 1 { (n - 1) as f64 } else { 1.0 };
                for (j, slot) in row.iter_mut().enumerate() {
                    *slot = if j == i && n > 1 { 0.0 } else { 1.0 / others };
                }
                (row, true)
            } else {
                row.iter_mut().for_each(|v| *v /= sum);
                (row, false)
            }
        })
        .collect();
    let dropped: Vec<usize> = rows
        .iter()
        .enumerate()
        .filter_map(|(i, (_, d))| d.then_some(i))
        .collect();
    if dropped.len() == n {
        return Err(Error::DegenerateBandwidth(format!(
            "every kernel denominator is below the floor at h = {h}"
        )));
    }
    let weights = DMatrix::from_fn(n, n, |i, j| rows[i].0[j]);
    Ok(SmootherWeights {
        weights,
        loo,
        bandwidth: h,
        q_used: q,
        dropped,
        reorthonormalized,
    })
}

#[derive(Debug, Clone)]
pub struct LocalLinearFit {
    /// Local intercepts, one per observation.
    pub a_hat: DVector<f64>,
    /// Local gradients, row `j` is the gradient at `x_j`.
    pub b_hat: DMatrix<f64>,
    pub bandwidth: f64,
    /// Points with fewer than `p + 2` positively weighted neighbours.
    pub flagged: Vec<usize>,
}

/// Local-linear fit at every observation with kernel weights on `B'(x_i - x_j)`
/// (`b = None` uses the identity). The regression itself is on the full
/// `p`-dimensional difference `x_i - x_j`.
pub fn local_linear_fit(data: &Dataset, b: Option<&DMatrix<f64>>, h: f64) -> Result<LocalLinearFit> {
    local_linear_fit_with(data, b, h, SmoothingKernel::Quartic)
}

pub fn local_linear_fit_with(
    data: &Dataset,
    b: Option<&DMatrix<f64>>,
    h: f64,
    kernel: SmoothingKernel,
) -> Result<LocalLinearFit> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::InvalidArgument(format!("bandwidth must be positive, got {h}")));
    }
    let x = data.x();
    let y = data.y();
    let (n, p) = x.shape();
    let z = match b {
        Some(b) => project(x, b)?.0,
        None => x.clone(),
    };
    let q = z.ncols();
    let dim = p + 1;
    let fits: Vec<(f64, Vec<f64>, bool)> = (0..n)
        .into_par_iter()
        .map(|j| {
            let mut gram = DMatrix::<f64>::zeros(dim, dim);
            let mut rhs = DVector::<f64>::zeros(dim);
            let mut positive = 0usize;
            let mut design = vec![0.0; dim];
            for i in 0..n {
                let w = kernel.eval_scaled((0..q).map(|c| (z[(i, c)] - z[(j, c)]) / h));
                if w <= 0.0 {
                    continue;
                }
                positive += 1;
                design[0] = 1.0;
                for c in 0..p {
                    design[c + 1] = x[(i, c)] - x[(j, c)];
                }
                for r in 0..dim {
                    let wr = w * design[r];
                    rhs[r] += wr * y[i];
                    for s in r..dim {
                        gram[(r, s)] += wr * design[s];
                    }
                }
            }
            for r in 0..dim {
                for s in 0..r {
                    gram[(r, s)] = gram[(s, r)];
                }
            }
            let flagged = positive < p + 2;
            let sol = solve_local(&gram, &rhs, flagged);
            match sol {
                Some(s) => (s[0], s.rows(1, p).iter().copied().collect(), flagged),
                None => (f64::NAN, vec![0.0; p], true),
            }
        })
        .collect();
    let flagged: Vec<usize> = fits
        .iter()
        .enumerate()
        .filter_map(|(j, f)| f.2.then_some(j))
        .collect();
    if 2 * flagged.len() > n {
        return Err(Error::DegenerateBandwidth(format!(
            "{} of {n} local-linear fits lack p + 2 neighbours at h = {h}",
            flagged.len()
        )));
    }
    let a_hat = DVector::from_iterator(n, fits.iter().map(|f| f.0));
    let b_hat = DMatrix::from_fn(n, p, |j, c| fits[j].1[c]);
    Ok(LocalLinearFit {
        a_hat,
        b_hat,
        bandwidth: h,
        flagged,
    })
}

/// Solve a local normal system, falling back to a relative ridge when the
/// system is rank deficient or badly conditioned.
pub(crate) fn solve_local(gram: &DMatrix<f64>, rhs: &DVector<f64>, force_ridge: bool) -> Option<DVector<f64>> {
    if !force_ridge {
        if let Some(ch) = gram.clone().cholesky() {
            let diag = ch.l_dirty().diagonal();
            let (lo, hi) = diag
                .iter()
                .fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(v.abs()), hi.max(v.abs())));
            if hi > 0.0 && (lo / hi).powi(2) > 1e-12 {
                let s = ch.solve(rhs);
                if s.iter().all(|v| v.is_finite()) {
                    return Some(s);
                }
            }
        }
    }
    solve_psd_ridge(gram, rhs, LOCAL_RIDGE)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernelmath::kernel_eval;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn col(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(v.len(), 1, v)
    }

    fn normal_matrix(n: usize, p: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng))
    }

    #[test]
    fn identical_rows_share_weight() {
        let x = DMatrix::from_row_slice(2, 2, &[0.3, 0.1, 0.3, 0.1]);
        let b = DMatrix::identity(2, 2);
        let w = nw_weight_matrix(&x, &b, 1.0, false).unwrap();
        for v in w.weights.iter() {
            assert_abs_diff_eq!(*v, 0.5, epsilon = 1e-15);
        }
    }

    #[test]
    fn boundary_kills_off_diagonal() {
        let w = nw_weight_matrix(&col(&[0.0, 1.0]), &col(&[1.0]), 1.0, false).unwrap();
        assert_eq!(w.weights, DMatrix::identity(2, 2));
        assert!(w.dropped.is_empty());
    }

    #[test]
    fn leave_one_out_row() {
        let w = nw_weight_matrix(&col(&[0.0, 0.5, 1.0]), &col(&[1.0]), 1.0, true).unwrap();
        let k5 = kernel_eval(0.5).unwrap();
        let k1 = kernel_eval(1.0).unwrap();
        assert_eq!(w.weights[(0, 0)], 0.0);
        assert_abs_diff_eq!(w.weights[(0, 1)], k5 / (k5 + k1), epsilon = 1e-15);
        assert_abs_diff_eq!(w.weights[(0, 1)], 1.0, epsilon = 1e-15);
        assert_eq!(w.weights[(0, 2)], 0.0);
    }

    #[test]
    fn isolated_point_is_dropped_with_uniform_fallback() {
        let w = nw_weight_matrix(&col(&[0.0, 0.1, 5.0]), &col(&[1.0]), 1.0, true).unwrap();
        assert_eq!(w.dropped, vec![2]);
        assert_abs_diff_eq!(w.weights[(2, 0)], 0.5);
        assert_abs_diff_eq!(w.weights[(2, 1)], 0.5);
        assert_eq!(w.weights[(2, 2)], 0.0);
        assert_eq!(w.retained_mask(), vec![true, true, false]);
    }

    #[test]
    fn all_rows_dropped_is_error() {
        let err = nw_weight_matrix(&col(&[0.0, 3.0, 6.0]), &col(&[1.0]), 1.0, true).unwrap_err();
        assert!(matches!(err, Error::DegenerateBandwidth(_)));
    }

    #[test]
    fn bad_bandwidth_rejected() {
        assert!(nw_weight_matrix(&col(&[0.0, 1.0]), &col(&[1.0]), 0.0, false).is_err());
        assert!(nw_weight_matrix(&col(&[0.0, 1.0]), &col(&[1.0]), f64::NAN, false).is_err());
    }

    #[test]
    fn non_orthonormal_projection_is_repaired() {
        let x = normal_matrix(20, 2, 1);
        let w = nw_weight_matrix(&x, &col(&[2.0, 0.0]), 0.8, false).unwrap();
        let w_ref = nw_weight_matrix(&x, &col(&[1.0, 0.0]), 0.8, false).unwrap();
        assert!(w.reorthonormalized);
        assert_eq!(w.weights, w_ref.weights);
    }

    #[test]
    fn local_linear_reproduces_linear_function() {
        let x = normal_matrix(80, 3, 2);
        let y = DVector::from_fn(80, |i, _| 2.0 * x[(i, 0)]);
        let data = Dataset::new(x, y).unwrap();
        let fit = local_linear_fit(&data, None, 2.5).unwrap();
        for j in 0..80 {
            if fit.flagged.contains(&j) {
                continue;
            }
            assert_abs_diff_eq!(fit.b_hat[(j, 0)], 2.0, epsilon = 1e-6);
            assert_abs_diff_eq!(fit.b_hat[(j, 1)], 0.0, epsilon = 1e-6);
            assert_abs_diff_eq!(fit.b_hat[(j, 2)], 0.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn local_linear_constant_response() {
        let x = normal_matrix(60, 2, 3);
        let data = Dataset::new(x, DVector::from_element(60, 3.0)).unwrap();
        let fit = local_linear_fit(&data, None, 2.0).unwrap();
        assert!(fit.b_hat.amax() <= 1e-8);
    }

    #[test]
    fn local_linear_gradient_outer_product_finds_index() {
        let n = 50;
        let x = normal_matrix(n, 3, 4);
        let y = DVector::from_fn(n, |i, _| x[(i, 0)].powi(2));
        let data = Dataset::new(x, y).unwrap();
        let fit = local_linear_fit_with(&data, None, 0.8, SmoothingKernel::Gaussian).unwrap();
        let sigma = fit.b_hat.transpose() * &fit.b_hat / n as f64;
        let (_, vecs) = crate::linalg::sym_eigen_desc(&sigma);
        let cos = vecs[(0, 0)].abs();
        assert!(cos > 10f64.to_radians().cos(), "cos = {cos}");
    }

    #[test]
    fn too_sparse_local_fits_fail() {
        let x = normal_matrix(30, 4, 5);
        let data = Dataset::new(x, DVector::from_element(30, 1.0)).unwrap();
        let err = local_linear_fit(&data, None, 0.05).unwrap_err();
        assert!(matches!(err, Error::DegenerateBandwidth(_)));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn rows_sum_to_one_and_reproduce_constants(seed in 0u64..500, loo in any::<bool>(), c in -10.0f64..10.0) {
            let x = normal_matrix(25, 3, seed);
            let b = DMatrix::from_column_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, 0.6, 0.8]);
            let w = nw_weight_matrix(&x, &b, 1.2, loo).unwrap();
            let y = DVector::from_element(25, c);
            let m = w.smooth(&y);
            for i in 0..25 {
                let s: f64 = w.weights.row(i).sum();
                prop_assert!((s - 1.0).abs() <= 1e-9);
                prop_assert!(w.weights.row(i).iter().all(|v| *v >= 0.0));
                if loo { prop_assert_eq!(w.weights[(i, i)], 0.0); }
                prop_assert!((m[i] - c).abs() <= 1e-9 * (1.0 + c.abs()));
            }
        }

        #[test]
        fn weights_invariant_to_signed_permutation(seed in 0u64..500, s1 in any::<bool>(), s2 in any::<bool>()) {
            let x = normal_matrix(20, 3, seed);
            let b = DMatrix::from_column_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, 0.6, 0.8]);
            let sign = |s: bool| if s { -1.0 } else { 1.0 };
            let mut bp = DMatrix::zeros(3, 2);
            bp.set_column(0, &(b.column(1) * sign(s1)));
            bp.set_column(1, &(b.column(0) * sign(s2)));
            let w1 = nw_weight_matrix(&x, &b, 1.0, false).unwrap();
            let w2 = nw_weight_matrix(&x, &bp, 1.0, false).unwrap();
            prop_assert!((w1.weights - w2.weights).amax() <= 1e-14);
        }
    }
}
