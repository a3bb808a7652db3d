//! Estimation of the projection matrix (OPG, MAVE) and of the structural
//! dimension (ridge-type eigenvalue ratio, modified BIC).

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{largest_principal_angle, orthonormalize, sym_eigen_desc, EIGEN_CLAMP};
use crate::smooth::{local_linear_fit_with, solve_local, SmoothingKernel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ProjectionMethod {
    #[default]
    Opg,
    Mave,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase", tag = "kind", content = "q")]
pub enum DimensionSelector {
    #[default]
    Rre,
    Bic,
    Fixed(usize),
}

#[derive(Debug, Clone)]
pub struct ProjectionEstimate {
    pub b_hat: DMatrix<f64>,
    /// Descending eigenvalues of the OPG matrix, when OPG was run.
    pub eigenvalues: Option<DVector<f64>>,
    pub q_hat: usize,
    pub method: ProjectionMethod,
    pub selector: DimensionSelector,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaveOptions {
    pub max_iter: usize,
    /// Stop once the largest principal angle between sweeps drops below this.
    pub tolerance: f64,
    pub kernel: SmoothingKernel,
}

impl Default for MaveOptions {
    fn default() -> Self {
        Self {
            max_iter: 50,
            tolerance: 1e-4,
            kernel: SmoothingKernel::Gaussian,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectionConfig {
    pub method: ProjectionMethod,
    pub selector: DimensionSelector,
    /// Constant `c` in the bandwidth rule `c * n^(-1/(4+k))`.
    pub bandwidth_scale: f64,
    /// Kernel for the OPG pilot fits.
    pub pilot_kernel: SmoothingKernel,
    pub mave: MaveOptions,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        Self {
            method: ProjectionMethod::Opg,
            selector: DimensionSelector::Rre,
            bandwidth_scale: 1.5,
            pilot_kernel: SmoothingKernel::Gaussian,
            mave: MaveOptions::default(),
        }
    }
}

/// `scale * n^(-1/(4+k))`.
pub fn bandwidth_rule(scale: f64, n: usize, k: usize) -> f64 {
    scale * (n as f64).powf(-1.0 / (4.0 + k as f64))
}

#[derive(Debug, Clone)]
pub struct OpgResult {
    pub sigma_hat: DMatrix<f64>,
    pub eigenvalues: DVector<f64>,
    pub eigenvectors: DMatrix<f64>,
}

/// Outer product of local-linear gradients with the full p-dimensional kernel.
pub fn opg_estimate(data: &Dataset, h: f64) -> Result<OpgResult> {
    opg_estimate_with(data, h, SmoothingKernel::Gaussian)
}

pub fn opg_estimate_with(data: &Dataset, h: f64, kernel: SmoothingKernel) -> Result<OpgResult> {
    let (n, p) = (data.n(), data.p());
    if n <= 2 * (p + 1) {
        return Err(Error::InvalidArgument(format!(
            "OPG needs n > 2(p + 1), got n = {n}, p = {p}"
        )));
    }
    let fit = local_linear_fit_with(data, None, h, kernel)?;
    let mut sigma = DMatrix::<f64>::zeros(p, p);
    let mut used = 0usize;
    for j in 0..n {
        if fit.flagged.binary_search(&j).is_ok() {
            continue;
        }
        let b = fit.b_hat.row(j);
        sigma += b.transpose() * b;
        used += 1;
    }
    sigma /= used as f64;
    let sigma = 0.5 * (&sigma + sigma.transpose());
    let (eigenvalues, eigenvectors) = sym_eigen_desc(&sigma);
    Ok(OpgResult {
        sigma_hat: sigma,
        eigenvalues,
        eigenvectors,
    })
}

/// Ridge-type ratio estimate of the structural dimension with ridge
/// `c = 1/sqrt(n h)`.
pub fn rre_select_q(eigenvalues: &[f64], n: usize, h: f64) -> Result<usize> {
    if n == 0 || !(h > 0.0) {
        return Err(Error::InvalidArgument("n and h must be positive".into()));
    }
    rre_select_q_with_ridge(eigenvalues, 1.0 / (n as f64 * h).sqrt())
}

pub fn rre_select_q_with_ridge(eigenvalues: &[f64], c: f64) -> Result<usize> {
    if eigenvalues.len() < 2 {
        return Err(Error::InvalidArgument("need at least two eigenvalues".into()));
    }
    if let Some(v) = eigenvalues.iter().find(|v| !v.is_finite() || **v < -EIGEN_CLAMP) {
        return Err(Error::InvalidArgument(format!("invalid eigenvalue {v}")));
    }
    if eigenvalues.windows(2).any(|w| w[1] > w[0]) {
        return Err(Error::InvalidArgument("eigenvalues must be descending".into()));
    }
    let lam: Vec<f64> = eigenvalues.iter().map(|v| v.max(0.0)).collect();
    let mut best = (1usize, f64::INFINITY);
    for k in 1..lam.len() {
        let ratio = (lam[k] + c) / (lam[k - 1] + c);
        if ratio < best.1 {
            best = (k, ratio);
        }
    }
    Ok(best.0)
}

#[derive(Debug, Clone)]
pub struct MaveFit {
    pub b_hat: DMatrix<f64>,
    /// Kernel-weighted residual sum of squares at `b_hat`.
    pub objective: f64,
    /// Number of local fits that entered the objective.
    pub used: usize,
    pub iterations: usize,
    pub converged: bool,
}

struct Sweep {
    objective: f64,
    used: usize,
    lhs: DMatrix<f64>,
    rhs: DVector<f64>,
}

/// One pass over all local fits at fixed `b`: local intercepts and slopes,
/// the weighted residual sum of squares, and the normal equations in vec(B).
fn mave_sweep(x: &DMatrix<f64>, y: &DVector<f64>, b: &DMatrix<f64>, h: f64, kernel: SmoothingKernel, need_system: bool) -> Sweep {
    let (n, p) = x.shape();
    let k = b.ncols();
    let z = x * b;
    struct Local {
        objective: f64,
        d: DVector<f64>,
        s: DMatrix<f64>,
        r: DVector<f64>,
    }
    let locals: Vec<Option<Local>> = (0..n)
        .into_par_iter()
        .map(|j| {
            let mut w = vec![0.0; n];
            let mut total = 0.0;
            let mut positive = 0usize;
            for (i, wi) in w.iter_mut().enumerate() {
                let v = kernel.eval_scaled((0..k).map(|c| (z[(i, c)] - z[(j, c)]) / h));
                if v > 0.0 {
                    positive += 1;
                }
                *wi = v;
                total += v;
            }
            if positive < k + 2 || !(total > n as f64 * crate::smooth::DENOMINATOR_FLOOR) {
                return None;
            }
            w.iter_mut().for_each(|v| *v /= total);
            let dim = k + 1;
            let mut gram = DMatrix::<f64>::zeros(dim, dim);
            let mut rhs = DVector::<f64>::zeros(dim);
            let mut design = vec![0.0; dim];
            for i in 0..n {
                if w[i] == 0.0 {
                    continue;
                }
                design[0] = 1.0;
                for c in 0..k {
                    design[c + 1] = z[(i, c)] - z[(j, c)];
                }
                for r in 0..dim {
                    let wr = w[i] * design[r];
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
            let sol = solve_local(&gram, &rhs, false)?;
            let a = sol[0];
            let d = sol.rows(1, k).clone_owned();
            let mut objective = 0.0;
            let mut s = DMatrix::<f64>::zeros(if need_system { p } else { 0 }, if need_system { p } else { 0 });
            let mut r = DVector::<f64>::zeros(if need_system { p } else { 0 });
            let mut xij = DVector::<f64>::zeros(p);
            for i in 0..n {
                if w[i] == 0.0 {
                    continue;
                }
                let mut fitted = a;
                for c in 0..k {
                    fitted += d[c] * (z[(i, c)] - z[(j, c)]);
                }
                let res = y[i] - fitted;
                objective += w[i] * res * res;
                if need_system {
                    for c in 0..p {
                        xij[c] = x[(i, c)] - x[(j, c)];
                    }
                    s.ger(w[i], &xij, &xij, 1.0);
                    r.axpy(w[i] * (y[i] - a), &xij, 1.0);
                }
            }
            Some(Local { objective, d, s, r })
        })
        .collect();

    let dim = if need_system { p * k } else { 0 };
    let mut lhs = DMatrix::<f64>::zeros(dim, dim);
    let mut rhs = DVector::<f64>::zeros(dim);
    let mut objective = 0.0;
    let mut used = 0usize;
    for local in locals.iter().flatten() {
        objective += local.objective;
        used += 1;
        if !need_system {
            continue;
        }
        // vec(B) is column-major, so x' B d = (d kron x)' vec(B)
        for c1 in 0..k {
            for c2 in 0..k {
                let dd = local.d[c1] * local.d[c2];
                if dd == 0.0 {
                    continue;
                }
                let mut block = lhs.view_mut((c1 * p, c2 * p), (p, p));
                block += &local.s * dd;
            }
            let mut seg = rhs.rows_mut(c1 * p, p);
            seg += &local.r * local.d[c1];
        }
    }
    Sweep {
        objective,
        used,
        lhs,
        rhs,
    }
}

/// Weighted residual sum of squares of the local-linear fits on `B' x`.
pub fn mave_objective(data: &Dataset, b: &DMatrix<f64>, h: f64, kernel: SmoothingKernel) -> Result<(f64, usize)> {
    let sweep = mave_sweep(data.x(), data.y(), b, h, kernel, false);
    if sweep.used == 0 {
        return Err(Error::DegenerateBandwidth(format!("no local fit has enough neighbours at h = {h}")));
    }
    Ok((sweep.objective, sweep.used))
}

/// Minimum average variance estimation of a `p x q` projection, started from
/// `init`. Alternates local-linear fits at fixed B with a least-squares update
/// of vec(B), re-orthonormalizing after each update.
pub fn mave_estimate(data: &Dataset, q: usize, h: f64, init: &DMatrix<f64>, options: &MaveOptions) -> Result<MaveFit> {
    let p = data.p();
    if q == 0 || q > p {
        return Err(Error::InvalidArgument(format!("dimension must be in 1..={p}, got {q}")));
    }
    if init.shape() != (p, q) {
        return Err(Error::InvalidArgument(format!(
            "initial projection must be {p}x{q}, got {}x{}",
            init.nrows(),
            init.ncols()
        )));
    }
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::InvalidArgument(format!("bandwidth must be positive, got {h}")));
    }
    let (mut b, _) = orthonormalize(init)?;
    let (x, y) = (data.x(), data.y());

    if q == p {
        let (objective, used) = mave_objective(data, &b, h, options.kernel)?;
        return Ok(MaveFit {
            b_hat: b,
            objective,
            used,
            iterations: 0,
            converged: true,
        });
    }

    let mut best: Option<(DMatrix<f64>, f64, usize)> = None;
    let mut previous = f64::INFINITY;
    let mut stalls = 0usize;
    let mut iterations = 0usize;
    let mut converged = false;
    while iterations < options.max_iter {
        let sweep = mave_sweep(x, y, &b, h, options.kernel, true);
        if sweep.used == 0 {
            return Err(Error::DegenerateBandwidth(format!(
                "no local fit has enough neighbours at h = {h}"
            )));
        }
        if best.as_ref().map_or(true, |bst| sweep.objective < bst.1) {
            best = Some((b.clone(), sweep.objective, sweep.used));
        }
        if sweep.objective >= previous {
            stalls += 1;
            if stalls >= 3 {
                break;
            }
        } else {
            stalls = 0;
        }
        previous = sweep.objective;
        iterations += 1;

        let vec_b = solve_local(&sweep.lhs, &sweep.rhs, false)
            .ok_or_else(|| Error::Numerical("MAVE projection update is singular".into()))?;
        let candidate = DMatrix::from_column_slice(p, q, vec_b.as_slice());
        let next = match orthonormalize(&candidate) {
            Ok((next, _)) => next,
            Err(_) => break,
        };
        let angle = largest_principal_angle(&b, &next);
        b = next;
        if angle < options.tolerance {
            converged = true;
            break;
        }
    }
    let (objective, used) = mave_objective(data, &b, h, options.kernel)?;
    if best.as_ref().map_or(true, |bst| objective <= bst.1) {
        best = Some((b, objective, used));
    } else {
        converged = false;
    }
    let (b_hat, objective, used) = best.expect("at least one sweep ran");
    Ok(MaveFit {
        b_hat,
        objective,
        used,
        iterations,
        converged,
    })
}

#[derive(Debug, Clone)]
pub struct BicPath {
    /// Criterion value per k (index k - 1); `None` where MAVE failed.
    pub criterion: Vec<Option<f64>>,
    pub fits: Vec<Option<MaveFit>>,
    pub q_hat: usize,
}

/// Penalty `log(n) k / min(n h^k, sqrt(n))`.
pub fn bic_penalty(n: usize, k: usize, h: f64) -> f64 {
    let nf = n as f64;
    nf.ln() * k as f64 / (nf * h.powi(k as i32)).min(nf.sqrt())
}

/// Modified BIC over k = 1..=p with MAVE at each k and bandwidth
/// `scale * n^(-1/(4+k))`. `init` supplies starting directions (typically the
/// OPG eigenvectors, columns in order of importance).
pub fn bic_select_q(data: &Dataset, scale: f64, init: &DMatrix<f64>, options: &MaveOptions) -> Result<BicPath> {
    let (n, p) = (data.n(), data.p());
    if n < 2 * (p + 2) {
        return Err(Error::InvalidArgument(format!(
            "BIC selection needs n >= 2(p + 2), got n = {n}, p = {p}"
        )));
    }
    let mut criterion = Vec::with_capacity(p);
    let mut fits = Vec::with_capacity(p);
    for k in 1..=p {
        let h = bandwidth_rule(scale, n, k);
        let start = init.columns(0, k).clone_owned();
        match mave_estimate(data, k, h, &start, options) {
            Ok(fit) if fit.objective > 0.0 => {
                let rss = fit.objective / fit.used as f64;
                criterion.push(Some(rss.ln() + bic_penalty(n, k, h)));
                fits.push(Some(fit));
            }
            Ok(fit) => {
                // exact fit: nothing can beat it
                criterion.push(Some(f64::NEG_INFINITY));
                fits.push(Some(fit));
            }
            Err(_) => {
                criterion.push(None);
                fits.push(None);
            }
        }
    }
    let mut q_hat = None;
    let mut best = f64::INFINITY;
    for (k, c) in criterion.iter().enumerate() {
        if let Some(c) = c {
            if q_hat.is_none() || *c < best {
                best = *c;
                q_hat = Some(k + 1);
            }
        }
    }
    let q_hat = q_hat.ok_or_else(|| Error::Degenerate("MAVE failed at every candidate dimension".into()))?;
    Ok(BicPath { criterion, fits, q_hat })
}

/// Full projection step: OPG pilot, dimension selection, then OPG or MAVE
/// directions at the selected dimension.
pub fn estimate_projection(data: &Dataset, config: &ProjectionConfig) -> Result<ProjectionEstimate> {
    let (n, p) = (data.n(), data.p());
    let h0 = bandwidth_rule(config.bandwidth_scale, n, p);
    let opg = opg_estimate_with(data, h0, config.pilot_kernel)?;
    let eigs = opg.eigenvalues.as_slice();

    let mut bic_fit = None;
    let q_hat = match config.selector {
        DimensionSelector::Fixed(k) => {
            if k == 0 || k > p {
                return Err(Error::InvalidArgument(format!("fixed dimension must be in 1..={p}, got {k}")));
            }
            k
        }
        DimensionSelector::Rre => {
            if p == 1 {
                1
            } else {
                rre_select_q(eigs, n, h0)?
            }
        }
        DimensionSelector::Bic => {
            let path = bic_select_q(data, config.bandwidth_scale, &opg.eigenvectors, &config.mave)?;
            bic_fit = path.fits[path.q_hat - 1].clone();
            path.q_hat
        }
    };

    let init = opg.eigenvectors.columns(0, q_hat).clone_owned();
    let (b_hat, iterations, converged) = match config.method {
        ProjectionMethod::Opg => (init, 0, true),
        ProjectionMethod::Mave => {
            let fit = match bic_fit {
                Some(fit) => fit,
                None => {
                    let h = bandwidth_rule(config.bandwidth_scale, n, q_hat);
                    mave_estimate(data, q_hat, h, &init, &config.mave)?
                }
            };
            (fit.b_hat, fit.iterations, fit.converged)
        }
    };
    Ok(ProjectionEstimate {
        b_hat,
        eigenvalues: Some(opg.eigenvalues),
        q_hat,
        method: config.method,
        selector: config.selector,
        iterations,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::is_orthonormal;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal, StandardNormal};

    fn gaussian_x(n: usize, p: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(rng))
    }

    #[test]
    fn rre_examples() {
        assert_eq!(rre_select_q_with_ridge(&[4.0, 0.0, 0.0, 0.0], 0.1).unwrap(), 1);
        assert_eq!(rre_select_q_with_ridge(&[3.0, 2.0, 0.0, 0.0], 0.01).unwrap(), 2);
        assert_eq!(rre_select_q_with_ridge(&[1.0; 5], 0.3).unwrap(), 1);
        assert!(rre_select_q_with_ridge(&[1.0, -0.1], 0.1).is_err());
        assert_eq!(rre_select_q_with_ridge(&[1.0, -1e-9], 0.1).unwrap(), 1);
        assert!(rre_select_q_with_ridge(&[1.0, 2.0], 0.1).is_err());
    }

    #[test]
    fn bic_penalty_arithmetic() {
        let h: f64 = 0.7;
        for k in 1..=4 {
            let expected = 100f64.ln() * k as f64 / (100.0 * h.powi(k as i32)).min(10.0);
            assert_abs_diff_eq!(bic_penalty(100, k, h), expected, epsilon = 1e-15);
        }
    }

    #[test]
    fn bandwidth_rule_values() {
        assert_abs_diff_eq!(bandwidth_rule(1.5, 100, 1), 1.5 * 100f64.powf(-0.2), epsilon = 1e-15);
        assert_abs_diff_eq!(bandwidth_rule(1.5, 200, 8), 1.5 * 200f64.powf(-1.0 / 12.0), epsilon = 1e-15);
    }

    #[test]
    fn opg_constant_response_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data = Dataset::new(gaussian_x(60, 3, &mut rng), DVector::from_element(60, 2.0)).unwrap();
        let opg = opg_estimate(&data, 1.0).unwrap();
        assert!(opg.sigma_hat.amax() <= 1e-10);
    }

    #[test]
    fn opg_finds_linear_direction() {
        let mut cosines = Vec::new();
        let noise = Normal::new(0.0, 0.1).unwrap();
        for rep in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + rep);
            let x = gaussian_x(400, 4, &mut rng);
            let y = DVector::from_fn(400, |i, _| x[(i, 0)] + noise.sample(&mut rng));
            let data = Dataset::new(x, y).unwrap();
            let opg = opg_estimate(&data, bandwidth_rule(1.5, 400, 4)).unwrap();
            let s = &opg.sigma_hat;
            assert!((s - s.transpose()).amax() <= 1e-12);
            assert!(is_orthonormal(&opg.eigenvectors, 1e-8));
            assert!(opg.eigenvalues.iter().all(|v| *v >= -1e-10));
            cosines.push(opg.eigenvectors[(0, 0)].abs());
        }
        cosines.sort_by(f64::total_cmp);
        assert!(cosines[10] > 0.95, "median |cos| = {}", cosines[10]);
    }

    #[test]
    fn opg_requires_enough_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let data = Dataset::new(gaussian_x(8, 3, &mut rng), DVector::zeros(8)).unwrap();
        assert!(opg_estimate(&data, 1.0).is_err());
    }

    #[test]
    fn mave_recovers_quadratic_index() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 400;
        let x = gaussian_x(n, 4, &mut rng);
        let beta = DVector::from_vec(vec![1.0, 1.0, 0.0, 0.0]) / 2f64.sqrt();
        let noise = Normal::new(0.0, 0.2).unwrap();
        let y = DVector::from_fn(n, |i, _| x.row(i).dot(&beta.transpose()).powi(2) + noise.sample(&mut rng));
        let data = Dataset::new(x, y).unwrap();
        let opg = opg_estimate(&data, bandwidth_rule(1.5, n, 4)).unwrap();
        let init = opg.eigenvectors.columns(0, 1).clone_owned();
        let fit = mave_estimate(&data, 1, bandwidth_rule(1.5, n, 1), &init, &MaveOptions::default()).unwrap();
        let truth = DMatrix::from_column_slice(4, 1, beta.as_slice());
        let angle = largest_principal_angle(&fit.b_hat, &truth).to_degrees();
        assert!(angle < 10.0, "angle = {angle}");
        assert!(is_orthonormal(&fit.b_hat, 1e-8));
    }

    #[test]
    fn mave_noiseless_linear_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 100;
        let x = gaussian_x(n, 3, &mut rng);
        let y = DVector::from_fn(n, |i, _| x[(i, 0)] - x[(i, 2)]);
        let data = Dataset::new(x, y).unwrap();
        let init = DMatrix::from_column_slice(3, 1, &[1.0, 0.3, -0.5]);
        let options = MaveOptions {
            max_iter: 200,
            tolerance: 1e-12,
            ..Default::default()
        };
        let fit = mave_estimate(&data, 1, 0.6, &init, &options).unwrap();
        assert!(fit.objective <= 1e-12 * n as f64, "objective = {}", fit.objective);
    }

    #[test]
    fn mave_full_dimension_is_local_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 80;
        let x = gaussian_x(n, 2, &mut rng);
        let y = DVector::from_fn(n, |i, _| (x[(i, 0)] * x[(i, 1)]).sin());
        let data = Dataset::new(x, y).unwrap();
        let fit = mave_estimate(&data, 2, 0.9, &DMatrix::identity(2, 2), &MaveOptions::default()).unwrap();
        assert_eq!(fit.iterations, 0);
        let rotated = DMatrix::from_row_slice(2, 2, &[0.6, -0.8, 0.8, 0.6]);
        let (other, _) = mave_objective(&data, &rotated, 0.9, SmoothingKernel::Gaussian).unwrap();
        assert_abs_diff_eq!(fit.objective, other, epsilon = 1e-9 * other);
    }

    #[test]
    fn bic_picks_one_for_noiseless_single_index() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n = 100;
        let x = gaussian_x(n, 3, &mut rng);
        let y = DVector::from_fn(n, |i, _| x[(i, 0)] + x[(i, 1)]);
        let data = Dataset::new(x, y).unwrap();
        let opg = opg_estimate(&data, bandwidth_rule(1.5, n, 3)).unwrap();
        let path = bic_select_q(&data, 1.5, &opg.eigenvectors, &MaveOptions::default()).unwrap();
        assert_eq!(path.q_hat, 1);
    }

    #[test]
    fn fixed_selector_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = gaussian_x(50, 2, &mut rng);
        let y = DVector::from_fn(50, |i, _| x[(i, 0)]);
        let data = Dataset::new(x, y).unwrap();
        let cfg = ProjectionConfig {
            selector: DimensionSelector::Fixed(3),
            ..Default::default()
        };
        assert!(estimate_projection(&data, &cfg).is_err());
        let cfg = ProjectionConfig {
            selector: DimensionSelector::Fixed(2),
            method: ProjectionMethod::Mave,
            ..Default::default()
        };
        let est = estimate_projection(&data, &cfg).unwrap();
        assert_eq!(est.q_hat, 2);
        assert!(is_orthonormal(&est.b_hat, 1e-8));
    }

    proptest! {
        #[test]
        fn rre_matches_enumeration(mut lam in proptest::collection::vec(0.0f64..5.0, 2..8), c in 0.001f64..1.0) {
            lam.sort_by(|a, b| b.total_cmp(a));
            let ratios: Vec<f64> = (1..lam.len()).map(|k| (lam[k] + c) / (lam[k - 1] + c)).collect();
            let min = ratios.iter().copied().fold(f64::INFINITY, f64::min);
            let expected = ratios.iter().position(|r| *r == min).unwrap() + 1;
            prop_assert_eq!(rre_select_q_with_ridge(&lam, c).unwrap(), expected);
        }
    }
}
