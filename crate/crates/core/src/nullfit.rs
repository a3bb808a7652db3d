//! Least-squares fit of the parametric single-index null model
//! `y = g(beta' x, theta) + e`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::linalg::solve_psd_ridge;

/// Mean function `g(z, theta)` of a user-supplied null model.
pub type MeanFn = dyn Fn(f64, &[f64]) -> f64 + Send + Sync;
/// Analytic gradient `(dg/dz, dg/dtheta)` of a user-supplied mean function.
pub type MeanGradFn = dyn Fn(f64, &[f64]) -> (f64, Vec<f64>) + Send + Sync;

#[derive(Clone)]
pub struct CustomMean {
    pub d: usize,
    pub mean: Arc<MeanFn>,
    pub gradient: Option<Arc<MeanGradFn>>,
    pub theta_start: Vec<f64>,
}

impl fmt::Debug for CustomMean {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomMean")
            .field("d", &self.d)
            .field("analytic_gradient", &self.gradient.is_some())
            .finish()
    }
}

#[derive(Debug, Clone)]
pub enum NullForm {
    /// `g = beta' x (+ theta_0)`.
    Linear { intercept: bool },
    /// `g = theta_1 exp(theta_2 beta' x)` with `|beta| = 1`.
    ScaledExp,
    Custom(CustomMean),
}

#[derive(Debug, Clone)]
pub struct NullModelSpec {
    pub form: NullForm,
    pub p: usize,
}

impl NullModelSpec {
    pub fn linear(p: usize, intercept: bool) -> Self {
        Self {
            form: NullForm::Linear { intercept },
            p,
        }
    }

    pub fn scaled_exp(p: usize) -> Self {
        Self {
            form: NullForm::ScaledExp,
            p,
        }
    }

    /// Number of `theta` parameters.
    pub fn d(&self) -> usize {
        match &self.form {
            NullForm::Linear { intercept } => usize::from(*intercept),
            NullForm::ScaledExp => 2,
            NullForm::Custom(c) => c.d,
        }
    }

    /// Evaluate `g(z, theta)`.
    pub fn mean(&self, z: f64, theta: &[f64]) -> f64 {
        match &self.form {
            NullForm::Linear { intercept } => {
                if *intercept {
                    z + theta[0]
                } else {
                    z
                }
            }
            NullForm::ScaledExp => theta[0] * (theta[1] * z).exp(),
            NullForm::Custom(c) => (c.mean)(z, theta),
        }
    }

    fn analytic_gradient(&self, z: f64, theta: &[f64]) -> Option<(f64, Vec<f64>)> {
        match &self.form {
            NullForm::Linear { intercept } => Some((1.0, if *intercept { vec![1.0] } else { vec![] })),
            NullForm::ScaledExp => {
                let e = (theta[1] * z).exp();
                Some((theta[0] * theta[1] * e, vec![e, theta[0] * z * e]))
            }
            NullForm::Custom(c) => c.gradient.as_ref().map(|g| g(z, theta)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub max_iter: usize,
    pub restarts: usize,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iter: 200,
            restarts: 5,
            tolerance: 1e-10,
            seed: 0x5eed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullModelFit {
    pub beta_hat: Vec<f64>,
    pub theta_hat: Vec<f64>,
    #[serde(skip)]
    pub residuals: Vec<f64>,
    #[serde(skip)]
    pub fitted: Vec<f64>,
    pub rss0: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Fit the null model by least squares.
///
/// The linear form is solved exactly through a QR decomposition; the other
/// forms run Levenberg-Marquardt from a linear pilot fit with random
/// restarts around it when an attempt fails to converge.
pub fn fit_null_model(
    data: &Dataset,
    spec: &NullModelSpec,
    options: &FitOptions,
) -> Result<NullModelFit> {
    let (n, p) = (data.n(), data.p());
    if spec.p != p {
        return Err(Error::InvalidArgument(format!(
            "null model declares p = {} but data has {p} covariates",
            spec.p
        )));
    }
    let d = spec.d();
    if n <= p + d {
        return Err(Error::InvalidArgument(format!(
            "need n > p + d, got n = {n}, p + d = {}",
            p + d
        )));
    }
    match &spec.form {
        NullForm::Linear { intercept } => fit_linear(data, *intercept),
        _ => fit_nonlinear(data, spec, options),
    }
}

fn fit_linear(data: &Dataset, intercept: bool) -> Result<NullModelFit> {
    let (n, p) = (data.n(), data.p());
    let cols = p + usize::from(intercept);
    let design = DMatrix::from_fn(n, cols, |i, j| {
        if j < p {
            data.x()[(i, j)]
        } else {
            1.0
        }
    });
    let qr = design.clone().qr();
    let r = qr.r();
    let scale = r.diagonal().amax();
    if r.diagonal().iter().any(|v| v.abs() <= 1e-10 * scale.max(f64::MIN_POSITIVE)) {
        return Err(Error::SingularDesign(
            "covariate design is rank deficient".into(),
        ));
    }
    let qty = qr.q().transpose() * data.y();
    let coef = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::SingularDesign("triangular solve failed".into()))?;
    let fitted = &design * &coef;
    let residuals: Vec<f64> = (data.y() - &fitted).iter().copied().collect();
    let rss0 = residuals.iter().map(|e| e * e).sum();
    Ok(NullModelFit {
        beta_hat: coef.rows(0, p).iter().copied().collect(),
        theta_hat: coef.rows(p, cols - p).iter().copied().collect(),
        residuals,
        fitted: fitted.iter().copied().collect(),
        rss0,
        converged: true,
        iterations: 1,
    })
}

struct LmOutcome {
    params: Vec<f64>,
    rss: f64,
    converged: bool,
    iterations: usize,
}

fn fit_nonlinear(data: &Dataset, spec: &NullModelSpec, options: &FitOptions) -> Result<NullModelFit> {
    let p = data.p();
    let start = pilot_start(data, spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut best: Option<LmOutcome> = None;
    let mut total_iter = 0;
    for attempt in 0..=options.restarts {
        let init = if attempt == 0 {
            start.clone()
        } else {
            perturb_in_unit_ball(&start, &mut rng)
        };
        let out = levenberg_marquardt(data, spec, init, options);
        total_iter += out.iterations;
        let converged = out.converged;
        let better = best.as_ref().map_or(true, |b| out.rss < b.rss || converged && !b.converged);
        if better && out.rss.is_finite() {
            best = Some(out);
        }
        if converged {
            break;
        }
    }
    let best = best.ok_or_else(|| Error::Numerical("all null-model fits produced non-finite rss".into()))?;
    if !best.converged {
        return Err(Error::Convergence {
            restarts: options.restarts,
            best_params: best.params,
            best_rss: best.rss,
        });
    }
    let (beta, theta) = identify(spec, &best.params[..p], &best.params[p..]);
    let (fitted, residuals) = fitted_and_residuals(data, spec, &beta, &theta);
    let rss0 = residuals.iter().map(|e| e * e).sum();
    Ok(NullModelFit {
        beta_hat: beta,
        theta_hat: theta,
        residuals,
        fitted,
        rss0,
        converged: true,
        iterations: total_iter,
    })
}

fn fitted_and_residuals(
    data: &Dataset,
    spec: &NullModelSpec,
    beta: &[f64],
    theta: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let b = DVector::from_column_slice(beta);
    let z = data.x() * b;
    let fitted: Vec<f64> = z.iter().map(|&zi| spec.mean(zi, theta)).collect();
    let residuals = data.y().iter().zip(&fitted).map(|(y, f)| y - f).collect();
    (fitted, residuals)
}

/// Normalize `|beta| = 1` with the first nonzero coordinate positive, folding
/// the scale into `theta` where the form allows it.
fn identify(spec: &NullModelSpec, beta: &[f64], theta: &[f64]) -> (Vec<f64>, Vec<f64>) {
    match spec.form {
        NullForm::ScaledExp => {
            let norm = beta.iter().map(|b| b * b).sum::<f64>().sqrt();
            let first = beta.iter().copied().find(|b| *b != 0.0).unwrap_or(1.0);
            let s = if first < 0.0 { -norm } else { norm };
            if s == 0.0 {
                return (beta.to_vec(), theta.to_vec());
            }
            (
                beta.iter().map(|b| b / s).collect(),
                vec![theta[0], theta[1] * s],
            )
        }
        _ => (beta.to_vec(), theta.to_vec()),
    }
}

fn pilot_start(data: &Dataset, spec: &NullModelSpec) -> Result<Vec<f64>> {
    let p = data.p();
    let lin = fit_linear(data, true)?;
    let slope = &lin.beta_hat;
    let intercept = lin.theta_hat[0];
    let norm = slope.iter().map(|b| b * b).sum::<f64>().sqrt();
    let mut params = Vec::with_capacity(p + spec.d());
    match &spec.form {
        NullForm::ScaledExp => {
            // first-order expansion of theta1 exp(theta2 z) around z = 0
            let dir: Vec<f64> = if norm > 0.0 {
                slope.iter().map(|b| b / norm).collect()
            } else {
                let mut e = vec![0.0; p];
                e[0] = 1.0;
                e
            };
            let theta1 = if intercept.abs() > 1e-8 { intercept } else { 1.0 };
            params.extend(dir);
            params.push(theta1);
            params.push(norm / theta1);
        }
        NullForm::Custom(c) => {
            params.extend(slope.iter().copied());
            let mut theta = c.theta_start.clone();
            theta.resize(c.d, 0.0);
            params.extend(theta);
        }
        NullForm::Linear { .. } => unreachable!("linear form is solved directly"),
    }
    Ok(params)
}

fn perturb_in_unit_ball(center: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
    let dim = center.len();
    let dir: Vec<f64> = (0..dim)
        .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
        .collect();
    let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
    let radius = rng.random::<f64>().powf(1.0 / dim as f64);
    center
        .iter()
        .zip(&dir)
        .map(|(c, v)| c + radius * v / norm)
        .collect()
}

fn rss_at(data: &Dataset, spec: &NullModelSpec, params: &[f64]) -> f64 {
    let p = data.p();
    let (_, res) = fitted_and_residuals(data, spec, &params[..p], &params[p..]);
    let rss: f64 = res.iter().map(|e| e * e).sum();
    if rss.is_finite() {
        rss
    } else {
        f64::INFINITY
    }
}

/// Jacobian of the fitted values with respect to `(beta, theta)`.
fn jacobian(data: &Dataset, spec: &NullModelSpec, params: &[f64]) -> DMatrix<f64> {
    let (n, p) = (data.n(), data.p());
    let dim = params.len();
    let beta = DVector::from_column_slice(&params[..p]);
    let theta = &params[p..];
    let z = data.x() * beta;
    let mut jac = DMatrix::zeros(n, dim);
    if spec.analytic_gradient(0.0, theta).is_some() {
        for i in 0..n {
            let (gz, gt) = spec.analytic_gradient(z[i], theta).expect("checked above");
            for j in 0..p {
                jac[(i, j)] = gz * data.x()[(i, j)];
            }
            for (k, g) in gt.iter().enumerate() {
                jac[(i, p + k)] = *g;
            }
        }
        return jac;
    }
    let mut plus = params.to_vec();
    let mut minus = params.to_vec();
    for k in 0..dim {
        let step = 1e-6 * (1.0 + params[k].abs());
        plus[k] = params[k] + step;
        minus[k] = params[k] - step;
        let (fp, _) = fitted_and_residuals(data, spec, &plus[..p], &plus[p..]);
        let (fm, _) = fitted_and_residuals(data, spec, &minus[..p], &minus[p..]);
        for i in 0..n {
            jac[(i, k)] = (fp[i] - fm[i]) / (2.0 * step);
        }
        plus[k] = params[k];
        minus[k] = params[k];
    }
    jac
}

fn levenberg_marquardt(
    data: &Dataset,
    spec: &NullModelSpec,
    mut params: Vec<f64>,
    options: &FitOptions,
) -> LmOutcome {
    let p = data.p();
    let mut rss = rss_at(data, spec, &params);
    let mut lambda = 1e-3;
    for iter in 1..=options.max_iter {
        if !rss.is_finite() {
            return LmOutcome {
                params,
                rss,
                converged: false,
                iterations: iter,
            };
        }
        let jac = jacobian(data, spec, &params);
        let (_, res) = fitted_and_residuals(data, spec, &params[..p], &params[p..]);
        let r = DVector::from_vec(res);
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * &r;
        if jtr.amax() <= options.tolerance * (1.0 + rss) {
            return LmOutcome {
                params,
                rss,
                converged: true,
                iterations: iter,
            };
        }
        let mut accepted = false;
        for _ in 0..30 {
            let mut damped = jtj.clone();
            for k in 0..damped.nrows() {
                damped[(k, k)] += lambda * jtj[(k, k)].max(1e-12);
            }
            let Some(step) = solve_psd_ridge(&damped, &jtr, 0.0) else {
                lambda *= 10.0;
                continue;
            };
            let trial: Vec<f64> = params.iter().zip(step.iter()).map(|(a, s)| a + s).collect();
            let trial_rss = rss_at(data, spec, &trial);
            if trial_rss < rss {
                let rel = (rss - trial_rss) / rss.max(f64::MIN_POSITIVE);
                let small_step = step.norm() <= options.tolerance * (1.0 + DVector::from_column_slice(&params).norm());
                params = trial;
                rss = trial_rss;
                lambda = (lambda / 10.0).max(1e-15);
                accepted = true;
                if rel <= options.tolerance || small_step {
                    return LmOutcome {
                        params,
                        rss,
                        converged: true,
                        iterations: iter,
                    };
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            // no descent direction left: a stationary point up to roundoff
            return LmOutcome {
                params,
                rss,
                converged: lambda > 1e10,
                iterations: iter,
            };
        }
    }
    LmOutcome {
        params,
        rss,
        converged: false,
        iterations: options.max_iter,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand_distr::{Distribution, StandardNormal};

    fn normal_data(n: usize, p: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng))
    }

    #[test]
    fn exact_linear_interpolation() {
        let p = 4;
        let x = normal_data(30, p, 1);
        let beta = DVector::from_element(p, 1.0 / (p as f64).sqrt());
        let y = &x * &beta;
        let data = Dataset::new(x, y).unwrap();
        let fit = fit_null_model(&data, &NullModelSpec::linear(p, false), &FitOptions::default()).unwrap();
        for b in &fit.beta_hat {
            assert_abs_diff_eq!(*b, 0.5, epsilon = 1e-10);
        }
        assert!(fit.rss0 <= 1e-18 * 30.0);
    }

    #[test]
    fn constant_response_absorbed_by_intercept() {
        let x = normal_data(20, 3, 2);
        let y = DVector::from_element(20, 4.2);
        let data = Dataset::new(x, y).unwrap();
        let fit = fit_null_model(&data, &NullModelSpec::linear(3, true), &FitOptions::default()).unwrap();
        for b in &fit.beta_hat {
            assert_abs_diff_eq!(*b, 0.0, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(fit.theta_hat[0], 4.2, epsilon = 1e-12);
        assert!(fit.rss0 < 1e-20);
    }

    #[test]
    fn three_point_toy() {
        let data = Dataset::from_rows(&[vec![1.0], vec![2.0], vec![3.0]], &[2.0, 4.0, 6.0]).unwrap();
        let fit = fit_null_model(&data, &NullModelSpec::linear(1, false), &FitOptions::default()).unwrap();
        assert_abs_diff_eq!(fit.beta_hat[0], 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(fit.rss0, 0.0, epsilon = 1e-24);
    }

    #[test]
    fn rank_deficient_design_rejected() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, 2.0 * i as f64]).collect();
        let y: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let data = Dataset::from_rows(&rows, &y).unwrap();
        let err = fit_null_model(&data, &NullModelSpec::linear(2, false), &FitOptions::default()).unwrap_err();
        assert!(matches!(err, Error::SingularDesign(_)));
    }

    #[test]
    fn too_few_observations() {
        let data = Dataset::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]], &[1.0, 2.0]).unwrap();
        assert!(fit_null_model(&data, &NullModelSpec::linear(2, true), &FitOptions::default()).is_err());
    }

    #[test]
    fn residuals_sum_to_zero_with_intercept() {
        let x = normal_data(50, 3, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let y = DVector::from_fn(50, |i, _| x[(i, 0)].powi(2) + { let e: f64 = StandardNormal.sample(&mut rng); e });
        let data = Dataset::new(x, y).unwrap();
        let fit = fit_null_model(&data, &NullModelSpec::linear(3, true), &FitOptions::default()).unwrap();
        let s: f64 = fit.residuals.iter().sum();
        assert!(s.abs() <= 1e-9 * 50.0);
        let rss: f64 = fit.residuals.iter().map(|e| e * e).sum();
        assert_abs_diff_eq!(rss, fit.rss0, epsilon = 1e-12 * fit.rss0);
    }

    #[test]
    fn scaled_exp_recovers_parameters() {
        let p = 4;
        let n = 300;
        let x = normal_data(n, p, 4);
        let beta = DVector::from_element(p, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let y = DVector::from_fn(n, |i, _| {
            let z = x.row(i).dot(&beta.transpose());
            1.5 * (0.5 * z).exp() + 0.1 * { let e: f64 = StandardNormal.sample(&mut rng); e }
        });
        let data = Dataset::new(x, y).unwrap();
        let fit = fit_null_model(&data, &NullModelSpec::scaled_exp(p), &FitOptions::default()).unwrap();
        assert!(fit.converged);
        let norm: f64 = fit.beta_hat.iter().map(|b| b * b).sum::<f64>().sqrt();
        assert_abs_diff_eq!(norm, 1.0, epsilon = 1e-12);
        for b in &fit.beta_hat {
            assert_abs_diff_eq!(*b, 0.5, epsilon = 0.02);
        }
        assert_abs_diff_eq!(fit.theta_hat[0], 1.5, epsilon = 0.03);
        assert_abs_diff_eq!(fit.theta_hat[1], 0.5, epsilon = 0.02);
    }

    #[test]
    fn custom_form_with_numeric_gradient() {
        let n = 200;
        let x = normal_data(n, 2, 6);
        let y = DVector::from_fn(n, |i, _| {
            let z = 0.6 * x[(i, 0)] + 0.8 * x[(i, 1)];
            2.0 + z + 0.3 * z * z
        });
        let data = Dataset::new(x, y).unwrap();
        let spec = NullModelSpec {
            form: NullForm::Custom(CustomMean {
                d: 2,
                mean: Arc::new(|z, t| t[0] + z + t[1] * z * z),
                gradient: None,
                theta_start: vec![0.0, 0.0],
            }),
            p: 2,
        };
        let fit = fit_null_model(&data, &spec, &FitOptions::default()).unwrap();
        assert!(fit.rss0 < 1e-10, "rss0 = {}", fit.rss0);
        assert_abs_diff_eq!(fit.theta_hat[0], 2.0, epsilon = 1e-5);
    }

    #[test]
    fn refit_on_fitted_values_is_exact() {
        let x = normal_data(40, 3, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let y = DVector::from_fn(40, |_, _| StandardNormal.sample(&mut rng));
        let data = Dataset::new(x.clone(), y).unwrap();
        let spec = NullModelSpec::linear(3, true);
        let fit = fit_null_model(&data, &spec, &FitOptions::default()).unwrap();
        let again = Dataset::new(x, DVector::from_vec(fit.fitted.clone())).unwrap();
        let refit = fit_null_model(&again, &spec, &FitOptions::default()).unwrap();
        assert!(refit.rss0 <= 1e-18 * 40.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn linear_fit_scale_equivariance(seed in 0u64..1000, c in prop_oneof![-5.0f64..-0.1, 0.1f64..5.0]) {
            let x = normal_data(25, 3, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
            let y = DVector::from_fn(25, |_, _| StandardNormal.sample(&mut rng));
            let spec = NullModelSpec::linear(3, true);
            let a = fit_null_model(&Dataset::new(x.clone(), y.clone()).unwrap(), &spec, &FitOptions::default()).unwrap();
            let b = fit_null_model(&Dataset::new(x, y * c).unwrap(), &spec, &FitOptions::default()).unwrap();
            for (u, v) in a.beta_hat.iter().zip(&b.beta_hat) {
                prop_assert!((c * u - v).abs() <= 1e-9 * (1.0 + v.abs()));
            }
            prop_assert!((c * a.theta_hat[0] - b.theta_hat[0]).abs() <= 1e-9 * (1.0 + b.theta_hat[0].abs()));
            prop_assert!((c * c * a.rss0 - b.rss0).abs() <= 1e-9 * b.rss0);
        }
    }
}
