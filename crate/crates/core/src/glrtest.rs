//! Likelihood-ratio statistics on the projected smoother: the plain statistic
//! with plug-in bias and variance (S_n) and the bias-corrected, self-normalized
//! statistic (R_n).

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::dataset::Dataset;
use crate::dimred::{bandwidth_rule, estimate_projection, DimensionSelector, ProjectionConfig, ProjectionMethod};
use crate::error::{Error, Result, Stage, StageExt};
use crate::nullfit::{fit_null_model, FitOptions, NullModelFit, NullModelSpec};
use crate::smooth::{nw_weight_matrix, SmootherWeights};

/// Version of the JSON report layout.
pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Sn,
    Rn,
    SnAdjusted,
    RnAdjusted,
    FzzAsymptotic,
    FzzBootstrap,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NuisanceEstimates {
    pub l1_hat: Option<f64>,
    pub l2_hat: Option<f64>,
    pub l3_hat: Option<f64>,
    pub eta0_sq_hat: Option<f64>,
    pub q1_hat: Option<f64>,
    pub v0_hat: Option<f64>,
    pub v1_hat: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub schema_version: u32,
    pub variant: Variant,
    /// T_n, its bias-corrected counterpart, or the full-dimensional statistic.
    pub raw_statistic: f64,
    /// Normal-scale statistic; absent for bootstrap calibration.
    pub standardized: Option<f64>,
    pub adjusted: Option<f64>,
    pub p_value: f64,
    pub reject: bool,
    pub alpha: f64,
    pub one_sided: bool,
    pub q_hat: usize,
    pub bandwidth: f64,
    pub n_used: usize,
    pub dropped_rows: usize,
    pub rss0: f64,
    pub projection_method: Option<ProjectionMethod>,
    pub selector: Option<DimensionSelector>,
    pub nuisance: NuisanceEstimates,
}

impl TestReport {
    /// The value the p-value was computed from: the adjusted statistic for
    /// adjusted and plug-in variants, the unadjusted one for raw variants,
    /// and the likelihood ratio itself under the bootstrap.
    pub fn decision_statistic(&self) -> f64 {
        let pick = match self.variant {
            Variant::Sn | Variant::Rn => self.standardized,
            Variant::SnAdjusted | Variant::RnAdjusted | Variant::FzzAsymptotic => self.adjusted,
            Variant::FzzBootstrap => None,
        };
        pick.unwrap_or(self.raw_statistic)
    }
}

/// Finite-sample size adjustment divisor `1 + 4 n^(-4/5)`.
pub fn size_adjustment(n: usize) -> f64 {
    1.0 + 4.0 * (n as f64).powf(-0.8)
}

/// Standard normal p-value; two-sided unless `one_sided`, in which case large
/// positive values are evidence against the null.
pub fn normal_p_value(z: f64, one_sided: bool) -> f64 {
    let sqrt2 = std::f64::consts::SQRT_2;
    let p = if one_sided { 0.5 * erfc(z / sqrt2) } else { erfc(z.abs() / sqrt2) };
    p.clamp(0.0, 1.0)
}

/// `(n/2) log(rss0 / rss1)`.
pub fn tn_from_rss(n: usize, rss0: f64, rss1: f64) -> Result<f64> {
    if !(rss1 > 0.0) {
        return Err(Error::Degenerate(
            "nonparametric residual sum of squares is zero (exact interpolation)".into(),
        ));
    }
    if !(rss0 > 0.0) {
        return Err(Error::Degenerate(
            "null model fits the response exactly; the statistic is undefined".into(),
        ));
    }
    Ok(0.5 * n as f64 * (rss0 / rss1).ln())
}

#[derive(Debug, Clone)]
pub struct TnResult {
    pub t_n: f64,
    pub rss0: f64,
    pub rss1: f64,
    pub n_used: usize,
    /// `y - m_hat` for every row (dropped rows included).
    pub residuals_np: DVector<f64>,
    pub weights: SmootherWeights,
}

/// T_n on full (diagonal-inclusive) weights over `B' x`.
pub fn statistic_tn(data: &Dataset, fit: &NullModelFit, b: &DMatrix<f64>, h: f64) -> Result<TnResult> {
    let weights = nw_weight_matrix(data.x(), b, h, false)?;
    tn_with_weights(data, fit, weights)
}

pub(crate) fn tn_with_weights(data: &Dataset, fit: &NullModelFit, weights: SmootherWeights) -> Result<TnResult> {
    check_fit(data, fit)?;
    let y = data.y();
    let m_hat = weights.smooth(y);
    let residuals_np = y - m_hat;
    let mask = weights.retained_mask();
    let mut rss0 = 0.0;
    let mut rss1 = 0.0;
    let mut n_used = 0;
    for i in 0..data.n() {
        if mask[i] {
            rss0 += fit.residuals[i] * fit.residuals[i];
            rss1 += residuals_np[i] * residuals_np[i];
            n_used += 1;
        }
    }
    let t_n = tn_from_rss(n_used, rss0, rss1)?;
    Ok(TnResult {
        t_n,
        rss0,
        rss1,
        n_used,
        residuals_np,
        weights,
    })
}

fn check_fit(data: &Dataset, fit: &NullModelFit) -> Result<()> {
    if fit.residuals.len() != data.n() {
        return Err(Error::InvalidArgument(format!(
            "null fit has {} residuals for {} observations",
            fit.residuals.len(),
            data.n()
        )));
    }
    let scale: f64 = data.y().iter().map(|v| v * v).sum();
    if fit.rss0 <= 1e-24 * scale {
        return Err(Error::Degenerate(
            "null model fits the response exactly; the statistic is undefined".into(),
        ));
    }
    Ok(())
}

/// Plug-in estimates of the bias and variance constants of T_n.
///
/// `h_norm` is the bandwidth normalizer (`h` for the projected smoother,
/// `h^p` for a full-dimensional one). Sums run over retained rows only.
pub fn nuisance_estimates(weights: &SmootherWeights, residuals_np: &DVector<f64>, h_norm: f64) -> Result<NuisanceEstimates> {
    let n = weights.n();
    if residuals_np.len() != n {
        return Err(Error::InvalidArgument("residual length does not match weights".into()));
    }
    let mask = weights.retained_mask();
    let w = &weights.weights;
    let xi2: Vec<f64> = (0..n).map(|i| if mask[i] { residuals_np[i].powi(2) } else { 0.0 }).collect();
    let n_used = mask.iter().filter(|m| **m).count();

    let l1 = xi2.iter().sum::<f64>() / n_used as f64;

    let mut masked = w.clone();
    for i in 0..n {
        if !mask[i] {
            masked.row_mut(i).fill(0.0);
        }
    }
    // sum_k w_ki w_kj for all (i, j)
    let gram = masked.transpose() * &masked;

    let per_row: Vec<(f64, f64, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            if !mask[i] {
                return (0.0, 0.0, 0.0);
            }
            let mut l2 = 0.0;
            let mut eta = 0.0;
            for j in 0..n {
                l2 += w[(i, j)] * w[(i, j)] * xi2[j];
                if j != i {
                    let c = w[(i, j)] + w[(j, i)] - gram[(i, j)];
                    eta += xi2[i] * xi2[j] * c * c;
                }
            }
            (l2, w[(i, i)] * xi2[i], eta)
        })
        .collect();
    let (mut l2, mut l3, mut eta) = (0.0, 0.0, 0.0);
    for (a, b, c) in per_row {
        l2 += a;
        l3 += b;
        eta += c;
    }
    l2 *= h_norm;
    l3 *= h_norm;
    eta *= 2.0 * h_norm;

    if !(l1 > 0.0) {
        return Err(Error::Degenerate("all nonparametric residuals are zero".into()));
    }
    Ok(NuisanceEstimates {
        l1_hat: Some(l1),
        l2_hat: Some(l2),
        l3_hat: Some(l3),
        eta0_sq_hat: Some(eta),
        q1_hat: Some((l3 - 0.5 * l2) / l1),
        v0_hat: Some(eta / (4.0 * l1 * l1)),
        v1_hat: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Standardized {
    pub standardized: f64,
    pub adjusted: f64,
}

/// `sqrt(h / V0) (T_n - Q1 / h)` and its size-adjusted version.
pub fn statistic_sn(t_n: f64, nuisance: &NuisanceEstimates, h_norm: f64, n: usize) -> Result<Standardized> {
    let v0 = nuisance.v0_hat.unwrap_or(0.0);
    let q1 = nuisance
        .q1_hat
        .ok_or_else(|| Error::InvalidArgument("bias estimate missing".into()))?;
    if !(v0 > 0.0) {
        return Err(Error::Degenerate(format!("variance estimate is not positive ({v0})")));
    }
    let standardized = (h_norm / v0).sqrt() * (t_n - q1 / h_norm);
    Ok(Standardized {
        standardized,
        adjusted: standardized / size_adjustment(n),
    })
}

#[derive(Debug, Clone)]
pub struct RnResult {
    pub r_n: f64,
    /// Bias-corrected likelihood ratio `(n/2)(RSS0 - RSS1~)/RSS1~`.
    pub t_tilde: f64,
    pub v1_hat: f64,
    pub numerator: f64,
    pub denominator: f64,
    pub n_used: usize,
    pub rss0: f64,
    pub weights: SmootherWeights,
}

/// Bias-corrected statistic on leave-one-out weights over `B' x`.
pub fn statistic_rn(data: &Dataset, fit: &NullModelFit, b: &DMatrix<f64>, h: f64) -> Result<RnResult> {
    check_fit(data, fit)?;
    let weights = nw_weight_matrix(data.x(), b, h, true)?;
    let y = data.y();
    let m_tilde = weights.smooth(y);
    let mask = weights.retained_mask();
    let e = &fit.residuals;
    let w = &weights.weights;
    let n = data.n();

    let per_row: Vec<(f64, f64, f64, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            if !mask[i] {
                return (0.0, 0.0, 0.0, 0.0);
            }
            let u = y[i] - m_tilde[i];
            let num = e[i].abs() * (e[i].abs() - u.abs());
            let mut var = 0.0;
            for j in 0..n {
                if j != i && mask[j] {
                    var += w[(i, j)] * w[(i, j)] * e[j] * e[j];
                }
            }
            (num, var * e[i] * e[i], (e[i] * u).abs(), e[i] * e[i])
        })
        .collect();
    let (mut num, mut s, mut rss1_tilde, mut rss0) = (0.0, 0.0, 0.0, 0.0);
    for (a, b, c, d) in per_row {
        num += a;
        s += b;
        rss1_tilde += c;
        rss0 += d;
    }
    let n_used = mask.iter().filter(|m| **m).count();
    let denominator = (2.0 * s).sqrt();
    if !(denominator > 0.0) {
        return Err(Error::Degenerate(
            "bias-corrected variance is zero (all residuals or all off-diagonal weights vanish)".into(),
        ));
    }
    let nf = n_used as f64;
    let t_tilde = if rss1_tilde > 0.0 { 0.5 * nf * num / rss1_tilde } else { 0.0 };
    let v1_hat = if rss1_tilde > 0.0 {
        h * s / (2.0 * (rss1_tilde / nf).powi(2))
    } else {
        f64::INFINITY
    };
    Ok(RnResult {
        r_n: num / denominator,
        t_tilde,
        v1_hat,
        numerator: num,
        denominator,
        n_used,
        rss0,
        weights,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Statistic {
    Sn,
    #[default]
    Rn,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestConfig {
    pub statistic: Statistic,
    /// Apply the finite-sample size adjustment before computing the p-value.
    pub adjust: bool,
    pub alpha: f64,
    pub one_sided: bool,
    pub projection: ProjectionConfig,
    pub fit: FitOptions,
}

impl Default for TestConfig {
    fn default() -> Self {
        Self {
            statistic: Statistic::Rn,
            adjust: true,
            alpha: 0.05,
            one_sided: false,
            projection: ProjectionConfig::default(),
            fit: FitOptions::default(),
        }
    }
}

impl TestConfig {
    pub fn variant(&self) -> Variant {
        match (self.statistic, self.adjust) {
            (Statistic::Sn, false) => Variant::Sn,
            (Statistic::Sn, true) => Variant::SnAdjusted,
            (Statistic::Rn, false) => Variant::Rn,
            (Statistic::Rn, true) => Variant::RnAdjusted,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if !(self.projection.bandwidth_scale > 0.0) || !self.projection.bandwidth_scale.is_finite() {
            return Err(Error::Config(format!(
                "bandwidth scale must be positive, got {}",
                self.projection.bandwidth_scale
            )));
        }
        Ok(())
    }
}

/// Fit the null, estimate the projection and its dimension, and compute the
/// configured statistic at `h = scale * n^(-1/(4+q))`.
pub fn run_test(data: &Dataset, spec: &NullModelSpec, config: &TestConfig) -> Result<TestReport> {
    config.validate()?;
    let fit = fit_null_model(data, spec, &config.fit).at(Stage::NullFit)?;
    run_test_with_fit(data, &fit, config)
}

pub fn run_test_with_fit(data: &Dataset, fit: &NullModelFit, config: &TestConfig) -> Result<TestReport> {
    config.validate()?;
    let proj = estimate_projection(data, &config.projection).at(match config.projection.selector {
        DimensionSelector::Bic => Stage::Dimension,
        _ => Stage::Projection,
    })?;
    let h = bandwidth_rule(config.projection.bandwidth_scale, data.n(), proj.q_hat);
    let variant = config.variant();
    let (raw, z, nuisance, n_used, dropped, rss0) = match config.statistic {
        Statistic::Sn => {
            let tn = statistic_tn(data, fit, &proj.b_hat, h).at(Stage::Statistic)?;
            let nuisance = nuisance_estimates(&tn.weights, &tn.residuals_np, h).at(Stage::Statistic)?;
            let z = statistic_sn(tn.t_n, &nuisance, h, tn.n_used).at(Stage::Statistic)?;
            (tn.t_n, z, nuisance, tn.n_used, tn.weights.dropped.len(), tn.rss0)
        }
        Statistic::Rn => {
            let rn = statistic_rn(data, fit, &proj.b_hat, h).at(Stage::Statistic)?;
            let nuisance = NuisanceEstimates {
                v1_hat: Some(rn.v1_hat),
                ..Default::default()
            };
            let z = Standardized {
                standardized: rn.r_n,
                adjusted: rn.r_n / size_adjustment(rn.n_used),
            };
            (rn.t_tilde, z, nuisance, rn.n_used, rn.weights.dropped.len(), rn.rss0)
        }
    };
    let decision = if config.adjust { z.adjusted } else { z.standardized };
    let p_value = normal_p_value(decision, config.one_sided);
    Ok(TestReport {
        schema_version: REPORT_SCHEMA_VERSION,
        variant,
        raw_statistic: raw,
        standardized: Some(z.standardized),
        adjusted: Some(z.adjusted),
        p_value,
        reject: p_value <= config.alpha,
        alpha: config.alpha,
        one_sided: config.one_sided,
        q_hat: proj.q_hat,
        bandwidth: h,
        n_used,
        dropped_rows: dropped,
        rss0,
        projection_method: Some(proj.method),
        selector: Some(proj.selector),
        nuisance,
    })
}
