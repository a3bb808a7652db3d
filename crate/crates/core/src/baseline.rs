//! Full-dimensional likelihood-ratio test on a p-dimensional kernel smoother,
//! calibrated either by the plug-in normal approximation or by a wild
//! bootstrap.

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::dimred::bandwidth_rule;
use crate::error::{Error, Result, Stage, StageExt};
use crate::glrtest::{
    normal_p_value, nuisance_estimates, statistic_sn, statistic_tn, NuisanceEstimates, TestReport, TnResult,
    Variant, REPORT_SCHEMA_VERSION,
};
use crate::nullfit::{fit_null_model, FitOptions, NullModelFit, NullModelSpec};
use crate::seeds::stream_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum WeightScheme {
    /// Two-point distribution with mean 0, variance 1 and third moment 1.
    Mammen,
    /// Symmetric signs.
    #[default]
    Rademacher,
}

impl WeightScheme {
    pub fn draw<R: Rng + ?Sized>(self, rng: &mut R) -> f64 {
        match self {
            WeightScheme::Rademacher => {
                if rng.random::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
            WeightScheme::Mammen => {
                let s5 = 5f64.sqrt();
                let p_low = (s5 + 1.0) / (2.0 * s5);
                if rng.random::<f64>() < p_low {
                    (1.0 - s5) / 2.0
                } else {
                    (1.0 + s5) / 2.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub b_resamples: usize,
    pub weight_scheme: WeightScheme,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            b_resamples: 250,
            weight_scheme: WeightScheme::Rademacher,
            seed: 0x0b00_7500,
        }
    }
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.b_resamples < 100 {
            return Err(Error::Config(format!(
                "bootstrap needs at least 100 resamples, got {}",
                self.b_resamples
            )));
        }
        Ok(())
    }
}

/// Bandwidth of the full-dimensional smoother.
pub fn fzz_bandwidth(scale: f64, n: usize, p: usize) -> f64 {
    bandwidth_rule(scale, n, p)
}

/// Likelihood ratio against the p-dimensional Nadaraya-Watson fit on raw x.
pub fn fzz_statistic(data: &Dataset, fit: &NullModelFit, h_full: f64) -> Result<TnResult> {
    let eye = DMatrix::identity(data.p(), data.p());
    statistic_tn(data, fit, &eye, h_full)
}

/// Plug-in standardization with normalizer `h^p`.
pub fn fzz_asymptotic(data: &Dataset, fit: &NullModelFit, h_full: f64) -> Result<(TnResult, NuisanceEstimates, f64, f64)> {
    let tn = fzz_statistic(data, fit, h_full)?;
    let h_norm = h_full.powi(data.p() as i32);
    let nuisance = nuisance_estimates(&tn.weights, &tn.residuals_np, h_norm)?;
    let z = statistic_sn(tn.t_n, &nuisance, h_norm, tn.n_used)?;
    Ok((tn, nuisance, z.standardized, z.adjusted))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapOutcome {
    pub p_value: f64,
    pub exceed: usize,
    pub succeeded: usize,
    pub failed: usize,
}

/// Wild bootstrap p-value `(1 + #{|T*| >= |T|}) / (B + 1)`.
///
/// Each resample is `fitted + e * v` with i.i.d. multipliers `v`; the null is
/// refitted and `statistic` recomputed. Resample `b` draws from its own
/// counter-derived stream, so the result does not depend on scheduling.
pub fn wild_bootstrap_pvalue<F>(
    data: &Dataset,
    spec: &NullModelSpec,
    fit: &NullModelFit,
    fit_options: &FitOptions,
    observed: f64,
    statistic: F,
    config: &BootstrapConfig,
) -> Result<BootstrapOutcome>
where
    F: Fn(&Dataset, &NullModelFit) -> Result<f64> + Sync,
{
    config.validate()?;
    let n = data.n();
    let outcomes: Vec<Option<bool>> = (0..config.b_resamples)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream_rng(config.seed, &[b as u64]);
            let y_star = nalgebra::DVector::from_fn(n, |i, _| {
                fit.fitted[i] + fit.residuals[i] * config.weight_scheme.draw(&mut rng)
            });
            let resample = data.with_response(y_star).ok()?;
            let refit = fit_null_model(&resample, spec, fit_options).ok()?;
            let t = statistic(&resample, &refit).ok()?;
            t.is_finite().then_some(t.abs() >= observed.abs())
        })
        .collect();
    let failed = outcomes.iter().filter(|o| o.is_none()).count();
    if failed * 10 > config.b_resamples {
        return Err(Error::BootstrapUnstable {
            failed,
            total: config.b_resamples,
        });
    }
    let exceed = outcomes.iter().filter(|o| **o == Some(true)).count();
    let succeeded = config.b_resamples - failed;
    Ok(BootstrapOutcome {
        p_value: (1 + exceed) as f64 / (succeeded + 1) as f64,
        exceed,
        succeeded,
        failed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum Calibration {
    Asymptotic,
    Bootstrap(BootstrapConfig),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FzzConfig {
    pub calibration: Calibration,
    pub bandwidth_scale: f64,
    pub alpha: f64,
    pub one_sided: bool,
    pub fit: FitOptions,
}

impl Default for FzzConfig {
    fn default() -> Self {
        Self {
            calibration: Calibration::Bootstrap(BootstrapConfig::default()),
            bandwidth_scale: 1.5,
            alpha: 0.05,
            one_sided: false,
            fit: FitOptions::default(),
        }
    }
}

pub fn run_fzz(data: &Dataset, spec: &NullModelSpec, config: &FzzConfig) -> Result<TestReport> {
    if !(config.alpha > 0.0 && config.alpha < 1.0) {
        return Err(Error::Config(format!("alpha must lie in (0, 1), got {}", config.alpha)));
    }
    let fit = fit_null_model(data, spec, &config.fit).at(Stage::NullFit)?;
    let p = data.p();
    let h = fzz_bandwidth(config.bandwidth_scale, data.n(), p);
    let (variant, tn, nuisance, standardized, adjusted, p_value) = match config.calibration {
        Calibration::Asymptotic => {
            let (tn, nuisance, s, a) = fzz_asymptotic(data, &fit, h).at(Stage::Statistic)?;
            let p_value = normal_p_value(a, config.one_sided);
            (Variant::FzzAsymptotic, tn, nuisance, Some(s), Some(a), p_value)
        }
        Calibration::Bootstrap(boot) => {
            let tn = fzz_statistic(data, &fit, h).at(Stage::Statistic)?;
            let outcome = wild_bootstrap_pvalue(
                data,
                spec,
                &fit,
                &config.fit,
                tn.t_n,
                |d, f| Ok(fzz_statistic(d, f, h)?.t_n),
                &boot,
            )
            .at(Stage::Bootstrap)?;
            (Variant::FzzBootstrap, tn, NuisanceEstimates::default(), None, None, outcome.p_value)
        }
    };
    Ok(TestReport {
        schema_version: REPORT_SCHEMA_VERSION,
        variant,
        raw_statistic: tn.t_n,
        standardized,
        adjusted,
        p_value,
        reject: p_value <= config.alpha,
        alpha: config.alpha,
        one_sided: config.one_sided,
        q_hat: p,
        bandwidth: h,
        n_used: tn.n_used,
        dropped_rows: tn.weights.dropped.len(),
        rss0: tn.rss0,
        projection_method: None,
        selector: None,
        nuisance,
    })
}
