//! Real-data pipeline: ingest, fit a linear null, run one or more tests.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Result, Stage, StageExt};
use crate::glrtest::TestReport;
use crate::ingest::{load_dataset, ColumnSchema};
use crate::nullfit::{fit_null_model, FitOptions, NullModelSpec};
use crate::simlab::{run_method, NamedMethod};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedReport {
    pub method: String,
    pub report: TestReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub schema_version: u32,
    pub n: usize,
    pub covariates: Vec<String>,
    pub response: String,
    pub intercept: bool,
    pub beta_hat: Vec<f64>,
    pub theta_hat: Vec<f64>,
    pub reports: Vec<NamedReport>,
}

impl AnalysisReport {
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "linear null for {} on [{}], n = {}{}",
            self.response,
            self.covariates.join(", "),
            self.n,
            if self.intercept { ", with intercept" } else { "" }
        );
        let beta: Vec<String> = self.beta_hat.iter().map(|b| format!("{b:.4}")).collect();
        let _ = writeln!(s, "beta_hat = ({})", beta.join(", "));
        for r in &self.reports {
            let rep = &r.report;
            let stat = rep.decision_statistic();
            let _ = writeln!(
                s,
                "{:<10} statistic {:>9.4}  p-value {:.4}  {}  q_hat {}  h {:.4}",
                r.method,
                stat,
                rep.p_value,
                if rep.reject { "reject" } else { "do not reject" },
                rep.q_hat,
                rep.bandwidth
            );
        }
        s
    }
}

pub fn analyze_dataset(data: &Dataset, intercept: bool, methods: &[NamedMethod], seed: u64) -> Result<AnalysisReport> {
    let spec = NullModelSpec::linear(data.p(), intercept);
    let fit = fit_null_model(data, &spec, &FitOptions::default()).at(Stage::NullFit)?;
    let reports = methods
        .iter()
        .map(|m| {
            Ok(NamedReport {
                method: m.name.clone(),
                report: run_method(&m.method, data, &spec, seed)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AnalysisReport {
        schema_version: crate::glrtest::REPORT_SCHEMA_VERSION,
        n: data.n(),
        covariates: data.covariate_names().to_vec(),
        response: data.response_name().to_string(),
        intercept,
        beta_hat: fit.beta_hat,
        theta_hat: fit.theta_hat,
        reports,
    })
}

pub fn analyze(path: &Path, schema: &ColumnSchema, intercept: bool, methods: &[NamedMethod], seed: u64) -> Result<AnalysisReport> {
    let data = load_dataset(path, schema).at(Stage::Ingest)?;
    analyze_dataset(&data, intercept, methods, seed)
}
