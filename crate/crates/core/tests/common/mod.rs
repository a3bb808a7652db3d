#![allow(dead_code)]

pub mod oracle;

use glrt::baseline::fzz_statistic;
use glrt::glrtest::{nuisance_estimates, statistic_rn, statistic_sn, statistic_tn};
use glrt::nullfit::{fit_null_model, FitOptions, NullModelSpec};
use glrt::Dataset;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use oracle::close;

pub const ORACLE_TOL: f64 = 1e-10;

/// A random regression problem with a mildly nonlinear mean and a projection
/// of dimension 1 or 2.
pub struct Case {
    pub data: Dataset,
    pub b: DMatrix<f64>,
}

pub fn random_case<R: Rng>(rng: &mut R) -> Case {
    let n = rng.random_range(8..=30);
    let p = rng.random_range(2..=4);
    let x = DMatrix::from_fn(n, p, |_, _| -> f64 { StandardNormal.sample(rng) });
    let y = DVector::from_fn(n, |i, _| {
        let lin: f64 = (0..p).map(|j| x[(i, j)] * (j as f64 + 1.0) / p as f64).sum();
        let noise: f64 = StandardNormal.sample(rng);
        lin + 0.5 * x[(i, 0)].powi(2) + 0.7 * noise
    });
    let q = rng.random_range(1..=2);
    let b = DMatrix::from_fn(p, q, |_, _| -> f64 { StandardNormal.sample(rng) });
    Case {
        data: Dataset::new(x, y).unwrap(),
        b,
    }
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn cols(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.ncols()).map(|j| m.column(j).iter().copied().collect()).collect()
}

/// Compare every statistic on one case against the naive oracle. Returns a
/// description of the first mismatch.
pub fn check_case(case: &Case) -> Result<(), String> {
    let data = &case.data;
    let n = data.n();
    let p = data.p();
    let q = case.b.ncols();
    let fit = fit_null_model(data, &NullModelSpec::linear(p, true), &FitOptions::default())
        .map_err(|e| e.to_string())?;
    let h = 1.5 * (n as f64).powf(-1.0 / (4.0 + q as f64));
    let h_full = 1.5 * (n as f64).powf(-1.0 / (4.0 + p as f64));

    let x = rows(data.x());
    let y: Vec<f64> = data.y().iter().copied().collect();
    let e = &fit.residuals;
    let z = oracle::project(&x, &cols(&case.b));

    let mut checks: Vec<(&str, f64, f64, Option<f64>)> = Vec::new();

    let want = oracle::tn_sn(&z, &y, e, h, h);
    let tn = statistic_tn(data, &fit, &case.b, h).map_err(|e| e.to_string())?;
    let nu = nuisance_estimates(&tn.weights, &tn.residuals_np, h).map_err(|e| e.to_string())?;
    let sn = statistic_sn(tn.t_n, &nu, h, tn.n_used).map_err(|e| e.to_string())?;
    if tn.n_used != want.n_used {
        return Err(format!("n_used {} vs {}", tn.n_used, want.n_used));
    }
    checks.push(("T_n", tn.t_n, want.t_n, None));
    checks.push(("L1", nu.l1_hat.unwrap(), want.l1, None));
    checks.push(("L2", nu.l2_hat.unwrap(), want.l2, None));
    checks.push(("L3", nu.l3_hat.unwrap(), want.l3, None));
    checks.push(("eta0^2", nu.eta0_sq_hat.unwrap(), want.eta0_sq, None));
    checks.push(("Q1", nu.q1_hat.unwrap(), want.q1, None));
    checks.push(("V0", nu.v0_hat.unwrap(), want.v0, None));
    checks.push(("S_n", sn.standardized, want.s_n, Some(want.s_n_scale)));

    let want_rn = oracle::rn(&z, &y, e, h);
    let rn = statistic_rn(data, &fit, &case.b, h).map_err(|e| e.to_string())?;
    if rn.n_used != want_rn.n_used {
        return Err(format!("R_n n_used {} vs {}", rn.n_used, want_rn.n_used));
    }
    checks.push(("R_n", rn.r_n, want_rn.r_n, Some(want_rn.r_n_scale)));
    checks.push(("T~_n", rn.t_tilde, want_rn.t_tilde, None));
    checks.push(("V1", rn.v1_hat, want_rn.v1, None));

    let zf = x.clone();
    let want_fzz = oracle::tn_sn(&zf, &y, e, h_full, h_full.powi(p as i32));
    match fzz_statistic(data, &fit, h_full) {
        Ok(fzz) => checks.push(("Tbar_n", fzz.t_n, want_fzz.t_n, None)),
        Err(err) => return Err(format!("Tbar_n failed: {err}")),
    }

    for (name, got, want, scale) in checks {
        if !close(got, want, scale, ORACLE_TOL) {
            return Err(format!("{name}: library {got:e} vs oracle {want:e} (n={n}, p={p}, q={q})"));
        }
    }
    Ok(())
}
