//! Quartic (biweight) kernel, its product form, and the kernel constants that
//! enter the bias and variance of the likelihood-ratio statistics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Value of the quartic kernel at the origin, 15/16.
pub const K_AT_ZERO: f64 = 15.0 / 16.0;

/// Grid resolution used to tabulate the self-convolution on [-2, 2].
const CONVOLUTION_GRID: usize = 4097;

const MAX_SIMPSON_DEPTH: u32 = 50;

/// Quartic kernel without argument checks, for inner loops.
#[inline]
pub fn quartic(u: f64) -> f64 {
    let a = u.abs();
    if a <= 1.0 {
        let s = 1.0 - u * u;
        K_AT_ZERO * s * s
    } else {
        0.0
    }
}

/// `15/16 (1 - u^2)^2` on `|u| <= 1`, zero elsewhere.
pub fn kernel_eval(u: f64) -> Result<f64> {
    if !u.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "kernel argument must be finite, got {u}"
        )));
    }
    Ok(quartic(u))
}

/// Coordinate-wise product of quartic kernels.
pub fn product_kernel_eval(u: &[f64]) -> Result<f64> {
    if u.is_empty() {
        return Err(Error::InvalidArgument(
            "product kernel needs at least one coordinate".into(),
        ));
    }
    u.iter().try_fold(1.0, |acc, &v| Ok(acc * kernel_eval(v)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelConstants {
    pub k_at_zero: f64,
    pub int_k_squared: f64,
    pub int_two_k_minus_conv_squared: f64,
    pub quadrature_tolerance: f64,
}

/// Compute the kernel constants by quadrature.
///
/// `int K^2` uses adaptive Simpson on [-1, 1]. The self-convolution `K*K`
/// is tabulated on a uniform grid over its support [-2, 2] (each node by
/// adaptive Simpson) and `int (2K - K*K)^2` is then integrated over the grid
/// with composite Simpson. The grid puts nodes on +-1 where `K` has a
/// curvature jump.
pub fn kernel_constants(tolerance: f64) -> Result<KernelConstants> {
    if !(tolerance > 0.0) || !tolerance.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "quadrature tolerance must be positive, got {tolerance}"
        )));
    }
    let int_k_squared = adaptive_simpson(&|u| quartic(u).powi(2), -1.0, 1.0, tolerance)?;

    let conv = convolution_grid(tolerance)?;
    let step = 4.0 / (CONVOLUTION_GRID - 1) as f64;
    let integrand: Vec<f64> = conv
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let u = -2.0 + step * i as f64;
            (2.0 * quartic(u) - c).powi(2)
        })
        .collect();
    let int_two_k_minus_conv_squared = composite_simpson(&integrand, step);

    Ok(KernelConstants {
        k_at_zero: K_AT_ZERO,
        int_k_squared,
        int_two_k_minus_conv_squared,
        quadrature_tolerance: tolerance,
    })
}

/// `K*K(x) = int K(t) K(x - t) dt`, evaluated by adaptive quadrature.
pub fn self_convolution(x: f64, tolerance: f64) -> Result<f64> {
    let lo = (x - 1.0).max(-1.0);
    let hi = (x + 1.0).min(1.0);
    if lo >= hi {
        return Ok(0.0);
    }
    adaptive_simpson(&|t| quartic(t) * quartic(x - t), lo, hi, tolerance)
}

fn convolution_grid(tolerance: f64) -> Result<Vec<f64>> {
    let step = 4.0 / (CONVOLUTION_GRID - 1) as f64;
    (0..CONVOLUTION_GRID)
        .map(|i| self_convolution(-2.0 + step * i as f64, tolerance))
        .collect()
}

fn composite_simpson(values: &[f64], step: f64) -> f64 {
    debug_assert!(values.len() % 2 == 1);
    let last = values.len() - 1;
    let mut sum = values[0] + values[last];
    for (i, v) in values.iter().enumerate().take(last).skip(1) {
        sum += if i % 2 == 1 { 4.0 * v } else { 2.0 * v };
    }
    sum * step / 3.0
}

/// Adaptive Simpson quadrature with Richardson correction.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tolerance: f64) -> Result<f64> {
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(f, a, b, fa, fm, fb, whole, tolerance, MAX_SIMPSON_DEPTH)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tolerance: f64,
    depth: u32,
) -> Result<f64> {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if delta.abs() <= 15.0 * tolerance {
        return Ok(left + right + delta / 15.0);
    }
    if depth == 0 {
        return Err(Error::Numerical(format!(
            "adaptive quadrature on [{a}, {b}] did not reach tolerance {tolerance}"
        )));
    }
    let l = simpson_step(f, a, m, fa, flm, fm, left, tolerance / 2.0, depth - 1)?;
    let r = simpson_step(f, m, b, fm, frm, fb, right, tolerance / 2.0, depth - 1)?;
    Ok(l + r)
}
