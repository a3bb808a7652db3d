//! Straight-line reimplementation of the test statistics on plain vectors.
//!
//! Nothing here touches the library's smoother or matrix code: weights are
//! built with explicit loops from the kernel formula and every sum is written
//! out element by element.

#![allow(dead_code)]

pub struct Naive {
    pub t_n: f64,
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    pub eta0_sq: f64,
    pub q1: f64,
    pub v0: f64,
    pub s_n: f64,
    /// Magnitude against which `s_n` is compared (it is a difference).
    pub s_n_scale: f64,
    pub n_used: usize,
}

pub struct NaiveRn {
    pub r_n: f64,
    pub r_n_scale: f64,
    pub t_tilde: f64,
    pub v1: f64,
    pub n_used: usize,
}

fn kern(u: f64) -> f64 {
    if u.abs() > 1.0 {
        0.0
    } else {
        0.9375 * (1.0 - u * u) * (1.0 - u * u)
    }
}

/// `z[i]` = projection of row `i` onto the columns of `b` (given row-major as
/// `b[col][coord]`), after Gram-Schmidt on `b`.
pub fn project(x: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for col in b {
        let mut v = col.clone();
        for u in &basis {
            let d: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            for k in 0..v.len() {
                v[k] -= d * u[k];
            }
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        basis.push(v.iter().map(|a| a / norm).collect());
    }
    x.iter()
        .map(|row| {
            basis
                .iter()
                .map(|u| row.iter().zip(u).map(|(a, b)| a * b).sum())
                .collect()
        })
        .collect()
}

/// Returns (weights, dropped flags).
pub fn weights(z: &[Vec<f64>], h: f64, loo: bool) -> (Vec<Vec<f64>>, Vec<bool>) {
    let n = z.len();
    let mut w = vec![vec![0.0; n]; n];
    let mut dropped = vec![false; n];
    for i in 0..n {
        let mut total = 0.0;
        for j in 0..n {
            if loo && i == j {
                continue;
            }
            let mut k = 1.0;
            for c in 0..z[i].len() {
                k *= kern((z[i][c] - z[j][c]) / h);
            }
            w[i][j] = k;
            total += k;
        }
        if total < n as f64 * 1e-12 {
            dropped[i] = true;
            for j in 0..n {
                w[i][j] = if j == i { 0.0 } else { 1.0 / (n - 1) as f64 };
            }
        } else {
            for j in 0..n {
                w[i][j] /= total;
            }
        }
    }
    (w, dropped)
}

/// T_n, the plug-in constants and S_n on full weights over `z`, with
/// normalizer `hn`.
pub fn tn_sn(z: &[Vec<f64>], y: &[f64], e: &[f64], h: f64, hn: f64) -> Naive {
    let n = y.len();
    let (w, dropped) = weights(z, h, false);
    let keep: Vec<bool> = dropped.iter().map(|d| !d).collect();
    let mut r = vec![0.0; n];
    for i in 0..n {
        let mut m = 0.0;
        for j in 0..n {
            m += w[i][j] * y[j];
        }
        r[i] = y[i] - m;
    }
    let mut rss0 = 0.0;
    let mut rss1 = 0.0;
    let mut used = 0;
    for i in 0..n {
        if keep[i] {
            rss0 += e[i] * e[i];
            rss1 += r[i] * r[i];
            used += 1;
        }
    }
    let t_n = used as f64 / 2.0 * (rss0 / rss1).ln();
    let l1 = rss1 / used as f64;
    let mut l2 = 0.0;
    let mut l3 = 0.0;
    let mut eta = 0.0;
    for i in 0..n {
        if !keep[i] {
            continue;
        }
        l3 += w[i][i] * r[i] * r[i];
        for j in 0..n {
            if !keep[j] {
                continue;
            }
            l2 += w[i][j] * w[i][j] * r[j] * r[j];
            if j == i {
                continue;
            }
            let mut conv = 0.0;
            for k in 0..n {
                if keep[k] {
                    conv += w[k][i] * w[k][j];
                }
            }
            let c = w[i][j] + w[j][i] - conv;
            eta += r[i] * r[i] * r[j] * r[j] * c * c;
        }
    }
    l2 *= hn;
    l3 *= hn;
    eta *= 2.0 * hn;
    let q1 = (l3 - l2 / 2.0) / l1;
    let v0 = eta / (4.0 * l1 * l1);
    let s = (hn / v0).sqrt();
    Naive {
        t_n,
        l1,
        l2,
        l3,
        eta0_sq: eta,
        q1,
        v0,
        s_n: s * (t_n - q1 / hn),
        s_n_scale: s * (t_n.abs() + (q1 / hn).abs()),
        n_used: used,
    }
}

/// R_n, T~_n and V1 on leave-one-out weights over `z`.
pub fn rn(z: &[Vec<f64>], y: &[f64], e: &[f64], h: f64) -> NaiveRn {
    let n = y.len();
    let (w, dropped) = weights(z, h, true);
    let mut num = 0.0;
    let mut num_scale = 0.0;
    let mut abs_prod = 0.0;
    let mut var = 0.0;
    let mut used = 0;
    for i in 0..n {
        if dropped[i] {
            continue;
        }
        used += 1;
        let mut m = 0.0;
        for j in 0..n {
            if j != i {
                m += w[i][j] * y[j];
            }
        }
        let u = y[i] - m;
        num += e[i].abs() * (e[i].abs() - u.abs());
        num_scale += e[i].abs() * (e[i].abs() + u.abs());
        abs_prod += (e[i] * u).abs();
        for j in 0..n {
            if j != i && !dropped[j] {
                var += w[i][j] * w[i][j] * e[i] * e[i] * e[j] * e[j];
            }
        }
    }
    let den = (2.0 * var).sqrt();
    let nf = used as f64;
    NaiveRn {
        r_n: num / den,
        r_n_scale: num_scale / den,
        t_tilde: nf / 2.0 * num / abs_prod,
        v1: h * var / (2.0 * (abs_prod / nf) * (abs_prod / nf)),
        n_used: used,
    }
}

/// `|a - b| <= tol * scale`, where the scale defaults to `max(|a|, |b|)`.
pub fn close(a: f64, b: f64, scale: Option<f64>, tol: f64) -> bool {
    let s = scale.unwrap_or(a.abs().max(b.abs())).max(f64::MIN_POSITIVE);
    (a - b).abs() <= tol * s
}
