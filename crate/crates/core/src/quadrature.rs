//! Gauss-Legendre rules, composite Simpson sums and least-squares power fits.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Nodes and weights of the `n`-point Gauss-Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Composite Simpson weights for `count` equally spaced samples with spacing
/// `h`. An even sample count closes with the 3/8 rule on the last three
/// intervals; two samples fall back to the trapezoid rule.
pub fn simpson_weights(count: usize, h: f64) -> Vec<f64> {
    let mut w = vec![0.0; count];
    match count {
        0 => {}
        1 => {}
        2 => {
            w[0] = h / 2.0;
            w[1] = h / 2.0;
        }
        3 => {
            w[0] = h / 3.0;
            w[1] = 4.0 * h / 3.0;
            w[2] = h / 3.0;
        }
        _ => {
            let intervals = count - 1;
            let simpson_end = if intervals.is_multiple_of(2) {
                intervals
            } else {
                intervals - 3
            };
            let mut i = 0;
            while i < simpson_end {
                w[i] += h / 3.0;
                w[i + 1] += 4.0 * h / 3.0;
                w[i + 2] += h / 3.0;
                i += 2;
            }
            if simpson_end < intervals {
                let c = 3.0 * h / 8.0;
                w[simpson_end] += c;
                w[simpson_end + 1] += 3.0 * c;
                w[simpson_end + 2] += 3.0 * c;
                w[simpson_end + 3] += c;
            }
        }
    }
    w
}

pub fn simpson(values: &[f64], h: f64) -> f64 {
    simpson_weights(values.len(), h)
        .iter()
        .zip(values)
        .map(|(w, v)| w * v)
        .sum()
}

/// Composite Simpson weights for a periodic grid with an even number of
/// points: alternating 2h/3 and 4h/3.
pub fn periodic_simpson_weights(count: usize, h: f64) -> Vec<f64> {
    (0..count)
        .map(|j| if j % 2 == 0 { 2.0 * h / 3.0 } else { 4.0 * h / 3.0 })
        .collect()
}

/// Geometric grid from `t0` to `t1` with `per_decade` points per decade,
/// both endpoints included.
pub fn geometric_grid(t0: f64, t1: f64, per_decade: usize) -> Vec<f64> {
    let decades = (t1 / t0).log10();
    let steps = ((decades * per_decade as f64).ceil() as usize).max(1);
    let mut out: Vec<f64> = (0..=steps)
        .map(|i| t0 * (t1 / t0).powf(i as f64 / steps as f64))
        .collect();
    out[0] = t0;
    out[steps] = t1;
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerFit {
    pub exponent: f64,
    /// Natural log of the prefactor.
    pub log_prefactor: f64,
    pub r_squared: f64,
    pub points: usize,
}

/// Least-squares fit of `log y = a log t + b` over points with `y > 0`.
/// `log_correction` subtracts `c * log(1 + log t)` from `log y` first,
/// which absorbs a `(1 + log t)^c` factor.
pub fn power_law_fit(ts: &[f64], ys: &[f64], log_correction: f64) -> Result<PowerFit> {
    let pts: Vec<(f64, f64)> = ts
        .iter()
        .zip(ys)
        .filter(|(t, y)| **t > 0.0 && **y > 0.0 && y.is_finite())
        .map(|(t, y)| {
            let lt = t.ln();
            let mut ly = y.ln();
            if log_correction != 0.0 {
                ly -= log_correction * (1.0 + lt).ln();
            }
            (lt, ly)
        })
        .collect();
    if pts.len() < 2 {
        return Err(Error::InvalidParams {
            name: "fit",
            reason: format!("need at least two positive samples, got {}", pts.len()),
        });
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx <= 0.0 {
        return Err(Error::InvalidParams {
            name: "fit",
            reason: "abscissae do not span an interval".into(),
        });
    }
    let a = sxy / sxx;
    let b = my - a * mx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    Ok(PowerFit {
        exponent: a,
        log_prefactor: b,
        r_squared: r2,
        points: pts.len(),
    })
}
