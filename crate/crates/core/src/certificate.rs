//! Test-function functionals for the blow-up argument: cutoffs, the weights
//! `h_i(t) = t^{beta_i}`, the space-time integrals `I`, `J`, the pairings
//! `K_0..K_3`, `L_0..L_3` and R-scaling fits.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::criticality::{beta, SystemParams};
use crate::error::{Error, Result};
use crate::quadrature::{periodic_simpson_weights, power_law_fit, simpson_weights};
use crate::sim::{SystemState, Trajectory};
use crate::spectral::Grid;
use crate::tolerances::{DOMINATION_CAP, DOMINATION_FLOOR, SCALING_SLACK};

/// `exp(-1/x)` for `x > 0`, else 0.
fn mollifier(x: f64) -> f64 {
    if x > 0.0 {
        (-1.0 / x).exp()
    } else {
        0.0
    }
}

/// Value and first two derivatives of the mollifier.
fn mollifier3(x: f64) -> [f64; 3] {
    if x <= 0.0 {
        return [0.0; 3];
    }
    let f = (-1.0 / x).exp();
    let i = 1.0 / x;
    [f, f * i * i, f * (i * i * i * i - 2.0 * i * i * i)]
}

/// Smooth step `lambda(s) = f(1-s) / (f(1-s) + f(s-1/2))` and derivatives.
pub fn lambda3(s: f64) -> [f64; 3] {
    if s <= 0.5 {
        return [1.0, 0.0, 0.0];
    }
    if s >= 1.0 {
        return [0.0; 3];
    }
    let [a, a1, a2] = mollifier3(1.0 - s);
    let (a1, a2) = (-a1, a2);
    let [b, b1, b2] = mollifier3(s - 0.5);
    let sum = a + b;
    let sum1 = a1 + b1;
    let num = a1 * b - a * b1;
    let num1 = a2 * b - a * b2;
    [
        a / sum,
        num / (sum * sum),
        (num1 * sum - 2.0 * num * sum1) / (sum * sum * sum),
    ]
}

pub fn lambda(s: f64) -> f64 {
    if s <= 0.5 {
        1.0
    } else if s >= 1.0 {
        0.0
    } else {
        let a = mollifier(1.0 - s);
        a / (a + mollifier(s - 0.5))
    }
}

/// The cutoff pair `lambda(t)` and `phi(x) = lambda(|x|)`, with the recorded
/// derivative-domination constants for one exponent `r`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutoffPair {
    pub r_exponent: f64,
    pub dim: u32,
    pub resolution: usize,
    /// `max |lambda'| / lambda^{1/r}`.
    pub lambda_d1: f64,
    /// `max |lambda''| / lambda^{1/r}`.
    pub lambda_d2: f64,
    /// `max |Delta phi| / phi^{1/r}`.
    pub phi_laplacian: f64,
}

impl CutoffPair {
    pub fn lambda(&self, s: f64) -> f64 {
        lambda(s)
    }

    pub fn phi(&self, radius: f64) -> f64 {
        lambda(radius)
    }

    /// `Delta phi` at distance `radius` from the origin.
    pub fn phi_laplacian_at(&self, radius: f64) -> f64 {
        radial_laplacian(radius, self.dim)
    }
}

fn radial_laplacian(radius: f64, dim: u32) -> f64 {
    let [_, d1, d2] = lambda3(radius);
    if d1 == 0.0 && d2 == 0.0 {
        return 0.0;
    }
    d2 + (dim as f64 - 1.0) / radius * d1
}

pub fn make_cutoffs(r: f64, grid_resolution: usize, dim: u32) -> Result<CutoffPair> {
    if !(r > 1.0) {
        return Err(Error::InvalidParams {
            name: "r",
            reason: format!("must exceed 1, got {r}"),
        });
    }
    if !(1..=3).contains(&dim) {
        return Err(Error::InvalidParams {
            name: "dim",
            reason: format!("must be 1, 2 or 3, got {dim}"),
        });
    }
    if grid_resolution < 2 {
        return Err(Error::InvalidParams {
            name: "grid_resolution",
            reason: "need at least two points".into(),
        });
    }
    let mut worst = [(0.0f64, 0.0f64); 3];
    for j in 0..=grid_resolution {
        let s = 1.5 * j as f64 / grid_resolution as f64;
        let [l, d1, d2] = lambda3(s);
        if l <= DOMINATION_FLOOR {
            continue;
        }
        let base = l.powf(1.0 / r);
        let ratios = [d1.abs() / base, d2.abs() / base, radial_laplacian(s, dim).abs() / base];
        for (w, v) in worst.iter_mut().zip(ratios) {
            if v > w.0 {
                *w = (v, s);
            }
        }
    }
    for (which, (value, location)) in ["lambda'", "lambda''", "laplacian phi"].into_iter().zip(worst) {
        if !(value <= DOMINATION_CAP) {
            return Err(Error::DominationFailure {
                which,
                location,
                value,
                cap: DOMINATION_CAP,
            });
        }
    }
    Ok(CutoffPair {
        r_exponent: r,
        dim,
        resolution: grid_resolution,
        lambda_d1: worst[0].0,
        lambda_d2: worst[1].0,
        phi_laplacian: worst[2].0,
    })
}

/// Largest normalized residual of the weight equation
/// `h'' - mu h'/t + (mu + nu^2) h/t^2 = 0` for `h = t^beta` over `t_grid`.
///
/// Each residual is divided by `t^{beta-2}`, so the result is the indicial
/// coefficient `beta^2 - (mu+1) beta + mu + nu^2` up to rounding.
pub fn h_weight_residual(beta: f64, mu: f64, nu_sq: f64, t_grid: &[f64]) -> f64 {
    t_grid
        .iter()
        .map(|&t| {
            let h = t.powf(beta);
            let h1 = beta * t.powf(beta - 1.0);
            let h2 = beta * (beta - 1.0) * t.powf(beta - 2.0);
            let r = h2 - mu / t * h1 + (mu + nu_sq) / (t * t) * h;
            (r / t.powf(beta - 2.0)).abs()
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub d: f64,
    pub r: f64,
    pub k0: f64,
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub l0: f64,
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    pub i_dr: f64,
    pub j_dr: f64,
    /// `I + K0 - K1 - K2 + K3`, zero for an exact solution.
    pub residual_i: f64,
    pub residual_j: f64,
    /// Residuals relative to the largest term of each identity.
    pub relative_residual_i: f64,
    pub relative_residual_j: f64,
    pub theory_exponent_i: f64,
    pub theory_exponent_j: f64,
}

/// `(-2p(q+1)/(pq-1) + (m+1)n + beta1 + 1, -2q(p+1)/(pq-1) + (m+1)n + beta2 + 1)`.
pub fn theory_exponents(params: &SystemParams) -> Result<(f64, f64)> {
    let (p, q) = (params.p, params.q);
    let den = p * q - 1.0;
    if den <= 0.0 {
        return Err(Error::DegenerateDenominator { what: "pq - 1", value: den });
    }
    let (b1, b2) = betas(params)?;
    let a = params.scaled_dim();
    Ok((
        -2.0 * p * (q + 1.0) / den + a + b1 + 1.0,
        -2.0 * q * (p + 1.0) / den + a + b2 + 1.0,
    ))
}

fn betas(params: &SystemParams) -> Result<(f64, f64)> {
    let d1 = params.delta1();
    let d2 = params.delta2();
    if !(d1 > 0.0) {
        return Err(Error::NonPositiveDelta { index: 1, value: d1 });
    }
    if !(d2 > 0.0) {
        return Err(Error::NonPositiveDelta { index: 2, value: d2 });
    }
    Ok((beta(params.mu1, d1), beta(params.mu2, d2)))
}

/// Snapshot spacing required by the time quadrature.
pub const MIN_SNAPSHOTS_PER_UNIT: f64 = 20.0;

/// Certificate over the stored snapshots of a run.
pub fn certificate(
    traj: &Trajectory,
    params: &SystemParams,
    d: f64,
    r: f64,
    cutoffs: &CutoffPair,
) -> Result<Certificate> {
    certificate_from_snapshots(&traj.snapshots, params, d, r, cutoffs)
}

/// Certificate from equally spaced snapshots starting at `t = 1`.
pub fn certificate_from_snapshots(
    snapshots: &[SystemState],
    params: &SystemParams,
    d: f64,
    r: f64,
    cutoffs: &CutoffPair,
) -> Result<Certificate> {
    if !(d >= 1.0) || !(r >= 1.0) {
        return Err(Error::InvalidParams {
            name: "d, R",
            reason: format!("both must be at least 1, got d = {d}, R = {r}"),
        });
    }
    let Some(first) = snapshots.first() else {
        return Err(Error::SparseSnapshots("no snapshots stored".into()));
    };
    if first.t != 1.0 {
        return Err(Error::SparseSnapshots(format!(
            "first snapshot at t = {}, expected 1",
            first.t
        )));
    }
    let t_end = 1.0 + d;
    let Some(last) = snapshots.iter().position(|s| s.t >= t_end * (1.0 - 1e-12)) else {
        return Err(Error::SparseSnapshots(format!(
            "snapshots end at t = {}, need t = {t_end}",
            snapshots.last().map_or(1.0, |s| s.t)
        )));
    };
    let used = &snapshots[..=last];
    let h = if used.len() > 1 { used[1].t - used[0].t } else { 0.0 };
    if used.len() < 3
        || h > 1.0 / MIN_SNAPSHOTS_PER_UNIT * (1.0 + 1e-9)
        || used
            .windows(2)
            .any(|w| ((w[1].t - w[0].t) - h).abs() > 1e-9 * h.max(1.0))
    {
        return Err(Error::SparseSnapshots(format!(
            "need equally spaced snapshots at least {MIN_SNAPSHOTS_PER_UNIT} per unit time"
        )));
    }
    let grid: Grid = *first.grid();
    for s in used {
        grid.check_same(s.grid())?;
    }
    let scale = r.powf(params.m + 1.0);
    if scale > grid.half_length {
        return Err(Error::BoxOverflow {
            radius: scale,
            half_length: grid.half_length,
        });
    }
    let (b1, b2) = betas(params)?;
    let (th_i, th_j) = theory_exponents(params)?;

    // Spatial weights and cutoff tables.
    let w1 = periodic_simpson_weights(grid.points, grid.dx());
    let weights: Vec<f64> = (0..grid.len())
        .map(|i| {
            let idx = grid.unflatten(i);
            (0..grid.dim).map(|a| w1[idx[a]]).product()
        })
        .collect();
    let radii = grid.radius_table();
    let phi: Vec<f64> = radii.iter().map(|&x| cutoffs.phi(x / scale)).collect();
    let lap: Vec<f64> = radii
        .iter()
        .map(|&x| cutoffs.phi_laplacian_at(x / scale) / (scale * scale))
        .collect();
    let wt = simpson_weights(used.len(), h);

    let pair = |u0: &[f64], u1: &[f64], mu: f64, delta: f64| -> f64 {
        let c = (mu - 1.0 + delta.sqrt()) / 2.0;
        (0..grid.len())
            .map(|i| weights[i] * phi[i] * (c * u0[i] + u1[i]))
            .sum()
    };
    let k0 = pair(first.u.values(), first.ut.values(), params.mu1, params.delta1());
    let l0 = pair(first.v.values(), first.vt.values(), params.mu2, params.delta2());

    // Per snapshot: [I, K1, K2, K3, J, L1, L2, L3].
    let terms: Vec<[f64; 8]> = used
        .par_iter()
        .zip(wt.par_iter())
        .map(|(s, &w)| {
            let t = s.t;
            let [lam, lam1, lam2] = lambda3((t - 1.0) / d);
            let dt1 = lam1 / d;
            let dt2 = lam2 / (d * d);
            let speed = t.powf(2.0 * params.m);
            let side = |beta_i: f64, mu: f64, own: &[f64], other: &[f64], power: f64| -> [f64; 4] {
                let hh = t.powf(beta_i);
                let drift = 2.0 * beta_i * t.powf(beta_i - 1.0) - mu / t * hh;
                let mut acc = [0.0; 4];
                for i in 0..own.len() {
                    let wi = weights[i];
                    if phi[i] != 0.0 {
                        let o = other[i].abs();
                        if o != 0.0 && lam != 0.0 {
                            acc[0] += wi * hh * lam * phi[i] * o.powf(power);
                        }
                        acc[1] += wi * own[i] * hh * dt2 * phi[i];
                        acc[2] += wi * own[i] * drift * dt1 * phi[i];
                    }
                    if lap[i] != 0.0 {
                        acc[3] += wi * own[i] * speed * hh * lam * lap[i];
                    }
                }
                acc.map(|a| a * w)
            };
            let a = side(b1, params.mu1, s.u.values(), s.v.values(), params.p);
            let b = side(b2, params.mu2, s.v.values(), s.u.values(), params.q);
            [a[0], a[1], a[2], a[3], b[0], b[1], b[2], b[3]]
        })
        .collect();
    let mut tot = [0.0; 8];
    for row in &terms {
        for (a, b) in tot.iter_mut().zip(row) {
            *a += b;
        }
    }
    let [i_dr, k1, k2, k3, j_dr, l1, l2, l3] = tot;
    let residual_i = i_dr + k0 - k1 - k2 + k3;
    let residual_j = j_dr + l0 - l1 - l2 + l3;
    let rel = |res: f64, parts: [f64; 5]| {
        let big = parts.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if big == 0.0 {
            0.0
        } else {
            res.abs() / big
        }
    };
    Ok(Certificate {
        d,
        r,
        k0,
        k1,
        k2,
        k3,
        l0,
        l1,
        l2,
        l3,
        i_dr,
        j_dr,
        residual_i,
        residual_j,
        relative_residual_i: rel(residual_i, [i_dr, k0, k1, k2, k3]),
        relative_residual_j: rel(residual_j, [j_dr, l0, l1, l2, l3]),
        theory_exponent_i: th_i,
        theory_exponent_j: th_j,
    })
}

/// Certificates for every `R` in `radii` with `d = R`.
pub fn certificate_sweep(
    traj: &Trajectory,
    params: &SystemParams,
    radii: &[f64],
    cutoffs: &CutoffPair,
) -> Result<Vec<Certificate>> {
    radii
        .par_iter()
        .map(|&r| certificate(traj, params, r, r, cutoffs))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub fitted_exponent_i: f64,
    pub fitted_exponent_j: f64,
    pub theory_exponent_i: f64,
    pub theory_exponent_j: f64,
    /// `fitted <= theory + slack * |theory|`.
    pub pass_i: bool,
    pub pass_j: bool,
    pub r_min: f64,
    pub r_max: f64,
}

/// Log-log fit of `I_{R,R}` and `J_{R,R}` against `R + 1`.
pub fn scaling_fit(certs: &[Certificate]) -> Result<ScalingFit> {
    if certs.len() < 5 {
        return Err(Error::InsufficientSpan(format!(
            "need 5 radii, have {}",
            certs.len()
        )));
    }
    let r_min = certs.iter().map(|c| c.r).fold(f64::INFINITY, f64::min);
    let r_max = certs.iter().map(|c| c.r).fold(0.0, f64::max);
    if r_max < 8.0 * r_min * (1.0 - 1e-12) {
        return Err(Error::InsufficientSpan(format!(
            "radii span a factor {:.3}, need 8",
            r_max / r_min
        )));
    }
    let xs: Vec<f64> = certs.iter().map(|c| c.r + 1.0).collect();
    let fi = power_law_fit(&xs, &certs.iter().map(|c| c.i_dr).collect::<Vec<_>>(), 0.0)?;
    let fj = power_law_fit(&xs, &certs.iter().map(|c| c.j_dr).collect::<Vec<_>>(), 0.0)?;
    let (ti, tj) = (certs[0].theory_exponent_i, certs[0].theory_exponent_j);
    Ok(ScalingFit {
        fitted_exponent_i: fi.exponent,
        fitted_exponent_j: fj.exponent,
        theory_exponent_i: ti,
        theory_exponent_j: tj,
        pass_i: fi.exponent <= ti + SCALING_SLACK * ti.abs(),
        pass_j: fj.exponent <= tj + SCALING_SLACK * tj.abs(),
        r_min,
        r_max,
    })
}

/// Smallest radius in the sweep from which `K0 > 0` and `L0 > 0` hold for
/// every larger radius.
pub fn positivity_onset(certs: &[Certificate]) -> Option<f64> {
    let mut sorted: Vec<&Certificate> = certs.iter().collect();
    sorted.sort_by(|a, b| a.r.partial_cmp(&b.r).unwrap());
    let mut onset = None;
    for c in sorted {
        if c.k0 > 0.0 && c.l0 > 0.0 {
            onset.get_or_insert(c.r);
        } else {
            onset = None;
        }
    }
    onset
}

/// Column order of certificate CSV rows.
pub const CERTIFICATE_COLUMNS: &[&str] = &[
    "d", "R", "K0", "K1", "K2", "K3", "L0", "L1", "L2", "L3", "I", "J", "residual_I",
    "residual_J", "theory_exponent_I", "theory_exponent_J",
];

impl Certificate {
    pub fn csv_row(&self) -> String {
        [
            self.d,
            self.r,
            self.k0,
            self.k1,
            self.k2,
            self.k3,
            self.l0,
            self.l1,
            self.l2,
            self.l3,
            self.i_dr,
            self.j_dr,
            self.relative_residual_i,
            self.relative_residual_j,
            self.theory_exponent_i,
            self.theory_exponent_j,
        ]
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
    }
}
