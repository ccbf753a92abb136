//! Mode-by-mode propagation of the linear equation
//! `u'' + (mu/t) u' + (nu^2/t^2 + t^{2m} k^2) u = 0`.

use std::collections::BTreeMap;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ode::{Dopri5, Dopri5Options};
use crate::quadrature::{power_law_fit, PowerFit};
use crate::spectral::{Grid, SpectralField};
use crate::tolerances::{LINEAR_DECAY_REL_TOL, RTOL_MAX, RTOL_MIN, THRESHOLD_REL_TOL};

/// Coefficients of one linear equation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearParams {
    pub mu: f64,
    pub nu_sq: f64,
    pub m: f64,
}

impl LinearParams {
    pub fn delta(&self) -> f64 {
        crate::criticality::delta(self.mu, self.nu_sq)
    }

    /// Euler exponents `rho_-`, `rho_+` of the `k = 0` equation.
    pub fn euler_exponents(&self) -> Result<(f64, f64)> {
        let d = self.delta();
        if !(d > 0.0) {
            return Err(Error::NonPositiveDelta { index: 1, value: d });
        }
        let s = d.sqrt();
        Ok(((1.0 - self.mu - s) / 2.0, (1.0 - self.mu + s) / 2.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeState {
    /// Frequency magnitude `|xi|`.
    pub k: f64,
    pub value: Complex64,
    pub velocity: Complex64,
    pub time: f64,
}

/// Solution matrix of one mode: column 0 starts from `(1, 0)` at `tau`,
/// column 1 from `(0, 1)`; rows are value and velocity. Entries are real
/// because the mode equation has real coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FundamentalMatrix {
    pub t: f64,
    pub tau: f64,
    pub entries: [[f64; 2]; 2],
}

impl FundamentalMatrix {
    pub fn identity(tau: f64) -> Self {
        FundamentalMatrix {
            t: tau,
            tau,
            entries: [[1.0, 0.0], [0.0, 1.0]],
        }
    }

    pub fn det(&self) -> f64 {
        let e = &self.entries;
        e[0][0] * e[1][1] - e[0][1] * e[1][0]
    }

    /// `self * other`, i.e. first `other` then `self`.
    pub fn compose(&self, other: &FundamentalMatrix) -> FundamentalMatrix {
        let a = &self.entries;
        let b = &other.entries;
        let mut c = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
            }
        }
        FundamentalMatrix {
            t: self.t,
            tau: other.tau,
            entries: c,
        }
    }

    pub fn apply(&self, value: Complex64, velocity: Complex64) -> (Complex64, Complex64) {
        let e = &self.entries;
        (
            value * e[0][0] + velocity * e[0][1],
            value * e[1][0] + velocity * e[1][1],
        )
    }
}

fn check_tol(rel_tol: f64) -> Result<()> {
    if !(RTOL_MIN..=RTOL_MAX).contains(&rel_tol) {
        return Err(Error::InvalidTolerance(rel_tol));
    }
    Ok(())
}

fn check_times(t0: f64, t1: f64) -> Result<()> {
    if !(t0 >= 1.0) || !(t1 >= t0) || !t1.is_finite() {
        return Err(Error::InvalidParams {
            name: "time",
            reason: format!("need 1 <= t0 <= t1, got t0 = {t0}, t1 = {t1}"),
        });
    }
    Ok(())
}

/// Right-hand side for independent `(value, velocity)` pairs packed in `y`.
fn mode_rhs(k2: f64, lp: LinearParams) -> impl FnMut(f64, &[f64], &mut [f64]) {
    move |t: f64, y: &[f64], dy: &mut [f64]| {
        let damp = lp.mu / t;
        let stiff = lp.nu_sq / (t * t) + k2 * t.powf(2.0 * lp.m);
        for (yc, dc) in y.chunks_exact(2).zip(dy.chunks_exact_mut(2)) {
            dc[0] = yc[1];
            dc[1] = -damp * yc[1] - stiff * yc[0];
        }
    }
}

/// Advance a single Fourier mode from `state.time` to `t_target`.
pub fn propagate_mode(
    state: ModeState,
    t_target: f64,
    lp: LinearParams,
    rel_tol: f64,
) -> Result<ModeState> {
    check_tol(rel_tol)?;
    check_times(state.time, t_target)?;
    if t_target == state.time {
        return Ok(state);
    }
    let y0 = vec![
        state.value.re,
        state.velocity.re,
        state.value.im,
        state.velocity.im,
    ];
    let opts = Dopri5Options::new(rel_tol);
    let mut s = Dopri5::new(state.time, y0, mode_rhs(state.k * state.k, lp), opts);
    s.advance_to(t_target, |_| f64::INFINITY)?;
    let y = s.y();
    Ok(ModeState {
        k: state.k,
        value: Complex64::new(y[0], y[2]),
        velocity: Complex64::new(y[1], y[3]),
        time: t_target,
    })
}

/// Fundamental matrices `M(t_i, tau)` for every `t_i` in the ascending list
/// `times` (all `>= tau`), from a single integration pass.
pub fn fundamental_path(
    k: f64,
    tau: f64,
    times: &[f64],
    lp: LinearParams,
    rel_tol: f64,
) -> Result<Vec<FundamentalMatrix>> {
    check_tol(rel_tol)?;
    if let Some(&last) = times.last() {
        check_times(tau, last)?;
    }
    if times.windows(2).any(|w| w[1] < w[0]) || times.first().is_some_and(|&t| t < tau) {
        return Err(Error::InvalidParams {
            name: "times",
            reason: "must be ascending and not before tau".into(),
        });
    }
    let mut opts = Dopri5Options::new(rel_tol);
    opts.block = 2;
    let mut s = Dopri5::new(tau, vec![1.0, 0.0, 0.0, 1.0], mode_rhs(k * k, lp), opts);
    let mut out = Vec::with_capacity(times.len());
    for &t in times {
        s.advance_to(t, |_| f64::INFINITY)?;
        let y = s.y();
        out.push(FundamentalMatrix {
            t,
            tau,
            entries: [[y[0], y[2]], [y[1], y[3]]],
        });
    }
    Ok(out)
}

pub fn fundamental_pair(
    k: f64,
    tau: f64,
    t: f64,
    lp: LinearParams,
    rel_tol: f64,
) -> Result<FundamentalMatrix> {
    if t == tau {
        check_times(tau, t)?;
        return Ok(FundamentalMatrix::identity(tau));
    }
    Ok(fundamental_path(k, tau, &[t], lp, rel_tol)?[0])
}

/// Options for whole-field linear evolution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearOptions {
    pub rel_tol: f64,
    /// Shells whose data amplitude is at most this fraction of the largest
    /// one are not propagated and come out as zero. `0.0` keeps every
    /// nonzero mode.
    pub mode_floor: f64,
}

impl Default for LinearOptions {
    fn default() -> Self {
        LinearOptions {
            rel_tol: crate::tolerances::LINEAR_VERIFY_RTOL,
            mode_floor: 0.0,
        }
    }
}

/// Shell label -> flat indices of the modes that carry data.
fn active_shells(
    grid: &Grid,
    specs: &[&[Complex64]],
    floor: f64,
) -> BTreeMap<u64, Vec<usize>> {
    let amp = |i: usize| specs.iter().map(|s| s[i].norm_sqr()).sum::<f64>();
    let peak = (0..grid.len()).map(amp).fold(0.0, f64::max);
    let cut = floor * floor * peak;
    let mut shells: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for i in 0..grid.len() {
        let a = amp(i);
        if a > cut && a > 0.0 {
            shells.entry(grid.shell(i)).or_default().push(i);
        }
    }
    shells
}

/// Evolve `(u(t0), u_t(t0)) = (u0, u1)` to `t1`.
pub fn linear_evolve(
    u0: &SpectralField,
    u1: &SpectralField,
    t0: f64,
    t1: f64,
    lp: LinearParams,
    opts: LinearOptions,
) -> Result<(SpectralField, SpectralField)> {
    let grid = *u0.grid();
    grid.check_same(u1.grid())?;
    check_tol(opts.rel_tol)?;
    check_times(t0, t1)?;
    let s0 = u0.spectrum();
    let s1 = u1.spectrum();
    if t1 == t0 {
        return Ok((
            SpectralField::from_spectrum(grid, s0.to_vec())?,
            SpectralField::from_spectrum(grid, s1.to_vec())?,
        ));
    }
    let shells = active_shells(&grid, &[s0, s1], opts.mode_floor);
    let ku = grid.k_unit();
    let keys: Vec<u64> = shells.keys().copied().collect();
    let mats: Vec<FundamentalMatrix> = keys
        .par_iter()
        .map(|&s| fundamental_pair(ku * (s as f64).sqrt(), t0, t1, lp, opts.rel_tol))
        .collect::<Result<_>>()?;
    let zero = Complex64::new(0.0, 0.0);
    let mut out0 = vec![zero; grid.len()];
    let mut out1 = vec![zero; grid.len()];
    for (key, mat) in keys.iter().zip(&mats) {
        for &i in &shells[key] {
            let (a, b) = mat.apply(s0[i], s1[i]);
            out0[i] = a;
            out1[i] = b;
        }
    }
    Ok((
        SpectralField::from_spectrum(grid, out0)?,
        SpectralField::from_spectrum(grid, out1)?,
    ))
}

/// Which decay regime of the linear estimate applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DecayBranch {
    /// `kappa` above the critical regularity: rate `t^{-(mu+m)/2}`.
    Above,
    /// On the critical regularity: same rate with a `(1+log t)^{1/2}` loss.
    Critical,
    /// Below: rate `t^{-(m+1)(kappa+n/2) + (sqrt(delta)-mu+1)/2}`.
    Below,
}

/// `sqrt(delta)/(2(m+1)) + 1/2 - n/2`.
pub fn critical_regularity(lp: LinearParams, n: u32) -> f64 {
    lp.delta().sqrt() / (2.0 * (lp.m + 1.0)) + 0.5 - n as f64 / 2.0
}

pub fn decay_branch(lp: LinearParams, n: u32, kappa: f64) -> DecayBranch {
    let c = critical_regularity(lp, n);
    if (kappa - c).abs() <= THRESHOLD_REL_TOL * c.abs().max(1.0) {
        DecayBranch::Critical
    } else if kappa > c {
        DecayBranch::Above
    } else {
        DecayBranch::Below
    }
}

/// Theoretical decay exponent of `|u(t)|_{Hdot^kappa}` and the exponent of
/// the accompanying `(1 + log t)` factor.
pub fn theory_decay_exponent(lp: LinearParams, n: u32, kappa: f64) -> (DecayBranch, f64, f64) {
    let branch = decay_branch(lp, n, kappa);
    match branch {
        DecayBranch::Above => (branch, -(lp.mu + lp.m) / 2.0, 0.0),
        DecayBranch::Critical => (branch, -(lp.mu + lp.m) / 2.0, 0.5),
        DecayBranch::Below => (
            branch,
            -(lp.m + 1.0) * (kappa + n as f64 / 2.0) + (lp.delta().sqrt() - lp.mu + 1.0) / 2.0,
            0.0,
        ),
    }
}

/// `|u(t)|_{Hdot^kappa}` at every `t` in `times`, for data `(u0, u1)` given
/// at `t0`.
pub fn linear_norm_history(
    u0: &SpectralField,
    u1: &SpectralField,
    t0: f64,
    times: &[f64],
    lp: LinearParams,
    kappa: f64,
    opts: LinearOptions,
) -> Result<Vec<f64>> {
    let grid = *u0.grid();
    grid.check_same(u1.grid())?;
    check_tol(opts.rel_tol)?;
    let s0 = u0.spectrum();
    let s1 = u1.spectrum();
    let shells = active_shells(&grid, &[s0, s1], opts.mode_floor);
    let ku = grid.k_unit();
    // Per shell: sum |f|^2, sum Re(f conj g), sum |g|^2.
    let sums: Vec<(u64, [f64; 3])> = shells
        .iter()
        .filter(|(&s, _)| !(s == 0 && kappa > 0.0))
        .map(|(&s, idx)| {
            let mut acc = [0.0; 3];
            for &i in idx {
                acc[0] += s0[i].norm_sqr();
                acc[1] += (s0[i] * s1[i].conj()).re;
                acc[2] += s1[i].norm_sqr();
            }
            (s, acc)
        })
        .collect();
    let per_shell: Vec<Vec<f64>> = sums
        .par_iter()
        .map(|(s, acc)| {
            let k = ku * (*s as f64).sqrt();
            let weight = if kappa == 0.0 { 1.0 } else { k.powf(2.0 * kappa) };
            let mats = fundamental_path(k, t0, times, lp, opts.rel_tol)?;
            Ok(mats
                .iter()
                .map(|m| {
                    let a = m.entries[0][0];
                    let b = m.entries[0][1];
                    weight * (a * a * acc[0] + 2.0 * a * b * acc[1] + b * b * acc[2])
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let scale = grid.cell_volume() / grid.len() as f64;
    Ok((0..times.len())
        .map(|j| {
            let total: f64 = per_shell.iter().map(|v| v[j]).sum();
            (total.max(0.0) * scale).sqrt()
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearDecayReport {
    pub kappa: f64,
    pub branch: DecayBranch,
    pub theory_exponent: f64,
    pub log_correction: f64,
    pub fit: PowerFit,
    pub relative_error: f64,
    pub pass: bool,
    pub times: Vec<f64>,
    pub norms: Vec<f64>,
    /// `C t^{theory} (1 + log t)^{c}` matched to the fitted prefactor.
    pub envelope: Vec<f64>,
}

/// Evolve `(u0, u1)` from `t = 1` over `t_grid`, fit the decay of
/// `|u|_{Hdot^kappa}` over the last decade and compare with theory.
pub fn verify_linear_decay(
    u0: &SpectralField,
    u1: &SpectralField,
    lp: LinearParams,
    kappa: f64,
    t_grid: &[f64],
    opts: LinearOptions,
) -> Result<LinearDecayReport> {
    let (Some(&first), Some(&last)) = (t_grid.first(), t_grid.last()) else {
        return Err(Error::InsufficientSpan("empty time grid".into()));
    };
    if last / first < 100.0 * (1.0 - 1e-12) {
        return Err(Error::InsufficientSpan(format!(
            "time grid spans {:.3} decades, need 2",
            (last / first).log10()
        )));
    }
    if lp.delta() <= 0.0 {
        return Err(Error::NonPositiveDelta {
            index: 1,
            value: lp.delta(),
        });
    }
    let n = u0.grid().dim as u32;
    let norms = linear_norm_history(u0, u1, 1.0, t_grid, lp, kappa, opts)?;
    let (branch, theory, log_c) = theory_decay_exponent(lp, n, kappa);
    let window: Vec<usize> = (0..t_grid.len())
        .filter(|&i| t_grid[i] >= last / 10.0 * (1.0 - 1e-12))
        .collect();
    let ts: Vec<f64> = window.iter().map(|&i| t_grid[i]).collect();
    let ys: Vec<f64> = window.iter().map(|&i| norms[i]).collect();
    let fit = power_law_fit(&ts, &ys, log_c)?;
    let relative_error = (fit.exponent - theory).abs() / theory.abs().max(f64::MIN_POSITIVE);
    let c = fit.log_prefactor;
    let envelope = t_grid
        .iter()
        .map(|&t| (c + theory * t.ln()).exp() * (1.0 + t.ln()).powf(log_c))
        .collect();
    Ok(LinearDecayReport {
        kappa,
        branch,
        theory_exponent: theory,
        log_correction: log_c,
        fit,
        relative_error,
        pass: relative_error <= LINEAR_DECAY_REL_TOL,
        times: t_grid.to_vec(),
        norms,
        envelope,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceScalingReport {
    pub tau1: f64,
    pub tau2: f64,
    pub t_final: f64,
    pub response1: f64,
    pub response2: f64,
    pub measured_ratio: f64,
    pub predicted_ratio: f64,
    pub relative_error: f64,
    pub pass: bool,
}

/// Response `|u(t_final)|_{Hdot^kappa}` to data `(0, g)` imposed at `tau`.
pub fn source_response(
    g: &SpectralField,
    tau: f64,
    t_final: f64,
    lp: LinearParams,
    kappa: f64,
    opts: LinearOptions,
) -> Result<f64> {
    let zero = SpectralField::zeros(*g.grid());
    Ok(linear_norm_history(&zero, g, tau, &[t_final], lp, kappa, opts)?[0])
}

/// Compare the responses to a source at `tau1` and `tau2` with the
/// predicted factor `(tau2/tau1)^{-(sqrt(delta)-mu-1)/2}`.
pub fn verify_source_scaling(
    g: &SpectralField,
    tau1: f64,
    tau2: f64,
    t_final: f64,
    lp: LinearParams,
    kappa: f64,
    opts: LinearOptions,
) -> Result<SourceScalingReport> {
    let r1 = source_response(g, tau1, t_final, lp, kappa, opts)?;
    let r2 = source_response(g, tau2, t_final, lp, kappa, opts)?;
    let measured = r2 / r1;
    let predicted = (tau2 / tau1).powf(-(lp.delta().sqrt() - lp.mu - 1.0) / 2.0);
    let relative_error = (measured - predicted).abs() / predicted;
    Ok(SourceScalingReport {
        tau1,
        tau2,
        t_final,
        response1: r1,
        response2: r2,
        measured_ratio: measured,
        predicted_ratio: predicted,
        relative_error,
        pass: relative_error <= LINEAR_DECAY_REL_TOL,
    })
}
