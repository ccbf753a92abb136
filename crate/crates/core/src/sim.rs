//! Method-of-lines simulation of the coupled system, the Duhamel-Picard
//! iteration, the weighted norms and decay fits.

use std::io::{Read, Write};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::criticality::{DerivedConstants, SystemParams};
use crate::data::DataSpec;
use crate::error::{Error, Result};
use crate::fft;
use crate::linear::{fundamental_path, FundamentalMatrix, LinearParams};
use crate::ode::{Dopri5, Dopri5Options};
use crate::quadrature::{gauss_legendre, geometric_grid, power_law_fit, PowerFit};
use crate::spectral::{norms, read_f64, write_field, read_field, Grid, NormBundle, SpectralField};
use crate::tolerances::{
    BLOWUP_FACTOR, CFL_SAFETY, DT_FLOOR, SAMPLES_PER_DECADE, SEMILINEAR_DECAY_REL_TOL,
    SIMULATION_RTOL, SUPPORT_THRESHOLD, THRESHOLD_REL_TOL,
};

/// Full state `(u, u_t, v, v_t)` at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemState {
    pub t: f64,
    pub u: SpectralField,
    pub ut: SpectralField,
    pub v: SpectralField,
    pub vt: SpectralField,
    pub support_radius_u: f64,
    pub support_radius_v: f64,
}

impl SystemState {
    pub fn new(
        t: f64,
        u: SpectralField,
        ut: SpectralField,
        v: SpectralField,
        vt: SpectralField,
    ) -> Result<SystemState> {
        let g = *u.grid();
        for f in [&ut, &v, &vt] {
            g.check_same(f.grid())?;
        }
        let support_radius_u = u.support_radius(SUPPORT_THRESHOLD);
        let support_radius_v = v.support_radius(SUPPORT_THRESHOLD);
        Ok(SystemState {
            t,
            u,
            ut,
            v,
            vt,
            support_radius_u,
            support_radius_v,
        })
    }

    pub fn zeros(grid: Grid, t: f64) -> SystemState {
        let z = SpectralField::zeros(grid);
        SystemState {
            t,
            u: z.clone(),
            ut: z.clone(),
            v: z.clone(),
            vt: z,
            support_radius_u: 0.0,
            support_radius_v: 0.0,
        }
    }

    /// Initial state at `t = 1` built from a data specification.
    pub fn initial(data: &DataSpec, grid: Grid, seed: u64) -> Result<SystemState> {
        data.validate()?;
        let [u0, u1, v0, v1] = data.fields(grid, seed);
        SystemState::new(1.0, u0, u1, v0, v1)
    }

    pub fn grid(&self) -> &Grid {
        self.u.grid()
    }

    pub fn fields(&self) -> [&SpectralField; 4] {
        [&self.u, &self.ut, &self.v, &self.vt]
    }

    /// Largest `|x|` where any component is nonzero.
    pub fn data_support(&self) -> f64 {
        self.fields()
            .iter()
            .map(|f| f.support_radius(0.0))
            .fold(0.0, f64::max)
    }

    fn pack(&self) -> Vec<f64> {
        let mut y = Vec::with_capacity(4 * self.grid().len());
        for f in self.fields() {
            y.extend_from_slice(f.values());
        }
        y
    }

    fn unpack(grid: Grid, t: f64, y: &[f64]) -> Result<SystemState> {
        let n = grid.len();
        let f = |k: usize| SpectralField::new(grid, y[k * n..(k + 1) * n].to_vec());
        SystemState::new(t, f(0)?, f(1)?, f(2)?, f(3)?)
    }

    pub fn l2_size(&self) -> f64 {
        self.u.l2_norm() + self.v.l2_norm()
    }
}

const STATE_MAGIC: &[u8; 8] = b"EPDTSTA1";

/// State layout: magic, `f64` time, then the four fields in the field layout.
pub fn write_state(w: &mut impl Write, s: &SystemState) -> Result<()> {
    w.write_all(STATE_MAGIC)?;
    w.write_all(&s.t.to_le_bytes())?;
    for f in s.fields() {
        write_field(w, f)?;
    }
    Ok(())
}

pub fn read_state(r: &mut impl Read) -> Result<SystemState> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != STATE_MAGIC {
        return Err(Error::Format("not a state snapshot".into()));
    }
    let t = read_f64(r)?;
    let u = read_field(r)?;
    let ut = read_field(r)?;
    let v = read_field(r)?;
    let vt = read_field(r)?;
    SystemState::new(t, u, ut, v, vt)
}

/// Precomputed spectral tables for one grid.
struct Operator {
    grid: Grid,
    k2: Vec<f64>,
    keep: Vec<bool>,
    /// Flat index of `-xi`.
    mirror: Vec<usize>,
}

impl Operator {
    fn new(grid: Grid) -> Operator {
        let n = grid.points;
        let mirror = (0..grid.len())
            .map(|i| {
                let idx = grid.unflatten(i);
                let mut flat = 0;
                for &j in idx.iter().take(grid.dim) {
                    flat = flat * n + (n - j) % n;
                }
                flat
            })
            .collect();
        Operator {
            grid,
            k2: grid.k_squared_table(),
            keep: grid.dealias_table(),
            mirror,
        }
    }

    /// Spectra of two real arrays from one complex transform.
    fn forward_pair(&self, a: &[f64], b: &[f64], za: &mut Vec<Complex64>, zb: &mut Vec<Complex64>) {
        let g = &self.grid;
        let mut z: Vec<Complex64> = a.iter().zip(b).map(|(&x, &y)| Complex64::new(x, y)).collect();
        fft::transform(&mut z, g.dim, g.points, false);
        za.resize(z.len(), Complex64::new(0.0, 0.0));
        zb.resize(z.len(), Complex64::new(0.0, 0.0));
        for i in 0..z.len() {
            let zm = z[self.mirror[i]].conj();
            za[i] = (z[i] + zm) * 0.5;
            zb[i] = (z[i] - zm) * Complex64::new(0.0, -0.5);
        }
    }

    /// Inverse transforms of two Hermitian spectra from one complex transform.
    fn inverse_pair(&self, sa: &[Complex64], sb: &[Complex64], a: &mut [f64], b: &mut [f64]) {
        let g = &self.grid;
        let mut z: Vec<Complex64> = sa
            .iter()
            .zip(sb)
            .map(|(x, y)| x + Complex64::new(0.0, 1.0) * y)
            .collect();
        fft::transform(&mut z, g.dim, g.points, true);
        let scale = 1.0 / z.len() as f64;
        for i in 0..z.len() {
            a[i] = z[i].re * scale;
            b[i] = z[i].im * scale;
        }
    }
}

/// Pointwise `|x|^p`, with exact squares for `p = 2`.
fn abs_pow(x: f64, p: f64) -> f64 {
    if p == 2.0 {
        x * x
    } else {
        x.abs().powf(p)
    }
}

struct Rhs {
    op: Operator,
    params: SystemParams,
    fu: Vec<Complex64>,
    fv: Vec<Complex64>,
    pu: Vec<Complex64>,
    pv: Vec<Complex64>,
    powv: Vec<f64>,
    powu: Vec<f64>,
    lap_u: Vec<f64>,
    lap_v: Vec<f64>,
}

impl Rhs {
    fn new(grid: Grid, params: SystemParams) -> Rhs {
        let n = grid.len();
        Rhs {
            op: Operator::new(grid),
            params,
            fu: Vec::new(),
            fv: Vec::new(),
            pu: Vec::new(),
            pv: Vec::new(),
            powv: vec![0.0; n],
            powu: vec![0.0; n],
            lap_u: vec![0.0; n],
            lap_v: vec![0.0; n],
        }
    }

    fn eval(&mut self, t: f64, y: &[f64], dy: &mut [f64]) {
        let n = self.op.grid.len();
        let (u, rest) = y.split_at(n);
        let (ut, rest) = rest.split_at(n);
        let (v, vt) = rest.split_at(n);
        let p = self.params;
        for i in 0..n {
            self.powv[i] = abs_pow(v[i], p.p);
            self.powu[i] = abs_pow(u[i], p.q);
        }
        // (u, v) spectra, then (|v|^p, |u|^q) spectra.
        self.op.forward_pair(u, v, &mut self.fu, &mut self.fv);
        self.op.forward_pair(&self.powv, &self.powu, &mut self.pu, &mut self.pv);
        let speed = t.powf(2.0 * p.m);
        let zero = Complex64::new(0.0, 0.0);
        for i in 0..n {
            let lap = -speed * self.op.k2[i];
            let keep = self.op.keep[i];
            self.fu[i] = self.fu[i] * lap + if keep { self.pu[i] } else { zero };
            self.fv[i] = self.fv[i] * lap + if keep { self.pv[i] } else { zero };
        }
        self.op
            .inverse_pair(&self.fu, &self.fv, &mut self.lap_u, &mut self.lap_v);
        let (du, rest) = dy.split_at_mut(n);
        let (dut, rest) = rest.split_at_mut(n);
        let (dv, dvt) = rest.split_at_mut(n);
        du.copy_from_slice(ut);
        dv.copy_from_slice(vt);
        let (d1, d2) = (p.mu1 / t, p.mu2 / t);
        let (m1, m2) = (p.nu1sq / (t * t), p.nu2sq / (t * t));
        for i in 0..n {
            dut[i] = self.lap_u[i] - d1 * ut[i] - m1 * u[i];
            dvt[i] = self.lap_v[i] - d2 * vt[i] - m2 * v[i];
        }
    }
}

/// Time derivative of the state in first-order form.
pub fn rhs(state: &SystemState, params: &SystemParams) -> Result<SystemState> {
    let grid = *state.grid();
    let mut r = Rhs::new(grid, *params);
    let y = state.pack();
    let mut dy = vec![0.0; y.len()];
    r.eval(state.t, &y, &mut dy);
    SystemState::unpack(grid, state.t, &dy)
}

/// Time weights of the decay norms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightProfile {
    pub m: f64,
    pub n: u32,
    pub sigma: f64,
    /// `(sqrt(delta_i) - mu_i + 1)/2 = 1 - beta_i`.
    pub rho1: f64,
    pub rho2: f64,
    pub log_flag1: bool,
    pub log_flag2: bool,
}

impl WeightProfile {
    pub fn from_constants(consts: &DerivedConstants, n: u32, sigma: f64) -> WeightProfile {
        WeightProfile {
            m: consts.phi_m_scale.m,
            n,
            sigma,
            rho1: 1.0 - consts.beta1,
            rho2: 1.0 - consts.beta2,
            log_flag1: consts.log_flag1,
            log_flag2: consts.log_flag2,
        }
    }

    pub fn from_params(params: &SystemParams) -> Result<WeightProfile> {
        let d1 = params.delta1();
        let d2 = params.delta2();
        if !(d1 > 0.0) {
            return Err(Error::NonPositiveDelta { index: 1, value: d1 });
        }
        if !(d2 > 0.0) {
            return Err(Error::NonPositiveDelta { index: 2, value: d2 });
        }
        let th = params.sigma_threshold();
        let on = |d: f64| (d - th).abs() <= THRESHOLD_REL_TOL * d.max(th);
        Ok(WeightProfile {
            m: params.m,
            n: params.n,
            sigma: params.sigma,
            rho1: (d1.sqrt() - params.mu1 + 1.0) / 2.0,
            rho2: (d2.sqrt() - params.mu2 + 1.0) / 2.0,
            log_flag1: on(d1),
            log_flag2: on(d2),
        })
    }

    fn ell(&self, i: usize, t: f64) -> f64 {
        let flag = if i == 1 { self.log_flag1 } else { self.log_flag2 };
        if flag {
            (1.0 + t.ln()).sqrt()
        } else {
            1.0
        }
    }

    /// Exponents of the four weights for equation `i`: `L2`, `Hdot^sigma`,
    /// time derivative in `L2`, time derivative in `Hdot^{sigma-1}`.
    pub fn exponents(&self, i: usize) -> [f64; 4] {
        let rho = if i == 1 { self.rho1 } else { self.rho2 };
        let a = self.m + 1.0;
        let h = self.n as f64 / 2.0;
        [
            -rho + a * h,
            -rho + a * (self.sigma + h),
            -self.m - rho + a * (1.0 + h),
            -self.m - rho + a * (self.sigma + h),
        ]
    }

    /// `(W_i, M_i)` from the four norms; `M_i` is `None` below `sigma = 1`.
    pub fn combine(&self, i: usize, t: f64, l2: f64, hs: f64, dt_l2: f64, dt_hs1: f64) -> (f64, Option<f64>) {
        let e = self.exponents(i);
        let inv_ell = 1.0 / self.ell(i, t);
        let w = t.powf(e[0]) * l2 + t.powf(e[1]) * inv_ell * hs;
        let m = if self.sigma < 1.0 {
            None
        } else {
            let third = if self.sigma > 1.0 { t.powf(e[2]) * dt_l2 } else { 0.0 };
            Some(w + third + t.powf(e[3]) * inv_ell * dt_hs1)
        };
        (w, m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightedNorms {
    pub m1: Option<f64>,
    pub m2: Option<f64>,
    pub w1: f64,
    pub w2: f64,
}

pub fn weighted_norms_with(state: &SystemState, w: &WeightProfile) -> WeightedNorms {
    let s = w.sigma;
    let d = (s - 1.0).max(0.0);
    let (w1, m1) = w.combine(
        1,
        state.t,
        state.u.l2_norm(),
        state.u.hdot_norm(s),
        state.ut.l2_norm(),
        state.ut.hdot_norm(d),
    );
    let (w2, m2) = w.combine(
        2,
        state.t,
        state.v.l2_norm(),
        state.v.hdot_norm(s),
        state.vt.l2_norm(),
        state.vt.hdot_norm(d),
    );
    WeightedNorms { m1, m2, w1, w2 }
}

pub fn weighted_norms(state: &SystemState, consts: &DerivedConstants, sigma: f64) -> WeightedNorms {
    let w = WeightProfile::from_constants(consts, state.grid().dim as u32, sigma);
    weighted_norms_with(state, &w)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub u: NormBundle,
    /// Norms of `u_t`; the `hdot_sigma`/`h_sigma` entries use order `sigma - 1`.
    pub ut: NormBundle,
    pub v: NormBundle,
    pub vt: NormBundle,
    pub weighted: Option<WeightedNorms>,
    pub support_u: f64,
    pub support_v: f64,
    /// Last accepted step size.
    pub dt: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    CompletedHorizon,
    BlowUpSuspected,
    Diverged,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    pub outcome: Outcome,
    pub snapshots: Vec<SystemState>,
    /// Time reached.
    pub t_end: f64,
    pub grid: Grid,
    /// Radius of the initial data support used for the envelope.
    pub initial_radius: f64,
    pub steps_accepted: usize,
    pub steps_rejected: usize,
    /// Accepted steps where a support radius exceeded the envelope plus one cell.
    pub support_violations: usize,
    /// Largest `radius - envelope` seen over checked steps.
    pub max_support_excess: f64,
    pub support_checks: usize,
    /// `(t, radius, envelope)` of the first violation.
    pub first_violation: Option<(f64, f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimControls {
    pub rel_tol: f64,
    /// Blow-up is suspected once `|u|_2 + |v|_2` exceeds this multiple of
    /// its initial value.
    pub blowup_factor: f64,
    pub dt_floor: f64,
    pub cfl_safety: f64,
    pub samples_per_decade: usize,
    /// Store full states every `snapshot_interval` time units.
    pub snapshot_interval: Option<f64>,
    /// Stop storing snapshots after this time.
    pub snapshot_until: Option<f64>,
    /// Measure support radii after every accepted step.
    pub check_support: bool,
    pub max_steps: usize,
}

impl Default for SimControls {
    fn default() -> Self {
        SimControls {
            rel_tol: SIMULATION_RTOL,
            blowup_factor: BLOWUP_FACTOR,
            dt_floor: DT_FLOOR,
            cfl_safety: CFL_SAFETY,
            samples_per_decade: SAMPLES_PER_DECADE,
            snapshot_interval: None,
            snapshot_until: None,
            check_support: false,
            max_steps: 50_000_000,
        }
    }
}

/// Box half length that keeps the support of data in `B_M` inside the box
/// up to `t_max`, with a 20% margin.
pub fn auto_half_length(m: f64, t_max: f64, initial_radius: f64) -> f64 {
    let phi = crate::criticality::PhiM { m };
    1.2 * phi.envelope(t_max, initial_radius)
}

fn sample_of(state: &SystemState, weights: Option<&WeightProfile>, sigma: f64, dt: f64) -> Sample {
    let d = (sigma - 1.0).max(0.0);
    Sample {
        t: state.t,
        u: norms(&state.u, sigma),
        ut: norms(&state.ut, d),
        v: norms(&state.v, sigma),
        vt: norms(&state.vt, d),
        weighted: weights.map(|w| weighted_norms_with(state, w)),
        support_u: state.support_radius_u,
        support_v: state.support_radius_v,
        dt,
    }
}

/// Merge two ascending time lists.
fn merge_times(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut all: Vec<f64> = a.iter().chain(b).copied().collect();
    all.sort_by(|x, y| x.partial_cmp(y).unwrap());
    all.dedup_by(|x, y| (*x - *y).abs() <= 1e-12 * y.abs());
    all
}

/// Integrate the coupled system from `initial` (at `t = 1`) to `t_max`.
pub fn simulate(
    initial: &SystemState,
    params: &SystemParams,
    t_max: f64,
    controls: &SimControls,
) -> Result<Trajectory> {
    params.validate()?;
    if initial.t != 1.0 {
        return Err(Error::InvalidParams {
            name: "initial.t",
            reason: format!("simulation starts at t = 1, got {}", initial.t),
        });
    }
    if !(t_max > 1.0) {
        return Err(Error::InvalidParams {
            name: "t_max",
            reason: format!("must exceed 1, got {t_max}"),
        });
    }
    let grid = *initial.grid();
    if params.n as usize != grid.dim {
        return Err(Error::GridMismatch(format!(
            "grid dimension {} but n = {}",
            grid.dim, params.n
        )));
    }
    let m0 = initial.data_support();
    if m0 + 2.0 * grid.dx() >= grid.half_length {
        return Err(Error::UnsupportedSupport {
            radius: m0,
            half_length: grid.half_length,
        });
    }
    let weights = WeightProfile::from_params(params).ok();
    let sigma = params.sigma;
    let phi = crate::criticality::PhiM { m: params.m };

    let mut stops = geometric_grid(1.0, t_max, controls.samples_per_decade.max(1));
    let mut snap_times = Vec::new();
    if let Some(dt) = controls.snapshot_interval {
        if !(dt > 0.0) {
            return Err(Error::InvalidParams {
                name: "snapshot_interval",
                reason: "must be positive".into(),
            });
        }
        let until = controls.snapshot_until.unwrap_or(t_max).min(t_max);
        let count = ((until - 1.0) / dt + 1e-9).floor() as usize;
        snap_times = (0..=count).map(|j| 1.0 + j as f64 * dt).collect();
        stops = merge_times(&stops, &snap_times);
    }

    let mut samples = vec![sample_of(initial, weights.as_ref(), sigma, 0.0)];
    let mut snapshots = Vec::new();
    if !snap_times.is_empty() {
        snapshots.push(initial.clone());
    }
    let initial_size = initial.l2_size();
    let threshold = controls.blowup_factor * initial_size;
    let n = grid.len();
    let k_max = grid.k_max();
    let cell = grid.dx();
    let radii = grid.radius_table();

    let mut rhs_eval = Rhs::new(grid, *params);
    let mut opts = Dopri5Options::new(controls.rel_tol);
    opts.block = n;
    opts.h_min = controls.dt_floor;
    opts.max_steps = controls.max_steps;
    let mut stepper = Dopri5::new(
        1.0,
        initial.pack(),
        |t: f64, y: &[f64], dy: &mut [f64]| rhs_eval.eval(t, y, dy),
        opts,
    );

    let mut support_violations = 0;
    let mut max_excess = f64::NEG_INFINITY;
    let mut support_checks = 0;
    let mut first_violation = None;
    let mut outcome = Outcome::CompletedHorizon;
    let cap = |t: f64| controls.cfl_safety * t.powf(-params.m) / k_max;
    let mut snap_iter = snap_times.iter().skip(1).peekable();

    'outer: for &stop in stops.iter().skip(1) {
        while stepper.t() < stop {
            match stepper.step(stop, cap(stepper.t())) {
                Ok(()) => {}
                Err(Error::StepCollapse { .. }) => {
                    if stepper.accepted_steps() > controls.max_steps {
                        outcome = Outcome::Diverged;
                    } else {
                        outcome = Outcome::BlowUpSuspected;
                    }
                    break 'outer;
                }
                Err(e) => return Err(e),
            }
            let y = stepper.y();
            if y.iter().any(|v| !v.is_finite()) {
                outcome = Outcome::Diverged;
                break 'outer;
            }
            let l2 = |k: usize| {
                (y[k * n..(k + 1) * n].iter().map(|v| v * v).sum::<f64>() * grid.cell_volume())
                    .sqrt()
            };
            if initial_size > 0.0 && l2(0) + l2(2) > threshold {
                outcome = Outcome::BlowUpSuspected;
                break 'outer;
            }
            if controls.check_support {
                let envelope = phi.envelope(stepper.t(), m0);
                for k in [0, 2] {
                    let field = &y[k * n..(k + 1) * n];
                    let peak = field.iter().fold(0.0f64, |a, v| a.max(v.abs()));
                    if peak == 0.0 {
                        continue;
                    }
                    let cut = SUPPORT_THRESHOLD * peak;
                    let r = field
                        .iter()
                        .zip(&radii)
                        .filter(|(v, _)| v.abs() > cut)
                        .map(|(_, r)| *r)
                        .fold(0.0, f64::max);
                    support_checks += 1;
                    max_excess = max_excess.max(r - envelope);
                    if r > envelope + cell {
                        if support_violations == 0 {
                            first_violation = Some((stepper.t(), r, envelope));
                        }
                        support_violations += 1;
                    }
                }
            }
        }
        let state = SystemState::unpack(grid, stepper.t(), stepper.y())?;
        let is_snap = snap_iter
            .peek()
            .is_some_and(|&&ts| (ts - stop).abs() <= 1e-12 * stop);
        if is_snap {
            snap_iter.next();
            snapshots.push(state.clone());
        }
        samples.push(sample_of(&state, weights.as_ref(), sigma, stepper.last_step()));
    }

    let steps_accepted = stepper.accepted_steps();
    let steps_rejected = stepper.rejected_steps();
    let t_end = stepper.t();
    if outcome != Outcome::CompletedHorizon {
        let (t, y) = stepper.into_state();
        if y.iter().all(|v| v.is_finite()) && samples.last().is_some_and(|s| s.t < t) {
            let state = SystemState::unpack(grid, t, &y)?;
            samples.push(sample_of(&state, weights.as_ref(), sigma, 0.0));
        }
    }
    Ok(Trajectory {
        samples,
        outcome,
        snapshots,
        t_end,
        grid,
        initial_radius: m0,
        steps_accepted,
        steps_rejected,
        support_violations,
        max_support_excess: max_excess,
        support_checks,
        first_violation,
    })
}

/// Verdict of a run repeated with half the grid spacing and a tenfold
/// tighter tolerance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RefinedVerdict {
    Confirmed(Outcome),
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefinementReport {
    pub coarse: Trajectory,
    pub fine: Trajectory,
    pub verdict: RefinedVerdict,
}

pub fn simulate_refined(
    data: &DataSpec,
    grid: Grid,
    seed: u64,
    params: &SystemParams,
    t_max: f64,
    controls: &SimControls,
) -> Result<RefinementReport> {
    let coarse = simulate(&SystemState::initial(data, grid, seed)?, params, t_max, controls)?;
    let fine_grid = Grid::new(grid.dim, grid.points * 2, grid.half_length)?;
    let fine_controls = SimControls {
        rel_tol: controls.rel_tol / 10.0,
        ..*controls
    };
    let fine = simulate(
        &SystemState::initial(data, fine_grid, seed)?,
        params,
        t_max,
        &fine_controls,
    )?;
    let verdict = if coarse.outcome == fine.outcome {
        RefinedVerdict::Confirmed(coarse.outcome)
    } else {
        RefinedVerdict::Inconclusive
    };
    Ok(RefinementReport {
        coarse,
        fine,
        verdict,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormFit {
    pub name: String,
    pub fitted: f64,
    pub theory: f64,
    pub relative_error: f64,
    pub pass: bool,
    pub fit: PowerFit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayReport {
    pub window: (f64, f64),
    pub fits: Vec<NormFit>,
    pub pass: bool,
}

impl DecayReport {
    pub fn get(&self, name: &str) -> Option<&NormFit> {
        self.fits.iter().find(|f| f.name == name)
    }
}

/// Theoretical decay exponents keyed by norm name; `u` norms carry
/// `alpha1`, `v` norms `alpha2`.
pub fn theory_exponents(consts: &DerivedConstants, n: u32, sigma: f64) -> Vec<(&'static str, f64, f64)> {
    let w = WeightProfile::from_constants(consts, n, sigma);
    let mut out = Vec::new();
    for (i, alpha, names) in [
        (1, consts.alpha1, ["u_l2", "u_hdot", "ut_l2", "ut_hdot"]),
        (2, consts.alpha2, ["v_l2", "v_hdot", "vt_l2", "vt_hdot"]),
    ] {
        let e = w.exponents(i);
        let flag = if i == 1 { w.log_flag1 } else { w.log_flag2 };
        let log_c = if flag { 0.5 } else { 0.0 };
        out.push((names[0], -e[0] + alpha, 0.0));
        out.push((names[1], -e[1] + alpha, log_c));
        if sigma >= 1.0 {
            if sigma > 1.0 {
                out.push((names[2], -e[2] + alpha, 0.0));
            }
            out.push((names[3], -e[3] + alpha, log_c));
        }
    }
    out
}

/// Fit decay exponents of every tracked norm over `t >= 10`.
pub fn decay_report(traj: &Trajectory, consts: &DerivedConstants, sigma: f64) -> Result<DecayReport> {
    if traj.outcome != Outcome::CompletedHorizon {
        return Err(Error::InsufficientSpan(format!(
            "run ended with {:?}",
            traj.outcome
        )));
    }
    let t_lo = 10.0;
    let window: Vec<&Sample> = traj.samples.iter().filter(|s| s.t >= t_lo * (1.0 - 1e-12)).collect();
    let t_hi = window.last().map(|s| s.t).unwrap_or(0.0);
    if window.len() < 2 || t_hi < 10.0 * t_lo * (1.0 - 1e-9) {
        return Err(Error::InsufficientSpan(format!(
            "need a decade of samples after t = {t_lo}, have up to t = {t_hi}"
        )));
    }
    let ts: Vec<f64> = window.iter().map(|s| s.t).collect();
    let mut fits = Vec::new();
    for (name, theory, log_c) in theory_exponents(consts, traj.grid.dim as u32, sigma) {
        let ys: Vec<f64> = window
            .iter()
            .map(|s| match name {
                "u_l2" => s.u.l2,
                "u_hdot" => s.u.hdot_sigma,
                "ut_l2" => s.ut.l2,
                "ut_hdot" => s.ut.hdot_sigma,
                "v_l2" => s.v.l2,
                "v_hdot" => s.v.hdot_sigma,
                "vt_l2" => s.vt.l2,
                _ => s.vt.hdot_sigma,
            })
            .collect();
        let fit = power_law_fit(&ts, &ys, log_c)?;
        let relative_error = (fit.exponent - theory).abs() / theory.abs().max(f64::MIN_POSITIVE);
        fits.push(NormFit {
            name: name.to_string(),
            fitted: fit.exponent,
            theory,
            relative_error,
            pass: relative_error <= SEMILINEAR_DECAY_REL_TOL,
            fit,
        });
    }
    let pass = fits.iter().all(|f| f.pass);
    Ok(DecayReport {
        window: (ts[0], t_hi),
        fits,
        pass,
    })
}

/// Column order of the trajectory CSV.
pub const TRAJECTORY_COLUMNS: &[&str] = &[
    "t", "dt", "u_l1", "u_l2", "u_hdot", "u_h", "ut_l2", "ut_hdot", "v_l1", "v_l2", "v_hdot",
    "v_h", "vt_l2", "vt_hdot", "m1", "m2", "w1", "w2", "support_u", "support_v",
];

pub fn write_trajectory_csv(w: &mut impl Write, traj: &Trajectory) -> Result<()> {
    writeln!(w, "{}", TRAJECTORY_COLUMNS.join(","))?;
    let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    for s in &traj.samples {
        let wn = s.weighted;
        let row = [
            s.t.to_string(),
            s.dt.to_string(),
            s.u.l1.to_string(),
            s.u.l2.to_string(),
            s.u.hdot_sigma.to_string(),
            s.u.h_sigma.to_string(),
            s.ut.l2.to_string(),
            s.ut.hdot_sigma.to_string(),
            s.v.l1.to_string(),
            s.v.l2.to_string(),
            s.v.hdot_sigma.to_string(),
            s.v.h_sigma.to_string(),
            s.vt.l2.to_string(),
            s.vt.hdot_sigma.to_string(),
            opt(wn.and_then(|x| x.m1)),
            opt(wn.and_then(|x| x.m2)),
            opt(wn.map(|x| x.w1)),
            opt(wn.map(|x| x.w2)),
            s.support_u.to_string(),
            s.support_v.to_string(),
        ];
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PicardOptions {
    pub max_iters: usize,
    /// Tolerance of the per-mode fundamental matrices.
    pub rel_tol: f64,
    pub nodes_per_decade: usize,
    pub gl_order: usize,
    /// Stop once the iterate change falls below this fraction of its size.
    pub stop_tol: f64,
}

impl Default for PicardOptions {
    fn default() -> Self {
        PicardOptions {
            max_iters: 30,
            rel_tol: 1e-11,
            nodes_per_decade: 64,
            gl_order: 8,
            stop_tol: 1e-13,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PicardResult {
    pub state: SystemState,
    /// `deltas[j]` is the weighted distance between iterates `j+1` and `j`;
    /// iterate 0 is the free evolution.
    pub deltas: Vec<f64>,
    /// First iteration whose delta met the stopping tolerance.
    pub fixed_point_iteration: Option<usize>,
    pub node_times: Vec<f64>,
}

impl PicardResult {
    /// Ratios of successive deltas while both are above `floor`.
    pub fn contraction_ratios(&self, floor: f64) -> Vec<f64> {
        self.deltas
            .windows(2)
            .filter(|w| w[0] > floor && w[1] > floor)
            .map(|w| w[1] / w[0])
            .collect()
    }
}

/// One quadrature source: a time, a weight, and how its forcing is formed
/// from the forcing at the nodes of one panel.
struct Source {
    time_index: usize,
    weight: f64,
    /// `(node index, Lagrange coefficient)`; a single unit entry for a node.
    mix: Vec<(usize, f64)>,
}

/// Iterate the Duhamel map from the free evolution of `data`.
pub fn picard_iterate(
    data: [&SpectralField; 4],
    params: &SystemParams,
    t_max: f64,
    opts: &PicardOptions,
) -> Result<PicardResult> {
    params.validate()?;
    let grid = *data[0].grid();
    for f in &data[1..] {
        grid.check_same(f.grid())?;
    }
    if !(t_max > 1.0) {
        return Err(Error::InvalidParams {
            name: "t_max",
            reason: format!("must exceed 1, got {t_max}"),
        });
    }
    let weights = WeightProfile::from_params(params)?;
    let g = opts.gl_order.max(1);
    let panels = (((t_max.log10() * opts.nodes_per_decade as f64) / g as f64).ceil() as usize).max(1);
    let edges: Vec<f64> = (0..=panels)
        .map(|j| if j == panels { t_max } else { t_max.powf(j as f64 / panels as f64) })
        .collect();
    let (gx, gw) = gauss_legendre(g);

    // Quadrature nodes, grouped by panel.
    let mut nodes = Vec::with_capacity(panels * g);
    let mut node_w = Vec::with_capacity(panels * g);
    for j in 0..panels {
        let (a, b) = (edges[j], edges[j + 1]);
        for l in 0..g {
            nodes.push(a + (b - a) * (gx[l] + 1.0) / 2.0);
            node_w.push((b - a) / 2.0 * gw[l]);
        }
    }
    // Targets: every node, then t_max.
    let mut targets = nodes.clone();
    targets.push(t_max);

    // All times at which M(., 1) is needed; index 0.. are nodes, then t_max,
    // then the partial-panel sub-nodes.
    let mut times = targets.clone();
    let mut plans: Vec<Vec<Source>> = Vec::with_capacity(targets.len());
    for (ti, &t) in targets.iter().enumerate() {
        let mut srcs = Vec::new();
        let panel = if ti == nodes.len() { panels } else { ti / g };
        for (ni, w) in node_w.iter().enumerate().take(panel * g) {
            srcs.push(Source {
                time_index: ni,
                weight: *w,
                mix: vec![(ni, 1.0)],
            });
        }
        if panel < panels {
            let a = edges[panel];
            let pn = &nodes[panel * g..(panel + 1) * g];
            for l in 0..g {
                let s = a + (t - a) * (gx[l] + 1.0) / 2.0;
                let w = (t - a) / 2.0 * gw[l];
                let mix = (0..g)
                    .map(|r| {
                        let mut c = 1.0;
                        for q in 0..g {
                            if q != r {
                                c *= (s - pn[q]) / (pn[r] - pn[q]);
                            }
                        }
                        (panel * g + r, c)
                    })
                    .collect();
                srcs.push(Source {
                    time_index: times.len(),
                    weight: w,
                    mix,
                });
                times.push(s);
            }
        }
        plans.push(srcs);
    }
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| times[a].partial_cmp(&times[b]).unwrap());
    let sorted: Vec<f64> = order.iter().map(|&i| times[i]).collect();

    // Fundamental matrices along every active shell, both equations.
    let lp1 = LinearParams { mu: params.mu1, nu_sq: params.nu1sq, m: params.m };
    let lp2 = LinearParams { mu: params.mu2, nu_sq: params.nu2sq, m: params.m };
    let shells: Vec<u64> = {
        let mut s: Vec<u64> = (0..grid.len()).map(|i| grid.shell(i)).collect();
        s.sort_unstable();
        s.dedup();
        s
    };
    let ku = grid.k_unit();
    let paths = |lp: LinearParams| -> Result<Vec<Vec<FundamentalMatrix>>> {
        shells
            .par_iter()
            .map(|&s| {
                let sorted_mats = fundamental_path(ku * (s as f64).sqrt(), 1.0, &sorted, lp, opts.rel_tol)?;
                let mut mats = vec![FundamentalMatrix::identity(1.0); times.len()];
                for (pos, &orig) in order.iter().enumerate() {
                    mats[orig] = sorted_mats[pos];
                }
                Ok(mats)
            })
            .collect()
    };
    let path1 = paths(lp1)?;
    let path2 = paths(lp2)?;
    let shell_index: Vec<usize> = (0..grid.len())
        .map(|i| shells.binary_search(&grid.shell(i)).unwrap())
        .collect();

    let spec: Vec<Vec<Complex64>> = data.iter().map(|f| f.spectrum().to_vec()).collect();
    let nt = targets.len();
    let len = grid.len();
    let zero = Complex64::new(0.0, 0.0);
    let keep = grid.dealias_table();

    // Free evolution at every target: value and velocity spectra.
    let free = |path: &Vec<Vec<FundamentalMatrix>>, f: &[Complex64], g1: &[Complex64]| {
        (0..nt)
            .map(|ti| {
                let mut val = vec![zero; len];
                let mut vel = vec![zero; len];
                for i in 0..len {
                    let (a, b) = path[shell_index[i]][ti].apply(f[i], g1[i]);
                    val[i] = a;
                    vel[i] = b;
                }
                (val, vel)
            })
            .collect::<Vec<_>>()
    };
    let free_u = free(&path1, &spec[0], &spec[1]);
    let free_v = free(&path2, &spec[2], &spec[3]);

    // Duhamel kernel (value and velocity rows of M(t, s) applied to (0, 1)).
    let kernel = |m_t: &FundamentalMatrix, m_s: &FundamentalMatrix| -> (f64, f64) {
        let a = &m_t.entries;
        let b = &m_s.entries;
        let det = b[0][0] * b[1][1] - b[0][1] * b[1][0];
        (
            (-a[0][0] * b[0][1] + a[0][1] * b[0][0]) / det,
            (-a[1][0] * b[0][1] + a[1][1] * b[0][0]) / det,
        )
    };

    let to_physical = |s: &[Complex64]| fft::inverse_real(s, grid.dim, grid.points);
    let mut cur_u: Vec<(Vec<Complex64>, Vec<Complex64>)> = free_u.clone();
    let mut cur_v: Vec<(Vec<Complex64>, Vec<Complex64>)> = free_v.clone();
    let mut deltas = Vec::new();
    let mut fixed = None;
    let mut rising = 0;

    let forcing = |vals: &[(Vec<Complex64>, Vec<Complex64>)], power: f64| -> Vec<Vec<Complex64>> {
        (0..nodes.len())
            .map(|ni| {
                let phys = to_physical(&vals[ni].0);
                let pw: Vec<f64> = phys.iter().map(|&x| abs_pow(x, power)).collect();
                let mut s = fft::forward_real(&pw, grid.dim, grid.points);
                for (z, k) in s.iter_mut().zip(&keep) {
                    if !k {
                        *z = zero;
                    }
                }
                s
            })
            .collect()
    };

    let apply = |free: &Vec<(Vec<Complex64>, Vec<Complex64>)>,
                 path: &Vec<Vec<FundamentalMatrix>>,
                 force: &Vec<Vec<Complex64>>|
     -> Vec<(Vec<Complex64>, Vec<Complex64>)> {
        (0..nt)
            .map(|ti| {
                let (mut val, mut vel) = free[ti].clone();
                for src in &plans[ti] {
                    // Forcing spectrum at the source time.
                    let mut fs = vec![zero; len];
                    for &(ni, c) in &src.mix {
                        for i in 0..len {
                            fs[i] += force[ni][i] * c;
                        }
                    }
                    for i in 0..len {
                        if fs[i] == zero {
                            continue;
                        }
                        let sh = shell_index[i];
                        let (kv, kd) = kernel(&path[sh][ti], &path[sh][src.time_index]);
                        val[i] += fs[i] * (src.weight * kv);
                        vel[i] += fs[i] * (src.weight * kd);
                    }
                }
                (val, vel)
            })
            .collect()
    };

    let weighted_gap = |a: &[(Vec<Complex64>, Vec<Complex64>)], b: &[(Vec<Complex64>, Vec<Complex64>)], c: &[(Vec<Complex64>, Vec<Complex64>)], d: &[(Vec<Complex64>, Vec<Complex64>)]| -> Result<(f64, f64)> {
        let mut gap = 0.0f64;
        let mut size = 0.0f64;
        for ti in 0..nt {
            let t = targets[ti];
            let du: Vec<Complex64> = a[ti].0.iter().zip(&b[ti].0).map(|(x, y)| x - y).collect();
            let dv: Vec<Complex64> = c[ti].0.iter().zip(&d[ti].0).map(|(x, y)| x - y).collect();
            let fu = SpectralField::from_spectrum(grid, du)?;
            let fv = SpectralField::from_spectrum(grid, dv)?;
            let (w1, _) = weights.combine(1, t, fu.l2_norm_spectral(), fu.hdot_norm(weights.sigma), 0.0, 0.0);
            let (w2, _) = weights.combine(2, t, fv.l2_norm_spectral(), fv.hdot_norm(weights.sigma), 0.0, 0.0);
            gap = gap.max(w1 + w2);
            let su = SpectralField::from_spectrum(grid, a[ti].0.clone())?;
            let sv = SpectralField::from_spectrum(grid, c[ti].0.clone())?;
            let (s1, _) = weights.combine(1, t, su.l2_norm_spectral(), su.hdot_norm(weights.sigma), 0.0, 0.0);
            let (s2, _) = weights.combine(2, t, sv.l2_norm_spectral(), sv.hdot_norm(weights.sigma), 0.0, 0.0);
            size = size.max(s1 + s2);
        }
        Ok((gap, size))
    };

    for it in 0..opts.max_iters {
        let fv = forcing(&cur_v, params.p);
        let fu = forcing(&cur_u, params.q);
        let next_u = apply(&free_u, &path1, &fv);
        let next_v = apply(&free_v, &path2, &fu);
        let (gap, size) = weighted_gap(&next_u, &cur_u, &next_v, &cur_v)?;
        cur_u = next_u;
        cur_v = next_v;
        if let Some(&prev) = deltas.last() {
            if gap >= prev {
                rising += 1;
            } else {
                rising = 0;
            }
        }
        deltas.push(gap);
        if gap <= opts.stop_tol * size || gap == 0.0 {
            fixed = Some(it);
            break;
        }
        if rising >= 3 {
            return Err(Error::NonContraction(deltas));
        }
    }

    let last = nt - 1;
    let state = SystemState::new(
        t_max,
        SpectralField::from_spectrum(grid, cur_u[last].0.clone())?,
        SpectralField::from_spectrum(grid, cur_u[last].1.clone())?,
        SpectralField::from_spectrum(grid, cur_v[last].0.clone())?,
        SpectralField::from_spectrum(grid, cur_v[last].1.clone())?,
    )?;
    Ok(PicardResult {
        state,
        deltas,
        fixed_point_iteration: fixed,
        node_times: nodes,
    })
}
