//! Adaptive Dormand-Prince 5(4) integrator with blockwise error scaling.

use crate::error::{Error, Result};

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dopri5Options {
    pub rtol: f64,
    pub atol: f64,
    /// Components are grouped in consecutive blocks of this length; each
    /// block is scaled by its own max magnitude. `0` means one block.
    pub block: usize,
    /// A step smaller than this is reported as [`Error::StepCollapse`].
    pub h_min: f64,
    pub h_init: Option<f64>,
    pub max_steps: usize,
}

impl Dopri5Options {
    pub fn new(rtol: f64) -> Self {
        Dopri5Options {
            rtol,
            atol: 0.0,
            block: 0,
            h_min: 1e-14,
            h_init: None,
            max_steps: usize::MAX,
        }
    }
}

pub struct Dopri5<F> {
    rhs: F,
    opts: Dopri5Options,
    t: f64,
    y: Vec<f64>,
    h: f64,
    k: [Vec<f64>; 7],
    ytmp: Vec<f64>,
    ynew: Vec<f64>,
    fsal: bool,
    accepted: usize,
    rejected: usize,
    last_h: f64,
}

impl<F: FnMut(f64, &[f64], &mut [f64])> Dopri5<F> {
    pub fn new(t0: f64, y0: Vec<f64>, rhs: F, opts: Dopri5Options) -> Self {
        let n = y0.len();
        let z = || vec![0.0; n];
        Dopri5 {
            rhs,
            opts,
            t: t0,
            y: y0,
            h: opts.h_init.unwrap_or(0.0),
            k: [z(), z(), z(), z(), z(), z(), z()],
            ytmp: z(),
            ynew: z(),
            fsal: false,
            accepted: 0,
            rejected: 0,
            last_h: 0.0,
        }
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn into_state(self) -> (f64, Vec<f64>) {
        (self.t, self.y)
    }

    /// Size of the last accepted step.
    pub fn last_step(&self) -> f64 {
        self.last_h
    }

    pub fn accepted_steps(&self) -> usize {
        self.accepted
    }

    pub fn rejected_steps(&self) -> usize {
        self.rejected
    }

    fn scales(&self, out: &mut Vec<f64>) {
        let n = self.y.len();
        let block = if self.opts.block == 0 { n.max(1) } else { self.opts.block };
        out.clear();
        out.resize(n, 0.0);
        for start in (0..n).step_by(block) {
            let end = (start + block).min(n);
            let mut mag = 0.0f64;
            for i in start..end {
                mag = mag.max(self.y[i].abs()).max(self.ynew[i].abs());
            }
            let s = self.opts.atol + self.opts.rtol * mag;
            for o in &mut out[start..end] {
                *o = s;
            }
        }
    }

    fn initial_step(&mut self, h_cap: f64) -> f64 {
        let n = self.y.len();
        (self.rhs)(self.t, &self.y, &mut self.k[0]);
        self.fsal = true;
        self.ynew.copy_from_slice(&self.y);
        let mut sc = Vec::new();
        self.scales(&mut sc);
        let norm = |v: &[f64], sc: &[f64]| -> f64 {
            let s: f64 = v
                .iter()
                .zip(sc)
                .map(|(a, s)| if *s > 0.0 { (a / s).powi(2) } else { 0.0 })
                .sum();
            (s / n.max(1) as f64).sqrt()
        };
        let d0 = norm(&self.y, &sc);
        let d1 = norm(&self.k[0], &sc);
        let h0 = if d0 < 1e-5 || d1 < 1e-5 {
            1e-6
        } else {
            0.01 * d0 / d1
        };
        let h0 = h0.min(h_cap);
        for i in 0..n {
            self.ytmp[i] = self.y[i] + h0 * self.k[0][i];
        }
        (self.rhs)(self.t + h0, &self.ytmp, &mut self.k[1]);
        let diff: Vec<f64> = self.k[1]
            .iter()
            .zip(&self.k[0])
            .map(|(a, b)| (a - b) / h0)
            .collect();
        let d2 = norm(&diff, &sc);
        let h1 = if d1.max(d2) <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / d1.max(d2)).powf(0.2)
        };
        (100.0 * h0).min(h1).min(h_cap)
    }

    /// Take one accepted step, never passing `t_limit` and never larger
    /// than `h_cap`.
    pub fn step(&mut self, t_limit: f64, h_cap: f64) -> Result<()> {
        let n = self.y.len();
        if self.h <= 0.0 {
            self.h = self.initial_step(h_cap);
        }
        if !self.fsal {
            (self.rhs)(self.t, &self.y, &mut self.k[0]);
            self.fsal = true;
        }
        let mut sc = Vec::with_capacity(n);
        loop {
            let mut h = self.h.min(h_cap);
            let remaining = t_limit - self.t;
            let last = h >= remaining * (1.0 - 1e-12);
            if last {
                h = remaining;
            }
            if h < self.opts.h_min && !last {
                return Err(Error::StepCollapse { t: self.t, h });
            }
            let t = self.t;
            let (k, rest) = self.k.split_at_mut(1);
            let k1 = &k[0];
            let [k2, k3, k4, k5, k6, k7] = rest else {
                unreachable!()
            };
            let y = &self.y;
            let yt = &mut self.ytmp;
            for i in 0..n {
                yt[i] = y[i] + h * A21 * k1[i];
            }
            (self.rhs)(t + C2 * h, yt, k2);
            for i in 0..n {
                yt[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
            }
            (self.rhs)(t + C3 * h, yt, k3);
            for i in 0..n {
                yt[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
            }
            (self.rhs)(t + C4 * h, yt, k4);
            for i in 0..n {
                yt[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
            }
            (self.rhs)(t + C5 * h, yt, k5);
            for i in 0..n {
                yt[i] = y[i]
                    + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
            }
            (self.rhs)(t + h, yt, k6);
            let yn = &mut self.ynew;
            for i in 0..n {
                yn[i] = y[i]
                    + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
            }
            (self.rhs)(t + h, yn, k7);
            self.scales(&mut sc);
            let mut err2 = 0.0;
            let mut finite = true;
            for i in 0..n {
                let e = h
                    * (E1 * self.k[0][i]
                        + E3 * self.k[2][i]
                        + E4 * self.k[3][i]
                        + E5 * self.k[4][i]
                        + E6 * self.k[5][i]
                        + E7 * self.k[6][i]);
                if !e.is_finite() || !self.ynew[i].is_finite() {
                    finite = false;
                    break;
                }
                if sc[i] > 0.0 {
                    err2 += (e / sc[i]).powi(2);
                } else if e != 0.0 {
                    err2 = f64::INFINITY;
                }
            }
            let err = if finite {
                (err2 / n.max(1) as f64).sqrt()
            } else {
                f64::INFINITY
            };
            if err <= 1.0 {
                self.t = if last { t_limit } else { t + h };
                std::mem::swap(&mut self.y, &mut self.ynew);
                self.k.swap(0, 6);
                self.accepted += 1;
                self.last_h = h;
                if self.accepted > self.opts.max_steps {
                    return Err(Error::StepCollapse { t: self.t, h });
                }
                let fac = if err == 0.0 {
                    5.0
                } else {
                    (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
                };
                // Keep the natural step when the last step was only clipped.
                self.h = if last && h < self.h { self.h } else { h * fac };
                return Ok(());
            }
            self.rejected += 1;
            let fac = if err.is_finite() {
                (0.9 * err.powf(-0.2)).clamp(0.1, 0.9)
            } else {
                0.1
            };
            self.h = h * fac;
            if self.h < self.opts.h_min {
                return Err(Error::StepCollapse { t: self.t, h: self.h });
            }
        }
    }

    /// Integrate up to exactly `t_target`.
    pub fn advance_to(&mut self, t_target: f64, h_cap: impl Fn(f64) -> f64) -> Result<()> {
        while self.t < t_target {
            let cap = h_cap(self.t);
            self.step(t_target, cap)?;
        }
        Ok(())
    }
}

/// Classical fixed-step fourth-order Runge-Kutta, used as a brute-force
/// reference integrator.
pub fn rk4_fixed(
    mut rhs: impl FnMut(f64, &[f64], &mut [f64]),
    t0: f64,
    y0: &[f64],
    t1: f64,
    steps: usize,
) -> Vec<f64> {
    let n = y0.len();
    let h = (t1 - t0) / steps as f64;
    let mut y = y0.to_vec();
    let (mut k1, mut k2, mut k3, mut k4, mut tmp) =
        (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for s in 0..steps {
        let t = t0 + s as f64 * h;
        rhs(t, &y, &mut k1);
        for i in 0..n {
            tmp[i] = y[i] + 0.5 * h * k1[i];
        }
        rhs(t + 0.5 * h, &tmp, &mut k2);
        for i in 0..n {
            tmp[i] = y[i] + 0.5 * h * k2[i];
        }
        rhs(t + 0.5 * h, &tmp, &mut k3);
        for i in 0..n {
            tmp[i] = y[i] + h * k3[i];
        }
        rhs(t + h, &tmp, &mut k4);
        for i in 0..n {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    y
}
