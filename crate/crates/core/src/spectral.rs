//! Fields on a periodic box `[-L, L)^dim`, their spectra, Sobolev norms and
//! the interpolation exponents.

use std::io::{Read, Write};
use std::sync::OnceLock;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft;

/// Uniform periodic grid with `points` nodes per axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub dim: usize,
    pub points: usize,
    pub half_length: f64,
}

impl Grid {
    pub fn new(dim: usize, points: usize, half_length: f64) -> Result<Grid> {
        if !(1..=3).contains(&dim) {
            return Err(Error::InvalidParams {
                name: "dim",
                reason: format!("must be 1, 2 or 3, got {dim}"),
            });
        }
        if points < 4 || !points.is_power_of_two() {
            return Err(Error::InvalidParams {
                name: "points",
                reason: format!("must be a power of two >= 4, got {points}"),
            });
        }
        if !(half_length > 0.0 && half_length.is_finite()) {
            return Err(Error::InvalidParams {
                name: "half_length",
                reason: format!("must be positive, got {half_length}"),
            });
        }
        Ok(Grid {
            dim,
            points,
            half_length,
        })
    }

    pub fn len(&self) -> usize {
        self.points.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dx(&self) -> f64 {
        2.0 * self.half_length / self.points as f64
    }

    pub fn cell_volume(&self) -> f64 {
        self.dx().powi(self.dim as i32)
    }

    /// Fundamental wavenumber `pi / L`.
    pub fn k_unit(&self) -> f64 {
        std::f64::consts::PI / self.half_length
    }

    /// Largest `|xi|` represented on the grid.
    pub fn k_max(&self) -> f64 {
        self.k_unit() * (self.points / 2) as f64 * (self.dim as f64).sqrt()
    }

    pub fn coord(&self, j: usize) -> f64 {
        -self.half_length + j as f64 * self.dx()
    }

    /// Split a flat row-major index into per-axis indices.
    pub fn unflatten(&self, mut flat: usize) -> [usize; 3] {
        let mut idx = [0usize; 3];
        for a in (0..self.dim).rev() {
            idx[a] = flat % self.points;
            flat /= self.points;
        }
        idx
    }

    pub fn position(&self, flat: usize) -> [f64; 3] {
        let idx = self.unflatten(flat);
        let mut x = [0.0; 3];
        for a in 0..self.dim {
            x[a] = self.coord(idx[a]);
        }
        x
    }

    pub fn radius(&self, flat: usize) -> f64 {
        let x = self.position(flat);
        x[..self.dim].iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Signed frequency index of axis index `j`; Nyquist maps to `-points/2`.
    pub fn freq_index(&self, j: usize) -> i64 {
        let n = self.points as i64;
        let j = j as i64;
        if j < n / 2 {
            j
        } else {
            j - n
        }
    }

    /// Integer shell label `sum_a freq_index_a^2`; `|xi|^2 = k_unit^2 * shell`.
    pub fn shell(&self, flat: usize) -> u64 {
        let idx = self.unflatten(flat);
        (0..self.dim)
            .map(|a| {
                let f = self.freq_index(idx[a]);
                (f * f) as u64
            })
            .sum()
    }

    pub fn k_squared(&self, flat: usize) -> f64 {
        self.shell(flat) as f64 * self.k_unit() * self.k_unit()
    }

    /// 2/3-rule mask: keep modes with every `|index| <= points/3`.
    pub fn dealias_keep(&self, flat: usize) -> bool {
        let idx = self.unflatten(flat);
        let cut = (self.points / 3) as i64;
        (0..self.dim).all(|a| self.freq_index(idx[a]).abs() <= cut)
    }

    pub fn k_squared_table(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.k_squared(i)).collect()
    }

    pub fn dealias_table(&self) -> Vec<bool> {
        (0..self.len()).map(|i| self.dealias_keep(i)).collect()
    }

    pub fn radius_table(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.radius(i)).collect()
    }

    pub fn check_same(&self, other: &Grid) -> Result<()> {
        if self != other {
            return Err(Error::GridMismatch(format!("{self:?} vs {other:?}")));
        }
        Ok(())
    }
}

/// A real field sampled on a [`Grid`], with a lazily computed spectrum.
///
/// The spectrum uses the unnormalized DFT convention; the inverse carries
/// the `1/N` factor.
#[derive(Debug, Clone)]
pub struct SpectralField {
    grid: Grid,
    values: Vec<f64>,
    spectrum: OnceLock<Vec<Complex64>>,
}

impl PartialEq for SpectralField {
    fn eq(&self, other: &Self) -> bool {
        self.grid == other.grid && self.values == other.values
    }
}

impl SpectralField {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<SpectralField> {
        if values.len() != grid.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a grid of {}",
                values.len(),
                grid.len()
            )));
        }
        Ok(SpectralField {
            grid,
            values,
            spectrum: OnceLock::new(),
        })
    }

    pub fn zeros(grid: Grid) -> SpectralField {
        SpectralField {
            grid,
            values: vec![0.0; grid.len()],
            spectrum: OnceLock::new(),
        }
    }

    pub fn from_fn(grid: Grid, f: impl Fn(&[f64]) -> f64) -> SpectralField {
        let values = (0..grid.len())
            .map(|i| {
                let x = grid.position(i);
                f(&x[..grid.dim])
            })
            .collect();
        SpectralField {
            grid,
            values,
            spectrum: OnceLock::new(),
        }
    }

    /// Build from a spectrum, which is kept verbatim as the frequency data.
    pub fn from_spectrum(grid: Grid, spectrum: Vec<Complex64>) -> Result<SpectralField> {
        if spectrum.len() != grid.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} coefficients for a grid of {}",
                spectrum.len(),
                grid.len()
            )));
        }
        let values = fft::inverse_real(&spectrum, grid.dim, grid.points);
        let cell = OnceLock::new();
        let _ = cell.set(spectrum);
        Ok(SpectralField {
            grid,
            values,
            spectrum: cell,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn spectrum(&self) -> &[Complex64] {
        self.spectrum
            .get_or_init(|| fft::forward_real(&self.values, self.grid.dim, self.grid.points))
    }

    pub fn scaled(&self, c: f64) -> SpectralField {
        let values = self.values.iter().map(|v| c * v).collect();
        let spectrum = OnceLock::new();
        if let Some(s) = self.spectrum.get() {
            let _ = spectrum.set(s.iter().map(|z| z * c).collect());
        }
        SpectralField {
            grid: self.grid,
            values,
            spectrum,
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    /// Largest `|x|` over grid points where `|f| > threshold * max|f|`;
    /// zero for the zero field.
    pub fn support_radius(&self, threshold: f64) -> f64 {
        let peak = self.max_abs();
        if peak == 0.0 {
            return 0.0;
        }
        let cut = threshold * peak;
        self.values
            .iter()
            .enumerate()
            .filter(|(_, v)| v.abs() > cut)
            .map(|(i, _)| self.grid.radius(i))
            .fold(0.0, f64::max)
    }

    /// Grid quadrature of `|f|^r`, raised to `1/r`.
    pub fn lr_norm(&self, r: f64) -> f64 {
        let s: f64 = self.values.iter().map(|v| v.abs().powf(r)).sum();
        (s * self.grid.cell_volume()).powf(1.0 / r)
    }

    pub fn l1_norm(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).sum::<f64>() * self.grid.cell_volume()
    }

    pub fn l2_norm(&self) -> f64 {
        (self.values.iter().map(|v| v * v).sum::<f64>() * self.grid.cell_volume()).sqrt()
    }

    /// `sqrt(sum_xi w(|xi|^2) |f_hat|^2)` with the Parseval normalization.
    pub fn weighted_spectral_norm(&self, weight: impl Fn(f64) -> f64) -> f64 {
        let spec = self.spectrum();
        let ku2 = self.grid.k_unit() * self.grid.k_unit();
        let mut s = 0.0;
        for (i, z) in spec.iter().enumerate() {
            let a = z.norm_sqr();
            if a == 0.0 {
                continue;
            }
            s += weight(self.grid.shell(i) as f64 * ku2) * a;
        }
        (s * self.grid.cell_volume() / self.grid.len() as f64).sqrt()
    }

    /// `L^2` norm computed on the frequency side.
    pub fn l2_norm_spectral(&self) -> f64 {
        self.weighted_spectral_norm(|_| 1.0)
    }

    /// Homogeneous `H^s` seminorm, symbol `|xi|^s`; the zero mode is dropped
    /// for `s != 0`.
    pub fn hdot_norm(&self, s: f64) -> f64 {
        if s == 0.0 {
            return self.l2_norm();
        }
        self.weighted_spectral_norm(|k2| if k2 == 0.0 { 0.0 } else { k2.powf(s) })
    }

    /// Inhomogeneous `H^s` norm, symbol `(1 + |xi|^2)^{s/2}`.
    pub fn h_norm(&self, s: f64) -> f64 {
        if s == 0.0 {
            return self.l2_norm();
        }
        self.weighted_spectral_norm(|k2| (1.0 + k2).powf(s))
    }
}

/// Multiply the spectrum by `|xi|^s`; the zero mode is sent to 0 when `s > 0`.
pub fn fractional_derivative(f: &SpectralField, s: f64) -> Result<SpectralField> {
    if s < 0.0 || s.is_nan() {
        return Err(Error::NegativeOrder(s));
    }
    if s == 0.0 {
        return SpectralField::from_spectrum(f.grid, f.spectrum().to_vec());
    }
    let ku = f.grid.k_unit();
    let spec: Vec<Complex64> = f
        .spectrum()
        .iter()
        .enumerate()
        .map(|(i, z)| {
            let shell = f.grid.shell(i);
            if shell == 0 {
                Complex64::new(0.0, 0.0)
            } else {
                z * (ku * (shell as f64).sqrt()).powf(s)
            }
        })
        .collect();
    SpectralField::from_spectrum(f.grid, spec)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormBundle {
    pub l1: f64,
    pub l2: f64,
    pub hdot_sigma: f64,
    pub h_sigma: f64,
    /// Data norm of a `(f, g)` pair, present only when a pair was supplied.
    pub d_sigma: Option<f64>,
}

impl NormBundle {
    pub fn zero() -> NormBundle {
        NormBundle {
            l1: 0.0,
            l2: 0.0,
            hdot_sigma: 0.0,
            h_sigma: 0.0,
            d_sigma: None,
        }
    }
}

pub fn norms(f: &SpectralField, sigma: f64) -> NormBundle {
    NormBundle {
        l1: f.l1_norm(),
        l2: f.l2_norm(),
        hdot_sigma: f.hdot_norm(sigma),
        h_sigma: f.h_norm(sigma),
        d_sigma: None,
    }
}

/// Norms of `f` together with the data norm of the pair `(f, g)`:
/// `|f|_{L1} + |f|_{H^sigma} + |g|_{L1} + |g|_{H^{sigma-1}}` for `sigma >= 1`
/// and `... + |g|_{L2}` below.
pub fn norms_pair(f: &SpectralField, g: &SpectralField, sigma: f64) -> Result<NormBundle> {
    f.grid.check_same(&g.grid)?;
    let mut b = norms(f, sigma);
    let g_part = if sigma >= 1.0 {
        g.h_norm(sigma - 1.0)
    } else {
        g.l2_norm()
    };
    b.d_sigma = Some(b.l1 + b.h_sigma + g.l1_norm() + g_part);
    Ok(b)
}

/// Interpolation exponent and whether it lies in its admissible interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Theta {
    pub value: f64,
    pub admissible: bool,
}

/// `theta_1(r) = (1/2 - 1/r) n / sigma`, and the shifted flavours
/// `theta_2 = theta_1 + (sigma-1)/sigma`, `theta_3 = theta_1 + (sigma-2)/sigma`.
pub fn theta_exponents(n: u32, sigma: f64, r: f64, flavor: u32) -> Result<Theta> {
    if !(r >= 1.0) {
        return Err(Error::InvalidParams {
            name: "r",
            reason: format!("must be at least 1, got {r}"),
        });
    }
    let needed = match flavor {
        1 => 0.0,
        2 => 1.0,
        3 => 2.0,
        _ => return Err(Error::InvalidOrder(flavor)),
    };
    if flavor > 1 && !(sigma > needed) {
        return Err(Error::FlavorRegularityMismatch {
            flavor,
            sigma,
            needed,
        });
    }
    let theta1 = (0.5 - 1.0 / r) * n as f64 / sigma;
    let lower = (sigma - needed) / sigma;
    let lo = if flavor == 1 { 0.0 } else { lower };
    let value = theta1 + lo;
    let slack = 1e-14;
    Ok(Theta {
        value,
        admissible: value >= lo - slack && value <= 1.0 + slack,
    })
}

/// `|f|_{L^r} / (|f|_{Hdot^sigma}^theta |f|_{L^2}^{1-theta})` with
/// `theta = theta_1(r)`.
pub fn interpolation_ratio(f: &SpectralField, n: u32, sigma: f64, r: f64) -> Result<f64> {
    let theta = theta_exponents(n, sigma, r, 1)?;
    if !theta.admissible {
        return Err(Error::InvalidParams {
            name: "r",
            reason: format!("theta_1 = {} outside [0, 1]", theta.value),
        });
    }
    let l2 = f.l2_norm();
    if l2 == 0.0 {
        return Err(Error::ZeroField);
    }
    let lr = f.lr_norm(r);
    let hs = f.hdot_norm(sigma);
    let th = theta.value;
    let denom = if th == 0.0 {
        l2
    } else {
        hs.powf(th) * l2.powf(1.0 - th)
    };
    if denom == 0.0 {
        return Err(Error::ZeroField);
    }
    Ok(lr / denom)
}

const FIELD_MAGIC: &[u8; 8] = b"EPDTFLD1";

/// Binary layout: magic, `u32` dim, `u32` points per axis (dim times),
/// `f64` half length, then row-major `f64` values, all little endian.
pub fn write_field(w: &mut impl Write, f: &SpectralField) -> Result<()> {
    w.write_all(FIELD_MAGIC)?;
    w.write_all(&(f.grid.dim as u32).to_le_bytes())?;
    for _ in 0..f.grid.dim {
        w.write_all(&(f.grid.points as u32).to_le_bytes())?;
    }
    w.write_all(&f.grid.half_length.to_le_bytes())?;
    let mut buf = Vec::with_capacity(8 * f.values.len());
    for v in &f.values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_field(r: &mut impl Read) -> Result<SpectralField> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != FIELD_MAGIC {
        return Err(Error::Format("not a field snapshot".into()));
    }
    let dim = read_u32(r)? as usize;
    if !(1..=3).contains(&dim) {
        return Err(Error::Format(format!("bad dimension {dim}")));
    }
    let mut sizes = Vec::with_capacity(dim);
    for _ in 0..dim {
        sizes.push(read_u32(r)? as usize);
    }
    if sizes.iter().any(|&s| s != sizes[0]) {
        return Err(Error::Format("non-cubic grids are not supported".into()));
    }
    let half_length = read_f64(r)?;
    let grid = Grid::new(dim, sizes[0], half_length).map_err(|e| Error::Format(e.to_string()))?;
    let mut raw = vec![0u8; 8 * grid.len()];
    r.read_exact(&mut raw)?;
    let values = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    SpectralField::new(grid, values)
}

pub(crate) fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

/// Two-column `x,value` CSV for one-dimensional fields.
pub fn write_field_csv(w: &mut impl Write, f: &SpectralField) -> Result<()> {
    if f.grid.dim != 1 {
        return Err(Error::ShapeMismatch("CSV export is one-dimensional only".into()));
    }
    writeln!(w, "x,value")?;
    for (j, v) in f.values.iter().enumerate() {
        writeln!(w, "{},{}", f.grid.coord(j), v)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nyquist_and_shells() {
        let g = Grid::new(2, 8, std::f64::consts::PI).unwrap();
        assert_eq!(g.freq_index(4), -4);
        assert_eq!(g.freq_index(7), -1);
        assert_eq!(g.shell(8 * 3 + 5), 9 + 9);
        assert!((g.k_unit() - 1.0).abs() < 1e-15);
        assert!(g.dealias_keep(2));
        assert!(!g.dealias_keep(3));
    }

    #[test]
    fn binary_round_trip() {
        let g = Grid::new(2, 8, 3.0).unwrap();
        let f = SpectralField::from_fn(g, |x| x[0] - 2.0 * x[1]);
        let mut buf = Vec::new();
        write_field(&mut buf, &f).unwrap();
        let back = read_field(&mut buf.as_slice()).unwrap();
        assert_eq!(back, f);
    }
}
