//! Initial data profiles.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{Grid, SpectralField};

/// Smooth compactly supported bump on `[-1, 1]`, normalized to 1 at 0.
pub fn bump(s: f64) -> f64 {
    let r = 1.0 - s * s;
    if r <= 0.0 {
        0.0
    } else {
        (1.0 - 1.0 / r).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    /// Tensor product of [`bump`]s of the given radius.
    Bump,
    /// `exp(-|x|^2 / (2 R^2))`; not compactly supported, used for linear runs.
    Gaussian,
    /// Seeded positive combination of small bumps inside the radius.
    RandomBumps,
}

/// Weights applied to the profile for each of `u0, u1, v0, v1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentWeights {
    pub u0: f64,
    pub u1: f64,
    pub v0: f64,
    pub v1: f64,
}

impl Default for ComponentWeights {
    fn default() -> Self {
        ComponentWeights {
            u0: 0.0,
            u1: 1.0,
            v0: 0.0,
            v1: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSpec {
    pub profile: Profile,
    pub amplitude: f64,
    pub radius: f64,
    /// Centre of the profile; missing axes are zero.
    #[serde(default)]
    pub offsets: Vec<f64>,
    #[serde(default)]
    pub weights: ComponentWeights,
}

impl DataSpec {
    pub fn bump(amplitude: f64, radius: f64) -> DataSpec {
        DataSpec {
            profile: Profile::Bump,
            amplitude,
            radius,
            offsets: Vec::new(),
            weights: ComponentWeights::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(Error::InvalidParams {
                name: "radius",
                reason: format!("must be positive, got {}", self.radius),
            });
        }
        if !self.amplitude.is_finite() {
            return Err(Error::InvalidParams {
                name: "amplitude",
                reason: "must be finite".into(),
            });
        }
        Ok(())
    }

    fn offset(&self, a: usize) -> f64 {
        self.offsets.get(a).copied().unwrap_or(0.0)
    }

    /// Radius of a ball around the origin containing the support.
    pub fn support_radius(&self, dim: usize) -> f64 {
        let centre: f64 = (0..dim).map(|a| self.offset(a).powi(2)).sum::<f64>().sqrt();
        match self.profile {
            Profile::Bump => centre + self.radius * (dim as f64).sqrt(),
            Profile::RandomBumps => centre + self.radius,
            // Where the Gaussian falls below 1e-16 of its peak.
            Profile::Gaussian => centre + self.radius * (2.0 * 16.0 * 10f64.ln()).sqrt(),
        }
    }

    /// The unit-amplitude profile on `grid`.
    pub fn shape(&self, grid: Grid, seed: u64) -> SpectralField {
        let dim = grid.dim;
        let r0 = self.radius;
        let off: Vec<f64> = (0..dim).map(|a| self.offset(a)).collect();
        match self.profile {
            Profile::Bump => SpectralField::from_fn(grid, |x| {
                x.iter()
                    .zip(&off)
                    .map(|(xi, o)| bump((xi - o) / r0))
                    .product()
            }),
            Profile::Gaussian => SpectralField::from_fn(grid, |x| {
                let r2: f64 = x.iter().zip(&off).map(|(xi, o)| (xi - o).powi(2)).sum();
                (-r2 / (2.0 * r0 * r0)).exp()
            }),
            Profile::RandomBumps => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let count = 4;
                let mut centres = Vec::with_capacity(count);
                for _ in 0..count {
                    let width = r0 * rng.gen_range(0.25..0.5);
                    let reach = r0 - width;
                    let c: Vec<f64> = (0..dim)
                        .map(|_| rng.gen_range(-1.0..1.0) * reach / (dim as f64).sqrt())
                        .collect();
                    let h = rng.gen_range(0.2..1.0);
                    centres.push((c, width, h));
                }
                SpectralField::from_fn(grid, |x| {
                    centres
                        .iter()
                        .map(|(c, w, h)| {
                            let r2: f64 = x
                                .iter()
                                .zip(c)
                                .zip(&off)
                                .map(|((xi, ci), o)| (xi - o - ci).powi(2))
                                .sum();
                            h * bump(r2.sqrt() / w)
                        })
                        .sum()
                })
            }
        }
    }

    /// `(u0, u1, v0, v1)` on `grid`.
    pub fn fields(&self, grid: Grid, seed: u64) -> [SpectralField; 4] {
        let base = self.shape(grid, seed);
        let w = self.weights;
        [w.u0, w.u1, w.v0, w.v1].map(|c| base.scaled(c * self.amplitude))
    }
}
