//! Numerical tolerances shared across the crate.

/// Default small loss exponent used when `p` sits exactly on `p_tilde`.
pub const ALPHA_EPSILON: f64 = 1e-6;

/// Relative tolerance for deciding `delta_i` equals the regularity threshold.
pub const THRESHOLD_REL_TOL: f64 = 1e-9;

/// Relative tolerance for deciding `p == p_tilde`.
pub const CORNER_REL_TOL: f64 = 1e-12;

/// `Gamma_m` values above `-GAMMA_BOUNDARY_TOL` count as `Gamma_m >= 0`.
pub const GAMMA_BOUNDARY_TOL: f64 = 1e-12;

/// Default relative tolerance for linear verification runs.
pub const LINEAR_VERIFY_RTOL: f64 = 1e-10;

/// Default relative tolerance for semilinear simulation runs.
pub const SIMULATION_RTOL: f64 = 1e-8;

/// Admissible range for user supplied integration tolerances.
pub const RTOL_MIN: f64 = 1e-14;
pub const RTOL_MAX: f64 = 1e-3;

/// Support radius is measured where |field| exceeds this fraction of its max.
pub const SUPPORT_THRESHOLD: f64 = 1e-12;

/// Relative mismatch allowed between a fitted decay exponent and theory
/// in linear verification.
pub const LINEAR_DECAY_REL_TOL: f64 = 0.05;

/// Same, for the semilinear decay report.
pub const SEMILINEAR_DECAY_REL_TOL: f64 = 0.10;

/// Slack on the scaling-law ceiling for certificate fits.
pub const SCALING_SLACK: f64 = 0.10;

/// Cap on the cutoff derivative-domination constants.
pub const DOMINATION_CAP: f64 = 1e6;

/// Cutoff values below this are ignored in domination ratios.
pub const DOMINATION_FLOOR: f64 = 1e-300;

/// Default blow-up threshold, as a multiple of the initial L2 size.
pub const BLOWUP_FACTOR: f64 = 1e6;

/// Default time-step floor below which blow-up is suspected.
pub const DT_FLOOR: f64 = 1e-12;

/// Default CFL safety factor `dt <= safety * t^{-m} / k_max`.
///
/// The DOPRI5 stability polynomial has modulus above one on the imaginary
/// axis beyond `|h omega| = 1`, so oscillatory modes grow for larger caps.
pub const CFL_SAFETY: f64 = 0.9;

/// Samples per decade in geometric schedules.
pub const SAMPLES_PER_DECADE: usize = 40;
