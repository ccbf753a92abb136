use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParams { name: &'static str, reason: String },

    #[error("delta{index} = {value} is not positive")]
    NonPositiveDelta { index: usize, value: f64 },

    #[error("degenerate denominator in {what}: {value}")]
    DegenerateDenominator { what: &'static str, value: f64 },

    #[error("derivative order {0} is not supported")]
    InvalidOrder(u32),

    #[error("tolerance {0} outside [1e-14, 1e-3]")]
    InvalidTolerance(f64),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("step size collapsed to {h:e} at t = {t}")]
    StepCollapse { t: f64, h: f64 },

    #[error("solution diverged at t = {0}")]
    Diverged(f64),

    #[error("Picard iteration failed to contract (deltas {0:?})")]
    NonContraction(Vec<f64>),

    #[error("support radius {radius} exceeds envelope {envelope} at t = {t}")]
    SupportViolation { t: f64, radius: f64, envelope: f64 },

    #[error("cutoff domination constant {value} exceeds cap {cap} ({which} at {location})")]
    DominationFailure {
        which: &'static str,
        location: f64,
        value: f64,
        cap: f64,
    },

    #[error("snapshots too sparse: {0}")]
    SparseSnapshots(String),

    #[error("cutoff ball of radius {radius} does not fit in the box of half length {half_length}")]
    BoxOverflow { radius: f64, half_length: f64 },

    #[error("initial data support {radius} leaves no margin in a box of half length {half_length}")]
    UnsupportedSupport { radius: f64, half_length: f64 },

    #[error("negative derivative order {0}")]
    NegativeOrder(f64),

    #[error("field is identically zero")]
    ZeroField,

    #[error("theta flavour {flavor} needs sigma > {needed}, got {sigma}")]
    FlavorRegularityMismatch { flavor: u32, sigma: f64, needed: f64 },

    #[error("insufficient span: {0}")]
    InsufficientSpan(String),

    #[error("io error: {0}")]
    Io(String),

    #[error("format error: {0}")]
    Format(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
