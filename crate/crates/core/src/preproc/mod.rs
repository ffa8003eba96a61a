//! Data preparation: sensor maps to grids, space-time stacking, smoothing,
//! and Morlet time-frequency power.

mod interp;
mod smooth;
mod tf;

pub use interp::{interpolate_to_grid, read_layout, GridInterpolator, GridSlice, SensorLayout};
pub use smooth::{gaussian_smooth, laplacian_smooth, reference_volume, stack_time, Volume};
pub use tf::{band_average, morlet_tf, wavelet_half_width, TimeFrequencyMap, DEFAULT_CYCLES};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PreprocError {
    #[error("interpolation needs at least 3 sensors, got {0}")]
    TooFewSensors(usize),
    #[error("sensor layout is collinear")]
    Collinear,
    #[error("sensor `{0}` has a non-finite or duplicate position")]
    BadSensor(String),
    #[error("expected {expected} values, got {got}")]
    Length { expected: usize, got: usize },
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("nothing to stack")]
    NoSlices,
    #[error("slice {0} has a different grid or mask")]
    SliceMismatch(usize),
    #[error("FWHM must be finite and non-negative, got {0}")]
    BadFwhm(f64),
    #[error("{fwhm} FWHM values for {dims} axes")]
    FwhmLength { dims: usize, fwhm: usize },
    #[error("rate {tau} outside (0, {limit}] for maximum degree {degree}")]
    UnstableRate { tau: f64, limit: f64, degree: usize },
    #[error("signal has {len} samples, the wavelet at {freq} Hz spans {support}")]
    SignalTooShort { len: usize, freq: f64, support: usize },
    #[error("sample rate and frequencies must be positive and below Nyquist, got {0}")]
    BadFrequency(f64),
    #[error("band [{lo}, {hi}] Hz contains no frequency bin")]
    EmptyBand { lo: f64, hi: f64 },
    #[error("axis {axis} out of range for {ndim} dimensions")]
    Axis { axis: usize, ndim: usize },
    #[error("layout csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("layout csv: {0}")]
    Layout(String),
}
