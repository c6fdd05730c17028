//! Learn a stochastic object model (SOM) from simulated noisy, indirect
//! imaging measurements and validate it with task-based observer studies.
//!
//! The pipeline couples a progressively grown generator/discriminator pair
//! with a differentiable measurement simulation: generator outputs are pushed
//! through a full 2D DFT, complex Gaussian noise is added in k-space, and the
//! discriminator judges reconstructed (inverse-DFT, real part) images against
//! reconstructions of real measurements. Learned models are scored by
//! comparing Hotelling-observer detection performance on synthetic versus
//! ground-truth object ensembles.
//!
//! Module map:
//! - [`tensor`] - dense tensors, reverse-mode autodiff, Adam
//! - [`fft`] - radix-2 complex FFT kernels (unitary 2D transforms)
//! - [`imaging`] - measurement operators `g = F(f) + n` and reconstruction
//! - [`objects`] - lumpy ground-truth SOM and dataset generation
//! - [`somt`] - bit-exact tensor container used for datasets and checkpoints
//! - [`proagan`] - mirrored progressive networks, fade-in, adversarial losses
//! - [`trainer`] - the training loop, checkpointing, logging
//! - [`observer`] - Hotelling observer, ROC/AUC, ensemble comparison
//! - [`pgm`] - 8-bit PGM raster output for sample grids and templates

pub mod fft;
pub mod imaging;
pub mod objects;
pub mod observer;
pub mod pgm;
pub mod proagan;
pub mod rng;
pub mod scalar;
pub mod somt;
pub mod tensor;
pub mod trainer;

use std::fmt;
use std::path::PathBuf;

/// Crate-wide error type. Variants map onto the CLI exit-code contract.
#[derive(Debug)]
pub enum Error {
    /// Tensor shape or resolution mismatch; message names the operation and shapes.
    Shape(String),
    /// Mixed or unsupported dtypes in an operation.
    Dtype(String),
    /// Invalid configuration value or key.
    Config(String),
    /// Filesystem failure with the offending path.
    Io { path: PathBuf, source: std::io::Error },
    /// Malformed container or file contents (bad magic, truncation, version).
    Format(String),
    /// Non-finite values where finite ones are required (NaN loss, bad gradient).
    Numeric(String),
    /// A validation check failed (acceptance thresholds, self-test).
    Validation(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape(m) => write!(f, "shape error: {m}"),
            Error::Dtype(m) => write!(f, "dtype error: {m}"),
            Error::Config(m) => write!(f, "config error: {m}"),
            Error::Io { path, source } => write!(f, "io error on {}: {source}", path.display()),
            Error::Format(m) => write!(f, "format error: {m}"),
            Error::Numeric(m) => write!(f, "numeric error: {m}"),
            Error::Validation(m) => write!(f, "validation error: {m}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
