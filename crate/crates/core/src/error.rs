//! Error type shared by all modules of the crate.

use crate::lattice::AxisLabel;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("field has no axis labeled {0:?}")]
    UnknownAxis(AxisLabel),
    #[error("windowed axis {axis:?} has extent {extent}, need at least {needed}")]
    AxisTooShort {
        axis: AxisLabel,
        extent: usize,
        needed: usize,
    },
    #[error("shift offset {offset} out of range on windowed axis of extent {extent}")]
    ShiftOutOfRange { offset: isize, extent: usize },
    #[error("validity window on axis {axis:?} is empty after the operation")]
    EmptyValidity { axis: AxisLabel },
    #[error("field shapes or axis layouts differ: {0}")]
    ShapeMismatch(String),
    #[error("sequence lengths differ: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("empty input sequence")]
    EmptyInput,
    #[error("spectral grids differ: {0}")]
    GridMismatch(String),
    #[error("expansion order {0} unsupported (maximum is 2)")]
    UnsupportedOrder(u8),
    #[error("invalid lattice shape: {0}")]
    BadShape(String),
    #[error("evolution needs at least 3 stored steps, got {0}")]
    TooFewSteps(usize),
    #[error(
        "packet bandwidth sigma_k = {sigma_k:.6} too small for N = {n_sites}: \
         spatial tail {tail:.3e} exceeds 1e-14 beyond N/4 sites"
    )]
    PacketTail {
        sigma_k: f64,
        n_sites: usize,
        tail: f64,
    },
    #[error("correlation window (j0 = {j0}, m_t = {m_t}) exceeds history of {steps} steps")]
    WindowExceedsHistory { j0: usize, m_t: usize, steps: usize },
    #[error("correlation window too small: m_t = {0}, need at least 2")]
    WindowTooSmall(usize),
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("need at least {needed} data points, got {got}")]
    NotEnoughPoints { needed: usize, got: usize },
    #[error("residual norms must be positive for a log-log fit, got {0}")]
    NonPositiveResidual(f64),
    #[error("tan factor singular at |k| = pi/2 on an unmasked grid row (k = {0})")]
    TanPole(f64),
    #[error(
        "audit failure: no variant reaches residual 1e-8 (best {min_residual:.3e}); \
         this flags an implementation bug, not a data property"
    )]
    AuditFailed { min_residual: f64 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
