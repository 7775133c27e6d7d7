use thiserror::Error;

/// Errors reported by the laboratory.
#[derive(Debug, Error)]
pub enum Error {
    /// `∫ e^{-V_i} dy` overflowed, vanished, or is not finite on the truncated domain.
    #[error("potential not normalizable: {0}")]
    NonNormalizable(String),

    /// Too much stationary mass sits outside the truncated y-domain.
    #[error("y-truncation too small: {0}")]
    Truncation(String),

    /// A hypothesis ingredient failed outside of `validate_h1`'s violation list.
    #[error("hypothesis check failed: {0}")]
    Hypothesis(String),

    /// `ψ^ξ` vanished at a reaction-coordinate cell, the bias is undefined there.
    #[error("unvisited reaction-coordinate value at x-cell {cell}")]
    EmptyMarginal { cell: usize },

    /// The explicit step produced a density below the tolerance floor.
    #[error(
        "negative density {min:.3e} at channel {channel}, cell ({j}, {k}) after step; \
         dt = {dt:.3e} violates the stability bound, see suggest_dt"
    )]
    NegativeDensity {
        channel: usize,
        j: usize,
        k: usize,
        min: f64,
        dt: f64,
    },

    /// Relative entropy of `p` against `q` with `p > 0` on a `q = 0` cell.
    #[error("not absolutely continuous: p > 0 where q = 0 at index {0}")]
    NotAbsolutelyContinuous(usize),

    /// A walker left the finite domain of floating point numbers.
    #[error("non-finite state for walker {walker}: x = {x:e}, y = {y:e}, channel {channel}")]
    NonFiniteWalker {
        walker: usize,
        x: f64,
        y: f64,
        channel: usize,
    },

    /// The eigensolver did not reach the requested residual.
    #[error("eigensolver failed: {0}")]
    Eigensolver(String),

    /// `θ ≤ θ_min`: the spectral gap is too small for the theorem to apply.
    #[error("[H4] violated: no rate predicted (theta = {theta:.6e} <= theta_min = {theta_min:.6e})")]
    H4Violated { theta: f64, theta_min: f64 },

    /// Rate fitting failed (too few samples, nonpositive values, ...).
    #[error("rate fit: {0}")]
    RateFit(String),

    /// Malformed argument or configuration value.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
