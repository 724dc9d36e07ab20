//! Error type shared by all modules.

/// Library-wide error enumeration.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Input violates a documented precondition (shapes, supports, ranges).
    #[error("domain error: {0}")]
    Domain(String),

    /// A structural invariant of an input object does not hold.
    #[error("validation error: {0}")]
    Validation(String),

    /// An infinite sum or iteration failed to meet its tail/convergence bound.
    #[error("convergence error: {0}")]
    Convergence(String),

    /// Integer accumulator would overflow; reduce the requested count.
    #[error("integer overflow: {0}")]
    Overflow(String),

    /// A pointwise matrix inversion failed on the frequency grid.
    #[error("singular matrix near lambda = {lambda}: {detail}")]
    Singularity { lambda: f64, detail: String },

    /// A linear system was too ill-conditioned to solve reliably.
    #[error("ill-conditioned system: {0}")]
    IllConditioned(String),

    /// Spectral factorization did not converge or the target is rank deficient.
    #[error("factorization error: {0}")]
    Factorization(String),

    /// A density class has no members under the given parameters.
    #[error("infeasible class: {0}")]
    Infeasible(String),
}

pub type Result<T> = std::result::Result<T, Error>;
