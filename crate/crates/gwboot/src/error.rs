//! Unified error type for the library.

/// Everything a library operation can fail with.
///
/// The split matters to the CLI: input-side problems (bad arguments,
/// unsupported requests, refusals) map to exit code 2, failures discovered
/// while computing (certificates, envelopes, searches) map to exit code 3.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    /// Simulation refused up front: the request cannot be run safely
    /// (infinite offspring mean, or projected memory above the cap).
    #[error("refused: {0}")]
    Refused(String),

    /// The trace never crossed the requested threshold.
    #[error("trajectory did not exit: last value {last} never crossed {threshold}")]
    NotExited { threshold: f64, last: f64 },

    #[error("sampled tree of depth {depth} cannot answer a time-{t} query (need depth >= t)")]
    InsufficientDepth { depth: usize, t: usize },

    #[error("t_max {t_max} too small: {why}")]
    InsufficientRange { t_max: u64, why: String },

    /// The basis projection has no (unique) solution at the requested x.
    #[error("projection singular at x = {at}")]
    SingularProjection { at: String },

    /// An exact positivity/identity certificate did not hold.
    #[error("certificate failed: {0}")]
    CertificateFailure(String),

    #[error("design search exhausted after {tried} scale halvings")]
    SearchExhausted { tried: u32 },

    /// The shape of `g` admits no case of the transition trichotomy.
    #[error("degenerate classification: {value}")]
    DegenerateClassification { value: String },

    /// A per-step monotonicity/envelope assumption failed during iteration.
    #[error("envelope violated at step {step}: {detail}")]
    EnvelopeViolated { step: u64, detail: String },

    /// Interval refinement could not separate two candidate maxima.
    #[error("tie unresolved after refinement: {0}")]
    TieUnresolved(String),
}

impl Error {
    /// True when the failure is a property of the request, not of the run.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidArgument(_)
                | Error::Unsupported(_)
                | Error::Refused(_)
                | Error::InsufficientDepth { .. }
                | Error::InsufficientRange { .. }
                | Error::DegenerateClassification { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
