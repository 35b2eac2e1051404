use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter lies outside its mathematical domain.
    #[error("parameter out of domain: {0}")]
    Domain(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A LinearFit denoiser was queried at a noise level no bucket covers.
    #[error("sigma {sigma} is not covered by any fitted bucket")]
    Coverage { sigma: f64 },

    #[error("singular regression in bucket {bucket}")]
    Singular { bucket: usize },

    #[error("non-finite state at step {step}")]
    Divergence { step: usize },

    #[error("upsampler produced no frames (predicted total duration {total})")]
    DegenerateDuration { total: f64 },

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}

pub(crate) fn shape(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}
