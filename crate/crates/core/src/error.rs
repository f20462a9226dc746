use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {what} = {value}")]
    Domain { what: &'static str, value: f64 },

    #[error("numerical accuracy: relative tail estimate {tail_estimate:.3e} exceeds {limit:.1e}{context}")]
    Accuracy {
        tail_estimate: f64,
        limit: f64,
        context: String,
    },

    #[error("{what} = {value:e} outside [{min:e}, {max:e}]{context}")]
    Range {
        what: &'static str,
        value: f64,
        min: f64,
        max: f64,
        context: String,
    },

    #[error("not found: {0}")]
    NotFound(String),

    #[error("configuration error at `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("non-finite field at plane {plane} (z = {z_mm} mm)")]
    BlowUp { plane: usize, z_mm: f64 },

    #[error("windowing error: {0}")]
    Windowing(String),

    #[error("fit error: {0}")]
    Fit(String),

    #[error("reference point r = {r_um} µm carries no energy")]
    UndefinedReference { r_um: f64 },

    #[error("format error: {0}")]
    Format(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            reason: reason.into(),
        }
    }

    /// Appends location information to range and accuracy errors.
    pub fn with_context(self, ctx: impl AsRef<str>) -> Self {
        match self {
            Error::Range {
                what,
                value,
                min,
                max,
                context,
            } => Error::Range {
                what,
                value,
                min,
                max,
                context: format!("{context} ({})", ctx.as_ref()),
            },
            Error::Accuracy {
                tail_estimate,
                limit,
                context,
            } => Error::Accuracy {
                tail_estimate,
                limit,
                context: format!("{context} ({})", ctx.as_ref()),
            },
            other => other,
        }
    }
}
