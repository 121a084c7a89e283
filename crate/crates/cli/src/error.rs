use forgepipe_core::error::*;
use serde_json::json;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or flag combinations; exit code 2.
    Usage(String),
    /// Unreadable or invalid `--config` file; exit code 1.
    Config(String),
    /// Any pipeline failure; exit code 1.
    Domain(Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Config(_) | CliError::Domain(_) => 1,
        }
    }

    /// Structured form printed on stderr for exit code 1.
    pub fn to_json(&self) -> serde_json::Value {
        let (code, message) = match self {
            CliError::Usage(m) => ("usage", m.clone()),
            CliError::Config(m) => ("config_error", m.clone()),
            CliError::Domain(e) => (e.code(), e.to_string()),
        };
        json!({ "error": code, "message": message })
    }
}

macro_rules! domain_from {
    ($($t:ty),*) => {
        $(impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Domain(e.into())
            }
        })*
    };
}

domain_from!(Error, DataError, GeometryError, TrackingError, SamplingError, LossError, HeadError, EvalError, EnrichError);

pub fn io(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| {
        DataError::Io {
            path: path.to_path_buf(),
            source,
        }
        .into()
    }
}
