use bundlecalc::Error;

/// Failures of a CLI run, split by exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags, config, expressions or dimensions.
    #[error("{0}")]
    Config(String),
    /// The computation itself failed.
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Numerical(_) => "numerical",
        }
    }

    /// Classifies a library error raised while computing.
    pub fn from_core(what: &str, err: Error) -> Self {
        let msg = format!("{what}: {err}");
        match err {
            Error::Parse(_)
            | Error::Dimension(_)
            | Error::InvalidPath(_)
            | Error::StepCountTooSmall(_)
            | Error::NotFibreLinear => CliError::Config(msg),
            Error::Eval(_)
            | Error::DomainExit { .. }
            | Error::SingularFrame { .. }
            | Error::SingularJacobian { .. }
            | Error::NotFlat { .. } => CliError::Numerical(msg),
        }
    }
}

pub trait ConfigContext<T> {
    /// Any failure while building inputs is a config error.
    fn config(self, what: &str) -> Result<T, CliError>;
    /// Failures during the computation, classified by kind.
    fn numeric(self, what: &str) -> Result<T, CliError>;
}

impl<T> ConfigContext<T> for Result<T, Error> {
    fn config(self, what: &str) -> Result<T, CliError> {
        self.map_err(|e| CliError::Config(format!("{what}: {e}")))
    }

    fn numeric(self, what: &str) -> Result<T, CliError> {
        self.map_err(|e| CliError::from_core(what, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_error_kind() {
        let dom = CliError::from_core("x", Error::DomainExit { point: vec![1.0] });
        assert_eq!(dom.exit_code(), 1);
        let dim = CliError::from_core("x", Error::Dimension("bad".into()));
        assert_eq!(dim.exit_code(), 2);
        let flat = CliError::from_core(
            "x",
            Error::NotFlat {
                residual: 1.0,
                limit: 0.1,
            },
        );
        assert_eq!(flat.exit_code(), 1);
    }
}
