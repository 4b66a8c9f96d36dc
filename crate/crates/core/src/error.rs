use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dist_models: invalid density: {0}")]
    Validation(String),
    #[error("alpha_delta: regime violation: {0}")]
    RegimeViolation(String),
    #[error("{module}: invalid parameter: {msg}")]
    InvalidParameter { module: &'static str, msg: String },
    #[error("{module}: argument out of range: {msg}")]
    OutOfRange { module: &'static str, msg: String },
    #[error("alpha_delta: root on rectangle boundary after {retries} perturbations (min |1-M| = {min_modulus:e})")]
    BoundaryRoot { retries: usize, min_modulus: f64 },
    #[error("alpha_delta: scan inconclusive: {0}")]
    ScanInconclusive(String),
    #[error("{module}: no convergence after {iterations} iterations (residual {residual:e})")]
    NoConvergence {
        module: &'static str,
        iterations: usize,
        residual: f64,
    },
    #[error("transfer_grid: divergent integral: {0}")]
    Divergent(String),
    #[error("dh_asymptotics: fit rejected (rms residual {rms:e} above {threshold})")]
    FitRejected { rms: f64, threshold: f64 },
    #[error("dh_asymptotics: remainder unresolved: {0}")]
    DegenerateRemainder(String),
    #[error("dh_asymptotics: domain too narrow: {0}")]
    DomainTooNarrow(String),
}

impl Error {
    /// Stable `module.kind` code used in CLI output.
    pub fn code(&self) -> String {
        match self {
            Error::Validation(_) => "dist_models.validation".into(),
            Error::RegimeViolation(_) => "alpha_delta.regime_violation".into(),
            Error::InvalidParameter { module, .. } => format!("{module}.invalid_parameter"),
            Error::OutOfRange { module, .. } => format!("{module}.out_of_range"),
            Error::BoundaryRoot { .. } => "alpha_delta.boundary_root".into(),
            Error::ScanInconclusive(_) => "alpha_delta.scan_inconclusive".into(),
            Error::NoConvergence { module, .. } => format!("{module}.no_convergence"),
            Error::Divergent(_) => "transfer_grid.divergent".into(),
            Error::FitRejected { .. } => "dh_asymptotics.fit_rejected".into(),
            Error::DegenerateRemainder(_) => "dh_asymptotics.degenerate_remainder".into(),
            Error::DomainTooNarrow(_) => "dh_asymptotics.domain_too_narrow".into(),
        }
    }

    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Validation(_)
                | Error::RegimeViolation(_)
                | Error::InvalidParameter { .. }
                | Error::OutOfRange { .. }
        )
    }

    pub fn is_convergence(&self) -> bool {
        matches!(
            self,
            Error::NoConvergence { .. }
                | Error::BoundaryRoot { .. }
                | Error::ScanInconclusive(_)
                | Error::Divergent(_)
                | Error::FitRejected { .. }
                | Error::DomainTooNarrow(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(module: &'static str, msg: impl Into<String>) -> Error {
    Error::InvalidParameter {
        module,
        msg: msg.into(),
    }
}

pub(crate) fn out_of_range(module: &'static str, msg: impl Into<String>) -> Error {
    Error::OutOfRange {
        module,
        msg: msg.into(),
    }
}
