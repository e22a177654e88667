use serde_json::Value;
use thiserror::Error;
use varode::classifier::ClassifierError;
use varode::distribution::DistributionError;
use varode::expr::ExprError;
use varode::jet::JetError;
use varode::legendre::LegendreError;
use varode::wilczynski::WilczynskiError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid input: {0}")]
    Input(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    /// Numeric integration broke down; `partial` is whatever was computed.
    #[error("integration failed: {message}")]
    Integration { message: String, partial: Value },
    #[error("{0}")]
    Internal(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Degenerate(_) => 3,
            CliError::Integration { .. } => 4,
            CliError::Internal(_) | CliError::Io(_) => 1,
        }
    }

    /// Attach partial results to an integration failure.
    pub fn with_partial(self, partial: Value) -> CliError {
        match self {
            CliError::Integration { message, .. } => CliError::Integration { message, partial },
            other => other,
        }
    }

    pub fn integration(message: impl ToString) -> CliError {
        CliError::Integration { message: message.to_string(), partial: Value::Null }
    }
}

impl From<JetError> for CliError {
    fn from(e: JetError) -> Self {
        match e {
            JetError::Parse(_)
            | JetError::InvalidVariable(_)
            | JetError::InvalidOrder(_)
            | JetError::OrderTooHigh { .. }
            | JetError::Invalid(_) => CliError::Input(e.to_string()),
            JetError::Degenerate(_) | JetError::Implicit { .. } => CliError::Degenerate(e.to_string()),
            JetError::Ode(_) | JetError::Eval(_) => CliError::integration(e),
            JetError::Expr(ExprError::DivisionByZero) => CliError::Input(e.to_string()),
            JetError::Expr(_) => CliError::Internal(e.to_string()),
        }
    }
}

impl From<WilczynskiError> for CliError {
    fn from(e: WilczynskiError) -> Self {
        match e {
            WilczynskiError::Jet(j) => j.into(),
            WilczynskiError::Precondition(_) => CliError::Input(e.to_string()),
            WilczynskiError::Singular { .. } => CliError::integration(e),
            other => CliError::Internal(other.to_string()),
        }
    }
}

impl From<ClassifierError> for CliError {
    fn from(e: ClassifierError) -> Self {
        match e {
            ClassifierError::Jet(j) => j.into(),
            ClassifierError::Wilczynski(w) => w.into(),
            ClassifierError::Degenerate(_) => CliError::Degenerate(e.to_string()),
            ClassifierError::Precondition(_) => CliError::Input(e.to_string()),
            ClassifierError::Eval(_) => CliError::integration(e),
            other => CliError::Internal(other.to_string()),
        }
    }
}

impl From<DistributionError> for CliError {
    fn from(e: DistributionError) -> Self {
        match e {
            DistributionError::Jet(j) => j.into(),
            DistributionError::Wilczynski(w) => w.into(),
            DistributionError::PointDimension { .. } | DistributionError::Invalid(_) => CliError::Input(e.to_string()),
            DistributionError::SingularControl { .. }
            | DistributionError::Eval(_)
            | DistributionError::OsculatingDegeneracy { .. } => CliError::integration(e),
            other => CliError::Internal(other.to_string()),
        }
    }
}

impl From<LegendreError> for CliError {
    fn from(e: LegendreError) -> Self {
        match e {
            LegendreError::Jet(j) => j.into(),
            LegendreError::Distribution(d) => d.into(),
            LegendreError::Eval(_) => CliError::integration(e),
            other => CliError::Internal(other.to_string()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use varode::ode::OdeError;

    #[test]
    fn exit_codes_follow_error_class() {
        let parse: CliError = varode::jet::Lagrangian::parse("y3^^2", None).unwrap_err().into();
        assert_eq!(parse.exit_code(), 2);
        assert_eq!(CliError::from(JetError::Degenerate("x".into())).exit_code(), 3);
        assert_eq!(CliError::from(JetError::Ode(OdeError::Singularity { x: 0.0 })).exit_code(), 4);
        let partial = CliError::integration("boom").with_partial(serde_json::json!({"a": 1}));
        match partial {
            CliError::Integration { partial, .. } => assert_eq!(partial["a"], 1),
            _ => unreachable!(),
        }
    }
}
