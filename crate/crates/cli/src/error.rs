use std::fmt;

use spreadlab_core::contagion::ContagionError;
use spreadlab_core::gateway::GatewayError;
use spreadlab_core::policy::PolicyError;

pub const EXIT_OTHER: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_SEEDING: i32 = 3;
pub const EXIT_GATEWAY: i32 = 4;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub error: anyhow::Error,
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            error: anyhow::anyhow!(msg.into()),
        }
    }

    pub fn other(e: impl Into<anyhow::Error>) -> Self {
        Self {
            code: EXIT_OTHER,
            error: e.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

impl From<ContagionError> for CliError {
    fn from(e: ContagionError) -> Self {
        let code = match &e {
            ContagionError::SeedingFailure { .. } => EXIT_SEEDING,
            ContagionError::Policy(PolicyError::Gateway(_)) => EXIT_GATEWAY,
            _ => EXIT_OTHER,
        };
        Self { code, error: e.into() }
    }
}

impl From<PolicyError> for CliError {
    fn from(e: PolicyError) -> Self {
        let code = if matches!(e, PolicyError::Gateway(_)) {
            EXIT_GATEWAY
        } else {
            EXIT_OTHER
        };
        Self { code, error: e.into() }
    }
}

impl From<GatewayError> for CliError {
    fn from(e: GatewayError) -> Self {
        Self {
            code: EXIT_GATEWAY,
            error: e.into(),
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        Self::other(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::other(e)
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::other(e)
    }
}

macro_rules! other_from {
    ($($t:ty),*) => {
        $(impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                Self::other(e)
            }
        })*
    };
}

other_from!(
    spreadlab_core::logistic::LogisticError,
    spreadlab_core::meanfield::MeanFieldError,
    spreadlab_core::metrics::MetricsError,
    spreadlab_core::traits::TraitsError,
    spreadlab_core::events::EventsError
);
