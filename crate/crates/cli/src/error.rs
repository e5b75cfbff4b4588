use fbopt_core::bounds::BoundsError;
use fbopt_core::controller::ControllerError;
use fbopt_core::geometry::GeometryError;
use fbopt_core::plant::PlantError;
use fbopt_core::problem::ProblemError;
use fbopt_core::sim::SimError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Core(String),
    #[error("law has no affine closed form: {0}")]
    NotAffine(&'static str),
    #[error("bracket search failed: {0}")]
    Bracket(String),
}

macro_rules! core_error {
    ($t:ty) => {
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Core(e.to_string())
            }
        }
    };
}

core_error!(ProblemError);
core_error!(PlantError);
core_error!(ControllerError);
core_error!(SimError);
core_error!(BoundsError);
core_error!(GeometryError);

impl CliError {
    /// Process exit code contract: 0 success, 2 failed suite, 3 invalid config.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Json(_) => 3,
            _ => 1,
        }
    }
}
