use serde::Serialize;
use thiserror::Error;

/// Which part of the run failed; decides the exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    Config,
    Input,
    Analysis,
    Output,
}

impl FailureKind {
    pub fn exit_code(self) -> i32 {
        match self {
            FailureKind::Config => 2,
            FailureKind::Input => 3,
            FailureKind::Analysis => 4,
            FailureKind::Output => 5,
        }
    }
}

#[derive(Debug, Clone, Error, Serialize)]
#[error("[{stage}] {message} (hint: {hint})")]
pub struct CliError {
    pub kind: FailureKind,
    pub stage: String,
    pub message: String,
    pub hint: String,
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn new(kind: FailureKind, stage: &str, message: impl Into<String>, hint: impl Into<String>) -> Self {
        CliError { kind, stage: stage.into(), message: message.into(), hint: hint.into() }
    }

    pub fn config(message: impl Into<String>, hint: impl Into<String>) -> Self {
        Self::new(FailureKind::Config, "config", message, hint)
    }

    pub fn input(stage: &str, message: impl Into<String>, hint: impl Into<String>) -> Self {
        Self::new(FailureKind::Input, stage, message, hint)
    }

    pub fn output(message: impl Into<String>) -> Self {
        Self::new(FailureKind::Output, "output", message, "check that the output directory exists and is writable")
    }

    /// Maps a library error, keeping the stage it was tagged with.
    pub fn analysis(err: &cbmat::Error, default_stage: &str) -> Self {
        let stage = err.stage().unwrap_or(default_stage);
        let inner = match err {
            cbmat::Error::Stage { source, .. } => source.as_ref(),
            e => e,
        };
        let kind = match inner {
            cbmat::Error::Input(_) | cbmat::Error::Dimension(_) | cbmat::Error::Support(_) => FailureKind::Input,
            _ => FailureKind::Analysis,
        };
        Self::new(kind, stage, inner.to_string(), hint_for(inner))
    }

    pub fn exit_code(&self) -> i32 {
        self.kind.exit_code()
    }
}

fn hint_for(err: &cbmat::Error) -> &'static str {
    use cbmat::Error as E;
    match err {
        E::ParameterDomain(_) | E::Boundary(_) => "check the configured parameter values",
        E::Support(_) => "a trait value lies outside the support of its margin; restrict --margins or transform the trait",
        E::NumericDomain(_) | E::NonFinite { .. } => "inspect extreme trait or covariate values; rescaling covariates often helps",
        E::Dimension(_) => "check that the phenotype, covariate and genotype tables describe the same subjects",
        E::Convergence { .. } => "try a fixed --copula or fewer --margins candidates, or check for outliers",
        E::DegenerateKernel(_) => "the region carries no usable variation; check variant filtering and weights",
        E::Input(_) => "check the input files and options",
        E::AllCandidatesFailed(_) => "no candidate model could be fitted; try other --margins or --copula values",
        E::Experiment(_) => "too many replicates failed; inspect the per-replicate errors in the p-value file",
        E::Stage { source, .. } => hint_for(source),
    }
}

#[derive(Debug, Serialize)]
pub struct ErrorDocument<'a> {
    pub schema_version: u32,
    pub status: &'static str,
    pub exit_code: i32,
    pub error: &'a CliError,
}

impl CliError {
    pub fn to_json(&self) -> String {
        let doc = ErrorDocument {
            schema_version: crate::report::SCHEMA_VERSION,
            status: "error",
            exit_code: self.exit_code(),
            error: self,
        };
        serde_json::to_string_pretty(&doc).unwrap_or_else(|_| format!("{{\"status\":\"error\",\"message\":{:?}}}", self.message))
    }
}
