use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("parameter outside its admissible domain: {0}")]
    ParameterDomain(String),

    #[error("argument on the boundary of the unit interval: {0}")]
    Boundary(String),

    #[error("value outside the support of the distribution: {0}")]
    Support(String),

    #[error("numeric domain error: {0}")]
    NumericDomain(String),

    #[error("non-finite {what} at subject {index}")]
    NonFinite { what: &'static str, index: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("{stage} did not converge after {iterations} iterations (best loglik {best_loglik:.6}): {message}")]
    Convergence {
        stage: &'static str,
        iterations: usize,
        best_loglik: f64,
        message: String,
    },

    #[error("degenerate kernel: {0}")]
    DegenerateKernel(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("all candidate models failed: {}", .0.join("; "))]
    AllCandidatesFailed(Vec<String>),

    #[error("experiment failed: {0}")]
    Experiment(String),

    #[error("[{stage}] {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Wraps an error with the label of the pipeline stage that produced it.
    pub fn at(self, stage: &'static str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            other => Error::Stage {
                stage,
                source: Box::new(other),
            },
        }
    }

    pub fn stage(&self) -> Option<&'static str> {
        match self {
            Error::Stage { stage, .. } => Some(stage),
            _ => None,
        }
    }
}

pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| e.at(stage))
    }
}
