use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("unknown {kind} `{name}`; available: {}", available.join(", "))]
    UnknownName {
        kind: &'static str,
        name: String,
        available: Vec<String>,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("unsupported tableau structure: {0}")]
    UnsupportedStructure(String),

    #[error("stage solve failed at step {step}, stage {stage} (residual {residual:e})")]
    StageSolve {
        step: usize,
        stage: usize,
        residual: f64,
    },

    #[error("singular linear system at step {step}: {context}")]
    Singular { step: usize, context: String },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("singular control: {0}")]
    SingularControl(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
