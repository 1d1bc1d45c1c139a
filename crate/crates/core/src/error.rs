use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PesError {
    #[error("non-finite value in {what} at row {row}, column {col}")]
    NonFinite {
        what: &'static str,
        row: usize,
        col: usize,
    },

    #[error("shape mismatch in {what}: expected {expected}, got {got}")]
    Shape {
        what: &'static str,
        expected: String,
        got: String,
    },

    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("labels are required for {0} but none were supplied")]
    MissingLabels(&'static str),

    #[error("{0}")]
    EmptyInput(&'static str),

    #[error("matrix {what} is not positive definite")]
    NotPositiveDefinite { what: &'static str },

    #[error("matrix {what} is not symmetric positive semidefinite: {detail}")]
    NotPsd { what: &'static str, detail: String },

    #[error("matrix {what} is ill-conditioned (estimated condition number {condition:.3e}); {hint}")]
    IllConditioned {
        what: &'static str,
        condition: f64,
        hint: &'static str,
    },

    #[error("matrix {what} is singular")]
    Singular { what: &'static str },

    #[error("expected squared residual norm is zero; smoothing needs a predictor with nonzero error (E[||eps||^2] != 0)")]
    ZeroResidual,

    #[error("gamma + beta = {0} >= 1: no shrinkage constant is guaranteed to improve MSE")]
    NoImprovementGuaranteed(f64),

    #[error("total least squares is degenerate: {0}")]
    DegenerateTls(&'static str),

    #[error("{} have no path to a labeled node in the similarity graph", node_list(.nodes))]
    DisconnectedComponent { nodes: Vec<usize> },

    #[error("every candidate failed to fit: {0}")]
    AllFitsFailed(String),

    #[error("csv error: {0}")]
    Csv(String),
}

pub type Result<T> = std::result::Result<T, PesError>;

impl From<csv::Error> for PesError {
    fn from(e: csv::Error) -> Self {
        PesError::Csv(e.to_string())
    }
}

fn node_list(nodes: &[usize]) -> String {
    const SHOWN: usize = 8;
    if nodes.len() <= SHOWN {
        return format!("unlabeled nodes {nodes:?}");
    }
    format!("{} unlabeled nodes (first {:?})", nodes.len(), &nodes[..SHOWN])
}
