use thiserror::Error;

use crate::reduced_form::MenuSolution;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),

    /// A participation bound cannot be met by any mechanism.
    #[error("infeasible: participation bound of type `{type_label}` cannot be met")]
    InfeasibleParticipation { type_label: String },

    #[error("infeasible program: {0}")]
    Infeasible(String),

    /// The cutting-plane loop ran out of rounds. The incumbent is the last LP
    /// iterate, which may violate the majorization constraints by `violation`.
    #[error("cutting planes did not converge after {rounds} rounds (max violation {violation:e})")]
    NotConverged {
        rounds: usize,
        violation: f64,
        incumbent: Box<MenuSolution>,
    },

    #[error("linear program: {0}")]
    Lp(#[from] crate::lp::LpError),

    #[error("binding pattern inconsistent: {0}")]
    BindingPattern(String),

    #[error("partition construction failed: {0}")]
    Construction(String),

    #[error("mechanism does not match solution: {0}")]
    Mismatch(String),

    #[error("oracle: {0}")]
    Oracle(String),

    #[error("unknown example `{0}`")]
    UnknownExample(String),
}
