use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown identifier `{name}` at byte {offset}")]
    UnknownIdentifier { name: String, offset: usize },
    #[error("function `{name}` takes {expected} argument(s), got {found} (byte {offset})")]
    Arity { name: String, expected: usize, found: usize, offset: usize },
    #[error("domain error in `{node}`: {reason}")]
    Domain { node: String, reason: String },
    #[error("parameter `{0}` is not bound")]
    UnboundParameter(String),
    #[error("jet mismatch: {0}")]
    JetMismatch(String),
    #[error("insufficient jet order: need {needed}, have {have}")]
    JetOrder { needed: usize, have: usize },
    #[error("singular linear part (condition number {condition:e})")]
    SingularLinearPart { condition: f64 },
    #[error("expected 2 turning points at E = {energy}, found {found}")]
    TurningPoints { energy: f64, found: usize },
    #[error("quadrature did not converge: {0}")]
    Quadrature(String),
    #[error("invalid window: {0}")]
    Window(String),
    #[error("root finder failed: {0}")]
    RootFinding(String),
    #[error("oracle not converged: estimated error {estimate:e} exceeds {tolerance:e}")]
    OracleNotConverged { estimate: f64, tolerance: f64 },
    #[error("symbol of degree {degree} does not fit basis dimension {dim}")]
    DegreeTooHigh { degree: usize, dim: usize },
    #[error("not a polynomial: {0}")]
    NotPolynomial(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("degenerate tangency while counting caustics")]
    DegenerateTangency,
    #[error("parse error in {context}: {message}")]
    Format { context: String, message: String },
    #[error("check failed: {0}")]
    Check(String),
}

impl Error {
    /// Short machine-readable tag.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Syntax { .. } => "syntax",
            Error::UnknownIdentifier { .. } => "unknown_identifier",
            Error::Arity { .. } => "arity",
            Error::Domain { .. } => "domain",
            Error::UnboundParameter(_) => "unbound_parameter",
            Error::JetMismatch(_) => "jet_mismatch",
            Error::JetOrder { .. } => "jet_order",
            Error::SingularLinearPart { .. } => "singular_linear_part",
            Error::TurningPoints { .. } => "turning_points",
            Error::Quadrature(_) => "quadrature",
            Error::Window(_) => "window",
            Error::RootFinding(_) => "root_finding",
            Error::OracleNotConverged { .. } => "oracle_not_converged",
            Error::DegreeTooHigh { .. } => "degree_too_high",
            Error::NotPolynomial(_) => "not_polynomial",
            Error::Config(_) => "config",
            Error::DegenerateTangency => "degenerate_tangency",
            Error::Format { .. } => "format",
            Error::Check(_) => "check",
        }
    }
}
