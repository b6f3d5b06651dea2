use std::fmt;
use std::io;

use thiserror::Error;

/// Which side of the bipartite graph an identifier belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Supply,
    Demand,
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NodeKind::Supply => f.write_str("supply"),
            NodeKind::Demand => f.write_str("demand"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Io(#[from] io::Error),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: arc references unknown {kind} node `{id}`")]
    UnknownArcEndpoint {
        line: usize,
        kind: NodeKind,
        id: String,
    },

    #[error("unknown {kind} node `{id}`")]
    UnknownNode { kind: NodeKind, id: String },

    #[error("duplicate {kind} node `{id}`")]
    DuplicateNode { kind: NodeKind, id: String },

    #[error("demand node `{id}` has no eligible supply")]
    NoEligibleSupply { id: String },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("empty term list")]
    EmptyTerms,

    #[error("instance too large for the reference solver: {supply} supply / {demand} demand nodes (limit {max_supply} / {max_demand})")]
    TooLarge {
        supply: usize,
        demand: usize,
        max_supply: usize,
        max_demand: usize,
    },

    #[error("reference solver did not converge after {iterations} iterations (residual {residual:.3e})")]
    NotConverged { iterations: usize, residual: f64 },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }
}
