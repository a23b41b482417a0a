use std::fmt;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: unknown record type `{tag}`")]
    UnknownRecord { line: usize, tag: String },

    #[error("line {line}: duplicate vertex id {id}")]
    DuplicateVertex { line: usize, id: usize },

    #[error("line {line}: edge {from}->{to} references a missing vertex")]
    DanglingEdge { line: usize, from: usize, to: usize },

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("layout does not fit: {0}")]
    Layout(String),

    #[error("trajectory plan is empty")]
    EmptyPlan,

    #[error("plan references aisle {0}, which does not exist")]
    UnknownAisle(usize),

    #[error("pose ({x:.3}, {y:.3}) is not in free space")]
    PoseNotFree { x: f64, y: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate geometry: {0}")]
    Degenerate(String),

    #[error("graph is disconnected; unreachable nodes: {}", NodeList(.0))]
    Disconnected(Vec<usize>),

    #[error("normal equations are not positive definite (graph under-constrained)")]
    Singular,

    #[error("training diverged (non-finite loss at epoch {epoch}); use a smaller learning rate")]
    Diverged { epoch: usize },

    #[error("node {got} arrived out of order (expected {expected})")]
    OutOfOrder { expected: usize, got: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

struct NodeList<'a>(&'a [usize]);

impl fmt::Display for NodeList<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOWN: usize = 20;
        for (k, id) in self.0.iter().take(SHOWN).enumerate() {
            if k > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{id}")?;
        }
        if self.0.len() > SHOWN {
            write!(f, ", ... ({} total)", self.0.len())?;
        }
        Ok(())
    }
}
