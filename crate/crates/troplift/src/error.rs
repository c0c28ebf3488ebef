//! Errors shared by the lifting pipelines.

use thiserror::Error;

use crate::btree::BtError;
use crate::puiseux::PuiseuxError;
use crate::ztcurve::ZtError;

#[derive(Debug, Error)]
pub enum LiftError {
    #[error(transparent)]
    Curve(#[from] ZtError),
    #[error(transparent)]
    Tree(#[from] BtError),
    #[error(transparent)]
    Series(#[from] PuiseuxError),
    #[error("evaluation at a zero or pole")]
    EvaluationAtZeroOrPole,
    #[error("bad certificate: {0}")]
    Certificate(String),
    #[error("not well spaced: {0}")]
    NotWellSpaced(String),
    #[error("cluster matrix has rank {rank} < {n}; the curve is superabundant")]
    RankDeficient { rank: usize, n: usize },
    #[error("no generic unit separates the clusters at level {0}")]
    GenericityExhausted(String),
    #[error("residual at order {0} lies outside the span of the available units")]
    Unsolvable(String),
    #[error("Hensel iteration stalled at order {0}")]
    Stalled(String),
    #[error("coordinate {0}: zero and pole multisets have different sizes")]
    Unbalanced(usize),
    #[error("the circuit does not close: sum of length times slope is ({0})")]
    CycleDoesNotClose(String),
    #[error("residue {0} is not a power of 2")]
    NotPowerOfTwo(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
}
