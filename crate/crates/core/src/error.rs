use crate::lattice::{Antichain, Time};

/// Errors raised by batch construction and trace maintenance.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TraceError {
    #[error("update at time {time} lies outside batch bounds [{lower}, {upper})")]
    OutOfBounds { time: Time, lower: Antichain, upper: Antichain },
    #[error("batch lower {found} does not match trace upper {expected}")]
    Discontiguous { expected: Antichain, found: Antichain },
    #[error("compaction frontier would retreat from {current} to {requested}")]
    SinceRetreat { current: Antichain, requested: Antichain },
    #[error("time {time} is not readable: since {since}, upper {upper}")]
    OutsideWindow { time: Time, since: Antichain, upper: Antichain },
    #[error("diff overflow accumulating updates")]
    DiffOverflow,
}

/// Errors raised while constructing or running dataflows.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DataflowError {
    #[error("dataflow construction failed: {0}")]
    Construction(String),
    #[error("integrity violation: {0}")]
    Integrity(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("iteration exceeded {max_rounds} rounds")]
    IterationLimit { max_rounds: u64 },
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("worker panicked: {0}")]
    Panic(String),
    #[error("aborted because another worker failed")]
    Aborted,
}
