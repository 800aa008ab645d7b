//! Preemptive weighted flow time on a single machine.
//!
//! The crate is organized around one pipeline: an exact brute-force oracle
//! for small instances, a randomized hierarchical grid that turns the
//! scheduling problem into a capacitated rectangle/ray covering problem,
//! a dynamic program over the grid's cell tree, and two budget-driven
//! greedy constructions that build cheap covering solutions from
//! oracle-extracted budgets.

pub mod dptree;
pub mod geom;
pub mod grid;
pub mod instance;
pub mod oracle;
pub mod pipeline;
pub mod poly;
pub mod qpoly;
pub mod rat;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty instance")]
    EmptyInstance,
    #[error("invalid bounds: {0}")]
    InvalidBounds(String),
    #[error("instance too large for oracle: {0}")]
    OracleGuard(String),
    #[error("geometry too large for brute force: {0}")]
    BruteForceGuard(String),
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("prefix violation at (job {job}, t {t})")]
    PrefixViolation { job: u32, t: i64 },
    #[error("IP feasibility witness failed: {0}")]
    WitnessFailed(String),
    #[error("grid parameter out of domain: {0}")]
    GridParam(String),
    #[error("release outside [0,T): job {0}")]
    ReleaseOutOfRange(u32),
    #[error("internal invariant violated: {0}")]
    BugTrap(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
