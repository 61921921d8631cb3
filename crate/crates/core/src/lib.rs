//! Welfare-maximizing core outcomes for combinatorial exchanges whose buyers
//! face hard budget constraints.
//!
//! The crate is organised bottom-up:
//!
//! * [`milp`]: a small exact mixed-binary LP engine every solver builds on;
//! * [`model`]: exchanges, outcomes, coalitions and deviations;
//! * [`wdp`]: winner determination with true and budget-capped values;
//! * [`blocking`]: separation of blocking coalitions and core membership;
//! * [`core_solver`]: core, n-core and least-core computation by cut generation;
//! * [`restricted`]: single-seller auctions and dyadic stability;
//! * [`gen`]: airport slot exchanges and the QSAT₂ reduction;
//! * [`bench`]: the experiment harness behind the `cex bench` command.

pub mod bench;
pub mod blocking;
pub mod core_solver;
pub mod gen;
pub mod milp;
pub mod model;
pub mod restricted;
pub mod samples;
pub mod wdp;

use thiserror::Error;

pub use model::{
    Buyer, Coalition, Deviation, ExchangeInstance, Item, Market, Outcome, PackageBid, Seller,
    Trades,
};

/// Tolerance of every feasibility comparison on money.
pub const EPS_FEAS: f64 = 1e-6;
/// A coalition blocks only if it can improve every member by more than this.
pub const EPS_BLOCK: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Milp(#[from] milp::MilpError),
    #[error("time limit reached")]
    Timeout,
    #[error("invalid instance: {}", .0.join("; "))]
    InvalidInstance(Vec<String>),
    #[error("invalid outcome: {}", .0.join("; "))]
    InvalidOutcome(Vec<String>),
    #[error("{0}")]
    TooLarge(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
