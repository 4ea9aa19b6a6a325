//! Distributed equilibrium seeking for network-constrained demand-response
//! bidding.
//!
//! Aggregators bid into a market cleared by a utility; their interaction is an
//! aggregative game with shared coupling constraints (capacities and line
//! flows). [`solver`] runs the fully distributed forward-backward iteration in
//! which agents only exchange aggregate estimates and auxiliary variables with
//! graph neighbours; [`oracle`] computes the variational equilibrium centrally
//! and certifies it.
//!
//! | Module | Contents |
//! |--------|----------|
//! | [`market`] | price, allocation, coupling constraints, projection onto them |
//! | [`game`] | objectives and (extended) pseudo-gradients |
//! | [`graph`] | communication graph and Laplacian |
//! | [`tuning`] | cocoercivity constants, step sizes, preconditioner |
//! | [`solver`] | round-synchronous distributed iteration |
//! | [`oracle`] | extragradient reference solver, KKT and best-response checks |
//! | [`config`], [`runner`] | JSON run configuration and CLI commands |

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN.

pub mod config;
pub mod error;
pub mod fixtures;
pub mod game;
pub mod graph;
pub mod market;
pub mod oracle;
pub mod runner;
pub mod solver;
pub mod tuning;

pub use error::{GneError, Result};
pub use game::GameModel;
pub use graph::CommGraph;
pub use market::{AggregatorParams, FeasibleSet, Line, MarketInstance};
pub use tuning::GainSet;
