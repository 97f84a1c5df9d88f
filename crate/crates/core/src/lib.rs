//! Adaptive learning for Stackelberg games whose follower strategy is
//! unknown to the leader.
//!
//! The leader fits an affine-in-parameters model of the follower online
//! (`estimator`), descends its predicted cost (`optimizer`), and the two
//! run together in a fixed-step simulator (`sim`). The `ddos` module holds
//! the parallel-link flooding scenario; `oracles` holds brute-force
//! references used by the tests and the `verify` suite.

pub mod config;
pub mod ddos;
mod error;
pub mod estimator;
pub mod game;
pub mod geometry;
pub mod optimizer;
pub mod oracles;
pub mod sim;
pub mod smooth;
pub mod verify;

pub use error::{Error, Result};
