//! Online pairwise learning to rank under a group-exposure fairness
//! constraint.
//!
//! The ranker ([`ranker`]) fits a pairwise logistic model to click-derived
//! preferences and splits each query's candidates into blocks whose mutual
//! order is already certain. Fairness ([`fairness`]) is enforced by choosing
//! a group-placement template whose exposure keeps the cumulative unfairness
//! within a threshold, and [`fairswap`] rearranges the blocks to match the
//! template while breaking as few certain orders as possible. [`harness`]
//! runs the whole loop against simulated users ([`click_sim`]).

pub mod click_sim;
pub mod data;
pub mod error;
pub mod fairness;
pub mod fairswap;
pub mod harness;
pub mod metrics;
pub mod ranker;

pub use error::{Error, Result};
