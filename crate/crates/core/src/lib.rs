//! Learning feedback linearizing controllers for plants with unknown
//! dynamics by model-free policy optimization.
//!
//! The learned controller layers a parameterized affine correction over a
//! nominal model-based linearizing controller. Its parameters are chosen to
//! minimize the expected squared mismatch between the plant's closed-loop
//! output derivatives and the virtual input, either in closed form (for
//! linear-in-parameters corrections, see [`objective`]) or from sampled-data
//! rollouts with policy-gradient methods ([`rl`]).

pub mod cli;
pub mod dynamics;
pub mod error;
pub mod fbl;
pub mod numerics;
pub mod objective;
pub mod policy;
pub mod rl;
pub mod tracking;

pub use error::{Error, Result};
