//! Bio-PEPA with per-action delays.
//!
//! Models are written in a small textual format (see [`parser`]), turned into
//! a [`SystemSpec`](model::SystemSpec), and then analysed in one of three
//! ways:
//!
//! - [`semantics`]: the Starting-Terminating operational semantics, where the
//!   start and the completion of a delayed action are separate transitions,
//!   and exhaustive exploration of the resulting stochastic labelled
//!   transition system;
//! - [`dssa`]: delay stochastic simulation where reactants are consumed when
//!   an action starts and products appear once its delay has elapsed;
//! - [`dde`]: translation to a constant-delay DDE system and fixed-step
//!   integration by the method of steps.

pub mod dde;
pub mod dssa;
pub mod expr;
pub mod model;
pub mod parser;
pub mod semantics;

pub use model::{RoleOp, SystemSpec};
pub use parser::{parse_model, serialize_model, ModelSource};
