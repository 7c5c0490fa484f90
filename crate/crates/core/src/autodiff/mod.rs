//! Minimal reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Tape`] records operations in insertion order; [`backward`] walks it in
//! reverse and accumulates gradients into the [`ParamStore`]. Tapes are built
//! per step and never shared between threads.
//!
//! Stop-gradient and straight-through nodes can optionally *record* their
//! forward values and later *replay* them, which is how the gradient checker
//! evaluates the objective in which stopped values are constants.

mod adam;
mod gradcheck;
mod tape;

pub use adam::{adam_step, AdamConfig};
pub use gradcheck::{gradcheck, CoordinateCheck, GradcheckConfig, GradcheckReport, ParamCoverage};
pub use tape::{backward, FrozenValues, NodeId, ParamId, ParamStore, Parameter, Tape};
