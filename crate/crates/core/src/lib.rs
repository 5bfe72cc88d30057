//! Register allocation over a toy machine IR, posed as a hierarchical
//! multi-agent environment.
//!
//! The crate covers the compiler side of the loop: machine models, the IR
//! and its interpreter, liveness and interference, live-range splitting and
//! spilling, instruction embeddings, the agent environment with its masks
//! and rewards, reference allocators, and a framed message protocol through
//! which an external learner drives episodes.
//!
//! See the `examples/` directory for one runnable program per capability.

pub mod machine;
pub mod mir;
pub mod liveness;
pub mod igraph;
pub mod transforms;
pub mod embeddings;
pub mod baselines;
pub mod env;
pub mod protocol;
pub mod cli;
