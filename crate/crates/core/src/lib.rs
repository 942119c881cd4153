//! GCN and GAT layers built from alternative dense-sparse primitive
//! compositions, a profiler that times them, and a gradient-boosted ranking
//! model that picks the faster composition for a given input.

pub mod composition;
pub mod error;
pub mod exec;
pub mod features;
pub mod gat;
pub mod gcn;
pub mod generate;
pub mod opt;
pub mod profiler;
pub mod ranking;
pub mod runner;
pub mod sparse;

pub use composition::{Activation, Composition, GnnModel};
pub use error::{Error, Result};
pub use exec::Executor;
