//! Learned route proposal, goal-conditional control and realism scoring,
//! all over agent-relative observations.

mod features;
mod nets;
mod plan;

pub use features::*;
pub use nets::*;
pub use plan::*;
