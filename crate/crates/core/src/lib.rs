//! Random loop model on rooted `d`-regular trees.
//!
//! Links appear on each edge as a Poisson process of intensity `β` on the
//! time circle `[0, 1)`; a link is a cross with probability `u` and a double
//! bar otherwise. The crate samples such configurations, traces their loops,
//! evaluates the closed-form probabilities of the model near criticality and
//! estimates survival probabilities and the critical point by Monte Carlo.

pub mod closed_forms;
pub mod configuration;
pub mod error;
pub mod estimators;
pub mod loops;
pub mod stream;
pub mod topology;

pub use configuration::{
    Diagnostics, EagerConfiguration, EdgeConfiguration, Event, EventSource, LazyTree, Link,
    LinkKind, ModelParams, NodeId, TreeSource, WithExtraLink,
};
pub use error::{Error, Result};
pub use loops::{Direction, Loop, Segment, TraceBudget, TracePoint};
pub use topology::{EdgeId, GenericGraph, VertexAddress};
