//! Real-time speed control of variable-speed pumps in water distribution
//! networks.
//!
//! The crate bundles a steady-state hydraulic solver, the weighted
//! satisfaction / efficiency / feed objective, a discrete-action environment
//! over pump speed ratios, a dueling deep Q-network agent, classical
//! derivative-free optimisers used as references and baselines, and the
//! experiment harness that ties them together.

pub mod agent;
pub mod bundled;
pub mod environment;
pub mod harness;
pub mod hydraulics;
pub mod network;
pub mod neural;
pub mod optimizers;
pub mod rng;
pub mod scenario;

pub use hydraulics::{solve, HydraulicState, Solver, SolverConfig};
pub use network::{parse_network, Network};

#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/networks.md")]
    mod networks {}
    #[doc = include_str!("../../../book/src/hydraulics.md")]
    mod hydraulics {}
    #[doc = include_str!("../../../book/src/objective.md")]
    mod objective {}
    #[doc = include_str!("../../../book/src/environment.md")]
    mod environment {}
    #[doc = include_str!("../../../book/src/references.md")]
    mod references {}
    #[doc = include_str!("../../../book/src/agent.md")]
    mod agent {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
