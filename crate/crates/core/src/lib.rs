//! Self-referential graph hypernetworks for neuroevolution.
//!
//! Every individual is a graph hypernetwork that reads a policy's
//! computational graph to emit the policy's weights, and reads its own graph
//! to emit stochastic deltas for its offspring. Selection acts on both at once.

pub mod baselines;
pub mod compgraph;
pub mod env;
pub mod error;
pub mod evolution;
pub mod experiment;
pub mod ghn;
pub mod nn;
pub mod rng;
pub mod variation;

pub use compgraph::{build_ghn_graph, build_mlp_graph, Activation, CompGraph, MlpSpec, NodeId, ParamNode, Role};
pub use error::{Error, Result};
pub use ghn::{init_ghn, Ghn, GhnConfig, GhnModel};
pub use nn::{FlatParams, ParamSet, PolicyNet};
pub use rng::{Purpose, RngStream, RNG_ALGORITHM_ID};
pub use variation::{make_offspring, FixedBasis, MutationReport};
