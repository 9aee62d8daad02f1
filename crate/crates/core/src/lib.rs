//! Simulator for the ABC family of distributed primal-dual proximal methods.
//!
//! A network of `m` agents cooperatively solves
//!
//! ```text
//! min_x  (1/m) Σ_i f_i(x) + G(x)
//! ```
//!
//! where each `f_i` is smooth and (strongly) convex and `G` is a shared
//! nonsmooth regularizer. Every algorithm in the family is described by a
//! triple of weight matrices `(A, B, C)` built from a gossip matrix of the
//! communication graph:
//!
//! ```text
//! X^k     = prox_{γg}(Z^k)
//! Z^{k+1} = A X^k − γ B ∇f(X^k) − Y^k
//! Y^{k+1} = Y^k + C Z^{k+1}
//! ```
//!
//! The crate contains the graph and gossip-matrix constructors, problem
//! generators, the iteration itself in several equivalent forms, rate
//! predictors and assumption validators, a centralized reference solver and
//! the experiment harness used by the `abc` command line tool.

pub mod abc;
pub mod analysis;
pub mod error;
pub mod experiments;
pub mod gossip;
pub mod graph;
pub mod linalg;
pub mod oracle;
pub mod problem;
pub mod rng;

pub use abc::{AbcMatrices, AbcState, Preset, RunConfig, RunTrace, Variant};
pub use error::{Error, Result};
pub use gossip::{GossipMatrix, SpectralSummary};
pub use graph::Graph;
pub use problem::{ProblemInstance, Regularizer};
