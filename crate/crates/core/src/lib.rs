//! Variance-reduced stochastic gradient descent built on gradient memorization.
//!
//! The crate covers the whole uniform q-memorization family (SAGA, q-SAGA,
//! randomized SVRG, N-SAGA and eps-N-SAGA, which shares gradients between
//! nearby datapoints), closed-form step-size and rate guarantees, and a
//! seeded benchmark harness that records suboptimality traces.
//!
//! * [`problem`]: ridge / logistic objectives, libsvm loading, reference optima
//! * [`memengine`]: samplers, memory and the update step
//! * [`neighbors`]: kNN neighborhood graphs and sharing-error bounds
//! * [`theory`]: rate formulas and Lyapunov audits
//! * [`bench`]: experiment configs, runs and CSV traces

pub mod bench;
pub mod memengine;
pub mod neighbors;
pub mod problem;
pub mod theory;
pub mod vecops;

pub use memengine::{EngineConfig, OptState, Sampler, SamplerKind, StorageMode};
pub use neighbors::NeighborGraph;
pub use problem::{LossKind, LossModel, ProblemInstance, ReferenceOptimum};
