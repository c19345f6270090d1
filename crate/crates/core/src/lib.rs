//! Energy-based surrogates for end-to-end stochastic optimization.
//!
//! A probabilistic predictor `p(y | x; θ)` is turned into an energy over
//! decisions by taking the expected task cost under its predictive
//! distribution, `E(x, a; θ) = E_{p(y|x;θ)} f(y, a)`. The resulting
//! conditional density `q(a | x; θ) ∝ exp(-E(x, a; θ))` is trained by maximum
//! likelihood on preprocessed optimal decisions, regularized by a KL term
//! towards the label-conditioned decision posterior `p(a | y) ∝ exp(-f(y, a))`.
//! Both expectations in the gradient are estimated with self-normalized
//! importance sampling from a Gaussian-mixture proposal centred on the
//! optimal decision.
//!
//! Module map:
//!
//! - [`numerics`]: Gaussian density/CDF, log-domain reductions, seeded streams.
//! - [`predictor`]: the MLP `x -> (μ, σ)` with hand-written backprop and Adam.
//! - [`task`]: cost functions, closed-form and Monte-Carlo expected costs,
//!   feasibility projection, dataset generators and CSV I/O.
//! - [`solver`]: projected-gradient decision solver and a brute-force grid oracle.
//! - [`ebm`]: the energy model, proposal, SNIS weights, training loops, evaluation.
//! - [`checkpoint`]: bit-exact binary parameter/optimizer snapshots.

// NaN-rejecting `!(x > 0.0)` checks, index loops over parallel arrays and
// the erf coefficients copied digit for digit are deliberate.
#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::needless_range_loop,
    clippy::manual_memcpy,
    clippy::excessive_precision
)]

pub mod checkpoint;
pub mod ebm;
pub mod error;
pub mod numerics;
pub mod predictor;
pub mod solver;
pub mod task;

pub use checkpoint::Checkpoint;
pub use ebm::{
    EnergyModel, EvalReport, History, ProposalConfig, SnisWeights, TrainConfig, Trainer,
};
pub use error::{Error, Result};
pub use numerics::{Purpose, RngStream, StreamKey};
pub use predictor::{AdamState, GaussianPrediction, Gradients, MlpParams};
pub use solver::{SolveConfig, SolveResult};
pub use task::{Dataset, DecisionDataset, ExpectationMode, TaskKind, TaskSpec};
