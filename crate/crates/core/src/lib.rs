//! Occurrence statistics of random `k`-bit words in Bernoulli(`p`) binary
//! sequences.
//!
//! Given a sequence `x` sampled from the product measure `Ber(p)^N` and a
//! word `ω` of length `k`, the quantity of interest is
//!
//! ```text
//! M_k^x(ω) = #{ 1 ≤ j ≤ N_k : (x_j, …, x_{j+k-1}) = ω }
//! ```
//!
//! The crate is split along the cost profile of the work:
//!
//! * [`analytic`]: closed-form scalars (entropy, Gaussian CDFs, word
//!   probabilities, sequence-length rules `N_k`).
//! * [`model`]: counter-based reproducible sampling of sequences and words.
//! * [`counting`]: exact sliding-window counting and quenched distributions.
//! * [`exact`]: log-space evaluation of the annealed law, Poisson reference
//!   laws, total variation, and Stein–Chen bounds.
//! * [`experiments`]: deterministic drivers producing report tables.

pub mod analytic;
pub mod counting;
pub mod error;
pub mod exact;
pub mod experiments;
pub mod model;
mod numeric;

pub use analytic::{FixedWeightSpec, ModelParams, RegimeRule};
pub use counting::{CountDistribution, CountTable, SupportKind};
pub use error::{Error, Result};
pub use exact::{AnnealedSpec, BoundMode, TvBoundReport};
pub use experiments::{ExperimentKind, ExperimentReport, ExperimentSpec};
pub use model::{BitSequence, RngStream, Word};
