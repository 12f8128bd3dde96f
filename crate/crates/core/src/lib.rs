//! Deterministic federated-learning simulator.
//!
//! The crate simulates a server collaborating with `n` clients over `K`
//! communication rounds. Each round a cohort of `r` clients trains locally
//! (plain SGD or proximal SGD), sends back parameters together with an
//! activation vector summarizing its data distribution, and the server
//! aggregates with one of four weighting policies:
//!
//! * `fedavg` / `fedprox` — sample-count-proportional weights,
//! * `equitable` — spectral clustering of the cohort's activation vectors
//!   followed by per-cluster equalized weights,
//! * `fedprox_powd` — proximal updates with loss-biased client selection.
//!
//! Everything is seeded and reproducible: a `(config, seed)` pair yields
//! byte-identical CSV output regardless of worker-thread count.
//!
//! Numeric kernels are generic over the scalar type (`f32`/`f64`) through
//! the [`Scalar`] trait; the simulation layer runs on the [`Real`] alias.

pub mod clustering;
pub mod data;
pub mod error;
pub mod experiment;
pub mod federation;
pub mod metrics;
pub mod model;
pub mod numkernel;
pub mod rng;
pub mod scalar;
pub mod theory;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Scalar type used by the simulation layer.
pub type Real = f64;

/// Dense matrix over [`Real`].
pub type RealMatrix = numkernel::Matrix<Real>;

/// Dataset over [`Real`] features.
pub type RealDataset = data::Dataset<Real>;

/// MLP parameters over [`Real`].
pub type RealModelParams = model::ModelParams<Real>;
