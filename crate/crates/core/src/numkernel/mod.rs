//! Dense linear algebra and clustering primitives, built from scratch:
//! row-major matrices, a cyclic Jacobi eigensolver for symmetric matrices,
//! and k-means with k-means++ seeding. Problem sizes here are cohort-sized
//! (tens of rows), so cubic algorithms are the right tool.

mod eigen;
mod kmeans;
mod matrix;

pub use eigen::{jacobi_eigh, EigenResult, DEFAULT_MAX_SWEEPS, DEFAULT_TOL};
pub use kmeans::{kmeans, KMeansResult};
pub use matrix::Matrix;
