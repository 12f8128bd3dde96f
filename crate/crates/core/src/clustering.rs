//! Cohort clustering from activation vectors and the per-cluster equalized
//! aggregation weights.
//!
//! The pipeline is: stack the cohort's activation vectors into `A`, form
//! the similarity matrix `S = A A^T` (optionally cosine-normalized), embed
//! each participant as its row in the top-`C` eigenvector matrix of `S`,
//! k-means the embedding, and weight participant `i` in cluster `q` as
//! `1 / (C * |cluster q|)` so every cluster carries total mass `1/C`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::ActivationVector;
use crate::numkernel::{jacobi_eigh, kmeans, Matrix, DEFAULT_MAX_SWEEPS, DEFAULT_TOL};
use crate::scalar::Scalar;

/// Stacked activation vectors of a cohort, one row per participant.
#[derive(Debug, Clone)]
pub struct ActivationMatrix<T> {
    matrix: Matrix<T>,
    client_ids: Vec<usize>,
}

impl<T: Scalar> ActivationMatrix<T> {
    /// Stack per-participant activation vectors. All vectors must share one
    /// dimension.
    pub fn new(client_ids: Vec<usize>, vectors: &[ActivationVector<T>]) -> Result<Self> {
        if vectors.is_empty() {
            return Err(Error::contract("activation matrix needs at least one row"));
        }
        if client_ids.len() != vectors.len() {
            return Err(Error::contract(format!(
                "{} client ids for {} activation vectors",
                client_ids.len(),
                vectors.len()
            )));
        }
        let dim = vectors[0].values.len();
        if vectors.iter().any(|v| v.values.len() != dim) {
            return Err(Error::contract("activation vectors differ in dimension"));
        }
        let data: Vec<T> = vectors
            .iter()
            .flat_map(|v| v.values.iter().copied())
            .collect();
        Ok(ActivationMatrix {
            matrix: Matrix::from_vec(vectors.len(), dim, data)?,
            client_ids,
        })
    }

    pub fn participants(&self) -> usize {
        self.matrix.rows()
    }

    pub fn client_ids(&self) -> &[usize] {
        &self.client_ids
    }

    pub fn matrix(&self) -> &Matrix<T> {
        &self.matrix
    }
}

/// Cohort clustering outcome: per-participant labels, cluster sizes, and
/// the equalized aggregation weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    pub labels: Vec<usize>,
    pub cluster_sizes: Vec<usize>,
    pub weights: Vec<f64>,
}

/// Similarity matrix of the stacked activations: `A A^T`, or cosine
/// similarity when `normalize` is set. The result is exactly symmetric.
pub fn similarity<T: Scalar>(a: &ActivationMatrix<T>, normalize: bool) -> Result<Matrix<T>> {
    let m = a.matrix();
    let r = m.rows();
    let mut rows: Vec<Vec<T>> = (0..r).map(|i| m.row(i).to_vec()).collect();
    if normalize {
        for (i, row) in rows.iter_mut().enumerate() {
            let norm = row.iter().map(|v| *v * *v).sum::<T>().sqrt();
            if norm <= T::zero() {
                return Err(Error::DegenerateRow { row: i });
            }
            for v in row.iter_mut() {
                *v /= norm;
            }
        }
    }
    // Upper triangle mirrored, so s_ij == s_ji bitwise.
    let mut s: Matrix<T> = Matrix::zeros(r, r);
    for i in 0..r {
        for j in i..r {
            let dot = rows[i]
                .iter()
                .zip(&rows[j])
                .map(|(x, y)| *x * *y)
                .sum::<T>();
            s[(i, j)] = dot;
            s[(j, i)] = dot;
        }
    }
    Ok(s)
}

/// Cluster participants by k-means on the rows of the top-`c` eigenvector
/// matrix of the similarity matrix. Labels are identity up to permutation.
pub fn spectral_cluster<T: Scalar>(
    s: &Matrix<T>,
    c: usize,
    restarts: usize,
    rng: &mut impl Rng,
) -> Result<Vec<usize>> {
    let r = s.rows();
    if c == 0 || c > r {
        return Err(Error::contract(format!(
            "spectral clustering needs 1 <= c <= participants, got c = {c} for {r} participants"
        )));
    }
    let eig = jacobi_eigh(s, DEFAULT_TOL, DEFAULT_MAX_SWEEPS)?;
    let mut embedding: Matrix<T> = Matrix::zeros(r, c);
    for i in 0..r {
        for k in 0..c {
            embedding[(i, k)] = eig.eigenvectors[(i, k)];
        }
    }
    let result = kmeans(&embedding, c, restarts, rng)?;
    Ok(result.assignments)
}

/// Equalized weights from cluster labels: participant `i` in cluster `q`
/// gets `1 / (c * |cluster q|)`, so each cluster's total mass is `1/c`.
pub fn equitable_weights(labels: &[usize], c: usize) -> Result<ClusterAssignment> {
    if labels.is_empty() {
        return Err(Error::contract("equitable weights need participants"));
    }
    if c == 0 {
        return Err(Error::contract("cluster count must be >= 1"));
    }
    let mut cluster_sizes = vec![0usize; c];
    for &label in labels {
        if label >= c {
            return Err(Error::contract(format!(
                "cluster label {label} out of range for c = {c}"
            )));
        }
        cluster_sizes[label] += 1;
    }
    if let Some(empty) = cluster_sizes.iter().position(|&s| s == 0) {
        return Err(Error::EmptyCluster { cluster: empty });
    }
    let weights: Vec<f64> = labels
        .iter()
        .map(|&label| 1.0 / (c as f64 * cluster_sizes[label] as f64))
        .collect();
    Ok(ClusterAssignment {
        labels: labels.to_vec(),
        cluster_sizes,
        weights,
    })
}
