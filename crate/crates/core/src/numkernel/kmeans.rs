//! Lloyd's k-means with k-means++ seeding.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numkernel::Matrix;
use crate::scalar::Scalar;

const MAX_LLOYD_ITERS: usize = 100;

/// Clustering of the rows of a point matrix.
///
/// Labels are arbitrary (identity up to permutation). When `points >= c`,
/// every cluster id in `[0, c)` appears at least once: empty clusters are
/// repaired by promoting the point farthest from its assigned centroid to a
/// singleton centroid.
#[derive(Debug, Clone)]
pub struct KMeansResult<T> {
    pub assignments: Vec<usize>,
    pub centroids: Matrix<T>,
    pub inertia: T,
}

/// Cluster the rows of `points` into `c` groups, keeping the best of
/// `restarts` k-means++ initializations by inertia. Deterministic for a
/// given rng state; assignment ties break toward the lowest cluster index.
pub fn kmeans<T: Scalar>(
    points: &Matrix<T>,
    c: usize,
    restarts: usize,
    rng: &mut impl Rng,
) -> Result<KMeansResult<T>> {
    let n = points.rows();
    if c == 0 {
        return Err(Error::contract("kmeans requires c >= 1"));
    }
    if n < c {
        return Err(Error::contract(format!(
            "kmeans requires points.rows >= c, got {n} points for c = {c}"
        )));
    }
    let restarts = restarts.max(1);

    let mut best: Option<KMeansResult<T>> = None;
    for _ in 0..restarts {
        let run = lloyd_once(points, c, rng);
        let better = match &best {
            None => true,
            Some(b) => run.inertia < b.inertia,
        };
        if better {
            best = Some(run);
        }
    }
    Ok(best.expect("restarts >= 1"))
}

fn lloyd_once<T: Scalar>(points: &Matrix<T>, c: usize, rng: &mut impl Rng) -> KMeansResult<T> {
    let n = points.rows();
    let dim = points.cols();
    let mut centroids = seed_plus_plus(points, c, rng);
    let mut assignments = vec![usize::MAX; n];

    for _ in 0..MAX_LLOYD_ITERS {
        let new_assignments = assign(points, &centroids);

        // Centroid update.
        let mut counts = vec![0usize; c];
        let mut sums: Matrix<T> = Matrix::zeros(c, dim);
        for (i, &k) in new_assignments.iter().enumerate() {
            counts[k] += 1;
            for (j, v) in points.row(i).iter().enumerate() {
                sums[(k, j)] += *v;
            }
        }
        let mut repaired = new_assignments;
        for k in 0..c {
            if counts[k] == 0 {
                repair_empty_cluster(points, &centroids, &mut repaired, &mut counts, k);
                // Recompute sums for the two affected clusters.
                sums = Matrix::zeros(c, dim);
                for (i, &kk) in repaired.iter().enumerate() {
                    for (j, v) in points.row(i).iter().enumerate() {
                        sums[(kk, j)] += *v;
                    }
                }
            }
        }
        for k in 0..c {
            let inv = T::count(counts[k]).recip();
            for j in 0..dim {
                centroids[(k, j)] = sums[(k, j)] * inv;
            }
        }

        let converged = repaired == assignments;
        assignments = repaired;
        if converged {
            break;
        }
    }

    let inertia = assignments
        .iter()
        .enumerate()
        .map(|(i, &k)| squared_distance(points.row(i), centroids.row(k)))
        .sum();
    KMeansResult {
        assignments,
        centroids,
        inertia,
    }
}

/// k-means++ seeding: first centroid uniform, subsequent ones sampled with
/// probability proportional to squared distance from the nearest chosen one.
fn seed_plus_plus<T: Scalar>(points: &Matrix<T>, c: usize, rng: &mut impl Rng) -> Matrix<T> {
    let n = points.rows();
    let mut chosen: Vec<usize> = Vec::with_capacity(c);
    chosen.push(rng.random_range(0..n));

    let mut d2: Vec<f64> = (0..n)
        .map(|i| squared_distance(points.row(i), points.row(chosen[0])).as_f64())
        .collect();

    while chosen.len() < c {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                target -= w;
                if target <= 0.0 {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            // All remaining mass at distance zero (duplicate points): any row.
            rng.random_range(0..n)
        };
        chosen.push(next);
        for (i, slot) in d2.iter_mut().enumerate() {
            let d = squared_distance(points.row(i), points.row(next)).as_f64();
            if d < *slot {
                *slot = d;
            }
        }
    }

    points.select_rows(&chosen)
}

fn assign<T: Scalar>(points: &Matrix<T>, centroids: &Matrix<T>) -> Vec<usize> {
    (0..points.rows())
        .map(|i| {
            let row = points.row(i);
            let mut best_k = 0;
            let mut best_d = squared_distance(row, centroids.row(0));
            for k in 1..centroids.rows() {
                let d = squared_distance(row, centroids.row(k));
                if d < best_d {
                    best_d = d;
                    best_k = k;
                }
            }
            best_k
        })
        .collect()
}

/// Give the empty cluster `k` the point farthest from its current centroid,
/// drawn from clusters that can spare one. Ties break toward the lowest
/// point index.
fn repair_empty_cluster<T: Scalar>(
    points: &Matrix<T>,
    centroids: &Matrix<T>,
    assignments: &mut [usize],
    counts: &mut [usize],
    k: usize,
) {
    let mut donor: Option<(usize, T)> = None;
    for (i, &ki) in assignments.iter().enumerate() {
        if counts[ki] <= 1 {
            continue;
        }
        let d = squared_distance(points.row(i), centroids.row(ki));
        let take = match donor {
            None => true,
            Some((_, best)) => d > best,
        };
        if take {
            donor = Some((i, d));
        }
    }
    let (i, _) = donor.expect("points >= clusters guarantees a donor");
    counts[assignments[i]] -= 1;
    assignments[i] = k;
    counts[k] += 1;
}

fn squared_distance<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = *x - *y;
            d * d
        })
        .sum()
}
