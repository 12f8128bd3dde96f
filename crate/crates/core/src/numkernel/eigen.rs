//! Symmetric eigendecomposition via cyclic Jacobi rotations.

use crate::error::{Error, Result};
use crate::numkernel::Matrix;
use crate::scalar::Scalar;

/// Default tolerance on the off-diagonal Frobenius norm, relative to
/// `max(1, ||S||_F)`.
pub const DEFAULT_TOL: f64 = 1e-10;

/// Default sweep budget. Cohort-sized matrices converge in well under ten
/// sweeps; 100 leaves a wide margin.
pub const DEFAULT_MAX_SWEEPS: usize = 100;

/// Eigendecomposition of a symmetric matrix.
///
/// Eigenvalues are sorted descending; column `j` of `eigenvectors` is the
/// unit eigenvector paired with `eigenvalues[j]`. Each eigenvector's sign is
/// fixed so that its largest-magnitude entry is positive, making the
/// decomposition deterministic for downstream k-means.
#[derive(Debug, Clone)]
pub struct EigenResult<T> {
    pub eigenvalues: Vec<T>,
    pub eigenvectors: Matrix<T>,
}

/// Decompose the symmetric matrix `s` with cyclic Jacobi rotations.
///
/// `s` must be square and symmetric within `1e-10` relative tolerance;
/// iteration stops once the off-diagonal Frobenius norm drops below
/// `tol * max(1, ||s||_F)` or errors after `max_sweeps` full sweeps.
pub fn jacobi_eigh<T: Scalar>(s: &Matrix<T>, tol: f64, max_sweeps: usize) -> Result<EigenResult<T>> {
    let n = s.rows();
    if s.rows() != s.cols() {
        return Err(Error::NotSquare {
            rows: s.rows(),
            cols: s.cols(),
        });
    }
    let max_abs = s
        .as_slice()
        .iter()
        .fold(0.0f64, |acc, v| acc.max(v.as_f64().abs()));
    let sym_tol = 1e-10 * max_abs.max(1.0);
    for i in 0..n {
        for j in (i + 1)..n {
            let delta = (s[(i, j)] - s[(j, i)]).as_f64().abs();
            if delta > sym_tol {
                return Err(Error::NotSymmetric { i, j, delta });
            }
        }
    }

    // Work on an exactly symmetric copy (mirror the upper triangle).
    let mut a = s.clone();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = a[(i, j)];
            a[(j, i)] = v;
        }
    }

    let scale = s.frobenius_norm().as_f64().max(1.0);
    let threshold = tol * scale;
    let mut v: Matrix<T> = Matrix::identity(n);

    let mut off = off_diagonal_norm(&a);
    let mut sweeps = 0;
    while off > threshold {
        if sweeps >= max_sweeps {
            return Err(Error::NoConvergence {
                sweeps,
                residual: off,
            });
        }
        for p in 0..n {
            for q in (p + 1)..n {
                rotate(&mut a, &mut v, p, q);
            }
        }
        sweeps += 1;
        off = off_diagonal_norm(&a);
    }

    let mut order: Vec<usize> = (0..n).collect();
    // Descending eigenvalue, index as deterministic tiebreak.
    order.sort_by(|&i, &j| {
        a[(j, j)]
            .partial_cmp(&a[(i, i)])
            .expect("finite eigenvalues")
            .then(i.cmp(&j))
    });

    let mut eigenvalues = Vec::with_capacity(n);
    let mut eigenvectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        eigenvalues.push(a[(src, src)]);
        // Sign convention: largest-magnitude entry positive.
        let mut pivot = 0;
        let mut best = T::zero();
        for i in 0..n {
            let mag = v[(i, src)].abs();
            if mag > best {
                best = mag;
                pivot = i;
            }
        }
        let flip = v[(pivot, src)] < T::zero();
        for i in 0..n {
            let val = v[(i, src)];
            eigenvectors[(i, dst)] = if flip { -val } else { val };
        }
    }

    Ok(EigenResult {
        eigenvalues,
        eigenvectors,
    })
}

fn off_diagonal_norm<T: Scalar>(a: &Matrix<T>) -> f64 {
    let n = a.rows();
    let mut sum = 0.0;
    for p in 0..n {
        for q in (p + 1)..n {
            let v = a[(p, q)].as_f64();
            sum += 2.0 * v * v;
        }
    }
    sum.sqrt()
}

/// One Jacobi rotation annihilating `a[(p,q)]`, accumulated into `v`.
fn rotate<T: Scalar>(a: &mut Matrix<T>, v: &mut Matrix<T>, p: usize, q: usize) {
    let apq = a[(p, q)];
    if apq == T::zero() {
        return;
    }
    let app = a[(p, p)];
    let aqq = a[(q, q)];
    let theta = (aqq - app) / (T::real(2.0) * apq);
    let t = if theta.as_f64().abs() > 1e150 {
        // Avoid theta^2 overflow; the rotation is essentially infinitesimal.
        (T::real(2.0) * theta).recip()
    } else {
        let sign = if theta >= T::zero() { T::one() } else { -T::one() };
        sign / (theta.abs() + (theta * theta + T::one()).sqrt())
    };
    let c = (t * t + T::one()).sqrt().recip();
    let s = t * c;
    let tau = s / (T::one() + c);

    a[(p, p)] = app - t * apq;
    a[(q, q)] = aqq + t * apq;
    a[(p, q)] = T::zero();
    a[(q, p)] = T::zero();

    let n = a.rows();
    for i in 0..n {
        if i == p || i == q {
            continue;
        }
        let aip = a[(i, p)];
        let aiq = a[(i, q)];
        let new_ip = aip - s * (aiq + tau * aip);
        let new_iq = aiq + s * (aip - tau * aiq);
        a[(i, p)] = new_ip;
        a[(p, i)] = new_ip;
        a[(i, q)] = new_iq;
        a[(q, i)] = new_iq;
    }
    for i in 0..n {
        let vip = v[(i, p)];
        let viq = v[(i, q)];
        v[(i, p)] = vip - s * (viq + tau * vip);
        v[(i, q)] = viq + s * (vip - tau * viq);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn decomp(rows: &[Vec<f64>]) -> EigenResult<f64> {
        let m = Matrix::from_rows(rows).unwrap();
        jacobi_eigh(&m, DEFAULT_TOL, DEFAULT_MAX_SWEEPS).unwrap()
    }

    /// Closed-form 2x2 symmetric eigenvalues from the characteristic
    /// polynomial; independent of the Jacobi path.
    fn eig2_oracle(a: f64, b: f64, d: f64) -> (f64, f64) {
        let mean = (a + d) / 2.0;
        let disc = ((a - d) * (a - d) / 4.0 + b * b).sqrt();
        (mean + disc, mean - disc)
    }

    fn random_symmetric(n: usize, rng: &mut impl Rng) -> Matrix<f64> {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = rng.random::<f64>() * 2.0 - 1.0;
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        m
    }

    #[test]
    fn identity_has_unit_eigenvalues() {
        let r = decomp(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert_eq!(r.eigenvalues, vec![1.0, 1.0]);
    }

    #[test]
    fn diagonal_matrix_is_sorted_descending() {
        let r = decomp(&[vec![1.0, 0.0], vec![0.0, 3.0]]);
        assert_eq!(r.eigenvalues, vec![3.0, 1.0]);
        // Eigenvector for 3 is e2, for 1 is e1.
        assert_eq!(r.eigenvectors[(1, 0)], 1.0);
        assert_eq!(r.eigenvectors[(0, 1)], 1.0);
    }

    #[test]
    fn two_by_two_matches_characteristic_polynomial() {
        let r = decomp(&[vec![2.0, 1.0], vec![1.0, 2.0]]);
        let (hi, lo) = eig2_oracle(2.0, 1.0, 2.0);
        assert!((r.eigenvalues[0] - hi).abs() < 1e-12); // hi = 3
        assert!((r.eigenvalues[1] - lo).abs() < 1e-12); // lo = 1
        let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
        // Up to sign: [1,1]/sqrt(2) and [1,-1]/sqrt(2). Sign convention makes
        // the larger-magnitude entry positive.
        assert!((r.eigenvectors[(0, 0)].abs() - inv_sqrt2).abs() < 1e-10);
        assert!((r.eigenvectors[(1, 0)] - r.eigenvectors[(0, 0)]).abs() < 1e-10);
        assert!((r.eigenvectors[(0, 1)] + r.eigenvectors[(1, 1)]).abs() < 1e-10);
    }

    #[test]
    fn random_matrices_reconstruct_and_preserve_trace() {
        let mut rng = crate::rng::stream(7, &[0xE1]);
        for n in [1usize, 2, 3, 5, 8, 13, 21, 32] {
            let s = random_symmetric(n, &mut rng);
            let r = jacobi_eigh(&s, DEFAULT_TOL, DEFAULT_MAX_SWEEPS).unwrap();
            let norm = s.frobenius_norm();

            // Reconstruction ||V diag(l) V^T - S||_F <= 1e-7 ||S||_F.
            let mut lam = Matrix::zeros(n, n);
            for i in 0..n {
                lam[(i, i)] = r.eigenvalues[i];
            }
            let recon = r
                .eigenvectors
                .matmul(&lam)
                .unwrap()
                .matmul(&r.eigenvectors.transpose())
                .unwrap();
            let mut diff = 0.0;
            for i in 0..n {
                for j in 0..n {
                    let d = recon[(i, j)] - s[(i, j)];
                    diff += d * d;
                }
            }
            assert!(diff.sqrt() <= 1e-7 * norm.max(1e-300), "n={n}");

            // Eigenpair residual ||S v - l v|| <= 1e-8 max(1, ||S||_F).
            for j in 0..n {
                let mut res = 0.0;
                for i in 0..n {
                    let mut sv = 0.0;
                    for k in 0..n {
                        sv += s[(i, k)] * r.eigenvectors[(k, j)];
                    }
                    let d = sv - r.eigenvalues[j] * r.eigenvectors[(i, j)];
                    res += d * d;
                }
                assert!(res.sqrt() <= 1e-8 * norm.max(1.0), "n={n} j={j}");
            }

            // Orthonormal columns.
            for j in 0..n {
                for k in j..n {
                    let dot: f64 = (0..n)
                        .map(|i| r.eigenvectors[(i, j)] * r.eigenvectors[(i, k)])
                        .sum();
                    let want = if j == k { 1.0 } else { 0.0 };
                    assert!((dot - want).abs() <= 1e-8, "n={n} j={j} k={k}");
                }
            }

            // Trace identity.
            let sum: f64 = r.eigenvalues.iter().sum();
            let tr = s.trace();
            assert!((sum - tr).abs() <= 1e-8 * tr.abs().max(1.0));

            // Descending order.
            for w in r.eigenvalues.windows(2) {
                assert!(w[0] >= w[1]);
            }
        }
    }

    #[test]
    fn solves_at_f32() {
        let m = Matrix::<f32>::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let r = jacobi_eigh(&m, 1e-6, DEFAULT_MAX_SWEEPS).unwrap();
        assert!((r.eigenvalues[0] - 3.0).abs() < 1e-5);
        assert!((r.eigenvalues[1] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn rejects_non_square() {
        let m = Matrix::<f64>::zeros(2, 3);
        assert!(matches!(
            jacobi_eigh(&m, DEFAULT_TOL, DEFAULT_MAX_SWEEPS),
            Err(Error::NotSquare { .. })
        ));
    }

    #[test]
    fn rejects_asymmetric() {
        let m = Matrix::from_rows(&[vec![1.0, 2.0], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(
            jacobi_eigh(&m, DEFAULT_TOL, DEFAULT_MAX_SWEEPS),
            Err(Error::NotSymmetric { .. })
        ));
    }

    #[test]
    fn sweep_budget_exhaustion_reports_residual() {
        let m = Matrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        match jacobi_eigh(&m, DEFAULT_TOL, 0) {
            Err(Error::NoConvergence { residual, .. }) => assert!(residual > 0.0),
            other => panic!("expected convergence error, got {other:?}"),
        }
    }
}
