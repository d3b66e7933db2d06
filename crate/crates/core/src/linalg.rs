//! Dense symmetric eigendecomposition and projection onto the PSD cone.
//!
//! Matrices are square, row-major `&[f64]` of length `n * n`. The solver is a
//! cyclic Jacobi iteration: slow for large `n` but accurate to a few ulps
//! relative to the matrix norm, which is what the projection step needs.

use crate::error::{Error, Result};

/// Jacobi sweeps allowed before reporting non-convergence.
pub const MAX_SWEEPS: usize = 100;

/// Eigenvalues (unsorted) and eigenvectors (columns of a row-major matrix).
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    pub n: usize,
    pub values: Vec<f64>,
    pub vectors: Vec<f64>,
}

impl SymmetricEigen {
    /// `sum_k f(values[k]) v_k v_k^T`. The result is exactly symmetric.
    pub fn reconstruct_with(&self, f: impl Fn(f64) -> f64) -> Vec<f64> {
        let n = self.n;
        let scaled: Vec<f64> = self.values.iter().map(|&l| f(l)).collect();
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let mut acc = 0.0;
                for (k, lk) in scaled.iter().enumerate() {
                    acc += lk * self.vectors[i * n + k] * self.vectors[j * n + k];
                }
                out[i * n + j] = acc;
                out[j * n + i] = acc;
            }
        }
        out
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

fn off_diagonal_norm(a: &[f64], n: usize) -> f64 {
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a[i * n + j] * a[i * n + j];
            }
        }
    }
    s.sqrt()
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Only the upper triangle's symmetry is assumed; callers symmetrize first.
pub fn symmetric_eigen(matrix: &[f64], n: usize) -> Result<SymmetricEigen> {
    assert_eq!(matrix.len(), n * n, "matrix must be n x n");
    if matrix.iter().any(|v| !v.is_finite()) {
        return Err(Error::EigenFailure {
            sweeps: 0,
            off_norm: f64::NAN,
        });
    }
    let mut a = matrix.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    if n <= 1 {
        return Ok(SymmetricEigen { n, values: a, vectors: v });
    }

    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let target = f64::EPSILON * scale;

    for sweep in 0..=MAX_SWEEPS {
        let off = off_diagonal_norm(&a, n);
        if off <= target || off == 0.0 {
            let values = (0..n).map(|i| a[i * n + i]).collect();
            return Ok(SymmetricEigen { n, values, vectors: v });
        }
        if sweep == MAX_SWEEPS {
            return Err(Error::EigenFailure {
                sweeps: MAX_SWEEPS,
                off_norm: off,
            });
        }
        for p in 0..n - 1 {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = if theta.abs() > 1e150 {
                    0.5 / theta
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                // A <- A J, then A <- J^T A, V <- V J.
                for k in 0..n {
                    let (akp, akq) = (a[k * n + p], a[k * n + q]);
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p * n + k], a[q * n + k]);
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;
                for k in 0..n {
                    let (vkp, vkq) = (v[k * n + p], v[k * n + q]);
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    unreachable!("loop returns on its last sweep")
}

/// `(V + V^T) / 2`.
pub fn symmetrize(v: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            out[i * n + j] = 0.5 * (v[i * n + j] + v[j * n + i]);
        }
    }
    out
}

/// Euclidean projection of the vectorized `n x n` matrix `v` onto the PSD
/// cone: symmetrize, eigendecompose, clamp negative eigenvalues to zero,
/// reconstruct.
pub fn psd_project(v: &[f64], n: usize) -> Result<Vec<f64>> {
    if v.len() != n * n {
        return Err(Error::DimensionMismatch {
            expected: n * n,
            found: v.len(),
        });
    }
    let sym = symmetrize(v, n);
    if n == 1 {
        if !sym[0].is_finite() {
            return Err(Error::EigenFailure {
                sweeps: 0,
                off_norm: f64::NAN,
            });
        }
        return Ok(vec![sym[0].max(0.0)]);
    }
    let eig = symmetric_eigen(&sym, n)?;
    if eig.min_value() >= 0.0 {
        return Ok(sym);
    }
    Ok(eig.reconstruct_with(|l| l.max(0.0)))
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_eigenvalue(m: &[f64], n: usize) -> Result<f64> {
    let sym = symmetrize(m, n);
    Ok(symmetric_eigen(&sym, n)?.min_value())
}

/// Largest absolute eigenvalue of the symmetric part of `m`.
pub fn spectral_norm_sym(m: &[f64], n: usize) -> Result<f64> {
    let sym = symmetrize(m, n);
    Ok(symmetric_eigen(&sym, n)?.values.iter().fold(0.0f64, |acc, l| acc.max(l.abs())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    fn random_symmetric(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        let raw: Vec<f64> = (0..n * n).map(|_| rng.random_range(-3.0..3.0)).collect();
        symmetrize(&raw, n)
    }

    #[test]
    fn diagonal_clamp() {
        let out = psd_project(&[1.0, 0.0, 0.0, -2.0], 2).unwrap();
        assert!(max_abs_diff(&out, &[1.0, 0.0, 0.0, 0.0]) < 1e-15);
    }

    #[test]
    fn nonsymmetric_input_is_symmetrized_first() {
        // (V + V^T)/2 = [[1,1],[1,1]], eigenvalues {0, 2}: already PSD.
        let out = psd_project(&[1.0, 2.0, 0.0, 1.0], 2).unwrap();
        assert!(max_abs_diff(&out, &[1.0, 1.0, 1.0, 1.0]) < 1e-14, "{out:?}");
    }

    #[test]
    fn hand_two_by_two_with_negative_eigenvalue() {
        // [[0,2],[2,0]] has eigenpairs 2:(1,1)/sqrt2 and -2:(1,-1)/sqrt2.
        // Projection keeps 2 * (1,1)(1,1)^T / 2 = [[1,1],[1,1]].
        let out = psd_project(&[0.0, 2.0, 2.0, 0.0], 2).unwrap();
        assert!(max_abs_diff(&out, &[1.0, 1.0, 1.0, 1.0]) < 1e-14, "{out:?}");
    }

    #[test]
    fn scalar_case_is_a_clamp() {
        assert_eq!(psd_project(&[-0.7], 1).unwrap(), vec![0.0]);
        assert_eq!(psd_project(&[2.5], 1).unwrap(), vec![2.5]);
    }

    #[test]
    fn non_finite_input_surfaces_eigen_failure() {
        assert!(matches!(psd_project(&[f64::NAN, 0.0, 0.0, 1.0], 2), Err(Error::EigenFailure { .. })));
    }

    #[test]
    fn eigen_matches_nalgebra() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in [2, 3, 5, 9, 16] {
            let a = random_symmetric(&mut rng, n);
            let ours = symmetric_eigen(&a, n).unwrap();
            let mut mine = ours.values.clone();
            mine.sort_by(f64::total_cmp);
            let theirs = DMatrix::from_row_slice(n, n, &a).symmetric_eigen();
            let mut reference: Vec<f64> = theirs.eigenvalues.iter().copied().collect();
            reference.sort_by(f64::total_cmp);
            assert!(max_abs_diff(&mine, &reference) < 1e-10, "n={n}");
            let back = ours.reconstruct_with(|l| l);
            assert!(max_abs_diff(&back, &a) < 1e-12, "n={n}");
        }
    }

    #[test]
    fn projection_is_psd_and_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in [2, 3, 4, 7] {
            for _ in 0..20 {
                let a = random_symmetric(&mut rng, n);
                let once = psd_project(&a, n).unwrap();
                assert!(min_eigenvalue(&once, n).unwrap() >= -1e-12);
                let twice = psd_project(&once, n).unwrap();
                assert!(max_abs_diff(&once, &twice) < 1e-12);
            }
        }
    }

    #[test]
    fn projection_is_nearest_psd_among_samples() {
        // Frobenius distance to the projection never exceeds the distance to
        // any other PSD matrix; spot-check against random PSD candidates.
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 3;
        for _ in 0..20 {
            let a = random_symmetric(&mut rng, n);
            let proj = psd_project(&a, n).unwrap();
            let d_proj: f64 = a.iter().zip(&proj).map(|(x, y)| (x - y).powi(2)).sum();
            for _ in 0..50 {
                let b: Vec<f64> = (0..n * n).map(|_| rng.random_range(-2.0..2.0)).collect();
                let bm = DMatrix::from_row_slice(n, n, &b);
                let cand = &bm * bm.transpose();
                let d: f64 = a.iter().zip(cand.transpose().iter()).map(|(x, y)| (x - y).powi(2)).sum();
                assert!(d_proj <= d + 1e-12);
            }
        }
    }
}
