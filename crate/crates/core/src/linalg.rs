//! Dense symmetric linear algebra sized for desk problems.
//!
//! Everything here is O(n^3) with small constants and no external BLAS/LAPACK
//! dependency. The matrices the lab produces top out around a few hundred
//! rows, where a careful textbook implementation is both fast enough and easy
//! to audit.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

/// Relative tolerance used to decide whether a matrix counts as symmetric.
const SYMMETRY_RTOL: f64 = 1e-9;

pub fn is_symmetric(a: &Array2<f64>) -> bool {
    let (r, c) = a.dim();
    if r != c {
        return false;
    }
    let scale = a.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1.0);
    for i in 0..r {
        for j in (i + 1)..r {
            if (a[[i, j]] - a[[j, i]]).abs() > SYMMETRY_RTOL * scale {
                return false;
            }
        }
    }
    true
}

/// Cholesky factor of a symmetric positive-definite matrix, kept so one
/// factorization can serve many right-hand sides.
#[derive(Debug, Clone)]
pub struct Cholesky {
    /// Lower-triangular factor L with A = L Lᵀ.
    l: Array2<f64>,
}

impl Cholesky {
    pub fn new(a: &Array2<f64>) -> Result<Self> {
        let (r, c) = a.dim();
        if r != c {
            return Err(Error::parameter(format!(
                "cholesky needs a square matrix, got {r}x{c}"
            )));
        }
        if !is_symmetric(a) {
            return Err(Error::numeric("cholesky input is not symmetric"));
        }
        let n = r;
        let mut l = Array2::<f64>::zeros((n, n));
        for j in 0..n {
            let mut d = a[[j, j]];
            for k in 0..j {
                d -= l[[j, k]] * l[[j, k]];
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::numeric(format!(
                    "matrix is not positive definite (pivot {j} = {d:e})"
                )));
            }
            let djj = d.sqrt();
            l[[j, j]] = djj;
            for i in (j + 1)..n {
                let mut s = a[[i, j]];
                for k in 0..j {
                    s -= l[[i, k]] * l[[j, k]];
                }
                l[[i, j]] = s / djj;
            }
        }
        Ok(Cholesky { l })
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    /// Solves A x = b via forward/back substitution.
    pub fn solve(&self, b: &Array1<f64>) -> Result<Array1<f64>> {
        let n = self.dim();
        if b.len() != n {
            return Err(Error::parameter(format!(
                "rhs length {} does not match factor dimension {n}",
                b.len()
            )));
        }
        // L y = b
        let mut y = Array1::<f64>::zeros(n);
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s -= self.l[[i, k]] * y[k];
            }
            y[i] = s / self.l[[i, i]];
        }
        // Lᵀ x = y
        let mut x = Array1::<f64>::zeros(n);
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n {
                s -= self.l[[k, i]] * x[k];
            }
            x[i] = s / self.l[[i, i]];
        }
        Ok(x)
    }
}

/// One-shot SPD solve; factor with [`Cholesky`] directly when reusing A.
pub fn solve_spd(a: &Array2<f64>, b: &Array1<f64>) -> Result<Array1<f64>> {
    Cholesky::new(a)?.solve(b)
}

/// All eigenvalues of a symmetric matrix, ascending, via cyclic Jacobi
/// rotations. Converges quadratically; 30 sweeps is far beyond what any
/// desk-scale matrix needs.
pub fn sym_eigenvalues(a: &Array2<f64>) -> Result<Vec<f64>> {
    let (r, c) = a.dim();
    if r != c {
        return Err(Error::parameter(format!(
            "eigenvalues need a square matrix, got {r}x{c}"
        )));
    }
    if !is_symmetric(a) {
        return Err(Error::numeric("eigenvalue input is not symmetric"));
    }
    let n = r;
    if n == 0 {
        return Err(Error::parameter("eigenvalues of an empty matrix"));
    }
    let mut m = a.clone();
    let frob = m.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
    const MAX_SWEEPS: usize = 30;
    for _ in 0..MAX_SWEEPS {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += 2.0 * m[[i, j]] * m[[i, j]];
            }
        }
        if off.sqrt() <= 1e-14 * frob {
            let mut eigs: Vec<f64> = (0..n).map(|i| m[[i, i]]).collect();
            eigs.sort_by(|a, b| a.partial_cmp(b).expect("finite eigenvalues"));
            return Ok(eigs);
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[[p, q]];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let theta = (m[[q, q]] - m[[p, p]]) / (2.0 * apq);
                // Smaller-root tangent keeps the rotation angle <= pi/4.
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let cos = 1.0 / (t * t + 1.0).sqrt();
                let sin = t * cos;
                for k in 0..n {
                    let mkp = m[[k, p]];
                    let mkq = m[[k, q]];
                    m[[k, p]] = cos * mkp - sin * mkq;
                    m[[k, q]] = sin * mkp + cos * mkq;
                }
                for k in 0..n {
                    let mpk = m[[p, k]];
                    let mqk = m[[q, k]];
                    m[[p, k]] = cos * mpk - sin * mqk;
                    m[[q, k]] = sin * mpk + cos * mqk;
                }
            }
        }
    }
    Err(Error::numeric(
        "jacobi eigenvalue iteration did not converge in 30 sweeps",
    ))
}

/// Extreme eigenvalues (min, max) of a symmetric matrix.
pub fn sym_eigen_extremes(a: &Array2<f64>) -> Result<(f64, f64)> {
    let eigs = sym_eigenvalues(a)?;
    Ok((eigs[0], *eigs.last().expect("non-empty spectrum")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_spd(n: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = Array2::from_shape_fn((n, n), |_| rng.random::<f64>() - 0.5);
        let mut a = m.t().dot(&m);
        for i in 0..n {
            a[[i, i]] += 0.5;
        }
        a
    }

    #[test]
    fn cholesky_known_2x2() {
        let a = array![[4.0, 2.0], [2.0, 3.0]];
        let f = Cholesky::new(&a).unwrap();
        // L = [[2, 0], [1, sqrt(2)]] by hand.
        assert_abs_diff_eq!(f.l[[0, 0]], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(f.l[[1, 0]], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(f.l[[1, 1]], 2.0_f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn solve_residual_is_tiny() {
        for seed in 0..5 {
            let a = random_spd(24, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
            let b = Array1::from_shape_fn(24, |_| rng.random::<f64>() - 0.5);
            let x = solve_spd(&a, &b).unwrap();
            let r = &a.dot(&x) - &b;
            let rel = r.iter().map(|v| v * v).sum::<f64>().sqrt()
                / b.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(rel < 1e-10, "seed {seed}: relative residual {rel:e}");
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = array![[1.0, 2.0], [2.0, 1.0]]; // eigenvalues 3, -1
        assert!(matches!(Cholesky::new(&a), Err(Error::Numeric(_))));
    }

    #[test]
    fn cholesky_rejects_asymmetric() {
        let a = array![[1.0, 0.5], [0.0, 1.0]];
        assert!(Cholesky::new(&a).is_err());
    }

    #[test]
    fn jacobi_matches_hand_eigenvalues() {
        let a = array![[2.0, 1.0], [1.0, 2.0]];
        let eigs = sym_eigenvalues(&a).unwrap();
        assert_abs_diff_eq!(eigs[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(eigs[1], 3.0, epsilon = 1e-12);
    }

    #[test]
    fn jacobi_preserves_trace() {
        let a = random_spd(17, 42);
        let trace: f64 = (0..17).map(|i| a[[i, i]]).sum();
        let eigs = sym_eigenvalues(&a).unwrap();
        assert_abs_diff_eq!(eigs.iter().sum::<f64>(), trace, epsilon = 1e-9);
    }

    proptest! {
        // Rayleigh quotients of any vector must land inside the spectrum.
        #[test]
        fn rayleigh_quotient_within_spectrum(seed in 0u64..500, n in 2usize..12) {
            let a = random_spd(n, seed);
            let (lo, hi) = sym_eigen_extremes(&a).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
            let v = Array1::from_shape_fn(n, |_| rng.random::<f64>() - 0.5);
            let vv = v.dot(&v);
            prop_assume!(vv > 1e-12);
            let q = v.dot(&a.dot(&v)) / vv;
            let slack = 1e-9 * (1.0 + hi.abs());
            prop_assert!(q >= lo - slack && q <= hi + slack);
        }
    }
}
