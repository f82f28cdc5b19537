//! Thin singular value decomposition by one-sided Jacobi rotations.

use crate::tensor::Matrix;

/// `A = U · diag(sigma) · Vᵀ` with `U` `m×r`, `V` `n×r`, `r = min(m, n)`.
/// Singular values are sorted in descending order and are non-negative.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: Matrix,
    pub sigma: Vec<f64>,
    pub v: Matrix,
}

const MAX_SWEEPS: usize = 60;

pub fn svd(a: &Matrix) -> Svd {
    if a.rows() >= a.cols() {
        jacobi_tall(a)
    } else {
        let t = jacobi_tall(&a.transpose());
        Svd {
            u: t.v,
            sigma: t.sigma,
            v: t.u,
        }
    }
}

// Orthogonalise the columns of a tall matrix; rotations accumulate into V.
fn jacobi_tall(a: &Matrix) -> Svd {
    let (m, n) = a.shape();
    // column-major working copies
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| a.column(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| (0..n).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();

    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
                for i in 0..m {
                    alpha += cols[p][i] * cols[p][i];
                    beta += cols[q][i] * cols[q][i];
                    gamma += cols[p][i] * cols[q][i];
                }
                if gamma == 0.0 || gamma.abs() <= 1e-15 * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..m {
                    let (xp, xq) = (cols[p][i], cols[q][i]);
                    cols[p][i] = c * xp - s * xq;
                    cols[q][i] = s * xp + c * xq;
                }
                for i in 0..n {
                    let (xp, xq) = (v[p][i], v[q][i]);
                    v[p][i] = c * xp - s * xq;
                    v[q][i] = s * xp + c * xq;
                }
            }
        }
        if !rotated {
            break;
        }
    }

    let norms: Vec<f64> = cols
        .iter()
        .map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));

    let mut u = Matrix::zeros(m, n);
    let mut vm = Matrix::zeros(n, n);
    let mut sigma = Vec::with_capacity(n);
    for (dst, &src) in order.iter().enumerate() {
        let s = norms[src];
        sigma.push(s);
        for i in 0..m {
            u[(i, dst)] = if s > 0.0 { cols[src][i] / s } else { 0.0 };
        }
        for i in 0..n {
            vm[(i, dst)] = v[src][i];
        }
    }
    Svd { u, sigma, v: vm }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn reconstruct(s: &Svd) -> Matrix {
        let r = s.sigma.len();
        let us = Matrix::from_fn(s.u.rows(), r, |i, k| s.u[(i, k)] * s.sigma[k]);
        us.matmul(&s.v.transpose()).unwrap()
    }

    #[test]
    fn reconstructs_random_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for &(m, n) in &[(5, 3), (3, 5), (4, 4), (1, 6), (6, 1)] {
            let a = Matrix::from_fn(m, n, |_, _| rng.gen_range(-2.0..2.0));
            let s = svd(&a);
            assert!(reconstruct(&s).max_abs_diff(&a) < 1e-12, "{m}x{n}");
            assert!(s.sigma.windows(2).all(|w| w[0] >= w[1]));
            let utu = s.u.transpose().matmul(&s.u).unwrap();
            assert!(utu.max_abs_diff(&Matrix::identity(m.min(n))) < 1e-12);
            let vtv = s.v.transpose().matmul(&s.v).unwrap();
            assert!(vtv.max_abs_diff(&Matrix::identity(m.min(n))) < 1e-12);
        }
    }

    #[test]
    fn diagonal_matrix() {
        let a = Matrix::from_rows(&[vec![3.0, 0.0], vec![0.0, -4.0]]).unwrap();
        let s = svd(&a);
        assert!((s.sigma[0] - 4.0).abs() < 1e-14);
        assert!((s.sigma[1] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn rank_deficient() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0], vec![3.0, 6.0]]).unwrap();
        let s = svd(&a);
        assert!(s.sigma[1].abs() < 1e-12);
        assert!((s.sigma[0] - (70.0f64).sqrt()).abs() < 1e-12);
    }
}
