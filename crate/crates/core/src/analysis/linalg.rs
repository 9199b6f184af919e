//! Small dense symmetric eigenproblems by cyclic Jacobi rotations.

use nalgebra::DMatrix;

const MAX_SWEEPS: usize = 100;

/// Eigenvalues (ascending) and orthonormal eigenvectors (columns) of a
/// symmetric matrix. Only the upper triangle's symmetry is assumed, not checked.
pub fn symmetric_eigen(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = m.nrows();
    assert_eq!(n, m.ncols(), "symmetric_eigen needs a square matrix");
    let mut a = m.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    if scale == 0.0 {
        return (vec![0.0; n], v);
    }

    for _ in 0..MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)] * a[(i, j)])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)]));
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    (values, vectors)
}

/// Largest singular value.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    let gram = m.transpose() * m;
    let (values, _) = symmetric_eigen(&gram);
    values.last().copied().unwrap_or(0.0).max(0.0).sqrt()
}

/// `V f(Lambda) V^T` for a symmetric matrix.
pub(crate) fn symmetric_function(values: &[f64], vectors: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let n = values.len();
    let mut scaled = vectors.clone();
    for (c, &lambda) in values.iter().enumerate() {
        let fl = f(lambda);
        for r in 0..n {
            scaled[(r, c)] *= fl;
        }
    }
    scaled * vectors.transpose()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_and_rotation() {
        let m = DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 1.0]);
        let (vals, _) = symmetric_eigen(&m);
        assert_eq!(vals, vec![1.0, 4.0]);
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let (vals, vecs) = symmetric_eigen(&m);
        assert!((vals[0] - 1.0).abs() < 1e-14 && (vals[1] - 3.0).abs() < 1e-14);
        let recon = symmetric_function(&vals, &vecs, |x| x);
        assert!((recon - m).abs().max() < 1e-14);
    }

    #[test]
    fn spectral_norm_nilpotent() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        assert!((spectral_norm(&m) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn larger_matrix_reconstructs() {
        let n = 6;
        let b = DMatrix::from_fn(n, n, |i, j| ((i * 7 + j * 3) % 11) as f64 - 5.0);
        let m = &b + b.transpose();
        let (vals, vecs) = symmetric_eigen(&m);
        let recon = symmetric_function(&vals, &vecs, |x| x);
        assert!((recon - &m).abs().max() < 1e-11);
        let ortho = vecs.transpose() * &vecs;
        assert!((ortho - DMatrix::<f64>::identity(n, n)).abs().max() < 1e-12);
        assert!(vals.windows(2).all(|w| w[0] <= w[1]));
    }
}
