//! Small dense linear algebra helpers (row-major `Vec<f64>` matrices).

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Eigen-decomposition of a symmetric `n × n` matrix by cyclic Jacobi sweeps.
///
/// Returns eigenvalues in descending order and the matching eigenvectors as
/// the rows of a row-major `n × n` matrix.
pub fn symmetric_eigen(a: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(a.len(), n * n, "matrix must be n × n");
    let mut a = a.to_vec();
    // v holds eigenvectors as columns while iterating.
    let mut v = vec![0.0; n * n];
    for k in 0..n {
        v[k * n + k] = 1.0;
    }
    let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[p * n + q] * a[p * n + q];
            }
        }
        if off.sqrt() <= 1e-15 * scale.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| a[y * n + y].total_cmp(&a[x * n + x]));
    let values = order.iter().map(|&k| a[k * n + k]).collect();
    let mut vectors = vec![0.0; n * n];
    for (row, &k) in order.iter().enumerate() {
        for r in 0..n {
            vectors[row * n + r] = v[r * n + k];
        }
    }
    (values, vectors)
}

/// Orthonormalizes the columns of a `rows × cols` row-major matrix in place
/// (modified Gram-Schmidt). Columns that become numerically zero are zeroed
/// and reported as `false`.
pub fn orthonormalize_columns(m: &mut [f64], rows: usize, cols: usize) -> Vec<bool> {
    let mut ok = vec![true; cols];
    let mut norms0 = vec![0.0; cols];
    for c in 0..cols {
        norms0[c] = (0..rows).map(|r| m[r * cols + c].powi(2)).sum::<f64>().sqrt();
    }
    for c in 0..cols {
        for prev in 0..c {
            if !ok[prev] {
                continue;
            }
            let proj: f64 = (0..rows).map(|r| m[r * cols + c] * m[r * cols + prev]).sum();
            for r in 0..rows {
                m[r * cols + c] -= proj * m[r * cols + prev];
            }
        }
        let norm = (0..rows).map(|r| m[r * cols + c].powi(2)).sum::<f64>().sqrt();
        if norm <= 1e-12 * norms0[c].max(f64::MIN_POSITIVE) || norm == 0.0 {
            ok[c] = false;
            for r in 0..rows {
                m[r * cols + c] = 0.0;
            }
        } else {
            for r in 0..rows {
                m[r * cols + c] /= norm;
            }
        }
    }
    ok
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jacobi_reconstructs_matrix() {
        let a = [4.0, 1.0, 2.0, 1.0, 3.0, 0.5, 2.0, 0.5, 1.0];
        let (vals, vecs) = symmetric_eigen(&a, 3);
        assert!(vals[0] >= vals[1] && vals[1] >= vals[2]);
        for r in 0..3 {
            for c in 0..3 {
                let rec: f64 = (0..3).map(|k| vals[k] * vecs[k * 3 + r] * vecs[k * 3 + c]).sum();
                assert!((rec - a[r * 3 + c]).abs() < 1e-10);
            }
        }
        let trace: f64 = vals.iter().sum();
        assert!((trace - 8.0).abs() < 1e-12);
    }

    #[test]
    fn jacobi_diagonal_and_degenerate() {
        let (vals, _) = symmetric_eigen(&[2.0, 0.0, 0.0, 5.0], 2);
        assert_eq!(vals, vec![5.0, 2.0]);
        let (vals, vecs) = symmetric_eigen(&[1.0, 1.0, 1.0, 1.0], 2);
        assert!((vals[0] - 2.0).abs() < 1e-12 && vals[1].abs() < 1e-12);
        assert!((vecs[0].abs() - 0.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn gram_schmidt_flags_dependent_columns() {
        // Columns (1,0,0), (2,0,0), (0,1,1).
        let mut m = vec![1.0, 2.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0];
        let ok = orthonormalize_columns(&mut m, 3, 3);
        assert_eq!(ok, vec![true, false, true]);
        let c2: Vec<f64> = (0..3).map(|r| m[r * 3 + 2]).collect();
        assert!((dot(&c2, &c2) - 1.0).abs() < 1e-12);
    }
}
