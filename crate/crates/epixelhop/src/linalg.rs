//! Small dense linear algebra: symmetric eigendecomposition and helpers.
//!
//! The transform kernels in this crate come from covariances that are at most
//! 25x25, so a cyclic Jacobi solver is accurate, dependency-free and, unlike
//! LAPACK backends, bit-reproducible across machines and thread counts.

use ndarray::{Array1, Array2};

/// Eigendecomposition of a symmetric matrix, eigenvalues descending.
#[derive(Debug, Clone)]
pub struct SymEigen {
    /// Eigenvalues, sorted descending, tiny negatives clamped to zero.
    pub values: Array1<f64>,
    /// Eigenvectors as rows, matching `values`, each with the fixed sign
    /// convention: the entry of largest magnitude is positive.
    pub vectors: Array2<f64>,
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
///
/// Panics if the input is not square. Symmetry is assumed; only the upper
/// triangle drives the rotations.
pub fn sym_eigen(mat: &Array2<f64>) -> SymEigen {
    let n = mat.nrows();
    assert_eq!(n, mat.ncols(), "sym_eigen needs a square matrix");

    let mut a = mat.clone();
    let mut v = Array2::<f64>::eye(n);

    let frob: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let tol = (frob * 1e-15).max(f64::MIN_POSITIVE);

    for _sweep in 0..100 {
        let off: f64 = {
            let mut s = 0.0;
            for p in 0..n {
                for q in (p + 1)..n {
                    s += a[[p, q]] * a[[p, q]];
                }
            }
            s.sqrt()
        };
        if off <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[[p, q]];
                if apq.abs() <= tol / (n as f64) {
                    continue;
                }
                let app = a[[p, p]];
                let aqq = a[[q, q]];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    1.0 / (theta - (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;

                for k in 0..n {
                    let akp = a[[k, p]];
                    let akq = a[[k, q]];
                    a[[k, p]] = c * akp - s * akq;
                    a[[k, q]] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[[p, k]];
                    let aqk = a[[q, k]];
                    a[[p, k]] = c * apk - s * aqk;
                    a[[q, k]] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }

    // Sort descending by eigenvalue; stable tie-break on original column index.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[[j, j]].partial_cmp(&a[[i, i]]).unwrap().then(i.cmp(&j)));

    let mut values = Array1::<f64>::zeros(n);
    let mut vectors = Array2::<f64>::zeros((n, n));
    for (row, &src) in order.iter().enumerate() {
        values[row] = a[[src, src]].max(0.0);
        for k in 0..n {
            vectors[[row, k]] = v[[k, src]];
        }
    }
    for mut row in vectors.rows_mut() {
        fix_sign(row.as_slice_mut().unwrap());
    }
    SymEigen { values, vectors }
}

/// Flip a vector in place so its largest-magnitude entry is positive.
pub fn fix_sign(v: &mut [f64]) {
    let mut best = 0usize;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        for x in v.iter_mut() {
            *x = -*x;
        }
    }
}

/// Orthonormal basis of the complement of the constant direction in R^n,
/// returned as an (n-1) x n matrix of rows. Built from the Householder
/// reflection mapping e1 to 1/sqrt(n), so every row is exactly orthogonal
/// to the constant vector.
pub fn constant_complement_basis(n: usize) -> Array2<f64> {
    assert!(n >= 2);
    let u = 1.0 / (n as f64).sqrt();
    // v = u_vec - e1, H = I - 2 v v^T / (v^T v); columns 1..n of H span 1^perp.
    let mut v = vec![u; n];
    v[0] -= 1.0;
    let vtv: f64 = v.iter().map(|x| x * x).sum();
    let mut basis = Array2::<f64>::zeros((n - 1, n));
    for col in 1..n {
        for k in 0..n {
            let e = if k == col { 1.0 } else { 0.0 };
            basis[[col - 1, k]] = e - 2.0 * v[k] * v[col] / vtv;
        }
    }
    basis
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} != {b} (tol {tol})");
    }

    #[test]
    fn diagonal_matrix() {
        let m = array![[3.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 2.0]];
        let e = sym_eigen(&m);
        assert_close(e.values[0], 3.0, 1e-12);
        assert_close(e.values[1], 2.0, 1e-12);
        assert_close(e.values[2], 1.0, 1e-12);
        assert_close(e.vectors[[0, 0]].abs(), 1.0, 1e-12);
    }

    #[test]
    fn known_2x2() {
        // [[2,1],[1,2]] has eigenvalues 3 and 1 with vectors (1,1)/sqrt2, (1,-1)/sqrt2.
        let m = array![[2.0, 1.0], [1.0, 2.0]];
        let e = sym_eigen(&m);
        assert_close(e.values[0], 3.0, 1e-12);
        assert_close(e.values[1], 1.0, 1e-12);
        let s = 1.0 / 2f64.sqrt();
        assert_close(e.vectors[[0, 0]], s, 1e-10);
        assert_close(e.vectors[[0, 1]], s, 1e-10);
    }

    #[test]
    fn reconstructs_random_psd() {
        let mut rng = crate::rng::DetRng::new(11, 0);
        let n = 9;
        // m = X^T X is symmetric positive semidefinite.
        let mut x = Array2::<f64>::zeros((2 * n, n));
        for v in x.iter_mut() {
            *v = rng.next_f64() - 0.5;
        }
        let m = x.t().dot(&x);
        let e = sym_eigen(&m);
        // Orthonormality of rows.
        for i in 0..n {
            for j in 0..n {
                let dot: f64 = (0..n).map(|k| e.vectors[[i, k]] * e.vectors[[j, k]]).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                assert_close(dot, expect, 1e-10);
            }
        }
        // V^T diag(values) V reproduces m.
        for i in 0..n {
            for j in 0..n {
                let rebuilt: f64 = (0..n)
                    .map(|r| e.values[r] * e.vectors[[r, i]] * e.vectors[[r, j]])
                    .sum();
                assert_close(rebuilt, m[[i, j]], 1e-9);
            }
        }
        // Descending order.
        for r in 1..n {
            assert!(e.values[r - 1] >= e.values[r] - 1e-12);
        }
    }

    #[test]
    fn complement_basis_orthogonal_to_constant() {
        for n in [4usize, 9, 25] {
            let b = constant_complement_basis(n);
            for r in 0..(n - 1) {
                let dot: f64 = (0..n).map(|k| b[[r, k]]).sum();
                assert_close(dot, 0.0, 1e-12);
                for r2 in 0..(n - 1) {
                    let d: f64 = (0..n).map(|k| b[[r, k]] * b[[r2, k]]).sum();
                    let expect = if r == r2 { 1.0 } else { 0.0 };
                    assert_close(d, expect, 1e-12);
                }
            }
        }
    }
}
