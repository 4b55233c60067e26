//! Independent numerical oracles for the acceptance suite. Everything here
//! is deliberately implemented from first principles — no code shared with
//! the library paths under test.

use eigenfk::linalg::Mat;

/// Eigenvalues of a dense symmetric matrix by the cyclic Jacobi method,
/// returned in ascending order.
///
/// Jacobi rotations converge quadratically on symmetric matrices and every
/// step is elementwise-explicit, which makes this a good independent check
/// for the library's implicit-shift tridiagonal solver: the two algorithms
/// share no machinery at all.
pub fn jacobi_eigenvalues(a: &Mat) -> Vec<f64> {
    let n = a.rows();
    assert_eq!(n, a.cols(), "matrix must be square");
    let mut m: Vec<Vec<f64>> = (0..n).map(|i| a.row(i).to_vec()).collect();
    let frob: f64 = m.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
    let stop = (frob * 1e-15).max(f64::MIN_POSITIVE);

    for _sweep in 0..60 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += m[i][j] * m[i][j];
            }
        }
        if off.sqrt() <= stop {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if m[p][q] == 0.0 {
                    continue;
                }
                // Rotation angle that zeroes m[p][q], in the numerically
                // stable tangent form.
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let sign = if theta >= 0.0 { 1.0 } else { -1.0 };
                let t = sign / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (m[k][p], m[k][q]);
                    m[k][p] = c * akp - s * akq;
                    m[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (m[p][k], m[q][k]);
                    m[p][k] = c * apk - s * aqk;
                    m[q][k] = s * apk + c * aqk;
                }
            }
        }
    }

    let mut ev: Vec<f64> = (0..n).map(|i| m[i][i]).collect();
    ev.sort_by(|x, y| x.partial_cmp(y).unwrap());
    ev
}

/// Dense symmetric tridiagonal matrix from its diagonals.
pub fn dense_tridiagonal(diag: &[f64], offdiag: &[f64]) -> Mat {
    let n = diag.len();
    assert_eq!(offdiag.len() + 1, n);
    Mat::from_fn(n, n, |i, j| {
        if i == j {
            diag[i]
        } else if j == i + 1 {
            offdiag[i]
        } else if i == j + 1 {
            offdiag[j]
        } else {
            0.0
        }
    })
}
