//! Singular values by one-sided Jacobi rotations.

const JACOBI_TOL: f64 = 1e-12;
const MAX_SWEEPS: usize = 60;

/// Singular values of a row-major `rows x cols` matrix, in descending order.
///
/// Columns are orthogonalized pairwise until every pair is orthogonal to
/// within `1e-12` relative to their norms; the column norms are then the
/// singular values. The iteration order is fixed, so the result is
/// bit-for-bit reproducible.
pub fn singular_values(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    assert_eq!(a.len(), rows * cols, "matrix buffer has the wrong length");
    // Work on whichever orientation has fewer columns.
    let (m, n, mut columns) = if cols <= rows {
        let cols_vec = (0..cols).map(|c| (0..rows).map(|r| a[r * cols + c]).collect::<Vec<_>>()).collect::<Vec<_>>();
        (rows, cols, cols_vec)
    } else {
        let rows_vec = (0..rows).map(|r| a[r * cols..(r + 1) * cols].to_vec()).collect::<Vec<_>>();
        (cols, rows, rows_vec)
    };
    debug_assert!(columns.iter().all(|c| c.len() == m));

    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for i in 0..n {
            for j in (i + 1)..n {
                let (alpha, beta, gamma) = {
                    let (ci, cj) = (&columns[i], &columns[j]);
                    let mut alpha = 0.0;
                    let mut beta = 0.0;
                    let mut gamma = 0.0;
                    for k in 0..m {
                        alpha += ci[k] * ci[k];
                        beta += cj[k] * cj[k];
                        gamma += ci[k] * cj[k];
                    }
                    (alpha, beta, gamma)
                };
                if gamma == 0.0 || gamma.abs() <= JACOBI_TOL * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let (left, right) = columns.split_at_mut(j);
                let (ci, cj) = (&mut left[i], &mut right[0]);
                for k in 0..m {
                    let x = ci[k];
                    let y = cj[k];
                    ci[k] = c * x - s * y;
                    cj[k] = s * x + c * y;
                }
            }
        }
        if !rotated {
            break;
        }
    }

    let mut sv: Vec<f64> = columns.iter().map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}
