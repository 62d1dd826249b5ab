//! Small dense linear-algebra helpers shared by the mapping and the oracle.
//!
//! Everything here works on real symmetric matrices, where the exponential
//! and the norm come straight out of a symmetric eigendecomposition.

use nalgebra::{DMatrix, Matrix4, SymmetricEigen};

/// Row-major 4x4 block in the two-site basis `|++>, |+->, |-+>, |-->`.
pub type Block4 = [[f64; 4]; 4];

pub fn block_to_matrix(block: &Block4) -> Matrix4<f64> {
    Matrix4::from_fn(|r, c| block[r][c])
}

pub fn is_symmetric4(block: &Block4, tol: f64) -> bool {
    (0..4).all(|r| (0..4).all(|c| (block[r][c] - block[c][r]).abs() <= tol))
}

/// Spectral norm of a symmetric 4x4 block.
pub fn norm4(block: &Block4) -> f64 {
    let eig = SymmetricEigen::new(block_to_matrix(block));
    eig.eigenvalues.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

/// `exp(block)` for a symmetric block whose off-diagonal entries are all
/// nonnegative.
///
/// The result is computed by eigendecomposition. Entries that are exactly
/// zero in the exponential (no path between the two basis states in the
/// support graph of `block`) are forced to `0.0` so that zero-weight
/// transitions stay exactly zero; round-off on the remaining entries is
/// clamped to stay strictly positive.
pub fn expm_nonneg4(block: &Block4) -> Block4 {
    let eig = SymmetricEigen::new(block_to_matrix(block));
    let v = &eig.eigenvectors;
    let mut out = [[0.0; 4]; 4];
    let reach = reachability4(block);
    for r in 0..4 {
        for c in 0..4 {
            if !reach[r][c] {
                continue;
            }
            let mut acc = 0.0;
            for k in 0..4 {
                acc += v[(r, k)] * eig.eigenvalues[k].exp() * v[(c, k)];
            }
            out[r][c] = acc.max(f64::MIN_POSITIVE);
        }
    }
    out
}

/// Transitive closure of the off-diagonal support of a 4x4 block.
fn reachability4(block: &Block4) -> [[bool; 4]; 4] {
    let mut reach = [[false; 4]; 4];
    for (r, row) in reach.iter_mut().enumerate() {
        for (c, cell) in row.iter_mut().enumerate() {
            *cell = r == c || block[r][c] != 0.0;
        }
    }
    for k in 0..4 {
        for r in 0..4 {
            for c in 0..4 {
                if reach[r][k] && reach[k][c] {
                    reach[r][c] = true;
                }
            }
        }
    }
    reach
}

/// `exp(m)` for a dense symmetric matrix.
pub fn expm_symmetric(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let v = &eig.eigenvectors;
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(f64::exp));
    v * d * v.transpose()
}

/// Eigenvalues of a dense symmetric matrix in ascending order.
pub fn sorted_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut vals: Vec<f64> = SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .copied()
        .collect();
    vals.sort_by(f64::total_cmp);
    vals
}

/// `ln(sum(exp(xs)))` without overflow. Returns `-inf` for an empty slice or
/// when every term is `-inf`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expm_of_sigma_x_pair_matches_closed_form() {
        // x * (sx (x) I): exp = cosh(x) I + sinh(x) sx on the left site.
        let x = 0.3;
        let mut b = [[0.0; 4]; 4];
        b[0][2] = x;
        b[2][0] = x;
        b[1][3] = x;
        b[3][1] = x;
        let e = expm_nonneg4(&b);
        assert!((e[0][0] - x.cosh()).abs() < 1e-14);
        assert!((e[0][2] - x.sinh()).abs() < 1e-14);
        assert_eq!(e[0][1], 0.0);
        assert_eq!(e[0][3], 0.0);
    }

    #[test]
    fn norm_of_pauli_product_is_one() {
        let mut b = [[0.0; 4]; 4];
        for r in 0..4 {
            b[r][3 - r] = -1.0;
        }
        assert!((norm4(&b) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn log_sum_exp_handles_extremes() {
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
        assert_eq!(
            log_sum_exp(&[f64::NEG_INFINITY, f64::NEG_INFINITY]),
            f64::NEG_INFINITY
        );
        let v = log_sum_exp(&[1000.0, 1000.0]);
        assert!((v - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert!((log_sum_exp(&[0.0, f64::NEG_INFINITY]) - 0.0).abs() < 1e-15);
    }
}
