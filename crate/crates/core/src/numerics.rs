//! Complex linear-algebra kernels shared by every solver.
//!
//! Matrices are `nalgebra::DMatrix<Complex64>`. Hermitian inputs are read from
//! their lower triangle by the Cholesky routines; callers that build Hermitian
//! matrices from products should pass them through [`hermitian_part`] first so
//! that rounding asymmetry does not leak into eigen-decompositions.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);

#[inline]
pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

#[inline]
pub fn real(re: f64) -> C64 {
    C64::new(re, 0.0)
}

pub fn identity(n: usize) -> CMatrix {
    CMatrix::identity(n, n)
}

pub fn zeros(rows: usize, cols: usize) -> CMatrix {
    CMatrix::zeros(rows, cols)
}

pub fn diag_real(values: &[f64]) -> CMatrix {
    let n = values.len();
    CMatrix::from_fn(n, n, |i, j| if i == j { real(values[i]) } else { ZERO })
}

/// Positive-definiteness tolerance `1e-10 * trace / dim`.
pub fn psd_tolerance(a: &CMatrix) -> f64 {
    let n = a.nrows().max(1);
    1e-10 * trace_re(a).abs() / n as f64
}

pub fn trace_re(a: &CMatrix) -> f64 {
    (0..a.nrows().min(a.ncols())).map(|i| a[(i, i)].re).sum()
}

/// `(A + A^H) / 2`.
pub fn hermitian_part(a: &CMatrix) -> CMatrix {
    (a + a.adjoint()).scale(0.5)
}

pub fn is_finite(a: &CMatrix) -> bool {
    a.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

pub fn frobenius(a: &CMatrix) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

fn check_square(a: &CMatrix, op: &'static str) -> Result<()> {
    if a.nrows() != a.ncols() {
        return Err(Error::DimensionMismatch { op, expected: "square matrix".into(), found: format!("{}x{}", a.nrows(), a.ncols()) });
    }
    Ok(())
}

fn check_finite(a: &CMatrix, op: &'static str) -> Result<()> {
    if is_finite(a) {
        Ok(())
    } else {
        Err(Error::NonFinite(op))
    }
}

/// Lower-triangular Cholesky factor `A = L L^H` of a Hermitian positive
/// definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: CMatrix,
}

impl Cholesky {
    pub fn new(a: &CMatrix) -> Result<Self> {
        check_square(a, "cholesky")?;
        check_finite(a, "cholesky")?;
        let n = a.nrows();
        let tol = psd_tolerance(a);
        let mut l = zeros(n, n);
        for j in 0..n {
            let mut d = a[(j, j)].re;
            for k in 0..j {
                d -= l[(j, k)].norm_sqr();
            }
            if !(d > tol) || d <= 0.0 {
                return Err(Error::NotPositiveDefinite { pivot: j, value: d });
            }
            let ljj = d.sqrt();
            l[(j, j)] = real(ljj);
            for i in (j + 1)..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)].conj();
                }
                l[(i, j)] = s / ljj;
            }
        }
        Ok(Self { l })
    }

    pub fn factor(&self) -> &CMatrix {
        &self.l
    }

    pub fn logdet(&self) -> f64 {
        (0..self.l.nrows()).map(|i| 2.0 * self.l[(i, i)].re.ln()).sum()
    }

    /// Solves `L Y = B` in place.
    pub fn forward(&self, b: &CMatrix) -> CMatrix {
        let n = self.l.nrows();
        let mut y = b.clone();
        for col in 0..y.ncols() {
            for i in 0..n {
                let mut s = y[(i, col)];
                for k in 0..i {
                    s -= self.l[(i, k)] * y[(k, col)];
                }
                y[(i, col)] = s / self.l[(i, i)].re;
            }
        }
        y
    }

    /// Solves `A X = B`.
    pub fn solve(&self, b: &CMatrix) -> CMatrix {
        let n = self.l.nrows();
        let mut x = self.forward(b);
        for col in 0..x.ncols() {
            for i in (0..n).rev() {
                let mut s = x[(i, col)];
                for k in (i + 1)..n {
                    s -= self.l[(k, i)].conj() * x[(k, col)];
                }
                x[(i, col)] = s / self.l[(i, i)].re;
            }
        }
        x
    }

    pub fn inverse(&self) -> CMatrix {
        let n = self.l.nrows();
        hermitian_part(&self.solve(&identity(n)))
    }
}

/// `log det A` for Hermitian positive definite `A`, via Cholesky.
pub fn logdet_hpd(a: &CMatrix) -> Result<f64> {
    Ok(Cholesky::new(a)?.logdet())
}

/// Solves `A X = B` for Hermitian positive definite `A`.
pub fn hermitian_solve(a: &CMatrix, b: &CMatrix) -> Result<CMatrix> {
    if a.nrows() != b.nrows() {
        return Err(Error::DimensionMismatch {
            op: "hermitian_solve",
            expected: format!("{} rows", a.nrows()),
            found: format!("{} rows", b.nrows()),
        });
    }
    Ok(Cholesky::new(a)?.solve(b))
}

pub fn hermitian_inverse(a: &CMatrix) -> Result<CMatrix> {
    Ok(Cholesky::new(a)?.inverse())
}

/// Kronecker product; entry `(i*B.rows + k, j*B.cols + l)` is `A[i][j] * B[k][l]`.
pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let mut out = zeros(ar * br, ac * bc);
    for i in 0..ar {
        for j in 0..ac {
            let aij = a[(i, j)];
            if aij == ZERO {
                continue;
            }
            for k in 0..br {
                for l in 0..bc {
                    out[(i * br + k, j * bc + l)] = aij * b[(k, l)];
                }
            }
        }
    }
    out
}

/// Column-stacking vectorization into a column matrix.
pub fn vec(a: &CMatrix) -> CMatrix {
    // nalgebra storage is column-major, so the raw slice is already vec(A).
    CMatrix::from_column_slice(a.len(), 1, a.as_slice())
}

/// Inverse of [`vec`].
pub fn devec(v: &CMatrix, rows: usize, cols: usize) -> Result<CMatrix> {
    if v.len() != rows * cols {
        return Err(Error::DimensionMismatch {
            op: "devec",
            expected: format!("{} entries", rows * cols),
            found: format!("{} entries", v.len()),
        });
    }
    Ok(CMatrix::from_column_slice(rows, cols, v.as_slice()))
}

/// Eigen-decomposition of the Hermitian part of `a`; eigenvalues ascending.
pub fn hermitian_eigen(a: &CMatrix) -> (DVector<f64>, CMatrix) {
    let h = hermitian_part(a);
    let eig = h.symmetric_eigen();
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| eig.eigenvalues[x].total_cmp(&eig.eigenvalues[y]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let vectors = CMatrix::from_fn(n, n, |r, col| eig.eigenvectors[(r, order[col])]);
    (values, vectors)
}

pub fn lambda_max(a: &CMatrix) -> f64 {
    let (values, _) = hermitian_eigen(a);
    values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Hermitian square root of a PSD matrix; negative eigenvalues are clamped to zero.
pub fn matrix_sqrt_psd(a: &CMatrix) -> CMatrix {
    psd_function(a, f64::sqrt)
}

/// Applies `f` to the (clamped) eigenvalues of a Hermitian PSD matrix.
pub fn psd_function(a: &CMatrix, f: impl Fn(f64) -> f64) -> CMatrix {
    let (values, q) = hermitian_eigen(a);
    let n = values.len();
    let mut scaled = q.clone();
    for j in 0..n {
        let s = f(values[j].max(0.0));
        for i in 0..n {
            scaled[(i, j)] *= s;
        }
    }
    hermitian_part(&(scaled * q.adjoint()))
}

/// `max_i sum_j |a_ij|`, an upper bound on the spectral radius.
pub fn max_abs_row_sum(a: &CMatrix) -> f64 {
    (0..a.nrows()).map(|i| (0..a.ncols()).map(|j| a[(i, j)].norm()).sum::<f64>()).fold(0.0, f64::max)
}

/// Block-diagonal assembly.
pub fn block_diag(blocks: &[CMatrix]) -> CMatrix {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = zeros(rows, cols);
    let (mut r0, mut c0) = (0, 0);
    for b in blocks {
        out.view_mut((r0, c0), b.shape()).copy_from(b);
        r0 += b.nrows();
        c0 += b.ncols();
    }
    out
}

/// Diagonal matrix of reciprocal diagonal entries (`A^‡`).
pub fn diag_reciprocal(a: &CMatrix) -> Result<CMatrix> {
    check_square(a, "diag_reciprocal")?;
    let n = a.nrows();
    let floor = 1e-14 * frobenius(a) / n.max(1) as f64;
    let mut out = zeros(n, n);
    for i in 0..n {
        let d = a[(i, i)];
        if !(d.norm() > floor) {
            return Err(Error::ZeroDiagonal { index: i });
        }
        out[(i, i)] = ONE / d;
    }
    Ok(out)
}

/// Squared Euclidean norm of all entries.
pub fn norm_sqr(a: &CMatrix) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum()
}

/// `Re{ a^H b }` summed over all entries.
pub fn real_inner(a: &CMatrix, b: &CMatrix) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x.conj() * y).re).sum()
}

/// Pairwise summation in fixed index order.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        n if n <= 8 => values.iter().sum(),
        n => {
            let (lo, hi) = values.split_at(n / 2);
            pairwise_sum(lo) + pairwise_sum(hi)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{random_hpd, random_matrix, rng};
    use proptest::prelude::*;

    fn eigen_logdet(a: &CMatrix) -> f64 {
        hermitian_eigen(a).0.iter().map(|v| v.ln()).sum()
    }

    #[test]
    fn logdet_identity_and_scaled() {
        assert_eq!(logdet_hpd(&identity(3)).unwrap(), 0.0);
        let two = identity(2).scale(2.0);
        assert!((logdet_hpd(&two).unwrap() - 2.0 * 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn logdet_matches_eigen_oracle() {
        let mut r = rng(11);
        for _ in 0..20 {
            let a = random_hpd(&mut r, 4, 0.2);
            let d = logdet_hpd(&a).unwrap() - eigen_logdet(&a);
            assert!(d.abs() < 1e-9, "{d}");
        }
    }

    #[test]
    fn logdet_product_rule_on_diagonal_pairs() {
        let a = diag_real(&[1.5, 0.3, 7.0]);
        let b = diag_real(&[2.0, 11.0, 0.01]);
        let lhs = logdet_hpd(&(&a * &b)).unwrap();
        let rhs = logdet_hpd(&a).unwrap() + logdet_hpd(&b).unwrap();
        assert!((lhs - rhs).abs() < 1e-9);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = diag_real(&[1.0, -1.0]);
        assert!(matches!(logdet_hpd(&a), Err(Error::NotPositiveDefinite { .. })));
        let z = zeros(2, 2);
        assert!(logdet_hpd(&z).is_err());
    }

    #[test]
    fn cholesky_rejects_non_finite() {
        let mut a = identity(2);
        a[(1, 1)] = c(f64::NAN, 0.0);
        assert!(matches!(logdet_hpd(&a), Err(Error::NonFinite(_))));
    }

    #[test]
    fn solve_examples() {
        let mut r = rng(3);
        let b = random_matrix(&mut r, 3, 2);
        let x = hermitian_solve(&identity(3), &b).unwrap();
        assert!(frobenius(&(x - &b)) < 1e-15);
        let a = diag_real(&[2.0, 4.0]);
        let x = hermitian_solve(&a, &identity(2)).unwrap();
        assert!(frobenius(&(x - diag_real(&[0.5, 0.25]))) < 1e-15);
    }

    #[test]
    fn solve_residual_on_random_instances() {
        let mut r = rng(5);
        for t in 0..1000 {
            let n = 1 + t % 32;
            let a = random_hpd(&mut r, n, 0.1);
            let b = random_matrix(&mut r, n, 1 + t % 3);
            let x = hermitian_solve(&a, &b).unwrap();
            let res = frobenius(&(&a * &x - &b)) / frobenius(&b);
            assert!(res < 1e-10, "dim {n}: {res}");
        }
    }

    #[test]
    fn solve_dimension_mismatch() {
        assert!(matches!(hermitian_solve(&identity(2), &zeros(3, 1)), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn kron_examples() {
        let mut r = rng(8);
        let b = random_matrix(&mut r, 2, 3);
        let k = kron(&identity(2), &b);
        assert_eq!(k, block_diag(&[b.clone(), b.clone()]));
        let a = random_matrix(&mut r, 3, 2);
        assert_eq!(kron(&a, &identity(1)), a);

        let a = random_matrix(&mut r, 2, 2);
        let b = random_matrix(&mut r, 2, 2);
        let k = kron(&a, &b);
        for i in 0..2 {
            for j in 0..2 {
                for p in 0..2 {
                    for q in 0..2 {
                        assert_eq!(k[(i * 2 + p, j * 2 + q)], a[(i, j)] * b[(p, q)]);
                    }
                }
            }
        }
    }

    #[test]
    fn vec_examples() {
        let a = CMatrix::from_row_slice(2, 2, &[real(1.0), real(3.0), real(2.0), real(4.0)]);
        let v = vec(&a);
        let expect: Vec<C64> = [1.0, 2.0, 3.0, 4.0].iter().map(|&x| real(x)).collect();
        assert_eq!(v.as_slice(), expect.as_slice());
        let one = CMatrix::from_element(1, 1, c(2.0, -1.0));
        assert_eq!(vec(&one), one);
        assert!(matches!(devec(&v, 3, 1), Err(Error::DimensionMismatch { .. })));
    }

    proptest! {
        #[test]
        fn devec_inverts_vec(rows in 1usize..=16, cols in 1usize..=16, seed in any::<u64>()) {
            let mut r = rng(seed);
            let a = random_matrix(&mut r, rows, cols);
            prop_assert_eq!(devec(&vec(&a), rows, cols).unwrap(), a);
        }
    }

    #[test]
    fn sqrt_examples() {
        assert!(frobenius(&(matrix_sqrt_psd(&identity(3)) - identity(3))) < 1e-12);
        let s = matrix_sqrt_psd(&diag_real(&[4.0, 9.0]));
        assert!(frobenius(&(s - diag_real(&[2.0, 3.0]))) < 1e-12);
        let mut r = rng(21);
        for n in 1..10 {
            // rank-deficient PSD exercises the clamping path
            let g = random_matrix(&mut r, n, (n / 2).max(1));
            let a = hermitian_part(&(&g * g.adjoint()));
            let s = matrix_sqrt_psd(&a);
            assert!(frobenius(&(&s * &s - &a)) < 1e-9 * frobenius(&a).max(1e-300));
            assert!(frobenius(&(&s - s.adjoint())) < 1e-12);
        }
    }

    #[test]
    fn row_sum_examples() {
        assert_eq!(max_abs_row_sum(&identity(5)), 1.0);
        let a = CMatrix::from_row_slice(2, 2, &[real(1.0), real(-2.0), real(3.0), c(0.0, 4.0)]);
        assert_eq!(max_abs_row_sum(&a), 7.0);
    }

    #[test]
    fn row_sum_bounds_lambda_max() {
        let mut r = rng(99);
        for t in 0..100 {
            let n = 1 + t % 12;
            let g = random_matrix(&mut r, n, n);
            let a = hermitian_part(&(&g * g.adjoint()));
            assert!(max_abs_row_sum(&a) >= lambda_max(&a) - 1e-12 * lambda_max(&a).abs());
        }
    }

    #[test]
    fn diag_reciprocal_zero_diagonal() {
        let a = CMatrix::from_row_slice(2, 2, &[real(0.0), real(1.0), real(1.0), real(2.0)]);
        assert!(matches!(diag_reciprocal(&a), Err(Error::ZeroDiagonal { index: 0 })));
    }

    #[test]
    fn pairwise_sum_matches_naive() {
        let v: Vec<f64> = (0..100).map(|i| i as f64 * 0.5).collect();
        assert!((pairwise_sum(&v) - v.iter().sum::<f64>()).abs() < 1e-9);
    }
}
