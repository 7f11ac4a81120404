//! Dense complex matrices and the SVD-based Moore–Penrose pseudoinverse.
//!
//! Every per-bin quantity in the crate (transfer matrices, covariances,
//! relative transfer matrices) is a small `ComplexMatrix`, so this module
//! favours clarity over blocking or SIMD tricks. Storage and products come
//! from `nalgebra`; the SVD is a one-sided Jacobi iteration, which keeps
//! its accuracy on the exactly rank-deficient matrices that covariance
//! subtraction produces.

use std::fmt;

use nalgebra::{DMatrix, DVector};
pub use num_complex::Complex64;

use crate::error::{Error, Result};

/// Jacobi sweeps before the SVD is declared non-convergent. Small
/// matrices typically need fewer than ten.
const SVD_MAX_SWEEPS: usize = 60;

/// A dense complex matrix in double precision.
#[derive(Clone, PartialEq)]
pub struct ComplexMatrix {
    data: DMatrix<Complex64>,
}

impl fmt::Debug for ComplexMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ComplexMatrix {}x{} ", self.rows(), self.cols())?;
        f.debug_list()
            .entries((0..self.rows()).map(|i| {
                (0..self.cols())
                    .map(|j| self.data[(i, j)])
                    .collect::<Vec<_>>()
            }))
            .finish()
    }
}

impl ComplexMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            data: DMatrix::zeros(rows, cols),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            data: DMatrix::identity(n, n),
        }
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl FnMut(usize, usize) -> Complex64) -> Self {
        Self {
            data: DMatrix::from_fn(rows, cols, f),
        }
    }

    /// Builds a matrix from entries listed row by row.
    pub fn from_row_slice(rows: usize, cols: usize, entries: &[Complex64]) -> Result<Self> {
        if entries.len() != rows * cols {
            return Err(Error::contract(format!(
                "{} entries cannot fill a {rows}x{cols} matrix",
                entries.len()
            )));
        }
        Ok(Self {
            data: DMatrix::from_row_slice(rows, cols, entries),
        })
    }

    /// Real-valued convenience constructor, row major.
    pub fn from_real_rows(rows: &[&[f64]]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::contract("ragged rows"));
        }
        Ok(Self::from_fn(r, c, |i, j| Complex64::new(rows[i][j], 0.0)))
    }

    pub fn from_diagonal(diag: &[Complex64]) -> Self {
        Self {
            data: DMatrix::from_diagonal(&DVector::from_column_slice(diag)),
        }
    }

    /// Stacks equal-length column vectors side by side.
    pub fn from_columns(columns: &[Vec<Complex64>]) -> Result<Self> {
        let rows = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != rows) {
            return Err(Error::contract("columns differ in length"));
        }
        Ok(Self::from_fn(rows, columns.len(), |i, j| columns[j][i]))
    }

    pub(crate) fn from_nalgebra(data: DMatrix<Complex64>) -> Self {
        Self { data }
    }

    pub fn rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn cols(&self) -> usize {
        self.data.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.data.shape()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.data[(row, col)]
    }

    pub fn set(&mut self, row: usize, col: usize, value: Complex64) {
        self.data[(row, col)] = value;
    }

    pub fn column(&self, col: usize) -> Vec<Complex64> {
        self.data.column(col).iter().copied().collect()
    }

    /// Sub-matrix made of the given columns, in the given order.
    pub fn select_columns(&self, cols: &[usize]) -> Self {
        Self {
            data: self.data.select_columns(cols),
        }
    }

    /// Sub-matrix made of the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            data: self.data.select_rows(rows),
        }
    }

    /// Entries in row-major order.
    pub fn to_row_major(&self) -> Vec<Complex64> {
        self.data.transpose().as_slice().to_vec()
    }

    pub fn as_nalgebra(&self) -> &DMatrix<Complex64> {
        &self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn trace(&self) -> Complex64 {
        self.data.diagonal().iter().sum()
    }

    pub fn conj_transpose(&self) -> Self {
        conj_transpose(self)
    }

    pub fn scale(&self, alpha: Complex64) -> Self {
        Self {
            data: &self.data * alpha,
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other, "add")?;
        Ok(Self {
            data: &self.data + &other.data,
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other, "subtract")?;
        Ok(Self {
            data: &self.data - &other.data,
        })
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        matmul(self, other)
    }

    /// Matrix-vector product; `x.len()` must equal `cols`.
    pub fn apply(&self, x: &[Complex64]) -> Result<Vec<Complex64>> {
        if x.len() != self.cols() {
            return Err(Error::contract(format!(
                "cannot apply {}x{} matrix to vector of length {}",
                self.rows(),
                self.cols(),
                x.len()
            )));
        }
        Ok((0..self.rows())
            .map(|i| (0..self.cols()).map(|j| self.data[(i, j)] * x[j]).sum())
            .collect())
    }

    /// `(M + M^H) / 2`. The result is bit-exactly Hermitian because complex
    /// addition is commutative in IEEE arithmetic.
    pub fn hermitian_part(&self) -> Result<Self> {
        if self.rows() != self.cols() {
            return Err(Error::contract(format!(
                "hermitian part of non-square {}x{} matrix",
                self.rows(),
                self.cols()
            )));
        }
        let n = self.rows();
        Ok(Self::from_fn(n, n, |i, j| {
            (self.data[(i, j)] + self.data[(j, i)].conj()) * 0.5
        }))
    }

    pub fn is_hermitian(&self) -> bool {
        self.rows() == self.cols() && *self == self.conj_transpose()
    }

    /// Eigenvalues of a Hermitian matrix in ascending order.
    pub fn hermitian_eigenvalues(&self) -> Result<Vec<f64>> {
        let h = self.hermitian_part()?;
        let mut values: Vec<f64> = h.data.symmetric_eigenvalues().iter().copied().collect();
        values.sort_by(f64::total_cmp);
        Ok(values)
    }

    /// Singular values in descending order.
    pub fn singular_values(&self) -> Vec<f64> {
        if self.is_empty() {
            return Vec::new();
        }
        jacobi_svd(&self.data).sigma
    }

    fn check_same_shape(&self, other: &Self, what: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::contract(format!(
                "cannot {what} {}x{} and {}x{} matrices",
                self.rows(),
                self.cols(),
                other.rows(),
                other.cols()
            )));
        }
        Ok(())
    }
}

/// Exact complex matrix product `a * b`.
pub fn matmul(a: &ComplexMatrix, b: &ComplexMatrix) -> Result<ComplexMatrix> {
    if a.cols() != b.rows() {
        return Err(Error::contract(format!(
            "matmul shape mismatch: {}x{} times {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    Ok(ComplexMatrix {
        data: &a.data * &b.data,
    })
}

pub fn conj_transpose(m: &ComplexMatrix) -> ComplexMatrix {
    ComplexMatrix {
        data: m.data.adjoint(),
    }
}

/// Standard rank-revealing cutoff: `max(rows, cols) * eps`, relative to the
/// largest singular value.
pub fn default_tolerance(rows: usize, cols: usize) -> f64 {
    rows.max(cols) as f64 * f64::EPSILON
}

/// Moore–Penrose pseudoinverse.
///
/// Singular values below `rel_tolerance * sigma_max` are treated as zero.
/// Passing `None` selects [`default_tolerance`].
pub fn pseudoinverse(m: &ComplexMatrix, rel_tolerance: Option<f64>) -> Result<ComplexMatrix> {
    if m.is_empty() {
        return Err(Error::contract("pseudoinverse of an empty matrix"));
    }
    let tol = rel_tolerance.unwrap_or_else(|| default_tolerance(m.rows(), m.cols()));
    if !tol.is_finite() || tol < 0.0 {
        return Err(Error::contract(format!("invalid pseudoinverse tolerance {tol}")));
    }
    let what = || format!("pseudoinverse of {}x{} matrix", m.rows(), m.cols());
    if !m.is_finite() {
        return Err(Error::numerical(what(), "non-finite input entries"));
    }

    let svd = jacobi_svd(&m.data);
    if !svd.converged {
        return Err(Error::numerical(what(), "SVD did not converge"));
    }
    let cutoff = tol * svd.sigma.first().copied().unwrap_or(0.0);
    // M = U S V^H  =>  M+ = V S+ U^H
    let mut v_scaled = svd.v.clone();
    for (k, &sigma) in svd.sigma.iter().enumerate() {
        let inv = if sigma > cutoff && sigma > 0.0 { 1.0 / sigma } else { 0.0 };
        v_scaled.column_mut(k).scale_mut(inv);
    }
    let pinv = v_scaled * svd.u.adjoint();
    let out = ComplexMatrix::from_nalgebra(pinv);
    if !out.is_finite() {
        return Err(Error::numerical(what(), "non-finite result"));
    }
    Ok(out)
}

/// Thin SVD `m = u diag(sigma) v^H` with `sigma` descending.
struct Svd {
    sigma: Vec<f64>,
    u: DMatrix<Complex64>,
    v: DMatrix<Complex64>,
    converged: bool,
}

/// One-sided (Hestenes) Jacobi SVD: rotate column pairs of `m` until all
/// are mutually orthogonal; the column norms are then the singular values.
fn jacobi_svd(m: &DMatrix<Complex64>) -> Svd {
    if m.nrows() < m.ncols() {
        let t = jacobi_svd(&m.adjoint());
        return Svd { sigma: t.sigma, u: t.v, v: t.u, converged: t.converged };
    }
    let n = m.ncols();
    let mut a = m.clone();
    let mut v = DMatrix::<Complex64>::identity(n, n);
    let mut converged = false;
    for _ in 0..SVD_MAX_SWEEPS {
        let mut rotated = false;
        for i in 0..n {
            for j in i + 1..n {
                let alpha = a.column(i).norm_squared();
                let beta = a.column(j).norm_squared();
                let gamma = a.column(i).dotc(&a.column(j));
                let g = gamma.norm();
                if g == 0.0 || g <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                // phase-align column j so the pair's inner product is real,
                // then apply the real rotation that zeroes it
                let phase = gamma / g;
                let zeta = (beta - alpha) / (2.0 * g);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for mat in [&mut a, &mut v] {
                    for r in 0..mat.nrows() {
                        let x = mat[(r, i)];
                        let y = mat[(r, j)] * phase.conj();
                        mat[(r, i)] = x * c - y * s;
                        mat[(r, j)] = x * s + y * c;
                    }
                }
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }

    let norms: Vec<f64> = (0..n).map(|k| a.column(k).norm()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| norms[y].total_cmp(&norms[x]));
    let mut u = DMatrix::<Complex64>::zeros(a.nrows(), n);
    let mut v_sorted = DMatrix::<Complex64>::zeros(n, n);
    let mut sigma = Vec::with_capacity(n);
    for (dst, &src) in order.iter().enumerate() {
        let s = norms[src];
        if s > 0.0 {
            u.set_column(dst, &(a.column(src) / Complex64::new(s, 0.0)));
        }
        v_sorted.set_column(dst, &v.column(src));
        sigma.push(s);
    }
    Svd { sigma, u, v: v_sorted, converged }
}

/// `||a - b||_F / ||b||_F`, or the absolute difference norm when `b` is zero.
pub fn relative_difference(a: &ComplexMatrix, b: &ComplexMatrix) -> Result<f64> {
    let diff = a.sub(b)?.frobenius_norm();
    let scale = b.frobenius_norm();
    Ok(if scale > 0.0 { diff / scale } else { diff })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> ComplexMatrix {
        ComplexMatrix::from_fn(rows, cols, |_, _| {
            c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        })
    }

    fn naive_product(a: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
        let mut out = ComplexMatrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut acc = Complex64::new(0.0, 0.0);
                for k in 0..a.cols() {
                    acc += a.get(i, k) * b.get(k, j);
                }
                out.set(i, j, acc);
            }
        }
        out
    }

    #[test]
    fn pinv_identity() {
        let i3 = ComplexMatrix::identity(3);
        let p = pseudoinverse(&i3, None).unwrap();
        assert!(relative_difference(&p, &i3).unwrap() < 1e-15);
    }

    #[test]
    fn pinv_rank_deficient_diagonal() {
        let m = ComplexMatrix::from_diagonal(&[c(2.0, 0.0), c(0.0, 0.0)]);
        let p = pseudoinverse(&m, None).unwrap();
        let want = ComplexMatrix::from_diagonal(&[c(0.5, 0.0), c(0.0, 0.0)]);
        assert!((p.sub(&want).unwrap()).frobenius_norm() < 1e-15);
    }

    #[test]
    fn pinv_wide_random_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = random(4, 6, &mut rng);
        let p = pseudoinverse(&m, None).unwrap();
        assert_eq!(p.shape(), (6, 4));
        let mpm = m.matmul(&p).unwrap().matmul(&m).unwrap();
        assert!(relative_difference(&mpm, &m).unwrap() < 1e-12);
    }

    #[test]
    fn pinv_tolerance_truncates_small_singular_values() {
        let m = ComplexMatrix::from_diagonal(&[c(1.0, 0.0), c(1e-9, 0.0)]);
        let kept = pseudoinverse(&m, None).unwrap();
        assert!((kept.get(1, 1).re - 1e9).abs() < 1.0);
        let cut = pseudoinverse(&m, Some(1e-6)).unwrap();
        assert_eq!(cut.get(1, 1), c(0.0, 0.0));
    }

    #[test]
    fn pinv_rejects_empty_and_bad_tolerance() {
        assert!(matches!(
            pseudoinverse(&ComplexMatrix::zeros(0, 3), None),
            Err(Error::Contract(_))
        ));
        assert!(matches!(
            pseudoinverse(&ComplexMatrix::identity(2), Some(-1.0)),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn pinv_non_finite_is_numerical_failure() {
        let mut m = ComplexMatrix::identity(2);
        m.set(0, 1, c(f64::NAN, 0.0));
        let err = pseudoinverse(&m, None).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn pinv_of_zero_is_zero() {
        let p = pseudoinverse(&ComplexMatrix::zeros(2, 3), None).unwrap();
        assert_eq!(p, ComplexMatrix::zeros(3, 2));
    }

    #[test]
    fn matmul_identity_and_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random(3, 4, &mut rng);
        assert_eq!(a.matmul(&ComplexMatrix::identity(4)).unwrap(), a);

        let swap = ComplexMatrix::from_real_rows(&[&[0.0, 1.0], &[1.0, 0.0]]).unwrap();
        let v = ComplexMatrix::from_row_slice(2, 1, &[c(1.0, 2.0), c(3.0, -4.0)]).unwrap();
        let out = swap.matmul(&v).unwrap();
        assert_eq!(out.get(0, 0), c(3.0, -4.0));
        assert_eq!(out.get(1, 0), c(1.0, 2.0));
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = random(3, 3, &mut rng);
        let b = random(3, 3, &mut rng);
        let fast = a.matmul(&b).unwrap();
        let slow = naive_product(&a, &b);
        for i in 0..3 {
            for j in 0..3 {
                assert!((fast.get(i, j) - slow.get(i, j)).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let err = matmul(&ComplexMatrix::zeros(2, 3), &ComplexMatrix::zeros(2, 3)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("2x3 times 2x3"), "{msg}");
    }

    #[test]
    fn conj_transpose_cases() {
        let sym = ComplexMatrix::from_real_rows(&[&[1.0, 2.0], &[2.0, 5.0]]).unwrap();
        assert_eq!(sym.conj_transpose(), sym);

        let i = ComplexMatrix::from_row_slice(1, 1, &[c(0.0, 1.0)]).unwrap();
        assert_eq!(i.conj_transpose().get(0, 0), c(0.0, -1.0));

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = random(3, 5, &mut rng);
        let t = m.conj_transpose();
        assert_eq!(t.get(4, 1), m.get(1, 4).conj());
        assert_eq!(t.conj_transpose(), m);
    }

    #[test]
    fn hermitian_part_is_exactly_hermitian() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = random(5, 5, &mut rng);
        let h = m.hermitian_part().unwrap();
        assert!(h.is_hermitian());
        assert!(m.hermitian_part().is_ok());
        assert!(random(2, 3, &mut rng).hermitian_part().is_err());
    }

    #[test]
    fn from_row_slice_checks_length() {
        assert!(ComplexMatrix::from_row_slice(2, 2, &[c(1.0, 0.0)]).is_err());
        let m = ComplexMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(2.0, 0.0), c(3.0, 0.0), c(4.0, 0.0)]).unwrap();
        assert_eq!(m.get(0, 1), c(2.0, 0.0));
        assert_eq!(m.to_row_major()[2], c(3.0, 0.0));
    }
}
