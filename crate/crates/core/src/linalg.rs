//! Dense complex matrix helpers shared by every module.
//!
//! Everything here works on `nalgebra::DMatrix<Complex64>`; the Hermitian
//! eigensolver is nalgebra's `SymmetricEigen`, which handles complex
//! Hermitian input directly.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;

use crate::error::{Error, Result};

pub use nalgebra::Complex;
pub type C64 = Complex<f64>;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;
pub type RMat = DMatrix<f64>;

const EIG_EPS: f64 = 1e-15;
const EIG_MAX_ITER: usize = 0;

#[inline]
pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

#[inline]
pub fn cr(re: f64) -> C64 {
    C64::new(re, 0.0)
}

pub fn identity(n: usize) -> CMat {
    CMat::identity(n, n)
}

pub fn zeros(n: usize) -> CMat {
    CMat::zeros(n, n)
}

pub fn max_abs(m: &CMat) -> f64 {
    m.iter().fold(0.0_f64, |acc, z| acc.max(z.norm()))
}

/// Largest entrywise distance between `a` and `b`.
pub fn max_diff(a: &CMat, b: &CMat) -> f64 {
    a.iter()
        .zip(b.iter())
        .fold(0.0_f64, |acc, (x, y)| acc.max((x - y).norm()))
}

pub fn hermitian_deviation(m: &CMat) -> f64 {
    max_diff(m, &m.adjoint())
}

pub fn frobenius_sq(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum()
}

pub fn trace(m: &CMat) -> C64 {
    m.diagonal().iter().sum()
}

pub fn commutator(a: &CMat, b: &CMat) -> CMat {
    a * b - b * a
}

pub fn is_finite(m: &CMat) -> bool {
    m.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

/// Eigendecomposition of a Hermitian matrix, eigenvalues ascending.
pub fn eigh(m: &CMat) -> Result<(Vec<f64>, CMat)> {
    let dim = m.nrows();
    if dim == 0 {
        return Ok((Vec::new(), CMat::zeros(0, 0)));
    }
    let sym = (m + m.adjoint()) * cr(0.5);
    let eig = SymmetricEigen::try_new(sym, EIG_EPS, EIG_MAX_ITER).ok_or(Error::NonConvergence {
        dim,
        max_entry: max_abs(m),
    })?;
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = CMat::from_fn(dim, dim, |r, k| eig.eigenvectors[(r, order[k])]);
    Ok((values, vectors))
}

/// Eigendecomposition of a real symmetric matrix, eigenvalues ascending.
pub fn eigh_real(m: &RMat) -> Result<(Vec<f64>, RMat)> {
    let dim = m.nrows();
    if dim == 0 {
        return Ok((Vec::new(), RMat::zeros(0, 0)));
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::try_new(sym, EIG_EPS, EIG_MAX_ITER).ok_or(Error::NonConvergence {
        dim,
        max_entry: m.amax(),
    })?;
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = RMat::from_fn(dim, dim, |r, k| eig.eigenvectors[(r, order[k])]);
    Ok((values, vectors))
}

/// `V diag(values) V^dag`.
pub fn from_eigen(values: &[f64], vectors: &CMat) -> CMat {
    let mut scaled = vectors.clone();
    for (k, &v) in values.iter().enumerate() {
        for z in scaled.column_mut(k).iter_mut() {
            *z *= v;
        }
    }
    &scaled * vectors.adjoint()
}

/// Square root of a Hermitian positive semidefinite matrix.
///
/// Eigenvalues below zero are clamped to 0; the clamp only ever removes
/// floating-point drift of size ~1e-12 relative to the largest eigenvalue.
pub fn psd_sqrt(m: &CMat) -> Result<CMat> {
    let (values, vectors) = eigh(m)?;
    let roots: Vec<f64> = values.iter().map(|&v| v.max(0.0).sqrt()).collect();
    Ok(from_eigen(&roots, &vectors))
}

/// Operator norm of a Hermitian matrix.
pub fn hermitian_norm(m: &CMat) -> Result<f64> {
    let (values, _) = eigh(m)?;
    Ok(values.iter().fold(0.0_f64, |acc, v| acc.max(v.abs())))
}

/// Orthonormal basis (as columns) of the complement of the unit vector `v`.
///
/// Built from the Householder reflector that maps `v` onto a multiple of
/// the first coordinate axis; columns `1..d` of that reflector span `v`'s
/// orthogonal complement.
pub fn complement_basis(v: &CVec) -> CMat {
    let d = v.len();
    let phase = if v[0].norm() > 0.0 { v[0] / v[0].norm() } else { cr(1.0) };
    let mut w = v.clone();
    w[0] += phase * v.norm();
    let wn = w.norm_squared();
    let reflector = if wn == 0.0 {
        identity(d)
    } else {
        identity(d) - (&w * w.adjoint()) * cr(2.0 / wn)
    };
    reflector.columns(1, d - 1).into_owned()
}

/// Smallest eigenvalue of Hermitian `m` on the orthogonal complement of unit `v`.
///
/// Returns `None` when the complement is empty. The eigenvector is expressed
/// in the original coordinates.
pub fn deflated_min_eig(m: &CMat, v: &CVec) -> Result<Option<(f64, CVec)>> {
    if m.nrows() <= 1 {
        return Ok(None);
    }
    let basis = complement_basis(v);
    let reduced = basis.adjoint() * m * &basis;
    let (values, vectors) = eigh(&reduced)?;
    let x = &basis * vectors.column(0);
    Ok(Some((values[0], x)))
}

/// Real counterpart of [`complement_basis`].
pub fn complement_basis_real(v: &DVector<f64>) -> RMat {
    let d = v.len();
    let sign = if v[0] >= 0.0 { 1.0 } else { -1.0 };
    let mut w = v.clone();
    w[0] += sign * v.norm();
    let wn = w.norm_squared();
    let reflector = if wn == 0.0 {
        RMat::identity(d, d)
    } else {
        RMat::identity(d, d) - (&w * w.transpose()) * (2.0 / wn)
    };
    reflector.columns(1, d - 1).into_owned()
}

pub fn deflated_min_eig_real(m: &RMat, v: &DVector<f64>) -> Result<Option<(f64, DVector<f64>)>> {
    if m.nrows() <= 1 {
        return Ok(None);
    }
    let basis = complement_basis_real(v);
    let reduced = basis.transpose() * m * &basis;
    let (values, vectors) = eigh_real(&reduced)?;
    let x = &basis * vectors.column(0);
    Ok(Some((values[0], x)))
}

/// Matrix with i.i.d. standard complex Gaussian-like entries (uniform in the unit square, centred).
pub fn random_complex<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> CMat {
    CMat::from_fn(dim, dim, |_, _| c(rng.gen::<f64>() * 2.0 - 1.0, rng.gen::<f64>() * 2.0 - 1.0))
}

pub fn random_hermitian<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> CMat {
    let a = random_complex(dim, rng);
    (&a + a.adjoint()) * cr(0.5)
}

/// Haar-ish random unitary from the QR factorisation of a random complex matrix.
pub fn random_unitary<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> CMat {
    let a = random_complex(dim, rng);
    let qr = a.qr();
    let q = qr.q();
    let r = qr.r();
    let mut q = q;
    for k in 0..dim {
        let d = r[(k, k)];
        if d.norm() > 0.0 {
            let phase = d / d.norm();
            for z in q.column_mut(k).iter_mut() {
                *z *= phase;
            }
        }
    }
    q
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn eigh_sorts_and_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = random_hermitian(9, &mut rng);
        let (values, vectors) = eigh(&h).unwrap();
        assert!(values.windows(2).all(|w| w[0] <= w[1]));
        assert!(max_diff(&from_eigen(&values, &vectors), &h) < 1e-12);
        assert!(max_diff(&(vectors.adjoint() * &vectors), &identity(9)) < 1e-12);
    }

    #[test]
    fn complement_is_orthonormal_and_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let raw = CVec::from_fn(6, |_, _| c(rng.gen(), rng.gen()));
        let v = &raw / cr(raw.norm());
        let b = complement_basis(&v);
        assert_eq!(b.ncols(), 5);
        assert!(max_diff(&(b.adjoint() * &b), &identity(5)) < 1e-13);
        assert!((b.adjoint() * &v).norm() < 1e-13);
    }

    #[test]
    fn psd_sqrt_squares_back() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = random_complex(5, &mut rng);
        let p = &a * a.adjoint();
        let s = psd_sqrt(&p).unwrap();
        assert!(max_diff(&(&s * &s), &p) < 1e-12);
        assert!(hermitian_deviation(&s) < 1e-13);
    }

    #[test]
    fn random_unitary_is_unitary() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u = random_unitary(4, &mut rng);
        assert!(max_diff(&(u.adjoint() * &u), &identity(4)) < 1e-13);
    }
}
