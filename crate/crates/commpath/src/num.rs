//! Dense complex matrix utilities shared across the crate: operator norms,
//! hermitian eigendecompositions, polar factors, Haar-random unitaries.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::linalg::CMat;

pub const ZERO: Complex64 = Complex64::new(0.0, 0.0);
pub const ONE: Complex64 = Complex64::new(1.0, 0.0);
pub const I: Complex64 = Complex64::new(0.0, 1.0);

pub fn identity(n: usize) -> CMat {
    DMatrix::identity(n, n)
}

pub fn adjoint(a: &CMat) -> CMat {
    a.adjoint()
}

pub fn commutator(a: &CMat, b: &CMat) -> CMat {
    a * b - b * a
}

/// Frobenius norm, used only as a cheap scale estimate.
pub fn fro_norm(a: &CMat) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Spectral (operator-2) norm.
///
/// Power iteration on `A* A` with a deterministic start vector; falls back to
/// a full SVD if the iteration stalls. The returned value is accurate to
/// about `1e-12 * ||A||`, which is what the certification thresholds assume.
pub fn opnorm(a: &CMat) -> f64 {
    let (r, c) = a.shape();
    if r == 0 || c == 0 {
        return 0.0;
    }
    if r == 1 && c == 1 {
        return a[(0, 0)].norm();
    }
    let scale = fro_norm(a);
    if scale == 0.0 {
        return 0.0;
    }
    // Deterministic, mildly irregular start vector to avoid symmetry traps.
    let mut v: DVector<Complex64> = DVector::from_fn(c, |i, _| {
        Complex64::new(1.0 + 0.37 * ((i % 7) as f64), 0.11 * ((i % 3) as f64))
    });
    v /= Complex64::new(v.norm(), 0.0);
    let adj = a.adjoint();
    let mut w: DVector<Complex64> = DVector::zeros(r);
    let mut u: DVector<Complex64> = DVector::zeros(c);
    let mut est = 0.0f64;
    for iter in 0..400 {
        a.mul_to(&v, &mut w);
        adj.mul_to(&w, &mut u);
        let nu = u.norm();
        if nu == 0.0 {
            return 0.0;
        }
        let new_est = w.norm();
        let done = iter > 4 && (new_est - est).abs() <= 1e-13 * new_est.max(scale * 1e-6);
        est = new_est;
        v.copy_from(&u);
        v /= Complex64::new(nu, 0.0);
        if done {
            return est;
        }
    }
    // Stalled (clustered top singular values); take the exact route.
    a.clone().svd(false, false).singular_values.max()
}

/// Whether `||A|| <= tol`, short-circuiting through the Frobenius upper
/// bound before falling back to the exact operator norm. Used for
/// precondition checks whose reported value is never surfaced.
pub fn within_tol(a: &CMat, tol: f64) -> bool {
    if fro_norm(a) <= tol {
        return true;
    }
    opnorm(a) <= tol
}

/// Smallest singular value, via full SVD.
pub fn smin(a: &CMat) -> f64 {
    let sv = a.clone().svd(false, false).singular_values;
    sv.iter().cloned().fold(f64::INFINITY, f64::min)
}

/// `||A - A*||`.
pub fn hermiticity_defect(a: &CMat) -> f64 {
    opnorm(&(a - a.adjoint()))
}

/// `||A A* - A* A||`.
pub fn normality_defect(a: &CMat) -> f64 {
    opnorm(&(a * a.adjoint() - a.adjoint() * a))
}

/// Exact hermitian symmetrization `(A + A*) / 2`.
pub fn hermitize(a: &CMat) -> CMat {
    (a + a.adjoint()).map(|z| z * 0.5)
}

/// Eigendecomposition of a hermitian matrix. Returns `(q, evals)` with
/// `q* a q = diag(evals)` and the columns of `q` orthonormal. Eigenvalues
/// ascend; column phases are normalized so the largest-modulus entry of each
/// eigenvector is real positive.
pub fn eigh(a: &CMat) -> (CMat, Vec<f64>) {
    let n = a.nrows();
    if n == 1 {
        return (identity(1), vec![a[(0, 0)].re]);
    }
    let se = nalgebra::SymmetricEigen::new(hermitize(a));
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| se.eigenvalues[i].partial_cmp(&se.eigenvalues[j]).unwrap());
    let mut q = DMatrix::zeros(n, n);
    let mut evals = Vec::with_capacity(n);
    for (col, &i) in idx.iter().enumerate() {
        q.set_column(col, &se.eigenvectors.column(i));
        evals.push(se.eigenvalues[i]);
    }
    normalize_column_phases(&mut q);
    (q, evals)
}

/// Makes the largest-modulus entry of each column real positive. Ties break
/// toward the lowest row index. Leaves zero columns untouched.
pub fn normalize_column_phases(q: &mut CMat) {
    let (n, m) = q.shape();
    for c in 0..m {
        let mut best = 0usize;
        let mut best_mod = -1.0f64;
        for r in 0..n {
            let md = q[(r, c)].norm();
            if md > best_mod + 1e-14 {
                best_mod = md;
                best = r;
            }
        }
        if best_mod <= 0.0 {
            continue;
        }
        let z = q[(best, c)];
        let phase = z / Complex64::new(z.norm(), 0.0);
        let corr = phase.conj();
        for r in 0..n {
            q[(r, c)] *= corr;
        }
    }
}

/// Unitary polar factor of an invertible matrix, `U = A (A* A)^{-1/2}`,
/// computed from the SVD.
pub fn polar_unitary(a: &CMat) -> CMat {
    let svd = a.clone().svd(true, true);
    let u = svd.u.expect("svd u");
    let vt = svd.v_t.expect("svd v_t");
    u * vt
}

/// `exp(i s H)` for hermitian `H`, via eigendecomposition.
pub fn expi_hermitian(h: &CMat, s: f64) -> CMat {
    let (q, evals) = eigh(h);
    let phases = DVector::from_iterator(
        evals.len(),
        evals.iter().map(|&e| Complex64::from_polar(1.0, s * e)),
    );
    &q * DMatrix::from_diagonal(&phases) * q.adjoint()
}

/// Standard complex Gaussian matrix from a seeded generator.
pub fn gaussian_matrix(n: usize, rng: &mut ChaCha8Rng) -> CMat {
    DMatrix::from_fn(n, n, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        Complex64::new(re, im)
    })
}

/// Haar-distributed random unitary: QR of a complex Gaussian matrix with the
/// diagonal of `R` phase-normalized.
pub fn haar_unitary(n: usize, rng: &mut ChaCha8Rng) -> CMat {
    let g = gaussian_matrix(n, rng);
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for c in 0..n {
        let d = r[(c, c)];
        if d.norm() > 0.0 {
            let phase = d / Complex64::new(d.norm(), 0.0);
            for row in 0..n {
                q[(row, c)] *= phase;
            }
        }
    }
    q
}

/// Random hermitian matrix with unit spectral norm.
pub fn random_hermitian_unit(n: usize, rng: &mut ChaCha8Rng) -> CMat {
    let g = gaussian_matrix(n, rng);
    let h = hermitize(&g);
    let nrm = opnorm(&h);
    if nrm == 0.0 {
        return h;
    }
    h.map(|z| z / nrm)
}

/// Max |entry| of the off-diagonal part.
pub fn max_offdiag(a: &CMat) -> f64 {
    let n = a.nrows();
    let mut m = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                m = m.max(a[(i, j)].norm());
            }
        }
    }
    m
}

pub fn is_exactly_diagonal(a: &CMat) -> bool {
    let n = a.nrows();
    for i in 0..n {
        for j in 0..n {
            if i != j && a[(i, j)] != ZERO {
                return false;
            }
        }
    }
    true
}
