//! Matrix tuples, the `ð` metric, hermitian partitions and junctures, joint
//! diagonalization of commuting normal tuples, eigenvalue assignment, and
//! spectral utilities.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num;
use crate::tol;

/// Dense complex matrix used throughout.
pub type CMat = DMatrix<Complex64>;

/// Variety membership tag carried by a tuple.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum VarietyTag {
    None,
    /// Pairwise commuting hermitian contractions.
    Cube,
    /// Pairwise commuting normal contractions.
    Disk,
    /// Commuting unitaries.
    Torus,
    /// Commuting hermitian tuples with `sum H_k^2 = 1`.
    Sphere,
    /// Commuting normal Kraus tuples with `sum S_k S_k* = 1`.
    SphericalUnitary,
    /// Commuting hermitian tuples whose joint spectrum lies on the manifold
    /// described by the named atlas.
    Manifold(String),
}

impl VarietyTag {
    pub fn as_str(&self) -> String {
        match self {
            VarietyTag::None => "none".into(),
            VarietyTag::Cube => "cube".into(),
            VarietyTag::Disk => "disk".into(),
            VarietyTag::Torus => "torus".into(),
            VarietyTag::Sphere => "sphere".into(),
            VarietyTag::SphericalUnitary => "spherical-unitary".into(),
            VarietyTag::Manifold(id) => format!("manifold:{id}"),
        }
    }

    pub fn parse(s: &str) -> Result<VarietyTag> {
        Ok(match s {
            "none" => VarietyTag::None,
            "cube" => VarietyTag::Cube,
            "disk" => VarietyTag::Disk,
            "torus" => VarietyTag::Torus,
            "sphere" => VarietyTag::Sphere,
            "spherical-unitary" => VarietyTag::SphericalUnitary,
            other => match other.strip_prefix("manifold:") {
                Some(id) if !id.is_empty() => VarietyTag::Manifold(id.to_string()),
                _ => return Err(Error::InvalidArgument(format!("unknown variety '{other}'"))),
            },
        })
    }
}

impl Serialize for VarietyTag {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.as_str())
    }
}

impl<'de> Deserialize<'de> for VarietyTag {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        VarietyTag::parse(&s).map_err(serde::de::Error::custom)
    }
}

/// Ordered m-tuple of n-by-n complex matrices with a variety tag.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixTuple {
    n: usize,
    components: Vec<CMat>,
    pub variety: VarietyTag,
}

impl MatrixTuple {
    /// Builds a tuple from components, validating squareness, shared
    /// dimension and entry finiteness.
    pub fn new(components: Vec<CMat>, variety: VarietyTag) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidArgument("tuple needs at least one component".into()));
        }
        let n = components[0].nrows();
        Self::with_dim(n, components, variety)
    }

    /// Like [`MatrixTuple::new`] but allows an empty tuple (arity 0) with an
    /// explicit dimension; used for zero-dimensional chart parameter tuples.
    pub fn with_dim(n: usize, components: Vec<CMat>, variety: VarietyTag) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("dimension must be positive".into()));
        }
        for (j, c) in components.iter().enumerate() {
            if c.nrows() != n || c.ncols() != n {
                return Err(Error::DimensionMismatch(format!(
                    "component {j} is {}x{}, expected {n}x{n}",
                    c.nrows(),
                    c.ncols()
                )));
            }
            if c.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "component {j} contains non-finite entries"
                )));
            }
        }
        Ok(MatrixTuple { n, components, variety })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[CMat] {
        &self.components
    }

    pub fn component(&self, j: usize) -> &CMat {
        &self.components[j]
    }

    pub fn map(&self, f: impl Fn(&CMat) -> CMat) -> MatrixTuple {
        MatrixTuple {
            n: self.n,
            components: self.components.iter().map(f).collect(),
            variety: self.variety.clone(),
        }
    }

    pub fn with_variety(mut self, variety: VarietyTag) -> MatrixTuple {
        self.variety = variety;
        self
    }

    pub fn max_norm(&self) -> f64 {
        self.components.iter().map(num::opnorm).fold(0.0, f64::max)
    }

    /// Max over unordered component pairs of `||[X_j, X_k]||`.
    pub fn commutator_max(&self) -> f64 {
        let mut r = 0.0f64;
        for j in 0..self.m() {
            for k in (j + 1)..self.m() {
                r = r.max(num::opnorm(&num::commutator(&self.components[j], &self.components[k])));
            }
        }
        r
    }

    pub fn hermiticity_max(&self) -> f64 {
        self.components.iter().map(num::hermiticity_defect).fold(0.0, f64::max)
    }

    pub fn normality_max(&self) -> f64 {
        self.components.iter().map(num::normality_defect).fold(0.0, f64::max)
    }

    /// Conjugates every component by `w`: `X_j -> w X_j w*`.
    pub fn conjugate(&self, w: &CMat) -> MatrixTuple {
        self.map(|c| w * c * w.adjoint())
    }

    pub fn all_exactly_diagonal(&self) -> bool {
        self.components.iter().all(num::is_exactly_diagonal)
    }
}

/// Joint spectrum of a commuting normal tuple: the n points in C^m read off
/// a simultaneous diagonalization, together with the diagonalizing basis.
#[derive(Debug, Clone)]
pub struct JointSpectrum {
    /// `points[k][j]` is the k-th diagonal entry of `Q* X_j Q`.
    pub points: Vec<Vec<Complex64>>,
    /// Unitary basis `Q`.
    pub basis: CMat,
}

impl JointSpectrum {
    pub fn n(&self) -> usize {
        self.points.len()
    }

    pub fn m(&self) -> usize {
        self.points.first().map_or(0, |p| p.len())
    }

    /// Spectrum of the j-th component as a point multiset in C.
    pub fn component_spectrum(&self, j: usize) -> Vec<Complex64> {
        self.points.iter().map(|p| p[j]).collect()
    }

    /// Real parts of the points; valid for hermitian tuples.
    pub fn real_points(&self) -> Vec<Vec<f64>> {
        self.points.iter().map(|p| p.iter().map(|z| z.re).collect()).collect()
    }
}

/// `ð(S, T) = max_j ||S_j - T_j||` in the operator norm.
pub fn metric_eth(s: &MatrixTuple, t: &MatrixTuple) -> Result<f64> {
    if s.n() != t.n() || s.m() != t.m() {
        return Err(Error::DimensionMismatch(format!(
            "eth: ({}, {}) vs ({}, {})",
            s.m(),
            s.n(),
            t.m(),
            t.n()
        )));
    }
    let mut r = 0.0f64;
    for (a, b) in s.components().iter().zip(t.components()) {
        r = r.max(num::opnorm(&(a - b)));
    }
    Ok(r)
}

/// Splits a normal tuple `X` into hermitian real/imaginary parts
/// `(X_11, ..., X_1m, X_21, ..., X_2m)` with `X_j = X_1j + i X_2j`.
pub fn hermitian_partition(x: &MatrixTuple) -> Result<MatrixTuple> {
    let scale = x.max_norm().max(1.0);
    for (j, c) in x.components().iter().enumerate() {
        let defect = c * c.adjoint() - c.adjoint() * c;
        let t = tol::COMMUTATOR_SCALE * scale;
        if !num::within_tol(&defect, t) {
            return Err(Error::NotNormal { index: j, defect: num::opnorm(&defect), tol: t });
        }
    }
    let mut parts = Vec::with_capacity(2 * x.m());
    for c in x.components() {
        parts.push((c + c.adjoint()).map(|z| z * 0.5));
    }
    for c in x.components() {
        // (X - X*) / (2i) = -i/2 (X - X*)
        parts.push((c - c.adjoint()).map(|z| z * Complex64::new(0.0, -0.5)));
    }
    MatrixTuple::with_dim(x.n(), parts, VarietyTag::None)
}

/// Reassembles a 2m-tuple of hermitians into the m normal matrices
/// `H_j + i H_{m+j}`. Inverse of [`hermitian_partition`].
pub fn juncture(h: &MatrixTuple) -> Result<MatrixTuple> {
    if h.m() % 2 != 0 || h.m() == 0 {
        return Err(Error::OddArity(h.m()));
    }
    let m = h.m() / 2;
    let mut comps = Vec::with_capacity(m);
    for j in 0..m {
        let re = h.component(j);
        let im = h.component(m + j);
        comps.push(re + im.map(|z| z * Complex64::new(0.0, 1.0)));
    }
    MatrixTuple::with_dim(h.n(), comps, VarietyTag::None)
}

/// Interleaved real/imaginary lift `(Re X_1, Im X_1, ..., Re X_m, Im X_m)`,
/// used for the torus and spherical-unitary correspondences.
pub fn reim_interleave(x: &MatrixTuple) -> Result<MatrixTuple> {
    let mut parts = Vec::with_capacity(2 * x.m());
    for c in x.components() {
        parts.push((c + c.adjoint()).map(|z| z * 0.5));
        parts.push((c - c.adjoint()).map(|z| z * Complex64::new(0.0, -0.5)));
    }
    MatrixTuple::with_dim(x.n(), parts, VarietyTag::None)
}

/// Inverse of [`reim_interleave`]: `(X_1, X_2, ..., X_{2m-1}, X_{2m}) ->
/// (X_1 + i X_2, ..., X_{2m-1} + i X_{2m})`.
pub fn reim_juncture(h: &MatrixTuple) -> Result<MatrixTuple> {
    if h.m() % 2 != 0 || h.m() == 0 {
        return Err(Error::OddArity(h.m()));
    }
    let m = h.m() / 2;
    let mut comps = Vec::with_capacity(m);
    for j in 0..m {
        let re = h.component(2 * j);
        let im = h.component(2 * j + 1);
        comps.push(re + im.map(|z| z * Complex64::new(0.0, 1.0)));
    }
    MatrixTuple::with_dim(h.n(), comps, VarietyTag::None)
}

/// Full pinching: the diagonal part of a matrix. Idempotent and a norm
/// contraction.
pub fn full_pinching(a: &CMat) -> CMat {
    CMat::from_diagonal(&a.diagonal())
}

/// Hausdorff distance between two nonempty finite point sets in C^d under
/// the Euclidean metric.
pub fn hausdorff_distance(a: &[Vec<Complex64>], b: &[Vec<Complex64>]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySet);
    }
    let dist = |p: &[Complex64], q: &[Complex64]| -> f64 {
        p.iter().zip(q).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt()
    };
    let directed = |from: &[Vec<Complex64>], to: &[Vec<Complex64>]| -> f64 {
        from.iter()
            .map(|p| to.iter().map(|q| dist(p, q)).fold(f64::INFINITY, f64::min))
            .fold(0.0, f64::max)
    };
    Ok(directed(a, b).max(directed(b, a)))
}

/// Hausdorff distance between two spectra (point sets in C).
pub fn hausdorff_distance_1d(a: &[Complex64], b: &[Complex64]) -> Result<f64> {
    let aa: Vec<Vec<Complex64>> = a.iter().map(|&z| vec![z]).collect();
    let bb: Vec<Vec<Complex64>> = b.iter().map(|&z| vec![z]).collect();
    hausdorff_distance(&aa, &bb)
}

/// Membership test for the epsilon-pseudospectrum: true iff the smallest
/// singular value of `X - lambda I` is at most `eps`.
pub fn pseudospectrum_member(x: &CMat, lambda: Complex64, eps: f64) -> Result<bool> {
    if eps < 0.0 {
        return Err(Error::InvalidArgument("pseudospectrum radius must be >= 0".into()));
    }
    let shifted = x - num::identity(x.nrows()).map(|z| z * lambda);
    Ok(num::smin(&shifted) <= eps)
}

// ---------------------------------------------------------------------------
// Joint diagonalization
// ---------------------------------------------------------------------------

/// Simultaneously diagonalizes a tuple of pairwise commuting normal matrices.
///
/// Returns the unitary `W` and the joint spectrum; `W* X_j W` is diagonal for
/// every component, with off-diagonal magnitudes at most `tol * ||X_j||`.
///
/// Strategy: eigendecompose a generic random linear combination of the
/// hermitian parts, then repair near-degenerate clusters with cyclic Jacobi
/// sweeps that minimize the total off-diagonal energy of all parts at once.
/// `tol` is relative; commutator and normality preconditions are checked at
/// `tol * max_j ||X_j||`.
pub fn joint_diagonalize(x: &MatrixTuple, tol: f64) -> Result<(CMat, JointSpectrum)> {
    let n = x.n();
    let m = x.m();
    let scale = x.max_norm();

    // Commutation and normality are diagnosed lazily: a tuple that
    // simultaneously diagonalizes within tolerance satisfies both, so the
    // explicit (and expensive) checks only run when diagonalization
    // struggles.
    let diagnose = |x: &MatrixTuple| -> Result<()> {
        for j in 0..m {
            for k in (j + 1)..m {
                let comm = num::commutator(x.component(j), x.component(k));
                if !num::within_tol(&comm, tol * scale) {
                    return Err(Error::NotCommuting {
                        residual: num::opnorm(&comm),
                        tol: tol * scale,
                    });
                }
            }
        }
        for (j, c) in x.components().iter().enumerate() {
            let defect = c * c.adjoint() - c.adjoint() * c;
            if !num::within_tol(&defect, tol * scale) {
                return Err(Error::NotNormal {
                    index: j,
                    defect: num::opnorm(&defect),
                    tol: tol * scale,
                });
            }
        }
        Ok(())
    };

    // Already-diagonal tuples keep exact 0/1 structure: the basis is a
    // permutation of the identity ordering the points.
    if x.all_exactly_diagonal() {
        let points: Vec<Vec<Complex64>> =
            (0..n).map(|k| (0..m).map(|j| x.component(j)[(k, k)]).collect()).collect();
        let order = sorted_order(&points);
        let mut basis = CMat::zeros(n, n);
        for (col, &k) in order.iter().enumerate() {
            basis[(k, col)] = num::ONE;
        }
        let sorted_points: Vec<Vec<Complex64>> = order.iter().map(|&k| points[k].clone()).collect();
        return Ok((basis.clone(), JointSpectrum { points: sorted_points, basis }));
    }

    // Hermitian parts of every component.
    let mut parts: Vec<CMat> = Vec::with_capacity(2 * m);
    for c in x.components() {
        parts.push((c + c.adjoint()).map(|z| z * 0.5));
        parts.push((c - c.adjoint()).map(|z| z * Complex64::new(0.0, -0.5)));
    }
    parts.retain(|p| num::fro_norm(p) > 0.0);
    if parts.is_empty() {
        parts.push(CMat::zeros(n, n));
    }

    // Generic combination with fixed-seed coefficients keeps the whole
    // routine a pure function of its inputs.
    let mut rng = ChaCha8Rng::seed_from_u64(0x9e3779b97f4a7c15);
    let combo = parts.iter().fold(CMat::zeros(n, n), |acc, p| {
        let c: f64 = 0.5 + rng.random::<f64>();
        acc + p.map(|z| z * c)
    });
    let (mut q, _) = num::eigh(&combo);

    // Conjugate the components once; sweep only if the generic combination
    // left off-diagonal mass behind (near-degenerate clusters).
    let target = 0.5 * tol * scale.max(f64::MIN_POSITIVE);
    let mut conj: Vec<CMat> = x.components().iter().map(|c| q.adjoint() * c * &q).collect();
    let resid = conj.iter().map(num::max_offdiag).fold(0.0, f64::max);
    if resid > target {
        // Rule out bad inputs before paying for repair sweeps.
        diagnose(x)?;
        let mut rotated: Vec<CMat> = parts.iter().map(|p| q.adjoint() * p * &q).collect();
        let mut part_resid = rotated.iter().map(num::max_offdiag).fold(0.0, f64::max);
        let mut sweeps = 0;
        while part_resid > target && sweeps < 30 {
            jacobi_sweep(&mut rotated, &mut q, n);
            part_resid = rotated.iter().map(num::max_offdiag).fold(0.0, f64::max);
            sweeps += 1;
        }
        conj = x.components().iter().map(|c| q.adjoint() * c * &q).collect();
    }

    // Validate against the actual components in the computed basis. The
    // largest entry magnitude bounds the operator norm from below, so the
    // relative test only pays for exact norms when it is about to fail.
    for (j, d) in conj.iter().enumerate() {
        let off = num::max_offdiag(d);
        let c = x.component(j);
        let entry_scale = c.iter().map(|z| z.norm()).fold(f64::MIN_POSITIVE, f64::max);
        if off > tol * entry_scale {
            let nrm = num::opnorm(c).max(f64::MIN_POSITIVE);
            if off > tol * nrm {
                return Err(Error::ConvergenceFailure { achieved: off / nrm, target: tol });
            }
        }
    }

    let mut points: Vec<Vec<Complex64>> = Vec::with_capacity(n);
    let diags: Vec<DVector<Complex64>> = conj.iter().map(|d| d.diagonal()).collect();
    for k in 0..n {
        points.push(diags.iter().map(|d| d[k]).collect());
    }
    let order = sorted_order(&points);
    let mut sorted_q = CMat::zeros(n, n);
    for (col, &k) in order.iter().enumerate() {
        sorted_q.set_column(col, &q.column(k));
    }
    num::normalize_column_phases(&mut sorted_q);
    let sorted_points: Vec<Vec<Complex64>> = order.iter().map(|&k| points[k].clone()).collect();
    Ok((sorted_q.clone(), JointSpectrum { points: sorted_points, basis: sorted_q }))
}

/// Lexicographic order of points by (re_1, im_1, re_2, im_2, ...).
fn sorted_order(points: &[Vec<Complex64>]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        for (za, zb) in points[a].iter().zip(&points[b]) {
            match za.re.partial_cmp(&zb.re).unwrap() {
                std::cmp::Ordering::Equal => {}
                o => return o,
            }
            match za.im.partial_cmp(&zb.im).unwrap() {
                std::cmp::Ordering::Equal => {}
                o => return o,
            }
        }
        a.cmp(&b)
    });
    order
}

/// One cyclic sweep of simultaneous Jacobi rotations over all hermitian
/// parts (Cardoso-Souloumiac update).
fn jacobi_sweep(parts: &mut [CMat], q: &mut CMat, n: usize) {
    for p in 0..n {
        for r in (p + 1)..n {
            // 3x3 Gram matrix of the pair data across all parts.
            let mut g = [[0.0f64; 3]; 3];
            for a in parts.iter() {
                let d = a[(p, p)].re - a[(r, r)].re;
                let o = a[(p, r)];
                let h = [d, 2.0 * o.re, 2.0 * o.im];
                for i in 0..3 {
                    for j in 0..3 {
                        g[i][j] += h[i] * h[j];
                    }
                }
            }
            let (x, y, z) = top_eigvec3(&g);
            // Rotation is the identity when the pair is already diagonal.
            if y.abs() < 1e-300 && z.abs() < 1e-300 {
                continue;
            }
            let c = ((x + 1.0) / 2.0).sqrt();
            let s = Complex64::new(y, -z) / (2.0 * c);
            if s.norm() < 1e-16 {
                continue;
            }
            for a in parts.iter_mut() {
                apply_rotation(a, p, r, c, s);
            }
            // New basis column update: Q <- Q R*.
            for row in 0..n {
                let qp = q[(row, p)];
                let qr = q[(row, r)];
                q[(row, p)] = qp * c + qr * s;
                q[(row, r)] = -qp * s.conj() + qr * c;
            }
        }
    }
}

/// In-place `A <- R A R*` for the plane rotation with `R[p,p]=c`,
/// `R[p,r]=conj(s)`, `R[r,p]=-s`, `R[r,r]=c`.
fn apply_rotation(a: &mut CMat, p: usize, r: usize, c: f64, s: Complex64) {
    let n = a.nrows();
    for col in 0..n {
        let ap = a[(p, col)];
        let ar = a[(r, col)];
        a[(p, col)] = ap * c + ar * s.conj();
        a[(r, col)] = -ap * s + ar * c;
    }
    for row in 0..n {
        let ap = a[(row, p)];
        let ar = a[(row, r)];
        a[(row, p)] = ap * c + ar * s;
        a[(row, r)] = -ap * s.conj() + ar * c;
    }
}

/// Largest-eigenvalue unit eigenvector of a symmetric 3x3 matrix, sign fixed
/// so the first coordinate is nonnegative. Power iteration with a shift is
/// plenty at this size.
fn top_eigvec3(g: &[[f64; 3]; 3]) -> (f64, f64, f64) {
    let tr = g[0][0] + g[1][1] + g[2][2];
    if tr <= 0.0 {
        return (1.0, 0.0, 0.0);
    }
    let mut v = [1.0f64, 0.3, 0.2];
    for entry in v.iter_mut().skip(1) {
        *entry += 1e-3;
    }
    let mut prev = 0.0f64;
    for _ in 0..200 {
        let w = [
            g[0][0] * v[0] + g[0][1] * v[1] + g[0][2] * v[2],
            g[1][0] * v[0] + g[1][1] * v[1] + g[1][2] * v[2],
            g[2][0] * v[0] + g[2][1] * v[1] + g[2][2] * v[2],
        ];
        let nrm = (w[0] * w[0] + w[1] * w[1] + w[2] * w[2]).sqrt();
        if nrm == 0.0 {
            return (1.0, 0.0, 0.0);
        }
        v = [w[0] / nrm, w[1] / nrm, w[2] / nrm];
        if (nrm - prev).abs() <= 1e-15 * nrm {
            break;
        }
        prev = nrm;
    }
    if v[0] < 0.0 {
        v = [-v[0], -v[1], -v[2]];
    }
    (v[0], v[1], v[2])
}

// ---------------------------------------------------------------------------
// Eigenvalue assignment and the conjugation morphism
// ---------------------------------------------------------------------------

/// Permutation `pi` minimizing the bottleneck cost
/// `max_k max_j |A_{pi(k)}[j] - B_k[j]|`.
///
/// Thresholded bipartite matching for n <= 256, greedy nearest-neighbor
/// above. Deterministic: ties break toward the lexicographically smallest
/// index.
pub fn eigenvalue_assignment(a: &JointSpectrum, b: &JointSpectrum) -> Vec<usize> {
    let n = a.n();
    assert_eq!(n, b.n(), "assignment requires equal point counts");
    assert_eq!(a.m(), b.m(), "assignment requires equal arities");
    if n == 0 {
        return vec![];
    }
    let cost = |i: usize, k: usize| -> f64 {
        a.points[i]
            .iter()
            .zip(&b.points[k])
            .map(|(x, y)| (x - y).norm())
            .fold(0.0, f64::max)
    };
    if n > 256 {
        // Greedy nearest-neighbor per slot.
        let mut used = vec![false; n];
        let mut pi = vec![0usize; n];
        for k in 0..n {
            let mut best = usize::MAX;
            let mut best_cost = f64::INFINITY;
            for i in 0..n {
                if !used[i] {
                    let c = cost(i, k);
                    if c < best_cost {
                        best_cost = c;
                        best = i;
                    }
                }
            }
            used[best] = true;
            pi[k] = best;
        }
        return pi;
    }

    let mut costs = vec![vec![0.0f64; n]; n];
    let mut all: Vec<f64> = Vec::with_capacity(n * n);
    for (i, row) in costs.iter_mut().enumerate() {
        for (k, c) in row.iter_mut().enumerate() {
            *c = cost(i, k);
            all.push(*c);
        }
    }
    all.sort_by(|x, y| x.partial_cmp(y).unwrap());
    all.dedup();

    // Smallest threshold admitting a perfect matching.
    let feasible = |tau: f64| -> Option<Vec<usize>> { threshold_matching(&costs, tau) };
    let mut lo = 0usize;
    let mut hi = all.len() - 1;
    if feasible(all[lo]).is_none() {
        while lo < hi {
            let mid = (lo + hi) / 2;
            if feasible(all[mid]).is_some() {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
    } else {
        hi = lo;
    }
    feasible(all[hi]).expect("full threshold always admits a matching")
}

/// Kuhn's augmenting-path matching restricted to edges with cost <= tau.
/// Returns `pi` with `pi[k] = i` (slot k takes point i), or None if no
/// perfect matching exists.
fn threshold_matching(costs: &[Vec<f64>], tau: f64) -> Option<Vec<usize>> {
    let n = costs.len();
    let mut slot_of_point = vec![usize::MAX; n];
    fn try_augment(
        i: usize,
        costs: &[Vec<f64>],
        tau: f64,
        visited: &mut [bool],
        slot_of_point: &mut [usize],
        point_of_slot: &mut [usize],
    ) -> bool {
        let n = costs.len();
        for k in 0..n {
            if costs[i][k] <= tau && !visited[k] {
                visited[k] = true;
                if point_of_slot[k] == usize::MAX
                    || try_augment(point_of_slot[k], costs, tau, visited, slot_of_point, point_of_slot)
                {
                    point_of_slot[k] = i;
                    slot_of_point[i] = k;
                    return true;
                }
            }
        }
        false
    }
    let mut point_of_slot = vec![usize::MAX; n];
    for i in 0..n {
        let mut visited = vec![false; n];
        if !try_augment(i, costs, tau, &mut visited, &mut slot_of_point, &mut point_of_slot) {
            return None;
        }
    }
    Some(point_of_slot)
}

/// Result of [`conjugation_morphism`].
#[derive(Debug, Clone)]
pub struct ConjugationMorphism {
    /// Unitary `W` realizing `Psi = Ad[W]`.
    pub w: CMat,
    /// `Psi(X) = (W X_j W*)`, diagonal in Y's joint eigenbasis.
    pub psi_x: MatrixTuple,
    /// Achieved `eth(Psi(X), X)`.
    pub eth_to_x: f64,
    /// Achieved `eth(Psi(X), Y)` under the chosen assignment.
    pub eth_to_y: f64,
    /// Joint eigenbasis of Y, in which `psi_x` is diagonal.
    pub y_basis: CMat,
    /// Points of `Psi(X)` in that basis (position k holds the X-point
    /// assigned to Y's slot k).
    pub psi_points: Vec<Vec<Complex64>>,
    /// Points of Y in the same basis.
    pub y_points: Vec<Vec<Complex64>>,
}

/// Conjugation morphism between two commuting normal tuples: returns a
/// unitary `W` such that `(W X_j W*)` is diagonal in Y's joint eigenbasis
/// (hence commutes with Y), with the eigenvalue assignment minimizing the
/// bottleneck distance to Y's points.
pub fn conjugation_morphism(x: &MatrixTuple, y: &MatrixTuple, tol: f64) -> Result<ConjugationMorphism> {
    if x.n() != y.n() || x.m() != y.m() {
        return Err(Error::DimensionMismatch("conjugation morphism inputs".into()));
    }
    let (qx, sx) = joint_diagonalize(x, tol)?;
    let (qy, sy) = joint_diagonalize(y, tol)?;
    let n = x.n();
    let pi = eigenvalue_assignment(&sx, &sy);
    // Permutation matrix with (P v)_k = v_{pi(k)}.
    let mut perm = CMat::zeros(n, n);
    for (k, &i) in pi.iter().enumerate() {
        perm[(k, i)] = num::ONE;
    }
    let w = &qy * &perm * qx.adjoint();
    // Assemble Psi(X) spectrally: exactly diagonal in Y's basis.
    let psi_points: Vec<Vec<Complex64>> = pi.iter().map(|&i| sx.points[i].clone()).collect();
    let mut comps = Vec::with_capacity(x.m());
    for j in 0..x.m() {
        let d = DVector::from_iterator(n, psi_points.iter().map(|p| p[j]));
        comps.push(&qy * CMat::from_diagonal(&d) * qy.adjoint());
    }
    let psi_x = MatrixTuple::with_dim(n, comps, x.variety.clone())?;
    let eth_to_x = metric_eth(&psi_x, x)?;
    let mut eth_to_y = 0.0f64;
    for (p, q) in psi_points.iter().zip(&sy.points) {
        for (za, zb) in p.iter().zip(q) {
            eth_to_y = eth_to_y.max((za - zb).norm());
        }
    }
    Ok(ConjugationMorphism {
        w,
        psi_x,
        eth_to_x,
        eth_to_y,
        y_basis: qy,
        psi_points,
        y_points: sy.points,
    })
}
