//! Spherical unitaries as Kraus tuples and the unital completely positive
//! maps they induce, with local connectivity via the spherical-unitary
//! variety.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{metric_eth, CMat, MatrixTuple, VarietyTag};
use crate::num;
use crate::paths::{connect_spherical_unitary, MatrixPath};
use crate::tol;

/// Unital CP map induced by a spherical unitary: `psi_S(X) = sum S_j X S_j*`.
#[derive(Debug, Clone)]
pub struct SCPMap {
    kraus: MatrixTuple,
}

impl SCPMap {
    /// Wraps a Kraus tuple, checking the spherical-unitary relations:
    /// commuting normal components with `sum S_k S_k* = 1`.
    pub fn new(kraus: MatrixTuple) -> Result<SCPMap> {
        let n = kraus.n();
        let scale = kraus.max_norm().max(1.0);
        let t = tol::ALGEBRAIC * scale;
        let comm = kraus.commutator_max();
        if comm > t {
            return Err(Error::NotCommuting { residual: comm, tol: t });
        }
        let norm_defect = kraus.normality_max();
        if norm_defect > t {
            return Err(Error::NotNormal { index: 0, defect: norm_defect, tol: t });
        }
        let mut acc = CMat::zeros(n, n);
        for c in kraus.components() {
            acc += c * c.adjoint();
        }
        let res = num::opnorm(&(acc - num::identity(n)));
        if res > tol::ALGEBRAIC {
            return Err(Error::InvalidArgument(format!(
                "kraus tuple is not spherical: ||sum S S* - 1|| = {res:.3e}"
            )));
        }
        Ok(SCPMap { kraus: kraus.with_variety(VarietyTag::SphericalUnitary) })
    }

    pub fn kraus(&self) -> &MatrixTuple {
        &self.kraus
    }

    pub fn n(&self) -> usize {
        self.kraus.n()
    }

    pub fn m(&self) -> usize {
        self.kraus.m()
    }

    /// Applies the map: `sum_j S_j X S_j*`.
    pub fn apply(&self, x: &CMat) -> Result<CMat> {
        if x.nrows() != self.n() || x.ncols() != self.n() {
            return Err(Error::DimensionMismatch("scp apply input".into()));
        }
        let mut acc = CMat::zeros(self.n(), self.n());
        for s in self.kraus.components() {
            acc += s * x * s.adjoint();
        }
        Ok(acc)
    }
}

/// `apply_scp(map, X)`.
pub fn apply_scp(map: &SCPMap, x: &CMat) -> Result<CMat> {
    map.apply(x)
}

/// Path of SCP maps induced by a spherical-unitary path of Kraus tuples.
#[derive(Debug, Clone)]
pub struct ScpPath {
    pub kraus_path: MatrixPath,
}

impl ScpPath {
    pub fn map_at(&self, t: f64) -> Result<SCPMap> {
        let kraus = self.kraus_path.eval(t)?;
        SCPMap::new(kraus)
    }
}

/// Connects two nearby SCP maps: the Kraus tuples are joined inside the
/// spherical-unitary variety with an internal budget of `epsilon / (2m)`,
/// which caps the induced map deviation at `epsilon`.
pub fn connect_scp(s: &SCPMap, t: &SCPMap, epsilon_target: f64) -> Result<ScpPath> {
    if s.n() != t.n() || s.m() != t.m() {
        return Err(Error::DimensionMismatch("scp connect inputs".into()));
    }
    let m = s.m() as f64;
    let kraus_path = connect_spherical_unitary(s.kraus(), t.kraus(), epsilon_target / (2.0 * m))?;
    Ok(ScpPath { kraus_path })
}

/// Report of [`scp_deviation_bound_check`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeviationReport {
    pub trials: usize,
    pub eth: f64,
    pub bound: f64,
    pub max_deviation: f64,
    /// Max over trials of `deviation / bound` (0 when the bound is 0).
    pub max_ratio: f64,
}

/// Checks `||psi_S(X) - psi_T(X)|| <= 2 m eth(S, T)` on seeded random
/// contractions; the bound is homogeneous, so trials live on `||X|| = 1`.
pub fn scp_deviation_bound_check(
    s: &SCPMap,
    t: &SCPMap,
    trials: usize,
    seed: u64,
) -> Result<DeviationReport> {
    if s.n() != t.n() || s.m() != t.m() {
        return Err(Error::DimensionMismatch("scp bound check inputs".into()));
    }
    let eth = metric_eth(s.kraus(), t.kraus())?;
    let bound = 2.0 * s.m() as f64 * eth;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_dev = 0.0f64;
    for _ in 0..trials {
        let g = num::gaussian_matrix(s.n(), &mut rng);
        let nrm = num::opnorm(&g);
        let x = if nrm > 0.0 { g.map(|z| z / nrm) } else { g };
        let dev = num::opnorm(&(s.apply(&x)? - t.apply(&x)?));
        if dev > bound + tol::BOUND_SLACK {
            return Err(Error::InvalidArgument(format!(
                "deviation {dev:.6e} exceeds the bound {bound:.6e}"
            )));
        }
        max_dev = max_dev.max(dev);
    }
    let max_ratio = if bound > 0.0 { max_dev / bound } else { 0.0 };
    Ok(DeviationReport { trials, eth, bound, max_deviation: max_dev, max_ratio })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::num::{haar_unitary, identity, opnorm};
    use nalgebra::DVector;
    use num_complex::Complex64;
    use rand::Rng;

    fn spherical_kraus(n: usize, m: usize, rng: &mut ChaCha8Rng) -> MatrixTuple {
        let q = haar_unitary(n, rng);
        // Points on S^{2m-1} seen as m complex coordinates.
        let pts: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let v: Vec<f64> =
                    (0..2 * m).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)).collect();
                let r = v.iter().map(|z| z * z).sum::<f64>().sqrt();
                v.iter().map(|&z| z / r).collect()
            })
            .collect();
        let comps: Vec<CMat> = (0..m)
            .map(|j| {
                let d = CMat::from_diagonal(&DVector::from_iterator(
                    n,
                    pts.iter().map(|p| Complex64::new(p[2 * j], p[2 * j + 1])),
                ));
                &q * d * q.adjoint()
            })
            .collect();
        MatrixTuple::new(comps, VarietyTag::SphericalUnitary).unwrap()
    }

    #[test]
    fn apply_unitary_case() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u = haar_unitary(4, &mut rng);
        let map =
            SCPMap::new(MatrixTuple::new(vec![u.clone()], VarietyTag::SphericalUnitary).unwrap())
                .unwrap();
        let x = num::gaussian_matrix(4, &mut rng);
        let got = map.apply(&x).unwrap();
        let want = &u * &x * u.adjoint();
        assert!(opnorm(&(got - want)) < 1e-12);
    }

    #[test]
    fn apply_identity_kraus_is_identity_map() {
        let map = SCPMap::new(
            MatrixTuple::new(vec![identity(3)], VarietyTag::SphericalUnitary).unwrap(),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = num::gaussian_matrix(3, &mut rng);
        assert!(opnorm(&(map.apply(&x).unwrap() - &x)) < 1e-14);
    }

    #[test]
    fn apply_matches_direct_summation_oracle() {
        // Diagonal Kraus pair with |a|^2 + |c|^2 = |b|^2 + |d|^2 = 1.
        let (a, c) = (0.6, 0.8);
        let (b, d) = (0.28, 0.96);
        let s1 = CMat::from_diagonal(&DVector::from_vec(vec![
            Complex64::new(a, 0.0),
            Complex64::new(b, 0.0),
        ]));
        let s2 = CMat::from_diagonal(&DVector::from_vec(vec![
            Complex64::new(c, 0.0),
            Complex64::new(d, 0.0),
        ]));
        let map = SCPMap::new(
            MatrixTuple::new(vec![s1.clone(), s2.clone()], VarietyTag::SphericalUnitary).unwrap(),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = num::gaussian_matrix(2, &mut rng);
        let want = &s1 * &x * s1.adjoint() + &s2 * &x * s2.adjoint();
        assert!(opnorm(&(map.apply(&x).unwrap() - want)) < 1e-13);
    }

    #[test]
    fn maps_are_unital_and_positive() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for (n, m) in [(2usize, 1usize), (4, 2), (8, 3)] {
            let map = SCPMap::new(spherical_kraus(n, m, &mut rng)).unwrap();
            // Unital.
            let one = map.apply(&identity(n)).unwrap();
            assert!(opnorm(&(one - identity(n))) < 1e-10);
            // Trace-preserving form: sum S* S = 1 for commuting normal
            // spherical tuples.
            let mut acc = CMat::zeros(n, n);
            for s in map.kraus().components() {
                acc += s.adjoint() * s;
            }
            assert!(opnorm(&(acc - identity(n))) < 1e-10);
            // Positivity on a random PSD input.
            let g = num::gaussian_matrix(n, &mut rng);
            let psd = &g * g.adjoint();
            let out = map.apply(&psd).unwrap();
            let (_, evals) = num::eigh(&out);
            assert!(evals.iter().all(|&e| e >= -1e-10));
        }
    }

    #[test]
    fn deviation_bound_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for (n, m) in [(2usize, 1usize), (8, 2), (8, 3)] {
            let s = SCPMap::new(spherical_kraus(n, m, &mut rng)).unwrap();
            let k = num::random_hermitian_unit(n, &mut rng);
            let r = num::expi_hermitian(&k, 0.05);
            let t = SCPMap::new(s.kraus().conjugate(&r)).unwrap();
            let rep = scp_deviation_bound_check(&s, &t, 50, 7).unwrap();
            assert!(rep.max_ratio <= 1.0 + 1e-9, "(n,m)=({n},{m}): {rep:?}");
        }
        // Identical maps: zero deviation.
        let s = SCPMap::new(spherical_kraus(4, 2, &mut rng)).unwrap();
        let rep = scp_deviation_bound_check(&s, &s, 10, 1).unwrap();
        assert_eq!(rep.max_ratio, 0.0);
        assert!(rep.max_deviation < 1e-14);
    }

    #[test]
    fn connect_scp_tracks_the_kraus_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (n, m) = (4usize, 2usize);
        let s = SCPMap::new(spherical_kraus(n, m, &mut rng)).unwrap();
        let k = num::random_hermitian_unit(n, &mut rng);
        let t = SCPMap::new(s.kraus().conjugate(&num::expi_hermitian(&k, 0.002))).unwrap();
        let eps = 0.4;
        let path = connect_scp(&s, &t, eps).unwrap();
        // Endpoints.
        assert!(metric_eth(path.map_at(0.0).unwrap().kraus(), s.kraus()).unwrap() < 1e-14);
        assert!(metric_eth(path.map_at(1.0).unwrap().kraus(), t.kraus()).unwrap() < 1e-14);
        for &tt in &crate::tol::chebyshev_schedule(9) {
            let mt = path.map_at(tt).unwrap();
            let eth = metric_eth(mt.kraus(), s.kraus()).unwrap();
            // Deviation on sampled contractions stays below the target and
            // below the 2 m eth chain bound.
            for trial in 0..5 {
                let g = num::gaussian_matrix(n, &mut rng);
                let nrm = opnorm(&g);
                let x = g.map(|z| z / nrm);
                let dev = opnorm(&(mt.apply(&x).unwrap() - s.apply(&x).unwrap()));
                assert!(dev < eps, "t={tt} trial={trial}: dev {dev}");
                assert!(dev <= 2.0 * m as f64 * eth + 1e-10);
            }
        }
    }

    #[test]
    fn rejects_non_spherical_tuples() {
        let half = identity(2).map(|z| z * 0.5);
        assert!(SCPMap::new(MatrixTuple::new(vec![half], VarietyTag::SphericalUnitary).unwrap())
            .is_err());
    }
}
