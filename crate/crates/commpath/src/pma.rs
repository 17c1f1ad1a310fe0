//! Grids on `[-1, 1]` and commuting pseudospectral matrix approximants
//! (CPMA) in one and several hermitian variables.
//!
//! A CPMA of a hermitian contraction snaps its spectrum onto a finite grid
//! while commuting with the original matrix; for tuples, all components are
//! snapped against a single orthogonal partition of unity built from the
//! joint eigenprojectors.

use nalgebra::DVector;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::linalg::{joint_diagonalize, CMat, MatrixTuple, VarietyTag};
use crate::num;
use crate::tol;

/// Representation and support grids for one hermitian variable.
///
/// Rep points are `-1 + 2 k d'` for an effective spacing `d' <= delta`;
/// consecutive support points straddle exactly one rep point.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeltaGrid {
    pub delta: f64,
    /// Effective half-spacing `d'`; rep points sit `2 d'` apart.
    pub effective: f64,
    pub rep_points: Vec<f64>,
    pub support_points: Vec<f64>,
    /// Number of rep points.
    pub count: usize,
}

/// Builds rep and support grids for `0 < delta <= 1`.
///
/// When `1/delta` is an integer the grid uses the spacing `2 delta` directly
/// (endpoints included, delta-dense). Otherwise the point count is raised
/// until the distance between consecutive rep points is at most `delta`,
/// which keeps the endpoints at -1 and 1 and every stated approximation
/// bound intact.
pub fn build_grids(delta: f64) -> Result<DeltaGrid> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::GridParam(delta));
    }
    let inv = 1.0 / delta;
    let count = if (inv - inv.round()).abs() < 1e-9 {
        inv.round() as usize + 1
    } else {
        (2.0 / delta).ceil() as usize + 1
    };
    let effective = 1.0 / (count as f64 - 1.0);
    let rep_points: Vec<f64> = (0..count).map(|k| -1.0 + 2.0 * k as f64 * effective).collect();
    let support_points: Vec<f64> =
        (0..=count).map(|k| -1.0 + (2.0 * k as f64 - 1.0) * effective).collect();
    Ok(DeltaGrid { delta, effective, rep_points, support_points, count })
}

impl DeltaGrid {
    /// Bin index and rep value for a scalar in `[-1 - d', 1 + d']`.
    ///
    /// Bins follow the half-open `(support_k, support_{k+1}]` convention; a
    /// value within 1e-12 of a support point lands in the lower-index bin.
    pub fn snap(&self, x: f64) -> (usize, f64) {
        let d = self.effective;
        let mut j = (0.5 * (x + 1.0) / d).round() as isize;
        j = j.clamp(0, self.count as isize - 1);
        let lower_boundary = -1.0 + (2.0 * j as f64 - 1.0) * d;
        if x <= lower_boundary + 1e-12 && j > 0 {
            j -= 1;
        }
        let j = j as usize;
        (j, self.rep_points[j])
    }
}

/// Orthogonal partition of unity with grid labels attached.
///
/// `projectors[g]` is the joint spectral projector of one occupied grid
/// cell; `labels[g]` is the cell's grid value vector in R^m. Entries are
/// ordered lexicographically by label vector and zero projectors are never
/// stored.
#[derive(Debug, Clone)]
pub struct ProjectiveDecomposition {
    pub projectors: Vec<CMat>,
    pub labels: Vec<Vec<f64>>,
    pub m: usize,
    pub n: usize,
    /// Orthonormal column blocks spanning each projector's range. Same
    /// order as `projectors`; reconstructible from them, kept for fast
    /// low-rank updates.
    pub blocks: Vec<CMat>,
}

impl ProjectiveDecomposition {
    pub fn len(&self) -> usize {
        self.projectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.projectors.is_empty()
    }

    /// `|| sum_j P_j - 1 ||`.
    pub fn partition_residual(&self) -> f64 {
        let mut s = CMat::zeros(self.n, self.n);
        for p in &self.projectors {
            s += p;
        }
        num::opnorm(&(s - num::identity(self.n)))
    }

    /// Max over pairs of `|| P_j P_k ||` plus each projector's hermitian
    /// idempotency defect.
    pub fn orthogonality_residual(&self) -> f64 {
        let mut r = 0.0f64;
        for (j, p) in self.projectors.iter().enumerate() {
            r = r.max(num::opnorm(&(p * p - p)));
            r = r.max(num::hermiticity_defect(p));
            for q in self.projectors.iter().skip(j + 1) {
                r = r.max(num::opnorm(&(p * q)));
            }
        }
        r
    }
}

fn check_cube_membership(x: &MatrixTuple) -> Result<f64> {
    let scale = x.max_norm().max(1.0);
    let t = tol::COMMUTATOR_SCALE * scale;
    for (j, c) in x.components().iter().enumerate() {
        let skew = c - c.adjoint();
        if !num::within_tol(&skew, t) {
            return Err(Error::NotHermitian { index: j, defect: num::opnorm(&skew), tol: t });
        }
        let nrm = num::opnorm(c);
        if nrm > 1.0 + 1e-12 {
            return Err(Error::NormExceedsOne { index: j, norm: nrm });
        }
    }
    for j in 0..x.m() {
        for k in (j + 1)..x.m() {
            let comm = num::commutator(x.component(j), x.component(k));
            if !num::within_tol(&comm, t) {
                return Err(Error::NotCommuting { residual: num::opnorm(&comm), tol: t });
            }
        }
    }
    Ok(scale)
}

/// Hermitian delta-CPMA of a single hermitian contraction, together with
/// the projective decomposition realizing it.
pub fn cpma_1d(x: &CMat, delta: f64) -> Result<(CMat, ProjectiveDecomposition)> {
    let tuple = MatrixTuple::new(vec![x.clone()], VarietyTag::None)?;
    let (xt, decomp) = cpma_md(&tuple, delta)?;
    Ok((xt.component(0).clone(), decomp))
}

/// Hermitian delta-CPMA of a commuting hermitian tuple.
///
/// All components are snapped per joint eigenvalue onto the product grid;
/// the returned decomposition groups joint eigenprojectors by occupied grid
/// cell, so that `Xtilde_k = sum_g labels[g][k] P_g` holds by construction.
pub fn cpma_md(x: &MatrixTuple, delta: f64) -> Result<(MatrixTuple, ProjectiveDecomposition)> {
    check_cube_membership(x)?;
    let grid = build_grids(delta)?;
    let (q, spectrum) = joint_diagonalize(x, tol::COMMUTATOR_SCALE)?;
    let n = x.n();
    let m = x.m();

    // Group joint points by their cell on the product grid.
    let mut cells: BTreeMap<Vec<usize>, Vec<usize>> = BTreeMap::new();
    let mut cell_labels: BTreeMap<Vec<usize>, Vec<f64>> = BTreeMap::new();
    for (k, point) in spectrum.points.iter().enumerate() {
        let mut bins = Vec::with_capacity(m);
        let mut label = Vec::with_capacity(m);
        for z in point {
            let (b, v) = grid.snap(z.re);
            bins.push(b);
            label.push(v);
        }
        cells.entry(bins.clone()).or_default().push(k);
        cell_labels.entry(bins).or_insert(label);
    }

    // BTreeMap order on bin vectors == lexicographic order on label vectors.
    let mut projectors = Vec::with_capacity(cells.len());
    let mut labels = Vec::with_capacity(cells.len());
    let mut blocks = Vec::with_capacity(cells.len());
    for (bins, members) in &cells {
        let mut block = CMat::zeros(n, members.len());
        for (col, &k) in members.iter().enumerate() {
            block.set_column(col, &q.column(k));
        }
        projectors.push(&block * block.adjoint());
        blocks.push(block);
        labels.push(cell_labels[bins].clone());
    }
    let decomp = ProjectiveDecomposition { projectors, labels, m, n, blocks };

    let mut comps = Vec::with_capacity(m);
    for j in 0..m {
        let mut acc = CMat::zeros(n, n);
        for (g, p) in decomp.projectors.iter().enumerate() {
            let v = decomp.labels[g][j];
            if v != 0.0 {
                acc += p.map(|z| z * v);
            }
        }
        comps.push(acc);
    }
    let xt = MatrixTuple::with_dim(n, comps, x.variety.clone())?;
    Ok((xt, decomp))
}

/// Independent oracle: per-entry grid snapping of a diagonal matrix.
/// Kept in the public surface so tests and the acceptance suite can compare
/// against [`cpma_md`] without touching its internals.
pub fn diagonal_snap_oracle(x: &CMat, delta: f64) -> Result<CMat> {
    let grid = build_grids(delta)?;
    let n = x.nrows();
    let d = DVector::from_iterator(
        n,
        (0..n).map(|k| Complex64::new(grid.snap(x[(k, k)].re).1, 0.0)),
    );
    Ok(CMat::from_diagonal(&d))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{hausdorff_distance_1d, metric_eth};
    use crate::num::{haar_unitary, hermitize, opnorm};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn close(a: &[f64], b: &[f64]) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12)
    }

    #[test]
    fn grids_for_half() {
        let g = build_grids(0.5).unwrap();
        assert_eq!(g.count, 3);
        assert!(close(&g.rep_points, &[-1.0, 0.0, 1.0]));
        assert!(close(&g.support_points, &[-1.5, -0.5, 0.5, 1.5]));
    }

    #[test]
    fn grids_for_one() {
        let g = build_grids(1.0).unwrap();
        assert_eq!(g.count, 2);
        assert!(close(&g.rep_points, &[-1.0, 1.0]));
        assert!(close(&g.support_points, &[-2.0, 0.0, 2.0]));
    }

    #[test]
    fn grids_for_two_fifths_force_denser_spacing() {
        // ceil(1 + 1/0.4) = 4 points would space rep points 2/3 > 0.4 apart;
        // the spacing rule forces 6 points at spacing 0.4.
        let g = build_grids(0.4).unwrap();
        assert_eq!(g.count, 6);
        let spacing = g.rep_points[1] - g.rep_points[0];
        assert!(spacing <= 0.4 + 1e-15);
        assert!((g.rep_points[0] + 1.0).abs() < 1e-15);
        assert!((g.rep_points[5] - 1.0).abs() < 1e-15);
        // Support points straddle exactly one rep point each.
        for k in 0..g.count {
            assert!(g.support_points[k] < g.rep_points[k]);
            assert!(g.rep_points[k] <= g.support_points[k + 1]);
        }
    }

    #[test]
    fn grid_rejects_bad_delta() {
        assert!(build_grids(0.0).is_err());
        assert!(build_grids(1.5).is_err());
        assert!(build_grids(-0.25).is_err());
    }

    #[test]
    fn snap_respects_halfopen_bins() {
        let g = build_grids(0.5).unwrap();
        assert_eq!(g.snap(0.24), (1, 0.0));
        assert_eq!(g.snap(-0.74), (0, -1.0));
        // Exactly on a support point: lower bin.
        assert_eq!(g.snap(0.5), (1, 0.0));
        assert_eq!(g.snap(0.5 + 1e-13), (1, 0.0));
        assert_eq!(g.snap(0.5 + 1e-9), (2, 1.0));
    }

    #[test]
    fn cpma_1d_zero_matrix_is_fixed() {
        let x = CMat::zeros(3, 3);
        for delta in [0.5, 0.25, 0.1] {
            let (xt, _) = cpma_1d(&x, delta).unwrap();
            assert!(opnorm(&xt) < 1e-15);
        }
    }

    #[test]
    fn cpma_1d_diagonal_example() {
        let x = CMat::from_diagonal(&DVector::from_vec(vec![
            Complex64::new(0.24, 0.0),
            Complex64::new(-0.74, 0.0),
        ]));
        let (xt, decomp) = cpma_1d(&x, 0.5).unwrap();
        assert_eq!(xt[(0, 0)].re, 0.0);
        assert_eq!(xt[(1, 1)].re, -1.0);
        assert!((opnorm(&(&x - &xt)) - 0.26).abs() < 1e-12);
        assert_eq!(decomp.len(), 2);
        // Oracle agreement is exact on diagonal inputs.
        let oracle = diagonal_snap_oracle(&x, 0.5).unwrap();
        assert_eq!(xt, oracle);
    }

    #[test]
    fn cpma_1d_random_contraction_postconditions() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n = 32;
        let h = crate::num::random_hermitian_unit(n, &mut rng);
        let delta = 0.1;
        let (xt, decomp) = cpma_1d(&h, delta).unwrap();
        assert!(opnorm(&num::commutator(&h, &xt)) < 1e-10);
        assert!(opnorm(&(&h - &xt)) <= delta + 1e-12);
        let (_, ev_x) = num::eigh(&h);
        let (_, ev_t) = num::eigh(&xt);
        let sx: Vec<Complex64> = ev_x.iter().map(|&e| Complex64::new(e, 0.0)).collect();
        let st: Vec<Complex64> = ev_t.iter().map(|&e| Complex64::new(e, 0.0)).collect();
        assert!(hausdorff_distance_1d(&sx, &st).unwrap() <= delta + 1e-10);
        assert!(decomp.partition_residual() < 1e-10);
        assert!(decomp.orthogonality_residual() < 1e-10);
        // Spectrum of the approximant lies on the rep grid.
        let grid = build_grids(delta).unwrap();
        for e in ev_t {
            assert!(grid.rep_points.iter().any(|&r| (r - e).abs() < 1e-9));
        }
    }

    #[test]
    fn cpma_md_matches_diagonal_oracle() {
        let x = MatrixTuple::new(
            vec![
                CMat::from_diagonal(&DVector::from_vec(vec![
                    Complex64::new(0.24, 0.0),
                    Complex64::new(-0.74, 0.0),
                ])),
                CMat::from_diagonal(&DVector::from_vec(vec![
                    Complex64::new(0.9, 0.0),
                    Complex64::new(0.9, 0.0),
                ])),
            ],
            VarietyTag::None,
        )
        .unwrap();
        let (xt, decomp) = cpma_md(&x, 0.5).unwrap();
        for j in 0..2 {
            let oracle = diagonal_snap_oracle(x.component(j), 0.5).unwrap();
            assert_eq!(xt.component(j), &oracle, "component {j}");
        }
        assert_eq!(xt.component(0)[(0, 0)].re, 0.0);
        assert_eq!(xt.component(0)[(1, 1)].re, -1.0);
        assert_eq!(xt.component(1)[(0, 0)].re, 1.0);
        // Points (0.24, 0.9) and (-0.74, 0.9) land in different cells.
        assert_eq!(decomp.len(), 2);
    }

    #[test]
    fn cpma_md_arity_one_reduces_to_1d() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = crate::num::random_hermitian_unit(8, &mut rng);
        let (a, _) = cpma_1d(&h, 0.3).unwrap();
        let tuple = MatrixTuple::new(vec![h], VarietyTag::None).unwrap();
        let (b, _) = cpma_md(&tuple, 0.3).unwrap();
        assert_eq!(&a, b.component(0));
    }

    #[test]
    fn cpma_md_transported_diagonal_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        let n = 16;
        let m = 3;
        let delta = 0.1;
        let q = haar_unitary(n, &mut rng);
        let diags: Vec<Vec<f64>> = (0..m)
            .map(|_| (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect())
            .collect();
        let comps: Vec<CMat> = diags
            .iter()
            .map(|d| {
                let dm = CMat::from_diagonal(&DVector::from_iterator(
                    n,
                    d.iter().map(|&v| Complex64::new(v, 0.0)),
                ));
                hermitize(&(&q * dm * q.adjoint()))
            })
            .collect();
        let x = MatrixTuple::new(comps, VarietyTag::None).unwrap();
        let (xt, decomp) = cpma_md(&x, delta).unwrap();

        for j in 0..m {
            assert!(opnorm(&(x.component(j) - xt.component(j))) <= delta + 1e-10);
            for k in 0..m {
                assert!(opnorm(&num::commutator(xt.component(j), x.component(k))) < 1e-10);
                assert!(opnorm(&num::commutator(xt.component(j), xt.component(k))) < 1e-10);
            }
        }
        assert!(decomp.partition_residual() < 1e-10);
        assert!(decomp.orthogonality_residual() < 1e-10);

        // Labels lie on the product grid and the approximant matches the
        // transported per-entry snapping oracle.
        let grid = build_grids(delta).unwrap();
        for label in &decomp.labels {
            for &v in label {
                assert!(grid.rep_points.iter().any(|&r| (r - v).abs() < 1e-12));
            }
        }
        for j in 0..m {
            let snapped: Vec<f64> = diags[j].iter().map(|&v| grid.snap(v).1).collect();
            let dm = CMat::from_diagonal(&DVector::from_iterator(
                n,
                snapped.iter().map(|&v| Complex64::new(v, 0.0)),
            ));
            let transported = &q * dm * q.adjoint();
            assert!(opnorm(&(xt.component(j) - transported)) < 1e-9, "component {j}");
        }
    }

    #[test]
    fn cpma_md_rejects_noncommuting_input() {
        let a = CMat::from_row_slice(2, 2, &[num::ZERO, num::ONE, num::ONE, num::ZERO]);
        let b = CMat::from_diagonal(&DVector::from_vec(vec![
            Complex64::new(1.0, 0.0),
            Complex64::new(-1.0, 0.0),
        ]));
        let x = MatrixTuple::new(vec![a, b], VarietyTag::None).unwrap();
        assert!(cpma_md(&x, 0.5).is_err());
    }

    #[test]
    fn cpma_monotone_refinement() {
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let h = crate::num::random_hermitian_unit(12, &mut rng);
        for delta in [0.5, 0.25, 0.1, 0.05] {
            let (xt, _) = cpma_1d(&h, delta).unwrap();
            let err = opnorm(&(&h - &xt));
            assert!(err <= delta + 1e-12);
        }
    }

    #[test]
    fn cpma_norm_guard() {
        let x = CMat::from_diagonal(&DVector::from_vec(vec![
            Complex64::new(1.2, 0.0),
            Complex64::new(0.0, 0.0),
        ]));
        assert!(matches!(cpma_1d(&x, 0.5), Err(Error::NormExceedsOne { .. })));
    }

    #[test]
    fn cpma_dimension_scaling_holds_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let delta = 0.2;
        for n in [2usize, 8, 32, 128] {
            let h = crate::num::random_hermitian_unit(n, &mut rng);
            let (xt, decomp) = cpma_1d(&h, delta).unwrap();
            assert!(opnorm(&(&h - &xt)) <= delta + 1e-11, "n={n}");
            assert!(decomp.partition_residual() < 1e-10, "n={n}");
        }
    }

    #[test]
    fn tuple_metric_of_cpma_is_within_delta() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let q = haar_unitary(10, &mut rng);
        let mk = |rng: &mut ChaCha8Rng| {
            let d = CMat::from_diagonal(&DVector::from_iterator(
                10,
                (0..10).map(|_| Complex64::new(rng.random::<f64>() * 2.0 - 1.0, 0.0)),
            ));
            hermitize(&(&q * d * q.adjoint()))
        };
        let x = MatrixTuple::new(vec![mk(&mut rng), mk(&mut rng)], VarietyTag::None).unwrap();
        let (xt, _) = cpma_md(&x, 0.25).unwrap();
        assert!(metric_eth(&x, &xt).unwrap() <= 0.25 + 1e-11);
    }
}
