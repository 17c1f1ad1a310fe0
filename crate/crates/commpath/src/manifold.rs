//! Chart atlases for compact manifolds inside `[-1,1]^m` (spheres, tori,
//! cubes) and CPMA construction constrained to the induced matrix manifolds.
//!
//! Charts are evaluated on joint eigenvalues; for commuting hermitian tuples
//! this agrees with the multivariable functional calculus.

use nalgebra::DVector;
use num_complex::Complex64;
use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::linalg::{joint_diagonalize, CMat, MatrixTuple, VarietyTag};
use crate::num;
use crate::pma::{build_grids, ProjectiveDecomposition};
use crate::tol;

/// Sphere graph charts own a point when the solved coordinate is at least
/// this large in absolute value.
const SPHERE_OWN_MIN: f64 = 0.35;
/// Sphere chart domains extend until the solved coordinate drops to this
/// value; the gap past `SPHERE_OWN_MIN` absorbs snapping motion.
const SPHERE_DOMAIN_MIN: f64 = 0.2;
/// Torus charts own an angle within this normalized distance of the branch
/// center; domains extend to 0.75.
const TORUS_OWN_MAX: f64 = 0.5;
const TORUS_DOMAIN_MAX: f64 = 0.75;

/// Builtin atlas kinds. The `usize` is the ambient dimension for spheres
/// and cubes, and the number of circle factors for tori (ambient `2m`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AtlasKind {
    Sphere(usize),
    Torus(usize),
    Cube(usize),
}

/// Finite chart atlas for one of the builtin compact manifolds.
#[derive(Debug, Clone)]
pub struct ChartAtlas {
    pub kind: AtlasKind,
    /// Ambient dimension m (the manifold lives in R^m).
    pub ambient_dim: usize,
    /// Intrinsic dimension d of the manifold.
    pub intrinsic_dim: usize,
    /// Number of charts.
    pub chart_count: usize,
}

/// Point on a manifold, with the owning chart and its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifoldPoint {
    pub ambient: Vec<f64>,
    pub chart_id: usize,
    pub parameters: Vec<f64>,
}

/// Builds one of the builtin atlases.
///
/// * sphere(m): 2m hemispherical graph charts on `S^{m-1}` in `R^m`
///   (`m = 1` degenerates to the two-point sphere with zero-dimensional
///   charts); supported up to m = 8, past which the hemispheres no longer
///   leave an ownership margin.
/// * torus(m): two angle branches per circle factor, `2^m` charts on
///   `T^m` embedded in `R^{2m}`.
/// * cube(m): the identity chart on `[-1,1]^m`.
pub fn builtin_atlas(kind: AtlasKind) -> Result<ChartAtlas> {
    match kind {
        AtlasKind::Sphere(m) => {
            if m < 1 {
                return Err(Error::UnsupportedAtlas("sphere needs ambient dimension >= 1".into()));
            }
            if m > 8 {
                return Err(Error::UnsupportedAtlas(format!(
                    "sphere-{m}: hemispherical charts lose their ownership margin past ambient dimension 8"
                )));
            }
            Ok(ChartAtlas {
                kind,
                ambient_dim: m,
                intrinsic_dim: m.saturating_sub(1),
                chart_count: 2 * m,
            })
        }
        AtlasKind::Torus(m) => {
            if m < 1 {
                return Err(Error::UnsupportedAtlas("torus needs at least one circle".into()));
            }
            Ok(ChartAtlas { kind, ambient_dim: 2 * m, intrinsic_dim: m, chart_count: 1 << m })
        }
        AtlasKind::Cube(m) => {
            if m < 1 {
                return Err(Error::UnsupportedAtlas("cube needs dimension >= 1".into()));
            }
            Ok(ChartAtlas { kind, ambient_dim: m, intrinsic_dim: m, chart_count: 1 })
        }
    }
}

/// Parses an atlas id of the form `sphere-3`, `torus-2`, `cube-4`.
pub fn atlas_by_id(id: &str) -> Result<ChartAtlas> {
    let (name, dim) = id
        .rsplit_once('-')
        .ok_or_else(|| Error::UnsupportedAtlas(id.to_string()))?;
    let m: usize = dim.parse().map_err(|_| Error::UnsupportedAtlas(id.to_string()))?;
    match name {
        "sphere" => builtin_atlas(AtlasKind::Sphere(m)),
        "torus" => builtin_atlas(AtlasKind::Torus(m)),
        "cube" => builtin_atlas(AtlasKind::Cube(m)),
        _ => Err(Error::UnsupportedAtlas(id.to_string())),
    }
}

fn wrap_angle(t: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut a = t % two_pi;
    if a > std::f64::consts::PI {
        a -= two_pi;
    } else if a <= -std::f64::consts::PI {
        a += two_pi;
    }
    a
}

impl ChartAtlas {
    pub fn id(&self) -> String {
        match self.kind {
            AtlasKind::Sphere(m) => format!("sphere-{m}"),
            AtlasKind::Torus(m) => format!("torus-{m}"),
            AtlasKind::Cube(m) => format!("cube-{m}"),
        }
    }

    /// Chart forward map: parameters -> ambient point on the manifold.
    pub fn forward(&self, chart: usize, params: &[f64]) -> Vec<f64> {
        assert!(chart < self.chart_count, "chart index");
        assert_eq!(params.len(), self.intrinsic_dim, "parameter dimension");
        match self.kind {
            AtlasKind::Cube(_) => params.to_vec(),
            AtlasKind::Sphere(1) => {
                vec![if chart == 0 { 1.0 } else { -1.0 }]
            }
            AtlasKind::Sphere(m) => {
                let solved = chart / 2;
                let sign = if chart % 2 == 0 { 1.0 } else { -1.0 };
                let norm_sq: f64 = params.iter().map(|x| x * x).sum();
                let h = (1.0 - norm_sq).max(0.0).sqrt();
                let mut z = Vec::with_capacity(m);
                let mut it = params.iter();
                for i in 0..m {
                    if i == solved {
                        z.push(sign * h);
                    } else {
                        z.push(*it.next().unwrap());
                    }
                }
                z
            }
            AtlasKind::Torus(m) => {
                let mut z = Vec::with_capacity(2 * m);
                for (k, &u) in params.iter().enumerate() {
                    let center =
                        if (chart >> k) & 1 == 1 { std::f64::consts::PI } else { 0.0 };
                    let theta = center + std::f64::consts::PI * u;
                    z.push(theta.cos());
                    z.push(theta.sin());
                }
                z
            }
        }
    }

    /// Chart inverse on its patch. Returns `None` when the (manifold) point
    /// lies outside the chart's domain.
    pub fn inverse(&self, chart: usize, ambient: &[f64]) -> Option<Vec<f64>> {
        assert!(chart < self.chart_count, "chart index");
        assert_eq!(ambient.len(), self.ambient_dim, "ambient dimension");
        match self.kind {
            AtlasKind::Cube(_) => {
                if ambient.iter().all(|&z| z.abs() <= 1.0 + 1e-9) {
                    Some(ambient.to_vec())
                } else {
                    None
                }
            }
            AtlasKind::Sphere(1) => {
                let sign = if chart == 0 { 1.0 } else { -1.0 };
                if sign * ambient[0] > 0.0 {
                    Some(vec![])
                } else {
                    None
                }
            }
            AtlasKind::Sphere(_) => {
                let solved = chart / 2;
                let sign = if chart % 2 == 0 { 1.0 } else { -1.0 };
                if sign * ambient[solved] < SPHERE_DOMAIN_MIN - 1e-9 {
                    return None;
                }
                let mut params = Vec::with_capacity(self.intrinsic_dim);
                for (i, &z) in ambient.iter().enumerate() {
                    if i != solved {
                        params.push(z);
                    }
                }
                Some(params)
            }
            AtlasKind::Torus(m) => {
                let mut params = Vec::with_capacity(m);
                for k in 0..m {
                    let center =
                        if (chart >> k) & 1 == 1 { std::f64::consts::PI } else { 0.0 };
                    let theta = ambient[2 * k + 1].atan2(ambient[2 * k]);
                    let u = wrap_angle(theta - center) / std::f64::consts::PI;
                    if u.abs() > TORUS_DOMAIN_MAX + 1e-9 {
                        return None;
                    }
                    params.push(u);
                }
                Some(params)
            }
        }
    }

    /// Owning chart for a manifold point: the applicable chart with the
    /// largest domain margin, ties toward the lowest chart index.
    pub fn owner(&self, ambient: &[f64]) -> Result<(usize, f64)> {
        match self.kind {
            AtlasKind::Cube(_) => {
                let margin =
                    ambient.iter().map(|&z| 1.0 - z.abs()).fold(f64::INFINITY, f64::min);
                Ok((0, margin.max(0.0)))
            }
            AtlasKind::Sphere(1) => {
                if ambient[0] > 0.0 {
                    Ok((0, ambient[0]))
                } else {
                    Ok((1, -ambient[0]))
                }
            }
            AtlasKind::Sphere(m) => {
                let mut best: Option<(usize, f64)> = None;
                for i in 0..m {
                    for (s_idx, sign) in [1.0f64, -1.0].iter().enumerate() {
                        let margin = sign * ambient[i] - SPHERE_OWN_MIN;
                        let chart = 2 * i + s_idx;
                        if margin >= 0.0 {
                            match best {
                                Some((_, bm)) if bm >= margin => {}
                                _ => best = Some((chart, margin)),
                            }
                        }
                    }
                }
                best.ok_or_else(|| Error::ChartCoverage(ambient.to_vec()))
            }
            AtlasKind::Torus(m) => {
                let mut chart = 0usize;
                let mut margin = f64::INFINITY;
                for k in 0..m {
                    let theta = ambient[2 * k + 1].atan2(ambient[2 * k]);
                    let u0 = wrap_angle(theta) / std::f64::consts::PI;
                    let branch = if u0.abs() <= TORUS_OWN_MAX { 0usize } else { 1 };
                    let u = if branch == 0 {
                        u0
                    } else {
                        wrap_angle(theta - std::f64::consts::PI) / std::f64::consts::PI
                    };
                    chart |= branch << k;
                    margin = margin.min(TORUS_DOMAIN_MAX - u.abs());
                }
                Ok((chart, margin))
            }
        }
    }

    /// Parameter-space radius guaranteeing that a parameter move of this
    /// size (per coordinate) keeps each ambient coordinate within `delta`
    /// and stays inside the chart domain. Computed from explicit Lipschitz
    /// bounds of the builtin charts.
    pub fn parameter_radius(&self, delta: f64) -> f64 {
        match self.kind {
            AtlasKind::Cube(_) => delta.min(1.0),
            AtlasKind::Sphere(1) => 1.0,
            AtlasKind::Sphere(_) => {
                let d = self.intrinsic_dim as f64;
                // Gradient bound of sqrt(1 - |x|^2) on the widened domain.
                let r_dom = (1.0 - SPHERE_DOMAIN_MIN * SPHERE_DOMAIN_MIN).sqrt();
                let lips = r_dom / SPHERE_DOMAIN_MIN;
                let own_radius = (1.0 - SPHERE_OWN_MIN * SPHERE_OWN_MIN).sqrt();
                let slack = (r_dom - own_radius) / d.sqrt();
                (delta / (lips * d.sqrt())).min(slack).min(1.0)
            }
            AtlasKind::Torus(_) => {
                // d(cos(c + pi u))/du is bounded by pi; each angle only
                // moves its own coordinate pair.
                (delta / std::f64::consts::PI).min(TORUS_DOMAIN_MAX - TORUS_OWN_MAX)
            }
        }
    }

    /// Euclidean distance from a point in R^m to the manifold.
    pub fn manifold_distance(&self, p: &[f64]) -> f64 {
        assert_eq!(p.len(), self.ambient_dim);
        match self.kind {
            AtlasKind::Cube(_) => p
                .iter()
                .map(|&z| (z.abs() - 1.0).max(0.0).powi(2))
                .sum::<f64>()
                .sqrt(),
            AtlasKind::Sphere(_) => {
                let r = p.iter().map(|&z| z * z).sum::<f64>().sqrt();
                (r - 1.0).abs()
            }
            AtlasKind::Torus(m) => {
                let mut s = 0.0;
                for k in 0..m {
                    let r = (p[2 * k] * p[2 * k] + p[2 * k + 1] * p[2 * k + 1]).sqrt();
                    s += (r - 1.0) * (r - 1.0);
                }
                s.sqrt()
            }
        }
    }

    /// Nearest manifold point in the Euclidean metric.
    pub fn project(&self, p: &[f64]) -> Result<Vec<f64>> {
        match self.kind {
            AtlasKind::Cube(_) => Ok(p.iter().map(|&z| z.clamp(-1.0, 1.0)).collect()),
            AtlasKind::Sphere(_) => {
                let r = p.iter().map(|&z| z * z).sum::<f64>().sqrt();
                if r == 0.0 {
                    return Err(Error::OffManifold(p.to_vec(), 1.0));
                }
                Ok(p.iter().map(|&z| z / r).collect())
            }
            AtlasKind::Torus(m) => {
                let mut out = Vec::with_capacity(2 * m);
                for k in 0..m {
                    let (x, y) = (p[2 * k], p[2 * k + 1]);
                    let r = (x * x + y * y).sqrt();
                    if r == 0.0 {
                        return Err(Error::OffManifold(p.to_vec(), 1.0));
                    }
                    out.push(x / r);
                    out.push(y / r);
                }
                Ok(out)
            }
        }
    }

    /// Uniform-ish random manifold point; used by coverage tests and the
    /// instance generator.
    pub fn sample(&self, rng: &mut rand_chacha::ChaCha8Rng) -> Vec<f64> {
        use rand::Rng;
        use rand_distr::StandardNormal;
        match self.kind {
            AtlasKind::Cube(m) => (0..m).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect(),
            AtlasKind::Sphere(m) => loop {
                let v: Vec<f64> = (0..m).map(|_| rng.sample(StandardNormal)).collect();
                let r = v.iter().map(|&z| z * z).sum::<f64>().sqrt();
                if r > 1e-6 {
                    return v.iter().map(|&z| z / r).collect();
                }
            },
            AtlasKind::Torus(m) => {
                let mut out = Vec::with_capacity(2 * m);
                for _ in 0..m {
                    let t = rng.random::<f64>() * 2.0 * std::f64::consts::PI;
                    out.push(t.cos());
                    out.push(t.sin());
                }
                out
            }
        }
    }
}

/// Snaps a nearby ambient point onto the manifold and reports the owning
/// chart with its parameters.
pub fn snap_to_manifold(p: &[f64], atlas: &ChartAtlas) -> Result<ManifoldPoint> {
    snap_to_manifold_with(p, atlas, tol::SNAP)
}

/// [`snap_to_manifold`] with an explicit distance tolerance.
pub fn snap_to_manifold_with(p: &[f64], atlas: &ChartAtlas, snap_tol: f64) -> Result<ManifoldPoint> {
    let dist = atlas.manifold_distance(p);
    if dist > snap_tol {
        return Err(Error::OffManifold(p.to_vec(), dist));
    }
    let ambient = atlas.project(p)?;
    let (chart_id, _) = atlas.owner(&ambient)?;
    let parameters = atlas
        .inverse(chart_id, &ambient)
        .ok_or_else(|| Error::ChartCoverage(ambient.clone()))?;
    Ok(ManifoldPoint { ambient, chart_id, parameters })
}

/// Output of [`manifold_cpma`]: the snapped tuple, the chart parameter
/// tuples, the shared decomposition and all per-eigenvalue chart data needed
/// to build chart-linear paths.
#[derive(Debug, Clone)]
pub struct ManifoldCpma {
    pub z_tilde: MatrixTuple,
    /// Chart parameters as a d-tuple of commuting hermitians.
    pub h: MatrixTuple,
    /// Parameter-space CPMA of `h`.
    pub h_tilde: MatrixTuple,
    /// Cell decomposition; labels live in parameter space (R^d).
    pub decomp: ProjectiveDecomposition,
    /// Owning chart per decomposition cell.
    pub chart_assignment: Vec<usize>,
    /// Ambient grid labels per cell (images of the parameter labels).
    pub ambient_labels: Vec<Vec<f64>>,
    /// Joint eigenbasis used throughout.
    pub basis: CMat,
    /// Per eigenvalue position: owning chart, original parameters, snapped
    /// parameters and snapped ambient point.
    pub point_charts: Vec<usize>,
    pub point_params: Vec<Vec<f64>>,
    pub point_params_snapped: Vec<Vec<f64>>,
    pub point_ambient_snapped: Vec<Vec<f64>>,
    /// Effective parameter-space grid radius used.
    pub parameter_delta: f64,
}

/// CPMA of a commuting hermitian tuple whose joint spectrum lies on the
/// manifold, snapping in chart parameter space so the approximant's joint
/// spectrum stays exactly on chart images.
pub fn manifold_cpma(z: &MatrixTuple, delta: f64, atlas: &ChartAtlas) -> Result<ManifoldCpma> {
    if z.m() != atlas.ambient_dim {
        return Err(Error::DimensionMismatch(format!(
            "tuple arity {} vs atlas ambient dimension {}",
            z.m(),
            atlas.ambient_dim
        )));
    }
    if !(delta > 0.0) {
        return Err(Error::GridParam(delta));
    }
    let scale = z.max_norm().max(1.0);
    let t = tol::COMMUTATOR_SCALE * scale;
    for (j, c) in z.components().iter().enumerate() {
        let skew = c - c.adjoint();
        if !num::within_tol(&skew, t) {
            return Err(Error::NotHermitian { index: j, defect: num::opnorm(&skew), tol: t });
        }
    }
    for j in 0..z.m() {
        for k in (j + 1)..z.m() {
            let comm = num::commutator(z.component(j), z.component(k));
            if !num::within_tol(&comm, t) {
                return Err(Error::NotCommuting { residual: num::opnorm(&comm), tol: t });
            }
        }
    }

    let (q, spectrum) = joint_diagonalize(z, tol::COMMUTATOR_SCALE)?;
    let n = z.n();
    let m = z.m();
    let d = atlas.intrinsic_dim;

    // Per-point chart data.
    let mut point_charts = Vec::with_capacity(n);
    let mut point_params = Vec::with_capacity(n);
    for point in &spectrum.points {
        let ambient: Vec<f64> = point.iter().map(|zv| zv.re).collect();
        let mp = snap_to_manifold(&ambient, atlas)?;
        point_charts.push(mp.chart_id);
        point_params.push(mp.parameters);
    }

    // Parameter-space snapping on the shared [-1,1]^d grid.
    let nu = atlas.parameter_radius(delta).min(1.0);
    let grid = build_grids(nu)?;
    let mut point_params_snapped = Vec::with_capacity(n);
    let mut point_ambient_snapped = Vec::with_capacity(n);
    for (c, params) in point_charts.iter().zip(&point_params) {
        let snapped: Vec<f64> = if d == 0 {
            vec![]
        } else {
            params.iter().map(|&v| grid.snap(v).1).collect()
        };
        point_ambient_snapped.push(atlas.forward(*c, &snapped));
        point_params_snapped.push(snapped);
    }

    // Cells keyed by (chart, parameter bins).
    let mut cells: BTreeMap<(usize, Vec<usize>), Vec<usize>> = BTreeMap::new();
    for k in 0..n {
        let bins: Vec<usize> = if d == 0 {
            vec![]
        } else {
            point_params[k].iter().map(|&v| grid.snap(v).0).collect()
        };
        cells.entry((point_charts[k], bins)).or_default().push(k);
    }

    let mut projectors = Vec::with_capacity(cells.len());
    let mut blocks = Vec::with_capacity(cells.len());
    let mut labels = Vec::with_capacity(cells.len());
    let mut chart_assignment = Vec::with_capacity(cells.len());
    let mut ambient_labels = Vec::with_capacity(cells.len());
    for ((chart, _bins), members) in &cells {
        let mut block = CMat::zeros(n, members.len());
        for (col, &k) in members.iter().enumerate() {
            block.set_column(col, &q.column(k));
        }
        projectors.push(&block * block.adjoint());
        blocks.push(block);
        let rep = members[0];
        labels.push(point_params_snapped[rep].clone());
        ambient_labels.push(point_ambient_snapped[rep].clone());
        chart_assignment.push(*chart);
    }
    let decomp = ProjectiveDecomposition { projectors, labels, m: d, n, blocks };

    // Assemble the parameter tuples and the snapped ambient tuple.
    let diag_tuple = |values: &dyn Fn(usize) -> f64| -> CMat {
        let dv = DVector::from_iterator(n, (0..n).map(|k| Complex64::new(values(k), 0.0)));
        &q * CMat::from_diagonal(&dv) * q.adjoint()
    };
    let mut h_comps = Vec::with_capacity(d);
    let mut ht_comps = Vec::with_capacity(d);
    for j in 0..d {
        h_comps.push(num::hermitize(&diag_tuple(&|k| point_params[k][j])));
        ht_comps.push(num::hermitize(&diag_tuple(&|k| point_params_snapped[k][j])));
    }
    let h = MatrixTuple::with_dim(n, h_comps, VarietyTag::None)?;
    let h_tilde = MatrixTuple::with_dim(n, ht_comps, VarietyTag::None)?;

    let mut zt_comps = Vec::with_capacity(m);
    for j in 0..m {
        zt_comps.push(num::hermitize(&diag_tuple(&|k| point_ambient_snapped[k][j])));
    }
    let z_tilde = MatrixTuple::with_dim(n, zt_comps, z.variety.clone())?;

    Ok(ManifoldCpma {
        z_tilde,
        h,
        h_tilde,
        decomp,
        chart_assignment,
        ambient_labels,
        basis: q,
        point_charts,
        point_params,
        point_params_snapped,
        point_ambient_snapped,
        parameter_delta: nu,
    })
}

/// Residual report for variety membership. Reports, never fails.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct VarietyReport {
    pub commutator_max: f64,
    /// Hermiticity defect for hermitian varieties, normality defect for
    /// normal ones.
    pub structure_max: f64,
    pub norm_excess_max: f64,
    /// Max distance of joint spectral points from the variety's manifold,
    /// when one applies and the joint spectrum is computable.
    pub manifold_distance: Option<f64>,
    /// Defining-equation residual (`||sum H_k^2 - 1||`,
    /// `max_k ||U_k U_k* - 1||`, `||sum S_k S_k* - 1||`), when one applies.
    pub defining_residual: Option<f64>,
}

impl VarietyReport {
    pub fn max_residual(&self) -> f64 {
        let mut r = self.commutator_max.max(self.structure_max).max(self.norm_excess_max);
        if let Some(v) = self.manifold_distance {
            r = r.max(v);
        }
        if let Some(v) = self.defining_residual {
            r = r.max(v);
        }
        r
    }
}

fn joint_spectrum_points(x: &MatrixTuple) -> Option<Vec<Vec<f64>>> {
    // Residual reporting must not fail on broken inputs; commutator_max
    // already exposes non-commuting tuples.
    let (_, spec) = joint_diagonalize(x, 1e-6).ok()?;
    Some(spec.points.iter().map(|p| p.iter().map(|z| z.re).collect()).collect())
}

fn lifted_spectrum_distance(x: &MatrixTuple, atlas: &ChartAtlas) -> Option<f64> {
    let lifted = crate::linalg::reim_interleave(x).ok()?;
    let pts = joint_spectrum_points(&lifted)?;
    Some(
        pts.iter()
            .map(|p| atlas.manifold_distance(p))
            .fold(0.0, f64::max),
    )
}

/// Membership residuals of a tuple against a variety.
pub fn variety_residuals(
    x: &MatrixTuple,
    variety: &VarietyTag,
    atlas: Option<&ChartAtlas>,
) -> VarietyReport {
    let commutator_max = x.commutator_max();
    let hermitian_like = matches!(
        variety,
        VarietyTag::Cube | VarietyTag::Sphere | VarietyTag::Manifold(_)
    );
    let structure_max =
        if hermitian_like { x.hermiticity_max() } else { x.normality_max() };
    let norm_excess_max = x
        .components()
        .iter()
        .map(|c| (num::opnorm(c) - 1.0).max(0.0))
        .fold(0.0, f64::max);

    let owned_atlas;
    let resolved_atlas: Option<&ChartAtlas> = match (variety, atlas) {
        (_, Some(a)) => Some(a),
        (VarietyTag::Sphere, None) => {
            owned_atlas = builtin_atlas(AtlasKind::Sphere(x.m())).ok();
            owned_atlas.as_ref()
        }
        (VarietyTag::Torus, None) => {
            owned_atlas = builtin_atlas(AtlasKind::Torus(x.m())).ok();
            owned_atlas.as_ref()
        }
        (VarietyTag::SphericalUnitary, None) => {
            owned_atlas = builtin_atlas(AtlasKind::Sphere(2 * x.m())).ok();
            owned_atlas.as_ref()
        }
        (VarietyTag::Manifold(id), None) => {
            owned_atlas = atlas_by_id(id).ok();
            owned_atlas.as_ref()
        }
        _ => None,
    };

    let manifold_distance = match (variety, resolved_atlas) {
        (VarietyTag::Sphere | VarietyTag::Manifold(_), Some(a)) => {
            joint_spectrum_points(x).map(|pts| {
                pts.iter().map(|p| a.manifold_distance(p)).fold(0.0, f64::max)
            })
        }
        (VarietyTag::Torus | VarietyTag::SphericalUnitary, Some(a)) => {
            lifted_spectrum_distance(x, a)
        }
        _ => None,
    };

    let defining_residual = match variety {
        VarietyTag::Sphere => {
            let mut s = CMat::zeros(x.n(), x.n());
            for c in x.components() {
                s += c * c;
            }
            Some(num::opnorm(&(s - num::identity(x.n()))))
        }
        VarietyTag::Torus => Some(
            x.components()
                .iter()
                .map(|c| num::opnorm(&(c * c.adjoint() - num::identity(x.n()))))
                .fold(0.0, f64::max),
        ),
        VarietyTag::SphericalUnitary => {
            let mut s = CMat::zeros(x.n(), x.n());
            for c in x.components() {
                s += c * c.adjoint();
            }
            Some(num::opnorm(&(s - num::identity(x.n()))))
        }
        _ => None,
    };

    VarietyReport {
        commutator_max,
        structure_max,
        norm_excess_max,
        manifold_distance,
        defining_residual,
    }
}
