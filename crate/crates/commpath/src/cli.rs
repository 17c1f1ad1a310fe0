//! Instance generation, perturbation, connection, certification and trace
//! export, plus the JSON file formats shared by all commands.
//!
//! All commands are pure functions of their arguments (seeds included):
//! identical invocations produce byte-identical files.

use nalgebra::DVector;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::interpolant::Budgets;
use crate::linalg::{joint_diagonalize, metric_eth, CMat, MatrixTuple, VarietyTag};
use crate::manifold::{atlas_by_id, builtin_atlas, variety_residuals, AtlasKind};
use crate::num;
use crate::paths::{
    connect_cube, connect_disk, connect_manifold, connect_sphere, connect_spherical_unitary,
    connect_torus, LiftKind, MatrixPath, PathSegment, TimedSegment,
};
use crate::tol::{self, Tolerances};
use crate::verify::{certify_path, PathCertificate};

// ---------------------------------------------------------------------------
// File formats
// ---------------------------------------------------------------------------

/// Flat row-major matrix entries as `[re, im]` pairs.
pub type MatrixDto = Vec<[f64; 2]>;

fn cmat_to_dto(a: &CMat) -> MatrixDto {
    let n = a.nrows();
    let mut out = Vec::with_capacity(n * n);
    for r in 0..n {
        for c in 0..n {
            let z = a[(r, c)];
            out.push([z.re, z.im]);
        }
    }
    out
}

fn dto_to_cmat(n: usize, dto: &MatrixDto) -> Result<CMat> {
    if dto.len() != n * n {
        return Err(Error::Schema(format!(
            "matrix entry count {} does not match n = {n}",
            dto.len()
        )));
    }
    let mut a = CMat::zeros(n, n);
    for r in 0..n {
        for c in 0..n {
            let [re, im] = dto[r * n + c];
            if !re.is_finite() || !im.is_finite() {
                return Err(Error::Schema("non-finite matrix entry".into()));
            }
            a[(r, c)] = Complex64::new(re, im);
        }
    }
    Ok(a)
}

/// Matrix tuple document: `{ n, m, variety, components }` with components
/// stored row-major as `[re, im]` pairs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TupleDto {
    pub n: usize,
    pub m: usize,
    pub variety: String,
    pub components: Vec<MatrixDto>,
}

impl TupleDto {
    pub fn from_tuple(t: &MatrixTuple) -> TupleDto {
        TupleDto {
            n: t.n(),
            m: t.m(),
            variety: t.variety.as_str(),
            components: t.components().iter().map(cmat_to_dto).collect(),
        }
    }

    pub fn to_tuple(&self) -> Result<MatrixTuple> {
        if self.components.len() != self.m {
            return Err(Error::Schema(format!(
                "component count {} does not match m = {}",
                self.components.len(),
                self.m
            )));
        }
        let comps = self
            .components
            .iter()
            .map(|c| dto_to_cmat(self.n, c))
            .collect::<Result<Vec<_>>>()?;
        MatrixTuple::with_dim(self.n, comps, VarietyTag::parse(&self.variety)?)
    }
}

/// Provenance block carried by instance files; free-form but deterministic.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub params: BTreeMap<String, String>,
}

impl Provenance {
    fn new(command: &str, params: BTreeMap<String, String>) -> Provenance {
        Provenance {
            tool: "commpath".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            params,
        }
    }
}

/// Instance file: one or two tuples plus seed and provenance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstanceFile {
    pub schema: String,
    pub seed: u64,
    pub provenance: Provenance,
    pub tuples: Vec<TupleDto>,
}

pub const INSTANCE_SCHEMA: &str = "commpath-instance-v1";
pub const PATH_SCHEMA: &str = "commpath-path-v1";
pub const TRACE_SCHEMA: &str = "commpath-trace-v1";

impl InstanceFile {
    pub fn tuple(&self, i: usize) -> Result<MatrixTuple> {
        self.tuples
            .get(i)
            .ok_or_else(|| Error::Schema(format!("instance holds {} tuple(s)", self.tuples.len())))?
            .to_tuple()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SegmentDto {
    Constant { x: TupleDto },
    HermitianLinear { from: TupleDto, to: TupleDto },
    Rotation { x: TupleDto, generator: MatrixDto, end: TupleDto },
    ChartLinear {
        atlas: String,
        basis: MatrixDto,
        charts: Vec<usize>,
        start_params: Vec<Vec<f64>>,
        end_params: Vec<Vec<f64>>,
        from: TupleDto,
        to: TupleDto,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimedSegmentDto {
    pub t_lo: f64,
    pub t_hi: f64,
    #[serde(flatten)]
    pub segment: SegmentDto,
}

/// Path file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PathFile {
    pub schema: String,
    pub variety: String,
    pub lift: String,
    pub epsilon: f64,
    pub budgets: Budgets,
    pub base: TupleDto,
    pub start: TupleDto,
    pub end: TupleDto,
    pub segments: Vec<TimedSegmentDto>,
}

fn segment_to_dto(seg: &PathSegment) -> SegmentDto {
    match seg {
        PathSegment::Constant { x } => SegmentDto::Constant { x: TupleDto::from_tuple(x) },
        PathSegment::HermitianLine { from, to } => SegmentDto::HermitianLinear {
            from: TupleDto::from_tuple(from),
            to: TupleDto::from_tuple(to),
        },
        PathSegment::Rotation { x_tilde, generator, end, .. } => SegmentDto::Rotation {
            x: TupleDto::from_tuple(x_tilde),
            generator: cmat_to_dto(generator),
            end: TupleDto::from_tuple(end),
        },
        PathSegment::ChartLine { atlas_id, basis, charts, start_params, end_params, from, to } => {
            SegmentDto::ChartLinear {
                atlas: atlas_id.clone(),
                basis: cmat_to_dto(basis),
                charts: charts.clone(),
                start_params: start_params.clone(),
                end_params: end_params.clone(),
                from: TupleDto::from_tuple(from),
                to: TupleDto::from_tuple(to),
            }
        }
    }
}

fn dto_to_segment(dto: &SegmentDto) -> Result<PathSegment> {
    Ok(match dto {
        SegmentDto::Constant { x } => PathSegment::Constant { x: x.to_tuple()? },
        SegmentDto::HermitianLinear { from, to } => {
            PathSegment::HermitianLine { from: from.to_tuple()?, to: to.to_tuple()? }
        }
        SegmentDto::Rotation { x, generator, end } => {
            let xt = x.to_tuple()?;
            let g = dto_to_cmat(xt.n(), generator)?;
            PathSegment::rotation(xt, g, end.to_tuple()?)
        }
        SegmentDto::ChartLinear { atlas, basis, charts, start_params, end_params, from, to } => {
            let f = from.to_tuple()?;
            PathSegment::ChartLine {
                atlas_id: atlas.clone(),
                basis: dto_to_cmat(f.n(), basis)?,
                charts: charts.clone(),
                start_params: start_params.clone(),
                end_params: end_params.clone(),
                from: f,
                to: to.to_tuple()?,
            }
        }
    })
}

pub fn path_to_file(path: &MatrixPath) -> PathFile {
    PathFile {
        schema: PATH_SCHEMA.into(),
        variety: path.variety.as_str(),
        lift: path.lift.as_str().into(),
        epsilon: path.epsilon,
        budgets: path.budgets,
        base: TupleDto::from_tuple(&path.base),
        start: TupleDto::from_tuple(&path.start),
        end: TupleDto::from_tuple(&path.end),
        segments: path
            .segments
            .iter()
            .map(|ts| TimedSegmentDto {
                t_lo: ts.lo,
                t_hi: ts.hi,
                segment: segment_to_dto(&ts.segment),
            })
            .collect(),
    }
}

pub fn file_to_path(file: &PathFile) -> Result<MatrixPath> {
    if file.schema != PATH_SCHEMA {
        return Err(Error::Schema(format!("unexpected path schema '{}'", file.schema)));
    }
    let segments = file
        .segments
        .iter()
        .map(|ts| {
            Ok(TimedSegment { segment: dto_to_segment(&ts.segment)?, lo: ts.t_lo, hi: ts.t_hi })
        })
        .collect::<Result<Vec<_>>>()?;
    if segments.is_empty() {
        return Err(Error::Schema("path holds no segments".into()));
    }
    Ok(MatrixPath {
        segments,
        variety: VarietyTag::parse(&file.variety)?,
        lift: LiftKind::parse(&file.lift)?,
        base: file.base.to_tuple()?,
        epsilon: file.epsilon,
        budgets: file.budgets,
        start: file.start.to_tuple()?,
        end: file.end.to_tuple()?,
    })
}

// ---------------------------------------------------------------------------
// IO helpers
// ---------------------------------------------------------------------------

pub fn write_json<T: Serialize>(value: &T, out: &Path) -> Result<()> {
    let mut buf = serde_json::to_vec(value).map_err(|e| Error::Schema(e.to_string()))?;
    buf.push(b'\n');
    std::fs::write(out, buf)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let data = std::fs::read(path)?;
    serde_json::from_slice(&data).map_err(|e| Error::Schema(e.to_string()))
}

pub fn read_instance(path: &Path) -> Result<InstanceFile> {
    let inst: InstanceFile = read_json(path)?;
    if inst.schema != INSTANCE_SCHEMA {
        return Err(Error::Schema(format!("unexpected instance schema '{}'", inst.schema)));
    }
    Ok(inst)
}

pub fn read_path_file(path: &Path) -> Result<MatrixPath> {
    let file: PathFile = read_json(path)?;
    file_to_path(&file)
}

// ---------------------------------------------------------------------------
// gen
// ---------------------------------------------------------------------------

/// Draws a random joint spectrum on the variety's spectral set, conjugates
/// by a Haar-random basis, and returns a tuple passing the membership
/// residuals at 1e-10.
pub fn generate_tuple(variety: &VarietyTag, n: usize, m: usize, seed: u64) -> Result<MatrixTuple> {
    if n == 0 || m == 0 {
        return Err(Error::InvalidArgument("n and m must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q = num::haar_unitary(n, &mut rng);
    let tuple = match variety {
        VarietyTag::Cube => {
            let comps: Vec<CMat> = (0..m)
                .map(|_| {
                    let vals: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
                    real_diag_conjugate(&q, &vals)
                })
                .collect();
            MatrixTuple::with_dim(n, comps, variety.clone())?
        }
        VarietyTag::Disk => {
            let mut comps = Vec::with_capacity(m);
            for _ in 0..m {
                let pts: Vec<Complex64> = (0..n)
                    .map(|_| {
                        let r = rng.random::<f64>().sqrt();
                        let a = rng.random::<f64>() * std::f64::consts::TAU;
                        Complex64::from_polar(r, a)
                    })
                    .collect();
                comps.push(complex_diag_conjugate(&q, &pts));
            }
            MatrixTuple::with_dim(n, comps, variety.clone())?
        }
        VarietyTag::Sphere => {
            let atlas = builtin_atlas(AtlasKind::Sphere(m))?;
            let pts: Vec<Vec<f64>> = (0..n).map(|_| atlas.sample(&mut rng)).collect();
            let comps: Vec<CMat> = (0..m)
                .map(|j| {
                    let vals: Vec<f64> = pts.iter().map(|p| p[j]).collect();
                    real_diag_conjugate(&q, &vals)
                })
                .collect();
            MatrixTuple::with_dim(n, comps, variety.clone())?
        }
        VarietyTag::Torus => {
            let mut comps = Vec::with_capacity(m);
            for _ in 0..m {
                let pts: Vec<Complex64> = (0..n)
                    .map(|_| Complex64::from_polar(1.0, rng.random::<f64>() * std::f64::consts::TAU))
                    .collect();
                comps.push(complex_diag_conjugate(&q, &pts));
            }
            MatrixTuple::with_dim(n, comps, variety.clone())?
        }
        VarietyTag::SphericalUnitary => {
            let atlas = builtin_atlas(AtlasKind::Sphere(2 * m))?;
            let pts: Vec<Vec<f64>> = (0..n).map(|_| atlas.sample(&mut rng)).collect();
            let comps: Vec<CMat> = (0..m)
                .map(|j| {
                    let vals: Vec<Complex64> =
                        pts.iter().map(|p| Complex64::new(p[2 * j], p[2 * j + 1])).collect();
                    complex_diag_conjugate(&q, &vals)
                })
                .collect();
            MatrixTuple::with_dim(n, comps, variety.clone())?
        }
        VarietyTag::Manifold(id) => {
            let atlas = atlas_by_id(id)?;
            if atlas.ambient_dim != m {
                return Err(Error::InvalidArgument(format!(
                    "atlas {id} has ambient dimension {}, got m = {m}",
                    atlas.ambient_dim
                )));
            }
            let pts: Vec<Vec<f64>> = (0..n).map(|_| atlas.sample(&mut rng)).collect();
            let comps: Vec<CMat> = (0..m)
                .map(|j| {
                    let vals: Vec<f64> = pts.iter().map(|p| p[j]).collect();
                    real_diag_conjugate(&q, &vals)
                })
                .collect();
            MatrixTuple::with_dim(n, comps, variety.clone())?
        }
        VarietyTag::None => {
            return Err(Error::InvalidArgument("gen needs a concrete variety".into()))
        }
    };
    let rep = variety_residuals(&tuple, variety, None);
    if rep.max_residual() > tol::ALGEBRAIC {
        return Err(Error::InvalidArgument(format!(
            "generated tuple misses the variety: residual {:.3e}",
            rep.max_residual()
        )));
    }
    Ok(tuple)
}

fn real_diag_conjugate(q: &CMat, vals: &[f64]) -> CMat {
    let d = CMat::from_diagonal(&DVector::from_iterator(
        vals.len(),
        vals.iter().map(|&v| Complex64::new(v, 0.0)),
    ));
    num::hermitize(&(q * d * q.adjoint()))
}

fn complex_diag_conjugate(q: &CMat, vals: &[Complex64]) -> CMat {
    // Conjugate the hermitian parts separately so both stay exactly
    // hermitian and the result is normal to machine precision.
    let re: Vec<f64> = vals.iter().map(|z| z.re).collect();
    let im: Vec<f64> = vals.iter().map(|z| z.im).collect();
    let a = real_diag_conjugate(q, &re);
    let b = real_diag_conjugate(q, &im);
    a + b.map(|z| z * Complex64::new(0.0, 1.0))
}

/// `gen` command: random instance on a variety.
pub fn cmd_gen(variety: &str, n: usize, m: usize, seed: u64, out: &Path) -> Result<InstanceFile> {
    let tag = VarietyTag::parse(variety)?;
    let tuple = generate_tuple(&tag, n, m, seed)?;
    let mut params = BTreeMap::new();
    params.insert("variety".into(), variety.to_string());
    params.insert("n".into(), n.to_string());
    params.insert("m".into(), m.to_string());
    params.insert("seed".into(), seed.to_string());
    let inst = InstanceFile {
        schema: INSTANCE_SCHEMA.into(),
        seed,
        provenance: Provenance::new("gen", params),
        tuples: vec![TupleDto::from_tuple(&tuple)],
    };
    write_json(&inst, out)?;
    Ok(inst)
}

// ---------------------------------------------------------------------------
// perturb
// ---------------------------------------------------------------------------

/// Second tuple on the same variety with `eth <= delta`: joint spectral
/// points move inside the spectral set and the basis rotates by a small
/// unitary, with the step sizes shrunk until the budget holds.
pub fn perturb_tuple(x: &MatrixTuple, delta: f64, seed: u64) -> Result<(MatrixTuple, f64)> {
    if !(0.0..=2.0).contains(&delta) {
        return Err(Error::InvalidArgument(format!("infeasible delta {delta}")));
    }
    if delta == 0.0 {
        return Ok((x.clone(), 0.0));
    }
    let (q, spectrum) = joint_diagonalize(x, 1e-7)?;
    let n = x.n();
    let m = x.m();

    let mut spectral_step = 0.75 * delta;
    let mut eta = 0.25 * delta / 2.0;
    for _ in 0..40 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let moved: Vec<Vec<Complex64>> = spectrum
            .points
            .iter()
            .map(|p| move_point(p, &x.variety, spectral_step, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        // Rebuild on the same eigenprojectors, then rotate the basis.
        let hermitian_like =
            matches!(x.variety, VarietyTag::Cube | VarietyTag::Sphere | VarietyTag::Manifold(_));
        let mut comps = Vec::with_capacity(m);
        for j in 0..m {
            let vals: Vec<Complex64> = moved.iter().map(|p| p[j]).collect();
            if hermitian_like {
                let re: Vec<f64> = vals.iter().map(|z| z.re).collect();
                comps.push(real_diag_conjugate(&q, &re));
            } else {
                comps.push(complex_diag_conjugate(&q, &vals));
            }
        }
        let y0 = MatrixTuple::with_dim(n, comps, x.variety.clone())?;
        let k = num::random_hermitian_unit(n, &mut rng);
        let r = num::expi_hermitian(&k, eta);
        let y = y0.conjugate(&r).with_variety(x.variety.clone());
        let achieved = metric_eth(x, &y)?;
        if achieved <= delta {
            let rep = variety_residuals(&y, &x.variety, None);
            if rep.max_residual() > tol::ALGEBRAIC {
                return Err(Error::InvalidArgument(format!(
                    "perturbed tuple misses the variety: residual {:.3e}",
                    rep.max_residual()
                )));
            }
            return Ok((y, achieved));
        }
        spectral_step *= 0.7;
        eta *= 0.7;
    }
    Err(Error::InvalidArgument("perturbation failed to meet the eth budget".into()))
}

fn move_point(
    p: &[Complex64],
    variety: &VarietyTag,
    step: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Complex64>> {
    let real = |v: Vec<f64>| -> Vec<Complex64> {
        v.into_iter().map(|x| Complex64::new(x, 0.0)).collect()
    };
    Ok(match variety {
        VarietyTag::Cube => real(cube_step(&real_coords(p), step, rng)),
        VarietyTag::Disk => p
            .iter()
            .map(|z| {
                let s = step / 2.0f64.sqrt();
                let mut w = z
                    + Complex64::new(
                        (rng.random::<f64>() * 2.0 - 1.0) * s,
                        (rng.random::<f64>() * 2.0 - 1.0) * s,
                    );
                if w.norm() > 1.0 {
                    w /= Complex64::new(w.norm(), 0.0);
                }
                w
            })
            .collect(),
        VarietyTag::Torus => p
            .iter()
            .map(|z| {
                let theta = z.im.atan2(z.re) + (rng.random::<f64>() * 2.0 - 1.0) * step;
                Complex64::from_polar(1.0, theta)
            })
            .collect(),
        VarietyTag::Sphere => real(sphere_step(&real_coords(p), step, rng)),
        VarietyTag::Manifold(id) => {
            let atlas = atlas_by_id(id)?;
            let coords = real_coords(p);
            let moved = match atlas.kind {
                AtlasKind::Sphere(_) => sphere_step(&coords, step, rng),
                AtlasKind::Cube(_) => cube_step(&coords, step, rng),
                AtlasKind::Torus(mc) => {
                    let mut out = Vec::with_capacity(2 * mc);
                    for k in 0..mc {
                        let theta = coords[2 * k + 1].atan2(coords[2 * k])
                            + (rng.random::<f64>() * 2.0 - 1.0) * step;
                        out.push(theta.cos());
                        out.push(theta.sin());
                    }
                    out
                }
            };
            real(moved)
        }
        VarietyTag::SphericalUnitary => {
            let mut coords = Vec::with_capacity(2 * p.len());
            for z in p {
                coords.push(z.re);
                coords.push(z.im);
            }
            let moved = sphere_step(&coords, step, rng);
            (0..p.len()).map(|j| Complex64::new(moved[2 * j], moved[2 * j + 1])).collect()
        }
        VarietyTag::None => {
            return Err(Error::InvalidArgument("perturb needs a concrete variety".into()))
        }
    })
}

fn real_coords(p: &[Complex64]) -> Vec<f64> {
    p.iter().map(|z| z.re).collect()
}

fn cube_step(coords: &[f64], step: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    coords
        .iter()
        .map(|&v| (v + (rng.random::<f64>() * 2.0 - 1.0) * step).clamp(-1.0, 1.0))
        .collect()
}

fn sphere_step(coords: &[f64], step: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    if coords.len() == 1 {
        // The two-point sphere has no room to move.
        return coords.to_vec();
    }
    let mut moved: Vec<f64> = coords
        .iter()
        .map(|&v| v + (rng.random::<f64>() * 2.0 - 1.0) * step / 2.0)
        .collect();
    let r = moved.iter().map(|v| v * v).sum::<f64>().sqrt();
    if r > 0.0 {
        for v in &mut moved {
            *v /= r;
        }
        moved
    } else {
        coords.to_vec()
    }
}

/// `perturb` command: emits a pair file.
pub fn cmd_perturb(input: &Path, delta: f64, seed: u64, out: &Path) -> Result<InstanceFile> {
    let inst = read_instance(input)?;
    let x = inst.tuple(0)?;
    let (y, achieved) = perturb_tuple(&x, delta, seed)?;
    let mut params = BTreeMap::new();
    params.insert("delta".into(), delta.to_string());
    params.insert("seed".into(), seed.to_string());
    params.insert("achieved_eth".into(), format!("{achieved:.17e}"));
    params.insert("source".into(), input.display().to_string());
    let pair = InstanceFile {
        schema: INSTANCE_SCHEMA.into(),
        seed,
        provenance: Provenance::new("perturb", params),
        tuples: vec![TupleDto::from_tuple(&x), TupleDto::from_tuple(&y)],
    };
    write_json(&pair, out)?;
    Ok(pair)
}

// ---------------------------------------------------------------------------
// connect
// ---------------------------------------------------------------------------

/// Dispatches the connect operation by variety tag.
pub fn connect_by_variety(
    x: &MatrixTuple,
    y: &MatrixTuple,
    epsilon: f64,
) -> Result<MatrixPath> {
    if x.variety != y.variety {
        return Err(Error::InvalidArgument(format!(
            "pair varieties differ: {} vs {}",
            x.variety.as_str(),
            y.variety.as_str()
        )));
    }
    match &x.variety {
        VarietyTag::Cube => connect_cube(x, y, epsilon),
        VarietyTag::Disk => connect_disk(x, y, epsilon),
        VarietyTag::Sphere => connect_sphere(x, y, epsilon),
        VarietyTag::Torus => connect_torus(x, y, epsilon),
        VarietyTag::SphericalUnitary => connect_spherical_unitary(x, y, epsilon),
        VarietyTag::Manifold(id) => {
            let atlas = atlas_by_id(id)?;
            connect_manifold(x, y, epsilon, &atlas)
        }
        VarietyTag::None => Err(Error::InvalidArgument("pair carries no variety".into())),
    }
}

/// `connect` command: builds the path, certifies it, writes both files.
/// Returns the certificate; callers map `passed()` to the exit code.
pub fn cmd_connect(
    input: &Path,
    epsilon: f64,
    out: &Path,
    cert_out: &Path,
    tols: &Tolerances,
) -> Result<(MatrixPath, PathCertificate)> {
    let inst = read_instance(input)?;
    if inst.tuples.len() != 2 {
        return Err(Error::Schema(format!(
            "connect expects a pair instance, found {} tuple(s)",
            inst.tuples.len()
        )));
    }
    let x = inst.tuple(0)?;
    let y = inst.tuple(1)?;
    let path = connect_by_variety(&x, &y, epsilon)?;
    let cert = certify_path(&path, tols)?;
    write_json(&path_to_file(&path), out)?;
    write_json(&cert, cert_out)?;
    Ok((path, cert))
}

// ---------------------------------------------------------------------------
// trace
// ---------------------------------------------------------------------------

/// One row of a link trace: the position of one spectral point of one
/// component at one sample.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: f64,
    pub component: usize,
    pub eigenvalue: usize,
    pub point: Vec<f64>,
}

/// Spectral trajectories along a path, eigenvalues ordered consistently
/// across samples by nearest-neighbor continuation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinkTrace {
    pub schema: String,
    pub samples: usize,
    pub m: usize,
    pub n: usize,
    /// Point dimension per row: 2 (re, im) for normal varieties, m for
    /// hermitian ones.
    pub dim: usize,
    pub rows: Vec<TraceRow>,
}

/// Computes the trace of a path at `samples` evenly spaced parameters.
pub fn trace_path(path: &MatrixPath, samples: usize) -> Result<LinkTrace> {
    if samples < 2 {
        return Err(Error::InvalidArgument("trace needs at least two samples".into()));
    }
    let hermitian_like = matches!(
        path.variety,
        VarietyTag::Cube | VarietyTag::Sphere | VarietyTag::Manifold(_)
    );
    let n = path.base.n();
    let m = path.base.m();
    let dim = if hermitian_like { m } else { 2 };

    let mut prev: Option<Vec<Vec<Complex64>>> = None;
    let mut rows = Vec::with_capacity(samples * m * n);
    for s in 0..samples {
        let t = s as f64 / (samples - 1) as f64;
        let g = path.eval(t)?;
        let (_, spec) = joint_diagonalize(&g, 1e-6)?;
        let ordered = match &prev {
            None => spec.points.clone(),
            Some(before) => continue_ordering(before, &spec.points),
        };
        for (k, point) in ordered.iter().enumerate() {
            if hermitian_like {
                let coords: Vec<f64> = point.iter().map(|z| z.re).collect();
                for j in 0..m {
                    rows.push(TraceRow { t, component: j, eigenvalue: k, point: coords.clone() });
                }
            } else {
                for j in 0..m {
                    rows.push(TraceRow {
                        t,
                        component: j,
                        eigenvalue: k,
                        point: vec![point[j].re, point[j].im],
                    });
                }
            }
        }
        prev = Some(ordered);
    }
    Ok(LinkTrace { schema: TRACE_SCHEMA.into(), samples, m, n, dim, rows })
}

/// Greedy nearest-neighbor continuation: slot k of the previous sample
/// takes the closest unused new point, ties toward the lowest index.
fn continue_ordering(
    before: &[Vec<Complex64>],
    now: &[Vec<Complex64>],
) -> Vec<Vec<Complex64>> {
    let n = before.len();
    let mut used = vec![false; n];
    let mut out = Vec::with_capacity(n);
    for b in before {
        let mut best = usize::MAX;
        let mut best_d = f64::INFINITY;
        for (i, p) in now.iter().enumerate() {
            if used[i] {
                continue;
            }
            let d: f64 = b.iter().zip(p).map(|(x, y)| (x - y).norm_sqr()).sum();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        used[best] = true;
        out.push(now[best].clone());
    }
    out
}

pub fn write_trace_json(trace: &LinkTrace, out: &Path) -> Result<()> {
    write_json(trace, out)
}

pub fn write_trace_csv(trace: &LinkTrace, out: &Path) -> Result<()> {
    let mut f = std::fs::File::create(out)?;
    let mut header = String::from("t,component,eigenvalue");
    for d in 0..trace.dim {
        header.push_str(&format!(",x{}", d + 1));
    }
    writeln!(f, "{header}")?;
    for row in &trace.rows {
        let mut line = format!("{},{},{}", row.t, row.component, row.eigenvalue);
        for v in &row.point {
            line.push_str(&format!(",{v}"));
        }
        writeln!(f, "{line}")?;
    }
    Ok(())
}

/// `trace` command.
pub fn cmd_trace(input: &Path, samples: usize, format: &str, out: &Path) -> Result<LinkTrace> {
    let path = read_path_file(input)?;
    let trace = trace_path(&path, samples)?;
    match format {
        "json" => write_trace_json(&trace, out)?,
        "csv" => write_trace_csv(&trace, out)?,
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown trace format '{other}' (expected csv or json)"
            )))
        }
    }
    Ok(trace)
}

/// `verify` command: recertifies a path file.
pub fn cmd_verify(input: &Path, tols: &Tolerances, out: Option<&Path>) -> Result<PathCertificate> {
    let path = read_path_file(input)?;
    let cert = certify_path(&path, tols)?;
    if let Some(p) = out {
        write_json(&cert, p)?;
    }
    Ok(cert)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn gen_produces_valid_instances() {
        let dir = tempdir().unwrap();
        for (variety, n, m) in [
            ("cube", 8usize, 2usize),
            ("disk", 4, 2),
            ("sphere", 4, 3),
            ("torus", 4, 1),
            ("spherical-unitary", 4, 2),
            ("cube", 1, 1),
        ] {
            let out = dir.path().join(format!("{variety}-{n}-{m}.json"));
            let inst = cmd_gen(variety, n, m, 1, &out).unwrap();
            let x = inst.tuple(0).unwrap();
            let rep = variety_residuals(&x, &x.variety, None);
            assert!(rep.max_residual() < 1e-10, "{variety}: {rep:?}");
            // Round trip through the file is bit-exact.
            let back = read_instance(&out).unwrap();
            assert_eq!(back.tuple(0).unwrap().components(), x.components());
        }
    }

    #[test]
    fn gen_sphere_defining_equation() {
        let dir = tempdir().unwrap();
        let out = dir.path().join("s.json");
        let inst = cmd_gen("sphere", 4, 3, 7, &out).unwrap();
        let x = inst.tuple(0).unwrap();
        let mut acc = CMat::zeros(4, 4);
        for c in x.components() {
            acc += c * c;
        }
        assert!(num::opnorm(&(acc - num::identity(4))) < 1e-10);
    }

    #[test]
    fn perturb_respects_budget_and_variety() {
        let dir = tempdir().unwrap();
        for (variety, n, m, delta) in [
            ("cube", 8usize, 2usize, 0.01),
            ("sphere", 6, 3, 0.02),
            ("torus", 4, 2, 0.02),
            ("disk", 5, 2, 0.02),
            ("spherical-unitary", 4, 2, 0.02),
        ] {
            let gen_out = dir.path().join(format!("g-{variety}.json"));
            let pert_out = dir.path().join(format!("p-{variety}.json"));
            cmd_gen(variety, n, m, 3, &gen_out).unwrap();
            let pair = cmd_perturb(&gen_out, delta, 5, &pert_out).unwrap();
            let x = pair.tuple(0).unwrap();
            let y = pair.tuple(1).unwrap();
            let eth = metric_eth(&x, &y).unwrap();
            assert!(eth <= delta, "{variety}: eth {eth} > {delta}");
            assert!(eth > 0.0, "{variety}: perturbation had no effect");
            let rep = variety_residuals(&y, &y.variety, None);
            assert!(rep.max_residual() < 1e-10, "{variety}: {rep:?}");
        }
    }

    #[test]
    fn perturb_rejects_infeasible_delta() {
        let x = generate_tuple(&VarietyTag::Cube, 3, 1, 17).unwrap();
        assert!(perturb_tuple(&x, 3.0, 1).is_err());
        assert!(perturb_tuple(&x, -0.1, 1).is_err());
    }

    #[test]
    fn perturb_zero_delta_copies() {
        let dir = tempdir().unwrap();
        let gen_out = dir.path().join("g.json");
        let pert_out = dir.path().join("p.json");
        cmd_gen("cube", 4, 2, 9, &gen_out).unwrap();
        let pair = cmd_perturb(&gen_out, 0.0, 1, &pert_out).unwrap();
        assert_eq!(pair.tuples[0].components, pair.tuples[1].components);
    }

    #[test]
    fn connect_and_verify_round_trip() {
        let dir = tempdir().unwrap();
        let gen_out = dir.path().join("g.json");
        let pair_out = dir.path().join("p.json");
        let path_out = dir.path().join("path.json");
        let cert_out = dir.path().join("cert.json");
        cmd_gen("cube", 8, 2, 11, &gen_out).unwrap();
        cmd_perturb(&gen_out, 0.01, 13, &pair_out).unwrap();
        let (path, cert) =
            cmd_connect(&pair_out, 0.5, &path_out, &cert_out, &Tolerances::default()).unwrap();
        assert!(cert.passed(), "{:?}", cert.first_failure);

        // File round trip evaluates identically.
        let reloaded = read_path_file(&path_out).unwrap();
        for &t in &[0.0, 0.31, 0.77, 1.0] {
            let a = path.eval(t).unwrap();
            let b = reloaded.eval(t).unwrap();
            assert_eq!(a.components(), b.components(), "t={t}");
        }
        // Re-verification from the file gives the same verdict.
        let cert2 = cmd_verify(&path_out, &Tolerances::default(), None).unwrap();
        assert!(cert2.passed());
        assert_eq!(
            serde_json::to_string(&cert).unwrap(),
            serde_json::to_string(&cert2).unwrap()
        );
    }

    #[test]
    fn determinism_byte_identical_outputs() {
        let dir = tempdir().unwrap();
        let a = dir.path().join("a.json");
        let b = dir.path().join("b.json");
        cmd_gen("sphere", 6, 3, 42, &a).unwrap();
        cmd_gen("sphere", 6, 3, 42, &b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    #[test]
    fn trace_of_constant_path_repeats_polylines() {
        let dir = tempdir().unwrap();
        let gen_out = dir.path().join("g.json");
        cmd_gen("disk", 3, 1, 21, &gen_out).unwrap();
        let inst = read_instance(&gen_out).unwrap();
        let x = inst.tuple(0).unwrap();
        let p = MatrixPath::constant(x);
        let trace = trace_path(&p, 5).unwrap();
        assert_eq!(trace.rows.len(), 5 * 1 * 3);
        assert_eq!(trace.dim, 2);
        // Every eigenvalue stays put.
        for k in 0..3 {
            let pts: Vec<&TraceRow> =
                trace.rows.iter().filter(|r| r.eigenvalue == k).collect();
            for w in pts.windows(2) {
                assert!(w[0].t <= w[1].t);
                let d: f64 = w[0]
                    .point
                    .iter()
                    .zip(&w[1].point)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                assert!(d < 1e-9);
            }
        }
    }

    #[test]
    fn schema_errors_are_reported() {
        let dir = tempdir().unwrap();
        let bad = dir.path().join("bad.json");
        std::fs::write(&bad, b"{\"schema\": \"nope\"}").unwrap();
        assert!(matches!(read_instance(&bad), Err(Error::Schema(_))));
        let garbage = dir.path().join("garbage.json");
        std::fs::write(&garbage, b"not json").unwrap();
        assert!(matches!(read_instance(&garbage), Err(Error::Schema(_))));
    }
}
