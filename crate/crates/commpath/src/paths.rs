//! Typed path segments, concatenation, and the per-variety connect
//! operations.
//!
//! A path between nearby tuples X and Y is assembled from four segments:
//! a straight hermitian line from X to its grid approximant, a rotation
//! carrying the approximant onto its image in Y's eigenbasis, a line from
//! that image to the aligned tuple `Psi(X)`, and a final line to Y. Normal
//! varieties (disk, torus, spherical unitaries) run the same construction
//! on a hermitian lift and push the result down through the juncture.

use nalgebra::DVector;
use num_complex::Complex64;
use once_cell::sync::OnceCell;

use crate::error::{Error, Result};
use crate::interpolant::{build_interpolant_parts, Budgets};
use crate::linalg::{
    hermitian_partition, juncture, metric_eth, reim_interleave, reim_juncture, CMat, MatrixTuple,
    VarietyTag,
};
use crate::manifold::{atlas_by_id, builtin_atlas, snap_to_manifold_with, AtlasKind, ChartAtlas};
use crate::num;
use crate::tol;

/// How segment values map to the path's variety space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LiftKind {
    /// Segments already live in the variety.
    None,
    /// Segments live on hermitian partitions `(H_1..H_m, H_{m+1}..H_{2m})`;
    /// values push down through the juncture.
    Blocks,
    /// Segments live on interleaved `(Re X_1, Im X_1, ...)` lifts.
    Interleaved,
}

impl LiftKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            LiftKind::None => "none",
            LiftKind::Blocks => "blocks",
            LiftKind::Interleaved => "interleaved",
        }
    }

    pub fn parse(s: &str) -> Result<LiftKind> {
        Ok(match s {
            "none" => LiftKind::None,
            "blocks" => LiftKind::Blocks,
            "interleaved" => LiftKind::Interleaved,
            other => return Err(Error::InvalidArgument(format!("unknown lift kind '{other}'"))),
        })
    }
}

/// One typed piece of a path, parametrized over its own `[0, 1]`.
#[derive(Debug, Clone)]
pub enum PathSegment {
    Constant {
        x: MatrixTuple,
    },
    /// `(1-t) from + t to`, valid when all components commute across the
    /// endpoints.
    HermitianLine {
        from: MatrixTuple,
        to: MatrixTuple,
    },
    /// `Ad[exp(i pi t H / 2)](x_tilde)`.
    Rotation {
        x_tilde: MatrixTuple,
        generator: CMat,
        end: MatrixTuple,
        #[allow(clippy::type_complexity)]
        cache: OnceCell<(CMat, Vec<f64>)>,
    },
    /// Per joint-eigenvalue chart interpolation in a shared eigenbasis:
    /// position i moves along `phi_{c_i}((1-t) p_i + t q_i)`.
    ChartLine {
        atlas_id: String,
        basis: CMat,
        charts: Vec<usize>,
        start_params: Vec<Vec<f64>>,
        end_params: Vec<Vec<f64>>,
        from: MatrixTuple,
        to: MatrixTuple,
    },
}

impl PathSegment {
    pub fn rotation(x_tilde: MatrixTuple, generator: CMat, end: MatrixTuple) -> PathSegment {
        PathSegment::Rotation { x_tilde, generator, end, cache: OnceCell::new() }
    }

    pub fn start(&self) -> &MatrixTuple {
        match self {
            PathSegment::Constant { x } => x,
            PathSegment::HermitianLine { from, .. } => from,
            PathSegment::Rotation { x_tilde, .. } => x_tilde,
            PathSegment::ChartLine { from, .. } => from,
        }
    }

    pub fn end(&self) -> &MatrixTuple {
        match self {
            PathSegment::Constant { x } => x,
            PathSegment::HermitianLine { to, .. } => to,
            PathSegment::Rotation { end, .. } => end,
            PathSegment::ChartLine { to, .. } => to,
        }
    }

    fn snap_start(&mut self, value: MatrixTuple) {
        match self {
            PathSegment::Constant { x } => *x = value,
            PathSegment::HermitianLine { from, .. } => *from = value,
            PathSegment::Rotation { x_tilde, cache, .. } => {
                *x_tilde = value;
                *cache = OnceCell::new();
            }
            PathSegment::ChartLine { from, .. } => *from = value,
        }
    }

    /// Evaluates the segment at its local parameter. The stored endpoint
    /// tuples come back bitwise at 0 and 1.
    pub fn eval(&self, s: f64) -> Result<MatrixTuple> {
        if !(0.0..=1.0).contains(&s) {
            return Err(Error::ParamOutOfRange(s));
        }
        if s == 0.0 {
            return Ok(self.start().clone());
        }
        if s == 1.0 {
            return Ok(self.end().clone());
        }
        match self {
            PathSegment::Constant { x } => Ok(x.clone()),
            PathSegment::HermitianLine { from, to } => {
                let comps: Vec<CMat> = from
                    .components()
                    .iter()
                    .zip(to.components())
                    .map(|(f, t)| f.map(|z| z * (1.0 - s)) + t.map(|z| z * s))
                    .collect();
                MatrixTuple::with_dim(from.n(), comps, from.variety.clone())
            }
            PathSegment::Rotation { x_tilde, generator, cache, .. } => {
                let (q, phases) = cache.get_or_init(|| {
                    let (q, evals) = num::eigh(generator);
                    let phases: Vec<f64> =
                        evals.iter().map(|&e| std::f64::consts::FRAC_PI_2 * e).collect();
                    (q, phases)
                });
                let d = DVector::from_iterator(
                    phases.len(),
                    phases.iter().map(|&p| Complex64::from_polar(1.0, s * p)),
                );
                let u = q * CMat::from_diagonal(&d) * q.adjoint();
                Ok(x_tilde.conjugate(&u))
            }
            PathSegment::ChartLine { atlas_id, basis, charts, start_params, end_params, from, .. } => {
                let atlas = atlas_by_id(atlas_id)?;
                let n = basis.nrows();
                let m = atlas.ambient_dim;
                let mut diags: Vec<Vec<f64>> = vec![vec![0.0; n]; m];
                for i in 0..n {
                    let p: Vec<f64> = start_params[i]
                        .iter()
                        .zip(&end_params[i])
                        .map(|(a, b)| (1.0 - s) * a + s * b)
                        .collect();
                    let z = atlas.forward(charts[i], &p);
                    for k in 0..m {
                        diags[k][i] = z[k];
                    }
                }
                let comps: Vec<CMat> = (0..m)
                    .map(|k| {
                        let d = DVector::from_iterator(
                            n,
                            diags[k].iter().map(|&v| Complex64::new(v, 0.0)),
                        );
                        num::hermitize(&(basis * CMat::from_diagonal(&d) * basis.adjoint()))
                    })
                    .collect();
                MatrixTuple::with_dim(n, comps, from.variety.clone())
            }
        }
    }

    /// Structural checks used when segments are assembled by a connect
    /// operation (deserialized paths are instead judged by certification).
    pub fn validate(&self) -> Result<()> {
        match self {
            PathSegment::Constant { .. } => Ok(()),
            PathSegment::HermitianLine { from, to } => {
                if from.n() != to.n() || from.m() != to.m() {
                    return Err(Error::DimensionMismatch("hermitian line endpoints".into()));
                }
                let scale = from.max_norm().max(to.max_norm()).max(1.0);
                let guard = tol::COMMUTATOR_SCALE * scale;
                for (j, f) in from.components().iter().enumerate() {
                    let d = num::hermiticity_defect(f);
                    if d > guard {
                        return Err(Error::NotHermitian { index: j, defect: d, tol: guard });
                    }
                }
                for (j, f) in from.components().iter().enumerate() {
                    for (k, t) in to.components().iter().enumerate() {
                        let c = num::opnorm(&num::commutator(f, t));
                        if c > guard {
                            return Err(Error::NotCommuting { residual: c, tol: guard });
                        }
                        let _ = (j, k);
                    }
                }
                Ok(())
            }
            PathSegment::Rotation { x_tilde, generator, end, .. } => {
                if generator.nrows() != x_tilde.n() {
                    return Err(Error::DimensionMismatch("rotation generator size".into()));
                }
                let d = num::hermiticity_defect(generator);
                if d > tol::ALGEBRAIC {
                    return Err(Error::NotHermitian { index: 0, defect: d, tol: tol::ALGEBRAIC });
                }
                // The stored end is the t -> 1 limit.
                let reached = self.eval_interior_end()?;
                let gap = metric_eth(&reached, end)?;
                if gap > tol::ALGEBRAIC {
                    return Err(Error::EndpointMismatch(gap));
                }
                Ok(())
            }
            PathSegment::ChartLine { basis, charts, start_params, end_params, from, to, atlas_id } => {
                let atlas = atlas_by_id(atlas_id)?;
                let n = basis.nrows();
                if charts.len() != n || start_params.len() != n || end_params.len() != n {
                    return Err(Error::DimensionMismatch("chart line point data".into()));
                }
                for p in start_params.iter().chain(end_params.iter()) {
                    if p.len() != atlas.intrinsic_dim {
                        return Err(Error::DimensionMismatch("chart parameter dimension".into()));
                    }
                }
                if from.m() != atlas.ambient_dim || to.m() != atlas.ambient_dim {
                    return Err(Error::DimensionMismatch("chart line arity".into()));
                }
                Ok(())
            }
        }
    }

    fn eval_interior_end(&self) -> Result<MatrixTuple> {
        // Interior formula evaluated at s = 1 (bypassing the stored-endpoint
        // branch), used to confirm junction continuity.
        match self {
            PathSegment::Rotation { x_tilde, generator, .. } => {
                let u = num::expi_hermitian(generator, std::f64::consts::FRAC_PI_2);
                Ok(x_tilde.conjugate(&u))
            }
            _ => Ok(self.end().clone()),
        }
    }
}

/// A segment with its parameter subinterval inside the full path.
#[derive(Debug, Clone)]
pub struct TimedSegment {
    pub segment: PathSegment,
    pub lo: f64,
    pub hi: f64,
}

/// Piecewise path evaluable at any `t` in `[0, 1]`.
#[derive(Debug, Clone)]
pub struct MatrixPath {
    pub segments: Vec<TimedSegment>,
    pub variety: VarietyTag,
    pub lift: LiftKind,
    /// Ball center of the locality claim.
    pub base: MatrixTuple,
    /// Claimed ball radius around `base`.
    pub epsilon: f64,
    /// Achieved budgets of the underlying construction.
    pub budgets: Budgets,
    /// Declared endpoints (post-lift), returned bitwise at t = 0 and 1.
    pub start: MatrixTuple,
    pub end: MatrixTuple,
}

impl MatrixPath {
    /// Single-point path.
    pub fn constant(x: MatrixTuple) -> MatrixPath {
        let variety = x.variety.clone();
        MatrixPath {
            segments: vec![TimedSegment {
                segment: PathSegment::Constant { x: x.clone() },
                lo: 0.0,
                hi: 1.0,
            }],
            variety,
            lift: LiftKind::None,
            base: x.clone(),
            epsilon: 0.0,
            budgets: Budgets { delta: 0.0, nu: 0.0 },
            start: x.clone(),
            end: x,
        }
    }

    fn single(segment: PathSegment, variety: VarietyTag) -> MatrixPath {
        let start = segment.start().clone();
        let end = segment.end().clone();
        MatrixPath {
            segments: vec![TimedSegment { segment, lo: 0.0, hi: 1.0 }],
            variety,
            lift: LiftKind::None,
            base: start.clone(),
            epsilon: 0.0,
            budgets: Budgets { delta: 0.0, nu: 0.0 },
            start,
            end,
        }
    }

    /// Concatenation: `a` on `[0, 1/2]`, `b` on `[1/2, 1]`. Endpoints must
    /// agree within 1e-10 and are snapped to the exact shared value.
    pub fn concat(a: MatrixPath, mut b: MatrixPath) -> Result<MatrixPath> {
        if a.lift != b.lift {
            return Err(Error::InvalidArgument("concat of differently lifted paths".into()));
        }
        let junction_gap = metric_eth(&a.end, &b.start)?;
        if junction_gap > tol::ALGEBRAIC {
            return Err(Error::EndpointMismatch(junction_gap));
        }
        let shared = a.end.clone();
        if let Some(first) = b.segments.first_mut() {
            first.segment.snap_start(shared.clone());
        }
        b.start = shared;
        let mut segments = Vec::with_capacity(a.segments.len() + b.segments.len());
        for ts in a.segments {
            segments.push(TimedSegment { segment: ts.segment, lo: ts.lo * 0.5, hi: ts.hi * 0.5 });
        }
        for ts in b.segments {
            segments.push(TimedSegment {
                segment: ts.segment,
                lo: 0.5 + ts.lo * 0.5,
                hi: 0.5 + ts.hi * 0.5,
            });
        }
        Ok(MatrixPath {
            segments,
            variety: a.variety,
            lift: a.lift,
            base: a.base,
            epsilon: a.epsilon,
            budgets: a.budgets,
            start: a.start,
            end: b.end,
        })
    }

    fn push_down(&self, value: MatrixTuple) -> Result<MatrixTuple> {
        let out = match self.lift {
            LiftKind::None => value,
            LiftKind::Blocks => juncture(&value)?,
            LiftKind::Interleaved => reim_juncture(&value)?,
        };
        Ok(out.with_variety(self.variety.clone()))
    }

    /// Evaluates the path. The declared endpoints come back bitwise at
    /// t = 0 and t = 1.
    pub fn eval(&self, t: f64) -> Result<MatrixTuple> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::ParamOutOfRange(t));
        }
        if t == 0.0 {
            return Ok(self.start.clone());
        }
        if t == 1.0 {
            return Ok(self.end.clone());
        }
        self.push_down(self.eval_lifted(t)?)
    }

    /// Evaluates in the lifted space (before any juncture push-down).
    pub fn eval_lifted(&self, t: f64) -> Result<MatrixTuple> {
        let last = self.segments.len() - 1;
        for (i, ts) in self.segments.iter().enumerate() {
            if t < ts.hi || i == last {
                let width = ts.hi - ts.lo;
                let s = if width > 0.0 { ((t - ts.lo) / width).clamp(0.0, 1.0) } else { 0.0 };
                return ts.segment.eval(s);
            }
        }
        unreachable!("segment intervals cover [0, 1]")
    }

    pub fn segment_count(&self) -> usize {
        self.segments.len()
    }

    pub fn validate_segments(&self) -> Result<()> {
        for ts in &self.segments {
            ts.segment.validate()?;
        }
        Ok(())
    }
}

fn require_matching(x: &MatrixTuple, y: &MatrixTuple) -> Result<()> {
    if x.n() != y.n() || x.m() != y.m() {
        return Err(Error::DimensionMismatch(format!(
            "connect: ({}, {}) vs ({}, {})",
            x.m(),
            x.n(),
            y.m(),
            y.n()
        )));
    }
    Ok(())
}

enum CoreMode {
    Cube,
    Manifold(ChartAtlas),
}

/// Shared four-segment construction on hermitian tuples. Budgets start at
/// `delta = nu = eps / 4`; the grid budget halves on correction failures
/// (six retries).
fn connect_hermitian_core(
    x: &MatrixTuple,
    y: &MatrixTuple,
    eps: f64,
    mode: &CoreMode,
) -> Result<MatrixPath> {
    require_matching(x, y)?;
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument("epsilon target must be positive".into()));
    }
    let mu = metric_eth(x, y)?;
    let nu = eps / 4.0;
    let mut delta = eps / 4.0;
    let mut last_err = None;
    for attempt in 0..=6 {
        if mu > delta {
            return Err(last_err.unwrap_or(Error::BudgetInfeasible {
                reason: format!(
                    "eth(X, Y) = {mu:.3e} exceeds the grid budget {delta:.3e} for epsilon {eps:.3e}"
                ),
                delta: mu,
                nu,
            }));
        }
        match try_connect_core(x, y, delta.min(1.0), nu, mode) {
            Ok(path) => return Ok(path),
            Err(e @ (Error::BudgetInfeasible { .. } | Error::CorrectionPrecondition { .. }))
                if attempt < 6 =>
            {
                last_err = Some(e);
                delta *= 0.5;
            }
            Err(e) => return Err(e),
        }
    }
    Err(last_err.expect("retries exhausted"))
}

fn try_connect_core(
    x: &MatrixTuple,
    y: &MatrixTuple,
    delta: f64,
    nu: f64,
    mode: &CoreMode,
) -> Result<MatrixPath> {
    let atlas = match mode {
        CoreMode::Cube => None,
        CoreMode::Manifold(a) => Some(a),
    };
    let (itp, chart_data) = build_interpolant_parts(x, y, delta, nu, atlas)?;
    let variety = x.variety.clone();

    // Segment 2 first: its interior limit pins the junction with segment 3.
    let s2 = PathSegment::rotation(itp.x_tilde.clone(), itp.h.clone(), itp.y_tilde.clone());

    let (s1, s3, s4, chart_dev) = match (mode, &chart_data) {
        (CoreMode::Cube, _) => {
            let s1 = PathSegment::HermitianLine { from: x.clone(), to: itp.x_tilde.clone() };
            let s3 =
                PathSegment::HermitianLine { from: itp.y_tilde.clone(), to: itp.psi_x.clone() };
            let s4 = PathSegment::HermitianLine { from: itp.psi_x.clone(), to: y.clone() };
            (s1, s3, s4, 0.0)
        }
        (CoreMode::Manifold(a), Some(mc)) => {
            let back_basis = itp.w.adjoint() * &mc.basis;
            let s1 = PathSegment::ChartLine {
                atlas_id: a.id(),
                basis: back_basis,
                charts: mc.point_charts.clone(),
                start_params: mc.point_params.clone(),
                end_params: mc.point_params_snapped.clone(),
                from: x.clone(),
                to: itp.x_tilde.clone(),
            };
            let s3 = PathSegment::ChartLine {
                atlas_id: a.id(),
                basis: mc.basis.clone(),
                charts: mc.point_charts.clone(),
                start_params: mc.point_params_snapped.clone(),
                end_params: mc.point_params.clone(),
                from: itp.y_tilde.clone(),
                to: itp.psi_x.clone(),
            };
            // Final leg: both tuples are diagonal in Y's eigenbasis; each
            // position interpolates inside the chart owning Y's point.
            let n = x.n();
            let mut charts = Vec::with_capacity(n);
            let mut start_params = Vec::with_capacity(n);
            let mut end_params = Vec::with_capacity(n);
            for i in 0..n {
                let a_pt: Vec<f64> = itp.psi_points[i].iter().map(|z| z.re).collect();
                let b_pt: Vec<f64> = itp.y_points[i].iter().map(|z| z.re).collect();
                let b_snap = snap_to_manifold_with(&b_pt, a, tol::SNAP)?;
                let a_on = a.project(&a_pt)?;
                let a_par = a.inverse(b_snap.chart_id, &a_on).ok_or(Error::ChartCoverage(a_on))?;
                charts.push(b_snap.chart_id);
                start_params.push(a_par);
                end_params.push(b_snap.parameters);
            }
            let s4 = PathSegment::ChartLine {
                atlas_id: a.id(),
                basis: itp.y_basis.clone(),
                charts,
                start_params,
                end_params,
                from: itp.psi_x.clone(),
                to: y.clone(),
            };
            // Largest ambient swing of any chart segment, from per-position
            // scalar data (the segments are simultaneously diagonal).
            let mut dev = 0.0f64;
            for seg in [&s1, &s3, &s4] {
                if let PathSegment::ChartLine { charts, start_params, end_params, .. } = seg {
                    dev = dev.max(chart_segment_deviation(a, charts, start_params, end_params));
                }
            }
            (s1, s3, s4, dev)
        }
        (CoreMode::Manifold(_), None) => unreachable!("manifold mode returns chart data"),
    };

    for seg in [&s1, &s2, &s3, &s4] {
        seg.validate()?;
    }

    let variety_for_parts = variety.clone();
    let p1 = MatrixPath::single(s1, variety_for_parts.clone());
    let p2 = MatrixPath::single(s2, variety_for_parts.clone());
    let p3 = MatrixPath::single(s3, variety_for_parts.clone());
    let p4 = MatrixPath::single(s4, variety_for_parts);
    let mut path = MatrixPath::concat(MatrixPath::concat(MatrixPath::concat(p1, p2)?, p3)?, p4)?;

    path.base = x.clone();
    path.start = x.clone();
    path.end = y.clone();
    path.budgets = itp.budgets;
    // Radius bound from the construction: every segment stays within
    // delta + nu + mu of the base, with the chart swing taking over the
    // grid distance on manifolds.
    path.epsilon = 2.0 * (itp.budgets.nu + chart_dev.max(itp.budgets.delta));
    Ok(path)
}

/// Max over sampled t and positions of the ambient per-coordinate swing of
/// a chart segment away from its start.
fn chart_segment_deviation(
    atlas: &ChartAtlas,
    charts: &[usize],
    start_params: &[Vec<f64>],
    end_params: &[Vec<f64>],
) -> f64 {
    let mut dev = 0.0f64;
    for i in 0..charts.len() {
        let z0 = atlas.forward(charts[i], &start_params[i]);
        for step in 1..=16 {
            let s = step as f64 / 16.0;
            let p: Vec<f64> = start_params[i]
                .iter()
                .zip(&end_params[i])
                .map(|(a, b)| (1.0 - s) * a + s * b)
                .collect();
            let z = atlas.forward(charts[i], &p);
            for (za, zb) in z.iter().zip(&z0) {
                dev = dev.max((za - zb).abs());
            }
        }
    }
    dev
}

/// Connects two nearby tuples in the matrix cube (pairwise commuting
/// hermitian contractions), staying inside the cube and within the target
/// ball around `x`.
pub fn connect_cube(x: &MatrixTuple, y: &MatrixTuple, epsilon_target: f64) -> Result<MatrixPath> {
    require_matching(x, y)?;
    if x == y {
        let mut p = MatrixPath::constant(x.clone().with_variety(VarietyTag::Cube));
        p.variety = VarietyTag::Cube;
        return Ok(p);
    }
    let mut path = connect_hermitian_core(
        &x.clone().with_variety(VarietyTag::Cube),
        &y.clone().with_variety(VarietyTag::Cube),
        epsilon_target,
        &CoreMode::Cube,
    )?;
    path.variety = VarietyTag::Cube;
    Ok(path)
}

fn wrap_lifted(
    mut lifted: MatrixPath,
    lift: LiftKind,
    variety: VarietyTag,
    x: &MatrixTuple,
    y: &MatrixTuple,
) -> MatrixPath {
    lifted.lift = lift;
    lifted.variety = variety.clone();
    lifted.base = x.clone().with_variety(variety.clone());
    lifted.start = x.clone().with_variety(variety.clone());
    lifted.end = y.clone().with_variety(variety);
    // Junctures add the two hermitian parts, doubling the radius bound.
    lifted.epsilon *= 2.0;
    lifted
}

/// Connects two nearby tuples in the matrix disk (commuting normal
/// contractions) through their hermitian partitions.
pub fn connect_disk(z: &MatrixTuple, s: &MatrixTuple, epsilon_target: f64) -> Result<MatrixPath> {
    require_matching(z, s)?;
    if z == s {
        let mut p = MatrixPath::constant(z.clone().with_variety(VarietyTag::Disk));
        p.variety = VarietyTag::Disk;
        return Ok(p);
    }
    let lz = hermitian_partition(z)?.with_variety(VarietyTag::Cube);
    let ls = hermitian_partition(s)?.with_variety(VarietyTag::Cube);
    let inner = connect_hermitian_core(&lz, &ls, epsilon_target / 2.0, &CoreMode::Cube)?;
    Ok(wrap_lifted(inner, LiftKind::Blocks, VarietyTag::Disk, z, s))
}

/// Connects two nearby tuples inside an induced matrix manifold: joint
/// spectra stay on the manifold along the whole path.
pub fn connect_manifold(
    u: &MatrixTuple,
    v: &MatrixTuple,
    epsilon_target: f64,
    atlas: &ChartAtlas,
) -> Result<MatrixPath> {
    require_matching(u, v)?;
    let variety = VarietyTag::Manifold(atlas.id());
    if u == v {
        let mut p = MatrixPath::constant(u.clone().with_variety(variety.clone()));
        p.variety = variety;
        return Ok(p);
    }
    let mut path = connect_hermitian_core(
        &u.clone().with_variety(variety.clone()),
        &v.clone().with_variety(variety.clone()),
        epsilon_target,
        &CoreMode::Manifold(atlas.clone()),
    )?;
    path.variety = variety;
    Ok(path)
}

/// Connects two nearby tuples of commuting unitaries, through the
/// interleaved real/imaginary lift onto the torus manifold.
pub fn connect_torus(u: &MatrixTuple, v: &MatrixTuple, epsilon_target: f64) -> Result<MatrixPath> {
    require_matching(u, v)?;
    if u == v {
        let mut p = MatrixPath::constant(u.clone().with_variety(VarietyTag::Torus));
        p.variety = VarietyTag::Torus;
        return Ok(p);
    }
    let atlas = builtin_atlas(AtlasKind::Torus(u.m()))?;
    let variety = VarietyTag::Manifold(atlas.id());
    let lu = reim_interleave(u)?.with_variety(variety.clone());
    let lv = reim_interleave(v)?.with_variety(variety);
    let inner =
        connect_hermitian_core(&lu, &lv, epsilon_target / 2.0, &CoreMode::Manifold(atlas))?;
    Ok(wrap_lifted(inner, LiftKind::Interleaved, VarietyTag::Torus, u, v))
}

/// Connects two nearby tuples on the matrix sphere (`sum H_k^2 = 1`); the
/// sphere variety is exactly the induced manifold of `S^{m-1}`.
pub fn connect_sphere(h1: &MatrixTuple, h2: &MatrixTuple, epsilon_target: f64) -> Result<MatrixPath> {
    require_matching(h1, h2)?;
    if h1 == h2 {
        let mut p = MatrixPath::constant(h1.clone().with_variety(VarietyTag::Sphere));
        p.variety = VarietyTag::Sphere;
        return Ok(p);
    }
    let atlas = builtin_atlas(AtlasKind::Sphere(h1.m()))?;
    let mut path = connect_hermitian_core(
        &h1.clone().with_variety(VarietyTag::Sphere),
        &h2.clone().with_variety(VarietyTag::Sphere),
        epsilon_target,
        &CoreMode::Manifold(atlas),
    )?;
    path.variety = VarietyTag::Sphere;
    Ok(path)
}

/// Connects two nearby spherical unitaries (commuting normal Kraus tuples
/// with `sum S_k S_k* = 1`) through the interleaved lift onto `S^{2m-1}`.
pub fn connect_spherical_unitary(
    s: &MatrixTuple,
    t: &MatrixTuple,
    epsilon_target: f64,
) -> Result<MatrixPath> {
    require_matching(s, t)?;
    if s == t {
        let mut p = MatrixPath::constant(s.clone().with_variety(VarietyTag::SphericalUnitary));
        p.variety = VarietyTag::SphericalUnitary;
        return Ok(p);
    }
    let atlas = builtin_atlas(AtlasKind::Sphere(2 * s.m()))?;
    let variety = VarietyTag::Manifold(atlas.id());
    let ls = reim_interleave(s)?.with_variety(variety.clone());
    let lt = reim_interleave(t)?.with_variety(variety);
    let inner =
        connect_hermitian_core(&ls, &lt, epsilon_target / 2.0, &CoreMode::Manifold(atlas))?;
    Ok(wrap_lifted(inner, LiftKind::Interleaved, VarietyTag::SphericalUnitary, s, t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::variety_residuals;
    use crate::num::{expi_hermitian, haar_unitary, hermitize, opnorm, random_hermitian_unit};
    use crate::tol::chebyshev_schedule;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn diag_herm(values: &[f64]) -> CMat {
        CMat::from_diagonal(&DVector::from_iterator(
            values.len(),
            values.iter().map(|&v| Complex64::new(v, 0.0)),
        ))
    }

    fn cube_tuple(entries: &[&[f64]]) -> MatrixTuple {
        MatrixTuple::new(entries.iter().map(|r| diag_herm(r)).collect(), VarietyTag::Cube).unwrap()
    }

    #[test]
    fn eval_constant_and_line() {
        let x = cube_tuple(&[&[0.5, -0.5]]);
        let p = MatrixPath::constant(x.clone());
        for &t in &[0.0, 0.3, 1.0] {
            assert_eq!(p.eval(t).unwrap(), x);
        }
        let y = cube_tuple(&[&[0.7, -0.1]]);
        let line = MatrixPath::single(
            PathSegment::HermitianLine { from: x.clone(), to: y.clone() },
            VarietyTag::Cube,
        );
        let mid = line.eval(0.5).unwrap();
        assert!((mid.component(0)[(0, 0)].re - 0.6).abs() < 1e-15);
        assert!(line.eval(1.5).is_err());
    }

    #[test]
    fn concat_reparametrizes_by_halves() {
        let a0 = cube_tuple(&[&[0.0, 0.0]]);
        let a1 = cube_tuple(&[&[0.4, 0.4]]);
        let a2 = cube_tuple(&[&[0.8, 0.8]]);
        let alpha = MatrixPath::single(
            PathSegment::HermitianLine { from: a0.clone(), to: a1.clone() },
            VarietyTag::Cube,
        );
        let beta = MatrixPath::single(
            PathSegment::HermitianLine { from: a1.clone(), to: a2.clone() },
            VarietyTag::Cube,
        );
        let ab = MatrixPath::concat(alpha.clone(), beta.clone()).unwrap();
        // (alpha (*) beta)(1/2) = alpha(1) = beta(0).
        assert_eq!(ab.eval(0.5).unwrap(), a1);
        // (alpha (*) beta)(1/4) = alpha(1/2).
        let q = ab.eval(0.25).unwrap();
        assert!(metric_eth(&q, &alpha.eval(0.5).unwrap()).unwrap() < 1e-15);
        // Junction continuity of stored values.
        assert_eq!(ab.segments[0].segment.end(), ab.segments[1].segment.start());
    }

    #[test]
    fn concat_associativity_on_matched_parameters() {
        let pts: Vec<MatrixTuple> =
            (0..4).map(|i| cube_tuple(&[&[0.2 * i as f64, -0.1 * i as f64]])).collect();
        let seg = |i: usize| {
            MatrixPath::single(
                PathSegment::HermitianLine { from: pts[i].clone(), to: pts[i + 1].clone() },
                VarietyTag::Cube,
            )
        };
        let left = MatrixPath::concat(MatrixPath::concat(seg(0), seg(1)).unwrap(), seg(2)).unwrap();
        let right = MatrixPath::concat(seg(0), MatrixPath::concat(seg(1), seg(2)).unwrap()).unwrap();
        // Same image under matched parameters: left [0,1/4] carries segment
        // 0, right carries it on [0,1/2].
        for &s in &[0.0, 0.25, 0.7, 1.0] {
            let tl = 0.25 * s;
            let tr = 0.5 * s;
            let a = left.eval(tl).unwrap();
            let b = right.eval(tr).unwrap();
            assert!(metric_eth(&a, &b).unwrap() < 1e-14, "s={s}");
        }
    }

    #[test]
    fn concat_of_identical_constants() {
        let x = cube_tuple(&[&[0.1, 0.2]]);
        let joined =
            MatrixPath::concat(MatrixPath::constant(x.clone()), MatrixPath::constant(x.clone()))
                .unwrap();
        assert_eq!(joined.segment_count(), 2);
        for &t in &[0.0, 0.4, 0.5, 0.6, 1.0] {
            assert_eq!(joined.eval(t).unwrap().components(), x.components());
        }
    }

    #[test]
    fn all_varieties_short_circuit_identical_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(5150);
        let q = haar_unitary(3, &mut rng);
        let phases: Vec<Complex64> =
            (0..3).map(|k| Complex64::from_polar(1.0, 0.7 * k as f64)).collect();
        let u = &q
            * CMat::from_diagonal(&DVector::from_iterator(3, phases.iter().cloned()))
            * q.adjoint();
        let torus = MatrixTuple::new(vec![u], VarietyTag::Torus).unwrap();
        let disk = torus.clone().with_variety(VarietyTag::Disk);
        for (path, variety) in [
            (connect_torus(&torus, &torus, 0.5).unwrap(), VarietyTag::Torus),
            (connect_disk(&disk, &disk, 0.5).unwrap(), VarietyTag::Disk),
            (
                connect_spherical_unitary(
                    &torus.clone().with_variety(VarietyTag::SphericalUnitary),
                    &torus.clone().with_variety(VarietyTag::SphericalUnitary),
                    0.5,
                )
                .unwrap(),
                VarietyTag::SphericalUnitary,
            ),
        ] {
            assert_eq!(path.segment_count(), 1);
            assert_eq!(path.epsilon, 0.0);
            assert_eq!(path.variety, variety);
            assert_eq!(path.eval(0.7).unwrap().components(), torus.components());
        }
    }

    #[test]
    fn concat_rejects_gaps() {
        let a = MatrixPath::constant(cube_tuple(&[&[0.0, 0.0]]));
        let b = MatrixPath::constant(cube_tuple(&[&[0.5, 0.5]]));
        assert!(matches!(MatrixPath::concat(a, b), Err(Error::EndpointMismatch(_))));
    }

    #[test]
    fn connect_cube_identical_pair_short_circuits() {
        let x = cube_tuple(&[&[0.3, -0.7], &[0.2, 0.9]]);
        let p = connect_cube(&x, &x, 0.5).unwrap();
        assert_eq!(p.segment_count(), 1);
        assert_eq!(p.epsilon, 0.0);
        assert_eq!(p.eval(0.5).unwrap().components(), x.components());
    }

    #[test]
    fn connect_cube_diagonal_pair_degenerates() {
        // Commuting diagonal endpoints: the rotation is trivial.
        let x = cube_tuple(&[&[0.3, -0.7, 0.1]]);
        let y = cube_tuple(&[&[0.31, -0.69, 0.09]]);
        let p = connect_cube(&x, &y, 0.5).unwrap();
        assert_eq!(p.eval(0.0).unwrap().components(), x.components());
        assert_eq!(p.eval(1.0).unwrap().components(), y.components());
        // Generator is zero: the curved leg is constant.
        for ts in &p.segments {
            if let PathSegment::Rotation { generator, .. } = &ts.segment {
                assert!(opnorm(generator) < 1e-9);
            }
        }
        for &t in &chebyshev_schedule(17) {
            let g = p.eval(t).unwrap();
            assert!(metric_eth(&g, &x).unwrap() < 0.5);
            let rep = variety_residuals(&g, &VarietyTag::Cube, None);
            assert!(rep.commutator_max < 1e-10);
            assert!(rep.structure_max < 1e-10);
        }
    }

    #[test]
    fn connect_cube_random_nearby_pair() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let n = 8;
        let q = haar_unitary(n, &mut rng);
        let mk = |rng: &mut ChaCha8Rng| {
            let vals: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
            hermitize(&(&q * diag_herm(&vals) * q.adjoint()))
        };
        let x = MatrixTuple::new(vec![mk(&mut rng), mk(&mut rng)], VarietyTag::Cube).unwrap();
        let k = random_hermitian_unit(n, &mut rng);
        let r = expi_hermitian(&k, 0.004);
        let y = x.conjugate(&r).with_variety(VarietyTag::Cube);
        let eps = 0.5;
        let p = connect_cube(&x, &y, eps).unwrap();
        assert_eq!(p.segment_count(), 4);
        assert_eq!(p.eval(0.0).unwrap().components(), x.components());
        assert_eq!(p.eval(1.0).unwrap().components(), y.components());
        assert!(p.epsilon <= eps + 1e-12);
        for &t in &chebyshev_schedule(33) {
            let g = p.eval(t).unwrap();
            assert!(metric_eth(&g, &x).unwrap() < p.epsilon, "t={t}");
            let rep = variety_residuals(&g, &VarietyTag::Cube, None);
            assert!(rep.commutator_max < 1e-8, "t={t}: {rep:?}");
            assert!(rep.structure_max < 1e-8);
            assert!(rep.norm_excess_max < 1e-8);
        }
    }

    #[test]
    fn connect_disk_matches_juncture_of_lift() {
        let z = MatrixTuple::new(
            vec![diag_herm(&[0.3, -0.2]).map(|v| v + Complex64::new(0.0, 0.1) * v.re)],
            VarietyTag::Disk,
        )
        .unwrap();
        // Diagonal normal contractions, slightly moved.
        let zc = MatrixTuple::new(
            vec![CMat::from_diagonal(&DVector::from_vec(vec![
                Complex64::new(0.3, 0.25),
                Complex64::new(-0.2, -0.4),
            ]))],
            VarietyTag::Disk,
        )
        .unwrap();
        let sc = MatrixTuple::new(
            vec![CMat::from_diagonal(&DVector::from_vec(vec![
                Complex64::new(0.31, 0.26),
                Complex64::new(-0.21, -0.39),
            ]))],
            VarietyTag::Disk,
        )
        .unwrap();
        drop(z);
        let p = connect_disk(&zc, &sc, 0.5).unwrap();
        assert_eq!(p.eval(0.0).unwrap().components(), zc.components());
        assert_eq!(p.eval(1.0).unwrap().components(), sc.components());
        for &t in &chebyshev_schedule(17) {
            let g = p.eval(t).unwrap();
            // Juncture consistency with the lifted evaluation.
            let lifted = p.eval_lifted(t).unwrap();
            if t > 0.0 && t < 1.0 {
                let j = juncture(&lifted).unwrap();
                assert!(metric_eth(&g, &j).unwrap() < 1e-15);
            }
            let rep = variety_residuals(&g, &VarietyTag::Disk, None);
            assert!(rep.commutator_max < 1e-8);
            assert!(rep.structure_max < 1e-8, "t={t}: {}", rep.structure_max);
            assert!(metric_eth(&g, &zc).unwrap() < p.epsilon || t == 0.0);
        }
    }

    #[test]
    fn connect_manifold_cube_atlas_matches_connect_cube() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let n = 4;
        let q = haar_unitary(n, &mut rng);
        let mk = |vals: &[f64]| hermitize(&(&q * diag_herm(vals) * q.adjoint()));
        let x = MatrixTuple::new(
            vec![mk(&[0.2, -0.4, 0.6, 0.0]), mk(&[0.5, 0.3, -0.2, -0.8])],
            VarietyTag::Cube,
        )
        .unwrap();
        let k = random_hermitian_unit(n, &mut rng);
        let y = x.conjugate(&expi_hermitian(&k, 0.003)).with_variety(VarietyTag::Cube);
        let atlas = builtin_atlas(AtlasKind::Cube(2)).unwrap();
        let pm = connect_manifold(&x, &y, 0.5, &atlas).unwrap();
        let pc = connect_cube(&x, &y, 0.5).unwrap();
        for &t in &chebyshev_schedule(9) {
            let a = pm.eval(t).unwrap();
            let b = pc.eval(t).unwrap();
            assert!(metric_eth(&a, &b).unwrap() < 1e-10, "t={t}");
        }
    }

    #[test]
    fn connect_sphere_stays_on_sphere() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let n = 8;
        let m = 2;
        let q = haar_unitary(n, &mut rng);
        let atlas = builtin_atlas(AtlasKind::Sphere(m)).unwrap();
        let pts: Vec<Vec<f64>> = (0..n).map(|_| atlas.sample(&mut rng)).collect();
        let comps: Vec<CMat> = (0..m)
            .map(|j| {
                let vals: Vec<f64> = pts.iter().map(|p| p[j]).collect();
                hermitize(&(&q * diag_herm(&vals) * q.adjoint()))
            })
            .collect();
        let x = MatrixTuple::new(comps, VarietyTag::Sphere).unwrap();
        let k = random_hermitian_unit(n, &mut rng);
        let y = x.conjugate(&expi_hermitian(&k, 0.004)).with_variety(VarietyTag::Sphere);

        let p = connect_sphere(&x, &y, 0.5).unwrap();
        assert_eq!(p.eval(0.0).unwrap().components(), x.components());
        assert_eq!(p.eval(1.0).unwrap().components(), y.components());
        for &t in &chebyshev_schedule(17) {
            let g = p.eval(t).unwrap();
            let rep = variety_residuals(&g, &VarietyTag::Sphere, Some(&atlas));
            assert!(rep.defining_residual.unwrap() < 1e-6, "t={t}: {rep:?}");
            assert!(rep.manifold_distance.unwrap() < 1e-6);
            assert!(metric_eth(&g, &x).unwrap() < p.epsilon || t == 0.0);
        }
    }

    #[test]
    fn connect_torus_keeps_unitarity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4242);
        let n = 4;
        let q = haar_unitary(n, &mut rng);
        let phases: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 6.0).collect();
        let mk_u = |ph: &[f64]| {
            let d = CMat::from_diagonal(&DVector::from_iterator(
                n,
                ph.iter().map(|&t| Complex64::from_polar(1.0, t)),
            ));
            &q * d * q.adjoint()
        };
        let u = MatrixTuple::new(vec![mk_u(&phases)], VarietyTag::Torus).unwrap();
        let moved: Vec<f64> = phases.iter().map(|&t| t + 0.015).collect();
        let v = MatrixTuple::new(vec![mk_u(&moved)], VarietyTag::Torus).unwrap();

        let p = connect_torus(&u, &v, 0.5).unwrap();
        assert_eq!(p.eval(0.0).unwrap().components(), u.components());
        assert_eq!(p.eval(1.0).unwrap().components(), v.components());
        for &t in &chebyshev_schedule(17) {
            let g = p.eval(t).unwrap();
            for c in g.components() {
                let res = opnorm(&(c * c.adjoint() - num::identity(n)));
                assert!(res < 1e-6, "t={t}: unitarity {res}");
            }
        }
    }

    #[test]
    fn connect_spherical_unitary_keeps_kraus_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(555);
        let n = 4;
        let m = 2;
        let q = haar_unitary(n, &mut rng);
        let sphere = builtin_atlas(AtlasKind::Sphere(2 * m)).unwrap();
        let pts: Vec<Vec<f64>> = (0..n).map(|_| sphere.sample(&mut rng)).collect();
        let mk = |pts: &[Vec<f64>], j: usize| {
            let d = CMat::from_diagonal(&DVector::from_iterator(
                n,
                pts.iter().map(|p| Complex64::new(p[2 * j], p[2 * j + 1])),
            ));
            &q * d * q.adjoint()
        };
        let s = MatrixTuple::new(vec![mk(&pts, 0), mk(&pts, 1)], VarietyTag::SphericalUnitary)
            .unwrap();
        let k = random_hermitian_unit(n, &mut rng);
        let t2 = s.conjugate(&expi_hermitian(&k, 0.004)).with_variety(VarietyTag::SphericalUnitary);

        let p = connect_spherical_unitary(&s, &t2, 0.5).unwrap();
        for &t in &chebyshev_schedule(17) {
            let g = p.eval(t).unwrap();
            let mut acc = CMat::zeros(n, n);
            for c in g.components() {
                acc += c * c.adjoint();
            }
            let res = opnorm(&(acc - num::identity(n)));
            assert!(res < 1e-6, "t={t}: kraus residual {res}");
        }
    }

    #[test]
    fn connect_rejects_far_pairs() {
        let x = cube_tuple(&[&[0.9, -0.9]]);
        let y = cube_tuple(&[&[-0.9, 0.9]]);
        assert!(matches!(connect_cube(&x, &y, 0.5), Err(Error::BudgetInfeasible { .. })));
    }
}
