//! Residual certificates: machine-checkable reports for paths and
//! interpolants, used by the tests and the CLI.

use once_cell::sync::OnceCell;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::interpolant::{Budgets, IsospectralInterpolant};
use crate::linalg::{hausdorff_distance, joint_diagonalize, metric_eth, MatrixTuple, VarietyTag};
use crate::manifold::{atlas_by_id, builtin_atlas, variety_residuals, AtlasKind, ChartAtlas};
use crate::paths::MatrixPath;
use crate::tol::{chebyshev_schedule, Tolerances};

/// Thread pool honoring the `COMMPATH_THREADS` cap. Sample results are
/// collected by index, so reports are identical at any thread count.
fn pool() -> &'static rayon::ThreadPool {
    static POOL: OnceCell<rayon::ThreadPool> = OnceCell::new();
    POOL.get_or_init(|| {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Ok(v) = std::env::var("COMMPATH_THREADS") {
            if let Ok(k) = v.trim().parse::<usize>() {
                if k >= 1 {
                    builder = builder.num_threads(k);
                }
            }
        }
        builder.build().expect("thread pool")
    })
}

/// Sampled residual report for a path.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PathCertificate {
    pub variety: String,
    pub samples: usize,
    pub sample_ts: Vec<f64>,
    pub eth_to_base: Vec<f64>,
    pub commutator_max: Vec<f64>,
    pub hermiticity_or_normality_max: Vec<f64>,
    pub norm_excess_max: Vec<f64>,
    pub manifold_distance: Vec<Option<f64>>,
    pub defining_eq_residual: Vec<Option<f64>>,
    pub endpoints_exact: bool,
    pub epsilon_reported: f64,
    pub budgets: Budgets,
    pub verdict: String,
    pub first_failure: Option<String>,
}

impl PathCertificate {
    pub fn passed(&self) -> bool {
        self.verdict == "pass"
    }

    pub fn max_eth(&self) -> f64 {
        self.eth_to_base.iter().cloned().fold(0.0, f64::max)
    }
}

fn atlas_for(variety: &VarietyTag, m: usize) -> Option<ChartAtlas> {
    match variety {
        VarietyTag::Sphere => builtin_atlas(AtlasKind::Sphere(m)).ok(),
        VarietyTag::Torus => builtin_atlas(AtlasKind::Torus(m)).ok(),
        VarietyTag::SphericalUnitary => builtin_atlas(AtlasKind::Sphere(2 * m)).ok(),
        VarietyTag::Manifold(id) => atlas_by_id(id).ok(),
        _ => None,
    }
}

/// Certifies a path against its variety: endpoint exactness, per-sample
/// membership residuals, and ball containment around the base tuple.
///
/// Deterministic for a fixed path, schedule and tolerance set.
pub fn certify_path(path: &MatrixPath, tols: &Tolerances) -> Result<PathCertificate> {
    let schedule = chebyshev_schedule(tols.samples);
    let atlas = atlas_for(&path.variety, path.base.m());

    let endpoints_exact = {
        let s = path.eval(0.0)?;
        let e = path.eval(1.0)?;
        s.components() == path.start.components() && e.components() == path.end.components()
    };

    struct SampleRow {
        eth: f64,
        commutator: f64,
        structure: f64,
        norm_excess: f64,
        manifold: Option<f64>,
        defining: Option<f64>,
    }

    let rows: Vec<Result<SampleRow>> = pool().install(|| {
        schedule
            .par_iter()
            .map(|&t| {
                let g = path.eval(t)?;
                let rep = variety_residuals(&g, &path.variety, atlas.as_ref());
                Ok(SampleRow {
                    eth: metric_eth(&g, &path.base)?,
                    commutator: rep.commutator_max,
                    structure: rep.structure_max,
                    norm_excess: rep.norm_excess_max,
                    manifold: rep.manifold_distance,
                    defining: rep.defining_residual,
                })
            })
            .collect()
    });
    let mut eth_to_base = Vec::with_capacity(schedule.len());
    let mut commutator_max = Vec::with_capacity(schedule.len());
    let mut structure_max = Vec::with_capacity(schedule.len());
    let mut norm_excess_max = Vec::with_capacity(schedule.len());
    let mut manifold_distance = Vec::with_capacity(schedule.len());
    let mut defining = Vec::with_capacity(schedule.len());
    for row in rows {
        let row = row?;
        eth_to_base.push(row.eth);
        commutator_max.push(row.commutator);
        structure_max.push(row.structure);
        norm_excess_max.push(row.norm_excess);
        manifold_distance.push(row.manifold);
        defining.push(row.defining);
    }

    // Mid-path grid approximants of a disk tuple may leave the unit disk by
    // the snapped amount in each hermitian part.
    let norm_tol = if matches!(path.variety, VarietyTag::Disk) {
        2.0f64.sqrt() * path.budgets.delta + tols.conjugation
    } else {
        tols.conjugation
    };

    let mut first_failure: Option<String> = None;
    let fail = |name: &str, first: &mut Option<String>| {
        if first.is_none() {
            *first = Some(name.to_string());
        }
    };
    if !endpoints_exact {
        fail("endpoints", &mut first_failure);
    }
    for i in 0..schedule.len() {
        if commutator_max[i] > tols.conjugation {
            fail("commutator", &mut first_failure);
        }
        if structure_max[i] > tols.conjugation {
            fail("hermiticity-or-normality", &mut first_failure);
        }
        if norm_excess_max[i] > norm_tol {
            fail("norm", &mut first_failure);
        }
        if let Some(d) = manifold_distance[i] {
            if d > tols.variety_path {
                fail("manifold", &mut first_failure);
            }
        }
        if let Some(d) = defining[i] {
            if d > tols.variety_path {
                fail("defining-eq", &mut first_failure);
            }
        }
    }
    let max_eth = eth_to_base.iter().cloned().fold(0.0, f64::max);
    // Constant paths report a zero radius; containment is then exact.
    if !(max_eth < path.epsilon || max_eth == 0.0) {
        fail("ball", &mut first_failure);
    }

    Ok(PathCertificate {
        variety: path.variety.as_str(),
        samples: schedule.len(),
        sample_ts: schedule,
        eth_to_base,
        commutator_max,
        hermiticity_or_normality_max: structure_max,
        norm_excess_max,
        manifold_distance,
        defining_eq_residual: defining,
        endpoints_exact,
        epsilon_reported: path.epsilon,
        budgets: path.budgets,
        verdict: if first_failure.is_none() { "pass".into() } else { "fail".into() },
        first_failure,
    })
}

/// Sampled report for an isospectral interpolant built for `x`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InterpolantReport {
    pub sample_ts: Vec<f64>,
    /// `eth(psi_0(Xt), Xt)`; the identity morphism makes this exactly zero.
    pub identity_at_zero: f64,
    /// `eth(psi_1(Xt), Psi(Xt))`.
    pub endpoint_identity: f64,
    /// `eth(psi_1(Xt), Psi~(Xt))`.
    pub endpoint_identity_tilde: f64,
    /// Per-sample pairwise commutator residual of `psi_t(Xt)`.
    pub commutator_max: Vec<f64>,
    /// Per-sample `eth(psi_t(Xt), Xt)`.
    pub eth_to_xtilde: Vec<f64>,
    /// Per-sample Hausdorff drift of the joint spectrum.
    pub spectrum_drift: Vec<f64>,
    pub nu_reported: f64,
    pub verdict: String,
    pub first_failure: Option<String>,
}

impl InterpolantReport {
    pub fn passed(&self) -> bool {
        self.verdict == "pass"
    }
}

/// Certifies an interpolant: identity at 0, endpoint identity at 1,
/// commutativity, ball containment within the reported nu, and joint
/// spectrum invariance along the samples.
pub fn certify_interpolant(
    itp: &IsospectralInterpolant,
    x: &MatrixTuple,
    tols: &Tolerances,
) -> Result<InterpolantReport> {
    let schedule = chebyshev_schedule(tols.samples);
    let xt = &itp.x_tilde;
    // The approximant must belong to the tuple the interpolant was built
    // for, within the reported grid budget.
    let x_distance = metric_eth(x, xt)?;

    let identity_at_zero = metric_eth(&itp.psi_t(0.0, xt), xt)?;
    let end = itp.psi_t(1.0, xt);
    let endpoint_identity = metric_eth(&end, &itp.psi(xt))?;
    let endpoint_identity_tilde = metric_eth(&end, &itp.psi_tilde(xt))?;

    let (_, spec0) = joint_diagonalize(xt, 1e-6)?;
    struct Row {
        commutator: f64,
        eth: f64,
        drift: f64,
    }
    let rows: Vec<Result<Row>> = pool().install(|| {
        schedule
            .par_iter()
            .map(|&t| {
                let moved = itp.psi_t(t, xt);
                let (_, spec_t) = joint_diagonalize(&moved, 1e-6)?;
                Ok(Row {
                    commutator: moved.commutator_max(),
                    eth: metric_eth(&moved, xt)?,
                    drift: hausdorff_distance(&spec_t.points, &spec0.points)?,
                })
            })
            .collect()
    });
    let mut commutator_max = Vec::with_capacity(schedule.len());
    let mut eth_to_xtilde = Vec::with_capacity(schedule.len());
    let mut spectrum_drift = Vec::with_capacity(schedule.len());
    for row in rows {
        let row = row?;
        commutator_max.push(row.commutator);
        eth_to_xtilde.push(row.eth);
        spectrum_drift.push(row.drift);
    }

    let mut first_failure: Option<String> = None;
    let fail = |name: &str, first: &mut Option<String>| {
        if first.is_none() {
            *first = Some(name.to_string());
        }
    };
    if x_distance > itp.budgets.delta + tols.algebraic {
        fail("approximant-distance", &mut first_failure);
    }
    if identity_at_zero != 0.0 {
        fail("identity-at-zero", &mut first_failure);
    }
    if endpoint_identity > tols.conjugation || endpoint_identity_tilde > tols.conjugation {
        fail("endpoint-identity", &mut first_failure);
    }
    for i in 0..schedule.len() {
        if commutator_max[i] > tols.algebraic {
            fail("commutativity", &mut first_failure);
        }
        if !(eth_to_xtilde[i] < itp.budgets.nu) {
            fail("nu-ball", &mut first_failure);
        }
        if spectrum_drift[i] > 1e-9 {
            fail("spectrum-invariance", &mut first_failure);
        }
    }

    Ok(InterpolantReport {
        sample_ts: schedule,
        identity_at_zero,
        endpoint_identity,
        endpoint_identity_tilde,
        commutator_max,
        eth_to_xtilde,
        spectrum_drift,
        nu_reported: itp.budgets.nu,
        verdict: if first_failure.is_none() { "pass".into() } else { "fail".into() },
        first_failure,
    })
}
