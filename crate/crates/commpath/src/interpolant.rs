//! Almost-commuting unitary correction and approximate joint isospectral
//! interpolants.
//!
//! Given nearby commuting hermitian tuples X and Y, the construction
//! produces a unitary `W` aligning X with Y's eigenbasis, a grid approximant
//! `Xtilde` of X, and a corrected unitary `Wtilde` commuting with the
//! approximant's spectral projectors. The hermitian generator `H` of
//! `Z = Wtilde* W` then drives the one-parameter conjugation family
//! `psi_t = Ad[exp(i pi t H / 2)]`, which moves `Xtilde` onto its grid
//! image while preserving its joint spectrum at every t.

use nalgebra::DVector;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{
    conjugation_morphism, joint_diagonalize, metric_eth, CMat, MatrixTuple, VarietyTag,
};
use crate::manifold::{manifold_cpma, ChartAtlas, ManifoldCpma};
use crate::num;
use crate::pma::{cpma_md, ProjectiveDecomposition};
use crate::tol;

/// Unitary exchanging two close projections: `U P U* = Q` with
/// `||1 - U|| <= sqrt(2) ||P - Q||`, built as the polar factor of
/// `T = Q P + (1 - Q)(1 - P)`.
pub fn projection_exchange_unitary(p: &CMat, q: &CMat) -> Result<CMat> {
    let n = p.nrows();
    if q.nrows() != n {
        return Err(Error::DimensionMismatch("projector sizes differ".into()));
    }
    let gap = num::opnorm(&(p - q));
    if gap >= 1.0 {
        return Err(Error::ProjectorsTooFar(gap));
    }
    let one = num::identity(n);
    let t = q * p + (&one - q) * (&one - p);
    Ok(num::polar_unitary(&t))
}

/// Modified Gram-Schmidt union basis of the column spans of `v` and `a`.
fn union_basis(v: &CMat, a: &CMat) -> CMat {
    let n = v.nrows();
    let mut cols: Vec<DVector<Complex64>> = Vec::with_capacity(v.ncols() + a.ncols());
    for src in [v, a] {
        for c in 0..src.ncols() {
            let mut col = src.column(c).clone_owned();
            for _ in 0..2 {
                for b in &cols {
                    let proj = b.dotc(&col);
                    col -= b * proj;
                }
            }
            let nrm = col.norm();
            if nrm > 1e-10 {
                col /= Complex64::new(nrm, 0.0);
                cols.push(col);
            }
        }
    }
    let mut b = CMat::zeros(n, cols.len());
    for (i, c) in cols.iter().enumerate() {
        b.set_column(i, c);
    }
    b
}

/// Result of [`almost_commuting_unitary_correction`].
#[derive(Debug, Clone)]
pub struct CorrectionResult {
    /// Unitary commuting with every projector, with `||1 - W Z||` small.
    pub z: CMat,
    /// `Wtilde = Z*`, the corrected unitary `sum_j W_j W P_j`.
    pub w_tilde: CMat,
    /// Measured `max_j ||W P_j W* - P_j||`.
    pub defect_max: f64,
    /// Worst-case bound `sqrt(2) N defect_max`.
    pub bound: f64,
    /// Achieved `||1 - W Z|| = ||W - Wtilde||`.
    pub achieved: f64,
    /// Whether the measured defects sat inside the margin `nu / (sqrt(2) N)`
    /// that guarantees `||1 - W Z|| <= nu`.
    pub nu_satisfied: bool,
}

/// Corrects a unitary into one commuting with an orthogonal partition of
/// unity.
///
/// Requires `max_j ||W P_j W* - P_j|| < 1 / (sqrt(2) N)`; the result
/// satisfies `[Z, P_j] = 0` for every projector and
/// `||1 - W Z|| <= sqrt(2) N max_j ||W P_j W* - P_j||`.
pub fn almost_commuting_unitary_correction(
    w: &CMat,
    decomp: &ProjectiveDecomposition,
    nu: f64,
) -> Result<CorrectionResult> {
    let n = decomp.n;
    let count = decomp.len();
    if w.nrows() != n {
        return Err(Error::DimensionMismatch("unitary vs decomposition size".into()));
    }
    let threshold = 1.0 / (2.0f64.sqrt() * count as f64);

    // Per projector: restricted exchange unitary applied to the transported
    // block, accumulated into Wtilde = sum_j (W_j W P_j).
    let mut w_tilde = CMat::zeros(n, n);
    let mut defect_max = 0.0f64;
    for j in 0..count {
        let v = &decomp.blocks[j];
        let a = w * v; // orthonormal columns spanning W P_j W*
        let b = union_basis(v, &a);
        let s = b.ncols();
        let vb = v.adjoint() * &b; // r x s
        let ab = a.adjoint() * &b; // r x s
        let vad = v.adjoint() * &a; // r x r

        // Restriction of P_j - Q_j to the union span; its norm is the
        // defect because the difference vanishes off the span.
        let d_r = vb.adjoint() * &vb - ab.adjoint() * &ab;
        let defect = num::opnorm(&d_r);
        defect_max = defect_max.max(defect);
        if defect >= threshold {
            return Err(Error::CorrectionPrecondition { index: j, defect, threshold });
        }

        // T = P Q + (1-P)(1-Q) maps range(Q_j) onto range(P_j); restricted:
        let eye = num::identity(s);
        let t_r = &eye - ab.adjoint() * &ab - vb.adjoint() * &vb
            + (vb.adjoint() * vad * &ab).map(|z| z * 2.0);
        // (1 - D^2)^{-1/2} on the span.
        let (qd, ev) = num::eigh(&d_r);
        let f_diag = DVector::from_iterator(
            s,
            ev.iter().map(|&lam| {
                let val = (1.0 - lam * lam).max(f64::MIN_POSITIVE);
                Complex64::new(1.0 / val.sqrt(), 0.0)
            }),
        );
        let f_r = &qd * CMat::from_diagonal(&f_diag) * qd.adjoint();
        // U_j = 1 + B (T_r f_r - 1) B*, applied to the block A.
        let u_a = &a + &b * ((t_r * f_r - &eye) * (b.adjoint() * &a));
        w_tilde += u_a * v.adjoint();
    }

    let z = w_tilde.adjoint();
    let achieved = num::opnorm(&(num::identity(n) - w * &z));
    let bound = 2.0f64.sqrt() * count as f64 * defect_max;
    let nu_satisfied = bound <= nu;
    Ok(CorrectionResult { z, w_tilde, defect_max, bound, achieved, nu_satisfied })
}

/// Hermitian generator of a unitary near the identity: `H` hermitian with
/// `||H|| <= 1` and `exp(i pi H / 2) = Z`. Requires all eigenvalue phases
/// of `Z` in the open interval (-pi/2, pi/2).
pub fn unitary_log_generator(z: &CMat) -> Result<CMat> {
    let n = z.nrows();
    let tuple = MatrixTuple::new(vec![z.clone()], VarietyTag::None)?;
    let (q, spec) = joint_diagonalize(&tuple, 1e-7)?;
    let mut phases = Vec::with_capacity(n);
    for p in &spec.points {
        let lam = p[0];
        let theta = lam.im.atan2(lam.re);
        if theta.abs() >= std::f64::consts::FRAC_PI_2 {
            return Err(Error::PhaseOutOfRange { phase: theta });
        }
        phases.push(theta);
    }
    let d = DVector::from_iterator(
        n,
        phases.iter().map(|&t| Complex64::new(2.0 * t / std::f64::consts::PI, 0.0)),
    );
    Ok(num::hermitize(&(&q * CMat::from_diagonal(&d) * q.adjoint())))
}

/// Achieved budgets of an interpolant build.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct Budgets {
    pub delta: f64,
    pub nu: f64,
}

/// Approximate joint isospectral interpolant between nearby commuting
/// hermitian tuples.
#[derive(Debug, Clone)]
pub struct IsospectralInterpolant {
    /// Unitary of the aligning morphism `Psi = Ad[W]`.
    pub w: CMat,
    /// Corrected unitary commuting with the decomposition's projectors;
    /// `exp(i pi H / 2) = Wtilde* W`.
    pub w_tilde: CMat,
    /// Grid approximant of X (`delta`-CPMA), commuting with X.
    pub x_tilde: MatrixTuple,
    /// Rotation generator, hermitian with `||H|| <= 1`.
    pub h: CMat,
    /// Achieved budgets.
    pub budgets: Budgets,
    /// `Psi(X) = (W X_j W*)`, diagonal in Y's joint eigenbasis.
    pub psi_x: MatrixTuple,
    /// CPMA of `psi_x`; equals `psi_1(x_tilde)` up to numerics.
    pub y_tilde: MatrixTuple,
    /// Decomposition underlying `y_tilde` (in Y's basis).
    pub decomp: ProjectiveDecomposition,
    /// Max projector defect and the cell count, for reporting.
    pub defect_max: f64,
    /// Joint eigenbasis of Y.
    pub y_basis: CMat,
    /// Points of `psi_x` (position k holds the X point matched to Y slot k).
    pub psi_points: Vec<Vec<Complex64>>,
    /// Points of Y in the same basis.
    pub y_points: Vec<Vec<Complex64>>,
    rot_basis: CMat,
    rot_phases: Vec<f64>,
}

impl IsospectralInterpolant {
    /// `exp(i pi t H / 2)`.
    pub fn rotation_at(&self, t: f64) -> CMat {
        if t == 0.0 {
            return num::identity(self.rot_basis.nrows());
        }
        let d = DVector::from_iterator(
            self.rot_phases.len(),
            self.rot_phases.iter().map(|&p| Complex64::from_polar(1.0, t * p)),
        );
        &self.rot_basis * CMat::from_diagonal(&d) * self.rot_basis.adjoint()
    }

    /// `psi_t = Ad[exp(i pi t H / 2)]` applied to a tuple. `psi_0` is the
    /// identity morphism, exactly.
    pub fn psi_t(&self, t: f64, x: &MatrixTuple) -> MatrixTuple {
        if t == 0.0 {
            return x.clone();
        }
        x.conjugate(&self.rotation_at(t))
    }

    /// `Psi = Ad[W]`.
    pub fn psi(&self, x: &MatrixTuple) -> MatrixTuple {
        x.conjugate(&self.w)
    }

    /// `Psi~ = Ad[Wtilde* W] = psi_1`.
    pub fn psi_tilde(&self, x: &MatrixTuple) -> MatrixTuple {
        x.conjugate(&(self.w_tilde.adjoint() * &self.w))
    }

    /// Recomputes the rotation eigendata from the stored generator, after
    /// the `h` field has been replaced.
    pub fn refresh_rotation(mut self) -> Self {
        let (q, evals) = num::eigh(&self.h);
        self.rot_basis = q;
        self.rot_phases = evals.iter().map(|&e| std::f64::consts::FRAC_PI_2 * e).collect();
        self
    }
}

pub(crate) enum CpmaMode<'a> {
    Grid,
    Manifold(&'a ChartAtlas),
}

/// Builds the interpolant for cube tuples. `delta` is the CPMA budget,
/// `nu` the acceptable rotation amplitude; measured values beyond either
/// budget surface as [`Error::BudgetInfeasible`].
pub fn build_interpolant(
    x: &MatrixTuple,
    y: &MatrixTuple,
    delta: f64,
    nu: f64,
) -> Result<IsospectralInterpolant> {
    let (itp, _) = build_interpolant_inner(x, y, delta, nu, CpmaMode::Grid)?;
    Ok(itp)
}

/// Manifold flavor of [`build_interpolant`]: the approximant is built in
/// chart parameter space so its joint spectrum stays on the manifold.
/// Returns the chart data alongside the interpolant.
pub fn build_manifold_interpolant(
    x: &MatrixTuple,
    y: &MatrixTuple,
    delta: f64,
    nu: f64,
    atlas: &ChartAtlas,
) -> Result<(IsospectralInterpolant, ManifoldCpma)> {
    let (itp, mc) = build_interpolant_inner(x, y, delta, nu, CpmaMode::Manifold(atlas))?;
    Ok((itp, mc.expect("manifold mode returns chart data")))
}

/// Dispatching builder used by the path constructions: grid CPMA when no
/// atlas is given, manifold CPMA otherwise.
pub(crate) fn build_interpolant_parts(
    x: &MatrixTuple,
    y: &MatrixTuple,
    delta: f64,
    nu: f64,
    atlas: Option<&ChartAtlas>,
) -> Result<(IsospectralInterpolant, Option<ManifoldCpma>)> {
    match atlas {
        None => build_interpolant_inner(x, y, delta, nu, CpmaMode::Grid),
        Some(a) => build_interpolant_inner(x, y, delta, nu, CpmaMode::Manifold(a)),
    }
}

fn build_interpolant_inner(
    x: &MatrixTuple,
    y: &MatrixTuple,
    delta: f64,
    nu: f64,
    mode: CpmaMode<'_>,
) -> Result<(IsospectralInterpolant, Option<ManifoldCpma>)> {
    let mu = metric_eth(x, y)?;
    if mu > delta {
        return Err(Error::BudgetInfeasible {
            reason: format!("eth(X, Y) = {mu:.3e} exceeds the requested delta {delta:.3e}"),
            delta: mu,
            nu: 0.0,
        });
    }
    let cm = conjugation_morphism(x, y, tol::COMMUTATOR_SCALE)?;

    let (y_tilde, decomp, manifold_data) = match mode {
        CpmaMode::Grid => {
            let (yt, dec) = cpma_md(&cm.psi_x, delta)?;
            (yt, dec, None)
        }
        CpmaMode::Manifold(atlas) => {
            let mc = manifold_cpma(&cm.psi_x, delta, atlas)?;
            (mc.z_tilde.clone(), mc.decomp.clone(), Some(mc))
        }
    };

    let correction = almost_commuting_unitary_correction(&cm.w, &decomp, nu).map_err(|e| {
        match e {
            Error::CorrectionPrecondition { index, defect, threshold } => Error::BudgetInfeasible {
                reason: format!(
                    "projector {index} defect {defect:.3e} breaches the correction precondition {threshold:.3e}"
                ),
                delta,
                nu: defect,
            },
            other => other,
        }
    })?;

    let z = correction.w_tilde.adjoint() * &cm.w;
    let h = unitary_log_generator(&z)?;
    let (rot_basis, rot_evals) = num::eigh(&h);
    let rot_phases: Vec<f64> =
        rot_evals.iter().map(|&e| std::f64::consts::FRAC_PI_2 * e).collect();

    // Transport the approximant back: Xtilde = W* Ytilde W.
    let x_tilde = y_tilde
        .map(|c| cm.w.adjoint() * c * &cm.w)
        .with_variety(x.variety.clone());

    let delta_achieved = metric_eth(&x_tilde, x)?.max(mu);
    // The rotation stays within 2 ||1 - Z|| at every t; together with the
    // distance from Psi(X) to Y this is the effective nu.
    let one_minus_z = num::opnorm(&(num::identity(x.n()) - &z));
    let nu_achieved = (2.0 * one_minus_z).max(cm.eth_to_y).max(1e-12);
    if nu_achieved > nu {
        return Err(Error::BudgetInfeasible {
            reason: format!(
                "achieved nu {nu_achieved:.3e} exceeds the requested budget {nu:.3e}"
            ),
            delta: delta_achieved,
            nu: nu_achieved,
        });
    }

    let itp = IsospectralInterpolant {
        w: cm.w,
        w_tilde: correction.w_tilde,
        x_tilde,
        h,
        budgets: Budgets { delta: delta_achieved, nu: nu_achieved },
        psi_x: cm.psi_x,
        y_tilde,
        decomp,
        defect_max: correction.defect_max,
        y_basis: cm.y_basis,
        psi_points: cm.psi_points,
        y_points: cm.y_points,
        rot_basis,
        rot_phases,
    };
    Ok((itp, manifold_data))
}
