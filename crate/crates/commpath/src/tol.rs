//! Centralized tolerance ladder.
//!
//! Residual thresholds degrade by roughly two digits per numerical stage at
//! the target scale (n <= 128): exact algebraic identities sit near machine
//! precision, identities transported through one conjugation lose a couple of
//! digits, and residuals sampled along whole paths lose a couple more.

/// Algebraic identities (partitions of unity, commutators of spectral
/// projectors with their source, exact reconstructions).
pub const ALGEBRAIC: f64 = 1e-10;

/// Identities transported through a unitary conjugation (interpolant
/// endpoint identities, variety residuals along cube/disk paths).
pub const CONJUGATION: f64 = 1e-8;

/// Manifold and defining-equation residuals sampled along paths.
pub const VARIETY_PATH: f64 = 1e-6;

/// Junction agreement for concatenated path segments.
pub const JUNCTION: f64 = 1e-12;

/// Default commutator tolerance is `COMMUTATOR_SCALE * max_j ||X_j||`.
pub const COMMUTATOR_SCALE: f64 = 1e-8;

/// Distance threshold for snapping a point onto a manifold.
pub const SNAP: f64 = 1e-6;

/// Hermiticity defect allowed on constructed hermitian outputs, relative to
/// the matrix norm.
pub const HERMITIAN_REL: f64 = 1e-13;

/// Slack allowed when forwarding inequality bounds through floating point.
pub const BOUND_SLACK: f64 = 1e-10;

/// Tolerance configuration carried by certification routines. All fields
/// default to the ladder above and are overridable per call (CLI `--tol-*`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub algebraic: f64,
    pub conjugation: f64,
    pub variety_path: f64,
    pub samples: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            algebraic: ALGEBRAIC,
            conjugation: CONJUGATION,
            variety_path: VARIETY_PATH,
            samples: 33,
        }
    }
}

/// Chebyshev-spaced certification schedule on `[0, 1]`, endpoints included.
pub fn chebyshev_schedule(samples: usize) -> Vec<f64> {
    assert!(samples >= 2, "a schedule needs at least both endpoints");
    let k = samples - 1;
    (0..=k)
        .map(|i| 0.5 * (1.0 - (std::f64::consts::PI * i as f64 / k as f64).cos()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_hits_endpoints() {
        let s = chebyshev_schedule(33);
        assert_eq!(s.len(), 33);
        assert_eq!(s[0], 0.0);
        assert!((s[32] - 1.0).abs() < 1e-15);
        for w in s.windows(2) {
            assert!(w[0] < w[1]);
        }
    }
}
