//! Vacuum-normalized quadrature types shared by every stage of the toolkit.
//!
//! Conventions fixed here and relied on everywhere else:
//!
//! * the vacuum state has unit variance in each quadrature, so a two-mode
//!   vacuum covariance matrix is the 4×4 identity;
//! * mode ordering is `(X_A, Y_A, X_B, Y_B)`;
//! * decibel values are power-like: `dB = 10·log10(ratio)`.

use nalgebra::Matrix4;

use crate::error::{Error, Result};

/// Largest tolerated relative asymmetry before a covariance matrix is
/// reported as non-symmetric.
pub const SYMMETRY_REL_TOL: f64 = 1e-12;

/// Slack on the Heisenberg bound `nu >= 1` for the smallest symplectic
/// eigenvalue; absorbs rounding in long transformation chains.
pub const UNCERTAINTY_TOL: f64 = 1e-9;

/// Strictly increasing grid of positive sideband frequencies in hertz.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyGrid {
    points: Vec<f64>,
}

impl FrequencyGrid {
    /// Validates and wraps an explicit list of grid points.
    ///
    /// Requires at least two strictly increasing, strictly positive, finite
    /// frequencies.
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InvalidGrid {
                reason: format!("need at least 2 points, got {}", points.len()),
            });
        }
        for (i, &f) in points.iter().enumerate() {
            if !f.is_finite() || f <= 0.0 {
                return Err(Error::InvalidGrid {
                    reason: format!("point {i} is {f} Hz; frequencies must be finite and positive"),
                });
            }
            if i > 0 && f <= points[i - 1] {
                return Err(Error::InvalidGrid {
                    reason: format!(
                        "points must be strictly increasing, but point {i} ({f} Hz) \
                         does not exceed point {} ({} Hz)",
                        i - 1,
                        points[i - 1]
                    ),
                });
            }
        }
        Ok(FrequencyGrid { points })
    }

    /// Builds a uniform grid of `n` points spanning `[start_hz, stop_hz]`.
    pub fn linspace(start_hz: f64, stop_hz: f64, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidGrid {
                reason: format!("need at least 2 points, got {n}"),
            });
        }
        if !(start_hz.is_finite() && stop_hz.is_finite()) || start_hz <= 0.0 || stop_hz <= start_hz
        {
            return Err(Error::InvalidGrid {
                reason: format!(
                    "span {start_hz} Hz to {stop_hz} Hz must be finite, positive and increasing"
                ),
            });
        }
        let step = (stop_hz - start_hz) / (n - 1) as f64;
        let mut points: Vec<f64> = (0..n).map(|i| start_hz + step * i as f64).collect();
        // Pin the endpoint so downstream interpolation never falls off the span
        // by one rounding ulp.
        points[n - 1] = stop_hz;
        FrequencyGrid::new(points)
    }

    /// Grid points in hertz.
    pub fn points(&self) -> &[f64] {
        &self.points
    }

    /// Number of grid points.
    pub fn len(&self) -> usize {
        self.points.len()
    }

    /// Always false: construction requires at least two points.
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Lowest grid frequency in hertz.
    pub fn start_hz(&self) -> f64 {
        self.points[0]
    }

    /// Highest grid frequency in hertz.
    pub fn stop_hz(&self) -> f64 {
        self.points[self.points.len() - 1]
    }

    /// Iterates over grid frequencies.
    pub fn iter(&self) -> std::iter::Copied<std::slice::Iter<'_, f64>> {
        self.points.iter().copied()
    }
}

/// Variance of a single quadrature in vacuum units; positive by construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureVariance(f64);

impl QuadratureVariance {
    /// Wraps a variance after checking it is finite and strictly positive.
    pub fn new(value: f64) -> Result<Self> {
        if !value.is_finite() || value <= 0.0 {
            return Err(Error::invalid(
                "quadrature variance",
                value,
                "must be finite and strictly positive",
            ));
        }
        Ok(QuadratureVariance(value))
    }

    /// Unit variance of the vacuum state.
    pub fn vacuum() -> Self {
        QuadratureVariance(1.0)
    }

    /// Variance in vacuum units.
    pub fn value(self) -> f64 {
        self.0
    }

    /// Variance relative to vacuum expressed in decibels.
    pub fn db(self) -> f64 {
        10.0 * self.0.log10()
    }
}

/// Power ratio expressed in decibels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecibelValue(f64);

impl DecibelValue {
    /// Wraps a finite decibel value.
    pub fn new(db: f64) -> Result<Self> {
        if !db.is_finite() {
            return Err(Error::invalid("decibel value", db, "must be finite"));
        }
        Ok(DecibelValue(db))
    }

    /// Value in decibels.
    pub fn db(self) -> f64 {
        self.0
    }

    /// Linear power ratio `10^(dB/10)`.
    pub fn ratio(self) -> f64 {
        ratio_from_db(self.0)
    }
}

/// Converts a strictly positive power ratio to decibels.
pub fn db_from_ratio(ratio: f64) -> Result<DecibelValue> {
    if !ratio.is_finite() || ratio <= 0.0 {
        return Err(Error::invalid(
            "power ratio",
            ratio,
            "must be finite and strictly positive",
        ));
    }
    DecibelValue::new(10.0 * ratio.log10())
}

/// Converts decibels to a linear power ratio.
pub fn ratio_from_db(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Symmetric 4×4 covariance matrix of the quadratures `(X_A, Y_A, X_B, Y_B)`.
///
/// Construction is unchecked so that transformation chains stay cheap; the
/// physics invariants (symmetry, positive definiteness, Heisenberg bound) are
/// audited by [`validate_covariance`].
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceMatrix(Matrix4<f64>);

impl CovarianceMatrix {
    /// Covariance of the two-mode vacuum: the identity.
    pub fn vacuum() -> Self {
        CovarianceMatrix(Matrix4::identity())
    }

    /// Wraps an explicit matrix.
    pub fn from_matrix(m: Matrix4<f64>) -> Self {
        CovarianceMatrix(m)
    }

    /// Diagonal covariance from four quadrature variances.
    pub fn from_diagonal(vx_a: f64, vy_a: f64, vx_b: f64, vy_b: f64) -> Self {
        CovarianceMatrix(Matrix4::from_diagonal(&nalgebra::Vector4::new(
            vx_a, vy_a, vx_b, vy_b,
        )))
    }

    /// Underlying matrix.
    pub fn matrix(&self) -> &Matrix4<f64> {
        &self.0
    }

    /// Variance of `X_A`.
    pub fn var_x_a(&self) -> f64 {
        self.0[(0, 0)]
    }

    /// Variance of `Y_A`.
    pub fn var_y_a(&self) -> f64 {
        self.0[(1, 1)]
    }

    /// Variance of `X_B`.
    pub fn var_x_b(&self) -> f64 {
        self.0[(2, 2)]
    }

    /// Variance of `Y_B`.
    pub fn var_y_b(&self) -> f64 {
        self.0[(3, 3)]
    }

    /// Covariance of `X_A` with `X_B`.
    pub fn cov_x(&self) -> f64 {
        self.0[(0, 2)]
    }

    /// Covariance of `Y_A` with `Y_B`.
    pub fn cov_y(&self) -> f64 {
        self.0[(1, 3)]
    }

    /// Applies a symplectic (or any linear) map `S`, returning `S·C·Sᵀ`.
    pub fn congruence(&self, s: &Matrix4<f64>) -> CovarianceMatrix {
        CovarianceMatrix(s * self.0 * s.transpose())
    }

    /// Largest absolute deviation from symmetry, relative to the matrix scale.
    pub fn asymmetry(&self) -> f64 {
        let scale = self.0.amax().max(1.0);
        let mut worst = 0.0f64;
        for i in 0..4 {
            for j in (i + 1)..4 {
                worst = worst.max((self.0[(i, j)] - self.0[(j, i)]).abs());
            }
        }
        worst / scale
    }

    /// Whether the matrix is symmetric within [`SYMMETRY_REL_TOL`].
    pub fn is_symmetric(&self) -> bool {
        self.asymmetry() <= SYMMETRY_REL_TOL
    }

    /// Whether a Cholesky factorization exists (positive definiteness).
    pub fn is_positive_definite(&self) -> bool {
        nalgebra::Cholesky::new(self.0).is_some()
    }

    /// Both symplectic eigenvalues, smallest first.
    ///
    /// Uses the closed form for two-mode Gaussian states: with 2×2 blocks
    /// `A`, `B`, `C` of the covariance matrix and
    /// `Δ = det A + det B + 2·det C`, the eigenvalues are
    /// `ν±² = (Δ ± sqrt(Δ² − 4·det σ)) / 2`. No iterative eigensolver is
    /// involved, so the result is deterministic across platforms.
    pub fn symplectic_eigenvalues(&self) -> (f64, f64) {
        let m = &self.0;
        let det_a = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
        let det_b = m[(2, 2)] * m[(3, 3)] - m[(2, 3)] * m[(3, 2)];
        let det_c = m[(0, 2)] * m[(1, 3)] - m[(0, 3)] * m[(1, 2)];
        let delta = det_a + det_b + 2.0 * det_c;
        let det_m = m.determinant();
        // Rounding can push the discriminant (and, for near-pure states, the
        // smaller eigenvalue) slightly negative; clamp before the square roots.
        let disc = (delta * delta - 4.0 * det_m).max(0.0).sqrt();
        let nu_minus = ((delta - disc) / 2.0).max(0.0).sqrt();
        let nu_plus = ((delta + disc) / 2.0).max(0.0).sqrt();
        (nu_minus, nu_plus)
    }

    /// Smallest symplectic eigenvalue.
    pub fn min_symplectic_eigenvalue(&self) -> f64 {
        self.symplectic_eigenvalues().0
    }

    /// Covariance of the partially transposed state (momentum of mode B
    /// reversed): flips the sign of row and column `Y_B`.
    pub fn partial_transpose(&self) -> CovarianceMatrix {
        let mut m = self.0;
        for k in 0..4 {
            m[(3, k)] = -m[(3, k)];
            m[(k, 3)] = -m[(k, 3)];
        }
        CovarianceMatrix(m)
    }
}

/// Two-mode covariance matrices tabulated over a frequency grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoModeCovarianceSpectrum {
    grid: FrequencyGrid,
    matrices: Vec<CovarianceMatrix>,
}

impl TwoModeCovarianceSpectrum {
    /// Pairs a grid with one covariance matrix per grid point.
    pub fn new(grid: FrequencyGrid, matrices: Vec<CovarianceMatrix>) -> Result<Self> {
        if matrices.len() != grid.len() {
            return Err(Error::LengthMismatch {
                name: "covariance matrices",
                expected: grid.len(),
                actual: matrices.len(),
            });
        }
        Ok(TwoModeCovarianceSpectrum { grid, matrices })
    }

    /// Frequency grid.
    pub fn grid(&self) -> &FrequencyGrid {
        &self.grid
    }

    /// Covariance matrices, aligned with the grid.
    pub fn matrices(&self) -> &[CovarianceMatrix] {
        &self.matrices
    }

    /// Covariance matrix at grid index `i`.
    pub fn at(&self, i: usize) -> &CovarianceMatrix {
        &self.matrices[i]
    }

    /// Applies `f` to every matrix, keeping the grid.
    pub fn map(&self, mut f: impl FnMut(&CovarianceMatrix) -> CovarianceMatrix) -> Self {
        TwoModeCovarianceSpectrum {
            grid: self.grid.clone(),
            matrices: self.matrices.iter().map(&mut f).collect(),
        }
    }
}

/// Vacuum covariance (identity matrix) at every grid point.
pub fn vacuum_covariance(grid: &FrequencyGrid) -> TwoModeCovarianceSpectrum {
    TwoModeCovarianceSpectrum {
        grid: grid.clone(),
        matrices: vec![CovarianceMatrix::vacuum(); grid.len()],
    }
}

/// One detected physics violation in a covariance spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceFailure {
    /// Grid index of the offending matrix.
    pub index: usize,
    /// Grid frequency of the offending matrix in hertz.
    pub frequency_hz: f64,
    /// What went wrong.
    pub kind: FailureKind,
}

/// Classses of covariance violations reported by [`validate_covariance`].
#[derive(Debug, Clone, PartialEq)]
pub enum FailureKind {
    /// Off-diagonal entries disagree beyond [`SYMMETRY_REL_TOL`].
    Asymmetric { relative_deviation: f64 },
    /// Cholesky factorization failed.
    NotPositiveDefinite,
    /// Smallest symplectic eigenvalue fell below `1 - UNCERTAINTY_TOL`.
    UncertaintyBound { min_symplectic_eigenvalue: f64 },
}

/// Outcome of auditing a covariance spectrum; never aborts on failure.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceValidation {
    /// All violations found, in grid order.
    pub failures: Vec<CovarianceFailure>,
}

impl CovarianceValidation {
    /// True when no violation was found.
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Audits every matrix in a spectrum for symmetry, positive definiteness and
/// the Heisenberg bound on the smallest symplectic eigenvalue.
pub fn validate_covariance(spectrum: &TwoModeCovarianceSpectrum) -> CovarianceValidation {
    let mut failures = Vec::new();
    for (i, (f, m)) in spectrum.grid.iter().zip(spectrum.matrices.iter()).enumerate() {
        let asym = m.asymmetry();
        if asym > SYMMETRY_REL_TOL {
            failures.push(CovarianceFailure {
                index: i,
                frequency_hz: f,
                kind: FailureKind::Asymmetric {
                    relative_deviation: asym,
                },
            });
            // The remaining checks assume symmetry; skip them for this matrix.
            continue;
        }
        if !m.is_positive_definite() {
            failures.push(CovarianceFailure {
                index: i,
                frequency_hz: f,
                kind: FailureKind::NotPositiveDefinite,
            });
            continue;
        }
        let nu_min = m.min_symplectic_eigenvalue();
        if nu_min < 1.0 - UNCERTAINTY_TOL {
            failures.push(CovarianceFailure {
                index: i,
                frequency_hz: f,
                kind: FailureKind::UncertaintyBound {
                    min_symplectic_eigenvalue: nu_min,
                },
            });
        }
    }
    CovarianceValidation { failures }
}
