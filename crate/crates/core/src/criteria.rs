//! Entanglement witnesses evaluated on joint spectra and covariance matrices.
//!
//! Two criteria are scored, both in vacuum-normalized units:
//!
//! * the symmetric Duan sum `D = Δ²(X_A + X_B) + Δ²(Y_A - Y_B)`, with
//!   `D < 4` witnessing inseparability and, for symmetric states, `D < 2`
//!   additionally witnessing EPR steering;
//! * the Reid product `E = V(X_A|X_B) · V(Y_A|Y_B)` of conditional
//!   variances with optimal linear estimators, with `E < 1` the EPR bound.
//!
//! Two-mode squeezing relative to vacuum is reported as
//! `-10·log10(D / 4)` decibels, positive when the state beats vacuum.

use crate::channel::JointQuadratureSpectra;
use crate::error::{Error, Result};
use crate::quadrature::{FrequencyGrid, TwoModeCovarianceSpectrum};

/// Duan inseparability bound: states with `D` below this are entangled.
pub const DUAN_SEPARABILITY_BOUND: f64 = 4.0;

/// Duan EPR bound for symmetric states.
pub const DUAN_EPR_BOUND: f64 = 2.0;

/// Reid EPR bound on the conditional-variance product.
pub const REID_EPR_BOUND: f64 = 1.0;

/// Witness verdicts at one frequency.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriteriaFlags {
    /// `D < 4`: the state is inseparable.
    pub entangled: bool,
    /// `D < 2`: EPR steering for symmetric states.
    pub epr_by_duan: bool,
    /// `E < 1`; `None` when no Reid product was computed.
    pub epr_by_reid: Option<bool>,
}

/// Witness values and verdicts over a frequency grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CriteriaSpectrum {
    grid: FrequencyGrid,
    duan: Vec<f64>,
    tms_db: Vec<f64>,
    reid_product: Option<Vec<f64>>,
    flags: Vec<CriteriaFlags>,
}

impl CriteriaSpectrum {
    /// Builds a spectrum from Duan values alone.
    pub fn from_duan(grid: FrequencyGrid, duan: Vec<f64>) -> Result<Self> {
        CriteriaSpectrum::build(grid, duan, None)
    }

    /// Builds a spectrum from Duan values and aligned Reid products.
    pub fn from_duan_and_reid(
        grid: FrequencyGrid,
        duan: Vec<f64>,
        reid_product: Vec<f64>,
    ) -> Result<Self> {
        CriteriaSpectrum::build(grid, duan, Some(reid_product))
    }

    fn build(grid: FrequencyGrid, duan: Vec<f64>, reid_product: Option<Vec<f64>>) -> Result<Self> {
        if duan.len() != grid.len() {
            return Err(Error::LengthMismatch {
                name: "Duan values",
                expected: grid.len(),
                actual: duan.len(),
            });
        }
        for &d in &duan {
            if !d.is_finite() || d <= 0.0 {
                return Err(Error::invalid(
                    "Duan sum",
                    d,
                    "must be finite and positive",
                ));
            }
        }
        if let Some(reid) = &reid_product {
            if reid.len() != grid.len() {
                return Err(Error::LengthMismatch {
                    name: "Reid products",
                    expected: grid.len(),
                    actual: reid.len(),
                });
            }
        }
        let tms_db: Vec<f64> = duan.iter().map(|&d| -10.0 * (d / 4.0).log10()).collect();
        let flags = duan
            .iter()
            .enumerate()
            .map(|(i, &d)| CriteriaFlags {
                entangled: d < DUAN_SEPARABILITY_BOUND,
                epr_by_duan: d < DUAN_EPR_BOUND,
                epr_by_reid: reid_product
                    .as_ref()
                    .map(|r| r[i] < REID_EPR_BOUND),
            })
            .collect();
        Ok(CriteriaSpectrum {
            grid,
            duan,
            tms_db,
            reid_product,
            flags,
        })
    }

    /// Frequency grid.
    pub fn grid(&self) -> &FrequencyGrid {
        &self.grid
    }

    /// Duan sums per grid point.
    pub fn duan(&self) -> &[f64] {
        &self.duan
    }

    /// Two-mode squeezing in dB per grid point.
    pub fn tms_db(&self) -> &[f64] {
        &self.tms_db
    }

    /// Reid conditional-variance products, if computed.
    pub fn reid_product(&self) -> Option<&[f64]> {
        self.reid_product.as_deref()
    }

    /// Witness verdicts per grid point.
    pub fn flags(&self) -> &[CriteriaFlags] {
        &self.flags
    }
}

/// Duan sums `2·(Var(X_A+X_B) + Var(Y_A-Y_B)) / 2` from measured joint
/// spectra: since the joint variances are already normalized to vacuum,
/// `D = 2·(V_xsum + V_ydiff)`.
pub fn duan_values(joint: &JointQuadratureSpectra) -> Vec<f64> {
    joint
        .var_xsum()
        .iter()
        .zip(joint.var_ydiff())
        .map(|(&x, &y)| 2.0 * (x + y))
        .collect()
}

/// Duan sums straight from a covariance spectrum (unit detector gains):
/// `D = Var(X_A) + Var(X_B) + 2 Cov_X + Var(Y_A) + Var(Y_B) - 2 Cov_Y`.
pub fn duan_from_covariance(cov: &TwoModeCovarianceSpectrum) -> Vec<f64> {
    cov.matrices()
        .iter()
        .map(|c| {
            c.var_x_a() + c.var_x_b() + 2.0 * c.cov_x() + c.var_y_a() + c.var_y_b()
                - 2.0 * c.cov_y()
        })
        .collect()
}

/// Two-mode squeezing relative to vacuum, `-10·log10(D/4)` dB; positive for
/// entangled states.
pub fn tms_db(duan: f64) -> Result<f64> {
    if !duan.is_finite() || duan <= 0.0 {
        return Err(Error::invalid("Duan sum", duan, "must be positive"));
    }
    Ok(-10.0 * (duan / 4.0).log10())
}

/// Reid EPR products `V(X_A|X_B) · V(Y_A|Y_B)` per grid point.
///
/// Conditional variances use the optimal linear estimator, i.e. the Schur
/// complement of the conditioning variance:
/// `V(X_A|X_B) = Var(X_A) - Cov(X_A,X_B)² / Var(X_B)`.
/// Fails when a conditioning variance is not strictly positive.
pub fn reid_epr_products(cov: &TwoModeCovarianceSpectrum) -> Result<Vec<f64>> {
    cov.matrices()
        .iter()
        .map(|c| {
            let (vxb, vyb) = (c.var_x_b(), c.var_y_b());
            for v in [vxb, vyb] {
                if !v.is_finite() || v <= 0.0 {
                    return Err(Error::invalid(
                        "conditioning variance",
                        v,
                        "must be positive to define a conditional variance",
                    ));
                }
            }
            let cond_x = c.var_x_a() - c.cov_x() * c.cov_x() / vxb;
            let cond_y = c.var_y_a() - c.cov_y() * c.cov_y() / vyb;
            Ok(cond_x * cond_y)
        })
        .collect()
}

/// Contiguous frequency interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Band {
    /// Lower edge in hertz.
    pub start_hz: f64,
    /// Upper edge in hertz.
    pub stop_hz: f64,
}

/// Summary verdict of a criteria spectrum; see [`classify`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Classification {
    /// Contiguous band around the Duan minimum where `D < 4`.
    pub entangled_band: Option<Band>,
    /// Contiguous band around the Duan minimum where `D < 2`.
    pub epr_band: Option<Band>,
    /// Smallest Duan sum on the grid.
    pub min_duan: f64,
    /// Grid frequency of the smallest Duan sum, hertz.
    pub min_duan_frequency_hz: f64,
}

/// Locates the entangled (`D < 4`) and EPR (`D < 2`) bands around the global
/// Duan minimum, with band edges linearly interpolated between grid points.
/// A band extending beyond the grid is clipped to the grid span.
pub fn classify(spectrum: &CriteriaSpectrum) -> Classification {
    let duan = spectrum.duan();
    let freqs = spectrum.grid().points();
    let (min_idx, &min_duan) = duan
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("grid has at least two points");

    Classification {
        entangled_band: band_around(freqs, duan, min_idx, DUAN_SEPARABILITY_BOUND),
        epr_band: band_around(freqs, duan, min_idx, DUAN_EPR_BOUND),
        min_duan,
        min_duan_frequency_hz: freqs[min_idx],
    }
}

/// Expands from `center` (which must be the argmin) to the first threshold
/// crossings on either side.
fn band_around(freqs: &[f64], duan: &[f64], center: usize, threshold: f64) -> Option<Band> {
    if duan[center] >= threshold {
        return None;
    }
    // Left edge: walk down while still below threshold.
    let mut lo = center;
    while lo > 0 && duan[lo - 1] < threshold {
        lo -= 1;
    }
    let start_hz = if lo == 0 {
        freqs[0]
    } else {
        interpolate_crossing(freqs[lo - 1], duan[lo - 1], freqs[lo], duan[lo], threshold)
    };
    // Right edge.
    let mut hi = center;
    while hi + 1 < duan.len() && duan[hi + 1] < threshold {
        hi += 1;
    }
    let stop_hz = if hi + 1 == duan.len() {
        freqs[duan.len() - 1]
    } else {
        interpolate_crossing(freqs[hi], duan[hi], freqs[hi + 1], duan[hi + 1], threshold)
    };
    Some(Band { start_hz, stop_hz })
}

/// Linear interpolation of the frequency where `duan` crosses `threshold`
/// between two neighboring grid points.
fn interpolate_crossing(f0: f64, d0: f64, f1: f64, d1: f64, threshold: f64) -> f64 {
    debug_assert!((d0 < threshold) != (d1 < threshold) || d0 == threshold || d1 == threshold);
    let t = (threshold - d0) / (d1 - d0);
    f0 + t * (f1 - f0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{apply_uniform_loss, entangle, joint_variances, EntanglerConfig};
    use crate::opa::OpaSpectrumModel;
    use crate::quadrature::{vacuum_covariance, FrequencyGrid};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    const GAMMA: f64 = 1.13e9;
    const X_REF: f64 = 0.6767682521924122;

    fn reference_lossy_cov(grid: &FrequencyGrid) -> crate::quadrature::TwoModeCovarianceSpectrum {
        let src = OpaSpectrumModel::new(GAMMA, X_REF, 1.0).unwrap();
        let cov = entangle(&EntanglerConfig::balanced(src, src), grid);
        apply_uniform_loss(&cov, 0.59).unwrap()
    }

    #[test]
    fn vacuum_scores_exactly_at_the_separability_bound() {
        let grid = FrequencyGrid::new(vec![1.0e6, 1.0e9]).unwrap();
        let vac = vacuum_covariance(&grid);
        let duan = duan_from_covariance(&vac);
        assert_eq!(duan, vec![4.0, 4.0]);
        let spectrum = CriteriaSpectrum::from_duan(grid, duan).unwrap();
        assert_eq!(spectrum.tms_db(), &[0.0, 0.0]);
        assert!(!spectrum.flags()[0].entangled);
        assert!(spectrum.flags()[0].epr_by_reid.is_none());
    }

    #[test]
    fn joint_and_covariance_routes_agree_on_duan() {
        let grid = FrequencyGrid::linspace(1.0e6, 1.48e9, 64).unwrap();
        let cov = reference_lossy_cov(&grid);
        let via_joint = duan_values(&joint_variances(&cov));
        let via_cov = duan_from_covariance(&cov);
        for (a, b) in via_joint.iter().zip(&via_cov) {
            assert_relative_eq!(a, b, max_relative = 1e-12);
        }
    }

    #[test]
    fn lossy_reference_duan_and_squeezing_at_300_mhz() {
        let grid = FrequencyGrid::new(vec![300.0e6, 600.0e6]).unwrap();
        let duan = duan_values(&joint_variances(&reference_lossy_cov(&grid)));
        assert_relative_eq!(duan[0], 1.7832703765200235, max_relative = 1e-12);
        assert_relative_eq!(
            tms_db(duan[0]).unwrap(),
            3.5084279614560323,
            max_relative = 1e-12
        );
    }

    #[test]
    fn lossless_squeezing_in_db_at_300_mhz() {
        let grid = FrequencyGrid::new(vec![300.0e6, 600.0e6]).unwrap();
        let src = OpaSpectrumModel::new(GAMMA, X_REF, 1.0).unwrap();
        let cov = entangle(&EntanglerConfig::balanced(src, src), &grid);
        let duan = duan_values(&joint_variances(&cov));
        assert_relative_eq!(
            tms_db(duan[0]).unwrap(),
            12.167556007364286,
            max_relative = 1e-12
        );
    }

    #[test]
    fn tms_db_rejects_nonpositive_duan() {
        assert!(tms_db(0.0).is_err());
        assert!(tms_db(-1.0).is_err());
        assert!(tms_db(f64::NAN).is_err());
    }

    #[test]
    fn reid_product_of_lossy_reference_state() {
        let grid = FrequencyGrid::new(vec![100.0e6, 300.0e6]).unwrap();
        let reid = reid_epr_products(&reference_lossy_cov(&grid)).unwrap();
        assert_relative_eq!(reid[0], 0.710643026330576, max_relative = 1e-12);
        assert_relative_eq!(reid[1], 0.7293914047437514, max_relative = 1e-12);
        assert!(reid[0] < REID_EPR_BOUND);
    }

    #[test]
    fn reid_conditional_variance_matches_schur_determinant_form() {
        // Independent route: V(X_A|X_B) = det([[Vxa, C],[C, Vxb]]) / Vxb.
        let grid = FrequencyGrid::linspace(1.0e6, 1.48e9, 32).unwrap();
        let cov = reference_lossy_cov(&grid);
        let products = reid_epr_products(&cov).unwrap();
        for (c, &p) in cov.matrices().iter().zip(&products) {
            let det_x = c.var_x_a() * c.var_x_b() - c.cov_x() * c.cov_x();
            let det_y = c.var_y_a() * c.var_y_b() - c.cov_y() * c.cov_y();
            let expected = (det_x / c.var_x_b()) * (det_y / c.var_y_b());
            assert_relative_eq!(p, expected, max_relative = 1e-12);
        }
    }

    #[test]
    fn reid_crossing_sits_at_half_detection_efficiency() {
        // Pure state with extreme anti-squeezing: x chosen so V_anti = 1e6.
        // The Reid product crosses 1 at eta = 1/2 in this limit.
        let grid = FrequencyGrid::new(vec![1.0, 2.0]).unwrap();
        let src = OpaSpectrumModel::new(GAMMA, 0.998001998001998, 1.0).unwrap();
        let pure = entangle(&EntanglerConfig::balanced(src, src), &grid);
        let reid_at = |eta: f64| -> f64 {
            reid_epr_products(&apply_uniform_loss(&pure, eta).unwrap()).unwrap()[0]
        };
        assert!(reid_at(0.501) < 1.0);
        assert!(reid_at(0.499) > 1.0);
        let mut lo = 0.3;
        let mut hi = 0.8;
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if reid_at(mid) > 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert_relative_eq!(0.5 * (lo + hi), 0.5, epsilon = 1e-3);
    }

    #[test]
    fn reid_rejects_degenerate_conditioning_variance() {
        let grid = FrequencyGrid::new(vec![1.0e6, 2.0e6]).unwrap();
        let broken = crate::quadrature::TwoModeCovarianceSpectrum::new(
            grid,
            vec![
                crate::quadrature::CovarianceMatrix::from_diagonal(1.0, 1.0, 0.0, 1.0),
                crate::quadrature::CovarianceMatrix::vacuum(),
            ],
        )
        .unwrap();
        assert!(reid_epr_products(&broken).is_err());
    }

    #[test]
    fn classify_reference_model_over_measurement_band() {
        let grid = FrequencyGrid::linspace(1.0e6, 1.48e9, 740).unwrap();
        let cov = reference_lossy_cov(&grid);
        let duan = duan_values(&joint_variances(&cov));
        let spectrum = CriteriaSpectrum::from_duan(grid, duan).unwrap();
        let verdict = classify(&spectrum);

        // Entangled across the whole grid: D runs from 1.73 to 2.59.
        let ent = verdict.entangled_band.expect("entangled band");
        assert_eq!(ent.start_hz, 1.0e6);
        assert_eq!(ent.stop_hz, 1.48e9);

        assert_relative_eq!(verdict.min_duan, 1.7276994911581967, max_relative = 1e-9);
        assert_eq!(verdict.min_duan_frequency_hz, 1.0e6);

        // EPR band ends where D crosses 2; analytic crossing at 699.135 MHz.
        let epr = verdict.epr_band.expect("EPR band");
        assert_eq!(epr.start_hz, 1.0e6);
        assert_relative_eq!(epr.stop_hz, 699_135_281.8118442, max_relative = 1e-4);
    }

    #[test]
    fn classify_reports_no_bands_for_vacuum() {
        let grid = FrequencyGrid::linspace(1.0e6, 1.0e9, 16).unwrap();
        let duan = vec![4.0; 16];
        let spectrum = CriteriaSpectrum::from_duan(grid, duan).unwrap();
        let verdict = classify(&spectrum);
        assert!(verdict.entangled_band.is_none());
        assert!(verdict.epr_band.is_none());
        assert_eq!(verdict.min_duan, 4.0);
    }

    #[test]
    fn criteria_spectrum_rejects_bad_input() {
        let grid = FrequencyGrid::new(vec![1.0e6, 2.0e6]).unwrap();
        assert!(CriteriaSpectrum::from_duan(grid.clone(), vec![4.0]).is_err());
        assert!(CriteriaSpectrum::from_duan(grid.clone(), vec![4.0, -1.0]).is_err());
        assert!(
            CriteriaSpectrum::from_duan_and_reid(grid, vec![4.0, 4.0], vec![1.0]).is_err()
        );
    }

    proptest! {
        #[test]
        fn flags_are_consistent_with_values(
            x in 0.0f64..0.95,
            eta in 0.0f64..1.0,
        ) {
            let grid = FrequencyGrid::linspace(1.0e6, 1.48e9, 24).unwrap();
            let src = OpaSpectrumModel::new(GAMMA, x, 1.0).unwrap();
            let cov = apply_uniform_loss(
                &entangle(&EntanglerConfig::balanced(src, src), &grid),
                eta,
            ).unwrap();
            let duan = duan_values(&joint_variances(&cov));
            let reid = reid_epr_products(&cov).unwrap();
            let spectrum =
                CriteriaSpectrum::from_duan_and_reid(grid, duan.clone(), reid.clone()).unwrap();
            for (i, flags) in spectrum.flags().iter().enumerate() {
                prop_assert_eq!(flags.entangled, duan[i] < 4.0);
                prop_assert_eq!(flags.epr_by_duan, duan[i] < 2.0);
                prop_assert_eq!(flags.epr_by_reid, Some(reid[i] < 1.0));
            }
        }

        #[test]
        fn physical_states_never_beat_duan_zero(
            x in 0.0f64..0.99,
            eta in 0.0f64..1.0,
            phase_deg in 0.0f64..360.0,
        ) {
            let grid = FrequencyGrid::new(vec![1.0e6, 1.0e9]).unwrap();
            let src = OpaSpectrumModel::new(GAMMA, x, 1.0).unwrap();
            let config = EntanglerConfig::new(
                src, src, phase_deg.to_radians(), 0.5,
            ).unwrap();
            let cov = apply_uniform_loss(&entangle(&config, &grid), eta).unwrap();
            for d in duan_values(&joint_variances(&cov)) {
                prop_assert!(d > 0.0);
            }
        }

        #[test]
        fn interpolated_band_edge_lies_between_bracketing_grid_points(
            eta in 0.45f64..0.75,
        ) {
            let grid = FrequencyGrid::linspace(1.0e6, 1.48e9, 200).unwrap();
            let src = OpaSpectrumModel::new(GAMMA, X_REF, 1.0).unwrap();
            let cov = apply_uniform_loss(
                &entangle(&EntanglerConfig::balanced(src, src), &grid),
                eta,
            ).unwrap();
            let duan = duan_values(&joint_variances(&cov));
            let spectrum = CriteriaSpectrum::from_duan(grid.clone(), duan.clone()).unwrap();
            if let Some(band) = classify(&spectrum).epr_band {
                if band.stop_hz < grid.stop_hz() {
                    // The edge must sit between the last below-threshold grid
                    // point and its neighbor.
                    let below = grid.points().iter().zip(&duan)
                        .filter(|&(_, &d)| d < 2.0)
                        .map(|(&f, _)| f)
                        .fold(f64::MIN, f64::max);
                    let next = grid.points().iter().copied()
                        .find(|&f| f > below)
                        .unwrap();
                    prop_assert!(band.stop_hz >= below && band.stop_hz <= next);
                }
            }
        }
    }
}
