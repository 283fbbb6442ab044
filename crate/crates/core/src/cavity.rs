//! Linear figures of a standing-wave cavity containing a dielectric crystal.
//!
//! All formulas are expressed through the amplitude round-trip factor
//! `rho = sqrt(R1 · R2 · (1 - loss))`:
//!
//! * free spectral range `FSR = c / (2 n L)`
//! * finesse `F = pi · sqrt(rho) / (1 - rho)`
//! * linewidth `FWHM = FSR / F`
//! * resonant power buildup `B = (1 - R1) / (1 - rho)^2`, with `R1` the
//!   coupling mirror through which light is injected
//! * escape efficiency `eta = T_out / (T_out + T_other + loss)`, with
//!   `T_out = 1 - R_out` the output-coupler transmission

use serde::Serialize;

use crate::error::{Error, Result};

/// Speed of light in vacuum, m/s (exact by definition).
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Mirror set and intracavity medium of a two-mirror cavity at one wavelength.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CavityGeometry {
    /// Physical crystal/cavity length in meters.
    pub length_m: f64,
    /// Refractive index of the intracavity medium at this wavelength.
    pub refractive_index: f64,
    /// Power reflectivity of the coupling mirror (input for a pumped cavity,
    /// high reflector for the squeezed output side).
    pub r1: f64,
    /// Power reflectivity of the second mirror.
    pub r2: f64,
    /// Residual fractional power loss per round trip (absorption, scatter).
    pub round_trip_loss: f64,
}

impl CavityGeometry {
    /// Validates the geometry.
    ///
    /// Lengths and indices must be positive, reflectivities and loss must lie
    /// in `[0, 1]`, and the round trip must be lossy overall:
    /// `R1 · R2 · (1 - loss) < 1`.
    pub fn new(
        length_m: f64,
        refractive_index: f64,
        r1: f64,
        r2: f64,
        round_trip_loss: f64,
    ) -> Result<Self> {
        if !length_m.is_finite() || length_m <= 0.0 {
            return Err(Error::invalid("cavity length", length_m, "must be positive"));
        }
        if !refractive_index.is_finite() || refractive_index < 1.0 {
            return Err(Error::invalid(
                "refractive index",
                refractive_index,
                "must be at least 1",
            ));
        }
        for (name, r) in [("mirror reflectivity R1", r1), ("mirror reflectivity R2", r2)] {
            if !r.is_finite() || !(0.0..=1.0).contains(&r) {
                return Err(Error::invalid(name, r, "must lie in [0, 1]"));
            }
        }
        if !round_trip_loss.is_finite() || !(0.0..1.0).contains(&round_trip_loss) {
            return Err(Error::invalid(
                "round-trip loss",
                round_trip_loss,
                "must lie in [0, 1)",
            ));
        }
        if r1 * r2 * (1.0 - round_trip_loss) >= 1.0 {
            return Err(Error::invalid(
                "round-trip power factor",
                r1 * r2 * (1.0 - round_trip_loss),
                "R1*R2*(1-loss) must be below 1",
            ));
        }
        Ok(CavityGeometry {
            length_m,
            refractive_index,
            r1,
            r2,
            round_trip_loss,
        })
    }

    /// Amplitude round-trip factor `rho = sqrt(R1 · R2 · (1 - loss))`.
    pub fn amplitude_round_trip(&self) -> f64 {
        (self.r1 * self.r2 * (1.0 - self.round_trip_loss)).sqrt()
    }
}

/// Derived linear figures of a cavity; see [`figures`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CavityFigures {
    /// Free spectral range in hertz.
    pub fsr_hz: f64,
    /// Finesse (dimensionless).
    pub finesse: f64,
    /// Full linewidth at half maximum in hertz.
    pub fwhm_hz: f64,
    /// Half linewidth in hertz; the cavity decay-rate parameter used by the
    /// squeezing spectra.
    pub hwhm_hz: f64,
    /// Resonant internal power buildup relative to the injected power.
    pub buildup: f64,
}

/// Free spectral range `c / (2 n L)` in hertz.
pub fn free_spectral_range(geometry: &CavityGeometry) -> f64 {
    SPEED_OF_LIGHT / (2.0 * geometry.refractive_index * geometry.length_m)
}

/// Finesse `pi · sqrt(rho) / (1 - rho)`.
///
/// A fully transmissive round trip (`rho = 0`) gives zero finesse.
pub fn finesse(geometry: &CavityGeometry) -> f64 {
    let rho = geometry.amplitude_round_trip();
    std::f64::consts::PI * rho.sqrt() / (1.0 - rho)
}

/// Cavity linewidth (FWHM) in hertz, `FSR / F`.
///
/// Fails for a zero-finesse cavity, whose linewidth is undefined.
pub fn linewidth_fwhm(geometry: &CavityGeometry) -> Result<f64> {
    let f = finesse(geometry);
    if f <= 0.0 {
        return Err(Error::invalid(
            "finesse",
            f,
            "linewidth undefined for a zero-finesse cavity",
        ));
    }
    Ok(free_spectral_range(geometry) / f)
}

/// Resonant power buildup `(1 - R1) / (1 - rho)^2` for injection through the
/// mirror with reflectivity `R1`.
///
/// Fails when `R1 = 1`: a perfectly reflective coupler admits no light.
pub fn power_buildup(geometry: &CavityGeometry) -> Result<f64> {
    if geometry.r1 >= 1.0 {
        return Err(Error::invalid(
            "mirror reflectivity R1",
            geometry.r1,
            "coupling mirror must transmit (R1 < 1) for power buildup",
        ));
    }
    let rho = geometry.amplitude_round_trip();
    Ok((1.0 - geometry.r1) / ((1.0 - rho) * (1.0 - rho)))
}

/// Escape efficiency `T_out / (T_out + T_other + loss)`: the fraction of
/// intracavity signal photons that leave through the output coupler.
///
/// `output_transmission` is `1 - R_out`; `other_transmission` collects the
/// residual transmission of the remaining mirror(s); `internal_loss` is the
/// round-trip absorption/scatter loss.
pub fn escape_efficiency(
    output_transmission: f64,
    other_transmission: f64,
    internal_loss: f64,
) -> Result<f64> {
    for (name, v) in [
        ("output transmission", output_transmission),
        ("other transmission", other_transmission),
        ("internal loss", internal_loss),
    ] {
        if !v.is_finite() || !(0.0..=1.0).contains(&v) {
            return Err(Error::invalid(name, v, "must lie in [0, 1]"));
        }
    }
    let total = output_transmission + other_transmission + internal_loss;
    if total <= 0.0 {
        return Err(Error::invalid(
            "total loss",
            total,
            "escape efficiency undefined for a lossless closed cavity",
        ));
    }
    Ok(output_transmission / total)
}

/// Computes all linear figures of a geometry in one pass.
pub fn figures(geometry: &CavityGeometry) -> Result<CavityFigures> {
    let fsr_hz = free_spectral_range(geometry);
    let finesse = finesse(geometry);
    let fwhm_hz = linewidth_fwhm(geometry)?;
    let buildup = power_buildup(geometry)?;
    Ok(CavityFigures {
        fsr_hz,
        finesse,
        fwhm_hz,
        hwhm_hz: fwhm_hz / 2.0,
        buildup,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    /// 2.6 mm crystal, n = 1.816, output coupler R2 = 64 %, HR R1 = 99.98 %.
    fn signal_cavity() -> CavityGeometry {
        CavityGeometry::new(2.6e-3, 1.816, 0.9998, 0.64, 0.0).unwrap()
    }

    /// Same crystal seen by the pump: input coupler R1 = 98 %, HR R2 = 99.98 %.
    fn pump_cavity() -> CavityGeometry {
        CavityGeometry::new(2.6e-3, 1.816, 0.98, 0.9998, 0.0).unwrap()
    }

    #[test]
    fn free_spectral_range_of_monolithic_crystal() {
        assert_relative_eq!(
            free_spectral_range(&signal_cavity()),
            31_746_913_969.84073,
            max_relative = 1e-12
        );
    }

    #[test]
    fn signal_finesse_and_linewidth() {
        let figs = figures(&signal_cavity()).unwrap();
        assert_relative_eq!(figs.finesse, 14.043309323292497, max_relative = 1e-12);
        assert_relative_eq!(figs.fwhm_hz, 2_260_643_359.694762, max_relative = 1e-12);
        assert_relative_eq!(figs.hwhm_hz, 1_130_321_679.847381, max_relative = 1e-12);
    }

    #[test]
    fn pump_finesse_and_buildup() {
        let figs = figures(&pump_cavity()).unwrap();
        assert_relative_eq!(figs.finesse, 307.95677282585547, max_relative = 1e-12);
        assert_relative_eq!(figs.buildup, 194.15123881049328, max_relative = 1e-12);
    }

    #[test]
    fn escape_efficiency_of_output_coupler_dominated_cavity() {
        // T_out = 36 %, opposite mirror leaks 200 ppm, crystal absorbs
        // 2 * 2.6 mm * 84 ppm/cm per round trip.
        let eta = escape_efficiency(0.36, 2.0e-4, 4.368e-5).unwrap();
        assert_relative_eq!(eta, 0.9993235689797529, max_relative = 1e-12);
    }

    #[test]
    fn escape_efficiency_rejects_closed_lossless_cavity() {
        assert!(escape_efficiency(0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn buildup_requires_transmissive_coupler() {
        let g = CavityGeometry::new(2.6e-3, 1.816, 1.0, 0.64, 0.0).unwrap();
        assert!(power_buildup(&g).is_err());
    }

    #[test]
    fn zero_round_trip_gives_zero_finesse_and_no_linewidth() {
        let g = CavityGeometry::new(1.0e-2, 1.0, 0.0, 0.5, 0.0).unwrap();
        assert_eq!(finesse(&g), 0.0);
        assert!(linewidth_fwhm(&g).is_err());
    }

    #[test]
    fn geometry_rejects_unphysical_parameters() {
        assert!(CavityGeometry::new(0.0, 1.8, 0.9, 0.9, 0.0).is_err());
        assert!(CavityGeometry::new(1e-3, 0.5, 0.9, 0.9, 0.0).is_err());
        assert!(CavityGeometry::new(1e-3, 1.8, 1.2, 0.9, 0.0).is_err());
        assert!(CavityGeometry::new(1e-3, 1.8, 0.9, -0.1, 0.0).is_err());
        assert!(CavityGeometry::new(1e-3, 1.8, 0.9, 0.9, 1.0).is_err());
        // Lossless perfect mirrors: round-trip factor reaches 1.
        assert!(CavityGeometry::new(1e-3, 1.8, 1.0, 1.0, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn linewidth_times_finesse_recovers_fsr(
            r1 in 0.5f64..0.9999,
            r2 in 0.5f64..0.9999,
            loss in 0.0f64..0.01,
            length_mm in 0.5f64..50.0,
        ) {
            let g = CavityGeometry::new(length_mm * 1e-3, 1.816, r1, r2, loss).unwrap();
            let figs = figures(&g).unwrap();
            let fsr = free_spectral_range(&g);
            prop_assert!((figs.fwhm_hz * figs.finesse - fsr).abs() <= 1e-9 * fsr);
        }

        #[test]
        fn escape_efficiency_stays_in_unit_interval(
            t_out in 1e-6f64..1.0,
            t_other in 0.0f64..0.01,
            loss in 0.0f64..0.01,
        ) {
            let eta = escape_efficiency(t_out, t_other, loss).unwrap();
            prop_assert!(eta > 0.0 && eta <= 1.0);
        }
    }
}
