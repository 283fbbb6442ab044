//! Below-threshold optical parametric amplifier: squeezing spectra, focusing
//! integral and parametric-oscillation threshold.
//!
//! The squeezing spectra use the standard cavity-output form for a
//! below-threshold OPA pumped at a fraction `x = sqrt(P / P_thr)` of
//! threshold, with `gamma` the cavity half linewidth (HWHM):
//!
//! ```text
//! V_sq(f)   = 1 - eta_esc · 4x / ((1 + x)^2 + (f/gamma)^2)
//! V_anti(f) = 1 + eta_esc · 4x / ((1 - x)^2 + (f/gamma)^2)
//! ```
//!
//! At unit escape efficiency the output state is pure:
//! `V_sq · V_anti = 1` at every frequency.

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::quadrature::QuadratureVariance;

/// Relative accuracy target for the focusing-integral quadrature.
const QUADRATURE_REL_TOL: f64 = 1e-8;

/// Maximum bisection depth of the adaptive quadrature.
const QUADRATURE_MAX_DEPTH: u32 = 60;

/// Vacuum permittivity, F/m.
const VACUUM_PERMITTIVITY: f64 = 8.854_187_812_8e-12;

/// Frequency-domain model of one below-threshold OPA output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OpaSpectrumModel {
    /// Cavity half linewidth (HWHM) in hertz.
    pub gamma_hwhm_hz: f64,
    /// Pump amplitude ratio `x = sqrt(P / P_thr)`, in `[0, 1)`.
    pub pump_ratio_x: f64,
    /// Escape efficiency of the squeezing cavity, in `[0, 1]`.
    pub escape_efficiency: f64,
}

impl OpaSpectrumModel {
    /// Validates and builds a spectrum model.
    pub fn new(gamma_hwhm_hz: f64, pump_ratio_x: f64, escape_efficiency: f64) -> Result<Self> {
        if !gamma_hwhm_hz.is_finite() || gamma_hwhm_hz <= 0.0 {
            return Err(Error::invalid(
                "cavity half linewidth",
                gamma_hwhm_hz,
                "must be positive",
            ));
        }
        if !pump_ratio_x.is_finite() || !(0.0..1.0).contains(&pump_ratio_x) {
            return Err(Error::invalid(
                "pump ratio x",
                pump_ratio_x,
                "below-threshold operation requires 0 <= x < 1",
            ));
        }
        if !escape_efficiency.is_finite() || !(0.0..=1.0).contains(&escape_efficiency) {
            return Err(Error::invalid(
                "escape efficiency",
                escape_efficiency,
                "must lie in [0, 1]",
            ));
        }
        Ok(OpaSpectrumModel {
            gamma_hwhm_hz,
            pump_ratio_x,
            escape_efficiency,
        })
    }

    /// Model of an unpumped (vacuum-emitting) OPA with the given linewidth.
    pub fn vacuum(gamma_hwhm_hz: f64) -> Result<Self> {
        OpaSpectrumModel::new(gamma_hwhm_hz, 0.0, 1.0)
    }

    /// Squeezed-quadrature variance at sideband frequency `frequency_hz`.
    ///
    /// Even in frequency; strictly positive for any below-threshold pump.
    pub fn squeezed_variance(&self, frequency_hz: f64) -> QuadratureVariance {
        let x = self.pump_ratio_x;
        let w = frequency_hz / self.gamma_hwhm_hz;
        let v = 1.0 - self.escape_efficiency * 4.0 * x / ((1.0 + x) * (1.0 + x) + w * w);
        QuadratureVariance::new(v).expect("below-threshold squeezed variance is positive")
    }

    /// Anti-squeezed-quadrature variance at sideband frequency `frequency_hz`.
    pub fn anti_squeezed_variance(&self, frequency_hz: f64) -> QuadratureVariance {
        let x = self.pump_ratio_x;
        let w = frequency_hz / self.gamma_hwhm_hz;
        let v = 1.0 + self.escape_efficiency * 4.0 * x / ((1.0 - x) * (1.0 - x) + w * w);
        QuadratureVariance::new(v).expect("anti-squeezed variance exceeds vacuum")
    }
}

/// Pump amplitude ratio `x = sqrt(pump_power / threshold_power)`.
///
/// Requires a positive threshold, a non-negative pump, and below-threshold
/// operation (`pump_power < threshold_power`).
pub fn pump_ratio(pump_power_w: f64, threshold_power_w: f64) -> Result<f64> {
    if !threshold_power_w.is_finite() || threshold_power_w <= 0.0 {
        return Err(Error::invalid(
            "threshold power",
            threshold_power_w,
            "must be positive",
        ));
    }
    if !pump_power_w.is_finite() || pump_power_w < 0.0 {
        return Err(Error::invalid(
            "pump power",
            pump_power_w,
            "must be non-negative",
        ));
    }
    if pump_power_w >= threshold_power_w {
        return Err(Error::invalid(
            "pump power",
            pump_power_w,
            "must stay below the oscillation threshold",
        ));
    }
    Ok((pump_power_w / threshold_power_w).sqrt())
}

/// Focusing factor `h(xi)` for colinear second-harmonic interaction with zero
/// walk-off and optimal phase mismatch:
///
/// ```text
/// h(xi) = (1 / 4 xi) · | ∫_{-xi}^{+xi} dτ / (1 + iτ) |^2
/// ```
///
/// Evaluated by adaptive Simpson quadrature on the complex integrand with a
/// relative accuracy of `1e-8`. `xi = L / (2 z_R)` is the crystal length in
/// units of the confocal parameter. For weak focusing `h(xi) → xi`.
pub fn boyd_kleinman_h(xi: f64) -> Result<f64> {
    if !xi.is_finite() || xi <= 0.0 {
        return Err(Error::invalid(
            "focusing parameter xi",
            xi,
            "must be positive",
        ));
    }
    let integrand = |tau: f64| Complex64::new(1.0, 0.0) / Complex64::new(1.0, tau);
    let integral = adaptive_simpson(&integrand, -xi, xi, QUADRATURE_REL_TOL)?;
    Ok(integral.norm_sqr() / (4.0 * xi))
}

/// Adaptive Simpson quadrature of a complex integrand over `[a, b]`.
fn adaptive_simpson(
    f: &impl Fn(f64) -> Complex64,
    a: f64,
    b: f64,
    rel_tol: f64,
) -> Result<Complex64> {
    let m = 0.5 * (a + b);
    let fa = f(a);
    let fm = f(m);
    let fb = f(b);
    let whole = simpson_panel(a, b, fa, fm, fb);
    // Absolute target derived from a coarse magnitude estimate; the interval
    // never integrates to zero here (the real part is positive everywhere).
    let abs_tol = rel_tol * whole.norm().max(f64::MIN_POSITIVE);
    let value = simpson_recurse(f, a, b, fa, fm, fb, whole, abs_tol, QUADRATURE_MAX_DEPTH)?;
    Ok(value)
}

fn simpson_panel(a: f64, b: f64, fa: Complex64, fm: Complex64, fb: Complex64) -> Complex64 {
    (fa + 4.0 * fm + fb) * ((b - a) / 6.0)
}

#[allow(clippy::too_many_arguments)]
fn simpson_recurse(
    f: &impl Fn(f64) -> Complex64,
    a: f64,
    b: f64,
    fa: Complex64,
    fm: Complex64,
    fb: Complex64,
    whole: Complex64,
    abs_tol: f64,
    depth: u32,
) -> Result<Complex64> {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson_panel(a, m, fa, flm, fm);
    let right = simpson_panel(m, b, fm, frm, fb);
    let delta = left + right - whole;
    // Standard Richardson acceptance: the halved estimate is good to
    // |delta| / 15.
    if delta.norm() <= 15.0 * abs_tol {
        return Ok(left + right + delta / 15.0);
    }
    if depth == 0 {
        return Err(Error::Numerical {
            context: "focusing-integral quadrature",
            reason: format!("failed to converge on [{a}, {b}]"),
        });
    }
    let l = simpson_recurse(f, a, m, fa, flm, fm, left, abs_tol / 2.0, depth - 1)?;
    let r = simpson_recurse(f, m, b, fm, frm, fb, right, abs_tol / 2.0, depth - 1)?;
    Ok(l + r)
}

/// Physical inputs for the oscillation-threshold estimate.
///
/// Lengths in meters, absorption in inverse meters, `d_eff` in m/V.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdInputs {
    /// Signal (fundamental) wavelength in meters.
    pub signal_wavelength_m: f64,
    /// Signal beam waist radius inside the crystal, meters.
    pub waist_signal_m: f64,
    /// Effective nonlinear coefficient in m/V.
    pub d_eff_m_per_v: f64,
    /// Crystal length in meters.
    pub crystal_length_m: f64,
    /// Refractive index at the signal wavelength.
    pub n_signal: f64,
    /// Refractive index at the pump (second-harmonic) wavelength.
    pub n_pump: f64,
    /// Signal absorption coefficient in 1/m.
    pub alpha_signal_per_m: f64,
    /// Power transmission of the signal output coupler.
    pub output_transmission: f64,
    /// Residual signal round-trip loss besides output coupling and crystal
    /// absorption (remaining mirror transmission, scatter).
    pub extra_signal_loss: f64,
    /// Resonant pump power buildup of the cavity.
    pub pump_buildup: f64,
}

impl ThresholdInputs {
    fn validate(&self) -> Result<()> {
        let positive = [
            ("signal wavelength", self.signal_wavelength_m),
            ("signal waist", self.waist_signal_m),
            ("nonlinear coefficient", self.d_eff_m_per_v),
            ("crystal length", self.crystal_length_m),
            ("pump buildup", self.pump_buildup),
        ];
        for (name, v) in positive {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::invalid(name, v, "must be positive"));
            }
        }
        for (name, v) in [("signal index", self.n_signal), ("pump index", self.n_pump)] {
            if !v.is_finite() || v < 1.0 {
                return Err(Error::invalid(name, v, "must be at least 1"));
            }
        }
        if !self.alpha_signal_per_m.is_finite() || self.alpha_signal_per_m < 0.0 {
            return Err(Error::invalid(
                "signal absorption",
                self.alpha_signal_per_m,
                "must be non-negative",
            ));
        }
        if !self.output_transmission.is_finite() || !(0.0 < self.output_transmission)
            || self.output_transmission > 1.0
        {
            return Err(Error::invalid(
                "output transmission",
                self.output_transmission,
                "must lie in (0, 1]",
            ));
        }
        if !self.extra_signal_loss.is_finite() || !(0.0..1.0).contains(&self.extra_signal_loss) {
            return Err(Error::invalid(
                "extra signal loss",
                self.extra_signal_loss,
                "must lie in [0, 1)",
            ));
        }
        Ok(())
    }
}

/// Threshold estimate with its intermediate quantities; see [`opo_threshold`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ThresholdReport {
    /// Rayleigh range of the signal mode inside the crystal, meters.
    pub rayleigh_range_m: f64,
    /// Focusing parameter `xi = L / (2 z_R)`.
    pub focusing_xi: f64,
    /// Focusing factor `h(xi)`.
    pub focusing_h: f64,
    /// Single-pass nonlinear conversion slope `E_nl` in 1/W.
    pub e_nl_per_w: f64,
    /// Threshold in terms of circulating pump power, watts.
    pub p_threshold_circulating_w: f64,
    /// Threshold referred to the pump power injected at the input coupler,
    /// watts.
    pub p_threshold_input_w: f64,
}

/// Estimates the parametric-oscillation threshold of the cavity.
///
/// The single-pass conversion slope is
///
/// ```text
/// E_nl = 2 ω1² d_eff² L k1 h(ξ) / (π ε0 c³ n1² n2)
/// ```
///
/// with `ω1 = 2πc/λ1` and `k1 = 2π n1/λ1`. The circulating threshold is
/// `P_circ = ((T_out + ℓ_s) / 2)² / E_nl`, where `ℓ_s` sums the remaining
/// signal round-trip losses (`extra_signal_loss + 2 L α_signal`), and the
/// input-referred threshold divides by the resonant pump buildup.
pub fn opo_threshold(inputs: &ThresholdInputs) -> Result<ThresholdReport> {
    inputs.validate()?;
    let c = crate::cavity::SPEED_OF_LIGHT;
    let lam = inputs.signal_wavelength_m;
    let w0 = inputs.waist_signal_m;
    let rayleigh_range_m = std::f64::consts::PI * w0 * w0 * inputs.n_signal / lam;
    let focusing_xi = inputs.crystal_length_m / (2.0 * rayleigh_range_m);
    let focusing_h = boyd_kleinman_h(focusing_xi)?;

    let omega1 = 2.0 * std::f64::consts::PI * c / lam;
    let k1 = 2.0 * std::f64::consts::PI * inputs.n_signal / lam;
    let e_nl_per_w = 2.0 * omega1 * omega1 * inputs.d_eff_m_per_v * inputs.d_eff_m_per_v
        * inputs.crystal_length_m
        * k1
        * focusing_h
        / (std::f64::consts::PI
            * VACUUM_PERMITTIVITY
            * c.powi(3)
            * inputs.n_signal
            * inputs.n_signal
            * inputs.n_pump);

    let signal_loss =
        inputs.extra_signal_loss + 2.0 * inputs.crystal_length_m * inputs.alpha_signal_per_m;
    let half_total = (inputs.output_transmission + signal_loss) / 2.0;
    let p_threshold_circulating_w = half_total * half_total / e_nl_per_w;
    let p_threshold_input_w = p_threshold_circulating_w / inputs.pump_buildup;

    Ok(ThresholdReport {
        rayleigh_range_m,
        focusing_xi,
        focusing_h,
        e_nl_per_w,
        p_threshold_circulating_w,
        p_threshold_input_w,
    })
}
