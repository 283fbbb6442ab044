//! Signal path from the two squeezers to the detectors: beam-splitter
//! entangler, loss maps, detector gains and dark noise.
//!
//! The entangler rotates the quadratures of source B by a relative phase and
//! interferes both sources on a beam splitter. With identical sources, a
//! balanced splitter and a 90° phase, both joint quadratures
//! `X_A + X_B` and `Y_A - Y_B` collapse onto the squeezed variances of the
//! individual sources.
//!
//! Loss is modeled as beam-splitter admixture of vacuum:
//! `C' = η·C + (1-η)·I` per mode. Detector gains are dimensionless amplitude
//! factors; joint variances are normalized by `g_A² + g_B²` so that vacuum
//! input always reads 1. Dark noise enters as a white-over-clearance floor
//! `d = 10^(-C/10)` per detector, and un-subtracted traces are renormalized
//! by the measured vacuum `1 + d`.

use std::io::BufRead;

use nalgebra::Matrix4;

use crate::error::{Error, Result};
use crate::opa::OpaSpectrumModel;
use crate::quadrature::{CovarianceMatrix, FrequencyGrid, TwoModeCovarianceSpectrum};

/// Two squeezed sources meeting on a beam splitter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntanglerConfig {
    /// Source feeding input 1 of the beam splitter.
    pub source_a: OpaSpectrumModel,
    /// Source feeding input 2 of the beam splitter.
    pub source_b: OpaSpectrumModel,
    /// Quadrature rotation applied to source B before interference, radians.
    pub relative_phase_rad: f64,
    /// Power reflectivity of the beam splitter, in (0, 1).
    pub beam_splitter_reflectivity: f64,
}

impl EntanglerConfig {
    /// Validates an entangler layout.
    pub fn new(
        source_a: OpaSpectrumModel,
        source_b: OpaSpectrumModel,
        relative_phase_rad: f64,
        beam_splitter_reflectivity: f64,
    ) -> Result<Self> {
        if !relative_phase_rad.is_finite() {
            return Err(Error::invalid(
                "relative phase",
                relative_phase_rad,
                "must be finite",
            ));
        }
        if !beam_splitter_reflectivity.is_finite()
            || beam_splitter_reflectivity <= 0.0
            || beam_splitter_reflectivity >= 1.0
        {
            return Err(Error::invalid(
                "beam-splitter reflectivity",
                beam_splitter_reflectivity,
                "must lie strictly between 0 and 1",
            ));
        }
        Ok(EntanglerConfig {
            source_a,
            source_b,
            relative_phase_rad,
            beam_splitter_reflectivity,
        })
    }

    /// Balanced splitter with the canonical 90° relative phase.
    pub fn balanced(source_a: OpaSpectrumModel, source_b: OpaSpectrumModel) -> Self {
        EntanglerConfig {
            source_a,
            source_b,
            relative_phase_rad: std::f64::consts::FRAC_PI_2,
            beam_splitter_reflectivity: 0.5,
        }
    }

    /// Combined symplectic map: phase rotation of mode B, then the beam
    /// splitter. Frequency independent, so it is built once per sweep.
    pub fn symplectic(&self) -> Matrix4<f64> {
        let (s, c) = self.relative_phase_rad.sin_cos();
        let mut rot = Matrix4::identity();
        rot[(2, 2)] = c;
        rot[(2, 3)] = -s;
        rot[(3, 2)] = s;
        rot[(3, 3)] = c;

        let r = self.beam_splitter_reflectivity;
        let (sr, st) = (r.sqrt(), (1.0 - r).sqrt());
        let mut bs = Matrix4::zeros();
        // Output A = sqrt(t)·in1 + sqrt(r)·in2; output B = sqrt(r)·in1 - sqrt(t)·in2.
        bs[(0, 0)] = st;
        bs[(0, 2)] = sr;
        bs[(1, 1)] = st;
        bs[(1, 3)] = sr;
        bs[(2, 0)] = sr;
        bs[(2, 2)] = -st;
        bs[(3, 1)] = sr;
        bs[(3, 3)] = -st;

        bs * rot
    }
}

/// Two-mode covariance spectrum at the entangler output.
///
/// Each grid point starts from the diagonal covariance of the two independent
/// squeezers and applies the entangler's symplectic map.
pub fn entangle(config: &EntanglerConfig, grid: &FrequencyGrid) -> TwoModeCovarianceSpectrum {
    let s = config.symplectic();
    let matrices = grid
        .iter()
        .map(|f| {
            let c0 = CovarianceMatrix::from_diagonal(
                config.source_a.squeezed_variance(f).value(),
                config.source_a.anti_squeezed_variance(f).value(),
                config.source_b.squeezed_variance(f).value(),
                config.source_b.anti_squeezed_variance(f).value(),
            );
            c0.congruence(&s)
        })
        .collect();
    TwoModeCovarianceSpectrum::new(grid.clone(), matrices)
        .expect("one matrix per grid point by construction")
}

fn check_efficiency(name: &'static str, eta: f64) -> Result<()> {
    if !eta.is_finite() || !(0.0..=1.0).contains(&eta) {
        return Err(Error::invalid(name, eta, "must lie in [0, 1]"));
    }
    Ok(())
}

/// Vacuum admixture with independent efficiencies for the two modes:
/// blocks scale by `sqrt(η_A·η_B)` combinations and each mode gains
/// `(1 - η)` of vacuum noise on its diagonal.
pub fn apply_per_mode_loss(
    spectrum: &TwoModeCovarianceSpectrum,
    eta_a: f64,
    eta_b: f64,
) -> Result<TwoModeCovarianceSpectrum> {
    check_efficiency("detection efficiency for mode A", eta_a)?;
    check_efficiency("detection efficiency for mode B", eta_b)?;
    let mut s = Matrix4::zeros();
    let (ra, rb) = (eta_a.sqrt(), eta_b.sqrt());
    s[(0, 0)] = ra;
    s[(1, 1)] = ra;
    s[(2, 2)] = rb;
    s[(3, 3)] = rb;
    let mut noise = Matrix4::zeros();
    noise[(0, 0)] = 1.0 - eta_a;
    noise[(1, 1)] = 1.0 - eta_a;
    noise[(2, 2)] = 1.0 - eta_b;
    noise[(3, 3)] = 1.0 - eta_b;
    Ok(spectrum.map(|c| CovarianceMatrix::from_matrix(c.congruence(&s).matrix() + noise)))
}

/// Equal vacuum admixture on both modes: `C' = η·C + (1-η)·I`.
pub fn apply_uniform_loss(
    spectrum: &TwoModeCovarianceSpectrum,
    eta: f64,
) -> Result<TwoModeCovarianceSpectrum> {
    apply_per_mode_loss(spectrum, eta, eta)
}

/// Product of the three power-efficiency factors of the detection path.
pub fn efficiency_budget(
    mode_overlap: f64,
    path_transmission: f64,
    quantum_efficiency: f64,
) -> Result<f64> {
    check_efficiency("mode overlap", mode_overlap)?;
    check_efficiency("path transmission", path_transmission)?;
    check_efficiency("quantum efficiency", quantum_efficiency)?;
    Ok(mode_overlap * path_transmission * quantum_efficiency)
}

/// Piecewise-linear decibel curve over frequency.
///
/// Interpolation runs in `log10(frequency)`, matching how such curves are
/// read off logarithmic analyzer screens. A single-point curve is treated as
/// frequency independent; multi-point curves reject queries outside their
/// span instead of extrapolating.
#[derive(Debug, Clone, PartialEq)]
pub struct DbCurve {
    points: Vec<(f64, f64)>,
}

impl DbCurve {
    /// Validates `(frequency_hz, value_db)` support points: at least one
    /// point, positive finite frequencies, strictly increasing.
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidGrid {
                reason: "decibel curve needs at least one support point".into(),
            });
        }
        for (i, &(f, v)) in points.iter().enumerate() {
            if !f.is_finite() || f <= 0.0 {
                return Err(Error::InvalidGrid {
                    reason: format!("curve point {i} at {f} Hz: frequency must be positive"),
                });
            }
            if !v.is_finite() {
                return Err(Error::InvalidGrid {
                    reason: format!("curve point {i}: value {v} dB must be finite"),
                });
            }
            if i > 0 && f <= points[i - 1].0 {
                return Err(Error::InvalidGrid {
                    reason: format!(
                        "curve frequencies must be strictly increasing, point {i} at {f} Hz \
                         does not exceed {} Hz",
                        points[i - 1].0
                    ),
                });
            }
        }
        Ok(DbCurve { points })
    }

    /// Frequency-independent curve.
    pub fn constant(value_db: f64) -> Result<Self> {
        DbCurve::new(vec![(1.0, value_db)])
    }

    /// Support points.
    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    /// Covered frequency span in hertz.
    pub fn span_hz(&self) -> (f64, f64) {
        (self.points[0].0, self.points[self.points.len() - 1].0)
    }

    /// Curve value at `frequency_hz`, interpolated in `log10(f)`.
    pub fn value_db_at(&self, frequency_hz: f64) -> Result<f64> {
        if !frequency_hz.is_finite() || frequency_hz <= 0.0 {
            return Err(Error::invalid(
                "frequency",
                frequency_hz,
                "must be positive",
            ));
        }
        if self.points.len() == 1 {
            return Ok(self.points[0].1);
        }
        let (start, stop) = self.span_hz();
        if frequency_hz < start || frequency_hz > stop {
            return Err(Error::CurveGap {
                frequency_hz,
                start_hz: start,
                stop_hz: stop,
            });
        }
        let idx = self
            .points
            .partition_point(|&(f, _)| f < frequency_hz)
            .clamp(1, self.points.len() - 1);
        let (f0, v0) = self.points[idx - 1];
        let (f1, v1) = self.points[idx];
        let t = (frequency_hz.log10() - f0.log10()) / (f1.log10() - f0.log10());
        Ok(v0 + t * (v1 - v0))
    }

    /// Curve value with flat extrapolation: queries outside the tabulated
    /// span (or at non-positive frequencies) clamp to the nearest endpoint.
    ///
    /// Used where a total function over the full Nyquist band is needed,
    /// e.g. when coloring dark-noise time series whose synthesis bins extend
    /// beyond the measured clearance range.
    pub fn value_db_clamped(&self, frequency_hz: f64) -> f64 {
        let (start, stop) = self.span_hz();
        if !(frequency_hz > start) {
            return self.points[0].1;
        }
        if frequency_hz >= stop {
            return self.points[self.points.len() - 1].1;
        }
        self.value_db_at(frequency_hz)
            .expect("in-span query cannot fail")
    }

    /// Same curve shifted by a constant number of decibels.
    pub fn shifted(&self, delta_db: f64) -> DbCurve {
        DbCurve {
            points: self.points.iter().map(|&(f, v)| (f, v + delta_db)).collect(),
        }
    }

    /// Parses a two-column CSV (`frequency_hz,value_db`); a non-numeric first
    /// line is treated as a header.
    pub fn from_csv_reader(reader: impl BufRead) -> Result<Self> {
        let mut points = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 2 {
                return Err(Error::Parse {
                    line: i + 1,
                    reason: format!("expected 2 comma-separated fields, got {}", fields.len()),
                });
            }
            match (fields[0].parse::<f64>(), fields[1].parse::<f64>()) {
                (Ok(f), Ok(v)) => points.push((f, v)),
                _ if i == 0 => continue, // header row
                _ => {
                    return Err(Error::Parse {
                        line: i + 1,
                        reason: format!("could not parse '{line}' as two numbers"),
                    });
                }
            }
        }
        DbCurve::new(points)
    }
}

/// Amplitude gain of one homodyne detector.
#[derive(Debug, Clone, PartialEq)]
pub enum DetectorGain {
    /// Frequency-independent amplitude gain.
    Flat(f64),
    /// Power gain tabulated in decibels; amplitude is `10^(dB/20)`.
    TableDb(DbCurve),
}

impl DetectorGain {
    /// Validates a flat amplitude gain.
    pub fn flat(gain: f64) -> Result<Self> {
        if !gain.is_finite() || gain <= 0.0 {
            return Err(Error::invalid("detector gain", gain, "must be positive"));
        }
        Ok(DetectorGain::Flat(gain))
    }

    /// Amplitude gain at one frequency.
    pub fn amplitude_at(&self, frequency_hz: f64) -> Result<f64> {
        match self {
            DetectorGain::Flat(g) => Ok(*g),
            DetectorGain::TableDb(curve) => {
                Ok(10f64.powf(curve.value_db_at(frequency_hz)? / 20.0))
            }
        }
    }

    /// Amplitude gains across a grid.
    pub fn amplitudes_on(&self, grid: &FrequencyGrid) -> Result<Vec<f64>> {
        grid.iter().map(|f| self.amplitude_at(f)).collect()
    }
}

/// How the total detection efficiency is specified.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EfficiencyModel {
    /// Single overall power efficiency.
    Total(f64),
    /// Itemized budget; the total is the product of the three factors.
    Budget {
        mode_overlap: f64,
        path_transmission: f64,
        quantum_efficiency: f64,
    },
}

impl EfficiencyModel {
    /// Validates the efficiency factors.
    pub fn validate(&self) -> Result<()> {
        match *self {
            EfficiencyModel::Total(eta) => check_efficiency("total detection efficiency", eta),
            EfficiencyModel::Budget {
                mode_overlap,
                path_transmission,
                quantum_efficiency,
            } => {
                efficiency_budget(mode_overlap, path_transmission, quantum_efficiency).map(|_| ())
            }
        }
    }

    /// Total power efficiency.
    pub fn total(&self) -> f64 {
        match *self {
            EfficiencyModel::Total(eta) => eta,
            EfficiencyModel::Budget {
                mode_overlap,
                path_transmission,
                quantum_efficiency,
            } => mode_overlap * path_transmission * quantum_efficiency,
        }
    }
}

/// Everything between the entangler output and the recorded spectra.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionChain {
    /// Optical + photodiode power efficiency, identical for both modes.
    pub efficiency: EfficiencyModel,
    /// Amplitude gain of detector A.
    pub gain_a: DetectorGain,
    /// Amplitude gain of detector B.
    pub gain_b: DetectorGain,
    /// Shot-noise-to-dark-noise clearance of detector A in dB; `None` models
    /// an ideal noiseless detector.
    pub clearance_a_db: Option<DbCurve>,
    /// Clearance of detector B.
    pub clearance_b_db: Option<DbCurve>,
    /// When true, dark noise is measured separately and subtracted, so it
    /// does not contaminate the reported variances.
    pub dark_noise_subtracted: bool,
}

impl DetectionChain {
    /// Validates the efficiency factors and wraps the chain.
    pub fn new(
        efficiency: EfficiencyModel,
        gain_a: DetectorGain,
        gain_b: DetectorGain,
        clearance_a_db: Option<DbCurve>,
        clearance_b_db: Option<DbCurve>,
        dark_noise_subtracted: bool,
    ) -> Result<Self> {
        efficiency.validate()?;
        Ok(DetectionChain {
            efficiency,
            gain_a,
            gain_b,
            clearance_a_db,
            clearance_b_db,
            dark_noise_subtracted,
        })
    }

    /// Ideal chain: unit efficiency, unit gains, no dark noise.
    pub fn ideal() -> Self {
        DetectionChain {
            efficiency: EfficiencyModel::Total(1.0),
            gain_a: DetectorGain::Flat(1.0),
            gain_b: DetectorGain::Flat(1.0),
            clearance_a_db: None,
            clearance_b_db: None,
            dark_noise_subtracted: false,
        }
    }

    /// Total power efficiency of the chain.
    pub fn total_efficiency(&self) -> f64 {
        self.efficiency.total()
    }

    /// Whether any detector has a dark-noise model attached.
    pub fn has_dark_noise(&self) -> bool {
        self.clearance_a_db.is_some() || self.clearance_b_db.is_some()
    }
}

/// Variances of the joint quadratures `X_A + X_B` and `Y_A - Y_B`, in vacuum
/// units, tabulated over a frequency grid.
#[derive(Debug, Clone, PartialEq)]
pub struct JointQuadratureSpectra {
    grid: FrequencyGrid,
    var_xsum: Vec<f64>,
    var_ydiff: Vec<f64>,
}

impl JointQuadratureSpectra {
    /// Pairs a grid with aligned variance columns.
    pub fn new(grid: FrequencyGrid, var_xsum: Vec<f64>, var_ydiff: Vec<f64>) -> Result<Self> {
        if var_xsum.len() != grid.len() {
            return Err(Error::LengthMismatch {
                name: "X-sum variances",
                expected: grid.len(),
                actual: var_xsum.len(),
            });
        }
        if var_ydiff.len() != grid.len() {
            return Err(Error::LengthMismatch {
                name: "Y-difference variances",
                expected: grid.len(),
                actual: var_ydiff.len(),
            });
        }
        Ok(JointQuadratureSpectra {
            grid,
            var_xsum,
            var_ydiff,
        })
    }

    /// Frequency grid.
    pub fn grid(&self) -> &FrequencyGrid {
        &self.grid
    }

    /// `Var(X_A + X_B)` normalized to vacuum, per grid point.
    pub fn var_xsum(&self) -> &[f64] {
        &self.var_xsum
    }

    /// `Var(Y_A - Y_B)` normalized to vacuum, per grid point.
    pub fn var_ydiff(&self) -> &[f64] {
        &self.var_ydiff
    }
}

fn check_gain_table(name: &'static str, gains: &[f64], expected: usize) -> Result<()> {
    if gains.len() != expected {
        return Err(Error::LengthMismatch {
            name,
            expected,
            actual: gains.len(),
        });
    }
    for &g in gains {
        if !g.is_finite() || g <= 0.0 {
            return Err(Error::invalid("detector gain", g, "must be positive"));
        }
    }
    Ok(())
}

/// Joint quadrature variances seen by detectors with per-frequency amplitude
/// gains `g_A`, `g_B`:
///
/// ```text
/// Var(g_A X_A + g_B X_B) / (g_A² + g_B²)
/// Var(g_A Y_A - g_B Y_B) / (g_A² + g_B²)
/// ```
///
/// The normalization makes a vacuum input read exactly 1 for any gains, which
/// is how shot-noise-referenced analyzer traces are calibrated.
pub fn joint_variances_with_gains(
    cov: &TwoModeCovarianceSpectrum,
    gain_a: &[f64],
    gain_b: &[f64],
) -> Result<JointQuadratureSpectra> {
    let n = cov.grid().len();
    check_gain_table("gain table for detector A", gain_a, n)?;
    check_gain_table("gain table for detector B", gain_b, n)?;
    let mut var_xsum = Vec::with_capacity(n);
    let mut var_ydiff = Vec::with_capacity(n);
    for (i, c) in cov.matrices().iter().enumerate() {
        let (ga, gb) = (gain_a[i], gain_b[i]);
        let norm = ga * ga + gb * gb;
        var_xsum.push(
            (ga * ga * c.var_x_a() + gb * gb * c.var_x_b() + 2.0 * ga * gb * c.cov_x()) / norm,
        );
        var_ydiff.push(
            (ga * ga * c.var_y_a() + gb * gb * c.var_y_b() - 2.0 * ga * gb * c.cov_y()) / norm,
        );
    }
    JointQuadratureSpectra::new(cov.grid().clone(), var_xsum, var_ydiff)
}

/// Joint variances with unit gains on both detectors.
pub fn joint_variances(cov: &TwoModeCovarianceSpectrum) -> JointQuadratureSpectra {
    let ones = vec![1.0; cov.grid().len()];
    joint_variances_with_gains(cov, &ones, &ones).expect("unit gains are always valid")
}

/// Gain-weighted dark-noise level relative to the joint vacuum,
/// `d = (g_A² d_A + g_B² d_B) / (g_A² + g_B²)` with `d_i = 10^(-C_i/10)`,
/// per grid point. `None` when neither detector has a clearance curve.
pub fn combined_dark_levels(
    chain: &DetectionChain,
    grid: &FrequencyGrid,
    gain_a: &[f64],
    gain_b: &[f64],
) -> Result<Option<Vec<f64>>> {
    if !chain.has_dark_noise() {
        return Ok(None);
    }
    check_gain_table("gain table for detector A", gain_a, grid.len())?;
    check_gain_table("gain table for detector B", gain_b, grid.len())?;
    let mut levels = Vec::with_capacity(grid.len());
    for (i, f) in grid.iter().enumerate() {
        let da = match &chain.clearance_a_db {
            Some(curve) => 10f64.powf(-curve.value_db_at(f)? / 10.0),
            None => 0.0,
        };
        let db = match &chain.clearance_b_db {
            Some(curve) => 10f64.powf(-curve.value_db_at(f)? / 10.0),
            None => 0.0,
        };
        let (ga, gb) = (gain_a[i], gain_b[i]);
        levels.push((ga * ga * da + gb * gb * db) / (ga * ga + gb * gb));
    }
    Ok(Some(levels))
}

/// Adds detector dark noise to measured joint spectra.
///
/// With subtraction enabled the spectra pass through unchanged. Otherwise
/// each variance becomes `(V + d) / (1 + d)`: the dark floor adds to the
/// signal and the trace is re-referenced to the measured (dark-contaminated)
/// vacuum, so a vacuum input still reads exactly 1.
pub fn apply_dark_noise(
    spectra: &JointQuadratureSpectra,
    chain: &DetectionChain,
    gain_a: &[f64],
    gain_b: &[f64],
) -> Result<JointQuadratureSpectra> {
    if chain.dark_noise_subtracted || !chain.has_dark_noise() {
        return Ok(spectra.clone());
    }
    let levels = combined_dark_levels(chain, spectra.grid(), gain_a, gain_b)?
        .expect("has_dark_noise checked above");
    let apply = |vs: &[f64]| -> Vec<f64> {
        vs.iter()
            .zip(levels.iter())
            .map(|(&v, &d)| (v + d) / (1.0 + d))
            .collect()
    };
    JointQuadratureSpectra::new(
        spectra.grid().clone(),
        apply(spectra.var_xsum()),
        apply(spectra.var_ydiff()),
    )
}
