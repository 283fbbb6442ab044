//! Experiment description documents: schema, parsing, and resolution.
//!
//! Configurations are single UTF-8 JSON documents. Units are encoded in the
//! field names (`pump_power_mw`, `gamma_hwhm_mhz`, `rbw_khz`, …) so a value
//! can never be read in the wrong unit; resolution converts everything to
//! base SI units and hands back ready-to-run model objects.
//!
//! Where the schema admits alternatives (a direct linewidth versus a cavity
//! geometry, a threshold power versus the inputs to compute one), exactly
//! one must be present; ambiguous documents are rejected with the offending
//! field path.

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analyzer::{BandSplit, ExperimentModel, SweepConfig};
use crate::cavity::{self, CavityGeometry};
use crate::channel::{
    DbCurve, DetectionChain, DetectorGain, EfficiencyModel, EntanglerConfig,
};
use crate::error::{Error, Result};
use crate::fitkit::{FitParameterKind, FreeParameter, ResidualDomain};
use crate::montecarlo::{SynthesisConfig, WindowKind};
use crate::opa::{self, OpaSpectrumModel, ThresholdInputs};
use crate::quadrature::FrequencyGrid;

fn config_error(path: &str, reason: impl Into<String>) -> Error {
    Error::Config {
        path: path.to_string(),
        reason: reason.into(),
    }
}

/// Top-level experiment description document.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// The two squeezed-light sources.
    pub sources: SourcesSection,
    /// Combining stage; defaults to a balanced splitter at 90°.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entangler: Option<EntanglerSection>,
    /// Measurement chain; defaults to an ideal detector pair.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detection: Option<DetectionSection>,
    /// Analyzer sweep; required by the spectrum, synthesis, and fit commands.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
    /// Time-domain oracle settings.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub montecarlo: Option<MontecarloSection>,
    /// Parameter-estimation settings.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit: Option<FitSection>,
}

/// The `sources` block: sources `a` and `b`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourcesSection {
    /// Source feeding splitter input 1.
    pub a: SourceSection,
    /// Source feeding splitter input 2.
    pub b: SourceSection,
}

/// One squeezed-light source.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSection {
    /// Cavity half linewidth in megahertz (alternative to `cavity`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_hwhm_mhz: Option<f64>,
    /// Cavity geometry from which the linewidth is derived.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cavity: Option<CavitySection>,
    /// Escape efficiency; defaults to the cavity-derived value or 0.999.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub escape_efficiency: Option<f64>,
    /// Pump power in milliwatts.
    pub pump_power_mw: f64,
    /// Measured threshold pump power in milliwatts; when a `threshold`
    /// block is also present this measured value sets the pump ratio and
    /// the block serves as a cross-check report.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold_power_mw: Option<f64>,
    /// Inputs for computing the threshold power from first principles.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<ThresholdSection>,
}

/// Linear cavity geometry with optional escape-efficiency breakdown.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CavitySection {
    /// Optical cavity length in millimeters.
    pub length_mm: f64,
    /// Refractive index of the cavity medium.
    pub refractive_index: f64,
    /// Power reflectivity of the input/rear mirror.
    pub r1: f64,
    /// Power reflectivity of the output coupler.
    pub r2: f64,
    /// Additional fractional power loss per round trip.
    #[serde(default)]
    pub round_trip_loss: f64,
    /// Loss breakdown for the escape efficiency.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub escape: Option<EscapeSection>,
}

/// Escape-efficiency breakdown of a squeezing cavity.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EscapeSection {
    /// Power transmission of the output coupler.
    pub output_transmission: f64,
    /// Residual transmission of all other mirrors.
    pub other_transmission: f64,
    /// Remaining round-trip power loss (absorption, scatter).
    pub internal_loss: f64,
}

/// Inputs for the parametric-threshold computation.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdSection {
    /// Signal (fundamental) wavelength in nanometers.
    pub signal_wavelength_nm: f64,
    /// Signal waist radius inside the crystal, micrometers.
    pub waist_um: f64,
    /// Effective nonlinear coefficient in picometers per volt.
    pub d_eff_pm_per_v: f64,
    /// Crystal length in millimeters.
    pub crystal_length_mm: f64,
    /// Refractive index at the signal wavelength.
    pub n_signal: f64,
    /// Refractive index at the pump wavelength.
    pub n_pump: f64,
    /// Signal absorption coefficient in 1/m.
    pub alpha_signal_per_m: f64,
    /// Power transmission of the signal output coupler.
    pub output_transmission: f64,
    /// Residual signal round-trip loss besides coupler and absorption.
    pub extra_signal_loss: f64,
    /// Resonant pump buildup (alternative to `pump_cavity`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pump_buildup: Option<f64>,
    /// Pump-cavity geometry from which the buildup is derived.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pump_cavity: Option<CavitySection>,
}

/// The `entangler` block.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntanglerSection {
    /// Relative phase between the sources in degrees.
    #[serde(default = "default_phase_deg")]
    pub relative_phase_deg: f64,
    /// Power reflectivity of the combining splitter.
    #[serde(default = "default_reflectivity")]
    pub beam_splitter_reflectivity: f64,
}

fn default_phase_deg() -> f64 {
    90.0
}

fn default_reflectivity() -> f64 {
    0.5
}

impl Default for EntanglerSection {
    fn default() -> Self {
        EntanglerSection {
            relative_phase_deg: default_phase_deg(),
            beam_splitter_reflectivity: default_reflectivity(),
        }
    }
}

/// The `detection` block.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionSection {
    /// Overall efficiency: a single total or an itemized budget.
    pub efficiency: EfficiencySection,
    /// Detector A gain; defaults to 1.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gain_a: Option<GainSection>,
    /// Detector B gain; defaults to 1.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gain_b: Option<GainSection>,
    /// Dark clearance of detector A.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clearance_a: Option<ClearanceSection>,
    /// Dark clearance of detector B.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clearance_b: Option<ClearanceSection>,
    /// True when dark noise is subtracted from the traces.
    #[serde(default)]
    pub dark_noise_subtracted: bool,
}

/// Efficiency given either as one total or as a three-factor budget.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EfficiencySection {
    /// Total power efficiency.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total: Option<f64>,
    /// Interference mode overlap (power factor).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode_overlap: Option<f64>,
    /// Optical path transmission.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path_transmission: Option<f64>,
    /// Photodiode quantum efficiency.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quantum_efficiency: Option<f64>,
}

/// Detector gain given directly, as a local-oscillator power, or as a curve.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GainSection {
    /// Flat amplitude gain.
    Flat(f64),
    /// Local-oscillator power; the amplitude gain scales as its square root.
    LoPower {
        /// Local-oscillator power in milliwatts.
        lo_power_mw: f64,
    },
    /// Frequency-dependent power gain in dB.
    Curve {
        /// `[frequency_mhz, gain_db]` pairs, strictly increasing in frequency.
        curve_points_mhz_db: Vec<(f64, f64)>,
    },
}

/// Dark clearance given as a constant, a point table, or a CSV file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ClearanceSection {
    /// Frequency-independent clearance.
    Constant {
        /// Clearance in dB.
        constant_db: f64,
    },
    /// Tabulated clearance curve.
    Points {
        /// `[frequency_mhz, clearance_db]` pairs, strictly increasing.
        points_mhz_db: Vec<(f64, f64)>,
    },
    /// Two-column CSV file `frequency_hz, clearance_db`, resolved relative
    /// to the config file's directory.
    Csv {
        /// Path to the CSV file.
        csv_path: String,
    },
}

/// The `sweep` block.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    /// First grid frequency in megahertz.
    pub start_mhz: f64,
    /// Last grid frequency in megahertz.
    pub stop_mhz: f64,
    /// Number of grid points.
    pub points: usize,
    /// Resolution bandwidth in kilohertz.
    pub rbw_khz: f64,
    /// Video bandwidth in kilohertz.
    pub vbw_khz: f64,
    /// Sweep time in seconds.
    #[serde(default = "default_sweep_time_s")]
    pub sweep_time_s: f64,
    /// Number of averaged sweeps.
    pub averages: u32,
    /// Per-band gain overrides.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub band_splits: Option<Vec<BandSplitSection>>,
}

fn default_sweep_time_s() -> f64 {
    1.0
}

/// One band of a split-gain sweep.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandSplitSection {
    /// Lower band edge in megahertz (inclusive).
    pub start_mhz: f64,
    /// Upper band edge in megahertz (inclusive).
    pub stop_mhz: f64,
    /// Amplitude gain of detector A (alternative to `lo_power_a_mw`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gain_a: Option<f64>,
    /// Amplitude gain of detector B.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gain_b: Option<f64>,
    /// Detector A local-oscillator power in milliwatts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lo_power_a_mw: Option<f64>,
    /// Detector B local-oscillator power in milliwatts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lo_power_b_mw: Option<f64>,
}

/// The `montecarlo` block.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MontecarloSection {
    /// Sampling rate in gigahertz.
    #[serde(default = "default_sample_rate_ghz")]
    pub sample_rate_ghz: f64,
    /// Total samples per trace (power of two).
    #[serde(default = "default_n_samples")]
    pub n_samples: usize,
    /// Welch segment length in samples.
    #[serde(default = "default_segment_length")]
    pub segment_length: usize,
    /// Fractional overlap between Welch segments.
    #[serde(default = "default_overlap")]
    pub overlap_fraction: f64,
    /// Segment window: `"hann"` or `"rectangular"`.
    #[serde(default = "default_window")]
    pub window: String,
    /// Base RNG seed.
    #[serde(default)]
    pub seed: u64,
}

fn default_sample_rate_ghz() -> f64 {
    4.0
}

fn default_n_samples() -> usize {
    1 << 22
}

fn default_segment_length() -> usize {
    4096
}

fn default_overlap() -> f64 {
    0.5
}

fn default_window() -> String {
    "hann".to_string()
}

/// The `fit` block.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSection {
    /// Free parameters, optionally with custom bounds.
    pub free: Vec<FreeSection>,
    /// Residual domain: `"db"` (default) or `"linear"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<String>,
    /// Number of multi-start attempts.
    #[serde(default = "default_starts")]
    pub starts: usize,
    /// Multi-start seed.
    #[serde(default)]
    pub seed: u64,
    /// Frequency windows (megahertz) excluded from the fit.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub exclusion_windows_mhz: Vec<[f64; 2]>,
    /// Per-point noise level override in dB; defaults to the analyzer's
    /// estimator statistics.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_db: Option<f64>,
}

fn default_starts() -> usize {
    crate::fitkit::DEFAULT_STARTS
}

/// One free fit parameter, optionally with custom bounds.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FreeSection {
    /// Parameter name: `eta_total`, `pump_ratio_x`, `gamma_hwhm_hz`,
    /// `gain_ratio`, or `clearance_offset_db`.
    pub name: String,
    /// Lower bound override.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower: Option<f64>,
    /// Upper bound override.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper: Option<f64>,
}

/// A cavity mentioned in the document, labeled by where it appeared.
#[derive(Debug, Clone)]
pub struct LabeledCavity {
    /// Field path of the cavity block.
    pub label: String,
    /// Validated geometry.
    pub geometry: CavityGeometry,
    /// Escape-efficiency breakdown when provided.
    pub escape: Option<EscapeSection>,
}

/// One source's threshold computation request, labeled by source.
#[derive(Debug, Clone)]
pub struct LabeledThreshold {
    /// Field path of the threshold block.
    pub label: String,
    /// Validated inputs for the threshold pipeline.
    pub inputs: ThresholdInputs,
}

/// Fit settings resolved into fitkit types.
#[derive(Debug, Clone)]
pub struct FitSettings {
    /// Free parameters with bounds.
    pub free: Vec<FreeParameter>,
    /// Residual domain.
    pub domain: ResidualDomain,
    /// Multi-start count.
    pub n_starts: usize,
    /// Multi-start seed.
    pub seed: u64,
    /// Excluded frequency windows in hertz.
    pub exclusion_windows_hz: Vec<(f64, f64)>,
    /// Per-point noise level in dB, when overridden.
    pub sigma_db: Option<f64>,
}

/// Everything a command needs, in model units.
#[derive(Debug, Clone)]
pub struct ResolvedConfig {
    /// Entangler and detection chain.
    pub model: ExperimentModel,
    /// Analyzer sweep, when the document has a `sweep` block.
    pub sweep: Option<SweepConfig>,
    /// All cavity blocks found in the document.
    pub cavities: Vec<LabeledCavity>,
    /// All threshold blocks found in the document.
    pub thresholds: Vec<LabeledThreshold>,
    /// Oracle synthesis settings, when present.
    pub montecarlo: Option<SynthesisConfig>,
    /// Fit settings, when present.
    pub fit: Option<FitSettings>,
}

/// Parses a JSON document into the typed schema.
///
/// Parse failures carry serde_json's line/column context.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    serde_json::from_str(text).map_err(|e| config_error("<document>", e.to_string()))
}

/// Reads and parses a config file.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|e| {
        config_error(&path.display().to_string(), format!("cannot read: {e}"))
    })?;
    serde_json::from_str(&text)
        .map_err(|e| config_error(&path.display().to_string(), e.to_string()))
}

fn resolve_cavity(section: &CavitySection, path: &str) -> Result<CavityGeometry> {
    CavityGeometry::new(
        section.length_mm * 1.0e-3,
        section.refractive_index,
        section.r1,
        section.r2,
        section.round_trip_loss,
    )
    .map_err(|e| config_error(path, e.to_string()))
}

fn resolve_source(
    section: &SourceSection,
    path: &str,
    cavities: &mut Vec<LabeledCavity>,
    thresholds: &mut Vec<LabeledThreshold>,
) -> Result<OpaSpectrumModel> {
    let gamma_hwhm_hz = match (&section.gamma_hwhm_mhz, &section.cavity) {
        (Some(mhz), None) => mhz * 1.0e6,
        (None, Some(cavity)) => {
            let label = format!("{path}.cavity");
            let geometry = resolve_cavity(cavity, &label)?;
            let figures = cavity::figures(&geometry).map_err(|e| {
                config_error(&label, e.to_string())
            })?;
            cavities.push(LabeledCavity {
                label,
                geometry,
                escape: cavity.escape,
            });
            figures.hwhm_hz
        }
        (Some(_), Some(_)) => {
            return Err(config_error(
                path,
                "gamma_hwhm_mhz and cavity are mutually exclusive",
            ));
        }
        (None, None) => {
            return Err(config_error(
                path,
                "either gamma_hwhm_mhz or cavity is required",
            ));
        }
    };

    let escape_efficiency = match (section.escape_efficiency, &section.cavity) {
        (Some(direct), _) => direct,
        (None, Some(cavity_section)) => match &cavity_section.escape {
            Some(escape) => cavity::escape_efficiency(
                escape.output_transmission,
                escape.other_transmission,
                escape.internal_loss,
            )
            .map_err(|e| config_error(&format!("{path}.cavity.escape"), e.to_string()))?,
            None => 0.999,
        },
        (None, None) => 0.999,
    };

    let computed_threshold_w = section
        .threshold
        .as_ref()
        .map(|threshold| {
            let label = format!("{path}.threshold");
            let inputs = resolve_threshold(threshold, &label, cavities)?;
            let report = opa::opo_threshold(&inputs)
                .map_err(|e| config_error(&label, e.to_string()))?;
            thresholds.push(LabeledThreshold { label, inputs });
            Ok::<f64, Error>(report.p_threshold_input_w)
        })
        .transpose()?;
    let threshold_power_w = match (section.threshold_power_mw, computed_threshold_w) {
        // A measured threshold beats the modeled one for the pump ratio.
        (Some(mw), _) => mw * 1.0e-3,
        (None, Some(w)) => w,
        (None, None) => {
            return Err(config_error(
                path,
                "either threshold_power_mw or threshold is required",
            ));
        }
    };

    let x = opa::pump_ratio(section.pump_power_mw * 1.0e-3, threshold_power_w)
        .map_err(|e| config_error(&format!("{path}.pump_power_mw"), e.to_string()))?;
    OpaSpectrumModel::new(gamma_hwhm_hz, x, escape_efficiency)
        .map_err(|e| config_error(path, e.to_string()))
}

fn resolve_threshold(
    section: &ThresholdSection,
    path: &str,
    cavities: &mut Vec<LabeledCavity>,
) -> Result<ThresholdInputs> {
    let pump_buildup = match (&section.pump_buildup, &section.pump_cavity) {
        (Some(direct), None) => *direct,
        (None, Some(cavity_section)) => {
            let label = format!("{path}.pump_cavity");
            let geometry = resolve_cavity(cavity_section, &label)?;
            let figures = cavity::figures(&geometry)
                .map_err(|e| config_error(&label, e.to_string()))?;
            cavities.push(LabeledCavity {
                label,
                geometry,
                escape: cavity_section.escape,
            });
            figures.buildup
        }
        (Some(_), Some(_)) => {
            return Err(config_error(
                path,
                "pump_buildup and pump_cavity are mutually exclusive",
            ));
        }
        (None, None) => {
            return Err(config_error(
                path,
                "either pump_buildup or pump_cavity is required",
            ));
        }
    };
    Ok(ThresholdInputs {
        signal_wavelength_m: section.signal_wavelength_nm * 1.0e-9,
        waist_signal_m: section.waist_um * 1.0e-6,
        d_eff_m_per_v: section.d_eff_pm_per_v * 1.0e-12,
        crystal_length_m: section.crystal_length_mm * 1.0e-3,
        n_signal: section.n_signal,
        n_pump: section.n_pump,
        alpha_signal_per_m: section.alpha_signal_per_m,
        output_transmission: section.output_transmission,
        extra_signal_loss: section.extra_signal_loss,
        pump_buildup,
    })
}

fn resolve_gain(section: Option<&GainSection>, path: &str) -> Result<DetectorGain> {
    let Some(section) = section else {
        return Ok(DetectorGain::Flat(1.0));
    };
    match section {
        GainSection::Flat(gain) => {
            DetectorGain::flat(*gain).map_err(|e| config_error(path, e.to_string()))
        }
        GainSection::LoPower { lo_power_mw } => {
            if !(*lo_power_mw > 0.0) {
                return Err(config_error(path, "lo_power_mw must be positive"));
            }
            // Homodyne signal amplitude scales with the LO field amplitude.
            Ok(DetectorGain::Flat(lo_power_mw.sqrt()))
        }
        GainSection::Curve {
            curve_points_mhz_db,
        } => {
            let points = curve_points_mhz_db
                .iter()
                .map(|&(mhz, db)| (mhz * 1.0e6, db))
                .collect();
            let curve =
                DbCurve::new(points).map_err(|e| config_error(path, e.to_string()))?;
            Ok(DetectorGain::TableDb(curve))
        }
    }
}

fn resolve_clearance(
    section: Option<&ClearanceSection>,
    path: &str,
    base_dir: &Path,
) -> Result<Option<DbCurve>> {
    let Some(section) = section else {
        return Ok(None);
    };
    let curve = match section {
        ClearanceSection::Constant { constant_db } => DbCurve::constant(*constant_db)
            .map_err(|e| config_error(path, e.to_string()))?,
        ClearanceSection::Points { points_mhz_db } => {
            let points = points_mhz_db
                .iter()
                .map(|&(mhz, db)| (mhz * 1.0e6, db))
                .collect();
            DbCurve::new(points).map_err(|e| config_error(path, e.to_string()))?
        }
        ClearanceSection::Csv { csv_path } => {
            let full: PathBuf = base_dir.join(csv_path);
            let file = fs::File::open(&full).map_err(|e| {
                config_error(path, format!("cannot open {}: {e}", full.display()))
            })?;
            DbCurve::from_csv_reader(BufReader::new(file))
                .map_err(|e| config_error(path, e.to_string()))?
        }
    };
    Ok(Some(curve))
}

fn resolve_efficiency(section: &EfficiencySection, path: &str) -> Result<EfficiencyModel> {
    let budget = (
        section.mode_overlap,
        section.path_transmission,
        section.quantum_efficiency,
    );
    let model = match (section.total, budget) {
        (Some(total), (None, None, None)) => EfficiencyModel::Total(total),
        (None, (Some(mode_overlap), Some(path_transmission), Some(quantum_efficiency))) => {
            EfficiencyModel::Budget {
                mode_overlap,
                path_transmission,
                quantum_efficiency,
            }
        }
        (None, (None, None, None)) => {
            return Err(config_error(
                path,
                "either total or the full budget (mode_overlap, path_transmission, \
                 quantum_efficiency) is required",
            ));
        }
        _ => {
            return Err(config_error(
                path,
                "total and the budget factors are mutually exclusive, and the budget \
                 requires all three factors",
            ));
        }
    };
    model
        .validate()
        .map_err(|e| config_error(path, e.to_string()))?;
    Ok(model)
}

fn resolve_band_split(section: &BandSplitSection, path: &str) -> Result<BandSplit> {
    let gains = (section.gain_a, section.gain_b);
    let powers = (section.lo_power_a_mw, section.lo_power_b_mw);
    let (gain_a, gain_b) = match (gains, powers) {
        ((Some(a), Some(b)), (None, None)) => (a, b),
        ((None, None), (Some(pa), Some(pb))) => {
            if !(pa > 0.0 && pb > 0.0) {
                return Err(config_error(path, "LO powers must be positive"));
            }
            (pa.sqrt(), pb.sqrt())
        }
        _ => {
            return Err(config_error(
                path,
                "each band needs either gain_a+gain_b or lo_power_a_mw+lo_power_b_mw",
            ));
        }
    };
    Ok(BandSplit {
        start_hz: section.start_mhz * 1.0e6,
        stop_hz: section.stop_mhz * 1.0e6,
        gain_a,
        gain_b,
    })
}

fn resolve_sweep(section: &SweepSection, path: &str) -> Result<SweepConfig> {
    let grid = FrequencyGrid::linspace(
        section.start_mhz * 1.0e6,
        section.stop_mhz * 1.0e6,
        section.points,
    )
    .map_err(|e| config_error(path, e.to_string()))?;
    let band_splits = section
        .band_splits
        .as_ref()
        .map(|splits| {
            splits
                .iter()
                .enumerate()
                .map(|(i, s)| resolve_band_split(s, &format!("{path}.band_splits[{i}]")))
                .collect::<Result<Vec<_>>>()
        })
        .transpose()?;
    SweepConfig::new(
        grid,
        section.rbw_khz * 1.0e3,
        section.vbw_khz * 1.0e3,
        section.sweep_time_s,
        section.averages,
        band_splits,
    )
    .map_err(|e| config_error(path, e.to_string()))
}

fn resolve_montecarlo(section: &MontecarloSection, path: &str) -> Result<SynthesisConfig> {
    let window = match section.window.as_str() {
        "hann" => WindowKind::Hann,
        "rectangular" => WindowKind::Rectangular,
        other => {
            return Err(config_error(
                &format!("{path}.window"),
                format!("unknown window '{other}' (expected 'hann' or 'rectangular')"),
            ));
        }
    };
    SynthesisConfig::new(
        section.sample_rate_ghz * 1.0e9,
        section.n_samples,
        section.seed,
        section.segment_length,
        section.overlap_fraction,
        window,
    )
    .map_err(|e| config_error(path, e.to_string()))
}

fn resolve_fit(section: &FitSection, path: &str) -> Result<FitSettings> {
    let mut free = Vec::with_capacity(section.free.len());
    for (i, entry) in section.free.iter().enumerate() {
        let entry_path = format!("{path}.free[{i}]");
        let kind = match entry.name.as_str() {
            "eta_total" => FitParameterKind::EtaTotal,
            "pump_ratio_x" => FitParameterKind::PumpRatioX,
            "gamma_hwhm_hz" => FitParameterKind::GammaHwhm,
            "gain_ratio" => FitParameterKind::GainRatio,
            "clearance_offset_db" => FitParameterKind::ClearanceOffsetDb,
            other => {
                return Err(config_error(
                    &entry_path,
                    format!("unknown parameter '{other}'"),
                ));
            }
        };
        let defaults = kind.default_bounds();
        let parameter = FreeParameter::bounded(
            kind,
            entry.lower.unwrap_or(defaults.0),
            entry.upper.unwrap_or(defaults.1),
        )
        .map_err(|e| config_error(&entry_path, e.to_string()))?;
        free.push(parameter);
    }
    let domain = match section.domain.as_deref() {
        None | Some("db") => ResidualDomain::Decibel,
        Some("linear") => ResidualDomain::Linear,
        Some(other) => {
            return Err(config_error(
                &format!("{path}.domain"),
                format!("unknown domain '{other}' (expected 'db' or 'linear')"),
            ));
        }
    };
    Ok(FitSettings {
        free,
        domain,
        n_starts: section.starts,
        seed: section.seed,
        exclusion_windows_hz: section
            .exclusion_windows_mhz
            .iter()
            .map(|w| (w[0] * 1.0e6, w[1] * 1.0e6))
            .collect(),
        sigma_db: section.sigma_db,
    })
}

/// Resolves a parsed document into runnable model objects.
///
/// `base_dir` anchors relative file references (clearance CSVs); semantic
/// errors name the offending field path.
pub fn resolve(config: &ExperimentConfig, base_dir: &Path) -> Result<ResolvedConfig> {
    let mut cavities = Vec::new();
    let mut thresholds = Vec::new();

    let source_a = resolve_source(
        &config.sources.a,
        "sources.a",
        &mut cavities,
        &mut thresholds,
    )?;
    let source_b = resolve_source(
        &config.sources.b,
        "sources.b",
        &mut cavities,
        &mut thresholds,
    )?;

    let entangler_section = config.entangler.unwrap_or_default();
    let entangler = EntanglerConfig::new(
        source_a,
        source_b,
        entangler_section.relative_phase_deg.to_radians(),
        entangler_section.beam_splitter_reflectivity,
    )
    .map_err(|e| config_error("entangler", e.to_string()))?;

    let detection = match &config.detection {
        None => DetectionChain::ideal(),
        Some(section) => {
            let efficiency = resolve_efficiency(&section.efficiency, "detection.efficiency")?;
            let gain_a = resolve_gain(section.gain_a.as_ref(), "detection.gain_a")?;
            let gain_b = resolve_gain(section.gain_b.as_ref(), "detection.gain_b")?;
            let clearance_a =
                resolve_clearance(section.clearance_a.as_ref(), "detection.clearance_a", base_dir)?;
            let clearance_b =
                resolve_clearance(section.clearance_b.as_ref(), "detection.clearance_b", base_dir)?;
            DetectionChain::new(
                efficiency,
                gain_a,
                gain_b,
                clearance_a,
                clearance_b,
                section.dark_noise_subtracted,
            )
            .map_err(|e| config_error("detection", e.to_string()))?
        }
    };

    let sweep = config
        .sweep
        .as_ref()
        .map(|s| resolve_sweep(s, "sweep"))
        .transpose()?;
    let montecarlo = config
        .montecarlo
        .as_ref()
        .map(|s| resolve_montecarlo(s, "montecarlo"))
        .transpose()?;
    let fit = config
        .fit
        .as_ref()
        .map(|s| resolve_fit(s, "fit"))
        .transpose()?;

    Ok(ResolvedConfig {
        model: ExperimentModel {
            entangler,
            detection,
        },
        sweep,
        cavities,
        thresholds,
        montecarlo,
        fit,
    })
}
