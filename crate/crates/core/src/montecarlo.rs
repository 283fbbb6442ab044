//! Time-domain Monte-Carlo oracle for the frequency-domain model.
//!
//! Everything else in this crate works with analytic spectra. This module
//! cross-checks those results by a completely different route: it synthesizes
//! long Gaussian quadrature time series with the prescribed power spectral
//! densities, pushes them through the optical chain sample by sample
//! (rotation, beam-splitter mixing, loss as admixed vacuum, detector gains,
//! additive dark noise), estimates spectra with Welch averaging, and
//! normalizes against a vacuum calibration run — mirroring how the quantity
//! is actually measured.
//!
//! Conventions:
//! - PSDs are single-sided in vacuum units: unit-variance white noise has
//!   PSD 1 everywhere, so a synthesized source with PSD `V(f)` reproduces the
//!   analytic quadrature variance directly, with no window or rate factors.
//! - All randomness derives from one `u64` seed; every independent process
//!   (each source quadrature, each loss port, each dark series, each
//!   calibration counterpart) owns a fixed counter-mode stream id, so results
//!   are bit-for-bit reproducible and insensitive to evaluation order.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use realfft::RealFftPlanner;
use serde::Serialize;

use crate::analyzer::TraceSet;
use crate::channel::DbCurve;
use crate::error::{Error, Result};
use crate::opa::OpaSpectrumModel;
use crate::quadrature::FrequencyGrid;

/// Fixed RNG stream ids, one per independent physical noise process.
///
/// Streams are spaced so each group has room for the four quadrature series
/// (X_A, Y_A, X_B, Y_B / per-detector X then Y).
pub mod streams {
    /// Source quadrature series for the signal run (4 streams).
    pub const SIGNAL_SOURCE: u64 = 0;
    /// Vacuum admixed by the lossy channel during the signal run (4 streams).
    pub const SIGNAL_LOSS: u64 = 8;
    /// Dark-noise series added during the signal run (4 streams).
    pub const SIGNAL_DARK: u64 = 12;
    /// Source quadrature series for the vacuum calibration run (4 streams).
    pub const VACUUM_SOURCE: u64 = 16;
    /// Loss-port vacuum for the calibration run (4 streams).
    pub const VACUUM_LOSS: u64 = 24;
    /// Dark-noise series for the calibration run (4 streams).
    pub const VACUUM_DARK: u64 = 28;
}

/// Taper applied to each Welch segment before the periodogram.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum WindowKind {
    /// No taper; bins are uncorrelated but leakage is worst-case.
    Rectangular,
    /// Periodic Hann taper; the default for broadband noise spectra.
    Hann,
}

impl WindowKind {
    /// Window coefficients of length `n` (periodic convention).
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            WindowKind::Rectangular => vec![1.0; n],
            WindowKind::Hann => (0..n)
                .map(|i| 0.5 * (1.0 - (std::f64::consts::TAU * i as f64 / n as f64).cos()))
                .collect(),
        }
    }
}

/// Sampling, length, and Welch-averaging parameters for one synthesis run.
#[derive(Debug, Clone, Serialize)]
pub struct SynthesisConfig {
    sample_rate_hz: f64,
    n_samples: usize,
    seed: u64,
    segment_length: usize,
    overlap_fraction: f64,
    window: WindowKind,
}

impl SynthesisConfig {
    /// Validates and builds a configuration.
    ///
    /// `n_samples` must be a power of two and at least four segments long;
    /// `segment_length` must be even and at least 16; `overlap_fraction`
    /// must lie in `[0, 0.9]` and leave a positive hop.
    pub fn new(
        sample_rate_hz: f64,
        n_samples: usize,
        seed: u64,
        segment_length: usize,
        overlap_fraction: f64,
        window: WindowKind,
    ) -> Result<Self> {
        if !(sample_rate_hz > 0.0) || !sample_rate_hz.is_finite() {
            return Err(Error::invalid(
                "sample_rate_hz",
                sample_rate_hz,
                "must be positive and finite",
            ));
        }
        if segment_length < 16 || segment_length % 2 != 0 {
            return Err(Error::invalid(
                "segment_length",
                segment_length as f64,
                "must be even and at least 16",
            ));
        }
        if !n_samples.is_power_of_two() {
            return Err(Error::invalid(
                "n_samples",
                n_samples as f64,
                "must be a power of two",
            ));
        }
        if n_samples < 4 * segment_length {
            return Err(Error::invalid(
                "n_samples",
                n_samples as f64,
                "must cover at least four Welch segments",
            ));
        }
        if !(0.0..=0.9).contains(&overlap_fraction) {
            return Err(Error::invalid(
                "overlap_fraction",
                overlap_fraction,
                "must lie in [0, 0.9]",
            ));
        }
        let config = SynthesisConfig {
            sample_rate_hz,
            n_samples,
            seed,
            segment_length,
            overlap_fraction,
            window,
        };
        debug_assert!(config.hop() >= 1);
        Ok(config)
    }

    /// Default oracle configuration: 4 GHz sampling, 2^22 samples,
    /// 4096-point Hann segments with 50% overlap.
    pub fn oracle_default(seed: u64) -> SynthesisConfig {
        SynthesisConfig::new(4.0e9, 1 << 22, seed, 4096, 0.5, WindowKind::Hann)
            .expect("default oracle configuration is valid")
    }

    /// Sampling rate in hertz.
    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    /// Total trace length in samples.
    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    /// Base seed from which all stream RNGs derive.
    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Welch segment length in samples.
    pub fn segment_length(&self) -> usize {
        self.segment_length
    }

    /// Fractional overlap between consecutive Welch segments.
    pub fn overlap_fraction(&self) -> f64 {
        self.overlap_fraction
    }

    /// Window applied to Welch segments.
    pub fn window(&self) -> WindowKind {
        self.window
    }

    /// Same configuration with a different seed.
    pub fn with_seed(&self, seed: u64) -> SynthesisConfig {
        let mut config = self.clone();
        config.seed = seed;
        config
    }

    /// Hop between consecutive segment starts, in samples.
    pub fn hop(&self) -> usize {
        let overlap = (self.segment_length as f64 * self.overlap_fraction).round() as usize;
        (self.segment_length - overlap).max(1)
    }

    /// Number of Welch segments that fit in the trace.
    pub fn n_segments(&self) -> usize {
        1 + (self.n_samples - self.segment_length) / self.hop()
    }

    /// Welch bin spacing, `sample_rate / segment_length`.
    pub fn bin_hz(&self) -> f64 {
        self.sample_rate_hz / self.segment_length as f64
    }

    /// Errors unless the sampling rate resolves `f_max_hz` (Nyquist check).
    pub fn check_band(&self, f_max_hz: f64) -> Result<()> {
        if self.sample_rate_hz <= 2.0 * f_max_hz {
            return Err(Error::invalid(
                "sample_rate_hz",
                self.sample_rate_hz,
                "must exceed twice the highest analysis frequency",
            ));
        }
        Ok(())
    }

    fn stream_rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }
}

/// Role of a trace within the simulated measurement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ChainStage {
    /// Synthesized source quadrature, before any optics.
    Source,
    /// Combined photocurrent at the detection stage.
    Detector,
    /// Source stand-in for the vacuum calibration run.
    VacuumCalibration,
    /// Additive detector dark noise.
    Dark,
}

/// One real-valued quadrature time series plus its role in the chain.
#[derive(Debug, Clone)]
pub struct QuadratureTrace {
    samples: Vec<f64>,
    stage: ChainStage,
}

impl QuadratureTrace {
    /// Wraps an existing sample buffer.
    pub fn new(samples: Vec<f64>, stage: ChainStage) -> QuadratureTrace {
        QuadratureTrace { samples, stage }
    }

    /// Sample buffer.
    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    /// Role of this trace in the chain.
    pub fn stage(&self) -> ChainStage {
        self.stage
    }

    /// Number of samples.
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    /// True when the trace holds no samples.
    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// X and Y quadrature series of one source (or one detector pair member).
#[derive(Debug, Clone)]
pub struct SourceTraces {
    /// Squeezed (X) quadrature series.
    pub x: QuadratureTrace,
    /// Anti-squeezed (Y) quadrature series.
    pub y: QuadratureTrace,
}

/// The two balanced-detection outputs: the joint X sum and Y difference.
#[derive(Debug, Clone)]
pub struct DetectorTraces {
    /// Gain-weighted sum of the two X photocurrents.
    pub sum_x: QuadratureTrace,
    /// Gain-weighted difference of the two Y photocurrents.
    pub diff_y: QuadratureTrace,
}

/// Synthesizes a real Gaussian series whose one-sided PSD follows `psd`.
///
/// Construction happens in the frequency domain: each positive-frequency bin
/// receives an independent complex Gaussian amplitude with expected squared
/// magnitude `n · V(f_k)` (DC and Nyquist are real with variance `n · V`),
/// and an inverse real FFT with `1/n` scaling turns the Hermitian spectrum
/// into `n` real samples. Unit PSD then yields unit-variance white noise.
///
/// The PSD callback must return positive, finite values on every synthesis
/// bin `k · fs / n` for `k = 0 ..= n/2`.
pub fn synthesize_colored_noise(
    psd: impl Fn(f64) -> f64,
    config: &SynthesisConfig,
    stream: u64,
    stage: ChainStage,
) -> Result<QuadratureTrace> {
    let n = config.n_samples;
    let bin_hz = config.sample_rate_hz / n as f64;
    let mut rng = config.stream_rng(stream);

    let mut planner = RealFftPlanner::<f64>::new();
    let c2r = planner.plan_fft_inverse(n);
    let mut spectrum = c2r.make_input_vec();
    let mut samples = c2r.make_output_vec();

    for (k, bin) in spectrum.iter_mut().enumerate() {
        let frequency = k as f64 * bin_hz;
        let value = psd(frequency);
        if !(value > 0.0) || !value.is_finite() {
            return Err(Error::invalid(
                "target_psd",
                value,
                "spectral density must be positive and finite on every synthesis bin",
            ));
        }
        *bin = if k == 0 || k == n / 2 {
            let z: f64 = rng.sample(StandardNormal);
            Complex64::new((value * n as f64).sqrt() * z, 0.0)
        } else {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            Complex64::new(re, im).scale((value * n as f64 / 2.0).sqrt())
        };
    }

    c2r.process(&mut spectrum, &mut samples)
        .map_err(|e| Error::Numerical {
            context: "colored-noise synthesis",
            reason: e.to_string(),
        })?;
    let scale = 1.0 / n as f64;
    for sample in &mut samples {
        *sample *= scale;
    }
    Ok(QuadratureTrace::new(samples, stage))
}

/// Synthesizes unit-variance white noise directly from per-sample normals.
///
/// Statistically identical to colored synthesis with unit PSD, but without
/// the FFT round trip; used for the loss ports and vacuum calibration.
pub fn synthesize_white(
    config: &SynthesisConfig,
    stream: u64,
    stage: ChainStage,
) -> QuadratureTrace {
    let mut rng = config.stream_rng(stream);
    let samples = (0..config.n_samples)
        .map(|_| rng.sample(StandardNormal))
        .collect();
    QuadratureTrace::new(samples, stage)
}

/// Synthesizes the X (squeezed) and Y (anti-squeezed) series of one source.
///
/// Uses streams `stream_base` and `stream_base + 1`.
pub fn synthesize_source(
    model: &OpaSpectrumModel,
    config: &SynthesisConfig,
    stream_base: u64,
) -> Result<SourceTraces> {
    let x = synthesize_colored_noise(
        |f| model.squeezed_variance(f).value(),
        config,
        stream_base,
        ChainStage::Source,
    )?;
    let y = synthesize_colored_noise(
        |f| model.anti_squeezed_variance(f).value(),
        config,
        stream_base + 1,
        ChainStage::Source,
    )?;
    Ok(SourceTraces { x, y })
}

/// Vacuum stand-ins for both sources, for the calibration run.
///
/// Uses streams `stream_base .. stream_base + 4`.
pub fn synthesize_vacuum_sources(
    config: &SynthesisConfig,
    stream_base: u64,
) -> (SourceTraces, SourceTraces) {
    let source_a = SourceTraces {
        x: synthesize_white(config, stream_base, ChainStage::VacuumCalibration),
        y: synthesize_white(config, stream_base + 1, ChainStage::VacuumCalibration),
    };
    let source_b = SourceTraces {
        x: synthesize_white(config, stream_base + 2, ChainStage::VacuumCalibration),
        y: synthesize_white(config, stream_base + 3, ChainStage::VacuumCalibration),
    };
    (source_a, source_b)
}

/// Optical-chain parameters for a time-domain run.
///
/// Gains are scalar (one LO setting per run): frequency-dependent gain tables
/// correspond to separate measurement runs and are handled by running the
/// chain once per band. Clearance curves are given relative to each
/// detector's own vacuum level; outside their tabulated span they extend
/// flat, which only affects bins beyond the analysis band.
#[derive(Debug, Clone)]
pub struct McChainConfig {
    /// Phase of source B relative to source A at the combining splitter.
    pub relative_phase_rad: f64,
    /// Power reflectivity of the combining splitter.
    pub beam_splitter_reflectivity: f64,
    /// Total transmission efficiency applied to each output mode.
    pub efficiency: f64,
    /// Scalar gain of detector A.
    pub gain_a: f64,
    /// Scalar gain of detector B.
    pub gain_b: f64,
    /// Dark clearance of detector A in dB below its vacuum level.
    pub clearance_a_db: Option<DbCurve>,
    /// Dark clearance of detector B in dB below its vacuum level.
    pub clearance_b_db: Option<DbCurve>,
}

impl McChainConfig {
    /// Validates ranges shared with the analytic chain.
    pub fn validate(&self) -> Result<()> {
        if !self.relative_phase_rad.is_finite() {
            return Err(Error::invalid(
                "relative_phase_rad",
                self.relative_phase_rad,
                "must be finite",
            ));
        }
        let r = self.beam_splitter_reflectivity;
        if !(r > 0.0 && r < 1.0) {
            return Err(Error::invalid(
                "beam_splitter_reflectivity",
                r,
                "must lie strictly between 0 and 1",
            ));
        }
        if !(0.0..=1.0).contains(&self.efficiency) {
            return Err(Error::invalid(
                "efficiency",
                self.efficiency,
                "must lie in [0, 1]",
            ));
        }
        for (name, gain) in [("gain_a", self.gain_a), ("gain_b", self.gain_b)] {
            if !(gain > 0.0) || !gain.is_finite() {
                return Err(Error::invalid(name, gain, "must be positive and finite"));
            }
        }
        Ok(())
    }

    /// Ideal chain: balanced splitter, 90° phase, no loss, no dark noise.
    pub fn ideal() -> McChainConfig {
        McChainConfig {
            relative_phase_rad: std::f64::consts::FRAC_PI_2,
            beam_splitter_reflectivity: 0.5,
            efficiency: 1.0,
            gain_a: 1.0,
            gain_b: 1.0,
            clearance_a_db: None,
            clearance_b_db: None,
        }
    }
}

fn admix_loss(
    trace: &mut [f64],
    efficiency: f64,
    config: &SynthesisConfig,
    stream: u64,
) {
    if efficiency >= 1.0 {
        return;
    }
    let signal = efficiency.sqrt();
    let vacuum = (1.0 - efficiency).sqrt();
    let mut rng = config.stream_rng(stream);
    for sample in trace {
        let w: f64 = rng.sample(StandardNormal);
        *sample = signal * *sample + vacuum * w;
    }
}

fn add_dark(
    accumulator: &mut [f64],
    gain: f64,
    clearance: Option<&DbCurve>,
    config: &SynthesisConfig,
    stream: u64,
) -> Result<()> {
    let Some(curve) = clearance else {
        return Ok(());
    };
    let dark = synthesize_colored_noise(
        |f| 10f64.powf(-curve.value_db_clamped(f) / 10.0),
        config,
        stream,
        ChainStage::Dark,
    )?;
    for (out, d) in accumulator.iter_mut().zip(dark.samples()) {
        *out += gain * d;
    }
    Ok(())
}

/// Runs both source quadrature pairs through the chain in the time domain.
///
/// Per sample: rotate source B by the relative phase, mix on the splitter,
/// admix loss vacuum on each output quadrature (streams `loss_stream_base
/// .. +4` in mode order X_A, Y_A, X_B, Y_B), form the gain-weighted sum /
/// difference photocurrents, and add per-detector dark series (streams
/// `dark_stream_base .. +4` in order A_x, A_y, B_x, B_y). Outputs are raw
/// photocurrent units; normalization happens against a vacuum calibration.
pub fn simulate_chain(
    source_a: &SourceTraces,
    source_b: &SourceTraces,
    chain: &McChainConfig,
    config: &SynthesisConfig,
    loss_stream_base: u64,
    dark_stream_base: u64,
) -> Result<DetectorTraces> {
    chain.validate()?;
    let n = config.n_samples;
    for (name, trace) in [
        ("source_a.x", &source_a.x),
        ("source_a.y", &source_a.y),
        ("source_b.x", &source_b.x),
        ("source_b.y", &source_b.y),
    ] {
        if trace.len() != n {
            return Err(Error::LengthMismatch {
                name,
                expected: n,
                actual: trace.len(),
            });
        }
    }

    let (sin_phi, cos_phi) = chain.relative_phase_rad.sin_cos();
    let r = chain.beam_splitter_reflectivity;
    let (sqrt_t, sqrt_r) = ((1.0 - r).sqrt(), r.sqrt());

    let mut x_a = source_a.x.samples().to_vec();
    let mut y_a = source_a.y.samples().to_vec();
    let mut x_b = source_b.x.samples().to_vec();
    let mut y_b = source_b.y.samples().to_vec();

    for i in 0..n {
        // Phase rotation of source B, then the beam splitter; both outputs
        // overwrite the input buffers pairwise.
        let (x2, y2) = (
            cos_phi * x_b[i] - sin_phi * y_b[i],
            sin_phi * x_b[i] + cos_phi * y_b[i],
        );
        let (x1, y1) = (x_a[i], y_a[i]);
        x_a[i] = sqrt_t * x1 + sqrt_r * x2;
        x_b[i] = sqrt_r * x1 - sqrt_t * x2;
        y_a[i] = sqrt_t * y1 + sqrt_r * y2;
        y_b[i] = sqrt_r * y1 - sqrt_t * y2;
    }

    admix_loss(&mut x_a, chain.efficiency, config, loss_stream_base);
    admix_loss(&mut y_a, chain.efficiency, config, loss_stream_base + 1);
    admix_loss(&mut x_b, chain.efficiency, config, loss_stream_base + 2);
    admix_loss(&mut y_b, chain.efficiency, config, loss_stream_base + 3);

    let (g_a, g_b) = (chain.gain_a, chain.gain_b);
    let mut sum_x = x_a;
    for (out, xb) in sum_x.iter_mut().zip(&x_b) {
        *out = g_a * *out + g_b * *xb;
    }
    drop(x_b);
    let mut diff_y = y_a;
    for (out, yb) in diff_y.iter_mut().zip(&y_b) {
        *out = g_a * *out - g_b * *yb;
    }
    drop(y_b);

    // Dark noise enters per detector at that detector's gain: clearance is
    // quoted relative to the detector's own vacuum level, which scales with
    // its gain squared. X and Y settings are separate measurement runs, so
    // each gets an independent realization.
    add_dark(&mut sum_x, g_a, chain.clearance_a_db.as_ref(), config, dark_stream_base)?;
    add_dark(&mut sum_x, g_b, chain.clearance_b_db.as_ref(), config, dark_stream_base + 2)?;
    add_dark(&mut diff_y, g_a, chain.clearance_a_db.as_ref(), config, dark_stream_base + 1)?;
    add_dark(&mut diff_y, g_b, chain.clearance_b_db.as_ref(), config, dark_stream_base + 3)?;

    Ok(DetectorTraces {
        sum_x: QuadratureTrace::new(sum_x, ChainStage::Detector),
        diff_y: QuadratureTrace::new(diff_y, ChainStage::Detector),
    })
}

/// Welch-averaged power spectral density estimate.
#[derive(Debug, Clone)]
pub struct PsdEstimate {
    bin_hz: f64,
    psd: Vec<f64>,
    n_segments: usize,
    relative_se: f64,
    bin_inflation: f64,
}

impl PsdEstimate {
    /// Bin spacing in hertz.
    pub fn bin_hz(&self) -> f64 {
        self.bin_hz
    }

    /// PSD values for bins `0 ..= segment_length / 2`.
    pub fn psd(&self) -> &[f64] {
        &self.psd
    }

    /// Number of averaged segments.
    pub fn n_segments(&self) -> usize {
        self.n_segments
    }

    /// Relative standard error of each bin, including segment-overlap
    /// correlation.
    pub fn relative_se(&self) -> f64 {
        self.relative_se
    }

    /// Variance inflation factor for averages over adjacent bins, from the
    /// window-induced correlation between neighboring periodogram bins.
    pub fn bin_inflation(&self) -> f64 {
        self.bin_inflation
    }

    /// Center frequency of bin `k`.
    pub fn frequency(&self, k: usize) -> f64 {
        k as f64 * self.bin_hz
    }
}

/// Variance inflation of a Welch mean from overlapping-segment correlation.
///
/// For hop `h` and window `w`, overlapping periodograms correlate as
/// `ρ(j) = (Σ w[i] w[i + j·h] / Σ w²)²`; the factor is `Σ_j ρ(j)` over all
/// overlapping lags (1.0 for non-overlapping segments, 19/18 for Hann at
/// 50% overlap).
pub fn segment_overlap_inflation(window: &[f64], hop: usize) -> f64 {
    let power: f64 = window.iter().map(|w| w * w).sum();
    let mut factor = 1.0;
    let mut shift = hop;
    while shift < window.len() {
        let overlap: f64 = window[shift..]
            .iter()
            .zip(&window[..window.len() - shift])
            .map(|(a, b)| a * b)
            .sum();
        let rho = (overlap / power).powi(2);
        factor += 2.0 * rho;
        shift += hop;
    }
    factor
}

/// Variance inflation of an average over adjacent bins from window-induced
/// bin-to-bin correlation.
///
/// Adjacent periodogram bins correlate as `|W₂(m)/W₂(0)|²` where `W₂` is the
/// DFT of the squared window; the factor is the sum over lags (1.0 for
/// rectangular, 35/18 for Hann).
pub fn window_bin_inflation(window: &[f64]) -> f64 {
    let n = window.len();
    let power: f64 = window.iter().map(|w| w * w).sum();
    let mut factor = 1.0;
    // The squared window of any taper in use here has negligible spectral
    // content beyond a few bins; eight lags is conservative.
    for m in 1..=8.min(n / 2) {
        let mut re = 0.0;
        let mut im = 0.0;
        for (i, w) in window.iter().enumerate() {
            let phase = -std::f64::consts::TAU * (m * i) as f64 / n as f64;
            re += w * w * phase.cos();
            im += w * w * phase.sin();
        }
        let rho = (re * re + im * im) / (power * power);
        factor += 2.0 * rho;
    }
    factor
}

/// Welch PSD estimate of one trace with the configured segmentation.
///
/// Each segment is windowed, transformed, and normalized by `Σ w²` so that
/// unit-variance white noise gives PSD 1 in every bin; segment periodograms
/// are then averaged. Errors when the trace is shorter than one segment.
pub fn welch_psd(trace: &QuadratureTrace, config: &SynthesisConfig) -> Result<PsdEstimate> {
    let seg = config.segment_length;
    if trace.len() < seg {
        return Err(Error::InvalidGrid {
            reason: format!(
                "trace of {} samples is shorter than one Welch segment ({seg})",
                trace.len()
            ),
        });
    }
    let window = config.window.coefficients(seg);
    let power: f64 = window.iter().map(|w| w * w).sum();
    let hop = config.hop();
    let n_segments = 1 + (trace.len() - seg) / hop;

    let mut planner = RealFftPlanner::<f64>::new();
    let r2c = planner.plan_fft_forward(seg);
    let mut buffer = r2c.make_input_vec();
    let mut spectrum = r2c.make_output_vec();
    let mut psd = vec![0.0; seg / 2 + 1];

    for s in 0..n_segments {
        let start = s * hop;
        for ((out, sample), w) in buffer
            .iter_mut()
            .zip(&trace.samples()[start..start + seg])
            .zip(&window)
        {
            *out = sample * w;
        }
        r2c.process(&mut buffer, &mut spectrum)
            .map_err(|e| Error::Numerical {
                context: "Welch periodogram",
                reason: e.to_string(),
            })?;
        for (acc, bin) in psd.iter_mut().zip(&spectrum) {
            *acc += bin.norm_sqr() / power;
        }
    }
    let scale = 1.0 / n_segments as f64;
    for value in &mut psd {
        *value *= scale;
    }

    let overlap_inflation = segment_overlap_inflation(&window, hop);
    Ok(PsdEstimate {
        bin_hz: config.bin_hz(),
        psd,
        n_segments,
        relative_se: (overlap_inflation / n_segments as f64).sqrt(),
        bin_inflation: window_bin_inflation(&window),
    })
}

/// Vacuum-normalized joint-quadrature spectra estimated from time series.
#[derive(Debug, Clone)]
pub struct EmpiricalDuanSpectrum {
    grid: FrequencyGrid,
    var_xsum: Vec<f64>,
    var_ydiff: Vec<f64>,
    duan: Vec<f64>,
    relative_se_ratio: f64,
    bin_inflation: f64,
}

impl EmpiricalDuanSpectrum {
    /// Frequencies of the Welch bins (DC excluded).
    pub fn grid(&self) -> &FrequencyGrid {
        &self.grid
    }

    /// Vacuum-normalized X-sum variance per bin.
    pub fn var_xsum(&self) -> &[f64] {
        &self.var_xsum
    }

    /// Vacuum-normalized Y-difference variance per bin.
    pub fn var_ydiff(&self) -> &[f64] {
        &self.var_ydiff
    }

    /// Empirical inseparability value `2 (V_x + V_y)` per bin.
    pub fn duan(&self) -> &[f64] {
        &self.duan
    }

    /// Relative standard error of each normalized variance ratio.
    pub fn relative_se_ratio(&self) -> f64 {
        self.relative_se_ratio
    }

    /// Standard error of the inseparability value in one raw bin.
    pub fn duan_se(&self, index: usize) -> f64 {
        let sx = self.var_xsum[index] * self.relative_se_ratio;
        let sy = self.var_ydiff[index] * self.relative_se_ratio;
        2.0 * (sx * sx + sy * sy).sqrt()
    }

    /// Exports in the analyzer's trace layout (no Reid column, no dark
    /// reference) for the shared CSV/JSON writers.
    pub fn to_trace_set(&self) -> Result<TraceSet> {
        let to_db = |values: &[f64]| values.iter().map(|v| 10.0 * v.log10()).collect();
        TraceSet::new(
            self.grid.clone(),
            to_db(&self.var_xsum),
            to_db(&self.var_ydiff),
            None,
            None,
        )
    }

    /// Keeps only bins whose frequency lies in `[start_hz, stop_hz]`.
    pub fn restricted(&self, start_hz: f64, stop_hz: f64) -> Result<EmpiricalDuanSpectrum> {
        let mut points = Vec::new();
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for (i, &f) in self.grid.points().iter().enumerate() {
            if f >= start_hz && f <= stop_hz {
                points.push(f);
                xs.push(self.var_xsum[i]);
                ys.push(self.var_ydiff[i]);
            }
        }
        if points.len() < 2 {
            return Err(Error::InvalidGrid {
                reason: format!("restriction to [{start_hz}, {stop_hz}] Hz leaves fewer than two bins"),
            });
        }
        let duan = xs.iter().zip(&ys).map(|(x, y)| 2.0 * (x + y)).collect();
        Ok(EmpiricalDuanSpectrum {
            grid: FrequencyGrid::new(points)?,
            var_xsum: xs,
            var_ydiff: ys,
            duan,
            relative_se_ratio: self.relative_se_ratio,
            bin_inflation: self.bin_inflation,
        })
    }
}

/// Forms vacuum-normalized spectra from a signal run and its calibration.
///
/// Both runs must share the synthesis configuration; each quadrature ratio
/// divides the signal PSD by the calibration PSD bin by bin, exactly as the
/// measured spectra are referenced to a vacuum trace. The DC bin is dropped.
pub fn empirical_duan_spectrum(
    signal: &DetectorTraces,
    vacuum: &DetectorTraces,
    config: &SynthesisConfig,
) -> Result<EmpiricalDuanSpectrum> {
    for (name, trace) in [
        ("signal.sum_x", &signal.sum_x),
        ("signal.diff_y", &signal.diff_y),
        ("vacuum.sum_x", &vacuum.sum_x),
        ("vacuum.diff_y", &vacuum.diff_y),
    ] {
        if trace.len() != config.n_samples {
            return Err(Error::LengthMismatch {
                name,
                expected: config.n_samples,
                actual: trace.len(),
            });
        }
    }
    let sig_x = welch_psd(&signal.sum_x, config)?;
    let sig_y = welch_psd(&signal.diff_y, config)?;
    let vac_x = welch_psd(&vacuum.sum_x, config)?;
    let vac_y = welch_psd(&vacuum.diff_y, config)?;

    let bins = sig_x.psd().len();
    let mut points = Vec::with_capacity(bins - 1);
    let mut var_xsum = Vec::with_capacity(bins - 1);
    let mut var_ydiff = Vec::with_capacity(bins - 1);
    for k in 1..bins {
        let vx = vac_x.psd()[k];
        let vy = vac_y.psd()[k];
        if !(vx > 0.0) || !(vy > 0.0) {
            return Err(Error::Numerical {
                context: "vacuum calibration",
                reason: format!("calibration PSD vanishes in bin {k}"),
            });
        }
        points.push(sig_x.frequency(k));
        var_xsum.push(sig_x.psd()[k] / vx);
        var_ydiff.push(sig_y.psd()[k] / vy);
    }
    let duan = var_xsum
        .iter()
        .zip(&var_ydiff)
        .map(|(x, y)| 2.0 * (x + y))
        .collect();

    // Signal and calibration estimates are independent, so the ratio carries
    // both relative variances.
    let relative_se_ratio =
        (sig_x.relative_se().powi(2) + vac_x.relative_se().powi(2)).sqrt();
    Ok(EmpiricalDuanSpectrum {
        grid: FrequencyGrid::new(points)?,
        var_xsum,
        var_ydiff,
        duan,
        relative_se_ratio,
        bin_inflation: sig_x.bin_inflation(),
    })
}

/// One frequency bin of an oracle-versus-analytic comparison.
#[derive(Debug, Clone, Serialize)]
pub struct ComparisonBin {
    /// Bin center frequency.
    pub center_hz: f64,
    /// Bin-averaged empirical inseparability value.
    pub empirical: f64,
    /// The analytic prediction averaged over the same raw bins.
    pub analytic: f64,
    /// Standard error of the empirical bin average.
    pub standard_error: f64,
}

/// Binned comparison between an empirical spectrum and an analytic model.
#[derive(Debug, Clone, Serialize)]
pub struct OracleComparison {
    /// Per-bin records.
    pub bins: Vec<ComparisonBin>,
    /// Fraction of bins whose deviation is within three standard errors.
    pub within_3se_fraction: f64,
    /// Largest deviation in standard-error units.
    pub max_abs_se_units: f64,
}

impl OracleComparison {
    /// Number of comparison bins.
    pub fn len(&self) -> usize {
        self.bins.len()
    }

    /// True when no bins were produced.
    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }
}

/// Averages the empirical spectrum into fixed-width bins and compares each
/// against the analytic prediction evaluated at the same raw frequencies.
///
/// Bin edges fall on multiples of `bin_width_hz`; a raw Welch bin belongs to
/// the comparison bin containing its frequency, and only bins overlapping
/// `[start_hz, stop_hz]` are formed. Standard errors combine the per-bin
/// ratio error with the window-induced correlation between adjacent bins.
pub fn binned_comparison(
    empirical: &EmpiricalDuanSpectrum,
    analytic: impl Fn(f64) -> f64,
    bin_width_hz: f64,
    start_hz: f64,
    stop_hz: f64,
) -> Result<OracleComparison> {
    if !(bin_width_hz > 0.0) {
        return Err(Error::invalid(
            "bin_width_hz",
            bin_width_hz,
            "must be positive",
        ));
    }
    if !(stop_hz > start_hz) || !(start_hz >= 0.0) {
        return Err(Error::InvalidGrid {
            reason: format!("invalid comparison band [{start_hz}, {stop_hz}] Hz"),
        });
    }
    let first = (start_hz / bin_width_hz).floor() as usize;
    let last = (stop_hz / bin_width_hz).ceil() as usize;
    let mut bins = Vec::new();
    for j in first..last {
        let lo = (j as f64 * bin_width_hz).max(start_hz);
        let hi = ((j + 1) as f64 * bin_width_hz).min(stop_hz);
        let mut emp_sum = 0.0;
        let mut ana_sum = 0.0;
        let mut var_sum = 0.0;
        let mut count = 0usize;
        for (i, &f) in empirical.grid().points().iter().enumerate() {
            let in_bin = f >= lo && (f < hi || (hi == stop_hz && f <= hi));
            if in_bin {
                emp_sum += empirical.duan()[i];
                ana_sum += analytic(f);
                var_sum += empirical.duan_se(i).powi(2);
                count += 1;
            }
        }
        if count == 0 {
            return Err(Error::InvalidGrid {
                reason: format!(
                    "comparison bin [{lo}, {hi}] Hz contains no spectral estimates"
                ),
            });
        }
        let m = count as f64;
        bins.push(ComparisonBin {
            center_hz: (lo + hi) / 2.0,
            empirical: emp_sum / m,
            analytic: ana_sum / m,
            standard_error: (empirical.bin_inflation * var_sum).sqrt() / m,
        });
    }
    let deviations: Vec<f64> = bins
        .iter()
        .map(|b| (b.empirical - b.analytic).abs() / b.standard_error)
        .collect();
    let within = deviations.iter().filter(|&&d| d <= 3.0).count();
    Ok(OracleComparison {
        within_3se_fraction: within as f64 / bins.len() as f64,
        max_abs_se_units: deviations.iter().cloned().fold(0.0, f64::max),
        bins,
    })
}

/// Full oracle pipeline: synthesize sources, run the chain, run the vacuum
/// calibration through the identical chain with independent noise, and
/// normalize.
///
/// The calibration shares gains, loss, and dark-noise model with the signal
/// run but uses vacuum inputs and its own RNG streams, matching a separate
/// calibration measurement.
pub fn run_oracle(
    source_a: &OpaSpectrumModel,
    source_b: &OpaSpectrumModel,
    chain: &McChainConfig,
    config: &SynthesisConfig,
) -> Result<EmpiricalDuanSpectrum> {
    let a = synthesize_source(source_a, config, streams::SIGNAL_SOURCE)?;
    let b = synthesize_source(source_b, config, streams::SIGNAL_SOURCE + 2)?;
    let signal = simulate_chain(
        &a,
        &b,
        chain,
        config,
        streams::SIGNAL_LOSS,
        streams::SIGNAL_DARK,
    )?;
    drop((a, b));
    let (vac_a, vac_b) = synthesize_vacuum_sources(config, streams::VACUUM_SOURCE);
    let calibration = simulate_chain(
        &vac_a,
        &vac_b,
        chain,
        config,
        streams::VACUUM_LOSS,
        streams::VACUUM_DARK,
    )?;
    drop((vac_a, vac_b));
    empirical_duan_spectrum(&signal, &calibration, config)
}

#[derive(Serialize)]
struct TraceSidecar<'a> {
    label: &'a str,
    stage: ChainStage,
    n_samples: usize,
    sample_rate_hz: f64,
    seed: u64,
    encoding: &'static str,
}

/// Writes a trace as little-endian `f64` samples plus a JSON sidecar.
///
/// The sidecar lands next to the binary with an added `.json` suffix and
/// records the sampling rate, seed, stage, and encoding.
pub fn dump_trace(
    trace: &QuadratureTrace,
    config: &SynthesisConfig,
    path: &Path,
    label: &str,
) -> Result<()> {
    let mut binary = fs::File::create(path)?;
    let mut buffer = Vec::with_capacity(8 * 1024);
    for chunk in trace.samples().chunks(1024) {
        buffer.clear();
        for sample in chunk {
            buffer.extend_from_slice(&sample.to_le_bytes());
        }
        binary.write_all(&buffer)?;
    }
    binary.flush()?;

    let sidecar = TraceSidecar {
        label,
        stage: trace.stage(),
        n_samples: trace.len(),
        sample_rate_hz: config.sample_rate_hz(),
        seed: config.seed(),
        encoding: "f64-le",
    };
    let mut sidecar_path = path.as_os_str().to_owned();
    sidecar_path.push(".json");
    let text = serde_json::to_string_pretty(&sidecar).map_err(|e| Error::Numerical {
        context: "trace sidecar serialization",
        reason: e.to_string(),
    })?;
    fs::write(sidecar_path, text)?;
    Ok(())
}

/// Reads a binary trace written by [`dump_trace`].
pub fn read_trace(path: &Path, stage: ChainStage) -> Result<QuadratureTrace> {
    let bytes = fs::read(path)?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Parse {
            line: 0,
            reason: format!(
                "binary trace length {} is not a multiple of 8 bytes",
                bytes.len()
            ),
        });
    }
    let samples = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Ok(QuadratureTrace::new(samples, stage))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn quick_config(seed: u64) -> SynthesisConfig {
        // Small but statistically meaningful: 2^18 samples, 511 Hann
        // segments of 1024 points at 50% overlap.
        SynthesisConfig::new(4.0e9, 1 << 18, seed, 1024, 0.5, WindowKind::Hann).unwrap()
    }

    fn reference_source() -> OpaSpectrumModel {
        OpaSpectrumModel::new(1.13e9, (0.300f64 / 0.655).sqrt(), 1.0).unwrap()
    }

    #[test]
    fn config_validation_rejects_bad_shapes() {
        assert!(SynthesisConfig::new(4.0e9, 12345, 1, 1024, 0.5, WindowKind::Hann).is_err());
        assert!(SynthesisConfig::new(4.0e9, 1 << 12, 1, 4096, 0.5, WindowKind::Hann).is_err());
        assert!(SynthesisConfig::new(4.0e9, 1 << 18, 1, 1024, 0.95, WindowKind::Hann).is_err());
        assert!(SynthesisConfig::new(4.0e9, 1 << 18, 1, 15, 0.5, WindowKind::Hann).is_err());
        assert!(SynthesisConfig::new(0.0, 1 << 18, 1, 1024, 0.5, WindowKind::Hann).is_err());
        let config = quick_config(7);
        assert_eq!(config.hop(), 512);
        assert_eq!(config.n_segments(), 511);
        assert!(config.check_band(1.48e9).is_ok());
        assert!(config.check_band(2.5e9).is_err());
    }

    #[test]
    fn inflation_factors_match_closed_forms() {
        let hann = WindowKind::Hann.coefficients(1024);
        let rect = WindowKind::Rectangular.coefficients(1024);
        // Hann at 50% overlap: 1 + 2 (1/6)^2 = 19/18; bin correlation sums
        // to 1 + 2 ((2/3)^2 + (1/6)^2) = 35/18. Rectangular windows have
        // uncorrelated bins and (at zero overlap) uncorrelated segments.
        assert_relative_eq!(
            segment_overlap_inflation(&hann, 512),
            19.0 / 18.0,
            max_relative = 1e-12
        );
        assert_relative_eq!(window_bin_inflation(&hann), 35.0 / 18.0, max_relative = 1e-9);
        assert_relative_eq!(
            segment_overlap_inflation(&rect, 1024),
            1.0,
            max_relative = 1e-12
        );
        assert_relative_eq!(window_bin_inflation(&rect), 1.0, max_relative = 1e-9);
    }

    #[test]
    fn white_noise_psd_is_unity() {
        // 256 non-overlapping rectangular segments: the grand mean over all
        // bins has standard error 1/sqrt(256 * 512) ≈ 2.8e-3.
        let config =
            SynthesisConfig::new(4.0e9, 1 << 18, 11, 1024, 0.0, WindowKind::Rectangular)
                .unwrap();
        assert_eq!(config.n_segments(), 256);
        let trace = synthesize_white(&config, 0, ChainStage::Source);
        let psd = welch_psd(&trace, &config).unwrap();
        let interior = &psd.psd()[1..psd.psd().len() - 1];
        let mean: f64 = interior.iter().sum::<f64>() / interior.len() as f64;
        assert!(
            (mean - 1.0).abs() < 0.005,
            "white-noise PSD mean {mean} deviates from 1"
        );
        // Per-bin scatter follows the chi-squared estimate: relative SE
        // 1/16, so essentially all bins sit within 5 SE.
        let se = psd.relative_se();
        assert_relative_eq!(se, 1.0 / 16.0, max_relative = 1e-12);
        let outliers = interior.iter().filter(|&&p| (p - 1.0).abs() > 5.0 * se).count();
        assert_eq!(outliers, 0, "unexpected white-noise outliers");
    }

    #[test]
    fn colored_synthesis_matches_colored_target() {
        let config = quick_config(3);
        let model = reference_source();
        let trace = synthesize_colored_noise(
            |f| model.squeezed_variance(f).value(),
            &config,
            0,
            ChainStage::Source,
        )
        .unwrap();
        let psd = welch_psd(&trace, &config).unwrap();
        let se = psd.relative_se();
        let bins = psd.psd().len();
        let mut worst = 0.0f64;
        for k in 1..bins - 1 {
            let target = model.squeezed_variance(psd.frequency(k)).value();
            let dev = (psd.psd()[k] - target).abs() / (target * se);
            worst = worst.max(dev);
        }
        // 511 bins, each with Gaussian-ish scatter of width `se`; 5 SE is a
        // comfortable deterministic bound for this seed.
        assert!(worst < 5.0, "worst colored-noise deviation {worst} SE");
    }

    #[test]
    fn synthesis_is_deterministic_and_seed_sensitive() {
        let config = quick_config(42);
        let a = synthesize_colored_noise(|_| 1.0, &config, 5, ChainStage::Source).unwrap();
        let b = synthesize_colored_noise(|_| 1.0, &config, 5, ChainStage::Source).unwrap();
        assert_eq!(a.samples(), b.samples(), "same seed and stream must agree bitwise");
        let c = synthesize_colored_noise(|_| 1.0, &config, 6, ChainStage::Source).unwrap();
        assert_ne!(a.samples(), c.samples(), "different streams must differ");
        let d =
            synthesize_colored_noise(|_| 1.0, &config.with_seed(43), 5, ChainStage::Source)
                .unwrap();
        assert_ne!(a.samples(), d.samples(), "different seeds must differ");
    }

    #[test]
    fn non_positive_psd_is_rejected() {
        let config = quick_config(1);
        let err =
            synthesize_colored_noise(|f| 1.0 - f / 1.0e9, &config, 0, ChainStage::Source);
        assert!(err.is_err(), "PSD crossing zero must be rejected");
    }

    #[test]
    fn zero_trace_has_zero_psd() {
        let config = quick_config(1);
        let trace = QuadratureTrace::new(vec![0.0; config.n_samples()], ChainStage::Source);
        let psd = welch_psd(&trace, &config).unwrap();
        assert!(psd.psd().iter().all(|&p| p == 0.0));
    }

    #[test]
    fn welch_rejects_short_traces() {
        let config = quick_config(1);
        let trace = QuadratureTrace::new(vec![0.0; 100], ChainStage::Source);
        assert!(welch_psd(&trace, &config).is_err());
    }

    #[test]
    fn sinusoid_peak_stands_clear_of_the_floor() {
        let config = quick_config(1);
        let bin = 100usize;
        let f0 = bin as f64 * config.bin_hz();
        let dt = 1.0 / config.sample_rate_hz();
        let samples: Vec<f64> = (0..config.n_samples())
            .map(|i| (std::f64::consts::TAU * f0 * i as f64 * dt).sin())
            .collect();
        let psd = welch_psd(&QuadratureTrace::new(samples, ChainStage::Source), &config).unwrap();
        let peak = psd.psd()[bin];
        let floor = psd
            .psd()
            .iter()
            .enumerate()
            .filter(|(k, _)| k.abs_diff(bin) > 4 && *k > 0)
            .map(|(_, &p)| p)
            .fold(0.0f64, f64::max);
        assert!(
            peak > 1000.0 * floor,
            "sinusoid peak {peak} not 30 dB above floor {floor}"
        );
    }

    #[test]
    fn ideal_chain_on_vacuum_keeps_unit_spectra() {
        let config = quick_config(21);
        let (a, b) = synthesize_vacuum_sources(&config, streams::SIGNAL_SOURCE);
        let out = simulate_chain(
            &a,
            &b,
            &McChainConfig::ideal(),
            &config,
            streams::SIGNAL_LOSS,
            streams::SIGNAL_DARK,
        )
        .unwrap();
        // Passive mixing of vacuum stays vacuum: gain-weighted sum with
        // unit gains has PSD g_a^2 + g_b^2 = 2.
        let psd = welch_psd(&out.sum_x, &config).unwrap();
        let interior = &psd.psd()[1..psd.psd().len() - 1];
        let mean: f64 = interior.iter().sum::<f64>() / interior.len() as f64;
        let se = psd.relative_se() / (interior.len() as f64).sqrt() * 2.0;
        assert!(
            (mean - 2.0).abs() < 5.0 * se,
            "vacuum chain PSD mean {mean}, expected 2"
        );
    }

    #[test]
    fn vacuum_sources_give_duan_at_the_bound() {
        let config = quick_config(33);
        let chain = McChainConfig::ideal();
        let vacuum_model = OpaSpectrumModel::vacuum(1.13e9).unwrap();
        let spectrum = run_oracle(&vacuum_model, &vacuum_model, &chain, &config).unwrap();
        let mean: f64 =
            spectrum.duan().iter().sum::<f64>() / spectrum.duan().len() as f64;
        let se_mean = 4.0 * spectrum.relative_se_ratio()
            / (spectrum.duan().len() as f64 / spectrum.bin_inflation).sqrt();
        assert!(
            (mean - 4.0).abs() < 5.0 * se_mean,
            "vacuum oracle mean {mean}, expected 4"
        );
    }

    #[test]
    fn zero_efficiency_leaves_vacuum_plus_dark() {
        let config = quick_config(17);
        let model = reference_source();
        let clearance = DbCurve::constant(13.0).unwrap();
        let chain = McChainConfig {
            efficiency: 0.0,
            clearance_a_db: Some(clearance.clone()),
            clearance_b_db: Some(clearance),
            ..McChainConfig::ideal()
        };
        let spectrum = run_oracle(&model, &model, &chain, &config).unwrap();
        // Everything squeezed is destroyed; both ratios sit at (1 + d)/(1 + d)
        // = 1 after calibration, hence an inseparability value of 4.
        let mean: f64 =
            spectrum.duan().iter().sum::<f64>() / spectrum.duan().len() as f64;
        let se_mean = 4.0 * spectrum.relative_se_ratio()
            / (spectrum.duan().len() as f64 / spectrum.bin_inflation).sqrt();
        assert!(
            (mean - 4.0).abs() < 5.0 * se_mean,
            "zero-efficiency oracle mean {mean}, expected 4"
        );
    }

    #[test]
    fn time_domain_loss_matches_analytic_map() {
        let config = quick_config(29);
        let model = reference_source();
        let efficiency = 0.59;
        let mut trace = synthesize_colored_noise(
            |f| model.squeezed_variance(f).value(),
            &config,
            0,
            ChainStage::Source,
        )
        .unwrap();
        admix_loss(&mut trace.samples, efficiency, &config, 1);
        let psd = welch_psd(&trace, &config).unwrap();
        let se = psd.relative_se();
        let mut worst = 0.0f64;
        for k in 1..psd.psd().len() - 1 {
            let target =
                efficiency * model.squeezed_variance(psd.frequency(k)).value()
                    + (1.0 - efficiency);
            let dev = (psd.psd()[k] - target).abs() / (target * se);
            worst = worst.max(dev);
        }
        assert!(worst < 5.0, "lossy trace deviates {worst} SE from analytic map");
    }

    #[test]
    fn oracle_duan_matches_analytic_chain_at_reference_point() {
        // Moderate length for test speed; the full-length grid comparison
        // lives in the acceptance suite.
        let config =
            SynthesisConfig::new(4.0e9, 1 << 20, 57, 4096, 0.5, WindowKind::Hann).unwrap();
        let model = reference_source();
        let chain = McChainConfig {
            efficiency: 0.59,
            ..McChainConfig::ideal()
        };
        let spectrum = run_oracle(&model, &model, &chain, &config).unwrap();
        let analytic = |f: f64| {
            let v = model.squeezed_variance(f).value();
            4.0 * (0.59 * v + 1.0 - 0.59)
        };
        let comparison =
            binned_comparison(&spectrum, analytic, 2.0e7, 2.0e8, 4.0e8).unwrap();
        assert!(
            comparison.within_3se_fraction == 1.0,
            "bins outside 3 SE near 300 MHz: max {} SE",
            comparison.max_abs_se_units
        );
        let near = comparison
            .bins
            .iter()
            .min_by(|a, b| {
                (a.center_hz - 3.0e8)
                    .abs()
                    .total_cmp(&(b.center_hz - 3.0e8).abs())
            })
            .unwrap();
        assert!(
            (near.empirical - 1.7832703765200235).abs() < 0.05,
            "empirical inseparability {} at 300 MHz",
            near.empirical
        );
    }

    #[test]
    fn swapped_quadrature_roles_are_statistically_identical() {
        // With identical symmetric sources and a 90° relative phase, the
        // X-sum and Y-difference spectra estimate the same quantity.
        let config = quick_config(63);
        let model = reference_source();
        let chain = McChainConfig {
            efficiency: 0.8,
            ..McChainConfig::ideal()
        };
        let spectrum = run_oracle(&model, &model, &chain, &config).unwrap();
        let n = spectrum.var_xsum().len() as f64;
        let mean_x: f64 = spectrum.var_xsum().iter().sum::<f64>() / n;
        let mean_y: f64 = spectrum.var_ydiff().iter().sum::<f64>() / n;
        let se = spectrum.relative_se_ratio() * mean_x
            / (n / spectrum.bin_inflation).sqrt()
            * std::f64::consts::SQRT_2;
        assert!(
            (mean_x - mean_y).abs() < 5.0 * se,
            "X/Y asymmetry {} with SE {se}",
            mean_x - mean_y
        );
    }

    #[test]
    fn restriction_keeps_the_requested_band() {
        let config = quick_config(5);
        let model = reference_source();
        let spectrum =
            run_oracle(&model, &model, &McChainConfig::ideal(), &config).unwrap();
        let restricted = spectrum.restricted(1.0e8, 5.0e8).unwrap();
        assert!(restricted.grid().start_hz() >= 1.0e8);
        assert!(restricted.grid().stop_hz() <= 5.0e8);
        assert!(restricted.grid().len() < spectrum.grid().len());
        assert!(spectrum.restricted(3.9e9, 4.0e9).is_err());
    }

    #[test]
    fn trace_dump_round_trips_bitwise() {
        let config =
            SynthesisConfig::new(4.0e9, 1 << 10, 9, 256, 0.5, WindowKind::Hann).unwrap();
        let trace = synthesize_white(&config, 2, ChainStage::Detector);
        let dir = std::env::temp_dir().join("entspec-core-dump-test");
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("trace.f64");
        dump_trace(&trace, &config, &path, "detector sum").unwrap();
        let restored = read_trace(&path, ChainStage::Detector).unwrap();
        assert_eq!(trace.samples(), restored.samples());
        let sidecar: serde_json::Value = serde_json::from_str(
            &fs::read_to_string(dir.join("trace.f64.json")).unwrap(),
        )
        .unwrap();
        assert_eq!(sidecar["n_samples"], 1024);
        assert_eq!(sidecar["sample_rate_hz"], 4.0e9);
        assert_eq!(sidecar["encoding"], "f64-le");
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn mismatched_trace_lengths_are_rejected() {
        let config = quick_config(1);
        let short = SourceTraces {
            x: QuadratureTrace::new(vec![0.0; 100], ChainStage::Source),
            y: QuadratureTrace::new(vec![0.0; 100], ChainStage::Source),
        };
        let err = simulate_chain(
            &short,
            &short,
            &McChainConfig::ideal(),
            &config,
            0,
            4,
        );
        assert!(matches!(err, Err(Error::LengthMismatch { .. })));
    }
}
